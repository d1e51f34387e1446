//! Packed DCI plus its RNTI-scrambled CRC.

use super::{crc24, pack_dci, unpack_dci, Bits, Dci, DciError, Rnti, DCI_PACKED_BITS, DCI_PACKED_BYTES};

/// Wire size of an envelope holding a canonical DCI: payload bytes then 3 CRC bytes.
pub const ENVELOPE_BYTES: usize = DCI_PACKED_BYTES + 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DciEnvelope {
    pub payload: Bits,
    pub scrambled_crc: u32,
}

pub fn build_envelope(payload: Bits, rnti: Rnti) -> Result<DciEnvelope, DciError> {
    let crc = crc24(&payload)?;
    Ok(DciEnvelope { payload, scrambled_crc: crc ^ rnti.0 as u32 })
}

pub fn recover_rnti(envelope: &DciEnvelope) -> Result<Rnti, DciError> {
    let residue = crc24(&envelope.payload)? ^ envelope.scrambled_crc;
    if residue >> 16 != 0 {
        return Err(DciError::NotRntiScrambled { residue });
    }
    Ok(Rnti(residue as u16))
}

pub fn verify_dci(envelope: &DciEnvelope, rnti: Rnti) -> bool {
    crc24(&envelope.payload).is_ok_and(|crc| crc ^ rnti.0 as u32 == envelope.scrambled_crc)
}

impl DciEnvelope {
    pub fn from_dci(dci: &Dci, rnti: Rnti) -> Result<Self, DciError> {
        build_envelope(pack_dci(dci)?, rnti)
    }

    pub fn dci(&self) -> Result<Dci, DciError> {
        unpack_dci(&self.payload)
    }

    /// Payload bytes followed by the big-endian 24-bit CRC. Only byte-aligned
    /// payloads are representable.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.payload.as_raw_slice().to_vec();
        out.extend_from_slice(&self.scrambled_crc.to_be_bytes()[1..]);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DciError> {
        if bytes.len() != ENVELOPE_BYTES {
            return Err(DciError::BadLength { expected: ENVELOPE_BYTES * 8, actual: bytes.len() * 8 });
        }
        let (payload, crc) = bytes.split_at(DCI_PACKED_BYTES);
        let payload = Bits::from_slice(payload);
        debug_assert_eq!(payload.len(), DCI_PACKED_BITS);
        let scrambled_crc = u32::from_be_bytes([0, crc[0], crc[1], crc[2]]);
        Ok(Self { payload, scrambled_crc })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dci::tests::worked_dci;

    fn fixture() -> DciEnvelope {
        DciEnvelope::from_dci(&worked_dci(), Rnti(0x4296)).unwrap()
    }

    #[test]
    fn zero_rnti_leaves_crc() {
        let bits = pack_dci(&worked_dci()).unwrap();
        let env = build_envelope(bits.clone(), Rnti(0)).unwrap();
        assert_eq!(env.scrambled_crc, crc24(&bits).unwrap());
        assert_eq!(recover_rnti(&env).unwrap(), Rnti(0));
    }

    #[test]
    fn worked_dci_rnti_recovered() {
        let env = fixture();
        assert_eq!(recover_rnti(&env).unwrap(), Rnti(0x4296));
        assert!(verify_dci(&env, Rnti(0x4296)));
        assert!(!verify_dci(&env, Rnti(0x1234)));
        assert_eq!(env.dci().unwrap(), worked_dci());
    }

    #[test]
    fn every_rnti_recovers() {
        let bits = pack_dci(&worked_dci()).unwrap();
        for r in 0..=u16::MAX {
            let env = build_envelope(bits.clone(), Rnti(r)).unwrap();
            assert_eq!(recover_rnti(&env).unwrap(), Rnti(r));
        }
    }

    #[test]
    fn every_single_flip_detected() {
        let env = fixture();
        for i in 0..env.payload.len() {
            let mut bad = env.clone();
            let b = bad.payload[i];
            bad.payload.set(i, !b);
            assert!(!verify_dci(&bad, Rnti(0x4296)), "flip at bit {i}");
            assert!(matches!(recover_rnti(&bad), Err(DciError::NotRntiScrambled { .. })), "flip at bit {i}");
        }
    }

    #[test]
    fn byte_round_trip() {
        let env = fixture();
        let bytes = env.to_bytes();
        assert_eq!(bytes.len(), ENVELOPE_BYTES);
        assert_eq!(DciEnvelope::from_bytes(&bytes).unwrap(), env);
        assert!(matches!(DciEnvelope::from_bytes(&bytes[1..]), Err(DciError::BadLength { .. })));
    }
}
