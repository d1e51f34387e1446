//! Downlink control information: canonical record, bit packing, CRC envelope,
//! resource-allocation decoding, MCS tables and grant translation.

pub mod alloc;
pub mod crc;
pub mod envelope;
pub mod grant;
pub mod listing;
pub mod mcs;
pub mod trace;

use std::fmt;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dci::mcs::McsTable;
use crate::tbs::TbsError;

pub use alloc::{riv_decode, riv_encode, sliv_decode, sliv_encode, PrbRange, SymbolRange};
pub use crc::crc24;
pub use envelope::{build_envelope, recover_rnti, verify_dci, DciEnvelope};
pub use grant::{dci_to_grant, Grant, RntiType};
pub use mcs::{mcs_lookup, McsEntry};

/// Bit string in transmission order.
pub type Bits = BitVec<u8, Msb0>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DciError {
    #[error("field `{field}` value {value} does not fit in {width} bits")]
    FieldOverflow { field: &'static str, value: u32, width: u8 },
    #[error("expected {expected} bits, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("unknown DCI format code {0}")]
    UnknownFormat(u8),
    #[error("CRC over an empty bit string")]
    EmptyInput,
    #[error("CRC residue {residue:#08x} is not an RNTI scrambling")]
    NotRntiScrambled { residue: u32 },
    #[error("RIV {riv} out of range for a {bwp}-PRB bandwidth part")]
    RivOutOfRange { riv: u32, bwp: u16 },
    #[error("SLIV {0} out of range")]
    SlivOutOfRange(u32),
    #[error("SLIV {0} has no valid start/length decoding")]
    NoValidDecode(u32),
    #[error("MCS index {index} is reserved in the {table} table")]
    ReservedMcs { index: u8, table: McsTable },
    #[error("time-domain index {index} outside a {len}-entry list")]
    TimeIndexOutOfRange { index: u8, len: usize },
    #[error(transparent)]
    Tbs(#[from] TbsError),
}

/// 16-bit radio network temporary identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rnti(pub u16);

impl Rnti {
    pub const SI: Rnti = Rnti(0xFFFF);
    pub const MIN_UE: u16 = 0x0001;
    pub const MAX_UE: u16 = 0xFFF2;

    /// True for values a gNB may hand out as C-RNTI or TC-RNTI.
    pub fn is_ue_assignable(self) -> bool {
        (Self::MIN_UE..=Self::MAX_UE).contains(&self.0)
    }
}

impl fmt::Display for Rnti {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Dl,
    Ul,
}

impl Direction {
    pub fn token(self) -> &'static str {
        match self {
            Self::Dl => "dl",
            Self::Ul => "ul",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "dl" => Some(Self::Dl),
            "ul" => Some(Self::Ul),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DciFormat {
    F0_0,
    F0_1,
    F1_0,
    F1_1,
}

impl DciFormat {
    pub const ALL: [DciFormat; 4] = [Self::F0_0, Self::F0_1, Self::F1_0, Self::F1_1];

    pub fn code(self) -> u8 {
        match self {
            Self::F0_0 => 0,
            Self::F0_1 => 1,
            Self::F1_0 => 2,
            Self::F1_1 => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, DciError> {
        Self::ALL.get(code as usize).copied().ok_or(DciError::UnknownFormat(code))
    }

    /// Formats 0_x schedule uplink, 1_x downlink.
    pub fn direction(self) -> Direction {
        match self {
            Self::F0_0 | Self::F0_1 => Direction::Ul,
            Self::F1_0 | Self::F1_1 => Direction::Dl,
        }
    }

    /// Listing token, `1_1` style.
    pub fn token(self) -> &'static str {
        match self {
            Self::F0_0 => "0_0",
            Self::F0_1 => "0_1",
            Self::F1_0 => "1_0",
            Self::F1_1 => "1_1",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.token() == s)
    }
}

/// One decoded control record in canonical form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dci {
    pub format: DciFormat,
    pub freq_riv: u16,
    pub time_index: u8,
    pub mcs: u8,
    pub ndi: u8,
    pub rv: u8,
    pub harq_id: u8,
    pub dai: u8,
    pub tpc: u8,
    pub harq_feedback: u8,
    pub ports: u8,
    pub srs_request: u8,
    pub dmrs_id: u8,
}

impl Dci {
    pub fn zeroed(format: DciFormat) -> Self {
        Self {
            format,
            freq_riv: 0,
            time_index: 0,
            mcs: 0,
            ndi: 0,
            rv: 0,
            harq_id: 0,
            dai: 0,
            tpc: 0,
            harq_feedback: 0,
            ports: 0,
            srs_request: 0,
            dmrs_id: 0,
        }
    }

    pub fn direction(&self) -> Direction {
        self.format.direction()
    }

    fn fields(&self) -> [(&'static str, u32, u8); 13] {
        [
            ("format", self.format.code() as u32, 4),
            ("freq_riv", self.freq_riv as u32, 16),
            ("time_index", self.time_index as u32, 4),
            ("mcs", self.mcs as u32, 5),
            ("ndi", self.ndi as u32, 1),
            ("rv", self.rv as u32, 2),
            ("harq_id", self.harq_id as u32, 4),
            ("dai", self.dai as u32, 2),
            ("tpc", self.tpc as u32, 2),
            ("harq_feedback", self.harq_feedback as u32, 3),
            ("ports", self.ports as u32, 4),
            ("srs_request", self.srs_request as u32, 2),
            ("dmrs_id", self.dmrs_id as u32, 1),
        ]
    }
}

/// Meaningful bits in the packed record.
pub const DCI_FIELD_BITS: usize = 50;
/// Packed length after padding to a byte boundary.
pub const DCI_PACKED_BITS: usize = 56;
pub const DCI_PACKED_BYTES: usize = DCI_PACKED_BITS / 8;

pub fn pack_dci(dci: &Dci) -> Result<Bits, DciError> {
    let mut bits = Bits::with_capacity(DCI_PACKED_BITS);
    for (field, value, width) in dci.fields() {
        if value >> width != 0 {
            return Err(DciError::FieldOverflow { field, value, width });
        }
        for i in (0..width).rev() {
            bits.push(value >> i & 1 == 1);
        }
    }
    bits.resize(DCI_PACKED_BITS, false);
    Ok(bits)
}

pub fn unpack_dci(bits: &BitSlice<u8, Msb0>) -> Result<Dci, DciError> {
    if bits.len() != DCI_PACKED_BITS {
        return Err(DciError::BadLength { expected: DCI_PACKED_BITS, actual: bits.len() });
    }
    let mut pos = 0;
    let mut take = |width: usize| {
        let v = bits[pos..pos + width].load_be::<u32>();
        pos += width;
        v
    };
    let format = DciFormat::from_code(take(4) as u8)?;
    Ok(Dci {
        format,
        freq_riv: take(16) as u16,
        time_index: take(4) as u8,
        mcs: take(5) as u8,
        ndi: take(1) as u8,
        rv: take(2) as u8,
        harq_id: take(4) as u8,
        dai: take(2) as u8,
        tpc: take(2) as u8,
        harq_feedback: take(3) as u8,
        ports: take(4) as u8,
        srs_request: take(2) as u8,
        dmrs_id: take(1) as u8,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn worked_dci() -> Dci {
        Dci {
            format: DciFormat::F1_1,
            freq_riv: 0x33,
            time_index: 0,
            mcs: 27,
            ndi: 0,
            rv: 0,
            harq_id: 11,
            dai: 2,
            tpc: 1,
            harq_feedback: 2,
            ports: 7,
            srs_request: 0,
            dmrs_id: 0,
        }
    }

    pub fn arb_dci() -> impl Strategy<Value = Dci> {
        (
            0u8..4,
            any::<u16>(),
            0u8..16,
            0u8..32,
            0u8..2,
            0u8..4,
            0u8..16,
            (0u8..4, 0u8..4, 0u8..8, 0u8..16, 0u8..4, 0u8..2),
        )
            .prop_map(|(f, riv, t, mcs, ndi, rv, h, (dai, tpc, fb, ports, srs, dmrs))| Dci {
                format: DciFormat::from_code(f).unwrap(),
                freq_riv: riv,
                time_index: t,
                mcs,
                ndi,
                rv,
                harq_id: h,
                dai,
                tpc,
                harq_feedback: fb,
                ports,
                srs_request: srs,
                dmrs_id: dmrs,
            })
    }

    #[test]
    fn zero_record_packs_to_zero_bits() {
        let bits = pack_dci(&Dci::zeroed(DciFormat::F0_0)).unwrap();
        assert_eq!(bits.len(), 56);
        assert!(bits.not_any());
        assert_eq!(unpack_dci(&bits).unwrap(), Dci::zeroed(DciFormat::F0_0));
    }

    #[test]
    fn worked_dci_bits_follow_field_order() {
        let bits = pack_dci(&worked_dci()).unwrap();
        // written out field by field
        let expected = concat!(
            "0011",             // format 1_1
            "0000000000110011", // riv 0x33
            "0000",             // time index
            "11011",            // mcs 27
            "0",                // ndi
            "00",               // rv
            "1011",             // harq 11
            "10",               // dai 2
            "01",               // tpc 1
            "010",              // harq feedback 2
            "0111",             // ports 7
            "00",               // srs
            "0",                // dmrs id
            "000000",           // pad
        );
        let got: String = bits.iter().map(|b| if *b { '1' } else { '0' }).collect();
        assert_eq!(got, expected);
        assert_eq!(hex::encode(bits.as_raw_slice()), "300330d8b94e00");
        assert_eq!(unpack_dci(&bits).unwrap(), worked_dci());
    }

    #[test]
    fn overflow_and_length_errors() {
        let mut d = worked_dci();
        d.mcs = 32;
        assert_eq!(pack_dci(&d), Err(DciError::FieldOverflow { field: "mcs", value: 32, width: 5 }));
        let short = bitvec![u8, Msb0; 0; 40];
        assert_eq!(unpack_dci(&short), Err(DciError::BadLength { expected: 56, actual: 40 }));
        let mut bad = pack_dci(&worked_dci()).unwrap();
        bad.set(0, true);
        assert_eq!(unpack_dci(&bad), Err(DciError::UnknownFormat(11)));
    }

    #[test]
    fn rnti_ranges() {
        assert!(Rnti(0x4296).is_ue_assignable());
        assert!(!Rnti::SI.is_ue_assignable());
        assert!(!Rnti(0).is_ue_assignable());
        assert!(!Rnti(0xFFF3).is_ue_assignable());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn pack_unpack_round_trip(d in arb_dci()) {
            let bits = pack_dci(&d).unwrap();
            prop_assert_eq!(bits.len(), DCI_PACKED_BITS);
            prop_assert!(bits[DCI_FIELD_BITS..].not_any());
            prop_assert_eq!(unpack_dci(&bits).unwrap(), d);
        }
    }
}
