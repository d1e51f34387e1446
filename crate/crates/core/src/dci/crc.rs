//! CRC-24C (generator 0xB2B117, zero init, MSB first, no final XOR).

use bitvec::prelude::*;

use super::DciError;

pub const CRC24_POLY: u32 = 0xB2_B117;
const MASK: u32 = 0xFF_FFFF;

const TABLE: [u32; 256] = build_table();

const fn build_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u32) << 16;
        let mut k = 0;
        while k < 8 {
            crc = if crc & 0x80_0000 != 0 { (crc << 1) ^ CRC24_POLY } else { crc << 1 };
            k += 1;
        }
        table[i] = crc & MASK;
        i += 1;
    }
    table
}

#[inline]
fn step_bit(crc: u32, bit: bool) -> u32 {
    let top = (crc >> 23 & 1 == 1) ^ bit;
    let crc = (crc << 1) & MASK;
    if top {
        crc ^ CRC24_POLY
    } else {
        crc
    }
}

/// CRC of a bit string of any length. Whole bytes go through the table, the
/// remainder bit by bit.
pub fn crc24(bits: &BitSlice<u8, Msb0>) -> Result<u32, DciError> {
    if bits.is_empty() {
        return Err(DciError::EmptyInput);
    }
    let mut crc = 0u32;
    let whole = bits.len() / 8 * 8;
    for chunk in bits[..whole].chunks_exact(8) {
        let byte = chunk.load_be::<u8>() as u32;
        crc = ((crc << 8) & MASK) ^ TABLE[((crc >> 16) ^ byte) as usize & 0xFF];
    }
    for bit in bits[whole..].iter().by_vals() {
        crc = step_bit(crc, bit);
    }
    Ok(crc)
}

pub fn crc24_bytes(bytes: &[u8]) -> Result<u32, DciError> {
    crc24(bytes.view_bits::<Msb0>())
}
