//! Frequency (RIV, allocation type 1) and time (SLIV) allocation values.

use serde::{Deserialize, Serialize};

use super::DciError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrbRange {
    pub start: u16,
    pub len: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymbolRange {
    pub start: u8,
    pub len: u8,
}

pub const SYMBOLS_PER_SLOT: u32 = 14;

/// Start/length pair encoded as `n*(L-1)+S` for short allocations and as the
/// mirrored form for long ones. `short_limit` bounds `L-1` in the short form.
fn encode(n: u32, short_limit: u32, start: u32, len: u32) -> u32 {
    if len - 1 <= short_limit {
        n * (len - 1) + start
    } else {
        n * (n - len + 1) + (n - 1 - start)
    }
}

fn decode(n: u32, short_limit: u32, value: u32) -> Option<(u32, u32)> {
    let (a, b) = (value / n, value % n);
    let (len, start) = (a + 1, b);
    if len - 1 <= short_limit && start + len <= n {
        return Some((start, len));
    }
    // mirrored form: a = n - L + 1, b = n - 1 - S
    let len = (n + 1).checked_sub(a)?;
    let start = n - 1 - b;
    (len >= 1 && len - 1 > short_limit && start + len <= n).then_some((start, len))
}

pub fn riv_encode(range: PrbRange, bwp_size: u16) -> u32 {
    let n = bwp_size as u32;
    encode(n, n / 2, range.start as u32, range.len as u32)
}

pub fn riv_decode(riv: u32, bwp_size: u16) -> Result<PrbRange, DciError> {
    let n = bwp_size as u32;
    if n == 0 || riv >= n * (n + 1) / 2 {
        return Err(DciError::RivOutOfRange { riv, bwp: bwp_size });
    }
    decode(n, n / 2, riv)
        .map(|(s, l)| PrbRange { start: s as u16, len: l as u16 })
        .ok_or(DciError::RivOutOfRange { riv, bwp: bwp_size })
}

pub fn sliv_encode(range: SymbolRange) -> u32 {
    encode(SYMBOLS_PER_SLOT, 7, range.start as u32, range.len as u32)
}

pub fn sliv_decode(sliv: u32) -> Result<SymbolRange, DciError> {
    if sliv >= SYMBOLS_PER_SLOT * SYMBOLS_PER_SLOT {
        return Err(DciError::SlivOutOfRange(sliv));
    }
    decode(SYMBOLS_PER_SLOT, 7, sliv)
        .map(|(s, l)| SymbolRange { start: s as u8, len: l as u8 })
        .ok_or(DciError::NoValidDecode(sliv))
}
