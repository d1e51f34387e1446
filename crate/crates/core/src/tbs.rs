//! Transport block size from grant parameters, in exact rational arithmetic.

use std::sync::OnceLock;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dci::McsEntry;

pub const TBS_TABLE_CSV: &str = include_str!("../assets/tbs_table.csv");

pub const SUBCARRIERS_PER_RB: u32 = 12;
/// Per-PRB resource element ceiling.
pub const MAX_RE_PER_PRB: u32 = 156;
/// Largest N_info served by the table.
pub const TABLE_LIMIT: i64 = 3824;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TbsError {
    #[error("negative per-PRB resource elements: 12*{symbols} - {dmrs} - {overhead}")]
    NegativePerPrbRe { symbols: u32, dmrs: u32, overhead: u32 },
    #[error("bad DMRS symbol pattern: {0}")]
    BadPattern(String),
    #[error("N_info must be positive")]
    NonPositiveNInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReCountInputs {
    pub n_prb: u32,
    pub num_symbols: u32,
    pub dmrs_re_per_prb: u32,
    pub overhead: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TbsOptions {
    /// Use 3814 instead of 3816 as the low-rate code-block divisor.
    pub legacy_divisor: bool,
    /// Round `N' + 24·C` instead of `N' + 24` up to a multiple of `8·C` on
    /// the segmented paths.
    pub block_crc_in_ceiling: bool,
}

/// Intermediate values of one TBS evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TbsDetail {
    pub tbs: u32,
    pub n: i32,
    pub n_info_prime: i64,
    /// Code blocks, only set on the segmented formula paths.
    pub code_blocks: Option<i64>,
    pub from_table: bool,
}

fn tbs_table() -> &'static [u32] {
    static TABLE: OnceLock<Vec<u32>> = OnceLock::new();
    TABLE.get_or_init(|| {
        TBS_TABLE_CSV
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.parse().expect("embedded TBS table holds integers"))
            .collect()
    })
}

/// The 93 table entries in increasing order.
pub fn table_entries() -> &'static [u32] {
    tbs_table()
}

pub fn count_re(inputs: &ReCountInputs) -> Result<u32, TbsError> {
    let per_prb = (SUBCARRIERS_PER_RB * inputs.num_symbols) as i64
        - inputs.dmrs_re_per_prb as i64
        - inputs.overhead as i64;
    if per_prb < 0 {
        return Err(TbsError::NegativePerPrbRe {
            symbols: inputs.num_symbols,
            dmrs: inputs.dmrs_re_per_prb,
            overhead: inputs.overhead,
        });
    }
    Ok((per_prb as u32).min(MAX_RE_PER_PRB) * inputs.n_prb)
}

/// DMRS resource elements per PRB: 12 for every `1` in `[start, start + len)`.
pub fn dmrs_re_per_prb(pattern: &str, start: u32, len: u32) -> Result<u32, TbsError> {
    if pattern.len() != 14 || !pattern.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(TbsError::BadPattern(pattern.to_string()));
    }
    if start + len > 14 {
        return Err(TbsError::BadPattern(format!("window {start}+{len} exceeds the slot")));
    }
    let ones = pattern.as_bytes()[start as usize..(start + len) as usize].iter().filter(|&&b| b == b'1').count();
    Ok(SUBCARRIERS_PER_RB * ones as u32)
}

pub fn compute_n_info(n_re: u32, code_rate: Ratio<i64>, qm: u8, layers: u8) -> Ratio<i64> {
    code_rate * (n_re as i64 * qm as i64 * layers as i64)
}

fn pow2(k: i32) -> Ratio<i64> {
    if k >= 0 {
        Ratio::from_integer(1i64 << k)
    } else {
        Ratio::new(1, 1i64 << -k)
    }
}

/// ⌊log2 x⌋ for positive x.
fn floor_log2(x: Ratio<i64>) -> i32 {
    let mut k = x.numer().ilog2() as i32 - x.denom().ilog2() as i32;
    if x < pow2(k) {
        k -= 1;
    }
    k
}

fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1) / b
}

pub fn compute_tbs(n_info: Ratio<i64>, code_rate: Ratio<i64>) -> Result<u32, TbsError> {
    compute_tbs_detail(n_info, code_rate, TbsOptions::default()).map(|d| d.tbs)
}

pub fn compute_tbs_detail(n_info: Ratio<i64>, code_rate: Ratio<i64>, opts: TbsOptions) -> Result<TbsDetail, TbsError> {
    if n_info <= Ratio::from_integer(0) {
        return Err(TbsError::NonPositiveNInfo);
    }
    if n_info <= Ratio::from_integer(TABLE_LIMIT) {
        let n = (floor_log2(n_info) - 6).max(3);
        let step = 1i64 << n;
        let n_prime = (step * (n_info / step).floor().to_integer()).max(24);
        let tbs = *tbs_table()
            .iter()
            .find(|&&t| t as i64 >= n_prime)
            .expect("N' never exceeds the last table entry");
        return Ok(TbsDetail { tbs, n, n_info_prime: n_prime, code_blocks: None, from_table: true });
    }
    let reduced = n_info - 24;
    let n = floor_log2(reduced) - 5;
    let step = 1i64 << n;
    let n_prime = (step * (reduced / step).round().to_integer()).max(3840);
    let crc = |c: i64| if opts.block_crc_in_ceiling { 24 * c } else { 24 };
    let segmented = |c: i64| 8 * c * ceil_div(n_prime + crc(c), 8 * c) - 24;
    let (tbs, code_blocks) = if code_rate <= Ratio::new(1, 4) {
        let divisor = if opts.legacy_divisor { 3814 } else { 3816 };
        let c = ceil_div(n_prime + 24, divisor);
        (segmented(c), Some(c))
    } else if n_prime > 8424 {
        let c = ceil_div(n_prime + 24, 8424);
        (segmented(c), Some(c))
    } else {
        (8 * ceil_div(n_prime + 24, 8) - 24, None)
    };
    Ok(TbsDetail { tbs: tbs as u32, n, n_info_prime: n_prime, code_blocks, from_table: false })
}

/// TBS for a whole grant; an empty allocation carries no bits.
pub fn grant_tbs(re: &ReCountInputs, mcs: McsEntry, layers: u8) -> Result<u32, TbsError> {
    grant_tbs_with(re, mcs, layers, TbsOptions::default())
}

pub fn grant_tbs_with(re: &ReCountInputs, mcs: McsEntry, layers: u8, opts: TbsOptions) -> Result<u32, TbsError> {
    let n_re = count_re(re)?;
    let n_info = compute_n_info(n_re, mcs.code_rate(), mcs.modulation_order, layers);
    match compute_tbs_detail(n_info, mcs.code_rate(), opts) {
        Ok(d) => Ok(d.tbs),
        Err(TbsError::NonPositiveNInfo) => Ok(0),
        Err(e) => Err(e),
    }
}
