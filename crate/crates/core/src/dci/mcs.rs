//! PDSCH MCS index tables, embedded as CSV assets.

use std::fmt;
use std::sync::OnceLock;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::DciError;

pub const MCS_QAM64_CSV: &str = include_str!("../../assets/mcs_qam64.csv");
pub const MCS_QAM256_CSV: &str = include_str!("../../assets/mcs_qam256.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McsTable {
    Qam64,
    Qam256,
}

impl fmt::Display for McsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Qam64 => "qam64",
            Self::Qam256 => "qam256",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct McsEntry {
    pub modulation_order: u8,
    /// Target code rate times 2048; the 256QAM table has half-integer x1024 rates.
    pub code_rate_x2048: u16,
}

impl McsEntry {
    pub fn code_rate(&self) -> Ratio<i64> {
        Ratio::new(self.code_rate_x2048 as i64, 2048)
    }

    pub fn code_rate_x1024(&self) -> f64 {
        self.code_rate_x2048 as f64 / 2.0
    }
}

type Table = [Option<McsEntry>; 32];

fn parse_table(text: &str) -> Table {
    let mut table = [None; 32];
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    for rec in rdr.records() {
        let rec = rec.expect("embedded MCS table is valid CSV");
        let index: usize = rec[0].parse().expect("MCS index");
        let qm: u8 = rec[1].parse().expect("modulation order");
        table[index] = match &rec[2] {
            "reserved" => None,
            rate => {
                let x1024: f64 = rate.parse().expect("code rate");
                Some(McsEntry { modulation_order: qm, code_rate_x2048: (x1024 * 2.0).round() as u16 })
            }
        };
    }
    table
}

fn table(which: McsTable) -> &'static Table {
    static QAM64: OnceLock<Table> = OnceLock::new();
    static QAM256: OnceLock<Table> = OnceLock::new();
    match which {
        McsTable::Qam64 => QAM64.get_or_init(|| parse_table(MCS_QAM64_CSV)),
        McsTable::Qam256 => QAM256.get_or_init(|| parse_table(MCS_QAM256_CSV)),
    }
}

pub fn mcs_lookup(mcs: u8, which: McsTable) -> Result<McsEntry, DciError> {
    table(which)
        .get(mcs as usize)
        .copied()
        .flatten()
        .ok_or(DciError::ReservedMcs { index: mcs, table: which })
}

/// Highest usable index of a table.
pub fn max_mcs(which: McsTable) -> u8 {
    match which {
        McsTable::Qam64 => 28,
        McsTable::Qam256 => 27,
    }
}
