//! DCI to grant translation.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::alloc::{riv_decode, SymbolRange};
use super::mcs::{mcs_lookup, McsTable};
use super::{Dci, DciError, DciFormat, Direction, Rnti};
use crate::rrc::{dmrs_positions, CellCommonConfig, DmrsAdditionalPosition, TimeDomainAlloc, UeDedicatedConfig};
use crate::tbs::{count_re, grant_tbs, ReCountInputs, SUBCARRIERS_PER_RB};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RntiType {
    C,
    Tc,
    Si,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub rnti: Rnti,
    pub rnti_type: RntiType,
    pub direction: Direction,
    pub start_prb: u16,
    pub num_prb: u16,
    pub start_symbol: u8,
    pub num_symbols: u8,
    pub mcs: u8,
    pub modulation_order: u8,
    pub code_rate_x2048: u16,
    pub num_layers: u8,
    /// Resource elements for one layer.
    pub n_re: u32,
    pub dmrs_re_per_prb: u32,
    pub tbs_bits: u32,
    /// Filled in by HARQ tracking; a fresh translation says `true`.
    pub is_new_data: bool,
    pub harq_id: u8,
    pub ndi: u8,
    pub rv: u8,
}

impl Grant {
    pub fn code_rate(&self) -> Ratio<i64> {
        Ratio::new(self.code_rate_x2048 as i64, 2048)
    }

    pub fn symbols(&self) -> SymbolRange {
        SymbolRange { start: self.start_symbol, len: self.num_symbols }
    }
}

struct Params<'a> {
    list: &'a [TimeDomainAlloc],
    table: McsTable,
    layers: u8,
    overhead: u32,
}

fn translate(dci: &Dci, cell: &CellCommonConfig, ue: Option<&UeDedicatedConfig>, rnti: Rnti, p: Params<'_>) -> Result<Grant, DciError> {
    let prbs = riv_decode(dci.freq_riv as u32, cell.carrier_bandwidth_prb)?;
    let tda = p
        .list
        .get(dci.time_index as usize)
        .ok_or(DciError::TimeIndexOutOfRange { index: dci.time_index, len: p.list.len() })?;
    let symbols = tda.symbols();
    let mcs = mcs_lookup(dci.mcs, p.table)?;
    let pattern = match ue {
        Some(ue) => ue.dmrs_pattern(tda.mapping_type, symbols),
        None => dmrs_positions(
            tda.mapping_type,
            symbols,
            UeDedicatedConfig::DEFAULT_TYPE_A_POSITION,
            DmrsAdditionalPosition::Pos2,
        ),
    };
    let dmrs = SUBCARRIERS_PER_RB * pattern.count_in(symbols);
    let re = ReCountInputs {
        n_prb: prbs.len as u32,
        num_symbols: symbols.len as u32,
        dmrs_re_per_prb: dmrs,
        overhead: p.overhead,
    };
    let n_re = count_re(&re).map_err(DciError::from)?;
    let tbs_bits = grant_tbs(&re, mcs, p.layers)?;
    Ok(Grant {
        rnti,
        rnti_type: if rnti == Rnti::SI { RntiType::Si } else { RntiType::C },
        direction: dci.direction(),
        start_prb: prbs.start,
        num_prb: prbs.len,
        start_symbol: symbols.start,
        num_symbols: symbols.len,
        mcs: dci.mcs,
        modulation_order: mcs.modulation_order,
        code_rate_x2048: mcs.code_rate_x2048,
        num_layers: p.layers,
        n_re,
        dmrs_re_per_prb: dmrs,
        tbs_bits,
        is_new_data: true,
        harq_id: dci.harq_id,
        ndi: dci.ndi,
        rv: dci.rv,
    })
}

/// Translates a DCI addressed to a configured UE.
///
/// Downlink grants use the UE's PDSCH list (or the cell list), its MCS table
/// and `max_mimo_layers`; uplink grants use the PUSCH list with one layer.
/// Fallback formats use the 64QAM table and one layer.
pub fn dci_to_grant(dci: &Dci, cell: &CellCommonConfig, ue: &UeDedicatedConfig, rnti: Rnti) -> Result<Grant, DciError> {
    let fallback = matches!(dci.format, DciFormat::F0_0 | DciFormat::F1_0);
    let (list, layers) = match dci.direction() {
        Direction::Dl => (ue.pdsch_list(cell), if fallback { 1 } else { ue.max_mimo_layers }),
        Direction::Ul => (ue.pusch_time_domain_list.as_slice(), 1),
    };
    let table = if fallback { McsTable::Qam64 } else { ue.mcs_table };
    translate(dci, cell, Some(ue), rnti, Params { list, table, layers, overhead: ue.xoverhead as u32 })
}

/// Translates a fallback downlink DCI before any dedicated configuration is
/// known, as for the grant carrying MSG 4.
pub fn dci_to_grant_common(dci: &Dci, cell: &CellCommonConfig, rnti: Rnti) -> Result<Grant, DciError> {
    let mut g = translate(
        dci,
        cell,
        None,
        rnti,
        Params { list: &cell.pdsch_time_domain_list, table: McsTable::Qam64, layers: 1, overhead: 0 },
    )?;
    if g.rnti_type == RntiType::C {
        g.rnti_type = RntiType::Tc;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dci::tests::{worked_dci, arb_dci};
    use crate::rrc::{parse_msg4, parse_sib1};
    use proptest::prelude::*;

    fn configs() -> (CellCommonConfig, UeDedicatedConfig) {
        (
            parse_sib1(include_str!("../../fixtures/sib1.json")).unwrap(),
            parse_msg4(include_str!("../../fixtures/msg4.json")).unwrap(),
        )
    }

    #[test]
    fn worked_grant() {
        let (cell, ue) = configs();
        let g = dci_to_grant(&worked_dci(), &cell, &ue, Rnti(0x4296)).unwrap();
        assert_eq!((g.start_prb, g.num_prb), (0, 2));
        assert_eq!((g.start_symbol, g.num_symbols), (2, 12));
        assert_eq!(g.modulation_order, 8);
        assert_eq!(g.code_rate(), Ratio::new(948, 1024));
        assert_eq!(g.num_layers, 2);
        assert_eq!(g.n_re, 216);
        assert_eq!(g.n_re * g.num_layers as u32, 432);
        assert_eq!(g.dmrs_re_per_prb, 36);
        assert_eq!(g.tbs_bits, 3240);
        assert_eq!(g.direction, Direction::Dl);
        assert_eq!(g.harq_id, 11);
    }

    #[test]
    fn time_index_out_of_range() {
        let (cell, ue) = configs();
        let mut d = worked_dci();
        d.time_index = 9;
        assert_eq!(dci_to_grant(&d, &cell, &ue, Rnti(0x4296)), Err(DciError::TimeIndexOutOfRange { index: 9, len: 2 }));
    }

    #[test]
    fn uplink_uses_pusch_list_and_one_layer() {
        let (cell, ue) = configs();
        let mut d = worked_dci();
        d.format = DciFormat::F0_1;
        let g = dci_to_grant(&d, &cell, &ue, Rnti(0x4296)).unwrap();
        assert_eq!((g.start_symbol, g.num_symbols), (0, 12));
        assert_eq!(g.num_layers, 1);
        assert_eq!(g.direction, Direction::Ul);
        d.time_index = 1;
        assert!(matches!(dci_to_grant(&d, &cell, &ue, Rnti(0x4296)), Err(DciError::TimeIndexOutOfRange { .. })));
    }

    #[test]
    fn common_grant_is_tc_rnti() {
        let (cell, _) = configs();
        let mut d = Dci::zeroed(DciFormat::F1_0);
        d.freq_riv = 0x33;
        d.mcs = 4;
        let g = dci_to_grant_common(&d, &cell, Rnti(0x4296)).unwrap();
        assert_eq!(g.rnti_type, RntiType::Tc);
        assert_eq!(g.num_layers, 1);
        assert!(g.tbs_bits > 0);
    }

    proptest! {
        #[test]
        fn grant_bounds(mut d in arb_dci(), len in 1u16..=51, start in 0u16..51, t in 0u8..2, mcs in 0u8..28) {
            let (cell, ue) = configs();
            prop_assume!(start + len <= 51);
            d.freq_riv = crate::dci::riv_encode(crate::dci::PrbRange { start, len }, 51) as u16;
            d.time_index = if d.direction() == Direction::Ul { 0 } else { t };
            d.mcs = mcs;
            let g = dci_to_grant(&d, &cell, &ue, Rnti(0x4296)).unwrap();
            prop_assert!(g.start_symbol + g.num_symbols <= 14);
            prop_assert!(g.start_prb + g.num_prb <= cell.carrier_bandwidth_prb);
            prop_assert_eq!((g.start_prb, g.num_prb), (start, len));
            prop_assert!([2, 4, 6, 8].contains(&g.modulation_order));
            prop_assert_eq!(dci_to_grant(&d, &cell, &ue, Rnti(0x4296)).unwrap(), g);
        }
    }
}
