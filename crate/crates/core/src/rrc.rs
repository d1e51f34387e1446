//! RRC configuration documents.
//!
//! SIB 1 and MSG 4 (`RRCSetup`) dumps are read as JSON documents using the
//! ASN.1 field names. Fields the toolkit never consumes are kept verbatim in a
//! pass-through map keyed by JSON pointer, so a parsed config can be written
//! back to the same document shape.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::dci::alloc::{sliv_decode, SymbolRange};
use crate::dci::mcs::McsTable;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("invalid value at `{field}`: {value}")]
    InvalidValue { field: String, value: String },
}

fn invalid(field: impl Into<String>, value: impl fmt::Display) -> ConfigError {
    ConfigError::InvalidValue { field: field.into(), value: value.to_string() }
}

/// Pass-through fields, keyed by JSON pointer relative to the document body.
pub type Passthrough = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubcarrierSpacing {
    Khz15,
    Khz30,
    Khz60,
}

impl SubcarrierSpacing {
    pub fn from_khz(khz: u32) -> Option<Self> {
        match khz {
            15 => Some(Self::Khz15),
            30 => Some(Self::Khz30),
            60 => Some(Self::Khz60),
            _ => None,
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "kHz15" => Some(Self::Khz15),
            "kHz30" => Some(Self::Khz30),
            "kHz60" => Some(Self::Khz60),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Self::Khz15 => "kHz15",
            Self::Khz30 => "kHz30",
            Self::Khz60 => "kHz60",
        }
    }

    pub fn khz(self) -> u32 {
        match self {
            Self::Khz15 => 15,
            Self::Khz30 => 30,
            Self::Khz60 => 60,
        }
    }

    /// Slot length in milliseconds, `15 / scs`.
    pub fn tti_duration_ms(self) -> Ratio<u32> {
        Ratio::new(15, self.khz())
    }

    pub fn tti_duration_us(self) -> u32 {
        15_000 / self.khz()
    }

    pub fn slots_per_second(self) -> u32 {
        1_000_000 / self.tti_duration_us()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MappingType {
    A,
    B,
}

impl MappingType {
    fn from_token(token: &str) -> Option<Self> {
        match token {
            "typeA" => Some(Self::A),
            "typeB" => Some(Self::B),
            _ => None,
        }
    }

    fn token(self) -> &'static str {
        match self {
            Self::A => "typeA",
            Self::B => "typeB",
        }
    }
}

/// One entry of a PDSCH/PUSCH time-domain allocation list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeDomainAlloc {
    /// k0 for PDSCH lists, k2 for PUSCH lists.
    pub slot_offset: u8,
    pub mapping_type: MappingType,
    pub sliv: u8,
}

impl TimeDomainAlloc {
    pub fn symbols(&self) -> SymbolRange {
        // validated at construction
        sliv_decode(self.sliv as u32).expect("time-domain allocation holds a valid SLIV")
    }
}

/// PDCCH candidate counts for aggregation levels 1, 2, 4, 8 and 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AggregationCandidates(pub [u8; 5]);

impl AggregationCandidates {
    pub const LEVELS: [u8; 5] = [1, 2, 4, 8, 16];

    pub fn get(&self, level: u8) -> Option<u8> {
        Self::LEVELS.iter().position(|&l| l == level).map(|i| self.0[i])
    }
}

fn candidate_count(token: &str) -> Option<u8> {
    match token {
        "n0" => Some(0),
        "n1" => Some(1),
        "n2" => Some(2),
        "n3" => Some(3),
        "n4" => Some(4),
        "n5" => Some(5),
        "n6" => Some(6),
        "n8" => Some(8),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DciFormats {
    /// Fallback formats 0-0 and 1-0.
    Formats00And10,
    /// Non-fallback formats 0-1 and 1-1.
    Formats01And11,
}

impl DciFormats {
    fn from_token(token: &str) -> Option<Self> {
        match token {
            "formats0-0-And-1-0" => Some(Self::Formats00And10),
            "formats0-1-And-1-1" => Some(Self::Formats01And11),
            _ => None,
        }
    }

    fn token(self) -> &'static str {
        match self {
            Self::Formats00And10 => "formats0-0-And-1-0",
            Self::Formats01And11 => "formats0-1-And-1-1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchSpaceType {
    Common,
    UeSpecific(DciFormats),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpaceConfig {
    pub id: u8,
    pub coreset_id: u8,
    /// 14-character binary string, one character per OFDM symbol.
    pub monitoring_symbols: String,
    pub candidates: AggregationCandidates,
    pub kind: SearchSpaceType,
    pub extra: Passthrough,
}

/// DMRS symbol occupancy inside one slot, bit `i` set when symbol `i` carries DMRS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymbolPattern(pub u16);

impl SymbolPattern {
    pub fn contains(&self, symbol: u8) -> bool {
        symbol < 14 && self.0 & (1 << symbol) != 0
    }

    pub fn count_in(&self, range: SymbolRange) -> u32 {
        (range.start..range.start + range.len).filter(|&s| self.contains(s)).count() as u32
    }
}

impl FromStr for SymbolPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 14 || !s.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(format!("expected 14 binary digits, got {s:?}"));
        }
        let mask = s.bytes().enumerate().filter(|(_, b)| *b == b'1').fold(0u16, |m, (i, _)| m | (1 << i));
        Ok(Self(mask))
    }
}

impl fmt::Display for SymbolPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in 0..14 {
            f.write_str(if self.contains(s) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DmrsAdditionalPosition {
    Pos0,
    Pos1,
    Pos2,
    Pos3,
}

impl DmrsAdditionalPosition {
    fn from_token(token: &str) -> Option<Self> {
        match token {
            "pos0" => Some(Self::Pos0),
            "pos1" => Some(Self::Pos1),
            "pos2" => Some(Self::Pos2),
            "pos3" => Some(Self::Pos3),
            _ => None,
        }
    }

    fn from_index(i: u64) -> Option<Self> {
        [Self::Pos0, Self::Pos1, Self::Pos2, Self::Pos3].get(i as usize).copied()
    }

    fn index(self) -> u8 {
        self as u8
    }

    fn token(self) -> &'static str {
        match self {
            Self::Pos0 => "pos0",
            Self::Pos1 => "pos1",
            Self::Pos2 => "pos2",
            Self::Pos3 => "pos3",
        }
    }
}

/// Single-symbol DMRS positions for a PDSCH/PUSCH allocation.
///
/// Mapping type A follows the TS 38.211 position table, indexed by the number
/// of symbols from the slot start to the end of the allocation. Mapping type B
/// places DMRS on the first allocated symbol only.
pub fn dmrs_positions(
    mapping: MappingType,
    range: SymbolRange,
    type_a_position: u8,
    additional: DmrsAdditionalPosition,
) -> SymbolPattern {
    let mut mask = 0u16;
    match mapping {
        MappingType::A => {
            let duration = range.start + range.len;
            let extra: &[u8] = match (additional, duration) {
                (_, 0..=7) | (DmrsAdditionalPosition::Pos0, _) => &[],
                (_, 8..=9) => &[7],
                (DmrsAdditionalPosition::Pos1, 10..=12) => &[9],
                (DmrsAdditionalPosition::Pos2, 10..=12) => &[6, 9],
                (DmrsAdditionalPosition::Pos3, 10..=11) => &[6, 9],
                (DmrsAdditionalPosition::Pos3, _) => &[5, 8, 11],
                (DmrsAdditionalPosition::Pos1, _) => &[11],
                (DmrsAdditionalPosition::Pos2, _) => &[7, 11],
            };
            mask |= 1 << type_a_position;
            for &s in extra {
                mask |= 1 << s;
            }
        }
        MappingType::B => mask |= 1 << range.start,
    }
    SymbolPattern(mask)
}

/// DMRS layout observed in a decoded grant listing, overriding RRC-derived values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmrsObservation {
    pub additional_position: Option<DmrsAdditionalPosition>,
    pub type_a_position: u8,
    pub symbol_pattern: Option<SymbolPattern>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotKind {
    Downlink,
    Uplink,
    Special,
}

/// Periodic TDD slot pattern, e.g. `DDDDDDDSUU`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TddPattern(Vec<SlotKind>);

impl TddPattern {
    pub fn slots(&self) -> &[SlotKind] {
        &self.0
    }

    pub fn kind(&self, tti: u64) -> SlotKind {
        self.0[(tti % self.0.len() as u64) as usize]
    }

    pub fn count(&self, kind: SlotKind) -> usize {
        self.0.iter().filter(|&&k| k == kind).count()
    }
}

impl FromStr for TddPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err("empty TDD pattern".into());
        }
        s.chars()
            .map(|c| match c {
                'D' => Ok(SlotKind::Downlink),
                'U' => Ok(SlotKind::Uplink),
                'S' => Ok(SlotKind::Special),
                other => Err(format!("unknown slot kind {other:?}")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }
}

impl fmt::Display for TddPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in &self.0 {
            f.write_str(match k {
                SlotKind::Downlink => "D",
                SlotKind::Uplink => "U",
                SlotKind::Special => "S",
            })?;
        }
        Ok(())
    }
}

/// Cell-common parameters carried by SIB 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCommonConfig {
    pub band: u16,
    pub carrier_bandwidth_prb: u16,
    pub subcarrier_spacing: SubcarrierSpacing,
    pub offset_to_point_a: Option<u32>,
    pub coreset0_index: Option<u8>,
    pub search_space_zero: Option<u8>,
    pub common_search_spaces: Vec<SearchSpaceConfig>,
    pub pdsch_time_domain_list: Vec<TimeDomainAlloc>,
    /// `None` means every slot can carry downlink data.
    pub tdd: Option<TddPattern>,
    pub passthrough: Passthrough,
}

impl CellCommonConfig {
    pub fn tti_duration_ms(&self) -> Ratio<u32> {
        self.subcarrier_spacing.tti_duration_ms()
    }

    pub fn slot_kind(&self, tti: u64) -> SlotKind {
        self.tdd.as_ref().map_or(SlotKind::Downlink, |p| p.kind(tti))
    }

    /// A bare cell description without search spaces or allocation lists.
    pub fn minimal(band: u16, carrier_bandwidth_prb: u16, scs: SubcarrierSpacing) -> Self {
        Self {
            band,
            carrier_bandwidth_prb,
            subcarrier_spacing: scs,
            offset_to_point_a: None,
            coreset0_index: None,
            search_space_zero: None,
            common_search_spaces: Vec::new(),
            pdsch_time_domain_list: Vec::new(),
            tdd: None,
            passthrough: Passthrough::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetConfig {
    pub id: u8,
    pub duration_symbols: u8,
    pub extra: Passthrough,
}

/// UE-dedicated parameters carried by MSG 4 (`RRCSetup`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeDedicatedConfig {
    pub coresets: Vec<CoresetConfig>,
    pub search_spaces: Vec<SearchSpaceConfig>,
    pub coreset_id: u8,
    pub coreset_duration_symbols: u8,
    pub aggregation_candidates: AggregationCandidates,
    pub dci_formats: DciFormats,
    /// PDSCH mapping type A setting from RRC; absent means `pos2`.
    pub dmrs_additional_position: DmrsAdditionalPosition,
    pub dmrs_observed: Option<DmrsObservation>,
    /// Overrides the cell list when non-empty.
    pub pdsch_time_domain_list: Vec<TimeDomainAlloc>,
    pub pusch_time_domain_list: Vec<TimeDomainAlloc>,
    pub max_mimo_layers: u8,
    pub num_harq_processes: u8,
    pub mcs_table: McsTable,
    /// N_oh^PRB.
    pub xoverhead: u8,
    pub passthrough: Passthrough,
}

impl UeDedicatedConfig {
    pub const DEFAULT_TYPE_A_POSITION: u8 = 2;

    pub fn pdsch_list<'a>(&'a self, cell: &'a CellCommonConfig) -> &'a [TimeDomainAlloc] {
        if self.pdsch_time_domain_list.is_empty() {
            &cell.pdsch_time_domain_list
        } else {
            &self.pdsch_time_domain_list
        }
    }

    /// DMRS symbols for an allocation, honoring an observed pattern when present.
    pub fn dmrs_pattern(&self, mapping: MappingType, range: SymbolRange) -> SymbolPattern {
        let (pos, type_a) = match self.dmrs_observed {
            Some(DmrsObservation { symbol_pattern: Some(p), .. }) => return p,
            Some(obs) => (obs.additional_position.unwrap_or(self.dmrs_additional_position), obs.type_a_position),
            None => (self.dmrs_additional_position, Self::DEFAULT_TYPE_A_POSITION),
        };
        dmrs_positions(mapping, range, type_a, pos)
    }
}

// ---------------------------------------------------------------------------
// document traversal

struct Obj<'a> {
    map: &'a Map<String, Value>,
    path: String,
    used: Vec<&'static str>,
}

impl<'a> Obj<'a> {
    fn new(value: &'a Value, path: String) -> Result<Self, ConfigError> {
        match value {
            Value::Object(map) => Ok(Self { map, path, used: Vec::new() }),
            other => Err(ConfigError::MalformedDocument(format!("`{path}` must be an object, found {}", kind(other)))),
        }
    }

    fn child_path(&self, key: &str) -> String {
        format!("{}/{}", self.path, escape(key))
    }

    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.push(key);
        self.map.get(key)
    }

    fn req(&mut self, key: &'static str) -> Result<&'a Value, ConfigError> {
        let path = self.child_path(key);
        self.get(key).ok_or(ConfigError::MissingField(path))
    }

    fn obj(&mut self, key: &'static str) -> Result<Obj<'a>, ConfigError> {
        let path = self.child_path(key);
        Obj::new(self.req(key)?, path)
    }

    fn opt_obj(&mut self, key: &'static str) -> Result<Option<Obj<'a>>, ConfigError> {
        let path = self.child_path(key);
        self.get(key).map(|v| Obj::new(v, path)).transpose()
    }

    fn uint(&mut self, key: &'static str) -> Result<u64, ConfigError> {
        let path = self.child_path(key);
        as_uint(self.req(key)?, &path)
    }

    fn opt_uint(&mut self, key: &'static str) -> Result<Option<u64>, ConfigError> {
        let path = self.child_path(key);
        self.get(key).map(|v| as_uint(v, &path)).transpose()
    }

    fn string(&mut self, key: &'static str) -> Result<&'a str, ConfigError> {
        let path = self.child_path(key);
        as_str(self.req(key)?, &path)
    }

    fn opt_string(&mut self, key: &'static str) -> Result<Option<&'a str>, ConfigError> {
        let path = self.child_path(key);
        self.get(key).map(|v| as_str(v, &path)).transpose()
    }

    fn array(&mut self, key: &'static str) -> Result<&'a [Value], ConfigError> {
        let path = self.child_path(key);
        as_array(self.req(key)?, &path)
    }

    fn opt_array(&mut self, key: &'static str) -> Result<Option<&'a [Value]>, ConfigError> {
        let path = self.child_path(key);
        self.get(key).map(|v| as_array(v, &path)).transpose()
    }

    /// Records every key not consumed so far, relative to `root`.
    fn keep_rest(&self, root: &str, out: &mut Passthrough) {
        for (k, v) in self.map {
            if !self.used.contains(&k.as_str()) {
                let full = self.child_path(k);
                out.insert(full[root.len()..].to_string(), v.clone());
            }
        }
    }

    fn rest(&self) -> Passthrough {
        let mut out = Passthrough::new();
        self.keep_rest(&self.path, &mut out);
        out
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn as_uint(v: &Value, path: &str) -> Result<u64, ConfigError> {
    v.as_u64().ok_or_else(|| invalid(path, v))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| invalid(path, v))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a [Value], ConfigError> {
    match v {
        Value::Array(a) => Ok(a),
        other => Err(ConfigError::MalformedDocument(format!("`{path}` must be an array, found {}", kind(other)))),
    }
}

fn narrow<T: TryFrom<u64>>(v: u64, path: &str) -> Result<T, ConfigError> {
    T::try_from(v).map_err(|_| invalid(path, v))
}

fn escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

fn unescape(token: &str) -> String {
    token.replace("~1", "/").replace("~0", "~")
}

fn insert_pointer(root: &mut Value, pointer: &str, value: Value) {
    let tokens: Vec<String> = pointer.split('/').skip(1).map(unescape).collect();
    let mut cur = root;
    for (i, tok) in tokens.iter().enumerate() {
        let last = i + 1 == tokens.len();
        let index = if cur.is_array() { tok.parse::<usize>().ok() } else { None };
        if let Some(idx) = index {
            let items = cur.as_array_mut().expect("array");
            if idx >= items.len() {
                items.resize(idx + 1, Value::Object(Map::new()));
            }
            if last {
                items[idx] = value;
                return;
            }
            cur = &mut items[idx];
            continue;
        }
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let map = cur.as_object_mut().expect("object");
        if last {
            map.insert(tok.clone(), value);
            return;
        }
        cur = map.entry(tok.clone()).or_insert_with(|| Value::Object(Map::new()));
    }
}

fn parse_json(text: &str) -> Result<Value, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::MalformedDocument(e.to_string()))
}

fn parse_tda_list(items: &[Value], path: &str, offset_key: &'static str) -> Result<Vec<TimeDomainAlloc>, ConfigError> {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let mut o = Obj::new(item, format!("{path}/{i}"))?;
            let slot_offset = narrow(o.opt_uint(offset_key)?.unwrap_or(0), &o.child_path(offset_key))?;
            let mapping_token = o.string("mappingType")?;
            let mapping_type = MappingType::from_token(mapping_token)
                .ok_or_else(|| invalid(o.child_path("mappingType"), mapping_token))?;
            let sliv_path = o.child_path("startSymbolAndLength");
            let sliv = o.uint("startSymbolAndLength")?;
            if sliv_decode(sliv as u32).is_err() || sliv > 127 {
                return Err(invalid(sliv_path, sliv));
            }
            Ok(TimeDomainAlloc { slot_offset, mapping_type, sliv: sliv as u8 })
        })
        .collect()
}

fn tda_value(list: &[TimeDomainAlloc], offset_key: &str) -> Value {
    Value::Array(
        list.iter()
            .map(|t| {
                let mut m = Map::new();
                m.insert(offset_key.into(), json!(t.slot_offset));
                m.insert("mappingType".into(), json!(t.mapping_type.token()));
                m.insert("startSymbolAndLength".into(), json!(t.sliv));
                Value::Object(m)
            })
            .collect(),
    )
}

fn parse_candidates(o: &mut Obj<'_>) -> Result<AggregationCandidates, ConfigError> {
    const KEYS: [&str; 5] = [
        "aggregationLevel1",
        "aggregationLevel2",
        "aggregationLevel4",
        "aggregationLevel8",
        "aggregationLevel16",
    ];
    let mut counts = [0u8; 5];
    for (slot, key) in counts.iter_mut().zip(KEYS) {
        let path = o.child_path(key);
        let token = o.string(key)?;
        *slot = candidate_count(token).ok_or_else(|| invalid(path, token))?;
    }
    Ok(AggregationCandidates(counts))
}

fn candidates_value(c: &AggregationCandidates) -> Value {
    let keys = ["aggregationLevel1", "aggregationLevel2", "aggregationLevel4", "aggregationLevel8", "aggregationLevel16"];
    let mut m = Map::new();
    for (k, n) in keys.iter().zip(c.0) {
        m.insert((*k).into(), json!(format!("n{n}")));
    }
    Value::Object(m)
}

fn parse_search_space(item: &Value, path: String) -> Result<SearchSpaceConfig, ConfigError> {
    let mut o = Obj::new(item, path)?;
    let id = narrow(o.uint("searchSpaceId")?, &o.child_path("searchSpaceId"))?;
    let coreset_id = narrow(o.uint("controlResourceSetId")?, &o.child_path("controlResourceSetId"))?;
    let sym_path = o.child_path("monitoringSymbolsWithinSlot");
    let monitoring_symbols = o.string("monitoringSymbolsWithinSlot")?.to_string();
    if monitoring_symbols.parse::<SymbolPattern>().is_err() {
        return Err(invalid(sym_path, &monitoring_symbols));
    }
    let candidates = parse_candidates(&mut o.obj("nrofCandidates")?)?;
    let mut ty = o.obj("searchSpaceType")?;
    let kind = if ty.opt_obj("common")?.is_some() {
        SearchSpaceType::Common
    } else if let Some(mut ue) = ty.opt_obj("ue-Specific")? {
        let path = ue.child_path("dci-Formats");
        let token = ue.string("dci-Formats")?;
        SearchSpaceType::UeSpecific(DciFormats::from_token(token).ok_or_else(|| invalid(path, token))?)
    } else {
        return Err(ConfigError::MissingField(ty.child_path("common|ue-Specific")));
    };
    Ok(SearchSpaceConfig { id, coreset_id, monitoring_symbols, candidates, kind, extra: o.rest() })
}

fn search_space_value(ss: &SearchSpaceConfig) -> Value {
    let ty = match ss.kind {
        SearchSpaceType::Common => json!({ "common": { "dci-Format0-0-AndFormat1-0": {} } }),
        SearchSpaceType::UeSpecific(f) => json!({ "ue-Specific": { "dci-Formats": f.token() } }),
    };
    let mut v = json!({
        "searchSpaceId": ss.id,
        "controlResourceSetId": ss.coreset_id,
        "monitoringSymbolsWithinSlot": ss.monitoring_symbols,
        "nrofCandidates": candidates_value(&ss.candidates),
        "searchSpaceType": ty,
    });
    for (p, val) in &ss.extra {
        insert_pointer(&mut v, p, val.clone());
    }
    v
}

fn slot_pattern_from_pattern1(mut p1: Obj<'_>, scs: SubcarrierSpacing) -> Result<TddPattern, ConfigError> {
    let per_path = p1.child_path("dl-UL-TransmissionPeriodicity");
    let token = p1.string("dl-UL-TransmissionPeriodicity")?;
    let period_us: u32 = match token {
        "ms0p5" => 500,
        "ms0p625" => 625,
        "ms1" => 1000,
        "ms1p25" => 1250,
        "ms2" => 2000,
        "ms2p5" => 2500,
        "ms5" => 5000,
        "ms10" => 10_000,
        _ => return Err(invalid(per_path, token)),
    };
    let tti = scs.tti_duration_us();
    if period_us % tti != 0 {
        return Err(invalid(per_path, token));
    }
    let slots = (period_us / tti) as u64;
    let dl = p1.uint("nrofDownlinkSlots")?;
    let ul = p1.uint("nrofUplinkSlots")?;
    p1.opt_uint("nrofDownlinkSymbols")?;
    p1.opt_uint("nrofUplinkSymbols")?;
    if dl + ul > slots {
        return Err(invalid(p1.path.clone(), format!("{dl} DL + {ul} UL slots exceed period of {slots}")));
    }
    let mut kinds = vec![SlotKind::Downlink; dl as usize];
    kinds.extend(std::iter::repeat_n(SlotKind::Special, (slots - dl - ul) as usize));
    kinds.extend(std::iter::repeat_n(SlotKind::Uplink, ul as usize));
    Ok(TddPattern(kinds))
}

// ---------------------------------------------------------------------------
// SIB 1

const SIB1_ROOT: &str = "";

pub fn parse_sib1(document: &str) -> Result<CellCommonConfig, ConfigError> {
    let value = parse_json(document)?;
    sib1_from_value(&value)
}

pub fn sib1_from_value(value: &Value) -> Result<CellCommonConfig, ConfigError> {
    let body = match value.get("SIB1") {
        Some(b) => b,
        None => value,
    };
    let mut pass = Passthrough::new();
    let mut sib1 = Obj::new(body, SIB1_ROOT.to_string())?;
    let mut serving = sib1.obj("servingCellConfigCommon")?;
    let mut dl = serving.obj("downlinkConfigCommon")?;
    let mut freq = dl.obj("frequencyInfoDL")?;

    let bands = freq.array("frequencyBandList")?;
    let band_path = format!("{}/frequencyBandList/0", freq.path);
    let mut band_obj = Obj::new(bands.first().ok_or_else(|| ConfigError::MissingField(band_path.clone()))?, band_path)?;
    let band = narrow(band_obj.uint("freqBandIndicatorNR")?, &band_obj.child_path("freqBandIndicatorNR"))?;
    band_obj.keep_rest(SIB1_ROOT, &mut pass);
    for (i, extra) in bands.iter().enumerate().skip(1) {
        pass.insert(format!("{}/frequencyBandList/{i}", freq.path), extra.clone());
    }

    let offset_to_point_a = freq.opt_uint("offsetToPointA")?.map(|v| narrow(v, "/offsetToPointA")).transpose()?;
    let carriers = freq.array("scs-SpecificCarrierList")?;
    let car_path = format!("{}/scs-SpecificCarrierList/0", freq.path);
    let mut carrier = Obj::new(carriers.first().ok_or_else(|| ConfigError::MissingField(car_path.clone()))?, car_path)?;
    let scs_path = carrier.child_path("subcarrierSpacing");
    let scs_token = carrier.string("subcarrierSpacing")?;
    let subcarrier_spacing = SubcarrierSpacing::from_token(scs_token).ok_or_else(|| invalid(scs_path, scs_token))?;
    let bw_path = carrier.child_path("carrierBandwidth");
    let carrier_bandwidth_prb: u16 = narrow(carrier.uint("carrierBandwidth")?, &bw_path)?;
    if carrier_bandwidth_prb == 0 || carrier_bandwidth_prb > 275 {
        return Err(invalid(bw_path, carrier_bandwidth_prb));
    }
    carrier.keep_rest(SIB1_ROOT, &mut pass);
    for (i, extra) in carriers.iter().enumerate().skip(1) {
        pass.insert(format!("{}/scs-SpecificCarrierList/{i}", freq.path), extra.clone());
    }
    freq.keep_rest(SIB1_ROOT, &mut pass);

    let mut coreset0_index = None;
    let mut search_space_zero = None;
    let mut common_search_spaces = Vec::new();
    let mut pdsch_time_domain_list = Vec::new();
    if let Some(mut bwp) = dl.opt_obj("initialDownlinkBWP")? {
        if let Some(mut pdcch) = bwp.opt_obj("pdcch-ConfigCommon")? {
            coreset0_index = pdcch.opt_uint("controlResourceSetZero")?.map(|v| narrow(v, "controlResourceSetZero")).transpose()?;
            search_space_zero = pdcch.opt_uint("searchSpaceZero")?.map(|v| narrow(v, "searchSpaceZero")).transpose()?;
            if let Some(list) = pdcch.opt_array("commonSearchSpaceList")? {
                let base = pdcch.child_path("commonSearchSpaceList");
                common_search_spaces = list
                    .iter()
                    .enumerate()
                    .map(|(i, v)| parse_search_space(v, format!("{base}/{i}")))
                    .collect::<Result<_, _>>()?;
            }
            pdcch.keep_rest(SIB1_ROOT, &mut pass);
        }
        if let Some(mut pdsch) = bwp.opt_obj("pdsch-ConfigCommon")? {
            if let Some(list) = pdsch.opt_array("pdsch-TimeDomainAllocationList")? {
                let base = pdsch.child_path("pdsch-TimeDomainAllocationList");
                pdsch_time_domain_list = parse_tda_list(list, &base, "k0")?;
            }
            pdsch.keep_rest(SIB1_ROOT, &mut pass);
        }
        bwp.keep_rest(SIB1_ROOT, &mut pass);
    }
    dl.keep_rest(SIB1_ROOT, &mut pass);

    let tdd = match serving.opt_obj("tdd-UL-DL-ConfigurationCommon")? {
        None => None,
        Some(mut tdd) => {
            let pattern = if let Some(s) = tdd.opt_string("slotPattern")? {
                s.parse::<TddPattern>().map_err(|e| invalid(tdd.child_path("slotPattern"), e))?
            } else {
                tdd.opt_string("referenceSubcarrierSpacing")?;
                slot_pattern_from_pattern1(tdd.obj("pattern1")?, subcarrier_spacing)?
            };
            Some(pattern)
        }
    };
    serving.keep_rest(SIB1_ROOT, &mut pass);
    sib1.keep_rest(SIB1_ROOT, &mut pass);

    Ok(CellCommonConfig {
        band,
        carrier_bandwidth_prb,
        subcarrier_spacing,
        offset_to_point_a,
        coreset0_index,
        search_space_zero,
        common_search_spaces,
        pdsch_time_domain_list,
        tdd,
        passthrough: pass,
    })
}

/// Writes the config back to the SIB 1 document shape.
pub fn sib1_to_document(cell: &CellCommonConfig) -> Value {
    let mut freq = json!({
        "frequencyBandList": [ { "freqBandIndicatorNR": cell.band } ],
        "scs-SpecificCarrierList": [ {
            "subcarrierSpacing": cell.subcarrier_spacing.token(),
            "carrierBandwidth": cell.carrier_bandwidth_prb,
        } ],
    });
    if let Some(o) = cell.offset_to_point_a {
        freq["offsetToPointA"] = json!(o);
    }
    let mut pdcch = Map::new();
    if let Some(c) = cell.coreset0_index {
        pdcch.insert("controlResourceSetZero".into(), json!(c));
    }
    if let Some(s) = cell.search_space_zero {
        pdcch.insert("searchSpaceZero".into(), json!(s));
    }
    if !cell.common_search_spaces.is_empty() {
        pdcch.insert(
            "commonSearchSpaceList".into(),
            Value::Array(cell.common_search_spaces.iter().map(search_space_value).collect()),
        );
    }
    let mut bwp = Map::new();
    if !pdcch.is_empty() {
        bwp.insert("pdcch-ConfigCommon".into(), Value::Object(pdcch));
    }
    if !cell.pdsch_time_domain_list.is_empty() {
        bwp.insert(
            "pdsch-ConfigCommon".into(),
            json!({ "pdsch-TimeDomainAllocationList": tda_value(&cell.pdsch_time_domain_list, "k0") }),
        );
    }
    let mut dl = json!({ "frequencyInfoDL": freq });
    if !bwp.is_empty() {
        dl["initialDownlinkBWP"] = Value::Object(bwp);
    }
    let mut serving = json!({ "downlinkConfigCommon": dl });
    if let Some(p) = &cell.tdd {
        serving["tdd-UL-DL-ConfigurationCommon"] = json!({ "slotPattern": p.to_string() });
    }
    let mut body = json!({ "servingCellConfigCommon": serving });
    for (p, v) in &cell.passthrough {
        insert_pointer(&mut body, p, v.clone());
    }
    json!({ "SIB1": body })
}

// ---------------------------------------------------------------------------
// MSG 4

const MSG4_ROOT: &str = "";

pub fn parse_msg4(document: &str) -> Result<UeDedicatedConfig, ConfigError> {
    let value = parse_json(document)?;
    msg4_from_value(&value)
}

fn mcs_table_token(token: &str) -> Option<McsTable> {
    match token {
        "qam64" | "64qam" => Some(McsTable::Qam64),
        "qam256" | "256qam" => Some(McsTable::Qam256),
        _ => None,
    }
}

fn xoverhead_token(token: &str) -> Option<u8> {
    match token {
        "xOh0" => Some(0),
        "xOh6" => Some(6),
        "xOh12" => Some(12),
        "xOh18" => Some(18),
        _ => None,
    }
}

fn harq_token(token: &str) -> Option<u8> {
    match token {
        "n2" => Some(2),
        "n4" => Some(4),
        "n6" => Some(6),
        "n8" => Some(8),
        "n10" => Some(10),
        "n12" => Some(12),
        "n16" => Some(16),
        _ => None,
    }
}

pub fn msg4_from_value(value: &Value) -> Result<UeDedicatedConfig, ConfigError> {
    let body = match value.get("RRCSetup") {
        Some(b) => b,
        None if value.get("masterCellGroup").is_some() => value,
        None => return Err(ConfigError::MissingField("/RRCSetup".into())),
    };
    let mut pass = Passthrough::new();
    let mut setup = Obj::new(body, MSG4_ROOT.to_string())?;
    let mut mcg = setup.obj("masterCellGroup")?;
    let mut sp = mcg.obj("spCellConfig")?;
    let mut ded = sp.obj("spCellConfigDedicated")?;
    let mut bwp = ded.obj("initialDownlinkBWP")?;

    // PDCCH
    let mut pdcch = bwp.obj("pdcch-Config")?;
    let cs_base = pdcch.child_path("controlResourceSetToAddModList");
    let coresets = pdcch
        .array("controlResourceSetToAddModList")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut o = Obj::new(v, format!("{cs_base}/{i}"))?;
            let id = narrow(o.uint("controlResourceSetId")?, &o.child_path("controlResourceSetId"))?;
            let dur_path = o.child_path("duration");
            let duration_symbols: u8 = narrow(o.uint("duration")?, &dur_path)?;
            if !(1..=3).contains(&duration_symbols) {
                return Err(invalid(dur_path, duration_symbols));
            }
            Ok(CoresetConfig { id, duration_symbols, extra: o.rest() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ss_base = pdcch.child_path("searchSpacesToAddModList");
    let search_spaces = pdcch
        .array("searchSpacesToAddModList")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_search_space(v, format!("{ss_base}/{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    let ue_ss = search_spaces
        .iter()
        .find(|s| matches!(s.kind, SearchSpaceType::UeSpecific(_)))
        .ok_or_else(|| ConfigError::MissingField(format!("{ss_base}/*/searchSpaceType/ue-Specific")))?;
    let dci_formats = match ue_ss.kind {
        SearchSpaceType::UeSpecific(f) => f,
        SearchSpaceType::Common => unreachable!(),
    };
    let coreset = coresets
        .iter()
        .find(|c| c.id == ue_ss.coreset_id)
        .ok_or_else(|| invalid(format!("{ss_base}/controlResourceSetId"), ue_ss.coreset_id))?;
    let (coreset_id, coreset_duration_symbols, aggregation_candidates) =
        (coreset.id, coreset.duration_symbols, ue_ss.candidates);
    pdcch.keep_rest(MSG4_ROOT, &mut pass);

    // PDSCH
    let mut pdsch = bwp.obj("pdsch-Config")?;
    let mut dmrs_additional_position = DmrsAdditionalPosition::Pos2;
    if let Some(mut dmrs) = pdsch.opt_obj("dmrs-DownlinkForPDSCH-MappingTypeA")? {
        if let Some(tok) = dmrs.opt_string("dmrs-AdditionalPosition")? {
            dmrs_additional_position = DmrsAdditionalPosition::from_token(tok)
                .ok_or_else(|| invalid(dmrs.child_path("dmrs-AdditionalPosition"), tok))?;
        }
        dmrs.keep_rest(MSG4_ROOT, &mut pass);
    }
    let pdsch_time_domain_list = match pdsch.opt_array("pdsch-TimeDomainAllocationList")? {
        Some(list) => parse_tda_list(list, &pdsch.child_path("pdsch-TimeDomainAllocationList"), "k0")?,
        None => Vec::new(),
    };
    let mut mcs_table = McsTable::Qam64;
    if let Some(tok) = pdsch.opt_string("mcs-Table")? {
        mcs_table = mcs_table_token(tok).ok_or_else(|| invalid(pdsch.child_path("mcs-Table"), tok))?;
    }
    pdsch.keep_rest(MSG4_ROOT, &mut pass);
    bwp.keep_rest(MSG4_ROOT, &mut pass);

    // PUSCH
    let mut pusch_time_domain_list = Vec::new();
    if let Some(mut ul) = ded.opt_obj("uplinkConfig")? {
        if let Some(mut ubwp) = ul.opt_obj("initialUplinkBWP")? {
            if let Some(mut pusch) = ubwp.opt_obj("pusch-Config")? {
                if let Some(list) = pusch.opt_array("pusch-TimeDomainAllocationList")? {
                    pusch_time_domain_list =
                        parse_tda_list(list, &pusch.child_path("pusch-TimeDomainAllocationList"), "k2")?;
                }
                pusch.keep_rest(MSG4_ROOT, &mut pass);
            }
            ubwp.keep_rest(MSG4_ROOT, &mut pass);
        }
        ul.keep_rest(MSG4_ROOT, &mut pass);
    }

    // serving cell
    let mut serving = ded.obj("pdsch-ServingCellConfig")?;
    let layers_path = serving.child_path("maxMIMO-Layers");
    let max_mimo_layers: u8 = narrow(serving.opt_uint("maxMIMO-Layers")?.unwrap_or(1), &layers_path)?;
    if !(1..=8).contains(&max_mimo_layers) {
        return Err(invalid(layers_path, max_mimo_layers));
    }
    let mut num_harq_processes = 8;
    if let Some(tok) = serving.opt_string("nrofHARQ-ProcessesForPDSCH")? {
        num_harq_processes = harq_token(tok).ok_or_else(|| invalid(serving.child_path("nrofHARQ-ProcessesForPDSCH"), tok))?;
    }
    let mut xoverhead = 0;
    if let Some(tok) = serving.opt_string("xOverhead")? {
        xoverhead = xoverhead_token(tok).ok_or_else(|| invalid(serving.child_path("xOverhead"), tok))?;
    }
    serving.keep_rest(MSG4_ROOT, &mut pass);
    ded.keep_rest(MSG4_ROOT, &mut pass);
    sp.keep_rest(MSG4_ROOT, &mut pass);
    mcg.keep_rest(MSG4_ROOT, &mut pass);
    setup.keep_rest(MSG4_ROOT, &mut pass);

    // Decoded-grant blocks placed next to the RRC message.
    let mut dmrs_observed = None;
    if let Some(v) = value.get("DMRS") {
        let mut o = Obj::new(v, "/DMRS".into())?;
        let additional_position = match o.opt_uint("add_pos")? {
            Some(i) => Some(DmrsAdditionalPosition::from_index(i).ok_or_else(|| invalid("/DMRS/add_pos", i))?),
            None => None,
        };
        let type_a_position = narrow(o.opt_uint("typeA_pos")?.unwrap_or(2), "/DMRS/typeA_pos")?;
        if !(2..=3).contains(&type_a_position) {
            return Err(invalid("/DMRS/typeA_pos", type_a_position));
        }
        let symbol_pattern = match o.opt_string("symb")? {
            Some(s) => Some(s.parse::<SymbolPattern>().map_err(|e| invalid("/DMRS/symb", e))?),
            None => None,
        };
        dmrs_observed = Some(DmrsObservation { additional_position, type_a_position, symbol_pattern });
    }
    if let Some(v) = value.get("SCH") {
        let mut o = Obj::new(v, "/SCH".into())?;
        if let Some(tok) = o.opt_string("mcs_table")? {
            mcs_table = mcs_table_token(tok).ok_or_else(|| invalid("/SCH/mcs_table", tok))?;
        }
        if let Some(x) = o.opt_uint("xoverhead")? {
            xoverhead = narrow(x, "/SCH/xoverhead")?;
        }
    }

    Ok(UeDedicatedConfig {
        coresets,
        search_spaces,
        coreset_id,
        coreset_duration_symbols,
        aggregation_candidates,
        dci_formats,
        dmrs_additional_position,
        dmrs_observed,
        pdsch_time_domain_list,
        pusch_time_domain_list,
        max_mimo_layers,
        num_harq_processes,
        mcs_table,
        xoverhead,
        passthrough: pass,
    })
}

/// Writes the config back to the MSG 4 document shape, including the
/// `DMRS`/`SCH` blocks when they were present.
pub fn msg4_to_document(ue: &UeDedicatedConfig) -> Value {
    let coresets: Vec<Value> = ue
        .coresets
        .iter()
        .map(|c| {
            let mut v = json!({ "controlResourceSetId": c.id, "duration": c.duration_symbols });
            for (p, val) in &c.extra {
                insert_pointer(&mut v, p, val.clone());
            }
            v
        })
        .collect();
    let mut pdsch = json!({
        "dmrs-DownlinkForPDSCH-MappingTypeA": { "dmrs-AdditionalPosition": ue.dmrs_additional_position.token() },
    });
    if !ue.pdsch_time_domain_list.is_empty() {
        pdsch["pdsch-TimeDomainAllocationList"] = tda_value(&ue.pdsch_time_domain_list, "k0");
    }
    let mut serving = json!({
        "nrofHARQ-ProcessesForPDSCH": format!("n{}", ue.num_harq_processes),
        "maxMIMO-Layers": ue.max_mimo_layers,
    });
    let mut ded = json!({
        "initialDownlinkBWP": {
            "pdcch-Config": {
                "controlResourceSetToAddModList": coresets,
                "searchSpacesToAddModList": ue.search_spaces.iter().map(search_space_value).collect::<Vec<_>>(),
            },
        },
    });
    if !ue.pusch_time_domain_list.is_empty() {
        ded["uplinkConfig"] = json!({
            "initialUplinkBWP": { "pusch-Config": {
                "pusch-TimeDomainAllocationList": tda_value(&ue.pusch_time_domain_list, "k2"),
            } },
        });
    }
    let sch = if ue.dmrs_observed.is_some() {
        Some(json!({
            "mcs_table": match ue.mcs_table { McsTable::Qam64 => "64qam", McsTable::Qam256 => "256qam" },
            "xoverhead": ue.xoverhead,
        }))
    } else {
        if ue.mcs_table == McsTable::Qam256 {
            pdsch["mcs-Table"] = json!("qam256");
        }
        if ue.xoverhead != 0 {
            serving["xOverhead"] = json!(format!("xOh{}", ue.xoverhead));
        }
        None
    };
    ded["initialDownlinkBWP"]["pdsch-Config"] = pdsch;
    ded["pdsch-ServingCellConfig"] = serving;
    let mut body = json!({ "masterCellGroup": { "spCellConfig": { "spCellConfigDedicated": ded } } });
    for (p, v) in &ue.passthrough {
        insert_pointer(&mut body, p, v.clone());
    }
    let mut doc = json!({ "RRCSetup": body });
    if let Some(obs) = ue.dmrs_observed {
        let mut d = json!({ "typeA_pos": obs.type_a_position });
        if let Some(p) = obs.additional_position {
            d["add_pos"] = json!(p.index());
        }
        if let Some(p) = obs.symbol_pattern {
            d["symb"] = json!(p.to_string());
        }
        doc["DMRS"] = d;
    }
    if let Some(sch) = sch {
        doc["SCH"] = sch;
    }
    doc
}

/// Either kind of RRC document, detected from its top-level key.
#[derive(Debug, Clone, PartialEq)]
pub enum RrcDocument {
    Sib1(CellCommonConfig),
    Msg4(Box<UeDedicatedConfig>),
}

pub fn parse_document(text: &str) -> Result<RrcDocument, ConfigError> {
    let value = parse_json(text)?;
    if value.get("RRCSetup").is_some() || value.get("masterCellGroup").is_some() {
        msg4_from_value(&value).map(|c| RrcDocument::Msg4(Box::new(c)))
    } else {
        sib1_from_value(&value).map(RrcDocument::Sib1)
    }
}
