//! Reader for human-readable DCI listings such as
//!
//! ```text
//! DCI:
//!     c-rnti=0x4296,
//!     dci=1_1,
//!     f_alloc=0x33,
//!     mcs=27,
//!     ...
//! ```
//!
//! Keys outside the canonical record are kept as strings.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{Dci, DciFormat, Rnti};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ListingError {
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("bad value for `{key}`: {value}")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DciListing {
    pub rnti: Rnti,
    pub dci: Dci,
    pub extra: BTreeMap<String, String>,
}

fn number(key: &str, value: &str) -> Result<u32, ListingError> {
    let parsed = match value.strip_prefix("0x").or_else(|| value.strip_prefix("0X")) {
        Some(h) => u32::from_str_radix(h, 16),
        None => value.parse(),
    };
    parsed.map_err(|_| ListingError::BadValue { key: key.into(), value: value.into() })
}

pub fn parse_listing(text: &str) -> Result<DciListing, ListingError> {
    let mut kv = BTreeMap::new();
    for tok in text.split([',', '\n']) {
        let tok = tok.trim();
        if let Some((k, v)) = tok.split_once('=') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let mut take = |key: &'static str| kv.remove(key).ok_or(ListingError::MissingKey(key));
    let rnti_raw = take("c-rnti")?;
    let rnti = Rnti(number("c-rnti", &rnti_raw)?.try_into().map_err(|_| ListingError::BadValue {
        key: "c-rnti".into(),
        value: rnti_raw.clone(),
    })?);
    let fmt_raw = take("dci")?;
    let format = DciFormat::from_token(&fmt_raw).ok_or(ListingError::BadValue { key: "dci".into(), value: fmt_raw })?;
    let mut field = |key: &'static str| -> Result<u32, ListingError> { number(key, &take(key)?) };
    let dci = Dci {
        format,
        freq_riv: field("f_alloc")? as u16,
        time_index: field("t_alloc")? as u8,
        mcs: field("mcs")? as u8,
        ndi: field("ndi")? as u8,
        rv: field("rv")? as u8,
        harq_id: field("harq_id")? as u8,
        dai: field("dai")? as u8,
        tpc: field("tpc")? as u8,
        harq_feedback: field("harq_feedback")? as u8,
        ports: field("ports")? as u8,
        srs_request: field("srs_request")? as u8,
        dmrs_id: field("dmrs_id")? as u8,
    };
    Ok(DciListing { rnti, dci, extra: kv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dci::tests::worked_dci;

    #[test]
    fn worked_dci_listing() {
        let l = parse_listing(include_str!("../../fixtures/worked_dci.txt")).unwrap();
        assert_eq!(l.rnti, Rnti(0x4296));
        assert_eq!(l.dci, worked_dci());
        assert_eq!(l.extra.get("cce").map(String::as_str), Some("7"));
    }

    #[test]
    fn missing_key() {
        assert_eq!(parse_listing("c-rnti=0x1, dci=1_1"), Err(ListingError::MissingKey("f_alloc")));
        assert!(matches!(parse_listing("c-rnti=0x1, dci=2_2"), Err(ListingError::BadValue { .. })));
    }
}
