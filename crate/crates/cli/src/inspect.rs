use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use num_rational::Ratio;
use serde_json::json;

use ranscope::dci::listing::parse_listing;
use ranscope::dci::mcs::{mcs_lookup, McsTable};
use ranscope::dci::grant::dci_to_grant;
use ranscope::rrc::{parse_document, parse_msg4, parse_sib1, RrcDocument};
use ranscope::sim::{BUNDLED_MSG4, BUNDLED_SIB1};
use ranscope::tbs::{compute_n_info, compute_tbs_detail, count_re, ReCountInputs, TbsOptions};

#[derive(Args)]
pub struct ParseConfigArgs {
    /// A SIB 1 or MSG 4 document.
    path: PathBuf,
    /// Print the typed configuration as JSON.
    #[arg(long)]
    json: bool,
}

pub fn parse_config(a: ParseConfigArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.path).with_context(|| format!("reading {}", a.path.display()))?;
    let doc = parse_document(&text).with_context(|| format!("parsing {}", a.path.display()))?;
    match doc {
        RrcDocument::Sib1(c) if a.json => println!("{}", serde_json::to_string_pretty(&json!({ "sib1": c }))?),
        RrcDocument::Msg4(u) if a.json => println!("{}", serde_json::to_string_pretty(&json!({ "msg4": u }))?),
        RrcDocument::Sib1(c) => {
            println!("SIB 1");
            println!("  band n{}, {} PRB, {} kHz, TTI {} us", c.band, c.carrier_bandwidth_prb, c.subcarrier_spacing.khz(), c.subcarrier_spacing.tti_duration_us());
            match &c.tdd {
                Some(p) => println!("  TDD pattern {p}"),
                None => println!("  FDD"),
            }
            println!("  {} common search spaces, {} PDSCH time-domain entries", c.common_search_spaces.len(), c.pdsch_time_domain_list.len());
        }
        RrcDocument::Msg4(u) => {
            println!("MSG 4");
            println!("  CORESET {} ({} symbols), DCI formats {:?}", u.coreset_id, u.coreset_duration_symbols, u.dci_formats);
            println!("  aggregation candidates {:?}", u.aggregation_candidates.0);
            println!("  MCS table {}, {} layers, {} HARQ processes, xOverhead {}", u.mcs_table, u.max_mimo_layers, u.num_harq_processes, u.xoverhead);
            println!("  DMRS additional position {:?}", u.dmrs_additional_position);
            println!("  {} PDSCH / {} PUSCH time-domain entries", u.pdsch_time_domain_list.len(), u.pusch_time_domain_list.len());
        }
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Qam64,
    Qam256,
}

impl From<TableArg> for McsTable {
    fn from(t: TableArg) -> Self {
        match t {
            TableArg::Qam64 => McsTable::Qam64,
            TableArg::Qam256 => McsTable::Qam256,
        }
    }
}

#[derive(Args)]
pub struct TbsArgs {
    /// Information bits, as an integer, fraction (`6399/2`) or decimal.
    #[arg(long, requires = "code_rate", conflicts_with_all = ["prb", "dci"])]
    n_info: Option<String>,
    /// Code rate, as a fraction (`948/1024`) or decimal.
    #[arg(long)]
    code_rate: Option<String>,

    #[arg(long, requires_all = ["symbols", "mcs"], conflicts_with = "dci")]
    prb: Option<u32>,
    #[arg(long)]
    symbols: Option<u32>,
    #[arg(long, default_value_t = 12)]
    dmrs_re: u32,
    #[arg(long, default_value_t = 0)]
    overhead: u32,
    #[arg(long)]
    mcs: Option<u8>,
    #[arg(long, value_enum, default_value = "qam256")]
    table: TableArg,
    #[arg(long, default_value_t = 1)]
    layers: u8,

    /// A DCI listing (`rnti=0x4296, format=1_1, ...`) translated to a grant.
    #[arg(long)]
    dci: Option<PathBuf>,
    /// SIB 1 for `--dci`; the bundled one when omitted.
    #[arg(long)]
    cell_config: Option<PathBuf>,
    /// MSG 4 for `--dci`; the bundled one when omitted.
    #[arg(long)]
    ue_config: Option<PathBuf>,

    /// Use 3814 as the low-rate code-block divisor.
    #[arg(long)]
    legacy_divisor: bool,
    /// Count one CRC per code block inside the segmentation ceiling.
    #[arg(long)]
    block_crc_in_ceiling: bool,
    #[arg(long)]
    json: bool,
}

/// Integers, `p/q` fractions and finite decimals, all exact.
pub fn parse_ratio(s: &str) -> Result<Ratio<i64>> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let (p, q): (i64, i64) = (p.trim().parse()?, q.trim().parse()?);
        if q == 0 {
            bail!("zero denominator in `{s}`");
        }
        return Ok(Ratio::new(p, q));
    }
    match s.split_once('.') {
        None => Ok(Ratio::from_integer(s.parse()?)),
        Some((int, frac)) => {
            if frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                bail!("unsupported decimal `{s}`");
            }
            let den = 10i64.pow(frac.len() as u32);
            let whole: i64 = if int.is_empty() || int == "-" { 0 } else { int.parse()? };
            let f: i64 = if frac.is_empty() { 0 } else { frac.parse()? };
            let signed = if int.starts_with('-') { whole * den - f } else { whole * den + f };
            Ok(Ratio::new(signed, den))
        }
    }
}

pub fn tbs(a: TbsArgs) -> Result<()> {
    let opts = TbsOptions { legacy_divisor: a.legacy_divisor, block_crc_in_ceiling: a.block_crc_in_ceiling };
    let (n_info, rate, context) = if let Some(n) = &a.n_info {
        let rate = parse_ratio(a.code_rate.as_deref().expect("clap requires code_rate"))?;
        (parse_ratio(n)?, rate, json!({}))
    } else if let Some(prb) = a.prb {
        let entry = mcs_lookup(a.mcs.expect("clap requires mcs"), a.table.into())?;
        let re = ReCountInputs { n_prb: prb, num_symbols: a.symbols.expect("clap requires symbols"), dmrs_re_per_prb: a.dmrs_re, overhead: a.overhead };
        let n_re = count_re(&re)?;
        let info = compute_n_info(n_re, entry.code_rate(), entry.modulation_order, a.layers);
        (info, entry.code_rate(), json!({ "n_re": n_re, "qm": entry.modulation_order, "code_rate_x2048": entry.code_rate_x2048 }))
    } else if let Some(path) = &a.dci {
        let listing = parse_listing(&std::fs::read_to_string(path)?)?;
        let cell = match &a.cell_config {
            Some(p) => parse_sib1(&std::fs::read_to_string(p)?)?,
            None => parse_sib1(BUNDLED_SIB1)?,
        };
        let ue = match &a.ue_config {
            Some(p) => parse_msg4(&std::fs::read_to_string(p)?)?,
            None => parse_msg4(BUNDLED_MSG4)?,
        };
        let g = dci_to_grant(&listing.dci, &cell, &ue, listing.rnti)?;
        let info = compute_n_info(g.n_re, g.code_rate(), g.modulation_order, g.num_layers);
        (info, g.code_rate(), serde_json::to_value(g)?)
    } else {
        bail!("give --n-info with --code-rate, a grant (--prb --symbols --mcs), or --dci");
    };
    let d = compute_tbs_detail(n_info, rate, opts)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&json!({ "n_info": n_info.to_string(), "code_rate": rate.to_string(), "detail": d, "input": context }))?);
        return Ok(());
    }
    if let Some(obj) = context.as_object() {
        for (k, v) in obj {
            println!("{k:>18}: {v}");
        }
    }
    println!("{:>18}: {} ({:.3})", "n_info", n_info, *n_info.numer() as f64 / *n_info.denom() as f64);
    println!("{:>18}: {rate}", "code_rate");
    println!("{:>18}: {}", "n", d.n);
    println!("{:>18}: {}", "n_info_prime", d.n_info_prime);
    if let Some(c) = d.code_blocks {
        println!("{:>18}: {c}", "code_blocks");
    }
    println!("{:>18}: {}", "path", if d.from_table { "table" } else { "formula" });
    println!("{:>18}: {}", "tbs", d.tbs);
    Ok(())
}
