//! Metrics records, CSV / JSON Lines export and the analytic complexity
//! models of the compared protocols.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Hashing;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    SingleCore,
    #[serde(rename = "TMR")]
    Tmr,
    #[serde(rename = "TMR_HWH")]
    TmrHwh,
    HQuorum,
    #[serde(rename = "HQuorum_HWH")]
    HQuorumHwh,
    #[serde(rename = "HQuorum_SWH")]
    HQuorumSwh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Single,
    Tmr,
    HQuorum,
}

impl Protocol {
    pub const ALL: [Protocol; 6] =
        [Protocol::SingleCore, Protocol::Tmr, Protocol::TmrHwh, Protocol::HQuorum, Protocol::HQuorumHwh, Protocol::HQuorumSwh];

    pub fn hquorum(h: Hashing) -> Protocol {
        match h {
            Hashing::Disabled => Protocol::HQuorum,
            Hashing::Hardware => Protocol::HQuorumHwh,
            Hashing::Software => Protocol::HQuorumSwh,
        }
    }

    pub fn family(self) -> Family {
        match self {
            Protocol::SingleCore => Family::Single,
            Protocol::Tmr | Protocol::TmrHwh => Family::Tmr,
            _ => Family::HQuorum,
        }
    }

    pub fn hashing(self) -> Hashing {
        match self {
            Protocol::TmrHwh | Protocol::HQuorumHwh => Hashing::Hardware,
            Protocol::HQuorumSwh => Hashing::Software,
            _ => Hashing::Disabled,
        }
    }

    /// Communication steps of one fault-free request.
    pub fn steps(self) -> u64 {
        match self.family() {
            Family::Tmr => 1,
            Family::Single | Family::HQuorum => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::SingleCore => "SingleCore",
            Protocol::Tmr => "TMR",
            Protocol::TmrHwh => "TMR_HWH",
            Protocol::HQuorum => "HQuorum",
            Protocol::HQuorumHwh => "HQuorum_HWH",
            Protocol::HQuorumSwh => "HQuorum_SWH",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Protocol::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown protocol {s:?}"))
    }
}

/// One row of the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scenario: String,
    pub protocol: Protocol,
    pub n: u16,
    pub f: u16,
    pub submitted: u64,
    pub delivered: u64,
    pub full_match: u64,
    pub partial_rejuv: u64,
    pub full_rejuv: u64,
    pub steps_per_req: f64,
    pub msgs_per_req: f64,
    pub cycles_total: u64,
    pub cycles_per_req: f64,
    pub rejuv_count: u64,
    pub rejuv_cycles: u64,
    pub violations: u64,
}

pub const CSV_HEADER: [&str; 16] = [
    "scenario",
    "protocol",
    "n",
    "f",
    "submitted",
    "delivered",
    "full_match",
    "partial_rejuv",
    "full_rejuv",
    "steps_per_req",
    "msgs_per_req",
    "cycles_total",
    "cycles_per_req",
    "rejuv_count",
    "rejuv_cycles",
    "violations",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Serializes records; the CSV header is always written.
pub fn export<W: Write>(records: &[MetricsRecord], format: Format, out: W) -> Result<(), ExportError> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_HEADER)?;
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Jsonl => {
            let mut out = out;
            for r in records {
                serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

pub fn export_bytes(records: &[MetricsRecord], format: Format) -> Vec<u8> {
    let mut buf = Vec::new();
    export(records, format, &mut buf).expect("in-memory export");
    buf
}

pub fn parse_jsonl(text: &str) -> Result<Vec<MetricsRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRecord>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Analytic {
    Tmr,
    HQuorum,
    IBft,
    MinBft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    Linear,
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticModel {
    pub steps: u64,
    /// Exact messages per request under this crate's counting rules.
    pub messages: u64,
    pub order: Order,
}

/// Step count and message polynomial per protocol.
///
/// TMR: n (one input to each replica; the voter reads wires).
/// H-Quorum: one broadcast write plus n replies.
/// iBFT: pre-prepare and round-change bookkeeping aside, prepare and commit
/// are all-to-all: 2n².
/// MinBFT: prepare from the primary (n) plus an all-to-all commit (n²).
pub fn analytic_model(p: Analytic, n: u64) -> AnalyticModel {
    match p {
        Analytic::Tmr => AnalyticModel { steps: 1, messages: n, order: Order::Linear },
        Analytic::HQuorum => AnalyticModel { steps: 2, messages: n + 1, order: Order::Linear },
        Analytic::IBft => AnalyticModel { steps: 5, messages: 2 * n * n, order: Order::Quadratic },
        Analytic::MinBft => AnalyticModel { steps: 4, messages: n * n + n, order: Order::Quadratic },
    }
}

/// iBFT cycles per request derived from the calibrated model: the hashed
/// H-Quorum round plus the published hashed gap.
pub const IBFT_GAP_HASHED: u64 = 3241;
/// The same anchor measured against the unhashed round.
pub const IBFT_GAP_UNHASHED: u64 = 4834;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub ibft_from_hashed: f64,
    pub ibft_from_unhashed: f64,
    /// Relative speed-up of hashed H-Quorum over iBFT.
    pub speedup_hashed: f64,
    pub speedup_unhashed: f64,
}

pub fn anchors(hquorum_hwh_cycles: f64, hquorum_cycles: f64) -> Anchors {
    let a = hquorum_hwh_cycles + IBFT_GAP_HASHED as f64;
    let b = hquorum_cycles + IBFT_GAP_UNHASHED as f64;
    Anchors {
        ibft_from_hashed: a,
        ibft_from_unhashed: b,
        speedup_hashed: (a - hquorum_hwh_cycles) / a,
        speedup_unhashed: (a - hquorum_cycles) / a,
    }
}

/// Coefficient of determination of the least-squares line through `pts`.
pub fn linear_r2(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    let slope = sxy / sxx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - (my + slope * (p.0 - mx))).powi(2)).sum();
    1.0 - ss_res / syy
}
