use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{bits_per_byte, EvalError};
use crate::corpus::RawDocument;
use crate::engine::{DocumentSelector, Engine, RandomSelector, Retriever};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    Random,
    Replug,
    Lsr,
}

impl AblationMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Replug => "replug",
            Self::Lsr => "lsr",
        }
    }
}

impl FromStr for AblationMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "random" => Ok(Self::Random),
            "replug" => Ok(Self::Replug),
            "lsr" => Ok(Self::Lsr),
            other => Err(EvalError::Config(format!("unknown ablation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub k: usize,
    pub bpb: f64,
}

fn need<'r>(r: Option<&'r Retriever>, what: &str) -> Result<&'r Retriever, EvalError> {
    r.ok_or_else(|| EvalError::Config(format!("{what} retriever checkpoint required")))
}

/// BPB for every `(mode, k)`. `random` samples documents uniformly with
/// `seed` and weights them with the untrained retriever; `replug` retrieves
/// with the untrained retriever and `lsr` with the trained one.
pub fn ablation_sweep(
    engine: &Engine,
    untrained: Option<&Retriever>,
    trained: Option<&Retriever>,
    docs: &[RawDocument],
    k_values: &[usize],
    modes: &[AblationMode],
    seed: u64,
) -> Result<Vec<AblationRow>, EvalError> {
    let mut rows = Vec::with_capacity(modes.len() * k_values.len());
    for &mode in modes {
        let random;
        let selector: &dyn DocumentSelector = match mode {
            AblationMode::Random => {
                random = RandomSelector { retriever: need(untrained, "untrained")?, seed };
                &random
            }
            AblationMode::Replug => need(untrained, "untrained")?,
            AblationMode::Lsr => need(trained, "trained (lsr)")?,
        };
        for &k in k_values {
            let config = serde_json::json!({"mode": mode.name(), "k": k, "seed": seed});
            let report = bits_per_byte(engine, Some(selector), docs, k, &config)?;
            log::info!("{} k={k}: {:.6} bpb", mode.name(), report.metric_value);
            rows.push(AblationRow { mode, k, bpb: report.metric_value });
        }
    }
    Ok(rows)
}

/// CSV with header `mode,k,bpb`.
pub fn write_ablation_csv<W: Write>(mut out: W, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(out, "mode,k,bpb")?;
    for r in rows {
        writeln!(out, "{},{},{:.9}", r.mode.name(), r.k, r.bpb)?;
    }
    Ok(())
}
