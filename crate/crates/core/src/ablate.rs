//! Ansatz and band ablation suites.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{make_splits, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::features::Band;
use crate::par::Exec;
use crate::train::{train_on_splits, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ansatz {
    NoQuantum,
    MonoRy,
    MonoBellman,
    MonoRealamp,
    BandSpecific,
}

impl Ansatz {
    pub const ALL: [Ansatz; 5] =
        [Ansatz::NoQuantum, Ansatz::MonoRy, Ansatz::MonoBellman, Ansatz::MonoRealamp, Ansatz::BandSpecific];

    pub fn name(self) -> &'static str {
        match self {
            Ansatz::NoQuantum => "no-quantum",
            Ansatz::MonoRy => "mono-ry",
            Ansatz::MonoBellman => "mono-bellman",
            Ansatz::MonoRealamp => "mono-realamp",
            Ansatz::BandSpecific => "band-specific",
        }
    }

    /// The base config with this ansatz swapped in. `BandSpecific` returns
    /// the base unchanged.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Ansatz::NoQuantum => c.no_quantum = true,
            Ansatz::BandSpecific => {}
            mono => c.assignment = mono.name().to_string(),
        }
        c
    }
}

impl fmt::Display for Ansatz {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ansatz {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ansatz::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Unknown { kind: "ansatz", name: s.to_string() })
    }
}

/// The nine additive band configurations: RGB, RGB plus one index, RGB plus
/// two, the three engineered channels alone, and all six.
pub fn band_suite() -> Vec<Vec<Band>> {
    use Band::*;
    vec![
        vec![R, G, B],
        vec![R, G, B, Evi],
        vec![R, G, B, Ndvi],
        vec![R, G, B, Entropy],
        vec![R, G, B, Evi, Ndvi],
        vec![R, G, B, Evi, Entropy],
        vec![R, G, B, Ndvi, Entropy],
        vec![Evi, Ndvi, Entropy],
        vec![R, G, B, Evi, Ndvi, Entropy],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub bands: Vec<Band>,
    /// Aggregated feature width.
    pub channels: usize,
    /// Test-split report of the best checkpoint.
    pub report: EvalReport,
}

fn run(name: String, config: &TrainConfig, dataset: &Dataset, exec: Exec) -> Result<AblationRow> {
    let splits = make_splits(&dataset.labels(), dataset.num_classes(), config.split, config.seed)?;
    let test = splits.test.clone();
    if test.is_empty() {
        return Err(Error::invalid("ablation needs a non-empty test split"));
    }
    let out = train_on_splits(config, dataset, splits, exec)?;
    let report = evaluate(&out.best, dataset, &test)?;
    Ok(AblationRow {
        name,
        bands: out.best.config.bands.iter().map(|b| b.band).collect(),
        channels: out.best.config.channels(),
        report,
    })
}

pub fn run_ansatz(base: &TrainConfig, ansatz: Ansatz, dataset: &Dataset, exec: Exec) -> Result<AblationRow> {
    run(ansatz.name().to_string(), &ansatz.apply(base), dataset, exec)
}

pub fn ansatz_suite(base: &TrainConfig, dataset: &Dataset, exec: Exec) -> Result<Vec<AblationRow>> {
    Ansatz::ALL.iter().map(|&a| run_ansatz(base, a, dataset, exec)).collect()
}

/// Trains with only the given bands.
pub fn run_bands(base: &TrainConfig, bands: &[Band], dataset: &Dataset, exec: Exec) -> Result<AblationRow> {
    if bands.is_empty() {
        return Err(Error::invalid("band subset is empty"));
    }
    let mut sorted = bands.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut c = base.clone();
    c.bands = Some(sorted.clone());
    let name = sorted.iter().map(|b| b.name()).collect::<Vec<_>>().join("+");
    run(name, &c, dataset, exec)
}

pub fn band_study(base: &TrainConfig, dataset: &Dataset, exec: Exec) -> Result<Vec<AblationRow>> {
    band_suite().iter().map(|b| run_bands(base, b, dataset, exec)).collect()
}

/// Plain-text table, one row per configuration.
pub fn summary_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
    let mut s = format!(
        "{:<width$}  {:>8}  {:>8}  {:>9}  {:>8}  {:>8}\n",
        "config", "channels", "accuracy", "precision", "recall", "f1"
    );
    for r in rows {
        writeln!(
            s,
            "{:<width$}  {:>8}  {:>8.4}  {:>9.4}  {:>8.4}  {:>8.4}",
            r.name, r.channels, r.report.accuracy, r.report.macro_precision, r.report.macro_recall, r.report.macro_f1
        )
        .expect("writing to a String");
    }
    s
}
