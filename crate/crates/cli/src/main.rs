//! `qmcnet` command-line interface.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use qmcnet_core::ablate::{self, Ansatz};
use qmcnet_core::data::{make_splits, read_qsat, synth_dataset_with, write_qsat, Dataset, QsatReader, Splits};
use qmcnet_core::design::{design_circuit, instantiate, preset, CircuitSpec, RubricThresholds, DEFAULT_MAX_QUBITS};
use qmcnet_core::eval::{evaluate, EvalReport};
use qmcnet_core::features::Band;
use qmcnet_core::metrics::{band_metrics, mean_metrics, BandMetrics};
use qmcnet_core::model::{load_checkpoint, save_checkpoint};
use qmcnet_core::par::{self, Exec};
use qmcnet_core::qasm::{export, Binding, ExportFormat};
use qmcnet_core::train::{log_csv, plot_csv, train, TrainConfig};

/// Images processed per parallel chunk when streaming metrics.
const METRICS_CHUNK: usize = 256;

#[derive(Debug, Parser, Serialize)]
#[command(name = "qmcnet", version, about = "Band-specific hybrid quantum-classical image classifier")]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Per-band complexity metrics of a dataset as JSON.
    Metrics {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Circuit specs from a metrics file.
    Design {
        /// A metrics report (band -> metrics) or a single metrics object.
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_QUBITS)]
        max_qubits: usize,
        /// Rubric thresholds as JSON; defaults otherwise.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write the log, splits and best checkpoint.
    Train {
        /// Training config as JSON; unspecified fields come from --base.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Base::Desk)]
        base: Base,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write loss and accuracy curves as CSV.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split file written by `train`; required unless --split all.
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitName::All)]
        split: SplitName,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ansatz or band ablation.
    Ablate {
        #[arg(long, value_enum)]
        mode: AblateMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Base::Desk)]
        base: Base,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// One ansatz instead of the whole suite (ansatz mode).
        #[arg(long)]
        ansatz: Option<String>,
        /// Comma-separated band subset instead of the whole suite (bands mode).
        #[arg(long, value_delimiter = ',')]
        bands: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic six-band dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 600)]
        samples: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
    },
    /// Export a circuit as text.
    ExportCircuit {
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        preset: Option<String>,
        /// A circuit spec JSON, instantiated with the standard template.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "qasm2")]
        format: String,
        /// JSON `{"params": [...], "features": [...]}`; symbolic otherwise.
        #[arg(long)]
        bind: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Base {
    Desk,
    Full,
    Sat6,
}

impl Base {
    fn config(self) -> TrainConfig {
        match self {
            Base::Desk => TrainConfig::desk(),
            Base::Full => TrainConfig::full(),
            Base::Sat6 => TrainConfig::sat6(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SplitName {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum AblateMode {
    Ansatz,
    Bands,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundValues {
    params: Vec<f64>,
    features: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MetricsInput {
    One(BandMetrics),
    Report(BTreeMap<String, BandMetrics>),
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    emit(path, &text)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn echo(cli: &Cli, resolved: serde_json::Value, seed: Option<u64>) {
    let threads = std::env::var("QMC_THREADS").ok();
    eprintln!(
        "{}",
        json!({ "args": cli, "resolved": resolved, "seed": seed, "qmc_threads": threads })
    );
}

fn load_train_config(config: Option<&Path>, base: Base, seed: Option<u64>) -> Result<TrainConfig> {
    let mut c = match config {
        Some(p) => {
            let mut v: serde_json::Value = read_json(p)?;
            let fallback = serde_json::to_value(base.config())?;
            let (Some(obj), serde_json::Value::Object(defaults)) = (v.as_object_mut(), fallback) else {
                bail!("{} must hold a JSON object", p.display());
            };
            for (k, d) in defaults {
                obj.entry(k).or_insert(d);
            }
            serde_json::from_value(v).with_context(|| format!("parsing {}", p.display()))?
        }
        None => base.config(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn cmd_metrics(data: &Path, out: Option<&Path>, exec: Exec) -> Result<()> {
    let mut reader = QsatReader::open(data).with_context(|| format!("opening {}", data.display()))?;
    let count = reader.header().count;
    let mut per_band: Vec<Vec<BandMetrics>> = vec![Vec::with_capacity(count); Band::ALL.len()];
    loop {
        let chunk = reader.by_ref().take(METRICS_CHUNK).collect::<qmcnet_core::Result<Vec<_>>>()?;
        if chunk.is_empty() {
            break;
        }
        let rows = par::try_map_range(exec, chunk.len(), |i| {
            Band::ALL.iter().map(|&b| band_metrics(chunk[i].band(b))).collect::<qmcnet_core::Result<Vec<_>>>()
        })?;
        for row in rows {
            for (acc, m) in per_band.iter_mut().zip(row) {
                acc.push(m);
            }
        }
    }
    let report: BTreeMap<&str, BandMetrics> =
        Band::ALL.iter().zip(&per_band).map(|(b, ms)| (b.name(), mean_metrics(ms))).collect();
    write_json(out, &report)
}

fn cmd_design(metrics: &Path, max_q: usize, t: &RubricThresholds, out: Option<&Path>) -> Result<()> {
    t.validate()?;
    if max_q == 0 {
        bail!("--max-qubits must be positive");
    }
    match read_json::<MetricsInput>(metrics)? {
        MetricsInput::One(m) => write_json(out, &design_circuit(&m, t, max_q)),
        MetricsInput::Report(report) => {
            let specs = report
                .iter()
                .map(|(name, m)| Ok((name.parse::<Band>()?.name(), design_circuit(m, t, max_q))))
                .collect::<Result<BTreeMap<_, _>>>()?;
            write_json(out, &specs)
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_qsat(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn cmd_train(config: &TrainConfig, data: &Path, out: &Path, plot: Option<&Path>, exec: Exec) -> Result<()> {
    let dataset = load_dataset(data)?;
    let outcome = train(config, &dataset, exec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("log.csv"), log_csv(&outcome.log))?;
    write_json(Some(&out.join("splits.json")), &outcome.splits)?;
    write_json(Some(&out.join("config.json")), config)?;
    save_checkpoint(&outcome.best, config.seed, outcome.best_step, &out.join("checkpoint"))?;
    if let Some(p) = plot {
        fs::write(p, plot_csv(&outcome)).with_context(|| format!("writing {}", p.display()))?;
    }
    let summary = if outcome.splits.test.is_empty() {
        json!({ "best_epoch": outcome.best_epoch })
    } else {
        let report = evaluate(&outcome.best, &dataset, &outcome.splits.test)?;
        write_json(Some(&out.join("test_report.json")), &report)?;
        json!({ "best_epoch": outcome.best_epoch, "test_accuracy": report.accuracy })
    };
    eprintln!("{summary}");
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data: &Path, splits: Option<&Path>, split: SplitName) -> Result<EvalReport> {
    let (model, _) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let dataset = load_dataset(data)?;
    let indices = match (split, splits) {
        (SplitName::All, _) => (0..dataset.len()).collect(),
        (_, None) => bail!("--split {split:?} needs --splits"),
        (s, Some(p)) => {
            let sp: Splits = read_json(p)?;
            match s {
                SplitName::Train => sp.train,
                SplitName::Val => sp.val,
                _ => sp.test,
            }
        }
    };
    if let Some(&i) = indices.iter().find(|&&i| i >= dataset.len()) {
        bail!("split index {i} out of range for {} samples", dataset.len());
    }
    Ok(evaluate(&model.with_exec(Exec::default()), &dataset, &indices)?)
}

fn cmd_ablate(
    mode: AblateMode,
    config: &TrainConfig,
    data: &Path,
    ansatz: Option<&str>,
    bands: Option<&[String]>,
    exec: Exec,
) -> Result<Vec<ablate::AblationRow>> {
    let dataset = load_dataset(data)?;
    // fail fast on a split that cannot hold out a test set
    make_splits(&dataset.labels(), dataset.num_classes(), config.split, config.seed)?;
    Ok(match mode {
        AblateMode::Ansatz => match ansatz {
            Some(a) => vec![ablate::run_ansatz(config, a.parse::<Ansatz>()?, &dataset, exec)?],
            None => ablate::ansatz_suite(config, &dataset, exec)?,
        },
        AblateMode::Bands => match bands {
            Some(names) => {
                let bands = names.iter().map(|n| n.parse::<Band>()).collect::<qmcnet_core::Result<Vec<_>>>()?;
                vec![ablate::run_bands(config, &bands, &dataset, exec)?]
            }
            None => ablate::band_study(config, &dataset, exec)?,
        },
    })
}

fn cmd_export(
    preset_name: Option<&str>,
    spec: Option<&Path>,
    format: &str,
    bind: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let format: ExportFormat = format.parse()?;
    let circuit = match (preset_name, spec) {
        (Some(name), _) => preset(name)?,
        (None, Some(p)) => {
            let s: CircuitSpec = read_json(p)?;
            instantiate(&s)?
        }
        (None, None) => bail!("one of --preset or --spec is required"),
    };
    let values: Option<BoundValues> = bind.map(read_json).transpose()?;
    let binding = match &values {
        Some(v) => Binding::Bound { params: &v.params, features: &v.features },
        None => Binding::Symbolic,
    };
    emit(out, &export(&circuit, format, binding)?)
}

fn run(cli: &Cli) -> Result<()> {
    let exec = if cli.serial { Exec::Serial } else { Exec::Parallel };
    match &cli.command {
        Command::Metrics { data, out } => {
            echo(cli, json!(null), None);
            cmd_metrics(data, out.as_deref(), exec)?;
        }
        Command::Design { metrics, max_qubits, thresholds, out } => {
            let t: RubricThresholds = match thresholds {
                Some(p) => read_json(p)?,
                None => RubricThresholds::default(),
            };
            echo(cli, json!({ "thresholds": t, "max_qubits": max_qubits }), None);
            cmd_design(metrics, *max_qubits, &t, out.as_deref())?;
        }
        Command::Train { config, base, data, seed, out, plot_data } => {
            let c = load_train_config(config.as_deref(), *base, *seed)?;
            echo(cli, serde_json::to_value(&c)?, Some(c.seed));
            cmd_train(&c, data, out, plot_data.as_deref(), exec)?;
        }
        Command::Eval { checkpoint, data, splits, split, out } => {
            echo(cli, json!(null), None);
            let report = cmd_eval(checkpoint, data, splits.as_deref(), *split)?;
            write_json(out.as_deref(), &report)?;
        }
        Command::Ablate { mode, config, base, data, seed, ansatz, bands, out } => {
            let c = load_train_config(config.as_deref(), *base, *seed)?;
            echo(cli, serde_json::to_value(&c)?, Some(c.seed));
            let rows = cmd_ablate(*mode, &c, data, ansatz.as_deref(), bands.as_deref(), exec)?;
            print!("{}", ablate::summary_table(&rows));
            if let Some(p) = out {
                write_json(Some(p), &rows)?;
            }
        }
        Command::Synth { out, seed, samples, classes, size } => {
            echo(cli, json!(null), Some(*seed));
            let d = synth_dataset_with(*seed, *samples, *classes, *size, exec)?;
            write_qsat(out, &d).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::ExportCircuit { preset, spec, format, bind, out } => {
            echo(cli, json!(null), None);
            cmd_export(preset.as_deref(), spec.as_deref(), format, bind.as_deref(), out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    par::init_threads_from_env();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
