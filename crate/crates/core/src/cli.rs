//! Command-line front end. Every subcommand writes a result bundle (CSV
//! tables, JSON aggregates, `config.toml` echo and `manifest.json`) into the
//! output directory.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::characterization::{self, Characterization, ThresholdStats};
use crate::crossbar::{CrossbarArray, SolverMode};
use crate::error::{Error, Result};
use crate::io::config::ExperimentConfig;
use crate::io::mnist::{self, Split};
use crate::io::pgm;
use crate::io::results::{fmt_f64, fmt_opt, Bundle, Table};
use crate::perceptron::{self, CheckpointMeta, Hardware, PerceptronModel, Sample, SweepMode};
use crate::seed;
use crate::stats;
use crate::tuning::{self, TuningSummary};

/// Built-in 64x64 grayscale portrait used when `tune` gets no pattern.
pub const DEFAULT_PATTERN: &[u8] = include_bytes!("../assets/portrait64.pgm");

/// Environment variable naming the MNIST directory when neither the flag nor
/// the config sets one.
pub const MNIST_DIR_ENV: &str = "MEMXBAR_MNIST_DIR";

#[derive(Parser, Debug)]
#[command(name = "memxbar", version, about = "Memristor crossbar experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract switching thresholds with the pulse staircase.
    Characterize(Common),
    /// Program a grayscale pattern into the array with write-verify tuning.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Graymap with the target pattern (defaults to the built-in portrait).
        #[arg(long)]
        pattern: Option<PathBuf>,
    },
    /// Quasi-static I-V loop on one device.
    DcSweep(Common),
    /// Train the 64x10 perceptron on down-sampled MNIST.
    MnistTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mnist_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Program a trained model into crossbars and classify the test set.
    MnistInfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mnist_dir: Option<PathBuf>,
        /// Perceptron checkpoint written by `mnist-train`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Accuracy versus weight import error.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mnist_dir: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// analytic or full-crossbar
        #[arg(long)]
        mode: Option<SweepMode>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: results/<subcommand>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    solver: Option<SolverMode>,
    #[arg(long)]
    trials: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.solver {
            cfg.crossbar.solver_mode = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        Ok(cfg)
    }

    fn out_dir(&self, name: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| Path::new("results").join(name))
    }
}

/// Parse `argv` (including the program name), run the experiment and return
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(manifest) => {
            println!("wrote {}", manifest.display());
            0
        }
        Err(e) => {
            eprintln!("memxbar: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<PathBuf> {
    match cmd {
        Command::Characterize(c) => {
            let cfg = c.resolve()?;
            cfg.validate()?;
            characterize(&cfg, Bundle::create(&c.out_dir("characterize"), "characterize", &cfg)?)
        }
        Command::Tune { common, pattern } => {
            let mut cfg = common.resolve()?;
            if pattern.is_some() {
                cfg.data.pattern = pattern;
            }
            cfg.validate()?;
            let targets = load_targets(&cfg)?;
            tune(&cfg, &targets, Bundle::create(&common.out_dir("tune"), "tune", &cfg)?)
        }
        Command::DcSweep(c) => {
            let cfg = c.resolve()?;
            cfg.validate()?;
            dc_sweep(&cfg, Bundle::create(&c.out_dir("dc-sweep"), "dc-sweep", &cfg)?)
        }
        Command::MnistTrain {
            common,
            mnist_dir,
            epochs,
        } => {
            let mut cfg = common.resolve()?;
            if mnist_dir.is_some() {
                cfg.data.mnist_dir = mnist_dir;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            let (train, test) = load_mnist(&cfg, true)?;
            mnist_train(&cfg, &train, &test, Bundle::create(&common.out_dir("mnist-train"), "mnist-train", &cfg)?)
        }
        Command::MnistInfer {
            common,
            mnist_dir,
            model,
        } => {
            let mut cfg = common.resolve()?;
            if mnist_dir.is_some() {
                cfg.data.mnist_dir = mnist_dir;
            }
            if model.is_some() {
                cfg.data.model = model;
            }
            cfg.validate()?;
            let (model, meta) = load_model(&cfg)?;
            let (_, test) = load_mnist(&cfg, false)?;
            mnist_infer(&cfg, &model, &meta, &test, Bundle::create(&common.out_dir("mnist-infer"), "mnist-infer", &cfg)?)
        }
        Command::Sweep {
            common,
            mnist_dir,
            model,
            mode,
        } => {
            let mut cfg = common.resolve()?;
            if mnist_dir.is_some() {
                cfg.data.mnist_dir = mnist_dir;
            }
            if model.is_some() {
                cfg.data.model = model;
            }
            if let Some(m) = mode {
                cfg.sweep.mode = m;
            }
            cfg.validate()?;
            let (model, _) = load_model(&cfg)?;
            let (_, test) = load_mnist(&cfg, false)?;
            sweep(&cfg, &model, &test, Bundle::create(&common.out_dir("sweep"), "sweep", &cfg)?)
        }
    }
}

fn load_targets(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let (rows, cols) = (cfg.crossbar.rows, cfg.crossbar.cols);
    match &cfg.data.pattern {
        Some(p) => pgm::load_pattern(p, rows, cols),
        None => {
            let map = pgm::parse_pgm(DEFAULT_PATTERN).map_err(|(_, m)| Error::State(m))?;
            if (map.height, map.width) != (rows, cols) {
                return Err(Error::config(format!(
                    "the built-in pattern is {}x{}; pass --pattern for a {rows}x{cols} array",
                    map.height, map.width
                )));
            }
            Ok(map.to_conductances())
        }
    }
}

fn mnist_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.data
        .mnist_dir
        .clone()
        .or_else(|| std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| Error::config(format!("no MNIST directory: pass --mnist-dir or set {MNIST_DIR_ENV}")))
}

fn load_mnist(cfg: &ExperimentConfig, with_train: bool) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let dir = mnist_dir(cfg)?;
    let encode = |split: Split, limit: Option<usize>| -> Result<Vec<Sample>> {
        let mut s = mnist::load_split(&dir, split)?.encode(cfg.data.threshold)?;
        if let Some(n) = limit {
            s.truncate(n);
        }
        Ok(s)
    };
    let train = if with_train {
        encode(Split::Train, cfg.data.train_limit)?
    } else {
        Vec::new()
    };
    Ok((train, encode(Split::Test, cfg.data.test_limit)?))
}

fn load_model(cfg: &ExperimentConfig) -> Result<(PerceptronModel, CheckpointMeta)> {
    let path = cfg
        .data
        .model
        .as_ref()
        .ok_or_else(|| Error::config("no model checkpoint: pass --model"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read model {}: {e}", path.display())))?;
    perceptron::read_checkpoint(&text)
}

#[derive(Serialize)]
struct CharacterizeSummary {
    trials: usize,
    /// Statistics of trial 0.
    stats: ThresholdStats,
    per_trial: Vec<ThresholdStats>,
    unswitchable_counts: Vec<usize>,
    unswitchable_mean: f64,
}

fn characterize(cfg: &ExperimentConfig, mut out: Bundle) -> Result<PathBuf> {
    let runs: Vec<Characterization> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::stream(cfg.seed, t as u64, "characterize");
            let mut xbar = CrossbarArray::sample(cfg.crossbar.clone(), &cfg.device, &mut rng)?;
            characterization::extract_thresholds(&mut xbar, &cfg.characterization, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(&["trial", "row", "col", "v_set_extracted", "v_reset_extracted", "unswitchable"]);
    for (t, ch) in runs.iter().enumerate() {
        for r in &ch.records {
            table.push(vec![
                t.to_string(),
                r.row.to_string(),
                r.col.to_string(),
                fmt_opt(r.v_set_extracted),
                fmt_opt(r.v_reset_extracted),
                r.unswitchable.to_string(),
            ]);
        }
    }
    out.csv("thresholds.csv", &table)?;
    let counts: Vec<usize> = runs.iter().map(|c| c.stats.unswitchable_count).collect();
    let summary = CharacterizeSummary {
        trials: runs.len(),
        stats: runs[0].stats.clone(),
        per_trial: runs.iter().map(|c| c.stats.clone()).collect(),
        unswitchable_mean: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
        unswitchable_counts: counts,
    };
    out.json("summary.json", &summary)?;
    out.finish()
}

#[derive(Serialize)]
struct TuneSummary {
    mean_abs_error_pct: f64,
    fraction_within_tol: f64,
    tolerance_rel: f64,
    #[serde(flatten)]
    summary: TuningSummary,
}

fn tune(cfg: &ExperimentConfig, targets: &[f64], mut out: Bundle) -> Result<PathBuf> {
    let mut rng = seed::stream(cfg.seed, 0, "tune");
    let mut xbar = CrossbarArray::sample(cfg.crossbar.clone(), &cfg.device, &mut rng)?;
    let (rows, cols) = (cfg.crossbar.rows, cfg.crossbar.cols);
    let report = tuning::tune_array(&mut xbar, targets, rows, cols, &cfg.tuning, &mut rng)?;
    let mut table = Table::new(&["row", "col", "target_S", "achieved_S", "pulses", "converged", "stuck"]);
    for d in &report.devices {
        table.push(vec![
            d.row.to_string(),
            d.col.to_string(),
            fmt_f64(d.target),
            fmt_f64(d.achieved),
            d.pulses_used.to_string(),
            d.converged.to_string(),
            d.flagged_stuck.to_string(),
        ]);
    }
    out.csv("tuning.csv", &table)?;
    out.json(
        "summary.json",
        &TuneSummary {
            mean_abs_error_pct: report.summary.mean_abs_error_pct,
            fraction_within_tol: report.summary.fraction_within_tol,
            tolerance_rel: report.tolerance_rel,
            summary: report.summary.clone(),
        },
    )?;
    out.finish()
}

#[derive(Serialize)]
struct SweepSummaryDc {
    row: usize,
    col: usize,
    g_start: f64,
    g_end: f64,
    nonlinearity_1v: f64,
    nonlinearity_read: f64,
}

fn dc_sweep(cfg: &ExperimentConfig, mut out: Bundle) -> Result<PathBuf> {
    let d = &cfg.dc_sweep;
    let mut rng = seed::stream(cfg.seed, 0, "dc-sweep");
    let mut xbar = CrossbarArray::sample(cfg.crossbar.clone(), &cfg.device, &mut rng)?;
    let g_start = xbar.conductance(d.row, d.col)?;
    let trace = characterization::dc_sweep(&mut xbar, d.row, d.col, d.v_peak_pos, d.v_peak_neg, d.points, &mut rng)?;
    let mut table = Table::new(&["step", "voltage", "current", "g"]);
    for p in &trace {
        table.push(vec![p.step.to_string(), fmt_f64(p.voltage), fmt_f64(p.current), fmt_f64(p.g)]);
    }
    out.csv("sweep.csv", &table)?;
    out.json(
        "summary.json",
        &SweepSummaryDc {
            row: d.row,
            col: d.col,
            g_start,
            g_end: xbar.conductance(d.row, d.col)?,
            nonlinearity_1v: characterization::nonlinearity(&xbar, d.row, d.col, 1.0)?,
            nonlinearity_read: characterization::nonlinearity(&xbar, d.row, d.col, crate::device::V_READ)?,
        },
    )?;
    out.finish()
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    train_samples: usize,
    test_samples: usize,
    train_accuracy: f64,
    test_accuracy: f64,
    min_weight: f64,
    max_weight: f64,
}

fn mnist_train(cfg: &ExperimentConfig, train: &[Sample], test: &[Sample], mut out: Bundle) -> Result<PathBuf> {
    let tc = cfg.train_config();
    let mut table = Table::new(&["epoch", "train_loss", "test_accuracy"]);
    let model = perceptron::train_with(train, &tc, |epoch, m| {
        table.push(vec![epoch.to_string(), fmt_f64(m.mean_loss(train)), fmt_f64(m.accuracy(test))]);
    })?;
    let test_accuracy = model.accuracy(test);
    out.csv("training.csv", &table)?;
    out.text(
        "model.txt",
        &perceptron::write_checkpoint(
            &model,
            &CheckpointMeta {
                seed: tc.seed,
                accuracy: test_accuracy,
            },
        ),
    )?;
    out.json(
        "summary.json",
        &TrainSummary {
            epochs: tc.epochs,
            train_samples: train.len(),
            test_samples: test.len(),
            train_accuracy: model.accuracy(train),
            test_accuracy,
            min_weight: model.weights.iter().cloned().fold(f64::INFINITY, f64::min),
            max_weight: model.weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        },
    )?;
    out.finish()
}

#[derive(Serialize)]
struct InferSummary {
    trials: usize,
    tolerance_rel: f64,
    software_accuracy: f64,
    checkpoint_accuracy: f64,
    crossbar_accuracy: Vec<f64>,
    crossbar_accuracy_mean: f64,
    gap_pct_points: f64,
    tuning: Vec<TuningSummary>,
}

fn hardware(cfg: &ExperimentConfig) -> Hardware {
    Hardware {
        crossbar: cfg.crossbar.clone(),
        variability: cfg.device.clone(),
        tuning: cfg.tuning.clone(),
    }
}

fn mnist_infer(
    cfg: &ExperimentConfig,
    model: &PerceptronModel,
    meta: &CheckpointMeta,
    test: &[Sample],
    mut out: Bundle,
) -> Result<PathBuf> {
    let hw = hardware(cfg);
    let runs: Vec<(Vec<perceptron::Inference>, TuningSummary)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::stream(cfg.seed, t as u64, "mnist-infer");
            let (xbar, report) = perceptron::program(model, &hw.crossbar, &hw.variability, &hw.tuning, &mut rng)?;
            let inf = test
                .iter()
                .map(|s| perceptron::infer_crossbar(&xbar, &model.biases, &s.x, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            Ok((inf, report.summary))
        })
        .collect::<Result<_>>()?;

    let mut header = vec!["trial", "index", "label", "predicted"];
    let current_cols: Vec<String> = (0..perceptron::OUTPUTS).map(|j| format!("current_{j}")).collect();
    header.extend(current_cols.iter().map(String::as_str));
    let mut table = Table::new(&header);
    let mut acc = Vec::new();
    for (t, (inf, _)) in runs.iter().enumerate() {
        let mut hits = 0;
        for (k, (i, s)) in inf.iter().zip(test).enumerate() {
            hits += usize::from(i.class == usize::from(s.label));
            let mut row = vec![t.to_string(), k.to_string(), s.label.to_string(), i.class.to_string()];
            row.extend(i.currents.iter().map(|&c| fmt_f64(c)));
            table.push(row);
        }
        acc.push(if test.is_empty() { 0.0 } else { hits as f64 / test.len() as f64 });
    }
    out.csv("predictions.csv", &table)?;
    let software = model.accuracy(test);
    let mean = stats::mean(&acc);
    out.json(
        "summary.json",
        &InferSummary {
            trials: acc.len(),
            tolerance_rel: cfg.tuning.tolerance_rel,
            software_accuracy: software,
            checkpoint_accuracy: meta.accuracy,
            gap_pct_points: 100.0 * (software - mean),
            crossbar_accuracy_mean: mean,
            crossbar_accuracy: acc,
            tuning: runs.into_iter().map(|r| r.1).collect(),
        },
    )?;
    out.finish()
}

#[derive(Serialize)]
struct LevelSummary {
    error_level: f64,
    mean_accuracy: f64,
    std_accuracy: f64,
}

#[derive(Serialize)]
struct FidelitySummary {
    mode: SweepMode,
    trials: usize,
    software_accuracy: f64,
    levels: Vec<LevelSummary>,
    spearman_rho: f64,
}

fn sweep(cfg: &ExperimentConfig, model: &PerceptronModel, test: &[Sample], mut out: Bundle) -> Result<PathBuf> {
    let mode = cfg.sweep.mode;
    let points = perceptron::fidelity_sweep(model, test, &cfg.sweep.error_levels, cfg.trials, mode, &hardware(cfg), cfg.seed)?;
    let mut table = Table::new(&["error_level", "mode", "trial", "accuracy"]);
    for p in &points {
        table.push(vec![fmt_f64(p.error_level), mode.as_str().into(), p.trial.to_string(), fmt_f64(p.accuracy)]);
    }
    out.csv("fidelity.csv", &table)?;
    let levels: Vec<LevelSummary> = cfg
        .sweep
        .error_levels
        .iter()
        .map(|&e| {
            let a: Vec<f64> = points.iter().filter(|p| p.error_level == e).map(|p| p.accuracy).collect();
            LevelSummary {
                error_level: e,
                mean_accuracy: stats::mean(&a),
                std_accuracy: stats::std_dev(&a),
            }
        })
        .collect();
    let xs: Vec<f64> = levels.iter().map(|l| l.error_level).collect();
    let ys: Vec<f64> = levels.iter().map(|l| l.mean_accuracy).collect();
    out.json(
        "summary.json",
        &FidelitySummary {
            mode,
            trials: cfg.trials,
            software_accuracy: model.accuracy(test),
            spearman_rho: stats::spearman(&xs, &ys),
            levels,
        },
    )?;
    out.finish()
}
