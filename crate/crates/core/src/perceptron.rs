//! Single-layer perceptron on 8x8 binarized digits, trained in software and
//! deployed onto a crossbar.
//!
//! Weights live in `[0, 1]` and map affinely onto device conductances. The
//! crossbar computes `I_j = 0.25 V * sum_i g_ji x_i`; inference removes the
//! constant 10 uS offset and adds the software-side bias before the ReLU.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossbar::{CrossbarArray, CrossbarConfig};
use crate::device::VariabilityConfig;
use crate::error::{Error, Result};
use crate::seed;
use crate::tuning::{self, TuningConfig};

pub const INPUTS: usize = 64;
pub const OUTPUTS: usize = 10;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Conductance encoding weight 0.
pub const G_OFFSET: f64 = 10e-6;
/// Conductance span between weight 0 and weight 1.
pub const G_SPAN: f64 = 90e-6;
/// Column voltage for an active input.
pub const V_INPUT: f64 = 0.25;
pub const DEFAULT_THRESHOLD: u8 = 128;

const CROP: usize = 2;
const POOL: usize = 3;
const GRID: usize = 8;

/// An 8x8 binary pattern, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodedInput(pub [u8; INPUTS]);

impl EncodedInput {
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.len() != INPUTS || bits.iter().any(|&b| b > 1) {
            return Err(Error::input(format!("encoded input must be {INPUTS} binary values")));
        }
        let mut x = [0u8; INPUTS];
        x.copy_from_slice(bits);
        Ok(Self(x))
    }

    pub fn bits(&self) -> &[u8; INPUTS] {
        &self.0
    }

    pub fn active(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    /// Column drive voltages, padded with zeros up to `cols`.
    pub fn voltages(&self, cols: usize) -> Vec<f64> {
        let mut v = vec![0.0; cols.max(INPUTS)];
        for (vi, &b) in v.iter_mut().zip(self.0.iter()) {
            *vi = f64::from(b) * V_INPUT;
        }
        v.truncate(cols);
        v
    }
}

/// Binarize at `threshold`, crop a two-pixel border and max-pool 3x3 blocks.
pub fn preprocess(image: &[u8], threshold: u8) -> Result<EncodedInput> {
    if image.len() != IMAGE_PIXELS {
        return Err(Error::input(format!(
            "expected a {IMAGE_SIDE}x{IMAGE_SIDE} image ({IMAGE_PIXELS} pixels), got {}",
            image.len()
        )));
    }
    let mut x = [0u8; INPUTS];
    for (k, out) in x.iter_mut().enumerate() {
        let (br, bc) = (k / GRID, k % GRID);
        let hit = (0..POOL).any(|dr| {
            (0..POOL).any(|dc| {
                let r = CROP + br * POOL + dr;
                let c = CROP + bc * POOL + dc;
                image[r * IMAGE_SIDE + c] >= threshold
            })
        });
        *out = u8::from(hit);
    }
    Ok(EncodedInput(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: EncodedInput,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Initial weights are drawn from `U(0, init_scale)`.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 100,
            dropout_rate: 0.5,
            epochs: 30,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.init_scale) {
            return Err(Error::config("init_scale must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Weights are stored output-major: `weights[j * INPUTS + i]` connects input
/// `i` to output `j`, which is also the crossbar layout (rows are outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptronModel {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl PerceptronModel {
    pub fn zeros() -> Self {
        Self {
            weights: vec![0.0; INPUTS * OUTPUTS],
            biases: vec![0.0; OUTPUTS],
        }
    }

    /// The starting point of [`train`] for `cfg`.
    pub fn initial(cfg: &TrainConfig) -> Self {
        let mut rng = seed::stream(cfg.seed, 0, "perceptron/init");
        let weights = (0..INPUTS * OUTPUTS).map(|_| rng.gen::<f64>() * cfg.init_scale).collect();
        Self {
            weights,
            biases: vec![0.0; OUTPUTS],
        }
    }

    pub fn weight(&self, input: usize, output: usize) -> f64 {
        self.weights[output * INPUTS + input]
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != INPUTS * OUTPUTS || self.biases.len() != OUTPUTS {
            return Err(Error::input(format!(
                "model must hold {} weights and {OUTPUTS} biases",
                INPUTS * OUTPUTS
            )));
        }
        if self.biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::input("model biases must be finite"));
        }
        Ok(())
    }

    /// Pre-activation `sum_i w_ji x_i + b_j`.
    pub fn logits(&self, x: &EncodedInput) -> [f64; OUTPUTS] {
        let mut a = [0.0; OUTPUTS];
        for (j, aj) in a.iter_mut().enumerate() {
            let row = &self.weights[j * INPUTS..(j + 1) * INPUTS];
            *aj = self.biases[j] + row.iter().zip(x.0.iter()).filter(|(_, &b)| b == 1).map(|(w, _)| w).sum::<f64>();
        }
        a
    }

    pub fn activations(&self, x: &EncodedInput) -> [f64; OUTPUTS] {
        self.logits(x).map(|a| a.max(0.0))
    }

    pub fn predict(&self, x: &EncodedInput) -> usize {
        argmax(&self.activations(x))
    }

    pub fn accuracy(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let hits = samples.iter().filter(|s| self.predict(&s.x) == usize::from(s.label)).count();
        hits as f64 / samples.len() as f64
    }

    /// Mean softmax cross-entropy of the ReLU outputs, dropout off.
    pub fn mean_loss(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let total: f64 = samples
            .iter()
            .map(|s| {
                let p = softmax(&self.activations(&s.x));
                -p[usize::from(s.label)].max(f64::MIN_POSITIVE).ln()
            })
            .sum();
        total / samples.len() as f64
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

fn softmax(z: &[f64; OUTPUTS]) -> [f64; OUTPUTS] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    for v in &mut e {
        *v /= s;
    }
    e
}

/// Mini-batch SGD from [`PerceptronModel::initial`], with weights projected
/// onto `[0, 1]` after every step.
pub fn train(samples: &[Sample], cfg: &TrainConfig) -> Result<PerceptronModel> {
    train_with(samples, cfg, |_, _| {})
}

/// As [`train`], calling `on_epoch(epoch, &model)` after each epoch.
pub fn train_with(
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &PerceptronModel),
) -> Result<PerceptronModel> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    if let Some(s) = samples.iter().find(|s| usize::from(s.label) >= OUTPUTS) {
        return Err(Error::input(format!("label {} outside 0..{OUTPUTS}", s.label)));
    }
    let mut model = PerceptronModel::initial(cfg);
    let mut rng = seed::stream(cfg.seed, 0, "perceptron/train");
    let keep = 1.0 - cfg.dropout_rate;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut gw = vec![0.0; INPUTS * OUTPUTS];
    let mut xin = [0.0; INPUTS];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = [0.0; OUTPUTS];
            for &k in batch {
                let s = &samples[k];
                for (xi, &b) in xin.iter_mut().zip(s.x.0.iter()) {
                    *xi = if b == 1 && rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
                let mut a = [0.0; OUTPUTS];
                for (j, aj) in a.iter_mut().enumerate() {
                    let row = &model.weights[j * INPUTS..(j + 1) * INPUTS];
                    *aj = model.biases[j] + row.iter().zip(xin.iter()).map(|(w, x)| w * x).sum::<f64>();
                }
                let p = softmax(&a.map(|v| v.max(0.0)));
                for j in 0..OUTPUTS {
                    if a[j] <= 0.0 {
                        continue;
                    }
                    let delta = p[j] - if j == usize::from(s.label) { 1.0 } else { 0.0 };
                    gb[j] += delta;
                    let row = &mut gw[j * INPUTS..(j + 1) * INPUTS];
                    for (g, &x) in row.iter_mut().zip(xin.iter()) {
                        *g += delta * x;
                    }
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w = (*w - scale * g).clamp(0.0, 1.0);
            }
            for (b, g) in model.biases.iter_mut().zip(&gb) {
                *b -= scale * g;
            }
        }
        on_epoch(epoch + 1, &model);
    }
    Ok(model)
}

/// Target conductances, `OUTPUTS x INPUTS` row-major.
pub fn weights_to_conductances(model: &PerceptronModel) -> Result<Vec<f64>> {
    model.validate()?;
    model
        .weights
        .iter()
        .map(|&w| {
            if (0.0..=1.0).contains(&w) {
                Ok(G_OFFSET + G_SPAN * w)
            } else {
                Err(Error::input(format!("weight {w} outside [0, 1]")))
            }
        })
        .collect()
}

pub fn conductance_to_weight(g: f64) -> f64 {
    (g - G_OFFSET) / G_SPAN
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub class: usize,
    /// Output row currents in amperes.
    pub currents: [f64; OUTPUTS],
    /// De-embedded pre-activations including bias.
    pub activations: [f64; OUTPUTS],
}

/// Classify `x` with the programmed crossbar and software neurons.
pub fn infer_crossbar<R: Rng + ?Sized>(
    xbar: &CrossbarArray,
    biases: &[f64],
    x: &EncodedInput,
    rng: &mut R,
) -> Result<Inference> {
    match xbar.programmed_region() {
        Some((r, c)) if r >= OUTPUTS && c >= INPUTS => {}
        _ => {
            return Err(Error::State(format!(
                "the {OUTPUTS}x{INPUTS} weight region has not been programmed"
            )))
        }
    }
    if biases.len() != OUTPUTS {
        return Err(Error::input(format!("expected {OUTPUTS} biases, got {}", biases.len())));
    }
    let v = x.voltages(xbar.cols());
    let out = xbar.vmm(&v, OUTPUTS, rng)?;
    let mut currents = [0.0; OUTPUTS];
    currents.copy_from_slice(&out[..OUTPUTS]);
    let offset = G_OFFSET * x.active() as f64;
    let mut activations = [0.0; OUTPUTS];
    for j in 0..OUTPUTS {
        activations[j] = (currents[j] / V_INPUT - offset) / G_SPAN + biases[j];
    }
    let class = argmax(&activations.map(|a| a.max(0.0)));
    Ok(Inference {
        class,
        currents,
        activations,
    })
}

pub fn crossbar_accuracy<R: Rng + ?Sized>(
    xbar: &CrossbarArray,
    biases: &[f64],
    samples: &[Sample],
    rng: &mut R,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for s in samples {
        if infer_crossbar(xbar, biases, &s.x, rng)?.class == usize::from(s.label) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    Analytic,
    FullCrossbar,
}

impl SweepMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepMode::Analytic => "analytic",
            SweepMode::FullCrossbar => "full-crossbar",
        }
    }
}

impl std::str::FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(SweepMode::Analytic),
            "full-crossbar" | "full" => Ok(SweepMode::FullCrossbar),
            _ => Err(Error::config(format!("unknown sweep mode '{s}' (analytic, full-crossbar)"))),
        }
    }
}

/// Hardware used by full-crossbar sweeps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Hardware {
    pub crossbar: CrossbarConfig,
    pub variability: VariabilityConfig,
    pub tuning: TuningConfig,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityPoint {
    pub error_level: f64,
    pub mode: SweepMode,
    pub trial: usize,
    pub accuracy: f64,
}

pub const DEFAULT_ERROR_LEVELS: [f64; 7] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5];

/// Accuracy of `model` on `test` with imprecisely imported weights.
///
/// Analytic mode scales every weight by `U(1 - e, 1 + e)`. Full-crossbar mode
/// tunes a fresh array to the mapped conductances with tolerance `e` and
/// classifies through it. Trial `t` draws from the stream
/// `(master_seed, t, "fidelity/<mode>/<e>")`.
pub fn fidelity_sweep(
    model: &PerceptronModel,
    test: &[Sample],
    errors: &[f64],
    trials: usize,
    mode: SweepMode,
    hardware: &Hardware,
    master_seed: u64,
) -> Result<Vec<FidelityPoint>> {
    model.validate()?;
    if trials == 0 {
        return Err(Error::input("trials must be >= 1"));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0 && **e <= 0.5)) {
        return Err(Error::input(format!("error level {e} outside (0, 0.5]")));
    }
    if mode == SweepMode::FullCrossbar {
        hardware.crossbar.validate()?;
        hardware.variability.validate()?;
        hardware.tuning.validate()?;
    }
    let jobs: Vec<(f64, usize)> = errors.iter().flat_map(|&e| (0..trials).map(move |t| (e, t))).collect();
    jobs.par_iter()
        .map(|&(e, t)| {
            let mut rng = seed::stream(master_seed, t as u64, &format!("fidelity/{}/{e}", mode.as_str()));
            let accuracy = match mode {
                SweepMode::Analytic => perturb(model, e, &mut rng).accuracy(test),
                SweepMode::FullCrossbar => {
                    let tuning = TuningConfig {
                        tolerance_rel: e,
                        ..hardware.tuning.clone()
                    };
                    let xbar = program(model, &hardware.crossbar, &hardware.variability, &tuning, &mut rng)?.0;
                    crossbar_accuracy(&xbar, &model.biases, test, &mut rng)?
                }
            };
            Ok(FidelityPoint {
                error_level: e,
                mode,
                trial: t,
                accuracy,
            })
        })
        .collect()
}

/// Copy of `model` with each weight scaled by `U(1 - e, 1 + e)`.
pub fn perturb<R: Rng + ?Sized>(model: &PerceptronModel, e: f64, rng: &mut R) -> PerceptronModel {
    let weights = model.weights.iter().map(|w| w * rng.gen_range(1.0 - e..=1.0 + e)).collect();
    PerceptronModel {
        weights,
        biases: model.biases.clone(),
    }
}

/// Sample an array and tune its top-left `OUTPUTS x INPUTS` block to `model`.
pub fn program<R: Rng + ?Sized>(
    model: &PerceptronModel,
    crossbar: &CrossbarConfig,
    variability: &VariabilityConfig,
    tuning: &TuningConfig,
    rng: &mut R,
) -> Result<(CrossbarArray, tuning::TuningReport)> {
    if crossbar.rows < OUTPUTS || crossbar.cols < INPUTS {
        return Err(Error::config(format!(
            "a {}x{} array cannot hold the {OUTPUTS}x{INPUTS} weight matrix",
            crossbar.rows, crossbar.cols
        )));
    }
    let targets = weights_to_conductances(model)?;
    let mut xbar = CrossbarArray::sample(crossbar.clone(), variability, rng)?;
    let report = tuning::tune_array(&mut xbar, &targets, OUTPUTS, INPUTS, tuning, rng)?;
    Ok((xbar, report))
}

/// Checkpoint header fields besides the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub accuracy: f64,
}

const CHECKPOINT_MAGIC: &str = "memxbar-perceptron 1";

/// Plain-text checkpoint: a header, then one line per input holding its ten
/// output weights, then one line of biases.
pub fn write_checkpoint(model: &PerceptronModel, meta: &CheckpointMeta) -> String {
    let mut s = format!(
        "{CHECKPOINT_MAGIC}\nrows {INPUTS}\ncols {OUTPUTS}\nseed {}\naccuracy {}\nweights\n",
        meta.seed, meta.accuracy
    );
    for i in 0..INPUTS {
        let line: Vec<String> = (0..OUTPUTS).map(|j| model.weight(i, j).to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s.push_str("biases\n");
    let line: Vec<String> = model.biases.iter().map(f64::to_string).collect();
    s.push_str(&line.join(" "));
    s.push('\n');
    s
}

pub fn read_checkpoint(text: &str) -> Result<(PerceptronModel, CheckpointMeta)> {
    let bad = |line: usize, msg: &str| Error::input(format!("checkpoint line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim()));
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::input(format!("checkpoint ends before {what}")));

    let (n, magic) = next("header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(n, "not a perceptron checkpoint"));
    }
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (n, l) = next(key)?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok((n, v.trim().to_string())),
            _ => Err(bad(n, &format!("expected '{key} <value>'"))),
        }
    };
    let (n, rows) = field("rows")?;
    let (m, cols) = field("cols")?;
    if rows != INPUTS.to_string() || cols != OUTPUTS.to_string() {
        return Err(bad(n.min(m), &format!("shape must be {INPUTS}x{OUTPUTS}")));
    }
    let (n, seed) = field("seed")?;
    let seed = seed.parse().map_err(|_| bad(n, "seed is not an integer"))?;
    let (n, acc) = field("accuracy")?;
    let accuracy = acc.parse().map_err(|_| bad(n, "accuracy is not a number"))?;

    let values = |n: usize, l: &str, count: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(n, "malformed number"))?;
        if v.len() != count || v.iter().any(|x| !x.is_finite()) {
            return Err(bad(n, &format!("expected {count} finite values")));
        }
        Ok(v)
    };
    let (n, l) = next("weights")?;
    if l != "weights" {
        return Err(bad(n, "expected 'weights'"));
    }
    let mut model = PerceptronModel::zeros();
    for i in 0..INPUTS {
        let (n, l) = next("weight rows")?;
        for (j, w) in values(n, l, OUTPUTS)?.into_iter().enumerate() {
            if !(0.0..=1.0).contains(&w) {
                return Err(bad(n, &format!("weight {w} outside [0, 1]")));
            }
            model.weights[j * INPUTS + i] = w;
        }
    }
    let (n, l) = next("biases")?;
    if l != "biases" {
        return Err(bad(n, "expected 'biases'"));
    }
    let (n, l) = next("bias values")?;
    model.biases = values(n, l, OUTPUTS)?;
    Ok((model, CheckpointMeta { seed, accuracy }))
}
