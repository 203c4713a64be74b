//! Measurement protocols: switching-threshold staircases and DC sweeps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crossbar::{CrossbarArray, MAX_WRITE_AMPLITUDE};
use crate::device::{self, V_READ};
use crate::error::{Error, Result};
use crate::stats;
use crate::tuning::{self, TuningConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaircaseConfig {
    pub baseline_g: f64,
    pub baseline_tol: f64,
    pub step: f64,
    pub stop_g: f64,
    /// Relative change from the phase's initial conductance that marks switching.
    pub change_criterion: f64,
    pub v_cap: f64,
}

impl Default for StaircaseConfig {
    fn default() -> Self {
        Self {
            baseline_g: 14e-6,
            baseline_tol: 0.10,
            step: 0.05,
            stop_g: 50e-6,
            change_criterion: 0.20,
            v_cap: 2.5,
        }
    }
}

impl StaircaseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.baseline_g > 0.0 && self.stop_g > self.baseline_g) {
            return Err(Error::config("need 0 < baseline_g < stop_g"));
        }
        if !(self.baseline_tol > 0.0 && self.baseline_tol < 1.0) {
            return Err(Error::config("baseline_tol must lie in (0, 1)"));
        }
        if !(self.step > 0.0 && self.v_cap > 0.0 && self.v_cap <= MAX_WRITE_AMPLITUDE) {
            return Err(Error::config("need step > 0 and 0 < v_cap <= 2.5 V"));
        }
        if !(self.change_criterion > 0.0) {
            return Err(Error::config("change_criterion must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub row: usize,
    pub col: usize,
    pub v_set_extracted: Option<f64>,
    pub v_reset_extracted: Option<f64>,
    pub unswitchable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub devices: usize,
    pub switchable: usize,
    pub mean_v_set: f64,
    pub std_v_set: f64,
    pub mean_v_reset: f64,
    pub std_v_reset: f64,
    /// Pearson correlation of extracted `v_set` and `|v_reset|`.
    pub correlation: f64,
    pub unswitchable_count: usize,
    pub unswitchable_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characterization {
    pub records: Vec<ThresholdRecord>,
    pub stats: ThresholdStats,
}

/// Run the set/reset staircase on every device in raster order.
///
/// Each device is first tuned to the baseline, then driven with set pulses of
/// growing amplitude until its read conductance passes `stop_g`, then with
/// reset pulses until it falls back to the baseline. The threshold of each
/// phase is the first amplitude whose reading differs from the reading at the
/// start of that phase by more than `change_criterion`.
pub fn extract_thresholds<R: Rng + ?Sized>(
    xbar: &mut CrossbarArray,
    cfg: &StaircaseConfig,
    rng: &mut R,
) -> Result<Characterization> {
    cfg.validate()?;
    let baseline = TuningConfig {
        tolerance_rel: cfg.baseline_tol,
        v_start_set: device::THRESHOLD_FLOOR,
        v_start_reset: -device::THRESHOLD_FLOOR,
        max_cycles: 1,
        ..TuningConfig::default()
    };
    let mut records = Vec::with_capacity(xbar.rows() * xbar.cols());
    for row in 0..xbar.rows() {
        for col in 0..xbar.cols() {
            tuning::tune_device(xbar, row, col, cfg.baseline_g, &baseline, rng)?;
            let v_set = staircase(xbar, row, col, cfg, 1.0, rng)?;
            let v_reset = match v_set {
                Some(_) => staircase(xbar, row, col, cfg, -1.0, rng)?,
                None => None,
            };
            records.push(ThresholdRecord {
                row,
                col,
                v_set_extracted: v_set,
                v_reset_extracted: v_reset,
                unswitchable: v_set.is_none() || v_reset.is_none(),
            });
        }
    }
    let stats = summarize(&records);
    Ok(Characterization { records, stats })
}

fn staircase<R: Rng + ?Sized>(
    xbar: &mut CrossbarArray,
    row: usize,
    col: usize,
    cfg: &StaircaseConfig,
    sign: f64,
    rng: &mut R,
) -> Result<Option<f64>> {
    let initial = xbar.read_conductance(row, col, rng)?;
    let mut threshold = None;
    let mut n = 1;
    loop {
        let magnitude = n as f64 * cfg.step;
        if magnitude > cfg.v_cap + 1e-9 {
            break;
        }
        let amplitude = sign * magnitude.min(cfg.v_cap);
        xbar.apply_write(row, col, amplitude, rng)?;
        let g = xbar.read_conductance(row, col, rng)?;
        if threshold.is_none() && ((g - initial) / initial).abs() > cfg.change_criterion {
            threshold = Some(amplitude);
        }
        let done = if sign > 0.0 { g > cfg.stop_g } else { g <= cfg.baseline_g };
        if done {
            break;
        }
        n += 1;
    }
    Ok(threshold)
}

pub fn summarize(records: &[ThresholdRecord]) -> ThresholdStats {
    let ok: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.v_set_extracted?, r.v_reset_extracted?)))
        .collect();
    let sets: Vec<f64> = ok.iter().map(|p| p.0).collect();
    let resets: Vec<f64> = ok.iter().map(|p| p.1).collect();
    let mags: Vec<(f64, f64)> = ok.iter().map(|&(s, r)| (s, -r)).collect();
    let unswitchable = records.iter().filter(|r| r.unswitchable).count();
    ThresholdStats {
        devices: records.len(),
        switchable: ok.len(),
        mean_v_set: stats::mean(&sets),
        std_v_set: stats::std_dev(&sets),
        mean_v_reset: stats::mean(&resets),
        std_v_reset: stats::std_dev(&resets),
        correlation: stats::pearson(&mags),
        unswitchable_count: unswitchable,
        unswitchable_fraction: if records.is_empty() {
            f64::NAN
        } else {
            unswitchable as f64 / records.len() as f64
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub step: usize,
    pub voltage: f64,
    pub current: f64,
    /// Read conductance after this step's bias was applied.
    pub g: f64,
}

/// Quasi-static loop `0 -> +peak -> 0 -> -peak -> 0` over `points` steps.
///
/// Each step is applied to the device as a pulse (so it may switch) and the
/// current is evaluated from the static I-V at the resulting state. The sweep
/// drives the selected device directly, without half-biasing neighbours.
pub fn dc_sweep<R: Rng + ?Sized>(
    xbar: &mut CrossbarArray,
    row: usize,
    col: usize,
    v_peak_pos: f64,
    v_peak_neg: f64,
    points: usize,
    rng: &mut R,
) -> Result<Vec<SweepPoint>> {
    if !(0.0..=MAX_WRITE_AMPLITUDE).contains(&v_peak_pos) {
        return Err(Error::input(format!("positive peak {v_peak_pos} V outside [0, 2.5] V")));
    }
    if !(-MAX_WRITE_AMPLITUDE..=0.0).contains(&v_peak_neg) {
        return Err(Error::input(format!("negative peak {v_peak_neg} V outside [-2.5, 0] V")));
    }
    if points < 4 {
        return Err(Error::input("a sweep needs at least 4 points"));
    }
    xbar.cell(row, col)?;
    let voltages = sweep_voltages(v_peak_pos, v_peak_neg, points);
    let mut out = Vec::with_capacity(points);
    for (step, v) in voltages.into_iter().enumerate() {
        let cell = xbar.cell_mut(row, col)?;
        cell.state = device::apply_pulse(&cell.params, &cell.state, &device::PulseSpec::new(v), rng)?;
        let current = device::current(&cell.params, &cell.state, v);
        out.push(SweepPoint {
            step,
            voltage: v,
            current,
            g: cell.state.g,
        });
    }
    Ok(out)
}

/// Piecewise-linear loop through the four quarter segments, `points` samples
/// in total, starting and ending at 0 V.
fn sweep_voltages(pos: f64, neg: f64, points: usize) -> Vec<f64> {
    let corners = [0.0, pos, 0.0, neg, 0.0];
    (0..points)
        .map(|k| {
            let t = 4.0 * k as f64 / (points - 1) as f64;
            let seg = (t.floor() as usize).min(3);
            let f = t - seg as f64;
            corners[seg] + (corners[seg + 1] - corners[seg]) * f
        })
        .collect()
}

/// Nonlinearity `0.5 * I(v) / I(v/2)` of one device at its current state.
pub fn nonlinearity(xbar: &CrossbarArray, row: usize, col: usize, v: f64) -> Result<f64> {
    let cell = xbar.cell(row, col)?;
    let full = device::current(&cell.params, &cell.state, v);
    let half = device::current(&cell.params, &cell.state, v / 2.0);
    Ok(0.5 * full / half)
}

/// Read-voltage current of every device, for comparison with the measured map.
pub fn read_current_map(xbar: &CrossbarArray) -> Vec<f64> {
    xbar.cells()
        .iter()
        .map(|c| device::current(&c.params, &c.state, V_READ))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossbar::CrossbarConfig;
    use crate::device::{DeviceParams, VariabilityConfig};
    use crate::seed;

    #[test]
    fn sweep_shape() {
        let v = sweep_voltages(1.0, -2.0, 9);
        assert_eq!(v, vec![0.0, 0.5, 1.0, 0.5, 0.0, -1.0, -2.0, -1.0, 0.0]);
    }

    #[test]
    fn sub_threshold_sweep_has_no_hysteresis() {
        let mut rng = seed::stream(2, 0, "dc");
        let mut x = CrossbarArray::sample(CrossbarConfig::with_shape(2, 2), &VariabilityConfig::deterministic(), &mut rng).unwrap();
        let trace = dc_sweep(&mut x, 0, 1, 0.5, -0.5, 41, &mut rng).unwrap();
        let g0 = trace[0].g;
        assert!(trace.iter().all(|p| p.g == g0));
        // Up-trace and down-trace of the positive half overlay exactly.
        for k in 0..=10 {
            let (up, down) = (&trace[k], &trace[20 - k]);
            assert!((up.voltage - down.voltage).abs() < 1e-12);
            assert!((up.current - down.current).abs() <= 1e-9 * up.current.abs().max(1e-30));
        }
        let plus = trace.iter().find(|p| (p.voltage - 0.1).abs() < 1e-12).unwrap().current;
        let minus = trace.iter().find(|p| (p.voltage + 0.1).abs() < 1e-12).unwrap().current;
        assert!((plus + minus).abs() <= 1e-12 * plus.abs());
    }

    #[test]
    fn full_sweep_sets_then_resets() {
        let mut rng = seed::stream(2, 0, "dc");
        let mut x = CrossbarArray::sample(CrossbarConfig::with_shape(1, 1), &VariabilityConfig::deterministic(), &mut rng).unwrap();
        x.set_conductance(0, 0, 20e-6).unwrap();
        let trace = dc_sweep(&mut x, 0, 0, 2.0, -2.0, 81, &mut rng).unwrap();
        assert!(trace[40].g > 20e-6);
        assert!(trace[80].g < trace[40].g);
    }

    #[test]
    fn sweep_range_errors() {
        let mut rng = seed::stream(2, 0, "dc");
        let mut x = CrossbarArray::sample(CrossbarConfig::with_shape(1, 1), &VariabilityConfig::deterministic(), &mut rng).unwrap();
        assert!(dc_sweep(&mut x, 0, 0, 2.6, -1.0, 20, &mut rng).is_err());
        assert!(dc_sweep(&mut x, 0, 0, 1.0, -1.0, 2, &mut rng).is_err());
        assert!(matches!(dc_sweep(&mut x, 1, 0, 1.0, -1.0, 20, &mut rng), Err(Error::Input(_))));
    }

    // First staircase amplitude strictly above `v`, and the overdrive there.
    fn first_step_above(v: f64, step: f64) -> (f64, f64) {
        let n = (v / step).floor() + 1.0;
        (n * step, n * step - v)
    }

    #[test]
    fn zero_noise_extraction_lands_at_predicted_step() {
        let mut rng = seed::stream(8, 0, "ch");
        let var = VariabilityConfig {
            read_noise_rel: 0.0,
            write_noise_rel: 0.0,
            stuck_probability: 0.0,
            ..VariabilityConfig::default()
        };
        let mut x = CrossbarArray::sample(CrossbarConfig::with_shape(8, 8), &var, &mut rng).unwrap();
        let truth: Vec<DeviceParams> = x.cells().iter().map(|c| c.params.clone()).collect();
        let cfg = StaircaseConfig::default();
        let ch = extract_thresholds(&mut x, &cfg, &mut rng).unwrap();
        let (lo, hi) = (cfg.baseline_g * (1.0 - cfg.baseline_tol), cfg.baseline_g * (1.0 + cfg.baseline_tol));
        let mut one_step = 0;
        for (rec, p) in ch.records.iter().zip(&truth) {
            if p.v_set + 2.0 * cfg.step > cfg.v_cap || p.v_reset - 2.0 * cfg.step < -cfg.v_cap {
                continue;
            }
            let span = p.g_max - p.g_min;
            let s = rec.v_set_extracted.expect("set threshold");
            let (a1, od) = first_step_above(p.v_set, cfg.step);
            assert!(s > p.v_set, "set fired below threshold: {s} vs {}", p.v_set);
            // Relative change after the first step above threshold, bracketed over the baseline band.
            let rel = |g0: f64| p.k_set * od * (p.g_max - g0) / span / g0;
            if rel(hi) > cfg.change_criterion {
                assert!((s - a1).abs() < 1e-9, "set {s}, expected {a1}");
                one_step += 1;
            } else if rel(lo) <= cfg.change_criterion {
                assert!((s - a1 - cfg.step).abs() < 1e-9, "set {s}, expected {}", a1 + cfg.step);
            } else {
                assert!(s > a1 - 1e-9 && s < a1 + cfg.step + 1e-9);
            }

            let r = rec.v_reset_extracted.expect("reset threshold");
            let (b1, od) = first_step_above(-p.v_reset, cfg.step);
            assert!(r < p.v_reset, "reset fired above threshold: {r} vs {}", p.v_reset);
            // The reset phase starts above stop_g, so (g0 - g_min)/g0 is bracketed by stop_g and g_max.
            let rel = |g0: f64| p.k_reset * od * (g0 - p.g_min) / span / g0;
            if rel(cfg.stop_g) > cfg.change_criterion {
                assert!((r + b1).abs() < 1e-9, "reset {r}, expected {}", -b1);
            } else if rel(p.g_max) <= cfg.change_criterion {
                assert!((r + b1 + cfg.step).abs() < 1e-9, "reset {r}, expected {}", -b1 - cfg.step);
            } else {
                assert!(r < -b1 + 1e-9 && r > -b1 - cfg.step - 1e-9);
            }
        }
        assert!(one_step > 40, "{one_step}");
    }

    #[test]
    fn zero_variance_population_extracts_near_mean() {
        let mut rng = seed::stream(9, 0, "ch");
        let mut x = CrossbarArray::sample(CrossbarConfig::with_shape(4, 4), &VariabilityConfig::deterministic(), &mut rng).unwrap();
        let ch = extract_thresholds(&mut x, &StaircaseConfig::default(), &mut rng).unwrap();
        for r in &ch.records {
            let s = r.v_set_extracted.unwrap();
            assert!(s > 1.19 && s <= 1.24 + 1e-9, "{s}");
        }
        assert_eq!(ch.stats.unswitchable_count, 0);
    }

    #[test]
    fn stuck_devices_are_unswitchable() {
        let mut rng = seed::stream(10, 0, "ch");
        let mut x = CrossbarArray::sample(CrossbarConfig::with_shape(3, 3), &VariabilityConfig::deterministic(), &mut rng).unwrap();
        {
            let c = x.cell_mut(1, 1).unwrap();
            c.params.stuck = true;
            c.state.g = c.params.g_min;
        }
        let ch = extract_thresholds(&mut x, &StaircaseConfig::default(), &mut rng).unwrap();
        let rec = &ch.records[4];
        assert!(rec.unswitchable && rec.v_set_extracted.is_none());
        assert_eq!(ch.stats.unswitchable_count, 1);
        assert_eq!(ch.stats.switchable, 8);
    }
}
