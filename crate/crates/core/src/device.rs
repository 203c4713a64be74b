//! Behavioral model of a single formed metal-oxide memristor.
//!
//! A device is described by sampled, immutable [`DeviceParams`] and a mutable
//! [`DeviceState`] holding its read conductance. The static I-V curve is a
//! scaled `sinh` whose curvature depends on state, and switching is a
//! voltage-threshold process with saturating increments toward the
//! conductance bounds.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Read voltage at which every conductance in the simulator is defined.
pub const V_READ: f64 = 0.25;

/// Sampled thresholds at or below this magnitude are redrawn so a read pulse
/// can never switch a device.
pub const THRESHOLD_FLOOR: f64 = 0.3;

/// Largest pulse amplitude accepted by [`apply_pulse`].
pub const MAX_PULSE_AMPLITUDE: f64 = 3.0;

/// Largest bias accepted by the static I-V model.
pub const MAX_IV_VOLTAGE: f64 = 2.5;

const DEFAULT_PULSE_WIDTH: f64 = 1e-3;

/// Population statistics for device-to-device variability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariabilityConfig {
    pub mean_v_set: f64,
    pub std_v_set: f64,
    pub mean_v_reset: f64,
    pub std_v_reset: f64,
    /// Pearson correlation between `v_set` and `|v_reset|`.
    pub threshold_correlation: f64,
    pub stuck_probability: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub read_noise_rel: f64,
    pub write_noise_rel: f64,
    /// Set switching rate, siemens per volt of overdrive.
    pub k_set: f64,
    /// Reset switching rate, siemens per volt of overdrive.
    pub k_reset: f64,
    /// ON-state nonlinearity `0.5 * I(1 V) / I(0.5 V)`.
    pub nl_on: f64,
    /// OFF-state nonlinearity `0.5 * I(0.25 V) / I(0.125 V)`.
    pub nl_off: f64,
}

impl Default for VariabilityConfig {
    fn default() -> Self {
        Self {
            mean_v_set: 1.19,
            std_v_set: 0.31,
            mean_v_reset: -1.39,
            std_v_reset: 0.37,
            threshold_correlation: 0.6,
            stuck_probability: 0.01125,
            g_min: 8e-6,
            g_max: 200e-6,
            read_noise_rel: 0.005,
            write_noise_rel: 0.1,
            k_set: 350e-6,
            k_reset: 1500e-6,
            nl_on: 2.0,
            nl_off: 1.3,
        }
    }
}

impl VariabilityConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.mean_v_set,
            self.std_v_set,
            self.mean_v_reset,
            self.std_v_reset,
            self.threshold_correlation,
            self.stuck_probability,
            self.g_min,
            self.g_max,
            self.read_noise_rel,
            self.write_noise_rel,
            self.k_set,
            self.k_reset,
            self.nl_on,
            self.nl_off,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("device parameters must be finite"));
        }
        if self.mean_v_set <= THRESHOLD_FLOOR {
            return Err(Error::config(format!(
                "mean_v_set must exceed the {THRESHOLD_FLOOR} V truncation floor"
            )));
        }
        if self.mean_v_reset >= -THRESHOLD_FLOOR {
            return Err(Error::config(format!(
                "mean_v_reset must be below -{THRESHOLD_FLOOR} V"
            )));
        }
        if self.std_v_set < 0.0 || self.std_v_reset < 0.0 {
            return Err(Error::config("threshold standard deviations must be >= 0"));
        }
        if !(-1.0..=1.0).contains(&self.threshold_correlation) {
            return Err(Error::config("threshold_correlation must lie in [-1, 1]"));
        }
        if !(0.0..=1.0).contains(&self.stuck_probability) {
            return Err(Error::config("stuck_probability must lie in [0, 1]"));
        }
        if !(self.g_min > 0.0 && self.g_min < self.g_max) {
            return Err(Error::config("need 0 < g_min < g_max"));
        }
        if self.read_noise_rel < 0.0 || self.write_noise_rel < 0.0 {
            return Err(Error::config("noise levels must be >= 0"));
        }
        if self.k_set <= 0.0 || self.k_reset <= 0.0 {
            return Err(Error::config("switching rates must be > 0"));
        }
        if self.nl_on < 1.0 || self.nl_off < 1.0 {
            return Err(Error::config("nonlinearities must be >= 1"));
        }
        Ok(())
    }

    /// Every variability source switched off: thresholds at their means,
    /// no stuck devices, no read or write noise.
    pub fn deterministic() -> Self {
        Self {
            std_v_set: 0.0,
            std_v_reset: 0.0,
            threshold_correlation: 0.0,
            stuck_probability: 0.0,
            read_noise_rel: 0.0,
            write_noise_rel: 0.0,
            ..Self::default()
        }
    }
}

/// Per-device physics, fixed at fabrication time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub v_set: f64,
    pub v_reset: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub nl_on: f64,
    pub nl_off: f64,
    pub k_set: f64,
    pub k_reset: f64,
    pub write_noise_rel: f64,
    pub stuck: bool,
}

/// Read conductance, `I(V_READ) / V_READ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    /// Signed amplitude; positive drives set at the top electrode.
    pub amplitude: f64,
    /// Accepted for completeness. Switching does not depend on it.
    pub width: f64,
}

impl PulseSpec {
    pub fn new(amplitude: f64) -> Self {
        Self {
            amplitude,
            width: DEFAULT_PULSE_WIDTH,
        }
    }
}

/// Draw one device from the population described by `cfg`.
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R, cfg: &VariabilityConfig) -> Result<DeviceParams> {
    cfg.validate()?;
    let rho = cfg.threshold_correlation;
    let ortho = (1.0 - rho * rho).max(0.0).sqrt();
    let (v_set, v_reset_mag) = loop {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let v_set = cfg.mean_v_set + cfg.std_v_set * z1;
        let v_reset_mag = -cfg.mean_v_reset + cfg.std_v_reset * (rho * z1 + ortho * z2);
        if v_set > THRESHOLD_FLOOR && v_reset_mag > THRESHOLD_FLOOR {
            break (v_set, v_reset_mag);
        }
    };
    let stuck = cfg.stuck_probability > 0.0 && rng.gen_bool(cfg.stuck_probability);
    Ok(DeviceParams {
        v_set,
        v_reset: -v_reset_mag,
        g_min: cfg.g_min,
        g_max: cfg.g_max,
        nl_on: cfg.nl_on,
        nl_off: cfg.nl_off,
        k_set: cfg.k_set,
        k_reset: cfg.k_reset,
        write_noise_rel: cfg.write_noise_rel,
        stuck,
    })
}

impl DeviceParams {
    /// Inverse voltage scale of the `sinh` I-V at conductance `g`, 1/V.
    ///
    /// The ON end is fit to the nonlinearity at 1 V, the OFF end to the
    /// nonlinearity at the read voltage. In between, the scale is
    /// interpolated log-linearly in `ln g`. Zero means a linear device.
    pub fn iv_curvature(&self, g: f64) -> f64 {
        let k_on = nonlinearity_curvature(self.nl_on, 1.0);
        let k_off = nonlinearity_curvature(self.nl_off, V_READ);
        let t = ((g / self.g_min).ln() / (self.g_max / self.g_min).ln()).clamp(0.0, 1.0);
        if k_on > 0.0 && k_off > 0.0 {
            ((1.0 - t) * k_off.ln() + t * k_on.ln()).exp()
        } else {
            (1.0 - t) * k_off + t * k_on
        }
    }

    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> DeviceState {
        if self.stuck {
            DeviceState { g: self.g_min }
        } else {
            DeviceState {
                g: rng.gen_range(self.g_min..=self.g_max),
            }
        }
    }
}

/// Solve `0.5 * I(v) / I(v/2) = nl` for a `sinh` law, i.e. `cosh(c * v / 2) = nl`.
fn nonlinearity_curvature(nl: f64, v: f64) -> f64 {
    if nl <= 1.0 {
        0.0
    } else {
        2.0 * nl.acosh() / v
    }
}

/// Static current through the device at bias `v` (odd in `v`).
pub fn current(p: &DeviceParams, s: &DeviceState, v: f64) -> f64 {
    let c = p.iv_curvature(s.g);
    if c == 0.0 {
        s.g * v
    } else {
        s.g * V_READ / (c * V_READ).sinh() * (c * v).sinh()
    }
}

/// Chord conductance `I(v) / v`, with the small-signal limit at `v = 0`.
pub fn chord_conductance(p: &DeviceParams, s: &DeviceState, v: f64) -> f64 {
    let c = p.iv_curvature(s.g);
    if c == 0.0 {
        return s.g;
    }
    let a = s.g * V_READ / (c * V_READ).sinh();
    let x = c * v;
    if x.abs() < 1e-8 {
        a * c * (1.0 + x * x / 6.0)
    } else {
        a * x.sinh() / v
    }
}

/// Apply one write pulse and return the new state.
pub fn apply_pulse<R: Rng + ?Sized>(
    p: &DeviceParams,
    s: &DeviceState,
    pulse: &PulseSpec,
    rng: &mut R,
) -> Result<DeviceState> {
    let v = pulse.amplitude;
    if !v.is_finite() || v.abs() > MAX_PULSE_AMPLITUDE {
        return Err(Error::input(format!(
            "pulse amplitude {v} V outside +/-{MAX_PULSE_AMPLITUDE} V"
        )));
    }
    if !(pulse.width > 0.0) {
        return Err(Error::input("pulse width must be > 0"));
    }
    Ok(switch(p, s, v, rng))
}

/// Threshold switching without range checks; callers guarantee `|v| <= MAX_PULSE_AMPLITUDE`.
pub(crate) fn switch<R: Rng + ?Sized>(p: &DeviceParams, s: &DeviceState, v: f64, rng: &mut R) -> DeviceState {
    if p.stuck || (v <= p.v_set && v >= p.v_reset) {
        return *s;
    }
    let span = p.g_max - p.g_min;
    let jitter = if p.write_noise_rel > 0.0 {
        let eta: f64 = rng.sample(StandardNormal);
        (1.0 + p.write_noise_rel * eta).max(0.0)
    } else {
        1.0
    };
    let g = if v > p.v_set {
        let dg = p.k_set * (v - p.v_set) * (p.g_max - s.g) / span * jitter;
        (s.g + dg).min(p.g_max)
    } else {
        let dg = p.k_reset * (p.v_reset - v) * (s.g - p.g_min) / span * jitter;
        (s.g - dg).max(p.g_min)
    };
    DeviceState { g }
}
