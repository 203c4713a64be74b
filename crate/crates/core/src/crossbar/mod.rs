//! Passive crossbar: device grid, reads, vector-matrix products and
//! half-biased writes.
//!
//! Rows are the horizontal (output, virtually grounded) lines and columns the
//! vertical (input) lines. A device at `(row, col)` sees `V_col - V_row`.

mod nodal;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use nodal::{BiasPlan, LineBias, NodalSolution};

use crate::device::{self, DeviceParams, DeviceState, VariabilityConfig, V_READ};
use crate::error::{Error, Result};

/// Largest write amplitude the array drivers can deliver.
pub const MAX_WRITE_AMPLITUDE: f64 = 2.5;

/// Largest per-column drive accepted by the ideal VMM (linear-regime reads).
pub const MAX_READ_DRIVE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    #[default]
    Ideal,
    Nodal,
}

impl std::str::FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(SolverMode::Ideal),
            "nodal" => Ok(SolverMode::Nodal),
            other => Err(Error::config(format!("unknown solver mode `{other}` (expected ideal or nodal)"))),
        }
    }
}

/// How a device branch conducts inside the nodal solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BranchLaw {
    /// Full `sinh` I-V, linearized by fixed-point iteration on the chord conductance.
    #[default]
    Sinh,
    /// Ohmic branch at the read conductance.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossbarConfig {
    pub rows: usize,
    pub cols: usize,
    /// Wire resistance between adjacent crosspoints, and between a line's
    /// terminal and its first crosspoint.
    pub r_segment: f64,
    pub solver_mode: SolverMode,
    pub branch_law: BranchLaw,
    pub v_read: f64,
    /// Convergence threshold on the largest node-potential update, volts.
    pub nodal_tolerance: f64,
    pub nodal_max_iterations: usize,
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            r_segment: 1.0,
            solver_mode: SolverMode::Ideal,
            branch_law: BranchLaw::Sinh,
            v_read: V_READ,
            nodal_tolerance: 1e-12,
            nodal_max_iterations: 100,
        }
    }
}

impl CrossbarConfig {
    pub fn with_shape(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::config("crossbar needs at least one row and one column"));
        }
        if !(self.r_segment >= 0.0 && self.r_segment.is_finite()) {
            return Err(Error::config("r_segment must be finite and >= 0"));
        }
        if !(self.v_read > 0.0 && self.v_read <= MAX_READ_DRIVE) {
            return Err(Error::config(format!("v_read must lie in (0, {MAX_READ_DRIVE}] V")));
        }
        if !(self.nodal_tolerance > 0.0) || self.nodal_max_iterations == 0 {
            return Err(Error::config("nodal solver needs a positive tolerance and iteration cap"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub params: DeviceParams,
    pub state: DeviceState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarArray {
    config: CrossbarConfig,
    cells: Vec<Cell>,
    read_noise_rel: f64,
    programmed: Option<(usize, usize)>,
}

impl CrossbarArray {
    /// Fabricate an array: every device drawn from `variability`, starting at a
    /// uniformly random formed-state conductance (stuck devices at `g_min`).
    pub fn sample<R: Rng + ?Sized>(
        config: CrossbarConfig,
        variability: &VariabilityConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        variability.validate()?;
        let n = config.rows * config.cols;
        let mut cells = Vec::with_capacity(n);
        for _ in 0..n {
            let params = device::sample_params(rng, variability)?;
            let state = params.initial_state(rng);
            cells.push(Cell { params, state });
        }
        Ok(Self {
            config,
            cells,
            read_noise_rel: variability.read_noise_rel,
            programmed: None,
        })
    }

    /// Assemble an array from explicit cells in row-major order.
    pub fn from_cells(config: CrossbarConfig, cells: Vec<Cell>, read_noise_rel: f64) -> Result<Self> {
        config.validate()?;
        if cells.len() != config.rows * config.cols {
            return Err(Error::input(format!(
                "{} cells supplied for a {}x{} array",
                cells.len(),
                config.rows,
                config.cols
            )));
        }
        for c in &cells {
            let p = &c.params;
            if !(p.v_set > 0.0 && p.v_reset < 0.0 && p.g_min < p.g_max) {
                return Err(Error::input("cell parameters violate device invariants"));
            }
            if !(c.state.g >= p.g_min && c.state.g <= p.g_max) {
                return Err(Error::input("cell conductance outside its bounds"));
            }
        }
        if !(read_noise_rel >= 0.0) {
            return Err(Error::input("read noise must be >= 0"));
        }
        Ok(Self {
            config,
            cells,
            read_noise_rel,
            programmed: None,
        })
    }

    pub fn config(&self) -> &CrossbarConfig {
        &self.config
    }

    pub fn rows(&self) -> usize {
        self.config.rows
    }

    pub fn cols(&self) -> usize {
        self.config.cols
    }

    pub fn read_noise_rel(&self) -> f64 {
        self.read_noise_rel
    }

    pub fn set_read_noise_rel(&mut self, rel: f64) {
        self.read_noise_rel = rel.max(0.0);
    }

    pub fn set_solver_mode(&mut self, mode: SolverMode) {
        self.config.solver_mode = mode;
    }

    pub fn set_r_segment(&mut self, r: f64) -> Result<()> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::input("r_segment must be finite and >= 0"));
        }
        self.config.r_segment = r;
        Ok(())
    }

    fn index(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.config.rows || col >= self.config.cols {
            return Err(Error::input(format!(
                "crosspoint ({row}, {col}) outside {}x{} array",
                self.config.rows, self.config.cols
            )));
        }
        Ok(row * self.config.cols + col)
    }

    pub fn cell(&self, row: usize, col: usize) -> Result<&Cell> {
        let i = self.index(row, col)?;
        Ok(&self.cells[i])
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> Result<&mut Cell> {
        let i = self.index(row, col)?;
        Ok(&mut self.cells[i])
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [Cell] {
        &mut self.cells
    }

    /// True read conductance, bypassing the measurement path.
    pub fn conductance(&self, row: usize, col: usize) -> Result<f64> {
        Ok(self.cell(row, col)?.state.g)
    }

    /// Row-major snapshot of every true read conductance.
    pub fn conductances(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.state.g).collect()
    }

    /// Force a device state, clamped to the device bounds. Stuck devices are
    /// left untouched.
    pub fn set_conductance(&mut self, row: usize, col: usize, g: f64) -> Result<()> {
        let cell = self.cell_mut(row, col)?;
        if !cell.params.stuck {
            cell.state.g = g.clamp(cell.params.g_min, cell.params.g_max);
        }
        Ok(())
    }

    /// Record that the top-left `rows x cols` block holds programmed weights.
    pub fn mark_programmed(&mut self, rows: usize, cols: usize) {
        self.programmed = Some((rows.min(self.config.rows), cols.min(self.config.cols)));
    }

    pub fn programmed_region(&self) -> Option<(usize, usize)> {
        self.programmed
    }

    fn read_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.read_noise_rel > 0.0 {
            let e: f64 = rng.sample(StandardNormal);
            1.0 + self.read_noise_rel * e
        } else {
            1.0
        }
    }

    fn check_drive(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.config.cols {
            return Err(Error::input(format!(
                "drive vector has {} entries, array has {} columns",
                v.len(),
                self.config.cols
            )));
        }
        if let Some(bad) = v.iter().find(|x| !(x.abs() <= MAX_READ_DRIVE)) {
            return Err(Error::input(format!(
                "read drive {bad} V outside the +/-{MAX_READ_DRIVE} V linear regime"
            )));
        }
        Ok(())
    }

    /// Noise-free row currents `I_row = sum_col g[row][col] * v[col]`.
    pub fn ideal_vmm(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_drive(v)?;
        Ok(self.ideal_rows(0..self.config.rows, v, None::<&mut rand_chacha::ChaCha8Rng>))
    }

    /// As [`ideal_vmm`](Self::ideal_vmm) with per-device multiplicative read noise.
    pub fn ideal_vmm_noisy<R: Rng + ?Sized>(&self, v: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check_drive(v)?;
        Ok(self.ideal_rows(0..self.config.rows, v, Some(rng)))
    }

    fn ideal_rows<R: Rng + ?Sized>(
        &self,
        rows: std::ops::Range<usize>,
        v: &[f64],
        mut rng: Option<&mut R>,
    ) -> Vec<f64> {
        let cols = self.config.cols;
        rows.map(|r| {
            let line = &self.cells[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (cell, &x) in line.iter().zip(v) {
                if x == 0.0 {
                    continue;
                }
                let f = match rng.as_deref_mut() {
                    Some(rng) => self.read_factor(rng),
                    None => 1.0,
                };
                acc += cell.state.g * f * x;
            }
            acc
        })
        .collect()
    }

    /// Row currents for a column drive using the configured solver, with read noise.
    ///
    /// Only the first `out_rows` rows are returned; every row is held at
    /// virtual ground.
    pub fn vmm<R: Rng + ?Sized>(&self, v: &[f64], out_rows: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.check_drive(v)?;
        let out_rows = out_rows.min(self.config.rows);
        match self.config.solver_mode {
            SolverMode::Ideal => Ok(self.ideal_rows(0..out_rows, v, Some(rng))),
            SolverMode::Nodal => {
                let gs = self.noisy_conductances(rng);
                let bias = BiasPlan::vmm(self.config.rows, v);
                let sol = nodal::solve(self, &gs, &bias)?;
                Ok(sol.row_currents[..out_rows].to_vec())
            }
        }
    }

    fn noisy_conductances<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.cells.iter().map(|c| c.state.g * self.read_factor(rng)).collect()
    }

    /// Kirchhoff solution of the whole network under `bias`, noise free.
    pub fn solve_nodal(&self, bias: &BiasPlan) -> Result<NodalSolution> {
        let gs = self.conductances();
        nodal::solve(self, &gs, bias)
    }

    /// Measure one device at `v_read`: the column is driven, the row is held at
    /// virtual ground and the current is taken at the row terminal.
    ///
    /// In nodal mode every unselected line is held at ground, so the reading
    /// includes IR drop and leakage along the selected lines.
    pub fn read_conductance<R: Rng + ?Sized>(&self, row: usize, col: usize, rng: &mut R) -> Result<f64> {
        let i = self.index(row, col)?;
        match self.config.solver_mode {
            SolverMode::Ideal => Ok(self.cells[i].state.g * self.read_factor(rng)),
            SolverMode::Nodal => {
                let bias = BiasPlan::single_read(self.config.rows, self.config.cols, row, col, self.config.v_read);
                let sol = self.solve_nodal(&bias)?;
                Ok(sol.row_currents[row] / self.config.v_read * self.read_factor(rng))
            }
        }
    }

    /// Voltage seen by every device under the V/2 scheme for a write at `(row, col)`.
    pub fn write_voltage(&self, row: usize, col: usize, amplitude: f64, at_row: usize, at_col: usize) -> f64 {
        match (at_row == row, at_col == col) {
            (true, true) => amplitude,
            (true, false) | (false, true) => amplitude / 2.0,
            (false, false) => 0.0,
        }
    }

    /// Half-biased write: the selected row is driven at `-amplitude/2`, the
    /// selected column at `+amplitude/2`, every other line at 0 V. Wires are
    /// treated as ideal.
    pub fn apply_write<R: Rng + ?Sized>(&mut self, row: usize, col: usize, amplitude: f64, rng: &mut R) -> Result<()> {
        let sel = self.index(row, col)?;
        if !amplitude.is_finite() || amplitude.abs() > MAX_WRITE_AMPLITUDE {
            return Err(Error::input(format!(
                "write amplitude {amplitude} V outside +/-{MAX_WRITE_AMPLITUDE} V"
            )));
        }
        let cols = self.config.cols;
        let half = amplitude / 2.0;
        for c in 0..cols {
            let i = row * cols + c;
            let v = if i == sel { amplitude } else { half };
            let cell = &mut self.cells[i];
            cell.state = device::switch(&cell.params, &cell.state, v, rng);
        }
        for r in (0..self.config.rows).filter(|&r| r != row) {
            let cell = &mut self.cells[r * cols + col];
            cell.state = device::switch(&cell.params, &cell.state, half, rng);
        }
        Ok(())
    }
}
