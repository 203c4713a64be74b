//! Kirchhoff solve of the crossbar including wire resistance.
//!
//! Every crosspoint carries two nodes, one on its row wire and one on its
//! column wire. Each line is fed from a single terminal (left end for rows,
//! top end for columns) through one wire segment. Device branches are
//! linearized at their chord conductance `I(v)/v` and the linear system is
//! re-solved until node potentials stop moving. The conductance matrix is
//! symmetric positive definite and banded once crosspoints are numbered along
//! the shorter array dimension, so a banded Cholesky factorization is exact
//! and cheap.

use crate::device::{self, DeviceParams, DeviceState};
use crate::error::{Error, Result};

use super::{BranchLaw, CrossbarArray};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineBias {
    Driven(f64),
    Floating,
}

/// Boundary condition for every line terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasPlan {
    pub rows: Vec<LineBias>,
    pub cols: Vec<LineBias>,
}

impl BiasPlan {
    /// Columns driven by `v`, every row at virtual ground.
    pub fn vmm(rows: usize, v: &[f64]) -> Self {
        Self {
            rows: vec![LineBias::Driven(0.0); rows],
            cols: v.iter().map(|&x| LineBias::Driven(x)).collect(),
        }
    }

    /// One column at `v`, every other line grounded.
    pub fn single_read(rows: usize, cols: usize, row: usize, col: usize, v: f64) -> Self {
        let mut plan = Self {
            rows: vec![LineBias::Driven(0.0); rows],
            cols: vec![LineBias::Driven(0.0); cols],
        };
        plan.rows[row] = LineBias::Driven(0.0);
        plan.cols[col] = LineBias::Driven(v);
        plan
    }

    pub fn grounded_rows(&self) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, b)| matches!(b, LineBias::Driven(v) if *v == 0.0))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodalSolution {
    /// Row-wire potential at each crosspoint, row-major.
    pub row_node_v: Vec<f64>,
    /// Column-wire potential at each crosspoint, row-major.
    pub col_node_v: Vec<f64>,
    /// Current leaving each row line through its terminal.
    pub row_currents: Vec<f64>,
    /// Current entering each column line through its terminal.
    pub col_currents: Vec<f64>,
    pub iterations: usize,
}

fn branch_chord(law: BranchLaw, p: &DeviceParams, g: f64, v: f64) -> f64 {
    match law {
        BranchLaw::Linear => g,
        BranchLaw::Sinh => device::chord_conductance(p, &DeviceState { g }, v),
    }
}

fn branch_current(law: BranchLaw, p: &DeviceParams, g: f64, v: f64) -> f64 {
    match law {
        BranchLaw::Linear => g * v,
        BranchLaw::Sinh => device::current(p, &DeviceState { g }, v),
    }
}

pub(crate) fn solve(xbar: &CrossbarArray, gs: &[f64], bias: &BiasPlan) -> Result<NodalSolution> {
    let cfg = xbar.config();
    if bias.rows.len() != cfg.rows || bias.cols.len() != cfg.cols {
        return Err(Error::input(format!(
            "bias plan is {}x{}, array is {}x{}",
            bias.rows.len(),
            bias.cols.len(),
            cfg.rows,
            cfg.cols
        )));
    }
    let driven = |b: &LineBias| matches!(b, LineBias::Driven(_));
    if !bias.rows.iter().chain(&bias.cols).any(driven) {
        return Err(Error::input("at least one line must be driven"));
    }
    if let Some(v) = bias
        .rows
        .iter()
        .chain(&bias.cols)
        .filter_map(|b| match b {
            LineBias::Driven(v) => Some(*v),
            LineBias::Floating => None,
        })
        .find(|v| !(v.abs() <= device::MAX_IV_VOLTAGE))
    {
        return Err(Error::input(format!("line bias {v} V outside the device I-V range")));
    }
    if cfg.r_segment == 0.0 {
        solve_lumped(xbar, gs, bias)
    } else {
        solve_distributed(xbar, gs, bias)
    }
}

/// Ideal wires: every line is a single node. Only floating lines are unknown.
fn solve_lumped(xbar: &CrossbarArray, gs: &[f64], bias: &BiasPlan) -> Result<NodalSolution> {
    let cfg = xbar.config();
    let (rows, cols) = (cfg.rows, cfg.cols);
    let law = cfg.branch_law;
    let cells = xbar.cells();

    let mut unknown = Vec::new();
    let mut row_slot = vec![None; rows];
    let mut col_slot = vec![None; cols];
    let mut row_v = vec![0.0; rows];
    let mut col_v = vec![0.0; cols];
    for (i, b) in bias.rows.iter().enumerate() {
        match *b {
            LineBias::Driven(v) => row_v[i] = v,
            LineBias::Floating => {
                row_slot[i] = Some(unknown.len());
                unknown.push(());
            }
        }
    }
    for (j, b) in bias.cols.iter().enumerate() {
        match *b {
            LineBias::Driven(v) => col_v[j] = v,
            LineBias::Floating => {
                col_slot[j] = Some(unknown.len());
                unknown.push(());
            }
        }
    }

    let m = unknown.len();
    let mut iterations = 1;
    if m > 0 {
        let mut converged = false;
        let mut last_delta = f64::INFINITY;
        for it in 1..=cfg.nodal_max_iterations {
            iterations = it;
            let mut a = vec![0.0; m * m];
            let mut rhs = vec![0.0; m];
            for i in 0..rows {
                for j in 0..cols {
                    let k = i * cols + j;
                    let g = branch_chord(law, &cells[k].params, gs[k], col_v[j] - row_v[i]);
                    match (row_slot[i], col_slot[j]) {
                        (None, None) => {}
                        (Some(r), None) => {
                            a[r * m + r] += g;
                            rhs[r] += g * col_v[j];
                        }
                        (None, Some(c)) => {
                            a[c * m + c] += g;
                            rhs[c] += g * row_v[i];
                        }
                        (Some(r), Some(c)) => {
                            a[r * m + r] += g;
                            a[c * m + c] += g;
                            a[r * m + c] -= g;
                            a[c * m + r] -= g;
                        }
                    }
                }
            }
            let x = dense_solve(a, rhs, m)?;
            let mut delta: f64 = 0.0;
            for i in 0..rows {
                if let Some(s) = row_slot[i] {
                    delta = delta.max((x[s] - row_v[i]).abs());
                    row_v[i] = x[s];
                }
            }
            for j in 0..cols {
                if let Some(s) = col_slot[j] {
                    delta = delta.max((x[s] - col_v[j]).abs());
                    col_v[j] = x[s];
                }
            }
            last_delta = delta;
            if law == BranchLaw::Linear || (it > 1 && delta < cfg.nodal_tolerance) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Solver {
                iterations,
                residual: last_delta,
            });
        }
    }

    let mut row_currents = vec![0.0; rows];
    let mut col_currents = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            let k = i * cols + j;
            let cur = branch_current(law, &cells[k].params, gs[k], col_v[j] - row_v[i]);
            if row_slot[i].is_none() {
                row_currents[i] += cur;
            }
            if col_slot[j].is_none() {
                col_currents[j] += cur;
            }
        }
    }
    let mut row_node_v = Vec::with_capacity(rows * cols);
    let mut col_node_v = Vec::with_capacity(rows * cols);
    for &rv in row_v.iter() {
        for &cv in col_v.iter() {
            row_node_v.push(rv);
            col_node_v.push(cv);
        }
    }
    Ok(NodalSolution {
        row_node_v,
        col_node_v,
        row_currents,
        col_currents,
        iterations,
    })
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>, m: usize) -> Result<Vec<f64>> {
    for k in 0..m {
        let p = (k..m)
            .max_by(|&x, &y| a[x * m + k].abs().total_cmp(&a[y * m + k].abs()))
            .unwrap_or(k);
        if a[p * m + k] == 0.0 {
            return Err(Error::State("singular nodal matrix".into()));
        }
        if p != k {
            for c in 0..m {
                a.swap(k * m + c, p * m + c);
            }
            b.swap(k, p);
        }
        for r in k + 1..m {
            let f = a[r * m + k] / a[k * m + k];
            if f == 0.0 {
                continue;
            }
            for c in k..m {
                a[r * m + c] -= f * a[k * m + c];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = vec![0.0; m];
    for k in (0..m).rev() {
        let s: f64 = (k + 1..m).map(|c| a[k * m + c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k * m + k];
    }
    Ok(x)
}

/// Symmetric band matrix stored as its lower band, row by row.
struct Band {
    n: usize,
    b: usize,
    data: Vec<f64>,
}

impl Band {
    fn zeros(n: usize, b: usize) -> Self {
        Self {
            n,
            b,
            data: vec![0.0; n * (b + 1)],
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.b);
        i * (self.b + 1) + (j + self.b - i)
    }

    /// Stamp a conductance `g` between unknowns `p` and `q`.
    fn stamp(&mut self, p: usize, q: usize, g: f64) {
        let (hi, lo) = if p > q { (p, q) } else { (q, p) };
        let d = self.at(p, p);
        self.data[d] += g;
        let d = self.at(q, q);
        self.data[d] += g;
        let o = self.at(hi, lo);
        self.data[o] -= g;
    }

    fn add_diag(&mut self, p: usize, g: f64) {
        let d = self.at(p, p);
        self.data[d] += g;
    }

    /// In-place Cholesky factorization `A = L L^T`.
    fn factor(&mut self) -> Result<()> {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        for i in 0..n {
            let i0 = i.saturating_sub(b);
            for j in i0..=i {
                let k0 = i0.max(j.saturating_sub(b));
                let ri = i * w + (k0 + b - i);
                let rj = j * w + (k0 + b - j);
                let len = j - k0;
                let dot: f64 = self.data[ri..ri + len]
                    .iter()
                    .zip(&self.data[rj..rj + len])
                    .map(|(x, y)| x * y)
                    .sum();
                let idx = i * w + (j + b - i);
                let v = self.data[idx] - dot;
                if i == j {
                    if !(v > 0.0) {
                        return Err(Error::State("nodal matrix is not positive definite".into()));
                    }
                    self.data[idx] = v.sqrt();
                } else {
                    self.data[idx] = v / self.data[j * w + b];
                }
            }
        }
        Ok(())
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        for i in 0..n {
            let i0 = i.saturating_sub(b);
            let row = &self.data[i * w + (i0 + b - i)..i * w + b];
            let s: f64 = row.iter().zip(&x[i0..i]).map(|(l, y)| l * y).sum();
            x[i] = (x[i] - s) / self.data[i * w + b];
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let mut s = 0.0;
            for k in i + 1..=hi {
                s += self.data[k * w + (i + b - k)] * x[k];
            }
            x[i] = (x[i] - s) / self.data[i * w + b];
        }
    }
}

/// Unknown numbering that keeps the band narrow.
struct Layout {
    rows: usize,
    cols: usize,
    row_major: bool,
}

impl Layout {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_major: cols <= rows,
        }
    }

    fn bandwidth(&self) -> usize {
        2 * self.rows.min(self.cols)
    }

    #[inline]
    fn row_node(&self, i: usize, j: usize) -> usize {
        2 * self.site(i, j)
    }

    #[inline]
    fn col_node(&self, i: usize, j: usize) -> usize {
        2 * self.site(i, j) + 1
    }

    #[inline]
    fn site(&self, i: usize, j: usize) -> usize {
        if self.row_major {
            i * self.cols + j
        } else {
            j * self.rows + i
        }
    }
}

fn solve_distributed(xbar: &CrossbarArray, gs: &[f64], bias: &BiasPlan) -> Result<NodalSolution> {
    let cfg = xbar.config();
    let (rows, cols) = (cfg.rows, cfg.cols);
    let law = cfg.branch_law;
    let cells = xbar.cells();
    let gw = 1.0 / cfg.r_segment;
    let layout = Layout::new(rows, cols);
    let n = 2 * rows * cols;

    let mut wires = Band::zeros(n, layout.bandwidth());
    let mut rhs = vec![0.0; n];
    for i in 0..rows {
        for j in 0..cols.saturating_sub(1) {
            wires.stamp(layout.row_node(i, j), layout.row_node(i, j + 1), gw);
        }
        if let LineBias::Driven(v) = bias.rows[i] {
            wires.add_diag(layout.row_node(i, 0), gw);
            rhs[layout.row_node(i, 0)] += gw * v;
        }
    }
    for j in 0..cols {
        for i in 0..rows.saturating_sub(1) {
            wires.stamp(layout.col_node(i, j), layout.col_node(i + 1, j), gw);
        }
        if let LineBias::Driven(v) = bias.cols[j] {
            wires.add_diag(layout.col_node(0, j), gw);
            rhs[layout.col_node(0, j)] += gw * v;
        }
    }

    let mut chord: Vec<f64> = gs.to_vec();
    let mut x = vec![0.0; n];
    let mut iterations = 0;
    let mut last_delta = f64::INFINITY;
    let mut converged = false;
    for it in 1..=cfg.nodal_max_iterations {
        iterations = it;
        let mut m = Band {
            n,
            b: wires.b,
            data: wires.data.clone(),
        };
        for i in 0..rows {
            for j in 0..cols {
                m.stamp(layout.row_node(i, j), layout.col_node(i, j), chord[i * cols + j]);
            }
        }
        m.factor()?;
        let mut next = rhs.clone();
        m.solve_in_place(&mut next);
        let delta = if it == 1 {
            f64::INFINITY
        } else {
            next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        x = next;
        last_delta = delta;
        if law == BranchLaw::Linear || delta < cfg.nodal_tolerance {
            converged = true;
            break;
        }
        for i in 0..rows {
            for j in 0..cols {
                let k = i * cols + j;
                let v = x[layout.col_node(i, j)] - x[layout.row_node(i, j)];
                chord[k] = branch_chord(law, &cells[k].params, gs[k], v);
            }
        }
    }
    if !converged {
        return Err(Error::Solver {
            iterations,
            residual: last_delta,
        });
    }

    let mut row_node_v = vec![0.0; rows * cols];
    let mut col_node_v = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            row_node_v[i * cols + j] = x[layout.row_node(i, j)];
            col_node_v[i * cols + j] = x[layout.col_node(i, j)];
        }
    }
    let row_currents = (0..rows)
        .map(|i| match bias.rows[i] {
            LineBias::Driven(v) => (row_node_v[i * cols] - v) * gw,
            LineBias::Floating => 0.0,
        })
        .collect();
    let col_currents = (0..cols)
        .map(|j| match bias.cols[j] {
            LineBias::Driven(v) => (v - col_node_v[j]) * gw,
            LineBias::Floating => 0.0,
        })
        .collect();
    Ok(NodalSolution {
        row_node_v,
        col_node_v,
        row_currents,
        col_currents,
        iterations,
    })
}
