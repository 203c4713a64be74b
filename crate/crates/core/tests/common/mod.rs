//! Helpers shared by the integration tests and the acceptance suite.

#![allow(dead_code)]

use std::path::PathBuf;

use memxbar::crossbar::{BiasPlan, BranchLaw, CrossbarArray, LineBias};
use memxbar::device::{self, DeviceState};
use memxbar::io::mnist;
use nalgebra::{DMatrix, DVector};

/// MNIST directory from `MEMXBAR_MNIST_DIR`, else `data/mnist` at the
/// workspace root. `None` when the four files are not there.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MEMXBAR_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let files = [mnist::TRAIN_IMAGES, mnist::TRAIN_LABELS, mnist::TEST_IMAGES, mnist::TEST_LABELS];
    files.iter().all(|f| dir.join(f).is_file()).then_some(dir)
}

fn branch(x: &CrossbarArray, i: usize, j: usize, v: f64) -> f64 {
    let c = x.cell(i, j).unwrap();
    match x.config().branch_law {
        BranchLaw::Linear => c.state.g * v,
        BranchLaw::Sinh => device::current(&c.params, &DeviceState { g: c.state.g }, v),
    }
}

/// Row terminal currents of the full network. Unknowns are the row-wire node
/// (index `i*cols+j`) and the column-wire node (offset `rows*cols`) at every
/// crosspoint. Rows are fed from the left end, columns from the top end.
pub fn dense_oracle(x: &CrossbarArray, bias: &BiasPlan) -> Vec<f64> {
    let (rows, cols) = (x.rows(), x.cols());
    let gw = 1.0 / x.config().r_segment;
    let n = 2 * rows * cols;
    let rn = |i: usize, j: usize| i * cols + j;
    let cn = |i: usize, j: usize| rows * cols + i * cols + j;
    let drive = |b: &LineBias| match b {
        LineBias::Driven(v) => Some(*v),
        LineBias::Floating => None,
    };

    let residual = |u: &DVector<f64>| -> DVector<f64> {
        // Net current leaving each node.
        let mut f = DVector::zeros(n);
        for i in 0..rows {
            for j in 0..cols {
                let (a, b) = (rn(i, j), cn(i, j));
                let id = branch(x, i, j, u[b] - u[a]);
                f[b] += id;
                f[a] -= id;
                if j + 1 < cols {
                    let w = gw * (u[a] - u[rn(i, j + 1)]);
                    f[a] += w;
                    f[rn(i, j + 1)] -= w;
                }
                if i + 1 < rows {
                    let w = gw * (u[b] - u[cn(i + 1, j)]);
                    f[b] += w;
                    f[cn(i + 1, j)] -= w;
                }
            }
            if let Some(v) = drive(&bias.rows[i]) {
                f[rn(i, 0)] += gw * (u[rn(i, 0)] - v);
            }
        }
        for j in 0..cols {
            if let Some(v) = drive(&bias.cols[j]) {
                f[cn(0, j)] += gw * (u[cn(0, j)] - v);
            }
        }
        f
    };

    let mut u = DVector::zeros(n);
    for _ in 0..100 {
        let f = residual(&u);
        let mut jac = DMatrix::zeros(n, n);
        let h = 1e-7;
        for k in 0..n {
            let mut up = u.clone();
            up[k] += h;
            let mut dn = u.clone();
            dn[k] -= h;
            jac.set_column(k, &((residual(&up) - residual(&dn)) / (2.0 * h)));
        }
        let step = jac.lu().solve(&(-&f)).expect("nonsingular Jacobian");
        u += &step;
        if step.amax() < 1e-15 {
            break;
        }
    }
    assert!(residual(&u).amax() < 1e-15, "oracle residual {}", residual(&u).amax());

    (0..rows)
        .map(|i| match drive(&bias.rows[i]) {
            // Current flowing out of the row through its terminal.
            Some(v) => gw * (u[rn(i, 0)] - v),
            None => 0.0,
        })
        .collect()
}
