//! Nodal solver against the dense Newton oracle in `common`.

mod common;

use memxbar::crossbar::{BiasPlan, BranchLaw, CrossbarArray, CrossbarConfig, LineBias, SolverMode};
use memxbar::device::VariabilityConfig;
use memxbar::seed;
use rand::Rng;

fn array(rows: usize, cols: usize, r: f64, law: BranchLaw, s: u64) -> CrossbarArray {
    let cfg = CrossbarConfig {
        rows,
        cols,
        r_segment: r,
        solver_mode: SolverMode::Nodal,
        branch_law: law,
        ..CrossbarConfig::default()
    };
    let mut rng = seed::stream(s, 0, "oracle");
    let mut x = CrossbarArray::sample(cfg, &VariabilityConfig::deterministic(), &mut rng).unwrap();
    for i in 0..rows {
        for j in 0..cols {
            x.set_conductance(i, j, rng.gen_range(10e-6..100e-6)).unwrap();
        }
    }
    x
}

fn check(rows: usize, cols: usize, law: BranchLaw, s: u64, bias: BiasPlan) {
    let x = array(rows, cols, 1.0, law, s);
    let expect = common::dense_oracle(&x, &bias);
    let got = x.solve_nodal(&bias).unwrap().row_currents;
    let scale = expect.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (g, e) in got.iter().zip(&expect) {
        assert!((g - e).abs() <= 1e-9 * scale, "{law:?} {rows}x{cols}: {g:e} vs {e:e}");
    }
}

#[test]
fn vmm_drives_match_dense_oracle() {
    for law in [BranchLaw::Linear, BranchLaw::Sinh] {
        for (n, s) in [(2, 1), (2, 2), (4, 3), (4, 4)] {
            let mut rng = seed::stream(s, 1, "drive");
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.3)).collect();
            check(n, n, law, s, BiasPlan::vmm(n, &v));
        }
    }
}

#[test]
fn single_reads_match_dense_oracle() {
    for law in [BranchLaw::Linear, BranchLaw::Sinh] {
        check(2, 2, law, 7, BiasPlan::single_read(2, 2, 1, 0, 0.25));
        check(4, 4, law, 8, BiasPlan::single_read(4, 4, 2, 3, 0.25));
    }
}

#[test]
fn floating_lines_match_dense_oracle() {
    for law in [BranchLaw::Linear, BranchLaw::Sinh] {
        let mut bias = BiasPlan::single_read(4, 4, 1, 1, 0.25);
        bias.rows[3] = LineBias::Floating;
        bias.cols[0] = LineBias::Floating;
        check(4, 4, law, 9, bias);
    }
}
