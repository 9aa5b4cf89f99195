//! Identity and invariant checks behind `gll verify`: each check computes a
//! scalar residual and compares it against a per-check tolerance. Quick runs
//! use N = 64, full runs N = 256 with tighter tolerances where the extra
//! resolution earns them.
//!
//! Tolerances can be overridden through `GLL_TOL_<CHECK_NAME>` environment
//! variables (uppercased check name), which the test suite uses to exercise
//! the failure path.

use gll_core::fields::{self, FourierMapSpec};
use gll_core::harness::{InitialKind, InitialSpec};
use gll_core::{
    curvature_apply, grid, interpolation_ratio, make_initial, map_derivative, rhs_classical_ll,
    rhs_extrinsic, rhs_intrinsic, rhs_regularized, sobolev_h, sobolev_w, PeriodicGrid,
    PotentialMatrix, Scheme, SphereField,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl Level {
    fn n_points(self) -> usize {
        match self {
            Level::Quick => 64,
            Level::Full => 256,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn tolerance_for(name: &str, default: f64) -> f64 {
    let var = format!("GLL_TOL_{}", name.to_uppercase());
    match std::env::var(&var) {
        Ok(text) => text.parse().unwrap_or(default),
        Err(_) => default,
    }
}

fn check(name: &'static str, measured: f64, default_tol: f64) -> CheckResult {
    let tolerance = tolerance_for(name, default_tol);
    CheckResult {
        name,
        measured,
        tolerance,
        passed: measured.is_finite() && measured <= tolerance,
    }
}

fn ensemble(n: usize, dim: usize, seeds: std::ops::Range<u64>) -> Vec<SphereField> {
    let grid = PeriodicGrid::new(n).expect("verify grid");
    seeds
        .map(|seed| {
            fields::random_smooth_field(
                grid,
                dim,
                &FourierMapSpec {
                    seed,
                    max_mode: 6,
                    decay: 3.0,
                    amplitude: 0.3,
                },
            )
            .expect("smooth field")
        })
        .collect()
}

fn diag_potential(dim: usize) -> PotentialMatrix {
    let diag: Vec<f64> = (1..=dim).map(|i| i as f64).collect();
    PotentialMatrix::diagonal(&diag)
}

/// Runs the whole suite and returns per-check results.
pub fn run(level: Level) -> Vec<CheckResult> {
    let n = level.n_points();
    let mut results = Vec::new();

    // The extrinsic and intrinsic writings of the flow agree pointwise.
    let mut agreement = 0.0f64;
    let mut tangency = 0.0f64;
    for dim in [3usize, 5] {
        let a = diag_potential(dim);
        for u in ensemble(n, dim, 0..5) {
            let ext = rhs_extrinsic(&u, &a).expect("rhs");
            let int = rhs_intrinsic(&u, &a).expect("rhs");
            agreement = agreement.max(ext.sup_distance(&int) / (1.0 + int.sup_norm()));
            tangency = tangency
                .max(ext.tangency_error())
                .max(int.tangency_error())
                .max(rhs_regularized(&u, &a, 1e-2).expect("rhs").tangency_error());
            if dim == 3 {
                tangency = tangency.max(rhs_classical_ll(&u, &a).expect("rhs").tangency_error());
            }
        }
    }
    results.push(check(
        "extrinsic_intrinsic_agreement",
        agreement,
        match level {
            Level::Quick => 1e-7,
            Level::Full => 1e-9,
        },
    ));
    results.push(check(
        "rhs_tangency",
        tangency,
        match level {
            Level::Quick => 1e-7,
            Level::Full => 1e-9,
        },
    ));

    // Iterated covariant derivative against its ambient closed form
    // D_x^2 u_x = u_xxx + 3 (u_x,u_xx) u + |u_x|^2 u_x.
    let mut identity = 0.0f64;
    for u in ensemble(n, 3, 10..14) {
        let g = u.grid();
        let ux = map_derivative(&u).expect("ux");
        let n2 = gll_core::covariant_derivative_iter(&u, &ux, 2).expect("chain");
        let d1 = grid::derivative_rows(g, u.data(), 1, Scheme::Spectral).expect("d1");
        let d2 = grid::derivative_rows(g, u.data(), 2, Scheme::Spectral).expect("d2");
        let d3 = grid::derivative_rows(g, u.data(), 3, Scheme::Spectral).expect("d3");
        let mut worst = 0.0f64;
        for i in 0..g.n_points() {
            let mut q = 0.0;
            let mut mixed = 0.0;
            for r in 0..3 {
                q += d1[[r, i]] * d1[[r, i]];
                mixed += d1[[r, i]] * d2[[r, i]];
            }
            let mut diff = 0.0;
            for r in 0..3 {
                let oracle = d3[[r, i]] + 3.0 * mixed * u.data()[[r, i]] + q * d1[[r, i]];
                let d = n2.data()[[r, i]] - oracle;
                diff += d * d;
            }
            worst = worst.max(diff.sqrt());
        }
        identity = identity.max(worst);
    }
    results.push(check("covariant_identity", identity, 1e-7));

    // Metric compatibility: int <D_x V, W> + int <V, D_x W> = 0.
    let mut ibp = 0.0f64;
    for u in ensemble(n, 3, 20..23) {
        let v = fields::random_smooth_section(
            &u,
            &FourierMapSpec {
                seed: 500,
                ..FourierMapSpec::default()
            },
        )
        .expect("section");
        let w = fields::random_smooth_section(
            &u,
            &FourierMapSpec {
                seed: 501,
                ..FourierMapSpec::default()
            },
        )
        .expect("section");
        let dv = gll_core::covariant_derivative(&u, &v).expect("dv");
        let dw = gll_core::covariant_derivative(&u, &w).expect("dw");
        let g = u.grid();
        let mut total = 0.0;
        for i in 0..g.n_points() {
            for r in 0..3 {
                total += dv.data()[[r, i]] * w.data()[[r, i]] + v.data()[[r, i]] * dw.data()[[r, i]];
            }
        }
        ibp = ibp.max((total * g.spacing()).abs());
    }
    results.push(check("covariant_integration_by_parts", ibp, 1e-8));

    // epsilon = 0 regularization reduces bit-for-bit to the intrinsic flow
    let mut reduction = 0.0f64;
    for u in ensemble(n, 3, 30..32) {
        let a = diag_potential(3);
        let reg = rhs_regularized(&u, &a, 0.0).expect("rhs");
        let int = rhs_intrinsic(&u, &a).expect("rhs");
        reduction = reduction.max(reg.sup_distance(&int));
    }
    results.push(check("epsilon_reduction_exact", reduction, 0.0));

    // Constant-curvature algebra: antisymmetry and the first Bianchi
    // identity on deterministic pseudo-random triples.
    let mut curvature = 0.0f64;
    let mut state = 0x243f_6a88_85a3_08d3u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    for _ in 0..64 {
        let x: Vec<f64> = (0..3).map(|_| next()).collect();
        let y: Vec<f64> = (0..3).map(|_| next()).collect();
        let z: Vec<f64> = (0..3).map(|_| next()).collect();
        let r_xy = curvature_apply(&x, &y, &z);
        let r_yx = curvature_apply(&y, &x, &z);
        let b1 = curvature_apply(&x, &y, &z);
        let b2 = curvature_apply(&y, &z, &x);
        let b3 = curvature_apply(&z, &x, &y);
        for i in 0..3 {
            curvature = curvature
                .max((r_xy[i] + r_yx[i]).abs())
                .max((b1[i] + b2[i] + b3[i]).abs());
        }
    }
    results.push(check("curvature_identities", curvature, 1e-12));

    // Interpolation ratio: exact scale invariance and ensemble maximum.
    let grid_v = PeriodicGrid::new(n).expect("grid");
    let mut scale_dev = 0.0f64;
    let mut ratio_max = 0.0f64;
    for seed in 0..40u64 {
        let u = fields::random_smooth_field(
            grid_v,
            3,
            &FourierMapSpec {
                seed,
                max_mode: 6,
                decay: 3.0,
                amplitude: 0.3,
            },
        )
        .expect("field");
        let v = fields::random_smooth_section(
            &u,
            &FourierMapSpec {
                seed: seed + 1000,
                ..FourierMapSpec::default()
            },
        )
        .expect("section");
        let r = interpolation_ratio(&u, &v).expect("ratio");
        let r2 = interpolation_ratio(&u, &v.scaled(2.0)).expect("ratio");
        let r3 = interpolation_ratio(&u, &v.scaled(3.0)).expect("ratio");
        scale_dev = scale_dev
            .max((r2 - r).abs() / r)
            .max((r3 - r).abs() / r);
        ratio_max = ratio_max.max(r);
    }
    results.push(check("interpolation_scale_invariance", scale_dev, 1e-14));
    // empirical regression cap on the ensemble constant; the bound itself is
    // existential, so only stability is asserted
    results.push(check("interpolation_ratio_max", ratio_max, 1.0));

    // Norm equivalence: classical vs geometric Sobolev norms of u_x control
    // each other up to cubic powers on a bounded ensemble.
    let mut equivalence = 0.0f64;
    for u in ensemble(n, 3, 40..60) {
        let h = sobolev_h(&u, 2);
        let w = sobolev_w(&u, 2);
        let r1 = w / h.max(h.powi(3));
        let r2 = h / w.max(w.powi(3));
        equivalence = equivalence.max(r1).max(r2);
    }
    results.push(check("norm_equivalence_bound", equivalence, 4.0));

    // The third-order flow commutes with the classical flow (same A):
    // finite-difference Lie bracket, normalized by the directional terms.
    let mut bracket_worst = 0.0f64;
    {
        let grid_b = PeriodicGrid::new(64).expect("grid");
        let a = diag_potential(3);
        let tau = 1e-5;
        for seed in [2u64, 7] {
            let u = make_initial(
                grid_b,
                &InitialSpec {
                    kind: InitialKind::RandomSmooth,
                    amplitude: 0.4,
                    max_mode: 5,
                    decay: 3.0,
                    seed,
                    sphere_dim: 2,
                },
            )
            .expect("field");
            let shift = |base: &SphereField, dir: &gll_core::TangentField, c: f64| {
                let raw = base.data() + &(dir.data() * c);
                SphereField::project_ambient(grid_b, &raw).expect("projected")
            };
            let f = |s: &SphereField| rhs_extrinsic(s, &a).expect("rhs");
            let g = |s: &SphereField| rhs_classical_ll(s, &a).expect("rhs");
            let fu = f(&u);
            let gu = g(&u);
            let df_g = (f(&shift(&u, &gu, tau)).data() - f(&shift(&u, &gu, -tau)).data())
                / (2.0 * tau);
            let dg_f = (g(&shift(&u, &fu, tau)).data() - g(&shift(&u, &fu, -tau)).data())
                / (2.0 * tau);
            let sup = |d: &gll_core::ndarray::Array2<f64>| {
                let (dim, nn) = d.dim();
                let mut w = 0.0f64;
                for i in 0..nn {
                    let mut s = 0.0;
                    for r in 0..dim {
                        s += d[[r, i]] * d[[r, i]];
                    }
                    w = w.max(s.sqrt());
                }
                w
            };
            let bracket = &df_g - &dg_f;
            bracket_worst = bracket_worst.max(sup(&bracket) / (sup(&df_g) + sup(&dg_f)));
        }
    }
    results.push(check("symmetry_bracket", bracket_worst, 1e-3));

    // Spectral building blocks: discrete integration by parts and
    // composition of derivative orders.
    {
        let g = PeriodicGrid::new(n).expect("grid");
        let f: Vec<f64> = g.nodes().map(|x| (2.0 * x).sin() + 0.3 * (5.0 * x).cos()).collect();
        let h: Vec<f64> = g.nodes().map(|x| (3.0 * x).cos() - 0.1 * x.sin()).collect();
        let df = grid::derivative(g, &f, 1, Scheme::Spectral).expect("df");
        let dh = grid::derivative(g, &h, 1, Scheme::Spectral).expect("dh");
        let ibp_grid: f64 = f
            .iter()
            .zip(&dh)
            .chain(df.iter().zip(&h))
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * g.spacing();
        results.push(check("grid_integration_by_parts", ibp_grid.abs(), 1e-10));

        let d1 = grid::derivative(g, &f, 1, Scheme::Spectral).expect("d1");
        let d1d2 = grid::derivative(g, &d1, 2, Scheme::Spectral).expect("d1d2");
        let d3 = grid::derivative(g, &f, 3, Scheme::Spectral).expect("d3");
        let comp = d1d2
            .iter()
            .zip(&d3)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        results.push(check("derivative_composition", comp, 1e-9));
    }

    // Tangency-after-projection and unit-norm maintenance of fields.
    let mut field_invariants = 0.0f64;
    for u in ensemble(n, 3, 60..64) {
        let ux = map_derivative(&u).expect("ux");
        field_invariants = field_invariants
            .max(ux.tangency_error())
            .max(u.constraint_error());
    }
    results.push(check("field_invariants", field_invariants, 1e-10));

    results
}

/// Pretty pass/fail table; returns true when every check passed.
pub fn print_table(results: &[CheckResult]) -> bool {
    println!(
        "{:<34} {:>13} {:>10}  {}",
        "check", "measured", "tolerance", "status"
    );
    let mut all = true;
    for r in results {
        println!(
            "{:<34} {:>13.4e} {:>10.1e}  {}",
            r.name,
            r.measured,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
        all &= r.passed;
    }
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    // the override test mutates the environment; keep the two runs apart
    static ENV_GUARD: Mutex<()> = Mutex::new(());

    #[test]
    fn quick_suite_passes() {
        let _guard = ENV_GUARD.lock().unwrap_or_else(|e| e.into_inner());
        let results = run(Level::Quick);
        for r in &results {
            assert!(
                r.passed,
                "check {} failed: {:.3e} > {:.3e}",
                r.name, r.measured, r.tolerance
            );
        }
    }

    #[test]
    fn tolerance_override_can_fail_a_check() {
        let _guard = ENV_GUARD.lock().unwrap_or_else(|e| e.into_inner());
        std::env::set_var("GLL_TOL_CURVATURE_IDENTITIES", "-1.0");
        let results = run(Level::Quick);
        std::env::remove_var("GLL_TOL_CURVATURE_IDENTITIES");
        let r = results
            .iter()
            .find(|r| r.name == "curvature_identities")
            .unwrap();
        assert!(!r.passed);
    }
}
