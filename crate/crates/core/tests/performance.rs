//! Oracle tests for performance operators and scores.
//!
//! The two SDP routes to the maximum score check each other through strong
//! duality, single-tooth instances are checked against Bloch-ball grids and
//! closed forms, and the smoothed quantities are bracketed by the dimension
//! bound, so no optimized value is trusted on its own.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::Rng;

use combkit_core::network::{
    choi_of_map, outcome_probabilities, random_comb, random_dual_comb, random_tester, Comb,
    NetworkSignature,
};
use combkit_core::performance::{
    asymptotic_series, lipschitz_check, multiplicativity_check, score, wmax_dual, wmax_primal,
    wmax_smooth, PerformanceError, PerformanceOperator, ScoreOptimizer,
};
use combkit_core::tensorspace::LabeledOperator;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    let g = DMatrix::from_fn(d, d, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    &g * g.adjoint()
}

/// A random positive performance operator on the canonical wires, scaled to
/// keep the score near unit magnitude.
fn random_performance(sig: &NetworkSignature, seed: u64) -> PerformanceOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = sig.total_dim();
    let mat = random_psd(&mut rng, d).map(|v| v / d as f64);
    let op = LabeledOperator::new(sig.canonical_labels(), mat).unwrap();
    PerformanceOperator::new(op).unwrap()
}

fn full_rank_comb(sig: &NetworkSignature, seed: u64, mem: usize) -> Comb {
    let sampled = random_comb(sig, seed, mem).unwrap().comb;
    let uniform = LabeledOperator::identity(sig.canonical_labels())
        .scale(1.0 / sig.out_dim_product() as f64);
    let op = sampled
        .op()
        .scale(0.85)
        .add(&uniform.reorder_like(sampled.op()).unwrap().scale(0.15))
        .unwrap();
    Comb::new(op).unwrap()
}

fn bloch(r: [f64; 3]) -> DMatrix<C64> {
    DMatrix::from_row_slice(
        2,
        2,
        &[
            c(0.5 * (1.0 + r[2]), 0.0),
            c(0.5 * r[0], -0.5 * r[1]),
            c(0.5 * r[0], 0.5 * r[1]),
            c(0.5 * (1.0 - r[2]), 0.0),
        ],
    )
}

/// Coarse-to-fine grid optimization over the Bloch ball.
fn bloch_grid_opt<F>(f: F, maximize: bool) -> f64
where
    F: Fn([f64; 3]) -> Option<f64>,
{
    let mut best_r = [0.0f64; 3];
    let mut best_v: Option<f64> = None;
    let mut center = [0.0f64; 3];
    let mut span = 1.0f64;
    for round in 0..8 {
        let steps = if round == 0 { 8 } else { 4 };
        let step = 2.0 * span / steps as f64;
        for ix in 0..=steps {
            for iy in 0..=steps {
                for iz in 0..=steps {
                    let r = [
                        center[0] - span + ix as f64 * step,
                        center[1] - span + iy as f64 * step,
                        center[2] - span + iz as f64 * step,
                    ];
                    let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                    if norm > 1.0 {
                        continue;
                    }
                    if let Some(v) = f(r) {
                        let better = match best_v {
                            None => true,
                            Some(b) => {
                                if maximize {
                                    v > b
                                } else {
                                    v < b
                                }
                            }
                        };
                        if better {
                            best_v = Some(v);
                            best_r = r;
                        }
                    }
                }
            }
        }
        center = best_r;
        span = 2.0 * span / steps as f64;
    }
    best_v.expect("grid found no feasible point")
}

fn max_eig(m: &DMatrix<C64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

fn min_eig(m: &DMatrix<C64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn inv_sqrt_2x2(m: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = m.clone().symmetric_eigen();
    DMatrix::from_fn(2, 2, |r, cc| {
        let mut acc = c(0.0, 0.0);
        for k in 0..2 {
            acc += eig.eigenvectors[(r, k)] * eig.eigenvectors[(cc, k)].conj()
                / c(eig.eigenvalues[k].sqrt(), 0.0);
        }
        acc
    })
}

/// The best scale at a fixed single-tooth dual element I (x) sigma: the top
/// eigenvalue of the whitened operator.
fn lambda_at_sigma(omega: &DMatrix<C64>, sigma: &DMatrix<C64>) -> Option<f64> {
    if min_eig(sigma) < 1e-6 {
        return None;
    }
    let w = DMatrix::<C64>::identity(2, 2).kronecker(&inv_sqrt_2x2(sigma));
    Some(max_eig(&(&w * omega * &w)))
}

#[test]
fn score_matches_weighted_outcome_probabilities() {
    for (si, sig_text) in ["2,2", "2,2;2,2"].iter().enumerate() {
        let sig = NetworkSignature::parse(sig_text).unwrap();
        let tester = random_tester(&sig, 3, 900 + si as u64, 2).unwrap().tester;
        let weights = [0.3, 1.1, 0.4];
        let po = PerformanceOperator::from_tester(&tester, &weights).unwrap();

        let mut rebuilt = tester.outcomes[0].scale(weights[0]);
        for (t, &w) in tester.outcomes.iter().zip(&weights).skip(1) {
            rebuilt = rebuilt.add(&t.reorder_like(&rebuilt).unwrap().scale(w)).unwrap();
        }
        let residual = rebuilt
            .sub(&po.omega().reorder_like(&rebuilt).unwrap())
            .unwrap()
            .frobenius_norm();
        assert!(residual <= 1e-10, "provenance reconstruction residual {residual}");

        for trial in 0..4 {
            let comb = full_rank_comb(&sig, 910 + 10 * si as u64 + trial, 2);
            let probs = outcome_probabilities(&tester, &comb).unwrap();
            let expected: f64 = probs.iter().zip(&weights).map(|(p, w)| p * w).sum();
            let got = score(&po, &comb).unwrap();
            assert!(
                (got - expected).abs() <= 1e-9,
                "score {got} vs weighted probabilities {expected}"
            );
        }
    }
}

#[test]
fn dual_comb_operators_score_one_on_every_comb() {
    for (si, sig_text) in ["2,2", "2,2;2,2"].iter().enumerate() {
        let sig = NetworkSignature::parse(sig_text).unwrap();
        let gamma = random_dual_comb(&sig, 920 + si as u64, 2).unwrap();
        let po = PerformanceOperator::new(gamma.op().clone()).unwrap();
        for trial in 0..5 {
            let comb = full_rank_comb(&sig, 930 + 10 * si as u64 + trial, 2);
            let got = score(&po, &comb).unwrap();
            assert!((got - 1.0).abs() <= 1e-9, "dual comb scored {got}");
        }
    }
}

#[test]
fn wmax_of_dual_comb_elements_is_one() {
    for (si, sig_text) in ["2,2", "2,2;2,2"].iter().enumerate() {
        let sig = NetworkSignature::parse(sig_text).unwrap();
        let gamma = random_dual_comb(&sig, 940 + si as u64, 2).unwrap();
        let po = PerformanceOperator::new(gamma.op().clone()).unwrap();

        let primal = wmax_primal(&po).unwrap();
        assert!((primal.value - 1.0).abs() <= 1e-6, "primal value {}", primal.value);
        assert!(primal.certificate.gap <= 1e-6, "primal gap {}", primal.certificate.gap);
        let theta = match &primal.optimizer {
            ScoreOptimizer::Dual(t) => t,
            other => panic!("primal optimizer should be a dual element, got {other:?}"),
        };
        assert!(theta.validate(1e-6).unwrap().is_valid());

        let dual = wmax_dual(&po).unwrap();
        assert!((dual.value - 1.0).abs() <= 1e-6, "dual value {}", dual.value);
        let m = match &dual.optimizer {
            ScoreOptimizer::Comb(m) => m,
            other => panic!("dual optimizer should be a comb, got {other:?}"),
        };
        assert!(m.validate(1e-6).unwrap().is_valid());
        let replay = score(&po, m).unwrap();
        assert!(
            (replay - dual.value).abs() <= 1e-6,
            "optimizer replays {replay} vs reported {}",
            dual.value
        );
    }
}

#[test]
fn identity_channel_choi_reaches_dimension_squared() {
    let sig = NetworkSignature::parse("2,2").unwrap();
    let eye = DMatrix::<C64>::identity(2, 2);
    let choi = choi_of_map(&[eye], sig.out_label(1), sig.in_label(1)).unwrap();
    let po = PerformanceOperator::new(choi).unwrap();

    let primal = wmax_primal(&po).unwrap();
    let dual = wmax_dual(&po).unwrap();
    assert!((primal.value - 4.0).abs() <= 1e-5, "primal {}", primal.value);
    assert!((dual.value - 4.0).abs() <= 1e-5, "dual {}", dual.value);

    let omega = po.omega().matrix().clone();
    let grid = bloch_grid_opt(
        |r| {
            let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if norm > 0.995 {
                return None;
            }
            lambda_at_sigma(&omega, &bloch(r))
        },
        false,
    );
    assert!((grid - 4.0).abs() <= 1e-2, "grid oracle {grid}");
}

#[test]
fn wmax_routes_agree_on_random_operators() {
    for (si, sig_text) in ["2,2", "2,2;2,2"].iter().enumerate() {
        let sig = NetworkSignature::parse(sig_text).unwrap();
        for trial in 0..5 {
            let po = random_performance(&sig, 950 + 20 * si as u64 + trial);
            let primal = wmax_primal(&po).unwrap();
            let dual = wmax_dual(&po).unwrap();
            let tol = 1e-6 * primal.value.abs().max(1.0);
            assert!(
                (primal.value - dual.value).abs() <= tol,
                "{sig_text} trial {trial}: primal {} vs dual {}",
                primal.value,
                dual.value
            );

            let theta = match &primal.optimizer {
                ScoreOptimizer::Dual(t) => t,
                other => panic!("unexpected optimizer {other:?}"),
            };
            let slack = theta
                .op()
                .scale(primal.value)
                .sub(&po.omega().reorder_like(theta.op()).unwrap())
                .unwrap()
                .min_eigenvalue()
                .unwrap();
            assert!(
                slack >= -1e-6 * primal.value.max(1.0),
                "certificate violates the operator inequality by {slack}"
            );
        }
    }
}

#[test]
fn wmax_is_homogeneous_and_monotone() {
    let sig = NetworkSignature::parse("2,2").unwrap();
    let po = random_performance(&sig, 971);
    let base = wmax_primal(&po).unwrap().value;

    let scaled = PerformanceOperator::new(po.omega().scale(3.7)).unwrap();
    let scaled_value = wmax_primal(&scaled).unwrap().value;
    assert!(
        (scaled_value - 3.7 * base).abs() <= 1e-6 * scaled_value.max(1.0),
        "homogeneity broke: {scaled_value} vs {}",
        3.7 * base
    );

    let mut rng = ChaCha8Rng::seed_from_u64(972);
    let bump = random_psd(&mut rng, 4).map(|v| v / 8.0);
    let bigger = LabeledOperator::new(sig.canonical_labels(), po.omega().matrix() + bump).unwrap();
    let bigger_value = wmax_primal(&PerformanceOperator::new(bigger).unwrap()).unwrap().value;
    assert!(
        bigger_value >= base - 1e-8,
        "monotonicity broke: {bigger_value} < {base}"
    );
}

#[test]
fn transpose_reaches_the_same_optimum() {
    let sig = NetworkSignature::parse("2,2;2,2").unwrap();
    let po = random_performance(&sig, 973);
    let transposed = PerformanceOperator::new(po.omega().transpose_all()).unwrap();
    let a = wmax_primal(&po).unwrap().value;
    let b = wmax_primal(&transposed).unwrap().value;
    assert!((a - b).abs() <= 1e-6 * a.max(1.0), "transpose moved the optimum: {a} vs {b}");
}

#[test]
fn single_tooth_wmax_matches_a_bloch_grid() {
    let sig = NetworkSignature::parse("2,2").unwrap();
    for trial in 0..3 {
        let po = random_performance(&sig, 980 + trial);
        let value = wmax_primal(&po).unwrap().value;
        let omega = po.omega().matrix().clone();
        let grid = bloch_grid_opt(
            |r| {
                let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                if norm > 0.995 {
                    return None;
                }
                lambda_at_sigma(&omega, &bloch(r))
            },
            false,
        );
        assert!(
            (grid - value).abs() <= 5e-3 * value.max(1.0),
            "trial {trial}: grid {grid} vs sdp {value}"
        );
    }
}

#[test]
fn smooth_bracket_collapses_at_zero_radius() {
    let sig = NetworkSignature::parse("2,2").unwrap();
    let po = random_performance(&sig, 990);
    let (lower, upper) = wmax_smooth(&po, 0.0, 5).unwrap();
    let value = wmax_primal(&po).unwrap().value;
    assert!((lower - upper).abs() <= 1e-9, "bracket did not collapse: {lower} vs {upper}");
    assert!((lower - value).abs() <= 1e-6 * value.max(1.0));
}

#[test]
fn smooth_bracket_on_a_dual_comb_follows_the_dimension_bound() {
    let sig = NetworkSignature::parse("2,2").unwrap();
    let gamma = random_dual_comb(&sig, 991, 2).unwrap();
    let po = PerformanceOperator::new(gamma.op().clone()).unwrap();
    let eps = 0.01;
    let (lower, upper) = wmax_smooth(&po, eps, 5).unwrap();
    assert!(lower >= 1.0 - 1e-6, "smoothing lost the center: {lower}");
    assert!(lower <= upper + 1e-9, "bracket inverted: {lower} > {upper}");
    let dim_factor = sig.out_dim_product() as f64;
    assert!(
        (upper - (1.0 + eps * dim_factor)).abs() <= 1e-5,
        "upper bound {upper} is not value + eps * dims"
    );
}

#[test]
fn smooth_lower_bound_matches_the_ball_oracle_on_a_state() {
    // With a one-dimensional input the dual set is the identity alone, so
    // w_max is the top eigenvalue and the smoothing ball can be swept
    // directly: push weight along a traceless direction as far as positivity
    // and the trace-norm budget allow.
    let sig = NetworkSignature::parse("1,2").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(992);
    let eps = 0.1f64;
    for trial in 0..3 {
        let mat = random_psd(&mut rng, 2).map(|v| v / 2.0) + DMatrix::identity(2, 2).scale(0.3);
        let op = LabeledOperator::new(sig.canonical_labels(), mat.clone()).unwrap();
        let po = PerformanceOperator::new(op).unwrap();

        let eigs = mat.clone().symmetric_eigen().eigenvalues;
        let top = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bottom = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let expected = top + eps.min(bottom);

        let oracle = bloch_grid_opt(
            |r| {
                let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                if norm < 0.3 {
                    return None;
                }
                let dir = bloch([r[0] / norm, r[1] / norm, r[2] / norm])
                    - DMatrix::identity(2, 2).scale(0.5);
                let mut lo = 0.0f64;
                let mut hi = eps;
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if min_eig(&(&mat + dir.scale(2.0 * mid))) >= 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(max_eig(&(&mat + dir.scale(2.0 * lo))))
            },
            true,
        );
        assert!(
            (oracle - expected).abs() <= 1e-3,
            "trial {trial}: ball oracle {oracle} vs closed form {expected}"
        );

        let (lower, upper) = wmax_smooth(&po, eps, 6).unwrap();
        assert!(
            (lower - oracle).abs() <= 1e-2 * oracle.max(1.0),
            "trial {trial}: smooth lower {lower} vs oracle {oracle}"
        );
        assert!(upper >= lower - 1e-9);
        assert!(
            (upper - (top + 2.0 * eps)).abs() <= 1e-5,
            "upper {upper} vs top + eps * dims {}",
            top + 2.0 * eps
        );
    }
}

#[test]
fn smooth_bracket_respects_ordering_across_radii() {
    let sig = NetworkSignature::parse("2,2").unwrap();
    let po = random_performance(&sig, 993);
    let base = wmax_primal(&po).unwrap().value;
    for eps in [0.0, 0.05, 0.2] {
        let (lower, upper) = wmax_smooth(&po, eps, 4).unwrap();
        assert!(lower <= upper + 1e-9, "eps {eps}: inverted bracket");
        assert!(lower >= base - 1e-6, "eps {eps}: lost the center value");
    }
}

#[test]
fn multiplicativity_of_wmax_for_tensor_powers() {
    let sig = NetworkSignature::parse("2,2").unwrap();

    let po = random_performance(&sig, 1001);
    let one = multiplicativity_check(&po, 1).unwrap();
    assert!(one.within_tolerance);
    assert!((one.tensored - one.base).abs() <= 1e-9);

    let two = multiplicativity_check(&po, 2).unwrap();
    assert!(
        two.within_tolerance,
        "n=2 multiplicativity broke: tensored {} vs power {}",
        two.tensored, two.power
    );

    let gamma = random_dual_comb(&sig, 1002, 2).unwrap();
    let dual_po = PerformanceOperator::new(gamma.op().clone()).unwrap();
    let three = multiplicativity_check(&dual_po, 3).unwrap();
    assert!(three.within_tolerance, "dual comb at n=3: {}", three.tensored);
    assert!((three.power - 1.0).abs() <= 1e-6);
}

#[test]
fn multiplicativity_respects_the_dimension_cap() {
    let sig = NetworkSignature::parse("2,2;2,2").unwrap();
    let po = random_performance(&sig, 1003);
    match multiplicativity_check(&po, 2) {
        Err(PerformanceError::DimensionCap(..)) => {}
        other => panic!("expected a dimension cap error, got {other:?}"),
    }
}

#[test]
fn asymptotic_series_brackets_the_rate() {
    let sig = NetworkSignature::parse("2,2").unwrap();
    let po = random_performance(&sig, 1011);
    let w1 = wmax_primal(&po).unwrap().value;

    let exact = asymptotic_series(&po, 0.0, 2).unwrap();
    assert_eq!(exact.len(), 2);
    for row in &exact {
        assert!(row.chain_ok, "n {}: chain broke at eps 0", row.n);
        assert!((row.lower_rate - w1.log2()).abs() <= 1e-6, "n {}: {}", row.n, row.lower_rate);
        assert!((row.upper_rate - w1.log2()).abs() <= 1e-6, "n {}: {}", row.n, row.upper_rate);
    }

    let eps = 0.01;
    let rows = asymptotic_series(&po, eps, 3).unwrap();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        let n = row.n as f64;
        assert!(row.chain_ok, "n {}: proof chain violated", row.n);
        assert!(row.lower_rate <= row.upper_rate + 1e-9);
        assert!(row.lower_rate >= w1.log2() - 1e-6, "n {}: rate {}", row.n, row.lower_rate);
        let dims = sig.out_dim_product() as f64;
        let cap = (w1.powi(row.n as i32) + eps * dims.powi(row.n as i32)).log2() / n;
        assert!(row.upper_rate <= cap + 1e-6, "n {}: {} above {cap}", row.n, row.upper_rate);
    }

    let gamma = random_dual_comb(&sig, 1012, 2).unwrap();
    let dual_po = PerformanceOperator::new(gamma.op().clone()).unwrap();
    let rows = asymptotic_series(&dual_po, eps, 2).unwrap();
    for row in &rows {
        let n = row.n as f64;
        let dims = sig.out_dim_product() as f64;
        let cap = (1.0 + eps * dims.powi(row.n as i32)).log2() / n;
        assert!(row.lower_rate >= -1e-9, "n {}: {}", row.n, row.lower_rate);
        assert!(row.upper_rate <= cap + 1e-6, "n {}: {} above {cap}", row.n, row.upper_rate);
    }
}

#[test]
fn lipschitz_bound_holds_for_perturbed_operators() {
    let sig = NetworkSignature::parse("2,2").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1021);
    let d = sig.total_dim();

    let base_mat = random_psd(&mut rng, d).map(|v| v / d as f64) + DMatrix::identity(d, d).scale(0.2);
    let m1 = PerformanceOperator::new(
        LabeledOperator::new(sig.canonical_labels(), base_mat.clone()).unwrap(),
    )
    .unwrap();

    let same = lipschitz_check(&m1, &m1).unwrap();
    assert!(same.holds);
    assert!(same.difference.abs() <= 1e-12 && same.epsilon.abs() <= 1e-12);

    for trial in 0..3 {
        let h = random_psd(&mut rng, d);
        let traceless = &h - DMatrix::identity(d, d).scale(h.trace().re / d as f64);
        let pert = traceless.scale(0.05 / traceless.norm());
        let mat2 = &base_mat + pert;
        assert!(min_eig(&mat2) > 0.0, "perturbation left the cone");
        let m2 = PerformanceOperator::new(
            LabeledOperator::new(sig.canonical_labels(), mat2.clone()).unwrap(),
        )
        .unwrap();

        let report = lipschitz_check(&m1, &m2).unwrap();
        let diff_eigs = (&base_mat - &mat2).symmetric_eigen().eigenvalues;
        let eps_oracle = 0.5 * diff_eigs.iter().map(|e| e.abs()).sum::<f64>();
        assert!(
            (report.epsilon - eps_oracle).abs() <= 1e-10,
            "trial {trial}: epsilon {} vs oracle {eps_oracle}",
            report.epsilon
        );
        assert!((report.dimension_factor - 2.0).abs() <= 1e-12);
        assert!(report.holds, "trial {trial}: |{}| > {}", report.difference, report.bound);
        assert!(report.difference.abs() <= report.bound + 1e-7);
    }

    let mismatched = PerformanceOperator::new(m1.omega().scale(1.1)).unwrap();
    assert!(lipschitz_check(&m1, &mismatched).is_err());
}

#[test]
fn performance_operators_validate_their_inputs() {
    let sig = NetworkSignature::parse("2,2").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1031);

    let g = random_psd(&mut rng, 4);
    let indefinite = &g - DMatrix::identity(4, 4).scale(2.0 * max_eig(&g));
    assert!(
        PerformanceOperator::new(LabeledOperator::new(sig.canonical_labels(), indefinite).unwrap())
            .is_err()
    );

    let tester = random_tester(&sig, 3, 1032, 2).unwrap().tester;
    assert!(PerformanceOperator::from_tester(&tester, &[1.0, 2.0]).is_err());
    assert!(PerformanceOperator::from_tester(&tester, &[-1.0, 0.0, 0.0]).is_err());

    let po = PerformanceOperator::from_tester(&tester, &[0.5, 0.5, 0.5]).unwrap();
    let (stored_tester, stored_weights) = po.provenance().expect("provenance is kept");
    assert_eq!(stored_tester.outcomes.len(), 3);
    assert_eq!(stored_weights, &[0.5, 0.5, 0.5]);

    let other = NetworkSignature::parse("2,2;2,2").unwrap();
    let comb = full_rank_comb(&other, 1033, 2);
    assert!(score(&po, &comb).is_err());
}
