//! Oracle tests for the interior-point solver and the modeling layer.
//!
//! Every optimum asserted here is computed along an independent route first:
//! eigenvalue formulas, closed-form linear programs, or brute-force search.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use combkit_core::sdp::{
    check_certificate, LinScalar, LmiBlock, ModelBuilder, OpExpr, SdpProblem, SdpStatus,
    SolverConfig, SparseHerm,
};
use combkit_core::tensorspace::{LabeledOperator, Role, SystemLabel};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_hermitian(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    let g = DMatrix::from_fn(d, d, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    (&g + g.adjoint()).scale(0.5)
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    let g = DMatrix::from_fn(d, d, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    &g * g.adjoint()
}

fn dense_coeff(m: &DMatrix<C64>) -> SparseHerm {
    let mut entries = Vec::new();
    for r in 0..m.nrows() {
        for col in 0..m.ncols() {
            if m[(r, col)] != c(0.0, 0.0) {
                entries.push((r, col, m[(r, col)]));
            }
        }
    }
    SparseHerm { entries }
}

fn hermitian_eigs(m: &DMatrix<C64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

/// min t s.t. tI - A >= 0 has optimum lambda_max(A).
#[test]
fn spectral_norm_sdp_matches_eigenvalue_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &d in &[2usize, 4, 7] {
        let a = random_hermitian(&mut rng, d);
        let want = hermitian_eigs(&a)[0];

        let eye = DMatrix::<C64>::identity(d, d);
        let problem = SdpProblem {
            c: vec![1.0],
            blocks: vec![LmiBlock { dim: d, f0: a.clone(), coeffs: vec![dense_coeff(&eye)] }],
            eq_rows: vec![],
            eq_rhs: vec![],
        };
        let sol = problem.solve(&SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.objective - want).abs() < 1e-7, "dim {d}: {} vs {want}", sol.objective);

        let report = check_certificate(&problem, &sol);
        assert!(report.is_valid(1e-5), "{report:?}");
    }
}

/// Generalized eigenvalue form: min t s.t. tN - M >= 0 with N positive
/// definite has optimum lambda_max(N^{-1/2} M N^{-1/2}).
#[test]
fn generalized_spectral_sdp_matches_whitened_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 4;
    let m = random_psd(&mut rng, d);
    let n = random_psd(&mut rng, d) + DMatrix::<C64>::identity(d, d).scale(0.5);

    let n_op = LabeledOperator::new(vec![SystemLabel::new("q", d, Role::In, 1)], n.clone()).unwrap();
    let n_inv_sqrt = {
        let eig = n_op.eig_hermitian().unwrap();
        let vals: Vec<f64> = eig.values.iter().map(|&v| 1.0 / v.sqrt()).collect();
        eig.recompose(&vals)
    };
    let whitened = &n_inv_sqrt * &m * &n_inv_sqrt;
    let want = hermitian_eigs(&whitened)[0];

    let problem = SdpProblem {
        c: vec![1.0],
        blocks: vec![LmiBlock { dim: d, f0: m, coeffs: vec![dense_coeff(&n)] }],
        eq_rows: vec![],
        eq_rhs: vec![],
    };
    let sol = problem.solve(&SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert!((sol.objective - want).abs() < 1e-7);
    assert!(check_certificate(&problem, &sol).is_valid(1e-5));
}

/// Diagonal blocks reduce to a linear program with a hand-computable optimum:
/// min 2a + 3b subject to a >= 1, b >= 2, a + b >= 4.
#[test]
fn diagonal_sdp_solves_the_underlying_linear_program() {
    let mk = |entries: Vec<(usize, usize, f64)>| SparseHerm {
        entries: entries.into_iter().map(|(r, cc, v)| (r, cc, c(v, 0.0))).collect(),
    };
    let f0 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]));
    let fa = mk(vec![(0, 0, 1.0), (2, 2, 1.0)]);
    let fb = mk(vec![(1, 1, 1.0), (2, 2, 1.0)]);
    let problem = SdpProblem {
        c: vec![2.0, 3.0],
        blocks: vec![LmiBlock { dim: 3, f0, coeffs: vec![fa, fb] }],
        eq_rows: vec![],
        eq_rhs: vec![],
    };
    let sol = problem.solve(&SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    // Optimum at a = 2, b = 2 (pushing a, the cheaper variable, to cover the
    // coupling row): value 10.
    assert!((sol.objective - 10.0).abs() < 1e-6, "{}", sol.objective);
    assert!((sol.y[0] - 2.0).abs() < 1e-5);
    assert!((sol.y[1] - 2.0).abs() < 1e-5);
    assert!(check_certificate(&problem, &sol).is_valid(1e-5));
}

/// Equality constraints: min y1 s.t. y1 + y2 = 3 and y2 <= 1 gives 2.
#[test]
fn equality_rows_combine_with_inequality_blocks() {
    let problem = SdpProblem {
        c: vec![1.0, 0.0],
        blocks: vec![LmiBlock {
            dim: 1,
            f0: DMatrix::from_element(1, 1, c(-1.0, 0.0)),
            coeffs: vec![
                SparseHerm::default(),
                SparseHerm { entries: vec![(0, 0, c(-1.0, 0.0))] },
            ],
        }],
        eq_rows: vec![vec![(0, 1.0), (1, 1.0)]],
        eq_rhs: vec![3.0],
    };
    let sol = problem.solve(&SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert!((sol.objective - 2.0).abs() < 1e-7);
    assert!((sol.y[1] - 1.0).abs() < 1e-6);
    assert!(check_certificate(&problem, &sol).is_valid(1e-5));
}

/// t N - M >= 0 is infeasible for every t when M has support outside the
/// support of N.
#[test]
fn support_violation_is_reported_as_infeasible() {
    let n = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]));
    let m = DMatrix::<C64>::identity(2, 2);
    let problem = SdpProblem {
        c: vec![1.0],
        blocks: vec![LmiBlock { dim: 2, f0: m, coeffs: vec![dense_coeff(&n)] }],
        eq_rows: vec![],
        eq_rhs: vec![],
    };
    let sol = problem.solve(&SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Infeasible);
}

/// min -y with y >= 0 is unbounded below.
#[test]
fn unbounded_objective_is_detected() {
    let problem = SdpProblem {
        c: vec![-1.0],
        blocks: vec![LmiBlock {
            dim: 1,
            f0: DMatrix::from_element(1, 1, c(0.0, 0.0)),
            coeffs: vec![SparseHerm { entries: vec![(0, 0, c(1.0, 0.0))] }],
        }],
        eq_rows: vec![],
        eq_rhs: vec![],
    };
    let sol = problem.solve(&SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Unbounded);
    assert!(sol.y[0] > 0.0);
}

/// Random strictly feasible instances: the solver must report optimal with a
/// certificate that passes the independent KKT recheck, and the two objective
/// values must bracket to the gap tolerance.
#[test]
fn random_instances_pass_certificate_recheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..6 {
        let d = 4;
        let n_vars = 3;
        let coeffs: Vec<DMatrix<C64>> = (0..n_vars).map(|_| random_hermitian(&mut rng, d)).collect();
        let y_star: Vec<f64> = (0..n_vars).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let slack = random_psd(&mut rng, d) + DMatrix::<C64>::identity(d, d);
        let mut f0 = -slack;
        for (ci, yi) in coeffs.iter().zip(&y_star) {
            f0 += ci.scale(*yi);
        }
        // y* is strictly feasible by construction. A second block bounds the
        // variables so the problem stays bounded: 10 - sum_i y_i^... a box
        // via diagonal entries.
        let mut box_coeffs = Vec::new();
        for i in 0..n_vars {
            let mut entries = Vec::new();
            entries.push((2 * i, 2 * i, c(-1.0, 0.0)));
            entries.push((2 * i + 1, 2 * i + 1, c(1.0, 0.0)));
            box_coeffs.push(SparseHerm { entries });
        }
        let box_f0 = DMatrix::<C64>::identity(2 * n_vars, 2 * n_vars).scale(-100.0);
        let problem = SdpProblem {
            c: (0..n_vars).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            blocks: vec![
                LmiBlock { dim: d, f0, coeffs: coeffs.iter().map(dense_coeff).collect() },
                LmiBlock { dim: 2 * n_vars, f0: box_f0, coeffs: box_coeffs },
            ],
            eq_rows: vec![],
            eq_rhs: vec![],
        };
        let sol = problem.solve(&SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal, "trial {trial}");
        let report = check_certificate(&problem, &sol);
        assert!(report.is_valid(1e-5), "trial {trial}: {report:?}");
        assert!(sol.gap < 1e-6);
        // The certified objective can exceed the dual bound only by the gap.
        assert!(sol.objective >= sol.dual_objective - 1e-5);
    }
}

/// The model layer must agree with the labeled-operator algebra: evaluating a
/// symbolically traced or padded expression equals performing the same
/// operation on the evaluated matrix.
#[test]
fn model_expressions_match_labeled_operator_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = ModelBuilder::new();
    let x = model.herm_var(&[2, 3, 2]);
    let y: Vec<f64> = (0..model.build().n_vars()).map(|_| rng.sample(StandardNormal)).collect();

    let labels = vec![
        SystemLabel::new("a", 2, Role::Out, 1),
        SystemLabel::new("b", 3, Role::In, 1),
        SystemLabel::new("c", 2, Role::In, 2),
    ];
    let x_val = LabeledOperator::new(labels, x.value(&y)).unwrap();

    // Partial trace over the middle factor.
    let traced_expr = x.expr().partial_trace(&[1]);
    let want = x_val.partial_trace(&["b"]).unwrap();
    assert!((traced_expr.eval(&y) - want.matrix()).norm() < 1e-12);

    // Identity inserted in the middle: X_{a c} -> X_a ⊗ I_4 ⊗ X_c pattern.
    let padded = traced_expr.insert_identity(1, 4);
    let id = LabeledOperator::identity(vec![SystemLabel::new("pad", 4, Role::In, 9)]);
    let want_pad = {
        let t = want.partial_trace(&[]).unwrap();
        let full = t.tensor(&id).unwrap();
        full.reorder(&["a", "pad", "c"]).unwrap()
    };
    assert!((padded.eval(&y) - want_pad.matrix()).norm() < 1e-12);

    // Trace and inner functionals.
    let r = random_hermitian(&mut rng, 12);
    let lin = x.expr().inner(&r);
    let want_inner = (&r * x_val.matrix()).trace().re;
    assert!((lin.eval(&y) - want_inner).abs() < 1e-12);
    assert!((x.trace().eval(&y) - x_val.trace().re).abs() < 1e-12);
}

/// Projection in the operator norm onto traceless Hermitian matrices:
/// min ||X - A||_inf over Tr X = 0 has optimum |Tr A| / d.
#[test]
fn traceless_projection_sdp_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 3;
    let a = random_hermitian(&mut rng, d);
    let want = a.trace().re.abs() / d as f64;

    let mut model = ModelBuilder::new();
    let x = model.herm_var(&[d]);
    let t = model.scalar_var();
    let eye = DMatrix::<C64>::identity(d, d);
    let a_expr = OpExpr::constant(a.clone(), vec![d]);
    let t_eye = OpExpr::scaled_by_var(t, &eye, vec![d]);
    // tI - (X - A) >= 0 and tI + (X - A) >= 0.
    model.psd(&t_eye.sub(&x.expr().sub(&a_expr)));
    model.psd(&t_eye.add(&x.expr().sub(&a_expr)));
    model.scalar_eq(&x.trace(), 0.0);
    model.minimize(&LinScalar::var(t));

    let sol = model.solve(&SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert!((sol.objective - want).abs() < 1e-6, "{} vs {want}", sol.objective);

    // The optimizer itself must be the trace shift of A.
    let x_opt = x.value(&sol.y);
    let shift = a.trace().re / d as f64;
    let expected = &a - eye.scale(shift);
    assert!((x_opt - expected).norm() < 1e-4);
}

/// Binary measurement with commuting diagonal operators reduces to a
/// fractional knapsack, solved here by brute force over thresholds.
#[test]
fn diagonal_measurement_sdp_matches_knapsack_oracle() {
    let r0: [f64; 4] = [0.4, 0.3, 0.2, 0.1];
    let r1: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
    let eps = 0.25;

    // Brute force over fractional threshold strategies on the ratio order.
    let mut best = f64::INFINITY;
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| (r0[j] / r1[j]).partial_cmp(&(r0[i] / r1[i])).unwrap());
    let mut need = 1.0 - eps;
    let mut cost = 0.0;
    for &i in &order {
        if need <= 0.0 {
            break;
        }
        let take = (need / r0[i]).min(1.0);
        cost += take * r1[i];
        need -= take * r0[i];
    }
    best = best.min(cost);

    let mut model = ModelBuilder::new();
    let pi = model.herm_var(&[4]);
    let mut diag0 = DMatrix::<C64>::zeros(4, 4);
    let mut diag1 = DMatrix::<C64>::zeros(4, 4);
    for i in 0..4 {
        diag0[(i, i)] = c(r0[i], 0.0);
        diag1[(i, i)] = c(r1[i], 0.0);
    }
    model.psd(&pi.expr());
    let eye_expr = OpExpr::constant(DMatrix::identity(4, 4), vec![4]);
    model.psd(&eye_expr.sub(&pi.expr()));
    model.scalar_geq(&pi.inner(&diag0), 1.0 - eps);
    model.minimize(&pi.inner(&diag1));

    let sol = model.solve(&SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert!((sol.objective - best).abs() < 1e-6, "{} vs {best}", sol.objective);
}

/// Complex data exercises the real embedding; the dual objective reported by
/// the solver must match its own certificate recomputed in complex space.
#[test]
fn complex_duals_reproduce_reported_dual_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = 3;
    let a = random_hermitian(&mut rng, d);
    let eye = DMatrix::<C64>::identity(d, d);
    let problem = SdpProblem {
        c: vec![1.0],
        blocks: vec![LmiBlock { dim: d, f0: a, coeffs: vec![dense_coeff(&eye)] }],
        eq_rows: vec![],
        eq_rhs: vec![],
    };
    let sol = problem.solve(&SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    let z = &sol.z_blocks[0];
    let hermiticity = (z - z.adjoint()).norm();
    assert!(hermiticity < 1e-8);
    let recomputed = (&problem.blocks[0].f0 * z).trace().re;
    assert!((recomputed - sol.dual_objective).abs() < 1e-7);
    // For min t s.t. tI >= A the dual optimum is a state on the top
    // eigenspace: trace one, PSD.
    assert!((z.trace().re - 1.0).abs() < 1e-6);
}

/// Tight tolerance configuration still converges on a small instance.
#[test]
fn solver_respects_custom_tolerances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_hermitian(&mut rng, 3);
    let eye = DMatrix::<C64>::identity(3, 3);
    let problem = SdpProblem {
        c: vec![1.0],
        blocks: vec![LmiBlock { dim: 3, f0: a.clone(), coeffs: vec![dense_coeff(&eye)] }],
        eq_rows: vec![],
        eq_rhs: vec![],
    };
    let config = SolverConfig { gap_tol: 1e-10, feas_tol: 1e-10, max_iter: 200 };
    let sol = problem.solve(&config).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    let want = hermitian_eigs(&a)[0];
    assert!((sol.objective - want).abs() < 1e-9);
}
