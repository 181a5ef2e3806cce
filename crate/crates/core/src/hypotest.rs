//! Binary hypothesis testing between quantum combs.
//!
//! A strategy pairs a dual comb element Γ with a test operator 0 ⪯ Π ⪯ I;
//! the type-I and type-II errors are evaluated on the √Γ-twirled combs. The
//! optimal test at fixed Γ is a small semidefinite program, the joint
//! minimization over Γ reuses the seeded dual-comb search, and the sandwich
//! report relates the resulting error exponent to the smoothed max-relative
//! entropy on both sides, labelling every number with the direction in which
//! it bounds the true quantity.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::entropy::{
    dmax_tilde_inner, dmax_tilde_lower, gamma_search, gamma_twirl, validate_search_budget,
    EntropyError, GammaSearchConfig,
};
use crate::network::{Comb, DualCombElement, NetworkError, NetworkSignature};
use crate::sdp::{ModelBuilder, OpExpr, SdpError, SdpStatus, SolverConfig};
use crate::tensorspace::{LabeledOperator, TensorError, TOL_PSD};

/// Reported type-II errors below this are printed as zero and their negative
/// logarithm as infinity; the solver cannot distinguish them from exact
/// orthogonality.
const BETA_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HypotestError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// A binary discrimination problem: accept the null comb `c0` against the
/// alternative `c1` with type-I error budget `epsilon`.
#[derive(Debug, Clone)]
pub struct TestingInstance {
    c0: Comb,
    c1: Comb,
    epsilon: f64,
}

impl TestingInstance {
    pub fn new(c0: Comb, c1: Comb, epsilon: f64) -> Result<Self, HypotestError> {
        if c0.signature() != c1.signature() {
            return Err(HypotestError::Invalid(
                "both hypotheses must share a network signature".into(),
            ));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(HypotestError::Invalid(format!(
                "error budget must lie strictly between 0 and 1, got {epsilon}"
            )));
        }
        Ok(Self { c0, c1, epsilon })
    }

    pub fn c0(&self) -> &Comb {
        &self.c0
    }

    pub fn c1(&self) -> &Comb {
        &self.c1
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// A dual comb element together with the acceptance operator of the POVM
/// `{Π, I − Π}`.
#[derive(Debug, Clone)]
pub struct TestStrategy {
    gamma: DualCombElement,
    pi: LabeledOperator,
}

impl TestStrategy {
    pub fn new(gamma: DualCombElement, pi: LabeledOperator) -> Result<Self, HypotestError> {
        let aligned = pi.reorder_like(gamma.op())?;
        let tol = 1e-6 * (1.0 + aligned.frobenius_norm());
        if aligned.min_eigenvalue()? < -tol {
            return Err(HypotestError::Invalid(
                "test operator has a negative eigenvalue".into(),
            ));
        }
        let eye = LabeledOperator::identity(aligned.systems().to_vec());
        if eye.sub(&aligned)?.min_eigenvalue()? < -tol {
            return Err(HypotestError::Invalid(
                "test operator exceeds the identity".into(),
            ));
        }
        Ok(Self { gamma, pi: aligned })
    }

    pub fn gamma(&self) -> &DualCombElement {
        &self.gamma
    }

    pub fn pi(&self) -> &LabeledOperator {
        &self.pi
    }
}

fn trace_product(a: &LabeledOperator, b: &LabeledOperator) -> Result<f64, HypotestError> {
    let aligned = b.reorder_like(a)?;
    Ok((a.matrix() * aligned.matrix()).trace().re)
}

/// Type-I and type-II errors of a strategy: α = Tr[(I−Π)√ΓC₀√Γ] and
/// β = Tr[Π√ΓC₁√Γ].
pub fn errors_of_strategy(
    inst: &TestingInstance,
    strat: &TestStrategy,
) -> Result<(f64, f64), HypotestError> {
    if strat.gamma.signature() != inst.c0.signature() {
        return Err(HypotestError::Invalid(
            "strategy and instance live on different signatures".into(),
        ));
    }
    let t0 = gamma_twirl(&strat.gamma, inst.c0.op())?;
    let t1 = gamma_twirl(&strat.gamma, inst.c1.op())?;
    let accept = trace_product(&strat.pi, &t0)?;
    let beta = trace_product(&strat.pi, &t1)?;
    Ok((1.0 - accept, beta))
}

/// Minimal type-II error at a fixed dual comb element:
/// min Tr[Π√ΓC₁√Γ] over 0 ⪯ Π ⪯ I with Tr[Π√ΓC₀√Γ] ≥ 1 − ε.
/// Returns the optimum together with an optimal acceptance operator.
pub fn beta_fixed_gamma(
    inst: &TestingInstance,
    gamma: &DualCombElement,
) -> Result<(f64, LabeledOperator), HypotestError> {
    if gamma.signature() != inst.c0.signature() {
        return Err(HypotestError::Invalid(
            "dual comb element and instance live on different signatures".into(),
        ));
    }
    let t0 = gamma_twirl(gamma, inst.c0.op())?;
    let t1 = gamma_twirl(gamma, inst.c1.op())?.reorder_like(&t0)?;
    let d = t0.matrix().nrows();

    let mut mb = ModelBuilder::new();
    let pi = mb.herm_var(&[d]);
    mb.psd(&pi.expr());
    let eye = OpExpr::constant(DMatrix::<C64>::identity(d, d), vec![d]);
    mb.psd(&eye.sub(&pi.expr()));
    mb.scalar_geq(&pi.inner(t0.matrix()), 1.0 - inst.epsilon);
    mb.minimize(&pi.inner(t1.matrix()));
    let sol = mb
        .build()
        .solve(&SolverConfig { gap_tol: 1e-9, feas_tol: 1e-9, max_iter: 200 }.with_env_override())?;
    match sol.status {
        SdpStatus::Optimal | SdpStatus::MaxIterations => {}
        status => {
            return Err(HypotestError::Invalid(format!(
                "acceptance program ended with status {status:?} although Π = I is feasible"
            )));
        }
    }
    let pi_op = LabeledOperator::new(t0.systems().to_vec(), pi.value(&sol.y))?;
    Ok((sol.objective, pi_op))
}

/// Joint heuristic minimization of the type-II error over the dual comb set.
///
/// Every evaluated (Γ, Π) pair is feasible, so the returned value is a
/// certified upper bound on the infimum; signatures whose dual set is the
/// single point Γ = I are solved exactly.
pub fn beta_min(
    inst: &TestingInstance,
    cfg: &GammaSearchConfig,
) -> Result<(f64, TestStrategy), HypotestError> {
    validate_search_budget(cfg)?;
    let sig = inst.c0.signature();
    if sig.in_dim_product() == 1 {
        let gamma = DualCombElement::uniform(sig);
        let (beta, pi) = beta_fixed_gamma(inst, &gamma)?;
        return Ok((beta, TestStrategy::new(gamma, pi)?));
    }
    let (_, gamma) = gamma_search(sig, cfg, |g: &DualCombElement| {
        beta_fixed_gamma(inst, g).map(|(b, _)| -b)
    })?;
    let (beta, pi) = beta_fixed_gamma(inst, &gamma)?;
    Ok((beta, TestStrategy::new(gamma, pi)?))
}

/// The likelihood-ratio strategy: Π projects onto the nonnegative eigenspace
/// of √Γ(C₀ − λC₁)√Γ.
pub fn projector_strategy(
    inst: &TestingInstance,
    gamma: &DualCombElement,
    lambda: f64,
) -> Result<TestStrategy, HypotestError> {
    if lambda < 0.0 {
        return Err(HypotestError::Invalid(format!(
            "threshold must be nonnegative, got {lambda}"
        )));
    }
    if gamma.signature() != inst.c0.signature() {
        return Err(HypotestError::Invalid(
            "dual comb element and instance live on different signatures".into(),
        ));
    }
    let t0 = gamma_twirl(gamma, inst.c0.op())?;
    let t1 = gamma_twirl(gamma, inst.c1.op())?;
    let pencil = t0.sub(&t1.reorder_like(&t0)?.scale(lambda))?;
    let eig = pencil.eig_hermitian()?;
    let cut = -TOL_PSD * eig.values.amax().max(1e-300);
    let weights: Vec<f64> = eig
        .values
        .iter()
        .map(|&e| if e >= cut { 1.0 } else { 0.0 })
        .collect();
    let pi = LabeledOperator::new(pencil.systems().to_vec(), eig.recompose(&weights))?;
    TestStrategy::new(gamma.clone(), pi)
}

/// How a reported number relates to the quantity it stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundDirection {
    /// Computed by a certified optimization (exhaustive over the dual set).
    Exact,
    /// A feasible-point bound from the heuristic Γ search; the true value
    /// can only be larger.
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckOutcome {
    Pass,
    Fail,
    Inconclusive,
}

/// Which computation backed the sandwich terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SandwichMode {
    /// All input spaces are one-dimensional, so the dual set is {I}.
    PointDual,
    /// Single tooth with a qubit input: the dual set is swept by a
    /// coarse-to-fine Bloch grid.
    QubitGrid,
    /// Sampled dual elements only; every term is a lower bound.
    Heuristic,
}

#[derive(Debug, Clone)]
pub struct BoundedValue {
    pub value: f64,
    pub direction: BoundDirection,
}

#[derive(Debug, Clone)]
pub struct InequalityCheck {
    pub outcome: CheckOutcome,
    /// Right side minus left side when both are finite.
    pub margin: Option<f64>,
    pub note: String,
}

/// The two-sided comparison between the optimal error exponent and the
/// smoothed max-relative entropies.
#[derive(Debug, Clone)]
pub struct SandwichReport {
    pub mode: SandwichMode,
    pub epsilon: f64,
    pub epsilon_prime: f64,
    /// Smoothed divergence at radius √(1−(1−ε)²).
    pub left: BoundedValue,
    /// −log₂ of the best type-II error at type-I budget 1−ε.
    pub middle: BoundedValue,
    /// Smoothed divergence at radius ε′ plus log₂ 1/(ε−ε′).
    pub right: BoundedValue,
    /// left ≤ middle.
    pub lower_check: InequalityCheck,
    /// middle ≤ right.
    pub upper_check: InequalityCheck,
}

fn neg_log2(beta: f64) -> f64 {
    if beta < BETA_FLOOR {
        f64::INFINITY
    } else {
        -beta.log2()
    }
}

fn compare(lhs: &BoundedValue, rhs: &BoundedValue, tol: f64) -> InequalityCheck {
    let exact = lhs.direction == BoundDirection::Exact && rhs.direction == BoundDirection::Exact;
    if lhs.value.is_infinite() && rhs.value.is_infinite() {
        return InequalityCheck {
            outcome: CheckOutcome::Inconclusive,
            margin: None,
            note: "both sides are infinite; the comparison is not decidable numerically".into(),
        };
    }
    if rhs.value.is_infinite() {
        return InequalityCheck {
            outcome: CheckOutcome::Pass,
            margin: None,
            note: "right side is infinite".into(),
        };
    }
    if lhs.value.is_infinite() {
        return if exact {
            InequalityCheck {
                outcome: CheckOutcome::Fail,
                margin: None,
                note: "left side is infinite while the right side is finite".into(),
            }
        } else {
            InequalityCheck {
                outcome: CheckOutcome::Inconclusive,
                margin: None,
                note: "left lower bound is infinite but the right side is also only a lower bound"
                    .into(),
            }
        };
    }
    let margin = rhs.value - lhs.value;
    if exact {
        InequalityCheck {
            outcome: if margin >= -tol { CheckOutcome::Pass } else { CheckOutcome::Fail },
            margin: Some(margin),
            note: "both sides computed over the full dual set".into(),
        }
    } else {
        InequalityCheck {
            outcome: CheckOutcome::Inconclusive,
            margin: Some(margin),
            note: "sides are heuristic lower bounds; the gap is not certified".into(),
        }
    }
}

fn qubit_dual_element(
    sig: &NetworkSignature,
    r: [f64; 3],
) -> Result<DualCombElement, HypotestError> {
    let sigma = DMatrix::from_row_slice(
        2,
        2,
        &[
            C64::new(0.5 * (1.0 + r[2]), 0.0),
            C64::new(0.5 * r[0], -0.5 * r[1]),
            C64::new(0.5 * r[0], 0.5 * r[1]),
            C64::new(0.5 * (1.0 - r[2]), 0.0),
        ],
    );
    let eye = LabeledOperator::identity(vec![sig.out_label(1)]);
    let state = LabeledOperator::new(vec![sig.in_label(1)], sigma)?;
    Ok(DualCombElement::new(eye.tensor(&state)?)?)
}

/// Coarse-to-fine sweep of the qubit dual set I ⊗ σ.
fn qubit_dual_grid<F>(
    sig: &NetworkSignature,
    mut f: F,
    maximize: bool,
) -> Result<f64, HypotestError>
where
    F: FnMut(&DualCombElement) -> Result<f64, HypotestError>,
{
    let mut best_r = [0.0f64; 3];
    let mut best_v: Option<f64> = None;
    let mut center = [0.0f64; 3];
    let mut span = 1.0f64;
    for round in 0..4 {
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
                    if (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt() > 1.0 {
                        continue;
                    }
                    let gamma = qubit_dual_element(sig, r)?;
                    let v = f(&gamma)?;
                    let better = match best_v {
                        None => true,
                        Some(b) => if maximize { v > b } else { v < b },
                    };
                    if better {
                        best_v = Some(v);
                        best_r = r;
                    }
                }
            }
        }
        center = best_r;
        span = 2.0 * span / steps as f64;
    }
    best_v.ok_or_else(|| HypotestError::Invalid("dual grid found no feasible point".into()))
}

/// Evaluates the sandwich D̃^{√(1−(1−ε)²)} ≤ −log₂ β_{1−ε} ≤ D̃^{ε′} +
/// log₂ 1/(ε−ε′) and reports each inequality as pass, fail, or inconclusive
/// according to how the three terms were computed.
pub fn beta_exponent_sandwich(
    inst: &TestingInstance,
    eps_prime: f64,
    cfg: &GammaSearchConfig,
) -> Result<SandwichReport, HypotestError> {
    let eps = inst.epsilon;
    if !(eps_prime > 0.0 && eps_prime < eps) {
        return Err(HypotestError::Invalid(format!(
            "smoothing parameters must satisfy 0 < eps' < eps, got eps' = {eps_prime}, eps = {eps}"
        )));
    }
    validate_search_budget(cfg)?;
    let f_eps = (1.0 - (1.0 - eps) * (1.0 - eps)).sqrt();
    let penalty = (1.0 / (eps - eps_prime)).log2();
    let shifted = TestingInstance::new(inst.c0.clone(), inst.c1.clone(), 1.0 - eps)?;

    let sig = inst.c0.signature();
    let mode = if sig.in_dim_product() == 1 {
        SandwichMode::PointDual
    } else if sig.n_teeth() == 1 && sig.in_dim(1) == 2 {
        SandwichMode::QubitGrid
    } else {
        SandwichMode::Heuristic
    };

    let (left_v, mid_v, right_v, direction, tol) = match mode {
        SandwichMode::PointDual => {
            let gamma = DualCombElement::uniform(sig);
            let left = dmax_tilde_inner(&inst.c0, &inst.c1, &gamma, f_eps)?.0;
            let (beta, _) = beta_fixed_gamma(&shifted, &gamma)?;
            let right = dmax_tilde_inner(&inst.c0, &inst.c1, &gamma, eps_prime)?.0 + penalty;
            (left, neg_log2(beta), right, BoundDirection::Exact, 1e-6)
        }
        SandwichMode::QubitGrid => {
            let left = qubit_dual_grid(
                sig,
                |g| Ok(dmax_tilde_inner(&inst.c0, &inst.c1, g, f_eps)?.0),
                true,
            )?;
            let beta =
                qubit_dual_grid(sig, |g| Ok(beta_fixed_gamma(&shifted, g)?.0), false)?;
            let right = qubit_dual_grid(
                sig,
                |g| Ok(dmax_tilde_inner(&inst.c0, &inst.c1, g, eps_prime)?.0),
                true,
            )? + penalty;
            (left, neg_log2(beta), right, BoundDirection::Exact, 2e-3)
        }
        SandwichMode::Heuristic => {
            let left = dmax_tilde_lower(&inst.c0, &inst.c1, f_eps, cfg)?.0;
            let (beta, _) = beta_min(&shifted, cfg)?;
            let right = dmax_tilde_lower(&inst.c0, &inst.c1, eps_prime, cfg)?.0 + penalty;
            (left, neg_log2(beta), right, BoundDirection::LowerBound, 0.0)
        }
    };

    let left = BoundedValue { value: left_v, direction };
    let middle = BoundedValue { value: mid_v, direction };
    let right = BoundedValue { value: right_v, direction };
    let lower_check = compare(&left, &middle, tol);
    let upper_check = compare(&middle, &right, tol);
    Ok(SandwichReport {
        mode,
        epsilon: eps,
        epsilon_prime: eps_prime,
        left,
        middle,
        right,
        lower_check,
        upper_check,
    })
}
