//! Max-relative entropy of network operators, exact and smoothed, together
//! with the twirled variant that maximizes over dual combs and the trade-off
//! curves used to bound it.
//!
//! Exact values are always computed along two independent routes (spectral
//! whitening and a semidefinite program) and cross-checked. Smoothed values
//! are single SDPs over a trace-norm ball; the outer maximizations over the
//! dual comb set are heuristic and every caller-facing return is documented
//! as a lower bound on the corresponding supremum.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::network::{
    to_canonical_order, validate_comb, Comb, DualCombElement, DualCombParams, NetworkError,
    NetworkSignature,
};
use crate::sdp::{LinScalar, ModelBuilder, OpExpr, SdpError, SdpStatus, SolverConfig};
use crate::tensorspace::{
    support_contains, LabeledOperator, TensorError, TOL_PSD,
};

/// Agreement tolerance between the spectral and SDP routes of [`dmax`].
pub const TOL_ROUTE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("spectral route {spectral} and SDP route {sdp} disagree beyond tolerance")]
    RouteMismatch { spectral: f64, sdp: f64 },
}

/// Which affine family the smoothing ball ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BallConstraint {
    /// Elements of the ball must satisfy the full comb hierarchy of the
    /// center's signature.
    CombConstrained,
    /// Elements of the ball are unit-trace positive operators.
    StateConstrained,
}

/// A trace-distance ball `{ X : (1/2)‖X − center‖₁ ≤ epsilon }` intersected
/// with the constraint family.
#[derive(Debug, Clone)]
pub struct SmoothingBall {
    pub center: LabeledOperator,
    pub epsilon: f64,
    pub constraint: BallConstraint,
}

impl SmoothingBall {
    pub fn new(
        center: LabeledOperator,
        epsilon: f64,
        constraint: BallConstraint,
    ) -> Result<Self, EntropyError> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(EntropyError::Invalid(format!(
                "smoothing radius must lie in [0, 1), got {epsilon}"
            )));
        }
        match constraint {
            BallConstraint::CombConstrained => {
                let report = validate_comb(&center, crate::tensorspace::TOL_COMB)?;
                if !report.is_valid() {
                    return Err(EntropyError::Invalid(
                        "ball center is not a valid comb for its labels".into(),
                    ));
                }
            }
            BallConstraint::StateConstrained => {
                let tr = center.trace();
                if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-9 {
                    return Err(EntropyError::Invalid(format!(
                        "ball center must have unit trace, got {tr}"
                    )));
                }
                if center.min_eigenvalue()? < -1e-6 {
                    return Err(EntropyError::Invalid(
                        "ball center must be positive semidefinite".into(),
                    ));
                }
            }
        }
        Ok(Self { center, epsilon, constraint })
    }
}

/// Effort knobs for the heuristic maximization over the dual comb set:
/// `samples` random starts, each refined by `ascent_steps` accepted-if-better
/// perturbations of relative size `step_size`.
#[derive(Debug, Clone)]
pub struct GammaSearchConfig {
    pub samples: usize,
    pub ascent_steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for GammaSearchConfig {
    fn default() -> Self {
        Self { samples: 16, ascent_steps: 32, step_size: 0.1, seed: 0 }
    }
}

/// Which monotone curve [`lambda_for_target`] inverts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetCurve {
    TraceDelta,
    G,
}

/// Check positivity of both operands and align the second to the first.
fn aligned_psd_pair(
    m: &LabeledOperator,
    n: &LabeledOperator,
) -> Result<LabeledOperator, EntropyError> {
    let n_aligned = n.reorder_like(m)?;
    for (which, op) in [("first", m), ("second", &n_aligned)] {
        let low = op.min_eigenvalue()?;
        if low < -TOL_PSD * (1.0 + op.frobenius_norm()) {
            return Err(EntropyError::Invalid(format!(
                "{which} operand has negative eigenvalue {low:.3e}"
            )));
        }
    }
    Ok(n_aligned)
}

/// Max-relative entropy log₂ min { λ : M ⪯ λN }, computed spectrally as the
/// top eigenvalue of N^{-1/2} M N^{-1/2} on the support of N. Returns +∞ when
/// supp(M) is not contained in supp(N).
pub fn dmax_spectral(m: &LabeledOperator, n: &LabeledOperator) -> Result<f64, EntropyError> {
    let n_aligned = aligned_psd_pair(m, n)?;
    if !support_contains(m, &n_aligned, TOL_PSD)? {
        return Ok(f64::INFINITY);
    }
    let eig = n_aligned.eig_hermitian()?;
    let scale = eig.values.amax();
    let inv_sqrt: Vec<f64> = eig
        .values
        .iter()
        .map(|&v| if v > TOL_PSD * scale { 1.0 / v.sqrt() } else { 0.0 })
        .collect();
    let w = eig.recompose(&inv_sqrt);
    let whitened = &w * m.matrix() * &w;
    let top = LabeledOperator::new(m.systems().to_vec(), whitened)?.max_eigenvalue()?;
    if top <= 0.0 {
        return Err(EntropyError::Invalid(
            "max-relative entropy of a vanishing operator".into(),
        ));
    }
    Ok(top.log2())
}

/// One solve of min t subject to t·N − M ⪰ 0; None means infeasible.
fn min_scale_sdp(m_mat: &DMatrix<C64>, n_mat: &DMatrix<C64>) -> Result<Option<f64>, EntropyError> {
    let dims = vec![m_mat.nrows()];
    let mut mb = ModelBuilder::new();
    let t = mb.scalar_var();
    let lmi = OpExpr::scaled_by_var(t, n_mat, dims.clone())
        .sub(&OpExpr::constant(m_mat.clone(), dims));
    mb.psd(&lmi);
    mb.minimize(&LinScalar::var(t));
    let config = SolverConfig { gap_tol: 1e-8, feas_tol: 1e-8, max_iter: 200 }.with_env_override();
    let sol = mb.build().solve(&config)?;
    match sol.status {
        SdpStatus::Optimal | SdpStatus::MaxIterations => Ok(Some(sol.y[t])),
        SdpStatus::Infeasible => Ok(None),
        SdpStatus::Unbounded => Err(EntropyError::Invalid(
            "max-relative entropy program is unbounded".into(),
        )),
    }
}

/// Max-relative entropy via the primal SDP min t subject to t·N − M ⪰ 0.
/// Both operands are trace-normalized first and the program is re-solved
/// once in rescaled coordinates when the optimizer lands far from 1, which
/// keeps the interior-point accuracy independent of the answer's magnitude.
pub fn dmax_sdp(m: &LabeledOperator, n: &LabeledOperator) -> Result<f64, EntropyError> {
    let n_aligned = aligned_psd_pair(m, n)?;
    if !support_contains(m, &n_aligned, TOL_PSD)? {
        return Ok(f64::INFINITY);
    }
    let tr_m = m.trace().re;
    let tr_n = n_aligned.trace().re;
    if tr_m <= 0.0 || tr_n <= 0.0 {
        return Err(EntropyError::Invalid(
            "max-relative entropy of a vanishing operator".into(),
        ));
    }
    let m0 = m.matrix().map(|v| v / tr_m);
    let n0 = n_aligned.matrix().map(|v| v / tr_n);
    let first = match min_scale_sdp(&m0, &n0)? {
        Some(t) => t,
        None => return Ok(f64::INFINITY),
    };
    if first <= 0.0 {
        return Err(EntropyError::Invalid(
            "max-relative entropy of a vanishing operator".into(),
        ));
    }
    let mut scale = first;
    if !(0.25..=4.0).contains(&first) {
        let n1 = n0.map(|v| v * first);
        if let Some(second) = min_scale_sdp(&m0, &n1)? {
            scale = first * second;
        }
    }
    Ok((scale * tr_m / tr_n).log2())
}

/// Max-relative entropy with both routes cross-checked to [`TOL_ROUTE`].
pub fn dmax(m: &LabeledOperator, n: &LabeledOperator) -> Result<f64, EntropyError> {
    let spectral = dmax_spectral(m, n)?;
    let sdp = dmax_sdp(m, n)?;
    match (spectral.is_finite(), sdp.is_finite()) {
        (false, false) => Ok(f64::INFINITY),
        (true, true) if (spectral - sdp).abs() <= TOL_ROUTE => Ok(spectral),
        _ => Err(EntropyError::RouteMismatch { spectral, sdp }),
    }
}

/// Append the affine hierarchy that makes `mt` a (possibly unnormalized
/// center of a) comb of signature `sig`: tracing out each tooth's output
/// must factor as an identity on that tooth's input times a comb one level
/// down, with the base level reducing to the identity on the first input.
pub(crate) fn add_comb_hierarchy(mb: &mut ModelBuilder, mt: &crate::sdp::HermVar, sig: &NetworkSignature) {
    let n = sig.n_teeth();
    let dims: Vec<usize> = sig.canonical_labels().iter().map(|s| s.dim).collect();
    let mut cur = mt.expr().partial_trace(&[2 * (n - 1)]);
    for level in (1..=n).rev() {
        if level == 1 {
            let d_in = sig.in_dim(1);
            let eye = DMatrix::<C64>::identity(d_in, d_in);
            mb.eq_zero(&cur.sub(&OpExpr::constant(eye, vec![d_in])));
        } else {
            let sub_dims = dims[..2 * (level - 1)].to_vec();
            let lower = mb.herm_var(&sub_dims);
            let lifted = lower.expr().insert_identity(2 * (level - 1), sig.in_dim(level));
            mb.eq_zero(&cur.sub(&lifted));
            cur = lower.expr().partial_trace(&[2 * (level - 2)]);
        }
    }
}

/// Minimize log₂ t over t·N ⪰ X with X ranging over the smoothing ball.
/// The trace-norm constraint is linearized as X − center = P − Q with
/// P, Q ⪰ 0 and Tr(P + Q) ≤ 2ε. Returns the value and the optimizer X;
/// an infeasible ball (possible only without a common support) reports +∞.
fn smoothed_dmax_opt(
    ball: &SmoothingBall,
    reference: &LabeledOperator,
) -> Result<(f64, LabeledOperator), EntropyError> {
    let (center, refc, dims, labels, hierarchy) = match ball.constraint {
        BallConstraint::CombConstrained => {
            let sig = NetworkSignature::from_labels(&ball.center)?;
            let center = to_canonical_order(&ball.center)?;
            let refc = to_canonical_order(reference)?;
            let dims: Vec<usize> = center.systems().iter().map(|s| s.dim).collect();
            (center, refc, dims, sig.canonical_labels(), Some(sig))
        }
        BallConstraint::StateConstrained => {
            let center = ball.center.clone();
            let refc = reference.reorder_like(&center)?;
            let dims = vec![center.matrix().nrows()];
            let labels = center.systems().to_vec();
            (center, refc, dims, labels, None)
        }
    };

    let mut mb = ModelBuilder::new();
    let mt = mb.herm_var(&dims);
    let p = mb.herm_var(&dims);
    let q = mb.herm_var(&dims);
    let t = mb.scalar_var();
    mb.psd(&mt.expr());
    mb.psd(&p.expr());
    mb.psd(&q.expr());
    mb.psd(&OpExpr::scaled_by_var(t, refc.matrix(), dims.clone()).sub(&mt.expr()));
    let shift = mt
        .expr()
        .sub(&OpExpr::constant(center.matrix().clone(), dims))
        .sub(&p.expr())
        .add(&q.expr());
    mb.eq_zero(&shift);
    mb.scalar_leq(&p.trace().add(&q.trace()), 2.0 * ball.epsilon);
    match &hierarchy {
        Some(sig) => add_comb_hierarchy(&mut mb, &mt, sig),
        None => mb.scalar_eq(&mt.trace(), 1.0),
    }
    mb.minimize(&LinScalar::var(t));

    let sol = mb.build().solve(&SolverConfig::default().with_env_override())?;
    match sol.status {
        SdpStatus::Optimal | SdpStatus::MaxIterations => {
            let lam = sol.y[t];
            if lam <= 0.0 {
                return Err(EntropyError::Invalid(
                    "smoothed program returned a nonpositive scale".into(),
                ));
            }
            let optimizer = LabeledOperator::new(labels, mt.value(&sol.y))?;
            Ok((lam.log2(), optimizer))
        }
        SdpStatus::Infeasible => Ok((f64::INFINITY, ball.center.clone())),
        SdpStatus::Unbounded => Err(EntropyError::Invalid(
            "smoothed program is unbounded".into(),
        )),
    }
}

/// Smooth max-relative entropy between combs of a common signature: the
/// minimum of dmax(X‖n) over combs X within trace distance `eps` of `m`.
/// Returns the value and the optimizing comb operator on canonical labels.
pub fn dmax_smooth_comb(
    m: &Comb,
    n: &Comb,
    eps: f64,
) -> Result<(f64, LabeledOperator), EntropyError> {
    if m.signature() != n.signature() {
        return Err(EntropyError::Invalid(
            "combs must share a signature to be compared".into(),
        ));
    }
    if eps == 0.0 {
        return Ok((dmax(m.op(), n.op())?, m.op().clone()));
    }
    let ball = SmoothingBall::new(m.op().clone(), eps, BallConstraint::CombConstrained)?;
    smoothed_dmax_opt(&ball, n.op())
}

/// Conjugation √Γ C √Γ by the square root of a dual comb. Maps any comb of
/// the matching signature to a unit-trace state.
pub fn gamma_twirl(
    gamma: &DualCombElement,
    c: &LabeledOperator,
) -> Result<LabeledOperator, EntropyError> {
    let root = gamma.op().psd_sqrt(TOL_PSD)?;
    let aligned = c.reorder_like(&root)?;
    let raw = root.matrix() * aligned.matrix() * root.matrix();
    let sym = (&raw + raw.adjoint()).map(|v| v * 0.5);
    Ok(LabeledOperator::new(root.systems().to_vec(), sym)?)
}

/// Inner minimization of the twirled smooth divergence at a fixed dual comb:
/// min dmax(C‖√Γ c1 √Γ) over unit-trace C within trace distance `eps` of
/// √Γ c0 √Γ. Exact SDP; returns the value and the optimizing state.
pub fn dmax_tilde_inner(
    c0: &Comb,
    c1: &Comb,
    gamma: &DualCombElement,
    eps: f64,
) -> Result<(f64, LabeledOperator), EntropyError> {
    if c0.signature() != c1.signature() || c0.signature() != gamma.signature() {
        return Err(EntropyError::Invalid(
            "combs and dual comb must share a signature".into(),
        ));
    }
    let t0 = gamma_twirl(gamma, c0.op())?;
    let t1 = gamma_twirl(gamma, c1.op())?;
    if eps == 0.0 {
        let v = dmax(&t0, &t1)?;
        return Ok((v, t0));
    }
    let ball = SmoothingBall::new(t0, eps, BallConstraint::StateConstrained)?;
    smoothed_dmax_opt(&ball, &t1)
}

/// Lower bound on the twirled smooth max-relative entropy
/// max_Γ min_{C} dmax(C‖√Γ c1 √Γ): the inner minimum is exact, the outer
/// maximum is searched heuristically, so the result certifies only the
/// direction "the true value is at least this large". Also returns the best
/// dual comb found.
pub fn dmax_tilde_lower(
    c0: &Comb,
    c1: &Comb,
    eps: f64,
    cfg: &GammaSearchConfig,
) -> Result<(f64, DualCombElement), EntropyError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(EntropyError::Invalid(format!(
            "smoothing radius must lie in [0, 1), got {eps}"
        )));
    }
    if c0.signature() != c1.signature() {
        return Err(EntropyError::Invalid(
            "combs must share a signature to be compared".into(),
        ));
    }
    validate_search_budget(cfg)?;
    gamma_search(c0.signature(), cfg, |gamma| {
        Ok(dmax_tilde_inner(c0, c1, gamma, eps)?.0)
    })
}

/// Trace of the positive part of √Γ (c0 − λ c1) √Γ. Decreases continuously
/// from 1 at λ = 0 to 0 at λ = 2^dmax of the twirled pair.
pub fn delta_trace(
    c0: &Comb,
    c1: &Comb,
    gamma: &DualCombElement,
    lambda: f64,
) -> Result<f64, EntropyError> {
    if lambda < 0.0 {
        return Err(EntropyError::Invalid(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let t0 = gamma_twirl(gamma, c0.op())?;
    let t1 = gamma_twirl(gamma, c1.op())?;
    let diff = t0.sub(&t1.scale(lambda))?;
    Ok(diff.positive_part()?.trace().re)
}

/// The overlap curve g(λ) = √(TrΔ · (2 − TrΔ)) built on [`delta_trace`].
pub fn g_of_lambda(
    c0: &Comb,
    c1: &Comb,
    gamma: &DualCombElement,
    lambda: f64,
) -> Result<f64, EntropyError> {
    let d = delta_trace(c0, c1, gamma, lambda)?;
    Ok((d * (2.0 - d)).max(0.0).sqrt())
}

/// Invert one of the monotone curves: find λ with curve(λ) = target by
/// bisection on [0, 2^dmax] to absolute precision 1e-9 in λ.
pub fn lambda_for_target(
    c0: &Comb,
    c1: &Comb,
    gamma: &DualCombElement,
    target: f64,
    which: TargetCurve,
) -> Result<f64, EntropyError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(EntropyError::Invalid(format!(
            "target must lie strictly between 0 and 1, got {target}"
        )));
    }
    let t0 = gamma_twirl(gamma, c0.op())?;
    let t1 = gamma_twirl(gamma, c1.op())?;
    let top = dmax_spectral(&t0, &t1)?;
    if !top.is_finite() {
        return Err(EntropyError::Invalid(
            "curve has no finite bracket because the twirled supports differ".into(),
        ));
    }
    let mut lo = 0.0f64;
    let mut hi = top.exp2();
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        let val = match which {
            TargetCurve::TraceDelta => delta_trace(c0, c1, gamma, mid)?,
            TargetCurve::G => g_of_lambda(c0, c1, gamma, mid)?,
        };
        if val > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Umegaki relative entropy Tr ρ(log₂ρ − log₂σ) on the support of σ,
/// +∞ when supp(ρ) is not contained in supp(σ).
pub fn rel_entropy(rho: &LabeledOperator, sigma: &LabeledOperator) -> Result<f64, EntropyError> {
    let sigma_aligned = aligned_psd_pair(rho, sigma)?;
    if !support_contains(rho, &sigma_aligned, TOL_PSD)? {
        return Ok(f64::INFINITY);
    }
    let er = rho.eig_hermitian()?;
    let scale_r = er.values.amax();
    let mut entropy_term = 0.0;
    for &v in er.values.iter() {
        if v > 1e-14 * scale_r {
            entropy_term += v * v.log2();
        }
    }
    let es = sigma_aligned.eig_hermitian()?;
    let scale_s = es.values.amax();
    let logs: Vec<f64> = es
        .values
        .iter()
        .map(|&v| if v > TOL_PSD * scale_s { v.log2() } else { 0.0 })
        .collect();
    let log_sigma = es.recompose(&logs);
    let cross_term = (rho.matrix() * log_sigma).trace().re;
    Ok(entropy_term - cross_term)
}

/// Heuristic lower bound on max_Γ D(√Γ c0 √Γ‖√Γ c1 √Γ) over dual combs,
/// with the achieving Γ. When the twirled second argument is rank-deficient
/// the divergence is evaluated with the first argument restricted to that
/// support, so the result stays finite and remains a lower bound.
pub fn twirled_rel_entropy_max(
    c0: &Comb,
    c1: &Comb,
    cfg: &GammaSearchConfig,
) -> Result<(f64, DualCombElement), EntropyError> {
    if c0.signature() != c1.signature() {
        return Err(EntropyError::Invalid(
            "combs must share a signature to be compared".into(),
        ));
    }
    validate_search_budget(cfg)?;
    gamma_search(c0.signature(), cfg, |gamma| {
        let t0 = gamma_twirl(gamma, c0.op())?;
        let t1 = gamma_twirl(gamma, c1.op())?;
        if support_contains(&t0, &t1, TOL_PSD)? {
            rel_entropy(&t0, &t1)
        } else {
            let proj = t1.support_projector(TOL_PSD)?;
            let raw = proj.matrix() * t0.matrix() * proj.matrix();
            let sym = (&raw + raw.adjoint()).map(|v| v * 0.5);
            let restricted = LabeledOperator::new(t0.systems().to_vec(), sym)?;
            rel_entropy(&restricted, &t1)
        }
    })
}

/// Maximize an objective over the dual comb set: `samples` random starts
/// through the isometry parameterization, each refined by accept-if-better
/// perturbations. Deterministic for a fixed config.
pub(crate) fn validate_search_budget(cfg: &GammaSearchConfig) -> Result<(), EntropyError> {
    if cfg.samples == 0 {
        return Err(EntropyError::Invalid(
            "dual comb search needs at least one sample".into(),
        ));
    }
    Ok(())
}

pub(crate) fn gamma_search<F, E>(
    sig: &NetworkSignature,
    cfg: &GammaSearchConfig,
    mut objective: F,
) -> Result<(f64, DualCombElement), E>
where
    F: FnMut(&DualCombElement) -> Result<f64, E>,
    E: From<NetworkError>,
{
    assert!(cfg.samples > 0, "callers validate the search budget");
    let mut climb_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A_D00D_F00D);
    let mut best_value = f64::NEG_INFINITY;
    let mut best_gamma: Option<DualCombElement> = None;
    for i in 0..cfg.samples {
        let start_seed = cfg
            .seed
            .wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut params = DualCombParams::sample(sig, start_seed, 2);
        let mut gamma = params.build()?;
        let mut value = objective(&gamma)?;
        for _ in 0..cfg.ascent_steps {
            let cand_params = params.perturbed(&mut climb_rng, cfg.step_size);
            let cand_gamma = cand_params.build()?;
            let cand_value = objective(&cand_gamma)?;
            if cand_value > value {
                params = cand_params;
                gamma = cand_gamma;
                value = cand_value;
            }
        }
        if value > best_value {
            best_value = value;
            best_gamma = Some(gamma);
        }
    }
    Ok((best_value, best_gamma.expect("at least one sample")))
}
