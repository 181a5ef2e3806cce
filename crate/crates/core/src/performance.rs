//! Scores of causal networks against positive payoff operators, the
//! worst-case optimum over all networks, and its smoothed and many-copy
//! variants.
//!
//! The optimum is computed along two independent routes. The first finds the
//! least multiple of a dual element dominating the operator; substituting the
//! scaled element for the product of scale and element turns the bilinear
//! constraint into an affine hierarchy, so the whole program stays linear.
//! The second maximizes the score directly over the comb hierarchy. Strong
//! duality makes the two coincide, and the matrix certificate of the first is
//! an optimizer of the second, so both return a strategy replaying the value.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::entropy::add_comb_hierarchy;
use crate::network::{
    labeled_network_power, link_product, to_canonical_order, Comb, DualCombElement, NetworkError,
    NetworkSignature, Tester,
};
use crate::sdp::{ModelBuilder, OpExpr, SdpError, SdpSolution, SdpStatus, SolverConfig};
use crate::tensorspace::{trace_distance, LabeledOperator, TensorError, TOL_PSD};

/// Largest joint dimension accepted by the tensor-power programs.
pub const POWER_DIM_CAP: usize = 64;

/// Relative agreement required of the multiplicativity identity.
pub const TOL_MULTIPLICATIVE: f64 = 1e-5;

fn solver_config() -> SolverConfig {
    SolverConfig { gap_tol: 1e-9, feas_tol: 1e-9, max_iter: 200 }.with_env_override()
}

#[derive(Debug, Error)]
pub enum PerformanceError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("joint dimension {0} of the tensor power exceeds the solver cap {1}")]
    DimensionCap(usize, usize),
}

/// A positive operator assigning a score to every network of its signature
/// through the link pairing, so an operator assembled from a weighted tester
/// scores exactly the expected weight of the measured outcome.
#[derive(Debug, Clone)]
pub struct PerformanceOperator {
    omega: LabeledOperator,
    signature: NetworkSignature,
    provenance: Option<(Tester, Vec<f64>)>,
}

impl PerformanceOperator {
    /// Wrap a positive operator whose labels describe a network signature.
    pub fn new(op: LabeledOperator) -> Result<Self, PerformanceError> {
        let signature = NetworkSignature::from_labels(&op)?;
        let omega = to_canonical_order(&op)?;
        let scale = omega.frobenius_norm().max(1.0);
        let min = omega.min_eigenvalue()?;
        if min < -TOL_PSD * scale {
            return Err(PerformanceError::Invalid(format!(
                "operator has negative eigenvalue {min:.3e}"
            )));
        }
        Ok(Self { omega, signature, provenance: None })
    }

    /// Assemble the weighted sum of a tester's outcome operators, keeping the
    /// tester and weights for provenance. The weights follow the outcome
    /// order; the sum must stay positive.
    pub fn from_tester(tester: &Tester, weights: &[f64]) -> Result<Self, PerformanceError> {
        if weights.len() != tester.outcomes.len() {
            return Err(PerformanceError::Invalid(format!(
                "{} weights for {} outcomes",
                weights.len(),
                tester.outcomes.len()
            )));
        }
        let mut acc = tester.outcomes[0].scale(weights[0]);
        for (outcome, &w) in tester.outcomes.iter().zip(weights).skip(1) {
            acc = acc.add(&outcome.reorder_like(&acc)?.scale(w))?;
        }
        let mut built = Self::new(acc)?;
        built.provenance = Some((tester.clone(), weights.to_vec()));
        Ok(built)
    }

    pub fn omega(&self) -> &LabeledOperator {
        &self.omega
    }

    pub fn signature(&self) -> &NetworkSignature {
        &self.signature
    }

    /// The tester and weights this operator was assembled from, if any.
    pub fn provenance(&self) -> Option<(&Tester, &[f64])> {
        self.provenance.as_ref().map(|(t, w)| (t, w.as_slice()))
    }
}

/// The strategy achieving a reported optimum.
#[derive(Debug, Clone)]
pub enum ScoreOptimizer {
    /// A dual element whose multiple by the value dominates the operator,
    /// certifying the maximum from above.
    Dual(DualCombElement),
    /// A network reaching the value, certifying the maximum from below.
    Comb(Comb),
}

/// An optimal score with the achieving strategy and the solver certificate.
#[derive(Debug, Clone)]
pub struct ScoreResult {
    pub value: f64,
    pub optimizer: ScoreOptimizer,
    pub certificate: SdpSolution,
}

/// The score of a network: the full link contraction of the operator with
/// the network, matching the weighted outcome probabilities of the tester
/// the operator came from.
pub fn score(po: &PerformanceOperator, c: &Comb) -> Result<f64, PerformanceError> {
    if c.signature() != po.signature() {
        return Err(PerformanceError::Invalid(format!(
            "network signature {:?} does not match the operator's {:?}",
            c.signature(),
            po.signature()
        )));
    }
    let scalar = link_product(&po.omega, c.op())?;
    if scalar.matrix().nrows() != 1 {
        return Err(PerformanceError::Invalid(
            "the operator and the network share no wire names".into(),
        ));
    }
    let z = scalar.matrix()[(0, 0)];
    if z.im.abs() > 1e-9 * (1.0 + z.re.abs()) {
        return Err(PerformanceError::Invalid(format!("score has imaginary part {:.3e}", z.im)));
    }
    Ok(z.re)
}

struct ConeSolve {
    value: f64,
    xi_mat: DMatrix<C64>,
    comb_dual: DMatrix<C64>,
    sol: SdpSolution,
}

/// Minimize the trace of the innermost hierarchy block subject to the lifted
/// top block dominating the operator. All hierarchy rows are homogeneous, so
/// the dual matrix of the single semidefinite block is an optimal comb and
/// the dual objective its score.
fn solve_cone(omega: &LabeledOperator, sig: &NetworkSignature) -> Result<ConeSolve, PerformanceError> {
    let dims: Vec<usize> = omega.systems().iter().map(|s| s.dim).collect();
    let nn = sig.n_teeth();
    let mut mb = ModelBuilder::new();

    let mut xi_dims = dims[..2 * (nn - 1)].to_vec();
    xi_dims.push(dims[2 * nn - 1]);
    let xi_top = mb.herm_var(&xi_dims);
    let lifted_top = xi_top.expr().insert_identity(2 * (nn - 1), sig.out_dim(nn));
    mb.psd(&lifted_top.sub(&OpExpr::constant(omega.matrix().clone(), dims.clone())));

    let mut level_var = xi_top.clone();
    for level in (2..=nn).rev() {
        let traced = level_var.expr().partial_trace(&[2 * level - 2]);
        let mut lower_dims = dims[..2 * (level - 2)].to_vec();
        lower_dims.push(dims[2 * level - 3]);
        let lower = mb.herm_var(&lower_dims);
        let lifted = lower.expr().insert_identity(2 * (level - 2), sig.out_dim(level - 1));
        mb.eq_zero(&traced.sub(&lifted));
        level_var = lower;
    }
    mb.minimize(&level_var.trace());

    let sol = mb.solve(&solver_config())?;
    match sol.status {
        SdpStatus::Optimal | SdpStatus::MaxIterations => {}
        other => {
            return Err(PerformanceError::Invalid(format!(
                "score program ended with status {other:?} although scaled dual elements are feasible"
            )));
        }
    }
    let xi_mat = xi_top.value(&sol.y);
    let comb_dual = sol.z_blocks[0].clone();
    Ok(ConeSolve { value: sol.objective, xi_mat, comb_dual, sol })
}

fn theta_from_cone(
    po: &PerformanceOperator,
    xi_mat: DMatrix<C64>,
    lam: f64,
) -> Result<DualCombElement, PerformanceError> {
    if lam <= 1e-12 {
        let op = LabeledOperator::identity(po.omega.systems().to_vec())
            .scale(1.0 / po.signature.in_dim_product() as f64);
        return Ok(DualCombElement::new_unchecked(op)?);
    }
    let nn = po.signature.n_teeth();
    let mut xi_systems = po.omega.systems().to_vec();
    let out_label = xi_systems.remove(2 * (nn - 1));
    let xi_op = LabeledOperator::new(xi_systems, xi_mat)?;
    let full = LabeledOperator::identity(vec![out_label]).tensor(&xi_op)?.reorder_like(&po.omega)?;
    Ok(DualCombElement::with_tolerance(full.scale(1.0 / lam), 1e-6)?)
}

/// Maximum score over all networks of the operator's signature, as the least
/// multiple of a dual element dominating the operator.
pub fn wmax_primal(po: &PerformanceOperator) -> Result<ScoreResult, PerformanceError> {
    let cone = solve_cone(&po.omega, &po.signature)?;
    let theta = theta_from_cone(po, cone.xi_mat, cone.value)?;
    Ok(ScoreResult {
        value: cone.value,
        optimizer: ScoreOptimizer::Dual(theta),
        certificate: cone.sol,
    })
}

/// Maximum score over all networks by direct maximization over the comb
/// hierarchy; the cross-check partner of [`wmax_primal`].
pub fn wmax_dual(po: &PerformanceOperator) -> Result<ScoreResult, PerformanceError> {
    let dims: Vec<usize> = po.omega.systems().iter().map(|s| s.dim).collect();
    let mut mb = ModelBuilder::new();
    let m = mb.herm_var(&dims);
    mb.psd(&m.expr());
    add_comb_hierarchy(&mut mb, &m, &po.signature);
    let omega_t = po.omega.matrix().transpose();
    mb.minimize(&m.inner(&omega_t).scale(-1.0));

    let sol = mb.solve(&solver_config())?;
    match sol.status {
        SdpStatus::Optimal | SdpStatus::MaxIterations => {}
        other => {
            return Err(PerformanceError::Invalid(format!(
                "score program ended with status {other:?} although the uniform network is feasible"
            )));
        }
    }
    let value = -sol.objective;
    let m_op = LabeledOperator::new(po.omega.systems().to_vec(), m.value(&sol.y))?;
    let comb = Comb::with_tolerance(m_op, 1e-6)?;
    Ok(ScoreResult { value, optimizer: ScoreOptimizer::Comb(comb), certificate: sol })
}

fn symmetrize(m: DMatrix<C64>) -> DMatrix<C64> {
    let adj = m.adjoint();
    (m + adj) * C64::new(0.5, 0.0)
}

/// Best feasible move of the operator toward a network direction: strip up to
/// `eps` of eigenvalue mass from the directions the network values least and
/// re-deposit it along the network's top eigenvector. Stays in the cone, on
/// the trace shell, and inside the trace-distance ball by construction.
fn shift_toward(omega: &DMatrix<C64>, toward: &DMatrix<C64>, eps: f64) -> DMatrix<C64> {
    let d = omega.nrows();
    let eig = symmetrize(omega.clone()).symmetric_eigen();
    let m_eig = symmetrize(toward.clone()).symmetric_eigen();

    let mut top = 0;
    for i in 1..d {
        if m_eig.eigenvalues[i] > m_eig.eigenvalues[top] {
            top = i;
        }
    }
    let gain = m_eig.eigenvalues[top];
    let u = m_eig.eigenvectors.column(top).into_owned();

    let q: Vec<f64> = (0..d)
        .map(|i| {
            let e = eig.eigenvectors.column(i);
            (e.adjoint() * toward * e)[(0, 0)].re
        })
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| q[a].partial_cmp(&q[b]).unwrap());

    let mut shifted = omega.clone();
    let mut remaining = eps;
    let mut moved = 0.0;
    for &i in &order {
        if remaining <= 1e-15 || q[i] >= gain - 1e-12 {
            break;
        }
        let r = remaining.min(eig.eigenvalues[i].max(0.0));
        if r <= 0.0 {
            continue;
        }
        let e = eig.eigenvectors.column(i).into_owned();
        shifted -= (&e * e.adjoint()) * C64::new(r, 0.0);
        moved += r;
        remaining -= r;
    }
    shifted += (&u * u.adjoint()) * C64::new(moved, 0.0);
    symmetrize(shifted)
}

/// Bracket the smoothed maximum score over the trace-distance ball of radius
/// `eps`: positive operators at trace distance at most `eps` from the input
/// with the same trace. The lower bound comes from alternating maximization
/// inside the ball, seeded by the unsmoothed optimizer and always keeping the
/// unsmoothed value; the upper bound is the value plus `eps` times the
/// product of output dimensions.
pub fn wmax_smooth(
    po: &PerformanceOperator,
    eps: f64,
    iters: u32,
) -> Result<(f64, f64), PerformanceError> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(PerformanceError::Invalid(format!(
            "smoothing radius {eps} must be finite and nonnegative"
        )));
    }
    let base = solve_cone(&po.omega, &po.signature)?;
    if eps == 0.0 {
        return Ok((base.value, base.value));
    }
    let upper = base.value + eps * po.signature.out_dim_product() as f64;
    let mut best = base.value;
    let mut direction = base.comb_dual;
    for _ in 0..iters {
        let shifted = shift_toward(po.omega.matrix(), &direction, eps);
        let shifted_op = LabeledOperator::new(po.omega.systems().to_vec(), shifted)?;
        let cone = solve_cone(&shifted_op, &po.signature)?;
        if cone.value > best {
            best = cone.value;
        }
        direction = cone.comb_dual;
    }
    Ok((best, upper))
}

/// Comparison of the maximum score of the n-fold tensor power with the n-th
/// power of the single-copy maximum.
#[derive(Debug, Clone)]
pub struct MultiplicativityReport {
    pub n: u32,
    /// Single-copy maximum score.
    pub base: f64,
    /// Its n-th power.
    pub power: f64,
    /// Maximum score of the tensor power.
    pub tensored: f64,
    pub relative_gap: f64,
    pub within_tolerance: bool,
}

/// Check that the maximum score is multiplicative under tensor powers. Joint
/// dimensions above [`POWER_DIM_CAP`] are refused.
pub fn multiplicativity_check(
    po: &PerformanceOperator,
    n: u32,
) -> Result<MultiplicativityReport, PerformanceError> {
    if n == 0 {
        return Err(PerformanceError::Invalid("power must be at least 1".into()));
    }
    let powered_dim = po.signature.tensor_power(n).total_dim();
    if powered_dim > POWER_DIM_CAP {
        return Err(PerformanceError::DimensionCap(powered_dim, POWER_DIM_CAP));
    }
    let base = solve_cone(&po.omega, &po.signature)?.value;
    let power = base.powi(n as i32);
    let tensored = if n == 1 {
        base
    } else {
        let big = labeled_network_power(&po.omega, n)?;
        let sig = NetworkSignature::from_labels(&big)?;
        solve_cone(&big, &sig)?.value
    };
    let relative_gap = (tensored - power).abs() / power.abs().max(1.0);
    Ok(MultiplicativityReport {
        n,
        base,
        power,
        tensored,
        relative_gap,
        within_tolerance: relative_gap <= TOL_MULTIPLICATIVE,
    })
}

/// One row of the finite-size rate table for the smoothed maximum score of
/// tensor powers.
#[derive(Debug, Clone)]
pub struct SeriesRow {
    pub n: u32,
    /// log₂ of the smoothed lower bound, per copy.
    pub lower_rate: f64,
    /// log₂ of the smoothed upper bound, per copy.
    pub upper_rate: f64,
    /// Whether the bracket sits inside the chain from the single-copy value:
    /// the n-th power below, the n-th power plus radius times the powered
    /// dimension factor above.
    pub chain_ok: bool,
}

/// Tabulate per-copy rates of the smoothed maximum score for tensor powers
/// up to `n_max`.
pub fn asymptotic_series(
    po: &PerformanceOperator,
    eps: f64,
    n_max: u32,
) -> Result<Vec<SeriesRow>, PerformanceError> {
    if n_max == 0 {
        return Err(PerformanceError::Invalid("the series needs at least one row".into()));
    }
    let base = solve_cone(&po.omega, &po.signature)?.value;
    let dim_factor = po.signature.out_dim_product() as f64;
    let mut rows = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        let powered_dim = po.signature.tensor_power(n).total_dim();
        if powered_dim > POWER_DIM_CAP {
            return Err(PerformanceError::DimensionCap(powered_dim, POWER_DIM_CAP));
        }
        let big_po = if n == 1 {
            po.clone()
        } else {
            PerformanceOperator::new(labeled_network_power(&po.omega, n)?)?
        };
        let (lower, upper) = wmax_smooth(&big_po, eps, 4)?;
        let nf = n as f64;
        let chain_lo = base.powi(n as i32);
        let chain_up = chain_lo + eps * dim_factor.powi(n as i32);
        let chain_ok = lower >= chain_lo - 1e-6 * chain_lo.max(1.0)
            && upper <= chain_up + 1e-6 * chain_up.max(1.0);
        rows.push(SeriesRow {
            n,
            lower_rate: lower.log2() / nf,
            upper_rate: upper.log2() / nf,
            chain_ok,
        });
    }
    Ok(rows)
}

/// Outcome of the trace-distance continuity bound on the maximum score.
#[derive(Debug, Clone)]
pub struct LipschitzReport {
    /// Signed difference of the two maximum scores.
    pub difference: f64,
    /// Trace distance between the operators.
    pub epsilon: f64,
    /// Product of the signature's output dimensions.
    pub dimension_factor: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Check that the maximum score moves by at most the trace distance times
/// the product of output dimensions. The two operators must share a
/// signature and a trace.
pub fn lipschitz_check(
    m1: &PerformanceOperator,
    m2: &PerformanceOperator,
) -> Result<LipschitzReport, PerformanceError> {
    if m1.signature != m2.signature {
        return Err(PerformanceError::Invalid(format!(
            "signatures {:?} and {:?} differ",
            m1.signature, m2.signature
        )));
    }
    let a = &m1.omega;
    let b = m2.omega.reorder_like(a)?;
    let tr_a = a.matrix().trace().re;
    let tr_b = b.matrix().trace().re;
    if (tr_a - tr_b).abs() > 1e-9 * tr_a.abs().max(1.0) {
        return Err(PerformanceError::Invalid(format!(
            "traces {tr_a} and {tr_b} differ; the continuity bound holds on a trace shell"
        )));
    }
    let epsilon = trace_distance(a, &b)?;
    let w1 = solve_cone(a, &m1.signature)?.value;
    let w2 = solve_cone(&b, &m1.signature)?.value;
    let dimension_factor = m1.signature.out_dim_product() as f64;
    let bound = dimension_factor * epsilon;
    let difference = w1 - w2;
    Ok(LipschitzReport {
        difference,
        epsilon,
        dimension_factor,
        bound,
        holds: difference.abs() <= bound + 1e-7,
    })
}
