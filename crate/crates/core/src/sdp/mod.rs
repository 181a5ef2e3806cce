//! Semidefinite programming over complex Hermitian linear matrix inequalities.
//!
//! Problems have the dual-standard shape
//!
//! ```text
//!     minimize    c' y
//!     subject to  sum_i y_i F_i - F_0  >= 0   (one LMI per block)
//!                 A y = b
//! ```
//!
//! with real decision vector `y` and Hermitian data `F_i`. The solver is a
//! primal-dual interior-point method on the homogeneous self-dual embedding
//! with Nesterov-Todd scaling and a Mehrotra corrector. Complex blocks are
//! embedded as real symmetric blocks of twice the dimension internally;
//! returned dual matrices are complex again and satisfy
//! `sum_b <F_0_b, Z_b> - b'nu = dual objective`.

mod model;
mod solver;

pub use model::{HermVar, LinScalar, ModelBuilder, OpExpr};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("LMI block {0} has dimension {1}, above the supported cap of 256")]
    BlockTooLarge(usize, usize),
    #[error("problem has no variables")]
    NoVariables,
    #[error("coefficient list of block {0} has wrong length")]
    BadCoefficients(usize),
    #[error("matrix data is not Hermitian (residual {0:.3e})")]
    NotHermitian(f64),
    #[error("linear algebra failure in the interior-point iteration: {0}")]
    Numerical(String),
}

/// Sparse Hermitian matrix in coordinate form; both triangles are stored and
/// repeated entries accumulate.
#[derive(Debug, Clone, Default)]
pub struct SparseHerm {
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseHerm {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self, dim: usize) -> DMatrix<C64> {
        let mut m = DMatrix::<C64>::zeros(dim, dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// Real inner product <self, Z> = Tr[self Z] for Hermitian Z.
    pub fn inner(&self, z: &DMatrix<C64>) -> f64 {
        let mut acc = 0.0;
        for &(r, c, v) in &self.entries {
            acc += (v * z[(c, r)]).re;
        }
        acc
    }
}

/// One linear matrix inequality `sum_i y_i coeffs[i] - f0 >= 0`.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub dim: usize,
    pub f0: DMatrix<C64>,
    /// One (possibly empty) coefficient matrix per decision variable.
    pub coeffs: Vec<SparseHerm>,
}

/// A complete problem instance.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub c: Vec<f64>,
    pub blocks: Vec<LmiBlock>,
    /// Sparse equality rows `sum_i a_i y_i = b`.
    pub eq_rows: Vec<Vec<(usize, f64)>>,
    pub eq_rhs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// The LMI system admits no solution; `eq_duals` and `z_blocks` hold the
    /// scaled Farkas certificate.
    Infeasible,
    /// The objective is unbounded below; `y` holds an improving ray.
    Unbounded,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub y: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    /// Relative duality gap at termination.
    pub gap: f64,
    /// Dual matrix per LMI block, complex Hermitian.
    pub z_blocks: Vec<DMatrix<C64>>,
    pub eq_duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { gap_tol: 1e-7, feas_tol: 1e-8, max_iter: 100 }
    }
}

impl SolverConfig {
    /// Replace the gap tolerance with the `COMBKIT_SOLVER_TOL` environment
    /// variable when it parses as a positive finite float; otherwise keep
    /// the configured value.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(text) = std::env::var("COMBKIT_SOLVER_TOL") {
            if let Ok(tol) = text.trim().parse::<f64>() {
                if tol.is_finite() && tol > 0.0 {
                    self.gap_tol = tol;
                }
            }
        }
        self
    }
}

impl SdpProblem {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn solve(&self, config: &SolverConfig) -> Result<SdpSolution, SdpError> {
        solver::solve(self, config)
    }

    /// Value of the LMI left-hand side `sum_i y_i F_i - F_0` of one block.
    pub fn lmi_value(&self, block: usize, y: &[f64]) -> DMatrix<C64> {
        let b = &self.blocks[block];
        let mut m = -b.f0.clone();
        for (i, coeff) in b.coeffs.iter().enumerate() {
            if !coeff.is_empty() {
                for &(r, c, v) in &coeff.entries {
                    m[(r, c)] += v * C64::new(y[i], 0.0);
                }
            }
        }
        m
    }
}

/// Independent recomputation of optimality conditions from returned data.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    /// Minimum eigenvalue of each LMI value, scaled by block norm.
    pub lmi_min_eigs: Vec<f64>,
    /// Minimum eigenvalue of each dual block, scaled.
    pub dual_min_eigs: Vec<f64>,
    /// Largest violation of the equality rows at `y`.
    pub eq_residual: f64,
    /// Largest violation of dual stationarity
    /// `sum_b <F_i, Z_b> = c_i + (A' nu)_i`.
    pub stationarity_residual: f64,
    /// Total complementary slack `sum_b <LMI_b, Z_b>`, scaled.
    pub complementarity: f64,
    /// Relative primal-dual objective difference.
    pub objective_gap: f64,
}

impl CertificateReport {
    pub fn is_valid(&self, tol: f64) -> bool {
        self.lmi_min_eigs.iter().all(|&e| e >= -tol)
            && self.dual_min_eigs.iter().all(|&e| e >= -tol)
            && self.eq_residual <= tol
            && self.stationarity_residual <= tol
            && self.complementarity.abs() <= tol
            && self.objective_gap <= tol
    }
}

fn hermitian_min_eig(m: &DMatrix<C64>) -> f64 {
    let h = (m + m.adjoint()).scale(0.5);
    let eig = h.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Recheck an optimal solution against the problem data from scratch.
pub fn check_certificate(problem: &SdpProblem, sol: &SdpSolution) -> CertificateReport {
    let n = problem.n_vars();
    let mut lmi_min_eigs = Vec::with_capacity(problem.blocks.len());
    let mut dual_min_eigs = Vec::with_capacity(problem.blocks.len());
    let mut complementarity = 0.0;
    let mut stationarity = vec![0.0f64; n];

    for (bi, block) in problem.blocks.iter().enumerate() {
        let k = problem.lmi_value(bi, &sol.y);
        let scale = k.norm().max(1.0);
        lmi_min_eigs.push(hermitian_min_eig(&k) / scale);
        let z = &sol.z_blocks[bi];
        let zscale = z.norm().max(1.0);
        dual_min_eigs.push(hermitian_min_eig(z) / zscale);
        complementarity += (&k * z).trace().re;
        for (i, coeff) in block.coeffs.iter().enumerate() {
            if !coeff.is_empty() {
                stationarity[i] += coeff.inner(z);
            }
        }
    }
    let mut eq_residual = 0.0f64;
    for (row, &rhs) in problem.eq_rows.iter().zip(&problem.eq_rhs) {
        let lhs: f64 = row.iter().map(|&(i, a)| a * sol.y[i]).sum();
        eq_residual = eq_residual.max((lhs - rhs).abs());
    }
    for (r, row) in problem.eq_rows.iter().enumerate() {
        for &(i, a) in row {
            stationarity[i] -= a * sol.eq_duals[r];
        }
    }
    let stationarity_residual = stationarity
        .iter()
        .zip(&problem.c)
        .map(|(&s, &ci)| (s - ci).abs())
        .fold(0.0f64, f64::max)
        / problem.c.iter().map(|v| v.abs()).fold(1.0f64, f64::max);

    let denom = sol.objective.abs().max(1.0);
    CertificateReport {
        lmi_min_eigs,
        dual_min_eigs,
        eq_residual,
        stationarity_residual,
        complementarity: complementarity / denom,
        objective_gap: (sol.objective - sol.dual_objective).abs() / denom,
    }
}
