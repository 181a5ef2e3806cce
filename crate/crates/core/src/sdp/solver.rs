//! Homogeneous self-dual interior-point solver for block-LMI problems.
//!
//! The implementation follows the classic conelp recipe: Nesterov-Todd
//! scaling of the semidefinite cone, a Mehrotra predictor-corrector step, and
//! the homogeneous embedding variables (tau, kappa) so that infeasibility and
//! unboundedness emerge as certificates instead of divergence. Complex
//! Hermitian blocks are solved as real symmetric blocks of twice the size.
//!
//! Per iteration the KKT system is reduced to the dense Schur complement on
//! the decision variables: H[i][j] = sum_b <F_i, Winv F_j Winv>. Coefficient
//! matrices are sparse, so H costs O(n d^2) per block plus O(n^2 nnz), which
//! stays cheap for the moderate sizes this crate produces.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64 as C64;

use super::{SdpError, SdpProblem, SdpSolution, SdpStatus, SolverConfig};

const STEP: f64 = 0.99;
const EXPON: i32 = 3;
const MAX_REAL_DIM: usize = 256;

struct RealBlock {
    dim: usize,
    f0: DMatrix<f64>,
    /// Sparse coefficient entries per decision variable.
    cols: Vec<Vec<(usize, usize, f64)>>,
    /// Index of the variables with entries in this block.
    active: Vec<usize>,
    /// Dimension before embedding; zero for blocks that were real already.
    complex_dim: usize,
}

fn embed_entry(out: &mut Vec<(usize, usize, f64)>, d: usize, r: usize, c: usize, v: C64) {
    if v.re != 0.0 {
        out.push((r, c, v.re));
        out.push((r + d, c + d, v.re));
    }
    if v.im != 0.0 {
        out.push((r, c + d, -v.im));
        out.push((r + d, c, v.im));
    }
}

fn build_real_blocks(problem: &SdpProblem) -> Result<Vec<RealBlock>, SdpError> {
    let n = problem.n_vars();
    let mut blocks = Vec::with_capacity(problem.blocks.len());
    for (bi, block) in problem.blocks.iter().enumerate() {
        if block.coeffs.len() != n {
            return Err(SdpError::BadCoefficients(bi));
        }
        let d = block.dim;
        let herm_res = (&block.f0 - block.f0.adjoint()).norm();
        if herm_res > 1e-9 * block.f0.norm().max(1.0) {
            return Err(SdpError::NotHermitian(herm_res));
        }
        let is_real = block.f0.iter().all(|v| v.im == 0.0)
            && block.coeffs.iter().all(|c| c.entries.iter().all(|e| e.2.im == 0.0));
        let (dim, complex_dim) = if is_real { (d, 0) } else { (2 * d, d) };
        if dim > MAX_REAL_DIM {
            return Err(SdpError::BlockTooLarge(bi, dim));
        }
        let f0 = if is_real {
            DMatrix::from_fn(d, d, |r, c| block.f0[(r, c)].re)
        } else {
            DMatrix::from_fn(2 * d, 2 * d, |r, c| {
                let (rr, cc) = (r % d, c % d);
                match (r < d, c < d) {
                    (true, true) | (false, false) => block.f0[(rr, cc)].re,
                    (true, false) => -block.f0[(rr, cc)].im,
                    (false, true) => block.f0[(rr, cc)].im,
                }
            })
        };
        let mut cols = Vec::with_capacity(n);
        let mut active = Vec::new();
        for (i, coeff) in block.coeffs.iter().enumerate() {
            let mut entries = Vec::new();
            for &(r, c, v) in &coeff.entries {
                if is_real {
                    if v.re != 0.0 {
                        entries.push((r, c, v.re));
                    }
                } else {
                    embed_entry(&mut entries, d, r, c, v);
                }
            }
            if !entries.is_empty() {
                active.push(i);
            }
            cols.push(entries);
        }
        blocks.push(RealBlock { dim, f0, cols, active, complex_dim });
    }
    Ok(blocks)
}

/// Symmetric eigenvalue floor of a dense symmetric matrix.
fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    let h = (m + m.transpose()).scale(0.5);
    h.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Nesterov-Todd scaling data for one block.
struct Scaling {
    lambda: DVector<f64>,
    r: DMatrix<f64>,
    wmat: DMatrix<f64>,
    winv: DMatrix<f64>,
    ls: DMatrix<f64>,
    lz: DMatrix<f64>,
}

fn nt_scaling(s: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Scaling, SdpError> {
    let d = s.nrows();
    let chol_s = Cholesky::new(s.clone())
        .ok_or_else(|| SdpError::Numerical("primal slack left the cone".into()))?;
    let chol_z = Cholesky::new(z.clone())
        .ok_or_else(|| SdpError::Numerical("dual slack left the cone".into()))?;
    let ls = chol_s.l();
    let lz = chol_z.l();
    let m = lz.transpose() * &ls;
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let sigma = svd.singular_values.map(|v| v.max(1e-150));

    let mut v_sig = vt.transpose();
    for j in 0..d {
        let f = 1.0 / sigma[j].sqrt();
        v_sig.column_mut(j).scale_mut(f);
    }
    let r = &ls * &v_sig;
    let _ = u;
    let wmat = &r * r.transpose();
    let winv = wmat
        .clone()
        .try_inverse()
        .ok_or_else(|| SdpError::Numerical("scaling matrix is singular".into()))?;
    Ok(Scaling { lambda: sigma, r, wmat, winv, ls, lz })
}

/// max t such that X + t dX stays PSD, given the Cholesky factor of X.
fn step_bound(l: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let li = l
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::identity(l.nrows(), l.nrows()));
    let n = &li * dx * li.transpose();
    let m = min_eig_sym(&n);
    if m >= 0.0 {
        f64::INFINITY
    } else {
        1.0 / (-m)
    }
}

struct Kkt<'a> {
    blocks: &'a [RealBlock],
    scalings: Vec<Scaling>,
    chol_h: Option<Cholesky<f64, nalgebra::Dyn>>,
    chol_schur: Option<Cholesky<f64, nalgebra::Dyn>>,
    lu_full: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    a_mat: &'a DMatrix<f64>,
    n: usize,
    p: usize,
}

impl<'a> Kkt<'a> {
    fn factor(
        blocks: &'a [RealBlock],
        scalings: Vec<Scaling>,
        a_mat: &'a DMatrix<f64>,
        n: usize,
        p: usize,
    ) -> Result<Self, SdpError> {
        let mut h = DMatrix::<f64>::zeros(n, n);
        for (b, sc) in blocks.iter().zip(&scalings) {
            let winv = &sc.winv;
            // Dense conjugated images of the active coefficient matrices.
            let mut images: Vec<DMatrix<f64>> = Vec::with_capacity(b.active.len());
            for &i in &b.active {
                let mut m = DMatrix::<f64>::zeros(b.dim, b.dim);
                for &(r, c, v) in &b.cols[i] {
                    // m += v * winv[:,r] * winv[:,c]^T
                    m.ger(v, &winv.column(r), &winv.column(c), 1.0);
                }
                images.push(m);
            }
            for (ai, &i) in b.active.iter().enumerate() {
                for (aj, &j) in b.active.iter().enumerate() {
                    if j < i {
                        continue;
                    }
                    let mut acc = 0.0;
                    for &(r, c, v) in &b.cols[j] {
                        acc += v * images[ai][(r, c)];
                    }
                    h[(i, j)] += acc;
                    if i != j {
                        h[(j, i)] += acc;
                    }
                    let _ = aj;
                }
            }
        }
        // Cholesky with a Schur complement for the equality rows; dense LU of
        // the full saddle system when H is singular. A tiny diagonal shift
        // keeps the factorization usable when the scaling point is nearly
        // degenerate; the refinement loop in `solve` removes the bias.
        let mut sym_h = (&h + h.transpose()).scale(0.5);
        let max_diag = (0..n).map(|i| sym_h[(i, i)].abs()).fold(0.0, f64::max);
        let shift = 1e-13 * (1.0 + max_diag);
        for i in 0..n {
            sym_h[(i, i)] += shift;
        }
        if let Some(chol_h) = Cholesky::new(sym_h.clone()) {
            if p == 0 {
                return Ok(Self {
                    blocks,
                    scalings,
                    chol_h: Some(chol_h),
                    chol_schur: None,
                    lu_full: None,
                    a_mat,
                    n,
                    p,
                });
            }
            let at = a_mat.transpose();
            let h_inv_at = chol_h.solve(&at);
            let schur = a_mat * h_inv_at;
            let schur = (&schur + schur.transpose()).scale(0.5);
            if let Some(chol_schur) = Cholesky::new(schur) {
                return Ok(Self {
                    blocks,
                    scalings,
                    chol_h: Some(chol_h),
                    chol_schur: Some(chol_schur),
                    lu_full: None,
                    a_mat,
                    n,
                    p,
                });
            }
        }
        let mut full = DMatrix::<f64>::zeros(n + p, n + p);
        full.view_mut((0, 0), (n, n)).copy_from(&sym_h);
        if p > 0 {
            full.view_mut((0, n), (n, p)).copy_from(&a_mat.transpose());
            full.view_mut((n, 0), (p, n)).copy_from(a_mat);
        }
        let lu = full.lu();
        Ok(Self {
            blocks,
            scalings,
            chol_h: None,
            chol_schur: None,
            lu_full: Some(lu),
            a_mat,
            n,
            p,
        })
    }

    /// Solve with iterative refinement; near convergence a single solve with
    /// the ill-conditioned Schur system leaves residuals far above machine
    /// precision. Refinement continues while it makes clear progress.
    fn solve(
        &self,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &[DMatrix<f64>],
    ) -> Result<(DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>), SdpError> {
        let (mut dx, mut dy, mut dz) = self.solve_raw(bx, by, bz)?;
        let rhs_scale = 1.0
            + bx.norm()
            + by.norm()
            + bz.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        let mut prev_rnorm = f64::INFINITY;
        for _ in 0..8 {
            // Residuals of the unreduced equations.
            let mut r1 = bx.clone();
            if self.p > 0 {
                r1 -= self.a_mat.transpose() * &dy;
            }
            for (b, z) in self.blocks.iter().zip(&dz) {
                for &i in &b.active {
                    let mut acc = 0.0;
                    for &(r, c, v) in &b.cols[i] {
                        acc += v * z[(r, c)];
                    }
                    r1[i] += acc;
                }
            }
            let r2 = if self.p > 0 { by - self.a_mat * &dx } else { by.clone() };
            let mut r3 = Vec::with_capacity(self.blocks.len());
            for ((b, sc), (bz_b, dzb)) in
                self.blocks.iter().zip(&self.scalings).zip(bz.iter().zip(&dz))
            {
                let mut m = bz_b.clone();
                for &i in &b.active {
                    let xi = dx[i];
                    if xi != 0.0 {
                        for &(r, c, v) in &b.cols[i] {
                            m[(r, c)] += xi * v;
                        }
                    }
                }
                m += &sc.wmat * dzb * &sc.wmat;
                r3.push(m);
            }
            let rnorm = (r1.norm_squared()
                + r2.norm_squared()
                + r3.iter().map(|m| m.norm_squared()).sum::<f64>())
            .sqrt();
            if rnorm <= 1e-14 * rhs_scale || rnorm >= 0.5 * prev_rnorm {
                break;
            }
            prev_rnorm = rnorm;
            let (ex, ey, ez) = self.solve_raw(&r1, &r2, &r3)?;
            dx += ex;
            dy += ey;
            for (z, e) in dz.iter_mut().zip(&ez) {
                *z += e;
            }
        }
        Ok((dx, dy, dz))
    }

    /// Solve the reduced KKT system
    ///   H dx + A' dy = bx - q(bz),   A dx = by,
    ///   dZ_b = -Winv (bZ_b + sum_i dx_i F_i) Winv.
    fn solve_raw(
        &self,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &[DMatrix<f64>],
    ) -> Result<(DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>), SdpError> {
        let mut rx = bx.clone();
        let mut conj: Vec<DMatrix<f64>> = Vec::with_capacity(self.blocks.len());
        for ((b, sc), bz_b) in self.blocks.iter().zip(&self.scalings).zip(bz) {
            let t = &sc.winv * bz_b * &sc.winv;
            for &i in &b.active {
                let mut acc = 0.0;
                for &(r, c, v) in &b.cols[i] {
                    acc += v * t[(r, c)];
                }
                rx[i] -= acc;
            }
            conj.push(t);
        }
        let (dx, dy);
        if let Some(lu) = &self.lu_full {
            let mut rhs = DVector::<f64>::zeros(self.n + self.p);
            rhs.rows_mut(0, self.n).copy_from(&rx);
            rhs.rows_mut(self.n, self.p).copy_from(by);
            let sol = lu
                .solve(&rhs)
                .ok_or_else(|| SdpError::Numerical("saddle system is singular".into()))?;
            dx = sol.rows(0, self.n).into_owned();
            dy = sol.rows(self.n, self.p).into_owned();
        } else {
            let chol_h = self.chol_h.as_ref().unwrap();
            if self.p == 0 {
                dx = chol_h.solve(&rx);
                dy = DVector::zeros(0);
            } else {
                let u = chol_h.solve(&rx);
                let rhs = self.a_mat * &u - by;
                dy = self.chol_schur.as_ref().unwrap().solve(&rhs);
                dx = chol_h.solve(&(rx - self.a_mat.transpose() * &dy));
            }
        }
        let mut dz = Vec::with_capacity(self.blocks.len());
        for ((b, sc), bz_b) in self.blocks.iter().zip(&self.scalings).zip(bz) {
            let mut e = bz_b.clone();
            for &i in &b.active {
                let xi = dx[i];
                if xi != 0.0 {
                    for &(r, c, v) in &b.cols[i] {
                        e[(r, c)] += xi * v;
                    }
                }
            }
            dz.push(-(&sc.winv * e * &sc.winv));
        }
        Ok((dx, dy, dz))
    }
}

/// Jordan product of symmetric matrices.
fn jordan(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let ab = a * b;
    (&ab + ab.transpose()).scale(0.5)
}

/// Solve lambda o y = x for y, with diagonal lambda.
fn jordan_div(lambda: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| 2.0 * x[(r, c)] / (lambda[r] + lambda[c]))
}

pub(super) fn solve(problem: &SdpProblem, config: &SolverConfig) -> Result<SdpSolution, SdpError> {
    let n = problem.n_vars();
    if n == 0 {
        return Err(SdpError::NoVariables);
    }
    let blocks = build_real_blocks(problem)?;
    let p = problem.eq_rows.len();
    let mut a_mat = DMatrix::<f64>::zeros(p, n);
    for (r, row) in problem.eq_rows.iter().enumerate() {
        for &(i, v) in row {
            a_mat[(r, i)] += v;
        }
    }
    let b_vec = DVector::from_vec(problem.eq_rhs.clone());
    let c_vec = DVector::from_vec(problem.c.clone());
    let deg: usize = blocks.iter().map(|b| b.dim).sum();

    let resx0 = c_vec.norm().max(1.0);
    let resy0 = b_vec.norm().max(1.0);
    let resz0 = blocks.iter().map(|b| b.f0.norm_squared()).sum::<f64>().sqrt().max(1.0);

    // G x maps the decision vector to -sum_i x_i F_i per block; h_b = -F0_b.
    let g_apply = |x: &DVector<f64>| -> Vec<DMatrix<f64>> {
        blocks
            .iter()
            .map(|b| {
                let mut m = DMatrix::<f64>::zeros(b.dim, b.dim);
                for &i in &b.active {
                    let xi = x[i];
                    if xi != 0.0 {
                        for &(r, c, v) in &b.cols[i] {
                            m[(r, c)] -= xi * v;
                        }
                    }
                }
                m
            })
            .collect()
    };
    let gt_apply = |zs: &[DMatrix<f64>]| -> DVector<f64> {
        let mut out = DVector::<f64>::zeros(n);
        for (b, z) in blocks.iter().zip(zs) {
            for &i in &b.active {
                let mut acc = 0.0;
                for &(r, c, v) in &b.cols[i] {
                    acc += v * z[(r, c)];
                }
                out[i] -= acc;
            }
        }
        out
    };
    let h_dot = |zs: &[DMatrix<f64>]| -> f64 {
        blocks.iter().zip(zs).map(|(b, z)| -frob_inner(&b.f0, z)).sum()
    };

    // Initial point: solve the KKT system with identity scaling, then shift
    // the slabs into the cone interior.
    let eye_scalings: Vec<Scaling> = blocks
        .iter()
        .map(|b| Scaling {
            lambda: DVector::from_element(b.dim, 1.0),
            r: DMatrix::identity(b.dim, b.dim),
            wmat: DMatrix::identity(b.dim, b.dim),
            winv: DMatrix::identity(b.dim, b.dim),
            ls: DMatrix::identity(b.dim, b.dim),
            lz: DMatrix::identity(b.dim, b.dim),
        })
        .collect();
    let kkt0 = Kkt::factor(&blocks, eye_scalings, &a_mat, n, p)?;
    let h_blocks: Vec<DMatrix<f64>> = blocks.iter().map(|b| -b.f0.clone()).collect();

    let (x0, _, z0) = kkt0.solve(&DVector::zeros(n), &b_vec, &h_blocks)?;
    let mut x = x0;
    let mut s_blocks: Vec<DMatrix<f64>> = z0.iter().map(|z| -z.clone()).collect();
    let ts = s_blocks.iter().map(|s| -min_eig_sym(s)).fold(f64::NEG_INFINITY, f64::max);
    let nrms: f64 = s_blocks.iter().map(|s| s.norm()).sum::<f64>();
    if ts >= -1e-8 * nrms.max(1.0) {
        for s in &mut s_blocks {
            for i in 0..s.nrows() {
                s[(i, i)] += 1.0 + ts;
            }
        }
    }

    let zero_blocks: Vec<DMatrix<f64>> = blocks.iter().map(|b| DMatrix::zeros(b.dim, b.dim)).collect();
    let (_, y0, zd) = kkt0.solve(&(-&c_vec), &DVector::zeros(p), &zero_blocks)?;
    let mut y = y0;
    let mut z_blocks = zd;
    let tz = z_blocks.iter().map(|z| -min_eig_sym(z)).fold(f64::NEG_INFINITY, f64::max);
    let nrmz: f64 = z_blocks.iter().map(|z| z.norm()).sum::<f64>();
    if tz >= -1e-8 * nrmz.max(1.0) {
        for z in &mut z_blocks {
            for i in 0..z.nrows() {
                z[(i, i)] += 1.0 + tz;
            }
        }
    }

    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let finish = |x: &DVector<f64>,
                  y: &DVector<f64>,
                  z_blocks: &[DMatrix<f64>],
                  tau: f64,
                  status: SdpStatus,
                  gap: f64,
                  iterations: usize| {
        let scale = 1.0 / tau;
        let yy: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let duals: Vec<f64> = y.iter().map(|v| v * scale).collect();
        let z_complex: Vec<DMatrix<C64>> = blocks
            .iter()
            .zip(z_blocks)
            .map(|(b, z)| {
                if b.complex_dim == 0 {
                    DMatrix::from_fn(b.dim, b.dim, |r, c| C64::new(z[(r, c)] * scale, 0.0))
                } else {
                    let d = b.complex_dim;
                    DMatrix::from_fn(d, d, |r, c| {
                        C64::new(
                            (z[(r, c)] + z[(r + d, c + d)]) * scale,
                            (z[(r + d, c)] - z[(r, c + d)]) * scale,
                        )
                    })
                }
            })
            .collect();
        let objective: f64 = c_vec.iter().zip(&yy).map(|(c, v)| c * v).sum();
        let dual_objective = blocks
            .iter()
            .zip(z_blocks)
            .map(|(b, z)| frob_inner(&b.f0, z) * scale)
            .sum::<f64>()
            - b_vec.iter().zip(&duals).map(|(b, v)| b * v).sum::<f64>();
        SdpSolution {
            status,
            y: yy,
            objective,
            dual_objective,
            gap,
            z_blocks: z_complex,
            eq_duals: duals,
            iterations,
        }
    };

    let mut best_score = f64::INFINITY;
    let mut best: Option<(DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>, f64, f64)> = None;
    let mut iters_used = 0;
    'outer: for iter in 0..config.max_iter {
        iters_used = iter;
        // Residuals of the homogeneous embedding.
        let gx = g_apply(&x);
        let mut rz: Vec<DMatrix<f64>> = Vec::with_capacity(blocks.len());
        for ((gxb, sb), b) in gx.iter().zip(&s_blocks).zip(&blocks) {
            rz.push(gxb + sb + b.f0.scale(tau));
        }
        let rx = a_mat.transpose() * &y + gt_apply(&z_blocks) + c_vec.scale(tau);
        let ry = &a_mat * &x - b_vec.scale(tau);
        let cx = c_vec.dot(&x);
        let by = b_vec.dot(&y);
        let hz = h_dot(&z_blocks);
        let rtau = kappa + cx + by + hz;

        let sz: f64 = s_blocks.iter().zip(&z_blocks).map(|(s, z)| frob_inner(s, z)).sum();
        let mu = (sz + tau * kappa) / (deg as f64 + 1.0);

        let pcost = cx / tau;
        let dcost = -(hz + by) / tau;
        let rz_norm = rz.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        let pres = (ry.norm() / resy0).max(rz_norm / resz0) / tau;
        let dres = rx.norm() / resx0 / tau;
        let gap_abs = sz / (tau * tau);
        let relgap = gap_abs / pcost.abs().max(dcost.abs()).max(1.0);

        if std::env::var_os("COMBKIT_SDP_TRACE").is_some() {
            eprintln!(
                "iter {iter}: pcost {pcost:.6e} dcost {dcost:.6e} pres {pres:.3e} dres {dres:.3e} relgap {relgap:.3e} tau {tau:.3e} kappa {kappa:.3e} mu {mu:.3e}"
            );
        }
        // Optimality is judged on the de-homogenized candidate x/tau: duality
        // gap within gap_tol, equality and dual residuals small, and the
        // worst LMI eigenvalue violation within feas_tol. The homogeneous
        // pres is deliberately not consulted; near the numerical floor it is
        // noisy while the candidate itself keeps improving.
        let ry_rel = ry.norm() / resy0 / tau;
        let cand_viol = s_blocks
            .iter()
            .zip(&rz)
            .map(|(sb, rzb)| (-min_eig_sym(&(sb - rzb).unscale(tau))).max(0.0))
            .fold(0.0, f64::max);
        if (relgap <= config.gap_tol || gap_abs <= config.gap_tol)
            && dres <= config.feas_tol
            && ry_rel <= config.feas_tol
            && cand_viol <= config.feas_tol
        {
            return Ok(finish(&x, &y, &z_blocks, tau, SdpStatus::Optimal, relgap, iter));
        }
        let score = relgap.max(dres).max(ry_rel).max(cand_viol / resz0);
        if score < best_score {
            best_score = score;
            best = Some((x.clone(), y.clone(), z_blocks.clone(), tau, relgap));
        } else if score > 1e4 * best_score {
            // Numerical floor reached; further steps only corrupt the iterate.
            break;
        }

        // Infeasibility and unboundedness certificates.
        let cert = hz + by;
        if cert < 0.0 {
            let denom = -cert;
            let pinfres = rx_infeasibility(&a_mat, &y, &gt_apply(&z_blocks), &c_vec) / resx0 / denom;
            if pinfres <= config.feas_tol {
                let scale = 1.0 / denom;
                let duals: Vec<f64> = y.iter().map(|v| v * scale).collect();
                let z_complex: Vec<DMatrix<C64>> = blocks
                    .iter()
                    .zip(&z_blocks)
                    .map(|(b, z)| {
                        if b.complex_dim == 0 {
                            DMatrix::from_fn(b.dim, b.dim, |r, c| C64::new(z[(r, c)] * scale, 0.0))
                        } else {
                            let d = b.complex_dim;
                            DMatrix::from_fn(d, d, |r, c| {
                                C64::new(
                                    (z[(r, c)] + z[(r + d, c + d)]) * scale,
                                    (z[(r + d, c)] - z[(r, c + d)]) * scale,
                                )
                            })
                        }
                    })
                    .collect();
                return Ok(SdpSolution {
                    status: SdpStatus::Infeasible,
                    y: vec![f64::NAN; n],
                    objective: f64::NAN,
                    dual_objective: f64::NAN,
                    gap: relgap,
                    z_blocks: z_complex,
                    eq_duals: duals,
                    iterations: iter,
                });
            }
        }
        if cx < 0.0 {
            let denom = -cx;
            let gxs: Vec<DMatrix<f64>> = gx
                .iter()
                .zip(&s_blocks)
                .map(|(g, s)| g + s)
                .collect();
            let nr = gxs.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
            let dinfres = ((&a_mat * &x).norm() / resy0).max(nr / resz0) / denom;
            if dinfres <= config.feas_tol {
                let ray: Vec<f64> = x.iter().map(|v| v / denom).collect();
                return Ok(SdpSolution {
                    status: SdpStatus::Unbounded,
                    y: ray,
                    objective: f64::NEG_INFINITY,
                    dual_objective: f64::NEG_INFINITY,
                    gap: relgap,
                    z_blocks: Vec::new(),
                    eq_duals: Vec::new(),
                    iterations: iter,
                });
            }
        }

        // Fresh NT scaling and KKT factorization. Numerical breakdown this
        // deep means the barrier is exhausted; fall back to the best iterate
        // when one exists.
        let mut scalings = Vec::with_capacity(blocks.len());
        for (s, z) in s_blocks.iter().zip(&z_blocks) {
            match nt_scaling(s, z) {
                Ok(sc) => scalings.push(sc),
                Err(e) => {
                    if best.is_some() {
                        break 'outer;
                    }
                    return Err(e);
                }
            }
        }
        let kkt = match Kkt::factor(&blocks, scalings, &a_mat, n, p) {
            Ok(k) => k,
            Err(e) => {
                if best.is_some() {
                    break 'outer;
                }
                return Err(e);
            }
        };

        let (vx, vy, vz) = match kkt.solve(&(-&c_vec), &b_vec, &h_blocks) {
            Ok(d) => d,
            Err(e) => {
                if best.is_some() {
                    break 'outer;
                }
                return Err(e);
            }
        };
        let cdotv = c_vec.dot(&vx) + b_vec.dot(&vy)
            + blocks.iter().zip(&vz).map(|(b, z)| -frob_inner(&b.f0, z)).sum::<f64>();

        // One pass for the affine direction, one for the combined direction.
        let mut sigma = 0.0;
        let mut corr: Vec<DMatrix<f64>> = Vec::new();
        let mut corr_kappa = 0.0;
        let mut final_dirs = None;
        for phase in 0..2 {
            let mut bz = Vec::with_capacity(blocks.len());
            for (bi, rzb) in rz.iter().enumerate() {
                let sc = &kkt.scalings[bi];
                // d_s in scaled space.
                let mut ds_mat = DMatrix::<f64>::from_diagonal(&sc.lambda);
                if phase == 1 {
                    let smu = sigma * mu;
                    for i in 0..ds_mat.nrows() {
                        ds_mat[(i, i)] -= smu / sc.lambda[i];
                    }
                    ds_mat += jordan_div(&sc.lambda, &corr[bi]);
                }
                // bz = -rz + W' d_s.
                let wds = &sc.r * &ds_mat * sc.r.transpose();
                bz.push(wds - rzb);
            }
            let d_kappa_rhs = if phase == 0 {
                tau * kappa
            } else {
                tau * kappa - sigma * mu + corr_kappa
            };
            let (ux, uy, uz) = match kkt.solve(&(-&rx), &(-&ry), &bz) {
                Ok(d) => d,
                Err(e) => {
                    if best.is_some() {
                        break 'outer;
                    }
                    return Err(e);
                }
            };
            let cdotu = c_vec.dot(&ux) + b_vec.dot(&uy)
                + blocks.iter().zip(&uz).map(|(b, z)| -frob_inner(&b.f0, z)).sum::<f64>();
            let denom = cdotv - kappa / tau;
            if denom.abs() < 1e-300 {
                if best.is_some() {
                    break 'outer;
                }
                return Err(SdpError::Numerical("tau equation degenerated".into()));
            }
            let dtau = (-rtau - cdotu + d_kappa_rhs / tau) / denom;
            let dx = &ux + vx.scale(dtau);
            let dy = &uy + vy.scale(dtau);
            let dz: Vec<DMatrix<f64>> =
                uz.iter().zip(&vz).map(|(u, v)| u + v.scale(dtau)).collect();
            let dkappa = (-d_kappa_rhs - kappa * dtau) / tau;
            // Recover ds from the linear slack row instead of the
            // complementarity equation. Solve error in the ill-conditioned
            // scaled system then shows up only as a loss of centrality; the
            // stepped iterate keeps its linear feasibility to rounding.
            let gdx = g_apply(&dx);
            let ds: Vec<DMatrix<f64>> = gdx
                .iter()
                .zip(h_blocks.iter().zip(&rz))
                .map(|(g, (h, r))| h.scale(dtau) - r - g)
                .collect();

            // Largest cone-preserving step.
            let mut alpha_max = f64::INFINITY;
            for (bi, (dsb, dzb)) in ds.iter().zip(&dz).enumerate() {
                let sc = &kkt.scalings[bi];
                alpha_max = alpha_max.min(step_bound(&sc.ls, dsb));
                alpha_max = alpha_max.min(step_bound(&sc.lz, dzb));
            }
            if dtau < 0.0 {
                alpha_max = alpha_max.min(tau / (-dtau));
            }
            if dkappa < 0.0 {
                alpha_max = alpha_max.min(kappa / (-dkappa));
            }

            if phase == 0 {
                let alpha_aff = alpha_max.min(1.0);
                sigma = (1.0 - alpha_aff).powi(EXPON).clamp(0.0, 1.0);
                corr = ds
                    .iter()
                    .zip(&dz)
                    .enumerate()
                    .map(|(bi, (dsb, dzb))| {
                        let sc = &kkt.scalings[bi];
                        let r_inv = sc
                            .r
                            .clone()
                            .try_inverse()
                            .unwrap_or_else(|| DMatrix::identity(sc.r.nrows(), sc.r.nrows()));
                        let dls = &r_inv * dsb * r_inv.transpose();
                        let dlz = sc.r.transpose() * dzb * &sc.r;
                        jordan(&dls, &dlz)
                    })
                    .collect();
                corr_kappa = dtau * dkappa;
            } else {
                final_dirs = Some((dx, dy, dz, ds, dtau, dkappa, alpha_max));
            }
        }

        let (dx, dy, dz, ds, dtau, dkappa, alpha_max) = final_dirs.unwrap();
        if std::env::var_os("COMBKIT_SDP_TRACE").is_some() {
            let gdx = g_apply(&dx);
            let viol_z = gdx
                .iter()
                .zip(&ds)
                .zip(h_blocks.iter().zip(&rz))
                .map(|((g, d), (h, r))| (g + d - h.scale(dtau) + r).norm_squared())
                .sum::<f64>()
                .sqrt();
            let viol_x = (a_mat.transpose() * &dy
                + gt_apply(&dz)
                + c_vec.scale(dtau)
                + &rx)
                .norm();
            let viol_tau =
                (c_vec.dot(&dx) + b_vec.dot(&dy) + h_dot(&dz) + dkappa + rtau).abs();
            eprintln!(
                "    dir: viol_z {viol_z:.3e} viol_x {viol_x:.3e} viol_tau {viol_tau:.3e} alpha_max {alpha_max:.3e} dtau {dtau:.3e}"
            );
        }
        let alpha = (STEP * alpha_max).min(1.0);
        if !alpha.is_finite() || alpha <= 1e-13 {
            break;
        }
        x += dx.scale(alpha);
        y += dy.scale(alpha);
        for ((s, d), (z, dzb)) in s_blocks.iter_mut().zip(&ds).zip(z_blocks.iter_mut().zip(&dz)) {
            *s += d.scale(alpha);
            let sym = (&*s + s.transpose()).scale(0.5);
            s.copy_from(&sym);
            *z += dzb.scale(alpha);
            let symz = (&*z + z.transpose()).scale(0.5);
            z.copy_from(&symz);
        }
        tau += alpha * dtau;
        kappa += alpha * dkappa;
    }
    // Out of iterations or stalled: report the cleanest iterate seen.
    if let Some((bx, by, bz, btau, bgap)) = best {
        return Ok(finish(&bx, &by, &bz, btau, SdpStatus::MaxIterations, bgap, iters_used));
    }
    Ok(finish(
        &x,
        &y,
        &z_blocks,
        tau,
        SdpStatus::MaxIterations,
        f64::NAN,
        iters_used,
    ))
}

/// Norm of the dual-feasibility combination A'y + G'z used in the Farkas
/// certificate test (the cτ term is dropped).
fn rx_infeasibility(
    a_mat: &DMatrix<f64>,
    y: &DVector<f64>,
    gtz: &DVector<f64>,
    _c: &DVector<f64>,
) -> f64 {
    (a_mat.transpose() * y + gtz).norm()
}
