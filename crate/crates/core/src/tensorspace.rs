//! Labeled operators on tensor products of finite-dimensional Hilbert spaces.
//!
//! Every operator carries an ordered list of named system labels. Indexing is
//! row-major with the first label slowest, so label order fixes the matrix
//! layout exactly. All spectral routines (square roots, positive parts, trace
//! norms, supports, threshold projectors) are derived from one Hermitian
//! eigendecomposition so that numerical conventions stay consistent.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Relative Frobenius tolerance for treating an operator as Hermitian.
pub const TOL_HERM: f64 = 1e-9;
/// Relative eigenvalue clipping threshold for PSD routines and validators.
pub const TOL_PSD: f64 = 1e-8;
/// Absolute Frobenius tolerance for structural residuals of network operators.
pub const TOL_COMB: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("matrix is {rows}x{cols} but labels give total dimension {expected}")]
    ShapeMismatch { rows: usize, cols: usize, expected: usize },
    #[error("duplicate system label `{0}`")]
    DuplicateLabel(String),
    #[error("system label `{0}` not present")]
    UnknownLabel(String),
    #[error("label dimension must be at least 1")]
    ZeroDim,
    #[error("operands have incompatible label lists")]
    LabelMismatch,
    #[error("reorder list must be a permutation of the existing labels")]
    BadPermutation,
    #[error("operator is not Hermitian within tolerance (residual {0:.3e})")]
    NotHermitian(f64),
    #[error("operator has negative eigenvalue {0:.3e} beyond the PSD tolerance")]
    NotPsd(f64),
}

/// Whether a wire is consumed or produced by the network element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    In,
    Out,
}

/// A named tensor factor: name, dimension, direction, and the tooth (slot
/// index) it belongs to. Names are the identity used for wiring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemLabel {
    pub name: String,
    pub dim: usize,
    pub role: Role,
    pub tooth: usize,
}

impl SystemLabel {
    pub fn new(name: impl Into<String>, dim: usize, role: Role, tooth: usize) -> Self {
        Self { name: name.into(), dim, role, tooth }
    }
}

/// A square operator on the ordered tensor product of its labeled systems.
#[derive(Debug, Clone)]
pub struct LabeledOperator {
    systems: Vec<SystemLabel>,
    mat: DMatrix<C64>,
}

fn dims_product(systems: &[SystemLabel]) -> usize {
    systems.iter().map(|s| s.dim).product()
}

/// Row-major strides: first label slowest.
fn strides(dims: &[usize]) -> Vec<usize> {
    let mut st = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * dims[i + 1];
    }
    st
}

impl LabeledOperator {
    pub fn new(systems: Vec<SystemLabel>, mat: DMatrix<C64>) -> Result<Self, TensorError> {
        if systems.iter().any(|s| s.dim == 0) {
            return Err(TensorError::ZeroDim);
        }
        for (i, s) in systems.iter().enumerate() {
            if systems[..i].iter().any(|t| t.name == s.name) {
                return Err(TensorError::DuplicateLabel(s.name.clone()));
            }
        }
        let d = dims_product(&systems);
        if mat.nrows() != d || mat.ncols() != d {
            return Err(TensorError::ShapeMismatch { rows: mat.nrows(), cols: mat.ncols(), expected: d });
        }
        Ok(Self { systems, mat })
    }

    pub fn identity(systems: Vec<SystemLabel>) -> Self {
        let d = dims_product(&systems);
        Self { systems, mat: DMatrix::identity(d, d) }
    }

    /// Operator on no systems holding a single scalar entry.
    pub fn scalar(value: C64) -> Self {
        Self { systems: Vec::new(), mat: DMatrix::from_element(1, 1, value) }
    }

    pub fn systems(&self) -> &[SystemLabel] {
        &self.systems
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<C64> {
        &mut self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.systems.iter().map(|s| s.dim).collect()
    }

    pub fn label_names(&self) -> Vec<&str> {
        self.systems.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.systems.iter().position(|s| s.name == name)
    }

    pub fn has_label(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    pub fn trace(&self) -> C64 {
        self.mat.diagonal().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.norm()
    }

    /// Hermiticity residual relative to the Frobenius norm.
    pub fn hermiticity_residual(&self) -> f64 {
        let diff = (&self.mat - self.mat.adjoint()).norm();
        diff / self.mat.norm().max(1.0)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_residual() <= tol
    }

    /// Replace the matrix by its Hermitian part (A + A†)/2.
    pub fn symmetrize(&mut self) {
        let h = (&self.mat + self.mat.adjoint()).scale(0.5);
        self.mat = h;
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { systems: self.systems.clone(), mat: self.mat.scale(factor) }
    }

    fn assert_same_layout(&self, other: &Self) -> Result<(), TensorError> {
        if self.systems.len() != other.systems.len()
            || self
                .systems
                .iter()
                .zip(&other.systems)
                .any(|(a, b)| a.name != b.name || a.dim != b.dim)
        {
            return Err(TensorError::LabelMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.assert_same_layout(other)?;
        Ok(Self { systems: self.systems.clone(), mat: &self.mat + &other.mat })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.assert_same_layout(other)?;
        Ok(Self { systems: self.systems.clone(), mat: &self.mat - &other.mat })
    }

    /// Tensor product; label lists concatenate (left factor is slower).
    pub fn tensor(&self, other: &Self) -> Result<Self, TensorError> {
        for s in &other.systems {
            if self.has_label(&s.name) {
                return Err(TensorError::DuplicateLabel(s.name.clone()));
            }
        }
        let mut systems = self.systems.clone();
        systems.extend(other.systems.iter().cloned());
        Ok(Self { systems, mat: self.mat.kronecker(&other.mat) })
    }

    fn positions_of(&self, names: &[&str]) -> Result<Vec<usize>, TensorError> {
        names
            .iter()
            .map(|n| self.position(n).ok_or_else(|| TensorError::UnknownLabel((*n).to_string())))
            .collect()
    }

    /// Trace out the named systems; remaining labels keep their order.
    pub fn partial_trace(&self, names: &[&str]) -> Result<Self, TensorError> {
        let traced = self.positions_of(names)?;
        let dims = self.dims();
        let st = strides(&dims);
        let keep: Vec<usize> = (0..dims.len()).filter(|p| !traced.contains(p)).collect();
        let d_keep: usize = keep.iter().map(|&p| dims[p]).product();
        let d_tr: usize = traced.iter().map(|&p| dims[p]).product();

        // Flat offsets contributed by the kept and traced digit groups.
        let embed = |positions: &[usize], count: usize| -> Vec<usize> {
            let pdims: Vec<usize> = positions.iter().map(|&p| dims[p]).collect();
            let pst = strides(&pdims);
            (0..count)
                .map(|mut f| {
                    let mut offset = 0;
                    for (k, &p) in positions.iter().enumerate() {
                        let digit = if pst[k] == 0 { 0 } else { f / pst[k] };
                        f -= digit * pst[k];
                        offset += digit * st[p];
                    }
                    offset
                })
                .collect()
        };
        let keep_offsets = embed(&keep, d_keep);
        let tr_offsets = embed(&traced, d_tr);

        let mut out = DMatrix::<C64>::zeros(d_keep, d_keep);
        for (rk, &ro) in keep_offsets.iter().enumerate() {
            for (ck, &co) in keep_offsets.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for &to in &tr_offsets {
                    acc += self.mat[(ro + to, co + to)];
                }
                out[(rk, ck)] = acc;
            }
        }
        let systems: Vec<SystemLabel> = keep.iter().map(|&p| self.systems[p].clone()).collect();
        Ok(Self { systems, mat: out })
    }

    /// Transpose the named tensor factors in place of conjugating the basis.
    pub fn partial_transpose(&self, names: &[&str]) -> Result<Self, TensorError> {
        let swapped = self.positions_of(names)?;
        let dims = self.dims();
        let st = strides(&dims);
        let d = self.dim();

        // Split a flat index into the offset carried by swapped digits and the rest.
        let mut swap_part = vec![0usize; d];
        let mut rest_part = vec![0usize; d];
        for f in 0..d {
            let mut rem = f;
            let mut sw = 0usize;
            let mut rest = 0usize;
            for p in 0..dims.len() {
                let digit = rem / st[p];
                rem -= digit * st[p];
                if swapped.contains(&p) {
                    sw += digit * st[p];
                } else {
                    rest += digit * st[p];
                }
            }
            swap_part[f] = sw;
            rest_part[f] = rest;
        }

        let mut out = DMatrix::<C64>::zeros(d, d);
        for r in 0..d {
            for c in 0..d {
                let nr = rest_part[r] + swap_part[c];
                let nc = rest_part[c] + swap_part[r];
                out[(nr, nc)] = self.mat[(r, c)];
            }
        }
        Ok(Self { systems: self.systems.clone(), mat: out })
    }

    /// Full transpose (no conjugation).
    pub fn transpose_all(&self) -> Self {
        Self { systems: self.systems.clone(), mat: self.mat.transpose() }
    }

    /// Permute the label order; the matrix is conjugated by the matching
    /// tensor-permutation so the operator itself is unchanged.
    pub fn reorder(&self, order: &[&str]) -> Result<Self, TensorError> {
        if order.len() != self.systems.len() {
            return Err(TensorError::BadPermutation);
        }
        let perm = self.positions_of(order)?;
        {
            let mut seen = vec![false; perm.len()];
            for &p in &perm {
                if seen[p] {
                    return Err(TensorError::BadPermutation);
                }
                seen[p] = true;
            }
        }
        let dims = self.dims();
        let st_old = strides(&dims);
        let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
        let st_new = strides(&new_dims);
        let d = self.dim();

        let mut map = vec![0usize; d];
        for f in 0..d {
            let mut rem = f;
            let mut digits = vec![0usize; dims.len()];
            for p in 0..dims.len() {
                digits[p] = rem / st_old[p];
                rem -= digits[p] * st_old[p];
            }
            let mut nf = 0usize;
            for (k, &p) in perm.iter().enumerate() {
                nf += digits[p] * st_new[k];
            }
            map[f] = nf;
        }

        let mut out = DMatrix::<C64>::zeros(d, d);
        for r in 0..d {
            for c in 0..d {
                out[(map[r], map[c])] = self.mat[(r, c)];
            }
        }
        let systems: Vec<SystemLabel> = perm.iter().map(|&p| self.systems[p].clone()).collect();
        Ok(Self { systems, mat: out })
    }

    /// Reorder to match another operator's label order.
    pub fn reorder_like(&self, other: &Self) -> Result<Self, TensorError> {
        let order: Vec<&str> = other.systems.iter().map(|s| s.name.as_str()).collect();
        self.reorder(&order)
    }

    /// Rename every label through `f`, keeping dimensions, roles, teeth, and
    /// the matrix itself.
    pub fn with_renamed_labels(self, f: impl Fn(&str) -> String) -> Self {
        let systems: Vec<SystemLabel> = self
            .systems
            .iter()
            .map(|s| SystemLabel { name: f(&s.name), ..s.clone() })
            .collect();
        Self { systems, mat: self.mat }
    }

    /// Fuse `count` adjacent labels starting at `start` into one label of the
    /// product dimension. The matrix is unchanged because the group is
    /// contiguous in the row-major layout.
    pub fn merge_adjacent(&self, start: usize, count: usize, merged: SystemLabel) -> Result<Self, TensorError> {
        if start + count > self.systems.len() || count == 0 {
            return Err(TensorError::BadPermutation);
        }
        let group_dim: usize = self.systems[start..start + count].iter().map(|s| s.dim).product();
        if merged.dim != group_dim {
            return Err(TensorError::ShapeMismatch { rows: merged.dim, cols: merged.dim, expected: group_dim });
        }
        let mut systems: Vec<SystemLabel> = self.systems[..start].to_vec();
        systems.push(merged);
        systems.extend(self.systems[start + count..].iter().cloned());
        Self::new(systems, self.mat.clone())
    }

    /// Hermitian eigendecomposition, eigenvalues descending. This is the one
    /// spectral primitive; everything spectral in the crate goes through it.
    pub fn eig_hermitian(&self) -> Result<Eig, TensorError> {
        let res = self.hermiticity_residual();
        if res > TOL_HERM {
            return Err(TensorError::NotHermitian(res));
        }
        let h = (&self.mat + self.mat.adjoint()).scale(0.5);
        let se = h.symmetric_eigen();
        let n = se.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| se.eigenvalues[b].partial_cmp(&se.eigenvalues[a]).unwrap());
        let values = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
        let mut vectors = DMatrix::<C64>::zeros(n, n);
        for (k, &i) in order.iter().enumerate() {
            vectors.set_column(k, &se.eigenvectors.column(i));
        }
        Ok(Eig { values, vectors })
    }

    /// PSD square root. Eigenvalues in [-tol*norm, 0] are clipped to zero;
    /// anything more negative is an error.
    pub fn psd_sqrt(&self, tol: f64) -> Result<Self, TensorError> {
        let eig = self.eig_hermitian()?;
        let scale = eig.values.amax().max(1e-300);
        let mut vals = Vec::with_capacity(eig.values.len());
        for &v in eig.values.iter() {
            if v < -tol * scale {
                return Err(TensorError::NotPsd(v));
            }
            vals.push(v.max(0.0).sqrt());
        }
        Ok(Self { systems: self.systems.clone(), mat: eig.recompose(&vals) })
    }

    /// Positive part: sum of strictly positive eigenvalue terms.
    pub fn positive_part(&self) -> Result<Self, TensorError> {
        let eig = self.eig_hermitian()?;
        let vals: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
        Ok(Self { systems: self.systems.clone(), mat: eig.recompose(&vals) })
    }

    /// Sum of absolute eigenvalues of a Hermitian operator.
    pub fn trace_norm(&self) -> Result<f64, TensorError> {
        let eig = self.eig_hermitian()?;
        Ok(eig.values.iter().map(|v| v.abs()).sum())
    }

    pub fn min_eigenvalue(&self) -> Result<f64, TensorError> {
        let eig = self.eig_hermitian()?;
        Ok(*eig.values.as_slice().last().unwrap())
    }

    pub fn max_eigenvalue(&self) -> Result<f64, TensorError> {
        let eig = self.eig_hermitian()?;
        Ok(eig.values[0])
    }

    /// Orthogonal projector onto the support (range) of a PSD operator.
    /// Eigenvalues at or below `tol * max_eig` count as kernel.
    pub fn support_projector(&self, tol: f64) -> Result<Self, TensorError> {
        let eig = self.eig_hermitian()?;
        let scale = eig.values.amax();
        let vals: Vec<f64> = eig.values.iter().map(|&v| if v > tol * scale { 1.0 } else { 0.0 }).collect();
        Ok(Self { systems: self.systems.clone(), mat: eig.recompose(&vals) })
    }

    pub fn rank(&self, tol: f64) -> Result<usize, TensorError> {
        let eig = self.eig_hermitian()?;
        let scale = eig.values.amax();
        Ok(eig.values.iter().filter(|&&v| v.abs() > tol * scale).count())
    }
}

/// Sorted Hermitian eigendecomposition (descending eigenvalues).
#[derive(Debug, Clone)]
pub struct Eig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<C64>,
}

impl Eig {
    /// Rebuild V f(Λ) V† from replacement eigenvalues.
    pub fn recompose(&self, values: &[f64]) -> DMatrix<C64> {
        let n = self.values.len();
        let diag = DMatrix::from_diagonal(&DVector::from_iterator(n, values.iter().map(|&v| C64::new(v, 0.0))));
        &self.vectors * diag * self.vectors.adjoint()
    }
}

/// Half the trace norm of the difference of two Hermitian operators.
pub fn trace_distance(a: &LabeledOperator, b: &LabeledOperator) -> Result<f64, TensorError> {
    let d = a.sub(&b.reorder_like(a)?)?;
    Ok(0.5 * d.trace_norm()?)
}

/// Whether supp(m) is contained in supp(n), both PSD, within a relative
/// tolerance: the kernel of n must annihilate m.
pub fn support_contains(m: &LabeledOperator, n: &LabeledOperator, tol: f64) -> Result<bool, TensorError> {
    let n_aligned = n.reorder_like(m)?;
    let supp = n_aligned.support_projector(tol)?;
    let ker = LabeledOperator {
        systems: supp.systems.clone(),
        mat: DMatrix::identity(supp.dim(), supp.dim()) - supp.mat,
    };
    let leak = &ker.mat * m.matrix() * &ker.mat;
    let scale = m.max_eigenvalue()?.abs().max(1e-300);
    // Positive leakage of a PSD operator shows up on the diagonal.
    let leak_size = leak.diagonal().iter().map(|z| z.re).fold(0.0f64, f64::max);
    Ok(leak_size <= tol * scale.max(1.0))
}

/// Projector onto the eigenspaces of (s - t) with nonnegative eigenvalue;
/// ties (zero eigenvalues) are included.
pub fn projector_geq(s: &LabeledOperator, t: &LabeledOperator) -> Result<LabeledOperator, TensorError> {
    let diff = s.sub(&t.reorder_like(s)?)?;
    let eig = diff.eig_hermitian()?;
    let scale = eig.values.amax().max(1.0);
    let tie = 1e-12 * scale;
    let vals: Vec<f64> = eig.values.iter().map(|&v| if v >= -tie { 1.0 } else { 0.0 }).collect();
    Ok(LabeledOperator { systems: diff.systems.clone(), mat: eig.recompose(&vals) })
}
