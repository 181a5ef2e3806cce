//! A small modeling layer for SDPs over Hermitian matrix variables.
//!
//! A Hermitian variable of dimension d is expanded into d^2 real coordinates
//! (diagonal entries plus real and imaginary parts above the diagonal).
//! Expressions track a tensor factorization of their space so that partial
//! traces and identity paddings can be applied symbolically before the
//! problem is compiled to sparse block form.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use std::collections::HashMap;

use super::{LmiBlock, SdpProblem, SdpSolution, SdpStatus, SolverConfig, SparseHerm};

type Entry = (usize, usize, C64);

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut st = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * dims[i + 1];
    }
    st
}

fn digits(flat: usize, dims: &[usize], st: &[usize]) -> Vec<usize> {
    dims.iter().zip(st).map(|(&d, &s)| (flat / s) % d).collect()
}

fn recompose(digits: &[usize], st: &[usize]) -> usize {
    digits.iter().zip(st).map(|(&g, &s)| g * s).sum()
}

/// A Hermitian matrix variable: a block of real coordinates in the model.
#[derive(Debug, Clone)]
pub struct HermVar {
    base: usize,
    dims: Vec<usize>,
    dim: usize,
}

impl HermVar {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Expression equal to the variable itself.
    pub fn expr(&self) -> OpExpr {
        let d = self.dim;
        let mut terms = Vec::with_capacity(d * d);
        let mut coord = self.base;
        for r in 0..d {
            for c in r..d {
                if r == c {
                    terms.push((coord, vec![(r, r, C64::new(1.0, 0.0))]));
                    coord += 1;
                } else {
                    terms.push((coord, vec![(r, c, C64::new(1.0, 0.0)), (c, r, C64::new(1.0, 0.0))]));
                    coord += 1;
                    terms.push((coord, vec![(r, c, C64::new(0.0, 1.0)), (c, r, C64::new(0.0, -1.0))]));
                    coord += 1;
                }
            }
        }
        OpExpr {
            dims: self.dims.clone(),
            terms,
            constant: DMatrix::zeros(d, d),
        }
    }

    /// Reassemble the matrix value from a solved coordinate vector.
    pub fn value(&self, y: &[f64]) -> DMatrix<C64> {
        let d = self.dim;
        let mut m = DMatrix::<C64>::zeros(d, d);
        let mut coord = self.base;
        for r in 0..d {
            for c in r..d {
                if r == c {
                    m[(r, r)] = C64::new(y[coord], 0.0);
                    coord += 1;
                } else {
                    let v = C64::new(y[coord], y[coord + 1]);
                    coord += 2;
                    m[(r, c)] = v;
                    m[(c, r)] = v.conj();
                }
            }
        }
        m
    }

    /// Linear functional <R, X> = Tr[R X] of the variable.
    pub fn inner(&self, r_mat: &DMatrix<C64>) -> LinScalar {
        self.expr().inner(r_mat)
    }

    pub fn trace(&self) -> LinScalar {
        self.expr().trace()
    }
}

/// A Hermitian-valued affine expression on a tensor product space.
#[derive(Debug, Clone)]
pub struct OpExpr {
    dims: Vec<usize>,
    /// Sparse coefficient matrix per participating coordinate; coordinates
    /// may repeat, consumers accumulate.
    terms: Vec<(usize, Vec<Entry>)>,
    constant: DMatrix<C64>,
}

impl OpExpr {
    pub fn constant(mat: DMatrix<C64>, dims: Vec<usize>) -> Self {
        let d: usize = dims.iter().product();
        assert_eq!(mat.nrows(), d, "constant does not match the factor dimensions");
        Self { dims, terms: Vec::new(), constant: mat }
    }

    /// Expression `y_coord * mat` for a scalar coordinate.
    pub fn scaled_by_var(coord: usize, mat: &DMatrix<C64>, dims: Vec<usize>) -> Self {
        let d: usize = dims.iter().product();
        assert_eq!(mat.nrows(), d);
        let mut entries = Vec::new();
        for r in 0..d {
            for c in 0..d {
                let v = mat[(r, c)];
                if v != C64::new(0.0, 0.0) {
                    entries.push((r, c, v));
                }
            }
        }
        Self { dims, terms: vec![(coord, entries)], constant: DMatrix::zeros(d, d) }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dims, other.dims, "expression shapes differ");
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self { dims: self.dims.clone(), terms, constant: &self.constant + &other.constant }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, factor: f64) -> Self {
        let f = C64::new(factor, 0.0);
        let terms = self
            .terms
            .iter()
            .map(|(k, es)| (*k, es.iter().map(|&(r, c, v)| (r, c, v * f)).collect()))
            .collect();
        Self { dims: self.dims.clone(), terms, constant: self.constant.scale(factor) }
    }

    /// Trace out the tensor factors at the given positions.
    pub fn partial_trace(&self, positions: &[usize]) -> Self {
        let st = strides(&self.dims);
        let keep: Vec<usize> = (0..self.dims.len()).filter(|i| !positions.contains(i)).collect();
        let kept_dims: Vec<usize> = keep.iter().map(|&i| self.dims[i]).collect();
        let kst = strides(&kept_dims);
        let map = |flat: usize, other: usize| -> Option<(usize, usize)> {
            let dr = digits(flat, &self.dims, &st);
            let dc = digits(other, &self.dims, &st);
            if positions.iter().any(|&i| dr[i] != dc[i]) {
                return None;
            }
            let kr: Vec<usize> = keep.iter().map(|&i| dr[i]).collect();
            let kc: Vec<usize> = keep.iter().map(|&i| dc[i]).collect();
            Some((recompose(&kr, &kst), recompose(&kc, &kst)))
        };
        let terms = self
            .terms
            .iter()
            .map(|(k, es)| {
                let mapped: Vec<Entry> = es
                    .iter()
                    .filter_map(|&(r, c, v)| map(r, c).map(|(nr, nc)| (nr, nc, v)))
                    .collect();
                (*k, mapped)
            })
            .collect();
        let kd: usize = kept_dims.iter().product();
        let mut constant = DMatrix::<C64>::zeros(kd, kd);
        for r in 0..self.constant.nrows() {
            for c in 0..self.constant.ncols() {
                if let Some((nr, nc)) = map(r, c) {
                    constant[(nr, nc)] += self.constant[(r, c)];
                }
            }
        }
        Self { dims: kept_dims, terms, constant }
    }

    /// Insert an identity tensor factor at the given position.
    pub fn insert_identity(&self, pos: usize, dim: usize) -> Self {
        let st = strides(&self.dims);
        let mut new_dims = self.dims.clone();
        new_dims.insert(pos, dim);
        let nst = strides(&new_dims);
        let map = |flat: usize, k: usize| -> usize {
            let mut dg = digits(flat, &self.dims, &st);
            dg.insert(pos, k);
            recompose(&dg, &nst)
        };
        let terms = self
            .terms
            .iter()
            .map(|(kc, es)| {
                let mut mapped = Vec::with_capacity(es.len() * dim);
                for &(r, c, v) in es {
                    for k in 0..dim {
                        mapped.push((map(r, k), map(c, k), v));
                    }
                }
                (*kc, mapped)
            })
            .collect();
        let nd: usize = new_dims.iter().product();
        let mut constant = DMatrix::<C64>::zeros(nd, nd);
        for r in 0..self.constant.nrows() {
            for c in 0..self.constant.ncols() {
                let v = self.constant[(r, c)];
                if v != C64::new(0.0, 0.0) {
                    for k in 0..dim {
                        constant[(map(r, k), map(c, k))] += v;
                    }
                }
            }
        }
        Self { dims: new_dims, terms, constant }
    }

    pub fn trace(&self) -> LinScalar {
        let mut lin = LinScalar::constant(self.constant.trace().re);
        for (k, es) in &self.terms {
            let coeff: f64 = es.iter().filter(|&&(r, c, _)| r == c).map(|&(_, _, v)| v.re).sum();
            if coeff != 0.0 {
                lin.terms.push((*k, coeff));
            }
        }
        lin
    }

    /// Real linear functional <R, X> = Tr[R X]; R must be Hermitian.
    pub fn inner(&self, r_mat: &DMatrix<C64>) -> LinScalar {
        let mut lin = LinScalar::constant((r_mat * &self.constant).trace().re);
        for (k, es) in &self.terms {
            let coeff: f64 = es.iter().map(|&(r, c, v)| (v * r_mat[(c, r)]).re).sum();
            if coeff != 0.0 {
                lin.terms.push((*k, coeff));
            }
        }
        lin
    }

    /// Evaluate the expression at a coordinate vector (used by tests and by
    /// callers reconstructing optimizers).
    pub fn eval(&self, y: &[f64]) -> DMatrix<C64> {
        let mut m = self.constant.clone();
        for (k, es) in &self.terms {
            let w = C64::new(y[*k], 0.0);
            for &(r, c, v) in es {
                m[(r, c)] += v * w;
            }
        }
        m
    }
}

/// A real affine functional of the decision coordinates.
#[derive(Debug, Clone, Default)]
pub struct LinScalar {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinScalar {
    pub fn constant(v: f64) -> Self {
        Self { terms: Vec::new(), constant: v }
    }

    pub fn var(coord: usize) -> Self {
        Self { terms: vec![(coord, 1.0)], constant: 0.0 }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self { terms, constant: self.constant + other.constant }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, f: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(k, a)| (k, a * f)).collect(),
            constant: self.constant * f,
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(k, a)| a * y[k]).sum::<f64>()
    }
}

/// Incrementally assembled SDP.
#[derive(Debug, Default)]
pub struct ModelBuilder {
    n_vars: usize,
    objective: Vec<(usize, f64)>,
    objective_offset: f64,
    blocks: Vec<(usize, DMatrix<C64>, Vec<(usize, Vec<Entry>)>)>,
    eq_rows: Vec<Vec<(usize, f64)>>,
    eq_rhs: Vec<f64>,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn herm_var(&mut self, dims: &[usize]) -> HermVar {
        let dim: usize = dims.iter().product();
        let var = HermVar { base: self.n_vars, dims: dims.to_vec(), dim };
        self.n_vars += dim * dim;
        var
    }

    pub fn scalar_var(&mut self) -> usize {
        let coord = self.n_vars;
        self.n_vars += 1;
        coord
    }

    /// Constrain the expression to be positive semidefinite.
    pub fn psd(&mut self, expr: &OpExpr) {
        let d = expr.dim();
        self.blocks.push((d, -&expr.constant, expr.terms.clone()));
    }

    /// Constrain every entry of the expression to vanish.
    pub fn eq_zero(&mut self, expr: &OpExpr) {
        let d = expr.dim();
        let mut by_entry: HashMap<(usize, usize), Vec<(usize, C64)>> = HashMap::new();
        for (k, es) in &expr.terms {
            for &(r, c, v) in es {
                if r <= c {
                    by_entry.entry((r, c)).or_default().push((*k, v));
                }
            }
        }
        for r in 0..d {
            for c in r..d {
                let coeffs = by_entry.get(&(r, c));
                let konst = expr.constant[(r, c)];
                let mut row_re: HashMap<usize, f64> = HashMap::new();
                let mut row_im: HashMap<usize, f64> = HashMap::new();
                if let Some(list) = coeffs {
                    for &(k, v) in list {
                        *row_re.entry(k).or_default() += v.re;
                        *row_im.entry(k).or_default() += v.im;
                    }
                }
                let re_row: Vec<(usize, f64)> =
                    row_re.into_iter().filter(|&(_, a)| a != 0.0).collect();
                if !re_row.is_empty() || konst.re != 0.0 {
                    self.push_eq(re_row, -konst.re);
                }
                if r < c {
                    let im_row: Vec<(usize, f64)> =
                        row_im.into_iter().filter(|&(_, a)| a != 0.0).collect();
                    if !im_row.is_empty() || konst.im != 0.0 {
                        self.push_eq(im_row, -konst.im);
                    }
                }
            }
        }
    }

    fn push_eq(&mut self, mut row: Vec<(usize, f64)>, rhs: f64) {
        row.sort_by_key(|&(k, _)| k);
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn scalar_eq(&mut self, lin: &LinScalar, rhs: f64) {
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for &(k, a) in &lin.terms {
            *acc.entry(k).or_default() += a;
        }
        self.push_eq(acc.into_iter().collect(), rhs - lin.constant);
    }

    /// Constrain `lin >= bound` via a 1x1 block.
    pub fn scalar_geq(&mut self, lin: &LinScalar, bound: f64) {
        let terms: Vec<(usize, Vec<Entry>)> = lin
            .terms
            .iter()
            .map(|&(k, a)| (k, vec![(0usize, 0usize, C64::new(a, 0.0))]))
            .collect();
        let f0 = DMatrix::from_element(1, 1, C64::new(bound - lin.constant, 0.0));
        self.blocks.push((1, f0, terms));
    }

    pub fn scalar_leq(&mut self, lin: &LinScalar, bound: f64) {
        self.scalar_geq(&lin.scale(-1.0), -bound);
    }

    pub fn minimize(&mut self, lin: &LinScalar) {
        self.objective = lin.terms.clone();
        self.objective_offset = lin.constant;
    }

    pub fn build(&self) -> SdpProblem {
        let n = self.n_vars;
        let mut c = vec![0.0; n];
        for &(k, a) in &self.objective {
            c[k] += a;
        }
        let blocks = self
            .blocks
            .iter()
            .map(|(dim, f0, terms)| {
                let mut coeffs = vec![SparseHerm::default(); n];
                for (k, es) in terms {
                    coeffs[*k].entries.extend(es.iter().cloned());
                }
                LmiBlock { dim: *dim, f0: f0.clone(), coeffs }
            })
            .collect();
        SdpProblem { c, blocks, eq_rows: self.eq_rows.clone(), eq_rhs: self.eq_rhs.clone() }
    }

    /// Compile and solve; the objective offset is added back onto both
    /// objective values.
    pub fn solve(&self, config: &SolverConfig) -> Result<SdpSolution, super::SdpError> {
        let problem = self.build();
        let mut sol = problem.solve(config)?;
        if sol.status == SdpStatus::Optimal || sol.status == SdpStatus::MaxIterations {
            sol.objective += self.objective_offset;
            sol.dual_objective += self.objective_offset;
        }
        Ok(sol)
    }
}
