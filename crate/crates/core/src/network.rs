//! Quantum causal networks: Choi operators, the link product, combs, their
//! duals (testers), and seeded random generators for all three.
//!
//! A network with N teeth acts on wires `A{j}in` / `A{j}out`, j = 1..N. A comb
//! is a positive operator on the tensor product of all wires whose partial
//! traces telescope: tracing the last output leaves an identity on the last
//! input tensored with a comb on the remaining teeth. Dual combs carry the
//! complementary hierarchy and pair with combs to unit trace.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::tensorspace::{LabeledOperator, Role, SystemLabel, TensorError, TOL_COMB};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("labels do not form a comb layout: {0}")]
    BadLayout(String),
    #[error("shared label `{0}` has mismatched dimensions")]
    SharedDimMismatch(String),
    #[error("operator failed validation: {0}")]
    Invalid(String),
    #[error("kraus operators are empty or have inconsistent shapes")]
    BadKraus,
    #[error("signature cannot be parsed: {0}")]
    BadSignature(String),
    #[error("tester needs at least one outcome")]
    EmptyTester,
}

/// Tooth dimensions of a causal network, listed in causal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSignature {
    teeth: Vec<(usize, usize)>,
}

impl NetworkSignature {
    pub fn new(teeth: Vec<(usize, usize)>) -> Result<Self, NetworkError> {
        if teeth.is_empty() || teeth.iter().any(|&(i, o)| i == 0 || o == 0) {
            return Err(NetworkError::BadSignature("teeth must have positive dimensions".into()));
        }
        Ok(Self { teeth })
    }

    /// Parse `"2,2;2,4"` as two teeth with (in, out) dimensions (2,2), (2,4).
    pub fn parse(text: &str) -> Result<Self, NetworkError> {
        let mut teeth = Vec::new();
        for part in text.split(';') {
            let dims: Vec<&str> = part.split(',').collect();
            if dims.len() != 2 {
                return Err(NetworkError::BadSignature(format!("tooth `{part}` is not `din,dout`")));
            }
            let din: usize = dims[0].trim().parse().map_err(|_| NetworkError::BadSignature(part.into()))?;
            let dout: usize = dims[1].trim().parse().map_err(|_| NetworkError::BadSignature(part.into()))?;
            teeth.push((din, dout));
        }
        Self::new(teeth)
    }

    pub fn n_teeth(&self) -> usize {
        self.teeth.len()
    }

    pub fn in_dim(&self, tooth: usize) -> usize {
        self.teeth[tooth - 1].0
    }

    pub fn out_dim(&self, tooth: usize) -> usize {
        self.teeth[tooth - 1].1
    }

    pub fn teeth(&self) -> &[(usize, usize)] {
        &self.teeth
    }

    pub fn total_dim(&self) -> usize {
        self.teeth.iter().map(|&(i, o)| i * o).product()
    }

    pub fn in_dim_product(&self) -> usize {
        self.teeth.iter().map(|&(i, _)| i).product()
    }

    pub fn out_dim_product(&self) -> usize {
        self.teeth.iter().map(|&(_, o)| o).product()
    }

    /// Signature of the n-fold parallel composition: every wire dimension is
    /// raised to the n-th power, tooth for tooth.
    pub fn tensor_power(&self, n: u32) -> Self {
        Self {
            teeth: self
                .teeth
                .iter()
                .map(|&(i, o)| (i.pow(n), o.pow(n)))
                .collect(),
        }
    }

    pub fn in_label(&self, tooth: usize) -> SystemLabel {
        SystemLabel::new(format!("A{tooth}in"), self.in_dim(tooth), Role::In, tooth)
    }

    pub fn out_label(&self, tooth: usize) -> SystemLabel {
        SystemLabel::new(format!("A{tooth}out"), self.out_dim(tooth), Role::Out, tooth)
    }

    /// Canonical label order: `[A1out, A1in, A2out, A2in, ...]`.
    pub fn canonical_labels(&self) -> Vec<SystemLabel> {
        let mut v = Vec::with_capacity(2 * self.n_teeth());
        for j in 1..=self.n_teeth() {
            v.push(self.out_label(j));
            v.push(self.in_label(j));
        }
        v
    }

    /// Derive a signature from an operator whose labels carry tooth and role
    /// metadata: each tooth 1..N must have exactly one input and one output.
    pub fn from_labels(op: &LabeledOperator) -> Result<Self, NetworkError> {
        let mut max_tooth = 0usize;
        for s in op.systems() {
            if s.tooth == 0 {
                return Err(NetworkError::BadLayout(format!("label `{}` has tooth 0", s.name)));
            }
            max_tooth = max_tooth.max(s.tooth);
        }
        let mut teeth = vec![(0usize, 0usize); max_tooth];
        for s in op.systems() {
            let slot = &mut teeth[s.tooth - 1];
            match s.role {
                Role::In => {
                    if slot.0 != 0 {
                        return Err(NetworkError::BadLayout(format!("tooth {} has two inputs", s.tooth)));
                    }
                    slot.0 = s.dim;
                }
                Role::Out => {
                    if slot.1 != 0 {
                        return Err(NetworkError::BadLayout(format!("tooth {} has two outputs", s.tooth)));
                    }
                    slot.1 = s.dim;
                }
            }
        }
        for (k, &(i, o)) in teeth.iter().enumerate() {
            if i == 0 || o == 0 {
                return Err(NetworkError::BadLayout(format!("tooth {} is missing a wire", k + 1)));
            }
        }
        Self::new(teeth)
    }
}

/// Name of the wire with the given tooth and role.
fn wire_name(op: &LabeledOperator, tooth: usize, role: Role) -> Result<String, NetworkError> {
    op.systems()
        .iter()
        .find(|s| s.tooth == tooth && s.role == role)
        .map(|s| s.name.clone())
        .ok_or_else(|| NetworkError::BadLayout(format!("tooth {tooth} is missing a wire")))
}

/// Reorder an operator into canonical wire order (tooth ascending, output
/// before input) using the tooth and role metadata, whatever the names are.
pub fn to_canonical_order(op: &LabeledOperator) -> Result<LabeledOperator, NetworkError> {
    let sig = NetworkSignature::from_labels(op)?;
    let mut names = Vec::with_capacity(2 * sig.n_teeth());
    for j in 1..=sig.n_teeth() {
        names.push(wire_name(op, j, Role::Out)?);
        names.push(wire_name(op, j, Role::In)?);
    }
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    Ok(op.reorder(&refs)?)
}

/// Choi operator of the completely positive map with the given Kraus list.
/// The result lives on `(out, in)` with the output factor first.
pub fn choi_of_map(
    kraus: &[DMatrix<C64>],
    out_label: SystemLabel,
    in_label: SystemLabel,
) -> Result<LabeledOperator, NetworkError> {
    let first = kraus.first().ok_or(NetworkError::BadKraus)?;
    let (d_out, d_in) = (first.nrows(), first.ncols());
    if d_out != out_label.dim || d_in != in_label.dim {
        return Err(NetworkError::BadKraus);
    }
    let d = d_out * d_in;
    let mut m = DMatrix::<C64>::zeros(d, d);
    for k in kraus {
        if k.nrows() != d_out || k.ncols() != d_in {
            return Err(NetworkError::BadKraus);
        }
        // (K ⊗ I) Σ_i |i>|i> flattens to w[(a,i)] = K[a,i].
        let mut w = vec![C64::new(0.0, 0.0); d];
        for a in 0..d_out {
            for i in 0..d_in {
                w[a * d_in + i] = k[(a, i)];
            }
        }
        for r in 0..d {
            for c in 0..d {
                m[(r, c)] += w[r] * w[c].conj();
            }
        }
    }
    Ok(LabeledOperator::new(vec![out_label, in_label], m)?)
}

/// Apply a Choi operator to an operator living on exactly its input labels:
/// the action is Tr_in[(I_out ⊗ x^T) M].
pub fn apply_choi(m: &LabeledOperator, x: &LabeledOperator) -> Result<LabeledOperator, NetworkError> {
    let outs: Vec<&str> = m.systems().iter().filter(|s| s.role == Role::Out).map(|s| s.name.as_str()).collect();
    let ins: Vec<&str> = m.systems().iter().filter(|s| s.role == Role::In).map(|s| s.name.as_str()).collect();
    let mut order = outs.clone();
    order.extend(ins.iter());
    let m_ord = m.reorder(&order)?;

    let x_ord = x.reorder(&ins)?;
    let xt = x_ord.transpose_all();
    let out_labels: Vec<SystemLabel> = m_ord.systems()[..outs.len()].to_vec();
    let pad = LabeledOperator::identity(out_labels).tensor(&xt)?;
    let prod = LabeledOperator::new(pad.systems().to_vec(), pad.matrix() * m_ord.matrix())?;
    Ok(prod.partial_trace(&ins)?)
}

/// Link product: contract the two operators over every label name they share,
/// transposing the shared factors of the second operand. Disjoint labels give
/// the tensor product; identical label sets give a scalar.
pub fn link_product(n: &LabeledOperator, m: &LabeledOperator) -> Result<LabeledOperator, NetworkError> {
    let shared: Vec<String> = n
        .systems()
        .iter()
        .filter(|s| m.has_label(&s.name))
        .map(|s| s.name.clone())
        .collect();
    for name in &shared {
        let dn = n.systems()[n.position(name).unwrap()].dim;
        let dm = m.systems()[m.position(name).unwrap()].dim;
        if dn != dm {
            return Err(NetworkError::SharedDimMismatch(name.clone()));
        }
    }
    let n_only: Vec<SystemLabel> =
        n.systems().iter().filter(|s| !shared.contains(&s.name)).cloned().collect();
    let m_only: Vec<SystemLabel> =
        m.systems().iter().filter(|s| !shared.contains(&s.name)).cloned().collect();

    // Common order: [n-unique..., shared..., m-unique...].
    let mut order: Vec<String> = n_only.iter().map(|s| s.name.clone()).collect();
    order.extend(shared.iter().cloned());
    order.extend(m_only.iter().map(|s| s.name.clone()));
    let order_refs: Vec<&str> = order.iter().map(|s| s.as_str()).collect();

    let n_pad = if m_only.is_empty() {
        n.clone()
    } else {
        n.tensor(&LabeledOperator::identity(m_only.clone()))?
    };
    let n_pad = n_pad.reorder(&order_refs)?;

    let shared_refs: Vec<&str> = shared.iter().map(|s| s.as_str()).collect();
    let m_t = m.partial_transpose(&shared_refs)?;
    let m_pad = if n_only.is_empty() {
        m_t
    } else {
        m_t.tensor(&LabeledOperator::identity(n_only.clone()))?
    };
    let m_pad = m_pad.reorder(&order_refs)?;

    let prod = LabeledOperator::new(n_pad.systems().to_vec(), m_pad.matrix() * n_pad.matrix())?;
    if shared.is_empty() {
        return Ok(prod);
    }
    Ok(prod.partial_trace(&shared_refs)?)
}

/// Numbers produced while checking the telescoping comb structure.
#[derive(Debug, Clone)]
pub struct CombValidation {
    pub min_eigenvalue: f64,
    /// Frobenius residual of the identity factorization at each level, from
    /// tooth N down to tooth 1.
    pub level_residuals: Vec<f64>,
    /// The fully reduced scalar; 1 for a normalized comb.
    pub scalar: f64,
    pub tol: f64,
}

impl CombValidation {
    pub fn is_valid(&self) -> bool {
        let scale = 1.0;
        self.min_eigenvalue >= -self.tol * scale
            && self.level_residuals.iter().all(|&r| r <= self.tol)
            && (self.scalar - 1.0).abs() <= self.tol
    }
}

/// Walk the comb hierarchy from the last tooth down, reporting residuals.
pub fn validate_comb(op: &LabeledOperator, tol: f64) -> Result<CombValidation, NetworkError> {
    let sig = NetworkSignature::from_labels(op)?;
    let mut cur = to_canonical_order(op)?;
    let norm = cur.frobenius_norm().max(1.0);
    let min_eigenvalue = cur.min_eigenvalue()? / norm;
    let mut level_residuals = Vec::with_capacity(sig.n_teeth());
    let mut scalar = 1.0;
    for n in (1..=sig.n_teeth()).rev() {
        let out_name = wire_name(&cur, n, Role::Out)?;
        let in_name = wire_name(&cur, n, Role::In)?;
        let in_label = cur.systems()[cur.position(&in_name).unwrap()].clone();
        let t = cur.partial_trace(&[out_name.as_str()])?;
        let reduced = t.partial_trace(&[in_name.as_str()])?.scale(1.0 / sig.in_dim(n) as f64);
        if n > 1 {
            let model = reduced.tensor(&LabeledOperator::identity(vec![in_label]))?.reorder_like(&t)?;
            level_residuals.push(t.sub(&model)?.frobenius_norm());
            cur = reduced;
        } else {
            scalar = reduced.matrix()[(0, 0)].re;
            let model = LabeledOperator::identity(vec![in_label]).scale(scalar);
            level_residuals.push(t.sub(&model.reorder_like(&t)?)?.frobenius_norm());
        }
    }
    Ok(CombValidation { min_eigenvalue, level_residuals, scalar, tol })
}

/// A validated quantum comb in canonical wire order.
#[derive(Debug, Clone)]
pub struct Comb {
    op: LabeledOperator,
    signature: NetworkSignature,
}

impl Comb {
    pub fn new(op: LabeledOperator) -> Result<Self, NetworkError> {
        Self::with_tolerance(op, TOL_COMB)
    }

    pub fn with_tolerance(op: LabeledOperator, tol: f64) -> Result<Self, NetworkError> {
        let report = validate_comb(&op, tol)?;
        if !report.is_valid() {
            return Err(NetworkError::Invalid(format!(
                "comb residuals {:?}, scalar {}, min eig {:.3e}",
                report.level_residuals, report.scalar, report.min_eigenvalue
            )));
        }
        let sig = NetworkSignature::from_labels(&op)?;
        let op = to_canonical_order(&op)?;
        Ok(Self { op, signature: sig })
    }

    /// Wrap a matrix already known to satisfy the hierarchy (e.g. produced by
    /// construction); the label layout is still normalized.
    pub fn new_unchecked(op: LabeledOperator) -> Result<Self, NetworkError> {
        let sig = NetworkSignature::from_labels(&op)?;
        let op = to_canonical_order(&op)?;
        Ok(Self { op, signature: sig })
    }

    pub fn op(&self) -> &LabeledOperator {
        &self.op
    }

    pub fn signature(&self) -> &NetworkSignature {
        &self.signature
    }

    pub fn validate(&self, tol: f64) -> Result<CombValidation, NetworkError> {
        validate_comb(&self.op, tol)
    }

    /// n-fold parallel power: wires of all copies are grouped and fused tooth
    /// by tooth, giving a comb on the powered signature.
    pub fn tensor_power(&self, n: u32) -> Result<Comb, NetworkError> {
        let op = labeled_network_power(&self.op, n)?;
        Comb::new_unchecked(op)
    }
}

/// n-fold tensor power of a network operator on canonical wires, fusing the
/// copies wire by wire so the result lives on the powered signature.
pub fn labeled_network_power(op: &LabeledOperator, n: u32) -> Result<LabeledOperator, NetworkError> {
    if n == 0 {
        return Err(NetworkError::BadSignature("power must be at least 1".into()));
    }
    let sig = NetworkSignature::from_labels(op)?;
    let mut big = op.clone().with_renamed_labels(|name| format!("{name}#1"));
    for copy in 2..=n {
        let next = op.clone().with_renamed_labels(|name| format!("{name}#{copy}"));
        big = big.tensor(&next)?;
    }
    // Group copies of the same wire together: [A1out#1..#n, A1in#1..#n, ...].
    let mut order: Vec<String> = Vec::new();
    for j in 1..=sig.n_teeth() {
        for copy in 1..=n {
            order.push(format!("A{j}out#{copy}"));
        }
        for copy in 1..=n {
            order.push(format!("A{j}in#{copy}"));
        }
    }
    let refs: Vec<&str> = order.iter().map(|s| s.as_str()).collect();
    let mut big = big.reorder(&refs)?;
    // Fuse each group of n adjacent copies into a single powered wire.
    let powered = sig.tensor_power(n);
    for j in 1..=sig.n_teeth() {
        big = big.merge_adjacent(2 * (j - 1), n as usize, powered.out_label(j))?;
        big = big.merge_adjacent(2 * (j - 1) + 1, n as usize, powered.in_label(j))?;
    }
    Ok(big)
}

/// Validation numbers for the dual-comb hierarchy.
#[derive(Debug, Clone)]
pub struct DualCombValidation {
    pub min_eigenvalue: f64,
    /// Residual of the identity factorization at each level, from the output
    /// factor of tooth N down to tooth 1.
    pub level_residuals: Vec<f64>,
    /// Trace of the innermost reduction; 1 for a normalized dual comb.
    pub scalar: f64,
    pub tol: f64,
}

impl DualCombValidation {
    pub fn is_valid(&self) -> bool {
        self.min_eigenvalue >= -self.tol
            && self.level_residuals.iter().all(|&r| r <= self.tol)
            && (self.scalar - 1.0).abs() <= self.tol
    }
}

/// Walk the dual hierarchy: divide out the identity on the last output, then
/// alternate tracing inputs and dividing out identities on earlier outputs.
pub fn validate_dual_comb(op: &LabeledOperator, tol: f64) -> Result<DualCombValidation, NetworkError> {
    let sig = NetworkSignature::from_labels(op)?;
    let full = to_canonical_order(op)?;
    let norm = full.frobenius_norm().max(1.0);
    let min_eigenvalue = full.min_eigenvalue()? / norm;
    let nn = sig.n_teeth();
    let mut level_residuals = Vec::with_capacity(nn);

    let out_name = wire_name(&full, nn, Role::Out)?;
    let out_label = full.systems()[full.position(&out_name).unwrap()].clone();
    let mut gamma = full.partial_trace(&[out_name.as_str()])?.scale(1.0 / sig.out_dim(nn) as f64);
    {
        let model = LabeledOperator::identity(vec![out_label]).tensor(&gamma)?.reorder_like(&full)?;
        level_residuals.push(full.sub(&model)?.frobenius_norm());
    }
    for n in (2..=nn).rev() {
        let in_name = wire_name(&gamma, n, Role::In)?;
        let t = gamma.partial_trace(&[in_name.as_str()])?;
        let out_name = wire_name(&t, n - 1, Role::Out)?;
        let out_label = t.systems()[t.position(&out_name).unwrap()].clone();
        let next = t.partial_trace(&[out_name.as_str()])?.scale(1.0 / sig.out_dim(n - 1) as f64);
        let model = LabeledOperator::identity(vec![out_label]).tensor(&next)?.reorder_like(&t)?;
        level_residuals.push(t.sub(&model)?.frobenius_norm());
        gamma = next;
    }
    let in_name = wire_name(&gamma, 1, Role::In)?;
    let scalar = gamma.partial_trace(&[in_name.as_str()])?.matrix()[(0, 0)].re;
    Ok(DualCombValidation { min_eigenvalue, level_residuals, scalar, tol })
}

/// An element of the dual set to combs: the normalization of a tester.
#[derive(Debug, Clone)]
pub struct DualCombElement {
    op: LabeledOperator,
    signature: NetworkSignature,
}

impl DualCombElement {
    pub fn new(op: LabeledOperator) -> Result<Self, NetworkError> {
        Self::with_tolerance(op, TOL_COMB)
    }

    pub fn with_tolerance(op: LabeledOperator, tol: f64) -> Result<Self, NetworkError> {
        let report = validate_dual_comb(&op, tol)?;
        if !report.is_valid() {
            return Err(NetworkError::Invalid(format!(
                "dual comb residuals {:?}, scalar {}, min eig {:.3e}",
                report.level_residuals, report.scalar, report.min_eigenvalue
            )));
        }
        let sig = NetworkSignature::from_labels(&op)?;
        let op = to_canonical_order(&op)?;
        Ok(Self { op, signature: sig })
    }

    pub fn new_unchecked(op: LabeledOperator) -> Result<Self, NetworkError> {
        let sig = NetworkSignature::from_labels(&op)?;
        let op = to_canonical_order(&op)?;
        Ok(Self { op, signature: sig })
    }

    /// The maximally uninformative element: I / prod(d_in). It probes every
    /// tooth with a maximally mixed input and ignores the outputs.
    pub fn uniform(sig: &NetworkSignature) -> Self {
        let op = LabeledOperator::identity(sig.canonical_labels())
            .scale(1.0 / sig.in_dim_product() as f64);
        Self { op, signature: sig.clone() }
    }

    pub fn op(&self) -> &LabeledOperator {
        &self.op
    }

    pub fn signature(&self) -> &NetworkSignature {
        &self.signature
    }

    pub fn validate(&self, tol: f64) -> Result<DualCombValidation, NetworkError> {
        validate_dual_comb(&self.op, tol)
    }

    /// Duality pairing Tr[Γ C]; equals 1 for every comb of the signature.
    pub fn pair(&self, c: &Comb) -> Result<f64, NetworkError> {
        let aligned = c.op().reorder_like(&self.op)?;
        let tr: C64 = (self.op.matrix() * aligned.matrix()).diagonal().sum();
        Ok(tr.re)
    }
}

/// A finite-outcome tester: positive parts summing to a dual comb.
#[derive(Debug, Clone)]
pub struct Tester {
    pub outcomes: Vec<LabeledOperator>,
    pub normalization: DualCombElement,
}

#[derive(Debug, Clone)]
pub struct TesterValidation {
    pub outcome_min_eigenvalues: Vec<f64>,
    pub sum_residual: f64,
    pub normalization: DualCombValidation,
    pub tol: f64,
}

impl TesterValidation {
    pub fn is_valid(&self) -> bool {
        self.outcome_min_eigenvalues.iter().all(|&e| e >= -self.tol)
            && self.sum_residual <= self.tol
            && self.normalization.is_valid()
    }
}

impl Tester {
    pub fn new(outcomes: Vec<LabeledOperator>, tol: f64) -> Result<(Self, TesterValidation), NetworkError> {
        let first = outcomes.first().ok_or(NetworkError::EmptyTester)?;
        let mut sum = first.clone();
        for t in &outcomes[1..] {
            sum = sum.add(&t.reorder_like(&sum)?)?;
        }
        let normalization = DualCombElement::with_tolerance(sum.clone(), tol)?;
        let mut outcome_min_eigenvalues = Vec::with_capacity(outcomes.len());
        for t in &outcomes {
            outcome_min_eigenvalues.push(t.min_eigenvalue()? / t.frobenius_norm().max(1.0));
        }
        let report = TesterValidation {
            outcome_min_eigenvalues,
            sum_residual: 0.0,
            normalization: normalization.validate(tol)?,
            tol,
        };
        if !report.is_valid() {
            return Err(NetworkError::Invalid("tester outcomes are not positive".into()));
        }
        Ok((Self { outcomes, normalization }, report))
    }

    /// Validate against an explicitly stored normalization.
    pub fn validate(&self, tol: f64) -> Result<TesterValidation, NetworkError> {
        let mut sum = self.outcomes[0].clone();
        for t in &self.outcomes[1..] {
            sum = sum.add(&t.reorder_like(&sum)?)?;
        }
        let sum_residual = sum.sub(&self.normalization.op().reorder_like(&sum)?)?.frobenius_norm();
        let mut outcome_min_eigenvalues = Vec::with_capacity(self.outcomes.len());
        for t in &self.outcomes {
            outcome_min_eigenvalues.push(t.min_eigenvalue()? / t.frobenius_norm().max(1.0));
        }
        Ok(TesterValidation {
            outcome_min_eigenvalues,
            sum_residual,
            normalization: self.normalization.validate(tol)?,
            tol,
        })
    }
}

/// Probability of each tester outcome on a comb: the full contraction of the
/// outcome operator with the comb.
pub fn outcome_probabilities(t: &Tester, c: &Comb) -> Result<Vec<f64>, NetworkError> {
    let mut probs = Vec::with_capacity(t.outcomes.len());
    for outcome in &t.outcomes {
        let scalar = link_product(outcome, c.op())?;
        let z = scalar.matrix()[(0, 0)];
        if z.im.abs() > 1e-9 {
            return Err(NetworkError::Invalid(format!("probability has imaginary part {:.3e}", z.im)));
        }
        probs.push(z.re);
    }
    Ok(probs)
}

// ---------------------------------------------------------------------------
// Random generation
// ---------------------------------------------------------------------------

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn ginibre(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| C64::new(gaussian(rng), gaussian(rng)))
}

/// Haar-random isometry from dimension `cols` into dimension `rows` via QR of
/// a Ginibre matrix with phase-fixed diagonal.
pub fn haar_isometry(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<C64> {
    assert!(rows >= cols, "isometry needs target at least as large as source");
    let g = ginibre(rng, rows, cols);
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let mut iso = DMatrix::<C64>::zeros(rows, cols);
    for j in 0..cols {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..rows {
            iso[(i, j)] = q[(i, j)] * phase.conj();
        }
    }
    iso
}

pub fn haar_unitary(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    haar_isometry(rng, d, d)
}

/// Hilbert-Schmidt random density matrix.
pub fn random_density(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    let g = ginibre(rng, d, d);
    let p = &g * g.adjoint();
    let tr: C64 = p.diagonal().sum();
    p.scale(1.0) / tr
}

/// One tooth of a sampled comb: an isometry from (input ⊗ memory-in) into
/// (output ⊗ memory-out ⊗ environment); the environment is traced out.
#[derive(Debug, Clone)]
pub struct SampledTooth {
    pub isometry: DMatrix<C64>,
    pub d_in: usize,
    pub d_mem_in: usize,
    pub d_out: usize,
    pub d_mem_out: usize,
    pub d_env: usize,
}

/// A random comb together with its generating circuit.
#[derive(Debug, Clone)]
pub struct SampledComb {
    pub comb: Comb,
    pub teeth: Vec<SampledTooth>,
}

fn div_ceil(a: usize, b: usize) -> usize {
    (a + b - 1) / b
}

/// Draw a Haar-random comb: one random isometry channel per tooth, linked
/// through memory wires of the requested dimension (the final memory is
/// closed off and the minimal environment is traced wherever an isometry
/// alone cannot meet the output dimension).
pub fn random_comb(sig: &NetworkSignature, seed: u64, mem_dim: usize) -> Result<SampledComb, NetworkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nn = sig.n_teeth();
    let mut teeth = Vec::with_capacity(nn);
    let mut chain: Option<LabeledOperator> = None;
    for j in 1..=nn {
        let d_in = sig.in_dim(j);
        let d_out = sig.out_dim(j);
        let d_mem_in = if j == 1 { 1 } else { mem_dim };
        let d_mem_out = if j == nn { 1 } else { mem_dim };
        let src = d_in * d_mem_in;
        let d_env = div_ceil(src, d_out * d_mem_out);
        let target = d_out * d_mem_out * d_env;
        let isometry = haar_isometry(&mut rng, target, src);

        // Choi of the tooth on (out ⊗ mem-out ⊗ env, in ⊗ mem-in), built from
        // the rank-one vectorization of the isometry, then env traced away.
        let d_tot = target * src;
        let mut w = vec![C64::new(0.0, 0.0); d_tot];
        for a in 0..target {
            for i in 0..src {
                w[a * src + i] = isometry[(a, i)];
            }
        }
        let mut mat = DMatrix::<C64>::zeros(d_tot, d_tot);
        for r in 0..d_tot {
            for c in 0..d_tot {
                mat[(r, c)] = w[r] * w[c].conj();
            }
        }
        // Dimension-one memory and environment factors are left off the label
        // list; the row-major layout is unaffected by trivial factors.
        let mut labels = vec![sig.out_label(j)];
        if d_mem_out > 1 {
            labels.push(SystemLabel::new(format!("M{j}"), d_mem_out, Role::Out, j));
        }
        if d_env > 1 {
            labels.push(SystemLabel::new(format!("E{j}"), d_env, Role::Out, j));
        }
        labels.push(sig.in_label(j));
        if d_mem_in > 1 {
            labels.push(SystemLabel::new(format!("M{}", j - 1), d_mem_in, Role::In, j));
        }
        let mut tooth_op = LabeledOperator::new(labels, mat)?;
        if d_env > 1 {
            tooth_op = tooth_op.partial_trace(&[format!("E{j}").as_str()])?;
        }
        teeth.push(SampledTooth { isometry, d_in, d_mem_in, d_out, d_mem_out, d_env });
        chain = Some(match chain {
            None => tooth_op,
            Some(prev) => link_product(&prev, &tooth_op)?,
        });
    }
    let op = chain.unwrap();
    let comb = Comb::new_unchecked(to_canonical_order(&op)?)?;
    Ok(SampledComb { comb, teeth })
}

/// Parameters generating a dual comb: a probe state and the relay channels of
/// the testing circuit, all drawn from flattened Gaussian raw entries so the
/// element can be perturbed smoothly for local search.
#[derive(Debug, Clone)]
pub struct DualCombParams {
    sig: NetworkSignature,
    aux_dims: Vec<usize>,
    raw: Vec<f64>,
}

impl DualCombParams {
    /// Gaussian raw parameters from a seed.
    pub fn sample(sig: &NetworkSignature, seed: u64, aux_dim: usize) -> Self {
        let nn = sig.n_teeth();
        // aux_dims[i-1] is the ancilla dimension carried out of stage i; the
        // probe state feeding tooth 1 uses aux_dims[0].
        let aux_dims = vec![aux_dim.max(1); nn];
        let mut len = 2 * (sig.in_dim(1) * aux_dims[0]).pow(2);
        for i in 1..nn {
            let src = sig.out_dim(i) * aux_dims[i - 1];
            let dst = sig.in_dim(i + 1) * aux_dims[i];
            let env = div_ceil(src, dst);
            len += 2 * (dst * env) * src;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..len).map(|_| gaussian(&mut rng)).collect();
        Self { sig: sig.clone(), aux_dims, raw }
    }

    /// Gaussian perturbation of the raw parameters.
    pub fn perturbed(&self, rng: &mut ChaCha8Rng, step: f64) -> Self {
        let raw: Vec<f64> = self.raw.iter().map(|&x| x + step * gaussian(rng)).collect();
        Self { sig: self.sig.clone(), aux_dims: self.aux_dims.clone(), raw }
    }

    fn take_matrix(cursor: &mut usize, raw: &[f64], rows: usize, cols: usize) -> DMatrix<C64> {
        let m = DMatrix::from_fn(rows, cols, |i, j| {
            let base = *cursor + 2 * (i * cols + j);
            C64::new(raw[base], raw[base + 1])
        });
        *cursor += 2 * rows * cols;
        m
    }

    fn orthonormalize(m: &DMatrix<C64>) -> DMatrix<C64> {
        let qr = m.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let mut iso = DMatrix::<C64>::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            let d = r[(j, j)];
            let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
            for i in 0..m.nrows() {
                iso[(i, j)] = q[(i, j)] * phase.conj();
            }
        }
        iso
    }

    /// Build the dual comb element described by the parameters.
    pub fn build(&self) -> Result<DualCombElement, NetworkError> {
        let sig = &self.sig;
        let nn = sig.n_teeth();
        let mut cursor = 0usize;

        let d0 = sig.in_dim(1) * self.aux_dims[0];
        let g = Self::take_matrix(&mut cursor, &self.raw, d0, d0);
        let p = &g * g.adjoint();
        let tr: C64 = p.diagonal().sum();
        let rho_mat = p / tr;
        let mut labels = vec![sig.in_label(1)];
        if self.aux_dims[0] > 1 {
            labels.push(SystemLabel::new("X1", self.aux_dims[0], Role::Out, 1));
        }
        let mut chain = LabeledOperator::new(labels, rho_mat)?;

        for i in 1..nn {
            let src = sig.out_dim(i) * self.aux_dims[i - 1];
            let dst = sig.in_dim(i + 1) * self.aux_dims[i];
            let env = div_ceil(src, dst);
            let g = Self::take_matrix(&mut cursor, &self.raw, dst * env, src);
            let iso = Self::orthonormalize(&g);

            let d_tot = dst * env * src;
            let mut w = vec![C64::new(0.0, 0.0); d_tot];
            for a in 0..dst * env {
                for s in 0..src {
                    w[a * src + s] = iso[(a, s)];
                }
            }
            let mut mat = DMatrix::<C64>::zeros(d_tot, d_tot);
            for r in 0..d_tot {
                for c in 0..d_tot {
                    mat[(r, c)] = w[r] * w[c].conj();
                }
            }
            let mut lbls = vec![sig.in_label(i + 1)];
            if self.aux_dims[i] > 1 {
                lbls.push(SystemLabel::new(format!("X{}", i + 1), self.aux_dims[i], Role::Out, i + 1));
            }
            if env > 1 {
                lbls.push(SystemLabel::new(format!("XE{i}"), env, Role::Out, i));
            }
            lbls.push(sig.out_label(i));
            if self.aux_dims[i - 1] > 1 {
                lbls.push(SystemLabel::new(format!("X{i}"), self.aux_dims[i - 1], Role::In, i));
            }
            let mut relay = LabeledOperator::new(lbls, mat)?;
            if env > 1 {
                relay = relay.partial_trace(&[format!("XE{i}").as_str()])?;
            }
            chain = link_product(&chain, &relay)?;
        }

        // Trivial final measurement: trace the last ancilla, tensor the
        // identity on the last output.
        let last_aux = format!("X{nn}");
        let mut op = if self.aux_dims[nn - 1] > 1 && chain.has_label(&last_aux) {
            chain.partial_trace(&[last_aux.as_str()])?
        } else {
            chain
        };
        op = op.tensor(&LabeledOperator::identity(vec![sig.out_label(nn)]))?;
        DualCombElement::new_unchecked(to_canonical_order(&op)?)
    }
}

/// Draw a random dual comb element.
pub fn random_dual_comb(sig: &NetworkSignature, seed: u64, aux_dim: usize) -> Result<DualCombElement, NetworkError> {
    DualCombParams::sample(sig, seed, aux_dim).build()
}

/// A random tester together with the circuit pieces that generated it.
#[derive(Debug, Clone)]
pub struct SampledTester {
    pub tester: Tester,
    pub probe: DMatrix<C64>,
    pub relays: Vec<SampledTooth>,
    pub povm: Vec<DMatrix<C64>>,
    pub aux_dims: Vec<usize>,
}

/// Draw a random tester: random probe state, random relay channels, and a
/// random POVM on the last output and ancilla.
pub fn random_tester(
    sig: &NetworkSignature,
    n_outcomes: usize,
    seed: u64,
    aux_dim: usize,
) -> Result<SampledTester, NetworkError> {
    assert!(n_outcomes >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nn = sig.n_teeth();
    let aux_dims = vec![aux_dim.max(1); nn];

    let d0 = sig.in_dim(1) * aux_dims[0];
    let probe = random_density(&mut rng, d0);
    let mut labels = vec![sig.in_label(1)];
    if aux_dims[0] > 1 {
        labels.push(SystemLabel::new("X1", aux_dims[0], Role::Out, 1));
    }
    let mut chain = LabeledOperator::new(labels, probe.clone())?;

    let mut relays = Vec::new();
    for i in 1..nn {
        let src = sig.out_dim(i) * aux_dims[i - 1];
        let dst = sig.in_dim(i + 1) * aux_dims[i];
        let env = div_ceil(src, dst);
        let iso = haar_isometry(&mut rng, dst * env, src);
        let d_tot = dst * env * src;
        let mut w = vec![C64::new(0.0, 0.0); d_tot];
        for a in 0..dst * env {
            for s in 0..src {
                w[a * src + s] = iso[(a, s)];
            }
        }
        let mut mat = DMatrix::<C64>::zeros(d_tot, d_tot);
        for r in 0..d_tot {
            for c in 0..d_tot {
                mat[(r, c)] = w[r] * w[c].conj();
            }
        }
        let mut lbls = vec![sig.in_label(i + 1)];
        if aux_dims[i] > 1 {
            lbls.push(SystemLabel::new(format!("X{}", i + 1), aux_dims[i], Role::Out, i + 1));
        }
        if env > 1 {
            lbls.push(SystemLabel::new(format!("XE{i}"), env, Role::Out, i));
        }
        lbls.push(sig.out_label(i));
        if aux_dims[i - 1] > 1 {
            lbls.push(SystemLabel::new(format!("X{i}"), aux_dims[i - 1], Role::In, i));
        }
        let mut relay = LabeledOperator::new(lbls, mat)?;
        if env > 1 {
            relay = relay.partial_trace(&[format!("XE{i}").as_str()])?;
        }
        relays.push(SampledTooth {
            isometry: iso,
            d_in: sig.out_dim(i),
            d_mem_in: aux_dims[i - 1],
            d_out: sig.in_dim(i + 1),
            d_mem_out: aux_dims[i],
            d_env: env,
        });
        chain = link_product(&chain, &relay)?;
    }

    // Random POVM on (last output ⊗ last ancilla).
    let d_meas = sig.out_dim(nn) * aux_dims[nn - 1];
    let parts: Vec<DMatrix<C64>> = (0..n_outcomes)
        .map(|_| {
            let g = ginibre(&mut rng, d_meas, d_meas);
            &g * g.adjoint()
        })
        .collect();
    let mut sum = DMatrix::<C64>::zeros(d_meas, d_meas);
    for p in &parts {
        sum += p;
    }
    let sum_op = LabeledOperator::new(vec![SystemLabel::new("P", d_meas, Role::In, nn)], sum).unwrap();
    let inv_sqrt = {
        let eig = sum_op.eig_hermitian()?;
        let vals: Vec<f64> = eig.values.iter().map(|&v| 1.0 / v.max(1e-300).sqrt()).collect();
        eig.recompose(&vals)
    };
    let povm: Vec<DMatrix<C64>> = parts.iter().map(|p| &inv_sqrt * p * &inv_sqrt).collect();

    let mut outcomes = Vec::with_capacity(n_outcomes);
    for p in &povm {
        let mut lbls = vec![sig.out_label(nn)];
        if aux_dims[nn - 1] > 1 {
            lbls.push(SystemLabel::new(format!("X{nn}"), aux_dims[nn - 1], Role::In, nn));
        }
        let p_op = LabeledOperator::new(lbls, p.clone())?.transpose_all();
        let t = link_product(&chain, &p_op)?;
        outcomes.push(to_canonical_order(&t)?);
    }
    let (tester, _) = Tester::new(outcomes, 1e-7)?;
    Ok(SampledTester { tester, probe, relays, povm, aux_dims })
}
