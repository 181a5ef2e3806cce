//! On-disk formats for operators and testers: versioned JSON with explicit
//! system labels and `[re, im]` entry pairs, so fixtures stay diff-able and
//! other toolchains can produce or consume them without a binary codec.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use combkit_core::tensorspace::{LabeledOperator, Role, SystemLabel};

use crate::errors::CliError;

pub const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemEntry {
    pub name: String,
    pub dim: usize,
    pub role: String,
    pub tooth: usize,
}

/// A single labeled operator, row-major over the listed system order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorFile {
    pub version: u32,
    pub systems: Vec<SystemEntry>,
    pub matrix: Vec<Vec<[f64; 2]>>,
}

/// A finite-outcome tester: shared labels, one matrix per outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TesterFile {
    pub version: u32,
    pub systems: Vec<SystemEntry>,
    pub outcomes: Vec<Vec<Vec<[f64; 2]>>>,
}

fn label_to_entry(label: &SystemLabel) -> SystemEntry {
    SystemEntry {
        name: label.name.clone(),
        dim: label.dim,
        role: match label.role {
            Role::In => "in".into(),
            Role::Out => "out".into(),
        },
        tooth: label.tooth,
    }
}

fn entry_to_label(entry: &SystemEntry) -> Result<SystemLabel, CliError> {
    let role = match entry.role.as_str() {
        "in" => Role::In,
        "out" => Role::Out,
        other => {
            return Err(CliError::Input(format!(
                "system role must be \"in\" or \"out\", got {other:?}"
            )));
        }
    };
    if entry.dim == 0 {
        return Err(CliError::Input(format!("system {} has dimension 0", entry.name)));
    }
    Ok(SystemLabel::new(entry.name.clone(), entry.dim, role, entry.tooth))
}

fn matrix_to_rows(m: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<[f64; 2]>], side: usize) -> Result<DMatrix<C64>, CliError> {
    if rows.len() != side || rows.iter().any(|r| r.len() != side) {
        return Err(CliError::Input(format!(
            "matrix must be {side}x{side} to match the system dimensions"
        )));
    }
    for row in rows {
        for &[re, im] in row {
            if !re.is_finite() || !im.is_finite() {
                return Err(CliError::Input("matrix entries must be finite".into()));
            }
        }
    }
    Ok(DMatrix::from_fn(side, side, |r, c| {
        C64::new(rows[r][c][0], rows[r][c][1])
    }))
}

fn check_version(version: u32) -> Result<(), CliError> {
    if version != FILE_VERSION {
        return Err(CliError::Input(format!(
            "unsupported file version {version}, expected {FILE_VERSION}"
        )));
    }
    Ok(())
}

fn side_of(systems: &[SystemEntry]) -> usize {
    systems.iter().map(|s| s.dim).product()
}

impl OperatorFile {
    pub fn from_operator(op: &LabeledOperator) -> Self {
        Self {
            version: FILE_VERSION,
            systems: op.systems().iter().map(label_to_entry).collect(),
            matrix: matrix_to_rows(op.matrix()),
        }
    }

    pub fn to_operator(&self) -> Result<LabeledOperator, CliError> {
        check_version(self.version)?;
        let labels = self
            .systems
            .iter()
            .map(entry_to_label)
            .collect::<Result<Vec<_>, _>>()?;
        let mat = rows_to_matrix(&self.matrix, side_of(&self.systems))?;
        LabeledOperator::new(labels, mat)
            .map_err(|e| CliError::Input(format!("matrix is not a labeled operator: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("cannot parse {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Input(format!("cannot serialize operator: {e}")))?;
        fs::write(path, text + "\n")
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
    }
}

impl TesterFile {
    pub fn from_outcomes(outcomes: &[LabeledOperator]) -> Result<Self, CliError> {
        let first = outcomes
            .first()
            .ok_or_else(|| CliError::Input("tester needs at least one outcome".into()))?;
        let mut rows = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            let aligned = outcome
                .reorder_like(first)
                .map_err(|e| CliError::Input(format!("outcomes use different labels: {e}")))?;
            rows.push(matrix_to_rows(aligned.matrix()));
        }
        Ok(Self {
            version: FILE_VERSION,
            systems: first.systems().iter().map(label_to_entry).collect(),
            outcomes: rows,
        })
    }

    pub fn to_outcomes(&self) -> Result<Vec<LabeledOperator>, CliError> {
        check_version(self.version)?;
        if self.outcomes.is_empty() {
            return Err(CliError::Input("tester file lists no outcomes".into()));
        }
        let labels = self
            .systems
            .iter()
            .map(entry_to_label)
            .collect::<Result<Vec<_>, _>>()?;
        let side = side_of(&self.systems);
        self.outcomes
            .iter()
            .map(|rows| {
                let mat = rows_to_matrix(rows, side)?;
                LabeledOperator::new(labels.clone(), mat)
                    .map_err(|e| CliError::Input(format!("outcome is not a labeled operator: {e}")))
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("cannot parse {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Input(format!("cannot serialize tester: {e}")))?;
        fs::write(path, text + "\n")
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
    }
}

/// Load a file and convert it in one step.
pub fn load_operator(path: &Path) -> Result<LabeledOperator, CliError> {
    OperatorFile::load(path)?.to_operator()
}
