//! Report files written by `verify-theorems`: a JSON document with one
//! record per check plus a CSV twin with the same rows, because the margins
//! are usually consumed tabularly (sorted, plotted, diffed across runs).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::errors::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

impl CheckStatus {
    fn as_str(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Inconclusive => "inconclusive",
        }
    }
}

/// Serialize floats so infinities survive the JSON trip: JSON has no Inf
/// literal and serde_json would write `null`, erasing the distinction
/// between an infinite divergence and a missing value. Finite values stay
/// numbers; non-finite ones become the strings "inf", "-inf", "nan".
pub mod stringy_inf {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct F64OrText;

    impl<'de> Visitor<'de> for F64OrText {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("unrecognized float text {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(F64OrText)
    }
}

/// One verified inequality or identity. `lhs`/`rhs` are the two sides as
/// evaluated, `margin` is how far the check cleared its tolerance (negative
/// on failure), and `direction_certified` records whether the passing side
/// carried an SDP certificate rather than a heuristic bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub paper_ref: String,
    pub status: CheckStatus,
    #[serde(with = "stringy_inf")]
    pub lhs: f64,
    #[serde(with = "stringy_inf")]
    pub rhs: f64,
    #[serde(with = "stringy_inf")]
    pub margin: f64,
    pub direction_certified: bool,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub version: u32,
    pub suite: String,
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<CheckRecord>,
}

/// Textual form used on stdout and in the CSV twin, matching the JSON
/// convention for non-finite values.
pub fn render_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:?}")
    }
}

impl ReportFile {
    pub fn failures(&self) -> usize {
        self.checks
            .iter()
            .filter(|c| c.status == CheckStatus::Fail)
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("name,paper_ref,status,lhs,rhs,margin,direction_certified,seeds,runtime_ms\n");
        for c in &self.checks {
            let seeds = c
                .seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join("|");
            let runtime = c.runtime_ms.map(|m| m.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.name,
                c.paper_ref,
                c.status.as_str(),
                render_f64(c.lhs),
                render_f64(c.rhs),
                render_f64(c.margin),
                c.direction_certified,
                seeds,
                runtime
            );
        }
        out
    }

    /// Write `<path>` as JSON and the sibling `<path with .csv>` twin.
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Input(format!("cannot serialize report: {e}")))?;
        fs::write(path, json + "\n")
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        let csv_path = path.with_extension("csv");
        fs::write(&csv_path, self.to_csv())
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", csv_path.display())))?;
        Ok(())
    }
}
