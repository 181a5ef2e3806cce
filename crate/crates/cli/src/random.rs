//! Sample generators for fixtures: combs via random isometries, dual combs
//! via the layered ancilla construction, testers via a sampled probe state
//! and relay chain. Every emitted file passes `validate` for its kind.

use std::path::{Path, PathBuf};

use clap::Args;

use combkit_core::network::{random_comb, random_dual_comb, random_tester, NetworkSignature};

use crate::errors::CliError;
use crate::files::{OperatorFile, TesterFile};

#[derive(Debug, Clone, Args)]
pub struct RandomArgs {
    /// What to sample: comb, dualcomb, or tester.
    #[arg(long)]
    pub kind: String,
    /// Network signature, semicolon-separated teeth of "d_in,d_out".
    #[arg(long)]
    pub signature: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Memory dimension between teeth (comb) or ancilla dimension (dualcomb,
    /// tester).
    #[arg(long, default_value_t = 2)]
    pub mem: usize,
    /// Number of tester outcomes.
    #[arg(long, default_value_t = 2)]
    pub outcomes: usize,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn emit_json(text: String, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text + "\n")
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn run(args: &RandomArgs) -> Result<(), CliError> {
    let sig = NetworkSignature::parse(&args.signature)
        .map_err(|e| CliError::Input(format!("bad signature: {e}")))?;
    match args.kind.as_str() {
        "comb" => {
            let sampled = random_comb(&sig, args.seed, args.mem)?;
            let file = OperatorFile::from_operator(sampled.comb.op());
            let text = serde_json::to_string_pretty(&file)
                .map_err(|e| CliError::Input(format!("cannot serialize: {e}")))?;
            emit_json(text, args.out.as_deref())
        }
        "dualcomb" => {
            let gamma = random_dual_comb(&sig, args.seed, args.mem)?;
            let file = OperatorFile::from_operator(gamma.op());
            let text = serde_json::to_string_pretty(&file)
                .map_err(|e| CliError::Input(format!("cannot serialize: {e}")))?;
            emit_json(text, args.out.as_deref())
        }
        "tester" => {
            if args.outcomes == 0 {
                return Err(CliError::Input("a tester needs at least one outcome".into()));
            }
            let sampled = random_tester(&sig, args.outcomes, args.seed, args.mem)?;
            let file = TesterFile::from_outcomes(&sampled.tester.outcomes)?;
            let text = serde_json::to_string_pretty(&file)
                .map_err(|e| CliError::Input(format!("cannot serialize: {e}")))?;
            emit_json(text, args.out.as_deref())
        }
        other => Err(CliError::Input(format!(
            "unknown kind {other:?}, expected comb, dualcomb, or tester"
        ))),
    }
}
