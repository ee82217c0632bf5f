//! Subcommand implementations.

pub mod ablate;
pub mod eval;
pub mod gen_corpus;
pub mod gen_prompts;
pub mod permutations;
pub mod theory_cmd;
pub mod zero_vs_few;

use crate::config::ExperimentConfig;
use crate::manifest::{write_atomic, RunManifest};
use anyhow::Result;
use ginc_core::bayes::{self, EvalResult};
use ginc_core::prompt::{self, PromptConfig};
use ginc_core::seed::{self, tags};
use ginc_core::HmmMixture;
use std::fmt::Write as _;
use std::path::Path;

// Per-command words mixed into prompt-cell sub-seeds so different
// subcommands never share streams.
pub const CELL_EVAL: u64 = 0;
pub const CELL_ABLATE_SINGLE: u64 = 1;
pub const CELL_ABLATE_RANDOM: u64 = 2;
pub const CELL_ABLATE_UNSEEN: u64 = 3;
pub const CELL_ZERO_VS_FEW: u64 = 4;
pub const CELL_GEN_PROMPTS: u64 = 5;

pub fn cell_seed(master: u64, command_word: u64, k: usize, n: usize) -> u64 {
    seed::derive(master, &[tags::PROMPT, command_word, k as u64, n as u64])
}

/// Sample one (k, n) cell of prompts from `source`'s prior and score them
/// under `predictor`.
pub fn eval_cell(
    source: &HmmMixture,
    predictor: &HmmMixture,
    config: &ExperimentConfig,
    command_word: u64,
    k: usize,
    n: usize,
) -> Result<(EvalResult, Vec<prompt::Prompt>)> {
    let prompt_config = PromptConfig {
        k,
        n,
        n_prompts: config.n_prompts,
        label_mode: config.label_mode,
        seed: cell_seed(config.ginc.master_seed, command_word, k, n),
    };
    let prompts = prompt::sample_prompts_from_prior(source, &prompt_config)?;
    let mut results = bayes::evaluate(&prompts, predictor)?;
    Ok((results.remove(0), prompts))
}

/// Render evaluation rows as `k,n,count,acc,lo,hi` with a header.
pub fn eval_rows_csv(rows: &[EvalResult]) -> String {
    let mut out = String::from("k,n,count,acc,lo,hi\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.k, r.n, r.n_prompts, r.accuracy, r.ci_low, r.ci_high
        )
        .expect("string write");
    }
    out
}

pub fn write_eval_outputs(
    out_dir: &Path,
    stem: &str,
    title: &str,
    rows: &[EvalResult],
    manifest: &mut RunManifest,
) -> Result<()> {
    let csv_path = out_dir.join(format!("{stem}.csv"));
    write_atomic(&csv_path, eval_rows_csv(rows).as_bytes())?;
    manifest.record_artifact(&csv_path)?;
    let svg_path = out_dir.join(format!("{stem}.svg"));
    write_atomic(&svg_path, crate::plot::accuracy_curves(title, rows).as_bytes())?;
    manifest.record_artifact(&svg_path)?;
    Ok(())
}

/// Record the component sub-seeds that a mixture build consumes.
pub fn record_mixture_seeds(manifest: &mut RunManifest, config: &ExperimentConfig) {
    let master = config.ginc.master_seed;
    manifest.record_seed("entity_matrix", seed::derive(master, &[tags::ENTITY_MATRIX]));
    manifest.record_seed("memory_matrix", seed::derive(master, &[tags::MEMORY_MATRIX]));
    for c in 0..config.ginc.n_concepts {
        manifest.record_seed(
            format!("property_matrix[{c}]"),
            seed::derive(master, &[tags::PROPERTY_MATRIX, c as u64]),
        );
        manifest.record_seed(
            format!("start_distribution[{c}]"),
            seed::derive(master, &[tags::START_DISTRIBUTION, c as u64]),
        );
    }
}
