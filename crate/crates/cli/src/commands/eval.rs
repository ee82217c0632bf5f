//! Evaluate the exact in-context predictor over the (k, n) grid.

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use anyhow::Result;
use ginc_core::gen;
use std::path::Path;
use std::time::Instant;

pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let mut manifest = RunManifest::new("eval", config);
    super::record_mixture_seeds(&mut manifest, config);
    let mixture = gen::build_mixture(&config.ginc)?;

    let started = Instant::now();
    let mut rows = Vec::new();
    for &k in &config.k_values {
        for &n in &config.n_values {
            manifest.record_seed(
                format!("prompt_cell[k={k},n={n}]"),
                super::cell_seed(config.ginc.master_seed, super::CELL_EVAL, k, n),
            );
            let (result, _) =
                super::eval_cell(&mixture, &mixture, config, super::CELL_EVAL, k, n)?;
            println!(
                "k={k} n={n}: accuracy {:.4} [{:.4}, {:.4}] ({} prompts)",
                result.accuracy, result.ci_low, result.ci_high, result.n_prompts
            );
            rows.push(result);
        }
    }
    manifest.record_timing("evaluate_grid", started);
    super::write_eval_outputs(out_dir, "eval", "in-context accuracy", &rows, &mut manifest)?;
    Ok(manifest)
}
