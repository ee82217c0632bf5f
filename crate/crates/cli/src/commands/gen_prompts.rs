//! Generate labelled prompt files over the (k, n) grid.

use crate::config::ExperimentConfig;
use crate::manifest::{finalize_atomic, RunManifest};
use anyhow::Result;
use ginc_core::gen;
use ginc_core::prompt::{self, PromptConfig};
use std::path::Path;
use std::time::Instant;

pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let mut manifest = RunManifest::new("gen-prompts", config);
    super::record_mixture_seeds(&mut manifest, config);
    let mixture = gen::build_mixture(&config.ginc)?;

    let started = Instant::now();
    for &k in &config.k_values {
        for &n in &config.n_values {
            let prompt_config = PromptConfig {
                k,
                n,
                n_prompts: config.n_prompts,
                label_mode: config.label_mode,
                seed: super::cell_seed(config.ginc.master_seed, super::CELL_GEN_PROMPTS, k, n),
            };
            manifest.record_seed(format!("prompt_cell[k={k},n={n}]"), prompt_config.seed);
            let prompts = prompt::sample_prompts_from_prior(&mixture, &prompt_config)?;
            let final_path = out_dir.join(format!("prompts_k{k}_n{n}.txt"));
            let tmp_path = out_dir.join(format!("prompts_k{k}_n{n}.txt.tmp-{}", std::process::id()));
            prompt::write_prompts(&prompts, mixture.vocabulary(), &tmp_path)?;
            finalize_atomic(&tmp_path, &final_path)?;
            manifest.record_artifact(&final_path)?;
        }
    }
    manifest.record_timing("sample_and_write_prompts", started);
    Ok(manifest)
}
