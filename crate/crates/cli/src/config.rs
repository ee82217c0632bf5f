//! Experiment configuration file: JSON mirroring the library config field
//! names, with every field optional.

use anyhow::{Context, Result};
use ginc_core::prompt::LabelMode;
use ginc_core::GincConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Pretraining distribution recipe.
    pub ginc: GincConfig,
    /// Example lengths for prompt grids.
    pub k_values: Vec<usize>,
    /// Example counts for prompt grids.
    pub n_values: Vec<usize>,
    /// Prompts per (k, n) cell.
    pub n_prompts: usize,
    pub label_mode: LabelMode,
    /// Optional vocabulary-size grid for corpus generation.
    pub vocab_sizes: Option<Vec<usize>>,
    /// Monte-Carlo samples per positional KL estimate.
    pub kl_samples: usize,
    /// Sampled test inputs for the start-shift check.
    pub tv_samples: usize,
    /// Example-set count for the ordering experiment.
    pub permutation_sets: usize,
    /// Examples per set (every ordering is evaluated).
    pub permutation_examples: usize,
    /// Test inputs scored per ordering.
    pub permutation_tests: usize,
    /// Concept treated as the reference in theory runs.
    pub reference_concept: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ginc: GincConfig::default(),
            k_values: vec![3, 5, 8, 10],
            n_values: vec![0, 1, 2, 4, 8, 16, 32, 64],
            n_prompts: 2500,
            label_mode: LabelMode::TestOnly,
            vocab_sizes: None,
            kl_samples: 2000,
            tv_samples: 100,
            permutation_sets: 10,
            permutation_examples: 4,
            permutation_tests: 100,
            reference_concept: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, seed_override: Option<u64>, quick: bool) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        if let Some(seed) = seed_override {
            config.ginc.master_seed = seed;
        }
        if quick {
            config.n_prompts = config.n_prompts.min(500);
            config.kl_samples = config.kl_samples.min(500);
            config.permutation_tests = config.permutation_tests.min(50);
        }
        config.ginc.validate()?;
        Ok(config)
    }
}
