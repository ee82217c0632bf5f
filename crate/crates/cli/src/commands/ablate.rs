//! Ablations of the mixture structure.
//!
//! - `single-concept`: the predictor keeps exactly one concept; rows are
//!   split by whether the prompt's concept matches it.
//! - `random-transitions`: the predictor is a freshly drawn family sharing
//!   no concept with the prompts. (The corresponding trained-model ablation
//!   randomizes the pretraining data itself, which has no exact-inference
//!   analogue; this is the nearest well-defined variant.)
//! - `unseen-concepts`: prompts and labels come from a freshly drawn
//!   family; the predictor keeps the original one.

use crate::config::ExperimentConfig;
use crate::manifest::{write_atomic, RunManifest};
use anyhow::Result;
use ginc_core::bayes::{self, wilson_interval};
use ginc_core::gen;
use ginc_core::prompt::{self, PromptConfig};
use ginc_core::seed::{self, tags};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AblateMode {
    SingleConcept,
    RandomTransitions,
    UnseenConcepts,
}

struct VariantRow {
    variant: &'static str,
    k: usize,
    n: usize,
    count: usize,
    acc: f64,
    lo: f64,
    hi: f64,
}

pub fn run(config: &ExperimentConfig, out_dir: &Path, mode: AblateMode) -> Result<RunManifest> {
    let name = match mode {
        AblateMode::SingleConcept => "ablate-single-concept",
        AblateMode::RandomTransitions => "ablate-random-transitions",
        AblateMode::UnseenConcepts => "ablate-unseen-concepts",
    };
    let mut manifest = RunManifest::new(name, config);
    super::record_mixture_seeds(&mut manifest, config);
    let mixture = gen::build_mixture(&config.ginc)?;
    let fresh_seed = seed::derive(config.ginc.master_seed, &[tags::FRESH_MIXTURE]);
    manifest.record_seed("fresh_family", fresh_seed);

    let started = Instant::now();
    let mut rows: Vec<VariantRow> = Vec::new();
    match mode {
        AblateMode::SingleConcept => {
            // Keep concept 0 only; prompts still come from the full prior.
            let kept = mixture.restricted(&[0])?;
            manifest.note("predictor keeps concept 0 only");
            for &k in &config.k_values {
                for &n in &config.n_values {
                    let prompt_config = PromptConfig {
                        k,
                        n,
                        n_prompts: config.n_prompts,
                        label_mode: config.label_mode,
                        seed: super::cell_seed(
                            config.ginc.master_seed,
                            super::CELL_ABLATE_SINGLE,
                            k,
                            n,
                        ),
                    };
                    let prompts = prompt::sample_prompts_from_prior(&mixture, &prompt_config)?;
                    let mut matched = (0usize, 0usize);
                    let mut unmatched = (0usize, 0usize);
                    for p in &prompts {
                        let correct =
                            bayes::in_context_predict(&p.flat_tokens(), &kept)? == p.y_test;
                        let bucket = if p.concept_id == 0 { &mut matched } else { &mut unmatched };
                        bucket.0 += correct as usize;
                        bucket.1 += 1;
                    }
                    for (variant, (successes, trials)) in
                        [("matched", matched), ("unmatched", unmatched)]
                    {
                        if trials == 0 {
                            continue;
                        }
                        let (lo, hi) = wilson_interval(successes, trials);
                        rows.push(VariantRow {
                            variant,
                            k,
                            n,
                            count: trials,
                            acc: successes as f64 / trials as f64,
                            lo,
                            hi,
                        });
                    }
                }
            }
        }
        AblateMode::RandomTransitions => {
            let fresh = gen::resample_concepts(&mixture, &config.ginc, fresh_seed)?;
            manifest
                .note("predictor family redrawn from fresh random matrices; prompts unchanged");
            for &k in &config.k_values {
                for &n in &config.n_values {
                    let (r, _) = super::eval_cell(
                        &mixture,
                        &fresh,
                        config,
                        super::CELL_ABLATE_RANDOM,
                        k,
                        n,
                    )?;
                    rows.push(VariantRow {
                        variant: "all",
                        k,
                        n,
                        count: r.n_prompts,
                        acc: r.accuracy,
                        lo: r.ci_low,
                        hi: r.ci_high,
                    });
                }
            }
        }
        AblateMode::UnseenConcepts => {
            let fresh = gen::resample_concepts(&mixture, &config.ginc, fresh_seed)?;
            manifest.note("prompts drawn from a fresh concept family; predictor unchanged");
            for &k in &config.k_values {
                for &n in &config.n_values {
                    let (r, _) = super::eval_cell(
                        &fresh,
                        &mixture,
                        config,
                        super::CELL_ABLATE_UNSEEN,
                        k,
                        n,
                    )?;
                    rows.push(VariantRow {
                        variant: "all",
                        k,
                        n,
                        count: r.n_prompts,
                        acc: r.accuracy,
                        lo: r.ci_low,
                        hi: r.ci_high,
                    });
                }
            }
        }
    }
    manifest.record_timing("evaluate_ablation", started);

    let mut csv = String::from("variant,k,n,count,acc,lo,hi\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.variant, r.k, r.n, r.count, r.acc, r.lo, r.hi
        )
        .expect("string write");
    }
    let csv_path = out_dir.join("ablate.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    manifest.record_artifact(&csv_path)?;

    if let (Some(first), Some(last)) = (
        rows.iter().find(|r| r.variant != "matched" && r.n == *config.n_values.first().unwrap()),
        rows.iter()
            .rev()
            .find(|r| r.variant != "matched" && r.n == *config.n_values.last().unwrap()),
    ) {
        manifest.note(format!(
            "accuracy at n={}: {:.4}; at n={}: {:.4}; gap {:.4}",
            first.n,
            first.acc,
            last.n,
            last.acc,
            (last.acc - first.acc).abs()
        ));
    }
    Ok(manifest)
}
