//! Zero-shot versus few-shot under a low-temperature, many-concept,
//! larger-vocabulary mixture, where adding the first examples can hurt
//! before more examples recover.

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use anyhow::Result;
use ginc_core::gen;
use std::path::Path;
use std::time::Instant;

pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let mut low_temp = config.clone();
    low_temp.ginc.vocab_size = 100;
    low_temp.ginc.n_concepts = 12;
    low_temp.ginc.concept_temperature = 0.01;

    let mut manifest = RunManifest::new("zero-vs-few", &low_temp);
    super::record_mixture_seeds(&mut manifest, &low_temp);
    let mixture = gen::build_mixture(&low_temp.ginc)?;
    let k = *low_temp.k_values.iter().max().expect("non-empty k grid");

    let started = Instant::now();
    let mut rows = Vec::new();
    for &n in &low_temp.n_values {
        let (result, _) = super::eval_cell(
            &mixture,
            &mixture,
            &low_temp,
            super::CELL_ZERO_VS_FEW,
            k,
            n,
        )?;
        println!(
            "n={n}: accuracy {:.4} [{:.4}, {:.4}]",
            result.accuracy, result.ci_low, result.ci_high
        );
        rows.push(result);
    }
    manifest.record_timing("evaluate_curve", started);
    super::write_eval_outputs(
        out_dir,
        "zero_vs_few",
        "zero-shot vs few-shot (low temperature)",
        &rows,
        &mut manifest,
    )?;

    if rows.len() >= 2 {
        let zero = rows[0].accuracy;
        let one = rows[1].accuracy;
        manifest.note(format!(
            "acc(n={})={:.4}, acc(n={})={:.4}: zero-shot {} one-shot",
            rows[0].n,
            zero,
            rows[1].n,
            one,
            if zero > one { "beats" } else { "does not beat" }
        ));
    }
    Ok(manifest)
}
