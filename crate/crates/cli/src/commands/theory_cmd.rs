//! Run the theory suite and serialize the report.

use crate::config::ExperimentConfig;
use crate::manifest::{write_atomic, RunManifest};
use anyhow::Result;
use ginc_core::gen;
use ginc_core::theory;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let mut manifest = RunManifest::new("theory", config);
    super::record_mixture_seeds(&mut manifest, config);
    let mixture = gen::build_mixture(&config.ginc)?;

    let started = Instant::now();
    let report = theory::build_theory_report(
        &mixture,
        config.reference_concept,
        &config.k_values,
        config.kl_samples,
        config.tv_samples,
        config.ginc.master_seed,
    )?;
    manifest.record_timing("build_theory_report", started);

    let json_path = out_dir.join("theory_report.json");
    write_atomic(&json_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    manifest.record_artifact(&json_path)?;

    let kl_path = out_dir.join("kl_table.csv");
    write_atomic(&kl_path, theory::kl_table_csv(&report).as_bytes())?;
    manifest.record_artifact(&kl_path)?;

    let summary_path = out_dir.join("theory_summary.txt");
    write_atomic(&summary_path, render_summary(&report).as_bytes())?;
    manifest.record_artifact(&summary_path)?;

    for line in render_summary(&report).lines() {
        println!("{line}");
    }
    Ok(manifest)
}

fn render_summary(report: &theory::TheoryReport) -> String {
    let mut out = String::new();
    let c = &report.constants;
    writeln!(out, "reference concept: {}", report.reference_concept).unwrap();
    writeln!(
        out,
        "constants: min_delim_transition={:.6e} max_delim_transition_other={:.6e} \
         min_delim_start={:.6e} max_delim_start={:.6e} min_transition={:.6e} \
         min_emission={} min_start_mass={:.6e}",
        c.min_delimiter_transition,
        c.max_delimiter_transition_other,
        c.min_delimiter_start,
        c.max_delimiter_start,
        c.min_transition,
        c.min_emission,
        c.min_start_mass
    )
    .unwrap();
    let max_k = report.example_lengths.last().copied().unwrap_or(0);
    writeln!(
        out,
        "example-likelihood floor consistency (min_emission^{max_k} * min_transition^2): {}",
        if report.floor_consistency { "ok" } else { "VIOLATED" }
    )
    .unwrap();
    writeln!(
        out,
        "mismatch penalties: start={:.4} delimiter={:.4} total={:.4}",
        report.mismatch.start_mismatch,
        report.mismatch.delimiter_mismatch,
        report.mismatch.total()
    )
    .unwrap();
    for at_length in &report.verdicts_by_length {
        for v in &at_length.verdicts {
            writeln!(
                out,
                "k={}: concept {} kl_sum={:.4} (+-{:.4}) margin={:.4} -> {}",
                at_length.example_length,
                v.concept_id,
                v.kl_sum,
                v.kl_stderr,
                v.margin,
                if v.distinguishable { "distinguishable" } else { "not distinguishable" }
            )
            .unwrap();
        }
    }
    writeln!(
        out,
        "margins strictly increase with example length: {}",
        if report.margins_increase_with_length { "yes" } else { "NO" }
    )
    .unwrap();
    let satisfied = report.tv_checks.iter().filter(|t| t.satisfied).count();
    writeln!(
        out,
        "start-shift check satisfied on {}/{} sampled test inputs",
        satisfied,
        report.tv_checks.len()
    )
    .unwrap();
    for b in &report.excess_risk_bounds {
        writeln!(
            out,
            "excess-risk bound (up to constant) at k={}: {}",
            b.example_length,
            if b.vacuous { "vacuous".to_string() } else { format!("{:.6}", b.value) }
        )
        .unwrap();
    }
    out
}
