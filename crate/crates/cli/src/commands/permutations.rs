//! Sensitivity to example ordering: a few fixed sets of examples, every
//! ordering of each set scored against a shared batch of test inputs.
//! Each set fixes one concept and one start property; only the ordering of
//! its examples varies.

use crate::config::ExperimentConfig;
use crate::manifest::{write_atomic, RunManifest};
use anyhow::Result;
use ginc_core::bayes::PrefixScorer;
use ginc_core::gen;
use ginc_core::prompt::{self, PromptConfig};
use ginc_core::seed::{self, tags};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

fn permutations_of(n: usize) -> Vec<Vec<usize>> {
    fn recurse(prefix: &mut Vec<usize>, remaining: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..remaining.len() {
            let item = remaining.remove(i);
            prefix.push(item);
            recurse(prefix, remaining, out);
            prefix.pop();
            remaining.insert(i, item);
        }
    }
    let mut out = Vec::new();
    recurse(&mut Vec::new(), &mut (0..n).collect(), &mut out);
    out
}

pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let mut manifest = RunManifest::new("permutations", config);
    super::record_mixture_seeds(&mut manifest, config);
    let mixture = gen::build_mixture(&config.ginc)?;
    let k = *config.k_values.iter().max().expect("non-empty k grid");
    let orderings = permutations_of(config.permutation_examples);

    let started = Instant::now();
    let mut csv = String::from("set,permutation,count,acc\n");
    let mut spread_csv = String::from("set,min_acc,max_acc,spread\n");
    for set_id in 0..config.permutation_sets {
        let set_seed = seed::derive(config.ginc.master_seed, &[tags::TEST_INPUT, set_id as u64]);
        manifest.record_seed(format!("permutation_set[{set_id}]"), set_seed);

        let mut set_rng = seed::stream(set_seed, &[0]);
        let concept_id = gen::sample_concept_from_prior(&mixture, &mut set_rng);
        let base_config = PromptConfig {
            k,
            n: config.permutation_examples,
            n_prompts: 1,
            label_mode: config.label_mode,
            seed: set_seed,
        };
        let base = prompt::sample_prompt(&mixture, concept_id, &base_config, seed::derive(set_seed, &[1]))?;

        // Test inputs share the set's concept and start property.
        let test_config = PromptConfig { n: 0, ..base_config.clone() };
        let tests: Vec<(Vec<usize>, usize)> = (0..config.permutation_tests)
            .map(|t| {
                let p = prompt::sample_prompt_with_start(
                    &mixture,
                    concept_id,
                    base.start_property,
                    &test_config,
                    seed::derive(set_seed, &[2, t as u64]),
                )?;
                Ok((p.x_test, p.y_test))
            })
            .collect::<Result<_>>()?;

        let mut accs = Vec::with_capacity(orderings.len());
        for ordering in &orderings {
            let mut prefix = Vec::with_capacity(config.permutation_examples * (k + 1));
            for &idx in ordering {
                prefix.extend_from_slice(&base.examples[idx]);
                prefix.push(0);
            }
            let scorer = PrefixScorer::new(&mixture, &prefix)?;
            let mut successes = 0usize;
            for (x_test, y_test) in &tests {
                if scorer.predict_with_suffix(x_test)? == *y_test {
                    successes += 1;
                }
            }
            let acc = successes as f64 / tests.len() as f64;
            accs.push(acc);
            let label: String = ordering.iter().map(|i| i.to_string()).collect();
            writeln!(csv, "{set_id},{label},{},{acc}", tests.len()).expect("string write");
        }
        let min = accs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(spread_csv, "{set_id},{min},{max},{}", max - min).expect("string write");
    }
    manifest.record_timing("score_orderings", started);

    let csv_path = out_dir.join("permutations.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    manifest.record_artifact(&csv_path)?;
    let spread_path = out_dir.join("permutation_spread.csv");
    write_atomic(&spread_path, spread_csv.as_bytes())?;
    manifest.record_artifact(&spread_path)?;
    manifest.note(format!(
        "{} sets x {} orderings x {} test inputs at k={k}",
        config.permutation_sets,
        orderings.len(),
        config.permutation_tests
    ));
    Ok(manifest)
}
