//! Generate pretraining corpora: training and validation document sets per
//! vocabulary size, with sidecar metadata.

use crate::config::ExperimentConfig;
use crate::manifest::{finalize_atomic, RunManifest};
use anyhow::Result;
use ginc_core::corpus::{self, Corpus};
use ginc_core::gen;
use ginc_core::seed::{self, tags};
use std::path::Path;
use std::time::Instant;

pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let mut manifest = RunManifest::new("gen-corpus", config);
    let vocab_sizes = config
        .vocab_sizes
        .clone()
        .unwrap_or_else(|| vec![config.ginc.vocab_size]);
    let multi = vocab_sizes.len() > 1;

    for vocab_size in vocab_sizes {
        let mut ginc = config.ginc.clone();
        ginc.vocab_size = vocab_size;
        let dir = if multi {
            let d = out_dir.join(format!("vocab_{vocab_size}"));
            std::fs::create_dir_all(&d)?;
            d
        } else {
            out_dir.to_path_buf()
        };

        let started = Instant::now();
        let mixture = gen::build_mixture(&ginc)?;
        manifest.record_timing(format!("build_mixture vocab={vocab_size}"), started);

        let started = Instant::now();
        let train = gen::sample_train_documents(&mixture, &ginc);
        let val = gen::sample_val_documents(&mixture, &ginc);
        manifest.record_timing(format!("sample_documents vocab={vocab_size}"), started);

        let started = Instant::now();
        for (name, documents) in [("train", train), ("val", val)] {
            let corpus = Corpus {
                config: ginc.clone(),
                vocabulary: mixture.vocabulary().clone(),
                documents,
            };
            let final_path = dir.join(format!("{name}.txt"));
            let tmp_path = dir.join(format!("{name}.txt.tmp-{}", std::process::id()));
            corpus::write_corpus(&corpus, &tmp_path)?;
            finalize_atomic(&tmp_path, &final_path)?;
            finalize_atomic(
                &corpus::sidecar_path(&tmp_path),
                &corpus::sidecar_path(&final_path),
            )?;
            manifest.record_artifact(&final_path)?;
            manifest.record_artifact(&corpus::sidecar_path(&final_path))?;
        }
        manifest.record_timing(format!("write_corpus vocab={vocab_size}"), started);

        manifest.record_seed(
            format!("train_document[0] of {} (vocab {vocab_size})", ginc.n_train_docs),
            seed::derive(ginc.master_seed, &[tags::TRAIN_DOCUMENT, 0]),
        );
        manifest.record_seed(
            format!("val_document[0] of {} (vocab {vocab_size})", ginc.n_val_docs),
            seed::derive(ginc.master_seed, &[tags::VAL_DOCUMENT, 0]),
        );
    }
    record_component_seeds(&mut manifest, config);
    Ok(manifest)
}

fn record_component_seeds(manifest: &mut RunManifest, config: &ExperimentConfig) {
    super::record_mixture_seeds(manifest, config);
}
