//! Construction of the pretraining mixture and document sampling.
//!
//! Property transition matrices are convex combinations of random
//! permutation matrices with tempered-softmax weights; the shared entity
//! matrix adds a heavy diagonal on top of the same construction. Start
//! distributions are high-temperature softmaxes over the joint hidden
//! states, and the memory matrix maps every non-delimiter cell to a token
//! drawn uniformly from the non-delimiter vocabulary.
//!
//! Everything is a pure function of [`GincConfig`]: each component draws
//! from its own named sub-stream of the master seed (see [`crate::seed`]),
//! so rebuilding a mixture or corpus is bit-for-bit reproducible no matter
//! how the work is scheduled.

use crate::error::{GincError, Result};
use crate::hmm::{ConceptParams, HiddenState, HmmMixture, MemoryMatrix};
use crate::matrix::Matrix;
use crate::seed::{self, tags, SeedRng};
use crate::vocab::{build_vocabulary, Vocabulary};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Full recipe for one pretraining distribution and its corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GincConfig {
    pub vocab_size: usize,
    pub n_entities: usize,
    pub n_properties: usize,
    pub n_concepts: usize,
    pub perm_count: usize,
    pub concept_temperature: f64,
    pub start_temperature: f64,
    pub entity_self_loop: f64,
    pub n_train_docs: usize,
    pub n_val_docs: usize,
    pub train_doc_len: usize,
    pub val_doc_len: usize,
    pub master_seed: u64,
}

impl Default for GincConfig {
    fn default() -> Self {
        Self {
            vocab_size: 50,
            n_entities: 10,
            n_properties: 10,
            n_concepts: 5,
            perm_count: 100,
            concept_temperature: 0.1,
            start_temperature: 10.0,
            entity_self_loop: 0.9,
            n_train_docs: 1000,
            n_val_docs: 100,
            train_doc_len: 10240,
            val_doc_len: 1024,
            master_seed: 0,
        }
    }
}

impl GincConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(GincError::InvalidConfig("vocab_size must be >= 2".into()));
        }
        for (name, v) in [
            ("n_entities", self.n_entities),
            ("n_properties", self.n_properties),
            ("n_concepts", self.n_concepts),
            ("perm_count", self.perm_count),
            ("n_train_docs", self.n_train_docs),
            ("n_val_docs", self.n_val_docs),
            ("train_doc_len", self.train_doc_len),
            ("val_doc_len", self.val_doc_len),
        ] {
            if v == 0 {
                return Err(GincError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        for (name, t) in [
            ("concept_temperature", self.concept_temperature),
            ("start_temperature", self.start_temperature),
        ] {
            if t.is_nan() || t <= 0.0 {
                return Err(GincError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if !(0.0..1.0).contains(&self.entity_self_loop) {
            return Err(GincError::InvalidConfig(
                "entity_self_loop must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One sampled pretraining document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub concept_id: usize,
    pub tokens: Vec<usize>,
}

/// Softmax of `(u - 0.5) / temperature` with `u` uniform on [0, 1] per
/// coordinate. Entries are strictly positive and sum to 1.
pub fn tempered_softmax_weights(rng: &mut impl Rng, count: usize, temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..count)
        .map(|_| (rng.gen::<f64>() - 0.5) / temperature)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    weights
}

/// Uniformly random permutation via Fisher-Yates.
fn random_permutation(rng: &mut impl Rng, size: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..size).collect();
    for i in (1..size).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Weighted sum of `perm_count` random permutation matrices. No positivity
/// check: a single permutation draw is a genuine permutation matrix.
pub fn permutation_mixture(
    rng: &mut impl Rng,
    size: usize,
    perm_count: usize,
    temperature: f64,
) -> Matrix {
    let weights = tempered_softmax_weights(rng, perm_count, temperature);
    let mut m = Matrix::zeros(size, size);
    for &w in &weights {
        let perm = random_permutation(rng, size);
        for (row, &col) in perm.iter().enumerate() {
            m.set(row, col, m.get(row, col) + w);
        }
    }
    m
}

const POSITIVITY_RESAMPLE_CAP: usize = 100;

/// Strictly positive doubly stochastic matrix: permutation mixtures are
/// redrawn until every cell is covered by at least one permutation.
pub fn build_property_matrix(
    rng: &mut impl Rng,
    size: usize,
    perm_count: usize,
    temperature: f64,
) -> Result<Matrix> {
    if size < 2 {
        return Err(GincError::InvalidConfig(
            "property chain needs at least 2 states".into(),
        ));
    }
    for _ in 0..POSITIVITY_RESAMPLE_CAP {
        let m = permutation_mixture(rng, size, perm_count, temperature);
        if m.is_strictly_positive() {
            return Ok(m);
        }
    }
    Err(GincError::Construction(format!(
        "no strictly positive permutation mixture in {POSITIVITY_RESAMPLE_CAP} attempts \
         (size {size}, {perm_count} permutations)"
    )))
}

/// Entity transition matrix: a property-style mixture `T` blended with the
/// identity, `(1 - self_loop) * T + self_loop * I`.
pub fn build_entity_matrix(
    rng: &mut impl Rng,
    size: usize,
    perm_count: usize,
    temperature: f64,
    self_loop: f64,
) -> Result<Matrix> {
    let t = build_property_matrix(rng, size, perm_count, temperature)?;
    let mut m = Matrix::zeros(size, size);
    for r in 0..size {
        for c in 0..size {
            let base = (1.0 - self_loop) * t.get(r, c);
            m.set(r, c, if r == c { base + self_loop } else { base });
        }
    }
    Ok(m)
}

/// Near-uniform start distribution over `n_states` hidden states.
pub fn build_start_distribution(rng: &mut impl Rng, n_states: usize, temperature: f64) -> Vec<f64> {
    tempered_softmax_weights(rng, n_states, temperature)
}

/// Memory matrix: column 0 is the delimiter; every other cell draws a
/// token uniformly from the non-delimiter vocabulary, so no non-delimiter
/// state can ever emit the delimiter.
pub fn build_memory_matrix(
    rng: &mut impl Rng,
    vocab: &Vocabulary,
    n_entities: usize,
    n_properties: usize,
) -> Result<MemoryMatrix> {
    let delim = vocab.delimiter_index();
    let mut entries = Vec::with_capacity(n_entities * n_properties);
    for _ in 0..n_entities {
        entries.push(delim);
        for _ in 1..n_properties {
            entries.push(rng.gen_range(1..vocab.size()));
        }
    }
    MemoryMatrix::new(n_entities, n_properties, entries, vocab)
}

/// Build the whole mixture from a config. Sub-seed layout:
/// entity matrix, memory matrix, then per concept one property-matrix
/// stream and one start-distribution stream.
pub fn build_mixture(config: &GincConfig) -> Result<HmmMixture> {
    config.validate()?;
    let vocab = build_vocabulary(config.vocab_size)?;

    let mut rng = seed::stream(config.master_seed, &[tags::ENTITY_MATRIX]);
    let entity = build_entity_matrix(
        &mut rng,
        config.n_entities,
        config.perm_count,
        config.concept_temperature,
        config.entity_self_loop,
    )?;

    let mut rng = seed::stream(config.master_seed, &[tags::MEMORY_MATRIX]);
    let memory = build_memory_matrix(&mut rng, &vocab, config.n_entities, config.n_properties)?;

    let n_states = config.n_entities * config.n_properties;
    let mut concepts = Vec::with_capacity(config.n_concepts);
    for c in 0..config.n_concepts {
        let mut rng = seed::stream(config.master_seed, &[tags::PROPERTY_MATRIX, c as u64]);
        let property = build_property_matrix(
            &mut rng,
            config.n_properties,
            config.perm_count,
            config.concept_temperature,
        )?;
        let mut rng = seed::stream(config.master_seed, &[tags::START_DISTRIBUTION, c as u64]);
        let start = build_start_distribution(&mut rng, n_states, config.start_temperature);
        concepts.push(ConceptParams::new(property, start)?);
    }

    let prior = vec![1.0 / config.n_concepts as f64; config.n_concepts];
    HmmMixture::new(vocab, memory, entity, concepts, prior)
}

/// A sibling mixture sharing the base's vocabulary, memory matrix, and
/// entity chain, with all concepts redrawn under `fresh_seed`. Used by the
/// unseen-concept and fresh-family ablations, where prompts or predictors
/// come from concepts outside the original family but over the same token
/// structure.
pub fn resample_concepts(
    base: &HmmMixture,
    config: &GincConfig,
    fresh_seed: u64,
) -> Result<HmmMixture> {
    let n_states = base.n_states();
    let mut concepts = Vec::with_capacity(config.n_concepts);
    for c in 0..config.n_concepts {
        let mut rng = seed::stream(fresh_seed, &[tags::FRESH_MIXTURE, tags::PROPERTY_MATRIX, c as u64]);
        let property = build_property_matrix(
            &mut rng,
            base.n_properties(),
            config.perm_count,
            config.concept_temperature,
        )?;
        let mut rng =
            seed::stream(fresh_seed, &[tags::FRESH_MIXTURE, tags::START_DISTRIBUTION, c as u64]);
        let start = build_start_distribution(&mut rng, n_states, config.start_temperature);
        concepts.push(ConceptParams::new(property, start)?);
    }
    let prior = vec![1.0 / config.n_concepts as f64; config.n_concepts];
    HmmMixture::new(
        base.vocabulary().clone(),
        base.memory().clone(),
        base.entity_transition().clone(),
        concepts,
        prior,
    )
}

/// Draw a concept id from the mixture prior.
pub fn sample_concept_from_prior(mixture: &HmmMixture, rng: &mut SeedRng) -> usize {
    sample_categorical(rng, mixture.prior())
}

/// Draw an index from a probability vector by inverse CDF.
pub(crate) fn sample_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_row(rng: &mut impl Rng, matrix: &Matrix, row: usize) -> usize {
    sample_categorical(rng, matrix.row(row))
}

/// Sample one document: pick a concept from the prior, draw the start
/// state once, then walk the joint chain emitting through the memory
/// matrix.
pub fn sample_document(mixture: &HmmMixture, rng: &mut impl Rng, length: usize) -> Document {
    sample_document_trace(mixture, rng, length).0
}

/// Like [`sample_document`] but also returns the hidden path (used by
/// tests that check the emission structure).
pub(crate) fn sample_document_trace(
    mixture: &HmmMixture,
    rng: &mut impl Rng,
    length: usize,
) -> (Document, Vec<HiddenState>) {
    let concept_id = sample_categorical(rng, mixture.prior());
    let params = mixture.concept_params(concept_id);
    let ns = mixture.n_properties();
    let mut tokens = Vec::with_capacity(length);
    let mut states = Vec::with_capacity(length);

    let flat = sample_categorical(rng, params.start_distribution());
    let mut state = HiddenState::from_flat(flat, ns);
    tokens.push(mixture.memory().token(state));
    states.push(state);
    for _ in 1..length {
        state = HiddenState {
            entity: sample_row(rng, mixture.entity_transition(), state.entity),
            property: sample_row(rng, params.property_transition(), state.property),
        };
        tokens.push(mixture.memory().token(state));
        states.push(state);
    }
    (Document { concept_id, tokens }, states)
}

/// Training documents, one independent sub-stream per document index.
pub fn sample_train_documents(mixture: &HmmMixture, config: &GincConfig) -> Vec<Document> {
    sample_documents(
        mixture,
        config.master_seed,
        tags::TRAIN_DOCUMENT,
        config.n_train_docs,
        config.train_doc_len,
    )
}

/// Validation documents.
pub fn sample_val_documents(mixture: &HmmMixture, config: &GincConfig) -> Vec<Document> {
    sample_documents(
        mixture,
        config.master_seed,
        tags::VAL_DOCUMENT,
        config.n_val_docs,
        config.val_doc_len,
    )
}

fn sample_documents(
    mixture: &HmmMixture,
    master_seed: u64,
    tag: u64,
    count: usize,
    length: usize,
) -> Vec<Document> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng: SeedRng = seed::stream(master_seed, &[tag, i as u64]);
            sample_document(mixture, &mut rng, length)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::STOCHASTIC_TOLERANCE;

    fn rng(n: u64) -> SeedRng {
        seed::stream(n, &[42])
    }

    #[test]
    fn softmax_weights_are_a_distribution() {
        let mut r = rng(0);
        let w = tempered_softmax_weights(&mut r, 100, 0.1);
        assert_eq!(w.len(), 100);
        assert!(w.iter().all(|&x| x > 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_high_temperature_limit_is_uniform() {
        let mut r = rng(1);
        let w = tempered_softmax_weights(&mut r, 100, 1e6);
        for &x in &w {
            assert!((x - 0.01).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_is_deterministic_under_a_fixed_seed() {
        let a = tempered_softmax_weights(&mut rng(7), 50, 0.1);
        let b = tempered_softmax_weights(&mut rng(7), 50, 0.1);
        assert_eq!(a, b);
    }

    #[test]
    fn property_matrix_is_doubly_stochastic_and_positive() {
        let mut r = rng(2);
        let m = build_property_matrix(&mut r, 10, 100, 0.1).unwrap();
        m.check_row_stochastic(STOCHASTIC_TOLERANCE).unwrap();
        assert!(m.is_strictly_positive());
        for c in 0..10 {
            let col_sum: f64 = (0..10).map(|r_| m.get(r_, c)).sum();
            assert!((col_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn property_matrix_matches_straightforward_reimplementation() {
        // Duplicate-implementation oracle: replay the same stream with a
        // plain loop and compare entrywise.
        let m = {
            let mut r = rng(3);
            permutation_mixture(&mut r, 10, 100, 0.1)
        };
        let oracle = {
            let mut r = rng(3);
            let logits: Vec<f64> = (0..100).map(|_| (r.gen::<f64>() - 0.5) / 0.1).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut table = vec![vec![0.0f64; 10]; 10];
            for e in &exps {
                let mut perm: Vec<usize> = (0..10).collect();
                for i in (1..10).rev() {
                    let j = r.gen_range(0..=i);
                    perm.swap(i, j);
                }
                for (row, &col) in perm.iter().enumerate() {
                    table[row][col] += e / z;
                }
            }
            table
        };
        for row in 0..10 {
            for col in 0..10 {
                assert!((m.get(row, col) - oracle[row][col]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_permutation_mixture_is_a_permutation_matrix() {
        let mut r = rng(4);
        let m = permutation_mixture(&mut r, 10, 1, 0.1);
        for row in 0..10 {
            let ones = (0..10).filter(|&c| m.get(row, c) == 1.0).count();
            let zeros = (0..10).filter(|&c| m.get(row, c) == 0.0).count();
            assert_eq!(ones, 1);
            assert_eq!(zeros, 9);
        }
        // And the positivity loop rejects it: no strictly positive matrix
        // can come from a single permutation.
        let mut r = rng(5);
        assert!(matches!(
            build_property_matrix(&mut r, 10, 1, 0.1),
            Err(GincError::Construction(_))
        ));
    }

    #[test]
    fn entity_matrix_has_heavy_diagonal() {
        let mut r = rng(6);
        let m = build_entity_matrix(&mut r, 10, 100, 0.1, 0.9).unwrap();
        m.check_row_stochastic(STOCHASTIC_TOLERANCE).unwrap();
        assert!(m.is_strictly_positive());
        for i in 0..10 {
            assert!(m.get(i, i) >= 0.9);
            let off_diag: f64 = (0..10).filter(|&j| j != i).map(|j| m.get(i, j)).sum();
            // Off-diagonal mass is 0.1 * (1 - T[i,i]) <= 0.1.
            assert!(off_diag <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn start_distribution_is_near_uniform() {
        let mut r = rng(7);
        let s = build_start_distribution(&mut r, 100, 10.0);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = s.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min > 0.0);
        // Logits live in [-0.05, 0.05], so the max/min ratio is at most e^0.1.
        assert!(max / min <= (0.1f64).exp() + 1e-12);
        // Which keeps every entry within 11% of uniform.
        for &x in &s {
            assert!((x - 0.01).abs() / 0.01 < 0.11);
        }
    }

    #[test]
    fn start_distribution_high_temperature_limit() {
        let mut r = rng(8);
        let s = build_start_distribution(&mut r, 100, 1e9);
        for &x in &s {
            assert!((x - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn memory_matrix_layout() {
        let mut r = rng(9);
        let vocab = build_vocabulary(50).unwrap();
        let memory = build_memory_matrix(&mut r, &vocab, 10, 10).unwrap();
        for v in 0..10 {
            assert_eq!(memory.token(HiddenState { entity: v, property: 0 }), 0);
            for s in 1..10 {
                let tok = memory.token(HiddenState { entity: v, property: s });
                assert!((1..50).contains(&tok));
            }
        }
    }

    #[test]
    fn mixture_has_uniform_prior_and_rebuilds_identically() {
        let config = GincConfig {
            master_seed: 11,
            ..GincConfig::default()
        };
        let a = build_mixture(&config).unwrap();
        assert_eq!(a.prior(), &[0.2; 5]);
        let b = build_mixture(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn low_temperature_many_concept_mixture_builds() {
        let config = GincConfig {
            vocab_size: 100,
            n_concepts: 12,
            concept_temperature: 0.01,
            master_seed: 3,
            ..GincConfig::default()
        };
        let mixture = build_mixture(&config).unwrap();
        assert_eq!(mixture.n_concepts(), 12);
        assert_eq!(mixture.vocabulary().size(), 100);
    }

    #[test]
    fn document_has_requested_length() {
        let config = GincConfig {
            master_seed: 21,
            ..GincConfig::default()
        };
        let mixture = build_mixture(&config).unwrap();
        let mut r = rng(10);
        let doc = sample_document(&mixture, &mut r, 10240);
        assert_eq!(doc.tokens.len(), 10240);
        assert!(doc.concept_id < 5);
    }

    #[test]
    fn concept_frequencies_are_uniform_chi_squared() {
        let config = GincConfig {
            n_train_docs: 1000,
            train_doc_len: 4,
            master_seed: 31,
            ..GincConfig::default()
        };
        let mixture = build_mixture(&config).unwrap();
        let docs = sample_train_documents(&mixture, &config);
        let mut counts = [0usize; 5];
        for d in &docs {
            counts[d.concept_id] += 1;
        }
        let expected = 200.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 99th percentile of chi-squared with 4 degrees of freedom.
        assert!(chi2 < 13.2767, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn entity_chain_rarely_moves() {
        let config = GincConfig {
            master_seed: 41,
            ..GincConfig::default()
        };
        let mixture = build_mixture(&config).unwrap();
        let mut same = 0usize;
        let mut steps = 0usize;
        for i in 0..20u64 {
            let mut r = seed::stream(7, &[tags::TRAIN_DOCUMENT, i]);
            let (_, states) = sample_document_trace(&mixture, &mut r, 2048);
            for w in states.windows(2) {
                steps += 1;
                if w[0].entity == w[1].entity {
                    same += 1;
                }
            }
        }
        let fraction = same as f64 / steps as f64;
        let sigma = 0.5 / (steps as f64).sqrt();
        assert!(fraction >= 0.9 - 3.0 * sigma, "fraction {fraction}");
    }

    #[test]
    fn documents_emit_delimiter_exactly_from_property_zero() {
        let config = GincConfig {
            master_seed: 51,
            ..GincConfig::default()
        };
        let mixture = build_mixture(&config).unwrap();
        let mut r = rng(12);
        let (doc, states) = sample_document_trace(&mixture, &mut r, 4096);
        for (tok, st) in doc.tokens.iter().zip(&states) {
            assert_eq!(*tok == 0, st.property == 0);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            GincConfig { concept_temperature: 0.0, ..GincConfig::default() },
            GincConfig { entity_self_loop: 1.0, ..GincConfig::default() },
            GincConfig { vocab_size: 1, ..GincConfig::default() },
            GincConfig { n_concepts: 0, ..GincConfig::default() },
        ];
        for config in bad {
            assert!(config.validate().is_err());
        }
    }
}
