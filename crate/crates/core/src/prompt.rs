//! In-context prompt sampling and ground-truth labels.
//!
//! A prompt concatenates `n` independent training examples (each `k` tokens
//! followed by the delimiter) and one test input of `k - 1` tokens. Every
//! example starts from the prompt start distribution: uniform over entities
//! at one fixed start property, drawn once per prompt from the
//! non-delimiter properties. The ground-truth label is the argmax of the
//! exact next-token law under the generating concept, so the task has no
//! intrinsic labelling error.
//!
//! Delimiter hidden states are never materialized while sampling: every
//! property-0 state emits the delimiter deterministically and the next
//! example's start is redrawn from the prompt start distribution anyway, so
//! appending the delimiter token directly yields the same token law.

use crate::error::{GincError, Result};
use crate::gen::sample_categorical;
use crate::hmm::{HiddenState, HmmMixture};
use crate::seed::{self, SeedRng};
use crate::vocab::Vocabulary;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Which sequence conditions the ground-truth label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Condition on the test input alone (the in-context task definition).
    #[default]
    TestOnly,
    /// Condition on the full prompt up to the test input.
    FullPrompt,
}

/// Geometry and provenance of one batch of prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    /// Tokens per training example; the test input has `k - 1`.
    pub k: usize,
    /// Number of training examples.
    pub n: usize,
    /// Prompts per batch.
    pub n_prompts: usize,
    pub label_mode: LabelMode,
    /// Batch seed; prompt `i` uses the sub-stream at index `i`.
    pub seed: u64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n: 0,
            n_prompts: 2500,
            label_mode: LabelMode::TestOnly,
            seed: 0,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(GincError::InvalidConfig("k must be at least 2".into()));
        }
        if self.n_prompts == 0 {
            return Err(GincError::InvalidConfig("n_prompts must be positive".into()));
        }
        Ok(())
    }
}

/// One sampled prompt with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub concept_id: usize,
    pub start_property: usize,
    /// `n` training examples of `k` tokens each.
    pub examples: Vec<Vec<usize>>,
    /// Test input; `k - 1` tokens (shorter for varying-length evaluation).
    pub x_test: Vec<usize>,
    pub y_test: usize,
    pub k: usize,
    pub n: usize,
    /// Sub-seed this prompt was drawn from.
    pub seed: u64,
}

impl Prompt {
    /// The concatenated prompt: each example followed by the delimiter,
    /// then the test input.
    pub fn flat_tokens(&self) -> Vec<usize> {
        let mut flat = Vec::with_capacity(self.n * (self.k + 1) + self.x_test.len());
        for ex in &self.examples {
            flat.extend_from_slice(ex);
            flat.push(0);
        }
        flat.extend_from_slice(&self.x_test);
        flat
    }
}

/// Start distribution for prompt examples: mass `1 / n_entities` on every
/// (entity, start_property) state. Property 0 is rejected because the
/// example would open with the delimiter.
pub fn prompt_start_distribution(mixture: &HmmMixture, start_property: usize) -> Result<Vec<f64>> {
    if start_property == 0 || start_property >= mixture.n_properties() {
        return Err(GincError::InvalidConfig(format!(
            "start property must be in [1, {}), got {start_property}",
            mixture.n_properties()
        )));
    }
    let mut dist = vec![0.0; mixture.n_states()];
    let mass = 1.0 / mixture.n_entities() as f64;
    for entity in 0..mixture.n_entities() {
        dist[HiddenState { entity, property: start_property }.flat_index(mixture.n_properties())] =
            mass;
    }
    Ok(dist)
}

/// Ground-truth label: argmax of the next-token law under `concept_id`
/// given `conditioning`, starting from the prompt start distribution.
/// Ties break toward the lowest token index. The delimiter is excluded
/// from the argmax: it marks example boundaries, never an output, and the
/// property chain can pass through the delimiter state mid-example, so
/// without the exclusion the delimiter could win.
pub fn compute_label(
    mixture: &HmmMixture,
    concept_id: usize,
    start_property: usize,
    conditioning: &[usize],
) -> Result<usize> {
    let init = prompt_start_distribution(mixture, start_property)?;
    let posterior = mixture
        .concept(concept_id)
        .next_token_posterior(conditioning, Some(&init))?;
    Ok(argmax_lowest(&posterior[1..]) + 1)
}

/// Index of the maximum, lowest index on ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Sample a chain of `len` tokens from `concept_id` starting at the prompt
/// start distribution (uniform entity, fixed start property). The property
/// chain is restricted off property 0 for the whole example: a prompt
/// carries exactly one delimiter per example, appended at the boundary,
/// never inside an example or as its output token.
pub(crate) fn sample_example_tokens(
    mixture: &HmmMixture,
    concept_id: usize,
    start_property: usize,
    len: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let params = mixture.concept_params(concept_id);
    let mut state = HiddenState {
        entity: rng.gen_range(0..mixture.n_entities()),
        property: start_property,
    };
    let mut tokens = Vec::with_capacity(len);
    if len == 0 {
        return tokens;
    }
    tokens.push(mixture.memory().token(state));
    for _ in 1..len {
        let property_row = params.property_transition().row(state.property);
        state = HiddenState {
            entity: sample_categorical(rng, mixture.entity_transition().row(state.entity)),
            property: sample_restricted(rng, property_row),
        };
        tokens.push(mixture.memory().token(state));
    }
    tokens
}

/// Categorical draw over `row[1..]` renormalized (the delimiter property is
/// excluded).
fn sample_restricted(rng: &mut impl Rng, row: &[f64]) -> usize {
    let total: f64 = row[1..].iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (s, &p) in row.iter().enumerate().skip(1) {
        acc += p;
        if u < acc {
            return s;
        }
    }
    row.len() - 1
}

/// Sample one prompt for a fixed concept. The generator is seeded from
/// `seed` alone, so a prompt is reproducible from its provenance.
pub fn sample_prompt(
    mixture: &HmmMixture,
    concept_id: usize,
    config: &PromptConfig,
    seed_value: u64,
) -> Result<Prompt> {
    let mut rng: SeedRng = rand::SeedableRng::seed_from_u64(seed_value);
    sample_prompt_inner(mixture, concept_id, config, seed_value, &mut rng, None, None)
}

/// Sample one prompt for a fixed concept and a fixed start property
/// (instead of drawing the property from the prompt's stream). Used when a
/// batch must share one task, e.g. the example-ordering experiment.
pub fn sample_prompt_with_start(
    mixture: &HmmMixture,
    concept_id: usize,
    start_property: usize,
    config: &PromptConfig,
    seed_value: u64,
) -> Result<Prompt> {
    let mut rng: SeedRng = rand::SeedableRng::seed_from_u64(seed_value);
    sample_prompt_inner(
        mixture,
        concept_id,
        config,
        seed_value,
        &mut rng,
        None,
        Some(start_property),
    )
}

/// Sample one prompt whose test input is truncated to `test_len - 1`
/// tokens, with `test_len` drawn uniformly from `[2, k]`.
pub fn sample_varying_length_prompt(
    mixture: &HmmMixture,
    concept_id: usize,
    config: &PromptConfig,
    seed_value: u64,
) -> Result<Prompt> {
    let mut rng: SeedRng = rand::SeedableRng::seed_from_u64(seed_value);
    let test_len = rng.gen_range(2..=config.k);
    sample_prompt_inner(mixture, concept_id, config, seed_value, &mut rng, Some(test_len), None)
}

fn sample_prompt_inner(
    mixture: &HmmMixture,
    concept_id: usize,
    config: &PromptConfig,
    seed_value: u64,
    rng: &mut SeedRng,
    test_len_override: Option<usize>,
    start_property_override: Option<usize>,
) -> Result<Prompt> {
    config.validate()?;
    if concept_id >= mixture.n_concepts() {
        return Err(GincError::InvalidConfig(format!(
            "concept id {concept_id} out of range"
        )));
    }
    if mixture.n_properties() < 2 {
        return Err(GincError::InvalidConfig(
            "prompts need at least one non-delimiter property".into(),
        ));
    }
    let start_property = match start_property_override {
        Some(sp) => {
            if sp == 0 || sp >= mixture.n_properties() {
                return Err(GincError::InvalidConfig(format!(
                    "start property must be in [1, {}), got {sp}",
                    mixture.n_properties()
                )));
            }
            sp
        }
        None => rng.gen_range(1..mixture.n_properties()),
    };
    let examples: Vec<Vec<usize>> = (0..config.n)
        .map(|_| sample_example_tokens(mixture, concept_id, start_property, config.k, rng))
        .collect();
    let test_len = test_len_override.unwrap_or(config.k);
    let x_test = sample_example_tokens(mixture, concept_id, start_property, test_len - 1, rng);

    let mut prompt = Prompt {
        concept_id,
        start_property,
        examples,
        x_test,
        y_test: 0,
        k: config.k,
        n: config.n,
        seed: seed_value,
    };
    let conditioning = match config.label_mode {
        LabelMode::TestOnly => prompt.x_test.clone(),
        LabelMode::FullPrompt => prompt.flat_tokens(),
    };
    // Prompts sampled from the concept itself always have positive
    // probability, so the label is defined.
    prompt.y_test = compute_label(mixture, concept_id, start_property, &conditioning)?;
    Ok(prompt)
}

/// Sample a batch of prompts, drawing each prompt's concept from the
/// mixture prior. Prompt `i` owns the sub-stream at index `i` under
/// `config.seed`.
pub fn sample_prompts_from_prior(
    mixture: &HmmMixture,
    config: &PromptConfig,
) -> Result<Vec<Prompt>> {
    config.validate()?;
    (0..config.n_prompts)
        .into_par_iter()
        .map(|i| {
            let seed_value = seed::derive(config.seed, &[i as u64]);
            let mut rng: SeedRng = rand::SeedableRng::seed_from_u64(seed_value);
            let concept_id = sample_categorical(&mut rng, mixture.prior());
            sample_prompt_inner(mixture, concept_id, config, seed_value, &mut rng, None, None)
        })
        .collect()
}

/// Batch of varying-length prompts (test length uniform in `[2, k]`),
/// concepts drawn from the prior.
pub fn sample_varying_length_prompts(
    mixture: &HmmMixture,
    config: &PromptConfig,
) -> Result<Vec<Prompt>> {
    config.validate()?;
    (0..config.n_prompts)
        .into_par_iter()
        .map(|i| {
            let seed_value = seed::derive(config.seed, &[i as u64]);
            let mut rng: SeedRng = rand::SeedableRng::seed_from_u64(seed_value);
            let concept_id = sample_categorical(&mut rng, mixture.prior());
            let test_len = rng.gen_range(2..=config.k);
            sample_prompt_inner(mixture, concept_id, config, seed_value, &mut rng, Some(test_len), None)
        })
        .collect()
}

/// Serialize prompts as tab-separated records: five header fields
/// (k, n, concept_id, start_property, seed), then one field of
/// space-separated token strings per example, the test input field, and
/// the label token.
pub fn write_prompts(prompts: &[Prompt], vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in prompts {
        write!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            p.k, p.n, p.concept_id, p.start_property, p.seed
        )
        .expect("string write");
        for ex in &p.examples {
            out.push('\t');
            out.push_str(&render_tokens(ex, vocab));
        }
        out.push('\t');
        out.push_str(&render_tokens(&p.x_test, vocab));
        out.push('\t');
        out.push_str(vocab.token(p.y_test));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn render_tokens(tokens: &[usize], vocab: &Vocabulary) -> String {
    tokens
        .iter()
        .map(|&t| vocab.token(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Read prompts back; parse failures report the 1-based record index.
pub fn read_prompts(path: &Path, vocab: &Vocabulary) -> Result<Vec<Prompt>> {
    let index = vocab.index_map();
    let parse_tokens = |field: &str, record: usize| -> Result<Vec<usize>> {
        field
            .split(' ')
            .map(|word| {
                index.get(word).copied().ok_or_else(|| GincError::Parse {
                    line: record,
                    message: format!("unknown token {word:?}"),
                })
            })
            .collect()
    };

    let text = std::fs::read_to_string(path)?;
    let mut prompts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let record = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let fail = |message: String| GincError::Parse { line: record, message };
        if fields.len() < 7 {
            return Err(fail(format!("expected at least 7 fields, got {}", fields.len())));
        }
        let k: usize = fields[0].parse().map_err(|_| fail("bad k field".into()))?;
        let n: usize = fields[1].parse().map_err(|_| fail("bad n field".into()))?;
        let concept_id: usize =
            fields[2].parse().map_err(|_| fail("bad concept field".into()))?;
        let start_property: usize =
            fields[3].parse().map_err(|_| fail("bad start property field".into()))?;
        let seed_value: u64 = fields[4].parse().map_err(|_| fail("bad seed field".into()))?;
        if fields.len() != 7 + n {
            return Err(fail(format!(
                "expected {} fields for n={n}, got {}",
                7 + n,
                fields.len()
            )));
        }
        let examples: Vec<Vec<usize>> = (0..n)
            .map(|e| parse_tokens(fields[5 + e], record))
            .collect::<Result<_>>()?;
        let x_test = parse_tokens(fields[5 + n], record)?;
        let y_field = fields[6 + n];
        let y_test = *index.get(y_field).ok_or_else(|| GincError::Parse {
            line: record,
            message: format!("unknown label token {y_field:?}"),
        })?;
        prompts.push(Prompt {
            concept_id,
            start_property,
            examples,
            x_test,
            y_test,
            k,
            n,
            seed: seed_value,
        });
    }
    Ok(prompts)
}
