//! One factorial HMM concept and exact log-space inference.
//!
//! The hidden state is a pair (entity, property). Entities and properties
//! evolve as independent Markov chains; the joint transition probability is
//! the product of the two chain entries. Emissions are deterministic: a
//! memory matrix maps each (entity, property) pair to one token, and every
//! property-0 state emits the delimiter token.
//!
//! All filtering runs in natural-log space with log-sum-exp. Documents are
//! tens of thousands of tokens long, so raw-probability recursions would
//! underflow. Zero-probability observations are representable (every
//! log-mass goes to negative infinity) and propagate without error so that
//! mixtures can renormalize over the concepts that remain feasible.

use crate::error::{GincError, Result};
use crate::matrix::{check_distribution, Matrix};
use crate::vocab::Vocabulary;
use crate::{INFERENCE_TOLERANCE, STOCHASTIC_TOLERANCE};

/// A joint hidden state: which entity the chain is on, and which of its
/// properties is currently expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiddenState {
    pub entity: usize,
    pub property: usize,
}

impl HiddenState {
    #[inline]
    pub fn flat_index(&self, n_properties: usize) -> usize {
        self.entity * n_properties + self.property
    }

    #[inline]
    pub fn from_flat(index: usize, n_properties: usize) -> Self {
        Self {
            entity: index / n_properties,
            property: index % n_properties,
        }
    }
}

/// Deterministic emission table: `entries[entity][property]` is a token
/// index. Column 0 is the delimiter in every row, and the delimiter never
/// appears in any other column, so observing the delimiter pins the hidden
/// property to 0 and no other observation can.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryMatrix {
    n_entities: usize,
    n_properties: usize,
    entries: Vec<usize>,
}

impl MemoryMatrix {
    pub fn new(
        n_entities: usize,
        n_properties: usize,
        entries: Vec<usize>,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        if entries.len() != n_entities * n_properties {
            return Err(GincError::InvalidConfig(format!(
                "memory matrix needs {} entries, got {}",
                n_entities * n_properties,
                entries.len()
            )));
        }
        let delim = vocab.delimiter_index();
        for (i, &tok) in entries.iter().enumerate() {
            if tok >= vocab.size() {
                return Err(GincError::InvalidToken {
                    token: tok,
                    vocab_size: vocab.size(),
                });
            }
            let property = i % n_properties;
            if property == 0 && tok != delim {
                return Err(GincError::InvalidConfig(format!(
                    "memory column 0 must hold the delimiter, found token {tok} at row {}",
                    i / n_properties
                )));
            }
            if property != 0 && tok == delim {
                return Err(GincError::InvalidConfig(format!(
                    "delimiter token in non-delimiter column {property}"
                )));
            }
        }
        Ok(Self {
            n_entities,
            n_properties,
            entries,
        })
    }

    #[inline]
    pub fn token(&self, state: HiddenState) -> usize {
        self.entries[state.entity * self.n_properties + state.property]
    }

    #[inline]
    pub fn token_at(&self, flat_state: usize) -> usize {
        self.entries[flat_state]
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_properties(&self) -> usize {
        self.n_properties
    }
}

/// Per-concept parameters: the property-chain transition matrix and the
/// start distribution over the joint hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptParams {
    property_transition: Matrix,
    start_distribution: Vec<f64>,
}

impl ConceptParams {
    pub fn new(property_transition: Matrix, start_distribution: Vec<f64>) -> Result<Self> {
        if property_transition.rows() != property_transition.cols() {
            return Err(GincError::InvalidConfig(
                "property transition matrix must be square".into(),
            ));
        }
        property_transition.check_row_stochastic(STOCHASTIC_TOLERANCE)?;
        if !property_transition.is_strictly_positive() {
            return Err(GincError::InvalidDistribution(
                "property transitions must be strictly positive".into(),
            ));
        }
        check_distribution(&start_distribution, STOCHASTIC_TOLERANCE)?;
        if start_distribution.iter().any(|&x| x <= 0.0) {
            return Err(GincError::InvalidDistribution(
                "start distribution must be strictly positive".into(),
            ));
        }
        Ok(Self {
            property_transition,
            start_distribution,
        })
    }

    pub fn property_transition(&self) -> &Matrix {
        &self.property_transition
    }

    pub fn start_distribution(&self) -> &[f64] {
        &self.start_distribution
    }
}

/// The pretraining distribution: a prior over concepts, each concept an
/// HMM sharing the entity chain, memory matrix, and vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmMixture {
    vocabulary: Vocabulary,
    memory: MemoryMatrix,
    entity_transition: Matrix,
    concepts: Vec<ConceptParams>,
    prior: Vec<f64>,
}

impl HmmMixture {
    pub fn new(
        vocabulary: Vocabulary,
        memory: MemoryMatrix,
        entity_transition: Matrix,
        concepts: Vec<ConceptParams>,
        prior: Vec<f64>,
    ) -> Result<Self> {
        if entity_transition.rows() != entity_transition.cols()
            || entity_transition.rows() != memory.n_entities()
        {
            return Err(GincError::InvalidConfig(
                "entity transition dimensions must match the memory matrix".into(),
            ));
        }
        entity_transition.check_row_stochastic(STOCHASTIC_TOLERANCE)?;
        if !entity_transition.is_strictly_positive() {
            return Err(GincError::InvalidDistribution(
                "entity transitions must be strictly positive".into(),
            ));
        }
        if concepts.is_empty() {
            return Err(GincError::InvalidConfig("mixture needs a concept".into()));
        }
        let n_states = memory.n_entities() * memory.n_properties();
        for (i, c) in concepts.iter().enumerate() {
            if c.property_transition.rows() != memory.n_properties() {
                return Err(GincError::InvalidConfig(format!(
                    "concept {i} property chain size mismatch"
                )));
            }
            if c.start_distribution.len() != n_states {
                return Err(GincError::InvalidConfig(format!(
                    "concept {i} start distribution length mismatch"
                )));
            }
        }
        if prior.len() != concepts.len() {
            return Err(GincError::InvalidConfig(
                "prior length must match concept count".into(),
            ));
        }
        check_distribution(&prior, STOCHASTIC_TOLERANCE)?;
        Ok(Self {
            vocabulary,
            memory,
            entity_transition,
            concepts,
            prior,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn memory(&self) -> &MemoryMatrix {
        &self.memory
    }

    pub fn entity_transition(&self) -> &Matrix {
        &self.entity_transition
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn n_entities(&self) -> usize {
        self.memory.n_entities()
    }

    pub fn n_properties(&self) -> usize {
        self.memory.n_properties()
    }

    pub fn n_states(&self) -> usize {
        self.memory.n_entities() * self.memory.n_properties()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn concept_params(&self, id: usize) -> &ConceptParams {
        &self.concepts[id]
    }

    /// View of one concept's HMM for inference.
    pub fn concept(&self, id: usize) -> ConceptHmm<'_> {
        ConceptHmm {
            mixture: self,
            params: &self.concepts[id],
        }
    }

    /// A mixture restricted to a subset of the concepts, with the prior
    /// renormalized uniformly over the kept ids.
    pub fn restricted(&self, keep: &[usize]) -> Result<HmmMixture> {
        if keep.is_empty() {
            return Err(GincError::InvalidConfig("empty concept subset".into()));
        }
        let concepts = keep.iter().map(|&id| self.concepts[id].clone()).collect();
        let prior = vec![1.0 / keep.len() as f64; keep.len()];
        HmmMixture::new(
            self.vocabulary.clone(),
            self.memory.clone(),
            self.entity_transition.clone(),
            concepts,
            prior,
        )
    }
}

/// Log-space filtering state: `log_alpha[h]` holds the log joint mass of
/// the observed prefix and hidden state `h`; its log-sum-exp equals the
/// log-likelihood of the prefix.
///
/// A fresh state (before any token) holds the start distribution over the
/// first hidden state: the first step masks it by the emission without a
/// transition, later steps transition first.
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub log_alpha: Vec<f64>,
    pub log_likelihood: f64,
    tokens_consumed: usize,
}

impl ForwardState {
    pub fn is_zero_probability(&self) -> bool {
        self.log_likelihood == f64::NEG_INFINITY
    }

    /// True before the first token is consumed.
    pub fn is_fresh(&self) -> bool {
        self.tokens_consumed == 0
    }
}

/// One concept's HMM, borrowed from the mixture.
#[derive(Clone, Copy)]
pub struct ConceptHmm<'a> {
    mixture: &'a HmmMixture,
    params: &'a ConceptParams,
}

impl<'a> ConceptHmm<'a> {
    pub fn n_states(&self) -> usize {
        self.mixture.n_states()
    }

    pub fn params(&self) -> &ConceptParams {
        self.params
    }

    /// Log of the joint transition probability
    /// `p(to | from) = entity[v, v'] * property[s, s']`.
    pub fn transition_log(&self, from: HiddenState, to: HiddenState) -> f64 {
        let e = self.mixture.entity_transition.get(from.entity, to.entity);
        let p = self.params.property_transition.get(from.property, to.property);
        (e * p).ln()
    }

    /// Start filtering. With no override the concept's own start
    /// distribution is used; an override must sum to 1 (point masses and
    /// zero entries are fine).
    pub fn forward_init(&self, init_override: Option<&[f64]>) -> Result<ForwardState> {
        let init = match init_override {
            Some(v) => {
                if v.len() != self.n_states() {
                    return Err(GincError::InvalidDistribution(format!(
                        "init override length {} != {} hidden states",
                        v.len(),
                        self.n_states()
                    )));
                }
                check_distribution(v, INFERENCE_TOLERANCE)?;
                v
            }
            None => self.params.start_distribution(),
        };
        Ok(ForwardState {
            log_alpha: init.iter().map(|&p| p.ln()).collect(),
            log_likelihood: 0.0,
            tokens_consumed: 0,
        })
    }

    /// Advance the filter by one observed token. The first step masks the
    /// start distribution by the emission; afterwards
    /// `log_alpha'[h'] = log sum_h exp(log_alpha[h]) p(h'|h) [M(h') = token]`,
    /// evaluated as a log-sum-exp with the running maximum factored out.
    /// The transition sum exploits the entity/property factorization; it is
    /// algebraically the same sum over joint states.
    pub fn forward_step(&self, state: &ForwardState, token: usize) -> Result<ForwardState> {
        let vocab_size = self.mixture.vocabulary.size();
        if token >= vocab_size {
            return Err(GincError::InvalidToken {
                token,
                vocab_size,
            });
        }
        let n = self.n_states();
        let consumed = state.tokens_consumed + 1;

        let max_log = state
            .log_alpha
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if max_log == f64::NEG_INFINITY {
            // Zero-probability prefix: stays zero.
            return Ok(ForwardState {
                log_alpha: vec![f64::NEG_INFINITY; n],
                log_likelihood: f64::NEG_INFINITY,
                tokens_consumed: consumed,
            });
        }

        // w[v][s] = exp(log_alpha - max), so entries are in (0, 1].
        let mut weights = vec![0.0f64; n];
        for (w, &la) in weights.iter_mut().zip(&state.log_alpha) {
            *w = (la - max_log).exp();
        }
        let mass = if state.is_fresh() {
            weights
        } else {
            self.apply_transition(&weights)
        };

        let mut log_alpha = vec![f64::NEG_INFINITY; n];
        let mut emitted_mass = 0.0f64;
        for h in 0..n {
            if self.mixture.memory.token_at(h) == token {
                emitted_mass += mass[h];
                log_alpha[h] = max_log + mass[h].ln();
            }
        }
        // The log_alpha entries are joint masses, so their log-sum-exp is the
        // prefix log-likelihood; with the shared max factored out that is
        // max_log + ln(total emitted mass).
        let log_likelihood = if emitted_mass > 0.0 {
            max_log + emitted_mass.ln()
        } else {
            f64::NEG_INFINITY
        };
        Ok(ForwardState {
            log_alpha,
            log_likelihood,
            tokens_consumed: consumed,
        })
    }

    /// Log-likelihood `log p(tokens)` under this concept. The empty
    /// sequence has log-likelihood 0.
    pub fn sequence_log_likelihood(
        &self,
        tokens: &[usize],
        init_override: Option<&[f64]>,
    ) -> Result<f64> {
        let mut state = self.forward_init(init_override)?;
        for &t in tokens {
            state = self.forward_step(&state, t)?;
            if state.is_zero_probability() {
                return Ok(f64::NEG_INFINITY);
            }
        }
        Ok(state.log_likelihood)
    }

    /// Filtering state after consuming `tokens`.
    pub fn forward(&self, tokens: &[usize], init_override: Option<&[f64]>) -> Result<ForwardState> {
        let mut state = self.forward_init(init_override)?;
        for &t in tokens {
            state = self.forward_step(&state, t)?;
        }
        Ok(state)
    }

    /// Distribution of the next token given the observed prefix. Errors if
    /// the prefix itself has probability zero.
    pub fn next_token_posterior(
        &self,
        tokens: &[usize],
        init_override: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let state = self.forward(tokens, init_override)?;
        self.next_token_posterior_from(&state)
    }

    /// Next-token distribution from a filtering state. For a fresh state
    /// (no token consumed yet) the hidden state is already the one that
    /// emits, so no transition is applied.
    pub fn next_token_posterior_from(&self, state: &ForwardState) -> Result<Vec<f64>> {
        if state.is_zero_probability() {
            return Err(GincError::UndefinedPosterior);
        }
        let max_log = state
            .log_alpha
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if max_log == f64::NEG_INFINITY {
            return Err(GincError::UndefinedPosterior);
        }
        let n = self.n_states();
        let mut weights = vec![0.0f64; n];
        for (w, &la) in weights.iter_mut().zip(&state.log_alpha) {
            *w = (la - max_log).exp();
        }
        let mass = if state.is_fresh() {
            weights
        } else {
            self.apply_transition(&weights)
        };
        let total: f64 = mass.iter().sum();
        let mut posterior = vec![0.0f64; self.mixture.vocabulary.size()];
        for (h, &m) in mass.iter().enumerate() {
            posterior[self.mixture.memory.token_at(h)] += m;
        }
        for p in &mut posterior {
            *p /= total;
        }
        Ok(posterior)
    }

    /// One application of the joint transition to a linear mass vector.
    fn apply_transition(&self, weights: &[f64]) -> Vec<f64> {
        let nv = self.mixture.n_entities();
        let ns = self.mixture.n_properties();
        let entity = &self.mixture.entity_transition;
        let property = &self.params.property_transition;
        let mut stage1 = vec![0.0f64; nv * ns];
        for v in 0..nv {
            let w_row = &weights[v * ns..(v + 1) * ns];
            let e_row = entity.row(v);
            for (v_next, &e) in e_row.iter().enumerate() {
                let out = &mut stage1[v_next * ns..(v_next + 1) * ns];
                for (o, &w) in out.iter_mut().zip(w_row) {
                    *o += e * w;
                }
            }
        }
        let mut mass = vec![0.0f64; nv * ns];
        for v_next in 0..nv {
            let in_row = &stage1[v_next * ns..(v_next + 1) * ns];
            let out_row = &mut mass[v_next * ns..(v_next + 1) * ns];
            for (s, &a) in in_row.iter().enumerate() {
                let p_row = property.row(s);
                for (o, &p) in out_row.iter_mut().zip(p_row) {
                    *o += a * p;
                }
            }
        }
        mass
    }
}
