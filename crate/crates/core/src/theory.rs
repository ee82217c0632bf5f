//! Numerical instantiation of the conditions governing when the exact
//! predictor solves the in-context task.
//!
//! The signal side is the sum over example positions of the expected KL
//! divergence between the prompt-distribution next-token law and a
//! competing concept's next-token law. The error side combines two
//! mismatch penalties: one from the prompt start distribution deviating
//! from the pretraining start (a function of the minimum start mass), one
//! from the delimiter transitions (a function of extremal delimiter
//! transition and start masses). A concept family is distinguishable from
//! the reference when every competitor's KL sum clears the penalties.

use crate::bayes::wilson_interval;
use crate::error::{GincError, Result};
use crate::hmm::{HiddenState, HmmMixture};
use crate::prompt::{self, prompt_start_distribution, Prompt};
use crate::seed::{self, tags};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Extremal probabilities of a mixture, measured around one reference
/// concept. All are plain probabilities in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsEstimate {
    /// Min over hidden states of the mass the reference concept sends into
    /// the delimiter block in one step.
    pub min_delimiter_transition: f64,
    /// Max of the same block mass over all non-reference concepts. NaN for
    /// a single-concept mixture.
    pub max_delimiter_transition_other: f64,
    /// Min start mass of a delimiter state, over all concepts.
    pub min_delimiter_start: f64,
    /// Max start mass of a delimiter state, over all concepts.
    pub max_delimiter_start: f64,
    /// Min joint transition entry under the reference concept.
    pub min_transition: f64,
    /// Min emission probability; 1 exactly, emissions are deterministic.
    pub min_emission: f64,
    /// Floor on the probability of a length-k example under the reference:
    /// `min_emission^k * min_transition^2`.
    pub example_likelihood_floor: f64,
    /// Min start mass under the reference concept.
    pub min_start_mass: f64,
}

/// The two mismatch penalties; infinite when a logged constant is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchTerms {
    pub start_mismatch: f64,
    pub delimiter_mismatch: f64,
}

impl MismatchTerms {
    pub fn total(&self) -> f64 {
        self.start_mismatch + self.delimiter_mismatch
    }
}

/// Monte-Carlo estimate of one positional KL divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    /// Prefixes whose per-prefix KL was infinite (support violation).
    pub infinite_terms: usize,
}

/// Distinguishability verdict for one competing concept at one example
/// length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinguishabilityVerdict {
    pub concept_id: usize,
    pub kl_sum: f64,
    pub kl_stderr: f64,
    pub margin: f64,
    pub distinguishable: bool,
}

pub fn estimate_constants(
    mixture: &HmmMixture,
    reference_concept: usize,
    example_length: usize,
) -> ConstantsEstimate {
    let nv = mixture.n_entities();
    let ns = mixture.n_properties();
    let entity = mixture.entity_transition();

    // Mass sent into the delimiter block (property 0) from state (v, s):
    // sum over target entities of entity[v, v'] * property[s, 0].
    let block_mass = |concept: usize, v: usize, s: usize| -> f64 {
        let p0 = mixture.concept_params(concept).property_transition().get(s, 0);
        let mut total = 0.0;
        for v_next in 0..nv {
            total += entity.get(v, v_next) * p0;
        }
        total
    };

    let mut min_delim_ref = f64::INFINITY;
    let mut max_delim_other = f64::NEG_INFINITY;
    for v in 0..nv {
        for s in 0..ns {
            min_delim_ref = min_delim_ref.min(block_mass(reference_concept, v, s));
            for c in 0..mixture.n_concepts() {
                if c == reference_concept {
                    continue;
                }
                max_delim_other = max_delim_other.max(block_mass(c, v, s));
            }
        }
    }
    let max_delim_other = if mixture.n_concepts() > 1 {
        max_delim_other
    } else {
        f64::NAN
    };

    let mut min_delim_start = f64::INFINITY;
    let mut max_delim_start = f64::NEG_INFINITY;
    for c in 0..mixture.n_concepts() {
        let start = mixture.concept_params(c).start_distribution();
        for v in 0..nv {
            let mass = start[HiddenState { entity: v, property: 0 }.flat_index(ns)];
            min_delim_start = min_delim_start.min(mass);
            max_delim_start = max_delim_start.max(mass);
        }
    }

    let reference = mixture.concept_params(reference_concept);
    let mut min_transition = f64::INFINITY;
    for v in 0..nv {
        for s in 0..ns {
            for v_next in 0..nv {
                for s_next in 0..ns {
                    let p = entity.get(v, v_next) * reference.property_transition().get(s, s_next);
                    min_transition = min_transition.min(p);
                }
            }
        }
    }

    let min_start_mass = reference
        .start_distribution()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);

    let min_emission = 1.0;
    ConstantsEstimate {
        min_delimiter_transition: min_delim_ref,
        max_delimiter_transition_other: max_delim_other,
        min_delimiter_start: min_delim_start,
        max_delimiter_start: max_delim_start,
        min_transition,
        min_emission,
        example_likelihood_floor: min_emission.powi(example_length as i32)
            * min_transition
            * min_transition,
        min_start_mass,
    }
}

/// The start and delimiter mismatch penalties. A zero constant under a
/// logarithm yields an infinite penalty, which is the flag that the bound
/// is vacuous.
pub fn mismatch_terms(constants: &ConstantsEstimate) -> MismatchTerms {
    let start_mismatch = -constants.min_start_mass.ln();
    let delimiter_mismatch = 2.0
        * (constants.max_delimiter_transition_other.ln() - constants.min_delimiter_transition.ln())
        + (constants.max_delimiter_start.ln() - constants.min_delimiter_start.ln());
    MismatchTerms {
        start_mismatch,
        delimiter_mismatch,
    }
}

/// Exact KL divergence between two next-token laws over the vocabulary.
/// Returns the value and whether the support was violated (q zero where p
/// is positive), in which case the value is infinite.
pub(crate) fn next_token_kl(p: &[f64], q: &[f64]) -> (f64, bool) {
    let mut kl = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return (f64::INFINITY, true);
            }
            kl += a * (a / b).ln();
        }
    }
    (kl, false)
}

/// One Monte-Carlo draw of the positional KL at `position` (1-based):
/// sample a prefix of `position - 1` tokens from the reference concept
/// started at `prompt_init`, then compare the prompt-side next-token law
/// (reference concept, prompt start) against the competing concept's law
/// (its own pretraining start).
pub(crate) fn positional_kl_sample(
    mixture: &HmmMixture,
    reference_concept: usize,
    other_concept: usize,
    position: usize,
    start_property: usize,
    prompt_init: &[f64],
    rng: &mut impl Rng,
) -> Result<(f64, bool)> {
    let prefix = prompt::sample_example_tokens(
        mixture,
        reference_concept,
        start_property,
        position - 1,
        rng,
    );
    let p = mixture
        .concept(reference_concept)
        .next_token_posterior(&prefix, Some(prompt_init))?;
    let q = match mixture.concept(other_concept).next_token_posterior(&prefix, None) {
        Ok(q) => q,
        // The competitor assigns the prefix probability zero: maximal
        // support violation.
        Err(GincError::UndefinedPosterior) => return Ok((f64::INFINITY, true)),
        Err(e) => return Err(e),
    };
    Ok(next_token_kl(&p, &q))
}

/// Monte-Carlo estimate of the expected positional KL at `position`
/// (1-based, so `position = 1` conditions on the empty prefix). The start
/// property is redrawn per sample, matching the prompt distribution.
pub fn estimate_positional_kl(
    mixture: &HmmMixture,
    reference_concept: usize,
    other_concept: usize,
    position: usize,
    n_samples: usize,
    seed_value: u64,
) -> Result<KlEstimate> {
    if position == 0 {
        return Err(GincError::InvalidConfig("positions are 1-based".into()));
    }
    if n_samples == 0 {
        return Err(GincError::InvalidConfig("need at least one sample".into()));
    }
    let draws: Vec<(f64, bool)> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::stream(
                seed_value,
                &[tags::KL_SAMPLE, other_concept as u64, position as u64, s as u64],
            );
            let start_property = rng.gen_range(1..mixture.n_properties());
            let prompt_init = prompt_start_distribution(mixture, start_property)?;
            positional_kl_sample(
                mixture,
                reference_concept,
                other_concept,
                position,
                start_property,
                &prompt_init,
                &mut rng,
            )
        })
        .collect::<Result<_>>()?;

    let infinite_terms = draws.iter().filter(|(_, inf)| *inf).count();
    if infinite_terms > 0 {
        return Ok(KlEstimate {
            mean: f64::INFINITY,
            stderr: f64::INFINITY,
            n_samples,
            infinite_terms,
        });
    }
    let n = n_samples as f64;
    let mean = draws.iter().map(|(v, _)| v).sum::<f64>() / n;
    let var = if n_samples > 1 {
        draws.iter().map(|(v, _)| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(KlEstimate {
        mean,
        stderr: (var / n).sqrt(),
        n_samples,
        infinite_terms,
    })
}

/// Positional KL estimates for positions `1..=max_position` against one
/// competing concept.
pub fn positional_kl_profile(
    mixture: &HmmMixture,
    reference_concept: usize,
    other_concept: usize,
    max_position: usize,
    n_samples: usize,
    seed_value: u64,
) -> Result<Vec<KlEstimate>> {
    (1..=max_position)
        .map(|j| {
            estimate_positional_kl(mixture, reference_concept, other_concept, j, n_samples, seed_value)
        })
        .collect()
}

fn verdict_from_profile(
    concept_id: usize,
    profile: &[KlEstimate],
    example_length: usize,
    mismatch: &MismatchTerms,
) -> DistinguishabilityVerdict {
    let head = &profile[..example_length];
    let kl_sum: f64 = head.iter().map(|e| e.mean).sum();
    let kl_stderr = head.iter().map(|e| e.stderr * e.stderr).sum::<f64>().sqrt();
    let margin = kl_sum - mismatch.total();
    DistinguishabilityVerdict {
        concept_id,
        kl_sum,
        kl_stderr,
        margin,
        distinguishable: margin > 0.0,
    }
}

/// Distinguishability of the reference concept from every other concept at
/// one example length: the KL sum over positions `1..=example_length` must
/// exceed the mismatch penalties.
pub fn check_distinguishability(
    mixture: &HmmMixture,
    reference_concept: usize,
    example_length: usize,
    n_samples: usize,
    seed_value: u64,
) -> Result<Vec<DistinguishabilityVerdict>> {
    if example_length < 1 {
        return Err(GincError::InvalidConfig("example length must be >= 1".into()));
    }
    let constants = estimate_constants(mixture, reference_concept, example_length);
    let mismatch = mismatch_terms(&constants);
    (0..mixture.n_concepts())
        .filter(|&c| c != reference_concept)
        .map(|c| {
            let profile = positional_kl_profile(
                mixture,
                reference_concept,
                c,
                example_length,
                n_samples,
                seed_value,
            )?;
            Ok(verdict_from_profile(c, &profile, example_length, &mismatch))
        })
        .collect()
}

const LN_2: f64 = std::f64::consts::LN_2;

/// Calibration function translating a multiclass logistic excess risk into
/// a 0-1 excess risk: `g(d) = ((1-d)ln(1-d) + (1+d)ln(1+d)) / 2` on [0, 1).
pub fn calibration_function(delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(GincError::OutOfRange(format!(
            "calibration argument must be in [0, 1), got {delta}"
        )));
    }
    let a = if delta == 0.0 {
        0.0
    } else {
        (1.0 - delta) * (1.0 - delta).ln()
    };
    let b = (1.0 + delta) * (1.0 + delta).ln();
    Ok(0.5 * (a + b))
}

/// Inverse of the calibration function by bisection to 1e-10. Defined for
/// excess risks below ln 2; beyond that the bound is vacuous.
pub fn calibration_inverse(excess: f64) -> Result<f64> {
    if !(0.0..LN_2).contains(&excess) {
        return Err(GincError::OutOfRange(format!(
            "inverse calibration argument must be in [0, ln 2), got {excess}"
        )));
    }
    if excess == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0 - 1e-15;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if calibration_function(mid)? < excess {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Excess-risk bound at example length `k` for a worst-case mismatch
/// penalty: the inverse calibration of `mismatch_sup / (k - 1)`, an
/// up-to-constant instantiation (the multiplicative constant is taken as 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessRiskBound {
    pub value: f64,
    pub vacuous: bool,
}

pub fn excess_risk_bound(mismatch_sup: f64, example_length: usize) -> Result<ExcessRiskBound> {
    if example_length < 2 {
        return Err(GincError::InvalidConfig(
            "the bound needs example length >= 2".into(),
        ));
    }
    let argument = mismatch_sup / (example_length as f64 - 1.0);
    if argument >= LN_2 || argument.is_nan() {
        return Ok(ExcessRiskBound {
            value: f64::INFINITY,
            vacuous: true,
        });
    }
    Ok(ExcessRiskBound {
        value: calibration_inverse(argument)?,
        vacuous: false,
    })
}

/// Start-shift check: the prompt start distribution must be within
/// `label_margin / 4` total variation of every delimiter-successor
/// distribution under the reference concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvMarginCheck {
    pub max_start_tv: f64,
    pub label_margin: f64,
    pub satisfied: bool,
}

pub fn tv_margin_check(
    mixture: &HmmMixture,
    reference_concept: usize,
    prompt_start: &[f64],
    x_test: &[usize],
) -> Result<TvMarginCheck> {
    let nv = mixture.n_entities();
    let ns = mixture.n_properties();
    let entity = mixture.entity_transition();
    let property = mixture.concept_params(reference_concept).property_transition();

    let mut max_start_tv = 0.0f64;
    for v_delim in 0..nv {
        // Successor distribution of the delimiter state (v_delim, 0).
        let mut tv = 0.0;
        for v in 0..nv {
            for s in 0..ns {
                let successor = entity.get(v_delim, v) * property.get(0, s);
                let idx = HiddenState { entity: v, property: s }.flat_index(ns);
                tv += (prompt_start[idx] - successor).abs();
            }
        }
        max_start_tv = max_start_tv.max(0.5 * tv);
    }

    let posterior = mixture
        .concept(reference_concept)
        .next_token_posterior(x_test, Some(prompt_start))?;
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &p in &posterior {
        if p > best {
            second = best;
            best = p;
        } else if p > second {
            second = p;
        }
    }
    let label_margin = best - second;
    Ok(TvMarginCheck {
        max_start_tv,
        label_margin,
        satisfied: max_start_tv < label_margin / 4.0,
    })
}

/// Accuracy of the predictor bucketed by test-input length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub test_length: usize,
    pub n_prompts: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaryingLengthReport {
    pub per_length: Vec<LengthBucket>,
    pub aggregate: LengthBucket,
    /// Accuracy floor implied by the excess-risk bound (1 - bound, clamped),
    /// up to the unknown constant; informational.
    pub implied_floor: f64,
}

/// Evaluate varying-length prompts bucketed by test length (the test input
/// has `test_length - 1` tokens).
pub fn varying_length_eval(
    mixture: &HmmMixture,
    prompts: &[Prompt],
    mismatch_sup: f64,
    example_length: usize,
) -> Result<VaryingLengthReport> {
    if prompts.is_empty() {
        return Err(GincError::EmptyGroup { k: example_length, n: 0 });
    }
    let outcomes: Vec<(usize, bool)> = prompts
        .par_iter()
        .map(|p| {
            let predicted = crate::bayes::in_context_predict(&p.flat_tokens(), mixture)?;
            Ok((p.x_test.len() + 1, predicted == p.y_test))
        })
        .collect::<Result<_>>()?;

    let mut buckets: std::collections::BTreeMap<usize, (usize, usize)> =
        std::collections::BTreeMap::new();
    let mut total = (0usize, 0usize);
    for (len, correct) in outcomes {
        let b = buckets.entry(len).or_insert((0, 0));
        b.0 += correct as usize;
        b.1 += 1;
        total.0 += correct as usize;
        total.1 += 1;
    }
    let to_bucket = |len: usize, successes: usize, trials: usize| {
        let (ci_low, ci_high) = wilson_interval(successes, trials);
        LengthBucket {
            test_length: len,
            n_prompts: trials,
            accuracy: successes as f64 / trials as f64,
            ci_low,
            ci_high,
        }
    };
    let per_length = buckets
        .into_iter()
        .map(|(len, (s, t))| to_bucket(len, s, t))
        .collect();
    let bound = excess_risk_bound(mismatch_sup, example_length)?;
    Ok(VaryingLengthReport {
        per_length,
        aggregate: to_bucket(0, total.0, total.1),
        implied_floor: if bound.vacuous { 0.0 } else { (1.0 - bound.value).max(0.0) },
    })
}

/// KL profile of one competing concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptKlProfile {
    pub concept_id: usize,
    /// Estimates for positions 1..=max length, in order.
    pub estimates: Vec<KlEstimate>,
}

/// Verdicts for all competing concepts at one example length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthVerdicts {
    pub example_length: usize,
    pub verdicts: Vec<DistinguishabilityVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundAtLength {
    pub example_length: usize,
    pub value: f64,
    pub vacuous: bool,
}

/// Everything the theory run produces, serializable as one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub reference_concept: usize,
    pub example_lengths: Vec<usize>,
    pub kl_samples_per_position: usize,
    pub constants: ConstantsEstimate,
    pub mismatch: MismatchTerms,
    pub kl_by_position: Vec<ConceptKlProfile>,
    pub verdicts_by_length: Vec<LengthVerdicts>,
    /// Margins strictly increase with the example length for every
    /// competitor (the KL sum only gains nonnegative terms).
    pub margins_increase_with_length: bool,
    /// `example_likelihood_floor == min_emission^k * min_transition^2`
    /// recomputed at the largest example length.
    pub floor_consistency: bool,
    pub tv_checks: Vec<TvMarginCheck>,
    pub excess_risk_bounds: Vec<BoundAtLength>,
}

/// Run the full theory suite on a mixture.
pub fn build_theory_report(
    mixture: &HmmMixture,
    reference_concept: usize,
    example_lengths: &[usize],
    kl_samples: usize,
    tv_samples: usize,
    seed_value: u64,
) -> Result<TheoryReport> {
    if example_lengths.is_empty() {
        return Err(GincError::InvalidConfig("need at least one example length".into()));
    }
    let mut lengths = example_lengths.to_vec();
    lengths.sort_unstable();
    let max_len = *lengths.last().expect("non-empty");

    let constants = estimate_constants(mixture, reference_concept, max_len);
    let mismatch = mismatch_terms(&constants);

    let kl_by_position: Vec<ConceptKlProfile> = (0..mixture.n_concepts())
        .filter(|&c| c != reference_concept)
        .map(|c| {
            Ok(ConceptKlProfile {
                concept_id: c,
                estimates: positional_kl_profile(
                    mixture,
                    reference_concept,
                    c,
                    max_len,
                    kl_samples,
                    seed_value,
                )?,
            })
        })
        .collect::<Result<_>>()?;

    let verdicts_by_length: Vec<LengthVerdicts> = lengths
        .iter()
        .map(|&k| LengthVerdicts {
            example_length: k,
            verdicts: kl_by_position
                .iter()
                .map(|profile| verdict_from_profile(profile.concept_id, &profile.estimates, k, &mismatch))
                .collect(),
        })
        .collect();

    let margins_increase_with_length = kl_by_position.iter().all(|profile| {
        lengths.windows(2).all(|w| {
            let shorter = verdict_from_profile(profile.concept_id, &profile.estimates, w[0], &mismatch);
            let longer = verdict_from_profile(profile.concept_id, &profile.estimates, w[1], &mismatch);
            longer.margin > shorter.margin
        })
    });

    let expected_floor =
        constants.min_emission.powi(max_len as i32) * constants.min_transition * constants.min_transition;
    let floor_consistency = constants.example_likelihood_floor == expected_floor;

    let tv_checks: Vec<TvMarginCheck> = (0..tv_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stream(seed_value, &[tags::TV_SAMPLE, i as u64]);
            let start_property = rng.gen_range(1..mixture.n_properties());
            let prompt_start = prompt_start_distribution(mixture, start_property)?;
            let x_test = prompt::sample_example_tokens(
                mixture,
                reference_concept,
                start_property,
                max_len - 1,
                &mut rng,
            );
            tv_margin_check(mixture, reference_concept, &prompt_start, &x_test)
        })
        .collect::<Result<_>>()?;

    let excess_risk_bounds = lengths
        .iter()
        .filter(|&&k| k >= 2)
        .map(|&k| {
            let b = excess_risk_bound(mismatch.total(), k)?;
            Ok(BoundAtLength {
                example_length: k,
                value: b.value,
                vacuous: b.vacuous,
            })
        })
        .collect::<Result<_>>()?;

    Ok(TheoryReport {
        reference_concept,
        example_lengths: lengths,
        kl_samples_per_position: kl_samples,
        constants,
        mismatch,
        kl_by_position,
        verdicts_by_length,
        margins_increase_with_length,
        floor_consistency,
        tv_checks,
        excess_risk_bounds,
    })
}

/// The positional KL table as comma-separated text:
/// `concept_id,position,estimate,stderr`.
pub fn kl_table_csv(report: &TheoryReport) -> String {
    let mut out = String::from("concept_id,position,estimate,stderr\n");
    for profile in &report.kl_by_position {
        for (j, e) in profile.estimates.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                profile.concept_id,
                j + 1,
                e.mean,
                e.stderr
            ));
        }
    }
    out
}
