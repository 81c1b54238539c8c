//! Attention-based confusion scores.
//!
//! For a dependency target `Y` and candidate triggers `x_1..x_n` (true
//! trigger first), the layer-`l` aggregate for candidate `x_i` is the
//! head-mean of the attention summed over `x_i`'s tokens, averaged over
//! `Y`'s tokens. The confusion score is `-log2` of the trigger's share of
//! the candidate total, so attention split evenly over two candidates
//! scores exactly 1.

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actstore::{locate_sentences, ActivationSource, BundleError, SentenceActivations, SentenceEntry};
use crate::span::Span;
use crate::tasks::{ConditionId, LabeledExample, SpanKey, TaskId};

#[derive(Debug, Error)]
pub enum ConfusionError {
    #[error("dependency instance: {0}")]
    Instance(String),
    #[error("attention layer {layer} not in 1..={num_layers}")]
    Layer { layer: usize, num_layers: usize },
    #[error("example {index}: {message}")]
    Example { index: usize, message: String },
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

/// Which side of the attention matrix the target sits on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Read row `Y`, columns `x_i`: how much the target attends to each
    /// candidate.
    #[default]
    TargetAsQuery,
    /// Read rows `x_i`, column `Y`.
    CandidateAsQuery,
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "target_as_query" | "target" => Ok(Direction::TargetAsQuery),
            "candidate_as_query" | "candidate" => Ok(Direction::CandidateAsQuery),
            _ => Err(format!("unknown direction `{s}`")),
        }
    }
}

/// Which words of a candidate noun phrase count as its tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSpan {
    #[default]
    Head,
    Phrase,
}

impl FromStr for CandidateSpan {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "head" => Ok(CandidateSpan::Head),
            "phrase" | "np" => Ok(CandidateSpan::Phrase),
            _ => Err(format!("unknown candidate span `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionOptions {
    pub direction: Direction,
    pub candidate_span: CandidateSpan,
}

/// Token-level view of one dependency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DependencyInstance {
    pub sentence: usize,
    pub target: Vec<usize>,
    /// `candidates[0]` is the true trigger.
    pub candidates: Vec<Vec<usize>>,
}

impl DependencyInstance {
    pub fn new(
        sentence: usize,
        target: Vec<usize>,
        candidates: Vec<Vec<usize>>,
        num_tokens: usize,
    ) -> Result<Self, ConfusionError> {
        let bad = |m: &str| Err(ConfusionError::Instance(m.to_string()));
        if target.is_empty() {
            return bad("empty target");
        }
        if candidates.is_empty() {
            return bad("empty candidate set");
        }
        if candidates[0].is_empty() {
            return bad("empty trigger");
        }
        let mut seen = vec![false; num_tokens];
        for &t in target.iter().chain(candidates.iter().flatten()) {
            if t >= num_tokens {
                return bad("token index outside the sentence");
            }
            if seen[t] {
                return bad("target and candidate token sets overlap");
            }
            seen[t] = true;
        }
        Ok(Self {
            sentence,
            target,
            candidates,
        })
    }

    /// Instance for a condition example: the target word against the
    /// trigger, then the distractors present, in [`SpanKey::DISTRACTORS`]
    /// order.
    pub fn from_example(
        ex: &LabeledExample,
        sentence: usize,
        entry: &SentenceEntry,
        span: CandidateSpan,
    ) -> Result<Self, ConfusionError> {
        let tokens = |words: Span| -> Result<Vec<usize>, ConfusionError> {
            if words.end > entry.word_to_token.len() {
                return Err(ConfusionError::Instance(format!(
                    "word span {words} outside a {}-word sentence",
                    entry.word_to_token.len()
                )));
            }
            Ok(words.indices().flat_map(|w| entry.word_to_token[w].indices()).collect())
        };
        let candidate = |key: SpanKey| -> Option<Span> {
            match span {
                CandidateSpan::Head => ex.spans.get(key),
                CandidateSpan::Phrase => ex.spans.phrase(key).or_else(|| ex.spans.get(key)),
            }
        };
        let target = ex
            .spans
            .get(SpanKey::Target)
            .or_else(|| ex.labeled_span())
            .ok_or_else(|| ConfusionError::Instance("no target span".into()))?;
        let trigger = candidate(SpanKey::Trigger).ok_or_else(|| ConfusionError::Instance("no trigger span".into()))?;
        let mut candidates = vec![tokens(trigger)?];
        for key in SpanKey::DISTRACTORS {
            if let Some(s) = candidate(key) {
                candidates.push(tokens(s)?);
            }
        }
        Self::new(sentence, tokens(target)?, candidates, entry.num_tokens())
    }
}

/// Per-candidate aggregates at `layer` (1-based).
pub fn aggregate_attention(
    acts: &SentenceActivations,
    inst: &DependencyInstance,
    layer: usize,
    direction: Direction,
) -> Result<Vec<f64>, ConfusionError> {
    if layer == 0 || layer > acts.num_layers {
        return Err(ConfusionError::Layer {
            layer,
            num_layers: acts.num_layers,
        });
    }
    if inst.candidates.is_empty() {
        return Err(ConfusionError::Instance("empty candidate set".into()));
    }
    let t = acts.num_tokens;
    let mut out = vec![0.0; inst.candidates.len()];
    for head in 0..acts.num_heads {
        let m = acts.attention(layer, head)?;
        for (agg, cand) in out.iter_mut().zip(&inst.candidates) {
            let mut sum = 0.0;
            for &y in &inst.target {
                for &x in cand {
                    let (q, k) = match direction {
                        Direction::TargetAsQuery => (y, x),
                        Direction::CandidateAsQuery => (x, y),
                    };
                    sum += f64::from(m[q * t + k]);
                }
            }
            *agg += sum / inst.target.len() as f64;
        }
    }
    let heads = acts.num_heads as f64;
    for agg in &mut out {
        *agg /= heads;
    }
    Ok(out)
}

/// `-log2` of the first aggregate's share of the total. `None` when the
/// total is zero, or the trigger gets no mass and the score would be
/// infinite.
pub fn score_from_aggregates(aggregates: &[f64]) -> Option<f64> {
    let total: f64 = aggregates.iter().sum();
    let first = *aggregates.first()?;
    if total <= 0.0 || first <= 0.0 || !total.is_finite() {
        return None;
    }
    Some(0.0 - (first / total).log2())
}

pub fn confusion_score(
    acts: &SentenceActivations,
    inst: &DependencyInstance,
    layer: usize,
    direction: Direction,
) -> Result<Option<f64>, ConfusionError> {
    Ok(score_from_aggregates(&aggregate_attention(
        acts, inst, layer, direction,
    )?))
}

/// One example's score at one layer; `None` marks an undefined score.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub condition: ConditionId,
    pub example: usize,
    pub layer: usize,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerStat {
    pub layer: usize,
    /// `None` when no score at this layer is defined.
    pub mean: Option<f64>,
    pub n_defined: usize,
    pub n_undefined: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSummary {
    pub condition: ConditionId,
    pub layers: Vec<LayerStat>,
    /// Mean over every defined (example, layer) pair.
    pub grand_mean: Option<f64>,
    pub n_defined: usize,
    pub n_undefined: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfusionTable {
    pub conditions: BTreeMap<ConditionId, ConditionSummary>,
    pub scores: Vec<ScoreRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    ((n > 0).then(|| sum / n as f64), n)
}

impl ConfusionTable {
    /// Summaries from per-example scores; rows keep their given order.
    pub fn from_scores(scores: Vec<ScoreRow>, num_layers: usize) -> Self {
        let mut by_condition: BTreeMap<ConditionId, Vec<&ScoreRow>> = BTreeMap::new();
        for r in &scores {
            by_condition.entry(r.condition).or_default().push(r);
        }
        let conditions = by_condition
            .into_iter()
            .map(|(condition, rows)| {
                let layers = (1..=num_layers)
                    .map(|layer| {
                        let at: Vec<&&ScoreRow> = rows.iter().filter(|r| r.layer == layer).collect();
                        let (mean, n_defined) = mean(at.iter().filter_map(|r| r.score));
                        LayerStat {
                            layer,
                            mean,
                            n_defined,
                            n_undefined: at.len() - n_defined,
                        }
                    })
                    .collect();
                let (grand_mean, n_defined) = mean(rows.iter().filter_map(|r| r.score));
                (
                    condition,
                    ConditionSummary {
                        condition,
                        layers,
                        grand_mean,
                        n_defined,
                        n_undefined: rows.len() - n_defined,
                    },
                )
            })
            .collect();
        Self { conditions, scores }
    }
}

/// Scores every condition example at every layer of `source` and
/// summarizes per condition.
pub fn condition_summary(
    examples: &[LabeledExample],
    source: &dyn ActivationSource,
    opts: ConfusionOptions,
) -> Result<ConfusionTable, ConfusionError> {
    let manifest = source.manifest();
    let num_layers = manifest.num_layers;
    let indices = locate_sentences(manifest, examples.iter().map(|e| e.words.as_slice()))?;
    let per_example: Vec<Vec<ScoreRow>> = examples
        .par_iter()
        .zip(indices.par_iter())
        .enumerate()
        .map(|(i, (ex, &sentence))| {
            let condition = match ex.task {
                TaskId::Condition(c) => c,
                other => {
                    return Err(ConfusionError::Example {
                        index: i,
                        message: format!("task `{other}` is not a condition"),
                    })
                }
            };
            let entry = &manifest.sentences[sentence];
            let inst = DependencyInstance::from_example(ex, sentence, entry, opts.candidate_span).map_err(|e| {
                ConfusionError::Example {
                    index: i,
                    message: e.to_string(),
                }
            })?;
            let acts = source.sentence(sentence)?;
            (1..=num_layers)
                .map(|layer| {
                    Ok(ScoreRow {
                        condition,
                        example: i,
                        layer,
                        score: confusion_score(&acts, &inst, layer, opts.direction)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_, ConfusionError>>()?;
    Ok(ConfusionTable::from_scores(
        per_example.into_iter().flatten().collect(),
        num_layers,
    ))
}
