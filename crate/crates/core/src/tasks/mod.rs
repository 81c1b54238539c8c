//! Labeled datasets for the probing tasks and attention conditions.
//!
//! Every label and span is read off the structure that produced the
//! sentence (a derivation tree or a condition template), never recovered
//! from the string afterwards.

mod classification;
mod conditions;
mod nth_token;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::grammar::GrammarError;
use crate::span::Span;

pub use classification::{
    build_classification_dataset, build_classification_dataset_with, label_tree, ClassificationTask, TreeLabel,
};
pub use conditions::{
    build_condition_dataset, build_condition_dataset_with, condition_grammar, ConditionId, ConditionSpec, Gender,
    Lexicon, Number, TriState,
};
pub use nth_token::{build_nth_token_dataset, nth_token_label, LengthFilter};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("could only fill {got} of {wanted} `{split}` examples after {attempts} draws")]
    Unattainable {
        split: String,
        wanted: usize,
        got: usize,
        attempts: usize,
    },
    #[error("corpus is empty after length filtering")]
    EmptyCorpus,
    #[error("inconsistent condition spec for {id}: {message}")]
    InconsistentCondition { id: String, message: String },
    #[error("split counts must be positive")]
    EmptySplit,
    #[error("unknown task id `{0}`")]
    UnknownTask(String),
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid example: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which generalization construction a subject-noun example exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NounConstruction {
    Compound,
    Possessive,
}

impl NounConstruction {
    pub fn as_str(self) -> &'static str {
        match self {
            NounConstruction::Compound => "compound",
            NounConstruction::Possessive => "possessive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskId {
    MainAux,
    SubjectNoun(Option<NounConstruction>),
    NthToken(usize),
    Condition(ConditionId),
}

impl TaskId {
    pub fn is_classification(self) -> bool {
        !matches!(self, TaskId::Condition(_))
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskId::MainAux => f.write_str("main_aux"),
            TaskId::SubjectNoun(None) => f.write_str("subject_noun"),
            TaskId::SubjectNoun(Some(c)) => write!(f, "subject_noun/{}", c.as_str()),
            TaskId::NthToken(n) => write!(f, "nth_token/{n}"),
            TaskId::Condition(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for TaskId {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || TaskError::UnknownTask(s.to_string());
        match s {
            "main_aux" => return Ok(TaskId::MainAux),
            "subject_noun" => return Ok(TaskId::SubjectNoun(None)),
            "subject_noun/compound" => return Ok(TaskId::SubjectNoun(Some(NounConstruction::Compound))),
            "subject_noun/possessive" => return Ok(TaskId::SubjectNoun(Some(NounConstruction::Possessive))),
            _ => {}
        }
        if let Some(n) = s.strip_prefix("nth_token/") {
            return n.parse().map(TaskId::NthToken).map_err(|_| unknown());
        }
        s.parse().map(TaskId::Condition).map_err(|_| unknown())
    }
}

/// Names of the word intervals attached to an example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpanKey {
    /// Governing element of a dependency (subject or antecedent head noun).
    Trigger,
    /// Labeled word: the probed word for classification tasks, the
    /// dependent word (auxiliary or reflexive) for conditions.
    Target,
    /// The answer the linear rule would give on a generalization example.
    DistractorLinear,
    /// Noun inside a prepositional modifier of the subject.
    DistractorPp,
    /// Noun inside a relative clause.
    DistractorRc,
    /// Object noun.
    DistractorObject,
}

impl SpanKey {
    pub const ALL: [SpanKey; 6] = [
        SpanKey::Trigger,
        SpanKey::Target,
        SpanKey::DistractorLinear,
        SpanKey::DistractorPp,
        SpanKey::DistractorRc,
        SpanKey::DistractorObject,
    ];

    /// Distractors in the order they are offered as confusion candidates.
    pub const DISTRACTORS: [SpanKey; 3] = [SpanKey::DistractorRc, SpanKey::DistractorObject, SpanKey::DistractorPp];

    pub fn as_str(self) -> &'static str {
        match self {
            SpanKey::Trigger => "trigger",
            SpanKey::Target => "target",
            SpanKey::DistractorLinear => "distractor_linear",
            SpanKey::DistractorPp => "distractor_pp",
            SpanKey::DistractorRc => "distractor_rc",
            SpanKey::DistractorObject => "distractor_object",
        }
    }

    fn parse(s: &str) -> Option<SpanKey> {
        SpanKey::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

const PHRASE_SUFFIX: &str = "_np";

/// Head-word spans plus, where known, the enclosing noun-phrase spans.
///
/// On disk this is one flat JSON object; phrase spans carry an `_np`
/// suffix on their key.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpanMap {
    pub heads: BTreeMap<SpanKey, Span>,
    pub phrases: BTreeMap<SpanKey, Span>,
}

impl SpanMap {
    pub fn get(&self, key: SpanKey) -> Option<Span> {
        self.heads.get(&key).copied()
    }

    pub fn phrase(&self, key: SpanKey) -> Option<Span> {
        self.phrases.get(&key).copied()
    }

    pub fn insert(&mut self, key: SpanKey, span: Span) {
        self.heads.insert(key, span);
    }

    pub fn insert_phrase(&mut self, key: SpanKey, span: Span) {
        self.phrases.insert(key, span);
    }
}

impl Serialize for SpanMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut flat: BTreeMap<String, Span> = BTreeMap::new();
        for (k, v) in &self.heads {
            flat.insert(k.as_str().to_string(), *v);
        }
        for (k, v) in &self.phrases {
            flat.insert(format!("{}{PHRASE_SUFFIX}", k.as_str()), *v);
        }
        flat.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SpanMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let flat: BTreeMap<String, Span> = BTreeMap::deserialize(deserializer)?;
        let mut out = SpanMap::default();
        for (k, v) in flat {
            if let Some(key) = SpanKey::parse(&k) {
                out.heads.insert(key, v);
            } else if let Some(key) = k.strip_suffix(PHRASE_SUFFIX).and_then(SpanKey::parse) {
                out.phrases.insert(key, v);
            } else {
                return Err(D::Error::custom(format!("unknown span key `{k}`")));
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub words: Vec<String>,
    pub labels: Vec<u8>,
    pub task: TaskId,
    pub spans: SpanMap,
}

impl LabeledExample {
    /// Builds an example with a one-hot label on `target`.
    pub fn one_hot(words: Vec<String>, target: usize, task: TaskId, mut spans: SpanMap) -> Self {
        let mut labels = vec![0; words.len()];
        labels[target] = 1;
        spans.insert(SpanKey::Target, Span::single(target));
        Self {
            words,
            labels,
            task,
            spans,
        }
    }

    pub fn sentence(&self) -> String {
        self.words.join(" ")
    }

    /// The contiguous run of positive labels, if there is exactly one.
    pub fn labeled_span(&self) -> Option<Span> {
        let start = self.labels.iter().position(|&y| y == 1)?;
        let len = self.labels[start..].iter().take_while(|&&y| y == 1).count();
        let span = Span::new(start, start + len);
        self.labels[span.end..].iter().all(|&y| y == 0).then_some(span)
    }

    /// Checks the structural invariants of an example.
    pub fn validate(&self) -> Result<(), TaskError> {
        let fail = |m: String| Err(TaskError::Invalid(format!("{}: {m}", self.sentence())));
        if self.words.is_empty() {
            return fail("no words".into());
        }
        if self.labels.len() != self.words.len() {
            return fail(format!("{} labels for {} words", self.labels.len(), self.words.len()));
        }
        if self.labels.iter().any(|&y| y > 1) {
            return fail("labels must be 0 or 1".into());
        }
        if self.labeled_span().is_none() {
            return fail("labels must form exactly one run of 1s".into());
        }
        let heads: Vec<(SpanKey, Span)> = self.spans.heads.iter().map(|(k, v)| (*k, *v)).collect();
        for (i, (ka, a)) in heads.iter().enumerate() {
            if a.is_empty() || a.end > self.words.len() {
                return fail(format!("span {} {a} out of bounds", ka.as_str()));
            }
            for (kb, b) in &heads[i + 1..] {
                if a.overlaps(b) {
                    return fail(format!("spans {} and {} overlap", ka.as_str(), kb.as_str()));
                }
            }
        }
        for (k, phrase) in &self.spans.phrases {
            match self.spans.get(*k) {
                Some(head) if phrase.covers(&head) && phrase.end <= self.words.len() => {}
                _ => return fail(format!("phrase span {} does not cover its head", k.as_str())),
            }
        }
        Ok(())
    }

    /// One dataset record: words, labels, task id and span JSON, tab separated.
    pub fn to_record(&self) -> String {
        let labels: Vec<String> = self.labels.iter().map(u8::to_string).collect();
        let spans = serde_json::to_string(&self.spans).expect("span map serializes");
        format!(
            "{}\t{}\t{}\t{}",
            self.words.join(" "),
            labels.join(","),
            self.task,
            spans
        )
    }

    pub fn from_record(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [words, labels, task, spans] = fields.as_slice() else {
            return Err(format!("expected 4 tab-separated fields, got {}", fields.len()));
        };
        let words: Vec<String> = words.split(' ').map(str::to_string).collect();
        let labels = labels
            .split(',')
            .map(|y| y.parse::<u8>().map_err(|e| format!("bad label `{y}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        let task = task.parse::<TaskId>().map_err(|e| e.to_string())?;
        let spans: SpanMap = serde_json::from_str(spans).map_err(|e| e.to_string())?;
        Ok(Self {
            words,
            labels,
            task,
            spans,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_n: usize,
    pub dev_n: usize,
    pub gen_n: usize,
    pub seed: u64,
    pub dedupe_across_splits: bool,
}

impl SplitSpec {
    pub fn new(train_n: usize, dev_n: usize, gen_n: usize, seed: u64) -> Self {
        Self {
            train_n,
            dev_n,
            gen_n,
            seed,
            dedupe_across_splits: true,
        }
    }

    fn check(&self) -> Result<(), TaskError> {
        if self.train_n == 0 || self.dev_n == 0 || self.gen_n == 0 {
            return Err(TaskError::EmptySplit);
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self::new(40_000, 10_000, 10_000, 0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
    pub gen: Vec<LabeledExample>,
}

impl Splits {
    /// Generalization examples of one subject-noun construction.
    pub fn gen_subset(&self, construction: NounConstruction) -> Vec<LabeledExample> {
        self.gen
            .iter()
            .filter(|ex| ex.task == TaskId::SubjectNoun(Some(construction)))
            .cloned()
            .collect()
    }
}

pub fn write_dataset<W: Write>(mut w: W, examples: &[LabeledExample]) -> Result<(), TaskError> {
    for ex in examples {
        w.write_all(ex.to_record().as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<LabeledExample>, TaskError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let ex = LabeledExample::from_record(&line).map_err(|message| TaskError::Parse { line: i + 1, message })?;
        ex.validate().map_err(|e| TaskError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn read_dataset_file(path: impl AsRef<std::path::Path>) -> Result<Vec<LabeledExample>, TaskError> {
    let f = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(f))
}
