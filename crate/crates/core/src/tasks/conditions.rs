//! Agreement (A1–A4) and reflexive (R1–R8) condition datasets.
//!
//! Sentences come from fixed templates whose slots are filled from the
//! lexicons of the agreement and reflexive grammars, so every span is known
//! at construction time. Nouns listed under both number categories are left
//! out, which keeps every match/mismatch flag unambiguous.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grammar::{builtin, Grammar, GrammarId};
use crate::span::Span;

use super::{LabeledExample, SpanKey, SpanMap, TaskError, TaskId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConditionId {
    A1,
    A2,
    A3,
    A4,
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
}

impl ConditionId {
    pub const ALL: [ConditionId; 12] = [
        ConditionId::A1,
        ConditionId::A2,
        ConditionId::A3,
        ConditionId::A4,
        ConditionId::R1,
        ConditionId::R2,
        ConditionId::R3,
        ConditionId::R4,
        ConditionId::R5,
        ConditionId::R6,
        ConditionId::R7,
        ConditionId::R8,
    ];

    pub fn is_agreement(self) -> bool {
        matches!(
            self,
            ConditionId::A1 | ConditionId::A2 | ConditionId::A3 | ConditionId::A4
        )
    }

    pub fn as_str(self) -> &'static str {
        const NAMES: [&str; 12] = ["A1", "A2", "A3", "A4", "R1", "R2", "R3", "R4", "R5", "R6", "R7", "R8"];
        NAMES[self as usize]
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionId {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConditionId::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| TaskError::UnknownTask(s.to_string()))
    }
}

/// Feature relation of a distractor to the trigger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TriState {
    Match,
    Mismatch,
    Absent,
}

/// Structural definition of a condition.
///
/// Agreement conditions have one distractor: inside a prepositional
/// modifier of the subject (`pp_match`) or inside a subject relative clause
/// (`rc_match`). Reflexive conditions may carry an object distractor and a
/// relative-clause distractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConditionSpec {
    pub id: ConditionId,
    pub has_relative_clause: bool,
    pub has_object_distractor: bool,
    pub object_match: TriState,
    pub rc_match: TriState,
    pub pp_match: TriState,
}

impl ConditionSpec {
    pub fn canonical(id: ConditionId) -> Self {
        use ConditionId::*;
        use TriState::*;
        let (rc, obj, object_match, rc_match, pp_match) = match id {
            A1 => (false, false, Absent, Absent, Match),
            A2 => (false, false, Absent, Absent, Mismatch),
            A3 => (true, false, Absent, Match, Absent),
            A4 => (true, false, Absent, Mismatch, Absent),
            R1 => (false, true, Match, Absent, Absent),
            R2 => (false, true, Mismatch, Absent, Absent),
            R3 => (true, false, Absent, Match, Absent),
            R4 => (true, false, Absent, Mismatch, Absent),
            R5 => (true, true, Match, Match, Absent),
            R6 => (true, true, Match, Mismatch, Absent),
            R7 => (true, true, Mismatch, Match, Absent),
            R8 => (true, true, Mismatch, Mismatch, Absent),
        };
        Self {
            id,
            has_relative_clause: rc,
            has_object_distractor: obj,
            object_match,
            rc_match,
            pp_match,
        }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let fail = |message: &str| {
            Err(TaskError::InconsistentCondition {
                id: self.id.to_string(),
                message: message.to_string(),
            })
        };
        if self.has_relative_clause != (self.rc_match != TriState::Absent) {
            return fail("rc_match must be set exactly when a relative clause is present");
        }
        if self.has_object_distractor != (self.object_match != TriState::Absent) {
            return fail("object_match must be set exactly when an object distractor is present");
        }
        if self.id.is_agreement() {
            if self.has_object_distractor {
                return fail("agreement conditions have no object distractor");
            }
            if self.has_relative_clause == (self.pp_match != TriState::Absent) {
                return fail("agreement conditions have exactly one of a PP or an RC distractor");
            }
        } else if self.pp_match != TriState::Absent {
            return fail("reflexive conditions have no PP distractor");
        }
        if *self != Self::canonical(self.id) {
            return fail("flags do not match the condition's definition");
        }
        Ok(())
    }

    /// Number of distractor candidates.
    pub fn distractor_count(&self) -> usize {
        [self.object_match, self.rc_match, self.pp_match]
            .iter()
            .filter(|m| **m != TriState::Absent)
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Number {
    Singular,
    Plural,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gender {
    Masculine,
    Feminine,
}

/// Closed word lists for condition templates.
#[derive(Clone, Debug)]
pub struct Lexicon {
    det: Vec<String>,
    prep: Vec<String>,
    rel: Vec<String>,
    modal: Vec<String>,
    vi: Vec<String>,
    vt: Vec<String>,
    aux: Vec<String>,
    nouns_sg: Vec<String>,
    nouns_pl: Vec<String>,
    aux_sg: String,
    aux_pl: String,
    nouns_m: Vec<String>,
    nouns_f: Vec<String>,
    refl_m: String,
    refl_f: String,
    number: HashMap<String, Number>,
    gender: HashMap<String, Gender>,
}

fn owned(v: Vec<&str>) -> Vec<String> {
    v.into_iter().map(String::from).collect()
}

fn first_word(g: &Grammar, name: &str) -> Result<String, TaskError> {
    g.lexicon(name)?
        .first()
        .map(|w| w.to_string())
        .ok_or_else(|| TaskError::Invalid(format!("`{name}` has no single-word alternative")))
}

impl Lexicon {
    pub fn from_grammars(agreement: &Grammar, reflexive: &Grammar) -> Result<Self, TaskError> {
        let sg = owned(agreement.lexicon("N_sg")?);
        let pl = owned(agreement.lexicon("N_pl")?);
        let nouns_sg: Vec<String> = sg.iter().filter(|w| !pl.contains(w)).cloned().collect();
        let nouns_pl: Vec<String> = pl.iter().filter(|w| !sg.contains(w)).cloned().collect();
        let m = owned(reflexive.lexicon("N_M")?);
        let f = owned(reflexive.lexicon("N_F")?);
        let nouns_m: Vec<String> = m.iter().filter(|w| !f.contains(w)).cloned().collect();
        let nouns_f: Vec<String> = f.iter().filter(|w| !m.contains(w)).cloned().collect();

        let mut number = HashMap::new();
        for w in &nouns_sg {
            number.insert(w.clone(), Number::Singular);
        }
        for w in &nouns_pl {
            number.insert(w.clone(), Number::Plural);
        }
        let mut gender = HashMap::new();
        for w in &nouns_m {
            gender.insert(w.clone(), Gender::Masculine);
        }
        for w in &nouns_f {
            gender.insert(w.clone(), Gender::Feminine);
        }

        Ok(Self {
            det: owned(agreement.lexicon("Det")?),
            prep: owned(agreement.lexicon("Prep")?),
            rel: owned(agreement.lexicon("Rel")?),
            modal: owned(agreement.lexicon("Modal")?),
            vi: owned(agreement.lexicon("VI")?),
            vt: owned(agreement.lexicon("VT")?),
            aux: owned(reflexive.lexicon("Aux")?),
            nouns_sg,
            nouns_pl,
            aux_sg: first_word(agreement, "Aux_sg")?,
            aux_pl: first_word(agreement, "Aux_pl")?,
            nouns_m,
            nouns_f,
            refl_m: first_word(reflexive, "Refl_M")?,
            refl_f: first_word(reflexive, "Refl_F")?,
            number,
            gender,
        })
    }

    pub fn builtin() -> Self {
        Self::from_grammars(&builtin(GrammarId::Agreement), &builtin(GrammarId::Reflexive))
            .expect("shipped grammars provide the condition lexicon")
    }

    pub fn number(&self, noun: &str) -> Option<Number> {
        self.number.get(noun).copied()
    }

    pub fn gender(&self, noun: &str) -> Option<Gender> {
        self.gender.get(noun).copied()
    }

    fn nouns_by_number(&self, n: Number) -> &[String] {
        match n {
            Number::Singular => &self.nouns_sg,
            Number::Plural => &self.nouns_pl,
        }
    }

    fn nouns_by_gender(&self, g: Gender) -> &[String] {
        match g {
            Gender::Masculine => &self.nouns_m,
            Gender::Feminine => &self.nouns_f,
        }
    }
}

/// Grammar that accepts the sentences of a condition.
///
/// Reflexive conditions and the PP agreement conditions use the shipped
/// grammars unchanged. The RC agreement conditions attach the relative
/// clause directly to the subject noun, which the shipped agreement grammar
/// only allows after a preposition, so the two direct-attachment
/// alternatives are appended.
pub fn condition_grammar(id: ConditionId) -> Grammar {
    match id {
        ConditionId::A3 | ConditionId::A4 => {
            let text = format!(
                "{}\nNP_sg_Agr -> Det N_sg RC_sg\nNP_pl_Agr -> Det N_pl RC_pl\n",
                GrammarId::Agreement.source()
            );
            Grammar::from_text(&text).expect("extended agreement grammar parses")
        }
        ConditionId::A1 | ConditionId::A2 => builtin(GrammarId::Agreement),
        _ => builtin(GrammarId::Reflexive),
    }
}

struct Builder {
    words: Vec<String>,
    spans: SpanMap,
}

impl Builder {
    fn new() -> Self {
        Self {
            words: Vec::new(),
            spans: SpanMap::default(),
        }
    }

    fn word(&mut self, w: &str) -> usize {
        self.words.push(w.to_string());
        self.words.len() - 1
    }

    fn noun_phrase(&mut self, det: &str, noun: &str, key: SpanKey) {
        let start = self.word(det);
        let head = self.word(noun);
        self.spans.insert(key, Span::single(head));
        self.spans.insert_phrase(key, Span::new(start, head + 1));
    }
}

fn pick<'a, R: Rng>(rng: &mut R, words: &'a [String]) -> &'a str {
    words.choose(rng).expect("non-empty word list")
}

/// A noun from `pool` distinct from every word in `used`.
fn pick_fresh<'a, R: Rng>(rng: &mut R, pool: &'a [String], used: &[&str]) -> &'a str {
    let choices: Vec<&String> = pool.iter().filter(|w| !used.contains(&w.as_str())).collect();
    choices.choose(rng).expect("lexicon has enough distinct nouns")
}

fn flip_number(n: Number) -> Number {
    match n {
        Number::Singular => Number::Plural,
        Number::Plural => Number::Singular,
    }
}

fn flip_gender(g: Gender) -> Gender {
    match g {
        Gender::Masculine => Gender::Feminine,
        Gender::Feminine => Gender::Masculine,
    }
}

fn agreement_example<R: Rng>(spec: &ConditionSpec, lex: &Lexicon, rng: &mut R) -> LabeledExample {
    let number = if rng.random_bool(0.5) {
        Number::Singular
    } else {
        Number::Plural
    };
    let subject = pick(rng, lex.nouns_by_number(number));
    let rel = if spec.has_relative_clause {
        spec.rc_match
    } else {
        spec.pp_match
    };
    let dn_number = if rel == TriState::Match {
        number
    } else {
        flip_number(number)
    };
    let distractor = pick_fresh(rng, lex.nouns_by_number(dn_number), &[subject]);

    let mut b = Builder::new();
    b.noun_phrase(pick(rng, &lex.det), subject, SpanKey::Trigger);
    if spec.has_relative_clause {
        b.word(pick(rng, &lex.rel));
        b.word(pick(rng, &lex.modal));
        b.word(pick(rng, &lex.vt));
        b.noun_phrase(pick(rng, &lex.det), distractor, SpanKey::DistractorRc);
    } else {
        b.word(pick(rng, &lex.prep));
        b.noun_phrase(pick(rng, &lex.det), distractor, SpanKey::DistractorPp);
    }
    let aux = match number {
        Number::Singular => &lex.aux_sg,
        Number::Plural => &lex.aux_pl,
    };
    let target = b.word(aux);
    b.word(pick(rng, &lex.vi));
    LabeledExample::one_hot(b.words, target, TaskId::Condition(spec.id), b.spans)
}

fn reflexive_example<R: Rng>(spec: &ConditionSpec, lex: &Lexicon, rng: &mut R) -> LabeledExample {
    let gender = if rng.random_bool(0.5) {
        Gender::Masculine
    } else {
        Gender::Feminine
    };
    let subject = pick(rng, lex.nouns_by_gender(gender));
    let with = |m: TriState| {
        if m == TriState::Match {
            gender
        } else {
            flip_gender(gender)
        }
    };

    let mut b = Builder::new();
    let mut used = vec![subject];
    b.noun_phrase(pick(rng, &lex.det), subject, SpanKey::Trigger);
    if spec.has_relative_clause {
        let noun = pick_fresh(rng, lex.nouns_by_gender(with(spec.rc_match)), &used);
        used.push(noun);
        b.word(pick(rng, &lex.rel));
        b.word(pick(rng, &lex.aux));
        b.word(pick(rng, &lex.vt));
        b.noun_phrase(pick(rng, &lex.det), noun, SpanKey::DistractorRc);
    }
    b.word(pick(rng, &lex.aux));
    b.word(pick(rng, &lex.vt));
    if spec.has_object_distractor {
        let noun = pick_fresh(rng, lex.nouns_by_gender(with(spec.object_match)), &used);
        b.noun_phrase(pick(rng, &lex.det), noun, SpanKey::DistractorObject);
        b.word("by");
    }
    let refl = match gender {
        Gender::Masculine => &lex.refl_m,
        Gender::Feminine => &lex.refl_f,
    };
    let target = b.word(refl);
    LabeledExample::one_hot(b.words, target, TaskId::Condition(spec.id), b.spans)
}

/// Builds `n` examples of a condition from the shipped lexicons.
pub fn build_condition_dataset(spec: &ConditionSpec, n: usize, seed: u64) -> Result<Vec<LabeledExample>, TaskError> {
    build_condition_dataset_with(spec, &Lexicon::builtin(), n, seed)
}

pub fn build_condition_dataset_with(
    spec: &ConditionSpec,
    lex: &Lexicon,
    n: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>, TaskError> {
    spec.validate()?;
    // Separate streams per condition so datasets do not depend on each other.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(spec.id as u64);
    Ok((0..n)
        .map(|_| {
            if spec.id.is_agreement() {
                agreement_example(spec, lex, &mut rng)
            } else {
                reflexive_example(spec, lex, &mut rng)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_specs_validate() {
        for id in ConditionId::ALL {
            ConditionSpec::canonical(id).validate().unwrap();
        }
        assert_eq!(ConditionSpec::canonical(ConditionId::R5).distractor_count(), 2);
        assert_eq!(ConditionSpec::canonical(ConditionId::A3).distractor_count(), 1);
    }

    #[test]
    fn inconsistent_specs_rejected() {
        let mut spec = ConditionSpec::canonical(ConditionId::R1);
        spec.rc_match = TriState::Match;
        assert!(matches!(spec.validate(), Err(TaskError::InconsistentCondition { .. })));
        let mut spec = ConditionSpec::canonical(ConditionId::R5);
        spec.object_match = TriState::Mismatch;
        assert!(spec.validate().is_err());
        let mut spec = ConditionSpec::canonical(ConditionId::A1);
        spec.pp_match = TriState::Absent;
        assert!(spec.validate().is_err());
        assert!(build_condition_dataset(&spec, 1, 0).is_err());
    }

    #[test]
    fn agreement_shapes() {
        let a2 = build_condition_dataset(&ConditionSpec::canonical(ConditionId::A2), 50, 1).unwrap();
        let lex = Lexicon::builtin();
        for ex in &a2 {
            assert_eq!(ex.words.len(), 7);
            let t = ex.spans.get(SpanKey::Trigger).unwrap().start;
            let d = ex.spans.get(SpanKey::DistractorPp).unwrap().start;
            assert_eq!((t, d), (1, 4));
            assert_ne!(lex.number(&ex.words[t]), lex.number(&ex.words[d]));
            assert_eq!(ex.labeled_span(), Some(Span::single(5)));
            assert!(ex.words[5] == "does" || ex.words[5] == "do");
        }
        let a3 = build_condition_dataset(&ConditionSpec::canonical(ConditionId::A3), 50, 1).unwrap();
        for ex in &a3 {
            let d = ex.spans.get(SpanKey::DistractorRc).unwrap().start;
            assert_eq!(d, 6);
            assert_eq!(ex.spans.phrase(SpanKey::DistractorRc), Some(Span::new(5, 7)));
        }
    }

    #[test]
    fn reflexive_shapes() {
        let r5 = build_condition_dataset(&ConditionSpec::canonical(ConditionId::R5), 50, 2).unwrap();
        let lex = Lexicon::builtin();
        for ex in &r5 {
            let t = ex.spans.get(SpanKey::Trigger).unwrap().start;
            let rc = ex.spans.get(SpanKey::DistractorRc).unwrap().start;
            let obj = ex.spans.get(SpanKey::DistractorObject).unwrap().start;
            let g = lex.gender(&ex.words[t]);
            assert_eq!(lex.gender(&ex.words[rc]), g);
            assert_eq!(lex.gender(&ex.words[obj]), g);
            assert_eq!(ex.words[ex.words.len() - 2], "by");
        }
        let r3 = build_condition_dataset(&ConditionSpec::canonical(ConditionId::R3), 20, 2).unwrap();
        for ex in &r3 {
            assert!(ex.spans.get(SpanKey::DistractorObject).is_none());
            assert_ne!(ex.words[ex.words.len() - 2], "by");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = build_condition_dataset(&ConditionSpec::canonical(ConditionId::R1), 10, 4).unwrap();
        let b = build_condition_dataset(&ConditionSpec::canonical(ConditionId::R1), 10, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ambiguous_nouns_are_excluded() {
        let lex = Lexicon::builtin();
        assert_eq!(lex.number("fish"), None);
        assert_eq!(lex.number("cat"), Some(Number::Singular));
        assert_eq!(lex.gender("princess"), Some(Gender::Feminine));
    }
}
