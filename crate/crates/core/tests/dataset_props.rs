mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use sesame_core::grammar::{builtin, Grammar, GrammarId, Symbol};
use sesame_core::tasks::{
    build_classification_dataset, build_condition_dataset, condition_grammar, read_dataset, write_dataset,
    ClassificationTask, ConditionId, ConditionSpec, LabeledExample, NounConstruction, SpanKey, SpanMap, SplitSpec,
    TaskId, TriState,
};
use sesame_core::Span;

/// Every terminal reachable in one step from the named categories.
fn words_of(g: &Grammar, cats: &[&str]) -> HashSet<String> {
    let mut out = HashSet::new();
    for c in cats {
        let nt = g.nonterminal(c).unwrap();
        for rhs in g.productions(nt) {
            for sym in rhs {
                if let Symbol::T(_) = sym {
                    out.insert(g.symbol_name(*sym).to_string());
                }
            }
        }
    }
    out
}

fn first_in(words: &[String], set: &HashSet<String>) -> Option<usize> {
    words.iter().position(|w| set.contains(w))
}

fn label_index(ex: &LabeledExample) -> usize {
    ex.labels.iter().position(|&l| l == 1).unwrap()
}

#[test]
fn main_aux_linear_rule_separates_splits() {
    let g = builtin(GrammarId::MainAux);
    let aux = words_of(&g, &["Aux"]);
    let s = build_classification_dataset(ClassificationTask::MainAux, &SplitSpec::new(300, 80, 80, 5)).unwrap();
    for ex in s.train.iter().chain(&s.dev) {
        assert_eq!(first_in(&ex.words, &aux), Some(label_index(ex)), "{}", ex.sentence());
    }
    for ex in &s.gen {
        assert_ne!(first_in(&ex.words, &aux), Some(label_index(ex)), "{}", ex.sentence());
        assert!(ex.spans.get(SpanKey::DistractorLinear).is_some());
    }
    for ex in s.train.iter().chain(&s.dev).chain(&s.gen) {
        assert!(g.recognize(&ex.words));
        ex.validate().unwrap();
    }
}

#[test]
fn subject_noun_gen_heads_differ_from_first_noun() {
    let g = builtin(GrammarId::SubjectNoun);
    let nouns = words_of(&g, &["N", "NS", "Nadj+MN"]);
    let s = build_classification_dataset(ClassificationTask::SubjectNoun, &SplitSpec::new(300, 80, 80, 9)).unwrap();
    for ex in s.train.iter().chain(&s.dev) {
        assert_eq!(first_in(&ex.words, &nouns), Some(label_index(ex)), "{}", ex.sentence());
    }
    let compound = s.gen_subset(NounConstruction::Compound);
    let possessive = s.gen_subset(NounConstruction::Possessive);
    assert_eq!(compound.len() + possessive.len(), s.gen.len());
    assert_eq!(compound.len(), 40);
    for ex in &s.gen {
        assert_ne!(first_in(&ex.words, &nouns), Some(label_index(ex)), "{}", ex.sentence());
    }
    for ex in &possessive {
        assert!(ex.words.iter().any(|w| w == "'s"));
    }
    for ex in s.train.iter().chain(&s.dev).chain(&s.gen) {
        assert!(g.recognize(&ex.words));
    }
}

#[test]
fn dedupe_keeps_splits_disjoint() {
    let s = build_classification_dataset(ClassificationTask::MainAux, &SplitSpec::new(300, 80, 80, 1)).unwrap();
    let set = |v: &[LabeledExample]| v.iter().map(|e| e.sentence()).collect::<HashSet<_>>();
    let (a, b, c) = (set(&s.train), set(&s.dev), set(&s.gen));
    assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
}

#[test]
fn condition_examples_match_their_spec() {
    for id in ConditionId::ALL {
        let spec = ConditionSpec::canonical(id);
        let g = condition_grammar(id);
        for ex in build_condition_dataset(&spec, 60, 2).unwrap() {
            assert!(g.recognize(&ex.words), "{id}: {}", ex.sentence());
            ex.validate().unwrap();
            assert_eq!(ex.task, TaskId::Condition(id));
            let distractors = SpanKey::DISTRACTORS
                .iter()
                .filter(|k| ex.spans.get(**k).is_some())
                .count();
            assert_eq!(distractors, spec.distractor_count(), "{id}");
            assert_eq!(ex.spans.get(SpanKey::DistractorRc).is_some(), spec.has_relative_clause);
            let trigger = ex.spans.get(SpanKey::Trigger).unwrap();
            let target = ex.spans.get(SpanKey::Target).unwrap();
            assert!(trigger.end <= target.start);
            if spec.has_object_distractor {
                assert_ne!(spec.object_match, TriState::Absent);
            }
        }
    }
}

#[test]
fn condition_generation_is_deterministic() {
    let spec = ConditionSpec::canonical(ConditionId::R5);
    let a = build_condition_dataset(&spec, 100, 4).unwrap();
    let b = build_condition_dataset(&spec, 100, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 100);
}

fn example() -> impl Strategy<Value = LabeledExample> {
    (
        prop::collection::vec("[a-z']{1,9}", 1..12),
        any::<prop::sample::Index>(),
        0usize..4,
    )
        .prop_map(|(words, idx, task)| {
            let target = idx.index(words.len());
            let task = [
                TaskId::MainAux,
                TaskId::SubjectNoun(Some(NounConstruction::Possessive)),
                TaskId::NthToken(7),
                TaskId::Condition(ConditionId::R7),
            ][task];
            let mut spans = SpanMap::default();
            if target > 0 {
                spans.insert(SpanKey::Trigger, Span::single(0));
                spans.insert_phrase(SpanKey::Trigger, Span::new(0, 1));
            }
            LabeledExample::one_hot(words, target, task, spans)
        })
}

proptest! {
    #[test]
    fn records_round_trip(examples in prop::collection::vec(example(), 0..20)) {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &examples).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        prop_assert_eq!(back, examples);
    }
}
