use proptest::prelude::*;
use sesame_core::grammar::{builtin, DerivationTree, GrammarId, Sampler, SamplerConfig};
use sesame_core::tasks::{condition_grammar, ConditionId};

fn check_spans(t: &DerivationTree) {
    let mut cursor = t.span().start;
    for c in t.children() {
        assert_eq!(c.span().start, cursor);
        cursor = c.span().end;
        check_spans(c);
    }
    if !t.children().is_empty() {
        assert_eq!(cursor, t.span().end);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn samples_are_in_the_language(seed in any::<u64>(), gi in 0usize..4, cap in 1usize..6) {
        let g = builtin(GrammarId::ALL[gi]);
        let cfg = SamplerConfig { seed, max_recursion_depth: cap, production_weights: None };
        let mut s = Sampler::new(&g, &cfg).unwrap();
        for _ in 0..8 {
            let t = s.sample().unwrap();
            let words = t.words(&g);
            prop_assert!(g.recognize(&words), "{}", words.join(" "));
            check_spans(&t);
            prop_assert_eq!(t.span().len(), words.len());
            for nt in g.nonterminals() {
                prop_assert!(t.self_nesting(nt) <= cap, "{} nested {} > {}", g.name(nt), t.self_nesting(nt), cap);
            }
        }
    }

    #[test]
    fn sampling_is_a_function_of_seed(seed in any::<u64>()) {
        let g = builtin(GrammarId::MainAux);
        let run = || {
            let mut s = Sampler::new(&g, &SamplerConfig::with_seed(seed)).unwrap();
            (0..5).map(|_| s.sample().unwrap().words(&g).join(" ")).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn text_round_trip_keeps_samples_recognized(seed in any::<u64>(), gi in 0usize..4) {
        let g = builtin(GrammarId::ALL[gi]);
        let g2 = sesame_core::grammar::Grammar::from_text(&g.to_text()).unwrap();
        let t = Sampler::new(&g, &SamplerConfig::with_seed(seed)).unwrap().sample().unwrap();
        prop_assert!(g2.recognize(&t.words(&g)));
    }
}

#[test]
fn condition_grammars_accept_their_samples() {
    for id in ConditionId::ALL {
        let g = condition_grammar(id);
        let mut s = Sampler::new(&g, &SamplerConfig::with_seed(11)).unwrap();
        for _ in 0..50 {
            let w = s.sample().unwrap().words(&g);
            assert!(g.recognize(&w), "{id}: {}", w.join(" "));
        }
    }
}
