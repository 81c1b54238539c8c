use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::grammar::{builtin, DerivationTree, Grammar, GrammarId, NonTerminal, Sampler, SamplerConfig};
use crate::span::Span;

use super::{LabeledExample, NounConstruction, SpanKey, SpanMap, SplitSpec, Splits, TaskError, TaskId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassificationTask {
    MainAux,
    SubjectNoun,
}

impl ClassificationTask {
    pub fn grammar_id(self) -> GrammarId {
        match self {
            ClassificationTask::MainAux => GrammarId::MainAux,
            ClassificationTask::SubjectNoun => GrammarId::SubjectNoun,
        }
    }
}

impl FromStr for ClassificationTask {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "main_aux" => Ok(ClassificationTask::MainAux),
            "subject_noun" => Ok(ClassificationTask::SubjectNoun),
            _ => Err(TaskError::UnknownTask(s.to_string())),
        }
    }
}

impl fmt::Display for ClassificationTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.grammar_id().as_str())
    }
}

/// How a sampled derivation can be used.
#[derive(Clone, Debug, PartialEq)]
pub enum TreeLabel {
    /// Hierarchical and linear rules agree: eligible for train/dev.
    Simple(LabeledExample),
    /// The rules disagree on the construction the generalization set probes.
    Generalization(LabeledExample),
    /// Not usable by this task (e.g. a mixed compound-possessive subject).
    Unusable,
}

struct Symbols {
    root_children: [NonTerminal; 2],
    inner: NonTerminal,
    category: Vec<NonTerminal>,
    extra: Vec<NonTerminal>,
}

impl Symbols {
    fn resolve(task: ClassificationTask, g: &Grammar) -> Result<Self, TaskError> {
        Ok(match task {
            ClassificationTask::MainAux => Symbols {
                root_children: [g.require("NP_M")?, g.require("VP_M")?],
                inner: g.require("RC")?,
                category: vec![g.require("Aux")?],
                extra: Vec::new(),
            },
            ClassificationTask::SubjectNoun => Symbols {
                root_children: [g.require("NP_M")?, g.require("VP")?],
                inner: g.require("MNom")?,
                category: vec![g.require("N")?, g.require("NS")?, g.require("Nadj+MN")?],
                extra: vec![g.require("Poss")?, g.require("Nadj+MN")?],
            },
        })
    }
}

/// Positions of every word dominated by a node labeled with one of `cats`.
fn category_positions(tree: &DerivationTree, cats: &[NonTerminal]) -> Vec<usize> {
    let mut out: Vec<usize> = cats
        .iter()
        .flat_map(|c| tree.find(*c))
        .flat_map(|node| node.span().indices())
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn child(tree: &DerivationTree, nt: NonTerminal) -> Option<&DerivationTree> {
    tree.children().iter().find(|c| c.symbol() == Some(nt))
}

/// Reads the task label of a derivation off its tree.
pub fn label_tree(task: ClassificationTask, g: &Grammar, tree: &DerivationTree) -> Result<TreeLabel, TaskError> {
    let sym = Symbols::resolve(task, g)?;
    let words = tree.words(g);
    let (Some(subject), Some(predicate)) = (child(tree, sym.root_children[0]), child(tree, sym.root_children[1]))
    else {
        return Ok(TreeLabel::Unusable);
    };

    match task {
        ClassificationTask::MainAux => {
            let aux = sym.category[0];
            let Some(main) = child(predicate, aux).map(|n| n.span().start) else {
                return Ok(TreeLabel::Unusable);
            };
            let first = category_positions(tree, &sym.category)[0];
            let mut spans = SpanMap::default();
            if first == main {
                return Ok(TreeLabel::Simple(LabeledExample::one_hot(
                    words,
                    main,
                    TaskId::MainAux,
                    spans,
                )));
            }
            // The earlier auxiliary must sit inside a relative clause on the subject.
            let in_subject_rc = subject.find(sym.inner).iter().any(|rc| rc.span().contains(first));
            if !in_subject_rc {
                return Ok(TreeLabel::Unusable);
            }
            spans.insert(SpanKey::DistractorLinear, Span::single(first));
            Ok(TreeLabel::Generalization(LabeledExample::one_hot(
                words,
                main,
                TaskId::MainAux,
                spans,
            )))
        }
        ClassificationTask::SubjectNoun => {
            let Some(mnom) = subject.find(sym.inner).first().copied() else {
                return Ok(TreeLabel::Unusable);
            };
            let nouns_in_subject = category_positions(mnom, &sym.category);
            let Some(&head) = nouns_in_subject.last() else {
                return Ok(TreeLabel::Unusable);
            };
            let first = category_positions(tree, &sym.category)[0];
            let possessive = mnom.contains(sym.extra[0]);
            let compound = mnom.contains(sym.extra[1]);
            let mut spans = SpanMap::default();
            match (possessive, compound) {
                (false, false) if first == head => Ok(TreeLabel::Simple(LabeledExample::one_hot(
                    words,
                    head,
                    TaskId::SubjectNoun(None),
                    spans,
                ))),
                (true, false) | (false, true) if first != head => {
                    let construction = if possessive {
                        NounConstruction::Possessive
                    } else {
                        NounConstruction::Compound
                    };
                    spans.insert(SpanKey::DistractorLinear, Span::single(first));
                    Ok(TreeLabel::Generalization(LabeledExample::one_hot(
                        words,
                        head,
                        TaskId::SubjectNoun(Some(construction)),
                        spans,
                    )))
                }
                _ => Ok(TreeLabel::Unusable),
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bucket {
    Train,
    Dev,
    Gen,
}

/// Builds train/dev/gen splits for a classification task from its shipped
/// grammar.
pub fn build_classification_dataset(task: ClassificationTask, split: &SplitSpec) -> Result<Splits, TaskError> {
    let g = builtin(task.grammar_id());
    build_classification_dataset_with(task, &g, split, &SamplerConfig::with_seed(split.seed))
}

/// Same as [`build_classification_dataset`] with a caller-supplied grammar
/// and sampler settings. The grammar must use the nonterminal names of the
/// shipped grammar for `task`.
pub fn build_classification_dataset_with(
    task: ClassificationTask,
    g: &Grammar,
    split: &SplitSpec,
    sampler_cfg: &SamplerConfig,
) -> Result<Splits, TaskError> {
    split.check()?;
    let mut sampler = Sampler::new(g, sampler_cfg)?;

    let compound_quota = split.gen_n.div_ceil(2);
    let possessive_quota = split.gen_n / 2;
    let mut compound_count = 0;
    let mut possessive_count = 0;

    let total = split.train_n + split.dev_n + split.gen_n;
    let max_attempts = 200 * total + 10_000;
    let mut owner: HashMap<String, Bucket> = HashMap::new();
    let mut out = Splits::default();
    let mut attempts = 0;

    while out.train.len() + out.dev.len() + out.gen.len() < total {
        if attempts == max_attempts {
            let (name, wanted, got) = if out.train.len() < split.train_n {
                ("train", split.train_n, out.train.len())
            } else if out.dev.len() < split.dev_n {
                ("dev", split.dev_n, out.dev.len())
            } else {
                ("gen", split.gen_n, out.gen.len())
            };
            return Err(TaskError::Unattainable {
                split: name.into(),
                wanted,
                got,
                attempts,
            });
        }
        attempts += 1;

        let tree = sampler.sample()?;
        let (bucket, ex) = match label_tree(task, g, &tree)? {
            TreeLabel::Simple(ex) => {
                if out.train.len() < split.train_n {
                    (Bucket::Train, ex)
                } else if out.dev.len() < split.dev_n {
                    (Bucket::Dev, ex)
                } else {
                    continue;
                }
            }
            TreeLabel::Generalization(ex) => {
                if out.gen.len() >= split.gen_n {
                    continue;
                }
                match ex.task {
                    TaskId::SubjectNoun(Some(NounConstruction::Compound)) => {
                        if compound_count == compound_quota {
                            continue;
                        }
                    }
                    TaskId::SubjectNoun(Some(NounConstruction::Possessive)) if possessive_count == possessive_quota => {
                        continue;
                    }
                    _ => {}
                }
                (Bucket::Gen, ex)
            }
            TreeLabel::Unusable => continue,
        };

        if split.dedupe_across_splits {
            let key = ex.sentence();
            match owner.get(&key) {
                Some(b) if *b != bucket => continue,
                Some(_) => {}
                None => {
                    owner.insert(key, bucket);
                }
            }
        }

        match bucket {
            Bucket::Train => out.train.push(ex),
            Bucket::Dev => out.dev.push(ex),
            Bucket::Gen => {
                match ex.task {
                    TaskId::SubjectNoun(Some(NounConstruction::Compound)) => compound_count += 1,
                    TaskId::SubjectNoun(Some(NounConstruction::Possessive)) => possessive_count += 1,
                    _ => {}
                }
                out.gen.push(ex);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> SplitSpec {
        SplitSpec::new(300, 100, 100, 5)
    }

    #[test]
    fn main_aux_labels_mark_main_clause_auxiliary() {
        let splits = build_classification_dataset(ClassificationTask::MainAux, &small()).unwrap();
        let aux = ["can", "will", "would", "could"];
        for ex in splits.train.iter().chain(&splits.dev) {
            let target = ex.labeled_span().unwrap().start;
            let first = ex.words.iter().position(|w| aux.contains(&w.as_str())).unwrap();
            assert_eq!(target, first, "{}", ex.sentence());
        }
        for ex in &splits.gen {
            let target = ex.labeled_span().unwrap().start;
            let first = ex.words.iter().position(|w| aux.contains(&w.as_str())).unwrap();
            assert!(first < target);
            assert_eq!(ex.spans.get(SpanKey::DistractorLinear), Some(Span::single(first)));
            assert!(ex.words.iter().any(|w| w == "who" || w == "that"));
        }
    }

    #[test]
    fn table_one_shapes_with_overridden_lexicon() {
        // A user grammar with the same nonterminal names; the sampler can
        // only produce the illustrative words.
        let text = "S -> NP_M VP_M\n\
                    NP_M -> Det N | Det N RC\n\
                    VP_M -> Aux VI\n\
                    RC -> Rel Aux VI\n\
                    Det -> the\nN -> cat\nRel -> that\nAux -> can | will\nVI -> meow | sleep\n";
        let g = Grammar::from_text(text).unwrap();
        let mut s = Sampler::new(&g, &SamplerConfig::with_seed(1)).unwrap();
        let mut seen_simple = false;
        let mut seen_gen = false;
        for _ in 0..500 {
            let tree = s.sample().unwrap();
            let sentence = tree.words(&g).join(" ");
            match label_tree(ClassificationTask::MainAux, &g, &tree).unwrap() {
                TreeLabel::Simple(ex) if sentence == "the cat will sleep" => {
                    assert_eq!(ex.labels, [0, 0, 1, 0]);
                    seen_simple = true;
                }
                TreeLabel::Generalization(ex) if sentence == "the cat that can meow will sleep" => {
                    assert_eq!(ex.labeled_span(), Some(Span::single(5)));
                    assert_eq!(ex.spans.get(SpanKey::DistractorLinear), Some(Span::single(3)));
                    seen_gen = true;
                }
                _ => {}
            }
        }
        assert!(seen_simple && seen_gen);
    }

    #[test]
    fn possessive_shape_labels_head() {
        let text = "S -> NP_M VP\n\
                    NP_M -> Det MNom\n\
                    VP -> Aux VI\n\
                    MNom -> MNom2\n\
                    MNom2 -> N | NS Poss MNom2 | Nadj+MN\n\
                    Nadj+MN -> queen bee\n\
                    NS -> queen\nPoss -> 's\nN -> bee\n\
                    Det -> the\nAux -> can\nVI -> sting\n";
        let g = Grammar::from_text(text).unwrap();
        let mut s = Sampler::new(&g, &SamplerConfig::with_seed(2)).unwrap();
        let mut seen = HashSet::new();
        for _ in 0..200 {
            let tree = s.sample().unwrap();
            let sentence = tree.words(&g).join(" ");
            if let TreeLabel::Generalization(ex) = label_tree(ClassificationTask::SubjectNoun, &g, &tree).unwrap() {
                match sentence.as_str() {
                    "the queen 's bee can sting" => {
                        assert_eq!(ex.labeled_span(), Some(Span::single(3)));
                        assert_eq!(ex.task, TaskId::SubjectNoun(Some(NounConstruction::Possessive)));
                        seen.insert("poss");
                    }
                    "the queen bee can sting" => {
                        assert_eq!(ex.labeled_span(), Some(Span::single(2)));
                        assert_eq!(ex.spans.get(SpanKey::DistractorLinear), Some(Span::single(1)));
                        assert_eq!(ex.task, TaskId::SubjectNoun(Some(NounConstruction::Compound)));
                        seen.insert("cpd");
                    }
                    _ => {}
                }
            }
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn subject_noun_gen_is_split_evenly() {
        let spec = SplitSpec::new(50, 20, 41, 9);
        let splits = build_classification_dataset(ClassificationTask::SubjectNoun, &spec).unwrap();
        assert_eq!(splits.gen_subset(NounConstruction::Compound).len(), 21);
        assert_eq!(splits.gen_subset(NounConstruction::Possessive).len(), 20);
        for ex in &splits.gen {
            let head = ex.labeled_span().unwrap();
            let linear = ex.spans.get(SpanKey::DistractorLinear).unwrap();
            assert!(linear.start < head.start);
        }
    }

    #[test]
    fn splits_do_not_share_sentences() {
        let splits = build_classification_dataset(ClassificationTask::MainAux, &small()).unwrap();
        let train: HashSet<String> = splits.train.iter().map(|e| e.sentence()).collect();
        for ex in splits.dev.iter().chain(&splits.gen) {
            assert!(!train.contains(&ex.sentence()));
        }
    }

    #[test]
    fn unattainable_counts_error() {
        let g = Grammar::from_text(
            "S -> NP_M VP_M\nNP_M -> Det N\nVP_M -> Aux VI\nRC -> Rel Aux VI\n\
             Det -> the\nN -> cat\nRel -> that\nAux -> can\nVI -> sleep\n",
        )
        .unwrap();
        let err = build_classification_dataset_with(
            ClassificationTask::MainAux,
            &g,
            &SplitSpec::new(1, 1, 1, 0),
            &SamplerConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TaskError::Unattainable { .. }), "{err}");
    }

    #[test]
    fn zero_counts_rejected() {
        let err = build_classification_dataset(ClassificationTask::MainAux, &SplitSpec::new(0, 1, 1, 0));
        assert!(matches!(err, Err(TaskError::EmptySplit)));
    }
}
