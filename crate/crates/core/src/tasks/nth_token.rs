use std::collections::{BTreeMap, HashSet};
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabeledExample, SpanMap, SplitSpec, Splits, TaskError, TaskId};

/// Inclusive bounds on a sentence's token count, counting the leading
/// classifier token and the trailing separator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthFilter {
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for LengthFilter {
    fn default() -> Self {
        Self {
            min_tokens: 10,
            max_tokens: 30,
        }
    }
}

/// Index of the word whose first subword is token `n`, where token 1 is the
/// classifier token and the first word starts at token 2.
pub fn nth_token_label<S: AsRef<str>>(words: &[S], token_len: impl Fn(&str) -> usize, n: usize) -> Option<usize> {
    let mut position = 2;
    for (i, w) in words.iter().enumerate() {
        if position == n {
            return Some(i);
        }
        if position > n {
            return None;
        }
        position += token_len(w.as_ref()).max(1);
    }
    None
}

/// Builds one train/dev/gen split per `n` over a plain-text corpus.
///
/// Corpus sentences are whitespace-split into words, length filtered,
/// shuffled once by seed and apportioned to the splits; every `n` shares
/// the same apportionment. A sentence without a word starting at token `n`
/// is left out of that `n`'s dataset. When the corpus holds fewer sentences
/// than requested, the splits shrink in proportion.
pub fn build_nth_token_dataset<S: AsRef<str>>(
    corpus: &[S],
    token_len: impl Fn(&str) -> usize,
    ns: RangeInclusive<usize>,
    filter: LengthFilter,
    split: &SplitSpec,
) -> Result<BTreeMap<usize, Splits>, TaskError> {
    split.check()?;
    let mut seen = HashSet::new();
    let mut sentences: Vec<Vec<String>> = Vec::new();
    for line in corpus {
        let words: Vec<String> = line.as_ref().split_whitespace().map(String::from).collect();
        if words.is_empty() {
            continue;
        }
        let tokens = 2 + words.iter().map(|w| token_len(w).max(1)).sum::<usize>();
        if tokens < filter.min_tokens || tokens > filter.max_tokens {
            continue;
        }
        if split.dedupe_across_splits && !seen.insert(words.join(" ")) {
            continue;
        }
        sentences.push(words);
    }
    if sentences.is_empty() {
        return Err(TaskError::EmptyCorpus);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
    sentences.shuffle(&mut rng);

    let requested = split.train_n + split.dev_n + split.gen_n;
    let available = sentences.len().min(requested);
    let train_n = split.train_n * available / requested;
    let dev_n = split.dev_n * available / requested;
    let gen_n = available - train_n - dev_n;
    let (train, rest) = sentences[..available].split_at(train_n);
    let (dev, gen) = rest.split_at(dev_n);
    debug_assert_eq!(gen.len(), gen_n);

    let label = |part: &[Vec<String>], n: usize| -> Vec<LabeledExample> {
        part.iter()
            .filter_map(|words| {
                nth_token_label(words, &token_len, n)
                    .map(|i| LabeledExample::one_hot(words.clone(), i, TaskId::NthToken(n), SpanMap::default()))
            })
            .collect()
    };

    Ok(ns
        .map(|n| {
            (
                n,
                Splits {
                    train: label(train, n),
                    dev: label(dev, n),
                    gen: label(gen, n),
                },
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(_: &str) -> usize {
        1
    }

    #[test]
    fn second_token_is_first_word() {
        let words = ["the", "cat", "will", "sleep"];
        assert_eq!(nth_token_label(&words, one, 2), Some(0));
        assert_eq!(nth_token_label(&words, one, 5), Some(3));
        assert_eq!(nth_token_label(&words, one, 6), None);
    }

    #[test]
    fn ninth_token_of_nine_is_last_word() {
        // [CLS] + 8 word tokens = 9 tokens before [SEP].
        let words = ["a", "b", "c", "d", "e", "f", "g", "h"];
        assert_eq!(nth_token_label(&words, one, 9), Some(7));
    }

    #[test]
    fn continuation_pieces_have_no_label() {
        let len = |w: &str| if w == "unbelievable" { 3 } else { 1 };
        let words = ["an", "unbelievable", "story"];
        assert_eq!(nth_token_label(&words, len, 3), Some(1));
        assert_eq!(nth_token_label(&words, len, 4), None);
        assert_eq!(nth_token_label(&words, len, 6), Some(2));
    }

    #[test]
    fn empty_after_filter_is_an_error() {
        let corpus = ["too short"];
        let err = build_nth_token_dataset(
            &corpus,
            one,
            2..=9,
            LengthFilter::default(),
            &SplitSpec::new(1, 1, 1, 0),
        );
        assert!(matches!(err, Err(TaskError::EmptyCorpus)));
    }

    #[test]
    fn splits_are_proportional_and_disjoint() {
        let corpus: Vec<String> = (0..100).map(|i| format!("w{i} a b c d e f g h i j")).collect();
        let out = build_nth_token_dataset(
            &corpus,
            one,
            2..=9,
            LengthFilter::default(),
            &SplitSpec::new(8, 1, 1, 3),
        )
        .unwrap();
        assert_eq!(out.len(), 8);
        let s = &out[&2];
        assert_eq!((s.train.len(), s.dev.len(), s.gen.len()), (8, 1, 1));
        let s = &out[&9];
        for ex in &s.train {
            assert_eq!(ex.labeled_span().unwrap().start, 7);
            assert_eq!(ex.task, TaskId::NthToken(9));
        }
    }
}
