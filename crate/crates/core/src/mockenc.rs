//! A deterministic toy encoder.
//!
//! Pseudo mode builds layer 0 from a hashed token vector plus a sinusoidal
//! position vector, then runs `L` layers of seeded softmax attention
//! followed by a fixed orthogonal mix. Planted mode additionally overwrites
//! chosen attention rows, identically for every head, so confusion scores
//! are known in closed form.
//!
//! The encoder is lazy: [`MockEncoder`] computes a sentence's tensors when
//! asked, so it can stand in for a bundle of any size.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actstore::{
    ActivationSource, BundleError, BundleManifest, MemoryBundle, SentenceActivations, SentenceEntry,
};
use crate::span::Span;
use crate::tasks::{LabeledExample, SpanKey};

pub const MODEL_NAME: &str = "sesame-mock";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Planted rows must sum to 1 within this tolerance.
pub const PLANTED_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MockError {
    #[error("bad mock configuration: {0}")]
    Config(String),
    #[error("planted row for sentence {sentence}, layer {layer}, query {query}: {message}")]
    PlantedRow {
        sentence: usize,
        layer: usize,
        query: usize,
        message: String,
    },
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

/// Splits words into pieces of at most eight characters; pieces after the
/// first carry a `##` prefix.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockTokenizer;

impl MockTokenizer {
    pub const PIECE: usize = 8;

    pub fn token_len(word: &str) -> usize {
        word.chars().count().div_ceil(Self::PIECE).max(1)
    }

    pub fn word_pieces(word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() {
            return vec![String::new()];
        }
        chars
            .chunks(Self::PIECE)
            .enumerate()
            .map(|(i, c)| {
                let piece: String = c.iter().collect();
                if i == 0 {
                    piece
                } else {
                    format!("##{piece}")
                }
            })
            .collect()
    }

    /// Tokens with `[CLS]`/`[SEP]` and the word-to-token alignment.
    pub fn tokenize<S: AsRef<str>>(words: &[S]) -> (Vec<String>, Vec<Span>) {
        let mut tokens = vec![CLS.to_string()];
        let mut alignment = Vec::with_capacity(words.len());
        for w in words {
            let start = tokens.len();
            tokens.extend(Self::word_pieces(w.as_ref()));
            alignment.push(Span::new(start, tokens.len()));
        }
        tokens.push(SEP.to_string());
        (tokens, alignment)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    #[default]
    Pseudo,
    Planted,
}

/// `(sentence, layer, query token)`; layers count from 1.
pub type PlantKey = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct MockConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden: usize,
    pub seed: u64,
    pub mode: MockMode,
    pub planted_rows: BTreeMap<PlantKey, Vec<f64>>,
    pub pe_minus_pos: bool,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 2,
            hidden: 32,
            seed: 0,
            mode: MockMode::Pseudo,
            planted_rows: BTreeMap::new(),
            pe_minus_pos: true,
        }
    }
}

impl MockConfig {
    pub fn check(&self) -> Result<(), MockError> {
        if self.num_layers == 0 || self.num_heads == 0 {
            return Err(MockError::Config("layers and heads must be positive".into()));
        }
        if self.hidden < 4 {
            return Err(MockError::Config("hidden size must be at least 4".into()));
        }
        if self.mode == MockMode::Pseudo && !self.planted_rows.is_empty() {
            return Err(MockError::Config("planted rows given in pseudo mode".into()));
        }
        for (&(sentence, layer, query), row) in &self.planted_rows {
            let bad = |message: String| MockError::PlantedRow {
                sentence,
                layer,
                query,
                message,
            };
            if layer == 0 || layer > self.num_layers {
                return Err(bad(format!("layer must be in 1..={}", self.num_layers)));
            }
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(bad("entries must be finite and non-negative".into()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PLANTED_SUM_TOLERANCE {
                return Err(bad(format!("row sums to {sum}")));
            }
        }
        Ok(())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Row-major `n × n` matrix with entries uniform in `[-scale, scale)`.
fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n * n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Orthogonal matrix from Gram-Schmidt on random rows.
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut m = random_matrix(rng, n, 1.0);
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= dot * m[j * n + k];
                }
            }
            let norm: f64 = (0..n).map(|k| m[i * n + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            for k in 0..n {
                m[i * n + k] /= norm;
            }
        }
        if ok {
            return m;
        }
    }
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| (0..n).map(|k| m[i * n + k] * v[k]).sum()).collect()
}

fn softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Weight kept on the previous layer's state; the rest comes from attention.
const RESIDUAL: f64 = 0.25;

/// Lazily computed mock activations for a fixed list of sentences.
#[derive(Clone, Debug)]
pub struct MockEncoder {
    cfg: MockConfig,
    manifest: BundleManifest,
    /// Per layer and head, the query projection.
    projections: Vec<Vec<f64>>,
    /// Per layer, the orthogonal output mix.
    mixes: Vec<Vec<f64>>,
}

/// Builds a mock encoder over `sentences`. Fails if the config is invalid
/// or a planted row does not match its sentence's token count.
pub fn encode<S: AsRef<str>>(sentences: &[Vec<S>], cfg: &MockConfig) -> Result<MockEncoder, MockError> {
    MockEncoder::new(sentences, cfg)
}

impl MockEncoder {
    pub fn new<S: AsRef<str>>(sentences: &[Vec<S>], cfg: &MockConfig) -> Result<Self, MockError> {
        cfg.check()?;
        let mut manifest = BundleManifest::new(MODEL_NAME, cfg.num_layers, cfg.num_heads, cfg.hidden);
        manifest.has_pe_minus_pos = cfg.pe_minus_pos;
        let mut cursor = (0u64, 0u64, 0u64);
        for (i, words) in sentences.iter().enumerate() {
            let (tokens, word_to_token) = MockTokenizer::tokenize(words);
            let t = tokens.len();
            manifest.sentences.push(SentenceEntry {
                id: format!("s{i}"),
                words: words.iter().map(|w| w.as_ref().to_string()).collect(),
                tokens,
                word_to_token,
                embed_offset: cursor.0,
                attn_offset: cursor.1,
                pe_offset: cfg.pe_minus_pos.then_some(cursor.2),
            });
            cursor.0 += manifest.embed_bytes(t);
            cursor.1 += manifest.attn_bytes(t);
            cursor.2 += manifest.pe_bytes(t);
        }
        for (&(sentence, layer, query), row) in &cfg.planted_rows {
            let bad = |message: String| MockError::PlantedRow {
                sentence,
                layer,
                query,
                message,
            };
            let entry = manifest
                .sentences
                .get(sentence)
                .ok_or_else(|| bad(format!("only {} sentences", manifest.sentences.len())))?;
            let t = entry.num_tokens();
            if row.len() != t {
                return Err(bad(format!("row has {} entries, sentence has {t} tokens", row.len())));
            }
            if query >= t {
                return Err(bad(format!("query out of range for {t} tokens")));
            }
        }

        let h = cfg.hidden;
        let scale = (3.0 / h as f64).sqrt();
        let mut projections = Vec::with_capacity(cfg.num_layers * cfg.num_heads);
        let mut mixes = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            for a in 0..cfg.num_heads {
                let mut rng = rng_for(cfg.seed, 1 + (l * cfg.num_heads + a) as u64);
                projections.push(random_matrix(&mut rng, h, scale));
            }
            let mut rng = rng_for(cfg.seed, (1 << 32) + l as u64);
            mixes.push(random_orthogonal(&mut rng, h));
        }
        Ok(Self {
            cfg: cfg.clone(),
            manifest,
            projections,
            mixes,
        })
    }

    pub fn config(&self) -> &MockConfig {
        &self.cfg
    }

    fn token_dims(&self) -> usize {
        self.cfg.hidden / 2
    }

    /// Hashed token vector, occupying the first half of the hidden
    /// dimensions.
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = rng_for(self.cfg.seed ^ fnv1a(token.as_bytes()), 0);
        let mut v = vec![0.0; self.cfg.hidden];
        for x in v.iter_mut().take(self.token_dims()) {
            *x = rng.random_range(-1.0..1.0);
        }
        v
    }

    /// Sinusoidal encoding of `position`, occupying the second half of the
    /// hidden dimensions.
    pub fn position_vector(&self, position: usize) -> Vec<f64> {
        let h = self.cfg.hidden;
        let off = self.token_dims();
        let d = h - off;
        let mut v = vec![0.0; h];
        for k in 0..d {
            let freq = 10000f64.powf(-((k / 2 * 2) as f64) / d as f64);
            let angle = position as f64 * freq;
            v[off + k] = if k % 2 == 0 { angle.sin() } else { angle.cos() };
        }
        v
    }

    pub fn to_memory(&self) -> Result<MemoryBundle, MockError> {
        let mut b = MemoryBundle::new(self.manifest.clone());
        for (i, e) in self.manifest.sentences.iter().enumerate() {
            b.push(
                e.id.clone(),
                e.words.clone(),
                e.tokens.clone(),
                e.word_to_token.clone(),
                self.sentence(i)?,
            )?;
        }
        Ok(b)
    }

    fn compute(&self, index: usize) -> SentenceActivations {
        let entry = &self.manifest.sentences[index];
        let (l_n, a_n, h) = (self.cfg.num_layers, self.cfg.num_heads, self.cfg.hidden);
        let t = entry.num_tokens();
        let mut acts = SentenceActivations::zeros(&self.manifest, t);

        let tok: Vec<Vec<f64>> = entry.tokens.iter().map(|s| self.token_vector(s)).collect();
        let mut state: Vec<Vec<f64>> = tok
            .iter()
            .enumerate()
            .map(|(p, v)| v.iter().zip(self.position_vector(p)).map(|(a, b)| a + b).collect())
            .collect();
        if let Some(pe) = acts.pe_minus_pos.as_mut() {
            for (p, v) in tok.iter().enumerate() {
                for (d, &x) in v.iter().enumerate() {
                    pe[p * h + d] = x as f32;
                }
            }
        }
        store_layer(&mut acts, 0, &state, h);

        let inv_sqrt = 1.0 / (h as f64).sqrt();
        for l in 1..=l_n {
            let mut mixed = vec![vec![0.0; h]; t];
            for a in 0..a_n {
                let proj = &self.projections[(l - 1) * a_n + a];
                let queries: Vec<Vec<f64>> = state.iter().map(|s| mat_vec(proj, s)).collect();
                let mut weights = vec![0.0; t * t];
                for q in 0..t {
                    let row = &mut weights[q * t..(q + 1) * t];
                    for (k, w) in row.iter_mut().enumerate() {
                        *w = queries[q].iter().zip(&state[k]).map(|(x, y)| x * y).sum::<f64>() * inv_sqrt;
                    }
                    softmax(row);
                    if let Some(planted) = self.cfg.planted_rows.get(&(index, l, q)) {
                        row.copy_from_slice(planted);
                    }
                }
                for q in 0..t {
                    for k in 0..t {
                        let w = weights[q * t + k];
                        for d in 0..h {
                            mixed[q][d] += w * state[k][d] / a_n as f64;
                        }
                    }
                }
                let out = acts.attention_mut(l, a).expect("layer and head in range");
                for (o, &w) in out.iter_mut().zip(&weights) {
                    *o = w as f32;
                }
            }
            let mix = &self.mixes[l - 1];
            state = state
                .iter()
                .zip(&mixed)
                .map(|(s, m)| {
                    let blend: Vec<f64> = s
                        .iter()
                        .zip(m)
                        .map(|(x, y)| RESIDUAL * x + (1.0 - RESIDUAL) * y)
                        .collect();
                    mat_vec(mix, &blend)
                })
                .collect();
            store_layer(&mut acts, l, &state, h);
        }
        acts
    }
}

fn store_layer(acts: &mut SentenceActivations, layer: usize, state: &[Vec<f64>], h: usize) {
    let out = acts.layer_mut(layer).expect("layer in range");
    for (p, v) in state.iter().enumerate() {
        for (d, &x) in v.iter().enumerate() {
            out[p * h + d] = x as f32;
        }
    }
}

impl ActivationSource for MockEncoder {
    fn manifest(&self) -> &BundleManifest {
        &self.manifest
    }

    fn sentence(&self, index: usize) -> Result<SentenceActivations, BundleError> {
        self.entry(index)?;
        Ok(self.compute(index))
    }
}

/// How planted attention distributes a target's mass over candidates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlantedPattern {
    /// Equal mass on every candidate.
    Uniform,
    /// All mass on the true trigger.
    PointMass,
    /// Share `p` on the trigger, the rest split evenly over distractors.
    TriggerShare(f64),
}

impl std::str::FromStr for PlantedPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(PlantedPattern::Uniform),
            "point-mass" | "point_mass" => Ok(PlantedPattern::PointMass),
            _ => {
                let p: f64 = s
                    .strip_prefix("share:")
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| format!("bad planted pattern `{s}`"))?;
                if (0.0..=1.0).contains(&p) {
                    Ok(PlantedPattern::TriggerShare(p))
                } else {
                    Err(format!("trigger share {p} outside [0, 1]"))
                }
            }
        }
    }
}

impl PlantedPattern {
    /// Mass per candidate; the first entry is the trigger.
    pub fn masses(self, candidates: usize) -> Vec<f64> {
        let n = candidates;
        match self {
            PlantedPattern::Uniform => vec![1.0 / n as f64; n],
            PlantedPattern::PointMass => {
                let mut m = vec![0.0; n];
                m[0] = 1.0;
                m
            }
            PlantedPattern::TriggerShare(_) if n == 1 => vec![1.0],
            PlantedPattern::TriggerShare(p) => {
                let mut m = vec![(1.0 - p) / (n - 1) as f64; n];
                m[0] = p;
                m
            }
        }
    }
}

/// Planted rows for condition examples. Every token of each example's
/// target attends to the trigger and distractor head words according to
/// `patterns[layer - 1]`; a candidate's mass is split evenly over its
/// tokens. A single pattern applies to every layer.
pub fn plant_condition_rows(
    examples: &[LabeledExample],
    num_layers: usize,
    patterns: &[PlantedPattern],
) -> Result<BTreeMap<PlantKey, Vec<f64>>, MockError> {
    if patterns.len() != 1 && patterns.len() != num_layers {
        return Err(MockError::Config(format!(
            "{} planted patterns for {num_layers} layers",
            patterns.len()
        )));
    }
    let mut rows = BTreeMap::new();
    for (s, ex) in examples.iter().enumerate() {
        let (tokens, alignment) = MockTokenizer::tokenize(&ex.words);
        let t = tokens.len();
        let to_tokens = |words: Span| -> Vec<usize> { words.indices().flat_map(|w| alignment[w].indices()).collect() };
        let missing = |what: &str| MockError::Config(format!("example {s} has no {what} span"));
        let target = to_tokens(ex.spans.get(SpanKey::Target).ok_or_else(|| missing("target"))?);
        let mut candidates = vec![to_tokens(
            ex.spans.get(SpanKey::Trigger).ok_or_else(|| missing("trigger"))?,
        )];
        candidates.extend(
            SpanKey::DISTRACTORS
                .iter()
                .filter_map(|&k| ex.spans.get(k))
                .map(to_tokens),
        );
        for layer in 1..=num_layers {
            let pattern = patterns[if patterns.len() == 1 { 0 } else { layer - 1 }];
            let mut row = vec![0.0; t];
            for (cand, mass) in candidates.iter().zip(pattern.masses(candidates.len())) {
                for &tok in cand {
                    row[tok] += mass / cand.len() as f64;
                }
            }
            for &q in &target {
                rows.insert((s, layer, q), row.clone());
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actstore::{validate, write_bundle, EmbeddingLayer};

    fn sentences() -> Vec<Vec<String>> {
        ["the cat will sleep", "the extraordinarily happy dogs can bark"]
            .iter()
            .map(|s| s.split(' ').map(String::from).collect())
            .collect()
    }

    #[test]
    fn tokenizer_splits_long_words() {
        let (tokens, align) = MockTokenizer::tokenize(&["the", "extraordinarily"]);
        assert_eq!(tokens, ["[CLS]", "the", "extraord", "##inarily", "[SEP]"]);
        assert_eq!(align, vec![Span::single(1), Span::new(2, 4)]);
        assert_eq!(MockTokenizer::token_len("extraordinarily"), 2);
        assert_eq!(MockTokenizer::token_len("'s"), 1);
    }

    #[test]
    fn pseudo_output_validates() {
        let enc = encode(&sentences(), &MockConfig::default()).unwrap();
        validate(&enc).unwrap();
    }

    #[test]
    fn deterministic_bytes() {
        let cfg = MockConfig {
            seed: 7,
            ..MockConfig::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_bundle(a.path(), &encode(&sentences(), &cfg).unwrap()).unwrap();
        write_bundle(b.path(), &encode(&sentences(), &cfg).unwrap()).unwrap();
        for f in ["manifest.json", "embeddings.bin", "attentions.bin", "pe_minus_pos.bin"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn pe_minus_pos_drops_position() {
        let enc = encode(&sentences(), &MockConfig::default()).unwrap();
        let l0 = enc.layer_embeddings(0, EmbeddingLayer::Layer(0)).unwrap();
        let pe = enc.layer_embeddings(0, EmbeddingLayer::PeMinusPos).unwrap();
        let h = enc.config().hidden;
        for p in 0..enc.manifest().sentences[0].num_tokens() {
            let pos = enc.position_vector(p);
            for d in 0..h {
                assert!((l0[p * h + d] - pe[p * h + d] - pos[d] as f32).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn planted_row_length_must_match() {
        let mut cfg = MockConfig {
            mode: MockMode::Planted,
            ..MockConfig::default()
        };
        cfg.planted_rows.insert((0, 1, 1), vec![0.5, 0.5]);
        assert!(matches!(encode(&sentences(), &cfg), Err(MockError::PlantedRow { .. })));
    }

    #[test]
    fn planted_row_must_be_a_distribution() {
        let mut cfg = MockConfig {
            mode: MockMode::Planted,
            ..MockConfig::default()
        };
        cfg.planted_rows.insert((0, 1, 1), vec![0.5, 0.25, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(encode(&sentences(), &cfg), Err(MockError::PlantedRow { .. })));
    }

    #[test]
    fn planted_rows_apply_to_every_head() {
        let mut cfg = MockConfig {
            mode: MockMode::Planted,
            ..MockConfig::default()
        };
        let row = vec![0.0, 0.5, 0.5, 0.0, 0.0, 0.0];
        cfg.planted_rows.insert((0, 2, 3), row.clone());
        let enc = encode(&sentences(), &cfg).unwrap();
        let acts = enc.sentence(0).unwrap();
        for a in 0..cfg.num_heads {
            let m = acts.attention(2, a).unwrap();
            assert_eq!(&m[3 * 6..4 * 6], &row.iter().map(|&x| x as f32).collect::<Vec<_>>()[..]);
        }
        validate(&enc).unwrap();
    }

    #[test]
    fn pattern_masses() {
        assert_eq!(PlantedPattern::Uniform.masses(2), vec![0.5, 0.5]);
        assert_eq!(PlantedPattern::PointMass.masses(3), vec![1.0, 0.0, 0.0]);
        assert_eq!(PlantedPattern::TriggerShare(0.8).masses(1), vec![1.0]);
        assert_eq!(
            "share:0.25".parse::<PlantedPattern>().unwrap().masses(4),
            vec![0.25, 0.25, 0.25, 0.25]
        );
        assert!("share:2".parse::<PlantedPattern>().is_err());
    }

    #[test]
    fn orthogonal_mix_is_orthogonal() {
        let mut rng = rng_for(3, 9);
        let n = 6;
        let m = random_orthogonal(&mut rng, n);
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-12);
            }
        }
    }
}
