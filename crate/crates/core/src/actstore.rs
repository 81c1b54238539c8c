//! Activation bundles: the interchange format between an encoder and the
//! analyses.
//!
//! A bundle is a directory holding
//!
//! * `manifest.json`: model shape, special tokens and, per sentence, its
//!   words, subword tokens, word-to-token alignment and byte offsets;
//! * `embeddings.bin`: per sentence `[layer][token][hidden]`, with layer 0
//!   being the pre-embeddings when present;
//! * `attentions.bin`: per sentence `[layer 1..=L][head][query][key]`;
//! * `pe_minus_pos.bin` (optional): per sentence `[token][hidden]`.
//!
//! Every payload is little-endian IEEE-754 `f32`, uncompressed, laid out
//! at the manifest's byte offsets. `attentions[l]` holds the weights that
//! produce layer `l` from layer `l - 1`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::span::Span;

pub const SCHEMA: &str = "sesame-bundle/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const ATTENTIONS_FILE: &str = "attentions.bin";
pub const PE_MINUS_POS_FILE: &str = "pe_minus_pos.bin";

/// Allowed deviation of an attention row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

const F32: u64 = 4;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt manifest: {0}")]
    Manifest(String),
    #[error("extent mismatch: {0}")]
    Extent(String),
    #[error("offset mismatch: {0}")]
    Offset(String),
    #[error("sentence {sentence}: bad word alignment: {message}")]
    Alignment { sentence: usize, message: String },
    #[error("sentence {sentence}: non-finite value in {tensor}")]
    NonFinite { sentence: usize, tensor: &'static str },
    #[error("sentence {sentence}, layer {layer}, head {head}, query {query}: attention row sums to {sum}")]
    RowSum {
        sentence: usize,
        layer: usize,
        head: usize,
        query: usize,
        sum: f64,
    },
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("sentence not in bundle: {0}")]
    MissingSentence(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceEntry {
    pub id: String,
    pub words: Vec<String>,
    pub tokens: Vec<String>,
    pub word_to_token: Vec<Span>,
    pub embed_offset: u64,
    pub attn_offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe_offset: Option<u64>,
}

impl SentenceEntry {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }
}

fn default_special_tokens() -> Vec<String> {
    vec!["[CLS]".into(), "[SEP]".into()]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub schema: String,
    pub model_name: String,
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden: usize,
    pub has_pre_embeddings: bool,
    pub has_pe_minus_pos: bool,
    #[serde(default = "default_special_tokens")]
    pub special_tokens: Vec<String>,
    pub sentences: Vec<SentenceEntry>,
}

impl BundleManifest {
    pub fn new(model_name: &str, num_layers: usize, num_heads: usize, hidden: usize) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            model_name: model_name.to_string(),
            num_layers,
            num_heads,
            hidden,
            has_pre_embeddings: true,
            has_pe_minus_pos: false,
            special_tokens: default_special_tokens(),
            sentences: Vec::new(),
        }
    }

    /// Number of embedding layers stored per sentence.
    pub fn stored_layers(&self) -> usize {
        self.num_layers + usize::from(self.has_pre_embeddings)
    }

    pub fn first_layer(&self) -> usize {
        usize::from(!self.has_pre_embeddings)
    }

    /// Every embedding layer a probe can be trained on, in report order.
    pub fn probe_layers(&self) -> Vec<EmbeddingLayer> {
        let mut out: Vec<EmbeddingLayer> = (self.first_layer()..=self.num_layers)
            .map(EmbeddingLayer::Layer)
            .collect();
        if self.has_pe_minus_pos {
            out.push(EmbeddingLayer::PeMinusPos);
        }
        out
    }

    pub fn embed_bytes(&self, tokens: usize) -> u64 {
        (self.stored_layers() * tokens * self.hidden) as u64 * F32
    }

    pub fn attn_bytes(&self, tokens: usize) -> u64 {
        (self.num_layers * self.num_heads * tokens * tokens) as u64 * F32
    }

    pub fn pe_bytes(&self, tokens: usize) -> u64 {
        (tokens * self.hidden) as u64 * F32
    }

    /// Map from space-joined sentence words to sentence index. The first
    /// occurrence wins for repeated sentences.
    pub fn index_by_words(&self) -> HashMap<String, usize> {
        let mut out = HashMap::with_capacity(self.sentences.len());
        for (i, s) in self.sentences.iter().enumerate() {
            out.entry(s.words.join(" ")).or_insert(i);
        }
        out
    }

    pub fn is_special(&self, token: &str) -> bool {
        self.special_tokens.iter().any(|s| s == token)
    }

    /// Structural checks: schema, shape, alignment and offsets. File sizes
    /// are checked separately against the returned totals.
    pub fn check(&self) -> Result<PayloadTotals, BundleError> {
        if self.schema != SCHEMA {
            return Err(BundleError::Manifest(format!(
                "schema `{}`, expected `{SCHEMA}`",
                self.schema
            )));
        }
        if self.num_layers == 0 || self.num_heads == 0 || self.hidden == 0 {
            return Err(BundleError::Manifest(
                "num_layers, num_heads and hidden must be positive".into(),
            ));
        }
        let mut totals = PayloadTotals::default();
        for (i, s) in self.sentences.iter().enumerate() {
            self.check_alignment(i, s)?;
            let t = s.num_tokens();
            check_offset(
                i,
                "embed_offset",
                s.embed_offset,
                &mut totals.embeddings,
                self.embed_bytes(t),
            )?;
            check_offset(
                i,
                "attn_offset",
                s.attn_offset,
                &mut totals.attentions,
                self.attn_bytes(t),
            )?;
            match (self.has_pe_minus_pos, s.pe_offset) {
                (true, Some(off)) => check_offset(i, "pe_offset", off, &mut totals.pe_minus_pos, self.pe_bytes(t))?,
                (false, None) => {}
                (true, None) => return Err(BundleError::Offset(format!("sentence {i}: missing pe_offset"))),
                (false, Some(_)) => {
                    return Err(BundleError::Offset(format!(
                        "sentence {i}: pe_offset without has_pe_minus_pos"
                    )))
                }
            }
        }
        Ok(totals)
    }

    fn check_alignment(&self, i: usize, s: &SentenceEntry) -> Result<(), BundleError> {
        let fail = |message: String| Err(BundleError::Alignment { sentence: i, message });
        if s.tokens.is_empty() {
            return fail("no tokens".into());
        }
        if s.words.len() != s.word_to_token.len() {
            return fail(format!(
                "{} words but {} alignment intervals",
                s.words.len(),
                s.word_to_token.len()
            ));
        }
        let mut covered = vec![false; s.tokens.len()];
        let mut prev_end = 0;
        for (w, span) in s.word_to_token.iter().enumerate() {
            if span.is_empty() || span.end > s.tokens.len() {
                return fail(format!("word {w} interval {span} is empty or out of bounds"));
            }
            if span.start < prev_end {
                return fail(format!("word {w} interval {span} overlaps or is out of order"));
            }
            prev_end = span.end;
            for t in span.indices() {
                if self.is_special(&s.tokens[t]) {
                    return fail(format!("word {w} covers special token {t}"));
                }
                covered[t] = true;
            }
        }
        for (t, tok) in s.tokens.iter().enumerate() {
            if !covered[t] && !self.is_special(tok) {
                return fail(format!("token {t} `{tok}` belongs to no word"));
            }
        }
        Ok(())
    }
}

fn check_offset(sentence: usize, field: &str, offset: u64, cursor: &mut u64, size: u64) -> Result<(), BundleError> {
    if offset < *cursor {
        return Err(BundleError::Offset(format!(
            "sentence {sentence}: {field} {offset} overlaps the previous payload ending at {cursor}"
        )));
    }
    *cursor = offset + size;
    Ok(())
}

/// Minimum byte length of each payload implied by a manifest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PayloadTotals {
    pub embeddings: u64,
    pub attentions: u64,
    pub pe_minus_pos: u64,
}

/// Which embedding matrix a probe reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmbeddingLayer {
    Layer(usize),
    PeMinusPos,
}

impl fmt::Display for EmbeddingLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingLayer::Layer(l) => write!(f, "{l}"),
            EmbeddingLayer::PeMinusPos => f.write_str("pe_minus_pos"),
        }
    }
}

impl FromStr for EmbeddingLayer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "pe_minus_pos" {
            return Ok(EmbeddingLayer::PeMinusPos);
        }
        s.parse()
            .map(EmbeddingLayer::Layer)
            .map_err(|_| format!("bad layer `{s}`"))
    }
}

/// All tensors of one sentence, flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceActivations {
    pub num_tokens: usize,
    pub hidden: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub first_layer: usize,
    /// `[stored layer][token][hidden]`.
    pub embeddings: Vec<f32>,
    /// `[layer - 1][head][query][key]`.
    pub attentions: Vec<f32>,
    /// `[token][hidden]`.
    pub pe_minus_pos: Option<Vec<f32>>,
}

impl SentenceActivations {
    /// Zero-filled tensors shaped for `manifest` and `num_tokens`.
    pub fn zeros(manifest: &BundleManifest, num_tokens: usize) -> Self {
        let t = num_tokens;
        Self {
            num_tokens: t,
            hidden: manifest.hidden,
            num_layers: manifest.num_layers,
            num_heads: manifest.num_heads,
            first_layer: manifest.first_layer(),
            embeddings: vec![0.0; manifest.stored_layers() * t * manifest.hidden],
            attentions: vec![0.0; manifest.num_layers * manifest.num_heads * t * t],
            pe_minus_pos: manifest.has_pe_minus_pos.then(|| vec![0.0; t * manifest.hidden]),
        }
    }

    fn layer_range(&self, layer: usize) -> Result<std::ops::Range<usize>, BundleError> {
        if layer < self.first_layer || layer > self.num_layers {
            return Err(BundleError::OutOfRange(format!(
                "embedding layer {layer} not in {}..={}",
                self.first_layer, self.num_layers
            )));
        }
        let size = self.num_tokens * self.hidden;
        let start = (layer - self.first_layer) * size;
        Ok(start..start + size)
    }

    /// `[token][hidden]` matrix of one embedding layer.
    pub fn layer(&self, layer: EmbeddingLayer) -> Result<&[f32], BundleError> {
        match layer {
            EmbeddingLayer::Layer(l) => Ok(&self.embeddings[self.layer_range(l)?]),
            EmbeddingLayer::PeMinusPos => self
                .pe_minus_pos
                .as_deref()
                .ok_or_else(|| BundleError::OutOfRange("bundle has no pe_minus_pos".into())),
        }
    }

    pub fn layer_mut(&mut self, layer: usize) -> Result<&mut [f32], BundleError> {
        let r = self.layer_range(layer)?;
        Ok(&mut self.embeddings[r])
    }

    fn head_range(&self, layer: usize, head: usize) -> Result<std::ops::Range<usize>, BundleError> {
        if layer == 0 || layer > self.num_layers || head >= self.num_heads {
            return Err(BundleError::OutOfRange(format!(
                "attention layer {layer} head {head} (layers 1..={}, {} heads)",
                self.num_layers, self.num_heads
            )));
        }
        let size = self.num_tokens * self.num_tokens;
        let start = ((layer - 1) * self.num_heads + head) * size;
        Ok(start..start + size)
    }

    /// `[query][key]` attention weights of one head.
    pub fn attention(&self, layer: usize, head: usize) -> Result<&[f32], BundleError> {
        Ok(&self.attentions[self.head_range(layer, head)?])
    }

    pub fn attention_mut(&mut self, layer: usize, head: usize) -> Result<&mut [f32], BundleError> {
        let r = self.head_range(layer, head)?;
        Ok(&mut self.attentions[r])
    }

    /// Finite values everywhere and row-stochastic attention.
    pub fn check(&self, sentence: usize) -> Result<(), BundleError> {
        if self.embeddings.iter().any(|x| !x.is_finite()) {
            return Err(BundleError::NonFinite {
                sentence,
                tensor: "embeddings",
            });
        }
        if self.attentions.iter().any(|x| !x.is_finite()) {
            return Err(BundleError::NonFinite {
                sentence,
                tensor: "attentions",
            });
        }
        if let Some(pe) = &self.pe_minus_pos {
            if pe.iter().any(|x| !x.is_finite()) {
                return Err(BundleError::NonFinite {
                    sentence,
                    tensor: "pe_minus_pos",
                });
            }
        }
        let t = self.num_tokens;
        for layer in 1..=self.num_layers {
            for head in 0..self.num_heads {
                let m = self.attention(layer, head)?;
                for (query, row) in m.chunks_exact(t).enumerate() {
                    let sum: f64 = row.iter().map(|&x| f64::from(x)).sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        return Err(BundleError::RowSum {
                            sentence,
                            layer,
                            head,
                            query,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn check_extents(&self, manifest: &BundleManifest, sentence: usize) -> Result<(), BundleError> {
        let t = self.num_tokens;
        let want = (
            manifest.embed_bytes(t) / F32,
            manifest.attn_bytes(t) / F32,
            manifest.has_pe_minus_pos.then(|| manifest.pe_bytes(t) / F32),
        );
        let got = (
            self.embeddings.len() as u64,
            self.attentions.len() as u64,
            self.pe_minus_pos.as_ref().map(|v| v.len() as u64),
        );
        if self.hidden != manifest.hidden
            || self.num_layers != manifest.num_layers
            || self.num_heads != manifest.num_heads
            || self.first_layer != manifest.first_layer()
            || want != got
        {
            return Err(BundleError::Extent(format!(
                "sentence {sentence}: tensors {got:?} elements, manifest implies {want:?}"
            )));
        }
        Ok(())
    }
}

/// How a word's vector is formed from its subword tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    FirstSubword,
    Mean,
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "first" | "first_subword" => Ok(Pooling::FirstSubword),
            "mean" => Ok(Pooling::Mean),
            _ => Err(format!("unknown pooling `{s}`")),
        }
    }
}

/// One vector per word from a `[token][hidden]` matrix.
pub fn pool_words(matrix: &[f32], hidden: usize, alignment: &[Span], pooling: Pooling) -> Vec<Vec<f32>> {
    alignment
        .iter()
        .map(|span| match pooling {
            Pooling::FirstSubword => matrix[span.start * hidden..(span.start + 1) * hidden].to_vec(),
            Pooling::Mean => {
                let mut acc = vec![0.0f64; hidden];
                for t in span.indices() {
                    for (a, &x) in acc.iter_mut().zip(&matrix[t * hidden..(t + 1) * hidden]) {
                        *a += f64::from(x);
                    }
                }
                let n = span.len() as f64;
                acc.into_iter().map(|a| (a / n) as f32).collect()
            }
        })
        .collect()
}

/// Read access to a bundle's tensors.
pub trait ActivationSource: Sync {
    fn manifest(&self) -> &BundleManifest;

    fn sentence(&self, index: usize) -> Result<SentenceActivations, BundleError>;

    /// `[token][hidden]` matrix of one layer without loading the rest of
    /// the sentence.
    fn layer_embeddings(&self, index: usize, layer: EmbeddingLayer) -> Result<Vec<f32>, BundleError> {
        Ok(self.sentence(index)?.layer(layer)?.to_vec())
    }

    fn entry(&self, index: usize) -> Result<&SentenceEntry, BundleError> {
        self.manifest()
            .sentences
            .get(index)
            .ok_or_else(|| BundleError::OutOfRange(format!("sentence {index} of {}", self.manifest().sentences.len())))
    }
}

/// Embedding of one word at one layer.
pub fn word_embedding(
    source: &dyn ActivationSource,
    sentence: usize,
    layer: EmbeddingLayer,
    word: usize,
    pooling: Pooling,
) -> Result<Vec<f32>, BundleError> {
    let entry = source.entry(sentence)?;
    let span = *entry.word_to_token.get(word).ok_or_else(|| {
        BundleError::OutOfRange(format!("word {word} of {} in sentence {sentence}", entry.words.len()))
    })?;
    let matrix = source.layer_embeddings(sentence, layer)?;
    let hidden = source.manifest().hidden;
    Ok(pool_words(&matrix, hidden, &[span], pooling).remove(0))
}

/// Full validation: manifest structure plus finite, row-stochastic tensors
/// for every sentence.
pub fn validate(source: &dyn ActivationSource) -> Result<(), BundleError> {
    source.manifest().check()?;
    for i in 0..source.manifest().sentences.len() {
        let acts = source.sentence(i)?;
        acts.check_extents(source.manifest(), i)?;
        acts.check(i)?;
    }
    Ok(())
}

/// A bundle held in memory, built sentence by sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBundle {
    manifest: BundleManifest,
    sentences: Vec<SentenceActivations>,
}

impl MemoryBundle {
    /// Starts an empty bundle. Any sentences already in `manifest` are
    /// discarded.
    pub fn new(mut manifest: BundleManifest) -> Self {
        manifest.sentences.clear();
        Self {
            manifest,
            sentences: Vec::new(),
        }
    }

    /// Appends a sentence, assigning its payload offsets.
    pub fn push(
        &mut self,
        id: String,
        words: Vec<String>,
        tokens: Vec<String>,
        word_to_token: Vec<Span>,
        acts: SentenceActivations,
    ) -> Result<usize, BundleError> {
        let index = self.manifest.sentences.len();
        if acts.num_tokens != tokens.len() {
            return Err(BundleError::Extent(format!(
                "sentence {index}: {} tokens but tensors for {}",
                tokens.len(),
                acts.num_tokens
            )));
        }
        acts.check_extents(&self.manifest, index)?;
        let (embed_offset, attn_offset, pe_offset) = match self.manifest.sentences.last() {
            None => (0, 0, self.manifest.has_pe_minus_pos.then_some(0)),
            Some(prev) => {
                let t = prev.num_tokens();
                (
                    prev.embed_offset + self.manifest.embed_bytes(t),
                    prev.attn_offset + self.manifest.attn_bytes(t),
                    prev.pe_offset.map(|o| o + self.manifest.pe_bytes(t)),
                )
            }
        };
        self.manifest.sentences.push(SentenceEntry {
            id,
            words,
            tokens,
            word_to_token,
            embed_offset,
            attn_offset,
            pe_offset,
        });
        self.sentences.push(acts);
        Ok(index)
    }
}

impl ActivationSource for MemoryBundle {
    fn manifest(&self) -> &BundleManifest {
        &self.manifest
    }

    fn sentence(&self, index: usize) -> Result<SentenceActivations, BundleError> {
        self.entry(index)?;
        Ok(self.sentences[index].clone())
    }

    fn layer_embeddings(&self, index: usize, layer: EmbeddingLayer) -> Result<Vec<f32>, BundleError> {
        self.entry(index)?;
        Ok(self.sentences[index].layer(layer)?.to_vec())
    }
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Writes `source` as a bundle directory, creating it if needed.
pub fn write_bundle(dir: impl AsRef<Path>, source: &dyn ActivationSource) -> Result<(), BundleError> {
    let dir = dir.as_ref();
    let manifest = source.manifest();
    manifest.check()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let open = |name: &str| -> Result<(PathBuf, BufWriter<File>), BundleError> {
        let p = dir.join(name);
        let f = File::create(&p).map_err(io_err(&p))?;
        Ok((p, BufWriter::new(f)))
    };
    let (ep, mut emb) = open(EMBEDDINGS_FILE)?;
    let (ap, mut att) = open(ATTENTIONS_FILE)?;
    let mut pe = if manifest.has_pe_minus_pos {
        Some(open(PE_MINUS_POS_FILE)?)
    } else {
        None
    };

    let mut cursor = PayloadTotals::default();
    for (i, entry) in manifest.sentences.iter().enumerate() {
        let acts = source.sentence(i)?;
        acts.check_extents(manifest, i)?;
        if acts.num_tokens != entry.num_tokens() {
            return Err(BundleError::Extent(format!(
                "sentence {i}: manifest lists {} tokens, tensors have {}",
                entry.num_tokens(),
                acts.num_tokens
            )));
        }
        if entry.embed_offset != cursor.embeddings || entry.attn_offset != cursor.attentions {
            return Err(BundleError::Offset(format!(
                "sentence {i}: offsets must be contiguous when writing"
            )));
        }
        write_f32s(&mut emb, &acts.embeddings).map_err(io_err(&ep))?;
        write_f32s(&mut att, &acts.attentions).map_err(io_err(&ap))?;
        cursor.embeddings += acts.embeddings.len() as u64 * F32;
        cursor.attentions += acts.attentions.len() as u64 * F32;
        if let (Some((pp, w)), Some(values)) = (pe.as_mut(), acts.pe_minus_pos.as_ref()) {
            if entry.pe_offset != Some(cursor.pe_minus_pos) {
                return Err(BundleError::Offset(format!(
                    "sentence {i}: pe_offset must be contiguous when writing"
                )));
            }
            write_f32s(w, values).map_err(io_err(pp))?;
            cursor.pe_minus_pos += values.len() as u64 * F32;
        }
    }
    emb.flush().map_err(io_err(&ep))?;
    att.flush().map_err(io_err(&ap))?;
    if let Some((pp, mut w)) = pe {
        w.flush().map_err(io_err(&pp))?;
    }

    let mp = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| BundleError::Manifest(e.to_string()))?;
    std::fs::write(&mp, json).map_err(io_err(&mp))?;
    Ok(())
}

/// A bundle directory opened for random access. Sentences are read on
/// demand with positioned reads, so one instance can serve concurrent
/// readers.
#[derive(Debug)]
pub struct Bundle {
    dir: PathBuf,
    manifest: BundleManifest,
    embeddings: File,
    attentions: File,
    pe_minus_pos: Option<File>,
}

impl Bundle {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BundleError> {
        let dir = dir.as_ref().to_path_buf();
        let mp = dir.join(MANIFEST_FILE);
        let text = std::fs::read(&mp).map_err(io_err(&mp))?;
        let manifest: BundleManifest =
            serde_json::from_slice(&text).map_err(|e| BundleError::Manifest(e.to_string()))?;
        let totals = manifest.check()?;

        let open = |name: &str, need: u64| -> Result<File, BundleError> {
            let p = dir.join(name);
            let f = File::open(&p).map_err(io_err(&p))?;
            let len = f.metadata().map_err(io_err(&p))?.len();
            if len < need {
                return Err(BundleError::Extent(format!(
                    "{name} is {len} bytes, manifest needs {need}"
                )));
            }
            Ok(f)
        };
        let embeddings = open(EMBEDDINGS_FILE, totals.embeddings)?;
        let attentions = open(ATTENTIONS_FILE, totals.attentions)?;
        let pe_minus_pos = if manifest.has_pe_minus_pos {
            Some(open(PE_MINUS_POS_FILE, totals.pe_minus_pos)?)
        } else {
            None
        };
        Ok(Self {
            dir,
            manifest,
            embeddings,
            attentions,
            pe_minus_pos,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn read(&self, file: &File, name: &str, offset: u64, count: usize) -> Result<Vec<f32>, BundleError> {
        let mut buf = vec![0u8; count * 4];
        file.read_exact_at(&mut buf, offset).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => BundleError::Extent(format!(
                "{name}: read of {} bytes at {offset} runs past the end",
                buf.len()
            )),
            _ => BundleError::Io {
                path: self.dir.join(name),
                source: e,
            },
        })?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

impl ActivationSource for Bundle {
    fn manifest(&self) -> &BundleManifest {
        &self.manifest
    }

    fn sentence(&self, index: usize) -> Result<SentenceActivations, BundleError> {
        let entry = self.entry(index)?;
        let m = &self.manifest;
        let t = entry.num_tokens();
        let embeddings = self.read(
            &self.embeddings,
            EMBEDDINGS_FILE,
            entry.embed_offset,
            (m.embed_bytes(t) / F32) as usize,
        )?;
        let attentions = self.read(
            &self.attentions,
            ATTENTIONS_FILE,
            entry.attn_offset,
            (m.attn_bytes(t) / F32) as usize,
        )?;
        let pe_minus_pos = match (&self.pe_minus_pos, entry.pe_offset) {
            (Some(f), Some(off)) => Some(self.read(f, PE_MINUS_POS_FILE, off, t * m.hidden)?),
            _ => None,
        };
        Ok(SentenceActivations {
            num_tokens: t,
            hidden: m.hidden,
            num_layers: m.num_layers,
            num_heads: m.num_heads,
            first_layer: m.first_layer(),
            embeddings,
            attentions,
            pe_minus_pos,
        })
    }

    fn layer_embeddings(&self, index: usize, layer: EmbeddingLayer) -> Result<Vec<f32>, BundleError> {
        let entry = self.entry(index)?;
        let m = &self.manifest;
        let t = entry.num_tokens();
        match layer {
            EmbeddingLayer::Layer(l) => {
                if l < m.first_layer() || l > m.num_layers {
                    return Err(BundleError::OutOfRange(format!(
                        "embedding layer {l} not in {}..={}",
                        m.first_layer(),
                        m.num_layers
                    )));
                }
                let offset = entry.embed_offset + ((l - m.first_layer()) * t * m.hidden) as u64 * F32;
                self.read(&self.embeddings, EMBEDDINGS_FILE, offset, t * m.hidden)
            }
            EmbeddingLayer::PeMinusPos => match (&self.pe_minus_pos, entry.pe_offset) {
                (Some(f), Some(off)) => self.read(f, PE_MINUS_POS_FILE, off, t * m.hidden),
                _ => Err(BundleError::OutOfRange("bundle has no pe_minus_pos".into())),
            },
        }
    }
}

/// Checks that every sentence of a dataset has activations, returning the
/// bundle index of each.
pub fn locate_sentences<'a, I>(manifest: &BundleManifest, sentences: I) -> Result<Vec<usize>, BundleError>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let index = manifest.index_by_words();
    sentences
        .into_iter()
        .map(|words| {
            let key = words.join(" ");
            index.get(&key).copied().ok_or(BundleError::MissingSentence(key))
        })
        .collect()
}

/// Unique sentences in first-appearance order.
pub fn unique_sentences<'a, I>(sentences: I) -> Vec<Vec<String>>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut seen = HashSet::new();
    sentences
        .into_iter()
        .filter(|w| seen.insert(w.join(" ")))
        .map(<[String]>::to_vec)
        .collect()
}
