#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sesame_core::actstore::{BundleManifest, MemoryBundle, SentenceActivations};
use sesame_core::mockenc::MockTokenizer;

/// A bundle of random tensors with valid softmax attention.
pub fn random_bundle(
    seed: u64,
    sentences: usize,
    layers: usize,
    heads: usize,
    hidden: usize,
    pe: bool,
) -> MemoryBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = BundleManifest::new("random", layers, heads, hidden);
    manifest.has_pe_minus_pos = pe;
    manifest.has_pre_embeddings = rng.random_bool(0.8);
    let mut b = MemoryBundle::new(manifest.clone());
    for s in 0..sentences {
        let n_words = rng.random_range(1..6);
        let words: Vec<String> = (0..n_words)
            .map(|_| {
                let len = rng.random_range(1..20);
                (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
            })
            .collect();
        let (tokens, align) = MockTokenizer::tokenize(&words);
        let mut acts = SentenceActivations::zeros(&manifest, tokens.len());
        for x in acts.embeddings.iter_mut() {
            *x = rng.random_range(-10.0..10.0);
        }
        if let Some(p) = acts.pe_minus_pos.as_mut() {
            for x in p.iter_mut() {
                *x = rng.random_range(-10.0..10.0);
            }
        }
        random_attention(&mut rng, &mut acts);
        b.push(format!("r{s}"), words, tokens, align, acts).unwrap();
    }
    b
}

pub fn random_attention(rng: &mut ChaCha8Rng, acts: &mut SentenceActivations) {
    let t = acts.num_tokens;
    for x in acts.attentions.chunks_exact_mut(t) {
        let raw: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0f64..3.0).exp()).collect();
        let sum: f64 = raw.iter().sum();
        for (o, r) in x.iter_mut().zip(raw) {
            *o = (r / sum) as f32;
        }
    }
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}
