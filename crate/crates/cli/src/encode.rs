use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use sesame_core::actstore::{validate as validate_source, write_bundle, ActivationSource, Bundle};
use sesame_core::mockenc::{encode, plant_condition_rows, MockConfig, MockEncoder, MockMode, PlantedPattern};
use sesame_core::tasks::{read_dataset_file, LabeledExample};

use crate::output::Outputs;

#[derive(Args)]
pub struct ValidateArgs {
    /// Bundle directory.
    bundle: PathBuf,
}

pub fn validate(a: ValidateArgs) -> Result<()> {
    let b = Bundle::open(&a.bundle).with_context(|| format!("opening {}", a.bundle.display()))?;
    validate_source(&b)?;
    let m = b.manifest();
    println!(
        "ok: {} sentences, {} layers, {} heads, hidden {}, pre-embeddings {}, pe_minus_pos {}",
        m.sentences.len(),
        m.num_layers,
        m.num_heads,
        m.hidden,
        m.has_pre_embeddings,
        m.has_pe_minus_pos
    );
    Ok(())
}

/// Shape and attention settings of the mock encoder.
#[derive(Args, Clone, Debug)]
pub struct MockOpts {
    #[arg(long, default_value_t = 4)]
    pub mock_layers: usize,
    #[arg(long, default_value_t = 2)]
    pub mock_heads: usize,
    #[arg(long, default_value_t = 32)]
    pub mock_hidden: usize,
    /// Planted attention for condition datasets: `uniform`, `point-mass`
    /// or `share:P`, one for all layers or one per layer.
    #[arg(long, value_delimiter = ',')]
    pub planted: Vec<PlantedPattern>,
    /// Leave out the position-free pre-embedding variant.
    #[arg(long)]
    pub no_pe_minus_pos: bool,
}

pub fn read_datasets(paths: &[PathBuf]) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_dataset_file(p).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(out)
}

/// First example of each distinct sentence.
fn unique_examples(examples: &[LabeledExample]) -> Vec<LabeledExample> {
    let mut seen = HashSet::new();
    examples.iter().filter(|e| seen.insert(e.sentence())).cloned().collect()
}

pub fn mock_encoder(examples: &[LabeledExample], opts: &MockOpts, seed: u64) -> Result<MockEncoder> {
    let unique = unique_examples(examples);
    let mut cfg = MockConfig {
        num_layers: opts.mock_layers,
        num_heads: opts.mock_heads,
        hidden: opts.mock_hidden,
        seed,
        pe_minus_pos: !opts.no_pe_minus_pos,
        ..MockConfig::default()
    };
    if !opts.planted.is_empty() {
        cfg.mode = MockMode::Planted;
        cfg.planted_rows = plant_condition_rows(&unique, cfg.num_layers, &opts.planted)?;
    }
    let words: Vec<Vec<String>> = unique.into_iter().map(|e| e.words).collect();
    Ok(encode(&words, &cfg)?)
}

/// An on-disk bundle, or a mock encoder over `examples` when `bundle` is
/// absent and `mock` is set.
pub fn open_source(
    bundle: Option<&Path>,
    mock: bool,
    examples: &[LabeledExample],
    opts: &MockOpts,
    seed: u64,
) -> Result<Box<dyn ActivationSource>> {
    match (bundle, mock) {
        (Some(_), true) => bail!("--bundle and --mock are mutually exclusive"),
        (Some(p), false) => Ok(Box::new(
            Bundle::open(p).with_context(|| format!("opening {}", p.display()))?,
        )),
        (None, true) => Ok(Box::new(mock_encoder(examples, opts, seed)?)),
        (None, false) => bail!("missing bundle: pass --bundle DIR or --mock"),
    }
}

#[derive(Args)]
pub struct MockEncodeArgs {
    /// Dataset files whose sentences are encoded.
    #[arg(long, required = true, num_args = 1..)]
    dataset: Vec<PathBuf>,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "SESAME_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    mock: MockOpts,
}

pub fn mock_encode(a: MockEncodeArgs, out: &Outputs) -> Result<()> {
    let examples = read_datasets(&a.dataset)?;
    let enc = mock_encoder(&examples, &a.mock, a.seed)?;
    out.dir(&a.out)?;
    for f in ["manifest.json", "embeddings.bin", "attentions.bin", "pe_minus_pos.bin"] {
        out.track(&a.out.join(f));
    }
    write_bundle(&a.out, &enc)?;
    println!("{}\t{} sentences", a.out.display(), enc.manifest().sentences.len());
    Ok(())
}
