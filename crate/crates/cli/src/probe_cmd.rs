use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use sesame_core::actstore::{EmbeddingLayer, Pooling};
use sesame_core::probe::{evaluate_models, load_model, save_model, sweep_layers, ProbeModel, Sweep, TrainConfig};
use sesame_core::tasks::{LabeledExample, TaskId};

use crate::encode::{open_source, read_datasets, MockOpts};
use crate::output::{num, Outputs};

#[derive(Args)]
pub struct ProbeArgs {
    /// Training split. Without it, `--models` must point at saved probes.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Evaluation split as `NAME=PATH`, or `PATH` to name it after the file.
    #[arg(long, required = true, num_args = 1..)]
    eval: Vec<String>,
    #[arg(long, conflicts_with = "mock")]
    bundle: Option<PathBuf>,
    /// Encode the sentences with the mock encoder instead of reading a bundle.
    #[arg(long)]
    mock: bool,
    #[command(flatten)]
    mock_opts: MockOpts,
    /// Layers to probe, e.g. `pe,1,2,pe_minus_pos`; default is every stored layer.
    #[arg(long, value_delimiter = ',')]
    layers: Vec<String>,
    /// Saved probes to evaluate (eval-only mode).
    #[arg(long, conflicts_with = "train")]
    models: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value = "first")]
    pooling: Pooling,
    #[arg(long, env = "SESAME_SEED", default_value_t = 0)]
    seed: u64,
}

struct EvalSet {
    name: String,
    examples: Vec<LabeledExample>,
}

fn slug(task: TaskId) -> String {
    task.to_string().replace('/', "_")
}

fn split_name(spec: &str, prefix: &str) -> (String, PathBuf) {
    if let Some((name, path)) = spec.split_once('=') {
        return (name.to_string(), PathBuf::from(path));
    }
    let path = PathBuf::from(spec);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = stem
        .strip_prefix(prefix)
        .and_then(|s| s.strip_prefix('_'))
        .filter(|s| !s.is_empty())
        .unwrap_or(&stem)
        .to_string();
    (name, path)
}

fn parse_layers(specs: &[String]) -> Result<Vec<EmbeddingLayer>> {
    specs
        .iter()
        .map(|s| match s.as_str() {
            "pe" => Ok(EmbeddingLayer::Layer(0)),
            s => s.parse().map_err(|e: String| anyhow::anyhow!(e)),
        })
        .collect()
}

fn load_models(dir: &Path) -> Result<Vec<ProbeModel>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "probe"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .probe files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| load_model(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

pub fn run(a: ProbeArgs, out: &Outputs) -> Result<()> {
    let train = match &a.train {
        Some(p) => Some(read_datasets(std::slice::from_ref(p))?),
        None => None,
    };
    let models = match (&train, &a.models) {
        (None, Some(dir)) => Some(load_models(dir)?),
        (None, None) => bail!("pass --train or --models"),
        _ => None,
    };
    let task = match (&train, &models) {
        (Some(t), _) => t.first().context("empty training split")?.task,
        (_, Some(m)) => m[0].task,
        _ => unreachable!(),
    };
    let task_slug = slug(task);

    let mut evals = Vec::new();
    for spec in &a.eval {
        let (name, path) = split_name(spec, &task_slug);
        evals.push(EvalSet {
            name,
            examples: read_datasets(&[path])?,
        });
    }

    let mut all: Vec<LabeledExample> = train.iter().flatten().cloned().collect();
    for e in &evals {
        all.extend(e.examples.iter().cloned());
    }
    let source = open_source(a.bundle.as_deref(), a.mock, &all, &a.mock_opts, a.seed)?;
    let eval_sets: Vec<(&str, &[LabeledExample])> =
        evals.iter().map(|e| (e.name.as_str(), e.examples.as_slice())).collect();

    let sweep: Sweep = match (train, models) {
        (Some(train), _) => {
            let layers = if a.layers.is_empty() {
                source.manifest().probe_layers()
            } else {
                parse_layers(&a.layers)?
            };
            let cfg = TrainConfig {
                learning_rate: a.lr,
                epochs: a.epochs,
                batch_size: a.batch_size,
                seed: a.seed,
                pooling: a.pooling,
                ..TrainConfig::default()
            };
            let sweep = sweep_layers(&train, &eval_sets, source.as_ref(), &layers, &cfg)?;
            let dir = a.out.join("models");
            out.dir(&dir)?;
            for (layer, model) in &sweep.models {
                let path = dir.join(format!("layer_{layer}.probe"));
                out.track(&path);
                save_model(&path, model)?;
            }
            sweep
        }
        (None, Some(models)) => evaluate_models(models, &eval_sets, source.as_ref())?,
        _ => unreachable!(),
    };

    out.dir(&a.out)?;
    for report in &sweep.reports {
        let acc_path = a.out.join(format!("{task_slug}_{}_accuracy.csv", report.split));
        let mut acc = out.csv(&acc_path, &["layer", "accuracy", "n"])?;
        let err_path = a.out.join(format!("{task_slug}_{}_errors.csv", report.split));
        let mut err = out.csv(
            &err_path,
            &["layer", "example", "predicted", "predicted_word", "sentence"],
        )?;
        let set = evals.iter().find(|e| e.name == report.split).expect("split present");
        for (layer, ev) in &report.layers {
            acc.write_record([layer.to_string(), num(ev.accuracy), ev.n.to_string()])?;
            for c in &ev.errors {
                let word = set.examples[c.example]
                    .words
                    .get(c.predicted)
                    .cloned()
                    .unwrap_or_default();
                err.write_record([
                    layer.to_string(),
                    c.example.to_string(),
                    c.predicted.to_string(),
                    word,
                    c.sentence.clone(),
                ])?;
            }
            println!("{}\t{layer}\t{}", report.split, num(ev.accuracy));
        }
        acc.flush()?;
        err.flush()?;
    }
    Ok(())
}
