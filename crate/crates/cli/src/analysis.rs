use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use sesame_core::confusion::{condition_summary, CandidateSpan, ConfusionOptions, ConfusionTable, Direction, ScoreRow};
use sesame_core::stats::{build_design, ols_fit, DesignMode, RegressionTask};
use sesame_core::tasks::ConditionId;

use crate::encode::{open_source, read_datasets, MockOpts};
use crate::output::{num, opt_num, Outputs};
use crate::svg::{Chart, Series};

#[derive(Args)]
pub struct ConfusionArgs {
    /// Condition dataset files.
    #[arg(long, required = true, num_args = 1..)]
    dataset: Vec<PathBuf>,
    #[arg(long, conflicts_with = "mock")]
    bundle: Option<PathBuf>,
    #[arg(long)]
    mock: bool,
    #[command(flatten)]
    mock_opts: MockOpts,
    #[arg(long, default_value = "target-as-query")]
    direction: Direction,
    #[arg(long, default_value = "head")]
    candidates: CandidateSpan,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "SESAME_SEED", default_value_t = 0)]
    seed: u64,
}

pub fn confusion_chart(table: &ConfusionTable) -> Chart {
    Chart {
        title: "Mean confusion by layer".into(),
        x_label: "layer".into(),
        y_label: "confusion (bits)".into(),
        series: table
            .conditions
            .values()
            .map(|c| Series {
                name: c.condition.to_string(),
                points: c
                    .layers
                    .iter()
                    .filter_map(|l| l.mean.map(|m| (l.layer as f64, m)))
                    .collect(),
            })
            .collect(),
        y_range: None,
    }
}

pub fn confusion(a: ConfusionArgs, out: &Outputs) -> Result<()> {
    let examples = read_datasets(&a.dataset)?;
    let source = open_source(a.bundle.as_deref(), a.mock, &examples, &a.mock_opts, a.seed)?;
    let opts = ConfusionOptions {
        direction: a.direction,
        candidate_span: a.candidates,
    };
    let table = condition_summary(&examples, source.as_ref(), opts)?;
    out.dir(&a.out)?;

    let mut by_layer = out.csv(
        &a.out.join("confusion_by_layer.csv"),
        &["condition", "layer", "mean_confusion", "n_defined", "n_undefined"],
    )?;
    let mut summary = out.csv(
        &a.out.join("confusion_summary.csv"),
        &["condition", "grand_mean", "n_defined", "n_undefined"],
    )?;
    for c in table.conditions.values() {
        for l in &c.layers {
            by_layer.write_record([
                c.condition.to_string(),
                l.layer.to_string(),
                opt_num(l.mean),
                l.n_defined.to_string(),
                l.n_undefined.to_string(),
            ])?;
        }
        summary.write_record([
            c.condition.to_string(),
            opt_num(c.grand_mean),
            c.n_defined.to_string(),
            c.n_undefined.to_string(),
        ])?;
        println!("{}\t{}", c.condition, opt_num(c.grand_mean));
    }
    by_layer.flush()?;
    summary.flush()?;

    let mut scores = out.csv(
        &a.out.join("confusion_scores.csv"),
        &["condition", "example", "layer", "score"],
    )?;
    for r in &table.scores {
        scores.write_record([
            r.condition.to_string(),
            r.example.to_string(),
            r.layer.to_string(),
            opt_num(r.score),
        ])?;
    }
    scores.flush()?;
    out.write(&a.out.join("confusion.svg"), confusion_chart(&table).render())?;
    Ok(())
}

#[derive(Args)]
pub struct RegressArgs {
    /// Per-example scores written by `confusion`.
    #[arg(long)]
    scores: PathBuf,
    /// `agreement` or `reflexive`; default fits each task present.
    #[arg(long)]
    task: Option<RegressionTask>,
    /// Regress per-(condition, layer) means instead of every score.
    #[arg(long)]
    means: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn read_scores(path: &std::path::Path) -> Result<Vec<ScoreRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| {
            rec.get(j)
                .with_context(|| format!("{}: row {} is short", path.display(), i + 1))
        };
        let condition: ConditionId = field(0)?.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
        let score = match field(3)? {
            "" => None,
            s => Some(s.parse::<f64>().with_context(|| format!("row {}: bad score", i + 1))?),
        };
        rows.push(ScoreRow {
            condition,
            example: field(1)?.parse()?,
            layer: field(2)?.parse()?,
            score,
        });
    }
    Ok(rows)
}

pub fn regress(a: RegressArgs, out: &Outputs) -> Result<()> {
    let scores = read_scores(&a.scores)?;
    let tasks: Vec<RegressionTask> = match a.task {
        Some(t) => vec![t],
        None => {
            let present: BTreeSet<&str> = scores
                .iter()
                .map(|r| RegressionTask::of(r.condition).as_str())
                .collect();
            present.into_iter().map(|s| s.parse().expect("known task")).collect()
        }
    };
    if tasks.is_empty() {
        bail!("no scores in {}", a.scores.display());
    }
    let mode = if a.means {
        DesignMode::Means
    } else {
        DesignMode::PerExample
    };
    out.dir(&a.out)?;
    for task in tasks {
        let design = build_design(task, &scores, mode)?;
        let fit = ols_fit(&design).with_context(|| format!("{} regression", task.as_str()))?;
        let path = a.out.join(format!("regression_{}.csv", task.as_str()));
        let mut w = out.csv(&path, &["coefficient", "estimate", "std_error", "t", "p"])?;
        for c in &fit.coefficients {
            w.write_record([c.name.clone(), num(c.estimate), num(c.std_error), num(c.t), num(c.p)])?;
        }
        w.flush()?;
        println!(
            "{}\tn={}\tdf={}\tR2={}",
            task.as_str(),
            design.rows.len(),
            fit.df,
            num(fit.r_squared)
        );
    }
    Ok(())
}
