use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use sesame_core::actstore::EmbeddingLayer;
use sesame_core::stats::uniform_baseline;
use sesame_core::tasks::{ConditionId, ConditionSpec};

use crate::output::{num, Outputs};
use crate::svg::{Chart, Series};

#[derive(Args)]
pub struct ReportArgs {
    /// Directories holding `probe`, `confusion` and `regress` outputs.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Split plotted in the nth-token chart.
    #[arg(long, default_value = "gen")]
    nth_split: String,
}

type Accuracy = BTreeMap<EmbeddingLayer, f64>;

fn csv_files(dirs: &[PathBuf], suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for d in dirs {
        for e in std::fs::read_dir(d).with_context(|| format!("reading {}", d.display()))? {
            let p = e?.path();
            if p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(suffix))
            {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn stem_without<'a>(p: &'a Path, suffix: &str) -> &'a str {
    p.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix(suffix))
        .unwrap_or("")
}

fn read_accuracy(p: &Path) -> Result<Accuracy> {
    let mut rdr = csv::Reader::from_path(p).with_context(|| format!("reading {}", p.display()))?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let layer: EmbeddingLayer = rec
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e: String| anyhow::anyhow!(e))?;
        let acc: f64 = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .with_context(|| format!("{}: bad accuracy", p.display()))?;
        out.insert(layer, acc);
    }
    Ok(out)
}

fn layer_name(l: EmbeddingLayer) -> String {
    match l {
        EmbeddingLayer::Layer(0) => "pE".into(),
        EmbeddingLayer::Layer(l) => format!("layer {l}"),
        EmbeddingLayer::PeMinusPos => "pE-pos".into(),
    }
}

/// Layers on the x axis; the position-free variant becomes a flat line.
fn accuracy_chart(runs: &BTreeMap<String, Accuracy>) -> Chart {
    let mut series = Vec::new();
    for (name, acc) in runs {
        let points: Vec<(f64, f64)> = acc
            .iter()
            .filter_map(|(l, a)| match l {
                EmbeddingLayer::Layer(l) => Some((*l as f64, *a)),
                EmbeddingLayer::PeMinusPos => None,
            })
            .collect();
        if let Some(&pm) = acc.get(&EmbeddingLayer::PeMinusPos) {
            let lo = points.first().map_or(0.0, |p| p.0);
            let hi = points.last().map_or(1.0, |p| p.0);
            series.push(Series {
                name: format!("{name} (pE-pos)"),
                points: vec![(lo, pm), (hi, pm)],
            });
        }
        series.push(Series {
            name: name.clone(),
            points,
        });
    }
    Chart {
        title: "Probe accuracy by layer".into(),
        x_label: "layer".into(),
        y_label: "accuracy".into(),
        series,
        y_range: Some((0.0, 1.0)),
    }
}

/// `n` on the x axis, one line per layer.
fn nth_token_chart(by_n: &BTreeMap<usize, Accuracy>) -> Chart {
    let mut lines: BTreeMap<EmbeddingLayer, Vec<(f64, f64)>> = BTreeMap::new();
    for (&n, acc) in by_n {
        for (&l, &a) in acc {
            lines.entry(l).or_default().push((n as f64, a));
        }
    }
    Chart {
        title: "Nth-token probe accuracy".into(),
        x_label: "n".into(),
        y_label: "accuracy".into(),
        series: lines
            .into_iter()
            .map(|(l, points)| Series {
                name: layer_name(l),
                points,
            })
            .collect(),
        y_range: Some((0.0, 1.0)),
    }
}

fn parse_nth(stem: &str) -> Option<(usize, &str)> {
    let rest = stem.strip_prefix("nth_token_")?;
    let (n, split) = rest.split_once('_')?;
    Some((n.parse().ok()?, split))
}

pub fn run(a: ReportArgs, out: &Outputs) -> Result<()> {
    out.dir(&a.out)?;
    let mut wrote = 0;

    let mut runs = BTreeMap::new();
    let mut by_n = BTreeMap::new();
    for p in csv_files(&a.input, "_accuracy.csv")? {
        let stem = stem_without(&p, "_accuracy.csv");
        let acc = read_accuracy(&p)?;
        match parse_nth(stem) {
            Some((n, split)) if split == a.nth_split => {
                by_n.insert(n, acc);
            }
            Some(_) => {}
            None => {
                runs.insert(stem.to_string(), acc);
            }
        }
    }
    if !runs.is_empty() {
        out.write(&a.out.join("accuracy.svg"), accuracy_chart(&runs).render())?;
        wrote += 1;
    }
    if !by_n.is_empty() {
        out.write(&a.out.join("nth_token.svg"), nth_token_chart(&by_n).render())?;
        wrote += 1;
    }

    let mut conf: BTreeMap<ConditionId, Vec<(f64, f64)>> = BTreeMap::new();
    for p in csv_files(&a.input, "confusion_by_layer.csv")? {
        let mut rdr = csv::Reader::from_path(&p)?;
        for rec in rdr.records() {
            let rec = rec?;
            let c: ConditionId = rec.get(0).unwrap_or("").parse().map_err(|e| anyhow::anyhow!("{e}"))?;
            let layer: f64 = rec.get(1).unwrap_or("").parse()?;
            if let Ok(m) = rec.get(2).unwrap_or("").parse::<f64>() {
                conf.entry(c).or_default().push((layer, m));
            }
        }
    }
    if !conf.is_empty() {
        let chart = Chart {
            title: "Mean confusion by layer".into(),
            x_label: "layer".into(),
            y_label: "confusion (bits)".into(),
            series: conf
                .into_iter()
                .map(|(c, points)| Series {
                    name: c.to_string(),
                    points,
                })
                .collect(),
            y_range: None,
        };
        out.write(&a.out.join("confusion.svg"), chart.render())?;
        wrote += 1;
    }

    let summaries = csv_files(&a.input, "confusion_summary.csv")?;
    if !summaries.is_empty() {
        let mut w = out.csv(
            &a.out.join("table2.csv"),
            &["condition", "grand_mean", "uniform_baseline"],
        )?;
        let mut rows = BTreeMap::new();
        for p in summaries {
            let mut rdr = csv::Reader::from_path(&p)?;
            for rec in rdr.records() {
                let rec = rec?;
                let c: ConditionId = rec.get(0).unwrap_or("").parse().map_err(|e| anyhow::anyhow!("{e}"))?;
                rows.insert(c, rec.get(1).unwrap_or("").to_string());
            }
        }
        for (c, mean) in rows {
            let baseline = uniform_baseline(1 + ConditionSpec::canonical(c).distractor_count());
            w.write_record([c.to_string(), mean, num(baseline)])?;
        }
        w.flush()?;
        wrote += 1;
    }

    let regressions = csv_files(&a.input, ".csv")?
        .into_iter()
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("regression_"))
        })
        .collect::<Vec<_>>();
    if !regressions.is_empty() {
        let mut w = out.csv(
            &a.out.join("regression.csv"),
            &["task", "coefficient", "estimate", "std_error", "t", "p"],
        )?;
        for p in regressions {
            let task = stem_without(&p, ".csv").trim_start_matches("regression_").to_string();
            let mut rdr = csv::Reader::from_path(&p)?;
            for rec in rdr.records() {
                let rec = rec?;
                let mut row = vec![task.clone()];
                row.extend(rec.iter().map(str::to_string));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        wrote += 1;
    }

    if wrote == 0 {
        bail!("no probe, confusion or regression outputs found");
    }
    println!("{}\t{wrote} files", a.out.display());
    Ok(())
}
