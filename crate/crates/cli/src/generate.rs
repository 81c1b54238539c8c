use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use sesame_core::mockenc::MockTokenizer;
use sesame_core::tasks::{
    build_classification_dataset, build_condition_dataset, build_nth_token_dataset, write_dataset, ClassificationTask,
    ConditionId, ConditionSpec, LabeledExample, LengthFilter, NounConstruction, SplitSpec,
};

use crate::output::Outputs;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    MainAux,
    SubjectNoun,
    NthToken,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TokenizerArg {
    /// One token per whitespace-separated word.
    Whitespace,
    /// The mock encoder's eight-character pieces.
    Mock,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Classification task to generate.
    #[arg(long, value_enum, conflicts_with = "condition")]
    task: Option<TaskArg>,
    /// Condition ids (A1..A4, R1..R8) or `all`.
    #[arg(long, value_delimiter = ',')]
    condition: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40000)]
    train_n: usize,
    #[arg(long, default_value_t = 10000)]
    dev_n: usize,
    #[arg(long, default_value_t = 10000)]
    gen_n: usize,
    /// Examples per condition.
    #[arg(short = 'n', long = "num", default_value_t = 10000)]
    num: usize,
    #[arg(long, env = "SESAME_SEED", default_value_t = 0)]
    seed: u64,
    /// Plain-text corpus, one sentence per line (nth-token only).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    min_n: usize,
    #[arg(long, default_value_t = 9)]
    max_n: usize,
    /// Token counting used for nth-token labels and the length filter.
    #[arg(long, value_enum, default_value = "whitespace")]
    tokenizer: TokenizerArg,
    #[arg(long, default_value_t = 10)]
    min_tokens: usize,
    #[arg(long, default_value_t = 30)]
    max_tokens: usize,
    /// Allow the same sentence in more than one split.
    #[arg(long)]
    no_dedupe: bool,
}

fn write_split(out: &Outputs, path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut w = out.create(path)?;
    write_dataset(&mut w, examples)?;
    w.flush()?;
    println!("{}\t{}", path.display(), examples.len());
    Ok(())
}

pub fn conditions(ids: &[String]) -> Result<Vec<ConditionId>> {
    let mut out = Vec::new();
    for id in ids {
        if id.eq_ignore_ascii_case("all") {
            out.extend(ConditionId::ALL);
        } else {
            out.push(id.parse().map_err(|e| anyhow::anyhow!("{e}"))?);
        }
    }
    out.dedup();
    Ok(out)
}

pub fn run(a: GenerateArgs, out: &Outputs) -> Result<()> {
    out.dir(&a.out)?;
    let mut split = SplitSpec::new(a.train_n, a.dev_n, a.gen_n, a.seed);
    split.dedupe_across_splits = !a.no_dedupe;

    if !a.condition.is_empty() {
        for id in conditions(&a.condition)? {
            let examples = build_condition_dataset(&ConditionSpec::canonical(id), a.num, a.seed)?;
            write_split(out, &a.out.join(format!("{id}.tsv")), &examples)?;
        }
        return Ok(());
    }

    match a.task {
        None => bail!("one of --task or --condition is required"),
        Some(TaskArg::NthToken) => {
            let corpus = a.corpus.as_ref().context("--corpus is required for nth-token")?;
            let text = std::fs::read_to_string(corpus).with_context(|| format!("reading {}", corpus.display()))?;
            let lines: Vec<&str> = text.lines().collect();
            if a.min_n < 2 || a.min_n > a.max_n {
                bail!("need 2 <= min-n <= max-n");
            }
            let filter = LengthFilter {
                min_tokens: a.min_tokens,
                max_tokens: a.max_tokens,
            };
            let token_len = match a.tokenizer {
                TokenizerArg::Whitespace => |_: &str| 1,
                TokenizerArg::Mock => MockTokenizer::token_len,
            };
            let data = build_nth_token_dataset(&lines, token_len, a.min_n..=a.max_n, filter, &split)?;
            for (n, s) in data {
                for (name, part) in [("train", &s.train), ("dev", &s.dev), ("gen", &s.gen)] {
                    write_split(out, &a.out.join(format!("nth_token_{n}_{name}.tsv")), part)?;
                }
            }
        }
        Some(t) => {
            let task = match t {
                TaskArg::MainAux => ClassificationTask::MainAux,
                _ => ClassificationTask::SubjectNoun,
            };
            let s = build_classification_dataset(task, &split)?;
            for (name, part) in [("train", &s.train), ("dev", &s.dev), ("gen", &s.gen)] {
                write_split(out, &a.out.join(format!("{task}_{name}.tsv")), part)?;
            }
            if task == ClassificationTask::SubjectNoun {
                for c in [NounConstruction::Compound, NounConstruction::Possessive] {
                    let path = a.out.join(format!("{task}_gen_{}.tsv", c.as_str()));
                    write_split(out, &path, &s.gen_subset(c))?;
                }
            }
        }
    }
    Ok(())
}
