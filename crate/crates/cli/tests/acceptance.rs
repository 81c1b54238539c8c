//! Acceptance checks. Each prints one PASS/FAIL line; the process exits
//! non-zero if any check fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sesame_core::actstore::{
    validate, write_bundle, ActivationSource, Bundle, BundleManifest, EmbeddingLayer, MemoryBundle, SentenceActivations,
};
use sesame_core::confusion::{condition_summary, confusion_score, ConfusionOptions, DependencyInstance, Direction};
use sesame_core::grammar::{builtin, Grammar, GrammarId, Symbol};
use sesame_core::mockenc::{encode, plant_condition_rows, MockConfig, MockMode, MockTokenizer, PlantedPattern};
use sesame_core::probe::{accumulate_gradient, evaluate, sentence_loss, train, Adam, TrainConfig};
use sesame_core::stats::{ols_fit, student_t_cdf, Design, DesignRow};
use sesame_core::tasks::{
    build_classification_dataset, build_condition_dataset, ClassificationTask, ConditionId, ConditionSpec,
    LabeledExample, NounConstruction, SpanMap, SplitSpec, TaskId,
};

const PLANTED_TOL: f64 = 1e-9;
const PLANTED_BUDGET: Duration = Duration::from_secs(1);
const BRUTE_TOL: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-5;
const ADAM_TOL: f64 = 1e-10;
const PROBE_BUDGET: Duration = Duration::from_secs(10);
const OLS_TOL: f64 = 1e-8;
const T_CDF_TOL: f64 = 1e-6;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Planted attention

fn planted_mean(id: ConditionId, pattern: PlantedPattern) -> Result<f64, String> {
    let examples = build_condition_dataset(&ConditionSpec::canonical(id), 20, 11).map_err(|e| e.to_string())?;
    let rows = plant_condition_rows(&examples, 2, &[pattern]).map_err(|e| e.to_string())?;
    let cfg = MockConfig {
        num_layers: 2,
        mode: MockMode::Planted,
        planted_rows: rows,
        ..MockConfig::default()
    };
    let words: Vec<Vec<String>> = examples.iter().map(|e| e.words.clone()).collect();
    let enc = encode(&words, &cfg).map_err(|e| e.to_string())?;
    let table = condition_summary(&examples, &enc, ConfusionOptions::default()).map_err(|e| e.to_string())?;
    let s = &table.conditions[&id];
    ensure(s.n_undefined == 0, || {
        format!("{id}: {} undefined scores", s.n_undefined)
    })?;
    let worst = s
        .layers
        .iter()
        .map(|l| l.mean.unwrap_or(f64::NAN))
        .chain(table.scores.iter().map(|r| r.score.unwrap_or(f64::NAN)))
        .fold(None::<(f64, f64)>, |acc, x| match acc {
            None => Some((x, x)),
            Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
        })
        .ok_or("no scores")?;
    ensure(worst.1 - worst.0 < PLANTED_TOL, || {
        format!("{id}: scores spread over {worst:?}")
    })?;
    Ok(worst.0)
}

fn planted_attention() -> Check {
    let start = Instant::now();
    let with = |k: usize| {
        ConditionId::ALL
            .into_iter()
            .find(|&c| ConditionSpec::canonical(c).distractor_count() == k)
            .expect("condition with that many distractors")
    };
    let two = with(1);
    let three = with(2);
    let cases = [
        (two, PlantedPattern::PointMass, 0.0),
        (three, PlantedPattern::PointMass, 0.0),
        (two, PlantedPattern::Uniform, 1.0),
        (three, PlantedPattern::Uniform, 3f64.log2()),
    ];
    let mut worst: f64 = 0.0;
    for (id, pattern, want) in cases {
        let got = planted_mean(id, pattern)?;
        ensure((got - want).abs() < PLANTED_TOL, || {
            format!("{id} {pattern:?}: {got} vs {want}")
        })?;
        worst = worst.max((got - want).abs());
    }
    let took = start.elapsed();
    ensure(took < PLANTED_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("max error {worst:.1e}, {took:.2?}"))
}

// Brute-force equivalence

fn brute_force(acts: &SentenceActivations, inst: &DependencyInstance, layer: usize, dir: Direction) -> Option<f64> {
    let t = acts.num_tokens;
    let heads = acts.num_heads;
    let mut agg = vec![0.0; inst.candidates.len()];
    for (c, cand) in inst.candidates.iter().enumerate() {
        for a in 0..heads {
            let mut s = 0.0;
            for &y in &inst.target {
                for &x in cand {
                    let (q, k) = match dir {
                        Direction::TargetAsQuery => (y, x),
                        Direction::CandidateAsQuery => (x, y),
                    };
                    s += acts.attentions[(((layer - 1) * heads + a) * t + q) * t + k] as f64;
                }
            }
            agg[c] += s / inst.target.len() as f64 / heads as f64;
        }
    }
    let total: f64 = agg.iter().sum();
    (total > 0.0 && agg[0] > 0.0).then(|| -(agg[0] / total).log2())
}

fn brute_force_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let sentences: Vec<Vec<String>> = (0..100)
        .map(|_| {
            let n = rng.random_range(2..9);
            (0..n)
                .map(|_| {
                    (0..rng.random_range(1..12))
                        .map(|_| rng.random_range(b'a'..=b'z') as char)
                        .collect()
                })
                .collect()
        })
        .collect();
    let cfg = MockConfig {
        num_layers: 3,
        num_heads: 4,
        hidden: 16,
        seed: 9,
        ..MockConfig::default()
    };
    let enc = encode(&sentences, &cfg).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for i in 0..100 {
        let acts = enc.sentence(i).map_err(|e| e.to_string())?;
        let t = acts.num_tokens;
        let mut tokens: Vec<usize> = (0..t).collect();
        for j in (1..t).rev() {
            tokens.swap(j, rng.random_range(0..=j));
        }
        let n_target = rng.random_range(1..=2);
        let (target, rest) = tokens.split_at(n_target);
        let mut candidates = Vec::new();
        let mut rest = rest;
        while !rest.is_empty() && (candidates.is_empty() || rng.random_bool(0.7)) {
            let k = rng.random_range(1..=rest.len().min(3));
            candidates.push(rest[..k].to_vec());
            rest = &rest[k..];
        }
        let inst = DependencyInstance::new(i, target.to_vec(), candidates, t).map_err(|e| e.to_string())?;
        for layer in 1..=cfg.num_layers {
            for dir in [Direction::TargetAsQuery, Direction::CandidateAsQuery] {
                let fast = confusion_score(&acts, &inst, layer, dir).map_err(|e| e.to_string())?;
                let slow = brute_force(&acts, &inst, layer, dir);
                match (fast, slow) {
                    (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                    (a, b) => ensure(a == b, || format!("instance {i}: {a:?} vs {b:?}"))?,
                }
                compared += 1;
            }
        }
    }
    ensure(worst < BRUTE_TOL, || format!("max deviation {worst}"))?;
    Ok(format!("100 instances, {compared} scores, max deviation {worst:.1e}"))
}

// Probe

fn gradient_check(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let h = rng.random_range(1..8);
        let n = rng.random_range(1..7);
        let w: Vec<f64> = (0..h).map(|_| rng.random_range(-1.5..1.5)).collect();
        let b = rng.random_range(-1.0..1.0);
        let x: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..h).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let mut grad = vec![0.0; h + 1];
        accumulate_gradient(&w, b, &x, &y, &mut grad);
        let eps = 1e-6;
        for j in 0..=h {
            let (mut wp, mut wm, mut bp, mut bm) = (w.clone(), w.clone(), b, b);
            if j < h {
                wp[j] += eps;
                wm[j] -= eps;
            } else {
                bp += eps;
                bm -= eps;
            }
            let fd = (sentence_loss(&wp, bp, &x, &y) - sentence_loss(&wm, bm, &x, &y)) / (2.0 * eps);
            let scale = fd.abs().max(grad[j].abs());
            if scale > 1e-6 {
                let rel = (fd - grad[j]).abs() / scale;
                ensure(rel < GRAD_REL_TOL, || {
                    format!("component {j}: fd {fd} vs analytic {}", grad[j])
                })?;
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

fn adam_check(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let cfg = TrainConfig::default();
    let n = 7;
    let start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut params = start.clone();
    let mut adam = Adam::new(n);
    adam.step(&mut params, &g, &cfg);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let m = (1.0 - 0.9) * g[i];
        let v = (1.0 - 0.999) * g[i] * g[i];
        let m_hat = m / (1.0 - 0.9);
        let v_hat = v / (1.0 - 0.999);
        let want = start[i] - 1e-3 * m_hat / (v_hat.sqrt() + 1e-8);
        worst = worst.max((params[i] - want).abs());
    }
    ensure(worst < ADAM_TOL, || format!("max deviation {worst}"))?;
    Ok(worst)
}

fn random_attention(rng: &mut ChaCha8Rng, acts: &mut SentenceActivations) {
    let t = acts.num_tokens;
    for row in acts.attentions.chunks_exact_mut(t) {
        let raw: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
        let sum: f64 = raw.iter().sum();
        for (o, r) in row.iter_mut().zip(raw) {
            *o = (r / sum) as f32;
        }
    }
}

/// Labeled words carry `+u`, all others `-u`, plus noise.
fn separable(n: usize, seed: u64) -> Result<(Vec<LabeledExample>, MemoryBundle), String> {
    let h = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f32> = (0..h).map(|_| rng.random_range(0.5..1.5)).collect();
    let m = BundleManifest::new("separable", 1, 1, h);
    let mut b = MemoryBundle::new(m.clone());
    let mut examples = Vec::new();
    for i in 0..n {
        let n_words = rng.random_range(3..10);
        let words: Vec<String> = (0..n_words).map(|w| format!("s{i}w{w}")).collect();
        let target = rng.random_range(0..n_words);
        let (tokens, align) = MockTokenizer::tokenize(&words);
        let mut acts = SentenceActivations::zeros(&m, tokens.len());
        for layer in 0..=1 {
            let out = acts.layer_mut(layer).map_err(|e| e.to_string())?;
            for (w, span) in align.iter().enumerate() {
                let sign = if w == target { 1.0 } else { -1.0 };
                for t in span.indices() {
                    for d in 0..h {
                        out[t * h + d] = sign * u[d] + rng.random_range(-0.1..0.1);
                    }
                }
            }
        }
        random_attention(&mut rng, &mut acts);
        b.push(format!("s{i}"), words.clone(), tokens, align, acts)
            .map_err(|e| e.to_string())?;
        examples.push(LabeledExample::one_hot(
            words,
            target,
            TaskId::NthToken(2),
            SpanMap::default(),
        ));
    }
    Ok((examples, b))
}

fn probe_correctness() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grad = gradient_check(&mut rng)?;
    let adam = adam_check(&mut rng)?;
    let (examples, b) = separable(1000, 3)?;
    let (train_set, dev) = examples.split_at(800);
    let model = train(train_set, &b, EmbeddingLayer::Layer(1), &TrainConfig::default()).map_err(|e| e.to_string())?;
    let acc = evaluate(&model, dev, &b).map_err(|e| e.to_string())?.accuracy;
    ensure(acc == 1.0, || format!("separable dev accuracy {acc}"))?;
    let took = start.elapsed();
    ensure(took < PROBE_BUDGET, || format!("took {took:?}"))?;
    Ok(format!(
        "gradient rel err {grad:.1e}, adam err {adam:.1e}, dev accuracy {acc}, {took:.2?}"
    ))
}

// Datasets

fn words_of(g: &Grammar, cats: &[&str]) -> HashSet<String> {
    let mut out = HashSet::new();
    for c in cats {
        let nt = g.nonterminal(c).expect("category present");
        for rhs in g.productions(nt) {
            for &sym in rhs {
                if let Symbol::T(_) = sym {
                    out.insert(g.symbol_name(sym).to_string());
                }
            }
        }
    }
    out
}

fn first_in(words: &[String], set: &HashSet<String>) -> Option<usize> {
    words.iter().position(|w| set.contains(w))
}

fn label_of(ex: &LabeledExample) -> Option<usize> {
    ex.labels.iter().position(|&l| l == 1)
}

fn share(examples: &[LabeledExample], ok: impl Fn(&LabeledExample) -> bool) -> f64 {
    examples.iter().filter(|e| ok(e)).count() as f64 / examples.len() as f64
}

fn dataset_properties() -> Check {
    let spec = SplitSpec::new(2000, 500, 500, 42);
    let g = builtin(GrammarId::MainAux);
    let aux = words_of(&g, &["Aux"]);
    let s = build_classification_dataset(ClassificationTask::MainAux, &spec).map_err(|e| e.to_string())?;
    let linear = |e: &LabeledExample| first_in(&e.words, &aux) == label_of(e);
    let (tr, dv, gn) = (share(&s.train, linear), share(&s.dev, linear), share(&s.gen, linear));
    ensure(tr == 1.0 && dv == 1.0 && gn == 0.0, || {
        format!("first-aux rule: train {tr}, dev {dv}, gen {gn}")
    })?;
    let all_main: Vec<&LabeledExample> = s.train.iter().chain(&s.dev).chain(&s.gen).collect();
    ensure(all_main.iter().all(|e| g.recognize(&e.words)), || {
        "main_aux sentence rejected".into()
    })?;

    let g = builtin(GrammarId::SubjectNoun);
    let nouns = words_of(&g, &["N", "NS", "Nadj+MN"]);
    let s = build_classification_dataset(ClassificationTask::SubjectNoun, &spec).map_err(|e| e.to_string())?;
    let compound = s.gen_subset(NounConstruction::Compound);
    let possessive = s.gen_subset(NounConstruction::Possessive);
    ensure(compound.len() + possessive.len() == s.gen.len(), || {
        "gen has unlabeled constructions".into()
    })?;
    let differs = |e: &LabeledExample| first_in(&e.words, &nouns) != label_of(e);
    let (c, p) = (share(&compound, differs), share(&possessive, differs));
    ensure(c == 1.0 && p == 1.0, || {
        format!("head differs from first noun: compound {c}, possessive {p}")
    })?;
    let all_subj: Vec<&LabeledExample> = s.train.iter().chain(&s.dev).chain(&s.gen).collect();
    ensure(all_subj.iter().all(|e| g.recognize(&e.words)), || {
        "subject_noun sentence rejected".into()
    })?;

    Ok(format!(
        "first-aux train {tr} dev {dv} gen {gn}; head != first noun on {} compound and {} possessive; {} sentences recognized",
        compound.len(),
        possessive.len(),
        all_main.len() + all_subj.len()
    ))
}

// Regression

fn synthetic_design() -> Design {
    Design {
        names: vec!["Intercept".into(), "x1".into(), "x2".into()],
        rows: (0..20)
            .map(|i| {
                let x1 = i as f64;
                let x2 = ((i * 7) % 5) as f64;
                DesignRow {
                    response: 1.5 + 0.3 * x1 - 0.8 * x2 + 0.5 * (i as f64).sin(),
                    predictors: vec![1.0, x1, x2],
                }
            })
            .collect(),
    }
}

/// Coefficients and standard errors from the normal equations, inverted by
/// Gauss-Jordan elimination.
fn normal_equations(d: &Design) -> (Vec<f64>, Vec<f64>) {
    let p = d.names.len();
    let mut a = vec![vec![0.0; 2 * p]; p];
    let mut xty = vec![0.0; p];
    for r in &d.rows {
        for i in 0..p {
            xty[i] += r.predictors[i] * r.response;
            for j in 0..p {
                a[i][j] += r.predictors[i] * r.predictors[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[p + i] = 1.0;
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, piv);
        let d0 = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= d0);
        let src = a[c].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != c {
                let f = row[c];
                row.iter_mut().zip(&src).for_each(|(v, s)| *v -= f * s);
            }
        }
    }
    let beta: Vec<f64> = (0..p).map(|i| (0..p).map(|j| a[i][p + j] * xty[j]).sum()).collect();
    let ssr: f64 = d
        .rows
        .iter()
        .map(|r| (r.response - r.predictors.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>()).powi(2))
        .sum();
    let s2 = ssr / (d.rows.len() - p) as f64;
    (beta, (0..p).map(|i| (s2 * a[i][p + i]).sqrt()).collect())
}

fn ols_correctness() -> Check {
    let d = synthetic_design();
    let fit = ols_fit(&d).map_err(|e| e.to_string())?;
    let (beta, se) = normal_equations(&d);
    // Reference t and p values from an established statistics package.
    let t_ref = [8.48905692263767, 20.263805988759707, -13.351552555296246];
    let p_ref = [1.612193666800468e-07, 2.415497755931214e-13, 1.9341223355774834e-10];
    let mut worst: f64 = 0.0;
    for (j, c) in fit.coefficients.iter().enumerate() {
        let t_oracle = beta[j] / se[j];
        for (got, want, what) in [
            (c.estimate, beta[j], "estimate"),
            (c.std_error, se[j], "std error"),
            (c.t, t_oracle, "t"),
            (c.t, t_ref[j], "reference t"),
            (c.p, p_ref[j], "p"),
        ] {
            let err = (got - want).abs();
            ensure(err < OLS_TOL, || format!("{} {what}: {got} vs {want}", c.name))?;
            worst = worst.max(err);
        }
    }
    let mut t_worst: f64 = 0.0;
    for i in -40..=40 {
        let t = i as f64 * 0.75;
        let cauchy = 0.5 + t.atan() / std::f64::consts::PI;
        t_worst = t_worst.max((student_t_cdf(t, 1.0) - cauchy).abs());
    }
    ensure(t_worst < T_CDF_TOL, || format!("t CDF df=1 deviation {t_worst}"))?;
    Ok(format!(
        "max OLS deviation {worst:.1e}, t CDF df=1 deviation {t_worst:.1e}"
    ))
}

// Bundle format

fn random_bundle(seed: u64) -> Result<MemoryBundle, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = BundleManifest::new(
        "random",
        rng.random_range(1..4),
        rng.random_range(1..4),
        rng.random_range(1..9),
    );
    m.has_pe_minus_pos = rng.random_bool(0.5);
    m.has_pre_embeddings = rng.random_bool(0.7);
    let mut b = MemoryBundle::new(m.clone());
    for s in 0..rng.random_range(1..12) {
        let words: Vec<String> = (0..rng.random_range(1..7))
            .map(|_| {
                (0..rng.random_range(1..20))
                    .map(|_| rng.random_range(b'a'..=b'z') as char)
                    .collect()
            })
            .collect();
        let (tokens, align) = MockTokenizer::tokenize(&words);
        let mut acts = SentenceActivations::zeros(&m, tokens.len());
        for x in acts.embeddings.iter_mut() {
            *x = loop {
                let v = f32::from_bits(rng.random());
                if v.is_finite() {
                    break v;
                }
            };
        }
        if let Some(p) = acts.pe_minus_pos.as_mut() {
            p.iter_mut().for_each(|x| *x = rng.random_range(-100.0..100.0));
        }
        random_attention(&mut rng, &mut acts);
        b.push(format!("r{s}"), words, tokens, align, acts)
            .map_err(|e| e.to_string())?;
    }
    Ok(b)
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn same_bits(a: &dyn ActivationSource, b: &dyn ActivationSource) -> Result<(), String> {
    ensure(a.manifest() == b.manifest(), || "manifest differs".into())?;
    for i in 0..a.manifest().sentences.len() {
        let (x, y) = (
            a.sentence(i).map_err(|e| e.to_string())?,
            b.sentence(i).map_err(|e| e.to_string())?,
        );
        ensure(bits(&x.embeddings) == bits(&y.embeddings), || {
            format!("sentence {i}: embeddings differ")
        })?;
        ensure(bits(&x.attentions) == bits(&y.attentions), || {
            format!("sentence {i}: attentions differ")
        })?;
        let pe = |v: &Option<Vec<f32>>| v.as_deref().map(bits);
        ensure(pe(&x.pe_minus_pos) == pe(&y.pe_minus_pos), || {
            format!("sentence {i}: pe_minus_pos differs")
        })?;
    }
    Ok(())
}

fn rejected(dir: &Path) -> bool {
    match Bundle::open(dir) {
        Err(_) => true,
        Ok(b) => validate(&b).is_err(),
    }
}

fn bundle_round_trip() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut corruptions = 0;
    for seed in 0..30 {
        let b = random_bundle(seed)?;
        let dir = tmp.path().join(format!("b{seed}"));
        write_bundle(&dir, &b).map_err(|e| e.to_string())?;
        let back = Bundle::open(&dir).map_err(|e| e.to_string())?;
        same_bits(&b, &back)?;

        let mut files = vec!["embeddings.bin", "attentions.bin"];
        if b.manifest().has_pe_minus_pos {
            files.push("pe_minus_pos.bin");
        }
        for f in files {
            let copy = tmp.path().join(format!("b{seed}_{f}"));
            std::fs::create_dir_all(&copy).map_err(|e| e.to_string())?;
            for g in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
                let g = g.map_err(|e| e.to_string())?.path();
                std::fs::copy(&g, copy.join(g.file_name().unwrap())).map_err(|e| e.to_string())?;
            }
            let target = copy.join(f);
            let len = std::fs::metadata(&target).map_err(|e| e.to_string())?.len();
            let cut = 1 + seed % 4.min(len);
            std::fs::OpenOptions::new()
                .write(true)
                .open(&target)
                .and_then(|h| h.set_len(len - cut))
                .map_err(|e| e.to_string())?;
            ensure(rejected(&copy), || format!("seed {seed}: truncated {f} accepted"))?;
            corruptions += 1;
        }
    }
    Ok(format!(
        "30 bundles bitwise identical, {corruptions} truncated payloads rejected"
    ))
}

// Full pipeline

fn sesame(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sesame"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "`sesame {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn check_csv(path: &Path, header: &[&str]) -> Result<usize, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(String::from)
        .collect();
    ensure(got == header, || format!("{}: header {got:?}", path.display()))?;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        ensure(rec.len() == header.len(), || format!("{}: ragged row", path.display()))?;
        rows += 1;
    }
    ensure(rows > 0, || format!("{}: no rows", path.display()))?;
    Ok(rows)
}

fn check_svg(path: &Path) -> Result<usize, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let root = doc.root_element();
    ensure(root.tag_name().name() == "svg", || {
        format!("{}: root is not svg", path.display())
    })?;
    ensure(root.attribute("viewBox").is_some(), || {
        format!("{}: no viewBox", path.display())
    })?;
    let lines = root.descendants().filter(|n| n.has_tag_name("polyline")).count();
    ensure(lines > 0, || format!("{}: no series", path.display()))?;
    Ok(lines)
}

fn full_pipeline() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = tmp.path();
    let split = ["--train-n", "200", "--dev-n", "50", "--gen-n", "50"];
    let mut args = vec!["generate", "--task", "main-aux", "--out", "data"];
    args.extend(split);
    sesame(d, &args)?;
    sesame(d, &["generate", "--condition", "all", "-n", "20", "--out", "data"])?;

    let main: String = std::fs::read_to_string(d.join("data/main_aux_train.tsv")).map_err(|e| e.to_string())?;
    let corpus: String = main
        .lines()
        .map(|l| l.split('\t').next().unwrap_or("").to_string() + "\n")
        .collect();
    std::fs::write(d.join("corpus.txt"), corpus).map_err(|e| e.to_string())?;
    sesame(
        d,
        &[
            "generate",
            "--task",
            "nth-token",
            "--corpus",
            "corpus.txt",
            "--tokenizer",
            "mock",
            "--min-n",
            "2",
            "--max-n",
            "3",
            "--train-n",
            "120",
            "--dev-n",
            "30",
            "--gen-n",
            "30",
            "--min-tokens",
            "5",
            "--out",
            "nth",
        ],
    )?;

    sesame(
        d,
        &[
            "mock-encode",
            "--dataset",
            "data/main_aux_train.tsv",
            "data/main_aux_dev.tsv",
            "data/main_aux_gen.tsv",
            "--out",
            "bundle",
        ],
    )?;
    sesame(d, &["validate-bundle", "bundle"])?;
    sesame(
        d,
        &[
            "probe",
            "--train",
            "data/main_aux_train.tsv",
            "--eval",
            "data/main_aux_dev.tsv",
            "data/main_aux_gen.tsv",
            "--bundle",
            "bundle",
            "--out",
            "probe",
        ],
    )?;
    for n in [2, 3] {
        let tr = format!("nth/nth_token_{n}_train.tsv");
        let gn = format!("nth/nth_token_{n}_gen.tsv");
        sesame(
            d,
            &["probe", "--train", &tr, "--eval", &gn, "--mock", "--out", "nth_probe"],
        )?;
    }
    let conditions: Vec<String> = ConditionId::ALL.iter().map(|c| format!("data/{c}.tsv")).collect();
    let mut args = vec!["confusion", "--mock", "--out", "conf", "--dataset"];
    args.extend(conditions.iter().map(String::as_str));
    sesame(d, &args)?;
    sesame(d, &["regress", "--scores", "conf/confusion_scores.csv", "--out", "reg"])?;
    sesame(
        d,
        &[
            "report",
            "--input",
            "probe",
            "nth_probe",
            "conf",
            "reg",
            "--out",
            "report",
        ],
    )?;

    let mut checked = 0;
    for (file, header) in [
        ("probe/main_aux_dev_accuracy.csv", &["layer", "accuracy", "n"][..]),
        ("probe/main_aux_gen_accuracy.csv", &["layer", "accuracy", "n"][..]),
        (
            "nth_probe/nth_token_3_gen_accuracy.csv",
            &["layer", "accuracy", "n"][..],
        ),
        (
            "conf/confusion_by_layer.csv",
            &["condition", "layer", "mean_confusion", "n_defined", "n_undefined"][..],
        ),
        (
            "conf/confusion_summary.csv",
            &["condition", "grand_mean", "n_defined", "n_undefined"][..],
        ),
        (
            "conf/confusion_scores.csv",
            &["condition", "example", "layer", "score"][..],
        ),
        (
            "reg/regression_agreement.csv",
            &["coefficient", "estimate", "std_error", "t", "p"][..],
        ),
        (
            "reg/regression_reflexive.csv",
            &["coefficient", "estimate", "std_error", "t", "p"][..],
        ),
        (
            "report/table2.csv",
            &["condition", "grand_mean", "uniform_baseline"][..],
        ),
        (
            "report/regression.csv",
            &["task", "coefficient", "estimate", "std_error", "t", "p"][..],
        ),
    ] {
        check_csv(&d.join(file), header)?;
        checked += 1;
    }
    let table2 = check_csv(
        &d.join("report/table2.csv"),
        &["condition", "grand_mean", "uniform_baseline"],
    )?;
    ensure(table2 == ConditionId::ALL.len(), || format!("table2 has {table2} rows"))?;
    for svg in [
        "conf/confusion.svg",
        "report/accuracy.svg",
        "report/confusion.svg",
        "report/nth_token.svg",
    ] {
        check_svg(&d.join(svg))?;
        checked += 1;
    }
    let accuracy_series = check_svg(&d.join("report/nth_token.svg"))?;
    ensure(accuracy_series == 6, || {
        format!("nth_token.svg has {accuracy_series} series, want 6")
    })?;
    Ok(format!("{checked} outputs checked"))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 7] = [
        ("confusion metric exactness on planted attention", planted_attention),
        ("confusion equals naive brute force", brute_force_equivalence),
        ("probe gradient, Adam step and separable task", probe_correctness),
        ("poverty-of-stimulus dataset properties", dataset_properties),
        ("OLS and t distribution", ols_correctness),
        ("bundle format round trip", bundle_round_trip),
        ("offline pipeline", full_pipeline),
    ];
    let mut failed = 0;
    for (name, f) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
