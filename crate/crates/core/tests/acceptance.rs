//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Runs every criterion for real, including the 5000-sample benchmark, so a
//! full run takes most of an hour on one core. The process exits 0 after
//! printing the table; set `OPCAP_ACCEPTANCE_STRICT=1` to exit 1 when any
//! line is FAIL.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::*;
use opcap::dataset::{extract_state_pairs, scene_graph_targets, SgMode, Split};
use opcap::decoder::SearchStrategy;
use opcap::metrics::{bleu, cider, corpus_bleu, evaluate, rouge_l_multi, EvalOptions, EvalReport, ROUGE_BETA};
use opcap::training::{
    alpha_schedule, baseline_loss, combined_loss, dataset_vocabulary, exact_match, generate_all, load_prepared,
    lr_schedule, train_prepared, AlphaMode, BranchTerms, Checkpoint, LossConfig, TrainConfig,
};
use rand::Rng;

const METRIC_TOL: f64 = 1e-9;
const METRIC_CASES: u64 = 50;
const METRIC_BUDGET: Duration = Duration::from_secs(10);

const GRAD_TOL: f64 = 1e-4;
const GRAD_SAMPLES: usize = 100;
const GRAD_MAX_PARAMS: usize = 10_000;
const GRAD_BUDGET: Duration = Duration::from_secs(60);

const ALGEBRA_TOL: f64 = 1e-12;
const ALGEBRA_TUPLES: usize = 1000;

const OVERFIT_SAMPLES: usize = 100;
const OVERFIT_EPOCHS: usize = 200;
const OVERFIT_TARGET: f64 = 0.95;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);

const BENCH_SAMPLES: usize = 5000;
const BENCH_SEEDS: [u64; 3] = [1, 2, 3];
const BENCH_CIDER_SLACK: f64 = 0.01;
const BENCH_BUDGET: Duration = Duration::from_secs(2 * 3600);

const STRUCT_INSTANCES: usize = 1000;
const PROBE: usize = 32;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

type Check = Result<String, String>;

fn metric_oracles() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..METRIC_CASES {
        let c = metric_case(1000 + seed);
        for (h, rs) in c.hyps.iter().zip(&c.refs) {
            for (g, w) in bleu(h, rs, 4).iter().zip(bleu_oracle(h, rs)) {
                worst = worst.max((g - w).abs());
            }
            worst = worst.max((rouge_l_multi(h, rs, ROUGE_BETA) - rouge_oracle(h, rs, ROUGE_BETA)).abs());
        }
        for (g, w) in corpus_bleu(&c.hyps, &c.refs, 4).iter().zip(corpus_bleu_oracle(&c.hyps, &c.refs)) {
            worst = worst.max((g - w).abs());
        }
        let ci = cider(&c.hyps, &c.refs);
        if !ci.degenerate {
            worst = worst.max((ci.score - cider_oracle(&c.hyps, &c.refs)).abs());
        }
    }
    let t = start.elapsed();
    let msg = format!("{METRIC_CASES} cases, max |diff| {worst:.1e}, {:.2}s", t.as_secs_f64());
    if worst <= METRIC_TOL && t < METRIC_BUDGET {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn gradients() -> Check {
    let start = Instant::now();
    let g = gradient_check(1, GRAD_SAMPLES);
    let t = start.elapsed();
    let msg = format!(
        "{} params, {} sampled, max rel err {:.2e}, {:.2}s",
        g.params,
        g.checked,
        g.max_rel,
        t.as_secs_f64()
    );
    if g.params <= GRAD_MAX_PARAMS && g.checked == GRAD_SAMPLES && g.max_rel <= GRAD_TOL && t < GRAD_BUDGET {
        Ok(msg)
    } else {
        Err(format!("{msg}; worst {}", g.worst))
    }
}

fn loss_algebra() -> Check {
    let mut r = rng(42);
    let mut worst: f64 = 0.0;
    for _ in 0..ALGEBRA_TUPLES {
        let cfg = LossConfig {
            lambda_l1: r.random_range(0.0..1.0),
            lambda_ent: r.random_range(0.0..1.0),
            ..LossConfig::default()
        };
        let cap = BranchTerms {
            loss: r.random_range(0.0..10.0),
            l1: r.random_range(0.0..1.0),
            ent: r.random_range(0.0..3f64.ln()),
        };
        let sgr = BranchTerms {
            loss: r.random_range(0.0..10.0),
            l1: r.random_range(0.0..1.0),
            ent: r.random_range(0.0..3f64.ln()),
        };
        let c = combined_loss(cap, sgr, 1.0, &cfg).map_err(|e| e.to_string())?;
        let b = baseline_loss(cap.loss, cap.l1, cap.ent, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max((c - b).abs());
    }
    if worst > ALGEBRA_TOL {
        return Err(format!("combined(alpha=1) vs baseline max |diff| {worst:e}"));
    }

    let blocks = |lo: f64, hi: f64| -> Vec<f64> { (0..6).flat_map(|b| [if b % 2 == 0 { lo } else { hi }; 10]).collect() };
    let expected = [
        (AlphaMode::alternative(1.0), blocks(0.0, 1.0)),
        (AlphaMode::alternative(0.9), blocks(0.1, 0.9)),
        (AlphaMode::LinearInt(0.9), vec![0.9; 60]),
    ];
    for (mode, want) in &expected {
        let got: Vec<f64> = (0..60).map(|e| alpha_schedule(e, mode)).collect();
        if &got != want {
            return Err(format!("{mode}: got {got:?}"));
        }
    }
    let lrs: Vec<f64> = [0, 20, 40].map(lr_schedule).to_vec();
    let want = [0.01, 0.001, 0.0001];
    if lrs.iter().zip(want).any(|(a, b)| (a - b).abs() > ALGEBRA_TOL) {
        return Err(format!("lr at 0/20/40 = {lrs:?}"));
    }
    Ok(format!(
        "{ALGEBRA_TUPLES} tuples max |diff| {worst:.1e}; 3 alpha patterns over 60 epochs; lr {lrs:?}"
    ))
}

fn overfit() -> Check {
    let start = Instant::now();
    let cfg = TrainConfig::read(&configs_dir().join("small.toml")).map_err(|e| e.to_string())?;
    if cfg.seed != 1 || cfg.epochs != OVERFIT_EPOCHS || cfg.train_limit != OVERFIT_SAMPLES {
        return Err("configs/small.toml does not describe the overfit run".into());
    }
    // enough samples that the train split holds at least 100
    let dir = dataset(OVERFIT_SAMPLES * 13 / 10, 1);
    let vocab = dataset_vocabulary(dir.path(), cfg.min_count).map_err(|e| e.to_string())?;
    let mut train = load_prepared(dir.path(), Split::Train, &vocab, &cfg).map_err(|e| e.to_string())?;
    train.truncate(cfg.train_limit);
    if train.len() != OVERFIT_SAMPLES {
        return Err(format!("only {} training samples", train.len()));
    }
    let out = train_prepared(&train, &[], &vocab, &cfg, None, |_| {}).map_err(|e| e.to_string())?;
    let acc = exact_match(&out.last.model, &train, SearchStrategy::Greedy).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let msg = format!(
        "exact match {:.1}% after {} epochs, final loss {:.4}, {:.0}s",
        100.0 * acc,
        out.log.len(),
        out.log.last().map_or(f64::NAN, |e| e.total),
        t.as_secs_f64()
    );
    if acc >= OVERFIT_TARGET && t <= OVERFIT_BUDGET {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn benchmark() -> Check {
    let start = Instant::now();
    let base_cfg = TrainConfig::read(&configs_dir().join("benchmark.toml")).map_err(|e| e.to_string())?;
    let dir = dataset(BENCH_SAMPLES, 1);
    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    for seed in BENCH_SEEDS {
        for (label, mode) in [("baseline", AlphaMode::Baseline), ("linear_int_0.9", AlphaMode::LinearInt(0.9))] {
            let mut cfg = base_cfg.clone();
            cfg.seed = seed;
            cfg.loss.alpha_mode = mode;
            cfg.loss.sg_mode = SgMode::All;
            let run = dir.path().join(format!("{label}_{seed}"));
            opcap::training::train(dir.path(), &cfg, &run, |_| {}).map_err(|e| e.to_string())?;
            let opts = EvalOptions {
                system: format!("{label}_{seed}"),
                ..EvalOptions::default()
            };
            let ev = evaluate(&run.join("last.ckpt"), dir.path(), &opts).map_err(|e| e.to_string())?;
            eprintln!(
                "  benchmark {label} seed {seed}: noun-F {:.4} verb-F {:.4} CIDEr {:.4} BLEU-4 {:.4} ({:.0}s elapsed)",
                ev.report.noun.f,
                ev.report.verb.f,
                ev.report.cider,
                ev.report.corpus_bleu[3],
                start.elapsed().as_secs_f64()
            );
            rows.push((label.to_string(), ev.report));
        }
    }
    let mean = |label: &str, f: fn(&EvalReport) -> f64| {
        let v: Vec<f64> = rows.iter().filter(|(l, _)| l == label).map(|(_, r)| f(r)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (bn, bv, bc) = (
        mean("baseline", |r| r.noun.f),
        mean("baseline", |r| r.verb.f),
        mean("baseline", |r| r.cider),
    );
    let (ln, lv, lc) = (
        mean("linear_int_0.9", |r| r.noun.f),
        mean("linear_int_0.9", |r| r.verb.f),
        mean("linear_int_0.9", |r| r.cider),
    );
    let t = start.elapsed();
    let msg = format!(
        "mean over seeds, baseline vs linear_int(0.9)/all: noun-F {bn:.4} vs {ln:.4}, verb-F {bv:.4} vs {lv:.4}, CIDEr {bc:.4} vs {lc:.4}; {:.0}s",
        t.as_secs_f64()
    );
    if ln >= bn && lv >= bv && lc >= bc - BENCH_CIDER_SLACK && t <= BENCH_BUDGET {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn structural_oracles() -> Check {
    let vocab = role_vocab();
    let mut r = rng(2024);
    for i in 0..STRUCT_INSTANCES {
        let a = random_triplets(&mut r, 6);
        let b = random_triplets(&mut r, 6);
        let max = 1 + i % 8;
        let s = sample_with(&a, &b);
        if scene_graph_targets(&s, SgMode::Diff, &vocab, max) != diff_targets_oracle(&a, &b, &vocab, max) {
            return Err(format!("diff targets disagree on instance {i}"));
        }
    }
    let mut pairs = 0;
    for i in 0..STRUCT_INSTANCES {
        let tl = random_timeline(&mut r);
        let margin = [0.5, 1.0, 1.5, 2.0][i % 4];
        let got = extract_state_pairs(&tl, margin).map_err(|e| e.to_string())?.pairs;
        if got != extraction_oracle(&tl, margin) {
            return Err(format!("extraction disagrees on instance {i}"));
        }
        pairs += got.len();
    }
    Ok(format!(
        "{STRUCT_INSTANCES} diff-target and {STRUCT_INSTANCES} timeline instances ({pairs} pairs) agree exactly"
    ))
}

fn determinism() -> Check {
    let dir = dataset(60, 7);
    let mut cfg = quick_config();
    cfg.epochs = 3;
    cfg.checkpoint_every = 1;
    cfg.loss.alpha_mode = AlphaMode::alternative(0.9);
    cfg.data = dir.path().display().to_string();
    let (ra, rb) = (dir.path().join("run_a"), dir.path().join("run_b"));
    let a = opcap::training::train(dir.path(), &cfg, &ra, |_| {}).map_err(|e| e.to_string())?;
    let b = opcap::training::train(dir.path(), &cfg, &rb, |_| {}).map_err(|e| e.to_string())?;
    let log = |p: &PathBuf| std::fs::read_to_string(p.join("train_log.txt")).unwrap_or_default();
    if a.log != b.log || log(&ra) != log(&rb) || log(&ra).is_empty() {
        return Err("epoch logs differ between identical runs".into());
    }
    let vocab = a.last.vocab.clone();
    let mut probe = load_prepared(dir.path(), Split::Train, &vocab, &cfg).map_err(|e| e.to_string())?;
    probe.truncate(PROBE);
    if probe.len() != PROBE {
        return Err(format!("probe batch has {} samples", probe.len()));
    }
    let loaded = Checkpoint::load(&ra.join("last.ckpt")).map_err(|e| e.to_string())?;
    for s in [SearchStrategy::Greedy, SearchStrategy::Beam(3)] {
        let before = generate_all(&a.last.model, &probe, s).map_err(|e| e.to_string())?;
        let after = generate_all(&loaded.model, &probe, s).map_err(|e| e.to_string())?;
        if before != after {
            return Err(format!("{s} captions change after save/load"));
        }
    }
    Ok(format!(
        "{} identical epoch lines; {PROBE}-sample probe identical after reload (greedy, beam(3))",
        a.log.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 7] = [
        ("metric-oracle-equivalence", metric_oracles),
        ("gradient-correctness", gradients),
        ("loss-algebra", loss_algebra),
        ("overfit-check", overfit),
        ("directional-benchmark", benchmark),
        ("symdiff-and-extraction-oracles", structural_oracles),
        ("determinism-and-checkpoint-roundtrip", determinism),
    ];
    let only: Option<String> = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match res {
            Ok(msg) => println!("PASS {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failed > 0 && std::env::var("OPCAP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
