use std::path::Path;
use std::process::{Command, Output};

use opcap::metrics::REPORT_COLUMNS;

fn opcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opcap")).args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"
epochs = 2
batch_size = 8
checkpoint_every = 1

[model]
attention_hidden = 8
embed = 8
hidden = 16
attention_dim = 8
sg_embed = 8
sg_hidden = 16
conv = [{ channels = 4, kernel = 4, stride = 4 }, { channels = 8, kernel = 2, stride = 2 }]
"#;

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = opcap(&["gen-data", "--count", "20", "--seed", "1", "--out", p(out)]);
        assert!(o.status.success(), "{}", text(&o.stderr));
    }
    let ma = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(ma, std::fs::read_to_string(b.join("manifest.txt")).unwrap());
    assert!(a.join("generator.toml").is_file());
    let c = dir.path().join("c");
    opcap(&["gen-data", "--count", "20", "--seed", "2", "--out", p(&c)]);
    assert_ne!(ma, std::fs::read_to_string(c.join("manifest.txt")).unwrap());
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    let o = opcap(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("Usage"));

    let o = opcap(&["gen-data", "--out", "/tmp/x", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let o = opcap(&["gen-data", "--count", "5", "--out", p(dir.path()), "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("no_such_key"));

    let o = opcap(&["train", "--data", p(&dir.path().join("missing")), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));

    assert_eq!(opcap(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_eval_caption_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    assert!(opcap(&["gen-data", "--count", "30", "--seed", "3", "--out", p(&data)]).status.success());

    let o = opcap(&[
        "train", "--data", p(&data), "--config", p(&cfg), "--seed", "4", "--out", p(&run),
        "--set", "loss.alpha_mode=linear_int(0.9)",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    for f in ["config.toml", "train_log.txt", "vocab.txt", "best.ckpt", "last.ckpt", "epoch_001.ckpt", "epoch_002.ckpt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let echo = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(echo.contains("seed = 4") && echo.contains("linear_int(0.9)"));
    assert_eq!(std::fs::read_to_string(run.join("train_log.txt")).unwrap().lines().count(), 2);

    let report = dir.path().join("eval/report.txt");
    let o = opcap(&["eval", "--checkpoint", p(&run.join("last.ckpt")), "--split", "test", "--report", p(&report)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let rep = std::fs::read_to_string(&report).unwrap();
    let mut lines = rep.lines();
    assert_eq!(lines.next().unwrap().split('\t').collect::<Vec<_>>(), REPORT_COLUMNS);
    assert_eq!(lines.next().unwrap().split('\t').count(), REPORT_COLUMNS.len());
    assert!(report.with_extension("config.toml").is_file());
    assert!(report.with_extension("captions.tsv").is_file());

    let o = opcap(&[
        "caption", "--checkpoint", p(&run.join("best.ckpt")),
        "--image-a", p(&data.join("images/s000000_a.png")),
        "--image-b", p(&data.join("images/s000000_b.png")),
        "--strategy", "beam(3)",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(text(&o.stdout).lines().count(), 1);

    let plots = dir.path().join("plots");
    let o = opcap(&[
        "report-plots", "--log", p(&run.join("train_log.txt")), "--report", p(&report), "--out", p(&plots),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(plots.join("loss_curves.svg").is_file() && plots.join("metrics.svg").is_file());
}

#[test]
fn extract_pairs_writes_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let tl = dir.path().join("tl.json");
    std::fs::write(
        &tl,
        r#"{"fps": 10, "end": 10, "events": [
            {"t": 1, "triplet": ["cup", "on", "table"]},
            {"t": 5, "triplet": ["cup", "in", "sink"]}]}"#,
    )
    .unwrap();
    let out = dir.path().join("pairs.jsonl");
    let o = opcap(&["extract-pairs", "--timeline", p(&tl), "--margin", "1", "--out", p(&out)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let lines: Vec<String> = std::fs::read_to_string(&out).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().any(|l| l.contains("\"added\"") && l.contains("\"frame_before\":40")));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["default.toml", "small.toml", "benchmark.toml"] {
        let cfg = opcap::training::TrainConfig::read(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.validate().unwrap();
    }
    let gen = std::fs::read_to_string(dir.join("generator.toml")).unwrap();
    opcap::synthetic::GeneratorConfig::from_toml(&gen).unwrap().validate().unwrap();
}
