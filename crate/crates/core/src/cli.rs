//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, unknown
//! configuration keys), 2 on runtime failures.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::dataset::{extract_state_pairs, load_image, AnnotationTimeline, Split};
use crate::decoder::SearchStrategy;
use crate::encoder::ImageInput;
use crate::error::Error;
use crate::metrics::{read_reports, write_reports, EvalOptions};
use crate::model::PairInput;
use crate::plots;
use crate::synthetic::{generate_dataset, GeneratorConfig};
use crate::training::{apply_overrides, Checkpoint, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "opcap", version, about = "Operative-action captioning from image pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic grid-world dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// `key=value` override of any generator setting; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Extract (before, after) frame pairs from an annotation timeline.
    ExtractPairs {
        #[arg(long)]
        timeline: PathBuf,
        /// Seconds kept on each side of a change.
        #[arg(long, default_value_t = 1.0)]
        margin: f64,
        /// JSONL output; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a captioner.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// `key=value` override with dotted keys, e.g. `loss.alpha_mode=linear_int(0.9)`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Caption a split and write the metric report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        strategy: Option<SearchStrategy>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Row label in the report.
        #[arg(long, default_value = "model")]
        system: String,
    },
    /// Caption one image pair.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image_a: PathBuf,
        #[arg(long)]
        image_b: PathBuf,
        #[arg(long)]
        strategy: Option<SearchStrategy>,
    },
    /// Render loss curves and metric bars as SVG.
    ReportPlots {
        /// Training log; repeatable, one line per run.
        #[arg(long = "log")]
        logs: Vec<PathBuf>,
        /// Report file; repeatable, every row becomes a bar group entry.
        #[arg(long = "report")]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenData {
            config,
            count,
            seed,
            out,
            overrides,
        } => {
            let base = match config {
                Some(p) => GeneratorConfig::from_toml(&read_text(&p)?).map_err(usage)?,
                None => GeneratorConfig::default(),
            };
            let mut cfg = apply_overrides(&base, &overrides).map_err(usage)?;
            if let Some(c) = count {
                cfg.count = c;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(usage)?;
            let manifest = generate_dataset(&cfg, &out)?;
            println!("wrote {} files to {}", manifest.files.len(), out.display());
            println!("checksum {}", manifest.checksum);
        }
        Command::ExtractPairs { timeline, margin, out } => {
            let tl = AnnotationTimeline::read(&timeline)?;
            let ex = extract_state_pairs(&tl, margin).map_err(usage)?;
            let mut text = String::new();
            for p in &ex.pairs {
                text.push_str(&serde_json::to_string(p).map_err(Error::from)?);
                text.push('\n');
            }
            for s in &ex.skipped {
                eprintln!("skipped: {s}");
            }
            match out {
                Some(p) => {
                    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                        fs::create_dir_all(dir).map_err(Error::from)?;
                    }
                    fs::write(&p, text).map_err(Error::from)?;
                    eprintln!("{} pairs, {} skipped", ex.pairs.len(), ex.skipped.len());
                }
                None => std::io::stdout().write_all(text.as_bytes()).map_err(Error::from)?,
            }
        }
        Command::Train {
            data,
            config,
            seed,
            epochs,
            out,
            overrides,
        } => {
            let base = match config {
                Some(p) => TrainConfig::from_toml(&read_text(&p)?).map_err(usage)?,
                None => TrainConfig::default(),
            };
            let mut cfg = base.with_overrides(&overrides).map_err(usage)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.data = data.display().to_string();
            cfg.validate().map_err(usage)?;
            let outcome = crate::training::train(&data, &cfg, &out, |e| eprintln!("{e}"))?;
            println!(
                "best epoch {} dev_bleu4 {:.6}; checkpoints in {}",
                outcome.best_epoch,
                outcome.best_dev_bleu4,
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            report,
            strategy,
            lexicon,
            system,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let data = match data {
                Some(d) => d,
                None if !ck.config.data.is_empty() => PathBuf::from(&ck.config.data),
                None => return Err(Failure::Usage("--data is required: checkpoint records no dataset".into())),
            };
            let opts = EvalOptions {
                split,
                strategy: strategy.unwrap_or(ck.config.search),
                system,
                lexicon,
            };
            let ev = crate::metrics::evaluate(&checkpoint, &data, &opts)?;
            let dir = report.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            fs::create_dir_all(dir).map_err(Error::from)?;
            write_reports(&report, std::slice::from_ref(&ev.report))?;
            let mut caps = String::new();
            for (id, c) in &ev.captions {
                caps.push_str(&format!("{id}\t{c}\n"));
            }
            fs::write(report.with_extension("captions.tsv"), caps).map_err(Error::from)?;
            let mut echo = ck.config.clone();
            echo.data = data.display().to_string();
            echo.search = opts.strategy;
            fs::write(
                report.with_extension("config.toml"),
                format!(
                    "# eval: checkpoint={} split={} system={}\n{}",
                    checkpoint.display(),
                    split,
                    opts.system,
                    echo.to_toml()
                ),
            )
            .map_err(Error::from)?;
            print!("{}", crate::metrics::render_reports(&[ev.report]));
        }
        Command::Caption {
            checkpoint,
            image_a,
            image_b,
            strategy,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let a = ImageInput::from_rgb(&load_image(&image_a)?);
            let b = ImageInput::from_rgb(&load_image(&image_b)?);
            let ids = ck
                .model
                .caption(PairInput::Images(&a, &b), strategy.unwrap_or(ck.config.search))?;
            println!("{}", crate::dataset::detokenize(&ids, &ck.vocab).join(" "));
        }
        Command::ReportPlots { logs, reports, out } => {
            if logs.is_empty() && reports.is_empty() {
                return Err(Failure::Usage("give at least one --log or --report".into()));
            }
            fs::create_dir_all(&out).map_err(Error::from)?;
            if !logs.is_empty() {
                let mut runs = Vec::new();
                for p in &logs {
                    let name = p
                        .parent()
                        .and_then(|d| d.file_name())
                        .unwrap_or(p.as_os_str())
                        .to_string_lossy()
                        .into_owned();
                    runs.push((name, plots::parse_log(&read_text(p)?)));
                }
                plots::loss_curves(&runs, &out.join("loss_curves.svg"))?;
            }
            if !reports.is_empty() {
                let mut rows = Vec::new();
                for p in &reports {
                    rows.extend(read_reports(p)?);
                }
                plots::metric_bars(&rows, &out.join("metrics.svg"))?;
            }
            println!("plots written to {}", out.display());
        }
    }
    Ok(())
}
