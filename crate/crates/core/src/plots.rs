//! SVG loss curves from training logs and metric bars from eval reports.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::EvalReport;

/// Parses a `key=value ...` log into one map per line.
pub fn parse_log(text: &str) -> Vec<BTreeMap<String, String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .filter_map(|kv| kv.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

/// `(epoch, value)` points of a numeric log column; `-` entries are skipped.
pub fn series(rows: &[BTreeMap<String, String>], key: &str) -> Vec<(f64, f64)> {
    rows.iter()
        .filter_map(|r| {
            let e = r.get("epoch")?.parse().ok()?;
            let v = r.get(key)?.parse().ok()?;
            Some((e, v))
        })
        .collect()
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Inapplicable(format!("plotting failed: {e}"))
}

/// One panel per quantity, one line per run.
pub fn loss_curves(runs: &[(String, Vec<BTreeMap<String, String>>)], out: &Path) -> Result<()> {
    let keys = ["l_cap", "l_sgr", "dev_bleu4"];
    let root = SVGBackend::new(out, (1200, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, keys.len()));
    for (panel, key) in panels.iter().zip(keys) {
        let all: Vec<Vec<(f64, f64)>> = runs.iter().map(|(_, rows)| series(rows, key)).collect();
        let pts = all.iter().flatten();
        let x_max = pts.clone().map(|p| p.0).fold(1.0, f64::max);
        let y_max = pts.map(|p| p.1).fold(1e-9, f64::max) * 1.05;
        let mut chart = ChartBuilder::on(panel)
            .caption(key, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(50)
            .build_cartesian_2d(0.0..x_max, 0.0..y_max)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("epoch").draw().map_err(plot_err)?;
        for (i, ((name, _), pts)) in runs.iter().zip(&all).enumerate() {
            if pts.is_empty() {
                continue;
            }
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Grouped bars of the headline metrics, one group per metric and one bar
/// per system. CIDEr is divided by 10 to share the unit axis.
pub fn metric_bars(reports: &[EvalReport], out: &Path) -> Result<()> {
    let metrics: [(&str, fn(&EvalReport) -> f64); 6] = [
        ("BLEU-4", |r| r.bleu[3]),
        ("ROUGE-L", |r| r.rouge_l),
        ("CIDEr/10", |r| r.cider / 10.0),
        ("noun F", |r| r.noun.f),
        ("verb F", |r| r.verb.f),
        ("indep. verb F", |r| r.verb_independent.f),
    ];
    let n_sys = reports.len().max(1);
    let root = SVGBackend::new(out, (900, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let width = (metrics.len() * (n_sys + 1)) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption("automatic metrics", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(0.0..width, 0.0..1.05)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(metrics.len())
        .x_label_formatter(&|x| {
            let g = (*x / (n_sys + 1) as f64).floor() as usize;
            metrics.get(g).map_or(String::new(), |m| m.0.to_string())
        })
        .draw()
        .map_err(plot_err)?;
    for (s, rep) in reports.iter().enumerate() {
        let color = Palette99::pick(s).to_rgba();
        let bars = metrics.iter().enumerate().map(|(m, (_, f))| {
            let x0 = (m * (n_sys + 1) + s) as f64 + 0.5;
            Rectangle::new([(x0, 0.0), (x0 + 1.0, f(rep).clamp(0.0, 1.05))], color.filled())
        });
        chart
            .draw_series(bars)
            .map_err(plot_err)?
            .label(rep.system.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_parsing() {
        let rows = parse_log("epoch=1 l_cap=2.5 l_sgr=-\nepoch=2 l_cap=1.5 l_sgr=0.5\n");
        assert_eq!(series(&rows, "l_cap"), vec![(1.0, 2.5), (2.0, 1.5)]);
        assert_eq!(series(&rows, "l_sgr"), vec![(2.0, 0.5)]);
    }

    #[test]
    fn writes_svgs() {
        let dir = tempfile::tempdir().unwrap();
        let rows = parse_log("epoch=1 l_cap=2.5 l_sgr=- dev_bleu4=0.1\nepoch=2 l_cap=1.5 l_sgr=- dev_bleu4=0.2\n");
        let p = dir.path().join("loss.svg");
        loss_curves(&[("run".into(), rows)], &p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("<svg"));
        let lex = crate::metrics::PosLexicon::default();
        let r = EvalReport::score("sys", &[vec!["a", "b"]], &[vec!["a", "c"]], &lex);
        let q = dir.path().join("bars.svg");
        metric_bars(&[r], &q).unwrap();
        assert!(std::fs::read_to_string(&q).unwrap().contains("<svg"));
    }
}
