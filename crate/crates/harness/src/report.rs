//! Result rendering: CSV, markdown, and accuracy-versus-budget plots.
//!
//! Rows are keyed by (surrogate, target, attack, epsilon, defense).
//! All inputs must carry the same dataset digest; numbers measured on
//! different image sets never land in one table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evalloop::EvalReport;

/// Refuses to merge reports measured on different datasets.
fn check_comparable(reports: &[EvalReport]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::data("no reports to render"));
    }
    let first = &reports[0].dataset_digest;
    for r in &reports[1..] {
        if &r.dataset_digest != first {
            return Err(Error::data(format!(
                "reports disagree on the evaluated dataset: digest {} (target {}) vs {} (target {})",
                &first[..12],
                reports[0].target,
                &r.dataset_digest[..12],
                r.target
            )));
        }
    }
    Ok(())
}

pub fn render_csv(reports: &[EvalReport]) -> Result<String> {
    check_comparable(reports)?;
    let mut out = String::from(
        "surrogate,target,attack,epsilon,defense,correct,total,accuracy,wilson_low,wilson_high\n",
    );
    for report in reports {
        for row in &report.rows {
            let a = &row.accuracy;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{:.4},{:.4},{:.4}",
                row.surrogate,
                report.target,
                row.attack,
                row.epsilon,
                row.defense,
                a.correct,
                a.total,
                a.percent,
                a.wilson_low,
                a.wilson_high
            )
            .unwrap();
        }
    }
    Ok(out)
}

pub fn render_markdown(reports: &[EvalReport]) -> Result<String> {
    check_comparable(reports)?;
    let mut out = String::from("# Robustness results\n\n");
    writeln!(
        out,
        "Dataset digest `{}`.\n",
        &reports[0].dataset_digest[..12]
    )
    .unwrap();
    for report in reports {
        writeln!(
            out,
            "Target `{}`: {} of {} images kept{}, measured in {:.1}s.\n",
            report.target,
            report.sample_count,
            report.dataset_size,
            if report.filtered_to_clean_correct {
                " (clean-correct filter on)"
            } else {
                " (no filtering)"
            },
            report.runtime_seconds
        )
        .unwrap();
    }
    out.push_str("| surrogate | target | attack | epsilon | defense | accuracy | 95% interval |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for report in reports {
        for row in &report.rows {
            let a = &row.accuracy;
            writeln!(
                out,
                "| {} | {} | {} | {:.4} | {} | {:.2}% | [{:.2}, {:.2}] |",
                row.surrogate,
                report.target,
                row.attack,
                row.epsilon,
                row.defense,
                a.percent,
                a.wilson_low,
                a.wilson_high
            )
            .unwrap();
        }
    }
    Ok(out)
}

const SERIES_COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

struct Series {
    defense: String,
    points: Vec<(f64, f64)>,
}

/// Accuracy against attack budget for one (surrogate, attack, target)
/// combination. Each defense mode becomes one line; the clean row
/// supplies the epsilon-zero point.
fn plot_series(report: &EvalReport, surrogate: &str, attack: &str) -> Vec<Series> {
    let mut series: Vec<Series> = Vec::new();
    let mut push = |defense: &str, eps: f64, acc: f64| {
        match series.iter_mut().find(|s| s.defense == defense) {
            Some(s) => s.points.push((eps, acc)),
            None => series.push(Series {
                defense: defense.to_string(),
                points: vec![(eps, acc)],
            }),
        }
    };
    for row in &report.rows {
        if row.attack == "clean" {
            push(&row.defense, 0.0, row.accuracy.percent);
        } else if row.surrogate == surrogate && row.attack == attack {
            push(&row.defense, row.epsilon, row.accuracy.percent);
        }
    }
    for s in &mut series {
        s.points
            .sort_by(|a, b| a.0.partial_cmp(&b.0).expect("epsilon is finite"));
    }
    series.retain(|s| s.points.len() > 1);
    series
}

fn render_svg(title: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 440.0);
    let (left, right, top, bottom) = (60.0, 170.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let max_eps = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let sx = |e: f64| left + pw * e / max_eps;
    let sy = |a: f64| top + ph * (1.0 - a / 100.0);
    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">"
    )
    .unwrap();
    writeln!(out, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>").unwrap();
    writeln!(
        out,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{title}</text>",
        left + pw / 2.0
    )
    .unwrap();
    for tick in 0..=4 {
        let acc = 25.0 * tick as f64;
        let y = sy(acc);
        writeln!(
            out,
            "<line x1=\"{left}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#ddd\"/>",
            left + pw
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{acc:.0}%</text>",
            left - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    for tick in 0..=4 {
        let eps = max_eps * tick as f64 / 4.0;
        let x = sx(eps);
        writeln!(
            out,
            "<line x1=\"{x}\" y1=\"{top}\" x2=\"{x}\" y2=\"{}\" stroke=\"#eee\"/>",
            top + ph
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{eps:.4}</text>",
            top + ph + 18.0
        )
        .unwrap();
    }
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">perturbation budget</text>",
        left + pw / 2.0,
        top + ph + 38.0
    )
    .unwrap();
    for (i, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(e, a)| format!("{:.1},{:.1}", sx(e), sy(a)))
            .collect();
        writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            path.join(" ")
        )
        .unwrap();
        for &(e, a) in &s.points {
            writeln!(
                out,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>",
                sx(e),
                sy(a)
            )
            .unwrap();
        }
        let ly = top + 16.0 * i as f64;
        writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>",
            left + pw + 12.0,
            ly
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\">{}</text>",
            left + pw + 26.0,
            ly + 9.0,
            s.defense
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes results.csv, results.md and one SVG plot per (target,
/// surrogate, attack) combination with at least two budget points.
/// Returns the written paths.
pub fn write_report_bundle(reports: &[EvalReport], dir: &Path) -> Result<Vec<PathBuf>> {
    check_comparable(reports)?;
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let emit = |name: String, text: String, written: &mut Vec<PathBuf>| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
        Ok(())
    };
    emit("results.csv".to_string(), render_csv(reports)?, &mut written)?;
    emit(
        "results.md".to_string(),
        render_markdown(reports)?,
        &mut written,
    )?;
    for report in reports {
        let mut combos: Vec<(String, String)> = Vec::new();
        for row in &report.rows {
            if row.attack == "clean" {
                continue;
            }
            let key = (row.surrogate.clone(), row.attack.clone());
            if !combos.contains(&key) {
                combos.push(key);
            }
        }
        for (surrogate, attack) in combos {
            let series = plot_series(report, &surrogate, &attack);
            if series.is_empty() {
                continue;
            }
            let title = format!("{attack} via {surrogate} against {}", report.target);
            let name = format!(
                "plot_{}_{}_{}.svg",
                slug(&attack),
                slug(&surrogate),
                slug(&report.target)
            );
            emit(name, render_svg(&title, &series), &mut written)?;
        }
    }
    Ok(written)
}
