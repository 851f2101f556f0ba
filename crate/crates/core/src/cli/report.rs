//! Rendering of stored evaluation reports into per-problem tables. Nothing
//! here recomputes a metric; every number comes from a report file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::commands::{AutoReport, BenchReport, CnnReport, FusionReport, ProblemTiming, AUTO_REPORT, FUSION_REPORT};
use super::run_dir::{read_json, BENCH_FILE, TIMING_FILE};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;

pub const FUSION_METHOD: &str = "CNN-Fusion";
pub const AUTO_METHOD: &str = "Auto-Classifier";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRow {
    pub problem: String,
    /// Aligned with [`ExperimentReport::methods`]; `None` when missing.
    pub reports: Vec<Option<EvalReport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub methods: Vec<String>,
    pub rows: Vec<ProblemRow>,
    /// Leaderboard files, relative to the run directory.
    pub leaderboards: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Auc,
    Tpr,
    Tnr,
    AverageAccuracy,
}

impl Metric {
    pub fn of(self, r: &EvalReport) -> Option<f64> {
        match self {
            Metric::Accuracy => Some(r.accuracy),
            Metric::Auc => r.auc,
            Metric::Tpr => Some(r.tpr),
            Metric::Tnr => Some(r.tnr),
            Metric::AverageAccuracy => Some(r.average_accuracy),
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Accuracy => "Acc",
            Metric::Auc => "AUC",
            Metric::Tpr => "TPR",
            Metric::Tnr => "TNR",
            Metric::AverageAccuracy => "AvgAcc",
        }
    }
}

pub const TABLE1: [Metric; 2] = [Metric::Accuracy, Metric::Auc];
pub const TABLE2: [Metric; 3] = [Metric::Tpr, Metric::Tnr, Metric::AverageAccuracy];

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

impl ExperimentReport {
    /// Collects every report under `<run>/reports/<problem>/`.
    pub fn collect(run: &Path) -> Result<Self> {
        let reports = run.join("reports");
        let problems: Vec<PathBuf> = if reports.is_dir() {
            sorted_dirs(&reports)?.into_iter().filter(|p| p.is_dir()).collect()
        } else {
            Vec::new()
        };
        let mut cnn_names: Vec<String> = Vec::new();
        for dir in &problems {
            for f in sorted_dirs(dir)? {
                let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                if let Some(arch) = name.strip_prefix("cnn-").and_then(|n| n.strip_suffix(".json")) {
                    if !cnn_names.iter().any(|c| c == arch) {
                        cnn_names.push(arch.to_owned());
                    }
                }
            }
        }
        cnn_names.sort();
        let mut methods = cnn_names.clone();
        methods.extend([FUSION_METHOD.to_owned(), AUTO_METHOD.to_owned()]);
        let mut rows = Vec::new();
        for dir in &problems {
            let mut cells: Vec<Option<EvalReport>> = Vec::with_capacity(methods.len());
            for arch in &cnn_names {
                let p = dir.join(format!("cnn-{arch}.json"));
                cells.push(if p.exists() { Some(read_json::<CnnReport>(&p)?.test) } else { None });
            }
            let f = dir.join(FUSION_REPORT);
            cells.push(if f.exists() { Some(read_json::<FusionReport>(&f)?.test) } else { None });
            let a = dir.join(AUTO_REPORT);
            cells.push(if a.exists() { Some(read_json::<AutoReport>(&a)?.test) } else { None });
            if cells.iter().any(Option::is_some) {
                rows.push(ProblemRow {
                    problem: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                    reports: cells,
                });
            }
        }
        if rows.is_empty() {
            return Err(Error::Data(format!("no evaluation reports under {}", reports.display())));
        }
        let mut leaderboards = Vec::new();
        let lb = run.join("leaderboards");
        if lb.is_dir() {
            for f in sorted_dirs(&lb)? {
                let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                if name.ends_with(".csv") && !name.ends_with(".timing.csv") {
                    leaderboards.push(format!("leaderboards/{name}"));
                }
            }
        }
        Ok(Self {
            methods,
            rows,
            leaderboards,
        })
    }

    /// Arithmetic mean of a metric over the problems that report it.
    pub fn mean(&self, method: usize, metric: Metric) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter_map(|r| r.reports[method].as_ref().and_then(|e| metric.of(e)))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Header and body of a table, with values as percentages to one decimal.
    /// The last row holds the column means.
    pub fn grid(&self, metrics: &[Metric]) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["Problem".to_owned()];
        for m in &self.methods {
            for metric in metrics {
                header.push(format!("{m} {}", metric.label()));
            }
        }
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), percent);
        let mut body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.problem.clone()];
                for rep in &r.reports {
                    for metric in metrics {
                        row.push(cell(rep.as_ref().and_then(|e| metric.of(e))));
                    }
                }
                row
            })
            .collect();
        let mut mean_row = vec!["μ".to_owned()];
        for i in 0..self.methods.len() {
            for metric in metrics {
                mean_row.push(cell(self.mean(i, *metric)));
            }
        }
        body.push(mean_row);
        (header, body)
    }
}

pub fn percent(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

pub fn render_markdown(header: &[String], body: &[Vec<String>]) -> String {
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    let mut out = line(header);
    out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for row in body {
        out.push_str(&line(row));
    }
    out
}

pub fn render_csv(header: &[String], body: &[Vec<String>]) -> Result<String> {
    let err = |e: csv::Error| Error::Format(format!("report csv: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for row in body {
        w.write_record(row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Timing tables from `timing.json` files and `bench.json`, when present.
pub fn render_timing(run: &Path, report: &ExperimentReport) -> Result<Option<String>> {
    let mut out = String::new();
    let mut rows = Vec::new();
    for r in &report.rows {
        let p = run.join("reports").join(&r.problem).join(TIMING_FILE);
        if p.exists() {
            let t: ProblemTiming = read_json(&p)?;
            let train: Vec<String> = t
                .train_seconds
                .iter()
                .map(|(k, v)| format!("{k} {:.2}", v / 60.0))
                .collect();
            rows.push(vec![
                r.problem.clone(),
                train.join(", "),
                t.search_seconds.map_or("-".into(), |s| format!("{:.2}", s / 60.0)),
                t.fusion.as_ref().map_or("-".into(), |f| format!("{:.5}", f.f_time_serial)),
                t.fusion.as_ref().map_or("-".into(), |f| format!("{:.5}", f.f_time_parallel)),
                t.auto_inference.map_or("-".into(), |a| format!("{:.5}", a.total_mean)),
            ]);
        }
    }
    if !rows.is_empty() {
        let header: Vec<String> = [
            "Problem",
            "Train minutes",
            "Search minutes",
            "Fusion serial s",
            "Fusion parallel s",
            "Auto-Classifier s",
        ]
        .map(String::from)
        .to_vec();
        out.push_str("## Training and inference time\n\n");
        out.push_str(&render_markdown(&header, &rows));
    }
    let bench = run.join("reports").join(BENCH_FILE);
    if bench.exists() {
        let b: BenchReport = read_json(&bench)?;
        let mut rows = Vec::new();
        let ms = |s: &super::commands::Stats| format!("{:.3} ± {:.3}", s.mean * 1e3, s.stddev * 1e3);
        for p in &b.problems {
            for n in &p.networks {
                rows.push(vec![p.problem.clone(), n.network.clone(), ms(&n.inference)]);
            }
            rows.push(vec![p.problem.clone(), format!("{FUSION_METHOD} (serial, measured)"), ms(&p.fusion.measured_serial)]);
            if let Some(a) = &p.auto_classifier {
                rows.push(vec![p.problem.clone(), format!("{AUTO_METHOD} extractor"), ms(&a.extractor)]);
                rows.push(vec![p.problem.clone(), format!("{AUTO_METHOD} head"), ms(&a.head)]);
            }
        }
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!(
            "## Single-image inference (ms, {} runs after {} warm-up)\n\n",
            b.repeats, b.warmup
        ));
        out.push_str(&render_markdown(&["Problem".into(), "Model".into(), "Time".into()], &rows));
    }
    Ok((!out.is_empty()).then_some(out))
}

/// Writes `table1`/`table2` as markdown and CSV, plus `timing.md` when timing
/// data exists. Returns the collected report.
pub fn cmd_report(run: &Path) -> Result<ExperimentReport> {
    let report = ExperimentReport::collect(run)?;
    let dir = run.join("reports");
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    for (stem, metrics, title) in [
        ("table1", &TABLE1[..], "Test accuracy and AUC (%)"),
        ("table2", &TABLE2[..], "Test TPR, TNR and average accuracy (%)"),
    ] {
        let (header, body) = report.grid(metrics);
        let mut md = format!("# {title}\n\n");
        md.push_str(&render_markdown(&header, &body));
        if !report.leaderboards.is_empty() {
            md.push_str(&format!("\nLeaderboards: {}\n", report.leaderboards.join(", ")));
        }
        write(&format!("{stem}.md"), md)?;
        write(&format!("{stem}.csv"), render_csv(&header, &body)?)?;
    }
    if let Some(t) = render_timing(run, &report)? {
        write("timing.md", t)?;
    }
    Ok(report)
}
