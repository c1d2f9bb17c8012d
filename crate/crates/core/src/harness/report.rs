use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Ablation, RunConfig};
use super::run::RunResult;
use crate::error::{Error, Result};
use crate::jsonl;

/// Mean and population standard deviation.
pub fn aggregate(accuracies: &[f64]) -> Result<(f64, f64)> {
    if accuracies.is_empty() {
        return Err(Error::Aggregation("no accuracies to aggregate".into()));
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Percentages with one decimal, spread in brackets: `88.8 (2.1)`.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.1} ({:.1})", mean * 100.0, std * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub ablation: Ablation,
    pub fingerprint: String,
    pub per_seed: BTreeMap<u64, f64>,
    pub mean: f64,
    pub std: f64,
}

impl RunReport {
    pub fn from_accuracies(
        task: impl Into<String>,
        ablation: Ablation,
        fingerprint: impl Into<String>,
        per_seed: BTreeMap<u64, f64>,
    ) -> Result<Self> {
        let accs: Vec<f64> = per_seed.values().copied().collect();
        let (mean, std) = aggregate(&accs)?;
        Ok(Self {
            task: task.into(),
            ablation,
            fingerprint: fingerprint.into(),
            per_seed,
            mean,
            std,
        })
    }

    pub fn cell(&self) -> String {
        format_cell(self.mean, self.std)
    }
}

/// Collects `result.json` for every configured seed. A missing or foreign
/// result fails the whole report.
pub fn collect_report(cfg: &RunConfig) -> Result<RunReport> {
    let fingerprint = cfg.fingerprint();
    let mut per_seed = BTreeMap::new();
    for &seed in &cfg.seeds {
        let path = cfg.run_dir(seed).join("result.json");
        if !path.exists() {
            return Err(Error::Aggregation(format!(
                "seed {seed} has no result at {}",
                path.display()
            )));
        }
        let result: RunResult = jsonl::read_json(&path)?;
        if result.seed != seed || result.fingerprint != fingerprint {
            return Err(Error::Aggregation(format!(
                "{} does not belong to seed {seed} of config {fingerprint}",
                path.display()
            )));
        }
        per_seed.insert(seed, result.accuracy);
    }
    RunReport::from_accuracies(cfg.task.clone(), cfg.ablation, fingerprint, per_seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Validation(format!("unknown report format `{other}`"))),
        }
    }
}

const HEADER: [&str; 7] = ["task", "ablation", "accuracy", "mean", "std", "seeds", "fingerprint"];

fn row(r: &RunReport) -> [String; 7] {
    [
        r.task.clone(),
        r.ablation.to_string(),
        r.cell(),
        format!("{:.4}", r.mean),
        format!("{:.4}", r.std),
        r.per_seed.len().to_string(),
        r.fingerprint.clone(),
    ]
}

/// One row per report, in the given order.
pub fn render_report(reports: &[RunReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Aggregation("no reports to emit".into()));
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
            w.write_record(HEADER)?;
            for r in reports {
                w.write_record(row(r))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Aggregation(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Markdown => {
            let mut out = format!("| {} |\n|{}\n", HEADER.join(" | "), "---|".repeat(HEADER.len()));
            for r in reports {
                out.push_str(&format!("| {} |\n", row(r).join(" | ")));
            }
            Ok(out)
        }
    }
}

pub fn emit_report(reports: &[RunReport], format: ReportFormat, path: &Path) -> Result<()> {
    let text = render_report(reports, format)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
