//! Result rows and file emission.

use std::collections::BTreeMap;
use std::path::Path;

use divscale_core::metrics::{convergence_point, MeanStd, DEFAULT_REL_TOL};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One row of `records.csv`: one aggregator at one budget for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub dataset: String,
    pub perturbation_id: String,
    #[serde(rename = "L")]
    pub context_length: usize,
    pub temperature: f64,
    #[serde(rename = "N")]
    pub budget: usize,
    pub aggregator: String,
    pub trial: usize,
    pub window_index: usize,
    pub loss_mse: f64,
    pub loss_mae: f64,
    pub mean_similarity: f64,
    /// Empty unless the window was skipped after a backend error.
    pub error: String,
}

impl EvalRecord {
    pub fn is_error(&self) -> bool {
        !self.error.is_empty()
    }
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path)(e.into()))?;
    for r in records {
        w.serialize(r).map_err(|e| CliError::io(path)(e.into()))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path)(e.into()))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e: csv::Error| CliError::io(path)(e.into()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    std::fs::write(path, text + "\n").map_err(CliError::io(path))
}

/// Mean and std of one aggregator at one budget, over trials and windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    #[serde(rename = "N")]
    pub budget: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mae_mean: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub index: usize,
    pub perturbation_id: String,
    #[serde(rename = "L")]
    pub context_length: usize,
    pub temperature: f64,
    pub mean_similarity: f64,
    pub skipped_windows: usize,
    pub aggregators: BTreeMap<String, Vec<BudgetSummary>>,
    /// Convergence budget per aggregator.
    pub convergence: BTreeMap<String, usize>,
}

impl ConfigSummary {
    pub fn at(&self, aggregator: &str, budget: usize) -> Option<&BudgetSummary> {
        self.aggregators.get(aggregator)?.iter().find(|b| b.budget == budget)
    }

    /// File-name stem for this configuration's plot panels.
    pub fn slug(&self) -> String {
        let id: String = self
            .perturbation_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' })
            .collect();
        format!(
            "c{:02}_{}_L{}_t{}",
            self.index,
            id.trim_matches('-'),
            self.context_length,
            self.temperature
        )
    }
}

/// Groups `records` (of configurations `0..configs`) by configuration,
/// aggregator and budget.
pub fn summarize(records: &[EvalRecord], config_of: &[usize]) -> Vec<ConfigSummary> {
    debug_assert_eq!(records.len(), config_of.len());
    // Per configuration: summary, (mse, mae) per (aggregator, budget), similarities.
    type Groups = BTreeMap<(String, usize), Vec<(f64, f64)>>;
    let mut out: BTreeMap<usize, (ConfigSummary, Groups, Vec<f64>)> = BTreeMap::new();
    for (r, &c) in records.iter().zip(config_of) {
        let entry = out.entry(c).or_insert_with(|| {
            (
                ConfigSummary {
                    index: c,
                    perturbation_id: r.perturbation_id.clone(),
                    context_length: r.context_length,
                    temperature: r.temperature,
                    mean_similarity: 0.0,
                    skipped_windows: 0,
                    aggregators: BTreeMap::new(),
                    convergence: BTreeMap::new(),
                },
                BTreeMap::new(),
                Vec::new(),
            )
        });
        if r.is_error() {
            entry.0.skipped_windows += 1;
            continue;
        }
        entry
            .1
            .entry((r.aggregator.clone(), r.budget))
            .or_default()
            .push((r.loss_mse, r.loss_mae));
        entry.2.push(r.mean_similarity);
    }
    out.into_values()
        .map(|(mut summary, groups, sims)| {
            for ((agg, budget), vals) in groups {
                let mse: Vec<f64> = vals.iter().map(|v| v.0).collect();
                let s = MeanStd::of(&mse);
                summary.aggregators.entry(agg).or_default().push(BudgetSummary {
                    budget,
                    mse_mean: s.mean,
                    mse_std: s.std,
                    mae_mean: vals.iter().map(|v| v.1).sum::<f64>() / vals.len() as f64,
                    rows: vals.len(),
                });
            }
            for (agg, rows) in &summary.aggregators {
                let curve: Vec<(usize, f64)> = rows.iter().map(|b| (b.budget, b.mse_mean)).collect();
                if let Ok(star) = convergence_point(&curve, DEFAULT_REL_TOL) {
                    summary.convergence.insert(agg.clone(), star);
                }
            }
            if !sims.is_empty() {
                summary.mean_similarity = sims.iter().sum::<f64>() / sims.len() as f64;
            }
            summary
        })
        .collect()
}

/// One CSV per configuration and aggregator with columns
/// `N,mse_mean,mse_std,convergence_N`.
pub fn write_plotdata(dir: &Path, summaries: &[ConfigSummary]) -> Result<Vec<String>, CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let mut files = Vec::new();
    for s in summaries {
        for (agg, rows) in &s.aggregators {
            let name = format!("{}_{agg}.csv", s.slug());
            let path = dir.join(&name);
            let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path)(e.into()))?;
            w.write_record(["N", "mse_mean", "mse_std", "convergence_N"])
                .map_err(|e| CliError::io(&path)(e.into()))?;
            let star = s.convergence.get(agg).copied().unwrap_or(0);
            for b in rows {
                w.write_record([
                    b.budget.to_string(),
                    b.mse_mean.to_string(),
                    b.mse_std.to_string(),
                    star.to_string(),
                ])
                .map_err(|e| CliError::io(&path)(e.into()))?;
            }
            w.flush().map_err(CliError::io(&path))?;
            files.push(name);
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pid: &str, n: usize, agg: &str, w: usize, mse: f64) -> EvalRecord {
        EvalRecord {
            model: "m".into(),
            dataset: "d".into(),
            perturbation_id: pid.into(),
            context_length: 8,
            temperature: 0.7,
            budget: n,
            aggregator: agg.into(),
            trial: 0,
            window_index: w,
            loss_mse: mse,
            loss_mae: mse.sqrt(),
            mean_similarity: 0.9,
            error: String::new(),
        }
    }

    #[test]
    fn summary_means_and_stars() {
        let records = vec![
            rec("none", 1, "em", 0, 1.0),
            rec("none", 2, "em", 0, 0.5),
            rec("none", 1, "em", 1, 3.0),
            rec("none", 2, "em", 1, 0.51),
        ];
        let s = summarize(&records, &[0, 0, 0, 0]);
        assert_eq!(s.len(), 1);
        let b1 = s[0].at("em", 1).unwrap();
        assert_eq!(b1.mse_mean, 2.0);
        assert_eq!(b1.mse_std, 1.0);
        assert_eq!(s[0].convergence["em"], 2);
        assert_eq!(s[0].slug(), "c00_none_L8_t0.7");
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut r = rec("gaussian[eta=0.1]", 4, "mv", 2, 0.25);
        r.error = "a, \"quoted\" message".into();
        write_records(&path, std::slice::from_ref(&r)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("model,dataset,perturbation_id,L,temperature,N,aggregator,trial,window_index,loss_mse,loss_mae,mean_similarity,error\n"));
        assert_eq!(read_records(&path).unwrap(), vec![r]);
    }
}
