//! Side-by-side summary of finished runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::metrics::{CsvLog, Table};

pub const TIMEPOINTS: usize = 25;

#[derive(Clone, Debug, PartialEq)]
pub struct RunData {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub generation: Vec<f64>,
    pub best: Vec<f64>,
    pub lr_mean: Vec<Option<f64>>,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let cfg_path = dir.join("run.json");
        let text = fs::read_to_string(&cfg_path).map_err(|e| HarnessError::io(&cfg_path, e))?;
        let config = ExperimentConfig::from_json(&text).map_err(|e| HarnessError::Data {
            path: cfg_path.clone(),
            message: e.to_string(),
        })?;
        let table = Table::read(&dir.join("generations.csv"))?;
        let required = |col: &str| -> Result<Vec<f64>, HarnessError> {
            table
                .column(col)?
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    v.ok_or_else(|| HarnessError::Data {
                        path: table.path.clone(),
                        message: format!("row {}: empty `{col}`", i + 1),
                    })
                })
                .collect()
        };
        let generation = required("generation")?;
        let best = required("best_fitness")?;
        let lr_mean = table.column("lr_mean")?;
        if best.is_empty() {
            return Err(HarnessError::Data {
                path: table.path.clone(),
                message: "no generations recorded".into(),
            });
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            generation,
            best,
            lr_mean,
        })
    }

    pub fn label(&self) -> String {
        let c = &self.config;
        match c.mode_label() {
            Some(m) => format!("{}/{m}/seed{}", c.preset, c.seed),
            None => format!("{}/seed{}", c.preset, c.seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ranked {
    pub label: String,
    pub dir: PathBuf,
    pub seed: u64,
    pub mode: Option<String>,
    pub final_best: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    /// Row indices into every run's history.
    pub rows: Vec<usize>,
    /// `best[r][t]`: best fitness of run `r` at `rows[t]`.
    pub best: Vec<Vec<f64>>,
    pub lr_mean: Vec<Vec<Option<f64>>>,
    pub ranking: Vec<Ranked>,
}

/// Evenly spaced row indices over `0..len`, at most `n` of them.
pub fn timepoints(len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..n)
        .map(|i| ((i * (len - 1)) as f64 / (n - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

pub fn compare(runs: &[RunData]) -> Result<Comparison, HarnessError> {
    let Some(first) = runs.first() else {
        return Err(HarnessError::Config(
            "compare needs at least one run directory".into(),
        ));
    };
    let family = first.config.preset.family();
    for r in runs {
        let f = r.config.preset.family();
        if f != family {
            return Err(HarnessError::Mismatch(format!(
                "{} is a {f} run but {} is a {family} run",
                r.dir.display(),
                first.dir.display()
            )));
        }
    }
    let len = runs.iter().map(|r| r.best.len()).min().unwrap_or(0);
    let rows = timepoints(len, TIMEPOINTS);
    let best = runs
        .iter()
        .map(|r| rows.iter().map(|&i| r.best[i]).collect())
        .collect();
    let lr_mean = runs
        .iter()
        .map(|r| rows.iter().map(|&i| r.lr_mean[i]).collect())
        .collect();
    let mut ranking: Vec<Ranked> = runs
        .iter()
        .map(|r| Ranked {
            label: r.label(),
            dir: r.dir.clone(),
            seed: r.config.seed,
            mode: r.config.mode_label().map(String::from),
            final_best: *r.best.last().expect("non-empty"),
        })
        .collect();
    ranking.sort_by(|a, b| b.final_best.total_cmp(&a.final_best));
    Ok(Comparison {
        labels: runs.iter().map(RunData::label).collect(),
        rows,
        best,
        lr_mean,
        ranking,
    })
}

impl Comparison {
    pub fn render(&self, runs: &[RunData]) -> String {
        let mut s = String::new();
        let w = self
            .labels
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(12);
        let _ = write!(s, "{:>10}", "generation");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = write!(s, "  {l:>w$}");
            if i > 0 {
                let _ = write!(s, "  {:>12}", "diff");
            }
        }
        s.push('\n');
        for (t, &row) in self.rows.iter().enumerate() {
            let _ = write!(s, "{:>10}", runs[0].generation[row]);
            let base = self.best[0][t];
            for (r, col) in self.best.iter().enumerate() {
                let _ = write!(s, "  {:>w$.5}", col[t]);
                if r > 0 {
                    let _ = write!(s, "  {:>+12.5}", col[t] - base);
                }
            }
            s.push('\n');
        }
        s.push_str("\nfinal ranking\n");
        for (i, r) in self.ranking.iter().enumerate() {
            let mode = r.mode.as_deref().unwrap_or("-");
            let _ = writeln!(
                s,
                "{:>3}. {:<w$}  seed {:<6} mode {:<8} best {:.5}",
                i + 1,
                r.label,
                r.seed,
                mode,
                r.final_best
            );
        }
        if self.lr_mean.iter().any(|c| c.iter().any(Option::is_some)) {
            s.push_str("\nmean learning rate\n");
            let _ = write!(s, "{:>10}", "generation");
            for l in &self.labels {
                let _ = write!(s, "  {l:>w$}");
            }
            s.push('\n');
            for (t, &row) in self.rows.iter().enumerate() {
                let _ = write!(s, "{:>10}", runs[0].generation[row]);
                for col in &self.lr_mean {
                    match col[t] {
                        Some(v) => {
                            let _ = write!(s, "  {v:>w$.3e}");
                        }
                        None => {
                            let _ = write!(s, "  {:>w$}", "-");
                        }
                    }
                }
                s.push('\n');
            }
        }
        s
    }

    /// Long format: one row per run and timepoint.
    pub fn write_csv(&self, runs: &[RunData], path: &Path) -> Result<(), HarnessError> {
        let mut log = CsvLog::create(
            path,
            &[
                "run",
                "generation",
                "best_fitness",
                "diff_vs_first",
                "lr_mean",
            ],
        )?;
        for (r, label) in self.labels.iter().enumerate() {
            for (t, &row) in self.rows.iter().enumerate() {
                log.write(&[
                    label.clone(),
                    runs[r].generation[row].to_string(),
                    self.best[r][t].to_string(),
                    (self.best[r][t] - self.best[0][t]).to_string(),
                    self.lr_mean[r][t]
                        .map(|v| v.to_string())
                        .unwrap_or_default(),
                ])?;
            }
        }
        Ok(())
    }
}
