//! Per-generation records and the CSV files they are written to.

use std::fs::File;
use std::path::{Path, PathBuf};

use baldwin::evolution::{Hyperparams, DISCOUNT_RANGE, ENTROPY_SCALE_RANGE, LEARNING_RATE_RANGE};

use crate::error::HarnessError;

pub const HIST_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub hist: [u64; HIST_BINS],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scale {
    Linear,
    Log,
}

fn bin(v: f64, (lo, hi): (f64, f64), scale: Scale) -> usize {
    let (v, lo, hi) = match scale {
        Scale::Linear => (v, lo, hi),
        Scale::Log => (v.ln(), lo.ln(), hi.ln()),
    };
    let u = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    ((u * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

fn stat(values: impl Iterator<Item = f64> + Clone, range: (f64, f64), scale: Scale) -> Stat {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.clone().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut hist = [0; HIST_BINS];
    for v in values {
        hist[bin(v, range, scale)] += 1;
    }
    Stat {
        mean,
        std: var.sqrt(),
        hist,
    }
}

/// Mean, std and a 20-bin histogram per hyperparameter. Learning rate and
/// entropy scale are binned on a log scale over their legal ranges, discount
/// linearly.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperSummary {
    pub learning_rate: Stat,
    pub entropy_scale: Stat,
    pub discount: Stat,
}

pub fn summarize_hyper(hs: &[Hyperparams]) -> HyperSummary {
    HyperSummary {
        learning_rate: stat(
            hs.iter().map(|h| h.learning_rate),
            LEARNING_RATE_RANGE,
            Scale::Log,
        ),
        entropy_scale: stat(
            hs.iter().map(|h| h.entropy_scale),
            ENTROPY_SCALE_RANGE,
            Scale::Log,
        ),
        discount: stat(hs.iter().map(|h| h.discount), DISCOUNT_RANGE, Scale::Linear),
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub evaluations: usize,
    pub best_fitness: f64,
    pub median_fitness: f64,
    pub hyper: Option<HyperSummary>,
    pub q_frequency: Option<f64>,
}

const HYPER_PREFIXES: [&str; 3] = ["lr", "entropy", "discount"];

/// Column order of `generations.csv`.
pub fn generation_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "generation",
        "evaluations",
        "best_fitness",
        "median_fitness",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for p in HYPER_PREFIXES {
        h.push(format!("{p}_mean"));
        h.push(format!("{p}_std"));
    }
    h.push("q_frequency".into());
    for p in HYPER_PREFIXES {
        for b in 0..HIST_BINS {
            h.push(format!("{p}_hist_{b:02}"));
        }
    }
    h
}

impl GenerationRecord {
    pub fn to_row(&self) -> Vec<String> {
        let mut row = vec![
            self.generation.to_string(),
            self.evaluations.to_string(),
            self.best_fitness.to_string(),
            self.median_fitness.to_string(),
        ];
        let stats = self
            .hyper
            .as_ref()
            .map(|h| [&h.learning_rate, &h.entropy_scale, &h.discount]);
        for i in 0..3 {
            match stats {
                Some(s) => {
                    row.push(s[i].mean.to_string());
                    row.push(s[i].std.to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        row.push(self.q_frequency.map(|q| q.to_string()).unwrap_or_default());
        for i in 0..3 {
            for b in 0..HIST_BINS {
                row.push(stats.map(|s| s[i].hist[b].to_string()).unwrap_or_default());
            }
        }
        row
    }
}

/// A CSV file flushed after every row, so an interrupted run keeps every
/// completed row.
pub struct CsvLog {
    writer: csv::Writer<File>,
    path: PathBuf,
}

impl CsvLog {
    pub fn create<S: AsRef<str>>(path: &Path, header: &[S]) -> Result<Self, HarnessError> {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut log = Self {
            writer: csv::Writer::from_writer(file),
            path: path.to_path_buf(),
        };
        log.write(header)?;
        Ok(log)
    }

    pub fn write<S: AsRef<str>>(&mut self, row: &[S]) -> Result<(), HarnessError> {
        let path = &self.path;
        let err = |e: csv::Error| HarnessError::Data {
            path: path.clone(),
            message: e.to_string(),
        };
        self.writer
            .write_record(row.iter().map(|s| s.as_ref()))
            .map_err(err)?;
        self.writer.flush().map_err(|e| HarnessError::io(path, e))
    }
}

/// A CSV file read back as named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let data_err = |e: csv::Error| HarnessError::Data {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let header = reader
            .headers()
            .map_err(data_err)?
            .iter()
            .map(String::from)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            rows.push(rec.map_err(data_err)?.iter().map(String::from).collect());
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    /// Values of column `name`; empty cells read as `None`.
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>, HarnessError> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Data {
                path: self.path.clone(),
                message: format!("missing column `{name}`"),
            })?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cell = r.get(idx).map(String::as_str).unwrap_or("");
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse().map(Some).map_err(|_| HarnessError::Data {
                        path: self.path.clone(),
                        message: format!(
                            "row {}: `{cell}` in column `{name}` is not a number",
                            i + 1
                        ),
                    })
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_cover_population() {
        let hs: Vec<Hyperparams> = (0..37)
            .map(|i| Hyperparams {
                learning_rate: 1e-5 * 1.2f64.powi(i),
                entropy_scale: 1.0,
                discount: 0.92,
            })
            .collect();
        let s = summarize_hyper(&hs);
        for st in [&s.learning_rate, &s.entropy_scale, &s.discount] {
            assert_eq!(st.hist.iter().sum::<u64>(), 37);
        }
        assert_eq!(s.entropy_scale.hist[HIST_BINS - 1], 37);
        assert_eq!(s.discount.hist[0], 37);
        assert_eq!(s.entropy_scale.std, 0.0);
    }

    #[test]
    fn log_bins_split_decades() {
        // Learning-rate range spans three decades, so each decade is 20/3 bins.
        assert_eq!(bin(1e-5, LEARNING_RATE_RANGE, Scale::Log), 0);
        assert_eq!(bin(1e-2, LEARNING_RATE_RANGE, Scale::Log), HIST_BINS - 1);
        assert_eq!(bin(1.01e-4, LEARNING_RATE_RANGE, Scale::Log), 6);
    }

    #[test]
    fn row_matches_header() {
        let r = GenerationRecord {
            generation: 3,
            evaluations: 40,
            best_fitness: -0.5,
            median_fitness: -1.0,
            hyper: Some(summarize_hyper(&[Hyperparams::default()])),
            q_frequency: None,
        };
        assert_eq!(r.to_row().len(), generation_header().len());
        let r = GenerationRecord {
            hyper: None,
            q_frequency: Some(0.5),
            ..r
        };
        let row = r.to_row();
        assert_eq!(row.len(), generation_header().len());
        assert_eq!(row[10], "0.5");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
