//! `(state, velocity)` datasets, their text format and splitting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Matrix;
use crate::{Error, Result};

pub const DATASET_FORMAT: &str = "latentmap-dataset";
/// Smallest dataset [`split_dataset`] accepts.
pub const MIN_SPLIT_SAMPLES: usize = 20;

/// Paired rows of states `x` and velocities `ẋ`, plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub states: Matrix,
    pub velocities: Matrix,
    pub header: Vec<(String, String)>,
}

impl Dataset {
    pub fn new(states: Matrix, velocities: Matrix) -> Result<Self> {
        if states.dim() != velocities.dim() {
            return Err(Error::Shape(format!(
                "states {:?} and velocities {:?} differ",
                states.dim(),
                velocities.dim()
            )));
        }
        Ok(Dataset {
            states,
            velocities,
            header: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn with_header(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.header.push((key.into(), value.to_string()));
        self
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Rows at `indices`, in that order. Metadata is kept.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            states: self.states.select(Axis(0), indices),
            velocities: self.velocities.select(Axis(0), indices),
            header: self.header.clone(),
        }
    }

    /// Appends the rows of `other`.
    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if self.is_empty() && self.header.is_empty() {
            self.states = other.states.clone();
            self.velocities = other.velocities.clone();
            return Ok(());
        }
        if other.state_dim() != self.state_dim() {
            return Err(Error::Shape(format!(
                "cannot append {}-dim samples to a {}-dim dataset",
                other.state_dim(),
                self.state_dim()
            )));
        }
        self.states
            .append(Axis(0), other.states.view())
            .map_err(|e| Error::Shape(e.to_string()))?;
        self.velocities
            .append(Axis(0), other.velocities.view())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(())
    }

    /// Header lines `# key=value`, then one row per sample: `d` state values
    /// followed by `d` velocity values, comma separated, each the shortest
    /// decimal that round-trips the 64-bit value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# format={DATASET_FORMAT}");
        let _ = writeln!(out, "# state_dim={}", self.state_dim());
        let _ = writeln!(out, "# samples={}", self.len());
        for (k, v) in &self.header {
            if !matches!(k.as_str(), "format" | "state_dim" | "samples") {
                let _ = writeln!(out, "# {k}={v}");
            }
        }
        for (x, v) in self.states.rows().into_iter().zip(self.velocities.rows()) {
            let fields: Vec<String> = x.iter().chain(v.iter()).map(|f| format!("{f:?}")).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header = Vec::new();
        let mut dim: Option<usize> = None;
        let mut values = Vec::new();
        let mut rows = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.trim().split_once('=').ok_or_else(|| {
                    Error::Parse(format!("line {}: header without '='", lineno + 1))
                })?;
                let (k, v) = (k.trim().to_string(), v.trim().to_string());
                match k.as_str() {
                    "format" if v != DATASET_FORMAT => {
                        return Err(Error::Parse(format!("unexpected dataset format '{v}'")))
                    }
                    "state_dim" => {
                        dim = Some(v.parse().map_err(|_| {
                            Error::Parse(format!("line {}: bad state_dim '{v}'", lineno + 1))
                        })?)
                    }
                    "format" | "samples" => {}
                    _ => header.push((k, v)),
                }
                continue;
            }
            let d = dim.ok_or_else(|| Error::Parse("data row before state_dim header".into()))?;
            let before = values.len();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Parse(format!("line {}: bad number '{}'", lineno + 1, field.trim()))
                })?;
                values.push(v);
            }
            if values.len() - before != 2 * d {
                return Err(Error::Parse(format!(
                    "line {}: expected {} values, found {}",
                    lineno + 1,
                    2 * d,
                    values.len() - before
                )));
            }
            rows += 1;
        }
        let d = dim.ok_or_else(|| Error::Parse("missing state_dim header".into()))?;
        let all = Array2::from_shape_vec((rows, 2 * d), values)
            .map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Dataset {
            states: all.slice(s![.., ..d]).to_owned(),
            velocities: all.slice(s![.., d..]).to_owned(),
            header,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Dataset::from_text(&fs::read_to_string(path)?)
    }
}

/// Train / validation / test partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    /// Source row indices of each part, in the order they were selected.
    pub rows: SplitRows,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitRows {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then contiguous train / validation / test blocks.
/// Validation and test sizes are rounded down; the remainder goes to train.
pub fn split_dataset(data: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = data.len();
    if n < MIN_SPLIT_SAMPLES {
        return Err(Error::Input(format!(
            "dataset has {n} samples; at least {MIN_SPLIT_SAMPLES} are needed to split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (fv * n as f64 + 1e-9).floor() as usize;
    let n_test = (fs * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    Ok(Split {
        train: data.select(&order[..n_train]),
        validation: data.select(&order[n_train..n_train + n_val]),
        test: data.select(&order[n_train + n_val..]),
        rows: SplitRows {
            train: order[..n_train].to_vec(),
            validation: order[n_train..n_train + n_val].to_vec(),
            test: order[n_train + n_val..].to_vec(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Dataset {
        let states = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
        let velocities = Array2::from_shape_fn((n, 2), |(i, j)| -((i + j) as f64) / 3.0);
        Dataset::new(states, velocities).unwrap()
    }

    #[test]
    fn default_split_sizes() {
        let s = split_dataset(&ramp(10_000), (0.9, 0.05, 0.05), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (9000, 500, 500));
    }

    #[test]
    fn remainder_goes_to_train() {
        let s = split_dataset(&ramp(333), (0.9, 0.05, 0.05), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (301, 16, 16));
    }

    #[test]
    fn degenerate_split_is_all_train() {
        let s = split_dataset(&ramp(50), (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(s.train.len(), 50);
        assert!(s.validation.is_empty() && s.test.is_empty());
    }

    #[test]
    fn split_is_seeded() {
        let d = ramp(100);
        assert_eq!(split_dataset(&d, (0.8, 0.1, 0.1), 3).unwrap(), split_dataset(&d, (0.8, 0.1, 0.1), 3).unwrap());
        assert_ne!(split_dataset(&d, (0.8, 0.1, 0.1), 3).unwrap(), split_dataset(&d, (0.8, 0.1, 0.1), 4).unwrap());
    }

    #[test]
    fn small_or_bad_splits_are_rejected() {
        assert!(matches!(split_dataset(&ramp(19), (0.9, 0.05, 0.05), 0), Err(Error::Input(_))));
        assert!(matches!(split_dataset(&ramp(40), (0.9, 0.2, 0.05), 0), Err(Error::Input(_))));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut d = ramp(5).with_header("seed", 9);
        d.states[(0, 0)] = 0.1 + 0.2;
        d.velocities[(1, 1)] = -1e-300;
        let back = Dataset::from_text(&d.to_text()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.header_value("seed"), Some("9"));
    }

    #[test]
    fn malformed_text() {
        assert!(Dataset::from_text("1,2\n").is_err());
        assert!(Dataset::from_text("# state_dim=1\n1,2,3\n").is_err());
        assert!(Dataset::from_text("# state_dim=1\n1,x\n").is_err());
    }
}
