//! Run reports: per-epoch metrics for one or more training runs.
//!
//! The text form has one record per line, each a space-separated list of
//! `key=value` pairs whose first pair is `record=<kind>`:
//!
//! ```text
//! record=config key=epsilon value=0.25
//! record=run run=0 label=seed1 seed=1 fold=- best_epoch=3 train_size=1800 test_size=200
//! record=epoch run=0 epoch=1 train_loss=… train_accuracy=… train_f1=… test_loss=… test_accuracy=… test_f1=…
//! record=summary metric=accuracy n=5 mean=… std=…
//! ```
//!
//! Floats are written in shortest round-trip form, so parsing a report and
//! writing it again reproduces the same bytes. Wall-clock time is kept out of
//! the text so reruns compare byte for byte.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::metrics::{mean, sample_std};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub train_f1: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub test_f1: f64,
}

/// One training run (a seed replicate and/or a fold).
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub fold: Option<usize>,
    pub train_size: usize,
    pub test_size: usize,
    pub epochs: Vec<EpochMetrics>,
    /// 1-based epoch with the highest test accuracy (earliest on ties).
    pub best_epoch: usize,
    pub wall_clock: Duration,
}

impl RunRecord {
    pub fn best(&self) -> &EpochMetrics {
        &self.epochs[self.best_epoch - 1]
    }

    /// `epoch,split,loss,accuracy,f1` rows, train then test per epoch.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,accuracy,f1\n");
        for row in self.curve_rows() {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }

    pub(crate) fn curve_rows(&self) -> Vec<String> {
        let mut rows = Vec::with_capacity(2 * self.epochs.len());
        for e in &self.epochs {
            rows.push(format!(
                "{},train,{:?},{:?},{:?}",
                e.epoch, e.train_loss, e.train_accuracy, e.train_f1
            ));
            rows.push(format!(
                "{},test,{:?},{:?},{:?}",
                e.epoch, e.test_loss, e.test_accuracy, e.test_f1
            ));
        }
        rows
    }
}

/// Merges per-cell curves into one CSV with a leading `cell` column.
pub fn merged_curves_csv<'r>(cells: impl IntoIterator<Item = (&'r str, &'r RunRecord)>) -> String {
    let mut out = String::from("cell,epoch,split,loss,accuracy,f1\n");
    for (cell, run) in cells {
        for row in run.curve_rows() {
            out.push_str(&format!("{cell},{row}\n"));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        Summary {
            n: values.len(),
            mean: mean(values),
            std: sample_std(values),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    /// Resolved configuration as `key=value` pairs.
    pub config: Vec<(String, String)>,
    pub runs: Vec<RunRecord>,
}

impl RunReport {
    /// Best-epoch test accuracy of every run.
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.best().test_accuracy).collect()
    }

    /// Best-epoch test macro-F1 of every run.
    pub fn f1_scores(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.best().test_f1).collect()
    }

    pub fn accuracy_summary(&self) -> Summary {
        Summary::of(&self.accuracies())
    }

    pub fn f1_summary(&self) -> Summary {
        Summary::of(&self.f1_scores())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config {
            out.push_str(&format!("record=config key={k} value={v}\n"));
        }
        for (i, r) in self.runs.iter().enumerate() {
            let fold = r.fold.map_or_else(|| "-".to_string(), |f| f.to_string());
            out.push_str(&format!(
                "record=run run={i} label={} seed={} fold={fold} best_epoch={} train_size={} test_size={}\n",
                r.label, r.seed, r.best_epoch, r.train_size, r.test_size
            ));
            for e in &r.epochs {
                out.push_str(&format!(
                    "record=epoch run={i} epoch={} train_loss={:?} train_accuracy={:?} train_f1={:?} \
                     test_loss={:?} test_accuracy={:?} test_f1={:?}\n",
                    e.epoch, e.train_loss, e.train_accuracy, e.train_f1, e.test_loss, e.test_accuracy, e.test_f1
                ));
            }
        }
        if !self.runs.is_empty() {
            for (name, s) in [
                ("accuracy", self.accuracy_summary()),
                ("f1", self.f1_summary()),
            ] {
                out.push_str(&format!(
                    "record=summary metric={name} n={} mean={:?} std={:?}\n",
                    s.n, s.mean, s.std
                ));
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Inverse of [`to_text`](Self::to_text); summary lines are recomputed
    /// rather than read.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut report = RunReport::default();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: HashMap<&str, &str> = line
                .split(' ')
                .map(|kv| {
                    kv.split_once('=').ok_or_else(|| {
                        Error::parse(origin, lineno, format!("`{kv}` is not key=value"))
                    })
                })
                .collect::<Result<_>>()?;
            let get = |k: &str| {
                fields
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::parse(origin, lineno, format!("missing `{k}`")))
            };
            let num = |k: &str| -> Result<f64> {
                get(k)?
                    .parse()
                    .map_err(|e| Error::parse(origin, lineno, format!("`{k}`: {e}")))
            };
            let int = |k: &str| -> Result<usize> {
                get(k)?
                    .parse()
                    .map_err(|e| Error::parse(origin, lineno, format!("`{k}`: {e}")))
            };
            match get("record")? {
                "config" => {
                    // The value is everything after `value=`, spaces included.
                    let value = line
                        .split_once(" value=")
                        .map(|(_, v)| v)
                        .ok_or_else(|| Error::parse(origin, lineno, "missing `value`"))?;
                    report
                        .config
                        .push((get("key")?.to_string(), value.to_string()));
                }
                "run" => {
                    if int("run")? != report.runs.len() {
                        return Err(Error::parse(origin, lineno, "runs out of order"));
                    }
                    let fold = match get("fold")? {
                        "-" => None,
                        _ => Some(int("fold")?),
                    };
                    report.runs.push(RunRecord {
                        label: get("label")?.to_string(),
                        seed: get("seed")?
                            .parse()
                            .map_err(|e| Error::parse(origin, lineno, format!("`seed`: {e}")))?,
                        fold,
                        train_size: int("train_size")?,
                        test_size: int("test_size")?,
                        epochs: Vec::new(),
                        best_epoch: int("best_epoch")?,
                        wall_clock: Duration::ZERO,
                    });
                }
                "epoch" => {
                    let run = int("run")?;
                    let Some(record) = report.runs.get_mut(run) else {
                        return Err(Error::parse(
                            origin,
                            lineno,
                            format!("epoch for unknown run {run}"),
                        ));
                    };
                    let epoch = int("epoch")?;
                    if epoch != record.epochs.len() + 1 {
                        return Err(Error::parse(
                            origin,
                            lineno,
                            "epochs must be contiguous from 1",
                        ));
                    }
                    record.epochs.push(EpochMetrics {
                        epoch,
                        train_loss: num("train_loss")?,
                        train_accuracy: num("train_accuracy")?,
                        train_f1: num("train_f1")?,
                        test_loss: num("test_loss")?,
                        test_accuracy: num("test_accuracy")?,
                        test_f1: num("test_f1")?,
                    });
                }
                "summary" => {}
                other => {
                    return Err(Error::parse(
                        origin,
                        lineno,
                        format!("unknown record `{other}`"),
                    ))
                }
            }
        }
        for r in &report.runs {
            if r.best_epoch == 0 || r.best_epoch > r.epochs.len() {
                return Err(Error::parse(
                    origin,
                    0,
                    format!(
                        "run `{}` has best epoch {} of {}",
                        r.label,
                        r.best_epoch,
                        r.epochs.len()
                    ),
                ));
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch(i: usize, acc: f64) -> EpochMetrics {
        EpochMetrics {
            epoch: i,
            train_loss: 0.7 / i as f64,
            train_accuracy: 0.5 + 0.01 * i as f64,
            train_f1: 0.49,
            test_loss: 0.1 + 1.0 / 3.0,
            test_accuracy: acc,
            test_f1: acc - 0.01,
        }
    }

    fn report() -> RunReport {
        RunReport {
            config: vec![
                ("epsilon".into(), "0.25".into()),
                ("filter_windows".into(), "3,4,5".into()),
            ],
            runs: vec![
                RunRecord {
                    label: "seed1".into(),
                    seed: 1,
                    fold: None,
                    train_size: 10,
                    test_size: 4,
                    epochs: vec![epoch(1, 0.5), epoch(2, 0.75)],
                    best_epoch: 2,
                    wall_clock: Duration::from_millis(5),
                },
                RunRecord {
                    label: "seed2-fold3".into(),
                    seed: 2,
                    fold: Some(3),
                    train_size: 10,
                    test_size: 4,
                    epochs: vec![epoch(1, 1.0)],
                    best_epoch: 1,
                    wall_clock: Duration::ZERO,
                },
            ],
        }
    }

    #[test]
    fn text_round_trip() {
        let r = report();
        let text = r.to_text();
        let back = RunReport::parse(&text, Path::new("r")).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.runs[1].fold, Some(3));
        assert_eq!(back.accuracies(), vec![0.75, 1.0]);
        assert!(!text.contains("wall"));
    }

    #[test]
    fn summary_uses_sample_std() {
        let s = report().accuracy_summary();
        assert_eq!(s.n, 2);
        assert!((s.mean - 0.875).abs() < 1e-15);
        assert!((s.std - (0.125f64 * 0.125 * 2.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn curves_have_two_rows_per_epoch() {
        let r = report();
        let csv = r.runs[0].curves_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 2);
        assert!(csv.starts_with("epoch,split,loss,accuracy,f1\n1,train,"));
        let merged = merged_curves_csv(r.runs.iter().map(|x| (x.label.as_str(), x)));
        assert_eq!(merged.lines().count(), 1 + 4 + 2);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let bad = "record=epoch run=0 epoch=1\n";
        assert!(matches!(
            RunReport::parse(bad, Path::new("r")),
            Err(Error::Parse { line: 1, .. })
        ));
        let gap = report().to_text().replace("epoch=2 ", "epoch=3 ");
        assert!(RunReport::parse(&gap, Path::new("r")).is_err());
    }
}
