//! Confusion matrix, per-class precision/recall/F1 and macro F1.
//!
//! Undefined ratios (0/0) score 0, so a class that is never predicted and
//! never present still drags the macro average down.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::feature_store::write_atomic;

/// `counts[i][j]` = samples of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Builds a matrix from nested rows. Panics if `rows` is not square.
    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let k = rows.len();
        assert!(rows.iter().all(|r| r.len() == k), "confusion matrix must be square");
        Self {
            k,
            counts: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.k).map(|j| self.get(truth, j)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, pred)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.k).map(|c| self.get(c, c)).sum::<u64>() as f64 / total as f64
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks_exact(self.k.max(1)).take(self.k)
    }

    /// Writes `true\pred,<labels...>` followed by one row per true class.
    pub fn save_csv(&self, labels: &[String], path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), |w: &mut dyn Write| {
            write!(w, "true\\pred")?;
            for l in labels {
                write!(w, ",{l}")?;
            }
            writeln!(w)?;
            for (i, row) in self.rows().enumerate() {
                write!(w, "{}", labels[i])?;
                for v in row {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
            Ok(())
        })
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for index in [t, p] {
            if index >= k {
                return Err(Error::ClassOutOfRange { index, classes: k });
            }
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

/// Scores as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn per_class_prf(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..cm.num_classes())
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let precision = ratio(tp, cm.col_sum(c) as f64);
            let recall = ratio(tp, cm.row_sum(c) as f64);
            let f1 = ratio(2.0 * precision * recall, precision + recall);
            ClassScores { precision, recall, f1 }
        })
        .collect()
}

/// Unweighted mean of per-class F1, in percent.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let scores = per_class_prf(cm);
    if scores.is_empty() {
        return 0.0;
    }
    100.0 * scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64
}

/// Support-weighted mean of per-class F1, in percent.
pub fn weighted_f1(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    let scores = per_class_prf(cm);
    100.0
        * scores
            .iter()
            .enumerate()
            .map(|(c, s)| s.f1 * cm.row_sum(c) as f64)
            .sum::<f64>()
        / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum F1Average {
    #[default]
    Macro,
    Weighted,
}

impl F1Average {
    pub fn score(self, cm: &ConfusionMatrix) -> f64 {
        match self {
            F1Average::Macro => macro_f1(cm),
            F1Average::Weighted => weighted_f1(cm),
        }
    }
}

impl FromStr for F1Average {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "macro" => Ok(F1Average::Macro),
            "weighted" => Ok(F1Average::Weighted),
            other => Err(Error::Config(format!("f1_average must be macro or weighted, got {other:?}"))),
        }
    }
}

impl fmt::Display for F1Average {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            F1Average::Macro => "macro",
            F1Average::Weighted => "weighted",
        })
    }
}

/// Evaluation summary with scores in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub confusion: ConfusionMatrix,
    /// Per-class precision/recall/F1, percent.
    pub per_class: Vec<ClassScores>,
    pub average: F1Average,
    /// Averaged F1 (macro unless configured otherwise), percent.
    pub f1: f64,
}

impl EvalReport {
    pub fn new(labels: Vec<String>, confusion: ConfusionMatrix, average: F1Average) -> Self {
        assert_eq!(labels.len(), confusion.num_classes());
        let per_class = per_class_prf(&confusion)
            .into_iter()
            .map(|s| ClassScores {
                precision: 100.0 * s.precision,
                recall: 100.0 * s.recall,
                f1: 100.0 * s.f1,
            })
            .collect();
        let f1 = average.score(&confusion);
        Self {
            labels,
            confusion,
            per_class,
            average,
            f1,
        }
    }

    pub fn from_predictions(labels: Vec<String>, y_true: &[usize], y_pred: &[usize], average: F1Average) -> Result<Self> {
        let cm = confusion_matrix(y_true, y_pred, labels.len())?;
        Ok(Self::new(labels, cm, average))
    }

    /// `class,precision,recall,f1` rows plus a final `macro` (or `weighted`) row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1\n");
        for (l, s) in self.labels.iter().zip(&self.per_class) {
            out.push_str(&format!("{l},{:.2},{:.2},{:.2}\n", s.precision, s.recall, s.f1));
        }
        let n = self.per_class.len().max(1) as f64;
        let mean_p = self.per_class.iter().map(|s| s.precision).sum::<f64>() / n;
        let mean_r = self.per_class.iter().map(|s| s.recall).sum::<f64>() / n;
        out.push_str(&format!("{},{mean_p:.2},{mean_r:.2},{:.2}\n", self.average, self.f1));
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let body = self.to_csv();
        write_atomic(path.as_ref(), |w| w.write_all(body.as_bytes()))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.labels.iter().map(String::len).max().unwrap_or(0).max(8);
        writeln!(f, "{:<width$}  {:>9}  {:>9}  {:>9}", "class", "precision", "recall", "f1")?;
        for (l, s) in self.labels.iter().zip(&self.per_class) {
            writeln!(f, "{l:<width$}  {:>9.2}  {:>9.2}  {:>9.2}", s.precision, s.recall, s.f1)?;
        }
        writeln!(f, "{:<width$}  {:>9}  {:>9}  {:>9.2}", format!("{} F1", self.average), "", "", self.f1)?;
        write!(f, "{:<width$}  {:>9}  {:>9}  {:>9.2}", "accuracy", "", "", 100.0 * self.confusion.accuracy())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_predictions_are_diagonal() {
        let y = [0, 1, 1, 2, 2, 2];
        let cm = confusion_matrix(&y, &y, 3).unwrap();
        assert_eq!(cm, ConfusionMatrix::from_rows(&[vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 3]]));
        assert!(per_class_prf(&cm).iter().all(|s| s.precision == 1.0 && s.recall == 1.0 && s.f1 == 1.0));
        assert_eq!(macro_f1(&cm), 100.0);
    }

    #[test]
    fn empty_inputs_and_errors() {
        assert_eq!(confusion_matrix(&[], &[], 3).unwrap(), ConfusionMatrix::zeros(3));
        assert!(matches!(confusion_matrix(&[0], &[], 2), Err(Error::LengthMismatch { .. })));
        assert!(matches!(confusion_matrix(&[0], &[2], 2), Err(Error::ClassOutOfRange { index: 2, .. })));
    }

    #[test]
    fn hand_computed_two_class() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 1], vec![2, 2]]);
        let s = per_class_prf(&cm);
        let (p0, r0) = (5.0 / 7.0, 5.0 / 6.0);
        let f0 = 2.0 * p0 * r0 / (p0 + r0);
        assert!((s[0].precision - p0).abs() < 1e-15);
        assert!((s[0].recall - r0).abs() < 1e-15);
        assert!((s[0].f1 - 0.769_230_769_230_769_2).abs() < 1e-12);
        assert!((s[0].f1 - f0).abs() < 1e-15);
        assert!((s[1].precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[1].recall - 0.5).abs() < 1e-15);
        assert!((s[1].f1 - 4.0 / 7.0).abs() < 1e-15);
        assert!((macro_f1(&cm) - 67.03).abs() < 0.01);
    }

    #[test]
    fn absent_class_scores_zero() {
        let cm = confusion_matrix(&[0, 0, 1], &[0, 0, 1], 3).unwrap();
        let s = per_class_prf(&cm);
        assert_eq!(s[2], ClassScores { precision: 0.0, recall: 0.0, f1: 0.0 });
        assert!((macro_f1(&cm) - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_all_correct() {
        let cm = confusion_matrix(&[0, 0, 0], &[0, 0, 0], 1).unwrap();
        assert_eq!(macro_f1(&cm), 100.0);
    }

    #[test]
    fn all_majority_predictor() {
        // 60/25/15 split, always predict class 0
        let y_true: Vec<usize> = [vec![0; 60], vec![1; 25], vec![2; 15]].concat();
        let y_pred = vec![0; 100];
        let cm = confusion_matrix(&y_true, &y_pred, 3).unwrap();
        let f_major = 2.0 * 0.6 / 1.6;
        assert!((macro_f1(&cm) - 100.0 * f_major / 3.0).abs() < 1e-12);
    }

    #[test]
    fn matches_tally_oracle_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let k = rng.gen_range(1..7);
            let n = rng.gen_range(0..500);
            let t: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let mut tally: HashMap<(usize, usize), u64> = HashMap::new();
            for (&a, &b) in t.iter().zip(&p) {
                *tally.entry((a, b)).or_default() += 1;
            }
            let cm = confusion_matrix(&t, &p, k).unwrap();
            for i in 0..k {
                for j in 0..k {
                    assert_eq!(cm.get(i, j), tally.get(&(i, j)).copied().unwrap_or(0));
                }
            }
            assert_eq!(cm.total(), n as u64);
        }
    }

    #[test]
    fn weighted_average() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 1], vec![2, 2]]);
        let expected = 100.0 * (6.0 * (10.0 / 13.0) + 4.0 * (4.0 / 7.0)) / 10.0;
        assert!((weighted_f1(&cm) - expected).abs() < 1e-12);
    }

    #[test]
    fn report_csv_layout() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 1], vec![2, 2]]);
        let r = EvalReport::new(vec!["a".into(), "b".into()], cm, F1Average::Macro);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,precision,recall,f1");
        assert_eq!(lines[1], "a,71.43,83.33,76.92");
        assert_eq!(lines[2], "b,66.67,50.00,57.14");
        assert!(lines[3].starts_with("macro,") && lines[3].ends_with(",67.03"));
        assert!(r.to_string().contains("67.03"));
    }
}
