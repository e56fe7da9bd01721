//! Scoring: classification accuracy and significance, joint detection and
//! script identification, and relaxed end-to-end recognition.

pub mod boxes;
pub mod text;

pub use boxes::{iou, joint_eval, parse_records, read_records, BoxRecord, JointEvalReport};
pub use text::{e2e_eval, is_junk_char, junk_filter, levenshtein, relaxed_match, E2eReport, JUNK_CHARS};

use std::fmt::Write as _;

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub total: u64,
    pub overall: f64,
    /// `None` for classes with no ground-truth samples.
    pub per_class: Vec<Option<f64>>,
    /// Mean over defined per-class accuracies.
    pub macro_average: Option<f64>,
}

impl ConfusionMatrix {
    pub fn new(predicted: &[usize], truth: &[usize], k: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::input(format!(
                "{} predictions for {} ground-truth labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mut counts = vec![vec![0u64; k]; k];
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= k || t >= k {
                return Err(Error::input(format!("label out of range for {k} classes")));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> AccuracyReport {
        let total = self.total();
        let trace: u64 = (0..self.k()).map(|i| self.counts[i][i]).sum();
        let per_class: Vec<Option<f64>> = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect();
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        AccuracyReport {
            total,
            overall: if total > 0 { trace as f64 / total as f64 } else { 0.0 },
            macro_average: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            per_class,
        }
    }

    /// Header row of predicted labels, then one row per ground-truth label.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("truth\\predicted");
        for l in labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (l, row) in labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McNemar {
    /// Samples only model A got right.
    pub b: u64,
    /// Samples only model B got right.
    pub c: u64,
    pub statistic: f64,
    pub p_value: f64,
}

/// Continuity-corrected McNemar test; the p-value is the chi-square(1) tail.
pub fn mcnemar(a_correct: &[bool], b_correct: &[bool]) -> Result<McNemar> {
    if a_correct.len() != b_correct.len() {
        return Err(Error::input("correctness vectors differ in length"));
    }
    let b = a_correct.iter().zip(b_correct).filter(|(a, b)| **a && !**b).count() as u64;
    let c = a_correct.iter().zip(b_correct).filter(|(a, b)| !**a && **b).count() as u64;
    Ok(mcnemar_counts(b, c))
}

pub fn mcnemar_counts(b: u64, c: u64) -> McNemar {
    let statistic = if b + c == 0 {
        0.0
    } else {
        let d = ((b as f64 - c as f64).abs() - 1.0).max(0.0);
        d * d / (b + c) as f64
    };
    McNemar {
        b,
        c,
        statistic,
        p_value: erfc((statistic / 2.0).sqrt()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WidthBin {
    pub min_width: usize,
    pub max_width: usize,
    pub count: usize,
    pub accuracy: f64,
}

/// Accuracy as a function of line width in bins of `bin` pixels; empty bins are omitted.
pub fn accuracy_by_width(widths: &[usize], correct: &[bool], bin: usize) -> Result<Vec<WidthBin>> {
    if widths.len() != correct.len() {
        return Err(Error::input("width and correctness vectors differ in length"));
    }
    if bin == 0 {
        return Err(Error::config("bin width must be at least 1"));
    }
    let mut bins: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for (&w, &ok) in widths.iter().zip(correct) {
        let e = bins.entry(w / bin).or_default();
        e.0 += 1;
        e.1 += ok as usize;
    }
    Ok(bins
        .into_iter()
        .map(|(i, (n, hit))| WidthBin {
            min_width: i * bin,
            max_width: (i + 1) * bin - 1,
            count: n,
            accuracy: hit as f64 / n as f64,
        })
        .collect())
}

pub fn width_bins_csv(bins: &[WidthBin]) -> String {
    let mut out = String::from("min_width,max_width,count,accuracy\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{},{}", b.min_width, b.max_width, b.count, b.accuracy);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let m = ConfusionMatrix::new(&t, &t, 3).unwrap();
        let r = m.accuracy();
        assert_eq!(r.overall, 1.0);
        assert_eq!(m.total(), 10);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.counts[i][j] > 0, i == j);
            }
        }
    }

    #[test]
    fn hand_counted_case() {
        let m = ConfusionMatrix::new(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.counts, [[1, 1], [0, 2]]);
        assert_eq!(m.accuracy().overall, 0.75);
    }

    #[test]
    fn empty_row_undefined() {
        let m = ConfusionMatrix::new(&[0, 0, 2], &[0, 2, 2], 3).unwrap();
        let r = m.accuracy();
        assert_eq!(r.per_class, [Some(1.0), None, Some(0.5)]);
        assert_eq!(r.macro_average, Some(0.75));
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(ConfusionMatrix::new(&[0], &[0, 1], 2), Err(Error::Input(_))));
        assert!(mcnemar(&[true], &[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = ConfusionMatrix::new(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.to_csv(&["a".into(), "b".into()]), "truth\\predicted,a,b\na,1,1\nb,0,2\n");
    }

    /// Upper tail of chi-square(1) as 1 − 2∫₀^√x φ(t) dt by composite Simpson.
    fn chi2_1_tail(x: f64) -> f64 {
        let hi = x.sqrt();
        let n = 20_000;
        let h = hi / n as f64;
        let phi = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = phi(0.0) + phi(hi);
        for i in 1..n {
            s += phi(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * s * h / 3.0
    }

    #[test]
    fn mcnemar_reference_values() {
        let r = mcnemar_counts(10, 2);
        assert!((r.statistic - 49.0 / 12.0).abs() < 1e-12);
        assert!((r.p_value - chi2_1_tail(49.0 / 12.0)).abs() < 1e-9);
        assert!(r.p_value < 0.05 && r.p_value > 0.04);
        let s = mcnemar_counts(2, 10);
        assert_eq!((r.statistic, r.p_value), (s.statistic, s.p_value));
        let eq = mcnemar_counts(5, 5);
        assert_eq!((eq.statistic, eq.p_value), (0.0, 1.0));
        let none = mcnemar(&[true, false], &[true, false]).unwrap();
        assert_eq!((none.statistic, none.p_value), (0.0, 1.0));
    }

    #[test]
    fn width_bins() {
        let bins = accuracy_by_width(&[45, 50, 130, 140, 141], &[true, false, true, true, false], 50).unwrap();
        assert_eq!(bins.len(), 3);
        assert_eq!((bins[0].min_width, bins[0].count, bins[0].accuracy), (0, 1, 1.0));
        assert_eq!((bins[1].min_width, bins[1].max_width, bins[1].count), (50, 99, 1));
        assert_eq!((bins[2].count, bins[2].accuracy), (3, 2.0 / 3.0));
    }
}
