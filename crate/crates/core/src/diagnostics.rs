//! Measurements of memorization, confidence and label correction.
//!
//! All functions are pure reads over model outputs, labels and targets.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{argmax, Matrix};
use crate::training::TargetTable;

/// Default histogram resolution for confidence densities.
pub const DEFAULT_BINS: usize = 50;

/// Outcome split of the clean-labelled subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CleanFractions {
    pub correct: f64,
    pub incorrect: f64,
}

/// Outcome split of the mislabelled subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FalseFractions {
    /// Prediction equals the clean label.
    pub correct: f64,
    /// Prediction equals the (wrong) observed label.
    pub memorized: f64,
    pub incorrect: f64,
}

/// Fractions are `None` for an empty subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Memorization {
    pub clean: Option<CleanFractions>,
    pub mislabeled: Option<FalseFractions>,
}

fn same_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, a, b));
    }
    Ok(())
}

pub fn memorization_fractions(preds: &[usize], clean: &[usize], noisy: &[usize]) -> Result<Memorization> {
    same_len("memorization_fractions", preds.len(), clean.len())?;
    same_len("memorization_fractions", preds.len(), noisy.len())?;
    let (mut c_ok, mut c_n) = (0usize, 0usize);
    let (mut f_ok, mut f_mem, mut f_n) = (0usize, 0usize, 0usize);
    for ((&p, &c), &n) in preds.iter().zip(clean).zip(noisy) {
        if c == n {
            c_n += 1;
            c_ok += usize::from(p == c);
        } else {
            f_n += 1;
            if p == c {
                f_ok += 1;
            } else if p == n {
                f_mem += 1;
            }
        }
    }
    let clean = (c_n > 0).then(|| {
        let correct = c_ok as f64 / c_n as f64;
        CleanFractions {
            correct,
            incorrect: (c_n - c_ok) as f64 / c_n as f64,
        }
    });
    let mislabeled = (f_n > 0).then(|| FalseFractions {
        correct: f_ok as f64 / f_n as f64,
        memorized: f_mem as f64 / f_n as f64,
        incorrect: (f_n - f_ok - f_mem) as f64 / f_n as f64,
    });
    Ok(Memorization { clean, mislabeled })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientDominance {
    pub clean_norm: f64,
    pub false_norm: f64,
    pub clean_empty: bool,
    pub false_empty: bool,
}

/// L2 norm of the subset-summed logit gradients, divided by subset size.
/// An empty subset reports norm 0 and sets its flag.
pub fn gradient_dominance(per_sample_dlogits: &Matrix, clean_mask: &[bool]) -> Result<GradientDominance> {
    same_len("gradient_dominance", per_sample_dlogits.rows(), clean_mask.len())?;
    let k = per_sample_dlogits.cols();
    let mut sums = [vec![0.0; k], vec![0.0; k]];
    let mut counts = [0usize; 2];
    for (row, &is_clean) in per_sample_dlogits.row_iter().zip(clean_mask) {
        let slot = usize::from(!is_clean);
        counts[slot] += 1;
        for (s, v) in sums[slot].iter_mut().zip(row) {
            *s += v;
        }
    }
    let norm = |slot: usize| {
        if counts[slot] == 0 {
            0.0
        } else {
            sums[slot].iter().map(|v| v * v).sum::<f64>().sqrt() / counts[slot] as f64
        }
    };
    Ok(GradientDominance {
        clean_norm: norm(0),
        false_norm: norm(1),
        clean_empty: counts[0] == 0,
        false_empty: counts[1] == 0,
    })
}

/// Mean and population standard deviation of the selected entries.
pub fn masked_mean_std(values: &[f64], mask: &[bool], want: bool) -> Option<(f64, f64)> {
    let picked: Vec<f64> = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == want)
        .map(|(&v, _)| v)
        .collect();
    if picked.is_empty() {
        return None;
    }
    let n = picked.len() as f64;
    let mean = picked.iter().sum::<f64>() / n;
    let var = picked.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceDensity {
    pub bins: usize,
    /// Normalized so each non-empty histogram sums to 1.
    pub clean: Vec<f64>,
    pub mislabeled: Vec<f64>,
    pub clean_mean: Option<f64>,
    pub mislabeled_mean: Option<f64>,
}

pub fn confidence_bin(tau: f64, bins: usize) -> usize {
    ((tau * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

pub fn confidence_density(tau: &[f64], clean_mask: &[bool], bins: usize) -> Result<ConfidenceDensity> {
    same_len("confidence_density", tau.len(), clean_mask.len())?;
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let mut hist = [vec![0.0; bins], vec![0.0; bins]];
    let mut counts = [0usize; 2];
    for (&t, &is_clean) in tau.iter().zip(clean_mask) {
        let slot = usize::from(!is_clean);
        hist[slot][confidence_bin(t, bins)] += 1.0;
        counts[slot] += 1;
    }
    for slot in 0..2 {
        if counts[slot] > 0 {
            hist[slot].iter_mut().for_each(|v| *v /= counts[slot] as f64);
        }
    }
    let [clean, mislabeled] = hist;
    Ok(ConfidenceDensity {
        bins,
        clean,
        mislabeled,
        clean_mean: masked_mean_std(tau, clean_mask, true).map(|s| s.0),
        mislabeled_mean: masked_mean_std(tau, clean_mask, false).map(|s| s.0),
    })
}

/// Streaming accumulator for the clean-by-observed mean-confidence grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapAccumulator {
    k: usize,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl HeatmapAccumulator {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            sums: vec![0.0; k * k],
            counts: vec![0; k * k],
        }
    }

    pub fn push(&mut self, tau: f64, clean: usize, noisy: usize) -> Result<()> {
        if clean >= self.k || noisy >= self.k {
            return Err(Error::invalid(format!(
                "label pair ({clean}, {noisy}) out of range for {} classes",
                self.k
            )));
        }
        self.sums[clean * self.k + noisy] += tau;
        self.counts[clean * self.k + noisy] += 1;
        Ok(())
    }

    pub fn finish(&self) -> ConfidenceHeatmap {
        let cells = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect();
        ConfidenceHeatmap { k: self.k, cells }
    }
}

/// `cells[i * k + j]` is the mean confidence over samples with clean label
/// `i` and observed label `j`; `None` marks an empty cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceHeatmap {
    pub k: usize,
    pub cells: Vec<Option<f64>>,
}

impl ConfidenceHeatmap {
    pub fn get(&self, clean: usize, noisy: usize) -> Option<f64> {
        self.cells[clean * self.k + noisy]
    }
}

pub fn confidence_heatmap(tau: &[f64], clean: &[usize], noisy: &[usize], k: usize) -> Result<ConfidenceHeatmap> {
    same_len("confidence_heatmap", tau.len(), clean.len())?;
    same_len("confidence_heatmap", tau.len(), noisy.len())?;
    let mut acc = HeatmapAccumulator::new(k);
    for ((&t, &c), &n) in tau.iter().zip(clean).zip(noisy) {
        acc.push(t, c, n)?;
    }
    Ok(acc.finish())
}

/// Fraction of targets whose argmax (lowest index on ties) equals the clean label.
pub fn correction_accuracy(table: &TargetTable, clean: &[usize]) -> Result<f64> {
    same_len("correction_accuracy", table.len(), clean.len())?;
    if clean.is_empty() {
        return Ok(0.0);
    }
    let hits = (0..table.len()).filter(|&i| argmax(table.row(i)) == clean[i]).count();
    Ok(hits as f64 / clean.len() as f64)
}

/// Counts of (row = clean class, column = predicted or corrected class).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn from_pairs(k: usize, clean: &[usize], assigned: &[usize]) -> Result<Self> {
        same_len("ConfusionMatrix", clean.len(), assigned.len())?;
        let mut counts = vec![0; k * k];
        for (&c, &a) in clean.iter().zip(assigned) {
            if c >= k || a >= k {
                return Err(Error::invalid(format!("label pair ({c}, {a}) out of range")));
            }
            counts[c * k + a] += 1;
        }
        Ok(Self { k, counts })
    }

    pub fn get(&self, clean: usize, assigned: usize) -> usize {
        self.counts[clean * self.k + assigned]
    }

    pub fn trace(&self) -> usize {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn corrected_confusion(table: &TargetTable, clean: &[usize]) -> Result<ConfusionMatrix> {
    same_len("corrected_confusion", table.len(), clean.len())?;
    let assigned: Vec<usize> = (0..table.len()).map(|i| argmax(table.row(i))).collect();
    ConfusionMatrix::from_pairs(table.num_classes(), clean, &assigned)
}

/// One row of the per-epoch metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training objective over the epoch's mini-batches.
    pub train_loss: f64,
    /// Accuracy of end-of-epoch predictions against the observed labels.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub clean: Option<CleanFractions>,
    pub mislabeled: Option<FalseFractions>,
    pub tau_clean_mean: Option<f64>,
    pub tau_clean_std: Option<f64>,
    pub tau_false_mean: Option<f64>,
    pub tau_false_std: Option<f64>,
    pub grad_clean_norm: f64,
    pub grad_false_norm: f64,
    pub correction_accuracy: f64,
}

/// Version tag of the metrics CSV layout.
pub const METRICS_CSV_VERSION: u32 = 1;

pub const METRICS_CSV_COLUMNS: [&str; 18] = [
    "epoch",
    "lr",
    "train_loss",
    "train_accuracy",
    "test_accuracy",
    "clean_correct",
    "clean_incorrect",
    "false_correct",
    "false_memorized",
    "false_incorrect",
    "tau_clean_mean",
    "tau_clean_std",
    "tau_false_mean",
    "tau_false_std",
    "grad_clean_norm",
    "grad_false_norm",
    "correction_accuracy",
    "csv_version",
];

/// Formats with 9 significant digits, trimming trailing zeros.
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..9).contains(&exp) {
        let fixed = format!("{:.*}", (8 - exp) as usize, v);
        let trimmed = if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.')
        } else {
            &fixed
        };
        trimmed.to_string()
    } else {
        let (mantissa, e) = sci.split_at(sci.find('e').unwrap());
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}{e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_sig9).unwrap_or_default()
}

impl MetricsRecord {
    pub fn csv_header() -> String {
        METRICS_CSV_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let cells = [
            self.epoch.to_string(),
            format_sig9(self.lr),
            format_sig9(self.train_loss),
            format_sig9(self.train_accuracy),
            opt(self.test_accuracy),
            opt(self.clean.map(|c| c.correct)),
            opt(self.clean.map(|c| c.incorrect)),
            opt(self.mislabeled.map(|f| f.correct)),
            opt(self.mislabeled.map(|f| f.memorized)),
            opt(self.mislabeled.map(|f| f.incorrect)),
            opt(self.tau_clean_mean),
            opt(self.tau_clean_std),
            opt(self.tau_false_mean),
            opt(self.tau_false_std),
            format_sig9(self.grad_clean_norm),
            format_sig9(self.grad_false_norm),
            format_sig9(self.correction_accuracy),
            METRICS_CSV_VERSION.to_string(),
        ];
        cells.join(",")
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = MetricsRecord::csv_header();
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}
