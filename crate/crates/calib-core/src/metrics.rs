//! Reliability diagrams and expected calibration error.
//!
//! A diagram partitions [0, 1] into `M` equal-width intervals `(lower, upper]`
//! with the first bin closed at 0, assigns every record to exactly one bin by
//! its binned quantity, and summarises each bin by the mean binned quantity
//! (confidence) and an accuracy proxy. ECE is the weight-averaged absolute
//! gap between the two.
//!
//! Two diagram modes exist:
//!
//! * [`DiagramMode::Score`]: bins by the positive-class score; accuracy is
//!   the empirical fraction of positive true labels in the bin.
//! * [`DiagramMode::MaxProb`]: bins by `max(score, 1 - score)`; accuracy is
//!   the fraction of records whose predicted label matches the true label.

use serde::{Deserialize, Serialize};

use crate::record::PredictionRecord;
use crate::{CalibError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagramMode {
    Score,
    MaxProb,
}

/// How to bin. `positive_label` names the class whose probability `score`
/// reports; leave it `None` to infer it from the data (see
/// [`infer_positive_label`]).
#[derive(Debug, Clone, PartialEq)]
pub struct BinningConfig {
    pub num_bins: usize,
    pub mode: DiagramMode,
    pub positive_label: Option<String>,
}

impl BinningConfig {
    /// Errors unless `num_bins >= 2`.
    pub fn new(num_bins: usize, mode: DiagramMode) -> Result<Self> {
        if num_bins < 2 {
            return Err(CalibError::invalid_param(format!(
                "num_bins must be at least 2, got {num_bins}"
            )));
        }
        Ok(BinningConfig {
            num_bins,
            mode,
            positive_label: None,
        })
    }

    pub fn with_positive_label(mut self, label: impl Into<String>) -> Self {
        self.positive_label = Some(label.into());
        self
    }
}

/// One reliability-diagram bin. `index` is 1-based. For an empty bin the
/// confidence is defined as the bin midpoint and the accuracy as 0; its
/// weight is 0 so it contributes nothing to ECE and is skipped by targeting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    #[serde(skip)]
    pub weight: f64,
    pub confidence: f64,
    pub accuracy: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityDiagram {
    pub bins: Vec<Bin>,
    pub n: usize,
    pub ece: f64,
    /// Sum over bins of weight * accuracy.
    pub data_accuracy: f64,
    /// Sum over bins of weight * confidence.
    pub data_confidence: f64,
    pub mode: DiagramMode,
    pub positive_label: String,
    /// The other observed class name, when the data showed one.
    pub negative_label: Option<String>,
}

/// 1-based bin index for a binned quantity in [0, 1]: the unique `m` with
/// `(m-1)/M < q <= m/M`, except that 0 lands in bin 1.
pub(crate) fn bin_index_for(quantity: f64, num_bins: usize) -> usize {
    let mut lo = 0usize; // edges strictly below q: edge j is j/M
    let mut hi = num_bins;
    while lo < hi {
        let mid = (lo + hi) / 2;
        let edge = (mid + 1) as f64 / num_bins as f64;
        if edge < quantity {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    (lo + 1).min(num_bins)
}

fn binned_quantity(record: &PredictionRecord, mode: DiagramMode) -> f64 {
    match mode {
        DiagramMode::Score => record.score,
        DiagramMode::MaxProb => record.max_prob(),
    }
}

/// Picks the positive class from the data: with two labels, the one whose
/// records have the higher mean score (ties break to the lexicographically
/// greater name); with a single label, that label if its mean score is at
/// least 0.5, otherwise a sentinel distinct from it (all records then count
/// as negative).
pub fn infer_positive_label(records: &[PredictionRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    let mut stats: Vec<(String, f64, usize)> = Vec::new();
    for r in records {
        match stats.iter_mut().find(|(l, _, _)| *l == r.true_label) {
            Some((_, sum, count)) => {
                *sum += r.score;
                *count += 1;
            }
            None => stats.push((r.true_label.clone(), r.score, 1)),
        }
    }
    match stats.len() {
        1 => {
            let (label, sum, count) = &stats[0];
            if *sum / *count as f64 >= 0.5 {
                Ok(label.clone())
            } else {
                let mut sentinel = String::from("__positive__");
                if sentinel == *label {
                    sentinel.push('_');
                }
                Ok(sentinel)
            }
        }
        2 => {
            let mean = |i: usize| stats[i].1 / stats[i].2 as f64;
            let (a, b) = (mean(0), mean(1));
            if a > b || (a == b && stats[0].0 > stats[1].0) {
                Ok(stats[0].0.clone())
            } else {
                Ok(stats[1].0.clone())
            }
        }
        k => Err(CalibError::invalid_param(format!(
            "expected at most two classes, found {k}"
        ))),
    }
}

/// Builds a reliability diagram. Every record lands in exactly one bin, so
/// bin counts always sum to `records.len()`.
pub fn bin_records(records: &[PredictionRecord], config: &BinningConfig) -> Result<ReliabilityDiagram> {
    if records.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    if config.num_bins < 2 {
        return Err(CalibError::invalid_param(format!(
            "num_bins must be at least 2, got {}",
            config.num_bins
        )));
    }
    for r in records {
        r.validate()?;
    }
    let positive = match &config.positive_label {
        Some(l) => l.clone(),
        None => infer_positive_label(records)?,
    };
    let negative = records
        .iter()
        .map(|r| &r.true_label)
        .find(|l| **l != positive)
        .cloned();

    let m = config.num_bins;
    let n = records.len();
    // Per-bin members are gathered, then sorted before summing, so the
    // diagram is exactly invariant to record order.
    let mut quantities: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut hits: Vec<usize> = vec![0; m];
    for r in records {
        let q = binned_quantity(r, config.mode);
        let idx = bin_index_for(q, m) - 1;
        quantities[idx].push(q);
        let hit = match config.mode {
            DiagramMode::Score => r.true_label == positive,
            DiagramMode::MaxProb => r.is_correct(&positive),
        };
        if hit {
            hits[idx] += 1;
        }
    }

    let mut bins = Vec::with_capacity(m);
    for i in 0..m {
        let lower = i as f64 / m as f64;
        let upper = (i + 1) as f64 / m as f64;
        let count = quantities[i].len();
        let (weight, confidence, accuracy) = if count == 0 {
            (0.0, 0.5 * (lower + upper), 0.0)
        } else {
            quantities[i].sort_by(f64::total_cmp);
            let sum: f64 = quantities[i].iter().sum();
            (
                count as f64 / n as f64,
                sum / count as f64,
                hits[i] as f64 / count as f64,
            )
        };
        bins.push(Bin {
            index: i + 1,
            lower,
            upper,
            count,
            weight,
            confidence,
            accuracy,
            gap: accuracy - confidence,
        });
    }

    Ok(finish_diagram(bins, n, config.mode, positive, negative))
}

fn finish_diagram(
    bins: Vec<Bin>,
    n: usize,
    mode: DiagramMode,
    positive_label: String,
    negative_label: Option<String>,
) -> ReliabilityDiagram {
    let mut diagram = ReliabilityDiagram {
        bins,
        n,
        ece: 0.0,
        data_accuracy: 0.0,
        data_confidence: 0.0,
        mode,
        positive_label,
        negative_label,
    };
    diagram.ece = ece(&diagram);
    diagram.data_accuracy = diagram.bins.iter().map(|b| b.weight * b.accuracy).sum();
    diagram.data_confidence = diagram.bins.iter().map(|b| b.weight * b.confidence).sum();
    diagram
}

/// Expected calibration error: sum over bins of weight * |gap|.
pub fn ece(diagram: &ReliabilityDiagram) -> f64 {
    diagram.bins.iter().map(|b| b.weight * b.gap.abs()).sum()
}

/// Fraction of records whose predicted label (explicit, or defaulted from
/// the score) equals the true label.
pub fn accuracy(records: &[PredictionRecord], positive_label: &str) -> Result<f64> {
    if records.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    let correct = records.iter().filter(|r| r.is_correct(positive_label)).count();
    Ok(correct as f64 / records.len() as f64)
}

pub(crate) fn require_matched_weights(a: &ReliabilityDiagram, b: &ReliabilityDiagram) -> Result<()> {
    if a.bins.len() != b.bins.len() {
        return Err(CalibError::ShapeMismatch(format!(
            "bin counts differ: {} vs {}",
            a.bins.len(),
            b.bins.len()
        )));
    }
    for (x, y) in a.bins.iter().zip(&b.bins) {
        if (x.weight - y.weight).abs() > 1e-12 {
            return Err(CalibError::ShapeMismatch(format!(
                "bin {} weights differ: {} vs {}",
                x.index, x.weight, y.weight
            )));
        }
    }
    Ok(())
}

/// Weighted sum of per-bin confidence differences,
/// sum_m weight_m |conf_m(a) - conf_m(b)|. The diagrams must have the same
/// bin count and matching bin weights; the absolute value sits inside the
/// sum, so opposite-sign shifts do not cancel.
pub fn conf_gap(a: &ReliabilityDiagram, b: &ReliabilityDiagram) -> Result<f64> {
    require_matched_weights(a, b)?;
    Ok(a.bins
        .iter()
        .zip(&b.bins)
        .map(|(x, y)| x.weight * (x.confidence - y.confidence).abs())
        .sum())
}

impl ReliabilityDiagram {
    /// Assembles a diagram from raw bins, recomputing weights, gaps, and the
    /// aggregate statistics. Intended for synthetic or deserialized diagrams;
    /// `bin_records` is the normal constructor.
    pub fn from_bins(mut bins: Vec<Bin>, n: usize) -> Result<Self> {
        if bins.is_empty() {
            return Err(CalibError::EmptyInput);
        }
        let total: usize = bins.iter().map(|b| b.count).sum();
        if total != n {
            return Err(CalibError::CountMismatch {
                context: "diagram bin counts".into(),
                expected: n,
                got: total,
            });
        }
        for (i, b) in bins.iter_mut().enumerate() {
            b.index = i + 1;
            b.weight = if n == 0 { 0.0 } else { b.count as f64 / n as f64 };
            b.gap = b.accuracy - b.confidence;
        }
        Ok(finish_diagram(bins, n, DiagramMode::Score, String::from("1"), None))
    }

    /// JSON export: `{bins: [{index, lower, upper, count, confidence,
    /// accuracy, gap}], n, ece}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&DiagramView::from(self)).expect("diagram serialises")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&DiagramView::from(self)).expect("diagram serialises")
    }

    /// CSV export: header row, then one bin per row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for b in &self.bins {
            w.serialize(b).expect("bin serialises");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("csv is utf-8")
    }
}

#[derive(Serialize)]
struct DiagramView<'a> {
    bins: &'a [Bin],
    n: usize,
    ece: f64,
}

impl<'a> From<&'a ReliabilityDiagram> for DiagramView<'a> {
    fn from(d: &'a ReliabilityDiagram) -> Self {
        DiagramView {
            bins: &d.bins,
            n: d.n,
            ece: d.ece,
        }
    }
}
