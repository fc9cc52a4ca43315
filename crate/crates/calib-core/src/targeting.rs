//! From miscalibrated bins to generation specs.
//!
//! A bin off the diagonal falls in one of four quadrants: Low/High by
//! whether its confidence is at or below 0.5, Over/Under by the sign of its
//! gap. The global rule is literal: accuracy above confidence (gap > 0) is
//! underconfident, below is overconfident, regardless of which side of the
//! decision boundary the bin sits on. Score exactly 0.5 counts as Low.
//!
//! Remediation targets are expressed on the bin's dominant class (the class
//! holding the majority share of the bin's mean score): overconfident bins
//! move the dominant probability down by alpha, underconfident bins move it
//! up, clamped to [0.01, 0.99].

use serde::{Deserialize, Serialize};

use crate::metrics::{Bin, DiagramMode, ReliabilityDiagram};
use crate::record::PredictionRecord;
use crate::{CalibError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    LowOver,
    LowUnder,
    HighOver,
    HighUnder,
}

impl Quadrant {
    pub fn is_over(self) -> bool {
        matches!(self, Quadrant::LowOver | Quadrant::HighOver)
    }

    pub fn is_low(self) -> bool {
        matches!(self, Quadrant::LowOver | Quadrant::LowUnder)
    }
}

/// How much to move each targeted bin. The default uses the bin's own |gap|,
/// which aims the target exactly at the observed accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    GapMagnitude,
    Fixed(f64),
}

/// 1-based indices of the non-empty bins whose |gap| exceeds the threshold,
/// in ascending order.
pub fn select_target_bins(diagram: &ReliabilityDiagram, threshold: f64) -> Vec<usize> {
    diagram
        .bins
        .iter()
        .filter(|b| b.count > 0 && b.gap.abs() > threshold)
        .map(|b| b.index)
        .collect()
}

/// Quadrant of a non-empty bin. A bin sitting exactly on the diagonal has no
/// quadrant ([`CalibError::ZeroGap`]).
pub fn classify_bin(bin: &Bin) -> Result<Quadrant> {
    if bin.count == 0 {
        return Err(CalibError::invalid_param(format!(
            "bin {} is empty and cannot be classified",
            bin.index
        )));
    }
    if bin.gap == 0.0 {
        return Err(CalibError::ZeroGap { index: bin.index });
    }
    let low = bin.confidence <= 0.5;
    let over = bin.gap < 0.0;
    Ok(match (low, over) {
        (true, true) => Quadrant::LowOver,
        (true, false) => Quadrant::LowUnder,
        (false, true) => Quadrant::HighOver,
        (false, false) => Quadrant::HighUnder,
    })
}

/// New dominant-class probability for a bin in the given quadrant: down by
/// alpha when overconfident, up by alpha when underconfident, clamped to
/// [0.01, 0.99]. Requires alpha >= 0.
pub fn target_probability(confidence: f64, quadrant: Quadrant, alpha: f64) -> f64 {
    debug_assert!(alpha >= 0.0, "alpha must be non-negative");
    let moved = if quadrant.is_over() {
        confidence - alpha
    } else {
        confidence + alpha
    };
    moved.clamp(0.01, 0.99)
}

/// Everything a generator needs to fill one miscalibrated bin: which class
/// dominates it, the percentage split to aim for, how many texts to produce,
/// and the bin's own records as exemplars.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSpec {
    pub bin_index: usize,
    pub quadrant: Quadrant,
    pub alpha: f64,
    /// Bin mean score, on the positive-class axis.
    pub source_confidence: f64,
    pub dominant_class: String,
    pub target_primary_pct: u8,
    pub target_secondary_pct: u8,
    pub sample_count: usize,
    pub exemplars: Vec<PredictionRecord>,
}

impl GenerationSpec {
    /// The dominant-class share of the source confidence, as a rounded
    /// percentage. The dominant class holds the majority share by
    /// construction, so this is just max(conf, 1 - conf).
    pub fn source_primary_pct(&self) -> u8 {
        (100.0 * self.source_confidence.max(1.0 - self.source_confidence)).round() as u8
    }
}

/// Builds one spec per targeted bin of a score-mode diagram. `records` must
/// be the same set the diagram was built from; each spec's exemplars are
/// exactly that bin's records, so the specs partition the targeted records.
pub fn build_generation_specs(
    diagram: &ReliabilityDiagram,
    records: &[PredictionRecord],
    threshold: f64,
    alpha_mode: AlphaMode,
) -> Result<Vec<GenerationSpec>> {
    if diagram.mode != DiagramMode::Score {
        return Err(CalibError::invalid_param(
            "targeting operates on score-mode diagrams".to_string(),
        ));
    }
    if records.len() != diagram.n {
        return Err(CalibError::CountMismatch {
            context: "records behind the diagram".into(),
            expected: diagram.n,
            got: records.len(),
        });
    }
    if !(threshold >= 0.0) {
        return Err(CalibError::invalid_param(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    if let AlphaMode::Fixed(a) = alpha_mode {
        if !(a >= 0.0) || !a.is_finite() {
            return Err(CalibError::invalid_param(format!(
                "alpha must be non-negative and finite, got {a}"
            )));
        }
    }

    let m = diagram.bins.len();
    let mut specs = Vec::new();
    for &index in &select_target_bins(diagram, threshold) {
        let bin = &diagram.bins[index - 1];
        let quadrant = classify_bin(bin)?;
        let alpha = match alpha_mode {
            AlphaMode::GapMagnitude => bin.gap.abs(),
            AlphaMode::Fixed(a) => a,
        };
        let dominant_class = if bin.confidence > 0.5 {
            diagram.positive_label.clone()
        } else {
            diagram.negative_label.clone().ok_or_else(|| {
                CalibError::invalid_param(format!(
                    "bin {index} is dominated by the negative class but the data never named it"
                ))
            })?
        };
        let dominant_confidence = bin.confidence.max(1.0 - bin.confidence);
        let target = target_probability(dominant_confidence, quadrant, alpha);
        let target_primary_pct = (100.0 * target).round() as u8;
        let exemplars: Vec<PredictionRecord> = records
            .iter()
            .filter(|r| {
                crate::metrics::bin_index_for(
                    match diagram.mode {
                        DiagramMode::Score => r.score,
                        DiagramMode::MaxProb => r.max_prob(),
                    },
                    m,
                ) == index
            })
            .cloned()
            .collect();
        if exemplars.len() != bin.count {
            return Err(CalibError::CountMismatch {
                context: format!("records in bin {index}"),
                expected: bin.count,
                got: exemplars.len(),
            });
        }
        specs.push(GenerationSpec {
            bin_index: index,
            quadrant,
            alpha,
            source_confidence: bin.confidence,
            dominant_class,
            target_primary_pct,
            target_secondary_pct: 100 - target_primary_pct,
            sample_count: bin.count,
            exemplars,
        });
    }
    Ok(specs)
}

/// A labelled training text, the unit the assembled output is made of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingItem {
    pub id: String,
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssemblyMode {
    /// Replace: drop every exemplar, add the synthetic texts. Size is
    /// preserved when each generator delivered exactly sample_count.
    Synthesis,
    /// Append: keep the original set untouched and add the synthetic texts.
    SynthesisPlus,
}

/// Combines the original training set with per-spec synthetic texts.
/// `synthetic[i]` belongs to `specs[i]`. Under `strict`, any group whose
/// size differs from its spec's sample_count is a [`CalibError::CountMismatch`];
/// otherwise whatever was delivered is used.
pub fn assemble(
    original: &[TrainingItem],
    synthetic: &[Vec<TrainingItem>],
    specs: &[GenerationSpec],
    mode: AssemblyMode,
    strict: bool,
) -> Result<Vec<TrainingItem>> {
    if synthetic.len() != specs.len() {
        return Err(CalibError::CountMismatch {
            context: "synthetic groups vs specs".into(),
            expected: specs.len(),
            got: synthetic.len(),
        });
    }
    if strict {
        for (group, spec) in synthetic.iter().zip(specs) {
            if group.len() != spec.sample_count {
                return Err(CalibError::CountMismatch {
                    context: format!("synthetic texts for bin {}", spec.bin_index),
                    expected: spec.sample_count,
                    got: group.len(),
                });
            }
        }
    }
    let mut out: Vec<TrainingItem> = match mode {
        AssemblyMode::Synthesis => {
            let drop: std::collections::HashSet<&str> = specs
                .iter()
                .flat_map(|s| s.exemplars.iter().map(|e| e.id.as_str()))
                .collect();
            original
                .iter()
                .filter(|item| !drop.contains(item.id.as_str()))
                .cloned()
                .collect()
        }
        AssemblyMode::SynthesisPlus => original.to_vec(),
    };
    for group in synthetic {
        out.extend(group.iter().cloned());
    }
    Ok(out)
}

// wire format: exemplars shrink to {id, text, score, true_label} and the
// secondary percentage is derived rather than stored
#[derive(Serialize, Deserialize)]
struct ExemplarWire {
    id: String,
    text: Option<String>,
    score: f64,
    true_label: String,
}

#[derive(Serialize, Deserialize)]
struct SpecWire {
    bin_index: usize,
    quadrant: Quadrant,
    alpha: f64,
    source_confidence: f64,
    dominant_class: String,
    target_primary_pct: u8,
    sample_count: usize,
    exemplars: Vec<ExemplarWire>,
}

impl From<&GenerationSpec> for SpecWire {
    fn from(s: &GenerationSpec) -> Self {
        SpecWire {
            bin_index: s.bin_index,
            quadrant: s.quadrant,
            alpha: s.alpha,
            source_confidence: s.source_confidence,
            dominant_class: s.dominant_class.clone(),
            target_primary_pct: s.target_primary_pct,
            sample_count: s.sample_count,
            exemplars: s
                .exemplars
                .iter()
                .map(|e| ExemplarWire {
                    id: e.id.clone(),
                    text: e.text.clone(),
                    score: e.score,
                    true_label: e.true_label.clone(),
                })
                .collect(),
        }
    }
}

impl From<SpecWire> for GenerationSpec {
    fn from(w: SpecWire) -> Self {
        GenerationSpec {
            bin_index: w.bin_index,
            quadrant: w.quadrant,
            alpha: w.alpha,
            source_confidence: w.source_confidence,
            dominant_class: w.dominant_class,
            target_primary_pct: w.target_primary_pct,
            target_secondary_pct: 100 - w.target_primary_pct,
            sample_count: w.sample_count,
            exemplars: w
                .exemplars
                .into_iter()
                .map(|e| PredictionRecord {
                    id: e.id,
                    score: e.score,
                    true_label: e.true_label,
                    text: e.text,
                    predicted_label: None,
                })
                .collect(),
        }
    }
}

/// Serialises specs as a JSON list.
pub fn specs_to_json(specs: &[GenerationSpec]) -> String {
    let wire: Vec<SpecWire> = specs.iter().map(SpecWire::from).collect();
    serde_json::to_string_pretty(&wire).expect("specs serialise")
}

pub fn specs_from_json(json: &str) -> Result<Vec<GenerationSpec>> {
    let wire: Vec<SpecWire> =
        serde_json::from_str(json).map_err(|e| CalibError::Parse(e.to_string()))?;
    Ok(wire.into_iter().map(GenerationSpec::from).collect())
}
