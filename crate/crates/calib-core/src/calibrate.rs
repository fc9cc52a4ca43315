//! Post-hoc calibrators: isotonic regression, Platt scaling, temperature
//! scaling. All three map a raw score in [0, 1] to a calibrated probability
//! and serialise to a tagged JSON object so fitting and applying can happen
//! in separate invocations.
//!
//! Platt and temperature both work on the log-odds z = logit(score); scores
//! at exactly 0 or 1 are clamped to [1e-9, 1 - 1e-9] first.

use serde::{Deserialize, Serialize};

use crate::numeric::{fit_logistic_2p, golden_section_min, log1p_exp, logit, sigmoid, LogisticOptions};
use crate::{CalibError, Result};

/// Non-decreasing step function fitted by pool-adjacent-violators.
/// Breakpoints are (score, fitted value), strictly increasing in score and
/// non-decreasing in value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    pub breakpoints: Vec<(f64, f64)>,
}

/// sigmoid(a * logit(score) + b).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

/// sigmoid(logit(score) / t). t > 1 softens scores, t < 1 sharpens them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub t: f64,
}

impl Temperature {
    pub fn new(t: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(CalibError::invalid_param(format!(
                "temperature must be positive and finite, got {t}"
            )));
        }
        Ok(Temperature { t })
    }
}

fn validate_pairs(pairs: &[(f64, f64)], binary: bool) -> Result<()> {
    if pairs.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    for (i, &(score, outcome)) in pairs.iter().enumerate() {
        if !(0.0..=1.0).contains(&score) || score.is_nan() {
            return Err(CalibError::InvalidScore {
                id: format!("pair {i}"),
                value: score,
            });
        }
        let ok = if binary {
            outcome == 0.0 || outcome == 1.0
        } else {
            (0.0..=1.0).contains(&outcome) && !outcome.is_nan()
        };
        if !ok {
            return Err(CalibError::invalid_param(format!(
                "pair {i} has outcome {outcome}, expected {}",
                if binary { "0 or 1" } else { "a value in [0, 1]" }
            )));
        }
    }
    Ok(())
}

fn require_both_classes(pairs: &[(f64, f64)]) -> Result<()> {
    let ones = pairs.iter().filter(|&&(_, y)| y == 1.0).count();
    if ones == 0 || ones == pairs.len() {
        return Err(CalibError::OneClass);
    }
    Ok(())
}

/// Pool-adjacent-violators. Equal scores are pooled up front, so the fit is
/// a function of score; violating neighbours are then merged into weighted
/// blocks until the values are non-decreasing.
pub fn fit_isotonic(pairs: &[(f64, f64)]) -> Result<IsotonicMap> {
    validate_pairs(pairs, false)?;
    let mut sorted: Vec<(f64, f64)> = pairs.to_vec();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0));

    // (score, value, weight) blocks; ties in score collapse immediately
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    for (score, y) in sorted {
        match blocks.last_mut() {
            Some((s, v, w)) if *s == score => {
                *v = (*v * *w + y) / (*w + 1.0);
                *w += 1.0;
            }
            _ => blocks.push((score, y, 1.0)),
        }
    }

    // merge while a block undercuts its predecessor; the merged block keeps
    // the leftmost score as its representative
    let mut stack: Vec<(f64, f64, f64)> = Vec::with_capacity(blocks.len());
    for block in blocks {
        stack.push(block);
        while stack.len() >= 2 {
            let (upper, lower) = (stack[stack.len() - 1], stack[stack.len() - 2]);
            if lower.1 <= upper.1 {
                break;
            }
            stack.pop();
            stack.pop();
            let w = lower.2 + upper.2;
            stack.push((lower.0, (lower.1 * lower.2 + upper.1 * upper.2) / w, w));
        }
    }

    // expand merged blocks back to one breakpoint per distinct score
    let mut breakpoints = Vec::new();
    let mut scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut bi = 0;
    for score in scores {
        while bi + 1 < stack.len() && stack[bi + 1].0 <= score {
            bi += 1;
        }
        breakpoints.push((score, stack[bi].1));
    }
    Ok(IsotonicMap { breakpoints })
}

/// Step-function lookup: the fitted value of the greatest breakpoint at or
/// below `score`; flat extrapolation past either end.
pub fn apply_isotonic(map: &IsotonicMap, score: f64) -> f64 {
    let bps = &map.breakpoints;
    if bps.is_empty() {
        return score;
    }
    if score <= bps[0].0 {
        return bps[0].1;
    }
    let idx = bps.partition_point(|&(x, _)| x <= score);
    bps[idx - 1].1
}

/// Maximum-likelihood Platt scaling on the log-odds. Newton-Raphson with
/// step halving; converged when the gradient norm drops below 1e-8, capped
/// at 200 iterations. Separable data drives the optimum to infinity: flagged
/// when the parameter norm crosses 1e6 or the NLL collapses to ~0, the
/// finite-precision signatures of that divergence.
pub fn fit_platt(pairs: &[(f64, f64)]) -> Result<PlattParams> {
    validate_pairs(pairs, true)?;
    require_both_classes(pairs)?;
    let zs: Vec<f64> = pairs.iter().map(|&(s, _)| logit(s)).collect();
    let ys: Vec<f64> = pairs.iter().map(|&(_, y)| y).collect();
    let opts = LogisticOptions {
        max_iter: 200,
        grad_tol: 1e-8,
        ridge: 0.0,
        divergence_limit: 1e6,
    };
    let fit = fit_logistic_2p(&zs, &ys, &opts);
    if fit.diverged || fit.nll_path.last().copied().unwrap_or(f64::INFINITY) < 1e-6 {
        return Err(CalibError::Separable);
    }
    Ok(PlattParams {
        a: fit.slope,
        b: fit.intercept,
    })
}

pub fn apply_platt(params: &PlattParams, score: f64) -> f64 {
    sigmoid(params.a * logit(score) + params.b)
}

/// Minimises the NLL of sigmoid(z / t) over t in [0.05, 20] by golden
/// section (tolerance 1e-6). The NLL is convex in 1/t, hence unimodal in t.
pub fn fit_temperature(pairs: &[(f64, f64)]) -> Result<Temperature> {
    validate_pairs(pairs, true)?;
    require_both_classes(pairs)?;
    let data: Vec<(f64, f64)> = pairs.iter().map(|&(s, y)| (logit(s), y)).collect();
    let nll = |t: f64| {
        data.iter()
            .map(|&(z, y)| {
                let zt = z / t;
                log1p_exp(zt) - y * zt
            })
            .sum::<f64>()
    };
    let t = golden_section_min(nll, 0.05, 20.0, 1e-6);
    Temperature::new(t)
}

pub fn apply_temperature(temp: &Temperature, score: f64) -> f64 {
    sigmoid(logit(score) / temp.t)
}

/// A fitted calibrator of any method, as stored on disk:
/// `{"method": "isotonic" | "platt" | "temperature", ...params}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Calibrator {
    Isotonic(IsotonicMap),
    Platt(PlattParams),
    Temperature(Temperature),
}

impl Calibrator {
    pub fn apply(&self, score: f64) -> f64 {
        match self {
            Calibrator::Isotonic(m) => apply_isotonic(m, score),
            Calibrator::Platt(p) => apply_platt(p, score),
            Calibrator::Temperature(t) => apply_temperature(t, score),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibrator serialises")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| CalibError::Parse(e.to_string()))
    }
}
