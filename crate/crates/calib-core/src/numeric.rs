//! Small numeric kernels shared across modules. Nothing here is public API.

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probabilities at exactly 0 or 1 are clamped to [1e-9, 1 - 1e-9] so the
/// log-odds stay finite.
pub(crate) fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// ln(1 + e^z) without overflow for large |z|.
pub(crate) fn log1p_exp(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Two-parameter logistic MLE for p = sigmoid(intercept + slope * x).
pub(crate) struct LogisticFit {
    pub intercept: f64,
    pub slope: f64,
    pub converged: bool,
    pub iterations: usize,
    pub diverged: bool,
    /// NLL after each accepted step, starting with the value at (0, 0).
    pub nll_path: Vec<f64>,
}

pub(crate) struct LogisticOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// L2 penalty on both coefficients; 0 disables it and the fit is the
    /// plain MLE. With a penalty the NLL path reports the penalized
    /// objective.
    pub ridge: f64,
    pub divergence_limit: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            max_iter: 100,
            grad_tol: 1e-8,
            ridge: 0.0,
            divergence_limit: 1e4,
        }
    }
}

fn nll(xs: &[f64], ys: &[f64], b0: f64, b1: f64, ridge: f64) -> f64 {
    let fit: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let z = b0 + b1 * x;
            log1p_exp(z) - y * z
        })
        .sum();
    fit + 0.5 * ridge * (b0 * b0 + b1 * b1)
}

/// Newton-Raphson (IRLS) with step halving so the NLL never increases.
/// `diverged` is set when the parameter norm exceeds the divergence limit,
/// which is how separable data manifests.
pub(crate) fn fit_logistic_2p(xs: &[f64], ys: &[f64], opts: &LogisticOptions) -> LogisticFit {
    debug_assert_eq!(xs.len(), ys.len());
    let (mut b0, mut b1) = (0.0f64, 0.0f64);
    let mut current = nll(xs, ys, b0, b1, opts.ridge);
    let mut path = vec![current];
    let mut converged = false;
    let mut diverged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let (mut g0, mut g1) = (opts.ridge * b0, opts.ridge * b1);
        let (mut h00, mut h01, mut h11) = (opts.ridge, 0.0, opts.ridge);
        for (&x, &y) in xs.iter().zip(ys) {
            let p = sigmoid(b0 + b1 * x);
            let r = p - y;
            g0 += r;
            g1 += r * x;
            let w = (p * (1.0 - p)).max(1e-12);
            h00 += w;
            h01 += w * x;
            h11 += w * x * x;
        }
        if (g0 * g0 + g1 * g1).sqrt() < opts.grad_tol {
            converged = true;
            break;
        }
        let det = h00 * h11 - h01 * h01;
        if det.abs() < 1e-300 || !det.is_finite() {
            break;
        }
        // Newton direction: -H^{-1} g.
        let d0 = -(h11 * g0 - h01 * g1) / det;
        let d1 = -(h00 * g1 - h01 * g0) / det;

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (c0, c1) = (b0 + step * d0, b1 + step * d1);
            let candidate = nll(xs, ys, c0, c1, opts.ridge);
            if candidate.is_finite() && candidate <= current + 1e-12 {
                b0 = c0;
                b1 = c1;
                current = candidate;
                path.push(current);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        if (b0 * b0 + b1 * b1).sqrt() > opts.divergence_limit {
            diverged = true;
            break;
        }
    }

    LogisticFit {
        intercept: b0,
        slope: b1,
        converged,
        iterations,
        diverged,
        nll_path: path,
    }
}

/// Golden-section search for the minimum of a unimodal function on [lo, hi].
pub(crate) fn golden_section_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
