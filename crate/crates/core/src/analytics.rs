//! Goodness of fit, discrete power-law fitting, error tables and baseline
//! estimators.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{param, Error, Result};

/// Two-sample Kolmogorov–Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Theta-function form, accurate for small arguments.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=8)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (c * j * j).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sample KS statistic with the asymptotic p-value (effective size
/// `n1 n2 / (n1 + n2)`, Stephens' small-sample correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(param("sample", "both samples must be non-empty"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(param("sample", "NaN in sample"));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.partial_cmp(q).expect("no NaN"));
    y.sort_by(|p, q| p.partial_cmp(q).expect("no NaN"));
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    let ne = n1 * n2 / (n1 + n2);
    let sq = ne.sqrt();
    let p = kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d);
    Ok(KsResult {
        statistic: d,
        p_value: p,
    })
}

/// Hurwitz zeta `sum_{k>=0} (k + q)^{-s}` for `s > 1`, `q > 0`.
pub fn hurwitz_zeta(s: f64, q: f64) -> f64 {
    // Euler–Maclaurin with N direct terms and 8 Bernoulli corrections.
    const B2: [f64; 8] = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
        -3617.0 / 510.0,
    ];
    const N: usize = 12;
    let mut sum = 0.0;
    for k in 0..N {
        sum += (q + k as f64).powf(-s);
    }
    let a = q + N as f64;
    sum += a.powf(1.0 - s) / (s - 1.0) + 0.5 * a.powf(-s);
    // term_j = B_{2j}/(2j)! * s(s+1)...(s+2j-2) * a^{-s-2j+1}
    let mut rising = s; // s(s+1)...(s+2j-2)
    let mut fact = 2.0; // (2j)!
    let mut apow = a.powf(-s - 1.0);
    for (j, b) in B2.iter().enumerate() {
        let jj = j + 1;
        sum += b / fact * rising * apow;
        let k = 2 * jj;
        rising *= (s + k as f64 - 1.0) * (s + k as f64);
        fact *= ((k + 1) * (k + 2)) as f64;
        apow /= a * a;
    }
    sum
}

/// Discrete power-law fit summary. `exponent` is the positive `gamma` in
/// `P(l) ~ l^-gamma`; log-log slope plots use [`FitReport::slope`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub exponent: f64,
    pub llr_vs_exponential: f64,
    pub ks_statistic: f64,
    /// Vuong significance of the sign of the log-likelihood ratio.
    pub p_value: f64,
    pub n: usize,
    pub l_min: usize,
    pub small_sample: bool,
}

impl FitReport {
    pub fn slope(&self) -> f64 {
        -self.exponent
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serialisable")
    }
}

/// Samples below this size are fitted but flagged.
pub const MIN_FIT_SAMPLE: usize = 50;

fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Maximum-likelihood discrete power law on `degrees >= l_min`, compared
/// with a discrete exponential (geometric) law on the same support.
pub fn fit_power_law_discrete(degrees: &[usize], l_min: usize) -> Result<FitReport> {
    fit_power_law_impl(degrees, l_min, None)
}

/// As [`fit_power_law_discrete`] for a law truncated to `l_min..=l_max`,
/// e.g. degrees generated with a hard cap.
pub fn fit_power_law_truncated(degrees: &[usize], l_min: usize, l_max: usize) -> Result<FitReport> {
    if l_max < l_min {
        return Err(param("l_max", "must not be below l_min"));
    }
    if let Some(&v) = degrees.iter().find(|&&v| v > l_max) {
        return Err(param("degrees", format!("value {v} above l_max = {l_max}")));
    }
    fit_power_law_impl(degrees, l_min, Some(l_max))
}

fn fit_power_law_impl(degrees: &[usize], l_min: usize, l_max: Option<usize>) -> Result<FitReport> {
    if l_min == 0 {
        return Err(param("l_min", "must be at least 1"));
    }
    if degrees.is_empty() {
        return Err(param("degrees", "empty sample"));
    }
    if let Some(&v) = degrees.iter().find(|&&v| v < l_min) {
        return Err(param("degrees", format!("value {v} below l_min = {l_min}")));
    }
    let n = degrees.len() as f64;
    let lnx: Vec<f64> = degrees.iter().map(|&v| (v as f64).ln()).collect();
    let sum_ln: f64 = lnx.iter().sum();
    let q = l_min as f64;
    let normaliser = |g: f64| match l_max {
        None => hurwitz_zeta(g, q),
        Some(top) => (l_min..=top).map(|l| (l as f64).powf(-g)).sum(),
    };
    let ll = |g: f64| -n * normaliser(g).ln() - g * sum_ln;
    // A truncated law admits any real exponent; the untruncated one needs > 1.
    let lower = if l_max.is_some() { -20.0 } else { 1.0 + 1e-6 };
    let gamma = golden_max(ll, lower, 20.0, 1e-10);
    let log_z = normaliser(gamma).ln();

    let mean_excess = degrees.iter().map(|&v| (v - l_min) as f64).sum::<f64>() / n;
    let ratio = mean_excess / (1.0 + mean_excess);
    let log_exp = |v: usize| -> f64 {
        let k = (v - l_min) as f64;
        if ratio == 0.0 {
            if k == 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            (1.0 - ratio).ln() + k * ratio.ln()
        }
    };
    let diffs: Vec<f64> = degrees
        .iter()
        .zip(&lnx)
        .map(|(&v, &l)| (-gamma * l - log_z) - log_exp(v))
        .collect();
    let llr: f64 = diffs.iter().sum();
    let mean = llr / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let p_value = if var > 0.0 {
        erfc(llr.abs() / (2.0 * n * var).sqrt())
    } else {
        1.0
    };

    // KS distance between the empirical and fitted CDFs over the support.
    let max = *degrees.iter().max().expect("non-empty");
    let mut counts = vec![0usize; max - l_min + 1];
    for &v in degrees {
        counts[v - l_min] += 1;
    }
    let z = log_z.exp();
    let (mut fe, mut fm, mut ks) = (0.0, 0.0, 0.0f64);
    for (i, c) in counts.iter().enumerate() {
        fe += *c as f64 / n;
        fm += ((l_min + i) as f64).powf(-gamma) / z;
        ks = ks.max((fe - fm).abs());
    }
    Ok(FitReport {
        exponent: gamma,
        llr_vs_exponential: llr,
        ks_statistic: ks.min(1.0),
        p_value: p_value.clamp(0.0, 1.0),
        n: degrees.len(),
        l_min,
        small_sample: degrees.len() < MIN_FIT_SAMPLE,
    })
}

/// Chooses `l_min` in `1..=max_l_min` minimising the fit's KS distance,
/// fitting only values `>= l_min`.
pub fn fit_power_law_auto(degrees: &[usize], max_l_min: usize) -> Result<FitReport> {
    let mut best: Option<FitReport> = None;
    for l_min in 1..=max_l_min.max(1) {
        let tail: Vec<usize> = degrees.iter().copied().filter(|&v| v >= l_min).collect();
        if tail.len() < 2 {
            break;
        }
        let fit = fit_power_law_discrete(&tail, l_min)?;
        if best.as_ref().is_none_or(|b| fit.ks_statistic < b.ks_statistic) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| param("degrees", "no l_min leaves at least two values"))
}

/// Per-degree error summary; rows are degree 1, degree 2 and the
/// node-count-weighted aggregate of degrees 3 and above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub label: String,
    pub avg_square: f64,
    pub avg_abs: f64,
    pub max_abs: f64,
}

/// Compares two per-time, per-degree trajectories. `node_counts[l-1]` weights
/// the `3+` aggregate, whose series is the infected fraction among all nodes
/// of degree at least 3.
pub fn deviation_table(
    model: &[Vec<f64>],
    data: &[Vec<f64>],
    node_counts: &[usize],
) -> Result<Vec<DeviationRow>> {
    if model.len() != data.len() || model.is_empty() {
        return Err(Error::Dimension {
            context: "trajectory lengths",
            expected: model.len(),
            actual: data.len(),
        });
    }
    let dim = model[0].len();
    if model.iter().chain(data).any(|r| r.len() != dim) || node_counts.len() != dim {
        return Err(Error::Dimension {
            context: "trajectory width",
            expected: dim,
            actual: node_counts.len(),
        });
    }
    let summarise = |label: &str, diffs: Vec<f64>| {
        let t = diffs.len() as f64;
        DeviationRow {
            label: label.to_string(),
            avg_square: diffs.iter().map(|d| d * d).sum::<f64>() / t,
            avg_abs: diffs.iter().map(|d| d.abs()).sum::<f64>() / t,
            max_abs: diffs.iter().fold(0.0, |m, d| m.max(d.abs())),
        }
    };
    let mut rows = Vec::new();
    for l in 1..=dim.min(2) {
        let diffs = model.iter().zip(data).map(|(m, d)| m[l - 1] - d[l - 1]).collect();
        rows.push(summarise(&l.to_string(), diffs));
    }
    let weight: usize = node_counts.iter().skip(2).sum();
    if dim >= 3 && weight > 0 {
        let diffs = model
            .iter()
            .zip(data)
            .map(|(m, d)| {
                (2..dim)
                    .map(|i| node_counts[i] as f64 * (m[i] - d[i]))
                    .sum::<f64>()
                    / weight as f64
            })
            .collect();
        rows.push(summarise("3+", diffs));
    }
    Ok(rows)
}

/// CSV `degree,avg_square,avg_abs,max_abs`.
pub fn deviation_table_csv(rows: &[DeviationRow]) -> String {
    let mut s = String::from("degree,avg_square,avg_abs,max_abs\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.label, r.avg_square, r.avg_abs, r.max_abs);
    }
    s
}

/// Trailing moving average over the last `window` observations.
pub fn moving_average_filter(observations: &[Vec<f64>], window: usize) -> Result<Vec<Vec<f64>>> {
    if window == 0 {
        return Err(param("window", "must be at least 1"));
    }
    let mut out = Vec::with_capacity(observations.len());
    for t in 0..observations.len() {
        let start = (t + 1).saturating_sub(window);
        let span = &observations[start..=t];
        let dim = observations[t].len();
        let mut avg = vec![0.0; dim];
        for row in span {
            for (a, v) in avg.iter_mut().zip(row) {
                *a += v;
            }
        }
        avg.iter_mut().for_each(|a| *a /= span.len() as f64);
        out.push(avg);
    }
    Ok(out)
}

/// Least-squares VAR(p) fit `y_t = c + sum_i A_i y_{t-i} + e_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarFit {
    pub intercept: Vec<f64>,
    pub coefficients: Vec<DMatrix<f64>>,
}

impl VarFit {
    /// One-step prediction of `y_t` from the `order` preceding rows.
    pub fn predict(&self, history: &[Vec<f64>]) -> Vec<f64> {
        let mut y = self.intercept.clone();
        for (i, a) in self.coefficients.iter().enumerate() {
            let past = &history[history.len() - 1 - i];
            for r in 0..y.len() {
                y[r] += (0..past.len()).map(|c| a[(r, c)] * past[c]).sum::<f64>();
            }
        }
        y
    }
}

pub fn fit_var(observations: &[Vec<f64>], order: usize) -> Result<VarFit> {
    if order == 0 {
        return Err(param("order", "must be at least 1"));
    }
    let dim = observations.first().map_or(0, |r| r.len());
    let params = 1 + order * dim;
    let rows = observations.len().saturating_sub(order);
    if rows < params {
        return Err(param(
            "observations",
            format!("VAR({order}) in dimension {dim} needs at least {} rows, got {}", params + order, observations.len()),
        ));
    }
    let x = DMatrix::from_fn(rows, params, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / dim + 1;
            observations[r + order - lag][(c - 1) % dim]
        }
    });
    let y = DMatrix::from_fn(rows, dim, |r, c| observations[r + order][c]);
    let beta = x
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let intercept = (0..dim).map(|c| beta[(0, c)]).collect();
    let coefficients = (0..order)
        .map(|i| DMatrix::from_fn(dim, dim, |r, c| beta[(1 + i * dim + c, r)]))
        .collect();
    Ok(VarFit {
        intercept,
        coefficients,
    })
}

/// VAR(order) fitted on the whole record, then used as a one-step predictor;
/// the first `order` estimates are the observations themselves.
pub fn var_ls_filter(observations: &[Vec<f64>], order: usize) -> Result<Vec<Vec<f64>>> {
    let fit = fit_var(observations, order)?;
    Ok((0..observations.len())
        .map(|t| {
            if t < order {
                observations[t].clone()
            } else {
                fit.predict(&observations[..t])
            }
        })
        .collect())
}
