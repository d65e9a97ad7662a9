//! Bayesian filters.
//!
//! The fast time scale uses a Gaussian filter for the polynomial mean-field
//! map: predicted moments are the exact first and second moments of `f(x)`
//! under a Gaussian belief, followed by a Kalman update. The slow time scale
//! uses a discrete HMM filter over the degree-distribution chain.
//!
//! # Moment engine
//!
//! Every coordinate of the map has the form `f_l(x) = u_l(alpha) + x_l v_l(alpha)`
//! with `alpha = phi' x`. For `x ~ N(mu, H)` write `alpha = mu_alpha + z` with
//! `z ~ N(0, s2)`, `s2 = phi' H phi`. Conditional on `z`,
//! `x = mu + beta z + eps` with `beta = H phi / s2` and `eps` independent of `z`,
//! `Cov(eps) = H - H phi phi' H / s2`. The moments of `f` then reduce to
//! polynomial expectations in the single variable `z`, whose moments
//! `E[z^2k] = (2k-1)!! s2^k` are the Isserlis pairing counts.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{param, Error, Result};
use crate::evolution::{evolution_matrix, EvolutionMatrix};
use crate::graph::DegreeDistribution;
use crate::meanfield::{
    asymptotic_state, build_dynamics_lenient, LambdaScope, PolynomialDynamics,
};
use crate::sampling::{gaussian_observation, Observation};
use crate::sis::TransitionKernel;

/// Largest total polynomial degree of the map the moment engine accepts.
pub const MAX_MOMENT_DEGREE: usize = 24;

/// Below this `phi' H phi` the belief is treated as degenerate along `alpha`.
const DEGENERATE_VARIANCE: f64 = 1e-300;

/// Gaussian belief `N(mean, cov)` over the infected degree distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FilterState {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension {
                context: "filter covariance",
                expected: n,
                actual: cov.nrows(),
            });
        }
        let state = FilterState {
            mean: DVector::from_vec(mean),
            cov: symmetrize(cov),
        };
        state.check_invariants()?;
        Ok(state)
    }

    /// `x = x0 * 1`, `H = h0 * I`.
    pub fn isotropic(dim: usize, x0: f64, h0: f64) -> Result<Self> {
        if !(h0 >= 0.0) {
            return Err(param("h0", "prior variance must be non-negative"));
        }
        FilterState::new(vec![x0; dim], DMatrix::identity(dim, dim) * h0)
    }

    /// Default prior: `x = 0.5`, `H = 0.1 I`.
    pub fn default_prior(dim: usize) -> Self {
        FilterState::isotropic(dim, 0.5, 0.1).expect("valid default prior")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        self.cov
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let min = self.min_eigenvalue();
        let scale = self.cov.amax().max(1.0);
        if min < -1e-10 * scale {
            return Err(Error::NotPositiveDefinite {
                context: "filter covariance",
                min_eigenvalue: min,
            });
        }
        Ok(())
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Coefficients of `p(c + z)` in `z`.
fn taylor_shift(coefs: &[f64], c: f64) -> Vec<f64> {
    let mut a = coefs.to_vec();
    let n = a.len();
    for i in 0..n {
        for j in (i..n.saturating_sub(1)).rev() {
            a[j] += c * a[j + 1];
        }
    }
    a
}

/// `E[p(z)]` for `z ~ N(0, var)`.
fn centered_expectation(coefs: &[f64], var: f64) -> f64 {
    let mut acc = 0.0;
    let mut moment = 1.0; // E[z^(2k)]
    for (k, c) in coefs.iter().step_by(2).enumerate() {
        if k > 0 {
            moment *= (2 * k - 1) as f64 * var;
        }
        acc += c * moment;
    }
    acc
}

/// `E[p(x)]` for `x ~ N(mean, var)`, `p` given by monomial coefficients.
pub fn gaussian_polynomial_expectation(coefs: &[f64], mean: f64, var: f64) -> f64 {
    centered_expectation(&taylor_shift(coefs, mean), var)
}

/// Exact mean and covariance of `f(x)` for `x ~ N(belief.mean, belief.cov)`.
pub fn gaussian_poly_moments(
    dyn_: &PolynomialDynamics,
    belief: &FilterState,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = dyn_.dim();
    if belief.dim() != n {
        return Err(Error::Dimension {
            context: "belief",
            expected: n,
            actual: belief.dim(),
        });
    }
    let degree = dyn_.polynomial_degree();
    if degree > MAX_MOMENT_DEGREE {
        return Err(Error::Capacity(format!(
            "map degree {degree} exceeds moment engine limit {MAX_MOMENT_DEGREE}"
        )));
    }
    let phi = DVector::from_column_slice(dyn_.phi());
    let h = &belief.cov;
    let mu = &belief.mean;
    let h_phi = h * &phi;
    let s2 = phi.dot(&h_phi);
    let (beta, cov_eps, s2) = if s2 > DEGENERATE_VARIANCE {
        let beta = &h_phi / s2;
        let cov_eps = h - &h_phi * h_phi.transpose() / s2;
        (beta, cov_eps, s2)
    } else {
        (DVector::zeros(n), h.clone(), 0.0)
    };
    let mu_alpha = phi.dot(mu);
    let s = dyn_.m_scale();

    // A_l(z) = u_l + (mu_l + beta_l z) v_l  and  V_l(z) = v_l, as polynomials in z.
    let mut a_polys = Vec::with_capacity(n);
    let mut v_polys = Vec::with_capacity(n);
    for i in 0..n {
        let l = i + 1;
        let inc = dyn_.inc_power_coefficients(l);
        let dec = dyn_.dec_power_coefficients(l);
        let len = inc.len().max(dec.len());
        let u: Vec<f64> = (0..len).map(|k| s * inc.get(k).copied().unwrap_or(0.0)).collect();
        let mut v: Vec<f64> = (0..len)
            .map(|k| -s * (inc.get(k).copied().unwrap_or(0.0) + dec.get(k).copied().unwrap_or(0.0)))
            .collect();
        v[0] += 1.0;
        let u = taylor_shift(&u, mu_alpha);
        let v = taylor_shift(&v, mu_alpha);
        let mut a = poly_mul(&[mu[i], beta[i]], &v);
        for (k, c) in u.iter().enumerate() {
            a[k] += c;
        }
        a_polys.push(a);
        v_polys.push(v);
    }
    let mean = DVector::from_iterator(n, a_polys.iter().map(|a| centered_expectation(a, s2)));
    for (a, m) in a_polys.iter_mut().zip(mean.iter()) {
        a[0] -= m;
    }
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut c = centered_expectation(&poly_mul(&a_polys[i], &a_polys[j]), s2);
            let e = cov_eps[(i, j)];
            if e != 0.0 {
                c += e * centered_expectation(&poly_mul(&v_polys[i], &v_polys[j]), s2);
            }
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    Ok((mean, cov))
}

/// Prediction step without process noise.
pub fn predict(dyn_: &PolynomialDynamics, belief: &FilterState) -> Result<FilterState> {
    predict_with_noise(dyn_, belief, 0.0)
}

/// Prediction step with additive process noise `q I`.
pub fn predict_with_noise(
    dyn_: &PolynomialDynamics,
    belief: &FilterState,
    q: f64,
) -> Result<FilterState> {
    let (mean, mut cov) = gaussian_poly_moments(dyn_, belief)?;
    if q > 0.0 {
        for i in 0..cov.nrows() {
            cov[(i, i)] += q;
        }
    }
    Ok(FilterState {
        mean,
        cov: symmetrize(cov),
    })
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Result of a Kalman update, with the innovation statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub posterior: FilterState,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
}

/// Kalman update with the Joseph-form covariance.
pub fn update(prior: &FilterState, obs: &Observation) -> Result<FilterState> {
    update_detailed(prior, obs).map(|o| o.posterior)
}

pub fn update_detailed(prior: &FilterState, obs: &Observation) -> Result<UpdateOutcome> {
    let n = prior.dim();
    if obs.c_matrix.ncols() != n {
        return Err(Error::Dimension {
            context: "observation matrix columns",
            expected: n,
            actual: obs.c_matrix.ncols(),
        });
    }
    let rows = obs.y.len();
    if rows == 0 {
        return Ok(UpdateOutcome {
            posterior: prior.clone(),
            innovation: DVector::zeros(0),
            innovation_cov: DMatrix::zeros(0, 0),
        });
    }
    let c = &obs.c_matrix;
    let h = &prior.cov;
    let s = symmetrize(&obs.r_cov + c * h * c.transpose());
    let cond = condition_number(&s);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::Singular {
            context: "innovation covariance",
            condition: cond,
        });
    }
    let s_inv = s
        .clone()
        .cholesky()
        .map(|ch| ch.inverse())
        .or_else(|| s.clone().try_inverse())
        .ok_or(Error::Singular {
            context: "innovation covariance",
            condition: cond,
        })?;
    let k = h * c.transpose() * s_inv;
    let innovation = &obs.y - c * &prior.mean;
    let mean = &prior.mean + &k * &innovation;
    let ikc = DMatrix::identity(n, n) - &k * c;
    let cov = &ikc * h * ikc.transpose() + &k * &obs.r_cov * k.transpose();
    Ok(UpdateOutcome {
        posterior: FilterState {
            mean,
            cov: symmetrize(cov),
        },
        innovation,
        innovation_cov: s,
    })
}

/// One predict/update cycle of [`track`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrackStep {
    pub prior: FilterState,
    pub posterior: FilterState,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    /// Per-degree squared error against the supplied truth.
    pub sq_error: Option<Vec<f64>>,
}

impl TrackStep {
    /// Total squared error `sum_l (xhat(l) - x(l))^2`.
    pub fn total_sq_error(&self) -> Option<f64> {
        self.sq_error.as_ref().map(|e| e.iter().sum())
    }
}

/// Runs predict/update over `observations`, starting from `init` (the belief
/// about the state one step before the first observation). `truth[n]`, when
/// given, is the state observed by `observations[n]`.
pub fn track(
    dyn_: &PolynomialDynamics,
    observations: &[Observation],
    init: &FilterState,
    truth: Option<&[Vec<f64>]>,
    process_noise: f64,
) -> Result<Vec<TrackStep>> {
    if let Some(t) = truth {
        if t.len() != observations.len() {
            return Err(Error::Dimension {
                context: "truth length",
                expected: observations.len(),
                actual: t.len(),
            });
        }
    }
    let mut belief = init.clone();
    let mut out = Vec::with_capacity(observations.len());
    for (n, obs) in observations.iter().enumerate() {
        let prior = predict_with_noise(dyn_, &belief, process_noise)?;
        let upd = update_detailed(&prior, obs)?;
        let sq_error = truth.map(|t| {
            upd.posterior
                .mean
                .iter()
                .zip(&t[n])
                .map(|(a, b)| (a - b).powi(2))
                .collect()
        });
        belief = upd.posterior.clone();
        out.push(TrackStep {
            prior,
            posterior: upd.posterior,
            innovation: upd.innovation,
            innovation_cov: upd.innovation_cov,
            sq_error,
        });
    }
    Ok(out)
}

/// CSV `t,degree,xhat,h_ll,y,mse`; `t` starts at 1, `y` and `mse` may be empty.
pub fn filter_log_csv(steps: &[TrackStep], observations: &[Observation]) -> String {
    let mut s = String::from("t,degree,xhat,h_ll,y,mse\n");
    for (n, step) in steps.iter().enumerate() {
        let obs = observations.get(n);
        for l in 1..=step.posterior.dim() {
            let y = obs
                .and_then(|o| o.value_for(l))
                .map(|v| v.to_string())
                .unwrap_or_default();
            let mse = step
                .sq_error
                .as_ref()
                .map(|e| e[l - 1].to_string())
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{l},{},{},{y},{mse}",
                n + 1,
                step.posterior.mean[l - 1],
                step.posterior.cov[(l - 1, l - 1)]
            );
        }
    }
    s
}

/// Belief over the slow-scale chain states `1..=N+`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmBelief {
    pub probs: Vec<f64>,
}

impl HmmBelief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(param("probs", "must be a non-empty non-negative vector"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(param("probs", format!("sums to {total}")));
        }
        Ok(HmmBelief { probs })
    }

    pub fn uniform(size: usize) -> Self {
        HmmBelief {
            probs: vec![1.0 / size as f64; size],
        }
    }

    /// 1-based state with the largest probability (smallest index on ties).
    pub fn mode(&self) -> usize {
        argmax(&self.probs) + 1
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `rho' = B H' rho / 1' B H' rho` with `B = diag(likelihood)`.
pub fn hmm_update(
    belief: &HmmBelief,
    h_matrix: &EvolutionMatrix,
    likelihood: &[f64],
) -> Result<HmmBelief> {
    let n = belief.probs.len();
    if h_matrix.size() != n || likelihood.len() != n {
        return Err(Error::Dimension {
            context: "hmm update",
            expected: n,
            actual: if h_matrix.size() != n {
                h_matrix.size()
            } else {
                likelihood.len()
            },
        });
    }
    if likelihood.iter().any(|b| !(*b >= 0.0)) {
        return Err(param("likelihood", "entries must be non-negative"));
    }
    let predicted = h_matrix.transpose_apply(&belief.probs);
    let weighted: Vec<f64> = predicted.iter().zip(likelihood).map(|(p, b)| p * b).collect();
    let norm: f64 = weighted.iter().sum();
    if !(norm > 0.0) {
        return Err(Error::Numerical(
            "observation has zero probability under the predicted belief".into(),
        ));
    }
    Ok(HmmBelief {
        probs: weighted.iter().map(|w| w / norm).collect(),
    })
}

/// Discretised Gaussian likelihood `P(z | state i)` over states `1..=size`.
pub fn gaussian_likelihood(z: f64, size: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(param("sigma", "must be positive"));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok((1..=size)
        .map(|i| {
            let d = z - i as f64;
            normal.cdf(d + 0.5) - normal.cdf(d - 0.5)
        })
        .collect())
}

/// Optional fast-scale filter run used to estimate the endemic state from
/// noisy observations instead of reading it off the mean-field map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastFilterConfig {
    pub obs_noise: f64,
    pub steps: usize,
    pub prior_var: f64,
    pub seed: u64,
}

/// Two-time-scale tracking configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTimescaleConfig {
    pub kernel: TransitionKernel,
    /// Initial degree distribution over `1..=N+`.
    pub rho0: Vec<f64>,
    /// Slow index of the first evolution step minus one.
    pub k0: usize,
    pub slow_steps: usize,
    pub m: usize,
    pub x0: f64,
    pub fast_tol: f64,
    pub fast_max_iter: usize,
    pub sigma: f64,
    pub fast_filter: Option<FastFilterConfig>,
}

/// Per-slow-step record of [`two_timescale_track`].
#[derive(Debug, Clone, PartialEq)]
pub struct SlowStep {
    pub k: usize,
    pub p: f64,
    pub true_rho: Vec<f64>,
    pub belief: HmmBelief,
    pub alpha_inf: f64,
    pub observed_mode: usize,
    pub true_mode: usize,
}

impl SlowStep {
    pub fn belief_mode(&self) -> usize {
        self.belief.mode()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoTimescaleReport {
    pub steps: Vec<SlowStep>,
}

impl TwoTimescaleReport {
    /// Fraction of slow steps where the belief mode equals the true mode.
    pub fn mode_agreement(&self) -> f64 {
        if self.steps.is_empty() {
            return 1.0;
        }
        let hits = self
            .steps
            .iter()
            .filter(|s| s.belief_mode() == s.true_mode)
            .count();
        hits as f64 / self.steps.len() as f64
    }

    /// CSV `k,state,prob,mode_obs`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,state,prob,mode_obs\n");
        for step in &self.steps {
            for (i, p) in step.belief.probs.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{}", step.k, i + 1, p, step.observed_mode);
            }
        }
        s
    }
}

fn floored_distribution(rho: &[f64]) -> Result<DegreeDistribution> {
    DegreeDistribution::from_weights(&rho.iter().map(|p| p.max(1e-9)).collect::<Vec<_>>())
}

/// Endemic state of the fast scale for degree law `rho` (zero classes allowed).
fn fast_fixed_point(cfg: &TwoTimescaleConfig, rho: &[f64]) -> Result<(Vec<f64>, f64)> {
    let dist = DegreeDistribution::from_weights(rho)?;
    let d = build_dynamics_lenient(&cfg.kernel, &dist, cfg.m, LambdaScope::Both)?;
    let x0 = vec![cfg.x0; rho.len()];
    let fp = asymptotic_state(&d, &x0, cfg.fast_tol, cfg.fast_max_iter)?;
    let alpha = d.alpha(&fp.state);
    Ok((fp.state, alpha))
}

fn infected_mass_mode(rho: &[f64], x: &[f64]) -> usize {
    let mass: Vec<f64> = rho.iter().zip(x).map(|(r, v)| r * v).collect();
    argmax(&mass) + 1
}

/// Slow HMM filter over the degree distribution driven by fast-scale mode
/// observations.
///
/// At slow step `k` the attachment probability is `p_of_alpha(alpha_inf)`
/// from the previous endemic state, the true distribution evolves by
/// `H_{k0+k}(p)'`, and the observation is the mode of the infected degree
/// mass `rho_k(l) x_inf(l)`.
pub fn two_timescale_track(
    p_of_alpha: &dyn Fn(f64) -> f64,
    cfg: &TwoTimescaleConfig,
) -> Result<TwoTimescaleReport> {
    let size = cfg.rho0.len();
    if size == 0 {
        return Err(param("rho0", "empty"));
    }
    if cfg.kernel.max_degree() < size {
        return Err(param("kernel", "must cover every chain state"));
    }
    let mut rho = cfg.rho0.clone();
    let mut belief = HmmBelief::new(DegreeDistribution::from_weights(&rho)?.into_probs())?;
    let (_, mut alpha) = fast_fixed_point(cfg, &rho)?;
    let mut rng = crate::rng_from_seed(cfg.fast_filter.as_ref().map_or(0, |f| f.seed));
    let mut steps = Vec::with_capacity(cfg.slow_steps);
    for step in 1..=cfg.slow_steps {
        let k = cfg.k0 + step;
        let p = p_of_alpha(alpha).clamp(0.0, 1.0);
        let h = evolution_matrix(p, k, size)?;
        rho = h.transpose_apply(&rho);
        let (x_inf, a) = fast_fixed_point(cfg, &rho)?;
        alpha = a;
        let true_mode = infected_mass_mode(&rho, &x_inf);
        let x_obs = match &cfg.fast_filter {
            None => x_inf.clone(),
            Some(ff) => fast_filter_estimate(cfg, ff, &belief.probs, &x_inf, &mut rng)?,
        };
        let observed_mode = infected_mass_mode(&rho, &x_obs);
        let lik = gaussian_likelihood(observed_mode as f64, size, cfg.sigma)?;
        belief = hmm_update(&belief, &h, &lik)?;
        steps.push(SlowStep {
            k,
            p,
            true_rho: rho.clone(),
            belief: belief.clone(),
            alpha_inf: alpha,
            observed_mode,
            true_mode,
        });
    }
    Ok(TwoTimescaleReport { steps })
}

/// Runs the polynomial filter, with dynamics built from the current belief,
/// on noisy observations of the endemic state and returns its final mean.
fn fast_filter_estimate<R: Rng>(
    cfg: &TwoTimescaleConfig,
    ff: &FastFilterConfig,
    belief: &[f64],
    x_inf: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dist = floored_distribution(belief)?;
    let d = build_dynamics_lenient(&cfg.kernel, &dist, cfg.m, LambdaScope::Both)?;
    let mut est = FilterState::isotropic(x_inf.len(), cfg.x0, ff.prior_var)?;
    for _ in 0..ff.steps {
        let obs = gaussian_observation(x_inf, ff.obs_noise, rng)?;
        let prior = predict_with_noise(&d, &est, ff.obs_noise * 1e-2)?;
        est = update(&prior, &obs)?;
    }
    Ok(est.mean.iter().map(|v| v.clamp(0.0, 1.0)).collect())
}
