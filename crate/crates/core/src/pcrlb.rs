//! Posterior Cramér–Rao lower bound for the perturbed mean-field system
//!
//! ```text
//! x_{n+1} = f(x_n) + w_n,   w_n ~ N(0, eps I)
//! y_n     = C x_n + v_n,    v_n ~ N(0, R)
//! ```
//!
//! The Fisher information follows `J_{n+1} = D22 - D21 (J_n + D11)^{-1} D12`
//! with `D11 = E[F'F]/eps`, `D12 = -E[F']/eps`, `D21 = D12'` and
//! `D22 = I/eps + C' R^{-1} C`, where `F` is the Jacobian of `f`. Expectations
//! are Monte Carlo averages over simulated perturbed trajectories.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::filter::{predict_with_noise, update, FilterState};
use crate::meanfield::{jacobian, mean_field_step, PolynomialDynamics};
use crate::sampling::Observation;
use crate::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct PcrlbConfig {
    pub epsilon: f64,
    pub n_trajectories: usize,
    pub horizon: usize,
    pub c_matrix: DMatrix<f64>,
    pub r_cov: DMatrix<f64>,
}

impl PcrlbConfig {
    /// Full-state observations with noise `r I`, `eps = 1e-6`.
    pub fn identity_observations(dim: usize, r: f64, n_trajectories: usize, horizon: usize) -> Self {
        PcrlbConfig {
            epsilon: 1e-6,
            n_trajectories,
            horizon,
            c_matrix: DMatrix::identity(dim, dim),
            r_cov: DMatrix::identity(dim, dim) * r,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(param("epsilon", "must be positive"));
        }
        if self.n_trajectories == 0 {
            return Err(param("n_trajectories", "must be at least 1"));
        }
        if self.c_matrix.ncols() != dim {
            return Err(Error::Dimension {
                context: "observation matrix columns",
                expected: dim,
                actual: self.c_matrix.ncols(),
            });
        }
        let rows = self.c_matrix.nrows();
        if self.r_cov.nrows() != rows || self.r_cov.ncols() != rows {
            return Err(Error::Dimension {
                context: "observation covariance",
                expected: rows,
                actual: self.r_cov.nrows(),
            });
        }
        Ok(())
    }

    /// `C' R^{-1} C`, zero when there are no observation rows.
    fn observation_information(&self) -> Result<DMatrix<f64>> {
        let n = self.c_matrix.ncols();
        if self.c_matrix.nrows() == 0 || self.c_matrix.iter().all(|&v| v == 0.0) {
            return Ok(DMatrix::zeros(n, n));
        }
        let r_inv = self
            .r_cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite {
                context: "observation covariance",
                min_eigenvalue: min_eigenvalue(&self.r_cov),
            })?
            .inverse();
        Ok(self.c_matrix.transpose() * r_inv * &self.c_matrix)
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Information matrices `J_0 .. J_horizon` and the bounds `tr(J_n^{-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherSequence {
    pub j: Vec<DMatrix<f64>>,
    pub traces: Vec<f64>,
}

fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite {
            context,
            min_eigenvalue: min_eigenvalue(m),
        })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn trajectory_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn gaussian_vector<R: Rng + ?Sized>(chol: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(chol.ncols(), |_, _| StandardNormal.sample(rng));
    chol * z
}

/// Simulates one perturbed trajectory `x_0 .. x_horizon`.
fn perturbed_trajectory<R: Rng + ?Sized>(
    dyn_: &PolynomialDynamics,
    prior_chol: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    eps: f64,
    horizon: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = dyn_.dim();
    let sd = eps.sqrt();
    let mut x: Vec<f64> = (prior_mean + gaussian_vector(prior_chol, rng)).iter().cloned().collect();
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(x.clone());
    for _ in 0..horizon {
        x = mean_field_step(dyn_, &x);
        for v in x.iter_mut().take(n) {
            let w: f64 = StandardNormal.sample(rng);
            *v += sd * w;
        }
        out.push(x.clone());
    }
    out
}

/// Lower-triangular factor of a PSD matrix, tolerating exact zeros.
fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = m.clone().cholesky() {
        return c.l();
    }
    let eig = m.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

fn simulate_trajectories(
    dyn_: &PolynomialDynamics,
    cfg: &PcrlbConfig,
    prior: &FilterState,
    seed: u64,
) -> Vec<Vec<Vec<f64>>> {
    let chol = psd_factor(&prior.cov);
    (0..cfg.n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(trajectory_seed(seed, i));
            perturbed_trajectory(dyn_, &chol, &prior.mean, cfg.epsilon, cfg.horizon, &mut rng)
        })
        .collect()
}

/// Runs the Fisher recursion from `J_0 = H_0^{-1}` of `prior`.
pub fn pcrlb_run(
    dyn_: &PolynomialDynamics,
    cfg: &PcrlbConfig,
    prior: &FilterState,
    seed: u64,
) -> Result<FisherSequence> {
    cfg.validate(dyn_.dim())?;
    let trajectories = simulate_trajectories(dyn_, cfg, prior, seed);
    fisher_from_trajectories(dyn_, cfg, prior, &trajectories)
}

fn fisher_from_trajectories(
    dyn_: &PolynomialDynamics,
    cfg: &PcrlbConfig,
    prior: &FilterState,
    trajectories: &[Vec<Vec<f64>>],
) -> Result<FisherSequence> {
    let n = dyn_.dim();
    let j0 = symmetrize(spd_inverse(&prior.cov, "prior covariance")?);
    let obs_info = cfg.observation_information()?;
    let inv_eps = 1.0 / cfg.epsilon;
    let d22 = DMatrix::identity(n, n) * inv_eps + &obs_info;
    let count = trajectories.len() as f64;

    let mut j = j0;
    let mut js = Vec::with_capacity(cfg.horizon + 1);
    let mut traces = Vec::with_capacity(cfg.horizon + 1);
    traces.push(spd_inverse(&j, "Fisher information")?.trace());
    js.push(j.clone());
    for step in 0..cfg.horizon {
        let (sum_ftf, sum_f) = trajectories
            .par_iter()
            .map(|t| {
                let f = jacobian(dyn_, &t[step]);
                (f.transpose() * &f, f)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(
                (DMatrix::zeros(n, n), DMatrix::zeros(n, n)),
                |(a, b), (ftf, f)| (a + ftf, b + f),
            );
        let d11 = sum_ftf * (inv_eps / count);
        let d12 = -sum_f.transpose() * (inv_eps / count);
        let d21 = d12.transpose();
        let inner = symmetrize(&j + &d11);
        let inner_inv = inner.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
            let sv = inner.clone().singular_values();
            Error::Singular {
                context: "J_n + D11",
                condition: sv.max() / sv.min(),
            }
        })?;
        j = symmetrize(&d22 - d21 * inner_inv * d12);
        let trace = spd_inverse(&j, "Fisher information")?.trace();
        js.push(j.clone());
        traces.push(trace);
    }
    Ok(FisherSequence { j: js, traces })
}

/// Filter MSE and the bound on the same perturbed trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcrlbReport {
    pub bound: Vec<f64>,
    pub mse: Vec<f64>,
    /// Monte Carlo standard error of `mse`.
    pub mse_se: Vec<f64>,
}

impl PcrlbReport {
    /// Steps where the MSE falls below the bound by more than `k` standard errors.
    pub fn violations(&self, k: f64) -> Vec<usize> {
        (0..self.bound.len())
            .filter(|&n| self.mse[n] < self.bound[n] - k * self.mse_se[n])
            .collect()
    }
}

/// Runs the Gaussian filter (process noise `eps`) on each simulated
/// trajectory with observations `y_n = C x_n + v_n` and reports the per-step
/// MSE alongside `tr(J_n^{-1})`.
pub fn mse_vs_bound_report(
    dyn_: &PolynomialDynamics,
    cfg: &PcrlbConfig,
    prior: &FilterState,
    seed: u64,
) -> Result<PcrlbReport> {
    cfg.validate(dyn_.dim())?;
    let trajectories = simulate_trajectories(dyn_, cfg, prior, seed);
    let fisher = fisher_from_trajectories(dyn_, cfg, prior, &trajectories)?;
    let r_chol = psd_factor(&cfg.r_cov);
    let errors: Vec<Vec<f64>> = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| -> Result<Vec<f64>> {
            let mut rng = rng_from_seed(trajectory_seed(seed.wrapping_add(1), i));
            let mut belief = prior.clone();
            let mut errs = Vec::with_capacity(traj.len());
            let sq = |b: &FilterState, x: &[f64]| -> f64 {
                b.mean.iter().zip(x).map(|(a, v)| (a - v).powi(2)).sum()
            };
            errs.push(sq(&belief, &traj[0]));
            for x in &traj[1..] {
                let xv = DVector::from_column_slice(x);
                let y = &cfg.c_matrix * xv + gaussian_vector(&r_chol, &mut rng);
                let obs = Observation {
                    y,
                    c_matrix: cfg.c_matrix.clone(),
                    r_cov: cfg.r_cov.clone(),
                    sample_sizes: vec![0; x.len()],
                    degrees: (1..=cfg.c_matrix.nrows()).collect(),
                    missing: Vec::new(),
                    warnings: Vec::new(),
                };
                let predicted = predict_with_noise(dyn_, &belief, cfg.epsilon)?;
                belief = update(&predicted, &obs)?;
                errs.push(sq(&belief, x));
            }
            Ok(errs)
        })
        .collect::<Result<_>>()?;
    let count = errors.len() as f64;
    let steps = cfg.horizon + 1;
    let mut mse = vec![0.0; steps];
    let mut mse_se = vec![0.0; steps];
    for n in 0..steps {
        let mean = errors.iter().map(|e| e[n]).sum::<f64>() / count;
        let var = if errors.len() > 1 {
            errors.iter().map(|e| (e[n] - mean).powi(2)).sum::<f64>() / (count - 1.0)
        } else {
            0.0
        };
        mse[n] = mean;
        mse_se[n] = (var / count).sqrt();
    }
    Ok(PcrlbReport {
        bound: fisher.traces,
        mse,
        mse_se,
    })
}

/// CSV `n,trace_bound,trace_mse,network_label` over labelled reports.
pub fn pcrlb_csv(reports: &[(&str, &PcrlbReport)]) -> String {
    let mut s = String::from("n,trace_bound,trace_mse,network_label\n");
    for (label, r) in reports {
        for n in 0..r.bound.len() {
            let _ = writeln!(s, "{n},{},{},{label}", r.bound[n], r.mse[n]);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DegreeDistribution;
    use crate::meanfield::build_dynamics;
    use crate::sis::TransitionKernel;

    fn static_dyn(dim: usize) -> PolynomialDynamics {
        let k = TransitionKernel::random(dim, 0.0, 1).unwrap();
        build_dynamics(&k, &DegreeDistribution::uniform(dim).unwrap(), 1).unwrap()
    }

    #[test]
    fn static_model_matches_scalar_recursion() {
        let (h0, r, eps) = (0.01, 5e-3, 1e-9);
        let d = static_dyn(2);
        let cfg = PcrlbConfig {
            epsilon: eps,
            ..PcrlbConfig::identity_observations(2, r, 3, 20)
        };
        let prior = FilterState::isotropic(2, 0.5, h0).unwrap();
        let seq = pcrlb_run(&d, &cfg, &prior, 1).unwrap();
        let mut p = h0;
        for n in 1..=20 {
            p = 1.0 / (1.0 / (p + eps) + 1.0 / r);
            assert!((seq.traces[n] - 2.0 * p).abs() < 1e-10 * p.max(1.0), "n = {n}");
        }
        // Static estimation: J_n ~ 1/h0 + n/r.
        let static_bound = 2.0 / (1.0 / h0 + 20.0 / r);
        assert!((seq.traces[20] - static_bound).abs() / static_bound < 1e-2);
    }

    #[test]
    fn no_data_bound_grows() {
        let d = static_dyn(3);
        let cfg = PcrlbConfig {
            c_matrix: DMatrix::zeros(3, 3),
            ..PcrlbConfig::identity_observations(3, 1.0, 2, 10)
        };
        let prior = FilterState::isotropic(3, 0.5, 0.1).unwrap();
        let seq = pcrlb_run(&d, &cfg, &prior, 0).unwrap();
        assert!(seq.traces.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn invalid_config() {
        let d = static_dyn(2);
        let prior = FilterState::isotropic(2, 0.5, 0.1).unwrap();
        let mut cfg = PcrlbConfig::identity_observations(2, 1.0, 2, 3);
        cfg.epsilon = 0.0;
        assert!(pcrlb_run(&d, &cfg, &prior, 0).is_err());
        let cfg = PcrlbConfig::identity_observations(3, 1.0, 2, 3);
        assert!(pcrlb_run(&d, &cfg, &prior, 0).is_err());
        let singular = FilterState::isotropic(2, 0.5, 0.0).unwrap();
        let cfg = PcrlbConfig::identity_observations(2, 1.0, 2, 3);
        assert!(pcrlb_run(&d, &cfg, &singular, 0).is_err());
    }

    #[test]
    fn report_has_both_curves() {
        let d = static_dyn(2);
        let cfg = PcrlbConfig::identity_observations(2, 1e-2, 4, 5);
        let prior = FilterState::isotropic(2, 0.5, 0.01).unwrap();
        let r = mse_vs_bound_report(&d, &cfg, &prior, 3).unwrap();
        assert_eq!(r.bound.len(), 6);
        assert_eq!(r.mse.len(), 6);
        let csv = pcrlb_csv(&[("er", &r)]);
        assert!(csv.starts_with("n,trace_bound,trace_mse,network_label\n0,"));
        assert_eq!(csv.lines().count(), 7);
    }
}
