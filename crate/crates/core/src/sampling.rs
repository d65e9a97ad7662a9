//! Noisy observations of the infected degree distribution.
//!
//! Two samplers are provided: i.i.d. uniform sampling within each degree
//! class, and respondent-driven sampling (a weighted random walk with an
//! importance-reweighted estimator). Both produce an [`Observation`]
//! `y = C x + v` with a Gaussian noise covariance `R`.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::Graph;
use crate::sis::InfectionState;
use crate::SimRng;

/// Floor applied to plug-in variances.
pub const R_MIN: f64 = 1e-6;

/// Number of non-overlapping batches used for the RDS variance estimate.
pub const RDS_BATCHES: usize = 20;

/// Diagnostic attached to an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationWarning {
    /// The walk's component is bipartite, so the chain is periodic.
    Bipartite,
    /// The walk cannot reach every non-isolated node.
    Disconnected,
}

/// One observation `y = C x + v`, `v ~ N(0, R)`.
///
/// Rows of `C` select degree classes; degrees without data are dropped and
/// listed in `missing`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: DVector<f64>,
    pub c_matrix: DMatrix<f64>,
    pub r_cov: DMatrix<f64>,
    /// Per-degree sample counts `gamma(l)`, length `L` (visits for RDS).
    pub sample_sizes: Vec<usize>,
    /// Degree (1-based) observed by each row.
    pub degrees: Vec<usize>,
    pub missing: Vec<usize>,
    pub warnings: Vec<ObservationWarning>,
}

impl Observation {
    /// Builds a selection observation from per-degree estimates; `None`
    /// entries are treated as missing.
    pub fn from_estimates(estimates: &[Option<(f64, f64)>], sample_sizes: Vec<usize>) -> Self {
        let l_max = estimates.len();
        let degrees: Vec<usize> = (1..=l_max).filter(|&l| estimates[l - 1].is_some()).collect();
        let missing = (1..=l_max).filter(|&l| estimates[l - 1].is_none()).collect();
        let rows = degrees.len();
        let mut c = DMatrix::zeros(rows, l_max);
        let mut y = DVector::zeros(rows);
        let mut r = DMatrix::zeros(rows, rows);
        for (row, &l) in degrees.iter().enumerate() {
            let (value, var) = estimates[l - 1].expect("filtered above");
            c[(row, l - 1)] = 1.0;
            y[row] = value;
            r[(row, row)] = var.max(R_MIN);
        }
        Observation {
            y,
            c_matrix: c,
            r_cov: r,
            sample_sizes,
            degrees,
            missing,
            warnings: Vec::new(),
        }
    }

    /// Full-state observation `y = x`, `C = I`, given covariance.
    pub fn full(y: Vec<f64>, r_cov: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if r_cov.nrows() != n || r_cov.ncols() != n {
            return Err(Error::Dimension {
                context: "observation covariance",
                expected: n,
                actual: r_cov.nrows(),
            });
        }
        Ok(Observation {
            y: DVector::from_vec(y),
            c_matrix: DMatrix::identity(n, n),
            r_cov,
            sample_sizes: vec![0; n],
            degrees: (1..=n).collect(),
            missing: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.c_matrix.ncols()
    }

    /// Replaces `R` by `r * I`.
    pub fn with_constant_noise(mut self, r: f64) -> Self {
        let rows = self.y.len();
        self.r_cov = DMatrix::identity(rows, rows) * r;
        self
    }

    /// Observed value for degree `l`, if present.
    pub fn value_for(&self, l: usize) -> Option<f64> {
        self.degrees.iter().position(|&d| d == l).map(|i| self.y[i])
    }

    /// Checks shapes and that `R` is symmetric with non-negative eigenvalues.
    pub fn check_invariants(&self) -> Result<()> {
        let rows = self.y.len();
        if self.c_matrix.nrows() != rows || self.r_cov.nrows() != rows || self.r_cov.ncols() != rows
        {
            return Err(Error::Dimension {
                context: "observation",
                expected: rows,
                actual: self.c_matrix.nrows(),
            });
        }
        let asym = (&self.r_cov - self.r_cov.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(Error::Numerical(format!("R asymmetric by {asym:.3e}")));
        }
        if rows > 0 {
            let min = self
                .r_cov
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min < -1e-12 {
                return Err(Error::NotPositiveDefinite {
                    context: "observation covariance",
                    min_eigenvalue: min,
                });
            }
        }
        Ok(())
    }
}

fn nodes_by_degree(g: &Graph, l_max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); l_max];
    for v in 0..g.node_count() {
        let d = g.degree(v);
        if (1..=l_max).contains(&d) {
            out[d - 1].push(v);
        }
    }
    out
}

/// Uniform sampling with replacement, `gamma[l-1]` draws from degree class `l`.
/// When `gamma(l) >= M(l)` the whole class is enumerated instead.
pub fn uniform_sample<R: Rng + ?Sized>(
    g: &Graph,
    state: &InfectionState,
    gamma: &[usize],
    rng: &mut R,
) -> Result<Observation> {
    if state.len() != g.node_count() {
        return Err(Error::Dimension {
            context: "infection state",
            expected: g.node_count(),
            actual: state.len(),
        });
    }
    let classes = nodes_by_degree(g, gamma.len());
    let mut estimates = Vec::with_capacity(gamma.len());
    for (i, (&n, nodes)) in gamma.iter().zip(&classes).enumerate() {
        let l = i + 1;
        if nodes.is_empty() {
            if n > 0 {
                return Err(Error::EmptyDegreeClass { degree: l });
            }
            estimates.push(None);
            continue;
        }
        if n == 0 {
            return Err(param(
                "gamma",
                format!("degree {l} has {} nodes but no samples", nodes.len()),
            ));
        }
        if n >= nodes.len() {
            let hits = nodes.iter().filter(|&&v| state.is_infected(v)).count();
            estimates.push(Some((hits as f64 / nodes.len() as f64, R_MIN)));
            continue;
        }
        let hits = (0..n)
            .filter(|_| state.is_infected(nodes[rng.random_range(0..nodes.len())]))
            .count();
        let p = hits as f64 / n as f64;
        estimates.push(Some((p, plug_in_variance(hits, n))));
    }
    Ok(Observation::from_estimates(&estimates, gamma.to_vec()))
}

/// Binomial variance `p(1-p)/n` evaluated at the shrunk proportion
/// `(hits + 1/2) / (n + 1)`, so all-or-nothing samples keep a usable variance.
pub fn plug_in_variance(hits: usize, n: usize) -> f64 {
    let p = (hits as f64 + 0.5) / (n as f64 + 1.0);
    p * (1.0 - p) / n as f64
}

/// Binomial sampling from a fractional state: `y(l) = Bin(gamma(l), x(l)) / gamma(l)`
/// with the binomial plug-in variance.
pub fn binomial_observation<R: Rng + ?Sized>(
    x: &[f64],
    gamma: &[usize],
    rng: &mut R,
) -> Result<Observation> {
    if x.len() != gamma.len() {
        return Err(Error::Dimension {
            context: "binomial observation",
            expected: x.len(),
            actual: gamma.len(),
        });
    }
    let mut estimates = Vec::with_capacity(x.len());
    for (&xl, &n) in x.iter().zip(gamma) {
        if n == 0 {
            estimates.push(None);
            continue;
        }
        let p = xl.clamp(0.0, 1.0);
        let k = Binomial::new(n as u64, p)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .sample(rng);
        let yl = k as f64 / n as f64;
        estimates.push(Some((yl, plug_in_variance(k as usize, n))));
    }
    Ok(Observation::from_estimates(&estimates, gamma.to_vec()))
}

/// Gaussian observation `y = x + v`, `v ~ N(0, r I)`.
pub fn gaussian_observation<R: Rng + ?Sized>(x: &[f64], r: f64, rng: &mut R) -> Result<Observation> {
    if !(r > 0.0) {
        return Err(param("r", "noise variance must be positive"));
    }
    let normal = Normal::new(0.0, r.sqrt()).map_err(|e| Error::Numerical(e.to_string()))?;
    let y = x.iter().map(|v| v + normal.sample(rng)).collect();
    Observation::full(y, DMatrix::identity(x.len(), x.len()) * r)
}

/// Respondent-driven sampling walk parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Per-edge weights aligned with `Graph::neighbors(i)`; `None` means unit weights.
    #[serde(default)]
    pub weights: Option<Vec<Vec<f64>>>,
    pub walk_length: usize,
    #[serde(default)]
    pub burn_in: usize,
    pub seed: u64,
}

impl WalkConfig {
    pub fn unit(walk_length: usize, burn_in: usize, seed: u64) -> Self {
        WalkConfig {
            weights: None,
            walk_length,
            burn_in,
            seed,
        }
    }

    fn validate(&self, g: &Graph) -> Result<()> {
        if self.walk_length <= self.burn_in {
            return Err(param("walk_length", "must exceed burn_in"));
        }
        if let Some(w) = &self.weights {
            if w.len() != g.node_count() {
                return Err(Error::Dimension {
                    context: "walk weights",
                    expected: g.node_count(),
                    actual: w.len(),
                });
            }
            for i in 0..g.node_count() {
                let nb = g.neighbors(i);
                if w[i].len() != nb.len() {
                    return Err(Error::Dimension {
                        context: "walk weights row",
                        expected: nb.len(),
                        actual: w[i].len(),
                    });
                }
                for (k, &j) in nb.iter().enumerate() {
                    let wij = w[i][k];
                    if !(wij >= 0.0) || !wij.is_finite() {
                        return Err(param("weights", format!("W[{i}][{j}] = {wij}")));
                    }
                    let back = g.neighbors(j).binary_search(&i).expect("undirected");
                    if (w[j][back] - wij).abs() > 1e-12 {
                        return Err(param("weights", format!("W is not symmetric at ({i},{j})")));
                    }
                }
            }
        }
        Ok(())
    }

    fn weight(&self, i: usize, k: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i][k])
    }
}

/// One visited node of an RDS walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkStep {
    pub step: usize,
    pub node: usize,
    pub degree: usize,
    pub infected: bool,
}

pub fn walk_log_to_csv(log: &[WalkStep]) -> String {
    let mut s = String::from("step,node,degree,state\n");
    for w in log {
        let _ = writeln!(s, "{},{},{},{}", w.step, w.node, w.degree, u8::from(w.infected));
    }
    s
}

/// Returns (component containing `start`, whether it is bipartite).
fn component_and_bipartite(g: &Graph, start: usize) -> (Vec<usize>, bool) {
    let mut color = vec![u8::MAX; g.node_count()];
    let mut queue = VecDeque::from([start]);
    color[start] = 0;
    let mut comp = Vec::new();
    let mut bipartite = true;
    while let Some(v) = queue.pop_front() {
        comp.push(v);
        for &u in g.neighbors(v) {
            if color[u] == u8::MAX {
                color[u] = 1 - color[v];
                queue.push_back(u);
            } else if color[u] == color[v] {
                bipartite = false;
            }
        }
    }
    (comp, bipartite)
}

/// Respondent-driven sampling estimate of `x(l)` for `l = 1..=l_max`.
pub fn rds_sample(
    g: &Graph,
    state: &InfectionState,
    l_max: usize,
    cfg: &WalkConfig,
) -> Result<Observation> {
    rds_sample_logged(g, state, l_max, cfg).map(|(o, _)| o)
}

/// As [`rds_sample`], also returning the post-burn-in walk.
pub fn rds_sample_logged(
    g: &Graph,
    state: &InfectionState,
    l_max: usize,
    cfg: &WalkConfig,
) -> Result<(Observation, Vec<WalkStep>)> {
    cfg.validate(g)?;
    if state.len() != g.node_count() {
        return Err(Error::Dimension {
            context: "infection state",
            expected: g.node_count(),
            actual: state.len(),
        });
    }
    let active: Vec<usize> = (0..g.node_count()).filter(|&v| g.degree(v) > 0).collect();
    if active.is_empty() {
        return Err(param("graph", "no edges to walk on"));
    }
    let mut rng: SimRng = crate::rng_from_seed(cfg.seed);
    let start = active[rng.random_range(0..active.len())];
    let (comp, bipartite) = component_and_bipartite(g, start);
    let mut warnings = Vec::new();
    if bipartite {
        warnings.push(ObservationWarning::Bipartite);
    }
    if comp.len() < active.len() {
        warnings.push(ObservationWarning::Disconnected);
    }

    let strength: Vec<f64> = (0..g.node_count())
        .map(|i| (0..g.degree(i)).map(|k| cfg.weight(i, k)).sum())
        .collect();
    let total: f64 = comp.iter().map(|&i| strength[i]).sum();
    if !(total > 0.0) {
        return Err(param("weights", "all weights on the walk's component are zero"));
    }

    let mut log = Vec::with_capacity(cfg.walk_length - cfg.burn_in);
    let mut v = start;
    for step in 0..cfg.walk_length {
        if step >= cfg.burn_in {
            log.push(WalkStep {
                step,
                node: v,
                degree: g.degree(v),
                infected: state.is_infected(v),
            });
        }
        if strength[v] <= 0.0 {
            continue;
        }
        let mut u = rng.random::<f64>() * strength[v];
        let nb = g.neighbors(v);
        let mut next = nb[nb.len() - 1];
        for (k, &j) in nb.iter().enumerate() {
            u -= cfg.weight(v, k);
            if u < 0.0 {
                next = j;
                break;
            }
        }
        v = next;
    }

    // Hansen–Hurwitz ratio estimator per degree class, overall and per batch.
    let ratio = |steps: &[WalkStep]| {
        let mut num = vec![0.0; l_max];
        let mut den = vec![0.0; l_max];
        let mut visits = vec![0usize; l_max];
        for w in steps {
            if (1..=l_max).contains(&w.degree) {
                let inv_pi = total / strength[w.node];
                den[w.degree - 1] += inv_pi;
                if w.infected {
                    num[w.degree - 1] += inv_pi;
                }
                visits[w.degree - 1] += 1;
            }
        }
        (num, den, visits)
    };
    let (num, den, visits) = ratio(&log);
    let batch_len = log.len() / RDS_BATCHES;
    let mut batch_estimates: Vec<Vec<f64>> = vec![Vec::new(); l_max];
    if batch_len > 0 {
        for b in 0..RDS_BATCHES {
            let (bn, bd, _) = ratio(&log[b * batch_len..(b + 1) * batch_len]);
            for l in 0..l_max {
                if bd[l] > 0.0 {
                    batch_estimates[l].push(bn[l] / bd[l]);
                }
            }
        }
    }
    let estimates: Vec<Option<(f64, f64)>> = (0..l_max)
        .map(|l| {
            if den[l] <= 0.0 {
                return None;
            }
            let est = num[l] / den[l];
            let be = &batch_estimates[l];
            let var = if be.len() >= 2 {
                let mean = be.iter().sum::<f64>() / be.len() as f64;
                let s2 = be.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (be.len() - 1) as f64;
                s2 / be.len() as f64
            } else {
                est * (1.0 - est) / visits[l] as f64
            };
            Some((est, var))
        })
        .collect();
    let mut obs = Observation::from_estimates(&estimates, visits);
    obs.warnings = warnings;
    Ok((obs, log))
}

/// Sampling method selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SamplingMethod {
    Uniform { gamma: Vec<usize> },
    Rds(WalkConfig),
}

impl FromStr for SamplingMethod {
    type Err = Error;

    /// Parses a bare method name with default settings (`gamma` empty,
    /// unit-weight walk of length 0) to be filled in by the caller.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(SamplingMethod::Uniform { gamma: Vec::new() }),
            "rds" => Ok(SamplingMethod::Rds(WalkConfig::unit(0, 0, 0))),
            other => Err(param("method", format!("unknown sampling method `{other}`"))),
        }
    }
}

/// Dispatching observation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserveConfig {
    #[serde(flatten)]
    pub method: SamplingMethod,
    pub l_max: usize,
    /// Replaces the estimated covariance by `r * I` when set.
    #[serde(default)]
    pub constant_r: Option<f64>,
}

/// Samples `state` according to `cfg`.
pub fn observe<R: Rng + ?Sized>(
    g: &Graph,
    state: &InfectionState,
    cfg: &ObserveConfig,
    rng: &mut R,
) -> Result<Observation> {
    let obs = match &cfg.method {
        SamplingMethod::Uniform { gamma } => {
            if gamma.len() != cfg.l_max {
                return Err(Error::Dimension {
                    context: "gamma",
                    expected: cfg.l_max,
                    actual: gamma.len(),
                });
            }
            uniform_sample(g, state, gamma, rng)?
        }
        SamplingMethod::Rds(walk) => rds_sample(g, state, cfg.l_max, walk)?,
    };
    let obs = match cfg.constant_r {
        Some(r) if r > 0.0 => obs.with_constant_noise(r),
        Some(r) => return Err(param("constant_r", format!("must be positive, got {r}"))),
        None => obs,
    };
    obs.check_invariants()?;
    Ok(obs)
}

/// Sample budget split proportionally to `rho`, at least one draw per class.
pub fn proportional_budget(rho: &[f64], budget: usize) -> Vec<usize> {
    rho.iter()
        .map(|p| ((p * budget as f64).round() as usize).max(1))
        .collect()
}

/// CSV `t,degree,y,r_ll,gamma` over a sequence of observations.
pub fn observations_to_csv(obs: &[Observation]) -> String {
    let mut s = String::from("t,degree,y,r_ll,gamma\n");
    for (t, o) in obs.iter().enumerate() {
        for (row, &l) in o.degrees.iter().enumerate() {
            let gamma = o.sample_sizes.get(l - 1).copied().unwrap_or(0);
            let _ = writeln!(s, "{t},{l},{},{},{gamma}", o.y[row], o.r_cov[(row, row)]);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn all_infected_estimates_one() {
        let g = Graph::cycle(10);
        let s = InfectionState::all_infected(10);
        let mut rng = rng_from_seed(1);
        let o = uniform_sample(&g, &s, &[0, 3], &mut rng).unwrap();
        assert_eq!(o.degrees, vec![2]);
        assert_eq!(o.y[0], 1.0);
        assert_eq!(o.missing, vec![1]);
        let r = rds_sample(&g, &s, 2, &WalkConfig::unit(100, 10, 3)).unwrap();
        assert_eq!(r.y[0], 1.0);
    }

    #[test]
    fn census_is_exact() {
        let g = Graph::star(5);
        let mut s = InfectionState::all_susceptible(5);
        s.set(1, true);
        s.set(0, true);
        let mut rng = rng_from_seed(0);
        let o = uniform_sample(&g, &s, &[4, 0, 0, 1], &mut rng).unwrap();
        assert_eq!(o.value_for(1), Some(0.25));
        assert_eq!(o.value_for(4), Some(1.0));
        assert!(o.r_cov.iter().all(|&v| v == 0.0 || v == R_MIN));
    }

    #[test]
    fn empty_class_with_samples_is_error() {
        let g = Graph::cycle(5);
        let s = InfectionState::all_susceptible(5);
        let mut rng = rng_from_seed(0);
        assert!(uniform_sample(&g, &s, &[1, 1], &mut rng).is_err());
    }

    #[test]
    fn bipartite_and_disconnected_flags() {
        let g = Graph::cycle(6);
        let o = rds_sample(&g, &InfectionState::all_susceptible(6), 2, &WalkConfig::unit(50, 0, 1))
            .unwrap();
        assert!(o.warnings.contains(&ObservationWarning::Bipartite));
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]).unwrap();
        let o = rds_sample(&g, &InfectionState::all_susceptible(6), 2, &WalkConfig::unit(50, 0, 1))
            .unwrap();
        assert_eq!(o.warnings, vec![ObservationWarning::Disconnected]);
    }

    #[test]
    fn unvisited_degree_is_missing() {
        let g = Graph::complete(4);
        let o = rds_sample(&g, &InfectionState::all_susceptible(4), 5, &WalkConfig::unit(40, 0, 2))
            .unwrap();
        assert_eq!(o.degrees, vec![3]);
        assert_eq!(o.missing, vec![1, 2, 4, 5]);
        assert_eq!(o.c_matrix.nrows(), 1);
        assert_eq!(o.c_matrix[(0, 2)], 1.0);
    }

    #[test]
    fn asymmetric_weights_rejected() {
        let g = Graph::path(3);
        let mut cfg = WalkConfig::unit(10, 0, 0);
        cfg.weights = Some(vec![vec![1.0], vec![2.0, 1.0], vec![1.0]]);
        assert!(rds_sample(&g, &InfectionState::all_susceptible(3), 2, &cfg).is_err());
        cfg.walk_length = 0;
        assert!(rds_sample(&g, &InfectionState::all_susceptible(3), 2, &cfg).is_err());
    }

    #[test]
    fn constant_override_and_unknown_method() {
        let g = Graph::complete(5);
        let s = InfectionState::all_infected(5);
        let cfg = ObserveConfig {
            method: SamplingMethod::Uniform { gamma: vec![0, 0, 0, 2] },
            l_max: 4,
            constant_r: Some(5e-3),
        };
        let o = observe(&g, &s, &cfg, &mut rng_from_seed(0)).unwrap();
        assert_eq!(o.r_cov[(0, 0)], 5e-3);
        assert!("mcmc".parse::<SamplingMethod>().is_err());
        assert!("RDS".parse::<SamplingMethod>().is_ok());
    }

    #[test]
    fn csv_layout() {
        let o = Observation::from_estimates(&[Some((0.5, 0.01)), None], vec![10, 0]);
        assert_eq!(observations_to_csv(&[o]), "t,degree,y,r_ll,gamma\n0,1,0.5,0.01,10\n");
    }
}
