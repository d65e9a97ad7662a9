//! Agent-based SIS dynamics on a fixed graph.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::{DegreeDistribution, Graph};
use crate::{rng_from_seed, SimRng};

/// Per-degree, per-infected-neighbour transition probabilities.
///
/// `p12[l][a]` is the infected → susceptible probability and `p21[l][a]` the
/// susceptible → infected probability of a degree-`l` node with `a` infected
/// neighbours, `0 <= a <= l <= L`. The per-step flip probability is `lambda`
/// times the table entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    p12: Vec<Vec<f64>>,
    p21: Vec<Vec<f64>>,
    lambda: f64,
}

impl TransitionKernel {
    pub fn new(p12: Vec<Vec<f64>>, p21: Vec<Vec<f64>>, lambda: f64) -> Result<Self> {
        if p12.len() != p21.len() || p12.is_empty() {
            return Err(param("kernel", "p12 and p21 must cover the same degrees 0..=L"));
        }
        for (l, (r12, r21)) in p12.iter().zip(&p21).enumerate() {
            if r12.len() != l + 1 || r21.len() != l + 1 {
                return Err(param("kernel", format!("row for degree {l} must have {} entries", l + 1)));
            }
        }
        let k = Self { p12, p21, lambda };
        k.validate()?;
        Ok(k)
    }

    /// Builds the tables from `entry(l, a) -> (p12, p21)`.
    pub fn from_fn<F>(max_degree: usize, lambda: f64, mut entry: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> (f64, f64),
    {
        let mut p12 = Vec::with_capacity(max_degree + 1);
        let mut p21 = Vec::with_capacity(max_degree + 1);
        for l in 0..=max_degree {
            let (r12, r21): (Vec<f64>, Vec<f64>) = (0..=l).map(|a| entry(l, a)).unzip();
            p12.push(r12);
            p21.push(r21);
        }
        Self::new(p12, p21, lambda)
    }

    /// Rates independent of degree and neighbourhood.
    pub fn constant(max_degree: usize, p12: f64, p21: f64, lambda: f64) -> Result<Self> {
        Self::from_fn(max_degree, lambda, |_, _| (p12, p21))
    }

    /// Every entry drawn i.i.d. uniform on [0, 1): the rows `[1 - p12, p12]`
    /// and `[p21, 1 - p21]` are then random stochastic matrices.
    pub fn random(max_degree: usize, lambda: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        Self::from_fn(max_degree, lambda, |_, _| (rng.random(), rng.random()))
    }

    /// Contact-driven infection: `p21(l, a) = 1 - (1 - beta)^a`, constant recovery.
    pub fn contact(max_degree: usize, beta: f64, recovery: f64, lambda: f64) -> Result<Self> {
        Self::from_fn(max_degree, lambda, |_, a| {
            (recovery, 1.0 - (1.0 - beta).powi(a as i32))
        })
    }

    /// Copy with `p21(l, 0) = 0` for all `l`, so the all-susceptible state is absorbing.
    pub fn without_spontaneous_infection(mut self) -> Self {
        for row in &mut self.p21 {
            row[0] = 0.0;
        }
        self
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let k = Self {
            lambda,
            ..self.clone()
        };
        k.validate()?;
        Ok(k)
    }

    /// Same tables and `lambda` without the `lambda * entry <= 1` check.
    /// Threshold searches scan `lambda` beyond the per-step probability regime.
    pub fn with_lambda_unchecked(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(param("lambda", "must be finite and nonnegative"));
        }
        for (l, (r12, r21)) in self.p12.iter().zip(&self.p21).enumerate() {
            for (a, (&x, &y)) in r12.iter().zip(r21).enumerate() {
                for v in [x, y] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(param("kernel", format!("entry ({l},{a}) = {v} outside [0,1]")));
                    }
                    if self.lambda * v > 1.0 + 1e-12 {
                        return Err(param(
                            "lambda",
                            format!("lambda * P({l},{a}) = {} exceeds 1", self.lambda * v),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn max_degree(&self) -> usize {
        self.p12.len() - 1
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p12(&self, l: usize, a: usize) -> f64 {
        self.p12[l][a]
    }

    pub fn p21(&self, l: usize, a: usize) -> f64 {
        self.p21[l][a]
    }

    pub fn p12_row(&self, l: usize) -> &[f64] {
        &self.p12[l]
    }

    pub fn p21_row(&self, l: usize) -> &[f64] {
        &self.p21[l]
    }

    /// Restriction to degrees `0..=max_degree`.
    pub fn truncated(&self, max_degree: usize) -> Result<Self> {
        if max_degree > self.max_degree() {
            return Err(param("max_degree", "cannot extend a kernel by truncation"));
        }
        Self::new(
            self.p12[..=max_degree].to_vec(),
            self.p21[..=max_degree].to_vec(),
            self.lambda,
        )
    }

    /// CSV with header `l,a,p12,p21`; `lambda` travels separately.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("l,a,p12,p21\n");
        for l in 0..=self.max_degree() {
            for a in 0..=l {
                let _ = writeln!(s, "{l},{a},{},{}", self.p12[l][a], self.p21[l][a]);
            }
        }
        s
    }

    /// Parses `l,a,p12,p21` rows. Missing cells default to 0.
    pub fn from_csv(text: &str, lambda: f64) -> Result<Self> {
        let mut cells = Vec::new();
        let mut max_l = 0usize;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with('l')) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: "expected `l,a,p12,p21`".into(),
                });
            }
            let perr = |e: String| Error::Parse {
                line: idx + 1,
                reason: e,
            };
            let l: usize = fields[0].parse().map_err(|e| perr(format!("l: {e}")))?;
            let a: usize = fields[1].parse().map_err(|e| perr(format!("a: {e}")))?;
            let x: f64 = fields[2].parse().map_err(|e| perr(format!("p12: {e}")))?;
            let y: f64 = fields[3].parse().map_err(|e| perr(format!("p21: {e}")))?;
            if a > l {
                return Err(perr(format!("a = {a} exceeds l = {l}")));
            }
            max_l = max_l.max(l);
            cells.push((l, a, x, y));
        }
        if cells.is_empty() {
            return Err(Error::Parse {
                line: 1,
                reason: "kernel file has no rows".into(),
            });
        }
        let mut p12: Vec<Vec<f64>> = (0..=max_l).map(|l| vec![0.0; l + 1]).collect();
        let mut p21 = p12.clone();
        for (l, a, x, y) in cells {
            p12[l][a] = x;
            p21[l][a] = y;
        }
        Self::new(p12, p21, lambda)
    }
}

/// Per-node infection indicator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfectionState {
    infected: Vec<bool>,
}

impl InfectionState {
    pub fn new(infected: Vec<bool>) -> Self {
        Self { infected }
    }

    pub fn all_susceptible(n: usize) -> Self {
        Self::new(vec![false; n])
    }

    pub fn all_infected(n: usize) -> Self {
        Self::new(vec![true; n])
    }

    /// Independent draws: a degree-`l` node is infected with probability `x[l - 1]`.
    pub fn random_by_degree(g: &Graph, x: &[f64], rng: &mut impl Rng) -> Self {
        let infected = (0..g.node_count())
            .map(|v| {
                let d = g.degree(v);
                d > 0 && d <= x.len() && rng.random::<f64>() < x[d - 1]
            })
            .collect();
        Self::new(infected)
    }

    pub fn len(&self) -> usize {
        self.infected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infected.is_empty()
    }

    pub fn is_infected(&self, node: usize) -> bool {
        self.infected[node]
    }

    pub fn set(&mut self, node: usize, infected: bool) {
        self.infected[node] = infected;
    }

    pub fn infected_count(&self) -> usize {
        self.infected.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.infected
    }
}

/// How nodes are updated within one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScheme {
    /// Every node flips independently from the time-`n` snapshot.
    #[default]
    Synchronous,
    /// One uniformly chosen non-isolated node is updated per step, so each
    /// step moves `x(l)` by at most `1/M(l)`.
    RandomNode,
}

/// Number of infected neighbours of `node`.
pub fn infected_neighbors(g: &Graph, state: &InfectionState, node: usize) -> usize {
    g.neighbors(node)
        .iter()
        .filter(|&&u| state.infected[u])
        .count()
}

fn flip_probability(kernel: &TransitionKernel, infected: bool, l: usize, a: usize) -> f64 {
    let p = if infected {
        kernel.p12[l][a]
    } else {
        kernel.p21[l][a]
    };
    kernel.lambda * p
}

fn check_degrees(g: &Graph, kernel: &TransitionKernel) -> Result<()> {
    if let Some(node) = (0..g.node_count()).find(|&v| g.degree(v) > kernel.max_degree()) {
        return Err(Error::DegreeOutOfRange {
            node,
            degree: g.degree(node),
            max: kernel.max_degree(),
        });
    }
    Ok(())
}

fn check_state(g: &Graph, state: &InfectionState) -> Result<()> {
    if state.len() != g.node_count() {
        return Err(Error::Dimension {
            context: "infection state",
            expected: g.node_count(),
            actual: state.len(),
        });
    }
    Ok(())
}

/// One synchronous SIS step. Isolated nodes keep their state.
pub fn step_agents(
    g: &Graph,
    kernel: &TransitionKernel,
    state: &InfectionState,
    rng: &mut impl Rng,
) -> Result<InfectionState> {
    check_state(g, state)?;
    check_degrees(g, kernel)?;
    Ok(step_unchecked(g, kernel, state, rng))
}

fn step_unchecked(
    g: &Graph,
    kernel: &TransitionKernel,
    state: &InfectionState,
    rng: &mut impl Rng,
) -> InfectionState {
    let next = (0..g.node_count())
        .map(|v| {
            let l = g.degree(v);
            let cur = state.infected[v];
            if l == 0 {
                return cur;
            }
            let a = infected_neighbors(g, state, v);
            let p = flip_probability(kernel, cur, l, a);
            // Always consume one uniform so the stream is aligned across states.
            let u: f64 = rng.random();
            if u < p {
                !cur
            } else {
                cur
            }
        })
        .collect();
    InfectionState::new(next)
}

/// Infected fraction per degree class, `x[l - 1]` for `l = 1..=max_degree(g)`.
/// Empty classes report 0.
pub fn infected_fraction_by_degree(g: &Graph, state: &InfectionState) -> Vec<f64> {
    infected_fraction_up_to(g, state, g.max_degree())
}

/// As [`infected_fraction_by_degree`] with an explicit vector length.
pub fn infected_fraction_up_to(g: &Graph, state: &InfectionState, max_degree: usize) -> Vec<f64> {
    let mut infected = vec![0usize; max_degree];
    let mut total = vec![0usize; max_degree];
    for v in 0..g.node_count() {
        let d = g.degree(v);
        if d == 0 || d > max_degree {
            continue;
        }
        total[d - 1] += 1;
        if state.infected[v] {
            infected[d - 1] += 1;
        }
    }
    infected
        .iter()
        .zip(&total)
        .map(|(&i, &t)| if t == 0 { 0.0 } else { i as f64 / t as f64 })
        .collect()
}

/// `alpha = sum_l l rho(l) x(l) / sum_l l rho(l)`.
pub fn infected_link_probability(x: &[f64], rho: &DegreeDistribution) -> Result<f64> {
    if x.len() != rho.max_degree() {
        return Err(Error::Dimension {
            context: "infected link probability",
            expected: rho.max_degree(),
            actual: x.len(),
        });
    }
    let den = rho.mean_degree();
    if den <= 0.0 {
        return Err(param("rho", "mean degree is zero"));
    }
    let num: f64 = x
        .iter()
        .zip(rho.probs())
        .enumerate()
        .map(|(i, (xi, p))| (i + 1) as f64 * p * xi)
        .sum();
    Ok(num / den)
}

/// Simulated trajectory: `states[t]` is the per-degree infected fraction at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Long-format CSV `t,degree,<value_column>`.
    pub fn to_csv(&self, value_column: &str) -> String {
        let mut s = format!("t,degree,{value_column}\n");
        for (t, x) in self.states.iter().enumerate() {
            for (i, v) in x.iter().enumerate() {
                let _ = writeln!(s, "{t},{},{v}", i + 1);
            }
        }
        s
    }
}

/// Synchronous SIS run; the trajectory has `horizon + 1` entries.
pub fn simulate_sis(
    g: &Graph,
    kernel: &TransitionKernel,
    initial: &InfectionState,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate_sis_with(g, kernel, initial, horizon, UpdateScheme::Synchronous, seed)
        .map(|(traj, _)| traj)
}

/// SIS run under `scheme`; also returns the final node states.
pub fn simulate_sis_with(
    g: &Graph,
    kernel: &TransitionKernel,
    initial: &InfectionState,
    horizon: usize,
    scheme: UpdateScheme,
    seed: u64,
) -> Result<(Trajectory, InfectionState)> {
    if horizon == 0 {
        return Err(param("horizon", "must be at least 1"));
    }
    check_state(g, initial)?;
    check_degrees(g, kernel)?;
    let mut rng = rng_from_seed(seed);
    let l_max = g.max_degree();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut state = initial.clone();
    states.push(infected_fraction_up_to(g, &state, l_max));
    match scheme {
        UpdateScheme::Synchronous => {
            for _ in 0..horizon {
                state = step_unchecked(g, kernel, &state, &mut rng);
                states.push(infected_fraction_up_to(g, &state, l_max));
            }
        }
        UpdateScheme::RandomNode => {
            random_node_run(g, kernel, &mut state, horizon, &mut rng, &mut states);
        }
    }
    Ok((Trajectory { states }, state))
}

fn random_node_run(
    g: &Graph,
    kernel: &TransitionKernel,
    state: &mut InfectionState,
    horizon: usize,
    rng: &mut SimRng,
    out: &mut Vec<Vec<f64>>,
) {
    let l_max = g.max_degree();
    let active: Vec<usize> = (0..g.node_count()).filter(|&v| g.degree(v) > 0).collect();
    let mut class_size = vec![0usize; l_max];
    for &v in &active {
        class_size[g.degree(v) - 1] += 1;
    }
    let mut x = out.last().cloned().unwrap_or_else(|| vec![0.0; l_max]);
    for _ in 0..horizon {
        if active.is_empty() {
            out.push(x.clone());
            continue;
        }
        let v = active[rng.random_range(0..active.len())];
        let l = g.degree(v);
        let cur = state.infected[v];
        let a = infected_neighbors(g, state, v);
        if rng.random::<f64>() < flip_probability(kernel, cur, l, a) {
            state.infected[v] = !cur;
            let delta = 1.0 / class_size[l - 1] as f64;
            x[l - 1] += if cur { -delta } else { delta };
        }
        out.push(x.clone());
    }
    // Recompute exactly to shed accumulated rounding.
    if let Some(last) = out.last_mut() {
        *last = infected_fraction_up_to(g, state, l_max);
    }
}
