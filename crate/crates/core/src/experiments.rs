//! End-to-end experiment drivers shared by the command-line tool and the
//! acceptance suite.

use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::analytics::{
    deviation_table, fit_power_law_discrete, fit_power_law_truncated, ks_two_sample,
    moving_average_filter, var_ls_filter, DeviationRow, FitReport, KsResult,
};
use crate::empirics::{
    build_mention_graph, empirical_transition_rates, event_line, extract_infection_series,
    ingest_events, EmpiricalRates, InfectionTimeSeries, MentionGraph, DEFAULT_BIN_WIDTH_MS,
};
use crate::filter::{track, FilterState, TwoTimescaleConfig};
use crate::sampling::{binomial_observation, gaussian_observation, proportional_budget, Observation};
use crate::graph::{
    degree_distribution, generate_erdos_renyi_capped, generate_scale_free, DegreeDistribution, Graph,
};
use crate::pcrlb::{mse_vs_bound_report, PcrlbConfig, PcrlbReport};
use crate::meanfield::{build_dynamics, build_dynamics_lenient, simulate_mean_field, LambdaScope};
use crate::sis::{simulate_sis_with, step_agents, InfectionState, TransitionKernel, UpdateScheme};
use crate::rng_from_seed;

/// Agent-based versus mean-field comparison on an Erdős–Rényi graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityConfig {
    pub nodes: usize,
    pub er_mean: f64,
    pub max_degree: usize,
    pub kernel: TransitionKernel,
    pub x0: f64,
    /// Horizon in units of `M` single-node updates.
    pub sweeps: usize,
}

/// Largest sup-norm deviation between the agent-based per-degree infected
/// fractions and the mean-field map over the horizon. The agent process
/// updates one random node per step and the map uses step `1/M` with `M`
/// the number of non-isolated nodes.
pub fn fidelity_run(cfg: &FidelityConfig, seed: u64) -> Result<f64> {
    let g = generate_erdos_renyi_capped(cfg.nodes, cfg.er_mean, cfg.max_degree, seed)?;
    let profile = degree_distribution(&g)?;
    let m = profile.active_nodes();
    let mut rng = rng_from_seed(seed.wrapping_add(1));
    let l = g.max_degree();
    let init = InfectionState::random_by_degree(&g, &vec![cfg.x0; l], &mut rng);
    let horizon = cfg.sweeps * m;
    let (traj, _) = simulate_sis_with(
        &g,
        &cfg.kernel,
        &init,
        horizon,
        UpdateScheme::RandomNode,
        seed.wrapping_add(2),
    )?;
    let kernel = cfg.kernel.truncated(l)?;
    let d = build_dynamics_lenient(&kernel, &profile.distribution, m, LambdaScope::Both)?;
    let mf = simulate_mean_field(&d, &traj.states[0], horizon)?;
    let occupied: Vec<usize> = (0..l).filter(|&i| profile.counts[i] > 0).collect();
    let dev = traj
        .states
        .iter()
        .zip(&mf.states)
        .map(|(a, b)| occupied.iter().fold(0.0f64, |m, &i| m.max((a[i] - b[i]).abs())))
        .fold(0.0, f64::max);
    Ok(dev)
}

/// Mean of [`fidelity_run`] over `seeds`.
pub fn fidelity_mean(cfg: &FidelityConfig, seeds: &[u64]) -> Result<f64> {
    if seeds.is_empty() {
        return Err(param("seeds", "need at least one seed"));
    }
    let devs: Vec<f64> = seeds
        .par_iter()
        .map(|&s| fidelity_run(cfg, s))
        .collect::<Result<_>>()?;
    Ok(devs.iter().sum::<f64>() / devs.len() as f64)
}

/// Filter MSE against the PCRLB on two degree distributions sharing a kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcrlbComparisonConfig {
    pub max_degree: usize,
    pub scale_free_gamma: f64,
    pub er_mean: f64,
    pub kernel: TransitionKernel,
    pub m: usize,
    pub x0: f64,
    pub prior_var: f64,
    pub r: f64,
    pub epsilon: f64,
    pub replications: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcrlbComparison {
    pub scale_free: PcrlbReport,
    pub erdos_renyi: PcrlbReport,
}

impl PcrlbComparison {
    /// Largest relative gap `|a - b| / max(a, b)` between the two bound curves.
    pub fn max_bound_gap(&self) -> f64 {
        self.scale_free
            .bound
            .iter()
            .zip(&self.erdos_renyi.bound)
            .map(|(a, b)| (a - b).abs() / a.max(*b))
            .fold(0.0, f64::max)
    }
}

pub fn pcrlb_comparison(cfg: &PcrlbComparisonConfig, seed: u64) -> Result<PcrlbComparison> {
    let l = cfg.max_degree;
    let kernel = cfg.kernel.truncated(l)?;
    let mut pcfg = PcrlbConfig::identity_observations(l, cfg.r, cfg.replications, cfg.horizon);
    pcfg.epsilon = cfg.epsilon;
    let prior = FilterState::isotropic(l, cfg.x0, cfg.prior_var)?;
    let run = |rho: &DegreeDistribution| -> Result<PcrlbReport> {
        let d = build_dynamics(&kernel, rho, cfg.m)?;
        mse_vs_bound_report(&d, &pcfg, &prior, seed)
    };
    Ok(PcrlbComparison {
        scale_free: run(&DegreeDistribution::power_law(cfg.scale_free_gamma, l)?)?,
        erdos_renyi: run(&DegreeDistribution::poisson(cfg.er_mean, l)?)?,
    })
}

/// How the tracking experiment observes the mean-field truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationModel {
    /// `y = x + v`, `v ~ N(0, r I)`.
    Gaussian { r: f64 },
    /// Binomial counts of `gamma(l)` draws with plug-in variance.
    Binomial { gamma: Vec<usize> },
}

/// Bayesian filter against the moving-average and VAR baselines on a
/// mean-field truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub kernel: TransitionKernel,
    pub rho: DegreeDistribution,
    pub m: usize,
    pub x0: f64,
    pub horizon: usize,
    pub observation: ObservationModel,
    pub prior_var: f64,
    pub process_noise: f64,
    pub ma_window: usize,
    pub var_order: usize,
    /// Also run the filter built on the uniform degree distribution.
    pub misspecified: bool,
}

/// Per-step MSE (mean over degrees) of each estimator against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingOutcome {
    pub truth: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
    pub estimates: Vec<Vec<f64>>,
    pub bayes_mse: Vec<f64>,
    pub misspecified_mse: Option<Vec<f64>>,
    pub ma_mse: Vec<f64>,
    pub var_mse: Option<Vec<f64>>,
}

/// Mean of `series[from..]`.
pub fn tail_mean(series: &[f64], from: usize) -> f64 {
    let tail = &series[from.min(series.len())..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

impl TrackingOutcome {
    /// MSE averaged over the second half of the horizon.
    pub fn steady_state(series: &[f64]) -> f64 {
        tail_mean(series, series.len() / 2)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,bayes_mse,misspecified_mse,ma_mse,var_mse\n");
        for t in 0..self.bayes_mse.len() {
            let opt = |v: &Option<Vec<f64>>| v.as_ref().map_or(String::new(), |v| v[t].to_string());
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                t + 1,
                self.bayes_mse[t],
                opt(&self.misspecified_mse),
                self.ma_mse[t],
                opt(&self.var_mse)
            ));
        }
        s
    }
}

fn mse_rows(est: &[Vec<f64>], truth: &[Vec<f64>]) -> Vec<f64> {
    est.iter()
        .zip(truth)
        .map(|(e, x)| e.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
        .collect()
}

pub fn tracking_experiment(cfg: &TrackingConfig, seed: u64) -> Result<TrackingOutcome> {
    let l = cfg.rho.max_degree();
    let kernel = cfg.kernel.truncated(l)?;
    let d = build_dynamics(&kernel, &cfg.rho, cfg.m)?;
    let run = simulate_mean_field(&d, &vec![cfg.x0; l], cfg.horizon)?;
    let truth: Vec<Vec<f64>> = run.states[1..].to_vec();
    let mut rng = rng_from_seed(seed);
    let observations: Vec<Observation> = truth
        .iter()
        .map(|x| match &cfg.observation {
            ObservationModel::Gaussian { r } => gaussian_observation(x, *r, &mut rng),
            ObservationModel::Binomial { gamma } => binomial_observation(x, gamma, &mut rng),
        })
        .collect::<Result<_>>()?;
    let ys: Vec<Vec<f64>> = observations
        .iter()
        .map(|o| (1..=l).map(|d| o.value_for(d).unwrap_or(f64::NAN)).collect())
        .collect();
    let prior = FilterState::isotropic(l, cfg.x0, cfg.prior_var)?;
    let steps = track(&d, &observations, &prior, Some(&truth), cfg.process_noise)?;
    let estimates: Vec<Vec<f64>> = steps.iter().map(|s| s.posterior.mean.iter().cloned().collect()).collect();
    let bayes_mse = mse_rows(&estimates, &truth);
    let misspecified_mse = if cfg.misspecified {
        let wrong = build_dynamics(&kernel, &DegreeDistribution::uniform(l)?, cfg.m)?;
        let s = track(&wrong, &observations, &prior, None, cfg.process_noise)?;
        let est: Vec<Vec<f64>> = s.iter().map(|s| s.posterior.mean.iter().cloned().collect()).collect();
        Some(mse_rows(&est, &truth))
    } else {
        None
    };
    let ma_mse = mse_rows(&moving_average_filter(&ys, cfg.ma_window)?, &truth);
    let var_mse = if cfg.var_order > 0 {
        Some(mse_rows(&var_ls_filter(&ys, cfg.var_order)?, &truth))
    } else {
        None
    };
    Ok(TrackingOutcome {
        truth,
        observations: ys,
        estimates,
        bayes_mse,
        misspecified_mse,
        ma_mse,
        var_mse,
    })
}

/// Degree-distribution family for the sampling-noise sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "parameter", rename_all = "snake_case")]
pub enum NetworkFamily {
    ErdosRenyi(f64),
    ScaleFree(f64),
}

impl NetworkFamily {
    pub fn distribution(&self, max_degree: usize) -> Result<DegreeDistribution> {
        match *self {
            NetworkFamily::ErdosRenyi(mean) => DegreeDistribution::poisson(mean, max_degree),
            NetworkFamily::ScaleFree(gamma) => DegreeDistribution::power_law(gamma, max_degree),
        }
    }
}

/// Filter MSE under uniform sampling: degree `l` receives a binomial sample
/// of size `round(rho(l) * budget)` (at least one) and the filter uses the
/// plug-in variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingNoiseConfig {
    pub max_degree: usize,
    pub kernel: TransitionKernel,
    pub m: usize,
    pub x0: f64,
    pub horizon: usize,
    pub budget: usize,
    pub prior_var: f64,
    pub process_noise: f64,
}

/// Mean over seeds of the horizon-averaged filter MSE for `family`.
pub fn sampling_noise_mse(cfg: &SamplingNoiseConfig, family: NetworkFamily, seeds: &[u64]) -> Result<f64> {
    if seeds.is_empty() {
        return Err(param("seeds", "need at least one seed"));
    }
    let rho = family.distribution(cfg.max_degree)?;
    let tc = TrackingConfig {
        kernel: cfg.kernel.clone(),
        observation: ObservationModel::Binomial {
            gamma: proportional_budget(rho.probs(), cfg.budget),
        },
        rho,
        m: cfg.m,
        x0: cfg.x0,
        horizon: cfg.horizon,
        prior_var: cfg.prior_var,
        process_noise: cfg.process_noise,
        ma_window: 1,
        var_order: 0,
        misspecified: false,
    };
    let per_seed: Vec<f64> = seeds
        .par_iter()
        .map(|&s| tracking_experiment(&tc, s).map(|o| tail_mean(&o.bayes_mse, 0)))
        .collect::<Result<_>>()?;
    Ok(per_seed.iter().sum::<f64>() / per_seed.len() as f64)
}

/// Slow-scale run started from a graph of degree-one nodes, with the
/// attachment probability rising with the endemic infection level.
pub fn two_timescale_preset(size: usize, slow_steps: usize, kernel_seed: u64) -> Result<TwoTimescaleConfig> {
    let mut rho0 = vec![0.0; size];
    rho0[0] = 1.0;
    Ok(TwoTimescaleConfig {
        kernel: TransitionKernel::random(size, 1.0, kernel_seed)?,
        rho0,
        k0: size,
        slow_steps,
        m: 100,
        x0: 0.5,
        fast_tol: 1e-10,
        fast_max_iter: 100_000,
        sigma: 0.5,
        fast_filter: None,
    })
}

/// `p(alpha) = 0.2 + 0.6 alpha`.
pub fn default_attachment(alpha: f64) -> f64 {
    0.2 + 0.6 * alpha
}

/// Event log produced by a known SIS process on a scale-free graph.
///
/// Infected nodes recover after one bin (`P12 = 1`) and a susceptible node
/// with `a` infected neighbours is infected with probability
/// `1 - (1 - spontaneous)(1 - beta)^a`. Every node is infected in the first
/// bin and its post mentions all neighbours, so the mention graph recovers
/// the generating graph; later posts carry no mentions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLogConfig {
    pub nodes: usize,
    pub gamma: f64,
    pub max_degree: usize,
    pub spontaneous: f64,
    pub beta: f64,
    pub bins: usize,
    pub bin_width_ms: u64,
    pub hashtag: String,
}

impl Default for SyntheticLogConfig {
    fn default() -> Self {
        SyntheticLogConfig {
            nodes: 5000,
            gamma: 2.5,
            max_degree: 20,
            spontaneous: 0.05,
            beta: 0.3,
            bins: 20,
            bin_width_ms: DEFAULT_BIN_WIDTH_MS,
            hashtag: "#sis".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticLog {
    pub lines: Vec<String>,
    pub graph: Graph,
    pub kernel: TransitionKernel,
}

impl SyntheticLog {
    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

fn user_name(v: usize) -> String {
    format!("u{v:07}")
}

pub fn synthetic_event_log(cfg: &SyntheticLogConfig, seed: u64) -> Result<SyntheticLog> {
    if cfg.bins < 2 {
        return Err(param("bins", "need at least two bins"));
    }
    if cfg.nodes > 10_000_000 {
        return Err(param("nodes", "user names hold at most seven digits"));
    }
    let g = generate_scale_free(cfg.nodes, cfg.gamma, cfg.max_degree, seed)?;
    let (nu, beta) = (cfg.spontaneous, cfg.beta);
    let kernel = TransitionKernel::from_fn(g.max_degree().max(1), 1.0, |_, a| {
        (1.0, 1.0 - (1.0 - nu) * (1.0 - beta).powi(a as i32))
    })?;
    let mut rng = rng_from_seed(seed.wrapping_add(1));
    let mut state = InfectionState::all_infected(g.node_count());
    let mut lines = Vec::new();
    for bin in 0..cfg.bins {
        if bin > 0 {
            state = step_agents(&g, &kernel, &state, &mut rng)?;
        }
        let ts = bin as u64 * cfg.bin_width_ms;
        for v in (0..g.node_count()).filter(|&v| state.is_infected(v)) {
            let mentions: Vec<String> = if bin == 0 {
                g.neighbors(v).iter().map(|&u| user_name(u)).collect()
            } else {
                Vec::new()
            };
            lines.push(event_line(ts, &user_name(v), &mentions, &format!("post {}", cfg.hashtag)));
        }
    }
    Ok(SyntheticLog {
        lines,
        graph: g,
        kernel,
    })
}

/// Settings for ingesting a log and comparing it with the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub hashtag: String,
    pub delta: f64,
    pub bin_width_ms: u64,
    pub add_one: bool,
    /// Upper degree cap for the power-law fit; `None` fits an untruncated law.
    pub fit_max_degree: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub mention_graph: MentionGraph,
    pub series: InfectionTimeSeries,
    pub rates: EmpiricalRates,
    /// Mean-field trajectory started from the first bin.
    pub model: Vec<Vec<f64>>,
    pub ks: KsResult,
    pub fit: FitReport,
    pub deviations: Vec<DeviationRow>,
}

/// Ingest, mention graph, infection series, empirical kernel, mean-field
/// run and final-time two-sample KS on the degrees of infected nodes.
/// The model sample holds `round(M(l) xbar_T(l))` nodes of degree `l`.
pub fn run_pipeline<R: BufRead>(input: R, cfg: &PipelineConfig, seed: u64) -> Result<PipelineReport> {
    let log = ingest_events(input, &cfg.hashtag)?;
    if log.events.is_empty() {
        return Err(param("log", format!("no event contains {}", cfg.hashtag)));
    }
    let mg = build_mention_graph(&log.events)?;
    let mut rng = rng_from_seed(seed);
    let series = extract_infection_series(&log.events, &mg, cfg.delta, cfg.bin_width_ms, &mut rng)?;
    let rates = empirical_transition_rates(&series, &mg.graph)?;
    let kernel = rates.to_kernel(cfg.delta, cfg.add_one)?;
    let profile = degree_distribution(&mg.graph)?;
    let d = build_dynamics_lenient(&kernel, &profile.distribution, 1, LambdaScope::Both)?;
    let run = simulate_mean_field(&d, &series.x[0], series.bins() - 1)?;
    let model = run.states;

    let last = series.states.last().expect("at least two bins");
    let data_sample: Vec<f64> = (0..mg.graph.node_count())
        .filter(|&v| last.is_infected(v) && mg.graph.degree(v) > 0)
        .map(|v| mg.graph.degree(v) as f64)
        .collect();
    let x_t = model.last().expect("non-empty run");
    let mut model_sample = Vec::new();
    for (i, &c) in profile.counts.iter().enumerate() {
        let k = (c as f64 * x_t[i].clamp(0.0, 1.0)).round() as usize;
        model_sample.extend(std::iter::repeat_n((i + 1) as f64, k));
    }
    let ks = ks_two_sample(&data_sample, &model_sample)?;

    let degrees: Vec<usize> = mg.graph.degrees().into_iter().filter(|&l| l > 0).collect();
    let fit = match cfg.fit_max_degree {
        Some(top) => fit_power_law_truncated(&degrees, 1, top)?,
        None => fit_power_law_discrete(&degrees, 1)?,
    };
    let deviations = deviation_table(&model, &series.x, &profile.counts)?;
    Ok(PipelineReport {
        mention_graph: mg,
        series,
        rates,
        model,
        ks,
        fit,
        deviations,
    })
}
