use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde_json::json;

use epitrack_core::analytics::{
    deviation_table_csv, fit_power_law_auto, fit_power_law_discrete, fit_power_law_truncated,
};
use epitrack_core::empirics::{
    build_mention_graph, empirical_transition_rates, extract_infection_series, ingest_file,
};
use epitrack_core::evolution::{evolve_distribution, threshold_rows_to_csv, threshold_sweep};
use epitrack_core::experiments::{
    default_attachment, pcrlb_comparison, run_pipeline, synthetic_event_log, tracking_experiment,
    two_timescale_preset, ObservationModel, PcrlbComparisonConfig, PipelineConfig,
    SyntheticLogConfig, TrackingConfig, TrackingOutcome,
};
use epitrack_core::filter::two_timescale_track;
use epitrack_core::graph::{
    degree_distribution, generate_erdos_renyi, generate_erdos_renyi_capped,
    generate_preferential_attachment, generate_scale_free,
};
use epitrack_core::meanfield::{asymptotic_state, build_dynamics, build_dynamics_lenient, simulate_mean_field};
use epitrack_core::pcrlb::pcrlb_csv;
use epitrack_core::sampling::proportional_budget;
use epitrack_core::sis::simulate_sis_with;
use epitrack_core::{rng_from_seed, Graph, InfectionState, LambdaScope, MultiGraph};

use crate::config::*;

/// A named output file, written only after the whole command succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn text(name: &str, body: String) -> Self {
        Artifact {
            name: name.to_string(),
            bytes: body.into_bytes(),
        }
    }

    fn json(name: &str, value: &serde_json::Value) -> Self {
        let mut body = serde_json::to_string_pretty(value).expect("json value");
        body.push('\n');
        Artifact::text(name, body)
    }
}

#[derive(Debug)]
pub enum CommandError {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Config(e)
    }
}

impl From<anyhow::Error> for CommandError {
    fn from(e: anyhow::Error) -> Self {
        CommandError::Runtime(e)
    }
}

impl From<epitrack_core::Error> for CommandError {
    fn from(e: epitrack_core::Error) -> Self {
        CommandError::Runtime(e.into())
    }
}

pub type CmdResult = std::result::Result<Option<Vec<Artifact>>, CommandError>;

pub struct Context {
    pub base: PathBuf,
    pub seed: Option<u64>,
    pub dry_run: bool,
}

impl Context {
    fn seed(&self) -> Checked<u64> {
        self.seed
            .ok_or_else(|| ConfigError::new("seed", "this command is stochastic: pass --seed or set `seed`"))
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Checked<&'a T> {
    s.as_ref()
        .ok_or_else(|| ConfigError::new(name, format!("missing [{name}] table")))
}

fn build_graph(spec: &GraphSpec, seed: u64) -> anyhow::Result<Graph> {
    Ok(match spec {
        GraphSpec::ErdosRenyi {
            nodes,
            mean,
            max_degree: None,
        } => generate_erdos_renyi(*nodes, *mean, seed)?,
        GraphSpec::ErdosRenyi {
            nodes,
            mean,
            max_degree: Some(cap),
        } => generate_erdos_renyi_capped(*nodes, *mean, *cap, seed)?,
        GraphSpec::ScaleFree {
            nodes,
            gamma,
            max_degree,
        } => generate_scale_free(*nodes, *gamma, *max_degree, seed)?,
        GraphSpec::PreferentialAttachment { p, steps } => {
            let g0 = MultiGraph::new(2, vec![(0, 1)])?;
            generate_preferential_attachment(*p, &g0, *steps, seed)?.to_simple()
        }
        GraphSpec::EdgeList { path } => {
            let f = std::fs::File::open(path).with_context(|| path.display().to_string())?;
            Graph::read_edge_list(BufReader::new(f))?
        }
    })
}

pub fn generate(cfg: &ConfigFile, ctx: &Context) -> CmdResult {
    let sec = section(&cfg.generate, "generate")?;
    let spec = sec.graph.check("generate.graph", &ctx.base)?;
    let seed = if spec.uses_seed() { ctx.seed()? } else { 0 };
    if ctx.dry_run {
        return Ok(None);
    }
    let g = build_graph(&spec, seed)?;
    let mut out = vec![Artifact::text("graph.edges", g.to_edge_list_string())];
    if let Ok(profile) = degree_distribution(&g) {
        out.push(Artifact::text("degrees.csv", profile.distribution.to_csv()));
    }
    Ok(Some(out))
}

pub fn simulate(cfg: &ConfigFile, ctx: &Context) -> CmdResult {
    let sec = section(&cfg.simulate, "simulate")?;
    let (spec, kernel) = sec.check(&ctx.base)?;
    let seed = ctx.seed()?;
    if ctx.dry_run {
        return Ok(None);
    }
    let g = build_graph(&spec, seed)?;
    let l = g.max_degree();
    if l == 0 {
        return Err(anyhow::anyhow!("graph has no edges").into());
    }
    if kernel.max_degree() < l {
        return Err(anyhow::anyhow!("kernel covers degrees up to {}, the graph has degree {l}", kernel.max_degree()).into());
    }
    let kernel = kernel.truncated(l)?;
    let mut rng = rng_from_seed(seed);
    let init = InfectionState::random_by_degree(&g, &vec![sec.x0; l], &mut rng);
    let (traj, _) = simulate_sis_with(&g, &kernel, &init, sec.horizon, sec.scheme, seed.wrapping_add(1))?;
    let mut out = vec![Artifact::text("trajectory.csv", traj.to_csv("x"))];
    if sec.mean_field {
        let profile = degree_distribution(&g)?;
        let d = build_dynamics_lenient(&kernel, &profile.distribution, profile.active_nodes(), LambdaScope::Both)?;
        let run = simulate_mean_field(&d, &traj.states[0], sec.horizon)?;
        out.push(Artifact::text("meanfield.csv", run.to_trajectory().to_csv("x")));
    }
    Ok(Some(out))
}

pub fn meanfield(cfg: &ConfigFile, ctx: &Context) -> CmdResult {
    let sec = section(&cfg.meanfield, "meanfield")?;
    let (rho, kernel) = sec.check(&ctx.base)?;
    if ctx.dry_run {
        return Ok(None);
    }
    let d = build_dynamics(&kernel, &rho, sec.m)?;
    let x0 = vec![sec.x0; rho.max_degree()];
    let run = simulate_mean_field(&d, &x0, sec.horizon)?;
    let mut out = vec![
        Artifact::text("meanfield.csv", run.to_trajectory().to_csv("x")),
        Artifact::text("dynamics.json", d.to_json() + "\n"),
    ];
    if sec.fixed_point {
        let fp = asymptotic_state(&d, &x0, sec.tol, sec.max_iter)?;
        out.push(Artifact::json(
            "fixed_point.json",
            &json!({"state": fp.state, "iterations": fp.iterations, "converged": fp.converged}),
        ));
    }
    Ok(Some(out))
}

fn tracking_config(sec: &TrackSection, base: &Path) -> Checked<TrackingConfig> {
    at_least("track.m", sec.m, 1)?;
    unit("track.x0", sec.x0)?;
    at_least("track.horizon", sec.horizon, 1)?;
    positive("track.prior_var", sec.prior_var)?;
    non_negative("track.process_noise", sec.process_noise)?;
    at_least("track.ma_window", sec.ma_window, 1)?;
    let rho = sec.degrees.build("track.degrees", base)?;
    let kernel = covering_kernel("track.kernel", sec.kernel.build("track.kernel", base)?, &rho)?;
    let observation = match &sec.observation {
        ObservationSpec::Gaussian { r } => {
            positive("track.observation.r", *r)?;
            ObservationModel::Gaussian { r: *r }
        }
        ObservationSpec::Binomial { gamma } => {
            if gamma.len() != rho.max_degree() {
                return Err(ConfigError::new(
                    "track.observation.gamma",
                    format!("needs {} entries, got {}", rho.max_degree(), gamma.len()),
                ));
            }
            ObservationModel::Binomial { gamma: gamma.clone() }
        }
        ObservationSpec::Uniform { budget } => {
            at_least("track.observation.budget", *budget, 1)?;
            ObservationModel::Binomial {
                gamma: proportional_budget(rho.probs(), *budget),
            }
        }
    };
    Ok(TrackingConfig {
        kernel,
        rho,
        m: sec.m,
        x0: sec.x0,
        horizon: sec.horizon,
        observation,
        prior_var: sec.prior_var,
        process_noise: sec.process_noise,
        ma_window: sec.ma_window,
        var_order: sec.var_order,
        misspecified: sec.misspecified,
    })
}

fn filter_log(o: &TrackingOutcome) -> String {
    let mut s = String::from("t,degree,truth,observation,estimate\n");
    for t in 0..o.truth.len() {
        for l in 0..o.truth[t].len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                t + 1,
                l + 1,
                o.truth[t][l],
                o.observations[t][l],
                o.estimates[t][l]
            );
        }
    }
    s
}

pub fn track(cfg: &ConfigFile, ctx: &Context) -> CmdResult {
    let sec = section(&cfg.track, "track")?;
    let tc = tracking_config(sec, &ctx.base)?;
    if sec.var_order > 0 && sec.horizon < 2 + 2 * sec.var_order * tc.rho.max_degree() {
        return Err(ConfigError::new("track.var_order", "horizon too short to fit the VAR baseline").into());
    }
    let seed = ctx.seed()?;
    if ctx.dry_run {
        return Ok(None);
    }
    let o = tracking_experiment(&tc, seed)?;
    let steady = |v: &Option<Vec<f64>>| v.as_ref().map(|v| TrackingOutcome::steady_state(v));
    let summary = json!({
        "steady_state_mse": {
            "bayes": TrackingOutcome::steady_state(&o.bayes_mse),
            "misspecified": steady(&o.misspecified_mse),
            "moving_average": TrackingOutcome::steady_state(&o.ma_mse),
            "var": steady(&o.var_mse),
        },
        "horizon": sec.horizon,
        "seed": seed,
    });
    Ok(Some(vec![
        Artifact::text("filter_log.csv", filter_log(&o)),
        Artifact::text("mse.csv", o.to_csv()),
        Artifact::json("summary.json", &summary),
    ]))
}

pub fn pcrlb(cfg: &ConfigFile, ctx: &Context) -> CmdResult {
    let sec = section(&cfg.pcrlb, "pcrlb")?;
    at_least("pcrlb.max_degree", sec.max_degree, 1)?;
    positive("pcrlb.scale_free_gamma", sec.scale_free_gamma)?;
    positive("pcrlb.er_mean", sec.er_mean)?;
    at_least("pcrlb.m", sec.m, 1)?;
    unit("pcrlb.x0", sec.x0)?;
    positive("pcrlb.prior_var", sec.prior_var)?;
    positive("pcrlb.r", sec.r)?;
    non_negative("pcrlb.epsilon", sec.epsilon)?;
    at_least("pcrlb.replications", sec.replications, 2)?;
    at_least("pcrlb.horizon", sec.horizon, 1)?;
    let kernel = sec.kernel.build("pcrlb.kernel", &ctx.base)?;
    if kernel.max_degree() < sec.max_degree {
        return Err(ConfigError::new("pcrlb.kernel.max_degree", "smaller than pcrlb.max_degree").into());
    }
    let seed = ctx.seed()?;
    if ctx.dry_run {
        return Ok(None);
    }
    let pc = PcrlbComparisonConfig {
        max_degree: sec.max_degree,
        scale_free_gamma: sec.scale_free_gamma,
        er_mean: sec.er_mean,
        kernel: kernel.truncated(sec.max_degree)?,
        m: sec.m,
        x0: sec.x0,
        prior_var: sec.prior_var,
        r: sec.r,
        epsilon: sec.epsilon,
        replications: sec.replications,
        horizon: sec.horizon,
    };
    let c = pcrlb_comparison(&pc, seed)?;
    let csv = pcrlb_csv(&[("scale_free", &c.scale_free), ("erdos_renyi", &c.erdos_renyi)]);
    let last = |r: &epitrack_core::pcrlb::PcrlbReport| r.mse.last().copied().zip(r.bound.last().copied());
    let summary = json!({
        "max_bound_gap": c.max_bound_gap(),
        "final": {
            "scale_free": last(&c.scale_free).map(|(m, b)| json!({"mse": m, "bound": b})),
            "erdos_renyi": last(&c.erdos_renyi).map(|(m, b)| json!({"mse": m, "bound": b})),
        },
        "violations_3se": {
            "scale_free": c.scale_free.violations(3.0),
            "erdos_renyi": c.erdos_renyi.violations(3.0),
        },
        "seed": seed,
    });
    Ok(Some(vec![
        Artifact::text("pcrlb.csv", csv),
        Artifact::json("pcrlb_summary.json", &summary),
    ]))
}

pub fn evolve(cfg: &ConfigFile, ctx: &Context) -> CmdResult {
    let sec = section(&cfg.evolve, "evolve")?;
    match sec {
        EvolveSection::Distribution { rho0, p, k_start, k_end } => {
            unit("evolve.p", *p)?;
            let rho0 = rho0.build("evolve.rho0", &ctx.base)?;
            if k_end < k_start {
                return Err(ConfigError::new("evolve.k_end", "must not be below k_start").into());
            }
            if ctx.dry_run {
                return Ok(None);
            }
            let seq = evolve_distribution(&rho0, *p, *k_start, *k_end)?;
            let mut csv = String::from("k,degree,prob\n");
            let mut means = Vec::with_capacity(seq.len());
            for (i, rho) in seq.iter().enumerate() {
                for (j, q) in rho.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{q}", k_start + i, j + 1);
                }
                means.push(rho.iter().enumerate().map(|(j, q)| (j + 1) as f64 * q).sum::<f64>());
            }
            Ok(Some(vec![
                Artifact::text("evolution.csv", csv),
                Artifact::json("summary.json", &json!({"p": p, "mean_degree": means})),
            ]))
        }
        EvolveSection::TwoTimescale {
            size,
            slow_steps,
            kernel_seed,
            sigma,
        } => {
            at_least("evolve.size", *size, 2)?;
            at_least("evolve.slow_steps", *slow_steps, 1)?;
            if let Some(s) = sigma {
                positive("evolve.sigma", *s)?;
            }
            let mut tc =
                two_timescale_preset(*size, *slow_steps, *kernel_seed).map_err(|e| ConfigError::new("evolve", e))?;
            if let Some(s) = sigma {
                tc.sigma = *s;
            }
            if ctx.dry_run {
                return Ok(None);
            }
            let report = two_timescale_track(&default_attachment, &tc)?;
            Ok(Some(vec![
                Artifact::text("two_timescale.csv", report.to_csv()),
                Artifact::json("summary.json", &json!({"mode_agreement": report.mode_agreement()})),
            ]))
        }
    }
}

pub fn threshold(cfg: &ConfigFile, ctx: &Context) -> CmdResult {
    let sec = section(&cfg.threshold, "threshold")?;
    if sec.p_grid.is_empty() {
        return Err(ConfigError::new("threshold.p_grid", "needs at least one value").into());
    }
    for (i, p) in sec.p_grid.iter().enumerate() {
        unit(&format!("threshold.p_grid[{i}]"), *p)?;
    }
    if sec.k_end < sec.k_start {
        return Err(ConfigError::new("threshold.k_end", "must not be below k_start").into());
    }
    let rho0 = sec.rho0.build("threshold.rho0", &ctx.base)?;
    let kernel = covering_kernel("threshold.kernel", sec.kernel.build("threshold.kernel", &ctx.base)?, &rho0)?;
    if ctx.dry_run {
        return Ok(None);
    }
    let search = sec.search();
    let rows = threshold_sweep(&rho0, &kernel, &sec.p_grid, sec.k_start, sec.k_end, search.as_ref())?;
    Ok(Some(vec![Artifact::text("thresholds.csv", threshold_rows_to_csv(&rows))]))
}

pub fn ingest(cfg: &ConfigFile, ctx: &Context) -> CmdResult {
    let sec = section(&cfg.ingest, "ingest")?;
    let log = existing_file("ingest.log", &ctx.base, &sec.log)?;
    unit("ingest.delta", sec.delta)?;
    if sec.bin_width_ms == 0 {
        return Err(ConfigError::new("ingest.bin_width_ms", "must be positive").into());
    }
    // Recovery draws only happen for delta strictly between 0 and 1.
    let seed = if sec.delta > 0.0 && sec.delta < 1.0 { ctx.seed()? } else { ctx.seed.unwrap_or(0) };
    if ctx.dry_run {
        return Ok(None);
    }
    let parsed = ingest_file(&log, &sec.hashtag)?;
    if parsed.empty_warning {
        return Err(anyhow::anyhow!("no event in {} contains {}", log.display(), sec.hashtag).into());
    }
    let mg = build_mention_graph(&parsed.events)?;
    let series = extract_infection_series(&parsed.events, &mg, sec.delta, sec.bin_width_ms, &mut rng_from_seed(seed))?;
    let mut users = String::from("node,user\n");
    for (i, u) in mg.users.iter().enumerate() {
        let _ = writeln!(users, "{i},{u}");
    }
    let mut out = vec![
        Artifact::text("mention_graph.edges", mg.graph.to_edge_list_string()),
        Artifact::text("users.csv", users),
        Artifact::text("series.csv", series.to_csv()),
    ];
    if series.bins() >= 2 {
        out.push(Artifact::text("rates.csv", empirical_transition_rates(&series, &mg.graph)?.to_csv()));
    }
    Ok(Some(out))
}

pub fn fit(cfg: &ConfigFile, ctx: &Context) -> CmdResult {
    let sec = section(&cfg.fit, "fit")?;
    let spec = sec.graph.check("fit.graph", &ctx.base)?;
    at_least("fit.l_min", sec.l_min, 1)?;
    if let Some(top) = sec.l_max {
        at_least("fit.l_max", top, sec.l_min)?;
    }
    if sec.l_max.is_some() && sec.auto_l_min.is_some() {
        return Err(ConfigError::new("fit.auto_l_min", "cannot be combined with l_max").into());
    }
    let seed = if spec.uses_seed() { ctx.seed()? } else { 0 };
    if ctx.dry_run {
        return Ok(None);
    }
    let g = build_graph(&spec, seed)?;
    let degrees: Vec<usize> = g.degrees().into_iter().filter(|&l| l > 0).collect();
    let report = match (sec.l_max, sec.auto_l_min) {
        (Some(top), _) => fit_power_law_truncated(&degrees, sec.l_min, top)?,
        (None, Some(max)) => fit_power_law_auto(&degrees, max)?,
        (None, None) => fit_power_law_discrete(&degrees, sec.l_min)?,
    };
    Ok(Some(vec![Artifact::text("fit.json", report.to_json() + "\n")]))
}

pub fn report(cfg: &ConfigFile, ctx: &Context) -> CmdResult {
    let sec = section(&cfg.report, "report")?;
    unit("report.delta", sec.delta)?;
    if sec.bin_width_ms == 0 {
        return Err(ConfigError::new("report.bin_width_ms", "must be positive").into());
    }
    let source = match &sec.source {
        LogSource::File { path } => LogSource::File {
            path: existing_file("report.source.path", &ctx.base, path)?,
        },
        s @ LogSource::Synthetic { nodes, bins, spontaneous, beta, .. } => {
            at_least("report.source.nodes", *nodes, 2)?;
            at_least("report.source.bins", *bins, 2)?;
            unit("report.source.spontaneous", *spontaneous)?;
            unit("report.source.beta", *beta)?;
            s.clone()
        }
    };
    let seed = ctx.seed()?;
    if ctx.dry_run {
        return Ok(None);
    }
    let pc = PipelineConfig {
        hashtag: sec.hashtag.clone(),
        delta: sec.delta,
        bin_width_ms: sec.bin_width_ms,
        add_one: sec.add_one,
        fit_max_degree: sec.fit_max_degree,
    };
    let mut out = Vec::new();
    let rep = match source {
        LogSource::File { path } => {
            let f = std::fs::File::open(&path).with_context(|| path.display().to_string())?;
            run_pipeline(BufReader::new(f), &pc, seed)?
        }
        LogSource::Synthetic {
            nodes,
            gamma,
            max_degree,
            spontaneous,
            beta,
            bins,
        } => {
            let log = synthetic_event_log(
                &SyntheticLogConfig {
                    nodes,
                    gamma,
                    max_degree,
                    spontaneous,
                    beta,
                    bins,
                    bin_width_ms: sec.bin_width_ms,
                    hashtag: sec.hashtag.clone(),
                },
                seed,
            )?;
            let text = log.text();
            let rep = run_pipeline(text.as_bytes(), &pc, seed)?;
            out.push(Artifact::text("events.jsonl", text));
            rep
        }
    };
    let mut model = String::from("bin,degree,model,data\n");
    for (b, (m, d)) in rep.model.iter().zip(&rep.series.x).enumerate() {
        for (i, (mv, dv)) in m.iter().zip(d).enumerate() {
            let _ = writeln!(model, "{b},{},{mv},{dv}", i + 1);
        }
    }
    let summary = json!({
        "nodes": rep.mention_graph.graph.node_count(),
        "edges": rep.mention_graph.graph.edge_count(),
        "bins": rep.series.bins(),
        "ks": rep.ks,
        "fit": rep.fit,
        "deviations": rep.deviations,
        "seed": seed,
    });
    out.push(Artifact::text("deviations.csv", deviation_table_csv(&rep.deviations)));
    out.push(Artifact::text("model.csv", model));
    out.push(Artifact::text("rates.csv", rep.rates.to_csv()));
    out.push(Artifact::json("report.json", &summary));
    Ok(Some(out))
}
