use std::io::{BufReader, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal, Zipf};

use epitrack_core::analytics::{fit_power_law_discrete, fit_var, ks_two_sample};
use epitrack_core::empirics::{empirical_transition_rates, InfectionTimeSeries};
use epitrack_core::experiments::{run_pipeline, synthetic_event_log, PipelineConfig, SyntheticLogConfig};
use epitrack_core::graph::generate_erdos_renyi;
use epitrack_core::sis::{infected_fraction_by_degree, step_agents};
use epitrack_core::{rng_from_seed, Graph, InfectionState, TransitionKernel};

fn contact_kernel(l_max: usize) -> TransitionKernel {
    TransitionKernel::from_fn(l_max, 1.0, |_, a| (0.3, 1.0 - 0.98 * 0.8f64.powi(a as i32))).unwrap()
}

fn run_states(g: &Graph, k: &TransitionKernel, bins: usize, seed: u64) -> Vec<InfectionState> {
    let mut rng = rng_from_seed(seed);
    let mut state = InfectionState::new((0..g.node_count()).map(|_| rng.random::<f64>() < 0.3).collect());
    let mut states = vec![state.clone()];
    for _ in 1..bins {
        state = step_agents(g, k, &state, &mut rng).unwrap();
        states.push(state.clone());
    }
    states
}

fn series_of(g: &Graph, states: Vec<InfectionState>) -> InfectionTimeSeries {
    let x = states.iter().map(|s| infected_fraction_by_degree(g, s)).collect();
    InfectionTimeSeries {
        bin_width: 1,
        start: 0,
        states,
        x,
    }
}

fn infected_degrees(g: &Graph, s: &InfectionState) -> Vec<f64> {
    (0..g.node_count())
        .filter(|&v| s.is_infected(v) && g.degree(v) > 0)
        .map(|v| g.degree(v) as f64)
        .collect()
}

#[test]
fn transmission_rates_within_binomial_errors() {
    let g = generate_erdos_renyi(3000, 4.0, 1).unwrap();
    let k = contact_kernel(g.max_degree());
    let series = series_of(&g, run_states(&g, &k, 60, 2));
    let rates = empirical_transition_rates(&series, &g).unwrap();
    let mut checked = 0;
    for l in 1..=rates.max_degree {
        for a in 0..=l {
            let n = rates.exposures[l][a];
            if n < 100 {
                continue;
            }
            let p = k.p21(l, a);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let err = (rates.p_hat(l, a) - p).abs();
            assert!(err <= 3.0 * se, "({l}, {a}): n {n}, error {err}, se {se}");
            checked += 1;
        }
    }
    assert!(checked >= 15, "{checked} cells");
}

#[test]
fn estimated_kernel_reproduces_final_infected_degrees() {
    let g = generate_erdos_renyi(3000, 4.0, 3).unwrap();
    let k = contact_kernel(g.max_degree());
    let states = run_states(&g, &k, 40, 4);
    let truth_final = states.last().unwrap().clone();
    let series = series_of(&g, states);
    let k_hat = empirical_transition_rates(&series, &g).unwrap().to_kernel(0.3, false).unwrap();
    let replay = run_states(&g, &k_hat, 40, 5);
    let ks = ks_two_sample(
        &infected_degrees(&g, &truth_final),
        &infected_degrees(&g, replay.last().unwrap()),
    )
    .unwrap();
    assert!(ks.p_value > 0.01, "KS {} p {}", ks.statistic, ks.p_value);
}

fn zipf_sample(gamma: f64, n: usize, seed: u64) -> Vec<usize> {
    let z = Zipf::new(1e9, gamma).unwrap();
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| z.sample(&mut rng) as usize).collect()
}

#[test]
fn power_law_exponent_at_large_sample() {
    let fit = fit_power_law_discrete(&zipf_sample(2.5, 100_000, 7), 1).unwrap();
    assert!((2.45..=2.55).contains(&fit.exponent), "gamma {}", fit.exponent);
    assert!(fit.llr_vs_exponential > 0.0);
    assert!(!fit.small_sample);
}

#[test]
fn power_law_error_shrinks_with_sample_size() {
    let mean_err = |n: usize| {
        (0..10)
            .map(|s| (fit_power_law_discrete(&zipf_sample(2.5, n, 100 + s), 1).unwrap().exponent - 2.5).abs())
            .sum::<f64>()
            / 10.0
    };
    let errs = [mean_err(1_000), mean_err(10_000), mean_err(100_000)];
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn exponential_sample_prefers_exponential() {
    let geo = Geometric::new(0.3).unwrap();
    let mut rng = rng_from_seed(9);
    let degrees: Vec<usize> = (0..5000).map(|_| 1 + geo.sample(&mut rng) as usize).collect();
    let fit = fit_power_law_discrete(&degrees, 1).unwrap();
    assert!(fit.llr_vs_exponential < 0.0, "llr {}", fit.llr_vs_exponential);
}

#[test]
fn var_recovers_stable_recursion() {
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.05, -0.1, 0.85]);
    let c = [0.1, -0.05];
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut rng = rng_from_seed(11);
    let mut y = vec![vec![0.0, 0.0]];
    for _ in 0..10_000 {
        let p = y.last().unwrap();
        y.push(
            (0..2)
                .map(|r| c[r] + a[(r, 0)] * p[0] + a[(r, 1)] * p[1] + noise.sample(&mut rng))
                .collect(),
        );
    }
    let fit = fit_var(&y, 1).unwrap();
    let err = (&fit.coefficients[0] - &a).amax();
    assert!(err < 1e-2, "max coefficient error {err}");
}

#[test]
fn pipeline_on_synthetic_log_file() {
    let cfg = SyntheticLogConfig {
        nodes: 1500,
        bins: 10,
        ..SyntheticLogConfig::default()
    };
    let log = synthetic_event_log(&cfg, 21).unwrap();
    let mut file = tempfile::NamedTempFile::new().unwrap();
    file.write_all(log.text().as_bytes()).unwrap();
    let input = BufReader::new(std::fs::File::open(file.path()).unwrap());
    let report = run_pipeline(
        input,
        &PipelineConfig {
            hashtag: cfg.hashtag.clone(),
            delta: 1.0,
            bin_width_ms: cfg.bin_width_ms,
            add_one: false,
            fit_max_degree: Some(cfg.max_degree),
        },
        0,
    )
    .unwrap();
    assert_eq!(report.mention_graph.graph.to_edge_list_string(), log.graph.to_edge_list_string());
    assert_eq!(report.series.bins(), cfg.bins);
    assert_eq!(report.model.len(), cfg.bins);
    assert!(report.ks.p_value > 0.01, "KS p {}", report.ks.p_value);
    assert!((report.fit.exponent - cfg.gamma).abs() < 0.2, "gamma {}", report.fit.exponent);
}
