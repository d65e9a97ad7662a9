use proptest::prelude::*;

use epitrack_core::analytics::{deviation_table, hurwitz_zeta, ks_two_sample, moving_average_filter};
use epitrack_core::empirics::{build_mention_graph, extract_infection_series, DiffusionEvent};
use epitrack_core::evolution::evolution_matrix;
use epitrack_core::filter::{gaussian_likelihood, hmm_update, predict, update};
use epitrack_core::graph::{degree_distribution, generate_erdos_renyi};
use epitrack_core::meanfield::{build_dynamics, jacobian, mean_field_step};
use epitrack_core::sampling::gaussian_observation;
use epitrack_core::{rng_from_seed, DegreeDistribution, FilterState, HmmBelief, TransitionKernel};

fn unit_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, len)
}

fn events() -> impl Strategy<Value = Vec<DiffusionEvent>> {
    let user = (0..12u8).prop_map(|i| format!("u{i}"));
    let event = (0..50u64, user, prop::collection::vec((0..12u8).prop_map(|i| format!("u{i}")), 0..4))
        .prop_map(|(timestamp, user, mentions)| DiffusionEvent {
            timestamp,
            user,
            mentions,
            tagged: true,
        });
    prop::collection::vec(event, 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_graphs_are_simple(n in 2usize..300, mean in 0.0..6.0f64, seed in any::<u64>()) {
        let g = generate_erdos_renyi(n, mean, seed).unwrap();
        prop_assert!(g.check_invariants());
        prop_assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.edge_count());
        for (u, v) in g.edges() {
            prop_assert!(u != v && g.has_edge(v, u));
        }
    }

    #[test]
    fn degree_law_sums_to_one(n in 2usize..300, mean in 0.5..6.0f64, seed in any::<u64>()) {
        let g = generate_erdos_renyi(n, mean, seed).unwrap();
        if let Ok(p) = degree_distribution(&g) {
            let total: f64 = p.distribution.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.distribution.probs().iter().all(|&q| q >= 0.0));
        }
    }

    #[test]
    fn kernel_entries_are_probabilities(l in 1usize..12, lambda in 0.0..=1.0f64, seed in any::<u64>()) {
        let k = TransitionKernel::random(l, lambda, seed).unwrap();
        for deg in 1..=l {
            for a in 0..=deg {
                prop_assert!((0.0..=1.0).contains(&k.p12(deg, a)));
                prop_assert!((0.0..=1.0).contains(&k.p21(deg, a)));
            }
        }
    }

    #[test]
    fn mean_field_step_stays_in_unit_cube(
        x in unit_vec(5),
        lambda in 0.0..=1.0f64,
        m in 1usize..50,
        seed in any::<u64>(),
    ) {
        let k = TransitionKernel::random(5, lambda, seed).unwrap();
        let d = build_dynamics(&k, &DegreeDistribution::power_law(2.5, 5).unwrap(), m).unwrap();
        for v in mean_field_step(&d, &x) {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v), "{}", v);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(x in unit_vec(4), seed in any::<u64>()) {
        let k = TransitionKernel::random(4, 0.8, seed).unwrap();
        let d = build_dynamics(&k, &DegreeDistribution::uniform(4).unwrap(), 5).unwrap();
        let j = jacobian(&d, &x);
        let h = 1e-6;
        for c in 0..4 {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[c] += h;
            down[c] -= h;
            let (fu, fd) = (mean_field_step(&d, &up), mean_field_step(&d, &down));
            for r in 0..4 {
                let fdiff = (fu[r] - fd[r]) / (2.0 * h);
                prop_assert!((j[(r, c)] - fdiff).abs() < 1e-7, "({}, {}): {} vs {}", r, c, j[(r, c)], fdiff);
            }
        }
    }

    #[test]
    fn covariance_stays_psd_through_predict_and_update(
        x0 in 0.05..0.95f64,
        h0 in 1e-5..5e-2f64,
        r in 1e-4..1e-1f64,
        seed in any::<u64>(),
    ) {
        let k = TransitionKernel::random(3, 1.0, seed).unwrap();
        let d = build_dynamics(&k, &DegreeDistribution::uniform(3).unwrap(), 10).unwrap();
        let mut belief = FilterState::isotropic(3, x0, h0).unwrap();
        let mut rng = rng_from_seed(seed);
        for _ in 0..5 {
            belief = predict(&d, &belief).unwrap();
            prop_assert!(belief.check_invariants().is_ok());
            let y: Vec<f64> = belief.mean.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            belief = update(&belief, &gaussian_observation(&y, r, &mut rng).unwrap()).unwrap();
            prop_assert!(belief.check_invariants().is_ok());
        }
    }

    #[test]
    fn hmm_belief_stays_on_simplex(
        w in prop::collection::vec(0.01..1.0f64, 8),
        p in 0.0..=1.0f64,
        z in 0.0..9.0f64,
    ) {
        let total: f64 = w.iter().sum();
        let belief = HmmBelief::new(w.iter().map(|v| v / total).collect()).unwrap();
        let h = evolution_matrix(p, 10, 8).unwrap();
        let lik = gaussian_likelihood(z, 8, 1.0).unwrap();
        let next = hmm_update(&belief, &h, &lik).unwrap();
        prop_assert!(next.probs.iter().all(|&q| q >= 0.0));
        prop_assert!((next.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ks_statistic_bounded_and_symmetric(
        a in prop::collection::vec(-10.0..10.0f64, 1..60),
        b in prop::collection::vec(-10.0..10.0f64, 1..60),
    ) {
        let ab = ks_two_sample(&a, &b).unwrap();
        let ba = ks_two_sample(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.statistic));
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert_eq!(ab.statistic, ba.statistic);
        prop_assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
    }

    #[test]
    fn ks_ignores_monotone_relabeling(
        a in prop::collection::vec(-3.0..3.0f64, 1..60),
        b in prop::collection::vec(-3.0..3.0f64, 1..60),
    ) {
        let f = |v: &Vec<f64>| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
        prop_assert_eq!(ks_two_sample(&a, &b).unwrap(), ks_two_sample(&f(&a), &f(&b)).unwrap());
    }

    #[test]
    fn squared_deviation_ignores_error_sign(
        base in prop::collection::vec(unit_vec(4), 1..20),
        shift in -0.5..0.5f64,
    ) {
        let up: Vec<Vec<f64>> = base.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect();
        let down: Vec<Vec<f64>> = base.iter().map(|r| r.iter().map(|v| v - shift).collect()).collect();
        let counts = [5, 3, 2, 1];
        let a = deviation_table(&up, &base, &counts).unwrap();
        let b = deviation_table(&down, &base, &counts).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.avg_square - y.avg_square).abs() < 1e-12);
            prop_assert!((x.max_abs - y.max_abs).abs() < 1e-12);
        }
    }

    #[test]
    fn hurwitz_zeta_matches_direct_sum(s in 2.0..6.0f64, q in 0.2..5.0f64) {
        // Direct sum up to N plus the Euler-Maclaurin tail integral and half term.
        let n = 200_000usize;
        let head: f64 = (0..n).map(|k| (k as f64 + q).powf(-s)).sum();
        let end = n as f64 + q;
        let tail = end.powf(1.0 - s) / (s - 1.0) + 0.5 * end.powf(-s);
        let z = hurwitz_zeta(s, q);
        prop_assert!(((z - head - tail) / z).abs() < 1e-10, "{} vs {}", z, head + tail);
        // Shift identity.
        prop_assert!(((z - hurwitz_zeta(s, q + 1.0) - q.powf(-s)) / z).abs() < 1e-12);
    }

    #[test]
    fn unit_window_moving_average_is_identity(
        rows in prop::collection::vec(unit_vec(3), 1..40),
    ) {
        prop_assert_eq!(moving_average_filter(&rows, 1).unwrap(), rows);
    }

    #[test]
    fn mention_graph_ignores_event_order(evs in events(), shift in 0usize..30) {
        let mut rotated = evs.clone();
        let len = rotated.len();
        rotated.rotate_left(shift % len);
        rotated.reverse();
        let a = build_mention_graph(&evs).unwrap();
        let b = build_mention_graph(&rotated).unwrap();
        prop_assert_eq!(a.users, b.users);
        prop_assert_eq!(a.graph.to_edge_list_string(), b.graph.to_edge_list_string());
    }

    #[test]
    fn zero_recovery_extraction_is_seed_free(evs in events(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let mut sorted = evs;
        sorted.sort_by_key(|e| e.timestamp);
        let mg = build_mention_graph(&sorted).unwrap();
        let a = extract_infection_series(&sorted, &mg, 0.0, 5, &mut rng_from_seed(s1)).unwrap();
        let b = extract_infection_series(&sorted, &mg, 0.0, 5, &mut rng_from_seed(s2)).unwrap();
        prop_assert_eq!(a, b);
    }
}
