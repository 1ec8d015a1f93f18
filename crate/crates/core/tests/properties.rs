use proptest::prelude::*;

use ou_gauss::cli::{fmt_f64, parse_config};
use ou_gauss::estimators::{theta_tilde_from_energy, theta_hat_with_alpha};
use ou_gauss::hilbert::{increment_gram, Grid};
use ou_gauss::montecarlo::ks_distance;
use ou_gauss::simulate::{build_ou_path, CholeskyFactor};
use ou_gauss::KernelSpec;

fn kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.51f64..0.99).prop_map(|h| KernelSpec::fbm(h).unwrap()),
        (0.51f64..0.99).prop_map(|h| KernelSpec::subfbm(h).unwrap()),
        (0.6f64..0.99, 0.6f64..1.0)
            .prop_filter("HK > 1/2", |(h, k)| h * k > 0.51)
            .prop_map(|(h, k)| KernelSpec::bifbm(h, k).unwrap()),
        (0.55f64..0.9, 0.7f64..1.1)
            .prop_filter("HK in (1/2, 1)", |(h, k)| h * k > 0.51 && h * k < 0.99)
            .prop_map(|(h, k)| KernelSpec::gensubfbm(h, k).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_grammar_round_trips(spec in kernel()) {
        let back: KernelSpec = spec.to_string().parse().unwrap();
        prop_assert_eq!(back.to_string(), spec.to_string());
        prop_assert_eq!(back.beta(), spec.beta());
        prop_assert_eq!(back.c_beta_prime(), spec.c_beta_prime());
    }

    #[test]
    fn covariance_is_symmetric(spec in kernel(), t in 0.01f64..20.0, s in 0.01f64..20.0) {
        let a = spec.cov(t, s).unwrap();
        let b = spec.cov(s, t).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        // Cauchy-Schwarz for a covariance.
        let bound = (spec.cov(t, t).unwrap() * spec.cov(s, s).unwrap()).sqrt();
        prop_assert!(a.abs() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn gram_factorizes(spec in kernel(), t in 0.5f64..20.0, n in 2usize..40) {
        let grid = Grid::new(t, n).unwrap();
        let gm = increment_gram(&spec, &grid);
        prop_assert!((0..n).all(|i| (0..n).all(|j| gm.gamma[(i, j)] == gm.gamma[(j, i)])));
        let f = CholeskyFactor::new(&gm).unwrap();
        let scale = gm.gamma.trace() / n as f64;
        prop_assert!(f.reconstruction_error(&gm.gamma) <= 1e-8 * scale);
        // The leading block of the factor is the factor of the leading block.
        let m = n / 2;
        let lead = CholeskyFactor::new(&gm.leading_block(m).unwrap()).unwrap();
        for i in 0..m {
            for j in 0..=i {
                prop_assert!((lead.entry(i, j) - f.entry(i, j)).abs() <= 1e-12 * scale.sqrt());
            }
        }
    }

    #[test]
    fn grid_nodes_are_exact(t in 0.01f64..1000.0, n in 1usize..5000) {
        let g = Grid::new(t, n).unwrap();
        prop_assert_eq!(g.node(0), 0.0);
        prop_assert_eq!(g.node(n), t);
        let nodes = g.nodes();
        prop_assert!(nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn ou_path_is_linear(dg in prop::collection::vec(-3.0f64..3.0, 1..60), c in -4.0f64..4.0, theta in 0.0f64..5.0) {
        let grid = Grid::new(3.0, dg.len()).unwrap();
        let p = build_ou_path(dg.clone(), theta, &grid).unwrap();
        let q = build_ou_path(dg.iter().map(|v| c * v).collect(), theta, &grid).unwrap();
        for (a, b) in p.x.iter().zip(&q.x) {
            prop_assert!((c * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        prop_assert!((p.g[dg.len()] - dg.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn second_moment_estimator_inverts_the_limit(spec in kernel(), theta in 0.05f64..20.0) {
        let a = spec.constants(theta).unwrap().a;
        let back = theta_tilde_from_energy(a, &spec).unwrap();
        prop_assert!((back - theta).abs() <= 1e-10 * theta);
    }

    #[test]
    fn least_squares_is_exact_on_its_own_numerator(theta in 0.1f64..5.0, energy in 0.01f64..10.0, x_end in -5.0f64..5.0, t in 1.0f64..100.0) {
        // With alpha = x_T^2 / 2 + theta T energy the estimate returns theta.
        let alpha = 0.5 * x_end * x_end + theta * t * energy;
        let hat = theta_hat_with_alpha(alpha, x_end, energy, t).unwrap();
        prop_assert!((hat - theta).abs() <= 1e-9 * theta.max(1.0));
    }

    #[test]
    fn floats_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn ks_distance_is_a_probability(xs in prop::collection::vec(-10.0f64..10.0, 1..200)) {
        let d = ks_distance(&xs).unwrap();
        prop_assert!(d > 0.0 && d <= 1.0);
        prop_assert!(d >= 0.5 / xs.len() as f64 - 1e-15);
    }

    #[test]
    fn config_lines_round_trip(theta in 0.01f64..50.0, seed in any::<u64>(), reps in 1usize..100000) {
        let text = format!("theta = {theta}\n# comment\nseed={seed}\n  reps =  {reps}  \n");
        let m = parse_config(&text).unwrap();
        prop_assert_eq!(m["theta"].parse::<f64>().unwrap(), theta);
        prop_assert_eq!(m["seed"].parse::<u64>().unwrap(), seed);
        prop_assert_eq!(m["reps"].parse::<usize>().unwrap(), reps);
    }
}
