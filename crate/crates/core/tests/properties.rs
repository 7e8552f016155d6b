use proptest::prelude::*;
use scoresens::scores::{ConvexGenerator as C, IncreasingGenerator as G};
use scoresens::simulation::{derive_seed, sample_model};
use scoresens::{empirical_functional, evaluate, FunctionalSpec, ModelSpec, Prediction, ScoreSpec};

/// One representative per family, all admissible on positive inputs.
fn families() -> Vec<ScoreSpec> {
    vec![
        ScoreSpec::squared(),
        ScoreSpec::Bregman { phi: C::NegLog },
        ScoreSpec::Bregman { phi: C::NegEntropy },
        ScoreSpec::Bregman {
            phi: C::PiecewisePower {
                b: 3.0,
                d1: 1.0,
                d2: 1.0,
            },
        },
        ScoreSpec::Gpl { g: G::Log, alpha: 0.3 },
        ScoreSpec::pinball(0.9),
        ScoreSpec::Patton { b: 0.0 },
        ScoreSpec::Patton { b: 1.0 },
        ScoreSpec::Patton { b: 2.5 },
        ScoreSpec::VarHomogeneous {
            b: -0.5,
            d: 1.0,
            alpha: 0.7,
        },
        ScoreSpec::ElementaryMean { theta: 1.3 },
        ScoreSpec::ElementaryVar { theta: 1.3, alpha: 0.4 },
        ScoreSpec::JointVarEs {
            g: G::Identity,
            phi: C::NegLog,
            alpha: 0.9,
        },
        ScoreSpec::ZeroHomVarEs { alpha: 0.9 },
        ScoreSpec::Expectile {
            tau: 0.25,
            phi: C::Square,
        },
        ScoreSpec::Entropic {
            gamma: 0.5,
            phi: C::Square,
        },
        ScoreSpec::MeanVariance {
            phi1: C::Square,
            phi2: C::Square,
        },
        ScoreSpec::ZeroOne,
        ScoreSpec::RvarTriplet {
            g1: G::Identity,
            g2: G::Power { b: 2.0, d: 1.0 },
            phi: C::NegLog,
            alpha: 0.2,
            beta: 0.8,
        },
    ]
}

/// A prediction of the right dimension built from positive draws.
fn prediction(spec: &ScoreSpec, z: &[f64; 3]) -> Prediction {
    match spec.target_functional() {
        FunctionalSpec::VarEs { .. } => Prediction::pair(z[0].min(z[1]), z[0].max(z[1])),
        FunctionalSpec::MeanVariance => Prediction::pair(z[0], z[1]),
        FunctionalSpec::RvarTriplet { .. } => {
            let (lo, hi) = (z[0].min(z[1]), z[0].max(z[1]));
            Prediction::triple(lo, hi, z[2].clamp(lo, hi))
        }
        _ => Prediction::scalar(z[0]),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scores_vanish_at_point_mass_and_are_non_negative(
        y in 1.0f64..10.0,
        z in prop::array::uniform3(1.0f64..10.0),
    ) {
        for spec in families() {
            let at_y = spec.target_functional().point_mass(y);
            prop_assert_eq!(evaluate(&spec, &at_y, y).unwrap(), 0.0, "{}", spec);
            let pred = prediction(&spec, &z);
            // Some joint families restrict predictions jointly; skip those.
            if let Ok(s) = evaluate(&spec, &pred, y) {
                prop_assert!(s >= 0.0, "{}: S({:?}, {}) = {}", spec, pred, y, s);
            }
        }
    }

    #[test]
    fn homogeneous_families_scale_with_degree_b(
        y in 0.1f64..10.0,
        z in 0.1f64..10.0,
        b in -2.0f64..3.0,
        alpha in 0.05f64..0.95,
    ) {
        // Away from y = z the closed forms carry no cancellation.
        prop_assume!((y - z).abs() > 0.1 * y.max(z));
        let specs = [
            ScoreSpec::Patton { b },
            ScoreSpec::Patton { b: 0.0 },
            ScoreSpec::Patton { b: 1.0 },
            ScoreSpec::Patton { b: 2.0 },
            ScoreSpec::VarHomogeneous { b, d: 1.0, alpha },
            ScoreSpec::VarHomogeneous { b: 0.0, d: 1.0, alpha },
        ];
        for spec in specs {
            let deg = spec.homogeneity_degree().unwrap();
            let base = evaluate(&spec, &Prediction::scalar(z), y).unwrap();
            for c in [0.5, 2.0, 10.0] {
                let scaled = evaluate(&spec, &Prediction::scalar(c * z), c * y).unwrap();
                let want = c.powf(deg) * base;
                prop_assert!(
                    (scaled - want).abs() <= 1e-12 * want.abs(),
                    "{}: c = {}: {} vs {}", spec, c, scaled, want
                );
            }
        }
    }

    #[test]
    fn functionals_are_positively_homogeneous(
        sample in prop::collection::vec(0.01f64..100.0, 1..60),
        alpha in 0.05f64..0.9,
        tau in 0.05f64..0.95,
    ) {
        let specs = [
            FunctionalSpec::Mean,
            FunctionalSpec::Var { alpha },
            FunctionalSpec::VarEs { alpha },
            FunctionalSpec::Expectile { tau },
            FunctionalSpec::RvarTriplet { alpha, beta: alpha + 0.05 },
        ];
        for spec in specs {
            let t = empirical_functional(&spec, &sample).unwrap();
            for c in [0.5, 2.0, 10.0] {
                let scaled: Vec<f64> = sample.iter().map(|v| c * v).collect();
                let tc = empirical_functional(&spec, &scaled).unwrap();
                for (a, b) in tc.as_slice().iter().zip(t.as_slice()) {
                    prop_assert!((a - c * b).abs() <= 1e-12 * (c * b).abs(), "{}: c = {}: {} vs {}", spec, c, a, c * b);
                }
            }
        }
    }

    #[test]
    fn es_dominates_var(
        sample in prop::collection::vec(-100.0f64..100.0, 1..80),
        alpha in 0.01f64..0.99,
    ) {
        let t = empirical_functional(&FunctionalSpec::VarEs { alpha }, &sample).unwrap();
        prop_assert!(t.get(1) >= t.get(0), "VaR {} ES {}", t.get(0), t.get(1));
    }

    #[test]
    fn empirical_var_is_the_left_continuous_quantile(
        sample in prop::collection::vec(-5i32..5, 1..50),
        alpha in 0.01f64..0.99,
    ) {
        // Integer-valued samples produce atoms, the case where conventions differ.
        let ys: Vec<f64> = sample.iter().map(|&v| v as f64).collect();
        let q = empirical_functional(&FunctionalSpec::Var { alpha }, &ys).unwrap().get(0);
        let m = ys.len() as f64;
        let cdf = |t: f64| ys.iter().filter(|&&v| v <= t).count() as f64 / m;
        let mut support = ys.clone();
        support.sort_by(f64::total_cmp);
        let inf = support.iter().copied().find(|&t| cdf(t) >= alpha).unwrap();
        prop_assert_eq!(q, inf);
    }
}

#[test]
fn sampling_is_independent_of_thread_count() {
    let models = [
        ModelSpec::ishigami(1.0, 2.0),
        ModelSpec::bernoulli_mixture(),
        ModelSpec::insurance_portfolio(),
        ModelSpec::NormalSum { rho: 0.5 },
    ];
    for model in models {
        let seed = derive_seed(11, 3);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| sample_model(&model, 50_000, seed).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.factors.as_slice(), four.factors.as_slice(), "{}", model.id());
        assert_eq!(one.response, four.response, "{}", model.id());
        assert_eq!(one, run(1));
    }
}
