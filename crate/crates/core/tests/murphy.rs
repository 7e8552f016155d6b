//! Murphy diagrams, dominance verdicts, the mixture representation and the
//! confidence-interval rate on closed-form conditionals.

use scoresens::models::Subset;
use scoresens::scores::{mixture_weight_check, murphy_grid_default, ConvexGenerator as C, IncreasingGenerator as G};
use scoresens::sensitivity::{
    dominance_check, murphy_elementary, murphy_homogeneous, murphy_homogeneous_with, Dominance, HomogeneousFamily,
    MurphyCurve, MurphyInput,
};
use scoresens::simulation::{derive_seed, sample_model};
use scoresens::{
    empirical_functional, estimate_sensitivity, evaluate, ConditionalModel, FunctionalSpec, ModelSpec, MurphyAxis,
    MurphyGrid, Prediction, ScoreSpec,
};

fn singles(n: usize) -> Vec<Subset> {
    (1..=n).map(|i| Subset::from_labels(&[i]).unwrap()).collect()
}

/// Curves for the single factors with an independent baseline sample.
fn curves(model: &ModelSpec, functional: FunctionalSpec, grid: Option<MurphyGrid>, m: usize, seed: u64) -> MurphyCurve {
    let base = sample_model(model, m, derive_seed(seed, 2)).unwrap();
    let baseline = empirical_functional(&functional, &base.response).unwrap();
    curves_from(model, functional, baseline, grid, m, seed)
}

fn curves_from(
    model: &ModelSpec,
    functional: FunctionalSpec,
    baseline: Prediction,
    grid: Option<MurphyGrid>,
    m: usize,
    seed: u64,
) -> MurphyCurve {
    let eval = sample_model(model, m, derive_seed(seed, 1)).unwrap();
    let conds: Vec<ConditionalModel> = singles(model.n_factors())
        .iter()
        .map(|s| ConditionalModel::ClosedForm(model.conditional_rule(&functional, s).unwrap()))
        .collect();
    let input = MurphyInput {
        functional,
        baseline,
        conds: &conds,
        eval: &eval,
    };
    match grid {
        Some(g) if g.axis == MurphyAxis::B => murphy_homogeneous(&input, &g).unwrap(),
        Some(g) => murphy_elementary(&input, &g).unwrap(),
        None => {
            let g = murphy_grid_default(MurphyAxis::Theta, &eval.response, &functional).unwrap();
            murphy_elementary(&input, &g).unwrap()
        }
    }
}

#[test]
fn bernoulli_mean_sensitivities_are_ordered() {
    let c = curves(&ModelSpec::bernoulli_mixture(), FunctionalSpec::Mean, None, 200_000, 1);
    let [x1, x2, x3] = [&c.rows[0].values, &c.rows[1].values, &c.rows[2].values];
    assert_eq!(dominance_check(x1, x2, 0.01).unwrap(), Dominance::ADominates);
    assert_eq!(dominance_check(x2, x3, 0.01).unwrap(), Dominance::ADominates);
    assert_eq!(dominance_check(x3, x1, 0.01).unwrap(), Dominance::BDominates);
    let defined = x1.iter().filter(|v| v.is_some()).count();
    assert!(defined > 150, "only {defined} defined points");
}

#[test]
fn ishigami_irrelevant_factors_have_flat_zero_curves() {
    let model = ModelSpec::ishigami(1.0, 2.0);
    let c = curves(&model, FunctionalSpec::Mean, None, 2_000_000, 5);
    // E[Y | X3] is constant, so its curve vanishes identically.
    assert!(c.rows[2].values.iter().flatten().all(|&v| v == 0.0));
    // E[Y | X2] = sin^2 X2 only moves within [0, 1]; outside that band the
    // elementary scores of the conditional and the baseline coincide.
    for (&t, v) in c.grid.values().iter().zip(&c.rows[1].values) {
        if !(0.0..1.0).contains(&t) {
            assert!(v.is_none_or(|x| x == 0.0), "theta {t}: {v:?}");
        }
    }
    // Inside the band: independent simulation (10^7 draws, +-0.001 across
    // seeds) of 1 - E S_t(sin^2 X2, Y) / E S_t(1/2, Y), compared within the
    // estimator's own interval. The exact mean E[Y] = 1/2 is the baseline.
    let eval = sample_model(&model, 4_000_000, 61).unwrap();
    let rule = model
        .conditional_rule(&FunctionalSpec::Mean, &Subset::from_labels(&[2]).unwrap())
        .unwrap();
    let cond = ConditionalModel::ClosedForm(rule);
    for (theta, want) in [(0.3, 0.00569), (0.495, 0.01218), (0.7, 0.00552)] {
        let score = ScoreSpec::ElementaryMean { theta };
        let est = estimate_sensitivity(&score, &FunctionalSpec::Mean, &Prediction::scalar(0.5), &cond, &eval).unwrap();
        let (lo, hi) = est.ci90.unwrap();
        assert!(
            (est.value - want).abs() <= (hi - lo) + 0.001,
            "theta {theta}: {} [{lo}, {hi}] vs {want}",
            est.value
        );
    }
    // Ishigami responses are real-valued, so the Patton axis is rejected and
    // the |t|^b Bregman family on b in (1, 4] is used instead.
    let eval = sample_model(&model, 200_000, derive_seed(2, 3)).unwrap();
    let base = sample_model(&model, 200_000, derive_seed(2, 4)).unwrap();
    let baseline = empirical_functional(&FunctionalSpec::Mean, &base.response).unwrap();
    let conds: Vec<ConditionalModel> = singles(3)
        .iter()
        .map(|s| ConditionalModel::ClosedForm(model.conditional_rule(&FunctionalSpec::Mean, s).unwrap()))
        .collect();
    let input = MurphyInput {
        functional: FunctionalSpec::Mean,
        baseline,
        conds: &conds,
        eval: &eval,
    };
    let patton = murphy_grid_default(MurphyAxis::B, &eval.response, &FunctionalSpec::Mean).unwrap();
    assert!(murphy_homogeneous(&input, &patton).is_err());
    let grid = MurphyGrid::linspace(MurphyAxis::B, 1.1, 4.0, 30).unwrap();
    let c = murphy_homogeneous_with(&input, &grid, HomogeneousFamily::PiecewisePower).unwrap();
    for row in &c.rows {
        assert!(
            row.values.iter().all(|v| v.is_some_and(f64::is_finite)),
            "{}",
            row.subset
        );
    }
    for row in &c.rows[1..] {
        for v in row.values.iter().flatten() {
            assert!(v.abs() <= 0.01, "{}: {v}", row.subset);
        }
    }
}

#[test]
fn ishigami_squared_loss_point_on_the_b_axis() {
    let grid = MurphyGrid::new(MurphyAxis::B, vec![1.5, 2.0, 3.0]).unwrap();
    let model = ModelSpec::ishigami(1.0, 2.0);
    let eval = sample_model(&model, 400_000, 7).unwrap();
    let base = sample_model(&model, 400_000, 8).unwrap();
    let baseline = empirical_functional(&FunctionalSpec::Mean, &base.response).unwrap();
    let conds: Vec<ConditionalModel> = singles(3)
        .iter()
        .map(|s| ConditionalModel::ClosedForm(model.conditional_rule(&FunctionalSpec::Mean, s).unwrap()))
        .collect();
    let input = MurphyInput {
        functional: FunctionalSpec::Mean,
        baseline,
        conds: &conds,
        eval: &eval,
    };
    let c = murphy_homogeneous_with(&input, &grid, HomogeneousFamily::PiecewisePower).unwrap();
    let x1 = c.at(&Subset::from_labels(&[1]).unwrap(), 2.0).unwrap();
    assert!((x1 - 0.37).abs() <= 0.01, "{x1}");
}

#[test]
fn bernoulli_var_curves_on_the_b_axis() {
    let model = ModelSpec::bernoulli_mixture();
    let f = FunctionalSpec::Var { alpha: 0.9 };
    let grid = murphy_grid_default(MurphyAxis::B, &[], &f).unwrap();
    let c = curves(&model, f, Some(grid), 200_000, 3);
    // X2 carries no information about the 90% quantile anywhere on the axis.
    for v in c.rows[1].values.iter().flatten() {
        assert!(v.abs() <= 0.01, "X2: {v}");
    }
    for row in &c.rows {
        assert!(row.values.iter().all(Option::is_some), "{}", row.subset);
    }
    // Independent simulation of the closed-form conditional rules (4 * 10^6 draws).
    let at = |k: usize, b: f64| c.at(&Subset::from_labels(&[k]).unwrap(), b).unwrap();
    for (b, x1, x3) in [(0.0, 0.548, 0.048), (4.0, 0.827, 0.290)] {
        assert!((at(1, b) - x1).abs() <= 0.01, "b = {b}: X1 {}", at(1, b));
        assert!((at(3, b) - x3).abs() <= 0.01, "b = {b}: X3 {}", at(3, b));
    }
    // Under this model X1 stays ahead of X3 on the whole default axis.
    assert_eq!(
        dominance_check(&c.rows[0].values, &c.rows[2].values, 0.0).unwrap(),
        Dominance::ADominates
    );
}

#[test]
fn baseline_condition_gives_zero_curves() {
    let model = ModelSpec::bernoulli_mixture();
    let eval = sample_model(&model, 20_000, 9).unwrap();
    let baseline = empirical_functional(&FunctionalSpec::Mean, &eval.response).unwrap();
    let conds = [ConditionalModel::Constant(baseline)];
    let input = MurphyInput {
        functional: FunctionalSpec::Mean,
        baseline,
        conds: &conds,
        eval: &eval,
    };
    let grid = murphy_grid_default(MurphyAxis::Theta, &eval.response, &FunctionalSpec::Mean).unwrap();
    let c = murphy_elementary(&input, &grid).unwrap();
    assert!(c.rows[0].values.iter().flatten().all(|&v| v == 0.0));
    // Outside the sample range the elementary scores vanish.
    let far = MurphyGrid::new(MurphyAxis::Theta, vec![1e6, 2e6]).unwrap();
    assert!(murphy_elementary(&input, &far).is_err());
}

#[test]
fn mixture_residual_is_small_and_first_order() {
    let specs = [
        (ScoreSpec::squared(), 1.0, 3.0),
        (ScoreSpec::Bregman { phi: C::NegLog }, 1.0, 3.0),
        (ScoreSpec::Bregman { phi: C::NegEntropy }, 2.5, 1.2),
        (
            ScoreSpec::Bregman {
                phi: C::PiecewisePower {
                    b: 3.0,
                    d1: 1.0,
                    d2: 2.0,
                },
            },
            -1.0,
            2.0,
        ),
        (ScoreSpec::pinball(0.5), 0.0, 2.0),
        (ScoreSpec::Gpl { g: G::Log, alpha: 0.9 }, 1.0, 2.5),
        (
            ScoreSpec::Gpl {
                g: G::Power { b: 3.0, d: 1.0 },
                alpha: 0.2,
            },
            2.7,
            1.1,
        ),
        (
            ScoreSpec::VarHomogeneous {
                b: -1.0,
                d: 1.0,
                alpha: 0.7,
            },
            1.5,
            2.9,
        ),
    ];
    for (spec, z, y) in specs {
        let (z, y): (f64, f64) = (z, y);
        let fine = MurphyGrid::linspace(MurphyAxis::Theta, -1.5, 3.5, 10_000).unwrap();
        let coarse = MurphyGrid::linspace(MurphyAxis::Theta, -1.5, 3.5, 1_000).unwrap();
        let positive = MurphyGrid::linspace(MurphyAxis::Theta, 0.5, 3.5, 10_000).unwrap();
        let (fine, coarse) = if z.min(y) > 0.5 {
            (
                positive,
                MurphyGrid::linspace(MurphyAxis::Theta, 0.5, 3.5, 1_000).unwrap(),
            )
        } else {
            (fine, coarse)
        };
        let r_fine = mixture_weight_check(&spec, &fine, z, y).unwrap();
        let r_coarse = mixture_weight_check(&spec, &coarse, z, y).unwrap();
        let exact = evaluate(&spec, &Prediction::scalar(z), y).unwrap();
        assert!(r_fine < 1e-3 * exact.max(1.0), "{spec}: {r_fine} of {exact}");
        // The residual shrinks at least linearly in the mesh.
        assert!(r_fine <= r_coarse / 5.0 + 1e-12, "{spec}: {r_coarse} -> {r_fine}");
    }
}

#[test]
fn interval_width_shrinks_like_root_m() {
    let model = ModelSpec::ishigami(1.0, 2.0);
    let rule = model
        .conditional_rule(&FunctionalSpec::Mean, &Subset::from_labels(&[1]).unwrap())
        .unwrap();
    let cond = ConditionalModel::ClosedForm(rule);
    let width = |m: usize| -> f64 {
        (0..8)
            .map(|r| {
                let eval = sample_model(&model, m, derive_seed(40 + m as u64, r)).unwrap();
                let base = empirical_functional(&FunctionalSpec::Mean, &eval.response).unwrap();
                let (lo, hi) = estimate_sensitivity(&ScoreSpec::squared(), &FunctionalSpec::Mean, &base, &cond, &eval)
                    .unwrap()
                    .ci90
                    .unwrap();
                hi - lo
            })
            .sum::<f64>()
            / 8.0
    };
    let ratio = width(100_000) / width(50_000);
    assert!((ratio - 0.5f64.sqrt()).abs() < 0.05, "{ratio}");
}
