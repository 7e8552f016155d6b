//! Score-based sensitivity estimation, interaction information and Murphy
//! curves.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functionals::{discrete_functional, FunctionalSpec, Prediction};
use crate::models::{ConditionalRule, Subset};
use crate::neural::TrainedNet;
use crate::scores::{evaluate, ConvexGenerator, MurphyAxis, MurphyGrid, ScoreSpec};
use crate::simulation::SampleSet;
use crate::special::std_normal_quantile;
use crate::sum::neumaier;

/// Mean baseline scores below this are treated as a vanishing uncertainty term.
pub const MIN_UNCERTAINTY: f64 = 1e-12;
/// Smallest evaluation sample for which a confidence interval is reported.
pub const MIN_CI_SAMPLES: usize = 100;

/// Estimator of `T(Y | X_I)`.
#[derive(Debug, Clone)]
pub enum ConditionalModel {
    ClosedForm(ConditionalRule),
    Neural {
        net: Arc<TrainedNet>,
        subset: Subset,
    },
    /// The unconditional `T(Y)`, i.e. the empty information set.
    Constant(Prediction),
}

impl ConditionalModel {
    pub fn subset(&self) -> Subset {
        match self {
            ConditionalModel::ClosedForm(rule) => rule.subset.clone(),
            ConditionalModel::Neural { subset, .. } => subset.clone(),
            ConditionalModel::Constant(_) => Subset::empty(),
        }
    }

    /// Predictions for every row of the evaluation sample.
    pub fn predict_all(&self, eval: &SampleSet) -> Result<Vec<Prediction>> {
        match self {
            ConditionalModel::ClosedForm(rule) => {
                rule.subset.check(eval.dim())?;
                Ok(eval
                    .factors
                    .as_slice()
                    .par_chunks(eval.dim())
                    .map(|row| rule.predict_row(row))
                    .collect())
            }
            ConditionalModel::Neural { net, subset } => {
                subset.check(eval.dim())?;
                net.forward_batch(&crate::neural::project_rows(eval, subset))
            }
            ConditionalModel::Constant(p) => Ok(vec![*p; eval.len()]),
        }
    }
}

/// Out-of-sample estimate of `ξ_S(Y; X_I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    pub value: f64,
    /// Mean baseline score minus mean conditional score.
    pub numerator: f64,
    /// Mean baseline score.
    pub denominator: f64,
    /// 90% delta-method interval; absent below [`MIN_CI_SAMPLES`] observations.
    pub ci90: Option<(f64, f64)>,
    pub m: usize,
}

impl SensitivityEstimate {
    /// From per-observation scores of the conditional model and the baseline.
    pub fn from_scores(cond: &[f64], base: &[f64]) -> Result<Self> {
        if cond.len() != base.len() {
            return Err(Error::DimensionMismatch {
                expected: base.len(),
                found: cond.len(),
            });
        }
        let m = cond.len();
        if m == 0 {
            return Err(Error::EmptySample);
        }
        let sum_c = neumaier(cond.iter().copied());
        let sum_b = neumaier(base.iter().copied());
        let mean_b = sum_b / m as f64;
        if !(mean_b >= MIN_UNCERTAINTY) {
            return Err(Error::VanishingUncertainty { value: mean_b });
        }
        let mean_c = sum_c / m as f64;
        let ci90 = if m >= MIN_CI_SAMPLES {
            Some(confidence_interval(cond, base, 0.90)?)
        } else {
            None
        };
        Ok(Self {
            value: 1.0 - sum_c / sum_b,
            numerator: mean_b - mean_c,
            denominator: mean_b,
            ci90,
            m,
        })
    }
}

/// Delta-method interval for `1 - mean(cond) / mean(base)`.
///
/// With `R = μc / μb` the ratio's asymptotic variance is
/// `(σc² - 2 R σcb + R² σb²) / (m μb²)`. A non-positive variance collapses
/// the interval to the point estimate.
pub fn confidence_interval(cond: &[f64], base: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if cond.len() != base.len() {
        return Err(Error::DimensionMismatch {
            expected: base.len(),
            found: cond.len(),
        });
    }
    let m = cond.len();
    if m < MIN_CI_SAMPLES {
        return Err(Error::InsufficientSamples {
            min: MIN_CI_SAMPLES,
            found: m,
        });
    }
    let mf = m as f64;
    let mu_c = neumaier(cond.iter().copied()) / mf;
    let mu_b = neumaier(base.iter().copied()) / mf;
    if !(mu_b >= MIN_UNCERTAINTY) {
        return Err(Error::VanishingUncertainty { value: mu_b });
    }
    let r = mu_c / mu_b;
    let value = 1.0 - r;
    let denom = mf - 1.0;
    let var_c = neumaier(cond.iter().map(|c| (c - mu_c) * (c - mu_c))) / denom;
    let var_b = neumaier(base.iter().map(|b| (b - mu_b) * (b - mu_b))) / denom;
    let cov = neumaier(cond.iter().zip(base).map(|(c, b)| (c - mu_c) * (b - mu_b))) / denom;
    let var = (var_c - 2.0 * r * cov + r * r * var_b) / (mf * mu_b * mu_b);
    if !(var > 0.0 && var.is_finite()) {
        return Ok((value, value));
    }
    let half = std_normal_quantile(0.5 + level / 2.0) * var.sqrt();
    Ok((value - half, value + half))
}

fn check_pairing(score: &ScoreSpec, functional: &FunctionalSpec, baseline: &Prediction) -> Result<()> {
    score.validate()?;
    functional.validate()?;
    if score.target_functional() != *functional {
        return Err(invalid(format!(
            "score {score} elicits {}, not {functional}",
            score.target_functional()
        )));
    }
    if baseline.dim() != functional.dim() {
        return Err(Error::DimensionMismatch {
            expected: functional.dim(),
            found: baseline.dim(),
        });
    }
    Ok(())
}

fn per_observation(score: &ScoreSpec, preds: &[Prediction], y: &[f64]) -> Result<Vec<f64>> {
    preds
        .par_iter()
        .zip(y.par_iter())
        .map(|(p, &y)| evaluate(score, p, y))
        .collect()
}

/// `1 - Σ S(cond(x_I), y) / Σ S(baseline, y)` over the evaluation sample.
pub fn estimate_sensitivity(
    score: &ScoreSpec,
    functional: &FunctionalSpec,
    baseline: &Prediction,
    cond: &ConditionalModel,
    eval: &SampleSet,
) -> Result<SensitivityEstimate> {
    check_pairing(score, functional, baseline)?;
    let preds = cond.predict_all(eval)?;
    estimate_from_predictions(score, baseline, &preds, &eval.response)
}

/// [`estimate_sensitivity`] for precomputed conditional predictions.
pub fn estimate_from_predictions(
    score: &ScoreSpec,
    baseline: &Prediction,
    preds: &[Prediction],
    y: &[f64],
) -> Result<SensitivityEstimate> {
    if preds.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            found: preds.len(),
        });
    }
    let cond = per_observation(score, preds, y)?;
    let base: Vec<f64> = y
        .par_iter()
        .map(|&y| evaluate(score, baseline, y))
        .collect::<Result<_>>()?;
    SensitivityEstimate::from_scores(&cond, &base)
}

/// `max(ξ_joint - ξ_1 - ξ_2, 0)`.
pub fn interaction_information(xi_joint: f64, xi_1: f64, xi_2: f64) -> f64 {
    (xi_joint - xi_1 - xi_2).max(0.0)
}

/// Sensitivity per grid point for one information set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MurphyRow {
    pub subset: Subset,
    /// `None` where the baseline score vanishes.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MurphyCurve {
    pub grid: MurphyGrid,
    pub rows: Vec<MurphyRow>,
}

impl MurphyCurve {
    pub fn row(&self, subset: &Subset) -> Option<&[Option<f64>]> {
        self.rows
            .iter()
            .find(|r| &r.subset == subset)
            .map(|r| r.values.as_slice())
    }

    /// Value at grid parameter `param` (exact match).
    pub fn at(&self, subset: &Subset, param: f64) -> Option<f64> {
        let k = self.grid.values().iter().position(|&v| v == param)?;
        self.row(subset)?[k]
    }
}

/// Evaluation data shared by the Murphy routines.
#[derive(Debug, Clone, Copy)]
pub struct MurphyInput<'a> {
    pub functional: FunctionalSpec,
    pub baseline: Prediction,
    pub conds: &'a [ConditionalModel],
    pub eval: &'a SampleSet,
}

/// Per-observation sums `(Σ S(cond), Σ S(baseline))`.
pub fn score_sums(score: &ScoreSpec, baseline: &Prediction, preds: &[Prediction], y: &[f64]) -> Result<(f64, f64)> {
    let cond = per_observation(score, preds, y)?;
    let base: Vec<f64> = y
        .par_iter()
        .map(|&y| evaluate(score, baseline, y))
        .collect::<Result<_>>()?;
    Ok((neumaier(cond), neumaier(base)))
}

fn curve_point(score: &ScoreSpec, baseline: &Prediction, preds: &[Prediction], y: &[f64]) -> Result<Option<f64>> {
    let (c, b) = score_sums(score, baseline, preds, y)?;
    if b / (y.len() as f64) < MIN_UNCERTAINTY {
        Ok(None)
    } else {
        Ok(Some(1.0 - c / b))
    }
}

fn murphy_with(
    input: &MurphyInput<'_>,
    grid: &MurphyGrid,
    score_at: impl Fn(f64) -> Option<ScoreSpec> + Sync,
) -> Result<MurphyCurve> {
    let y = &input.eval.response;
    let preds: Vec<Vec<Prediction>> = input
        .conds
        .iter()
        .map(|c| c.predict_all(input.eval))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(input.conds.len());
    for (cond, p) in input.conds.iter().zip(&preds) {
        let values: Vec<Option<f64>> = grid
            .values()
            .par_iter()
            .map(|&t| match score_at(t) {
                Some(s) => curve_point(&s, &input.baseline, p, y),
                None => Ok(None),
            })
            .collect::<Result<_>>()?;
        rows.push(MurphyRow {
            subset: cond.subset(),
            values,
        });
    }
    if rows.iter().all(|r| r.values.iter().all(Option::is_none)) {
        return Err(Error::AllPointsUndefined);
    }
    Ok(MurphyCurve {
        grid: grid.clone(),
        rows,
    })
}

/// Murphy curves over elementary scores `S_θ` for the mean or a quantile.
pub fn murphy_elementary(input: &MurphyInput<'_>, grid: &MurphyGrid) -> Result<MurphyCurve> {
    if grid.axis != MurphyAxis::Theta {
        return Err(invalid("elementary Murphy diagrams need a theta grid"));
    }
    match input.functional {
        FunctionalSpec::Mean => murphy_with(input, grid, |theta| Some(ScoreSpec::ElementaryMean { theta })),
        FunctionalSpec::Var { alpha } => murphy_with(input, grid, move |theta| {
            Some(ScoreSpec::ElementaryVar { theta, alpha })
        }),
        other => Err(invalid(format!("no elementary scores for {other}"))),
    }
}

/// Score family used along a b axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HomogeneousFamily {
    /// Mean on positive data.
    Patton,
    /// Mean on real-valued data: `|t|^b` Bregman scores, defined for `b > 1`.
    PiecewisePower,
    /// VaR, with `d = 1`.
    VarHomogeneous,
}

impl HomogeneousFamily {
    /// Member of degree `b`, or `None` where the family is undefined.
    pub fn score(&self, b: f64, functional: &FunctionalSpec) -> Option<ScoreSpec> {
        match (self, functional) {
            (HomogeneousFamily::Patton, FunctionalSpec::Mean) => Some(ScoreSpec::Patton { b }),
            (HomogeneousFamily::PiecewisePower, FunctionalSpec::Mean) => (b > 1.0).then_some(ScoreSpec::Bregman {
                phi: ConvexGenerator::PiecewisePower { b, d1: 1.0, d2: 1.0 },
            }),
            (HomogeneousFamily::VarHomogeneous, &FunctionalSpec::Var { alpha }) => {
                Some(ScoreSpec::VarHomogeneous { b, d: 1.0, alpha })
            }
            _ => None,
        }
    }
}

/// Murphy curves over `b`-homogeneous scores.
///
/// The mean uses the Patton family, which needs strictly positive responses
/// (except at `b = 2`); VaR uses `var-homogeneous(b, 1, α)`, which needs them
/// for `b <= 0`.
pub fn murphy_homogeneous(input: &MurphyInput<'_>, grid: &MurphyGrid) -> Result<MurphyCurve> {
    let family = match input.functional {
        FunctionalSpec::Mean => HomogeneousFamily::Patton,
        FunctionalSpec::Var { .. } => HomogeneousFamily::VarHomogeneous,
        other => return Err(invalid(format!("no homogeneous family for {other}"))),
    };
    murphy_homogeneous_with(input, grid, family)
}

/// [`murphy_homogeneous`] with an explicit family.
pub fn murphy_homogeneous_with(
    input: &MurphyInput<'_>,
    grid: &MurphyGrid,
    family: HomogeneousFamily,
) -> Result<MurphyCurve> {
    if grid.axis != MurphyAxis::B {
        return Err(invalid("homogeneous Murphy diagrams need a b grid"));
    }
    let min_y = input.eval.response.iter().copied().fold(f64::INFINITY, f64::min);
    if min_y <= 0.0 {
        let needs = |b: f64| match family {
            HomogeneousFamily::Patton => b != 2.0,
            HomogeneousFamily::VarHomogeneous => b <= 0.0,
            HomogeneousFamily::PiecewisePower => false,
        };
        if grid.values().iter().any(|&b| needs(b)) {
            let b_range = match family {
                HomogeneousFamily::Patton => "all b != 2 (patton family)",
                _ => "b <= 0 (var-homogeneous family)",
            };
            return Err(Error::PositivityRequired {
                b_range: b_range.to_string(),
                value: min_y,
            });
        }
    }
    let f = input.functional;
    murphy_with(input, grid, move |b| family.score(b, &f))
}

/// Verdict of a pointwise comparison of two curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dominance {
    ADominates,
    BDominates,
    Crossing,
}

/// `A` dominates iff `a >= b - tol` at every commonly defined point; ties
/// report `A`.
pub fn dominance_check(a: &[Option<f64>], b: &[Option<f64>], tol: f64) -> Result<Dominance> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let common: Vec<(f64, f64)> = a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
    if common.is_empty() {
        return Err(Error::NoCommonPoints);
    }
    if common.iter().all(|(x, y)| *x >= y - tol) {
        Ok(Dominance::ADominates)
    } else if common.iter().all(|(x, y)| *y >= x - tol) {
        Ok(Dominance::BDominates)
    } else {
        Ok(Dominance::Crossing)
    }
}

/// Discrete model with finitely many equally or unequally weighted atoms,
/// for exact expectations by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteModel {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    weights: Vec<f64>,
}

impl FiniteModel {
    /// Atoms `(x, weight)` with response `y = g(x)`; weights are normalized.
    pub fn new(atoms: Vec<(Vec<f64>, f64)>, g: impl Fn(&[f64]) -> f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptySample);
        }
        let dim = atoms[0].0.len();
        if atoms.iter().any(|(x, _)| x.len() != dim) {
            return Err(invalid("all atoms need the same factor dimension"));
        }
        if atoms.iter().any(|(_, w)| !(*w > 0.0 && w.is_finite())) {
            return Err(invalid("atom weights must be positive"));
        }
        let total = neumaier(atoms.iter().map(|a| a.1));
        let ys = atoms.iter().map(|(x, _)| g(x)).collect();
        let weights = atoms.iter().map(|a| a.1 / total).collect();
        let xs = atoms.into_iter().map(|a| a.0).collect();
        Ok(Self { xs, ys, weights })
    }

    /// Product law of independent discrete factors `(values, probabilities)`.
    pub fn independent(factors: &[Vec<(f64, f64)>], g: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut atoms: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
        for f in factors {
            atoms = atoms
                .into_iter()
                .flat_map(|(x, w)| {
                    f.iter().map(move |&(v, p)| {
                        let mut x = x.clone();
                        x.push(v);
                        (x, w * p)
                    })
                })
                .collect();
        }
        Self::new(atoms, g)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs[0].len()
    }

    pub fn responses(&self) -> &[f64] {
        &self.ys
    }

    /// Exact `T(Y | X_I)` at every atom.
    pub fn conditional(&self, functional: &FunctionalSpec, subset: &Subset) -> Result<Vec<Prediction>> {
        subset.check(self.dim())?;
        let key = |x: &[f64]| -> Vec<u64> { subset.indices().iter().map(|&i| x[i].to_bits()).collect() };
        let mut groups: HashMap<Vec<u64>, Vec<(f64, f64)>> = HashMap::new();
        for (x, (&y, &w)) in self.xs.iter().zip(self.ys.iter().zip(&self.weights)) {
            groups.entry(key(x)).or_default().push((y, w));
        }
        let mut values: HashMap<Vec<u64>, Prediction> = HashMap::with_capacity(groups.len());
        for (k, atoms) in groups {
            values.insert(k, discrete_functional(functional, &atoms)?);
        }
        Ok(self.xs.iter().map(|x| values[&key(x)]).collect())
    }

    /// Conditional functional given a derived information variable `w(x)`.
    pub fn conditional_on(
        &self,
        functional: &FunctionalSpec,
        w: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Vec<Prediction>> {
        let key = |x: &[f64]| -> Vec<u64> { w(x).iter().map(|v| v.to_bits()).collect() };
        let mut groups: HashMap<Vec<u64>, Vec<(f64, f64)>> = HashMap::new();
        for (x, (&y, &wt)) in self.xs.iter().zip(self.ys.iter().zip(&self.weights)) {
            groups.entry(key(x)).or_default().push((y, wt));
        }
        let mut values = HashMap::with_capacity(groups.len());
        for (k, atoms) in groups {
            values.insert(k, discrete_functional(functional, &atoms)?);
        }
        Ok(self.xs.iter().map(|x| values[&key(x)]).collect())
    }

    /// `E[S(pred(X), Y)]`.
    pub fn expected_score(&self, score: &ScoreSpec, preds: &[Prediction]) -> Result<f64> {
        if preds.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: preds.len(),
            });
        }
        let terms = preds
            .iter()
            .zip(self.ys.iter().zip(&self.weights))
            .map(|(p, (&y, &w))| Ok(w * evaluate(score, p, y)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(neumaier(terms))
    }

    /// Exact `ξ_S(Y; X_I)`.
    pub fn sensitivity(&self, score: &ScoreSpec, subset: &Subset) -> Result<f64> {
        let f = score.target_functional();
        let preds = self.conditional(&f, subset)?;
        self.sensitivity_of(score, &preds)
    }

    /// Exact sensitivity of arbitrary conditional predictions.
    pub fn sensitivity_of(&self, score: &ScoreSpec, preds: &[Prediction]) -> Result<f64> {
        let f = score.target_functional();
        let atoms: Vec<(f64, f64)> = self.ys.iter().copied().zip(self.weights.iter().copied()).collect();
        let t = discrete_functional(&f, &atoms)?;
        let base = self.expected_score(score, &vec![t; self.len()])?;
        if base < MIN_UNCERTAINTY {
            return Err(Error::VanishingUncertainty { value: base });
        }
        Ok(1.0 - self.expected_score(score, preds)? / base)
    }
}
