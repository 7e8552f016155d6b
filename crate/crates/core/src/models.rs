//! Test models: aggregation maps, closed-form conditional functionals and
//! analytic sensitivity values.

use std::collections::BTreeSet;
use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::functionals::{FunctionalSpec, Prediction};
use crate::scores::{ConvexGenerator, IncreasingGenerator, ScoreSpec};
use crate::simulation::{CopulaSpec, MarginalSpec};
use crate::special::{gamma_quantile, std_normal_pdf, std_normal_quantile};

/// Set of conditioning factors, stored 0-based and written 1-based.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Subset(Vec<usize>);

impl Subset {
    /// From 0-based indices; duplicates are merged.
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        Subset(set.into_iter().collect())
    }

    /// From 1-based factor labels as printed, e.g. `[1, 3]` for `{X1, X3}`.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.contains(&0) {
            return Err(invalid("factor labels are 1-based"));
        }
        Ok(Self::new(labels.iter().map(|l| l - 1)))
    }

    pub fn empty() -> Self {
        Subset(Vec::new())
    }

    pub fn full(n: usize) -> Self {
        Subset((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn labels(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &Subset) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    pub fn union(&self, other: &Subset) -> Subset {
        Subset::new(self.0.iter().chain(other.0.iter()).copied())
    }

    /// Selects the subset's coordinates from a full factor row.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|&i| x[i]).collect()
    }

    /// Checks every index against the factor count `n`.
    pub fn check(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&i) if i >= n => Err(invalid(format!(
                "factor X{} does not exist; the model has {n} factors",
                i + 1
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.labels().iter().map(|l| l.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl FromStr for Subset {
    type Err = Error;

    /// Accepts `{1,3}`, `1,3`, `1 3` and `{}`.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('{').trim_end_matches('}');
        let labels = inner
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| invalid(format!("bad factor label '{t}' in '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Subset::from_labels(&labels)
    }
}

impl Serialize for Subset {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.labels().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Subset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let labels = Vec::<usize>::deserialize(d)?;
        Subset::from_labels(&labels).map_err(serde::de::Error::custom)
    }
}

type RuleFn = dyn Fn(&[f64]) -> Prediction + Send + Sync;

/// Closed-form conditional functional `x ↦ T(Y | X_I = x_I)`.
///
/// The rule receives a full factor row and reads only the coordinates in
/// its subset.
#[derive(Clone)]
pub struct ConditionalRule {
    pub functional: FunctionalSpec,
    pub subset: Subset,
    rule: Arc<RuleFn>,
}

impl ConditionalRule {
    pub fn new(
        functional: FunctionalSpec,
        subset: Subset,
        rule: impl Fn(&[f64]) -> Prediction + Send + Sync + 'static,
    ) -> Self {
        Self {
            functional,
            subset,
            rule: Arc::new(rule),
        }
    }

    /// Prediction for a full factor row.
    pub fn predict_row(&self, x: &[f64]) -> Prediction {
        (self.rule)(x)
    }

    /// Prediction from the subset coordinates `x_I` alone.
    pub fn predict(&self, x_sub: &[f64], n_factors: usize) -> Result<Prediction> {
        if x_sub.len() != self.subset.len() {
            return Err(Error::DimensionMismatch {
                expected: self.subset.len(),
                found: x_sub.len(),
            });
        }
        // Unused coordinates are NaN so an accidental read cannot go unnoticed.
        let mut row = vec![f64::NAN; n_factors];
        for (&i, &v) in self.subset.indices().iter().zip(x_sub) {
            row[i] = v;
        }
        Ok(self.predict_row(&row))
    }
}

impl fmt::Debug for ConditionalRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConditionalRule")
            .field("functional", &self.functional)
            .field("subset", &self.subset)
            .finish_non_exhaustive()
    }
}

fn default_p() -> f64 {
    0.8
}
fn default_c() -> f64 {
    10.0
}
fn default_shape() -> f64 {
    40.0
}
fn default_rate() -> f64 {
    2.0
}
fn default_a1() -> f64 {
    1.0
}
fn default_a2() -> f64 {
    2.0
}
fn default_deductible() -> f64 {
    380.0
}
fn default_limit() -> f64 {
    30.0
}
fn default_insurance_marginals() -> Vec<MarginalSpec> {
    vec![
        MarginalSpec::LogNormal { mu: 4.98, sigma: 0.23 },
        MarginalSpec::LogNormal { mu: 4.98, sigma: 0.23 },
        MarginalSpec::Gamma {
            shape: 100.0,
            rate: 1.0,
            offset: 0.0,
        },
        MarginalSpec::LogNormal { mu: -0.005, sigma: 0.1 },
    ]
}
fn default_insurance_copula() -> CopulaSpec {
    CopulaSpec {
        correlation: vec![
            vec![1.0, 0.3, 0.0, 0.8],
            vec![0.3, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.8, 0.0, 0.0, 1.0],
        ],
    }
}

/// A registered test model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `sin X1 + a1 sin^2 X2 + a2 X3^4 sin X1`, `Xi ~ U[-π, π]`.
    Ishigami {
        #[serde(default = "default_a1")]
        a1: f64,
        #[serde(default = "default_a2")]
        a2: f64,
    },
    /// `1{X1=0} X2 + 1{X1=1} X3` with `P(X1=0) = p`, `X2 ~ U[0, C]`,
    /// `X3 = C + Gamma(shape, rate)`.
    BernoulliMixture {
        #[serde(default = "default_p")]
        p: f64,
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_shape")]
        shape: f64,
        #[serde(default = "default_rate")]
        rate: f64,
    },
    /// `X1 + X2` for standard normals with correlation `rho`.
    NormalSum { rho: f64 },
    /// `exp(X1 + X2)` for independent standard normals; with `log_target`
    /// the response is `X1 + X2` instead.
    LognormalProduct {
        #[serde(default)]
        log_target: bool,
    },
    /// `X1 X2 + X3` with `X1 ~ U[1, 3]` and `X2, X3` standard normal.
    Multiplicative,
    /// `L - min((L - d)+, l) + X3 X4` with `L = X4 (X1 + X2)`.
    InsurancePortfolio {
        #[serde(default = "default_deductible")]
        deductible: f64,
        #[serde(default = "default_limit")]
        limit: f64,
        #[serde(default = "default_insurance_marginals")]
        marginals: Vec<MarginalSpec>,
        #[serde(default = "default_insurance_copula")]
        copula: CopulaSpec,
    },
    /// The Bernoulli mixture observed through `h(Y) = Y 1{Y > C}`, so that
    /// the mean of the response is `E[Y 1{Y > C}]`.
    TailMeanDemo {
        #[serde(default = "default_p")]
        p: f64,
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_shape")]
        shape: f64,
        #[serde(default = "default_rate")]
        rate: f64,
    },
}

/// Identifiers accepted in configuration files.
pub const MODEL_IDS: [&str; 7] = [
    "ishigami",
    "bernoulli-mixture",
    "normal-sum",
    "lognormal-product",
    "multiplicative",
    "insurance-portfolio",
    "tail-mean-demo",
];

impl ModelSpec {
    pub fn ishigami(a1: f64, a2: f64) -> Self {
        ModelSpec::Ishigami { a1, a2 }
    }

    pub fn bernoulli_mixture() -> Self {
        ModelSpec::BernoulliMixture {
            p: default_p(),
            c: default_c(),
            shape: default_shape(),
            rate: default_rate(),
        }
    }

    pub fn tail_mean_demo() -> Self {
        ModelSpec::TailMeanDemo {
            p: default_p(),
            c: default_c(),
            shape: default_shape(),
            rate: default_rate(),
        }
    }

    pub fn insurance_portfolio() -> Self {
        ModelSpec::InsurancePortfolio {
            deductible: default_deductible(),
            limit: default_limit(),
            marginals: default_insurance_marginals(),
            copula: default_insurance_copula(),
        }
    }

    /// Model with default parameters from its identifier.
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "ishigami" => Self::ishigami(default_a1(), default_a2()),
            "bernoulli-mixture" => Self::bernoulli_mixture(),
            "normal-sum" => ModelSpec::NormalSum { rho: 0.0 },
            "lognormal-product" => ModelSpec::LognormalProduct { log_target: false },
            "multiplicative" => ModelSpec::Multiplicative,
            "insurance-portfolio" => Self::insurance_portfolio(),
            "tail-mean-demo" => Self::tail_mean_demo(),
            other => return Err(Error::UnknownModel(other.to_string())),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::Ishigami { .. } => "ishigami",
            ModelSpec::BernoulliMixture { .. } => "bernoulli-mixture",
            ModelSpec::NormalSum { .. } => "normal-sum",
            ModelSpec::LognormalProduct { .. } => "lognormal-product",
            ModelSpec::Multiplicative => "multiplicative",
            ModelSpec::InsurancePortfolio { .. } => "insurance-portfolio",
            ModelSpec::TailMeanDemo { .. } => "tail-mean-demo",
        }
    }

    pub fn n_factors(&self) -> usize {
        match self {
            ModelSpec::NormalSum { .. } | ModelSpec::LognormalProduct { .. } => 2,
            ModelSpec::InsurancePortfolio { .. } => 4,
            _ => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be finite, got {v}")))
            }
        };
        match self {
            ModelSpec::Ishigami { a1, a2 } => {
                finite("a1", *a1)?;
                finite("a2", *a2)
            }
            ModelSpec::BernoulliMixture { p, c, shape, rate } | ModelSpec::TailMeanDemo { p, c, shape, rate } => {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(invalid(format!("p must lie in (0, 1), got {p}")));
                }
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(invalid(format!("C must be positive, got {c}")));
                }
                MarginalSpec::Gamma {
                    shape: *shape,
                    rate: *rate,
                    offset: *c,
                }
                .validate()
            }
            ModelSpec::NormalSum { rho } => {
                if *rho > -1.0 && *rho <= 1.0 {
                    Ok(())
                } else {
                    Err(invalid(format!("rho must lie in (-1, 1], got {rho}")))
                }
            }
            ModelSpec::LognormalProduct { .. } | ModelSpec::Multiplicative => Ok(()),
            ModelSpec::InsurancePortfolio {
                deductible,
                limit,
                marginals,
                copula,
            } => {
                if !(*deductible >= 0.0 && deductible.is_finite()) {
                    return Err(invalid(format!("deductible must be non-negative, got {deductible}")));
                }
                if !(*limit >= 0.0 && limit.is_finite()) {
                    return Err(invalid(format!("limit must be non-negative, got {limit}")));
                }
                if marginals.len() != 4 {
                    return Err(Error::DimensionMismatch {
                        expected: 4,
                        found: marginals.len(),
                    });
                }
                for m in marginals {
                    m.validate()?;
                }
                if copula.dim() != 4 {
                    return Err(Error::DimensionMismatch {
                        expected: 4,
                        found: copula.dim(),
                    });
                }
                copula.cholesky().map(|_| ())
            }
        }
    }

    pub fn marginals(&self) -> Vec<MarginalSpec> {
        let u = MarginalSpec::Uniform { lo: -PI, hi: PI };
        match self {
            ModelSpec::Ishigami { .. } => vec![u.clone(), u.clone(), u],
            ModelSpec::BernoulliMixture { p, c, shape, rate } | ModelSpec::TailMeanDemo { p, c, shape, rate } => vec![
                MarginalSpec::Bernoulli { p: 1.0 - p },
                MarginalSpec::Uniform { lo: 0.0, hi: *c },
                MarginalSpec::Gamma {
                    shape: *shape,
                    rate: *rate,
                    offset: *c,
                },
            ],
            ModelSpec::NormalSum { .. } | ModelSpec::LognormalProduct { .. } => {
                vec![MarginalSpec::StandardNormal, MarginalSpec::StandardNormal]
            }
            ModelSpec::Multiplicative => vec![
                MarginalSpec::Uniform { lo: 1.0, hi: 3.0 },
                MarginalSpec::StandardNormal,
                MarginalSpec::StandardNormal,
            ],
            ModelSpec::InsurancePortfolio { marginals, .. } => marginals.clone(),
        }
    }

    pub fn copula(&self) -> Option<CopulaSpec> {
        match self {
            ModelSpec::NormalSum { rho } if *rho != 0.0 => Some(CopulaSpec {
                correlation: vec![vec![1.0, *rho], vec![*rho, 1.0]],
            }),
            ModelSpec::InsurancePortfolio { copula, .. } => Some(copula.clone()),
            _ => None,
        }
    }

    /// Aggregation map on a full factor row; the caller guarantees the length.
    pub fn response(&self, x: &[f64]) -> f64 {
        match self {
            ModelSpec::Ishigami { a1, a2 } => {
                let s1 = x[0].sin();
                let s2 = x[1].sin();
                s1 + a1 * s2 * s2 + a2 * x[2].powi(4) * s1
            }
            ModelSpec::BernoulliMixture { .. } => mixture(x),
            ModelSpec::TailMeanDemo { c, .. } => {
                let y = mixture(x);
                if y > *c {
                    y
                } else {
                    0.0
                }
            }
            ModelSpec::NormalSum { .. } => x[0] + x[1],
            ModelSpec::LognormalProduct { log_target } => {
                if *log_target {
                    x[0] + x[1]
                } else {
                    (x[0] + x[1]).exp()
                }
            }
            ModelSpec::Multiplicative => x[0] * x[1] + x[2],
            ModelSpec::InsurancePortfolio { deductible, limit, .. } => {
                let l = x[3] * (x[0] + x[1]);
                l - (l - deductible).max(0.0).min(*limit) + x[2] * x[3]
            }
        }
    }

    /// Checked aggregation.
    pub fn aggregate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_factors() {
            return Err(Error::DimensionMismatch {
                expected: self.n_factors(),
                found: x.len(),
            });
        }
        Ok(self.response(x))
    }

    /// `(functional, subset)` pairs with a closed-form conditional, for
    /// level-free display; level-dependent functionals are listed with their
    /// kind only.
    pub fn registered(&self) -> Vec<(&'static str, Vec<Subset>)> {
        let n = self.n_factors();
        let all: Vec<Subset> = all_subsets(n);
        match self {
            ModelSpec::Ishigami { .. } | ModelSpec::Multiplicative | ModelSpec::TailMeanDemo { .. } => {
                let mut v = vec![("mean", all.clone())];
                v.push(("any", vec![Subset::full(n)]));
                v
            }
            ModelSpec::BernoulliMixture { .. } => vec![("mean", all.clone()), ("var", all)],
            ModelSpec::NormalSum { .. } | ModelSpec::LognormalProduct { .. } => {
                vec![("mean", all.clone()), ("var", all.clone()), ("var-es", all)]
            }
            ModelSpec::InsurancePortfolio { .. } => vec![("any", vec![Subset::full(n)])],
        }
    }

    fn unregistered(&self, functional: &FunctionalSpec, subset: &Subset) -> Error {
        let registered = self
            .registered()
            .iter()
            .map(|(f, subs)| {
                let s: Vec<String> = subs.iter().map(|s| s.to_string()).collect();
                format!("{f}: {}", s.join(" "))
            })
            .collect::<Vec<_>>()
            .join("; ");
        Error::UnregisteredConditional {
            model: self.id().to_string(),
            functional: functional.to_string(),
            subset: subset.to_string(),
            registered,
        }
    }

    /// The closed-form rule for `T(Y | X_I)`.
    pub fn conditional_rule(&self, functional: &FunctionalSpec, subset: &Subset) -> Result<ConditionalRule> {
        self.validate()?;
        functional.validate()?;
        let n = self.n_factors();
        subset.check(n)?;
        let f = *functional;
        let s = subset.clone();
        let make = |rule: Box<RuleFn>| Ok(ConditionalRule::new(f, s.clone(), move |x: &[f64]| rule(x)));

        // Full information: the conditional law is the point mass at Y.
        if subset.len() == n {
            let model = self.clone();
            return make(Box::new(move |x: &[f64]| f.point_mass(model.response(x))));
        }

        let lab = subset.labels();
        let lab = lab.as_slice();
        match (self, f) {
            (&ModelSpec::Ishigami { a1, a2 }, FunctionalSpec::Mean) => {
                let k = 1.0 + a2 * PI.powi(4) / 5.0;
                let rule: Box<RuleFn> = match lab {
                    [] => Box::new(move |_| Prediction::scalar(a1 / 2.0)),
                    [1] => Box::new(move |x| Prediction::scalar(x[0].sin() * k + a1 / 2.0)),
                    [2] => Box::new(move |x| Prediction::scalar(a1 * x[1].sin().powi(2))),
                    [3] => Box::new(move |_| Prediction::scalar(a1 / 2.0)),
                    [1, 2] => Box::new(move |x| Prediction::scalar(x[0].sin() * k + a1 * x[1].sin().powi(2))),
                    [1, 3] => Box::new(move |x| Prediction::scalar(x[0].sin() * (1.0 + a2 * x[2].powi(4)) + a1 / 2.0)),
                    [2, 3] => Box::new(move |x| Prediction::scalar(a1 * x[1].sin().powi(2))),
                    _ => unreachable!(),
                };
                make(rule)
            }
            (&ModelSpec::BernoulliMixture { p, c, shape, rate }, FunctionalSpec::Mean) => {
                let m2 = c / 2.0;
                let m3 = c + shape / rate;
                let rule: Box<RuleFn> = match lab {
                    [] => Box::new(move |_| Prediction::scalar(p * m2 + (1.0 - p) * m3)),
                    [1] => Box::new(move |x| Prediction::scalar(if x[0] == 0.0 { m2 } else { m3 })),
                    [2] => Box::new(move |x| Prediction::scalar(p * x[1] + (1.0 - p) * m3)),
                    [3] => Box::new(move |x| Prediction::scalar(p * m2 + (1.0 - p) * x[2])),
                    [1, 2] => Box::new(move |x| Prediction::scalar(if x[0] == 0.0 { x[1] } else { m3 })),
                    [1, 3] => Box::new(move |x| Prediction::scalar(if x[0] == 0.0 { m2 } else { x[2] })),
                    [2, 3] => Box::new(move |x| Prediction::scalar(p * x[1] + (1.0 - p) * x[2])),
                    _ => unreachable!(),
                };
                make(rule)
            }
            (&ModelSpec::BernoulliMixture { p, c, shape, rate }, FunctionalSpec::Var { alpha }) => {
                if alpha <= p {
                    return Err(invalid(format!(
                        "the closed-form VaR rules require alpha > p, got alpha = {alpha}, p = {p}"
                    )));
                }
                let q3 = |level: f64| c + gamma_quantile(shape, level) / rate;
                let var_y = q3((alpha - p) / (1.0 - p));
                let var2 = alpha * c;
                let var3 = q3(alpha);
                let rule: Box<RuleFn> = match lab {
                    [] | [2] => Box::new(move |_| Prediction::scalar(var_y)),
                    [1] => Box::new(move |x| Prediction::scalar(if x[0] == 0.0 { var2 } else { var3 })),
                    [3] | [2, 3] => Box::new(move |x| Prediction::scalar(x[2])),
                    [1, 2] => Box::new(move |x| Prediction::scalar(if x[0] == 0.0 { x[1] } else { var3 })),
                    [1, 3] => Box::new(move |x| Prediction::scalar(if x[0] == 0.0 { var2 } else { x[2] })),
                    _ => unreachable!(),
                };
                make(rule)
            }
            (&ModelSpec::TailMeanDemo { p, shape, rate, c }, FunctionalSpec::Mean) => {
                let m3 = c + shape / rate;
                let rule: Box<RuleFn> = match lab {
                    [] | [2] => Box::new(move |_| Prediction::scalar((1.0 - p) * m3)),
                    [1] | [1, 2] => Box::new(move |x| Prediction::scalar(if x[0] == 1.0 { m3 } else { 0.0 })),
                    [3] | [2, 3] => Box::new(move |x| Prediction::scalar((1.0 - p) * x[2])),
                    [1, 3] => Box::new(move |x| Prediction::scalar(if x[0] == 1.0 { x[2] } else { 0.0 })),
                    _ => unreachable!(),
                };
                make(rule)
            }
            (&ModelSpec::NormalSum { rho }, f) => {
                // Y | X_i ~ N((1 + rho) x_i, 1 - rho^2); Y ~ N(0, 2 + 2 rho).
                let (slope, sd) = match lab {
                    [] => (0.0, (2.0 + 2.0 * rho).sqrt()),
                    _ => (1.0 + rho, (1.0 - rho * rho).max(0.0).sqrt()),
                };
                let i = subset.indices().first().copied();
                gaussian_rule(f, s.clone(), sd, move |x| i.map_or(0.0, |i| slope * x[i]), false)
                    .ok_or_else(|| self.unregistered(functional, subset))
            }
            (&ModelSpec::LognormalProduct { log_target }, f) => {
                // log Y | X_i ~ N(x_i, 1); log Y ~ N(0, 2).
                let sd = if subset.is_empty() { 2f64.sqrt() } else { 1.0 };
                let i = subset.indices().first().copied();
                gaussian_rule(f, s.clone(), sd, move |x| i.map_or(0.0, |i| x[i]), !log_target)
                    .ok_or_else(|| self.unregistered(functional, subset))
            }
            (ModelSpec::Multiplicative, FunctionalSpec::Mean) => {
                // E[X1] = 2, E[X2] = E[X3] = 0.
                let rule: Box<RuleFn> = match lab {
                    [] | [1] => Box::new(|_| Prediction::scalar(0.0)),
                    [2] => Box::new(|x| Prediction::scalar(2.0 * x[1])),
                    [3] | [1, 3] => Box::new(|x| Prediction::scalar(x[2])),
                    [1, 2] => Box::new(|x| Prediction::scalar(x[0] * x[1])),
                    [2, 3] => Box::new(|x| Prediction::scalar(2.0 * x[1] + x[2])),
                    _ => unreachable!(),
                };
                make(rule)
            }
            _ => Err(self.unregistered(functional, subset)),
        }
    }

    /// `T(Y | X_I = x_I)` from the subset coordinates.
    pub fn conditional_functional(
        &self,
        functional: &FunctionalSpec,
        subset: &Subset,
        x_sub: &[f64],
    ) -> Result<Prediction> {
        self.conditional_rule(functional, subset)?
            .predict(x_sub, self.n_factors())
    }

    /// Registered closed-form sensitivity, where one is known.
    pub fn analytic_sensitivity(&self, functional: &FunctionalSpec, score: &ScoreSpec, subset: &Subset) -> Option<f64> {
        let n = self.n_factors();
        if subset.check(n).is_err() || score.target_functional() != *functional {
            return None;
        }
        if score.is_strictly_consistent() {
            if subset.is_empty() {
                return Some(0.0);
            }
            if subset.len() == n {
                return Some(1.0);
            }
        }
        let squared = is_squared(score);
        let lab = subset.labels();
        let lab = lab.as_slice();
        match (self, functional) {
            (&ModelSpec::NormalSum { rho }, FunctionalSpec::Mean) if squared => Some((1.0 + rho) / 2.0),
            (&ModelSpec::NormalSum { rho }, FunctionalSpec::Var { .. }) if is_pinball(score) => {
                // Expected pinball loss at the true quantile scales with the standard deviation.
                Some(1.0 - ((1.0 - rho) / 2.0).sqrt())
            }
            (&ModelSpec::LognormalProduct { log_target: false }, FunctionalSpec::Mean) if squared => {
                Some(1.0 / (E + 1.0))
            }
            (&ModelSpec::LognormalProduct { log_target: true }, FunctionalSpec::Mean) if squared => Some(0.5),
            (ModelSpec::Multiplicative, FunctionalSpec::Mean) => {
                if lab == [1] && score.is_strictly_consistent() {
                    return Some(0.0);
                }
                if !squared {
                    return None;
                }
                // Var Y = E[X1^2] + 1 = 16/3.
                let v = 16.0 / 3.0;
                Some(match lab {
                    [2] => 4.0 / v,
                    [3] | [1, 3] => 1.0 / v,
                    [1, 2] => (13.0 / 3.0) / v,
                    [2, 3] => 5.0 / v,
                    _ => return None,
                })
            }
            (&ModelSpec::Ishigami { a1, a2 }, FunctionalSpec::Mean) if squared => {
                let (v1, v2, v) = ishigami_variances(a1, a2);
                Some(match lab {
                    [1] => v1 / v,
                    [2] | [2, 3] => v2 / v,
                    [3] => 0.0,
                    [1, 2] => (v1 + v2) / v,
                    [1, 3] => 1.0 - v2 / v,
                    _ => return None,
                })
            }
            (&ModelSpec::BernoulliMixture { p, c, shape, rate }, FunctionalSpec::Mean) if squared => {
                let (m2, v2) = (c / 2.0, c * c / 12.0);
                let (m3, v3) = (c + shape / rate, shape / (rate * rate));
                let between = p * (1.0 - p) * (m2 - m3).powi(2);
                let v = p * v2 + (1.0 - p) * v3 + between;
                Some(match lab {
                    [1] => between / v,
                    [2] => p * p * v2 / v,
                    [3] => (1.0 - p).powi(2) * v3 / v,
                    [1, 2] => (between + p * v2) / v,
                    [1, 3] => (between + (1.0 - p) * v3) / v,
                    [2, 3] => (p * p * v2 + (1.0 - p).powi(2) * v3) / v,
                    _ => return None,
                })
            }
            (ModelSpec::BernoulliMixture { .. }, FunctionalSpec::Var { .. }) if score.is_strictly_consistent() => {
                match lab {
                    [2] => Some(0.0),
                    _ => None,
                }
            }
            (ModelSpec::TailMeanDemo { .. }, FunctionalSpec::Mean)
                if lab == [1, 3] && score.is_strictly_consistent() =>
            {
                Some(1.0)
            }
            _ => None,
        }
    }
}

fn mixture(x: &[f64]) -> f64 {
    if x[0] == 0.0 {
        x[1]
    } else {
        x[2]
    }
}

fn is_squared(score: &ScoreSpec) -> bool {
    matches!(
        score,
        ScoreSpec::Bregman {
            phi: ConvexGenerator::Square
        } | ScoreSpec::Patton { b: 2.0 }
            | ScoreSpec::Bregman {
                phi: ConvexGenerator::Patton { b: 2.0 }
            }
    )
}

fn is_pinball(score: &ScoreSpec) -> bool {
    matches!(
        score,
        ScoreSpec::Gpl {
            g: IncreasingGenerator::Identity,
            ..
        } | ScoreSpec::VarHomogeneous { b: 1.0, .. }
    )
}

/// `(V1, V2, Var Y)` of the Ishigami function: first-order variances of X1 and X2
/// and the total variance.
pub fn ishigami_variances(a1: f64, a2: f64) -> (f64, f64, f64) {
    let pi4 = PI.powi(4);
    let v1 = 0.5 * (1.0 + a2 * pi4 / 5.0).powi(2);
    let v2 = a1 * a1 / 8.0;
    let v = a1 * a1 / 8.0 + a2 * pi4 / 5.0 + a2 * a2 * pi4 * pi4 / 18.0 + 0.5;
    (v1, v2, v)
}

/// Rules for a conditional law `N(m(x), sd^2)`, or its exponential when
/// `exponentiate` is set.
fn gaussian_rule(
    f: FunctionalSpec,
    subset: Subset,
    sd: f64,
    loc: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    exponentiate: bool,
) -> Option<ConditionalRule> {
    match (f, exponentiate) {
        (FunctionalSpec::Mean, false) => Some(ConditionalRule::new(f, subset, move |x| Prediction::scalar(loc(x)))),
        (FunctionalSpec::Mean, true) => {
            let shift = 0.5 * sd * sd;
            Some(ConditionalRule::new(f, subset, move |x| {
                Prediction::scalar((loc(x) + shift).exp())
            }))
        }
        (FunctionalSpec::Var { alpha }, exp) => {
            let q = sd * std_normal_quantile(alpha);
            Some(ConditionalRule::new(f, subset, move |x| {
                let v = loc(x) + q;
                Prediction::scalar(if exp { v.exp() } else { v })
            }))
        }
        (FunctionalSpec::VarEs { alpha }, false) => {
            let z = std_normal_quantile(alpha);
            let q = sd * z;
            let es = sd * std_normal_pdf(z) / (1.0 - alpha);
            Some(ConditionalRule::new(f, subset, move |x| {
                let m = loc(x);
                Prediction::pair(m + q, m + es)
            }))
        }
        (FunctionalSpec::VarEs { alpha }, true) => {
            // ES of a lognormal: e^{m + sd^2/2} Φ(sd - z_α) / (1 - α).
            let z = std_normal_quantile(alpha);
            let q = sd * z;
            let factor = (0.5 * sd * sd).exp() * crate::special::std_normal_cdf(sd - z) / (1.0 - alpha);
            Some(ConditionalRule::new(f, subset, move |x| {
                let m = loc(x);
                Prediction::pair((m + q).exp(), m.exp() * factor)
            }))
        }
        _ => None,
    }
}

/// Every subset of `{0, .., n-1}` ordered by size, then lexicographically.
pub fn all_subsets(n: usize) -> Vec<Subset> {
    let mut v: Vec<Subset> = (0u32..(1 << n))
        .map(|mask| Subset::new((0..n).filter(|i| mask & (1 << i) != 0)))
        .collect();
    v.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    v
}

/// Subsets of size one and two, in the row-major order of a sensitivity table.
pub fn table_subsets(n: usize) -> Vec<Subset> {
    let mut v = Vec::new();
    for i in 0..n {
        for j in i..n {
            v.push(Subset::new([i, j]));
        }
    }
    v
}
