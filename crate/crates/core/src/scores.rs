//! Scoring functions for every functional in scope.
//!
//! Generators come from a closed registry so that domains and derivatives
//! are always known in closed form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functionals::{FunctionalSpec, Prediction};

/// Convex generator `φ` of Bregman-type scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConvexGenerator {
    /// `t^2`
    Square,
    /// `t^b / (b (b - 1))`, `b ∉ {0, 1}`; positive arguments unless `b = 2`.
    Patton { b: f64 },
    /// `-log t`, `t > 0`
    NegLog,
    /// `t log t`, `t > 0`
    NegEntropy,
    /// `d1 t^b 1{t>0} + d2 |t|^b 1{t<0}`, `b > 1`
    PiecewisePower { b: f64, d1: f64, d2: f64 },
}

impl ConvexGenerator {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ConvexGenerator::Patton { b } => {
                if !b.is_finite() || b == 0.0 || b == 1.0 {
                    return Err(invalid(format!("patton generator requires b ∉ {{0, 1}}, got {b}")));
                }
            }
            ConvexGenerator::PiecewisePower { b, d1, d2 } => {
                if !(b > 1.0 && b.is_finite()) {
                    return Err(invalid(format!("piecewise-power requires b > 1, got {b}")));
                }
                if !(d1 > 0.0 && d2 > 0.0) {
                    return Err(invalid(format!("piecewise-power requires d1, d2 > 0, got {d1}, {d2}")));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn needs_positive(&self) -> bool {
        match *self {
            ConvexGenerator::Square | ConvexGenerator::PiecewisePower { .. } => false,
            ConvexGenerator::Patton { b } => b != 2.0,
            ConvexGenerator::NegLog | ConvexGenerator::NegEntropy => true,
        }
    }

    fn check(&self, t: f64, what: &str) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::Domain(format!("{what} = {t} is not finite")));
        }
        if self.needs_positive() && t <= 0.0 {
            return Err(Error::Domain(format!("{self} requires {what} > 0, got {t}")));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            ConvexGenerator::Square => t * t,
            ConvexGenerator::Patton { b: 2.0 } => 0.5 * t * t,
            ConvexGenerator::Patton { b } => t.powf(b) / (b * (b - 1.0)),
            ConvexGenerator::NegLog => -t.ln(),
            ConvexGenerator::NegEntropy => t * t.ln(),
            ConvexGenerator::PiecewisePower { b, d1, d2 } => {
                if t > 0.0 {
                    d1 * t.powf(b)
                } else if t < 0.0 {
                    d2 * (-t).powf(b)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            ConvexGenerator::Square => 2.0 * t,
            ConvexGenerator::Patton { b: 2.0 } => t,
            ConvexGenerator::Patton { b } => t.powf(b - 1.0) / (b - 1.0),
            ConvexGenerator::NegLog => -1.0 / t,
            ConvexGenerator::NegEntropy => t.ln() + 1.0,
            ConvexGenerator::PiecewisePower { b, d1, d2 } => {
                if t > 0.0 {
                    d1 * b * t.powf(b - 1.0)
                } else if t < 0.0 {
                    -d2 * b * (-t).powf(b - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        match *self {
            ConvexGenerator::Square => 2.0,
            ConvexGenerator::Patton { b: 2.0 } => 1.0,
            ConvexGenerator::Patton { b } => t.powf(b - 2.0),
            ConvexGenerator::NegLog => 1.0 / (t * t),
            ConvexGenerator::NegEntropy => 1.0 / t,
            ConvexGenerator::PiecewisePower { b, d1, d2 } => {
                let d = if t >= 0.0 { d1 } else { d2 };
                d * b * (b - 1.0) * t.abs().powf(b - 2.0)
            }
        }
    }

    /// `φ(y) - φ(z) + φ'(z)(z - y)`
    fn bregman(&self, z: f64, y: f64) -> Result<f64> {
        self.check(z, "z")?;
        self.check(y, "y")?;
        Ok(self.value(y) - self.value(z) + self.derivative(z) * (z - y))
    }
}

impl fmt::Display for ConvexGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvexGenerator::Square => write!(f, "square"),
            ConvexGenerator::Patton { b } => write!(f, "patton({b})"),
            ConvexGenerator::NegLog => write!(f, "neg-log"),
            ConvexGenerator::NegEntropy => write!(f, "neg-entropy"),
            ConvexGenerator::PiecewisePower { b, d1, d2 } => write!(f, "piecewise-power({b}, {d1}, {d2})"),
        }
    }
}

/// Non-decreasing generator `g` of piecewise linear scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IncreasingGenerator {
    Identity,
    /// The constant 0; only meaningful as the VaR part of joint (VaR, ES) scores.
    Zero,
    /// b-homogeneous: `t^b 1{t>0} - d |t|^b 1{t<0}` for `b > 0`, `log t` for
    /// `b = 0`, `-t^b` for `b < 0` (the last two on `t > 0`).
    Power {
        b: f64,
        #[serde(default = "one")]
        d: f64,
    },
    /// `log t`, `t > 0`
    Log,
    /// `-t^b` with `b < 0`, `t > 0`
    NegPower {
        b: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl IncreasingGenerator {
    pub fn validate(&self) -> Result<()> {
        match *self {
            IncreasingGenerator::Power { b, d } => {
                if !b.is_finite() {
                    return Err(invalid(format!("power generator requires finite b, got {b}")));
                }
                if !(d > 0.0 && d.is_finite()) {
                    return Err(invalid(format!("power generator requires d > 0, got {d}")));
                }
            }
            IncreasingGenerator::NegPower { b } if !(b < 0.0) => {
                return Err(invalid(format!("neg-power requires b < 0, got {b}")));
            }
            _ => {}
        }
        Ok(())
    }

    fn needs_positive(&self) -> bool {
        match *self {
            IncreasingGenerator::Identity | IncreasingGenerator::Zero => false,
            IncreasingGenerator::Power { b, .. } => b <= 0.0,
            IncreasingGenerator::Log | IncreasingGenerator::NegPower { .. } => true,
        }
    }

    pub fn is_strict(&self) -> bool {
        !matches!(self, IncreasingGenerator::Zero)
    }

    fn check(&self, t: f64, what: &str) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::Domain(format!("{what} = {t} is not finite")));
        }
        if self.needs_positive() && t <= 0.0 {
            return Err(Error::Domain(format!("{self} requires {what} > 0, got {t}")));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            IncreasingGenerator::Identity => t,
            IncreasingGenerator::Zero => 0.0,
            IncreasingGenerator::Power { b, d } => {
                if b > 0.0 {
                    if t > 0.0 {
                        t.powf(b)
                    } else if t < 0.0 {
                        -d * (-t).powf(b)
                    } else {
                        0.0
                    }
                } else if b == 0.0 {
                    t.ln()
                } else {
                    -t.powf(b)
                }
            }
            IncreasingGenerator::Log => t.ln(),
            IncreasingGenerator::NegPower { b } => -t.powf(b),
        }
    }

    /// `g(z) - g(y)`, evaluated without cancellation for power-type
    /// generators when `z` and `y` are close.
    pub fn diff(&self, z: f64, y: f64) -> f64 {
        let rel = |b: f64| y.powf(b) * (b * (z / y).ln()).exp_m1();
        match *self {
            IncreasingGenerator::Identity => z - y,
            IncreasingGenerator::Zero => 0.0,
            IncreasingGenerator::Power { b, .. } if b > 0.0 && z > 0.0 && y > 0.0 => rel(b),
            IncreasingGenerator::Power { b, .. } if b > 0.0 => self.value(z) - self.value(y),
            IncreasingGenerator::Power { b: 0.0, .. } | IncreasingGenerator::Log => (z / y).ln(),
            IncreasingGenerator::Power { b, .. } | IncreasingGenerator::NegPower { b } => -rel(b),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            IncreasingGenerator::Identity => 1.0,
            IncreasingGenerator::Zero => 0.0,
            IncreasingGenerator::Power { b, d } => {
                if b > 0.0 {
                    if t > 0.0 {
                        b * t.powf(b - 1.0)
                    } else if t < 0.0 {
                        d * b * (-t).powf(b - 1.0)
                    } else if b == 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else if b == 0.0 {
                    1.0 / t
                } else {
                    -b * t.powf(b - 1.0)
                }
            }
            IncreasingGenerator::Log => 1.0 / t,
            IncreasingGenerator::NegPower { b } => -b * t.powf(b - 1.0),
        }
    }
}

impl fmt::Display for IncreasingGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IncreasingGenerator::Identity => write!(f, "identity"),
            IncreasingGenerator::Zero => write!(f, "zero"),
            IncreasingGenerator::Power { b, d } => write!(f, "power({b}, {d})"),
            IncreasingGenerator::Log => write!(f, "log"),
            IncreasingGenerator::NegPower { b } => write!(f, "neg-power({b})"),
        }
    }
}

/// A scoring function family with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScoreSpec {
    Bregman {
        phi: ConvexGenerator,
    },
    Gpl {
        g: IncreasingGenerator,
        alpha: f64,
    },
    Patton {
        b: f64,
    },
    VarHomogeneous {
        b: f64,
        #[serde(default = "one")]
        d: f64,
        alpha: f64,
    },
    ElementaryMean {
        theta: f64,
    },
    ElementaryVar {
        theta: f64,
        alpha: f64,
    },
    JointVarEs {
        g: IncreasingGenerator,
        phi: ConvexGenerator,
        alpha: f64,
    },
    ZeroHomVarEs {
        alpha: f64,
    },
    Expectile {
        tau: f64,
        phi: ConvexGenerator,
    },
    Entropic {
        gamma: f64,
        phi: ConvexGenerator,
    },
    /// Separable `Φ(u, v) = φ1(u) + φ2(v)` applied to `(z1, z2 + z1^2)`.
    MeanVariance {
        phi1: ConvexGenerator,
        phi2: ConvexGenerator,
    },
    ZeroOne,
    RvarTriplet {
        g1: IncreasingGenerator,
        g2: IncreasingGenerator,
        phi: ConvexGenerator,
        alpha: f64,
        beta: f64,
    },
}

fn check_level(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in (0, 1), got {v}")))
    }
}

impl ScoreSpec {
    /// The pinball loss `(1{y<=z} - α)(z - y)`.
    pub fn pinball(alpha: f64) -> Self {
        ScoreSpec::Gpl {
            g: IncreasingGenerator::Identity,
            alpha,
        }
    }

    /// The squared loss `(z - y)^2`.
    pub fn squared() -> Self {
        ScoreSpec::Bregman {
            phi: ConvexGenerator::Square,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScoreSpec::Bregman { phi } => phi.validate(),
            ScoreSpec::Gpl { g, alpha } => {
                g.validate()?;
                check_level("alpha", alpha)
            }
            ScoreSpec::Patton { b } => {
                if b.is_finite() {
                    Ok(())
                } else {
                    Err(invalid(format!("patton b must be finite, got {b}")))
                }
            }
            ScoreSpec::VarHomogeneous { b, d, alpha } => {
                IncreasingGenerator::Power { b, d }.validate()?;
                check_level("alpha", alpha)
            }
            ScoreSpec::ElementaryMean { theta } => {
                if theta.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("theta must be finite"))
                }
            }
            ScoreSpec::ElementaryVar { theta, alpha } => {
                if !theta.is_finite() {
                    return Err(invalid("theta must be finite"));
                }
                check_level("alpha", alpha)
            }
            ScoreSpec::JointVarEs { g, phi, alpha } => {
                g.validate()?;
                phi.validate()?;
                check_level("alpha", alpha)
            }
            ScoreSpec::ZeroHomVarEs { alpha } => check_level("alpha", alpha),
            ScoreSpec::Expectile { tau, phi } => {
                phi.validate()?;
                check_level("tau", tau)
            }
            ScoreSpec::Entropic { gamma, phi } => {
                phi.validate()?;
                if gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(invalid(format!("gamma must be positive, got {gamma}")))
                }
            }
            ScoreSpec::MeanVariance { phi1, phi2 } => {
                phi1.validate()?;
                phi2.validate()
            }
            ScoreSpec::ZeroOne => Ok(()),
            ScoreSpec::RvarTriplet {
                g1,
                g2,
                phi,
                alpha,
                beta,
            } => {
                g1.validate()?;
                g2.validate()?;
                phi.validate()?;
                check_level("alpha", alpha)?;
                check_level("beta", beta)?;
                if alpha < beta {
                    Ok(())
                } else {
                    Err(invalid(format!("rvar requires alpha < beta, got {alpha} >= {beta}")))
                }
            }
        }
    }

    /// The functional for which this score is consistent.
    pub fn target_functional(&self) -> FunctionalSpec {
        match *self {
            ScoreSpec::Bregman { .. } | ScoreSpec::Patton { .. } | ScoreSpec::ElementaryMean { .. } => {
                FunctionalSpec::Mean
            }
            ScoreSpec::Gpl { alpha, .. }
            | ScoreSpec::VarHomogeneous { alpha, .. }
            | ScoreSpec::ElementaryVar { alpha, .. } => FunctionalSpec::Var { alpha },
            ScoreSpec::JointVarEs { alpha, .. } | ScoreSpec::ZeroHomVarEs { alpha } => FunctionalSpec::VarEs { alpha },
            ScoreSpec::Expectile { tau, .. } => FunctionalSpec::Expectile { tau },
            ScoreSpec::Entropic { gamma, .. } => FunctionalSpec::Entropic { gamma },
            ScoreSpec::MeanVariance { .. } => FunctionalSpec::MeanVariance,
            ScoreSpec::ZeroOne => FunctionalSpec::Mode,
            ScoreSpec::RvarTriplet { alpha, beta, .. } => FunctionalSpec::RvarTriplet { alpha, beta },
        }
    }

    /// Whether the expected score has a unique minimizer at the functional.
    pub fn is_strictly_consistent(&self) -> bool {
        match *self {
            ScoreSpec::ElementaryMean { .. } | ScoreSpec::ElementaryVar { .. } => false,
            ScoreSpec::Gpl { g, .. } => g.is_strict(),
            _ => true,
        }
    }

    /// Degree of positive homogeneity, where the family has one.
    pub fn homogeneity_degree(&self) -> Option<f64> {
        match *self {
            ScoreSpec::Patton { b } | ScoreSpec::VarHomogeneous { b, .. } => Some(b),
            ScoreSpec::ZeroHomVarEs { .. } => Some(0.0),
            ScoreSpec::Bregman {
                phi: ConvexGenerator::Square,
            } => Some(2.0),
            ScoreSpec::Gpl {
                g: IncreasingGenerator::Identity,
                ..
            } => Some(1.0),
            _ => None,
        }
    }
}

impl fmt::Display for ScoreSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreSpec::Bregman { phi } => write!(f, "bregman({phi})"),
            ScoreSpec::Gpl { g, alpha } => write!(f, "gpl({g}, {alpha})"),
            ScoreSpec::Patton { b } => write!(f, "patton({b})"),
            ScoreSpec::VarHomogeneous { b, d, alpha } => write!(f, "var-homogeneous({b}, {d}, {alpha})"),
            ScoreSpec::ElementaryMean { theta } => write!(f, "elementary-mean({theta})"),
            ScoreSpec::ElementaryVar { theta, alpha } => write!(f, "elementary-var({theta}, {alpha})"),
            ScoreSpec::JointVarEs { g, phi, alpha } => write!(f, "joint-var-es({g}, {phi}, {alpha})"),
            ScoreSpec::ZeroHomVarEs { alpha } => write!(f, "zero-hom-var-es({alpha})"),
            ScoreSpec::Expectile { tau, phi } => write!(f, "expectile({tau}, {phi})"),
            ScoreSpec::Entropic { gamma, phi } => write!(f, "entropic({gamma}, {phi})"),
            ScoreSpec::MeanVariance { phi1, phi2 } => write!(f, "mean-variance({phi1}, {phi2})"),
            ScoreSpec::ZeroOne => write!(f, "zero-one"),
            ScoreSpec::RvarTriplet {
                g1,
                g2,
                phi,
                alpha,
                beta,
            } => write!(f, "rvar-triplet({g1}, {g2}, {phi}, {alpha}, {beta})"),
        }
    }
}

#[inline]
fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn check_dim(spec: &ScoreSpec, pred: &Prediction) -> Result<()> {
    let expected = spec.target_functional().dim();
    if pred.dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: pred.dim(),
        });
    }
    for &v in pred.as_slice() {
        if !v.is_finite() {
            return Err(Error::Domain(format!("prediction component {v} is not finite")));
        }
    }
    Ok(())
}

fn positive(v: f64, what: &str, family: &str) -> Result<()> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{family} requires {what} > 0, got {what} = {v}")))
    }
}

/// `-(S_β(z2, y) - S_α(z1, y)) / (β - α)` with `S_γ(z, y) = (1{y<=z} - γ) z - 1{y<=z} y`,
/// written as `z1` minus terms that vanish exactly at `z1 = z2 = y`.
fn range_mean(alpha: f64, beta: f64, z1: f64, z2: f64, y: f64) -> f64 {
    let (i1, i2) = (ind(y <= z1), ind(y <= z2));
    z1 - ((i2 - beta) * (z2 - z1) + (i2 - i1) * (z1 - y)) / (beta - alpha)
}

/// Score `S(pred, y)`.
///
/// Values are exact evaluations of each family's closed form; rounding
/// residue below zero is clipped so that every score is non-negative.
pub fn evaluate(spec: &ScoreSpec, pred: &Prediction, y: f64) -> Result<f64> {
    check_dim(spec, pred)?;
    if !y.is_finite() {
        return Err(Error::Domain(format!("observation y = {y} is not finite")));
    }
    let z = pred.get(0);
    let s = match *spec {
        ScoreSpec::Bregman { phi } => phi.bregman(z, y)?,
        ScoreSpec::Gpl { g, alpha } => gpl(g, alpha, z, y)?,
        ScoreSpec::Patton { b } => patton(b, z, y)?,
        ScoreSpec::VarHomogeneous { b, d, alpha } => gpl(IncreasingGenerator::Power { b, d }, alpha, z, y)?,
        ScoreSpec::ElementaryMean { theta } => {
            if theta >= z.min(y) && theta < z.max(y) {
                (y - theta).abs()
            } else {
                0.0
            }
        }
        ScoreSpec::ElementaryVar { theta, alpha } => {
            if y <= theta && theta < z {
                1.0 - alpha
            } else if z <= theta && theta < y {
                alpha
            } else {
                0.0
            }
        }
        ScoreSpec::JointVarEs { g, phi, alpha } => {
            let z2 = pred.get(1);
            g.check(z, "z1")?;
            g.check(y, "y")?;
            phi.check(z2, "z2")?;
            phi.check(y, "y")?;
            let slope = g.derivative(z) - phi.derivative(z2) / (1.0 - alpha);
            if slope < 0.0 {
                return Err(Error::Domain(format!(
                    "z1 -> g(z1) - z1 phi'(z2)/(1-alpha) must be increasing; slope {slope:.3e} at z1 = {z}, z2 = {z2}"
                )));
            }
            let i = ind(y <= z);
            (i - alpha) * g.diff(z, y) + phi.derivative(z2) * (z2 - tail_mean(alpha, z, y)) - phi.value(z2)
                + phi.value(y)
        }
        ScoreSpec::ZeroHomVarEs { alpha } => {
            let z2 = pred.get(1);
            positive(z2, "z2", "zero-hom-var-es")?;
            positive(y, "y", "zero-hom-var-es")?;
            tail_mean(alpha, z, y) / z2 - 1.0 + (z2 / y).ln()
        }
        ScoreSpec::Expectile { tau, phi } => (ind(y <= z) - tau).abs() * phi.bregman(z, y)?,
        ScoreSpec::Entropic { gamma, phi } => {
            let ez = (gamma * z).exp();
            let ey = (gamma * y).exp();
            if !ez.is_finite() || !ey.is_finite() {
                return Err(Error::EntropicOverflow { gamma });
            }
            phi.bregman(ez, ey)?
        }
        ScoreSpec::MeanVariance { phi1, phi2 } => {
            let z2 = pred.get(1);
            if z2 < 0.0 {
                return Err(Error::Domain(format!("mean-variance requires z2 >= 0, got {z2}")));
            }
            let s = z2 + z * z;
            phi1.bregman(z, y)? + phi2.bregman(s, y * y)?
        }
        ScoreSpec::ZeroOne => ind(z != y),
        ScoreSpec::RvarTriplet {
            g1,
            g2,
            phi,
            alpha,
            beta,
        } => {
            let (z1, z2, z3) = (z, pred.get(1), pred.get(2));
            g1.check(z1, "z1")?;
            g2.check(z2, "z2")?;
            g1.check(y, "y")?;
            g2.check(y, "y")?;
            phi.check(z3, "z3")?;
            phi.check(y, "y")?;
            let width = beta - alpha;
            let d3 = phi.derivative(z3);
            if g1.derivative(z1) - d3 / width < 0.0 || g2.derivative(z2) + d3 / width < 0.0 {
                return Err(Error::Domain(format!(
                    "rvar monotonicity condition fails at z = ({z1}, {z2}, {z3})"
                )));
            }
            (ind(y <= z1) - alpha) * g1.diff(z1, y)
                + (ind(y <= z2) - beta) * g2.diff(z2, y)
                + d3 * (z3 - range_mean(alpha, beta, z1, z2, y))
                - phi.value(z3)
                + phi.value(y)
        }
    };
    Ok(s.max(0.0))
}

/// `(z1 (1{y<=z1} - α) + y 1{y>z1}) / (1 - α)`, arranged so that the
/// `y <= z1` branch returns `z1` without rounding.
fn tail_mean(alpha: f64, z1: f64, y: f64) -> f64 {
    if y <= z1 {
        z1
    } else {
        (y - alpha * z1) / (1.0 - alpha)
    }
}

fn gpl(g: IncreasingGenerator, alpha: f64, z: f64, y: f64) -> Result<f64> {
    g.check(z, "z")?;
    g.check(y, "y")?;
    Ok((ind(y <= z) - alpha) * g.diff(z, y))
}

fn patton(b: f64, z: f64, y: f64) -> Result<f64> {
    if b == 2.0 {
        return Ok(0.5 * (y - z) * (y - z));
    }
    positive(z, "z", "patton")?;
    positive(y, "y", "patton")?;
    let r = y / z;
    Ok(if b == 0.0 {
        r - r.ln() - 1.0
    } else if b == 1.0 {
        y * r.ln() - (y - z)
    } else {
        z.powf(b) * patton_kernel(b, r.ln())
    })
}

/// `(expm1(bL) - b expm1(L)) / (b (b - 1))`, the Patton score divided by
/// `z^b` with `L = ln(y / z)`.
///
/// Near `b = 1` the closed form cancels, so the power series
/// `Σ_{k>=2} (1 + b + ... + b^{k-2}) L^k / k!` is summed instead.
fn patton_kernel(b: f64, l: f64) -> f64 {
    if (b - 1.0).abs() < 0.05 && l.abs() < 30.0 {
        let (mut sum, mut coef, mut pow) = (0.0, 1.0, l * l / 2.0);
        for k in 2..1000 {
            let term = coef * pow;
            sum += term;
            if k as f64 > l.abs() && term.abs() <= 1e-17 * sum.abs() {
                break;
            }
            coef = 1.0 + b * coef;
            pow *= l / (k + 1) as f64;
        }
        sum
    } else {
        ((b * l).exp_m1() / b - l.exp_m1()) / (b - 1.0)
    }
}

/// Partial derivatives of the score in each prediction component.
///
/// Indicators are evaluated as written, so at `y = z` the one-sided value
/// for `1{y<=z} = 1` is returned.
pub fn gradient(spec: &ScoreSpec, pred: &Prediction, y: f64) -> Result<Prediction> {
    check_dim(spec, pred)?;
    let z = pred.get(0);
    match *spec {
        ScoreSpec::Gpl { g, alpha } => {
            g.check(z, "z")?;
            Ok(Prediction::scalar((ind(y <= z) - alpha) * g.derivative(z)))
        }
        ScoreSpec::VarHomogeneous { b, d, alpha } => {
            let g = IncreasingGenerator::Power { b, d };
            g.check(z, "z")?;
            Ok(Prediction::scalar((ind(y <= z) - alpha) * g.derivative(z)))
        }
        ScoreSpec::Bregman { phi } => {
            phi.check(z, "z")?;
            Ok(Prediction::scalar(phi.second_derivative(z) * (z - y)))
        }
        ScoreSpec::Patton { b } => {
            if b != 2.0 {
                positive(z, "z", "patton")?;
            }
            let curv = if b == 2.0 { 1.0 } else { z.powf(b - 2.0) };
            Ok(Prediction::scalar(curv * (z - y)))
        }
        ScoreSpec::ZeroHomVarEs { alpha } => {
            let z2 = pred.get(1);
            positive(z2, "z2", "zero-hom-var-es")?;
            positive(y, "y", "zero-hom-var-es")?;
            let d1 = (ind(y <= z) - alpha) / (z2 * (1.0 - alpha));
            let d2 = -tail_mean(alpha, z, y) / (z2 * z2) + 1.0 / z2;
            Ok(Prediction::pair(d1, d2))
        }
        ScoreSpec::JointVarEs { g, phi, alpha } => {
            let z2 = pred.get(1);
            g.check(z, "z1")?;
            phi.check(z2, "z2")?;
            let i = ind(y <= z);
            let d1 = (i - alpha) * (g.derivative(z) - phi.derivative(z2) / (1.0 - alpha));
            let d2 = phi.second_derivative(z2) * (z2 - tail_mean(alpha, z, y));
            Ok(Prediction::pair(d1, d2))
        }
        other => Err(invalid(format!("no gradient available for {other}"))),
    }
}

/// Axis of a Murphy diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MurphyAxis {
    /// Elementary-score threshold θ.
    Theta,
    /// Degree of homogeneity b.
    B,
}

impl fmt::Display for MurphyAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MurphyAxis::Theta => write!(f, "theta"),
            MurphyAxis::B => write!(f, "b"),
        }
    }
}

/// Strictly increasing parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MurphyGrid {
    pub axis: MurphyAxis,
    values: Vec<f64>,
}

impl MurphyGrid {
    pub fn new(axis: MurphyAxis, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("murphy grid is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("murphy grid contains non-finite values"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("murphy grid must be strictly increasing"));
        }
        Ok(Self { axis, values })
    }

    /// `n` equally spaced points from `lo` to `hi`, endpoints included.
    pub fn linspace(axis: MurphyAxis, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 1 {
            return Self::new(axis, vec![lo]);
        }
        let step = n - 1;
        Self::new(axis, (0..n).map(|k| lo + (hi - lo) * k as f64 / step as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Number of points of the default θ axis.
pub const THETA_POINTS: usize = 201;
/// Number of points of the default b axis.
pub const B_POINTS: usize = 81;

/// Default grid for a Murphy diagram of `functional` on `sample`.
///
/// The θ axis spans the sample range padded by 1% on each side. The b axis
/// covers [-2, 6] for quantiles and [0, 4] for the mean.
pub fn murphy_grid_default(axis: MurphyAxis, sample: &[f64], functional: &FunctionalSpec) -> Result<MurphyGrid> {
    match axis {
        MurphyAxis::Theta => {
            if sample.is_empty() {
                return Err(Error::EmptySample);
            }
            let lo = sample.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return Err(Error::DegenerateSample(format!(
                    "constant sample (value {lo}) has no theta range"
                )));
            }
            let pad = 0.01 * (hi - lo);
            MurphyGrid::linspace(axis, lo - pad, hi + pad, THETA_POINTS)
        }
        MurphyAxis::B => match functional {
            FunctionalSpec::Var { .. } => MurphyGrid::linspace(axis, -2.0, 6.0, B_POINTS),
            FunctionalSpec::Mean => MurphyGrid::linspace(axis, 0.0, 4.0, B_POINTS),
            other => Err(invalid(format!("no homogeneous Murphy axis for {other}"))),
        },
    }
}

/// `|S(z, y) - Σ S_θ(z, y) ΔH(θ)|` with a trapezoid rule for `dφ'` or `dg`.
pub fn mixture_weight_check(spec: &ScoreSpec, grid: &MurphyGrid, z: f64, y: f64) -> Result<f64> {
    let (lo, hi) = (z.min(y), z.max(y));
    let g = grid.values();
    let (glo, ghi) = (g[0], g[g.len() - 1]);
    if glo > lo || ghi < hi {
        return Err(Error::GridCoverage {
            lo: glo,
            hi: ghi,
            need_lo: lo,
            need_hi: hi,
        });
    }
    if z == y {
        return Ok(0.0);
    }
    let exact = evaluate(spec, &Prediction::scalar(z), y)?;
    type Measure = Box<dyn Fn(f64) -> f64>;
    let (measure, elementary): (Measure, Box<dyn Fn(f64) -> ScoreSpec>) = match *spec {
        ScoreSpec::Bregman { phi } => (
            Box::new(move |t| phi.derivative(t)),
            Box::new(|theta| ScoreSpec::ElementaryMean { theta }),
        ),
        ScoreSpec::Gpl { g, alpha } => (
            Box::new(move |t| g.value(t)),
            Box::new(move |theta| ScoreSpec::ElementaryVar { theta, alpha }),
        ),
        ScoreSpec::VarHomogeneous { b, d, alpha } => {
            let g = IncreasingGenerator::Power { b, d };
            (
                Box::new(move |t| g.value(t)),
                Box::new(move |theta| ScoreSpec::ElementaryVar { theta, alpha }),
            )
        }
        other => {
            return Err(invalid(format!(
                "mixture representation requires bregman or gpl, got {other}"
            )))
        }
    };
    let pred = Prediction::scalar(z);
    let mut s_prev = evaluate(&elementary(g[0]), &pred, y)?;
    let mut h_prev = measure(g[0]);
    let mut approx = 0.0;
    for &t in &g[1..] {
        let s = evaluate(&elementary(t), &pred, y)?;
        let h = measure(t);
        approx += 0.5 * (s + s_prev) * (h - h_prev);
        s_prev = s;
        h_prev = h;
    }
    Ok((exact - approx).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(spec: ScoreSpec, pred: Prediction, y: f64) -> f64 {
        evaluate(&spec, &pred, y).unwrap()
    }

    #[test]
    fn printed_examples() {
        assert_eq!(ev(ScoreSpec::pinball(0.9), Prediction::scalar(0.0), 1.0), 0.9);
        assert_eq!(ev(ScoreSpec::Patton { b: 2.0 }, Prediction::scalar(1.0), 3.0), 2.0);
        assert_eq!(
            ev(ScoreSpec::ElementaryMean { theta: 1.0 }, Prediction::scalar(2.0), 0.0),
            1.0
        );
        assert_eq!(
            ev(ScoreSpec::ZeroHomVarEs { alpha: 0.9 }, Prediction::pair(5.0, 5.0), 5.0),
            0.0
        );
    }

    #[test]
    fn square_bregman_is_squared_error() {
        let mut state = 12345u64;
        for _ in 0..20 {
            state = crate::simulation::splitmix64(state);
            let z = (state % 10_000) as f64 / 100.0 - 50.0;
            state = crate::simulation::splitmix64(state);
            let y = (state % 10_000) as f64 / 100.0 - 50.0;
            let s = ev(ScoreSpec::squared(), Prediction::scalar(z), y);
            assert!((s - (z - y) * (z - y)).abs() <= 1e-12 * (1.0 + s));
        }
    }

    #[test]
    fn elementary_interval_conventions() {
        let e = |theta, z, y| ev(ScoreSpec::ElementaryVar { theta, alpha: 0.9 }, Prediction::scalar(z), y);
        assert!((e(1.0, 2.0, 1.0) - 0.1).abs() < 1e-15); // θ ∈ [y, z)
        assert_eq!(e(2.0, 2.0, 1.0), 0.0); // right end excluded
        assert_eq!(e(1.0, 1.0, 2.0), 0.9); // θ ∈ [z, y)
        let m = |theta, z, y| ev(ScoreSpec::ElementaryMean { theta }, Prediction::scalar(z), y);
        assert_eq!(m(0.0, 2.0, 0.0), 0.0); // |y - θ| vanishes at θ = min
        assert_eq!(m(2.0, 2.0, 0.0), 0.0); // θ = max excluded
    }

    #[test]
    fn patton_branches_and_domain() {
        let s0 = ev(ScoreSpec::Patton { b: 0.0 }, Prediction::scalar(2.0), 1.0);
        assert!((s0 - (0.5 - 0.5f64.ln() - 1.0)).abs() < 1e-15);
        let s1 = ev(ScoreSpec::Patton { b: 1.0 }, Prediction::scalar(2.0), 1.0);
        assert!((s1 - (0.5f64.ln() + 1.0)).abs() < 1e-15);
        assert!(matches!(
            evaluate(&ScoreSpec::Patton { b: 3.0 }, &Prediction::scalar(-1.0), 1.0),
            Err(Error::Domain(_))
        ));
        assert!(evaluate(&ScoreSpec::Patton { b: 2.0 }, &Prediction::scalar(-1.0), 1.0).is_ok());
    }

    #[test]
    fn zero_hom_var_es_domain() {
        let s = ScoreSpec::ZeroHomVarEs { alpha: 0.9 };
        let e = evaluate(&s, &Prediction::pair(1.0, -1.0), 1.0).unwrap_err();
        assert!(e.to_string().contains("z2 > 0"));
        let e = evaluate(&s, &Prediction::pair(1.0, 1.0), 0.0).unwrap_err();
        assert!(e.to_string().contains("y > 0"));
    }

    #[test]
    fn joint_with_zero_and_neg_log_is_the_zero_homogeneous_score() {
        let joint = ScoreSpec::JointVarEs {
            g: IncreasingGenerator::Zero,
            phi: ConvexGenerator::NegLog,
            alpha: 0.9,
        };
        let zh = ScoreSpec::ZeroHomVarEs { alpha: 0.9 };
        for &(z1, z2, y) in &[(1.0, 2.0, 0.5), (3.0, 4.0, 5.0), (2.0, 2.5, 2.0), (0.3, 7.0, 1.1)] {
            let p = Prediction::pair(z1, z2);
            let a = ev(joint, p, y);
            let b = ev(zh, p, y);
            assert!((a - b).abs() < 1e-13 * (1.0 + b), "{a} vs {b}");
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let e = evaluate(&ScoreSpec::ZeroHomVarEs { alpha: 0.5 }, &Prediction::scalar(1.0), 1.0).unwrap_err();
        assert_eq!(e, Error::DimensionMismatch { expected: 2, found: 1 });
    }

    #[test]
    fn mixture_examples() {
        let g = MurphyGrid::linspace(MurphyAxis::Theta, 0.0, 3.0, 10_000).unwrap();
        assert!(mixture_weight_check(&ScoreSpec::squared(), &g, 1.0, 3.0).unwrap() < 1e-3);
        let g = MurphyGrid::linspace(MurphyAxis::Theta, 0.0, 2.0, 10_000).unwrap();
        assert!(mixture_weight_check(&ScoreSpec::pinball(0.5), &g, 0.0, 2.0).unwrap() < 1e-3);
        assert_eq!(mixture_weight_check(&ScoreSpec::squared(), &g, 1.0, 1.0).unwrap(), 0.0);
        assert!(matches!(
            mixture_weight_check(&ScoreSpec::squared(), &g, 1.0, 3.0),
            Err(Error::GridCoverage { .. })
        ));
    }

    #[test]
    fn default_grids() {
        let s: Vec<f64> = (0..=10).map(f64::from).collect();
        let g = murphy_grid_default(MurphyAxis::Theta, &s, &FunctionalSpec::Mean).unwrap();
        assert_eq!(g.len(), 201);
        assert!((g.values()[0] + 0.1).abs() < 1e-15);
        assert!((g.values()[200] - 10.1).abs() < 1e-12);
        let b = murphy_grid_default(MurphyAxis::B, &s, &FunctionalSpec::Mean).unwrap();
        assert!(b.values().contains(&2.0));
        assert_eq!(b.values()[0], 0.0);
        assert_eq!(b.values()[80], 4.0);
        let bv = murphy_grid_default(MurphyAxis::B, &s, &FunctionalSpec::Var { alpha: 0.9 }).unwrap();
        assert!(bv.values().contains(&0.0) && bv.values().contains(&4.0));
        assert!(murphy_grid_default(MurphyAxis::Theta, &[3.0; 5], &FunctionalSpec::Mean).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let s = ScoreSpec::VarHomogeneous {
            b: 0.0,
            d: 1.0,
            alpha: 0.9,
        };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ScoreSpec>(&j).unwrap(), s);
        let p: ScoreSpec = serde_json::from_str(r#"{"family":"gpl","g":{"kind":"identity"},"alpha":0.9}"#).unwrap();
        assert_eq!(p, ScoreSpec::pinball(0.9));
        assert!(serde_json::from_str::<ScoreSpec>(r#"{"family":"gpl","g":{"kind":"cube"},"alpha":0.9}"#).is_err());
    }
}
