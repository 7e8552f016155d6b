//! Target functionals and their plug-in evaluation on discrete laws.
//!
//! All functionals are computed on weighted atoms. An empirical sample is the
//! special case of unit weights, which keeps cumulative counts integer-exact
//! so the order-statistic conventions hold without rounding slack.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute tolerance of the expectile bisection.
pub const EXPECTILE_TOL: f64 = 1e-12;

/// The statistical functional `T` under study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FunctionalSpec {
    Mean,
    Var { alpha: f64 },
    VarEs { alpha: f64 },
    Expectile { tau: f64 },
    Mode,
    Entropic { gamma: f64 },
    MeanVariance,
    RvarTriplet { alpha: f64, beta: f64 },
}

impl FunctionalSpec {
    pub fn validate(&self) -> Result<()> {
        let level = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(invalid(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        match *self {
            FunctionalSpec::Var { alpha } | FunctionalSpec::VarEs { alpha } => level("alpha", alpha),
            FunctionalSpec::Expectile { tau } => level("tau", tau),
            FunctionalSpec::Entropic { gamma } => {
                if gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(invalid(format!("gamma must be positive, got {gamma}")))
                }
            }
            FunctionalSpec::RvarTriplet { alpha, beta } => {
                level("alpha", alpha)?;
                level("beta", beta)?;
                if alpha < beta {
                    Ok(())
                } else {
                    Err(invalid(format!("rvar requires alpha < beta, got {alpha} >= {beta}")))
                }
            }
            FunctionalSpec::Mean | FunctionalSpec::Mode | FunctionalSpec::MeanVariance => Ok(()),
        }
    }

    /// Number of components of the prediction.
    pub fn dim(&self) -> usize {
        match self {
            FunctionalSpec::VarEs { .. } | FunctionalSpec::MeanVariance => 2,
            FunctionalSpec::RvarTriplet { .. } => 3,
            _ => 1,
        }
    }

    /// `T(δ_y)`, the functional of a point mass.
    pub fn point_mass(&self, y: f64) -> Prediction {
        match self {
            FunctionalSpec::VarEs { .. } => Prediction::pair(y, y),
            FunctionalSpec::MeanVariance => Prediction::pair(y, 0.0),
            FunctionalSpec::RvarTriplet { .. } => Prediction::triple(y, y, y),
            _ => Prediction::scalar(y),
        }
    }
}

impl fmt::Display for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalSpec::Mean => write!(f, "mean"),
            FunctionalSpec::Var { alpha } => write!(f, "var({alpha})"),
            FunctionalSpec::VarEs { alpha } => write!(f, "var-es({alpha})"),
            FunctionalSpec::Expectile { tau } => write!(f, "expectile({tau})"),
            FunctionalSpec::Mode => write!(f, "mode"),
            FunctionalSpec::Entropic { gamma } => write!(f, "entropic({gamma})"),
            FunctionalSpec::MeanVariance => write!(f, "mean-variance"),
            FunctionalSpec::RvarTriplet { alpha, beta } => write!(f, "rvar-triplet({alpha}, {beta})"),
        }
    }
}

/// A point in the action domain: one, two or three real components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Prediction {
    values: [f64; 3],
    len: u8,
}

impl Prediction {
    pub fn scalar(z: f64) -> Self {
        Self {
            values: [z, 0.0, 0.0],
            len: 1,
        }
    }

    pub fn pair(z1: f64, z2: f64) -> Self {
        Self {
            values: [z1, z2, 0.0],
            len: 2,
        }
    }

    pub fn triple(z1: f64, z2: f64, z3: f64) -> Self {
        Self {
            values: [z1, z2, z3],
            len: 3,
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v.len() {
            1 => Ok(Self::scalar(v[0])),
            2 => Ok(Self::pair(v[0], v[1])),
            3 => Ok(Self::triple(v[0], v[1], v[2])),
            n => Err(invalid(format!("prediction must have 1 to 3 components, got {n}"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.len as usize
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len as usize]
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Multiplies every component by `c`; used for scale-equivariance checks.
    pub fn scaled(&self, c: f64) -> Self {
        let mut p = *self;
        for v in &mut p.values[..p.len as usize] {
            *v *= c;
        }
        p
    }
}

impl TryFrom<Vec<f64>> for Prediction {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_slice(&v)
    }
}

impl From<Prediction> for Vec<f64> {
    fn from(p: Prediction) -> Self {
        p.as_slice().to_vec()
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.as_slice().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Plug-in value of `spec` on the empirical law of `sample`.
pub fn empirical_functional(spec: &FunctionalSpec, sample: &[f64]) -> Result<Prediction> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let atoms: Vec<(f64, f64)> = sample.iter().map(|&y| (y, 1.0)).collect();
    discrete_functional(spec, &atoms)
}

/// Value of `spec` on the law putting weight `w` on each `(value, w)` atom.
///
/// Weights need not be normalized; atoms with equal values are merged.
pub fn discrete_functional(spec: &FunctionalSpec, atoms: &[(f64, f64)]) -> Result<Prediction> {
    spec.validate()?;
    let law = DiscreteLaw::new(atoms)?;
    if let [y] = law.values[..] {
        // Exact, where the weighted formulas could round away from y.
        return Ok(spec.point_mass(y));
    }
    match *spec {
        FunctionalSpec::Mean => Ok(Prediction::scalar(law.mean())),
        FunctionalSpec::Var { alpha } => Ok(Prediction::scalar(law.quantile(alpha))),
        FunctionalSpec::VarEs { alpha } => {
            let q = law.quantile(alpha);
            Ok(Prediction::pair(q, law.expected_shortfall(alpha, q).max(q)))
        }
        FunctionalSpec::Expectile { tau } => Ok(Prediction::scalar(law.expectile(tau))),
        FunctionalSpec::Mode => Ok(Prediction::scalar(law.mode())),
        FunctionalSpec::Entropic { gamma } => law.entropic(gamma).map(Prediction::scalar),
        FunctionalSpec::MeanVariance => {
            let m = law.mean();
            let v = law.expect(|y| (y - m) * (y - m));
            Ok(Prediction::pair(m, v.max(0.0)))
        }
        FunctionalSpec::RvarTriplet { alpha, beta } => {
            let qa = law.quantile(alpha);
            let qb = law.quantile(beta);
            let r = (law.lower_integral(beta) - law.lower_integral(alpha)) / (beta - alpha);
            Ok(Prediction::triple(qa, qb, r.clamp(qa, qb)))
        }
    }
}

/// Sorted, merged atoms of a finite law.
struct DiscreteLaw {
    values: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
}

impl DiscreteLaw {
    fn new(atoms: &[(f64, f64)]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for &(v, w) in atoms {
            if !v.is_finite() {
                return Err(invalid(format!("non-finite observation {v}")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid(format!("atom weight must be non-negative, got {w}")));
            }
            if w > 0.0 {
                sorted.push((v, w));
            }
        }
        if sorted.is_empty() {
            return Err(Error::EmptySample);
        }
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values = Vec::with_capacity(sorted.len());
        let mut weights: Vec<f64> = Vec::with_capacity(sorted.len());
        for (v, w) in sorted {
            if values.last() == Some(&v) {
                *weights.last_mut().unwrap() += w;
            } else {
                values.push(v);
                weights.push(w);
            }
        }
        let total = crate::sum::neumaier(weights.iter().copied());
        Ok(Self { values, weights, total })
    }

    fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        crate::sum::neumaier(self.values.iter().zip(&self.weights).map(|(&v, &w)| w * f(v))) / self.total
    }

    fn mean(&self) -> f64 {
        self.expect(|y| y)
    }

    /// Index of the left-continuous `level`-quantile.
    fn quantile_index(&self, level: f64) -> usize {
        let target = level * self.total - 1e-12 * self.total;
        let mut cum = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            cum += w;
            if cum >= target {
                return i;
            }
        }
        self.values.len() - 1
    }

    fn quantile(&self, level: f64) -> f64 {
        self.values[self.quantile_index(level)]
    }

    /// `(E[Y 1{Y>q}] + q (1 - α - P(Y > q))) / (1 - α)`.
    fn expected_shortfall(&self, alpha: f64, q: f64) -> f64 {
        let mut tail = 0.0;
        let mut p_above = 0.0;
        for (&v, &w) in self.values.iter().zip(&self.weights) {
            if v > q {
                tail += v * w;
                p_above += w;
            }
        }
        tail /= self.total;
        p_above /= self.total;
        (tail + q * (1.0 - alpha - p_above)) / (1.0 - alpha)
    }

    /// `∫_0^γ VaR_u du`, exact for the discrete law.
    fn lower_integral(&self, gamma: f64) -> f64 {
        let idx = self.quantile_index(gamma);
        let mut below = 0.0;
        let mut f_left = 0.0;
        for i in 0..idx {
            below += self.values[i] * self.weights[i];
            f_left += self.weights[i];
        }
        below /= self.total;
        f_left /= self.total;
        below + self.values[idx] * (gamma - f_left)
    }

    fn expectile(&self, tau: f64) -> f64 {
        // Monotone first-order condition; positive above the root.
        let foc = |z: f64| {
            let mut up = 0.0;
            let mut down = 0.0;
            for (&v, &w) in self.values.iter().zip(&self.weights) {
                if v > z {
                    up += w * (v - z);
                } else {
                    down += w * (z - v);
                }
            }
            (1.0 - tau) * down - tau * up
        };
        let mut lo = self.values[0];
        let mut hi = *self.values.last().unwrap();
        while hi - lo > EXPECTILE_TOL {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if foc(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn mode(&self) -> f64 {
        let mut best = 0;
        for i in 1..self.values.len() {
            if self.weights[i] > self.weights[best] {
                best = i;
            }
        }
        self.values[best]
    }

    fn entropic(&self, gamma: f64) -> Result<f64> {
        let max = *self.values.last().unwrap();
        if !(gamma * max).exp().is_finite() {
            return Err(Error::EntropicOverflow { gamma });
        }
        let s = self.expect(|y| (gamma * (y - max)).exp());
        Ok(max + s.ln() / gamma)
    }
}
