//! Seeded generation of risk factors and model samples.
//!
//! Every marginal is produced from a standard normal score `z` through the
//! map `F^{-1}(Φ(z))`, so the same code path serves independent factors and
//! Gaussian-copula coupled ones. Rows are drawn in fixed-size blocks, each
//! block owning its own ChaCha stream, which makes output independent of the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::ModelSpec;
use crate::special::{gamma_quantile, gamma_quantile_from_normal, std_normal_cdf, std_normal_quantile};

/// Rows per RNG stream.
pub const BLOCK_ROWS: usize = 8192;

/// Diagonal tolerance of the positive semi-definite Cholesky factorization.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Univariate law of one risk factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MarginalSpec {
    Uniform {
        lo: f64,
        hi: f64,
    },
    StandardNormal,
    Normal {
        mu: f64,
        sigma: f64,
    },
    /// `exp(N(mu, sigma^2))`.
    #[serde(rename = "lognormal")]
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// `offset + Gamma(shape, rate)`; the offset expresses shifted laws such as `C + Z`.
    Gamma {
        shape: f64,
        rate: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Takes the value 1 with probability `p` and 0 otherwise.
    Bernoulli {
        p: f64,
    },
}

impl MarginalSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be finite, got {v}")))
            }
        };
        match *self {
            MarginalSpec::Uniform { lo, hi } => {
                finite("lo", lo)?;
                finite("hi", hi)?;
                if lo >= hi {
                    return Err(invalid(format!("uniform requires lo < hi, got [{lo}, {hi}]")));
                }
            }
            MarginalSpec::StandardNormal => {}
            MarginalSpec::Normal { mu, sigma } | MarginalSpec::LogNormal { mu, sigma } => {
                finite("mu", mu)?;
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(invalid(format!("sigma must be positive, got {sigma}")));
                }
            }
            MarginalSpec::Gamma { shape, rate, offset } => {
                finite("offset", offset)?;
                if !(shape > 0.0 && shape.is_finite()) {
                    return Err(invalid(format!("gamma shape must be positive, got {shape}")));
                }
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(invalid(format!("gamma rate must be positive, got {rate}")));
                }
            }
            MarginalSpec::Bernoulli { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(format!("bernoulli p must lie in [0, 1], got {p}")));
                }
            }
        }
        Ok(())
    }

    /// Maps a standard normal score through `F^{-1}(Φ(z))`.
    pub fn from_normal_score(&self, z: f64) -> f64 {
        match *self {
            MarginalSpec::Uniform { lo, hi } => lo + (hi - lo) * std_normal_cdf(z),
            MarginalSpec::StandardNormal => z,
            MarginalSpec::Normal { mu, sigma } => mu + sigma * z,
            MarginalSpec::LogNormal { mu, sigma } => (mu + sigma * z).exp(),
            MarginalSpec::Gamma { shape, rate, offset } => offset + gamma_quantile_from_normal(shape, z) / rate,
            MarginalSpec::Bernoulli { p } => {
                if p <= 0.0 {
                    0.0
                } else if p >= 1.0 || z > std_normal_quantile(1.0 - p) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Left-continuous quantile `inf{t : F(t) >= u}` for `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            MarginalSpec::Uniform { lo, hi } => lo + (hi - lo) * u,
            MarginalSpec::StandardNormal => std_normal_quantile(u),
            MarginalSpec::Normal { mu, sigma } => mu + sigma * std_normal_quantile(u),
            MarginalSpec::LogNormal { mu, sigma } => (mu + sigma * std_normal_quantile(u)).exp(),
            MarginalSpec::Gamma { shape, rate, offset } => offset + gamma_quantile(shape, u) / rate,
            MarginalSpec::Bernoulli { p } => {
                if u <= 1.0 - p {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            MarginalSpec::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            MarginalSpec::StandardNormal => std_normal_cdf(x),
            MarginalSpec::Normal { mu, sigma } => std_normal_cdf((x - mu) / sigma),
            MarginalSpec::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((x.ln() - mu) / sigma)
                }
            }
            MarginalSpec::Gamma { shape, rate, offset } => crate::special::gamma_cdf(shape, (x - offset) * rate),
            MarginalSpec::Bernoulli { p } => {
                if x < 0.0 {
                    0.0
                } else if x < 1.0 {
                    1.0 - p
                } else {
                    1.0
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            MarginalSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
            MarginalSpec::StandardNormal => 0.0,
            MarginalSpec::Normal { mu, .. } => mu,
            MarginalSpec::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            MarginalSpec::Gamma { shape, rate, offset } => offset + shape / rate,
            MarginalSpec::Bernoulli { p } => p,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            MarginalSpec::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            MarginalSpec::StandardNormal => 1.0,
            MarginalSpec::Normal { sigma, .. } => sigma * sigma,
            MarginalSpec::LogNormal { mu, sigma } => {
                let s2 = sigma * sigma;
                (s2.exp() - 1.0) * (2.0 * mu + s2).exp()
            }
            MarginalSpec::Gamma { shape, rate, .. } => shape / (rate * rate),
            MarginalSpec::Bernoulli { p } => p * (1.0 - p),
        }
    }
}

/// Gaussian copula given by its correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopulaSpec {
    pub correlation: Vec<Vec<f64>>,
}

impl CopulaSpec {
    pub fn dim(&self) -> usize {
        self.correlation.len()
    }

    /// Lower-triangular factor `L` with `L L^T = R`.
    ///
    /// Semi-definite matrices are accepted: a pivot within [`PSD_TOLERANCE`]
    /// of zero yields a zero column. A pivot below `-PSD_TOLERANCE` is reported
    /// with its 1-based index.
    #[allow(clippy::needless_range_loop)]
    pub fn cholesky(&self) -> Result<Matrix> {
        let n = self.dim();
        if n == 0 {
            return Err(invalid("correlation matrix is empty"));
        }
        for (i, row) in self.correlation.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            if (row[i] - 1.0).abs() > 1e-12 {
                return Err(invalid(format!(
                    "correlation diagonal entry {} is {}, expected 1",
                    i + 1,
                    row[i]
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                    return Err(invalid(format!(
                        "correlation entry ({}, {}) = {v} outside [-1, 1]",
                        i + 1,
                        j + 1
                    )));
                }
                if (v - self.correlation[j][i]).abs() > 1e-12 {
                    return Err(invalid(format!(
                        "correlation matrix is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let r = &self.correlation;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = r[j][j];
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if d < -PSD_TOLERANCE {
                return Err(Error::NotPositiveSemiDefinite { pivot: j + 1, value: d });
            }
            let ljj = if d <= PSD_TOLERANCE { 0.0 } else { d.sqrt() };
            l.set(j, j, ljj);
            for i in (j + 1)..n {
                let mut s = r[i][j];
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                if ljj == 0.0 {
                    if s.abs() > 1e-8 {
                        return Err(Error::NotPositiveSemiDefinite { pivot: j + 1, value: d });
                    }
                    l.set(i, j, 0.0);
                } else {
                    l.set(i, j, s / ljj);
                }
            }
        }
        Ok(l)
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }
}

/// Paired draws of risk factors and response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub factors: Matrix,
    pub response: Vec<f64>,
    pub seed: u64,
    pub model_id: String,
}

impl SampleSet {
    pub fn new(factors: Matrix, response: Vec<f64>, seed: u64, model_id: impl Into<String>) -> Result<Self> {
        if factors.rows() != response.len() {
            return Err(Error::DimensionMismatch {
                expected: factors.rows(),
                found: response.len(),
            });
        }
        if response.is_empty() {
            return Err(Error::EmptySample);
        }
        Ok(Self {
            factors,
            response,
            seed,
            model_id: model_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.factors.cols()
    }
}

/// SplitMix64 finalizer, used to derive well-separated child seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for an independent purpose (training batch, evaluation set, ...).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Draws `n` rows of risk factors.
pub fn sample_factors(marginals: &[MarginalSpec], copula: Option<&CopulaSpec>, n: usize, seed: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if marginals.is_empty() {
        return Err(invalid("at least one marginal is required"));
    }
    for m in marginals {
        m.validate()?;
    }
    let dim = marginals.len();
    let chol = match copula {
        Some(c) => {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.dim(),
                });
            }
            Some(c.cholesky()?)
        }
        None => None,
    };
    let mut data = vec![0.0; n * dim];
    data.par_chunks_mut(BLOCK_ROWS * dim)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block as u64);
            let mut eps = vec![0.0; dim];
            for row in chunk.chunks_exact_mut(dim) {
                for e in eps.iter_mut() {
                    *e = StandardNormal.sample(&mut rng);
                }
                for (j, m) in marginals.iter().enumerate() {
                    let z = match &chol {
                        Some(l) => (0..=j).map(|k| l.get(j, k) * eps[k]).sum(),
                        None => eps[j],
                    };
                    row[j] = m.from_normal_score(z);
                }
            }
        });
    Matrix::from_row_major(n, dim, data)
}

/// Draws `n` factor rows from the model and aggregates each into a response.
pub fn sample_model(model: &ModelSpec, n: usize, seed: u64) -> Result<SampleSet> {
    model.validate()?;
    let factors = sample_factors(&model.marginals(), model.copula().as_ref(), n, seed)?;
    let response: Vec<f64> = factors
        .as_slice()
        .par_chunks(factors.cols())
        .map(|x| model.response(x))
        .collect();
    SampleSet::new(factors, response, seed, model.id())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    fn ks_statistic(m: &MarginalSpec, mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = m.cdf(x);
            d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
        }
        d
    }

    #[test]
    fn uniform_columns_center_on_zero() {
        let m = vec![MarginalSpec::Uniform { lo: -PI, hi: PI }; 4];
        let x = sample_factors(&m, None, 1_000_000, 1).unwrap();
        for j in 0..4 {
            assert!(mean(&x.column(j)).abs() < 0.01);
        }
    }

    #[test]
    fn copula_realizes_pearson_correlation() {
        let m = vec![MarginalSpec::StandardNormal; 2];
        let c = CopulaSpec {
            correlation: vec![vec![1.0, 0.8], vec![0.8, 1.0]],
        };
        let x = sample_factors(&m, Some(&c), 1_000_000, 3).unwrap();
        let r = pearson(&x.column(0), &x.column(1));
        assert!((r - 0.8).abs() < 0.005, "r = {r}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let m = vec![
            MarginalSpec::Gamma {
                shape: 40.0,
                rate: 2.0,
                offset: 10.0,
            },
            MarginalSpec::LogNormal { mu: 4.98, sigma: 0.23 },
        ];
        let c = CopulaSpec {
            correlation: vec![vec![1.0, 0.3], vec![0.3, 1.0]],
        };
        let a = sample_factors(&m, Some(&c), 20_000, 9).unwrap();
        let b = sample_factors(&m, Some(&c), 20_000, 9).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c3 = pool.install(|| sample_factors(&m, Some(&c), 20_000, 9).unwrap());
        assert_eq!(a, c3);
    }

    #[test]
    fn every_marginal_passes_kolmogorov_smirnov() {
        // 1% critical value of the one-sample KS statistic: 1.628 / sqrt(n)
        let n = 100_000;
        let crit = 1.628 / (n as f64).sqrt();
        let specs = [
            MarginalSpec::Uniform { lo: -PI, hi: PI },
            MarginalSpec::StandardNormal,
            MarginalSpec::Normal { mu: 2.0, sigma: 3.0 },
            MarginalSpec::LogNormal { mu: 4.98, sigma: 0.23 },
            MarginalSpec::Gamma {
                shape: 40.0,
                rate: 2.0,
                offset: 10.0,
            },
            MarginalSpec::Gamma {
                shape: 0.7,
                rate: 1.0,
                offset: 0.0,
            },
        ];
        for (k, m) in specs.iter().enumerate() {
            let x = sample_factors(std::slice::from_ref(m), None, n, 100 + k as u64).unwrap();
            let d = ks_statistic(m, x.column(0));
            assert!(d < crit, "{m:?}: D = {d}, critical {crit}");
        }
        // Discrete law: compare the atom frequency instead.
        let b = MarginalSpec::Bernoulli { p: 0.2 };
        let x = sample_factors(&[b], None, n, 7).unwrap();
        let freq = mean(&x.column(0));
        assert!((freq - 0.2).abs() < 4.0 * (0.16 / n as f64).sqrt());
    }

    #[test]
    fn gaussian_copula_spearman_matches_arcsine_law() {
        let rho: f64 = 0.6;
        let m = vec![
            MarginalSpec::Uniform { lo: 0.0, hi: 1.0 },
            MarginalSpec::Gamma {
                shape: 2.0,
                rate: 1.0,
                offset: 0.0,
            },
        ];
        let c = CopulaSpec {
            correlation: vec![vec![1.0, rho], vec![rho, 1.0]],
        };
        let n = 1_000_000;
        let x = sample_factors(&m, Some(&c), n, 11).unwrap();
        let rank = |v: Vec<f64>| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            let mut r = vec![0.0; v.len()];
            for (k, &i) in idx.iter().enumerate() {
                r[i] = k as f64;
            }
            r
        };
        let s = pearson(&rank(x.column(0)), &rank(x.column(1)));
        let expected = 6.0 / PI * (rho / 2.0).asin();
        assert!((s - expected).abs() < 0.01, "spearman {s} vs {expected}");
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let c = CopulaSpec {
            correlation: vec![vec![1.0, 0.9, 0.9], vec![0.9, 1.0, -0.9], vec![0.9, -0.9, 1.0]],
        };
        match c.cholesky() {
            Err(Error::NotPositiveSemiDefinite { pivot, value }) => {
                assert_eq!(pivot, 3);
                assert!(value < 0.0);
            }
            other => panic!("expected PSD failure, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_accepts_singular_psd() {
        let c = CopulaSpec {
            correlation: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        };
        let l = c.cholesky().unwrap();
        assert_eq!(l.get(1, 0), 1.0);
        assert_eq!(l.get(1, 1), 0.0);
    }

    #[test]
    fn invalid_marginals_are_rejected() {
        assert!(MarginalSpec::Uniform { lo: 1.0, hi: 1.0 }.validate().is_err());
        assert!(MarginalSpec::Normal { mu: 0.0, sigma: 0.0 }.validate().is_err());
        assert!(MarginalSpec::Gamma {
            shape: -1.0,
            rate: 1.0,
            offset: 0.0
        }
        .validate()
        .is_err());
        assert!(MarginalSpec::Bernoulli { p: 1.5 }.validate().is_err());
        assert!(sample_factors(&[MarginalSpec::Uniform { lo: 2.0, hi: 1.0 }], None, 5, 0).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|k| derive_seed(42, k)).collect();
        assert_eq!(s.len(), 1000);
    }
}
