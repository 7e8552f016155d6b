//! Experiment configuration: a JSON document validated in full before any
//! computation starts.

use std::fmt;
use std::path::{Path, PathBuf};

use scoresens::sensitivity::HomogeneousFamily;
use scoresens::{FunctionalSpec, ModelSpec, MurphyAxis, MurphyGrid, NetConfig, ScoreSpec, Subset, TrainConfig};
use serde::{Deserialize, Serialize};

/// Configuration rejected before any computation; maps to exit status 2.
#[derive(Debug)]
pub struct SchemaError(pub String);

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for SchemaError {}

fn schema(msg: impl Into<String>) -> anyhow::Error {
    SchemaError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Registered closed-form conditional functionals.
    #[default]
    ClosedForm,
    /// Neural nets trained on fresh simulated batches.
    Neural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Samples {
    /// Evaluation sample size M.
    #[serde(default = "default_m")]
    pub eval: usize,
    /// Independent sample for the unconditional baseline.
    #[serde(default = "default_m")]
    pub baseline: usize,
    /// Rows written by `simulate`.
    #[serde(default = "default_simulate")]
    pub simulate: usize,
}

fn default_m() -> usize {
    1_000_000
}

fn default_simulate() -> usize {
    1000
}

impl Default for Samples {
    fn default() -> Self {
        Self {
            eval: default_m(),
            baseline: default_m(),
            simulate: default_simulate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MurphyConfig {
    pub axis: MurphyAxis,
    /// Homogeneous family for the b axis; defaults to Patton for the mean
    /// and var-homogeneous for VaR.
    #[serde(default)]
    pub family: Option<HomogeneousFamily>,
    /// Explicit grid values.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    /// Equally spaced grid.
    #[serde(default)]
    pub range: Option<GridRange>,
    #[serde(default = "yes")]
    pub svg: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetShape {
    #[serde(default = "default_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_width")]
    pub width: usize,
}

fn default_layers() -> usize {
    6
}

fn default_width() -> usize {
    20
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            hidden_layers: default_layers(),
            width: default_width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub functional: FunctionalSpec,
    /// Defaults to squared error, pinball or the 0-homogeneous VaR/ES score.
    #[serde(default)]
    pub score: Option<ScoreSpec>,
    #[serde(default)]
    pub subsets: Vec<Subset>,
    #[serde(default)]
    pub interactions: Vec<(Subset, Subset)>,
    #[serde(default)]
    pub murphy: Option<MurphyConfig>,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub samples: Samples,
    #[serde(default)]
    pub net: NetShape,
    /// Training schedule; its `seed` is mixed into every per-subset seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Evaluation sample read from a `simulate` CSV instead of simulated.
    #[serde(default)]
    pub eval_csv: Option<PathBuf>,
}

/// What a subcommand needs from the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Need {
    Simulate,
    Sensitivity,
    Murphy,
    Interaction,
    Train,
    Run,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| schema(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(format!("at '{path}': {}", e.into_inner()))
        })
    }

    pub fn score(&self) -> ScoreSpec {
        self.score.unwrap_or(match self.functional {
            FunctionalSpec::Var { alpha } => ScoreSpec::pinball(alpha),
            FunctionalSpec::VarEs { alpha } => ScoreSpec::ZeroHomVarEs { alpha },
            _ => ScoreSpec::squared(),
        })
    }

    /// Every information set whose conditional is needed.
    pub fn needed_subsets(&self, need: Need) -> Vec<Subset> {
        let mut out: Vec<Subset> = Vec::new();
        let mut add = |s: &Subset| {
            if !s.is_empty() && !out.contains(s) {
                out.push(s.clone());
            }
        };
        if matches!(need, Need::Sensitivity | Need::Murphy | Need::Train | Need::Run) {
            self.subsets.iter().for_each(&mut add);
        }
        if matches!(need, Need::Interaction | Need::Run) {
            for (a, b) in &self.interactions {
                add(a);
                add(b);
                add(&a.union(b));
            }
        }
        out
    }

    pub fn net_config(&self, subset: &Subset, seed: u64) -> NetConfig {
        let mut cfg = NetConfig::new(
            subset.len(),
            matches!(self.functional, FunctionalSpec::VarEs { .. }),
            seed,
        );
        cfg.hidden_layers = self.net.hidden_layers;
        cfg.width = self.net.width;
        cfg
    }

    pub fn murphy_grid(&self, eval_response: &[f64]) -> scoresens::Result<Option<MurphyGrid>> {
        let Some(m) = &self.murphy else { return Ok(None) };
        let grid = match (&m.values, &m.range) {
            (Some(v), _) => MurphyGrid::new(m.axis, v.clone())?,
            (None, Some(r)) => MurphyGrid::linspace(m.axis, r.lo, r.hi, r.points)?,
            (None, None) => scoresens::scores::murphy_grid_default(m.axis, eval_response, &self.functional)?,
        };
        Ok(Some(grid))
    }

    /// Full validation; any failure is a [`SchemaError`].
    pub fn validate(&self, need: Need) -> anyhow::Result<()> {
        let lib = |what: &str, e: scoresens::Error| schema(format!("{what}: {e}"));
        self.model.validate().map_err(|e| lib("model", e))?;
        self.functional.validate().map_err(|e| lib("functional", e))?;
        let score = self.score();
        score.validate().map_err(|e| lib("score", e))?;
        if score.target_functional() != self.functional {
            return Err(schema(format!(
                "score {score} elicits {}, not the configured functional {}",
                score.target_functional(),
                self.functional
            )));
        }
        let n = self.model.n_factors();
        for (k, s) in self.subsets.iter().enumerate() {
            s.check(n).map_err(|e| lib(&format!("subsets[{k}]"), e))?;
        }
        for (k, (a, b)) in self.interactions.iter().enumerate() {
            a.check(n)
                .and_then(|_| b.check(n))
                .map_err(|e| lib(&format!("interactions[{k}]"), e))?;
        }
        if self.samples.eval == 0 || self.samples.baseline == 0 || self.samples.simulate == 0 {
            return Err(schema("samples: sizes must be positive"));
        }
        match need {
            Need::Sensitivity | Need::Train if self.subsets.is_empty() => {
                return Err(schema("subsets: at least one information set is required"));
            }
            Need::Interaction if self.interactions.is_empty() => {
                return Err(schema("interactions: at least one pair is required"));
            }
            Need::Murphy if self.murphy.is_none() => return Err(schema("murphy: section is required")),
            Need::Run if self.subsets.is_empty() && self.interactions.is_empty() && self.murphy.is_none() => {
                return Err(schema("nothing to run: give subsets, interactions or a murphy section"));
            }
            _ => {}
        }
        if let Some(m) = &self.murphy {
            self.validate_murphy(m)?;
        }
        let neural = self.estimator == Estimator::Neural || need == Need::Train;
        if neural {
            self.train.validate().map_err(|e| lib("train", e))?;
            if !matches!(
                self.functional,
                FunctionalSpec::Var { .. } | FunctionalSpec::VarEs { .. }
            ) {
                return Err(schema(format!(
                    "neural estimation covers VaR and (VaR, ES), not {}",
                    self.functional
                )));
            }
            let trainable = match score {
                ScoreSpec::Gpl { g, .. } => g == scoresens::IncreasingGenerator::Identity,
                ScoreSpec::ZeroHomVarEs { .. } => true,
                _ => false,
            };
            if !trainable {
                return Err(schema(format!(
                    "score {score} is not trainable; use the pinball loss or the 0-homogeneous VaR/ES score"
                )));
            }
            self.net_config(&Subset::full(1), 0)
                .validate()
                .map_err(|e| lib("net", e))?;
        } else {
            for s in self.needed_subsets(need) {
                self.model
                    .conditional_rule(&self.functional, &s)
                    .map_err(|e| lib("estimator", e))?;
            }
        }
        if let Some(p) = &self.eval_csv {
            if !p.is_file() {
                return Err(schema(format!("eval_csv: {} is not a file", p.display())));
            }
        }
        Ok(())
    }

    fn validate_murphy(&self, m: &MurphyConfig) -> anyhow::Result<()> {
        if m.values.is_some() && m.range.is_some() {
            return Err(schema("murphy: give either values or range, not both"));
        }
        if let Some(v) = &m.values {
            MurphyGrid::new(m.axis, v.clone()).map_err(|e| schema(format!("murphy.values: {e}")))?;
        }
        if let Some(r) = &m.range {
            MurphyGrid::linspace(m.axis, r.lo, r.hi, r.points).map_err(|e| schema(format!("murphy.range: {e}")))?;
        }
        match (m.axis, self.functional) {
            (_, FunctionalSpec::Mean | FunctionalSpec::Var { .. }) => {}
            (_, other) => return Err(schema(format!("murphy: diagrams cover the mean and VaR, not {other}"))),
        }
        if m.axis == MurphyAxis::Theta && m.family.is_some() {
            return Err(schema("murphy.family applies to the b axis only"));
        }
        if let Some(fam) = m.family {
            if fam.score(2.0, &self.functional).is_none() {
                return Err(schema(format!(
                    "murphy.family {fam:?} does not apply to {}",
                    self.functional
                )));
            }
        }
        Ok(())
    }
}
