//! Sampling, conditional models and the estimates behind each output table.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use rayon::prelude::*;
use scoresens::neural::{train, TrainingRun};
use scoresens::sensitivity::{
    estimate_from_predictions, murphy_elementary, murphy_homogeneous, murphy_homogeneous_with, MurphyCurve, MurphyInput,
};
use scoresens::simulation::{derive_seed, sample_model};
use scoresens::{
    empirical_functional, interaction_information, ConditionalModel, Matrix, MurphyAxis, Prediction, SampleSet,
    SensitivityEstimate, Subset,
};

use crate::config::{Estimator, ExperimentConfig, Need};

/// Stream indices under the run seed.
const EVAL_STREAM: u64 = 1;
const BASELINE_STREAM: u64 = 2;
const SIMULATE_STREAM: u64 = 3;
const TRAIN_STREAM: u64 = 4;

fn mask(s: &Subset) -> u64 {
    s.indices().iter().map(|i| 1u64 << i).sum()
}

/// Seed of the net for `subset`: the run seed, the configured train seed and
/// the subset's bit mask.
pub fn net_seed(cfg: &ExperimentConfig, subset: &Subset) -> u64 {
    derive_seed(
        derive_seed(derive_seed(cfg.seed, TRAIN_STREAM), cfg.train.seed),
        mask(subset),
    )
}

pub fn simulate(cfg: &ExperimentConfig) -> scoresens::Result<SampleSet> {
    sample_model(&cfg.model, cfg.samples.simulate, derive_seed(cfg.seed, SIMULATE_STREAM))
}

/// Reads a `simulate` CSV: columns `x_1..x_n, y`.
pub fn read_sample(path: &Path, cfg: &ExperimentConfig) -> anyhow::Result<SampleSet> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let n = cfg.model.n_factors();
    let expected: Vec<String> = (1..=n).map(|i| format!("x_{i}")).chain(["y".to_string()]).collect();
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(
        header == expected,
        "{}: header {header:?}, expected {expected:?}",
        path.display()
    );
    let mut data = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut vals = rec.iter().map(|v| v.parse::<f64>());
        for _ in 0..n {
            data.push(vals.next().unwrap()?);
        }
        y.push(vals.next().unwrap()?);
    }
    let rows = y.len();
    Ok(SampleSet::new(
        Matrix::from_row_major(rows, n, data)?,
        y,
        cfg.seed,
        cfg.model.id(),
    )?)
}

/// One estimated information set.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub subset: Subset,
    pub value: SensitivityEstimate,
}

/// Evaluation data, baseline and conditional models of one run.
pub struct Experiment<'a> {
    pub cfg: &'a ExperimentConfig,
    pub eval: SampleSet,
    pub baseline: Prediction,
    pub conds: BTreeMap<Subset, ConditionalModel>,
    /// Loss traces of nets trained in this run.
    pub traces: BTreeMap<Subset, Vec<f64>>,
}

impl<'a> Experiment<'a> {
    pub fn prepare(cfg: &'a ExperimentConfig, need: Need) -> anyhow::Result<Self> {
        let eval = match &cfg.eval_csv {
            Some(p) => read_sample(p, cfg)?,
            None => sample_model(&cfg.model, cfg.samples.eval, derive_seed(cfg.seed, EVAL_STREAM))?,
        };
        let base = sample_model(&cfg.model, cfg.samples.baseline, derive_seed(cfg.seed, BASELINE_STREAM))?;
        let baseline = empirical_functional(&cfg.functional, &base.response)?;
        let subsets = cfg.needed_subsets(need);
        let mut conds = BTreeMap::new();
        let mut traces = BTreeMap::new();
        match cfg.estimator {
            Estimator::ClosedForm => {
                for s in subsets {
                    let rule = cfg.model.conditional_rule(&cfg.functional, &s)?;
                    conds.insert(s, ConditionalModel::ClosedForm(rule));
                }
            }
            Estimator::Neural => {
                for (s, run) in train_nets(cfg, &subsets)? {
                    traces.insert(s.clone(), run.losses);
                    let net = Arc::new(run.net);
                    conds.insert(s.clone(), ConditionalModel::Neural { net, subset: s });
                }
            }
        }
        Ok(Self {
            cfg,
            eval,
            baseline,
            conds,
            traces,
        })
    }

    fn cond(&self, s: &Subset) -> ConditionalModel {
        if s.is_empty() {
            ConditionalModel::Constant(self.baseline)
        } else {
            self.conds[s].clone()
        }
    }

    pub fn estimate(&self, s: &Subset) -> scoresens::Result<Estimate> {
        let preds = self.cond(s).predict_all(&self.eval)?;
        let value = estimate_from_predictions(&self.cfg.score(), &self.baseline, &preds, &self.eval.response)?;
        Ok(Estimate {
            subset: s.clone(),
            value,
        })
    }

    pub fn sensitivities(&self) -> scoresens::Result<Vec<Estimate>> {
        self.cfg.subsets.iter().map(|s| self.estimate(s)).collect()
    }

    pub fn interactions(&self) -> scoresens::Result<Vec<Interaction>> {
        let mut cache: BTreeMap<Subset, f64> = BTreeMap::new();
        let mut xi = |s: &Subset| -> scoresens::Result<f64> {
            if let Some(v) = cache.get(s) {
                return Ok(*v);
            }
            let v = self.estimate(s)?.value.value;
            cache.insert(s.clone(), v);
            Ok(v)
        };
        self.cfg
            .interactions
            .iter()
            .map(|(a, b)| {
                let (xa, xb, xj) = (xi(a)?, xi(b)?, xi(&a.union(b))?);
                Ok(Interaction {
                    a: a.clone(),
                    b: b.clone(),
                    joint: xj,
                    xi_a: xa,
                    xi_b: xb,
                    value: interaction_information(xj, xa, xb),
                })
            })
            .collect()
    }

    pub fn murphy(&self) -> scoresens::Result<Option<MurphyCurve>> {
        let Some(m) = &self.cfg.murphy else { return Ok(None) };
        let grid = self
            .cfg
            .murphy_grid(&self.eval.response)?
            .expect("murphy section present");
        let conds: Vec<ConditionalModel> = self.cfg.subsets.iter().map(|s| self.cond(s)).collect();
        let input = MurphyInput {
            functional: self.cfg.functional,
            baseline: self.baseline,
            conds: &conds,
            eval: &self.eval,
        };
        let curve = match (m.axis, m.family) {
            (MurphyAxis::Theta, _) => murphy_elementary(&input, &grid)?,
            (MurphyAxis::B, Some(family)) => murphy_homogeneous_with(&input, &grid, family)?,
            (MurphyAxis::B, None) => murphy_homogeneous(&input, &grid)?,
        };
        Ok(Some(curve))
    }
}

#[derive(Debug, Clone)]
pub struct Interaction {
    pub a: Subset,
    pub b: Subset,
    pub joint: f64,
    pub xi_a: f64,
    pub xi_b: f64,
    pub value: f64,
}

/// Trains one net per information set, in parallel.
pub fn train_nets(cfg: &ExperimentConfig, subsets: &[Subset]) -> scoresens::Result<Vec<(Subset, TrainingRun)>> {
    let score = cfg.score();
    subsets
        .par_iter()
        .map(|s| {
            let seed = net_seed(cfg, s);
            let train_cfg = scoresens::TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let run = train(&cfg.model, s, &score, &cfg.net_config(s, seed), &train_cfg)?;
            Ok((s.clone(), run))
        })
        .collect()
}
