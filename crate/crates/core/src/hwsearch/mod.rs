//! Accelerator parameter search for a fixed subnet.
//!
//! Three engines share one scoring path (map every operator with
//! [`batch_search`](crate::batchtile::batch_search), then scalarize with
//! [`hw_cost`]): an exhaustive oracle for small spaces, simulated annealing,
//! and a generator network trained with a score-function gradient.

mod anneal;
mod generator;
pub mod net;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use anneal::{anneal_search, anneal_search_from, AnnealOutcome, AnnealTraceRow};
pub use generator::{
    generator_forward, train_generator, train_policy, GeneratorOutcome, GeneratorOutput,
    PolicyOutcome, TrainTraceRow, GRADIENT_ESTIMATOR,
};
pub use net::GeneratorNet;

use crate::accel::{AcceleratorConfig, ParamSpace};
use crate::batchtile::map_subnet;
use crate::costmodel::{hw_cost, CostBreakdown, CostConstants, CostWeights};
use crate::csq::GumbelMode;
use crate::error::{Error, Result};
use crate::workload::SubnetDescriptor;

/// Largest space the exhaustive engine will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

/// Per-field normalizers for operator features: kernel, stride, output rows,
/// input channels, output channels, activation bits, weight bits.
pub const FEATURE_NORMALIZERS: [f64; 7] = [7.0, 4.0, 224.0, 1024.0, 1024.0, 8.0, 8.0];
/// Scale applied to the operator count.
pub const COUNT_SCALE: f64 = 1.0 / 64.0;
pub const FEATURE_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchBudget {
    pub max_evaluations: usize,
    pub seed: u64,
    pub initial_temperature: f64,
    pub cooling_rate: f64,
    pub steps: usize,
    pub samples_per_step: usize,
    pub learning_rate: f64,
    pub gumbel_tau: f64,
    pub tau_decay: f64,
    pub tau_min: f64,
    pub baseline_decay: f64,
    pub hidden: usize,
    pub gumbel_mode: GumbelMode,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_evaluations: 500,
            seed: 0,
            initial_temperature: 0.1,
            cooling_rate: 0.97,
            steps: 50,
            samples_per_step: 10,
            learning_rate: 0.01,
            gumbel_tau: 5.0,
            tau_decay: 0.95,
            tau_min: 0.5,
            baseline_decay: 0.9,
            hidden: net::DEFAULT_HIDDEN,
            gumbel_mode: GumbelMode::Standard,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        if self.max_evaluations == 0 || self.steps == 0 || self.samples_per_step == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("search budget counts must be positive".into()));
        }
        if !(self.gumbel_tau > 0.0) || !(self.tau_min > 0.0) || !(self.tau_decay > 0.0) {
            return Err(Error::InvalidArgument("gumbel tau and its schedule must be positive".into()));
        }
        if !(self.initial_temperature >= 0.0) || !(0.0..=1.0).contains(&self.cooling_rate) {
            return Err(Error::InvalidArgument("annealing temperature must be >= 0 and cooling in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.baseline_decay) || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("baseline decay must be in [0, 1], learning rate positive".into()));
        }
        Ok(())
    }
}

/// Mean-pooled normalized operator encodings plus the scaled operator count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetFeatures(pub [f64; FEATURE_DIM]);

pub fn featurize_subnet(subnet: &SubnetDescriptor) -> SubnetFeatures {
    let mut f = [0.0; FEATURE_DIM];
    let n = subnet.len() as f64;
    for op in subnet.operators() {
        for (i, &v) in op.encode().iter().enumerate() {
            f[i] += (v as f64 / FEATURE_NORMALIZERS[i]).min(1.0);
        }
    }
    for v in &mut f[..7] {
        *v /= n;
    }
    f[7] = n * COUNT_SCALE;
    SubnetFeatures(f)
}

/// Scored accelerator config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub config: AcceleratorConfig,
    pub cost: f64,
    pub breakdown: CostBreakdown,
}

/// Memoizing scorer: subnet cost of a config, `None` when some operator has
/// no feasible tiling.
pub struct ConfigEvaluator<'a> {
    subnet: &'a SubnetDescriptor,
    constants: &'a CostConstants,
    weights: &'a CostWeights,
    memo: HashMap<AcceleratorConfig, Option<CostBreakdown>>,
    calls: usize,
}

impl<'a> ConfigEvaluator<'a> {
    pub fn new(subnet: &'a SubnetDescriptor, constants: &'a CostConstants, weights: &'a CostWeights) -> Self {
        ConfigEvaluator {
            subnet,
            constants,
            weights,
            memo: HashMap::new(),
            calls: 0,
        }
    }

    pub fn evaluate(&mut self, cfg: &AcceleratorConfig) -> Result<Option<Scored>> {
        self.calls += 1;
        let breakdown = match self.memo.get(cfg) {
            Some(b) => *b,
            None => {
                let b = score_config(self.subnet, cfg, self.constants, self.weights)?;
                self.memo.insert(*cfg, b);
                b
            }
        };
        Ok(breakdown.map(|b| Scored {
            config: *cfg,
            cost: hw_cost(&b, self.weights),
            breakdown: b,
        }))
    }

    /// Number of `evaluate` calls so far, memo hits included.
    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn distinct(&self) -> usize {
        self.memo.len()
    }
}

fn score_config(
    subnet: &SubnetDescriptor,
    cfg: &AcceleratorConfig,
    constants: &CostConstants,
    weights: &CostWeights,
) -> Result<Option<CostBreakdown>> {
    match map_subnet(subnet, cfg, constants, weights) {
        Ok(m) => Ok(Some(m.total)),
        Err(Error::NoFeasibleTiling { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Global optimum over `space`; ties go to the lexicographically smallest
/// seven-field tuple.
pub fn exhaustive_search(
    subnet: &SubnetDescriptor,
    space: &ParamSpace,
    constants: &CostConstants,
    weights: &CostWeights,
) -> Result<Scored> {
    space.validate()?;
    let cardinality = space.cardinality();
    if cardinality > EXHAUSTIVE_LIMIT {
        return Err(Error::SpaceTooLarge {
            cardinality,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let configs: Vec<AcceleratorConfig> = space.iter_configs().collect();
    let scored: Vec<Option<CostBreakdown>> = configs
        .par_iter()
        .map(|cfg| score_config(subnet, cfg, constants, weights))
        .collect::<Result<_>>()?;
    let mut best: Option<Scored> = None;
    for (cfg, b) in configs.iter().zip(scored) {
        let Some(b) = b else { continue };
        let cost = hw_cost(&b, weights);
        let better = match &best {
            None => true,
            Some(cur) => cost < cur.cost || (cost == cur.cost && cfg.key() < cur.config.key()),
        };
        if better {
            best = Some(Scored {
                config: *cfg,
                cost,
                breakdown: b,
            });
        }
    }
    best.ok_or(Error::NoFeasibleConfig)
}
