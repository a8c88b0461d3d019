use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConfigEvaluator, Scored, SearchBudget};
use crate::accel::{AcceleratorConfig, ParamSpace};
use crate::costmodel::{CostConstants, CostWeights};
use crate::error::{Error, Result};
use crate::workload::SubnetDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealTraceRow {
    pub step: usize,
    pub temperature: f64,
    pub current_cost: f64,
    pub best_cost: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealOutcome {
    pub best: Scored,
    pub trace: Vec<AnnealTraceRow>,
    pub evaluations: usize,
}

/// Simulated annealing over per-field indices.
///
/// A move resamples one field (chosen uniformly among fields with more than
/// one candidate) to a different candidate. Uphill moves are accepted with
/// probability `exp(-d / T)`, where `d` is the cost increase relative to the
/// current cost, so the temperature is scale free. Infeasible proposals are
/// rejected. Every proposal counts against `max_evaluations`.
pub fn anneal_search(
    subnet: &SubnetDescriptor,
    space: &ParamSpace,
    constants: &CostConstants,
    weights: &CostWeights,
    budget: &SearchBudget,
) -> Result<AnnealOutcome> {
    anneal_search_from(subnet, space, constants, weights, budget, None)
}

/// [`anneal_search`] starting from `start` when it lies in `space` and is
/// feasible, otherwise from a random feasible point.
pub fn anneal_search_from(
    subnet: &SubnetDescriptor,
    space: &ParamSpace,
    constants: &CostConstants,
    weights: &CostWeights,
    budget: &SearchBudget,
    start: Option<&AcceleratorConfig>,
) -> Result<AnnealOutcome> {
    space.validate()?;
    budget.validate()?;
    let sizes = space.head_sizes();
    let movable: Vec<usize> = (0..7).filter(|&f| sizes[f] > 1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut eval = ConfigEvaluator::new(subnet, constants, weights);

    let mut current = None;
    if let Some(idx) = start.and_then(|c| space.indices_of(c)) {
        current = eval.evaluate(&space.config_at(&idx))?.map(|s| (idx, s));
    }
    while current.is_none() && eval.calls() < budget.max_evaluations {
        let idx: [usize; 7] = std::array::from_fn(|f| rng.gen_range(0..sizes[f]));
        if let Some(s) = eval.evaluate(&space.config_at(&idx))? {
            current = Some((idx, s));
        }
    }
    let (mut cur_idx, mut cur) = current.ok_or(Error::NoFeasibleConfig)?;
    let mut best = cur;
    let mut temperature = budget.initial_temperature;
    let mut trace = Vec::new();
    let mut step = 0;

    while eval.calls() < budget.max_evaluations && !movable.is_empty() {
        let field = movable[rng.gen_range(0..movable.len())];
        let mut next_idx = cur_idx;
        // uniform over the other candidates of this field
        let shift = rng.gen_range(1..sizes[field]);
        next_idx[field] = (cur_idx[field] + shift) % sizes[field];
        let u: f64 = rng.gen();
        let mut accepted = false;
        if let Some(next) = eval.evaluate(&space.config_at(&next_idx))? {
            let delta = (next.cost - cur.cost) / cur.cost.abs().max(f64::MIN_POSITIVE);
            accepted = delta < 0.0 || (temperature > 0.0 && u < (-delta / temperature).exp());
            if accepted {
                cur_idx = next_idx;
                cur = next;
                if cur.cost < best.cost || (cur.cost == best.cost && cur.config.key() < best.config.key()) {
                    best = cur;
                }
            }
        }
        trace.push(AnnealTraceRow {
            step,
            temperature,
            current_cost: cur.cost,
            best_cost: best.cost,
            accepted,
        });
        temperature *= budget.cooling_rate;
        step += 1;
    }

    Ok(AnnealOutcome {
        best,
        trace,
        evaluations: eval.calls(),
    })
}
