//! Per-operator tiling search.
//!
//! [`batch_search`] lays every candidate tiling of an operator out as one
//! flat array, scores the whole array in a single data-parallel pass and
//! reduces it with an index-ordered argmin, so the winner never depends on
//! the number of worker threads. [`oracle_search`] is the plain sequential
//! reference used to check it.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accel::AcceleratorConfig;
use crate::costmodel::{
    aggregate, estimate_cost_unchecked, hw_cost, tile_fits, CostBreakdown, CostConstants,
    CostWeights, TilingPlan, MAX_TILE,
};
use crate::error::{Error, Result};
use crate::workload::{OperatorDescriptor, SubnetDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TilingSearchResult {
    pub best: TilingPlan,
    pub cost: CostBreakdown,
    pub n_candidates: usize,
    pub n_feasible: usize,
    pub wall_time_s: f64,
}

/// Power-of-two tile sizes for a dimension, up to the first one covering it.
fn tile_sizes(dim: u32) -> Vec<u32> {
    let top = dim.next_power_of_two().min(MAX_TILE);
    std::iter::successors(Some(1u32), |&t| (t < top).then_some(t * 2)).collect()
}

/// Every power-of-two tiling of `op`, before the cache-fit filter, in
/// lexicographic `(t_oc, t_ic, t_oh, t_ow)` order.
pub fn raw_tilings(op: &OperatorDescriptor) -> Vec<TilingPlan> {
    let oc = tile_sizes(op.out_channels());
    let ic = tile_sizes(op.in_channels());
    let rows = tile_sizes(op.out_rows());
    let mut out = Vec::with_capacity(oc.len() * ic.len() * rows.len() * rows.len());
    for &t_oc in &oc {
        for &t_ic in &ic {
            for &t_oh in &rows {
                for &t_ow in &rows {
                    out.push(TilingPlan { t_oc, t_ic, t_ow, t_oh });
                }
            }
        }
    }
    out
}

/// Tilings of `op` whose operand tiles all fit the caches of `cfg`.
pub fn enumerate_tilings(op: &OperatorDescriptor, cfg: &AcceleratorConfig) -> Vec<TilingPlan> {
    raw_tilings(op)
        .into_iter()
        .filter(|t| tile_fits(op, cfg, t))
        .collect()
}

/// Tiling objective: area does not depend on the tiling, so it is dropped.
fn tiling_weights(w: &CostWeights) -> CostWeights {
    CostWeights {
        lambda_a: 0.0,
        ..*w
    }
}

/// Find the cheapest feasible tiling of `op` on `cfg`.
pub fn batch_search(
    op: &OperatorDescriptor,
    cfg: &AcceleratorConfig,
    constants: &CostConstants,
    weights: &CostWeights,
) -> Result<TilingSearchResult> {
    let start = Instant::now();
    let raw = raw_tilings(op);
    let n_candidates = raw.len();
    let batch: Vec<TilingPlan> = raw.into_iter().filter(|t| tile_fits(op, cfg, t)).collect();
    if batch.is_empty() {
        return Err(Error::NoFeasibleTiling { op_index: 0 });
    }
    let w = tiling_weights(weights);
    let costs: Vec<CostBreakdown> = batch
        .par_iter()
        .with_min_len(64)
        .map(|t| estimate_cost_unchecked(op, cfg, t, constants))
        .collect();
    let scores: Vec<f64> = costs.iter().map(|c| hw_cost(c, &w)).collect();
    let best = argmin_first(&scores);
    Ok(TilingSearchResult {
        best: batch[best],
        cost: costs[best],
        n_candidates,
        n_feasible: batch.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Index of the smallest score; the earliest index wins ties.
fn argmin_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

/// Sequential reference for [`batch_search`]: visits candidates one by one.
pub fn oracle_search(
    op: &OperatorDescriptor,
    cfg: &AcceleratorConfig,
    constants: &CostConstants,
    weights: &CostWeights,
) -> Result<TilingSearchResult> {
    let start = Instant::now();
    let w = tiling_weights(weights);
    let mut n_candidates = 0;
    let mut n_feasible = 0;
    let mut best: Option<(TilingPlan, CostBreakdown, f64)> = None;
    for tile in raw_tilings(op) {
        n_candidates += 1;
        let cost = match crate::costmodel::estimate_cost(op, cfg, &tile, constants) {
            Ok(c) => c,
            Err(Error::InfeasibleTiling(_)) => continue,
            Err(e) => return Err(e),
        };
        n_feasible += 1;
        let score = hw_cost(&cost, &w);
        if best.as_ref().is_none_or(|&(_, _, s)| score < s) {
            best = Some((tile, cost, score));
        }
    }
    let (best, cost, _) = best.ok_or(Error::NoFeasibleTiling { op_index: 0 })?;
    Ok(TilingSearchResult {
        best,
        cost,
        n_candidates,
        n_feasible,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetMapping {
    pub per_op: Vec<TilingSearchResult>,
    pub total: CostBreakdown,
    pub wall_time_s: f64,
}

/// Map every operator of a subnet onto `cfg`, executed one after another.
pub fn map_subnet(
    subnet: &SubnetDescriptor,
    cfg: &AcceleratorConfig,
    constants: &CostConstants,
    weights: &CostWeights,
) -> Result<SubnetMapping> {
    let start = Instant::now();
    let per_op = subnet
        .operators()
        .iter()
        .enumerate()
        .map(|(i, op)| {
            batch_search(op, cfg, constants, weights).map_err(|e| match e {
                Error::NoFeasibleTiling { .. } => Error::NoFeasibleTiling { op_index: i },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = aggregate(
        per_op.iter().map(|r| &r.cost),
        crate::accel::area(cfg, &constants.area),
    );
    Ok(SubnetMapping {
        per_op,
        total,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Write one CSV row per operator:
/// `op_index,t_oc,t_ic,t_ow,t_oh,energy_mj,latency_ms,dram_bytes`.
pub fn write_tiling_csv<W: std::io::Write>(w: W, results: &[TilingSearchResult]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "op_index",
        "t_oc",
        "t_ic",
        "t_ow",
        "t_oh",
        "energy_mj",
        "latency_ms",
        "dram_bytes",
    ])
    .map_err(csv_err)?;
    for (i, r) in results.iter().enumerate() {
        wtr.write_record([
            i.to_string(),
            r.best.t_oc.to_string(),
            r.best.t_ic.to_string(),
            r.best.t_ow.to_string(),
            r.best.t_oh.to_string(),
            r.cost.energy_mj.to_string(),
            r.cost.latency_ms.to_string(),
            r.cost.dram_bytes.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
