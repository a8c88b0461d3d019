//! Analytical energy / latency / area estimator.
//!
//! An operator is executed tile by tile. Compute time follows from how the
//! tile maps onto the PE array under the configured dataflow, memory time
//! from the DRAM traffic implied by the tile loop order, and the two overlap
//! perfectly. Operand widths below 8 bits speed up the MAC array
//! BitFusion-style by `(8 / act_bits) * (8 / wgt_bits)`.
//!
//! Tile byte sizes use each tile extent clipped to the operator dimension,
//! so a tile that covers a whole dimension costs exactly that dimension.

use serde::{Deserialize, Serialize};

use crate::accel::{area, AcceleratorConfig, AreaConstants, Dataflow, LoopDim, LoopOrder};
use crate::error::{Error, Result};
use crate::workload::{bits_to_bytes, OperatorDescriptor, PSUM_BYTES};

/// Largest tile exponent: tiles are `2^0 ..= 2^10`.
pub const MAX_TILE_LOG2: u32 = 10;
pub const MAX_TILE: u32 = 1 << MAX_TILE_LOG2;

/// Tile sizes along output channel, input channel, output column and output row.
/// The batch dimension is always tiled at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TilingPlan {
    pub t_oc: u32,
    pub t_ic: u32,
    pub t_ow: u32,
    pub t_oh: u32,
}

impl TilingPlan {
    pub fn new(t_oc: u32, t_ic: u32, t_ow: u32, t_oh: u32) -> Result<Self> {
        let t = TilingPlan { t_oc, t_ic, t_ow, t_oh };
        t.check_sizes()?;
        Ok(t)
    }

    pub fn check_sizes(&self) -> Result<()> {
        for (name, v) in [
            ("t_oc", self.t_oc),
            ("t_ic", self.t_ic),
            ("t_ow", self.t_ow),
            ("t_oh", self.t_oh),
        ] {
            if !v.is_power_of_two() || v > MAX_TILE {
                return Err(Error::InfeasibleTiling(format!(
                    "{name} = {v} is not a power of two in 1..={MAX_TILE}"
                )));
            }
        }
        Ok(())
    }

    /// Tile encoding vector in the order output channel, input channel,
    /// output column, output row.
    pub fn encode(&self) -> [u32; 4] {
        [self.t_oc, self.t_ic, self.t_ow, self.t_oh]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConstants {
    pub f_clk_mhz: f64,
    pub dram_bw_bytes_per_cycle: f64,
    /// MAC energy at 8x8 bits; scaled by `act_bits * wgt_bits / 64`.
    pub e_mac_pj: f64,
    pub e_sram_pj_per_byte: f64,
    pub e_dram_pj_per_byte: f64,
    pub area: AreaConstants,
}

impl Default for CostConstants {
    fn default() -> Self {
        CostConstants {
            f_clk_mhz: 200.0,
            dram_bw_bytes_per_cycle: 16.0,
            e_mac_pj: 1.0,
            e_sram_pj_per_byte: 1.0,
            e_dram_pj_per_byte: 160.0,
            area: AreaConstants::default(),
        }
    }
}

impl CostConstants {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("f_clk_mhz", self.f_clk_mhz),
            ("dram_bw_bytes_per_cycle", self.dram_bw_bytes_per_cycle),
            ("e_mac_pj", self.e_mac_pj),
            ("e_sram_pj_per_byte", self.e_sram_pj_per_byte),
            ("e_dram_pj_per_byte", self.e_dram_pj_per_byte),
            ("area.a_pe", self.area.a_pe),
            ("area.a_kb", self.area.a_kb),
            ("area.a_fixed", self.area.a_fixed),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative")));
            }
        }
        if self.f_clk_mhz <= 0.0 || self.dram_bw_bytes_per_cycle <= 0.0 {
            return Err(Error::InvalidArgument(
                "clock and DRAM bandwidth must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: CostConstants = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub energy_mj: f64,
    pub latency_ms: f64,
    pub cycles: u64,
    pub dram_bytes: u64,
    pub area_mm2: f64,
}

/// Weights of the scalar hardware cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub lambda_e: f64,
    pub lambda_l: f64,
    pub lambda_a: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            lambda_e: 0.33,
            lambda_l: 0.33,
            lambda_a: 0.33,
        }
    }
}

/// Which operand a tile loop nest moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Act,
    Wgt,
    Out,
}

impl Operand {
    pub const ALL: [Operand; 3] = [Operand::Act, Operand::Wgt, Operand::Out];

    /// Tile loops that select a distinct tile of this operand.
    pub fn depends_on(self, dim: LoopDim) -> bool {
        use LoopDim::*;
        match self {
            Operand::Act => matches!(dim, InChannel | OutHeight | OutWidth),
            Operand::Wgt => matches!(dim, InChannel | OutChannel),
            Operand::Out => matches!(dim, OutChannel | OutHeight | OutWidth),
        }
    }
}

/// Operand held resident under each dataflow.
pub fn stationary_operand(df: Dataflow) -> Operand {
    match df {
        Dataflow::WS => Operand::Wgt,
        Dataflow::OS => Operand::Out,
        Dataflow::RS => Operand::Act,
    }
}

/// Number of tiles along each loop, indexed by `LoopDim as usize`.
pub fn loop_extents(op: &OperatorDescriptor, tile: &TilingPlan) -> [u64; 5] {
    let mut e = [1u64; 5];
    e[LoopDim::InChannel as usize] = (op.in_channels() as u64).div_ceil(tile.t_ic as u64);
    e[LoopDim::OutChannel as usize] = (op.out_channels() as u64).div_ceil(tile.t_oc as u64);
    e[LoopDim::OutHeight as usize] = (op.out_rows() as u64).div_ceil(tile.t_oh as u64);
    e[LoopDim::OutWidth as usize] = (op.out_rows() as u64).div_ceil(tile.t_ow as u64);
    e
}

/// Bytes moved per fetch of one tile of each operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileBytes {
    pub act: u64,
    pub wgt: u64,
    pub out: u64,
}

impl TileBytes {
    pub fn get(&self, x: Operand) -> u64 {
        match x {
            Operand::Act => self.act,
            Operand::Wgt => self.wgt,
            Operand::Out => self.out,
        }
    }
}

pub fn tile_bytes(op: &OperatorDescriptor, tile: &TilingPlan) -> TileBytes {
    let k = op.kernel() as u64;
    let s = op.stride() as u64;
    let ic = tile.t_ic.min(op.in_channels()) as u64;
    let oc = tile.t_oc.min(op.out_channels()) as u64;
    let ow = tile.t_ow.min(op.out_rows()) as u64;
    let oh = tile.t_oh.min(op.out_rows()) as u64;
    let in_w = (ow - 1) * s + k;
    let in_h = (oh - 1) * s + k;
    TileBytes {
        act: bits_to_bytes(ic * in_w * in_h * op.act_bits() as u64),
        wgt: bits_to_bytes(ic * oc * k * k * op.wgt_bits() as u64),
        out: PSUM_BYTES * oc * ow * oh,
    }
}

/// Whether every operand tile fits its cache.
pub fn tile_fits(op: &OperatorDescriptor, cfg: &AcceleratorConfig, tile: &TilingPlan) -> bool {
    let b = tile_bytes(op, tile);
    b.act <= cfg.act_cache_kb as u64 * 1024
        && b.wgt <= cfg.wgt_cache_kb as u64 * 1024
        && b.out <= cfg.out_cache_kb as u64 * 1024
}

fn check_feasible(op: &OperatorDescriptor, cfg: &AcceleratorConfig, tile: &TilingPlan) -> Result<()> {
    tile.check_sizes()?;
    if !tile_fits(op, cfg, tile) {
        let b = tile_bytes(op, tile);
        return Err(Error::InfeasibleTiling(format!(
            "tile {:?} needs act {} B / wgt {} B / out {} B, caches hold {}/{}/{} KB",
            tile.encode(),
            b.act,
            b.wgt,
            b.out,
            cfg.act_cache_kb,
            cfg.wgt_cache_kb,
            cfg.out_cache_kb
        )));
    }
    Ok(())
}

/// Operand-width speedup of a bit-flexible MAC array.
pub fn bit_speedup(op: &OperatorDescriptor) -> u64 {
    (8 / op.act_bits() as u64) * (8 / op.wgt_bits() as u64)
}

/// Compute cycles of the whole operator.
pub fn compute_cycles(
    op: &OperatorDescriptor,
    cfg: &AcceleratorConfig,
    tile: &TilingPlan,
) -> Result<u64> {
    check_feasible(op, cfg, tile)?;
    Ok(compute_cycles_unchecked(op, cfg, tile))
}

fn compute_cycles_unchecked(op: &OperatorDescriptor, cfg: &AcceleratorConfig, tile: &TilingPlan) -> u64 {
    let k = op.kernel() as u64;
    let (d1, d2) = match cfg.dataflow {
        Dataflow::WS => (tile.t_ic as u64, tile.t_oc as u64),
        Dataflow::OS => (tile.t_ow as u64, tile.t_oh as u64),
        Dataflow::RS => (k, tile.t_oh as u64),
    };
    let tile_macs = tile.t_ic as u64 * tile.t_oc as u64 * tile.t_ow as u64 * tile.t_oh as u64 * k * k;
    let passes = d1.div_ceil(cfg.pe_x as u64) * d2.div_ceil(cfg.pe_y as u64);
    let per_tile = (passes * (tile_macs / (d1 * d2))).div_ceil(bit_speedup(op));
    let n_tiles: u64 = loop_extents(op, tile).iter().product();
    per_tile * n_tiles
}

/// DRAM bytes per operand for one operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramTraffic {
    pub act: u64,
    pub wgt: u64,
    pub out: u64,
    pub total: u64,
}

/// Number of tile fetches of `x` under the loop nest.
///
/// A non-resident operand keeps up to `capacity` tiles in its cache. Walking
/// the nest from the innermost loop outward, loops are absorbed while the
/// distinct tiles they touch still fit; data touched inside the absorbed
/// loops is reused, every iteration of the remaining outer loops fetches
/// afresh. With `capacity == 1` this is the single-buffer rule: every
/// iteration of the loops down to the deepest dependent loop that takes more
/// than one step triggers a fetch. The resident operand is fetched once per
/// distinct tile.
pub fn fetch_count(
    order: &LoopOrder,
    extents: &[u64; 5],
    x: Operand,
    stationary: bool,
    capacity: u64,
) -> u64 {
    if stationary {
        return unique_tiles(extents, x);
    }
    let dims = order.dims();
    let mut working_set = 1u64;
    let mut frontier = dims.len();
    for (p, &d) in dims.iter().enumerate().rev() {
        let grown = if x.depends_on(d) {
            working_set * extents[d as usize]
        } else {
            working_set
        };
        if grown > capacity.max(1) {
            break;
        }
        working_set = grown;
        frontier = p;
    }
    let outer: u64 = dims[..frontier].iter().map(|&d| extents[d as usize]).product();
    outer * working_set
}

/// Whole tiles of `tile_bytes` that fit in a cache of `cache_kb`.
pub fn cache_capacity_tiles(cache_kb: u32, tile_bytes: u64) -> u64 {
    (cache_kb as u64 * 1024) / tile_bytes.max(1)
}

pub fn unique_tiles(extents: &[u64; 5], x: Operand) -> u64 {
    LoopDim::ALL
        .iter()
        .filter(|&&d| x.depends_on(d))
        .map(|&d| extents[d as usize])
        .product()
}

pub fn dram_traffic(
    op: &OperatorDescriptor,
    cfg: &AcceleratorConfig,
    tile: &TilingPlan,
) -> Result<DramTraffic> {
    check_feasible(op, cfg, tile)?;
    Ok(dram_traffic_unchecked(op, cfg, tile))
}

fn dram_traffic_unchecked(op: &OperatorDescriptor, cfg: &AcceleratorConfig, tile: &TilingPlan) -> DramTraffic {
    let extents = loop_extents(op, tile);
    let bytes = tile_bytes(op, tile);
    let resident = stationary_operand(cfg.dataflow);
    let fetches = |x: Operand| {
        let cache_kb = match x {
            Operand::Act => cfg.act_cache_kb,
            Operand::Wgt => cfg.wgt_cache_kb,
            Operand::Out => cfg.out_cache_kb,
        };
        let capacity = cache_capacity_tiles(cache_kb, bytes.get(x));
        fetch_count(&cfg.loop_order, &extents, x, x == resident, capacity)
    };

    let act = fetches(Operand::Act) * bytes.act;
    let wgt = fetches(Operand::Wgt) * bytes.wgt;
    // Outputs are written back on eviction and read again on every revisit.
    let unique = unique_tiles(&extents, Operand::Out);
    let revisits = fetches(Operand::Out) / unique;
    let unique_bytes = unique * bytes.out;
    let out = unique_bytes + 2 * unique_bytes * (revisits - 1);
    DramTraffic {
        act,
        wgt,
        out,
        total: act + wgt + out,
    }
}

/// Full cost of running `op` on `cfg` with `tile`.
pub fn estimate_cost(
    op: &OperatorDescriptor,
    cfg: &AcceleratorConfig,
    tile: &TilingPlan,
    c: &CostConstants,
) -> Result<CostBreakdown> {
    check_feasible(op, cfg, tile)?;
    Ok(estimate_cost_unchecked(op, cfg, tile, c))
}

/// [`estimate_cost`] for a tile already known to be feasible.
pub(crate) fn estimate_cost_unchecked(
    op: &OperatorDescriptor,
    cfg: &AcceleratorConfig,
    tile: &TilingPlan,
    c: &CostConstants,
) -> CostBreakdown {
    let fp = op.footprint();
    let compute = compute_cycles_unchecked(op, cfg, tile);
    let dram = dram_traffic_unchecked(op, cfg, tile).total;
    let memory = (dram as f64 / c.dram_bw_bytes_per_cycle).ceil() as u64;
    let cycles = compute.max(memory);

    let (wa, wb) = (op.act_bits() as f64, op.wgt_bits() as f64);
    let macs = fp.macs as f64;
    let ic_steps = (op.in_channels() as u64).div_ceil(tile.t_ic as u64);
    let sram_bytes =
        macs * (wa + wb) / 8.0 + (2 * PSUM_BYTES * fp.out_elems * ic_steps) as f64;
    let energy_pj = macs * c.e_mac_pj * (wa * wb) / 64.0
        + sram_bytes * c.e_sram_pj_per_byte
        + dram as f64 * c.e_dram_pj_per_byte;

    CostBreakdown {
        energy_mj: energy_pj * 1e-9,
        latency_ms: cycles as f64 / (c.f_clk_mhz * 1000.0),
        cycles,
        dram_bytes: dram,
        area_mm2: area(cfg, &c.area),
    }
}

/// Weighted sum of energy (mJ), latency (ms) and area (mm²).
pub fn hw_cost(c: &CostBreakdown, w: &CostWeights) -> f64 {
    w.lambda_e * c.energy_mj + w.lambda_l * c.latency_ms + w.lambda_a * c.area_mm2
}

/// Energy-delay-area product in J·s·m².
pub fn edap(c: &CostBreakdown) -> f64 {
    (c.energy_mj * 1e-3) * (c.latency_ms * 1e-3) * (c.area_mm2 * 1e-6)
}

/// Sequential composition: energies, latencies, cycles and traffic add up,
/// area is that of the single accelerator.
pub fn aggregate<'a>(parts: impl IntoIterator<Item = &'a CostBreakdown>, area_mm2: f64) -> CostBreakdown {
    let mut total = CostBreakdown {
        area_mm2,
        ..Default::default()
    };
    for p in parts {
        total.energy_mj += p.energy_mj;
        total.latency_ms += p.latency_ms;
        total.cycles += p.cycles;
        total.dram_bytes += p.dram_bytes;
    }
    total
}
