//! Accelerator configurations, the searchable parameter space, and the area model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PE_MIN: u32 = 3;
pub const PE_MAX: u32 = 64;
pub const CACHE_MIN_KB: u32 = 64;
pub const CACHE_MAX_KB: u32 = 528;
pub const CACHE_STEP_KB: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataflow {
    WS,
    OS,
    RS,
}

impl Dataflow {
    pub const ALL: [Dataflow; 3] = [Dataflow::WS, Dataflow::OS, Dataflow::RS];
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dataflow::WS => "WS",
            Dataflow::OS => "OS",
            Dataflow::RS => "RS",
        };
        f.write_str(s)
    }
}

impl FromStr for Dataflow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "WS" => Ok(Dataflow::WS),
            "OS" => Ok(Dataflow::OS),
            "RS" => Ok(Dataflow::RS),
            other => Err(Error::Parse(format!("unknown dataflow {other:?}"))),
        }
    }
}

/// One of the five tile loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LoopDim {
    Batch,
    InChannel,
    OutChannel,
    OutHeight,
    OutWidth,
}

impl LoopDim {
    pub const ALL: [LoopDim; 5] = [
        LoopDim::Batch,
        LoopDim::InChannel,
        LoopDim::OutChannel,
        LoopDim::OutHeight,
        LoopDim::OutWidth,
    ];

    pub fn letter(self) -> char {
        match self {
            LoopDim::Batch => 'B',
            LoopDim::InChannel => 'I',
            LoopDim::OutChannel => 'O',
            LoopDim::OutHeight => 'H',
            LoopDim::OutWidth => 'W',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        LoopDim::ALL.into_iter().find(|d| d.letter() == c)
    }
}

/// Tile loop nest order, outermost first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LoopOrder([LoopDim; 5]);

impl LoopOrder {
    pub fn new(dims: [LoopDim; 5]) -> Result<Self> {
        let mut seen = [false; 5];
        for d in dims {
            let i = d as usize;
            if seen[i] {
                return Err(Error::Parse(format!("loop order repeats {}", d.letter())));
            }
            seen[i] = true;
        }
        Ok(LoopOrder(dims))
    }

    pub fn dims(&self) -> &[LoopDim; 5] {
        &self.0
    }

    /// Position of `dim` in the nest (0 = outermost).
    pub fn position(&self, dim: LoopDim) -> usize {
        self.0.iter().position(|&d| d == dim).expect("permutation")
    }

    /// All 120 orders, lexicographic in B < I < O < H < W.
    pub fn all() -> Vec<LoopOrder> {
        let mut out = Vec::with_capacity(120);
        let mut cur = Vec::with_capacity(5);
        fn rec(cur: &mut Vec<LoopDim>, out: &mut Vec<LoopOrder>) {
            if cur.len() == 5 {
                out.push(LoopOrder(cur.as_slice().try_into().unwrap()));
                return;
            }
            for d in LoopDim::ALL {
                if !cur.contains(&d) {
                    cur.push(d);
                    rec(cur, out);
                    cur.pop();
                }
            }
        }
        rec(&mut cur, &mut out);
        out
    }
}

impl fmt::Display for LoopOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.0 {
            write!(f, "{}", d.letter())?;
        }
        Ok(())
    }
}

impl FromStr for LoopOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let dims: Vec<LoopDim> = s
            .chars()
            .map(|c| {
                LoopDim::from_letter(c)
                    .ok_or_else(|| Error::Parse(format!("loop order {s:?}: bad letter {c:?}")))
            })
            .collect::<Result<_>>()?;
        let arr: [LoopDim; 5] = dims
            .try_into()
            .map_err(|_| Error::Parse(format!("loop order {s:?} must have 5 letters")))?;
        LoopOrder::new(arr)
    }
}

impl Serialize for LoopOrder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LoopOrder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hardware parameters of one accelerator instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorConfig {
    pub pe_x: u32,
    pub pe_y: u32,
    pub act_cache_kb: u32,
    pub wgt_cache_kb: u32,
    pub out_cache_kb: u32,
    pub dataflow: Dataflow,
    pub loop_order: LoopOrder,
}

impl AcceleratorConfig {
    pub fn pe_count(&self) -> u64 {
        self.pe_x as u64 * self.pe_y as u64
    }

    pub fn total_cache_kb(&self) -> u64 {
        self.act_cache_kb as u64 + self.wgt_cache_kb as u64 + self.out_cache_kb as u64
    }

    /// Sort key: the seven fields in encoding order.
    pub fn key(&self) -> (u32, u32, u32, u32, u32, Dataflow, LoopOrder) {
        (
            self.pe_x,
            self.pe_y,
            self.act_cache_kb,
            self.wgt_cache_kb,
            self.out_cache_kb,
            self.dataflow,
            self.loop_order,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: AcceleratorConfig = serde_json::from_str(text)?;
        let v = validate_config(&cfg);
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn cache_on_grid(kb: u32) -> bool {
    (CACHE_MIN_KB..=CACHE_MAX_KB).contains(&kb) && (kb - CACHE_MIN_KB).is_multiple_of(CACHE_STEP_KB)
}

/// Every violated invariant of `cfg`; empty means valid.
pub fn validate_config(cfg: &AcceleratorConfig) -> Vec<String> {
    let mut v = Vec::new();
    for (name, pe) in [("pe_x", cfg.pe_x), ("pe_y", cfg.pe_y)] {
        if pe < PE_MIN {
            v.push(format!("{name} below {PE_MIN}"));
        } else if pe > PE_MAX {
            v.push(format!("{name} above {PE_MAX}"));
        }
    }
    for (name, kb) in [
        ("act_cache_kb", cfg.act_cache_kb),
        ("wgt_cache_kb", cfg.wgt_cache_kb),
        ("out_cache_kb", cfg.out_cache_kb),
    ] {
        if !(CACHE_MIN_KB..=CACHE_MAX_KB).contains(&kb) {
            v.push(format!("{name} {kb} outside {CACHE_MIN_KB}..={CACHE_MAX_KB} KB"));
        } else if !cache_on_grid(kb) {
            v.push(format!("{name} {kb} not on 16KB grid"));
        }
    }
    v
}

/// Candidate values for each of the seven accelerator fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub pe_x: Vec<u32>,
    pub pe_y: Vec<u32>,
    pub act_cache_kb: Vec<u32>,
    pub wgt_cache_kb: Vec<u32>,
    pub out_cache_kb: Vec<u32>,
    pub dataflow: Vec<Dataflow>,
    pub loop_order: Vec<LoopOrder>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    pe_x: Option<Vec<u32>>,
    pe_y: Option<Vec<u32>>,
    act_cache_kb: Option<Vec<u32>>,
    wgt_cache_kb: Option<Vec<u32>>,
    out_cache_kb: Option<Vec<u32>>,
    dataflow: Option<Vec<Dataflow>>,
    loop_order: Option<Vec<LoopOrder>>,
}

impl ParamSpace {
    /// The complete space: 62 PE sizes per axis, 30 sizes per cache,
    /// three dataflows and 120 loop orders.
    pub fn full() -> Self {
        let pe: Vec<u32> = (PE_MIN..=PE_MAX).collect();
        let cache: Vec<u32> = (CACHE_MIN_KB..=CACHE_MAX_KB).step_by(CACHE_STEP_KB as usize).collect();
        ParamSpace {
            pe_x: pe.clone(),
            pe_y: pe,
            act_cache_kb: cache.clone(),
            wgt_cache_kb: cache.clone(),
            out_cache_kb: cache,
            dataflow: Dataflow::ALL.to_vec(),
            loop_order: LoopOrder::all(),
        }
    }

    pub fn singleton(cfg: &AcceleratorConfig) -> Self {
        ParamSpace {
            pe_x: vec![cfg.pe_x],
            pe_y: vec![cfg.pe_y],
            act_cache_kb: vec![cfg.act_cache_kb],
            wgt_cache_kb: vec![cfg.wgt_cache_kb],
            out_cache_kb: vec![cfg.out_cache_kb],
            dataflow: vec![cfg.dataflow],
            loop_order: vec![cfg.loop_order],
        }
    }

    /// Check that every list is non-empty, duplicate-free and legal.
    pub fn validate(&self) -> Result<()> {
        fn check<T: PartialEq + fmt::Debug>(name: &str, v: &[T]) -> Result<()> {
            if v.is_empty() {
                return Err(Error::InvalidSpace(format!("{name} has no candidates")));
            }
            for (i, x) in v.iter().enumerate() {
                if v[..i].contains(x) {
                    return Err(Error::InvalidSpace(format!("{name} repeats {x:?}")));
                }
            }
            Ok(())
        }
        check("pe_x", &self.pe_x)?;
        check("pe_y", &self.pe_y)?;
        check("act_cache_kb", &self.act_cache_kb)?;
        check("wgt_cache_kb", &self.wgt_cache_kb)?;
        check("out_cache_kb", &self.out_cache_kb)?;
        check("dataflow", &self.dataflow)?;
        check("loop_order", &self.loop_order)?;
        for (name, list) in [("pe_x", &self.pe_x), ("pe_y", &self.pe_y)] {
            if let Some(bad) = list.iter().find(|&&p| !(PE_MIN..=PE_MAX).contains(&p)) {
                return Err(Error::InvalidSpace(format!("{name} candidate {bad} out of range")));
            }
        }
        for (name, list) in [
            ("act_cache_kb", &self.act_cache_kb),
            ("wgt_cache_kb", &self.wgt_cache_kb),
            ("out_cache_kb", &self.out_cache_kb),
        ] {
            if let Some(bad) = list.iter().find(|&&kb| !cache_on_grid(kb)) {
                return Err(Error::InvalidSpace(format!("{name} candidate {bad} not on the cache grid")));
            }
        }
        Ok(())
    }

    /// Parse a space document; omitted fields take the full candidate list.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawSpace = serde_json::from_str(text)?;
        let full = ParamSpace::full();
        let space = ParamSpace {
            pe_x: raw.pe_x.unwrap_or(full.pe_x),
            pe_y: raw.pe_y.unwrap_or(full.pe_y),
            act_cache_kb: raw.act_cache_kb.unwrap_or(full.act_cache_kb),
            wgt_cache_kb: raw.wgt_cache_kb.unwrap_or(full.wgt_cache_kb),
            out_cache_kb: raw.out_cache_kb.unwrap_or(full.out_cache_kb),
            dataflow: raw.dataflow.unwrap_or(full.dataflow),
            loop_order: raw.loop_order.unwrap_or(full.loop_order),
        };
        space.validate()?;
        Ok(space)
    }

    /// Candidate counts per field, in encoding order.
    pub fn head_sizes(&self) -> [usize; 7] {
        [
            self.pe_x.len(),
            self.pe_y.len(),
            self.act_cache_kb.len(),
            self.wgt_cache_kb.len(),
            self.out_cache_kb.len(),
            self.dataflow.len(),
            self.loop_order.len(),
        ]
    }

    pub fn cardinality(&self) -> u128 {
        self.head_sizes().iter().map(|&n| n as u128).product()
    }

    /// Config at per-field candidate indices.
    pub fn config_at(&self, idx: &[usize; 7]) -> AcceleratorConfig {
        AcceleratorConfig {
            pe_x: self.pe_x[idx[0]],
            pe_y: self.pe_y[idx[1]],
            act_cache_kb: self.act_cache_kb[idx[2]],
            wgt_cache_kb: self.wgt_cache_kb[idx[3]],
            out_cache_kb: self.out_cache_kb[idx[4]],
            dataflow: self.dataflow[idx[5]],
            loop_order: self.loop_order[idx[6]],
        }
    }

    /// Per-field candidate indices of `cfg`, if it lies in the space.
    pub fn indices_of(&self, cfg: &AcceleratorConfig) -> Option<[usize; 7]> {
        Some([
            self.pe_x.iter().position(|&v| v == cfg.pe_x)?,
            self.pe_y.iter().position(|&v| v == cfg.pe_y)?,
            self.act_cache_kb.iter().position(|&v| v == cfg.act_cache_kb)?,
            self.wgt_cache_kb.iter().position(|&v| v == cfg.wgt_cache_kb)?,
            self.out_cache_kb.iter().position(|&v| v == cfg.out_cache_kb)?,
            self.dataflow.iter().position(|&v| v == cfg.dataflow)?,
            self.loop_order.iter().position(|&v| v == cfg.loop_order)?,
        ])
    }

    /// Visit every index tuple once, last field varying fastest.
    pub fn iter_indices(&self) -> impl Iterator<Item = [usize; 7]> + '_ {
        let sizes = self.head_sizes();
        let total = self.cardinality();
        let mut cur = [0usize; 7];
        let mut emitted: u128 = 0;
        std::iter::from_fn(move || {
            if emitted >= total {
                return None;
            }
            let out = cur;
            emitted += 1;
            for f in (0..7).rev() {
                cur[f] += 1;
                if cur[f] < sizes[f] {
                    break;
                }
                cur[f] = 0;
            }
            Some(out)
        })
    }

    pub fn iter_configs(&self) -> impl Iterator<Item = AcceleratorConfig> + '_ {
        self.iter_indices().map(move |i| self.config_at(&i))
    }
}

/// Free-function form of [`ParamSpace::cardinality`].
pub fn space_cardinality(space: &ParamSpace) -> u128 {
    space.cardinality()
}

/// Area model coefficients in mm².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaConstants {
    pub a_pe: f64,
    pub a_kb: f64,
    pub a_fixed: f64,
}

impl Default for AreaConstants {
    fn default() -> Self {
        AreaConstants {
            a_pe: 0.002,
            a_kb: 0.0005,
            a_fixed: 0.1,
        }
    }
}

/// Chip area in mm²: PE array, the three caches and a fixed overhead.
pub fn area(cfg: &AcceleratorConfig, c: &AreaConstants) -> f64 {
    cfg.pe_count() as f64 * c.a_pe + cfg.total_cache_kb() as f64 * c.a_kb + c.a_fixed
}
