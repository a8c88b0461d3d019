//! Joint objective plumbing: pick the current subnet from architecture
//! parameters, search hardware for it, and report the hardware term of the
//! Lagrangian for an external trainer.

use serde::{Deserialize, Serialize};

use crate::accel::{AcceleratorConfig, ParamSpace};
use crate::batchtile::map_subnet;
use crate::costmodel::{hw_cost, CostBreakdown, CostConstants, CostWeights, TilingPlan};
use crate::csq::{argmax, DEFAULT_BITS};
use crate::error::{Error, Result};
use crate::hwsearch::{anneal_search_from, exhaustive_search, train_generator, GeneratorNet, SearchBudget};
use crate::workload::{OperatorDescriptor, SubnetDescriptor, LEGAL_BITS};

/// Operator choices per layer in the reference supernet.
pub const DEFAULT_CANDIDATES: usize = 9;

/// Multipliers swept by the reference experiments.
pub const LAMBDA_SWEEP: [f64; 4] = [0.004, 0.002, 0.001, 0.0005];

/// One operator choice. `template: null` is the skip choice; the bit fields
/// of a template are replaced by the selected precisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub template: Option<OperatorDescriptor>,
    pub beta_w: Vec<f64>,
    pub beta_a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub alpha: Vec<f64>,
    pub candidates: Vec<Candidate>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawState {
    layers: Vec<Layer>,
    #[serde(default = "default_bits")]
    bits: Vec<u32>,
}

fn default_bits() -> Vec<u32> {
    DEFAULT_BITS.to_vec()
}

/// Architecture and precision parameters of a supernet. Every parameter
/// vector is normalized onto the simplex at construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupernetState {
    layers: Vec<Layer>,
    bits: Vec<u32>,
}

fn normalize(v: &mut [f64], what: &str) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidArgument(format!("{what} must be non-empty, finite and non-negative")));
    }
    let s: f64 = v.iter().sum();
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("{what} sums to zero")));
    }
    v.iter_mut().for_each(|x| *x /= s);
    Ok(())
}

impl SupernetState {
    pub fn new(mut layers: Vec<Layer>, bits: Vec<u32>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("supernet needs at least one layer".into()));
        }
        if bits.is_empty() || bits.iter().any(|b| !LEGAL_BITS.contains(b)) {
            return Err(Error::InvalidArgument(format!("precision choices {bits:?} must be drawn from {LEGAL_BITS:?}")));
        }
        for (l, layer) in layers.iter_mut().enumerate() {
            if layer.alpha.len() != layer.candidates.len() {
                return Err(Error::DimMismatch(format!(
                    "layer {l}: {} alpha values for {} candidates",
                    layer.alpha.len(),
                    layer.candidates.len()
                )));
            }
            normalize(&mut layer.alpha, &format!("layer {l} alpha"))?;
            for (c, cand) in layer.candidates.iter_mut().enumerate() {
                for (v, name) in [(&mut cand.beta_w, "beta_w"), (&mut cand.beta_a, "beta_a")] {
                    if v.len() != bits.len() {
                        return Err(Error::DimMismatch(format!(
                            "layer {l} candidate {c}: {name} has {} entries for {} precisions",
                            v.len(),
                            bits.len()
                        )));
                    }
                    normalize(v, &format!("layer {l} candidate {c} {name}"))?;
                }
            }
        }
        Ok(SupernetState { layers, bits })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawState = serde_json::from_str(text)?;
        SupernetState::new(raw.layers, raw.bits)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn bits(&self) -> &[u32] {
        &self.bits
    }
}

/// Highest-alpha candidate per layer with its highest-beta precisions;
/// skip choices are dropped and ties go to the lower index.
pub fn select_subnet(state: &SupernetState) -> Result<SubnetDescriptor> {
    let mut ops = Vec::with_capacity(state.layers.len());
    for layer in &state.layers {
        let cand = &layer.candidates[argmax(&layer.alpha)];
        if let Some(t) = &cand.template {
            let wgt = state.bits[argmax(&cand.beta_w)];
            let act = state.bits[argmax(&cand.beta_a)];
            ops.push(t.with_bits(act, wgt)?);
        }
    }
    if ops.is_empty() {
        return Err(Error::EmptySelectedSubnet);
    }
    SubnetDescriptor::new(ops)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointWeights {
    pub lambda: f64,
    pub cost_weights: CostWeights,
}

impl JointWeights {
    pub fn validate(&self) -> Result<()> {
        let w = &self.cost_weights;
        if [self.lambda, w.lambda_e, w.lambda_l, w.lambda_a]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::InvalidArgument("joint weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

pub fn lagrangian(ce_loss: f64, e_hw: f64, w: &JointWeights) -> f64 {
    ce_loss + w.lambda * e_hw
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Anneal,
    Generator,
    Exhaustive,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anneal" => Ok(Engine::Anneal),
            "generator" => Ok(Engine::Generator),
            "exhaustive" => Ok(Engine::Exhaustive),
            other => Err(Error::Parse(format!("unknown engine {other:?}"))),
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::Anneal => "anneal",
            Engine::Generator => "generator",
            Engine::Exhaustive => "exhaustive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpTiling {
    pub op_index: usize,
    pub tiling: TilingPlan,
    pub cost: CostBreakdown,
}

/// Everything one co-search step produced. Contains no timing, so equal
/// inputs give equal reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub engine: Engine,
    pub warm_started: bool,
    pub subnet: SubnetDescriptor,
    pub config: AcceleratorConfig,
    pub tilings: Vec<OpTiling>,
    pub breakdown: CostBreakdown,
    pub e_hw: f64,
    pub lambda: f64,
    /// `lambda * e_hw`, the hardware part of the Lagrangian.
    pub hw_term: f64,
    pub evaluations: usize,
}

/// Co-search across iterations. With `warm_start`, annealing restarts from
/// the previous step's config and the generator keeps its trained network.
#[derive(Debug, Clone)]
pub struct CoSearch {
    pub engine: Engine,
    pub warm_start: bool,
    previous: Option<AcceleratorConfig>,
    net: Option<GeneratorNet>,
}

impl CoSearch {
    pub fn new(engine: Engine, warm_start: bool) -> Self {
        CoSearch {
            engine,
            warm_start,
            previous: None,
            net: None,
        }
    }

    pub fn step(
        &mut self,
        state: &SupernetState,
        space: &ParamSpace,
        constants: &CostConstants,
        weights: &JointWeights,
        budget: &SearchBudget,
    ) -> Result<StepReport> {
        weights.validate()?;
        let subnet = select_subnet(state)?;
        let cw = &weights.cost_weights;
        let warm = self.warm_start && self.previous.is_some();
        let (config, evaluations) = match self.engine {
            Engine::Exhaustive => {
                let n = space.cardinality() as usize;
                (exhaustive_search(&subnet, space, constants, cw)?.config, n)
            }
            Engine::Anneal => {
                let start = if self.warm_start { self.previous.as_ref() } else { None };
                let out = anneal_search_from(&subnet, space, constants, cw, budget, start)?;
                (out.best.config, out.evaluations)
            }
            Engine::Generator => {
                let heads = space.head_sizes().to_vec();
                let mut net = match self.net.take() {
                    Some(n) if self.warm_start && n.head_sizes() == heads && n.hidden() == budget.hidden => n,
                    _ => GeneratorNet::for_space(space, budget.hidden, budget.seed),
                };
                let out = train_generator(&mut net, &subnet, space, constants, cw, budget)?;
                if self.warm_start {
                    self.net = Some(net);
                }
                (out.best.config, out.evaluations)
            }
        };
        self.previous = Some(config);

        let mapping = map_subnet(&subnet, &config, constants, cw)?;
        let tilings = mapping
            .per_op
            .iter()
            .enumerate()
            .map(|(op_index, r)| OpTiling {
                op_index,
                tiling: r.best,
                cost: r.cost,
            })
            .collect();
        let e_hw = hw_cost(&mapping.total, cw);
        Ok(StepReport {
            engine: self.engine,
            warm_started: warm,
            subnet,
            config,
            tilings,
            breakdown: mapping.total,
            e_hw,
            lambda: weights.lambda,
            hw_term: lagrangian(0.0, e_hw, weights),
            evaluations,
        })
    }
}

/// One stand-alone step (no warm start).
pub fn co_search_step(
    state: &SupernetState,
    space: &ParamSpace,
    constants: &CostConstants,
    weights: &JointWeights,
    budget: &SearchBudget,
    engine: Engine,
) -> Result<StepReport> {
    CoSearch::new(engine, false).step(state, space, constants, weights, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accel::Dataflow;
    use crate::costmodel::estimate_cost;
    use proptest::prelude::*;

    fn op(k: u32, oc: u32) -> OperatorDescriptor {
        OperatorDescriptor::new(k, 1, 7, 32, oc, 8, 8).unwrap()
    }

    fn cand(template: Option<OperatorDescriptor>, w: [f64; 3], a: [f64; 3]) -> Candidate {
        Candidate {
            template,
            beta_w: w.to_vec(),
            beta_a: a.to_vec(),
        }
    }

    fn layer(alpha: Vec<f64>, cands: Vec<Candidate>) -> Layer {
        Layer { alpha, candidates: cands }
    }

    fn two_layer() -> SupernetState {
        let c = |k| cand(Some(op(k, 32)), [0.1, 0.2, 0.7], [0.6, 0.3, 0.1]);
        SupernetState::new(
            vec![
                layer(vec![0.2, 0.5, 0.3], vec![c(1), c(3), cand(None, [1.0; 3], [1.0; 3])]),
                layer(vec![0.9, 0.1, 0.0], vec![c(5), c(7), c(3)]),
            ],
            DEFAULT_BITS.to_vec(),
        )
        .unwrap()
    }

    fn joint() -> JointWeights {
        JointWeights {
            lambda: 0.001,
            cost_weights: CostWeights::default(),
        }
    }

    #[test]
    fn select_composes_argmaxes() {
        let s = select_subnet(&two_layer()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.operators()[0].kernel(), 3);
        assert_eq!(s.operators()[1].kernel(), 5);
        for o in s.operators() {
            assert_eq!((o.act_bits(), o.wgt_bits()), (2, 8));
        }
    }

    #[test]
    fn uniform_alpha_takes_lowest_and_skip_is_dropped() {
        let c = cand(Some(op(3, 16)), [1.0; 3], [1.0; 3]);
        let s = SupernetState::new(
            vec![
                layer(vec![1.0; 9], vec![c.clone(); 9]),
                layer(vec![0.0, 1.0], vec![c.clone(), cand(None, [1.0; 3], [1.0; 3])]),
            ],
            DEFAULT_BITS.to_vec(),
        )
        .unwrap();
        let sub = select_subnet(&s).unwrap();
        assert_eq!(sub.len(), 1);
        assert_eq!(sub.operators()[0].act_bits(), 2);

        let skip_only = SupernetState::new(vec![layer(vec![1.0], vec![cand(None, [1.0; 3], [1.0; 3])])], DEFAULT_BITS.to_vec()).unwrap();
        let e = select_subnet(&skip_only).unwrap_err();
        assert_eq!(e.to_string(), "empty selected subnet");
    }

    #[test]
    fn state_validation() {
        let c = cand(Some(op(3, 16)), [1.0; 3], [1.0; 3]);
        assert!(SupernetState::new(vec![], DEFAULT_BITS.to_vec()).is_err());
        assert!(SupernetState::new(vec![layer(vec![1.0, 1.0], vec![c.clone()])], DEFAULT_BITS.to_vec()).is_err());
        assert!(SupernetState::new(vec![layer(vec![-1.0], vec![c.clone()])], DEFAULT_BITS.to_vec()).is_err());
        assert!(SupernetState::new(vec![layer(vec![1.0], vec![c.clone()])], vec![2, 4, 16]).is_err());
        let s = two_layer();
        for l in s.layers() {
            assert!((l.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let text = r#"{"layers":[{"alpha":[3,1],"candidates":[
            {"template":{"kernel":3,"stride":1,"out_rows":7,"in_channels":8,"out_channels":8,"act_bits":8,"wgt_bits":8},
             "beta_w":[0,0,1],"beta_a":[0,1,0]},
            {"template":null,"beta_w":[1,1,1],"beta_a":[1,1,1]}]}]}"#;
        let s = SupernetState::from_json(text).unwrap();
        let o = select_subnet(&s).unwrap().operators()[0];
        assert_eq!((o.act_bits(), o.wgt_bits()), (4, 8));
        assert!(SupernetState::from_json(r#"{"layers":[],"extra":1}"#).is_err());
    }

    #[test]
    fn lagrangian_examples() {
        let mut w = joint();
        assert_eq!(lagrangian(2.0, 500.0, &w), 2.5);
        w.lambda = 0.0;
        assert_eq!(lagrangian(1.25, 1e9, &w), 1.25);
        for l in LAMBDA_SWEEP {
            assert!(JointWeights { lambda: l, ..joint() }.validate().is_ok());
        }
        assert!(JointWeights { lambda: -1.0, ..joint() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn alpha_scaling_invariant(a in prop::collection::vec(0.01f64..10.0, 3), scale in 0.01f64..100.0) {
            let c = |k| cand(Some(op(k, 16)), [1.0, 2.0, 3.0], [3.0, 2.0, 1.0]);
            let mk = |alpha: Vec<f64>| SupernetState::new(vec![layer(alpha, vec![c(1), c(3), c(5)])], DEFAULT_BITS.to_vec()).unwrap();
            let scaled: Vec<f64> = a.iter().map(|v| v * scale).collect();
            prop_assert_eq!(select_subnet(&mk(a)).unwrap(), select_subnet(&mk(scaled)).unwrap());
        }

        #[test]
        fn lagrangian_is_affine(ce in -10.0f64..10.0, e in 0.0f64..1e3, l in 0.0f64..1.0) {
            let w = JointWeights { lambda: l, cost_weights: CostWeights::default() };
            let slope = lagrangian(ce, e + 1.0, &w) - lagrangian(ce, e, &w);
            prop_assert!((slope - l).abs() < 1e-9);
        }
    }

    fn reduced_space() -> ParamSpace {
        ParamSpace {
            pe_x: vec![8, 16],
            pe_y: vec![8, 16],
            act_cache_kb: vec![64],
            wgt_cache_kb: vec![64],
            out_cache_kb: vec![64],
            dataflow: Dataflow::ALL.to_vec(),
            loop_order: vec!["BIOHW".parse().unwrap(), "BOIHW".parse().unwrap()],
        }
    }

    #[test]
    fn singleton_reproduces_estimate() {
        let o = op(3, 32);
        let state = SupernetState::new(vec![layer(vec![1.0], vec![cand(Some(o), [0.0, 0.0, 1.0], [0.0, 0.0, 1.0])])], DEFAULT_BITS.to_vec()).unwrap();
        let cfg = reduced_space().config_at(&[1, 1, 0, 0, 0, 0, 0]);
        let k = CostConstants::default();
        let r = co_search_step(&state, &ParamSpace::singleton(&cfg), &k, &joint(), &SearchBudget::default(), Engine::Anneal).unwrap();
        assert_eq!(r.config, cfg);
        let direct = estimate_cost(&o, &cfg, &r.tilings[0].tiling, &k).unwrap();
        assert_eq!(r.tilings[0].cost, direct);
        assert_eq!(r.breakdown.energy_mj, direct.energy_mj);
        assert_eq!(r.hw_term, 0.001 * r.e_hw);
    }

    #[test]
    fn exhaustive_engine_matches_oracle_and_is_deterministic() {
        let state = two_layer();
        let space = reduced_space();
        let k = CostConstants::default();
        let b = SearchBudget::default();
        let r = co_search_step(&state, &space, &k, &joint(), &b, Engine::Exhaustive).unwrap();
        let sub = select_subnet(&state).unwrap();
        let opt = exhaustive_search(&sub, &space, &k, &CostWeights::default()).unwrap();
        assert_eq!(r.e_hw, opt.cost);
        for engine in [Engine::Anneal, Engine::Generator] {
            let b = SearchBudget { hidden: 16, steps: 5, ..b };
            let x = co_search_step(&state, &space, &k, &joint(), &b, engine).unwrap();
            let y = co_search_step(&state, &space, &k, &joint(), &b, engine).unwrap();
            assert_eq!(serde_json::to_string(&x).unwrap(), serde_json::to_string(&y).unwrap());
            assert!(x.e_hw >= opt.cost);
        }
    }

    #[test]
    fn warm_start_reuses_previous() {
        let state = two_layer();
        let space = reduced_space();
        let k = CostConstants::default();
        let b = SearchBudget { max_evaluations: 30, ..Default::default() };
        let mut cs = CoSearch::new(Engine::Anneal, true);
        let first = cs.step(&state, &space, &k, &joint(), &b).unwrap();
        assert!(!first.warm_started);
        let second = cs.step(&state, &space, &k, &joint(), &b).unwrap();
        assert!(second.warm_started);
        assert!(second.e_hw <= first.e_hw);
        assert_eq!("generator".parse::<Engine>().unwrap(), Engine::Generator);
        assert!("rl".parse::<Engine>().is_err());
    }
}
