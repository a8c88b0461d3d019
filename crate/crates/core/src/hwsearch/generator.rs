use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{Adam, GeneratorNet, DEFAULT_BLOCKS};
use super::{featurize_subnet, ConfigEvaluator, Scored, SearchBudget, FEATURE_DIM};
use crate::accel::{AcceleratorConfig, ParamSpace};
use crate::costmodel::{CostConstants, CostWeights};
use crate::csq::{argmax, gumbel_softmax, sample_noise, softmax, GumbelMode};
use crate::error::{Error, Result};
use crate::workload::SubnetDescriptor;

/// Label recorded with every training run.
pub const GRADIENT_ESTIMATOR: &str = "score-function (likelihood ratio) with exponential-moving-average baseline";

/// Multiplier on the worst feasible cost seen so far for infeasible samples.
const INFEASIBLE_PENALTY: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOutput {
    pub probs: Vec<Vec<f64>>,
    pub config: AcceleratorConfig,
}

impl GeneratorNet {
    /// Network whose heads match the candidate counts of `space`.
    pub fn for_space(space: &ParamSpace, hidden: usize, seed: u64) -> Self {
        GeneratorNet::new(FEATURE_DIM, hidden, DEFAULT_BLOCKS, &space.head_sizes(), seed)
    }
}

fn check_heads(net: &GeneratorNet, space: &ParamSpace) -> Result<()> {
    let want = space.head_sizes();
    if net.head_sizes() != want || net.input_dim() != FEATURE_DIM {
        return Err(Error::DimMismatch(format!(
            "network heads {:?} do not match space sizes {:?}",
            net.head_sizes(),
            want
        )));
    }
    Ok(())
}

/// Perturbed tempered softmax per head, and the config at each head's argmax.
pub fn generator_forward(
    net: &GeneratorNet,
    feats: &[f64],
    space: &ParamSpace,
    tau: f64,
    mode: GumbelMode,
    noise_seed: u64,
) -> Result<GeneratorOutput> {
    check_heads(net, space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let trace = net.forward(feats);
    let mut probs = Vec::with_capacity(7);
    for logits in &trace.logits {
        let noise = sample_noise(mode, logits.len(), &mut rng);
        probs.push(gumbel_softmax(logits, tau, &noise)?);
    }
    let idx: [usize; 7] = std::array::from_fn(|k| argmax(&probs[k]));
    Ok(GeneratorOutput {
        config: space.config_at(&idx),
        probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainTraceRow {
    pub step: usize,
    pub mean_cost: f64,
    pub best_cost: f64,
    pub tau: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    /// Per-head argmax of the trained logits.
    pub argmax: Vec<usize>,
    /// Cheapest feasible sample and its cost.
    pub best: Option<(Vec<usize>, f64)>,
    pub trace: Vec<TrainTraceRow>,
    pub evaluations: usize,
}

/// REINFORCE on a fixed input: each step draws `samples_per_step` joint
/// choices from `softmax(logits / tau)`, scores them with `cost` (`None`
/// marks an infeasible choice), and takes one Adam step on the mean of
/// `(c - b) * grad log p(choice)` with `c - b` divided by `|b|`.
///
/// The baseline `b` starts at the first step's mean cost and then follows
/// `b <- d * b + (1 - d) * mean`; `d = 1` keeps it at the first mean.
pub fn train_policy<F>(net: &mut GeneratorNet, feats: &[f64], budget: &SearchBudget, mut cost: F) -> Result<PolicyOutcome>
where
    F: FnMut(&[usize]) -> Result<Option<f64>>,
{
    budget.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut opt = Adam::new(net.params().len(), budget.learning_rate);
    let mut tau = budget.gumbel_tau;
    let mut baseline: Option<f64> = None;
    let mut worst_feasible: Option<f64> = None;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut trace = Vec::with_capacity(budget.steps);
    let mut evaluations = 0;

    for step in 0..budget.steps {
        let remaining = budget.max_evaluations.saturating_sub(evaluations);
        let n = budget.samples_per_step.min(remaining);
        if n == 0 {
            break;
        }
        let fwd = net.forward(feats);
        let probs: Vec<Vec<f64>> = fwd.logits.iter().map(|l| softmax(l, tau)).collect();
        let dists = probs
            .iter()
            .map(|p| WeightedIndex::new(p).map_err(|e| Error::InvalidArgument(format!("degenerate head: {e}"))))
            .collect::<Result<Vec<_>>>()?;

        let mut samples = Vec::with_capacity(n);
        let mut costs = Vec::with_capacity(n);
        for _ in 0..n {
            let choice: Vec<usize> = dists.iter().map(|d| d.sample(&mut rng)).collect();
            evaluations += 1;
            let c = match cost(&choice)? {
                Some(c) => {
                    worst_feasible = Some(worst_feasible.map_or(c, |w| w.max(c)));
                    if best.as_ref().is_none_or(|(_, b)| c < *b) {
                        best = Some((choice.clone(), c));
                    }
                    c
                }
                None => INFEASIBLE_PENALTY * worst_feasible.unwrap_or(0.1),
            };
            samples.push(choice);
            costs.push(c);
        }
        let mean = costs.iter().sum::<f64>() / n as f64;
        let b = *baseline.get_or_insert(mean);
        let scale = b.abs().max(f64::MIN_POSITIVE);

        // d/dlogits of log softmax(logits/tau)[a] is (onehot(a) - p) / tau
        let mut dlogits: Vec<Vec<f64>> = probs.iter().map(|p| vec![0.0; p.len()]).collect();
        for (choice, &c) in samples.iter().zip(&costs) {
            let adv = (c - b) / scale / n as f64;
            for (k, &a) in choice.iter().enumerate() {
                for (j, g) in dlogits[k].iter_mut().enumerate() {
                    let onehot = if j == a { 1.0 } else { 0.0 };
                    *g += adv * (onehot - probs[k][j]) / tau;
                }
            }
        }
        let grad = net.backward(&fwd, &dlogits);
        opt.step(net.params_mut(), &grad);

        trace.push(TrainTraceRow {
            step,
            mean_cost: mean,
            best_cost: best.as_ref().map_or(f64::INFINITY, |(_, c)| *c),
            tau,
            baseline: b,
        });
        baseline = Some(budget.baseline_decay * b + (1.0 - budget.baseline_decay) * mean);
        tau = (tau * budget.tau_decay).max(budget.tau_min);
    }

    let logits = net.forward(feats).logits;
    Ok(PolicyOutcome {
        argmax: logits.iter().map(|l| argmax(l)).collect(),
        best,
        trace,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOutcome {
    pub best: Scored,
    pub trace: Vec<TrainTraceRow>,
    pub evaluations: usize,
    pub gradient_estimator: String,
}

/// Train `net` on `subnet` and decode its argmax config. If that config is
/// infeasible the cheapest feasible sample is returned instead.
pub fn train_generator(
    net: &mut GeneratorNet,
    subnet: &SubnetDescriptor,
    space: &ParamSpace,
    constants: &CostConstants,
    weights: &CostWeights,
    budget: &SearchBudget,
) -> Result<GeneratorOutcome> {
    space.validate()?;
    check_heads(net, space)?;
    let feats = featurize_subnet(subnet).0;
    let mut eval = ConfigEvaluator::new(subnet, constants, weights);
    let out = train_policy(net, &feats, budget, |choice| {
        let idx: [usize; 7] = std::array::from_fn(|k| choice[k]);
        Ok(eval.evaluate(&space.config_at(&idx))?.map(|s| s.cost))
    })?;
    let idx: [usize; 7] = std::array::from_fn(|k| out.argmax[k]);
    let best = match eval.evaluate(&space.config_at(&idx))? {
        Some(s) => s,
        None => {
            let (choice, _) = out.best.ok_or(Error::NoFeasibleConfig)?;
            let idx: [usize; 7] = std::array::from_fn(|k| choice[k]);
            eval.evaluate(&space.config_at(&idx))?.ok_or(Error::NoFeasibleConfig)?
        }
    };
    Ok(GeneratorOutcome {
        best,
        trace: out.trace,
        evaluations: out.evaluations,
        gradient_estimator: GRADIENT_ESTIMATOR.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::exhaustive_search;
    use super::super::tests::{reduced_space, small_subnet};
    use super::*;

    #[test]
    fn two_choice_toy_converges() {
        for seed in 0..5 {
            let mut net = GeneratorNet::new(FEATURE_DIM, 16, 2, &[2], seed);
            let b = SearchBudget {
                seed,
                steps: 500,
                samples_per_step: 8,
                max_evaluations: 4000,
                gumbel_tau: 1.0,
                tau_decay: 1.0,
                tau_min: 1.0,
                ..Default::default()
            };
            let feats = [0.5; FEATURE_DIM];
            train_policy(&mut net, &feats, &b, |c| Ok(Some(c[0] as f64))).unwrap();
            let p = softmax(&net.forward(&feats).logits[0], 1.0);
            assert!(p[0] >= 0.99, "seed {seed}: {p:?}");
        }
    }

    #[test]
    fn frozen_baseline() {
        let mut net = GeneratorNet::new(FEATURE_DIM, 8, 1, &[3], 1);
        let b = SearchBudget {
            steps: 20,
            baseline_decay: 1.0,
            ..Default::default()
        };
        let out = train_policy(&mut net, &[0.1; FEATURE_DIM], &b, |c| Ok(Some(1.0 + c[0] as f64))).unwrap();
        let b0 = out.trace[0].baseline;
        assert_eq!(b0, out.trace[0].mean_cost);
        assert!(out.trace.iter().all(|r| r.baseline == b0));
    }

    #[test]
    fn forward_examples() {
        let space = reduced_space();
        let net = GeneratorNet::for_space(&space, 16, 2);
        let feats = featurize_subnet(&small_subnet()).0;
        let out = generator_forward(&net, &feats, &space, 5.0, GumbelMode::Standard, 9).unwrap();
        for p in &out.probs {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
        // single-candidate heads are forced
        assert_eq!(out.probs[2], vec![1.0]);
        assert_eq!(out.config.act_cache_kb, 64);
        assert!(space.indices_of(&out.config).is_some());
        let again = generator_forward(&net, &feats, &space, 5.0, GumbelMode::Standard, 9).unwrap();
        assert_eq!(out, again);

        // tiny tau is one-hot at argmax(logit + noise)
        let sharp = generator_forward(&net, &feats, &space, 1e-4, GumbelMode::Uniform, 4).unwrap();
        let logits = net.forward(&feats).logits;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (l, p) in logits.iter().zip(&sharp.probs) {
            let noise = sample_noise(GumbelMode::Uniform, l.len(), &mut rng);
            let hard: Vec<f64> = l.iter().zip(&noise).map(|(a, e)| a + e).collect();
            assert!(p[argmax(&hard)] > 0.999);
        }
        let wrong = GeneratorNet::new(FEATURE_DIM, 8, 1, &[2], 0);
        assert!(generator_forward(&wrong, &feats, &space, 1.0, GumbelMode::Standard, 0).is_err());
    }

    #[test]
    fn equal_logits_give_uniform() {
        let z = gumbel_softmax(&[0.3; 4], 2.0, &[0.0; 4]).unwrap();
        assert!(z.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn singleton_space_is_returned() {
        let subnet = small_subnet();
        let cfg = reduced_space().config_at(&[1, 1, 0, 0, 0, 1, 0]);
        let space = ParamSpace::singleton(&cfg);
        let mut net = GeneratorNet::for_space(&space, 8, 0);
        let b = SearchBudget {
            steps: 5,
            ..Default::default()
        };
        let out = train_generator(&mut net, &subnet, &space, &CostConstants::default(), &CostWeights::default(), &b).unwrap();
        assert_eq!(out.best.config, cfg);
        assert!(out.trace.iter().all(|r| r.mean_cost == out.trace[0].mean_cost));
        assert_eq!(out.gradient_estimator, GRADIENT_ESTIMATOR);
    }

    #[test]
    fn reduced_space_median_within_ten_percent() {
        let (subnet, space) = (small_subnet(), reduced_space());
        let k = CostConstants::default();
        let w = CostWeights::default();
        let opt = exhaustive_search(&subnet, &space, &k, &w).unwrap();
        let mut ratios: Vec<f64> = (0..10)
            .map(|seed| {
                let mut net = GeneratorNet::for_space(&space, 32, seed);
                let b = SearchBudget {
                    seed,
                    max_evaluations: 500,
                    ..Default::default()
                };
                let out = train_generator(&mut net, &subnet, &space, &k, &w, &b).unwrap();
                assert!(out.evaluations <= 500);
                out.best.cost / opt.cost
            })
            .collect();
        ratios.sort_by(f64::total_cmp);
        let median = 0.5 * (ratios[4] + ratios[5]);
        assert!(median <= 1.10, "median ratio {median}, all {ratios:?}");
    }
}
