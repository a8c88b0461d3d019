//! Command-line front end.
//!
//! ```text
//! coxplore cost --workload W --accel A [--tiling T] [--cache C]
//! coxplore search tile --workload W --accel A [--out CSV] [--timing CSV]
//! coxplore search accel --workload W [--space S] --engine anneal|generator|exhaustive
//! coxplore search co --supernet S [--space S] --engine ... --lambda L
//! ```
//!
//! Structured reports are JSON, tables are CSV. Wall-clock numbers only go
//! to `--timing` files or stderr so that everything else is reproducible.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::accel::{AcceleratorConfig, ParamSpace};
use crate::batchtile::{batch_search, csv_err, map_subnet, write_tiling_csv};
use crate::cache::{cache_key, ResultCache};
use crate::costmodel::{aggregate, edap, estimate_cost, hw_cost, CostBreakdown, CostConstants, CostWeights, TilingPlan};
use crate::csq::GumbelMode;
use crate::error::{Error, Result};
use crate::hwsearch::{anneal_search, exhaustive_search, train_generator, GeneratorNet, SearchBudget};
use crate::joint::{co_search_step, Engine, JointWeights, SupernetState};
use crate::workload::{load_subnet, SubnetDescriptor};

#[derive(Debug, Parser)]
#[command(name = "coxplore", version, about = "Accelerator, tiling and precision co-exploration with an analytical cost model")]
pub struct Cli {
    /// Worker threads for parallel search (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cost every operator of a workload on one accelerator.
    Cost(CostArgs),
    /// Run one of the searches.
    #[command(subcommand)]
    Search(SearchCommand),
}

#[derive(Debug, Subcommand)]
pub enum SearchCommand {
    /// Best tiling per operator on a fixed accelerator.
    Tile(TileArgs),
    /// Best accelerator for a fixed workload.
    Accel(AccelArgs),
    /// One joint step: select a subnet from a supernet state, then search hardware for it.
    Co(CoArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Cost constants (JSON); defaults apply to missing fields.
    #[arg(long)]
    pub constants: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "lambda-e", default_value_t = 0.33)]
    pub lambda_e: f64,
    #[arg(long = "lambda-l", default_value_t = 0.33)]
    pub lambda_l: f64,
    #[arg(long = "lambda-a", default_value_t = 0.33)]
    pub lambda_a: f64,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub workload: PathBuf,
    #[arg(long)]
    pub accel: PathBuf,
    /// Tiling (JSON): one plan for every operator, or a list with one plan per operator.
    /// Without it the best tiling is searched per operator.
    #[arg(long)]
    pub tiling: Option<PathBuf>,
    /// Append-only result cache.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long)]
    pub workload: PathBuf,
    #[arg(long)]
    pub accel: PathBuf,
    /// Per-operator and total wall time (CSV); stderr when omitted.
    #[arg(long)]
    pub timing: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long, default_value = "anneal")]
    pub engine: String,
    /// Candidate lists (JSON); missing fields mean the full range.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Search budget (JSON); flags below override it.
    #[arg(long)]
    pub budget: Option<PathBuf>,
    #[arg(long = "max-evaluations")]
    pub max_evaluations: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "samples-per-step")]
    pub samples_per_step: Option<usize>,
    #[arg(long = "gumbel-mode")]
    pub gumbel_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct AccelArgs {
    #[arg(long)]
    pub workload: PathBuf,
    /// Training or annealing trace (CSV).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CoArgs {
    /// Supernet state (JSON).
    #[arg(long)]
    pub supernet: PathBuf,
    /// Lagrange multiplier on the hardware cost.
    #[arg(long, default_value_t = 0.001)]
    pub lambda: f64,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

impl CommonArgs {
    fn constants(&self) -> Result<CostConstants> {
        match &self.constants {
            Some(p) => CostConstants::from_json(&read(p)?),
            None => Ok(CostConstants::default()),
        }
    }

    fn weights(&self) -> Result<CostWeights> {
        let w = CostWeights {
            lambda_e: self.lambda_e,
            lambda_l: self.lambda_l,
            lambda_a: self.lambda_a,
        };
        if [w.lambda_e, w.lambda_l, w.lambda_a].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("cost weights must be finite and non-negative".into()));
        }
        Ok(w)
    }
}

impl BudgetArgs {
    fn engine(&self) -> Result<Engine> {
        self.engine.parse()
    }

    fn space(&self) -> Result<ParamSpace> {
        match &self.space {
            Some(p) => ParamSpace::from_json(&read(p)?),
            None => Ok(ParamSpace::full()),
        }
    }

    fn budget(&self) -> Result<SearchBudget> {
        let mut b = match &self.budget {
            Some(p) => serde_json::from_str(&read(p)?)?,
            None => SearchBudget::default(),
        };
        b.seed = self.seed;
        if let Some(v) = self.max_evaluations {
            b.max_evaluations = v;
        }
        if let Some(v) = self.steps {
            b.steps = v;
        }
        if let Some(v) = self.samples_per_step {
            b.samples_per_step = v;
        }
        if let Some(m) = &self.gumbel_mode {
            b.gumbel_mode = m.parse::<GumbelMode>()?;
        }
        b.validate()?;
        Ok(b)
    }
}

fn load_workload(path: &Path) -> Result<SubnetDescriptor> {
    load_subnet(&read(path)?)
}

fn load_accel(path: &Path) -> Result<AcceleratorConfig> {
    AcceleratorConfig::from_json(&read(path)?)
}

fn load_tilings(path: &Path, n_ops: usize) -> Result<Vec<TilingPlan>> {
    let v: serde_json::Value = serde_json::from_str(&read(path)?)?;
    let plans: Vec<TilingPlan> = if v.is_array() {
        serde_json::from_value(v)?
    } else {
        vec![serde_json::from_value(v)?; n_ops]
    };
    if plans.len() != n_ops {
        return Err(Error::DimMismatch(format!("{} tilings for {n_ops} operators", plans.len())));
    }
    for p in &plans {
        p.check_sizes()?;
    }
    Ok(plans)
}

#[derive(Serialize)]
struct CostLine {
    breakdown: CostBreakdown,
    hw_cost: f64,
    edap: f64,
}

impl CostLine {
    fn new(b: CostBreakdown, w: &CostWeights) -> Self {
        CostLine {
            breakdown: b,
            hw_cost: hw_cost(&b, w),
            edap: edap(&b),
        }
    }
}

#[derive(Serialize)]
struct OpCostLine {
    op_index: usize,
    tiling: TilingPlan,
    #[serde(flatten)]
    cost: CostLine,
}

#[derive(Serialize)]
struct CostReport {
    config: AcceleratorConfig,
    operators: Vec<OpCostLine>,
    total: CostLine,
}

fn cmd_cost(a: &CostArgs) -> Result<()> {
    let subnet = load_workload(&a.workload)?;
    let cfg = load_accel(&a.accel)?;
    let constants = a.common.constants()?;
    let weights = a.common.weights()?;
    let tilings = match &a.tiling {
        Some(p) => load_tilings(p, subnet.len())?,
        None => subnet
            .operators()
            .iter()
            .enumerate()
            .map(|(i, op)| {
                batch_search(op, &cfg, &constants, &weights)
                    .map(|r| r.best)
                    .map_err(|e| match e {
                        Error::NoFeasibleTiling { .. } => Error::NoFeasibleTiling { op_index: i },
                        other => other,
                    })
            })
            .collect::<Result<_>>()?,
    };
    let mut cache = a.cache.as_ref().map(ResultCache::open).transpose()?;
    if let Some(c) = &cache {
        for w in &c.warnings {
            eprintln!("warning: {w}");
        }
    }
    let mut parts = Vec::with_capacity(subnet.len());
    for (i, (op, t)) in subnet.operators().iter().zip(&tilings).enumerate() {
        let compute = || {
            estimate_cost(op, &cfg, t, &constants).map_err(|e| match e {
                Error::InfeasibleTiling(m) => Error::InfeasibleTiling(format!("operator {i}: {m}")),
                other => other,
            })
        };
        let b = match cache.as_mut() {
            Some(c) => c.get_or_compute(cache_key(op, &cfg, t, &constants), compute)?,
            None => compute()?,
        };
        parts.push(b);
    }
    if let Some(c) = &cache {
        eprintln!("cache: {} hits, {} misses", c.hits, c.misses);
    }
    let total = aggregate(&parts, parts[0].area_mm2);
    let report = CostReport {
        config: cfg,
        operators: parts
            .iter()
            .zip(&tilings)
            .enumerate()
            .map(|(op_index, (b, t))| OpCostLine {
                op_index,
                tiling: *t,
                cost: CostLine::new(*b, &weights),
            })
            .collect(),
        total: CostLine::new(total, &weights),
    };
    emit(a.common.out.as_deref(), &to_json(&report))
}

fn cmd_tile(a: &TileArgs) -> Result<()> {
    let subnet = load_workload(&a.workload)?;
    let cfg = load_accel(&a.accel)?;
    let constants = a.common.constants()?;
    let weights = a.common.weights()?;
    let mapping = map_subnet(&subnet, &cfg, &constants, &weights)?;
    let mut buf = Vec::new();
    write_tiling_csv(&mut buf, &mapping.per_op)?;
    emit(a.common.out.as_deref(), &buf)?;

    let mut timing = csv::Writer::from_writer(Vec::new());
    timing.write_record(["scope", "wall_time_s"]).map_err(csv_err)?;
    for (i, r) in mapping.per_op.iter().enumerate() {
        timing.write_record([i.to_string(), r.wall_time_s.to_string()]).map_err(csv_err)?;
    }
    timing.write_record(["total".to_string(), mapping.wall_time_s.to_string()]).map_err(csv_err)?;
    let bytes = timing.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    match &a.timing {
        Some(p) => fs::write(p, bytes)?,
        None => std::io::stderr().lock().write_all(&bytes)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct AccelReport {
    engine: Engine,
    config: AcceleratorConfig,
    cost: f64,
    breakdown: CostBreakdown,
    evaluations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradient_estimator: Option<String>,
}

fn write_trace<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_accel(a: &AccelArgs) -> Result<()> {
    let engine = a.budget.engine()?;
    let subnet = load_workload(&a.workload)?;
    let space = a.budget.space()?;
    let budget = a.budget.budget()?;
    let constants = a.common.constants()?;
    let weights = a.common.weights()?;
    let report = match engine {
        Engine::Exhaustive => {
            let best = exhaustive_search(&subnet, &space, &constants, &weights)?;
            AccelReport {
                engine,
                config: best.config,
                cost: best.cost,
                breakdown: best.breakdown,
                evaluations: space.cardinality() as usize,
                gradient_estimator: None,
            }
        }
        Engine::Anneal => {
            let out = anneal_search(&subnet, &space, &constants, &weights, &budget)?;
            if let Some(p) = &a.trace {
                write_trace(p, &out.trace)?;
            }
            AccelReport {
                engine,
                config: out.best.config,
                cost: out.best.cost,
                breakdown: out.best.breakdown,
                evaluations: out.evaluations,
                gradient_estimator: None,
            }
        }
        Engine::Generator => {
            let mut net = GeneratorNet::for_space(&space, budget.hidden, budget.seed);
            let out = train_generator(&mut net, &subnet, &space, &constants, &weights, &budget)?;
            if let Some(p) = &a.trace {
                write_trace(p, &out.trace)?;
            }
            AccelReport {
                engine,
                config: out.best.config,
                cost: out.best.cost,
                breakdown: out.best.breakdown,
                evaluations: out.evaluations,
                gradient_estimator: Some(out.gradient_estimator),
            }
        }
    };
    emit(a.common.out.as_deref(), &to_json(&report))
}

fn cmd_co(a: &CoArgs) -> Result<()> {
    let engine = a.budget.engine()?;
    let state = SupernetState::from_json(&read(&a.supernet)?)?;
    let space = a.budget.space()?;
    let budget = a.budget.budget()?;
    let constants = a.common.constants()?;
    let weights = JointWeights {
        lambda: a.lambda,
        cost_weights: a.common.weights()?,
    };
    let report = co_search_step(&state, &space, &constants, &weights, &budget, engine)?;
    emit(a.common.out.as_deref(), &to_json(&report))
}

pub fn execute(cli: &Cli) -> Result<()> {
    let run = || match &cli.command {
        Command::Cost(a) => cmd_cost(a),
        Command::Search(SearchCommand::Tile(a)) => cmd_tile(a),
        Command::Search(SearchCommand::Accel(a)) => cmd_accel(a),
        Command::Search(SearchCommand::Co(a)) => cmd_co(a),
    };
    match cli.threads {
        Some(0) => Err(Error::InvalidArgument("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
