//! Randomized protocol comparisons: cost sampling, value calibration,
//! equilibrium-conditioned filtering, efficiency classes and statistics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::agents::PolicyConfig;
use crate::analysis::{classify_outcome, competitive_equilibrium_exists, efficient_allocation, min_cost_serving, OutcomeClass};
use crate::fixtures::{self, RandomSpec};
use crate::netmodel::{AgentId, AgentKind, GoodId, Money, Network, Resolution};
use crate::simkernel::{count_meaningful_bids, run, DelayModel, KernelError, RunConfig, DEFAULT_EVENT_CAP};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("no solution can deliver {good} to {consumer}")]
    Unreachable { consumer: String, good: String },
    #[error("instance {id}: no cost draw met the filter in {attempts} attempts")]
    FilterExhausted { id: usize, attempts: usize },
    #[error("topology: {0}")]
    Topology(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "samp-sb")]
    Plain,
    #[serde(rename = "safe")]
    Safe,
    /// The plain run followed by decommitment of unusable input contracts.
    #[serde(rename = "samp-sb-d")]
    Decommit,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Plain => "samp-sb",
            Protocol::Safe => "safe",
            Protocol::Decommit => "samp-sb-d",
        }
    }

    pub fn parse(s: &str) -> Option<Protocol> {
        [Protocol::Plain, Protocol::Safe, Protocol::Decommit].into_iter().find(|p| p.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EqFilter {
    Any,
    Exists,
    NotExists,
}

/// Where instances come from.
#[derive(Clone, Debug)]
pub enum Topology {
    /// One structure; every instance redraws producer costs and reuses
    /// calibrated consumer values.
    Fixed(Network),
    /// A generator family; every instance is a fresh network with its own
    /// generated costs and values.
    Random { family: String, spec: RandomSpec },
}

impl Topology {
    pub fn name(&self) -> String {
        match self {
            Topology::Fixed(_) => "fixed".to_string(),
            Topology::Random { family, .. } => family.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub topology: Topology,
    pub label: String,
    pub instances: usize,
    pub seed: u64,
    pub delta_b: Money,
    pub delta_s: Money,
    pub protocols: Vec<Protocol>,
    pub filter: EqFilter,
    pub calibration_samples: usize,
    /// Skip calibration and keep the topology's own consumer values.
    pub keep_values: bool,
    pub delay: DelayModel,
    pub event_cap: u64,
    /// Cost redraws allowed per instance before it is reported as failed.
    pub max_attempts: usize,
}

impl ExperimentConfig {
    pub fn new(topology: Topology) -> ExperimentConfig {
        let res = Resolution::default();
        ExperimentConfig {
            label: topology.name(),
            topology,
            instances: 100,
            seed: 0,
            delta_b: res.money("0.01").expect("grid amount"),
            delta_s: res.money("0.01").expect("grid amount"),
            protocols: vec![Protocol::Plain, Protocol::Decommit],
            filter: EqFilter::Any,
            calibration_samples: 10_000,
            keep_values: false,
            delay: DelayModel::Uniform { min: 1, max: 4 },
            event_cap: DEFAULT_EVENT_CAP,
            max_attempts: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EfficiencyClass {
    Negative,
    Zero,
    Suboptimal,
    Optimal,
}

impl EfficiencyClass {
    fn of(value: Money, efficient: Money) -> EfficiencyClass {
        if value.is_negative() {
            EfficiencyClass::Negative
        } else if value == Money::ZERO {
            EfficiencyClass::Zero
        } else if value < efficient {
            EfficiencyClass::Suboptimal
        } else {
            EfficiencyClass::Optimal
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EfficiencyClass::Negative => "negative",
            EfficiencyClass::Zero => "zero",
            EfficiencyClass::Suboptimal => "suboptimal",
            EfficiencyClass::Optimal => "optimal",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolStats {
    pub value: Money,
    pub efficiency: f64,
    pub class: EfficiencyClass,
    pub outcome: OutcomeClass,
    pub producer_surplus_frac: f64,
    pub dead_ends: usize,
    pub lambda_delta: bool,
    pub bids_total: u64,
    pub bids_meaningful: u64,
    pub quasi_q_tick: Option<u64>,
    pub q_tick: u64,
    pub monitor_violations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolResult {
    pub protocol: Protocol,
    /// `Err` holds the kernel failure, such as an event-cap breach.
    pub stats: Result<ProtocolStats, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceResult {
    pub id: usize,
    pub network: Network,
    pub eq_exists: bool,
    pub efficient_value: Money,
    pub attempts: usize,
    pub protocols: Vec<ProtocolResult>,
}

impl InstanceResult {
    pub fn costs(&self) -> Vec<Money> {
        self.network.producers().map(|(_, p)| p.cost).collect()
    }

    pub fn values(&self) -> Vec<(AgentId, GoodId, Money)> {
        self.network.consumers().flat_map(|(a, c)| c.values.iter().map(move |&(g, v)| (a, g, v))).collect()
    }

    pub fn stats(&self, p: Protocol) -> Option<&ProtocolStats> {
        self.protocols.iter().find(|r| r.protocol == p).and_then(|r| r.stats.as_ref().ok())
    }
}

/// Deterministic seed derivation (splitmix64 finalizer over the inputs).
pub fn derive_seed(base: u64, index: u64, tag: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform_cost<R: Rng>(rng: &mut R, res: &Resolution) -> Money {
    res.from_f64(rng.gen::<f64>())
}

/// Redraws every producer cost i.i.d. uniform on [0, 1], on the grid.
pub fn resample_costs<R: Rng>(net: &Network, rng: &mut R) -> Network {
    let mut out = net.clone();
    let res = net.resolution;
    for agent in &mut out.agents {
        if let AgentKind::Producer(p) = &mut agent.kind {
            p.cost = uniform_cost(rng, &res);
        }
    }
    out
}

/// Value at which a solution serving `c` with `g` alone has positive
/// surplus with probability `quantile`, over uniform cost draws.
pub fn calibrate_value<R: Rng>(
    net: &Network,
    c: AgentId,
    g: GoodId,
    quantile: f64,
    samples: usize,
    rng: &mut R,
) -> Result<Money, ExperimentError> {
    let unreachable =
        || ExperimentError::Unreachable { consumer: net.agent_name(c).to_string(), good: net.good_name(g).to_string() };
    if min_cost_serving(net, c, g).is_none() {
        return Err(unreachable());
    }
    let draws: Vec<Network> = (0..samples.max(1)).map(|_| resample_costs(net, rng)).collect();
    let mut costs: Vec<Money> = draws.par_iter().map(|n| min_cost_serving(n, c, g).expect("reachable")).collect();
    costs.sort_unstable();
    let k = ((quantile * costs.len() as f64).ceil() as usize).clamp(1, costs.len());
    Ok(costs[k - 1].max(Money(1)))
}

/// Calibrates every (consumer, good) value of a fixed topology.
pub fn calibrate_network<R: Rng>(net: &Network, samples: usize, rng: &mut R) -> Result<Network, ExperimentError> {
    let mut out = net.clone();
    for (c, cons) in net.consumers() {
        let mut values = Vec::new();
        for &(g, _) in &cons.values {
            values.push((g, calibrate_value(net, c, g, 0.9, samples, rng)?));
        }
        if let AgentKind::Consumer(k) = &mut out.agents[c.0].kind {
            k.values = values;
        }
    }
    Ok(out)
}

/// Draws one instance with positive efficient value: fresh costs on a
/// fixed topology, or a fresh network from a random family.
pub fn sample_instance<R: Rng>(topology: &Topology, calibrated: &Network, rng: &mut R) -> Result<Network, ExperimentError> {
    for _ in 0..100_000 {
        let net = match topology {
            Topology::Fixed(_) => resample_costs(calibrated, rng),
            Topology::Random { family, spec } => random_family(family, spec, rng)?,
        };
        if efficient_allocation(&net).1.is_positive() {
            return Ok(net);
        }
    }
    Err(ExperimentError::Topology("no instance with positive efficient value".to_string()))
}

fn random_family<R: Rng>(family: &str, spec: &RandomSpec, rng: &mut R) -> Result<Network, ExperimentError> {
    Ok(match family {
        "random-tree" => fixtures::random_tree(rng, spec),
        "random-polytree" => fixtures::random_polytree(rng, spec),
        "random-single-input" => fixtures::random_single_input(rng, spec),
        "random-general" => fixtures::random_general(rng, spec),
        other => return Err(ExperimentError::Topology(format!("unknown random family `{other}`"))),
    })
}

fn run_protocols(cfg: &ExperimentConfig, net: &Network, efficient: Money, seed: u64) -> Vec<ProtocolResult> {
    let mut out = Vec::new();
    let wants = |p| cfg.protocols.contains(&p);
    let base = |safe: bool, tag: u64| {
        let mut policy = PolicyConfig::new(cfg.delta_b, cfg.delta_s);
        policy.safe = safe;
        let mut rc = RunConfig::new(policy);
        rc.delay = cfg.delay.clone();
        rc.seed = derive_seed(seed, 0, tag);
        rc.event_cap = cfg.event_cap;
        rc
    };
    if wants(Protocol::Plain) || wants(Protocol::Decommit) {
        let mut rc = base(false, 1);
        rc.decommit = true;
        let result = run(net, rc);
        for p in [Protocol::Plain, Protocol::Decommit] {
            if wants(p) {
                out.push(ProtocolResult { protocol: p, stats: stats_of(cfg, net, efficient, &result, p) });
            }
        }
    }
    if wants(Protocol::Safe) {
        let result = run(net, base(true, 2));
        out.push(ProtocolResult { protocol: Protocol::Safe, stats: stats_of(cfg, net, efficient, &result, Protocol::Safe) });
    }
    out.sort_by_key(|r| cfg.protocols.iter().position(|&p| p == r.protocol));
    out
}

fn stats_of(
    cfg: &ExperimentConfig,
    net: &Network,
    efficient: Money,
    result: &Result<crate::simkernel::RunTrace, KernelError>,
    p: Protocol,
) -> Result<ProtocolStats, String> {
    let trace = result.as_ref().map_err(|e| e.to_string())?;
    let alloc = match (p, &trace.decommit) {
        (Protocol::Decommit, Some(d)) => &d.allocation,
        _ => &trace.allocation,
    };
    let cls = classify_outcome(net, alloc, &trace.prices, &trace.asks, cfg.delta_b, cfg.delta_s);
    let value = alloc.value(net);
    let producer_surplus: Money =
        net.producers().map(|(a, _)| alloc.surplus(net, &trace.prices, a).expect("agent exists")).sum();
    let res = &net.resolution;
    Ok(ProtocolStats {
        value,
        efficiency: res.to_f64(value) / res.to_f64(efficient),
        class: EfficiencyClass::of(value, efficient),
        outcome: cls.class,
        producer_surplus_frac: res.to_f64(producer_surplus) / res.to_f64(efficient),
        dead_ends: alloc.dead_ends(net).len(),
        lambda_delta: cls.class == OutcomeClass::LambdaDeltaEquilibrium,
        bids_total: trace.total_bids(),
        bids_meaningful: count_meaningful_bids(trace),
        quasi_q_tick: trace.quasi_quiescence_tick,
        q_tick: trace.quiescence_tick,
        monitor_violations: trace.violations.len(),
    })
}

fn one_instance(cfg: &ExperimentConfig, calibrated: &Network, id: usize) -> Result<InstanceResult, ExperimentError> {
    let seed = derive_seed(cfg.seed, id as u64, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=cfg.max_attempts.max(1) {
        let net = sample_instance(&cfg.topology, calibrated, &mut rng)?;
        let existence = if cfg.filter == EqFilter::Any && cfg.protocols.is_empty() {
            None
        } else {
            Some(competitive_equilibrium_exists(&net))
        };
        let eq_exists = existence.as_ref().is_some_and(|e| e.exists());
        let keep = match cfg.filter {
            EqFilter::Any => true,
            EqFilter::Exists => eq_exists,
            EqFilter::NotExists => !eq_exists,
        };
        if !keep {
            continue;
        }
        let efficient_value = existence.map_or_else(|| efficient_allocation(&net).1, |e| e.value);
        let protocols = run_protocols(cfg, &net, efficient_value, derive_seed(seed, attempt as u64, 7));
        return Ok(InstanceResult { id, network: net, eq_exists, efficient_value, attempts: attempt, protocols });
    }
    Err(ExperimentError::FilterExhausted { id, attempts: cfg.max_attempts })
}

/// Runs every instance in parallel; results come back in instance order,
/// so output never depends on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Result<InstanceResult, ExperimentError>>, ExperimentError> {
    let calibrated = match &cfg.topology {
        Topology::Fixed(net) if !cfg.keep_values => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX, 0));
            calibrate_network(net, cfg.calibration_samples, &mut rng)?
        }
        Topology::Fixed(net) => net.clone(),
        Topology::Random { .. } => Network::new(Resolution::default()),
    };
    Ok((0..cfg.instances).into_par_iter().map(|i| one_instance(cfg, &calibrated, i)).collect())
}

/// Two-sided p-value of Welch's unequal-variance t-test.
pub fn t_test(a: &[f64], b: &[f64]) -> f64 {
    assert!(a.len() >= 2 && b.len() >= 2, "each sample needs at least two points");
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let var = |x: &[f64], m: f64| x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma) / a.len() as f64, var(b, mb) / b.len() as f64);
    if va + vb == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va.powi(2) / (a.len() - 1) as f64 + vb.powi(2) / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    // The survival function keeps precision far in the tail.
    2.0 * dist.sf(t.abs())
}

#[derive(Serialize)]
struct ReportRow<'a> {
    instance_id: usize,
    topology: &'a str,
    eq_exists: bool,
    protocol: &'a str,
    efficiency: String,
    class: &'a str,
    producer_surplus_frac: String,
    dead_ends: String,
    lambda_delta: String,
    bids_total: String,
    bids_meaningful: String,
    quasi_q_tick: String,
    q_tick: String,
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

/// One row per (instance, protocol). Failed runs keep their row with the
/// class column naming the failure.
pub fn report_csv(label: &str, results: &[Result<InstanceResult, ExperimentError>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        let Ok(inst) = r else { continue };
        for p in &inst.protocols {
            let row = match &p.stats {
                Ok(s) => ReportRow {
                    instance_id: inst.id,
                    topology: label,
                    eq_exists: inst.eq_exists,
                    protocol: p.protocol.as_str(),
                    efficiency: f(s.efficiency),
                    class: s.class.as_str(),
                    producer_surplus_frac: f(s.producer_surplus_frac),
                    dead_ends: s.dead_ends.to_string(),
                    lambda_delta: s.lambda_delta.to_string(),
                    bids_total: s.bids_total.to_string(),
                    bids_meaningful: s.bids_meaningful.to_string(),
                    quasi_q_tick: s.quasi_q_tick.map_or(String::new(), |t| t.to_string()),
                    q_tick: s.q_tick.to_string(),
                },
                Err(_) => ReportRow {
                    instance_id: inst.id,
                    topology: label,
                    eq_exists: inst.eq_exists,
                    protocol: p.protocol.as_str(),
                    efficiency: String::new(),
                    class: "failed",
                    producer_surplus_frac: String::new(),
                    dead_ends: String::new(),
                    lambda_delta: String::new(),
                    bids_total: String::new(),
                    bids_meaningful: String::new(),
                    quasi_q_tick: String::new(),
                    q_tick: String::new(),
                },
            };
            w.serialize(row).expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SummaryRow {
    pub topology: String,
    /// `all`, `eq`, or `no-eq`.
    pub group: String,
    pub protocol: String,
    pub runs: usize,
    pub failed: usize,
    pub negative_pct: f64,
    pub zero_pct: f64,
    pub suboptimal_pct: f64,
    pub optimal_pct: f64,
    pub mean_efficiency: f64,
    pub lambda_delta_pct: f64,
    pub mean_efficiency_lambda_delta: Option<f64>,
    pub mean_efficiency_other: Option<f64>,
    pub mean_producer_surplus_frac: f64,
}

pub fn summarize(label: &str, results: &[Result<InstanceResult, ExperimentError>]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, Protocol), (usize, Vec<&ProtocolStats>)> = BTreeMap::new();
    for inst in results.iter().filter_map(|r| r.as_ref().ok()) {
        let g = if inst.eq_exists { "eq" } else { "no-eq" };
        for p in &inst.protocols {
            for key in ["all", g] {
                let e = groups.entry((key.to_string(), p.protocol)).or_default();
                match &p.stats {
                    Ok(s) => e.1.push(s),
                    Err(_) => e.0 += 1,
                }
            }
        }
    }
    let mean = |xs: &[f64]| if xs.is_empty() { None } else { Some(xs.iter().sum::<f64>() / xs.len() as f64) };
    groups
        .into_iter()
        .map(|((group, protocol), (failed, stats))| {
            let n = stats.len();
            let pct = |c: EfficiencyClass| if n == 0 { 0.0 } else { 100.0 * stats.iter().filter(|s| s.class == c).count() as f64 / n as f64 };
            let eff: Vec<f64> = stats.iter().map(|s| s.efficiency).collect();
            let ld: Vec<f64> = stats.iter().filter(|s| s.lambda_delta).map(|s| s.efficiency).collect();
            let other: Vec<f64> = stats.iter().filter(|s| !s.lambda_delta).map(|s| s.efficiency).collect();
            let ps: Vec<f64> = stats.iter().map(|s| s.producer_surplus_frac).collect();
            SummaryRow {
                topology: label.to_string(),
                group,
                protocol: protocol.as_str().to_string(),
                runs: n,
                failed,
                negative_pct: pct(EfficiencyClass::Negative),
                zero_pct: pct(EfficiencyClass::Zero),
                suboptimal_pct: pct(EfficiencyClass::Suboptimal),
                optimal_pct: pct(EfficiencyClass::Optimal),
                mean_efficiency: mean(&eff).unwrap_or(0.0),
                lambda_delta_pct: if n == 0 { 0.0 } else { 100.0 * ld.len() as f64 / n as f64 },
                mean_efficiency_lambda_delta: mean(&ld),
                mean_efficiency_other: mean(&other),
                mean_producer_surplus_frac: mean(&ps).unwrap_or(0.0),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

/// Experiment settings as read from a JSON file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    /// A fixture name or a path to a network file.
    pub topology: String,
    #[serde(default)]
    pub params: Vec<String>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delta_b: Option<String>,
    #[serde(default)]
    pub delta_s: Option<String>,
    #[serde(default)]
    pub protocols: Option<Vec<Protocol>>,
    #[serde(default = "default_filter")]
    pub filter: EqFilter,
    #[serde(default)]
    pub calibration_samples: Option<usize>,
    #[serde(default)]
    pub keep_values: bool,
    #[serde(default)]
    pub delay: Option<String>,
    #[serde(default)]
    pub event_cap: Option<u64>,
    #[serde(default)]
    pub max_agents: Option<usize>,
}

fn default_instances() -> usize {
    100
}

fn default_filter() -> EqFilter {
    EqFilter::Any
}

impl ConfigDoc {
    /// `load` turns a file path into a network; fixture names are resolved here.
    pub fn into_config(
        self,
        load: impl Fn(&str) -> Result<Network, String>,
    ) -> Result<ExperimentConfig, String> {
        let random = self.topology.starts_with("random-");
        let topology = if random {
            let spec = RandomSpec { max_agents: self.max_agents.unwrap_or(RandomSpec::default().max_agents), ..RandomSpec::default() };
            Topology::Random { family: self.topology.clone(), spec }
        } else if fixtures::FIXTURE_NAMES.contains(&self.topology.as_str()) {
            Topology::Fixed(fixtures::by_name(&self.topology, &self.params, self.seed).map_err(|e| e.to_string())?)
        } else {
            Topology::Fixed(load(&self.topology)?)
        };
        let mut cfg = ExperimentConfig::new(topology);
        cfg.label = self.label.unwrap_or(self.topology);
        cfg.instances = self.instances;
        cfg.seed = self.seed;
        let res = Resolution::default();
        if let Some(d) = self.delta_b {
            cfg.delta_b = res.money(&d).map_err(|e| e.to_string())?;
        }
        if let Some(d) = self.delta_s {
            cfg.delta_s = res.money(&d).map_err(|e| e.to_string())?;
        }
        if let Some(p) = self.protocols {
            cfg.protocols = p;
        }
        cfg.filter = self.filter;
        if let Some(s) = self.calibration_samples {
            cfg.calibration_samples = s;
        }
        cfg.keep_values = self.keep_values;
        if let Some(d) = self.delay {
            cfg.delay = DelayModel::parse(&d).ok_or_else(|| format!("bad delay `{d}`"))?;
        }
        if let Some(c) = self.event_cap {
            cfg.event_cap = c;
        }
        Ok(cfg)
    }
}
