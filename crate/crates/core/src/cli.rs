//! The `samp` command line: validation, protocol runs, certificate checks,
//! oracles, experiments and fixture generation.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::agents::PolicyConfig;
use crate::analysis::{
    classify_outcome, competitive_equilibrium_exists, efficient_allocation, CertificateKind, EquilibriumCertificate,
};
use crate::expgen::{report_csv, run_experiment, summarize, summary_csv, ConfigDoc};
use crate::fixtures;
use crate::netmodel::io::{allocation_docs, parse_network, prices_doc, write_network};
use crate::netmodel::{Allocation, Money, Network, PriceSystem};
use crate::simkernel::{run, trace_lines, DelayModel, DelayScript, KernelError, RunConfig, RunTrace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_EVENT_CAP: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "samp", version, about = "Simultaneous ascending auctions on supply-chain networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Csv,
    StructuredText,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyName {
    Plain,
    Safe,
}

/// When a producer re-offers its output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputTrigger {
    /// Once perceived cost exceeds the standing offer.
    AboveOffer,
    /// On every rise in perceived cost.
    AnyRise,
}

#[derive(clap::Args, Debug, Clone)]
pub struct OutputArgs {
    /// Write the main output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "human")]
    pub format: Format,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a network file and list structural violations.
    Validate {
        network: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the auction protocol on a network.
    Run {
        network: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// sync, uniform:MIN,MAX, script:PATH or script:worst.
        #[arg(long, default_value = "sync")]
        delay: String,
        #[arg(long, value_enum)]
        policy: Option<PolicyName>,
        #[arg(long, value_enum, default_value = "off")]
        decommit: Switch,
        #[arg(long, value_enum)]
        include_cost: Option<Switch>,
        #[arg(long, value_enum, default_value = "above-offer")]
        output_trigger: OutputTrigger,
        #[arg(long)]
        delta_b: Option<String>,
        #[arg(long)]
        delta_s: Option<String>,
        #[arg(long)]
        event_cap: Option<u64>,
        /// Write the line-delimited event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write a lambda-delta certificate for the final state here.
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Re-check an equilibrium certificate against a network.
    Verify {
        network: PathBuf,
        certificate: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Decide whether a competitive equilibrium exists.
    EqExists {
        network: PathBuf,
        /// Write an exact certificate for the witness here.
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Print an efficient allocation and its value.
    Efficient {
        network: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run a randomized protocol comparison described by a JSON config.
    Experiment {
        config: PathBuf,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the per-group summary CSV here.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write a bundled topology as a network file.
    GenFixture {
        name: String,
        params: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Result of one invocation; the binary prints it and exits with `code`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        fail(EXIT_INVALID, e.to_string())
    }
}

/// Parses `args` (including the program name) and executes the command.
pub fn execute<I, T>(args: I) -> CliOutput
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                CliOutput { code, stdout: text, stderr: String::new() }
            } else {
                CliOutput { code, stdout: String::new(), stderr: text }
            };
        }
    };
    let mut out = CliOutput::default();
    match dispatch(cli.command, &mut out) {
        Ok(code) => out.code = code,
        Err(f) => {
            out.code = f.code;
            out.stderr.push_str(&f.message);
            if !f.message.ends_with('\n') {
                out.stderr.push('\n');
            }
        }
    }
    out
}

fn emit(output: &OutputArgs, text: String, out: &mut CliOutput) -> Result<(), Failure> {
    match &output.out {
        Some(path) => fs::write(path, text)?,
        None => out.stdout.push_str(&text),
    }
    Ok(())
}

/// Loads and validates a network; violations exit with status 1.
fn load(path: &PathBuf) -> Result<Network, Failure> {
    let text = fs::read_to_string(path).map_err(|e| fail(EXIT_INVALID, format!("{}: {e}", path.display())))?;
    let net = parse_network(&text).map_err(|e| fail(EXIT_INVALID, format!("{}: {e}", path.display())))?;
    let violations = net.validate();
    if !violations.is_empty() {
        let mut msg = format!("{}: invalid network\n", path.display());
        for v in violations {
            let _ = writeln!(msg, "  {v}");
        }
        return Err(fail(EXIT_INVALID, msg));
    }
    Ok(net)
}

fn json_text(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn allocation_lines(net: &Network, alloc: &Allocation) -> String {
    let mut s = String::new();
    if alloc.is_empty() {
        s.push_str("  (empty)\n");
    }
    for d in allocation_docs(net, alloc) {
        let _ = writeln!(s, "  {}", serde_json::to_string(&d).expect("serializable"));
    }
    s
}

fn price_lines(net: &Network, prices: &PriceSystem) -> String {
    let mut s = String::new();
    for g in net.good_ids() {
        let _ = writeln!(s, "  {} = {}", net.good_name(g), net.resolution.format(prices.get(g)));
    }
    s
}

fn dispatch(cmd: Command, out: &mut CliOutput) -> Result<i32, Failure> {
    match cmd {
        Command::Validate { network, output } => validate(&network, &output, out),
        Command::Run {
            network,
            seed,
            delay,
            policy,
            decommit,
            include_cost,
            output_trigger,
            delta_b,
            delta_s,
            event_cap,
            trace,
            certificate,
            output,
        } => {
            let net = load(&network)?;
            let args =
                RunArgs { seed, delay, policy, decommit, include_cost, output_trigger, delta_b, delta_s, event_cap, trace, certificate };
            run_cmd(&net, &args, &output, out)
        }
        Command::Verify { network, certificate, output } => {
            let net = load(&network)?;
            let text = fs::read_to_string(&certificate)?;
            let cert = EquilibriumCertificate::from_json(&net, &text).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
            let result = cert.verify(&net);
            let text = match output.format {
                Format::StructuredText => json_text(&json!({
                    "verified": result.is_ok(),
                    "violations": result.as_ref().err().cloned().unwrap_or_default(),
                })),
                _ => match &result {
                    Ok(()) => "certificate verified\n".to_string(),
                    Err(v) => {
                        let mut s = "certificate rejected\n".to_string();
                        for line in v {
                            let _ = writeln!(s, "  {line}");
                        }
                        s
                    }
                },
            };
            emit(&output, text, out)?;
            Ok(if result.is_ok() { EXIT_OK } else { EXIT_INVALID })
        }
        Command::EqExists { network, certificate, output } => eq_exists(&load(&network)?, certificate, &output, out),
        Command::Efficient { network, output } => {
            let net = load(&network)?;
            let (alloc, value) = efficient_allocation(&net);
            let res = &net.resolution;
            let text = match output.format {
                Format::StructuredText => {
                    json_text(&json!({"value": res.format(value), "allocation": allocation_docs(&net, &alloc)}))
                }
                Format::Csv => {
                    let mut s = "from,to,good,unit\n".to_string();
                    for d in allocation_docs(&net, &alloc) {
                        let _ = writeln!(s, "{},{},{},{}", d.from, d.to, d.good, d.unit);
                    }
                    s
                }
                Format::Human => format!("value {}\nallocation\n{}", res.format(value), allocation_lines(&net, &alloc)),
            };
            emit(&output, text, out)?;
            Ok(EXIT_OK)
        }
        Command::Experiment { config, instances, seed, summary, output } => {
            let text = fs::read_to_string(&config)?;
            let mut doc: ConfigDoc =
                serde_json::from_str(&text).map_err(|e| fail(EXIT_INVALID, format!("{}: {e}", config.display())))?;
            if let Some(s) = seed {
                doc.seed = s;
            }
            let base = config.parent().map(PathBuf::from).unwrap_or_default();
            let mut cfg = doc
                .into_config(|p| {
                    let path = base.join(p);
                    load(&path).map_err(|f| f.message)
                })
                .map_err(|e| fail(EXIT_INVALID, e))?;
            if let Some(n) = instances {
                cfg.instances = n;
            }
            let results = run_experiment(&cfg).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
            for r in &results {
                if let Err(e) = r {
                    let _ = writeln!(out.stderr, "{e}");
                }
            }
            let rows = summarize(&cfg.label, &results);
            if let Some(path) = summary {
                fs::write(path, summary_csv(&rows))?;
            }
            let text = match output.format {
                Format::Human => {
                    let mut s = String::new();
                    for r in &rows {
                        let _ = writeln!(
                            s,
                            "{} {} {}: runs {} failed {} | negative {:.1}% zero {:.1}% suboptimal {:.1}% optimal {:.1}% | mean efficiency {:.4} | lambda-delta {:.1}%",
                            r.topology, r.group, r.protocol, r.runs, r.failed, r.negative_pct, r.zero_pct,
                            r.suboptimal_pct, r.optimal_pct, r.mean_efficiency, r.lambda_delta_pct
                        );
                    }
                    s
                }
                _ => report_csv(&cfg.label, &results),
            };
            emit(&output, text, out)?;
            Ok(EXIT_OK)
        }
        Command::GenFixture { name, params, seed, out: path } => {
            let net = fixtures::by_name(&name, &params, seed).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
            let text = write_network(&net);
            match path {
                Some(p) => fs::write(p, text)?,
                None => out.stdout.push_str(&text),
            }
            Ok(EXIT_OK)
        }
    }
}

fn validate(path: &PathBuf, output: &OutputArgs, out: &mut CliOutput) -> Result<i32, Failure> {
    let text = fs::read_to_string(path)?;
    let (violations, warnings) = match parse_network(&text) {
        Ok(net) => (
            net.validate().iter().map(ToString::to_string).collect::<Vec<_>>(),
            net.warnings().iter().map(ToString::to_string).collect::<Vec<_>>(),
        ),
        Err(e) => (vec![e.to_string()], Vec::new()),
    };
    let text = match output.format {
        Format::StructuredText => json_text(&json!({"valid": violations.is_empty(), "violations": violations, "warnings": warnings})),
        _ => {
            let mut s = String::new();
            for v in &violations {
                let _ = writeln!(s, "violation: {v}");
            }
            for w in &warnings {
                let _ = writeln!(s, "warning: {w}");
            }
            if violations.is_empty() {
                s.push_str("valid\n");
            }
            s
        }
    };
    emit(output, text, out)?;
    Ok(if violations.is_empty() { EXIT_OK } else { EXIT_INVALID })
}

struct RunArgs {
    seed: u64,
    delay: String,
    policy: Option<PolicyName>,
    decommit: Switch,
    include_cost: Option<Switch>,
    output_trigger: OutputTrigger,
    delta_b: Option<String>,
    delta_s: Option<String>,
    event_cap: Option<u64>,
    trace: Option<PathBuf>,
    certificate: Option<PathBuf>,
}

fn parse_delay(net: &Network, text: &str) -> Result<DelayModel, Failure> {
    if let Some(rest) = text.strip_prefix("script:") {
        if rest == "worst" {
            // The adversarial schedule for the exponential fixture.
            let stages = net.goods.iter().filter(|g| g.ends_with("-B")).count();
            if stages == 0 {
                return Err(fail(EXIT_INVALID, "script:worst needs an exponential fixture network"));
            }
            return Ok(DelayModel::Script(fixtures::exponential_script(stages)));
        }
        let body = fs::read_to_string(rest).map_err(|e| fail(EXIT_INVALID, format!("{rest}: {e}")))?;
        let script: DelayScript = serde_json::from_str(&body).map_err(|e| fail(EXIT_INVALID, format!("{rest}: {e}")))?;
        return Ok(DelayModel::Script(script));
    }
    DelayModel::parse(text).ok_or_else(|| fail(EXIT_INVALID, format!("bad delay `{text}`")))
}

fn default_delta(net: &Network) -> Money {
    net.resolution.money("0.01").expect("grid amount").max(Money(1))
}

fn run_config(net: &Network, args: &RunArgs) -> Result<RunConfig, Failure> {
    let res = &net.resolution;
    let amount = |flag: &Option<String>, file: Option<Money>| -> Result<Money, Failure> {
        match flag {
            Some(s) => res.money(s).map_err(|e| fail(EXIT_INVALID, format!("bad amount `{s}`: {e}"))),
            None => Ok(file.unwrap_or_else(|| default_delta(net))),
        }
    };
    let mut policy = PolicyConfig::new(amount(&args.delta_b, net.policy.delta_b)?, amount(&args.delta_s, net.policy.delta_s)?);
    policy.safe = args.policy.map_or(net.policy.safe.unwrap_or(false), |p| p == PolicyName::Safe);
    policy.include_cost = args.include_cost.map_or(net.policy.include_cost.unwrap_or(true), Switch::on);
    policy.reoffer_on_any_rise = args.output_trigger == OutputTrigger::AnyRise;
    let mut cfg = RunConfig::new(policy);
    cfg.seed = args.seed;
    cfg.delay = parse_delay(net, &args.delay)?;
    cfg.decommit = args.decommit.on();
    cfg.record_trace = args.trace.is_some();
    if let Some(c) = args.event_cap {
        cfg.event_cap = c;
    }
    Ok(cfg)
}

fn run_cmd(net: &Network, args: &RunArgs, output: &OutputArgs, out: &mut CliOutput) -> Result<i32, Failure> {
    let cfg = run_config(net, args)?;
    let (db, ds) = (cfg.policy.delta_b, cfg.policy.delta_s);
    let trace = match run(net, cfg) {
        Ok(t) => t,
        Err(e @ KernelError::EventCap { .. }) => return Err(fail(EXIT_EVENT_CAP, e.to_string())),
        Err(e) => return Err(fail(EXIT_INVALID, e.to_string())),
    };
    if let Some(path) = &args.trace {
        fs::write(path, trace_lines(net, &trace))?;
    }
    let cls = classify_outcome(net, &trace.allocation, &trace.prices, &trace.asks, db, ds);
    if let Some(path) = &args.certificate {
        let (_, efficient) = efficient_allocation(net);
        let cert = EquilibriumCertificate::new(
            net,
            trace.allocation.clone(),
            trace.prices.clone(),
            CertificateKind::LambdaDelta(cls.params.clone()),
            Some(efficient),
        );
        fs::write(path, cert.to_json(net))?;
    }
    let text = match output.format {
        Format::StructuredText => json_text(&run_json(net, &trace, cls.class.as_str())),
        Format::Csv => {
            let mut s = "good,price\n".to_string();
            for g in net.good_ids() {
                let _ = writeln!(s, "{},{}", net.good_name(g), net.resolution.format(trace.prices.get(g)));
            }
            s
        }
        Format::Human => run_human(net, &trace, cls.class.as_str()),
    };
    emit(output, text, out)?;
    Ok(EXIT_OK)
}

fn run_human(net: &Network, trace: &RunTrace, class: &str) -> String {
    let res = &net.resolution;
    let mut s = String::new();
    let value = trace.allocation.value(net);
    let _ = writeln!(s, "classification {class}");
    let _ = writeln!(s, "value {}", res.format(value));
    let _ = writeln!(s, "bids {} (meaningful {})", trace.total_bids(), crate::simkernel::count_meaningful_bids(trace));
    match trace.quasi_quiescence_tick {
        Some(t) => {
            let _ = writeln!(s, "quasi-quiescent at tick {t}, quiescent at tick {}", trace.quiescence_tick);
        }
        None => {
            let _ = writeln!(s, "quiescent at tick {}", trace.quiescence_tick);
        }
    }
    s.push_str("prices\n");
    s.push_str(&price_lines(net, &trace.prices));
    s.push_str("allocation\n");
    s.push_str(&allocation_lines(net, &trace.allocation));
    if !trace.dead_ends.is_empty() {
        let names: Vec<&str> = trace.dead_ends.iter().map(|&a| net.agent_name(a)).collect();
        let _ = writeln!(s, "dead ends {}", names.join(" "));
    }
    if let Some(d) = &trace.decommit {
        let _ = writeln!(s, "after decommitment value {}", res.format(d.allocation.value(net)));
        s.push_str(&allocation_lines(net, &d.allocation));
    }
    for v in &trace.violations {
        let _ = writeln!(s, "monitor: {v}");
    }
    s
}

fn run_json(net: &Network, trace: &RunTrace, class: &str) -> Value {
    let res = &net.resolution;
    let dead: Vec<&str> = trace.dead_ends.iter().map(|&a| net.agent_name(a)).collect();
    json!({
        "classification": class,
        "value": res.format(trace.allocation.value(net)),
        "bids": trace.total_bids(),
        "meaningful_bids": crate::simkernel::count_meaningful_bids(trace),
        "quasi_quiescence_tick": trace.quasi_quiescence_tick,
        "quiescence_tick": trace.quiescence_tick,
        "prices": prices_doc(net, &trace.prices),
        "allocation": allocation_docs(net, &trace.allocation),
        "dead_ends": dead,
        "decommit": trace.decommit.as_ref().map(|d| json!({
            "value": res.format(d.allocation.value(net)),
            "allocation": allocation_docs(net, &d.allocation),
        })),
        "violations": trace.violations,
    })
}

fn eq_exists(net: &Network, certificate: Option<PathBuf>, output: &OutputArgs, out: &mut CliOutput) -> Result<i32, Failure> {
    let ex = competitive_equilibrium_exists(net);
    let res = &net.resolution;
    let witness = ex.witness().and_then(|(a, w)| w.grid.as_ref().map(|p| (a, p)));
    if let (Some(path), Some((alloc, prices))) = (&certificate, witness) {
        let cert = EquilibriumCertificate::new(net, alloc.clone(), prices.clone(), CertificateKind::Exact, Some(ex.value));
        fs::write(path, cert.to_json(net))?;
    }
    let clash = ex.first_clash().map(|c| c.describe(net));
    let text = match output.format {
        Format::StructuredText => json_text(&json!({
            "exists": ex.exists(),
            "efficient_value": res.format(ex.value),
            "prices": witness.map(|(_, p)| prices_doc(net, p)),
            "allocation": witness.map(|(a, _)| allocation_docs(net, a)),
            "clash": if ex.exists() { None } else { clash },
            "truncated": ex.truncated,
        })),
        _ => {
            let mut s = String::new();
            if ex.exists() {
                s.push_str("exists\n");
                match witness {
                    Some((alloc, prices)) => {
                        s.push_str("prices\n");
                        s.push_str(&price_lines(net, prices));
                        s.push_str("allocation\n");
                        s.push_str(&allocation_lines(net, alloc));
                    }
                    None => s.push_str("(no witness on the price grid)\n"),
                }
            } else {
                s.push_str("none\n");
                if let Some(c) = clash {
                    let _ = writeln!(s, "{c}");
                }
            }
            if ex.truncated {
                s.push_str("note: only the first efficient allocations were examined\n");
            }
            s
        }
    };
    emit(output, text, out)?;
    Ok(EXIT_OK)
}
