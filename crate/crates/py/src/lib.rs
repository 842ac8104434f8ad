//! Python bindings. Networks travel as JSON text in the network file format;
//! results come back as JSON text.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use samp_core::agents::PolicyConfig;
use samp_core::analysis::{classify_outcome, competitive_equilibrium_exists, efficient_allocation};
use samp_core::netmodel::io::{allocation_docs, parse_network, prices_doc, write_network};
use samp_core::netmodel::Network;
use samp_core::simkernel::{count_meaningful_bids, run, DelayModel, RunConfig};
use samp_core::fixtures;
use serde_json::json;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn load(text: &str) -> PyResult<Network> {
    let net = parse_network(text).map_err(err)?;
    let violations = net.validate();
    if let Some(v) = violations.first() {
        return Err(err(format!("invalid network: {v}")));
    }
    Ok(net)
}

/// Structural violations of a network, empty when valid.
#[pyfunction]
fn validate(network: &str) -> PyResult<Vec<String>> {
    let net = parse_network(network).map_err(err)?;
    Ok(net.validate().iter().map(ToString::to_string).collect())
}

/// A bundled topology as network JSON.
#[pyfunction]
#[pyo3(signature = (name, params=Vec::new(), seed=0))]
fn gen_fixture(name: &str, params: Vec<String>, seed: u64) -> PyResult<String> {
    Ok(write_network(&fixtures::by_name(name, &params, seed).map_err(err)?))
}

/// Runs the protocol and returns the final state as JSON.
#[pyfunction]
#[pyo3(signature = (network, seed=0, delay="sync", safe=false, decommit=false, delta_b="0.01", delta_s="0.01"))]
fn run_protocol(
    network: &str,
    seed: u64,
    delay: &str,
    safe: bool,
    decommit: bool,
    delta_b: &str,
    delta_s: &str,
) -> PyResult<String> {
    let net = load(network)?;
    let res = &net.resolution;
    let (db, ds) = (res.money(delta_b).map_err(err)?, res.money(delta_s).map_err(err)?);
    let mut policy = PolicyConfig::new(db, ds);
    policy.safe = safe;
    let mut cfg = RunConfig::new(policy);
    cfg.seed = seed;
    cfg.decommit = decommit;
    cfg.delay = DelayModel::parse(delay).ok_or_else(|| err(format!("bad delay `{delay}`")))?;
    let trace = run(&net, cfg).map_err(err)?;
    let cls = classify_outcome(&net, &trace.allocation, &trace.prices, &trace.asks, db, ds);
    let doc = json!({
        "classification": cls.class.as_str(),
        "value": res.format(trace.allocation.value(&net)),
        "bids": trace.total_bids(),
        "meaningful_bids": count_meaningful_bids(&trace),
        "quiescence_tick": trace.quiescence_tick,
        "prices": prices_doc(&net, &trace.prices),
        "allocation": allocation_docs(&net, &trace.allocation),
        "decommit_value": trace.decommit.as_ref().map(|d| res.format(d.allocation.value(&net))),
    });
    Ok(doc.to_string())
}

/// Efficient value and allocation as JSON.
#[pyfunction]
fn efficient(network: &str) -> PyResult<String> {
    let net = load(network)?;
    let (alloc, value) = efficient_allocation(&net);
    Ok(json!({"value": net.resolution.format(value), "allocation": allocation_docs(&net, &alloc)}).to_string())
}

/// Existence verdict with witness prices or the explaining clash, as JSON.
#[pyfunction]
fn eq_exists(network: &str) -> PyResult<String> {
    let net = load(network)?;
    let ex = competitive_equilibrium_exists(&net);
    let prices = ex.witness().and_then(|(_, w)| w.grid.as_ref()).map(|p| prices_doc(&net, p));
    let clash = if ex.exists() { None } else { ex.first_clash().map(|c| c.describe(&net)) };
    Ok(json!({"exists": ex.exists(), "prices": prices, "clash": clash}).to_string())
}

#[pymodule]
fn samp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(gen_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(run_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(efficient, m)?)?;
    m.add_function(wrap_pyfunction!(eq_exists, m)?)?;
    Ok(())
}
