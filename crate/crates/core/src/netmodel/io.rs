//! Textual formats: network files, allocation snapshots, price maps.
//!
//! Amounts are decimal strings checked against the network resolution.
//! Plain JSON numbers are accepted on input and converted through their
//! shortest decimal rendering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::allocation::{Allocation, PriceSystem};
use super::money::{Money, MoneyError, Resolution};
use super::network::{AgentKind, Dir, Edge, FilePolicy, Network, PolicyOverrides};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("amount: {0}")]
    Money(#[from] MoneyError),
    #[error("unknown good `{0}`")]
    UnknownGood(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("amount must be a string or number, got {0}")]
    NotAnAmount(String),
    #[error("bad policy variant `{0}` (expected plain or safe)")]
    BadVariant(String),
    #[error("edge {0} is not in the network")]
    UnknownEdge(String),
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    #[serde(default = "default_resolution")]
    resolution: String,
    goods: Vec<String>,
    #[serde(default)]
    consumers: Vec<ConsumerDoc>,
    #[serde(default)]
    producers: Vec<ProducerDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<PolicyDoc>,
}

fn default_resolution() -> String {
    Resolution::default().to_string()
}

#[derive(Serialize, Deserialize)]
struct ConsumerDoc {
    id: String,
    values: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<PolicyDoc>,
}

#[derive(Serialize, Deserialize)]
struct ProducerDoc {
    id: String,
    output: String,
    #[serde(default)]
    inputs: Vec<InputDoc>,
    cost: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<PolicyDoc>,
}

#[derive(Serialize, Deserialize)]
struct InputDoc {
    good: String,
    #[serde(default = "one")]
    units: u32,
}

fn one() -> u32 {
    1
}

#[derive(Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
struct PolicyDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    include_cost: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_b: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_s: Option<Value>,
}

fn amount(res: &Resolution, v: &Value) -> Result<Money, FormatError> {
    match v {
        Value::String(s) => Ok(res.money(s)?),
        Value::Number(n) => Ok(res.money(&n.to_string())?),
        other => Err(FormatError::NotAnAmount(other.to_string())),
    }
}

fn variant(v: &Option<String>) -> Result<Option<bool>, FormatError> {
    match v.as_deref() {
        None => Ok(None),
        Some("plain") => Ok(Some(false)),
        Some("safe") => Ok(Some(true)),
        Some(other) => Err(FormatError::BadVariant(other.to_string())),
    }
}

fn variant_name(safe: Option<bool>) -> Option<String> {
    safe.map(|s| if s { "safe" } else { "plain" }.to_string())
}

fn overrides_doc(o: &PolicyOverrides) -> Option<PolicyDoc> {
    if o.safe.is_none() && o.include_cost.is_none() {
        return None;
    }
    Some(PolicyDoc { variant: variant_name(o.safe), include_cost: o.include_cost, ..Default::default() })
}

pub fn parse_network(text: &str) -> Result<Network, FormatError> {
    let doc: NetworkDoc = serde_json::from_str(text)?;
    let res = Resolution::parse(&doc.resolution)?;
    let mut net = Network::new(res);
    net.note = doc.note;
    for g in &doc.goods {
        net.add_good(g.clone());
    }
    let good = |net: &Network, name: &str| net.good_by_name(name).ok_or_else(|| FormatError::UnknownGood(name.to_string()));
    for c in &doc.consumers {
        let mut values = Vec::new();
        for (g, v) in &c.values {
            values.push((good(&net, g)?, amount(&res, v)?));
        }
        let id = net.add_consumer(c.id.clone(), &values);
        if let Some(p) = &c.policy {
            net.agents[id.0].overrides = PolicyOverrides { safe: variant(&p.variant)?, include_cost: p.include_cost };
        }
    }
    for p in &doc.producers {
        let output = good(&net, &p.output)?;
        let mut inputs = Vec::new();
        for i in &p.inputs {
            inputs.push((good(&net, &i.good)?, i.units));
        }
        let cost = amount(&res, &p.cost)?;
        let id = net.add_producer(p.id.clone(), output, &inputs, cost);
        if let Some(pol) = &p.policy {
            net.agents[id.0].overrides = PolicyOverrides { safe: variant(&pol.variant)?, include_cost: pol.include_cost };
        }
    }
    if let Some(p) = &doc.policy {
        net.policy = FilePolicy {
            safe: variant(&p.variant)?,
            include_cost: p.include_cost,
            delta_b: p.delta_b.as_ref().map(|v| amount(&res, v)).transpose()?,
            delta_s: p.delta_s.as_ref().map(|v| amount(&res, v)).transpose()?,
        };
    }
    Ok(net)
}

pub fn write_network(net: &Network) -> String {
    let res = &net.resolution;
    let mut consumers = Vec::new();
    let mut producers = Vec::new();
    for a in &net.agents {
        match &a.kind {
            AgentKind::Consumer(c) => consumers.push(ConsumerDoc {
                id: a.name.clone(),
                values: c
                    .values
                    .iter()
                    .map(|&(g, v)| (net.good_name(g).to_string(), Value::String(res.format(v))))
                    .collect(),
                policy: overrides_doc(&a.overrides),
            }),
            AgentKind::Producer(p) => producers.push(ProducerDoc {
                id: a.name.clone(),
                output: net.good_name(p.output).to_string(),
                inputs: p.inputs.iter().map(|&(g, k)| InputDoc { good: net.good_name(g).to_string(), units: k }).collect(),
                cost: Value::String(res.format(p.cost)),
                policy: overrides_doc(&a.overrides),
            }),
        }
    }
    let pol = &net.policy;
    let policy = if *pol == FilePolicy::default() {
        None
    } else {
        Some(PolicyDoc {
            variant: variant_name(pol.safe),
            include_cost: pol.include_cost,
            delta_b: pol.delta_b.map(|m| Value::String(res.format(m))),
            delta_s: pol.delta_s.map(|m| Value::String(res.format(m))),
        })
    };
    let doc = NetworkDoc { note: net.note.clone(), resolution: res.to_string(), goods: net.goods.clone(), consumers, producers, policy };
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
    s.push('\n');
    s
}

/// One traded unit edge in snapshot form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: String,
    pub to: String,
    pub good: String,
    pub unit: u32,
}

pub fn edge_doc(net: &Network, e: &Edge) -> EdgeDoc {
    let a = net.agent_name(e.agent).to_string();
    let g = net.good_name(e.good).to_string();
    match e.dir {
        Dir::Provide => EdgeDoc { from: a, to: g.clone(), good: g, unit: e.unit },
        Dir::Acquire => EdgeDoc { from: g.clone(), to: a, good: g, unit: e.unit },
    }
}

pub fn edge_from_doc(net: &Network, d: &EdgeDoc) -> Result<Edge, FormatError> {
    let good = net.good_by_name(&d.good).ok_or_else(|| FormatError::UnknownGood(d.good.clone()))?;
    let lookup = |name: &str| net.agent_by_name(name).ok_or_else(|| FormatError::UnknownAgent(name.to_string()));
    let e = if d.to == d.good {
        Edge { good, agent: lookup(&d.from)?, dir: Dir::Provide, unit: d.unit }
    } else if d.from == d.good {
        Edge { good, agent: lookup(&d.to)?, dir: Dir::Acquire, unit: d.unit }
    } else {
        return Err(FormatError::UnknownEdge(format!("{} -> {}", d.from, d.to)));
    };
    if !net.has_edge(&e) {
        return Err(FormatError::UnknownEdge(format!("{} -> {} unit {}", d.from, d.to, d.unit)));
    }
    Ok(e)
}

pub fn allocation_docs(net: &Network, alloc: &Allocation) -> Vec<EdgeDoc> {
    alloc.edges.iter().map(|e| edge_doc(net, e)).collect()
}

pub fn allocation_from_docs(net: &Network, docs: &[EdgeDoc]) -> Result<Allocation, FormatError> {
    docs.iter().map(|d| edge_from_doc(net, d)).collect::<Result<Vec<_>, _>>().map(Allocation::from_edges)
}

pub fn write_allocation(net: &Network, alloc: &Allocation) -> String {
    serde_json::to_string_pretty(&allocation_docs(net, alloc)).expect("serializable")
}

pub fn parse_allocation(net: &Network, text: &str) -> Result<Allocation, FormatError> {
    let docs: Vec<EdgeDoc> = serde_json::from_str(text)?;
    allocation_from_docs(net, &docs)
}

pub fn prices_doc(net: &Network, prices: &PriceSystem) -> BTreeMap<String, String> {
    net.good_ids().map(|g| (net.good_name(g).to_string(), net.resolution.format(prices.get(g)))).collect()
}

pub fn prices_from_doc(net: &Network, doc: &BTreeMap<String, Value>) -> Result<PriceSystem, FormatError> {
    let mut p = PriceSystem::zero(net);
    for (g, v) in doc {
        let id = net.good_by_name(g).ok_or_else(|| FormatError::UnknownGood(g.clone()))?;
        p.set(id, amount(&net.resolution, v)?);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"{
        "resolution": "0.0001",
        "goods": ["g"],
        "consumers": [{"id": "c", "values": {"g": "1.0"}}],
        "producers": [{"id": "p", "output": "g", "inputs": [], "cost": 0.4}]
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let net = parse_network(CHAIN).unwrap();
        assert_eq!(net.goods, vec!["g"]);
        assert_eq!(net.producers().next().unwrap().1.cost, Money(4000));
        let text = write_network(&net);
        let back = parse_network(&text).unwrap();
        assert_eq!(back, net);
        assert_eq!(write_network(&back), text);
    }

    #[test]
    fn off_grid_amount_is_rejected() {
        let bad = CHAIN.replace("0.4", "\"0.00004\"");
        assert!(matches!(parse_network(&bad), Err(FormatError::Money(MoneyError::OffGrid { .. }))));
    }

    #[test]
    fn unknown_good_is_rejected() {
        let bad = CHAIN.replace("\"output\": \"g\"", "\"output\": \"h\"");
        assert!(matches!(parse_network(&bad), Err(FormatError::UnknownGood(_))));
    }

    #[test]
    fn policy_blocks_parse() {
        let text = r#"{
            "goods": ["g"],
            "consumers": [{"id": "c", "values": {"g": "1"}}],
            "producers": [{"id": "p", "output": "g", "cost": "0", "policy": {"variant": "safe"}}],
            "policy": {"include-cost": false, "delta-b": "0.5"}
        }"#;
        let net = parse_network(text).unwrap();
        assert_eq!(net.policy.include_cost, Some(false));
        assert_eq!(net.policy.delta_b, Some(Money(5000)));
        assert_eq!(net.agents[1].overrides.safe, Some(true));
        let again = parse_network(&write_network(&net)).unwrap();
        assert_eq!(again, net);
    }

    #[test]
    fn allocation_snapshot_round_trip() {
        let net = parse_network(CHAIN).unwrap();
        let alloc = Allocation::from_edges(net.edges());
        let text = write_allocation(&net, &alloc);
        assert!(text.contains("\"from\": \"p\""));
        assert_eq!(parse_allocation(&net, &text).unwrap(), alloc);
        let bad = r#"[{"from": "g", "to": "p", "good": "g", "unit": 0}]"#;
        assert!(parse_allocation(&net, bad).is_err());
    }
}
