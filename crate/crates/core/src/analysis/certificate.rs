//! Self-contained equilibrium claims that can be re-checked from scratch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::equilibrium::{bound_report, check_competitive_equilibrium, check_lambda_delta, BoundReport, LambdaParams};
use crate::netmodel::io::{allocation_docs, allocation_from_docs, EdgeDoc, FormatError};
use crate::netmodel::{Allocation, Money, Network, PriceSystem};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CertificateKind {
    Exact,
    LambdaDelta(LambdaParams),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquilibriumCertificate {
    pub allocation: Allocation,
    pub prices: PriceSystem,
    pub kind: CertificateKind,
    /// `max_surplus - surplus` per agent, as claimed.
    pub slacks: Vec<Money>,
    pub bounds: Option<BoundReport>,
}

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown certificate kind `{0}`")]
    Kind(String),
    #[error("unknown agent `{0}`")]
    Agent(String),
    #[error("unknown good `{0}`")]
    Good(String),
    #[error("missing price for good `{0}`")]
    MissingPrice(String),
}

#[derive(Serialize, Deserialize)]
struct LambdaDoc {
    producer: String,
    good: String,
    amount: String,
}

#[derive(Serialize, Deserialize)]
struct BoundsDoc {
    achieved: String,
    efficient: String,
    general_bound: String,
    protocol_bound: String,
}

#[derive(Serialize, Deserialize)]
struct CertificateDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_s: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    lambda: Vec<LambdaDoc>,
    allocation: Vec<EdgeDoc>,
    prices: BTreeMap<String, String>,
    #[serde(default)]
    slacks: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<BoundsDoc>,
}

impl EquilibriumCertificate {
    /// Builds a certificate, computing slacks and, given the efficient
    /// value, the bound report.
    pub fn new(
        net: &Network,
        allocation: Allocation,
        prices: PriceSystem,
        kind: CertificateKind,
        efficient: Option<Money>,
    ) -> EquilibriumCertificate {
        let params = match &kind {
            CertificateKind::Exact => LambdaParams::default(),
            CertificateKind::LambdaDelta(p) => p.clone(),
        };
        let report = check_lambda_delta(net, &allocation, &prices, &params);
        let bounds = efficient.map(|e| bound_report(net, &allocation, &params, e));
        EquilibriumCertificate { allocation, prices, kind, slacks: report.slacks, bounds }
    }

    /// Re-derives every condition. Claimed slacks must match the recomputed
    /// ones, and a claimed bound report must hold.
    pub fn verify(&self, net: &Network) -> Result<(), Vec<String>> {
        let mut out = Vec::new();
        let params = match &self.kind {
            CertificateKind::Exact => {
                if let Err(v) = check_competitive_equilibrium(net, &self.allocation, &self.prices) {
                    out.extend(v);
                }
                LambdaParams::default()
            }
            CertificateKind::LambdaDelta(p) => p.clone(),
        };
        let report = check_lambda_delta(net, &self.allocation, &self.prices, &params);
        out.extend(report.violations);
        if !self.slacks.is_empty() && self.slacks != report.slacks {
            out.push("claimed slacks differ from recomputed slacks".to_string());
        }
        if let Some(b) = &self.bounds {
            let fresh = bound_report(net, &self.allocation, &params, b.efficient);
            if fresh != *b {
                out.push("claimed bound report differs from recomputed report".to_string());
            } else if !b.within_general() {
                out.push(format!("efficiency gap {} exceeds bound", net.resolution.format(b.gap())));
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    pub fn to_json(&self, net: &Network) -> String {
        let res = &net.resolution;
        let f = |m: Money| res.format(m);
        let (kind, delta_b, delta_s, lambda) = match &self.kind {
            CertificateKind::Exact => ("exact".to_string(), None, None, Vec::new()),
            CertificateKind::LambdaDelta(p) => (
                "lambda-delta".to_string(),
                Some(f(p.delta_b)),
                Some(f(p.delta_s)),
                p.lambda
                    .iter()
                    .map(|(&(a, g), &m)| LambdaDoc {
                        producer: net.agent_name(a).to_string(),
                        good: net.good_name(g).to_string(),
                        amount: f(m),
                    })
                    .collect(),
            ),
        };
        let doc = CertificateDoc {
            kind,
            delta_b,
            delta_s,
            lambda,
            allocation: allocation_docs(net, &self.allocation),
            prices: net.good_ids().map(|g| (net.good_name(g).to_string(), f(self.prices.get(g)))).collect(),
            slacks: net.agent_ids().zip(&self.slacks).map(|(a, &s)| (net.agent_name(a).to_string(), f(s))).collect(),
            bounds: self.bounds.map(|b| BoundsDoc {
                achieved: f(b.achieved),
                efficient: f(b.efficient),
                general_bound: f(b.general_bound),
                protocol_bound: f(b.protocol_bound),
            }),
        };
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
    }

    pub fn from_json(net: &Network, text: &str) -> Result<EquilibriumCertificate, CertificateError> {
        let doc: CertificateDoc = serde_json::from_str(text)?;
        let res = &net.resolution;
        let m = |s: &str| res.money(s).map_err(FormatError::from);
        let kind = match doc.kind.as_str() {
            "exact" => CertificateKind::Exact,
            "lambda-delta" => {
                let mut p = LambdaParams::new(
                    m(doc.delta_b.as_deref().unwrap_or("0"))?,
                    m(doc.delta_s.as_deref().unwrap_or("0"))?,
                );
                for l in &doc.lambda {
                    let a = net.agent_by_name(&l.producer).ok_or_else(|| CertificateError::Agent(l.producer.clone()))?;
                    let g = net.good_by_name(&l.good).ok_or_else(|| CertificateError::Good(l.good.clone()))?;
                    p.lambda.insert((a, g), m(&l.amount)?);
                }
                CertificateKind::LambdaDelta(p)
            }
            other => return Err(CertificateError::Kind(other.to_string())),
        };
        let allocation = allocation_from_docs(net, &doc.allocation)?;
        let mut prices = PriceSystem::zero(net);
        for g in net.good_ids() {
            let name = net.good_name(g);
            let s = doc.prices.get(name).ok_or_else(|| CertificateError::MissingPrice(name.to_string()))?;
            prices.set(g, m(s)?);
        }
        let mut slacks = Vec::new();
        if !doc.slacks.is_empty() {
            for a in net.agent_ids() {
                let s = doc.slacks.get(net.agent_name(a)).ok_or_else(|| CertificateError::Agent(net.agent_name(a).to_string()))?;
                slacks.push(m(s)?);
            }
        }
        let bounds = match &doc.bounds {
            None => None,
            Some(b) => Some(BoundReport {
                achieved: m(&b.achieved)?,
                efficient: m(&b.efficient)?,
                general_bound: m(&b.general_bound)?,
                protocol_bound: m(&b.protocol_bound)?,
            }),
        };
        Ok(EquilibriumCertificate { allocation, prices, kind, slacks, bounds })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn exact_round_trip_verifies() {
        let net = fixtures::greedy_bad(fixtures::GREEDY_BAD_VALUE);
        let cert = EquilibriumCertificate::new(
            &net,
            fixtures::greedy_bad_efficient(&net),
            fixtures::greedy_bad_equilibrium_prices(&net),
            CertificateKind::Exact,
            Some(net.resolution.money("8").unwrap()),
        );
        let text = cert.to_json(&net);
        let back = EquilibriumCertificate::from_json(&net, &text).unwrap();
        assert_eq!(back, cert);
        assert_eq!(back.verify(&net), Ok(()));
    }

    #[test]
    fn tampered_price_fails() {
        let net = fixtures::greedy_bad(fixtures::GREEDY_BAD_VALUE);
        let mut cert = EquilibriumCertificate::new(
            &net,
            fixtures::greedy_bad_efficient(&net),
            fixtures::greedy_bad_equilibrium_prices(&net),
            CertificateKind::Exact,
            None,
        );
        cert.prices.set(net.good_by_name("5").unwrap(), net.resolution.money("8").unwrap());
        assert!(cert.verify(&net).is_err());
    }
}
