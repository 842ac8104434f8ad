//! Exact rational feasibility for systems `sum a_i x_i <= b`, `x >= 0`.
//!
//! Two independent deciders: Fourier-Motzkin elimination, which also
//! explains infeasibility as a pair of clashing bounds, and a dense
//! phase-one simplex with Bland's rule, which scales further.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub type Q = BigRational;

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// `sum coeffs[v] * x_v <= rhs`, with a label for reporting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constraint {
    pub coeffs: BTreeMap<usize, Q>,
    pub rhs: Q,
    pub label: String,
}

impl Constraint {
    pub fn le(terms: &[(usize, i64)], rhs: i64, label: impl Into<String>) -> Constraint {
        let mut coeffs: BTreeMap<usize, Q> = BTreeMap::new();
        for &(v, a) in terms {
            *coeffs.entry(v).or_insert_with(Q::zero) += q(a);
        }
        coeffs.retain(|_, a| !a.is_zero());
        Constraint { coeffs, rhs: q(rhs), label: label.into() }
    }

    /// `sum terms >= rhs`.
    pub fn ge(terms: &[(usize, i64)], rhs: i64, label: impl Into<String>) -> Constraint {
        let neg: Vec<(usize, i64)> = terms.iter().map(|&(v, a)| (v, -a)).collect();
        Constraint::le(&neg, -rhs, label)
    }

    pub fn holds(&self, x: &[Q]) -> bool {
        let lhs: Q = self.coeffs.iter().map(|(&v, a)| a * &x[v]).sum();
        lhs <= self.rhs
    }
}

/// A bound on one variable derived by elimination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivedBound {
    pub var: usize,
    pub value: Q,
    /// Labels of the original constraints combined to obtain it.
    pub sources: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FmOutcome {
    Feasible,
    /// `x_var >= lower.value` and `x_var <= upper.value` with lower > upper.
    Clash { lower: DerivedBound, upper: DerivedBound },
    /// A combination reduced to `0 <= rhs` with `rhs < 0`.
    Contradiction { rhs: Q, sources: Vec<String> },
    /// Intermediate system grew past the row limit.
    TooLarge,
}

#[derive(Clone)]
struct Row {
    coeffs: BTreeMap<usize, Q>,
    rhs: Q,
    sources: Vec<usize>,
}

/// Eliminates every variable except `keep`, then compares the surviving
/// bounds on `keep`. Nonnegativity is added internally.
pub fn fourier_motzkin(n_vars: usize, system: &[Constraint], keep: usize, max_rows: usize) -> FmOutcome {
    let labels: Vec<String> = system
        .iter()
        .map(|c| c.label.clone())
        .chain((0..n_vars).map(|v| format!("x{v} >= 0")))
        .collect();
    let mut rows: Vec<Row> = system
        .iter()
        .enumerate()
        .map(|(i, c)| Row { coeffs: c.coeffs.clone(), rhs: c.rhs.clone(), sources: vec![i] })
        .collect();
    for v in 0..n_vars {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(v, q(-1));
        rows.push(Row { coeffs, rhs: Q::zero(), sources: vec![system.len() + v] });
    }
    let named = |sources: &[usize]| -> Vec<String> { sources.iter().map(|&i| labels[i].clone()).collect() };
    for v in (0..n_vars).filter(|&v| v != keep) {
        let (mut pos, mut neg, mut rest) = (Vec::new(), Vec::new(), Vec::new());
        for r in rows {
            match r.coeffs.get(&v).map(|a| a.is_positive()) {
                Some(true) => pos.push(r),
                Some(false) => neg.push(r),
                None => rest.push(r),
            }
        }
        for p in &pos {
            for n in &neg {
                let a = p.coeffs[&v].clone();
                let b = -n.coeffs[&v].clone();
                let mut coeffs: BTreeMap<usize, Q> = BTreeMap::new();
                for (&u, c) in &p.coeffs {
                    *coeffs.entry(u).or_insert_with(Q::zero) += c * &b;
                }
                for (&u, c) in &n.coeffs {
                    *coeffs.entry(u).or_insert_with(Q::zero) += c * &a;
                }
                coeffs.retain(|_, c| !c.is_zero());
                let rhs = &p.rhs * &b + &n.rhs * &a;
                let mut sources: Vec<usize> = p.sources.iter().chain(&n.sources).copied().collect();
                sources.sort_unstable();
                sources.dedup();
                rest.push(normalize(Row { coeffs, rhs, sources }));
            }
        }
        rows = dedup(rest);
        if let Some(r) = rows.iter().find(|r| r.coeffs.is_empty() && r.rhs.is_negative()) {
            return FmOutcome::Contradiction { rhs: r.rhs.clone(), sources: named(&r.sources) };
        }
        rows.retain(|r| !r.coeffs.is_empty());
        if rows.len() > max_rows {
            return FmOutcome::TooLarge;
        }
    }
    if let Some(r) = rows.iter().find(|r| r.coeffs.is_empty() && r.rhs.is_negative()) {
        return FmOutcome::Contradiction { rhs: r.rhs.clone(), sources: named(&r.sources) };
    }
    let mut lower: Option<(Q, &Row)> = None;
    let mut upper: Option<(Q, &Row)> = None;
    for r in &rows {
        let a = r.coeffs.get(&keep).cloned().unwrap_or_else(Q::zero);
        if a.is_positive() {
            let bound = &r.rhs / &a;
            if upper.as_ref().is_none_or(|(u, _)| bound < *u) {
                upper = Some((bound, r));
            }
        } else if a.is_negative() {
            let bound = &r.rhs / &a;
            if lower.as_ref().is_none_or(|(l, _)| bound > *l) {
                lower = Some((bound, r));
            }
        }
    }
    match (lower, upper) {
        (Some((l, lr)), Some((u, ur))) if l > u => FmOutcome::Clash {
            lower: DerivedBound { var: keep, value: l, sources: named(&lr.sources) },
            upper: DerivedBound { var: keep, value: u, sources: named(&ur.sources) },
        },
        _ => FmOutcome::Feasible,
    }
}

/// Scales a row so its largest absolute coefficient is one.
fn normalize(mut r: Row) -> Row {
    if let Some(m) = r.coeffs.values().map(|c| c.abs()).max() {
        for c in r.coeffs.values_mut() {
            *c /= &m;
        }
        r.rhs /= m;
    }
    r
}

/// Keeps the tightest row per coefficient vector.
fn dedup(rows: Vec<Row>) -> Vec<Row> {
    let mut best: BTreeMap<Vec<(usize, Q)>, Row> = BTreeMap::new();
    for r in rows {
        let key: Vec<(usize, Q)> = r.coeffs.iter().map(|(&k, v)| (k, v.clone())).collect();
        match best.get(&key) {
            Some(old) if old.rhs <= r.rhs => {}
            _ => {
                best.insert(key, r);
            }
        }
    }
    best.into_values().collect()
}

/// Phase-one simplex. Returns a feasible vertex, or `None` if the system
/// has no nonnegative solution.
pub fn simplex_feasible(n_vars: usize, system: &[Constraint]) -> Option<Vec<Q>> {
    let m = system.len();
    if m == 0 {
        return Some(vec![Q::zero(); n_vars]);
    }
    // Columns: x (n_vars), slack per row (m), artificial per row (m), rhs.
    let cols = n_vars + 2 * m;
    let mut t: Vec<Vec<Q>> = Vec::with_capacity(m + 1);
    let mut basis = Vec::with_capacity(m);
    for (i, c) in system.iter().enumerate() {
        let mut row = vec![Q::zero(); cols + 1];
        let sign = if c.rhs.is_negative() { q(-1) } else { q(1) };
        for (&v, a) in &c.coeffs {
            row[v] = a * &sign;
        }
        row[n_vars + i] = sign.clone();
        row[n_vars + m + i] = q(1);
        row[cols] = &c.rhs * &sign;
        t.push(row);
        basis.push(n_vars + m + i);
    }
    // Objective: minimize the artificial sum, kept as reduced costs.
    let mut obj = vec![Q::zero(); cols + 1];
    for row in &t {
        for j in 0..=cols {
            if j < n_vars + m || j == cols {
                obj[j] -= &row[j];
            }
        }
    }
    t.push(obj);
    loop {
        // Bland: lowest-index column with negative reduced cost.
        let Some(enter) = (0..cols).find(|&j| t[m][j].is_negative()) else { break };
        let mut leave: Option<(Q, usize)> = None;
        for i in 0..m {
            if t[i][enter].is_positive() {
                let ratio = &t[i][cols] / &t[i][enter];
                let better = match &leave {
                    None => true,
                    Some((r, li)) => ratio < *r || (ratio == *r && basis[i] < basis[*li]),
                };
                if better {
                    leave = Some((ratio, i));
                }
            }
        }
        let Some((_, r)) = leave else { break };
        pivot(&mut t, r, enter);
        basis[r] = enter;
    }
    if !t[m][cols].is_zero() {
        return None;
    }
    let mut x = vec![Q::zero(); n_vars];
    for (i, &b) in basis.iter().enumerate() {
        if b < n_vars {
            x[b] = t[i][cols].clone();
        }
    }
    debug_assert!(system.iter().all(|c| c.holds(&x)));
    Some(x)
}

fn pivot(t: &mut [Vec<Q>], r: usize, c: usize) {
    let p = t[r][c].clone();
    for v in t[r].iter_mut() {
        *v /= &p;
    }
    let pivot_row = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i == r || row[c].is_zero() {
            continue;
        }
        let f = row[c].clone();
        for (v, pv) in row.iter_mut().zip(&pivot_row) {
            if !pv.is_zero() {
                *v -= &f * pv;
            }
        }
    }
}

pub fn is_integer(x: &Q) -> bool {
    x.denom().is_one()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simple_clash() {
        // x0 >= 10 via x0 - x1 >= 4, x1 >= 6; x0 <= 9.
        let sys = vec![
            Constraint::ge(&[(0, 1), (1, -1)], 4, "a"),
            Constraint::ge(&[(1, 1)], 6, "b"),
            Constraint::le(&[(0, 1)], 9, "c"),
        ];
        match fourier_motzkin(2, &sys, 0, 1000) {
            FmOutcome::Clash { lower, upper } => {
                assert_eq!(lower.value, q(10));
                assert_eq!(upper.value, q(9));
                assert_eq!(lower.sources, ["a", "b"]);
                assert_eq!(upper.sources, ["c"]);
            }
            other => panic!("{other:?}"),
        }
        assert!(simplex_feasible(2, &sys).is_none());
    }

    #[test]
    fn feasible_vertex_satisfies_system() {
        let sys = vec![
            Constraint::ge(&[(0, 1), (1, 1)], 3, "a"),
            Constraint::le(&[(0, 1)], 2, "b"),
            Constraint::le(&[(1, 2), (0, -1)], 5, "c"),
        ];
        let x = simplex_feasible(2, &sys).unwrap();
        assert!(sys.iter().all(|c| c.holds(&x)));
        assert_eq!(fourier_motzkin(2, &sys, 1, 1000), FmOutcome::Feasible);
    }

    fn arb_system() -> impl Strategy<Value = (usize, Vec<Constraint>)> {
        (1usize..=4).prop_flat_map(|n| {
            let row = (prop::collection::vec(-3i64..=3, n), -6i64..=6);
            (Just(n), prop::collection::vec(row, 1..=6))
        })
        .prop_map(|(n, rows)| {
            let sys = rows
                .into_iter()
                .enumerate()
                .map(|(i, (a, b))| {
                    let terms: Vec<(usize, i64)> = a.into_iter().enumerate().collect();
                    Constraint::le(&terms, b, format!("r{i}"))
                })
                .collect();
            (n, sys)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]
        #[test]
        fn deciders_agree((n, sys) in arb_system()) {
            let sx = simplex_feasible(n, &sys);
            if let Some(x) = &sx {
                prop_assert!(sys.iter().all(|c| c.holds(x)));
                prop_assert!(x.iter().all(|v| !v.is_negative()));
            }
            let fm = fourier_motzkin(n, &sys, n - 1, 100_000);
            prop_assert_ne!(&fm, &FmOutcome::TooLarge);
            prop_assert_eq!(sx.is_some(), fm == FmOutcome::Feasible);
        }
    }
}
