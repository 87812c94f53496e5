//! Probabilistic circuits over the attributes of one vertex.
//!
//! A [`Circuit`] is a DAG of leaf, product and sum units stored in
//! topological order. Leaves are indicator-style distribution units
//! `P(A_a | Q = state)` whose parameters live in [`EmissionParams`]; the
//! weights of the root sum unit are supplied at evaluation time as a prior,
//! because the graph hierarchy computes them per node.
//!
//! Missing attributes are marginalized by evaluating their leaves to 1
//! (log 0). All evaluation is in log space.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{GspnError, Result};
use crate::graph::{AttributeKind, AttributeSchema, Graph};

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Unit {
    Leaf { attribute: usize, state: usize },
    Product { children: Vec<usize> },
    Sum { children: Vec<usize>, slot: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    units: Vec<Unit>,
    root: usize,
    num_attributes: usize,
    /// Fixed weights per sum slot; `None` marks the slot fed by the prior.
    slot_weights: Vec<Option<Vec<f64>>>,
    scopes: Vec<BTreeSet<usize>>,
}

fn check_simplex(what: &str, p: &[f64]) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(GspnError::InvalidParameter(format!(
            "{what} is not on the probability simplex (sum {total})"
        )));
    }
    Ok(())
}

impl Circuit {
    /// Validates DAG structure: children precede parents, the root is the
    /// only unit without a parent, and sum slots are well formed. Smoothness
    /// and decomposability are checked separately.
    pub fn new(
        units: Vec<Unit>,
        root: usize,
        num_attributes: usize,
        slot_weights: Vec<Option<Vec<f64>>>,
    ) -> Result<Self> {
        let bad = |m: String| Err(GspnError::InvalidCircuit(m));
        if root >= units.len() {
            return bad(format!("root {root} out of range"));
        }
        let mut has_parent = vec![false; units.len()];
        let mut scopes: Vec<BTreeSet<usize>> = Vec::with_capacity(units.len());
        for (id, unit) in units.iter().enumerate() {
            let scope = match unit {
                Unit::Leaf { attribute, .. } => {
                    if *attribute >= num_attributes {
                        return bad(format!("leaf {id} references attribute {attribute}"));
                    }
                    BTreeSet::from([*attribute])
                }
                Unit::Product { children } | Unit::Sum { children, .. } => {
                    if children.is_empty() {
                        return bad(format!("unit {id} has no children"));
                    }
                    let mut s = BTreeSet::new();
                    for &c in children {
                        if c >= id {
                            return bad(format!(
                                "unit {id} has child {c}; units must be in topological order"
                            ));
                        }
                        has_parent[c] = true;
                        s.extend(scopes[c].iter().copied());
                    }
                    s
                }
            };
            if let Unit::Sum { children, slot } = unit {
                match slot_weights.get(*slot) {
                    None => return bad(format!("sum {id} references missing slot {slot}")),
                    Some(Some(w)) => {
                        if w.len() != children.len() {
                            return bad(format!(
                                "slot {slot} has {} weights for {} children",
                                w.len(),
                                children.len()
                            ));
                        }
                        check_simplex(&format!("weights of slot {slot}"), w)?;
                    }
                    Some(None) => {}
                }
            }
            scopes.push(scope);
        }
        if slot_weights.iter().filter(|w| w.is_none()).count() > 1 {
            return bad("at most one sum slot can be fed by the prior".into());
        }
        for (id, p) in has_parent.iter().enumerate() {
            if id != root && !p {
                return bad(format!("unit {id} is a second root"));
            }
        }
        if has_parent[root] {
            return bad(format!("root {root} has a parent"));
        }
        Ok(Self {
            units,
            root,
            num_attributes,
            slot_weights,
            scopes,
        })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn scope(&self, unit: usize) -> &BTreeSet<usize> {
        &self.scopes[unit]
    }

    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    /// Number of children of the sum units fed by the prior.
    pub fn prior_len(&self) -> Option<usize> {
        let slot = self.slot_weights.iter().position(Option::is_none)?;
        self.units.iter().find_map(|u| match u {
            Unit::Sum { children, slot: s } if *s == slot => Some(children.len()),
            _ => None,
        })
    }

    /// Every sum unit's children share one scope.
    pub fn is_smooth(&self) -> bool {
        self.units.iter().all(|u| match u {
            Unit::Sum { children, .. } => children
                .iter()
                .all(|&c| self.scopes[c] == self.scopes[children[0]]),
            _ => true,
        })
    }

    /// Every product unit's children have pairwise disjoint scopes.
    pub fn is_decomposable(&self) -> bool {
        self.units.iter().all(|u| match u {
            Unit::Product { children } => {
                let mut seen = BTreeSet::new();
                children
                    .iter()
                    .all(|&c| self.scopes[c].iter().all(|a| seen.insert(*a)))
            }
            _ => true,
        })
    }

    fn require_valid(&self) -> Result<()> {
        if !self.is_smooth() {
            return Err(GspnError::InvalidCircuit("circuit is not smooth".into()));
        }
        if !self.is_decomposable() {
            return Err(GspnError::InvalidCircuit(
                "circuit is not decomposable".into(),
            ));
        }
        Ok(())
    }

    /// Log-likelihood of the observed entries of `row` (`None` = missing),
    /// recorded on `tape` so it can be differentiated w.r.t. `emission` and
    /// `prior` (a `1 x k` simplex for the prior-fed sum slot).
    pub fn log_likelihood_on(
        &self,
        tape: &mut Tape,
        emission: &EmissionVars,
        prior: Var,
        row: &[Option<f64>],
    ) -> Result<Var> {
        self.require_valid()?;
        if row.len() != self.num_attributes {
            return Err(GspnError::ShapeMismatch {
                op: "circuit row",
                lhs: (1, row.len()),
                rhs: (1, self.num_attributes),
            });
        }
        let log_prior = tape.log(prior);
        let mut vals: Vec<Var> = Vec::with_capacity(self.units.len());
        for (id, unit) in self.units.iter().enumerate() {
            // A valid circuit integrates to exactly 1 over an unobserved scope.
            if self.scopes[id].iter().all(|&a| row[a].is_none()) {
                vals.push(tape.constant(0.0));
                continue;
            }
            let v = match unit {
                Unit::Leaf { attribute, state } => match row[*attribute] {
                    None => tape.constant(0.0),
                    Some(x) => emission.leaf_log_prob(tape, *attribute, *state, x)?,
                },
                Unit::Product { children } => {
                    let mut acc = vals[children[0]];
                    for &c in &children[1..] {
                        acc = tape.add(acc, vals[c])?;
                    }
                    acc
                }
                Unit::Sum { children, slot } => {
                    let mut terms = Vec::with_capacity(children.len());
                    for (j, &c) in children.iter().enumerate() {
                        let lw = match &self.slot_weights[*slot] {
                            Some(w) => tape.constant(w[j].ln()),
                            None => tape.element(log_prior, 0, j),
                        };
                        terms.push(tape.add(lw, vals[c])?);
                    }
                    log_sum_exp_scalars(tape, &terms)?
                }
            };
            vals.push(v);
        }
        Ok(vals[self.root])
    }
}

/// `log sum exp` of scalar vars, shifted by their (constant) maximum.
fn log_sum_exp_scalars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let m = terms
        .iter()
        .map(|t| tape.value(*t).item())
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Ok(tape.constant(m));
    }
    let mut acc: Option<Var> = None;
    for &t in terms {
        let shifted = tape.shift(t, -m);
        let e = tape.exp(shifted);
        acc = Some(match acc {
            None => e,
            Some(a) => tape.add(a, e)?,
        });
    }
    let l = tape.log(acc.expect("sum unit has children"));
    Ok(tape.shift(l, m))
}

/// One root sum over `C` products, each a product of one leaf per attribute.
pub fn build_naive_bayes(schema: &AttributeSchema, num_states: usize) -> Result<Circuit> {
    if num_states == 0 {
        return Err(GspnError::InvalidParameter(
            "need at least one mixture state".into(),
        ));
    }
    let d = schema.len();
    let mut units = Vec::with_capacity(d * num_states + num_states + 1);
    for state in 0..num_states {
        for attribute in 0..d {
            units.push(Unit::Leaf { attribute, state });
        }
    }
    for state in 0..num_states {
        units.push(Unit::Product {
            children: (state * d..(state + 1) * d).collect(),
        });
    }
    let first_product = d * num_states;
    units.push(Unit::Sum {
        children: (first_product..first_product + num_states).collect(),
        slot: 0,
    });
    let root = units.len() - 1;
    let c = Circuit::new(units, root, d, vec![None])?;
    c.require_valid()?;
    Ok(c)
}

pub fn check_smooth(c: &Circuit) -> bool {
    c.is_smooth()
}

pub fn check_decomposable(c: &Circuit) -> bool {
    c.is_decomposable()
}

/// Per-attribute emission parameters of every mixture state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttributeEmission {
    /// `probs[state][category]`.
    Categorical { probs: Vec<Vec<f64>> },
    /// Mean and standard deviation per state.
    Gaussian { mu: Vec<f64>, sigma: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    pub num_states: usize,
    pub attributes: Vec<AttributeEmission>,
}

impl EmissionParams {
    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        if self.attributes.len() != schema.len() {
            return Err(GspnError::InvalidParameter(format!(
                "emission covers {} attributes, schema has {}",
                self.attributes.len(),
                schema.len()
            )));
        }
        let c = self.num_states;
        for (a, (em, kind)) in self.attributes.iter().zip(schema.kinds()).enumerate() {
            match (em, kind) {
                (
                    AttributeEmission::Categorical { probs },
                    AttributeKind::Categorical { arity },
                ) => {
                    if probs.len() != c || probs.iter().any(|p| p.len() != *arity) {
                        return Err(GspnError::InvalidParameter(format!(
                            "categorical emission of attribute {a} must be {c} x {arity}"
                        )));
                    }
                    for (i, p) in probs.iter().enumerate() {
                        check_simplex(&format!("attribute {a}, state {i}"), p)?;
                    }
                }
                (AttributeEmission::Gaussian { mu, sigma }, AttributeKind::Continuous) => {
                    if mu.len() != c || sigma.len() != c {
                        return Err(GspnError::InvalidParameter(format!(
                            "gaussian emission of attribute {a} must have {c} states"
                        )));
                    }
                    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
                        return Err(GspnError::InvalidParameter(format!(
                            "attribute {a} has non-positive sigma {s}"
                        )));
                    }
                }
                _ => {
                    return Err(GspnError::InvalidParameter(format!(
                        "emission family of attribute {a} does not match the schema"
                    )))
                }
            }
        }
        Ok(())
    }

    /// `log P(x | Q = state)` for one attribute.
    pub fn leaf_log_prob(&self, attribute: usize, state: usize, x: f64) -> f64 {
        match &self.attributes[attribute] {
            AttributeEmission::Categorical { probs } => probs[state][x as usize].ln(),
            AttributeEmission::Gaussian { mu, sigma } => {
                let z = (x - mu[state]) / sigma[state];
                -0.5 * (std::f64::consts::TAU).ln() - sigma[state].ln() - 0.5 * z * z
            }
        }
    }

    /// Places the parameters on `tape` as constant leaves.
    pub fn to_vars(&self, tape: &mut Tape) -> EmissionVars {
        let attributes = self
            .attributes
            .iter()
            .map(|em| match em {
                AttributeEmission::Categorical { probs } => AttributeVars::Categorical {
                    probs: tape.leaf(Tensor::from_rows(probs)),
                },
                AttributeEmission::Gaussian { mu, sigma } => AttributeVars::Gaussian {
                    mu: tape.leaf(Tensor::row_vector(mu.clone())),
                    sigma: tape.leaf(Tensor::row_vector(sigma.clone())),
                },
            })
            .collect();
        EmissionVars { attributes }
    }

    /// Reads constrained values back from `tape`.
    pub fn from_vars(tape: &Tape, vars: &EmissionVars) -> Self {
        let attributes: Vec<AttributeEmission> = vars
            .attributes
            .iter()
            .map(|v| match v {
                AttributeVars::Categorical { probs } => AttributeEmission::Categorical {
                    probs: tape.value(*probs).to_rows(),
                },
                AttributeVars::Gaussian { mu, sigma } => AttributeEmission::Gaussian {
                    mu: tape.value(*mu).data().to_vec(),
                    sigma: tape.value(*sigma).data().to_vec(),
                },
            })
            .collect();
        let num_states = vars.num_states(tape);
        Self {
            num_states,
            attributes,
        }
    }
}

/// Emission parameters placed on a tape. Categorical tables are `C x K`
/// probabilities; Gaussian means and scales are `1 x C`.
#[derive(Debug, Clone)]
pub enum AttributeVars {
    Categorical { probs: Var },
    Gaussian { mu: Var, sigma: Var },
}

#[derive(Debug, Clone)]
pub struct EmissionVars {
    pub attributes: Vec<AttributeVars>,
}

impl EmissionVars {
    pub fn num_states(&self, tape: &Tape) -> usize {
        match &self.attributes[0] {
            AttributeVars::Categorical { probs } => tape.shape(*probs).0,
            AttributeVars::Gaussian { mu, .. } => tape.shape(*mu).1,
        }
    }

    fn leaf_log_prob(
        &self,
        tape: &mut Tape,
        attribute: usize,
        state: usize,
        x: f64,
    ) -> Result<Var> {
        match &self.attributes[attribute] {
            AttributeVars::Categorical { probs } => {
                let p = tape.element(*probs, state, x as usize);
                Ok(tape.log(p))
            }
            AttributeVars::Gaussian { mu, sigma } => {
                let xv = tape.constant(x);
                let m = tape.element(*mu, 0, state);
                let s = tape.element(*sigma, 0, state);
                tape.gaussian_log_pdf(xv, m, s)
            }
        }
    }
}

/// Evidence of many vertices laid out per attribute for vectorized
/// evaluation of the Naive Bayes template.
#[derive(Debug, Clone)]
pub struct Evidence {
    num_rows: usize,
    columns: Vec<EvidenceColumn>,
}

#[derive(Debug, Clone)]
enum EvidenceColumn {
    /// Values (0 where missing) and the 0/1 observation indicator.
    Continuous {
        x: Tensor,
        observed: Tensor,
    },
    Categorical {
        index: Arc<Vec<Option<usize>>>,
    },
}

impl Evidence {
    /// Builds evidence from rows of observed values (`None` = missing).
    pub fn from_rows<'a, I>(schema: &AttributeSchema, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [Option<f64>]>,
    {
        let rows: Vec<&[Option<f64>]> = rows.into_iter().collect();
        let n = rows.len();
        let columns = schema
            .kinds()
            .iter()
            .enumerate()
            .map(|(a, kind)| match kind {
                AttributeKind::Continuous => EvidenceColumn::Continuous {
                    x: Tensor::column_vector(rows.iter().map(|r| r[a].unwrap_or(0.0)).collect()),
                    observed: Tensor::column_vector(
                        rows.iter()
                            .map(|r| if r[a].is_some() { 1.0 } else { 0.0 })
                            .collect(),
                    ),
                },
                AttributeKind::Categorical { .. } => EvidenceColumn::Categorical {
                    index: Arc::new(rows.iter().map(|r| r[a].map(|x| x as usize)).collect()),
                },
            })
            .collect();
        Self {
            num_rows: n,
            columns,
        }
    }

    /// Observed entries of every vertex of `graphs`, concatenated in order.
    pub fn from_graphs<'a>(
        schema: &AttributeSchema,
        graphs: impl IntoIterator<Item = &'a Graph>,
    ) -> Self {
        let rows: Vec<Vec<Option<f64>>> = graphs
            .into_iter()
            .flat_map(|g| {
                (0..g.num_vertices()).map(move |v| {
                    (0..g.num_attributes())
                        .map(|a| g.observed_value(v, a))
                        .collect()
                })
            })
            .collect();
        Self::from_rows(schema, rows.iter().map(Vec::as_slice))
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    /// `N x C` matrix of `log P(x_v^obs | Q = i)`, summing over observed
    /// attributes only (missing leaves evaluate to 1).
    pub fn log_likelihoods(&self, tape: &mut Tape, emission: &EmissionVars) -> Result<Var> {
        self.log_likelihoods_where(tape, emission, |_| true)
    }

    /// As [`Evidence::log_likelihoods`], restricted to attributes for which
    /// `include` holds.
    pub fn log_likelihoods_where(
        &self,
        tape: &mut Tape,
        emission: &EmissionVars,
        include: impl Fn(usize) -> bool,
    ) -> Result<Var> {
        let c = emission.num_states(tape);
        let mut total = tape.leaf(Tensor::zeros(self.num_rows, c));
        for (a, (col, vars)) in self.columns.iter().zip(&emission.attributes).enumerate() {
            if !include(a) {
                continue;
            }
            let term = match (col, vars) {
                (
                    EvidenceColumn::Continuous { x, observed },
                    AttributeVars::Gaussian { mu, sigma },
                ) => {
                    let xv = tape.leaf(x.clone());
                    let lp = tape.gaussian_log_pdf(xv, *mu, *sigma)?;
                    let ov = tape.leaf(observed.clone());
                    tape.mul(lp, ov)?
                }
                (EvidenceColumn::Categorical { index }, AttributeVars::Categorical { probs }) => {
                    let lp = tape.log(*probs);
                    tape.gather_cols(lp, index.clone())?
                }
                _ => {
                    return Err(GspnError::InvalidParameter(format!(
                        "emission family of attribute {a} does not match the evidence"
                    )))
                }
            };
            total = tape.add(total, term)?;
        }
        Ok(total)
    }

    /// First observed attribute of `row` that every state deems impossible.
    pub fn impossible_attribute(
        &self,
        tape: &Tape,
        emission: &EmissionVars,
        row: usize,
    ) -> Option<usize> {
        for (a, (col, vars)) in self.columns.iter().zip(&emission.attributes).enumerate() {
            if let (EvidenceColumn::Categorical { index }, AttributeVars::Categorical { probs }) =
                (col, vars)
            {
                if let Some(k) = index[row] {
                    let t = tape.value(*probs);
                    if (0..t.rows()).all(|i| t.get(i, k) <= 0.0) {
                        return Some(a);
                    }
                }
            }
        }
        None
    }
}

/// Root log-likelihood `log sum_i prior(i) prod_{a obs} P(x_a | Q = i)`.
pub fn log_likelihood(
    circuit: &Circuit,
    emission: &EmissionParams,
    prior: &[f64],
    row: &[Option<f64>],
) -> Result<f64> {
    check_simplex("prior", prior)?;
    let mut tape = Tape::new();
    let em = emission.to_vars(&mut tape);
    let p = tape.leaf(Tensor::row_vector(prior.to_vec()));
    let ll = circuit.log_likelihood_on(&mut tape, &em, p, row)?;
    Ok(tape.value(ll).item())
}

/// Posterior of the prior-fed sum unit given the observed entries of `row`.
///
/// Computed with one backward pass: for a valid circuit with root value
/// `S`, the posterior of child `i` is `prior(i) * dS/dprior(i) / S`,
/// i.e. `prior(i) * d log S / d prior(i)`.
pub fn sum_posteriors(
    circuit: &Circuit,
    emission: &EmissionParams,
    prior: &[f64],
    row: &[Option<f64>],
) -> Result<Vec<f64>> {
    check_simplex("prior", prior)?;
    if row.iter().all(Option::is_none) {
        return Ok(prior.to_vec());
    }
    let mut tape = Tape::new();
    let em = emission.to_vars(&mut tape);
    let p = tape.leaf(Tensor::row_vector(prior.to_vec()));
    let ll = circuit.log_likelihood_on(&mut tape, &em, p, row)?;
    if tape.value(ll).item() == f64::NEG_INFINITY {
        let attribute = (0..row.len())
            .find(|&a| {
                row[a].is_some_and(|x| {
                    (0..emission.num_states)
                        .all(|i| emission.leaf_log_prob(a, i, x) == f64::NEG_INFINITY)
                })
            })
            .unwrap_or(0);
        return Err(GspnError::ImpossibleEvidence {
            vertex: 0,
            attribute,
        });
    }
    let grads = tape.backward(ll)?;
    let g = grads.wrt(p);
    Ok(prior.iter().zip(g.data()).map(|(pi, gi)| pi * gi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_emission() -> (AttributeSchema, EmissionParams) {
        let schema = AttributeSchema::new(vec![AttributeKind::Categorical { arity: 2 }]).unwrap();
        let em = EmissionParams {
            num_states: 2,
            attributes: vec![AttributeEmission::Categorical {
                probs: vec![vec![0.2, 0.8], vec![0.8, 0.2]],
            }],
        };
        (schema, em)
    }

    #[test]
    fn naive_bayes_shape() {
        let schema = AttributeSchema::new(vec![AttributeKind::Continuous; 2]).unwrap();
        let c = build_naive_bayes(&schema, 2).unwrap();
        let count = |f: fn(&Unit) -> bool| c.units().iter().filter(|u| f(u)).count();
        assert_eq!(count(|u| matches!(u, Unit::Sum { .. })), 1);
        assert_eq!(count(|u| matches!(u, Unit::Product { .. })), 2);
        assert_eq!(count(|u| matches!(u, Unit::Leaf { .. })), 4);
        assert_eq!(c.scope(c.root()), &BTreeSet::from([0, 1]));
        assert!(check_smooth(&c) && check_decomposable(&c));
        assert_eq!(c.prior_len(), Some(2));
    }

    #[test]
    fn degenerate_template_is_leaf_density() {
        let schema = AttributeSchema::new(vec![AttributeKind::Continuous]).unwrap();
        let c = build_naive_bayes(&schema, 1).unwrap();
        let em = EmissionParams {
            num_states: 1,
            attributes: vec![AttributeEmission::Gaussian {
                mu: vec![0.0],
                sigma: vec![1.0],
            }],
        };
        let ll = log_likelihood(&c, &em, &[1.0], &[Some(0.0)]).unwrap();
        assert!((ll + 0.918939).abs() < 1e-6);
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn categorical_mixture_likelihood_and_posterior() {
        let (schema, em) = binary_emission();
        let c = build_naive_bayes(&schema, 2).unwrap();
        let ll = log_likelihood(&c, &em, &[0.5, 0.5], &[Some(1.0)]).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);
        let h = sum_posteriors(&c, &em, &[0.5, 0.5], &[Some(1.0)]).unwrap();
        assert!((h[0] - 0.8).abs() < 1e-12 && (h[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_row() {
        let (schema, em) = binary_emission();
        let c = build_naive_bayes(&schema, 2).unwrap();
        assert_eq!(log_likelihood(&c, &em, &[0.3, 0.7], &[None]).unwrap(), 0.0);
        let h = sum_posteriors(&c, &em, &[0.3, 0.7], &[None]).unwrap();
        assert!((h[0] - 0.3).abs() < 1e-15 && (h[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn identical_emissions_return_prior() {
        let schema = AttributeSchema::new(vec![AttributeKind::Continuous]).unwrap();
        let c = build_naive_bayes(&schema, 3).unwrap();
        let em = EmissionParams {
            num_states: 3,
            attributes: vec![AttributeEmission::Gaussian {
                mu: vec![1.0; 3],
                sigma: vec![2.0; 3],
            }],
        };
        let prior = [0.2, 0.5, 0.3];
        let h = sum_posteriors(&c, &em, &prior, &[Some(-4.0)]).unwrap();
        for (a, b) in h.iter().zip(prior) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn impossible_evidence_is_an_error() {
        let schema = AttributeSchema::new(vec![AttributeKind::Categorical { arity: 3 }]).unwrap();
        let c = build_naive_bayes(&schema, 2).unwrap();
        let em = EmissionParams {
            num_states: 2,
            attributes: vec![AttributeEmission::Categorical {
                probs: vec![vec![0.5, 0.5, 0.0], vec![0.1, 0.9, 0.0]],
            }],
        };
        match sum_posteriors(&c, &em, &[0.5, 0.5], &[Some(2.0)]) {
            Err(GspnError::ImpossibleEvidence { attribute: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_simplex_prior_rejected() {
        let (schema, em) = binary_emission();
        let c = build_naive_bayes(&schema, 2).unwrap();
        assert!(log_likelihood(&c, &em, &[0.5, 0.6], &[Some(0.0)]).is_err());
    }

    #[test]
    fn counterexamples_fail_their_check() {
        // product over two leaves of the same attribute
        let shared = Circuit::new(
            vec![
                Unit::Leaf {
                    attribute: 0,
                    state: 0,
                },
                Unit::Leaf {
                    attribute: 0,
                    state: 1,
                },
                Unit::Product {
                    children: vec![0, 1],
                },
            ],
            2,
            1,
            vec![],
        )
        .unwrap();
        assert!(check_smooth(&shared));
        assert!(!check_decomposable(&shared));

        // sum over leaves of different attributes
        let mixed = Circuit::new(
            vec![
                Unit::Leaf {
                    attribute: 0,
                    state: 0,
                },
                Unit::Leaf {
                    attribute: 1,
                    state: 0,
                },
                Unit::Sum {
                    children: vec![0, 1],
                    slot: 0,
                },
            ],
            2,
            2,
            vec![None],
        )
        .unwrap();
        assert!(!check_smooth(&mixed));
        assert!(check_decomposable(&mixed));

        let leaf_only = Circuit::new(
            vec![Unit::Leaf {
                attribute: 0,
                state: 0,
            }],
            0,
            1,
            vec![],
        )
        .unwrap();
        assert!(check_smooth(&leaf_only) && check_decomposable(&leaf_only));
    }

    #[test]
    fn structural_errors() {
        assert!(Circuit::new(
            vec![
                Unit::Product { children: vec![1] },
                Unit::Leaf {
                    attribute: 0,
                    state: 0
                }
            ],
            0,
            1,
            vec![]
        )
        .is_err());
        assert!(Circuit::new(
            vec![
                Unit::Leaf {
                    attribute: 0,
                    state: 0
                },
                Unit::Leaf {
                    attribute: 0,
                    state: 1
                }
            ],
            1,
            1,
            vec![]
        )
        .is_err());
    }

    #[test]
    fn general_circuit_with_fixed_inner_weights() {
        // root sum (prior) over two products; the second product contains an
        // inner sum with fixed weights over two leaves of attribute 1.
        let units = vec![
            Unit::Leaf {
                attribute: 0,
                state: 0,
            },
            Unit::Leaf {
                attribute: 1,
                state: 0,
            },
            Unit::Leaf {
                attribute: 0,
                state: 1,
            },
            Unit::Leaf {
                attribute: 1,
                state: 1,
            },
            Unit::Sum {
                children: vec![1, 3],
                slot: 1,
            },
            Unit::Product {
                children: vec![0, 1],
            },
            Unit::Product {
                children: vec![2, 4],
            },
            Unit::Sum {
                children: vec![5, 6],
                slot: 0,
            },
        ];
        let c = Circuit::new(units, 7, 2, vec![None, Some(vec![0.25, 0.75])]).unwrap();
        assert!(c.is_smooth() && c.is_decomposable());
        let em = EmissionParams {
            num_states: 2,
            attributes: vec![
                AttributeEmission::Categorical {
                    probs: vec![vec![0.9, 0.1], vec![0.3, 0.7]],
                },
                AttributeEmission::Categorical {
                    probs: vec![vec![0.6, 0.4], vec![0.2, 0.8]],
                },
            ],
        };
        let prior = [0.4, 0.6];
        let row = [Some(1.0), Some(0.0)];
        let p0 = 0.1 * 0.6;
        let p1 = 0.7 * (0.25 * 0.6 + 0.75 * 0.2);
        let expect = prior[0] * p0 + prior[1] * p1;
        let ll = log_likelihood(&c, &em, &prior, &row).unwrap();
        assert!((ll - expect.ln()).abs() < 1e-12);
        let h = sum_posteriors(&c, &em, &prior, &row).unwrap();
        assert!((h[0] - prior[0] * p0 / expect).abs() < 1e-12);
        // marginalizing attribute 0 sums over its states
        let s: f64 = (0..2)
            .map(|k| {
                log_likelihood(&c, &em, &prior, &[Some(k as f64), Some(0.0)])
                    .unwrap()
                    .exp()
            })
            .sum();
        let m = log_likelihood(&c, &em, &prior, &[None, Some(0.0)])
            .unwrap()
            .exp();
        assert!((s - m).abs() < 1e-12);
    }
}
