use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::GspnConfig;
use crate::autodiff::{BoundParams, Constraint, ParamStore, Tape, Tensor, Var};
use crate::error::{GspnError, Result};
use crate::graph::{AttributeKind, AttributeSchema, Graph};
use crate::kmeans::kmeans;
use crate::sampling::{standard_normal, SeededRng};
use crate::spn::{AttributeEmission, AttributeVars, EmissionParams, EmissionVars};

/// Lower bound added to every Gaussian scale.
pub const SIGMA_FLOOR: f64 = 1e-4;
/// Largest Gaussian variance allowed at initialization.
pub const MAX_INIT_VARIANCE: f64 = 10.0;

const SIMPLEX_TOL: f64 = 1e-9;

/// Constrained parameters of a Naive Bayes GSPN with `L` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GspnParams {
    /// `pi^0`, shared by all leaf nodes.
    pub leaf_prior: Vec<f64>,
    /// `omega^l` for `l = 0..=L`.
    pub emissions: Vec<EmissionParams>,
    /// `theta^l` for `l = 1..=L` (stored at index `l - 1`), row-stochastic
    /// `C x C`: row `k` is the distribution over parent states contributed
    /// by a child in state `k`.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

/// Model parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub leaf_prior: Var,
    pub emissions: Vec<EmissionVars>,
    pub transitions: Vec<Var>,
}

fn emission_key(level: usize, attribute: usize, field: &str) -> String {
    format!("emission.{level}.{attribute}.{field}")
}

fn transition_key(level: usize) -> String {
    format!("transition.{level}")
}

const LEAF_PRIOR: &str = "leaf_prior";

fn check_simplex(what: &str, p: &[f64]) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(GspnError::InvalidParameter(format!(
            "{what} is not on the simplex (sum {total})"
        )));
    }
    Ok(())
}

impl GspnParams {
    pub fn num_states(&self) -> usize {
        self.leaf_prior.len()
    }

    pub fn layers(&self) -> usize {
        self.transitions.len()
    }

    pub fn validate(&self, schema: &AttributeSchema, cfg: &GspnConfig) -> Result<()> {
        let c = cfg.states;
        if self.leaf_prior.len() != c
            || self.emissions.len() != cfg.layers + 1
            || self.transitions.len() != cfg.layers
        {
            return Err(GspnError::InvalidParameter(format!(
                "parameters do not match a model with {} layers and {c} states",
                cfg.layers
            )));
        }
        check_simplex("leaf prior", &self.leaf_prior)?;
        for (l, em) in self.emissions.iter().enumerate() {
            if em.num_states != c {
                return Err(GspnError::InvalidParameter(format!(
                    "emission {l} has {} states, expected {c}",
                    em.num_states
                )));
            }
            em.validate(schema)?;
        }
        for (l, t) in self.transitions.iter().enumerate() {
            if t.len() != c {
                return Err(GspnError::InvalidParameter(format!(
                    "transition {} must be {c} x {c}",
                    l + 1
                )));
            }
            for (k, row) in t.iter().enumerate() {
                if row.len() != c {
                    return Err(GspnError::InvalidParameter(format!(
                        "transition {} must be {c} x {c}",
                        l + 1
                    )));
                }
                check_simplex(&format!("transition {} row {k}", l + 1), row)?;
            }
        }
        Ok(())
    }

    /// Places the parameters on `tape` as constants.
    pub fn to_vars(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            leaf_prior: tape.leaf(Tensor::row_vector(self.leaf_prior.clone())),
            emissions: self.emissions.iter().map(|e| e.to_vars(tape)).collect(),
            transitions: self
                .transitions
                .iter()
                .map(|t| tape.leaf(Tensor::from_rows(t)))
                .collect(),
        }
    }

    /// Unconstrained storage for gradient-based training.
    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        store.insert_constrained(
            LEAF_PRIOR,
            &Tensor::row_vector(self.leaf_prior.clone()),
            Constraint::SoftmaxRows,
        )?;
        for (l, t) in self.transitions.iter().enumerate() {
            store.insert_constrained(
                transition_key(l + 1),
                &Tensor::from_rows(t),
                Constraint::SoftmaxRows,
            )?;
        }
        for (l, em) in self.emissions.iter().enumerate() {
            for (a, ae) in em.attributes.iter().enumerate() {
                match ae {
                    AttributeEmission::Categorical { probs } => store.insert_constrained(
                        emission_key(l, a, "probs"),
                        &Tensor::from_rows(probs),
                        Constraint::SoftmaxRows,
                    )?,
                    AttributeEmission::Gaussian { mu, sigma } => {
                        store.insert(
                            emission_key(l, a, "mu"),
                            Tensor::row_vector(mu.clone()),
                            Constraint::None,
                        );
                        store.insert_constrained(
                            emission_key(l, a, "sigma"),
                            &Tensor::row_vector(sigma.clone()),
                            Constraint::Positive { floor: SIGMA_FLOOR },
                        )?;
                    }
                }
            }
        }
        Ok(store)
    }

    /// Reads constrained values out of a store laid out by [`Self::to_store`].
    pub fn from_store(store: &ParamStore, schema: &AttributeSchema, layers: usize) -> Result<Self> {
        let get = |k: &str| {
            store
                .constrained(k)
                .ok_or_else(|| GspnError::InvalidParameter(format!("missing parameter {k}")))
        };
        let leaf_prior = get(LEAF_PRIOR)?.into_data();
        let num_states = leaf_prior.len();
        let transitions = (1..=layers)
            .map(|l| get(&transition_key(l)).map(|t| t.to_rows()))
            .collect::<Result<_>>()?;
        let emissions = (0..=layers)
            .map(|l| {
                let attributes = schema
                    .kinds()
                    .iter()
                    .enumerate()
                    .map(|(a, kind)| {
                        Ok(match kind {
                            AttributeKind::Categorical { .. } => AttributeEmission::Categorical {
                                probs: get(&emission_key(l, a, "probs"))?.to_rows(),
                            },
                            AttributeKind::Continuous => AttributeEmission::Gaussian {
                                mu: get(&emission_key(l, a, "mu"))?.into_data(),
                                sigma: get(&emission_key(l, a, "sigma"))?.into_data(),
                            },
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(EmissionParams {
                    num_states,
                    attributes,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            leaf_prior,
            emissions,
            transitions,
        })
    }

    /// Emission effectively used at height `L`.
    pub fn top_emission(&self, cfg: &GspnConfig) -> Result<EmissionParams> {
        if cfg.shortcut {
            shortcut_emission(&self.emissions[1..cfg.layers])
        } else {
            Ok(self.emissions[cfg.layers].clone())
        }
    }

    /// Initial parameters: Gaussian means from k-means (`k = C`) on the
    /// observed values of `first_batch`, scales from the per-cluster spread
    /// (variance capped at [`MAX_INIT_VARIANCE`]), categorical tables from
    /// perturbed empirical frequencies, small random logits elsewhere.
    pub fn initialize(
        schema: &AttributeSchema,
        cfg: &GspnConfig,
        first_batch: &[&Graph],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.states;
        let rows: Vec<Vec<Option<f64>>> = first_batch
            .iter()
            .flat_map(|g| {
                (0..g.num_vertices()).map(move |v| {
                    (0..g.num_attributes())
                        .map(|a| g.observed_value(v, a))
                        .collect()
                })
            })
            .collect();
        let emission = initial_emission(schema, c, &rows, rng);
        let noisy_simplex = |n: usize, rng: &mut SeededRng| -> Vec<f64> {
            let logits: Vec<f64> = (0..n).map(|_| 0.1 * standard_normal(rng)).collect();
            softmax(&logits)
        };
        let leaf_prior = noisy_simplex(c, rng);
        let transitions = (0..cfg.layers)
            .map(|_| (0..c).map(|_| noisy_simplex(c, rng)).collect())
            .collect();
        Ok(Self {
            leaf_prior,
            emissions: vec![emission; cfg.layers + 1],
            transitions,
        })
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Emission initialization shared with the mixture baseline.
pub(crate) fn initial_emission(
    schema: &AttributeSchema,
    c: usize,
    rows: &[Vec<Option<f64>>],
    rng: &mut SeededRng,
) -> EmissionParams {
    let cont = schema.continuous();
    let cont_rows: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|r| cont.iter().map(|&a| r[a]).collect())
        .collect();
    let km = (!cont.is_empty()).then(|| kmeans(&cont_rows, c, 100, rng));

    let attributes = schema
        .kinds()
        .iter()
        .enumerate()
        .map(|(a, kind)| match kind {
            AttributeKind::Continuous => {
                let j = cont.iter().position(|&x| x == a).unwrap();
                let km = km.as_ref().unwrap();
                let observed: Vec<f64> = rows.iter().filter_map(|r| r[a]).collect();
                let global_var = variance(&observed).unwrap_or(1.0);
                let mut mu = Vec::with_capacity(c);
                let mut sigma = Vec::with_capacity(c);
                for i in 0..c {
                    mu.push(km.centers[i][j]);
                    let members: Vec<f64> = rows
                        .iter()
                        .zip(&km.assignment)
                        .filter(|(_, asg)| **asg == Some(i))
                        .filter_map(|(r, _)| r[a])
                        .collect();
                    let var = if members.len() >= 2 {
                        variance_around(&members, km.centers[i][j])
                    } else {
                        global_var
                    };
                    let var = if var > 0.0 { var } else { global_var.max(1e-2) };
                    sigma.push(var.min(MAX_INIT_VARIANCE).sqrt().max(10.0 * SIGMA_FLOOR));
                }
                AttributeEmission::Gaussian { mu, sigma }
            }
            AttributeKind::Categorical { arity } => {
                let mut freq = vec![1.0; *arity];
                for r in rows {
                    if let Some(x) = r[a] {
                        freq[x as usize] += 1.0;
                    }
                }
                let total: f64 = freq.iter().sum();
                let probs = (0..c)
                    .map(|_| {
                        let logits: Vec<f64> = freq
                            .iter()
                            .map(|f| (f / total).ln() + 0.1 * standard_normal(rng))
                            .collect();
                        softmax(&logits)
                    })
                    .collect();
                AttributeEmission::Categorical { probs }
            }
        })
        .collect();
    EmissionParams {
        num_states: c,
        attributes,
    }
}

fn variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    Some(variance_around(xs, m))
}

fn variance_around(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

impl ModelVars {
    /// Constrained views of a store laid out by [`GspnParams::to_store`].
    pub fn from_bound(bound: &BoundParams, schema: &AttributeSchema, layers: usize) -> Self {
        let emissions = (0..=layers)
            .map(|l| EmissionVars {
                attributes: schema
                    .kinds()
                    .iter()
                    .enumerate()
                    .map(|(a, kind)| match kind {
                        AttributeKind::Categorical { .. } => AttributeVars::Categorical {
                            probs: bound.get(&emission_key(l, a, "probs")),
                        },
                        AttributeKind::Continuous => AttributeVars::Gaussian {
                            mu: bound.get(&emission_key(l, a, "mu")),
                            sigma: bound.get(&emission_key(l, a, "sigma")),
                        },
                    })
                    .collect(),
            })
            .collect();
        Self {
            leaf_prior: bound.get(LEAF_PRIOR),
            emissions,
            transitions: (1..=layers)
                .map(|l| bound.get(&transition_key(l)))
                .collect(),
        }
    }
}

/// Convex combination of emissions: Gaussian means are averaged and
/// variances combined as `sum(sigma^2) / K^2`; categorical tables are
/// averaged. `K` is the number of emissions combined.
pub fn shortcut_emission(emissions: &[EmissionParams]) -> Result<EmissionParams> {
    let Some(first) = emissions.first() else {
        return Err(GspnError::InvalidParameter(
            "shortcut emissions need at least 2 layers".into(),
        ));
    };
    let k = emissions.len() as f64;
    let attributes = (0..first.attributes.len())
        .map(|a| match &first.attributes[a] {
            AttributeEmission::Gaussian { mu, .. } => {
                let c = mu.len();
                let mut m = vec![0.0; c];
                let mut var = vec![0.0; c];
                for em in emissions {
                    let AttributeEmission::Gaussian { mu, sigma } = &em.attributes[a] else {
                        unreachable!("emission families agree across layers")
                    };
                    for i in 0..c {
                        m[i] += mu[i];
                        var[i] += sigma[i] * sigma[i];
                    }
                }
                AttributeEmission::Gaussian {
                    mu: m.into_iter().map(|x| x / k).collect(),
                    sigma: var.into_iter().map(|v| v.sqrt() / k).collect(),
                }
            }
            AttributeEmission::Categorical { probs } => {
                let mut acc = vec![vec![0.0; probs[0].len()]; probs.len()];
                for em in emissions {
                    let AttributeEmission::Categorical { probs } = &em.attributes[a] else {
                        unreachable!("emission families agree across layers")
                    };
                    for (row, p) in acc.iter_mut().zip(probs) {
                        for (x, y) in row.iter_mut().zip(p) {
                            *x += y;
                        }
                    }
                }
                AttributeEmission::Categorical {
                    probs: acc
                        .into_iter()
                        .map(|r| r.into_iter().map(|x| x / k).collect())
                        .collect(),
                }
            }
        })
        .collect();
    Ok(EmissionParams {
        num_states: first.num_states,
        attributes,
    })
}

/// [`shortcut_emission`] recorded on a tape.
pub fn shortcut_vars(tape: &mut Tape, emissions: &[EmissionVars]) -> Result<EmissionVars> {
    if emissions.is_empty() {
        return Err(GspnError::InvalidParameter(
            "shortcut emissions need at least 2 layers".into(),
        ));
    }
    let k = emissions.len() as f64;
    let mut attributes = Vec::with_capacity(emissions[0].attributes.len());
    for a in 0..emissions[0].attributes.len() {
        let combined = match &emissions[0].attributes[a] {
            AttributeVars::Gaussian { .. } => {
                let mut mu_sum: Option<Var> = None;
                let mut var_sum: Option<Var> = None;
                for em in emissions {
                    let AttributeVars::Gaussian { mu, sigma } = &em.attributes[a] else {
                        unreachable!("emission families agree across layers")
                    };
                    let sq = tape.mul(*sigma, *sigma)?;
                    mu_sum = Some(match mu_sum {
                        None => *mu,
                        Some(s) => tape.add(s, *mu)?,
                    });
                    var_sum = Some(match var_sum {
                        None => sq,
                        Some(s) => tape.add(s, sq)?,
                    });
                }
                let mu = tape.scale(mu_sum.unwrap(), 1.0 / k);
                let root = tape.sqrt(var_sum.unwrap());
                let sigma = tape.scale(root, 1.0 / k);
                AttributeVars::Gaussian { mu, sigma }
            }
            AttributeVars::Categorical { .. } => {
                let mut acc: Option<Var> = None;
                for em in emissions {
                    let AttributeVars::Categorical { probs } = &em.attributes[a] else {
                        unreachable!("emission families agree across layers")
                    };
                    acc = Some(match acc {
                        None => *probs,
                        Some(s) => tape.add(s, *probs)?,
                    });
                }
                AttributeVars::Categorical {
                    probs: tape.scale(acc.unwrap(), 1.0 / k),
                }
            }
        };
        attributes.push(combined);
    }
    Ok(EmissionVars { attributes })
}

/// Random valid parameters, for tests and property checks.
pub fn random_params(
    schema: &AttributeSchema,
    cfg: &GspnConfig,
    rng: &mut SeededRng,
) -> GspnParams {
    let c = cfg.states;
    let simplex = |n: usize, rng: &mut SeededRng| -> Vec<f64> {
        let logits: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
        softmax(&logits)
    };
    let emissions = (0..=cfg.layers)
        .map(|_| EmissionParams {
            num_states: c,
            attributes: schema
                .kinds()
                .iter()
                .map(|kind| match kind {
                    AttributeKind::Categorical { arity } => AttributeEmission::Categorical {
                        probs: (0..c).map(|_| simplex(*arity, rng)).collect(),
                    },
                    AttributeKind::Continuous => AttributeEmission::Gaussian {
                        mu: (0..c).map(|_| standard_normal(rng)).collect(),
                        sigma: (0..c).map(|_| 0.5 + rng.gen::<f64>()).collect(),
                    },
                })
                .collect(),
        })
        .collect();
    GspnParams {
        leaf_prior: simplex(c, rng),
        emissions,
        transitions: (0..cfg.layers)
            .map(|_| (0..c).map(|_| simplex(c, rng)).collect())
            .collect(),
    }
}
