//! Structure-free density baselines over vertex rows: a single diagonal
//! Gaussian and a diagonal Gaussian mixture fitted by EM with missing data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::log_sum_exp;
use crate::error::{GspnError, Result};
use crate::graph::{AttributeKind, AttributeSchema, Dataset, Graph};
use crate::model::{initial_emission, GspnConfig, GspnParams, SIGMA_FLOOR};
use crate::queries::{missing_nll_from, pool_nll, DatasetNll, MissingNll};
use crate::sampling::seeded;
use crate::spn::{AttributeEmission, EmissionParams};

const ROW_CHUNK: usize = 1024;

/// Mixture weights and Naive Bayes emissions. A single Gaussian is the
/// one-component case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub emission: EmissionParams,
}

impl MixtureParams {
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    /// Log joint `log w_i + sum_{a obs} log P(x_a | i)` per component.
    fn log_joint(&self, row: &[Option<f64>]) -> Vec<f64> {
        (0..self.weights.len())
            .map(|i| {
                self.weights[i].ln()
                    + row
                        .iter()
                        .enumerate()
                        .filter_map(|(a, x)| x.map(|x| self.emission.leaf_log_prob(a, i, x)))
                        .sum::<f64>()
            })
            .collect()
    }

    /// Marginal log-likelihood of the observed entries of `row`.
    pub fn row_log_likelihood(&self, row: &[Option<f64>]) -> f64 {
        if row.iter().all(Option::is_none) {
            return 0.0;
        }
        log_sum_exp(&self.log_joint(row))
    }

    /// Component responsibilities given the observed entries of `row`.
    pub fn responsibilities(&self, row: &[Option<f64>]) -> Vec<f64> {
        if row.iter().all(Option::is_none) {
            return self.weights.clone();
        }
        let lj = self.log_joint(row);
        let z = log_sum_exp(&lj);
        lj.into_iter().map(|x| (x - z).exp()).collect()
    }

    /// Parameters of a GSPN with `layers` layers that evaluates every
    /// vertex exactly like this mixture. Every transition row equals the
    /// mixture weights, so each prior is the weights whatever the
    /// neighborhood, and every height shares the emission.
    pub fn to_gspn(&self, layers: usize) -> (GspnConfig, GspnParams) {
        let c = self.weights.len();
        let cfg = GspnConfig {
            layers,
            states: c,
            ..Default::default()
        };
        let params = GspnParams {
            leaf_prior: self.weights.clone(),
            emissions: vec![self.emission.clone(); layers + 1],
            transitions: vec![vec![self.weights.clone(); c]; layers],
        };
        (cfg, params)
    }
}

/// Observed rows of every vertex of every graph.
fn observed_rows(graphs: &[Graph]) -> Vec<Vec<Option<f64>>> {
    graphs
        .iter()
        .flat_map(|g| {
            (0..g.num_vertices()).map(move |v| {
                (0..g.num_attributes())
                    .map(|a| g.observed_value(v, a))
                    .collect()
            })
        })
        .collect()
}

/// Maximum-likelihood diagonal Gaussian (and categorical frequencies) over
/// the observed entries. Scales below the floor are raised to it with a
/// warning.
pub fn fit_gaussian(ds: &Dataset) -> Result<MixtureParams> {
    let rows = observed_rows(ds.graphs());
    let schema = ds.schema();
    let attributes = schema
        .kinds()
        .iter()
        .enumerate()
        .map(|(a, kind)| {
            let xs: Vec<f64> = rows.iter().filter_map(|r| r[a]).collect();
            if xs.len() < 2 {
                return Err(GspnError::Empty(format!(
                    "attribute {a} has {} observed values, need at least 2",
                    xs.len()
                )));
            }
            let n = xs.len() as f64;
            Ok(match kind {
                AttributeKind::Continuous => {
                    let mu = xs.iter().sum::<f64>() / n;
                    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
                    AttributeEmission::Gaussian {
                        mu: vec![mu],
                        sigma: vec![floored_sigma(var, a)],
                    }
                }
                AttributeKind::Categorical { arity } => {
                    let mut p = vec![0.0; *arity];
                    for x in &xs {
                        p[*x as usize] += 1.0 / n;
                    }
                    AttributeEmission::Categorical { probs: vec![p] }
                }
            })
        })
        .collect::<Result<_>>()?;
    Ok(MixtureParams {
        weights: vec![1.0],
        emission: EmissionParams {
            num_states: 1,
            attributes,
        },
    })
}

fn floored_sigma(var: f64, attribute: usize) -> f64 {
    let s = var.sqrt();
    if s < SIGMA_FLOOR {
        log::warn!(
            "attribute {attribute} is degenerate (sigma {s}); using the floor {SIGMA_FLOOR}"
        );
        SIGMA_FLOOR
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub params: MixtureParams,
    /// Total observed-data log-likelihood before each M-step, followed by
    /// the value at the returned parameters.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

/// Expected sufficient statistics of one chunk of rows.
struct Stats {
    ll: f64,
    /// `sum_n r_ni`.
    weight: Vec<f64>,
    /// Per attribute and state: `sum_n r_ni E[x]`, `sum_n r_ni E[x^2]`
    /// (continuous) or expected counts per category (categorical).
    first: Vec<Vec<Vec<f64>>>,
    second: Vec<Vec<f64>>,
}

impl Stats {
    fn zeros(params: &MixtureParams) -> Self {
        let c = params.num_components();
        let first = params
            .emission
            .attributes
            .iter()
            .map(|em| match em {
                AttributeEmission::Gaussian { .. } => vec![vec![0.0; 1]; c],
                AttributeEmission::Categorical { probs } => vec![vec![0.0; probs[0].len()]; c],
            })
            .collect();
        Self {
            ll: 0.0,
            weight: vec![0.0; c],
            first,
            second: vec![vec![0.0; c]; params.emission.attributes.len()],
        }
    }

    fn merge(mut self, other: Stats) -> Self {
        self.ll += other.ll;
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (fa, fb) in self.first.iter_mut().zip(&other.first) {
            for (ra, rb) in fa.iter_mut().zip(fb) {
                for (a, b) in ra.iter_mut().zip(rb) {
                    *a += b;
                }
            }
        }
        for (sa, sb) in self.second.iter_mut().zip(&other.second) {
            for (a, b) in sa.iter_mut().zip(sb) {
                *a += b;
            }
        }
        self
    }
}

fn e_step(params: &MixtureParams, rows: &[Vec<Option<f64>>]) -> Stats {
    let mut s = Stats::zeros(params);
    for row in rows {
        s.ll += params.row_log_likelihood(row);
        let r = params.responsibilities(row);
        for (i, ri) in r.iter().enumerate() {
            s.weight[i] += ri;
        }
        for (a, em) in params.emission.attributes.iter().enumerate() {
            match em {
                AttributeEmission::Gaussian { mu, sigma } => {
                    for i in 0..r.len() {
                        // E[x] and E[x^2] under the current component when missing
                        let (ex, ex2) = match row[a] {
                            Some(x) => (x, x * x),
                            None => (mu[i], sigma[i] * sigma[i] + mu[i] * mu[i]),
                        };
                        s.first[a][i][0] += r[i] * ex;
                        s.second[a][i] += r[i] * ex2;
                    }
                }
                AttributeEmission::Categorical { probs } => {
                    for i in 0..r.len() {
                        match row[a] {
                            Some(x) => s.first[a][i][x as usize] += r[i],
                            None => {
                                for (k, p) in probs[i].iter().enumerate() {
                                    s.first[a][i][k] += r[i] * p;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    s
}

fn m_step(params: &MixtureParams, s: &Stats, total_rows: usize) -> MixtureParams {
    let c = params.num_components();
    let weights = s.weight.iter().map(|w| w / total_rows as f64).collect();
    let attributes = params
        .emission
        .attributes
        .iter()
        .enumerate()
        .map(|(a, em)| match em {
            AttributeEmission::Gaussian { mu, sigma } => {
                let mut new_mu = mu.clone();
                let mut new_sigma = sigma.clone();
                for i in 0..c {
                    let w = s.weight[i];
                    if w > 0.0 {
                        let m = s.first[a][i][0] / w;
                        let var = (s.second[a][i] / w - m * m).max(0.0);
                        new_mu[i] = m;
                        new_sigma[i] = var.sqrt().max(SIGMA_FLOOR);
                    }
                }
                AttributeEmission::Gaussian {
                    mu: new_mu,
                    sigma: new_sigma,
                }
            }
            AttributeEmission::Categorical { probs } => AttributeEmission::Categorical {
                probs: (0..c)
                    .map(|i| {
                        let total: f64 = s.first[a][i].iter().sum();
                        if total > 0.0 {
                            s.first[a][i].iter().map(|x| x / total).collect()
                        } else {
                            probs[i].clone()
                        }
                    })
                    .collect(),
            },
        })
        .collect();
    MixtureParams {
        weights,
        emission: EmissionParams {
            num_states: c,
            attributes,
        },
    }
}

fn stats(params: &MixtureParams, rows: &[Vec<Option<f64>>]) -> Stats {
    let parts: Vec<Stats> = rows
        .par_chunks(ROW_CHUNK)
        .map(|ch| e_step(params, ch))
        .collect();
    // merged in chunk order for reproducibility
    parts.into_iter().fold(Stats::zeros(params), Stats::merge)
}

/// EM for a `C`-component diagonal mixture over vertex rows, missing
/// entries marginalized. Initialized with k-means; stops when the
/// log-likelihood gain falls below `tol` or after `max_iters` iterations.
pub fn fit_gmm(ds: &Dataset, c: usize, max_iters: usize, tol: f64, seed: u64) -> Result<GmmFit> {
    if c == 0 {
        return Err(GspnError::InvalidParameter(
            "a mixture needs at least 1 component".into(),
        ));
    }
    let rows: Vec<Vec<Option<f64>>> = observed_rows(ds.graphs())
        .into_iter()
        .filter(|r| r.iter().any(Option::is_some))
        .collect();
    if rows.is_empty() {
        return Err(GspnError::Empty("no observed rows to fit".into()));
    }
    fit_gmm_rows(ds.schema(), &rows, c, max_iters, tol, seed)
}

fn fit_gmm_rows(
    schema: &AttributeSchema,
    rows: &[Vec<Option<f64>>],
    c: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<GmmFit> {
    let mut rng = seeded(seed);
    let mut params = MixtureParams {
        weights: vec![1.0 / c as f64; c],
        emission: initial_emission(schema, c, rows, &mut rng),
    };
    let mut lls = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters {
        let s = stats(&params, rows);
        if let Some(prev) = lls.last() {
            if s.ll - prev < tol {
                lls.push(s.ll);
                converged = true;
                break;
            }
        }
        lls.push(s.ll);
        params = m_step(&params, &s, rows.len());
    }
    if !converged {
        lls.push(stats(&params, rows).ll);
    }
    Ok(GmmFit {
        params,
        log_likelihoods: lls,
        converged,
    })
}

/// Mean per-row log-likelihood of the observed entries of every vertex.
pub fn mean_row_log_likelihood(params: &MixtureParams, graphs: &[&Graph]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for g in graphs {
        for v in 0..g.num_vertices() {
            let row: Vec<Option<f64>> = (0..g.num_attributes())
                .map(|a| g.observed_value(v, a))
                .collect();
            total += params.row_log_likelihood(&row);
            n += 1;
        }
    }
    total / n.max(1) as f64
}

/// Missing-entry NLL with the same protocol as the GSPN query, using each
/// row's responsibilities given its own observed entries.
pub fn baseline_missing_nll(params: &MixtureParams, g: &Graph) -> Result<MissingNll> {
    if g.num_held_out() == 0 {
        return Err(GspnError::NoMaskedEntries);
    }
    Ok(baseline_nll_of(params, g))
}

fn baseline_nll_of(params: &MixtureParams, g: &Graph) -> MissingNll {
    let h: Vec<Vec<f64>> = (0..g.num_vertices())
        .map(|v| {
            let row: Vec<Option<f64>> = (0..g.num_attributes())
                .map(|a| g.observed_value(v, a))
                .collect();
            params.responsibilities(&row)
        })
        .collect();
    missing_nll_from(g, &h, &params.emission)
}

/// [`baseline_missing_nll`] pooled over many graphs.
pub fn baseline_dataset_missing_nll(
    params: &MixtureParams,
    graphs: &[&Graph],
) -> Result<DatasetNll> {
    let results: Vec<Option<MissingNll>> = graphs
        .par_iter()
        .map(|g| (g.num_held_out() > 0).then(|| baseline_nll_of(params, g)))
        .collect();
    pool_nll(&results)
}
