//! Conditional queries on a trained model: negative log-likelihood of
//! masked entries, conditional-mean imputation and what-if perturbations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::log_sum_exp;
use crate::error::{GspnError, Result};
use crate::graph::{AttributeKind, AttributeSchema, Graph};
use crate::model::{forward_batch, forward_pass, GspnConfig, GspnParams};
use crate::spn::{AttributeEmission, EmissionParams};

const EVAL_CHUNK: usize = 256;

/// Negative log-likelihood of the held-out entries of one vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexNll {
    pub vertex: usize,
    /// `-log P(x_mis | evidence)` of the whole missing block.
    pub nll: f64,
    /// Number of held-out entries in the block.
    pub entries: usize,
    /// Sum of the per-entry conditional NLLs.
    pub entry_nll_sum: f64,
}

/// Missing-entry NLL of one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingNll {
    /// Vertices with at least one held-out entry, by vertex id.
    pub per_vertex: Vec<VertexNll>,
}

impl MissingNll {
    /// Mean over vertices of the block NLL.
    pub fn mean_per_vertex(&self) -> f64 {
        self.per_vertex.iter().map(|v| v.nll).sum::<f64>() / self.per_vertex.len() as f64
    }

    /// Mean over held-out entries of the single-entry conditional NLL.
    pub fn mean_per_entry(&self) -> f64 {
        let n: usize = self.per_vertex.iter().map(|v| v.entries).sum();
        self.per_vertex.iter().map(|v| v.entry_nll_sum).sum::<f64>() / n as f64
    }
}

/// Missing-entry NLL pooled over many graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetNll {
    /// Mean over all vertices with held-out entries.
    pub mean_per_vertex: f64,
    /// Mean over all held-out entries.
    pub mean_per_entry: f64,
    /// Per-graph mean per vertex; `None` for graphs without held-out entries.
    pub per_graph: Vec<Option<f64>>,
}

/// Held-out `(attribute, true value)` pairs of vertex `v`.
fn held_out(g: &Graph, v: usize) -> Vec<(usize, f64)> {
    (0..g.num_attributes())
        .filter(|&a| !g.is_observed(v, a))
        .filter_map(|a| g.value(v, a).map(|x| (a, x)))
        .collect()
}

/// `-log sum_i h(i) prod_a P(x_a | i)` and the per-entry sum
/// `sum_a -log sum_i h(i) P(x_a | i)`.
pub(crate) fn conditional_nll(
    h: &[f64],
    em: &EmissionParams,
    entries: &[(usize, f64)],
) -> (f64, f64) {
    let log_h: Vec<f64> = h.iter().map(|p| p.ln()).collect();
    let block: Vec<f64> = (0..h.len())
        .map(|i| {
            log_h[i]
                + entries
                    .iter()
                    .map(|&(a, x)| em.leaf_log_prob(a, i, x))
                    .sum::<f64>()
        })
        .collect();
    let per_entry = entries
        .iter()
        .map(|&(a, x)| {
            let terms: Vec<f64> = (0..h.len())
                .map(|i| log_h[i] + em.leaf_log_prob(a, i, x))
                .collect();
            -log_sum_exp(&terms)
        })
        .sum();
    (-log_sum_exp(&block), per_entry)
}

/// Per-vertex NLL from posteriors `h[v]` over the emission `em`.
pub(crate) fn missing_nll_from(g: &Graph, h: &[Vec<f64>], em: &EmissionParams) -> MissingNll {
    let per_vertex = (0..g.num_vertices())
        .filter_map(|v| {
            let entries = held_out(g, v);
            if entries.is_empty() {
                return None;
            }
            let (nll, entry_nll_sum) = conditional_nll(&h[v], em, &entries);
            Some(VertexNll {
                vertex: v,
                nll,
                entries: entries.len(),
                entry_nll_sum,
            })
        })
        .collect();
    MissingNll { per_vertex }
}

/// NLL of the masked entries of `g` at their held-out true values,
/// conditioned on all observed evidence in each vertex's tree through the
/// root posterior `h^L`. Vertices without held-out entries are skipped.
pub fn missing_nll(
    schema: &AttributeSchema,
    g: &Graph,
    params: &GspnParams,
    cfg: &GspnConfig,
) -> Result<MissingNll> {
    if g.num_held_out() == 0 {
        return Err(GspnError::NoMaskedEntries);
    }
    let post = forward_pass(schema, g, params, cfg)?;
    let em = params.top_emission(cfg)?;
    Ok(missing_nll_from(g, &post.h[cfg.layers], &em))
}

/// Pools per-graph results into dataset means.
pub(crate) fn pool_nll(results: &[Option<MissingNll>]) -> Result<DatasetNll> {
    let mut vsum = 0.0;
    let mut vn = 0usize;
    let mut esum = 0.0;
    let mut en = 0usize;
    for r in results.iter().flatten() {
        for v in &r.per_vertex {
            vsum += v.nll;
            vn += 1;
            esum += v.entry_nll_sum;
            en += v.entries;
        }
    }
    if vn == 0 {
        return Err(GspnError::NoMaskedEntries);
    }
    Ok(DatasetNll {
        mean_per_vertex: vsum / vn as f64,
        mean_per_entry: esum / en as f64,
        per_graph: results
            .iter()
            .map(|r| r.as_ref().map(MissingNll::mean_per_vertex))
            .collect(),
    })
}

/// [`missing_nll`] over many graphs.
pub fn dataset_missing_nll(
    schema: &AttributeSchema,
    graphs: &[&Graph],
    params: &GspnParams,
    cfg: &GspnConfig,
) -> Result<DatasetNll> {
    let em = params.top_emission(cfg)?;
    let chunks = graphs
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<Vec<Option<MissingNll>>> {
            let posts = forward_batch(schema, chunk, params, cfg)?;
            Ok(chunk
                .iter()
                .zip(&posts)
                .map(|(g, p)| {
                    (g.num_held_out() > 0).then(|| missing_nll_from(g, &p.h[cfg.layers], &em))
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    pool_nll(&chunks.into_iter().flatten().collect::<Vec<_>>())
}

/// Fills every masked entry of `g`.
///
/// Continuous entries get the conditional mean `sum_i mu_i h^L(i)`.
/// Categorical entries get the most probable category under the
/// posterior-mixed distribution `sum_i P(x | i) h^L(i)`. Observed entries
/// are returned unchanged.
pub fn impute(
    schema: &AttributeSchema,
    g: &Graph,
    params: &GspnParams,
    cfg: &GspnConfig,
) -> Result<Vec<Vec<f64>>> {
    let post = forward_pass(schema, g, params, cfg)?;
    let em = params.top_emission(cfg)?;
    Ok(impute_from(schema, g, &post.h[cfg.layers], &em))
}

pub(crate) fn impute_from(
    schema: &AttributeSchema,
    g: &Graph,
    h: &[Vec<f64>],
    em: &EmissionParams,
) -> Vec<Vec<f64>> {
    (0..g.num_vertices())
        .map(|v| {
            (0..g.num_attributes())
                .map(|a| {
                    if let Some(x) = g.observed_value(v, a) {
                        return x;
                    }
                    match (&em.attributes[a], schema.kind(a)) {
                        (AttributeEmission::Gaussian { mu, .. }, _) => {
                            mu.iter().zip(&h[v]).map(|(m, p)| m * p).sum()
                        }
                        (
                            AttributeEmission::Categorical { probs },
                            AttributeKind::Categorical { arity },
                        ) => {
                            let mixed: Vec<f64> = (0..arity)
                                .map(|k| probs.iter().zip(&h[v]).map(|(row, p)| row[k] * p).sum())
                                .collect();
                            crate::readout::argmax(&mixed) as f64
                        }
                        _ => unreachable!("validated emission families match the schema"),
                    }
                })
                .collect()
        })
        .collect()
}

/// Effect of editing one attribute on every vertex's pseudo log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub vertex: usize,
    pub attribute: usize,
    pub value: f64,
    /// `PLL_v(edited) - PLL_v(original)` by vertex id.
    pub delta: Vec<f64>,
    /// Depth at which the edited vertex enters each vertex's tree; `None`
    /// when it never does.
    pub hop_distance: Vec<Option<usize>>,
}

/// Replaces `(vertex, attribute)` with `value` (observing it) and reports
/// the change of each vertex's pseudo log-likelihood term.
pub fn perturbation_query(
    schema: &AttributeSchema,
    g: &Graph,
    params: &GspnParams,
    cfg: &GspnConfig,
    vertex: usize,
    attribute: usize,
    value: f64,
) -> Result<Perturbation> {
    if vertex >= g.num_vertices() {
        return Err(GspnError::VertexOutOfRange {
            vertex,
            num_vertices: g.num_vertices(),
        });
    }
    schema
        .check_value(attribute, value)
        .map_err(|message| GspnError::SchemaViolation {
            graph: 0,
            vertex,
            attribute,
            message,
        })?;
    let edited = g.with_value(vertex, attribute, value);
    let posts = forward_batch(schema, &[g, &edited], params, cfg)?;
    let delta = posts[1]
        .vertex_ll
        .iter()
        .zip(&posts[0].vertex_ll)
        .map(|(b, a)| b - a)
        .collect();
    Ok(Perturbation {
        vertex,
        attribute,
        value,
        delta,
        hop_distance: g.hop_distances_from(vertex),
    })
}
