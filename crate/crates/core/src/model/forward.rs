use std::sync::Arc;

use super::config::GspnConfig;
use super::params::{shortcut_vars, GspnParams, ModelVars};
use crate::autodiff::{Sources, Tape, Tensor, Var};
use crate::error::{GspnError, Result};
use crate::graph::{AttributeSchema, Graph};
use crate::spn::Evidence;

/// Several graphs laid out as one disjoint union for vectorized evaluation.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    evidence: Evidence,
    sources: Sources,
    has_in: Arc<Vec<bool>>,
    has_obs: Tensor,
    offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn new(schema: &AttributeSchema, graphs: &[&Graph]) -> Self {
        let mut offsets = vec![0];
        let mut sources = Vec::new();
        let mut has_obs = Vec::new();
        for g in graphs {
            let base = *offsets.last().unwrap();
            for v in 0..g.num_vertices() {
                sources.push(
                    g.in_neighbors_unchecked(v)
                        .iter()
                        .map(|u| base + u)
                        .collect::<Vec<_>>(),
                );
                let any = (0..g.num_attributes()).any(|a| g.is_observed(v, a));
                has_obs.push(if any { 1.0 } else { 0.0 });
            }
            offsets.push(base + g.num_vertices());
        }
        let has_in = sources.iter().map(|s: &Vec<usize>| !s.is_empty()).collect();
        Self {
            evidence: Evidence::from_graphs(schema, graphs.iter().copied()),
            sources: Arc::new(sources),
            has_in: Arc::new(has_in),
            has_obs: Tensor::column_vector(has_obs),
            offsets,
        }
    }

    pub fn num_vertices(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Rows of graph `i` in the batch.
    pub fn graph_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn graph_sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn evidence(&self) -> &Evidence {
        &self.evidence
    }

    /// Graph index and local vertex of batch row `row`.
    fn locate(&self, row: usize) -> (usize, usize) {
        let g = self.offsets.partition_point(|&o| o <= row) - 1;
        (g, row - self.offsets[g])
    }
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `pi^l`, `N x C` for every height.
    pub priors: Vec<Var>,
    /// `h^l`, `N x C` for every height.
    pub h: Vec<Var>,
    /// Per-vertex pseudo log-likelihood terms, `N x 1`.
    pub vertex_ll: Var,
}

/// Records the message passing of all heights on `tape`.
pub fn build_forward(
    tape: &mut Tape,
    batch: &GraphBatch,
    vars: &ModelVars,
    cfg: &GspnConfig,
) -> Result<ForwardVars> {
    let layers = cfg.layers;
    let top_emission = if cfg.shortcut {
        Some(shortcut_vars(tape, &vars.emissions[1..layers])?)
    } else {
        None
    };
    let mut priors = Vec::with_capacity(layers + 1);
    let mut h = Vec::with_capacity(layers + 1);
    let mut top_logits = None;
    for l in 0..=layers {
        let emission = match (&top_emission, l == layers) {
            (Some(e), true) => e,
            _ => &vars.emissions[l],
        };
        let log_em = batch.evidence.log_likelihoods(tape, emission)?;
        let prior = if l == 0 {
            vars.leaf_prior
        } else {
            let mean = tape.neighbor_mean(h[l - 1], batch.sources.clone());
            let aggregated = tape.matmul(mean, vars.transitions[l - 1])?;
            tape.select_rows(batch.has_in.clone(), aggregated, vars.leaf_prior)?
        };
        let log_prior = tape.log(prior);
        let logits = tape.add(log_em, log_prior)?;
        h.push(tape.softmax_rows(logits));
        priors.push(prior);
        if l == layers {
            top_logits = Some(logits);
        }
    }
    let ll = tape.log_sum_exp_rows(top_logits.unwrap());
    let mask = tape.leaf(batch.has_obs.clone());
    let vertex_ll = tape.mul(ll, mask)?;
    Ok(ForwardVars {
        priors,
        h,
        vertex_ll,
    })
}

/// Maps a `-inf` vertex term to the observed entry responsible for it.
pub(crate) fn check_possible(
    tape: &Tape,
    batch: &GraphBatch,
    vars: &ModelVars,
    fwd: &ForwardVars,
) -> Result<()> {
    let ll = tape.value(fwd.vertex_ll);
    if let Some(row) = ll.data().iter().position(|x| *x == f64::NEG_INFINITY) {
        let (_, vertex) = batch.locate(row);
        let attribute = vars
            .emissions
            .iter()
            .find_map(|em| batch.evidence.impossible_attribute(tape, em, row))
            .unwrap_or(0);
        return Err(GspnError::ImpossibleEvidence { vertex, attribute });
    }
    if ll.data().iter().any(|x| x.is_nan()) {
        return Err(GspnError::InvalidParameter(
            "pseudo log-likelihood evaluated to NaN".into(),
        ));
    }
    Ok(())
}

/// Priors, posteriors and root log-likelihood terms of every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPosteriors {
    /// `priors[l][v]` is `pi^l_v`.
    pub priors: Vec<Vec<Vec<f64>>>,
    /// `h[l][v]` is `h^l_v`.
    pub h: Vec<Vec<Vec<f64>>>,
    /// Per-vertex pseudo log-likelihood terms.
    pub vertex_ll: Vec<f64>,
}

impl LayerPosteriors {
    pub fn num_vertices(&self) -> usize {
        self.vertex_ll.len()
    }

    pub fn layers(&self) -> usize {
        self.h.len() - 1
    }
}

fn rows_of(t: &Tensor, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    range.map(|r| t.row(r).to_vec()).collect()
}

/// Forward passes of several graphs at once, one result per graph.
pub fn forward_batch(
    schema: &AttributeSchema,
    graphs: &[&Graph],
    params: &GspnParams,
    cfg: &GspnConfig,
) -> Result<Vec<LayerPosteriors>> {
    cfg.validate()?;
    params.validate(schema, cfg)?;
    let batch = GraphBatch::new(schema, graphs);
    let mut tape = Tape::new();
    let vars = params.to_vars(&mut tape);
    let fwd = build_forward(&mut tape, &batch, &vars, cfg)?;
    check_possible(&tape, &batch, &vars, &fwd)?;
    Ok((0..batch.num_graphs())
        .map(|i| {
            let range = batch.graph_range(i);
            LayerPosteriors {
                priors: fwd
                    .priors
                    .iter()
                    .map(|&p| {
                        let t = tape.value(p);
                        if t.rows() == 1 {
                            // leaf prior shared by all vertices
                            vec![t.row(0).to_vec(); range.len()]
                        } else {
                            rows_of(t, range.clone())
                        }
                    })
                    .collect(),
                h: fwd
                    .h
                    .iter()
                    .map(|&h| rows_of(tape.value(h), range.clone()))
                    .collect(),
                vertex_ll: tape.value(fwd.vertex_ll).data()[range.clone()].to_vec(),
            }
        })
        .collect())
}

/// Posteriors of every vertex at every height.
pub fn forward_pass(
    schema: &AttributeSchema,
    g: &Graph,
    params: &GspnParams,
    cfg: &GspnConfig,
) -> Result<LayerPosteriors> {
    Ok(forward_batch(schema, &[g], params, cfg)?.remove(0))
}

/// Per-vertex pseudo log-likelihood terms and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLogLikelihood {
    pub per_vertex: Vec<f64>,
    pub total: f64,
}

pub fn pseudo_log_likelihood(
    schema: &AttributeSchema,
    g: &Graph,
    params: &GspnParams,
    cfg: &GspnConfig,
) -> Result<PseudoLogLikelihood> {
    let post = forward_pass(schema, g, params, cfg)?;
    let total = post.vertex_ll.iter().sum();
    Ok(PseudoLogLikelihood {
        per_vertex: post.vertex_ll,
        total,
    })
}

/// Row `v` concatenates `h^0_v, ..., h^L_v`.
pub fn vertex_embeddings(
    schema: &AttributeSchema,
    g: &Graph,
    params: &GspnParams,
    cfg: &GspnConfig,
) -> Result<Vec<Vec<f64>>> {
    let post = forward_pass(schema, g, params, cfg)?;
    Ok(embeddings_of(&post))
}

pub(crate) fn embeddings_of(post: &LayerPosteriors) -> Vec<Vec<f64>> {
    (0..post.num_vertices())
        .map(|v| post.h.iter().flat_map(|hl| hl[v].iter().copied()).collect())
        .collect()
}

/// `pi(i) = (1/T) sum_t sum_k theta(k, i) h_t(k)`.
pub fn aggregate_prior(theta: &[Vec<f64>], children: &[Vec<f64>]) -> Result<Vec<f64>> {
    if children.is_empty() {
        return Err(GspnError::Empty(
            "aggregate_prior needs at least one child posterior".into(),
        ));
    }
    let c = theta.len();
    if theta.iter().any(|r| r.len() != c) || children.iter().any(|h| h.len() != c) {
        return Err(GspnError::InvalidParameter(format!(
            "aggregate_prior expects a {c} x {c} transition and {c}-vectors"
        )));
    }
    let mut tape = Tape::new();
    let h = tape.leaf(Tensor::from_rows(children));
    let t = tape.leaf(Tensor::from_rows(theta));
    let sources: Sources = Arc::new(vec![(0..children.len()).collect()]);
    let mean = tape.neighbor_mean(h, sources);
    let pi = tape.matmul(mean, t)?;
    Ok(tape.value(pi).row(0).to_vec())
}
