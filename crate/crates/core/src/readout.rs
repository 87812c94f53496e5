//! Supervised graph-level readout: a root mixture over the target whose
//! prior pools the posteriors of every vertex and height.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Constraint, ParamStore, Sources, Tape, Tensor, Var};
use crate::error::{GspnError, Result};
use crate::graph::{Dataset, Graph};
use crate::model::{
    build_forward, optimize, split_indices, train_unsupervised, ForwardVars, GraphBatch,
    GspnConfig, GspnParams, LayerPosteriors, LoopSettings, ModelVars, TrainHistory,
};
use crate::sampling::{seeded, standard_normal, SeededRng};

const EVAL_CHUNK: usize = 256;
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Average over vertices and heights; pooling matrices are row-stochastic.
    #[default]
    Mean,
    /// Sum over vertices and heights followed by a softmax; pooling
    /// matrices are unconstrained.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// GSPN and readout are updated together.
    #[default]
    Joint,
    /// Only the readout is trained on top of a fixed GSPN.
    Frozen,
}

/// Readout parameters for `C` vertex states, `C_g` graph states and `Y`
/// classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub pooling: Pooling,
    /// One `C x C_g` matrix per height `1..=L`; row `i` maps vertex state
    /// `i` to graph states.
    pub pool: Vec<Vec<Vec<f64>>>,
    /// `C_g x Y`, row `q` is `P(y | Q = q)`.
    pub target: Vec<Vec<f64>>,
}

fn check_simplex(what: &str, p: &[f64]) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(GspnError::InvalidParameter(format!(
            "{what} is not on the simplex (sum {total})"
        )));
    }
    Ok(())
}

impl ReadoutParams {
    pub fn graph_states(&self) -> usize {
        self.target.len()
    }

    pub fn num_classes(&self) -> usize {
        self.target.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, states: usize, layers: usize) -> Result<()> {
        let cg = self.graph_states();
        if cg == 0 || self.num_classes() == 0 {
            return Err(GspnError::InvalidParameter(
                "readout has no graph states or classes".into(),
            ));
        }
        if self.pool.len() != layers
            || self
                .pool
                .iter()
                .any(|m| m.len() != states || m.iter().any(|r| r.len() != cg))
        {
            return Err(GspnError::InvalidParameter(format!(
                "readout needs {layers} pooling matrices of shape {states} x {cg}"
            )));
        }
        for (q, row) in self.target.iter().enumerate() {
            if row.len() != self.num_classes() {
                return Err(GspnError::InvalidParameter("ragged target emission".into()));
            }
            check_simplex(&format!("target emission row {q}"), row)?;
        }
        if self.pooling == Pooling::Mean {
            for (l, m) in self.pool.iter().enumerate() {
                for (i, row) in m.iter().enumerate() {
                    check_simplex(&format!("pooling matrix {} row {i}", l + 1), row)?;
                }
            }
        } else if self.pool.iter().flatten().flatten().any(|x| !x.is_finite()) {
            return Err(GspnError::InvalidParameter(
                "non-finite pooling weight".into(),
            ));
        }
        Ok(())
    }

    /// Random initialization.
    pub fn initialize(
        pooling: Pooling,
        states: usize,
        layers: usize,
        graph_states: usize,
        num_classes: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let logits = |n: usize, scale: f64, rng: &mut SeededRng| -> Vec<f64> {
            (0..n).map(|_| scale * standard_normal(rng)).collect()
        };
        let pool = (0..layers)
            .map(|_| {
                (0..states)
                    .map(|_| {
                        let z = logits(graph_states, 1.0, rng);
                        match pooling {
                            Pooling::Mean => softmax(&z),
                            Pooling::Sum => z.into_iter().map(|x| 0.1 * x).collect(),
                        }
                    })
                    .collect()
            })
            .collect();
        let target = (0..graph_states)
            .map(|_| softmax(&logits(num_classes, 0.5, rng)))
            .collect();
        Self {
            pooling,
            pool,
            target,
        }
    }

    fn pool_constraint(&self) -> Constraint {
        match self.pooling {
            Pooling::Mean => Constraint::SoftmaxRows,
            Pooling::Sum => Constraint::None,
        }
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        self.insert_into(&mut store)?;
        Ok(store)
    }

    fn insert_into(&self, store: &mut ParamStore) -> Result<()> {
        for (l, m) in self.pool.iter().enumerate() {
            store.insert_constrained(
                pool_key(l + 1),
                &Tensor::from_rows(m),
                self.pool_constraint(),
            )?;
        }
        store.insert_constrained(
            TARGET_KEY,
            &Tensor::from_rows(&self.target),
            Constraint::SoftmaxRows,
        )
    }

    fn from_store(store: &ParamStore, pooling: Pooling, layers: usize) -> Result<Self> {
        let get = |k: &str| {
            store
                .constrained(k)
                .ok_or_else(|| GspnError::InvalidParameter(format!("missing parameter {k}")))
        };
        Ok(Self {
            pooling,
            pool: (1..=layers)
                .map(|l| get(&pool_key(l)).map(|t| t.to_rows()))
                .collect::<Result<_>>()?,
            target: get(TARGET_KEY)?.to_rows(),
        })
    }

    fn to_vars(&self, tape: &mut Tape) -> ReadoutVars {
        ReadoutVars {
            pool: self
                .pool
                .iter()
                .map(|m| tape.leaf(Tensor::from_rows(m)))
                .collect(),
            target: tape.leaf(Tensor::from_rows(&self.target)),
        }
    }
}

const TARGET_KEY: &str = "readout.target";

fn pool_key(level: usize) -> String {
    format!("readout.pool.{level}")
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

struct ReadoutVars {
    pool: Vec<Var>,
    target: Var,
}

impl ReadoutVars {
    fn from_bound(bound: &BoundParams, layers: usize) -> Self {
        Self {
            pool: (1..=layers).map(|l| bound.get(&pool_key(l))).collect(),
            target: bound.get(TARGET_KEY),
        }
    }
}

/// Per-graph readout priors `G x C_g` from the posteriors `h^1..h^L` of a
/// batch.
fn pooled_prior(
    tape: &mut Tape,
    h: &[Var],
    sizes: &[usize],
    rv: &ReadoutVars,
    pooling: Pooling,
) -> Result<Var> {
    let mut start = 0;
    let members: Sources = Arc::new(
        sizes
            .iter()
            .map(|&n| {
                start += n;
                (start - n..start).collect()
            })
            .collect(),
    );
    let layers = h.len() - 1;
    let mut acc: Option<Var> = None;
    for l in 1..=layers {
        let mean = tape.neighbor_mean(h[l], members.clone());
        let term = tape.matmul(mean, rv.pool[l - 1])?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    let acc = acc.expect("at least one layer");
    Ok(match pooling {
        Pooling::Mean => tape.scale(acc, 1.0 / layers as f64),
        Pooling::Sum => {
            let n = tape.leaf(Tensor::column_vector(
                sizes.iter().map(|&n| n as f64).collect(),
            ));
            let total = tape.mul(acc, n)?;
            tape.softmax_rows(total)
        }
    })
}

fn check_nonempty(graphs: &[&Graph]) -> Result<()> {
    if let Some(i) = graphs.iter().position(|g| g.num_vertices() == 0) {
        return Err(GspnError::InvalidGraph {
            graph: i,
            message: "readout needs at least one vertex".into(),
        });
    }
    Ok(())
}

/// Graph-state prior of every graph and the class distribution it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPrediction {
    pub prior: Vec<f64>,
    pub classes: Vec<f64>,
}

impl GraphPrediction {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.classes)
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

/// Readout prior and class distribution for each graph.
pub fn predict_batch(
    schema: &crate::graph::AttributeSchema,
    graphs: &[&Graph],
    params: &GspnParams,
    cfg: &GspnConfig,
    rp: &ReadoutParams,
) -> Result<Vec<GraphPrediction>> {
    use rayon::prelude::*;
    cfg.validate()?;
    params.validate(schema, cfg)?;
    rp.validate(cfg.states, cfg.layers)?;
    check_nonempty(graphs)?;
    let chunks = graphs
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<Vec<GraphPrediction>> {
            let batch = GraphBatch::new(schema, chunk);
            let mut tape = Tape::new();
            let vars = params.to_vars(&mut tape);
            let fwd = build_forward(&mut tape, &batch, &vars, cfg)?;
            crate::model::check_possible(&tape, &batch, &vars, &fwd)?;
            let rv = rp.to_vars(&mut tape);
            let prior = pooled_prior(&mut tape, &fwd.h, &batch.graph_sizes(), &rv, rp.pooling)?;
            let classes = tape.matmul(prior, rv.target)?;
            let (pt, ct) = (tape.value(prior), tape.value(classes));
            Ok((0..batch.num_graphs())
                .map(|g| GraphPrediction {
                    prior: pt.row(g).to_vec(),
                    classes: ct.row(g).to_vec(),
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Readout prior of one graph from its posteriors.
pub fn readout_prior(post: &LayerPosteriors, rp: &ReadoutParams) -> Result<Vec<f64>> {
    let n = post.num_vertices();
    if n == 0 {
        return Err(GspnError::Empty("readout of an empty graph".into()));
    }
    let layers = post.layers();
    let states = post.h[0].first().map_or(0, Vec::len);
    rp.validate(states, layers)?;
    let mut tape = Tape::new();
    let h: Vec<Var> = post
        .h
        .iter()
        .map(|hl| tape.leaf(Tensor::from_rows(hl)))
        .collect();
    let rv = rp.to_vars(&mut tape);
    let prior = pooled_prior(&mut tape, &h, &[n], &rv, rp.pooling)?;
    Ok(tape.value(prior).row(0).to_vec())
}

/// `P(y | x) = sum_q P(y | Q = q) pi_r(q)` for one graph.
pub fn graph_predict(
    schema: &crate::graph::AttributeSchema,
    g: &Graph,
    params: &GspnParams,
    cfg: &GspnConfig,
    rp: &ReadoutParams,
) -> Result<Vec<f64>> {
    Ok(predict_batch(schema, &[g], params, cfg, rp)?
        .remove(0)
        .classes)
}

/// Readout hyper-parameters; optimization settings come from the
/// [`GspnConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutConfig {
    /// `C_g`, mixture states of the graph-level sum unit.
    pub graph_states: usize,
    pub pooling: Pooling,
    pub mode: TrainMode,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            graph_states: 8,
            pooling: Pooling::Mean,
            mode: TrainMode::Joint,
        }
    }
}

/// Result of supervised training.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedModel {
    pub params: GspnParams,
    pub readout: ReadoutParams,
    /// Train metric is the mean log-probability of the true labels,
    /// validation score the validation accuracy.
    pub history: TrainHistory,
}

fn labels_of(ds: &Dataset) -> Result<(Vec<usize>, usize)> {
    let labels = ds
        .graphs()
        .iter()
        .enumerate()
        .map(|(i, g)| {
            g.label()
                .ok_or_else(|| GspnError::MissingLabels(format!("graph {i} has no label")))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = ds
        .num_classes()
        .unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1))
        .max(1);
    Ok((labels, k))
}

/// Maximizes `sum_g log P(y_g | x_g)`.
///
/// `Frozen` trains the readout on top of `base` (trained without labels
/// first when `None`); `Joint` starts from `base` or a fresh initialization
/// and updates both parts. Early stopping uses validation accuracy.
pub fn train_supervised(
    ds: &Dataset,
    cfg: &GspnConfig,
    rcfg: &ReadoutConfig,
    base: Option<GspnParams>,
) -> Result<SupervisedModel> {
    cfg.validate()?;
    if rcfg.graph_states == 0 {
        return Err(GspnError::InvalidParameter(
            "graph_states must be at least 1".into(),
        ));
    }
    crate::model::check_trainable(ds)?;
    let (labels, num_classes) = labels_of(ds)?;
    let schema = ds.schema();
    let graphs = ds.graphs();
    check_nonempty(&graphs.iter().collect::<Vec<_>>())?;

    let mut rng = seeded(cfg.seed ^ 0x5ee_d0f1_abe1);
    let (train, val) = split_indices(ds.len(), &mut rng);
    let gspn = match (base, rcfg.mode) {
        (Some(p), _) => {
            p.validate(schema, cfg)?;
            p
        }
        (None, TrainMode::Frozen) => train_unsupervised(ds, cfg)?.0,
        (None, TrainMode::Joint) => {
            let first: Vec<&Graph> = train
                .iter()
                .take(cfg.batch_size)
                .map(|&i| &graphs[i])
                .collect();
            GspnParams::initialize(schema, cfg, &first, &mut rng)?
        }
    };
    let readout = ReadoutParams::initialize(
        rcfg.pooling,
        cfg.states,
        cfg.layers,
        rcfg.graph_states,
        num_classes,
        &mut rng,
    );

    let joint = rcfg.mode == TrainMode::Joint;
    let mut store = if joint {
        gspn.to_store()?
    } else {
        ParamStore::new()
    };
    readout.insert_into(&mut store)?;
    let pooling = rcfg.pooling;
    let layers = cfg.layers;

    let unpack = |store: &ParamStore| -> Result<(GspnParams, ReadoutParams)> {
        let p = if joint {
            GspnParams::from_store(store, schema, layers)?
        } else {
            gspn.clone()
        };
        Ok((p, ReadoutParams::from_store(store, pooling, layers)?))
    };
    let train_graphs: Vec<&Graph> = train.iter().map(|&i| &graphs[i]).collect();
    let val_graphs: Vec<&Graph> = val.iter().map(|&i| &graphs[i]).collect();
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let val_labels: Vec<usize> = val.iter().map(|&i| labels[i]).collect();

    let settings = LoopSettings {
        epochs: cfg.epochs,
        patience: cfg.patience,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
    };
    let history = optimize(
        &mut store,
        &train,
        &settings,
        &mut rng,
        |tape, bound, batch| {
            let gs: Vec<&Graph> = batch.iter().map(|&i| &graphs[i]).collect();
            let b = GraphBatch::new(schema, &gs);
            let vars = if joint {
                ModelVars::from_bound(bound, schema, layers)
            } else {
                gspn.to_vars(tape)
            };
            let fwd = build_forward(tape, &b, &vars, cfg)?;
            let probs = class_probs(tape, &fwd, &b.graph_sizes(), bound, pooling)?;
            let mut onehot = Tensor::zeros(batch.len(), num_classes);
            for (r, &i) in batch.iter().enumerate() {
                onehot.set(r, labels[i], 1.0);
            }
            let oh = tape.leaf(onehot);
            let picked = tape.mul(probs, oh)?;
            let p_true = tape.sum_rows(picked);
            let lp = tape.log(p_true);
            Ok(tape.mean(lp))
        },
        |store| {
            let (p, r) = unpack(store)?;
            let tr = predict_batch(schema, &train_graphs, &p, cfg, &r)?;
            let va = predict_batch(schema, &val_graphs, &p, cfg, &r)?;
            let mean_lp = tr
                .iter()
                .zip(&train_labels)
                .map(|(pr, &y)| pr.classes[y].ln())
                .sum::<f64>()
                / tr.len() as f64;
            Ok((mean_lp, accuracy(&va, &val_labels)))
        },
    )?;
    let (params, readout) = unpack(&store)?;
    Ok(SupervisedModel {
        params,
        readout,
        history,
    })
}

/// Class probabilities `G x Y` of a batch on `tape`, reading the readout
/// parameters from `bound`.
pub fn class_probs(
    tape: &mut Tape,
    fwd: &ForwardVars,
    sizes: &[usize],
    bound: &BoundParams,
    pooling: Pooling,
) -> Result<Var> {
    let rv = ReadoutVars::from_bound(bound, fwd.h.len() - 1);
    let prior = pooled_prior(tape, &fwd.h, sizes, &rv, pooling)?;
    tape.matmul(prior, rv.target)
}

/// Fraction of predictions whose argmax equals the label.
pub fn accuracy(preds: &[GraphPrediction], labels: &[usize]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, &y)| p.predicted_class() == y)
        .count();
    hits as f64 / preds.len() as f64
}

/// Random readout for tests and property checks.
pub fn random_readout(
    pooling: Pooling,
    states: usize,
    layers: usize,
    graph_states: usize,
    num_classes: usize,
    rng: &mut SeededRng,
) -> ReadoutParams {
    let mut r = ReadoutParams::initialize(pooling, states, layers, graph_states, num_classes, rng);
    if pooling == Pooling::Sum {
        for x in r.pool.iter_mut().flatten().flatten() {
            *x = rng.gen_range(-2.0..2.0);
        }
    }
    r
}
