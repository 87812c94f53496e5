use std::path::{Path, PathBuf};

use gspn::baselines::{
    baseline_dataset_missing_nll, fit_gaussian, fit_gmm, mean_row_log_likelihood, MixtureParams,
};
use gspn::mask::apply_missing_mask;
use gspn::model::{forward_batch, train_unsupervised, Checkpoint, GspnConfig, TrainHistory};
use gspn::queries::{dataset_missing_nll, impute, perturbation_query};
use gspn::readout::{predict_batch, train_supervised, Pooling, ReadoutConfig, TrainMode};
use gspn::synth::{synth_community_graphs, synth_mixture_rows, SYNTH_ATTRIBUTES};
use gspn::{Dataset, Graph};
use serde::Deserialize;

use crate::cli::*;
use crate::output::{fmt, write_csv, Metrics};
use crate::CliError;

/// Contents of the `--config` file. Flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: GspnConfig,
    pub readout: ReadoutConfig,
    pub data: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

pub struct Context {
    pub file: FileConfig,
    pub seed: Option<u64>,
    pub metrics: Option<PathBuf>,
}

fn required(
    flag: Option<&PathBuf>,
    fallback: Option<&PathBuf>,
    name: &str,
) -> Result<PathBuf, CliError> {
    flag.or(fallback)
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("missing --{name} (and no `{name}` in the config)")))
}

impl Context {
    fn data_path(&self, args: &DataArgs) -> Result<PathBuf, CliError> {
        required(args.data.as_ref(), self.file.data.as_ref(), "data")
    }

    fn out_path(&self, out: Option<&PathBuf>) -> Result<PathBuf, CliError> {
        required(out, self.file.out.as_ref(), "out")
    }

    fn load_data(&self, args: &DataArgs) -> Result<Dataset, CliError> {
        Ok(Dataset::load(self.data_path(args)?)?)
    }

    fn load_model(&self, args: &EvalArgs) -> Result<(Checkpoint, Dataset), CliError> {
        let path = required(args.model.as_ref(), self.file.checkpoint.as_ref(), "model")?;
        let ck = Checkpoint::load(path)?;
        let ds = self.load_data(&args.data)?;
        ck.check_schema(ds.schema())?;
        Ok((ck, ds))
    }

    fn model_config(&self, o: &ModelOverrides) -> Result<GspnConfig, CliError> {
        let mut cfg = self.file.model.clone();
        if let Some(x) = o.layers {
            cfg.layers = x;
        }
        if let Some(x) = o.states {
            cfg.states = x;
        }
        if let Some(x) = o.shortcut {
            cfg.shortcut = x;
        }
        if let Some(x) = o.learning_rate {
            cfg.learning_rate = x;
        }
        if let Some(x) = o.batch_size {
            cfg.batch_size = x;
        }
        if let Some(x) = o.epochs {
            cfg.epochs = x;
        }
        if let Some(x) = o.patience {
            cfg.patience = x;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.file.model.seed)
    }

    fn emit(&self, m: Metrics) -> Result<(), CliError> {
        m.write(self.metrics.as_deref())
    }
}

fn graph_refs(ds: &Dataset) -> Vec<&Graph> {
    ds.graphs().iter().collect()
}

fn write_history(path: &Path, h: &TrainHistory) -> Result<(), CliError> {
    let header = ["epoch", "train", "validation"].map(String::from);
    write_csv(
        path,
        &header,
        h.epochs
            .iter()
            .map(|e| vec![e.epoch.to_string(), fmt(e.train), fmt(e.validation)]),
    )
}

/// Mean per-vertex pseudo log-likelihood of each graph.
fn per_graph_pll(ck: &Checkpoint, ds: &Dataset) -> Result<Vec<Option<f64>>, CliError> {
    let posts = forward_batch(ds.schema(), &graph_refs(ds), &ck.params, &ck.config)?;
    Ok(posts
        .iter()
        .map(|p| {
            let n = p.num_vertices();
            (n > 0).then(|| p.vertex_ll.iter().sum::<f64>() / n as f64)
        })
        .collect())
}

pub fn train_unsup(ctx: &Context, args: &TrainArgs) -> Result<(), CliError> {
    let cfg = ctx.model_config(&args.model)?;
    let out = ctx.out_path(args.out.as_ref())?;
    let ds = ctx.load_data(&args.data)?;
    let (params, history) = train_unsupervised(&ds, &cfg)?;
    let ck = Checkpoint::new(ds.schema().clone(), cfg, params)?;
    ck.save(&out)?;
    if let Some(h) = &args.history {
        write_history(h, &history)?;
    }
    let best = &history.epochs[history.best_epoch];
    ctx.emit(
        Metrics::from_per_graph("pll", per_graph_pll(&ck, &ds)?)
            .with_extra("best_epoch", history.best_epoch as f64)
            .with_extra("validation_pll", best.validation),
    )
}

pub fn train_sup(ctx: &Context, args: &TrainSupArgs) -> Result<(), CliError> {
    let cfg = ctx.model_config(&args.train.model)?;
    let out = ctx.out_path(args.train.out.as_ref())?;
    let ds = ctx.load_data(&args.train.data)?;
    let mut rcfg = ctx.file.readout.clone();
    if let Some(x) = args.graph_states {
        rcfg.graph_states = x;
    }
    if let Some(p) = args.pooling {
        rcfg.pooling = match p {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::Sum => Pooling::Sum,
        };
    }
    if let Some(m) = args.mode {
        rcfg.mode = match m {
            ModeArg::Joint => TrainMode::Joint,
            ModeArg::Frozen => TrainMode::Frozen,
        };
    }
    let base = match &args.init {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.check_schema(ds.schema())?;
            if ck.config.layers != cfg.layers || ck.config.states != cfg.states {
                return Err(CliError::Usage(
                    "--init checkpoint has a different number of layers or states".into(),
                ));
            }
            Some(ck.params)
        }
        None => None,
    };
    let model = train_supervised(&ds, &cfg, &rcfg, base)?;
    let ck = Checkpoint::new(ds.schema().clone(), cfg.clone(), model.params)?
        .with_readout(model.readout)?;
    ck.save(&out)?;
    if let Some(h) = &args.train.history {
        write_history(h, &model.history)?;
    }
    let preds = predict_batch(
        ds.schema(),
        &graph_refs(&ds),
        &ck.params,
        &cfg,
        ck.readout.as_ref().unwrap(),
    )?;
    let correct = ds
        .graphs()
        .iter()
        .zip(&preds)
        .map(|(g, p)| {
            g.label()
                .map(|y| f64::from(u8::from(p.predicted_class() == y)))
        })
        .collect();
    let best = &model.history.epochs[model.history.best_epoch];
    ctx.emit(
        Metrics::from_per_graph("accuracy", correct)
            .with_extra("best_epoch", model.history.best_epoch as f64)
            .with_extra("validation_accuracy", best.validation),
    )
}

pub fn eval_pll(ctx: &Context, args: &EvalArgs) -> Result<(), CliError> {
    let (ck, ds) = ctx.load_model(args)?;
    ctx.emit(Metrics::from_per_graph("pll", per_graph_pll(&ck, &ds)?))
}

pub fn eval_missing_nll(ctx: &Context, args: &EvalArgs) -> Result<(), CliError> {
    let (ck, ds) = ctx.load_model(args)?;
    let r = dataset_missing_nll(ds.schema(), &graph_refs(&ds), &ck.params, &ck.config)?;
    ctx.emit(
        Metrics::from_per_graph("missing_nll", r.per_graph)
            .with_mean(r.mean_per_vertex)
            .with_extra("per_entry", r.mean_per_entry),
    )
}

pub fn impute_cmd(ctx: &Context, args: &OutputArgs) -> Result<(), CliError> {
    let (ck, ds) = ctx.load_model(&args.eval)?;
    let out = ctx.out_path(args.out.as_ref())?;
    let schema = ds.schema();
    let mut filled = Vec::with_capacity(ds.len());
    let mut rmse = Vec::with_capacity(ds.len());
    for g in ds.graphs() {
        let rows = impute(schema, g, &ck.params, &ck.config)?;
        let (mut se, mut n) = (0.0, 0usize);
        for v in 0..g.num_vertices() {
            for a in schema.continuous() {
                if let (false, Some(truth)) = (g.is_observed(v, a), g.value(v, a)) {
                    se += (rows[v][a] - truth).powi(2);
                    n += 1;
                }
            }
        }
        rmse.push((n > 0).then(|| (se / n as f64).sqrt()));
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(Some).collect())
            .collect();
        filled.push(Graph::new(
            g.num_vertices(),
            g.edges().to_vec(),
            rows,
            g.label(),
        )?);
    }
    ds.with_graphs(filled)?.save(&out)?;
    ctx.emit(Metrics::from_per_graph("imputation_rmse", rmse))
}

pub fn embed(ctx: &Context, args: &OutputArgs) -> Result<(), CliError> {
    let (ck, ds) = ctx.load_model(&args.eval)?;
    let out = ctx.out_path(args.out.as_ref())?;
    let posts = forward_batch(ds.schema(), &graph_refs(&ds), &ck.params, &ck.config)?;
    let (layers, states) = (ck.config.layers, ck.config.states);
    let mut header = vec!["graph_id".to_string(), "vertex_id".to_string()];
    for l in 0..=layers {
        for i in 0..states {
            header.push(format!("h{l}_{i}"));
        }
    }
    let rows = posts.iter().enumerate().flat_map(|(gi, p)| {
        (0..p.num_vertices()).map(move |v| {
            let mut row = vec![gi.to_string(), v.to_string()];
            row.extend(p.h.iter().flat_map(|hl| hl[v].iter().map(|x| fmt(*x))));
            row
        })
    });
    write_csv(&out, &header, rows)?;
    let sizes = posts
        .iter()
        .map(|p| Some(p.num_vertices() as f64))
        .collect();
    ctx.emit(Metrics::from_per_graph("embedded_vertices", sizes))
}

pub fn query_perturb(ctx: &Context, args: &PerturbArgs) -> Result<(), CliError> {
    let (ck, ds) = ctx.load_model(&args.output.eval)?;
    let out = ctx.out_path(args.output.out.as_ref())?;
    let g = ds.graphs().get(args.graph).ok_or_else(|| {
        CliError::Usage(format!(
            "--graph {} out of range ({} graphs)",
            args.graph,
            ds.len()
        ))
    })?;
    let p = perturbation_query(
        ds.schema(),
        g,
        &ck.params,
        &ck.config,
        args.vertex,
        args.attribute,
        args.value,
    )?;
    let header = ["vertex_id", "hop_distance", "delta_pll"].map(String::from);
    write_csv(
        &out,
        &header,
        p.delta
            .iter()
            .zip(&p.hop_distance)
            .enumerate()
            .map(|(v, (d, h))| {
                // -1 marks vertices whose trees never contain the edited vertex
                let hop = h.map_or_else(|| "-1".to_string(), |h| h.to_string());
                vec![v.to_string(), hop, fmt(*d)]
            }),
    )?;
    let mean = p.delta.iter().sum::<f64>() / p.delta.len().max(1) as f64;
    ctx.emit(
        Metrics::from_per_graph("delta_pll", vec![Some(mean)])
            .with_extra("edited_vertex", args.vertex as f64)
            .with_extra(
                "changed_vertices",
                p.delta.iter().filter(|d| **d != 0.0).count() as f64,
            ),
    )
}

pub fn classify(ctx: &Context, args: &ClassifyArgs) -> Result<(), CliError> {
    let (ck, ds) = ctx.load_model(&args.output.eval)?;
    let rp = ck.readout.as_ref().ok_or_else(|| {
        CliError::Data("checkpoint has no readout; train it with train-sup".into())
    })?;
    let preds = predict_batch(ds.schema(), &graph_refs(&ds), &ck.params, &ck.config, rp)?;
    if let Some(out) = args.output.out.as_ref().or(ctx.file.out.as_ref()) {
        let mut header = vec!["graph_id".to_string(), "predicted".to_string()];
        header.extend((0..rp.num_classes()).map(|k| format!("p_{k}")));
        write_csv(
            out,
            &header,
            preds.iter().enumerate().map(|(i, p)| {
                let mut row = vec![i.to_string(), p.predicted_class().to_string()];
                row.extend(p.classes.iter().map(|x| fmt(*x)));
                row
            }),
        )?;
    }
    if ds.graphs().iter().any(|g| g.label().is_none()) {
        let conf = preds
            .iter()
            .map(|p| Some(p.classes[p.predicted_class()]))
            .collect();
        return ctx.emit(Metrics::from_per_graph("confidence", conf));
    }
    let correct = ds
        .graphs()
        .iter()
        .zip(&preds)
        .map(|(g, p)| Some(f64::from(u8::from(Some(p.predicted_class()) == g.label()))))
        .collect();
    ctx.emit(Metrics::from_per_graph("accuracy", correct))
}

pub fn baseline(ctx: &Context, args: &BaselineArgs) -> Result<(), CliError> {
    let ds = ctx.load_data(&args.data)?;
    let params: MixtureParams = match args.kind {
        BaselineKind::Gaussian => fit_gaussian(&ds)?,
        BaselineKind::Gmm => {
            let c = args.states.unwrap_or(ctx.file.model.states);
            fit_gmm(&ds, c, args.max_iters, args.tol, ctx.seed())?.params
        }
    };
    if let Some(out) = args.out.as_ref().or(ctx.file.out.as_ref()) {
        let text = serde_json::to_string_pretty(&params).expect("params serialize");
        std::fs::write(out, text).map_err(|e| CliError::io(out, e))?;
    }
    let eval = match args.eval.as_ref().or(ctx.file.eval.as_ref()) {
        Some(p) => {
            let e = Dataset::load(p)?;
            if e.schema() != ds.schema() {
                return Err(CliError::Data(
                    "evaluation dataset schema differs from the training data".into(),
                ));
            }
            e
        }
        None => ds,
    };
    let graphs = graph_refs(&eval);
    if graphs.iter().any(|g| g.num_held_out() > 0) {
        let r = baseline_dataset_missing_nll(&params, &graphs)?;
        ctx.emit(
            Metrics::from_per_graph("missing_nll", r.per_graph)
                .with_mean(r.mean_per_vertex)
                .with_extra("per_entry", r.mean_per_entry),
        )
    } else {
        let per_graph = graphs
            .iter()
            .map(|g| Some(mean_row_log_likelihood(&params, &[*g])))
            .collect();
        ctx.emit(
            Metrics::from_per_graph("row_log_likelihood", per_graph)
                .with_mean(mean_row_log_likelihood(&params, &graphs)),
        )
    }
}

pub fn mask(ctx: &Context, args: &MaskArgs) -> Result<(), CliError> {
    let ds = ctx.load_data(&args.data)?;
    let out = ctx.out_path(args.out.as_ref())?;
    let masked = apply_missing_mask(&ds, args.concentration, args.rate, ctx.seed())?;
    masked.save(&out)?;
    let per_graph = masked
        .graphs()
        .iter()
        .map(|g| {
            let n = g.num_vertices() * g.num_attributes();
            (n > 0).then(|| g.num_masked() as f64 / n as f64)
        })
        .collect();
    let stats = masked.stats();
    ctx.emit(
        Metrics::from_per_graph("masked_fraction", per_graph)
            .with_extra("masked_entries", stats.masked_entries as f64)
            .with_extra("fully_masked_vertices", stats.fully_masked_vertices as f64),
    )
}

pub fn synth(ctx: &Context, args: &SynthArgs) -> Result<(), CliError> {
    let out = ctx.out_path(args.out.as_ref())?;
    let ds = match args.kind {
        SynthKind::Communities => synth_community_graphs(
            args.graphs,
            args.vertices,
            args.communities,
            args.noise,
            ctx.seed(),
        )?,
        SynthKind::Mixture => {
            let k = args.communities.max(1);
            let weights = vec![1.0 / k as f64; k];
            let means: Vec<Vec<f64>> = (0..k)
                .map(|c| vec![2.0 * c as f64; SYNTH_ATTRIBUTES])
                .collect();
            let stds = vec![vec![args.noise; SYNTH_ATTRIBUTES]; k];
            synth_mixture_rows(
                args.graphs,
                args.vertices,
                &weights,
                &means,
                &stds,
                ctx.seed(),
            )?
        }
    };
    ds.save(&out)?;
    let sizes = ds
        .graphs()
        .iter()
        .map(|g| Some(g.num_vertices() as f64))
        .collect();
    ctx.emit(Metrics::from_per_graph("vertices", sizes))
}
