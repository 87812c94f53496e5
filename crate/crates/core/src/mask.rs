//! Gamma-distributed attribute masking for missing-data experiments.

use rand::seq::SliceRandom;

use crate::error::{GspnError, Result};
use crate::graph::Dataset;
use crate::sampling::{gamma, seeded};

/// Number of attributes to hide for a sampled proportion `p` out of `d`.
pub fn masked_count(p: f64, d: usize) -> usize {
    (p.clamp(0.0, 1.0) * d as f64).floor() as usize
}

/// Hides attributes vertex by vertex: draws `p ~ Gamma(concentration, rate)`,
/// clamps it to `[0, 1]` and masks `floor(p * d)` attributes chosen uniformly.
///
/// Values are kept, so the hidden entries remain available as ground truth.
/// Vertices are visited in graph order, then vertex order.
pub fn apply_missing_mask(
    ds: &Dataset,
    concentration: f64,
    rate: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(concentration > 0.0 && rate > 0.0) {
        return Err(GspnError::InvalidParameter(format!(
            "gamma concentration and rate must be positive, got {concentration} and {rate}"
        )));
    }
    let d = ds.schema().len();
    let mut rng = seeded(seed);
    let mut attrs: Vec<usize> = (0..d).collect();
    let mut graphs = Vec::with_capacity(ds.len());
    for g in ds.graphs() {
        let mut observed = Vec::with_capacity(g.num_vertices() * d);
        for v in 0..g.num_vertices() {
            let p = gamma(&mut rng, concentration, rate);
            let k = masked_count(p, d);
            let mut row: Vec<bool> = g.mask_row(v).to_vec();
            attrs.sort_unstable();
            let (hidden, _) = attrs.partial_shuffle(&mut rng, k);
            for &a in hidden.iter() {
                row[a] = false;
            }
            observed.extend(row);
        }
        graphs.push(g.remasked(observed));
    }
    ds.with_graphs(graphs)
}
