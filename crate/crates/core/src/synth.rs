//! Synthetic graph generators used as test fixtures and in examples.

use rand::Rng;

use crate::error::{GspnError, Result};
use crate::graph::{AttributeKind, AttributeSchema, Dataset, Graph};
use crate::sampling::{seeded, standard_normal};

/// Continuous attributes per vertex produced by [`synth_community_graphs`].
pub const SYNTH_ATTRIBUTES: usize = 3;

/// Probability that a vertex belongs to its graph's dominant community.
const DOMINANT_SHARE: f64 = 0.8;
/// Expected number of neighbors of a vertex in the dominant community.
const INTRA_DEGREE: f64 = 3.0;
/// Inter-community edge probability relative to the intra-community one.
const INTER_RATIO: f64 = 0.02;

/// Graphs with latent communities and structure-dependent attributes.
///
/// Each graph draws a dominant community (its label); every vertex joins it
/// with probability 0.8 and otherwise a uniformly chosen other community.
/// Undirected edges are mostly intra-community. Every attribute of vertex
/// `v` is drawn from `N(m_v, noise^2)`, where `m_v` is the mean community
/// id of the in-neighbors of `v` (its own id when it has none).
pub fn synth_community_graphs(
    num_graphs: usize,
    vertices_per_graph: usize,
    num_communities: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    community_graphs(num_graphs, vertices_per_graph, num_communities, noise, seed).map(|(ds, _)| ds)
}

/// As [`synth_community_graphs`], also returning every vertex's community.
pub fn community_graphs(
    num_graphs: usize,
    vertices_per_graph: usize,
    num_communities: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Vec<Vec<usize>>)> {
    if num_graphs == 0 || vertices_per_graph == 0 || num_communities == 0 {
        return Err(GspnError::InvalidParameter(
            "graph, vertex and community counts must be positive".into(),
        ));
    }
    if !(noise >= 0.0) {
        return Err(GspnError::InvalidParameter(format!(
            "noise must be non-negative, got {noise}"
        )));
    }
    let schema = AttributeSchema::new(vec![AttributeKind::Continuous; SYNTH_ATTRIBUTES])?;
    let mut rng = seeded(seed);
    let n = vertices_per_graph;
    let p_in = if n > 1 {
        (INTRA_DEGREE / (DOMINANT_SHARE * (n as f64 - 1.0))).min(1.0)
    } else {
        0.0
    };
    let p_out = p_in * INTER_RATIO;

    let mut graphs = Vec::with_capacity(num_graphs);
    let mut communities = Vec::with_capacity(num_graphs);
    for _ in 0..num_graphs {
        let dominant = rng.gen_range(0..num_communities);
        let community: Vec<usize> = (0..n)
            .map(|_| {
                if num_communities == 1 || rng.gen::<f64>() < DOMINANT_SHARE {
                    dominant
                } else {
                    let other = rng.gen_range(0..num_communities - 1);
                    if other >= dominant {
                        other + 1
                    } else {
                        other
                    }
                }
            })
            .collect();

        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                let p = if community[u] == community[v] {
                    p_in
                } else {
                    p_out
                };
                if rng.gen::<f64>() < p {
                    edges.push((u, v));
                    edges.push((v, u));
                }
            }
        }

        let mut in_sum = vec![0.0; n];
        let mut in_deg = vec![0usize; n];
        for &(u, v) in &edges {
            in_sum[v] += community[u] as f64;
            in_deg[v] += 1;
        }
        let rows = (0..n)
            .map(|v| {
                let mean = if in_deg[v] > 0 {
                    in_sum[v] / in_deg[v] as f64
                } else {
                    community[v] as f64
                };
                (0..SYNTH_ATTRIBUTES)
                    .map(|_| Some(mean + noise * standard_normal(&mut rng)))
                    .collect()
            })
            .collect();

        let mut counts = vec![0usize; num_communities];
        for &c in &community {
            counts[c] += 1;
        }
        let label = (0..num_communities)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .unwrap();
        graphs.push(Graph::new(n, edges, rows, Some(label))?);
        communities.push(community);
    }
    Ok((
        Dataset::new(schema, graphs, Some(num_communities))?,
        communities,
    ))
}

/// Graphs without edges whose vertex rows are i.i.d. draws from a diagonal
/// Gaussian mixture with the given weights, means and standard deviations.
pub fn synth_mixture_rows(
    num_graphs: usize,
    rows_per_graph: usize,
    weights: &[f64],
    means: &[Vec<f64>],
    stds: &[Vec<f64>],
    seed: u64,
) -> Result<Dataset> {
    if weights.is_empty() || weights.len() != means.len() || means.len() != stds.len() {
        return Err(GspnError::InvalidParameter(
            "mixture weights, means and stds must have equal, non-zero length".into(),
        ));
    }
    let d = means[0].len();
    let schema = AttributeSchema::new(vec![AttributeKind::Continuous; d])?;
    let total: f64 = weights.iter().sum();
    let mut rng = seeded(seed);
    let mut graphs = Vec::with_capacity(num_graphs);
    for _ in 0..num_graphs {
        let rows = (0..rows_per_graph)
            .map(|_| {
                let mut u = rng.gen::<f64>() * total;
                let mut k = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        k = i;
                        break;
                    }
                    u -= w;
                }
                (0..d)
                    .map(|a| Some(means[k][a] + stds[k][a] * standard_normal(&mut rng)))
                    .collect()
            })
            .collect();
        graphs.push(Graph::new(rows_per_graph, vec![], rows, None)?);
    }
    Dataset::new(schema, graphs, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_single_community_is_constant() {
        let ds = synth_community_graphs(3, 8, 1, 0.0, 11).unwrap();
        for g in ds.graphs() {
            for v in 0..g.num_vertices() {
                assert!(g.row(v).iter().all(|x| *x == Some(0.0)));
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = synth_community_graphs(5, 12, 3, 0.2, 4).unwrap();
        let b = synth_community_graphs(5, 12, 3, 0.2, 4).unwrap();
        assert_eq!(a.to_json_string(), b.to_json_string());
    }

    #[test]
    fn community_means_differ_by_about_one() {
        let (ds, communities) = community_graphs(200, 20, 2, 0.1, 5).unwrap();
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for (g, comm) in ds.graphs().iter().zip(&communities) {
            for v in 0..g.num_vertices() {
                for a in 0..SYNTH_ATTRIBUTES {
                    sums[comm[v]] += g.value(v, a).unwrap();
                    counts[comm[v]] += 1;
                }
            }
        }
        let diff = sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64;
        assert!((diff - 1.0).abs() < 0.1, "difference {diff}");
    }

    #[test]
    fn label_is_majority_community() {
        let (ds, communities) = community_graphs(50, 15, 3, 0.1, 9).unwrap();
        for (g, comm) in ds.graphs().iter().zip(&communities) {
            let y = g.label().unwrap();
            let count = |c: usize| comm.iter().filter(|&&k| k == c).count();
            assert!((0..3).all(|c| count(c) <= count(y)));
        }
    }

    #[test]
    fn mixture_rows_have_no_edges() {
        let ds = synth_mixture_rows(
            2,
            5,
            &[0.5, 0.5],
            &[vec![0.0], vec![5.0]],
            &[vec![1.0], vec![1.0]],
            0,
        )
        .unwrap();
        assert!(ds.graphs().iter().all(|g| g.num_edges() == 0));
    }
}
