mod common;

use common::{assert_simplex, random_graph, random_schema, random_value};
use gspn::model::{
    forward_pass, pseudo_log_likelihood, random_params, vertex_embeddings, GspnConfig,
};
use gspn::queries::{impute, missing_nll, perturbation_query};
use gspn::readout::{graph_predict, random_readout, readout_prior, Pooling};
use gspn::sampling::seeded;
use gspn::spn::AttributeEmission;
use gspn::Graph;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::seq::SliceRandom;
use rand::Rng;

/// Keeps only the forward edges `u < v` of `g`.
fn acyclic(g: &Graph) -> Graph {
    let edges = g.edges().iter().copied().filter(|(u, v)| u < v).collect();
    g.with_edge_order(edges).unwrap()
}

fn config(layers: usize, states: usize) -> GspnConfig {
    GspnConfig {
        layers,
        states,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn priors_posteriors_and_readouts_are_distributions(seed in any::<u64>(), layers in 1usize..=3, states in 1usize..=5, n in 1usize..=10) {
        let mut rng = seeded(seed);
        let schema = random_schema(&mut rng);
        let cfg = config(layers, states);
        let g = random_graph(&schema, n, 0.3, 0.4, &mut rng);
        let params = random_params(&schema, &cfg, &mut rng);
        let post = forward_pass(&schema, &g, &params, &cfg).unwrap();
        for l in 0..=layers {
            for v in 0..n {
                assert_simplex(&post.priors[l][v], 1e-12);
                assert_simplex(&post.h[l][v], 1e-12);
            }
        }
        for pooling in [Pooling::Mean, Pooling::Sum] {
            let rp = random_readout(pooling, states, layers, 3, 2, &mut rng);
            assert_simplex(&readout_prior(&post, &rp).unwrap(), 1e-12);
            assert_simplex(&graph_predict(&schema, &g, &params, &cfg, &rp).unwrap(), 1e-12);
        }
    }

    #[test]
    fn summing_out_a_categorical_entry_marginalizes_it(seed in any::<u64>(), layers in 1usize..=3, n in 1usize..=6) {
        let mut rng = seeded(seed);
        let schema = random_schema(&mut rng);
        let cfg = config(layers, 3);
        let g = acyclic(&random_graph(&schema, n, 0.4, 0.3, &mut rng));
        let params = random_params(&schema, &cfg, &mut rng);
        let (a, arity) = schema.categorical()[0];
        let v = rng.gen_range(0..n);
        let mut obs: Vec<bool> = (0..n).flat_map(|u| g.mask_row(u).to_vec()).collect();
        obs[v * schema.len() + a] = false;
        let hidden = g.remasked(obs);
        let marginal = pseudo_log_likelihood(&schema, &hidden, &params, &cfg).unwrap().per_vertex[v];
        let summed: f64 = (0..arity)
            .map(|k| {
                let filled = hidden.with_value(v, a, k as f64);
                pseudo_log_likelihood(&schema, &filled, &params, &cfg).unwrap().per_vertex[v].exp()
            })
            .sum();
        prop_assert!((summed.ln() - marginal).abs() <= 1e-9 * marginal.abs().max(1.0));
    }

    #[test]
    fn edits_do_not_reach_past_l_hops(seed in any::<u64>(), layers in 1usize..=3, n in 4usize..=14) {
        let mut rng = seeded(seed);
        let schema = random_schema(&mut rng);
        let cfg = config(layers, 3);
        let g = random_graph(&schema, n, 2.0 / n as f64, 0.3, &mut rng);
        let params = random_params(&schema, &cfg, &mut rng);
        let v = rng.gen_range(0..n);
        let a = rng.gen_range(0..schema.len());
        let value = random_value(schema.kind(a), &mut rng);
        let p = perturbation_query(&schema, &g, &params, &cfg, v, a, value).unwrap();
        // hop distances by breadth-first search along edge direction
        let mut dist = vec![None; n];
        dist[v] = Some(0);
        let mut frontier = vec![v];
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for &x in &frontier {
                for &(s, t) in g.edges() {
                    if s == x && dist[t].is_none() {
                        dist[t] = Some(d);
                        next.push(t);
                    }
                }
            }
            frontier = next;
        }
        prop_assert_eq!(&p.hop_distance, &dist);
        for u in 0..n {
            if dist[u].is_none_or(|h| h > layers) {
                prop_assert_eq!(p.delta[u], 0.0);
            }
        }
    }

    #[test]
    fn relabeling_is_invisible(seed in any::<u64>(), layers in 1usize..=3, n in 2usize..=10) {
        let mut rng = seeded(seed);
        let schema = random_schema(&mut rng);
        let cfg = config(layers, 3);
        let g = random_graph(&schema, n, 0.3, 0.3, &mut rng);
        let params = random_params(&schema, &cfg, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let r = g.relabeled(&perm).unwrap();
        let mut edges = r.edges().to_vec();
        edges.shuffle(&mut rng);
        let r = r.with_edge_order(edges).unwrap();
        let a = forward_pass(&schema, &g, &params, &cfg).unwrap();
        let b = forward_pass(&schema, &r, &params, &cfg).unwrap();
        let ea = vertex_embeddings(&schema, &g, &params, &cfg).unwrap();
        let eb = vertex_embeddings(&schema, &r, &params, &cfg).unwrap();
        for v in 0..n {
            prop_assert_eq!(a.vertex_ll[v], b.vertex_ll[perm[v]]);
            prop_assert_eq!(&ea[v], &eb[perm[v]]);
        }
    }
}

#[test]
fn all_masked_graphs_have_zero_pll() {
    let mut rng = seeded(8);
    for _ in 0..20 {
        let schema = random_schema(&mut rng);
        let cfg = config(2, 3);
        let g = random_graph(&schema, 6, 0.4, 1.0, &mut rng);
        let params = random_params(&schema, &cfg, &mut rng);
        assert_eq!(
            pseudo_log_likelihood(&schema, &g, &params, &cfg)
                .unwrap()
                .total,
            0.0
        );
    }
}

#[test]
fn missing_nll_is_a_likelihood_ratio_on_dags() {
    // -log p(x_a | rest) = PLL(revealed) - PLL(hidden) when v is not in its own tree
    let mut rng = seeded(12);
    for _ in 0..30 {
        let schema = random_schema(&mut rng);
        let cfg = config(2, 3);
        let full = acyclic(&random_graph(&schema, 5, 0.4, 0.0, &mut rng));
        let params = random_params(&schema, &cfg, &mut rng);
        let v = rng.gen_range(0..5);
        let a = rng.gen_range(0..schema.len());
        let mut obs = vec![true; 5 * schema.len()];
        obs[v * schema.len() + a] = false;
        let hidden = full.remasked(obs);
        let nll = missing_nll(&schema, &hidden, &params, &cfg).unwrap();
        assert_eq!(nll.per_vertex.len(), 1);
        let with = pseudo_log_likelihood(&schema, &full, &params, &cfg)
            .unwrap()
            .per_vertex[v];
        let without = pseudo_log_likelihood(&schema, &hidden, &params, &cfg)
            .unwrap()
            .per_vertex[v];
        assert!((nll.per_vertex[0].nll - (without - with)).abs() < 1e-9);
    }
}

#[test]
fn imputation_is_the_posterior_mean() {
    let mut rng = seeded(21);
    for _ in 0..20 {
        let schema = random_schema(&mut rng);
        let cfg = config(2, 3);
        let g = random_graph(&schema, 6, 0.3, 0.4, &mut rng);
        let params = random_params(&schema, &cfg, &mut rng);
        let post = forward_pass(&schema, &g, &params, &cfg).unwrap();
        let filled = impute(&schema, &g, &params, &cfg).unwrap();
        for v in 0..6 {
            for a in 0..schema.len() {
                if g.is_observed(v, a) {
                    assert_eq!(Some(filled[v][a]), g.value(v, a));
                    continue;
                }
                let h = &post.h[2][v];
                match &params.emissions[2].attributes[a] {
                    AttributeEmission::Gaussian { mu, .. } => {
                        let m: f64 = h.iter().zip(mu).map(|(p, m)| p * m).sum();
                        assert!((filled[v][a] - m).abs() < 1e-12);
                    }
                    AttributeEmission::Categorical { probs } => {
                        let pk: Vec<f64> = (0..probs[0].len())
                            .map(|k| h.iter().zip(probs).map(|(p, row)| p * row[k]).sum())
                            .collect();
                        let best = pk.iter().cloned().fold(f64::MIN, f64::max);
                        assert_eq!(pk[filled[v][a] as usize], best);
                    }
                }
            }
        }
    }
}
