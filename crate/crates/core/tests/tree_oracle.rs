//! The batched forward pass against a brute-force evaluation of each
//! vertex's unfolded computational tree.

mod common;

use common::{random_graph, random_schema};
use gspn::model::{forward_pass, random_params, GspnConfig, GspnParams};
use gspn::sampling::seeded;
use gspn::spn::{AttributeEmission, EmissionParams};
use gspn::Graph;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

/// Observed-entry likelihood of one state, written out by hand.
fn state_likelihood(em: &EmissionParams, g: &Graph, v: usize, state: usize) -> f64 {
    let mut p = 1.0;
    for (a, att) in em.attributes.iter().enumerate() {
        let Some(x) = g.observed_value(v, a) else {
            continue;
        };
        p *= match att {
            AttributeEmission::Categorical { probs } => probs[state][x as usize],
            AttributeEmission::Gaussian { mu, sigma } => {
                let (m, s) = (mu[state], sigma[state]);
                (-(x - m) * (x - m) / (2.0 * s * s)).exp()
                    / (s * (2.0 * std::f64::consts::PI).sqrt())
            }
        };
    }
    p
}

/// Top emission with the shortcut combination written out directly.
fn oracle_top(params: &GspnParams, cfg: &GspnConfig) -> EmissionParams {
    let l = cfg.layers;
    if !cfg.shortcut {
        return params.emissions[l].clone();
    }
    let inputs = &params.emissions[1..l];
    let k = inputs.len() as f64;
    let mut out = inputs[0].clone();
    for (a, att) in out.attributes.iter_mut().enumerate() {
        match att {
            AttributeEmission::Categorical { probs } => {
                for (s, row) in probs.iter_mut().enumerate() {
                    for (j, p) in row.iter_mut().enumerate() {
                        *p = inputs
                            .iter()
                            .map(|e| match &e.attributes[a] {
                                AttributeEmission::Categorical { probs } => probs[s][j],
                                _ => unreachable!(),
                            })
                            .sum::<f64>()
                            / k;
                    }
                }
            }
            AttributeEmission::Gaussian { mu, sigma } => {
                for s in 0..mu.len() {
                    let (mut m, mut var) = (0.0, 0.0);
                    for e in inputs {
                        let AttributeEmission::Gaussian { mu, sigma } = &e.attributes[a] else {
                            unreachable!()
                        };
                        m += mu[s];
                        var += sigma[s] * sigma[s];
                    }
                    mu[s] = m / k;
                    sigma[s] = (var / (k * k)).sqrt();
                }
            }
        }
    }
    out
}

struct Oracle<'a> {
    g: &'a Graph,
    params: &'a GspnParams,
    top: EmissionParams,
    layers: usize,
}

impl Oracle<'_> {
    fn emission(&self, l: usize) -> &EmissionParams {
        if l == self.layers {
            &self.top
        } else {
            &self.params.emissions[l]
        }
    }

    /// Prior of the node for `v` at height `l` of any tree it appears in.
    /// Recomputes every subtree from scratch.
    fn prior(&self, v: usize, l: usize) -> Vec<f64> {
        let c = self.params.num_states();
        let children: Vec<usize> = self
            .g
            .edges()
            .iter()
            .filter(|e| e.1 == v)
            .map(|e| e.0)
            .collect();
        if l == 0 || children.is_empty() {
            return self.params.leaf_prior.clone();
        }
        let mut mean = vec![0.0; c];
        for &u in &children {
            for (m, x) in mean.iter_mut().zip(self.posterior(u, l - 1)) {
                *m += x / children.len() as f64;
            }
        }
        let theta = &self.params.transitions[l - 1];
        (0..c)
            .map(|j| (0..c).map(|i| mean[i] * theta[i][j]).sum())
            .collect()
    }

    fn joint(&self, v: usize, l: usize) -> Vec<f64> {
        let em = self.emission(l);
        self.prior(v, l)
            .iter()
            .enumerate()
            .map(|(s, p)| p * state_likelihood(em, self.g, v, s))
            .collect()
    }

    fn posterior(&self, v: usize, l: usize) -> Vec<f64> {
        let j = self.joint(v, l);
        let z: f64 = j.iter().sum();
        j.iter().map(|x| x / z).collect()
    }

    fn vertex_ll(&self, v: usize) -> f64 {
        if (0..self.g.num_attributes()).all(|a| !self.g.is_observed(v, a)) {
            return 0.0;
        }
        self.joint(v, self.layers).iter().sum::<f64>().ln()
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn forward_pass_matches_unfolded_trees(seed in any::<u64>(), layers in 1usize..=3, states in 1usize..=4, n in 1usize..=6, shortcut in any::<bool>()) {
        let mut rng = seeded(seed);
        let schema = random_schema(&mut rng);
        let cfg = GspnConfig { layers, states, shortcut: shortcut && layers >= 2, ..Default::default() };
        let g = random_graph(&schema, n, 0.4, 0.35, &mut rng);
        let params = random_params(&schema, &cfg, &mut rng);
        let post = forward_pass(&schema, &g, &params, &cfg).unwrap();
        let oracle = Oracle { g: &g, params: &params, top: oracle_top(&params, &cfg), layers };
        for v in 0..n {
            for l in 0..=layers {
                for (x, y) in post.priors[l][v].iter().zip(oracle.prior(v, l)) {
                    prop_assert!(close(*x, y, 1e-12), "prior l={} v={}: {} vs {}", l, v, x, y);
                }
                for (x, y) in post.h[l][v].iter().zip(oracle.posterior(v, l)) {
                    prop_assert!(close(*x, y, 1e-12), "h l={} v={}: {} vs {}", l, v, x, y);
                }
            }
            prop_assert!(close(post.vertex_ll[v], oracle.vertex_ll(v), 1e-10));
        }
    }
}

#[test]
fn single_vertex_reduces_to_the_leaf_mixture() {
    // no in-edges: every height uses the leaf prior
    let mut rng = seeded(4);
    let schema = random_schema(&mut rng);
    let cfg = GspnConfig {
        layers: 2,
        states: 3,
        ..Default::default()
    };
    let g = random_graph(&schema, 1, 0.0, 0.0, &mut rng);
    let params = random_params(&schema, &cfg, &mut rng);
    let post = forward_pass(&schema, &g, &params, &cfg).unwrap();
    let expected: f64 = (0..3)
        .map(|s| params.leaf_prior[s] * state_likelihood(&params.emissions[2], &g, 0, s))
        .sum::<f64>()
        .ln();
    assert!(close(post.vertex_ll[0], expected, 1e-12));
}
