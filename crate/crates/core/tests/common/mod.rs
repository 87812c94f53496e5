#![allow(dead_code)]

use gspn::sampling::SeededRng;
use gspn::{AttributeKind, AttributeSchema, Graph};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn random_schema(rng: &mut SeededRng) -> AttributeSchema {
    let mut kinds = vec![
        AttributeKind::Continuous,
        AttributeKind::Categorical {
            arity: rng.gen_range(2..=4),
        },
    ];
    for _ in 0..rng.gen_range(0..=2) {
        kinds.push(if rng.gen_bool(0.5) {
            AttributeKind::Continuous
        } else {
            AttributeKind::Categorical {
                arity: rng.gen_range(2..=4),
            }
        });
    }
    kinds.shuffle(rng);
    AttributeSchema::new(kinds).unwrap()
}

pub fn random_value(kind: AttributeKind, rng: &mut SeededRng) -> f64 {
    match kind {
        AttributeKind::Continuous => rng.gen_range(-2.0..2.0),
        AttributeKind::Categorical { arity } => rng.gen_range(0..arity) as f64,
    }
}

/// Directed graph on `n` vertices, cycles allowed, each entry hidden with
/// probability `p_mask`.
pub fn random_graph(
    schema: &AttributeSchema,
    n: usize,
    p_edge: f64,
    p_mask: f64,
    rng: &mut SeededRng,
) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen_bool(p_edge) {
                edges.push((u, v));
            }
        }
    }
    let rows: Vec<Vec<Option<f64>>> = (0..n)
        .map(|_| {
            schema
                .kinds()
                .iter()
                .map(|k| Some(random_value(*k, rng)))
                .collect()
        })
        .collect();
    let mask = (0..n)
        .map(|_| (0..schema.len()).map(|_| !rng.gen_bool(p_mask)).collect())
        .collect();
    Graph::with_mask(n, edges, rows, mask, None).unwrap()
}

pub fn assert_simplex(p: &[f64], tol: f64) {
    assert!(p.iter().all(|x| *x >= -tol), "negative entry in {p:?}");
    let s: f64 = p.iter().sum();
    assert!((s - 1.0).abs() <= tol, "sums to {s}: {p:?}");
}
