mod common;

use common::{random_graph, random_schema};
use gspn::autodiff::{finite_diff_check, grad, BoundParams, ParamStore, Tape, Var};
use gspn::model::{build_forward, random_params, GraphBatch, GspnConfig, ModelVars};
use gspn::readout::{class_probs, random_readout, Pooling};
use gspn::sampling::seeded;
use gspn::spn::build_naive_bayes;
use gspn::{AttributeKind, AttributeSchema};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::Rng;

/// Largest absolute gap between analytic and central-difference gradients
/// and the largest relative gap over coordinates with |g| >= 1e-5.
fn gaps<F>(objective: F, store: &ParamStore) -> (f64, f64)
where
    F: Fn(&mut Tape, &BoundParams) -> gspn::Result<Var>,
{
    let eps = 1e-5;
    let (_, analytic) = grad(&objective, store).unwrap();
    let eval = |ps: &ParamStore| {
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape);
        let root = objective(&mut tape, &bound).unwrap();
        tape.value(root).item()
    };
    let (mut abs, mut rel) = (0.0f64, 0.0f64);
    let mut probe = store.clone();
    for (name, param) in store.iter() {
        for i in 0..param.raw.len() {
            let orig = param.raw.data()[i];
            probe.get_mut(name).unwrap().raw.data_mut()[i] = orig + eps;
            let up = eval(&probe);
            probe.get_mut(name).unwrap().raw.data_mut()[i] = orig - eps;
            let down = eval(&probe);
            probe.get_mut(name).unwrap().raw.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let exact = analytic[name].data()[i];
            abs = abs.max((exact - numeric).abs());
            if exact.abs() >= 1e-5 {
                rel = rel.max((exact - numeric).abs() / exact.abs());
            }
        }
    }
    (abs, rel)
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn pseudo_likelihood_gradients(seed in any::<u64>(), layers in 1usize..=3, states in 2usize..=3, shortcut in any::<bool>()) {
        let mut rng = seeded(seed);
        let schema = random_schema(&mut rng);
        let cfg = GspnConfig { layers, states, shortcut: shortcut && layers >= 2, ..Default::default() };
        let n = rng.gen_range(2..=6);
        let g = random_graph(&schema, n, 0.35, 0.3, &mut rng);
        let store = random_params(&schema, &cfg, &mut rng).to_store().unwrap();
        let (abs, rel) = gaps(
            |tape: &mut Tape, bound: &BoundParams| {
                let vars = ModelVars::from_bound(bound, &schema, layers);
                let fwd = build_forward(tape, &GraphBatch::new(&schema, &[&g]), &vars, &cfg)?;
                Ok(tape.sum(fwd.vertex_ll))
            },
            &store,
        );
        prop_assert!(abs < 1e-8, "abs {}", abs);
        prop_assert!(rel < 1e-4, "rel {}", rel);
    }
}

#[test]
fn five_vertex_graph_meets_the_plain_check() {
    let mut rng = seeded(5);
    let schema = AttributeSchema::new(vec![
        AttributeKind::Continuous,
        AttributeKind::Categorical { arity: 3 },
        AttributeKind::Continuous,
    ])
    .unwrap();
    let cfg = GspnConfig {
        layers: 2,
        states: 3,
        ..Default::default()
    };
    let g = random_graph(&schema, 5, 0.4, 0.2, &mut rng);
    let store = random_params(&schema, &cfg, &mut rng).to_store().unwrap();
    let objective = |tape: &mut Tape, bound: &BoundParams| {
        let vars = ModelVars::from_bound(bound, &schema, 2);
        let fwd = build_forward(tape, &GraphBatch::new(&schema, &[&g]), &vars, &cfg)?;
        Ok(tape.sum(fwd.vertex_ll))
    };
    let (abs, rel) = gaps(objective, &store);
    assert!(abs < 1e-8 && rel < 1e-4, "abs {abs}, rel {rel}");
    let report = finite_diff_check(objective, &store, 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn readout_gradients() {
    for pooling in [Pooling::Mean, Pooling::Sum] {
        let mut rng = seeded(9);
        let schema = random_schema(&mut rng);
        let cfg = GspnConfig {
            layers: 2,
            states: 3,
            ..Default::default()
        };
        let g = random_graph(&schema, 5, 0.4, 0.2, &mut rng);
        let mut store = random_params(&schema, &cfg, &mut rng).to_store().unwrap();
        let rp = random_readout(pooling, 3, 2, 4, 3, &mut rng);
        for (name, p) in rp.to_store().unwrap().iter() {
            store.insert(name.clone(), p.raw.clone(), p.constraint);
        }
        let (abs, rel) = gaps(
            |tape: &mut Tape, bound: &BoundParams| {
                let vars = ModelVars::from_bound(bound, &schema, 2);
                let fwd = build_forward(tape, &GraphBatch::new(&schema, &[&g]), &vars, &cfg)?;
                let y = class_probs(tape, &fwd, &[g.num_vertices()], bound, pooling)?;
                let p = tape.element(y, 0, 1);
                Ok(tape.log(p))
            },
            &store,
        );
        assert!(
            abs < 1e-8 && rel < 1e-4,
            "{pooling:?}: abs {abs}, rel {rel}"
        );
    }
}

#[test]
fn circuit_gradients() {
    let mut rng = seeded(3);
    let schema = random_schema(&mut rng);
    let cfg = GspnConfig {
        layers: 1,
        states: 3,
        ..Default::default()
    };
    let g = random_graph(&schema, 6, 0.0, 0.3, &mut rng);
    let store = random_params(&schema, &cfg, &mut rng).to_store().unwrap();
    let (abs, rel) = gaps(
        |tape: &mut Tape, bound: &BoundParams| {
            let vars = ModelVars::from_bound(bound, &schema, 1);
            let circuit = build_naive_bayes(&schema, 3)?;
            let mut total = tape.constant(0.0);
            for v in 0..g.num_vertices() {
                let row: Vec<Option<f64>> =
                    (0..schema.len()).map(|a| g.observed_value(v, a)).collect();
                let ll =
                    circuit.log_likelihood_on(tape, &vars.emissions[0], vars.leaf_prior, &row)?;
                total = tape.add(total, ll)?;
            }
            Ok(total)
        },
        &store,
    );
    assert!(abs < 1e-8 && rel < 1e-5, "abs {abs}, rel {rel}");
}
