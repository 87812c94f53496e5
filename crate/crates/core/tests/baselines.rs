mod common;

use common::random_graph;
use gspn::baselines::{
    baseline_dataset_missing_nll, fit_gaussian, fit_gmm, mean_row_log_likelihood,
};
use gspn::mask::apply_missing_mask;
use gspn::model::pseudo_log_likelihood;
use gspn::queries::dataset_missing_nll;
use gspn::sampling::seeded;
use gspn::synth::synth_mixture_rows;
use gspn::{AttributeKind, AttributeSchema, Dataset, Graph};

fn mixed_dataset() -> Dataset {
    let schema = AttributeSchema::new(vec![
        AttributeKind::Continuous,
        AttributeKind::Categorical { arity: 3 },
        AttributeKind::Continuous,
    ])
    .unwrap();
    let mut rng = seeded(77);
    let graphs = (0..30)
        .map(|_| random_graph(&schema, 8, 0.2, 0.2, &mut rng))
        .collect();
    Dataset::new(schema, graphs, None).unwrap()
}

#[test]
fn copied_parameters_reproduce_the_mixture_on_any_graph() {
    for ds in [mixed_dataset(), {
        let weights = [0.5, 0.5];
        let means = vec![vec![-1.0, 1.0], vec![2.0, 0.0]];
        let stds = vec![vec![0.5, 1.0], vec![1.0, 0.3]];
        let rows = synth_mixture_rows(10, 20, &weights, &means, &stds, 1).unwrap();
        apply_missing_mask(&rows, 1.5, 0.5, 2).unwrap()
    }] {
        let fit = fit_gmm(&ds, 3, 200, 1e-10, 5).unwrap();
        for layers in [1, 3] {
            let (cfg, params) = fit.params.to_gspn(layers);
            for g in ds.graphs() {
                let pll = pseudo_log_likelihood(ds.schema(), g, &params, &cfg).unwrap();
                for v in 0..g.num_vertices() {
                    let row: Vec<Option<f64>> = (0..g.num_attributes())
                        .map(|a| g.observed_value(v, a))
                        .collect();
                    assert!(
                        (pll.per_vertex[v] - fit.params.row_log_likelihood(&row)).abs() < 1e-10
                    );
                }
            }
            let refs: Vec<&Graph> = ds.graphs().iter().collect();
            if refs.iter().any(|g| g.num_held_out() > 0) {
                let a = dataset_missing_nll(ds.schema(), &refs, &params, &cfg).unwrap();
                let b = baseline_dataset_missing_nll(&fit.params, &refs).unwrap();
                assert!((a.mean_per_vertex - b.mean_per_vertex).abs() < 1e-10);
                assert!((a.mean_per_entry - b.mean_per_entry).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn em_never_decreases_and_beats_one_gaussian() {
    let weights = [0.3, 0.7];
    let means = vec![vec![-3.0, 0.0], vec![3.0, 1.0]];
    let stds = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
    let ds = synth_mixture_rows(20, 50, &weights, &means, &stds, 9).unwrap();
    let fit = fit_gmm(&ds, 2, 300, 1e-10, 0).unwrap();
    for w in fit.log_likelihoods.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{} then {}", w[0], w[1]);
    }
    let refs: Vec<&Graph> = ds.graphs().iter().collect();
    let single = fit_gaussian(&ds).unwrap();
    assert!(
        mean_row_log_likelihood(&fit.params, &refs) > mean_row_log_likelihood(&single, &refs) + 0.5
    );
}

#[test]
fn gaussian_fit_by_hand() {
    // column 0: 1, 2, 3, 6 -> mean 3, ML variance 3.5
    let schema = AttributeSchema::new(vec![AttributeKind::Continuous]).unwrap();
    let rows = [1.0, 2.0, 3.0, 6.0]
        .iter()
        .map(|x| vec![Some(*x)])
        .collect();
    let g = Graph::new(4, vec![], rows, None).unwrap();
    let ds = Dataset::new(schema, vec![g], None).unwrap();
    let fit = fit_gaussian(&ds).unwrap();
    let row = [Some(3.0)];
    let expected = -0.5 * (2.0 * std::f64::consts::PI * 3.5).ln();
    assert!((fit.row_log_likelihood(&row) - expected).abs() < 1e-12);
}
