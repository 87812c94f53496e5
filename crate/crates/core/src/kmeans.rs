//! k-means on partially observed rows, used to initialize Gaussian emissions.
//!
//! Distances use observed coordinates only, rescaled by the fraction of
//! coordinates present; centroids average the observed values assigned to
//! them. Seeding is k-means++.

use rand::Rng;

use crate::sampling::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    /// Cluster of every input row; `None` for rows with nothing observed.
    pub assignment: Vec<Option<usize>>,
}

fn partial_sq_dist(row: &[Option<f64>], center: &[f64]) -> Option<f64> {
    let mut s = 0.0;
    let mut n = 0usize;
    for (x, c) in row.iter().zip(center) {
        if let Some(x) = x {
            s += (x - c) * (x - c);
            n += 1;
        }
    }
    (n > 0).then(|| s * row.len() as f64 / n as f64)
}

/// Clusters `rows` into `k` groups. Coordinates of a center with no observed
/// value among its rows fall back to the global observed mean.
pub fn kmeans(
    rows: &[Vec<Option<f64>>],
    k: usize,
    max_iters: usize,
    rng: &mut SeededRng,
) -> KMeans {
    assert!(k >= 1, "k-means needs k >= 1");
    let dim = rows.first().map_or(0, Vec::len);
    let mut global = vec![0.0; dim];
    let mut counts = vec![0usize; dim];
    for r in rows {
        for (j, x) in r.iter().enumerate() {
            if let Some(x) = x {
                global[j] += x;
                counts[j] += 1;
            }
        }
    }
    for (g, c) in global.iter_mut().zip(&counts) {
        *g = if *c > 0 { *g / *c as f64 } else { 0.0 };
    }
    let fill = |r: &[Option<f64>]| -> Vec<f64> {
        r.iter()
            .zip(&global)
            .map(|(x, g)| x.unwrap_or(*g))
            .collect()
    };

    let usable: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].iter().any(Option::is_some))
        .collect();
    if usable.is_empty() {
        return KMeans {
            centers: vec![global.clone(); k],
            assignment: vec![None; rows.len()],
        };
    }

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(fill(&rows[usable[rng.gen_range(0..usable.len())]]));
    let mut best = vec![f64::INFINITY; usable.len()];
    while centers.len() < k {
        let last = centers.last().unwrap();
        for (b, &i) in best.iter_mut().zip(&usable) {
            let d = partial_sq_dist(&rows[i], last).unwrap_or(0.0);
            *b = b.min(d);
        }
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = usable.len() - 1;
            for (j, b) in best.iter().enumerate() {
                if u < *b {
                    chosen = j;
                    break;
                }
                u -= b;
            }
            chosen
        } else {
            rng.gen_range(0..usable.len())
        };
        centers.push(fill(&rows[usable[pick]]));
    }

    let mut assignment: Vec<Option<usize>> = vec![None; rows.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for &i in &usable {
            let c = (0..k)
                .min_by(|&a, &b| {
                    let da = partial_sq_dist(&rows[i], &centers[a]).unwrap();
                    let db = partial_sq_dist(&rows[i], &centers[b]).unwrap();
                    da.total_cmp(&db)
                })
                .unwrap();
            if assignment[i] != Some(c) {
                assignment[i] = Some(c);
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut n = vec![vec![0usize; dim]; k];
        for &i in &usable {
            let c = assignment[i].unwrap();
            for (j, x) in rows[i].iter().enumerate() {
                if let Some(x) = x {
                    sums[c][j] += x;
                    n[c][j] += 1;
                }
            }
        }
        for c in 0..k {
            for j in 0..dim {
                if n[c][j] > 0 {
                    centers[c][j] = sums[c][j] / n[c][j] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    KMeans {
        centers,
        assignment,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::seeded;

    #[test]
    fn separates_two_blobs() {
        let mut rows = Vec::new();
        for i in 0..50 {
            let e = (i as f64) * 0.001;
            rows.push(vec![Some(-5.0 + e), Some(1.0)]);
            rows.push(vec![Some(5.0 - e), None]);
        }
        let km = kmeans(&rows, 2, 50, &mut seeded(1));
        let mut xs: Vec<f64> = km.centers.iter().map(|c| c[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert!(
            (xs[0] + 4.97).abs() < 0.05 && (xs[1] - 4.97).abs() < 0.05,
            "{xs:?}"
        );
        assert!(km.assignment.iter().all(Option::is_some));
    }

    #[test]
    fn single_cluster_is_observed_mean() {
        let rows = vec![vec![Some(1.0)], vec![Some(3.0)], vec![None]];
        let km = kmeans(&rows, 1, 10, &mut seeded(0));
        assert_eq!(km.centers, vec![vec![2.0]]);
        assert_eq!(km.assignment[2], None);
    }

    #[test]
    fn more_clusters_than_points() {
        let rows = vec![vec![Some(1.0)]];
        let km = kmeans(&rows, 3, 10, &mut seeded(0));
        assert_eq!(km.centers.len(), 3);
    }
}
