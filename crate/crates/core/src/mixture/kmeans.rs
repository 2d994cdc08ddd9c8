use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const KMEANS_MAX_ITER: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: the first center uniformly, each next one with
/// probability proportional to squared distance from the chosen set.
fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            // Rounding can land on an exhausted index.
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // Every remaining point duplicates a center: take any unused index.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(sq_dist(p, &points[next]));
        }
        d2[next] = 0.0;
    }
    chosen
}

/// Hard k-means assignments: k-means++ seeding then Lloyd iterations until
/// the assignment stops changing or 100 iterations. Deterministic in `seed`.
pub fn kmeans_init(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k-means needs 1 <= K <= N, got K={k}, N={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = plus_plus(points, k, &mut rng);
    let mut centers: Vec<Vec<f64>> = seeds.iter().map(|&i| points[i].clone()).collect();
    let mut assign: Vec<usize> = vec![usize::MAX; n];
    for (c, &i) in seeds.iter().enumerate() {
        assign[i] = c;
    }
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            // A seed point stays with its own center on ties.
            let (c, d) = nearest(p, &centers);
            let keep = assign[i] < k && sq_dist(p, &centers[assign[i]]) <= d;
            if !keep && assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            // An emptied cluster keeps its previous center.
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(assign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn separated_clouds_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let points: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let c = if i < 100 { 0.0 } else { 10.0 };
                vec![c + noise.sample(&mut rng), -c + noise.sample(&mut rng)]
            })
            .collect();
        for seed in 0..5 {
            let a = kmeans_init(&points, 2, seed).unwrap();
            assert!(a[..100].iter().all(|&c| c == a[0]));
            assert!(a[100..].iter().all(|&c| c == a[100]));
            assert_ne!(a[0], a[100]);
        }
    }

    #[test]
    fn one_cluster_and_saturation() {
        let points: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        assert!(kmeans_init(&points, 1, 0).unwrap().iter().all(|&c| c == 0));
        let mut a = kmeans_init(&points, 7, 3).unwrap();
        a.sort();
        assert_eq!(a, (0..7).collect::<Vec<_>>());
        assert!(kmeans_init(&points, 8, 0).is_err());
    }

    #[test]
    fn duplicates_still_saturate() {
        let points = vec![vec![1.0], vec![1.0], vec![1.0]];
        let mut a = kmeans_init(&points, 3, 1).unwrap();
        a.sort();
        assert_eq!(a, vec![0, 1, 2]);
    }

    #[test]
    fn deterministic_in_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let points: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        assert_eq!(kmeans_init(&points, 4, 17).unwrap(), kmeans_init(&points, 4, 17).unwrap());
    }
}
