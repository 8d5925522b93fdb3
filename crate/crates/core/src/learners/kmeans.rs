//! Lloyd iterations shared by the k-means feature map and the 2-means model.

use rayon::prelude::*;

/// Squared Euclidean distance between an integer sample and a real centroid.
pub fn squared_distance(x: &[u8], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let d = f64::from(a) - b;
            d * d
        })
        .sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(x: &[u8], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(x, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct LloydOutcome {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs Lloyd's algorithm from the given initial centroids.
///
/// `points` must already be in a fixed order (callers pass canonical order);
/// centroid sums accumulate sequentially in that order, so the result does
/// not depend on the thread pool. An empty cluster takes over the point
/// farthest from its current centroid (lowest index on ties).
pub fn lloyd(points: &[&[u8]], init: Vec<Vec<f64>>, max_iters: usize) -> LloydOutcome {
    let dim = init.first().map_or(0, Vec::len);
    let mut centroids = init;
    let mut assignment: Vec<usize> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        fill_empty_clusters(points, &mut centroids, &mut assignment);
        centroids = recompute(points, &assignment, centroids.len(), dim);
        let next: Vec<usize> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignment {
            converged = true;
            break;
        }
        assignment = next;
    }
    LloydOutcome {
        centroids,
        assignment,
        iterations,
        converged,
    }
}

fn fill_empty_clusters(points: &[&[u8]], centroids: &mut [Vec<f64>], assignment: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // Only clusters with more than one member can donate a point.
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if counts[assignment[i]] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[assignment[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else {
            return;
        };
        assignment[i] = empty;
        centroids[empty] = points[i].iter().map(|&v| f64::from(v)).collect();
    }
}

fn recompute(points: &[&[u8]], assignment: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, &v) in sums[a].iter_mut().zip(p.iter()) {
            *s += f64::from(v);
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            let n = n as f64;
            s.iter_mut().for_each(|v| *v /= n);
        }
    }
    sums
}
