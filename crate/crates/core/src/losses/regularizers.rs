//! Temporal stabilizers: opacity entropy and local velocity coherence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math::Vec3;
use crate::scalar::Scalar;

pub const ENTROPY_CLAMP: f64 = 1e-6;
/// Weight of the time axis in the neighbour metric.
pub const TIME_WEIGHT: f64 = 1.0;

/// `−mean(α ln α + (1−α) ln(1−α))` with α clamped to `[1e-6, 1 − 1e-6]`.
pub fn opacity_entropy<T: Scalar>(alphas: &[T]) -> T {
    if alphas.is_empty() {
        return T::zero();
    }
    let mut total = T::zero();
    for &a in alphas {
        let a = a.clamp_s(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
        let b = -a + 1.0;
        total += a * a.ln() + b * b.ln();
    }
    -total / alphas.len() as f64
}

/// Derivative of [`opacity_entropy`] with respect to each α, times `scale`.
pub fn opacity_entropy_backward(alphas: &[f64], scale: f64) -> Vec<f64> {
    let n = alphas.len() as f64;
    alphas
        .iter()
        .map(|&a| {
            if !(ENTROPY_CLAMP..=1.0 - ENTROPY_CLAMP).contains(&a) {
                0.0
            } else {
                -scale * (a.ln() - (1.0 - a).ln()) / n
            }
        })
        .collect()
}

/// Indices of the `k` nearest points to `points[i]` (excluding `i`), ordered
/// by distance then index.
pub fn knn(points: &[[f64; 4]], i: usize, k: usize) -> Vec<usize> {
    let pi = points[i];
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| {
            let d: f64 = (0..4).map(|a| (p[a] - pi[a]) * (p[a] - pi[a])).sum();
            (d, j)
        })
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    cand.select_nth_unstable_by(k - 1, cmp);
    cand.truncate(k);
    cand.sort_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Rows evaluated by the coherence loss: all of them, or a seeded sorted
/// uniform subset when there are more than `subsample`.
pub fn coherence_rows(n: usize, subsample: usize, seed: u64) -> Vec<usize> {
    if n <= subsample {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, subsample).into_vec();
    rows.sort_unstable();
    rows
}

/// Neighbour lists for the evaluated rows, computed on base values.
pub fn coherence_neighbours<T: Scalar>(centers_t: &[Vec3<T>], time: f64, k: usize, rows: &[usize]) -> Vec<Vec<usize>> {
    let pts: Vec<[f64; 4]> = centers_t
        .iter()
        .map(|c| [c[0].branch(), c[1].branch(), c[2].branch(), TIME_WEIGHT * time])
        .collect();
    rows.iter().map(|&i| knn(&pts, i, k)).collect()
}

/// Mean over evaluated rows of the mean L1 velocity difference to the k
/// nearest neighbours, with `v_i = centers_t[i] − centers_prev[i]`.
pub fn velocity_coherence<T: Scalar>(
    centers_t: &[Vec3<T>],
    centers_prev: &[Vec3<T>],
    time: f64,
    k: usize,
    subsample: usize,
    seed: u64,
) -> T {
    assert_eq!(centers_t.len(), centers_prev.len(), "center sets differ in length");
    let n = centers_t.len();
    if n < 2 || k == 0 {
        return T::zero();
    }
    let v: Vec<Vec3<T>> = centers_t
        .iter()
        .zip(centers_prev)
        .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
        .collect();
    let rows = coherence_rows(n, subsample, seed);
    let nbrs = coherence_neighbours(centers_t, time, k, &rows);
    velocity_coherence_with(&v, &rows, &nbrs)
}

pub fn velocity_coherence_with<T: Scalar>(v: &[Vec3<T>], rows: &[usize], nbrs: &[Vec<usize>]) -> T {
    let mut total = T::zero();
    for (&i, list) in rows.iter().zip(nbrs) {
        let mut inner = T::zero();
        for &j in list {
            for a in 0..3 {
                inner += (v[i][a] - v[j][a]).abs();
            }
        }
        total += inner / list.len().max(1) as f64;
    }
    total / rows.len().max(1) as f64
}

/// Gradient of [`velocity_coherence_with`] with respect to the velocities.
pub fn velocity_coherence_backward(v: &[Vec3<f64>], rows: &[usize], nbrs: &[Vec<usize>], scale: f64) -> Vec<Vec3<f64>> {
    let mut out = vec![[0.0; 3]; v.len()];
    let outer = scale / rows.len().max(1) as f64;
    for (&i, list) in rows.iter().zip(nbrs) {
        let g = outer / list.len().max(1) as f64;
        for &j in list {
            for a in 0..3 {
                let s = if v[i][a] - v[j][a] < 0.0 { -g } else { g };
                out[i][a] += s;
                out[j][a] -= s;
            }
        }
    }
    out
}
