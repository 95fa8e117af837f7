//! Brute-force reference implementations used by unit tests.

use crate::geometry::{sq_dist, Point};

/// The `k` nearest points by repeated linear scans, ties to the lower index.
pub(crate) fn knn_oracle(points: &[Point], q: Point, k: usize) -> Vec<usize> {
    let mut used = vec![false; points.len()];
    let mut out = Vec::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..points.len() {
            if used[i] {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let (di, db) = (sq_dist(points[i], q), sq_dist(points[b], q));
                    di < db || (di == db && i < b)
                }
            };
            if better {
                best = Some(i);
            }
        }
        let b = best.expect("k <= len");
        used[b] = true;
        out.push(b);
    }
    out
}

/// Channel-wise max over rows, by explicit per-channel loops.
pub(crate) fn column_max(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut out = vec![f64::NEG_INFINITY; d];
    for c in 0..d {
        for r in rows {
            if r[c] > out[c] {
                out[c] = r[c];
            }
        }
    }
    out
}
