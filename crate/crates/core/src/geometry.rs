//! Point-set kernels: normalization, farthest point sampling and exact kNN.
//!
//! Every ordering decision compares squared Euclidean distances and breaks
//! ties deterministically, so results depend only on the set of coordinates
//! (up to index ties between coincident points).

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::nncore::Tensor;

pub type Point = [f64; 3];

/// A labelled set of 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub label: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, label: usize) -> Self {
        PointCloud { points, label }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| norm(*p)).fold(0.0, f64::max)
    }

    /// `[U, 3]` coordinate matrix.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.points.len(), 3, self.points.iter().flatten().copied().collect())
            .expect("three coordinates per point")
    }

    /// Cloud whose `i`-th point is `self.points[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> PointCloud {
        PointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            label: self.label,
        }
    }
}

#[inline]
pub fn sq_dist(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn norm(p: Point) -> f64 {
    sq_dist(p, [0.0; 3]).sqrt()
}

pub(crate) fn lex_cmp(a: &Point, b: &Point) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Mean with summation in lexicographic point order, so the result is
/// bit-identical for any permutation of the input.
pub fn canonical_mean(points: &[Point]) -> Point {
    let mut sorted = points.to_vec();
    sorted.sort_by(lex_cmp);
    let mut sum = [0.0; 3];
    for p in &sorted {
        for a in 0..3 {
            sum[a] += p[a];
        }
    }
    let n = points.len() as f64;
    [sum[0] / n, sum[1] / n, sum[2] / n]
}

/// `candidate` beats `best` at equal distance when its coordinates are
/// lexicographically smaller, then when its index is lower.
fn beats(points: &[Point], candidate: usize, cand_d: f64, best: usize, best_d: f64) -> bool {
    match cand_d.total_cmp(&best_d) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match lex_cmp(&points[candidate], &points[best]) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => candidate < best,
        },
    }
}

/// Farthest point sampling with a canonical start: the point farthest from
/// the cloud mean, then repeatedly the point maximizing its minimum squared
/// distance to the chosen set.
pub fn farthest_point_sampling(points: &[Point], count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > points.len() {
        return Err(Error::Sampling(format!(
            "cannot sample {count} of {} points",
            points.len()
        )));
    }
    let mean = canonical_mean(points);
    let mut first = 0;
    let mut first_d = sq_dist(points[0], mean);
    for (i, &p) in points.iter().enumerate().skip(1) {
        let d = sq_dist(p, mean);
        if beats(points, i, d, first, first_d) {
            first = i;
            first_d = d;
        }
    }

    let mut chosen = Vec::with_capacity(count);
    let mut taken = vec![false; points.len()];
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut last = first;
    loop {
        chosen.push(last);
        taken[last] = true;
        if chosen.len() == count {
            break;
        }
        let mut next: Option<(usize, f64)> = None;
        for (i, &p) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            min_d[i] = min_d[i].min(sq_dist(p, points[last]));
            next = match next {
                Some((b, bd)) if !beats(points, i, min_d[i], b, bd) => Some((b, bd)),
                _ => Some((i, min_d[i])),
            };
        }
        last = next.expect("count <= len leaves a candidate").0;
    }
    Ok(chosen)
}

/// The `k` nearest points to `query`, sorted by (squared distance, index).
pub fn knn(points: &[Point], query: Point, k: usize) -> Result<Vec<usize>> {
    if k > points.len() {
        return Err(Error::Neighborhood(format!("k = {k} exceeds {} points", points.len())));
    }
    let mut keyed: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, &p)| (sq_dist(p, query), i))
        .collect();
    let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < keyed.len() && k > 0 {
        keyed.select_nth_unstable_by(k - 1, by_key);
    }
    keyed.truncate(k);
    keyed.sort_unstable_by(by_key);
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

/// Center on the mean and scale so the farthest point has norm 1.
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::Normalization("empty cloud".into()));
    }
    if cloud.points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Normalization("non-finite coordinate".into()));
    }
    let mean = canonical_mean(&cloud.points);
    let centered: Vec<Point> = cloud
        .points
        .iter()
        .map(|p| [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]])
        .collect();
    let scale = centered.iter().map(|&p| norm(p)).fold(0.0, f64::max);
    if scale <= f64::EPSILON {
        return Err(Error::Normalization("all points coincide".into()));
    }
    Ok(PointCloud {
        points: centered
            .into_iter()
            .map(|p| [p[0] / scale, p[1] / scale, p[2] / scale])
            .collect(),
        label: cloud.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::knn_oracle;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect()
    }

    const SQUARE: [Point; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];

    #[test]
    fn fps_all_points_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts = random_points(&mut rng, 12);
        let mut idx = farthest_point_sampling(&pts, 12).unwrap();
        idx.sort();
        assert_eq!(idx, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn fps_square_picks_diagonal() {
        // Every start corner leads to its diagonal opposite.
        for start in 0..4 {
            let far = (0..4)
                .filter(|&j| j != start)
                .max_by(|&a, &b| sq_dist(SQUARE[a], SQUARE[start]).total_cmp(&sq_dist(SQUARE[b], SQUARE[start])))
                .unwrap();
            assert_eq!(sq_dist(SQUARE[far], SQUARE[start]), 2.0);
        }
        assert_eq!(farthest_point_sampling(&SQUARE, 2).unwrap(), vec![0, 3]);
    }

    #[test]
    fn fps_single_is_canonical_start() {
        let pts = vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [3.0, 0.0, 0.0], [0.2, 0.1, 0.0]];
        assert_eq!(farthest_point_sampling(&pts, 1).unwrap(), vec![2]);
    }

    #[test]
    fn fps_rejects_bad_counts() {
        assert!(matches!(farthest_point_sampling(&SQUARE, 5), Err(Error::Sampling(_))));
        assert!(matches!(farthest_point_sampling(&SQUARE, 0), Err(Error::Sampling(_))));
    }

    #[test]
    fn fps_beats_random_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let min_pairwise = |pts: &[Point], idx: &[usize]| {
            let mut m = f64::INFINITY;
            for a in 0..idx.len() {
                for b in a + 1..idx.len() {
                    m = m.min(sq_dist(pts[idx[a]], pts[idx[b]]));
                }
            }
            m
        };
        for _ in 0..10 {
            let pts = random_points(&mut rng, 80);
            let fps = farthest_point_sampling(&pts, 10).unwrap();
            let fps_min = min_pairwise(&pts, &fps);
            for _ in 0..20 {
                let mut all: Vec<usize> = (0..80).collect();
                all.shuffle(&mut rng);
                assert!(fps_min >= min_pairwise(&pts, &all[..10]));
            }
        }
    }

    #[test]
    fn knn_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_points(&mut rng, 20);
        assert_eq!(knn(&pts, pts[7], 1).unwrap(), vec![7]);
        let all = knn(&pts, [0.1, 0.2, 0.3], 20).unwrap();
        assert_eq!(all, knn_oracle(&pts, [0.1, 0.2, 0.3], 20));
        assert!(matches!(knn(&pts, [0.0; 3], 21), Err(Error::Neighborhood(_))));
        assert!(knn(&pts, [0.0; 3], 0).unwrap().is_empty());
    }

    #[test]
    fn knn_matches_oracle_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..50 {
            let pts = random_points(&mut rng, 40);
            let q = random_points(&mut rng, 1)[0];
            assert_eq!(knn(&pts, q, 5).unwrap(), knn_oracle(&pts, q, 5));
        }
    }

    #[test]
    fn knn_breaks_distance_ties_by_index() {
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 5.0]];
        assert_eq!(knn(&pts, [0.0; 3], 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn normalize_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = PointCloud::new(random_points(&mut rng, 30), 4);
        let n = normalize(&cloud).unwrap();
        assert!((n.max_norm() - 1.0).abs() < 1e-12);
        let mean = canonical_mean(&n.points);
        assert!(mean.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(n.label, 4);

        let again = normalize(&n).unwrap();
        for (a, b) in again.points.iter().zip(&n.points) {
            assert!(sq_dist(*a, *b).sqrt() < 1e-9);
        }

        let moved = PointCloud::new(
            cloud
                .points
                .iter()
                .map(|p| [7.0 * p[0] + 1.0, 7.0 * p[1] + 2.0, 7.0 * p[2] + 3.0])
                .collect(),
            4,
        );
        let m = normalize(&moved).unwrap();
        for (a, b) in m.points.iter().zip(&n.points) {
            assert!(sq_dist(*a, *b).sqrt() < 1e-9);
        }
    }

    #[test]
    fn normalize_rejects_degenerate() {
        let c = PointCloud::new(vec![[1.0, 2.0, 3.0]; 5], 0);
        assert!(matches!(normalize(&c), Err(Error::Normalization(_))));
        assert!(matches!(
            normalize(&PointCloud::new(vec![], 0)),
            Err(Error::Normalization(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn knn_agrees_with_oracle(seed in any::<u64>(), n in 2usize..60, k_frac in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, n);
            let k = ((n as f64) * k_frac) as usize + 1;
            let q = random_points(&mut rng, 1)[0];
            prop_assert_eq!(knn(&pts, q, k.min(n)).unwrap(), knn_oracle(&pts, q, k.min(n)));
        }

        #[test]
        fn fps_is_permutation_invariant_as_point_set(seed in any::<u64>(), n in 2usize..50, l_frac in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, n);
            let l = ((n as f64) * l_frac) as usize + 1;
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<Point> = perm.iter().map(|&i| pts[i]).collect();
            let a: Vec<Point> = farthest_point_sampling(&pts, l.min(n)).unwrap().iter().map(|&i| pts[i]).collect();
            let b: Vec<Point> = farthest_point_sampling(&shuffled, l.min(n)).unwrap().iter().map(|&i| shuffled[i]).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn normalize_is_similarity_invariant(seed in any::<u64>(), scale in 0.1f64..50.0, shift in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cloud = PointCloud::new(random_points(&mut rng, 25), 0);
            let moved = PointCloud::new(cloud.points.iter().map(|p| [scale * p[0] + shift, scale * p[1] - shift, scale * p[2] + 0.5 * shift]).collect(), 0);
            let a = normalize(&cloud).unwrap();
            let b = normalize(&moved).unwrap();
            for (p, q) in a.points.iter().zip(&b.points) {
                prop_assert!(sq_dist(*p, *q).sqrt() < 1e-9);
            }
        }
    }
}
