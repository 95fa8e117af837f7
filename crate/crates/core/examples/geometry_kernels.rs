//! Normalization, farthest point sampling and kNN on a generated torus.
//!
//!     cargo run --release --example geometry_kernels

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use i3dol::data::{sample_surface, ShapeKind};
use i3dol::geometry::{canonical_mean, farthest_point_sampling, knn, normalize, sq_dist, PointCloud};

fn main() -> i3dol::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let raw = PointCloud::new(sample_surface(ShapeKind::Torus, 512, &mut rng), 0);
    let cloud = normalize(&raw)?;
    let mean = canonical_mean(&cloud.points);
    println!(
        "{} points, mean {:.1e} {:.1e} {:.1e}, max norm {}",
        cloud.len(),
        mean[0],
        mean[1],
        mean[2],
        cloud.max_norm()
    );

    let centroids = farthest_point_sampling(&cloud.points, 16)?;
    let spread = centroids
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| centroids[i + 1..].iter().map(move |&b| (a, b)))
        .map(|(a, b)| sq_dist(cloud.points[a], cloud.points[b]).sqrt())
        .fold(f64::INFINITY, f64::min);
    println!("16 FPS centroids, smallest pairwise gap {spread:.3}");

    for &c in centroids.iter().take(4) {
        let nn = knn(&cloud.points, cloud.points[c], 8)?;
        let radius = sq_dist(cloud.points[c], cloud.points[*nn.last().unwrap()]).sqrt();
        println!("centroid {c:>3}: neighbors {nn:?}, radius {radius:.3}");
    }
    Ok(())
}
