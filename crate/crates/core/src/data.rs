//! Procedural shape benchmark, augmentation, class-incremental splits and the
//! `pcd` text format.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{normalize, Point, PointCloud};

/// Decimal places written for each coordinate.
pub const PCD_DECIMALS: usize = 6;
pub const MANIFEST: &str = "manifest.txt";
pub const MAX_CLASSES: usize = 10;
pub const MIN_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
    Cone,
    Torus,
    PlateWithHole,
    Capsule,
    Ellipsoid,
    Pyramid,
    Helix,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; MAX_CLASSES] = [
        ShapeKind::Sphere,
        ShapeKind::Box,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Torus,
        ShapeKind::PlateWithHole,
        ShapeKind::Capsule,
        ShapeKind::Ellipsoid,
        ShapeKind::Pyramid,
        ShapeKind::Helix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
            ShapeKind::PlateWithHole => "plate-with-hole",
            ShapeKind::Capsule => "capsule",
            ShapeKind::Ellipsoid => "ellipsoid",
            ShapeKind::Pyramid => "pyramid",
            ShapeKind::Helix => "helix",
        }
    }

    pub fn from_name(name: &str) -> Option<ShapeKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Point {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Point = [n.sample(rng), n.sample(rng), n.sample(rng)];
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if len > 1e-9 {
            return [v[0] / len, v[1] / len, v[2] / len];
        }
    }
}

fn disk_point<R: Rng + ?Sized>(rng: &mut R, radius: f64, z: f64) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..TAU);
    [r * t.cos(), r * t.sin(), z]
}

/// Pick an index with probability proportional to `weights`.
fn pick<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn triangle_point<R: Rng + ?Sized>(rng: &mut R, a: Point, b: Point, c: Point) -> Point {
    let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    [0, 1, 2].map(|i| a[i] + u * (b[i] - a[i]) + v * (c[i] - a[i]))
}

/// `count` points on the surface of a randomly proportioned `kind`, z up,
/// before any noise or normalization.
pub fn sample_surface<R: Rng + ?Sized>(kind: ShapeKind, count: usize, rng: &mut R) -> Vec<Point> {
    match kind {
        ShapeKind::Sphere => (0..count).map(|_| unit_vector(rng)).collect(),
        ShapeKind::Box => {
            let a = rng.random_range(0.7..1.0);
            let b = rng.random_range(0.7..1.0);
            let c = rng.random_range(0.7..1.0);
            let areas = [b * c, a * c, a * b];
            (0..count)
                .map(|_| {
                    let axis = pick(rng, &areas);
                    let half = [a, b, c];
                    let mut p = [0.0; 3];
                    for (i, v) in p.iter_mut().enumerate() {
                        *v = rng.random_range(-half[i]..half[i]);
                    }
                    p[axis] = if rng.random::<bool>() { half[axis] } else { -half[axis] };
                    p
                })
                .collect()
        }
        ShapeKind::Cylinder => {
            let h = rng.random_range(0.8..1.2);
            let areas = [2.0 * PI * 2.0 * h, PI, PI];
            (0..count)
                .map(|_| match pick(rng, &areas) {
                    0 => {
                        let t = rng.random_range(0.0..TAU);
                        [t.cos(), t.sin(), rng.random_range(-h..h)]
                    }
                    1 => disk_point(rng, 1.0, h),
                    _ => disk_point(rng, 1.0, -h),
                })
                .collect()
        }
        ShapeKind::Cone => {
            let h: f64 = rng.random_range(1.4..2.0);
            let areas = [PI * (1.0 + h * h).sqrt(), PI];
            (0..count)
                .map(|_| match pick(rng, &areas) {
                    0 => {
                        let r = rng.random::<f64>().sqrt();
                        let t = rng.random_range(0.0..TAU);
                        [r * t.cos(), r * t.sin(), h * (1.0 - r)]
                    }
                    _ => disk_point(rng, 1.0, 0.0),
                })
                .collect()
        }
        ShapeKind::Torus => {
            let tube = rng.random_range(0.2..0.35);
            (0..count)
                .map(|_| loop {
                    let u = rng.random_range(0.0..TAU);
                    let v = rng.random_range(0.0..TAU);
                    let ring = 1.0 + tube * v.cos();
                    if rng.random_range(0.0..1.0 + tube) < ring {
                        break [ring * u.cos(), ring * u.sin(), tube * v.sin()];
                    }
                })
                .collect()
        }
        ShapeKind::PlateWithHole => {
            let hole = rng.random_range(0.35..0.55);
            let half_thickness = 0.03;
            (0..count)
                .map(|_| loop {
                    let x = rng.random_range(-1.0..1.0);
                    let y = rng.random_range(-1.0..1.0);
                    if x * x + y * y >= hole * hole {
                        let z = if rng.random::<bool>() {
                            half_thickness
                        } else {
                            -half_thickness
                        };
                        break [x, y, z];
                    }
                })
                .collect()
        }
        ShapeKind::Capsule => {
            let h = rng.random_range(1.0..1.6);
            let r = 0.5;
            let areas = [2.0 * PI * r * 2.0 * h, 4.0 * PI * r * r];
            (0..count)
                .map(|_| match pick(rng, &areas) {
                    0 => {
                        let t = rng.random_range(0.0..TAU);
                        [r * t.cos(), r * t.sin(), rng.random_range(-h..h)]
                    }
                    _ => {
                        let d = unit_vector(rng);
                        let shift = if d[2] >= 0.0 { h } else { -h };
                        [r * d[0], r * d[1], r * d[2] + shift]
                    }
                })
                .collect()
        }
        ShapeKind::Ellipsoid => {
            let b = rng.random_range(0.55..0.75);
            let c = rng.random_range(0.3..0.45);
            (0..count)
                .map(|_| {
                    let d = unit_vector(rng);
                    [d[0], b * d[1], c * d[2]]
                })
                .collect()
        }
        ShapeKind::Pyramid => {
            let h: f64 = rng.random_range(1.2..1.8);
            let apex = [0.0, 0.0, h];
            let corners = [[1.0, 1.0, 0.0], [-1.0, 1.0, 0.0], [-1.0, -1.0, 0.0], [1.0, -1.0, 0.0]];
            let side = (h * h + 1.0).sqrt();
            let areas = [4.0, side, side, side, side];
            (0..count)
                .map(|_| match pick(rng, &areas) {
                    0 => [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0],
                    f => triangle_point(rng, apex, corners[f - 1], corners[f % 4]),
                })
                .collect()
        }
        ShapeKind::Helix => {
            let turns = rng.random_range(2.5..3.5);
            let h = rng.random_range(1.0..1.5);
            let tube = 0.08;
            (0..count)
                .map(|_| {
                    let s = rng.random::<f64>();
                    let t = s * turns * TAU;
                    let d = unit_vector(rng);
                    [
                        t.cos() + tube * d[0],
                        t.sin() + tube * d[1],
                        h * (2.0 * s - 1.0) + tube * d[2],
                    ]
                })
                .collect()
        }
    }
}

/// Rotate every point about the z axis by `angle` radians.
pub fn rotate_vertical(cloud: &PointCloud, angle: f64) -> PointCloud {
    let (s, c) = angle.sin_cos();
    PointCloud::new(
        cloud
            .points
            .iter()
            .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
            .collect(),
        cloud.label,
    )
}

/// Add per-coordinate Gaussian noise clipped to `±clip`.
pub fn jitter<R: Rng + ?Sized>(cloud: &PointCloud, sigma: f64, clip: f64, rng: &mut R) -> PointCloud {
    if sigma <= 0.0 {
        return cloud.clone();
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    PointCloud::new(
        cloud
            .points
            .iter()
            .map(|p| p.map(|v| v + n.sample(rng).clamp(-clip, clip)))
            .collect(),
        cloud.label,
    )
}

/// Round each coordinate to what the `pcd` format writes.
fn quantize(cloud: PointCloud) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .map(|p| p.map(|v| format!("{v:.PCD_DECIMALS$}").parse::<f64>().expect("formatted float")))
        .collect();
    PointCloud::new(points, cloud.label)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub rotate: bool,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotate: true,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
        }
    }
}

/// Random vertical rotation plus clipped jitter, then renormalize.
pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, cfg: &AugmentConfig, rng: &mut R) -> Result<PointCloud> {
    let angle = if cfg.rotate { rng.random_range(0.0..TAU) } else { 0.0 };
    let rotated = rotate_vertical(cloud, angle);
    normalize(&jitter(&rotated, cfg.jitter_sigma, cfg.jitter_clip, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            num_classes: MAX_CLASSES,
            train_per_class: 64,
            test_per_class: 20,
            points: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<ShapeKind>,
    pub points: usize,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Noise added to generated points before normalization.
const SURFACE_NOISE: f64 = 0.005;

fn make_cloud<R: Rng + ?Sized>(kind: ShapeKind, label: usize, points: usize, rng: &mut R) -> Result<PointCloud> {
    let raw = PointCloud::new(sample_surface(kind, points, rng), label);
    let rotated = rotate_vertical(&raw, rng.random_range(0.0..TAU));
    let noisy = jitter(&rotated, SURFACE_NOISE, 4.0 * SURFACE_NOISE, rng);
    Ok(quantize(normalize(&noisy)?))
}

/// Generate a seeded train/test benchmark; class `c` is `ShapeKind::ALL[c]`.
pub fn generate(cfg: &GenerateConfig) -> Result<Dataset> {
    if cfg.num_classes == 0 || cfg.num_classes > MAX_CLASSES {
        return Err(Error::Generation(format!(
            "class count {} outside 1..={MAX_CLASSES}",
            cfg.num_classes
        )));
    }
    if cfg.train_per_class == 0 || cfg.test_per_class == 0 {
        return Err(Error::Generation("per-class counts must be at least 1".into()));
    }
    if cfg.points < MIN_POINTS {
        return Err(Error::Generation(format!(
            "{} points per cloud, need at least {MIN_POINTS}",
            cfg.points
        )));
    }
    let classes = ShapeKind::ALL[..cfg.num_classes].to_vec();
    let mut train = Vec::with_capacity(cfg.num_classes * cfg.train_per_class);
    let mut test = Vec::with_capacity(cfg.num_classes * cfg.test_per_class);
    for (label, &kind) in classes.iter().enumerate() {
        for (split, count, out) in [(0, cfg.train_per_class, &mut train), (1, cfg.test_per_class, &mut test)] {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((label * 2 + split) as u64);
            for _ in 0..count {
                out.push(make_cloud(kind, label, cfg.points, &mut rng)?);
            }
        }
    }
    Ok(Dataset {
        classes,
        points: cfg.points,
        train,
        test,
    })
}

/// Rotation-about-z invariant summary of a cloud used by the self-test oracle.
pub fn shape_statistics(cloud: &PointCloud) -> Vec<f64> {
    const BINS: usize = 8;
    let n = cloud.len() as f64;
    let mut stats = vec![0.0; 2 + 3 * BINS];
    let mean_z = cloud.points.iter().map(|p| p[2]).sum::<f64>() / n;
    for p in &cloud.points {
        let radial = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let dz = p[2] - mean_z;
        let norm = (radial * radial + p[2] * p[2]).sqrt();
        stats[0] += dz * dz / n;
        stats[1] += radial * radial / n;
        let bin = |v: f64| ((v.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1);
        stats[2 + bin(norm)] += 1.0 / n;
        stats[2 + BINS + bin(dz.abs())] += 1.0 / n;
        stats[2 + 2 * BINS + bin(radial)] += 1.0 / n;
    }
    stats
}

/// Nearest-centroid classifier over standardized [`shape_statistics`].
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidOracle {
    centroids: Vec<Vec<f64>>,
    scale: Vec<f64>,
}

impl CentroidOracle {
    pub fn fit(train: &[PointCloud], num_classes: usize) -> Result<Self> {
        let feats: Vec<(usize, Vec<f64>)> = train.iter().map(|c| (c.label, shape_statistics(c))).collect();
        let dim = feats
            .first()
            .map(|f| f.1.len())
            .ok_or_else(|| Error::Generation("empty training set".into()))?;
        let n = feats.len() as f64;
        let mut mean = vec![0.0; dim];
        for (_, f) in &feats {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for (_, f) in &feats {
            for ((s, v), m) in scale.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scale {
            *s = s.sqrt().max(1e-6);
        }
        let mut centroids = vec![vec![0.0; dim]; num_classes];
        let mut counts = vec![0usize; num_classes];
        for (label, f) in &feats {
            let c = centroids
                .get_mut(*label)
                .ok_or_else(|| Error::ClassRange(format!("label {label} with {num_classes} classes")))?;
            for (a, v) in c.iter_mut().zip(f) {
                *a += v;
            }
            counts[*label] += 1;
        }
        for (c, &k) in centroids.iter_mut().zip(&counts) {
            if k == 0 {
                return Err(Error::Generation("class without training samples".into()));
            }
            for a in c.iter_mut() {
                *a /= k as f64;
            }
        }
        Ok(CentroidOracle { centroids, scale })
    }

    pub fn predict(&self, cloud: &PointCloud) -> usize {
        let f = shape_statistics(cloud);
        let dist = |c: &Vec<f64>| {
            c.iter()
                .zip(&f)
                .zip(&self.scale)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum::<f64>()
        };
        let mut best = 0;
        for i in 1..self.centroids.len() {
            if dist(&self.centroids[i]) < dist(&self.centroids[best]) {
                best = i;
            }
        }
        best
    }

    pub fn accuracy(&self, clouds: &[PointCloud]) -> f64 {
        let hits = clouds.iter().filter(|c| self.predict(c) == c.label).count();
        hits as f64 / clouds.len().max(1) as f64
    }
}

/// Training and test clouds of the classes introduced in one state, with
/// labels already mapped to learning order.
#[derive(Debug, Clone, PartialEq)]
pub struct StateData {
    /// First learning-order label of this state.
    pub first_class: usize,
    pub num_classes: usize,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl StateData {
    pub fn classes(&self) -> std::ops::Range<usize> {
        self.first_class..self.first_class + self.num_classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalSplit {
    /// `class_order[i]` is the dataset label learned as class `i`.
    pub class_order: Vec<usize>,
    pub states: Vec<StateData>,
}

/// Shuffle classes with `seed`, relabel them in learning order and cut the
/// order into states of `classes_per_state`.
pub fn incremental_split(dataset: &Dataset, classes_per_state: &[usize], seed: u64) -> Result<IncrementalSplit> {
    let total: usize = classes_per_state.iter().sum();
    if classes_per_state.is_empty() || classes_per_state.contains(&0) {
        return Err(Error::Schedule("every state needs at least one class".into()));
    }
    if total != dataset.num_classes() {
        return Err(Error::Schedule(format!(
            "schedule covers {total} classes, dataset has {}",
            dataset.num_classes()
        )));
    }
    let mut class_order: Vec<usize> = (0..total).collect();
    class_order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rank = vec![0; total];
    for (i, &c) in class_order.iter().enumerate() {
        rank[c] = i;
    }
    let relabel = |clouds: &[PointCloud], range: std::ops::Range<usize>| -> Vec<PointCloud> {
        let mut out: Vec<PointCloud> = clouds
            .iter()
            .filter(|c| range.contains(&rank[c.label]))
            .map(|c| PointCloud::new(c.points.clone(), rank[c.label]))
            .collect();
        out.sort_by_key(|c| c.label);
        out
    };
    let mut states = Vec::with_capacity(classes_per_state.len());
    let mut first = 0;
    for &n in classes_per_state {
        states.push(StateData {
            first_class: first,
            num_classes: n,
            train: relabel(&dataset.train, first..first + n),
            test: relabel(&dataset.test, first..first + n),
        });
        first += n;
    }
    Ok(IncrementalSplit { class_order, states })
}

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 3 * (PCD_DECIMALS + 4) + 16);
    let _ = writeln!(s, "pcd {} {}", cloud.len(), cloud.label);
    for p in &cloud.points {
        let _ = writeln!(s, "{:.d$} {:.d$} {:.d$}", p[0], p[1], p[2], d = PCD_DECIMALS);
    }
    s
}

pub fn parse_cloud(text: &str, source_name: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source_name, 1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != "pcd" {
        return Err(Error::parse(
            source_name,
            1,
            format!("expected `pcd <points> <label>`, found `{header}`"),
        ));
    }
    let count: usize = fields[1]
        .parse()
        .map_err(|_| Error::parse(source_name, 1, format!("bad point count `{}`", fields[1])))?;
    let label: usize = fields[2]
        .parse()
        .map_err(|_| Error::parse(source_name, 1, format!("bad label `{}`", fields[2])))?;
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let line_no = i + 2;
        let (_, line) = lines
            .next()
            .ok_or_else(|| Error::parse(source_name, line_no, format!("missing point {} of {count}", i + 1)))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(source_name, line_no, format!("bad coordinate in `{line}`")))?;
        if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(source_name, line_no, "expected three finite coordinates"));
        }
        points.push([vals[0], vals[1], vals[2]]);
    }
    if let Some((line_no, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(
            source_name,
            line_no,
            format!("more points than the {count} declared"),
        ));
    }
    Ok(PointCloud::new(points, label))
}

pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, format_cloud(cloud)).map_err(|e| Error::io(path, e))
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text, &path.display().to_string())
}

fn cloud_path(split: &str, label: usize, index: usize) -> PathBuf {
    PathBuf::from(split).join(format!("c{label:02}_{index:04}.pcd"))
}

/// Write every cloud plus a manifest of `split label path` lines.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let mut manifest = String::new();
    let _ = writeln!(manifest, "# split label path");
    let _ = writeln!(manifest, "points {}", dataset.points);
    for (label, kind) in dataset.classes.iter().enumerate() {
        let _ = writeln!(manifest, "class {label} {}", kind.name());
    }
    for (split, clouds) in [("train", &dataset.train), ("test", &dataset.test)] {
        let sub = dir.join(split);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut per_class = vec![0usize; dataset.num_classes()];
        for c in clouds.iter() {
            let rel = cloud_path(split, c.label, per_class[c.label]);
            per_class[c.label] += 1;
            save_cloud(&dir.join(&rel), c)?;
            let _ = writeln!(manifest, "{split} {} {}", c.label, rel.display());
        }
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(Error::MissingDataset(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let name = path.display().to_string();
    let mut classes = Vec::new();
    let mut points = None;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["points", n] => {
                points = Some(
                    n.parse::<usize>()
                        .map_err(|_| Error::parse(&name, line_no, "bad point count"))?,
                );
            }
            ["class", id, kind] => {
                let id: usize = id.parse().map_err(|_| Error::parse(&name, line_no, "bad class id"))?;
                if id != classes.len() {
                    return Err(Error::parse(&name, line_no, "class ids must be listed in order"));
                }
                classes.push(
                    ShapeKind::from_name(kind)
                        .ok_or_else(|| Error::parse(&name, line_no, format!("unknown shape `{kind}`")))?,
                );
            }
            [split @ ("train" | "test"), label, rel] => {
                let label: usize = label.parse().map_err(|_| Error::parse(&name, line_no, "bad label"))?;
                let cloud = load_cloud(&dir.join(rel))?;
                if cloud.label != label {
                    return Err(Error::parse(
                        &name,
                        line_no,
                        format!("{rel} holds label {}", cloud.label),
                    ));
                }
                if *split == "train" {
                    train.push(cloud);
                } else {
                    test.push(cloud);
                }
            }
            _ => return Err(Error::parse(&name, line_no, format!("unrecognized line `{line}`"))),
        }
    }
    let points = points.ok_or_else(|| Error::parse(&name, 0, "missing `points` line"))?;
    for c in train.iter().chain(&test) {
        if c.label >= classes.len() {
            return Err(Error::parse(&name, 0, format!("label {} has no class line", c.label)));
        }
        if c.len() != points {
            return Err(Error::parse(
                &name,
                0,
                format!("cloud with {} points, manifest says {points}", c.len()),
            ));
        }
    }
    Ok(Dataset {
        classes,
        points,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{norm, sq_dist};

    fn small() -> GenerateConfig {
        GenerateConfig {
            num_classes: 10,
            train_per_class: 12,
            test_per_class: 8,
            points: 128,
            seed: 3,
        }
    }

    #[test]
    fn sphere_surface_has_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for p in sample_surface(ShapeKind::Sphere, 200, &mut rng) {
            assert!((norm(p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic_and_normalized() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 120);
        assert_eq!(a.test.len(), 80);
        for c in a.train.iter().chain(&a.test) {
            assert_eq!(c.len(), 128);
            assert!((c.max_norm() - 1.0).abs() < 1e-5);
        }
        let other = generate(&GenerateConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a.train[0], other.train[0]);
    }

    #[test]
    fn train_and_test_are_disjoint() {
        let d = generate(&small()).unwrap();
        for t in &d.test {
            assert!(!d.train.contains(t));
        }
    }

    #[test]
    fn generation_rejects_bad_requests() {
        for cfg in [
            GenerateConfig {
                num_classes: 11,
                ..small()
            },
            GenerateConfig {
                num_classes: 0,
                ..small()
            },
            GenerateConfig { points: 32, ..small() },
            GenerateConfig {
                test_per_class: 0,
                ..small()
            },
        ] {
            assert!(matches!(generate(&cfg), Err(Error::Generation(_))));
        }
    }

    #[test]
    fn oracle_separates_classes() {
        let d = generate(&GenerateConfig {
            train_per_class: 30,
            test_per_class: 30,
            points: 256,
            ..small()
        })
        .unwrap();
        let oracle = CentroidOracle::fit(&d.train, 10).unwrap();
        let acc = oracle.accuracy(&d.test);
        assert!(acc >= 0.9, "oracle accuracy {acc}");

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let augmented: Vec<_> = d
            .test
            .iter()
            .map(|c| augment(c, &AugmentConfig::default(), &mut rng).unwrap())
            .collect();
        let aug_acc = oracle.accuracy(&augmented);
        assert!(acc - aug_acc < 0.05, "{acc} -> {aug_acc}");
    }

    #[test]
    fn rotation_is_an_isometry_about_z() {
        let d = generate(&small()).unwrap();
        let c = &d.train[5];
        let r = rotate_vertical(c, 1.234);
        for i in 0..20 {
            assert_eq!(r.points[i][2], c.points[i][2]);
            for j in 0..20 {
                assert!(
                    (sq_dist(r.points[i], r.points[j]).sqrt() - sq_dist(c.points[i], c.points[j]).sqrt()).abs() < 1e-9
                );
            }
        }
    }

    #[test]
    fn identity_augmentation_only_renormalizes() {
        let d = generate(&small()).unwrap();
        let c = &d.train[0];
        let cfg = AugmentConfig {
            rotate: false,
            jitter_sigma: 0.0,
            jitter_clip: 0.05,
        };
        let out = augment(c, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out, normalize(c).unwrap());
    }

    #[test]
    fn jitter_is_clipped() {
        let d = generate(&small()).unwrap();
        let c = &d.train[0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = jitter(c, 0.04, 0.05, &mut rng);
        let mut clipped = 0;
        for (a, b) in c.points.iter().zip(&j.points) {
            for k in 0..3 {
                let delta = (a[k] - b[k]).abs();
                assert!(delta <= 0.05 + 1e-15);
                if delta > 0.05 - 1e-12 {
                    clipped += 1;
                }
            }
        }
        assert!(clipped > 0);
    }

    #[test]
    fn split_partitions_classes() {
        let d = generate(&small()).unwrap();
        let s = incremental_split(&d, &[2; 5], 9).unwrap();
        assert_eq!(s.states.len(), 5);
        let mut order = s.class_order.clone();
        order.sort();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
        for (i, st) in s.states.iter().enumerate() {
            assert_eq!(st.classes(), 2 * i..2 * i + 2);
            assert_eq!(st.train.len(), 24);
            assert_eq!(st.test.len(), 16);
            for c in &st.train {
                assert!(st.classes().contains(&c.label));
            }
            let original = s.class_order[st.train[0].label];
            assert!(d
                .train
                .iter()
                .any(|c| c.label == original && c.points == st.train[0].points));
        }
        let single = incremental_split(&d, &[10], 9).unwrap();
        assert_eq!(single.states[0].train.len(), d.train.len());
        assert!(matches!(incremental_split(&d, &[4, 4], 9), Err(Error::Schedule(_))));
        assert!(matches!(incremental_split(&d, &[10, 0], 9), Err(Error::Schedule(_))));
    }

    #[test]
    fn forty_classes_in_steps_of_four() {
        let mut classes = Vec::new();
        for _ in 0..4 {
            classes.extend(ShapeKind::ALL);
        }
        let d = Dataset {
            classes,
            points: 0,
            train: Vec::new(),
            test: Vec::new(),
        };
        let s = incremental_split(&d, &[4; 10], 0).unwrap();
        assert_eq!(s.states.len(), 10);
        assert_eq!(s.states[9].classes(), 36..40);
    }

    #[test]
    fn pcd_round_trip() {
        let d = generate(&small()).unwrap();
        let c = &d.train[3];
        let text = format_cloud(c);
        assert_eq!(&parse_cloud(&text, "x").unwrap(), c);
        assert_eq!(format_cloud(&parse_cloud(&text, "x").unwrap()), text);
    }

    #[test]
    fn pcd_errors_carry_line_numbers() {
        let truncated = "pcd 3 1\n0.1 0.2 0.3\n0.0 0.0 0.0\n";
        match parse_cloud(truncated, "t.pcd") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let extra = "pcd 1 0\n0 0 0\n1 1 1\n";
        assert!(matches!(parse_cloud(extra, "e"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(
            parse_cloud("pts 1 0\n0 0 0\n", "h"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_cloud("pcd 1 0\n0 0\n", "r"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_cloud("pcd 1 0\n0 x 0\n", "r"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(&GenerateConfig {
            num_classes: 3,
            train_per_class: 2,
            test_per_class: 1,
            points: 64,
            seed: 1,
        })
        .unwrap();
        save_dataset(dir.path(), &d).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
        let missing = dir.path().join("nope");
        assert!(matches!(load_dataset(&missing), Err(Error::MissingDataset(_))));
    }
}
