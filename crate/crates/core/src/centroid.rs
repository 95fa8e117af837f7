//! Adaptive-geometric centroid construction.
//!
//! Centroids start at farthest-point samples of the cloud. Each refinement
//! pass predicts an offset for every centroid as the mean of its edge vectors
//! `(centroid - neighbor)` weighted by a learned scalar of the feature
//! difference `(centroid_feat - neighbor_feat)`, moves the centroid, and
//! re-selects its `k` nearest points. A centroid's feature is the channel-wise
//! max of `relu(T_g(f))` over its neighbors.
//!
//! Neighbor selection is an index choice and carries no gradient. Since the
//! centroid feature only depends on which neighbors were chosen, the offset
//! layer is not reached by gradients of a loss on the centroid features.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sampling, knn, Point, PointCloud};
use crate::nncore::{Graph, Linear, ParamSet, ParamVars, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CentroidConfig {
    /// Number of local structures `L`.
    pub structures: usize,
    /// Neighborhood size `k`.
    pub neighbors: usize,
    /// Offset refinement passes per forward.
    pub refine_iters: usize,
}

impl Default for CentroidConfig {
    fn default() -> Self {
        CentroidConfig {
            structures: 64,
            neighbors: 16,
            refine_iters: 1,
        }
    }
}

impl CentroidConfig {
    pub fn validate(&self, points: usize) -> Result<()> {
        if self.structures == 0 || self.structures > points {
            return Err(Error::Sampling(format!(
                "{} structures for {points} points",
                self.structures
            )));
        }
        if self.neighbors == 0 || self.neighbors >= points {
            return Err(Error::Neighborhood(format!(
                "k = {} must be in 1..{points}",
                self.neighbors
            )));
        }
        Ok(())
    }
}

/// One local geometric structure of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStructure {
    pub centroid: Point,
    /// Indices into the cloud's points, nearest first.
    pub neighbors: Vec<usize>,
    pub feature: Vec<f64>,
}

/// Structures of a whole batch held on a graph.
#[derive(Debug, Clone)]
pub struct BatchStructures {
    /// `B·L` centroid positions, cloud-major.
    pub centroids: Vec<Point>,
    /// `B·L·k` row indices into the batch feature matrix.
    pub neighbors: Vec<usize>,
    /// `[B·L, d]` centroid features.
    pub features: Var,
    /// `[B·L, 3]` predicted offsets of each refinement pass.
    pub offsets: Vec<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CentroidModule {
    /// `T_p`: feature difference to scalar edge weight.
    pub offset: Linear,
    /// `T_g`: per-point transform before max gathering.
    pub gather: Linear,
}

/// Batch rows of the `k` nearest points of `cloud` to `query`.
fn neighbor_rows(points: &[Point], row_offset: usize, query: Point, k: usize) -> Result<Vec<usize>> {
    Ok(knn(points, query, k)?.into_iter().map(|i| i + row_offset).collect())
}

impl CentroidModule {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, feature_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(CentroidModule {
            offset: Linear::new(params, "centroid.offset", feature_dim, 1, rng)?,
            gather: Linear::new(params, "centroid.gather", feature_dim, feature_dim, rng)?,
        })
    }

    /// `relu(T_g(f))` for every row; the gathered max then reads from this.
    pub fn transform(&self, g: &mut Graph, vars: &ParamVars, features: Var) -> Result<Var> {
        self.gather.forward_relu(g, vars, features)
    }

    /// Channel-wise max of `relu(T_g(f))` over consecutive groups of `k`
    /// neighbor feature rows.
    pub fn gather_feature(&self, g: &mut Graph, vars: &ParamVars, neighbor_feats: Var, k: usize) -> Result<Var> {
        if k == 0 {
            return Err(Error::Neighborhood("gathering over zero neighbors".into()));
        }
        let t = self.transform(g, vars, neighbor_feats)?;
        g.segment_max(t, k)
    }

    /// Gather from rows already passed through [`Self::transform`].
    pub fn gather_transformed(&self, g: &mut Graph, transformed: Var, neighbors: &[usize], k: usize) -> Result<Var> {
        if k == 0 {
            return Err(Error::Neighborhood("gathering over zero neighbors".into()));
        }
        let rows = g.gather_rows(transformed, neighbors)?;
        g.segment_max(rows, k)
    }

    /// Offsets `(1/k) Σ_i T_p(f̂_l - f_li) · edge_li` for `m` structures.
    ///
    /// `centroid_feats: [m, d]`, `point_feats: [n, d]`, `neighbors` holds
    /// `m·k` rows of `point_feats`, `edges: [m·k, 3]` holds `p̂_l - p_li`.
    #[allow(clippy::too_many_arguments)]
    pub fn predict_offset(
        &self,
        g: &mut Graph,
        vars: &ParamVars,
        centroid_feats: Var,
        point_feats: Var,
        neighbors: &[usize],
        edges: &Tensor,
        k: usize,
    ) -> Result<Var> {
        if k == 0 {
            return Err(Error::Neighborhood("offset over zero neighbors".into()));
        }
        g.value(centroid_feats).ensure_finite("centroid features")?;
        g.value(point_feats).ensure_finite("point features")?;
        let repeated = g.repeat_rows(centroid_feats, k);
        let gathered = g.gather_rows(point_feats, neighbors)?;
        let diff = g.sub(repeated, gathered)?;
        let weights = self.offset.forward(g, vars, diff)?;
        let edges = g.input(edges.clone());
        let weighted = g.mul_column(weights, edges)?;
        g.segment_mean(weighted, k)
    }

    /// Initialize, optionally refine, and gather structures for a batch.
    /// `features` holds the point features of all clouds stacked in order.
    pub fn build(
        &self,
        g: &mut Graph,
        vars: &ParamVars,
        clouds: &[&PointCloud],
        features: Var,
        cfg: &CentroidConfig,
        adaptive: bool,
    ) -> Result<BatchStructures> {
        let k = cfg.neighbors;
        let mut row_offsets = Vec::with_capacity(clouds.len());
        let mut total = 0;
        for c in clouds {
            cfg.validate(c.len())?;
            row_offsets.push(total);
            total += c.len();
        }
        if g.value(features).rows() != total {
            return Err(Error::Dimension(format!(
                "{} feature rows for {total} points",
                g.value(features).rows()
            )));
        }

        let mut centroids = Vec::with_capacity(clouds.len() * cfg.structures);
        let mut neighbors = Vec::with_capacity(clouds.len() * cfg.structures * k);
        for (c, &off) in clouds.iter().zip(&row_offsets) {
            for i in farthest_point_sampling(&c.points, cfg.structures)? {
                let p = c.points[i];
                centroids.push(p);
                neighbors.extend(neighbor_rows(&c.points, off, p, k)?);
            }
        }

        let transformed = self.transform(g, vars, features)?;
        let mut feats = self.gather_transformed(g, transformed, &neighbors, k)?;
        let mut offsets = Vec::new();
        if adaptive {
            for _ in 0..cfg.refine_iters {
                let edges = edge_vectors(clouds, &row_offsets, cfg.structures, &centroids, &neighbors, k);
                let delta = self.predict_offset(g, vars, feats, features, &neighbors, &edges, k)?;
                let dv = g.value(delta).clone();
                dv.ensure_finite("centroid offset")?;
                neighbors.clear();
                for (s, c) in centroids.iter_mut().enumerate() {
                    for (a, v) in c.iter_mut().enumerate() {
                        *v += dv.get(s, a);
                    }
                    let b = s / cfg.structures;
                    neighbors.extend(neighbor_rows(&clouds[b].points, row_offsets[b], *c, k)?);
                }
                feats = self.gather_transformed(g, transformed, &neighbors, k)?;
                offsets.push(delta);
            }
        }
        Ok(BatchStructures {
            centroids,
            neighbors,
            features: feats,
            offsets,
        })
    }

    /// Structures of one cloud at their initial farthest-point positions.
    pub fn init_structures(
        &self,
        params: &ParamSet,
        cloud: &PointCloud,
        features: &Tensor,
        cfg: &CentroidConfig,
    ) -> Result<Vec<LocalStructure>> {
        let mut g = Graph::new();
        let vars = g.bind_params(params);
        let f = g.input(features.clone());
        let b = self.build(&mut g, &vars, &[cloud], f, cfg, false)?;
        Ok(unpack(&g, &b, cfg.neighbors))
    }

    /// Offset of a single structure.
    pub fn offset_of(
        &self,
        params: &ParamSet,
        structure: &LocalStructure,
        cloud: &PointCloud,
        features: &Tensor,
    ) -> Result<Point> {
        let mut g = Graph::new();
        let vars = g.bind_params(params);
        let cf = g.input(Tensor::row_vector(&structure.feature));
        let pf = g.input(features.clone());
        let k = structure.neighbors.len();
        let edges = single_edges(cloud, structure.centroid, &structure.neighbors);
        let d = self.predict_offset(&mut g, &vars, cf, pf, &structure.neighbors, &edges, k)?;
        let v = g.value(d);
        Ok([v.get(0, 0), v.get(0, 1), v.get(0, 2)])
    }

    /// Move a structure by `delta`, re-select its neighbors and re-gather.
    pub fn update_structure(
        &self,
        params: &ParamSet,
        structure: &LocalStructure,
        delta: Point,
        cloud: &PointCloud,
        features: &Tensor,
    ) -> Result<LocalStructure> {
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite centroid offset".into()));
        }
        let c = structure.centroid;
        let centroid = [c[0] + delta[0], c[1] + delta[1], c[2] + delta[2]];
        let k = structure.neighbors.len();
        let neighbors = knn(&cloud.points, centroid, k)?;
        let mut g = Graph::new();
        let vars = g.bind_params(params);
        let f = g.input(features.clone());
        let t = self.transform(&mut g, &vars, f)?;
        let feat = self.gather_transformed(&mut g, t, &neighbors, k)?;
        Ok(LocalStructure {
            centroid,
            neighbors,
            feature: g.value(feat).row(0).to_vec(),
        })
    }

    /// Full structure construction for one cloud, returning the final structures.
    pub fn structures(
        &self,
        params: &ParamSet,
        cloud: &PointCloud,
        features: &Tensor,
        cfg: &CentroidConfig,
        adaptive: bool,
    ) -> Result<Vec<LocalStructure>> {
        let mut g = Graph::new();
        let vars = g.bind_params(params);
        let f = g.input(features.clone());
        let b = self.build(&mut g, &vars, &[cloud], f, cfg, adaptive)?;
        Ok(unpack(&g, &b, cfg.neighbors))
    }
}

fn edge_vectors(
    clouds: &[&PointCloud],
    row_offsets: &[usize],
    per_cloud: usize,
    centroids: &[Point],
    neighbors: &[usize],
    k: usize,
) -> Tensor {
    let mut data = Vec::with_capacity(neighbors.len() * 3);
    for (s, c) in centroids.iter().enumerate() {
        let b = s / per_cloud;
        for &row in &neighbors[s * k..(s + 1) * k] {
            let p = clouds[b].points[row - row_offsets[b]];
            data.extend_from_slice(&[c[0] - p[0], c[1] - p[1], c[2] - p[2]]);
        }
    }
    Tensor::new(neighbors.len(), 3, data).expect("three components per edge")
}

fn single_edges(cloud: &PointCloud, centroid: Point, neighbors: &[usize]) -> Tensor {
    edge_vectors(&[cloud], &[0], 1, &[centroid], neighbors, neighbors.len())
}

/// Edge vectors `centroid - p_i` for explicit neighbor indices of one cloud.
pub fn edges_for(cloud: &PointCloud, centroid: Point, neighbors: &[usize]) -> Tensor {
    single_edges(cloud, centroid, neighbors)
}

fn unpack(g: &Graph, b: &BatchStructures, k: usize) -> Vec<LocalStructure> {
    let feats = g.value(b.features);
    b.centroids
        .iter()
        .enumerate()
        .map(|(s, &centroid)| LocalStructure {
            centroid,
            neighbors: b.neighbors[s * k..(s + 1) * k].to_vec(),
            feature: feats.row(s).to_vec(),
        })
        .collect()
}

/// Stack structure features into `f_g` of shape `[L, d]`.
pub fn assemble(structures: &[LocalStructure]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = structures.iter().map(|s| s.feature.clone()).collect();
    Tensor::from_rows(&rows)
}
