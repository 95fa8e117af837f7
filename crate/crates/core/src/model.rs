//! The full network: encoder, adaptive centroids, attention and classifier.

use rand::Rng;

use crate::attention::{global_pool, AttentionConfig, GeometricAttention};
use crate::centroid::{BatchStructures, CentroidConfig, CentroidModule};
use crate::encoder::{check_normalized, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::head::{Classifier, ClassifierConfig};
use crate::nncore::{Graph, ParamSet, ParamVars, Tensor, Var};

/// Clouds per graph when scoring without gradients.
pub const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub centroid: CentroidConfig,
    /// Attention reduction ratio `r`.
    pub reduction: usize,
    pub classifier: ClassifierConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            centroid: CentroidConfig::default(),
            reduction: 4,
            classifier: ClassifierConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        self.encoder.feature_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        AttentionConfig::new(self.feature_dim(), self.reduction)?;
        if self.classifier.hidden.contains(&0) {
            return Err(Error::Config("classifier widths must be positive".into()));
        }
        let c = &self.centroid;
        if c.structures == 0 || c.neighbors == 0 {
            return Err(Error::Config("structures and neighbors must be positive".into()));
        }
        Ok(())
    }
}

/// Architecture switches. Score compensation is an inference-time choice and
/// lives with evaluation instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub adaptive_centroids: bool,
    pub attention: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            adaptive_centroids: true,
            attention: true,
        }
    }
}

/// Graph handles produced by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    /// Global features `f_c`, one row per cloud.
    pub global: Var,
    /// Attention gates `[B·L, d]`, absent when attention is disabled.
    pub attention: Option<Var>,
    pub structures: BatchStructures,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub params: ParamSet,
    config: ModelConfig,
    arch: Architecture,
    encoder: Encoder,
    centroid: CentroidModule,
    attention: Option<GeometricAttention>,
    classifier: Classifier,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, arch: Architecture, classes: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let d = config.feature_dim();
        let encoder = Encoder::new(&mut params, &config.encoder, rng)?;
        let centroid = CentroidModule::new(&mut params, d, rng)?;
        let attention = if arch.attention {
            Some(GeometricAttention::new(
                &mut params,
                &AttentionConfig::new(d, config.reduction)?,
                rng,
            )?)
        } else {
            None
        };
        let classifier = Classifier::new(&mut params, d, &config.classifier, classes, rng)?;
        Ok(Model {
            params,
            config: config.clone(),
            arch,
            encoder,
            centroid,
            attention,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn centroid(&self) -> &CentroidModule {
        &self.centroid
    }

    pub fn attention(&self) -> Option<&GeometricAttention> {
        self.attention.as_ref()
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn expand_classes<R: Rng + ?Sized>(&mut self, new_classes: usize, rng: &mut R) -> Result<()> {
        self.classifier.expand_classes(&mut self.params, new_classes, rng)
    }

    fn encode_batch(&self, g: &mut Graph, vars: &ParamVars, clouds: &[&PointCloud]) -> Result<Var> {
        if clouds.is_empty() {
            return Err(Error::Dimension("empty batch".into()));
        }
        let mut coords = Vec::new();
        for c in clouds {
            check_normalized(c)?;
            for p in &c.points {
                coords.extend_from_slice(p);
            }
        }
        let rows = coords.len() / 3;
        let x = g.input(Tensor::new(rows, 3, coords)?);
        self.encoder.forward(g, vars, x)
    }

    fn finish(&self, g: &mut Graph, vars: &ParamVars, structures: BatchStructures) -> Result<Forward> {
        let (fp, attention) = match &self.attention {
            Some(a) => {
                let out = a.attend(g, vars, structures.features)?;
                (out.features, Some(out.attention))
            }
            None => (structures.features, None),
        };
        let global = global_pool(g, fp, self.config.centroid.structures)?;
        let logits = self.classifier.forward(g, vars, global)?;
        Ok(Forward {
            logits,
            global,
            attention,
            structures,
        })
    }

    /// Forward a batch of normalized clouds on `g`.
    pub fn forward(&self, g: &mut Graph, vars: &ParamVars, clouds: &[&PointCloud]) -> Result<Forward> {
        let features = self.encode_batch(g, vars, clouds)?;
        let structures = self.centroid.build(
            g,
            vars,
            clouds,
            features,
            &self.config.centroid,
            self.arch.adaptive_centroids,
        )?;
        self.finish(g, vars, structures)
    }

    /// Forward reusing the centroids and neighbor indices of an earlier pass
    /// over the same batch.
    pub fn forward_frozen(
        &self,
        g: &mut Graph,
        vars: &ParamVars,
        clouds: &[&PointCloud],
        frozen: &BatchStructures,
    ) -> Result<Forward> {
        let features = self.encode_batch(g, vars, clouds)?;
        let k = self.config.centroid.neighbors;
        let transformed = self.centroid.transform(g, vars, features)?;
        let feats = self.centroid.gather_transformed(g, transformed, &frozen.neighbors, k)?;
        let structures = BatchStructures {
            centroids: frozen.centroids.clone(),
            neighbors: frozen.neighbors.clone(),
            features: feats,
            offsets: Vec::new(),
        };
        self.finish(g, vars, structures)
    }

    /// Softmax scores and global features of every cloud.
    pub fn infer(&self, clouds: &[PointCloud]) -> Result<(Tensor, Tensor)> {
        let d = self.config.feature_dim();
        let mut scores = Vec::with_capacity(clouds.len() * self.classes());
        let mut feats = Vec::with_capacity(clouds.len() * d);
        for chunk in clouds.chunks(EVAL_CHUNK) {
            let refs: Vec<&PointCloud> = chunk.iter().collect();
            let mut g = Graph::new();
            let vars = g.bind_params(&self.params);
            let out = self.forward(&mut g, &vars, &refs)?;
            let p = g.softmax(out.logits)?;
            scores.extend_from_slice(g.value(p).data());
            feats.extend_from_slice(g.value(out.global).data());
        }
        Ok((
            Tensor::new(clouds.len(), self.classes(), scores)?,
            Tensor::new(clouds.len(), d, feats)?,
        ))
    }

    pub fn scores(&self, clouds: &[PointCloud]) -> Result<Tensor> {
        Ok(self.infer(clouds)?.0)
    }

    pub fn embed(&self, clouds: &[PointCloud]) -> Result<Tensor> {
        Ok(self.infer(clouds)?.1)
    }
}
