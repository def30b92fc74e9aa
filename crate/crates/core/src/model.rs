//! The full set of networks trained together, with scene-level inference.

use objman_tensor::nn::{Bound, ParamSet};
use objman_tensor::{Graph, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::inpainter::Inpainter;
use crate::objvae::{DecodedScene, GaussianPosterior, ObjVae, ObjectLatentSet, VaeDims};
use crate::segnet::{MaskStack, SegNet};
use crate::{Error, Result};

/// Architecture settings. Widths are channel counts of the first layer of each network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub k: usize,
    pub appearance_dim: usize,
    pub shape_dim: usize,
    pub seg_width: usize,
    pub inpaint_width: usize,
    pub vae_width: usize,
    pub fusion_width: usize,
    pub edge_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 4,
            appearance_dim: 10,
            shape_dim: 6,
            seg_width: 16,
            inpaint_width: 8,
            vae_width: 16,
            fusion_width: 16,
            edge_threshold: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("model.k must be at least 2, got {}", self.k)));
        }
        if self.appearance_dim == 0 || self.shape_dim == 0 {
            return Err(Error::Config("latent dimensions must be positive".into()));
        }
        if [self.seg_width, self.inpaint_width, self.vae_width, self.fusion_width].contains(&0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if !(self.edge_threshold > 0.0) {
            return Err(Error::Config("model.edge_threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.appearance_dim + self.shape_dim
    }
}

/// Segmentation network, inpainter and per-object VAE.
#[derive(Clone, Debug)]
pub struct Networks<T> {
    pub config: ModelConfig,
    pub height: usize,
    pub width: usize,
    pub seg: SegNet<T>,
    pub inpainter: Inpainter<T>,
    pub vae: ObjVae<T>,
}

/// Graph bindings of all three parameter sets.
#[derive(Clone, Debug)]
pub struct BoundNetworks {
    pub seg: Bound,
    pub inpainter: Bound,
    pub vae: Bound,
}

impl<T: Scalar> Networks<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, height: usize, width: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let seg = SegNet::new(config.k, config.seg_width, rng)?;
        let inpainter = Inpainter::new(config.inpaint_width, rng)?;
        let dims = VaeDims {
            height,
            width,
            k: config.k,
            appearance_dim: config.appearance_dim,
            shape_dim: config.shape_dim,
            width_channels: config.vae_width,
            fusion_channels: config.fusion_width,
        };
        let vae = ObjVae::new(dims, rng)?;
        Ok(Self { config: config.clone(), height, width, seg, inpainter, vae })
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    /// Same architecture with parameters converted to another float type.
    pub fn cast<U: Scalar>(&self) -> Networks<U> {
        Networks {
            config: self.config.clone(),
            height: self.height,
            width: self.width,
            seg: self.seg.with_params(self.seg.params.cast()),
            inpainter: self.inpainter.with_params(self.inpainter.params.cast()),
            vae: self.vae.with_params(self.vae.params.cast()),
        }
    }

    /// Total trainable scalars per network: (segmentation, inpainter, VAE).
    pub fn param_counts(&self) -> (usize, usize, usize) {
        (self.seg.params.num_weights(), self.inpainter.params.num_weights(), self.vae.params.num_weights())
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundNetworks {
        BoundNetworks {
            seg: self.seg.params.bind(g),
            inpainter: self.inpainter.params.bind(g),
            vae: self.vae.params.bind(g),
        }
    }

    pub fn bind_frozen(&self, g: &mut Graph<T>) -> BoundNetworks {
        BoundNetworks {
            seg: self.seg.params.bind_frozen(g),
            inpainter: self.inpainter.params.bind_frozen(g),
            vae: self.vae.params.bind_frozen(g),
        }
    }

    /// Named parameter sets in checkpoint order.
    pub fn param_sets(&self) -> [(&'static str, &ParamSet<T>); 3] {
        [("seg", &self.seg.params), ("inpainter", &self.inpainter.params), ("vae", &self.vae.params)]
    }

    pub fn param_sets_mut(&mut self) -> [(&'static str, &mut ParamSet<T>); 3] {
        [("seg", &mut self.seg.params), ("inpainter", &mut self.inpainter.params), ("vae", &mut self.vae.params)]
    }

    /// Encodes every channel of `masks: [N, K, H, W]` over `images: [N, 3, H, W]`.
    /// Returns appearance and shape (mean, logvar) pairs, each `[N·K, dim]`.
    pub fn encode_objects(
        &self,
        g: &mut Graph<T>,
        p: &BoundNetworks,
        images: Var,
        masks: Var,
    ) -> Result<((Var, Var), (Var, Var))> {
        let s = g.shape(masks).to_vec();
        let (n, k, h, w) = (s[0], s[1], s[2], s[3]);
        let x5 = g.reshape(images, &[n, 1, 3, h, w])?;
        let m5 = g.reshape(masks, &[n, k, 1, h, w])?;
        let objects = g.mul(x5, m5)?;
        let objects = g.reshape(objects, &[n * k, 3, h, w])?;
        let flat_masks = g.reshape(masks, &[n * k, 1, h, w])?;
        let app = self.vae.encode_appearance_graph(g, &p.vae, objects)?;
        let shape = self.vae.encode_shape_graph(g, &p.vae, flat_masks)?;
        Ok((app, shape))
    }

    /// Segments one image and encodes every channel; latents are posterior means.
    pub fn encode_scene(&self, image: &ImageTensor) -> Result<(MaskStack<T>, ObjectLatentSet)> {
        let (h, w) = (image.height(), image.width());
        if (h, w) != (self.height, self.width) {
            return Err(Error::Shape(format!("image is {h}x{w}, model expects {}x{}", self.height, self.width)));
        }
        let mut g = Graph::new();
        let p = self.bind_frozen(&mut g);
        let x = g.constant(image.to_chw::<T>().reshape(&[1, 3, h, w])?);
        let masks = self.seg.forward(&mut g, &p.seg, x)?;
        let ((ma, la), (ms, ls)) = self.encode_objects(&mut g, &p, x, masks)?;
        let rows = |t: &Tensor<T>| -> Vec<Vec<f64>> {
            let d = t.shape()[1];
            t.data().chunks(d).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
        };
        let posteriors = |m: Var, l: Var| -> Result<Vec<GaussianPosterior>> {
            rows(g.value(m)).into_iter().zip(rows(g.value(l))).map(|(m, l)| GaussianPosterior::new(m, l)).collect()
        };
        let latents = ObjectLatentSet::from_means(posteriors(ma, la)?, posteriors(ms, ls)?)?;
        let stack = MaskStack::new(g.value(masks).clone().reshape(&[self.k(), h, w])?)?;
        Ok((stack, latents))
    }

    /// Decodes a scene from per-object latents.
    pub fn decode(&self, latents: &[Vec<f64>]) -> Result<DecodedScene<T>> {
        self.vae.decode_objects(latents)
    }

    /// Encode with posterior means, then decode.
    pub fn reconstruct(&self, image: &ImageTensor) -> Result<DecodedScene<T>> {
        let (_, latents) = self.encode_scene(image)?;
        self.decode(&latents.means())
    }
}
