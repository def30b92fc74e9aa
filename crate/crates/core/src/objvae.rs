//! Per-object VAE: appearance and shape encoders, a decoder shared across
//! objects, and a fusion head that merges all decoded objects into one image.

use objman_tensor::nn::{Bound, Conv2d, Linear, ParamSet};
use objman_tensor::{ConvGeom, Graph, Scalar, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::image::ImageTensor;
use crate::segnet::coordinate_planes;
use crate::{Error, Result};

/// Diagonal Gaussian posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mean: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mean.len() != logvar.len() {
            return Err(Error::Shape(format!("posterior mean {} vs logvar {}", mean.len(), logvar.len())));
        }
        if !mean.iter().chain(&logvar).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("posterior has non-finite entries".into()));
        }
        Ok(Self { mean, logvar })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], logvar: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.logvar.iter().map(|lv| (lv / 2.0).exp()).collect()
    }
}

/// `mean + exp(logvar / 2) · ξ` with `ξ ~ N(0, I)`.
pub fn reparam_sample<R: Rng + ?Sized>(posterior: &GaussianPosterior, rng: &mut R) -> Vec<f64> {
    posterior
        .mean
        .iter()
        .zip(&posterior.logvar)
        .map(|(m, lv)| {
            let xi: f64 = rng.sample(StandardNormal);
            m + (lv / 2.0).exp() * xi
        })
        .collect()
}

/// Closed-form `KL(q ‖ N(0, I))` summed over dimensions.
pub fn kl_diag_gaussian(posterior: &GaussianPosterior) -> f64 {
    posterior
        .mean
        .iter()
        .zip(&posterior.logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// Row-wise KL for `[M, D]` mean and log-variance; returns `[M]`.
pub fn kl_rows<T: Scalar>(g: &mut Graph<T>, mean: Var, logvar: Var) -> Result<Var> {
    let s = g.shape(mean).to_vec();
    if s.len() != 2 || g.shape(logvar) != s.as_slice() {
        return Err(Error::Shape(format!("kl: mean {s:?} vs logvar {:?}", g.shape(logvar))));
    }
    let m2 = g.square(mean);
    let v = g.exp(logvar);
    let t = g.add(m2, v)?;
    let t = g.sub(t, logvar)?;
    let t = g.add_scalar(t, -T::one());
    let t = g.mul_scalar(t, T::lit(0.5));
    let t = g.sum_to(t, &[s[0], 1])?;
    Ok(g.reshape(t, &[s[0]])?)
}

/// `z = mean + exp(logvar / 2) ⊙ noise` on the graph.
pub fn reparam_graph<T: Scalar>(g: &mut Graph<T>, mean: Var, logvar: Var, noise: Tensor<T>) -> Result<Var> {
    let half = g.mul_scalar(logvar, T::lit(0.5));
    let std = g.exp(half);
    let xi = g.constant(noise);
    let dev = g.mul(std, xi)?;
    Ok(g.add(mean, dev)?)
}

/// Linear ramp from 0 at step 0 to `c_max` at `ramp_end`, constant after.
pub fn capacity_schedule(step: usize, c_max: f64, ramp_end: usize) -> f64 {
    if ramp_end == 0 || step >= ramp_end {
        c_max
    } else {
        c_max * step as f64 / ramp_end as f64
    }
}

/// Number of stride-2 stages taking `h × w` down toward 4 × 4.
fn encoder_stages(h: usize, w: usize) -> usize {
    let (mut h, mut w, mut n) = (h, w, 0);
    while h > 4 && w > 4 && h % 2 == 0 && w % 2 == 0 {
        h /= 2;
        w /= 2;
        n += 1;
    }
    n
}

#[derive(Clone, Debug)]
struct ConvEncoder {
    convs: Vec<Conv2d>,
    hidden: Linear,
    out: Linear,
    dim: usize,
}

impl ConvEncoder {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        name: &str,
        input: usize,
        h: usize,
        w: usize,
        c: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let stages = encoder_stages(h, w);
        let mut convs = Vec::new();
        let mut ch = input;
        let (mut fh, mut fw) = (h, w);
        for i in 0..stages.max(1) {
            let out = if i < 2 { c } else { 2 * c };
            let stride = if i < stages { 2 } else { 1 };
            convs.push(Conv2d::new(ps, &format!("{name}.c{i}"), ch, out, 3, ConvGeom::new(stride, 1, 1), rng));
            ch = out;
            if stride == 2 {
                fh /= 2;
                fw /= 2;
            }
        }
        let hidden = Linear::new(ps, &format!("{name}.fc"), ch * fh * fw, 4 * c, 2.0, rng);
        let out = Linear::new(ps, &format!("{name}.out"), 4 * c, 2 * dim, 0.1, rng);
        Self { convs, hidden, out, dim }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let mut a = x;
        for c in &self.convs {
            a = c.forward(g, p, a)?;
            a = g.relu(a);
        }
        let s = g.shape(a).to_vec();
        let flat = g.reshape(a, &[s[0], s[1] * s[2] * s[3]])?;
        let hdn = self.hidden.forward(g, p, flat)?;
        let hdn = g.relu(hdn);
        let o = self.out.forward(g, p, hdn)?;
        let mean = g.narrow(o, 1, 0, self.dim)?;
        let logvar = g.narrow(o, 1, self.dim, self.dim)?;
        Ok((mean, logvar))
    }
}

/// Graph handles for a batch of decoded objects and the fused images.
#[derive(Clone, Copy, Debug)]
pub struct DecodedVars {
    /// `[N·K, 3, H, W]` in `[0, 1]`.
    pub appearance: Var,
    /// `[N·K, 1, H, W]` pre-sigmoid mask logits.
    pub mask_logits: Var,
    /// `[N, 3, H, W]` in `[0, 1]`.
    pub fused: Var,
}

/// Decoded objects and fused image for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedScene<T> {
    /// `[K, 3, H, W]`.
    pub appearance: Tensor<T>,
    /// `[K, 1, H, W]`.
    pub mask_logits: Tensor<T>,
    /// `[3, H, W]`.
    pub fused: Tensor<T>,
}

impl<T: Scalar> DecodedScene<T> {
    pub fn k(&self) -> usize {
        self.appearance.shape()[0]
    }

    /// Decoded mask probabilities of object `k`, row-major `H × W`.
    pub fn mask(&self, k: usize) -> Vec<T> {
        let plane = self.mask_logits.shape()[2] * self.mask_logits.shape()[3];
        self.mask_logits.data()[k * plane..(k + 1) * plane]
            .iter()
            .map(|&l| T::one() / (T::one() + (-l).exp()))
            .collect()
    }

    pub fn object_appearance(&self, k: usize) -> Result<ImageTensor> {
        ImageTensor::from_chw(&self.appearance.index_first(k))
    }

    pub fn fused_image(&self) -> Result<ImageTensor> {
        ImageTensor::from_chw(&self.fused)
    }
}

/// Per-object posteriors for a scene plus the latents used for decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectLatentSet {
    pub appearance: Vec<GaussianPosterior>,
    pub shape: Vec<GaussianPosterior>,
    /// Concatenated `[z_appearance, z_shape]` per object.
    pub samples: Vec<Vec<f64>>,
}

impl ObjectLatentSet {
    /// Latents set to the posterior means.
    pub fn from_means(appearance: Vec<GaussianPosterior>, shape: Vec<GaussianPosterior>) -> Result<Self> {
        if appearance.len() != shape.len() {
            return Err(Error::Shape("appearance and shape posterior counts differ".into()));
        }
        let samples = appearance.iter().zip(&shape).map(|(a, s)| [a.mean.clone(), s.mean.clone()].concat()).collect();
        Ok(Self { appearance, shape, samples })
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    /// Concatenated posterior means per object.
    pub fn means(&self) -> Vec<Vec<f64>> {
        self.appearance.iter().zip(&self.shape).map(|(a, s)| [a.mean.clone(), s.mean.clone()].concat()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VaeDims {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub appearance_dim: usize,
    pub shape_dim: usize,
    pub width_channels: usize,
    pub fusion_channels: usize,
}

impl VaeDims {
    pub fn latent_dim(&self) -> usize {
        self.appearance_dim + self.shape_dim
    }
}

#[derive(Clone, Debug)]
pub struct ObjVae<T> {
    pub params: ParamSet<T>,
    dims: VaeDims,
    app_enc: ConvEncoder,
    shape_enc: ConvEncoder,
    dec: Vec<Conv2d>,
    fusion: Vec<Conv2d>,
}

impl<T: Scalar> ObjVae<T> {
    pub fn new<R: Rng + ?Sized>(dims: VaeDims, rng: &mut R) -> Result<Self> {
        let VaeDims { height: h, width: w, k, appearance_dim, shape_dim, width_channels: c, fusion_channels: f } = dims;
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("VAE image sides must be positive multiples of 4, got {h}x{w}")));
        }
        if k == 0 || appearance_dim == 0 || shape_dim == 0 || c == 0 || f == 0 {
            return Err(Error::Config(format!("VAE dimensions must be positive: {dims:?}")));
        }
        let mut ps = ParamSet::new();
        let app_enc = ConvEncoder::new(&mut ps, "vae.app", 3, h, w, c, appearance_dim, rng);
        let shape_enc = ConvEncoder::new(&mut ps, "vae.shape", 1, h, w, c, shape_dim, rng);
        let same = ConvGeom::same(3, 1);
        let nz = appearance_dim + shape_dim;
        let half = (c / 2).max(1);
        let dec = vec![
            Conv2d::new(&mut ps, "vae.dec0", nz + 2, c, 3, same, rng),
            Conv2d::new(&mut ps, "vae.dec1", c, c, 3, same, rng),
            Conv2d::new(&mut ps, "vae.dec2", c, c, 3, same, rng),
            Conv2d::new(&mut ps, "vae.dec3", c, half, 3, same, rng),
            Conv2d::new(&mut ps, "vae.dec4", half, 4, 1, ConvGeom::new(1, 0, 1), rng),
        ];
        let fusion = vec![
            Conv2d::new(&mut ps, "vae.fuse0", 4 * k, f, 3, same, rng),
            Conv2d::new(&mut ps, "vae.fuse1", f, f, 3, same, rng),
            Conv2d::new(&mut ps, "vae.fuse2", f, f, 3, same, rng),
            Conv2d::new(&mut ps, "vae.fuse3", f, 3, 3, same, rng),
        ];
        Ok(Self { params: ps, dims, app_enc, shape_enc, dec, fusion })
    }

    pub fn dims(&self) -> VaeDims {
        self.dims
    }

    /// Swaps in parameters of another float type, keeping the architecture.
    pub fn with_params<U: Scalar>(&self, params: ParamSet<U>) -> ObjVae<U> {
        ObjVae {
            params,
            dims: self.dims,
            app_enc: self.app_enc.clone(),
            shape_enc: self.shape_enc.clone(),
            dec: self.dec.clone(),
            fusion: self.fusion.clone(),
        }
    }

    fn check_images(&self, g: &Graph<T>, x: Var, channels: usize) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != channels || s[2] != self.dims.height || s[3] != self.dims.width {
            return Err(Error::Shape(format!(
                "expected [M, {channels}, {}, {}], got {s:?}",
                self.dims.height, self.dims.width
            )));
        }
        Ok(())
    }

    /// Masked objects `[M, 3, H, W]` → appearance (mean, logvar), each `[M, N_a]`.
    pub fn encode_appearance_graph(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<(Var, Var)> {
        self.check_images(g, x, 3)?;
        self.app_enc.forward(g, p, x)
    }

    /// Masks `[M, 1, H, W]` → shape (mean, logvar), each `[M, N_s]`.
    pub fn encode_shape_graph(&self, g: &mut Graph<T>, p: &Bound, m: Var) -> Result<(Var, Var)> {
        self.check_images(g, m, 1)?;
        self.shape_enc.forward(g, p, m)
    }

    /// Latents `[N·K, N_a + N_s]` → per-object outputs and fused `[N, 3, H, W]`.
    pub fn decode_graph(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<DecodedVars> {
        let VaeDims { height: h, width: w, k, .. } = self.dims;
        let nz = self.dims.latent_dim();
        let s = g.shape(z).to_vec();
        if s.len() != 2 || s[1] != nz || s[0] % k != 0 {
            return Err(Error::Shape(format!("latents must be [N*{k}, {nz}], got {s:?}")));
        }
        let m = s[0];
        let n = m / k;
        let (qh, qw) = (h / 4, w / 4);

        let zb = g.reshape(z, &[m, nz, 1, 1])?;
        let zb = g.broadcast_to(zb, &[m, nz, qh, qw])?;
        let coords = g.constant(coordinate_planes::<T>(qh, qw).reshape(&[1, 2, qh, qw])?);
        let coords = g.broadcast_to(coords, &[m, 2, qh, qw])?;
        let mut a = g.concat(&[zb, coords], 1)?;
        for (i, conv) in self.dec.iter().enumerate() {
            if i == 2 || i == 3 {
                a = g.upsample(a, 2)?;
            }
            a = conv.forward(g, p, a)?;
            if i + 1 < self.dec.len() {
                a = g.relu(a);
            }
        }
        let app = g.narrow(a, 1, 0, 3)?;
        let appearance = g.sigmoid(app);
        let mask_logits = g.narrow(a, 1, 3, 1)?;

        let mask_prob = g.sigmoid(mask_logits);
        let obj = g.concat(&[appearance, mask_prob], 1)?;
        let mut f = g.reshape(obj, &[n, 4 * k, h, w])?;
        for (i, conv) in self.fusion.iter().enumerate() {
            f = conv.forward(g, p, f)?;
            f = if i + 1 < self.fusion.len() { g.relu(f) } else { g.sigmoid(f) };
        }
        Ok(DecodedVars { appearance, mask_logits, fused: f })
    }

    fn run_encoder(&self, x: Tensor<T>, appearance: bool) -> Result<GaussianPosterior> {
        if !x.all_finite() {
            return Err(Error::NonFinite("encoder input has non-finite values".into()));
        }
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(x);
        let (m, lv) = if appearance {
            self.encode_appearance_graph(&mut g, &p, x)?
        } else {
            self.encode_shape_graph(&mut g, &p, x)?
        };
        let to_f64 = |t: &Tensor<T>| t.data().iter().map(|v| v.as_f64()).collect::<Vec<_>>();
        GaussianPosterior::new(to_f64(g.value(m)), to_f64(g.value(lv)))
    }

    /// Appearance posterior of one masked object `x ⊙ Ω_k`.
    pub fn encode_appearance(&self, masked_object: &ImageTensor) -> Result<GaussianPosterior> {
        let (h, w) = (masked_object.height(), masked_object.width());
        self.run_encoder(masked_object.to_chw::<T>().reshape(&[1, 3, h, w])?, true)
    }

    /// Shape posterior of one row-major `H × W` mask.
    pub fn encode_shape(&self, mask: &[T]) -> Result<GaussianPosterior> {
        let (h, w) = (self.dims.height, self.dims.width);
        if mask.len() != h * w {
            return Err(Error::Shape(format!("mask has {} pixels, expected {}", mask.len(), h * w)));
        }
        self.run_encoder(Tensor::from_vec(&[1, 1, h, w], mask.to_vec())?, false)
    }

    /// Decodes one scene from `K` latents of length `N_a + N_s`.
    pub fn decode_objects(&self, latents: &[Vec<f64>]) -> Result<DecodedScene<T>> {
        let VaeDims { height: h, width: w, k, .. } = self.dims;
        let nz = self.dims.latent_dim();
        if latents.len() != k || latents.iter().any(|z| z.len() != nz) {
            return Err(Error::Shape(format!("decode needs {k} latents of length {nz}")));
        }
        let data = latents.iter().flatten().map(|&v| T::lit(v)).collect();
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let z = g.constant(Tensor::from_vec(&[k, nz], data)?);
        let d = self.decode_graph(&mut g, &p, z)?;
        Ok(DecodedScene {
            appearance: g.value(d.appearance).clone(),
            mask_logits: g.value(d.mask_logits).clone(),
            fused: g.value(d.fused).clone().reshape(&[3, h, w])?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(k: usize) -> VaeDims {
        VaeDims { height: 8, width: 8, k, appearance_dim: 3, shape_dim: 2, width_channels: 4, fusion_channels: 4 }
    }

    #[test]
    fn kl_anchors() {
        assert_eq!(kl_diag_gaussian(&GaussianPosterior::standard(4)), 0.0);
        let p = GaussianPosterior::new(vec![1.0], vec![0.0]).unwrap();
        assert!((kl_diag_gaussian(&p) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_sample_is_the_mean() {
        let p = GaussianPosterior::new(vec![0.3, -2.0], vec![-50.0, -50.0]).unwrap();
        let s = reparam_sample(&p, &mut ChaCha8Rng::seed_from_u64(0));
        for (a, b) in s.iter().zip(&p.mean) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn capacity_ramp() {
        assert_eq!(capacity_schedule(0, 20.0, 100), 0.0);
        assert_eq!(capacity_schedule(50, 20.0, 100), 10.0);
        assert_eq!(capacity_schedule(100, 20.0, 100), 20.0);
        assert_eq!(capacity_schedule(1000, 20.0, 100), 20.0);
        assert_eq!(capacity_schedule(0, 20.0, 0), 20.0);
    }

    #[test]
    fn encoders_handle_empty_objects() {
        let vae = ObjVae::<f32>::new(dims(2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a = vae.encode_appearance(&ImageTensor::new(8, 8)).unwrap();
        assert_eq!(a.dim(), 3);
        let s = vae.encode_shape(&[0.0; 64]).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(vae.encode_shape(&[0.0; 64]).unwrap(), s);
        assert!(vae.encode_shape(&[0.0; 10]).is_err());
    }

    #[test]
    fn swapping_latents_swaps_objects() {
        let vae = ObjVae::<f64>::new(dims(2), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let z1 = vec![0.5, -1.0, 0.2, 1.5, 0.0];
        let z2 = vec![-0.3, 0.8, 1.1, -0.4, 0.9];
        let a = vae.decode_objects(&[z1.clone(), z2.clone()]).unwrap();
        let b = vae.decode_objects(&[z2, z1]).unwrap();
        assert_eq!(a.appearance.index_first(0), b.appearance.index_first(1));
        assert_eq!(a.mask_logits.index_first(1), b.mask_logits.index_first(0));
        assert!(a.fused.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(vae.decode_objects(&[vec![0.0; 4], vec![0.0; 5]]).is_err());
    }

    #[test]
    fn encoder_stage_count() {
        assert_eq!(encoder_stages(64, 64), 4);
        assert_eq!(encoder_stages(8, 8), 1);
        assert_eq!(encoder_stages(4, 4), 0);
        assert_eq!(encoder_stages(12, 16), 2);
        assert_eq!(encoder_stages(20, 16), 2);
    }
}
