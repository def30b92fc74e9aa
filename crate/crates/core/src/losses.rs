//! Objective terms: the per-object information-bottleneck sum, the
//! contextual-information-separation (CIS) inpainting loss, the perceptual
//! cycle-consistency loss, and the combined two-player objective.
//!
//! Every term is built on the autodiff graph so training and the plain-value
//! wrappers below evaluate exactly the same arithmetic. Batch terms are
//! averaged over images and summed over objects.

use objman_tensor::{Graph, Scalar, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::inpainter::EdgeMap;
use crate::model::{BoundNetworks, Networks};
use crate::objvae::{kl_rows, reparam_graph, DecodedScene, ObjectLatentSet};
use crate::segnet::MaskStack;
use crate::{Error, Result};

/// Loss weights and constants. None of the weights have published values; the
/// defaults are engineering choices for 64×64 desk-scale runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the appearance KL surrogate.
    pub beta: f64,
    /// Weight of the shape KL surrogate.
    pub lambda: f64,
    /// Weight of the CIS term (subtracted for the min player).
    pub gamma: f64,
    /// Weight of the cycle-consistency term.
    pub eta: f64,
    /// Denominator guard of the CIS ratio.
    pub epsilon: f64,
    /// Scale of the latent perturbation in the cycle term.
    pub sigma_p: f64,
    /// Standard deviation of the Gaussian appearance likelihood.
    pub recon_sigma: f64,
    /// Weight of the fused-image reconstruction inside the recon term.
    pub fused_weight: f64,
    /// Final KL capacity in nats.
    pub c_max: f64,
    /// Fraction of joint steps over which the capacity ramps from 0 to `c_max`.
    pub ramp_fraction: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            lambda: 1.0,
            gamma: 100.0,
            eta: 1.0,
            epsilon: 1e-6,
            sigma_p: 1.0,
            recon_sigma: 0.1,
            fused_weight: 1.0,
            c_max: 20.0,
            ramp_fraction: 0.6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("fused_weight", self.fused_weight),
            ("c_max", self.c_max),
            ("sigma_p", self.sigma_p),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss.{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("loss.epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.recon_sigma > 0.0 && self.recon_sigma.is_finite()) {
            return Err(Error::Config(format!("loss.recon_sigma must be positive, got {}", self.recon_sigma)));
        }
        if !(0.0..=1.0).contains(&self.ramp_fraction) {
            return Err(Error::Config(format!("loss.ramp_fraction must lie in [0, 1], got {}", self.ramp_fraction)));
        }
        Ok(())
    }
}

/// Scalar values of every term for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    /// Appearance KL term as it enters the total (`|KL − C|` per object).
    pub kl_appearance: f64,
    /// Shape KL term as it enters the total.
    pub kl_shape: f64,
    /// Plain appearance KL summed over objects.
    pub kl_appearance_raw: f64,
    /// Plain shape KL summed over objects.
    pub kl_shape_raw: f64,
    pub l_sd: f64,
    pub l_pc: f64,
    pub total_min_player: f64,
    /// The same scalar as `total_min_player`; the players differ only in which
    /// parameters they move and in which direction.
    pub total_max_player: f64,
    pub capacity: f64,
}

/// Combines terms into the game value `recon + β·kl_a + λ·kl_s − γ·l_sd + η·l_pc`.
pub fn total_objective(recon: f64, kl_appearance: f64, kl_shape: f64, l_sd: f64, l_pc: f64, cfg: &LossConfig) -> LossBreakdown {
    let ibl = recon + cfg.beta * kl_appearance + cfg.lambda * kl_shape;
    let total = ibl - cfg.gamma * l_sd + cfg.eta * l_pc;
    LossBreakdown {
        recon,
        kl_appearance,
        kl_shape,
        kl_appearance_raw: kl_appearance,
        kl_shape_raw: kl_shape,
        l_sd,
        l_pc,
        total_min_player: total,
        total_max_player: total,
        capacity: 0.0,
    }
}

/// Reconstruction term averaged over the batch.
///
/// Per image: `Σ_k [ Σ (a_k − x·Ω_k)² / 2σ² + Σ BCE(m_k, Ω_k) ] + w · Σ (fused − x)² / 2σ²`.
/// `appearance`, `objects`: `[N·K, 3, H, W]`; `mask_logits`, `masks`: `[N·K, 1, H, W]`;
/// `fused`, `images`: `[N, 3, H, W]`.
#[allow(clippy::too_many_arguments)]
pub fn recon_graph<T: Scalar>(
    g: &mut Graph<T>,
    appearance: Var,
    mask_logits: Var,
    objects: Var,
    masks: Var,
    fused: Var,
    images: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let n = g.shape(images)[0] as f64;
    let inv = T::lit(1.0 / (2.0 * cfg.recon_sigma * cfg.recon_sigma));
    let d = g.sub(appearance, objects)?;
    let d = g.square(d);
    let app = g.sum(d);
    let app = g.mul_scalar(app, inv);
    let bce = g.bce_with_logits(mask_logits, masks)?;
    let bce = g.sum(bce);
    let mut total = g.add(app, bce)?;
    if cfg.fused_weight != 0.0 {
        let d = g.sub(fused, images)?;
        let d = g.square(d);
        let f = g.sum(d);
        let f = g.mul_scalar(f, T::lit(cfg.fused_weight) * inv);
        total = g.add(total, f)?;
    }
    Ok(g.mul_scalar(total, T::lit(1.0 / n)))
}

/// Per-object KL rows `[N·K, D]` → (batch-mean of `Σ_k |KL_k − C|`, batch-mean of `Σ_k KL_k`).
pub fn kl_term_graph<T: Scalar>(g: &mut Graph<T>, mean: Var, logvar: Var, n: usize, capacity: f64) -> Result<(Var, Var)> {
    let kl = kl_rows(g, mean, logvar)?;
    let raw = g.sum(kl);
    let raw = g.mul_scalar(raw, T::lit(1.0 / n as f64));
    let shifted = if capacity != 0.0 { g.add_scalar(kl, T::lit(-capacity)) } else { kl };
    let surrogate = g.abs(shifted);
    let surrogate = g.sum(surrogate);
    let surrogate = g.mul_scalar(surrogate, T::lit(1.0 / n as f64));
    Ok((surrogate, raw))
}

/// Per-image CIS loss `[N]`: `Σ_k ⟨Ω_k, |ψ_k − x|⟩ / (⟨Ω_k, |x|⟩ + ε)` with
/// `ψ_k = inpaint(Ω_k, x·(1 − Ω_k), edges)`.
///
/// `images: [N, C, H, W]`, `masks: [N, K, H, W]`, `edges: [N, 1, H, W]`. The
/// inpaint closure receives `[N·K, 1, H, W]` masks, `[N·K, C, H, W]` contexts and
/// `[N·K, 1, H, W]` edges and must return `[N·K, C, H, W]`.
pub fn cis_graph<T: Scalar>(
    g: &mut Graph<T>,
    images: Var,
    masks: Var,
    edges: Var,
    epsilon: f64,
    inpaint: &mut dyn FnMut(&mut Graph<T>, Var, Var, Var) -> Result<Var>,
) -> Result<Var> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("CIS epsilon must be positive, got {epsilon}")));
    }
    let xs = g.shape(images).to_vec();
    let ms = g.shape(masks).to_vec();
    if xs.len() != 4 || ms.len() != 4 || xs[0] != ms[0] || xs[2..] != ms[2..] {
        return Err(Error::Shape(format!("cis: images {xs:?} vs masks {ms:?}")));
    }
    let (n, c, k, h, w) = (xs[0], xs[1], ms[1], xs[2], xs[3]);
    let x5 = g.reshape(images, &[n, 1, c, h, w])?;
    let m5 = g.reshape(masks, &[n, k, 1, h, w])?;
    let keep = g.rsub_scalar(T::one(), m5);
    let ctx = g.mul(x5, keep)?;
    let ctx = g.reshape(ctx, &[n * k, c, h, w])?;
    let flat_masks = g.reshape(masks, &[n * k, 1, h, w])?;
    let e5 = g.reshape(edges, &[n, 1, 1, h, w])?;
    let e5 = g.broadcast_to(e5, &[n, k, 1, h, w])?;
    let flat_edges = g.reshape(e5, &[n * k, 1, h, w])?;
    let pred = inpaint(g, flat_masks, ctx, flat_edges)?;
    if g.shape(pred) != [n * k, c, h, w] {
        return Err(Error::Shape(format!("cis: inpainter returned {:?}", g.shape(pred))));
    }
    let pred = g.reshape(pred, &[n, k, c, h, w])?;
    let err = g.sub(pred, x5)?;
    let err = g.abs(err);
    let num = g.mul(m5, err)?;
    let num = g.sum_to(num, &[n, k, 1, 1, 1])?;
    let ax = g.abs(x5);
    let den = g.mul(m5, ax)?;
    let den = g.sum_to(den, &[n, k, 1, 1, 1])?;
    let den = g.add_scalar(den, T::lit(epsilon));
    let ratio = g.div(num, den)?;
    let per_image = g.sum_to(ratio, &[n, 1, 1, 1, 1])?;
    Ok(g.reshape(per_image, &[n])?)
}

/// Per-image elementwise L1 distance `[N]` between `[N, K, D]` latent sets.
pub fn latent_l1_graph<T: Scalar>(g: &mut Graph<T>, target: Var, recovered: Var) -> Result<Var> {
    let s = g.shape(target).to_vec();
    let d = g.sub(target, recovered)?;
    let d = g.abs(d);
    let d = g.sum_to(d, &[s[0], 1, 1])?;
    Ok(g.reshape(d, &[s[0]])?)
}

/// Random draws for one objective evaluation, taken up front so the forward
/// pass is a pure function of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNoise<T> {
    /// `[N·K, N_a]` reparameterization noise.
    pub appearance: Tensor<T>,
    /// `[N·K, N_s]` reparameterization noise.
    pub shape: Tensor<T>,
    /// Object perturbed by the cycle term, one per step.
    pub k_star: usize,
    /// `[N, N_a + N_s]` standard-normal perturbation direction.
    pub perturbation: Tensor<T>,
}

impl<T: Scalar> StepNoise<T> {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize, na: usize, ns: usize) -> Self {
        let mut normal = |len: usize| -> Vec<T> { (0..len).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect() };
        let appearance = Tensor::from_vec(&[n * k, na], normal(n * k * na)).expect("sized");
        let shape = Tensor::from_vec(&[n * k, ns], normal(n * k * ns)).expect("sized");
        let perturbation = Tensor::from_vec(&[n, na + ns], normal(n * (na + ns))).expect("sized");
        let k_star = rng.random_range(0..k);
        Self { appearance, shape, k_star, perturbation }
    }

    /// All-zero noise (posterior means, no perturbation).
    pub fn zeros(n: usize, k: usize, na: usize, ns: usize) -> Self {
        Self {
            appearance: Tensor::zeros(&[n * k, na]),
            shape: Tensor::zeros(&[n * k, ns]),
            k_star: 0,
            perturbation: Tensor::zeros(&[n, na + ns]),
        }
    }
}

/// Per-image cycle-consistency loss `[N]`.
///
/// `z_mean: [N, K, D]` posterior means. Object `k_star` is shifted by
/// `σ_p · perturbation`, the scene is decoded and fused, re-segmented and
/// re-encoded; the loss is the L1 distance between the edited latents and the
/// recovered posterior means.
pub fn cycle_graph<T: Scalar>(
    g: &mut Graph<T>,
    nets: &Networks<T>,
    p: &BoundNetworks,
    z_mean: Var,
    k_star: usize,
    perturbation: &Tensor<T>,
    sigma_p: f64,
) -> Result<Var> {
    let s = g.shape(z_mean).to_vec();
    let (n, k, d) = (s[0], s[1], s[2]);
    if k_star >= k || perturbation.shape() != [n, d] {
        return Err(Error::Shape(format!("cycle: k*={k_star} of {k}, perturbation {:?}", perturbation.shape())));
    }
    let mut delta = Tensor::<T>::zeros(&[n, k, d]);
    for i in 0..n {
        for j in 0..d {
            delta.set(&[i, k_star, j], T::lit(sigma_p) * perturbation.at(&[i, j]));
        }
    }
    let delta = g.constant(delta);
    let z_hat = g.add(z_mean, delta)?;
    let flat = g.reshape(z_hat, &[n * k, d])?;
    let decoded = nets.vae.decode_graph(g, &p.vae, flat)?;
    let resegmented = nets.seg.forward(g, &p.seg, decoded.fused)?;
    let ((ma, _), (ms, _)) = nets.encode_objects(g, p, decoded.fused, resegmented)?;
    let z_bar = g.concat(&[ma, ms], 1)?;
    let z_bar = g.reshape(z_bar, &[n, k, d])?;
    latent_l1_graph(g, z_hat, z_bar)
}

/// Which players the objective is assembled for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Segmentation against inpainter on `−γ·L_SD` alone.
    Warmup,
    /// All modules on the full objective.
    Joint,
}

/// Graph handles of one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub masks: Var,
    pub recon: Option<Var>,
    pub kl_appearance: Option<Var>,
    pub kl_shape: Option<Var>,
    pub kl_appearance_raw: Option<Var>,
    pub kl_shape_raw: Option<Var>,
    pub l_sd: Option<Var>,
    pub l_pc: Option<Var>,
    pub total: Var,
}

/// One batch of images with their edge maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `[N, 3, H, W]`.
    pub images: Tensor<T>,
    /// `[N, 1, H, W]`.
    pub edges: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_images(images: &[&ImageTensor], edge_threshold: f64) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Argument("empty batch".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut edges = Vec::with_capacity(images.len() * h * w);
        for img in images {
            edges.extend(crate::inpainter::binarize_edges(img, edge_threshold)?.to_tensor::<T>().into_data());
        }
        Ok(Self { images: ImageTensor::batch(images)?, edges: Tensor::from_vec(&[images.len(), 1, h, w], edges)? })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the game value for `phase` on one batch.
///
/// Terms whose weight is zero are not evaluated (their slot is `None`), so the
/// value with `γ = η = 0` is exactly the information-bottleneck sum.
pub fn game_objective<T: Scalar>(
    g: &mut Graph<T>,
    nets: &Networks<T>,
    p: &BoundNetworks,
    batch: &Batch<T>,
    cfg: &LossConfig,
    capacity: f64,
    noise: &StepNoise<T>,
    phase: Phase,
) -> Result<ObjectiveVars> {
    let n = batch.len();
    let (h, w, k) = (nets.height, nets.width, nets.k());
    let x = g.constant(batch.images.clone());
    let masks = nets.seg.forward(g, &p.seg, x)?;

    let l_sd = if cfg.gamma != 0.0 {
        let e = g.constant(batch.edges.clone());
        let inp = &nets.inpainter;
        let bound = &p.inpainter;
        let per_image = cis_graph(g, x, masks, e, cfg.epsilon, &mut |g, m, c, e| inp.forward(g, bound, m, c, e))?;
        let s = g.sum(per_image);
        Some(g.mul_scalar(s, T::lit(1.0 / n as f64)))
    } else {
        None
    };

    let mut out = ObjectiveVars {
        masks,
        recon: None,
        kl_appearance: None,
        kl_shape: None,
        kl_appearance_raw: None,
        kl_shape_raw: None,
        l_sd,
        l_pc: None,
        total: x,
    };

    if phase == Phase::Warmup {
        out.total = match l_sd {
            Some(l) => g.mul_scalar(l, T::lit(-cfg.gamma)),
            None => g.scalar(T::zero()),
        };
        return Ok(out);
    }

    let ((ma, la), (ms, ls)) = nets.encode_objects(g, p, x, masks)?;
    let za = reparam_graph(g, ma, la, noise.appearance.clone())?;
    let zs = reparam_graph(g, ms, ls, noise.shape.clone())?;
    let z = g.concat(&[za, zs], 1)?;
    let decoded = nets.vae.decode_graph(g, &p.vae, z)?;

    let x5 = g.reshape(x, &[n, 1, 3, h, w])?;
    let m5 = g.reshape(masks, &[n, k, 1, h, w])?;
    let objects = g.mul(x5, m5)?;
    let objects = g.reshape(objects, &[n * k, 3, h, w])?;
    let flat_masks = g.reshape(masks, &[n * k, 1, h, w])?;
    let recon = recon_graph(g, decoded.appearance, decoded.mask_logits, objects, flat_masks, decoded.fused, x, cfg)?;
    let (kla, kla_raw) = kl_term_graph(g, ma, la, n, capacity)?;
    let (kls, kls_raw) = kl_term_graph(g, ms, ls, n, capacity)?;

    let wa = g.mul_scalar(kla, T::lit(cfg.beta));
    let ws = g.mul_scalar(kls, T::lit(cfg.lambda));
    let mut total = g.add(recon, wa)?;
    total = g.add(total, ws)?;
    if let Some(l) = l_sd {
        let t = g.mul_scalar(l, T::lit(cfg.gamma));
        total = g.sub(total, t)?;
    }
    if cfg.eta != 0.0 {
        let means = g.concat(&[ma, ms], 1)?;
        let d = nets.config.latent_dim();
        let means = g.reshape(means, &[n, k, d])?;
        let per_image = cycle_graph(g, nets, p, means, noise.k_star, &noise.perturbation, cfg.sigma_p)?;
        let s = g.sum(per_image);
        let l = g.mul_scalar(s, T::lit(1.0 / n as f64));
        let t = g.mul_scalar(l, T::lit(cfg.eta));
        total = g.add(total, t)?;
        out.l_pc = Some(l);
    }
    out.recon = Some(recon);
    out.kl_appearance = Some(kla);
    out.kl_shape = Some(kls);
    out.kl_appearance_raw = Some(kla_raw);
    out.kl_shape_raw = Some(kls_raw);
    out.total = total;
    Ok(out)
}

/// Reads the scalar values of an evaluated objective, failing on the first non-finite term.
pub fn read_breakdown<T: Scalar>(g: &Graph<T>, v: &ObjectiveVars, capacity: f64) -> Result<LossBreakdown> {
    let read = |name: &str, var: Option<Var>| -> Result<f64> {
        let Some(var) = var else { return Ok(0.0) };
        let value = g.value(var).item().as_f64();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite(format!("{name} is {value}")))
        }
    };
    let total = read("total", Some(v.total))?;
    Ok(LossBreakdown {
        recon: read("recon", v.recon)?,
        kl_appearance: read("kl_appearance", v.kl_appearance)?,
        kl_shape: read("kl_shape", v.kl_shape)?,
        kl_appearance_raw: read("kl_appearance_raw", v.kl_appearance_raw)?,
        kl_shape_raw: read("kl_shape_raw", v.kl_shape_raw)?,
        l_sd: read("l_sd", v.l_sd)?,
        l_pc: read("l_pc", v.l_pc)?,
        total_min_player: total,
        total_max_player: total,
        capacity,
    })
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} is {v}")))
    }
}

fn check_mask_shape<T: Scalar>(masks: &MaskStack<T>, h: usize, w: usize) -> Result<()> {
    if masks.height() != h || masks.width() != w {
        return Err(Error::Shape(format!("masks {}x{} vs image {h}x{w}", masks.height(), masks.width())));
    }
    Ok(())
}

/// Information-bottleneck sum for one scene from already-decoded outputs.
///
/// Returns a breakdown whose `total_min_player` is `recon + β·kl_a + λ·kl_s`
/// (KL terms as `|KL − C|` per object); `l_sd` and `l_pc` are zero.
pub fn object_ibl_loss<T: Scalar>(
    decoded: &DecodedScene<T>,
    masks: &MaskStack<T>,
    image: &ImageTensor,
    latents: &ObjectLatentSet,
    cfg: &LossConfig,
    capacity: f64,
) -> Result<LossBreakdown> {
    let (h, w, k) = (image.height(), image.width(), masks.k());
    check_mask_shape(masks, h, w)?;
    if decoded.k() != k || latents.k() != k {
        return Err(Error::Shape(format!("{k} masks, {} decoded objects, {} latents", decoded.k(), latents.k())));
    }
    let mut g = Graph::<T>::new();
    let x = g.constant(image.to_chw::<T>().reshape(&[1, 3, h, w])?);
    let m = g.constant(masks.values().clone().reshape(&[1, k, h, w])?);
    let x5 = g.reshape(x, &[1, 1, 3, h, w])?;
    let m5 = g.reshape(m, &[1, k, 1, h, w])?;
    let objects = g.mul(x5, m5)?;
    let objects = g.reshape(objects, &[k, 3, h, w])?;
    let flat_masks = g.reshape(m, &[k, 1, h, w])?;
    let app = g.constant(decoded.appearance.clone());
    let logits = g.constant(decoded.mask_logits.clone());
    let fused = g.constant(decoded.fused.clone().reshape(&[1, 3, h, w])?);
    let recon = recon_graph(&mut g, app, logits, objects, flat_masks, fused, x, cfg)?;

    let rows = |ps: &[crate::objvae::GaussianPosterior], mean: bool| -> Result<Tensor<T>> {
        let d = ps.first().map_or(0, |p| p.dim());
        let data = ps.iter().flat_map(|p| if mean { p.mean.clone() } else { p.logvar.clone() }).map(T::lit).collect();
        Ok(Tensor::from_vec(&[ps.len(), d], data)?)
    };
    let ma = g.constant(rows(&latents.appearance, true)?);
    let la = g.constant(rows(&latents.appearance, false)?);
    let ms = g.constant(rows(&latents.shape, true)?);
    let ls = g.constant(rows(&latents.shape, false)?);
    let (kla, kla_raw) = kl_term_graph(&mut g, ma, la, 1, capacity)?;
    let (kls, kls_raw) = kl_term_graph(&mut g, ms, ls, 1, capacity)?;
    let wa = g.mul_scalar(kla, T::lit(cfg.beta));
    let ws = g.mul_scalar(kls, T::lit(cfg.lambda));
    let total = g.add(recon, wa)?;
    let total = g.add(total, ws)?;
    let v = |var: Var| g.value(var).item().as_f64();
    let total = finite("ibl total", v(total))?;
    Ok(LossBreakdown {
        recon: finite("recon", v(recon))?,
        kl_appearance: finite("kl_appearance", v(kla))?,
        kl_shape: finite("kl_shape", v(kls))?,
        kl_appearance_raw: v(kla_raw),
        kl_shape_raw: v(kls_raw),
        l_sd: 0.0,
        l_pc: 0.0,
        total_min_player: total,
        total_max_player: total,
        capacity,
    })
}

/// CIS loss for one image, with `inpaint(mask, context, edges)` evaluated per channel.
pub fn cis_loss<T: Scalar>(
    inpaint: &mut dyn FnMut(&[T], &ImageTensor, &EdgeMap) -> Result<ImageTensor>,
    masks: &MaskStack<T>,
    image: &ImageTensor,
    edges: &EdgeMap,
    epsilon: f64,
) -> Result<f64> {
    let (h, w, k) = (image.height(), image.width(), masks.k());
    check_mask_shape(masks, h, w)?;
    let mut g = Graph::<T>::new();
    let x = g.constant(image.to_chw::<T>().reshape(&[1, 3, h, w])?);
    let m = g.constant(masks.values().clone().reshape(&[1, k, h, w])?);
    let e = g.constant(edges.to_tensor::<T>().reshape(&[1, 1, h, w])?);
    let mut call = |g: &mut Graph<T>, m: Var, c: Var, _e: Var| -> Result<Var> {
        let mut preds = Vec::with_capacity(k);
        for ch in 0..k {
            let ctx = ImageTensor::from_chw(&g.value(c).index_first(ch))?;
            let mask = g.value(m).index_first(ch).into_data();
            preds.push(inpaint(&mask, &ctx, edges)?.to_chw::<T>());
        }
        Ok(g.constant(Tensor::stack(&preds)?))
    };
    let per_image = cis_graph(&mut g, x, m, e, epsilon, &mut call)?;
    finite("l_sd", g.value(per_image).item().as_f64())
}

/// Cycle-consistency loss for one scene using posterior means from `latents`.
pub fn cycle_consistency_loss<T: Scalar, R: Rng + ?Sized>(
    nets: &Networks<T>,
    latents: &ObjectLatentSet,
    rng: &mut R,
    sigma_p: f64,
) -> Result<f64> {
    let k = nets.k();
    let d = nets.config.latent_dim();
    let means = latents.means();
    if means.len() != k || means.iter().any(|z| z.len() != d) {
        return Err(Error::Shape(format!("cycle loss needs {k} latents of length {d}")));
    }
    let noise = StepNoise::<T>::sample(rng, 1, k, nets.config.appearance_dim, nets.config.shape_dim);
    let mut g = Graph::new();
    let p = nets.bind_frozen(&mut g);
    let z = g.constant(Tensor::from_vec(&[1, k, d], means.iter().flatten().map(|&v| T::lit(v)).collect())?);
    let l = cycle_graph(&mut g, nets, &p, z, noise.k_star, &noise.perturbation, sigma_p)?;
    finite("l_pc", g.value(l).item().as_f64())
}

/// Plain-value L1 cycle distance: `Σ_{l≠k} |z_l − z̄_l|₁ + |ẑ_k − z̄_k|₁`.
pub fn cycle_distance(z: &[Vec<f64>], k_star: usize, z_hat_k: &[f64], z_bar: &[Vec<f64>]) -> Result<f64> {
    if z.len() != z_bar.len() || k_star >= z.len() {
        return Err(Error::Shape("cycle distance: mismatched latent sets".into()));
    }
    let k = z.len();
    let d = z_hat_k.len();
    let mut target = Tensor::<f64>::zeros(&[1, k, d]);
    let mut recovered = Tensor::<f64>::zeros(&[1, k, d]);
    for l in 0..k {
        let src = if l == k_star { z_hat_k } else { &z[l] };
        if src.len() != d || z_bar[l].len() != d {
            return Err(Error::Shape("cycle distance: latent length mismatch".into()));
        }
        for j in 0..d {
            target.set(&[0, l, j], src[j]);
            recovered.set(&[0, l, j], z_bar[l][j]);
        }
    }
    let mut g = Graph::new();
    let t = g.constant(target);
    let r = g.constant(recovered);
    let v = latent_l1_graph(&mut g, t, r)?;
    Ok(g.value(v).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_cis_toy() {
        // 2×2 image, first pixel white, mask on that pixel only, inpainter predicts zeros.
        let image = ImageTensor::from_fn(2, 2, |i, j| if (i, j) == (0, 0) { [1.0; 3] } else { [0.0; 3] });
        let mut m = vec![0.0f64; 8];
        m[0] = 1.0;
        m[5] = 1.0;
        m[6] = 1.0;
        m[7] = 1.0;
        let masks = MaskStack::new(Tensor::from_vec(&[2, 2, 2], m).unwrap()).unwrap();
        let edges = EdgeMap { height: 2, width: 2, values: vec![0; 4] };
        let eps = 1e-6;
        let mut zero = |_: &[f64], c: &ImageTensor, _: &EdgeMap| Ok(ImageTensor::new(c.height(), c.width()));
        let v = cis_loss(&mut zero, &masks, &image, &edges, eps).unwrap();
        // Channel 1 covers only black pixels: numerator 0.
        assert!((v - 3.0 / (3.0 + eps)).abs() < 1e-12);
        assert!(cis_loss(&mut zero, &masks, &image, &edges, 0.0).is_err());
    }

    #[test]
    fn perfect_inpainting_gives_zero() {
        let image = ImageTensor::from_fn(4, 4, |i, j| [i as f32 / 4.0, j as f32 / 4.0, 0.5]);
        let masks = MaskStack::<f64>::new(Tensor::full(&[2, 4, 4], 0.5)).unwrap();
        let edges = EdgeMap { height: 4, width: 4, values: vec![0; 16] };
        let img = image.clone();
        let mut perfect = |_: &[f64], _: &ImageTensor, _: &EdgeMap| Ok(img.clone());
        assert_eq!(cis_loss(&mut perfect, &masks, &image, &edges, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn total_with_zero_game_weights_is_the_ibl_sum() {
        let cfg = LossConfig { gamma: 0.0, eta: 0.0, beta: 0.7, lambda: 1.3, ..Default::default() };
        let b = total_objective(12.25, 3.5, 1.75, 0.9, 4.0, &cfg);
        assert_eq!(b.total_min_player.to_bits(), (12.25 + 0.7 * 3.5 + 1.3 * 1.75f64).to_bits());
        let cfg = LossConfig { gamma: 2.0, ..cfg };
        let shifted = total_objective(12.25, 3.5, 1.75, 0.9 + 0.5, 4.0, &cfg);
        let base = total_objective(12.25, 3.5, 1.75, 0.9, 4.0, &cfg);
        assert!((base.total_min_player - shifted.total_min_player - 2.0 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn cycle_distance_perfect_cycle_is_zero() {
        let z = vec![vec![0.1, 0.2], vec![-1.0, 3.0]];
        let z_hat = vec![0.5, 0.5];
        let z_bar = vec![vec![0.1, 0.2], z_hat.clone()];
        assert_eq!(cycle_distance(&z, 1, &z_hat, &z_bar).unwrap(), 0.0);
    }
}
