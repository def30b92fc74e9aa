//! The conditional inpainting network and its edge conditioning.
//!
//! Two symmetric convolutional encoders read `[edges, mask]` and
//! `[context, mask]`; a joint decoder with skips from both predicts the full
//! image through a final sigmoid.

use objman_tensor::nn::{Bound, Conv2d, ParamSet};
use objman_tensor::optim::{Adam, AdamConfig};
use objman_tensor::{ConvGeom, Graph, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::{Error, Result};

/// Input sides must be multiples of this.
pub const INPAINT_STRIDE: usize = 4;

/// Binary edge map, row-major, values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<u8>,
}

impl EdgeMap {
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.width + j]
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    /// `[1, H, W]` tensor of zeros and ones.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(&[1, self.height, self.width], data).expect("sized from the map")
    }
}

/// Thresholded central-difference luminance gradient magnitude (borders clamped).
pub fn binarize_edges(image: &ImageTensor, threshold: f64) -> Result<EdgeMap> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("edge threshold must be positive, got {threshold}")));
    }
    let (h, w) = (image.height(), image.width());
    let lum = image.luminance();
    let at = |i: usize, j: usize| lum[i * w + j] as f64;
    let mut values = vec![0u8; h * w];
    for i in 0..h {
        for j in 0..w {
            let gx = (at(i, (j + 1).min(w - 1)) - at(i, j.saturating_sub(1))) / 2.0;
            let gy = (at((i + 1).min(h - 1), j) - at(i.saturating_sub(1), j)) / 2.0;
            if (gx * gx + gy * gy).sqrt() > threshold {
                values[i * w + j] = 1;
            }
        }
    }
    Ok(EdgeMap { height: h, width: w, values })
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// `H × W` mask with ones inside `rect` (clipped to the image).
pub fn rect_mask(h: usize, w: usize, rect: Rect) -> Vec<f32> {
    let mut m = vec![0.0; h * w];
    for i in rect.top..(rect.top + rect.height).min(h) {
        for j in rect.left..(rect.left + rect.width).min(w) {
            m[i * w + j] = 1.0;
        }
    }
    m
}

/// Rectangle with sides drawn from `[min_frac, max_frac]` of the image sides and a uniform position.
pub fn random_rect<R: Rng + ?Sized>(h: usize, w: usize, min_frac: f64, max_frac: f64, rng: &mut R) -> Rect {
    let side = |n: usize, rng: &mut R| {
        let lo = ((n as f64 * min_frac).round() as usize).clamp(1, n);
        let hi = ((n as f64 * max_frac).round() as usize).clamp(lo, n);
        rng.random_range(lo..=hi)
    };
    let height = side(h, rng);
    let width = side(w, rng);
    let top = rng.random_range(0..=h - height);
    let left = rng.random_range(0..=w - width);
    Rect { top, left, height, width }
}

/// Random rectangle mask with the default pretraining size range.
pub fn random_rect_mask<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Vec<f32> {
    let d = PretrainConfig::default();
    rect_mask(h, w, random_rect(h, w, d.rect_min_frac, d.rect_max_frac, rng))
}

#[derive(Clone, Debug)]
struct Encoder {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
}

impl Encoder {
    fn new<T: Scalar, R: Rng + ?Sized>(ps: &mut ParamSet<T>, name: &str, input: usize, c: usize, rng: &mut R) -> Self {
        let same = ConvGeom::same(3, 1);
        let down = ConvGeom::new(2, 1, 1);
        Self {
            c1: Conv2d::new(ps, &format!("{name}.c1"), input, c, 3, same, rng),
            c2: Conv2d::new(ps, &format!("{name}.c2"), c, 2 * c, 3, down, rng),
            c3: Conv2d::new(ps, &format!("{name}.c3"), 2 * c, 4 * c, 3, down, rng),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<[Var; 3]> {
        let a1 = self.c1.forward(g, p, x)?;
        let a1 = g.relu(a1);
        let a2 = self.c2.forward(g, p, a1)?;
        let a2 = g.relu(a2);
        let a3 = self.c3.forward(g, p, a2)?;
        let a3 = g.relu(a3);
        Ok([a1, a2, a3])
    }
}

#[derive(Clone, Debug)]
pub struct Inpainter<T> {
    pub params: ParamSet<T>,
    edge_enc: Encoder,
    ctx_enc: Encoder,
    bottleneck: Conv2d,
    dec2: Conv2d,
    dec1: Conv2d,
    head: Conv2d,
}

impl<T: Scalar> Inpainter<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("inpainter width must be positive".into()));
        }
        let c = width;
        let mut ps = ParamSet::new();
        let edge_enc = Encoder::new(&mut ps, "inp.edge", 2, c, rng);
        let ctx_enc = Encoder::new(&mut ps, "inp.ctx", 4, c, rng);
        let same = ConvGeom::same(3, 1);
        let bottleneck = Conv2d::new(&mut ps, "inp.mid", 8 * c, 4 * c, 3, ConvGeom::same(3, 2), rng);
        let dec2 = Conv2d::new(&mut ps, "inp.dec2", 8 * c, 2 * c, 3, same, rng);
        let dec1 = Conv2d::new(&mut ps, "inp.dec1", 4 * c, c, 3, same, rng);
        let head = Conv2d::new(&mut ps, "inp.head", c, 3, 1, ConvGeom::new(1, 0, 1), rng);
        Ok(Self { params: ps, edge_enc, ctx_enc, bottleneck, dec2, dec1, head })
    }

    /// Swaps in parameters of another float type, keeping the architecture.
    pub fn with_params<U: Scalar>(&self, params: ParamSet<U>) -> Inpainter<U> {
        Inpainter {
            params,
            edge_enc: self.edge_enc.clone(),
            ctx_enc: self.ctx_enc.clone(),
            bottleneck: self.bottleneck.clone(),
            dec2: self.dec2.clone(),
            dec1: self.dec1.clone(),
            head: self.head.clone(),
        }
    }

    /// `mask: [N,1,H,W]`, `context: [N,3,H,W]`, `edges: [N,1,H,W]` → `[N,3,H,W]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, mask: Var, context: Var, edges: Var) -> Result<Var> {
        let cs = g.shape(context).to_vec();
        if cs.len() != 4 || cs[1] != 3 {
            return Err(Error::Shape(format!("inpainter context must be [N, 3, H, W], got {cs:?}")));
        }
        let single = [cs[0], 1, cs[2], cs[3]];
        if g.shape(mask) != single || g.shape(edges) != single {
            return Err(Error::Shape(format!(
                "inpainter mask {:?} and edges {:?} must be {single:?}",
                g.shape(mask),
                g.shape(edges)
            )));
        }
        if cs[2] % INPAINT_STRIDE != 0 || cs[3] % INPAINT_STRIDE != 0 {
            return Err(Error::Shape(format!("image sides must be multiples of {INPAINT_STRIDE}, got {cs:?}")));
        }
        let ex = g.concat(&[edges, mask], 1)?;
        let cx = g.concat(&[context, mask], 1)?;
        let [e1, e2, e3] = self.edge_enc.forward(g, p, ex)?;
        let [c1, c2, c3] = self.ctx_enc.forward(g, p, cx)?;

        let b = g.concat(&[c3, e3], 1)?;
        let b = self.bottleneck.forward(g, p, b)?;
        let b = g.relu(b);
        let up = g.upsample(b, 2)?;
        let d2 = g.concat(&[up, c2, e2], 1)?;
        let d2 = self.dec2.forward(g, p, d2)?;
        let d2 = g.relu(d2);
        let up = g.upsample(d2, 2)?;
        let d1 = g.concat(&[up, c1, e1], 1)?;
        let d1 = self.dec1.forward(g, p, d1)?;
        let d1 = g.relu(d1);
        let out = self.head.forward(g, p, d1)?;
        Ok(g.sigmoid(out))
    }

    /// Inference for one `H × W` mask, context image and edge map.
    pub fn inpaint(&self, mask: &[f32], context: &ImageTensor, edges: &EdgeMap) -> Result<ImageTensor> {
        let (h, w) = (context.height(), context.width());
        if mask.len() != h * w || edges.height != h || edges.width != w {
            return Err(Error::Shape(format!(
                "inpaint: mask of {} pixels and {}x{} edges for a {h}x{w} context",
                mask.len(),
                edges.height,
                edges.width
            )));
        }
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let m = g.constant(Tensor::from_vec(&[1, 1, h, w], mask.iter().map(|&v| T::lit(v as f64)).collect())?);
        let c = g.constant(context.to_chw::<T>().reshape(&[1, 3, h, w])?);
        let e = g.constant(edges.to_tensor::<T>().reshape(&[1, 1, h, w])?);
        let out = self.forward(&mut g, &p, m, c, e)?;
        ImageTensor::from_chw(&g.value(out).clone().reshape(&[3, h, w])?)
    }
}

/// Mean absolute error per masked pixel and channel: `Σ m·|pred − x| / (3·Σ m)`.
pub fn masked_l1<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, mask: Var) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let diff = g.abs(diff);
    let weighted = g.mul(diff, mask)?;
    let num = g.sum(weighted);
    let area = g.sum(mask);
    let area = g.mul_scalar(area, T::lit(3.0));
    let area = g.add_scalar(area, T::lit(1e-8));
    Ok(g.div(num, area)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rect_min_frac: f64,
    pub rect_max_frac: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 5000, batch_size: 16, lr: 1e-3, rect_min_frac: 0.15, rect_max_frac: 0.5 }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be at least 1".into()));
        }
        if !(self.rect_min_frac > 0.0 && self.rect_min_frac <= self.rect_max_frac && self.rect_max_frac <= 1.0) {
            return Err(Error::Config("pretrain rectangle fractions must satisfy 0 < min <= max <= 1".into()));
        }
        Ok(())
    }
}

/// Images, rectangle masks and edges for one pretraining step.
#[derive(Clone, Debug)]
pub struct PretrainBatch<T> {
    pub images: Tensor<T>,
    pub masks: Tensor<T>,
    pub edges: Tensor<T>,
}

impl<T: Scalar> PretrainBatch<T> {
    /// Builds a batch from chosen images, drawing one rectangle per image.
    pub fn build<R: Rng + ?Sized>(
        images: &[&ImageTensor],
        config: &PretrainConfig,
        edge_threshold: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Argument("empty pretraining batch".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut masks = Vec::with_capacity(images.len() * h * w);
        let mut edges = Vec::with_capacity(images.len() * h * w);
        for img in images {
            let r = random_rect(h, w, config.rect_min_frac, config.rect_max_frac, rng);
            masks.extend(rect_mask(h, w, r).into_iter().map(|v| T::lit(v as f64)));
            edges.extend(binarize_edges(img, edge_threshold)?.to_tensor::<T>().into_data());
        }
        let n = images.len();
        Ok(Self {
            images: ImageTensor::batch(images)?,
            masks: Tensor::from_vec(&[n, 1, h, w], masks)?,
            edges: Tensor::from_vec(&[n, 1, h, w], edges)?,
        })
    }

    /// Samples `batch_size` images with replacement.
    pub fn sample<R: Rng + ?Sized>(
        pool: &[ImageTensor],
        config: &PretrainConfig,
        edge_threshold: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Argument("empty pretraining dataset".into()));
        }
        let chosen: Vec<&ImageTensor> =
            (0..config.batch_size).map(|_| &pool[rng.random_range(0..pool.len())]).collect();
        Self::build(&chosen, config, edge_threshold, rng)
    }
}

fn batch_loss<T: Scalar>(inp: &Inpainter<T>, g: &mut Graph<T>, p: &Bound, b: &PretrainBatch<T>) -> Result<Var> {
    let x = g.constant(b.images.clone());
    let m = g.constant(b.masks.clone());
    let e = g.constant(b.edges.clone());
    let keep = g.rsub_scalar(T::one(), m);
    let ctx = g.mul(x, keep)?;
    let pred = inp.forward(g, p, m, ctx, e)?;
    masked_l1(g, pred, x, m)
}

/// Masked-region mean L1 of the current network on a fixed batch.
pub fn evaluate_masked_l1<T: Scalar>(inp: &Inpainter<T>, batch: &PretrainBatch<T>) -> Result<f64> {
    let mut g = Graph::new();
    let p = inp.params.bind_frozen(&mut g);
    let l = batch_loss(inp, &mut g, &p, batch)?;
    Ok(g.value(l).item().as_f64())
}

/// One Adam step on the masked-region L1; returns the loss before the update.
pub fn pretrain_step<T: Scalar>(inp: &mut Inpainter<T>, adam: &mut Adam<T>, batch: &PretrainBatch<T>) -> Result<f64> {
    let mut g = Graph::new();
    let p = inp.params.bind(&mut g);
    let l = batch_loss(inp, &mut g, &p, batch)?;
    let value = g.value(l).item().as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("inpainter pretraining loss is {value}")));
    }
    let grads = g.backward(l)?;
    adam.step(&mut inp.params, &p.grads(&g, &grads))?;
    Ok(value)
}

/// Runs `config.steps` pretraining steps on images drawn from `pool`; returns the loss history.
pub fn pretrain_inpainter<T: Scalar, R: Rng + ?Sized>(
    inp: &mut Inpainter<T>,
    pool: &[ImageTensor],
    config: &PretrainConfig,
    edge_threshold: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &inp.params);
    let mut history = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let batch = PretrainBatch::sample(pool, config, edge_threshold, rng)?;
        history.push(pretrain_step(inp, &mut adam, &batch)?);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step_image(h: usize, w: usize, col: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, |_, j| if j < col { [0.0; 3] } else { [1.0; 3] })
    }

    #[test]
    fn constant_image_has_no_edges() {
        let e = binarize_edges(&ImageTensor::filled(8, 8, [0.4, 0.2, 0.9]), 0.1).unwrap();
        assert_eq!(e.count(), 0);
    }

    #[test]
    fn vertical_step_marks_the_two_adjacent_columns() {
        let (h, w, col) = (6, 10, 4);
        let e = binarize_edges(&step_image(h, w, col), 0.1).unwrap();
        for i in 0..h {
            for j in 0..w {
                let expected = u8::from(j == col - 1 || j == col);
                assert_eq!(e.get(i, j), expected, "({i},{j})");
            }
        }
        // Central difference across the step is 0.5, so a higher threshold clears it.
        assert_eq!(binarize_edges(&step_image(h, w, col), 0.6).unwrap().count(), 0);
        assert!(binarize_edges(&step_image(h, w, col), 0.0).is_err());
    }

    #[test]
    fn rect_masks() {
        let full = rect_mask(4, 5, Rect { top: 0, left: 0, height: 4, width: 5 });
        assert!(full.iter().all(|&v| v == 1.0));
        let corner = rect_mask(4, 5, Rect { top: 0, left: 0, height: 1, width: 1 });
        assert_eq!(corner.iter().sum::<f32>(), 1.0);
        assert_eq!(corner[0], 1.0);
        let a = random_rect_mask(16, 16, &mut ChaCha8Rng::seed_from_u64(3));
        let b = random_rect_mask(16, 16, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn random_rect_stays_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let r = random_rect(12, 20, 0.1, 1.0, &mut rng);
            assert!(r.height >= 1 && r.width >= 1);
            assert!(r.top + r.height <= 12 && r.left + r.width <= 20);
        }
    }

    #[test]
    fn output_matches_input_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Inpainter::<f32>::new(4, &mut rng).unwrap();
        let img = ImageTensor::from_fn(8, 12, |i, j| [i as f32 / 8.0, j as f32 / 12.0, 0.5]);
        let mask = rect_mask(8, 12, Rect { top: 2, left: 3, height: 4, width: 4 });
        let edges = binarize_edges(&img, 0.1).unwrap();
        let out = net.inpaint(&mask, &img, &edges).unwrap();
        assert_eq!((out.height(), out.width()), (8, 12));
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(net.inpaint(&mask[1..], &img, &edges).is_err());
    }

    #[test]
    fn zero_steps_leave_params_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Inpainter::<f32>::new(4, &mut rng).unwrap();
        let before = net.params.clone();
        let pool = vec![ImageTensor::filled(8, 8, [0.5; 3])];
        let cfg = PretrainConfig { steps: 0, ..PretrainConfig::default() };
        let h = pretrain_inpainter(&mut net, &pool, &cfg, 0.1, &mut rng).unwrap();
        assert!(h.is_empty());
        assert_eq!(net.params, before);
    }
}
