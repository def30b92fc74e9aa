//! The K-way segmentation network.
//!
//! A small fully convolutional encoder-decoder: two stride-2 stages, four
//! parallel dilated 3×3 branches summed at the bottleneck, and two upsampling
//! stages with skips. A per-pixel softmax over channels makes the output a
//! simplex at every pixel. Two coordinate channels are appended to the input.

use objman_tensor::nn::{Bound, Conv2d, ParamSet};
use objman_tensor::{ConvGeom, Graph, Scalar, Tensor, Var};
use rand::Rng;

use crate::image::{ImageTensor, LabelMap};
use crate::{Error, Result};

/// Output stride of the backbone; input sides must be multiples of it.
pub const SEG_STRIDE: usize = 4;
const DILATIONS: [usize; 4] = [1, 2, 4, 8];

/// `K` soft masks over an `H × W` image, stored `[K, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStack<T> {
    values: Tensor<T>,
}

impl<T: Scalar> MaskStack<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.ndim() != 3 {
            return Err(Error::Shape(format!("mask stack must be [K, H, W], got {:?}", values.shape())));
        }
        Ok(Self { values })
    }

    /// One-hot stack from a label map with `k` channels.
    pub fn one_hot(labels: &LabelMap, k: usize) -> Result<Self> {
        let plane = labels.height * labels.width;
        let mut data = vec![T::zero(); k * plane];
        for (p, &l) in labels.labels.iter().enumerate() {
            let l = l as usize;
            if l >= k {
                return Err(Error::Shape(format!("label {l} needs more than {k} channels")));
            }
            data[l * plane + p] = T::one();
        }
        Self::new(Tensor::from_vec(&[k, labels.height, labels.width], data)?)
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> T {
        self.values.at(&[k, i, j])
    }

    /// Channel `k` as a row-major `H × W` slice.
    pub fn channel(&self, k: usize) -> &[T] {
        let plane = self.height() * self.width();
        &self.values.data()[k * plane..(k + 1) * plane]
    }

    /// Largest deviation of a per-pixel channel sum from one.
    pub fn simplex_error(&self) -> f64 {
        let plane = self.height() * self.width();
        (0..plane)
            .map(|p| {
                let s: f64 = (0..self.k()).map(|k| self.values.data()[k * plane + p].as_f64()).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Per-pixel argmax; ties go to the lowest channel index.
    pub fn hard_assign(&self) -> LabelMap {
        let (h, w, k) = (self.height(), self.width(), self.k());
        let plane = h * w;
        let d = self.values.data();
        let labels = (0..plane)
            .map(|p| {
                let mut best = 0;
                for c in 1..k {
                    if d[c * plane + p] > d[best * plane + p] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap { height: h, width: w, labels }
    }
}

/// `[2, H, W]` normalized x and y coordinates in `[-1, 1]`.
pub fn coordinate_planes<T: Scalar>(h: usize, w: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(2 * h * w);
    let norm = |i: usize, n: usize| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
    for _ in 0..h {
        for j in 0..w {
            data.push(T::lit(norm(j, w)));
        }
    }
    for i in 0..h {
        for _ in 0..w {
            data.push(T::lit(norm(i, h)));
        }
    }
    Tensor::from_vec(&[2, h, w], data).expect("sized above")
}

#[derive(Clone, Debug)]
pub struct SegNet<T> {
    pub params: ParamSet<T>,
    k: usize,
    enc1: Conv2d,
    enc2: Conv2d,
    enc3: Conv2d,
    branches: Vec<Conv2d>,
    dec2: Conv2d,
    dec1: Conv2d,
    head: Conv2d,
}

impl<T: Scalar> SegNet<T> {
    pub fn new<R: Rng + ?Sized>(k: usize, width: usize, rng: &mut R) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("segmentation needs K >= 2, got {k}")));
        }
        if width == 0 {
            return Err(Error::Config("segmentation width must be positive".into()));
        }
        let c = width;
        let mut ps = ParamSet::new();
        let same = ConvGeom::same(3, 1);
        let down = ConvGeom::new(2, 1, 1);
        let enc1 = Conv2d::new(&mut ps, "seg.enc1", 5, c, 3, same, rng);
        let enc2 = Conv2d::new(&mut ps, "seg.enc2", c, 2 * c, 3, down, rng);
        let enc3 = Conv2d::new(&mut ps, "seg.enc3", 2 * c, 2 * c, 3, down, rng);
        let branches = DILATIONS
            .iter()
            .map(|&d| Conv2d::new(&mut ps, &format!("seg.dil{d}"), 2 * c, 2 * c, 3, ConvGeom::same(3, d), rng))
            .collect();
        let dec2 = Conv2d::new(&mut ps, "seg.dec2", 4 * c, c, 3, same, rng);
        let dec1 = Conv2d::new(&mut ps, "seg.dec1", 2 * c, c, 3, same, rng);
        let head = Conv2d::new(&mut ps, "seg.head", c, k, 1, ConvGeom::new(1, 0, 1), rng);
        Ok(Self { params: ps, k, enc1, enc2, enc3, branches, dec2, dec1, head })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Swaps in parameters of another float type, keeping the architecture.
    pub fn with_params<U: Scalar>(&self, params: ParamSet<U>) -> SegNet<U> {
        SegNet {
            params,
            k: self.k,
            enc1: self.enc1.clone(),
            enc2: self.enc2.clone(),
            enc3: self.enc3.clone(),
            branches: self.branches.clone(),
            dec2: self.dec2.clone(),
            dec1: self.dec1.clone(),
            head: self.head.clone(),
        }
    }

    /// `images: [N, 3, H, W]` → masks `[N, K, H, W]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, images: Var) -> Result<Var> {
        let s = g.shape(images).to_vec();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("segmentation input must be [N, 3, H, W], got {s:?}")));
        }
        let (n, h, w) = (s[0], s[2], s[3]);
        if h % SEG_STRIDE != 0 || w % SEG_STRIDE != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("image sides {h}x{w} must be positive multiples of {SEG_STRIDE}")));
        }
        let coords = coordinate_planes::<T>(h, w).reshape(&[1, 2, h, w])?;
        let coords = g.constant(coords);
        let coords = g.broadcast_to(coords, &[n, 2, h, w])?;
        let x = g.concat(&[images, coords], 1)?;

        let e1 = self.enc1.forward(g, p, x)?;
        let e1 = g.relu(e1);
        let e2 = self.enc2.forward(g, p, e1)?;
        let e2 = g.relu(e2);
        let e3 = self.enc3.forward(g, p, e2)?;
        let e3 = g.relu(e3);

        let mut agg = self.branches[0].forward(g, p, e3)?;
        for b in &self.branches[1..] {
            let y = b.forward(g, p, e3)?;
            agg = g.add(agg, y)?;
        }
        let agg = g.relu(agg);

        let up = g.upsample(agg, 2)?;
        let d2 = g.concat(&[up, e2], 1)?;
        let d2 = self.dec2.forward(g, p, d2)?;
        let d2 = g.relu(d2);
        let up = g.upsample(d2, 2)?;
        let d1 = g.concat(&[up, e1], 1)?;
        let d1 = self.dec1.forward(g, p, d1)?;
        let d1 = g.relu(d1);
        let logits = self.head.forward(g, p, d1)?;
        Ok(g.softmax(logits, 1)?)
    }

    /// Inference on one image.
    pub fn segment(&self, image: &ImageTensor) -> Result<MaskStack<T>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = image.to_chw::<T>().reshape(&[1, 3, image.height(), image.width()])?;
        let x = g.constant(x);
        let m = self.forward(&mut g, &p, x)?;
        let t = g.value(m).clone();
        let (h, w) = (image.height(), image.width());
        MaskStack::new(t.reshape(&[self.k, h, w])?)
    }
}
