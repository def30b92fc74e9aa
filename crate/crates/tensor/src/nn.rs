//! Named parameter collections and the few layer types the models need.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{ConvGeom, Error, Grads, Graph, Result, Scalar, Tensor, Var};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.entries.push((name.into(), value));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].1
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.entries.iter().map(|(_, t)| t.shape().to_vec()).collect()
    }

    /// Replaces values from `(name, tensor)` pairs; names and shapes must match exactly.
    pub fn load<'a>(&mut self, items: impl IntoIterator<Item = (&'a str, Tensor<T>)>) -> Result<()> {
        let mut seen = 0;
        for (name, t) in items {
            let slot = self
                .entries
                .iter_mut()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
            if slot.1.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{name}`: expected {:?}, found {:?}",
                    slot.1.shape(),
                    t.shape()
                )));
            }
            slot.1 = t;
            seen += 1;
        }
        if seen != self.entries.len() {
            return Err(Error::Shape(format!("loaded {seen} of {} parameters", self.entries.len())));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }

    /// Registers every tensor as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound { vars: self.entries.iter().map(|(_, t)| g.param(t.clone())).collect() }
    }

    /// Registers every tensor as a constant (inference only).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound { vars: self.entries.iter().map(|(_, t)| g.constant(t.clone())).collect() }
    }
}

/// Graph handles of a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Per-parameter gradients in set order, zero-filled where the loss does not reach.
    pub fn grads<T: Scalar>(&self, g: &Graph<T>, grads: &Grads<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v, g.shape(v))).collect()
    }
}

/// Normal draw with standard deviation `sqrt(gain / fan_in)`.
pub fn fan_in_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    let std = (gain / fan_in.max(1) as f64).sqrt();
    let n = crate::numel(shape);
    let data = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::lit(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches count")
}

/// Square-kernel convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub geom: ConvGeom,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv2d {
    /// He-initialized weights (gain 2, suited to a following ReLU), zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        geom: ConvGeom,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = ps.add(format!("{name}.weight"), fan_in_normal(&[out_ch, in_ch, kernel, kernel], fan_in, 2.0, rng));
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Self { w, b, geom, in_ch, out_ch, kernel }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.w), Some(p.var(self.b)), self.geom)
    }
}

/// Dense layer on `[N, in]` rows.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(format!("{name}.weight"), fan_in_normal(&[out_features, in_features], in_features, gain, rng));
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[out_features]));
        Self { w, b, in_features, out_features }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.w), Some(p.var(self.b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn load_requires_every_name_and_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f32>::new();
        let conv = Conv2d::new(&mut ps, "c", 2, 3, 3, ConvGeom::same(3, 1), &mut rng);
        assert_eq!(ps.len(), 2);
        assert_eq!(ps.get(conv.w).shape(), &[3, 2, 3, 3]);

        let mut other = ps.clone();
        let items: Vec<(String, Tensor<f32>)> = ps.iter().map(|(n, t)| (n.to_string(), t.map(|v| v + 1.0))).collect();
        other.load(items.iter().map(|(n, t)| (n.as_str(), t.clone()))).unwrap();
        assert_eq!(other.get(conv.b).data(), &[1.0, 1.0, 1.0]);

        assert!(other.load([("c.bias", Tensor::zeros(&[4]))]).is_err());
        assert!(other.load([("nope", Tensor::zeros(&[3]))]).is_err());
    }

    #[test]
    fn init_scale_tracks_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor<f64> = fan_in_normal(&[200, 50], 50, 2.0, &mut rng);
        let var = t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
        assert!((var - 2.0 / 50.0).abs() < 0.004, "variance {var}");
    }
}
