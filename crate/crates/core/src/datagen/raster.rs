//! Scene rasterization: painter's-algorithm compositing with exact labels.

use super::assets::{AssetLibrary, RgbaAsset};
use super::texture::chessboard;
use super::{BackgroundSpec, GroundTruth, ObjectShape, ObjectSpec, SceneSpec, Texture};
use crate::image::{ImageTensor, LabelMap};
use crate::{Error, Result};

const ELLIPSE_MINOR: f64 = 0.6;
const HEART_VERTICES: usize = 96;

/// Heart outline normalized into `[-1, 1]²`, y pointing down.
pub(crate) fn heart_polygon() -> Vec<[f64; 2]> {
    let raw: Vec<[f64; 2]> = (0..HEART_VERTICES)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / HEART_VERTICES as f64;
            let x = 16.0 * t.sin().powi(3);
            let y = -(13.0 * t.cos() - 5.0 * (2.0 * t).cos() - 2.0 * (3.0 * t).cos() - (4.0 * t).cos());
            [x, y]
        })
        .collect();
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for p in &raw {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let half = (0..2).map(|k| (hi[k] - lo[k]) / 2.0).fold(0.0, f64::max);
    let mid = [(hi[0] + lo[0]) / 2.0, (hi[1] + lo[1]) / 2.0];
    raw.iter().map(|p| [(p[0] - mid[0]) / half, (p[1] - mid[1]) / half]).collect()
}

/// Even-odd point-in-polygon test.
pub(crate) fn in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Maps pixel-space points to normalized coordinates: origin at the image
/// centre, unit length equal to half the shorter side.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Frame {
    pub height: usize,
    pub width: usize,
    half: f64,
}

impl Frame {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, half: height.min(width) as f64 / 2.0 }
    }

    /// Normalized coordinates of the point `(row, col)` in continuous pixel units.
    pub fn to_uv(&self, row: f64, col: f64) -> (f64, f64) {
        ((col - self.width as f64 / 2.0) / self.half, (row - self.height as f64 / 2.0) / self.half)
    }
}

pub(crate) struct Placed<'a> {
    spec: &'a ObjectSpec,
    cos: f64,
    sin: f64,
    asset: Option<&'a RgbaAsset>,
    heart: Option<&'a [[f64; 2]]>,
}

impl<'a> Placed<'a> {
    fn new(spec: &'a ObjectSpec, assets: Option<&'a AssetLibrary>, heart: &'a [[f64; 2]]) -> Result<Self> {
        let asset = match &spec.shape {
            ObjectShape::Asset { id } => Some(
                assets
                    .ok_or_else(|| Error::Asset(format!("scene references asset `{id}` but no library was given")))?
                    .foreground(id)?,
            ),
            _ => None,
        };
        let heart = matches!(spec.shape, ObjectShape::Heart).then_some(heart);
        Ok(Self { spec, cos: spec.rotation.cos(), sin: spec.rotation.sin(), asset, heart })
    }

    /// Rotated, unscaled offset from the object centre (rotation before translation).
    fn rotated(&self, u: f64, v: f64) -> (f64, f64) {
        let (dx, dy) = (u - self.spec.position[0], v - self.spec.position[1]);
        (self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy)
    }

    /// Opacity in `[0, 1]` at a normalized point.
    pub fn coverage(&self, u: f64, v: f64) -> f32 {
        let (rx, ry) = self.rotated(u, v);
        let (x, y) = (rx / self.spec.scale, ry / self.spec.scale);
        let inside = match &self.spec.shape {
            ObjectShape::Square => x.abs() <= 1.0 && y.abs() <= 1.0,
            ObjectShape::Ellipse => x * x + (y / ELLIPSE_MINOR).powi(2) <= 1.0,
            ObjectShape::Heart => in_polygon(self.heart.expect("heart outline"), x, y),
            ObjectShape::Asset { .. } => return self.asset.expect("resolved asset").alpha_at_local(x, y),
        };
        if inside {
            1.0
        } else {
            0.0
        }
    }

    pub fn color(&self, u: f64, v: f64) -> [f32; 3] {
        match &self.spec.texture {
            Texture::Flat { color } => *color,
            Texture::Chessboard { a, b, cell } => {
                let (rx, ry) = self.rotated(u, v);
                chessboard(*a, *b, *cell, rx, ry)
            }
            Texture::Asset { intensity } => {
                let (rx, ry) = self.rotated(u, v);
                let c = match self.asset {
                    Some(a) => a.rgb_at_local(rx / self.spec.scale, ry / self.spec.scale),
                    None => [0.0; 3],
                };
                c.map(|ch| (ch * intensity).clamp(0.0, 1.0))
            }
        }
    }
}

fn background_color(bg: &BackgroundSpec, frame: &Frame, assets: Option<&AssetLibrary>, row: f64, col: f64) -> Result<[f32; 3]> {
    Ok(match bg {
        BackgroundSpec::Solid { color } => *color,
        BackgroundSpec::WoodGrain(w) => {
            let (u, v) = frame.to_uv(row, col);
            w.color(u, v)
        }
        BackgroundSpec::Asset { id, intensity } => {
            let lib = assets.ok_or_else(|| Error::Asset(format!("background `{id}` needs an asset library")))?;
            let img = lib.background(id)?;
            img.rgb_at_frame(row / frame.height as f64, col / frame.width as f64).map(|c| (c * intensity).clamp(0.0, 1.0))
        }
    })
}

/// Checks that z-orders form a permutation of `0..n`.
pub(crate) fn check_z_orders(objects: &[ObjectSpec]) -> Result<()> {
    let mut seen = vec![false; objects.len()];
    for o in objects {
        let z = o.z_order as usize;
        if z >= objects.len() || seen[z] {
            return Err(Error::Config(format!("z-orders {:?} are not a permutation", objects.iter().map(|o| o.z_order).collect::<Vec<_>>())));
        }
        seen[z] = true;
    }
    Ok(())
}

/// Renders a scene. Labels use the pixel centre only; the image optionally
/// averages a 4×4 grid of sub-samples per pixel.
pub fn render(spec: &SceneSpec, anti_alias: bool, assets: Option<&AssetLibrary>) -> Result<(ImageTensor, GroundTruth)> {
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::Config("scene has an empty frame".into()));
    }
    if spec.objects.len() > u8::MAX as usize {
        return Err(Error::Config("at most 255 objects fit an 8-bit label map".into()));
    }
    check_z_orders(&spec.objects)?;
    let frame = Frame::new(spec.height, spec.width);
    let heart = heart_polygon();
    let placed = spec.objects.iter().map(|o| Placed::new(o, assets, &heart)).collect::<Result<Vec<_>>>()?;
    // object indices sorted back to front
    let mut order: Vec<usize> = (0..placed.len()).collect();
    order.sort_by_key(|&i| spec.objects[i].z_order);

    let n = placed.len();
    let mut labels = LabelMap::new(spec.height, spec.width);
    let mut footprint = vec![0usize; n];
    let mut image = ImageTensor::new(spec.height, spec.width);
    let sub: &[f64] = if anti_alias { &[0.125, 0.375, 0.625, 0.875] } else { &[0.5] };
    let weight = 1.0 / (sub.len() * sub.len()) as f32;

    for i in 0..spec.height {
        for j in 0..spec.width {
            let (u, v) = frame.to_uv(i as f64 + 0.5, j as f64 + 0.5);
            let mut top = 0u8;
            for &k in &order {
                if placed[k].coverage(u, v) >= 0.5 {
                    footprint[k] += 1;
                    top = (k + 1) as u8;
                }
            }
            labels.labels[i * spec.width + j] = top;

            let mut acc = [0f32; 3];
            for &dy in sub {
                for &dx in sub {
                    let (r, c) = (i as f64 + dy, j as f64 + dx);
                    let (u, v) = frame.to_uv(r, c);
                    let mut px = background_color(&spec.background, &frame, assets, r, c)?;
                    for &k in &order {
                        let a = placed[k].coverage(u, v);
                        if a > 0.0 {
                            let col = placed[k].color(u, v);
                            for ch in 0..3 {
                                px[ch] = a * col[ch] + (1.0 - a) * px[ch];
                            }
                        }
                    }
                    for ch in 0..3 {
                        acc[ch] += weight * px[ch];
                    }
                }
            }
            image.set_pixel(i, j, acc.map(|c| c.clamp(0.0, 1.0)));
        }
    }
    let gt = GroundTruth::from_labels(labels, n, &footprint);
    Ok((image, gt))
}
