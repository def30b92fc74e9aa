//! Procedural scene families with exact ground-truth segmentations.
//!
//! Every generator is a pure function of `(seed, config)`: a [`SceneSpec`] is
//! sampled first, then rasterized by [`render`]. Rendering the same spec twice
//! gives bit-identical images and labels.

pub mod assets;
mod export;
mod raster;
mod sequence;
pub mod texture;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use assets::{AssetLibrary, RgbaAsset};
pub use export::{export_dataset, load_dataset, read_manifest, DatasetItem, Manifest, ManifestItem};
pub use raster::render;
pub use sequence::{crossing_sequence, generate_sequence, SequenceSpec};
pub use texture::WoodGrain;

use crate::image::{ImageTensor, LabelMap};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Flat-coloured squares, ellipses and hearts on a flat background.
    Sprites,
    /// Chessboard-textured shapes on a wood-grain background.
    Texture,
    /// Alpha-matted foreground cutouts over background photographs.
    Animals,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sprites" => Ok(Family::Sprites),
            "texture" => Ok(Family::Texture),
            "animals" => Ok(Family::Animals),
            other => Err(Error::Config(format!("unknown dataset family `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub family: Family,
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object half-extent range in normalized units (1 = half the shorter side).
    pub scale_min: f64,
    pub scale_max: f64,
    /// Object centres are drawn from `[-position_range, position_range]²`.
    pub position_range: f64,
    /// Minimum per-channel (L∞) distance between an object colour and the background.
    pub min_contrast: f64,
    /// Chessboard cell side in normalized units.
    pub cell_size: f64,
    pub wood_frequency_min: f64,
    pub wood_frequency_max: f64,
    pub wood_turbulence: f64,
    /// Multiplicative intensity factors are drawn from `[1 - j, 1 + j]`.
    pub intensity_jitter: f64,
    /// Average a 4×4 sub-sample grid per image pixel. Labels are always hard.
    pub anti_alias: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            family: Family::Sprites,
            height: 64,
            width: 64,
            min_objects: 1,
            max_objects: 4,
            scale_min: 0.2,
            scale_max: 0.4,
            position_range: 0.6,
            min_contrast: 0.25,
            cell_size: 0.12,
            wood_frequency_min: 2.0,
            wood_frequency_max: 4.0,
            wood_turbulence: 0.5,
            intensity_jitter: 0.2,
            anti_alias: false,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("image size {}x{} must be positive", self.height, self.width)));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::Config(format!(
                "object-count range [{}, {}] is empty",
                self.min_objects, self.max_objects
            )));
        }
        if self.max_objects > u8::MAX as usize {
            return Err(Error::Config("max_objects must fit an 8-bit label".into()));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::Config(format!("scale range [{}, {}] invalid", self.scale_min, self.scale_max)));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::Config("cell_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.intensity_jitter) {
            return Err(Error::Config("intensity_jitter must lie in [0, 1)".into()));
        }
        if !(self.wood_frequency_min > 0.0 && self.wood_frequency_min <= self.wood_frequency_max) {
            return Err(Error::Config("wood frequency range invalid".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObjectShape {
    Square,
    Ellipse,
    Heart,
    Asset { id: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Texture {
    Flat { color: [f32; 3] },
    Chessboard { a: [f32; 3], b: [f32; 3], cell: f64 },
    /// The asset's own colours scaled by an intensity factor.
    Asset { intensity: f32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: ObjectShape,
    pub texture: Texture,
    /// Centre in normalized coordinates (origin at the image centre, y down).
    pub position: [f64; 2],
    pub scale: f64,
    /// Radians, applied about the object centre before translation.
    pub rotation: f64,
    /// Larger values are drawn on top.
    pub z_order: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackgroundSpec {
    Solid { color: [f32; 3] },
    WoodGrain(WoodGrain),
    Asset { id: String, intensity: f32 },
}

/// Everything needed to re-render a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub background: BackgroundSpec,
    /// Label `i + 1` in the ground truth refers to `objects[i]`.
    pub objects: Vec<ObjectSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// 0 is background, `i` the `i`-th object.
    pub label_map: LabelMap,
    pub per_object_masks: Vec<Vec<bool>>,
    /// Visible pixels over un-occluded footprint pixels; 0 when the object is off-frame.
    pub visible_fraction: Vec<f64>,
}

impl GroundTruth {
    pub(crate) fn from_labels(label_map: LabelMap, n: usize, footprint: &[usize]) -> Self {
        let per_object_masks: Vec<Vec<bool>> =
            (1..=n).map(|k| label_map.labels.iter().map(|&l| l as usize == k).collect()).collect();
        let visible_fraction = per_object_masks
            .iter()
            .zip(footprint)
            .map(|(m, &f)| if f == 0 { 0.0 } else { m.iter().filter(|&&b| b).count() as f64 / f as f64 })
            .collect();
        Self { label_map, per_object_masks, visible_fraction }
    }

    /// Rebuilds masks from a label map; fractions are supplied separately.
    pub fn from_label_map(label_map: LabelMap, n: usize, visible_fraction: Vec<f64>) -> Self {
        let per_object_masks =
            (1..=n).map(|k| label_map.labels.iter().map(|&l| l as usize == k).collect()).collect();
        Self { label_map, per_object_masks, visible_fraction }
    }

    pub fn num_objects(&self) -> usize {
        self.per_object_masks.len()
    }

    pub fn background_mask(&self) -> Vec<bool> {
        self.label_map.labels.iter().map(|&l| l == 0).collect()
    }

    /// Mask of region `r`: 0 is background, `r ≥ 1` object `r`.
    pub fn region_mask(&self, r: usize) -> Vec<bool> {
        self.label_map.labels.iter().map(|&l| l as usize == r).collect()
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    std::array::from_fn(|_| rng.random::<f32>())
}

/// Rejection-samples a colour at least `min_contrast` away (L∞) from `against`.
fn contrasting_color(rng: &mut ChaCha8Rng, against: &[f32; 3], min_contrast: f64) -> [f32; 3] {
    let mut c = random_color(rng);
    for _ in 0..64 {
        let d = (0..3).map(|k| (c[k] - against[k]).abs()).fold(0.0f32, f32::max);
        if d as f64 >= min_contrast {
            break;
        }
        c = random_color(rng);
    }
    c
}

struct Placement {
    position: [f64; 2],
    scale: f64,
    rotation: f64,
}

fn sample_placement(rng: &mut ChaCha8Rng, config: &DatasetConfig, rotate: bool) -> Placement {
    let r = config.position_range;
    let position = [rng.random_range(-r..=r), rng.random_range(-r..=r)];
    let scale = rng.random_range(config.scale_min..=config.scale_max);
    let rotation = if rotate { rng.random_range(0.0..std::f64::consts::TAU) } else { 0.0 };
    Placement { position, scale, rotation }
}

fn sample_shape(rng: &mut ChaCha8Rng) -> ObjectShape {
    match rng.random_range(0..3) {
        0 => ObjectShape::Square,
        1 => ObjectShape::Ellipse,
        _ => ObjectShape::Heart,
    }
}

fn z_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    let mut z: Vec<u32> = (0..n as u32).collect();
    z.shuffle(rng);
    z
}

fn object_count(rng: &mut ChaCha8Rng, config: &DatasetConfig) -> usize {
    rng.random_range(config.min_objects..=config.max_objects)
}

/// Samples a Multi-dSprites-style scene description.
pub fn sample_sprite_spec(seed: u64, config: &DatasetConfig) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = object_count(&mut rng, config);
    let bg = random_color(&mut rng);
    let z = z_permutation(&mut rng, n);
    let objects = (0..n)
        .map(|i| {
            let shape = sample_shape(&mut rng);
            let color = contrasting_color(&mut rng, &bg, config.min_contrast);
            let p = sample_placement(&mut rng, config, true);
            ObjectSpec {
                shape,
                texture: Texture::Flat { color },
                position: p.position,
                scale: p.scale,
                rotation: p.rotation,
                z_order: z[i],
            }
        })
        .collect();
    Ok(SceneSpec {
        seed,
        height: config.height,
        width: config.width,
        background: BackgroundSpec::Solid { color: bg },
        objects,
    })
}

/// Samples a Multi-Texture-style scene description.
pub fn sample_texture_spec(seed: u64, config: &DatasetConfig) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = object_count(&mut rng, config);
    let light = random_color(&mut rng);
    let dark = light.map(|c| c * rng.random_range(0.3f32..0.6));
    let wood = WoodGrain {
        light,
        dark,
        frequency: rng.random_range(config.wood_frequency_min..=config.wood_frequency_max),
        turbulence: config.wood_turbulence,
        angle: rng.random_range(0.0..std::f64::consts::PI),
        noise_seed: rng.random(),
    };
    let mean_bg = std::array::from_fn(|k| (light[k] + dark[k]) / 2.0);
    let z = z_permutation(&mut rng, n);
    let objects = (0..n)
        .map(|i| {
            let shape = sample_shape(&mut rng);
            let a = contrasting_color(&mut rng, &mean_bg, config.min_contrast);
            let b = contrasting_color(&mut rng, &mean_bg, config.min_contrast);
            let p = sample_placement(&mut rng, config, true);
            ObjectSpec {
                shape,
                texture: Texture::Chessboard { a, b, cell: config.cell_size },
                position: p.position,
                scale: p.scale,
                rotation: p.rotation,
                z_order: z[i],
            }
        })
        .collect();
    Ok(SceneSpec {
        seed,
        height: config.height,
        width: config.width,
        background: BackgroundSpec::WoodGrain(wood),
        objects,
    })
}

/// Samples a Flying-Animals-style scene description over `assets`.
pub fn sample_asset_spec(seed: u64, assets: &AssetLibrary, config: &DatasetConfig) -> Result<SceneSpec> {
    config.validate()?;
    if assets.is_empty() {
        return Err(Error::Asset("asset library needs at least one background and one foreground".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = object_count(&mut rng, config);
    let j = config.intensity_jitter;
    let jitter = |rng: &mut ChaCha8Rng| if j > 0.0 { rng.random_range(1.0 - j..=1.0 + j) as f32 } else { 1.0 };
    let bg = &assets.backgrounds[rng.random_range(0..assets.backgrounds.len())];
    let background = BackgroundSpec::Asset { id: bg.id.clone(), intensity: jitter(&mut rng) };
    let z = z_permutation(&mut rng, n);
    let objects = (0..n)
        .map(|i| {
            let fg = &assets.foregrounds[rng.random_range(0..assets.foregrounds.len())];
            let intensity = jitter(&mut rng);
            let p = sample_placement(&mut rng, config, false);
            ObjectSpec {
                shape: ObjectShape::Asset { id: fg.id.clone() },
                texture: Texture::Asset { intensity },
                position: p.position,
                scale: p.scale,
                rotation: p.rotation,
                z_order: z[i],
            }
        })
        .collect();
    Ok(SceneSpec { seed, height: config.height, width: config.width, background, objects })
}

pub fn generate_sprite_scene(seed: u64, config: &DatasetConfig) -> Result<(ImageTensor, GroundTruth, SceneSpec)> {
    let spec = sample_sprite_spec(seed, config)?;
    let (img, gt) = render(&spec, config.anti_alias, None)?;
    Ok((img, gt, spec))
}

pub fn generate_texture_scene(seed: u64, config: &DatasetConfig) -> Result<(ImageTensor, GroundTruth, SceneSpec)> {
    let spec = sample_texture_spec(seed, config)?;
    let (img, gt) = render(&spec, config.anti_alias, None)?;
    Ok((img, gt, spec))
}

pub fn compose_assets(
    seed: u64,
    assets: &AssetLibrary,
    config: &DatasetConfig,
) -> Result<(ImageTensor, GroundTruth, SceneSpec)> {
    let spec = sample_asset_spec(seed, assets, config)?;
    let (img, gt) = render(&spec, config.anti_alias, Some(assets))?;
    Ok((img, gt, spec))
}

/// Samples a scene description of the configured family.
pub fn sample_spec(seed: u64, config: &DatasetConfig, assets: Option<&AssetLibrary>) -> Result<SceneSpec> {
    match config.family {
        Family::Sprites => sample_sprite_spec(seed, config),
        Family::Texture => sample_texture_spec(seed, config),
        Family::Animals => {
            let lib = assets.ok_or_else(|| Error::Asset("the animals family needs an asset directory".into()))?;
            sample_asset_spec(seed, lib, config)
        }
    }
}

/// Generates one scene of the configured family.
pub fn generate(
    seed: u64,
    config: &DatasetConfig,
    assets: Option<&AssetLibrary>,
) -> Result<(ImageTensor, GroundTruth, SceneSpec)> {
    let spec = sample_spec(seed, config, assets)?;
    let (img, gt) = render(&spec, config.anti_alias, assets)?;
    Ok((img, gt, spec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(DatasetConfig::default().validate().is_ok());
        let bad = DatasetConfig { min_objects: 3, max_objects: 2, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = DatasetConfig { height: 0, ..Default::default() };
        assert!(generate_sprite_scene(0, &bad).is_err());
        let empty = DatasetConfig { min_objects: 0, max_objects: 0, ..Default::default() };
        assert!(empty.validate().is_ok());
    }

    #[test]
    fn family_parses() {
        assert_eq!("texture".parse::<Family>().unwrap(), Family::Texture);
        assert!("cubes".parse::<Family>().is_err());
    }

    #[test]
    fn contrast_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bg = [0.5, 0.5, 0.5];
        for _ in 0..50 {
            let c = contrasting_color(&mut rng, &bg, 0.3);
            assert!((0..3).any(|k| (c[k] - bg[k]).abs() >= 0.3));
        }
    }
}
