//! Temporally coherent scene sequences for identity tracking.

use serde::{Deserialize, Serialize};

use super::{render, sample_spec, AssetLibrary, DatasetConfig, GroundTruth, SceneSpec};
use crate::image::ImageTensor;
use crate::{Error, Result};

/// A base scene whose objects translate at constant per-frame velocities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub base: SceneSpec,
    pub frames: usize,
    /// One normalized displacement per object per frame.
    pub velocities: Vec<[f64; 2]>,
}

impl SequenceSpec {
    /// Scene of frame `t`: identities, textures and z-order are shared; only positions move.
    pub fn frame(&self, t: usize) -> SceneSpec {
        let mut spec = self.base.clone();
        for (o, v) in spec.objects.iter_mut().zip(&self.velocities) {
            o.position[0] += v[0] * t as f64;
            o.position[1] += v[1] * t as f64;
        }
        spec
    }
}

/// Renders every frame. Objects that leave the frame are reported through a
/// zero `visible_fraction` rather than an error.
pub fn generate_sequence(
    spec: &SequenceSpec,
    config: &DatasetConfig,
    assets: Option<&AssetLibrary>,
) -> Result<Vec<(ImageTensor, GroundTruth)>> {
    if spec.frames == 0 {
        return Err(Error::Config("a sequence needs at least one frame".into()));
    }
    if spec.velocities.len() != spec.base.objects.len() {
        return Err(Error::Config(format!(
            "{} velocities for {} objects",
            spec.velocities.len(),
            spec.base.objects.len()
        )));
    }
    (0..spec.frames).map(|t| render(&spec.frame(t), config.anti_alias, assets)).collect()
}

/// Samples a scene and sends every object through the centre to its mirrored
/// position over `frames` frames, so objects cross and occlude each other.
pub fn crossing_sequence(
    seed: u64,
    config: &DatasetConfig,
    assets: Option<&AssetLibrary>,
    frames: usize,
) -> Result<SequenceSpec> {
    let base = sample_spec(seed, config, assets)?;
    let steps = frames.saturating_sub(1).max(1) as f64;
    let velocities = base
        .objects
        .iter()
        .map(|o| if frames > 1 { [-2.0 * o.position[0] / steps, -2.0 * o.position[1] / steps] } else { [0.0, 0.0] })
        .collect();
    Ok(SequenceSpec { base, frames, velocities })
}
