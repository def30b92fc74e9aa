//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/images/<id>.png   8-bit RGB
//! <root>/labels/<id>.png   8-bit gray, value = label
//! <root>/specs/<id>.json   SceneSpec
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GroundTruth, SceneSpec};
use crate::image::{ImageTensor, LabelMap};
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub image: ImageTensor,
    pub gt: GroundTruth,
    pub spec: SceneSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub seed: u64,
    pub image: String,
    pub label: String,
    pub spec: String,
    pub num_objects: usize,
    pub visible_fraction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub items: Vec<ManifestItem>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes every item and returns the manifest that was written.
pub fn export_dataset(items: &[DatasetItem], out_dir: &Path) -> Result<Manifest> {
    for sub in ["images", "labels", "specs"] {
        mkdir(&out_dir.join(sub))?;
    }
    let (height, width) = items.first().map_or((0, 0), |it| (it.image.height(), it.image.width()));
    let mut manifest = Manifest { version: MANIFEST_VERSION, height, width, items: Vec::with_capacity(items.len()) };
    for it in items {
        if it.id.is_empty() || it.id.contains(['/', '\\']) {
            return Err(Error::Argument(format!("item id `{}` is not a plain file stem", it.id)));
        }
        let entry = ManifestItem {
            id: it.id.clone(),
            seed: it.spec.seed,
            image: format!("images/{}.png", it.id),
            label: format!("labels/{}.png", it.id),
            spec: format!("specs/{}.json", it.id),
            num_objects: it.gt.num_objects(),
            visible_fraction: it.gt.visible_fraction.clone(),
        };
        it.image.save_png(&out_dir.join(&entry.image))?;
        it.gt.label_map.save_png(&out_dir.join(&entry.label))?;
        let spec = serde_json::to_vec_pretty(&it.spec).expect("scene specs serialize");
        write(&out_dir.join(&entry.spec), &spec)?;
        manifest.items.push(entry);
    }
    let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write(&out_dir.join("manifest.json"), &text)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_slice(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::format(&path, format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}

/// Reads a dataset written by [`export_dataset`].
pub fn load_dataset(root: &Path) -> Result<Vec<DatasetItem>> {
    let manifest = read_manifest(root)?;
    manifest
        .items
        .iter()
        .map(|entry| {
            let image = ImageTensor::load_png(&root.join(&entry.image))?;
            let labels = LabelMap::load_png(&root.join(&entry.label))?;
            let spec_path = root.join(&entry.spec);
            let text = fs::read(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
            let spec: SceneSpec = serde_json::from_slice(&text).map_err(|e| Error::format(&spec_path, e.to_string()))?;
            if labels.height != image.height() || labels.width != image.width() {
                return Err(Error::format(root.join(&entry.label), "label map size differs from its image"));
            }
            let gt = GroundTruth::from_label_map(labels, entry.num_objects, entry.visible_fraction.clone());
            Ok(DatasetItem { id: entry.id.clone(), image, gt, spec })
        })
        .collect()
}
