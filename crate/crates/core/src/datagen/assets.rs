//! User-supplied natural images for Flying-Animals-style compositing.
//!
//! Directory layout:
//!
//! ```text
//! <root>/backgrounds/*.png          any colour type
//! <root>/foregrounds/<class>/*.png  must carry an alpha channel
//! ```

use std::path::Path;

use crate::image::image_err;
use crate::{Error, Result};

/// A decoded RGBA image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbaAsset {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 4]>,
}

impl RgbaAsset {
    pub fn new(id: impl Into<String>, width: usize, height: usize, pixels: Vec<[f32; 4]>) -> Result<Self> {
        if pixels.len() != width * height || width == 0 || height == 0 {
            return Err(Error::Asset("asset pixel count does not match its size".into()));
        }
        Ok(Self { id: id.into(), width, height, pixels })
    }

    fn from_image(id: String, img: &image::DynamicImage) -> Self {
        let rgba = img.to_rgba32f();
        let pixels = rgba.pixels().map(|p| p.0).collect();
        Self { id, width: rgba.width() as usize, height: rgba.height() as usize, pixels }
    }

    /// Nearest pixel for object-local coordinates where the longer side spans `[-1, 1]`.
    fn local_pixel(&self, x: f64, y: f64) -> Option<&[f32; 4]> {
        let long = self.width.max(self.height) as f64;
        let px = x * long / 2.0 + self.width as f64 / 2.0;
        let py = y * long / 2.0 + self.height as f64 / 2.0;
        if px < 0.0 || py < 0.0 || px >= self.width as f64 || py >= self.height as f64 {
            return None;
        }
        Some(&self.pixels[py as usize * self.width + px as usize])
    }

    pub fn alpha_at_local(&self, x: f64, y: f64) -> f32 {
        self.local_pixel(x, y).map_or(0.0, |p| p[3])
    }

    pub fn rgb_at_local(&self, x: f64, y: f64) -> [f32; 3] {
        self.local_pixel(x, y).map_or([0.0; 3], |p| [p[0], p[1], p[2]])
    }

    /// Nearest pixel when the asset is stretched over the whole frame (`fy`, `fx` in `[0, 1)`).
    pub fn rgb_at_frame(&self, fy: f64, fx: f64) -> [f32; 3] {
        let i = ((fy * self.height as f64) as usize).min(self.height - 1);
        let j = ((fx * self.width as f64) as usize).min(self.width - 1);
        let p = self.pixels[i * self.width + j];
        [p[0], p[1], p[2]]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssetLibrary {
    pub backgrounds: Vec<RgbaAsset>,
    /// Foreground cutouts; ids are `<class>/<file stem>`.
    pub foregrounds: Vec<RgbaAsset>,
}

fn sorted_pngs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl AssetLibrary {
    pub fn load(root: &Path) -> Result<Self> {
        let mut lib = AssetLibrary::default();
        for path in sorted_pngs(&root.join("backgrounds"))? {
            let img = image::open(&path).map_err(|e| image_err(&path, e))?;
            lib.backgrounds.push(RgbaAsset::from_image(stem(&path), &img));
        }
        let fg_root = root.join("foregrounds");
        let mut classes: Vec<_> = std::fs::read_dir(&fg_root)
            .map_err(|e| Error::io(&fg_root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        classes.sort();
        for class_dir in classes {
            let class = stem(&class_dir);
            for path in sorted_pngs(&class_dir)? {
                let img = image::open(&path).map_err(|e| image_err(&path, e))?;
                if !img.color().has_alpha() {
                    return Err(Error::Asset(format!("foreground {} has no alpha channel", path.display())));
                }
                lib.foregrounds.push(RgbaAsset::from_image(format!("{class}/{}", stem(&path)), &img));
            }
        }
        Ok(lib)
    }

    pub fn is_empty(&self) -> bool {
        self.backgrounds.is_empty() || self.foregrounds.is_empty()
    }

    pub fn background(&self, id: &str) -> Result<&RgbaAsset> {
        self.backgrounds.iter().find(|a| a.id == id).ok_or_else(|| Error::Asset(format!("unknown background `{id}`")))
    }

    pub fn foreground(&self, id: &str) -> Result<&RgbaAsset> {
        self.foregrounds.iter().find(|a| a.id == id).ok_or_else(|| Error::Asset(format!("unknown foreground `{id}`")))
    }
}
