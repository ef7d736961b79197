//! One rendered sample on disk: raw images plus `meta.json`.
//!
//! Layout of a record directory:
//!
//! | file | content |
//! |------|---------|
//! | `image.f32raw` | normalized image, `f32` little-endian, row-major |
//! | `mask.u8raw` | segmentation mask, one byte per pixel (0 or 1) |
//! | `belief_0.f32raw`, `belief_1.f32raw` | proximal and distal belief maps |
//! | `meta.json` | [`RecordMeta`] |
//! | `preview.png` | optional 8-bit rendering of the image |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::geometry::{ProjectionGeometry, RigidParams, RigidTransform, EULER_CONVENTION};
use crate::projector::{Image2D, ImageKind};
use crate::sampler::{SampleConfig, Split};

use super::config::PipelineConfig;
use super::volume_io::{f32_le_bytes, write_file};

pub const RECORD_SCHEMA: &str = "forge-sample/1";
pub const PIPELINE_VERSION: &str = concat!("forge ", env!("CARGO_PKG_VERSION"));

pub const IMAGE_FILE: &str = "image.f32raw";
pub const MASK_FILE: &str = "mask.u8raw";
pub const BELIEF_FILES: [&str; 2] = ["belief_0.f32raw", "belief_1.f32raw"];
pub const META_FILE: &str = "meta.json";
pub const PREVIEW_FILE: &str = "preview.png";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conventions {
    pub euler: String,
    pub pixel_coordinates: String,
    pub image_layout: String,
    pub landmark_order: [String; 2],
    pub normalization: String,
    pub units: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            euler: EULER_CONVENTION.into(),
            pixel_coordinates: "(u, v) = (col, row); integer values address pixel centers".into(),
            image_layout: "row-major, little-endian".into(),
            landmark_order: ["proximal".into(), "distal".into()],
            normalization: "image = 2 * (p - min) / (max - min) - 1 over line integrals p".into(),
            units: "mm, degrees".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDims {
    pub cols: usize,
    pub rows: usize,
    pub pixel_size_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtInfo {
    pub id: String,
    /// SHA-256 of the CT grid and voxel values.
    pub digest: String,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
}

/// Homogeneous 4x4 matrix, row-major.
pub type Matrix4Rows = [[f64; 4]; 4];

pub fn matrix_rows(t: &RigidTransform) -> Matrix4Rows {
    let r = &t.rotation;
    let p = &t.translation;
    [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], p.x],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)], p.y],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)], p.z],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    pub schema: String,
    pub pipeline_version: String,
    pub config_hash: String,
    pub sample_id: String,
    pub split: Option<Split>,
    pub sample: SampleConfig,
    pub geometry: ProjectionGeometry,
    pub ct: CtInfo,
    /// Manipulator-local to CT-local placement before the sampled perturbation.
    pub femur_alignment: RigidParams,
    pub ct_to_world: Matrix4Rows,
    pub cdm_to_world: Matrix4Rows,
    pub joint_angles_deg: Vec<f64>,
    pub conventions: Conventions,
    /// Proximal then distal, `(u, v)` pixels.
    pub landmarks_px: [[f64; 2]; 2],
    pub landmarks_in_bounds: [bool; 2],
    pub normalization: Normalization,
    pub dims: ImageDims,
    pub has_preview: bool,
    pub config: PipelineConfig,
}

/// A complete sample in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub image: Image2D,
    pub mask: Image2D,
    pub belief_maps: [Image2D; 2],
    pub meta: RecordMeta,
}

impl SampleRecord {
    pub fn landmarks_px(&self) -> [[f64; 2]; 2] {
        self.meta.landmarks_px
    }
}

pub fn landmark_in_bounds(pt: [f64; 2], cols: usize, rows: usize) -> bool {
    (-0.5..cols as f64 - 0.5).contains(&pt[0]) && (-0.5..rows as f64 - 0.5).contains(&pt[1])
}

/// Directory of a record inside a dataset root.
pub fn record_dir(root: &Path, split: Split, sample_id: &str) -> PathBuf {
    root.join(split.as_str()).join(sample_id)
}

fn invalid(dir: &Path, message: impl Into<String>) -> ForgeError {
    ForgeError::InvalidRecord {
        path: dir.to_path_buf(),
        message: message.into(),
    }
}

/// Checks internal consistency of a record (shapes, value domains, landmark/argmax
/// agreement and the config hash).
pub fn validate_record(rec: &SampleRecord, dir: &Path) -> Result<()> {
    let m = &rec.meta;
    if m.schema != RECORD_SCHEMA {
        return Err(invalid(
            dir,
            format!("schema `{}`, expected `{RECORD_SCHEMA}`", m.schema),
        ));
    }
    if m.config_hash != m.config.hash() {
        return Err(invalid(dir, "config hash does not match the embedded config"));
    }
    if m.sample_id != m.sample.sample_id() {
        return Err(invalid(dir, "sample id does not match the sample config"));
    }
    let (cols, rows) = (m.dims.cols, m.dims.rows);
    if (m.geometry.detector_cols, m.geometry.detector_rows) != (cols, rows) {
        return Err(invalid(dir, "geometry and image dimensions differ"));
    }
    for img in [&rec.image, &rec.mask, &rec.belief_maps[0], &rec.belief_maps[1]] {
        if (img.cols, img.rows) != (cols, rows) {
            return Err(invalid(dir, "images do not share dimensions"));
        }
    }
    if !rec.image.values.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-6) {
        return Err(invalid(dir, "image values outside [-1, 1]"));
    }
    if !(m.normalization.min <= m.normalization.max) {
        return Err(invalid(dir, "normalization min exceeds max"));
    }
    if rec.mask.values.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(invalid(dir, "mask is not binary"));
    }
    for (k, (b, pt)) in rec.belief_maps.iter().zip(m.landmarks_px).enumerate() {
        if !b.values.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(invalid(dir, format!("belief map {k} outside [0, 1]")));
        }
        let inside = landmark_in_bounds(pt, cols, rows);
        if inside != m.landmarks_in_bounds[k] {
            return Err(invalid(dir, format!("landmark {k} bounds flag is wrong")));
        }
        if inside {
            let (c, r) = b.argmax().ok_or_else(|| invalid(dir, "empty belief map"))?;
            if (c as f64 - pt[0]).abs() > 0.5 + 1e-6 || (r as f64 - pt[1]).abs() > 0.5 + 1e-6 {
                return Err(invalid(
                    dir,
                    format!("belief map {k} peak ({c}, {r}) is not at landmark {pt:?}"),
                ));
            }
        }
    }
    Ok(())
}

fn preview_png(img: &Image2D) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = img
        .values
        .iter()
        .map(|&v| (((v + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let gray = image::GrayImage::from_raw(img.cols as u32, img.rows as u32, pixels)
        .ok_or_else(|| ForgeError::Image("pixel buffer size mismatch".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    gray.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| ForgeError::Image(e.to_string()))?;
    Ok(out.into_inner())
}

/// Writes all record files into `dir`; `meta.json` is written last, via a rename.
pub fn write_record(rec: &SampleRecord, dir: &Path) -> Result<()> {
    validate_record(rec, dir)?;
    fs::create_dir_all(dir).map_err(|e| ForgeError::io(format!("creating {}", dir.display()), e))?;
    let meta_path = dir.join(META_FILE);
    if meta_path.exists() {
        fs::remove_file(&meta_path).map_err(|e| ForgeError::io(format!("removing {}", meta_path.display()), e))?;
    }
    write_file(
        &dir.join(IMAGE_FILE),
        &f32_le_bytes(rec.image.values.iter().map(|&v| v as f32)),
    )?;
    let mask: Vec<u8> = rec.mask.values.iter().map(|&v| u8::from(v > 0.5)).collect();
    write_file(&dir.join(MASK_FILE), &mask)?;
    for (b, name) in rec.belief_maps.iter().zip(BELIEF_FILES) {
        write_file(&dir.join(name), &f32_le_bytes(b.values.iter().map(|&v| v as f32)))?;
    }
    if rec.meta.has_preview {
        write_file(&dir.join(PREVIEW_FILE), &preview_png(&rec.image)?)?;
    }
    let tmp = dir.join("meta.json.tmp");
    write_file(&tmp, serde_json::to_string_pretty(&rec.meta)?.as_bytes())?;
    fs::rename(&tmp, &meta_path).map_err(|e| ForgeError::io(format!("renaming {}", tmp.display()), e))
}

pub fn read_meta(dir: &Path) -> Result<RecordMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| ForgeError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| invalid(dir, format!("meta.json: {e}")))
}

pub(crate) fn read_f32_image(path: &Path, cols: usize, rows: usize, pixel: f64, kind: ImageKind) -> Result<Image2D> {
    let bytes = fs::read(path).map_err(|e| ForgeError::io(format!("reading {}", path.display()), e))?;
    let expected = cols * rows * 4;
    if bytes.len() != expected {
        return Err(ForgeError::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Image2D::new(cols, rows, pixel, kind, values)
}

pub(crate) fn read_u8_mask(path: &Path, cols: usize, rows: usize, pixel: f64) -> Result<Image2D> {
    let bytes = fs::read(path).map_err(|e| ForgeError::io(format!("reading {}", path.display()), e))?;
    if bytes.len() != cols * rows {
        return Err(ForgeError::Truncated {
            path: path.to_path_buf(),
            expected: (cols * rows) as u64,
            actual: bytes.len() as u64,
        });
    }
    Image2D::new(
        cols,
        rows,
        pixel,
        ImageKind::Mask,
        bytes.iter().map(|&b| b as f64).collect(),
    )
}

/// Loads and validates a record directory.
pub fn read_record(dir: &Path) -> Result<SampleRecord> {
    let meta = read_meta(dir)?;
    let ImageDims {
        cols,
        rows,
        pixel_size_mm: px,
    } = meta.dims;
    let image = read_f32_image(&dir.join(IMAGE_FILE), cols, rows, px, ImageKind::Normalized)?;
    let mask = read_u8_mask(&dir.join(MASK_FILE), cols, rows, px)?;
    let belief_maps = [
        read_f32_image(&dir.join(BELIEF_FILES[0]), cols, rows, px, ImageKind::Probability)?,
        read_f32_image(&dir.join(BELIEF_FILES[1]), cols, rows, px, ImageKind::Probability)?,
    ];
    if meta.has_preview && !dir.join(PREVIEW_FILE).is_file() {
        return Err(invalid(dir, "preview.png missing"));
    }
    let rec = SampleRecord {
        image,
        mask,
        belief_maps,
        meta,
    };
    validate_record(&rec, dir)?;
    Ok(rec)
}

/// All record directories (those holding `meta.json`) below `root`, sorted.
pub fn find_records(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| ForgeError::io(format!("listing {}", d.display()), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| ForgeError::io(format!("listing {}", d.display()), e))?;
            let p = entry.path();
            if p.is_dir() {
                if p.join(META_FILE).is_file() {
                    out.push(p);
                } else {
                    stack.push(p);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}
