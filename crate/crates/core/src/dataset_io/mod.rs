//! Pipeline orchestration, CT ingestion and the on-disk dataset format.

pub mod config;
pub mod phantom;
pub mod record;
pub mod volume_io;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdm_model::CdmPosedModel;
use crate::error::{ForgeError, Result};
use crate::geometry::{camera_from_orbit, ProjectionGeometry, RigidTransform, Vec3};
use crate::metrics::{dice, extract_landmark, landmark_error_mm, EvalReport, SampleScore};
use crate::projector::{
    add_poisson_noise, belief_map, normalize_line_integrals, project_mask, raycast_line_integrals, render_landmarks,
    BeliefMapParams, Image2D, ImageKind, PosedVolume,
};
use crate::sampler::{make_split, sample_configuration, SampleConfig, Split, SplitManifest};
use crate::volume::{GridSpec, VoxelVolume};
use crate::voxelizer::{
    carve_drill, compose_material_attenuation, hu_to_attenuation, resample_occupancy_to_grid, union_occupancy,
    voxelize_on_grid,
};

pub use config::{FemurAlignment, PipelineConfig};
pub use phantom::{make_phantom_ct, PhantomSpec};
pub use record::{find_records, read_record, write_record, RecordMeta, SampleRecord};
pub use volume_io::{read_ct, read_volume, read_volume_header, write_metaimage, write_volume, CtVolume};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: &str = "forge-manifest/1";

/// A CT ready for rendering.
#[derive(Clone, Debug)]
pub struct PreparedCt {
    pub id: String,
    pub volume: VoxelVolume,
    pub alignment: FemurAlignment,
    pub digest: String,
}

impl PreparedCt {
    pub fn new(id: impl Into<String>, volume: VoxelVolume, alignment: FemurAlignment) -> Result<Self> {
        volume.expect_kind(crate::volume::VolumeKind::Hu)?;
        let digest = volume_digest(&volume);
        Ok(Self {
            id: id.into(),
            volume,
            alignment,
            digest,
        })
    }

    /// Loads a CT; the id is the file stem. A config alignment overrides the header's.
    pub fn load(path: &Path, cfg: &PipelineConfig) -> Result<Self> {
        let id = ct_id_from_path(path)?;
        let ct = read_ct(path)?;
        let alignment = cfg
            .alignments
            .get(&id)
            .copied()
            .or(ct.femoral_alignment)
            .ok_or_else(|| ForgeError::Config(format!("no femur alignment for CT `{id}` in config or header")))?;
        Self::new(id, ct.volume, alignment)
    }

    fn info(&self) -> record::CtInfo {
        record::CtInfo {
            id: self.id.clone(),
            digest: self.digest.clone(),
            dims: self.volume.grid.dims,
            spacing_mm: self.volume.grid.spacing_mm.into(),
        }
    }
}

pub fn ct_id_from_path(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .ok_or_else(|| ForgeError::InvalidArgument(format!("cannot derive a CT id from {}", path.display())))
}

/// SHA-256 over grid layout and voxel values.
pub fn volume_digest(v: &VoxelVolume) -> String {
    let g = &v.grid;
    let mut bytes = Vec::with_capacity(v.values.len() * 4 + 96);
    for d in g.dims {
        bytes.extend((d as u64).to_le_bytes());
    }
    for x in g.spacing_mm.iter().chain(g.origin_mm.iter()) {
        bytes.extend(x.to_le_bytes());
    }
    bytes.extend(volume_io::f32_le_bytes(v.values.iter().copied()));
    config::hex_digest(&bytes)
}

fn noise_seed(sample_seed: u64) -> u64 {
    sample_seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Renders one sample: pose the manipulator, carve it into the CT, project, and
/// derive the ground truth.
pub fn render_sample(
    cfg: &PipelineConfig,
    ct: &PreparedCt,
    sample: &SampleConfig,
    split: Option<Split>,
) -> Result<SampleRecord> {
    if sample.ct_id != ct.id {
        return Err(ForgeError::InvalidArgument(format!(
            "sample is for CT `{}` but CT `{}` was given",
            sample.ct_id, ct.id
        )));
    }
    let model = CdmPosedModel::new(&sample.shape, &cfg.cdm)?;
    let meshes = &model.meshes;

    // One shared manipulator-local grid so body, tool and mask support line up.
    let (blo, bhi) = meshes
        .body
        .bounding_box()
        .ok_or_else(|| ForgeError::MeshDegenerate("empty body".into()))?;
    let (tlo, thi) = meshes
        .tool
        .bounding_box()
        .ok_or_else(|| ForgeError::MeshDegenerate("empty tool".into()))?;
    let grid = GridSpec::bounding(
        blo.inf(&tlo),
        bhi.sup(&thi),
        cfg.voxelization.cdm_spacing_mm,
        cfg.voxelization.padding_mm,
    )?;
    let body = voxelize_on_grid(&meshes.body, &grid)?;
    let tool = voxelize_on_grid(&meshes.tool, &grid)?;
    let notch = voxelize_on_grid(&meshes.notch_region, &grid)?;

    let alignment = *ct.alignment.for_side(sample.femur_side);
    let cdm_to_ct = alignment.to_transform()?.compose(&sample.cdm_pose.to_transform()?);
    let ct_to_world =
        RigidTransform::from_translation(Vec3::from(sample.volume_translation_mm) - ct.volume.grid.center());
    let cdm_to_world = ct_to_world.compose(&cdm_to_ct);

    let ct_att = {
        let solid = union_occupancy(&body, &tool)?;
        let drill = resample_occupancy_to_grid(&solid, &ct.volume.grid, &cdm_to_ct, cfg.voxelization.supersampling)?;
        let carved = carve_drill(&ct.volume, &drill, cfg.materials.drilled_hu)?;
        hu_to_attenuation(&carved, cfg.materials.mu_water_per_mm)?
    };
    let cdm_att = compose_material_attenuation(
        &body,
        &tool,
        cfg.materials.mu_nitinol_per_mm,
        cfg.materials.mu_tool_per_mm,
    )?;
    drop((body, tool));

    let o = &sample.geometry;
    let d = &cfg.detector;
    let geometry = ProjectionGeometry::new(
        o.source_to_detector_mm,
        o.source_to_isocenter_mm,
        o.lao_rao_deg,
        o.cran_caud_deg,
        d.cols,
        d.rows,
        d.pixel_size_mm,
    )?;
    let cam = camera_from_orbit(&geometry)?;
    let step = cfg.render.step_mm;

    let mut line = raycast_line_integrals(
        &[
            PosedVolume::new(&ct_att, ct_to_world),
            PosedVolume::new(&cdm_att, cdm_to_world),
        ],
        &cam,
        &geometry,
        step,
    )?;
    drop((ct_att, cdm_att));
    if let Some(n0) = cfg.render.noise_photons {
        line = add_poisson_noise(&line, n0, noise_seed(sample.rng_seed))?;
    }
    let (image, min, max) = normalize_line_integrals(&line)?;
    let mask = project_mask(&PosedVolume::new(&notch, cdm_to_world), &cam, &geometry, step)?;
    let landmarks_px = render_landmarks(&model.kinematics, &cdm_to_world, &cam, &geometry)?;
    let params = BeliefMapParams {
        sigma_px: cfg.render.belief_sigma_px,
    };
    let belief = |pt| -> Result<Image2D> {
        let mut b = belief_map(pt, &params, d.cols, d.rows)?;
        b.pixel_size_mm = d.pixel_size_mm;
        Ok(b)
    };
    let belief_maps = [belief(landmarks_px[0])?, belief(landmarks_px[1])?];

    let config = cfg.normalized();
    let meta = RecordMeta {
        schema: record::RECORD_SCHEMA.into(),
        pipeline_version: record::PIPELINE_VERSION.into(),
        config_hash: config.hash(),
        sample_id: sample.sample_id(),
        split,
        sample: sample.clone(),
        geometry,
        ct: ct.info(),
        femur_alignment: alignment,
        ct_to_world: record::matrix_rows(&ct_to_world),
        cdm_to_world: record::matrix_rows(&cdm_to_world),
        joint_angles_deg: model.kinematics.joint_angles_deg.to_vec(),
        conventions: record::Conventions::default(),
        landmarks_in_bounds: landmarks_px.map(|p| record::landmark_in_bounds(p, d.cols, d.rows)),
        landmarks_px,
        normalization: record::Normalization { min, max },
        dims: record::ImageDims {
            cols: d.cols,
            rows: d.rows,
            pixel_size_mm: d.pixel_size_mm,
        },
        has_preview: cfg.write_previews,
        config,
    };
    Ok(SampleRecord {
        image,
        mask,
        belief_maps,
        meta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub split: Split,
    /// Relative to the dataset root.
    pub path: String,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Written once to `<out>/manifest.json` after all samples finish.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema: String,
    pub pipeline_version: String,
    pub config_hash: String,
    pub ct_ids: Vec<String>,
    pub split: SplitManifest,
    pub records: Vec<ManifestEntry>,
    pub failed: usize,
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| ForgeError::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Outcome of [`generate_dataset`].
#[derive(Clone, Debug)]
pub struct GenerateReport {
    pub manifest: DatasetManifest,
    pub generated: usize,
    /// Records already on disk with a matching config hash, sample and CT.
    pub reused: usize,
    pub failures: Vec<(String, String)>,
    pub max_failure_rate: f64,
}

impl GenerateReport {
    pub fn total(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn failure_rate(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.failures.len() as f64 / self.total() as f64
        }
    }

    pub fn failure_rate_exceeded(&self) -> bool {
        self.failure_rate() > self.max_failure_rate
    }
}

enum Outcome {
    Generated,
    Reused,
    Failed(String),
}

fn existing_record_matches(dir: &Path, hash: &str, sample: &SampleConfig, split: Split, ct: &PreparedCt) -> bool {
    match read_record(dir) {
        Ok(rec) => {
            rec.meta.config_hash == hash
                && rec.meta.sample == *sample
                && rec.meta.split == Some(split)
                && rec.meta.ct.digest == ct.digest
        }
        Err(_) => false,
    }
}

/// Generates every sample of the split manifest into `out`.
///
/// Samples run in parallel on `cfg.workers` threads. Failed samples are logged and
/// skipped; valid records from an earlier run with the same config are kept.
pub fn generate_dataset(
    cfg: &PipelineConfig,
    cts: &[PreparedCt],
    master_seed: u64,
    out: &Path,
) -> Result<GenerateReport> {
    cfg.validate()?;
    let ids: Vec<String> = cts.iter().map(|c| c.id.clone()).collect();
    let mut seen = HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(ForgeError::InvalidArgument(format!("duplicate CT id `{dup}`")));
    }
    let split = make_split(&ids, cfg.samples_per_femur, master_seed)?;
    fs::create_dir_all(out).map_err(|e| ForgeError::io(format!("creating {}", out.display()), e))?;
    let hash = cfg.hash();

    let jobs: Vec<(Split, SampleConfig, &PreparedCt)> = split
        .iter()
        .map(|(s, r)| {
            let ct = cts
                .iter()
                .find(|c| c.id == r.ct_id)
                .expect("split only lists known CTs");
            sample_configuration(master_seed, &r.ct_id, r.femur_side, r.sample_index, &cfg.ranges)
                .map(|sample| (s, sample, ct))
        })
        .collect::<Result<_>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ForgeError::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        jobs.par_iter()
            .map(|(s, sample, ct)| {
                let id = sample.sample_id();
                let dir = record::record_dir(out, *s, &id);
                if existing_record_matches(&dir, &hash, sample, *s, ct) {
                    log::debug!("{id}: up to date");
                    return Outcome::Reused;
                }
                match render_sample(cfg, ct, sample, Some(*s)).and_then(|rec| write_record(&rec, &dir)) {
                    Ok(()) => {
                        log::info!("{id}: written");
                        Outcome::Generated
                    }
                    Err(e) => {
                        log::error!("{id}: {e}");
                        Outcome::Failed(e.to_string())
                    }
                }
            })
            .collect()
    });

    let mut records = Vec::with_capacity(jobs.len());
    let (mut generated, mut reused, mut failures) = (0, 0, Vec::new());
    for ((s, sample, _), outcome) in jobs.iter().zip(outcomes) {
        let id = sample.sample_id();
        let error = match outcome {
            Outcome::Generated => {
                generated += 1;
                None
            }
            Outcome::Reused => {
                reused += 1;
                None
            }
            Outcome::Failed(msg) => {
                failures.push((id.clone(), msg.clone()));
                Some(msg)
            }
        };
        records.push(ManifestEntry {
            path: format!("{}/{}", s.as_str(), id),
            sample_id: id,
            split: *s,
            status: if error.is_some() {
                RecordStatus::Failed
            } else {
                RecordStatus::Ok
            },
            error,
        });
    }
    let manifest = DatasetManifest {
        schema: MANIFEST_SCHEMA.into(),
        pipeline_version: record::PIPELINE_VERSION.into(),
        config_hash: hash,
        ct_ids: ids,
        split,
        failed: failures.len(),
        records,
    };
    volume_io::write_file(
        &out.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(GenerateReport {
        manifest,
        generated,
        reused,
        failures,
        max_failure_rate: cfg.max_failure_rate,
    })
}

/// Loads CTs from paths and generates the dataset.
pub fn generate_dataset_from_paths(
    cfg: &PipelineConfig,
    ct_paths: &[PathBuf],
    master_seed: u64,
    out: &Path,
) -> Result<GenerateReport> {
    let cts = ct_paths
        .iter()
        .map(|p| PreparedCt::load(p, cfg))
        .collect::<Result<Vec<_>>>()?;
    generate_dataset(cfg, &cts, master_seed, out)
}

/// Landmarks of a prediction directory: `landmarks.json` if present, otherwise
/// extracted from `belief_0.f32raw` / `belief_1.f32raw`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictedLandmarks {
    landmarks_px: [[f64; 2]; 2],
}

fn read_prediction(dir: &Path, cols: usize, rows: usize, px: f64) -> Result<(Image2D, [[f64; 2]; 2])> {
    let mask = if dir.join("mask.f32raw").is_file() {
        record::read_f32_image(&dir.join("mask.f32raw"), cols, rows, px, ImageKind::Probability)?
    } else {
        record::read_u8_mask(&dir.join(record::MASK_FILE), cols, rows, px)?
    };
    let lm_path = dir.join("landmarks.json");
    let landmarks = if lm_path.is_file() {
        let text =
            fs::read_to_string(&lm_path).map_err(|e| ForgeError::io(format!("reading {}", lm_path.display()), e))?;
        serde_json::from_str::<PredictedLandmarks>(&text)?.landmarks_px
    } else {
        let mut out = [[0.0; 2]; 2];
        for (k, name) in record::BELIEF_FILES.iter().enumerate() {
            let b = record::read_f32_image(&dir.join(name), cols, rows, px, ImageKind::Probability)?;
            out[k] = extract_landmark(&b)?;
        }
        out
    };
    Ok((mask, landmarks))
}

/// Scores predictions against a ground-truth dataset.
///
/// Every record below `gt` needs a prediction directory named after its sample id
/// somewhere below `pred`, holding `mask.u8raw` (binary) or `mask.f32raw`
/// (probabilities, thresholded at 0.5), and `landmarks.json` or belief maps.
pub fn evaluate_directories(pred: &Path, gt: &Path) -> Result<EvalReport> {
    let gt_dirs = find_records(gt)?;
    if gt_dirs.is_empty() {
        return Err(ForgeError::InvalidArgument(format!(
            "no records under {}",
            gt.display()
        )));
    }
    let mut pred_dirs = std::collections::HashMap::new();
    let mut stack = vec![pred.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| ForgeError::io(format!("listing {}", d.display()), e))?;
        for entry in entries {
            let p = entry
                .map_err(|e| ForgeError::io(format!("listing {}", d.display()), e))?
                .path();
            if p.is_dir() {
                if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
                    pred_dirs.insert(name.to_string(), p.clone());
                }
                stack.push(p);
            }
        }
    }
    let mut samples = Vec::with_capacity(gt_dirs.len());
    for dir in gt_dirs {
        let rec = read_record(&dir)?;
        let id = rec.meta.sample_id.clone();
        let pdir = pred_dirs.get(&id).ok_or_else(|| ForgeError::InvalidRecord {
            path: pred.join(&id),
            message: "missing prediction".into(),
        })?;
        let dims = rec.meta.dims;
        let (mask, lm) = read_prediction(pdir, dims.cols, dims.rows, dims.pixel_size_mm)?;
        let gt_lm = rec.meta.landmarks_px;
        samples.push(SampleScore {
            dice: dice(&mask, &rec.mask, 0.5)?,
            landmark_error_mm: [
                landmark_error_mm(lm[0], gt_lm[0], dims.pixel_size_mm)?,
                landmark_error_mm(lm[1], gt_lm[1], dims.pixel_size_mm)?,
            ],
            sample_id: id,
        });
    }
    Ok(EvalReport::from_samples(samples))
}
