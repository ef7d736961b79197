//! Reproducible sampling of sample configurations and dataset splits.
//!
//! Every sample draws from its own generator seeded by a SHA-256 digest of
//! `(master_seed, ct_id, femur_side, sample_index)`, so samples can be produced
//! in any order or in parallel and still match bit for bit.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdm_model::{CdmShape, CONTROL_POINTS};
use crate::error::{ForgeError, Result};
use crate::geometry::RigidParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FemurSide {
    Left,
    Right,
}

impl FemurSide {
    pub const BOTH: [FemurSide; 2] = [FemurSide::Left, FemurSide::Right];

    pub fn as_str(&self) -> &'static str {
        match self {
            FemurSide::Left => "left",
            FemurSide::Right => "right",
        }
    }
}

impl std::str::FromStr for FemurSide {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(FemurSide::Left),
            "right" => Ok(FemurSide::Right),
            other => Err(ForgeError::InvalidArgument(format!("unknown femur side `{other}`"))),
        }
    }
}

/// Sampling ranges (mm / degrees). The CDM pose perturbation is kept small so the
/// manipulator stays inside the bone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingRanges {
    pub source_to_detector_mm: f64,
    pub source_to_isocenter_mm: [f64; 2],
    /// Half-open `[lo, hi)`.
    pub lao_rao_deg: [f64; 2],
    pub cran_caud_deg: [f64; 2],
    /// Symmetric bound on each volume translation component.
    pub volume_translation_mm: f64,
    /// Symmetric bound on each control angle.
    pub control_angle_deg: f64,
    /// Symmetric bound on each CDM rotation about the aligned pose.
    pub cdm_rotation_deg: f64,
    /// Symmetric bound on each CDM translation about the aligned pose.
    pub cdm_translation_mm: f64,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        Self {
            source_to_detector_mm: 1200.0,
            source_to_isocenter_mm: [400.0, 500.0],
            lao_rao_deg: [0.0, 360.0],
            cran_caud_deg: [75.0, 105.0],
            volume_translation_mm: 20.0,
            control_angle_deg: 7.9,
            cdm_rotation_deg: 5.0,
            cdm_translation_mm: 2.0,
        }
    }
}

impl SamplingRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.source_to_isocenter_mm) || !ordered(self.cran_caud_deg) || !ordered(self.lao_rao_deg) {
            return Err(ForgeError::Config(
                "sampling ranges must be finite [lo, hi] pairs".into(),
            ));
        }
        if !(self.lao_rao_deg[1] > self.lao_rao_deg[0]) {
            return Err(ForgeError::Config("lao_rao_deg range must be non-empty".into()));
        }
        if !(self.source_to_isocenter_mm[0] > 0.0 && self.source_to_detector_mm > self.source_to_isocenter_mm[1]) {
            return Err(ForgeError::Config(
                "require SDD > SID > 0 over the whole SID range".into(),
            ));
        }
        for (name, v) in [
            ("volume_translation_mm", self.volume_translation_mm),
            ("control_angle_deg", self.control_angle_deg),
            ("cdm_rotation_deg", self.cdm_rotation_deg),
            ("cdm_translation_mm", self.cdm_translation_mm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ForgeError::Config(format!("{name} must be a non-negative bound")));
            }
        }
        Ok(())
    }
}

/// The random draw for the C-arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitDraw {
    pub source_to_detector_mm: f64,
    pub source_to_isocenter_mm: f64,
    pub lao_rao_deg: f64,
    pub cran_caud_deg: f64,
}

/// Full parameter draw for one rendered sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub ct_id: String,
    pub femur_side: FemurSide,
    pub sample_index: u32,
    pub rng_seed: u64,
    /// CDM perturbation about the femur alignment.
    pub cdm_pose: RigidParams,
    pub volume_translation_mm: [f64; 3],
    pub shape: CdmShape,
    pub geometry: OrbitDraw,
}

impl SampleConfig {
    pub fn sample_id(&self) -> String {
        sample_id(&self.ct_id, self.femur_side, self.sample_index)
    }
}

pub fn sample_id(ct_id: &str, side: FemurSide, index: u32) -> String {
    format!("{ct_id}_{}_{index}", side.as_str())
}

fn digest_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&out[..8]);
    u64::from_le_bytes(bytes)
}

/// Seed of the per-sample generator.
pub fn derive_sample_seed(master_seed: u64, ct_id: &str, side: FemurSide, sample_index: u32) -> u64 {
    digest_seed(&[
        b"forge/sample/v1",
        &master_seed.to_le_bytes(),
        ct_id.as_bytes(),
        side.as_str().as_bytes(),
        &sample_index.to_le_bytes(),
    ])
}

fn symmetric(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Draws one configuration. Fields are drawn in a fixed order from the per-sample generator.
pub fn sample_configuration(
    master_seed: u64,
    ct_id: &str,
    femur_side: FemurSide,
    sample_index: u32,
    ranges: &SamplingRanges,
) -> Result<SampleConfig> {
    ranges.validate()?;
    let rng_seed = derive_sample_seed(master_seed, ct_id, femur_side, sample_index);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let [sid_lo, sid_hi] = ranges.source_to_isocenter_mm;
    let sid = if sid_hi > sid_lo {
        rng.random_range(sid_lo..=sid_hi)
    } else {
        sid_lo
    };
    let [a_lo, a_hi] = ranges.lao_rao_deg;
    let alpha = rng.random_range(a_lo..a_hi);
    let [b_lo, b_hi] = ranges.cran_caud_deg;
    let beta = if b_hi > b_lo {
        rng.random_range(b_lo..=b_hi)
    } else {
        b_lo
    };

    let volume_translation_mm: [f64; 3] = std::array::from_fn(|_| symmetric(&mut rng, ranges.volume_translation_mm));
    let rot: [f64; 3] = std::array::from_fn(|_| symmetric(&mut rng, ranges.cdm_rotation_deg));
    let t_mm: [f64; 3] = std::array::from_fn(|_| symmetric(&mut rng, ranges.cdm_translation_mm));
    let control: [f64; CONTROL_POINTS] = std::array::from_fn(|_| symmetric(&mut rng, ranges.control_angle_deg));

    Ok(SampleConfig {
        ct_id: ct_id.to_string(),
        femur_side,
        sample_index,
        rng_seed,
        cdm_pose: RigidParams {
            rx_deg: rot[0],
            ry_deg: rot[1],
            rz_deg: rot[2],
            t_mm,
        },
        volume_translation_mm,
        shape: CdmShape::new(control)?,
        geometry: OrbitDraw {
            source_to_detector_mm: ranges.source_to_detector_mm,
            source_to_isocenter_mm: sid,
            lao_rao_deg: alpha,
            cran_caud_deg: beta,
        },
    })
}

/// Identifies one sample in a manifest.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRef {
    pub ct_id: String,
    pub femur_side: FemurSide,
    pub sample_index: u32,
}

impl SampleRef {
    pub fn id(&self) -> String {
        sample_id(&self.ct_id, self.femur_side, self.sample_index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// CT-level train/test split plus a sample-level train/validation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub master_seed: u64,
    pub samples_per_femur: u32,
    pub train_cts: Vec<String>,
    pub test_cts: Vec<String>,
    pub train_samples: Vec<SampleRef>,
    pub val_samples: Vec<SampleRef>,
    pub test_samples: Vec<SampleRef>,
}

impl SplitManifest {
    pub fn iter(&self) -> impl Iterator<Item = (Split, &SampleRef)> {
        self.train_samples
            .iter()
            .map(|s| (Split::Train, s))
            .chain(self.val_samples.iter().map(|s| (Split::Val, s)))
            .chain(self.test_samples.iter().map(|s| (Split::Test, s)))
    }

    pub fn len(&self) -> usize {
        self.train_samples.len() + self.val_samples.len() + self.test_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Number of CTs assigned to training: `ceil(0.8 n)`, keeping at least one test CT.
pub fn train_ct_count(n: usize) -> usize {
    (4 * n).div_ceil(5).min(n - 1)
}

/// Splits CTs 4:1 (in the given order) and the training pool 10:1 into train/val.
///
/// The training pool is shuffled with a generator derived from `master_seed`; the
/// first `floor(N / 11)` shuffled samples become validation.
pub fn make_split(ct_ids: &[String], samples_per_femur: u32, master_seed: u64) -> Result<SplitManifest> {
    if ct_ids.len() < 2 {
        return Err(ForgeError::InvalidArgument(format!(
            "need at least 2 CTs to split, got {}",
            ct_ids.len()
        )));
    }
    let mut seen = HashSet::new();
    for id in ct_ids {
        if id.is_empty() {
            return Err(ForgeError::InvalidArgument("empty CT id".into()));
        }
        if !seen.insert(id) {
            return Err(ForgeError::InvalidArgument(format!("duplicate CT id `{id}`")));
        }
    }
    let n_train = train_ct_count(ct_ids.len());
    let (train_cts, test_cts) = ct_ids.split_at(n_train);

    let refs = |cts: &[String]| -> Vec<SampleRef> {
        cts.iter()
            .flat_map(|ct| {
                FemurSide::BOTH.into_iter().flat_map(move |side| {
                    (0..samples_per_femur).map(move |i| SampleRef {
                        ct_id: ct.clone(),
                        femur_side: side,
                        sample_index: i,
                    })
                })
            })
            .collect()
    };

    let mut pool = refs(train_cts);
    let mut rng = ChaCha8Rng::seed_from_u64(digest_seed(&[b"forge/split/v1", &master_seed.to_le_bytes()]));
    pool.shuffle(&mut rng);
    let n_val = pool.len() / 11;
    let train_samples = pool.split_off(n_val);

    Ok(SplitManifest {
        master_seed,
        samples_per_femur,
        train_cts: train_cts.to_vec(),
        test_cts: test_cts.to_vec(),
        train_samples,
        val_samples: pool,
        test_samples: refs(test_cts),
    })
}
