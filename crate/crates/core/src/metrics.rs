//! Segmentation overlap and landmark accuracy.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::projector::Image2D;

pub const DEFAULT_PIXEL_SIZE_MM: f64 = 0.62;
/// Side of the square window used for sub-pixel landmark refinement.
pub const EXTRACTION_WINDOW: usize = 11;

/// Dice overlap `2|A∩B| / (|A| + |B|)` after thresholding both images at `threshold`.
/// Two empty masks agree perfectly (1.0).
pub fn dice(pred: &Image2D, gt: &Image2D, threshold: f64) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(ForgeError::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.cols, pred.rows, gt.cols, gt.rows
        )));
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.values.iter().zip(&gt.values) {
        let (p, g) = (p >= threshold, g >= threshold);
        a += usize::from(p);
        b += usize::from(g);
        inter += usize::from(p && g);
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Euclidean landmark distance converted to millimeters.
pub fn landmark_error_mm(pred_px: [f64; 2], gt_px: [f64; 2], pixel_size_mm: f64) -> Result<f64> {
    if !pred_px.iter().chain(&gt_px).all(|v| v.is_finite()) {
        return Err(ForgeError::InvalidArgument("non-finite landmark coordinates".into()));
    }
    Ok((pred_px[0] - gt_px[0]).hypot(pred_px[1] - gt_px[1]) * pixel_size_mm)
}

/// How [`extract_landmark_with`] refines the integer argmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubpixelMethod {
    /// Integer argmax, no refinement.
    Argmax,
    /// Intensity-weighted centroid over the window.
    Centroid,
    /// Intensity-weighted least-squares fit of a Gaussian (a quadratic in log
    /// intensity) over the window. Falls back to the centroid when the fit has no
    /// maximum.
    #[default]
    GaussianFit,
}

/// Sub-pixel landmark from a belief map using the default method.
pub fn extract_landmark(belief: &Image2D) -> Result<[f64; 2]> {
    extract_landmark_with(belief, SubpixelMethod::default())
}

pub fn extract_landmark_with(belief: &Image2D, method: SubpixelMethod) -> Result<[f64; 2]> {
    let (c, r) = belief.argmax().ok_or(ForgeError::NoDetection)?;
    if !(belief.get(c, r) > 0.0) {
        return Err(ForgeError::NoDetection);
    }
    let half = (EXTRACTION_WINDOW / 2) as isize;
    let window: Vec<(f64, f64, f64)> = (-half..=half)
        .flat_map(|dy| (-half..=half).map(move |dx| (dx, dy)))
        .filter_map(|(dx, dy)| {
            let x = c as isize + dx;
            let y = r as isize + dy;
            if x < 0 || y < 0 || x >= belief.cols as isize || y >= belief.rows as isize {
                return None;
            }
            let w = belief.get(x as usize, y as usize);
            (w > 0.0).then_some((dx as f64, dy as f64, w))
        })
        .collect();

    let centroid = || {
        let total: f64 = window.iter().map(|p| p.2).sum();
        let mx: f64 = window.iter().map(|p| p.0 * p.2).sum::<f64>() / total;
        let my: f64 = window.iter().map(|p| p.1 * p.2).sum::<f64>() / total;
        [c as f64 + mx, r as f64 + my]
    };

    match method {
        SubpixelMethod::Argmax => Ok([c as f64, r as f64]),
        SubpixelMethod::Centroid => Ok(centroid()),
        SubpixelMethod::GaussianFit => Ok(gaussian_fit(&window)
            .map(|[dx, dy]| [c as f64 + dx, r as f64 + dy])
            .unwrap_or_else(centroid)),
    }
}

/// Fits `ln w = a + b x + c y + d x^2 + e y^2` with weights `w^2` and returns the peak
/// offset, or `None` if the fit is singular, has no maximum, or leaves the window.
fn gaussian_fit(window: &[(f64, f64, f64)]) -> Option<[f64; 2]> {
    if window.len() < 5 {
        return None;
    }
    let mut ata = SMatrix::<f64, 5, 5>::zeros();
    let mut atb = SVector::<f64, 5>::zeros();
    for &(x, y, w) in window {
        let row = SVector::<f64, 5>::new(1.0, x, y, x * x, y * y);
        let wt = w * w;
        ata += row * row.transpose() * wt;
        atb += row * (wt * w.ln());
    }
    let sol = ata.lu().solve(&atb)?;
    let (d, e) = (sol[3], sol[4]);
    if !(d < 0.0 && e < 0.0) {
        return None;
    }
    let dx = -sol[1] / (2.0 * d);
    let dy = -sol[2] / (2.0 * e);
    let lim = (EXTRACTION_WINDOW / 2) as f64;
    (dx.is_finite() && dy.is_finite() && dx.abs() <= lim && dy.abs() <= lim).then_some([dx, dy])
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        }
    }
}

/// Per-sample scores for one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub dice: f64,
    /// Proximal then distal landmark error (mm).
    pub landmark_error_mm: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleScore>,
    pub dice: MeanStd,
    /// Pooled over both landmarks.
    pub landmark_error_mm: MeanStd,
    pub proximal_error_mm: MeanStd,
    pub distal_error_mm: MeanStd,
}

impl EvalReport {
    pub fn from_samples(samples: Vec<SampleScore>) -> Self {
        let dice: Vec<f64> = samples.iter().map(|s| s.dice).collect();
        let prox: Vec<f64> = samples.iter().map(|s| s.landmark_error_mm[0]).collect();
        let dist: Vec<f64> = samples.iter().map(|s| s.landmark_error_mm[1]).collect();
        let pooled: Vec<f64> = prox.iter().chain(&dist).copied().collect();
        Self {
            dice: MeanStd::of(&dice),
            landmark_error_mm: MeanStd::of(&pooled),
            proximal_error_mm: MeanStd::of(&prox),
            distal_error_mm: MeanStd::of(&dist),
            samples,
        }
    }

    /// One CSV row per sample with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,dice,proximal_error_mm,distal_error_mm\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.sample_id, s.dice, s.landmark_error_mm[0], s.landmark_error_mm[1]
            ));
        }
        out
    }
}
