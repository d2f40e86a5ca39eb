//! Evaluation metrics: mean signed angle error, thresholded error fraction,
//! off-track distance, and threshold derivation from driving parameters.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{estimate_homography, warp_into_frame, Quad};
use crate::model::SteeringModel;
use crate::real::{r, Real};
use crate::scene::Scene;
use crate::tensor::Tensor;

/// Which misleading direction counts toward the thresholded fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDirection {
    /// Positive errors (steering pushed left) beyond the threshold.
    Left,
    /// Negative errors (steering pushed right) beyond the threshold.
    Right,
    /// Either side, by absolute value.
    Either,
}

impl std::str::FromStr for ErrorDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(ErrorDirection::Left),
            "right" => Ok(ErrorDirection::Right),
            "either" => Ok(ErrorDirection::Either),
            other => Err(Error::Argument(format!(
                "direction must be left|right|either, got {other:?}"
            ))),
        }
    }
}

/// Mean signed angle error (degrees) over per-frame errors
/// `f(x') - f(x)`.
pub fn m0<R: Real>(errors: &[R]) -> Result<R> {
    if errors.is_empty() {
        return Err(Error::Argument("m0 of an empty error list".into()));
    }
    let sum: R = errors.iter().copied().sum();
    Ok(sum / r::<R>(errors.len() as f64))
}

/// Fraction of frames whose direction-adjusted error exceeds `tau` degrees.
pub fn m1<R: Real>(errors: &[R], tau: R, direction: ErrorDirection) -> Result<R> {
    if errors.is_empty() {
        return Err(Error::Argument("m1 of an empty error list".into()));
    }
    if tau <= R::zero() {
        return Err(Error::Argument("m1 threshold must be positive".into()));
    }
    let count = errors
        .iter()
        .filter(|&&e| match direction {
            ErrorDirection::Left => e > tau,
            ErrorDirection::Right => -e > tau,
            ErrorDirection::Either => e.abs() > tau,
        })
        .count();
    Ok(r::<R>(count as f64) / r::<R>(errors.len() as f64))
}

/// Lateral displacement `v * i * sin(alpha' - alpha)` in meters accrued over
/// one decision interval. Angles in degrees.
pub fn off_track<R: Real>(v_mps: R, interval_s: R, alpha_deg: R, alpha_prime_deg: R) -> R {
    let delta = (alpha_prime_deg - alpha_deg).to_radians();
    v_mps * interval_s * delta.sin()
}

/// The angle error (degrees) that produces `offset_m` of off-track distance
/// at speed `v_mps` over `interval_s`: `asin(offset / (v*i))`.
pub fn tau_for<R: Real>(v_mps: R, interval_s: R, offset_m: R) -> Result<R> {
    if v_mps < R::zero() || interval_s <= R::zero() {
        return Err(Error::Argument(
            "tau_for needs v >= 0 and interval > 0".into(),
        ));
    }
    let reach = v_mps * interval_s;
    if offset_m > reach {
        return Err(Error::Infeasible(format!(
            "offset {offset_m} m exceeds v*i = {reach} m; no steering angle suffices"
        )));
    }
    Ok((offset_m / reach).asin().to_degrees())
}

/// Per-frame evaluation of a perturbation texture against a scene.
#[derive(Debug, Clone)]
pub struct EvalResult<R: Real> {
    pub baseline_deg: Vec<R>,
    pub perturbed_deg: Vec<R>,
    /// Signed errors `perturbed - baseline` per frame.
    pub errors_deg: Vec<R>,
    pub m0_deg: R,
    /// Mean |error|; the signed mean is the headline metric, this is the
    /// magnitude view.
    pub mean_abs_error_deg: R,
    pub m1: R,
    pub tau_deg: R,
    pub direction: ErrorDirection,
}

impl<R: Real> EvalResult<R> {
    pub fn frames(&self) -> usize {
        self.errors_deg.len()
    }
}

/// Warp the texture into every frame (honoring each frame's color
/// adjustment), predict, and aggregate errors against the baseline angles.
pub fn evaluate<R: Real>(
    scene: &Scene<R>,
    model: &SteeringModel<R>,
    texture: &Tensor<R>,
    tau_deg: R,
    direction: ErrorDirection,
) -> Result<EvalResult<R>> {
    if scene.is_empty() {
        return Err(Error::Argument("evaluate on an empty scene".into()));
    }
    let (hb, wb) = (texture.shape()[1], texture.shape()[2]);
    let src = Quad::texture_rect(hb, wb);
    let baseline_deg = scene.baseline_angles(model)?;
    let perturbed_deg: Vec<R> = scene
        .frames
        .par_iter()
        .map(|frame| -> Result<R> {
            let h = estimate_homography(&src, &frame.quad)?;
            let warped = warp_into_frame(texture, &h, &frame.image, &frame.adj)?;
            model.predict(&warped)
        })
        .collect::<Result<Vec<_>>>()?;
    let errors_deg: Vec<R> = perturbed_deg
        .iter()
        .zip(&baseline_deg)
        .map(|(&p, &b)| p - b)
        .collect();
    let m0_deg = m0(&errors_deg)?;
    let abs_errors: Vec<R> = errors_deg.iter().map(|e| e.abs()).collect();
    let mean_abs_error_deg = m0(&abs_errors)?;
    let m1 = m1(&errors_deg, tau_deg, direction)?;
    Ok(EvalResult {
        baseline_deg,
        perturbed_deg,
        errors_deg,
        m0_deg,
        mean_abs_error_deg,
        m1,
        tau_deg,
        direction,
    })
}

#[derive(Debug, Serialize)]
struct EvalResultDoc {
    frames: usize,
    tau_deg: f64,
    direction: ErrorDirection,
    m0_deg: f64,
    mean_abs_error_deg: f64,
    m1: f64,
    errors_deg: Vec<f64>,
}

impl<R: Real> EvalResult<R> {
    /// Serialize the aggregate result as JSON.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let doc = EvalResultDoc {
            frames: self.frames(),
            tau_deg: self.tau_deg.to_f64_lossy(),
            direction: self.direction,
            m0_deg: self.m0_deg.to_f64_lossy(),
            mean_abs_error_deg: self.mean_abs_error_deg.to_f64_lossy(),
            m1: self.m1.to_f64_lossy(),
            errors_deg: self.errors_deg.iter().map(|e| e.to_f64_lossy()).collect(),
        };
        let mut text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Format(format!("eval encode: {e}")))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Per-frame timeline CSV: `frame_index,baseline_deg,perturbed_deg,error_deg`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("frame_index,baseline_deg,perturbed_deg,error_deg\n");
        for i in 0..self.frames() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i,
                self.baseline_deg[i].to_f64_lossy(),
                self.perturbed_deg[i].to_f64_lossy(),
                self.errors_deg[i].to_f64_lossy(),
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Miles-per-hour to meters-per-second (used by the CLI flags; the metric
/// functions themselves take SI units).
pub const MPS_PER_MPH: f64 = 0.44704;
