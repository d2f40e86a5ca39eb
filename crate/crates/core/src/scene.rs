//! Drive-by scenes: ordered frames with billboard corner quads, per-frame
//! color adjustments, and the JSON manifest format that carries them.
//!
//! Manifest schema (version `deepbb/1`): a single JSON document
//!
//! ```json
//! {
//!   "version": "deepbb/1",
//!   "scene_id": "...",
//!   "prefill_color": [r, g, b],
//!   "notes": "...",
//!   "frames": [
//!     {"image": "frames/000.png", "quad": [[x,y],[x,y],[x,y],[x,y]],
//!      "clipped": false, "adj": [dr, dg, db]}
//!   ]
//! }
//! ```
//!
//! Image paths are relative to the manifest; quads are ordered top-left,
//! top-right, bottom-right, bottom-left in continuous pixel coordinates.
//! `adj` is optional (defaults to zero) until a calibration pass fills it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::color::Rgb;
use crate::error::{Error, Result};
use crate::geometry::{ColorAdjustment, Quad};
use crate::image_io;
use crate::model::SteeringModel;
use crate::real::{r, Real};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: &str = "deepbb/1";

/// One dashcam frame with its billboard annotation.
#[derive(Debug, Clone)]
pub struct FrameRecord<R: Real> {
    /// Normalized RGB image, `[3,Hf,Wf]`.
    pub image: Tensor<R>,
    /// Billboard corners in this frame.
    pub quad: Quad<R>,
    /// Corners may leave the image bounds (billboards sliding out of view in
    /// the last frames).
    pub clipped: bool,
    /// Additive color adjustment for this frame's lighting.
    pub adj: ColorAdjustment<R>,
    /// Unperturbed model prediction, in degrees, when a model was configured
    /// at load time.
    pub baseline_angle: Option<R>,
    /// Source image path as written in the manifest.
    pub image_path: String,
}

/// An ordered drive-by frame sequence.
#[derive(Debug, Clone)]
pub struct Scene<R: Real> {
    pub id: String,
    pub frames: Vec<FrameRecord<R>>,
    pub prefill_color: Rgb<R>,
    pub notes: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestDoc {
    version: String,
    scene_id: String,
    prefill_color: [f64; 3],
    #[serde(default)]
    notes: String,
    frames: Vec<ManifestFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFrame {
    image: String,
    quad: [[f64; 2]; 4],
    #[serde(default)]
    clipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adj: Option<[f64; 3]>,
}

impl<R: Real> Scene<R> {
    /// Frame dimensionality `[3,H,W]` (identical across frames).
    pub fn frame_shape(&self) -> [usize; 3] {
        let s = self.frames[0].image.shape();
        [s[0], s[1], s[2]]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Baseline angles, computing any that were not cached at load time.
    pub fn baseline_angles(&self, model: &SteeringModel<R>) -> Result<Vec<R>> {
        self.frames
            .iter()
            .map(|f| match f.baseline_angle {
                Some(a) => Ok(a),
                None => model.predict(&f.image),
            })
            .collect()
    }

    /// Fill the per-frame baseline cache from a model.
    pub fn compute_baselines(&mut self, model: &SteeringModel<R>) -> Result<()> {
        for frame in &mut self.frames {
            frame.baseline_angle = Some(model.predict(&frame.image)?);
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Validation(format!(
                "scene {:?} has no frames",
                self.id
            )));
        }
        let shape = self.frames[0].image.shape().to_vec();
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.image.shape() != shape.as_slice() {
                return Err(Error::Validation(format!(
                    "frame {i}: image shape {:?} differs from frame 0 {:?}",
                    frame.image.shape(),
                    shape
                )));
            }
            let (h, w) = (shape[1], shape[2]);
            if !frame.clipped && !frame.quad.within_bounds(w, h) {
                return Err(Error::Validation(format!(
                    "frame {i}: quad {:?} leaves the {w}x{h} frame but is not flagged clipped",
                    frame.quad.to_f64()
                )));
            }
        }
        Ok(())
    }

    /// Load a manifest without computing baselines (no model involved).
    pub fn load_raw(manifest_path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let doc: ManifestDoc = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
        if doc.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported manifest version {:?} (expected {MANIFEST_VERSION:?})",
                manifest_path.display(),
                doc.version
            )));
        }
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut frames = Vec::with_capacity(doc.frames.len());
        for (i, mf) in doc.frames.iter().enumerate() {
            let image_path = base.join(&mf.image);
            let image: Tensor<R> = image_io::load_image(&image_path).map_err(|e| match e {
                Error::Io { path, message } => Error::Io {
                    path,
                    message: format!("frame {i} ({}): {message}", mf.image),
                },
                other => other,
            })?;
            let quad = Quad::from_f64(mf.quad).map_err(|e| {
                Error::Validation(format!("frame {i}: {e}"))
            })?;
            let adj = match mf.adj {
                Some(ch) => ColorAdjustment::new(Rgb::from_f64(ch))
                    .map_err(|e| Error::Validation(format!("frame {i}: {e}")))?,
                None => ColorAdjustment::zero(),
            };
            frames.push(FrameRecord {
                image,
                quad,
                clipped: mf.clipped,
                adj,
                baseline_angle: None,
                image_path: mf.image.clone(),
            });
        }
        let scene = Scene {
            id: doc.scene_id,
            frames,
            prefill_color: Rgb::from_f64(doc.prefill_color),
            notes: doc.notes,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Load a manifest and compute per-frame baseline angles with the
    /// configured model.
    pub fn load(manifest_path: &Path, model: &SteeringModel<R>) -> Result<Self> {
        let mut scene = Self::load_raw(manifest_path)?;
        scene.compute_baselines(model)?;
        Ok(scene)
    }

    /// Write the manifest plus one image file per frame under `dir`.
    /// Images land in `dir/frames/NNN.<ext>`; the manifest at
    /// `dir/scene.json`. Returns the manifest path.
    pub fn save(&self, dir: &Path, image_ext: &str) -> Result<PathBuf> {
        self.validate()?;
        let frames_dir = dir.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        let mut manifest_frames = Vec::with_capacity(self.frames.len());
        for (i, frame) in self.frames.iter().enumerate() {
            let rel = format!("frames/{i:03}.{image_ext}");
            image_io::save_image(&frame.image, &dir.join(&rel))?;
            let adj = frame.adj.channels();
            manifest_frames.push(ManifestFrame {
                image: rel,
                quad: frame.quad.to_f64(),
                clipped: frame.clipped,
                adj: Some([
                    adj[0].to_f64_lossy(),
                    adj[1].to_f64_lossy(),
                    adj[2].to_f64_lossy(),
                ]),
            });
        }
        let doc = ManifestDoc {
            version: MANIFEST_VERSION.to_string(),
            scene_id: self.id.clone(),
            prefill_color: self.prefill_color.to_f64(),
            notes: self.notes.clone(),
            frames: manifest_frames,
        };
        let manifest_path = dir.join("scene.json");
        let mut text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        text.push('\n');
        std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(manifest_path)
    }
}

/// Rewrite the `adj` entries of an existing manifest in place (used by the
/// calibration pass). Everything else is preserved.
pub fn update_manifest_adj<R: Real>(
    manifest_path: &Path,
    adjs: &[ColorAdjustment<R>],
) -> Result<()> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let mut doc: ManifestDoc = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    if doc.frames.len() != adjs.len() {
        return Err(Error::Argument(format!(
            "{} adjustments for {} frames",
            adjs.len(),
            doc.frames.len()
        )));
    }
    for (mf, adj) in doc.frames.iter_mut().zip(adjs) {
        let ch = adj.channels();
        mf.adj = Some([
            ch[0].to_f64_lossy(),
            ch[1].to_f64_lossy(),
            ch[2].to_f64_lossy(),
        ]);
    }
    let mut out = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
    out.push('\n');
    std::fs::write(manifest_path, out).map_err(|e| Error::io(manifest_path, e))?;
    Ok(())
}

/// Estimate the per-frame color adjustment from a unicolor-prefilled
/// billboard: the per-channel median of the observed colors inside the quad,
/// minus the prefill color. The median keeps painted corner markers and up
/// to ~10% outlier pixels from skewing the estimate.
pub fn estimate_adj<R: Real>(
    frame: &Tensor<R>,
    quad: &Quad<R>,
    prefill: &Rgb<R>,
) -> Result<ColorAdjustment<R>> {
    let shape = frame.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Shape(format!(
            "estimate_adj expects [3,H,W], got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut samples: [Vec<R>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let half = r::<R>(0.5);
    for row in 0..h {
        for col in 0..w {
            let (x, y) = (r::<R>(col as f64) + half, r::<R>(row as f64) + half);
            if quad.contains(x, y) {
                for c in 0..3 {
                    samples[c].push(frame.at3(c, row, col));
                }
            }
        }
    }
    if samples[0].len() < 16 {
        return Err(Error::Validation(format!(
            "insufficient data: quad covers {} pixels (< 16)",
            samples[0].len()
        )));
    }
    let prefill_ch = prefill.channels();
    let mut offset = [R::zero(); 3];
    for c in 0..3 {
        samples[c].sort_by(|a, b| a.partial_cmp(b).expect("finite pixel values"));
        let n = samples[c].len();
        let median = if n % 2 == 1 {
            samples[c][n / 2]
        } else {
            (samples[c][n / 2 - 1] + samples[c][n / 2]) / r::<R>(2.0)
        };
        offset[c] = median - prefill_ch[c];
    }
    ColorAdjustment::new(Rgb::from_channels(offset))
}
