//! Deterministic synthetic drive-by renderer: a flat-shaded road with two
//! lane lines under a pinhole camera, plus a billboard quad placed roadside
//! under perspective, used both to manufacture attack scenes with exact
//! ground-truth corners and to label training data for the toy steering
//! models.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::color::Rgb;
use crate::error::{Error, Result};
use crate::geometry::{estimate_homography, warp_into_frame, ColorAdjustment, Quad};
use crate::image_io::quantize_tensor;
use crate::real::{r, Real};
use crate::scene::{FrameRecord, Scene};
use crate::tensor::Tensor;

/// One camera pose along the drive.
#[derive(Debug, Clone, Copy)]
pub struct PathPose {
    /// Distance from the camera to the billboard plane, meters.
    pub distance_m: f64,
    /// Lateral offset of the camera from the lane center, meters
    /// (positive = right).
    pub lateral_m: f64,
    /// Additive lighting offset applied to the whole frame.
    pub light_offset: f64,
}

/// A drive towards the billboard: strictly decreasing distances.
#[derive(Debug, Clone)]
pub struct DrivePath {
    pub poses: Vec<PathPose>,
    pub speed_mps: f64,
    pub frame_interval_s: f64,
}

impl DrivePath {
    pub fn validate(&self) -> Result<()> {
        if self.poses.is_empty() {
            return Err(Error::Argument("drive path needs at least one pose".into()));
        }
        if !(self.speed_mps > 0.0) || !(self.frame_interval_s > 0.0) {
            return Err(Error::Argument(
                "drive path needs positive speed and frame interval".into(),
            ));
        }
        for pair in self.poses.windows(2) {
            if pair[1].distance_m >= pair[0].distance_m {
                return Err(Error::Argument(format!(
                    "distances must strictly decrease (got {} then {})",
                    pair[0].distance_m, pair[1].distance_m
                )));
            }
        }
        Ok(())
    }

    /// Straight approach from `start_m` to `end_m` over `frames` poses with a
    /// constant lighting offset. Speed is derived from the spacing.
    pub fn straight(frames: usize, start_m: f64, end_m: f64, lateral_m: f64, light: f64) -> Self {
        assert!(frames >= 1 && start_m > end_m);
        let step = if frames > 1 {
            (start_m - end_m) / (frames - 1) as f64
        } else {
            0.0
        };
        let interval = 1.0 / 30.0;
        DrivePath {
            poses: (0..frames)
                .map(|i| PathPose {
                    distance_m: start_m - step * i as f64,
                    lateral_m,
                    light_offset: light,
                })
                .collect(),
            speed_mps: (step / interval).max(0.1),
            frame_interval_s: interval,
        }
    }
}

/// World-model knobs for the renderer. The defaults place a 6:4 billboard
/// slightly to the right of the lane, yawed toward the camera, sized so a
/// short approach keeps it fully visible in the first frame and lets it
/// slide out of view near the end.
#[derive(Debug, Clone)]
pub struct RenderParams {
    pub focal_px: f64,
    pub camera_height_m: f64,
    pub billboard_width_m: f64,
    pub billboard_height_m: f64,
    /// Lateral position of the billboard center, meters right of lane center.
    pub billboard_lateral_m: f64,
    /// Billboard center height relative to the camera eye, meters up.
    pub billboard_center_up_m: f64,
    /// Rotation of the billboard about the vertical axis, degrees.
    pub billboard_yaw_deg: f64,
    pub lane_half_width_m: f64,
    /// Road curvature (1/m); lane center x(z) = c * z^2 / 2.
    pub curvature: f64,
    /// Uniform per-pixel noise amplitude (0 disables).
    pub noise: f64,
    pub prefill_color: [f64; 3],
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            focal_px: 40.0,
            camera_height_m: 1.4,
            billboard_width_m: 1.83,
            billboard_height_m: 1.22,
            billboard_lateral_m: 0.56,
            billboard_center_up_m: 0.0,
            billboard_yaw_deg: 15.0,
            lane_half_width_m: 1.75,
            curvature: 0.0,
            noise: 0.0,
            prefill_color: [1.0, 1.0, 0.0],
        }
    }
}

const ASPHALT: [f64; 3] = [0.32, 0.32, 0.34];
const LANE_LINE: [f64; 3] = [0.85, 0.85, 0.80];
const GRASS: [f64; 3] = [0.18, 0.30, 0.16];
const SKY: [f64; 3] = [0.55, 0.65, 0.80];

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Flat-shaded road/sky backdrop for one pose (billboard not included).
fn render_base<R: Real>(
    params: &RenderParams,
    pose: &PathPose,
    curvature: f64,
    dims: (usize, usize),
    rng: Option<&mut ChaCha8Rng>,
) -> Tensor<R> {
    let (hf, wf) = dims;
    let (cx, cy) = (wf as f64 / 2.0, hf as f64 / 2.0);
    let f = params.focal_px;
    let mut t = Tensor::zeros(vec![3, hf, wf]);
    let mut noise_rng = rng;
    for row in 0..hf {
        let dy = (row as f64 + 0.5 - cy) / f;
        for col in 0..wf {
            let dx = (col as f64 + 0.5 - cx) / f;
            let mut color = if dy <= 1e-6 {
                SKY
            } else {
                let dist = params.camera_height_m / dy;
                let z = dist;
                let x = dist * dx;
                let road_x = -pose.lateral_m + curvature * z * z / 2.0;
                let x_rel = x - road_x;
                let base = if x_rel.abs() <= params.lane_half_width_m + 0.2 {
                    ASPHALT
                } else {
                    GRASS
                };
                // Soft-edged lane lines, faded out far away where they fall
                // below pixel size.
                let line_dist = (x_rel.abs() - params.lane_half_width_m).abs();
                let edge = 1.0 - ((line_dist - 0.07) / 0.06).clamp(0.0, 1.0);
                let fade = ((50.0 - z) / 10.0).clamp(0.0, 1.0);
                mix(base, LANE_LINE, edge * fade)
            };
            for c in &mut color {
                *c += pose.light_offset;
            }
            if let Some(rng) = noise_rng.as_deref_mut() {
                if params.noise > 0.0 {
                    let n = (rng.random::<f64>() * 2.0 - 1.0) * params.noise;
                    for c in &mut color {
                        *c += n;
                    }
                }
            }
            for (c, &v) in color.iter().enumerate() {
                *t.at3_mut(c, row, col) = r::<R>(v.clamp(0.0, 1.0));
            }
        }
    }
    t
}

/// Projected corner quad of the billboard for one pose (TL, TR, BR, BL).
fn billboard_quad(params: &RenderParams, pose: &PathPose, dims: (usize, usize)) -> Result<[[f64; 2]; 4]> {
    let (hf, wf) = dims;
    let (cx, cy) = (wf as f64 / 2.0, hf as f64 / 2.0);
    let f = params.focal_px;
    let yaw = params.billboard_yaw_deg.to_radians();
    let (hw, hh) = (
        params.billboard_width_m / 2.0,
        params.billboard_height_m / 2.0,
    );
    let center = [
        params.billboard_lateral_m - pose.lateral_m,
        -params.billboard_center_up_m,
        pose.distance_m,
    ];
    // Local corners (x right, y down) rotated about the vertical axis.
    let locals = [[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]];
    let mut quad = [[0.0f64; 2]; 4];
    for (i, [lx, ly]) in locals.into_iter().enumerate() {
        let wx = center[0] + lx * yaw.cos();
        let wy = center[1] + ly;
        let wz = center[2] - lx * yaw.sin();
        if wz <= 0.05 {
            return Err(Error::Geometry(format!(
                "billboard corner behind the camera at distance {}",
                pose.distance_m
            )));
        }
        quad[i] = [cx + f * wx / wz, cy + f * wy / wz];
    }
    Ok(quad)
}

/// Render a drive-by scene: ground-truth quads from the analytic projection,
/// per-frame color adjustment equal to the applied lighting offset, billboard
/// pixel area growing as the distance shrinks. The first frame must show the
/// billboard entirely, with a projected area above 400 px^2.
pub fn render_scene<R: Real>(
    path: &DrivePath,
    billboard_texture: &Tensor<R>,
    dims: (usize, usize),
    seed: u64,
) -> Result<Scene<R>> {
    render_scene_with(&RenderParams::default(), path, billboard_texture, dims, seed)
}

/// [`render_scene`] with explicit world parameters.
pub fn render_scene_with<R: Real>(
    params: &RenderParams,
    path: &DrivePath,
    billboard_texture: &Tensor<R>,
    dims: (usize, usize),
    seed: u64,
) -> Result<Scene<R>> {
    path.validate()?;
    let shape = billboard_texture.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Shape(format!(
            "billboard texture must be [3,H,W], got {shape:?}"
        )));
    }
    let (hb, wb) = (shape[1], shape[2]);
    let src = Quad::texture_rect(hb, wb);
    let (hf, wf) = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut frames = Vec::with_capacity(path.poses.len());
    let mut last_area = 0.0f64;
    for (i, pose) in path.poses.iter().enumerate() {
        let quad_pts = billboard_quad(params, pose, dims)?;
        let quad =
            Quad::<R>::from_f64(quad_pts).map_err(|e| Error::Geometry(format!("frame {i}: {e}")))?;
        let area = quad.area().to_f64_lossy();
        let within = quad.within_bounds(wf, hf);
        if i == 0 {
            if !within {
                return Err(Error::Validation(format!(
                    "first frame: billboard must appear entirely in frame (quad {quad_pts:?})"
                )));
            }
            if area <= 400.0 {
                return Err(Error::Validation(format!(
                    "first frame: billboard area {area:.1} px^2 must exceed 400"
                )));
            }
        } else if area <= last_area {
            return Err(Error::Validation(format!(
                "frame {i}: billboard area {area:.1} did not grow (was {last_area:.1})"
            )));
        }
        last_area = area;

        let base = render_base::<R>(
            params,
            pose,
            params.curvature,
            dims,
            (params.noise > 0.0).then_some(&mut rng),
        );
        let h = estimate_homography(&src, &quad)?;
        let light = pose.light_offset;
        let adj = ColorAdjustment::new(Rgb::from_f64([light, light, light]))
            .map_err(|e| Error::Argument(format!("frame {i}: lighting offset: {e}")))?;
        let rendered = warp_into_frame(billboard_texture, &h, &base, &adj)?;

        // The billboard must actually show up somewhere.
        let touched = rendered.max_abs_diff(&base)?;
        if touched == R::zero() && !quad.within_bounds(wf, hf) {
            return Err(Error::Validation(format!(
                "frame {i}: billboard fully outside the frame"
            )));
        }

        frames.push(FrameRecord {
            image: quantize_tensor(&rendered),
            quad,
            clipped: !within,
            adj,
            baseline_angle: None,
            image_path: String::new(),
        });
    }

    Ok(Scene {
        id: format!("synthetic-{seed}"),
        frames,
        prefill_color: Rgb::from_f64(params.prefill_color),
        notes: format!(
            "rendered drive: {} poses, {:.1} m to {:.1} m",
            path.poses.len(),
            path.poses[0].distance_m,
            path.poses.last().unwrap().distance_m
        ),
    })
}

/// Steering label (degrees, positive left) for a road of the given curvature:
/// the bicycle-model angle `atan(wheelbase * c)`.
pub fn steering_label<R: Real>(curvature: f64) -> R {
    const WHEELBASE_M: f64 = 2.5;
    r::<R>(-(WHEELBASE_M * curvature).atan().to_degrees())
}

/// Labeled training data: road-only renders (no billboard) across straight
/// and curved lanes with lateral and lighting jitter. Deterministic in
/// `seed`. Frames are sized for the small conv model.
pub fn make_steering_dataset<R: Real>(n_scenes: usize, seed: u64) -> Result<Vec<(Tensor<R>, R)>> {
    if n_scenes == 0 {
        return Err(Error::Argument("need at least one scene".into()));
    }
    let dims = (
        crate::model::TINY_DAVE_INPUT[1],
        crate::model::TINY_DAVE_INPUT[2],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = RenderParams::default();
    let mut out = Vec::with_capacity(n_scenes * 4);
    for scene_idx in 0..n_scenes {
        // Every third scene is straight; the rest bend either way.
        let curvature = if scene_idx % 3 == 0 {
            0.0
        } else {
            (rng.random::<f64>() * 2.0 - 1.0) * 0.06
        };
        let label = steering_label::<R>(curvature);
        for _ in 0..4 {
            let pose = PathPose {
                distance_m: 10.0,
                lateral_m: (rng.random::<f64>() * 2.0 - 1.0) * 0.4,
                light_offset: (rng.random::<f64>() * 2.0 - 1.0) * 0.08,
            };
            let frame = render_base::<R>(&params, &pose, curvature, dims, None);
            out.push((quantize_tensor(&frame), label));
        }
    }
    Ok(out)
}
