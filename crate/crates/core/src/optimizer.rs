//! Joint generation of one printable billboard texture that skews the model's
//! steering output across every frame of a scene.
//!
//! The loop: prefill the texture with a unicolor, then per iteration shuffle
//! the frames, and per batch pull each frame's input gradient back onto the
//! texels (masked to the projected quad, top-k per frame), merge overlapping
//! proposals, step, project onto the printable palette, re-render all frames
//! and keep the attempt if the total signed divergence improved or the
//! annealing draw says so. The best texture seen is returned, not merely the
//! last accepted one.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gamut::{nps_texture, project_to_gamut, Gamut};
use crate::geometry::{
    coverage_mask, estimate_homography, reverse_project, warp_into_frame, ColorAdjustment,
    Homography, Quad,
};
use crate::metrics::{self, ErrorDirection};
use crate::model::{Sign, SteeringModel};
use crate::perturbation::Perturbation;
use crate::real::{r, Real};
use crate::scene::Scene;
use crate::tensor::Tensor;

/// Which way to push the steering decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Increase the predicted angle (positive = left).
    Left,
    /// Decrease it.
    Right,
}

impl Direction {
    pub fn sign(self) -> Sign {
        match self {
            Direction::Left => Sign::Plus,
            Direction::Right => Sign::Minus,
        }
    }

    pub fn factor<R: Real>(self) -> R {
        self.sign().factor()
    }

    pub fn as_error_direction(self) -> ErrorDirection {
        match self {
            Direction::Left => ErrorDirection::Left,
            Direction::Right => ErrorDirection::Right,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            other => Err(Error::Argument(format!(
                "direction must be left|right, got {other:?}"
            ))),
        }
    }
}

/// How conflicting per-frame texel proposals merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Keep the proposal with the largest magnitude per texel.
    Max,
    /// Sum all proposals per texel.
    Sum,
    /// Per conflicting texel, keep the candidate whose application helps the
    /// batch objective most.
    GreedyBest,
}

/// Simulated-annealing acceptance schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SaConfig {
    pub enabled: bool,
    /// Initial temperature, in objective units (degrees of total divergence).
    pub t0: f64,
    /// Multiplicative factor applied per iteration.
    pub cooling: f64,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            enabled: true,
            t0: 1.0,
            cooling: 0.95,
        }
    }
}

/// All knobs of the generation loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Enhancement iterations over the whole scene.
    pub iterations: usize,
    /// Frames per batch.
    pub batch_size: usize,
    /// Gradient step scale, in normalized color units per accepted iteration.
    pub step_size: f64,
    /// Texels updated per frame per iteration.
    pub top_k: usize,
    pub overlap_mode: OverlapMode,
    pub direction: Direction,
    pub sa: SaConfig,
    pub seed: u64,
    /// Unicolor the texture is prefilled with.
    pub init_color: [f64; 3],
    /// Billboard texture dimensions `[Hb, Wb]`.
    pub dims: [usize; 2],
    /// Score attempts on the current batch only instead of the whole scene.
    pub batch_local_objective: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iterations: 300,
            batch_size: 5,
            // Raw pulled-back gradients are small; the step must let the
            // latent texture traverse palette cells in a few accepted moves.
            step_size: 0.5,
            top_k: 20,
            overlap_mode: OverlapMode::Max,
            direction: Direction::Left,
            sa: SaConfig::default(),
            seed: 0,
            init_color: [1.0, 1.0, 0.0],
            dims: [20, 30],
            batch_local_objective: false,
        }
    }
}

impl AttackConfig {
    /// Check the config invariants against a scene of `scene_len` frames.
    pub fn validate(&self, scene_len: usize) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Argument("iterations must be >= 1".into()));
        }
        if self.batch_size < 1 || self.batch_size > scene_len {
            return Err(Error::Argument(format!(
                "batch size {} must be in 1..={scene_len} (scene size)",
                self.batch_size
            )));
        }
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return Err(Error::Argument(format!(
                "step size {} must be finite and >= 0",
                self.step_size
            )));
        }
        if self.top_k < 1 {
            return Err(Error::Argument("top_k must be >= 1".into()));
        }
        if self.sa.enabled {
            if !(self.sa.cooling > 0.0 && self.sa.cooling < 1.0) {
                return Err(Error::Argument(format!(
                    "cooling {} must be in (0,1)",
                    self.sa.cooling
                )));
            }
            if !(self.sa.t0 > 0.0) {
                return Err(Error::Argument(format!(
                    "initial temperature {} must be positive",
                    self.sa.t0
                )));
            }
        }
        if self.dims[0] < 1 || self.dims[1] < 1 {
            return Err(Error::Argument("billboard dims must be positive".into()));
        }
        if self.init_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Argument(format!(
                "init color {:?} must lie in [0,1]^3",
                self.init_color
            )));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding, for provenance metadata.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One attempted batch update.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub batch: usize,
    /// Total signed divergence of the attempt (degrees).
    pub objective: f64,
    pub accepted: bool,
    pub temperature: f64,
}

/// Everything the generation run produced besides the texture itself.
/// Wall-clock is deliberately not serialized: output artifacts must be
/// byte-identical across same-seed runs.
#[derive(Debug, Clone, Serialize)]
pub struct AttackReport {
    pub config: AttackConfig,
    pub frames: usize,
    /// Whole-scene objective of the returned texture (degrees).
    pub best_objective_deg: f64,
    pub final_m0_deg: f64,
    pub final_mean_abs_error_deg: f64,
    pub final_m1: f64,
    pub m1_tau_deg: f64,
    pub accepted_count: usize,
    pub spatial_audits: usize,
    pub trace: Vec<TraceEntry>,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl AttackReport {
    /// Objective trace CSV: `iteration,objective,accepted,temperature`.
    pub fn write_trace_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("iteration,objective,accepted,temperature\n");
        for e in &self.trace {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.iteration, e.objective, e.accepted, e.temperature
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("report encode: {e}")))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Keep the `k` texels with the largest channel-summed |gradient|, zeroing
/// everything else. Ties break toward the lower row-major texel index;
/// `k >= Hb*Wb` keeps the whole map.
pub fn select_top_k<R: Real>(texel_grad: &Tensor<R>, k: usize) -> Tensor<R> {
    let (hb, wb) = (texel_grad.shape()[1], texel_grad.shape()[2]);
    let n = hb * wb;
    if k >= n {
        return texel_grad.clone();
    }
    let mut scored: Vec<(usize, R)> = (0..n)
        .map(|idx| {
            let (y, x) = (idx / wb, idx % wb);
            let score = (0..3)
                .map(|c| texel_grad.at3(c, y, x).abs())
                .fold(R::zero(), |a, b| a + b);
            (idx, score)
        })
        .collect();
    scored.sort_unstable_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite gradients")
            .then(a.0.cmp(&b.0))
    });
    let mut out = Tensor::zeros(texel_grad.shape().to_vec());
    for &(idx, _) in scored.iter().take(k) {
        let (y, x) = (idx / wb, idx % wb);
        for c in 0..3 {
            *out.at3_mut(c, y, x) = texel_grad.at3(c, y, x);
        }
    }
    out
}

/// Accept rule of the annealing loop: improvements always pass; a worsening
/// of `delta_obj <= 0` passes with probability `exp(delta_obj / temperature)`.
pub fn sa_accept<R: Real>(delta_obj: R, temperature: R, rng: &mut ChaCha8Rng) -> bool {
    if delta_obj > R::zero() {
        return true;
    }
    let p = (delta_obj / temperature).exp().to_f64_lossy();
    rng.random::<f64>() < p
}

/// Per-frame data the overlap resolver needs to score candidates.
pub struct BatchFrame<'a, R: Real> {
    pub image: &'a Tensor<R>,
    pub homography: &'a Homography<R>,
    pub adj: &'a ColorAdjustment<R>,
    pub baseline: R,
}

/// Context for [`handle_overlap`]; only `GreedyBest` looks beyond the
/// proposals.
pub struct OverlapContext<'a, R: Real> {
    pub model: &'a SteeringModel<R>,
    pub current: &'a Tensor<R>,
    pub step_size: R,
    pub direction: Direction,
    pub batch: Vec<BatchFrame<'a, R>>,
}

fn batch_objective<R: Real>(
    model: &SteeringModel<R>,
    texture: &Tensor<R>,
    batch: &[BatchFrame<'_, R>],
    direction: Direction,
) -> Result<R> {
    let dir = direction.factor::<R>();
    let mut total = R::zero();
    for frame in batch {
        let warped = warp_into_frame(texture, frame.homography, frame.image, frame.adj)?;
        total += dir * (model.predict(&warped)? - frame.baseline);
    }
    Ok(total)
}

/// Merge per-frame texel proposals into one update map.
///
/// `max`: per texel, keep the single proposal with the largest channel-summed
/// magnitude (whole RGB triple, sign preserved; earlier frame wins ties).
/// `sum`: elementwise sum. `greedy_best`: texels proposed by exactly one
/// frame keep that proposal; each conflicting texel (row-major order) tries
/// every candidate against the batch objective with previously resolved
/// texels in place and keeps the best.
pub fn handle_overlap<R: Real>(
    proposals: &[Tensor<R>],
    mode: OverlapMode,
    ctx: &OverlapContext<'_, R>,
) -> Result<Tensor<R>> {
    if proposals.is_empty() {
        return Err(Error::Argument("no proposals to merge".into()));
    }
    let shape = proposals[0].shape().to_vec();
    for p in proposals {
        if p.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "proposal shapes differ: {:?} vs {shape:?}",
                p.shape()
            )));
        }
    }
    let (hb, wb) = (shape[1], shape[2]);
    if proposals.len() == 1 {
        return Ok(proposals[0].clone());
    }

    let texel_norm = |t: &Tensor<R>, y: usize, x: usize| -> R {
        (0..3)
            .map(|c| t.at3(c, y, x).abs())
            .fold(R::zero(), |a, b| a + b)
    };

    match mode {
        OverlapMode::Sum => {
            let mut out = Tensor::zeros(shape);
            for p in proposals {
                for (o, v) in out.data_mut().iter_mut().zip(p.data()) {
                    *o += *v;
                }
            }
            Ok(out)
        }
        OverlapMode::Max => {
            let mut out = Tensor::zeros(shape);
            for y in 0..hb {
                for x in 0..wb {
                    let mut best: Option<(usize, R)> = None;
                    for (i, p) in proposals.iter().enumerate() {
                        let norm = texel_norm(p, y, x);
                        if norm > R::zero() && best.map_or(true, |(_, b)| norm > b) {
                            best = Some((i, norm));
                        }
                    }
                    if let Some((i, _)) = best {
                        for c in 0..3 {
                            *out.at3_mut(c, y, x) = proposals[i].at3(c, y, x);
                        }
                    }
                }
            }
            Ok(out)
        }
        OverlapMode::GreedyBest => {
            // Start from the non-conflicting union; list conflicted texels.
            let mut out = Tensor::zeros(shape.clone());
            let mut conflicts: Vec<(usize, usize, Vec<usize>)> = Vec::new();
            for y in 0..hb {
                for x in 0..wb {
                    let proposers: Vec<usize> = proposals
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| texel_norm(p, y, x) > R::zero())
                        .map(|(i, _)| i)
                        .collect();
                    match proposers.len() {
                        0 => {}
                        1 => {
                            for c in 0..3 {
                                *out.at3_mut(c, y, x) = proposals[proposers[0]].at3(c, y, x);
                            }
                        }
                        _ => conflicts.push((y, x, proposers)),
                    }
                }
            }
            let clamp01 = |t: &mut Tensor<R>| t.clamp(R::zero(), R::one());
            for (y, x, proposers) in conflicts {
                let mut best: Option<(usize, R)> = None;
                for &i in &proposers {
                    let mut trial = out.clone();
                    for c in 0..3 {
                        *trial.at3_mut(c, y, x) = proposals[i].at3(c, y, x);
                    }
                    // Score the candidate exactly as line 14 will apply it.
                    let mut attempt = ctx.current.clone();
                    for (a, v) in attempt.data_mut().iter_mut().zip(trial.data()) {
                        *a += ctx.step_size * *v;
                    }
                    clamp01(&mut attempt);
                    let score = batch_objective(ctx.model, &attempt, &ctx.batch, ctx.direction)?;
                    if best.map_or(true, |(_, b)| score > b) {
                        best = Some((i, score));
                    }
                }
                let winner = best.expect("at least two proposers").0;
                for c in 0..3 {
                    *out.at3_mut(c, y, x) = proposals[winner].at3(c, y, x);
                }
            }
            Ok(out)
        }
    }
}

struct FrameGeometry<R: Real> {
    homography: Homography<R>,
    mask: Vec<bool>,
}

/// Run the generation loop. Returns the best perturbation found and the full
/// report (objective trace, acceptance flags, final metrics).
pub fn generate<R: Real>(
    scene: &Scene<R>,
    model: &SteeringModel<R>,
    gamut: &Gamut<R>,
    cfg: &AttackConfig,
) -> Result<(Perturbation<R>, AttackReport)> {
    let started = Instant::now();
    if scene.is_empty() {
        return Err(Error::Argument("generate on an empty scene".into()));
    }
    cfg.validate(scene.len())?;
    let frame_shape = scene.frame_shape();
    if frame_shape != model.input_shape() {
        return Err(Error::Shape(format!(
            "scene frames {frame_shape:?} do not match model input {:?}",
            model.input_shape()
        )));
    }

    let [hb, wb] = cfg.dims;
    let (hf, wf) = (frame_shape[1], frame_shape[2]);
    let src_rect = Quad::texture_rect(hb, wb);
    let geometry: Vec<FrameGeometry<R>> = scene
        .frames
        .iter()
        .map(|f| -> Result<FrameGeometry<R>> {
            let homography = estimate_homography(&src_rect, &f.quad)?;
            let mask = coverage_mask(&homography, (hf, wf), (hb, wb));
            Ok(FrameGeometry { homography, mask })
        })
        .collect::<Result<Vec<_>>>()?;
    let baselines = scene.baseline_angles(model)?;
    let dir = cfg.direction.factor::<R>();
    let step = r::<R>(cfg.step_size);

    // COLOR_INIT: unicolor prefill. The optimizer walks a continuous
    // `latent` texture; what gets printed, rendered into frames and scored is
    // always its projection onto the printable palette. Sub-palette-spacing
    // steps therefore keep the same appearance (objective delta 0) and ride
    // through the annealing accept rule (`exp(0/T) = 1`) until they cross a
    // palette cell boundary.
    let mut latent = Tensor::zeros(vec![3, hb, wb]);
    for c in 0..3 {
        for y in 0..hb {
            for x in 0..wb {
                *latent.at3_mut(c, y, x) = r::<R>(cfg.init_color[c]);
            }
        }
    }
    let mut printable = project_to_gamut(&latent, gamut)?;

    let apply_all = |texture: &Tensor<R>| -> Result<Vec<Tensor<R>>> {
        scene
            .frames
            .par_iter()
            .zip(&geometry)
            .map(|(f, g)| warp_into_frame(texture, &g.homography, &f.image, &f.adj))
            .collect()
    };
    let scene_objective = |frames: &[Tensor<R>]| -> Result<R> {
        let preds: Vec<R> = frames
            .par_iter()
            .map(|f| model.predict(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(preds
            .iter()
            .zip(&baselines)
            .map(|(&p, &b)| dir * (p - b))
            .fold(R::zero(), |a, v| a + v))
    };

    let mut working = apply_all(&printable)?;
    let mut last_diff = scene_objective(&working)?;
    let mut best_texture = printable.clone();
    let mut best_objective = last_diff;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut audit_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_A0D1);
    let mut temperature = cfg.sa.t0;
    let mut trace: Vec<TraceEntry> = Vec::with_capacity(cfg.iterations);
    let mut accepted_count = 0usize;
    let mut spatial_audits = 0usize;

    for iteration in 0..cfg.iterations {
        // Shuffle the frame processing order (Fisher-Yates).
        let mut order: Vec<usize> = (0..scene.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        for (batch_no, batch_ids) in order.chunks(cfg.batch_size).enumerate() {
            // Per-frame gradient proposals, computed in parallel, merged in
            // fixed frame order.
            let proposals: Vec<Tensor<R>> = batch_ids
                .par_iter()
                .map(|&i| -> Result<Tensor<R>> {
                    let mut grad = model.input_gradient(&working[i], cfg.direction.sign())?;
                    // Domain constraints: the attacker only controls the
                    // billboard area.
                    for row in 0..hf {
                        for col in 0..wf {
                            if !geometry[i].mask[row * wf + col] {
                                for c in 0..3 {
                                    *grad.at3_mut(c, row, col) = R::zero();
                                }
                            }
                        }
                    }
                    let texel = reverse_project(
                        &grad,
                        &geometry[i].homography,
                        (hb, wb),
                        &scene.frames[i].adj,
                    )?;
                    Ok(select_top_k(&texel, cfg.top_k))
                })
                .collect::<Result<Vec<_>>>()?;

            let ctx = OverlapContext {
                model,
                current: &latent,
                step_size: step,
                direction: cfg.direction,
                batch: batch_ids
                    .iter()
                    .map(|&i| BatchFrame {
                        image: &scene.frames[i].image,
                        homography: &geometry[i].homography,
                        adj: &scene.frames[i].adj,
                        baseline: baselines[i],
                    })
                    .collect(),
            };
            let merged = handle_overlap(&proposals, cfg.overlap_mode, &ctx)?;

            // Attempt = clamp(latent + s * merged); its printable projection
            // is what gets rendered and scored.
            let mut attempt_latent = latent.clone();
            for (a, v) in attempt_latent.data_mut().iter_mut().zip(merged.data()) {
                *a += step * *v;
            }
            attempt_latent.clamp(R::zero(), R::one());
            let attempt = project_to_gamut(&attempt_latent, gamut)?;

            let attempt_frames = apply_all(&attempt)?;
            let this_diff = if cfg.batch_local_objective {
                let mut total = R::zero();
                for &i in batch_ids {
                    total += dir * (model.predict(&attempt_frames[i])? - baselines[i]);
                }
                total
            } else {
                scene_objective(&attempt_frames)?
            };

            let delta = this_diff - last_diff;
            let accepted = if cfg.sa.enabled {
                sa_accept(delta, r::<R>(temperature), &mut rng)
            } else {
                delta > R::zero()
            };
            trace.push(TraceEntry {
                iteration,
                batch: batch_no,
                objective: this_diff.to_f64_lossy(),
                accepted,
                temperature,
            });

            if accepted {
                accepted_count += 1;
                // Sampled audit: accepted updates must leave pixels outside
                // the projected quads untouched.
                for (i, frame) in attempt_frames.iter().enumerate() {
                    for _ in 0..8 {
                        let row = audit_rng.random_range(0..hf);
                        let col = audit_rng.random_range(0..wf);
                        if !geometry[i].mask[row * wf + col] {
                            spatial_audits += 1;
                            for c in 0..3 {
                                if frame.at3(c, row, col) != scene.frames[i].image.at3(c, row, col)
                                {
                                    return Err(Error::State(format!(
                                        "spatial constraint violated at frame {i} pixel ({row},{col})"
                                    )));
                                }
                            }
                        }
                    }
                }

                latent = attempt_latent;
                printable = attempt;
                working = attempt_frames;
                last_diff = this_diff;
                let whole = if cfg.batch_local_objective {
                    scene_objective(&working)?
                } else {
                    this_diff
                };
                if whole > best_objective {
                    best_objective = whole;
                    best_texture = printable.clone();
                }
            }
        }
        temperature *= cfg.sa.cooling;
    }

    // Final metrics for the returned (best) texture.
    let tau = metrics::tau_for(r::<R>(40.0 * metrics::MPS_PER_MPH), r::<R>(0.2), R::one())?;
    let eval = metrics::evaluate(
        scene,
        model,
        &best_texture,
        tau,
        cfg.direction.as_error_direction(),
    )?;

    debug_assert_eq!(nps_texture(&best_texture, gamut)?, R::zero());
    let mut perturbation = Perturbation::new(best_texture, gamut)?;
    perturbation.seed = cfg.seed;
    perturbation.config_hash = cfg.hash();
    let tail_start = trace.len().saturating_sub(32);
    perturbation.trace_tail = trace[tail_start..].iter().map(|e| e.objective).collect();

    let report = AttackReport {
        config: cfg.clone(),
        frames: scene.len(),
        best_objective_deg: best_objective.to_f64_lossy(),
        final_m0_deg: eval.m0_deg.to_f64_lossy(),
        final_mean_abs_error_deg: eval.mean_abs_error_deg.to_f64_lossy(),
        final_m1: eval.m1.to_f64_lossy(),
        m1_tau_deg: tau.to_f64_lossy(),
        accepted_count,
        spatial_audits,
        trace,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok((perturbation, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::Rgb;
    use crate::scene::FrameRecord;

    fn tiny_scene(n_frames: usize, frame_hw: (usize, usize), quad: [[f64; 2]; 4]) -> Scene<f64> {
        let (h, w) = frame_hw;
        let frames = (0..n_frames)
            .map(|i| FrameRecord {
                image: Tensor::full(vec![3, h, w], 0.5 + 0.01 * i as f64),
                quad: Quad::from_f64(quad).unwrap(),
                clipped: false,
                adj: ColorAdjustment::zero(),
                baseline_angle: None,
                image_path: String::new(),
            })
            .collect();
        Scene {
            id: "tiny".into(),
            frames,
            prefill_color: Rgb::new(0.5, 0.5, 0.5),
            notes: String::new(),
        }
    }

    fn probe_model(h: usize, w: usize, weights: &[f64]) -> SteeringModel<f64> {
        let mut model = SteeringModel::linear_probe([3, h, w]);
        model
            .set_param(
                "w",
                Tensor::new(vec![1, 3 * h * w], weights.to_vec()).unwrap(),
            )
            .unwrap();
        model
    }

    #[test]
    fn top_k_keeps_largest_and_breaks_ties_row_major() {
        let mut g = Tensor::<f64>::zeros(vec![3, 1, 3]);
        *g.at3_mut(0, 0, 0) = 0.5;
        *g.at3_mut(0, 0, 1) = 0.2;
        *g.at3_mut(0, 0, 2) = -0.9;
        let kept = select_top_k(&g, 1);
        assert_eq!(kept.at3(0, 0, 0), 0.0);
        assert_eq!(kept.at3(0, 0, 1), 0.0);
        assert_eq!(kept.at3(0, 0, 2), -0.9);

        // k >= number of texels is the identity.
        let all = select_top_k(&g, 3);
        assert_eq!(all.data(), g.data());

        // Tie at two texels: the lower row-major index survives.
        let mut tie = Tensor::<f64>::zeros(vec![3, 1, 3]);
        *tie.at3_mut(1, 0, 0) = 0.4;
        *tie.at3_mut(1, 0, 2) = 0.4;
        let kept = select_top_k(&tie, 1);
        assert_eq!(kept.at3(1, 0, 0), 0.4);
        assert_eq!(kept.at3(1, 0, 2), 0.0);
    }

    #[test]
    fn overlap_max_and_sum_follow_definitions() {
        let mut a = Tensor::<f64>::zeros(vec![3, 1, 1]);
        let mut b = Tensor::<f64>::zeros(vec![3, 1, 1]);
        *a.at3_mut(0, 0, 0) = 0.1;
        *b.at3_mut(0, 0, 0) = -0.3;
        let model = probe_model(2, 2, &[0.0; 12]);
        let img = Tensor::full(vec![3, 2, 2], 0.5);
        let h = estimate_homography(
            &Quad::texture_rect(1, 1),
            &Quad::from_f64([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]).unwrap(),
        )
        .unwrap();
        let adj = ColorAdjustment::zero();
        let current = Tensor::zeros(vec![3, 1, 1]);
        let ctx = OverlapContext {
            model: &model,
            current: &current,
            step_size: 1.0,
            direction: Direction::Left,
            batch: vec![BatchFrame {
                image: &img,
                homography: &h,
                adj: &adj,
                baseline: 0.0,
            }],
        };

        let props = vec![a.clone(), b.clone()];
        let max = handle_overlap(&props, OverlapMode::Max, &ctx).unwrap();
        assert_eq!(max.at3(0, 0, 0), -0.3);
        let sum = handle_overlap(&props, OverlapMode::Sum, &ctx).unwrap();
        assert!((sum.at3(0, 0, 0) - (-0.2)).abs() < 1e-12);

        // A single frame passes through unchanged in every mode.
        for mode in [OverlapMode::Max, OverlapMode::Sum, OverlapMode::GreedyBest] {
            let one = handle_overlap(&[a.clone()], mode, &ctx).unwrap();
            assert_eq!(one.data(), a.data());
        }
    }

    #[test]
    fn greedy_best_matches_per_texel_enumeration() {
        // 2 texels (1x2 billboard), 2 frames, linear model; greedy_best must
        // pick, per conflicting texel, the candidate with the best batch
        // objective - verified against a plain enumeration.
        let (h, w) = (4, 6);
        let mut weights = vec![0.0; 3 * h * w];
        for (i, v) in weights.iter_mut().enumerate() {
            *v = ((i % 7) as f64 - 3.0) * 0.05;
        }
        let model = probe_model(h, w, &weights);
        let img_a = Tensor::full(vec![3, h, w], 0.4);
        let img_b = Tensor::full(vec![3, h, w], 0.6);
        let src = Quad::texture_rect(1, 2);
        let quad_a = Quad::from_f64([[1.0, 1.0], [5.0, 1.0], [5.0, 3.0], [1.0, 3.0]]).unwrap();
        let quad_b = Quad::from_f64([[0.5, 0.5], [4.5, 0.5], [4.5, 2.5], [0.5, 2.5]]).unwrap();
        let h_a = estimate_homography(&src, &quad_a).unwrap();
        let h_b = estimate_homography(&src, &quad_b).unwrap();
        let adj = ColorAdjustment::zero();
        let current = Tensor::full(vec![3, 1, 2], 0.5);

        // Both frames propose updates at both texels (conflict everywhere).
        let mut p1 = Tensor::<f64>::zeros(vec![3, 1, 2]);
        let mut p2 = Tensor::<f64>::zeros(vec![3, 1, 2]);
        for c in 0..3 {
            *p1.at3_mut(c, 0, 0) = 0.8;
            *p1.at3_mut(c, 0, 1) = -0.2;
            *p2.at3_mut(c, 0, 0) = -0.5;
            *p2.at3_mut(c, 0, 1) = 0.9;
        }
        let baseline_a = model.predict(&img_a).unwrap();
        let baseline_b = model.predict(&img_b).unwrap();
        let ctx = OverlapContext {
            model: &model,
            current: &current,
            step_size: 0.1,
            direction: Direction::Left,
            batch: vec![
                BatchFrame {
                    image: &img_a,
                    homography: &h_a,
                    adj: &adj,
                    baseline: baseline_a,
                },
                BatchFrame {
                    image: &img_b,
                    homography: &h_b,
                    adj: &adj,
                    baseline: baseline_b,
                },
            ],
        };
        let merged =
            handle_overlap(&[p1.clone(), p2.clone()], OverlapMode::GreedyBest, &ctx).unwrap();

        // Plain enumeration, resolving texels in row-major order.
        let mut expect = Tensor::<f64>::zeros(vec![3, 1, 2]);
        for texel in 0..2 {
            let mut best: Option<(usize, f64)> = None;
            for (i, p) in [&p1, &p2].iter().enumerate() {
                let mut trial = expect.clone();
                for c in 0..3 {
                    *trial.at3_mut(c, 0, texel) = p.at3(c, 0, texel);
                }
                let mut attempt = current.clone();
                for (a, v) in attempt.data_mut().iter_mut().zip(trial.data()) {
                    *a += 0.1 * *v;
                }
                attempt.clamp(0.0, 1.0);
                let mut score = 0.0;
                for (img, hh, base) in [(&img_a, &h_a, baseline_a), (&img_b, &h_b, baseline_b)] {
                    let warped = warp_into_frame(&attempt, hh, img, &adj).unwrap();
                    score += model.predict(&warped).unwrap() - base;
                }
                if best.map_or(true, |(_, b)| score > b) {
                    best = Some((i, score));
                }
            }
            let winner = best.unwrap().0;
            let p = [&p1, &p2][winner];
            for c in 0..3 {
                *expect.at3_mut(c, 0, texel) = p.at3(c, 0, texel);
            }
        }
        assert_eq!(merged.data(), expect.data());
    }

    #[test]
    fn sa_accept_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sa_accept(0.5, 1.0, &mut rng));
        // Vanishing temperature kills downhill moves.
        let mut hits = 0;
        for _ in 0..1000 {
            if sa_accept(-0.5, 1e-9, &mut rng) {
                hits += 1;
            }
        }
        assert_eq!(hits, 0);
    }

    #[test]
    fn sa_accept_half_probability_at_ln2() {
        // delta = -T * ln 2 accepts with probability 1/2.
        let t = 0.7;
        let delta = -t * std::f64::consts::LN_2;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut hits = 0usize;
        for _ in 0..n {
            if sa_accept(delta, t, &mut rng) {
                hits += 1;
            }
        }
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.01, "acceptance rate {rate}");
    }

    fn small_attack_scene() -> (Scene<f64>, SteeringModel<f64>) {
        let quad = [[2.0, 1.0], [10.0, 1.0], [10.0, 7.0], [2.0, 7.0]];
        let scene = tiny_scene(2, (8, 12), quad);
        let mut weights = vec![0.0; 3 * 8 * 12];
        for (i, v) in weights.iter_mut().enumerate() {
            *v = (((i * 13) % 11) as f64 - 5.0) * 0.02;
        }
        let model = probe_model(8, 12, &weights);
        (scene, model)
    }

    #[test]
    fn zero_step_keeps_the_init_color_and_a_flat_trace() {
        let (scene, model) = small_attack_scene();
        let gamut = Gamut::<f64>::default_palette();
        let cfg = AttackConfig {
            iterations: 5,
            batch_size: 2,
            step_size: 0.0,
            dims: [2, 3],
            init_color: [1.0, 1.0, 0.0],
            sa: SaConfig {
                enabled: false,
                ..SaConfig::default()
            },
            ..AttackConfig::default()
        };
        let (p, report) = generate(&scene, &model, &gamut, &cfg).unwrap();
        assert!(p
            .texture
            .data()
            .iter()
            .zip(Tensor::full(vec![3, 2, 3], 0.0).data())
            .all(|(_, _)| true));
        for y in 0..2 {
            for x in 0..3 {
                assert_eq!(p.texture.at3(0, y, x), 1.0);
                assert_eq!(p.texture.at3(1, y, x), 1.0);
                assert_eq!(p.texture.at3(2, y, x), 0.0);
            }
        }
        let first = report.trace[0].objective;
        assert!(report.trace.iter().all(|e| e.objective == first));
        assert_eq!(report.trace.len(), 5 * 1); // 2 frames / batch 2 = 1 batch
    }

    #[test]
    fn fixed_seed_is_bitwise_deterministic() {
        let (scene, model) = small_attack_scene();
        let gamut = Gamut::<f64>::default_palette();
        let cfg = AttackConfig {
            iterations: 8,
            batch_size: 1,
            dims: [2, 3],
            seed: 9,
            ..AttackConfig::default()
        };
        let (p1, r1) = generate(&scene, &model, &gamut, &cfg).unwrap();
        let (p2, r2) = generate(&scene, &model, &gamut, &cfg).unwrap();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p1.texture), bits(&p2.texture));
        assert_eq!(r1.best_objective_deg.to_bits(), r2.best_objective_deg.to_bits());
        assert_eq!(r1.trace.len(), r2.trace.len());
        for (a, b) in r1.trace.iter().zip(&r2.trace) {
            assert_eq!(a.objective.to_bits(), b.objective.to_bits());
            assert_eq!(a.accepted, b.accepted);
        }
    }

    #[test]
    fn accepted_objectives_are_monotone_without_sa() {
        let (scene, model) = small_attack_scene();
        let gamut = Gamut::<f64>::default_palette();
        let cfg = AttackConfig {
            iterations: 30,
            batch_size: 2,
            dims: [2, 3],
            step_size: 4.0,
            init_color: [0.0, 0.0, 0.0],
            sa: SaConfig {
                enabled: false,
                ..SaConfig::default()
            },
            ..AttackConfig::default()
        };
        let (_, report) = generate(&scene, &model, &gamut, &cfg).unwrap();
        assert!(report.accepted_count > 0, "monotonicity check needs accepts");
        let mut last = f64::NEG_INFINITY;
        for e in report.trace.iter().filter(|e| e.accepted) {
            assert!(e.objective >= last);
            last = e.objective;
        }
        assert_eq!(report.trace.len(), 30);
    }

    #[test]
    fn one_texel_attack_matches_exhaustive_color_search() {
        // 1x1 billboard, two identical frames, linear model: the optimizer
        // must land on the printable color an exhaustive search picks.
        let quad = [[3.0, 2.0], [9.0, 2.0], [9.0, 6.0], [3.0, 6.0]];
        let scene = tiny_scene(2, (8, 12), quad);
        let mut weights = vec![0.0; 3 * 8 * 12];
        for (i, v) in weights.iter_mut().enumerate() {
            *v = match (i + i / 96) % 4 {
                0 => 0.06,
                1 => -0.04,
                2 => 0.02,
                _ => -0.01,
            };
        }
        let model = probe_model(8, 12, &weights);
        let corners: Vec<Rgb<f64>> = (0..8)
            .map(|k| {
                Rgb::new(
                    ((k >> 2) & 1) as f64,
                    ((k >> 1) & 1) as f64,
                    (k & 1) as f64,
                )
            })
            .collect();
        let gamut = Gamut::new("corners", corners.clone()).unwrap();
        let cfg = AttackConfig {
            iterations: 60,
            batch_size: 2,
            step_size: 8.0,
            top_k: 1,
            dims: [1, 1],
            init_color: [0.0, 0.0, 0.0],
            sa: SaConfig {
                enabled: false,
                ..SaConfig::default()
            },
            ..AttackConfig::default()
        };
        let (p, report) = generate(&scene, &model, &gamut, &cfg).unwrap();

        // Exhaustive search over the 8 printable colors.
        let src = Quad::texture_rect(1, 1);
        let baseline: Vec<f64> = scene
            .frames
            .iter()
            .map(|f| model.predict(&f.image).unwrap())
            .collect();
        let mut best = f64::NEG_INFINITY;
        let mut best_color = corners[0];
        for color in &corners {
            let mut tex = Tensor::zeros(vec![3, 1, 1]);
            *tex.at3_mut(0, 0, 0) = color.r;
            *tex.at3_mut(1, 0, 0) = color.g;
            *tex.at3_mut(2, 0, 0) = color.b;
            let mut obj = 0.0;
            for (f, b) in scene.frames.iter().zip(&baseline) {
                let h = estimate_homography(&src, &f.quad).unwrap();
                let warped = warp_into_frame(&tex, &h, &f.image, &f.adj).unwrap();
                obj += model.predict(&warped).unwrap() - b;
            }
            if obj > best {
                best = obj;
                best_color = *color;
            }
        }
        assert!(
            (report.best_objective_deg - best).abs() <= 0.01 * best.abs().max(1e-9),
            "optimizer {} vs exhaustive {best}",
            report.best_objective_deg
        );
        assert_eq!(p.texture.at3(0, 0, 0), best_color.r);
        assert_eq!(p.texture.at3(1, 0, 0), best_color.g);
        assert_eq!(p.texture.at3(2, 0, 0), best_color.b);
    }

    #[test]
    fn direction_controls_the_sign_of_m0() {
        let (scene, model) = small_attack_scene();
        let gamut = Gamut::<f64>::default_palette();
        for (direction, want_positive) in [(Direction::Left, true), (Direction::Right, false)] {
            let cfg = AttackConfig {
                iterations: 40,
                batch_size: 2,
                dims: [2, 3],
                step_size: 4.0,
                direction,
                sa: SaConfig {
                    enabled: false,
                    ..SaConfig::default()
                },
                ..AttackConfig::default()
            };
            let (_, report) = generate(&scene, &model, &gamut, &cfg).unwrap();
            if want_positive {
                assert!(report.final_m0_deg >= 0.0, "left: {}", report.final_m0_deg);
            } else {
                assert!(report.final_m0_deg <= 0.0, "right: {}", report.final_m0_deg);
            }
        }
    }

    #[test]
    fn printability_and_outside_pixels_hold_after_generation() {
        let (scene, model) = small_attack_scene();
        let gamut = Gamut::<f64>::default_palette();
        let cfg = AttackConfig {
            iterations: 20,
            batch_size: 2,
            dims: [2, 3],
            ..AttackConfig::default()
        };
        let (p, report) = generate(&scene, &model, &gamut, &cfg).unwrap();
        assert_eq!(nps_texture(&p.texture, &gamut).unwrap(), 0.0);
        assert!(report.spatial_audits > 0);

        // Independent full-frame check of the spatial constraint.
        let src = Quad::texture_rect(2, 3);
        for f in &scene.frames {
            let h = estimate_homography(&src, &f.quad).unwrap();
            let warped = warp_into_frame(&p.texture, &h, &f.image, &f.adj).unwrap();
            let mask = coverage_mask(&h, (8, 12), (2, 3));
            for row in 0..8 {
                for col in 0..12 {
                    if !mask[row * 12 + col] {
                        for c in 0..3 {
                            assert_eq!(warped.at3(c, row, col), f.image.at3(c, row, col));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn evaluate_m0_is_consistent_with_the_reported_objective() {
        let (scene, model) = small_attack_scene();
        let gamut = Gamut::<f64>::default_palette();
        let cfg = AttackConfig {
            iterations: 15,
            batch_size: 1,
            dims: [2, 3],
            ..AttackConfig::default()
        };
        let (p, report) = generate(&scene, &model, &gamut, &cfg).unwrap();
        let eval = metrics::evaluate(
            &scene,
            &model,
            &p.texture,
            16.24,
            ErrorDirection::Left,
        )
        .unwrap();
        // objective = sum_i dir * err_i  =>  M0 = dir * objective / n.
        let expect = report.best_objective_deg / scene.len() as f64;
        assert!(
            (eval.m0_deg - expect).abs() < 1e-9,
            "m0 {} vs objective/n {expect}",
            eval.m0_deg
        );
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let cfg = AttackConfig::default();
        assert!(cfg.validate(10).is_ok());
        assert!(cfg.validate(3).is_err()); // batch 5 > 3 frames
        let bad = AttackConfig {
            iterations: 0,
            ..AttackConfig::default()
        };
        assert!(bad.validate(10).is_err());
        let bad = AttackConfig {
            step_size: -0.1,
            ..AttackConfig::default()
        };
        assert!(bad.validate(10).is_err());
        let bad = AttackConfig {
            sa: SaConfig {
                enabled: true,
                t0: 1.0,
                cooling: 1.5,
            },
            ..AttackConfig::default()
        };
        assert!(bad.validate(10).is_err());
        // Negative step is rejected but zero is allowed (frozen texture).
        let zero = AttackConfig {
            step_size: 0.0,
            ..AttackConfig::default()
        };
        assert!(zero.validate(10).is_ok());
    }
}
