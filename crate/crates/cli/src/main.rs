//! Command-line front end: render synthetic scenes, train toy steering
//! models, calibrate per-frame color adjustments, generate billboard
//! perturbations, and evaluate them.
//!
//! Exit codes: 0 success, 1 validation failure, 2 I/O or format failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use deepbb_core::error::Error;
use deepbb_core::gamut::Gamut;
use deepbb_core::gradcheck;
use deepbb_core::metrics::{self, ErrorDirection};
use deepbb_core::model::{train_toy, Architecture, SteeringModel, TrainOptions, TINY_DAVE_INPUT};
use deepbb_core::optimizer::{self, AttackConfig};
use deepbb_core::perturbation::Perturbation;
use deepbb_core::scene::{estimate_adj, update_manifest_adj, Scene};
use deepbb_core::synth::{render_scene_with, DrivePath, RenderParams};
use deepbb_core::tensor::Tensor;
use deepbb_core::Rgb64;

#[derive(Parser)]
#[command(
    name = "deepbb",
    about = "Printable billboard perturbations against steering models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the joint optimization and write the perturbation artifacts.
    Generate {
        /// Scene manifest JSON.
        #[arg(long)]
        scene: PathBuf,
        /// Model weight file.
        #[arg(long)]
        model: PathBuf,
        /// Printable palette file (one #RRGGBB per line); built-in 11-color
        /// palette when omitted.
        #[arg(long)]
        palette: Option<PathBuf>,
        /// Attack config JSON; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Patch a perturbation into every frame and report M0/M1.
    Evaluate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Perturbation texture PNG (sidecar JSON expected next to it).
        #[arg(long)]
        perturbation: PathBuf,
        /// Vehicle speed used to derive the threshold.
        #[arg(long, default_value_t = 40.0)]
        tau_speed_mph: f64,
        /// Decision interval used to derive the threshold.
        #[arg(long, default_value_t = 0.2)]
        tau_interval_s: f64,
        /// Off-track distance used to derive the threshold.
        #[arg(long, default_value_t = 1.0)]
        tau_offset_m: f64,
        /// left | right | either.
        #[arg(long, default_value = "left")]
        direction: String,
        /// Output directory for eval.json + timeline.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Unused (evaluation is deterministic); accepted for CLI symmetry.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a synthetic drive-by scene to a manifest + frames.
    RenderSynthetic {
        /// Path-spec JSON (see README for the schema).
        #[arg(long)]
        path_spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate per-frame color adjustments from a unicolor billboard and
    /// write them back into the manifest.
    Calibrate {
        #[arg(long)]
        scene: PathBuf,
        /// Prefill color as #RRGGBB; the manifest's prefill_color when
        /// omitted.
        #[arg(long)]
        prefill: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of the model's input gradients.
    Gradcheck {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random frames to probe.
        #[arg(long, default_value_t = 20)]
        frames: usize,
        /// Coordinates probed per frame.
        #[arg(long, default_value_t = 16)]
        coords: usize,
    },
    /// Train a toy steering model on synthetic road scenes and save weights.
    Train {
        /// tiny_dave | linear_probe.
        #[arg(long, default_value = "tiny_dave")]
        arch: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Synthetic scenes in the training set (4 frames each).
        #[arg(long, default_value_t = 40)]
        scenes: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        learning_rate: f64,
    },
}

/// Renderer inputs for `render-synthetic`, deserialized from the path-spec
/// JSON. Every field has a default, so `{}` renders the bundled scene shape.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PathSpec {
    frames: usize,
    start_distance_m: f64,
    end_distance_m: f64,
    lateral_m: f64,
    light_offset: f64,
    prefill_color: [f64; 3],
    /// Texel dimensions [Hb, Wb] of the billboard base texture.
    billboard_dims: [usize; 2],
    /// Frame dimensions [H, W]; defaults to the model input size.
    frame_dims: [usize; 2],
    image_format: String,
    focal_px: f64,
    billboard_yaw_deg: f64,
    billboard_lateral_m: f64,
    curvature: f64,
    noise: f64,
}

impl Default for PathSpec {
    fn default() -> Self {
        let base = RenderParams::default();
        PathSpec {
            frames: 20,
            start_distance_m: 2.8,
            end_distance_m: 1.6,
            lateral_m: 0.0,
            light_offset: 0.0,
            prefill_color: base.prefill_color,
            billboard_dims: [20, 30],
            frame_dims: [TINY_DAVE_INPUT[1], TINY_DAVE_INPUT[2]],
            image_format: "png".into(),
            focal_px: base.focal_px,
            billboard_yaw_deg: base.billboard_yaw_deg,
            billboard_lateral_m: base.billboard_lateral_m,
            curvature: base.curvature,
            noise: base.noise,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<SteeringModel<f64>, Error> {
    SteeringModel::load_weights(path)
}

fn cmd_generate(
    scene: &Path,
    model: &Path,
    palette: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), Error> {
    let model = load_model(model)?;
    let scene = Scene::load(scene, &model)?;
    let gamut = match palette {
        Some(p) => Gamut::load_palette(p)?,
        None => Gamut::default_palette(),
    };
    let mut cfg: AttackConfig = match config {
        Some(p) => read_json(p)?,
        None => AttackConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate(scene.len())?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (perturbation, report) = optimizer::generate(&scene, &model, &gamut, &cfg)?;
    perturbation.save(&out.join("perturbation.png"))?;
    report.write_json(&out.join("report.json"))?;
    report.write_trace_csv(&out.join("trace.csv"))?;

    println!(
        "generated: objective {:.3} deg over {} frames, M0 {:.3} deg, M1 {:.3} (tau {:.2} deg), {} accepted updates",
        report.best_objective_deg,
        report.frames,
        report.final_m0_deg,
        report.final_m1,
        report.m1_tau_deg,
        report.accepted_count
    );
    eprintln!("wall clock: {:.1}s", report.wall_clock_s);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    scene: &Path,
    model: &Path,
    perturbation: &Path,
    tau_speed_mph: f64,
    tau_interval_s: f64,
    tau_offset_m: f64,
    direction: &str,
    out: &Path,
) -> Result<(), Error> {
    let model = load_model(model)?;
    let scene = Scene::load(scene, &model)?;
    let perturbation: Perturbation<f64> = Perturbation::load(perturbation)?;
    let direction: ErrorDirection = direction.parse()?;
    let tau = metrics::tau_for(
        tau_speed_mph * metrics::MPS_PER_MPH,
        tau_interval_s,
        tau_offset_m,
    )?;
    let eval = metrics::evaluate(&scene, &model, &perturbation.texture, tau, direction)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    eval.write_json(&out.join("eval.json"))?;
    eval.write_csv(&out.join("timeline.csv"))?;
    println!(
        "tau {:.2} deg | M0 {:.3} deg | mean |err| {:.3} deg | M1 {:.3} over {} frames",
        tau,
        eval.m0_deg,
        eval.mean_abs_error_deg,
        eval.m1,
        eval.frames()
    );
    Ok(())
}

fn cmd_render_synthetic(path_spec: &Path, out: &Path, seed: u64) -> Result<(), Error> {
    let spec: PathSpec = read_json(path_spec)?;
    if spec.frames == 0 {
        return Err(Error::Argument("path spec needs frames >= 1".into()));
    }
    if spec.frames > 1 && spec.start_distance_m <= spec.end_distance_m {
        return Err(Error::Argument(
            "start_distance_m must exceed end_distance_m".into(),
        ));
    }
    let params = RenderParams {
        focal_px: spec.focal_px,
        billboard_yaw_deg: spec.billboard_yaw_deg,
        billboard_lateral_m: spec.billboard_lateral_m,
        curvature: spec.curvature,
        noise: spec.noise,
        prefill_color: spec.prefill_color,
        ..RenderParams::default()
    };
    let path = DrivePath::straight(
        spec.frames,
        spec.start_distance_m,
        spec.end_distance_m,
        spec.lateral_m,
        spec.light_offset,
    );
    let [hb, wb] = spec.billboard_dims;
    let mut texture = Tensor::<f64>::zeros(vec![3, hb, wb]);
    for c in 0..3 {
        for y in 0..hb {
            for x in 0..wb {
                *texture.at3_mut(c, y, x) = spec.prefill_color[c];
            }
        }
    }
    let scene = render_scene_with(
        &params,
        &path,
        &texture,
        (spec.frame_dims[0], spec.frame_dims[1]),
        seed,
    )?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let manifest = scene.save(out, &spec.image_format)?;
    println!(
        "rendered {} frames to {} (first-frame billboard area {:.0} px^2)",
        scene.len(),
        manifest.display(),
        scene.frames[0].quad.area()
    );
    Ok(())
}

fn cmd_calibrate(scene_path: &Path, prefill: Option<&str>) -> Result<(), Error> {
    let scene: Scene<f64> = Scene::load_raw(scene_path)?;
    let prefill_color = match prefill {
        Some(hex) => Rgb64::parse_hex(hex)?,
        None => scene.prefill_color,
    };
    let adjs = scene
        .frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            estimate_adj(&frame.image, &frame.quad, &prefill_color)
                .map_err(|e| Error::Validation(format!("frame {i}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    update_manifest_adj(scene_path, &adjs)?;
    for (i, adj) in adjs.iter().enumerate() {
        let [r, g, b] = adj.channels();
        println!("frame {i}: adj ({r:.4}, {g:.4}, {b:.4})");
    }
    Ok(())
}

fn cmd_gradcheck(model: &Path, seed: u64, frames: usize, coords: usize) -> Result<(), Error> {
    let model = load_model(model)?;
    let report = gradcheck::check_model(&model, frames, coords, gradcheck::DEFAULT_STEP, seed)?;
    println!(
        "max relative error: {:.3e} ({} coordinates checked, {} kink-adjacent skipped)",
        report.max_rel_error, report.checked, report.skipped_kinks
    );
    if report.max_rel_error >= 1e-4 {
        return Err(Error::Validation(format!(
            "gradient check failed: max relative error {:.3e} >= 1e-4",
            report.max_rel_error
        )));
    }
    Ok(())
}

fn cmd_train(
    arch: &str,
    out: &Path,
    seed: u64,
    scenes: usize,
    epochs: usize,
    learning_rate: f64,
) -> Result<(), Error> {
    let arch = Architecture::from_id(arch).map_err(|_| {
        Error::Argument(format!(
            "arch must be tiny_dave or linear_probe, got {arch:?}"
        ))
    })?;
    let dataset = deepbb_core::synth::make_steering_dataset::<f64>(scenes, seed)?;
    let mut model = match arch {
        Architecture::TinyDave => SteeringModel::tiny_dave(seed.wrapping_add(1)),
        Architecture::LinearProbe => SteeringModel::linear_probe(TINY_DAVE_INPUT),
    };
    let opts = TrainOptions {
        epochs,
        learning_rate,
        seed: seed.wrapping_add(2),
        holdout_every: 5,
    };
    let report = train_toy(&mut model, &dataset, &opts)?;
    model.save_weights(out)?;
    println!(
        "trained {} on {} samples for {} epochs: held-out MSE {:.4} deg^2 -> {}",
        arch.id(),
        dataset.len(),
        report.epochs,
        report.final_mse,
        out.display()
    );
    Ok(())
}

fn configure_threads() {
    if let Ok(value) = std::env::var("DEEPBB_THREADS") {
        match value.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => eprintln!("warning: ignoring invalid DEEPBB_THREADS={value:?}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate {
            scene,
            model,
            palette,
            config,
            out,
            seed,
        } => cmd_generate(
            &scene,
            &model,
            palette.as_deref(),
            config.as_deref(),
            &out,
            seed,
        ),
        Command::Evaluate {
            scene,
            model,
            perturbation,
            tau_speed_mph,
            tau_interval_s,
            tau_offset_m,
            direction,
            out,
            seed: _,
        } => cmd_evaluate(
            &scene,
            &model,
            &perturbation,
            tau_speed_mph,
            tau_interval_s,
            tau_offset_m,
            &direction,
            &out,
        ),
        Command::RenderSynthetic {
            path_spec,
            out,
            seed,
        } => cmd_render_synthetic(&path_spec, &out, seed),
        Command::Calibrate {
            scene,
            prefill,
            seed: _,
        } => cmd_calibrate(&scene, prefill.as_deref()),
        Command::Gradcheck {
            model,
            seed,
            frames,
            coords,
        } => cmd_gradcheck(&model, seed, frames, coords),
        Command::Train {
            arch,
            out,
            seed,
            scenes,
            epochs,
            learning_rate,
        } => cmd_train(&arch, &out, seed, scenes, epochs, learning_rate),
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(0),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_io() { 2 } else { 1 })
        }
    }
}
