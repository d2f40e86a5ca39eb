//! Central finite-difference checks of the backward pass.
//!
//! This is the independent oracle for every gradient the attack relies on.
//! It is shipped (not test-only) because the CLI exposes it as a command.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Sign, SteeringModel};
use crate::real::{r, Real};
use crate::tensor::Tensor;

/// Default probe step on unit-scale inputs.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Aggregated result of a finite-difference sweep.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    /// Largest relative error seen over all probed coordinates.
    pub max_rel_error: f64,
    /// Number of coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a ReLU pre-activation sat within the
    /// exclusion band of a kink.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    fn absorb(&mut self, other: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

/// Compare the model's backward input gradient against central finite
/// differences at `coords` (flat indices into the frame). Coordinates whose
/// probes straddle a ReLU kink (a pre-activation changes sign between the
/// two evaluation points) are excluded, since the difference quotient is
/// invalid across the kink.
pub fn check_input_gradient_at<R: Real>(
    model: &SteeringModel<R>,
    frame: &Tensor<R>,
    coords: &[usize],
    h: f64,
) -> Result<GradCheckReport> {
    let grad = model.input_gradient(frame, Sign::Plus)?;

    let eval = |frame: &Tensor<R>| -> Result<(R, Vec<bool>)> {
        let pass = model.forward(frame, false)?;
        Ok((pass.prediction(), pass.graph.relu_sign_pattern()))
    };

    let mut report = GradCheckReport::default();
    for &i in coords {
        let mut plus = frame.clone();
        plus.data_mut()[i] += r::<R>(h);
        let mut minus = frame.clone();
        minus.data_mut()[i] -= r::<R>(h);
        let (fp, pattern_p) = eval(&plus)?;
        let (fm, pattern_m) = eval(&minus)?;

        if pattern_p != pattern_m {
            report.skipped_kinks += 1;
            continue;
        }

        let fd = (fp - fm).to_f64_lossy() / (2.0 * h);
        let bp = grad.data()[i].to_f64_lossy();
        report.max_rel_error = report.max_rel_error.max(rel_error(fd, bp));
        report.checked += 1;
    }
    Ok(report)
}

/// Sweep a model over `frames` random unit-scale frames, probing
/// `coords_per_frame` random coordinates on each. Deterministic in `seed`.
pub fn check_model<R: Real>(
    model: &SteeringModel<R>,
    frames: usize,
    coords_per_frame: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = model.input_shape();
    let numel: usize = shape.iter().product();
    let mut report = GradCheckReport::default();
    for _ in 0..frames {
        let data: Vec<R> = (0..numel).map(|_| r::<R>(rng.random::<f64>())).collect();
        let frame = Tensor::new(shape.to_vec(), data)?;
        let coords: Vec<usize> = (0..coords_per_frame)
            .map(|_| rng.random_range(0..numel))
            .collect();
        report.absorb(&check_input_gradient_at(model, &frame, &coords, h)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TINY_DAVE_INPUT;

    #[test]
    fn tiny_dave_input_gradient_matches_finite_differences() {
        let model = SteeringModel::<f64>::tiny_dave(17);
        let report = check_model(&model, 3, 24, DEFAULT_STEP, 99).unwrap();
        assert!(report.checked > 0);
        assert!(
            report.max_rel_error < 1e-4,
            "max rel error {} over {} coords",
            report.max_rel_error,
            report.checked
        );
    }

    #[test]
    fn linear_probe_gradient_is_exact() {
        let mut model = SteeringModel::<f64>::linear_probe([1, 3, 3]);
        let w = Tensor::new(vec![1, 9], (0..9).map(|i| i as f64 * 0.1 - 0.4).collect()).unwrap();
        model.set_param("w", w).unwrap();
        let report = check_model(&model, 2, 9, DEFAULT_STEP, 5).unwrap();
        assert!(report.max_rel_error < 1e-7);
        assert_eq!(report.skipped_kinks, 0);
    }

    #[test]
    fn composite_net_weight_gradients_match_finite_differences() {
        // Checks parameter gradients (not just input) through conv+relu+dense.
        let model = SteeringModel::<f64>::tiny_dave(23);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let numel: usize = TINY_DAVE_INPUT.iter().product();
        let frame = Tensor::new(
            TINY_DAVE_INPUT.to_vec(),
            (0..numel).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();

        let mut pass = model.forward(&frame, true).unwrap();
        pass.graph
            .backward(pass.output, &Tensor::scalar(1.0))
            .unwrap();

        let h = DEFAULT_STEP;
        for (pi, (name, tensor)) in model.params().iter().enumerate() {
            let grad = pass.graph.grad(pass.params[pi]).unwrap();
            for k in 0..3.min(tensor.numel()) {
                let coord = (k * 37) % tensor.numel();
                let probe = |delta: f64| -> f64 {
                    let mut m = model.clone();
                    let mut t = tensor.clone();
                    t.data_mut()[coord] += delta;
                    m.set_param(name, t).unwrap();
                    m.predict(&frame).unwrap()
                };
                let fd = (probe(h) - probe(-h)) / (2.0 * h);
                let bp = grad.data()[coord];
                let rel = rel_error(fd, bp);
                assert!(
                    rel < 1e-4 || (fd.abs() < 1e-9 && bp.abs() < 1e-9),
                    "param {name} coord {coord}: fd {fd} bp {bp} rel {rel}"
                );
            }
        }
    }
}
