//! Differentiable steering models: frame in, steering angle (degrees) out.
//!
//! Two architectures are provided. `tiny_dave` is a small conv stack with a
//! bounded head for end-to-end experiments; `linear_probe` is a purely linear
//! map used by the enumerable-oracle tests, where exact linearity of the
//! objective matters.
//!
//! Sign convention: positive angles steer left, negative right.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops::Activation;
use crate::real::{r, Real};
use crate::tensor::Tensor;

/// Scales the `2*atan(y)` head output (radians) into degrees such that the
/// reachable range is exactly (-90, 90).
fn head_scale<R: Real>() -> R {
    r(90.0 / std::f64::consts::PI)
}

/// Gradient sign selector: `Plus` pushes the prediction up (left),
/// `Minus` down (right).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor<R: Real>(self) -> R {
        match self {
            Sign::Plus => R::one(),
            Sign::Minus => -R::one(),
        }
    }
}

/// Supported model architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    TinyDave,
    LinearProbe,
}

impl Architecture {
    pub fn id(&self) -> &'static str {
        match self {
            Architecture::TinyDave => "tiny_dave",
            Architecture::LinearProbe => "linear_probe",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "tiny_dave" => Ok(Architecture::TinyDave),
            "linear_probe" => Ok(Architecture::LinearProbe),
            other => Err(Error::Format(format!("unknown architecture id {other:?}"))),
        }
    }
}

/// Input shape `tiny_dave` is built for: RGB, 32 rows, 64 columns.
pub const TINY_DAVE_INPUT: [usize; 3] = [3, 32, 64];

/// A trained (or trainable) steering model. Immutable during prediction;
/// every call builds its own graph, so shared references are safe across
/// threads.
#[derive(Debug, Clone)]
pub struct SteeringModel<R: Real> {
    arch: Architecture,
    input_shape: [usize; 3],
    params: Vec<(String, Tensor<R>)>,
}

/// A finished forward pass: graph plus handles into it.
pub struct ForwardPass<R: Real> {
    pub graph: Graph<R>,
    pub input: NodeId,
    pub params: Vec<NodeId>,
    pub output: NodeId,
}

impl<R: Real> ForwardPass<R> {
    /// Predicted steering angle in degrees.
    pub fn prediction(&self) -> R {
        self.graph.value(self.output).item().expect("scalar output")
    }
}

fn uniform_init<R: Real>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<R> {
    let lim = (1.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| r::<R>((rng.random::<f64>() * 2.0 - 1.0) * lim))
        .collect();
    Tensor::new(shape, data).expect("sized data")
}

impl<R: Real> SteeringModel<R> {
    /// Conv 8@5x5/2 -> relu -> conv 12@5x5/2 -> relu -> dense 64 -> relu ->
    /// dense 1 -> bounded head, on a 3x32x64 frame. Weights drawn uniformly
    /// with fan-in scaling from the given seed.
    pub fn tiny_dave(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c, h, w] = TINY_DAVE_INPUT;
        let h1 = (h - 5) / 2 + 1;
        let w1 = (w - 5) / 2 + 1;
        let h2 = (h1 - 5) / 2 + 1;
        let w2 = (w1 - 5) / 2 + 1;
        let flat = 12 * h2 * w2;
        let params = vec![
            ("conv1".to_string(), uniform_init(&mut rng, vec![8, c, 5, 5], c * 25)),
            ("conv2".to_string(), uniform_init(&mut rng, vec![12, 8, 5, 5], 8 * 25)),
            ("fc1_w".to_string(), uniform_init(&mut rng, vec![64, flat], flat)),
            ("fc1_b".to_string(), Tensor::zeros(vec![64])),
            ("fc2_w".to_string(), uniform_init(&mut rng, vec![1, 64], 64)),
            ("fc2_b".to_string(), Tensor::zeros(vec![1])),
        ];
        SteeringModel {
            arch: Architecture::TinyDave,
            input_shape: TINY_DAVE_INPUT,
            params,
        }
    }

    /// One weight per input value plus a bias, no nonlinearity: the output is
    /// exactly `<weights, frame> + bias` in degrees. Zero-initialized.
    pub fn linear_probe(input_shape: [usize; 3]) -> Self {
        let n = input_shape.iter().product();
        SteeringModel {
            arch: Architecture::LinearProbe,
            input_shape,
            params: vec![
                ("w".to_string(), Tensor::zeros(vec![1, n])),
                ("b".to_string(), Tensor::zeros(vec![1])),
            ],
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn params(&self) -> &[(String, Tensor<R>)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<R>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Replace a parameter tensor (shape must match).
    pub fn set_param(&mut self, name: &str, tensor: Tensor<R>) -> Result<()> {
        let slot = self
            .params
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Argument(format!("no parameter named {name:?}")))?;
        if slot.1.shape() != tensor.shape() {
            return Err(Error::Shape(format!(
                "parameter {name:?} has shape {:?}, got {:?}",
                slot.1.shape(),
                tensor.shape()
            )));
        }
        slot.1 = tensor;
        Ok(())
    }

    fn check_frame(&self, frame: &Tensor<R>) -> Result<()> {
        if frame.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "model expects frame {:?}, got {:?}",
                self.input_shape,
                frame.shape()
            )));
        }
        Ok(())
    }

    /// Run the forward pass, returning the graph for further use (backward,
    /// kink inspection). `train` flags the parameters as requiring gradients.
    pub fn forward(&self, frame: &Tensor<R>, train: bool) -> Result<ForwardPass<R>> {
        self.check_frame(frame)?;
        let mut g = Graph::new();
        let input = g.leaf(frame.clone(), true);
        let params: Vec<NodeId> = self
            .params
            .iter()
            .map(|(_, t)| g.leaf(t.clone(), train))
            .collect();

        let output = match self.arch {
            Architecture::TinyDave => {
                let c1 = g.conv2d(input, params[0], 2)?;
                let a1 = g.activation(c1, Activation::Relu)?;
                let c2 = g.conv2d(a1, params[1], 2)?;
                let a2 = g.activation(c2, Activation::Relu)?;
                let fl = g.flatten(a2)?;
                let d1 = g.dense(fl, params[2], params[3])?;
                let a3 = g.activation(d1, Activation::Relu)?;
                let d2 = g.dense(a3, params[4], params[5])?;
                let head = g.activation(d2, Activation::AtanScaled)?;
                g.scale(head, head_scale())?
            }
            Architecture::LinearProbe => {
                let fl = g.flatten(input)?;
                g.dense(fl, params[0], params[1])?
            }
        };

        Ok(ForwardPass {
            graph: g,
            input,
            params,
            output,
        })
    }

    /// Steering angle in degrees for a normalized `[0,1]` frame.
    pub fn predict(&self, frame: &Tensor<R>) -> Result<R> {
        Ok(self.forward(frame, false)?.prediction())
    }

    /// `sign * d(predict)/d(frame)`, same shape as the frame.
    pub fn input_gradient(&self, frame: &Tensor<R>, sign: Sign) -> Result<Tensor<R>> {
        let mut pass = self.forward(frame, false)?;
        pass.graph
            .backward(pass.output, &Tensor::scalar(sign.factor()))?;
        pass.graph.grad(pass.input)
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Knobs for [`train_toy`].
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Every n-th sample is held out of SGD and used for the report MSE.
    pub holdout_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            // The degree-scaled head multiplies gradients by ~57; larger
            // rates oscillate.
            learning_rate: 1e-4,
            seed: 0,
            holdout_every: 5,
        }
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    /// Mean squared error (deg^2) on the held-out samples.
    pub final_mse: f64,
}

/// Plain per-sample stochastic gradient descent on squared error.
/// Deterministic for a fixed seed.
pub fn train_toy<R: Real>(
    model: &mut SteeringModel<R>,
    dataset: &[(Tensor<R>, R)],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::Argument("train_toy: empty dataset".into()));
    }
    for (frame, _) in dataset {
        if frame.shape() != model.input_shape() {
            return Err(Error::Shape(format!(
                "train_toy: frame shape {:?} does not match model input {:?}",
                frame.shape(),
                model.input_shape()
            )));
        }
    }

    let holdout_every = opts.holdout_every.max(2);
    let mut train_idx: Vec<usize> = Vec::new();
    let mut held_idx: Vec<usize> = Vec::new();
    for i in 0..dataset.len() {
        if dataset.len() >= holdout_every && i % holdout_every == holdout_every - 1 {
            held_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    if held_idx.is_empty() {
        held_idx = train_idx.clone();
    }

    let lr = r::<R>(opts.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.epochs {
        // Fisher-Yates over the training order.
        let mut order = train_idx.clone();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for &i in &order {
            let (frame, label) = &dataset[i];
            let mut pass = model.forward(frame, true)?;
            let residual = pass.prediction() - *label;
            // d/dp (pred - label)^2 = 2*(pred - label) * d pred/dp
            pass.graph
                .backward(pass.output, &Tensor::scalar(r::<R>(2.0) * residual))?;
            for (slot, node) in model.params.iter_mut().zip(&pass.params) {
                let grad = pass.graph.grad(*node)?;
                for (p, g) in slot.1.data_mut().iter_mut().zip(grad.data()) {
                    *p -= lr * *g;
                }
            }
        }
    }

    let mut sq_sum = 0.0;
    for &i in &held_idx {
        let (frame, label) = &dataset[i];
        let e = (model.predict(frame)? - *label).to_f64_lossy();
        sq_sum += e * e;
    }
    Ok(TrainReport {
        epochs: opts.epochs,
        final_mse: sq_sum / held_idx.len() as f64,
    })
}

// ---------------------------------------------------------------------------
// Weight files
// ---------------------------------------------------------------------------
//
// Binary layout (all integers u32 little-endian, all reals f64 little-endian):
//
//   magic          4 bytes  "DBBW"
//   version        u32      1
//   arch id        u32 length + utf8 bytes
//   input shape    3 x u32  (C, H, W)
//   param count    u32
//   per parameter:
//     name         u32 length + utf8 bytes
//     rank         u32
//     dims         rank x u32
//     data         numel x f64

const WEIGHTS_MAGIC: &[u8; 4] = b"DBBW";
const WEIGHTS_VERSION: u32 = 1;

impl<R: Real> SteeringModel<R> {
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        let id = self.arch.id().as_bytes();
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id);
        for d in self.input_shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, tensor) in &self.params {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_weights(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Format(format!(
                    "weight file truncated at offset {pos} (wanted {n} bytes)"
                )));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            let b = take(pos, 4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };

        if take(&mut pos, 4)? != WEIGHTS_MAGIC {
            return Err(Error::Format("not a weight file (bad magic)".into()));
        }
        let version = read_u32(&mut pos)?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!(
                "unsupported weight file version {version}"
            )));
        }
        let id_len = read_u32(&mut pos)? as usize;
        let id = String::from_utf8(take(&mut pos, id_len)?.to_vec())
            .map_err(|_| Error::Format("architecture id is not utf8".into()))?;
        let arch = Architecture::from_id(&id)?;
        let mut input_shape = [0usize; 3];
        for d in &mut input_shape {
            *d = read_u32(&mut pos)? as usize;
        }
        let n_params = read_u32(&mut pos)? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name_len = read_u32(&mut pos)? as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::Format("parameter name is not utf8".into()))?;
            let rank = read_u32(&mut pos)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut pos)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let b = take(&mut pos, 8)?;
                let v = f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]);
                data.push(R::from_f64_lossy(v));
            }
            params.push((name, Tensor::new(shape, data)?));
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!(
                "weight file has {} trailing bytes",
                bytes.len() - pos
            )));
        }

        // Cross-check against a freshly constructed model of the same
        // architecture: names, order and shapes must agree.
        let reference = match arch {
            Architecture::TinyDave => SteeringModel::<R>::tiny_dave(0),
            Architecture::LinearProbe => SteeringModel::<R>::linear_probe(input_shape),
        };
        if arch == Architecture::TinyDave && input_shape != TINY_DAVE_INPUT {
            return Err(Error::Format(format!(
                "tiny_dave weight file declares input {input_shape:?}, expected {TINY_DAVE_INPUT:?}"
            )));
        }
        if reference.params.len() != params.len() {
            return Err(Error::Format(format!(
                "weight file has {} parameters, {} architecture needs {}",
                params.len(),
                id,
                reference.params.len()
            )));
        }
        for ((name, tensor), (ref_name, ref_tensor)) in params.iter().zip(&reference.params) {
            if name != ref_name || tensor.shape() != ref_tensor.shape() {
                return Err(Error::Format(format!(
                    "weight file parameter {name:?} {:?} does not match {ref_name:?} {:?}",
                    tensor.shape(),
                    ref_tensor.shape()
                )));
            }
        }

        Ok(SteeringModel {
            arch,
            input_shape,
            params,
        })
    }
}
