//! Shared-encoder multi-head model: one affine layer with a tanh
//! nonlinearity feeding n sigmoid task heads. Gradients are hand-derived;
//! `grad_check` in the parent module validates them against central finite
//! differences.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "stg-model/1";

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Multi-head MTL model: shared encoder plus one binary head per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_tasks: usize,
    /// Encoder weights, hidden x input.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    /// Head weights, tasks x hidden.
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl ToyModel {
    /// Seeded initialization: encoder weights scaled by 1/sqrt(input_dim),
    /// head weights kept small so every head starts near probability 0.5,
    /// biases at zero.
    pub fn init(input_dim: usize, hidden_dim: usize, n_tasks: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || n_tasks == 0 {
            return Err(Error::Argument(
                "model dimensions must all be at least 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let w1_scale = 1.0 / (input_dim as f64).sqrt();
        let w1 = (0..hidden_dim)
            .map(|_| {
                (0..input_dim)
                    .map(|_| w1_scale * <StandardNormal as Distribution<f64>>::sample(&normal, &mut rng))
                    .collect()
            })
            .collect();
        let w2_scale = 0.01;
        let w2 = (0..n_tasks)
            .map(|_| {
                (0..hidden_dim)
                    .map(|_| w2_scale * <StandardNormal as Distribution<f64>>::sample(&normal, &mut rng))
                    .collect()
            })
            .collect();
        Ok(Self {
            input_dim,
            hidden_dim,
            n_tasks,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; n_tasks],
        })
    }

    /// Encoder activations for one input.
    pub fn hidden(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .iter()
            .zip(&self.b1)
            .map(|(row, b)| {
                let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b;
                z.tanh()
            })
            .collect()
    }

    /// Per-task probabilities for one input.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let a = self.hidden(x);
        self.heads(&a)
    }

    fn heads(&self, hidden: &[f64]) -> Vec<f64> {
        self.w2
            .iter()
            .zip(&self.b2)
            .map(|(row, b)| {
                let u: f64 = row.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>() + b;
                sigmoid(u)
            })
            .collect()
    }

    /// Forward pass keeping the activations backward needs.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a = self.hidden(x);
        let p = self.heads(&a);
        (a, p)
    }

    pub fn param_count(&self) -> usize {
        self.hidden_dim * self.input_dim
            + self.hidden_dim
            + self.n_tasks * self.hidden_dim
            + self.n_tasks
    }

    /// Flat parameter access in w1, b1, w2, b2 order; used by finite
    /// differences.
    pub fn get_param(&self, k: usize) -> f64 {
        let (w1n, b1n, w2n) = self.section_sizes();
        if k < w1n {
            self.w1[k / self.input_dim][k % self.input_dim]
        } else if k < w1n + b1n {
            self.b1[k - w1n]
        } else if k < w1n + b1n + w2n {
            let k = k - w1n - b1n;
            self.w2[k / self.hidden_dim][k % self.hidden_dim]
        } else {
            self.b2[k - w1n - b1n - w2n]
        }
    }

    pub fn set_param(&mut self, k: usize, value: f64) {
        let (w1n, b1n, w2n) = self.section_sizes();
        if k < w1n {
            self.w1[k / self.input_dim][k % self.input_dim] = value;
        } else if k < w1n + b1n {
            self.b1[k - w1n] = value;
        } else if k < w1n + b1n + w2n {
            let k = k - w1n - b1n;
            self.w2[k / self.hidden_dim][k % self.hidden_dim] = value;
        } else {
            self.b2[k - w1n - b1n - w2n] = value;
        }
    }

    fn section_sizes(&self) -> (usize, usize, usize) {
        (
            self.hidden_dim * self.input_dim,
            self.hidden_dim,
            self.n_tasks * self.hidden_dim,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct ModelFile<'a> {
            format: &'a str,
            #[serde(flatten)]
            model: &'a ToyModel,
        }
        let mut writer = BufWriter::new(File::create(path.as_ref())?);
        serde_json::to_writer_pretty(
            &mut writer,
            &ModelFile {
                format: MODEL_FORMAT,
                model: self,
            },
        )?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct ModelFile {
            format: String,
            #[serde(flatten)]
            model: ToyModel,
        }
        let reader = BufReader::new(File::open(path.as_ref())?);
        let file: ModelFile = serde_json::from_reader(reader)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Schema(format!(
                "unsupported format {:?}, expected {:?}",
                file.format, MODEL_FORMAT
            )));
        }
        let m = &file.model;
        if m.w1.len() != m.hidden_dim
            || m.w1.iter().any(|r| r.len() != m.input_dim)
            || m.b1.len() != m.hidden_dim
            || m.w2.len() != m.n_tasks
            || m.w2.iter().any(|r| r.len() != m.hidden_dim)
            || m.b2.len() != m.n_tasks
        {
            return Err(Error::Schema(
                "checkpoint arrays disagree with the shape header".into(),
            ));
        }
        Ok(file.model)
    }
}

/// Gradient (or velocity) buffer with the same shapes as the model.
#[derive(Debug, Clone)]
pub struct ParamBuffer {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl ParamBuffer {
    pub fn zeros_like(model: &ToyModel) -> Self {
        Self {
            w1: vec![vec![0.0; model.input_dim]; model.hidden_dim],
            b1: vec![0.0; model.hidden_dim],
            w2: vec![vec![0.0; model.hidden_dim]; model.n_tasks],
            b2: vec![0.0; model.n_tasks],
        }
    }

    pub fn get(&self, model: &ToyModel, k: usize) -> f64 {
        let (w1n, b1n, w2n) = (
            model.hidden_dim * model.input_dim,
            model.hidden_dim,
            model.n_tasks * model.hidden_dim,
        );
        if k < w1n {
            self.w1[k / model.input_dim][k % model.input_dim]
        } else if k < w1n + b1n {
            self.b1[k - w1n]
        } else if k < w1n + b1n + w2n {
            let k = k - w1n - b1n;
            self.w2[k / model.hidden_dim][k % model.hidden_dim]
        } else {
            self.b2[k - w1n - b1n - w2n]
        }
    }
}

/// Accumulates the analytic gradient of the membership-weighted batch loss
/// into `grads` and returns the loss. Per-task losses are batch means; the
/// total is their dot product with `task_weights`.
pub fn batch_loss_and_grads(
    model: &ToyModel,
    inputs: &[&[f64]],
    labels: &[&[u8]],
    pos_weights: &[f64],
    task_weights: &[f64],
    grads: &mut ParamBuffer,
) -> f64 {
    let batch = inputs.len() as f64;
    let mut total = 0.0;
    for (s, x) in inputs.iter().enumerate() {
        let (a, p) = model.forward(x);
        let mut d_hidden = vec![0.0; model.hidden_dim];
        for t in 0..model.n_tasks {
            let y = labels[t][s] as f64;
            let pw = pos_weights[t];
            total += task_weights[t] / batch * super::bce_pos_weighted_raw(p[t], y, pw);
            // d(loss)/d(logit) of the positive-weighted BCE
            let delta = task_weights[t] / batch * ((1.0 - y) * p[t] - pw * y * (1.0 - p[t]));
            if delta == 0.0 {
                continue;
            }
            for (h, (g, w)) in grads.w2[t].iter_mut().zip(&model.w2[t]).enumerate() {
                *g += delta * a[h];
                d_hidden[h] += delta * w;
            }
            grads.b2[t] += delta;
        }
        for h in 0..model.hidden_dim {
            let dz = d_hidden[h] * (1.0 - a[h] * a[h]);
            if dz == 0.0 {
                continue;
            }
            for (g, xi) in grads.w1[h].iter_mut().zip(x.iter()) {
                *g += dz * xi;
            }
            grads.b1[h] += dz;
        }
    }
    total
}

/// One SGD-with-momentum step: v <- momentum*v + g, theta <- theta - lr*v.
pub fn sgd_step(
    model: &mut ToyModel,
    grads: &ParamBuffer,
    velocity: &mut ParamBuffer,
    learning_rate: f64,
    momentum: f64,
) {
    fn step_matrix(
        params: &mut [Vec<f64>],
        grads: &[Vec<f64>],
        velocity: &mut [Vec<f64>],
        lr: f64,
        mu: f64,
    ) {
        for ((prow, grow), vrow) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
            for ((p, g), v) in prow.iter_mut().zip(grow).zip(vrow.iter_mut()) {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
        }
    }
    fn step_vector(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, mu: f64) {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
    step_matrix(&mut model.w1, &grads.w1, &mut velocity.w1, learning_rate, momentum);
    step_vector(&mut model.b1, &grads.b1, &mut velocity.b1, learning_rate, momentum);
    step_matrix(&mut model.w2, &grads.w2, &mut velocity.w2, learning_rate, momentum);
    step_vector(&mut model.b2, &grads.b2, &mut velocity.b2, learning_rate, momentum);
}
