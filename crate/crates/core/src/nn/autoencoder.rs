use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::Dense;
use crate::autodiff::{Activation, Adam, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub input_dim: usize,
    /// Widths between input and bottleneck; mirrored in the decoder.
    pub hidden: Vec<usize>,
    pub rank: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl AutoencoderConfig {
    /// `d → 64 → r → 64 → d` with relu hidden layers.
    pub fn dense(input_dim: usize, rank: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden: vec![64],
            rank,
            activation: Activation::Relu,
            seed,
        }
    }
}

/// Encoder to an `r`-vector and decoder back to the input width.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel<T> {
    pub encoder: Vec<Dense<T>>,
    pub decoder: Vec<Dense<T>>,
    pub rank: usize,
}

pub fn build_autoencoder<T: Scalar>(cfg: &AutoencoderConfig) -> Result<AutoencoderModel<T>> {
    if cfg.input_dim == 0 || cfg.rank == 0 || cfg.hidden.contains(&0) {
        return Err(Error::validation("widths", "all autoencoder widths must be positive"));
    }
    let mut rng = seed::rng(cfg.seed);
    let mut widths = vec![cfg.input_dim];
    widths.extend(&cfg.hidden);
    widths.push(cfg.rank);
    let stack = |widths: &[usize], rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Dense<T>> {
        let last = widths.len() - 2;
        widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    cfg.activation
                };
                Dense::glorot(w[0], w[1], act, rng)
            })
            .collect()
    };
    let encoder = stack(&widths, &mut rng);
    widths.reverse();
    let decoder = stack(&widths, &mut rng);
    Ok(AutoencoderModel {
        encoder,
        decoder,
        rank: cfg.rank,
    })
}

impl<T: Scalar> AutoencoderModel<T> {
    /// Single linear layer each way with identity weights (`r = d`).
    pub fn identity(dim: usize) -> Self {
        let layer = || Dense {
            weight: Tensor::identity(dim).with_requires_grad(true),
            bias: Tensor::zeros(vec![dim]).with_requires_grad(true),
            activation: Activation::Identity,
        };
        Self {
            encoder: vec![layer()],
            decoder: vec![layer()],
            rank: dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [tape.leaf(&l.weight), tape.leaf(&l.bias)])
            .collect()
    }

    /// Returns `(code, reconstruction)` nodes.
    pub fn record(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        let mut i = 0;
        for l in &self.encoder {
            h = l.record(tape, (vars[i], vars[i + 1]), h)?;
            i += 2;
        }
        let code = h;
        for l in &self.decoder {
            h = l.record(tape, (vars[i], vars[i + 1]), h)?;
            i += 2;
        }
        Ok((code, h))
    }

    pub fn absorb_grads(&mut self, tape: &Tape<T>, vars: &[Var]) -> Result<()> {
        for (p, &v) in self.params_mut().into_iter().zip(vars) {
            if let Some(g) = tape.grad(v) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "ae_forward",
                left: vec![self.input_dim()],
                right: x.shape().to_vec(),
            });
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| {
                [
                    tape.leaf(&l.weight.clone().with_requires_grad(false)),
                    tape.leaf(&l.bias.clone().with_requires_grad(false)),
                ]
            })
            .collect();
        let xv = tape.leaf(&x.clone().with_requires_grad(false));
        let (code, rec) = self.record(&mut tape, &vars, xv)?;
        Ok((tape.tensor(code), tape.tensor(rec)))
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x)?.0)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x)?.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Fits the autoencoder to `x` under mean squared error with Adam.
/// Returns the per-epoch mean loss.
pub fn train_autoencoder<T: Scalar>(
    model: &mut AutoencoderModel<T>,
    x: &Tensor<T>,
    cfg: &AeTrainConfig,
) -> Result<Vec<f64>> {
    if x.cols() != model.input_dim() {
        return Err(Error::Shape {
            op: "train_autoencoder",
            left: vec![model.input_dim()],
            right: x.shape().to_vec(),
        });
    }
    let mut rng = seed::rng(cfg.seed);
    let mut opt = Adam::new(T::lit(cfg.lr));
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = x.select_rows(chunk);
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let xv = tape.leaf(&xb);
            let (_, rec) = model.record(&mut tape, &vars, xv)?;
            let diff = tape.sub(rec, xv)?;
            let sq = tape.mul(diff, diff)?;
            let loss = tape.mean(sq);
            let value = tape.scalar(loss).as_f64();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            tape.backward(loss)?;
            model.absorb_grads(&tape, &vars)?;
            opt.step(&mut model.params_mut())?;
            total += value * chunk.len() as f64;
        }
        losses.push(total / x.rows().max(1) as f64);
    }
    Ok(losses)
}

/// Mean squared reconstruction error per entry.
pub fn reconstruction_mse<T: Scalar>(model: &AutoencoderModel<T>, x: &Tensor<T>) -> Result<f64> {
    let rec = model.forward(x)?;
    let n = x.len().max(1) as f64;
    Ok(rec
        .values()
        .iter()
        .zip(x.values())
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum::<f64>()
        / n)
}

/// Reconstruction of `x`.
pub fn ae_forward<T: Scalar>(model: &AutoencoderModel<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    model.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_reproduces_input() {
        let ae = AutoencoderModel::<f64>::identity(5);
        let x = Tensor::new(vec![2, 5], (0..10).map(|i| i as f64 * 0.37 - 1.0).collect()).unwrap();
        assert_eq!(ae.forward(&x).unwrap(), x);
    }

    #[test]
    fn bottleneck_has_rank_width() {
        let ae = build_autoencoder::<f64>(&AutoencoderConfig::dense(16, 3, 1)).unwrap();
        let x = Tensor::zeros(vec![4, 16]);
        assert_eq!(ae.encode(&x).unwrap().shape(), &[4, 3]);
        assert_eq!(ae.forward(&x).unwrap().shape(), &[4, 16]);
        assert_eq!(ae.encoder.len(), 2);
        assert_eq!(ae.decoder.len(), 2);
    }

    #[test]
    fn deterministic_init() {
        let cfg = AutoencoderConfig::dense(16, 4, 9);
        assert_eq!(
            build_autoencoder::<f64>(&cfg).unwrap(),
            build_autoencoder::<f64>(&cfg).unwrap()
        );
    }

    #[test]
    fn training_lowers_mse() {
        let mut rng = seed::rng(3);
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|_| {
                let a: f64 = rand::Rng::random_range(&mut rng, -1.0..1.0);
                vec![a, 2.0 * a, -a, 0.5 * a]
            })
            .collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let mut ae = build_autoencoder::<f64>(&AutoencoderConfig::dense(4, 1, 2)).unwrap();
        let before = reconstruction_mse(&ae, &x).unwrap();
        let cfg = AeTrainConfig {
            epochs: 60,
            lr: 0.01,
            batch_size: 16,
            seed: 1,
        };
        let losses = train_autoencoder(&mut ae, &x, &cfg).unwrap();
        assert_eq!(losses.len(), 60);
        assert!(reconstruction_mse(&ae, &x).unwrap() < 0.1 * before);
    }
}
