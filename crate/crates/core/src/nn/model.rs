use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

/// Weight initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// Uniform in ±√(6 / (fan_in + fan_out)), zero biases.
    #[default]
    Glorot,
}

/// Classification head placed after the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadConfig {
    Standard,
    /// `m → r` linear, activation, `r → N` linear.
    LowRank {
        rank: usize,
        activation: Activation,
    },
    /// Gaussian bottleneck of width `latent` sampled from `(μ, softplus(ρ))`.
    Variational {
        latent: usize,
    },
}

impl HeadConfig {
    pub fn low_rank_tanh(rank: usize) -> Self {
        HeadConfig::LowRank {
            rank,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Encoder widths; the last one is the feature width `m`.
    pub hidden: Vec<usize>,
    /// One activation per encoder layer.
    pub activations: Vec<Activation>,
    pub classes: usize,
    pub head: HeadConfig,
    pub seed: u64,
    #[serde(default)]
    pub init: InitScheme,
}

impl ModelConfig {
    /// The 2 → 20 → 20 → 3 relu network used on the toy data.
    pub fn toy(head: HeadConfig, seed: u64) -> Self {
        Self {
            input_dim: 2,
            hidden: vec![20, 20],
            activations: vec![Activation::Relu, Activation::Relu],
            classes: 3,
            head,
            seed,
            init: InitScheme::Glorot,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(Error::validation("widths", "all layer widths must be positive"));
        }
        if self.hidden.len() != self.activations.len() {
            return Err(Error::validation(
                "activations",
                format!(
                    "{} activations for {} encoder layers",
                    self.activations.len(),
                    self.hidden.len()
                ),
            ));
        }
        match self.head {
            HeadConfig::Standard => {}
            HeadConfig::LowRank { rank, .. } => {
                let cap = self.feature_dim().min(self.classes);
                if rank == 0 || rank > cap {
                    return Err(Error::validation(
                        "rank",
                        format!("rank {rank} must lie in 1..={cap} (min of m and N)"),
                    ));
                }
            }
            HeadConfig::Variational { latent } => {
                if latent == 0 {
                    return Err(Error::validation("latent", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Affine map followed by an elementwise activation; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn glorot(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Self {
            weight: Tensor::new(vec![fan_in, fan_out], w)
                .expect("sized")
                .with_requires_grad(true),
            bias: Tensor::zeros(vec![fan_out]).with_requires_grad(true),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Records `act(x·W + b)`; `vars` holds the weight and bias leaves.
    pub fn record(&self, tape: &mut Tape<T>, vars: (Var, Var), x: Var) -> Result<Var> {
        let h = tape.matmul(x, vars.0)?;
        let h = tape.add_bias(h, vars.1)?;
        Ok(match self.activation {
            Activation::Identity => h,
            a => tape.activate(h, a),
        })
    }

    fn set_trainable(&mut self, on: bool) {
        self.weight.set_requires_grad(on);
        self.bias.set_requires_grad(on);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head<T> {
    Standard { linear: Dense<T> },
    LowRank { compress: Dense<T>, classify: Dense<T> },
    Variational { stats: Dense<T>, classify: Dense<T> },
}

impl<T: Scalar> Head<T> {
    fn layers(&self) -> Vec<&Dense<T>> {
        match self {
            Head::Standard { linear } => vec![linear],
            Head::LowRank { compress, classify }
            | Head::Variational {
                stats: compress,
                classify,
            } => {
                vec![compress, classify]
            }
        }
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense<T>> {
        match self {
            Head::Standard { linear } => vec![linear],
            Head::LowRank { compress, classify }
            | Head::Variational {
                stats: compress,
                classify,
            } => {
                vec![compress, classify]
            }
        }
    }

    fn layer_names(&self) -> &'static [&'static str] {
        match self {
            Head::Standard { .. } => &["head.linear"],
            Head::LowRank { .. } => &["head.compress", "head.classify"],
            Head::Variational { .. } => &["head.stats", "head.classify"],
        }
    }
}

/// Parameter leaves of one model on one tape, in [`ClassifierModel::params`] order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn layer(&self, i: usize) -> (Var, Var) {
        (self.vars[2 * i], self.vars[2 * i + 1])
    }
}

/// Nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    /// Last representation before the final linear map.
    pub penultimate: Var,
    /// Output of every encoder layer.
    pub taps: Vec<Var>,
    /// `(μ, σ)` for a variational head.
    pub gaussian: Option<(Var, Var)>,
}

/// Encoder followed by a pluggable head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T> {
    pub config: ModelConfig,
    pub encoder: Vec<Dense<T>>,
    pub head: Head<T>,
}

pub fn build_classifier<T: Scalar>(cfg: &ModelConfig) -> Result<ClassifierModel<T>> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let mut encoder = Vec::with_capacity(cfg.hidden.len());
    let mut fan_in = cfg.input_dim;
    for (&w, &a) in cfg.hidden.iter().zip(&cfg.activations) {
        encoder.push(Dense::glorot(fan_in, w, a, &mut rng));
        fan_in = w;
    }
    let m = fan_in;
    let n = cfg.classes;
    let head = match cfg.head {
        HeadConfig::Standard => Head::Standard {
            linear: Dense::glorot(m, n, Activation::Identity, &mut rng),
        },
        HeadConfig::LowRank { rank, activation } => Head::LowRank {
            compress: Dense::glorot(m, rank, activation, &mut rng),
            classify: Dense::glorot(rank, n, Activation::Identity, &mut rng),
        },
        HeadConfig::Variational { latent } => Head::Variational {
            stats: Dense::glorot(m, 2 * latent, Activation::Identity, &mut rng),
            classify: Dense::glorot(latent, n, Activation::Identity, &mut rng),
        },
    };
    Ok(ClassifierModel {
        config: cfg.clone(),
        encoder,
        head,
    })
}

impl<T: Scalar> ClassifierModel<T> {
    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    fn layers(&self) -> Vec<&Dense<T>> {
        let mut v: Vec<&Dense<T>> = self.encoder.iter().collect();
        v.extend(self.head.layers());
        v
    }

    /// All parameters: per layer weight then bias, encoder first.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers().into_iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.encoder.iter_mut().chain(self.head.layers_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    /// Names matching [`ClassifierModel::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.encoder.len() {
            names.push(format!("encoder.{i}.weight"));
            names.push(format!("encoder.{i}.bias"));
        }
        for n in self.head.layer_names() {
            names.push(format!("{n}.weight"));
            names.push(format!("{n}.bias"));
        }
        names
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn head_param_count(&self) -> usize {
        self.head.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Order-sensitive fingerprint of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325_u64;
        for p in self.params() {
            for v in p.values() {
                h ^= v.as_f64().to_bits();
                h = seed::splitmix64(h);
            }
        }
        h
    }

    pub fn set_trainable(&mut self, on: bool) {
        for l in self.encoder.iter_mut().chain(self.head.layers_mut()) {
            l.set_trainable(on);
        }
    }

    /// Freezes the first `count` encoder layers and unfreezes the rest.
    pub fn freeze_encoder_prefix(&mut self, count: usize) {
        for (i, l) in self.encoder.iter_mut().enumerate() {
            l.set_trainable(i >= count);
        }
        for l in self.head.layers_mut() {
            l.set_trainable(true);
        }
    }

    /// Records parameters as leaves; trainable ones track gradients.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.params().into_iter().map(|p| tape.leaf(p)).collect(),
        }
    }

    /// Records parameters as constants regardless of their trainable flag.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .params()
                .into_iter()
                .map(|p| {
                    tape.constant(p.shape().to_vec(), p.values().to_vec())
                        .expect("parameter shape is consistent")
                })
                .collect(),
        }
    }

    /// Forward pass on a `batch × d` input node. With `noise`, a variational
    /// head samples its latent; without, it uses the mean.
    pub fn record<R: Rng>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var, noise: Option<&mut R>) -> Result<Forward> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.config.input_dim {
            return Err(Error::Shape {
                op: "forward",
                left: vec![self.config.input_dim],
                right: shape,
            });
        }
        let mut h = x;
        let mut taps = Vec::with_capacity(self.encoder.len());
        for (i, layer) in self.encoder.iter().enumerate() {
            h = layer.record(tape, bound.layer(i), h)?;
            taps.push(h);
        }
        let k = self.encoder.len();
        match &self.head {
            Head::Standard { linear } => {
                let logits = linear.record(tape, bound.layer(k), h)?;
                Ok(Forward {
                    logits,
                    penultimate: h,
                    taps,
                    gaussian: None,
                })
            }
            Head::LowRank { compress, classify } => {
                let z = compress.record(tape, bound.layer(k), h)?;
                let logits = classify.record(tape, bound.layer(k + 1), z)?;
                Ok(Forward {
                    logits,
                    penultimate: z,
                    taps,
                    gaussian: None,
                })
            }
            Head::Variational { stats, classify } => {
                let latent = classify.in_dim();
                let s = stats.record(tape, bound.layer(k), h)?;
                let mu = tape.slice_cols(s, 0, latent)?;
                let raw = tape.slice_cols(s, latent, 2 * latent)?;
                let sigma = tape.softplus(raw);
                let z = match noise {
                    Some(rng) => {
                        let n = tape.shape(mu).iter().product();
                        let eps: Vec<T> = (0..n).map(|_| T::lit(StandardNormal.sample(rng))).collect();
                        let eps = tape.constant(tape.shape(mu).to_vec(), eps)?;
                        let scaled = tape.mul(sigma, eps)?;
                        tape.add(mu, scaled)?
                    }
                    None => mu,
                };
                let logits = classify.record(tape, bound.layer(k + 1), z)?;
                Ok(Forward {
                    logits,
                    penultimate: z,
                    taps,
                    gaussian: Some((mu, sigma)),
                })
            }
        }
    }

    /// Adds the tape's leaf gradients into the parameter tensors.
    pub fn absorb_grads(&mut self, tape: &Tape<T>, bound: &Bound) -> Result<()> {
        let vars = bound.vars.clone();
        for (p, v) in self.params_mut().into_iter().zip(vars) {
            if let Some(g) = tape.grad(v) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    fn eval_nodes(&self, x: &Tensor<T>) -> Result<(Tape<T>, Forward)> {
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let xv = tape.leaf(&x.clone().with_requires_grad(false));
        let fwd = self.record::<rand_chacha::ChaCha8Rng>(&mut tape, &bound, xv, None)?;
        Ok((tape, fwd))
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (tape, f) = self.eval_nodes(x)?;
        Ok(tape.tensor(f.logits))
    }

    pub fn log_probs(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (mut tape, f) = self.eval_nodes(x)?;
        let lp = tape.log_softmax(f.logits);
        Ok(tape.tensor(lp))
    }

    pub fn probs(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.log_probs(x)?.map(T::exp))
    }

    pub fn penultimate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (tape, f) = self.eval_nodes(x)?;
        Ok(tape.tensor(f.penultimate))
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    /// Fraction of rows whose argmax equals the label.
    pub fn accuracy(&self, x: &Tensor<T>, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// The linear part of the head as an `m × N` matrix, ignoring biases and
    /// the activation between the two factors.
    pub fn effective_head_matrix(&self) -> Tensor<T> {
        match &self.head {
            Head::Standard { linear } => linear.weight.clone(),
            Head::LowRank { compress, classify } => compress
                .weight
                .matmul(&classify.weight)
                .expect("head factors are conformable"),
            Head::Variational { stats, classify } => {
                let latent = classify.in_dim();
                let m = stats.in_dim();
                let mut mu = Vec::with_capacity(m * latent);
                for i in 0..m {
                    mu.extend_from_slice(&stats.weight.row(i)[..latent]);
                }
                Tensor::new(vec![m, latent], mu)
                    .expect("sized")
                    .matmul(&classify.weight)
                    .expect("head factors are conformable")
            }
        }
    }
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
