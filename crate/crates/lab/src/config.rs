use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use invlab_core::attack::{AdvConfig, InitPolicy, InversionConfig, InversionLoss, PriorKind};
use invlab_core::autodiff::Activation;
use invlab_core::data::DatasetSpec;
use invlab_core::defense::{CaConfig, DefenseConfig, TrainConfig};
use invlab_core::metrics::SurrogateConfig;
use invlab_core::nn::{AeTrainConfig, HeadConfig, ModelConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Toy2dDefenseGrid,
    RankSweep,
    ActivationSweep,
    ConfidenceSweep,
    AeRankSweep,
    DefenseCompare,
    AdvProbe,
    Calibration,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Toy2dDefenseGrid,
        ExperimentKind::RankSweep,
        ExperimentKind::ActivationSweep,
        ExperimentKind::ConfidenceSweep,
        ExperimentKind::AeRankSweep,
        ExperimentKind::DefenseCompare,
        ExperimentKind::AdvProbe,
        ExperimentKind::Calibration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Toy2dDefenseGrid => "toy2d-defense-grid",
            ExperimentKind::RankSweep => "rank-sweep",
            ExperimentKind::ActivationSweep => "activation-sweep",
            ExperimentKind::ConfidenceSweep => "confidence-sweep",
            ExperimentKind::AeRankSweep => "ae-rank-sweep",
            ExperimentKind::DefenseCompare => "defense-compare",
            ExperimentKind::AdvProbe => "adv-probe",
            ExperimentKind::Calibration => "calibration",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::Toy2dDefenseGrid => {
                "2-D toy: invert plain, tanh, low-rank and low-rank+tanh heads and compare final distances"
            }
            ExperimentKind::RankSweep => "sweep the head rank; test accuracy against attack accuracy",
            ExperimentKind::ActivationSweep => {
                "sweep the bottleneck activation; smoothed input-gradient traces of the attack"
            }
            ExperimentKind::ConfidenceSweep => "attack checkpoints taken along training; attack accuracy vs confidence",
            ExperimentKind::AeRankSweep => "autoencoders with varying bottleneck rank; MSE and re-classification",
            ExperimentKind::DefenseCompare => "all defenses side by side under the same inversion attack",
            ExperimentKind::AdvProbe => "FGSM / PGD / BIM success rates against defended and plain models",
            ExperimentKind::Calibration => "numeric check of the confidence-adaptation loss minimizer",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| LabError::usage(format!("unknown experiment `{s}`")))
    }
}

/// A trained configuration under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub head: HeadConfig,
    pub defense: DefenseConfig,
    /// Replaces the encoder activations of the base model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activations: Option<Vec<Activation>>,
}

impl Variant {
    pub fn new(name: &str, head: HeadConfig, defense: DefenseConfig) -> Self {
        Self {
            name: name.to_string(),
            head,
            defense,
            activations: None,
        }
    }
}

/// Inversion settings shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSettings {
    pub steps: usize,
    pub lr: f64,
    pub loss: InversionLoss,
    pub init: InitPolicy,
    pub per_class: usize,
    /// Attacked classes; empty means all.
    pub classes: Vec<usize>,
    pub prior: PriorKind,
    pub prior_weight: f64,
    pub momentum: f64,
    pub clip: Option<(f64, f64)>,
}

impl AttackSettings {
    pub fn inversion(&self, seed: u64) -> InversionConfig {
        InversionConfig {
            target: 0,
            steps: self.steps,
            lr: self.lr,
            init: self.init.clone(),
            loss: self.loss,
            prior_weight: self.prior_weight,
            prior: self.prior,
            momentum: self.momentum,
            clip: self.clip,
            seed,
        }
    }

    pub fn attacked_classes(&self, n: usize) -> Vec<usize> {
        if self.classes.is_empty() {
            (0..n).collect()
        } else {
            self.classes.clone()
        }
    }
}

/// The independent scoring model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSettings {
    /// Train a surrogate on the reconstructions and score it.
    pub kes: bool,
    /// Also measure feature distance under a second eval model.
    pub cross_model: bool,
    pub surrogate: SurrogateConfig,
    pub trace_window: usize,
}

/// Experiment-specific knobs; each experiment fills the ones it reads.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activations: Option<Vec<Activation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adv: Option<AdvConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ae_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ae_train: Option<AeTrainConfig>,
}

fn missing(field: &str) -> LabError {
    LabError::usage(format!("sweep.{field} is required for this experiment"))
}

impl SweepParams {
    pub fn ranks(&self) -> Result<&[usize]> {
        self.ranks.as_deref().ok_or_else(|| missing("ranks"))
    }
    pub fn activations(&self) -> Result<&[Activation]> {
        self.activations.as_deref().ok_or_else(|| missing("activations"))
    }
    pub fn head_rank(&self) -> Result<usize> {
        self.head_rank.ok_or_else(|| missing("head_rank"))
    }
    pub fn checkpoints(&self) -> Result<&[usize]> {
        self.checkpoints.as_deref().ok_or_else(|| missing("checkpoints"))
    }
    pub fn b_values(&self) -> Result<&[f64]> {
        self.b_values.as_deref().ok_or_else(|| missing("b_values"))
    }
    pub fn a(&self) -> Result<f64> {
        self.a.ok_or_else(|| missing("a"))
    }
    pub fn adv(&self) -> Result<&AdvConfig> {
        self.adv.as_ref().ok_or_else(|| missing("adv"))
    }
    pub fn ae_hidden(&self) -> Result<&[usize]> {
        self.ae_hidden.as_deref().ok_or_else(|| missing("ae_hidden"))
    }
    pub fn ae_train(&self) -> Result<&AeTrainConfig> {
        self.ae_train.as_ref().ok_or_else(|| missing("ae_train"))
    }
}

/// Fully resolved experiment description. Seeds inside `dataset`, `model`,
/// `train` and `eval` are placeholders: every run derives its own from
/// `seed`, the variant name and the repeat index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub repeats: usize,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub attack: AttackSettings,
    pub variants: Vec<Variant>,
    pub sweep: SweepParams,
    pub metrics: MetricSettings,
    /// Side of the confidence grid written for 2-D datasets.
    pub grid: Option<usize>,
}

fn toy_model(head: HeadConfig) -> ModelConfig {
    ModelConfig::toy(head, 0)
}

fn img_model(input_dim: usize, classes: usize, hidden: Vec<usize>) -> ModelConfig {
    let activations = vec![Activation::Relu; hidden.len()];
    ModelConfig {
        input_dim,
        hidden,
        activations,
        classes,
        ..ModelConfig::toy(HeadConfig::Standard, 0)
    }
}

fn toy_base(kind: ExperimentKind) -> ExperimentConfig {
    let train = TrainConfig::sgd(200, 0.05, 0.9, 16, 0);
    ExperimentConfig {
        experiment: kind,
        seed: 0,
        repeats: 5,
        output_dir: PathBuf::from(format!("runs/{kind}")),
        dataset: DatasetSpec::toy2d(100, 0),
        model: toy_model(HeadConfig::Standard),
        train: train.clone(),
        eval: EvalSettings {
            model: img_model(2, 3, vec![40, 40]),
            train: train.clone(),
        },
        attack: AttackSettings {
            steps: 2500,
            lr: 0.05,
            loss: InversionLoss::NegLogProb,
            init: InitPolicy::SampleFromClass { class: 1 },
            per_class: 5,
            classes: vec![2],
            prior: PriorKind::None,
            prior_weight: 0.0,
            momentum: 0.0,
            clip: None,
        },
        variants: Vec::new(),
        sweep: SweepParams::default(),
        metrics: MetricSettings {
            kes: false,
            cross_model: false,
            surrogate: SurrogateConfig {
                model: toy_model(HeadConfig::Standard),
                train,
            },
            trace_window: 20,
        },
        grid: None,
    }
}

fn img_base(kind: ExperimentKind, classes: usize, dim: usize) -> ExperimentConfig {
    let train = TrainConfig::sgd(200, 0.01, 0.9, 16, 0);
    let mut cfg = toy_base(kind);
    cfg.dataset = DatasetSpec::synthimg(classes, 40, dim, 0.1, 0);
    cfg.model = img_model(dim, classes, vec![32, 32]);
    cfg.train = train.clone();
    cfg.eval = EvalSettings {
        model: img_model(dim, classes, vec![64, 64]),
        train: train.clone(),
    };
    cfg.attack = AttackSettings {
        steps: 500,
        lr: 0.05,
        loss: InversionLoss::NegLogProb,
        init: InitPolicy::RandomGaussian { mean: 0.5, std: 0.1 },
        per_class: 2,
        classes: Vec::new(),
        prior: PriorKind::None,
        prior_weight: 0.0,
        momentum: 0.0,
        clip: Some((0.0, 1.0)),
    };
    cfg.metrics.surrogate = SurrogateConfig {
        model: img_model(dim, classes, vec![32, 32]),
        train,
    };
    cfg
}

fn calor(rank: usize) -> Variant {
    Variant::new(
        "calor",
        HeadConfig::low_rank_tanh(rank),
        DefenseConfig::Calor {
            ca: CaConfig::default(),
            rank,
        },
    )
}

impl ExperimentConfig {
    /// Defaults for `kind`, before any user overrides.
    pub fn defaults(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Toy2dDefenseGrid => {
                let mut cfg = toy_base(kind);
                let low = |activation| HeadConfig::LowRank { rank: 1, activation };
                cfg.variants = vec![
                    Variant::new("no-defense", HeadConfig::Standard, DefenseConfig::None),
                    Variant {
                        activations: Some(vec![Activation::Relu, Activation::Tanh]),
                        ..Variant::new("tanh-only", HeadConfig::Standard, DefenseConfig::None)
                    },
                    Variant::new("low-rank", low(Activation::Identity), DefenseConfig::None),
                    Variant::new("low-rank+tanh", low(Activation::Tanh), DefenseConfig::None),
                    calor(1),
                ];
                cfg
            }
            ExperimentKind::RankSweep => {
                let mut cfg = img_base(kind, 10, 64);
                cfg.sweep.ranks = Some(vec![1, 2, 4, 8]);
                cfg.sweep.activations = Some(vec![Activation::Tanh]);
                cfg
            }
            ExperimentKind::ActivationSweep => {
                let mut cfg = img_base(kind, 10, 64);
                cfg.sweep.activations = Some(Activation::ALL.to_vec());
                cfg.sweep.head_rank = Some(4);
                cfg.attack.loss = InversionLoss::MaxMargin;
                cfg.attack.steps = 1000;
                cfg.attack.clip = None;
                cfg
            }
            ExperimentKind::ConfidenceSweep => {
                let mut cfg = img_base(kind, 32, 64);
                cfg.dataset.per_class = 20;
                cfg.sweep.checkpoints = Some(vec![1, 2, 3, 4, 6, 8, 12, 16, 24, 32]);
                cfg.train.epochs = 32;
                cfg.attack.steps = 50;
                cfg.attack.per_class = 1;
                cfg.variants = vec![Variant::new("ce", HeadConfig::Standard, DefenseConfig::None)];
                cfg
            }
            ExperimentKind::AeRankSweep => {
                let mut cfg = img_base(kind, 64, 256);
                cfg.sweep.ranks = Some(vec![2, 4, 8, 16, 32]);
                cfg.sweep.ae_hidden = Some(vec![128]);
                cfg.sweep.ae_train = Some(AeTrainConfig {
                    epochs: 50,
                    lr: 0.005,
                    batch_size: 32,
                    seed: 0,
                });
                cfg.repeats = 3;
                cfg
            }
            ExperimentKind::DefenseCompare => {
                let mut cfg = toy_base(kind);
                cfg.attack.classes = Vec::new();
                cfg.attack.init = InitPolicy::RandomGaussian { mean: 0.0, std: 1.0 };
                cfg.metrics.kes = true;
                cfg.variants = vec![
                    Variant::new("no-defense", HeadConfig::Standard, DefenseConfig::None),
                    calor(1),
                    Variant::new(
                        "ls",
                        HeadConfig::Standard,
                        DefenseConfig::LabelSmoothing { lambda: 0.1 },
                    ),
                    Variant::new(
                        "mid",
                        HeadConfig::Variational { latent: 4 },
                        DefenseConfig::Mid {
                            lambda: 0.01,
                            latent: 4,
                        },
                    ),
                    Variant::new(
                        "bido",
                        HeadConfig::Standard,
                        DefenseConfig::Bido {
                            lambda_iz: 0.01,
                            lambda_oz: 0.1,
                            taps: 3,
                            kernel_width: None,
                        },
                    ),
                    Variant::new(
                        "tl",
                        HeadConfig::Standard,
                        DefenseConfig::TransferLearning { freeze_ratio: 0.5 },
                    ),
                ];
                cfg
            }
            ExperimentKind::AdvProbe => {
                let mut cfg = toy_base(kind);
                cfg.sweep.adv = Some(AdvConfig::toy());
                cfg.variants = vec![
                    Variant::new("no-defense", HeadConfig::Standard, DefenseConfig::None),
                    calor(1),
                ];
                cfg
            }
            ExperimentKind::Calibration => {
                let mut cfg = toy_base(kind);
                cfg.repeats = 1;
                cfg.sweep.b_values = Some(vec![1.0, 2.0, 4.0, 8.0]);
                cfg.sweep.a = Some(1.0);
                cfg
            }
        }
    }

    /// Parses a config file, filling everything it leaves out from the
    /// experiment's defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let patch: Value = serde_json::from_str(text).map_err(|e| LabError::usage(format!("config: {e}")))?;
        Self::from_value(patch)
    }

    pub fn from_value(patch: Value) -> Result<Self> {
        let name = patch
            .get("experiment")
            .and_then(Value::as_str)
            .ok_or_else(|| LabError::usage("config: missing string field `experiment`"))?;
        let kind: ExperimentKind = name.parse()?;
        let mut merged = serde_json::to_value(Self::defaults(kind))?;
        merge(&mut merged, patch);
        let cfg: Self = serde_json::from_value(merged).map_err(|e| LabError::usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::usage(m));
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        self.dataset.validate().map_err(|e| LabError::usage(e.to_string()))?;
        if self.attack.per_class == 0 {
            return bad("attack.per_class must be at least 1".into());
        }
        if let Some(&c) = self.attack.classes.iter().find(|&&c| c >= self.dataset.classes) {
            return bad(format!("attack class {c} out of range"));
        }
        if self.metrics.trace_window == 0 {
            return bad("metrics.trace_window must be at least 1".into());
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("variant names must be unique".into());
        }
        for v in &self.variants {
            v.defense
                .validate()
                .map_err(|e| LabError::usage(format!("variant `{}`: {e}", v.name)))?;
        }
        if self.grid == Some(0) {
            return bad("grid must be positive".into());
        }
        Ok(())
    }

    /// The resolved config as pretty JSON.
    pub fn echo(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Recursive object merge; arrays and scalars in `patch` replace. A patch
/// object naming a different `kind` replaces the base object outright.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let kind_changed = matches!(
                (b.get("kind"), p.get("kind")),
                (Some(x), Some(y)) if x != y
            );
            if kind_changed {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}
