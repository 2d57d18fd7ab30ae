use std::collections::BTreeMap;

use invlab_core::attack::{invert_batch, mean_grad_trace, reconstructions, AttackResult};
use invlab_core::data::{generate, DatasetSplit};
use invlab_core::defense::{train, DefenseConfig, TrainConfig, TrainReport};
use invlab_core::metrics::{
    feature_distance, head_nullity, head_rank, kes, mean_confidence, nearest_mean, secondary_k, smooth_normalize_trace,
    topk_accuracy, EvalModel, MetricRow,
};
use invlab_core::nn::{build_classifier, ModelConfig};
use invlab_core::seed::derive_seed;
use invlab_core::{Classifier, Tensor64};

use crate::config::{ExperimentConfig, Variant};
use crate::error::{Result, VariantContext};
use crate::report::{finite, RunRecord, RunSeeds, Table};

/// Data and scoring models shared by every variant of one repeat.
pub(crate) struct RepeatData {
    pub repeat: usize,
    pub data_seed: u64,
    pub eval_seed: u64,
    pub data: DatasetSplit<f64>,
    pub eval: Option<EvalModel<f64>>,
    /// Second, independently seeded eval model for cross-model distances.
    pub eval_cross: Option<EvalModel<f64>>,
}

pub(crate) fn variant_seed(cfg: &ExperimentConfig, variant: &str, repeat: usize) -> u64 {
    derive_seed(cfg.seed, variant, repeat as u64)
}

pub(crate) fn run_seeds(cfg: &ExperimentConfig, rd: &RepeatData, variant: &str) -> RunSeeds {
    let model = variant_seed(cfg, variant, rd.repeat);
    RunSeeds {
        data: rd.data_seed,
        model,
        train: derive_seed(model, "train", 0),
        attack: derive_seed(cfg.seed, "attack", rd.repeat as u64),
        eval: rd.eval_seed,
    }
}

/// Generates the repeat's dataset and, when asked, trains the eval models.
pub(crate) fn prepare_repeat(
    cfg: &ExperimentConfig,
    variants: &[Variant],
    repeat: usize,
    with_eval: bool,
) -> Result<RepeatData> {
    let r = repeat as u64;
    let data_seed = derive_seed(cfg.seed, "data", r);
    let eval_seed = derive_seed(cfg.seed, "eval", r);
    let spec = invlab_core::data::DatasetSpec {
        seed: data_seed,
        ..cfg.dataset.clone()
    };
    let data = generate::<f64>(&spec)?;
    let target_seeds: Vec<u64> = variants.iter().map(|v| variant_seed(cfg, &v.name, repeat)).collect();
    let train_eval = |seed: u64| -> Result<EvalModel<f64>> {
        let mc = ModelConfig {
            input_dim: data.train.dim(),
            classes: data.train.classes,
            seed,
            ..cfg.eval.model.clone()
        };
        let tc = TrainConfig {
            seed: derive_seed(seed, "train", 0),
            ..cfg.eval.train.clone()
        };
        Ok(EvalModel::train(&data.train, &mc, &tc, &target_seeds)
            .in_variant("eval")?
            .0)
    };
    let eval = if with_eval { Some(train_eval(eval_seed)?) } else { None };
    let eval_cross = if with_eval && cfg.metrics.cross_model {
        Some(train_eval(derive_seed(cfg.seed, "eval-cross", r))?)
    } else {
        None
    };
    Ok(RepeatData {
        repeat,
        data_seed,
        eval_seed,
        data,
        eval,
        eval_cross,
    })
}

pub(crate) fn model_config(cfg: &ExperimentConfig, variant: &Variant, rd: &RepeatData, seed: u64) -> ModelConfig {
    let mut mc = ModelConfig {
        input_dim: rd.data.train.dim(),
        classes: rd.data.train.classes,
        head: variant.defense.head_config(variant.head),
        seed,
        ..cfg.model.clone()
    };
    if let Some(acts) = &variant.activations {
        mc.activations = acts.clone();
    }
    mc
}

/// Builds and trains the variant's model. Transfer learning first fits the
/// whole network on a public draw of the same distribution.
pub(crate) fn train_variant(
    cfg: &ExperimentConfig,
    variant: &Variant,
    rd: &RepeatData,
    seeds: &RunSeeds,
) -> Result<(Classifier, TrainReport)> {
    let name = variant.name.as_str();
    let mc = model_config(cfg, variant, rd, seeds.model);
    let mut model = build_classifier::<f64>(&mc).in_variant(name)?;
    let tc = TrainConfig {
        seed: seeds.train,
        ..cfg.train.clone()
    };
    if let DefenseConfig::TransferLearning { .. } = variant.defense {
        let spec = invlab_core::data::DatasetSpec {
            seed: derive_seed(seeds.model, "public", 0),
            ..cfg.dataset.clone()
        };
        let public = generate::<f64>(&spec).in_variant(name)?;
        let pre = TrainConfig {
            seed: derive_seed(seeds.model, "pretrain", 0),
            ..tc.clone()
        };
        train(&mut model, &public.train, None, &DefenseConfig::None, &pre).in_variant(name)?;
    }
    let report = train(&mut model, &rd.data.train, Some(&rd.data.test), &variant.defense, &tc).in_variant(name)?;
    Ok((model, report))
}

/// Finite-only extras map.
#[derive(Default)]
pub(crate) struct Extras(BTreeMap<String, f64>);

impl Extras {
    pub fn put(&mut self, key: &str, value: f64) -> &mut Self {
        if value.is_finite() {
            self.0.insert(key.to_string(), value);
        }
        self
    }

    pub fn into_map(self) -> BTreeMap<String, f64> {
        self.0
    }
}

pub(crate) fn file_stem(variant: &str) -> String {
    variant
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Batch-mean confidence and gradient-norm traces with the smoothed,
/// normalized gradient column.
pub(crate) fn trace_table(file: String, results: &[AttackResult], window: usize) -> (Table, Option<f64>) {
    let grad = mean_grad_trace(results);
    let steps = grad.len();
    let conf: Vec<f64> = (0..steps)
        .map(|i| results.iter().map(|r| r.confidence_trace[i]).sum::<f64>() / results.len() as f64)
        .collect();
    let smoothed = smooth_normalize_trace(&grad, window).ok();
    let terminal = smoothed.as_ref().and_then(|s| s.last().copied()).and_then(finite);
    let rows = (0..steps)
        .map(|i| vec![i as f64, conf[i], grad[i], smoothed.as_ref().map_or(f64::NAN, |s| s[i])])
        .collect();
    let table = Table {
        file,
        header: ["step", "confidence", "grad_norm", "grad_norm_smoothed"]
            .map(String::from)
            .to_vec(),
        rows,
    };
    (table, terminal)
}

/// Attacks `model`, scores the reconstructions and returns the run record
/// together with its trace table.
pub(crate) fn attack_and_score(
    cfg: &ExperimentConfig,
    rd: &RepeatData,
    variant: &str,
    seeds: RunSeeds,
    model: &Classifier,
    extras: Extras,
) -> Result<(RunRecord, Table)> {
    let train_set = &rd.data.train;
    let classes = cfg.attack.attacked_classes(model.classes());
    let inv = cfg.attack.inversion(seeds.attack);
    let results = invert_batch(model, &classes, cfg.attack.per_class, &inv, Some(train_set)).in_variant(variant)?;
    let recons: Tensor64 = reconstructions(&results).in_variant(variant)?;
    let targets: Vec<usize> = results.iter().map(|r| r.target).collect();

    let mut extras = extras;
    let n = model.classes();
    let k = secondary_k(n);
    let mut row = MetricRow {
        k: Some(k),
        mean_confidence: finite(mean_confidence(model, train_set).in_variant(variant)?),
        ..MetricRow::new(variant, model.accuracy(&rd.data.test.features, &rd.data.test.labels)?)
    };
    if let Some(eval) = &rd.eval {
        row.acc_at_1 = Some(topk_accuracy(eval, &recons, &targets, 1).in_variant(variant)?);
        row.acc_at_k = Some(topk_accuracy(eval, &recons, &targets, k).in_variant(variant)?);
        row.delta_eval = finite(feature_distance(eval, &recons, train_set).in_variant(variant)?);
    }
    if let Some(eval) = &rd.eval_cross {
        extras.put(
            "delta_eval_cross",
            feature_distance(eval, &recons, train_set).in_variant(variant)?,
        );
    }
    if cfg.metrics.kes {
        let seed = derive_seed(rd.eval_seed, "kes", 0);
        let score = kes(&recons, &targets, &classes, train_set, &cfg.metrics.surrogate, seed).in_variant(variant)?;
        row.kes = Some(score);
    }

    // input-space distance of each reconstruction to its own class
    let mut dist = 0.0;
    for (r, &t) in results.iter().zip(&targets) {
        let own = train_set.restrict(&[t]);
        let one = Tensor64::new(vec![1, r.reconstruction.len()], r.reconstruction.clone())?;
        dist += nearest_mean(&one, &own.features)?;
    }
    extras
        .put("input_distance", dist / results.len() as f64)
        .put(
            "final_confidence",
            results.iter().map(|r| r.final_confidence).sum::<f64>() / results.len() as f64,
        )
        .put("head_rank", head_rank(model) as f64)
        .put("head_nullity", head_nullity(model) as f64);

    let file = format!("traces/{}__r{}.csv", file_stem(variant), rd.repeat);
    let (table, terminal) = trace_table(file.clone(), &results, cfg.metrics.trace_window);
    row.terminal_grad_norm = terminal;
    let record = RunRecord {
        variant: variant.to_string(),
        repeat: rd.repeat,
        seeds,
        row: Some(row),
        extras: extras.into_map(),
        trace_file: Some(file),
    };
    Ok((record, table))
}

/// Class probabilities over a `side × side` lattice covering the data.
pub(crate) fn confidence_grid(model: &Classifier, rd: &RepeatData, variant: &str, side: usize) -> Result<Table> {
    let x = &rd.data.train.features;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..x.rows() {
        for j in 0..2 {
            lo[j] = lo[j].min(x.get(i, j));
            hi[j] = hi[j].max(x.get(i, j));
        }
    }
    let step = |j: usize, i: usize| {
        let (a, b) = (lo[j] - 1.0, hi[j] + 1.0);
        if side == 1 {
            0.5 * (a + b)
        } else {
            a + (b - a) * i as f64 / (side - 1) as f64
        }
    };
    let mut pts = Vec::with_capacity(side * side * 2);
    for iy in 0..side {
        for ix in 0..side {
            pts.push(step(0, ix));
            pts.push(step(1, iy));
        }
    }
    let grid = Tensor64::new(vec![side * side, 2], pts)?;
    let p = model.probs(&grid).in_variant(variant)?;
    let n = model.classes();
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend((0..n).map(|c| format!("p{c}")));
    let rows = (0..side * side)
        .map(|i| {
            let mut r = grid.row(i).to_vec();
            r.extend_from_slice(p.row(i));
            r
        })
        .collect();
    Ok(Table {
        file: format!("grid/{}__r{}.csv", file_stem(variant), rd.repeat),
        header,
        rows,
    })
}
