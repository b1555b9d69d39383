//! Minibatch training under the geometry-aware objective, the plain ERM
//! baseline, and evaluation.
//!
//! Each iteration samples a source and a target minibatch, looks up the
//! tangent charts of the batch anchors, splits each anchor's input gradient
//! into on- and off-manifold parts (target points use the entropy of the
//! prediction as their loss), builds the perturbed points and takes one
//! gradient-descent step on the weighted total loss.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradcore::Matrix;
use crate::losses::{Bandwidth, LossBreakdown, LossWeights, Objective, Regularizers};
use crate::manifold::{build_graph, tangent_basis, NeighborGraph, TangentChart};
use crate::model::{self, init_mlp, input_gradients, InputLoss, ModelParams};
use crate::perturb::{perturb_point, DEFAULT_NORM_FLOOR};
use crate::rng::{rng_for, Stream};

/// Hyperparameters of one training run. Field names are the JSON schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub layer_sizes: Vec<usize>,
    /// On-manifold step size.
    pub alpha: f64,
    /// Off-manifold step size.
    pub beta: f64,
    pub weights: LossWeights,
    /// Neighbors per tangent chart.
    pub k: usize,
    /// Tangent dimension.
    pub m: usize,
    /// Charts are rebuilt at the start of every `chart_refresh_every`-th epoch.
    pub chart_refresh_every: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub norm_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![2, 64, 64, 2],
            alpha: 0.1,
            beta: 0.1,
            weights: LossWeights::default(),
            k: 10,
            m: 1,
            chart_refresh_every: 1,
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            norm_floor: DEFAULT_NORM_FLOOR,
        }
    }
}

impl TrainConfig {
    /// The same run with every regularizer and perturbation switched off.
    pub fn erm_baseline(&self) -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            weights: LossWeights::ZERO,
            ..self.clone()
        }
    }

    /// Checks every field invariant; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return bad("layer_sizes", format!("need >= 2 positive sizes, got {:?}", self.layer_sizes));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", format!("must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta", format!("must be finite and >= 0, got {}", self.beta));
        }
        self.weights.validate()?;
        if self.m < 1 {
            return bad("m", "must be >= 1".into());
        }
        if self.k < self.m {
            return bad("k", format!("must be >= m = {}, got {}", self.m, self.k));
        }
        if self.chart_refresh_every < 1 {
            return bad("chart_refresh_every", "must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be > 0, got {}", self.learning_rate));
        }
        if self.epochs < 1 {
            return bad("epochs", "must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be >= 1".into());
        }
        if !(self.norm_floor >= 0.0 && self.norm_floor.is_finite()) {
            return bad("norm_floor", format!("must be finite and >= 0, got {}", self.norm_floor));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-averaged term values for the epoch.
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub source_accuracy: f64,
    /// Present only when the target set carries labels (used for
    /// evaluation, never for training).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_accuracy: Option<f64>,
    /// Seconds since the start of training.
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

impl MetricsLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Bitwise comparison of every deterministic field; wall-clock time is
    /// the only field excluded.
    pub fn same_metrics(&self, other: &MetricsLog) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                let bits = |r: &EpochRecord| {
                    [
                        r.loss.l_src,
                        r.loss.l_adv,
                        r.loss.l_cons,
                        r.loss.l_align,
                        r.loss.l_total,
                        r.source_accuracy,
                        r.target_accuracy.unwrap_or(f64::NAN),
                    ]
                    .map(f64::to_bits)
                };
                a.epoch == b.epoch
                    && a.target_accuracy.is_some() == b.target_accuracy.is_some()
                    && bits(a) == bits(b)
            })
    }
}

/// Accuracy (argmax, ties to the lowest class) and mean cross-entropy.
pub fn evaluate(params: &ModelParams, ds: &Dataset) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Data(format!("dataset `{}` is empty", ds.name)));
    }
    let labels = ds.labels()?;
    let p = model::predict_proba(params, &ds.x)?;
    let correct = (0..ds.len())
        .filter(|&i| argmax(p.row(i)) == labels[i])
        .count();
    let loss = model::cross_entropy(params, &ds.x, &labels)?;
    Ok((correct as f64 / ds.len() as f64, loss))
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Tangent charts of one cloud, computed on demand and dropped on refresh.
pub(crate) struct ChartCache<'a> {
    x: &'a Matrix,
    graph: NeighborGraph,
    m: usize,
    charts: Vec<Option<TangentChart>>,
}

impl<'a> ChartCache<'a> {
    pub(crate) fn new(x: &'a Matrix, k: usize, m: usize) -> Result<Self> {
        if m > x.cols() {
            return Err(Error::Config(format!("m: tangent dimension {m} exceeds input dimension {}", x.cols())));
        }
        let graph = build_graph(x, k)?;
        Ok(Self {
            x,
            graph,
            m,
            charts: vec![None; x.rows()],
        })
    }

    pub(crate) fn refresh(&mut self) {
        self.charts.iter_mut().for_each(|c| *c = None);
    }

    pub(crate) fn chart(&mut self, i: usize) -> Result<&TangentChart> {
        if self.charts[i].is_none() {
            self.charts[i] = Some(tangent_basis(self.x, &self.graph, i, self.m)?);
        }
        Ok(self.charts[i].as_ref().expect("just filled"))
    }
}

/// Perturbed copies of a batch: rows of `x_on` and `x_off`.
pub(crate) fn perturb_batch(
    cache: &mut ChartCache<'_>,
    idx: &[usize],
    x: &Matrix,
    grads: &Matrix,
    alpha: f64,
    beta: f64,
    norm_floor: f64,
) -> Result<(Matrix, Matrix)> {
    let mut on = Matrix::zeros(x.rows(), x.cols());
    let mut off = Matrix::zeros(x.rows(), x.cols());
    for (r, &i) in idx.iter().enumerate() {
        let chart = cache.chart(i)?;
        let pair = perturb_point(x.row(r), grads.row(r), chart, alpha, beta, norm_floor)?;
        on.row_mut(r).copy_from_slice(&pair.x_on);
        off.row_mut(r).copy_from_slice(&pair.x_off);
    }
    Ok((on, off))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Maada,
    Erm,
}

/// Trains with the full objective. `target` labels, if any, are used only
/// to report target accuracy.
pub fn train(config: &TrainConfig, source: &Dataset, target: &Dataset) -> Result<(ModelParams, MetricsLog)> {
    run(config, source, Some(target), Mode::Maada)
}

/// Source cross-entropy only. Uses the same initialization and source
/// batch order as [`train`] for the same seed.
pub fn train_erm(config: &TrainConfig, source: &Dataset) -> Result<(ModelParams, MetricsLog)> {
    run(config, source, None, Mode::Erm)
}

fn shuffled(n: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { term } => Error::Training { epoch, term },
        other => other,
    }
}

fn run(config: &TrainConfig, source: &Dataset, target: Option<&Dataset>, mode: Mode) -> Result<(ModelParams, MetricsLog)> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::Data("source dataset is empty".into()));
    }
    let src_labels = source.labels()?;
    if source.dim() != config.layer_sizes[0] {
        return Err(Error::Config(format!(
            "layer_sizes: input size {} does not match source dimension {}",
            config.layer_sizes[0],
            source.dim()
        )));
    }
    let n_classes = *config.layer_sizes.last().expect("validated");
    if let Some(&bad) = src_labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Data(format!("source label {bad} outside [0, {n_classes})")));
    }
    if let Some(t) = target {
        if t.dim() != source.dim() {
            return Err(Error::Config(format!(
                "target dimension {} does not match source dimension {}",
                t.dim(),
                source.dim()
            )));
        }
        if t.is_empty() {
            return Err(Error::Data("target dataset is empty".into()));
        }
    }

    let mut params = init_mlp(&config.layer_sizes, config.seed)?;
    let mut src_rng = rng_for(config.seed, Stream::SourceBatches);
    let mut tgt_rng = rng_for(config.seed, Stream::TargetBatches);

    let (mut src_cache, mut tgt_cache) = match (mode, target) {
        (Mode::Maada, Some(t)) => (
            Some(ChartCache::new(&source.x, config.k, config.m)?),
            Some(ChartCache::new(&t.x, config.k, config.m)?),
        ),
        _ => (None, None),
    };
    let eval_target = target.filter(|t| t.is_fully_labeled());

    let n = source.len();
    let bs = config.batch_size.min(n);
    let start = Instant::now();
    let mut log = MetricsLog::default();

    for epoch in 0..config.epochs {
        if epoch % config.chart_refresh_every == 0 {
            if let Some(c) = src_cache.as_mut() {
                c.refresh();
            }
            if let Some(c) = tgt_cache.as_mut() {
                c.refresh();
            }
        }
        let order = shuffled(n, &mut src_rng);
        let tgt_order = match (mode, target) {
            (Mode::Maada, Some(t)) => shuffled(t.len(), &mut tgt_rng),
            _ => Vec::new(),
        };

        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(bs).enumerate() {
            let xs = source.x.select_rows(chunk);
            let ys: Vec<usize> = chunk.iter().map(|&i| src_labels[i]).collect();

            let (breakdown, grads) = match (mode, target, src_cache.as_mut(), tgt_cache.as_mut()) {
                (Mode::Maada, Some(t), Some(sc), Some(tc)) => {
                    let nt = t.len();
                    let tb = bs.min(nt);
                    let tidx: Vec<usize> = (0..tb).map(|j| tgt_order[(b * tb + j) % nt]).collect();
                    let xt = t.x.select_rows(&tidx);

                    let gs = input_gradients(&params, &xs, InputLoss::Labels(&ys))?;
                    let gt = input_gradients(&params, &xt, InputLoss::Entropy)?;
                    let (xs_on, xs_off) =
                        perturb_batch(sc, chunk, &xs, &gs, config.alpha, config.beta, config.norm_floor)?;
                    let (xt_on, _) =
                        perturb_batch(tc, &tidx, &xt, &gt, config.alpha, config.beta, config.norm_floor)?;
                    let obj = Objective {
                        source_x: &xs,
                        source_y: &ys,
                        regularizers: Some(Regularizers {
                            source_off: &xs_off,
                            source_on: &xs_on,
                            target_x: &xt,
                            target_on: &xt_on,
                            weights: config.weights,
                            bandwidth: Bandwidth::Median,
                        }),
                    };
                    model::param_gradient(&params, &obj).map_err(|e| with_epoch(e, epoch))?
                }
                _ => {
                    let obj = Objective {
                        source_x: &xs,
                        source_y: &ys,
                        regularizers: None,
                    };
                    model::param_gradient(&params, &obj).map_err(|e| with_epoch(e, epoch))?
                }
            };
            params.axpy(-config.learning_rate, &grads);
            if !params.is_finite() {
                return Err(Error::Training {
                    epoch,
                    term: "parameters".into(),
                });
            }
            sum.l_src += breakdown.l_src;
            sum.l_adv += breakdown.l_adv;
            sum.l_cons += breakdown.l_cons;
            sum.l_align += breakdown.l_align;
            sum.l_total += breakdown.l_total;
            batches += 1;
        }

        let nb = batches as f64;
        let loss = LossBreakdown {
            l_src: sum.l_src / nb,
            l_adv: sum.l_adv / nb,
            l_cons: sum.l_cons / nb,
            l_align: sum.l_align / nb,
            l_total: sum.l_total / nb,
        };
        if !loss.l_total.is_finite() {
            return Err(Error::Training {
                epoch,
                term: "l_total".into(),
            });
        }
        let (source_accuracy, _) = evaluate(&params, source)?;
        let target_accuracy = match eval_target {
            Some(t) => Some(evaluate(&params, t)?.0),
            None => None,
        };
        log.records.push(EpochRecord {
            epoch,
            loss,
            source_accuracy,
            target_accuracy,
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_two_moons, rotate, Domain};

    fn small_config() -> TrainConfig {
        TrainConfig {
            layer_sizes: vec![2, 8, 2],
            epochs: 3,
            batch_size: 16,
            k: 5,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation_names_field() {
        let c = TrainConfig { alpha: -1.0, ..Default::default() };
        assert!(c.validate().unwrap_err().to_string().contains("alpha"));
        let c = TrainConfig { k: 0, ..Default::default() };
        assert!(c.validate().unwrap_err().to_string().contains('k'));
        let c = TrainConfig { epochs: 0, ..Default::default() };
        assert!(c.validate().unwrap_err().to_string().contains("epochs"));
        let c = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(c.validate().unwrap_err().to_string().contains("learning_rate"));
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let r: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"alpha": 0.1, "gamma": 2}"#);
        assert!(r.unwrap_err().to_string().contains("gamma"));
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 5}"#).unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.k, 10);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn zero_net_on_balanced_set_is_half_right() {
        let ds = gen_two_moons(40, 0.1, 0).unwrap();
        let m = init_mlp(&[2, 4, 2], 0).unwrap().zeros_like();
        let (acc, loss) = evaluate(&m, &ds).unwrap();
        assert_eq!(acc, 0.5);
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_hand_counted_fixture() {
        // Single linear layer scoring class 1 iff x0 > 0.
        let mut m = init_mlp(&[1, 2], 0).unwrap().zeros_like();
        m.layers_mut()[0].weight = Matrix::from_rows(&[[-1.0, 1.0]]);
        let xs = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0, -3.0, 0.1];
        let ys = [0, 0, 1, 0, 1, 1, 0, 1, 0, 0];
        // predictions: 0 0 0 0(tie) 1 1 1 1 0 1 -> correct at 0,1,3,4,5,7,8 = 7
        let ds = Dataset::new(
            Matrix::col_vector(&xs),
            ys.to_vec(),
            vec![Domain::Source; 10],
            "fixture",
        )
        .unwrap();
        assert_eq!(evaluate(&m, &ds).unwrap().0, 0.7);
    }

    #[test]
    fn evaluate_rejects_unlabeled() {
        let ds = gen_two_moons(10, 0.1, 0).unwrap().without_labels();
        let m = init_mlp(&[2, 2], 0).unwrap();
        assert!(matches!(evaluate(&m, &ds), Err(Error::Data(_))));
    }

    #[test]
    fn metrics_has_one_record_per_epoch() {
        let s = gen_two_moons(60, 0.1, 1).unwrap();
        let t = rotate(&gen_two_moons(60, 0.1, 2).unwrap(), 0.5, Some(Domain::Target), false).unwrap();
        let (_, log) = train(&small_config(), &s, &t).unwrap();
        assert_eq!(log.records.len(), 3);
        assert!(log.records.iter().all(|r| r.loss.l_total.is_finite() && r.target_accuracy.is_some()));
        let jsonl = log.to_jsonl();
        assert_eq!(jsonl.lines().count(), 3);
        let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
        for key in ["epoch", "l_src", "l_adv", "l_cons", "l_align", "l_total", "source_accuracy", "wall_clock_s"] {
            assert!(first.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn unlabeled_target_has_no_target_accuracy() {
        let s = gen_two_moons(40, 0.1, 1).unwrap();
        let t = rotate(&s, 0.3, Some(Domain::Target), true).unwrap();
        let (_, log) = train(&small_config(), &s, &t).unwrap();
        assert!(log.records.iter().all(|r| r.target_accuracy.is_none()));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let s = gen_two_moons(40, 0.1, 1).unwrap();
        let t = Dataset::new(Matrix::zeros(20, 3), vec![-1; 20], vec![Domain::Target; 20], "t").unwrap();
        assert!(matches!(train(&small_config(), &s, &t), Err(Error::Config(_))));
    }

    #[test]
    fn divergent_learning_rate_aborts_with_epoch() {
        let s = gen_two_moons(40, 0.1, 1).unwrap();
        let t = rotate(&s, 0.3, Some(Domain::Target), true).unwrap();
        let c = TrainConfig {
            learning_rate: 1e200,
            ..small_config()
        };
        match train(&c, &s, &t) {
            Err(Error::Training { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected a training error, got {other:?}"),
        }
    }
}
