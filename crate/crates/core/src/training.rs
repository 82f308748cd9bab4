//! Mini-batch SGD with cosine-restart learning rate and target estimation.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::diagnostics::{
    correction_accuracy, gradient_dominance, masked_mean_std, memorization_fractions, MetricsRecord,
};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossParams, DEFAULT_EPS, DEFAULT_LOG_ZERO};
use crate::model::{GradientSet, NetDims, TwoBranchNet};
use crate::numerics::{argmax, Matrix, SeededRng};

/// Confidence values handed to the objectives are kept this far from 0 and 1.
const TAU_MARGIN: f64 = 1e-12;

/// Switches that remove one component of the method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Force the reverse-term weight to zero.
    pub no_rcace: bool,
    /// Keep targets at the observed one-hot labels.
    pub no_target_est: bool,
    /// Drop the indicator head; confidence becomes `max_j p_j`.
    pub no_indicator: bool,
    /// Block the indicator gradient from reaching the backbone.
    pub stop_ind_backbone_grad: bool,
}

/// Every key is required in JSON except `eps`, `cosine_gate` and `ablations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// Backbone widths; each layer is followed by ReLU.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Cosine restart period in epochs.
    pub period: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub beta: f64,
    /// Value substituted for `ln 0` in the reverse term.
    pub log_zero: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// First epoch at which targets may move.
    pub target_start: usize,
    /// Momentum of the target moving average.
    pub alpha: f64,
    /// Minimum confidence for a sample's target to move.
    pub delta: f64,
    /// Restrict target updates to epochs that close a cosine period.
    #[serde(default = "default_true")]
    pub cosine_gate: bool,
    #[serde(default)]
    pub ablations: Ablations,
    pub seed: u64,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Car,
            hidden: vec![64, 64],
            epochs: 100,
            batch_size: 32,
            lr_max: 0.02,
            lr_min: 0.001,
            period: 10,
            momentum: 0.9,
            weight_decay: 0.001,
            lambda: 0.5,
            beta: 0.0,
            log_zero: DEFAULT_LOG_ZERO,
            eps: DEFAULT_EPS,
            target_start: 60,
            alpha: 0.9,
            delta: 0.0,
            cosine_gate: true,
            ablations: Ablations::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.period == 0 {
            return bad("period must be positive".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad(format!(
                "need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1], got {}", self.delta));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if let LossKind::Baseline(b) = &self.loss {
            b.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.loss_params().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            lambda: self.lambda,
            beta: if self.ablations.no_rcace { 0.0 } else { self.beta },
            log_zero: self.log_zero,
            eps: self.eps,
        }
    }

    pub fn net_dims(&self, input: usize, classes: usize) -> NetDims {
        NetDims {
            input,
            hidden: self.hidden.clone(),
            classes,
            indicator: !self.ablations.no_indicator,
        }
    }

    /// Learning rate for a 0-based epoch index.
    pub fn lr(&self, epoch_index: usize) -> f64 {
        cosine_lr(epoch_index, self.lr_max, self.lr_min, self.period)
    }

    /// Whether targets may move during 1-based `epoch` for a sample with confidence `tau`.
    pub fn target_gate(&self, epoch: usize, tau: f64) -> bool {
        !self.ablations.no_target_est
            && epoch >= self.target_start
            && tau >= self.delta
            && (!self.cosine_gate || epoch % self.period == 0)
    }
}

/// Cosine annealing with warm restarts every `period` epochs.
pub fn cosine_lr(epoch_index: usize, lr_max: f64, lr_min: f64, period: usize) -> f64 {
    let phase = (epoch_index % period) as f64 / period as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * phase).cos())
}

/// Per-sample soft targets, one simplex row per training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTable {
    rows: Matrix,
}

impl TargetTable {
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        let mut rows = Matrix::zeros(labels.len(), k);
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
            }
            rows.set(i, y, 1.0);
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.rows
    }

    /// `t_i <- alpha * t_i + (1 - alpha) * p`.
    pub fn blend(&mut self, i: usize, p: &[f64], alpha: f64) -> Result<()> {
        if i >= self.len() {
            return Err(Error::invalid(format!(
                "sample index {i} out of range for {} targets",
                self.len()
            )));
        }
        if p.len() != self.num_classes() {
            return Err(Error::shape("TargetTable::blend", self.num_classes(), p.len()));
        }
        for (t, &q) in self.rows.row_mut(i).iter_mut().zip(p) {
            *t = alpha * *t + (1.0 - alpha) * q;
        }
        Ok(())
    }

    /// Moves the rows of `indices` toward the batch predictions wherever
    /// the gate allows. Returns how many rows moved.
    pub fn update(
        &mut self,
        indices: &[usize],
        probs: &Matrix,
        tau: &[f64],
        epoch: usize,
        cfg: &TrainConfig,
    ) -> Result<usize> {
        if probs.rows() != indices.len() || tau.len() != indices.len() {
            return Err(Error::shape("TargetTable::update", indices.len(), probs.rows()));
        }
        let mut moved = 0;
        for (b, &i) in indices.iter().enumerate() {
            if cfg.target_gate(epoch, tau[b]) {
                self.blend(i, probs.row(b), cfg.alpha)?;
                moved += 1;
            }
        }
        Ok(moved)
    }
}

/// SGD momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    velocity: GradientSet,
}

impl OptState {
    pub fn new(net: &TwoBranchNet) -> Self {
        Self {
            velocity: net.layers.zeros_like(),
        }
    }
}

/// `v <- m v + g + wd θ`, then `θ <- θ - lr v`.
pub fn sgd_step(
    net: &mut TwoBranchNet,
    grads: &GradientSet,
    state: &mut OptState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !net.layers.same_shape(grads) || !net.layers.same_shape(&state.velocity) {
        return Err(Error::invalid("gradient shapes do not match the network"));
    }
    let params = net.layers.slices_mut();
    let vels = state.velocity.slices_mut();
    for ((theta, v), g) in params.into_iter().zip(vels).zip(grads.slices()) {
        for ((t, v), g) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = momentum * *v + g + weight_decay * *t;
            *t -= lr * *v;
        }
    }
    if !net.layers.is_finite() {
        return Err(Error::NonFinite("parameters after SGD step"));
    }
    Ok(())
}

fn clamp_tau(tau: f64) -> f64 {
    tau.clamp(TAU_MARGIN, 1.0 - TAU_MARGIN)
}

/// Per-sample objective values and gradients for a forward pass.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub values: Vec<f64>,
    pub d_logits: Matrix,
    pub d_tau: Vec<f64>,
}

impl BatchLoss {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

pub fn batch_loss(
    loss: &LossKind,
    params: &LossParams,
    probs: &Matrix,
    tau: &[f64],
    targets: &Matrix,
    labels: &[usize],
) -> Result<BatchLoss> {
    let (b, k) = probs.shape();
    if targets.shape() != (b, k) || tau.len() != b || labels.len() != b {
        return Err(Error::shape(
            "batch_loss",
            format!("{b}x{k}"),
            format!("{:?}", targets.shape()),
        ));
    }
    let mut values = Vec::with_capacity(b);
    let mut d_logits = Matrix::zeros(b, k);
    let mut d_tau = Vec::with_capacity(b);
    for i in 0..b {
        let g = loss.evaluate(probs.row(i), clamp_tau(tau[i]), targets.row(i), labels[i], params)?;
        values.push(g.value);
        d_logits.row_mut(i).copy_from_slice(&g.d_logits);
        d_tau.push(g.d_tau);
    }
    Ok(BatchLoss {
        values,
        d_logits,
        d_tau,
    })
}

/// Held-out split scored at every epoch.
pub struct EvalSet<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
}

pub fn accuracy(net: &TwoBranchNet, features: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let preds = predict(net, features)?;
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn predict(net: &TwoBranchNet, features: &Matrix) -> Result<Vec<usize>> {
    let cache = net.forward(features)?;
    Ok(cache.probs.row_iter().map(argmax).collect())
}

pub struct TrainOutcome {
    pub net: TwoBranchNet,
    pub targets: TargetTable,
    pub metrics: Vec<MetricsRecord>,
}

/// Runs the full training loop. Epochs are numbered from 1; the learning
/// rate of epoch `e` is the cosine value at index `e - 1`, so with the
/// restart gate targets move during the last, low-rate epoch of each period.
pub fn train(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    test: Option<EvalSet<'_>>,
    mut on_epoch: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.num_classes < 2 {
        return Err(Error::invalid("training needs at least 2 classes"));
    }
    let mut net = TwoBranchNet::init(cfg.net_dims(ds.dim(), ds.num_classes), cfg.seed)?;
    net.stop_indicator_grad = cfg.ablations.stop_ind_backbone_grad;
    let params = cfg.loss_params();
    let labels = ds.observed_labels().to_vec();
    let clean_mask = ds.clean_mask();
    let mut targets = TargetTable::from_labels(&labels, ds.num_classes)?;
    let mut opt = OptState::new(&net);
    let mut rng = SeededRng::stream(cfg.seed, 1);
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr(epoch - 1);
        let order = rng.shuffle(ds.len());
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let cache = net.forward(&ds.features.select_rows(idx))?;
            targets.update(idx, &cache.probs, &cache.tau, epoch, cfg)?;
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let bl = batch_loss(
                &cfg.loss,
                &params,
                &cache.probs,
                &cache.tau,
                &targets.as_matrix().select_rows(idx),
                &batch_labels,
            )?;
            loss_sum += bl.values.iter().sum::<f64>();
            let grads = net.backward(&cache, &bl.d_logits, &bl.d_tau)?;
            sgd_step(&mut net, &grads, &mut opt, lr, cfg.momentum, cfg.weight_decay)?;
        }

        let record = epoch_record(
            &net,
            ds,
            &labels,
            &clean_mask,
            &targets,
            cfg,
            &params,
            epoch,
            lr,
            loss_sum / ds.len().max(1) as f64,
            test.as_ref(),
        )?;
        on_epoch(&record);
        metrics.push(record);
    }
    Ok(TrainOutcome { net, targets, metrics })
}

#[allow(clippy::too_many_arguments)]
fn epoch_record(
    net: &TwoBranchNet,
    ds: &LabeledDataset,
    labels: &[usize],
    clean_mask: &[bool],
    targets: &TargetTable,
    cfg: &TrainConfig,
    params: &LossParams,
    epoch: usize,
    lr: f64,
    train_loss: f64,
    test: Option<&EvalSet<'_>>,
) -> Result<MetricsRecord> {
    let cache = net.forward(&ds.features)?;
    let preds: Vec<usize> = cache.probs.row_iter().map(argmax).collect();
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    let memo = memorization_fractions(&preds, &ds.clean_labels, labels)?;
    let bl = batch_loss(&cfg.loss, params, &cache.probs, &cache.tau, targets.as_matrix(), labels)?;
    let dom = gradient_dominance(&bl.d_logits, clean_mask)?;
    let tau_clean = masked_mean_std(&cache.tau, clean_mask, true);
    let tau_false = masked_mean_std(&cache.tau, clean_mask, false);
    Ok(MetricsRecord {
        epoch,
        lr,
        train_loss,
        train_accuracy: hits as f64 / ds.len().max(1) as f64,
        test_accuracy: test.map(|t| accuracy(net, t.features, t.labels)).transpose()?,
        clean: memo.clean,
        mislabeled: memo.mislabeled,
        tau_clean_mean: tau_clean.map(|s| s.0),
        tau_clean_std: tau_clean.map(|s| s.1),
        tau_false_mean: tau_false.map(|s| s.0),
        tau_false_std: tau_false.map(|s| s.1),
        grad_clean_norm: dom.clean_norm,
        grad_false_norm: dom.false_norm,
        correction_accuracy: correction_accuracy(targets, &ds.clean_labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, split};
    use proptest::prelude::*;

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr(0), 0.02);
        assert!((cfg.lr(5) - 0.0105).abs() < 1e-12);
        assert_eq!(cfg.lr(10), 0.02);
        assert!(cfg.lr(9) > cfg.lr_min && cfg.lr(9) < cfg.lr(8));
    }

    #[test]
    fn blend_worked_example() {
        let mut t = TargetTable::from_labels(&[0], 2).unwrap();
        t.blend(0, &[0.6, 0.4], 0.9).unwrap();
        assert!((t.row(0)[0] - 0.96).abs() < 1e-15);
        assert!((t.row(0)[1] - 0.04).abs() < 1e-15);
        assert!(t.blend(1, &[0.5, 0.5], 0.9).is_err());
    }

    #[test]
    fn gate_respects_start_confidence_and_period() {
        let cfg = TrainConfig {
            target_start: 20,
            delta: 0.3,
            ..TrainConfig::default()
        };
        assert!(!cfg.target_gate(10, 0.9));
        assert!(cfg.target_gate(20, 0.9));
        assert!(!cfg.target_gate(21, 0.9));
        assert!(!cfg.target_gate(30, 0.2));
        let ungated = TrainConfig {
            cosine_gate: false,
            ..cfg.clone()
        };
        assert!(ungated.target_gate(21, 0.9));
        let off = TrainConfig {
            ablations: Ablations {
                no_target_est: true,
                ..Ablations::default()
            },
            ..cfg
        };
        assert!(!off.target_gate(30, 0.9));
    }

    #[test]
    fn momentum_accumulates() {
        let dims = NetDims {
            input: 1,
            hidden: vec![],
            classes: 2,
            indicator: false,
        };
        let mut net = TwoBranchNet::init(dims, 0).unwrap();
        let start = net.layers.clone();
        let mut grads = net.layers.zeros_like();
        grads.pred_head.bias = vec![1.0, -1.0];
        let mut opt = OptState::new(&net);
        sgd_step(&mut net, &grads, &mut opt, 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut net, &grads, &mut opt, 0.1, 0.9, 0.0).unwrap();
        let moved = net.layers.pred_head.bias[0] - start.pred_head.bias[0];
        assert!((moved + 0.1 * (1.0 + 1.9)).abs() < 1e-12);
        assert_eq!(net.layers.pred_head.weight, start.pred_head.weight);
    }

    #[test]
    fn weight_decay_shrinks_parameters() {
        let dims = NetDims {
            input: 2,
            hidden: vec![3],
            classes: 2,
            indicator: true,
        };
        let mut net = TwoBranchNet::init(dims, 1).unwrap();
        let before: f64 = net.layers.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum();
        let grads = net.layers.zeros_like();
        let mut opt = OptState::new(&net);
        sgd_step(&mut net, &grads, &mut opt, 0.1, 0.0, 0.5).unwrap();
        let after: f64 = net.layers.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum();
        assert!((after - before * 0.95 * 0.95).abs() < 1e-9);
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let ds = gen_blobs(3, 10, 2, 4.0, 1.0, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&ds, &cfg, None, |_| {}).unwrap();
        assert!(out.metrics.is_empty());
        let fresh = TwoBranchNet::init(cfg.net_dims(2, 3), cfg.seed).unwrap();
        assert_eq!(out.net, fresh);
        assert_eq!(out.targets, TargetTable::from_labels(&ds.clean_labels, 3).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = gen_blobs(3, 20, 2, 4.0, 1.0, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            target_start: 2,
            period: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&ds, &cfg, None, |_| {}).unwrap();
        let b = train(&ds, &cfg, None, |_| {}).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.targets, b.targets);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn clean_blobs_are_learned() {
        let ds = gen_blobs(3, 100, 2, 6.0, 1.0, 11).unwrap();
        let (train_set, test_set) = split(&ds, 0.2, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        let test = EvalSet {
            features: &test_set.features,
            labels: &test_set.clean_labels,
        };
        let out = train(&train_set, &cfg, Some(test), |_| {}).unwrap();
        let acc = out.metrics.last().unwrap().test_accuracy.unwrap();
        assert!(acc >= 0.95, "test accuracy {acc}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let ds = gen_blobs(2, 5, 2, 4.0, 1.0, 0).unwrap();
        for cfg in [
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr_min: 0.5,
                ..TrainConfig::default()
            },
            TrainConfig {
                lambda: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                alpha: 1.5,
                ..TrainConfig::default()
            },
            TrainConfig {
                period: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(train(&ds, &cfg, None, |_| {}).is_err(), "{cfg:?}");
        }
    }

    proptest! {
        #[test]
        fn blended_rows_stay_on_simplex(steps in prop::collection::vec((prop::collection::vec(0.01f64..1.0, 4), 0.0f64..=1.0), 1..30)) {
            let mut t = TargetTable::from_labels(&[2], 4).unwrap();
            for (raw, alpha) in &steps {
                let s: f64 = raw.iter().sum();
                let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
                t.blend(0, &p, *alpha).unwrap();
                prop_assert!(t.row(0).iter().all(|&v| v >= 0.0));
                prop_assert!((t.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn lr_within_bounds(e in 0usize..1000, period in 1usize..30) {
            let lr = cosine_lr(e, 0.02, 0.001, period);
            prop_assert!((0.001..=0.02).contains(&lr));
        }
    }
}
