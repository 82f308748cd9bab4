//! Two-branch network: a ReLU MLP backbone whose last activation `H` feeds
//! both a K-way prediction head and a scalar indicator head.
//!
//! Shapes: a batch is `B x d`, layer weights are `out x in`, so a layer maps
//! `X -> X · Wᵀ + b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{relu, relu_backward, sigmoid, softmax_into, Matrix, SeededRng};

/// Initial bias of the indicator head; `sigmoid(2) ≈ 0.88`.
pub const INDICATOR_BIAS_INIT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetDims {
    pub input: usize,
    /// Backbone widths; the last entry is the penultimate size `M`. When
    /// empty the input itself is the penultimate layer.
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Without an indicator head the confidence is `max_j p_j`.
    #[serde(default = "default_true")]
    pub indicator: bool,
}

fn default_true() -> bool {
    true
}

impl NetDims {
    pub fn penultimate(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 {
            return Err(Error::invalid("input dimension must be >= 1"));
        }
        if self.classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Matrix::zeros(out, inp),
            bias: vec![0.0; out],
        }
    }

    fn he(out: usize, inp: usize, rng: &mut SeededRng) -> Self {
        let scale = (2.0 / inp as f64).sqrt();
        let mut weight = Matrix::zeros(out, inp);
        for w in weight.as_mut_slice() {
            *w = rng.gaussian() * scale;
        }
        Self {
            weight,
            bias: vec![0.0; out],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// `x · Wᵀ + b`.
    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight.transpose())?;
        out.add_row_broadcast(&self.bias)?;
        Ok(out)
    }

    fn slices(&self) -> [&[f64]; 2] {
        [self.weight.as_slice(), &self.bias]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weight.as_mut_slice(), &mut self.bias]
    }
}

/// Parameter container shared by the network and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Layers {
    pub backbone: Vec<Dense>,
    pub pred_head: Dense,
    pub ind_head: Option<Dense>,
}

impl Layers {
    /// All parameter buffers in a fixed order: backbone layers, prediction
    /// head, indicator head; each as (weight, bias).
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in self.backbone.iter().chain([&self.pred_head]).chain(&self.ind_head) {
            out.extend(layer.slices());
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in self
            .backbone
            .iter_mut()
            .chain([&mut self.pred_head])
            .chain(self.ind_head.as_mut())
        {
            out.extend(layer.slices_mut());
        }
        out
    }

    pub fn zeros_like(&self) -> Layers {
        let z = |d: &Dense| Dense::zeros(d.out_dim(), d.in_dim());
        Layers {
            backbone: self.backbone.iter().map(z).collect(),
            pred_head: z(&self.pred_head),
            ind_head: self.ind_head.as_ref().map(z),
        }
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Layers) -> bool {
        let a = self.slices();
        let b = other.slices();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }
}

/// Per-parameter gradients, shaped like the network.
pub type GradientSet = Layers;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoBranchNet {
    dims: NetDims,
    /// When set, the indicator head's gradient does not reach the backbone.
    pub stop_indicator_grad: bool,
    pub layers: Layers,
}

/// Everything `backward` needs from a forward pass over one batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each backbone layer (the batch itself first).
    pub inputs: Vec<Matrix>,
    /// Pre-activation of each backbone layer.
    pub pre: Vec<Matrix>,
    /// Penultimate activation `H`, `B x M`.
    pub penultimate: Matrix,
    pub logits: Matrix,
    pub probs: Matrix,
    /// Pre-sigmoid indicator output; absent for a headless net.
    pub conf_logit: Option<Vec<f64>>,
    pub tau: Vec<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.probs.rows()
    }
}

impl TwoBranchNet {
    /// He-initialized weights, zero biases, indicator bias
    /// [`INDICATOR_BIAS_INIT`].
    pub fn init(dims: NetDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = SeededRng::new(seed);
        let mut backbone = Vec::with_capacity(dims.hidden.len());
        let mut fan_in = dims.input;
        for &width in &dims.hidden {
            backbone.push(Dense::he(width, fan_in, &mut rng));
            fan_in = width;
        }
        let pred_head = Dense::he(dims.classes, fan_in, &mut rng);
        let ind_head = dims.indicator.then(|| {
            let mut d = Dense::he(1, fan_in, &mut rng);
            d.bias[0] = INDICATOR_BIAS_INIT;
            d
        });
        Ok(Self {
            dims,
            stop_indicator_grad: false,
            layers: Layers {
                backbone,
                pred_head,
                ind_head,
            },
        })
    }

    /// Assembles a network from explicit layers, checking that shapes chain.
    pub fn from_layers(dims: NetDims, layers: Layers) -> Result<Self> {
        dims.validate()?;
        if layers.backbone.len() != dims.hidden.len() {
            return Err(Error::shape(
                "TwoBranchNet::from_layers",
                format!("{} backbone layers", dims.hidden.len()),
                layers.backbone.len(),
            ));
        }
        let mut fan_in = dims.input;
        let expect = |d: &Dense, out: usize, inp: usize, what: &'static str| -> Result<()> {
            if d.weight.shape() != (out, inp) || d.bias.len() != out {
                return Err(Error::shape(
                    what,
                    format!("{out}x{inp} weight, {out} bias"),
                    format!("{:?} weight, {} bias", d.weight.shape(), d.bias.len()),
                ));
            }
            Ok(())
        };
        for (layer, &width) in layers.backbone.iter().zip(&dims.hidden) {
            expect(layer, width, fan_in, "backbone layer")?;
            fan_in = width;
        }
        expect(&layers.pred_head, dims.classes, fan_in, "prediction head")?;
        match (&layers.ind_head, dims.indicator) {
            (Some(h), true) => expect(h, 1, fan_in, "indicator head")?,
            (None, false) => {}
            _ => return Err(Error::invalid("indicator head presence disagrees with dims")),
        }
        if !layers.is_finite() {
            return Err(Error::NonFinite("TwoBranchNet::from_layers"));
        }
        Ok(Self {
            dims,
            stop_indicator_grad: false,
            layers,
        })
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn has_indicator(&self) -> bool {
        self.layers.ind_head.is_some()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardCache> {
        if batch.cols() != self.dims.input {
            return Err(Error::shape("forward", self.dims.input, batch.cols()));
        }
        let mut inputs = Vec::with_capacity(self.layers.backbone.len());
        let mut pre = Vec::with_capacity(self.layers.backbone.len());
        let mut act = batch.clone();
        for layer in &self.layers.backbone {
            let z = layer.apply(&act)?;
            let next = relu(&z);
            inputs.push(std::mem::replace(&mut act, next));
            pre.push(z);
        }
        let logits = self.layers.pred_head.apply(&act)?;
        let mut probs = Matrix::zeros(logits.rows(), logits.cols());
        for r in 0..logits.rows() {
            softmax_into(logits.row(r), probs.row_mut(r));
        }
        let (conf_logit, tau) = match &self.layers.ind_head {
            Some(head) => {
                let h = head.apply(&act)?.into_vec();
                let tau = h.iter().map(|&v| sigmoid(v)).collect();
                (Some(h), tau)
            }
            None => {
                let tau = probs
                    .row_iter()
                    .map(|row| row.iter().copied().fold(0.0, f64::max))
                    .collect();
                (None, tau)
            }
        };
        Ok(ForwardCache {
            inputs,
            pre,
            penultimate: act,
            logits,
            probs,
            conf_logit,
            tau,
        })
    }

    /// Batch-mean gradients given per-sample `dL/dz` (`B x K`) and `dL/dτ`.
    ///
    /// For a headless net the confidence is `max_j p_j` treated as a
    /// constant, so `d_tau` is ignored.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Matrix, d_tau: &[f64]) -> Result<GradientSet> {
        let b = cache.batch_size();
        if d_logits.shape() != (b, self.dims.classes) {
            return Err(Error::shape(
                "backward d_logits",
                format!("{b}x{}", self.dims.classes),
                format!("{:?}", d_logits.shape()),
            ));
        }
        if d_tau.len() != b {
            return Err(Error::shape("backward d_tau", b, d_tau.len()));
        }
        let mut grads = self.layers.zeros_like();
        if b == 0 {
            return Ok(grads);
        }
        let inv_b = 1.0 / b as f64;
        let h = &cache.penultimate;

        accumulate_dense(&mut grads.pred_head, d_logits, h, inv_b)?;
        let mut d_h = d_logits.matmul(&self.layers.pred_head.weight)?;

        if let (Some(head), Some(grad_head)) = (&self.layers.ind_head, grads.ind_head.as_mut()) {
            let d_conf: Vec<f64> = d_tau.iter().zip(&cache.tau).map(|(&g, &t)| g * t * (1.0 - t)).collect();
            let d_conf = Matrix::from_vec(b, 1, d_conf)?;
            accumulate_dense(grad_head, &d_conf, h, inv_b)?;
            if !self.stop_indicator_grad {
                let from_ind = d_conf.matmul(&head.weight)?;
                for (a, c) in d_h.as_mut_slice().iter_mut().zip(from_ind.as_slice()) {
                    *a += c;
                }
            }
        }

        let mut upstream = d_h;
        for (l, layer) in self.layers.backbone.iter().enumerate().rev() {
            let d_pre = relu_backward(&cache.pre[l], &upstream)?;
            accumulate_dense(&mut grads.backbone[l], &d_pre, &cache.inputs[l], inv_b)?;
            if l > 0 {
                upstream = d_pre.matmul(&layer.weight)?;
            }
        }
        Ok(grads)
    }
}

/// `grad.W += scale · d_outᵀ · input`, `grad.b += scale · Σ_rows d_out`.
fn accumulate_dense(grad: &mut Dense, d_out: &Matrix, input: &Matrix, scale: f64) -> Result<()> {
    let gw = d_out.transpose().matmul(input)?;
    for (g, v) in grad.weight.as_mut_slice().iter_mut().zip(gw.as_slice()) {
        *g += scale * v;
    }
    for row in d_out.row_iter() {
        for (g, v) in grad.bias.iter_mut().zip(row) {
            *g += scale * v;
        }
    }
    Ok(())
}
