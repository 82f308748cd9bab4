//! Per-sample losses with analytic gradients.
//!
//! Every loss takes a prediction `p` (softmax output), a confidence `tau` in
//! `(0, 1)` where relevant, and a target distribution `t`. The mixture that
//! the confidence-adaptive losses are built on is
//!
//! ```text
//! inner_k = tau * (p_k - t_k) + t_k = tau * p_k + (1 - tau) * t_k
//! ```
//!
//! Gradients are returned with respect to the logits `z` (chained through the
//! softmax Jacobian `dp_k/dz_j = p_k (δ_kj - p_j)`) and with respect to `tau`.
//! Converting `d_tau` into a gradient on the pre-sigmoid activation is the
//! caller's job (`d_h = d_tau * tau * (1 - tau)`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default surrogate for `ln 0`.
pub const DEFAULT_LOG_ZERO: f64 = -4.0;
/// Default clamp for the argument of the logarithm in CE/CACE.
pub const DEFAULT_EPS: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Weight of the `-ln tau` penalty.
    pub lambda: f64,
    /// Weight of the reverse term.
    pub beta: f64,
    /// Value substituted for `ln 0`; must be negative.
    pub log_zero: f64,
    pub eps: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            beta: 0.0,
            log_zero: DEFAULT_LOG_ZERO,
            eps: DEFAULT_EPS,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.log_zero < 0.0) || !self.log_zero.is_finite() {
            return Err(Error::invalid(format!(
                "log_zero must be a finite negative number, got {}",
                self.log_zero
            )));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-6) {
            return Err(Error::invalid(format!("eps must lie in (0, 1e-6], got {}", self.eps)));
        }
        for (name, v) in [("lambda", self.lambda), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Loss value plus gradients with respect to the logits and the confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub d_logits: Vec<f64>,
    pub d_tau: f64,
}

impl LossGrad {
    fn zero(k: usize) -> Self {
        Self {
            value: 0.0,
            d_logits: vec![0.0; k],
            d_tau: 0.0,
        }
    }

    /// `self + weight * other`, componentwise.
    pub fn add_scaled(mut self, other: &LossGrad, weight: f64) -> Self {
        self.value += weight * other.value;
        for (a, b) in self.d_logits.iter_mut().zip(&other.d_logits) {
            *a += weight * b;
        }
        self.d_tau += weight * other.d_tau;
        self
    }
}

fn check_simplex(name: &str, v: &[f64]) -> Result<()> {
    if v.len() < 2 {
        return Err(Error::invalid(format!(
            "{name} needs at least 2 classes, got {}",
            v.len()
        )));
    }
    let mut sum = 0.0;
    for &x in v {
        if !x.is_finite() || !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&x) {
            return Err(Error::invalid(format!("{name} has entry {x} outside [0, 1]")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

fn check_pair(p: &[f64], t: &[f64]) -> Result<()> {
    check_simplex("p", p)?;
    check_simplex("t", t)?;
    if p.len() != t.len() {
        return Err(Error::shape("loss", p.len(), t.len()));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1), got {tau}")));
    }
    Ok(())
}

/// Chains `dL/dp` through the softmax Jacobian.
pub fn softmax_chain(p: &[f64], d_p: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(d_p).map(|(a, b)| a * b).sum();
    p.iter().zip(d_p).map(|(&pj, &gj)| pj * (gj - dot)).collect()
}

/// `max(ln t, log_zero)`.
#[inline]
fn clipped_log(t: f64, log_zero: f64) -> f64 {
    if t > 0.0 {
        t.ln().max(log_zero)
    } else {
        log_zero
    }
}

/// One-hot vector of length `k` at `y`.
pub fn one_hot(y: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[y] = 1.0;
    v
}

/// Cross entropy `-Σ t_k ln p_k`.
pub fn ce(p: &[f64], t: &[f64], eps: f64) -> Result<LossGrad> {
    check_pair(p, t)?;
    let value = -p
        .iter()
        .zip(t)
        .filter(|(_, &tk)| tk > 0.0)
        .map(|(&pk, &tk)| tk * pk.max(eps).ln())
        .sum::<f64>();
    let t_mass: f64 = t.iter().sum();
    let d_logits = p.iter().zip(t).map(|(&pj, &tj)| pj * t_mass - tj).collect();
    Ok(LossGrad {
        value,
        d_logits,
        d_tau: 0.0,
    })
}

/// Confidence adaptive cross entropy: `-Σ t_k ln(tau p_k + (1 - tau) t_k)`.
pub fn cace(p: &[f64], tau: f64, t: &[f64], params: &LossParams) -> Result<LossGrad> {
    check_pair(p, t)?;
    check_tau(tau)?;
    let k = p.len();
    let mut out = LossGrad::zero(k);
    let mut d_p = vec![0.0; k];
    for i in 0..k {
        let tk = t[i];
        if tk <= 0.0 {
            continue;
        }
        let inner = tau * p[i] + (1.0 - tau) * tk;
        if inner < params.eps {
            out.value -= tk * params.eps.ln();
            continue;
        }
        out.value -= tk * inner.ln();
        d_p[i] = -tau * tk / inner;
        out.d_tau -= tk * (p[i] - tk) / inner;
    }
    out.d_logits = softmax_chain(p, &d_p);
    Ok(out)
}

/// Penalty `-ln tau`. Has no logit gradient.
pub fn penalty(tau: f64, num_classes: usize) -> Result<LossGrad> {
    check_tau(tau)?;
    Ok(LossGrad {
        value: -tau.ln(),
        d_logits: vec![0.0; num_classes],
        d_tau: -1.0 / tau,
    })
}

/// Reverse CACE: `-Σ (tau p_k + (1 - tau) t_k) · max(ln t_k, A)`.
pub fn rcace(p: &[f64], tau: f64, t: &[f64], params: &LossParams) -> Result<LossGrad> {
    check_pair(p, t)?;
    check_tau(tau)?;
    let k = p.len();
    let mut value = 0.0;
    let mut d_tau = 0.0;
    let mut d_p = vec![0.0; k];
    for i in 0..k {
        let log_t = clipped_log(t[i], params.log_zero);
        let inner = tau * p[i] + (1.0 - tau) * t[i];
        value -= inner * log_t;
        d_p[i] = -tau * log_t;
        d_tau -= (p[i] - t[i]) * log_t;
    }
    Ok(LossGrad {
        value,
        d_logits: softmax_chain(p, &d_p),
        d_tau,
    })
}

/// `cace + lambda * penalty`.
pub fn cal(p: &[f64], tau: f64, t: &[f64], params: &LossParams) -> Result<LossGrad> {
    let base = cace(p, tau, t, params)?;
    let pen = penalty(tau, p.len())?;
    Ok(base.add_scaled(&pen, params.lambda))
}

/// `cace + lambda * penalty + beta * rcace`.
pub fn car(p: &[f64], tau: f64, t: &[f64], params: &LossParams) -> Result<LossGrad> {
    let base = cal(p, tau, t, params)?;
    if params.beta == 0.0 {
        return Ok(base);
    }
    let reverse = rcace(p, tau, t, params)?;
    Ok(base.add_scaled(&reverse, params.beta))
}

/// Closed-form logit gradient of CAL for a one-hot target at `y`.
pub fn cal_grad_logits_onehot(p: &[f64], tau: f64, y: usize) -> Vec<f64> {
    let py = p[y];
    let scale_y = py / (py - 1.0 + 1.0 / tau);
    p.iter()
        .enumerate()
        .map(|(j, &pj)| {
            if j == y {
                (pj - 1.0) * pj / (pj - 1.0 + 1.0 / tau)
            } else {
                pj * scale_y
            }
        })
        .collect()
}

/// Closed-form logit gradient of CAR with `beta = 1` for a one-hot target at `y`.
pub fn car_grad_logits_onehot(p: &[f64], tau: f64, y: usize, log_zero: f64) -> Vec<f64> {
    let py = p[y];
    let mut g = cal_grad_logits_onehot(p, tau, y);
    for (j, gj) in g.iter_mut().enumerate() {
        let pj = p[j];
        *gj += if j == y {
            -log_zero * tau * pj * (pj - 1.0)
        } else {
            -log_zero * tau * pj * py
        };
    }
    g
}

/// Closed form of the reverse term for a one-hot target: `-A tau (1 - p_y)`.
pub fn rcace_onehot_closed_form(p_y: f64, tau: f64, log_zero: f64) -> f64 {
    -log_zero * tau * (1.0 - p_y)
}

/// Symmetric-style losses written in terms of the labelled-class probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum BaselineLoss {
    Mae,
    Rce { log_zero: f64 },
    Gce { rho: f64 },
    Tce { order: u32 },
}

impl BaselineLoss {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineLoss::Mae => Ok(()),
            BaselineLoss::Rce { log_zero } if log_zero < 0.0 && log_zero.is_finite() => Ok(()),
            BaselineLoss::Rce { log_zero } => {
                Err(Error::invalid(format!("rce log_zero must be negative, got {log_zero}")))
            }
            BaselineLoss::Gce { rho } if rho > 0.0 && rho <= 1.0 => Ok(()),
            BaselineLoss::Gce { rho } => Err(Error::invalid(format!("gce rho must lie in (0, 1], got {rho}"))),
            BaselineLoss::Tce { order } if order >= 1 => Ok(()),
            BaselineLoss::Tce { .. } => Err(Error::invalid("tce order must be >= 1")),
        }
    }

    /// Value as a function of `p_y` alone.
    pub fn value(&self, p_y: f64) -> f64 {
        match *self {
            BaselineLoss::Mae => 2.0 * (1.0 - p_y),
            BaselineLoss::Rce { log_zero } => -log_zero * (1.0 - p_y),
            BaselineLoss::Gce { rho } => (1.0 - p_y.powf(rho)) / rho,
            BaselineLoss::Tce { order } => {
                let q = 1.0 - p_y;
                (1..=order).map(|i| q.powi(i as i32) / i as f64).sum()
            }
        }
    }

    /// `d value / d p_y`.
    pub fn slope(&self, p_y: f64) -> f64 {
        match *self {
            BaselineLoss::Mae => -2.0,
            BaselineLoss::Rce { log_zero } => log_zero,
            BaselineLoss::Gce { rho } => -p_y.max(1e-300).powf(rho - 1.0),
            BaselineLoss::Tce { order } => {
                let q = 1.0 - p_y;
                -(0..order).map(|i| q.powi(i as i32)).sum::<f64>()
            }
        }
    }

    pub fn loss_grad(&self, p: &[f64], y: usize) -> Result<LossGrad> {
        check_simplex("p", p)?;
        if y >= p.len() {
            return Err(Error::invalid(format!("label {y} out of range for K={}", p.len())));
        }
        let py = p[y];
        let slope = self.slope(py);
        let d_logits = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| {
                let dpy_dzj = if j == y { py * (1.0 - py) } else { -py * pj };
                slope * dpy_dzj
            })
            .collect();
        Ok(LossGrad {
            value: self.value(py),
            d_logits,
            d_tau: 0.0,
        })
    }
}

pub fn mae(p: &[f64], y: usize) -> f64 {
    BaselineLoss::Mae.value(p[y])
}

pub fn rce(p: &[f64], y: usize, log_zero: f64) -> f64 {
    BaselineLoss::Rce { log_zero }.value(p[y])
}

pub fn gce(p: &[f64], y: usize, rho: f64) -> Result<f64> {
    let loss = BaselineLoss::Gce { rho };
    loss.validate()?;
    Ok(loss.value(p[y]))
}

pub fn tce(p: &[f64], y: usize, order: u32) -> Result<f64> {
    let loss = BaselineLoss::Tce { order };
    loss.validate()?;
    Ok(loss.value(p[y]))
}

/// Which objective a training run minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Cal,
    Car,
    Baseline(BaselineLoss),
}

impl LossKind {
    /// Whether the objective reads the confidence value.
    pub fn uses_confidence(&self) -> bool {
        matches!(self, LossKind::Cal | LossKind::Car)
    }

    /// Evaluates the per-sample objective. `label` is the one-hot index the
    /// baselines use; the other objectives read the target `t`.
    pub fn evaluate(&self, p: &[f64], tau: f64, t: &[f64], label: usize, params: &LossParams) -> Result<LossGrad> {
        match self {
            LossKind::Ce => ce(p, t, params.eps),
            LossKind::Cal => cal(p, tau, t, params),
            LossKind::Car => car(p, tau, t, params),
            LossKind::Baseline(b) => b.loss_grad(p, label),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sigmoid, softmax};
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn params() -> LossParams {
        LossParams {
            lambda: 0.5,
            beta: 1.0,
            log_zero: -4.0,
            eps: 1e-12,
        }
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn ce_examples() {
        let g = ce(&[0.0, 1.0], &[0.0, 1.0], 1e-12).unwrap();
        close(g.value, 0.0, 0.0);
        let g = ce(&[0.5, 0.5], &[1.0, 0.0], 1e-12).unwrap();
        close(g.value, LN2, 1e-15);
        assert_eq!(g.d_logits, vec![-0.5, 0.5]);
        assert_eq!(g.d_tau, 0.0);
        close(g.d_logits.iter().sum(), 0.0, 1e-15);
    }

    #[test]
    fn ce_rejects_off_simplex() {
        assert!(ce(&[0.6, 0.6], &[1.0, 0.0], 1e-12).is_err());
    }

    #[test]
    fn cace_examples() {
        let p = params();
        for tau in [0.1, 0.5, 0.9] {
            let g = cace(&[1.0, 0.0], tau, &[1.0, 0.0], &p).unwrap();
            close(g.value, 0.0, 0.0);
        }
        let g = cace(&[0.5, 0.5], 0.5, &[1.0, 0.0], &p).unwrap();
        close(g.value, -(0.75f64).ln(), 1e-15);
        close(g.value, 0.28768, 1e-5);
        close(g.d_tau, 2.0 / 3.0, 1e-15);
    }

    #[test]
    fn cace_rejects_tau_outside_open_interval() {
        let p = params();
        assert!(cace(&[0.5, 0.5], 0.0, &[1.0, 0.0], &p).is_err());
        assert!(cace(&[0.5, 0.5], 1.0, &[1.0, 0.0], &p).is_err());
    }

    #[test]
    fn penalty_examples() {
        let g = penalty(0.5, 2).unwrap();
        close(g.value, LN2, 1e-15);
        close(g.d_tau, -2.0, 1e-15);
        assert!(penalty(1.0 - 1e-12, 2).unwrap().value < 1e-11);
        assert!(penalty(0.3, 2).unwrap().value > penalty(0.4, 2).unwrap().value);
    }

    #[test]
    fn rcace_examples() {
        let p = params();
        let g = rcace(&[1.0, 0.0, 0.0], 0.5, &[1.0, 0.0, 0.0], &p).unwrap();
        close(g.value, 0.0, 1e-15);
        let g = rcace(&[0.25, 0.5, 0.25], 0.5, &[1.0, 0.0, 0.0], &p).unwrap();
        close(g.value, 1.5, 1e-15);
        let total: f64 = (0..3)
            .map(|j| rcace(&[0.25, 0.5, 0.25], 0.5, &one_hot(j, 3), &p).unwrap().value)
            .sum();
        close(total, 4.0, 1e-12);
        assert!(total > 0.0 && total < 8.0);
    }

    #[test]
    fn cal_and_car_compose() {
        let mut p = params();
        let g = cal(&[0.5, 0.5], 0.5, &[1.0, 0.0], &p).unwrap();
        close(g.value, -(0.75f64).ln() + 0.5 * LN2, 1e-15);
        close(g.value, 0.63426, 1e-5);
        let c = cace(&[0.5, 0.5], 0.5, &[1.0, 0.0], &p).unwrap();
        assert_eq!(g.d_logits, c.d_logits);

        p.lambda = 0.0;
        assert_eq!(
            cal(&[0.3, 0.7], 0.4, &[1.0, 0.0], &p).unwrap(),
            cace(&[0.3, 0.7], 0.4, &[1.0, 0.0], &p).unwrap()
        );

        p.lambda = 0.5;
        p.beta = 0.0;
        assert_eq!(
            car(&[0.3, 0.7], 0.4, &[0.2, 0.8], &p).unwrap(),
            cal(&[0.3, 0.7], 0.4, &[0.2, 0.8], &p).unwrap()
        );
    }

    #[test]
    fn closed_form_examples() {
        let g = cal_grad_logits_onehot(&[0.5, 0.5], 0.5, 0);
        close(g[0], -1.0 / 6.0, 1e-15);
        let g = cal_grad_logits_onehot(&[0.6, 0.3, 0.1], 0.5, 0);
        close(g[1], 0.1125, 1e-15);
        let g = car_grad_logits_onehot(&[0.5, 0.5], 0.5, 0, -4.0);
        close(g[0], -2.0 / 3.0, 1e-15);
        // p_y = 0 kills the extra term on the other classes
        let cal_g = cal_grad_logits_onehot(&[0.0, 0.4, 0.6], 0.5, 0);
        let car_g = car_grad_logits_onehot(&[0.0, 0.4, 0.6], 0.5, 0, -4.0);
        close(car_g[1], cal_g[1], 0.0);
        // tau -> 0 drives the multiplier to zero
        let g = cal_grad_logits_onehot(&[0.2, 0.3, 0.5], 1e-12, 1);
        assert!(g.iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn extra_term_vertex_at_half() {
        let extra = |pj: f64| 4.0 * 0.5 * pj * (pj - 1.0);
        let at_half = extra(0.5).abs();
        for i in 0..=100 {
            let pj = i as f64 / 100.0;
            assert!(extra(pj) <= 0.0);
            assert!(extra(pj).abs() <= at_half + 1e-15);
        }
    }

    #[test]
    fn baseline_examples() {
        let p = [0.5, 0.5];
        close(mae(&p, 0), 1.0, 1e-15);
        close(rce(&p, 0, -4.0), 2.0, 1e-15);
        close(gce(&p, 0, 0.5).unwrap(), 2.0 * (1.0 - 0.5f64.sqrt()), 1e-15);
        close(gce(&p, 0, 0.5).unwrap(), 0.58579, 1e-5);
        close(gce(&p, 0, 1.0).unwrap(), mae(&p, 0) / 2.0, 1e-15);
        close(tce(&p, 0, 1).unwrap(), mae(&p, 0) / 2.0, 1e-15);
        let one = [1.0, 0.0];
        assert_eq!(mae(&one, 0), 0.0);
        assert_eq!(rce(&one, 0, -4.0), 0.0);
        assert_eq!(gce(&one, 0, 0.7).unwrap(), 0.0);
        assert_eq!(tce(&one, 0, 5).unwrap(), 0.0);
        assert!(gce(&p, 0, 0.0).is_err());
        assert!(gce(&p, 0, 1.5).is_err());
        assert!(tce(&p, 0, 0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(LossParams::default().validate().is_ok());
        let mut p = LossParams::default();
        p.log_zero = 0.0;
        assert!(p.validate().is_err());
        p = LossParams::default();
        p.eps = 1e-3;
        assert!(p.validate().is_err());
        p = LossParams::default();
        p.lambda = f64::NAN;
        assert!(p.validate().is_err());
    }

    // Test-local finite differences over (logits, pre-sigmoid h).
    fn fd_check(f: impl Fn(&[f64], f64) -> LossGrad, z: &[f64], h: f64) -> (Vec<f64>, f64, LossGrad) {
        let step = 1e-5;
        let value = |z: &[f64], h: f64| f(&softmax(z), sigmoid(h)).value;
        let mut dz = vec![0.0; z.len()];
        for j in 0..z.len() {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[j] += step;
            zm[j] -= step;
            dz[j] = (value(&zp, h) - value(&zm, h)) / (2.0 * step);
        }
        let dh = (value(z, h + step) - value(z, h - step)) / (2.0 * step);
        (dz, dh, f(&softmax(z), sigmoid(h)))
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    fn case() -> impl Strategy<Value = (Vec<f64>, f64, Vec<f64>)> {
        (2usize..6).prop_flat_map(|k| {
            (
                prop::collection::vec(-3.0f64..3.0, k),
                -3.0f64..3.0,
                prop::collection::vec(-2.0f64..2.0, k),
            )
        })
    }

    proptest! {
        #[test]
        fn analytic_matches_finite_differences((z, h, tz) in case(), soft in any::<bool>()) {
            let k = z.len();
            let t = if soft { softmax(&tz) } else { one_hot(0, k) };
            let prm = LossParams { lambda: 0.7, beta: 0.3, log_zero: -4.0, eps: 1e-12 };
            let losses: Vec<Box<dyn Fn(&[f64], f64) -> LossGrad>> = vec![
                Box::new(|p: &[f64], _| ce(p, &t, prm.eps).unwrap()),
                Box::new(|p: &[f64], tau| cace(p, tau, &t, &prm).unwrap()),
                Box::new(|p: &[f64], tau| penalty(tau, p.len()).unwrap()),
                Box::new(|p: &[f64], tau| rcace(p, tau, &t, &prm).unwrap()),
                Box::new(|p: &[f64], tau| cal(p, tau, &t, &prm).unwrap()),
                Box::new(|p: &[f64], tau| car(p, tau, &t, &prm).unwrap()),
            ];
            for f in &losses {
                let (dz, dh, g) = fd_check(f, &z, h);
                let tau = sigmoid(h);
                for j in 0..k {
                    prop_assert!(rel_err(dz[j], g.d_logits[j]) < 1e-4, "dz[{}] {} vs {}", j, dz[j], g.d_logits[j]);
                }
                prop_assert!(rel_err(dh, g.d_tau * tau * (1.0 - tau)) < 1e-4);
                prop_assert!(g.d_logits.iter().sum::<f64>().abs() < 1e-9);
            }
        }

        #[test]
        fn baseline_gradients_match_finite_differences(z in prop::collection::vec(-3.0f64..3.0, 2..6), which in 0usize..4) {
            let loss = [
                BaselineLoss::Mae,
                BaselineLoss::Rce { log_zero: -4.0 },
                BaselineLoss::Gce { rho: 0.7 },
                BaselineLoss::Tce { order: 3 },
            ][which];
            let g = loss.loss_grad(&softmax(&z), 0).unwrap();
            let step = 1e-5;
            for j in 0..z.len() {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += step;
                zm[j] -= step;
                let fd = (loss.value(softmax(&zp)[0]) - loss.value(softmax(&zm)[0])) / (2.0 * step);
                prop_assert!(rel_err(fd, g.d_logits[j]) < 1e-4);
            }
        }

        #[test]
        fn closed_forms_match_chain_rule(z in prop::collection::vec(-4.0f64..4.0, 2..8), tau in 0.01f64..0.99, ysel in 0usize..8) {
            let k = z.len();
            let y = ysel % k;
            let p = softmax(&z);
            let t = one_hot(y, k);
            let mut prm = LossParams { lambda: 0.0, beta: 1.0, log_zero: -4.0, eps: 1e-12 };
            let chain_cal = cace(&p, tau, &t, &prm).unwrap().d_logits;
            let closed_cal = cal_grad_logits_onehot(&p, tau, y);
            let chain_car = car(&p, tau, &t, &prm).unwrap().d_logits;
            let closed_car = car_grad_logits_onehot(&p, tau, y, prm.log_zero);
            for j in 0..k {
                prop_assert!((chain_cal[j] - closed_cal[j]).abs() < 1e-9);
                prop_assert!((chain_car[j] - closed_car[j]).abs() < 1e-9);
                let sign_ok = |v: f64| if j == y { v <= 0.0 } else { v >= 0.0 };
                prop_assert!(sign_ok(closed_cal[j]) && sign_ok(closed_car[j]));
            }
            prm.lambda = 3.0;
            prop_assert_eq!(cal(&p, tau, &t, &prm).unwrap().d_logits, chain_cal);
        }

        #[test]
        fn rcace_onehot_and_sum_identity(z in prop::collection::vec(-4.0f64..4.0, 2..8), tau in 0.001f64..0.999, a in -10.0f64..-0.1) {
            let k = z.len();
            let p = softmax(&z);
            let prm = LossParams { lambda: 0.0, beta: 1.0, log_zero: a, eps: 1e-12 };
            let mut total = 0.0;
            for j in 0..k {
                let v = rcace(&p, tau, &one_hot(j, k), &prm).unwrap().value;
                prop_assert!((v - rcace_onehot_closed_form(p[j], tau, a)).abs() < 1e-12);
                total += v;
            }
            prop_assert!((total - a * tau * (1.0 - k as f64)).abs() < 1e-12);
            prop_assert!(total > 0.0 && total < a * (1.0 - k as f64));
        }
    }
}
