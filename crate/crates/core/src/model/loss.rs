//! Binary cross-entropy and focal loss on a predicted probability, with
//! derivatives with respect to the probability and to the pre-sigmoid logit.

use serde::{Deserialize, Serialize};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Weight of the positive-class term; the negative term gets `1 - alpha`.
    pub alpha: f64,
    /// Focusing exponent.
    pub gamma: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 2.0,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(format!(
                "gamma must be finite and non-negative, got {}",
                self.gamma
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Focal,
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "focal" => Ok(LossKind::Focal),
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            other => Err(format!(
                "unknown loss {other:?} (expected focal or cross_entropy)"
            )),
        }
    }
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[inline]
fn is_positive(c: u8) -> bool {
    debug_assert!(c <= 1, "class must be 0 or 1");
    c != 0
}

/// `-c log p - (1 - c) log(1 - p)`.
pub fn cross_entropy(p: f64, c: u8) -> f64 {
    let p = clamp_prob(p);
    if is_positive(c) {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// d(cross_entropy)/dp.
pub fn cross_entropy_grad(p: f64, c: u8) -> f64 {
    let p = clamp_prob(p);
    if is_positive(c) {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// `-alpha c log(p) (1-p)^gamma - (1-alpha)(1-c) log(1-p) p^gamma`.
pub fn focal_loss(p: f64, c: u8, params: LossParams) -> f64 {
    let p = clamp_prob(p);
    let LossParams { alpha, gamma } = params;
    if is_positive(c) {
        -alpha * p.ln() * (1.0 - p).powf(gamma)
    } else {
        -(1.0 - alpha) * (1.0 - p).ln() * p.powf(gamma)
    }
}

/// d(focal_loss)/dp.
pub fn focal_loss_grad(p: f64, c: u8, params: LossParams) -> f64 {
    let p = clamp_prob(p);
    let LossParams { alpha, gamma } = params;
    let q = 1.0 - p;
    if is_positive(c) {
        let modulation = if gamma == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * p.ln()
        };
        -alpha * (q.powf(gamma) / p - modulation)
    } else {
        let modulation = if gamma == 0.0 {
            0.0
        } else {
            gamma * p.powf(gamma - 1.0) * q.ln()
        };
        (1.0 - alpha) * (p.powf(gamma) / q - modulation)
    }
}

pub fn loss_value(kind: LossKind, p: f64, c: u8, params: LossParams) -> f64 {
    match kind {
        LossKind::Focal => focal_loss(p, c, params),
        LossKind::CrossEntropy => cross_entropy(p, c),
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss at `sigmoid(z)` and its derivative with respect to `z`.
///
/// Both are evaluated without probability clamping, in log-space, so they stay
/// consistent and informative when the sigmoid saturates. Inside the clamp
/// range the value equals [`loss_value`] and the derivative equals
/// `dL/dp * p (1 - p)`.
pub fn loss_and_logit_grad(kind: LossKind, z: f64, c: u8, params: LossParams) -> (f64, f64) {
    let p = sigmoid(z);
    let q = sigmoid(-z);
    // -ln p and -ln q.
    let (nll_p, nll_q) = (softplus(-z), softplus(z));
    match kind {
        LossKind::CrossEntropy => {
            if is_positive(c) {
                (nll_p, -q)
            } else {
                (nll_q, p)
            }
        }
        LossKind::Focal => {
            let LossParams { alpha, gamma } = params;
            if is_positive(c) {
                let w = alpha * q.powf(gamma);
                (w * nll_p, -alpha * q.powf(gamma) * (q + gamma * p * nll_p))
            } else {
                let w = (1.0 - alpha) * p.powf(gamma);
                (
                    w * nll_q,
                    (1.0 - alpha) * p.powf(gamma) * (p + gamma * q * nll_q),
                )
            }
        }
    }
}
