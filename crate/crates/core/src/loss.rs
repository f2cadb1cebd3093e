//! Masked topological-interaction loss and the combined training objective
//!
//! `L_total = L_ce + λ_dice·L_dice + λ_ti·L_ti`, where `L_ti` applies a
//! pixel-wise surrogate only at critical sites. The critical mask comes from
//! the argmax labels of the prediction and is treated as a constant, so no
//! gradient flows through it.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::constraints::{Connectivity, ConstraintSet};
use crate::detect::{detect, Algorithm};
use crate::error::{Error, Result};
use crate::grid::{argmax_labels, BinaryMask, LabelGrid, LikelihoodGrid};

/// Probabilities below this are clamped before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;
pub const DEFAULT_DICE_SMOOTHING: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Surrogate {
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "DICE")]
    Dice,
}

impl Surrogate {
    pub const ALL: [Surrogate; 3] = [Surrogate::Ce, Surrogate::Mse, Surrogate::Dice];
}

impl fmt::Display for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ce => "CE",
            Self::Mse => "MSE",
            Self::Dice => "DICE",
        })
    }
}

impl FromStr for Surrogate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CE" => Ok(Self::Ce),
            "MSE" => Ok(Self::Mse),
            "DICE" => Ok(Self::Dice),
            _ => Err(Error::Constraint(format!(
                "unknown surrogate {s:?} (expected CE, MSE or DICE)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub surrogate: Surrogate,
    pub lambda_dice: f64,
    pub lambda_ti: f64,
    pub dice_smoothing: f64,
}

impl LossConfig {
    /// CE surrogate, `λ_dice = 1`, and `λ_ti = 1e-4` in 2D or `1e-6` in 3D.
    pub fn for_ndim(ndim: usize) -> Self {
        Self {
            surrogate: Surrogate::Ce,
            lambda_dice: 1.0,
            lambda_ti: if ndim == 3 { 1e-6 } else { 1e-4 },
            dice_smoothing: DEFAULT_DICE_SMOOTHING,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dice_smoothing.is_finite() && self.dice_smoothing > 0.0) {
            return Err(Error::Constraint(format!(
                "dice smoothing must be positive, got {}",
                self.dice_smoothing
            )));
        }
        for (name, w) in [
            ("lambda_dice", self.lambda_dice),
            ("lambda_ti", self.lambda_ti),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Constraint(format!(
                    "{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_ce: f64,
    pub l_dice: f64,
    pub l_ti: f64,
    pub l_total: f64,
    /// `∂L_total/∂f`, class-major like the likelihood grid.
    pub gradient: Option<LikelihoodGrid>,
    /// Masked or unmasked sites where a target probability hit the log floor.
    pub underflow_sites: usize,
    /// Number of critical sites the loss was restricted to.
    pub critical_sites: usize,
}

/// Scalar loss plus its gradient with respect to the likelihood values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub underflow_sites: usize,
}

fn check_shapes(f: &LikelihoodGrid, g: &LabelGrid, v: Option<&BinaryMask>) -> Result<()> {
    if f.shape() != g.shape() {
        return Err(Error::ShapeMismatch(format!(
            "likelihood {:?} vs labels {:?}",
            f.dims(),
            g.dims()
        )));
    }
    if f.num_classes() != g.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "likelihood has {} classes, labels {}",
            f.num_classes(),
            g.num_classes()
        )));
    }
    if let Some(v) = v {
        if v.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} vs labels {:?}",
                v.dims(),
                g.dims()
            )));
        }
    }
    Ok(())
}

/// Evaluates a surrogate over the sites selected by `mask` (all sites when
/// `None`) and adds `scale · ∂value/∂f` into `grad`.
fn surrogate_terms(
    f: &LikelihoodGrid,
    g: &LabelGrid,
    mask: Option<&[bool]>,
    surrogate: Surrogate,
    eps: f64,
    scale: f64,
    mut grad: Option<&mut [f64]>,
) -> (f64, usize) {
    let n = f.sites();
    let c = usize::from(f.num_classes());
    let selected = |i: usize| mask.is_none_or(|m| m[i]);
    let count = mask.map_or(n, |m| m.iter().filter(|&&b| b).count());
    let labels = g.labels();

    match surrogate {
        Surrogate::Ce => {
            if count == 0 {
                return (0.0, 0);
            }
            let inv = 1.0 / count as f64;
            let mut sum = 0.0;
            let mut underflow = 0;
            for i in (0..n).filter(|&i| selected(i)) {
                let k = usize::from(labels[i]);
                let p = f.at(k, i);
                if p <= PROBABILITY_FLOOR {
                    underflow += 1;
                    sum -= PROBABILITY_FLOOR.ln();
                } else {
                    sum -= p.ln();
                    if let Some(grad) = grad.as_deref_mut() {
                        grad[k * n + i] -= scale * inv / p;
                    }
                }
            }
            (sum * inv, underflow)
        }
        Surrogate::Mse => {
            if count == 0 {
                return (0.0, 0);
            }
            let inv = 1.0 / (count * c) as f64;
            let mut sum = 0.0;
            for k in 0..c {
                for i in (0..n).filter(|&i| selected(i)) {
                    let target = if usize::from(labels[i]) == k {
                        1.0
                    } else {
                        0.0
                    };
                    let diff = f.at(k, i) - target;
                    sum += diff * diff;
                    if let Some(grad) = grad.as_deref_mut() {
                        grad[k * n + i] += scale * 2.0 * diff * inv;
                    }
                }
            }
            (sum * inv, 0)
        }
        Surrogate::Dice => {
            if count == 0 {
                return (0.0, 0);
            }
            let mut mean_ratio = 0.0;
            for k in 0..c {
                let (mut inter, mut pred_sq, mut target) = (0.0, 0.0, 0.0);
                for i in (0..n).filter(|&i| selected(i)) {
                    let p = f.at(k, i);
                    pred_sq += p * p;
                    if usize::from(labels[i]) == k {
                        inter += p;
                        target += 1.0;
                    }
                }
                let num = 2.0 * inter + eps;
                let den = pred_sq + target + eps;
                mean_ratio += num / den;
                if let Some(grad) = grad.as_deref_mut() {
                    // d(num/den)/dp = (2·y·den − num·2p) / den²; the loss is 1 − mean.
                    let w = -scale / (c as f64 * den * den);
                    for i in (0..n).filter(|&i| selected(i)) {
                        let y = if usize::from(labels[i]) == k {
                            1.0
                        } else {
                            0.0
                        };
                        grad[k * n + i] += w * (2.0 * y * den - 2.0 * num * f.at(k, i));
                    }
                }
            }
            (1.0 - mean_ratio / c as f64, 0)
        }
    }
}

/// Surrogate loss restricted to the sites set in `v`; 0 when `v` is empty.
pub fn masked_loss(
    f: &LikelihoodGrid,
    g: &LabelGrid,
    v: &BinaryMask,
    surrogate: Surrogate,
    eps: f64,
) -> Result<f64> {
    Ok(masked_loss_grad(f, g, v, surrogate, eps)?.value)
}

/// [`masked_loss`] together with its dense gradient.
pub fn masked_loss_grad(
    f: &LikelihoodGrid,
    g: &LabelGrid,
    v: &BinaryMask,
    surrogate: Surrogate,
    eps: f64,
) -> Result<LossValue> {
    check_shapes(f, g, Some(v))?;
    if surrogate == Surrogate::Ce && !f.is_normalized() {
        return Err(Error::NotNormalized(
            "the CE surrogate needs per-site probabilities summing to 1".into(),
        ));
    }
    let mut gradient = vec![0.0; f.values().len()];
    let (value, underflow_sites) = surrogate_terms(
        f,
        g,
        Some(v.bits()),
        surrogate,
        eps,
        1.0,
        Some(&mut gradient),
    );
    Ok(LossValue {
        value,
        gradient,
        underflow_sites,
    })
}

/// Combined objective with a caller-supplied critical mask.
pub fn total_loss_with_mask(
    f: &LikelihoodGrid,
    g: &LabelGrid,
    v: &BinaryMask,
    cfg: &LossConfig,
    want_gradient: bool,
) -> Result<LossReport> {
    cfg.validate()?;
    check_shapes(f, g, Some(v))?;
    if cfg.surrogate == Surrogate::Ce && !f.is_normalized() {
        return Err(Error::NotNormalized(
            "the CE surrogate needs per-site probabilities summing to 1".into(),
        ));
    }
    let eps = cfg.dice_smoothing;
    let mut grad = want_gradient.then(|| vec![0.0; f.values().len()]);

    let (l_ce, u_ce) = surrogate_terms(f, g, None, Surrogate::Ce, eps, 1.0, grad.as_deref_mut());
    let (l_dice, _) = surrogate_terms(
        f,
        g,
        None,
        Surrogate::Dice,
        eps,
        cfg.lambda_dice,
        grad.as_deref_mut(),
    );
    let (l_ti, u_ti) = surrogate_terms(
        f,
        g,
        Some(v.bits()),
        cfg.surrogate,
        eps,
        cfg.lambda_ti,
        grad.as_deref_mut(),
    );
    let gradient = grad
        .map(|values| LikelihoodGrid::from_shape(f.shape(), f.num_classes(), values, false))
        .transpose()?;
    Ok(LossReport {
        l_ce,
        l_dice,
        l_ti,
        l_total: l_ce + cfg.lambda_dice * l_dice + cfg.lambda_ti * l_ti,
        gradient,
        underflow_sites: u_ce + u_ti,
        critical_sites: v.count(),
    })
}

/// Combined objective. The critical mask is detected on the argmax labels
/// of `f`.
pub fn total_loss(
    f: &LikelihoodGrid,
    g: &LabelGrid,
    cs: &ConstraintSet,
    conn: Connectivity,
    cfg: &LossConfig,
    want_gradient: bool,
) -> Result<LossReport> {
    check_shapes(f, g, None)?;
    let predicted = argmax_labels(f);
    let detection = detect(&predicted, cs, conn, Algorithm::Auto)?;
    total_loss_with_mask(f, g, &detection.mask, cfg, want_gradient)
}
