//! Training losses and occupancy evaluation metrics.

mod metrics;

pub use metrics::{aggregate, aggregate_defined, iou_per_class, IouCounts, MetricReport};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::DynAttention;
use crate::occ::BevMap;
use crate::tensor::{ops, Tape, Tensor, Var};

/// Additive smoother in the Dice ratio.
pub const DICE_EPS: f64 = 1.0;

/// Mean cross-entropy of `[K, ...]` logits; positions whose target equals
/// `ignore` are skipped.
pub fn ce_loss(logits: &Tensor, targets: &[usize], ignore: Option<usize>) -> Result<f64> {
    let t = mask_ignored(targets, ignore);
    Ok(ops::cross_entropy(logits, &t)?.0)
}

pub fn ce_loss_tape(tape: &mut Tape, logits: Var, targets: &[usize], ignore: Option<usize>) -> Result<Var> {
    tape.cross_entropy(logits, mask_ignored(targets, ignore).into())
}

fn mask_ignored(targets: &[usize], ignore: Option<usize>) -> Vec<Option<usize>> {
    targets.iter().map(|&t| (Some(t) != ignore).then_some(t)).collect()
}

/// `1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)` with `eps = 1`.
pub fn dice_loss(probs: &Tensor, target: &[f64]) -> Result<f64> {
    ops::dice(probs, target, DICE_EPS)
}

pub fn dice_loss_tape(tape: &mut Tape, probs: Var, target: Arc<[f64]>) -> Result<Var> {
    tape.dice(probs, target, DICE_EPS)
}

fn mask_target(pre_shape: &[usize], target: &BevMap<bool>) -> Result<Arc<[f64]>> {
    if pre_shape != [1, target.nx, target.ny] {
        return Err(Error::dim("dyn_loss", "attention (1,X,Y) vs mask", pre_shape, &[1, target.nx, target.ny]));
    }
    Ok(target.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
}

/// Binary cross-entropy of the attention map plus its Dice loss.
pub fn dyn_loss(dyn_att: &DynAttention, target: &BevMap<bool>) -> Result<f64> {
    let t = mask_target(dyn_att.pre_activation.shape(), target)?;
    Ok(ops::bce_with_logits(&dyn_att.pre_activation, &t)? + dice_loss(&dyn_att.map, &t)?)
}

/// [`dyn_loss`] on a tape, from the pre-activation logits.
pub fn dyn_loss_tape(tape: &mut Tape, pre_activation: Var, target: &BevMap<bool>) -> Result<Var> {
    let t = mask_target(tape.value(pre_activation).shape(), target)?;
    let bce = tape.bce_with_logits(pre_activation, t.clone())?;
    let map = tape.sigmoid(pre_activation);
    let dice = dice_loss_tape(tape, map, t)?;
    tape.weighted_sum(&[bce, dice], &[1.0, 1.0])
}

/// Coefficients of the auxiliary terms in the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sem: f64,
    pub hgt: f64,
    pub depth: f64,
    #[serde(rename = "dyn")]
    pub dyn_: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { sem: 0.5, hgt: 0.05, depth: 0.05, dyn_: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.sem, self.hgt, self.depth, self.dyn_].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }

    /// Coefficients in `[sem, hgt, depth, dyn, occ]` order.
    pub fn coefficients(&self) -> [f64; 5] {
        [self.sem, self.hgt, self.depth, self.dyn_, 1.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub sem: f64,
    pub hgt: f64,
    pub depth: f64,
    #[serde(rename = "dyn")]
    pub dyn_: f64,
    pub occ: f64,
}

/// `sem*λ0 + hgt*λ1 + depth*λ2 + dyn*λ3 + occ`.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let values = [parts.sem, parts.hgt, parts.depth, parts.dyn_, parts.occ];
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite loss part {bad} in {parts:?}")));
    }
    Ok(values.iter().zip(w.coefficients()).map(|(v, c)| v * c).sum())
}

/// [`total_loss`] over scalar parts `[sem, hgt, depth, dyn, occ]` on a tape.
pub fn total_loss_tape(tape: &mut Tape, parts: [Var; 5], w: &LossWeights) -> Result<Var> {
    w.validate()?;
    for &p in &parts {
        let v = tape.value(p);
        if v.len() != 1 || !v.item().is_finite() {
            return Err(Error::Numeric(format!("loss part must be a finite scalar, got shape {:?}", v.shape())));
        }
    }
    tape.weighted_sum(&parts, &w.coefficients())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check_many;

    #[test]
    fn ce_confident_and_uniform() {
        let mut logits = Tensor::zeros(&[3, 4]);
        for p in 0..4 {
            logits.set(&[p % 3, p], 50.0);
        }
        assert!(ce_loss(&logits, &[0, 1, 2, 0], None).unwrap() < 1e-6);
        let uniform = Tensor::zeros(&[4, 2, 2]);
        assert!((ce_loss(&uniform, &[0, 1, 2, 3], None).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(ce_loss(&uniform, &[0, 1, 2, 4], None).unwrap_err().kind(), "label");
        // an ignored id may lie outside 0..K
        assert!(ce_loss(&uniform, &[0, 255, 255, 255], Some(255)).is_ok());
    }

    #[test]
    fn dice_closed_forms() {
        let t = [1.0, 0.0, 1.0, 1.0];
        let p = Tensor::new(vec![1, 2, 2], t.to_vec()).unwrap();
        assert_eq!(dice_loss(&p, &t).unwrap(), 0.0);
        let zero = Tensor::zeros(&[1, 2, 2]);
        assert!((dice_loss(&zero, &t).unwrap() - (1.0 - 1.0 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn dyn_loss_half_map_closed_form() {
        let pre = Tensor::zeros(&[1, 2, 4]);
        let dyn_att = DynAttention::from_pre_activation(pre);
        let mut target = BevMap::filled(2, 4, false);
        for j in 0..4 {
            target.set(0, j, true);
        }
        // BCE(0.5) = ln 2; Dice = 1 - (2*2 + 1) / (4 + 4 + 1)
        let want = 2f64.ln() + (1.0 - 5.0 / 9.0);
        assert!((dyn_loss(&dyn_att, &target).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn dyn_loss_saturated_is_small() {
        let mut target = BevMap::filled(3, 3, false);
        target.set(1, 1, true);
        target.set(2, 0, true);
        let pre = Tensor::from_fn(&[1, 3, 3], |i| if target.data[i] { 20.0 } else { -20.0 });
        assert!(dyn_loss(&DynAttention::from_pre_activation(pre), &target).unwrap() < 1e-3);
    }

    #[test]
    fn dyn_loss_dim_mismatch() {
        let dyn_att = DynAttention::from_pre_activation(Tensor::zeros(&[1, 2, 2]));
        assert_eq!(dyn_loss(&dyn_att, &BevMap::filled(3, 2, false)).unwrap_err().kind(), "dimension");
    }

    #[test]
    fn total_loss_values() {
        let ones = LossParts { sem: 1.0, hgt: 1.0, depth: 1.0, dyn_: 1.0, occ: 1.0 };
        assert!((total_loss(&ones, &LossWeights::default()).unwrap() - 1.8).abs() < 1e-15);
        let only_occ = LossWeights { sem: 0.0, hgt: 0.0, depth: 0.0, dyn_: 0.0 };
        let parts = LossParts { occ: 0.7, ..ones };
        assert_eq!(total_loss(&parts, &only_occ).unwrap(), 0.7);
        let bad = LossParts { hgt: f64::NAN, ..ones };
        assert_eq!(total_loss(&bad, &LossWeights::default()).unwrap_err().kind(), "numeric");
    }

    #[test]
    fn total_loss_gradient_is_lambda() {
        let w = LossWeights::default();
        let parts: Vec<Tensor> = (0..5).map(|i| Tensor::scalar(0.3 + i as f64)).collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = parts.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = total_loss_tape(&mut tape, vars.clone().try_into().unwrap(), &w).unwrap();
        tape.backward(out).unwrap();
        for (v, c) in vars.iter().zip(w.coefficients()) {
            assert_eq!(tape.grad(*v).unwrap().item(), c);
        }
        let err = finite_diff_check_many(
            |t, v| total_loss_tape(t, [v[0], v[1], v[2], v[3], v[4]], &w),
            &parts,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9);
    }
}
