//! Satellite/street fusion operators: soft gated convolution, U-shape
//! fusion, the dynamic-region head, dynamic-decoupling fusion and the
//! dynamic-encoding spatial attention.
//!
//! Every operator has a `_tape` form that records onto a [`Tape`] and a
//! plain form that evaluates it once.

mod checkpoint;
mod train;

pub use checkpoint::{load_weights, save_weights, WEIGHTS_MAGIC};
pub use train::{fit_dyn_head, synthetic_dyn_scene, train_dyn_head, Adam, FitReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Side of the spatial-attention kernel.
pub const SA_KERNEL: usize = 7;

/// Channel plan of the fusion stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Channels of the raw satellite image.
    pub image_channels: usize,
    /// Channels of the gated half-resolution satellite features.
    pub gate_channels: usize,
    /// BEV feature channels shared by both branches.
    pub bev_channels: usize,
    /// Channels of the forward-splat BEV features.
    pub lss_channels: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { image_channels: 3, gate_channels: 8, bev_channels: 8, lss_channels: 4 }
    }
}

/// Learnable parameters of the fusion operators.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    /// `[Cg, Cimg, 3, 3]` stride-2 gate conv.
    pub gate_k: Tensor,
    /// `[Cg]` inference-mode batch-norm scale and shift of the gate conv.
    pub gate_scale: Tensor,
    pub gate_shift: Tensor,
    /// `[Cg, Cimg, 3, 3]` stride-2 feature conv.
    pub feat_k: Tensor,
    /// `[1, C, 3, 3]` and `[1]`.
    pub dyn_k: Tensor,
    pub dyn_b: Tensor,
    /// `[C, 2C, 3, 3]`.
    pub ddf_k: Tensor,
    /// `[1, 2, 7, 7]`.
    pub sa_k: Tensor,
    /// `[C, D + C, 1, 1]`.
    pub dual_k: Tensor,
}

pub(crate) const WEIGHT_NAMES: [&str; 9] =
    ["gate_k", "gate_scale", "gate_shift", "feat_k", "dyn_k", "dyn_b", "ddf_k", "sa_k", "dual_k"];

impl FusionWeights {
    pub fn shapes(cfg: &FusionConfig) -> [Vec<usize>; 9] {
        let FusionConfig { image_channels: ci, gate_channels: cg, bev_channels: c, lss_channels: d } = *cfg;
        [
            vec![cg, ci, 3, 3],
            vec![cg],
            vec![cg],
            vec![cg, ci, 3, 3],
            vec![1, c, 3, 3],
            vec![1],
            vec![c, 2 * c, 3, 3],
            vec![1, 2, SA_KERNEL, SA_KERNEL],
            vec![c, d + c, 1, 1],
        ]
    }

    /// Convolutions drawn from `N(0, 1 / fan_in)`, biases zero, batch-norm
    /// scale one.
    pub fn random(cfg: &FusionConfig, rng: &mut impl Rng) -> Self {
        let tensors = Self::shapes(cfg).map(|shape| {
            let fan_in: usize = shape.iter().skip(1).product();
            match shape.len() {
                1 => Tensor::zeros(&shape),
                _ => Tensor::randn(&shape, 1.0 / (fan_in as f64).sqrt(), rng),
            }
        });
        let mut w = Self::from_array(tensors);
        w.gate_scale = Tensor::ones(w.gate_scale.shape());
        w
    }

    pub fn zeros(cfg: &FusionConfig) -> Self {
        let mut w = Self::from_array(Self::shapes(cfg).map(|s| Tensor::zeros(&s)));
        w.gate_scale = Tensor::ones(w.gate_scale.shape());
        w
    }

    fn from_array(t: [Tensor; 9]) -> Self {
        let [gate_k, gate_scale, gate_shift, feat_k, dyn_k, dyn_b, ddf_k, sa_k, dual_k] = t;
        Self { gate_k, gate_scale, gate_shift, feat_k, dyn_k, dyn_b, ddf_k, sa_k, dual_k }
    }

    /// Parameters in checkpoint order.
    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.gate_k,
            &self.gate_scale,
            &self.gate_shift,
            &self.feat_k,
            &self.dyn_k,
            &self.dyn_b,
            &self.ddf_k,
            &self.sa_k,
            &self.dual_k,
        ]
    }

    /// The channel plan implied by the tensor shapes.
    pub fn config(&self) -> FusionConfig {
        let g = self.gate_k.shape();
        let c = self.dyn_k.shape()[1];
        FusionConfig {
            image_channels: g[1],
            gate_channels: g[0],
            bev_channels: c,
            lss_channels: self.dual_k.shape()[1] - c,
        }
    }

    /// Builds weights from checkpoint-ordered tensors, checking that every
    /// shape agrees with one channel plan.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let t: [Tensor; 9] = tensors
            .try_into()
            .map_err(|v: Vec<Tensor>| Error::Format(format!("expected 9 weight tensors, found {}", v.len())))?;
        for (name, x) in WEIGHT_NAMES.iter().zip(&t) {
            if !x.all_finite() {
                return Err(Error::Numeric(format!("weight {name} has non-finite entries")));
            }
        }
        let rank_ok = [4, 1, 1, 4, 4, 1, 4, 4, 4].iter().zip(&t).all(|(&r, x)| x.rank() == r);
        if !rank_ok || t[6].shape()[0] == 0 || t[4].shape()[1] == 0 || t[8].shape()[1] < t[4].shape()[1] {
            return Err(Error::Format("weight tensors do not form a fusion channel plan".into()));
        }
        let w = Self::from_array(t);
        let cfg = w.config();
        for ((name, want), x) in WEIGHT_NAMES.iter().zip(Self::shapes(&cfg)).zip(w.tensors()) {
            if x.shape() != want.as_slice() {
                return Err(Error::dim("FusionWeights", format!("{name} shape"), x.shape(), &want));
            }
        }
        Ok(w)
    }

    /// Puts every parameter on `tape` as a leaf.
    pub fn record(&self, tape: &mut Tape) -> FusionVars {
        FusionVars {
            gate_k: tape.leaf(self.gate_k.clone()),
            gate_scale: tape.leaf(self.gate_scale.clone()),
            gate_shift: tape.leaf(self.gate_shift.clone()),
            feat_k: tape.leaf(self.feat_k.clone()),
            dyn_k: tape.leaf(self.dyn_k.clone()),
            dyn_b: tape.leaf(self.dyn_b.clone()),
            ddf_k: tape.leaf(self.ddf_k.clone()),
            sa_k: tape.leaf(self.sa_k.clone()),
            dual_k: tape.leaf(self.dual_k.clone()),
        }
    }
}

/// Tape handles of the [`FusionWeights`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionVars {
    pub gate_k: Var,
    pub gate_scale: Var,
    pub gate_shift: Var,
    pub feat_k: Var,
    pub dyn_k: Var,
    pub dyn_b: Var,
    pub ddf_k: Var,
    pub sa_k: Var,
    pub dual_k: Var,
}

/// Dynamic-region attention: logits and their sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct DynAttention {
    /// `[1, X, Y]`.
    pub pre_activation: Tensor,
    /// `sigmoid(pre_activation)`.
    pub map: Tensor,
}

impl DynAttention {
    pub fn from_pre_activation(pre_activation: Tensor) -> Self {
        let map = crate::tensor::ops::sigmoid(&pre_activation);
        Self { pre_activation, map }
    }
}

fn eval(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let out = f(&mut tape)?;
    Ok(tape.value(out).clone())
}

/// `sigmoid(BN(conv_s2(S, gate))) * conv_s2(S, feat)`, halving H and W.
pub fn soft_gate_tape(tape: &mut Tape, s: Var, w: &FusionVars) -> Result<Var> {
    let (_, h, wd) = tape.value(s).dims3("soft_gate")?;
    if h % 2 != 0 || wd % 2 != 0 {
        return Err(Error::dim("soft_gate", "H,W (must be even)", &[h, wd], &[h + h % 2, wd + wd % 2]));
    }
    let g = tape.conv2d(s, w.gate_k, 2, 1)?;
    let g = tape.channel_affine(g, w.gate_scale, w.gate_shift)?;
    let alpha = tape.sigmoid(g);
    let f = tape.conv2d(s, w.feat_k, 2, 1)?;
    tape.mul(f, alpha)
}

pub fn soft_gate(s: &Tensor, w: &FusionWeights) -> Result<Tensor> {
    eval(|t| {
        let v = w.record(t);
        let x = t.leaf(s.clone());
        soft_gate_tape(t, x, &v)
    })
}

/// `half ⊕ up2(quarter ⊕ up2(context))`.
pub fn u_fuse_tape(tape: &mut Tape, half: Var, quarter: Var, context: Var) -> Result<Var> {
    let (_, hh, hw) = tape.value(half).dims3("u_fuse")?;
    let (_, qh, qw) = tape.value(quarter).dims3("u_fuse")?;
    let (_, ch, cw) = tape.value(context).dims3("u_fuse")?;
    if (qh, qw) != (2 * ch, 2 * cw) {
        return Err(Error::dim("u_fuse", "quarter (H,W) vs 2x context", &[qh, qw], &[2 * ch, 2 * cw]));
    }
    if (hh, hw) != (2 * qh, 2 * qw) {
        return Err(Error::dim("u_fuse", "half (H,W) vs 2x quarter", &[hh, hw], &[2 * qh, 2 * qw]));
    }
    let up = tape.upsample2x(context)?;
    let f1 = tape.concat_channels(&[quarter, up])?;
    let up = tape.upsample2x(f1)?;
    tape.concat_channels(&[half, up])
}

pub fn u_fuse(half: &Tensor, quarter: &Tensor, context: &Tensor) -> Result<Tensor> {
    eval(|t| {
        let (a, b, c) = (t.leaf(half.clone()), t.leaf(quarter.clone()), t.leaf(context.clone()));
        u_fuse_tape(t, a, b, c)
    })
}

/// 3x3 conv with bias to one channel; returns `(pre_activation, map)`.
pub fn dyn_head_tape(tape: &mut Tape, street: Var, w: &FusionVars) -> Result<(Var, Var)> {
    let pre = tape.conv2d(street, w.dyn_k, 1, 1)?;
    let pre = tape.add_bias(pre, w.dyn_b)?;
    let map = tape.sigmoid(pre);
    Ok((pre, map))
}

pub fn dyn_head(street: &Tensor, w: &FusionWeights) -> Result<DynAttention> {
    let pre = eval(|t| {
        let v = w.record(t);
        let x = t.leaf(street.clone());
        Ok(dyn_head_tape(t, x, &v)?.0)
    })?;
    Ok(DynAttention::from_pre_activation(pre))
}

/// `conv3x3([f_sat * (1 - map); f_street])`.
pub fn ddf_fuse_tape(tape: &mut Tape, sat: Var, street: Var, map: Var, w: &FusionVars) -> Result<Var> {
    let sat_shape = tape.value(sat).shape().to_vec();
    let street_shape = tape.value(street).shape().to_vec();
    if sat_shape != street_shape {
        return Err(Error::dim("ddf_fuse", "f_sat vs f_street (C,X,Y)", &sat_shape, &street_shape));
    }
    let keep = tape.one_minus(map);
    let gated = tape.mul_map(sat, keep)?;
    let cat = tape.concat_channels(&[gated, street])?;
    tape.conv2d(cat, w.ddf_k, 1, 1)
}

pub fn ddf_fuse(sat: &Tensor, street: &Tensor, dyn_att: &DynAttention, w: &FusionWeights) -> Result<Tensor> {
    eval(|t| {
        let v = w.record(t);
        let (a, b, m) = (t.leaf(sat.clone()), t.leaf(street.clone()), t.leaf(dyn_att.map.clone()));
        ddf_fuse_tape(t, a, b, m, &v)
    })
}

/// `sigmoid(SA(f) + pre_activation) * f` with
/// `SA(f) = conv7x7([mean_c f; max_c f])`.
pub fn dsa_refine_tape(tape: &mut Tape, f: Var, pre_activation: Var, w: &FusionVars) -> Result<Var> {
    let mean = tape.channel_mean(f)?;
    let max = tape.channel_max(f)?;
    let pooled = tape.concat_channels(&[mean, max])?;
    let sa = tape.conv2d(pooled, w.sa_k, 1, SA_KERNEL / 2)?;
    let logits = tape.add(sa, pre_activation)?;
    let att = tape.sigmoid(logits);
    tape.mul_map(f, att)
}

pub fn dsa_refine(f: &Tensor, dyn_att: &DynAttention, w: &FusionWeights) -> Result<Tensor> {
    eval(|t| {
        let v = w.record(t);
        let (x, p) = (t.leaf(f.clone()), t.leaf(dyn_att.pre_activation.clone()));
        dsa_refine_tape(t, x, p, &v)
    })
}

/// `conv1x1([f_lss; f_unisa])`, projecting `D + C` channels to `C`.
pub fn dual_feature_fuse_tape(tape: &mut Tape, lss: Var, unisa: Var, w: &FusionVars) -> Result<Var> {
    let cat = tape.concat_channels(&[lss, unisa])?;
    tape.conv2d(cat, w.dual_k, 1, 0)
}

pub fn dual_feature_fuse(lss: &Tensor, unisa: &Tensor, w: &FusionWeights) -> Result<Tensor> {
    eval(|t| {
        let v = w.record(t);
        let (a, b) = (t.leaf(lss.clone()), t.leaf(unisa.clone()));
        dual_feature_fuse_tape(t, a, b, &v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> FusionConfig {
        FusionConfig { image_channels: 3, gate_channels: 4, bev_channels: 3, lss_channels: 2 }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn soft_gate_open_and_closed() {
        let mut r = rng(1);
        let s = Tensor::uniform(&[3, 8, 8], 0.0, 1.0, &mut r);
        let mut w = FusionWeights::random(&cfg(), &mut r);
        let ungated = crate::tensor::ops::conv2d(&s, &w.feat_k, 2, 1).unwrap();
        w.gate_k = Tensor::zeros(w.gate_k.shape());
        w.gate_shift = Tensor::full(&[4], 60.0);
        let open = soft_gate(&s, &w).unwrap();
        assert_eq!(open.shape(), &[4, 4, 4]);
        assert!(open.max_abs_diff(&ungated).unwrap() < 1e-9);
        w.gate_shift = Tensor::full(&[4], -60.0);
        let closed = soft_gate(&s, &w).unwrap();
        assert!(closed.data().iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn soft_gate_rejects_odd_dims() {
        let w = FusionWeights::zeros(&cfg());
        assert_eq!(soft_gate(&Tensor::zeros(&[3, 7, 8]), &w).unwrap_err().kind(), "dimension");
    }

    #[test]
    fn u_fuse_shapes_and_slices() {
        let mut r = rng(2);
        let half = Tensor::randn(&[2, 16, 16], 1.0, &mut r);
        let quarter = Tensor::randn(&[3, 8, 8], 1.0, &mut r);
        let ctx = Tensor::randn(&[4, 4, 4], 1.0, &mut r);
        let out = u_fuse(&half, &quarter, &ctx).unwrap();
        assert_eq!(out.shape(), &[9, 16, 16]);
        assert_eq!(out.slice_channels(0, 2).unwrap(), half);
        let zero = u_fuse(&Tensor::zeros(&[2, 16, 16]), &Tensor::zeros(&[3, 8, 8]), &Tensor::zeros(&[4, 4, 4])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert!(u_fuse(&half, &quarter, &Tensor::zeros(&[4, 5, 4])).is_err());
        assert!(u_fuse(&Tensor::zeros(&[2, 8, 8]), &quarter, &ctx).is_err());
    }

    #[test]
    fn dyn_head_zero_weights_is_half() {
        let w = FusionWeights::zeros(&cfg());
        let d = dyn_head(&Tensor::randn(&[3, 5, 6], 1.0, &mut rng(3)), &w).unwrap();
        assert!(d.map.data().iter().all(|&v| v == 0.5));
        let w = FusionWeights::random(&cfg(), &mut rng(4));
        let d = dyn_head(&Tensor::randn(&[3, 5, 6], 3.0, &mut rng(5)), &w).unwrap();
        assert!(d.map.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn ddf_full_pass_and_suppression() {
        let mut r = rng(6);
        let w = FusionWeights::random(&cfg(), &mut r);
        let sat = Tensor::randn(&[3, 5, 5], 1.0, &mut r);
        let street = Tensor::randn(&[3, 5, 5], 1.0, &mut r);
        let pass = DynAttention { pre_activation: Tensor::full(&[1, 5, 5], f64::NEG_INFINITY), map: Tensor::zeros(&[1, 5, 5]) };
        let cat = crate::tensor::ops::concat_channels(&[&sat, &street]).unwrap();
        let want = crate::tensor::ops::conv2d(&cat, &w.ddf_k, 1, 1).unwrap();
        assert_eq!(ddf_fuse(&sat, &street, &pass, &w).unwrap(), want);

        let full = DynAttention { pre_activation: Tensor::full(&[1, 5, 5], f64::INFINITY), map: Tensor::ones(&[1, 5, 5]) };
        let a = ddf_fuse(&sat, &street, &full, &w).unwrap();
        let b = ddf_fuse(&sat.map(|v| 1e6 * v - 3.0), &street, &full, &w).unwrap();
        assert_eq!(a, b);
        assert!(ddf_fuse(&sat, &Tensor::zeros(&[3, 5, 4]), &full, &w).is_err());
    }

    #[test]
    fn dsa_zero_weights_halves_input() {
        let w = FusionWeights::zeros(&cfg());
        let f = Tensor::randn(&[3, 6, 6], 1.0, &mut rng(7));
        let d = DynAttention::from_pre_activation(Tensor::zeros(&[1, 6, 6]));
        assert_eq!(dsa_refine(&f, &d, &w).unwrap(), f.scale(0.5));
    }

    #[test]
    fn dual_fuse_identity_block() {
        let mut w = FusionWeights::zeros(&cfg());
        for c in 0..3 {
            w.dual_k.set(&[c, 2 + c, 0, 0], 1.0);
        }
        let unisa = Tensor::randn(&[3, 4, 4], 1.0, &mut rng(8));
        let out = dual_feature_fuse(&Tensor::zeros(&[2, 4, 4]), &unisa, &w).unwrap();
        assert_eq!(out, unisa);
    }

    #[test]
    fn weights_from_tensors_checks_plan() {
        let w = FusionWeights::random(&cfg(), &mut rng(9));
        assert_eq!(w.config(), cfg());
        let ts: Vec<Tensor> = w.tensors().iter().map(|t| (*t).clone()).collect();
        assert_eq!(FusionWeights::from_tensors(ts.clone()).unwrap(), w);
        let mut bad = ts.clone();
        bad[7] = Tensor::zeros(&[1, 2, 5, 5]);
        assert!(FusionWeights::from_tensors(bad).is_err());
        assert!(FusionWeights::from_tensors(ts[..8].to_vec()).is_err());
    }
}
