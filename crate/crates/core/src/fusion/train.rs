use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{dyn_head_tape, FusionConfig, FusionWeights};
use crate::error::{Error, Result};
use crate::losses::dyn_loss_tape;
use crate::occ::BevMap;
use crate::tensor::{Tape, Tensor};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("Adam::step", "grads vs params", &[grads.len()], &[params.len()]));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            p.expect_same_shape(g, "Adam::step")?;
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (x, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *x -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// A street BEV whose first channel is `+1` on dynamic cells and `-1`
/// elsewhere, the rest noise, together with its mask of random boxes.
pub fn synthetic_dyn_scene(size: usize, channels: usize, seed: u64) -> (Tensor, BevMap<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = BevMap::filled(size, size, false);
    for _ in 0..(size / 6).max(2) {
        let (w, h) = (rng.random_range(2..=5), rng.random_range(2..=4));
        let (x0, y0) = (rng.random_range(0..size - w), rng.random_range(0..size - h));
        for x in x0..x0 + w {
            for y in y0..y0 + h {
                mask.set(x, y, true);
            }
        }
    }
    let plane = size * size;
    let noise = Tensor::randn(&[channels, size, size], 0.5, &mut rng);
    let street = Tensor::from_fn(&[channels, size, size], |i| {
        if i < plane {
            if mask.data[i] { 1.0 } else { -1.0 }
        } else {
            noise.data()[i]
        }
    });
    (street, mask)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub losses: Vec<f64>,
    pub final_loss: f64,
    /// IoU of `map > 0.5` against the target mask.
    pub iou: f64,
}

/// Trains only the dynamic head on one scene with Adam and reports the
/// loss curve and thresholded IoU after the last step.
pub fn fit_dyn_head(street: &Tensor, target: &BevMap<bool>, steps: usize, lr: f64, seed: u64) -> Result<FitReport> {
    Ok(train_dyn_head(street, target, steps, lr, seed)?.1)
}

/// [`fit_dyn_head`], also returning the trained weights. Only `dyn_k` and
/// `dyn_b` differ from their seeded initialization.
pub fn train_dyn_head(
    street: &Tensor,
    target: &BevMap<bool>,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(FusionWeights, FitReport)> {
    let (c, _, _) = street.dims3("fit_dyn_head")?;
    let cfg = FusionConfig { bev_channels: c, ..FusionConfig::default() };
    let mut w = FusionWeights::random(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut opt = Adam::new(lr);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let k = tape.leaf(w.dyn_k.clone());
        let b = tape.leaf(w.dyn_b.clone());
        let x = tape.leaf(street.clone());
        let pre = tape.conv2d(x, k, 1, 1)?;
        let pre = tape.add_bias(pre, b)?;
        let loss = dyn_loss_tape(&mut tape, pre, target)?;
        losses.push(tape.value(loss).item());
        tape.backward(loss)?;
        let (gk, gb) = (tape.grad(k).unwrap().clone(), tape.grad(b).unwrap().clone());
        opt.step(&mut [&mut w.dyn_k, &mut w.dyn_b], &[&gk, &gb])?;
    }
    let mut tape = Tape::new();
    let vars = w.record(&mut tape);
    let x = tape.leaf(street.clone());
    let (pre, map) = dyn_head_tape(&mut tape, x, &vars)?;
    let final_loss = {
        let l = dyn_loss_tape(&mut tape, pre, target)?;
        tape.value(l).item()
    };
    let m = tape.value(map).data();
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in m.iter().zip(&target.data) {
        let p = p > 0.5;
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok((w, FitReport { losses, final_loss, iou }))
}
