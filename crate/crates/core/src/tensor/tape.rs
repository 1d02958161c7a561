use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{ops, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, k: Var, stride: usize, pad: usize },
    Bilinear { x: Var, xy: Arc<[[f64; 2]]> },
    Sigmoid { x: Var },
    Softmax { x: Var, axis: usize },
    Mul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Affine { x: Var, scale: f64 },
    MulMap { x: Var, m: Var },
    AddMap { x: Var, m: Var },
    AddBias { x: Var, b: Var },
    ChannelAffine { x: Var, scale: Var, shift: Var },
    Concat { parts: Vec<Var> },
    Upsample2x { x: Var },
    ChannelMean { x: Var },
    ChannelMax { x: Var, argmax: Vec<usize> },
    Sum { x: Var },
    Reshape { x: Var },
    PoolGroups { x: Var, group: usize },
    CrossEntropy { logits: Var, probs: Tensor, targets: Arc<[Option<usize>]>, count: usize },
    BceWithLogits { x: Var, target: Arc<[f64]> },
    Dice { p: Var, target: Arc<[f64]>, eps: f64 },
    WeightedSum { parts: Vec<Var>, weights: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of primitive applications.
///
/// Forward methods evaluate eagerly and record the op; [`Tape::backward`]
/// replays the record in reverse and leaves a gradient on every node that
/// the output depends on.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(k), stride, pad)?;
        Ok(self.push(y, Op::Conv2d { x, k, stride, pad }))
    }

    /// `[C, H, W] -> [C, N]` bilinear samples; invalid points read zero.
    pub fn bilinear_sample(&mut self, x: Var, xy: Arc<[[f64; 2]]>) -> Result<Var> {
        let (y, _) = ops::bilinear_sample(self.value(x), &xy)?;
        Ok(self.push(y, Op::Bilinear { x, xy }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid { x })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let y = ops::softmax(self.value(x), axis)?;
        Ok(self.push(y, Op::Softmax { x, axis }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::elementwise_mul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Mul { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let y = self.value(x).map(|v| scale * v + shift);
        self.push(y, Op::Affine { x, scale })
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    /// `x[C,H,W] * m[1,H,W]`, broadcasting the map over channels.
    pub fn mul_map(&mut self, x: Var, m: Var) -> Result<Var> {
        let y = ops::mul_channel_map(self.value(x), self.value(m))?;
        Ok(self.push(y, Op::MulMap { x, m }))
    }

    /// `x[C,H,W] + m[1,H,W]`, broadcasting the map over channels.
    pub fn add_map(&mut self, x: Var, m: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3("add_map")?;
        let mv = self.value(m);
        if mv.shape() != [1, h, w] {
            return Err(Error::dim("add_map", "map (1,H,W)", mv.shape(), &[1, h, w]));
        }
        let plane = h * w;
        let md = mv.data();
        let xd = self.value(x).data();
        let y = Tensor::new(vec![c, h, w], (0..c * plane).map(|i| xd[i] + md[i % plane]).collect())?;
        Ok(self.push(y, Op::AddMap { x, m }))
    }

    /// `x[C,H,W] + b[c]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).dims3("add_bias")?.0;
        let ones = Tensor::ones(&[c]);
        let y = ops::channel_affine(self.value(x), &ones, self.value(b))?;
        Ok(self.push(y, Op::AddBias { x, b }))
    }

    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let y = ops::channel_affine(self.value(x), self.value(scale), self.value(shift))?;
        Ok(self.push(y, Op::ChannelAffine { x, scale, shift }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ops::concat_channels(&refs)?;
        Ok(self.push(y, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let y = ops::upsample2x_bilinear(self.value(x))?;
        Ok(self.push(y, Op::Upsample2x { x }))
    }

    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let y = ops::channel_mean(self.value(x))?;
        Ok(self.push(y, Op::ChannelMean { x }))
    }

    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = ops::channel_max(self.value(x))?;
        Ok(self.push(y, Op::ChannelMax { x, argmax }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    pub fn pool_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let y = ops::pool_groups(self.value(x), group)?;
        Ok(self.push(y, Op::PoolGroups { x, group }))
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: Arc<[Option<usize>]>) -> Result<Var> {
        let (loss, probs, count) = ops::cross_entropy(self.value(logits), &targets)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, probs, targets, count },
        ))
    }

    pub fn bce_with_logits(&mut self, x: Var, target: Arc<[f64]>) -> Result<Var> {
        let loss = ops::bce_with_logits(self.value(x), &target)?;
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { x, target }))
    }

    pub fn dice(&mut self, p: Var, target: Arc<[f64]>, eps: f64) -> Result<Var> {
        let loss = ops::dice(self.value(p), &target, eps)?;
        Ok(self.push(Tensor::scalar(loss), Op::Dice { p, target, eps }))
    }

    /// `sum_i weights[i] * parts[i]` over scalar parts.
    pub fn weighted_sum(&mut self, parts: &[Var], weights: &[f64]) -> Result<Var> {
        if parts.len() != weights.len() {
            return Err(Error::dim("weighted_sum", "weights", &[weights.len()], &[parts.len()]));
        }
        let mut total = 0.0;
        for (&p, &w) in parts.iter().zip(weights) {
            let v = self.value(p);
            if v.len() != 1 {
                return Err(Error::dim("weighted_sum", "part (scalar)", v.shape(), &[]));
            }
            total += w * v.item();
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum { parts: parts.to_vec(), weights: weights.to_vec() },
        ))
    }

    /// Reverse pass from `out`, seeded with ones (a non-scalar output is
    /// treated as its sum).
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::ones(self.value(out).shape()));
        for id in (0..=out.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            for (target, contrib) in self.local_grads(id, &g)? {
                accumulate(&mut grads[target.0], contrib)?;
            }
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn local_grads(&self, id: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[id];
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, k, stride, pad } => {
                let (gx, gk) = ops::conv2d_backward(self.value(*x), self.value(*k), g, *stride, *pad)?;
                vec![(*x, gx), (*k, gk)]
            }
            Op::Bilinear { x, xy } => {
                let dims = self.value(*x).dims3("bilinear backward")?;
                vec![(*x, ops::bilinear_scatter(g, xy, dims)?)]
            }
            Op::Sigmoid { x } => vec![(*x, out.zip_map(g, "sigmoid backward", |y, g| g * y * (1.0 - y))?)],
            Op::Softmax { x, axis } => vec![(*x, ops::softmax_backward(out, g, *axis)?)],
            Op::Mul { a, b } => vec![
                (*a, ops::elementwise_mul(g, self.value(*b))?),
                (*b, ops::elementwise_mul(g, self.value(*a))?),
            ],
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Affine { x, scale } => vec![(*x, g.scale(*scale))],
            Op::MulMap { x, m } => {
                let mv = self.value(*m);
                let gx = ops::mul_channel_map(g, mv)?;
                let gm = reduce_channels(&ops::elementwise_mul(g, self.value(*x))?)?;
                vec![(*x, gx), (*m, gm)]
            }
            Op::AddMap { x, m } => vec![(*x, g.clone()), (*m, reduce_channels(g)?)],
            Op::AddBias { x, b } => vec![(*x, g.clone()), (*b, per_channel_sum(g)?)],
            Op::ChannelAffine { x, scale, shift } => {
                let c = g.dims3("channel_affine backward")?.0;
                let zeros = Tensor::zeros(&[c]);
                let gx = ops::channel_affine(g, self.value(*scale), &zeros)?;
                let gs = per_channel_sum(&ops::elementwise_mul(g, self.value(*x))?)?;
                vec![(*x, gx), (*scale, gs), (*shift, per_channel_sum(g)?)]
            }
            Op::Concat { parts } => {
                let mut start = 0;
                let mut v = Vec::with_capacity(parts.len());
                for &p in parts {
                    let c = self.value(p).shape()[0];
                    v.push((p, g.slice_channels(start, start + c)?));
                    start += c;
                }
                v
            }
            Op::Upsample2x { x } => {
                let dims = self.value(*x).dims3("upsample backward")?;
                vec![(*x, ops::upsample2x_backward(g, dims)?)]
            }
            Op::ChannelMean { x } => {
                let (c, h, w) = self.value(*x).dims3("channel_mean backward")?;
                let gd = g.data();
                let plane = h * w;
                let gx = Tensor::from_fn(&[c, h, w], |i| gd[i % plane] / c as f64);
                vec![(*x, gx)]
            }
            Op::ChannelMax { x, argmax } => {
                let (c, h, w) = self.value(*x).dims3("channel_max backward")?;
                let plane = h * w;
                let mut gx = Tensor::zeros(&[c, h, w]);
                for (p, &a) in argmax.iter().enumerate() {
                    gx.data_mut()[a * plane + p] = g.data()[p];
                }
                vec![(*x, gx)]
            }
            Op::Sum { x } => vec![(*x, Tensor::full(self.value(*x).shape(), g.item()))],
            Op::Reshape { x } => vec![(*x, g.clone().reshape(self.value(*x).shape())?)],
            Op::PoolGroups { x, group } => {
                let gd = g.data();
                let gx = Tensor::from_fn(self.value(*x).shape(), |i| gd[i / group]);
                vec![(*x, gx)]
            }
            Op::CrossEntropy { logits, probs, targets, count } => {
                let mut gx = Tensor::zeros(probs.shape());
                if *count > 0 {
                    let scale = g.item() / *count as f64;
                    let positions = targets.len();
                    let k = probs.shape()[0];
                    let pd = probs.data();
                    let gd = gx.data_mut();
                    for (p, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for c in 0..k {
                            let i = c * positions + p;
                            gd[i] = scale * (pd[i] - if c == t { 1.0 } else { 0.0 });
                        }
                    }
                }
                vec![(*logits, gx)]
            }
            Op::BceWithLogits { x, target } => {
                let n = target.len().max(1) as f64;
                let scale = g.item() / n;
                let xd = self.value(*x).data();
                let gx = Tensor::from_fn(self.value(*x).shape(), |i| {
                    scale * (ops::sigmoid_scalar(xd[i]) - target[i])
                });
                vec![(*x, gx)]
            }
            Op::Dice { p, target, eps } => {
                let pv = self.value(*p);
                let (inter, sp, st) = ops::dice_sums(pv.data(), target);
                let denom = sp + st + eps;
                let num = 2.0 * inter + eps;
                let scale = g.item();
                let gp = Tensor::from_fn(pv.shape(), |i| {
                    -scale * (2.0 * target[i] * denom - num) / (denom * denom)
                });
                vec![(*p, gp)]
            }
            Op::WeightedSum { parts, weights } => parts
                .iter()
                .zip(weights)
                .map(|(&p, &w)| (p, Tensor::full(self.value(p).shape(), w * g.item())))
                .collect(),
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, contrib: Tensor) -> Result<()> {
    match slot {
        Some(acc) => {
            acc.expect_same_shape(&contrib, "gradient accumulation")?;
            for (a, b) in acc.data_mut().iter_mut().zip(contrib.data()) {
                *a += b;
            }
        }
        None => *slot = Some(contrib),
    }
    Ok(())
}

/// `[C, H, W] -> [1, H, W]` channel sum.
fn reduce_channels(t: &Tensor) -> Result<Tensor> {
    let (c, h, w) = t.dims3("reduce_channels")?;
    let plane = h * w;
    let d = t.data();
    Ok(Tensor::from_fn(&[1, h, w], |p| (0..c).map(|ch| d[ch * plane + p]).sum()))
}

/// `[C, H, W] -> [C]` spatial sum.
fn per_channel_sum(t: &Tensor) -> Result<Tensor> {
    let (c, h, w) = t.dims3("per_channel_sum")?;
    let plane = h * w;
    let d = t.data();
    Ok(Tensor::from_fn(&[c], |ch| d[ch * plane..(ch + 1) * plane].iter().sum()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.add(x, x).unwrap();
        let z = tape.weighted_sum(&[y, x], &[2.0, 1.0]).unwrap();
        tape.backward(z).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 5.0);
    }

    #[test]
    fn unrelated_leaf_gets_no_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let unused = tape.leaf(Tensor::scalar(1.0));
        let y = tape.sigmoid(x);
        tape.backward(y).unwrap();
        assert!(tape.grad(unused).is_none());
        // sigmoid'(1) = s(1) * (1 - s(1))
        assert!((tape.grad(x).unwrap().item() - 0.19661193324148185).abs() < 1e-15);
    }
}
