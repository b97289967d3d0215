//! Residual 1-D convolutional network with hand-written backpropagation.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::correlation::BlockTransform;
use crate::error::{Error, Result};

const LEAK: f64 = 0.01;

/// Shape of a [`TransformNet`].
///
/// The stack is a stem convolution, `blocks` residual blocks of two
/// convolutions each, and `head_layers` output convolutions, with a skip
/// connection from input to output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub head_layers: usize,
}

impl Architecture {
    pub fn new(channels: usize) -> Self {
        Self { channels, hidden: 16, kernel: 11, blocks: 15, head_layers: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 {
            return Err(Error::invalid("network needs at least one channel"));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.head_layers == 0 {
            return Err(Error::invalid("network needs at least one output layer"));
        }
        Ok(())
    }

    pub fn conv_count(&self) -> usize {
        1 + 2 * self.blocks + self.head_layers
    }

    /// Samples of input that can influence one output sample.
    pub fn receptive_field(&self) -> usize {
        self.conv_count() * (self.kernel - 1) + 1
    }

    fn layers(&self) -> Vec<ConvShape> {
        let (l, h, k) = (self.channels, self.hidden, self.kernel);
        let mut shapes = vec![(l, h)];
        shapes.extend(std::iter::repeat_n((h, h), 2 * self.blocks + self.head_layers - 1));
        shapes.push((h, l));
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(cin, cout)| {
                let s = ConvShape { cin, cout, k, offset };
                offset += s.len();
                s
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(ConvShape::len).sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvShape {
    cin: usize,
    cout: usize,
    k: usize,
    offset: usize,
}

impl ConvShape {
    fn len(&self) -> usize {
        self.cout * self.cin * self.k + self.cout
    }

    fn bias(&self, o: usize) -> usize {
        self.offset + self.cout * self.cin * self.k + o
    }
}

/// Row-major `channels x n` feature map.
#[derive(Clone, Debug)]
struct Fmap {
    ch: usize,
    n: usize,
    d: Vec<f64>,
}

impl Fmap {
    fn zeros(ch: usize, n: usize) -> Self {
        Self { ch, n, d: vec![0.0; ch * n] }
    }

    fn from_array(a: &Array2<f64>) -> Self {
        Self { ch: a.nrows(), n: a.ncols(), d: a.iter().copied().collect() }
    }

    fn into_array(self) -> Array2<f64> {
        Array2::from_shape_vec((self.ch, self.n), self.d).expect("shape matches")
    }

    fn row(&self, c: usize) -> &[f64] {
        &self.d[c * self.n..(c + 1) * self.n]
    }

    fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.d[c * self.n..(c + 1) * self.n]
    }

    fn leaky(&self) -> Self {
        Self { ch: self.ch, n: self.n, d: self.d.iter().map(|&v| if v > 0.0 { v } else { LEAK * v }).collect() }
    }

    /// Gradient through a leaky rectifier whose input was `pre`.
    fn leaky_back(mut self, pre: &Fmap) -> Self {
        for (g, &p) in self.d.iter_mut().zip(&pre.d) {
            if p <= 0.0 {
                *g *= LEAK;
            }
        }
        self
    }

    fn add_assign(&mut self, other: &Fmap) {
        for (a, b) in self.d.iter_mut().zip(&other.d) {
            *a += b;
        }
    }
}

/// Valid output range `[t0, t1)` for a tap offset `shift` on length `n`.
fn tap_range(n: usize, shift: isize) -> (usize, usize) {
    let t0 = (-shift).max(0) as usize;
    let t1 = (n as isize - shift).clamp(0, n as isize) as usize;
    (t0, t1.max(t0))
}

/// Shifted copies of every input row, `(cin * k) x n`, zero padded.
fn im2col(x: &Fmap, k: usize) -> Array2<f64> {
    let n = x.n;
    let pad = (k / 2) as isize;
    let mut col = Array2::zeros((x.ch * k, n));
    for i in 0..x.ch {
        let xi = x.row(i);
        for kk in 0..k {
            let shift = kk as isize - pad;
            let (t0, t1) = tap_range(n, shift);
            let src = &xi[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
            let mut row = col.row_mut(i * k + kk);
            let dst = row.as_slice_mut().expect("standard layout");
            dst[t0..t1].copy_from_slice(src);
        }
    }
    col
}

fn weights<'a>(p: &'a [f64], s: &ConvShape) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((s.cout, s.cin * s.k), &p[s.offset..s.offset + s.cout * s.cin * s.k])
        .expect("weight block matches shape")
}

fn view(f: &Fmap) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((f.ch, f.n), &f.d).expect("fmap matches shape")
}

fn conv_forward(p: &[f64], s: &ConvShape, x: &Fmap) -> Fmap {
    let col = im2col(x, s.k);
    let mut out = Array2::from_shape_fn((s.cout, x.n), |(o, _)| p[s.bias(o)]);
    general_mat_mul(1.0, &weights(p, s), &col, 1.0, &mut out);
    Fmap { ch: s.cout, n: x.n, d: out.into_raw_vec_and_offset().0 }
}

/// Accumulates parameter gradients into `g` and returns the input gradient
/// when `need_input` is set.
fn conv_backward(
    p: &[f64],
    s: &ConvShape,
    x: &Fmap,
    gout: &Fmap,
    g: &mut [f64],
    need_input: bool,
) -> Option<Fmap> {
    let n = x.n;
    let go = view(gout);
    for o in 0..s.cout {
        g[s.bias(o)] += gout.row(o).iter().sum::<f64>();
    }
    let col = im2col(x, s.k);
    {
        let len = s.cout * s.cin * s.k;
        let mut gw = ArrayViewMut2::from_shape((s.cout, s.cin * s.k), &mut g[s.offset..s.offset + len])
            .expect("weight block matches shape");
        general_mat_mul(1.0, &go, &col.t(), 1.0, &mut gw);
    }
    if !need_input {
        return None;
    }
    let gcol = weights(p, s).t().dot(&go);
    let pad = (s.k / 2) as isize;
    let mut gx = Fmap::zeros(s.cin, n);
    for i in 0..s.cin {
        let dst = gx.row_mut(i);
        for kk in 0..s.k {
            let shift = kk as isize - pad;
            let (t0, t1) = tap_range(n, shift);
            let lo = (t0 as isize + shift) as usize;
            let hi = (t1 as isize + shift) as usize;
            let src = gcol.row(i * s.k + kk);
            let src = src.as_slice().expect("standard layout");
            for (d, &v) in dst[lo..hi].iter_mut().zip(&src[t0..t1]) {
                *d += v;
            }
        }
    }
    Some(gx)
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct Tape {
    input: Fmap,
    stem_pre: Fmap,
    block_in: Vec<Fmap>,
    block_pre: Vec<Fmap>,
    block_act: Vec<Fmap>,
    head_in: Vec<Fmap>,
    head_pre: Vec<Fmap>,
    final_in: Fmap,
}

/// Trainable transformation `f(x) = x + g(x)` with a convolutional `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformNet {
    arch: Architecture,
    params: Vec<f64>,
}

impl TransformNet {
    /// Random hidden layers with the last convolution of every residual
    /// block and of the head set to zero, so the initial map is the identity.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layers();
        let mut params = vec![0.0; arch.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = layers.len() - 1;
        for (idx, s) in layers.iter().enumerate() {
            let zero_init = idx == last || (idx >= 1 && idx <= 2 * arch.blocks && idx % 2 == 0);
            if zero_init {
                continue;
            }
            let std = (2.0 / (s.cin * s.k) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut params[s.offset..s.offset + s.cout * s.cin * s.k] {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::ArchitectureMismatch(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.nrows() != self.arch.channels {
            return Err(Error::invalid(format!(
                "network expects {} channels, got {}",
                self.arch.channels,
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid("cannot transform an empty block"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.run(Fmap::from_array(x)).0.into_array())
    }

    pub(crate) fn forward_taped(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(x)?;
        let (out, tape) = self.run(Fmap::from_array(x));
        Ok((out.into_array(), tape))
    }

    fn run(&self, x: Fmap) -> (Fmap, Tape) {
        let layers = self.arch.layers();
        let p = &self.params;
        let stem_pre = conv_forward(p, &layers[0], &x);
        let mut h = stem_pre.leaky();
        let (mut block_in, mut block_pre, mut block_act) = (vec![], vec![], vec![]);
        for b in 0..self.arch.blocks {
            let pre = conv_forward(p, &layers[1 + 2 * b], &h);
            let act = pre.leaky();
            let c = conv_forward(p, &layers[2 + 2 * b], &act);
            block_in.push(h.clone());
            h.add_assign(&c);
            block_pre.push(pre);
            block_act.push(act);
        }
        let head0 = 1 + 2 * self.arch.blocks;
        let (mut head_in, mut head_pre) = (vec![], vec![]);
        for i in 0..self.arch.head_layers - 1 {
            let pre = conv_forward(p, &layers[head0 + i], &h);
            head_in.push(std::mem::replace(&mut h, pre.leaky()));
            head_pre.push(pre);
        }
        let mut out = conv_forward(p, layers.last().expect("at least two layers"), &h);
        out.add_assign(&x);
        let tape = Tape { input: x, stem_pre, block_in, block_pre, block_act, head_in, head_pre, final_in: h };
        (out, tape)
    }

    /// Parameter gradient for an upstream gradient on the output.
    pub(crate) fn backward(&self, tape: &Tape, grad_out: &Array2<f64>) -> Vec<f64> {
        let layers = self.arch.layers();
        let p = &self.params;
        let mut g = vec![0.0; self.params.len()];
        let gout = Fmap::from_array(grad_out);
        let last = layers.last().expect("at least two layers");
        let mut gh = conv_backward(p, last, &tape.final_in, &gout, &mut g, true).expect("input grad");
        let head0 = 1 + 2 * self.arch.blocks;
        for i in (0..self.arch.head_layers - 1).rev() {
            let gp = gh.leaky_back(&tape.head_pre[i]);
            gh = conv_backward(p, &layers[head0 + i], &tape.head_in[i], &gp, &mut g, true)
                .expect("input grad");
        }
        for b in (0..self.arch.blocks).rev() {
            let gr = conv_backward(p, &layers[2 + 2 * b], &tape.block_act[b], &gh, &mut g, true)
                .expect("input grad");
            let gp = gr.leaky_back(&tape.block_pre[b]);
            let gin = conv_backward(p, &layers[1 + 2 * b], &tape.block_in[b], &gp, &mut g, true)
                .expect("input grad");
            gh.add_assign(&gin);
        }
        let gstem = gh.leaky_back(&tape.stem_pre);
        conv_backward(p, &layers[0], &tape.input, &gstem, &mut g, false);
        g
    }
}

impl BlockTransform for TransformNet {
    fn transform(&self, block: &Array2<f64>) -> Result<Array2<f64>> {
        self.forward(block)
    }
}

/// Deep copy of a pretrained network as the starting point for a new run.
pub fn pretrain_init(source: &TransformNet, arch: &Architecture) -> Result<TransformNet> {
    if source.architecture() != arch {
        return Err(Error::ArchitectureMismatch(format!(
            "pretrained network has {:?}, run expects {:?}",
            source.architecture(),
            arch
        )));
    }
    Ok(source.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(channels: usize) -> Architecture {
        Architecture { channels, hidden: 4, kernel: 5, blocks: 2, head_layers: 2 }
    }

    fn randomized(arch: Architecture, seed: u64) -> TransformNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.3).unwrap();
        let params = (0..arch.param_count()).map(|_| normal.sample(&mut rng)).collect();
        TransformNet::from_params(arch, params).unwrap()
    }

    fn block(ch: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_fn((ch, n), |_| normal.sample(&mut rng))
    }

    #[test]
    fn default_architecture_shape() {
        let a = Architecture::new(1);
        assert_eq!(a.conv_count(), 34);
        assert_eq!(a.receptive_field(), 341);
    }

    #[test]
    fn fresh_network_is_exact_identity() {
        let net = TransformNet::new(Architecture::new(2), 3).unwrap();
        let x = block(2, 200, 1);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn network_is_not_homogeneous() {
        let net = randomized(small(1), 5);
        let x = block(1, 64, 2);
        let y1 = net.forward(&x).unwrap();
        let y2 = net.forward(&(&x * 2.0)).unwrap();
        let dev = (&y2 - &(&y1 * 2.0)).mapv(f64::abs).sum();
        assert!(dev > 1e-6);
    }

    #[test]
    fn impulse_response_is_within_receptive_field() {
        let arch = small(1);
        let net = randomized(arch, 9);
        let n = 200;
        let zero = Array2::zeros((1, n));
        let base = net.forward(&zero).unwrap();
        let mut imp = zero.clone();
        imp[[0, 100]] = 1.0;
        let resp = &net.forward(&imp).unwrap() - &base;
        let support: Vec<usize> =
            (0..n).filter(|&t| resp[[0, t]].abs() > 0.0).collect();
        let width = support.last().unwrap() - support.first().unwrap() + 1;
        assert!(width <= arch.receptive_field(), "{width} > {}", arch.receptive_field());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let net = TransformNet::new(small(2), 0).unwrap();
        assert!(net.forward(&block(3, 32, 0)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_of_linear_readout() {
        let arch = small(2);
        let net = randomized(arch, 11);
        let x = block(2, 40, 4);
        let probe = block(2, 40, 5);
        let (_, tape) = net.forward_taped(&x).unwrap();
        let g = net.backward(&tape, &probe);
        let readout = |n: &TransformNet| (&n.forward(&x).unwrap() * &probe).sum();
        let eps = 1e-6;
        for idx in (0..arch.param_count()).step_by(7) {
            let mut plus = net.clone();
            plus.params_mut()[idx] += eps;
            let mut minus = net.clone();
            minus.params_mut()[idx] -= eps;
            let fd = (readout(&plus) - readout(&minus)) / (2.0 * eps);
            assert!((fd - g[idx]).abs() < 1e-5 * (1.0 + fd.abs()), "param {idx}: {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn pretrain_copy_reproduces_outputs() {
        let net = randomized(small(1), 1);
        let copy = pretrain_init(&net, &small(1)).unwrap();
        let x = block(1, 50, 3);
        assert_eq!(net.forward(&x).unwrap(), copy.forward(&x).unwrap());
        assert!(matches!(pretrain_init(&net, &small(2)), Err(Error::ArchitectureMismatch(_))));
    }
}
