//! Residual MLP with one classifier head per accelerator field, trained with
//! hand-written backprop and Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Affine {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Affine {
    fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.rows * self.cols
    }

    /// `y = W x + b`
    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let w = &p[self.offset..self.offset + self.rows * self.cols];
        let b = &p[self.bias_offset()..self.bias_offset() + self.rows];
        for (r, out) in y.iter_mut().enumerate() {
            let row = &w[r * self.cols..(r + 1) * self.cols];
            *out = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulate parameter gradients for upstream `dy`; add `W^T dy` into `dx`.
    fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], dx: &mut [f64]) {
        let (wo, bo) = (self.offset, self.bias_offset());
        for (r, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g[bo + r] += d;
            let row = wo + r * self.cols;
            for c in 0..self.cols {
                g[row + c] += d * x[c];
                dx[c] += d * p[row + c];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Block {
    inner: Affine,
    outer: Affine,
}

/// Input layer, residual blocks `h + W2 relu(W1 h + b1) + b2`, and heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorNet {
    input: Affine,
    blocks: Vec<Block>,
    heads: Vec<Affine>,
    params: Vec<f64>,
    hidden: usize,
}

/// Activations kept from the forward pass for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    pre0: Vec<f64>,
    /// hidden state entering each block, then the final hidden state
    hs: Vec<Vec<f64>>,
    block_pre: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_BLOCKS: usize = 5;

impl GeneratorNet {
    /// Build a network with uniform `±1/sqrt(fan_in)` initialization.
    pub fn new(input_dim: usize, hidden: usize, n_blocks: usize, head_sizes: &[usize], seed: u64) -> Self {
        let mut offset = 0;
        let mut affine = |rows: usize, cols: usize| {
            let a = Affine { offset, rows, cols };
            offset += a.len();
            a
        };
        let input = affine(hidden, input_dim);
        let blocks: Vec<Block> = (0..n_blocks)
            .map(|_| Block {
                inner: affine(hidden, hidden),
                outer: affine(hidden, hidden),
            })
            .collect();
        let heads: Vec<Affine> = head_sizes.iter().map(|&n| affine(n, hidden)).collect();
        let mut params = vec![0.0; offset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all = std::iter::once(&input)
            .chain(blocks.iter().flat_map(|b| [&b.inner, &b.outer]))
            .chain(heads.iter());
        for a in all {
            let bound = 1.0 / (a.cols as f64).sqrt();
            for v in &mut params[a.offset..a.offset + a.len()] {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        GeneratorNet {
            input,
            blocks,
            heads,
            params,
            hidden,
        }
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.rows).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.input.cols
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> ForwardTrace {
        assert_eq!(x.len(), self.input.cols, "feature length");
        let p = &self.params;
        let h = self.hidden;
        let mut pre0 = vec![0.0; h];
        self.input.forward(p, x, &mut pre0);
        let mut cur: Vec<f64> = pre0.iter().map(|&v| v.max(0.0)).collect();
        let mut hs = Vec::with_capacity(self.blocks.len() + 1);
        let mut block_pre = Vec::with_capacity(self.blocks.len());
        let mut pre = vec![0.0; h];
        let mut delta = vec![0.0; h];
        for b in &self.blocks {
            b.inner.forward(p, &cur, &mut pre);
            let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
            b.outer.forward(p, &act, &mut delta);
            let next: Vec<f64> = cur.iter().zip(&delta).map(|(a, d)| a + d).collect();
            hs.push(std::mem::replace(&mut cur, next));
            block_pre.push(pre.clone());
        }
        let logits = self
            .heads
            .iter()
            .map(|a| {
                let mut y = vec![0.0; a.rows];
                a.forward(p, &cur, &mut y);
                y
            })
            .collect();
        hs.push(cur);
        ForwardTrace {
            input: x.to_vec(),
            pre0,
            hs,
            block_pre,
            logits,
        }
    }

    /// Gradient of `sum_k <dlogits[k], logits[k]>` with respect to all parameters.
    pub fn backward(&self, t: &ForwardTrace, dlogits: &[Vec<f64>]) -> Vec<f64> {
        let p = &self.params;
        let h = self.hidden;
        let mut g = vec![0.0; p.len()];
        let last = t.hs.last().expect("final hidden state");
        let mut dh = vec![0.0; h];
        for (a, d) in self.heads.iter().zip(dlogits) {
            a.backward(p, last, d, &mut g, &mut dh);
        }
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let h_in = &t.hs[i];
            let pre = &t.block_pre[i];
            let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
            let mut dact = vec![0.0; h];
            b.outer.backward(p, &act, &dh, &mut g, &mut dact);
            let dpre: Vec<f64> = dact
                .iter()
                .zip(pre)
                .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
                .collect();
            // skip path carries dh through unchanged
            b.inner.backward(p, h_in, &dpre, &mut g, &mut dh);
        }
        let dpre0: Vec<f64> = dh
            .iter()
            .zip(&t.pre0)
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect();
        let mut dx = vec![0.0; self.input.cols];
        self.input.backward(p, &t.input, &dpre0, &mut g, &mut dx);
        g
    }
}

/// Adam optimizer state for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Descend along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
