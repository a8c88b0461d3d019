//! Channel-wise sparse quantization kernels.
//!
//! Quantization is per tensor and asymmetric: the grid starts at the tensor
//! minimum with step `s = (max - min) / (2^b - 1)`, and codes are rounded
//! half-to-even. Only the most important activation channels (ranked by
//! batch-norm scale factors weighted by the operator architecture
//! parameters) go through the mixed-precision quantizer; the rest pass
//! through untouched.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `(batch, channel, height, width)` array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::DimMismatch(format!("dims {dims:?} must be positive")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::DimMismatch(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor entries must be finite".into()));
        }
        Ok(Tensor4 { dims, data })
    }

    /// A `1 x n x 1 x 1` tensor holding a flat vector.
    pub fn from_flat(data: Vec<f64>) -> Result<Self> {
        Tensor4::new([1, data.len(), 1, 1], data)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn plane(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    /// Contiguous `(batch, channel)` slices in memory order.
    fn channel_blocks(&self) -> impl Iterator<Item = (usize, &[f64])> {
        let c = self.channels();
        self.data
            .chunks(self.plane())
            .enumerate()
            .map(move |(i, blk)| (i % c, blk))
    }

    /// Read the flat binary container: four little-endian `u64` dims
    /// followed by row-major little-endian `f64` values.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut dims = [0usize; 4];
        let mut buf = [0u8; 8];
        for d in dims.iter_mut() {
            r.read_exact(&mut buf)?;
            *d = usize::try_from(u64::from_le_bytes(buf))
                .map_err(|_| Error::Parse("tensor dimension overflows".into()))?;
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Parse("tensor size overflows".into()))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        Tensor4::new(dims, data)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for d in self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Text form: a line of four dims, then whitespace-separated values.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            let tok = tokens
                .next()
                .ok_or_else(|| Error::Parse("tensor text: missing dims".into()))?;
            *d = tok
                .parse()
                .map_err(|_| Error::Parse(format!("tensor text: bad dim {tok:?}")))?;
        }
        let data = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("tensor text: bad value {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor4::new(dims, data)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {} {}\n", self.dims[0], self.dims[1], self.dims[2], self.dims[3]);
        let vals: Vec<String> = self.data.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&vals.join(" "));
        s.push('\n');
        s
    }
}

// ---------------------------------------------------------------------------
// Gumbel-Softmax

/// Noise used to perturb logits before the tempered softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GumbelMode {
    /// `eps ~ U(0, 1)` added directly to the logits.
    Uniform,
    /// Gumbel noise `-ln(-ln u)`, `u ~ U(0, 1)`.
    #[default]
    Standard,
}

impl std::str::FromStr for GumbelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(GumbelMode::Uniform),
            "standard" => Ok(GumbelMode::Standard),
            other => Err(Error::Parse(format!("unknown gumbel mode {other:?}"))),
        }
    }
}

/// Draw one perturbation per logit for `mode`.
pub fn sample_noise<R: Rng + ?Sized>(mode: GumbelMode, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            match mode {
                GumbelMode::Uniform => u,
                GumbelMode::Standard => {
                    // keep u strictly inside (0, 1)
                    let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                    -(-u.ln()).ln()
                }
            }
        })
        .collect()
}

/// Numerically stable softmax of `x / tau`.
pub fn softmax(x: &[f64], tau: f64) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| ((v - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Tempered softmax over `logits + noise`. `noise` holds the already
/// transformed perturbation for the chosen mode (see [`sample_noise`]);
/// zeros give the plain tempered softmax.
pub fn gumbel_softmax(logits: &[f64], tau: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if logits.is_empty() || logits.len() != noise.len() {
        return Err(Error::DimMismatch(format!(
            "{} logits vs {} noise values",
            logits.len(),
            noise.len()
        )));
    }
    let perturbed: Vec<f64> = logits.iter().zip(noise).map(|(l, e)| l + e).collect();
    Ok(softmax(&perturbed, tau))
}

/// Sample noise for `mode` and apply [`gumbel_softmax`].
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    logits: &[f64],
    tau: f64,
    mode: GumbelMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let noise = sample_noise(mode, logits.len(), rng);
    gumbel_softmax(logits, tau, &noise)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Quantization

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u32,
    /// Grid step; zero flags a constant input left unchanged.
    pub scale: f64,
    /// Value of code 0 (the tensor minimum).
    pub zero_point: f64,
    pub min_code: i64,
    pub max_code: i64,
}

/// Quantize and dequantize `v` at `bits`.
pub fn quantize_values(v: &[f64], bits: u32) -> Result<(Vec<f64>, QuantSpec)> {
    if bits == 0 || bits > 32 {
        return Err(Error::InvalidArgument(format!("bits must be in 1..=32, got {bits}")));
    }
    if v.is_empty() {
        return Err(Error::InvalidArgument("cannot quantize an empty tensor".into()));
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_code = (1i64 << bits) - 1;
    let mut spec = QuantSpec {
        bits,
        scale: 0.0,
        zero_point: lo,
        min_code: 0,
        max_code,
    };
    if hi == lo {
        return Ok((v.to_vec(), spec));
    }
    let s = (hi - lo) / max_code as f64;
    spec.scale = s;
    let out = v
        .iter()
        .map(|&x| {
            let code = ((x - lo) / s).clamp(0.0, max_code as f64).round_ties_even();
            // the top code maps back onto the maximum exactly
            if code >= max_code as f64 {
                hi
            } else {
                lo + code * s
            }
        })
        .collect();
    Ok((out, spec))
}

pub fn quantize(v: &Tensor4, bits: u32) -> Result<(Tensor4, QuantSpec)> {
    let (data, spec) = quantize_values(v.data(), bits)?;
    Ok((Tensor4 { dims: v.dims, data }, spec))
}

/// Default activation / weight bit candidates.
pub const DEFAULT_BITS: [u32; 3] = [2, 4, 8];

fn check_simplex(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} must be non-negative")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("{name} must sum to 1, sums to {sum}")));
    }
    Ok(())
}

/// `sum_k betas[k] * Q(v, bits[k])`.
pub fn mix_precision_values(v: &[f64], betas: &[f64], bits: &[u32]) -> Result<Vec<f64>> {
    if betas.len() != bits.len() {
        return Err(Error::DimMismatch(format!(
            "{} betas for {} bitwidths",
            betas.len(),
            bits.len()
        )));
    }
    check_simplex("betas", betas)?;
    let mut acc = vec![0.0; v.len()];
    for (&beta, &b) in betas.iter().zip(bits) {
        let (q, _) = quantize_values(v, b)?;
        for (a, x) in acc.iter_mut().zip(q) {
            *a += beta * x;
        }
    }
    Ok(acc)
}

pub fn mix_precision(v: &Tensor4, betas: &[f64], bits: &[u32]) -> Result<Tensor4> {
    Ok(Tensor4 {
        dims: v.dims,
        data: mix_precision_values(v.data(), betas, bits)?,
    })
}

// ---------------------------------------------------------------------------
// Batch norm and channel selection

/// Per-channel batch-norm parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BNParams {
    pub mean: Vec<f64>,
    /// Batch variance (squared standard deviation).
    pub var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl BNParams {
    pub fn validate(&self, channels: usize) -> Result<()> {
        for (name, v) in [
            ("mean", &self.mean),
            ("var", &self.var),
            ("gamma", &self.gamma),
            ("beta", &self.beta),
        ] {
            if v.len() != channels {
                return Err(Error::DimMismatch(format!(
                    "BN {name} has {} entries for {channels} channels",
                    v.len()
                )));
            }
        }
        if self.var.iter().any(|&s| s < 0.0) || self.eps < 0.0 {
            return Err(Error::InvalidArgument("BN variance and eps must be non-negative".into()));
        }
        Ok(())
    }
}

/// `gamma * (z - mean) / sqrt(var + eps) + beta`.
pub fn bn_scalar(z: f64, mean: f64, var: f64, eps: f64, gamma: f64, beta: f64) -> f64 {
    gamma * ((z - mean) / (var + eps).sqrt()) + beta
}

/// Batch-norm every channel of `z`.
pub fn bn_forward(z: &Tensor4, p: &BNParams) -> Result<Tensor4> {
    p.validate(z.channels())?;
    let mut data = Vec::with_capacity(z.data.len());
    for (c, blk) in z.channel_blocks() {
        data.extend(
            blk.iter()
                .map(|&x| bn_scalar(x, p.mean[c], p.var[c], p.eps, p.gamma[c], p.beta[c])),
        );
    }
    Ok(Tensor4 { dims: z.dims, data })
}

/// `importance[j] = sum_i alpha[i] * gamma[i][j]` over the previous layer's
/// candidate operators `i`.
pub fn channel_importance(alpha: &[f64], gamma_matrix: &[Vec<f64>]) -> Result<Vec<f64>> {
    if alpha.len() != gamma_matrix.len() || alpha.is_empty() {
        return Err(Error::DimMismatch(format!(
            "{} alphas for {} gamma rows",
            alpha.len(),
            gamma_matrix.len()
        )));
    }
    let c = gamma_matrix[0].len();
    if gamma_matrix.iter().any(|row| row.len() != c) {
        return Err(Error::DimMismatch("gamma rows differ in length".into()));
    }
    let mut out = vec![0.0; c];
    for (&a, row) in alpha.iter().zip(gamma_matrix) {
        for (o, &g) in out.iter_mut().zip(row) {
            *o += a * g;
        }
    }
    Ok(out)
}

/// Number of channels kept for `k_percent` of `channels`.
pub fn topk_count(channels: usize, k_percent: f64) -> usize {
    if k_percent <= 0.0 {
        0
    } else {
        ((k_percent / 100.0 * channels as f64).floor() as usize).clamp(1, channels)
    }
}

/// Indices of the top `k_percent` channels by importance, ascending.
/// Ties go to the lower index.
pub fn topk_channels(importance: &[f64], k_percent: f64) -> Result<Vec<usize>> {
    if !(0.0..=100.0).contains(&k_percent) {
        return Err(Error::InvalidArgument(format!("K must be in 0..=100, got {k_percent}")));
    }
    let n = topk_count(importance.len(), k_percent);
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    idx.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx.sort_unstable();
    Ok(idx)
}

/// Channel state of one layer: importance scores and the selected set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSelection {
    pub gamma_matrix: Vec<Vec<f64>>,
    pub importance: Vec<f64>,
    pub omega: Vec<usize>,
    pub k_percent: f64,
}

impl ChannelSelection {
    pub fn select(alpha_prev: &[f64], gamma_matrix: Vec<Vec<f64>>, k_percent: f64) -> Result<Self> {
        let importance = channel_importance(alpha_prev, &gamma_matrix)?;
        let omega = topk_channels(&importance, k_percent)?;
        Ok(ChannelSelection {
            gamma_matrix,
            importance,
            omega,
            k_percent,
        })
    }
}

/// Mixed-precision quantize the channels in `omega` (sharing one scale),
/// pass every other channel through unchanged, keep channel order.
pub fn csq_apply(a: &Tensor4, omega: &[usize], beta_a: &[f64], bits: &[u32]) -> Result<Tensor4> {
    let c = a.channels();
    let mut selected = vec![false; c];
    for &j in omega {
        if j >= c {
            return Err(Error::ChannelOutOfRange { index: j, channels: c });
        }
        selected[j] = true;
    }
    if omega.is_empty() {
        return Ok(a.clone());
    }
    let gathered: Vec<f64> = a
        .channel_blocks()
        .filter(|(ch, _)| selected[*ch])
        .flat_map(|(_, blk)| blk.iter().copied())
        .collect();
    let mixed = mix_precision_values(&gathered, beta_a, bits)?;
    let mut out = a.data.clone();
    let plane = a.plane();
    let mut src = mixed.chunks(plane);
    for (i, blk) in out.chunks_mut(plane).enumerate() {
        if selected[i % c] {
            blk.copy_from_slice(src.next().expect("one block per selected channel"));
        }
    }
    Ok(Tensor4 { dims: a.dims, data: out })
}

/// Operator and bitwidth architecture parameters of one searchable layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    /// Distribution over candidate operators.
    pub alpha: Vec<f64>,
    /// Per candidate operator, distribution over weight bitwidths.
    pub beta_w: Vec<Vec<f64>>,
    /// Per candidate operator, distribution over activation bitwidths.
    pub beta_a: Vec<Vec<f64>>,
}

impl ArchParams {
    pub fn validate(&self) -> Result<()> {
        check_simplex("alpha", &self.alpha)?;
        if self.beta_w.len() != self.alpha.len() || self.beta_a.len() != self.alpha.len() {
            return Err(Error::DimMismatch("one beta vector per candidate operator".into()));
        }
        for b in self.beta_w.iter().chain(&self.beta_a) {
            check_simplex("beta", b)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Memory model

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub naive_bytes: f64,
    pub csq_bytes: f64,
    pub ratio: f64,
}

/// Activation memory held during search: the float activation plus one
/// quantized copy per bit choice, for all channels (naive) or only the
/// selected `k_percent` (CSQ).
pub fn memory_model(bit_choices: usize, k_percent: f64, n_ops: usize, act_bytes: f64) -> Result<MemoryEstimate> {
    if !(0.0..=100.0).contains(&k_percent) {
        return Err(Error::InvalidArgument(format!("K must be in 0..=100, got {k_percent}")));
    }
    let m = bit_choices as f64;
    let base = n_ops as f64 * act_bytes;
    let naive = base * (1.0 + m);
    let csq = base * (1.0 + m * k_percent / 100.0);
    let ratio = if naive == csq { 1.0 } else { naive / csq };
    Ok(MemoryEstimate {
        naive_bytes: naive,
        csq_bytes: csq,
        ratio,
    })
}
