//! Binary RBM parameters, energies, factorized conditionals and block Gibbs sampling.
//!
//! Visible and hidden configurations are packed into a single `u64` word, so
//! layers are limited to [`MAX_UNITS`] units. The benchmark problems use at
//! most 19 visible units.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, RbmError, Result};

/// Largest layer width a [`BinaryState`] can hold.
pub const MAX_UNITS: usize = 64;

/// A fixed-width vector of bits. Bit `i` is unit `i`; in text form it is the
/// `i`-th character from the left.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryState {
    bits: u64,
    len: u8,
}

impl BinaryState {
    pub fn zeros(len: usize) -> Self {
        assert!(len <= MAX_UNITS, "state width {len} exceeds {MAX_UNITS}");
        Self { bits: 0, len: len as u8 }
    }

    pub fn ones(len: usize) -> Self {
        Self::from_key(mask(len), len)
    }

    /// Builds a state from its packed key. Bits above `len` are discarded.
    pub fn from_key(key: u64, len: usize) -> Self {
        assert!(len <= MAX_UNITS, "state width {len} exceeds {MAX_UNITS}");
        Self { bits: key & mask(len), len: len as u8 }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            s.set(i, b);
        }
        s
    }

    /// Packed integer key, usable for ordering and set membership.
    #[inline]
    pub fn key(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len());
        (self.bits >> i) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len(), "bit {i} out of range for width {}", self.len);
        if value {
            self.bits |= 1 << i;
        } else {
            self.bits &= !(1 << i);
        }
    }

    #[inline]
    pub fn flipped(&self, i: usize) -> Self {
        debug_assert!(i < self.len());
        Self { bits: self.bits ^ (1 << i), len: self.len }
    }

    pub fn complement(&self) -> Self {
        Self { bits: !self.bits & mask(self.len()), len: self.len }
    }

    #[inline]
    pub fn count_ones(&self) -> u32 {
        self.bits.count_ones()
    }

    #[inline]
    pub fn hamming(&self, other: &Self) -> u32 {
        debug_assert_eq!(self.len, other.len);
        (self.bits ^ other.bits).count_ones()
    }

    /// Indices of the set bits in increasing order.
    #[inline]
    pub fn ones_iter(&self) -> OnesIter {
        OnesIter(self.bits)
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| if self.get(i) { 1.0 } else { 0.0 }).collect()
    }
}

#[inline]
fn mask(len: usize) -> u64 {
    if len >= 64 {
        u64::MAX
    } else {
        (1u64 << len) - 1
    }
}

pub struct OnesIter(u64);

impl Iterator for OnesIter {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(i)
    }
}

impl fmt::Display for BinaryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len() {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BinaryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryState({self})")
    }
}

impl FromStr for BinaryState {
    type Err = RbmError;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() > MAX_UNITS {
            return Err(RbmError::InvalidArgument(format!(
                "state of width {} exceeds {MAX_UNITS}",
                s.len()
            )));
        }
        let mut state = Self::zeros(s.len());
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => state.set(i, true),
                other => {
                    return Err(RbmError::InvalidArgument(format!(
                        "non-binary character {other:?} at position {i}"
                    )))
                }
            }
        }
        Ok(state)
    }
}

/// Deterministic random stream. Identical seeds give identical sequences on
/// every platform (ChaCha8 with a fixed seed expansion).
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this stream's seed and `tag`. Does not
    /// advance `self`.
    pub fn split(&self, tag: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        self.rng.random_range(0..n)
    }

    pub fn gaussian(&mut self, sigma: f64) -> f64 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(&mut self.rng)
    }

    pub fn random_state(&mut self, len: usize) -> BinaryState {
        let mut s = BinaryState::zeros(len);
        for i in 0..len {
            s.set(i, self.uniform() < 0.5);
        }
        s
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Logistic function, stable for arbitrarily large |z|.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Max-shifted `log Σ e^v`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Running log-sum-exp accumulator: a `(max, scaled sum)` pair that can be
/// merged with another accumulator.
#[derive(Clone, Copy, Debug)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self { max: f64::NEG_INFINITY, sum: 0.0 }
    }
}

impl LogSumExp {
    #[inline]
    pub fn push(&mut self, v: f64) {
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    pub fn merge(self, other: Self) -> Self {
        if other.max == f64::NEG_INFINITY {
            return self;
        }
        if self.max == f64::NEG_INFINITY {
            return other;
        }
        if self.max >= other.max {
            Self { max: self.max, sum: self.sum + other.sum * (other.max - self.max).exp() }
        } else {
            Self { max: other.max, sum: other.sum + self.sum * (self.max - other.max).exp() }
        }
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// `Σ e^{v - max}`.
    pub fn scaled_sum(&self) -> f64 {
        self.sum
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Weights `W` (n_hidden × n_visible, row-major), visible bias `b` and hidden bias `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct RbmParams {
    n_visible: usize,
    n_hidden: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl RbmParams {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        assert!(n_visible <= MAX_UNITS && n_hidden <= MAX_UNITS);
        Self {
            n_visible,
            n_hidden,
            w: vec![0.0; n_visible * n_hidden],
            b: vec![0.0; n_visible],
            c: vec![0.0; n_hidden],
        }
    }

    pub fn new(w: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let (n_visible, n_hidden) = (b.len(), c.len());
        if n_visible > MAX_UNITS || n_hidden > MAX_UNITS {
            return Err(RbmError::InvalidArgument(format!("layers wider than {MAX_UNITS} units")));
        }
        check_dim(n_visible * n_hidden, w.len())?;
        let p = Self { n_visible, n_hidden, w, b, c };
        if !p.is_finite() {
            return Err(RbmError::InvalidArgument("non-finite parameter".into()));
        }
        Ok(p)
    }

    /// Every parameter drawn from N(0, sigma²).
    pub fn random(n_visible: usize, n_hidden: usize, sigma: f64, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(n_visible, n_hidden);
        for v in p.w.iter_mut().chain(p.b.iter_mut()).chain(p.c.iter_mut()) {
            *v = rng.gaussian(sigma);
        }
        p
    }

    #[inline]
    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    #[inline]
    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    #[inline]
    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.w[j * self.n_visible + i]
    }

    #[inline]
    pub fn weight_mut(&mut self, j: usize, i: usize) -> &mut f64 {
        &mut self.w[j * self.n_visible + i]
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b).chain(&self.c).all(|v| v.is_finite())
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.w.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Same model with the roles of the layers exchanged: `W → Wᵀ`, `b ↔ c`.
    pub fn transposed(&self) -> RbmParams {
        let mut t = RbmParams::zeros(self.n_hidden, self.n_visible);
        for j in 0..self.n_hidden {
            for i in 0..self.n_visible {
                *t.weight_mut(i, j) = self.weight(j, i);
            }
        }
        t.b = self.c.clone();
        t.c = self.b.clone();
        t
    }

    /// `c + W x` written into `out`.
    #[inline]
    pub(crate) fn hidden_field(&self, x: &BinaryState, out: &mut [f64]) {
        out.copy_from_slice(&self.c);
        for i in x.ones_iter() {
            for (o, j) in out.iter_mut().zip(0..self.n_hidden) {
                *o += self.w[j * self.n_visible + i];
            }
        }
    }

    /// `b + Wᵀ h` written into `out`.
    #[inline]
    pub(crate) fn visible_field(&self, h: &BinaryState, out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        for j in h.ones_iter() {
            let row = &self.w[j * self.n_visible..(j + 1) * self.n_visible];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w;
            }
        }
    }

    /// `b + Wᵀ m` for a real-valued hidden vector `m`.
    pub(crate) fn visible_field_real(&self, hidden: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        for (j, &m) in hidden.iter().enumerate() {
            let row = &self.w[j * self.n_visible..(j + 1) * self.n_visible];
            for (o, w) in out.iter_mut().zip(row) {
                *o += m * w;
            }
        }
    }

    /// `log Σ_h e^{-E(x,h)}` without dimension checks.
    #[inline]
    pub(crate) fn free_energy_unchecked(&self, x: &BinaryState, scratch: &mut [f64]) -> f64 {
        self.hidden_field(x, scratch);
        let bias: f64 = x.ones_iter().map(|i| self.b[i]).sum();
        bias + scratch.iter().map(|&a| softplus(a)).sum::<f64>()
    }
}

/// `E(x, h) = -bᵀx - cᵀh - hᵀWx`.
pub fn energy(params: &RbmParams, x: &BinaryState, h: &BinaryState) -> Result<f64> {
    check_dim(params.n_visible, x.len())?;
    check_dim(params.n_hidden, h.len())?;
    let mut e = 0.0;
    for i in x.ones_iter() {
        e -= params.b[i];
    }
    for j in h.ones_iter() {
        e -= params.c[j];
        for i in x.ones_iter() {
            e -= params.weight(j, i);
        }
    }
    Ok(e)
}

/// Unnormalized log-marginal `log Σ_h e^{-E(x,h)} = bᵀx + Σ_j softplus(c_j + W_j·x)`.
pub fn free_energy_unnorm(params: &RbmParams, x: &BinaryState) -> Result<f64> {
    check_dim(params.n_visible, x.len())?;
    let mut scratch = vec![0.0; params.n_hidden];
    Ok(params.free_energy_unchecked(x, &mut scratch))
}

/// `P(h_j = 1 | x)` for every hidden unit.
pub fn hidden_activation_probs(params: &RbmParams, x: &BinaryState) -> Result<Vec<f64>> {
    check_dim(params.n_visible, x.len())?;
    let mut out = vec![0.0; params.n_hidden];
    params.hidden_field(x, &mut out);
    out.iter_mut().for_each(|v| *v = sigmoid(*v));
    Ok(out)
}

/// `P(x_i = 1 | h)` for every visible unit.
pub fn visible_activation_probs(params: &RbmParams, h: &BinaryState) -> Result<Vec<f64>> {
    check_dim(params.n_hidden, h.len())?;
    let mut out = vec![0.0; params.n_visible];
    params.visible_field(h, &mut out);
    out.iter_mut().for_each(|v| *v = sigmoid(*v));
    Ok(out)
}

/// Visible activation probabilities for a real-valued (mean-field) hidden vector.
pub fn visible_probs_mean_field(params: &RbmParams, hidden: &[f64]) -> Result<Vec<f64>> {
    check_dim(params.n_hidden, hidden.len())?;
    let mut out = vec![0.0; params.n_visible];
    params.visible_field_real(hidden, &mut out);
    out.iter_mut().for_each(|v| *v = sigmoid(*v));
    Ok(out)
}

/// Draws one bit per unit, consuming one uniform per unit in index order.
#[inline]
pub fn sample_bernoulli(probs: &[f64], rng: &mut RngStream) -> BinaryState {
    let mut bits = 0u64;
    for (i, &p) in probs.iter().enumerate() {
        if rng.uniform() < p {
            bits |= 1 << i;
        }
    }
    BinaryState::from_key(bits, probs.len())
}

/// Result of an `n`-step block Gibbs chain started at a visible state.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsOutput {
    /// Final visible sample `x_n`.
    pub x_n: BinaryState,
    /// `P(h | x_0)`, the distribution `h_1` was drawn from.
    pub h1_probs: Vec<f64>,
    /// `P(h | x_n)`.
    pub hn_probs: Vec<f64>,
}

/// Reusable buffers for running Gibbs chains without per-step allocation.
#[derive(Clone, Debug)]
pub struct GibbsSampler {
    hidden: Vec<f64>,
    visible: Vec<f64>,
}

impl GibbsSampler {
    pub fn new(params: &RbmParams) -> Self {
        Self { hidden: vec![0.0; params.n_hidden], visible: vec![0.0; params.n_visible] }
    }

    /// Hidden probabilities for `x`, left in the internal buffer.
    #[inline]
    pub fn hidden_probs(&mut self, params: &RbmParams, x: &BinaryState) -> &[f64] {
        params.hidden_field(x, &mut self.hidden);
        self.hidden.iter_mut().for_each(|v| *v = sigmoid(*v));
        &self.hidden
    }

    /// Runs `n` alternations starting with hidden probabilities `h_probs`
    /// already computed for the start state. Returns `x_n`.
    #[inline]
    pub fn run_from_probs(
        &mut self,
        params: &RbmParams,
        h_probs: &[f64],
        n: usize,
        rng: &mut RngStream,
    ) -> BinaryState {
        let mut h = sample_bernoulli(h_probs, rng);
        let mut x = self.visible_step(params, &h, rng);
        for _ in 1..n {
            self.hidden_probs(params, &x);
            h = sample_bernoulli(&self.hidden, rng);
            x = self.visible_step(params, &h, rng);
        }
        x
    }

    #[inline]
    fn visible_step(&mut self, params: &RbmParams, h: &BinaryState, rng: &mut RngStream) -> BinaryState {
        params.visible_field(h, &mut self.visible);
        let mut bits = 0u64;
        for (i, &a) in self.visible.iter().enumerate() {
            if rng.uniform() < sigmoid(a) {
                bits |= 1 << i;
            }
        }
        BinaryState::from_key(bits, params.n_visible)
    }

    /// `n` full Gibbs steps from `x0`.
    pub fn chain(&mut self, params: &RbmParams, x0: &BinaryState, n: usize, rng: &mut RngStream) -> BinaryState {
        let probs = self.hidden_probs(params, x0).to_vec();
        self.run_from_probs(params, &probs, n, rng)
    }
}

/// `h_k ~ P(h|x_{k-1})`, `x_k ~ P(x|h_k)` for `k = 1..=n`.
pub fn gibbs_chain(params: &RbmParams, x0: &BinaryState, n: usize, rng: &mut RngStream) -> Result<GibbsOutput> {
    check_dim(params.n_visible, x0.len())?;
    if n == 0 {
        return Err(RbmError::InvalidArgument("gibbs chain needs at least one step".into()));
    }
    let mut sampler = GibbsSampler::new(params);
    let h1_probs = sampler.hidden_probs(params, x0).to_vec();
    let x_n = sampler.run_from_probs(params, &h1_probs, n, rng);
    let hn_probs = sampler.hidden_probs(params, &x_n).to_vec();
    Ok(GibbsOutput { x_n, h1_probs, hn_probs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_states(n: usize) -> impl Iterator<Item = BinaryState> {
        (0..1u64 << n).map(move |k| BinaryState::from_key(k, n))
    }

    // Independent triple-loop evaluation of the energy on dense 0/1 vectors.
    fn naive_energy(p: &RbmParams, x: &[f64], h: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..x.len() {
            e -= p.b[i] * x[i];
        }
        for j in 0..h.len() {
            e -= p.c[j] * h[j];
            for i in 0..x.len() {
                e -= h[j] * p.w[j * x.len() + i] * x[i];
            }
        }
        e
    }

    fn brute_free_energy(p: &RbmParams, x: &BinaryState) -> f64 {
        let terms: Vec<f64> = all_states(p.n_hidden()).map(|h| -energy(p, x, &h).unwrap()).collect();
        terms.iter().map(|t| t.exp()).sum::<f64>().ln()
    }

    #[test]
    fn state_text_roundtrip_and_bit_order() {
        let s: BinaryState = "1100".parse().unwrap();
        assert!(s.get(0) && s.get(1) && !s.get(2));
        assert_eq!(s.key(), 0b0011);
        assert_eq!(s.to_string(), "1100");
        assert!("0102".parse::<BinaryState>().is_err());
        assert_eq!(s.complement().to_string(), "0011");
        assert_eq!(s.hamming(&s.complement()), 4);
    }

    #[test]
    fn energy_trivial_cases() {
        let p = RbmParams::zeros(3, 2);
        let x: BinaryState = "101".parse().unwrap();
        let h: BinaryState = "11".parse().unwrap();
        assert_eq!(energy(&p, &x, &h).unwrap(), 0.0);

        let mut p = RbmParams::zeros(2, 3);
        p.b = vec![1.0, -1.0];
        let x: BinaryState = "10".parse().unwrap();
        for h in all_states(3) {
            assert_eq!(energy(&p, &x, &h).unwrap(), -1.0);
        }
    }

    #[test]
    fn energy_matches_triple_loop() {
        let mut rng = RngStream::new(11);
        let p = RbmParams::random(4, 3, 1.0, &mut rng);
        for x in all_states(4) {
            for h in all_states(3) {
                let e = energy(&p, &x, &h).unwrap();
                let naive = naive_energy(&p, &x.to_f64_vec(), &h.to_f64_vec());
                assert!((e - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn energy_rejects_bad_dims() {
        let p = RbmParams::zeros(3, 2);
        let err = energy(&p, &BinaryState::zeros(4), &BinaryState::zeros(2)).unwrap_err();
        assert!(matches!(err, RbmError::DimensionMismatch { expected: 3, got: 4 }));
        assert!(free_energy_unnorm(&p, &BinaryState::zeros(2)).is_err());
        assert!(hidden_activation_probs(&p, &BinaryState::zeros(1)).is_err());
        assert!(visible_activation_probs(&p, &BinaryState::zeros(3)).is_err());
    }

    #[test]
    fn free_energy_trivial_cases() {
        let p = RbmParams::zeros(5, 3);
        let f = free_energy_unnorm(&p, &BinaryState::zeros(5)).unwrap();
        assert!((f - 3.0 * 2f64.ln()).abs() < 1e-15);

        let mut p = RbmParams::zeros(2, 1);
        p.b = vec![1.0, 1.0];
        let f = free_energy_unnorm(&p, &BinaryState::ones(2)).unwrap();
        assert!((f - (2.0 + 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn free_energy_matches_hidden_enumeration() {
        let mut rng = RngStream::new(3);
        for &(nv, nh, sigma) in &[(4, 3, 1.0), (6, 8, 0.5), (3, 12, 0.3), (5, 5, 3.0)] {
            let p = RbmParams::random(nv, nh, sigma, &mut rng);
            for x in all_states(nv) {
                let f = free_energy_unnorm(&p, &x).unwrap();
                let brute = brute_free_energy(&p, &x);
                assert!(((f - brute) / brute.abs().max(1e-300)).abs() <= 1e-10, "{f} vs {brute}");
            }
        }
    }

    #[test]
    fn activation_probs_trivial_and_saturated() {
        let p = RbmParams::zeros(4, 3);
        assert_eq!(hidden_activation_probs(&p, &BinaryState::ones(4)).unwrap(), vec![0.5; 3]);
        assert_eq!(visible_activation_probs(&p, &BinaryState::ones(3)).unwrap(), vec![0.5; 4]);

        let mut p = RbmParams::zeros(2, 2);
        p.c = vec![40.0, -40.0];
        p.b = vec![-40.0, 40.0];
        let h = hidden_activation_probs(&p, &BinaryState::zeros(2)).unwrap();
        assert!((h[0] - 1.0).abs() < 1e-15 && h[1] < 1e-15);
        let v = visible_activation_probs(&p, &BinaryState::zeros(2)).unwrap();
        assert!(v[0].abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conditionals_factorize() {
        let mut rng = RngStream::new(5);
        let p = RbmParams::random(5, 4, 1.0, &mut rng);
        for x in all_states(5) {
            // P(h|x) ∝ e^{-E(x,h)} by explicit normalization.
            let weights: Vec<f64> = all_states(4).map(|h| (-energy(&p, &x, &h).unwrap()).exp()).collect();
            let z: f64 = weights.iter().sum();
            let probs = hidden_activation_probs(&p, &x).unwrap();
            for (h, w) in all_states(4).zip(&weights) {
                let prod: f64 = (0..4).map(|j| if h.get(j) { probs[j] } else { 1.0 - probs[j] }).product();
                assert!((prod - w / z).abs() <= 1e-10);
            }
        }
        for h in all_states(4) {
            let weights: Vec<f64> = all_states(5).map(|x| (-energy(&p, &x, &h).unwrap()).exp()).collect();
            let z: f64 = weights.iter().sum();
            let probs = visible_activation_probs(&p, &h).unwrap();
            for (x, w) in all_states(5).zip(&weights) {
                let prod: f64 = (0..5).map(|i| if x.get(i) { probs[i] } else { 1.0 - probs[i] }).product();
                assert!((prod - w / z).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn stable_nonlinearities() {
        for z in [-700.0, -100.0, -1.0, 0.0, 1.0, 100.0, 700.0] {
            assert!(sigmoid(z).is_finite() && softplus(z).is_finite());
        }
        assert_eq!(softplus(700.0), 700.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
        assert!(sigmoid(-700.0) >= 0.0);
    }

    #[test]
    fn log_sum_exp_accumulator_matches_slice() {
        let vals = [3.0, -1.0, 1000.0, 999.5, -50.0];
        let mut acc = LogSumExp::default();
        vals.iter().for_each(|&v| acc.push(v));
        assert!((acc.value() - log_sum_exp(&vals)).abs() < 1e-12);
        let mut a = LogSumExp::default();
        let mut b = LogSumExp::default();
        vals[..2].iter().for_each(|&v| a.push(v));
        vals[2..].iter().for_each(|&v| b.push(v));
        assert!((a.merge(b).value() - log_sum_exp(&vals)).abs() < 1e-12);
        assert_eq!(LogSumExp::default().value(), f64::NEG_INFINITY);
    }

    #[test]
    fn gibbs_uniform_model_is_unbiased() {
        let p = RbmParams::zeros(6, 3);
        let mut rng = RngStream::new(99);
        let x0 = BinaryState::ones(6);
        let draws = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            let out = gibbs_chain(&p, &x0, 1, &mut rng).unwrap();
            for (i, c) in counts.iter_mut().enumerate() {
                *c += out.x_n.get(i) as usize;
            }
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn gibbs_is_reproducible() {
        let mut r = RngStream::new(1);
        let p = RbmParams::random(8, 5, 1.0, &mut r);
        let x0: BinaryState = "10110010".parse().unwrap();
        let a = gibbs_chain(&p, &x0, 7, &mut RngStream::new(42)).unwrap();
        let b = gibbs_chain(&p, &x0, 7, &mut RngStream::new(42)).unwrap();
        assert_eq!(a, b);
        assert!(gibbs_chain(&p, &x0, 0, &mut RngStream::new(42)).is_err());
    }

    #[test]
    fn split_streams_differ_and_are_stable() {
        let base = RngStream::new(7);
        let mut a = base.split(1);
        let mut b = base.split(2);
        let mut a2 = base.split(1);
        let (x, y, z) = (a.uniform(), b.uniform(), a2.uniform());
        assert_eq!(x, z);
        assert_ne!(x, y);
    }
}
