//! Replayable random streams and Beta sampling.
//!
//! A stream is addressed by `(master_seed, stream_key)` and backed by a
//! ChaCha8 block counter, so the n-th draw of a stream is a pure function of
//! the address and n. Purpose-specific streams are obtained with
//! [`RngStream::derive`], never by sharing one stream between consumers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Purpose tags mixed into stream keys.
pub mod keys {
    pub const PAIRING: u64 = 0x7061_6972;
    pub const LAMBDA: u64 = 0x6c61_6d62;
    pub const BOX: u64 = 0x626f_7800;
    pub const DROP: u64 = 0x6472_6f70;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const MIX: u64 = 0x6d69_7800;
    pub const CENTERS: u64 = 0x6365_6e74;
    pub const TRAIN_SPLIT: u64 = 0x7472_6e00;
    pub const EVAL_SPLIT: u64 = 0x6576_6c00;
    pub const LABELINFO: u64 = 0x6c69_6e66;
    pub const LABEL_NOISE: u64 = 0x6e6f_6973;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a parent key with a purpose tag and an index into a child key.
pub fn derive_key(parent: u64, purpose: u64, index: u64) -> u64 {
    splitmix(splitmix(parent ^ splitmix(purpose)).wrapping_add(index))
}

#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_key: u64,
    inner: ChaCha8Rng,
}

impl PartialEq for RngStream {
    fn eq(&self, other: &Self) -> bool {
        self.master_seed == other.master_seed
            && self.stream_key == other.stream_key
            && self.inner.get_word_pos() == other.inner.get_word_pos()
    }
}

impl RngStream {
    pub fn new(master_seed: u64, stream_key: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_key);
        RngStream {
            master_seed,
            stream_key,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_key(&self) -> u64 {
        self.stream_key
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// A fresh stream for `(purpose, index)` under this stream's address.
    /// Does not depend on (or advance) this stream's position.
    pub fn derive(&self, purpose: u64, index: u64) -> RngStream {
        RngStream::new(
            self.master_seed,
            derive_key(self.stream_key, purpose, index),
        )
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`.
    fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform random permutation of `0..n` (Fisher-Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Gamma(shape, 1) for shape >= 1 (Marsaglia & Tsang squeeze).
fn gamma_ge1(stream: &mut RngStream, shape: f64) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = stream.normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = stream.uniform_open0();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// One draw from the symmetric Beta(alpha, alpha).
///
/// `alpha < 1` uses Johnk's rejection sampler in the log domain, which stays
/// accurate when `U^(1/alpha)` underflows; `alpha >= 1` uses the ratio of two
/// Gamma draws.
pub fn beta_sample(stream: &mut RngStream, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!(
            "beta alpha must be positive and finite, got {alpha}"
        )));
    }
    if alpha < 1.0 {
        let inv = 1.0 / alpha;
        loop {
            let lx = stream.uniform_open0().ln() * inv;
            let ly = stream.uniform_open0().ln() * inv;
            let lsum = log_add_exp(lx, ly);
            if lsum <= 0.0 {
                if lsum == f64::NEG_INFINITY {
                    // both terms underflowed even in log space; pick an endpoint
                    return Ok(if lx >= ly { 1.0 } else { 0.0 });
                }
                return Ok((lx - lsum).exp().clamp(0.0, 1.0));
            }
        }
    }
    let x = gamma_ge1(stream, alpha);
    let y = gamma_ge1(stream, alpha);
    Ok(x / (x + y))
}
