//! Deterministic numerical substrate: dense row-major `f64` arrays, a seeded
//! PRNG with documented algorithms, and the two noise distributions the rest
//! of the crate draws from.
//!
//! The generator is xoshiro256++ seeded through splitmix64. Uniform doubles
//! take the top 53 bits of a 64-bit output, normals come from Box-Muller.
//! Identical seeds therefore reproduce identical draw sequences at the
//! numeric-algorithm level.

use crate::error::{Error, Result};

/// Dense array of 64-bit reals in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct RealArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} expects {} entries, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    /// Builds an n x d matrix from row vectors. All rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::ShapeMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        RealArray::new(vec![rows.len(), d], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Row `i` of a 2-D array.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.shape.len(), 2, "row() needs a 2-D array");
        let d = self.shape[1];
        &self.data[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() needs a 2-D array");
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() needs a 2-D array");
        self.shape[1]
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seeded PRNG state. Not shareable between threads; parallel callers derive
/// independent substreams with [`RngState::substream`] before spawning.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    s: [u64; 4],
    gauss_spare: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self { seed, s, gauss_spare: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent stream from (seed, stream-index). The result
    /// depends only on the original seed, not on how far this state has
    /// advanced.
    pub fn substream(&self, stream: u64) -> RngState {
        let mut sm = self.seed;
        let a = splitmix64(&mut sm);
        let mut sm2 = stream.wrapping_add(0x517C_C1B7_2722_0A95);
        let b = splitmix64(&mut sm2);
        RngState::new(a ^ b.rotate_left(17))
    }

    /// xoshiro256++ next output.
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in [0, 1): top 53 bits scaled by 2^-53. Never returns 1.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal draw via Box-Muller (second value of each pair is
    /// cached in the state).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.gauss_spare.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform01();
        let u2 = self.uniform01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.gauss_spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform index in 0..n.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let i = (self.uniform01() * n as f64) as usize;
        i.min(n - 1)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn uniform_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform01()).collect()
    }
}

/// I.i.d. draws from N(0, 1) with the given shape.
pub fn sample_standard_normal(rng: &mut RngState, shape: &[usize]) -> RealArray {
    let n: usize = shape.iter().product();
    let data = rng.normal_vec(n);
    RealArray { shape: shape.to_vec(), data }
}

/// I.i.d. draws from U[0, 1) with the given shape.
pub fn sample_uniform01(rng: &mut RngState, shape: &[usize]) -> RealArray {
    let n: usize = shape.iter().product();
    let data = rng.uniform_vec(n);
    RealArray { shape: shape.to_vec(), data }
}

/// Sample mean and unbiased covariance (divisor n-1) of an n x d sample
/// matrix. The covariance is exactly symmetric by construction.
pub fn mean_and_covariance(samples: &RealArray) -> Result<(Vec<f64>, RealArray)> {
    let n = samples.rows();
    let d = samples.cols();
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        let r = samples.row(i);
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let r = samples.row(i);
        for a in 0..d {
            let da = r[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += da * (r[b] - mean[b]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    Ok((mean, RealArray::new(vec![d, d], cov)?))
}
