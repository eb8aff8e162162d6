//! Seeded random streams and discrete samplers shared by the simulators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;

/// Stream families, so different simulations never share random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Sequences = 1,
    Ladder = 2,
    TailTilted = 3,
    TailNaive = 4,
    Renewal = 5,
    Lundberg = 6,
}

/// Independent stream `index` of family `purpose` under `seed`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) ^ index);
    rng
}

/// Inverse-CDF sampler for a finite distribution.
#[derive(Debug, Clone)]
pub struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    pub fn new(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        // Guard the last cell against rounding so every draw lands somewhere.
        if let Some(pos) = weights.iter().rposition(|&w| w > 0.0) {
            cdf[pos..].iter_mut().for_each(|c| *c = f64::INFINITY);
        }
        Self { cdf }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len() - 1)
    }
}

/// Samplers for the rows of a stochastic matrix.
#[derive(Debug, Clone)]
pub struct RowSampler {
    rows: Vec<Categorical>,
}

impl RowSampler {
    pub fn new(m: &Matrix) -> Self {
        Self { rows: (0..m.n_rows()).map(|i| Categorical::new(m.row(i))).collect() }
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        self.rows[from].sample(rng)
    }
}

/// A stationary Markov chain: initial law and transitions.
#[derive(Debug, Clone)]
pub struct Chain {
    pub start: Categorical,
    pub step: RowSampler,
}

impl Chain {
    pub fn new(pi: &[f64], p: &Matrix) -> Self {
        Self { start: Categorical::new(pi), step: RowSampler::new(p) }
    }

    /// `len` states starting from the initial law.
    pub fn path<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<u8> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut s = self.start.sample(rng);
        out.push(s as u8);
        for _ in 1..len {
            s = self.step.step(s, rng);
            out.push(s as u8);
        }
        out
    }
}
