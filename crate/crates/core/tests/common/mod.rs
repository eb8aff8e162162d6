#![allow(dead_code)]

use markalign::model::ScoreModel;
use markalign::spectral::{solve_theta_star, TiltedModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn binary_reference() -> ScoreModel {
    let u = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
    ScoreModel::pair(u.clone(), u, vec![vec![1.0, -2.0], vec![-2.0, 1.0]]).unwrap()
}

pub fn markov_reference() -> ScoreModel {
    let p = vec![vec![0.6, 0.4], vec![0.3, 0.7]];
    ScoreModel::pair(p.clone(), p, vec![vec![1.0, -2.0], vec![-2.0, 1.0]]).unwrap()
}

pub const MARKOV_REFERENCE_TOML: &str = "alphabet = [\"A\", \"B\"]\n\
P = [[0.6, 0.4], [0.3, 0.7]]\n\
Q = [[0.6, 0.4], [0.3, 0.7]]\n\
score = [[1, -2], [-2, 1]]\n";

pub const BINARY_REFERENCE_TOML: &str = "alphabet = [\"A\", \"B\"]\n\
P = [[0.5, 0.5], [0.5, 0.5]]\n\
Q = [[0.5, 0.5], [0.5, 0.5]]\n\
score = [[1, -2], [-2, 1]]\n";

/// Random probability vector with entries bounded away from zero.
pub fn simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Random irreducible aperiodic stochastic matrix. With `sparse`, entries off
/// the diagonal and the cycle `i -> i+1` may be zero.
pub fn stochastic(rng: &mut impl Rng, n: usize, sparse: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n)
                .map(|j| {
                    let keep = !sparse || j == i || j == (i + 1) % n || rng.gen_bool(0.5);
                    if keep {
                        rng.gen_range(0.05..1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect()
}

pub fn int_table(rng: &mut impl Rng, rows: usize, cols: usize, lo: i32, hi: i32) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(lo..=hi) as f64).collect()).collect()
}

pub fn real_table(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(lo..hi)).collect()).collect()
}

/// Any valid model, pair or transition scores, drift unconstrained.
pub fn random_model(rng: &mut impl Rng, max_states: usize) -> ScoreModel {
    let n = rng.gen_range(2..=max_states);
    let sparse = rng.gen_bool(0.3);
    let p = stochastic(rng, n, sparse);
    let q = stochastic(rng, n, sparse);
    let f = if rng.gen_bool(0.5) {
        int_table(rng, n, n, -3, 2)
    } else {
        int_table(rng, n * n, n * n, -3, 2)
    };
    if f.len() == n {
        ScoreModel::pair(p, q, f).unwrap()
    } else {
        ScoreModel::transition(p, q, f).unwrap()
    }
}

/// A model with negative drift and a positive cycle, with its tilted chain.
pub fn random_tilted_model(rng: &mut impl Rng, max_states: usize) -> (ScoreModel, TiltedModel) {
    loop {
        let m = random_model(rng, max_states);
        if let Ok(t) = solve_theta_star(&m) {
            return (m, t);
        }
    }
}

/// Left invariant vector of a stochastic matrix by a dense linear solve.
pub fn invariant_law(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(j, i)] = rows[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b).expect("invariant law");
    x.iter().copied().collect()
}

/// Spectral radius by a dense eigenvalue decomposition.
pub fn spectral_radius(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Relative entropy `H(p | q)`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Score of aligning `x[p]` with `y[q]`; transition scores look at the
/// preceding pair and give 0 at the sequence starts.
pub fn letter_score(model: &ScoreModel, x: &[u8], y: &[u8], p: usize, q: usize) -> f64 {
    match model.pair_scores() {
        Some(f) => f[(x[p] as usize, y[q] as usize)],
        None if p == 0 || q == 0 => 0.0,
        None => model.step_score(
            model.pair_index(x[p - 1] as usize, y[q - 1] as usize),
            model.pair_index(x[p] as usize, y[q] as usize),
        ),
    }
}

/// `Mₙ` by enumerating every start pair and length.
pub fn brute_max(model: &ScoreModel, x: &[u8], y: &[u8]) -> f64 {
    let mut best = 0.0_f64;
    for i in 0..x.len() {
        for j in 0..y.len() {
            let mut s = 0.0;
            for d in 0..(x.len() - i).min(y.len() - j) {
                s += letter_score(model, x, y, i + d, j + d);
                best = best.max(s);
            }
        }
    }
    best
}

/// Excursion peaks of every diagonal from prefix sums: `T_k = S_k - min S`,
/// with an excursion identified by the last time the running minimum is hit.
pub fn brute_peaks(model: &ScoreModel, x: &[u8], y: &[u8]) -> Vec<f64> {
    let mut peaks = Vec::new();
    let (nx, ny) = (x.len() as isize, y.len() as isize);
    for off in -(nx - 1)..ny {
        let (i0, j0) = if off >= 0 { (0, off as usize) } else { ((-off) as usize, 0) };
        let len = (x.len() - i0).min(y.len() - j0);
        let (mut s, mut min, mut argmin) = (0.0_f64, 0.0_f64, 0usize);
        let mut current: Option<(usize, f64)> = None;
        for k in 1..=len {
            s += letter_score(model, x, y, i0 + k - 1, j0 + k - 1);
            if s <= min {
                min = s;
                argmin = k;
            }
            let t = s - min;
            if t > 0.0 {
                match &mut current {
                    Some((id, peak)) if *id == argmin => *peak = peak.max(t),
                    _ => {
                        if let Some((_, p)) = current.take() {
                            peaks.push(p);
                        }
                        current = Some((argmin, t));
                    }
                }
            }
        }
        if let Some((_, p)) = current {
            peaks.push(p);
        }
    }
    peaks
}

pub fn random_letters(rng: &mut impl Rng, n_states: usize, len: usize) -> Vec<u8> {
    (0..len).map(|_| rng.gen_range(0..n_states) as u8).collect()
}
