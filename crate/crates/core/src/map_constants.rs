//! Simulation estimates of the ladder constants `ν`, `μ₋`, `e(x, y)` and
//! `K*`, and the Gumbel normalization built from `(θ*, K*)`.
//!
//! Pair states `(x, y)` are indexed `x*|E| + y`. The start state of a walk is
//! its state at time 0 and is not scored; the first score is that of the step
//! out of it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{self, ScoreModel};
use crate::sim::{self, Categorical, Purpose, RowSampler};
use crate::spectral::{self, TiltedModel};
use crate::stats::Moments;

const BLOCK: usize = 1000;
const BATCHES: usize = 100;
/// Walks longer than this are abandoned; with negative drift they never get close.
const MAX_WALK: usize = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderOptions {
    /// Ladder cycles recorded after burn-in.
    pub cycles: usize,
    pub burn_in: usize,
    /// Tilted walks per start state for the tail constants.
    pub tail_samples: usize,
    /// Untilted walks per start state for the cross-check; 0 disables it.
    pub naive_samples: usize,
    pub seed: Option<u64>,
    /// Maximal accepted relative standard error of `K*`.
    pub stderr_cap: Option<f64>,
}

impl Default for LadderOptions {
    fn default() -> Self {
        Self {
            cycles: 1_000_000,
            burn_in: 1000,
            tail_samples: 20_000,
            naive_samples: 0,
            seed: None,
            stderr_cap: None,
        }
    }
}

/// `ℙ_{x,y}(max_{n ≤ τ₋(1)} S_n > u) e^{θ* u}` on a grid of `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderStats {
    /// Empirical law of the ladder states.
    pub nu: Vec<f64>,
    pub nu_stderr: Vec<f64>,
    /// Invariant law of the empirical ladder transition matrix, when irreducible.
    pub nu_chain: Option<Vec<f64>>,
    /// Mean ladder time `E_ν τ₋(1)`.
    pub mu_minus: f64,
    pub mu_minus_stderr: f64,
    /// Mean ladder height `E_ν S_{τ₋(1)}`.
    pub ladder_height: f64,
    pub ladder_height_stderr: f64,
    /// `E_ν S_{τ₋(1)} / μ`, which equals `μ₋` by Wald's identity.
    pub wald_mu_minus: f64,
    pub wald_stderr: f64,
    /// `ℙ_ν(τ₋(1) ≥ k)` for `k = 1, 2, ...` while positive.
    pub ladder_time_survival: Vec<f64>,
    pub tail_grid: Vec<f64>,
    pub tail_curves: Vec<TailCurve>,
    pub naive_curves: Option<Vec<TailCurve>>,
    /// Whether each curve is flat over the upper half of the grid within 3 stderr.
    pub plateau_flat: Vec<bool>,
    pub e_table: Vec<f64>,
    pub e_stderr: Vec<f64>,
    pub k_star: f64,
    pub k_star_stderr: f64,
    pub seed: u64,
    pub cycles: usize,
    pub tail_samples: usize,
}

/// Grid `u = 1, 2, ..., ⌈25/θ*⌉`.
pub fn tail_grid(theta_star: f64) -> Vec<f64> {
    let top = (25.0 / theta_star).ceil().max(2.0) as usize;
    (1..=top).map(|u| u as f64).collect()
}

struct Walker {
    n: usize,
    x_step: RowSampler,
    y_step: RowSampler,
    score: Matrix,
}

impl Walker {
    fn new(model: &ScoreModel) -> Self {
        Self {
            n: model.n_states(),
            x_step: RowSampler::new(model.p()),
            y_step: RowSampler::new(model.q()),
            score: model.step_score_table(),
        }
    }

    #[inline]
    fn step<R: rand::Rng>(&self, z: usize, rng: &mut R) -> usize {
        let x = self.x_step.step(z / self.n, rng);
        let y = self.y_step.step(z % self.n, rng);
        x * self.n + y
    }
}

fn stationary_start(model: &ScoreModel) -> Result<Categorical> {
    let info = model::stationary(model)?;
    Ok(Categorical::new(&info.pi))
}

fn batch_stderr(values: &[f64]) -> f64 {
    if values.len() < 2 * BATCHES {
        return values.iter().copied().collect::<Moments>().stderr();
    }
    let size = values.len() / BATCHES;
    let means: Moments = values.chunks(size).take(BATCHES).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    means.stderr()
}

struct Cycles {
    start: Vec<u32>,
    end: Vec<u32>,
    len: Vec<f64>,
    height: Vec<f64>,
}

fn simulate_cycles(model: &ScoreModel, walker: &Walker, burn_in: usize, cycles: usize, seed: u64) -> Result<Cycles> {
    let mut rng = sim::stream(seed, Purpose::Ladder, 0);
    let mut z = stationary_start(model)?.sample(&mut rng);
    let mut out = Cycles {
        start: Vec::with_capacity(cycles),
        end: Vec::with_capacity(cycles),
        len: Vec::with_capacity(cycles),
        height: Vec::with_capacity(cycles),
    };
    for c in 0..burn_in + cycles {
        let start = z;
        let mut s = 0.0;
        let mut len = 0usize;
        loop {
            let next = walker.step(z, &mut rng);
            s += walker.score[(z, next)];
            z = next;
            len += 1;
            if s <= 0.0 {
                break;
            }
            if len > MAX_WALK {
                return Err(Error::ConvergenceFailure { what: "ladder epoch", iterations: len });
            }
        }
        if c >= burn_in {
            out.start.push(start as u32);
            out.end.push(z as u32);
            out.len.push(len as f64);
            out.height.push(s);
        }
    }
    Ok(out)
}

/// Per-block accumulators for the tilted tail estimator.
#[derive(Clone)]
struct TailAcc {
    count: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    /// Cross products over the upper half of the grid.
    cross: Vec<f64>,
}

impl TailAcc {
    fn new(g: usize, h: usize) -> Self {
        Self { count: 0, sum: vec![0.0; g], sum_sq: vec![0.0; g], cross: vec![0.0; h * h] }
    }

    fn merge(&mut self, o: &TailAcc) {
        self.count += o.count;
        for (a, b) in self.sum.iter_mut().zip(&o.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&o.sum_sq) {
            *a += b;
        }
        for (a, b) in self.cross.iter_mut().zip(&o.cross) {
            *a += b;
        }
    }
}

struct Tilted {
    step: RowSampler,
    /// `log P(a, b) - log R*(a, b)`
    log_ratio: Matrix,
}

fn tilted_walker(model: &ScoreModel, tilted: &TiltedModel) -> Tilted {
    let m = model.n_pairs();
    let log_ratio = Matrix::from_fn(m, m, |a, b| {
        let r = tilted.r_matrix[(a, b)];
        if r > 0.0 {
            model.step_prob(a, b).ln() - r.ln()
        } else {
            0.0
        }
    });
    Tilted { step: RowSampler::new(&tilted.r_matrix), log_ratio }
}

fn tail_block(
    walker: &Walker,
    tw: &Tilted,
    theta: f64,
    grid: &[f64],
    z0: usize,
    samples: usize,
    mut rng: impl rand::Rng,
) -> TailAcc {
    let g = grid.len();
    let lo = g / 2;
    let h = g - lo;
    let mut acc = TailAcc::new(g, h);
    let mut y = vec![0.0; g];
    for _ in 0..samples {
        y.iter_mut().for_each(|v| *v = 0.0);
        let (mut z, mut s, mut logw, mut k) = (z0, 0.0_f64, 0.0_f64, 0usize);
        while k < g {
            let next = tw.step.step(z, &mut rng);
            s += walker.score[(z, next)];
            logw += tw.log_ratio[(z, next)];
            z = next;
            if s <= 0.0 {
                break;
            }
            while k < g && s > grid[k] {
                y[k] = (logw + theta * grid[k]).exp();
                k += 1;
            }
        }
        acc.count += 1;
        for u in 0..g {
            acc.sum[u] += y[u];
            acc.sum_sq[u] += y[u] * y[u];
        }
        if k > lo {
            for a in lo..g {
                for b in lo..g {
                    acc.cross[(a - lo) * h + (b - lo)] += y[a] * y[b];
                }
            }
        }
    }
    acc
}

fn naive_block(walker: &Walker, grid: &[f64], z0: usize, samples: usize, mut rng: impl rand::Rng) -> Vec<u64> {
    let mut hits = vec![0u64; grid.len()];
    for _ in 0..samples {
        let top = walk_max(walker, z0, grid[grid.len() - 1], &mut rng);
        for (h, &u) in hits.iter_mut().zip(grid) {
            if top > u {
                *h += 1;
            }
        }
    }
    hits
}

/// `max_{1 ≤ n ≤ τ₋(1)} S_n` from `z0`, stopping early once above `cap`.
fn walk_max(walker: &Walker, z0: usize, cap: f64, rng: &mut impl rand::Rng) -> f64 {
    let (mut z, mut s, mut top) = (z0, 0.0_f64, f64::NEG_INFINITY);
    loop {
        let next = walker.step(z, rng);
        s += walker.score[(z, next)];
        z = next;
        top = top.max(s);
        if s <= 0.0 || top > cap {
            return top;
        }
    }
}

fn blocks(samples: usize) -> Vec<(usize, usize)> {
    (0..samples.div_ceil(BLOCK)).map(|b| (b, BLOCK.min(samples - b * BLOCK))).collect()
}

/// Invariant law of the empirical ladder chain restricted to visited states.
fn ladder_chain_law(trans: &Matrix) -> Option<Vec<f64>> {
    let visited: Vec<usize> = (0..trans.n_rows()).filter(|&a| trans.row(a).iter().sum::<f64>() > 0.0).collect();
    let sub = Matrix::from_fn(visited.len(), visited.len(), |i, j| trans[(visited[i], visited[j])]);
    let left = spectral::perron(&sub).ok()?.left;
    let mut nu = vec![0.0; trans.n_rows()];
    for (k, &a) in visited.iter().enumerate() {
        nu[a] = left[k];
    }
    Some(nu)
}

/// Estimate `ν`, `μ₋`, `e(x, y)` and `K*`.
pub fn simulate_ladder(model: &ScoreModel, tilted: &TiltedModel, opts: &LadderOptions) -> Result<LadderStats> {
    let seed = opts.seed.ok_or(Error::SeedRequired)?;
    if opts.cycles == 0 || opts.tail_samples == 0 {
        return Err(Error::InvalidArgument("cycles and tail samples must be positive".into()));
    }
    let m = model.n_pairs();
    let walker = Walker::new(model);
    let theta = tilted.theta_star;

    // Ladder chain under the original law.
    let cyc = simulate_cycles(model, &walker, opts.burn_in, opts.cycles, seed)?;
    let total = cyc.len.len() as f64;
    let mut nu = vec![0.0; m];
    let mut trans = Matrix::zeros(m, m);
    for (&a, &b) in cyc.start.iter().zip(&cyc.end) {
        nu[a as usize] += 1.0;
        trans[(a as usize, b as usize)] += 1.0;
    }
    nu.iter_mut().for_each(|v| *v /= total);
    let nu_stderr: Vec<f64> = (0..m)
        .map(|z| {
            let ind: Vec<f64> = cyc.start.iter().map(|&a| f64::from(a as usize == z)).collect();
            batch_stderr(&ind)
        })
        .collect();
    for a in 0..m {
        let s: f64 = trans.row(a).iter().sum();
        if s > 0.0 {
            trans.row_mut(a).iter_mut().for_each(|v| *v /= s);
        }
    }
    let nu_chain = ladder_chain_law(&trans);
    let mu_minus = cyc.len.iter().sum::<f64>() / total;
    let mu_minus_stderr = batch_stderr(&cyc.len);
    let ladder_height = cyc.height.iter().sum::<f64>() / total;
    let ladder_height_stderr = batch_stderr(&cyc.height);
    let mu = tilted.mu;
    let wald_mu_minus = ladder_height / mu;
    let wald_stderr = ladder_height_stderr / mu.abs();
    let max_len = cyc.len.iter().cloned().fold(0.0, f64::max) as usize;
    let mut survival = vec![0.0; max_len];
    for &l in &cyc.len {
        survival[l as usize - 1] += 1.0;
    }
    let mut acc = total;
    for v in survival.iter_mut() {
        let here = *v;
        *v = acc / total;
        acc -= here;
    }

    // Tail constants by importance sampling under the tilted chain.
    let grid = tail_grid(theta);
    let g = grid.len();
    let lo = g / 2;
    let h = g - lo;
    let tw = tilted_walker(model, tilted);
    let mut tail_curves = Vec::with_capacity(m);
    let mut e_table = Vec::with_capacity(m);
    let mut e_stderr = Vec::with_capacity(m);
    let mut plateau_flat = Vec::with_capacity(m);
    for z0 in 0..m {
        let parts: Vec<TailAcc> = blocks(opts.tail_samples)
            .into_par_iter()
            .map(|(b, n)| {
                let rng = sim::stream(seed, Purpose::TailTilted, (z0 * 1_000_000 + b) as u64);
                tail_block(&walker, &tw, theta, &grid, z0, n, rng)
            })
            .collect();
        let mut acc = TailAcc::new(g, h);
        parts.iter().for_each(|p| acc.merge(p));
        let nn = acc.count as f64;
        let mean: Vec<f64> = acc.sum.iter().map(|s| s / nn).collect();
        let var: Vec<f64> =
            acc.sum_sq.iter().zip(&mean).map(|(s2, mu)| ((s2 / nn - mu * mu) * nn / (nn - 1.0)).max(0.0)).collect();
        let se: Vec<f64> = var.iter().map(|v| (v / nn).sqrt()).collect();

        // Inverse-variance weights over the upper half of the grid.
        let inv: Vec<f64> = (lo..g).map(|u| if var[u] > 0.0 { 1.0 / var[u] } else { 0.0 }).collect();
        let inv_total: f64 = inv.iter().sum();
        let (e, e_se) = if inv_total > 0.0 {
            let c: Vec<f64> = inv.iter().map(|w| w / inv_total).collect();
            let e: f64 = c.iter().zip(&mean[lo..]).map(|(c, m)| c * m).sum();
            let mut v = 0.0;
            for a in 0..h {
                for b in 0..h {
                    let cov = (acc.cross[a * h + b] / nn - mean[lo + a] * mean[lo + b]) * nn / (nn - 1.0);
                    v += c[a] * c[b] * cov;
                }
            }
            (e, (v.max(0.0) / nn).sqrt())
        } else {
            (0.0, 0.0)
        };
        plateau_flat.push((mean[lo] - mean[g - 1]).abs() <= 3.0 * (se[lo].powi(2) + se[g - 1].powi(2)).sqrt());
        tail_curves.push(TailCurve { estimate: mean, stderr: se });
        e_table.push(e);
        e_stderr.push(e_se);
    }

    let naive_curves = if opts.naive_samples > 0 {
        Some(
            (0..m)
                .map(|z0| {
                    let parts: Vec<Vec<u64>> = blocks(opts.naive_samples)
                        .into_par_iter()
                        .map(|(b, n)| {
                            let rng = sim::stream(seed, Purpose::TailNaive, (z0 * 1_000_000 + b) as u64);
                            naive_block(&walker, &grid, z0, n, rng)
                        })
                        .collect();
                    let nn = opts.naive_samples as f64;
                    let hits: Vec<f64> =
                        (0..g).map(|u| parts.iter().map(|p| p[u] as f64).sum::<f64>()).collect();
                    let estimate = hits.iter().zip(&grid).map(|(k, u)| k / nn * (theta * u).exp()).collect();
                    let stderr = hits
                        .iter()
                        .zip(&grid)
                        .map(|(k, u)| {
                            let p = k / nn;
                            (p * (1.0 - p) / nn).sqrt() * (theta * u).exp()
                        })
                        .collect();
                    TailCurve { estimate, stderr }
                })
                .collect(),
        )
    } else {
        None
    };

    let weighted: f64 = nu.iter().zip(&e_table).map(|(n, e)| n * e).sum();
    let k_star = weighted / mu_minus;
    let weighted_var: f64 = (0..m).map(|z| (nu[z] * e_stderr[z]).powi(2) + (e_table[z] * nu_stderr[z]).powi(2)).sum();
    let k_star_stderr =
        k_star * ((weighted_var.sqrt() / weighted).powi(2) + (mu_minus_stderr / mu_minus).powi(2)).sqrt();
    if let Some(cap) = opts.stderr_cap {
        if !(k_star_stderr <= cap * k_star) {
            return Err(Error::InsufficientReplicates { what: "K*", stderr: k_star_stderr / k_star, cap });
        }
    }

    Ok(LadderStats {
        nu,
        nu_stderr,
        nu_chain,
        mu_minus,
        mu_minus_stderr,
        ladder_height,
        ladder_height_stderr,
        wald_mu_minus,
        wald_stderr,
        ladder_time_survival: survival,
        tail_grid: grid,
        tail_curves,
        naive_curves,
        plateau_flat,
        e_table,
        e_stderr,
        k_star,
        k_star_stderr,
        seed,
        cycles: opts.cycles,
        tail_samples: opts.tail_samples,
    })
}

/// Time-averaged frequency of `(T_k = 0, X_k = x, Y_k = y)` over `k ≤ n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenewalEstimate {
    pub n: usize,
    pub replicates: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Independent stationary walks of length `n`, reflected at zero.
pub fn renewal_frequencies(model: &ScoreModel, n: usize, replicates: usize, seed: u64) -> Result<RenewalEstimate> {
    if n == 0 || replicates < 2 {
        return Err(Error::InvalidArgument("renewal check needs n > 0 and at least 2 replicates".into()));
    }
    let m = model.n_pairs();
    let walker = Walker::new(model);
    let start = stationary_start(model)?;
    let per: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = sim::stream(seed, Purpose::Renewal, r as u64);
            let mut z = start.sample(&mut rng);
            let mut t = 0.0_f64;
            let mut counts = vec![0u64; m];
            for _ in 0..n {
                let next = walker.step(z, &mut rng);
                t = (t + walker.score[(z, next)]).max(0.0);
                z = next;
                if t == 0.0 {
                    counts[z] += 1;
                }
            }
            counts.into_iter().map(|c| c as f64 / n as f64).collect()
        })
        .collect();
    let mut mean = Vec::with_capacity(m);
    let mut stderr = Vec::with_capacity(m);
    for z in 0..m {
        let mo: Moments = per.iter().map(|v| v[z]).collect();
        mean.push(mo.mean());
        stderr.push(mo.stderr());
    }
    Ok(RenewalEstimate { n, replicates, mean, stderr })
}

/// Untilted estimate of `ℙ(max_{n ≤ τ₋(1)} S_n > u)` from the stationary start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailPoint {
    pub u: f64,
    pub hits: u64,
    pub samples: u64,
}

impl TailPoint {
    pub fn p_hat(&self) -> f64 {
        self.hits as f64 / self.samples as f64
    }
}

pub fn ladder_tail_naive(model: &ScoreModel, grid: &[f64], samples: usize, seed: u64) -> Result<Vec<TailPoint>> {
    if grid.is_empty() || samples == 0 {
        return Err(Error::InvalidArgument("empty grid or zero samples".into()));
    }
    let walker = Walker::new(model);
    let start = stationary_start(model)?;
    let cap = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let parts: Vec<Vec<u64>> = blocks(samples)
        .into_par_iter()
        .map(|(b, n)| {
            let mut rng = sim::stream(seed, Purpose::Lundberg, b as u64);
            let mut hits = vec![0u64; grid.len()];
            for _ in 0..n {
                let z0 = start.sample(&mut rng);
                let top = walk_max(&walker, z0, cap, &mut rng);
                for (h, &u) in hits.iter_mut().zip(grid) {
                    if top > u {
                        *h += 1;
                    }
                }
            }
            hits
        })
        .collect();
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &u)| TailPoint { u, hits: parts.iter().map(|p| p[k]).sum(), samples: samples as u64 })
        .collect())
}

/// Gumbel parameters `(θ*, K*)` with the lattice flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelParams {
    pub theta_star: f64,
    pub k_star: f64,
    pub lattice: bool,
}

pub fn gumbel_params(model: &ScoreModel, tilted: &TiltedModel, ladder: &LadderStats) -> GumbelParams {
    GumbelParams { theta_star: tilted.theta_star, k_star: ladder.k_star, lattice: model.lattice() }
}

impl GumbelParams {
    /// `t = (log K* + log(n_x n_y) + x) / θ*`
    pub fn t_mn(&self, n_x: usize, n_y: usize, x: f64) -> f64 {
        (self.k_star.ln() + (n_x as f64).ln() + (n_y as f64).ln() + x) / self.theta_star
    }

    pub fn t_n(&self, n: usize, x: f64) -> f64 {
        self.t_mn(n, n, x)
    }

    /// Lattice correction `θ*(t - ⌊t⌋)`, zero for real-valued scores.
    pub fn x_correction(&self, t: f64) -> f64 {
        if self.lattice {
            self.theta_star * (t - t.floor())
        } else {
            0.0
        }
    }

    pub fn x_n(&self, n: usize, x: f64) -> f64 {
        self.x_correction(self.t_n(n, x))
    }

    /// Poisson mean `exp(-x + x_n)` of `Cₙ(tₙ)`.
    pub fn lambda(&self, n_x: usize, n_y: usize, x: f64) -> f64 {
        (-x + self.x_correction(self.t_mn(n_x, n_y, x))).exp()
    }
}

/// `s' = θ* s - log(K* n_x n_y)` and the Gumbel approximation to
/// `ℙ(Mₙ > s)`, `1 - exp(-exp(-s' + x))` with `x` the lattice correction at `s`.
pub fn normalize_score(params: &GumbelParams, s: f64, n_x: usize, n_y: usize) -> (f64, f64) {
    let s_prime = params.theta_star * s - (params.k_star * n_x as f64 * n_y as f64).ln();
    let lambda = (-s_prime + params.x_correction(s)).exp();
    let p = -(-lambda).exp_m1();
    (s_prime, p.clamp(0.0, 1.0))
}

/// Approximate p-value `ℙ(Mₙ ≥ s)` of an observed score `s`.
pub fn p_value(params: &GumbelParams, s: f64, n_x: usize, n_y: usize) -> f64 {
    if params.lattice && s.fract() == 0.0 {
        normalize_score(params, s - 1.0, n_x, n_y).1
    } else {
        normalize_score(params, s, n_x, n_y).1
    }
}
