//! Monte Carlo validation of the Poisson and Gumbel limits for `Cₙ(tₙ)` and `Mₙ`.

use rayon::prelude::*;
use serde::Serialize;

use crate::align::{PeakScanner, PeakSummary, Sequences};
use crate::conditions::Verdict;
use crate::error::{Error, Result};
use crate::map_constants::GumbelParams;
use crate::model::{self, ScoreModel};
use crate::sim::{self, Chain, Purpose};
use crate::stats::{self, Moments, Z_99};

/// Poisson pmf truncation: cells beyond the point where the tail mass drops below this are dropped.
pub const POISSON_TAIL: f64 = 1e-12;

pub const DEFAULT_NS: [usize; 3] = [500, 2000, 8000];
pub const DEFAULT_XS: [f64; 4] = [-1.0, 0.0, 1.0, 2.0];
pub const DEFAULT_REPLICATES: usize = 2000;

/// Stationary samplers for both sequences.
pub struct PairSampler {
    x: Chain,
    y: Chain,
}

impl PairSampler {
    pub fn new(model: &ScoreModel) -> Result<Self> {
        let info = model::stationary(model)?;
        Ok(Self { x: Chain::new(&info.pi_p, model.p()), y: Chain::new(&info.pi_q, model.q()) })
    }

    /// Replicate `index` under `seed`; X and Y use separate streams.
    pub fn sample(&self, n_x: usize, n_y: usize, seed: u64, index: u64) -> Sequences {
        let mut rx = sim::stream(seed, Purpose::Sequences, 2 * index);
        let mut ry = sim::stream(seed, Purpose::Sequences, 2 * index + 1);
        Sequences { x: self.x.path(n_x, &mut rx), y: self.y.path(n_y, &mut ry) }
    }
}

/// Stationary sequences `X₁..X_{n_x}` and `Y₁..Y_{n_y}`.
pub fn simulate_chain_pair(model: &ScoreModel, n_x: usize, n_y: usize, seed: u64) -> Result<Sequences> {
    Ok(PairSampler::new(model)?.sample(n_x, n_y, seed, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRun {
    pub n_x: usize,
    pub n_y: usize,
    pub x: f64,
    pub t_n: f64,
    pub x_n: f64,
    /// Poisson mean `exp(-x + x_n)`.
    pub lambda: f64,
    pub replicates: usize,
    pub seed: u64,
    /// `histogram[k]` = replicates with `Cₙ(tₙ) = k`.
    pub histogram: Vec<u64>,
    pub tv_distance: f64,
    /// Support size used for the plug-in bias allowance.
    pub support: usize,
    /// `0.5 √(support / replicates)`
    pub bias_allowance: f64,
    /// `ℙ̂(Mₙ ≤ tₙ)`
    pub p_hat: f64,
    /// `exp(-exp(-x + x_n))`
    pub gumbel_target: f64,
    pub gumbel_gap: f64,
    /// 99% normal interval for `ℙ(Mₙ ≤ tₙ)`.
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_count: f64,
    pub mean_stderr: f64,
    /// Whether `Cₙ(tₙ) = 0 ⟺ Mₙ ≤ tₙ` held on every replicate.
    pub zero_identity: bool,
}

impl ValidationRun {
    /// 99% normal interval for `E Cₙ(tₙ)`.
    pub fn mean_ci(&self) -> (f64, f64) {
        (self.mean_count - Z_99 * self.mean_stderr, self.mean_count + Z_99 * self.mean_stderr)
    }
}

/// Empirical mean of `Cₙ(tₙ)` against `exp(-x + x_n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanReport {
    pub n_x: usize,
    pub n_y: usize,
    pub x: f64,
    pub target: f64,
    pub mean: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl MeanReport {
    pub fn covers_target(&self) -> bool {
        self.ci_lo <= self.target && self.target <= self.ci_hi
    }
}

fn check_preconditions(verdict: Verdict, override_conditions: bool, replicates: usize) -> Result<()> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be positive".into()));
    }
    if verdict != Verdict::Pass && !override_conditions {
        return Err(Error::ConditionNotVerified(format!("verdict {verdict:?}")));
    }
    Ok(())
}

/// Simulated `(Mₙ, peaks)` for `replicates` pairs, keeping peaks above `floor`.
pub fn simulate_peaks(
    model: &ScoreModel,
    n_x: usize,
    n_y: usize,
    floor: f64,
    replicates: usize,
    seed: u64,
) -> Result<Vec<PeakSummary>> {
    let sampler = PairSampler::new(model)?;
    let scanner = PeakScanner::new(model, n_x.max(n_y));
    // Replicate streams are unique per (n_x, n_y) so grids over n stay independent.
    let base = ((n_x as u64 * 1_000_003 + n_y as u64) & ((1 << 26) - 1)) << 20;
    Ok((0..replicates)
        .into_par_iter()
        .map(|r| {
            let seqs = sampler.sample(n_x, n_y, seed, base + r as u64);
            scanner.scan(model, &seqs, floor)
        })
        .collect())
}

fn build_run(
    summaries: &[PeakSummary],
    params: &GumbelParams,
    n_x: usize,
    n_y: usize,
    x: f64,
    seed: u64,
) -> ValidationRun {
    let reps = summaries.len();
    let t_n = params.t_mn(n_x, n_y, x);
    let x_n = params.x_correction(t_n);
    let lambda = (-x + x_n).exp();
    let mut histogram: Vec<u64> = Vec::new();
    let mut below = 0u64;
    let mut zero_identity = true;
    let mut moments = Moments::default();
    for s in summaries {
        let c = s.c_of_t(t_n);
        if histogram.len() <= c {
            histogram.resize(c + 1, 0);
        }
        histogram[c] += 1;
        moments.push(c as f64);
        let under = s.m_n <= t_n;
        below += u64::from(under);
        zero_identity &= (c == 0) == under;
    }
    let empirical: Vec<f64> = histogram.iter().map(|&h| h as f64 / reps as f64).collect();
    let poisson = stats::poisson_table(lambda, POISSON_TAIL);
    let tv_distance = stats::total_variation(&empirical, &poisson);
    let support = empirical.len().max(poisson.len());
    let p_hat = below as f64 / reps as f64;
    let gumbel_target = (-lambda).exp();
    let half = Z_99 * (p_hat * (1.0 - p_hat) / reps as f64).sqrt();
    ValidationRun {
        n_x,
        n_y,
        x,
        t_n,
        x_n,
        lambda,
        replicates: reps,
        seed,
        histogram,
        tv_distance,
        support,
        bias_allowance: 0.5 * (support as f64 / reps as f64).sqrt(),
        p_hat,
        gumbel_target,
        gumbel_gap: p_hat - gumbel_target,
        ci_lo: (p_hat - half).max(0.0),
        ci_hi: (p_hat + half).min(1.0),
        mean_count: moments.mean(),
        mean_stderr: moments.stderr(),
        zero_identity,
    }
}

/// Runs for every `x` at one sequence length, sharing the simulated pairs.
#[allow(clippy::too_many_arguments)]
pub fn validate_poisson_grid(
    model: &ScoreModel,
    params: &GumbelParams,
    verdict: Verdict,
    override_conditions: bool,
    n_x: usize,
    n_y: usize,
    xs: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<Vec<ValidationRun>> {
    check_preconditions(verdict, override_conditions, replicates)?;
    if replicates > 1 << 20 {
        return Err(Error::InvalidArgument("at most 2^20 replicates".into()));
    }
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let floor = xs.iter().map(|&x| params.t_mn(n_x, n_y, x)).fold(f64::INFINITY, f64::min);
    let summaries = simulate_peaks(model, n_x, n_y, floor.max(0.0), replicates, seed)?;
    Ok(xs.iter().map(|&x| build_run(&summaries, params, n_x, n_y, x, seed)).collect())
}

/// One `(n, x)` cell of the validation grid.
#[allow(clippy::too_many_arguments)]
pub fn validate_poisson(
    model: &ScoreModel,
    params: &GumbelParams,
    verdict: Verdict,
    override_conditions: bool,
    n: usize,
    x: f64,
    replicates: usize,
    seed: u64,
) -> Result<ValidationRun> {
    let mut runs = validate_poisson_grid(model, params, verdict, override_conditions, n, n, &[x], replicates, seed)?;
    Ok(runs.remove(0))
}

pub fn mean_report(run: &ValidationRun) -> MeanReport {
    let (ci_lo, ci_hi) = run.mean_ci();
    MeanReport {
        n_x: run.n_x,
        n_y: run.n_y,
        x: run.x,
        target: run.lambda,
        mean: run.mean_count,
        stderr: run.mean_stderr,
        ci_lo,
        ci_hi,
        replicates: run.replicates,
        seed: run.seed,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn validate_mean(
    model: &ScoreModel,
    params: &GumbelParams,
    verdict: Verdict,
    override_conditions: bool,
    n: usize,
    x: f64,
    replicates: usize,
    seed: u64,
) -> Result<MeanReport> {
    validate_poisson(model, params, verdict, override_conditions, n, x, replicates, seed).map(|r| mean_report(&r))
}

pub const CSV_HEADER: &str = "n,x,t_n,x_n,lambda,tv,p_hat,gumbel_target,ci_lo,ci_hi";

/// Flat output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub n: usize,
    pub x: f64,
    pub t_n: f64,
    pub x_n: f64,
    pub lambda: f64,
    pub tv: f64,
    pub p_hat: f64,
    pub gumbel_target: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl From<&ValidationRun> for Row {
    fn from(r: &ValidationRun) -> Self {
        Row {
            n: r.n_x,
            x: r.x,
            t_n: r.t_n,
            x_n: r.x_n,
            lambda: r.lambda,
            tv: r.tv_distance,
            p_hat: r.p_hat,
            gumbel_target: r.gumbel_target,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
        }
    }
}

impl Row {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.x,
            self.t_n,
            self.x_n,
            self.lambda,
            self.tv,
            self.p_hat,
            self.gumbel_target,
            self.ci_lo,
            self.ci_hi
        )
    }

    pub fn json(&self) -> String {
        serde_json::to_string(self).expect("row serializes")
    }
}
