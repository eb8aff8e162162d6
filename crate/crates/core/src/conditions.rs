//! Checks of the dependence condition `2 min{J₁, J₂} > 3θ*π*(f)`.
//!
//! Three routes are provided: the i.i.d. closed form in relative entropies,
//! the cheap sufficient test `max{φ₁(g*), φ₂(g*)} < 1` at
//! `g* = 3θ* f / 4`, and direct numerical maximization of the concave
//! objective `g ↦ 2π̂(g) - log φᵢ(g)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{self, ScoreModel};
use crate::spectral::{self, Shared, TiltedModel};
use crate::stats::relative_entropy;

/// Margin below 1 required of `φᵢ(g*)` for the sufficient test.
pub const SUFFICIENT_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficientTest {
    pub phi1: f64,
    pub phi2: f64,
    pub pass: bool,
}

/// The sufficient-test point `g*(a, b) = 3θ* f(a, b) / 4`.
pub fn sufficient_point(model: &ScoreModel, theta: f64) -> Matrix {
    let mut g = model.step_score_table();
    g.scale(0.75 * theta);
    g
}

pub fn sufficient_test(model: &ScoreModel, tilted: &TiltedModel) -> Result<SufficientTest> {
    let g = sufficient_point(model, tilted.theta_star);
    let phi1 = spectral::phi_i(model, &g, Shared::X)?;
    let phi2 = spectral::phi_i(model, &g, Shared::Y)?;
    let pass = phi1 < 1.0 - SUFFICIENT_MARGIN && phi2 < 1.0 - SUFFICIENT_MARGIN;
    Ok(SufficientTest { phi1, phi2, pass })
}

/// `log φᵢ(g)` and its gradient with respect to `g`.
///
/// The gradient at `(a, b)` is the stationary expected occupancy of the two
/// overlapping pair-transition patterns under the `g`-tilted chain on `E³`:
/// `ω₁₂ + ω₁₃` for `Φ₁`, with `ω(u, v) = l(u) Φ(u, v) r(v) / (φ l·r)`.
pub fn log_phi_i_gradient(model: &ScoreModel, g: &Matrix, which: Shared) -> Result<(f64, Matrix)> {
    let mut ws = Workspace::default();
    ws.eval_log_phi(model, g, which)
}

#[derive(Default)]
struct Workspace {
    right: Option<Vec<f64>>,
    left: Option<Vec<f64>>,
}

impl Workspace {
    fn eval_log_phi(&mut self, model: &ScoreModel, g: &Matrix, which: Shared) -> Result<(f64, Matrix)> {
        let (mat, shift) = spectral::phi_i_matrix(model, g, which);
        let pf = spectral::perron_warm(&mat, self.right.as_deref(), self.left.as_deref())?;
        let n = model.n_states();
        let k = n * n;
        let size = mat.n_rows();
        let norm = pf.radius * crate::linalg::dot(&pf.left, &pf.right);
        let mut occ = Matrix::zeros(k, k);
        for a in 0..size {
            let la = pf.left[a];
            let (a0, a1, a2) = (a / k, (a / n) % n, a % n);
            for b in 0..size {
                let m = mat[(a, b)];
                if m == 0.0 {
                    continue;
                }
                let w = la * m * pf.right[b] / norm;
                let (b0, b1, b2) = (b / k, (b / n) % n, b % n);
                match which {
                    Shared::X => {
                        occ[(a0 * n + a1, b0 * n + b1)] += w;
                        occ[(a0 * n + a2, b0 * n + b2)] += w;
                    }
                    Shared::Y => {
                        occ[(a0 * n + a2, b0 * n + b2)] += w;
                        occ[(a1 * n + a2, b1 * n + b2)] += w;
                    }
                }
            }
        }
        let log_phi = shift + pf.radius.ln();
        self.right = Some(pf.right);
        self.left = Some(pf.left);
        Ok((log_phi, occ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JOptions {
    /// Stop when the sup-norm of the gradient falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// A gradient below `stall_factor * grad_tol` also counts as converged once
    /// the best objective gained less than `1e-10` relative in `stall_window`
    /// iterations; eigenvector precision bounds the attainable gradient.
    pub stall_window: usize,
    pub stall_factor: f64,
    /// Stop early once the objective exceeds this value.
    pub stop_above: Option<f64>,
}

impl Default for JOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iter: 10_000, stall_window: 100, stall_factor: 1e3, stop_above: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum JStatus {
    Converged,
    StoppedAboveThreshold,
    Unbounded,
    NotConverged,
}

/// Outcome of one `Jᵢ` maximization. `value` is the best objective seen,
/// hence always a lower bound on `Jᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JResult {
    pub which: u8,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: JStatus,
}

/// Objective `2π̂(g) - log φᵢ(g)`.
pub fn j_objective(model: &ScoreModel, tilted: &TiltedModel, g: &Matrix, which: Shared) -> Result<f64> {
    let lp = spectral::log_phi_i(model, g, which)?;
    Ok(2.0 * pairing(&tilted.pi_hat, g) - lp)
}

fn pairing(measure: &Matrix, g: &Matrix) -> f64 {
    measure.as_slice().iter().zip(g.as_slice()).filter(|(m, _)| **m > 0.0).map(|(m, v)| m * v).sum()
}

/// Limited-memory BFGS ascent with a backtracking line search, started at
/// the sufficient-test point.
pub fn optimize_j(model: &ScoreModel, tilted: &TiltedModel, which: Shared, opts: &JOptions) -> Result<JResult> {
    const MEMORY: usize = 10;
    let k = model.n_pairs();
    let support: Vec<usize> =
        (0..k * k).filter(|&idx| model.step_prob(idx / k, idx % k) > 0.0).collect();
    let unbounded_level = 10.0 * (2.0 * tilted.theta_star * tilted.mu_star);
    let mut ws = Workspace::default();

    let eval = |g: &Matrix, ws: &mut Workspace| -> Result<(f64, Vec<f64>)> {
        let (lp, occ) = ws.eval_log_phi(model, g, which)?;
        let obj = 2.0 * pairing(&tilted.pi_hat, g) - lp;
        let grad = support.iter().map(|&idx| 2.0 * tilted.pi_hat.as_slice()[idx] - occ.as_slice()[idx]).collect();
        Ok((obj, grad))
    };
    let step = |g: &Matrix, dir: &[f64], alpha: f64| -> Matrix {
        let mut out = g.clone();
        for (&idx, d) in support.iter().zip(dir) {
            out[(idx / k, idx % k)] += alpha * d;
        }
        out
    };
    let sup_norm = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut g = sufficient_point(model, tilted.theta_star);
    let (mut obj, mut grad) = eval(&g, &mut ws)?;
    let mut best = obj;
    let mut history = vec![best];
    // Pairs (s, y) with y the decrease of the gradient, so s·y > 0 on a concave objective.
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = std::collections::VecDeque::new();
    let mut status = JStatus::NotConverged;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let gn = sup_norm(&grad);
        if gn < opts.grad_tol {
            status = JStatus::Converged;
            break;
        }
        if history.len() > opts.stall_window && gn < opts.stall_factor * opts.grad_tol {
            let past = history[history.len() - 1 - opts.stall_window];
            if best - past <= 1e-10 * (1.0 + best.abs()) {
                status = JStatus::Converged;
                break;
            }
        }
        if unbounded_level > 0.0 && best > unbounded_level {
            status = JStatus::Unbounded;
            break;
        }
        if opts.stop_above.is_some_and(|s| best > s) {
            status = JStatus::StoppedAboveThreshold;
            break;
        }
        iterations += 1;

        let mut dir = grad.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let scale = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= scale);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }
        let mut slope = dot(&grad, &dir);
        if !(slope > 0.0) {
            pairs.clear();
            dir = grad.clone();
            slope = dot(&grad, &dir);
        }

        let slack = 1e-13 * (1.0 + obj.abs());
        let mut accepted = None;
        let mut a = if pairs.is_empty() { 1.0 / gn.max(1.0) } else { 1.0 };
        for _ in 0..60 {
            let cand = step(&g, &dir, a);
            let (o, gr) = eval(&cand, &mut ws)?;
            if o.is_finite() && o >= obj + 1e-4 * a * slope - slack {
                accepted = Some((cand, o, gr, a));
                break;
            }
            a *= 0.5;
        }
        let Some((cand, o, gr, a)) = accepted else {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        };
        let s: Vec<f64> = dir.iter().map(|d| a * d).collect();
        let y: Vec<f64> = grad.iter().zip(&gr).map(|(o, n)| o - n).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if pairs.len() == MEMORY {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        g = cand;
        obj = o;
        grad = gr;
        best = best.max(obj);
        history.push(best);
    }
    Ok(JResult { which: which.index(), value: best, grad_norm: sup_norm(&grad), iterations, status })
}

/// `Jᵢ = sup_g {2π̂(g) - log φᵢ(g)}` with default options.
pub fn compute_j(model: &ScoreModel, tilted: &TiltedModel, which: Shared) -> Result<f64> {
    let r = optimize_j(model, tilted, which, &JOptions::default())?;
    match r.status {
        JStatus::Converged | JStatus::StoppedAboveThreshold => Ok(r.value),
        JStatus::Unbounded => Err(Error::Unbounded { which: which.index() }),
        JStatus::NotConverged => Err(Error::ConvergenceFailure { what: "J optimization", iterations: r.iterations }),
    }
}

/// Closed forms for independent i.i.d. letters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IidClosedForm {
    pub theta_star: f64,
    pub pi1: Vec<f64>,
    pub pi2: Vec<f64>,
    /// `π*(x, y) = exp(θ* f(x, y)) π₁(x) π₂(y)`, indexed `x*|E| + y`.
    pub pi_star: Vec<f64>,
    pub pi1_star: Vec<f64>,
    pub pi2_star: Vec<f64>,
    /// `H(π* | π₁ ⊗ π₂)`
    pub h_joint: f64,
    /// `H(π₁* | π₁)`
    pub h1: f64,
    /// `H(π₂* | π₂)`
    pub h2: f64,
    /// `θ* π*(f)`; equals `h_joint`.
    pub theta_mu_star: f64,
    /// `J₁ = 2θ*π*(f) - H(π₁*|π₁)`
    pub j1: f64,
    /// `J₂ = 2θ*π*(f) - H(π₂*|π₂)`
    pub j2: f64,
    /// `H(π*|π₁⊗π₂) > 2 max{H(π₁*|π₁), H(π₂*|π₂)}`
    pub holds: bool,
}

fn rows_identical(m: &Matrix) -> bool {
    let first = m.row(0);
    (1..m.n_rows()).all(|i| m.row(i).iter().zip(first).all(|(a, b)| (a - b).abs() <= 1e-12))
}

pub fn is_iid(model: &ScoreModel) -> bool {
    rows_identical(model.p()) && rows_identical(model.q())
}

pub fn iid_check(model: &ScoreModel) -> Result<IidClosedForm> {
    if !rows_identical(model.p()) || !rows_identical(model.q()) {
        return Err(Error::NotIid("transition matrix rows differ".into()));
    }
    let Some(f) = model.pair_scores() else {
        return Err(Error::NotIid("closed forms need a pair score".into()));
    };
    let theta = spectral::solve_theta_star(model)?.theta_star;
    let n = model.n_states();
    let pi1 = model.p().row(0).to_vec();
    let pi2 = model.q().row(0).to_vec();
    let mut pi_star = vec![0.0; n * n];
    let mut base = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            base[x * n + y] = pi1[x] * pi2[y];
            pi_star[x * n + y] = (theta * f[(x, y)]).exp() * base[x * n + y];
        }
    }
    // Σ π* = φ(θ*) = 1 up to the root tolerance.
    let total: f64 = pi_star.iter().sum();
    pi_star.iter_mut().for_each(|v| *v /= total);
    let pi1_star: Vec<f64> = (0..n).map(|x| (0..n).map(|y| pi_star[x * n + y]).sum()).collect();
    let pi2_star: Vec<f64> = (0..n).map(|y| (0..n).map(|x| pi_star[x * n + y]).sum()).collect();
    let h_joint = relative_entropy(&pi_star, &base);
    let h1 = relative_entropy(&pi1_star, &pi1);
    let h2 = relative_entropy(&pi2_star, &pi2);
    let mu_star: f64 = (0..n * n).map(|k| pi_star[k] * f[(k / n, k % n)]).sum();
    let theta_mu_star = theta * mu_star;
    Ok(IidClosedForm {
        theta_star: theta,
        pi1,
        pi2,
        pi_star,
        pi1_star,
        pi2_star,
        h_joint,
        h1,
        h2,
        theta_mu_star,
        j1: 2.0 * theta_mu_star - h1,
        j2: 2.0 * theta_mu_star - h2,
        holds: h_joint > 2.0 * h1.max(h2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub theta_star: f64,
    pub mu_star: f64,
    /// `3θ*π*(f)`
    pub threshold: f64,
    pub sufficient_test: SufficientTest,
    pub j1: Option<JResult>,
    pub j2: Option<JResult>,
    pub condition12: Verdict,
    pub iid_closed_form: Option<IidClosedForm>,
}

fn verdict_from_j(j1: &JResult, j2: &JResult, threshold: f64) -> Verdict {
    let settled = |r: &JResult| matches!(r.status, JStatus::Converged | JStatus::StoppedAboveThreshold);
    if [j1, j2].iter().any(|r| r.status == JStatus::Unbounded) {
        return Verdict::Unresolved;
    }
    let lower = 2.0 * j1.value.min(j2.value);
    if lower > threshold {
        Verdict::Pass
    } else if settled(j1) && settled(j2) {
        Verdict::Fail
    } else {
        Verdict::Unresolved
    }
}

/// Verdict on the Poisson limit condition: the sufficient test first, the full `J`
/// computation only when it fails.
pub fn condition_verdict(model: &ScoreModel, tilted: &TiltedModel) -> Result<ConditionReport> {
    build_report(model, tilted, false)
}

/// Like [`condition_verdict`] but always computes both `J` values.
pub fn condition_report(model: &ScoreModel, tilted: &TiltedModel) -> Result<ConditionReport> {
    build_report(model, tilted, true)
}

fn build_report(model: &ScoreModel, tilted: &TiltedModel, always_j: bool) -> Result<ConditionReport> {
    let threshold = 3.0 * tilted.theta_star * tilted.mu_star;
    let sufficient = sufficient_test(model, tilted)?;
    let iid_closed_form = if is_iid(model) && model.pair_scores().is_some() { iid_check(model).ok() } else { None };
    let (j1, j2, condition12) = if sufficient.pass && !always_j {
        (None, None, Verdict::Pass)
    } else {
        let opts = JOptions::default();
        let j1 = optimize_j(model, tilted, Shared::X, &opts)?;
        let j2 = optimize_j(model, tilted, Shared::Y, &opts)?;
        let v = if sufficient.pass { Verdict::Pass } else { verdict_from_j(&j1, &j2, threshold) };
        (Some(j1), Some(j2), v)
    };
    Ok(ConditionReport {
        theta_star: tilted.theta_star,
        mu_star: tilted.mu_star,
        threshold,
        sufficient_test: sufficient,
        j1,
        j2,
        condition12,
        iid_closed_form,
    })
}

/// Convenience: verdict straight from a model.
pub fn verdict_for_model(model: &ScoreModel) -> Result<ConditionReport> {
    let _ = model::stationary(model)?;
    let tilted = spectral::solve_theta_star(model)?;
    condition_verdict(model, &tilted)
}
