//! Perron-Frobenius engine: spectral radii of the tilted matrices, the root
//! `φ(θ*) = 1`, and the exponentially tilted chain `R*` with its invariant laws.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{self, PositivityCheck, ScoreModel};

/// Relative width of the Collatz-Wielandt bracket at convergence.
pub const POWER_TOL: f64 = 1e-13;
pub const POWER_MAX_ITER: usize = 100_000;
/// Root tolerance on `|log φ(θ)|`.
pub const ROOT_TOL: f64 = 1e-14;
/// Largest exponent `θ · max|f|` tried while bracketing.
pub const MAX_EXPONENT: f64 = 700.0;
const SQUARINGS: usize = 48;

/// Perron root with its right and left eigenvectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfResult {
    pub radius: f64,
    /// Right eigenvector, max entry 1.
    pub right: Vec<f64>,
    /// Left eigenvector, entries sum to 1.
    pub left: Vec<f64>,
}

/// Perron root and eigenvectors of a nonnegative irreducible matrix.
///
/// Power iteration on `M` and `M^T`, stopped when the Collatz-Wielandt bounds
/// `min (Mv)_i / v_i <= ρ <= max (Mv)_i / v_i` agree to [`POWER_TOL`]. If the
/// iteration cap is hit, the matrix `M/‖M‖ + I` is squared repeatedly, which
/// also covers periodic matrices.
pub fn perron(m: &Matrix) -> Result<PfResult> {
    if !m.is_square() || m.n_rows() == 0 {
        return Err(Error::InvalidArgument("perron: matrix must be square and nonempty".into()));
    }
    if m.as_slice().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("perron: matrix must be finite and nonnegative".into()));
    }
    if !linalg::is_irreducible(&m.support()) {
        return Err(Error::InvalidArgument("perron: matrix is reducible".into()));
    }
    perron_warm(m, None, None)
}

/// [`perron`] without the precondition checks, optionally warm-started.
pub(crate) fn perron_warm(m: &Matrix, right_guess: Option<&[f64]>, left_guess: Option<&[f64]>) -> Result<PfResult> {
    let (radius, mut right) = dominant(m, right_guess)?;
    let (_, mut left) = dominant(&m.transpose(), left_guess)?;
    let max = right.iter().cloned().fold(0.0, f64::max);
    right.iter_mut().for_each(|v| *v /= max);
    let sum: f64 = left.iter().sum();
    left.iter_mut().for_each(|v| *v /= sum);
    Ok(PfResult { radius, right, left })
}

/// Perron root only.
pub(crate) fn spectral_radius(m: &Matrix, guess: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    dominant(m, guess)
}

fn tolerance(n: usize) -> f64 {
    POWER_TOL.max(8.0 * n as f64 * f64::EPSILON)
}

/// Collatz-Wielandt bracket for `w = M v`.
fn bracket(v: &[f64], w: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for (&a, &b) in v.iter().zip(w) {
        let r = b / a;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

fn normalize_max(v: &mut [f64]) {
    let max = v.iter().cloned().fold(0.0, f64::max);
    v.iter_mut().for_each(|x| *x /= max);
}

fn dominant(m: &Matrix, guess: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    let n = m.n_rows();
    let tol = tolerance(n);
    let mut v = match guess {
        Some(g) if g.len() == n && g.iter().all(|&x| x > 0.0 && x.is_finite()) => g.to_vec(),
        _ => vec![1.0; n],
    };
    normalize_max(&mut v);
    let mut w = vec![0.0; n];
    for _ in 0..POWER_MAX_ITER {
        m.mul_vec_into(&v, &mut w);
        let (lo, hi) = bracket(&v, &w);
        std::mem::swap(&mut v, &mut w);
        normalize_max(&mut v);
        if hi - lo <= tol * hi {
            return Ok((0.5 * (lo + hi), v));
        }
    }
    dominant_by_squaring(m, tol)
}

fn dominant_by_squaring(m: &Matrix, tol: f64) -> Result<(f64, Vec<f64>)> {
    let n = m.n_rows();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let mut a = Matrix::from_fn(n, n, |i, j| m[(i, j)] / scale + if i == j { 1.0 } else { 0.0 });
    for _ in 0..SQUARINGS {
        a = a.matmul(&a);
        let s = a.max_abs();
        a.scale(1.0 / s);
    }
    let mut v = a.mul_vec(&vec![1.0; n]);
    normalize_max(&mut v);
    let mut w = vec![0.0; n];
    // Polish against M itself; the bracket must close to a slightly looser tolerance.
    for _ in 0..1000 {
        m.mul_vec_into(&v, &mut w);
        let (lo, hi) = bracket(&v, &w);
        if hi - lo <= 100.0 * tol * hi && v.iter().all(|&x| x > 0.0) {
            return Ok((0.5 * (lo + hi), v));
        }
        // Damped step keeps periodic matrices from oscillating.
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = 0.5 * (*vi + wi / hi.max(f64::MIN_POSITIVE));
        }
        normalize_max(&mut v);
    }
    Err(Error::ConvergenceFailure { what: "power iteration", iterations: POWER_MAX_ITER })
}

/// `Φ(θ)` divided by `exp(shift)`, together with `shift`.
///
/// Entries are `exp(θ f(x,y,x',y') - shift) P(x,x') Q(y,y')` with the shift
/// chosen so the largest exponent is 0.
pub fn tilted_matrix(model: &ScoreModel, theta: f64) -> (Matrix, f64) {
    let m = model.n_pairs();
    let mut shift = f64::NEG_INFINITY;
    for i in 0..m {
        for j in 0..m {
            if model.step_prob(i, j) > 0.0 {
                shift = shift.max(theta * model.step_score(i, j));
            }
        }
    }
    let mat = Matrix::from_fn(m, m, |i, j| {
        let p = model.step_prob(i, j);
        if p > 0.0 {
            p * (theta * model.step_score(i, j) - shift).exp()
        } else {
            0.0
        }
    });
    (mat, shift)
}

/// `log φ(θ)` computed in log space.
pub fn log_phi(model: &ScoreModel, theta: f64) -> Result<f64> {
    let (mat, shift) = tilted_matrix(model, theta);
    let (rho, _) = spectral_radius(&mat, None)?;
    Ok(shift + rho.ln())
}

/// Spectral radius `φ(θ)` of `Φ(θ)`.
pub fn phi(model: &ScoreModel, theta: f64) -> Result<f64> {
    log_phi(model, theta).map(f64::exp)
}

/// The exponentially tilted chain at `θ*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TiltedModel {
    pub theta_star: f64,
    /// Right eigenvector of `Φ(θ*)`, max entry 1, indexed by `x*|E| + y`.
    pub r_star: Vec<f64>,
    /// `R*(a, b) = r*(b) / r*(a) · Φ(θ*)(a, b)`.
    pub r_matrix: Matrix,
    pub pi_star: Vec<f64>,
    /// `π̂(a, b) = π*(a) R*(a, b)`.
    pub pi_hat: Matrix,
    /// Untilted invariant mean `π(f)`.
    pub mu: f64,
    /// Tilted mean `π̂(f)`; for pair scores this equals `π*(f)`.
    pub mu_star: f64,
    /// `log φ(θ*)` at the returned root.
    pub log_phi_residual: f64,
}

impl TiltedModel {
    /// `max r* / min r*`, bounding the eigenvector fraction in the Lundberg inequality.
    pub fn eigen_ratio_bound(&self) -> f64 {
        let max = self.r_star.iter().cloned().fold(0.0, f64::max);
        let min = self.r_star.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Solve `φ(θ*) = 1` for `θ* > 0` and build the tilted chain.
pub fn solve_theta_star(model: &ScoreModel) -> Result<TiltedModel> {
    let mu = model::stationary(model)?.mu;
    if mu >= -1e-12 {
        return Err(Error::DriftNotNegative { mu });
    }
    if let PositivityCheck::Failure { .. } = model::check_positivity_condition(model) {
        return Err(Error::NoPositiveCycle);
    }
    let theta_cap = MAX_EXPONENT / model.max_abs_score();
    let h = |t: f64| log_phi(model, t);

    let mut guess = 1.0_f64.min(theta_cap);
    let h_guess = h(guess)?;
    let (mut lo, mut h_lo, mut hi, mut h_hi);
    if h_guess == 0.0 {
        return build_tilted(model, guess, mu);
    } else if h_guess > 0.0 {
        hi = guess;
        h_hi = h_guess;
        loop {
            guess *= 0.5;
            let v = h(guess)?;
            if v < 0.0 {
                lo = guess;
                h_lo = v;
                break;
            }
            if guess < 1e-300 {
                return Err(Error::ConvergenceFailure { what: "theta* bracketing", iterations: 1000 });
            }
            hi = guess;
            h_hi = v;
        }
    } else {
        lo = guess;
        h_lo = h_guess;
        loop {
            if guess >= theta_cap {
                return Err(Error::NoPositiveCycle);
            }
            guess = (2.0 * guess).min(theta_cap);
            let v = h(guess)?;
            if v > 0.0 {
                hi = guess;
                h_hi = v;
                break;
            }
            lo = guess;
            h_lo = v;
        }
    }

    // Illinois regula falsi with a bisection safeguard.
    let mut side = 0i8;
    let mut root = 0.5 * (lo + hi);
    for _ in 0..300 {
        let mut t = (lo * h_hi - hi * h_lo) / (h_hi - h_lo);
        if !(t > lo && t < hi) {
            t = 0.5 * (lo + hi);
        }
        let v = h(t)?;
        root = t;
        if v.abs() <= ROOT_TOL || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        if v < 0.0 {
            lo = t;
            h_lo = v;
            if side == -1 {
                h_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = t;
            h_hi = v;
            if side == 1 {
                h_lo *= 0.5;
            }
            side = 1;
        }
    }
    build_tilted(model, root, mu)
}

fn build_tilted(model: &ScoreModel, theta: f64, mu: f64) -> Result<TiltedModel> {
    let (mat, shift) = tilted_matrix(model, theta);
    let pf = perron_warm(&mat, None, None)?;
    let m = model.n_pairs();
    let r = &pf.right;
    let mut r_matrix = Matrix::from_fn(m, m, |i, j| r[j] / r[i] * mat[(i, j)] / pf.radius);
    for i in 0..m {
        let s: f64 = r_matrix.row(i).iter().sum();
        r_matrix.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    let pi_star = perron_warm(&r_matrix, None, None)?.left;
    let pi_hat = Matrix::from_fn(m, m, |i, j| pi_star[i] * r_matrix[(i, j)]);
    let mut mu_star = 0.0;
    for i in 0..m {
        for j in 0..m {
            if pi_hat[(i, j)] > 0.0 {
                mu_star += pi_hat[(i, j)] * model.step_score(i, j);
            }
        }
    }
    Ok(TiltedModel {
        theta_star: theta,
        r_star: pf.right,
        r_matrix,
        pi_star,
        pi_hat,
        mu,
        mu_star,
        log_phi_residual: shift + pf.radius.ln(),
    })
}

/// Which sequence the two overlapping alignments share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Shared {
    /// `Φ₁`: the X letters are shared, states `(x, y, z)`.
    X,
    /// `Φ₂`: the Y letters are shared, states `(x, w, y)`.
    Y,
}

impl Shared {
    pub fn index(self) -> u8 {
        match self {
            Shared::X => 1,
            Shared::Y => 2,
        }
    }
}

/// `Φᵢ(g)` on `E³` scaled by `exp(-shift)`, together with `shift`.
///
/// `g` is a table on `E² × E²` indexed like the step scores.
pub fn phi_i_matrix(model: &ScoreModel, g: &Matrix, which: Shared) -> (Matrix, f64) {
    let n = model.n_states();
    let size = n * n * n;
    let (p, q) = (model.p(), model.q());
    let pair = |a: usize, b: usize| a * n + b;
    let entry = |a: usize, b: usize| -> Option<(f64, f64)> {
        let (a0, a1, a2) = (a / (n * n), (a / n) % n, a % n);
        let (b0, b1, b2) = (b / (n * n), (b / n) % n, b % n);
        match which {
            Shared::X => {
                let prob = p[(a0, b0)] * q[(a1, b1)] * q[(a2, b2)];
                (prob > 0.0).then(|| (prob, g[(pair(a0, a1), pair(b0, b1))] + g[(pair(a0, a2), pair(b0, b2))]))
            }
            Shared::Y => {
                let prob = p[(a0, b0)] * p[(a1, b1)] * q[(a2, b2)];
                (prob > 0.0).then(|| (prob, g[(pair(a0, a2), pair(b0, b2))] + g[(pair(a1, a2), pair(b1, b2))]))
            }
        }
    };
    let mut shift = f64::NEG_INFINITY;
    for a in 0..size {
        for b in 0..size {
            if let Some((_, e)) = entry(a, b) {
                shift = shift.max(e);
            }
        }
    }
    let mat = Matrix::from_fn(size, size, |a, b| entry(a, b).map_or(0.0, |(prob, e)| prob * (e - shift).exp()));
    (mat, shift)
}

pub fn log_phi_i(model: &ScoreModel, g: &Matrix, which: Shared) -> Result<f64> {
    let (mat, shift) = phi_i_matrix(model, g, which);
    let (rho, _) = spectral_radius(&mat, None)?;
    Ok(shift + rho.ln())
}

/// Spectral radius `φᵢ(g)`.
pub fn phi_i(model: &ScoreModel, g: &Matrix, which: Shared) -> Result<f64> {
    log_phi_i(model, g, which).map(f64::exp)
}

/// `Φ₀(g)(a, b) = exp(g(a, b)) P Q`, scaled, with its shift.
pub fn phi0_matrix(model: &ScoreModel, g: &Matrix) -> (Matrix, f64) {
    let m = model.n_pairs();
    let mut shift = f64::NEG_INFINITY;
    for i in 0..m {
        for j in 0..m {
            if model.step_prob(i, j) > 0.0 {
                shift = shift.max(g[(i, j)]);
            }
        }
    }
    let mat = Matrix::from_fn(m, m, |i, j| {
        let p = model.step_prob(i, j);
        if p > 0.0 {
            p * (g[(i, j)] - shift).exp()
        } else {
            0.0
        }
    });
    (mat, shift)
}

pub fn log_phi0(model: &ScoreModel, g: &Matrix) -> Result<f64> {
    let (mat, shift) = phi0_matrix(model, g);
    let (rho, _) = spectral_radius(&mat, None)?;
    Ok(shift + rho.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_binary(m: f64, mm: f64) -> ScoreModel {
        let half = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        ScoreModel::pair(half.clone(), half, vec![vec![m, mm], vec![mm, m]]).unwrap()
    }

    #[test]
    fn identity_is_rejected() {
        assert!(matches!(perron(&Matrix::identity(2)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn near_periodic_symmetric() {
        let eps = 1e-3;
        let pf = perron(&Matrix::from_rows(&[vec![eps, 2.0], vec![2.0, eps]])).unwrap();
        assert!((pf.radius - (2.0 + eps)).abs() < 1e-12);
        assert!((pf.right[0] - 1.0).abs() < 1e-12 && (pf.right[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_matrix_uses_fallback() {
        let pf = perron(&Matrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]])).unwrap();
        assert!((pf.radius - 2.0).abs() < 1e-10);
    }

    #[test]
    fn phi_at_zero_is_one() {
        let m = uniform_binary(1.0, -2.0);
        assert!((phi(&m, 0.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn phi_iid_reduction() {
        let m = uniform_binary(1.0, -2.0);
        for theta in [-1.0, 0.3, 0.7, 2.5] {
            let expected = 0.5 * f64::exp(theta) + 0.5 * f64::exp(-2.0 * theta);
            assert!((phi(&m, theta).unwrap() - expected).abs() < 1e-13 * expected);
        }
    }

    #[test]
    fn theta_star_golden_ratio() {
        let t = solve_theta_star(&uniform_binary(1.0, -2.0)).unwrap();
        let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
        assert!((t.theta_star - golden.ln()).abs() < 1e-12);
        // pi*(x,y) = exp(theta* f) / 4: matches carry golden/4, mismatches golden^-2/4.
        let mu_star = 2.0 * (golden / 4.0) * 1.0 + 2.0 * (golden.powi(-2) / 4.0) * -2.0;
        assert!((t.mu_star - mu_star).abs() < 1e-12);
        assert!(t.mu_star > 0.0);
    }

    #[test]
    fn drift_must_be_negative() {
        assert!(matches!(solve_theta_star(&uniform_binary(1.0, -1.0)), Err(Error::DriftNotNegative { .. })));
    }

    #[test]
    fn no_positive_cycle() {
        assert!(matches!(solve_theta_star(&uniform_binary(-1.0, -1.0)), Err(Error::NoPositiveCycle)));
    }

    #[test]
    fn tilted_chain_invariants() {
        let m = ScoreModel::pair(
            vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            vec![vec![0.6, 0.4], vec![0.45, 0.55]],
            vec![vec![2.0, -3.0], vec![-3.0, 1.0]],
        )
        .unwrap();
        let t = solve_theta_star(&m).unwrap();
        assert!(t.log_phi_residual.abs() < 1e-12);
        let k = m.n_pairs();
        for i in 0..k {
            let s: f64 = t.r_matrix.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        let back = t.r_matrix.vec_mul(&t.pi_star);
        for i in 0..k {
            assert!((back[i] - t.pi_star[i]).abs() < 1e-13);
            let row: f64 = t.pi_hat.row(i).iter().sum();
            let col: f64 = (0..k).map(|a| t.pi_hat[(a, i)]).sum();
            assert!((row - t.pi_star[i]).abs() < 1e-13);
            assert!((col - t.pi_star[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn phi_i_at_zero_is_one() {
        let m = uniform_binary(1.0, -2.0);
        let g = Matrix::zeros(4, 4);
        for which in [Shared::X, Shared::Y] {
            assert!((phi_i(&m, &g, which).unwrap() - 1.0).abs() < 1e-13);
        }
    }
}
