//! The probabilistic model: two Markov chains on a common finite alphabet and
//! a score function, together with stationary laws and the regularity
//! diagnostics (positive cycle, shift condition).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::linalg::{self, Matrix};
use crate::spectral;

/// Row sums further than this from 1 are rejected; closer ones are renormalized.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Scores within this distance of an integer are treated as integers.
const INTEGER_TOL: f64 = 1e-9;

/// Score function: either on aligned letter pairs or on pair transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScoreTable {
    /// `f(x, y)`, an `|E| x |E|` table.
    Pair(Matrix),
    /// `f(x, y, x', y')`, an `|E|^2 x |E|^2` table indexed by `x*|E| + y`.
    Transition(Matrix),
}

impl ScoreTable {
    pub fn is_transition(&self) -> bool {
        matches!(self, ScoreTable::Transition(_))
    }

    pub fn matrix(&self) -> &Matrix {
        match self {
            ScoreTable::Pair(m) | ScoreTable::Transition(m) => m,
        }
    }

    fn matrix_mut(&mut self) -> &mut Matrix {
        match self {
            ScoreTable::Pair(m) | ScoreTable::Transition(m) => m,
        }
    }
}

/// Unvalidated model input, as read from a model file or built in code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub alphabet: AlphabetSpec,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub score: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<bool>,
}

/// Either a bare alphabet size or the list of symbol names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphabetSpec {
    Size(usize),
    Symbols(Vec<String>),
}

impl AlphabetSpec {
    pub fn symbols(&self) -> Vec<String> {
        match self {
            AlphabetSpec::Size(n) => (0..*n).map(|i| i.to_string()).collect(),
            AlphabetSpec::Symbols(s) => s.clone(),
        }
    }
}

/// A validated model. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    symbols: Vec<String>,
    p: Matrix,
    q: Matrix,
    score: ScoreTable,
    lattice: bool,
    /// Factor the input scores were divided by (gcd of the lattice scores).
    score_scale: f64,
    warnings: Vec<String>,
}

/// Stationary laws of the two chains and the invariant mean score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryInfo {
    pub pi_p: Vec<f64>,
    pub pi_q: Vec<f64>,
    /// Product measure indexed by `x*|E| + y`.
    pub pi: Vec<f64>,
    pub mu: f64,
}

impl ScoreModel {
    /// Validate pair-score input built in code.
    pub fn pair(p: Vec<Vec<f64>>, q: Vec<Vec<f64>>, score: Vec<Vec<f64>>) -> Result<Self> {
        let n = p.len();
        validate_model(&RawModel { alphabet: AlphabetSpec::Size(n), p, q, score, lattice: None })
    }

    /// Validate pair-transition-score input built in code.
    pub fn transition(p: Vec<Vec<f64>>, q: Vec<Vec<f64>>, score: Vec<Vec<f64>>) -> Result<Self> {
        Self::pair(p, q, score)
    }

    pub fn n_states(&self) -> usize {
        self.p.n_rows()
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states() * self.n_states()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn score(&self) -> &ScoreTable {
        &self.score
    }

    pub fn lattice(&self) -> bool {
        self.lattice
    }

    pub fn score_scale(&self) -> f64 {
        self.score_scale
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    #[inline]
    pub fn pair_index(&self, x: usize, y: usize) -> usize {
        x * self.n_states() + y
    }

    /// Score of the step `(x, y) -> (x', y')`. Pair scores depend only on the target.
    #[inline]
    pub fn step_score(&self, from: usize, to: usize) -> f64 {
        match &self.score {
            ScoreTable::Pair(m) => {
                let n = self.n_states();
                m[(to / n, to % n)]
            }
            ScoreTable::Transition(m) => m[(from, to)],
        }
    }

    /// Probability `P(x, x') Q(y, y')` of the product-chain step.
    #[inline]
    pub fn step_prob(&self, from: usize, to: usize) -> f64 {
        let n = self.n_states();
        self.p[(from / n, to / n)] * self.q[(from % n, to % n)]
    }

    /// Transition matrix `P ⊗ Q` of the paired chain.
    pub fn product_chain(&self) -> Matrix {
        let m = self.n_pairs();
        Matrix::from_fn(m, m, |i, j| self.step_prob(i, j))
    }

    /// Step scores in transition form, `|E|^2 x |E|^2`.
    pub fn step_score_table(&self) -> Matrix {
        let m = self.n_pairs();
        Matrix::from_fn(m, m, |i, j| self.step_score(i, j))
    }

    /// Largest `|f|` over positive-probability steps.
    pub fn max_abs_score(&self) -> f64 {
        let m = self.n_pairs();
        let mut best = 0.0_f64;
        for i in 0..m {
            for j in 0..m {
                if self.step_prob(i, j) > 0.0 {
                    best = best.max(self.step_score(i, j).abs());
                }
            }
        }
        best
    }

    /// Pair-score table when the score is in pair form.
    pub fn pair_scores(&self) -> Option<&Matrix> {
        match &self.score {
            ScoreTable::Pair(m) => Some(m),
            ScoreTable::Transition(_) => None,
        }
    }

    /// The raw form of this model; validating it reproduces `self`.
    pub fn to_raw(&self) -> RawModel {
        RawModel {
            alphabet: AlphabetSpec::Symbols(self.symbols.clone()),
            p: self.p.to_rows(),
            q: self.q.to_rows(),
            score: self
                .score
                .matrix()
                .to_rows()
                .into_iter()
                .map(|r| r.into_iter().map(|v| v * self.score_scale).collect())
                .collect(),
            lattice: Some(self.lattice),
        }
    }

    /// Symbol index for a token: symbol name first, then a numeric index.
    pub fn symbol_index(&self, token: &str) -> Option<usize> {
        if let Some(i) = self.symbols.iter().position(|s| s == token) {
            return Some(i);
        }
        token.parse::<usize>().ok().filter(|&i| i < self.n_states())
    }
}

fn check_matrix(name: &'static str, rows: &[Vec<f64>], n: usize, out: &mut Vec<Violation>) -> Option<Matrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        let cols = rows.iter().map(Vec::len).find(|&c| c != n).unwrap_or(n);
        if rows.len() != cols {
            out.push(Violation::NotSquare { matrix: name, rows: rows.len(), cols });
        } else {
            out.push(Violation::DimensionMismatch { what: name, expected: n, found: rows.len() });
        }
        return None;
    }
    let mut m = Matrix::from_rows(rows);
    let mut ok = true;
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            if !v.is_finite() {
                out.push(Violation::NonFinite { matrix: name, row: i, col: j });
                ok = false;
            } else if v < 0.0 {
                out.push(Violation::NegativeEntry { matrix: name, row: i, col: j, value: v });
                ok = false;
            }
        }
    }
    if !ok {
        return None;
    }
    for i in 0..n {
        let sum: f64 = m.row(i).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::NonStochasticRow { matrix: name, row: i, sum });
            ok = false;
        } else {
            m.row_mut(i).iter_mut().for_each(|v| *v /= sum);
        }
    }
    if !ok {
        return None;
    }
    let adj = m.support();
    if !linalg::is_irreducible(&adj) {
        out.push(Violation::Reducible { matrix: name });
        return None;
    }
    let period = linalg::period(&adj);
    if period != 1 {
        out.push(Violation::Periodic { matrix: name, period });
        return None;
    }
    Some(m)
}

/// Validate raw input, collecting every violated invariant.
///
/// Integer scores whose gcd over reachable steps exceeds 1 are divided by the
/// gcd; the model records the factor in [`ScoreModel::score_scale`] and a
/// warning, and all downstream scores and thresholds are in the reduced units.
pub fn validate_model(raw: &RawModel) -> Result<ScoreModel> {
    let mut violations = Vec::new();
    let symbols = raw.alphabet.symbols();
    let n = symbols.len();
    if n == 0 {
        return Err(Error::InvalidModel(vec![Violation::EmptyAlphabet]));
    }
    if n > 256 {
        return Err(Error::InvalidModel(vec![Violation::AlphabetTooLarge { size: n }]));
    }
    let p = check_matrix("P", &raw.p, n, &mut violations);
    let q = check_matrix("Q", &raw.q, n, &mut violations);

    let rows = raw.score.len();
    let score = if rows == n && raw.score.iter().all(|r| r.len() == n) {
        Some(ScoreTable::Pair(Matrix::from_rows(&raw.score)))
    } else if rows == n * n && raw.score.iter().all(|r| r.len() == n * n) {
        Some(ScoreTable::Transition(Matrix::from_rows(&raw.score)))
    } else {
        violations.push(Violation::DimensionMismatch { what: "score", expected: n, found: rows });
        None
    };
    if let Some(s) = &score {
        let m = s.matrix();
        for i in 0..m.n_rows() {
            for j in 0..m.n_cols() {
                if !m[(i, j)].is_finite() {
                    // Log-likelihood-ratio scores are -inf on null-probability steps.
                    let null_step = p.is_some() && q.is_some() && s.is_transition() && {
                        let (p, q) = (p.as_ref().unwrap(), q.as_ref().unwrap());
                        p[(i / n, j / n)] * q[(i % n, j % n)] == 0.0
                    };
                    if !null_step {
                        violations.push(Violation::NonFinite { matrix: "score", row: i, col: j });
                    }
                }
            }
        }
    }
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations));
    }
    let (p, q, mut score) = (p.unwrap(), q.unwrap(), score.unwrap());

    // Scores on null-probability steps never enter any computation.
    if let ScoreTable::Transition(m) = &mut score {
        for i in 0..n * n {
            for j in 0..n * n {
                if p[(i / n, j / n)] * q[(i % n, j % n)] == 0.0 {
                    m[(i, j)] = 0.0;
                }
            }
        }
    }

    let reachable = reachable_scores(&p, &q, &score);
    let all_integer = reachable.iter().all(|v| (v - v.round()).abs() <= INTEGER_TOL);
    let lattice = match raw.lattice {
        Some(true) => {
            let bad: Vec<_> = reachable
                .iter()
                .filter(|v| (*v - v.round()).abs() > INTEGER_TOL)
                .map(|&value| Violation::NonIntegerScore { value })
                .collect();
            if !bad.is_empty() {
                return Err(Error::InvalidModel(bad));
            }
            true
        }
        Some(false) => false,
        None => all_integer,
    };

    let mut warnings = Vec::new();
    let mut score_scale = 1.0;
    if lattice {
        let m = score.matrix_mut();
        for i in 0..m.n_rows() {
            for v in m.row_mut(i) {
                *v = v.round();
            }
        }
        let g = reachable
            .iter()
            .map(|v| v.round().abs() as u64)
            .filter(|&v| v != 0)
            .fold(0, linalg::gcd);
        if g > 1 {
            score_scale = g as f64;
            m.scale(1.0 / score_scale);
            warnings.push(format!(
                "scores have gcd {g}; they were divided by {g} and all scores and \
                 thresholds are reported in units of {g}"
            ));
        }
    }

    Ok(ScoreModel { symbols, p, q, score, lattice, score_scale, warnings })
}

fn reachable_scores(p: &Matrix, q: &Matrix, score: &ScoreTable) -> Vec<f64> {
    let n = p.n_rows();
    let mut out = Vec::new();
    match score {
        ScoreTable::Pair(m) => {
            // Irreducible chains visit every letter, so every pair is reachable.
            out.extend_from_slice(m.as_slice());
        }
        ScoreTable::Transition(m) => {
            for i in 0..n * n {
                for j in 0..n * n {
                    if p[(i / n, j / n)] * q[(i % n, j % n)] > 0.0 {
                        out.push(m[(i, j)]);
                    }
                }
            }
        }
    }
    out
}

/// Parse a model file (TOML) and validate it.
pub fn parse_model(text: &str, path: &str) -> Result<ScoreModel> {
    let raw: RawModel = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
        Error::Parse { path: path.to_string(), line, message: e.message().to_string() }
    })?;
    validate_model(&raw)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ScoreModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_model(&text, &path.display().to_string())
}

/// Left-invariant laws of `P` and `Q`, the product law and `mu`.
pub fn stationary(model: &ScoreModel) -> Result<StationaryInfo> {
    let pi_p = spectral::perron(model.p())?.left;
    let pi_q = spectral::perron(model.q())?.left;
    let n = model.n_states();
    let pi: Vec<f64> = (0..n * n).map(|k| pi_p[k / n] * pi_q[k % n]).collect();
    let m = n * n;
    let mut mu = 0.0;
    for i in 0..m {
        if pi[i] == 0.0 {
            continue;
        }
        for j in 0..m {
            let pr = model.step_prob(i, j);
            if pr > 0.0 {
                mu += pi[i] * pr * model.step_score(i, j);
            }
        }
    }
    Ok(StationaryInfo { pi_p, pi_q, pi, mu })
}

/// A pair of cycles, one for each chain, with the summed score along them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleWitness {
    pub x_cycle: Vec<usize>,
    pub y_cycle: Vec<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PositivityCheck {
    Witness { witness: CycleWitness, max_mean: f64 },
    Failure { max_mean: f64 },
}

impl PositivityCheck {
    pub fn holds(&self) -> bool {
        matches!(self, PositivityCheck::Witness { .. })
    }
}

fn product_edges(model: &ScoreModel) -> Vec<(usize, usize, f64)> {
    let m = model.n_pairs();
    let mut edges = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if model.step_prob(i, j) > 0.0 {
                edges.push((i, j, model.step_score(i, j)));
            }
        }
    }
    edges
}

/// Karp's maximum mean cycle weight on a graph with `n` vertices.
fn max_mean_cycle(n: usize, edges: &[(usize, usize, f64)]) -> f64 {
    // d[k][v]: max weight of a walk with exactly k edges ending at v, from any start.
    let neg = f64::NEG_INFINITY;
    let mut d = vec![vec![neg; n]; n + 1];
    d[0].iter_mut().for_each(|v| *v = 0.0);
    for k in 1..=n {
        for &(u, v, w) in edges {
            if d[k - 1][u] > neg {
                let cand = d[k - 1][u] + w;
                if cand > d[k][v] {
                    d[k][v] = cand;
                }
            }
        }
    }
    let mut best = neg;
    for v in 0..n {
        if d[n][v] == neg {
            continue;
        }
        let mut worst = f64::INFINITY;
        for k in 0..n {
            if d[k][v] > neg {
                worst = worst.min((d[n][v] - d[k][v]) / (n - k) as f64);
            }
        }
        best = best.max(worst);
    }
    best
}

/// Search for paired cycles with positive total score.
///
/// Runs Bellman-Ford for longest walks on the product chain `P ⊗ Q`; a
/// relaxation in round `|E|^2` exposes a positive cycle, which is traced
/// through the predecessor links.
pub fn check_positivity_condition(model: &ScoreModel) -> PositivityCheck {
    let n = model.n_pairs();
    let edges = product_edges(model);
    let max_mean = max_mean_cycle(n, &edges);
    let scale = model.max_abs_score().max(1.0);
    let eps = 1e-12 * scale;

    let mut dist = vec![0.0_f64; n];
    let mut pred = vec![usize::MAX; n];
    let mut last = None;
    for _ in 0..=n {
        last = None;
        for &(u, v, w) in &edges {
            if dist[u] + w > dist[v] + eps {
                dist[v] = dist[u] + w;
                pred[v] = u;
                last = Some(v);
            }
        }
        if last.is_none() {
            break;
        }
    }
    let witness = last.and_then(|mut v| {
        for _ in 0..n {
            v = pred[v];
        }
        let start = v;
        let mut cycle = vec![start];
        let mut cur = pred[start];
        while cur != start {
            cycle.push(cur);
            cur = pred[cur];
            if cycle.len() > n {
                return None;
            }
        }
        cycle.reverse();
        let len = cycle.len();
        let score: f64 = (0..len).map(|k| model.step_score(cycle[k], cycle[(k + 1) % len])).sum();
        // Rotate so the cycle is listed as (x_1, y_1), ..., (x_n, y_n).
        let rotated: Vec<usize> = (0..len).map(|k| cycle[(k + 1) % len]).collect();
        let ns = model.n_states();
        (score > eps).then(|| CycleWitness {
            x_cycle: rotated.iter().map(|&s| s / ns).collect(),
            y_cycle: rotated.iter().map(|&s| s % ns).collect(),
            score,
        })
    });
    match witness {
        Some(witness) => PositivityCheck::Witness { witness, max_mean },
        None => PositivityCheck::Failure { max_mean },
    }
}

/// Total score along paired cycles, `Σ f(x_{k-1}, y_{k-1}, x_k, y_k)` cyclically.
pub fn cycle_score(model: &ScoreModel, xs: &[usize], ys: &[usize]) -> f64 {
    let len = xs.len();
    (0..len)
        .map(|k| {
            let prev = (k + len - 1) % len;
            model.step_score(model.pair_index(xs[prev], ys[prev]), model.pair_index(xs[k], ys[k]))
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftWitness {
    pub x_cycle: Vec<usize>,
    pub y_cycle: Vec<usize>,
    pub unshifted: f64,
    pub shifted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ShiftStatus {
    WitnessFound(ShiftWitness),
    NoWitnessFound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    /// Entry `k` is for shift `T = k + 1`.
    pub per_shift: Vec<ShiftStatus>,
    /// Whether `f(x,y) = f1(x) + f2(y)`; `None` for pair-transition scores.
    pub additive_form: Option<bool>,
    /// Both `P` and `Q` have strictly positive entries, in which case the
    /// shift condition holds exactly when `f` is not additive.
    pub strictly_positive: bool,
    pub max_exhaustive_len: usize,
}

impl ShiftReport {
    pub fn all_found(&self) -> bool {
        self.per_shift.iter().all(|s| matches!(s, ShiftStatus::WitnessFound(_)))
    }
}

pub const DEFAULT_SHIFT_T_MAX: usize = 8;
const CYCLE_ENUM_CAP: usize = 512;
const RANDOM_CYCLE_TRIALS: usize = 4000;

/// Second-difference test for the additive form `f(x,y) = f1(x) + f2(y)`.
pub fn is_additive(f: &Matrix) -> bool {
    let n = f.n_rows();
    let tol = 1e-9 * f.max_abs().max(1.0);
    (0..n).all(|x| (0..n).all(|y| (f[(x, y)] - f[(x, 0)] - f[(0, y)] + f[(0, 0)]).abs() <= tol))
}

/// All closed walks of length `len` w.r.t. the support of `m`, up to `cap`.
fn enumerate_cycles(m: &Matrix, len: usize, cap: usize) -> Vec<Vec<usize>> {
    let n = m.n_rows();
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(len);
    fn rec(m: &Matrix, n: usize, len: usize, cap: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if out.len() >= cap {
            return;
        }
        if path.len() == len {
            if m[(path[len - 1], path[0])] > 0.0 {
                out.push(path.clone());
            }
            return;
        }
        for s in 0..n {
            if path.last().is_none_or(|&l| m[(l, s)] > 0.0) {
                path.push(s);
                rec(m, n, len, cap, path, out);
                path.pop();
            }
        }
    }
    rec(m, n, len, cap, &mut path, &mut out);
    out
}

fn random_cycle(m: &Matrix, len: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
    let n = m.n_rows();
    let mut path = vec![rng.gen_range(0..n)];
    while path.len() < len {
        let last = *path.last().unwrap();
        let next: Vec<usize> = (0..n).filter(|&s| m[(last, s)] > 0.0).collect();
        path.push(next[rng.gen_range(0..next.len())]);
    }
    (m[(path[len - 1], path[0])] > 0.0).then_some(path)
}

fn shifted(ys: &[usize], t: usize) -> Vec<usize> {
    let n = ys.len();
    (0..n).map(|k| ys[(k + t) % n]).collect()
}

/// Best-effort search for witnesses of the shift condition, for `T = 1..=t_max`.
pub fn check_shift_condition(model: &ScoreModel, t_max: usize) -> ShiftReport {
    let n = model.n_states();
    let tol = 1e-9 * model.max_abs_score().max(1.0);
    // Longest cycle length whose walks can all be listed within the cap.
    let max_len = ((CYCLE_ENUM_CAP as f64).ln() / (n.max(2) as f64).ln()).floor().max(2.0) as usize;
    let x_cycles: Vec<Vec<Vec<usize>>> =
        (0..=max_len).map(|l| if l == 0 { vec![] } else { enumerate_cycles(model.p(), l, CYCLE_ENUM_CAP) }).collect();
    let y_cycles: Vec<Vec<Vec<usize>>> =
        (0..=max_len).map(|l| if l == 0 { vec![] } else { enumerate_cycles(model.q(), l, CYCLE_ENUM_CAP) }).collect();

    let differs = |xs: &[usize], ys: &[usize], t: usize| -> Option<ShiftWitness> {
        let ys_t = shifted(ys, t);
        let a = cycle_score(model, xs, ys);
        let b = cycle_score(model, xs, &ys_t);
        ((a - b).abs() > tol).then(|| ShiftWitness { x_cycle: xs.to_vec(), y_cycle: ys.to_vec(), unshifted: a, shifted: b })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    let per_shift = (1..=t_max)
        .map(|t| {
            for len in 2..=max_len {
                if t % len == 0 {
                    continue;
                }
                for xs in &x_cycles[len] {
                    for ys in &y_cycles[len] {
                        if let Some(w) = differs(xs, ys, t) {
                            return ShiftStatus::WitnessFound(w);
                        }
                    }
                }
            }
            let longest = (2 * t + 2).max(max_len + 1);
            for _ in 0..RANDOM_CYCLE_TRIALS {
                let len = rng.gen_range(2..=longest);
                if t % len == 0 {
                    continue;
                }
                if let (Some(xs), Some(ys)) = (random_cycle(model.p(), len, &mut rng), random_cycle(model.q(), len, &mut rng)) {
                    if let Some(w) = differs(&xs, &ys, t) {
                        return ShiftStatus::WitnessFound(w);
                    }
                }
            }
            ShiftStatus::NoWitnessFound
        })
        .collect();

    let strictly_positive = model.p().as_slice().iter().chain(model.q().as_slice()).all(|&v| v > 0.0);
    ShiftReport {
        per_shift,
        additive_form: model.pair_scores().map(is_additive),
        strictly_positive,
        max_exhaustive_len: max_len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_binary(m: f64, mm: f64) -> ScoreModel {
        let half = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        ScoreModel::pair(half.clone(), half, vec![vec![m, mm], vec![mm, m]]).unwrap()
    }

    #[test]
    fn uniform_binary_is_valid_lattice() {
        let m = uniform_binary(1.0, -1.0);
        assert!(m.lattice());
        assert_eq!(m.score_scale(), 1.0);
    }

    #[test]
    fn zero_row_is_rejected() {
        let err = ScoreModel::pair(
            vec![vec![0.0, 0.0], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
        )
        .unwrap_err();
        match err {
            Error::InvalidModel(v) => {
                assert!(v.iter().any(|v| matches!(v, Violation::NonStochasticRow { matrix: "P", row: 0, .. })))
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn two_cycle_is_periodic() {
        let err = ScoreModel::pair(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
        )
        .unwrap_err();
        match err {
            Error::InvalidModel(v) => assert_eq!(v, vec![Violation::Periodic { matrix: "P", period: 2 }]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn every_violation_is_listed() {
        let err = ScoreModel::pair(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.7, 0.7], vec![0.5, 0.5]],
            vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
        )
        .unwrap_err();
        match err {
            Error::InvalidModel(v) => {
                assert!(v.contains(&Violation::Reducible { matrix: "P" }));
                assert!(v.iter().any(|v| matches!(v, Violation::NonStochasticRow { matrix: "Q", .. })));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rows_within_tolerance_are_renormalized() {
        let m = ScoreModel::pair(
            vec![vec![0.5, 0.5 + 1e-11], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
        )
        .unwrap();
        let s: f64 = m.p().row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gcd_rescaling_warns() {
        let m = uniform_binary(2.0, -4.0);
        assert_eq!(m.score_scale(), 2.0);
        assert_eq!(m.pair_scores().unwrap()[(0, 1)], -2.0);
        assert_eq!(m.warnings().len(), 1);
    }

    #[test]
    fn real_scores_are_nonlattice() {
        let m = uniform_binary(1.0, -1.5);
        assert!(!m.lattice());
        let raw = RawModel { lattice: Some(true), ..m.to_raw() };
        assert!(matches!(validate_model(&raw), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn validation_is_idempotent() {
        for m in [uniform_binary(2.0, -4.0), uniform_binary(1.0, -1.5)] {
            let again = validate_model(&m.to_raw()).unwrap();
            assert_eq!(again.p(), m.p());
            assert_eq!(again.score(), m.score());
            assert_eq!(again.lattice(), m.lattice());
        }
    }

    #[test]
    fn stationary_uniform() {
        let st = stationary(&uniform_binary(1.0, -2.0)).unwrap();
        assert!((st.pi_p[0] - 0.5).abs() < 1e-14);
        // mu = 1/2 * 1 + 1/2 * (-2)
        assert!((st.mu + 0.5).abs() < 1e-14);
    }

    #[test]
    fn stationary_two_state() {
        let m = ScoreModel::pair(
            vec![vec![0.9, 0.1], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
        )
        .unwrap();
        let st = stationary(&m).unwrap();
        // pi = (5/6, 1/6) solves pi P = pi by hand.
        assert!((st.pi_p[0] - 5.0 / 6.0).abs() < 1e-13);
        assert!((st.pi_p[1] - 1.0 / 6.0).abs() < 1e-13);
    }

    #[test]
    fn positivity_witness_self_loop() {
        let m = uniform_binary(1.0, -2.0);
        match check_positivity_condition(&m) {
            PositivityCheck::Witness { witness, max_mean } => {
                assert!(witness.score > 0.0);
                assert_eq!(max_mean, 1.0);
                assert_eq!(cycle_score(&m, &witness.x_cycle, &witness.y_cycle), witness.score);
            }
            f => panic!("expected witness, got {f:?}"),
        }
    }

    #[test]
    fn positivity_fails_for_negative_scores() {
        let m = uniform_binary(-1.0, -1.0);
        assert!(matches!(check_positivity_condition(&m), PositivityCheck::Failure { .. }));
    }

    #[test]
    fn shift_condition_binary_t1() {
        let m = uniform_binary(1.0, -1.0);
        let r = check_shift_condition(&m, 3);
        assert!(r.all_found());
        assert_eq!(r.additive_form, Some(false));
        if let ShiftStatus::WitnessFound(w) = &r.per_shift[0] {
            assert_ne!(w.unshifted, w.shifted);
        }
    }

    #[test]
    fn shift_condition_additive() {
        let f1 = [0.5, -1.0, 2.0];
        let f2 = [-3.0, 1.0, 0.25];
        let score: Vec<Vec<f64>> = (0..3).map(|x| (0..3).map(|y| f1[x] + f2[y]).collect()).collect();
        let p = vec![vec![0.2, 0.3, 0.5], vec![0.4, 0.4, 0.2], vec![0.1, 0.6, 0.3]];
        let m = ScoreModel::pair(p.clone(), p, score).unwrap();
        let r = check_shift_condition(&m, DEFAULT_SHIFT_T_MAX);
        assert_eq!(r.additive_form, Some(true));
        assert!(r.strictly_positive);
        assert!(r.per_shift.iter().all(|s| *s == ShiftStatus::NoWitnessFound));
    }

    #[test]
    fn model_file_round_trip_and_unknown_keys() {
        let text = r#"
alphabet = ["A", "B"]
P = [[0.5, 0.5], [0.5, 0.5]]
Q = [[0.5, 0.5], [0.5, 0.5]]
score = [[1, -2], [-2, 1]]
"#;
        let m = parse_model(text, "inline").unwrap();
        assert_eq!(m.symbols(), ["A", "B"]);
        assert!(m.lattice());
        let bad = format!("{text}\nbogus = 1\n");
        match parse_model(&bad, "inline") {
            Err(Error::Parse { line, .. }) => assert!(line >= 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn transition_scores_shape() {
        let half = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let score = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { -1.0 }).collect()).collect();
        let m = ScoreModel::transition(half.clone(), half, score).unwrap();
        assert!(m.score().is_transition());
        assert_eq!(m.step_score(1, 1), 1.0);
        assert_eq!(m.step_score(1, 2), -1.0);
    }
}
