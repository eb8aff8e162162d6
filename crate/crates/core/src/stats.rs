//! Small statistical helpers: Poisson law, total variation, entropies, quantiles.

/// Two-sided 99% standard normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_901;

/// Poisson pmf `P(N = k)` for mean `lambda`, evaluated in log space.
pub fn poisson_pmf(lambda: f64, k: usize) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let mut log_fact = 0.0;
    for i in 2..=k {
        log_fact += (i as f64).ln();
    }
    (k as f64 * lambda.ln() - lambda - log_fact).exp()
}

/// Poisson pmf on `0..=k_max` where `k_max` is the first point whose upper
/// tail mass falls below `tail`.
pub fn poisson_table(lambda: f64, tail: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut cum = 0.0;
    let mut k = 0;
    loop {
        let p = poisson_pmf(lambda, k);
        out.push(p);
        cum += p;
        if 1.0 - cum < tail && k as f64 >= lambda {
            break;
        }
        k += 1;
        if k > 100_000 {
            break;
        }
    }
    out
}

/// Upper tail `P(N >= k)` of a Poisson law.
pub fn poisson_upper_tail(lambda: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let below: f64 = (0..k as usize).map(|i| poisson_pmf(lambda, i)).sum();
    if below < 0.5 {
        return 1.0 - below;
    }
    // Sum the tail directly when it is small, for accuracy.
    let mut tail = 0.0;
    let mut i = k as usize;
    loop {
        let p = poisson_pmf(lambda, i);
        tail += p;
        if p < 1e-18 * tail.max(f64::MIN_POSITIVE) && i as f64 > lambda {
            break;
        }
        i += 1;
        if i > k as usize + 100_000 {
            break;
        }
    }
    tail
}

/// Total variation distance `½ Σ |p - q|` between two pmfs on `0, 1, ...`;
/// missing entries are zero.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    0.5 * (0..n).map(|i| (at(p, i) - at(q, i)).abs()).sum::<f64>()
}

/// Relative entropy `H(p | q)` with `0 log 0 = 0` and `+∞` when `p` is not
/// absolutely continuous w.r.t. `q`.
pub fn relative_entropy(p: &[f64], q: &[f64]) -> f64 {
    let mut h = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            h += a * (a / b).ln();
        }
    }
    h
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        iter.into_iter().for_each(|x| m.push(x));
        m
    }
}
