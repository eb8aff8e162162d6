mod common;

use markalign::align::{self, scan_peaks, scan_peaks_auto, Sequences};
use markalign::conditions::{self, Verdict};
use markalign::linalg::Matrix;
use markalign::map_constants::{normalize_score, p_value, GumbelParams};
use markalign::model::{self, check_positivity_condition, cycle_score, is_additive, PositivityCheck, ScoreModel};
use markalign::spectral::{self, Shared};
use proptest::prelude::*;
use rand::Rng;

use common::*;

fn model_seed() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflection_is_partial_sum_minus_running_min(inc in prop::collection::vec(-4i32..=3, 0..60)) {
        let inc: Vec<f64> = inc.into_iter().map(f64::from).collect();
        let t = align::reflect(&inc);
        let (mut s, mut min) = (0.0_f64, 0.0_f64);
        for (k, v) in inc.iter().enumerate() {
            s += v;
            min = min.min(s);
            prop_assert_eq!(t[k], s - min);
        }
    }

    #[test]
    fn scan_agrees_with_exhaustive_search(seed in model_seed(), nx in 0usize..25, ny in 0usize..25) {
        let mut rng = rng(seed);
        let model = random_model(&mut rng, 4);
        let x = random_letters(&mut rng, model.n_states(), nx);
        let y = random_letters(&mut rng, model.n_states(), ny);
        let seqs = Sequences::new(&model, x.clone(), y.clone()).unwrap();
        let result = align::score_matrix_scan(&model, &seqs);
        prop_assert_eq!(result.m_n, brute_max(&model, &x, &y));
        let peaks = brute_peaks(&model, &x, &y);
        for t in [0.0, 1.0, 2.5] {
            prop_assert_eq!(result.c_of_t(t), peaks.iter().filter(|&&p| p > t).count());
        }
        let i32_scan = scan_peaks::<i32>(&model, &seqs, 0.0);
        let f64_scan = scan_peaks::<f64>(&model, &seqs, 0.0);
        prop_assert_eq!(i32_scan.m_n, result.m_n);
        prop_assert_eq!(f64_scan.m_n, result.m_n);
        prop_assert_eq!(i32_scan.c_of_t(1.0), result.c_of_t(1.0));
    }

    #[test]
    fn scan_floor_only_drops_low_peaks(seed in model_seed(), floor in 0.0f64..4.0) {
        let mut rng = rng(seed);
        let model = random_model(&mut rng, 3);
        let x = random_letters(&mut rng, model.n_states(), 40);
        let y = random_letters(&mut rng, model.n_states(), 35);
        let seqs = Sequences::new(&model, x, y).unwrap();
        let all = scan_peaks_auto(&model, &seqs, 0.0);
        let high = scan_peaks_auto(&model, &seqs, floor);
        prop_assert_eq!(all.m_n, high.m_n);
        prop_assert_eq!(all.c_of_t(floor), high.c_of_t(floor));
    }

    #[test]
    fn log_phi_is_convex(seed in model_seed(), a in -1.5f64..1.5, b in -1.5f64..1.5) {
        let model = random_model(&mut rng(seed), 4);
        let lp = |t: f64| spectral::log_phi(&model, t).unwrap();
        let mid = lp(0.5 * (a + b));
        prop_assert!(mid <= 0.5 * (lp(a) + lp(b)) + 1e-10);
    }

    #[test]
    fn perron_root_matches_dense_eigenvalues(seed in model_seed(), theta in -1.0f64..1.0) {
        let model = random_model(&mut rng(seed), 3);
        let (mat, shift) = spectral::tilted_matrix(&model, theta);
        let dense = spectral_radius(&mat.to_rows());
        let pf = spectral::perron(&mat).unwrap();
        prop_assert!((pf.radius - dense).abs() <= 1e-9 * dense);
        prop_assert!((spectral::log_phi(&model, theta).unwrap() - (shift + dense.ln())).abs() < 1e-9);
    }

    #[test]
    fn stationary_law_matches_linear_solve(seed in model_seed()) {
        let model = random_model(&mut rng(seed), 4);
        let info = model::stationary(&model).unwrap();
        let oracle = invariant_law(&model.p().to_rows());
        for (a, b) in info.pi_p.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn theta_star_scales_inversely(seed in model_seed(), c in prop::sample::select(vec![2.0, 1.0 / 3.0, 0.7])) {
        let mut rng = rng(seed);
        let (model, tilted) = loop {
            let n = rng.gen_range(2..=3);
            let p = stochastic(&mut rng, n, false);
            let q = stochastic(&mut rng, n, false);
            let f = real_table(&mut rng, n, n, -2.5, 1.5);
            let m = ScoreModel::pair(p, q, f).unwrap();
            if let Ok(t) = spectral::solve_theta_star(&m) {
                break (m, t);
            }
        };
        let mut raw = model.to_raw();
        raw.lattice = Some(false);
        raw.score.iter_mut().flatten().for_each(|v| *v *= c);
        let scaled = model::validate_model(&raw).unwrap();
        let ts = spectral::solve_theta_star(&scaled).unwrap();
        prop_assert!((ts.theta_star * c - tilted.theta_star).abs() < 1e-9 * tilted.theta_star.max(1.0));
        prop_assert!((ts.mu_star / c - tilted.mu_star).abs() < 1e-7);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in model_seed()) {
        let mut rng = rng(seed);
        let model = random_model(&mut rng, 2);
        let m = model.n_pairs();
        let g = Matrix::from_rows(&real_table(&mut rng, m, m, -1.0, 1.0));
        for which in [Shared::X, Shared::Y] {
            let (lp, grad) = conditions::log_phi_i_gradient(&model, &g, which).unwrap();
            prop_assert!((lp - spectral::log_phi_i(&model, &g, which).unwrap()).abs() < 1e-10);
            let (a, b) = (rng.gen_range(0..m), rng.gen_range(0..m));
            let h = 1e-5;
            let mut gp = g.clone();
            gp[(a, b)] += h;
            let mut gm = g.clone();
            gm[(a, b)] -= h;
            let fd = (spectral::log_phi_i(&model, &gp, which).unwrap() - spectral::log_phi_i(&model, &gm, which).unwrap()) / (2.0 * h);
            prop_assert!((fd - grad[(a, b)]).abs() < 1e-6, "fd {} grad {}", fd, grad[(a, b)]);
        }
    }

    #[test]
    fn objective_is_concave(seed in model_seed()) {
        let mut rng = rng(seed);
        let (model, tilted) = random_tilted_model(&mut rng, 2);
        let m = model.n_pairs();
        let g1 = Matrix::from_rows(&real_table(&mut rng, m, m, -2.0, 2.0));
        let g2 = Matrix::from_rows(&real_table(&mut rng, m, m, -2.0, 2.0));
        let mid = Matrix::from_fn(m, m, |i, j| 0.5 * (g1[(i, j)] + g2[(i, j)]));
        for which in [Shared::X, Shared::Y] {
            let f = |g: &Matrix| conditions::j_objective(&model, &tilted, g, which).unwrap();
            prop_assert!(f(&mid) >= 0.5 * (f(&g1) + f(&g2)) - 1e-9);
        }
    }

    #[test]
    fn spectral_inequality_holds(seed in model_seed()) {
        let mut rng = rng(seed);
        let model = random_model(&mut rng, 3);
        let m = model.n_pairs();
        let g = Matrix::from_rows(&real_table(&mut rng, m, m, -3.0, 3.0));
        let rhs = 2.0 * spectral::log_phi0(&model, &g).unwrap();
        for which in [Shared::X, Shared::Y] {
            prop_assert!(spectral::log_phi_i(&model, &g, which).unwrap() >= rhs - 1e-9);
        }
    }

    #[test]
    fn positivity_witness_matches_exhaustive_search(seed in model_seed()) {
        let mut rng = rng(seed);
        let n = rng.gen_range(2..=3);
        let p = stochastic(&mut rng, n, true);
        let q = stochastic(&mut rng, n, true);
        let f = int_table(&mut rng, n, n, -4, 1);
        let model = ScoreModel::pair(p, q, f).unwrap();
        let exhaustive = short_positive_cycle(&model, 3);
        match check_positivity_condition(&model) {
            PositivityCheck::Witness { witness: w, .. } => {
                prop_assert!(w.score > 0.0);
                prop_assert!((cycle_score(&model, &w.x_cycle, &w.y_cycle) - w.score).abs() < 1e-9);
                let len = w.x_cycle.len();
                for k in 0..len {
                    let next = (k + 1) % len;
                    prop_assert!(model.p()[(w.x_cycle[k], w.x_cycle[next])] > 0.0);
                    prop_assert!(model.q()[(w.y_cycle[k], w.y_cycle[next])] > 0.0);
                }
            }
            PositivityCheck::Failure { .. } => prop_assert!(!exhaustive),
        }
        if exhaustive {
            prop_assert!(check_positivity_condition(&model).holds());
        }
    }

    #[test]
    fn additive_scores_are_detected(f1 in prop::collection::vec(-3.0f64..3.0, 3), f2 in prop::collection::vec(-3.0f64..3.0, 3), bump in 0.1f64..2.0) {
        let mut f = Matrix::from_fn(3, 3, |x, y| f1[x] + f2[y]);
        prop_assert!(is_additive(&f));
        f[(1, 2)] += bump;
        prop_assert!(!is_additive(&f));
    }

    #[test]
    fn p_value_decreases_with_score(theta in 0.1f64..2.0, k in 0.01f64..1.0, n in 10usize..100_000, lattice: bool) {
        let params = GumbelParams { theta_star: theta, k_star: k, lattice };
        let mut prev = 1.0;
        for s in 0..60 {
            let s = s as f64 * 0.75;
            let (_, p) = normalize_score(&params, s, n, n);
            prop_assert!((0.0..=1.0).contains(&p));
            let pv = p_value(&params, s, n, n);
            prop_assert!((0.0..=1.0).contains(&pv));
            if !lattice {
                prop_assert!(p <= prev + 1e-15);
                prev = p;
            }
        }
        if lattice {
            for s in 0..40 {
                let s = s as f64;
                prop_assert!(p_value(&params, s + 1.0, n, n) <= p_value(&params, s, n, n) + 1e-15);
            }
        }
    }

    #[test]
    fn model_file_round_trip(seed in model_seed()) {
        let model = random_model(&mut rng(seed), 3);
        let text = toml::to_string(&model.to_raw()).unwrap();
        let back = model::parse_model(&text, "mem").unwrap();
        prop_assert_eq!(back.symbols(), model.symbols());
        prop_assert_eq!(back.score(), model.score());
        prop_assert_eq!(back.lattice(), model.lattice());
        prop_assert_eq!(back.score_scale(), model.score_scale());
        // Rows are renormalized on load, so probabilities may move by an ulp.
        for (a, b) in [(back.p(), model.p()), (back.q(), model.q())] {
            for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((u - v).abs() <= 4.0 * f64::EPSILON * v.max(f64::MIN_POSITIVE));
            }
        }
    }
}

/// Positive-score cycle pairs of length up to `max_len`, by enumeration.
fn short_positive_cycle(model: &ScoreModel, max_len: usize) -> bool {
    let n = model.n_states();
    for len in 1..=max_len {
        let total = n.pow(len as u32);
        for cx in 0..total {
            let xs: Vec<usize> = (0..len).map(|k| cx / n.pow(k as u32) % n).collect();
            if !(0..len).all(|k| model.p()[(xs[k], xs[(k + 1) % len])] > 0.0) {
                continue;
            }
            for cy in 0..total {
                let ys: Vec<usize> = (0..len).map(|k| cy / n.pow(k as u32) % n).collect();
                if (0..len).all(|k| model.q()[(ys[k], ys[(k + 1) % len])] > 0.0) && cycle_score(model, &xs, &ys) > 0.0 {
                    return true;
                }
            }
        }
    }
    false
}

#[test]
fn symmetric_model_has_equal_j() {
    let model = markov_reference();
    let tilted = spectral::solve_theta_star(&model).unwrap();
    let j1 = conditions::compute_j(&model, &tilted, Shared::X).unwrap();
    let j2 = conditions::compute_j(&model, &tilted, Shared::Y).unwrap();
    assert!((j1 - j2).abs() < 1e-6, "{j1} vs {j2}");
    let report = conditions::condition_report(&model, &tilted).unwrap();
    assert_eq!(report.condition12, Verdict::Pass);
    assert!(report.sufficient_test.pass);
    assert!(2.0 * j1.min(j2) > report.threshold);
}

#[test]
fn binary_reference_constants() {
    let model = binary_reference();
    let tilted = spectral::solve_theta_star(&model).unwrap();
    let golden: f64 = (1.0 + 5f64.sqrt()) / 2.0;
    // Tilted mass on the two matching pairs is e^θ*/2.
    let match_mass = golden / 2.0;
    let mu_star = match_mass - 2.0 * (1.0 - match_mass);
    assert!((tilted.mu_star - mu_star).abs() < 1e-9);
    assert!((tilted.mu - (-0.5)).abs() < 1e-12);
    let cf = conditions::iid_check(&model).unwrap();
    let j = conditions::compute_j(&model, &tilted, Shared::X).unwrap();
    assert!((j - cf.j1).abs() < 1e-6);
    assert!((cf.j1 - 2.0 * tilted.theta_star * mu_star).abs() < 1e-9);
}

#[test]
fn lattice_scanner_handles_long_sequences() {
    let model = markov_reference();
    let mut rng = rng(5);
    let x = random_letters(&mut rng, 2, 3000);
    let y = random_letters(&mut rng, 2, 2500);
    let seqs = Sequences::new(&model, x, y).unwrap();
    let a = scan_peaks::<i16>(&model, &seqs, 2.0);
    let b = scan_peaks::<f64>(&model, &seqs, 2.0);
    assert_eq!(a.m_n, b.m_n);
    let (mut pa, mut pb) = (a.peaks.clone(), b.peaks.clone());
    pa.sort_by(f64::total_cmp);
    pb.sort_by(f64::total_cmp);
    assert_eq!(pa, pb);
}
