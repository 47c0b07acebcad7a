use multistop::MarketModel;
use statrs::distribution::{ContinuousCDF, Normal};

fn ks_statistic(mut xs: Vec<f64>, dist: &Normal) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = dist.cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn one_step_transition_is_lognormal() {
    let model = MarketModel::new(0.5, 0.9, 0.2, 1.0, 5).unwrap();
    let start = 1.7;
    let paths = model.simulate_inner_paths(3, start, 50_000, 99);
    let logs: Vec<f64> = paths.iter().map(|p| p.price(4).ln()).collect();
    let mean = (1.0 - 0.9) * (start.ln() - 0.2) + 0.2;
    assert!((model.next_log_mean(start) - mean).abs() < 1e-15);
    let d = ks_statistic(logs, &Normal::new(mean, 0.5).unwrap());
    // 1% critical value
    assert!(d < 1.63 / (50_000f64).sqrt(), "KS distance {d}");
}

#[test]
fn marginal_moments_match_the_ar1_recursion() {
    let (sigma, k, mu, s0) = (0.3, 0.25, 0.1, 2.0);
    let model = MarketModel::new(sigma, k, mu, s0, 6).unwrap();
    let n = 200_000;
    let paths = model.simulate_paths(n, 5);
    for date in [1usize, 3, 6] {
        let a = 1.0 - k;
        let mean = a.powi(date as i32) * (s0.ln() - mu) + mu;
        let var: f64 = (0..date).map(|i| a.powi(2 * i as i32)).sum::<f64>() * sigma * sigma;
        let logs: Vec<f64> = paths.iter().map(|p| p.price(date).ln()).collect();
        let m = logs.iter().sum::<f64>() / n as f64;
        let v = logs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((m - mean).abs() < 4.0 * (var / n as f64).sqrt(), "date {date}: mean {m} vs {mean}");
        // the sample variance has std about var * sqrt(2 / n)
        assert!((v - var).abs() < 4.0 * var * (2.0 / n as f64).sqrt(), "date {date}: var {v} vs {var}");
    }
}

#[test]
fn increments_are_uncorrelated() {
    let model = MarketModel::new(0.5, 0.9, 0.0, 1.0, 3).unwrap();
    let n = 100_000;
    let paths = model.simulate_paths(n, 17);
    // eps_j = (log S_j - 0.1 log S_{j-1}) / sigma
    let eps = |m: usize, j: usize| (paths.price(m, j).ln() - 0.1 * paths.price(m, j - 1).ln()) / 0.5;
    let corr: f64 = (0..n).map(|m| eps(m, 2) * eps(m, 3)).sum::<f64>() / n as f64;
    assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "correlation {corr}");
}

#[test]
fn cemetery_price_is_zero() {
    let model = MarketModel::new(0.5, 0.9, 0.0, 1.0, 4).unwrap();
    let paths = model.simulate_paths(100, 1);
    assert_eq!(paths.cemetery(), 5);
    assert!(paths.iter().all(|p| p.price(5) == 0.0 && p.price(4) > 0.0));
}
