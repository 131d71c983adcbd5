//! Small statistical helpers used by verification reports and tests.

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against the
/// exponential law `F(x) = 1 - exp(-rate x)`.
pub fn exponential_ks_statistic(samples: &[f64], rate: f64) -> f64 {
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = 1.0 - (-rate * x).exp();
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

fn kolmogorov_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
    }
    1.0 - 2.0 * sum
}

/// Asymptotic critical value of the KS statistic at significance `alpha`:
/// the statistic exceeds this with probability `alpha` under the null.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    let target = 1.0 - alpha;
    let mut lo = 0.1;
    let mut hi = 5.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) / (n as f64).sqrt()
}

/// Normalized per-pixel chi-square between a square hit-count image and its
/// own 90-degree rotation about the image center. Pixels empty in both
/// images are skipped; values near 1 indicate agreement at counting-noise
/// level.
pub fn rot90_chi_square(counts: &[u32], size: usize) -> f64 {
    assert_eq!(counts.len(), size * size, "image must be square");
    let mut chi = 0.0;
    let mut used = 0usize;
    for row in 0..size {
        for col in 0..size {
            let a = counts[row * size + col] as f64;
            // counter-clockwise rotation: (row, col) <- (col, size-1-row)
            let b = counts[col * size + (size - 1 - row)] as f64;
            if a + b > 0.0 {
                chi += (a - b) * (a - b) / (a + b);
                used += 1;
            }
        }
    }
    if used == 0 {
        0.0
    } else {
        chi / used as f64
    }
}
