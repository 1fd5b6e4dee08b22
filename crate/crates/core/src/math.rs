//! Log-domain helpers and small summary statistics.

/// `ln(sum(exp(xs)))`, stable for large magnitudes. Returns `-inf` for an
/// empty slice or when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `ln(mean(exp(xs)))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Mean and population standard deviation. `None` for an empty slice.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Draw an index from unnormalized log-weights. `u` must be uniform on [0, 1).
pub(crate) fn sample_log_weights(log_weights: &[f64], u: f64) -> usize {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut cumulative = Vec::with_capacity(log_weights.len());
    for &lw in log_weights {
        total += (lw - max).exp();
        cumulative.push(total);
    }
    let target = u * total;
    cumulative
        .iter()
        .position(|&c| target < c)
        .unwrap_or(log_weights.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive_sum() {
        let xs = [-1.0, 0.5, 2.0, -3.0];
        let naive: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_survives_underflow() {
        let xs = [-1000.0, -1000.0];
        assert!((log_sum_exp(&xs) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn sampling_respects_zero_weight() {
        let lw = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        for u in [0.0, 0.3, 0.999] {
            assert_eq!(sample_log_weights(&lw, u), 1);
        }
    }

    #[test]
    fn single_value_has_zero_std() {
        assert_eq!(mean_std(&[4.0]), Some((4.0, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }
}
