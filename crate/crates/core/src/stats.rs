//! Small shared statistics helpers.

/// Percentile with linear interpolation between order statistics, the same
/// convention as numpy's default. `p` in [0, 1]; input need not be sorted.
pub(crate) fn percentile_linear(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty set");
    assert!((0.0..=1.0).contains(&p), "percentile {p} outside [0,1]");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite percentile input"));
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates_between_order_statistics() {
        let pool: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert_eq!(percentile_linear(&pool, 0.75), 75.25);
        assert_eq!(percentile_linear(&pool, 0.0), 1.0);
        assert_eq!(percentile_linear(&pool, 1.0), 100.0);
    }

    #[test]
    fn percentile_of_constant_pool_is_that_constant() {
        assert_eq!(percentile_linear(&[3.5; 10], 0.75), 3.5);
    }

    #[test]
    fn percentile_for_oversampler_histogram() {
        // the {100, 25, 11, 4} reference histogram
        assert_eq!(percentile_linear(&[100.0, 25.0, 11.0, 4.0], 0.75), 43.75);
    }
}
