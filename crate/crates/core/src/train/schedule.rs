use std::f64::consts::PI;

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> f64 {
    let total = total_steps.max(1);
    // Endpoints are returned verbatim so they match the configuration exactly.
    if step == 0 {
        return lr_max;
    }
    if step >= total {
        return lr_min;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let (hi, lo) = (3.141e-5, 3.141e-7);
        assert_eq!(cosine_lr(0, 3900, hi, lo), hi);
        assert_eq!(cosine_lr(3900, 3900, hi, lo), lo);
        assert!((cosine_lr(1950, 3900, hi, lo) - (hi + lo) / 2.0).abs() < 1e-18);
        assert!((cosine_lr(1950, 3900, hi, lo) - 1.586e-5).abs() < 1e-8);
    }

    #[test]
    fn monotone_non_increasing() {
        let mut prev = f64::INFINITY;
        for s in 0..=1000 {
            let lr = cosine_lr(s, 1000, 1e-3, 1e-6);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
