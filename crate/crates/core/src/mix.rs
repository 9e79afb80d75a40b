//! Convex combination of the initial part score with the relative-location
//! score.

/// `(1 - alpha) * initial + alpha * rl`.
pub fn mix(initial: f64, rl: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * initial + alpha * rl
}

#[cfg(test)]
mod tests {
    use super::mix;

    #[test]
    fn endpoints_pass_through() {
        assert_eq!(mix(0.8, 0.2, 0.0), 0.8);
        assert_eq!(mix(0.8, 0.2, 1.0), 0.2);
    }

    #[test]
    fn interior_value() {
        assert!((mix(0.8, 0.2, 0.25) - 0.65).abs() < 1e-12);
    }
}
