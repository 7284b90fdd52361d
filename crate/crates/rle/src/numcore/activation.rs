//! Scalar activations and their derivatives.

/// Leaky rectified linear unit: `x` for `x >= 0`, `slope * x` otherwise.
#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Derivative of [`leaky_relu`]; the kink at zero takes the right branch.
#[inline]
pub fn leaky_relu_deriv(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// Numerically stable logistic sigmoid, `1 / (1 + e^{-x})`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn leaky_relu_definition() {
        assert_eq!(leaky_relu(2.0, 0.01), 2.0);
        assert_eq!(leaky_relu(-1.0, 0.01), -0.01);
        assert_eq!(leaky_relu(0.0, 0.01), 0.0);
        assert_eq!(leaky_relu_deriv(0.0, 0.01), 1.0);
        assert_eq!(leaky_relu_deriv(-3.0, 0.25), 0.25);
    }

    #[test]
    fn sigmoid_symmetry_and_saturation() {
        assert_eq!(sigmoid(0.0), 0.5);
        let s = sigmoid(50.0);
        assert!(s <= 1.0 && 1.0 - s < 1e-20);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x: f64 = rng.random_range(-30.0..30.0);
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
