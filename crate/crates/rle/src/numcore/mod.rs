//! Dense linear algebra, small MLPs with hand-implemented reverse-mode
//! gradients, the Adam optimizer, and a finite-difference gradient checker.
//!
//! Everything is 64-bit and single-threaded value semantics; callers may run
//! many independent models in parallel.

pub mod activation;
pub mod adam;
pub mod gradcheck;
pub mod mlp;
pub mod tensor;

pub use activation::{leaky_relu, leaky_relu_deriv, sigmoid};
pub use adam::AdamState;
pub use gradcheck::{finite_diff_grad, max_rel_error};
pub use mlp::{LinearLayer, MlpBackward, MlpCache, MlpParams, OutputInit};
pub use tensor::Tensor2;

/// Default leaky-ReLU slope used across the crate.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Analytic MLP gradients agree with central finite differences on many
    /// random draws, at 64-bit tolerances.
    #[test]
    fn gradients_match_finite_differences_on_100_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..100 {
            let hidden = rng.random_range(2..6usize);
            let net =
                MlpParams::init(&mut rng, &[2, hidden, 1], 0.01, OutputInit::Uniform).unwrap();
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let (_, cache) = net.forward(&x).unwrap();
            let back = net.backward(&cache, &[1.0]).unwrap();

            let flat = net.to_flat();
            let fd = finite_diff_grad(
                |p| {
                    let mut m = net.clone();
                    m.set_from_flat(p).unwrap();
                    m.eval(&x).unwrap()[0]
                },
                &flat,
                1e-5,
            );
            assert!(
                max_rel_error(&back.param_grads, &fd, 1e-9) < 1e-6,
                "gradient mismatch beyond tolerance"
            );
        }
    }
}
