//! Minimal differentiable-computation engine: 1D convolution and transposed
//! convolution with reverse-mode gradients, dropout, activations, MSE, and
//! Adam. Double precision throughout.

mod adam;
mod checkpoint;
pub(crate) mod kernels;
pub mod ops;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{
    read_checkpoint, write_checkpoint, CheckpointEntry, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use kernels::{conv_out_len, conv_transpose_out_len};
pub use tensor::{backward, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("tensor has no recorded computation graph")]
    NoGraph,
    #[error("bad geometry: {reason}")]
    BadGeometry { reason: String },
}

/// Seeded fan-in uniform initialization in +-sqrt(1 / (in_channels * kernel)).
pub fn init_conv_weight(
    rng: &mut rand_chacha::ChaCha8Rng,
    shape: [usize; 3],
    fan_in: usize,
) -> Tensor {
    use rand::Rng;
    let bound = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::param(&shape, data).expect("shape matches data length")
}

#[cfg(test)]
mod grad_tests {
    //! Central finite-difference checks for every differentiable op.

    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    /// Compares the analytic gradient of `loss_of(param_values)` at `at`
    /// against central differences, elementwise, with relative tolerance.
    fn check_grad(at: Vec<f64>, shape: &[usize], loss_of: impl Fn(&Tensor) -> Tensor) {
        let p = Tensor::param(shape, at.clone()).unwrap();
        let loss = loss_of(&p);
        backward(&loss).unwrap();
        let analytic = p.grad().expect("gradient populated");
        for j in 0..at.len() {
            let mut plus = at.clone();
            plus[j] += H;
            let mut minus = at.clone();
            minus[j] -= H;
            let lp = loss_of(&Tensor::new(shape, plus).unwrap()).item();
            let lm = loss_of(&Tensor::new(shape, minus).unwrap()).item();
            let numeric = (lp - lm) / (2.0 * H);
            let denom = numeric.abs().max(analytic[j].abs()).max(1.0);
            assert!(
                (numeric - analytic[j]).abs() / denom < TOL,
                "param {j}: analytic {} vs numeric {numeric}",
                analytic[j]
            );
        }
    }

    fn random(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn activation_gradients() {
        let target = Tensor::new(&[5], random(1, 5)).unwrap();
        check_grad(vec![0.3, -0.7, 0.001, 1.5, -2.0], &[5], |p| {
            ops::mse(&ops::relu(p), &target).unwrap()
        });
        check_grad(vec![0.3, -0.7, 0.1, 1.5, -2.0], &[5], |p| {
            ops::mse(&ops::tanh(p), &target).unwrap()
        });
    }

    #[test]
    fn conv_gradients_wrt_input_weight_bias() {
        let x0 = random(2, 3 * 7);
        let w0 = random(3, 2 * 3 * 3);
        let b0 = random(4, 2);
        let target = Tensor::new(&[2, 3], random(5, 6)).unwrap();

        let w = Tensor::new(&[2, 3, 3], w0.clone()).unwrap();
        let b = Tensor::new(&[2], b0.clone()).unwrap();
        check_grad(x0.clone(), &[3, 7], |p| {
            ops::mse(&ops::conv1d(p, &w, Some(&b), 2, 0).unwrap(), &target).unwrap()
        });

        let x = Tensor::new(&[3, 7], x0.clone()).unwrap();
        check_grad(w0, &[2, 3, 3], |p| {
            ops::mse(&ops::conv1d(&x, p, Some(&b), 2, 0).unwrap(), &target).unwrap()
        });
        check_grad(b0, &[2], |p| {
            ops::mse(&ops::conv1d(&x, &w, Some(p), 2, 0).unwrap(), &target).unwrap()
        });
    }

    #[test]
    fn conv_transpose_gradients_wrt_input_weight_bias() {
        let x0 = random(6, 2 * 5);
        let w0 = random(7, 2 * 3 * 4);
        let b0 = random(8, 3);
        let lout = conv_transpose_out_len(5, 4, 2, 1).unwrap();
        let target = Tensor::new(&[3, lout], random(9, 3 * lout)).unwrap();

        let w = Tensor::new(&[2, 3, 4], w0.clone()).unwrap();
        let b = Tensor::new(&[3], b0.clone()).unwrap();
        check_grad(x0.clone(), &[2, 5], |p| {
            ops::mse(&ops::conv_transpose1d(p, &w, Some(&b), 2, 1).unwrap(), &target).unwrap()
        });

        let x = Tensor::new(&[2, 5], x0).unwrap();
        check_grad(w0, &[2, 3, 4], |p| {
            ops::mse(&ops::conv_transpose1d(&x, p, Some(&b), 2, 1).unwrap(), &target).unwrap()
        });
        check_grad(b0, &[3], |p| {
            ops::mse(&ops::conv_transpose1d(&x, &w, Some(p), 2, 1).unwrap(), &target).unwrap()
        });
    }

    #[test]
    fn dropout_and_crop_gradients() {
        let target = Tensor::new(&[2, 4], random(10, 8)).unwrap();
        check_grad(random(11, 2 * 6), &[2, 6], |p| {
            let d = ops::dropout(p, 0.3, true, 99).unwrap();
            ops::mse(&ops::crop_time(&d, 1, 4).unwrap(), &target).unwrap()
        });
    }

    #[test]
    fn composed_chain_gradient() {
        // conv -> relu -> transpose -> mse, all parameters checked
        let x = Tensor::new(&[2, 6], random(12, 12)).unwrap();
        let w1_0 = random(13, 3 * 2 * 3);
        let w2_0 = random(14, 3 * 2 * 2);
        let target_len = conv_transpose_out_len(conv_out_len(6, 3, 1, 1).unwrap(), 2, 1, 0).unwrap();
        let target = Tensor::new(&[2, target_len], random(15, 2 * target_len)).unwrap();
        let w2 = Tensor::new(&[3, 2, 2], w2_0.clone()).unwrap();
        check_grad(w1_0.clone(), &[3, 2, 3], |p| {
            let h = ops::relu(&ops::conv1d(&x, p, None, 1, 1).unwrap());
            ops::mse(&ops::conv_transpose1d(&h, &w2, None, 1, 0).unwrap(), &target).unwrap()
        });
        let w1 = Tensor::new(&[3, 2, 3], w1_0).unwrap();
        check_grad(w2_0, &[3, 2, 2], |p| {
            let h = ops::relu(&ops::conv1d(&x, &w1, None, 1, 1).unwrap());
            ops::mse(&ops::conv_transpose1d(&h, p, None, 1, 0).unwrap(), &target).unwrap()
        });
    }

    #[test]
    fn forward_and_gradients_are_bit_deterministic() {
        let x0 = random(20, 4 * 50);
        let w0 = random(21, 4 * 6 * 5);
        let run = || {
            let x = Tensor::param(&[4, 50], x0.clone()).unwrap();
            let w = Tensor::param(&[4, 6, 5], w0.clone()).unwrap();
            let y = ops::conv_transpose1d(&x, &w, None, 3, 2).unwrap();
            let t = Tensor::zeros(y.shape());
            let loss = ops::mse(&y, &t).unwrap();
            backward(&loss).unwrap();
            (y.to_vec(), x.grad().unwrap(), w.grad().unwrap())
        };
        let (y1, gx1, gw1) = run();
        let (y2, gx2, gw2) = run();
        assert_eq!(y1, y2);
        assert_eq!(gx1, gx2);
        assert_eq!(gw1, gw2);
    }
}
