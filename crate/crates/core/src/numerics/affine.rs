use super::matrix::RealMatrix;
use crate::error::{Error, Result};

/// `W·x + b`.
pub fn affine_forward(input: &[f64], weights: &RealMatrix, bias: &[f64]) -> Result<Vec<f64>> {
    check_dims(input.len(), weights, bias.len())?;
    let mut out = bias.to_vec();
    weights.matvec_acc(input, &mut out);
    Ok(out)
}

/// Gradients of `W·x + b` given `∂L/∂out` and the forward input.
///
/// Returns `(∂L/∂x, ∂L/∂W, ∂L/∂b)`.
pub fn affine_backward(
    grad_out: &[f64],
    input: &[f64],
    weights: &RealMatrix,
) -> Result<(Vec<f64>, RealMatrix, Vec<f64>)> {
    check_dims(input.len(), weights, grad_out.len())?;
    let mut grad_weights = RealMatrix::zeros(weights.rows(), weights.cols());
    let mut grad_bias = vec![0.0; weights.rows()];
    let grad_input = affine_backward_acc(grad_out, input, weights, &mut grad_weights, &mut grad_bias);
    Ok((grad_input, grad_weights, grad_bias))
}

/// Accumulates weight and bias gradients in place and returns `∂L/∂x`.
pub(crate) fn affine_backward_acc(
    grad_out: &[f64],
    input: &[f64],
    weights: &RealMatrix,
    grad_weights: &mut RealMatrix,
    grad_bias: &mut [f64],
) -> Vec<f64> {
    grad_weights.add_outer(grad_out, input);
    for (gb, g) in grad_bias.iter_mut().zip(grad_out) {
        *gb += g;
    }
    let mut grad_input = vec![0.0; weights.cols()];
    weights.matvec_t_acc(grad_out, &mut grad_input);
    grad_input
}

fn check_dims(input_len: usize, weights: &RealMatrix, out_len: usize) -> Result<()> {
    if input_len != weights.cols() || out_len != weights.rows() {
        return Err(Error::usage(format!(
            "affine: input {input_len} / output {out_len} do not conform to {}x{} weights",
            weights.rows(),
            weights.cols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_return_bias() {
        let w = RealMatrix::zeros(3, 4);
        let out = affine_forward(&[1.0, 2.0, 3.0, 4.0], &w, &[0.5, -0.5, 2.0]).unwrap();
        assert_eq!(out, vec![0.5, -0.5, 2.0]);
    }

    #[test]
    fn identity_weights_return_input() {
        let w = RealMatrix::identity(4);
        let x = [1.5, -2.0, 0.25, 9.0];
        assert_eq!(affine_forward(&x, &w, &[0.0; 4]).unwrap(), x.to_vec());
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let w = RealMatrix::zeros(3, 4);
        assert!(matches!(affine_forward(&[1.0; 3], &w, &[0.0; 3]), Err(Error::Usage(_))));
        assert!(matches!(affine_forward(&[1.0; 4], &w, &[0.0; 2]), Err(Error::Usage(_))));
        assert!(affine_backward(&[1.0; 2], &[1.0; 4], &w).is_err());
    }
}
