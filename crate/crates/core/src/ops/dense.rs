//! Fully connected affine layer `y = W x + b`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `(out_features, in_features)`
    pub weights: Tensor,
    /// `(out_features)`
    pub bias: Tensor,
}

impl DenseParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::shape(
                "dense",
                format!("weights must be rank 2, got {:?}", weights.shape()),
            ));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::mismatch(
                "dense",
                "bias",
                format!("[{}]", weights.shape()[0]),
                format!("{:?}", bias.shape()),
            ));
        }
        Ok(DenseParams { weights, bias })
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }
}

fn check(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    if input.rank() != 2 {
        return Err(Error::shape(
            "dense",
            format!("input must be rank 2 (batch, features), got {:?}", input.shape()),
        ));
    }
    if weights.rank() != 2 {
        return Err(Error::shape("dense", "weights must be rank 2"));
    }
    let (b, n) = (input.shape()[0], input.shape()[1]);
    let m = weights.shape()[0];
    if weights.shape()[1] != n {
        return Err(Error::mismatch("dense", "feature axis", weights.shape()[1], n));
    }
    if bias.shape() != [m] {
        return Err(Error::mismatch("dense", "bias", m, format!("{:?}", bias.shape())));
    }
    Ok((b, n, m))
}

pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, n, m) = check(input, weights, bias)?;
    input.check_finite("dense input")?;
    let x = input.data();
    let w = weights.data();
    let mut out = Vec::with_capacity(b * m);
    for row in x.chunks(n) {
        for (j, wr) in w.chunks(n).enumerate() {
            let mut acc = bias.data()[j];
            for (xi, wi) in row.iter().zip(wr) {
                acc += xi * wi;
            }
            out.push(acc);
        }
    }
    let t = Tensor::from_parts(vec![b, m], out);
    t.check_finite("dense output")?;
    Ok(t)
}

/// Gradient with respect to the input: `grad_out · W`.
pub fn dense_backward_input(weights: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.rank() != 2 || weights.rank() != 2 || grad_out.shape()[1] != weights.shape()[0] {
        return Err(Error::mismatch(
            "dense_backward",
            "grad_out",
            format!("[batch, {}]", weights.shape()[0]),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let (b, m) = (grad_out.shape()[0], grad_out.shape()[1]);
    let n = weights.shape()[1];
    let w = weights.data();
    let mut gi = vec![0.0; b * n];
    for (s, g_row) in grad_out.data().chunks(m).enumerate() {
        let dst = &mut gi[s * n..(s + 1) * n];
        for (j, &g) in g_row.iter().enumerate() {
            for (d, wi) in dst.iter_mut().zip(&w[j * n..(j + 1) * n]) {
                *d += g * wi;
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, n], gi))
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, n, m) = check(input, weights, bias)?;
    if grad_out.shape() != [b, m] {
        return Err(Error::mismatch(
            "dense_backward",
            "grad_out",
            format!("[{b}, {m}]"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let gi = dense_backward_input(weights, grad_out)?;
    let x = input.data();
    let go = grad_out.data();
    let mut gw = vec![0.0; m * n];
    let mut gb = vec![0.0; m];
    for s in 0..b {
        let xr = &x[s * n..(s + 1) * n];
        for j in 0..m {
            let g = go[s * m + j];
            gb[j] += g;
            for (d, xi) in gw[j * n..(j + 1) * n].iter_mut().zip(xr) {
                *d += g * xi;
            }
        }
    }
    Ok((
        gi,
        Tensor::from_parts(vec![m, n], gw),
        Tensor::from_parts(vec![m], gb),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0]).unwrap();
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(dense_forward(&x, &w, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn zero_input_broadcasts_bias() {
        let b = Tensor::new(vec![2], vec![0.25, -3.0]).unwrap();
        let y = dense_forward(&Tensor::zeros(&[3, 4]), &Tensor::full(&[2, 4], 7.0), &b).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn inner_dimension_mismatch() {
        let err = dense_forward(&Tensor::zeros(&[1, 4]), &Tensor::zeros(&[2, 5]), &Tensor::zeros(&[2])).unwrap_err();
        assert!(err.to_string().contains("feature axis"));
    }
}
