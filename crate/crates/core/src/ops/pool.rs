//! 3D max pooling with deterministic argmax bookkeeping.

use crate::error::{Error, Result};
use crate::ops::conv::output_extent;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolParams {
    pub window: [usize; 3],
    pub stride: [usize; 3],
}

impl PoolParams {
    pub fn new(window: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        if window.contains(&0) || stride.contains(&0) {
            return Err(Error::InvalidParameter(
                "maxpool3d window and stride must be positive".into(),
            ));
        }
        Ok(PoolParams { window, stride })
    }

    pub fn cube(window: usize, stride: usize) -> Result<Self> {
        Self::new([window; 3], [stride; 3])
    }

    pub fn output_extents(&self, spatial: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for axis in 0..3 {
            out[axis] = output_extent(spatial[axis], self.window[axis], self.stride[axis], 0)
                .ok_or_else(|| {
                    Error::mismatch(
                        "maxpool3d",
                        format!("spatial axis {axis}"),
                        format!(">= window {}", self.window[axis]),
                        spatial[axis],
                    )
                })?;
        }
        Ok(out)
    }
}

/// Linear input index of the selected voxel, one per output voxel.
pub type Argmax = Vec<usize>;

/// Window maxima plus argmax indices; ties go to the smallest linear index.
pub fn maxpool3d_forward(input: &Tensor, p: &PoolParams) -> Result<(Tensor, Argmax)> {
    if input.rank() != 5 {
        return Err(Error::shape(
            "maxpool3d",
            format!("input must be rank 5 (b,c,d,h,w), got {:?}", input.shape()),
        ));
    }
    input.check_finite("maxpool3d input")?;
    let s = input.shape();
    let planes = s[0] * s[1];
    let [d, h, w] = [s[2], s[3], s[4]];
    let [od, oh, ow] = p.output_extents([d, h, w])?;
    let [wd, wh, ww] = p.window;
    let x = input.data();
    let mut out = Vec::with_capacity(planes * od * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..planes {
        let base = plane * d * h * w;
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (z0, y0, x0) = (oz * p.stride[0], oy * p.stride[1], ox * p.stride[2]);
                    let mut best = base + (z0 * h + y0) * w + x0;
                    for z in z0..z0 + wd {
                        for y in y0..y0 + wh {
                            for xx in x0..x0 + ww {
                                let i = base + (z * h + y) * w + xx;
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_parts(vec![s[0], s[1], od, oh, ow], out), argmax))
}

/// Routes each output gradient to its argmax position, accumulating overlaps.
pub fn maxpool3d_backward(argmax: &[usize], grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::mismatch(
            "maxpool3d_backward",
            "argmax length",
            grad_out.len(),
            argmax.len(),
        ));
    }
    let mut gi = Tensor::zeros(input_shape);
    let n = gi.len();
    let dst = gi.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        if idx >= n {
            return Err(Error::IndexOutOfRange {
                context: "maxpool3d_backward argmax",
                index: idx,
                len: n,
            });
        }
        dst[idx] += g;
    }
    Ok(gi)
}
