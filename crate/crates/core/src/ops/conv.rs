//! Direct 3D convolution (cross-correlation) with zero padding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output extent along one axis, `(in + 2·pad − k) / stride + 1`, if it is positive.
pub fn output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Kernels, bias and geometry of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `(out_channels, in_channels, kd, kh, kw)`
    pub kernels: Tensor,
    /// `(out_channels)`
    pub bias: Tensor,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvParams {
    pub fn new(kernels: Tensor, bias: Tensor, stride: [usize; 3], pad: [usize; 3]) -> Result<Self> {
        if kernels.rank() != 5 {
            return Err(Error::shape(
                "conv3d",
                format!("kernels must be rank 5, got {:?}", kernels.shape()),
            ));
        }
        if bias.shape() != [kernels.shape()[0]] {
            return Err(Error::mismatch(
                "conv3d",
                "bias",
                format!("[{}]", kernels.shape()[0]),
                format!("{:?}", bias.shape()),
            ));
        }
        if stride.contains(&0) {
            return Err(Error::InvalidParameter("conv3d stride must be positive".into()));
        }
        Ok(ConvParams {
            kernels,
            bias,
            stride,
            pad,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_extent(&self) -> [usize; 3] {
        let s = self.kernels.shape();
        [s[2], s[3], s[4]]
    }

    /// Output spatial extents for the given input spatial extents.
    pub fn output_extents(&self, spatial: [usize; 3]) -> Result<[usize; 3]> {
        let k = self.kernel_extent();
        let mut out = [0; 3];
        for axis in 0..3 {
            out[axis] = output_extent(spatial[axis], k[axis], self.stride[axis], self.pad[axis])
                .ok_or_else(|| {
                    Error::mismatch(
                        "conv3d",
                        format!("spatial axis {axis}"),
                        format!(">= {} after padding", k[axis]),
                        spatial[axis] + 2 * self.pad[axis],
                    )
                })?;
        }
        Ok(out)
    }

    fn check_input(&self, input: &Tensor) -> Result<Geometry> {
        if input.rank() != 5 {
            return Err(Error::shape(
                "conv3d",
                format!("input must be rank 5 (b,c,d,h,w), got {:?}", input.shape()),
            ));
        }
        let s = input.shape();
        if s[1] != self.in_channels() {
            return Err(Error::mismatch("conv3d", "channel axis", self.in_channels(), s[1]));
        }
        let spatial = [s[2], s[3], s[4]];
        let out = self.output_extents(spatial)?;
        Ok(Geometry {
            batch: s[0],
            in_channels: s[1],
            out_channels: self.out_channels(),
            input: spatial,
            kernel: self.kernel_extent(),
            output: out,
            stride: self.stride,
            pad: self.pad,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Geometry {
    pub(crate) fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    pub(crate) fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    pub(crate) fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.out_channels,
            self.output[0],
            self.output[1],
            self.output[2],
        ]
    }

    /// Input coordinate hit by kernel tap `k` of output position `o`, if inside the volume.
    #[inline]
    fn tap(&self, axis: usize, o: usize, k: usize) -> Option<usize> {
        let pos = (o * self.stride[axis] + k) as isize - self.pad[axis] as isize;
        if pos < 0 || pos as usize >= self.input[axis] {
            None
        } else {
            Some(pos as usize)
        }
    }

    /// Visits every (output offset, input offset, kernel offset) triple of one
    /// (output channel, input channel) plane pair, offsets relative to their planes.
    #[inline]
    pub(crate) fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [_, ih, iw] = self.input;
        let [_, oh, ow] = self.output;
        let [kd, kh, kw] = self.kernel;
        for oz in 0..self.output[0] {
            for dz in 0..kd {
                let Some(z) = self.tap(0, oz, dz) else { continue };
                for oy in 0..oh {
                    for dy in 0..kh {
                        let Some(y) = self.tap(1, oy, dy) else { continue };
                        for ox in 0..ow {
                            let o = (oz * oh + oy) * ow + ox;
                            for dx in 0..kw {
                                let Some(x) = self.tap(2, ox, dx) else { continue };
                                f(o, (z * ih + y) * iw + x, (dz * kh + dy) * kw + dx);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn geometry(input: &Tensor, p: &ConvParams) -> Result<Geometry> {
    p.check_input(input)
}

/// Each output voxel is `bias[oc]` plus the receptive-field sum of input × kernel.
pub fn conv3d_forward(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let g = p.check_input(input)?;
    input.check_finite("conv3d input")?;
    let (in_vol, out_vol, k_vol) = (g.in_volume(), g.out_volume(), g.kernel_volume());
    let x = input.data();
    let w = p.kernels.data();
    let b = p.bias.data();
    let mut out = vec![0.0; g.batch * g.out_channels * out_vol];
    out.par_chunks_mut(out_vol)
        .enumerate()
        .for_each(|(plane, dst)| {
            let (n, oc) = (plane / g.out_channels, plane % g.out_channels);
            dst.fill(b[oc]);
            for ic in 0..g.in_channels {
                let src = &x[(n * g.in_channels + ic) * in_vol..][..in_vol];
                let ker = &w[(oc * g.in_channels + ic) * k_vol..][..k_vol];
                g.for_each_tap(|o, i, k| dst[o] += src[i] * ker[k]);
            }
        });
    let t = Tensor::from_parts(g.output_shape(), out);
    t.check_finite("conv3d output")?;
    Ok(t)
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

fn check_grad_out(g: &Geometry, grad_out: &Tensor) -> Result<()> {
    let expected = g.output_shape();
    if grad_out.shape() != expected.as_slice() {
        return Err(Error::mismatch(
            "conv3d_backward",
            "grad_out",
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    Ok(())
}

/// Vector-Jacobian product with respect to the input only.
pub fn conv3d_backward_input(input: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<Tensor> {
    let g = p.check_input(input)?;
    check_grad_out(&g, grad_out)?;
    let (in_vol, out_vol, k_vol) = (g.in_volume(), g.out_volume(), g.kernel_volume());
    let go = grad_out.data();
    let w = p.kernels.data();
    let mut gi = vec![0.0; input.len()];
    gi.par_chunks_mut(in_vol)
        .enumerate()
        .for_each(|(plane, dst)| {
            let (n, ic) = (plane / g.in_channels, plane % g.in_channels);
            for oc in 0..g.out_channels {
                let src = &go[(n * g.out_channels + oc) * out_vol..][..out_vol];
                let ker = &w[(oc * g.in_channels + ic) * k_vol..][..k_vol];
                g.for_each_tap(|o, i, k| dst[i] += src[o] * ker[k]);
            }
        });
    Ok(Tensor::from_parts(input.shape().to_vec(), gi))
}

/// Vector-Jacobian products with respect to kernels and bias.
pub fn conv3d_backward_params(
    input: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let g = p.check_input(input)?;
    check_grad_out(&g, grad_out)?;
    let (in_vol, out_vol, k_vol) = (g.in_volume(), g.out_volume(), g.kernel_volume());
    let x = input.data();
    let go = grad_out.data();
    let mut gw = vec![0.0; p.kernels.len()];
    gw.par_chunks_mut(g.in_channels * k_vol)
        .enumerate()
        .for_each(|(oc, dst)| {
            for n in 0..g.batch {
                let src_out = &go[(n * g.out_channels + oc) * out_vol..][..out_vol];
                for ic in 0..g.in_channels {
                    let src_in = &x[(n * g.in_channels + ic) * in_vol..][..in_vol];
                    let ker = &mut dst[ic * k_vol..][..k_vol];
                    g.for_each_tap(|o, i, k| ker[k] += src_out[o] * src_in[i]);
                }
            }
        });
    let mut gb = vec![0.0; g.out_channels];
    for n in 0..g.batch {
        for (oc, acc) in gb.iter_mut().enumerate() {
            *acc += go[(n * g.out_channels + oc) * out_vol..][..out_vol]
                .iter()
                .sum::<f64>();
        }
    }
    Ok((
        Tensor::from_parts(p.kernels.shape().to_vec(), gw),
        Tensor::from_parts(vec![g.out_channels], gb),
    ))
}

/// Exact vector-Jacobian products of [`conv3d_forward`].
pub fn conv3d_backward(input: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let gi = conv3d_backward_input(input, p, grad_out)?;
    let (kernels, bias) = conv3d_backward_params(input, p, grad_out)?;
    Ok(ConvGrads {
        input: gi,
        kernels,
        bias,
    })
}
