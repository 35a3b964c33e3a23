//! Direct stride-1, same-padding convolution kernels.
//!
//! All loops run sequentially with a fixed accumulation order (channel, then
//! kernel row, then kernel column), so repeated runs are bit-identical.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub pad: usize,
}

pub fn validate(input: Shape, weight: Shape, bias: Shape) -> Result<ConvDims> {
    if weight.height != weight.width {
        return Err(Error::DimMismatch {
            op: "conv2d",
            dim: "kernel height/width",
            left: weight.height,
            right: weight.width,
        });
    }
    if weight.height.is_multiple_of(2) {
        return Err(Error::KernelSize { got: weight.height });
    }
    if input.channels != weight.channels {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            expected: weight.channels,
            got: input.channels,
        });
    }
    if bias.batch != 1 || bias.height != 1 || bias.width != 1 || bias.channels != weight.batch {
        return Err(Error::DimMismatch {
            op: "conv2d",
            dim: "bias channels",
            left: bias.channels,
            right: weight.batch,
        });
    }
    Ok(ConvDims {
        batch: input.batch,
        in_channels: input.channels,
        out_channels: weight.batch,
        height: input.height,
        width: input.width,
        kernel: weight.height,
        pad: (weight.height - 1) / 2,
    })
}

/// dst[y][x] += w * src[y + sy][x + sx] over the in-range window.
#[inline]
fn axpy_shifted<T: Scalar>(
    dst: &mut [T],
    src: &[T],
    h: usize,
    w: usize,
    weight: T,
    sy: isize,
    sx: isize,
) {
    let y0 = (-sy).max(0) as usize;
    let y1 = (h as isize).min(h as isize - sy).max(0) as usize;
    let x0 = (-sx).max(0) as usize;
    let x1 = (w as isize).min(w as isize - sx).max(0) as usize;
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy_row = (y as isize + sy) as usize * w;
        let dst_row = &mut dst[y * w + x0..y * w + x1];
        let src_row = &src[(sy_row as isize + x0 as isize + sx) as usize
            ..(sy_row as isize + x1 as isize + sx) as usize];
        for (d, &s) in dst_row.iter_mut().zip(src_row) {
            *d += weight * s;
        }
    }
}

/// sum over y,x of a[y][x] * b[y + sy][x + sx] over the in-range window.
#[inline]
fn dot_shifted<T: Scalar>(a: &[T], b: &[T], h: usize, w: usize, sy: isize, sx: isize) -> T {
    let y0 = (-sy).max(0) as usize;
    let y1 = (h as isize).min(h as isize - sy).max(0) as usize;
    let x0 = (-sx).max(0) as usize;
    let x1 = (w as isize).min(w as isize - sx).max(0) as usize;
    let mut acc = T::zero();
    if x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let b_row = (y as isize + sy) as usize * w;
        let a_row = &a[y * w + x0..y * w + x1];
        let b_row = &b[(b_row as isize + x0 as isize + sx) as usize
            ..(b_row as isize + x1 as isize + sx) as usize];
        for (&av, &bv) in a_row.iter().zip(b_row) {
            acc += av * bv;
        }
    }
    acc
}

pub fn forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let d = validate(input.shape(), weight.shape(), bias.shape())?;
    let out_shape = input.shape().with_channels(d.out_channels);
    let plane = d.height * d.width;
    let mut out = vec![T::zero(); out_shape.len()];
    let in_data = input.data();
    let w_data = weight.data();
    let b_data = bias.data();
    for b in 0..d.batch {
        for oc in 0..d.out_channels {
            let dst = &mut out[(b * d.out_channels + oc) * plane..][..plane];
            dst.fill(b_data[oc]);
            for ic in 0..d.in_channels {
                let src = &in_data[(b * d.in_channels + ic) * plane..][..plane];
                for dy in 0..d.kernel {
                    for dx in 0..d.kernel {
                        let wv = w_data[((oc * d.in_channels + ic) * d.kernel + dy) * d.kernel + dx];
                        let sy = dy as isize - d.pad as isize;
                        let sx = dx as isize - d.pad as isize;
                        axpy_shifted(dst, src, d.height, d.width, wv, sy, sx);
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn grad_input<T: Scalar>(gout: &Tensor<T>, weight: &Tensor<T>, input_shape: Shape) -> Tensor<T> {
    let d = ConvDims {
        batch: input_shape.batch,
        in_channels: input_shape.channels,
        out_channels: weight.shape().batch,
        height: input_shape.height,
        width: input_shape.width,
        kernel: weight.shape().height,
        pad: (weight.shape().height - 1) / 2,
    };
    let plane = d.height * d.width;
    let mut gin = vec![T::zero(); input_shape.len()];
    let go_data = gout.data();
    let w_data = weight.data();
    for b in 0..d.batch {
        for ic in 0..d.in_channels {
            let dst = &mut gin[(b * d.in_channels + ic) * plane..][..plane];
            for oc in 0..d.out_channels {
                let src = &go_data[(b * d.out_channels + oc) * plane..][..plane];
                for dy in 0..d.kernel {
                    for dx in 0..d.kernel {
                        let wv = w_data[((oc * d.in_channels + ic) * d.kernel + dy) * d.kernel + dx];
                        let sy = d.pad as isize - dy as isize;
                        let sx = d.pad as isize - dx as isize;
                        axpy_shifted(dst, src, d.height, d.width, wv, sy, sx);
                    }
                }
            }
        }
    }
    Tensor::new(input_shape, gin).expect("shape volume matches")
}

pub fn grad_weight<T: Scalar>(gout: &Tensor<T>, input: &Tensor<T>, weight_shape: Shape) -> Tensor<T> {
    let d = ConvDims {
        batch: input.shape().batch,
        in_channels: input.shape().channels,
        out_channels: weight_shape.batch,
        height: input.shape().height,
        width: input.shape().width,
        kernel: weight_shape.height,
        pad: (weight_shape.height - 1) / 2,
    };
    let plane = d.height * d.width;
    let mut gw = vec![T::zero(); weight_shape.len()];
    let go_data = gout.data();
    let in_data = input.data();
    for oc in 0..d.out_channels {
        for ic in 0..d.in_channels {
            for dy in 0..d.kernel {
                for dx in 0..d.kernel {
                    let sy = dy as isize - d.pad as isize;
                    let sx = dx as isize - d.pad as isize;
                    let mut acc = T::zero();
                    for b in 0..d.batch {
                        let go = &go_data[(b * d.out_channels + oc) * plane..][..plane];
                        let inp = &in_data[(b * d.in_channels + ic) * plane..][..plane];
                        acc += dot_shifted(go, inp, d.height, d.width, sy, sx);
                    }
                    gw[((oc * d.in_channels + ic) * d.kernel + dy) * d.kernel + dx] = acc;
                }
            }
        }
    }
    Tensor::new(weight_shape, gw).expect("shape volume matches")
}

pub fn grad_bias<T: Scalar>(gout: &Tensor<T>) -> Tensor<T> {
    let s = gout.shape();
    let plane = s.plane();
    let data = gout.data();
    let mut gb = vec![T::zero(); s.channels];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = &data[(b * s.channels + c) * plane..][..plane];
            let mut acc = T::zero();
            for &v in src {
                acc += v;
            }
            gb[c] += acc;
        }
    }
    Tensor::new(Shape::new(1, s.channels, 1, 1), gb).expect("shape volume matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: per-output quadruple loop with explicit zero padding.
    pub fn conv2d_naive(input: &Tensor<f64>, weight: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
        let is = input.shape();
        let ws = weight.shape();
        let pad = (ws.height - 1) / 2;
        let out_shape = is.with_channels(ws.batch);
        Tensor::from_fn(out_shape, |idx| {
            let x = idx % is.width;
            let y = (idx / is.width) % is.height;
            let oc = (idx / is.plane()) % ws.batch;
            let b = idx / (is.plane() * ws.batch);
            let mut acc = bias.get(0, oc, 0, 0);
            for ic in 0..is.channels {
                for dy in 0..ws.height {
                    for dx in 0..ws.width {
                        let iy = y as isize + dy as isize - pad as isize;
                        let ix = x as isize + dx as isize - pad as isize;
                        if iy >= 0 && iy < is.height as isize && ix >= 0 && ix < is.width as isize {
                            acc += input.get(b, ic, iy as usize, ix as usize)
                                * weight.get(oc, ic, dy, dx);
                        }
                    }
                }
            }
            acc
        })
    }

    fn rand_tensor(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = crate::rng::stream(seed, "conv-test");
        Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng)
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let input = rand_tensor(Shape::new(1, 1, 4, 4), 1);
        let weight = Tensor::new(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap();
        let bias = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let out = forward(&input, &weight, &bias).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn box_kernel_preserves_constant_interior() {
        let input = Tensor::<f64>::full(Shape::new(1, 1, 6, 6), 0.7);
        let weight = Tensor::full(Shape::new(1, 1, 3, 3), 1.0 / 9.0);
        let bias = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let out = forward(&input, &weight, &bias).unwrap();
        for y in 1..5 {
            for x in 1..5 {
                assert!((out.get(0, 0, y, x) - 0.7).abs() < 1e-12);
            }
        }
        // zero padding makes border averages smaller
        assert!(out.get(0, 0, 0, 0) < 0.7);
    }

    #[test]
    fn matches_naive_oracle() {
        let input = rand_tensor(Shape::new(1, 2, 5, 5), 2);
        let weight = rand_tensor(Shape::new(3, 2, 3, 3), 3);
        let bias = rand_tensor(Shape::new(1, 3, 1, 1), 4);
        let fast = forward(&input, &weight, &bias).unwrap();
        let slow = conv2d_naive(&input, &weight, &bias);
        assert!(fast.approx_eq(&slow, 1e-6), "max diff {}", fast.max_abs_diff(&slow));
    }

    #[test]
    fn rejects_even_kernel_and_channel_mismatch() {
        let input = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4));
        let bias = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let even = Tensor::zeros(Shape::new(1, 2, 2, 2));
        assert!(matches!(
            forward(&input, &even, &bias).unwrap_err(),
            Error::KernelSize { got: 2 }
        ));
        let wrong_ch = Tensor::zeros(Shape::new(1, 3, 3, 3));
        assert!(matches!(
            forward(&input, &wrong_ch, &bias).unwrap_err(),
            Error::ChannelMismatch { expected: 3, got: 2, .. }
        ));
    }

    #[test]
    fn linearity_for_bias_free_kernels() {
        let x = rand_tensor(Shape::new(1, 2, 5, 5), 5);
        let y = rand_tensor(Shape::new(1, 2, 5, 5), 6);
        let weight = rand_tensor(Shape::new(2, 2, 3, 3), 7);
        let bias = Tensor::zeros(Shape::new(1, 2, 1, 1));
        let (a, b) = (1.75, -0.5);
        let combined = x.zip_map(&y, |xv, yv| a * xv + b * yv);
        let lhs = forward(&combined, &weight, &bias).unwrap();
        let fx = forward(&x, &weight, &bias).unwrap();
        let fy = forward(&y, &weight, &bias).unwrap();
        let rhs = fx.zip_map(&fy, |xv, yv| a * xv + b * yv);
        assert!(lhs.approx_eq(&rhs, 1e-6));
    }
}
