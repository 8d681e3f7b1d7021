//! Same-padded 2-D cross-correlation via im2col and a blocked GEMM.

use super::{NumericsError, Tensor};

/// `c[m×n] = op(a)[m×k] · op(b)[k×n] + beta·c`, all row-major.
///
/// With `a_t` the slice `a` holds a `k×m` matrix and its transpose is used;
/// likewise `b_t` for a stored `n×k` matrix.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index reachable through the
    // given strides lies inside the three slices, and `c` does not alias.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(input: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let p = k / 2;
    let hw = h * w;
    let mut cols = vec![0.0; c * k * k * hw];
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dst = &mut cols[row..row + hw];
                let dx = kx as isize - p as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = sy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[y * w + x0..y * w + x1]
                        .copy_from_slice(&plane[src_row + sx0..src_row + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let p = k / 2;
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let src = &cols[row..row + hw];
                let dx = kx as isize - p as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_row = sy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    for (d, s) in plane[dst_row + sx0..dst_row + sx0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&src[y * w + x0..y * w + x1])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

fn check_conv(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
) -> Result<(usize, usize, usize, usize, usize), NumericsError> {
    let (c, h, w) = input.chw("conv2d")?;
    let [o, kc, kh, kw] = kernel.shape()[..] else {
        return Err(NumericsError::Dimension {
            op: "conv2d",
            detail: format!("kernel must be [C_out, C_in, k, k], got {:?}", kernel.shape()),
        });
    };
    if kc != c {
        return Err(NumericsError::Dimension {
            op: "conv2d",
            detail: format!("input channels (axis 0) = {c} but kernel expects {kc} (axis 1)"),
        });
    }
    if kh != kw || kh % 2 == 0 {
        return Err(NumericsError::Dimension {
            op: "conv2d",
            detail: format!("kernel spatial axes (2, 3) must be equal and odd, got {kh}x{kw}"),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(NumericsError::Dimension {
                op: "conv2d",
                detail: format!("bias must be [{o}] (kernel axis 0), got {:?}", b.shape()),
            });
        }
    }
    Ok((c, h, w, o, kh))
}

/// Cross-correlates `input [C_in, H, W]` with `kernel [C_out, C_in, k, k]`
/// using zero padding of `k / 2`, producing `[C_out, H, W]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, NumericsError> {
    let (c, h, w, o, k) = check_conv(input, kernel, bias)?;
    let hw = h * w;
    let mut out = vec![0.0; o * hw];
    if let Some(b) = bias {
        for (oi, &bv) in b.data().iter().enumerate() {
            out[oi * hw..(oi + 1) * hw].fill(bv);
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    if k == 1 {
        gemm(o, c, hw, kernel.data(), false, input.data(), false, beta, &mut out);
    } else {
        let cols = im2col(input.data(), c, h, w, k);
        gemm(o, c * k * k, hw, kernel.data(), false, &cols, false, beta, &mut out);
    }
    Ok(Tensor::from_parts(vec![o, h, w], out))
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out [C_out, H, W]`.
pub fn conv2d_backward(input: &Tensor, kernel: &Tensor, grad_out: &Tensor) -> Result<ConvGrads, NumericsError> {
    let (c, h, w, o, k) = check_conv(input, kernel, None)?;
    if grad_out.shape() != [o, h, w] {
        return Err(NumericsError::Dimension {
            op: "conv2d_backward",
            detail: format!("grad_out must be [{o}, {h}, {w}], got {:?}", grad_out.shape()),
        });
    }
    let hw = h * w;
    let ckk = c * k * k;
    let g = grad_out.data();
    let bias: Vec<f64> = (0..o).map(|oi| g[oi * hw..(oi + 1) * hw].iter().sum()).collect();
    let mut gk = vec![0.0; o * ckk];
    let mut gcols = vec![0.0; ckk * hw];
    if k == 1 {
        gemm(o, hw, c, g, false, input.data(), true, 0.0, &mut gk);
        gemm(c, o, hw, kernel.data(), true, g, false, 0.0, &mut gcols);
        return Ok(ConvGrads {
            input: Tensor::from_parts(vec![c, h, w], gcols),
            kernel: Tensor::from_parts(kernel.shape().to_vec(), gk),
            bias: Tensor::from_parts(vec![o], bias),
        });
    }
    let cols = im2col(input.data(), c, h, w, k);
    gemm(o, hw, ckk, g, false, &cols, true, 0.0, &mut gk);
    gemm(ckk, o, hw, kernel.data(), true, g, false, 0.0, &mut gcols);
    let gin = col2im(&gcols, c, h, w, k);
    Ok(ConvGrads {
        input: Tensor::from_parts(vec![c, h, w], gin),
        kernel: Tensor::from_parts(kernel.shape().to_vec(), gk),
        bias: Tensor::from_parts(vec![o], bias),
    })
}

#[cfg(test)]
pub(crate) mod reference {
    use super::*;

    /// Direct nested-loop cross-correlation, used as the oracle for
    /// [`conv2d`].
    pub fn conv2d_naive(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Tensor {
        let (c, h, w) = input.chw("naive").unwrap();
        let (o, k) = (kernel.dim(0), kernel.dim(2));
        let p = (k / 2) as isize;
        let mut out = vec![0.0; o * h * w];
        for oi in 0..o {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias.map_or(0.0, |b| b.data()[oi]);
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - p;
                                let sx = x as isize + kx as isize - p;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += kernel.data()[((oi * c + ci) * k + ky) * k + kx]
                                    * input.data()[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(oi * h + y) * w + x] = acc;
                }
            }
        }
        Tensor::from_parts(vec![o, h, w], out)
    }
}

#[cfg(test)]
mod tests {
    use super::reference::conv2d_naive;
    use super::*;
    use crate::numerics::InitSpec;
    use crate::rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        InitSpec::UniformFanIn { fan_in: 1 }.sample(shape, &mut rng::stream(seed, &[]))
    }

    #[test]
    fn identity_1x1() {
        let x = random(&[3, 4, 5], 1);
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        for i in 0..3 {
            k.data_mut()[i * 3 + i] = 1.0;
        }
        let y = conv2d(&x, &k, Some(&Tensor::zeros(&[3]))).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_interior_sums_to_nine() {
        let x = Tensor::filled(&[1, 5, 5], 1.0);
        let k = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, None).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 9.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn delta_input_reproduces_unflipped_kernel() {
        let mut x = Tensor::zeros(&[1, 7, 7]);
        x.data_mut()[3 * 7 + 3] = 1.0;
        let k = random(&[2, 1, 3, 3], 5);
        let y = conv2d(&x, &k, None).unwrap();
        // out[y, x] = sum k[ky,kx] * in[y+ky-1, x+kx-1]; the delta at (3,3)
        // lands at kernel tap (3-y+1, 3-x+1), i.e. the kernel appears
        // reversed around the impulse.
        for o in 0..2 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let oy = 3 + 1 - ky;
                    let ox = 3 + 1 - kx;
                    assert_eq!(y.data()[(o * 7 + oy) * 7 + ox], k.data()[(o * 3 + ky) * 3 + kx]);
                }
            }
        }
        assert!(y.max_abs_diff(&conv2d_naive(&x, &k, None)) == 0.0);
    }

    #[test]
    fn matches_naive_oracle() {
        for (seed, k) in [(1, 1), (2, 3), (3, 5)] {
            let x = random(&[3, 6, 9], seed);
            let ker = random(&[4, 3, k, k], seed + 10);
            let b = random(&[4], seed + 20);
            let fast = conv2d(&x, &ker, Some(&b)).unwrap();
            let slow = conv2d_naive(&x, &ker, Some(&b));
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_axes() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let e = conv2d(&x, &k, None).unwrap_err().to_string();
        assert!(e.contains("axis 0") && e.contains("axis 1"), "{e}");
        let k = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(conv2d(&x, &k, None).is_err());
    }

    #[test]
    fn backward_matches_adjoint() {
        // <conv(x), g> is bilinear; check gradients by the adjoint identity
        // against the naive forward.
        let x = random(&[2, 5, 6], 7);
        let k = random(&[3, 2, 3, 3], 8);
        let g = random(&[3, 5, 6], 9);
        let grads = conv2d_backward(&x, &k, &g).unwrap();
        let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
        let y = conv2d_naive(&x, &k, None);
        // <K*x, g> = <x, grad_input> = <K, grad_kernel>
        assert!((dot(&y, &g) - dot(&x, &grads.input)).abs() < 1e-10);
        assert!((dot(&y, &g) - dot(&k, &grads.kernel)).abs() < 1e-10);
        assert!((grads.bias.data()[1] - g.channel(1).iter().sum::<f64>()).abs() < 1e-12);
    }
}
