//! Elementwise activations, pooling, resampling and spatial softmax.

use super::{NumericsError, Tensor};

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_t(t: &Tensor) -> Tensor {
    t.map(sigmoid)
}

pub fn tanh_t(t: &Tensor) -> Tensor {
    t.map(f64::tanh)
}

pub fn relu_t(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

/// Gradient through a ReLU given its *output*.
pub fn relu_backward(out: &Tensor, grad: &Tensor) -> Tensor {
    out.zip_map(grad, |o, g| if o > 0.0 { g } else { 0.0 })
}

/// Gradient through a sigmoid given its output.
pub fn sigmoid_backward(out: &Tensor, grad: &Tensor) -> Tensor {
    out.zip_map(grad, |s, g| g * s * (1.0 - s))
}

/// Gradient through a tanh given its output.
pub fn tanh_backward(out: &Tensor, grad: &Tensor) -> Tensor {
    out.zip_map(grad, |t, g| g * (1.0 - t * t))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    a.zip_map(b, |x, y| x * y)
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    a.zip_map(b, |x, y| x + y)
}

/// Stacks `[C_i, H, W]` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor, NumericsError> {
    let first = parts.first().ok_or(NumericsError::Arity {
        op: "concat_channels",
        expected: "at least 1 input".into(),
        got: 0,
    })?;
    let (_, h, w) = first.chw("concat_channels")?;
    let mut c_total = 0;
    let mut data = Vec::new();
    for p in parts {
        let (c, ph, pw) = p.chw("concat_channels")?;
        if (ph, pw) != (h, w) {
            return Err(NumericsError::Dimension {
                op: "concat_channels",
                detail: format!("spatial axes (1, 2) differ: {h}x{w} vs {ph}x{pw}"),
            });
        }
        c_total += c;
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::from_parts(vec![c_total, h, w], data))
}

/// Splits a `[C, H, W]` tensor into consecutive channel groups.
pub fn split_channels(t: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>, NumericsError> {
    let (c, h, w) = t.chw("split_channels")?;
    if sizes.iter().sum::<usize>() != c {
        return Err(NumericsError::Dimension {
            op: "split_channels",
            detail: format!("group sizes {sizes:?} do not sum to {c} channels"),
        });
    }
    let plane = h * w;
    let mut off = 0;
    Ok(sizes
        .iter()
        .map(|&s| {
            let part = t.data()[off * plane..(off + s) * plane].to_vec();
            off += s;
            Tensor::from_parts(vec![s, h, w], part)
        })
        .collect())
}

/// Averages non-overlapping `factor × factor` windows.
pub fn avg_pool(t: &Tensor, factor: usize) -> Result<Tensor, NumericsError> {
    let (c, h, w) = t.chw("avg_pool")?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(NumericsError::Dimension {
            op: "avg_pool",
            detail: format!("{h}x{w} is not divisible by factor {factor}"),
        });
    }
    if factor == 1 {
        return Ok(t.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        let src = t.channel(ci);
        let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for y in 0..h {
            let orow = (y / factor) * ow;
            for x in 0..w {
                dst[orow + x / factor] += src[y * w + x];
            }
        }
        for v in dst.iter_mut() {
            *v *= norm;
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

pub fn avg_pool_backward(grad: &Tensor, factor: usize) -> Result<Tensor, NumericsError> {
    let (c, oh, ow) = grad.chw("avg_pool_backward")?;
    let (h, w) = (oh * factor, ow * factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        let g = grad.channel(ci);
        for y in 0..h {
            for x in 0..w {
                out[(ci * h + y) * w + x] = g[(y / factor) * ow + x / factor] * norm;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

/// Linear interpolation taps for one axis with half-pixel centers.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|j| {
            let src = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of `[C, h, w]` to `[C, out_h, out_w]` (half-pixel
/// centers, edge clamped). The mapping commutes with horizontal mirroring.
pub fn upsample_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, NumericsError> {
    let (c, h, w) = t.chw("upsample_bilinear")?;
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = vec![0.0; c * out_h * out_w];
    let mut rowbuf = vec![0.0; out_w];
    for ci in 0..c {
        let src = t.channel(ci);
        // horizontal pass per source row, cached for the two rows we blend
        let mut horiz = vec![0.0; h * out_w];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (j, &(i0, i1, f)) in tx.iter().enumerate() {
                rowbuf[j] = row[i0] * (1.0 - f) + row[i1] * f;
            }
            horiz[y * out_w..(y + 1) * out_w].copy_from_slice(&rowbuf);
        }
        let dst = &mut out[ci * out_h * out_w..(ci + 1) * out_h * out_w];
        for (yo, &(i0, i1, f)) in ty.iter().enumerate() {
            let (r0, r1) = (&horiz[i0 * out_w..(i0 + 1) * out_w], &horiz[i1 * out_w..(i1 + 1) * out_w]);
            for ((d, a), b) in dst[yo * out_w..(yo + 1) * out_w].iter_mut().zip(r0).zip(r1) {
                *d = a * (1.0 - f) + b * f;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

/// Adjoint of [`upsample_bilinear`].
pub fn upsample_bilinear_backward(grad: &Tensor, in_h: usize, in_w: usize) -> Result<Tensor, NumericsError> {
    let (c, out_h, out_w) = grad.chw("upsample_bilinear_backward")?;
    let ty = taps(in_h, out_h);
    let tx = taps(in_w, out_w);
    let mut out = vec![0.0; c * in_h * in_w];
    for ci in 0..c {
        let g = grad.channel(ci);
        let mut horiz = vec![0.0; in_h * out_w];
        for (yo, &(i0, i1, f)) in ty.iter().enumerate() {
            let grow = &g[yo * out_w..(yo + 1) * out_w];
            for (j, &gv) in grow.iter().enumerate() {
                horiz[i0 * out_w + j] += gv * (1.0 - f);
                horiz[i1 * out_w + j] += gv * f;
            }
        }
        let dst = &mut out[ci * in_h * in_w..(ci + 1) * in_h * in_w];
        for y in 0..in_h {
            let hrow = &horiz[y * out_w..(y + 1) * out_w];
            for (j, &(i0, i1, f)) in tx.iter().enumerate() {
                dst[y * in_w + i0] += hrow[j] * (1.0 - f);
                dst[y * in_w + i1] += hrow[j] * f;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, in_h, in_w], out))
}

/// Softmax over the spatial axes of each channel of `[C, H, W]`.
pub fn spatial_softmax(t: &Tensor) -> Result<Tensor, NumericsError> {
    let (c, _, _) = t.chw("spatial_softmax")?;
    let mut out = t.clone();
    for ci in 0..c {
        let plane = out.channel_mut(ci);
        let m = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in plane.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        let inv = 1.0 / s;
        for v in plane.iter_mut() {
            *v *= inv;
        }
    }
    Ok(out)
}

/// Gradient through [`spatial_softmax`] given its output.
pub fn spatial_softmax_backward(out: &Tensor, grad: &Tensor) -> Result<Tensor, NumericsError> {
    let (c, _, _) = out.chw("spatial_softmax_backward")?;
    let mut res = Tensor::zeros(out.shape());
    for ci in 0..c {
        let a = out.channel(ci);
        let g = grad.channel(ci);
        let dot: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
        for ((r, &av), &gv) in res.channel_mut(ci).iter_mut().zip(a).zip(g) {
            *r = av * (gv - dot);
        }
    }
    Ok(res)
}

/// Log-sum-exp of a slice, stable for large magnitudes.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::InitSpec;
    use crate::rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        InitSpec::UniformFanIn { fan_in: 1 }.sample(shape, &mut rng::stream(seed, &[]))
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn upsample_adjoint_identity() {
        let x = random(&[2, 3, 4], 1);
        let g = random(&[2, 9, 13], 2);
        let y = upsample_bilinear(&x, 9, 13).unwrap();
        let gx = upsample_bilinear_backward(&g, 3, 4).unwrap();
        assert!((dot(&y, &g) - dot(&x, &gx)).abs() < 1e-12);
    }

    #[test]
    fn upsample_constant_and_mirror() {
        let x = Tensor::filled(&[1, 2, 3], 2.5);
        let y = upsample_bilinear(&x, 20, 30).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
        let x = random(&[1, 4, 5], 3);
        let mut xm = x.clone();
        for r in 0..4 {
            for c in 0..5 {
                xm.data_mut()[r * 5 + c] = x.data()[r * 5 + 4 - c];
            }
        }
        let y = upsample_bilinear(&x, 8, 50).unwrap();
        let ym = upsample_bilinear(&xm, 8, 50).unwrap();
        for r in 0..8 {
            for c in 0..50 {
                assert!((y.data()[r * 50 + c] - ym.data()[r * 50 + 49 - c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pool_adjoint_identity() {
        let x = random(&[2, 6, 8], 4);
        let g = random(&[2, 3, 4], 5);
        let y = avg_pool(&x, 2).unwrap();
        let gx = avg_pool_backward(&g, 2).unwrap();
        assert!((dot(&y, &g) - dot(&x, &gx)).abs() < 1e-12);
        assert!(avg_pool(&x, 5).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let x = random(&[3, 5, 7], 6).map(|v| v * 50.0);
        let s = spatial_softmax(&x).unwrap();
        for c in 0..3 {
            assert!((s.channel(c).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(s.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn split_inverts_concat() {
        let a = random(&[2, 3, 3], 7);
        let b = random(&[1, 3, 3], 8);
        let c = concat_channels(&[&a, &b]).unwrap();
        let parts = split_channels(&c, &[2, 1]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
