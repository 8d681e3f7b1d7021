use rand::Rng;

use super::ops::{spatial_softmax, spatial_softmax_backward};
use super::{conv2d, conv2d_backward, path, InitSpec, NumericsError, ParamSet, Tensor};

/// Registers the attention kernels: `wx [A, C, 3, 3]`, `wh [A, H, 3, 3]`,
/// `b [A]`, `wa [1, A, 3, 3]`. The score map has no bias: the spatial
/// softmax cancels it.
pub fn register_attention(
    params: &mut ParamSet,
    prefix: &str,
    in_channels: usize,
    hidden: usize,
    attn_channels: usize,
    rng: &mut impl Rng,
) -> Result<(), NumericsError> {
    let fan_in = (in_channels + hidden) * 9;
    params.register(
        path(prefix, "wx"),
        &[attn_channels, in_channels, 3, 3],
        InitSpec::UniformFanIn { fan_in },
        rng,
    )?;
    params.register(
        path(prefix, "wh"),
        &[attn_channels, hidden, 3, 3],
        InitSpec::UniformFanIn { fan_in },
        rng,
    )?;
    params.register(path(prefix, "b"), &[attn_channels], InitSpec::Constant(0.0), rng)?;
    params.register(
        path(prefix, "wa"),
        &[1, attn_channels, 3, 3],
        InitSpec::UniformFanIn { fan_in: attn_channels * 9 },
        rng,
    )
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor,
    h_prev: Tensor,
    z: Tensor,
    attention: Tensor,
}

impl AttentionCache {
    /// The `[1, H, W]` attention map; sums to one.
    pub fn attention(&self) -> &Tensor {
        &self.attention
    }
}

/// `a = softmax_space(W_a ∗ tanh(W_x ∗ x + W_h ∗ h_prev))`, returns `a ⊙ x`
/// with `a` broadcast over channels.
pub fn attentive_step(
    x: &Tensor,
    h_prev: &Tensor,
    params: &ParamSet,
    prefix: &str,
) -> Result<(Tensor, AttentionCache), NumericsError> {
    let (c, h, w) = x.chw("attentive_step")?;
    let (_, hh, hw) = h_prev.chw("attentive_step")?;
    if (hh, hw) != (h, w) {
        return Err(NumericsError::Dimension {
            op: "attentive_step",
            detail: format!(
                "input spatial axes (1, 2) {h}x{w} differ from state {:?}",
                &h_prev.shape()[1..]
            ),
        });
    }
    let mut pre = conv2d(x, params.get(&path(prefix, "wx"))?, Some(params.get(&path(prefix, "b"))?))?;
    pre.add_assign(&conv2d(h_prev, params.get(&path(prefix, "wh"))?, None)?);
    let z = pre.map(f64::tanh);
    let logits = conv2d(&z, params.get(&path(prefix, "wa"))?, None)?;
    let attention = spatial_softmax(&logits)?;
    let mut out = x.clone();
    for ci in 0..c {
        for (v, a) in out.channel_mut(ci).iter_mut().zip(attention.data()) {
            *v *= a;
        }
    }
    let cache = AttentionCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        z,
        attention,
    };
    Ok((out, cache))
}

/// Returns `(dx, dh_prev)` and accumulates parameter gradients.
pub fn attentive_step_backward(
    cache: &AttentionCache,
    grad_out: &Tensor,
    params: &ParamSet,
    prefix: &str,
    grads: &mut ParamSet,
) -> Result<(Tensor, Tensor), NumericsError> {
    let (c, h, w) = cache.x.chw("attentive_step_backward")?;
    let plane = h * w;
    let a = cache.attention.data();
    let mut dx = grad_out.clone();
    let mut da = vec![0.0; plane];
    for ci in 0..c {
        let xs = cache.x.channel(ci);
        for (p, v) in dx.channel_mut(ci).iter_mut().enumerate() {
            da[p] += *v * xs[p];
            *v *= a[p];
        }
    }
    let d_logits = spatial_softmax_backward(&cache.attention, &Tensor::from_parts(vec![1, h, w], da))?;
    let ga = conv2d_backward(&cache.z, params.get(&path(prefix, "wa"))?, &d_logits)?;
    let d_pre = cache.z.zip_map(&ga.input, |z, g| g * (1.0 - z * z));
    let gx = conv2d_backward(&cache.x, params.get(&path(prefix, "wx"))?, &d_pre)?;
    let gh = conv2d_backward(&cache.h_prev, params.get(&path(prefix, "wh"))?, &d_pre)?;
    grads.accumulate(&path(prefix, "wa"), &ga.kernel);
    grads.accumulate(&path(prefix, "wx"), &gx.kernel);
    grads.accumulate(&path(prefix, "wh"), &gh.kernel);
    grads.accumulate(&path(prefix, "b"), &gx.bias);
    dx.add_assign(&gx.input);
    Ok((dx, gh.input))
}
