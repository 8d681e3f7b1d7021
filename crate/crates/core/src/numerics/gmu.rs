use rand::Rng;

use super::ops::{concat_channels, sigmoid, split_channels};
use super::{conv2d, conv2d_backward, path, InitSpec, NumericsError, ParamSet, Tensor};

/// Registers per-input `u{k} [D, C_k, 1, 1]`, `bu{k} [D]`,
/// `w{k} [D, ΣC, 1, 1]` and `bw{k} [D]`, for `k = 0..M`.
pub fn register_gmu(
    params: &mut ParamSet,
    prefix: &str,
    in_channels: &[usize],
    out_channels: usize,
    rng: &mut impl Rng,
) -> Result<(), NumericsError> {
    check_arity(in_channels.len())?;
    let total: usize = in_channels.iter().sum();
    for (k, &ck) in in_channels.iter().enumerate() {
        params.register(
            path(prefix, &format!("u{k}")),
            &[out_channels, ck, 1, 1],
            InitSpec::HeNormal { fan_in: ck },
            rng,
        )?;
        params.register(path(prefix, &format!("bu{k}")), &[out_channels], InitSpec::Constant(0.0), rng)?;
        params.register(
            path(prefix, &format!("w{k}")),
            &[out_channels, total, 1, 1],
            InitSpec::UniformFanIn { fan_in: total },
            rng,
        )?;
        params.register(path(prefix, &format!("bw{k}")), &[out_channels], InitSpec::Constant(0.0), rng)?;
    }
    Ok(())
}

fn check_arity(m: usize) -> Result<(), NumericsError> {
    if m < 2 {
        return Err(NumericsError::Arity {
            op: "gmu_fuse",
            expected: "at least 2 inputs".into(),
            got: m,
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GmuCache {
    inputs: Vec<Tensor>,
    joint: Tensor,
    h: Vec<Tensor>,
    z: Vec<Tensor>,
}

impl GmuCache {
    /// Gate activations `z_k`, one per input.
    pub fn gates(&self) -> &[Tensor] {
        &self.z
    }
}

/// `h_k = tanh(U_k ∗ x_k)`, `z_k = σ(W_k ∗ [x_1 … x_M])`, `out = Σ z_k ⊙ h_k`.
pub fn gmu_fuse(inputs: &[&Tensor], params: &ParamSet, prefix: &str) -> Result<(Tensor, GmuCache), NumericsError> {
    check_arity(inputs.len())?;
    let joint = concat_channels(inputs)?;
    let mut out: Option<Tensor> = None;
    let mut hs = Vec::with_capacity(inputs.len());
    let mut zs = Vec::with_capacity(inputs.len());
    for (k, x) in inputs.iter().enumerate() {
        let u = params.get(&path(prefix, &format!("u{k}")))?;
        let bu = params.get(&path(prefix, &format!("bu{k}")))?;
        let w = params.get(&path(prefix, &format!("w{k}")))?;
        let bw = params.get(&path(prefix, &format!("bw{k}")))?;
        let h = conv2d(x, u, Some(bu))?.map(f64::tanh);
        let z = conv2d(&joint, w, Some(bw))?.map(sigmoid);
        let term = h.zip_map(&z, |a, b| a * b);
        match out.as_mut() {
            Some(o) => o.add_assign(&term),
            None => out = Some(term),
        }
        hs.push(h);
        zs.push(z);
    }
    let cache = GmuCache {
        inputs: inputs.iter().map(|&t| t.clone()).collect(),
        joint,
        h: hs,
        z: zs,
    };
    Ok((out.expect("arity checked"), cache))
}

/// Returns one input gradient per input and accumulates parameter gradients.
pub fn gmu_fuse_backward(
    cache: &GmuCache,
    grad_out: &Tensor,
    params: &ParamSet,
    prefix: &str,
    grads: &mut ParamSet,
) -> Result<Vec<Tensor>, NumericsError> {
    let sizes: Vec<usize> = cache.inputs.iter().map(|t| t.dim(0)).collect();
    let mut d_joint = Tensor::zeros(cache.joint.shape());
    let mut dxs = Vec::with_capacity(sizes.len());
    for k in 0..sizes.len() {
        let (h, z) = (&cache.h[k], &cache.z[k]);
        let d_hpre = Tensor::from_parts(
            h.shape().to_vec(),
            (0..h.len())
                .map(|q| grad_out.data()[q] * z.data()[q] * (1.0 - h.data()[q] * h.data()[q]))
                .collect(),
        );
        let d_zpre = Tensor::from_parts(
            z.shape().to_vec(),
            (0..z.len())
                .map(|q| grad_out.data()[q] * h.data()[q] * z.data()[q] * (1.0 - z.data()[q]))
                .collect(),
        );
        let up = path(prefix, &format!("u{k}"));
        let wp = path(prefix, &format!("w{k}"));
        let gu = conv2d_backward(&cache.inputs[k], params.get(&up)?, &d_hpre)?;
        let gw = conv2d_backward(&cache.joint, params.get(&wp)?, &d_zpre)?;
        grads.accumulate(&up, &gu.kernel);
        grads.accumulate(&path(prefix, &format!("bu{k}")), &gu.bias);
        grads.accumulate(&wp, &gw.kernel);
        grads.accumulate(&path(prefix, &format!("bw{k}")), &gw.bias);
        d_joint.add_assign(&gw.input);
        dxs.push(gu.input);
    }
    for (dx, part) in dxs.iter_mut().zip(split_channels(&d_joint, &sizes)?) {
        dx.add_assign(&part);
    }
    Ok(dxs)
}
