use rand::Rng;

use super::ops::{concat_channels, sigmoid, split_channels};
use super::{conv2d, conv2d_backward, path, same_shape, InitSpec, NumericsError, ParamSet, Tensor};

/// Gate order along the stacked channel axis: input, forget, output, cell.
const GATES: usize = 4;

/// Registers `{prefix}.wx [4H, C, 3, 3]`, `{prefix}.wh [4H, H, 3, 3]` and
/// `{prefix}.b [4H]`.
pub fn register_convlstm(
    params: &mut ParamSet,
    prefix: &str,
    in_channels: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<(), NumericsError> {
    let fan_in = (in_channels + hidden) * 9;
    params.register(
        path(prefix, "wx"),
        &[GATES * hidden, in_channels, 3, 3],
        InitSpec::UniformFanIn { fan_in },
        rng,
    )?;
    params.register(
        path(prefix, "wh"),
        &[GATES * hidden, hidden, 3, 3],
        InitSpec::UniformFanIn { fan_in },
        rng,
    )?;
    params.register(path(prefix, "b"), &[GATES * hidden], InitSpec::Constant(0.0), rng)
}

/// Activations kept from the forward step for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    i: Tensor,
    f: Tensor,
    o: Tensor,
    g: Tensor,
    tanh_c: Tensor,
}

/// One ConvLSTM step with 3×3 same-padded convolutions.
///
/// `i, f, o = σ(·)`, `g = tanh(·)`, `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn convlstm_step(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    params: &ParamSet,
    prefix: &str,
) -> Result<(Tensor, Tensor, LstmCache), NumericsError> {
    same_shape("convlstm_step", h_prev, c_prev)?;
    let (hidden, _, _) = h_prev.chw("convlstm_step")?;
    let wx = params.get(&path(prefix, "wx"))?;
    let wh = params.get(&path(prefix, "wh"))?;
    let b = params.get(&path(prefix, "b"))?;
    if wx.dim(0) != GATES * hidden {
        return Err(NumericsError::Dimension {
            op: "convlstm_step",
            detail: format!(
                "hidden state has {hidden} channels (axis 0) but gate kernels produce {} (axis 0 / 4)",
                wx.dim(0) / GATES
            ),
        });
    }
    let mut pre = conv2d(x, wx, Some(b))?;
    if pre.shape()[1..] != h_prev.shape()[1..] {
        return Err(NumericsError::Dimension {
            op: "convlstm_step",
            detail: format!(
                "input spatial axes (1, 2) {:?} differ from state {:?}",
                &x.shape()[1..],
                &h_prev.shape()[1..]
            ),
        });
    }
    pre.add_assign(&conv2d(h_prev, wh, None)?);
    let mut parts = split_channels(&pre, &[hidden; GATES])?.into_iter();
    let i = parts.next().unwrap().map(sigmoid);
    let f = parts.next().unwrap().map(sigmoid);
    let o = parts.next().unwrap().map(sigmoid);
    let g = parts.next().unwrap().map(f64::tanh);
    let c = Tensor::from_parts(
        c_prev.shape().to_vec(),
        (0..c_prev.len())
            .map(|k| f.data()[k] * c_prev.data()[k] + i.data()[k] * g.data()[k])
            .collect(),
    );
    let tanh_c = c.map(f64::tanh);
    let h = o.zip_map(&tanh_c, |a, b| a * b);
    let cache = LstmCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        i,
        f,
        o,
        g,
        tanh_c,
    };
    Ok((h, c, cache))
}

/// Backward through one step. `dh` and `dc` are the gradients arriving at
/// this step's outputs; returns `(dx, dh_prev, dc_prev)` and accumulates
/// parameter gradients into `grads` under the same paths.
pub fn convlstm_step_backward(
    cache: &LstmCache,
    dh: &Tensor,
    dc: &Tensor,
    params: &ParamSet,
    prefix: &str,
    grads: &mut ParamSet,
) -> Result<(Tensor, Tensor, Tensor), NumericsError> {
    let LstmCache {
        x,
        h_prev,
        c_prev,
        i,
        f,
        o,
        g,
        tanh_c,
    } = cache;
    let n = c_prev.len();
    let shape = c_prev.shape().to_vec();
    let mut d_i = vec![0.0; n];
    let mut d_f = vec![0.0; n];
    let mut d_o = vec![0.0; n];
    let mut d_g = vec![0.0; n];
    let mut dc_prev = vec![0.0; n];
    for k in 0..n {
        let (iv, fv, ov, gv, tc) = (i.data()[k], f.data()[k], o.data()[k], g.data()[k], tanh_c.data()[k]);
        let dhk = dh.data()[k];
        let dck = dc.data()[k] + dhk * ov * (1.0 - tc * tc);
        d_o[k] = dhk * tc * ov * (1.0 - ov);
        d_i[k] = dck * gv * iv * (1.0 - iv);
        d_f[k] = dck * c_prev.data()[k] * fv * (1.0 - fv);
        d_g[k] = dck * iv * (1.0 - gv * gv);
        dc_prev[k] = dck * fv;
    }
    let parts: Vec<Tensor> = [d_i, d_f, d_o, d_g]
        .into_iter()
        .map(|d| Tensor::from_parts(shape.clone(), d))
        .collect();
    let d_pre = concat_channels(&parts.iter().collect::<Vec<_>>())?;
    let gx = conv2d_backward(x, params.get(&path(prefix, "wx"))?, &d_pre)?;
    let gh = conv2d_backward(h_prev, params.get(&path(prefix, "wh"))?, &d_pre)?;
    grads.accumulate(&path(prefix, "wx"), &gx.kernel);
    grads.accumulate(&path(prefix, "wh"), &gh.kernel);
    grads.accumulate(&path(prefix, "b"), &gx.bias);
    Ok((gx.input, gh.input, Tensor::from_parts(shape, dc_prev)))
}
