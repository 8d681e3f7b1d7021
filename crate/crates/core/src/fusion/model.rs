use serde::{Deserialize, Serialize};

use super::stack::{dam_weights, FeatureMapStack, STREAMS};
use super::FusionError;
use crate::actuation::FixationDensityMap;
use crate::numerics::ops::{
    concat_channels, relu_backward, relu_t, spatial_softmax, split_channels, upsample_bilinear,
    upsample_bilinear_backward,
};
use crate::numerics::{
    attentive_step, attentive_step_backward, conv2d, conv2d_backward, convlstm_step, convlstm_step_backward,
    gmu_fuse, gmu_fuse_backward, kl_from_logits, register_attention, register_convlstm, register_gmu, AttentionCache,
    GmuCache, InitSpec, LstmCache, NumericsError, Objective, ParamSet, Tensor,
};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub timesteps: usize,
    /// Channels of each per-stream encoder.
    pub enc_channels: usize,
    /// Recurrent hidden channels per stream.
    pub hidden: usize,
    pub attn_channels: usize,
    pub gmu_channels: usize,
    /// DAM softmax temperature.
    pub tau: f64,
    /// Output map size over the stack grid.
    pub out_h: usize,
    pub out_w: usize,
    /// Pool factor from the output map to the stack grid.
    pub pool: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            timesteps: 10,
            enc_channels: 4,
            hidden: 4,
            attn_channels: 4,
            gmu_channels: 4,
            tau: 1.0,
            out_h: 200,
            out_w: 320,
            pool: 20,
        }
    }
}

impl FusionConfig {
    pub fn grid(&self) -> (usize, usize) {
        (self.out_h / self.pool.max(1), self.out_w / self.pool.max(1))
    }
}

const M: usize = STREAMS.len();
const READOUT: &str = "readout";

/// Per-stream encoders, joint attention over the concatenated encodings,
/// one ConvLSTM per stream on the attended input, and a gated multimodal
/// unit over the final hidden streams, read out to a fixation map.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub params: ParamSet,
    trained: bool,
}

struct EncCache {
    x: Tensor,
    e1: Tensor,
    e2: Tensor,
}

struct StepCache {
    enc: Vec<EncCache>,
    attn: AttentionCache,
    lstm: Vec<LstmCache>,
}

pub(crate) struct FusionCache {
    steps: Vec<StepCache>,
    gmu: GmuCache,
    fused: Tensor,
}

fn enc(k: usize, layer: &str) -> String {
    format!("enc.{}.{layer}", STREAMS[k])
}

fn lstm_prefix(k: usize) -> String {
    format!("alstm.lstm.{}", STREAMS[k])
}

impl FusionModel {
    pub fn init(config: FusionConfig, seed: u64) -> Result<Self, FusionError> {
        let (gh, gw) = config.grid();
        if config.timesteps == 0
            || config.pool == 0
            || gh < 2
            || gw < 2
            || gh * config.pool != config.out_h
            || gw * config.pool != config.out_w
        {
            return Err(FusionError::Config(format!(
                "{}x{} output with pool {} over {} timesteps",
                config.out_w, config.out_h, config.pool, config.timesteps
            )));
        }
        let mut r = rng::stream(seed, &[tag::INIT, 0xF0_5E]);
        let mut p = ParamSet::new();
        let (e, h) = (config.enc_channels, config.hidden);
        for k in 0..M {
            p.register(enc(k, "c1.w"), &[e, 1, 1, 1], InitSpec::HeNormal { fan_in: 1 }, &mut r)?;
            p.register(enc(k, "c1.b"), &[e], InitSpec::Constant(0.1), &mut r)?;
            p.register(enc(k, "c2.w"), &[e, e, 1, 1], InitSpec::HeNormal { fan_in: e }, &mut r)?;
            p.register(enc(k, "c2.b"), &[e], InitSpec::Constant(0.1), &mut r)?;
        }
        register_attention(&mut p, "alstm.attn", M * e, M * h, config.attn_channels, &mut r)?;
        for k in 0..M {
            register_convlstm(&mut p, &lstm_prefix(k), e, h, &mut r)?;
        }
        register_gmu(&mut p, "gmu", &[h; M], config.gmu_channels, &mut r)?;
        p.register(
            format!("{READOUT}.w"),
            &[1, config.gmu_channels, 1, 1],
            InitSpec::HeNormal {
                fan_in: config.gmu_channels,
            },
            &mut r,
        )?;
        Ok(Self {
            config,
            params: p,
            trained: false,
        })
    }

    pub fn from_params(config: FusionConfig, params: ParamSet, trained: bool) -> Result<Self, FusionError> {
        let reference = Self::init(config, 0)?;
        if !reference.params.same_layout(&params) {
            return Err(FusionError::Config("checkpoint does not match the fusion layout".into()));
        }
        Ok(Self {
            config,
            params,
            trained,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn mark_trained(&mut self) {
        self.trained = true;
    }

    fn check(&self, stack: &FeatureMapStack) -> Result<(), FusionError> {
        if stack.timesteps() != self.config.timesteps {
            return Err(FusionError::Timesteps {
                expected: self.config.timesteps,
                got: stack.timesteps(),
            });
        }
        if stack.grid() != self.config.grid() {
            return Err(FusionError::Shape(format!(
                "stack grid {:?}, model expects {:?}",
                stack.grid(),
                self.config.grid()
            )));
        }
        Ok(())
    }

    /// Upsampled output logits `[1, out_h, out_w]`.
    pub(crate) fn forward_cached(&self, stack: &FeatureMapStack) -> Result<(Tensor, FusionCache), FusionError> {
        self.check(stack)?;
        let cfg = &self.config;
        let p = &self.params;
        let (gh, gw) = cfg.grid();
        let w = dam_weights(stack, cfg.tau)?;
        let weight = |k: usize| if k == 0 { 1.0 } else { w[k - 1] };
        let area = (gh * gw) as f64;
        let mut hs: Vec<Tensor> = vec![Tensor::zeros(&[cfg.hidden, gh, gw]); M];
        let mut cs = hs.clone();
        let mut steps = Vec::with_capacity(cfg.timesteps);
        for entry in stack.entries() {
            let mut encs = Vec::with_capacity(M);
            for k in 0..M {
                let x = entry.stream(k).map(|v| v * weight(k));
                let e1 = relu_t(&conv2d(&x, p.get(&enc(k, "c1.w"))?, Some(p.get(&enc(k, "c1.b"))?))?);
                let e2 = relu_t(&conv2d(&e1, p.get(&enc(k, "c2.w"))?, Some(p.get(&enc(k, "c2.b"))?))?);
                encs.push(EncCache { x, e1, e2 });
            }
            let joint = concat_channels(&encs.iter().map(|c| &c.e2).collect::<Vec<_>>())?;
            let h_joint = concat_channels(&hs.iter().collect::<Vec<_>>())?;
            let (mut attended, attn) = attentive_step(&joint, &h_joint, p, "alstm.attn")?;
            // a uniform attention map then leaves the input unchanged
            attended.scale(area);
            let parts = split_channels(&attended, &[cfg.enc_channels; M])?;
            let mut lstm = Vec::with_capacity(M);
            for k in 0..M {
                let (h, c, lc) = convlstm_step(&parts[k], &hs[k], &cs[k], p, &lstm_prefix(k))?;
                hs[k] = h;
                cs[k] = c;
                lstm.push(lc);
            }
            steps.push(StepCache { enc: encs, attn, lstm });
        }
        let (fused, gmu) = gmu_fuse(&hs.iter().collect::<Vec<_>>(), p, "gmu")?;
        let z = conv2d(&fused, p.get(&format!("{READOUT}.w"))?, None)?;
        let logits = upsample_bilinear(&z, cfg.out_h, cfg.out_w)?;
        Ok((logits, FusionCache { steps, gmu, fused }))
    }

    pub(crate) fn backward(&self, cache: &FusionCache, dlogits: &Tensor) -> Result<ParamSet, FusionError> {
        let cfg = &self.config;
        let p = &self.params;
        let (gh, gw) = cfg.grid();
        let area = (gh * gw) as f64;
        let mut grads = p.zeros_like();
        let dz = upsample_bilinear_backward(dlogits, gh, gw)?;
        let gr = conv2d_backward(&cache.fused, p.get(&format!("{READOUT}.w"))?, &dz)?;
        grads.accumulate(&format!("{READOUT}.w"), &gr.kernel);
        let mut dh = gmu_fuse_backward(&cache.gmu, &gr.input, p, "gmu", &mut grads)?;
        let mut dc: Vec<Tensor> = vec![Tensor::zeros(&[cfg.hidden, gh, gw]); M];
        for step in cache.steps.iter().rev() {
            let mut d_att = Vec::with_capacity(M);
            for k in 0..M {
                let (dx, dhp, dcp) = convlstm_step_backward(&step.lstm[k], &dh[k], &dc[k], p, &lstm_prefix(k), &mut grads)?;
                d_att.push(dx);
                dh[k] = dhp;
                dc[k] = dcp;
            }
            let mut d_attended = concat_channels(&d_att.iter().collect::<Vec<_>>())?;
            d_attended.scale(area);
            let (d_joint, dh_joint) = attentive_step_backward(&step.attn, &d_attended, p, "alstm.attn", &mut grads)?;
            for (k, extra) in split_channels(&dh_joint, &[cfg.hidden; M])?.into_iter().enumerate() {
                dh[k].add_assign(&extra);
            }
            for (k, de) in split_channels(&d_joint, &[cfg.enc_channels; M])?.into_iter().enumerate() {
                let c = &step.enc[k];
                let g2 = conv2d_backward(&c.e1, p.get(&enc(k, "c2.w"))?, &relu_backward(&c.e2, &de))?;
                grads.accumulate(&enc(k, "c2.w"), &g2.kernel);
                grads.accumulate(&enc(k, "c2.b"), &g2.bias);
                let g1 = conv2d_backward(&c.x, p.get(&enc(k, "c1.w"))?, &relu_backward(&c.e1, &g2.input))?;
                grads.accumulate(&enc(k, "c1.w"), &g1.kernel);
                grads.accumulate(&enc(k, "c1.b"), &g1.bias);
            }
        }
        Ok(grads)
    }

    /// Unit-sum `[1, out_h, out_w]` map.
    pub fn forward(&self, stack: &FeatureMapStack) -> Result<Tensor, FusionError> {
        Ok(spatial_softmax(&self.forward_cached(stack)?.0)?)
    }

    /// Forces the gate of stream `k` fully open and every other gate shut.
    pub fn saturate_gate(&mut self, k: usize) -> Result<(), FusionError> {
        for j in 0..M {
            let bias = if j == k { 60.0 } else { -60.0 };
            let b = self.params.values_mut(&format!("gmu.bw{j}"))?;
            b.fill(bias);
            self.params.values_mut(&format!("gmu.w{j}"))?.fill(0.0);
        }
        Ok(())
    }
}

/// Final fixation density map of a stack.
pub fn largmu_forward(stack: &FeatureMapStack, model: &FusionModel) -> Result<FixationDensityMap, FusionError> {
    Ok(FixationDensityMap::from_tensor(&model.forward(stack)?)?)
}

/// KL of one stack against a target map, for gradient checking.
pub struct FusionObjective<'a> {
    pub model: &'a FusionModel,
    pub stack: &'a FeatureMapStack,
    pub target: &'a Tensor,
}

impl Objective for FusionObjective<'_> {
    fn loss(&self, params: &ParamSet) -> Result<f64, NumericsError> {
        Ok(self.loss_and_grad(params)?.0)
    }

    fn loss_and_grad(&self, params: &ParamSet) -> Result<(f64, ParamSet), NumericsError> {
        let m = FusionModel {
            params: params.clone(),
            ..self.model.clone()
        };
        let run = || -> Result<(f64, ParamSet), FusionError> {
            let (logits, cache) = m.forward_cached(self.stack)?;
            let (kl, dl) = kl_from_logits(self.target, &logits)?;
            Ok((kl, m.backward(&cache, &dl)?))
        };
        run().map_err(|e| match e {
            FusionError::Numerics(n) => n,
            other => NumericsError::Domain {
                op: "fusion objective",
                detail: other.to_string(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::StackEntry;
    use crate::numerics::grad_check;

    fn random_map(shape: &[usize], seed: u64) -> Tensor {
        InitSpec::UniformFanIn { fan_in: 1 }.sample(shape, &mut rng::stream(seed, &[])).map(f64::abs)
    }

    fn random_stack(t: usize, h: usize, w: usize, seed: u64) -> FeatureMapStack {
        FeatureMapStack::new(
            (0..t as u64)
                .map(|i| StackEntry {
                    raw: random_map(&[1, h, w], seed * 100 + 4 * i),
                    ge: random_map(&[1, h, w], seed * 100 + 4 * i + 1),
                    gf: random_map(&[1, h, w], seed * 100 + 4 * i + 2),
                    ssl: random_map(&[1, h, w], seed * 100 + 4 * i + 3),
                })
                .collect(),
        )
        .unwrap()
    }

    fn small() -> FusionConfig {
        FusionConfig {
            timesteps: 2,
            enc_channels: 2,
            hidden: 2,
            attn_channels: 2,
            gmu_channels: 2,
            tau: 1.0,
            out_h: 8,
            out_w: 8,
            pool: 1,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut model = FusionModel::init(small(), 5).unwrap();
        // move to a generic point; encoder channels alternate between firmly
        // active and firmly dead so no ReLU input sits near its kink
        let names: Vec<String> = model.params.paths().map(str::to_string).collect();
        for (k, name) in names.iter().enumerate() {
            let noise = InitSpec::UniformFanIn { fan_in: 1 }
                .sample(model.params.get(name).unwrap().shape(), &mut rng::stream(200 + k as u64, &[]));
            let shape = model.params.get(name).unwrap().shape().to_vec();
            let per_out = noise.len() / shape[0];
            for (i, (v, n)) in model.params.values_mut(name).unwrap().iter_mut().zip(noise.data()).enumerate() {
                if !name.starts_with("enc.") {
                    *v += 0.5 * n;
                    continue;
                }
                let sign = if (i / per_out) % 2 == 0 { 1.0 } else { -1.0 };
                *v = sign * if name.ends_with(".b") { 0.3 } else { 0.1 + n.abs() };
            }
        }
        let stack = random_stack(2, 8, 8, 1);
        let target = random_map(&[1, 8, 8], 77);
        let target = target.map(|v| v / target.sum());
        let obj = FusionObjective {
            model: &model,
            stack: &stack,
            target: &target,
        };
        let r = grad_check(&obj, &model.params, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn output_is_a_deterministic_probability_map() {
        let cfg = FusionConfig {
            timesteps: 3,
            out_h: 20,
            out_w: 30,
            pool: 10,
            ..FusionConfig::default()
        };
        let model = FusionModel::init(cfg, 2).unwrap();
        let stack = random_stack(3, 2, 3, 4);
        let a = largmu_forward(&stack, &model).unwrap();
        let b = largmu_forward(&stack, &model).unwrap();
        assert_eq!(a, b);
        assert!((a.sum() - 1.0).abs() < 1e-9);
        assert_eq!((a.width(), a.height()), (30, 20));
    }

    #[test]
    fn wrong_timestep_count_and_grid_are_rejected() {
        let model = FusionModel::init(small(), 0).unwrap();
        assert!(matches!(
            largmu_forward(&random_stack(3, 8, 8, 0), &model),
            Err(FusionError::Timesteps { expected: 2, got: 3 })
        ));
        assert!(matches!(largmu_forward(&random_stack(2, 4, 8, 0), &model), Err(FusionError::Shape(_))));
    }
}
