use serde::{Deserialize, Serialize};

use super::features::LogMel;
use super::SslError;
use crate::actuation::FixationDensityMap;
use crate::numerics::ops::{
    avg_pool, avg_pool_backward, concat_channels, relu_backward, relu_t, spatial_softmax, split_channels,
    upsample_bilinear, upsample_bilinear_backward,
};
use crate::numerics::{conv2d, conv2d_backward, kl_from_logits, InitSpec, NumericsError, Objective, ParamSet, Tensor};
use crate::rng::{self, tag};
use crate::stimulus::BinauralClip;

/// Layer sizes of the localization network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub audio_channels: usize,
    pub video_frames: usize,
    pub video_channels: usize,
    pub decoder_channels: usize,
    /// Average-pool factor from the output map to the working grid.
    pub pool: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100,
            n_mels: 64,
            audio_channels: 4,
            video_frames: 16,
            video_channels: 4,
            decoder_channels: 4,
            pool: 10,
            out_h: 200,
            out_w: 320,
        }
    }
}

impl SslConfig {
    pub fn grid(&self) -> (usize, usize) {
        (self.out_h / self.pool, self.out_w / self.pool)
    }
}

/// Network inputs after the fixed front ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SslInput {
    /// `[1, n_mels, T]` with `T` even.
    pub left: Tensor,
    pub right: Tensor,
    /// `[video_frames, gh, gw]` pooled luminance.
    pub video: Tensor,
}

/// Parameter paths under this prefix are frozen during training.
pub const VIDEO_PREFIX: &str = "video.";

/// The localization network and its fixed log-mel front end.
#[derive(Debug, Clone)]
pub struct SslModel {
    pub config: SslConfig,
    pub params: ParamSet,
    trained: bool,
    frontend: LogMel,
}

/// Copies the left half of every kernel row onto the right half.
fn mirror_kernel(k: &mut [f64], kw: usize) {
    for row in k.chunks_mut(kw) {
        for c in 0..kw / 2 {
            row[kw - 1 - c] = row[c];
        }
    }
}

struct BranchCache {
    x: Tensor,
    h1: Tensor,
    p1: Tensor,
    h2: Tensor,
    argmax: Vec<usize>,
}

/// Index of the first maximum; ties resolve to the lowest index.
fn first_argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

pub(crate) struct HeadCache {
    left: BranchCache,
    right: BranchCache,
    ears: Tensor,
    dec_in: Tensor,
    d1: Tensor,
}

/// Horizontal coordinate of each grid column center in `[-1, 1]`.
fn column_coords(gw: usize) -> Vec<f64> {
    (0..gw).map(|j| 2.0 * (j as f64 + 0.5) / gw as f64 - 1.0).collect()
}

impl SslModel {
    /// Seeded init. Left and right audio branches are identical, the merge
    /// weights for the two ears are identical, and every 3×3 kernel is
    /// mirror-symmetric, so the untrained map of a mirrored input is the
    /// mirrored map.
    pub fn init(config: SslConfig, seed: u64) -> Result<Self, SslError> {
        let (gh, gw) = config.grid();
        if config.pool == 0 || gh < 2 || gw < 2 || config.out_h % config.pool != 0 || config.out_w % config.pool != 0 {
            return Err(SslError::Config(format!(
                "{}x{} output does not pool by {} to a grid of at least 2x2",
                config.out_w, config.out_h, config.pool
            )));
        }
        let mut rng = rng::stream(seed, &[tag::INIT, 0x55_1]);
        let mut p = ParamSet::new();
        let a = config.audio_channels;
        let v = config.video_channels;
        let d = config.decoder_channels;
        let f = config.video_frames;
        let mut conv = |p: &mut ParamSet, name: &str, o: usize, c: usize, k: usize| -> Result<(), NumericsError> {
            p.register(format!("{name}.w"), &[o, c, k, k], InitSpec::HeNormal { fan_in: c * k * k }, &mut rng)?;
            // a bias on the last layer only shifts every logit; the softmax ignores it
            if name != "dec.c2" {
                p.register(format!("{name}.b"), &[o], InitSpec::Constant(0.0), &mut rng)?;
            }
            mirror_kernel(p.values_mut(&format!("{name}.w"))?, k);
            Ok(())
        };
        conv(&mut p, "audio.l.c1", a, 1, 3)?;
        conv(&mut p, "audio.l.c2", a, a, 3)?;
        conv(&mut p, "audio.r.c1", a, 1, 3)?;
        conv(&mut p, "audio.r.c2", a, a, 3)?;
        conv(&mut p, "merge", a, 2 * a, 1)?;
        conv(&mut p, "video.c1", v, f, 3)?;
        conv(&mut p, "video.c2", v, v, 3)?;
        conv(&mut p, "dec.c1", d, v + a, 3)?;
        conv(&mut p, "dec.c2", 1, d, 3)?;
        for layer in ["c1", "c2"] {
            for part in ["w", "b"] {
                let t = p.get(&format!("audio.l.{layer}.{part}"))?.clone();
                p.assign(&format!("audio.r.{layer}.{part}"), &t)?;
            }
        }
        let mw = p.values_mut("merge.w")?;
        for row in mw.chunks_mut(2 * a) {
            let (l, r) = row.split_at_mut(a);
            r.copy_from_slice(l);
        }
        Ok(Self {
            frontend: LogMel::new(config.sample_rate, config.n_mels),
            config,
            params: p,
            trained: false,
        })
    }

    /// Wraps restored parameters, checking every expected path and shape.
    pub fn from_params(config: SslConfig, params: ParamSet, trained: bool) -> Result<Self, SslError> {
        let reference = Self::init(config, 0)?;
        if !reference.params.same_layout(&params) {
            return Err(SslError::Config("checkpoint does not match the network layout".into()));
        }
        Ok(Self {
            params,
            trained,
            ..reference
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn frontend(&self) -> &LogMel {
        &self.frontend
    }

    /// Log-mel spectrogram of one channel, cropped to an even frame count.
    pub fn audio_features(&self, signal: &[f64]) -> Result<Tensor, SslError> {
        let t = self.frontend.compute(signal)?;
        Ok(crop_even(t))
    }

    /// Pools full-resolution frames onto the working grid and stacks them.
    pub fn video_input(&self, frames: &[Tensor]) -> Result<Tensor, SslError> {
        if frames.len() != self.config.video_frames {
            return Err(SslError::Arity {
                expected: self.config.video_frames,
                got: frames.len(),
            });
        }
        let pooled = frames
            .iter()
            .map(|f| {
                if f.shape() != [1, self.config.out_h, self.config.out_w] {
                    return Err(SslError::Config(format!(
                        "video frame {:?}, expected [1, {}, {}]",
                        f.shape(),
                        self.config.out_h,
                        self.config.out_w
                    )));
                }
                Ok(avg_pool(f, self.config.pool)?)
            })
            .collect::<Result<Vec<_>, SslError>>()?;
        let refs: Vec<&Tensor> = pooled.iter().collect();
        Ok(concat_channels(&refs)?)
    }

    pub fn prepare(&self, clip: &BinauralClip, frames: &[Tensor]) -> Result<SslInput, SslError> {
        if clip.sample_rate != self.config.sample_rate {
            return Err(SslError::Config(format!(
                "clip at {} Hz, network expects {} Hz",
                clip.sample_rate, self.config.sample_rate
            )));
        }
        Ok(SslInput {
            left: self.audio_features(&clip.left)?,
            right: self.audio_features(&clip.right)?,
            video: self.video_input(frames)?,
        })
    }

    /// Frozen video branch: returns `(h1, h2)`; `h2` feeds the decoder.
    pub fn video_forward(&self, video: &Tensor) -> Result<(Tensor, Tensor), SslError> {
        let p = &self.params;
        let h1 = relu_t(&conv2d(video, p.get("video.c1.w")?, Some(p.get("video.c1.b")?))?);
        let h2 = relu_t(&conv2d(&h1, p.get("video.c2.w")?, Some(p.get("video.c2.b")?))?);
        Ok((h1, h2))
    }

    fn branch_forward(&self, x: &Tensor, side: &str) -> Result<(Vec<f64>, BranchCache), SslError> {
        let p = &self.params;
        let path = |s: &str| format!("audio.{side}.{s}");
        let h1 = relu_t(&conv2d(x, p.get(&path("c1.w"))?, Some(p.get(&path("c1.b"))?))?);
        let p1 = avg_pool(&h1, 2)?;
        let h2 = relu_t(&conv2d(&p1, p.get(&path("c2.w"))?, Some(p.get(&path("c2.b"))?))?);
        // global max: utterances are peak-normalized, so the loudest cell is
        // stable across trials and differs between ears by the ILD alone
        let argmax: Vec<usize> = (0..h2.dim(0)).map(|c| first_argmax(h2.channel(c))).collect();
        let a = argmax.iter().enumerate().map(|(c, &i)| h2.channel(c)[i]).collect();
        Ok((
            a,
            BranchCache {
                x: x.clone(),
                h1,
                p1,
                h2,
                argmax,
            },
        ))
    }

    fn branch_backward(&self, cache: &BranchCache, da: &[f64], side: &str, grads: &mut ParamSet) -> Result<(), SslError> {
        let p = &self.params;
        let path = |s: &str| format!("audio.{side}.{s}");
        let mut dh2 = Tensor::zeros(cache.h2.shape());
        for (c, &g) in da.iter().enumerate() {
            dh2.channel_mut(c)[cache.argmax[c]] = g;
        }
        let g2 = conv2d_backward(&cache.p1, p.get(&path("c2.w"))?, &relu_backward(&cache.h2, &dh2))?;
        grads.accumulate(&path("c2.w"), &g2.kernel);
        grads.accumulate(&path("c2.b"), &g2.bias);
        let dh1 = avg_pool_backward(&g2.input, 2)?;
        let g1 = conv2d_backward(&cache.x, p.get(&path("c1.w"))?, &relu_backward(&cache.h1, &dh1))?;
        grads.accumulate(&path("c1.w"), &g1.kernel);
        grads.accumulate(&path("c1.b"), &g1.bias);
        Ok(())
    }

    /// Audio branches, ear fields, merge and decoder on precomputed video
    /// features. Returns upsampled logits `[1, out_h, out_w]`.
    pub(crate) fn head_forward(&self, left: &Tensor, right: &Tensor, vfeat: &Tensor) -> Result<(Tensor, HeadCache), SslError> {
        let cfg = &self.config;
        let p = &self.params;
        let (gh, gw) = cfg.grid();
        let (al, lc) = self.branch_forward(left, "l")?;
        let (ar, rc) = self.branch_forward(right, "r")?;
        let xs = column_coords(gw);
        let a = cfg.audio_channels;
        let mut ears = Tensor::zeros(&[2 * a, gh, gw]);
        for c in 0..a {
            for (k, amp, sign) in [(c, al[c], -1.0), (a + c, ar[c], 1.0)] {
                for (i, v) in ears.channel_mut(k).iter_mut().enumerate() {
                    *v = amp * (1.0 + sign * xs[i % gw]) / 2.0;
                }
            }
        }
        let merged = conv2d(&ears, p.get("merge.w")?, Some(p.get("merge.b")?))?;
        let dec_in = concat_channels(&[vfeat, &merged])?;
        let d1 = relu_t(&conv2d(&dec_in, p.get("dec.c1.w")?, Some(p.get("dec.c1.b")?))?);
        let z = conv2d(&d1, p.get("dec.c2.w")?, None)?;
        let logits = upsample_bilinear(&z, cfg.out_h, cfg.out_w)?;
        Ok((
            logits,
            HeadCache {
                left: lc,
                right: rc,
                ears,
                dec_in,
                d1,
            },
        ))
    }

    /// Parameter gradients of everything but the video branch, plus the
    /// gradient with respect to the video features.
    pub(crate) fn head_backward(&self, cache: &HeadCache, dlogits: &Tensor) -> Result<(ParamSet, Tensor), SslError> {
        let cfg = &self.config;
        let p = &self.params;
        let (gh, gw) = cfg.grid();
        let mut grads = p.zeros_like();
        let dz = upsample_bilinear_backward(dlogits, gh, gw)?;
        let g2 = conv2d_backward(&cache.d1, p.get("dec.c2.w")?, &dz)?;
        grads.accumulate("dec.c2.w", &g2.kernel);
        let g1 = conv2d_backward(&cache.dec_in, p.get("dec.c1.w")?, &relu_backward(&cache.d1, &g2.input))?;
        grads.accumulate("dec.c1.w", &g1.kernel);
        grads.accumulate("dec.c1.b", &g1.bias);
        let parts = split_channels(&g1.input, &[cfg.video_channels, cfg.audio_channels])?;
        let gm = conv2d_backward(&cache.ears, p.get("merge.w")?, &parts[1])?;
        grads.accumulate("merge.w", &gm.kernel);
        grads.accumulate("merge.b", &gm.bias);
        let xs = column_coords(gw);
        let a = cfg.audio_channels;
        let ear_grad = |k: usize, sign: f64| -> f64 {
            gm.input
                .channel(k)
                .iter()
                .enumerate()
                .map(|(i, g)| g * (1.0 + sign * xs[i % gw]) / 2.0)
                .sum()
        };
        let dal: Vec<f64> = (0..a).map(|c| ear_grad(c, -1.0)).collect();
        let dar: Vec<f64> = (0..a).map(|c| ear_grad(a + c, 1.0)).collect();
        self.branch_backward(&cache.left, &dal, "l", &mut grads)?;
        self.branch_backward(&cache.right, &dar, "r", &mut grads)?;
        Ok((grads, parts[0].clone()))
    }

    fn video_backward(
        &self,
        video: &Tensor,
        h1: &Tensor,
        h2: &Tensor,
        dvfeat: &Tensor,
        grads: &mut ParamSet,
    ) -> Result<(), SslError> {
        let p = &self.params;
        let g2 = conv2d_backward(h1, p.get("video.c2.w")?, &relu_backward(h2, dvfeat))?;
        grads.accumulate("video.c2.w", &g2.kernel);
        grads.accumulate("video.c2.b", &g2.bias);
        let g1 = conv2d_backward(video, p.get("video.c1.w")?, &relu_backward(h1, &g2.input))?;
        grads.accumulate("video.c1.w", &g1.kernel);
        grads.accumulate("video.c1.b", &g1.bias);
        Ok(())
    }

    /// Probability map from spectrograms and precomputed video features.
    pub fn map_from_features(&self, left: &Tensor, right: &Tensor, vfeat: &Tensor) -> Result<Tensor, SslError> {
        Ok(spatial_softmax(&self.head_forward(left, right, vfeat)?.0)?)
    }

    /// Upsampled logits for a prepared input.
    pub fn logits(&self, input: &SslInput) -> Result<Tensor, SslError> {
        let (_, vfeat) = self.video_forward(&input.video)?;
        Ok(self.head_forward(&input.left, &input.right, &vfeat)?.0)
    }

    /// Probability map `[1, out_h, out_w]`.
    pub fn forward(&self, input: &SslInput) -> Result<Tensor, SslError> {
        Ok(spatial_softmax(&self.logits(input)?)?)
    }
}

fn crop_even(t: Tensor) -> Tensor {
    let (m, frames) = (t.dim(1), t.dim(2));
    if frames % 2 == 0 {
        return t;
    }
    let keep = frames - 1;
    let mut data = Vec::with_capacity(m * keep);
    for row in t.data().chunks(frames) {
        data.extend_from_slice(&row[..keep]);
    }
    Tensor::new(vec![1, m, keep], data).expect("cropped spectrogram")
}

/// Fixation density map of a one-second binaural chunk and the 16 video
/// frames that end with it.
pub fn ssl_forward(clip: &BinauralClip, video_frames: &[Tensor], model: &SslModel) -> Result<FixationDensityMap, SslError> {
    let input = model.prepare(clip, video_frames)?;
    Ok(FixationDensityMap::from_tensor(&model.forward(&input)?)?)
}

/// KL of one sample through the whole network, video branch included, for
/// gradient checking.
pub struct SslObjective<'a> {
    pub model: &'a SslModel,
    pub input: &'a SslInput,
    /// Unit-sum `[1, out_h, out_w]` target.
    pub target: &'a Tensor,
}

impl Objective for SslObjective<'_> {
    fn loss(&self, params: &ParamSet) -> Result<f64, NumericsError> {
        Ok(self.loss_and_grad(params)?.0)
    }

    fn loss_and_grad(&self, params: &ParamSet) -> Result<(f64, ParamSet), NumericsError> {
        let m = SslModel {
            params: params.clone(),
            ..self.model.clone()
        };
        let run = || -> Result<(f64, ParamSet), SslError> {
            let (h1, h2) = m.video_forward(&self.input.video)?;
            let (logits, cache) = m.head_forward(&self.input.left, &self.input.right, &h2)?;
            let (kl, dl) = kl_from_logits(self.target, &logits)?;
            let (mut g, dv) = m.head_backward(&cache, &dl)?;
            m.video_backward(&self.input.video, &h1, &h2, &dv, &mut g)?;
            Ok((kl, g))
        };
        run().map_err(|e| match e {
            SslError::Numerics(n) => n,
            other => NumericsError::Domain {
                op: "ssl objective",
                detail: other.to_string(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn tiny() -> SslConfig {
        SslConfig {
            sample_rate: 8_000,
            n_mels: 8,
            audio_channels: 2,
            video_frames: 3,
            video_channels: 2,
            decoder_channels: 2,
            pool: 2,
            out_h: 8,
            out_w: 12,
        }
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::stream(seed, &[]);
        InitSpec::UniformFanIn { fan_in: 1 }.sample(shape, &mut r)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = tiny();
        let mut model = SslModel::init(cfg, 3).unwrap();
        // break the init symmetries and lift biases off the ReLU kinks
        let names: Vec<String> = model.params.paths().map(str::to_string).collect();
        for (k, name) in names.iter().enumerate() {
            let noise = random(model.params.get(name).unwrap().shape(), 100 + k as u64);
            let vals = model.params.values_mut(name).unwrap();
            for (v, n) in vals.iter_mut().zip(noise.data()) {
                *v += 0.3 * n + if name.ends_with(".b") { 0.2 } else { 0.0 };
            }
        }
        let input = SslInput {
            left: random(&[1, 8, 6], 1),
            right: random(&[1, 8, 6], 2),
            video: random(&[3, 4, 6], 3).map(f64::abs),
        };
        let target = random(&[1, 8, 12], 4).map(f64::abs);
        let target = target.map(|v| v / target.sum());
        let obj = SslObjective {
            model: &model,
            input: &input,
            target: &target,
        };
        let r = grad_check(&obj, &model.params, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert_eq!(r.checked, model.params.num_values());
    }

    #[test]
    fn untrained_output_is_a_probability_map() {
        let model = SslModel::init(tiny(), 1).unwrap();
        let input = SslInput {
            left: random(&[1, 8, 6], 5),
            right: random(&[1, 8, 6], 6),
            video: random(&[3, 4, 6], 7).map(f64::abs),
        };
        let m = model.forward(&input).unwrap();
        assert_eq!(m.shape(), [1, 8, 12]);
        assert!((m.sum() - 1.0).abs() < 1e-9 && m.min() >= 0.0);
    }

    #[test]
    fn cloned_init_gives_a_mirror_symmetric_map() {
        let cfg = SslConfig::default();
        let model = SslModel::init(cfg, 42).unwrap();
        assert_eq!(model.params.get("audio.l.c1.w").unwrap(), model.params.get("audio.r.c1.w").unwrap());
        let clip = BinauralClip {
            sample_rate: 44_100,
            left: vec![0.0; 44_100],
            right: vec![0.0; 44_100],
            duration_ms: 1000,
            azimuth_deg: 0.0,
        };
        let frames = vec![Tensor::filled(&[1, 200, 320], 0.3); 16];
        let map = ssl_forward(&clip, &frames, &model).unwrap();
        let diff = map
            .values()
            .iter()
            .zip(map.mirrored().values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-6, "{diff}");
        assert!((map.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn wrong_frame_count_is_an_arity_error() {
        let model = SslModel::init(SslConfig::default(), 0).unwrap();
        let clip = crate::stimulus::render_target_audio(crate::protocol::Side::Left, 44_100, 0).unwrap();
        let frames = vec![Tensor::zeros(&[1, 200, 320]); 15];
        assert!(matches!(
            ssl_forward(&clip, &frames, &model),
            Err(SslError::Arity { expected: 16, got: 15 })
        ));
    }
}

