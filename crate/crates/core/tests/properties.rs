//! Property tests of the invariants that hold for every input, not just the
//! worked examples in the unit tests.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xmod_core::actuation::{actuate, fdm_peak, FixationDensityMap, DEFAULT_DEAD_ZONE_DEG, DEFAULT_SCALE, PAN_LIMIT_DEG, TILT_LIMIT_DEG};
use xmod_core::analysis::{filter_rt, rm_anova_gg, Agent, Response, ResponseRecord};
use xmod_core::fusion::{dam_weights, FeatureMapStack, StackEntry};
use xmod_core::harness::HarnessConfig;
use xmod_core::numerics::ops::spatial_softmax;
use xmod_core::numerics::{kl_from_logits, kl_loss, Tensor};
use xmod_core::protocol::{generate_practice, generate_session, Congruence, CueDirection, ProtocolConfig, Side};
use xmod_core::stimulus::{degrade, render_cue_maps, render_target_audio, AudioDegradation, CueChannel};

fn map_strategy() -> impl Strategy<Value = FixationDensityMap> {
    (2usize..12, 2usize..12).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f64..1.0, w * h).prop_map(move |v| FixationDensityMap::new(w, h, v).unwrap())
    })
}

fn unique_peak(m: &FixationDensityMap) -> bool {
    let max = m.values().iter().cloned().fold(f64::MIN, f64::max);
    m.values().iter().filter(|&&v| v == max).count() == 1
}

fn mirror(r: Response) -> Response {
    match r {
        Response::Left => Response::Right,
        Response::Right => Response::Left,
        Response::NoResponse => Response::NoResponse,
    }
}

fn positive(shape: [usize; 3]) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.01f64..1.0, shape.iter().product::<usize>())
        .prop_map(move |v| Tensor::new(shape.to_vec(), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sessions_are_balanced_and_reproducible(seed in any::<u64>()) {
        let cfg = ProtocolConfig::default();
        let plan = generate_session(seed, &cfg).unwrap();
        prop_assert_eq!(plan.trials.len(), 288);
        for c in Congruence::ALL {
            for side in [Side::Left, Side::Right] {
                let n = plan.trials.iter().filter(|t| t.congruence == c && t.target_side == side).count();
                prop_assert_eq!(n, 48);
            }
            for b in 0..4u8 {
                prop_assert_eq!(plan.block(b).filter(|t| t.congruence == c).count(), 24);
            }
        }
        for t in &plan.trials {
            prop_assert_eq!(t.congruence, Congruence::of(t.cue_direction, t.target_side));
            prop_assert!((1900..=2300).contains(&t.total_ms()));
            prop_assert_eq!((t.cue_ms, t.target_ms), (400, 700));
        }
        prop_assert_eq!(generate_session(seed, &cfg).unwrap(), plan);
        prop_assert_eq!(generate_practice(seed, &cfg).unwrap().trials.len(), 30);
    }

    #[test]
    fn commands_stay_inside_the_joint_limits(m in map_strategy()) {
        let a = actuate(&m, DEFAULT_SCALE, DEFAULT_DEAD_ZONE_DEG);
        prop_assert!(a.command.theta_deg.abs() <= PAN_LIMIT_DEG);
        prop_assert!(a.command.phi_deg.abs() <= TILT_LIMIT_DEG);
        prop_assert!(a.normalized.0.abs() <= 1.0 && a.normalized.1.abs() <= 1.0);
    }

    #[test]
    fn mirrored_map_mirrors_the_gaze(m in map_strategy()) {
        prop_assume!(unique_peak(&m));
        let a = actuate(&m, DEFAULT_SCALE, DEFAULT_DEAD_ZONE_DEG);
        let b = actuate(&m.mirrored(), DEFAULT_SCALE, DEFAULT_DEAD_ZONE_DEG);
        prop_assert!((a.command.theta_deg + b.command.theta_deg).abs() < 1e-12);
        prop_assert!((a.command.phi_deg - b.command.phi_deg).abs() < 1e-12);
        prop_assert_eq!(b.decision, mirror(a.decision));
    }

    #[test]
    fn flat_map_never_commands_a_side(w in 2usize..12, h in 2usize..12, v in 0.0f64..5.0) {
        let m = FixationDensityMap::new(w, h, vec![v; w * h]).unwrap();
        prop_assert!(fdm_peak(&m).degenerate);
        prop_assert_eq!(actuate(&m, DEFAULT_SCALE, DEFAULT_DEAD_ZONE_DEG).decision, Response::NoResponse);
    }

    #[test]
    fn softmax_is_a_distribution_and_kl_is_shift_invariant(
        logits in prop::collection::vec(-8.0f64..8.0, 12),
        g in positive([1, 3, 4]),
        shift in -50.0f64..50.0,
    ) {
        let z = Tensor::new(vec![1, 3, 4], logits).unwrap();
        let s = spatial_softmax(&z).unwrap();
        prop_assert!((s.sum() - 1.0).abs() < 1e-12);
        let g = g.map(|v| v / g.sum());
        let (k1, d1) = kl_from_logits(&g, &z).unwrap();
        let (k2, d2) = kl_from_logits(&g, &z.map(|v| v + shift)).unwrap();
        prop_assert!(k1 >= -1e-12);
        prop_assert!((k1 - k2).abs() < 1e-9);
        prop_assert!(d1.zip_map(&d2, |a, b| (a - b).abs()).max() < 1e-12);
        prop_assert!(kl_loss(&g, &g).unwrap().abs() < 1e-12);
    }

    #[test]
    fn dam_weights_ignore_the_scale_of_a_stream(
        maps in prop::collection::vec(positive([1, 3, 4]), 8),
        k in 1usize..4,
        factor in 0.01f64..100.0,
    ) {
        let entries = maps
            .chunks(4)
            .map(|c| StackEntry { raw: c[0].clone(), ge: c[1].clone(), gf: c[2].clone(), ssl: c[3].clone() })
            .collect();
        let stack = FeatureMapStack::new(entries).unwrap();
        let w = dam_weights(&stack, 1.0).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x > 0.0));
        let scaled = dam_weights(&stack.with_stream_scaled(k, factor), 1.0).unwrap();
        for (a, b) in w.iter().zip(&scaled) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn anova_ignores_subject_offsets(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 4..20),
        offsets in prop::collection::vec(-5.0f64..5.0, 20),
    ) {
        let a = rm_anova_gg(&rows).unwrap();
        prop_assume!(a.ss_error > 1e-9);
        let shifted: Vec<Vec<f64>> = rows.iter().zip(&offsets).map(|(r, o)| r.iter().map(|v| v + o).collect()).collect();
        let b = rm_anova_gg(&shifted).unwrap();
        prop_assert!((a.f - b.f).abs() <= 1e-7 * (1.0 + a.f));
        prop_assert!((0.0..=1.0).contains(&a.p));
        prop_assert!(a.epsilon_gg >= 0.5 - 1e-12 && a.epsilon_gg <= 1.0 + 1e-12);
        prop_assert!((a.eta_p_sq - a.ss_effect / (a.ss_effect + a.ss_error)).abs() < 1e-12);
    }

    #[test]
    fn rt_filtering_is_idempotent(rts in prop::collection::vec(prop::option::of(100.0f64..900.0), 30..120), seed in any::<u64>()) {
        let plan = generate_session(seed, &ProtocolConfig::default()).unwrap();
        let records: Vec<ResponseRecord> = plan
            .trials
            .iter()
            .zip(&rts)
            .map(|(t, rt)| {
                let r = if rt.is_some() { Response::from(t.target_side) } else { Response::NoResponse };
                ResponseRecord::new(format!("p{}", t.trial_id % 3), Agent::Human, t, r, *rt)
            })
            .collect();
        for r in &records {
            prop_assert_eq!(r.correct, r.response.side() == Some(r.target_side));
        }
        let (once, _) = filter_rt(&records).unwrap();
        prop_assume!(!once.is_empty());
        let (twice, report) = filter_rt(&once).unwrap();
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(report.kept, once.len());
    }

    #[test]
    fn robot_records_carry_no_rt(seed in any::<u64>(), rt in 200.0f64..900.0) {
        let t = generate_session(seed, &ProtocolConfig::default()).unwrap().trials[0];
        prop_assert_eq!(ResponseRecord::new("r", Agent::Robot, &t, Response::Left, Some(rt)).rt_ms, None);
    }

    #[test]
    fn cue_maps_are_nonnegative(seed in any::<u64>(), len in 1usize..10, sigma in 0.0f64..0.5) {
        for cue in [CueDirection::Left, CueDirection::Center, CueDirection::Right] {
            let s = render_cue_maps(cue, CueChannel::Gf, len, sigma, seed);
            prop_assert_eq!(s.frames.len(), len);
            prop_assert!(s.frames.iter().all(|f| f.min() >= 0.0));
        }
    }

    #[test]
    fn degraded_audio_stays_in_range(seed in 0u64..1000, snr in 0.0f64..40.0, jitter in 0.0f64..20.0) {
        let clip = render_target_audio(Side::Left, 16_000, seed).unwrap();
        let deg = AudioDegradation { snr_db: Some(snr), gain_jitter_db: jitter };
        let out = degrade(&clip, &deg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(out.left.len(), out.right.len());
        prop_assert_eq!(out.left.len(), 16 * clip.duration_ms as usize);
        prop_assert!(out.left.iter().chain(&out.right).all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn config_survives_a_render_parse_round_trip(
        trials in 1usize..2000,
        snr in prop::option::of(0.0f64..40.0),
        jitter in 0.0f64..20.0,
        sessions in 1usize..100,
    ) {
        let mut c = HarnessConfig::default();
        c.ssl_data.trials = trials;
        c.noise.audio.snr_db = snr;
        c.noise.audio.gain_jitter_db = jitter;
        c.fusion_data.noise = c.noise;
        c.sessions = sessions;
        prop_assert_eq!(HarnessConfig::parse(&c.to_kv().render()).unwrap(), c);
    }
}
