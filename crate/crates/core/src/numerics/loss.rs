use super::ops::logsumexp;
use super::{same_shape, NumericsError, Tensor};

/// Floor applied to predictions before renormalization in [`kl_loss`].
pub const KL_FLOOR: f64 = 1e-8;

const UNIT_SUM_TOL: f64 = 1e-6;

fn check_distribution(name: &str, t: &Tensor) -> Result<(), NumericsError> {
    if let Some(i) = t.data().iter().position(|&v| v < 0.0) {
        return Err(NumericsError::Domain {
            op: "kl_loss",
            detail: format!("{name} has negative entry {} at flat index {i}", t.data()[i]),
        });
    }
    let s = t.sum();
    if (s - 1.0).abs() > UNIT_SUM_TOL {
        return Err(NumericsError::Domain {
            op: "kl_loss",
            detail: format!("{name} sums to {s}, not 1"),
        });
    }
    Ok(())
}

/// `Σ G·ln(G/S)` with `0·ln 0 = 0`. `S` is floored at [`KL_FLOOR`] and
/// renormalized first.
pub fn kl_loss(g: &Tensor, s: &Tensor) -> Result<f64, NumericsError> {
    same_shape("kl_loss", g, s)?;
    check_distribution("G", g)?;
    check_distribution("S", s)?;
    let floored_sum: f64 = s.data().iter().map(|&v| v.max(KL_FLOOR)).sum();
    let mut kl = 0.0;
    for (&gv, &sv) in g.data().iter().zip(s.data()) {
        if gv > 0.0 {
            kl += gv * (gv / (sv.max(KL_FLOOR) / floored_sum)).ln();
        }
    }
    Ok(kl)
}

/// KL from `G` to `softmax(logits)` over all entries, with its gradient with
/// respect to the logits (`softmax(logits)·ΣG − G`). Exact in log space; used
/// as the training objective.
pub fn kl_from_logits(g: &Tensor, logits: &Tensor) -> Result<(f64, Tensor), NumericsError> {
    same_shape("kl_from_logits", g, logits)?;
    if let Some(i) = g.data().iter().position(|&v| v < 0.0) {
        return Err(NumericsError::Domain {
            op: "kl_from_logits",
            detail: format!("target has negative entry at flat index {i}"),
        });
    }
    let lse = logsumexp(logits.data());
    let g_sum = g.sum();
    let mut kl = 0.0;
    for (&gv, &z) in g.data().iter().zip(logits.data()) {
        if gv > 0.0 {
            kl += gv * (gv.ln() - (z - lse));
        }
    }
    if !kl.is_finite() {
        return Err(NumericsError::NonFinite { what: "kl_from_logits".into() });
    }
    let grad = Tensor::from_parts(
        logits.shape().to_vec(),
        logits
            .data()
            .iter()
            .zip(g.data())
            .map(|(&z, &gv)| (z - lse).exp() * g_sum - gv)
            .collect(),
    );
    Ok((kl, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::spatial_softmax;
    use crate::numerics::InitSpec;
    use crate::rng;
    use rand::Rng;

    fn dist(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn hand_value() {
        let kl = kl_loss(&dist(&[0.5, 0.5]), &dist(&[0.25, 0.75])).unwrap();
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl - expect).abs() < 1e-12);
        assert!((kl - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn identical_distributions_give_zero() {
        let g = dist(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(kl_loss(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn negative_and_unnormalized_inputs_are_rejected() {
        assert!(matches!(
            kl_loss(&dist(&[1.5, -0.5]), &dist(&[0.5, 0.5])),
            Err(NumericsError::Domain { .. })
        ));
        assert!(kl_loss(&dist(&[0.5, 0.6]), &dist(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn gibbs_inequality() {
        let mut r = rng::stream(11, &[]);
        for _ in 0..1000 {
            let n = r.random_range(2..12);
            let mut a: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            let mut b: Vec<f64> = (0..n).map(|_| r.random::<f64>() + 1e-3).collect();
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            a.iter_mut().for_each(|v| *v /= sa);
            b.iter_mut().for_each(|v| *v /= sb);
            assert!(kl_loss(&dist(&a), &dist(&b)).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn logits_route_agrees_with_floored_route() {
        let z = InitSpec::UniformFanIn { fan_in: 1 }
            .sample(&[1, 4, 5], &mut rng::stream(3, &[]))
            .map(|v| 3.0 * v);
        let g = spatial_softmax(&z.map(|v| -v)).unwrap();
        let s = spatial_softmax(&z).unwrap();
        let (a, _) = kl_from_logits(&g, &z).unwrap();
        let b = kl_loss(&g, &s).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
