use super::{NumericsError, ParamSet};

/// A scalar loss over a parameter set with an analytic gradient.
pub trait Objective {
    fn loss(&self, params: &ParamSet) -> Result<f64, NumericsError>;

    /// Loss and gradient; the gradient has the same layout as `params`.
    fn loss_and_grad(&self, params: &ParamSet) -> Result<(f64, ParamSet), NumericsError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Path and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Fourth-order central differences against the analytic gradient at every
/// coordinate; relative error is `|a − n| / max(1e-8, |a| + |n|)`. The
/// stencil's truncation error is O(h⁴), so `h` around 1e-3 keeps both
/// truncation and roundoff far below the coordinate scale even where a
/// gradient is many orders smaller than the loss.
pub fn grad_check(objective: &impl Objective, params: &ParamSet, h: f64) -> Result<GradCheckReport, NumericsError> {
    let (l0, analytic) = objective.loss_and_grad(params)?;
    if !l0.is_finite() {
        return Err(NumericsError::NonFinite { what: "loss at base point".into() });
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let paths: Vec<String> = params.paths().map(str::to_string).collect();
    for path in paths {
        let a = analytic.get(&path)?.data().to_vec();
        for (k, &ak) in a.iter().enumerate() {
            let orig = probe.get(&path)?.data()[k];
            let mut at = |step: f64| -> Result<f64, NumericsError> {
                probe.values_mut(&path)?[k] = orig + step;
                let l = objective.loss(&probe)?;
                if !l.is_finite() {
                    return Err(NumericsError::NonFinite {
                        what: format!("loss while perturbing {path}[{k}]"),
                    });
                }
                Ok(l)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            probe.values_mut(&path)?[k] = orig;
            let n = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let rel = (ak - n).abs() / (ak.abs() + n.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((path.clone(), k));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{conv2d, conv2d_backward, InitSpec, Tensor};
    use crate::rng;

    struct Square;

    impl Objective for Square {
        fn loss(&self, p: &ParamSet) -> Result<f64, NumericsError> {
            Ok(p.get("w")?.data()[0].powi(2))
        }
        fn loss_and_grad(&self, p: &ParamSet) -> Result<(f64, ParamSet), NumericsError> {
            let w = p.get("w")?.data()[0];
            let mut g = p.zeros_like();
            g.values_mut("w")?[0] = 2.0 * w;
            Ok((w * w, g))
        }
    }

    #[test]
    fn quadratic() {
        let mut p = ParamSet::new();
        p.register("w", &[1], InitSpec::Constant(3.0), &mut rng::stream(0, &[])).unwrap();
        let (_, g) = Square.loss_and_grad(&p).unwrap();
        assert_eq!(g.get("w").unwrap().data()[0], 6.0);
        let r = grad_check(&Square, &p, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    /// Two stacked convolutions with a weighted-sum readout.
    struct ConvNet {
        x: Tensor,
        target: Tensor,
    }

    impl Objective for ConvNet {
        fn loss(&self, p: &ParamSet) -> Result<f64, NumericsError> {
            Ok(self.loss_and_grad(p)?.0)
        }
        fn loss_and_grad(&self, p: &ParamSet) -> Result<(f64, ParamSet), NumericsError> {
            let y1 = conv2d(&self.x, p.get("k1")?, Some(p.get("b1")?))?;
            let y2 = conv2d(&y1, p.get("k2")?, Some(p.get("b2")?))?;
            let loss = y2.data().iter().zip(self.target.data()).map(|(a, b)| a * b).sum();
            let mut g = p.zeros_like();
            let g2 = conv2d_backward(&y1, p.get("k2")?, &self.target)?;
            let g1 = conv2d_backward(&self.x, p.get("k1")?, &g2.input)?;
            g.assign("k2", &g2.kernel)?;
            g.assign("b2", &g2.bias)?;
            g.assign("k1", &g1.kernel)?;
            g.assign("b1", &g1.bias)?;
            Ok((loss, g))
        }
    }

    #[test]
    fn conv_network_gradients() {
        let mut r = rng::stream(21, &[]);
        let mut p = ParamSet::new();
        p.register("k1", &[3, 2, 3, 3], InitSpec::HeNormal { fan_in: 18 }, &mut r).unwrap();
        p.register("b1", &[3], InitSpec::UniformFanIn { fan_in: 1 }, &mut r).unwrap();
        p.register("k2", &[2, 3, 5, 5], InitSpec::HeNormal { fan_in: 75 }, &mut r).unwrap();
        p.register("b2", &[2], InitSpec::UniformFanIn { fan_in: 1 }, &mut r).unwrap();
        let obj = ConvNet {
            x: InitSpec::UniformFanIn { fan_in: 1 }.sample(&[2, 6, 7], &mut r),
            target: InitSpec::UniformFanIn { fan_in: 1 }.sample(&[2, 6, 7], &mut r),
        };
        let rep = grad_check(&obj, &p, 1e-3).unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        assert_eq!(rep.checked, p.num_values());
    }
}
