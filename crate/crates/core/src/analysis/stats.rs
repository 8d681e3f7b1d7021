use serde::Serialize;

use super::special::{f_sf, t_two_sided};
use super::AnalysisError;

/// One-way repeated-measures ANOVA with the Greenhouse–Geisser correction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaResult {
    pub f: f64,
    /// Corrected degrees of freedom `ε·(k−1)` and `ε·(k−1)(n−1)`.
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
    pub eta_p_sq: f64,
    pub epsilon_gg: f64,
    pub df1_uncorrected: f64,
    pub df2_uncorrected: f64,
    pub p_uncorrected: f64,
    pub ss_effect: f64,
    pub ss_error: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with `n − 1` in the denominator.
fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn check_matrix(values: &[Vec<f64>]) -> Result<(usize, usize), AnalysisError> {
    let n = values.len();
    let k = values.first().map_or(0, Vec::len);
    if k < 2 || n < 3 {
        return Err(AnalysisError::InsufficientData(format!(
            "repeated-measures design needs k ≥ 2 conditions and n ≥ 3 participants, got k = {k}, n = {n}"
        )));
    }
    for (i, row) in values.iter().enumerate() {
        if row.len() != k {
            return Err(AnalysisError::IncompleteDesign(format!(
                "participant row {i} has {} cells, expected {k}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(AnalysisError::IncompleteDesign(format!(
                "participant row {i}, condition {j} is missing or non-finite"
            )));
        }
    }
    Ok((n, k))
}

/// Greenhouse–Geisser ε from the double-centered condition covariance,
/// clamped to `[1/(k−1), 1]`.
pub fn greenhouse_geisser_epsilon(values: &[Vec<f64>]) -> Result<f64, AnalysisError> {
    let (n, k) = check_matrix(values)?;
    let col_means: Vec<f64> = (0..k).map(|j| values.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut s = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            s[a][b] = values
                .iter()
                .map(|r| (r[a] - col_means[a]) * (r[b] - col_means[b]))
                .sum::<f64>()
                / (n as f64 - 1.0);
        }
    }
    let row_means: Vec<f64> = s.iter().map(|r| mean(r)).collect();
    let grand = mean(&row_means);
    let mut trace = 0.0;
    let mut sq = 0.0;
    for a in 0..k {
        for b in 0..k {
            let c = s[a][b] - row_means[a] - row_means[b] + grand;
            sq += c * c;
            if a == b {
                trace += c;
            }
        }
    }
    let lower = 1.0 / (k as f64 - 1.0);
    if sq <= 0.0 {
        return Ok(1.0);
    }
    Ok((trace * trace / ((k as f64 - 1.0) * sq)).clamp(lower, 1.0))
}

/// `values[i][j]` is participant `i` in condition `j`.
pub fn rm_anova_gg(values: &[Vec<f64>]) -> Result<AnovaResult, AnalysisError> {
    let (n, k) = check_matrix(values)?;
    let nf = n as f64;
    let kf = k as f64;
    let grand = values.iter().flatten().sum::<f64>() / (nf * kf);
    let col_means: Vec<f64> = (0..k).map(|j| values.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let row_means: Vec<f64> = values.iter().map(|r| mean(r)).collect();
    let ss_effect = nf * col_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let mut ss_error = 0.0;
    for (row, rm) in values.iter().zip(&row_means) {
        for (v, cm) in row.iter().zip(&col_means) {
            let e = v - rm - cm + grand;
            ss_error += e * e;
        }
    }
    let df1 = kf - 1.0;
    let df2 = (kf - 1.0) * (nf - 1.0);
    let f = if ss_effect == 0.0 {
        0.0
    } else if ss_error == 0.0 {
        f64::INFINITY
    } else {
        (ss_effect / df1) / (ss_error / df2)
    };
    let epsilon = greenhouse_geisser_epsilon(values)?;
    let eta = if ss_effect + ss_error > 0.0 {
        ss_effect / (ss_effect + ss_error)
    } else {
        0.0
    };
    Ok(AnovaResult {
        f,
        df1: epsilon * df1,
        df2: epsilon * df2,
        p: f_sf(f, epsilon * df1, epsilon * df2),
        eta_p_sq: eta,
        epsilon_gg: epsilon,
        df1_uncorrected: df1,
        df2_uncorrected: df2,
        p_uncorrected: f_sf(f, df1, df2),
        ss_effect,
        ss_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseResult {
    pub a: usize,
    pub b: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_uncorrected: f64,
    pub p_corrected: f64,
    /// All paired differences equal and nonzero: `t` is infinite.
    pub exact_difference: bool,
}

/// Paired t-tests over every condition pair `(a < b)`, Bonferroni-corrected
/// by the number of pairs.
pub fn bonferroni_pairwise(values: &[Vec<f64>]) -> Result<Vec<PairwiseResult>, AnalysisError> {
    let (n, k) = check_matrix(values)?;
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    let m = pairs.len() as f64;
    Ok(pairs
        .into_iter()
        .map(|(a, b)| {
            let d: Vec<f64> = values.iter().map(|r| r[a] - r[b]).collect();
            let md = mean(&d);
            let sd = variance(&d).sqrt();
            let df = n as f64 - 1.0;
            let (t, exact) = if sd == 0.0 {
                if md == 0.0 {
                    (0.0, false)
                } else {
                    (md.signum() * f64::INFINITY, true)
                }
            } else {
                (md / (sd / (n as f64).sqrt()), false)
            };
            let p = t_two_sided(t, df);
            PairwiseResult {
                a,
                b,
                mean_diff: md,
                t,
                df,
                p_uncorrected: p,
                p_corrected: (p * m).min(1.0),
                exact_difference: exact,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// Student's two-sample t-test with pooled variance.
pub fn independent_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult, AnalysisError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AnalysisError::InsufficientData(format!(
            "two-sample t-test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let (ma, mb) = (mean(a), mean(b));
    let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / df;
    let t = if pooled == 0.0 {
        if ma == mb {
            0.0
        } else {
            (ma - mb).signum() * f64::INFINITY
        }
    } else {
        (ma - mb) / (pooled * (1.0 / na + 1.0 / nb)).sqrt()
    };
    Ok(TTestResult {
        t,
        df,
        p: t_two_sided(t, df),
        mean_a: ma,
        mean_b: mb,
    })
}
