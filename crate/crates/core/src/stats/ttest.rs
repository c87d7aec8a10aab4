//! Two-sample location tests used to decide whether a mutated value reduced
//! energy. The baseline sample can be shifted down by a relative threshold
//! `t_d` first, which turns "any reduction" into "a reduction of at least
//! t_d"; once that scaling is applied the two samples no longer share a
//! variance, so the Welch form takes over from the pooled Student form.

use serde::{Deserialize, Serialize};

use super::special::student_t_cdf;
use super::StatsError;

/// Summary statistics of one sample of run energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    /// Sample variance (n - 1 denominator).
    pub variance: f64,
}

impl SampleStats {
    pub fn from_sample(xs: &[f64]) -> Result<Self, StatsError> {
        if xs.len() < 2 {
            return Err(StatsError::NotEnoughData {
                need: 2,
                got: xs.len(),
            });
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::InvalidInput(
                "sample contains a non-finite value".into(),
            ));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        Ok(SampleStats {
            n: xs.len(),
            mean,
            variance: ss / (n - 1.0),
        })
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Standard deviation as a fraction of the mean. Only defined for a
    /// positive mean, which holds for energy readings.
    pub fn norm_sd(&self) -> Option<f64> {
        (self.mean > 0.0).then(|| self.sd() / self.mean)
    }
}

/// Outcome of one one-sided two-sample test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    /// The t statistic.
    pub t: f64,
    /// Degrees of freedom; fractional for the Welch form.
    pub df: f64,
    /// One-sided p-value for the alternative mean(p) < mean(b).
    pub p: f64,
    /// Whether p < alpha.
    pub significant: bool,
}

/// Pooled-variance Student test of mean(p) < mean(b).
///
/// Both samples need at least two observations and a strictly positive
/// pooled variance.
pub fn student_t_test(p: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult, StatsError> {
    let sp = SampleStats::from_sample(p)?;
    let sb = SampleStats::from_sample(b)?;
    let df = (sp.n + sb.n - 2) as f64;
    let pooled =
        ((sp.n as f64 - 1.0) * sp.variance + (sb.n as f64 - 1.0) * sb.variance) / df;
    if pooled <= 0.0 {
        return Err(StatsError::DegenerateSamples(
            "pooled variance is zero; identical constant samples carry no signal".into(),
        ));
    }
    let se = (pooled * (1.0 / sp.n as f64 + 1.0 / sb.n as f64)).sqrt();
    let t = (sp.mean - sb.mean) / se;
    let pv = student_t_cdf(t, df);
    Ok(TTestResult {
        t,
        df,
        p: pv,
        significant: pv < alpha,
    })
}

/// Scales every baseline observation down by the relative threshold `t_d`,
/// yielding the sample the variant has to beat.
pub fn apply_threshold(b: &[f64], t_d: f64) -> Vec<f64> {
    debug_assert!((0.0..1.0).contains(&t_d));
    b.iter().map(|x| (1.0 - t_d) * x).collect()
}

/// Welch's unequal-variance test of mean(p) < mean(b), with
/// Welch-Satterthwaite degrees of freedom.
pub fn welch_t_test(p: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult, StatsError> {
    let sp = SampleStats::from_sample(p)?;
    let sb = SampleStats::from_sample(b)?;
    let vp = sp.variance / sp.n as f64;
    let vb = sb.variance / sb.n as f64;
    let se2 = vp + vb;
    if se2 <= 0.0 {
        return Err(StatsError::DegenerateSamples(
            "both samples have zero variance".into(),
        ));
    }
    let t = (sp.mean - sb.mean) / se2.sqrt();
    let df = se2 * se2 / (vp * vp / (sp.n as f64 - 1.0) + vb * vb / (sb.n as f64 - 1.0));
    let pv = student_t_cdf(t, df);
    Ok(TTestResult {
        t,
        df,
        p: pv,
        significant: pv < alpha,
    })
}

/// The per-value call: did this mutation reduce energy by more than the
/// fluctuation threshold?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    EnergyReducingCandidate,
    NotSignificant,
}

/// Decision for one (parameter, value) pair, minus the identity fields the
/// caller attaches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub baseline_mean: f64,
    pub variant_mean: f64,
    /// (variant - baseline) / baseline, against the unscaled baseline.
    pub relative_delta: f64,
    pub test: TTestResult,
    pub verdict: Verdict,
}

/// Tests variant runs `p` against baseline runs `b` at threshold `t_d`.
///
/// With `t_d == 0` this is the plain pooled test. With `t_d > 0` the
/// baseline is scaled down first and the Welch form is used, because the
/// scaling breaks the equal-variance assumption the pooled test rests on.
pub fn decide(p: &[f64], b: &[f64], t_d: f64, alpha: f64) -> Result<Decision, StatsError> {
    if !(0.0..1.0).contains(&t_d) {
        return Err(StatsError::InvalidInput(format!(
            "t_d must lie in [0, 1), got {t_d}"
        )));
    }
    let test = if t_d == 0.0 {
        student_t_test(p, b, alpha)?
    } else {
        welch_t_test(p, &apply_threshold(b, t_d), alpha)?
    };
    let sp = SampleStats::from_sample(p)?;
    let sb = SampleStats::from_sample(b)?;
    let verdict = if test.significant {
        Verdict::EnergyReducingCandidate
    } else {
        Verdict::NotSignificant
    };
    Ok(Decision {
        baseline_mean: sb.mean,
        variant_mean: sp.mean,
        relative_delta: (sp.mean - sb.mean) / sb.mean,
        test,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: [f64; 5] = [9.0, 10.0, 9.0, 10.0, 9.0];
    const B: [f64; 5] = [11.0, 12.0, 11.0, 12.0, 11.0];

    #[test]
    fn sample_stats_hand_case() {
        let s = SampleStats::from_sample(&[10.0, 10.2, 9.8, 10.1, 9.9]).unwrap();
        assert_eq!(s.mean, 10.0);
        assert!((s.sd() - 0.15811388300841897).abs() < 1e-12);
        assert!((s.norm_sd().unwrap() - 0.015811388300841897).abs() < 1e-12);
    }

    #[test]
    fn sample_stats_needs_two_points() {
        assert!(matches!(
            SampleStats::from_sample(&[1.0]),
            Err(StatsError::NotEnoughData { need: 2, got: 1 })
        ));
    }

    #[test]
    fn student_hand_case() {
        // Means 9.4 vs 11.4, both variances 0.3, so pooled variance 0.3 and
        // t = -2 / sqrt(0.12).
        let r = student_t_test(&P, &B, 0.05).unwrap();
        assert!((r.t - (-5.773502691896258)).abs() < 1e-12);
        assert_eq!(r.df, 8.0);
        assert!(r.p < 0.001);
        assert!(r.significant);
    }

    #[test]
    fn student_identical_means_give_half() {
        let a = [10.0, 10.5, 9.5, 10.2, 9.8];
        let r = student_t_test(&a, &a, 0.05).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 0.5).abs() < 1e-12);
        assert!(!r.significant);
    }

    #[test]
    fn student_shifted_up_is_not_significant() {
        let up: Vec<f64> = B.iter().map(|x| x + 5.0).collect();
        let r = student_t_test(&up, &B, 0.05).unwrap();
        assert!(r.t > 0.0);
        assert!(r.p > 0.5);
        assert!(!r.significant);
    }

    #[test]
    fn student_rejects_constant_samples() {
        let c = [4.0, 4.0, 4.0, 4.0];
        assert!(matches!(
            student_t_test(&c, &c, 0.05),
            Err(StatsError::DegenerateSamples(_))
        ));
    }

    #[test]
    fn threshold_scales_mean_and_sd_together() {
        let scaled = apply_threshold(&B, 0.03);
        let s0 = SampleStats::from_sample(&B).unwrap();
        let s1 = SampleStats::from_sample(&scaled).unwrap();
        assert!((s1.mean - 0.97 * s0.mean).abs() < 1e-12);
        assert!((s1.variance - 0.97 * 0.97 * s0.variance).abs() < 1e-12);
        // Normalized sd is invariant under the scaling.
        assert!((s1.norm_sd().unwrap() - s0.norm_sd().unwrap()).abs() < 1e-12);
        assert_eq!(apply_threshold(&B, 0.0), B.to_vec());
    }

    #[test]
    fn welch_equals_student_t_for_balanced_equal_variances() {
        // Same sizes and equal variances: identical t and df = n1 + n2 - 2.
        let s = student_t_test(&P, &B, 0.05).unwrap();
        let w = welch_t_test(&P, &B, 0.05).unwrap();
        assert!((w.t - s.t).abs() < 1e-12);
        assert!((w.df - 8.0).abs() < 1e-12);
    }

    #[test]
    fn welch_df_never_exceeds_pooled_df() {
        let b = [11.0, 14.0, 10.0, 15.0, 11.5];
        let s = student_t_test(&P, &b, 0.05).unwrap();
        let w = welch_t_test(&P, &b, 0.05).unwrap();
        assert!(w.df <= s.df + 1e-12);
        assert!(w.df > 1.0);
    }

    #[test]
    fn welch_tolerates_one_constant_sample() {
        let c = [10.0; 5];
        let r = welch_t_test(&P, &c, 0.05);
        assert!(r.is_ok());
    }

    #[test]
    fn decide_routes_by_threshold() {
        // 15% real reduction.
        let p: Vec<f64> = B.iter().map(|x| 0.85 * x).collect();
        let d0 = decide(&p, &B, 0.0, 0.05).unwrap();
        assert_eq!(d0.verdict, Verdict::EnergyReducingCandidate);
        assert_eq!(d0.test.df, 8.0);
        let d3 = decide(&p, &B, 0.03, 0.05).unwrap();
        assert_eq!(d3.verdict, Verdict::EnergyReducingCandidate);
        assert!((d3.relative_delta - (-0.15)).abs() < 1e-12);
        // A 1% dip does not clear a 3% threshold.
        let p1: Vec<f64> = B.iter().map(|x| 0.99 * x).collect();
        let d = decide(&p1, &B, 0.03, 0.05).unwrap();
        assert_eq!(d.verdict, Verdict::NotSignificant);
    }

    #[test]
    fn decide_is_one_sided() {
        let up: Vec<f64> = B.iter().map(|x| 1.2 * x).collect();
        let d = decide(&up, &B, 0.03, 0.05).unwrap();
        assert_eq!(d.verdict, Verdict::NotSignificant);
        assert!(d.relative_delta > 0.0);
    }

    #[test]
    fn decide_rejects_bad_threshold() {
        assert!(decide(&P, &B, 1.0, 0.05).is_err());
        assert!(decide(&P, &B, -0.1, 0.05).is_err());
    }

    #[test]
    fn decide_is_scale_invariant() {
        let p: Vec<f64> = B.iter().map(|x| 0.9 * x).collect();
        let a = decide(&p, &B, 0.03, 0.05).unwrap();
        for c in [0.25, 3.0, 1700.0] {
            let pc: Vec<f64> = p.iter().map(|x| c * x).collect();
            let bc: Vec<f64> = B.iter().map(|x| c * x).collect();
            let d = decide(&pc, &bc, 0.03, 0.05).unwrap();
            assert!((d.test.t - a.test.t).abs() < 1e-9, "c={c}");
            assert!((d.test.p - a.test.p).abs() < 1e-9, "c={c}");
            assert!((d.relative_delta - a.relative_delta).abs() < 1e-9);
        }
    }
}
