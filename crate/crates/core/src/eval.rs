//! Estimation metrics and paired significance testing.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty sequence")]
    Empty,
    #[error("ground truth is constant; R² is undefined")]
    ConstantTruth,
    #[error("paired test needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("differences have zero variance (mean difference {mean_diff}); t statistic undefined")]
    DegenerateVariance { mean_diff: f64 },
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Root-mean-square difference, in the units of the inputs.
pub fn rmse(theta: &[f64], theta_hat: &[f64]) -> Result<f64, EvalError> {
    check_pair(theta, theta_hat)?;
    let ss: f64 = theta.iter().zip(theta_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / theta.len() as f64).sqrt())
}

/// Coefficient of determination against the segment's own mean.
pub fn r_squared(theta: &[f64], theta_hat: &[f64]) -> Result<f64, EvalError> {
    check_pair(theta, theta_hat)?;
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    let ss_tot: f64 = theta.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ConstantTruth);
    }
    let ss_res: f64 = theta.iter().zip(theta_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Lanczos approximation (g = 7, n = 9) of `ln Γ(x)` for `x > 0`.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + G + 0.5;
    let sum = COEF[1..]
        .iter()
        .enumerate()
        .fold(COEF[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student-t cumulative distribution function.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    let tail = 0.5 * incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of the Student-t distribution by bisection on the CDF.
pub fn student_t_quantile(p: f64, dof: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must lie in (0, 1)");
    let (mut lo, mut hi) = (-1e3, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Result of a two-sided paired t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub t: f64,
    pub p: f64,
}

impl PairedTTest {
    /// `**` below 0.01, `*` below 0.05, empty otherwise.
    pub fn stars(&self) -> &'static str {
        significance_stars(self.p)
    }
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Two-sided paired t-test on `a - b` with `n - 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewPairs(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    // differences equal to rounding are treated as exactly constant
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if var.sqrt() <= 1e-14 * scale.max(f64::MIN_POSITIVE) || var == 0.0 {
        return Err(EvalError::DegenerateVariance { mean_diff: mean });
    }
    let sd = var.sqrt();
    let t = mean / (sd / (n as f64).sqrt());
    let dof = (n - 1) as f64;
    let p = incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
    Ok(PairedTTest {
        n,
        mean_diff: mean,
        sd_diff: sd,
        t,
        p,
    })
}

/// Metrics for one trial. RMSE is in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    pub trial: String,
    pub rmse_deg: f64,
    pub r2: f64,
}

impl TrialMetrics {
    /// Metrics of radian trajectories, with RMSE reported in degrees.
    pub fn from_radians(trial: impl Into<String>, theta: &[f64], theta_hat: &[f64]) -> Result<Self, EvalError> {
        Ok(Self {
            trial: trial.into(),
            rmse_deg: rmse(theta, theta_hat)?.to_degrees(),
            r2: r_squared(theta, theta_hat)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

fn aggregate(values: impl Iterator<Item = f64>) -> Aggregate {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Aggregate { mean, std }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub checkpoint: String,
    pub dataset_hash: String,
    pub trials: Vec<TrialMetrics>,
}

impl MetricReport {
    pub fn rmse(&self) -> Aggregate {
        aggregate(self.trials.iter().map(|t| t.rmse_deg))
    }

    pub fn r2(&self) -> Aggregate {
        aggregate(self.trials.iter().map(|t| t.r2))
    }

    /// Per-trial rows followed by an average row.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method: {}", self.method);
        let _ = writeln!(out, "checkpoint: {}", self.checkpoint);
        let _ = writeln!(out, "dataset: {}", self.dataset_hash);
        let _ = writeln!(out, "{:<24} {:>16} {:>16}", "trial", "RMSE (deg)", "R2");
        for t in &self.trials {
            let _ = writeln!(out, "{:<24} {:>16.4} {:>16.4}", t.trial, t.rmse_deg, t.r2);
        }
        if !self.trials.is_empty() {
            let (r, q) = (self.rmse(), self.r2());
            let _ = writeln!(
                out,
                "{:<24} {:>16} {:>16}",
                "Average",
                format!("{:.4}±{:.4}", r.mean, r.std),
                format!("{:.4}±{:.4}", q.mean, q.std)
            );
        }
        out
    }
}

/// Text block comparing two methods trial by trial on RMSE and R².
pub fn comparison_block(a: &MetricReport, b: &MetricReport) -> Result<String, EvalError> {
    let mut out = String::new();
    let _ = writeln!(out, "paired t-test: {} vs {}", a.method, b.method);
    let pick = |r: &MetricReport, f: fn(&TrialMetrics) -> f64| r.trials.iter().map(f).collect::<Vec<_>>();
    for (name, f) in [
        ("rmse_deg", (|t: &TrialMetrics| t.rmse_deg) as fn(&TrialMetrics) -> f64),
        ("r2", |t: &TrialMetrics| t.r2),
    ] {
        match paired_t_test(&pick(a, f), &pick(b, f)) {
            Ok(tt) => {
                let _ = writeln!(
                    out,
                    "{name:<10} n={} mean_diff={:.6} t={:.4} p={:.4e} {}",
                    tt.n,
                    tt.mean_diff,
                    tt.t,
                    tt.p,
                    tt.stars()
                );
            }
            Err(EvalError::DegenerateVariance { mean_diff }) => {
                let _ = writeln!(out, "{name:<10} degenerate: constant differences (mean_diff={mean_diff:.6})");
            }
            Err(EvalError::TooFewPairs(n)) => {
                let _ = writeln!(out, "{name:<10} untestable: {n} pair(s), at least 2 needed");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0; 5], &[2.0; 5]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(rmse(&[0.0; 4], &[1.0, -1.0, 1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[], &[]), Err(EvalError::Empty));
        assert_eq!(rmse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch(1, 2)));
    }

    #[test]
    fn r_squared_examples() {
        let th = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(r_squared(&th, &th).unwrap(), 1.0);
        assert_eq!(r_squared(&th, &[1.5; 4]).unwrap(), 0.0);
        assert!((r_squared(&th, &[0.0, 1.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(r_squared(&[2.0; 3], &[1.0, 2.0, 3.0]), Err(EvalError::ConstantTruth));
        assert!(r_squared(&th, &[3.0, 2.0, 1.0, 0.0]).unwrap() < 0.0);
    }

    proptest! {
        #[test]
        fn metric_symmetries(
            pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..50),
            shift in -10.0f64..10.0,
            scale in 0.1f64..10.0,
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let r = rmse(&a, &b).unwrap();
            prop_assert!((r - rmse(&b, &a).unwrap()).abs() <= 1e-15 * r.max(1.0));
            let sa: Vec<f64> = a.iter().map(|x| x * scale).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * scale).collect();
            prop_assert!((rmse(&sa, &sb).unwrap() - scale * r).abs() < 1e-12 * scale.max(1.0));
            if let Ok(q) = r_squared(&a, &b) {
                let ta: Vec<f64> = a.iter().map(|x| x + shift).collect();
                let tb: Vec<f64> = b.iter().map(|x| x + shift).collect();
                prop_assert!((r_squared(&ta, &tb).unwrap() - q).abs() < 1e-9 * q.abs().max(1.0));
                prop_assert!((r_squared(&sa, &sb).unwrap() - q).abs() < 1e-9 * q.abs().max(1.0));
                prop_assert!(q <= 1.0);
            }
        }
    }

    #[test]
    fn t_cdf_matches_reference_distribution() {
        for dof in [1.0, 2.0, 5.0, 10.0, 29.0, 200.0] {
            let reference = StudentsT::new(0.0, 1.0, dof).unwrap();
            for t in [-8.0, -2.5, -0.3, 0.0, 0.7, 1.96, 4.0, 12.0] {
                let got = student_t_cdf(t, dof);
                let want = reference.cdf(t);
                assert!((got - want).abs() < 1e-12, "dof {dof} t {t}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn tabulated_critical_values() {
        assert!((student_t_quantile(0.975, 5.0) - 2.5706).abs() < 1e-3);
        assert!((student_t_quantile(0.975, 5.0) - 2.570_581_835_636_314).abs() < 1e-9);
        assert!((student_t_quantile(0.995, 10.0) - 3.1693).abs() < 1e-3);
        assert!((student_t_quantile(0.95, 1.0) - 6.3138).abs() < 1e-3);
    }

    #[test]
    fn paired_test_matches_hand_formula() {
        let d = [2.1, 1.8, 2.4, 1.9, 2.2, 2.0];
        let zeros = [0.0; 6];
        let tt = paired_t_test(&d, &zeros).unwrap();
        let mean = 12.4 / 6.0;
        let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0;
        let want = mean / (var.sqrt() / 6f64.sqrt());
        assert!((tt.t - want).abs() < 1e-10);
        let p = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 5.0).unwrap().cdf(want));
        assert!((tt.p - p).abs() < 1e-10);
        assert_eq!(tt.stars(), "**");
    }

    #[test]
    fn degenerate_and_invalid_pairs() {
        let a = [1.0, 2.0, 3.0];
        assert!(matches!(paired_t_test(&a, &a), Err(EvalError::DegenerateVariance { mean_diff }) if mean_diff == 0.0));
        let ones = [1.0; 6];
        let zeros = [0.0; 6];
        assert!(matches!(paired_t_test(&ones, &zeros), Err(EvalError::DegenerateVariance { .. })));
        assert_eq!(paired_t_test(&[1.0], &[2.0]), Err(EvalError::TooFewPairs(1)));
    }

    #[test]
    fn stars_follow_thresholds() {
        assert_eq!(significance_stars(0.001), "**");
        assert_eq!(significance_stars(0.03), "*");
        assert_eq!(significance_stars(0.05), "");
    }

    #[test]
    fn report_table_and_comparison() {
        let mk = |method: &str, r: [f64; 3]| MetricReport {
            method: method.into(),
            checkpoint: "ckpt".into(),
            dataset_hash: "abc".into(),
            trials: r
                .iter()
                .enumerate()
                .map(|(i, &v)| TrialMetrics {
                    trial: format!("t{i}"),
                    rmse_deg: v,
                    r2: 1.0 - v / 100.0,
                })
                .collect(),
        };
        let a = mk("penn", [1.0, 2.0, 3.0]);
        let b = mk("phase1", [2.0, 3.5, 4.1]);
        assert!((a.rmse().mean - 2.0).abs() < 1e-15 && (a.rmse().std - 1.0).abs() < 1e-15);
        let table = a.table();
        assert!(table.contains("Average") && table.lines().count() == 8);
        let block = comparison_block(&a, &b).unwrap();
        assert!(block.contains("paired t-test") && block.contains("rmse_deg"));
    }
}
