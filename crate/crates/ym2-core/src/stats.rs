//! Monte-Carlo summaries, comparisons, log-log slope fits and a weighted
//! Kolmogorov-Smirnov test.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Streaming mean and variance (Welford), mergeable by Chan's formula.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Accumulator) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        self.n = n;
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> MCEstimate {
        let stderr = if self.n < 2 { 0.0 } else { (self.variance() / self.n as f64).sqrt() };
        MCEstimate { mean: self.mean, stderr, n: self.n }
    }
}

/// `(mean, standard error, sample count)`. `n = 0` marks an exact value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl MCEstimate {
    pub fn exact(v: f64) -> Self {
        MCEstimate { mean: v, stderr: 0.0, n: 0 }
    }

    pub fn is_exact(&self) -> bool {
        self.n == 0
    }

    /// Pools two estimates of the same quantity from independent samples.
    pub fn merge(&self, o: &MCEstimate) -> MCEstimate {
        let mut a = self.to_accumulator();
        a.merge(&o.to_accumulator());
        a.estimate()
    }

    fn to_accumulator(&self) -> Accumulator {
        let n = self.n;
        let m2 = if n < 2 { 0.0 } else { self.stderr * self.stderr * n as f64 * (n - 1) as f64 };
        Accumulator { n, mean: self.mean, m2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub lhs: MCEstimate,
    pub rhs: MCEstimate,
    /// Standard error of `lhs - rhs`; from the paired differences when the two
    /// sides share samples.
    pub diff_stderr: f64,
    pub z: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn report(lhs: MCEstimate, rhs: MCEstimate, se: f64, threshold: f64) -> ComparisonReport {
    let d = lhs.mean - rhs.mean;
    let (z, pass) = if se > 0.0 {
        (d / se, d.abs() <= threshold * se)
    } else {
        let tiny = 1e-12 * (1.0 + lhs.mean.abs().max(rhs.mean.abs()));
        (if d.abs() <= tiny { 0.0 } else { f64::INFINITY.copysign(d) }, d.abs() <= tiny)
    };
    ComparisonReport { lhs, rhs, diff_stderr: se, z, threshold, pass }
}

/// Independent comparison: `pass <=> |lhs - rhs| <= threshold * sqrt(se_l^2 + se_r^2)`.
pub fn compare(lhs: MCEstimate, rhs: MCEstimate, threshold: f64) -> ComparisonReport {
    report(lhs, rhs, lhs.stderr.hypot(rhs.stderr), threshold)
}

/// Common-random-number comparison: `diff` estimates `lhs - rhs` replica by replica.
pub fn compare_paired(lhs: MCEstimate, rhs: MCEstimate, diff: MCEstimate, threshold: f64) -> ComparisonReport {
    report(lhs, rhs, diff.stderr, threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// 95% confidence band for the slope (Student t).
    pub band: (f64, f64),
}

/// Least-squares fit of `ln y = intercept + slope ln x`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = lx.len() as f64 - 2.0;
    let (se, band) = if dof >= 1.0 {
        let rss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        let se = (rss / dof / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof).expect("valid dof").inverse_cdf(0.975);
        (se, (slope - t * se, slope + t * se))
    } else {
        (f64::NAN, (f64::NEG_INFINITY, f64::INFINITY))
    };
    Ok(SlopeFit { slope, intercept, slope_stderr: se, band })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub effective_n: f64,
    pub p_value: f64,
}

/// Kolmogorov distribution tail `Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let t = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { t } else { -t };
        if t < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test of weighted samples against `cdf`; the sample size is
/// the Kish effective size `(sum w)^2 / sum w^2`.
pub fn ks_weighted(samples: &[f64], weights: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if samples.len() != weights.len() || samples.is_empty() {
        return Err(Error::InvalidArgument("need equally many samples and weights".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument("weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all weights vanish".into()));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
    let mut acc = 0.0;
    let mut d: f64 = 0.0;
    for &i in &idx {
        let f = cdf(samples[i]);
        d = d.max((f - acc / total).abs());
        acc += weights[i];
        d = d.max((acc / total - f).abs());
    }
    let ne = total * total / weights.iter().map(|w| w * w).sum::<f64>();
    let sq = ne.sqrt();
    let p = kolmogorov_q((sq + 0.12 + 0.11 / sq) * d);
    Ok(KsResult { statistic: d, effective_n: ne, p_value: p })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulator_matches_two_pass() {
        let xs: Vec<f64> = (0..100).map(|k| ((k * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let mut a = Accumulator::new();
        xs.iter().for_each(|&x| a.push(x));
        let m = xs.iter().sum::<f64>() / 100.0;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 99.0;
        assert!((a.mean() - m).abs() < 1e-14);
        assert!((a.variance() - v).abs() < 1e-13);
        let (mut l, mut r) = (Accumulator::new(), Accumulator::new());
        xs[..37].iter().for_each(|&x| l.push(x));
        xs[37..].iter().for_each(|&x| r.push(x));
        l.merge(&r);
        assert!((l.mean() - m).abs() < 1e-14 && (l.variance() - v).abs() < 1e-13);
    }

    #[test]
    fn comparison_examples() {
        let e = MCEstimate { mean: 1.0, stderr: 0.1, n: 100 };
        let r = compare(e, e, 3.0);
        assert!(r.pass && r.z == 0.0);
        let far = MCEstimate { mean: 1.0 + 10.0 * 0.1 * 2f64.sqrt(), ..e };
        assert!(!compare(far, e, 3.0).pass);
        let r = compare(e, MCEstimate::exact(1.25), 3.0);
        assert!((r.z + 2.5).abs() < 1e-12 && r.pass);
        assert!(compare(MCEstimate::exact(0.0), MCEstimate::exact(0.0), 3.0).pass);
    }

    #[test]
    fn slope_fit_recovers_power() {
        let xs = [0.4, 0.2, 0.1, 0.05];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert!(fit_loglog(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn ks_uniform_grid_passes() {
        let xs: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        let r = ks_weighted(&xs, &vec![1.0; 1000], |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(r.statistic < 1e-3 && r.p_value > 0.99);
        let r = ks_weighted(&xs, &vec![1.0; 1000], |x| (x * x).clamp(0.0, 1.0)).unwrap();
        assert!(r.p_value < 1e-6);
    }
}
