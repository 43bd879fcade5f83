//! Measurement model quality (MMQ) scores.
//!
//! An innovation from any measurement model is reduced to a normalized
//! innovation squared (NIS) value and mapped through a chi-square
//! normalization so channels with different sample counts score on the same
//! scale: a channel whose NIS sits exactly at the chi-square consistency
//! bound scores 0, better-than-bound scores positive, worse scores negative.
//! Unassociated (outlier) samples contribute a penalty before normalization.
//! Scores are capped to `[-MMQ_CAP, MMQ_CAP]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of score channels per hypothesis per frame.
pub const CHANNEL_COUNT: usize = 8;

/// Symmetric cap applied to every emitted score.
pub const MMQ_CAP: f64 = 10.0;

/// Floor inside the logarithm; the raw score diverges as NIS approaches 0.
pub const MMQ_FLOOR: f64 = 1e-9;

/// Identifies one of the eight score channels. The discriminant is the slot
/// index inside [`MmqFrame::channels`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    EgoLeftGeometry = 0,
    EgoRightGeometry = 1,
    AdjacentLeftGeometry = 2,
    AdjacentRightGeometry = 3,
    EgoLeftType = 4,
    EgoRightType = 5,
    AdjacentLeftType = 6,
    AdjacentRightType = 7,
}

impl Channel {
    pub const ALL: [Channel; CHANNEL_COUNT] = [
        Channel::EgoLeftGeometry,
        Channel::EgoRightGeometry,
        Channel::AdjacentLeftGeometry,
        Channel::AdjacentRightGeometry,
        Channel::EgoLeftType,
        Channel::EgoRightType,
        Channel::AdjacentLeftType,
        Channel::AdjacentRightType,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Eight nullable scores for one time step. On the wire `channels` is an
/// array of eight nullable floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmqFrame {
    pub t: usize,
    pub channels: [Option<f64>; CHANNEL_COUNT],
}

impl MmqFrame {
    pub fn empty(t: usize) -> Self {
        MmqFrame { t, channels: [None; CHANNEL_COUNT] }
    }
}

/// Per-hypothesis multivariate score series; one frame per time step while
/// the hypothesis is active.
pub type MmqSeries = Vec<MmqFrame>;

/// Chi-square normalization parameters: probability level and degrees of
/// freedom (the number of associated scalar samples).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Params {
    pub p: f64,
    pub dof: usize,
}

impl Chi2Params {
    pub fn new(p: f64, dof: usize) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("chi-square probability {p} not in (0, 1)")));
        }
        if dof < 1 {
            return Err(Error::Domain("chi-square dof must be >= 1".into()));
        }
        Ok(Chi2Params { p, dof })
    }
}

// --- chi-square distribution ------------------------------------------------

/// ln Γ(dof/2), exact recursion over integer and half-integer arguments.
fn ln_gamma_half(dof: usize) -> f64 {
    debug_assert!(dof >= 1);
    let mut acc;
    let mut a;
    if dof % 2 == 0 {
        // Γ(1) = 1
        acc = 0.0;
        a = 1.0;
    } else {
        // Γ(1/2) = sqrt(pi)
        acc = 0.5 * std::f64::consts::PI.ln();
        a = 0.5;
    }
    let target = dof as f64 / 2.0;
    while a + 0.5 < target + 0.25 {
        acc += a.ln();
        a += 1.0;
    }
    acc
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_ITMAX: usize = 500;

/// Regularized lower incomplete gamma P(a, x) by series expansion; valid for
/// x < a + 1.
fn gamma_p_series(a: f64, x: f64, ln_gamma_a: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut term = sum;
    for _ in 0..GAMMA_ITMAX {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma_a).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by continued fraction; valid
/// for x >= a + 1.
fn gamma_q_continued_fraction(a: f64, x: f64, ln_gamma_a: f64) -> f64 {
    const FPMIN: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=GAMMA_ITMAX {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma_a).exp() * h
}

/// Chi-square cumulative distribution function with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    debug_assert!(dof >= 1);
    if x <= 0.0 {
        return 0.0;
    }
    let a = dof as f64 / 2.0;
    let half_x = x / 2.0;
    let lg = ln_gamma_half(dof);
    if half_x < a + 1.0 {
        gamma_p_series(a, half_x, lg)
    } else {
        1.0 - gamma_q_continued_fraction(a, half_x, lg)
    }
}

/// Inverse chi-square CDF at probability `p` with `dof` degrees of freedom.
///
/// Bracketing bisection on the monotone CDF; the returned x satisfies
/// |CDF(x) - p| well below 1e-10 for p in [0, 1).
pub fn chi2inv(p: f64, dof: usize) -> Result<f64> {
    if dof < 1 {
        return Err(Error::Domain("chi2inv: dof must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("chi2inv: probability {p} not in [0, 1)")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let mut hi = (dof as f64).max(1.0);
    while chi2_cdf(hi, dof) < p {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Domain(format!("chi2inv: failed to bracket p = {p}")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..140 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// --- normalized innovation squared -------------------------------------------

/// NIS of a residual against an SPD innovation covariance: rᵀ S⁻¹ r.
pub fn nis(residual: &[f64], innovation_cov: &[Vec<f64>]) -> Result<f64> {
    let n = residual.len();
    if innovation_cov.len() != n || innovation_cov.iter().any(|row| row.len() != n) {
        return Err(Error::Domain("nis: residual and covariance dimensions differ".into()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let chol = cholesky(innovation_cov).ok_or(Error::NotPositiveDefinite)?;
    // Solve L y = r; NIS = yᵀ y.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = residual[i];
        for j in 0..i {
            acc -= chol[i][j] * y[j];
        }
        y[i] = acc / chol[i][i];
    }
    Ok(y.iter().map(|v| v * v).sum())
}

/// NIS fast path for a diagonal innovation covariance.
pub fn nis_diagonal(residual: &[f64], variances: &[f64]) -> f64 {
    debug_assert_eq!(residual.len(), variances.len());
    residual.iter().zip(variances).map(|(r, v)| r * r / v).sum()
}

fn cholesky(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

// --- score -------------------------------------------------------------------

/// Chi-square-normalized match-quality score.
///
/// `-ln(max(nis + penalty, MMQ_FLOOR) / chi2inv(p, dof))`, clamped to
/// `[-MMQ_CAP, MMQ_CAP]`. Channels with zero associated samples must not be
/// scored (they are reported missing by the caller).
pub fn mmq(nis: f64, penalty: f64, params: &Chi2Params) -> f64 {
    debug_assert!(nis >= 0.0 && penalty >= 0.0);
    let denom = chi2inv(params.p, params.dof).expect("validated chi-square params");
    mmq_with_denominator(nis, penalty, denom)
}

fn mmq_with_denominator(nis: f64, penalty: f64, denom: f64) -> f64 {
    let ratio = (nis + penalty).max(MMQ_FLOOR) / denom;
    (-ratio.ln()).clamp(-MMQ_CAP, MMQ_CAP)
}

/// Penalty for unassociated samples: each outlier costs one marginal sample
/// at the consistency boundary, `chi2inv(p, 1)`.
pub fn penalty(outlier_count: usize, params: &Chi2Params) -> f64 {
    if outlier_count == 0 {
        return 0.0;
    }
    outlier_count as f64 * chi2inv(params.p, 1).expect("validated chi-square params")
}

/// Pseudo-NIS for discrete type comparisons so the same normalization applies
/// to type channels: each mismatched sample contributes `chi2inv(p, 1)`, and
/// dof is the number of compared samples. Returns `None` for empty lists
/// (channel missing).
pub fn type_pseudo_nis<T: PartialEq>(observed: &[T], expected: &[T], p: f64) -> Option<(f64, usize)> {
    assert_eq!(observed.len(), expected.len(), "type lists must have equal length");
    if observed.is_empty() {
        return None;
    }
    let mismatches = observed.iter().zip(expected).filter(|(o, e)| o != e).count();
    let quantum = chi2inv(p, 1).expect("validated probability");
    Some((mismatches as f64 * quantum, observed.len()))
}

/// Caches `chi2inv(p, d)` for d = 1..=max_dof so per-frame scoring avoids the
/// CDF inversion.
#[derive(Debug, Clone)]
pub struct MmqScorer {
    p: f64,
    inv: Vec<f64>,
}

impl MmqScorer {
    pub fn new(p: f64, max_dof: usize) -> Result<Self> {
        Chi2Params::new(p, 1)?;
        let inv = (1..=max_dof.max(1)).map(|d| chi2inv(p, d)).collect::<Result<Vec<_>>>()?;
        Ok(MmqScorer { p, inv })
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    /// `chi2inv(p, 1)`, the per-outlier penalty quantum.
    pub fn penalty_quantum(&self) -> f64 {
        self.inv[0]
    }

    pub fn chi2inv(&self, dof: usize) -> f64 {
        assert!(dof >= 1 && dof <= self.inv.len(), "dof {dof} outside cached range");
        self.inv[dof - 1]
    }

    /// Score a channel from its NIS, outlier count and inlier dof. `None`
    /// when dof = 0: a channel with no associated samples is missing.
    pub fn score(&self, nis: f64, outlier_count: usize, dof: usize) -> Option<f64> {
        if dof == 0 {
            return None;
        }
        let penalty = outlier_count as f64 * self.penalty_quantum();
        Some(mmq_with_denominator(nis, penalty, self.chi2inv(dof)))
    }
}
