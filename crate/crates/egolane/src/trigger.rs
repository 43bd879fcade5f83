//! Trigger functions.
//!
//! A trigger looks at the sorted hypothesis probabilities at time t and
//! decides whether to commit to the most probable hypothesis now (fire) or
//! wait for more data. Four linear forms are provided; in all of them the
//! decision is fire when the weighted sum is strictly positive and wait when
//! it is less than or equal to zero.
//!
//! - S1: gamma1 p' + gamma2 (p' - p'') + gamma3 t/T, a ramp that grows with
//!   elapsed time toward a fixed total length T.
//! - S2: gamma1 p' + gamma2 p'' + gamma3 (eta - t)/eta, with a time credit
//!   that shrinks toward a predefined total length eta.
//! - S3: gamma1 p' + gamma2 (p' - p'') + gamma3, time-independent.
//! - S4: gamma1 p' + gamma2 (p' - p''), time-independent with one parameter
//!   fewer, firing as early as the probabilities allow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default horizon for the time-dependent variants: 30 s at 40 Hz.
pub const DEFAULT_HORIZON: usize = 1200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerVariant {
    S1,
    S2,
    S3,
    S4,
}

impl TriggerVariant {
    pub const ALL: [TriggerVariant; 4] =
        [TriggerVariant::S1, TriggerVariant::S2, TriggerVariant::S3, TriggerVariant::S4];

    /// Number of tunable parameters.
    pub fn gene_count(self) -> usize {
        match self {
            TriggerVariant::S4 => 2,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TriggerVariant::S1 => "s1",
            TriggerVariant::S2 => "s2",
            TriggerVariant::S3 => "s3",
            TriggerVariant::S4 => "s4",
        }
    }
}

impl std::str::FromStr for TriggerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s1" => Ok(TriggerVariant::S1),
            "s2" => Ok(TriggerVariant::S2),
            "s3" => Ok(TriggerVariant::S3),
            "s4" => Ok(TriggerVariant::S4),
            other => Err(Error::Data(format!("unknown trigger variant `{other}`"))),
        }
    }
}

/// A trigger variant with its parameter vector (each component in [-1, 1])
/// and, for S1/S2, the time horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerParams {
    pub variant: TriggerVariant,
    pub gamma: Vec<f64>,
    pub horizon: usize,
}

impl TriggerParams {
    pub fn new(variant: TriggerVariant, gamma: Vec<f64>, horizon: usize) -> Result<Self> {
        if gamma.len() != variant.gene_count() {
            return Err(Error::Data(format!(
                "variant {} expects {} parameters, got {}",
                variant.name(),
                variant.gene_count(),
                gamma.len()
            )));
        }
        if gamma.iter().any(|g| !(-1.0..=1.0).contains(g)) {
            return Err(Error::Data("trigger parameters must lie in [-1, 1]".into()));
        }
        if horizon < 1 {
            return Err(Error::Data("trigger horizon must be >= 1".into()));
        }
        Ok(TriggerParams { variant, gamma, horizon })
    }
}

/// The sorted probability summary a trigger sees: highest probability p',
/// second-highest p'' (0 when only one hypothesis is active), the arg-max
/// hypothesis id and the current time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SortedProbs {
    pub p_prime: f64,
    pub p_second: f64,
    pub argmax_id: u32,
    pub t: usize,
}

/// Sort per-hypothesis probabilities. Ties pick the lower hypothesis id.
/// Returns `None` when no hypothesis is active, which ends the sequence with
/// no prediction.
pub fn sort_probs(probs: &[(u32, f64)], t: usize) -> Option<SortedProbs> {
    if probs.is_empty() {
        return None;
    }
    let mut best: Option<(u32, f64)> = None;
    let mut second = 0.0f64;
    for &(id, p) in probs {
        match best {
            None => best = Some((id, p)),
            Some((bid, bp)) => {
                if p > bp || (p == bp && id < bid) {
                    second = second.max(bp);
                    best = Some((id, p));
                } else {
                    second = second.max(p);
                }
            }
        }
    }
    let (argmax_id, p_prime) = best.unwrap();
    Some(SortedProbs { p_prime, p_second: second, argmax_id, t })
}

fn fires(sum: f64) -> bool {
    sum > 0.0
}

/// S1: fire when gamma1 p' + gamma2 (p' - p'') + gamma3 t/T > 0.
/// t/T is clamped to 1 when the series outlives the horizon.
pub fn s1(sp: &SortedProbs, gamma: &[f64], horizon: usize) -> bool {
    let time_ratio = (sp.t as f64 / horizon as f64).min(1.0);
    fires(gamma[0] * sp.p_prime + gamma[1] * (sp.p_prime - sp.p_second) + gamma[2] * time_ratio)
}

/// S2: fire when gamma1 p' + gamma2 p'' + gamma3 (eta - t)/eta > 0.
/// The time credit floors at 0 once t exceeds eta.
pub fn s2(sp: &SortedProbs, gamma: &[f64], horizon: usize) -> bool {
    let remaining = ((horizon as f64 - sp.t as f64) / horizon as f64).max(0.0);
    fires(gamma[0] * sp.p_prime + gamma[1] * sp.p_second + gamma[2] * remaining)
}

/// S3: fire when gamma1 p' + gamma2 (p' - p'') + gamma3 > 0.
pub fn s3(sp: &SortedProbs, gamma: &[f64]) -> bool {
    fires(gamma[0] * sp.p_prime + gamma[1] * (sp.p_prime - sp.p_second) + gamma[2])
}

/// S4: fire when gamma1 p' + gamma2 (p' - p'') > 0.
pub fn s4(sp: &SortedProbs, gamma: &[f64]) -> bool {
    fires(gamma[0] * sp.p_prime + gamma[1] * (sp.p_prime - sp.p_second))
}

/// Evaluate whichever variant `params` selects.
pub fn evaluate(params: &TriggerParams, sp: &SortedProbs) -> bool {
    match params.variant {
        TriggerVariant::S1 => s1(sp, &params.gamma, params.horizon),
        TriggerVariant::S2 => s2(sp, &params.gamma, params.horizon),
        TriggerVariant::S3 => s3(sp, &params.gamma),
        TriggerVariant::S4 => s4(sp, &params.gamma),
    }
}
