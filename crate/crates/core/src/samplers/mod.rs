//! One-step transition kernels over a cached [`ChainState`].

mod kernels;
mod state;
#[cfg(test)]
mod tests;

pub(crate) use kernels::{agrad_z_auxiliary, agrad_z_g, standard_normal_vec};
pub use kernels::{
    step_agrad_u, step_agrad_z, step_ellipt, step_mgrad, step_pcn, step_pcnl, step_pmala,
    MAX_SHRINKS,
};
pub use state::ChainState;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LgmError, Result};
use crate::spectral::{DeltaOperators, SpectralPrior};
use crate::targets::TargetModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "aGrad-z", alias = "agrad-z", alias = "agradz")]
    AGradZ,
    #[serde(rename = "aGrad-u", alias = "agrad-u", alias = "agradu")]
    AGradU,
    #[serde(rename = "mGrad", alias = "mgrad")]
    MGrad,
    #[serde(rename = "pCN", alias = "pcn")]
    Pcn,
    #[serde(rename = "pCNL", alias = "pcnl")]
    Pcnl,
    #[serde(rename = "pMALA", alias = "pmala")]
    Pmala,
    #[serde(rename = "Ellipt", alias = "ellipt")]
    Ellipt,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 7] = [
        SamplerKind::AGradZ,
        SamplerKind::AGradU,
        SamplerKind::MGrad,
        SamplerKind::Pcn,
        SamplerKind::Pcnl,
        SamplerKind::Pmala,
        SamplerKind::Ellipt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::AGradZ => "aGrad-z",
            SamplerKind::AGradU => "aGrad-u",
            SamplerKind::MGrad => "mGrad",
            SamplerKind::Pcn => "pCN",
            SamplerKind::Pcnl => "pCNL",
            SamplerKind::Pmala => "pMALA",
            SamplerKind::Ellipt => "Ellipt",
        }
    }

    pub fn has_step_size(self) -> bool {
        self != SamplerKind::Ellipt
    }

    /// Basis matvecs spent by one iteration once the chain is warm.
    pub fn matvecs_per_step(self) -> u64 {
        match self {
            SamplerKind::Pcn | SamplerKind::Ellipt => 1,
            SamplerKind::AGradZ | SamplerKind::Pcnl | SamplerKind::Pmala => 2,
            SamplerKind::AGradU | SamplerKind::MGrad => 3,
        }
    }

    pub fn default_initial_delta(self) -> f64 {
        match self {
            SamplerKind::AGradZ | SamplerKind::AGradU | SamplerKind::MGrad => 1.0,
            _ => 0.01,
        }
    }

    pub fn default_target_rate(self) -> f64 {
        match self {
            SamplerKind::Pcn => 0.25,
            _ => 0.55,
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = LgmError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "agradz" => SamplerKind::AGradZ,
            "agradu" => SamplerKind::AGradU,
            "mgrad" => SamplerKind::MGrad,
            "pcn" => SamplerKind::Pcn,
            "pcnl" => SamplerKind::Pcnl,
            "pmala" => SamplerKind::Pmala,
            "ellipt" | "ess" => SamplerKind::Ellipt,
            _ => return Err(LgmError::InvalidData(format!("unknown sampler `{s}`"))),
        })
    }
}

/// What happened during one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    /// Log MH ratio; `NaN` for slice moves.
    pub log_ratio: f64,
    pub likelihood_evals: u32,
}

/// Metropolis–Hastings decision in log space. A uniform is always drawn so
/// the random stream does not depend on the ratio.
pub fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    if log_ratio.is_nan() || log_ratio == f64::INFINITY {
        log::warn!("rejecting proposal with log ratio {log_ratio}");
        return false;
    }
    u.ln() < log_ratio
}

/// Advance `state` by one transition of `kind`. `ops` must be present for
/// every sampler with a step size.
pub fn step<T, R>(
    kind: SamplerKind,
    state: &mut ChainState,
    prior: &SpectralPrior,
    ops: Option<&DeltaOperators>,
    target: &T,
    rng: &mut R,
) -> Result<StepOutcome>
where
    T: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    if kind == SamplerKind::Ellipt {
        return step_ellipt(state, prior, target, rng);
    }
    let ops =
        ops.ok_or_else(|| LgmError::InvalidData(format!("{kind} needs step-size operators")))?;
    match kind {
        SamplerKind::AGradZ => step_agrad_z(state, prior, ops, target, rng),
        SamplerKind::AGradU => step_agrad_u(state, prior, ops, target, rng),
        SamplerKind::MGrad => step_mgrad(state, prior, ops, target, rng),
        SamplerKind::Pcn => step_pcn(state, prior, ops, target, rng),
        SamplerKind::Pcnl => step_pcnl(state, prior, ops, target, rng),
        SamplerKind::Pmala => step_pmala(state, prior, ops, target, rng),
        SamplerKind::Ellipt => unreachable!(),
    }
}
