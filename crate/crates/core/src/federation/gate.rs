use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zonotope::CertEpsilon;

/// What the defender measures on a candidate global model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub normal_acc: f64,
    pub adv_acc: f64,
    pub certified_acc: f64,
    pub mean_cert_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateCriterion {
    NormalAcc,
    AdvAcc,
    CertifiedAcc,
    CertLoss,
}

impl fmt::Display for GateCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateCriterion::NormalAcc => "normal_acc",
            GateCriterion::AdvAcc => "adv_acc",
            GateCriterion::CertifiedAcc => "certified_acc",
            GateCriterion::CertLoss => "cert_loss",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected(GateCriterion),
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateThresholds {
    pub acc_retain_fraction: f64,
    pub loss_band_fraction: f64,
    pub eps_crt: f64,
    pub eps_adv: f64,
    /// With `false` only the two accuracy criteria are checked.
    pub check_cert: bool,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            acc_retain_fraction: 0.9,
            loss_band_fraction: 0.1,
            eps_crt: 0.1,
            eps_adv: 0.25,
            check_cert: true,
        }
    }
}

impl GateThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.acc_retain_fraction > 0.0 && self.acc_retain_fraction <= 1.0) {
            return Err(Error::config("acc_retain_fraction must lie in (0, 1]"));
        }
        if !(self.loss_band_fraction >= 0.0) || !self.loss_band_fraction.is_finite() {
            return Err(Error::config("loss_band_fraction must be non-negative"));
        }
        self.eps_crt()?;
        self.eps_adv()?;
        Ok(())
    }

    pub fn eps_crt(&self) -> Result<CertEpsilon> {
        CertEpsilon::crt(self.eps_crt)
    }

    pub fn eps_adv(&self) -> Result<CertEpsilon> {
        CertEpsilon::adv(self.eps_adv)
    }
}

/// Accept iff each accuracy keeps `acc_retain_fraction` of its previous value
/// and the certifiable loss stays within `loss_band_fraction·prev` of the
/// previous loss. Criteria are checked in that order; the first failure is
/// reported.
pub fn defender_gate(candidate: &Metrics, prev: &Metrics, th: &GateThresholds) -> Verdict {
    let keep = th.acc_retain_fraction;
    if candidate.normal_acc < keep * prev.normal_acc {
        return Verdict::Rejected(GateCriterion::NormalAcc);
    }
    if candidate.adv_acc < keep * prev.adv_acc {
        return Verdict::Rejected(GateCriterion::AdvAcc);
    }
    if th.check_cert {
        if candidate.certified_acc < keep * prev.certified_acc {
            return Verdict::Rejected(GateCriterion::CertifiedAcc);
        }
        if (candidate.mean_cert_loss - prev.mean_cert_loss).abs() > th.loss_band_fraction * prev.mean_cert_loss {
            return Verdict::Rejected(GateCriterion::CertLoss);
        }
    }
    Verdict::Accepted
}
