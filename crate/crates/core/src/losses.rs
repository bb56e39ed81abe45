//! Adversarial and reconstruction objectives with analytic gradients.
//!
//! All reductions are means over every element (batch and spatial). Logs
//! are taken of values clamped to `[eps, 1 - eps]`; the clamp is part of
//! the function, so its derivative is zero outside that band.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;

/// Log clamp for 32-bit training.
pub const EPS_F32: f64 = 1e-7;
/// Log clamp for 64-bit gradient checks.
pub const EPS_F64: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconMode {
    Bce,
    L1,
}

impl ReconMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReconMode::Bce => "bce",
            ReconMode::L1 => "l1",
        }
    }
}

impl fmt::Display for ReconMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReconMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(ReconMode::Bce),
            "l1" => Ok(ReconMode::L1),
            other => Err(Error::InvalidInput(format!("unknown reconstruction loss {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub recon_mode: ReconMode,
    /// Weight of the reconstruction term.
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            recon_mode: ReconMode::Bce,
            lambda: 100.0,
            epsilon: EPS_F32,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidInput(format!("epsilon {} outside (0, 0.5)", self.epsilon)));
        }
        Ok(())
    }
}

/// Value of a loss together with its gradient(s).
#[derive(Clone, Debug, PartialEq)]
pub struct Graded<T> {
    pub value: T,
    pub grads: Vec<Vec<T>>,
}

/// `log(clamp(x))` and its derivative.
fn clamped_log<T: Scalar>(x: T, eps: T) -> (T, T) {
    let hi = T::one() - eps;
    if x <= eps {
        (eps.ln(), T::zero())
    } else if x >= hi {
        (hi.ln(), T::zero())
    } else {
        (x.ln(), x.recip())
    }
}

fn mean_scale<T: Scalar>(n: usize) -> T {
    T::of(1.0 / n as f64)
}

/// `-mean(log real) - mean(log(1 - fake))`; gradients w.r.t. `real`, `fake`.
pub fn adversarial_loss_d_graded<T: Scalar>(real: &[T], fake: &[T], eps: T) -> Graded<T> {
    let (sr, sf) = (mean_scale::<T>(real.len()), mean_scale::<T>(fake.len()));
    let mut value = T::zero();
    let mut dr = Vec::with_capacity(real.len());
    for &r in real {
        let (l, d) = clamped_log(r, eps);
        value = value - l * sr;
        dr.push(-d * sr);
    }
    let mut df = Vec::with_capacity(fake.len());
    for &f in fake {
        let (l, d) = clamped_log(T::one() - f, eps);
        value = value - l * sf;
        df.push(d * sf);
    }
    Graded {
        value,
        grads: vec![dr, df],
    }
}

pub fn adversarial_loss_d<T: Scalar>(real: &[T], fake: &[T], eps: T) -> T {
    adversarial_loss_d_graded(real, fake, eps).value
}

/// Non-saturating generator term `-mean(log fake)`.
pub fn adversarial_loss_g_graded<T: Scalar>(fake: &[T], eps: T) -> Graded<T> {
    let s = mean_scale::<T>(fake.len());
    let mut value = T::zero();
    let mut df = Vec::with_capacity(fake.len());
    for &f in fake {
        let (l, d) = clamped_log(f, eps);
        value = value - l * s;
        df.push(-d * s);
    }
    Graded {
        value,
        grads: vec![df],
    }
}

pub fn adversarial_loss_g<T: Scalar>(fake: &[T], eps: T) -> T {
    adversarial_loss_g_graded(fake, eps).value
}

/// BCE or L1 between estimate and binary target; gradient w.r.t. estimate.
pub fn reconstruction_loss_graded<T: Scalar>(estimate: &[T], target: &[T], mode: ReconMode, eps: T) -> Result<Graded<T>> {
    if estimate.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} values, target {}",
            estimate.len(),
            target.len()
        )));
    }
    let s = mean_scale::<T>(estimate.len());
    let mut value = T::zero();
    let mut de = Vec::with_capacity(estimate.len());
    for (&y, &t) in estimate.iter().zip(target) {
        match mode {
            ReconMode::Bce => {
                let (lp, dp) = clamped_log(y, eps);
                let (ln, dn) = clamped_log(T::one() - y, eps);
                value = value - (t * lp + (T::one() - t) * ln) * s;
                de.push((-t * dp + (T::one() - t) * dn) * s);
            }
            ReconMode::L1 => {
                let diff = y - t;
                value = value + diff.abs() * s;
                let sign = if diff > T::zero() {
                    T::one()
                } else if diff < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                de.push(sign * s);
            }
        }
    }
    Ok(Graded {
        value,
        grads: vec![de],
    })
}

pub fn reconstruction_loss<T: Scalar>(estimate: &[T], target: &[T], mode: ReconMode, eps: T) -> Result<T> {
    Ok(reconstruction_loss_graded(estimate, target, mode, eps)?.value)
}

/// Generator objective broken into its terms.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorLoss<T> {
    pub total: T,
    pub adversarial: T,
    pub reconstruction: T,
    /// d total / d fake scores.
    pub d_fake: Vec<T>,
    /// d total / d estimate.
    pub d_estimate: Vec<T>,
}

/// `adversarial_loss_g + lambda * reconstruction_loss`.
pub fn total_generator_loss<T: Scalar>(fake: &[T], estimate: &[T], target: &[T], config: &LossConfig) -> Result<GeneratorLoss<T>> {
    config.validate()?;
    let eps = T::of(config.epsilon);
    let lambda = T::of(config.lambda);
    let adv = adversarial_loss_g_graded(fake, eps);
    let rec = reconstruction_loss_graded(estimate, target, config.recon_mode, eps)?;
    let Graded { value: adv_value, grads: mut adv_grads } = adv;
    let Graded { value: rec_value, grads: mut rec_grads } = rec;
    Ok(GeneratorLoss {
        total: adv_value + lambda * rec_value,
        adversarial: adv_value,
        reconstruction: rec_value,
        d_fake: adv_grads.remove(0),
        d_estimate: rec_grads.remove(0).into_iter().map(|g| g * lambda).collect(),
    })
}

/// One logged breakdown of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub step: usize,
    pub adv_g: f64,
    pub recon: f64,
    pub total: f64,
    pub d: f64,
}

impl LossTerms {
    pub fn csv_header(mode: ReconMode) -> String {
        format!("step,L_adv_G,L_R_{mode},L_total,L_D")
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.adv_g, self.recon, self.total, self.d)
    }
}
