//! Secure key rate of a single decoy-state BB84 link (vacuum + weak decoy)
//! under the GLLP framework, with Chernoff-bound finite-size corrections.
//!
//! Everything here is a pure function of its inputs. The network computes
//! each link's rate once at load time and treats it as constant afterwards.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("domain error: {0}")]
    Domain(String),
    /// Decoy estimation produced a non-positive single-photon gain, the
    /// statistics cannot certify any secret bits.
    #[error("single-photon estimation failed: {0}")]
    EstimationFailed(&'static str),
}

/// Which gain the error-correction leakage term is charged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EcLeakageBasis {
    /// `f_ec * Q_mu * H(E_mu)`: leakage over every detected signal pulse.
    #[default]
    Detected,
    /// `q * f_ec * Q_mu * H(E_mu)`: leakage over sifted pulses only.
    Sifted,
}

/// Parameters of one QKD device pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QkdDeviceParams {
    /// Pulse repetition rate (Hz).
    pub f_req: f64,
    /// Sifting coefficient.
    pub q: f64,
    /// Signal intensity.
    pub mu: f64,
    /// Weak decoy intensity.
    pub nu: f64,
    /// Vacuum decoy intensity, must be zero.
    pub phi: f64,
    /// Receiver transmittance including detector efficiency.
    pub eta_bob: f64,
    pub e_det: f64,
    pub y0: f64,
    pub e0: f64,
    pub f_ec: f64,
    pub n_mu: f64,
    pub n_nu: f64,
    pub n_phi: f64,
    /// Composite security bound; the Chernoff epsilon is half of it.
    pub sigma: f64,
    /// Fiber attenuation (dB/km).
    pub alpha: f64,
    pub ec_leakage: EcLeakageBasis,
}

impl Default for QkdDeviceParams {
    fn default() -> Self {
        Self {
            f_req: 1e9,
            q: 0.9,
            mu: 0.4,
            nu: 0.1,
            phi: 0.0,
            eta_bob: 0.1,
            e_det: 0.01,
            y0: 2.1e-5,
            e0: 0.5,
            f_ec: 1.15,
            n_mu: 1.6e10,
            n_nu: 2e9,
            n_phi: 2e9,
            sigma: 5.73e-7,
            alpha: 0.2,
            ec_leakage: EcLeakageBasis::Detected,
        }
    }
}

impl QkdDeviceParams {
    pub fn epsilon(&self) -> f64 {
        self.sigma / 2.0
    }

    /// Checks every parameter invariant, returning one message per violation.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        let finite = [
            self.f_req, self.q, self.mu, self.nu, self.phi, self.eta_bob, self.e_det, self.y0,
            self.e0, self.f_ec, self.n_mu, self.n_nu, self.n_phi, self.sigma, self.alpha,
        ]
        .iter()
        .all(|v| v.is_finite());
        need(finite, "all device parameters must be finite");
        need(self.f_req > 0.0, "f_req must be positive");
        need(self.q > 0.0 && self.q <= 1.0, "q must lie in (0, 1]");
        need(
            self.nu > 0.0 && self.nu < self.mu,
            "decoy constraint violated: require 0 < nu < mu",
        );
        need(self.phi == 0.0, "vacuum decoy intensity phi must be 0");
        need(self.eta_bob > 0.0 && self.eta_bob <= 1.0, "eta_bob must lie in (0, 1]");
        need((0.0..0.5).contains(&self.e_det), "e_det must lie in [0, 0.5)");
        need(self.y0 > 0.0 && self.y0 < 1.0, "y0 must lie in (0, 1)");
        need(self.e0 == 0.5, "e0 must be 0.5");
        need(self.f_ec >= 1.0, "f_ec must be >= 1");
        need(
            self.n_mu > 0.0 && self.n_nu > 0.0 && self.n_phi > 0.0,
            "pulse counts n_mu, n_nu, n_phi must be positive",
        );
        need(
            self.sigma > 0.0 && self.sigma < 2.0,
            "sigma must lie in (0, 2) so that epsilon = sigma/2 is in (0, 1)",
        );
        need(self.alpha >= 0.0, "alpha must be non-negative");
        out
    }

    pub fn validate(&self) -> Result<(), RateError> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(msg) => Err(RateError::Domain(msg)),
        }
    }
}

/// Observed gains and error rates for the signal, weak decoy and vacuum states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedStatistics {
    pub q_mu: f64,
    pub q_nu: f64,
    pub q_phi: f64,
    pub e_mu: f64,
    pub e_nu: f64,
    pub e_phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceBound {
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceBound {
    pub fn point(value: f64) -> Self {
        Self { lower: value, upper: value }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Bounds on the expected gains and error rates that enter the decoy estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateBounds {
    pub gain_mu: ConfidenceBound,
    pub gain_nu: ConfidenceBound,
    pub gain_phi: ConfidenceBound,
    pub err_nu: ConfidenceBound,
    pub err_phi: ConfidenceBound,
}

impl StateBounds {
    /// Chernoff bounds at the device's sample sizes and epsilon.
    pub fn finite(stats: &ObservedStatistics, params: &QkdDeviceParams) -> Result<Self, RateError> {
        let eps = params.epsilon();
        Ok(Self {
            gain_mu: chernoff_bounds(stats.q_mu, params.n_mu, eps)?,
            gain_nu: chernoff_bounds(stats.q_nu, params.n_nu, eps)?,
            gain_phi: chernoff_bounds(stats.q_phi, params.n_phi, eps)?,
            err_nu: chernoff_bounds(stats.e_nu, params.n_nu * stats.q_nu, eps)?,
            err_phi: chernoff_bounds(stats.e_phi, params.n_phi * stats.q_phi, eps)?,
        })
    }

    /// Zero-width bounds, the infinite-sample limit.
    pub fn exact(stats: &ObservedStatistics) -> Self {
        Self {
            gain_mu: ConfidenceBound::point(stats.q_mu),
            gain_nu: ConfidenceBound::point(stats.q_nu),
            gain_phi: ConfidenceBound::point(stats.q_phi),
            err_nu: ConfidenceBound::point(stats.e_nu),
            err_phi: ConfidenceBound::point(stats.e_phi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglePhotonEstimate {
    pub y1_lower: f64,
    pub q1_lower: f64,
    pub e1_upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecureRateResult {
    /// Secret bits per sent pulse.
    pub r_per_pulse: f64,
    /// Secret bits per second.
    pub r_k: f64,
    pub y1_lower: f64,
    pub q1_lower: f64,
    pub e1_upper: f64,
}

impl SecureRateResult {
    fn zero() -> Self {
        Self { r_per_pulse: 0.0, r_k: 0.0, y1_lower: 0.0, q1_lower: 0.0, e1_upper: 0.5 }
    }
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64, RateError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(RateError::Domain(format!("entropy argument {x} outside [0, 1]")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Overall transmittance of fiber plus receiver: `eta_bob * 10^(-alpha L / 10)`.
pub fn channel_transmittance(length_km: f64, params: &QkdDeviceParams) -> Result<f64, RateError> {
    if !(length_km >= 0.0) || !length_km.is_finite() {
        return Err(RateError::Domain(format!("fiber length {length_km} km must be >= 0")));
    }
    Ok(params.eta_bob * 10f64.powf(-params.alpha * length_km / 10.0))
}

pub fn observed_statistics(eta: f64, params: &QkdDeviceParams) -> ObservedStatistics {
    let state = |intensity: f64| {
        // 1 - e^{-eta x}, computed without cancellation for tiny eta
        let detected = -(-eta * intensity).exp_m1();
        let gain = detected + params.y0;
        let err = (params.e0 * params.y0 + params.e_det * detected) / gain;
        (gain, err)
    };
    let (q_mu, e_mu) = state(params.mu);
    let (q_nu, e_nu) = state(params.nu);
    ObservedStatistics { q_mu, q_nu, q_phi: params.y0, e_mu, e_nu, e_phi: params.e0 }
}

/// Chernoff confidence interval for an observed rate over `trials` samples.
///
/// The lower edge is clamped at zero.
pub fn chernoff_bounds(rate: f64, trials: f64, epsilon: f64) -> Result<ConfidenceBound, RateError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(RateError::Domain(format!("rate {rate} outside [0, 1]")));
    }
    if !(trials > 0.0) || !trials.is_finite() {
        return Err(RateError::Domain(format!("trial count {trials} must be positive")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(RateError::Domain(format!("epsilon {epsilon} outside (0, 1)")));
    }
    let ln_lower = -1.5 * epsilon.ln();
    let ln_upper = 16f64.ln() - 4.0 * epsilon.ln();
    let lower = rate - (2.0 * rate * ln_lower / trials).sqrt();
    let upper = rate + (2.0 * rate * ln_upper / trials).sqrt();
    Ok(ConfidenceBound { lower: lower.max(0.0), upper })
}

/// Vacuum + weak decoy estimate of the single-photon yield, gain and error rate.
pub fn estimate_single_photon(
    bounds: &StateBounds,
    params: &QkdDeviceParams,
) -> Result<SinglePhotonEstimate, RateError> {
    let (mu, nu) = (params.mu, params.nu);
    if !(mu > nu && nu > 0.0) {
        return Err(RateError::Domain("decoy constraint violated: require 0 < nu < mu".into()));
    }
    let spread = mu * nu - nu * nu;
    let mu2 = mu * mu;
    let weighted = |background: f64| {
        bounds.gain_nu.lower * nu.exp()
            - (nu * nu / mu2) * bounds.gain_mu.upper * mu.exp()
            - ((mu2 - nu * nu) / mu2) * background
    };

    let y1_lower = (mu / spread * weighted(params.y0)).max(0.0);
    let core = weighted(bounds.gain_phi.upper);
    if !(core > 0.0) {
        return Err(RateError::EstimationFailed("decoy numerator is not positive"));
    }
    let q1_lower = mu2 * (-mu).exp() / spread * core;
    let errors = bounds.gain_nu.upper * bounds.err_nu.upper * nu.exp()
        - bounds.gain_phi.lower * bounds.err_phi.lower;
    let e1_upper = (spread / (mu * nu) * errors / core).clamp(0.0, 0.5);
    Ok(SinglePhotonEstimate { y1_lower, q1_lower, e1_upper })
}

/// Key rate from already computed statistics and bounds.
pub fn rate_from_estimates(
    stats: &ObservedStatistics,
    bounds: &StateBounds,
    params: &QkdDeviceParams,
) -> Result<SecureRateResult, RateError> {
    let single = match estimate_single_photon(bounds, params) {
        Ok(s) => s,
        Err(RateError::EstimationFailed(_)) => return Ok(SecureRateResult::zero()),
        Err(e) => return Err(e),
    };
    let leakage_gain = match params.ec_leakage {
        EcLeakageBasis::Detected => stats.q_mu,
        EcLeakageBasis::Sifted => params.q * stats.q_mu,
    };
    let r_lower = -leakage_gain * params.f_ec * binary_entropy(stats.e_mu)?
        + params.q * single.q1_lower * (1.0 - binary_entropy(single.e1_upper)?);
    let r_per_pulse = r_lower.max(0.0);
    Ok(SecureRateResult {
        r_per_pulse,
        r_k: params.f_req * r_per_pulse,
        y1_lower: single.y1_lower,
        q1_lower: single.q1_lower,
        e1_upper: single.e1_upper,
    })
}

/// Secure key rate of one link of the given fiber length.
pub fn secure_rate(length_km: f64, params: &QkdDeviceParams) -> Result<SecureRateResult, RateError> {
    params.validate()?;
    let eta = channel_transmittance(length_km, params)?;
    let stats = observed_statistics(eta, params);
    let bounds = StateBounds::finite(&stats, params)?;
    rate_from_estimates(&stats, &bounds, params)
}

/// Same as [`secure_rate`] but with the statistical fluctuations switched off.
pub fn asymptotic_rate(length_km: f64, params: &QkdDeviceParams) -> Result<SecureRateResult, RateError> {
    params.validate()?;
    let eta = channel_transmittance(length_km, params)?;
    let stats = observed_statistics(eta, params);
    rate_from_estimates(&stats, &StateBounds::exact(&stats), params)
}
