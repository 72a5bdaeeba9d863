//! Domain value types shared by every analysis module.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{angular, GHZ, MICROSECOND};

/// Minimum number of frequency points in a trace.
pub const MIN_TRACE_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("too few points: {got} (need at least {min})")]
    TooFewPoints { got: usize, min: usize },
    #[error("frequency and s21 arrays differ in length ({freqs} vs {s21})")]
    LengthMismatch { freqs: usize, s21: usize },
    #[error("frequencies not strictly increasing at index {index} (value {value})")]
    NonIncreasingFrequency { index: usize, value: f64 },
    #[error("non-finite frequency at index {index}")]
    NonFiniteFrequency { index: usize },
    #[error("non-finite s21 at index {index} (value {value})")]
    NonFiniteS21 { index: usize, value: Complex64 },
    #[error("negative line attenuation {0} dB")]
    NegativeAttenuation(f64),
    #[error("{field} = {value} violates {rule}")]
    Field {
        field: &'static str,
        value: f64,
        rule: &'static str,
    },
}

/// A frequency-indexed complex S21 sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexTrace {
    /// Hz, strictly increasing.
    pub frequencies: Vec<f64>,
    pub s21: Vec<Complex64>,
    /// dBm at the instrument output.
    pub applied_power: f64,
    /// dB between instrument and device port.
    pub line_attenuation: f64,
    /// K
    pub temperature: f64,
}

impl ComplexTrace {
    /// Bare trace with zero power/attenuation metadata; not validated.
    pub fn new(frequencies: Vec<f64>, s21: Vec<Complex64>) -> Self {
        Self {
            frequencies,
            s21,
            applied_power: 0.0,
            line_attenuation: 0.0,
            temperature: 0.0,
        }
    }

    pub fn with_power(mut self, applied_power: f64, line_attenuation: f64) -> Self {
        self.applied_power = applied_power;
        self.line_attenuation = line_attenuation;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn span(&self) -> f64 {
        match (self.frequencies.first(), self.frequencies.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Same trace with every S21 value multiplied by `factor`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        let mut out = self.clone();
        out.s21.iter_mut().for_each(|z| *z *= factor);
        out
    }
}

/// Returns the trace unchanged if every invariant holds, otherwise the first
/// violation.
pub fn validate_trace(trace: ComplexTrace) -> Result<ComplexTrace, ValidationError> {
    let n = trace.frequencies.len();
    if n != trace.s21.len() {
        return Err(ValidationError::LengthMismatch {
            freqs: n,
            s21: trace.s21.len(),
        });
    }
    if n < MIN_TRACE_POINTS {
        return Err(ValidationError::TooFewPoints {
            got: n,
            min: MIN_TRACE_POINTS,
        });
    }
    for (i, f) in trace.frequencies.iter().enumerate() {
        if !f.is_finite() {
            return Err(ValidationError::NonFiniteFrequency { index: i });
        }
        if i > 0 && *f <= trace.frequencies[i - 1] {
            return Err(ValidationError::NonIncreasingFrequency { index: i, value: *f });
        }
    }
    if let Some((i, z)) = trace
        .s21
        .iter()
        .enumerate()
        .find(|(_, z)| !(z.re.is_finite() && z.im.is_finite()))
    {
        return Err(ValidationError::NonFiniteS21 { index: i, value: *z });
    }
    if !(trace.line_attenuation >= 0.0) {
        return Err(ValidationError::NegativeAttenuation(trace.line_attenuation));
    }
    Ok(trace)
}

/// One standard error per fitted resonator parameter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResonatorUncertainties {
    pub fr: f64,
    #[serde(rename = "Ql")]
    pub ql: f64,
    #[serde(rename = "Qc_mag")]
    pub qc_mag: f64,
    pub phi: f64,
    #[serde(rename = "Qi")]
    pub qi: f64,
    pub tau: f64,
    pub a: f64,
    pub alpha: f64,
}

/// Result of a notch-type resonator fit.
///
/// `qi` is never set directly: it is computed from the diameter-corrected
/// identity `1/Qi = 1/Ql - cos(phi)/Qc_mag` when the value is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorFitResult {
    pub fr: f64,
    #[serde(rename = "Ql")]
    pub ql: f64,
    #[serde(rename = "Qc_mag")]
    pub qc_mag: f64,
    pub phi: f64,
    #[serde(rename = "Qi")]
    pub qi: f64,
    pub tau: f64,
    pub a: f64,
    pub alpha: f64,
    pub uncertainties: ResonatorUncertainties,
    pub residual_rms: f64,
}

/// Internal loss `1/Qi` implied by loaded and complex coupling Q.
#[inline]
pub fn internal_loss(ql: f64, qc_mag: f64, phi: f64) -> f64 {
    1.0 / ql - phi.cos() / qc_mag
}

impl ResonatorFitResult {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fr: f64,
        ql: f64,
        qc_mag: f64,
        phi: f64,
        tau: f64,
        a: f64,
        alpha: f64,
        uncertainties: ResonatorUncertainties,
        residual_rms: f64,
    ) -> Result<Self, ValidationError> {
        check_positive("fr", fr)?;
        check_positive("Ql", ql)?;
        check_positive("Qc_mag", qc_mag)?;
        if !(phi.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(ValidationError::Field {
                field: "phi",
                value: phi,
                rule: "|phi| < pi/2",
            });
        }
        let loss = internal_loss(ql, qc_mag, phi);
        if !(loss > 0.0) {
            return Err(ValidationError::Field {
                field: "Qi",
                value: 1.0 / loss,
                rule: "Qi > 0",
            });
        }
        Ok(Self {
            fr,
            ql,
            qc_mag,
            phi,
            qi: 1.0 / loss,
            tau,
            a,
            alpha,
            uncertainties,
            residual_rms,
        })
    }

    /// Coupling quality factor of the diameter-corrected model, `Qc_mag / cos(phi)`.
    pub fn qc_real(&self) -> f64 {
        self.qc_mag / self.phi.cos()
    }
}

/// A resonator fit at one drive power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSweepPoint {
    pub fit: ResonatorFitResult,
    /// Mean circulating photon number.
    pub n_photons: f64,
    /// W delivered to the device input port.
    pub p_in: f64,
}

impl PowerSweepPoint {
    pub fn new(fit: ResonatorFitResult, n_photons: f64, p_in: f64) -> Result<Self, ValidationError> {
        check_positive("n_photons", n_photons)?;
        check_positive("p_in", p_in)?;
        Ok(Self {
            fit,
            n_photons,
            p_in,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TlsUncertainties {
    pub f_delta_tls: f64,
    pub n_c: f64,
    pub beta: f64,
    pub delta0: f64,
}

/// Parameters of the interacting-TLS loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsFitResult {
    /// Zero-power TLS loss F·δ⁰_TLS.
    pub f_delta_tls: f64,
    /// Critical photon number.
    pub n_c: f64,
    /// Saturation exponent.
    pub beta: f64,
    /// Power-independent loss.
    pub delta0: f64,
    /// K
    pub temperature: f64,
    pub uncertainties: TlsUncertainties,
}

impl TlsFitResult {
    pub fn new(
        f_delta_tls: f64,
        n_c: f64,
        beta: f64,
        delta0: f64,
        temperature: f64,
    ) -> Result<Self, ValidationError> {
        if !(f_delta_tls >= 0.0) {
            return Err(ValidationError::Field {
                field: "f_delta_tls",
                value: f_delta_tls,
                rule: ">= 0",
            });
        }
        check_positive("n_c", n_c)?;
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(ValidationError::Field {
                field: "beta",
                value: beta,
                rule: "0 < beta <= 1",
            });
        }
        if !(delta0 >= 0.0) {
            return Err(ValidationError::Field {
                field: "delta0",
                value: delta0,
                rule: ">= 0",
            });
        }
        Ok(Self {
            f_delta_tls,
            n_c,
            beta,
            delta0,
            temperature,
            uncertainties: TlsUncertainties::default(),
        })
    }
}

/// One row of the qubit summary table, in table units (nm, GHz, µs, ×10⁶).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitRecord {
    pub label: String,
    pub film_thickness: f64,
    pub f_q: f64,
    pub f_r: f64,
    /// |f_q - f_r|, GHz.
    pub detuning: f64,
    pub t1_mean: f64,
    pub t1_std: f64,
    pub t2echo_mean: Option<f64>,
    pub t2echo_std: Option<f64>,
    pub t_purcell: f64,
    pub q_factor: f64,
    pub included: bool,
}

/// Slack on the printed detuning column, GHz.
pub const DETUNING_TOLERANCE: f64 = 0.001 + 1e-9;
/// Relative slack on the printed Q column (one decimal of ×10⁶).
pub const Q_COLUMN_TOLERANCE: f64 = 0.05;

impl QubitRecord {
    pub fn f_q_hz(&self) -> f64 {
        self.f_q * GHZ
    }

    pub fn f_r_hz(&self) -> f64 {
        self.f_r * GHZ
    }

    pub fn t1_s(&self) -> f64 {
        self.t1_mean * MICROSECOND
    }

    pub fn t_purcell_s(&self) -> f64 {
        self.t_purcell * MICROSECOND
    }

    /// Q = ω_q·T₁ recomputed from the frequency and T₁ columns.
    pub fn computed_q(&self) -> f64 {
        angular(self.f_q_hz()) * self.t1_s()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        check_positive("f_q", self.f_q)?;
        check_positive("f_r", self.f_r)?;
        check_positive("t1_mean", self.t1_mean)?;
        if ((self.f_q - self.f_r).abs() - self.detuning).abs() > DETUNING_TOLERANCE {
            return Err(ValidationError::Field {
                field: "detuning",
                value: self.detuning,
                rule: "detuning = |f_q - f_r| within 0.001 GHz",
            });
        }
        let q = self.computed_q() / 1e6;
        if ((q - self.q_factor) / self.q_factor).abs() > Q_COLUMN_TOLERANCE {
            return Err(ValidationError::Field {
                field: "q_factor",
                value: self.q_factor,
                rule: "q_factor = 2π·f_q·t1_mean within 5%",
            });
        }
        Ok(())
    }
}

/// Attribution of a total quality factor to individual loss channels.
/// Absent entries are not attributed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBudget {
    pub q_total: Option<f64>,
    pub q_tls: Option<f64>,
    pub q_purcell: Option<f64>,
    pub q_other: Option<f64>,
}

const BUDGET_TOLERANCE: f64 = 1e-12;

impl LossBudget {
    pub fn new(
        q_total: Option<f64>,
        q_tls: Option<f64>,
        q_purcell: Option<f64>,
        q_other: Option<f64>,
    ) -> Result<Self, ValidationError> {
        let budget = Self {
            q_total,
            q_tls,
            q_purcell,
            q_other,
        };
        if let Some(total) = q_total {
            let attributed = budget.attributed_loss();
            if attributed > 1.0 / total + BUDGET_TOLERANCE * (1.0 / total) {
                return Err(ValidationError::Field {
                    field: "q_total",
                    value: total,
                    rule: "attributed loss must not exceed total loss",
                });
            }
        }
        Ok(budget)
    }

    /// Σ 1/Q over the attributed channels.
    pub fn attributed_loss(&self) -> f64 {
        [self.q_tls, self.q_purcell, self.q_other]
            .iter()
            .flatten()
            .map(|q| 1.0 / q)
            .sum()
    }

    /// Total loss not covered by the attributed channels.
    pub fn unattributed_loss(&self) -> Option<f64> {
        self.q_total.map(|q| (1.0 / q - self.attributed_loss()).max(0.0))
    }
}

fn check_positive(field: &'static str, value: f64) -> Result<(), ValidationError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ValidationError::Field {
            field,
            value,
            rule: "> 0",
        })
    }
}
