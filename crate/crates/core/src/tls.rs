//! Power-dependent two-level-system loss.
//!
//! Internal loss versus mean photon number `n` follows
//!
//! ```text
//! 1/Qi = Fδ⁰ · tanh(ħω/2k_BT) / (1 + n/n_c)^β + δ₀
//! ```
//!
//! and `n` is calibrated from the power delivered to the device with
//! `n = 2·(Z₀/Z_r)·(Ql²/Qc)·P_in/(ħω²)`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lsq::{levenberg_marquardt, Bounds, LmConfig, LmReport, LsqError, Problem};
use crate::types::{PowerSweepPoint, ResonatorFitResult, TlsFitResult, TlsUncertainties, ValidationError};
use crate::units::{angular, dbm_to_device_watts, thermal_factor, HBAR};

pub const MIN_SWEEP_POINTS: usize = 5;
pub const MIN_SWEEP_DECADES: f64 = 3.0;

// parameter box
pub const F_DELTA_MAX: f64 = 1e-3;
pub const NC_MIN: f64 = 1e-3;
pub const NC_MAX: f64 = 1e9;
pub const BETA_MIN: f64 = 0.05;
pub const BETA_MAX: f64 = 1.0;
pub const DELTA0_MAX: f64 = 1e-3;

/// Multi-start is triggered when the residual exceeds this multiple of the
/// estimated noise floor.
const MULTISTART_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TlsError {
    #[error("too few points / decades: {points} points spanning {decades:.2} decades (need {MIN_SWEEP_POINTS} over {MIN_SWEEP_DECADES})")]
    InsufficientSweep { points: usize, decades: f64 },
    #[error("photon numbers must be strictly increasing (index {0})")]
    Unordered(usize),
    #[error("record {0} carries no TLS fit")]
    MissingFit(String),
    #[error("empty group")]
    EmptyGroup,
    #[error("invalid input: {0}")]
    Invalid(#[from] ValidationError),
    #[error(transparent)]
    Solver(#[from] LsqError),
}

/// Which coupling quality factor enters the photon-number calibration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingConvention {
    /// The magnitude |Qc| of the complex coupling quality factor.
    #[default]
    Magnitude,
    /// The diameter-corrected real coupling Q, `|Qc|/cos φ`.
    DiameterCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationContext {
    /// Ω, feedline.
    pub z0: f64,
    /// Ω, resonator.
    pub zr: f64,
    /// dB between instrument and device input.
    pub total_attenuation: f64,
    /// K
    pub temperature: f64,
    #[serde(default)]
    pub coupling: CouplingConvention,
}

impl Default for CalibrationContext {
    fn default() -> Self {
        Self {
            z0: 50.0,
            zr: 50.0,
            total_attenuation: 0.0,
            temperature: 0.010,
            coupling: CouplingConvention::Magnitude,
        }
    }
}

impl CalibrationContext {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let checks = [
            ("z0", self.z0 > 0.0, self.z0),
            ("zr", self.zr > 0.0, self.zr),
            ("total_attenuation", self.total_attenuation >= 0.0, self.total_attenuation),
            ("temperature", self.temperature > 0.0, self.temperature),
        ];
        for (field, ok, value) in checks {
            if !ok {
                return Err(ValidationError::Field {
                    field,
                    value,
                    rule: "calibration context",
                });
            }
        }
        Ok(())
    }
}

/// Mean circulating photon number.
pub fn photon_number(p_in: f64, fr: f64, ql: f64, qc: f64, ctx: &CalibrationContext) -> f64 {
    let w = angular(fr);
    2.0 * (ctx.z0 / ctx.zr) * (ql * ql / qc) * p_in / (HBAR * w * w)
}

pub use crate::units::dbm_to_device_watts as dbm_to_device_power;

/// Builds a sweep point from a resonator fit measured at `applied_power_dbm`.
pub fn sweep_point(
    fit: ResonatorFitResult,
    applied_power_dbm: f64,
    ctx: &CalibrationContext,
) -> Result<PowerSweepPoint, ValidationError> {
    let p_in = dbm_to_device_watts(applied_power_dbm, ctx.total_attenuation);
    let qc = match ctx.coupling {
        CouplingConvention::Magnitude => fit.qc_mag,
        CouplingConvention::DiameterCorrected => fit.qc_real(),
    };
    let n = photon_number(p_in, fit.fr, fit.ql, qc, ctx);
    PowerSweepPoint::new(fit, n, p_in)
}

/// Total internal loss `1/Qi` at photon number `n`.
pub fn tls_loss_model(params: &TlsFitResult, n: f64, fr: f64) -> f64 {
    let th = thermal_factor(fr, params.temperature);
    params.f_delta_tls * th / (1.0 + n / params.n_c).powf(params.beta) + params.delta0
}

/// Internal quality factor at photon number `n`.
pub fn tls_qi_model(params: &TlsFitResult, n: f64, fr: f64) -> f64 {
    1.0 / tls_loss_model(params, n, fr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorSweepRecord {
    #[serde(default)]
    pub label: String,
    /// nm
    pub film_thickness: f64,
    pub points: Vec<PowerSweepPoint>,
    pub tls_fit: Option<TlsFitResult>,
}

impl ResonatorSweepRecord {
    /// Sorts the points by photon number.
    pub fn new(label: impl Into<String>, film_thickness: f64, mut points: Vec<PowerSweepPoint>) -> Self {
        points.sort_by(|a, b| a.n_photons.total_cmp(&b.n_photons));
        Self {
            label: label.into(),
            film_thickness,
            points,
            tls_fit: None,
        }
    }

    /// Mean resonance frequency over the sweep, Hz.
    pub fn frequency(&self) -> f64 {
        self.points.iter().map(|p| p.fit.fr).sum::<f64>() / self.points.len().max(1) as f64
    }

    /// Checks ordering, point count and decade span.
    pub fn check_fittable(&self) -> Result<(), TlsError> {
        for i in 1..self.points.len() {
            if !(self.points[i].n_photons > self.points[i - 1].n_photons) {
                return Err(TlsError::Unordered(i));
            }
        }
        let decades = match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => (b.n_photons / a.n_photons).log10(),
            _ => 0.0,
        };
        if self.points.len() < MIN_SWEEP_POINTS || decades < MIN_SWEEP_DECADES {
            return Err(TlsError::InsufficientSweep {
                points: self.points.len(),
                decades,
            });
        }
        Ok(())
    }

    /// Fits the record and stores the result.
    pub fn fit(&mut self, temperature: f64) -> Result<TlsFitResult, TlsError> {
        let fit = fit_tls(self, self.frequency(), temperature)?;
        self.tls_fit = Some(fit);
        Ok(fit)
    }
}

struct TlsProblem {
    n: Vec<f64>,
    y: Vec<f64>,
    /// 1/σ per point, in units of `scale`
    w: Vec<f64>,
    scale: f64,
    thermal: f64,
}

// p = [Fδ/scale, ln n_c, β, δ₀/scale]
impl Problem for TlsProblem {
    fn n_params(&self) -> usize {
        4
    }
    fn n_residuals(&self) -> usize {
        self.n.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let nc = p[1].exp();
        for i in 0..self.n.len() {
            let model = p[0] * self.thermal * (1.0 + self.n[i] / nc).powf(-p[2]) + p[3];
            out[i] = (model - self.y[i] / self.scale) * self.w[i];
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let nc = p[1].exp();
        for i in 0..self.n.len() {
            let x = self.n[i] / nc;
            let base = (1.0 + x).powf(-p[2]);
            let w = self.w[i];
            jac[(i, 0)] = self.thermal * base * w;
            // d/d ln n_c of (1 + n/n_c)^-β = β·(n/n_c)/(1 + n/n_c)·(1+x)^-β
            jac[(i, 1)] = p[0] * self.thermal * p[2] * x / (1.0 + x) * base * w;
            jac[(i, 2)] = -p[0] * self.thermal * base * (1.0 + x).ln() * w;
            jac[(i, 3)] = w;
        }
        true
    }
}

/// Noise-floor estimate from second differences of the (whitened) data.
fn second_difference_noise(r: &[f64]) -> f64 {
    if r.len() < 3 {
        return 0.0;
    }
    let ss: f64 = r.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).powi(2)).sum();
    (ss / (r.len() - 2) as f64 / 6.0).sqrt()
}

/// Weighted least-squares fit of `1/Qi` versus photon number.
///
/// Points are weighted by the propagated resonator-fit uncertainty of `1/Qi`
/// when every point carries one, uniformly otherwise.
pub fn fit_tls(sweep: &ResonatorSweepRecord, fr: f64, temperature: f64) -> Result<TlsFitResult, TlsError> {
    let mut points = sweep.points.clone();
    points.sort_by(|a, b| a.n_photons.total_cmp(&b.n_photons));
    let sorted = ResonatorSweepRecord {
        points,
        ..sweep.clone()
    };
    sorted.check_fittable()?;
    let points = &sorted.points;

    let n: Vec<f64> = points.iter().map(|p| p.n_photons).collect();
    let y: Vec<f64> = points.iter().map(|p| 1.0 / p.fit.qi).collect();
    let mut sorted_y = y.clone();
    sorted_y.sort_by(f64::total_cmp);
    let scale = sorted_y[sorted_y.len() / 2];
    let weighted = points
        .iter()
        .all(|p| p.fit.uncertainties.qi > 0.0 && p.fit.uncertainties.qi.is_finite());
    let w: Vec<f64> = if weighted {
        points
            .iter()
            .map(|p| {
                let sigma_loss = p.fit.uncertainties.qi / (p.fit.qi * p.fit.qi);
                scale / sigma_loss
            })
            .collect()
    } else {
        vec![1.0; n.len()]
    };
    let problem = TlsProblem {
        n: n.clone(),
        y: y.clone(),
        w,
        scale,
        thermal: thermal_factor(fr, temperature),
    };
    let bounds = Bounds {
        lower: vec![0.0, NC_MIN.ln(), BETA_MIN, 0.0],
        upper: vec![F_DELTA_MAX / scale, NC_MAX.ln(), BETA_MAX, DELTA0_MAX / scale],
    };

    let delta0 = sorted_y[0];
    let fdelta = sorted_y[sorted_y.len() - 1] - delta0;
    let nc_mid = (n[0] * n[n.len() - 1]).sqrt();
    let cfg = LmConfig::default();
    let start = |nc: f64, beta: f64| vec![fdelta / scale, nc.ln(), beta, delta0 / scale];

    let mut best: Result<LmReport, LsqError> = levenberg_marquardt(&problem, &start(nc_mid, 0.3), &bounds, &cfg);
    // whitened residuals have unit variance when weights are known
    let noise = if weighted {
        1.0
    } else {
        let y_s: Vec<f64> = y.iter().map(|v| v / scale).collect();
        second_difference_noise(&y_s)
    };
    let needs_retry = match &best {
        Ok(rep) => rep.rms() > MULTISTART_FACTOR * noise,
        Err(_) => true,
    };
    if needs_retry {
        let (lo, hi) = (n[0].ln(), n[n.len() - 1].ln());
        for k in 0..4 {
            let nc = (lo + (hi - lo) * (k as f64 + 0.5) / 4.0).exp().clamp(NC_MIN, NC_MAX);
            for beta in [0.15, 0.5] {
                if let Ok(rep) = levenberg_marquardt(&problem, &start(nc, beta), &bounds, &cfg) {
                    let better = match &best {
                        Ok(b) => rep.cost < b.cost,
                        Err(_) => true,
                    };
                    if better {
                        best = Ok(rep);
                    }
                }
            }
        }
    }
    let rep = best?;
    let p = &rep.params;
    let err = rep.std_errors();
    let nc = p[1].exp();
    let mut fit = TlsFitResult::new(p[0] * scale, nc, p[2], p[3] * scale, temperature)?;
    fit.uncertainties = TlsUncertainties {
        f_delta_tls: err[0] * scale,
        n_c: err[1] * nc,
        beta: err[2],
        delta0: err[3] * scale,
    };
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessGroup {
    /// nm
    pub film_thickness: f64,
    pub count: usize,
    pub f_delta_tls_mean: f64,
    pub f_delta_tls_std: f64,
    pub delta0_mean: f64,
    pub delta0_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub label: String,
    pub film_thickness: f64,
    /// Hz
    pub frequency: f64,
    pub f_delta_tls: f64,
    pub delta0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessSummary {
    pub groups: Vec<ThicknessGroup>,
    pub series: Vec<SeriesPoint>,
}

/// Arithmetic mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn thickness_key(t: f64) -> u64 {
    t.to_bits()
}

/// Groups completed fits by film thickness.
pub fn aggregate_by_thickness(records: &[ResonatorSweepRecord]) -> Result<ThicknessSummary, TlsError> {
    if records.is_empty() {
        return Err(TlsError::EmptyGroup);
    }
    let mut series = Vec::with_capacity(records.len());
    for r in records {
        let fit = r.tls_fit.ok_or_else(|| TlsError::MissingFit(r.label.clone()))?;
        series.push(SeriesPoint {
            label: r.label.clone(),
            film_thickness: r.film_thickness,
            frequency: r.frequency(),
            f_delta_tls: fit.f_delta_tls,
            delta0: fit.delta0,
        });
    }
    let mut by: BTreeMap<u64, Vec<&SeriesPoint>> = BTreeMap::new();
    for s in &series {
        by.entry(thickness_key(s.film_thickness)).or_default().push(s);
    }
    let groups = by
        .into_values()
        .map(|members| {
            let fd: Vec<f64> = members.iter().map(|s| s.f_delta_tls).collect();
            let d0: Vec<f64> = members.iter().map(|s| s.delta0).collect();
            let (fm, fs) = mean_std(&fd);
            let (dm, ds) = mean_std(&d0);
            ThicknessGroup {
                film_thickness: members[0].film_thickness,
                count: members.len(),
                f_delta_tls_mean: fm,
                f_delta_tls_std: fs,
                delta0_mean: dm,
                delta0_std: ds,
            }
        })
        .collect();
    series.sort_by(|a, b| {
        a.film_thickness
            .total_cmp(&b.film_thickness)
            .then(a.frequency.total_cmp(&b.frequency))
    });
    Ok(ThicknessSummary { groups, series })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta0Series {
    pub film_thickness: f64,
    /// (frequency in Hz, δ₀), ascending in frequency.
    pub points: Vec<(f64, f64)>,
}

/// δ₀ versus resonance frequency per film thickness. Records without a fit are
/// skipped.
pub fn delta0_spectrum(records: &[ResonatorSweepRecord]) -> Vec<Delta0Series> {
    let mut by: BTreeMap<u64, Delta0Series> = BTreeMap::new();
    for r in records {
        if let Some(fit) = r.tls_fit {
            by.entry(thickness_key(r.film_thickness))
                .or_insert_with(|| Delta0Series {
                    film_thickness: r.film_thickness,
                    points: Vec::new(),
                })
                .points
                .push((r.frequency(), fit.delta0));
        }
    }
    by.into_values()
        .map(|mut s| {
            s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            s
        })
        .collect()
}
