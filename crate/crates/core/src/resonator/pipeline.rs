//! Full notch fit: staged estimates followed by a joint refinement of all
//! seven model parameters on the raw complex data.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};

use super::circle::fit_circle;
use super::delay::{apply_delay_correction, estimate_cable_delay};
use super::model::NotchModelParams;
use super::phase::{fit_phase, wrap_angle};
use super::quality::{extract_quality_factors, off_resonant_point, propagate_staged_uncertainties};
use super::FitError;
use crate::lsq::{levenberg_marquardt, Bounds, LmConfig, Problem};
use crate::types::{validate_trace, ComplexTrace, ResonatorFitResult, ResonatorUncertainties};

/// Residual RMS may exceed the estimated noise floor by this factor before the
/// fit is rejected.
pub const RESIDUAL_NOISE_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, Copy)]
pub struct ResonatorFitReport {
    pub staged: ResonatorFitResult,
    pub refined: ResonatorFitResult,
    /// Per-quadrature noise level estimated from second differences.
    pub noise_estimate: f64,
}

fn stage<T>(name: &'static str, r: Result<T, FitError>) -> Result<T, FitError> {
    r.map_err(|e| FitError::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// RMS of `|S21 - model|` over the trace.
pub fn residual_rms(trace: &ComplexTrace, params: &NotchModelParams) -> f64 {
    let ss: f64 = trace
        .frequencies
        .iter()
        .zip(&trace.s21)
        .map(|(f, z)| (z - params.evaluate(*f)).norm_sqr())
        .sum();
    (ss / trace.len() as f64).sqrt()
}

/// Robust per-quadrature noise estimate from second differences (median of
/// the Rayleigh-distributed magnitudes).
pub fn noise_floor(trace: &ComplexTrace) -> f64 {
    let mut d: Vec<f64> = trace
        .s21
        .windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]).norm())
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let median = d[d.len() / 2];
    median / ((2.0 * 2f64.ln()).sqrt() * 6f64.sqrt())
}

struct JointProblem<'a> {
    trace: &'a ComplexTrace,
    f_mid: f64,
    span: f64,
    fr0: f64,
    width0: f64,
}

// p = [δfr (linewidths), ln Ql, ln Qc, φ, a, α', u]
// α' is the environment phase at f_mid, u = 2πτ·span.
impl JointProblem<'_> {
    fn pack(&self, m: &NotchModelParams) -> Vec<f64> {
        vec![
            (m.fr - self.fr0) / self.width0,
            m.ql.ln(),
            m.qc_mag.ln(),
            m.phi,
            m.a,
            wrap_angle(m.alpha - 2.0 * PI * self.f_mid * m.tau),
            2.0 * PI * m.tau * self.span,
        ]
    }

    fn unpack(&self, p: &[f64]) -> NotchModelParams {
        let tau = p[6] / (2.0 * PI * self.span);
        NotchModelParams {
            fr: self.fr0 + p[0] * self.width0,
            ql: p[1].exp(),
            qc_mag: p[2].exp(),
            phi: p[3],
            a: p[4],
            alpha: wrap_angle(p[5] + 2.0 * PI * self.f_mid * tau),
            tau,
        }
    }

    fn parts(&self, p: &[f64], f: f64) -> (Complex64, Complex64, Complex64, f64, f64) {
        let fr = self.fr0 + p[0] * self.width0;
        let ql = p[1].exp();
        let s = (f - self.f_mid) / self.span;
        let env = Complex64::from_polar(p[4], p[5] - p[6] * s);
        let k = Complex64::from_polar(ql / p[2].exp(), p[3]);
        let d = Complex64::new(1.0, 2.0 * ql * (f - fr) / fr);
        (env, k, d, s, fr)
    }
}

impl Problem for JointProblem<'_> {
    fn n_params(&self) -> usize {
        7
    }
    fn n_residuals(&self) -> usize {
        2 * self.trace.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, (f, z)) in self.trace.frequencies.iter().zip(&self.trace.s21).enumerate() {
            let (env, k, d, _, _) = self.parts(p, *f);
            let r = env * (Complex64::new(1.0, 0.0) - k / d) - z;
            out[2 * i] = r.re;
            out[2 * i + 1] = r.im;
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let i_unit = Complex64::new(0.0, 1.0);
        let ql = p[1].exp();
        for (i, f) in self.trace.frequencies.iter().enumerate() {
            let (env, k, d, s, fr) = self.parts(p, *f);
            let res = Complex64::new(1.0, 0.0) - k / d;
            let model = env * res;
            let kd2 = k / (d * d);
            let dd_dfr = Complex64::new(0.0, -2.0 * ql * f / (fr * fr));
            let cols = [
                env * kd2 * dd_dfr * self.width0,
                -env * kd2,
                env * k / d,
                env * (-i_unit * k / d),
                if p[4] != 0.0 { model / p[4] } else { Complex64::from_polar(1.0, p[5] - p[6] * s) * res },
                i_unit * model,
                -i_unit * s * model,
            ];
            for (j, c) in cols.iter().enumerate() {
                jac[(2 * i, j)] = c.re;
                jac[(2 * i + 1, j)] = c.im;
            }
        }
        true
    }
}

fn qi_stderr(m: &NotchModelParams, cov: &DMatrix<f64>) -> f64 {
    let qi = m.qi();
    let qi2 = qi * qi;
    // gradient of Qi with respect to (ln Ql, ln Qc, φ)
    let g = DVector::from_vec(vec![
        qi2 / m.ql,
        -qi2 * m.phi.cos() / m.qc_mag,
        -qi2 * m.phi.sin() / m.qc_mag,
    ]);
    let sub = cov.view((1, 1), (3, 3)).into_owned();
    (g.transpose() * sub * g)[(0, 0)].max(0.0).sqrt()
}

fn staged_fit(trace: &ComplexTrace) -> Result<(ResonatorFitResult, NotchModelParams), FitError> {
    let delay = stage("remove_cable_delay", estimate_cable_delay(trace))?;
    let corrected = apply_delay_correction(trace, delay.tau);
    let circle = stage("fit_circle", fit_circle(&corrected.s21))?;
    let phase = stage("fit_phase", fit_phase(&corrected, &circle.circle))?;
    let (a, alpha) = off_resonant_point(&circle.circle, phase.theta0);
    let mut result = stage(
        "extract_quality_factors",
        extract_quality_factors(phase.fr, phase.ql, &circle.circle, phase.theta0, a, alpha),
    )?;
    let radius_err = circle.rms_residual / (trace.len() as f64 / 2.0).sqrt();
    result.uncertainties =
        propagate_staged_uncertainties(&result, phase.fr_err, phase.ql_err, radius_err, delay.tau_stderr);
    result.tau = delay.tau;
    let params = NotchModelParams {
        fr: result.fr,
        ql: result.ql,
        qc_mag: result.qc_mag,
        phi: result.phi,
        a: result.a,
        alpha: result.alpha,
        tau: result.tau,
    };
    result.residual_rms = residual_rms(trace, &params);
    Ok((result, params))
}

/// Runs the whole pipeline and returns both the staged and refined results.
pub fn fit_resonator_report(trace: &ComplexTrace) -> Result<ResonatorFitReport, FitError> {
    let trace = stage("validate_trace", validate_trace(trace.clone()).map_err(FitError::from))?;
    let (staged, start) = staged_fit(&trace)?;

    let n = trace.len();
    let (f_lo, f_hi) = (trace.frequencies[0], trace.frequencies[n - 1]);
    let problem = JointProblem {
        trace: &trace,
        f_mid: 0.5 * (f_lo + f_hi),
        span: trace.span(),
        fr0: start.fr,
        width0: start.fr / start.ql,
    };
    let edge = 1e-6;
    let bounds = Bounds {
        lower: vec![
            (f_lo - start.fr) / problem.width0,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
            -FRAC_PI_2 + edge,
            0.0,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        ],
        upper: vec![
            (f_hi - start.fr) / problem.width0,
            f64::INFINITY,
            f64::INFINITY,
            FRAC_PI_2 - edge,
            f64::INFINITY,
            f64::INFINITY,
            f64::INFINITY,
        ],
    };
    let report = stage(
        "joint_refinement",
        levenberg_marquardt(&problem, &problem.pack(&start), &bounds, &LmConfig::default())
            .map_err(FitError::from),
    )?;
    let m = problem.unpack(&report.params);
    let err = report.std_errors();
    let cov = &report.inv_normal * report.residual_variance();
    let span = problem.span;
    let uncertainties = ResonatorUncertainties {
        fr: err[0] * problem.width0,
        ql: err[1] * m.ql,
        qc_mag: err[2] * m.qc_mag,
        phi: err[3],
        qi: if m.internal_loss() > 0.0 { qi_stderr(&m, &cov) } else { f64::NAN },
        tau: err[6] / (2.0 * PI * span),
        a: err[4],
        alpha: (cov[(5, 5)] + (2.0 * PI * problem.f_mid / (2.0 * PI * span)).powi(2) * cov[(6, 6)]
            + 2.0 * problem.f_mid / span * cov[(5, 6)])
            .max(0.0)
            .sqrt(),
    };
    let rms = residual_rms(&trace, &m);
    let refined = stage(
        "joint_refinement",
        ResonatorFitResult::new(m.fr, m.ql, m.qc_mag, m.phi, m.tau, m.a, m.alpha, uncertainties, rms)
            .map_err(|e| match e {
                crate::types::ValidationError::Field { field: "Qi", value, .. } => {
                    FitError::NonPositiveQi { qi: value }
                }
                other => FitError::from(other),
            }),
    )?;

    let noise = noise_floor(&trace);
    let threshold = RESIDUAL_NOISE_FACTOR * 2f64.sqrt() * noise + 1e-9 * m.a;
    if refined.residual_rms > threshold {
        return Err(FitError::PoorFit {
            residual_rms: refined.residual_rms,
            threshold,
        });
    }
    Ok(ResonatorFitReport {
        staged,
        refined,
        noise_estimate: noise,
    })
}

/// Fits a single notch resonance; returns the refined parameters.
pub fn fit_resonator(trace: &ComplexTrace) -> Result<ResonatorFitResult, FitError> {
    fit_resonator_report(trace).map(|r| r.refined)
}
