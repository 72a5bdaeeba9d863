//! Phase-versus-frequency fit about the circle center:
//! `θ(f) = θ₀ + 2·arctan(2Ql(1 - f/fr))`.

use nalgebra::DMatrix;
use std::f64::consts::{FRAC_PI_2, PI};

use super::circle::Circle2D;
use super::delay::unwrap_phase;
use super::FitError;
use crate::lsq::{levenberg_marquardt, Bounds, LmConfig, Problem};
use crate::types::ComplexTrace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseFit {
    pub fr: f64,
    pub ql: f64,
    pub theta0: f64,
    pub fr_err: f64,
    pub ql_err: f64,
    pub theta0_err: f64,
    pub rms: f64,
}

struct PhaseProblem<'a> {
    freqs: &'a [f64],
    theta: &'a [f64],
    fr0: f64,
    width0: f64,
}

impl PhaseProblem<'_> {
    // p = [θ₀, ln Ql, (fr - fr0)/width0]
    fn unpack(&self, p: &[f64]) -> (f64, f64, f64) {
        (p[0], p[1].exp(), self.fr0 + p[2] * self.width0)
    }
}

impl Problem for PhaseProblem<'_> {
    fn n_params(&self) -> usize {
        3
    }
    fn n_residuals(&self) -> usize {
        self.freqs.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (t0, ql, fr) = self.unpack(p);
        for (i, f) in self.freqs.iter().enumerate() {
            out[i] = t0 + 2.0 * (2.0 * ql * (fr - f) / fr).atan() - self.theta[i];
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let (_, ql, fr) = self.unpack(p);
        for (i, f) in self.freqs.iter().enumerate() {
            let x = 2.0 * ql * (fr - f) / fr;
            let g = 2.0 / (1.0 + x * x);
            jac[(i, 0)] = 1.0;
            jac[(i, 1)] = g * x; // d/d ln Ql
            jac[(i, 2)] = g * 2.0 * ql * f / (fr * fr) * self.width0;
        }
        true
    }
}

/// Frequency at which the (decreasing) phase first crosses `level`.
fn crossing(freqs: &[f64], theta: &[f64], level: f64) -> Option<f64> {
    (1..theta.len()).find_map(|i| {
        let (a, b) = (theta[i - 1] - level, theta[i] - level);
        if a >= 0.0 && b < 0.0 {
            Some(freqs[i - 1] + (freqs[i] - freqs[i - 1]) * a / (a - b))
        } else {
            None
        }
    })
}

/// Fits the phase of a delay-corrected trace around the given circle center.
pub fn fit_phase(trace: &ComplexTrace, circle: &Circle2D) -> Result<PhaseFit, FitError> {
    let freqs = &trace.frequencies;
    let n = freqs.len();
    let mut theta: Vec<f64> = trace.s21.iter().map(|z| (z - circle.center).arg()).collect();
    unwrap_phase(&mut theta);

    let (f_lo, f_hi) = (freqs[0], freqs[n - 1]);
    let mid = 0.5 * (theta[0] + theta[n - 1]);
    let fr0 = crossing(freqs, &theta, mid).unwrap_or(0.5 * (f_lo + f_hi));
    let ql0 = match (
        crossing(freqs, &theta, mid + FRAC_PI_2),
        crossing(freqs, &theta, mid - FRAC_PI_2),
    ) {
        (Some(a), Some(b)) if b > a => fr0 / (b - a),
        _ => {
            // slope at resonance: dθ/df = -4Ql/fr
            let i = freqs.partition_point(|f| *f < fr0).clamp(1, n - 1);
            let slope = (theta[i] - theta[i - 1]) / (freqs[i] - freqs[i - 1]);
            (-slope * fr0 / 4.0).max(fr0 / (f_hi - f_lo))
        }
    };
    let width0 = fr0 / ql0;
    let problem = PhaseProblem {
        freqs,
        theta: &theta,
        fr0,
        width0,
    };
    let bounds = Bounds {
        lower: vec![f64::NEG_INFINITY, f64::NEG_INFINITY, (f_lo - fr0) / width0],
        upper: vec![f64::INFINITY, f64::INFINITY, (f_hi - fr0) / width0],
    };
    let report = levenberg_marquardt(&problem, &[mid, ql0.ln(), 0.0], &bounds, &LmConfig::default())
        .map_err(FitError::from)?;
    let (theta0, ql, fr) = problem.unpack(&report.params);
    if !(fr > f_lo && fr < f_hi) {
        return Err(FitError::FrOutsideSpan { fr, lo: f_lo, hi: f_hi });
    }
    let err = report.std_errors();
    Ok(PhaseFit {
        fr,
        ql,
        theta0: wrap_angle(theta0),
        fr_err: err[2] * width0,
        ql_err: err[1] * ql,
        theta0_err: err[0],
        rms: report.rms(),
    })
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}
