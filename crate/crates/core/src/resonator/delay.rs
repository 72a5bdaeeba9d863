//! Cable-delay estimation.
//!
//! A first guess comes from the phase slope of the off-resonant edges (the
//! outer 10% of points on each side). It is refined by choosing the delay for
//! which the delay-corrected points lie best on a circle: only the correct
//! delay maps the resonance onto an exact circle, so the residual resonance
//! tail that biases the edge slope drops out.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

use super::circle::fit_circle;
use super::pipeline::noise_floor;
use super::FitError;
use crate::lsq::{levenberg_marquardt, Bounds, LmConfig, Problem};
use crate::types::ComplexTrace;

/// Fraction of points on each edge treated as off-resonant.
pub const EDGE_FRACTION: f64 = 0.10;
const MIN_EDGE_POINTS: usize = 3;
/// A resonance circle must be this many noise levels across.
const MIN_RADIUS_OVER_NOISE: f64 = 10.0;
/// A resonance sweeps at least this arc (rad) of its circle.
const MIN_ARC: f64 = PI / 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    /// s
    pub tau: f64,
    pub tau_stderr: f64,
}

/// Unwraps a phase sequence in place.
pub(crate) fn unwrap_phase(phase: &mut [f64]) {
    for i in 1..phase.len() {
        let mut d = phase[i] - phase[i - 1];
        while d > PI {
            d -= 2.0 * PI;
        }
        while d < -PI {
            d += 2.0 * PI;
        }
        phase[i] = phase[i - 1] + d;
    }
}

/// Multiplies every point by `e^{+2πifτ}`.
pub fn apply_delay_correction(trace: &ComplexTrace, tau: f64) -> ComplexTrace {
    let mut out = trace.clone();
    for (z, f) in out.s21.iter_mut().zip(&trace.frequencies) {
        *z *= Complex64::from_polar(1.0, 2.0 * PI * f * tau);
    }
    out
}

/// Phase slope of the two off-resonant edges, as a delay in seconds.
fn edge_slope_delay(trace: &ComplexTrace, n_edge: usize) -> f64 {
    let n = trace.len();
    // common slope, independent intercepts per edge
    let mut rows: Vec<(f64, f64, bool)> = Vec::with_capacity(2 * n_edge);
    for (range, left) in [(0..n_edge, true), (n - n_edge..n, false)] {
        let mut ph: Vec<f64> = range.clone().map(|i| trace.s21[i].arg()).collect();
        unwrap_phase(&mut ph);
        for (k, i) in range.enumerate() {
            rows.push((trace.frequencies[i], ph[k], left));
        }
    }
    let mean = |left: bool| {
        let sel: Vec<&(f64, f64, bool)> = rows.iter().filter(|r| r.2 == left).collect();
        let m = sel.len() as f64;
        (
            sel.iter().map(|r| r.0).sum::<f64>() / m,
            sel.iter().map(|r| r.1).sum::<f64>() / m,
        )
    };
    let (fl, pl) = mean(true);
    let (fr, pr) = mean(false);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (f, p, left) in &rows {
        let (fm, pm) = if *left { (fl, pl) } else { (fr, pr) };
        sxy += (f - fm) * (p - pm);
        sxx += (f - fm) * (f - fm);
    }
    if sxx > 0.0 {
        -(sxy / sxx) / (2.0 * PI)
    } else {
        0.0
    }
}

struct CircleResidual<'a> {
    points: &'a [Complex64],
    offsets: Vec<f64>,
    /// RMS spread of the points about their centroid. Residuals are measured
    /// against this fixed scale: normalising by the fitted radius would favour
    /// delays that straighten the points onto a huge, nearly flat circle.
    scale: f64,
}

impl CircleResidual<'_> {
    fn rotated(&self, u: f64) -> Vec<Complex64> {
        self.points
            .iter()
            .zip(&self.offsets)
            .map(|(z, s)| z * Complex64::from_polar(1.0, u * s))
            .collect()
    }

    fn relative_rms(&self, u: f64) -> f64 {
        match fit_circle(&self.rotated(u)) {
            Ok(fit) => fit.rms_residual / self.scale,
            Err(_) => f64::INFINITY,
        }
    }
}

impl Problem for CircleResidual<'_> {
    fn n_params(&self) -> usize {
        1
    }
    fn n_residuals(&self) -> usize {
        self.points.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let pts = self.rotated(p[0]);
        match fit_circle(&pts) {
            Ok(fit) => {
                for (o, z) in out.iter_mut().zip(&pts) {
                    *o = ((z - fit.circle.center).norm() - fit.circle.radius) / self.scale;
                }
            }
            Err(_) => out.iter_mut().for_each(|o| *o = f64::NAN),
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let h = 1e-6;
        let m = self.points.len();
        let mut rp = vec![0.0; m];
        let mut rm = vec![0.0; m];
        self.residuals(&[p[0] + h], &mut rp);
        self.residuals(&[p[0] - h], &mut rm);
        for i in 0..m {
            jac[(i, 0)] = (rp[i] - rm[i]) / (2.0 * h);
        }
        true
    }
}

/// Angle of the circle swept by the points: 2π minus the largest gap between
/// consecutive point angles about `center`.
fn angular_coverage(points: &[Complex64], center: Complex64) -> f64 {
    let mut ang: Vec<f64> = points.iter().map(|z| (z - center).arg()).collect();
    ang.sort_by(f64::total_cmp);
    let wrap_gap = ang[0] + 2.0 * PI - ang[ang.len() - 1];
    let gap = ang.windows(2).map(|w| w[1] - w[0]).fold(wrap_gap, f64::max);
    2.0 * PI - gap
}

/// Estimates the cable delay of a notch trace.
pub fn estimate_cable_delay(trace: &ComplexTrace) -> Result<DelayEstimate, FitError> {
    let n = trace.len();
    let n_edge = (n as f64 * EDGE_FRACTION).floor() as usize;
    let span = trace.span();
    if n_edge < MIN_EDGE_POINTS || !(span > 0.0) {
        return Err(FitError::TooNarrow(format!(
            "{n} points give {n_edge} off-resonant points per edge"
        )));
    }
    let f_mid = 0.5 * (trace.frequencies[0] + trace.frequencies[n - 1]);
    let centroid = trace.s21.iter().sum::<Complex64>() / n as f64;
    let spread = (trace.s21.iter().map(|z| (z - centroid).norm_sqr()).sum::<f64>() / n as f64).sqrt();
    if !(spread > 0.0) {
        return Err(FitError::NoResonance("all points coincide".into()));
    }
    let problem = CircleResidual {
        points: &trace.s21,
        offsets: trace.frequencies.iter().map(|f| (f - f_mid) / span).collect(),
        scale: spread,
    };

    // u = 2π·τ·span is the phase rotation across the span
    let u0 = 2.0 * PI * span * edge_slope_delay(trace, n_edge);
    let step = 0.05;
    let (best_u, best_cost) = (-60..=60)
        .map(|k| u0 + step * k as f64)
        .map(|u| (u, problem.relative_rms(u)))
        .fold((u0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    if !best_cost.is_finite() {
        return Err(FitError::NoResonance("no circle found at any delay".into()));
    }

    let bounds = Bounds {
        lower: vec![best_u - step],
        upper: vec![best_u + step],
    };
    let report = levenberg_marquardt(&problem, &[best_u], &bounds, &LmConfig::default())
        .map_err(FitError::from)?;
    let u = report.params[0];
    let final_rel = problem.relative_rms(u);
    if !(final_rel < 1.0 / 3.0) {
        return Err(FitError::NoResonance(format!(
            "points do not form a circle (relative rms {final_rel:.3})"
        )));
    }
    let rotated = problem.rotated(u);
    let circle = fit_circle(&rotated).map_err(|e| FitError::NoResonance(e.to_string()))?;
    let coverage = angular_coverage(&rotated, circle.circle.center);
    if coverage < MIN_ARC {
        return Err(FitError::NoResonance(format!(
            "points cover only {coverage:.2} rad of the fitted circle"
        )));
    }
    let radius = circle.circle.radius;
    let noise = noise_floor(trace);
    if !(radius > MIN_RADIUS_OVER_NOISE * noise) {
        return Err(FitError::NoResonance(format!(
            "circle radius {radius:.3e} is within {MIN_RADIUS_OVER_NOISE}x of the noise level {noise:.3e}"
        )));
    }
    let scale = 2.0 * PI * span;
    Ok(DelayEstimate {
        tau: u / scale,
        tau_stderr: report.std_errors()[0] / scale,
    })
}

/// Removes the estimated cable delay; returns the corrected trace and τ̂.
pub fn remove_cable_delay(trace: &ComplexTrace) -> Result<(ComplexTrace, f64), FitError> {
    let est = estimate_cable_delay(trace)?;
    Ok((apply_delay_correction(trace, est.tau), est.tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resonator::model::{linewidth_grid, synthesize_notch, NotchModelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn params(tau: f64) -> NotchModelParams {
        NotchModelParams {
            fr: 4.45e9,
            ql: 5e4,
            qc_mag: 1e5,
            phi: 0.1,
            a: 1.0,
            alpha: 0.4,
            tau,
        }
    }

    #[test]
    fn recovers_planted_delay() {
        let p = params(40e-9);
        let f = linewidth_grid(p.fr, p.ql, 5.0, 401);
        let t = synthesize_notch(&p, &f, 0.0, 0).unwrap();
        let (_, tau) = remove_cable_delay(&t).unwrap();
        assert!((tau - 40e-9).abs() / 40e-9 < 0.01, "tau = {tau}");
    }

    #[test]
    fn zero_delay_stays_zero() {
        let p = params(0.0);
        let f = linewidth_grid(p.fr, p.ql, 5.0, 401);
        let t = synthesize_notch(&p, &f, 0.0, 0).unwrap();
        let (_, tau) = remove_cable_delay(&t).unwrap();
        // 0.01 rad of phase slope across the span
        let limit = 0.01 / (2.0 * PI * t.span());
        assert!(tau.abs() < limit, "tau = {tau}");
    }

    #[test]
    fn corrected_edges_are_flat() {
        let p = params(40e-9);
        let f = linewidth_grid(p.fr, p.ql, 20.0, 801);
        let t = synthesize_notch(&p, &f, 0.0, 0).unwrap();
        let (c, _) = remove_cable_delay(&t).unwrap();
        let residual_tau = edge_slope_delay(&c, 80);
        // what remains is the resonance tail only, far below the planted delay
        assert!(residual_tau.abs() < 0.05 * 40e-9);
    }

    #[test]
    fn pure_noise_is_flagged() {
        // either an error, or a delay whose uncertainty exceeds its value
        let normal = Normal::new(0.0, 1e-2).unwrap();
        let mut flagged = 0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<f64> = (0..201).map(|i| 4e9 + 1e3 * i as f64).collect();
            let s: Vec<Complex64> = f
                .iter()
                .map(|_| Complex64::new(1.0 + normal.sample(&mut rng), normal.sample(&mut rng)))
                .collect();
            match estimate_cable_delay(&ComplexTrace::new(f, s)) {
                Err(_) => flagged += 1,
                Ok(e) if e.tau_stderr > e.tau.abs() => flagged += 1,
                Ok(_) => {}
            }
        }
        assert_eq!(flagged, 20);
    }

    #[test]
    fn too_narrow_trace() {
        let p = params(40e-9);
        let f = linewidth_grid(p.fr, p.ql, 5.0, 20);
        let t = synthesize_notch(&p, &f, 0.0, 0).unwrap();
        assert!(matches!(estimate_cable_delay(&t), Err(FitError::TooNarrow(_))));
    }
}
