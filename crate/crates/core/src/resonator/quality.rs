//! Diameter-corrected quality factors from the fitted circle.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::circle::Circle2D;
use super::phase::wrap_angle;
use super::FitError;
use crate::types::{ResonatorFitResult, ResonatorUncertainties};

/// Maximum disagreement between the geometric and phase routes to φ.
const PHI_CONSISTENCY: f64 = 0.1;

/// The point diametrically opposite the resonance point, i.e. the model value
/// for f → ∞. Returns `(a, alpha)` with `a·e^{iα}` equal to that point.
pub fn off_resonant_point(circle: &Circle2D, theta0: f64) -> (f64, f64) {
    let p = circle.center + Complex64::from_polar(circle.radius, theta0 + PI);
    (p.norm(), p.arg())
}

/// Normalizes the circle by the environment `a·e^{iα}` and extracts
/// `Qc_mag = Ql/(2r)`, the mismatch angle φ and `Qi`.
///
/// φ is taken from the canonical circle geometry and cross-checked against
/// the phase-fit offset (`θ₀ = π + φ + α`). Uncertainties are left at zero;
/// see [`propagate_staged_uncertainties`].
pub fn extract_quality_factors(
    fr: f64,
    ql: f64,
    circle: &Circle2D,
    theta0: f64,
    a: f64,
    alpha: f64,
) -> Result<ResonatorFitResult, FitError> {
    if !(a > 0.0) {
        return Err(FitError::NonPhysical(format!("environment amplitude a = {a}")));
    }
    let env = Complex64::from_polar(a, alpha);
    let center = circle.center / env;
    let radius = circle.radius / a;
    let phi = (Complex64::new(1.0, 0.0) - center).arg();
    let phi_phase = wrap_angle(theta0 - PI - alpha);
    if wrap_angle(phi - phi_phase).abs() > PHI_CONSISTENCY {
        return Err(FitError::Inconsistent(format!(
            "mismatch angle from geometry ({phi:.4}) and phase ({phi_phase:.4}) disagree"
        )));
    }
    let qc_mag = ql / (2.0 * radius);
    let loss = 1.0 / ql - phi.cos() / qc_mag;
    if !(loss > 0.0) {
        return Err(FitError::NonPositiveQi { qi: 1.0 / loss });
    }
    ResonatorFitResult::new(fr, ql, qc_mag, phi, 0.0, a, alpha, ResonatorUncertainties::default(), 0.0)
        .map_err(FitError::from)
}

/// First-order propagation of phase-fit and circle-fit errors into the
/// derived quality factors.
pub fn propagate_staged_uncertainties(
    result: &ResonatorFitResult,
    fr_err: f64,
    ql_err: f64,
    radius_err: f64,
    tau_err: f64,
) -> ResonatorUncertainties {
    let r = result.ql / (2.0 * result.qc_mag);
    let qc_err = result.qc_mag
        * ((ql_err / result.ql).powi(2) + (radius_err / (r * result.a)).powi(2)).sqrt();
    let phi_err = radius_err / (r * result.a);
    let qi2 = result.qi * result.qi;
    let d_ql = qi2 / (result.ql * result.ql);
    let d_qc = qi2 * result.phi.cos() / (result.qc_mag * result.qc_mag);
    let d_phi = qi2 * result.phi.sin() / result.qc_mag;
    let qi_err = ((d_ql * ql_err).powi(2) + (d_qc * qc_err).powi(2) + (d_phi * phi_err).powi(2)).sqrt();
    ResonatorUncertainties {
        fr: fr_err,
        ql: ql_err,
        qc_mag: qc_err,
        phi: phi_err,
        qi: qi_err,
        tau: tau_err,
        a: radius_err,
        alpha: radius_err / result.a,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Canonical circle for (Ql, Qc_mag, φ) in an environment a·e^{iα}.
    fn circle_for(ql: f64, qc: f64, phi: f64, a: f64, alpha: f64) -> (Circle2D, f64) {
        let r = ql / (2.0 * qc);
        let env = Complex64::from_polar(a, alpha);
        let c = (Complex64::new(1.0, 0.0) - Complex64::from_polar(r, phi)) * env;
        (Circle2D::new(c, r * a).unwrap(), PI + phi + alpha)
    }

    #[test]
    fn matched_impedance() {
        let (c, t0) = circle_for(5e4, 1e5, 0.0, 1.0, 0.0);
        let (a, alpha) = off_resonant_point(&c, t0);
        let r = extract_quality_factors(4.45e9, 5e4, &c, t0, a, alpha).unwrap();
        assert!((r.qc_mag - 1e5).abs() < 1e-6);
        assert!((r.qi - 1e5).abs() / 1e5 < 1e-12);
    }

    #[test]
    fn mismatched_impedance() {
        let (c, t0) = circle_for(5e4, 1e5, 0.1, 0.6, -1.2);
        let (a, alpha) = off_resonant_point(&c, t0);
        assert!((a - 0.6).abs() < 1e-12);
        assert!(wrap_angle(alpha + 1.2).abs() < 1e-12);
        let r = extract_quality_factors(4.45e9, 5e4, &c, t0, a, alpha).unwrap();
        let expected = 1.0 / (1.0 / 5e4 - 0.1f64.cos() / 1e5);
        assert!((r.qi - expected).abs() / expected < 1e-10);
        assert!((r.phi - 0.1).abs() < 1e-12);
    }

    #[test]
    fn diameter_of_one_is_unphysical() {
        let (c, t0) = circle_for(5e4, 5e4, 0.0, 1.0, 0.0);
        let (a, alpha) = off_resonant_point(&c, t0);
        assert!(matches!(
            extract_quality_factors(4.45e9, 5e4, &c, t0, a, alpha),
            Err(FitError::NonPositiveQi { .. })
        ));
    }

    #[test]
    fn inconsistent_phase_offset_rejected() {
        let (c, t0) = circle_for(5e4, 1e5, 0.1, 1.0, 0.0);
        let (a, alpha) = off_resonant_point(&c, t0);
        assert!(matches!(
            extract_quality_factors(4.45e9, 5e4, &c, t0, a, alpha + 0.5),
            Err(FitError::Inconsistent(_))
        ));
    }
}
