//! Algebraic circle fit in the complex plane (Pratt normalization).
//!
//! Minimizes the algebraic distance `A·|z|² + B·x + C·y + D` subject to
//! `B² + C² - 4AD = 1`, which stays well conditioned when the data cover only
//! a short arc of the circle.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::FitError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle2D {
    pub center: Complex64,
    pub radius: f64,
}

impl Circle2D {
    pub fn new(center: Complex64, radius: f64) -> Result<Self, FitError> {
        if radius > 0.0 && radius.is_finite() && center.re.is_finite() && center.im.is_finite() {
            Ok(Self { center, radius })
        } else {
            Err(FitError::DegenerateCircle(format!("radius {radius}")))
        }
    }

    /// RMS of `|z - center| - radius` over `points`.
    pub fn rms_residual(&self, points: &[Complex64]) -> f64 {
        let ss: f64 = points
            .iter()
            .map(|z| ((z - self.center).norm() - self.radius).powi(2))
            .sum();
        (ss / points.len().max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFit {
    pub circle: Circle2D,
    pub rms_residual: f64,
}

const MIN_CIRCLE_POINTS: usize = 4;

pub fn fit_circle(points: &[Complex64]) -> Result<CircleFit, FitError> {
    if points.len() < MIN_CIRCLE_POINTS {
        return Err(FitError::DegenerateCircle(format!(
            "{} points, need at least {MIN_CIRCLE_POINTS}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Complex64>() / n;
    let scale = (points.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n).sqrt();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(FitError::DegenerateCircle("coincident points".into()));
    }

    let mut m = Matrix4::<f64>::zeros();
    for z in points {
        let w = (z - mean) / scale;
        let v = Vector4::new(w.norm_sqr(), w.re, w.im, 1.0);
        m += v * v.transpose();
    }
    m /= n;

    let b_inv = Matrix4::new(
        0.0, 0.0, 0.0, -0.5, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        -0.5, 0.0, 0.0, 0.0,
    );
    let b = Matrix4::new(
        0.0, 0.0, 0.0, -2.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        -2.0, 0.0, 0.0, 0.0,
    );
    let eig = (b_inv * m).complex_eigenvalues();
    let tol = 1e-12 * m.norm();
    let eta = eig
        .iter()
        .filter(|c| c.im.abs() <= 1e-9 * (1.0 + c.re.abs()) && c.re >= -tol)
        .map(|c| c.re.max(0.0))
        .fold(f64::INFINITY, f64::min);
    if !eta.is_finite() {
        return Err(FitError::DegenerateCircle("no admissible eigenvalue".into()));
    }
    let svd = (m - b * eta).svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| FitError::DegenerateCircle("svd failed".into()))?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("four singular values");
    let coef = v_t.row(imin);
    let (a, bx, cy, d) = (coef[0], coef[1], coef[2], coef[3]);
    let disc = bx * bx + cy * cy - 4.0 * a * d;
    if a.abs() < 1e-10 * disc.abs().sqrt().max(1e-300) || !(disc > 0.0) {
        return Err(FitError::DegenerateCircle("points are collinear".into()));
    }
    let center_n = Complex64::new(-bx / (2.0 * a), -cy / (2.0 * a));
    let radius_n = disc.sqrt() / (2.0 * a.abs());
    if radius_n > 1e6 {
        return Err(FitError::DegenerateCircle("points are collinear".into()));
    }
    let circle = Circle2D::new(mean + center_n * scale, radius_n * scale)?;
    Ok(CircleFit {
        rms_residual: circle.rms_residual(points),
        circle,
    })
}
