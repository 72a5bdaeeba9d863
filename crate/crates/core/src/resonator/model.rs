//! The notch-type transmission model and a seeded synthetic-trace generator.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use super::FitError;
use crate::types::{validate_trace, ComplexTrace};

/// Parameters of
/// `S21(f) = a·e^{iα}·e^{-2πifτ}·[1 - (Ql/|Qc|)·e^{iφ} / (1 + 2iQl(f/fr - 1))]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotchModelParams {
    pub fr: f64,
    #[serde(rename = "Ql")]
    pub ql: f64,
    #[serde(rename = "Qc_mag")]
    pub qc_mag: f64,
    pub phi: f64,
    pub a: f64,
    pub alpha: f64,
    pub tau: f64,
}

impl NotchModelParams {
    /// Builds parameters from internal and coupling Q instead of loaded Q.
    pub fn from_qi(fr: f64, qi: f64, qc_mag: f64, phi: f64, a: f64, alpha: f64, tau: f64) -> Self {
        let ql = 1.0 / (1.0 / qi + phi.cos() / qc_mag);
        Self {
            fr,
            ql,
            qc_mag,
            phi,
            a,
            alpha,
            tau,
        }
    }

    /// `1/Qi` of these parameters.
    pub fn internal_loss(&self) -> f64 {
        1.0 / self.ql - self.phi.cos() / self.qc_mag
    }

    pub fn qi(&self) -> f64 {
        1.0 / self.internal_loss()
    }

    pub fn is_physical(&self) -> bool {
        self.fr > 0.0
            && self.fr.is_finite()
            && self.ql > 0.0
            && self.ql.is_finite()
            && self.qc_mag > 0.0
            && self.phi.abs() < FRAC_PI_2
            && self.a >= 0.0
            && self.a.is_finite()
            && self.alpha.is_finite()
            && self.tau.is_finite()
            && self.internal_loss() >= 0.0
    }

    /// Environment factor `a·e^{iα}·e^{-2πifτ}`.
    pub fn environment(&self, f: f64) -> Complex64 {
        Complex64::from_polar(self.a, self.alpha - 2.0 * PI * f * self.tau)
    }

    /// Resonator factor alone (canonical position, off-resonant point at 1).
    pub fn resonator(&self, f: f64) -> Complex64 {
        let x = (f - self.fr) / self.fr;
        let k = Complex64::from_polar(self.ql / self.qc_mag, self.phi);
        Complex64::new(1.0, 0.0) - k / Complex64::new(1.0, 2.0 * self.ql * x)
    }

    pub fn evaluate(&self, f: f64) -> Complex64 {
        self.environment(f) * self.resonator(f)
    }
}

/// Evaluates the notch model on `frequencies` and adds i.i.d. Gaussian noise of
/// standard deviation `noise_sigma` to each quadrature. Deterministic in `seed`.
pub fn synthesize_notch(
    params: &NotchModelParams,
    frequencies: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<ComplexTrace, FitError> {
    if !params.is_physical() {
        return Err(FitError::NonPhysical(format!("{params:?}")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(FitError::NonPhysical(format!("noise_sigma = {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let s21 = frequencies
        .iter()
        .map(|&f| {
            let z = params.evaluate(f);
            if noise_sigma > 0.0 {
                z + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
            } else {
                z
            }
        })
        .collect();
    validate_trace(ComplexTrace::new(frequencies.to_vec(), s21)).map_err(FitError::from)
}

/// `n` evenly spaced frequencies covering `fr ± half_widths` linewidths (fr/Ql).
pub fn linewidth_grid(fr: f64, ql: f64, half_widths: f64, n: usize) -> Vec<f64> {
    let half = half_widths * fr / ql;
    let step = 2.0 * half / (n - 1) as f64;
    (0..n).map(|i| fr - half + step * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> NotchModelParams {
        NotchModelParams {
            fr: 4.45e9,
            ql: 5e4,
            qc_mag: 1e5,
            phi: 0.1,
            a: 1.0,
            alpha: 0.0,
            tau: 40e-9,
        }
    }

    #[test]
    fn value_at_resonance() {
        let p = NotchModelParams {
            a: 0.7,
            alpha: 0.3,
            ..reference()
        };
        let expected = Complex64::from_polar(0.7, 0.3)
            * Complex64::from_polar(1.0, -2.0 * PI * p.fr * p.tau)
            * (Complex64::new(1.0, 0.0) - Complex64::from_polar(p.ql / p.qc_mag, p.phi));
        let t = synthesize_notch(&p, &[p.fr - 1.0, p.fr, p.fr + 1.0, p.fr + 2.0, p.fr + 3.0, p.fr + 4.0, p.fr + 5.0, p.fr + 6.0], 0.0, 0).unwrap();
        assert!((t.s21[1] - expected).norm() < 1e-12);
    }

    #[test]
    fn no_resonator_is_flat() {
        let p = NotchModelParams {
            qc_mag: f64::INFINITY,
            a: 0.8,
            ..reference()
        };
        let f = linewidth_grid(p.fr, p.ql, 5.0, 101);
        let t = synthesize_notch(&p, &f, 0.0, 0).unwrap();
        assert!(t.s21.iter().all(|z| (z.norm() - 0.8).abs() < 1e-12));
    }

    #[test]
    fn minimum_sits_at_resonance() {
        let p = reference();
        let f = linewidth_grid(p.fr, p.ql, 5.0, 401);
        let t = synthesize_notch(&p, &f, 0.0, 0).unwrap();
        let (imin, _) = t
            .s21
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        let step = f[1] - f[0];
        assert!((f[imin] - p.fr).abs() <= step);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let p = reference();
        let f = linewidth_grid(p.fr, p.ql, 5.0, 64);
        let a = synthesize_notch(&p, &f, 1e-3, 9).unwrap();
        let b = synthesize_notch(&p, &f, 1e-3, 9).unwrap();
        let c = synthesize_notch(&p, &f, 1e-3, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_unphysical() {
        let p = NotchModelParams {
            qc_mag: 1e4,
            phi: 0.0,
            ..reference()
        };
        assert!(synthesize_notch(&p, &linewidth_grid(p.fr, p.ql, 5.0, 16), 0.0, 0).is_err());
    }
}
