//! Physical constants and unit conversions.
//!
//! Everything inside the crate is SI (Hz, s, W, K, m). The helpers here are
//! the only place where the laboratory units used in tables and config files
//! (GHz, µs, dBm, nm) are translated.

use std::f64::consts::PI;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
/// Vacuum permittivity, F/m.
pub const EPS0: f64 = 8.854_187_812_8e-12;

pub const GHZ: f64 = 1e9;
pub const MICROSECOND: f64 = 1e-6;
pub const NANOMETER: f64 = 1e-9;
pub const MICROMETER: f64 = 1e-6;

/// Angular frequency of a cyclic frequency in Hz.
#[inline]
pub fn angular(f_hz: f64) -> f64 {
    2.0 * PI * f_hz
}

/// Power in dBm to watts.
#[inline]
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Power in watts to dBm.
#[inline]
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Power reaching the device input port after a chain of `total_attenuation_db`.
#[inline]
pub fn dbm_to_device_watts(applied_power_dbm: f64, total_attenuation_db: f64) -> f64 {
    dbm_to_watts(applied_power_dbm - total_attenuation_db)
}

/// `tanh(ħω / 2k_BT)`; returns 1 at T = 0.
pub fn thermal_factor(f_hz: f64, temperature_k: f64) -> f64 {
    if temperature_k <= 0.0 {
        return 1.0;
    }
    (HBAR * angular(f_hz) / (2.0 * K_B * temperature_k)).tanh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dbm_reference_points() {
        assert!((dbm_to_device_watts(0.0, 0.0) - 1e-3).abs() < 1e-18);
        assert!((dbm_to_device_watts(-30.0, 60.0) - 1e-12).abs() < 1e-24);
        assert!((dbm_to_device_watts(10.0, 10.0) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn thermal_factor_saturates_at_millikelvin() {
        // ħω/2kT ≈ 10.7 at 10 mK, so 1 - tanh ≈ 2e-9
        let t = thermal_factor(4.45e9, 0.010);
        assert!((t - 1.0).abs() < 1e-8);
        assert!(t < 1.0);
        assert_eq!(thermal_factor(4.45e9, 0.0), 1.0);
        // ħω/2kT = 1 at T ≈ 0.107 K for 4.45 GHz
        let t0 = HBAR * angular(4.45e9) / (2.0 * K_B);
        assert!((thermal_factor(4.45e9, t0) - 1f64.tanh()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn dbm_round_trip(p in -180.0f64..40.0) {
            let back = watts_to_dbm(dbm_to_watts(p));
            prop_assert!((back - p).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }
}
