//! Participation versus SM-layer and metal thickness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{solve_with, CpwGeometry, MaterialTable, MeshSettings, ParticipationError, ParticipationResult, Region};
use crate::units::NANOMETER;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Swept thickness, m.
    pub value: f64,
    pub result: ParticipationResult,
}

/// Least-squares polynomial, lowest order first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
}

impl LinearFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Polynomial least squares of degree `degree`.
pub fn linear_fit(x: &[f64], y: &[f64], degree: usize) -> Option<LinearFit> {
    if x.len() != y.len() || x.len() <= degree {
        return None;
    }
    let a = DMatrix::from_fn(x.len(), degree + 1, |i, k| x[i].powi(k as i32));
    let b = DVector::from_column_slice(y);
    let c = a.clone().svd(true, true).solve(&b, 1e-14).ok()?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = (&a * &c - &b).iter().map(|r| r * r).sum();
    Some(LinearFit {
        coefficients: c.iter().copied().collect(),
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    })
}

/// `(max - min)/min` of a series.
pub fn relative_variation(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    (hi - lo) / lo
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmSweep {
    pub points: Vec<SweepPoint>,
    /// p_SM versus t_sm over the points within [0.4, 2] nm.
    pub sm_fit: LinearFit,
    /// Quadratic p_corner versus t_sm over the same points.
    pub corner_fit: Option<LinearFit>,
    /// t_sm at which the extrapolated SM loss equals the mean MA loss.
    pub crossover_ma: Option<f64>,
    /// t_sm at which the extrapolated SM loss equals the mean SA loss.
    pub crossover_sa: Option<f64>,
    pub ma_variation: f64,
    pub sa_variation: f64,
}

impl SmSweep {
    pub fn series(&self, region: Region) -> Vec<f64> {
        self.points.iter().map(|p| p.result.get(region)).collect()
    }
}

const FIT_RANGE: (f64, f64) = (0.4 * NANOMETER, 2.0 * NANOMETER);

fn sweep_settings(geom: &CpwGeometry, settings: &MeshSettings, thinnest: f64) -> MeshSettings {
    let layers = [thinnest, geom.t_ma, geom.t_sa]
        .into_iter()
        .filter(|t| *t > 0.0)
        .fold(f64::INFINITY, f64::min);
    MeshSettings {
        resolution: settings
            .resolution
            .or(Some(layers / settings.layer_cells.max(1) as f64)),
        ..*settings
    }
}

fn crossover(fit: &LinearFit, target: f64) -> Option<f64> {
    let (b, a) = (fit.coefficients[0], fit.coefficients[1]);
    (a > 0.0).then(|| (target - b) / a)
}

/// Solves at every SM thickness with a common grid resolution.
pub fn sweep_sm_thickness(
    geom: &CpwGeometry,
    mats: &MaterialTable,
    t_values: &[f64],
    settings: &MeshSettings,
) -> Result<SmSweep, ParticipationError> {
    let thinnest = t_values.iter().copied().fold(f64::INFINITY, f64::min);
    let s = sweep_settings(geom, settings, thinnest);
    let points = t_values
        .iter()
        .map(|t| {
            let g = CpwGeometry { t_sm: *t, ..*geom };
            solve_with(&g, mats, &s).map(|result| SweepPoint { value: *t, result })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let in_range: Vec<&SweepPoint> = points
        .iter()
        .filter(|p| p.value >= FIT_RANGE.0 * (1.0 - 1e-9) && p.value <= FIT_RANGE.1 * (1.0 + 1e-9))
        .collect();
    let x: Vec<f64> = in_range.iter().map(|p| p.value).collect();
    let fit_of = |r: Region, deg: usize| {
        let y: Vec<f64> = in_range.iter().map(|p| p.result.get(r)).collect();
        linear_fit(&x, &y, deg)
    };
    let sm_fit = fit_of(Region::Sm, 1).ok_or_else(|| {
        ParticipationError::Geometry("SM sweep needs at least two thicknesses within [0.4, 2] nm".into())
    })?;
    let corner_fit = fit_of(Region::Corner, 2);
    let mean = |r: Region| points.iter().map(|p| p.result.get(r)).sum::<f64>() / points.len() as f64;
    let tan_sm = mats.sm.tan_delta;
    let crossover_for = |r: Region| {
        (tan_sm > 0.0)
            .then(|| crossover(&sm_fit, mean(r) * mats.get(r).tan_delta / tan_sm))
            .flatten()
    };
    let variation = |r: Region| relative_variation(&points.iter().map(|p| p.result.get(r)).collect::<Vec<_>>());
    Ok(SmSweep {
        crossover_ma: crossover_for(Region::Ma),
        crossover_sa: crossover_for(Region::Sa),
        ma_variation: variation(Region::Ma),
        sa_variation: variation(Region::Sa),
        sm_fit,
        corner_fit,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetalSweep {
    pub points: Vec<SweepPoint>,
    /// `(max - min)/min` of each interface participation across the sweep.
    pub variation: Vec<(Region, f64)>,
    pub q_tls_variation: Option<f64>,
}

pub fn sweep_metal_thickness(
    geom: &CpwGeometry,
    mats: &MaterialTable,
    t_metal_values: &[f64],
    settings: &MeshSettings,
) -> Result<MetalSweep, ParticipationError> {
    let s = sweep_settings(geom, settings, geom.t_sm);
    let points = t_metal_values
        .iter()
        .map(|t| {
            let g = CpwGeometry { t_metal: *t, ..*geom };
            solve_with(&g, mats, &s).map(|result| SweepPoint { value: *t, result })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let variation = Region::INTERFACES
        .iter()
        .map(|r| (*r, relative_variation(&points.iter().map(|p| p.result.get(*r)).collect::<Vec<_>>())))
        .collect();
    let q: Option<Vec<f64>> = points.iter().map(|p| p.result.q_tls).collect();
    Ok(MetalSweep {
        variation,
        q_tls_variation: q.map(|q| relative_variation(&q)),
        points,
    })
}
