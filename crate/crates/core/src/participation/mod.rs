//! Electric-field energy participation of the dielectric regions of a CPW
//! cross-section and the TLS-limited quality factor `1/Q = Σ pᵢ·tanδᵢ`.
//!
//! The center conductor sits at 1 V; grounds and the outer box are at 0 V.
//! Conductors are perfect and of finite thickness. Thin interface layers are
//! either meshed directly ([`solve_cross_section`]) or evaluated from the
//! unperturbed surface fields ([`thin_layer_participation`]).

mod mesh;
mod solver;
mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mesh::{Grid, MeshSettings};
pub use solver::{solve_grid, CellField, FieldSolution};
pub use sweep::{
    linear_fit, relative_variation, sweep_metal_thickness, sweep_sm_thickness, LinearFit, MetalSweep, SmSweep,
    SweepPoint,
};

use crate::units::{EPS0, MICROMETER, NANOMETER};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParticipationError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid material: {0}")]
    Material(String),
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("refinement did not converge: largest change {max_change:.4} after {levels} levels")]
    NotConverged { max_change: f64, levels: usize },
    #[error("layer of thickness {t:e} m is not thin compared to the conductor width")]
    NotThin { t: f64 },
    #[error("{0:?} is not an interface layer")]
    NotALayer(Region),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "Si")]
    Substrate,
    #[serde(rename = "air")]
    Air,
    #[serde(rename = "MA")]
    Ma,
    #[serde(rename = "SA")]
    Sa,
    #[serde(rename = "SM")]
    Sm,
    #[serde(rename = "corner")]
    Corner,
    /// Perfect conductor, carries no field.
    #[serde(rename = "metal")]
    Metal,
}

impl Region {
    /// Dielectric regions, in reporting order.
    pub const ALL: [Region; 6] = [Region::Substrate, Region::Air, Region::Ma, Region::Sa, Region::Sm, Region::Corner];
    pub const INTERFACES: [Region; 4] = [Region::Sm, Region::Ma, Region::Sa, Region::Corner];

    pub fn name(self) -> &'static str {
        match self {
            Region::Substrate => "Si",
            Region::Air => "air",
            Region::Ma => "MA",
            Region::Sa => "SA",
            Region::Sm => "SM",
            Region::Corner => "corner",
            Region::Metal => "metal",
        }
    }
}

/// CPW cross-section; lengths in m. Interface-layer thicknesses of zero
/// remove the layer.
///
/// Conductors rest on the substrate plane. The SM layer is the top `t_sm` of
/// the substrate under each conductor footprint, SA covers the substrate in
/// the gaps and MA wraps the exposed conductor faces. SM and SA material within
/// a square of half-side `corner_extent` around each gap-facing bottom edge
/// belongs to the corner region instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpwGeometry {
    pub w: f64,
    pub gap: f64,
    pub t_metal: f64,
    pub t_substrate: f64,
    pub air_height: f64,
    pub t_sm: f64,
    pub t_ma: f64,
    pub t_sa: f64,
    pub corner_extent: f64,
    pub domain_width: f64,
}

impl Default for CpwGeometry {
    fn default() -> Self {
        Self {
            w: 20.0 * MICROMETER,
            gap: 10.0 * MICROMETER,
            t_metal: 150.0 * NANOMETER,
            t_substrate: 280.0 * MICROMETER,
            air_height: 2000.0 * MICROMETER,
            t_sm: 0.5 * NANOMETER,
            t_ma: 5.0 * NANOMETER,
            t_sa: 2.0 * NANOMETER,
            corner_extent: 100.0 * NANOMETER,
            domain_width: 400.0 * MICROMETER,
        }
    }
}

impl CpwGeometry {
    pub fn validate(&self) -> Result<(), ParticipationError> {
        let positive = [
            ("w", self.w),
            ("gap", self.gap),
            ("t_metal", self.t_metal),
            ("t_substrate", self.t_substrate),
            ("air_height", self.air_height),
            ("corner_extent", self.corner_extent),
            ("domain_width", self.domain_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ParticipationError::Geometry(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [("t_sm", self.t_sm), ("t_ma", self.t_ma), ("t_sa", self.t_sa)] {
            if !(v >= 0.0 && 100.0 * v <= self.w) {
                return Err(ParticipationError::Geometry(format!(
                    "{name} = {v} must be non-negative and at least 100x thinner than w"
                )));
            }
        }
        if self.domain_width < 10.0 * (self.w + 2.0 * self.gap) * (1.0 - 1e-12) {
            return Err(ParticipationError::Geometry(
                "domain_width must be at least 10x the CPW aperture".into(),
            ));
        }
        if self.corner_extent >= 0.5 * self.w {
            return Err(ParticipationError::Geometry("corner_extent must be below w/2".into()));
        }
        Ok(())
    }

    /// Conductors rest on the substrate plane `y = 0`.
    pub fn metal_top(&self) -> f64 {
        self.t_metal
    }

    /// Multiplies every length by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            w: self.w * k,
            gap: self.gap * k,
            t_metal: self.t_metal * k,
            t_substrate: self.t_substrate * k,
            air_height: self.air_height * k,
            t_sm: self.t_sm * k,
            t_ma: self.t_ma * k,
            t_sa: self.t_sa * k,
            corner_extent: self.corner_extent * k,
            domain_width: self.domain_width * k,
        }
    }

    /// Same geometry with every interface layer removed.
    pub fn without_layers(&self) -> Self {
        Self {
            t_sm: 0.0,
            t_ma: 0.0,
            t_sa: 0.0,
            ..*self
        }
    }

    fn in_center(&self, x: f64) -> bool {
        x.abs() <= 0.5 * self.w
    }

    fn in_ground(&self, x: f64) -> bool {
        x.abs() >= 0.5 * self.w + self.gap
    }

    /// Distance from `x` (inside a conductor footprint) to the nearest
    /// footprint edge.
    fn edge_distance(&self, x: f64) -> f64 {
        let a = x.abs();
        if a <= 0.5 * self.w {
            0.5 * self.w - a
        } else {
            a - (0.5 * self.w + self.gap)
        }
    }

    /// Potential of the conductor containing `(x, y)` (boundary included).
    pub fn conductor_potential(&self, x: f64, y: f64) -> Option<f64> {
        if y < 0.0 || y > self.metal_top() {
            return None;
        }
        if self.in_center(x) {
            Some(1.0)
        } else if self.in_ground(x) {
            Some(0.0)
        } else {
            None
        }
    }

    /// Region containing the interior point `(x, y)`.
    pub fn region_at(&self, x: f64, y: f64) -> Region {
        match self.layer_at(x, y) {
            Region::Sm | Region::Sa if self.in_corner(x, y) => Region::Corner,
            r => r,
        }
    }

    /// Inside the square of side `2·corner_extent` centred on a gap-facing
    /// bottom conductor edge.
    fn in_corner(&self, x: f64, y: f64) -> bool {
        let a = x.abs();
        let half_w = 0.5 * self.w;
        let d = (a - half_w).abs().min((a - half_w - self.gap).abs());
        d < self.corner_extent && y.abs() < self.corner_extent
    }

    fn layer_at(&self, x: f64, y: f64) -> Region {
        let top = self.metal_top();
        let footprint = self.in_center(x) || self.in_ground(x);
        if y < 0.0 {
            if footprint && y >= -self.t_sm {
                return Region::Sm;
            }
            return Region::Substrate;
        }
        if footprint {
            if y <= top {
                return Region::Metal;
            }
            if y < top + self.t_ma {
                return Region::Ma;
            }
            return Region::Air;
        }
        if y < self.t_sa {
            return Region::Sa;
        }
        let a = x.abs();
        let near_edge = a < 0.5 * self.w + self.t_ma || a > 0.5 * self.w + self.gap - self.t_ma;
        if near_edge && y < top + self.t_ma {
            return Region::Ma;
        }
        Region::Air
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub eps_r: f64,
    pub tan_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialTable {
    #[serde(rename = "Si")]
    pub si: Material,
    pub air: Material,
    #[serde(rename = "MA")]
    pub ma: Material,
    #[serde(rename = "SA")]
    pub sa: Material,
    #[serde(rename = "SM")]
    pub sm: Material,
    pub corner: Material,
}

impl Default for MaterialTable {
    fn default() -> Self {
        Self {
            si: Material { eps_r: 11.7, tan_delta: 1e-7 },
            air: Material { eps_r: 1.0, tan_delta: 0.0 },
            ma: Material { eps_r: 7.0, tan_delta: 1e-3 },
            sa: Material { eps_r: 4.0, tan_delta: 1e-3 },
            sm: Material { eps_r: 4.0, tan_delta: 1e-3 },
            corner: Material { eps_r: 4.0, tan_delta: 1e-3 },
        }
    }
}

impl MaterialTable {
    pub fn get(&self, region: Region) -> Material {
        match region {
            Region::Substrate => self.si,
            Region::Air => self.air,
            Region::Ma => self.ma,
            Region::Sa => self.sa,
            Region::Sm => self.sm,
            Region::Corner => self.corner,
            Region::Metal => Material { eps_r: 1.0, tan_delta: 0.0 },
        }
    }

    /// Every region with the same permittivity and no loss.
    pub fn uniform(eps_r: f64) -> Self {
        let m = Material { eps_r, tan_delta: 0.0 };
        Self {
            si: m,
            air: m,
            ma: m,
            sa: m,
            sm: m,
            corner: m,
        }
    }

    pub fn validate(&self) -> Result<(), ParticipationError> {
        for r in Region::ALL {
            let m = self.get(r);
            if !(m.eps_r >= 1.0 && m.tan_delta >= 0.0) {
                return Err(ParticipationError::Material(format!(
                    "{}: eps_r = {}, tan_delta = {}",
                    r.name(),
                    m.eps_r,
                    m.tan_delta
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    pub elements: usize,
    pub refinement_level: usize,
    pub nx: usize,
    pub ny: usize,
    /// Largest relative participation change at each refinement level.
    pub level_changes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationResult {
    pub p: BTreeMap<Region, f64>,
    /// Absent when every participating region is lossless.
    pub q_tls: Option<f64>,
    pub mesh_stats: MeshStats,
    /// J/m at 1 V on the center conductor.
    pub energy_total: f64,
}

impl ParticipationResult {
    pub fn get(&self, region: Region) -> f64 {
        self.p.get(&region).copied().unwrap_or(0.0)
    }

    /// Loss contribution `pᵢ·tanδᵢ`.
    pub fn loss(&self, region: Region, mats: &MaterialTable) -> f64 {
        self.get(region) * mats.get(region).tan_delta
    }
}

/// `Q_TLS = 1/Σ pᵢ·tanδᵢ`; `None` for a lossless structure.
pub fn q_tls_from_participation(p: &BTreeMap<Region, f64>, mats: &MaterialTable) -> Option<f64> {
    let loss: f64 = p.iter().map(|(r, v)| v * mats.get(*r).tan_delta).sum();
    (loss > 0.0).then(|| 1.0 / loss)
}

fn participations(sol: &FieldSolution) -> BTreeMap<Region, f64> {
    sol.region_energies()
        .into_iter()
        .map(|(r, e)| (r, e / sol.weighted_energy))
        .collect()
}

fn max_relative_change(a: &BTreeMap<Region, f64>, b: &BTreeMap<Region, f64>) -> f64 {
    Region::ALL
        .iter()
        .map(|r| {
            let (x, y) = (a.get(r).copied().unwrap_or(0.0), b.get(r).copied().unwrap_or(0.0));
            if x == 0.0 && y == 0.0 {
                0.0
            } else {
                (x - y).abs() / x.abs().max(y.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Marks the intervals carrying the largest share of the indicator, up to a
/// `marking` fraction of the total and a quarter of the intervals. Marks are
/// mirrored when `mirror` is set.
fn mark(sums: &[f64], marking: f64, mirror: bool) -> Vec<usize> {
    let n = sums.len();
    let combined: Vec<f64> = if mirror {
        (0..n).map(|k| sums[k] + sums[n - 1 - k]).collect()
    } else {
        sums.to_vec()
    };
    let total: f64 = combined.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| combined[*b].total_cmp(&combined[*a]).then(a.cmp(b)));
    let cap = (n / 4).max(1);
    let mut out = Vec::new();
    let mut acc = 0.0;
    for k in order {
        if acc >= marking * total || out.len() >= cap {
            break;
        }
        acc += combined[k];
        out.push(k);
        if mirror && n - 1 - k != k {
            out.push(n - 1 - k);
            acc += combined[n - 1 - k];
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn refine(sol: &FieldSolution, settings: &MeshSettings) -> Grid {
    let g = &sol.grid;
    let eta = sol.flux_jump_indicator();
    let (ncx, ncy) = (g.nx() - 1, g.ny() - 1);
    let mut cols = vec![0.0; ncx];
    let mut rows = vec![0.0; ncy];
    for i in 0..ncx {
        for j in 0..ncy {
            cols[i] += eta[i * ncy + j];
            rows[j] += eta[i * ncy + j];
        }
    }
    let c = mark(&cols, settings.marking, true);
    let r = mark(&rows, settings.marking, false);
    g.refined(&sol.geometry, &c, &r)
}

/// Solves on the initial grid and refines adaptively until every
/// participation changes by less than the tolerance between two levels.
pub fn solve_adaptive(
    geom: &CpwGeometry,
    mats: &MaterialTable,
    settings: &MeshSettings,
) -> Result<(FieldSolution, ParticipationResult), ParticipationError> {
    geom.validate()?;
    mats.validate()?;
    let mut sol = solve_grid(geom, mats, Grid::build(geom, settings))?;
    let mut p = participations(&sol);
    let mut changes = Vec::new();
    for level in 1..=settings.max_levels {
        let next = solve_grid(geom, mats, refine(&sol, settings))?;
        let p_next = participations(&next);
        let change = max_relative_change(&p, &p_next);
        changes.push(change);
        sol = next;
        p = p_next;
        if change < settings.tolerance {
            let result = ParticipationResult {
                q_tls: q_tls_from_participation(&p, mats),
                p,
                mesh_stats: MeshStats {
                    elements: sol.grid.element_count(),
                    refinement_level: level,
                    nx: sol.grid.nx(),
                    ny: sol.grid.ny(),
                    level_changes: changes,
                },
                energy_total: 0.5 * EPS0 * sol.weighted_energy,
            };
            return Ok((sol, result));
        }
    }
    Err(ParticipationError::NotConverged {
        max_change: changes.last().copied().unwrap_or(f64::NAN),
        levels: settings.max_levels,
    })
}

/// Participation of every dielectric region with the interface layers meshed.
pub fn solve_cross_section(geom: &CpwGeometry, mats: &MaterialTable) -> Result<ParticipationResult, ParticipationError> {
    solve_with(geom, mats, &MeshSettings::default())
}

pub fn solve_with(
    geom: &CpwGeometry,
    mats: &MaterialTable,
    settings: &MeshSettings,
) -> Result<ParticipationResult, ParticipationError> {
    solve_adaptive(geom, mats, settings).map(|(_, r)| r)
}

/// Participation of a thin layer of thickness `t` evaluated from a solution
/// without the layer: `p = t·∫[ε_l·E_∥² + (ε_adj²/ε_l)·E_⊥²] dl / ∫ε|E|² dA`.
///
/// Fields are sampled in the first row of cells on the side the layer faces:
/// the substrate under the conductors for SM and corner, the air above the
/// substrate for SA, and the air around the conductors for MA. `eps_adjacent`
/// is the permittivity of that sampled medium. SA excludes the corner
/// squares; `Corner` evaluates only the SM-layer part of them.
pub fn thin_layer_participation(
    sol: &FieldSolution,
    layer: Region,
    t: f64,
    eps_layer: f64,
    eps_adjacent: f64,
) -> Result<f64, ParticipationError> {
    let geom = &sol.geometry;
    if !(t >= 0.0) {
        return Err(ParticipationError::Geometry(format!("layer thickness {t}")));
    }
    if 100.0 * t > geom.w {
        return Err(ParticipationError::NotThin { t });
    }
    let g = &sol.grid;
    let (ncx, ncy) = (g.nx() - 1, g.ny() - 1);
    let row_at = |y: f64| g.ys.iter().position(|v| *v == y);
    let col_at = |x: f64| g.xs.iter().position(|v| *v == x);
    let missing = || ParticipationError::DegenerateMesh("interface line missing from grid".into());
    let j0 = row_at(0.0).ok_or_else(missing)?;
    let perp = eps_adjacent * eps_adjacent / eps_layer;
    let mut integral = 0.0;
    let xc = |i: usize| 0.5 * (g.xs[i] + g.xs[i + 1]);

    match layer {
        Region::Sm | Region::Corner => {
            for i in 0..ncx {
                let x = xc(i);
                if !(geom.in_center(x) || geom.in_ground(x)) {
                    continue;
                }
                let corner = geom.edge_distance(x) < geom.corner_extent;
                if corner != (layer == Region::Corner) {
                    continue;
                }
                let f = sol.cell_field(i, j0 - 1);
                integral += (eps_layer * f.ex2 + perp * f.ey2) * f.hx;
            }
        }
        Region::Sa => {
            for i in 0..ncx {
                let x = xc(i);
                if geom.in_center(x) || geom.in_ground(x) || geom.in_corner(x, 0.0) {
                    continue;
                }
                let f = sol.cell_field(i, j0);
                integral += (eps_layer * f.ex2 + perp * f.ey2) * f.hx;
            }
        }
        Region::Ma => {
            let top = geom.metal_top();
            let jt = row_at(top).ok_or_else(missing)?;
            for i in 0..ncx {
                let x = xc(i);
                if geom.in_center(x) || geom.in_ground(x) {
                    let f = sol.cell_field(i, jt);
                    integral += (eps_layer * f.ex2 + perp * f.ey2) * f.hx;
                }
            }
            // sidewalls: the gap-side column next to each conductor face
            let half_w = 0.5 * geom.w;
            let ground = half_w + geom.gap;
            let faces = [
                (col_at(half_w).ok_or_else(missing)?, false),
                (col_at(ground).ok_or_else(missing)?, true),
                (col_at(-half_w).ok_or_else(missing)?, true),
                (col_at(-ground).ok_or_else(missing)?, false),
            ];
            for (line, gap_on_left) in faces {
                let i = if gap_on_left { line - 1 } else { line };
                for j in j0..jt.min(ncy) {
                    let f = sol.cell_field(i, j);
                    integral += (eps_layer * f.ey2 + perp * f.ex2) * f.hy;
                }
            }
        }
        other => return Err(ParticipationError::NotALayer(other)),
    }
    Ok(t * integral / sol.weighted_energy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse() -> MeshSettings {
        MeshSettings {
            grading: 1.6,
            max_levels: 3,
            tolerance: 0.05,
            ..Default::default()
        }
    }

    #[test]
    fn q_tls_direct_substitution() {
        let mats = MaterialTable::default();
        let p = BTreeMap::from([(Region::Sm, 1.0)]);
        assert!((q_tls_from_participation(&p, &mats).unwrap() - 1000.0).abs() < 1e-9);
        let lossless = MaterialTable::uniform(1.0);
        assert_eq!(q_tls_from_participation(&p, &lossless), None);
    }

    #[test]
    fn region_map() {
        let g = CpwGeometry::default();
        let nm = NANOMETER;
        assert_eq!(g.region_at(0.0, -1e-6), Region::Substrate);
        assert_eq!(g.region_at(0.0, -0.25 * nm), Region::Sm);
        assert_eq!(g.region_at(0.0, -0.75 * nm), Region::Substrate);
        assert_eq!(g.region_at(15e-6, -0.25 * nm), Region::Substrate);
        assert_eq!(g.region_at(10e-6 - 50.0 * nm, -0.25 * nm), Region::Corner);
        assert_eq!(g.region_at(0.0, 100.0 * nm), Region::Metal);
        assert_eq!(g.region_at(0.0, g.metal_top() + 2.0 * nm), Region::Ma);
        assert_eq!(g.region_at(15e-6, 1.0 * nm), Region::Sa);
        assert_eq!(g.region_at(10e-6 + 2.0 * nm, 50.0 * nm), Region::Ma);
        assert_eq!(g.region_at(10e-6 + 2.0 * nm, 120.0 * nm), Region::Ma);
        assert_eq!(g.region_at(10e-6 + 60.0 * nm, 1.0 * nm), Region::Corner);
        assert_eq!(g.region_at(10e-6 + 120.0 * nm, 1.0 * nm), Region::Sa);
        assert_eq!(g.region_at(10e-6 + 60.0 * nm, 50.0 * nm), Region::Air);
        assert_eq!(g.region_at(15e-6, 50.0 * nm), Region::Air);
        assert_eq!(g.region_at(-25e-6, -0.25 * nm), Region::Sm);
        assert_eq!(g.region_at(-20e-6 - 50.0 * nm, -0.25 * nm), Region::Corner);
    }

    #[test]
    fn geometry_invariants() {
        let g = CpwGeometry::default();
        assert!(g.validate().is_ok());
        assert!(CpwGeometry { t_sm: 1e-6, ..g }.validate().is_err());
        assert!(CpwGeometry { domain_width: 100e-6, ..g }.validate().is_err());
        assert!(CpwGeometry { w: -1.0, ..g }.validate().is_err());
    }

    #[test]
    fn homogeneous_medium_splits_by_area_weighted_field() {
        let g = CpwGeometry::default().without_layers();
        let r = solve_with(&g, &MaterialTable::uniform(1.0), &coarse()).unwrap();
        let sum: f64 = r.p.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // a thin conductor in vacuum stores nearly equal energy above and below
        let (sub, air) = (r.get(Region::Substrate), r.get(Region::Air));
        assert!(sub > 0.4 && air > 0.4, "{sub} {air}");
        assert!(air > sub);
        assert_eq!(r.q_tls, None);
    }

    #[test]
    fn thin_layer_linear_and_zero() {
        let g = CpwGeometry::default().without_layers();
        let mats = MaterialTable::default();
        let (sol, _) = solve_adaptive(&g, &mats, &coarse()).unwrap();
        assert_eq!(thin_layer_participation(&sol, Region::Sm, 0.0, 4.0, 11.7).unwrap(), 0.0);
        let a = thin_layer_participation(&sol, Region::Sm, 0.5e-9, 4.0, 11.7).unwrap();
        let b = thin_layer_participation(&sol, Region::Sm, 1.0e-9, 4.0, 11.7).unwrap();
        assert_eq!(2.0 * a, b);
        assert!(a > 0.0);
        assert!(matches!(
            thin_layer_participation(&sol, Region::Sm, 1e-6, 4.0, 11.7),
            Err(ParticipationError::NotThin { .. })
        ));
        assert!(thin_layer_participation(&sol, Region::Air, 1e-9, 1.0, 1.0).is_err());
    }
}
