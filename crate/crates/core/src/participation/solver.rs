//! Assembly and direct solution of the P1 finite-element system.
//!
//! Each grid cell is split into two right triangles along its rising
//! diagonal. On such a mesh the P1 stiffness matrix couples only grid
//! neighbours, so with x-major node numbering it is banded with half
//! bandwidth `ny` and is factored with a banded Cholesky decomposition.

use super::mesh::Grid;
use super::{CpwGeometry, MaterialTable, ParticipationError, Region};

/// Symmetric positive-definite band matrix, lower triangle stored row-wise.
struct BandMatrix {
    n: usize,
    bw: usize,
    /// Row `i` holds columns `i - bw ..= i` at offsets `0 ..= bw`.
    data: Vec<f64>,
}

impl BandMatrix {
    fn new(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw + j - i)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// In-place Cholesky factorization `A = L·Lᵀ`.
    fn factor(&mut self) -> Result<(), ParticipationError> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let first = i.saturating_sub(bw);
            for j in first..=i {
                // Σ_k L[i,k]·L[j,k] over k in [max(first_i, first_j), j)
                let lo = first.max(j.saturating_sub(bw));
                let len = j - lo;
                let ri = i * w + (bw + lo - i);
                let rj = j * w + (bw + lo - j);
                let dot: f64 = self.data[ri..ri + len]
                    .iter()
                    .zip(&self.data[rj..rj + len])
                    .map(|(a, b)| a * b)
                    .sum();
                let k = i * w + (bw + j - i);
                let v = self.data[k] - dot;
                if i == j {
                    if !(v > 0.0) {
                        return Err(ParticipationError::DegenerateMesh(format!(
                            "stiffness matrix not positive definite at row {i}"
                        )));
                    }
                    self.data[k] = v.sqrt();
                } else {
                    self.data[k] = v / self.data[j * w + bw];
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let first = i.saturating_sub(bw);
            let mut s = b[i];
            for k in first..i {
                s -= self.data[i * w + (bw + k - i)] * b[k];
            }
            b[i] = s / self.data[i * w + bw];
        }
        for i in (0..n).rev() {
            b[i] /= self.data[i * w + bw];
            let v = b[i];
            let first = i.saturating_sub(bw);
            for k in first..i {
                b[k] -= self.data[i * w + (bw + k - i)] * v;
            }
        }
    }
}

/// Potential on the grid nodes together with the per-cell permittivity.
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub geometry: CpwGeometry,
    pub grid: Grid,
    /// Node potentials, `phi[i * ny + j]`, V.
    pub phi: Vec<f64>,
    pub eps: Vec<f64>,
    /// Node held at a fixed potential.
    pub fixed: Vec<bool>,
    /// `Σ_cells ε_r ∫|∇φ|²` (energy without the ε₀/2 factor).
    pub weighted_energy: f64,
}

/// Per-cell quantities used for energies and field sampling.
#[derive(Debug, Clone, Copy)]
pub struct CellField {
    pub hx: f64,
    pub hy: f64,
    /// Cell average of (∂φ/∂x)².
    pub ex2: f64,
    /// Cell average of (∂φ/∂y)².
    pub ey2: f64,
}

impl CellField {
    /// `∫|∇φ|²` over the cell.
    pub fn integral(&self) -> f64 {
        (self.ex2 + self.ey2) * self.hx * self.hy
    }
}

impl FieldSolution {
    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.phi[i * self.grid.ny() + j]
    }

    pub fn cell_field(&self, i: usize, j: usize) -> CellField {
        let g = &self.grid;
        let hx = g.xs[i + 1] - g.xs[i];
        let hy = g.ys[j + 1] - g.ys[j];
        let (p00, p10, p01, p11) = (self.node(i, j), self.node(i + 1, j), self.node(i, j + 1), self.node(i + 1, j + 1));
        let (db, dt) = (p10 - p00, p11 - p01);
        let (dl, dr) = (p01 - p00, p11 - p10);
        CellField {
            hx,
            hy,
            ex2: (db * db + dt * dt) / (2.0 * hx * hx),
            ey2: (dl * dl + dr * dr) / (2.0 * hy * hy),
        }
    }

    /// `Σ ε_r ∫|∇φ|²` per region.
    pub fn region_energies(&self) -> Vec<(Region, f64)> {
        let ny = self.grid.ny();
        let mut acc: Vec<(Region, f64)> = Region::ALL.iter().map(|r| (*r, 0.0)).collect();
        for i in 0..self.grid.nx() - 1 {
            for j in 0..ny - 1 {
                let r = self.grid.cell(i, j);
                if r == Region::Metal {
                    continue;
                }
                let e = self.eps[i * (ny - 1) + j] * self.cell_field(i, j).integral();
                if let Some(slot) = acc.iter_mut().find(|(k, _)| *k == r) {
                    slot.1 += e;
                }
            }
        }
        acc
    }

    /// Residual error indicator per cell from the jumps of the normal flux
    /// `ε ∂φ/∂n` across element edges.
    pub fn flux_jump_indicator(&self) -> Vec<f64> {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let nc = ny - 1;
        let mut eta = vec![0.0; (nx - 1) * nc];
        // gradients of the two triangles of each cell
        // lower-right T1: (Δb/hx, Δr/hy); upper-left T2: (Δt/hx, Δl/hy)
        let grads = |i: usize, j: usize| {
            let hx = g.xs[i + 1] - g.xs[i];
            let hy = g.ys[j + 1] - g.ys[j];
            let (p00, p10, p01, p11) = (self.node(i, j), self.node(i + 1, j), self.node(i, j + 1), self.node(i + 1, j + 1));
            ((p10 - p00) / hx, (p11 - p10) / hy, (p11 - p01) / hx, (p01 - p00) / hy, hx, hy)
        };
        let fixed = |i: usize, j: usize| self.fixed[i * ny + j];
        for i in 0..nx - 1 {
            for j in 0..nc {
                let c = i * nc + j;
                let eps = self.eps[c];
                let (g1x, g1y, g2x, g2y, hx, hy) = grads(i, j);
                if !(fixed(i, j) && fixed(i + 1, j + 1)) {
                    let l = hx.hypot(hy);
                    let jump = eps * ((g1x - g2x) * hy - (g1y - g2y) * hx) / l;
                    eta[c] += l * l * jump * jump;
                }
                if i + 1 < nx - 1 && !(fixed(i + 1, j) && fixed(i + 1, j + 1)) {
                    let c2 = (i + 1) * nc + j;
                    let (_, _, g2x_r, _, _, _) = grads(i + 1, j);
                    let jump = eps * g1x - self.eps[c2] * g2x_r;
                    let v = hy * hy * jump * jump;
                    eta[c] += 0.5 * v;
                    eta[c2] += 0.5 * v;
                }
                if j + 1 < nc && !(fixed(i, j + 1) && fixed(i + 1, j + 1)) {
                    let c2 = i * nc + j + 1;
                    let (_, g1y_u, _, _, _, _) = grads(i, j + 1);
                    let jump = eps * g2y - self.eps[c2] * g1y_u;
                    let v = hx * hx * jump * jump;
                    eta[c] += 0.5 * v;
                    eta[c2] += 0.5 * v;
                }
            }
        }
        eta
    }
}

/// Solves `∇·(ε∇φ) = 0` with the center conductor at 1 V and grounds and the
/// outer boundary at 0 V.
pub fn solve_grid(geom: &CpwGeometry, mats: &MaterialTable, grid: Grid) -> Result<FieldSolution, ParticipationError> {
    let (nx, ny) = (grid.nx(), grid.ny());
    if nx < 3 || ny < 3 {
        return Err(ParticipationError::DegenerateMesh("grid has fewer than 3 lines".into()));
    }
    let n = nx * ny;
    let mut fixed = vec![false; n];
    let mut value = vec![0.0; n];
    for i in 0..nx {
        for j in 0..ny {
            let k = i * ny + j;
            if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                fixed[k] = true;
            } else if let Some(v) = geom.conductor_potential(grid.xs[i], grid.ys[j]) {
                fixed[k] = true;
                value[k] = v;
            }
        }
    }
    let eps: Vec<f64> = grid
        .regions
        .iter()
        .map(|r| if *r == Region::Metal { 1.0 } else { mats.get(*r).eps_r })
        .collect();

    let mut a = BandMatrix::new(n, ny);
    let mut rhs = vec![0.0; n];
    let couple = |a: &mut BandMatrix, rhs: &mut Vec<f64>, p: usize, q: usize, cond: f64| {
        match (fixed[p], fixed[q]) {
            (false, false) => {
                a.add(p, p, cond);
                a.add(q, q, cond);
                a.add(p, q, -cond);
            }
            (false, true) => {
                a.add(p, p, cond);
                rhs[p] += cond * value[q];
            }
            (true, false) => {
                a.add(q, q, cond);
                rhs[q] += cond * value[p];
            }
            (true, true) => {}
        }
    };
    for i in 0..nx - 1 {
        let hx = grid.xs[i + 1] - grid.xs[i];
        for j in 0..ny - 1 {
            let hy = grid.ys[j + 1] - grid.ys[j];
            if !(hx > 0.0 && hy > 0.0) {
                return Err(ParticipationError::DegenerateMesh(format!("zero-size cell ({i}, {j})")));
            }
            let e = eps[i * (ny - 1) + j];
            let gx = 0.5 * e * hy / hx;
            let gy = 0.5 * e * hx / hy;
            let (n00, n10, n01, n11) = (i * ny + j, (i + 1) * ny + j, i * ny + j + 1, (i + 1) * ny + j + 1);
            couple(&mut a, &mut rhs, n00, n10, gx);
            couple(&mut a, &mut rhs, n01, n11, gx);
            couple(&mut a, &mut rhs, n00, n01, gy);
            couple(&mut a, &mut rhs, n10, n11, gy);
        }
    }
    for k in 0..n {
        if fixed[k] {
            a.add(k, k, 1.0);
            rhs[k] = value[k];
        }
    }
    a.factor()?;
    a.solve(&mut rhs);

    let mut sol = FieldSolution {
        geometry: *geom,
        grid,
        phi: rhs,
        eps,
        fixed,
        weighted_energy: 0.0,
    };
    sol.weighted_energy = sol.region_energies().iter().map(|(_, e)| e).sum();
    if !(sol.weighted_energy > 0.0 && sol.weighted_energy.is_finite()) {
        return Err(ParticipationError::DegenerateMesh("no field energy".into()));
    }
    Ok(sol)
}
