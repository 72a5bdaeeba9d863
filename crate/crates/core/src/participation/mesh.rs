//! Graded tensor-product grid over the CPW cross-section.
//!
//! Grid lines are placed so that the local spacing follows
//! `h(s) = min(h_max, min_c(h_c + (q-1)|s - c|))` around a set of key
//! coordinates `c` (conductor edges, layer boundaries). Every length is derived
//! from the geometry, so scaling the geometry scales the grid exactly.

use serde::{Deserialize, Serialize};

use super::{CpwGeometry, Region};

/// Grid-generation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSettings {
    /// Ratio between neighbouring cell sizes away from key lines.
    pub grading: f64,
    /// Cells across the thinnest interface layer.
    pub layer_cells: usize,
    /// Smallest spacing at conductor edges and layer boundaries. Derived from
    /// the layer thicknesses when absent.
    pub resolution: Option<f64>,
    /// Largest spacing as a fraction of the domain extent.
    pub max_fraction: f64,
    /// Adaptive refinement passes after the initial solve.
    pub max_levels: usize,
    /// Relative change in every participation between the last two levels
    /// below which the solution is accepted.
    pub tolerance: f64,
    /// Fraction of the indicator mass marked for refinement per pass.
    pub marking: f64,
}

impl Default for MeshSettings {
    fn default() -> Self {
        Self {
            grading: 1.3,
            layer_cells: 2,
            resolution: None,
            max_fraction: 0.05,
            max_levels: 4,
            tolerance: 0.02,
            marking: 0.5,
        }
    }
}

impl MeshSettings {
    pub fn resolution_for(&self, geom: &CpwGeometry) -> f64 {
        self.resolution.unwrap_or_else(|| {
            let thinnest = [geom.t_sm, geom.t_ma, geom.t_sa]
                .into_iter()
                .filter(|t| *t > 0.0)
                .fold(f64::INFINITY, f64::min);
            let base = if thinnest.is_finite() { thinnest } else { geom.w * 1e-4 };
            base / self.layer_cells.max(1) as f64
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Key {
    at: f64,
    /// Local spacing at the key; infinite for plain break points.
    h: f64,
}

/// Lines between consecutive keys, spaced by the size function.
fn graded_lines(keys: &mut Vec<Key>, grading: f64, h_max: f64) -> Vec<f64> {
    keys.sort_by(|a, b| a.at.total_cmp(&b.at));
    keys.dedup_by(|b, a| {
        if a.at == b.at {
            a.h = a.h.min(b.h);
            true
        } else {
            false
        }
    });
    let slope = grading - 1.0;
    let size = |s: f64| {
        keys.iter()
            .map(|k| k.h + slope * (s - k.at).abs())
            .fold(h_max, f64::min)
    };
    let mut lines = vec![keys[0].at];
    for pair in keys.windows(2) {
        let (a, b) = (pair[0].at, pair[1].at);
        // cumulative ∫ds/h sampled finely enough to be exact to plotting precision
        let mut samples = vec![(a, 0.0)];
        let (mut s, mut acc) = (a, 0.0);
        while s < b {
            let h = size(s);
            let step = (0.05 * h).min(b - s);
            let mid = size(s + 0.5 * step);
            acc += step / mid;
            s += step;
            if b - s < 1e-9 * (b - a) {
                s = b;
            }
            samples.push((s, acc));
        }
        let cells = (acc - 1e-9).ceil().max(1.0) as usize;
        let mut k = 1;
        for w in samples.windows(2) {
            while k < cells {
                let target = acc * k as f64 / cells as f64;
                if target > w[1].1 {
                    break;
                }
                let frac = (target - w[0].1) / (w[1].1 - w[0].1);
                lines.push(w[0].0 + frac * (w[1].0 - w[0].0));
                k += 1;
            }
        }
        lines.push(b);
    }
    lines
}

/// Rectilinear grid with a region label per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major by x: `regions[i * (ny - 1) + j]` for cell column `i`, row `j`.
    pub regions: Vec<Region>,
}

impl Grid {
    pub fn nx(&self) -> usize {
        self.xs.len()
    }
    pub fn ny(&self) -> usize {
        self.ys.len()
    }
    pub fn cell(&self, i: usize, j: usize) -> Region {
        self.regions[i * (self.ny() - 1) + j]
    }
    pub fn cell_count(&self) -> usize {
        (self.nx() - 1) * (self.ny() - 1)
    }
    /// Two triangles per cell.
    pub fn element_count(&self) -> usize {
        2 * self.cell_count()
    }

    pub fn build(geom: &CpwGeometry, settings: &MeshSettings) -> Self {
        let r = settings.resolution_for(geom);
        let half_w = 0.5 * geom.w;
        let ground = half_w + geom.gap;
        let half_domain = 0.5 * geom.domain_width;

        let mut xk = vec![
            Key { at: 0.0, h: f64::INFINITY },
            Key { at: half_w, h: r },
            Key { at: ground, h: r },
            Key { at: half_domain, h: f64::INFINITY },
        ];
        for at in [
            half_w - geom.corner_extent,
            half_w + geom.corner_extent,
            half_w + geom.t_ma,
            ground - geom.t_ma,
            ground - geom.corner_extent,
            ground + geom.corner_extent,
        ] {
            if at > 0.0 && at < half_domain {
                xk.push(Key { at, h: r });
            }
        }
        let h_max_x = settings.max_fraction * geom.domain_width;
        let positive = graded_lines(&mut xk, settings.grading, h_max_x);
        let mut xs: Vec<f64> = positive.iter().skip(1).rev().map(|x| -x).collect();
        xs.extend(positive);

        let top = geom.metal_top();
        let mut yk = vec![
            Key { at: -geom.t_substrate, h: f64::INFINITY },
            Key { at: 0.0, h: r },
            Key { at: top, h: r },
            Key { at: geom.air_height, h: f64::INFINITY },
        ];
        for at in [-geom.t_sm, geom.t_sa, top + geom.t_ma, geom.corner_extent] {
            if at != 0.0 {
                yk.push(Key { at, h: r });
            }
        }
        let h_max_y = settings.max_fraction * (geom.t_substrate + geom.air_height);
        let ys = graded_lines(&mut yk, settings.grading, h_max_y);
        Self::with_lines(geom, xs, ys)
    }

    pub fn with_lines(geom: &CpwGeometry, xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let mut regions = Vec::with_capacity((xs.len() - 1) * (ys.len() - 1));
        for i in 0..xs.len() - 1 {
            let xc = 0.5 * (xs[i] + xs[i + 1]);
            for j in 0..ys.len() - 1 {
                let yc = 0.5 * (ys[j] + ys[j + 1]);
                regions.push(geom.region_at(xc, yc));
            }
        }
        Self { xs, ys, regions }
    }

    /// Bisects the given column and row intervals.
    pub fn refined(&self, geom: &CpwGeometry, columns: &[usize], rows: &[usize]) -> Self {
        let split = |lines: &[f64], marked: &[usize]| {
            let mut flag = vec![false; lines.len() - 1];
            marked.iter().for_each(|k| flag[*k] = true);
            let mut out = Vec::with_capacity(lines.len() + marked.len());
            for k in 0..lines.len() - 1 {
                out.push(lines[k]);
                if flag[k] {
                    out.push(0.5 * (lines[k] + lines[k + 1]));
                }
            }
            out.push(lines[lines.len() - 1]);
            out
        };
        Self::with_lines(geom, split(&self.xs, columns), split(&self.ys, rows))
    }
}
