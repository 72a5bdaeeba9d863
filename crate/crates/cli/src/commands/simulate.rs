use anyhow::{bail, Result};
use serde::Serialize;
use tlsloss_core::participation::{
    solve_with, sweep_metal_thickness, sweep_sm_thickness, CpwGeometry, MaterialTable, ParticipationResult, Region,
    SweepPoint,
};
use tlsloss_core::units::NANOMETER;

use crate::output::csv_bytes;
use crate::plot::{render, Axis, Series, Style};
use crate::{Context, Outcome, SimulateArgs, SweepKind};

pub const DEFAULT_SM_NM: [f64; 5] = [0.4, 0.8, 1.2, 1.6, 2.0];
pub const DEFAULT_METAL_NM: [f64; 4] = [50.0, 150.0, 300.0, 500.0];

#[derive(Serialize)]
struct SingleReport<'a> {
    geometry: &'a CpwGeometry,
    materials: &'a MaterialTable,
    result: &'a ParticipationResult,
}

#[derive(Serialize)]
struct RegionRow {
    region: &'static str,
    participation: f64,
    eps_r: f64,
    tan_delta: f64,
    loss: f64,
}

#[derive(Serialize)]
struct SweepRow {
    thickness_nm: f64,
    substrate: f64,
    air: f64,
    ma: f64,
    sa: f64,
    sm: f64,
    corner: f64,
    q_tls: Option<f64>,
    elements: usize,
}

fn sweep_values(args: &SimulateArgs, default: &[f64]) -> Result<Vec<f64>> {
    let nm = if !args.values.is_empty() {
        args.values.clone()
    } else if let (Some(a), Some(b), Some(n)) = (args.start, args.stop, args.points) {
        match n {
            0 => bail!("--points must be positive"),
            1 => vec![a],
            _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
        }
    } else {
        default.to_vec()
    };
    if nm.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        bail!("swept thicknesses must be finite and non-negative");
    }
    Ok(nm.into_iter().map(|v| v * NANOMETER).collect())
}

fn sweep_rows(points: &[SweepPoint]) -> Vec<SweepRow> {
    points
        .iter()
        .map(|p| {
            let g = |r| p.result.get(r);
            SweepRow {
                thickness_nm: p.value / NANOMETER,
                substrate: g(Region::Substrate),
                air: g(Region::Air),
                ma: g(Region::Ma),
                sa: g(Region::Sa),
                sm: g(Region::Sm),
                corner: g(Region::Corner),
                q_tls: p.result.q_tls,
                elements: p.result.mesh_stats.elements,
            }
        })
        .collect()
}

fn sweep_plot(title: &str, x_label: &str, points: &[SweepPoint]) -> String {
    let series: Vec<Series> = Region::INTERFACES
        .iter()
        .map(|r| {
            Series::new(
                r.name(),
                points.iter().map(|p| (p.value / NANOMETER, p.result.get(*r))).collect(),
                Style::Line,
            )
        })
        .collect();
    render(title, Axis::linear(x_label), Axis::log("participation ratio"), &series)
}

pub fn run(ctx: &Context, args: &SimulateArgs) -> Result<Outcome> {
    let mut run = ctx.run("simulate");
    let c = &ctx.config;
    let (geom, mats, mesh) = (&c.geometry, &c.materials, &c.mesh);
    match args.sweep {
        SweepKind::None => {
            if !args.values.is_empty() || args.start.is_some() {
                bail!("thickness values need --sweep sm or --sweep metal");
            }
            let result = run.stage("solve", |_| Ok(solve_with(geom, mats, mesh)?))?;
            run.stage("write", |run| {
                run.write_json(
                    "participation.json",
                    &SingleReport {
                        geometry: geom,
                        materials: mats,
                        result: &result,
                    },
                )?;
                let rows: Vec<RegionRow> = Region::ALL
                    .iter()
                    .map(|r| RegionRow {
                        region: r.name(),
                        participation: result.get(*r),
                        eps_r: mats.get(*r).eps_r,
                        tan_delta: mats.get(*r).tan_delta,
                        loss: result.loss(*r, mats),
                    })
                    .collect();
                run.write("participation.csv", &csv_bytes(&rows)?)?;
                let series: Vec<Series> = rows
                    .iter()
                    .enumerate()
                    .map(|(k, r)| Series::new(r.region, vec![(k as f64, r.participation)], Style::Markers))
                    .collect();
                let svg = render(
                    "Energy participation by region",
                    Axis::linear("region"),
                    Axis::log("participation ratio"),
                    &series,
                );
                run.write("participation.svg", svg.as_bytes())
            })?;
        }
        SweepKind::Sm => {
            let t = sweep_values(args, &DEFAULT_SM_NM)?;
            let sweep = run.stage("sweep", |_| Ok(sweep_sm_thickness(geom, mats, &t, mesh)?))?;
            run.stage("write", |run| {
                run.write_json("participation_sm_sweep.json", &sweep)?;
                run.write("participation_sm_sweep.csv", &csv_bytes(&sweep_rows(&sweep.points))?)?;
                let svg = sweep_plot("Participation versus SM thickness", "t_SM (nm)", &sweep.points);
                run.write("participation_sm_sweep.svg", svg.as_bytes())
            })?;
        }
        SweepKind::Metal => {
            let t = sweep_values(args, &DEFAULT_METAL_NM)?;
            if t.iter().any(|v| *v <= 0.0) {
                bail!("metal thickness must be positive");
            }
            let sweep = run.stage("sweep", |_| Ok(sweep_metal_thickness(geom, mats, &t, mesh)?))?;
            run.stage("write", |run| {
                run.write_json("participation_metal_sweep.json", &sweep)?;
                run.write("participation_metal_sweep.csv", &csv_bytes(&sweep_rows(&sweep.points))?)?;
                let svg = sweep_plot("Participation versus metal thickness", "t_metal (nm)", &sweep.points);
                run.write("participation_metal_sweep.svg", svg.as_bytes())
            })?;
        }
    }
    Ok(Outcome {
        manifest: run.finish()?,
        errors: 0,
    })
}
