use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, Context as _, Result};
use serde::{Deserialize, Serialize};
use tlsloss_core::io::{parse_sweep_manifest, read_trace, SweepRow};
use tlsloss_core::resonator::fit_resonator;
use tlsloss_core::tls::{aggregate_by_thickness, sweep_point, tls_qi_model, ResonatorSweepRecord, ThicknessSummary};
use tlsloss_core::{PowerSweepPoint, ResonatorFitResult, TlsFitResult};

use crate::output::csv_bytes;
use crate::plot::{render, Axis, Series, Style};
use crate::{Context, ItemError, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorTls {
    pub label: String,
    /// nm
    pub film_thickness: Option<f64>,
    pub frequency: f64,
    pub points: Vec<PowerSweepPoint>,
    pub fit: Option<TlsFitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlsReport {
    pub resonators: Vec<ResonatorTls>,
    /// Present when every fitted resonator carries a film thickness.
    pub summary: Option<ThicknessSummary>,
    pub errors: Vec<ItemError>,
}

#[derive(Serialize)]
struct Row<'a> {
    label: &'a str,
    film_thickness_nm: Option<f64>,
    n_photons: f64,
    qi: f64,
    qi_model: Option<f64>,
}

fn row_fit(dir: &Path, row: &SweepRow) -> Result<ResonatorFitResult> {
    if let Some(trace) = &row.trace {
        let path = dir.join(trace);
        let t = read_trace(&path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(fit_resonator(&t)?);
    }
    row.inline_fit()
        .ok_or_else(|| anyhow!("row has neither a trace nor fr, Ql and Qc"))?
        .map_err(Into::into)
}

pub fn run(ctx: &Context, manifest: &Path) -> Result<Outcome> {
    let mut run = ctx.run("fit-tls");
    run.input(manifest)?;
    let text = std::fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let rows = parse_sweep_manifest(&text).with_context(|| format!("parsing {}", manifest.display()))?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    for row in &rows {
        if let Some(t) = &row.trace {
            run.input(&dir.join(t))?;
        }
    }
    let cal = ctx.config.calibration;
    let fits = run.stage("resonator fits", |_| ctx.par_map(&rows, |r| row_fit(dir, r)))?;

    let mut errors = Vec::new();
    let mut groups: BTreeMap<&str, (Option<f64>, Vec<PowerSweepPoint>)> = BTreeMap::new();
    for (row, fit) in rows.iter().zip(fits) {
        let point = fit.and_then(|f| Ok(sweep_point(f, row.applied_power_dbm, &cal)?));
        let entry = groups.entry(&row.label).or_insert((row.film_thickness, Vec::new()));
        if entry.0 != row.film_thickness {
            errors.push(ItemError::new(
                format!("{}: {}", manifest.display(), row.label),
                "inconsistent film_thickness within one resonator",
            ));
        }
        match point {
            Ok(p) => entry.1.push(p),
            Err(e) => errors.push(ItemError::new(
                format!("{}: {} @ {} dBm", manifest.display(), row.label, row.applied_power_dbm),
                e,
            )),
        }
    }

    let mut records = Vec::new();
    let resonators: Vec<ResonatorTls> = run.stage("tls fits", |_| {
        Ok(groups
            .into_iter()
            .map(|(label, (thickness, points))| {
                let mut record = ResonatorSweepRecord::new(label, thickness.unwrap_or(f64::NAN), points);
                let fit = match record.fit(cal.temperature) {
                    Ok(f) => Some(f),
                    Err(e) => {
                        errors.push(ItemError::new(format!("{}: {label}", manifest.display()), e));
                        None
                    }
                };
                let out = ResonatorTls {
                    label: label.to_string(),
                    film_thickness: thickness,
                    frequency: record.frequency(),
                    points: record.points.clone(),
                    fit,
                };
                if fit.is_some() {
                    records.push(record);
                }
                out
            })
            .collect())
    })?;

    let summary = if !records.is_empty() && resonators.iter().all(|r| r.film_thickness.is_some()) {
        Some(aggregate_by_thickness(&records)?)
    } else {
        None
    };
    let report = TlsReport {
        resonators,
        summary,
        errors,
    };

    run.stage("write", |run| {
        run.write_json("tls_fits.json", &report)?;
        let mut rows = Vec::new();
        let mut series = Vec::new();
        for r in &report.resonators {
            for p in &r.points {
                rows.push(Row {
                    label: &r.label,
                    film_thickness_nm: r.film_thickness,
                    n_photons: p.n_photons,
                    qi: p.fit.qi,
                    qi_model: r.fit.as_ref().map(|f| tls_qi_model(f, p.n_photons, r.frequency)),
                });
            }
            series.push(Series::new(
                r.label.clone(),
                r.points.iter().map(|p| (p.n_photons, p.fit.qi)).collect(),
                Style::Markers,
            ));
            if let Some(f) = &r.fit {
                series.push(Series::new(
                    format!("{} model", r.label),
                    r.points.iter().map(|p| (p.n_photons, tls_qi_model(f, p.n_photons, r.frequency))).collect(),
                    Style::Line,
                ));
            }
        }
        run.write("tls_sweep.csv", &csv_bytes(&rows)?)?;
        let svg = render(
            "Internal quality factor versus photon number",
            Axis::log("mean photon number"),
            Axis::log("Qi"),
            &series,
        );
        run.write("tls_sweep.svg", svg.as_bytes())?;
        if let Some(s) = &report.summary {
            run.write("tls_groups.csv", &csv_bytes(&s.groups)?)?;
        }
        Ok(())
    })?;

    let n = report.errors.len();
    run.add_errors(n);
    Ok(Outcome {
        manifest: run.finish()?,
        errors: n,
    })
}
