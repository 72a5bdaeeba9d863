use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};
use tlsloss_core::io::read_trace;
use tlsloss_core::resonator::fit_resonator;
use tlsloss_core::ResonatorFitResult;

use crate::output::csv_bytes;
use crate::plot::{render, Axis, Series, Style};
use crate::{collect_inputs, display, Context, ItemError, Outcome};

pub const TRACE_EXTENSIONS: &[&str] = &["csv", "s2p"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFit {
    pub file: String,
    pub fit: ResonatorFitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fits: Vec<TraceFit>,
    pub errors: Vec<ItemError>,
}

#[derive(Serialize)]
struct Row<'a> {
    file: &'a str,
    fr_hz: f64,
    ql: f64,
    qc_mag: f64,
    phi: f64,
    qi: f64,
    qi_stderr: f64,
    residual_rms: f64,
}

fn fit_file(path: &Path) -> Result<ResonatorFitResult> {
    let trace = read_trace(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(fit_resonator(&trace)?)
}

pub fn run(ctx: &Context, inputs: &[PathBuf]) -> Result<Outcome> {
    let mut run = ctx.run("fit-resonator");
    let files = collect_inputs(inputs, TRACE_EXTENSIONS)?;
    if files.is_empty() {
        anyhow::bail!("no trace files found");
    }
    let results = run.stage("fit", |_| ctx.par_map(&files, |p| fit_file(p)))?;

    let mut report = FitReport {
        fits: Vec::new(),
        errors: Vec::new(),
    };
    for (path, result) in files.iter().zip(results) {
        if path.is_file() {
            run.input(path)?;
        }
        match result {
            Ok(fit) => report.fits.push(TraceFit { file: display(path), fit }),
            Err(e) => report.errors.push(ItemError::new(display(path), e)),
        }
    }

    run.stage("write", |run| {
        run.write_json("resonator_fits.json", &report)?;
        let rows: Vec<Row> = report
            .fits
            .iter()
            .map(|t| Row {
                file: &t.file,
                fr_hz: t.fit.fr,
                ql: t.fit.ql,
                qc_mag: t.fit.qc_mag,
                phi: t.fit.phi,
                qi: t.fit.qi,
                qi_stderr: t.fit.uncertainties.qi,
                residual_rms: t.fit.residual_rms,
            })
            .collect();
        run.write("resonator_fits.csv", &csv_bytes(&rows)?)?;
        let series = [
            Series::new("Qi", rows.iter().map(|r| (r.fr_hz / 1e9, r.qi)).collect(), Style::Markers),
            Series::new("|Qc|", rows.iter().map(|r| (r.fr_hz / 1e9, r.qc_mag)).collect(), Style::Markers),
        ];
        let svg = render(
            "Resonator quality factors",
            Axis::linear("resonance frequency (GHz)"),
            Axis::log("quality factor"),
            &series,
        );
        run.write("resonator_fits.svg", svg.as_bytes())
    })?;

    let errors = report.errors.len();
    run.add_errors(errors);
    Ok(Outcome {
        manifest: run.finish()?,
        errors,
    })
}
