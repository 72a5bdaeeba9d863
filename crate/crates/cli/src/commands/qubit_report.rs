use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};
use tlsloss_core::io::parse_decay_csv;
use tlsloss_core::qubit::{
    aggregate_fig1b, bundled_qubits, fit_t1, loss_budget, read_qubit_table, screen_qubit, t1_statistics, Fig1bSummary,
    GroupKey, Screening, T1Fit, T1Statistics,
};
use tlsloss_core::units::MICROSECOND;

use crate::output::csv_bytes;
use crate::plot::{render, Axis, Series, Style};
use crate::{collect_inputs, display, Context, ItemError, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitEntry {
    pub label: String,
    pub film_thickness: f64,
    pub q_table: f64,
    /// 2π·f_q·T₁
    pub q_computed: f64,
    pub t1_over_tp: f64,
    pub screening: Screening,
    pub q_tls: Option<f64>,
    pub q_purcell: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub file: String,
    pub fit: T1Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitReport {
    pub dataset: String,
    pub records: Vec<QubitEntry>,
    pub included: usize,
    pub excluded: Vec<String>,
    pub summary: Fig1bSummary,
    pub decay_fits: Vec<DecayFit>,
    pub t1_statistics: Option<T1Statistics>,
    pub errors: Vec<ItemError>,
}

#[derive(Serialize)]
struct GroupRow {
    group: &'static str,
    film_thickness_nm: f64,
    subset: String,
    count: usize,
    mean_q: f64,
    std_q: f64,
}

#[derive(Serialize)]
struct DecayRow<'a> {
    file: &'a str,
    t1_us: f64,
    t1_stderr_us: f64,
    amplitude: f64,
    offset: f64,
}

fn fit_decay(path: &Path) -> Result<T1Fit> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trace = parse_decay_csv(&text)?;
    Ok(fit_t1(&trace)?)
}

pub fn run(ctx: &Context, dataset: Option<&Path>, decay: &[PathBuf]) -> Result<Outcome> {
    let mut run = ctx.run("qubit-report");
    let source = dataset.map(Path::to_path_buf).or_else(|| ctx.config.paths.qubit_table.clone());
    let (name, records) = match &source {
        Some(path) => {
            run.input(path)?;
            let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let records = read_qubit_table(file).with_context(|| format!("reading {}", path.display()))?;
            (display(path), records)
        }
        None => ("bundled".to_string(), bundled_qubits()),
    };

    let entries: Vec<QubitEntry> = records
        .iter()
        .map(|r| {
            let budget = loss_budget(r).ok();
            QubitEntry {
                label: r.label.clone(),
                film_thickness: r.film_thickness,
                q_table: r.q_factor,
                q_computed: r.computed_q(),
                t1_over_tp: r.t1_mean / r.t_purcell,
                screening: screen_qubit(r),
                q_tls: budget.and_then(|b| b.q_tls),
                q_purcell: budget.and_then(|b| b.q_purcell),
            }
        })
        .collect();
    let summary = run.stage("aggregate", |_| Ok(aggregate_fig1b(&records)?))?;

    let mut errors = Vec::new();
    let decay_files = collect_inputs(decay, &["csv"])?;
    for p in &decay_files {
        run.input(p)?;
    }
    let fits = run.stage("decay fits", |_| ctx.par_map(&decay_files, |p| fit_decay(p)))?;
    let mut decay_fits = Vec::new();
    for (p, fit) in decay_files.iter().zip(fits) {
        match fit {
            Ok(fit) => decay_fits.push(DecayFit { file: display(p), fit }),
            Err(e) => errors.push(ItemError::new(display(p), e)),
        }
    }
    let t1s: Vec<f64> = decay_fits.iter().map(|d| d.fit.t1).collect();
    let stats = (!t1s.is_empty()).then(|| t1_statistics(&t1s)).transpose()?;

    let report = QubitReport {
        dataset: name,
        included: entries.iter().filter(|e| e.screening.included).count(),
        excluded: entries
            .iter()
            .filter(|e| !e.screening.included)
            .map(|e| e.label.clone())
            .collect(),
        records: entries,
        summary,
        decay_fits,
        t1_statistics: stats,
        errors,
    };

    run.stage("write", |run| {
        run.write_json("qubit_report.json", &report)?;
        run.write("qubit_scatter.csv", &csv_bytes(&report.summary.points)?)?;
        let groups: Vec<GroupRow> = report
            .summary
            .groups
            .iter()
            .map(|g| {
                let (group, t) = match g.key {
                    GroupKey::Thickness(t) => ("thickness", t),
                    GroupKey::ThickerThan(t) => ("thicker_than", t),
                };
                GroupRow {
                    group,
                    film_thickness_nm: t,
                    subset: serde_json::to_value(g.subset)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default(),
                    count: g.count,
                    mean_q: g.mean_q,
                    std_q: g.std_q,
                }
            })
            .collect();
        run.write("qubit_groups.csv", &csv_bytes(&groups)?)?;

        let mut thicknesses: Vec<f64> = report.summary.points.iter().map(|p| p.film_thickness).collect();
        thicknesses.sort_by(f64::total_cmp);
        thicknesses.dedup();
        let series: Vec<Series> = thicknesses
            .iter()
            .map(|t| {
                Series::new(
                    format!("{t} nm"),
                    report
                        .summary
                        .points
                        .iter()
                        .filter(|p| p.film_thickness == *t)
                        .map(|p| (p.t1_over_tp, p.q))
                        .collect(),
                    Style::Markers,
                )
            })
            .collect();
        let svg = render(
            "Qubit quality factor",
            Axis::linear("T1 / T_Purcell"),
            Axis::log("Q"),
            &series,
        );
        run.write("qubit_scatter.svg", svg.as_bytes())?;

        if let Some(stats) = &report.t1_statistics {
            let rows: Vec<DecayRow> = report
                .decay_fits
                .iter()
                .map(|d| DecayRow {
                    file: &d.file,
                    t1_us: d.fit.t1 / MICROSECOND,
                    t1_stderr_us: d.fit.t1_stderr / MICROSECOND,
                    amplitude: d.fit.amplitude,
                    offset: d.fit.offset,
                })
                .collect();
            run.write("t1_fits.csv", &csv_bytes(&rows)?)?;
            let h = &stats.histogram;
            let edges = h.edges();
            let bins: Vec<(f64, f64)> = h
                .counts
                .iter()
                .enumerate()
                .flat_map(|(i, c)| [(edges[i] / MICROSECOND, *c as f64), (edges[i + 1] / MICROSECOND, *c as f64)])
                .collect();
            #[derive(Serialize)]
            struct Bin {
                left_us: f64,
                right_us: f64,
                count: usize,
            }
            let bin_rows: Vec<Bin> = h
                .counts
                .iter()
                .enumerate()
                .map(|(i, c)| Bin {
                    left_us: edges[i] / MICROSECOND,
                    right_us: edges[i + 1] / MICROSECOND,
                    count: *c,
                })
                .collect();
            run.write("t1_histogram.csv", &csv_bytes(&bin_rows)?)?;
            let svg = render(
                "T1 distribution",
                Axis::linear("T1 (us)"),
                Axis::linear("count"),
                &[Series::new("fitted T1", bins, Style::Line)],
            );
            run.write("t1_histogram.svg", svg.as_bytes())?;
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
