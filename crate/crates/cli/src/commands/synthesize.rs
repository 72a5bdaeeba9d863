//! Seeded synthetic fixtures with a ground-truth sidecar.
//!
//! All draws come from one ChaCha8 stream per fixture kind, seeded from the
//! project seed, so a given (spec, seed) pair always produces the same bytes.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use tlsloss_core::io::{format_touchstone_s21, write_decay_csv, write_sweep_manifest, write_trace_csv, SweepRow};
use tlsloss_core::qubit::DecayTrace;
use tlsloss_core::resonator::{linewidth_grid, synthesize_notch, NotchModelParams};
use tlsloss_core::tls::{tls_loss_model, CalibrationContext};
use tlsloss_core::units::{angular, watts_to_dbm, HBAR};
use tlsloss_core::TlsFitResult;

use crate::{Context, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    S2p,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResonatorSpec {
    pub count: usize,
    pub points: usize,
    /// Half span in linewidths fr/Ql.
    pub half_widths: f64,
    /// Noise per quadrature relative to the off-resonant amplitude.
    pub noise: f64,
    pub qi: [f64; 2],
    pub qc_mag: [f64; 2],
    pub phi_max: f64,
    /// Hz
    pub fr: [f64; 2],
    pub amplitude: [f64; 2],
    /// s
    pub tau: [f64; 2],
    pub format: TraceFormat,
}

impl Default for ResonatorSpec {
    fn default() -> Self {
        Self {
            count: 10,
            points: 401,
            half_widths: 5.0,
            noise: 1e-3,
            qi: [1e5, 5e6],
            qc_mag: [5e4, 1e6],
            phi_max: 0.3,
            fr: [4e9, 7e9],
            amplitude: [0.3, 1.2],
            tau: [0.0, 80e-9],
            format: TraceFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsGroupSpec {
    /// nm
    pub film_thickness: f64,
    pub f_delta_tls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TlsSpec {
    /// Resonators per group.
    pub per_group: usize,
    pub groups: Vec<TlsGroupSpec>,
    pub points: usize,
    /// log10 of the photon-number range.
    pub log_n: [f64; 2],
    pub n_c: f64,
    pub beta: f64,
    pub delta0: f64,
    /// Relative noise on 1/Qi.
    pub noise: f64,
    pub qc: f64,
    /// Hz
    pub fr: [f64; 2],
}

impl Default for TlsSpec {
    fn default() -> Self {
        Self {
            per_group: 2,
            groups: vec![
                TlsGroupSpec { film_thickness: 150.0, f_delta_tls: 1e-6 },
                TlsGroupSpec { film_thickness: 300.0, f_delta_tls: 8e-7 },
                TlsGroupSpec { film_thickness: 500.0, f_delta_tls: 5e-7 },
            ],
            points: 25,
            log_n: [0.0, 7.0],
            n_c: 10.0,
            beta: 0.3,
            delta0: 2e-7,
            noise: 0.02,
            qc: 2e5,
            fr: [4e9, 7e9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecaySpec {
    pub count: usize,
    pub points: usize,
    /// s
    pub span: f64,
    /// s
    pub t1: [f64; 2],
    pub amplitude: f64,
    pub offset: f64,
    pub noise: f64,
}

impl Default for DecaySpec {
    fn default() -> Self {
        Self {
            count: 5,
            points: 61,
            span: 2.5e-3,
            t1: [150e-6, 500e-6],
            amplitude: 0.95,
            offset: 0.03,
            noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub resonators: ResonatorSpec,
    pub tls: TlsSpec,
    pub decay: DecaySpec,
}

fn ordered(name: &str, r: [f64; 2], positive: bool) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) || (positive && r[0] <= 0.0) {
        bail!("{name} range {r:?} is invalid");
    }
    Ok(())
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let spec: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.resonators;
        ordered("resonators.qi", r.qi, true)?;
        ordered("resonators.qc_mag", r.qc_mag, true)?;
        ordered("resonators.fr", r.fr, true)?;
        ordered("resonators.amplitude", r.amplitude, true)?;
        ordered("resonators.tau", r.tau, false)?;
        if r.count > 0 && (r.points < tlsloss_core::MIN_TRACE_POINTS || !(r.half_widths > 0.0)) {
            bail!("resonator traces need at least {} points and a positive span", tlsloss_core::MIN_TRACE_POINTS);
        }
        if !(r.noise >= 0.0) || !(r.phi_max >= 0.0 && r.phi_max < 1.0) {
            bail!("resonators.noise must be >= 0 and phi_max in [0, 1)");
        }
        let t = &self.tls;
        ordered("tls.log_n", t.log_n, false)?;
        ordered("tls.fr", t.fr, true)?;
        if t.per_group > 0 && !t.groups.is_empty() && t.points < 2 {
            bail!("tls sweeps need at least two points");
        }
        TlsFitResult::new(1e-6, t.n_c, t.beta, t.delta0, 0.01)?;
        if !(t.noise >= 0.0 && t.qc > 0.0) || t.groups.iter().any(|g| !(g.f_delta_tls >= 0.0 && g.film_thickness > 0.0)) {
            bail!("tls noise, qc and group values must be non-negative");
        }
        let d = &self.decay;
        ordered("decay.t1", d.t1, true)?;
        if d.count > 0 && (d.points < tlsloss_core::qubit::MIN_DECAY_POINTS || !(d.span > 0.0)) {
            bail!("decay traces need at least {} points", tlsloss_core::qubit::MIN_DECAY_POINTS);
        }
        if !(d.noise >= 0.0) {
            bail!("decay.noise must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTruth {
    pub file: String,
    pub params: NotchModelParams,
    #[serde(rename = "Qi")]
    pub qi: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlsTruth {
    pub label: String,
    pub film_thickness: f64,
    pub fr: f64,
    pub planted: TlsFitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTruth {
    pub file: String,
    pub t1: f64,
    pub amplitude: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub spec: SynthSpec,
    pub calibration: CalibrationContext,
    pub traces: Vec<TraceTruth>,
    /// Manifest for `fit-tls`, relative to the output directory.
    pub tls_manifest: Option<String>,
    pub tls: Vec<TlsTruth>,
    pub decays: Vec<DecayTruth>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn draw_log(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    10f64.powf(draw(rng, [r[0].log10(), r[1].log10()]))
}

/// Drive power in dBm at the instrument that yields `n` photons.
fn applied_power_dbm(n: f64, fr: f64, ql: f64, qc: f64, cal: &CalibrationContext) -> f64 {
    let w = angular(fr);
    let p_in = n * HBAR * w * w * qc / (2.0 * (cal.z0 / cal.zr) * ql * ql);
    watts_to_dbm(p_in) + cal.total_attenuation
}

pub fn run(ctx: &Context, spec_path: Option<&Path>) -> Result<Outcome> {
    let mut run = ctx.run("synthesize");
    let spec = match spec_path {
        Some(p) => {
            run.input(p)?;
            SynthSpec::load(p)?
        }
        None => SynthSpec::default(),
    };
    spec.validate()?;
    let seed = ctx.config.seed;
    let cal = ctx.config.calibration;
    let mut truth = Truth {
        seed,
        spec: spec.clone(),
        calibration: cal,
        traces: Vec::new(),
        tls_manifest: None,
        tls: Vec::new(),
        decays: Vec::new(),
    };

    run.stage("resonators", |run| {
        let r = &spec.resonators;
        let mut rng = rng_for(seed, 1);
        for k in 0..r.count {
            let qi = draw_log(&mut rng, r.qi);
            let qc = draw_log(&mut rng, r.qc_mag);
            let phi = draw(&mut rng, [-r.phi_max, r.phi_max]);
            let fr = draw(&mut rng, r.fr);
            let a = draw(&mut rng, r.amplitude);
            let alpha = rng.random_range(-PI..PI);
            let tau = draw(&mut rng, r.tau);
            let noise_seed: u64 = rng.random();
            let params = NotchModelParams::from_qi(fr, qi, qc, phi, a, alpha, tau);
            let f = linewidth_grid(fr, params.ql, r.half_widths, r.points);
            let sigma = r.noise * a;
            let trace = synthesize_notch(&params, &f, sigma, noise_seed)?.with_temperature(cal.temperature);
            let (file, bytes) = match r.format {
                TraceFormat::Csv => {
                    let mut b = Vec::new();
                    write_trace_csv(&trace, &mut b)?;
                    (format!("traces/trace_{k:03}.csv"), b)
                }
                TraceFormat::S2p => (format!("traces/trace_{k:03}.s2p"), format_touchstone_s21(&trace).into_bytes()),
            };
            run.write(&file, &bytes)?;
            truth.traces.push(TraceTruth {
                file,
                qi: params.qi(),
                params,
                noise_sigma: sigma,
            });
        }
        Ok(())
    })?;

    run.stage("tls", |run| {
        let t = &spec.tls;
        if t.per_group == 0 || t.groups.is_empty() {
            return Ok(());
        }
        let mut rng = rng_for(seed, 2);
        let normal = Normal::new(0.0, 1.0)?;
        let mut rows = Vec::new();
        for g in &t.groups {
            for k in 0..t.per_group {
                let label = format!("R{}nm_{k}", g.film_thickness);
                let fr = draw(&mut rng, t.fr);
                let planted = TlsFitResult::new(g.f_delta_tls, t.n_c, t.beta, t.delta0, cal.temperature)?;
                for i in 0..t.points {
                    let n = 10f64.powf(t.log_n[0] + (t.log_n[1] - t.log_n[0]) * i as f64 / (t.points - 1) as f64);
                    let loss = tls_loss_model(&planted, n, fr) * (1.0 + t.noise * normal.sample(&mut rng));
                    let ql = 1.0 / (loss + 1.0 / t.qc);
                    rows.push(SweepRow {
                        label: label.clone(),
                        film_thickness: Some(g.film_thickness),
                        applied_power_dbm: applied_power_dbm(n, fr, ql, t.qc, &cal),
                        trace: None,
                        fr: Some(fr),
                        ql: Some(ql),
                        qc: Some(t.qc),
                        qi: Some(1.0 / loss),
                    });
                }
                truth.tls.push(TlsTruth {
                    label,
                    film_thickness: g.film_thickness,
                    fr,
                    planted,
                });
            }
        }
        let mut bytes = Vec::new();
        write_sweep_manifest(&rows, &mut bytes)?;
        let name = "tls/sweep.csv".to_string();
        run.write(&name, &bytes)?;
        truth.tls_manifest = Some(name);
        Ok(())
    })?;

    run.stage("decay", |run| {
        let d = &spec.decay;
        let mut rng = rng_for(seed, 3);
        let normal = Normal::new(0.0, 1.0)?;
        let delays: Vec<f64> = (0..d.points).map(|i| d.span * i as f64 / (d.points - 1) as f64).collect();
        for k in 0..d.count {
            let t1 = draw(&mut rng, d.t1);
            let population = delays
                .iter()
                .map(|t| d.amplitude * (-t / t1).exp() + d.offset + d.noise * normal.sample(&mut rng))
                .collect();
            let trace = DecayTrace::new(delays.clone(), population);
            let mut bytes = Vec::new();
            write_decay_csv(&trace, &mut bytes)?;
            let file = format!("decay/decay_{k:03}.csv");
            run.write(&file, &bytes)?;
            truth.decays.push(DecayTruth {
                file,
                t1,
                amplitude: d.amplitude,
                offset: d.offset,
            });
        }
        Ok(())
    })?;

    run.write_json("truth.json", &truth)?;
    Ok(Outcome {
        manifest: run.finish()?,
        errors: 0,
    })
}
