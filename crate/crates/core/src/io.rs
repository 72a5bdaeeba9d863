//! Text formats: S21 traces (CSV and Touchstone), qubit decay traces and
//! power-sweep manifests.
//!
//! CSV files may start with `# key=value` metadata lines. Trace files
//! understand `applied_power_dbm`, `line_attenuation_db` and `temperature_k`;
//! decay files understand `timestamp_s`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qubit::DecayTrace;
use crate::types::{ComplexTrace, ResonatorFitResult, ResonatorUncertainties, ValidationError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        message: message.into(),
    }
}

/// Splits leading `# key=value` lines from the CSV body.
fn split_metadata(text: &str) -> Result<(BTreeMap<String, String>, String), IoError> {
    let mut meta = BTreeMap::new();
    let mut body = String::new();
    for (k, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = rest.split_once('=') {
                meta.insert(key.trim().to_string(), value.trim().to_string());
            } else if !rest.trim().is_empty() {
                return Err(parse_err(k + 1, format!("expected `# key=value`, got `{trimmed}`")));
            }
        } else if !trimmed.is_empty() {
            body.push_str(line);
            body.push('\n');
        }
    }
    Ok((meta, body))
}

fn meta_f64(meta: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>, IoError> {
    meta.get(key)
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| IoError::Format(format!("metadata {key} = `{v}` is not a number")))
        })
        .transpose()
}

fn csv_error(e: csv::Error) -> IoError {
    match e.position() {
        Some(p) => parse_err(p.line() as usize, e.to_string()),
        None => IoError::Format(e.to_string()),
    }
}

#[derive(Deserialize)]
struct TraceRow {
    frequency_hz: f64,
    re_s21: f64,
    im_s21: f64,
}

/// Parses a `frequency_hz,re_s21,im_s21` CSV trace and validates it.
pub fn parse_trace_csv(text: &str) -> Result<ComplexTrace, IoError> {
    let (meta, body) = split_metadata(text)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let mut freqs = Vec::new();
    let mut s21 = Vec::new();
    for row in rdr.deserialize::<TraceRow>() {
        let r = row.map_err(csv_error)?;
        freqs.push(r.frequency_hz);
        s21.push(Complex64::new(r.re_s21, r.im_s21));
    }
    let trace = ComplexTrace {
        applied_power: meta_f64(&meta, "applied_power_dbm")?.unwrap_or(0.0),
        line_attenuation: meta_f64(&meta, "line_attenuation_db")?.unwrap_or(0.0),
        temperature: meta_f64(&meta, "temperature_k")?.unwrap_or(0.0),
        ..ComplexTrace::new(freqs, s21)
    };
    Ok(crate::types::validate_trace(trace)?)
}

/// Writes a trace in the CSV layout read by [`parse_trace_csv`].
pub fn write_trace_csv<W: Write>(trace: &ComplexTrace, mut out: W) -> Result<(), IoError> {
    writeln!(out, "# applied_power_dbm={}", trace.applied_power)?;
    writeln!(out, "# line_attenuation_db={}", trace.line_attenuation)?;
    writeln!(out, "# temperature_k={}", trace.temperature)?;
    writeln!(out, "frequency_hz,re_s21,im_s21")?;
    for (f, s) in trace.frequencies.iter().zip(&trace.s21) {
        writeln!(out, "{f},{},{}", s.re, s.im)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PairFormat {
    RealImag,
    MagAngle,
    DbAngle,
}

impl PairFormat {
    fn to_complex(self, a: f64, b: f64) -> Complex64 {
        match self {
            PairFormat::RealImag => Complex64::new(a, b),
            PairFormat::MagAngle => Complex64::from_polar(a, b.to_radians()),
            PairFormat::DbAngle => Complex64::from_polar(10f64.powf(a / 20.0), b.to_radians()),
        }
    }
}

/// Extracts S21 from a version-1 two-port Touchstone file.
///
/// The option line defaults to `# GHz S MA R 50`. Only S parameters are
/// accepted.
pub fn parse_touchstone_s21(text: &str) -> Result<ComplexTrace, IoError> {
    let mut unit = 1e9;
    let mut format = PairFormat::MagAngle;
    let mut seen_options = false;
    let mut values: Vec<(f64, usize)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('!').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            return Err(parse_err(line_no, "Touchstone 2.0 keywords are not supported"));
        }
        if let Some(opts) = line.strip_prefix('#') {
            if seen_options {
                continue;
            }
            seen_options = true;
            let mut tokens = opts.split_whitespace().map(str::to_ascii_uppercase);
            while let Some(t) = tokens.next() {
                match t.as_str() {
                    "HZ" => unit = 1.0,
                    "KHZ" => unit = 1e3,
                    "MHZ" => unit = 1e6,
                    "GHZ" => unit = 1e9,
                    "S" => {}
                    "Y" | "Z" | "H" | "G" => {
                        return Err(parse_err(line_no, format!("{t} parameters are not supported")))
                    }
                    "RI" => format = PairFormat::RealImag,
                    "MA" => format = PairFormat::MagAngle,
                    "DB" => format = PairFormat::DbAngle,
                    "R" => {
                        tokens.next();
                    }
                    other => return Err(parse_err(line_no, format!("unknown option `{other}`"))),
                }
            }
            continue;
        }
        for tok in line.split_whitespace() {
            let v = tok
                .parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("`{tok}` is not a number")))?;
            values.push((v, line_no));
        }
    }
    if values.len() % 9 != 0 {
        let line = values.last().map_or(0, |v| v.1);
        return Err(parse_err(
            line,
            format!("{} values do not form whole two-port records of 9", values.len()),
        ));
    }
    let (freqs, s21) = values
        .chunks(9)
        .map(|c| (c[0].0 * unit, format.to_complex(c[3].0, c[4].0)))
        .unzip();
    Ok(crate::types::validate_trace(ComplexTrace::new(freqs, s21))?)
}

/// Reads a trace by extension: `.s2p` as Touchstone, anything else as CSV.
pub fn read_trace(path: &Path) -> Result<ComplexTrace, IoError> {
    let text = std::fs::read_to_string(path)?;
    let touchstone = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("s2p"));
    if touchstone {
        parse_touchstone_s21(&text)
    } else {
        parse_trace_csv(&text)
    }
}

#[derive(Deserialize)]
struct DecayRow {
    delay_s: f64,
    population: f64,
}

/// Parses a `delay_s,population` CSV decay trace.
pub fn parse_decay_csv(text: &str) -> Result<DecayTrace, IoError> {
    let (meta, body) = split_metadata(text)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let (mut delays, mut population) = (Vec::new(), Vec::new());
    for row in rdr.deserialize::<DecayRow>() {
        let r = row.map_err(csv_error)?;
        delays.push(r.delay_s);
        population.push(r.population);
    }
    let mut trace = DecayTrace::new(delays, population);
    trace.timestamp = meta_f64(&meta, "timestamp_s")?.unwrap_or(0.0);
    trace.validate()?;
    Ok(trace)
}

pub fn write_decay_csv<W: Write>(trace: &DecayTrace, mut out: W) -> Result<(), IoError> {
    writeln!(out, "# timestamp_s={}", trace.timestamp)?;
    writeln!(out, "delay_s,population")?;
    for (t, p) in trace.delays.iter().zip(&trace.population) {
        writeln!(out, "{t},{p}")?;
    }
    Ok(())
}

/// One row of a power-sweep manifest: a drive power and either a trace file
/// or an already fitted resonance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    /// nm
    #[serde(default)]
    pub film_thickness: Option<f64>,
    pub applied_power_dbm: f64,
    /// Trace path, relative to the manifest.
    #[serde(default)]
    pub trace: Option<String>,
    #[serde(default)]
    pub fr: Option<f64>,
    #[serde(default, rename = "Ql")]
    pub ql: Option<f64>,
    #[serde(default, rename = "Qc")]
    pub qc: Option<f64>,
    #[serde(default, rename = "Qi")]
    pub qi: Option<f64>,
}

impl SweepRow {
    /// Builds a fit result from the inline columns. `Qc` is the coupling
    /// magnitude; the mismatch angle is recovered from `Qi` when present.
    pub fn inline_fit(&self) -> Option<Result<ResonatorFitResult, ValidationError>> {
        let (fr, ql, qc) = (self.fr?, self.ql?, self.qc?);
        let phi = self
            .qi
            .map_or(0.0, |qi| (qc * (1.0 / ql - 1.0 / qi)).clamp(-1.0, 1.0).acos());
        Some(ResonatorFitResult::new(
            fr,
            ql,
            qc,
            phi,
            0.0,
            1.0,
            0.0,
            ResonatorUncertainties::default(),
            0.0,
        ))
    }
}

/// Parses a sweep manifest and checks that each row names a trace or carries
/// `fr`, `Ql` and `Qc`.
pub fn parse_sweep_manifest(text: &str) -> Result<Vec<SweepRow>, IoError> {
    let (_, body) = split_metadata(text)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let r: SweepRow = row
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        let inline = r.fr.is_some() && r.ql.is_some() && r.qc.is_some();
        if r.trace.is_none() && !inline {
            return Err(parse_err(line, "row needs a trace file or fr, Ql and Qc"));
        }
        rows.push(r);
    }
    if rows.is_empty() {
        return Err(IoError::Format("sweep manifest has no rows".into()));
    }
    Ok(rows)
}

pub fn write_sweep_manifest<W: Write>(rows: &[SweepRow], out: W) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r).map_err(|e| IoError::Format(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Formats a Touchstone file holding only a through S21 (S11 = S22 = 0,
/// S12 = S21), for fixtures.
pub fn format_touchstone_s21(trace: &ComplexTrace) -> String {
    let mut s = String::from("! S21 fixture\n# HZ S RI R 50\n");
    for (f, v) in trace.frequencies.iter().zip(&trace.s21) {
        let _ = writeln!(s, "{f} 0 0 {} {} {} {} 0 0", v.re, v.im, v.re, v.im);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ramp(n: usize) -> ComplexTrace {
        let f: Vec<f64> = (0..n).map(|k| 5e9 + 1e3 * k as f64).collect();
        let s: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(0.9, 0.01 * k as f64)).collect();
        ComplexTrace::new(f, s).with_power(-80.0, 70.0).with_temperature(0.012)
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = ramp(20);
        let mut buf = Vec::new();
        write_trace_csv(&t, &mut buf).unwrap();
        let back = parse_trace_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let text = "frequency_hz,re_s21,im_s21\n1,0,0\n2,abc,0\n";
        match parse_trace_csv(text) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_trace_csv("# bad\nfrequency_hz,re_s21,im_s21\n"), Err(IoError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_trace_csv("frequency_hz,re_s21,im_s21\n1,0,0\n"),
            Err(IoError::Invalid(ValidationError::TooFewPoints { .. }))
        ));
    }

    #[test]
    fn touchstone_formats_agree() {
        let s21 = Complex64::from_polar(0.5, 30f64.to_radians());
        let body = |fmt: &str, a: f64, b: f64| {
            let mut s = format!("! comment\n# MHz S {fmt} R 50\n");
            for k in 0..10 {
                s += &format!("{} 1 0 {a} {b} 0 0 1 0 ! trailing\n", 5000.0 + k as f64);
            }
            s
        };
        let ri = parse_touchstone_s21(&body("RI", s21.re, s21.im)).unwrap();
        let ma = parse_touchstone_s21(&body("MA", 0.5, 30.0)).unwrap();
        let db = parse_touchstone_s21(&body("DB", 20.0 * 0.5f64.log10(), 30.0)).unwrap();
        for t in [&ri, &ma, &db] {
            assert_relative_eq!(t.frequencies[3], 5003e6);
            assert_relative_eq!(t.s21[0].re, s21.re, epsilon = 1e-12);
            assert_relative_eq!(t.s21[0].im, s21.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn touchstone_default_options_and_wrapped_records() {
        let mut s = String::new();
        for k in 0..8 {
            s += &format!("{}\n 0 0 0.25 90\n 0 0 0 0\n", 4.0 + 0.001 * k as f64);
        }
        let t = parse_touchstone_s21(&s).unwrap();
        assert_relative_eq!(t.frequencies[0], 4e9);
        assert_relative_eq!(t.s21[0].im, 0.25, epsilon = 1e-12);
        assert!(parse_touchstone_s21("# GHz Z RI R 50\n1 0 0 0 0 0 0 0 0\n").is_err());
        assert!(parse_touchstone_s21("1 2 3\n").is_err());
    }

    #[test]
    fn touchstone_fixture_round_trips() {
        let t = ramp(12);
        let back = parse_touchstone_s21(&format_touchstone_s21(&t)).unwrap();
        assert_eq!(back.frequencies, t.frequencies);
        assert_eq!(back.s21, t.s21);
    }

    #[test]
    fn decay_round_trip() {
        let d: Vec<f64> = (0..10).map(|k| 1e-5 * k as f64).collect();
        let p: Vec<f64> = d.iter().map(|t| (-t / 1e-4).exp()).collect();
        let mut tr = DecayTrace::new(d, p);
        tr.timestamp = 3600.0;
        let mut buf = Vec::new();
        write_decay_csv(&tr, &mut buf).unwrap();
        assert_eq!(parse_decay_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), tr);
    }

    #[test]
    fn manifest_rows() {
        let text = "label,film_thickness,applied_power_dbm,trace,fr,Ql,Qc,Qi\n\
                    R1,150,-60,r1_a.csv,,,,\n\
                    R1,150,-50,,5e9,1e5,2e5,2e5\n";
        let rows = parse_sweep_manifest(text).unwrap();
        assert_eq!(rows[0].trace.as_deref(), Some("r1_a.csv"));
        assert!(rows[0].inline_fit().is_none());
        let fit = rows[1].inline_fit().unwrap().unwrap();
        assert_relative_eq!(fit.qi, 2e5, max_relative = 1e-12);
        assert!(parse_sweep_manifest("label,applied_power_dbm\nR1,-60\n").is_err());
        let mut buf = Vec::new();
        write_sweep_manifest(&rows, &mut buf).unwrap();
        assert_eq!(parse_sweep_manifest(std::str::from_utf8(&buf).unwrap()).unwrap(), rows);
    }
}
