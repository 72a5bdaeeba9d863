//! Qubit-side loss budget: T₁ extraction, Purcell decay, TLS-limited Q and
//! the thickness aggregation of the bundled transmon dataset.

use std::f64::consts::PI;
use std::io::Read;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lsq::{levenberg_marquardt, Bounds, LmConfig, LsqError, Problem};
use crate::types::{LossBudget, QubitRecord, ValidationError};
use crate::units::{angular, MICROSECOND};

pub const MIN_DECAY_POINTS: usize = 6;
/// A fitted T₁ beyond this multiple of the delay span is not resolved.
pub const MAX_T1_OVER_SPAN: f64 = 100.0;
pub const HISTOGRAM_BIN: f64 = 25.0 * MICROSECOND;

const BUNDLED_TABLE: &str = include_str!("../data/qubits_table2.csv");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QubitError {
    #[error("invalid input: {0}")]
    Invalid(#[from] ValidationError),
    #[error("unresolvable T1: {0}")]
    Unresolvable(String),
    #[error("zero qubit-resonator detuning")]
    ZeroDetuning,
    #[error("T1 ({t1:e} s) is not below the Purcell limit ({t_p:e} s)")]
    PurcellInconsistent { t1: f64, t_p: f64 },
    #[error("empty group")]
    EmptyGroup,
    #[error("empty series")]
    EmptySeries,
    #[error("malformed qubit table: {0}")]
    Table(String),
    #[error(transparent)]
    Solver(#[from] LsqError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    /// s
    pub delays: Vec<f64>,
    pub population: Vec<f64>,
    /// s since epoch
    #[serde(default)]
    pub timestamp: f64,
}

impl DecayTrace {
    pub fn new(delays: Vec<f64>, population: Vec<f64>) -> Self {
        Self {
            delays,
            population,
            timestamp: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.delays.len() != self.population.len() {
            return Err(ValidationError::LengthMismatch {
                freqs: self.delays.len(),
                s21: self.population.len(),
            });
        }
        if self.delays.len() < MIN_DECAY_POINTS {
            return Err(ValidationError::TooFewPoints {
                got: self.delays.len(),
                min: MIN_DECAY_POINTS,
            });
        }
        for i in 1..self.delays.len() {
            if !(self.delays[i] > self.delays[i - 1]) {
                return Err(ValidationError::Field {
                    field: "delays",
                    value: self.delays[i],
                    rule: "strictly increasing",
                });
            }
        }
        if let Some(&p) = self
            .population
            .iter()
            .find(|p| !(**p >= -0.2 && **p <= 1.2))
        {
            return Err(ValidationError::Field {
                field: "population",
                value: p,
                rule: "within [-0.2, 1.2]",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T1Fit {
    /// s
    pub t1: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub t1_stderr: f64,
    pub amplitude_stderr: f64,
    pub offset_stderr: f64,
}

struct DecayProblem<'a> {
    t: Vec<f64>,
    p: &'a [f64],
    span: f64,
}

// p = [A at the first delay, B, T₁/span]
impl Problem for DecayProblem<'_> {
    fn n_params(&self) -> usize {
        3
    }
    fn n_residuals(&self) -> usize {
        self.t.len()
    }
    fn residuals(&self, q: &[f64], out: &mut [f64]) {
        let t1 = q[2] * self.span;
        for i in 0..self.t.len() {
            out[i] = q[0] * (-self.t[i] / t1).exp() + q[1] - self.p[i];
        }
    }
    fn jacobian(&self, q: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let t1 = q[2] * self.span;
        for i in 0..self.t.len() {
            let e = (-self.t[i] / t1).exp();
            jac[(i, 0)] = e;
            jac[(i, 1)] = 1.0;
            jac[(i, 2)] = q[0] * e * self.t[i] / (t1 * q[2]);
        }
        true
    }
}

/// Fits `p(t) = A·e^{-t/T₁} + B`.
pub fn fit_t1(trace: &DecayTrace) -> Result<T1Fit, QubitError> {
    trace.validate()?;
    let t0 = trace.delays[0];
    let n = trace.delays.len();
    let span = trace.delays[n - 1] - t0;
    let t: Vec<f64> = trace.delays.iter().map(|d| d - t0).collect();
    let p = &trace.population;

    let (lo, hi) = p
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    if !(hi > lo) {
        return Err(QubitError::Unresolvable("population does not vary".into()));
    }
    let tail = (n / 5).max(1);
    let b0 = p[n - tail..].iter().sum::<f64>() / tail as f64;
    let head = p[..tail].iter().sum::<f64>() / tail as f64;
    let a0 = head - b0;
    // first delay at which the excess falls below 1/e of its initial value
    let target = b0 + a0 / std::f64::consts::E;
    let cross = (1..n)
        .find(|i| (p[*i] - target) * a0.signum() <= 0.0)
        .map(|i| t[i])
        .unwrap_or(span);
    let t1_0 = cross.max(span / n as f64);

    let problem = DecayProblem { t, p, span };
    let bounds = Bounds {
        lower: vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 1e-6],
        upper: vec![f64::INFINITY, f64::INFINITY, 10.0 * MAX_T1_OVER_SPAN],
    };
    let rep = levenberg_marquardt(&problem, &[a0, b0, t1_0 / span], &bounds, &LmConfig::default())?;
    let err = rep.std_errors();
    let t1 = rep.params[2] * span;
    if !(t1 <= MAX_T1_OVER_SPAN * span) {
        return Err(QubitError::Unresolvable(format!(
            "T1 = {t1:e} s exceeds {MAX_T1_OVER_SPAN}x the delay span"
        )));
    }
    if !(rep.params[0].abs() > 2.0 * err[0]) {
        return Err(QubitError::Unresolvable("decay amplitude is not significant".into()));
    }
    let shift = (t0 / t1).exp();
    Ok(T1Fit {
        t1,
        amplitude: rep.params[0] * shift,
        offset: rep.params[1],
        t1_stderr: err[2] * span,
        amplitude_stderr: err[0] * shift,
        offset_stderr: err[1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Left edge of the first bin.
    pub start: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.counts.len())
            .map(|i| self.start + i as f64 * self.bin_width)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T1Statistics {
    pub mean: f64,
    /// Sample standard deviation (n-1); 0 for a single value.
    pub std: f64,
    pub histogram: Histogram,
}

pub fn t1_statistics(series: &[f64]) -> Result<T1Statistics, QubitError> {
    if series.is_empty() {
        return Err(QubitError::EmptySeries);
    }
    let (mean, std) = crate::tls::mean_std(series);
    let max = series.iter().cloned().fold(0.0, f64::max);
    let bins = ((max / HISTOGRAM_BIN).floor() as usize) + 1;
    let mut counts = vec![0; bins];
    for v in series {
        let i = ((v / HISTOGRAM_BIN).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(T1Statistics {
        mean,
        std,
        histogram: Histogram {
            bin_width: HISTOGRAM_BIN,
            start: 0.0,
            counts,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersiveParams {
    /// Hz
    pub f_r: f64,
    pub q_loaded: f64,
    /// χ/2π, Hz
    pub chi: f64,
    /// Hz
    pub f_q: f64,
}

/// Purcell decay rate `γ = κ·g²/Δ²` with `g² = χΔ`, i.e. `(ω_r/Q_l)·χ/|Δ|`. 1/s.
pub fn purcell_rate(d: &DispersiveParams) -> Result<f64, QubitError> {
    let delta = angular(d.f_q - d.f_r);
    if delta == 0.0 {
        return Err(QubitError::ZeroDetuning);
    }
    let kappa = angular(d.f_r) / d.q_loaded;
    Ok(kappa * angular(d.chi) / delta.abs())
}

/// `T_p = 1/γ`; infinite without dispersive coupling.
pub fn purcell_time(d: &DispersiveParams) -> Result<f64, QubitError> {
    Ok(1.0 / purcell_rate(d)?)
}

/// `Q = 2π·f_q·T₁`.
pub fn quality_factor(f_q: f64, t1: f64) -> f64 {
    2.0 * PI * f_q * t1
}

/// Removes the Purcell channel: `Q_TLS = Q/(1 - T₁/T_p)`.
pub fn tls_limited_q(q: f64, t1: f64, t_p: f64) -> Result<f64, QubitError> {
    if !(t1 < t_p) {
        return Err(QubitError::PurcellInconsistent { t1, t_p });
    }
    Ok(q / (1.0 - t1 / t_p))
}

/// Total, TLS-limited and Purcell quality factors of one record.
pub fn loss_budget(record: &QubitRecord) -> Result<LossBudget, QubitError> {
    let q = record.computed_q();
    let q_tls = tls_limited_q(q, record.t1_s(), record.t_purcell_s())?;
    let q_purcell = quality_factor(record.f_q_hz(), record.t_purcell_s());
    Ok(LossBudget::new(Some(q), Some(q_tls), Some(q_purcell), None)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screening {
    pub included: bool,
    pub reason: Option<String>,
}

pub const RULE_T2_ECHO: &str = "T2echo > 2·T1";
pub const RULE_PURCELL: &str = "T1 > Tp";

pub fn screen_qubit(record: &QubitRecord) -> Screening {
    let mut reasons = Vec::new();
    if record.t2echo_mean.is_some_and(|t2| t2 > 2.0 * record.t1_mean) {
        reasons.push(RULE_T2_ECHO);
    }
    if record.t1_mean > record.t_purcell {
        reasons.push(RULE_PURCELL);
    }
    Screening {
        included: reasons.is_empty(),
        reason: (!reasons.is_empty()).then(|| reasons.join("; ")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    /// T₁ ≤ 0.5·T_p
    HalfPurcell,
    /// T₁ ≤ 0.25·T_p
    QuarterPurcell,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::All, Subset::HalfPurcell, Subset::QuarterPurcell];

    pub fn max_ratio(self) -> f64 {
        match self {
            Subset::All => f64::INFINITY,
            Subset::HalfPurcell => 0.5,
            Subset::QuarterPurcell => 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "film_thickness", rename_all = "snake_case")]
pub enum GroupKey {
    /// One film thickness, nm.
    Thickness(f64),
    /// All films thicker than the given thickness, pooled per qubit.
    ThickerThan(f64),
}

impl GroupKey {
    fn contains(&self, thickness: f64) -> bool {
        match *self {
            GroupKey::Thickness(t) => thickness == t,
            GroupKey::ThickerThan(t) => thickness > t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub label: String,
    pub film_thickness: f64,
    pub t1_over_tp: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub key: GroupKey,
    pub subset: Subset,
    pub count: usize,
    pub mean_q: f64,
    pub std_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1bSummary {
    pub points: Vec<ScatterPoint>,
    pub groups: Vec<GroupMean>,
}

impl Fig1bSummary {
    pub fn group(&self, key: GroupKey, subset: Subset) -> Option<&GroupMean> {
        self.groups.iter().find(|g| g.key == key && g.subset == subset)
    }

    /// Relative increase of the pooled thicker-film mean over the thinnest films.
    pub fn thicker_increase(&self, subset: Subset) -> Option<f64> {
        let thin = self.groups.iter().find(|g| matches!(g.key, GroupKey::Thickness(_)) && g.subset == subset)?;
        let GroupKey::Thickness(t) = thin.key else { return None };
        let thick = self.group(GroupKey::ThickerThan(t), subset)?;
        Some(thick.mean_q / thin.mean_q - 1.0)
    }
}

/// Scatter data and mean Q per thickness for screened-in records. Q is
/// recomputed as ω_q·T₁. Groups that end up empty under a subset are omitted.
pub fn aggregate_fig1b(records: &[QubitRecord]) -> Result<Fig1bSummary, QubitError> {
    let points: Vec<ScatterPoint> = records
        .iter()
        .filter(|r| r.included && screen_qubit(r).included)
        .map(|r| ScatterPoint {
            label: r.label.clone(),
            film_thickness: r.film_thickness,
            t1_over_tp: r.t1_mean / r.t_purcell,
            q: r.computed_q(),
        })
        .collect();
    if points.is_empty() {
        return Err(QubitError::EmptyGroup);
    }
    let mut thicknesses: Vec<f64> = points.iter().map(|p| p.film_thickness).collect();
    thicknesses.sort_by(f64::total_cmp);
    thicknesses.dedup();
    let mut keys: Vec<GroupKey> = thicknesses.iter().map(|t| GroupKey::Thickness(*t)).collect();
    if thicknesses.len() > 1 {
        keys.push(GroupKey::ThickerThan(thicknesses[0]));
    }

    let mut groups = Vec::new();
    for subset in Subset::ALL {
        for key in &keys {
            let qs: Vec<f64> = points
                .iter()
                .filter(|p| key.contains(p.film_thickness) && p.t1_over_tp <= subset.max_ratio())
                .map(|p| p.q)
                .collect();
            if qs.is_empty() {
                continue;
            }
            let (mean_q, std_q) = crate::tls::mean_std(&qs);
            groups.push(GroupMean {
                key: *key,
                subset,
                count: qs.len(),
                mean_q,
                std_q,
            });
        }
    }
    Ok(Fig1bSummary { points, groups })
}

/// Reads qubit records from CSV in the bundled-table layout and validates each.
pub fn read_qubit_table<R: Read>(reader: R) -> Result<Vec<QubitRecord>, QubitError> {
    let table_err = |e: csv::Error| match e.position() {
        Some(p) => QubitError::Table(format!("line {}: {e}", p.line())),
        None => QubitError::Table(e.to_string()),
    };
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(table_err)?.clone();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(table_err)?;
        let line = row.position().map_or(0, |p| p.line());
        let rec: QubitRecord = row
            .deserialize(Some(&headers))
            .map_err(|e| QubitError::Table(format!("line {line}: {e}")))?;
        rec.validate()
            .map_err(|e| QubitError::Table(format!("line {line} ({}): {e}", rec.label)))?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(QubitError::Table("no qubit rows".into()));
    }
    Ok(out)
}

/// The 38-qubit transmon dataset shipped with the crate.
pub fn bundled_qubits() -> Vec<QubitRecord> {
    read_qubit_table(BUNDLED_TABLE.as_bytes()).expect("bundled table is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const US: f64 = 1e-6;

    fn decay(t1: f64, sigma: f64, seed: u64) -> DecayTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let delays: Vec<f64> = (0..30).map(|i| 1.5e-3 * i as f64 / 29.0).collect();
        let pop = delays
            .iter()
            .map(|t| (-t / t1).exp() + if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 })
            .collect();
        DecayTrace::new(delays, pop)
    }

    #[test]
    fn t1_noiseless_and_noisy() {
        let fit = fit_t1(&decay(501.0 * US, 0.0, 0)).unwrap();
        assert!((fit.t1 - 501.0 * US).abs() / (501.0 * US) < 1e-3);
        let fits: Vec<T1Fit> = (0..200).map(|seed| fit_t1(&decay(501.0 * US, 0.01, seed)).unwrap()).collect();
        let mut errs: Vec<f64> = fits.iter().map(|f| (f.t1 / (501.0 * US) - 1.0).abs()).collect();
        errs.sort_by(f64::total_cmp);
        assert!(errs[189] < 0.05, "p95 = {}", errs[189]);
        // the reported standard error should cover the truth about 95% of the time at 2σ
        let covered = fits.iter().filter(|f| (f.t1 - 501.0 * US).abs() < 2.0 * f.t1_stderr).count();
        assert!((180..=200).contains(&covered), "coverage {covered}/200");
    }

    #[test]
    fn constant_trace_is_unresolvable() {
        let t = DecayTrace::new((0..10).map(|i| i as f64 * 1e-4).collect(), vec![0.3; 10]);
        assert!(matches!(fit_t1(&t), Err(QubitError::Unresolvable(_))));
    }

    #[test]
    fn time_shift_leaves_t1() {
        let base = decay(300.0 * US, 0.01, 7);
        let mut shifted = base.clone();
        shifted.delays.iter_mut().for_each(|d| *d += 200.0 * US);
        let a = fit_t1(&base).unwrap();
        let b = fit_t1(&shifted).unwrap();
        assert!((a.t1 - b.t1).abs() / a.t1 < 1e-9);
        assert!((b.amplitude / a.amplitude - (200.0 / (a.t1 / US)).exp()).abs() < 1e-6);
    }

    #[test]
    fn statistics_hand_values() {
        let s = t1_statistics(&[100.0 * US, 300.0 * US]).unwrap();
        assert!((s.mean - 200.0 * US).abs() < 1e-15);
        assert!((s.std - 141.421_356_237 * US).abs() < 1e-12);
        assert_eq!(s.histogram.counts.len(), 13);
        assert_eq!(s.histogram.counts[4], 1);
        assert_eq!(s.histogram.counts[12], 1);
        assert_eq!(t1_statistics(&[5.0 * US]).unwrap().std, 0.0);
        assert!(t1_statistics(&[]).is_err());
    }

    #[test]
    fn purcell_rate_properties() {
        let d = DispersiveParams {
            f_r: 6.386e9,
            q_loaded: 5000.0,
            chi: 0.2e6,
            f_q: 3.016e9,
        };
        let g = purcell_rate(&d).unwrap();
        let doubled = DispersiveParams { q_loaded: 1e4, ..d };
        assert!((purcell_rate(&doubled).unwrap() - g / 2.0).abs() < 1e-12 * g);
        let above = DispersiveParams { f_q: 2.0 * d.f_r - d.f_q, ..d };
        assert!((purcell_rate(&above).unwrap() - g).abs() < 1e-9 * g);
        let uncoupled = DispersiveParams { chi: 0.0, ..d };
        assert!(purcell_time(&uncoupled).unwrap().is_infinite());
        let resonant = DispersiveParams { f_q: d.f_r, ..d };
        assert_eq!(purcell_rate(&resonant), Err(QubitError::ZeroDetuning));
    }

    #[test]
    fn purcell_inversion_reproduces_table_value() {
        // χ from γ = (ω_r/Q_l)·χ/|Δ| with T_p = 1141 µs
        let (f_r, f_q, ql, tp): (f64, f64, f64, f64) = (6.386e9, 3.016e9, 1e4, 1141.0 * US);
        let chi = (f_q - f_r).abs() * ql / (2.0 * PI * f_r * tp);
        let d = DispersiveParams { f_r, q_loaded: ql, chi, f_q };
        let back = purcell_time(&d).unwrap();
        assert!((back - tp).abs() / tp < 1e-9);
    }

    #[test]
    fn quality_factor_table_rows() {
        assert!((quality_factor(3.016e9, 270.0 * US) / 5.1e6 - 1.0).abs() < 0.01);
        assert!((quality_factor(4.711e9, 51.0 * US) / 1.5e6 - 1.0).abs() < 0.02);
        assert_eq!(quality_factor(4.711e9, 0.0), 0.0);
    }

    #[test]
    fn tls_limited_identity() {
        assert!((tls_limited_q(2e6, 1.0, 2.0).unwrap() - 4e6).abs() < 1e-6);
        assert_eq!(tls_limited_q(2e6, 0.0, 2.0).unwrap(), 2e6);
        assert_eq!(tls_limited_q(2e6, 1.0, f64::INFINITY).unwrap(), 2e6);
        let q1 = tls_limited_q(1.5e6, 51.0, 64.0).unwrap();
        assert!((q1 - 7.385e6).abs() < 1e4);
        assert!(tls_limited_q(1.5e6, 77.0, 61.0).is_err());
    }

    #[test]
    fn budget_closes() {
        for r in bundled_qubits().iter().filter(|r| r.t1_mean < r.t_purcell) {
            let b = loss_budget(r).unwrap();
            assert!(b.unattributed_loss().unwrap() < 1e-12 / b.q_total.unwrap());
        }
    }

    #[test]
    fn bundled_screening() {
        let recs = bundled_qubits();
        assert_eq!(recs.len(), 38);
        let excluded: Vec<(String, String)> = recs
            .iter()
            .filter_map(|r| {
                let s = screen_qubit(r);
                (!s.included).then(|| (r.label.clone(), s.reason.unwrap()))
            })
            .collect();
        assert_eq!(
            excluded,
            vec![("Q22".to_string(), RULE_T2_ECHO.to_string()), ("Q38".to_string(), RULE_PURCELL.to_string())]
        );
        for r in &recs {
            assert_eq!(r.included, screen_qubit(r).included, "{}", r.label);
        }
    }

    #[test]
    fn single_record_group() {
        let r = bundled_qubits().into_iter().find(|r| r.label == "Q27").unwrap();
        let s = aggregate_fig1b(std::slice::from_ref(&r)).unwrap();
        let g = s.group(GroupKey::Thickness(500.0), Subset::All).unwrap();
        assert_eq!(g.mean_q, r.computed_q());
        assert!(aggregate_fig1b(&[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn tls_limited_never_below_q(q in 1e3f64..1e8, t1 in 0.0f64..1e-3, extra in 1e-9f64..1e-2) {
            let qt = tls_limited_q(q, t1, t1 + extra).unwrap();
            proptest::prop_assert!(qt >= q);
        }

        #[test]
        fn quality_factor_linear(f in 1e9f64..1e10, t in 1e-6f64..1e-3, k in 0.1f64..10.0) {
            let base = quality_factor(f, t);
            let (a, b): (f64, f64) = (quality_factor(k * f, t), quality_factor(f, k * t));
            proptest::prop_assert!((a - k * base).abs() <= 1e-12 * k * base);
            proptest::prop_assert!((b - k * base).abs() <= 1e-12 * k * base);
        }
    }
}
