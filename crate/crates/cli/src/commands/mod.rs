pub mod fit_resonator;
pub mod fit_tls;
pub mod qubit_report;
pub mod simulate;
pub mod synthesize;
