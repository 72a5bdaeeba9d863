//! Project configuration.
//!
//! Values are layered: shipped defaults, then the config file (TOML or JSON),
//! then `TLSLOSS_*` environment variables, then command-line flags.
//!
//! An environment variable names a config key path with `__` between levels,
//! e.g. `TLSLOSS_SEED=7`, `TLSLOSS_GEOMETRY__T_SM=1e-9` or
//! `TLSLOSS_MATERIALS__SM__TAN_DELTA=2e-3`. Key segments are matched
//! case-insensitively against the existing keys. Values are parsed as JSON
//! scalars and fall back to plain strings.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tlsloss_core::participation::{CpwGeometry, MaterialTable, MeshSettings};
use tlsloss_core::tls::CalibrationContext;

pub const ENV_PREFIX: &str = "TLSLOSS_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub seed: u64,
    pub calibration: CalibrationContext,
    pub materials: MaterialTable,
    pub geometry: CpwGeometry,
    pub mesh: MeshSettings,
    pub paths: IoPaths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoPaths {
    /// Output directory; `--out` takes precedence.
    pub out_dir: Option<PathBuf>,
    /// Qubit table used by `qubit-report` when no dataset is given.
    pub qubit_table: Option<PathBuf>,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            calibration: CalibrationContext::default(),
            materials: MaterialTable::default(),
            geometry: CpwGeometry::default(),
            mesh: MeshSettings::default(),
            paths: IoPaths::default(),
        }
    }
}

fn parse_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        _ => {
            let t: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            serde_json::to_value(t)?
        }
    };
    Ok(value)
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, segments: &[String], value: Value) -> Result<()> {
    let mut node = root;
    for (k, seg) in segments.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("`{}` is not a table", segments[..k].join(".")))?;
        let key = obj
            .keys()
            .find(|existing| existing.eq_ignore_ascii_case(seg))
            .cloned()
            .unwrap_or_else(|| seg.clone());
        if k + 1 == segments.len() {
            obj.insert(key, value);
            return Ok(());
        }
        node = obj.entry(key).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn apply_env<I>(root: &mut Value, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.len() > ENV_PREFIX.len())
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let segments: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        set_path(root, &segments, scalar(&raw)).with_context(|| format!("applying {key}"))?;
    }
    Ok(())
}

/// Rejects keys that deserialisation silently dropped.
fn unknown_keys(given: &Value, known: &Value, prefix: &str) -> Result<()> {
    if let (Value::Object(g), Value::Object(k)) = (given, known) {
        for (key, v) in g {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match k.get(key) {
                Some(inner) => unknown_keys(v, inner, &path)?,
                None => bail!("unknown configuration key `{path}`"),
            }
        }
    }
    Ok(())
}

impl ProjectConfig {
    /// Builds the effective configuration from defaults, an optional file and
    /// the given environment.
    pub fn resolve<I>(file: Option<&Path>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            merge(&mut value, parse_file(path)?);
        }
        apply_env(&mut value, env)?;
        let config: Self = serde_json::from_value(value.clone()).context("invalid configuration")?;
        unknown_keys(&value, &serde_json::to_value(&config)?, "")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        self.geometry.validate()?;
        self.materials.validate()?;
        if let Some(p) = &self.paths.qubit_table {
            if !p.exists() {
                bail!("paths.qubit_table {} does not exist", p.display());
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration serialised with sorted keys.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).expect("config serialises");
        hex(&Sha256::digest(canonical.to_string().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip() {
        let c = ProjectConfig::resolve(None, Vec::new()).unwrap();
        assert_eq!(c, ProjectConfig::default());
    }

    #[test]
    fn env_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\n[geometry]\nt_sm = 1e-9\n[materials.SM]\ntan_delta = 2e-3\n").unwrap();
        let c = ProjectConfig::resolve(Some(&path), Vec::new()).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.geometry.t_sm, 1e-9);
        assert_eq!(c.materials.sm.tan_delta, 2e-3);
        assert_eq!(c.materials.sm.eps_r, 4.0);

        let c = ProjectConfig::resolve(
            Some(&path),
            env(&[("TLSLOSS_SEED", "9"), ("TLSLOSS_MATERIALS__SM__EPS_R", "5"), ("OTHER", "1")]),
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.materials.sm.eps_r, 5.0);
        assert_eq!(c.geometry.t_sm, 1e-9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ProjectConfig::resolve(None, env(&[("TLSLOSS_GEOMETRY__WIDTH", "1")])).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"sede": 1}"#).unwrap();
        assert!(ProjectConfig::resolve(Some(&path), Vec::new()).is_err());
    }

    #[test]
    fn hash_ignores_field_order() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        std::fs::write(&a, r#"{"seed": 2, "geometry": {"t_sm": 1e-9, "w": 2e-5}}"#).unwrap();
        std::fs::write(&b, r#"{"geometry": {"w": 2e-5, "t_sm": 1e-9}, "seed": 2}"#).unwrap();
        let ha = ProjectConfig::resolve(Some(&a), Vec::new()).unwrap().hash();
        let hb = ProjectConfig::resolve(Some(&b), Vec::new()).unwrap().hash();
        assert_eq!(ha, hb);
        assert_ne!(ha, ProjectConfig::default().hash());
    }

    #[test]
    fn invalid_physics_is_rejected() {
        assert!(ProjectConfig::resolve(None, env(&[("TLSLOSS_CALIBRATION__TEMPERATURE", "-1")])).is_err());
    }
}
