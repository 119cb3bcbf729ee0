//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys are unique within a file.
//! Scenario keys:
//!
//! | key | example |
//! |---|---|
//! | `radix` | `16` |
//! | `vcs_per_port` | `4` |
//! | `buffer_depth` | `4` |
//! | `flits_per_packet` | `5` |
//! | `seed` | `1` |
//! | `pattern` | `uniform_random` |
//! | `normal_rate` | `0.01` |
//! | `attackers` | `39:0.8,100:0.5` (empty for none) |
//! | `target_victim` | `3` |
//! | `warmup_cycles`, `run_cycles`, `sample_period`, `drain_cycles` | `1000` |
//!
//! Pipeline keys add `detector_model`, `segmentor_model`,
//! `detection_threshold`, `attribution_threshold`, `segmentation_threshold`,
//! `vce`, `quarantine`, `max_rounds` and `output_dir`.

use std::path::{Path, PathBuf};

use crate::bench::PipelineConfig;
use crate::error::{Error, Result};
use crate::mesh::NodeId;
use crate::sim::{Attacker, ScenarioConfig};

/// Ordered key/value pairs with their source line numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    pub entries: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", i + 1)))?;
            kv.insert(k.trim(), v.trim(), i + 1)?;
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn insert(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        if key.is_empty() {
            return Err(Error::Parse(format!("line {line}: empty key")));
        }
        if self.entries.iter().any(|(k, _, _)| k == key) {
            return Err(Error::Parse(format!("line {line}: duplicate key `{key}`")));
        }
        self.entries
            .push((key.to_string(), value.to_string(), line));
        Ok(())
    }

    /// Apply `key=value` overrides, replacing existing keys.
    pub fn override_with(&mut self, overrides: &[(String, String)]) {
        for (k, v) in overrides {
            match self.entries.iter_mut().find(|(key, _, _)| key == k) {
                Some(e) => e.1 = v.clone(),
                None => self.entries.push((k.clone(), v.clone(), 0)),
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }
}

/// Split `key=value` as given on the command line.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("`{key}`: cannot parse `{value}`")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Parse(format!(
            "`{key}`: expected a boolean, got `{value}`"
        ))),
    }
}

/// `node:fir` pairs separated by commas.
pub fn parse_attackers(value: &str) -> Result<Vec<Attacker>> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (node, fir) = item
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("attacker `{item}` is not node:fir")))?;
        out.push(Attacker {
            node: NodeId(num("attackers", node.trim())?),
            fir: num("attackers", fir.trim())?,
        });
    }
    Ok(out)
}

pub fn format_attackers(attackers: &[Attacker]) -> String {
    attackers
        .iter()
        .map(|a| format!("{}:{}", a.node, a.fir))
        .collect::<Vec<_>>()
        .join(",")
}

/// Set one scenario field; `Ok(false)` if `key` is not a scenario key.
fn apply_scenario_key(cfg: &mut ScenarioConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "radix" => cfg.mesh.radix = num(key, value)?,
        "vcs_per_port" => cfg.mesh.vcs_per_port = num(key, value)?,
        "buffer_depth" => cfg.mesh.buffer_depth = num(key, value)?,
        "flits_per_packet" => cfg.mesh.flits_per_packet = num(key, value)?,
        "seed" => cfg.mesh.seed = num(key, value)?,
        "pattern" => cfg.pattern = value.parse()?,
        "normal_rate" => cfg.normal_rate = num(key, value)?,
        "attackers" => cfg.attackers = parse_attackers(value)?,
        "target_victim" => cfg.target_victim = NodeId(num(key, value)?),
        "warmup_cycles" => cfg.warmup_cycles = num(key, value)?,
        "run_cycles" => cfg.run_cycles = num(key, value)?,
        "sample_period" => cfg.sample_period = num(key, value)?,
        "drain_cycles" => cfg.drain_cycles = num(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn unknown(key: &str, line: usize) -> Error {
    if line > 0 {
        Error::Parse(format!("line {line}: unknown key `{key}`"))
    } else {
        Error::Parse(format!("unknown key `{key}`"))
    }
}

pub fn scenario_from_kv(kv: &KeyValues) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::default();
    for (k, v, line) in &kv.entries {
        if !apply_scenario_key(&mut cfg, k, v)? {
            return Err(unknown(k, *line));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn pipeline_from_kv(kv: &KeyValues) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    for (k, v, line) in &kv.entries {
        if apply_scenario_key(&mut cfg.scenario, k, v)? {
            continue;
        }
        match k.as_str() {
            "detector_model" => cfg.detector_model = Some(PathBuf::from(v)),
            "segmentor_model" => cfg.segmentor_model = Some(PathBuf::from(v)),
            "detection_threshold" => cfg.detection_threshold = num(k, v)?,
            "attribution_threshold" => cfg.attribution_threshold = num(k, v)?,
            "segmentation_threshold" => cfg.segmentation_threshold = num(k, v)?,
            "vce" => cfg.vce_enabled = boolean(k, v)?,
            "quarantine" => cfg.quarantine = boolean(k, v)?,
            "max_rounds" => cfg.max_rounds = num(k, v)?,
            "output_dir" => cfg.output_dir = Some(PathBuf::from(v)),
            _ => return Err(unknown(k, *line)),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Text form accepted back by [`scenario_from_kv`].
pub fn scenario_to_text(cfg: &ScenarioConfig) -> String {
    format!(
        "radix = {}\nvcs_per_port = {}\nbuffer_depth = {}\nflits_per_packet = {}\nseed = {}\n\
         pattern = {}\nnormal_rate = {}\nattackers = {}\ntarget_victim = {}\n\
         warmup_cycles = {}\nrun_cycles = {}\nsample_period = {}\ndrain_cycles = {}\n",
        cfg.mesh.radix,
        cfg.mesh.vcs_per_port,
        cfg.mesh.buffer_depth,
        cfg.mesh.flits_per_packet,
        cfg.mesh.seed,
        cfg.pattern.as_str(),
        cfg.normal_rate,
        format_attackers(&cfg.attackers),
        cfg.target_victim,
        cfg.warmup_cycles,
        cfg.run_cycles,
        cfg.sample_period,
        cfg.drain_cycles,
    )
}
