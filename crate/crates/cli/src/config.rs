//! Run configuration and its `key = value` text form.
//!
//! Keys are dotted paths into [`RunConfig`] (`agent.gamma`, `case.n_bus`).
//! Values are JSON literals; anything that does not parse as JSON is taken as
//! a bare string, so `run.horizon = one-day` and `run.horizon = "one-day"`
//! are equivalent. A file only needs the keys it overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gridpatch_core::confidence::DEFAULT_MU;
use gridpatch_core::data::SynthProfile;
use gridpatch_core::ddpg::{AgentConfig, ForecastMode};
use gridpatch_core::dispatcher::NecessityConfig;
use gridpatch_core::forecast::{ForecastConfig, TrainConfig};
use gridpatch_core::grid::CaseSpec;
use gridpatch_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub days: usize,
    pub units: usize,
    pub profile: SynthProfile,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            days: 4000,
            units: 18,
            profile: SynthProfile::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceConfig {
    pub mu: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self { mu: DEFAULT_MU }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub horizon: ForecastMode,
    pub patching: bool,
    pub episodes: usize,
    pub episode_cap: usize,
    pub eval_episodes: usize,
    /// Policy used by `eval-dispatch`: `agent` or `random`.
    pub eval_policy: String,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            horizon: ForecastMode::TenDay,
            patching: true,
            episodes: 300,
            episode_cap: 30,
            eval_episodes: 10,
            eval_policy: "agent".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub inputs: Vec<usize>,
    pub horizons: Vec<usize>,
    /// Train missing cell models instead of failing.
    pub train_in_place: bool,
    pub epochs: usize,
    pub max_windows: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            inputs: vec![48, 56, 64, 72, 80, 88, 96],
            horizons: vec![15, 20, 25, 30],
            train_in_place: true,
            epochs: 2,
            max_windows: 400,
        }
    }
}

/// Artifact locations; unset entries resolve inside the output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub series: Option<PathBuf>,
    pub case: Option<PathBuf>,
    pub forecaster: Option<PathBuf>,
    pub agent: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub case: CaseSpec,
    pub forecast: ForecastConfig,
    pub train: TrainConfig,
    pub confidence: ConfidenceConfig,
    pub necessity: NecessityConfig,
    pub agent: AgentConfig,
    pub run: RunSettings,
    pub sweep: SweepConfig,
    pub paths: PathConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            case: CaseSpec::default(),
            forecast: ForecastConfig::default(),
            train: TrainConfig::default(),
            confidence: ConfidenceConfig::default(),
            necessity: NecessityConfig::default(),
            agent: AgentConfig::default(),
            run: RunSettings::default(),
            sweep: SweepConfig::default(),
            paths: PathConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults overridden by the keys in `text`.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut flat = flatten(&serde_json::to_value(Self::default())?);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let slot = flat.get_mut(key).ok_or_else(|| {
                Error::Config(format!("line {}: unknown key `{key}`", lineno + 1))
            })?;
            let value = value.trim();
            *slot =
                serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        }
        let cfg: Self = serde_json::from_value(unflatten(&flat))
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }

    /// Every key, sorted, one per line.
    pub fn to_kv(&self) -> Result<String> {
        let flat = flatten(&serde_json::to_value(self)?);
        let mut out = String::new();
        for (k, v) in flat {
            out.push_str(&format!("{k} = {v}\n"));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.units == 0 || self.data.days == 0 {
            return Err(Error::Config(
                "data.units and data.days must be positive".into(),
            ));
        }
        self.data.profile.validate()?;
        self.forecast.validate()?;
        self.agent.validate()?;
        if !(self.confidence.mu > 0.0) {
            return Err(Error::Config("confidence.mu must be positive".into()));
        }
        if self.run.patching {
            self.necessity.validate(self.case.n_gen)?;
        }
        if self.run.episodes == 0 || self.run.episode_cap == 0 || self.run.eval_episodes == 0 {
            return Err(Error::Config("run episode counts must be positive".into()));
        }
        if !matches!(self.run.eval_policy.as_str(), "agent" | "random") {
            return Err(Error::Config(format!(
                "run.eval_policy must be agent or random, got {}",
                self.run.eval_policy
            )));
        }
        if self.sweep.inputs.is_empty() || self.sweep.horizons.is_empty() {
            return Err(Error::Config(
                "sweep needs at least one input length and horizon".into(),
            ));
        }
        Ok(())
    }

    pub fn series_path(&self) -> PathBuf {
        self.paths
            .series
            .clone()
            .unwrap_or_else(|| self.out.join("series.csv"))
    }

    pub fn case_path(&self) -> PathBuf {
        self.paths
            .case
            .clone()
            .unwrap_or_else(|| self.out.join("case.json"))
    }

    pub fn forecaster_path(&self) -> PathBuf {
        self.paths
            .forecaster
            .clone()
            .unwrap_or_else(|| self.out.join("forecaster.json"))
    }

    pub fn agent_path(&self) -> PathBuf {
        self.paths
            .agent
            .clone()
            .unwrap_or_else(|| self.out.join("agent.json"))
    }

    /// Stream seed for a named purpose.
    pub fn seed_for(&self, purpose: &str) -> u64 {
        derive_seed(self.seed, purpose)
    }
}

/// Mixes a label into a master seed (FNV-1a followed by a SplitMix64 finalizer).
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn flatten(v: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, child, out);
                }
            }
            leaf => {
                out.insert(prefix.to_string(), leaf.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", v, &mut out);
    out
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.insert(part.to_string(), v.clone());
            } else {
                node = node
                    .entry(part.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("dotted keys nest objects");
            }
        }
    }
    Value::Object(root)
}
