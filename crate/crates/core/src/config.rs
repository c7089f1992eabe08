//! Scenario configuration files (TOML).
//!
//! A file names the scenario in `[scenario] id` and may override any
//! parameter of any module in its own section. Missing keys take the
//! scenario's defaults, so `[scenario]\nid = "II"` alone is a complete file.
//!
//! ```toml
//! [scenario]
//! id = "I"            # "I" (tag at 1.12 m), "II" (0.70 m) or "III" (boarding)
//! positions = 5000    # static reference positions (I and II)
//! seed = 1
//!
//! [visibility]
//! olos_nlos_threshold = false   # or a distance in meters
//!
//! [filter.motion]
//! kind = "gaussian"
//! std = 0.5
//! cap = 1.5
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::boarding::BoardingConfig;
use crate::gridfilter::{LikelihoodModel, MotionModel};
use crate::ranging::RangingParams;
use crate::scene::SceneConfig;
use crate::visibility::VisibilityParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("unknown scenario `{0}` (expected I, II or III)")]
    UnknownScenario(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    I,
    II,
    III,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 3] = [ScenarioId::I, ScenarioId::II, ScenarioId::III];

    /// Small integer used to key random streams.
    pub fn code(self) -> u8 {
        match self {
            ScenarioId::I => 1,
            ScenarioId::II => 2,
            ScenarioId::III => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::I => "I",
            ScenarioId::II => "II",
            ScenarioId::III => "III",
        }
    }

    pub fn is_static(self) -> bool {
        self != ScenarioId::III
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ScenarioId::I),
            "II" | "2" => Ok(ScenarioId::II),
            "III" | "3" => Ok(ScenarioId::III),
            _ => Err(ConfigError::UnknownScenario(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub id: ScenarioId,
    /// Number of static reference positions (ignored for boarding).
    pub positions: usize,
    pub seed: u64,
    /// Adds the `receivable` column to visibility.csv.
    pub receivable_column: bool,
    /// Bin width of the residual histogram (m).
    pub residual_bin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub likelihood: LikelihoodModel,
    pub motion: MotionModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub scene: SceneConfig,
    pub visibility: VisibilityParams,
    pub ranging: RangingParams,
    pub filter: FilterConfig,
    pub boarding: BoardingConfig,
}

pub const DEFAULT_SEED: u64 = 20_240_607;

impl ScenarioConfig {
    pub fn defaults(id: ScenarioId) -> Self {
        let visibility = VisibilityParams {
            olos_nlos_threshold: (id != ScenarioId::I).then_some(6.0),
            ..Default::default()
        };
        let motion = match id {
            ScenarioId::III => MotionModel::Gaussian { std: 0.5, cap: 1.5 },
            _ => MotionModel::Identity,
        };
        Self {
            scenario: ScenarioSection {
                id,
                positions: 5000,
                seed: DEFAULT_SEED,
                receivable_column: false,
                residual_bin: 0.1,
            },
            scene: SceneConfig::default(),
            visibility,
            ranging: RangingParams::default(),
            filter: FilterConfig {
                likelihood: LikelihoodModel::default(),
                motion,
            },
            boarding: BoardingConfig::default(),
        }
    }

    pub fn id(&self) -> ScenarioId {
        self.scenario.id
    }

    /// Tag height of the scenario.
    pub fn height(&self) -> f64 {
        match self.scenario.id {
            ScenarioId::I => 1.12,
            ScenarioId::II => 0.70,
            ScenarioId::III => self.boarding.tag_height,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let id_raw = user
            .get("scenario")
            .and_then(|s| s.get("id"))
            .and_then(|v| v.as_str())
            .ok_or_else(|| ConfigError::Parse("missing string `scenario.id`".into()))?;
        let id: ScenarioId = id_raw.parse()?;
        let mut base = toml::Table::try_from(Self::defaults(id)).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge(&mut base, user);
        // the canonical spelling of the id
        if let Some(toml::Value::Table(s)) = base.get_mut("scenario") {
            s.insert("id".into(), toml::Value::String(id.as_str().into()));
        }
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Fully resolved configuration in TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }

    /// SHA-256 of the resolved TOML, hex encoded.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_toml().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn fmt::Display| ConfigError::Invalid(e.to_string());
        self.visibility.validate().map_err(|e| invalid(&e))?;
        self.ranging.validate().map_err(|e| invalid(&e))?;
        self.filter.likelihood.validate().map_err(|e| invalid(&e))?;
        if !self.scene.heights.iter().any(|h| (h - self.height()).abs() < 1e-9) {
            return Err(ConfigError::Invalid(format!(
                "tag height {} is not among the scene heights {:?}",
                self.height(),
                self.scene.heights
            )));
        }
        if self.id().is_static() && self.scenario.positions == 0 {
            return Err(ConfigError::Invalid("positions must be at least 1".into()));
        }
        if !(self.scenario.residual_bin.is_finite() && self.scenario.residual_bin > 0.0) {
            return Err(ConfigError::Invalid("residual_bin must be positive".into()));
        }
        Ok(())
    }
}

/// Recursively overlays `over` onto `base`; tables merge, other values
/// replace.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
