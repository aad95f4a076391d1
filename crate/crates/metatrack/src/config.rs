//! Plain-text TOML settings for each command. A file only lists the keys it
//! changes; everything else keeps its default. The fully resolved settings
//! are what run manifests record.

use std::path::Path;

use metatrack_core::episodes::TaskConfig;
use metatrack_core::maml::{MamlConfig, MetaMode};
use metatrack_core::online::{InitOptions, SimilarityForm};
use metatrack_core::synth::{Scenario, SynthConfig};
use metatrack_core::tracker::{SessionConfig, TrackerParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, CliError, ErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Random,
    Crossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub scenario: ScenarioName,
    pub sequence: String,
    pub num_identities: usize,
    pub frames: u32,
    pub arena_width: f64,
    pub arena_height: f64,
    pub box_width: f64,
    pub box_height: f64,
    pub feature_dim: usize,
    pub min_angle_deg: f64,
    pub pair_angle_deg: Option<f64>,
    pub speed: f64,
    pub motion_jitter: f64,
    pub feature_noise: f64,
    pub nuisance_dims: usize,
    pub nuisance_noise: f64,
    pub miss_rate: f64,
    pub false_positive_rate: f64,
    pub bbox_jitter: f64,
    pub seed: u64,
}

impl From<&SynthConfig> for SynthSettings {
    fn from(c: &SynthConfig) -> Self {
        Self {
            scenario: match c.scenario {
                Scenario::Random => ScenarioName::Random,
                Scenario::Crossing => ScenarioName::Crossing,
            },
            sequence: c.sequence.clone(),
            num_identities: c.num_identities,
            frames: c.frames,
            arena_width: c.arena_width,
            arena_height: c.arena_height,
            box_width: c.box_width,
            box_height: c.box_height,
            feature_dim: c.feature_dim,
            min_angle_deg: c.min_angle_deg,
            pair_angle_deg: c.pair_angle_deg,
            speed: c.speed,
            motion_jitter: c.motion_jitter,
            feature_noise: c.feature_noise,
            nuisance_dims: c.nuisance_dims,
            nuisance_noise: c.nuisance_noise,
            miss_rate: c.miss_rate,
            false_positive_rate: c.false_positive_rate,
            bbox_jitter: c.bbox_jitter,
            seed: c.seed,
        }
    }
}

impl Default for SynthSettings {
    fn default() -> Self {
        (&SynthConfig::random_preset()).into()
    }
}

impl SynthSettings {
    pub fn crossing() -> Self {
        (&SynthConfig::crossing_preset()).into()
    }

    pub fn to_config(&self) -> SynthConfig {
        SynthConfig {
            scenario: match self.scenario {
                ScenarioName::Random => Scenario::Random,
                ScenarioName::Crossing => Scenario::Crossing,
            },
            sequence: self.sequence.clone(),
            num_identities: self.num_identities,
            frames: self.frames,
            arena_width: self.arena_width,
            arena_height: self.arena_height,
            box_width: self.box_width,
            box_height: self.box_height,
            feature_dim: self.feature_dim,
            min_angle_deg: self.min_angle_deg,
            pair_angle_deg: self.pair_angle_deg,
            speed: self.speed,
            motion_jitter: self.motion_jitter,
            feature_noise: self.feature_noise,
            nuisance_dims: self.nuisance_dims,
            nuisance_noise: self.nuisance_noise,
            miss_rate: self.miss_rate,
            false_positive_rate: self.false_positive_rate,
            bbox_jitter: self.bbox_jitter,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Exact,
    Fomaml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub inner_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: ModeName,
    pub seed: u64,
    pub init_scale: f64,
    pub k: usize,
    pub q: usize,
    pub identities_per_task: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let m = MamlConfig::default();
        let t = TaskConfig::default();
        Self {
            inner_lr: m.inner_lr,
            outer_lr: m.outer_lr,
            inner_steps: m.inner_steps,
            epochs: m.epochs,
            batch_size: m.batch_size,
            mode: ModeName::Exact,
            seed: m.seed,
            init_scale: m.init_scale,
            k: t.k,
            q: t.q,
            identities_per_task: t.identities_per_task,
        }
    }
}

impl TrainSettings {
    pub fn maml(&self) -> MamlConfig {
        MamlConfig {
            inner_lr: self.inner_lr,
            outer_lr: self.outer_lr,
            inner_steps: self.inner_steps,
            epochs: self.epochs,
            batch_size: self.batch_size,
            mode: match self.mode {
                ModeName::Exact => MetaMode::Exact,
                ModeName::Fomaml => MetaMode::FirstOrder,
            },
            seed: self.seed,
            init_scale: self.init_scale,
        }
    }

    pub fn tasks(&self) -> TaskConfig {
        TaskConfig { k: self.k, q: self.q, identities_per_task: self.identities_per_task }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityName {
    Tiled,
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSettings {
    pub n_init: u32,
    pub max_age: u32,
    pub match_threshold: f64,
    pub iou_gate: f64,
    pub ema: f64,
    pub adapt: bool,
    pub online_lr: f64,
    pub label_margin: f64,
    pub top_m: Option<usize>,
    pub similarity: SimilarityName,
    pub include_negative: bool,
}

impl Default for TrackSettings {
    fn default() -> Self {
        let s = SessionConfig::default();
        Self {
            n_init: s.tracker.n_init,
            max_age: s.tracker.max_age,
            match_threshold: s.tracker.match_threshold,
            iou_gate: s.tracker.iou_gate,
            ema: s.tracker.ema,
            adapt: s.adapt,
            online_lr: s.online_lr,
            label_margin: s.label_margin,
            top_m: s.init.top_m,
            similarity: SimilarityName::Tiled,
            include_negative: s.init.include_negative,
        }
    }
}

impl TrackSettings {
    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            tracker: TrackerParams {
                n_init: self.n_init,
                max_age: self.max_age,
                match_threshold: self.match_threshold,
                iou_gate: self.iou_gate,
                ema: self.ema,
            },
            adapt: self.adapt,
            online_lr: self.online_lr,
            label_margin: self.label_margin,
            init: InitOptions {
                top_m: self.top_m,
                form: match self.similarity {
                    SimilarityName::Tiled => SimilarityForm::Tiled,
                    SimilarityName::Centroid => SimilarityForm::Centroid,
                },
                include_negative: self.include_negative,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub iou_threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { iou_threshold: metatrack_core::metrics::DEFAULT_IOU_THRESHOLD }
    }
}

/// Apply the keys of `table` on top of `base`.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, table: toml::Table) -> Result<T, CliError> {
    let mut merged = toml::Table::try_from(base).map_err(CliError::config)?;
    merged.extend(table);
    toml::Value::Table(merged).try_into().map_err(CliError::config)
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table, CliError> {
    text.parse::<toml::Table>().map_err(|e| CliError::config(format!("{origin}: {e}")))
}

fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = read_file(path, ErrorKind::Config)?;
    parse_table(&text, &path.display().to_string())
}

/// Settings from an optional file over `T::default()`.
pub fn load<T: Serialize + DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => overlay(&T::default(), read_table(p)?).map_err(|e| CliError::config(format!("{}: {e}", p.display()))),
    }
}

/// Synthetic settings. The optional `preset = "random" | "crossing"` key
/// picks the base the other keys override.
pub fn load_synth(path: &Path) -> Result<SynthSettings, CliError> {
    let mut table = read_table(path)?;
    let base = match table.remove("preset") {
        None => SynthSettings::default(),
        Some(toml::Value::String(s)) if s == "random" => SynthSettings::default(),
        Some(toml::Value::String(s)) if s == "crossing" => SynthSettings::crossing(),
        Some(other) => {
            return Err(CliError::config(format!("{}: unknown preset {other}", path.display())));
        }
    };
    overlay(&base, table).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}
