//! Experiment configuration: one TOML file per experiment, with a section
//! per verb. Unknown fields are rejected so typos surface as errors naming
//! the offending field.

use anyhow::{anyhow, bail, Context, Result};
use desklab_core::hypersearch::GridAxes;
use desklab_core::model::ModelConfig;
use desklab_core::trainer::Hyper;
use desklab_core::workspace::Workspace;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Width-scaled variants of the desk model, the parameter-count family the
/// scaling recipes sweep over.
pub fn model_preset(name: &str) -> Option<ModelConfig> {
    let desk = ModelConfig::desk();
    let scaled = |d_model: usize, d_ff: usize| ModelConfig { d_model, d_ff, ..desk.clone() };
    match name {
        "desk-xs" => Some(scaled(32, 128)),
        "desk-s" => Some(scaled(48, 192)),
        "desk" => Some(desk),
        "desk-l" => Some(scaled(96, 384)),
        "desk-xl" => Some(scaled(128, 512)),
        _ => None,
    }
}

/// A model reference in config: a preset name or an inline shape table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Preset(String),
    Inline(ModelConfig),
}

impl ModelRef {
    pub fn resolve(&self) -> Result<ModelConfig> {
        match self {
            ModelRef::Preset(name) => model_preset(name)
                .ok_or_else(|| anyhow!("unknown model preset '{name}' (try desk-xs/desk-s/desk/desk-l/desk-xl)")),
            ModelRef::Inline(cfg) => {
                cfg.validate().map_err(|e| anyhow!("invalid model config: {e}"))?;
                Ok(cfg.clone())
            }
        }
    }
}

/// Scalar-or-list sweep axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sweep<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Sweep<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Sweep::One(x) => vec![x.clone()],
            Sweep::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperToml {
    pub lr: f64,
    pub epochs: u32,
    /// Defaults to the standard-practice 0.1 when omitted.
    pub wd: Option<f64>,
    pub batch: Option<u32>,
}

impl HyperToml {
    pub fn resolve(&self, default_batch: u32) -> Hyper {
        Hyper {
            peak_lr: self.lr,
            epochs: self.epochs,
            weight_decay: self.wd.unwrap_or(0.1),
            batch_size: self.batch.unwrap_or(default_batch),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub d: u64,
    pub model: ModelRef,
    pub lr: Sweep<f64>,
    pub epochs: Sweep<u32>,
    pub wd: Sweep<f64>,
    pub batch: Option<Sweep<u32>>,
    #[serde(default = "default_seed")]
    pub init_seed: u64,
    #[serde(default = "default_seed")]
    pub data_seed: u64,
    /// Train this many members with derived seeds (>1 builds ensemble members).
    #[serde(default = "default_members")]
    pub members: u32,
    #[serde(default = "default_tag")]
    pub tag: String,
}

fn default_seed() -> u64 {
    1
}
fn default_members() -> u32 {
    1
}
fn default_tag() -> String {
    "run".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedPointToml {
    pub lr: f64,
    pub epochs: u32,
    pub wd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub d: u64,
    pub model: ModelRef,
    /// "standard" (wd fixed at 0.1) or "regularized" (all three axes).
    pub recipe: String,
    /// Grid preset name from the workspace, unless `axes` is given.
    pub grid: Option<String>,
    pub axes: Option<GridAxes>,
    pub seed_point: Option<SeedPointToml>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_seed")]
    pub init_seed: u64,
    #[serde(default = "default_seed")]
    pub data_seed: u64,
}

fn default_budget() -> usize {
    300
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    /// Evaluate an ensemble of existing runs by ledger key.
    pub members: Option<Vec<String>>,
    /// Or train fresh members: model/d/hyper plus k_max.
    pub d: Option<u64>,
    pub model: Option<ModelRef>,
    pub hyper: Option<HyperToml>,
    #[serde(default = "default_k_max")]
    pub k_max: u32,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    /// Fit a member-count law over the K=1..k_max prefix ensembles.
    #[serde(default = "default_true")]
    pub fit_k_law: bool,
    #[serde(default = "default_tag")]
    pub tag: String,
}

fn default_k_max() -> u32 {
    4
}
fn default_base_seed() -> u64 {
    1000
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    /// Teacher member ledger keys (one key = single-model teacher).
    pub teacher_keys: Vec<String>,
    pub synth_tokens: u64,
    #[serde(default = "default_ratio")]
    pub ratio: (u32, u32),
    pub student_model: ModelRef,
    pub student: HyperToml,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_seed")]
    pub sample_seed: u64,
    /// "individual-members" or "averaged-ensemble".
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_cap")]
    pub synth_epoch_cap: u32,
    pub d: u64,
    #[serde(default = "default_seed")]
    pub init_seed: u64,
    #[serde(default = "default_seed")]
    pub data_seed: u64,
    /// Also train a token-matched synthetic-only control student.
    #[serde(default)]
    pub no_mix_control: bool,
}

fn default_ratio() -> (u32, u32) {
    (1, 1)
}
fn default_temperature() -> f64 {
    1.0
}
fn default_mode() -> String {
    "individual-members".to_string()
}
fn default_cap() -> u32 {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeSection {
    /// standard | regularized | ensemble | joint | distill
    pub kind: String,
    pub d: Sweep<u64>,
    pub models: Vec<ModelRef>,
    pub grid: Option<String>,
    pub axes: Option<GridAxes>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_k_max")]
    pub k_max: u32,
    #[serde(default = "default_seed")]
    pub init_seed: u64,
    #[serde(default = "default_seed")]
    pub data_seed: u64,
    /// Distill settings, required when kind = "distill".
    pub distill: Option<DistillSection>,
    #[serde(default = "default_recipe_name")]
    pub name: String,
}

fn default_recipe_name() -> String {
    "recipe".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSection {
    pub d: u64,
    pub model: ModelRef,
    pub hyper: HyperToml,
    /// Subset of ["both", "init-only", "data-only"].
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    pub seeds: Vec<u64>,
    /// Also build K=1..n prefix ensembles per mode and compare to the
    /// single-model mean.
    #[serde(default = "default_true")]
    pub k_sweep: bool,
}

fn default_modes() -> Vec<String> {
    vec!["both".into(), "init-only".into(), "data-only".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// CSV with one column per tier axis (innermost first) plus `loss`.
    pub csv: String,
    /// Axis names, innermost first: members | params | tokens.
    pub axes: Vec<String>,
    pub name: String,
    /// Initial guess override (A0, alpha0, E0).
    pub initial_guess: Option<(f64, f64, f64)>,
}

/// The whole experiment file; every section is optional and verbs read
/// their own.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run: Vec<RunSection>,
    pub search: Option<SearchSection>,
    pub ensemble: Option<EnsembleSection>,
    pub distill: Option<DistillSection>,
    pub recipe: Option<RecipeSection>,
    pub variance: Option<VarianceSection>,
    pub fit: Option<FitSection>,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow!("config {}: {e}", path.display()))
}

pub fn grid_from(ws: &Workspace, preset: &Option<String>, axes: &Option<GridAxes>) -> Result<GridAxes> {
    if let Some(axes) = axes {
        axes.validate();
        return Ok(axes.clone());
    }
    let name = preset.as_deref().unwrap_or("desk");
    ws.config
        .grid_presets
        .get(name)
        .cloned()
        .ok_or_else(|| anyhow!("unknown grid preset '{name}'"))
}

pub fn parse_seed_point(axes: &GridAxes, sp: &SeedPointToml) -> Result<desklab_core::hypersearch::GridPoint> {
    let find = |vals: &[f64], x: f64, what: &str| -> Result<usize> {
        vals.iter()
            .position(|v| (v - x).abs() <= 1e-12 * x.abs().max(1.0))
            .ok_or_else(|| anyhow!("seed_point {what}={x} is not on the grid axis {vals:?}"))
    };
    let lr = find(&axes.lr, sp.lr, "lr")?;
    let wd = find(&axes.wd, sp.wd, "wd")?;
    let epochs = axes
        .epochs
        .iter()
        .position(|&e| e == sp.epochs)
        .ok_or_else(|| anyhow!("seed_point epochs={} is not on the grid axis {:?}", sp.epochs, axes.epochs))?;
    Ok(desklab_core::hypersearch::GridPoint { lr, epochs, wd, batch: None })
}

pub fn parse_mode(s: &str) -> Result<desklab_core::trainer::SeedMode> {
    match s {
        "both" => Ok(desklab_core::trainer::SeedMode::Both),
        "init-only" => Ok(desklab_core::trainer::SeedMode::InitOnly),
        "data-only" => Ok(desklab_core::trainer::SeedMode::DataOnly),
        _ => bail!("unknown seed mode '{s}' (both | init-only | data-only)"),
    }
}

pub fn parse_sampling_mode(s: &str) -> Result<desklab_core::distill::SamplingMode> {
    match s {
        "individual-members" => Ok(desklab_core::distill::SamplingMode::IndividualMembers),
        "averaged-ensemble" => Ok(desklab_core::distill::SamplingMode::AveragedEnsemble),
        _ => bail!("unknown sampling mode '{s}' (individual-members | averaged-ensemble)"),
    }
}

pub fn parse_tier_axes(names: &[String]) -> Result<Vec<desklab_core::scalinglaw::TierAxis>> {
    names
        .iter()
        .map(|n| match n.as_str() {
            "members" | "k" => Ok(desklab_core::scalinglaw::TierAxis::Members),
            "params" | "n" => Ok(desklab_core::scalinglaw::TierAxis::Params),
            "tokens" | "d" => Ok(desklab_core::scalinglaw::TierAxis::Tokens),
            _ => bail!("unknown tier axis '{n}' (members | params | tokens)"),
        })
        .collect()
}
