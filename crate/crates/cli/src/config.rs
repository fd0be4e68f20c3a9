//! Run configuration file (TOML). Every key is optional.

use std::path::{Path, PathBuf};

use aeloc_core::eval::{SystemConfig, Variant};
use aeloc_core::hmm::LoopGrammar;
use aeloc_core::joint::PriorWeight;
use aeloc_core::synth::{DatasetConfig, Placement};
use aeloc_core::{io, Error, Result, SceneConfig};
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Scene file; the built-in reference scene when absent.
    pub scene: Option<PathBuf>,
    pub seed: Option<u64>,
    pub variant: Option<String>,
    pub sources: Option<usize>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub sessions: Option<usize>,
    pub instances_per_class: Option<usize>,
    pub snr_single_db: Option<f64>,
    pub snr_overlap_db: Option<f64>,
    /// `uniform` or `clustered`.
    pub placement: Option<String>,
    pub two_source: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub states: Option<usize>,
    pub components: Option<usize>,
    pub max_iter: Option<usize>,
    pub insertion_penalty: Option<f64>,
    /// `once` or `per-array`.
    pub prior_weight: Option<String>,
    pub mono_channel: Option<usize>,
    pub min_overlap: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Scene named by the config (relative to `base`) or the reference scene.
    pub fn scene(&self, base: &Path) -> Result<SceneConfig> {
        match &self.scene {
            Some(p) => SceneConfig::load(&base.join(p)),
            None => Ok(SceneConfig::reference()),
        }
    }

    pub fn variant(&self, flag: Option<&str>) -> Result<Variant> {
        flag.or(self.variant.as_deref()).unwrap_or("proposed-flat").parse()
    }

    pub fn sources(&self, flag: Option<usize>) -> Result<usize> {
        match flag.or(self.sources).unwrap_or(1) {
            n @ (1 | 2) => Ok(n),
            n => Err(Error::Config(format!("--sources must be 1 or 2, got {n}"))),
        }
    }

    pub fn dataset(&self, seed: u64) -> Result<DatasetConfig> {
        let d = &self.dataset;
        let mut cfg = DatasetConfig {
            seed,
            ..Default::default()
        };
        if let Some(v) = d.sessions {
            cfg.n_sessions = v;
        }
        if let Some(v) = d.instances_per_class {
            cfg.instances_per_class = v;
        }
        if let Some(v) = d.snr_single_db {
            cfg.snr_single_db = v;
        }
        if let Some(v) = d.snr_overlap_db {
            cfg.snr_overlap_db = v;
        }
        if let Some(v) = d.two_source {
            cfg.two_source = v;
        }
        match d.placement.as_deref() {
            None | Some("clustered") => {}
            Some("uniform") => cfg.placement = Placement::Uniform,
            Some(p) => return Err(Error::Config(format!("unknown placement `{p}`"))),
        }
        Ok(cfg)
    }

    pub fn system(&self, scene: &SceneConfig, seed: u64) -> Result<SystemConfig<f64>> {
        let m = &self.model;
        let mut cfg = SystemConfig::for_scene(scene);
        cfg.train.seed = seed;
        if let Some(v) = m.states {
            cfg.train.n_states = v;
        }
        if let Some(v) = m.components {
            cfg.train.n_components = v;
        }
        if let Some(v) = m.max_iter {
            cfg.train.max_iter = v;
        }
        if let Some(v) = m.insertion_penalty {
            cfg.joint.grammar = LoopGrammar { insertion_penalty: v };
        }
        cfg.joint.prior_weight = match m.prior_weight.as_deref() {
            None | Some("once") => PriorWeight::Once,
            Some("per-array") => PriorWeight::PerArray,
            Some(p) => return Err(Error::Config(format!("unknown prior weight `{p}`"))),
        };
        if let Some(v) = m.mono_channel {
            cfg.mono_channel = v;
        }
        if let Some(v) = m.min_overlap {
            cfg.min_overlap = v;
        }
        Ok(cfg)
    }
}
