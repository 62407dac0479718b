//! Run configuration.
//!
//! Every key has a default. Files use TOML; dotted keys (`loss.lambda_cor =
//! 5.0`) and tables (`[loss]`) are equivalent. Unknown keys are rejected.
//! Overrides are merged in order: defaults, then flag overrides, then the
//! config file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Working resolution of both branches.
    pub in_res: usize,
    /// Adds the blender's 2x super-resolution stage.
    pub super_resolution: bool,
    /// Flow pyramid levels, finest at `in_res`, each coarser by 2.
    pub flow_levels: usize,
    pub alpha_len: usize,
    pub rho_len: usize,
    pub motion_width: usize,
    pub warp_channels: usize,
    pub texture_width: usize,
    pub app_channels: usize,
    pub geo_channels: usize,
    pub atlas_channels: usize,
    pub atlas_res: usize,
    pub blend_width: usize,
    pub disc_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_res: 128,
            super_resolution: true,
            flow_levels: 3,
            alpha_len: 384,
            rho_len: 256,
            motion_width: 16,
            warp_channels: 32,
            texture_width: 32,
            app_channels: 32,
            geo_channels: 16,
            atlas_channels: 16,
            atlas_res: 32,
            blend_width: 32,
            disc_width: 16,
        }
    }
}

impl ModelConfig {
    pub fn out_res(&self) -> usize {
        if self.super_resolution {
            2 * self.in_res
        } else {
            self.in_res
        }
    }

    /// Flow pyramid resolutions, coarsest first.
    pub fn flow_resolutions(&self) -> Vec<usize> {
        (0..self.flow_levels).rev().map(|l| self.in_res >> l).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.in_res < 32 || !self.in_res.is_multiple_of(32) {
            return err(format!("model.in_res must be a positive multiple of 32, got {}", self.in_res));
        }
        if !(1..=5).contains(&self.flow_levels) {
            return err(format!("model.flow_levels must be in 1..=5, got {}", self.flow_levels));
        }
        let widths = [
            ("alpha_len", self.alpha_len),
            ("rho_len", self.rho_len),
            ("motion_width", self.motion_width),
            ("warp_channels", self.warp_channels),
            ("texture_width", self.texture_width),
            ("app_channels", self.app_channels),
            ("geo_channels", self.geo_channels),
            ("atlas_channels", self.atlas_channels),
            ("atlas_res", self.atlas_res),
            ("blend_width", self.blend_width),
            ("disc_width", self.disc_width),
        ];
        for (name, v) in widths {
            if v == 0 {
                return err(format!("model.{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_cor: f64,
    pub lambda_reg: f64,
    pub lambda_tv: f64,
    pub lambda_con: f64,
    pub lambda_uv: f64,
    pub lambda_ce: f64,
    pub lambda_p: f64,
    pub lambda_1: f64,
    pub lambda_mask: f64,
    pub lambda_adv: f64,
    /// Image pyramid depth of the reconstruction loss.
    pub n_scales: usize,
    /// Blocks the gradient through the predicted score in the UV term.
    pub detach_uv_mask: bool,
    /// Disables the perceptual correctness term (end-to-end variant).
    pub correctness: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_cor: 5.0,
            lambda_reg: 0.01,
            lambda_tv: 1.0,
            lambda_con: 5.0,
            lambda_uv: 5.0,
            lambda_ce: 1.0,
            lambda_p: 10.0,
            lambda_1: 1.0,
            lambda_mask: 1.0,
            lambda_adv: 1.0,
            n_scales: 3,
            detach_uv_mask: false,
            correctness: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_cor", self.lambda_cor),
            ("lambda_reg", self.lambda_reg),
            ("lambda_tv", self.lambda_tv),
            ("lambda_con", self.lambda_con),
            ("lambda_uv", self.lambda_uv),
            ("lambda_ce", self.lambda_ce),
            ("lambda_p", self.lambda_p),
            ("lambda_1", self.lambda_1),
            ("lambda_mask", self.lambda_mask),
            ("lambda_adv", self.lambda_adv),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss.{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.n_scales == 0 {
            return Err(Error::Config("loss.n_scales must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Stage names to run, in order: any of `texture`, `warp`, `full`, `blend`.
    pub stages: Vec<String>,
    /// Multiplies the base stage lengths 100k/100k/200k/200k.
    pub iter_scale: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    /// Frames held fixed for start/end loss probes of each stage.
    pub probe_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stages: ["texture", "warp", "full", "blend"].map(String::from).to_vec(),
            iter_scale: 1.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 8,
            probe_size: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        if !(self.iter_scale > 0.0 && self.iter_scale.is_finite()) {
            return Err(Error::Config(format!("train.iter_scale must be > 0, got {}", self.iter_scale)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("train.beta1 and train.beta2 must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.probe_size == 0 {
            return Err(Error::Config("train.batch_size and train.probe_size must be >= 1".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("train.stages must name at least one stage".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Small-scale preset: 64x64 without super-resolution, narrow layers,
    /// 1/1000 of the stage lengths.
    pub fn desk() -> Self {
        let mut c = Self {
            model: ModelConfig {
                in_res: 64,
                super_resolution: false,
                warp_channels: 16,
                texture_width: 16,
                app_channels: 16,
                geo_channels: 16,
                blend_width: 16,
                disc_width: 8,
                ..ModelConfig::default()
            },
            ..Self::default()
        };
        c.train.iter_scale = 0.001;
        c.train.batch_size = 2;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }

    /// Merges a TOML document over this configuration.
    pub fn merge_toml(&self, text: &str) -> Result<Self> {
        let overlay: toml::Table = text.parse().map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        self.merge_table(overlay)
    }

    /// Applies a single `dotted.key=value` override; the value is parsed as a
    /// TOML value, falling back to a bare string.
    pub fn set(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let doc = format!("{} = {}", key.trim(), raw.trim());
        match self.merge_toml(&doc) {
            Err(Error::Config(m)) if m.starts_with("invalid TOML") => {
                let quoted = format!("{} = {:?}", key.trim(), raw.trim());
                self.merge_toml(&quoted)
            }
            other => other,
        }
    }

    fn merge_table(&self, overlay: toml::Table) -> Result<Self> {
        let mut base = toml::Table::try_from(self).expect("config serializes");
        merge(&mut base, overlay);
        let merged: Self = toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| {
            Error::Config(e.to_string().lines().filter(|l| !l.trim().is_empty()).collect::<Vec<_>>().join(" "))
        })?;
        merged.validate()?;
        Ok(merged)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
