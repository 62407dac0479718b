//! Multi-stage training schedule.

use mtr_tensor::{ParamId, ParamStore, Scalar};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Branches;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKind {
    /// Texture branch together with the motion encoder.
    Texture,
    /// MotionNet and the warping branch.
    Warp,
    /// Every generator module plus the discriminator.
    Full,
    /// BlenderNet (and its super-resolution block) plus the discriminator.
    Blend,
}

/// Loss terms a stage can optimise; names appear in the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    IuvUv,
    IuvCe,
    RecGeo,
    MaskGeo,
    MotCor,
    MotReg,
    MotTv,
    MotCon,
    RecApp,
    MaskApp,
    RecD,
    MaskD,
    Adv,
}

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::IuvUv => "iuv_uv",
            Term::IuvCe => "iuv_ce",
            Term::RecGeo => "rec_geo",
            Term::MaskGeo => "mask_geo",
            Term::MotCor => "mot_cor",
            Term::MotReg => "mot_reg",
            Term::MotTv => "mot_tv",
            Term::MotCon => "mot_con",
            Term::RecApp => "rec_app",
            Term::MaskApp => "mask_app",
            Term::RecD => "rec_d",
            Term::MaskD => "mask_d",
            Term::Adv => "adv",
        }
    }

    pub fn is_reconstruction(self) -> bool {
        matches!(self, Term::RecGeo | Term::RecApp | Term::RecD)
    }
}

const TEXTURE_TERMS: &[Term] = &[Term::IuvUv, Term::IuvCe, Term::RecGeo, Term::MaskGeo];
const WARP_TERMS: &[Term] = &[Term::MotCor, Term::MotReg, Term::MotTv, Term::MotCon, Term::RecApp, Term::MaskApp];
const FULL_TERMS: &[Term] = &[
    Term::IuvUv,
    Term::IuvCe,
    Term::RecGeo,
    Term::MaskGeo,
    Term::MotCor,
    Term::MotReg,
    Term::MotTv,
    Term::MotCon,
    Term::RecApp,
    Term::MaskApp,
    Term::RecD,
    Term::MaskD,
    Term::Adv,
];
const BLEND_TERMS: &[Term] = &[Term::RecD, Term::MaskD, Term::Adv];

impl StageKind {
    pub const ALL: [StageKind; 4] = [StageKind::Texture, StageKind::Warp, StageKind::Full, StageKind::Blend];

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown stage {name:?}; expected texture, warp, full or blend")))
    }

    pub fn name(self) -> &'static str {
        match self {
            StageKind::Texture => "texture",
            StageKind::Warp => "warp",
            StageKind::Full => "full",
            StageKind::Blend => "blend",
        }
    }

    pub fn base_iterations(self) -> usize {
        match self {
            StageKind::Texture | StageKind::Warp => 100_000,
            StageKind::Full | StageKind::Blend => 200_000,
        }
    }

    /// Parameter-group prefixes updated in this stage.
    pub fn trainable_groups(self) -> &'static [&'static str] {
        match self {
            StageKind::Texture => &["texture", "motion.encoder"],
            StageKind::Warp => &["motion", "warp"],
            StageKind::Full => &["motion", "warp", "texture", "blender", "disc"],
            StageKind::Blend => &["blender", "disc"],
        }
    }

    pub fn adversarial(self) -> bool {
        matches!(self, StageKind::Full | StageKind::Blend)
    }

    pub fn branches(self) -> Branches {
        match self {
            StageKind::Texture => Branches { warp: false, texture: true, blend: false },
            StageKind::Warp => Branches { warp: true, texture: false, blend: false },
            StageKind::Full | StageKind::Blend => Branches::ALL,
        }
    }

    pub fn terms(self) -> &'static [Term] {
        match self {
            StageKind::Texture => TEXTURE_TERMS,
            StageKind::Warp => WARP_TERMS,
            StageKind::Full => FULL_TERMS,
            StageKind::Blend => BLEND_TERMS,
        }
    }
}

fn in_prefix(group: &str, prefix: &str) -> bool {
    group == prefix || (group.starts_with(prefix) && group.as_bytes().get(prefix.len()) == Some(&b'.'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub kind: StageKind,
    pub iterations: usize,
}

impl Stage {
    pub fn is_trainable_group(&self, group: &str) -> bool {
        self.kind.trainable_groups().iter().any(|p| in_prefix(group, p))
    }

    /// Splits a store into `(trainable, frozen)`; the sets are disjoint and
    /// cover every parameter.
    pub fn partition<T: Scalar>(&self, store: &ParamStore<T>) -> (Vec<ParamId>, Vec<ParamId>) {
        store.ids().partition(|&id| self.is_trainable_group(store.group(id)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSchedule {
    pub stages: Vec<Stage>,
}

impl StageSchedule {
    /// Stages named in the config, each `round(base * iter_scale)` long
    /// (at least one iteration).
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let stages = cfg
            .stages
            .iter()
            .map(|name| {
                let kind = StageKind::parse(name)?;
                let iterations = ((kind.base_iterations() as f64 * cfg.iter_scale).round() as usize).max(1);
                Ok(Stage { kind, iterations })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stages })
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }
}
