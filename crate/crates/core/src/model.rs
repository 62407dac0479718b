//! Full generator, the patch discriminator and batch assembly.

use mtr_tensor::{ParamStore, Scalar, Session, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blender::Blender;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::motion::{motion_input, FlowPyramid, MotionCode, MotionNet};
use crate::nn::{Conv, ResBlock, LEAK};
use crate::texture::{TextureBranch, TextureOutput};
use crate::types::{iuv_to_onehot, Image, IuvMap, SampleRecord};
use crate::warp::{WarpBranch, WarpOutput};

/// Which parts of the generator to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branches {
    pub warp: bool,
    pub texture: bool,
    pub blend: bool,
}

impl Branches {
    pub const ALL: Branches = Branches { warp: true, texture: true, blend: true };
}

/// Network inputs of one batch, already at the working resolution.
#[derive(Debug, Clone)]
pub struct GenInputs<'t, T: Scalar> {
    /// `[N, 3, R, R]`
    pub src_img: Var<'t, T>,
    /// `[N, 73, R, R]`
    pub src_onehot: Var<'t, T>,
    /// `[N, 73, R, R]`
    pub drv_onehot: Var<'t, T>,
}

#[derive(Debug, Clone)]
pub struct GenOutputs<'t, T: Scalar> {
    pub code: MotionCode<'t, T>,
    pub pyramid: Option<FlowPyramid<'t, T>>,
    pub warp: Option<WarpOutput<'t, T>>,
    pub texture: Option<TextureOutput<'t, T>>,
    /// Final `(image, mask)`.
    pub blend: Option<(Var<'t, T>, Var<'t, T>)>,
}

pub struct Generator {
    pub cfg: ModelConfig,
    pub motion: MotionNet,
    pub warp: WarpBranch,
    pub texture: TextureBranch,
    pub blender: Blender,
}

impl Generator {
    /// Builds the generator and registers its parameters, seeded.
    pub fn build<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let motion = MotionNet::new(&mut store, cfg, &mut rng);
        let warp = WarpBranch::new(&mut store, cfg, &mut rng);
        let texture = TextureBranch::new(&mut store, cfg, &mut rng);
        let blender = Blender::new(&mut store, cfg, &mut rng);
        Ok((Self { cfg: cfg.clone(), motion, warp, texture, blender }, store))
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        s: &Session<'t, T>,
        inp: &GenInputs<'t, T>,
        branches: Branches,
    ) -> Result<GenOutputs<'t, T>> {
        let need_warp = branches.warp || branches.blend;
        let need_texture = branches.texture || branches.blend;
        let code = self.motion.encode(s, motion_input(inp.src_img, inp.src_onehot, inp.drv_onehot)?)?;
        let pyramid = if need_warp { Some(self.motion.decode(s, &code)?) } else { None };
        let warp = match &pyramid {
            Some(p) => Some(self.warp.forward(s, inp.src_img, p)?),
            None => None,
        };
        let texture = if need_texture {
            Some(self.texture.forward(s, inp.src_img, inp.src_onehot, code.alpha, code.rho)?)
        } else {
            None
        };
        let blend = match (&warp, &texture, branches.blend) {
            (Some(w), Some(t), true) => Some(self.blender.blend(s, t.z_geo, w.z_app, w.image)?),
            _ => None,
        };
        Ok(GenOutputs { code, pyramid, warp, texture, blend })
    }
}

/// Residual patch discriminator: scores `[N, 1, H/8, W/8]`.
pub struct Discriminator {
    stem: Conv,
    downs: Vec<(Conv, ResBlock)>,
    head: Conv,
}

pub const GROUP_DISC: &str = "disc";

impl Discriminator {
    pub fn build<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD15C);
        let d = cfg.disc_width;
        let stem = Conv::new(&mut store, "disc.stem", GROUP_DISC, 3, d, 3, 1, &mut rng);
        let widths = [d, 2 * d, 4 * d];
        let mut cin = d;
        let downs = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv::new(&mut store, &format!("disc.down{i}"), GROUP_DISC, cin, c, 3, 2, &mut rng);
                let res = ResBlock::new(&mut store, &format!("disc.res{i}"), GROUP_DISC, c, &mut rng);
                cin = c;
                (conv, res)
            })
            .collect();
        let head = Conv::new(&mut store, "disc.head", GROUP_DISC, cin, 1, 1, 1, &mut rng);
        Ok((Self { stem, downs, head }, store))
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, T>, img: Var<'t, T>) -> Var<'t, T> {
        let mut x = self.stem.forward(s, img).leaky_relu(LEAK);
        for (conv, res) in &self.downs {
            x = res.forward(s, conv.forward(s, x).leaky_relu(LEAK));
        }
        self.head.forward(s, x.leaky_relu(LEAK))
    }
}

/// Host-side batch at model resolutions.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub src_img: Tensor<T>,
    pub src_onehot: Tensor<T>,
    pub drv_onehot: Tensor<T>,
    /// Driving part labels at the working resolution, `N * R * R`.
    pub drv_labels: Vec<u8>,
    /// `[N, 3, out, out]`
    pub target: Tensor<T>,
    /// `[N, 1, out, out]`
    pub target_mask: Tensor<T>,
}

pub(crate) fn image_at(img: &Image, res: usize, what: &str) -> Result<Tensor<f32>> {
    if img.height() != img.width() || !img.height().is_multiple_of(res) {
        return Err(Error::Data(format!("{what} is {}x{}; cannot resample to {res}", img.height(), img.width())));
    }
    Ok(img.downsample(img.height() / res)?.into_tensor())
}

pub(crate) fn iuv_at(iuv: &IuvMap, res: usize, what: &str) -> Result<IuvMap> {
    if iuv.height() != iuv.width() || !iuv.height().is_multiple_of(res) {
        return Err(Error::Data(format!("{what} is {}x{}; cannot resample to {res}", iuv.height(), iuv.width())));
    }
    iuv.downsample(iuv.height() / res)
}

impl<T: Scalar> Batch<T> {
    /// Stacks records, resampling frames to the working and output sizes.
    pub fn from_records(records: &[&SampleRecord], cfg: &ModelConfig) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let (r, out) = (cfg.in_res, cfg.out_res());
        let mut src_img = Vec::new();
        let mut src_oh = Vec::new();
        let mut drv_oh = Vec::new();
        let mut labels = Vec::new();
        let mut target = Vec::new();
        let mut mask = Vec::new();
        for rec in records {
            src_img.push(image_at(&rec.source_image, r, "source image")?);
            src_oh.push(iuv_to_onehot(&iuv_at(&rec.source_iuv, r, "source IUV")?).to_tensor());
            let drv = iuv_at(&rec.driving_iuv, r, "driving IUV")?;
            drv_oh.push(iuv_to_onehot(&drv).to_tensor());
            labels.extend_from_slice(drv.parts());
            target.push(image_at(&rec.target_image, out, "target image")?);
            let m = &rec.fg_mask;
            if m.height() != m.width() || m.height() % out != 0 {
                return Err(Error::Data(format!("mask is {}x{}; cannot resample to {out}", m.height(), m.width())));
            }
            mask.push(m.downsample(m.height() / out)?.tensor().clone());
        }
        let stack = |v: &[Tensor<f32>]| -> Result<Tensor<T>> {
            let refs: Vec<&Tensor<f32>> = v.iter().collect();
            Ok(Tensor::stack(&refs)?.cast())
        };
        Ok(Self {
            src_img: stack(&src_img)?,
            src_onehot: stack(&src_oh)?,
            drv_onehot: stack(&drv_oh)?,
            drv_labels: labels,
            target: stack(&target)?,
            target_mask: stack(&mask)?,
        })
    }

    pub fn len(&self) -> usize {
        self.src_img.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs<'t>(&self, s: &Session<'t, T>) -> GenInputs<'t, T> {
        GenInputs {
            src_img: s.input(self.src_img.clone()),
            src_onehot: s.input(self.src_onehot.clone()),
            drv_onehot: s.input(self.drv_onehot.clone()),
        }
    }
}
