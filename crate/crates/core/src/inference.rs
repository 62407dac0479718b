//! Inference: animating one source frame with a sequence of driving IUVs.

use std::path::Path;

use mtr_tensor::{Session, Tape, Tensor};

use crate::error::{Error, Result};
use crate::model::{image_at, iuv_at, Branches, GenInputs};
use crate::trainer::Models;
use crate::types::{iuv_to_onehot, Image, IuvMap, Mask};

/// Frames evaluated per forward pass.
const CHUNK: usize = 8;

pub struct Animator {
    models: Models,
}

impl Animator {
    pub fn new(models: Models) -> Self {
        Self { models }
    }

    pub fn from_checkpoint(dir: &Path) -> Result<Self> {
        Ok(Self::new(Models::from_checkpoint(dir)?))
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    /// One output frame and mask per driving IUV, in order.
    pub fn animate(&self, src_img: &Image, src_iuv: &IuvMap, driving: &[IuvMap]) -> Result<Vec<(Image, Mask)>> {
        let cfg = &self.models.cfg.model;
        let r = cfg.in_res;
        if src_img.height() != src_iuv.height() || src_img.width() != src_iuv.width() {
            return Err(Error::Data("source image and IUV differ in size".into()));
        }
        let img = image_at(src_img, r, "source image")?;
        let src_oh = iuv_to_onehot(&iuv_at(src_iuv, r, "source IUV")?).to_tensor();
        let mut out = Vec::with_capacity(driving.len());
        for chunk in driving.chunks(CHUNK) {
            let n = chunk.len();
            let drv: Vec<Tensor<f32>> = chunk
                .iter()
                .map(|d| Ok(iuv_to_onehot(&iuv_at(d, r, "driving IUV")?).to_tensor()))
                .collect::<Result<_>>()?;
            let repeat = |t: &Tensor<f32>| Tensor::stack(&vec![t; n]);
            let tape = Tape::new();
            let s = Session::frozen(&tape, &self.models.gen_store);
            let inp = GenInputs {
                src_img: s.input(repeat(&img)?),
                src_onehot: s.input(repeat(&src_oh)?),
                drv_onehot: s.input(Tensor::stack(&drv.iter().collect::<Vec<_>>())?),
            };
            let res = self.models.gen.forward(&s, &inp, Branches::ALL)?;
            let (image, mask) = res.blend.ok_or_else(|| Error::Contract("generator produced no final frame".into()))?;
            let (image, mask) = (image.value(), mask.value());
            for i in 0..n {
                out.push((Image::from_clamped(image.batch_item(i))?, Mask::new(mask.batch_item(i))?));
            }
        }
        Ok(out)
    }
}
