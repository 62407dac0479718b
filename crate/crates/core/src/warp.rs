//! 2D appearance branch: multi-scale source features, occlusion-gated
//! recursive warping and the coarse image/mask generator.

use mtr_tensor::{ParamStore, Scalar, Session, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::motion::FlowPyramid;
use crate::nn::{Conv, ResBlock, UpBlock, LEAK};
use crate::sampling::{resize_bilinear, warp};

pub const GROUP_ENCODER: &str = "warp.encoder";
pub const GROUP_GENERATOR: &str = "warp.generator";

#[derive(Debug, Clone)]
pub struct WarpOutput<'t, T: Scalar> {
    pub z_app: Var<'t, T>,
    pub image: Var<'t, T>,
    pub mask: Var<'t, T>,
}

/// `Warp(z, f) * o + z_prev * (1 - o)`.
pub fn warp_fuse<'t, T: Scalar>(
    z: Var<'t, T>,
    flow: Var<'t, T>,
    occ: Var<'t, T>,
    z_prev: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (n, _, h, w) = z.dims4();
    if z_prev.shape() != z.shape() || occ.shape() != [n, 1, h, w] {
        return Err(Error::shape(
            "warp_fuse",
            format!("feature {:?}, occlusion {:?}, previous {:?}", z.shape(), occ.shape(), z_prev.shape()),
        ));
    }
    let warped = warp(z, flow)?;
    Ok(warped.mul_gate(occ) + z_prev.mul_gate(occ.one_minus()))
}

/// Fuses the source pyramid into one feature at the finest level.
///
/// The coarsest level has no predecessor: it is the plain warp
/// `Warp(z_1, f_1)`. Each finer level gates its own warp against the
/// previous fused feature resized to its resolution.
pub fn fuse_pyramid<'t, T: Scalar>(features: &[Var<'t, T>], pyr: &FlowPyramid<'t, T>) -> Result<Var<'t, T>> {
    if features.len() != pyr.flows.len() || features.is_empty() {
        return Err(Error::shape(
            "fuse_pyramid",
            format!("{} feature levels for {} flow levels", features.len(), pyr.flows.len()),
        ));
    }
    let mut fused = warp(features[0], pyr.flows[0])?;
    for ((&z, &f), &o) in features.iter().zip(&pyr.flows).zip(&pyr.occlusions).skip(1) {
        let (_, _, h, w) = z.dims4();
        let prev = resize_bilinear(fused, h, w)?;
        fused = warp_fuse(z, f, o, prev)?;
    }
    Ok(fused)
}

pub struct WarpBranch {
    stem: [Conv; 2],
    downs: Vec<Conv>,
    res: [ResBlock; 2],
    ups: Vec<UpBlock>,
    image_head: Conv,
    mask_head: Conv,
    in_res: usize,
}

impl WarpBranch {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.warp_channels;
        let stem = [
            Conv::new(store, "warp.stem0", GROUP_ENCODER, 3, c, 3, 1, rng),
            Conv::new(store, "warp.stem1", GROUP_ENCODER, c, c, 3, 1, rng),
        ];
        let downs = (1..cfg.flow_levels)
            .map(|i| Conv::new(store, &format!("warp.down{i}"), GROUP_ENCODER, c, c, 3, 2, rng))
            .collect();
        let res = [
            ResBlock::new(store, "warp.gen.res0", GROUP_GENERATOR, c, rng),
            ResBlock::new(store, "warp.gen.res1", GROUP_GENERATOR, c, rng),
        ];
        let n_up = (cfg.out_res() / cfg.in_res).trailing_zeros() as usize;
        let ups =
            (0..n_up).map(|i| UpBlock::new(store, &format!("warp.gen.up{i}"), GROUP_GENERATOR, c, c, rng)).collect();
        Self {
            stem,
            downs,
            res,
            ups,
            image_head: Conv::new(store, "warp.gen.image", GROUP_GENERATOR, c, 3, 1, 1, rng),
            mask_head: Conv::new(store, "warp.gen.mask", GROUP_GENERATOR, c, 1, 1, 1, rng),
            in_res: cfg.in_res,
        }
    }

    /// Source features at the pyramid resolutions, coarsest first.
    pub fn encode_source<'t, T: Scalar>(&self, s: &Session<'t, T>, src: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let (_, c, h, w) = src.dims4();
        if c != 3 || h != self.in_res || w != self.in_res {
            return Err(Error::shape(
                "encode_source",
                format!("expected [N, 3, {r}, {r}], got {:?}", src.shape(), r = self.in_res),
            ));
        }
        let mut x = self.stem[0].forward(s, src).leaky_relu(LEAK);
        x = self.stem[1].forward(s, x).leaky_relu(LEAK);
        let mut levels = vec![x];
        for d in &self.downs {
            x = d.forward(s, x).leaky_relu(LEAK);
            levels.push(x);
        }
        levels.reverse();
        Ok(levels)
    }

    /// Coarse image and mask from the fused feature.
    pub fn generate<'t, T: Scalar>(&self, s: &Session<'t, T>, z_app: Var<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
        let mut x = z_app;
        for r in &self.res {
            x = r.forward(s, x);
        }
        x = x.leaky_relu(LEAK);
        for u in &self.ups {
            x = u.forward(s, x);
        }
        (self.image_head.forward(s, x).sigmoid(), self.mask_head.forward(s, x).sigmoid())
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        s: &Session<'t, T>,
        src: Var<'t, T>,
        pyr: &FlowPyramid<'t, T>,
    ) -> Result<WarpOutput<'t, T>> {
        let features = self.encode_source(s, src)?;
        let z_app = fuse_pyramid(&features, pyr)?;
        let (image, mask) = self.generate(s, z_app);
        Ok(WarpOutput { z_app, image, mask })
    }
}
