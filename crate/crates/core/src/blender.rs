//! BlenderNet: fuses `[z_geo, z_app, coarse_app]` into the final frame and
//! mask, optionally through a 2x super-resolution stage.

use mtr_tensor::{ParamStore, Scalar, Session, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv, ResBlock, UpBlock, LEAK};
use crate::sampling::resize_bilinear;

pub const GROUP_TRUNK: &str = "blender.trunk";
pub const GROUP_SR: &str = "blender.sr";

pub struct Blender {
    input: Conv,
    res: [ResBlock; 2],
    sr: Option<UpBlock>,
    image_head: Conv,
    mask_head: Conv,
    in_res: usize,
    out_res: usize,
}

impl Blender {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let b = cfg.blend_width;
        let cin = cfg.atlas_channels + cfg.warp_channels + 3;
        Self {
            input: Conv::new(store, "blender.input", GROUP_TRUNK, cin, b, 3, 1, rng),
            res: [
                ResBlock::new(store, "blender.res0", GROUP_TRUNK, b, rng),
                ResBlock::new(store, "blender.res1", GROUP_TRUNK, b, rng),
            ],
            sr: cfg.super_resolution.then(|| UpBlock::new(store, "blender.sr", GROUP_SR, b, b, rng)),
            image_head: Conv::new(store, "blender.image", GROUP_TRUNK, b, 3, 1, 1, rng),
            mask_head: Conv::new(store, "blender.mask", GROUP_TRUNK, b, 1, 1, 1, rng),
            in_res: cfg.in_res,
            out_res: cfg.out_res(),
        }
    }

    /// Final image and mask. Features are resampled to the working
    /// resolution and `coarse_app` is average-pooled to it before the
    /// channel concatenation `[z_geo, z_app, coarse_app]`.
    pub fn blend<'t, T: Scalar>(
        &self,
        s: &Session<'t, T>,
        z_geo: Var<'t, T>,
        z_app: Var<'t, T>,
        coarse_app: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let r = self.in_res;
        let (n, c, h, w) = coarse_app.dims4();
        if c != 3 || h != w || h % r != 0 || z_geo.dims4().0 != n || z_app.dims4().0 != n {
            return Err(Error::shape(
                "blend",
                format!(
                    "cannot align z_geo {:?}, z_app {:?}, coarse {:?}",
                    z_geo.shape(),
                    z_app.shape(),
                    coarse_app.shape()
                ),
            ));
        }
        let coarse = if h == r { coarse_app } else { coarse_app.avg_pool(h / r) };
        let x = Var::concat(&[resize_bilinear(z_geo, r, r)?, resize_bilinear(z_app, r, r)?, coarse], 1);
        if x.dims4().1 != self.input.cin {
            return Err(Error::shape("blend", format!("{} input channels, expected {}", x.dims4().1, self.input.cin)));
        }
        let mut x = self.input.forward(s, x).leaky_relu(LEAK);
        for b in &self.res {
            x = b.forward(s, x);
        }
        x = x.leaky_relu(LEAK);
        if let Some(sr) = &self.sr {
            x = sr.forward(s, x);
        }
        debug_assert_eq!(x.dims4().2, self.out_res);
        Ok((self.image_head.forward(s, x).sigmoid(), self.mask_head.forward(s, x).sigmoid()))
    }
}
