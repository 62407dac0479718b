//! 2.5D geometry branch.
//!
//! A shared trunk encodes `[I_s, onehot(P_s)]`; two heads split it into an
//! appearance code and a geometry code. The appearance code is translated,
//! under `alpha`, into a 24-part neural texture atlas; the geometry code is
//! translated, under `rho`, into the driving DensePose `(U, V, S)`. Each
//! atlas part is sampled at its predicted UV and the samples are summed
//! weighted by the part scores (background channel excluded, no
//! renormalization). A single conv renders the coarse image.

use mtr_tensor::{ParamStore, Scalar, Session, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv, ModResBlock, UpBlock, LEAK};
use crate::parts::softmax_parts;
use crate::sampling::{bilinear_sample, resize_bilinear};
use crate::types::{NUM_PARTS, NUM_SCORE_CHANNELS, ONEHOT_CHANNELS};

pub const GROUP_ENCODER: &str = "texture.encoder";
pub const GROUP_APP: &str = "texture.app";
pub const GROUP_GEO: &str = "texture.geo";
pub const GROUP_RENDER: &str = "texture.render";

const TRUNK_DOWNS: usize = 3;
const TRANSLATION_BLOCKS: usize = 3;

/// Predicted driving DensePose.
#[derive(Debug, Clone)]
pub struct TranslatedIuv<'t, T: Scalar> {
    /// `[N, 24, H, W]`, sigmoid.
    pub u: Var<'t, T>,
    /// `[N, 24, H, W]`, sigmoid.
    pub v: Var<'t, T>,
    /// `[N, 25, H, W]`, softmax over channels.
    pub score: Var<'t, T>,
    /// Pre-softmax score logits.
    pub logits: Var<'t, T>,
}

#[derive(Debug, Clone)]
pub struct TextureOutput<'t, T: Scalar> {
    /// `[N, 24 * c, h_a, w_a]`; part `k` occupies channels `k*c .. (k+1)*c`.
    pub atlas: Var<'t, T>,
    pub iuv: TranslatedIuv<'t, T>,
    pub z_geo: Var<'t, T>,
    pub image: Var<'t, T>,
    pub mask: Var<'t, T>,
}

/// Samples part `k` of the atlas at `(U_k, V_k)` for every part.
///
/// `u` maps to the atlas width axis and `v` to its height axis; `[0, 1]`
/// spans first to last texel centre.
pub fn sample_atlas<'t, T: Scalar>(
    atlas: Var<'t, T>,
    u: Var<'t, T>,
    v: Var<'t, T>,
    channels: usize,
) -> Result<Vec<Var<'t, T>>> {
    let (n, ac, _, _) = atlas.dims4();
    let (un, uc, h, w) = u.dims4();
    if ac != NUM_PARTS * channels || un != n || uc != NUM_PARTS || v.shape() != u.shape() {
        return Err(Error::shape(
            "sample_atlas",
            format!("atlas {:?} with {channels} channels/part, u {:?}, v {:?}", atlas.shape(), u.shape(), v.shape()),
        ));
    }
    let gx = u.scale(2.0).shift(-1.0);
    let gy = v.scale(2.0).shift(-1.0);
    (0..NUM_PARTS)
        .map(|k| {
            let grid = Var::concat(&[gx.narrow(1, k, 1), gy.narrow(1, k, 1)], 1);
            debug_assert_eq!(grid.shape(), vec![n, 2, h, w]);
            bilinear_sample(atlas.narrow(1, k * channels, channels), grid)
        })
        .collect()
}

/// `sum_{k=1..24} S_k * R_k`; score channel 0 (background) is ignored.
pub fn fuse_parts<'t, T: Scalar>(parts: &[Var<'t, T>], score: Var<'t, T>) -> Result<Var<'t, T>> {
    let (n, sc, h, w) = score.dims4();
    if parts.len() != NUM_PARTS || sc != NUM_SCORE_CHANNELS {
        return Err(Error::shape(
            "fuse_parts",
            format!(
                "{} parts and score {:?}; need {NUM_PARTS} and {NUM_SCORE_CHANNELS} channels",
                parts.len(),
                score.shape()
            ),
        ));
    }
    let mut acc: Option<Var<'t, T>> = None;
    for (k, part) in parts.iter().enumerate() {
        let (pn, _, ph, pw) = part.dims4();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(
                "fuse_parts",
                format!("part {k} {:?} vs score {:?}", part.shape(), score.shape()),
            ));
        }
        let term = part.mul_gate(score.narrow(1, k + 1, 1));
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    Ok(acc.expect("24 parts"))
}

pub struct TextureBranch {
    trunk: Vec<Conv>,
    app_head: Conv,
    geo_head: Conv,
    t_app: Vec<ModResBlock>,
    atlas_out: Conv,
    t_geo: Vec<ModResBlock>,
    geo_ups: Vec<UpBlock>,
    geo_out: Conv,
    render_image: Conv,
    render_mask: Conv,
    atlas_channels: usize,
    atlas_res: usize,
    in_res: usize,
    out_res: usize,
    alpha_len: usize,
    rho_len: usize,
}

impl TextureBranch {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let t = cfg.texture_width;
        let widths = [t, 2 * t, 2 * t];
        let mut cin = 3 + ONEHOT_CHANNELS;
        let trunk = widths
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let c = Conv::new(store, &format!("texture.trunk{i}"), GROUP_ENCODER, cin, cout, 3, 2, rng);
                cin = cout;
                c
            })
            .collect();
        let (a, g, ca) = (cfg.app_channels, cfg.geo_channels, cfg.atlas_channels);
        Self {
            trunk,
            app_head: Conv::new(store, "texture.app_head", GROUP_APP, cin, a, 3, 1, rng),
            geo_head: Conv::new(store, "texture.geo_head", GROUP_GEO, cin, g, 3, 1, rng),
            t_app: (0..TRANSLATION_BLOCKS)
                .map(|i| ModResBlock::new(store, &format!("texture.t_app{i}"), GROUP_APP, a, cfg.alpha_len, rng))
                .collect(),
            atlas_out: Conv::new(store, "texture.atlas", GROUP_APP, a, NUM_PARTS * ca, 1, 1, rng),
            t_geo: (0..TRANSLATION_BLOCKS)
                .map(|i| ModResBlock::new(store, &format!("texture.t_geo{i}"), GROUP_GEO, g, cfg.rho_len, rng))
                .collect(),
            geo_ups: (0..TRUNK_DOWNS)
                .map(|i| UpBlock::new(store, &format!("texture.geo_up{i}"), GROUP_GEO, g, g, rng))
                .collect(),
            geo_out: Conv::new(store, "texture.iuv", GROUP_GEO, g, ONEHOT_CHANNELS, 3, 1, rng),
            render_image: Conv::new(store, "texture.render_image", GROUP_RENDER, ca, 3, 3, 1, rng),
            render_mask: Conv::new(store, "texture.render_mask", GROUP_RENDER, ca, 1, 3, 1, rng),
            atlas_channels: ca,
            atlas_res: cfg.atlas_res,
            in_res: cfg.in_res,
            out_res: cfg.out_res(),
            alpha_len: cfg.alpha_len,
            rho_len: cfg.rho_len,
        }
    }

    pub fn atlas_channels(&self) -> usize {
        self.atlas_channels
    }

    /// Shared trunk followed by the separate appearance and geometry heads.
    pub fn encode_shared<'t, T: Scalar>(
        &self,
        s: &Session<'t, T>,
        src: Var<'t, T>,
        src_onehot: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let (n, c, h, w) = src.dims4();
        if c != 3 || (h, w) != (self.in_res, self.in_res) || src_onehot.shape() != [n, ONEHOT_CHANNELS, h, w] {
            return Err(Error::shape(
                "encode_shared",
                format!(
                    "image {:?} and IUV {:?} at {r}x{r} expected",
                    src.shape(),
                    src_onehot.shape(),
                    r = self.in_res
                ),
            ));
        }
        let mut x = Var::concat(&[src, src_onehot], 1);
        for conv in &self.trunk {
            x = conv.forward(s, x).leaky_relu(LEAK);
        }
        Ok((self.app_head.forward(s, x), self.geo_head.forward(s, x)))
    }

    pub fn translate_atlas<'t, T: Scalar>(
        &self,
        s: &Session<'t, T>,
        app_code: Var<'t, T>,
        alpha: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let n = app_code.dims4().0;
        if alpha.shape() != [n, self.alpha_len] {
            return Err(Error::Contract(format!("alpha must be [{n}, {}], got {:?}", self.alpha_len, alpha.shape())));
        }
        let mut x = app_code;
        for b in &self.t_app {
            x = b.forward(s, x, alpha);
        }
        let x = resize_bilinear(x.leaky_relu(LEAK), self.atlas_res, self.atlas_res)?;
        Ok(self.atlas_out.forward(s, x))
    }

    pub fn translate_iuv<'t, T: Scalar>(
        &self,
        s: &Session<'t, T>,
        geo_code: Var<'t, T>,
        rho: Var<'t, T>,
    ) -> Result<TranslatedIuv<'t, T>> {
        let n = geo_code.dims4().0;
        if rho.shape() != [n, self.rho_len] {
            return Err(Error::Contract(format!("rho must be [{n}, {}], got {:?}", self.rho_len, rho.shape())));
        }
        let mut x = geo_code;
        for b in &self.t_geo {
            x = b.forward(s, x, rho);
        }
        x = x.leaky_relu(LEAK);
        for u in &self.geo_ups {
            x = u.forward(s, x);
        }
        let out = self.geo_out.forward(s, x);
        let logits = out.narrow(1, 2 * NUM_PARTS, NUM_SCORE_CHANNELS);
        Ok(TranslatedIuv {
            u: out.narrow(1, 0, NUM_PARTS).sigmoid(),
            v: out.narrow(1, NUM_PARTS, NUM_PARTS).sigmoid(),
            score: softmax_parts(logits)?,
            logits,
        })
    }

    /// Coarse image and mask at the output resolution.
    pub fn render_geo<'t, T: Scalar>(&self, s: &Session<'t, T>, z_geo: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let z = resize_bilinear(z_geo, self.out_res, self.out_res)?;
        Ok((self.render_image.forward(s, z).sigmoid(), self.render_mask.forward(s, z).sigmoid()))
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        s: &Session<'t, T>,
        src: Var<'t, T>,
        src_onehot: Var<'t, T>,
        alpha: Var<'t, T>,
        rho: Var<'t, T>,
    ) -> Result<TextureOutput<'t, T>> {
        let (app, geo) = self.encode_shared(s, src, src_onehot)?;
        let atlas = self.translate_atlas(s, app, alpha)?;
        let iuv = self.translate_iuv(s, geo, rho)?;
        let parts = sample_atlas(atlas, iuv.u, iuv.v, self.atlas_channels)?;
        let z_geo = fuse_parts(&parts, iuv.score)?;
        let (image, mask) = self.render_geo(s, z_geo)?;
        Ok(TextureOutput { atlas, iuv, z_geo, image, mask })
    }
}
