//! MotionNet: one encoder shared by both branches, emitting the translation
//! signals `alpha`, `rho`, and a flow decoder emitting the flow/occlusion
//! pyramid.
//!
//! The input is the channel concatenation `[onehot(P_s), onehot(P_d), I_s]`
//! (149 channels). The encoder halves the resolution five times; the decoder
//! climbs back to the working resolution with skip connections and predicts,
//! at each pyramid scale, a residual on top of the upsampled coarser flow.
//! Flow heads start at zero so the untrained network predicts the identity
//! warp.

use mtr_tensor::{ParamStore, Scalar, Session, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv, Linear, LEAK};
use crate::sampling::upsample_flow;
use crate::types::ONEHOT_CHANNELS;

pub const MOTION_INPUT_CHANNELS: usize = 2 * ONEHOT_CHANNELS + 3;
const ENCODER_BLOCKS: usize = 5;
const SKIP0_CHANNELS: usize = 8;

pub const GROUP_ENCODER: &str = "motion.encoder";
pub const GROUP_DECODER: &str = "motion.decoder";

/// Flow/occlusion pyramid, coarsest level first.
#[derive(Debug, Clone)]
pub struct FlowPyramid<'t, T: Scalar> {
    pub flows: Vec<Var<'t, T>>,
    pub occlusions: Vec<Var<'t, T>>,
}

#[derive(Debug, Clone)]
pub struct MotionCode<'t, T: Scalar> {
    pub alpha: Var<'t, T>,
    pub rho: Var<'t, T>,
    features: Vec<Var<'t, T>>,
    input: Var<'t, T>,
}

struct DecoderStage {
    conv: Conv,
    heads: Option<(Conv, Conv)>,
}

pub struct MotionNet {
    encoder: Vec<Conv>,
    alpha: Linear,
    rho: Linear,
    skip0: Conv,
    decoder: Vec<DecoderStage>,
    flow_levels: usize,
}

/// Assembles `[onehot(P_s), onehot(P_d), I_s]` along channels.
pub fn motion_input<'t, T: Scalar>(
    src_img: Var<'t, T>,
    src_onehot: Var<'t, T>,
    drv_onehot: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (n, c, h, w) = src_img.dims4();
    if c != 3 || src_onehot.shape() != [n, ONEHOT_CHANNELS, h, w] || drv_onehot.shape() != [n, ONEHOT_CHANNELS, h, w] {
        return Err(Error::shape(
            "motion_input",
            format!(
                "image {:?}, source IUV {:?} and driving IUV {:?} are not aligned",
                src_img.shape(),
                src_onehot.shape(),
                drv_onehot.shape()
            ),
        ));
    }
    Ok(Var::concat(&[src_onehot, drv_onehot, src_img], 1))
}

impl MotionNet {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let w = cfg.motion_width;
        let widths = [w, 2 * w, 4 * w, 4 * w, 4 * w];
        let mut cin = MOTION_INPUT_CHANNELS;
        let encoder = widths
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let c = Conv::new(store, &format!("motion.enc{i}"), GROUP_ENCODER, cin, cout, 3, 2, rng);
                cin = cout;
                c
            })
            .collect();
        let bottleneck = widths[ENCODER_BLOCKS - 1];
        let alpha = Linear::new(store, "motion.alpha", GROUP_ENCODER, bottleneck, cfg.alpha_len, 1.0, rng);
        let rho = Linear::new(store, "motion.rho", GROUP_ENCODER, bottleneck, cfg.rho_len, 1.0, rng);
        let skip0 = Conv::new(store, "motion.skip0", GROUP_DECODER, MOTION_INPUT_CHANNELS, SKIP0_CHANNELS, 1, 1, rng);

        // Stage k runs at in_res / 2^k, for k = 4 down to 0.
        let mut decoder = Vec::new();
        let mut prev = bottleneck;
        for k in (0..ENCODER_BLOCKS).rev() {
            let (skip, cout) = if k == 0 { (SKIP0_CHANNELS, w) } else { (widths[k - 1], widths[k - 1]) };
            let flow_in = if k + 1 < cfg.flow_levels { 2 } else { 0 };
            let name = format!("motion.dec{k}");
            let conv = Conv::new(store, &format!("{name}.conv"), GROUP_DECODER, prev + skip + flow_in, cout, 3, 1, rng);
            let heads = (k < cfg.flow_levels).then(|| {
                (
                    Conv::zeroed(store, &format!("{name}.flow"), GROUP_DECODER, cout, 2, 3),
                    Conv::new(store, &format!("{name}.occ"), GROUP_DECODER, cout, 1, 3, 1, rng),
                )
            });
            decoder.push(DecoderStage { conv, heads });
            prev = cout;
        }
        Self { encoder, alpha, rho, skip0, decoder, flow_levels: cfg.flow_levels }
    }

    /// Encoder pass: translation signals plus cached skip features.
    pub fn encode<'t, T: Scalar>(&self, s: &Session<'t, T>, input: Var<'t, T>) -> Result<MotionCode<'t, T>> {
        let (_, c, h, w) = input.dims4();
        if c != MOTION_INPUT_CHANNELS || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::shape(
                "MotionNet",
                format!(
                    "expected [N, {MOTION_INPUT_CHANNELS}, H, W] with H, W multiples of 32, got {:?}",
                    input.shape()
                ),
            ));
        }
        let mut x = input;
        let mut features = Vec::with_capacity(ENCODER_BLOCKS);
        for conv in &self.encoder {
            x = conv.forward(s, x).leaky_relu(LEAK);
            features.push(x);
        }
        let pooled = x.global_avg_pool();
        Ok(MotionCode { alpha: self.alpha.forward(s, pooled), rho: self.rho.forward(s, pooled), features, input })
    }

    /// Decoder pass producing `flow_levels` pyramid levels.
    pub fn decode<'t, T: Scalar>(&self, s: &Session<'t, T>, code: &MotionCode<'t, T>) -> Result<FlowPyramid<'t, T>> {
        let mut d = code.features[ENCODER_BLOCKS - 1];
        let mut flow: Option<Var<'t, T>> = None;
        let mut pyr = FlowPyramid { flows: Vec::new(), occlusions: Vec::new() };
        for (stage, k) in self.decoder.iter().zip((0..ENCODER_BLOCKS).rev()) {
            let up = d.upsample_nearest(2);
            let (_, _, h, w) = up.dims4();
            let skip = if k == 0 { self.skip0.forward(s, code.input).leaky_relu(LEAK) } else { code.features[k - 1] };
            let up_flow = flow.map(|f| upsample_flow(f, h, w)).transpose()?;
            let mut parts = vec![up, skip];
            parts.extend(up_flow);
            d = stage.conv.forward(s, Var::concat(&parts, 1)).leaky_relu(LEAK);
            if let Some((flow_head, occ_head)) = &stage.heads {
                let residual = flow_head.forward(s, d);
                let f = match up_flow {
                    Some(prev) => prev + residual,
                    None => residual,
                };
                pyr.flows.push(f);
                pyr.occlusions.push(occ_head.forward(s, d).sigmoid());
                flow = Some(f);
            }
        }
        debug_assert_eq!(pyr.flows.len(), self.flow_levels);
        Ok(pyr)
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        s: &Session<'t, T>,
        input: Var<'t, T>,
    ) -> Result<(MotionCode<'t, T>, FlowPyramid<'t, T>)> {
        let code = self.encode(s, input)?;
        let pyr = self.decode(s, &code)?;
        Ok((code, pyr))
    }
}
