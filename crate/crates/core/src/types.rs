//! Value-level domain types shared by every module.
//!
//! Images and masks are `f32` tensors without a batch axis (`C x H x W`).
//! Batched network inputs are assembled with [`Tensor::stack`].

use mtr_tensor::Tensor;

use crate::error::{Error, Result};

/// Number of DensePose body parts. Part index 0 is background.
pub const NUM_PARTS: usize = 24;
/// Score channels: background plus one per part.
pub const NUM_SCORE_CHANNELS: usize = NUM_PARTS + 1;
/// Channels of an encoded IUV map: `u` per part, `v` per part, scores.
pub const ONEHOT_CHANNELS: usize = 2 * NUM_PARTS + NUM_SCORE_CHANNELS;

fn check_unit_range(what: &str, data: &[f32]) -> Result<()> {
    if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
        return Err(Error::Validation(format!("{what}: value {bad} outside [0, 1]")));
    }
    Ok(())
}

/// RGB image, `3 x H x W`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Tensor<f32>,
}

impl Image {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        match data.shape() {
            [3, h, w] if *h > 0 && *w > 0 => {}
            s => return Err(Error::shape("Image", format!("expected 3 x H x W, got {s:?}"))),
        }
        check_unit_range("image", data.data())?;
        Ok(Self { data })
    }

    /// Clamps into `[0, 1]` instead of rejecting; for network outputs.
    pub fn from_clamped(data: Tensor<f32>) -> Result<Self> {
        Self::new(data.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn filled(h: usize, w: usize, rgb: [f32; 3]) -> Self {
        let data = Tensor::from_fn(&[3, h, w], |i| rgb[i / (h * w)]);
        Self { data }
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let (h, w) = (self.height(), self.width());
        let d = self.data.data();
        [d[y * w + x], d[h * w + y * w + x], d[2 * h * w + y * w + x]]
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        Ok(Self { data: box_downsample(&self.data, factor)? })
    }
}

/// Single-channel mask, `1 x H x W`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    data: Tensor<f32>,
}

impl Mask {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        match data.shape() {
            [1, h, w] if *h > 0 && *w > 0 => {}
            s => return Err(Error::shape("Mask", format!("expected 1 x H x W, got {s:?}"))),
        }
        check_unit_range("mask", data.data())?;
        Ok(Self { data })
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn downsample(&self, factor: usize) -> Result<Self> {
        Ok(Self { data: box_downsample(&self.data, factor)? })
    }
}

fn box_downsample(t: &Tensor<f32>, factor: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = match t.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::shape("downsample", format!("expected C x H x W, got {s:?}"))),
    };
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::shape("downsample", format!("{h}x{w} not divisible by {factor}")));
    }
    let (ho, wo) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = vec![0.0f32; c * ho * wo];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ch * ho + y / factor) * wo + x / factor] += t.data()[(ch * h + y) * w + x] * norm;
            }
        }
    }
    Ok(Tensor::new(&[c, ho, wo], out)?)
}

/// DensePose annotation: per-pixel part index in `0..=24` (0 = background)
/// and continuous surface coordinates `u, v` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IuvMap {
    height: usize,
    width: usize,
    part: Vec<u8>,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl IuvMap {
    pub fn new(height: usize, width: usize, part: Vec<u8>, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        let n = height * width;
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!("IUV map dimensions must be >= 1, got {height}x{width}")));
        }
        if part.len() != n || u.len() != n || v.len() != n {
            return Err(Error::Validation(format!("IUV map {height}x{width}: channel lengths do not match")));
        }
        for i in 0..n {
            if part[i] as usize > NUM_PARTS {
                return Err(Error::Validation(format!("part index {} out of range at pixel {i}", part[i])));
            }
            let (uu, vv) = (u[i], v[i]);
            if !(0.0..=1.0).contains(&uu) || !(0.0..=1.0).contains(&vv) {
                return Err(Error::Validation(format!("uv ({uu}, {vv}) outside [0, 1] at pixel {i}")));
            }
            if part[i] == 0 && (uu != 0.0 || vv != 0.0) {
                return Err(Error::Validation(format!("background pixel {i} carries non-zero uv")));
            }
        }
        Ok(Self { height, width, part, u, v })
    }

    pub fn background(height: usize, width: usize) -> Result<Self> {
        let n = height * width;
        Self::new(height, width, vec![0; n], vec![0.0; n], vec![0.0; n])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn parts(&self) -> &[u8] {
        &self.part
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    /// Nearest-neighbour subsampling (block centres) by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor) {
            return Err(Error::shape(
                "IuvMap::downsample",
                format!("{}x{} not divisible by {factor}", self.height, self.width),
            ));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (ho, wo) = (self.height / factor, self.width / factor);
        let mut part = Vec::with_capacity(ho * wo);
        let mut u = Vec::with_capacity(ho * wo);
        let mut v = Vec::with_capacity(ho * wo);
        for y in 0..ho {
            for x in 0..wo {
                let src = (y * factor + factor / 2) * self.width + x * factor + factor / 2;
                part.push(self.part[src]);
                u.push(self.u[src]);
                v.push(self.v[src]);
            }
        }
        Self::new(ho, wo, part, u, v)
    }
}

/// Channel-separated IUV encoding: `u` and `v` scattered into one channel
/// per part, plus a 25-channel score map (channel 0 = background).
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotIuv {
    pub u_parts: Tensor<f32>,
    pub v_parts: Tensor<f32>,
    pub score: Tensor<f32>,
}

impl OneHotIuv {
    pub fn height(&self) -> usize {
        self.score.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.score.shape()[2]
    }

    /// Stacked `[u_parts; v_parts; score]`, `73 x H x W`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let mut data = Vec::with_capacity(ONEHOT_CHANNELS * self.height() * self.width());
        data.extend_from_slice(self.u_parts.data());
        data.extend_from_slice(self.v_parts.data());
        data.extend_from_slice(self.score.data());
        Tensor::new(&[ONEHOT_CHANNELS, self.height(), self.width()], data).expect("consistent channel sizes")
    }

    /// Argmax decoding back to an [`IuvMap`].
    pub fn decode(&self) -> Result<IuvMap> {
        let (h, w) = (self.height(), self.width());
        let hw = h * w;
        let s = self.score.data();
        let mut part = Vec::with_capacity(hw);
        let mut u = Vec::with_capacity(hw);
        let mut v = Vec::with_capacity(hw);
        for i in 0..hw {
            let mut best = 0;
            for ch in 1..NUM_SCORE_CHANNELS {
                if s[ch * hw + i] > s[best * hw + i] {
                    best = ch;
                }
            }
            part.push(best as u8);
            if best == 0 {
                u.push(0.0);
                v.push(0.0);
            } else {
                u.push(self.u_parts.data()[(best - 1) * hw + i]);
                v.push(self.v_parts.data()[(best - 1) * hw + i]);
            }
        }
        IuvMap::new(h, w, part, u, v)
    }
}

/// Body landmark in pixel coordinates; pixel centres sit at integers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub present: bool,
}

impl Keypoint {
    pub const MISSING: Keypoint = Keypoint { x: 0.0, y: 0.0, present: false };
}

/// Landmarks of one frame, in a fixed joint order.
pub type KeypointSet = Vec<Keypoint>;

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub source_image: Image,
    pub source_iuv: IuvMap,
    pub driving_iuv: IuvMap,
    pub target_image: Image,
    pub fg_mask: Mask,
    pub keypoints: KeypointSet,
}

/// Scatters an [`IuvMap`] into per-part channels with an exact one-hot score.
pub fn iuv_to_onehot(m: &IuvMap) -> OneHotIuv {
    let (h, w) = (m.height(), m.width());
    let hw = h * w;
    let mut u_parts = vec![0.0f32; NUM_PARTS * hw];
    let mut v_parts = vec![0.0f32; NUM_PARTS * hw];
    let mut score = vec![0.0f32; NUM_SCORE_CHANNELS * hw];
    for i in 0..hw {
        let p = m.parts()[i] as usize;
        score[p * hw + i] = 1.0;
        if p > 0 {
            u_parts[(p - 1) * hw + i] = m.u()[i];
            v_parts[(p - 1) * hw + i] = m.v()[i];
        }
    }
    OneHotIuv {
        u_parts: Tensor::new(&[NUM_PARTS, h, w], u_parts).expect("sized"),
        v_parts: Tensor::new(&[NUM_PARTS, h, w], v_parts).expect("sized"),
        score: Tensor::new(&[NUM_SCORE_CHANNELS, h, w], score).expect("sized"),
    }
}
