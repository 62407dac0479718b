//! Synthetic articulated 2D puppet with analytically exact IUV annotations.
//!
//! A puppet is a kinematic chain of rectangular parts. Each part starts at a
//! joint on its parent and extends along its bone; a pixel inside part `k`
//! has `u` = fraction along the bone and `v` = fraction across it. Later parts
//! are drawn over earlier ones. Joint markers of fixed saturated colours are
//! painted last so that a colour-based estimator can recover keypoints from
//! real and generated frames alike.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Image, IuvMap, Keypoint, KeypointSet, Mask, SampleRecord, NUM_PARTS};

use mtr_tensor::Tensor;

/// Marker colours, one per joint in keypoint order.
pub const MARKER_COLORS: [[f32; 3]; 7] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 1.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub name: String,
    /// DensePose part index, `1..=24`.
    pub densepose_index: u8,
    /// Parent part; `None` for the root.
    pub parent: Option<usize>,
    /// Joint position as a fraction along the parent's bone.
    pub attach: f32,
    pub length: f32,
    pub width: f32,
    /// Joint angle relative to the parent direction: `mid + range * sin(w t + phase)`.
    pub angle_mid: f32,
    pub angle_range: f32,
    /// Angular velocity of the joint oscillation, radians per frame.
    pub frequency: f32,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuppetSpec {
    pub height: usize,
    pub width: usize,
    /// Root joint position in pixels.
    pub root: [f32; 2],
    /// Horizontal root sway amplitude in pixels.
    pub sway: f32,
    pub sway_frequency: f32,
    pub marker_radius: f32,
    pub parts: Vec<PartSpec>,
}

impl PuppetSpec {
    /// Six-part figure (torso, head, arms, legs) on a square canvas.
    pub fn default_for(size: usize) -> Self {
        let s = size as f32;
        let part = |name: &str, idx, parent, attach, len, width, mid, range, freq, color| PartSpec {
            name: name.into(),
            densepose_index: idx,
            parent,
            attach,
            length: len * s,
            width: width * s,
            angle_mid: mid,
            angle_range: range,
            frequency: freq,
            color,
        };
        Self {
            height: size,
            width: size,
            root: [0.5 * (s - 1.0), 0.58 * s],
            sway: 0.04 * s,
            sway_frequency: 0.2,
            marker_radius: (s / 32.0).max(1.5),
            parts: vec![
                part("torso", 1, None, 0.0, 0.22, 0.14, -PI / 2.0, 0.12, 0.25, [0.55, 0.35, 0.3]),
                part("head", 2, Some(0), 1.0, 0.12, 0.12, 0.0, 0.3, 0.3, [0.75, 0.6, 0.45]),
                part("right_arm", 3, Some(0), 0.9, 0.2, 0.06, 2.5, 0.6, 0.4, [0.3, 0.45, 0.6]),
                part("left_arm", 4, Some(0), 0.9, 0.2, 0.06, -2.5, 0.6, 0.35, [0.3, 0.6, 0.4]),
                part("right_leg", 9, Some(0), 0.0, 0.26, 0.08, PI - 0.25, 0.35, 0.3, [0.45, 0.4, 0.65]),
                part("left_leg", 10, Some(0), 0.0, 0.26, 0.08, -PI + 0.25, 0.35, 0.28, [0.6, 0.55, 0.3]),
            ],
        }
    }

    /// Same figure with every joint frozen.
    pub fn frozen(mut self) -> Self {
        self.sway_frequency = 0.0;
        for p in &mut self.parts {
            p.frequency = 0.0;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Validation(format!("puppet spec: {m}")));
        if self.height < 4 || self.width < 4 {
            return err(format!("canvas {}x{} too small", self.height, self.width));
        }
        if self.parts.is_empty() || self.parts.len() > NUM_PARTS {
            return err(format!("needs 1..={NUM_PARTS} parts, got {}", self.parts.len()));
        }
        let mut seen = [false; NUM_PARTS + 1];
        for (i, p) in self.parts.iter().enumerate() {
            let idx = p.densepose_index as usize;
            if idx == 0 || idx > NUM_PARTS {
                return err(format!("part {} maps to invalid DensePose index {idx}", p.name));
            }
            if std::mem::replace(&mut seen[idx], true) {
                return err(format!("DensePose index {idx} used twice"));
            }
            match p.parent {
                None if i != 0 => return err(format!("only part 0 may be the root, {} has no parent", p.name)),
                Some(_) if i == 0 => return err("part 0 must be the root".into()),
                Some(q) if q >= i => return err(format!("part {} must come after its parent", p.name)),
                _ => {}
            }
            if !(p.length > 0.0 && p.width > 0.0) {
                return err(format!("part {} has non-positive size", p.name));
            }
            if !(0.0..=1.0).contains(&p.attach) {
                return err(format!("part {} attaches outside its parent", p.name));
            }
        }
        if self.marker_radius <= 0.0 {
            return err("marker radius must be positive".into());
        }
        Ok(())
    }

    pub fn num_joints(&self) -> usize {
        self.parts.len() + 1
    }
}

/// Per-video appearance and motion phases, derived from the seed.
#[derive(Debug, Clone)]
struct Variation {
    phases: Vec<f32>,
    sway_phase: f32,
    tints: Vec<[f32; 3]>,
    background: [[f32; 3]; 2],
    stripes: Vec<f32>,
}

impl Variation {
    fn sample(spec: &PuppetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases = spec.parts.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let sway_phase = rng.random_range(0.0..2.0 * PI);
        let tints =
            spec.parts.iter().map(|p| p.color.map(|c| (c + rng.random_range(-0.12..0.12)).clamp(0.25, 0.75))).collect();
        let bg0 = [0; 3].map(|_| rng.random_range(0.3..0.7));
        let bg1 = bg0.map(|c: f32| (c + rng.random_range(-0.1..0.1)).clamp(0.25, 0.75));
        let stripes = spec.parts.iter().map(|_| rng.random_range(2.0..5.0f32).floor()).collect();
        Self { phases, sway_phase, tints, background: [bg0, bg1], stripes }
    }
}

/// Placed bone of one part in one frame.
#[derive(Debug, Clone, Copy)]
struct Bone {
    origin: [f32; 2],
    dir: [f32; 2],
    length: f32,
    width: f32,
}

impl Bone {
    fn at(&self, t: f32) -> [f32; 2] {
        [self.origin[0] + self.dir[0] * t * self.length, self.origin[1] + self.dir[1] * t * self.length]
    }

    /// Local `(u, v)` of an image point, unclamped.
    fn local(&self, p: [f32; 2]) -> (f32, f32) {
        let (dx, dy) = (p[0] - self.origin[0], p[1] - self.origin[1]);
        let along = dx * self.dir[0] + dy * self.dir[1];
        let across = -dx * self.dir[1] + dy * self.dir[0];
        (along / self.length, across / self.width + 0.5)
    }
}

/// Puppet configuration at one instant.
#[derive(Debug, Clone)]
pub struct Pose {
    bones: Vec<Bone>,
    root: [f32; 2],
}

impl Pose {
    pub fn new(spec: &PuppetSpec, seed: u64, t: usize) -> Self {
        Self::with_variation(spec, &Variation::sample(spec, seed), t)
    }

    fn with_variation(spec: &PuppetSpec, var: &Variation, t: usize) -> Self {
        let t = t as f32;
        let root = [spec.root[0] + spec.sway * (spec.sway_frequency * t + var.sway_phase).sin(), spec.root[1]];
        let mut bones: Vec<Bone> = Vec::with_capacity(spec.parts.len());
        let mut angles: Vec<f32> = Vec::with_capacity(spec.parts.len());
        for (i, p) in spec.parts.iter().enumerate() {
            let rel = p.angle_mid + p.angle_range * (p.frequency * t + var.phases[i]).sin();
            let (origin, base) = match p.parent {
                None => (root, 0.0),
                Some(q) => (bones[q].at(p.attach), angles[q]),
            };
            let angle = base + rel;
            angles.push(angle);
            bones.push(Bone { origin, dir: [angle.cos(), angle.sin()], length: p.length, width: p.width });
        }
        Self { bones, root }
    }

    /// Image point of local coordinates `(u, v)` on part `part`.
    pub fn locate(&self, part: usize, u: f32, v: f32) -> [f32; 2] {
        let b = &self.bones[part];
        let along = u * b.length;
        let across = (v - 0.5) * b.width;
        [b.origin[0] + b.dir[0] * along - b.dir[1] * across, b.origin[1] + b.dir[1] * along + b.dir[0] * across]
    }

    /// Topmost part covering `p`, with its local coordinates.
    pub fn hit(&self, p: [f32; 2]) -> Option<(usize, f32, f32)> {
        self.bones.iter().enumerate().rev().find_map(|(k, b)| {
            let (u, v) = b.local(p);
            ((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)).then_some((k, u, v))
        })
    }

    /// Root followed by each part's distal end.
    pub fn joints(&self) -> Vec<[f32; 2]> {
        std::iter::once(self.root).chain(self.bones.iter().map(|b| b.at(1.0))).collect()
    }
}

/// One rendered frame of a puppet video.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub iuv: IuvMap,
    pub mask: Mask,
    pub keypoints: KeypointSet,
}

fn texture(tint: [f32; 3], stripes: f32, u: f32, v: f32) -> [f32; 3] {
    let band = if ((u * stripes).floor() as i32) % 2 == 0 { 1.0 } else { 0.8 };
    let shade = 0.85 + 0.15 * (PI * v).sin();
    tint.map(|c| (c * band * shade + 0.1 * u).clamp(0.2, 0.8))
}

fn render(spec: &PuppetSpec, var: &Variation, t: usize) -> Result<Frame> {
    let pose = Pose::with_variation(spec, var, t);
    let (h, w) = (spec.height, spec.width);
    let hw = h * w;
    let mut rgb = vec![0.0f32; 3 * hw];
    let mut part = vec![0u8; hw];
    let mut us = vec![0.0f32; hw];
    let mut vs = vec![0.0f32; hw];
    let mut mask = vec![0.0f32; hw];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let color = match pose.hit([x as f32, y as f32]) {
                Some((k, u, v)) => {
                    part[i] = spec.parts[k].densepose_index;
                    us[i] = u;
                    vs[i] = v;
                    mask[i] = 1.0;
                    texture(var.tints[k], var.stripes[k], u, v)
                }
                None => {
                    let a = y as f32 / (h - 1) as f32;
                    let [b0, b1] = var.background;
                    [0, 1, 2].map(|c| b0[c] + (b1[c] - b0[c]) * a)
                }
            };
            for c in 0..3 {
                rgb[c * hw + i] = color[c];
            }
        }
    }
    let joints = pose.joints();
    let r = spec.marker_radius;
    for (j, p) in joints.iter().enumerate() {
        let color = MARKER_COLORS[j % MARKER_COLORS.len()];
        let (y0, y1) = ((p[1] - r).floor().max(0.0) as usize, (p[1] + r).ceil().min((h - 1) as f32));
        let (x0, x1) = ((p[0] - r).floor().max(0.0) as usize, (p[0] + r).ceil().min((w - 1) as f32));
        if y1 < 0.0 || x1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (dx, dy) = (x as f32 - p[0], y as f32 - p[1]);
                if dx * dx + dy * dy <= r * r {
                    for c in 0..3 {
                        rgb[c * hw + y * w + x] = color[c];
                    }
                }
            }
        }
    }
    let keypoints = joints
        .iter()
        .map(|p| {
            let inside = p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (w - 1) as f32 && p[1] <= (h - 1) as f32;
            if inside {
                Keypoint { x: p[0], y: p[1], present: true }
            } else {
                Keypoint::MISSING
            }
        })
        .collect();
    Ok(Frame {
        image: Image::new(Tensor::new(&[3, h, w], rgb)?)?,
        iuv: IuvMap::new(h, w, part, us, vs)?,
        mask: Mask::new(Tensor::new(&[1, h, w], mask)?)?,
        keypoints,
    })
}

/// Renders `n_frames` consecutive frames of one puppet video.
pub fn synth_frames(spec: &PuppetSpec, seed: u64, n_frames: usize) -> Result<Vec<Frame>> {
    spec.validate()?;
    if n_frames < 2 {
        return Err(Error::Validation(format!("need at least 2 frames, got {n_frames}")));
    }
    let var = Variation::sample(spec, seed);
    (0..n_frames).map(|t| render(spec, &var, t)).collect()
}

/// Pairs frame 0 (source) with every frame of the sequence, frame 0 included.
pub fn synth_sequence(spec: &PuppetSpec, seed: u64, n_frames: usize) -> Result<Vec<SampleRecord>> {
    let frames = synth_frames(spec, seed, n_frames)?;
    Ok(frames.iter().map(|f| pair(&frames[0], f)).collect())
}

pub fn pair(source: &Frame, driving: &Frame) -> SampleRecord {
    SampleRecord {
        source_image: source.image.clone(),
        source_iuv: source.iuv.clone(),
        driving_iuv: driving.iuv.clone(),
        target_image: driving.image.clone(),
        fg_mask: driving.mask.clone(),
        keypoints: driving.keypoints.clone(),
    }
}
