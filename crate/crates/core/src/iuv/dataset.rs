//! On-disk dataset layout.
//!
//! ```text
//! root/manifest.json
//! root/<split>/<video>/frame_000000.png   RGB, 8 bit
//! root/<split>/<video>/iuv_000000.iuvz
//! root/<split>/<video>/mask_000000.png    grey, 8 bit
//! root/<split>/<video>/kp_000000.txt      one "x y present" line per joint
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use mtr_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::iuvz::{read_iuvz, write_iuvz};
use super::puppet::{pair, synth_frames, Frame, PuppetSpec};
use crate::error::{Error, Result};
use crate::types::{Image, Keypoint, KeypointSet, Mask, SampleRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub name: String,
    pub frames: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub splits: BTreeMap<String, Vec<VideoEntry>>,
    pub spec: PuppetSpec,
}

impl Manifest {
    pub fn total_frames(&self) -> usize {
        self.splits.values().flatten().map(|v| v.frames).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub name: String,
    pub frames: Vec<Frame>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path.display().to_string(), e)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_image_png(img: &Image, path: &Path) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let d = img.tensor().data();
    let hw = h * w;
    let buf = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([to_u8(d[i]), to_u8(d[hw + i]), to_u8(d[2 * hw + i])])
    });
    buf.save(path).map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    let w = mask.width();
    let d = mask.tensor().data();
    let buf =
        GrayImage::from_fn(w as u32, mask.height() as u32, |x, y| image::Luma([to_u8(d[y as usize * w + x as usize])]));
    buf.save(path).map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

pub fn load_image_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = h * w;
    let mut data = vec![0.0f32; 3 * hw];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * hw + y as usize * w + x as usize] = p.0[c] as f32 / 255.0;
        }
    }
    Image::new(Tensor::new(&[3, h, w], data)?)
}

pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
    Mask::new(Tensor::new(&[1, h, w], data)?)
}

pub fn write_keypoints(kps: &[Keypoint], path: &Path) -> Result<()> {
    let text: String = kps.iter().map(|k| format!("{} {} {}\n", k.x, k.y, u8::from(k.present))).collect();
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_keypoints(path: &Path) -> Result<KeypointSet> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = || Error::Data(format!("{}:{}: expected `x y present`, got {line:?}", path.display(), n + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let x = f[0].parse().map_err(|_| bad())?;
            let y = f[1].parse().map_err(|_| bad())?;
            let present = match f[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            };
            Ok(Keypoint { x, y, present })
        })
        .collect()
}

fn frame_paths(dir: &Path, t: usize) -> [PathBuf; 4] {
    [
        dir.join(format!("frame_{t:06}.png")),
        dir.join(format!("iuv_{t:06}.iuvz")),
        dir.join(format!("mask_{t:06}.png")),
        dir.join(format!("kp_{t:06}.txt")),
    ]
}

pub fn write_video(frames: &[Frame], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (t, f) in frames.iter().enumerate() {
        let [img, iuv, mask, kp] = frame_paths(dir, t);
        save_image_png(&f.image, &img)?;
        write_iuvz(&f.iuv, &iuv)?;
        save_mask_png(&f.mask, &mask)?;
        write_keypoints(&f.keypoints, &kp)?;
    }
    Ok(())
}

/// Loads every frame of a video directory in filename order.
pub fn load_video(dir: &Path) -> Result<Video> {
    let mut stems: Vec<String> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let name = entry.map_err(|e| io_err(dir, e))?.file_name().to_string_lossy().into_owned();
        if let Some(idx) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".png")) {
            stems.push(idx.to_owned());
        }
    }
    stems.sort();
    let mut frames = Vec::with_capacity(stems.len());
    for stem in &stems {
        let companion = |prefix: &str, ext: &str| -> Result<PathBuf> {
            let p = dir.join(format!("{prefix}_{stem}.{ext}"));
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::Data(format!("frame_{stem}.png has no companion {}", p.display())))
            }
        };
        let image = load_image_png(&dir.join(format!("frame_{stem}.png")))?;
        let iuv = read_iuvz(&companion("iuv", "iuvz")?)?;
        let mask = load_mask_png(&companion("mask", "png")?)?;
        let keypoints = read_keypoints(&companion("kp", "txt")?)?;
        let dims = [(iuv.height(), iuv.width()), (mask.height(), mask.width())];
        if dims.iter().any(|&d| d != (image.height(), image.width())) {
            return Err(Error::Data(format!("frame_{stem} in {}: spatial sizes disagree", dir.display())));
        }
        frames.push(Frame { image, iuv, mask, keypoints });
    }
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Video { name, frames })
}

/// Videos of a split in directory-name order. A missing split is empty.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<Video>> {
    let dir = root.join(split);
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| io_err(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_video(d)).collect()
}

/// Self-reconstruction pairs: frame 0 of each video as source, every later
/// frame as driving.
pub fn self_pairs(video: &Video) -> Vec<SampleRecord> {
    video.frames.iter().skip(1).map(|f| pair(&video.frames[0], f)).collect()
}

/// Cross-video pairs: frame 0 of `source` against every frame of `driving`.
pub fn cross_pairs(source: &Video, driving: &Video) -> Vec<SampleRecord> {
    driving.frames.iter().map(|f| pair(&source.frames[0], f)).collect()
}

pub fn load_dataset(root: &Path, split: &str) -> Result<Vec<SampleRecord>> {
    Ok(load_split(root, split)?.iter().flat_map(self_pairs).collect())
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

/// Synthesises `videos` puppet videos of `frames` frames into
/// `root/<split>/video_NNN` and writes the manifest. Video `i` uses seed
/// `seed + i`. An existing non-empty `root` is refused unless `force`, in
/// which case the manifest and the split directory are replaced.
pub fn synth_dataset(
    root: &Path,
    spec: &PuppetSpec,
    split: &str,
    seed: u64,
    videos: usize,
    frames: usize,
    force: bool,
) -> Result<Manifest> {
    if videos == 0 {
        return Err(Error::Validation("need at least one video".into()));
    }
    let occupied = root.is_dir() && fs::read_dir(root).map_err(|e| io_err(root, e))?.next().is_some();
    if occupied {
        if !force {
            return Err(Error::Data(format!("{} is not empty; pass --force to overwrite", root.display())));
        }
        let split_dir = root.join(split);
        if split_dir.exists() {
            fs::remove_dir_all(&split_dir).map_err(|e| io_err(&split_dir, e))?;
        }
    }
    let mut entries = Vec::with_capacity(videos);
    for i in 0..videos {
        let name = format!("video_{i:03}");
        let vseed = seed.wrapping_add(i as u64);
        let fr = synth_frames(spec, vseed, frames)?;
        write_video(&fr, &root.join(split).join(&name))?;
        entries.push(VideoEntry { name, frames, seed: vseed });
    }
    let manifest = Manifest { splits: BTreeMap::from([(split.to_string(), entries)]), spec: spec.clone() };
    write_manifest(root, &manifest)?;
    Ok(manifest)
}
