//! Evaluation protocols and report output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Animator;
use crate::iuv::Video;
use crate::metrics::{aed, akd, fid, l1_metric, mkr, Embedding, MarkerEstimator};
use crate::types::{Image, IuvMap, KeypointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Frame 0 of each video drives every later frame of the same video.
    SelfReconstruction,
    /// Frame 0 of a source video against the full sequence of another video.
    CrossVideo,
}

impl Protocol {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "self" | "self-reconstruction" => Ok(Protocol::SelfReconstruction),
            "cross" | "cross-video" => Ok(Protocol::CrossVideo),
            _ => Err(Error::Config(format!("unknown protocol {s:?}; expected self-reconstruction or cross-video"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::SelfReconstruction => "self-reconstruction",
            Protocol::CrossVideo => "cross-video",
        }
    }

    /// Metric columns reported; pixel metrics need ground truth and are
    /// absent from the cross-video protocol.
    pub fn metrics(self) -> &'static [&'static str] {
        match self {
            Protocol::SelfReconstruction => &["l1", "fid", "aed", "akd", "mkr"],
            Protocol::CrossVideo => &["aed", "akd", "mkr"],
        }
    }
}

/// Produces frames for a source frame and a run of driving IUVs.
pub trait FramePredictor {
    /// `truth` holds the ground-truth frames for the driving IUVs when they
    /// exist; only oracles may use them.
    fn predict(
        &self,
        src_img: &Image,
        src_iuv: &IuvMap,
        driving: &[IuvMap],
        truth: Option<&[Image]>,
    ) -> Result<Vec<Image>>;
}

/// Copies the ground truth; without it, repeats the source frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct Oracle;

impl FramePredictor for Oracle {
    fn predict(&self, src_img: &Image, _: &IuvMap, driving: &[IuvMap], truth: Option<&[Image]>) -> Result<Vec<Image>> {
        Ok(match truth {
            Some(t) => t.to_vec(),
            None => vec![src_img.clone(); driving.len()],
        })
    }
}

impl FramePredictor for Animator {
    fn predict(
        &self,
        src_img: &Image,
        src_iuv: &IuvMap,
        driving: &[IuvMap],
        _: Option<&[Image]>,
    ) -> Result<Vec<Image>> {
        Ok(self.animate(src_img, src_iuv, driving)?.into_iter().map(|(img, _)| img).collect())
    }
}

/// `(source video, driving video)` names.
pub type VideoPair = (String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    /// Metric name and value, in [`Protocol::metrics`] order.
    pub metrics: Vec<(String, f64)>,
    pub pairs: Vec<VideoPair>,
    pub frames: usize,
}

impl EvalReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|(m, _)| m == metric).map(|m| m.1)
    }

    pub fn to_csv(&self) -> String {
        let names: Vec<&str> = self.metrics.iter().map(|m| m.0.as_str()).collect();
        let values: Vec<String> = self.metrics.iter().map(|m| format!("{:e}", m.1)).collect();
        format!("protocol,frames,{}\n{},{},{}\n", names.join(","), self.protocol.name(), self.frames, values.join(","))
    }

    /// Aligned two-column table.
    pub fn to_table(&self) -> String {
        let mut rows = vec![("protocol".to_string(), self.protocol.name().to_string())];
        rows.push(("frames".into(), self.frames.to_string()));
        rows.extend(self.metrics.iter().map(|(m, v)| (m.to_uppercase(), format!("{v:.6}"))));
        let kw = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let vw = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<kw$}  {v:>vw$}");
        }
        out
    }

    /// Writes `report.csv`, `report.txt` and `pairs.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut pairs = String::from("source,driving\n");
        for (s, d) in &self.pairs {
            let _ = writeln!(pairs, "{s},{d}");
        }
        for (name, text) in [("report.csv", self.to_csv()), ("report.txt", self.to_table()), ("pairs.csv", pairs)] {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))?;
        }
        Ok(())
    }
}

/// Self-reconstruction pairs: each video with itself.
pub fn self_pairs_of(videos: &[Video]) -> Vec<VideoPair> {
    videos.iter().map(|v| (v.name.clone(), v.name.clone())).collect()
}

/// Up to `n` distinct ordered pairs of different videos, drawn with `seed`.
pub fn cross_video_pairs(videos: &[Video], n: usize, seed: u64) -> Result<Vec<VideoPair>> {
    if videos.len() < 2 {
        return Err(Error::Data(format!("cross-video evaluation needs >= 2 videos, got {}", videos.len())));
    }
    let mut all: Vec<VideoPair> = videos
        .iter()
        .flat_map(|s| videos.iter().filter(move |d| d.name != s.name).map(move |d| (s.name.clone(), d.name.clone())))
        .collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    all.truncate(n);
    Ok(all)
}

fn find<'v>(videos: &'v [Video], name: &str) -> Result<&'v Video> {
    videos.iter().find(|v| v.name == name).ok_or_else(|| Error::Data(format!("no video named {name:?}")))
}

/// Runs a protocol over `pairs`. Keypoints are estimated with the same
/// estimator on predicted and ground-truth frames.
pub fn evaluate<P: FramePredictor, E: Embedding>(
    model: &P,
    videos: &[Video],
    protocol: Protocol,
    pairs: &[VideoPair],
    emb: &E,
    estimator: &MarkerEstimator,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Data("no video pairs to evaluate".into()));
    }
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let (mut pred_kps, mut gt_kps): (Vec<KeypointSet>, Vec<KeypointSet>) = (Vec::new(), Vec::new());
    let mut aeds = Vec::new();
    for (s, d) in pairs {
        let (src, drv) = (find(videos, s)?, find(videos, d)?);
        let same = s == d;
        match protocol {
            Protocol::SelfReconstruction if !same => {
                return Err(Error::Data(format!("self-reconstruction pair {s} -> {d} spans two videos")))
            }
            Protocol::CrossVideo if same => {
                return Err(Error::Data(format!("cross-video pair {s} -> {d} is one video")))
            }
            _ => {}
        }
        let source = src.frames.first().ok_or_else(|| Error::Data(format!("video {s} is empty")))?;
        let driving = match protocol {
            Protocol::SelfReconstruction => &drv.frames[1..],
            Protocol::CrossVideo => &drv.frames[..],
        };
        if driving.is_empty() {
            return Err(Error::Data(format!("video {d} has no driving frames")));
        }
        let iuvs: Vec<IuvMap> = driving.iter().map(|f| f.iuv.clone()).collect();
        let gt: Vec<Image> = driving.iter().map(|f| f.image.clone()).collect();
        let truth = (protocol == Protocol::SelfReconstruction).then_some(gt.as_slice());
        let out = model.predict(&source.image, &source.iuv, &iuvs, truth)?;
        if out.len() != iuvs.len() {
            return Err(Error::Contract(format!(
                "predictor returned {} frames for {} driving IUVs",
                out.len(),
                iuvs.len()
            )));
        }
        aeds.push((aed(&out, &source.image, emb)?, out.len()));
        pred_kps.extend(out.iter().map(|f| estimator.estimate(f)));
        gt_kps.extend(gt.iter().map(|f| estimator.estimate(f)));
        preds.extend(out);
        truths.extend(gt);
    }
    let frames = preds.len();
    let aed_all = aeds.iter().map(|(a, n)| a * *n as f64).sum::<f64>() / frames as f64;
    let mut metrics = Vec::new();
    for &m in protocol.metrics() {
        let v = match m {
            "l1" => preds.iter().zip(&truths).map(|(p, g)| l1_metric(p, g)).sum::<Result<f64>>()? / frames as f64,
            "fid" => fid(&preds, &truths, emb)?,
            "aed" => aed_all,
            "akd" => akd(&pred_kps, &gt_kps)?,
            "mkr" => mkr(&pred_kps, &gt_kps)?,
            _ => unreachable!("metric list is fixed"),
        };
        metrics.push((m.to_string(), v));
    }
    Ok(EvalReport { protocol, metrics, pairs: pairs.to_vec(), frames })
}
