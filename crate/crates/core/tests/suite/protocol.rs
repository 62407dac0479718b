//! Pairing-rule audit of `evaluate` through a recording predictor.

use std::cell::RefCell;

use mtr_core::eval::{cross_video_pairs, evaluate, self_pairs_of, FramePredictor, Oracle, Protocol};
use mtr_core::iuv::{synth_frames, PuppetSpec, Video};
use mtr_core::metrics::{MarkerEstimator, RandomProjection};
use mtr_core::types::{Image, IuvMap};
use mtr_core::Result;

/// Remembers every call and answers with the source frame.
#[derive(Default)]
pub struct Recorder {
    pub calls: RefCell<Vec<(Image, Vec<IuvMap>, bool)>>,
}

impl FramePredictor for Recorder {
    fn predict(&self, src: &Image, _: &IuvMap, driving: &[IuvMap], truth: Option<&[Image]>) -> Result<Vec<Image>> {
        self.calls.borrow_mut().push((src.clone(), driving.to_vec(), truth.is_some()));
        Ok(vec![src.clone(); driving.len()])
    }
}

pub fn videos(count: usize, frames: usize) -> Vec<Video> {
    (0..count)
        .map(|i| Video {
            name: format!("video_{i:03}"),
            frames: synth_frames(&PuppetSpec::default_for(32), 40 + i as u64, frames).unwrap(),
        })
        .collect()
}

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Self-reconstruction drives frame 0 with every later frame of the same
/// video; cross-video drives frame 0 with a whole other video and reports
/// no L1.
pub fn pairing_rules() -> std::result::Result<(), String> {
    let vids = videos(3, 5);
    let (emb, est) = (RandomProjection::default(), MarkerEstimator::default());

    let rec = Recorder::default();
    let report = evaluate(&rec, &vids, Protocol::SelfReconstruction, &self_pairs_of(&vids), &emb, &est)
        .map_err(|e| e.to_string())?;
    let calls = rec.calls.borrow();
    ensure(calls.len() == vids.len(), format!("{} self calls for {} videos", calls.len(), vids.len()))?;
    for ((src, driving, _), v) in calls.iter().zip(&vids) {
        ensure(*src == v.frames[0].image, "self source is not frame 0")?;
        let want: Vec<IuvMap> = v.frames[1..].iter().map(|f| f.iuv.clone()).collect();
        ensure(*driving == want, "self driving is not frames 1..")?;
    }
    ensure(report.frames == vids.len() * 4, format!("self frames {}", report.frames))?;
    let names: Vec<&str> = report.metrics.iter().map(|m| m.0.as_str()).collect();
    ensure(names == ["l1", "fid", "aed", "akd", "mkr"], format!("self metrics {names:?}"))?;

    let rec = Recorder::default();
    let pairs = cross_video_pairs(&vids, 4, 9).map_err(|e| e.to_string())?;
    let report = evaluate(&rec, &vids, Protocol::CrossVideo, &pairs, &emb, &est).map_err(|e| e.to_string())?;
    let calls = rec.calls.borrow();
    ensure(calls.len() == pairs.len(), "one call per cross pair")?;
    for ((src, driving, truth), (s, d)) in calls.iter().zip(&pairs) {
        ensure(s != d, "cross pair within one video")?;
        let (sv, dv) = (vids.iter().find(|v| &v.name == s).unwrap(), vids.iter().find(|v| &v.name == d).unwrap());
        ensure(*src == sv.frames[0].image, "cross source is not frame 0")?;
        let want: Vec<IuvMap> = dv.frames.iter().map(|f| f.iuv.clone()).collect();
        ensure(*driving == want, "cross driving is not the full sequence")?;
        ensure(!truth, "cross-video predictor saw ground truth")?;
    }
    ensure(report.get("l1").is_none() && report.get("fid").is_none(), "cross report carries L1 or FID")?;
    let names: Vec<&str> = report.metrics.iter().map(|m| m.0.as_str()).collect();
    ensure(names == ["aed", "akd", "mkr"], format!("cross metrics {names:?}"))?;
    ensure(!report.to_csv().contains("l1"), "cross CSV mentions l1")?;

    let oracle = evaluate(&Oracle, &vids, Protocol::SelfReconstruction, &self_pairs_of(&vids), &emb, &est)
        .map_err(|e| e.to_string())?;
    for m in ["l1", "akd", "mkr"] {
        ensure(oracle.get(m) == Some(0.0), format!("oracle {m} = {:?}", oracle.get(m)))?;
    }

    let again = cross_video_pairs(&vids, 4, 9).map_err(|e| e.to_string())?;
    ensure(again == pairs, "pair draw is not deterministic")?;
    let report2 =
        evaluate(&Recorder::default(), &vids, Protocol::CrossVideo, &again, &emb, &est).map_err(|e| e.to_string())?;
    ensure(report2 == report, "cross report differs across runs")
}
