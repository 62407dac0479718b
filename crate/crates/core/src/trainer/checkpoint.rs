//! Checkpoints: `manifest.txt` (one `name dtype shape` line per parameter),
//! `params.bin` (raw little-endian values in manifest order) and
//! `state.json` (training progress).

use std::fs;
use std::path::Path;

use mtr_tensor::{ParamStore, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MANIFEST: &str = "manifest.txt";
const PARAMS: &str = "params.bin";
const STATE: &str = "state.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of schedule stages completed.
    pub stages_done: usize,
    pub stage_name: String,
    pub global_iter: usize,
    /// Full run configuration as TOML.
    pub config: String,
}

fn shape_str(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".into()
    } else {
        shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }
}

/// Writes the parameters of every store, in order, into `dir`.
pub fn save_checkpoint<T: Scalar>(dir: &Path, stores: &[&ParamStore<T>], state: &TrainState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut manifest = String::new();
    let mut blob = Vec::new();
    for store in stores {
        for id in store.ids() {
            let t = store.get(id);
            manifest.push_str(&format!("{} {} {}\n", store.name(id), T::DTYPE, shape_str(t.shape())));
            for &v in t.data() {
                v.write_le(&mut blob);
            }
        }
    }
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p.display().to_string(), e))
    };
    write(MANIFEST, manifest.as_bytes())?;
    write(PARAMS, &blob)?;
    write(STATE, serde_json::to_string_pretty(state).expect("state serializes").as_bytes())
}

pub fn read_state(dir: &Path) -> Result<TrainState> {
    let p = dir.join(STATE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
}

/// Number of parameters listed in a checkpoint manifest.
pub fn manifest_len(dir: &Path) -> Result<usize> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).count())
}

/// Loads a checkpoint into stores with the same parameter layout. Any
/// mismatch names the first offending parameter.
pub fn load_checkpoint<T: Scalar>(dir: &Path, stores: &mut [&mut ParamStore<T>]) -> Result<()> {
    let mp = dir.join(MANIFEST);
    let manifest = fs::read_to_string(&mp).map_err(|e| Error::io(mp.display().to_string(), e))?;
    let bp = dir.join(PARAMS);
    let blob = fs::read(&bp).map_err(|e| Error::io(bp.display().to_string(), e))?;
    let mut lines = manifest.lines().filter(|l| !l.trim().is_empty());
    let mut offset = 0usize;
    let mut loaded = Vec::new();
    for store in stores.iter() {
        for id in store.ids() {
            let name = store.name(id);
            let expected = shape_str(store.get(id).shape());
            let line = lines.next().ok_or_else(|| Error::Data(format!("checkpoint is missing parameter `{name}`")))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [got_name, dtype, shape] = fields[..] else {
                return Err(Error::Data(format!("malformed manifest line {line:?}")));
            };
            if got_name != name || dtype != T::DTYPE || shape != expected {
                return Err(Error::Data(format!(
                    "parameter `{name}` ({} {expected}) does not match checkpoint entry `{got_name}` ({dtype} {shape})",
                    T::DTYPE
                )));
            }
            let n = store.get(id).numel();
            let bytes = blob.get(offset..offset + n * T::BYTES).ok_or_else(|| Error::Format {
                offset: offset as u64,
                msg: format!("params.bin truncated at `{name}`"),
            })?;
            let data: Vec<T> = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
            loaded.push(Tensor::new(store.get(id).shape(), data)?);
            offset += n * T::BYTES;
        }
    }
    if let Some(extra) = lines.next() {
        return Err(Error::Data(format!("checkpoint has unexpected parameter {extra:?}")));
    }
    if offset != blob.len() {
        return Err(Error::Format { offset: offset as u64, msg: "trailing bytes in params.bin".into() });
    }
    let mut values = loaded.into_iter();
    for store in stores.iter_mut() {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.set(id, values.next().expect("counted"));
        }
    }
    Ok(())
}
