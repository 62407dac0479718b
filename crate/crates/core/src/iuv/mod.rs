//! IUV persistence, the synthetic puppet generator and the dataset layout.

pub mod dataset;
pub mod iuvz;
pub mod puppet;

pub use dataset::{
    cross_pairs, load_dataset, load_split, load_video, read_manifest, self_pairs, synth_dataset, write_video, Manifest,
    Video, VideoEntry,
};
pub use iuvz::{decode_iuvz, encode_iuvz, read_iuvz, write_iuvz};
pub use puppet::{pair, synth_frames, synth_sequence, Frame, Pose, PuppetSpec};
