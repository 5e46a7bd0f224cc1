//! Labeled-video enumeration, temporal clip sampling, and multimodal
//! decoding behind a pluggable backend interface.
//!
//! The bundled [`FrameDirBackend`] reads pre-decoded frame directories plus
//! WAV audio, optical-flow frame-directory pairs, and IMU sidecars, so the
//! full pipeline runs without third-party media stacks. Encoded-container
//! backends plug in through [`DecoderBackend`].

mod clip_sampler;
mod dataset;
mod decoder;
mod imu;
mod records;

pub use clip_sampler::{make_clip_sampler, ClipInfo, ClipSampler, ClipStrategy};
pub use dataset::{
    frame_video_dataset, labeled_video_dataset, DatasetIter, DatasetOptions, DecodedSample,
    LabeledVideoDataset, TransformFn,
};
pub use decoder::{DecoderBackend, FrameDirBackend, MediaStream};
pub use imu::load_imu_sidecar;
pub use records::{parse_record_line, parse_record_list, shard_for_worker, Label, LabeledVideoRecord};

use thiserror::Error;

/// Frame indices `round(linspace(0, T-1, n))`: nondecreasing, length exactly
/// `n`, endpoints covered.
pub fn uniform_temporal_indices(num_source_frames: usize, num_target: usize) -> Result<Vec<usize>> {
    if num_source_frames == 0 || num_target == 0 {
        return Err(DataError::Config(
            "frame counts must be >= 1 for index selection".into(),
        ));
    }
    if num_target == 1 {
        return Ok(vec![0]);
    }
    let t = num_source_frames as f64 - 1.0;
    let n = num_target as f64 - 1.0;
    Ok((0..num_target)
        .map(|i| (i as f64 * t / n).round() as usize)
        .collect())
}

/// Errors raised by the data pipeline.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("config error: {0}")]
    Config(String),
    #[error("path does not exist: {0}")]
    Path(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("frame directory is empty: {0}")]
    EmptyDir(String),
    #[error("image read error: {0}")]
    ImageRead(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
