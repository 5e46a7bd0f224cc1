//! Labeled-video datasets: record enumeration x clip sampling x decoding.

use super::clip_sampler::{ClipInfo, ClipSampler};
use super::decoder::{DecoderBackend, FrameDirBackend, MediaStream};
use super::records::{Label, LabeledVideoRecord};
use super::{DataError, Result};
use crate::conventions::{AudioWaveform, VideoTensor};
use ndarray::Array2;
use rand::rngs::StdRng;
use rand::SeedableRng;
use std::cell::Cell;
use std::path::Path;
use std::rc::Rc;

/// One decoded, transform-ready sample.
#[derive(Debug, Clone)]
pub struct DecodedSample {
    pub video: VideoTensor,
    pub audio: Option<AudioWaveform>,
    pub flow: Option<VideoTensor>,
    pub imu: Option<Array2<f64>>,
    pub label: Label,
    pub clip_info: ClipInfo,
    pub video_name: String,
    /// Set by pathway-packing transforms: `[slow, fast]`.
    pub pathways: Option<Vec<VideoTensor>>,
}

/// Sample-to-sample transform applied during iteration. Errors count as
/// skips; they never abort an epoch.
pub type TransformFn =
    Box<dyn Fn(DecodedSample, &mut StdRng) -> std::result::Result<DecodedSample, String> + Send + Sync>;

/// Iteration knobs.
pub struct DatasetOptions {
    /// Verify record paths exist at construction time.
    pub eager_path_check: bool,
    /// Seed of the per-iterator rng (workers add their id).
    pub base_seed: u64,
    /// Decode optional modalities when present.
    pub decode_audio: bool,
    pub decode_flow: bool,
    pub decode_imu: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            eager_path_check: false,
            base_seed: 0,
            decode_audio: true,
            decode_flow: true,
            decode_imu: true,
        }
    }
}

/// An iterable dataset over labeled video records.
///
/// Immutable after construction; every [`LabeledVideoDataset::iter`] call
/// yields an independent iterator with its own rng, so disjoint shards can
/// iterate concurrently.
pub struct LabeledVideoDataset {
    records: Vec<LabeledVideoRecord>,
    sampler: ClipSampler,
    backend: Box<dyn DecoderBackend>,
    transform: Option<TransformFn>,
    options: DatasetOptions,
}

/// Builds a dataset over an arbitrary decoder backend.
pub fn labeled_video_dataset(
    records: Vec<LabeledVideoRecord>,
    clip_sampler: ClipSampler,
    decoder: Box<dyn DecoderBackend>,
    transform: Option<TransformFn>,
    options: DatasetOptions,
) -> Result<LabeledVideoDataset> {
    if records.is_empty() {
        return Err(DataError::Config("record list is empty".into()));
    }
    if options.eager_path_check {
        for rec in &records {
            if !Path::new(&rec.data_path).exists() {
                return Err(DataError::Path(rec.data_path.clone()));
            }
        }
    }
    Ok(LabeledVideoDataset {
        records,
        sampler: clip_sampler,
        backend: decoder,
        transform,
        options,
    })
}

/// Frame-directory dataset: frame `i` of a directory maps to timestamp
/// `i / fps`; clip `[s, e)` selects frames with `s <= i/fps < e`.
pub fn frame_video_dataset(
    frame_dir_records: Vec<LabeledVideoRecord>,
    fps: f64,
    clip_sampler: ClipSampler,
    transform: Option<TransformFn>,
    options: DatasetOptions,
) -> Result<LabeledVideoDataset> {
    labeled_video_dataset(
        frame_dir_records,
        clip_sampler,
        Box::new(FrameDirBackend::new(fps)?),
        transform,
        options,
    )
}

impl LabeledVideoDataset {
    pub fn records(&self) -> &[LabeledVideoRecord] {
        &self.records
    }

    /// Fresh iterator over every clip of every record. Corrupt records are
    /// skipped and counted, never fatal.
    pub fn iter(&self) -> DatasetIter<'_> {
        DatasetIter {
            dataset: self,
            record_idx: 0,
            stream: None,
            last_clip: None,
            duration: 0.0,
            rng: StdRng::seed_from_u64(self.options.base_seed),
            skipped: Rc::new(Cell::new(0)),
        }
    }
}

/// Iterator yielding decoded samples; `skipped()` reports the running count
/// of records dropped for decode failures.
pub struct DatasetIter<'a> {
    dataset: &'a LabeledVideoDataset,
    record_idx: usize,
    stream: Option<Box<dyn MediaStream>>,
    last_clip: Option<ClipInfo>,
    duration: f64,
    rng: StdRng,
    skipped: Rc<Cell<usize>>,
}

impl DatasetIter<'_> {
    pub fn skipped(&self) -> usize {
        self.skipped.get()
    }

    /// Shareable handle to the skip counter (usable after iteration ends).
    pub fn skip_counter(&self) -> Rc<Cell<usize>> {
        Rc::clone(&self.skipped)
    }

    fn open_next_record(&mut self) -> Option<()> {
        loop {
            if self.record_idx >= self.dataset.records.len() {
                return None;
            }
            let rec = &self.dataset.records[self.record_idx];
            match self.dataset.backend.open(Path::new(&rec.data_path)) {
                Ok(stream) => {
                    self.duration = rec.duration_sec.unwrap_or_else(|| stream.duration_sec());
                    self.stream = Some(stream);
                    self.last_clip = None;
                    return Some(());
                }
                Err(err) => {
                    // Skip-and-count: epochs must survive dirty corpora.
                    eprintln!(
                        "videokit-data: skipping {:?}: {err}",
                        rec.data_path
                    );
                    self.skipped.set(self.skipped.get() + 1);
                    self.record_idx += 1;
                }
            }
        }
    }

    fn decode_current(&mut self, clip: &ClipInfo) -> Result<DecodedSample> {
        let rec = &self.dataset.records[self.record_idx];
        let stream = self.stream.as_mut().expect("stream open");
        let video = stream.read_video(clip.start_sec, clip.end_sec)?;
        let opts = &self.dataset.options;
        let audio = if opts.decode_audio {
            stream.read_audio(clip.start_sec, clip.end_sec)?
        } else {
            None
        };
        let flow = if opts.decode_flow {
            stream.read_flow(clip.start_sec, clip.end_sec)?
        } else {
            None
        };
        let imu = if opts.decode_imu {
            stream.read_imu(clip.start_sec, clip.end_sec)?
        } else {
            None
        };
        Ok(DecodedSample {
            video,
            audio,
            flow,
            imu,
            label: rec.label.clone(),
            clip_info: clip.clone(),
            video_name: rec.data_path.clone(),
            pathways: None,
        })
    }
}

impl Iterator for DatasetIter<'_> {
    type Item = DecodedSample;

    fn next(&mut self) -> Option<DecodedSample> {
        loop {
            if self.stream.is_none() {
                self.open_next_record()?;
            }
            let clip = self
                .dataset
                .sampler
                .sample(self.last_clip.as_ref(), self.duration, &mut self.rng);
            let advance_record = clip.is_last_clip;
            match self.decode_current(&clip) {
                Ok(sample) => {
                    if advance_record {
                        self.stream = None;
                        self.record_idx += 1;
                    } else {
                        self.last_clip = Some(clip);
                    }
                    match &self.dataset.transform {
                        None => return Some(sample),
                        Some(t) => match t(sample, &mut self.rng) {
                            Ok(s) => return Some(s),
                            Err(err) => {
                                eprintln!("videokit-data: transform failed, skipping: {err}");
                                self.skipped.set(self.skipped.get() + 1);
                                continue;
                            }
                        },
                    }
                }
                Err(err) => {
                    let rec = &self.dataset.records[self.record_idx];
                    eprintln!("videokit-data: skipping {:?}: {err}", rec.data_path);
                    self.skipped.set(self.skipped.get() + 1);
                    self.stream = None;
                    self.record_idx += 1;
                }
            }
        }
    }
}
