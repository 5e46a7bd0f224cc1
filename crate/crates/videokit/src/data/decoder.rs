//! Pluggable decoder interface plus the bundled frame-directory backend.
//!
//! The bundled backend treats a record path as a directory:
//!
//! - frames: `{frame:06d}.jpg|png` (any lexicographically ordered names work)
//! - audio sidecar: `audio.wav` (PCM16 or float32 WAV)
//! - optical flow: `flow_u/` + `flow_v/` grayscale frame directories
//! - IMU sidecar: `imu.csv`
//!
//! Streams are single-consumer: one worker per open stream.

use super::{DataError, Result};
use crate::conventions::{validate_video_with_options, AudioWaveform, VideoTensor};
use crate::tensor::Tensor;
use ndarray::{Array2, IxDyn};
use std::path::{Path, PathBuf};

/// Opens media paths into readable streams.
pub trait DecoderBackend: Send + Sync {
    fn open(&self, data_path: &Path) -> Result<Box<dyn MediaStream>>;
}

/// One opened container: metadata plus windowed reads per modality.
pub trait MediaStream {
    fn duration_sec(&self) -> f64;

    /// Decodes video for `[start, end)`. Reads past the real duration are
    /// clamped and padded by repeating the last frame, so the returned clip
    /// always holds `round((end - start) * fps)` frames (at least one).
    fn read_video(&mut self, start_sec: f64, end_sec: f64) -> Result<VideoTensor>;

    fn read_audio(&mut self, _start_sec: f64, _end_sec: f64) -> Result<Option<AudioWaveform>> {
        Ok(None)
    }

    fn read_flow(&mut self, _start_sec: f64, _end_sec: f64) -> Result<Option<VideoTensor>> {
        Ok(None)
    }

    fn read_imu(&mut self, _start_sec: f64, _end_sec: f64) -> Result<Option<Array2<f64>>> {
        Ok(None)
    }
}

/// Backend for pre-decoded videos stored as image-file directories.
#[derive(Debug, Clone)]
pub struct FrameDirBackend {
    fps: f64,
}

impl FrameDirBackend {
    pub fn new(fps: f64) -> Result<Self> {
        if !(fps > 0.0) {
            return Err(DataError::Config(format!("fps must be > 0, got {fps}")));
        }
        Ok(FrameDirBackend { fps })
    }
}

impl DecoderBackend for FrameDirBackend {
    fn open(&self, data_path: &Path) -> Result<Box<dyn MediaStream>> {
        let frames = list_frames(data_path)?;
        if frames.is_empty() {
            return Err(DataError::EmptyDir(data_path.display().to_string()));
        }
        let flow = {
            let u = data_path.join("flow_u");
            let v = data_path.join("flow_v");
            if u.is_dir() && v.is_dir() {
                Some((list_frames(&u)?, list_frames(&v)?))
            } else {
                None
            }
        };
        Ok(Box::new(FrameDirStream {
            fps: self.fps,
            frames,
            flow,
            audio: read_wav_if_present(&data_path.join("audio.wav"))?,
            imu_path: data_path.join("imu.csv"),
        }))
    }
}

fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(DataError::Path(dir.display().to_string()));
    }
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
                .unwrap_or(false)
        })
        .collect();
    // Lexicographic order is temporal order by contract.
    frames.sort();
    Ok(frames)
}

struct FrameDirStream {
    fps: f64,
    frames: Vec<PathBuf>,
    flow: Option<(Vec<PathBuf>, Vec<PathBuf>)>,
    audio: Option<AudioWaveform>,
    imu_path: PathBuf,
}

/// Frame indices for `[start, end)` under the `i / fps` timestamp mapping,
/// padded by repeating the last in-range frame up to the nominal count.
fn window_indices(n_frames: usize, fps: f64, start: f64, end: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n_frames)
        .filter(|&i| {
            let t = i as f64 / fps;
            t >= start - 1e-9 && t < end - 1e-9
        })
        .collect();
    let target = (((end - start) * fps).round() as usize).max(1);
    if idx.is_empty() {
        // Window beyond the recording: repeat the final frame.
        idx.push(n_frames - 1);
    }
    while idx.len() < target {
        idx.push(*idx.last().unwrap());
    }
    idx
}

fn load_image_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path)
        .map_err(|e| DataError::ImageRead(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.into_raw().into_iter().map(f64::from).collect()))
}

fn load_image_rgb(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path)
        .map_err(|e| DataError::ImageRead(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.into_raw().into_iter().map(f64::from).collect()))
}

impl FrameDirStream {
    fn decode_frames(&self, indices: &[usize]) -> Result<Tensor> {
        let t = indices.len();
        let mut data: Option<Tensor> = None;
        let (mut h0, mut w0) = (0usize, 0usize);
        for (ti, &fi) in indices.iter().enumerate() {
            let (h, w, rgb) = load_image_rgb(&self.frames[fi])?;
            let out = match &mut data {
                None => {
                    h0 = h;
                    w0 = w;
                    data = Some(Tensor::zeros(IxDyn(&[3, t, h, w])));
                    data.as_mut().unwrap()
                }
                Some(d) => {
                    if h != h0 || w != w0 {
                        return Err(DataError::ImageRead(format!(
                            "frame size mismatch in {}: {}x{} vs {}x{} (no silent resize)",
                            self.frames[fi].display(),
                            h,
                            w,
                            h0,
                            w0
                        )));
                    }
                    d
                }
            };
            // Image rows are (y, x, channel); destination is (c, t, y, x).
            for y in 0..h {
                for x in 0..w {
                    let base = (y * w + x) * 3;
                    out[[0, ti, y, x]] = rgb[base];
                    out[[1, ti, y, x]] = rgb[base + 1];
                    out[[2, ti, y, x]] = rgb[base + 2];
                }
            }
        }
        Ok(data.unwrap())
    }
}

impl MediaStream for FrameDirStream {
    fn duration_sec(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    fn read_video(&mut self, start_sec: f64, end_sec: f64) -> Result<VideoTensor> {
        let indices = window_indices(self.frames.len(), self.fps, start_sec, end_sec);
        let data = self.decode_frames(&indices)?;
        validate_video_with_options(data, false)
            .map_err(|e| DataError::Decode(format!("decoded clip failed validation: {e}")))
    }

    fn read_audio(&mut self, start_sec: f64, end_sec: f64) -> Result<Option<AudioWaveform>> {
        let Some(full) = &self.audio else {
            return Ok(None);
        };
        let sr = full.sample_rate();
        let n = full.samples();
        let lo = ((start_sec * sr) as usize).min(n);
        let hi = ((end_sec * sr) as usize).min(n);
        if hi <= lo {
            return Ok(None);
        }
        let data = full.data();
        let window = data
            .slice_axis(
                ndarray::Axis(data.ndim() - 1),
                ndarray::Slice::from(lo..hi),
            )
            .to_owned();
        Ok(Some(AudioWaveform::new(window, sr).map_err(|e| {
            DataError::Decode(format!("audio window failed validation: {e}"))
        })?))
    }

    fn read_flow(&mut self, start_sec: f64, end_sec: f64) -> Result<Option<VideoTensor>> {
        let Some((u_frames, v_frames)) = &self.flow else {
            return Ok(None);
        };
        let n = u_frames.len().min(v_frames.len());
        if n == 0 {
            return Ok(None);
        }
        let indices = window_indices(n, self.fps, start_sec, end_sec);
        let t = indices.len();
        let mut data: Option<Tensor> = None;
        let (mut h0, mut w0) = (0usize, 0usize);
        for (ti, &fi) in indices.iter().enumerate() {
            for (ci, frames) in [u_frames, v_frames].into_iter().enumerate() {
                let (h, w, gray) = load_image_gray(&frames[fi])?;
                let out = match &mut data {
                    None => {
                        h0 = h;
                        w0 = w;
                        data = Some(Tensor::zeros(IxDyn(&[2, t, h, w])));
                        data.as_mut().unwrap()
                    }
                    Some(d) => {
                        if h != h0 || w != w0 {
                            return Err(DataError::ImageRead(
                                "flow frame size mismatch".into(),
                            ));
                        }
                        d
                    }
                };
                for y in 0..h {
                    for x in 0..w {
                        // Flow stored as 8-bit around 128; recenter to +/-.
                        out[[ci, ti, y, x]] = gray[y * w + x] - 128.0;
                    }
                }
            }
        }
        let flow = validate_video_with_options(data.unwrap(), true)
            .map_err(|e| DataError::Decode(format!("flow failed validation: {e}")))?;
        Ok(Some(flow))
    }

    fn read_imu(&mut self, start_sec: f64, end_sec: f64) -> Result<Option<Array2<f64>>> {
        if !self.imu_path.is_file() {
            return Ok(None);
        }
        Ok(Some(super::imu::load_imu_sidecar(
            &self.imu_path,
            (start_sec, end_sec),
        )?))
    }
}

fn read_wav_if_present(path: &Path) -> Result<Option<AudioWaveform>> {
    if !path.is_file() {
        return Ok(None);
    }
    Ok(Some(read_wav(path)?))
}

/// Minimal RIFF/WAVE reader: PCM16 and float32, any channel count.
/// Multichannel audio keeps channels as the leading axis of `[..., T]`.
pub(crate) fn read_wav(path: &Path) -> Result<AudioWaveform> {
    let bytes = std::fs::read(path)?;
    let err = |msg: &str| DataError::Decode(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(err("not a RIFF/WAVE file"));
    }
    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(err("fmt chunk too short"));
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos += 8 + size + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| err("missing fmt chunk"))?;
    let data = data.ok_or_else(|| err("missing data chunk"))?;
    let channels = channels as usize;
    if channels == 0 {
        return Err(err("zero channels"));
    }
    let samples: Vec<f64> = match (format, bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (3, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        other => return Err(err(&format!("unsupported WAV format {other:?}"))),
    };
    let frames = samples.len() / channels;
    if frames == 0 {
        return Err(err("no audio frames"));
    }
    let tensor = if channels == 1 {
        Tensor::from_shape_vec(IxDyn(&[frames]), samples[..frames].to_vec()).unwrap()
    } else {
        // Interleaved -> (C, T).
        let mut out = Tensor::zeros(IxDyn(&[channels, frames]));
        for (i, &s) in samples.iter().enumerate().take(frames * channels) {
            out[[i % channels, i / channels]] = s;
        }
        out
    };
    AudioWaveform::new(tensor, rate as f64)
        .map_err(|e| DataError::Decode(format!("{}: {e}", path.display())))
}
