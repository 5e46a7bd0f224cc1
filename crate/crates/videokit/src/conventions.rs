//! Canonical modality tensor layouts.
//!
//! Every module in the crate assumes the same conventions: video is
//! `[..., C, T, H, W]`, raw audio is `[..., T]`, and spectrograms are
//! `[..., T, F]`. Leading `...` dimensions (batch and friends) are allowed
//! everywhere; multi-pathway inputs are *sequences* of [`VideoTensor`], never
//! an extra tensor axis.

use crate::tensor::Tensor;
use thiserror::Error;

/// Layout violations reported by [`validate_layout`] and [`convert_layout`].
#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("expected rank >= {expected}, got rank {got}")]
    Rank { expected: usize, got: usize },
    #[error("dimension {axis} ({name}) is {got}, which is not allowed: {reason}")]
    Dim {
        axis: isize,
        name: &'static str,
        got: usize,
        reason: String,
    },
    #[error("tensor contains non-finite values")]
    NonFinite,
    #[error("empty tensor")]
    Empty,
    #[error("unknown layout tag {0:?}")]
    UnknownTag(String),
    #[error("sample rate must be > 0, got {0}")]
    SampleRate(f64),
}

/// Modality selector for [`validate_layout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Video,
    Audio,
    Spectrogram,
}

/// Axis-order tags understood by [`convert_layout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutTag {
    /// Channels, time, height, width — the canonical model-facing layout.
    Cthw,
    /// Time, height, width, channels — the layout most decoders emit.
    Thwc,
}

impl std::str::FromStr for LayoutTag {
    type Err = LayoutError;

    fn from_str(s: &str) -> Result<Self, LayoutError> {
        match s.to_ascii_uppercase().as_str() {
            "CTHW" => Ok(LayoutTag::Cthw),
            "THWC" => Ok(LayoutTag::Thwc),
            other => Err(LayoutError::UnknownTag(other.to_string())),
        }
    }
}

/// A validated video clip in `[..., C, T, H, W]` layout.
///
/// `C` is 1 (gray) or 3 (RGB) for decoded video; 2-channel flow is admitted
/// only through [`validate_video_with_options`] with `allow_flow` set, since
/// no canonical flow layout is published.
#[derive(Debug, Clone)]
pub struct VideoTensor {
    data: Tensor,
}

impl VideoTensor {
    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    /// Channel count (axis -4).
    pub fn channels(&self) -> usize {
        let s = self.data.shape();
        s[s.len() - 4]
    }

    /// Frame count (axis -3).
    pub fn frames(&self) -> usize {
        let s = self.data.shape();
        s[s.len() - 3]
    }

    pub fn height(&self) -> usize {
        let s = self.data.shape();
        s[s.len() - 2]
    }

    pub fn width(&self) -> usize {
        let s = self.data.shape();
        s[s.len() - 1]
    }

    /// Leading `...` dimensions preceding `(C, T, H, W)`.
    pub fn leading_dims(&self) -> &[usize] {
        let s = self.data.shape();
        &s[..s.len() - 4]
    }
}

/// A raw waveform in `[..., T]` layout with its sample rate in Hz.
#[derive(Debug, Clone)]
pub struct AudioWaveform {
    data: Tensor,
    sample_rate: f64,
}

impl AudioWaveform {
    pub fn new(data: Tensor, sample_rate: f64) -> Result<Self, LayoutError> {
        if data.is_empty() {
            return Err(LayoutError::Empty);
        }
        if !(sample_rate > 0.0) {
            return Err(LayoutError::SampleRate(sample_rate));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(LayoutError::NonFinite);
        }
        Ok(Self { data, sample_rate })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Sample count (trailing axis).
    pub fn samples(&self) -> usize {
        *self.data.shape().last().unwrap()
    }
}

/// A spectrogram in `[..., T, F]` layout (time bins by frequency bins).
#[derive(Debug, Clone)]
pub struct Spectrogram {
    data: Tensor,
}

impl Spectrogram {
    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    pub fn time_bins(&self) -> usize {
        let s = self.data.shape();
        s[s.len() - 2]
    }

    pub fn freq_bins(&self) -> usize {
        *self.data.shape().last().unwrap()
    }
}

/// One validated modality value.
#[derive(Debug, Clone)]
pub enum Validated {
    Video(VideoTensor),
    Audio(AudioWaveform),
    Spectrogram(Spectrogram),
}

/// Checks that `x` satisfies the canonical layout for `modality` and wraps it
/// without copying the data.
///
/// Audio validated through this entry point gets a 1 Hz placeholder sample
/// rate; decoders that know the true rate construct [`AudioWaveform`]
/// directly.
pub fn validate_layout(x: Tensor, modality: Modality) -> Result<Validated, LayoutError> {
    match modality {
        Modality::Video => validate_video(x).map(Validated::Video),
        Modality::Audio => AudioWaveform::new(x, 1.0).map(Validated::Audio),
        Modality::Spectrogram => validate_spectrogram(x).map(Validated::Spectrogram),
    }
}

/// Validates a video tensor with the default channel policy (C in {1, 3}).
pub fn validate_video(x: Tensor) -> Result<VideoTensor, LayoutError> {
    validate_video_with_options(x, false)
}

/// Validates a video tensor, optionally admitting 2-channel optical flow.
pub fn validate_video_with_options(x: Tensor, allow_flow: bool) -> Result<VideoTensor, LayoutError> {
    if x.is_empty() {
        return Err(LayoutError::Empty);
    }
    let shape = x.shape();
    if shape.len() < 4 {
        return Err(LayoutError::Rank {
            expected: 4,
            got: shape.len(),
        });
    }
    let trailing = &shape[shape.len() - 4..];
    let (c, t, h, w) = (trailing[0], trailing[1], trailing[2], trailing[3]);
    let channel_ok = c == 1 || c == 3 || (allow_flow && c == 2);
    if !channel_ok {
        return Err(LayoutError::Dim {
            axis: -4,
            name: "C",
            got: c,
            reason: if allow_flow {
                "channels must be 1, 2, or 3 and sit at position -4".to_string()
            } else {
                "channels must be 1 or 3 and sit at position -4".to_string()
            },
        });
    }
    for (axis, name, dim) in [(-3isize, "T", t), (-2, "H", h), (-1, "W", w)] {
        if dim < 1 {
            return Err(LayoutError::Dim {
                axis,
                name,
                got: dim,
                reason: "all spatiotemporal dims must be >= 1".to_string(),
            });
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(LayoutError::NonFinite);
    }
    Ok(VideoTensor { data: x })
}

fn validate_spectrogram(x: Tensor) -> Result<Spectrogram, LayoutError> {
    if x.is_empty() {
        return Err(LayoutError::Empty);
    }
    if x.shape().len() < 2 {
        return Err(LayoutError::Rank {
            expected: 2,
            got: x.shape().len(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(LayoutError::NonFinite);
    }
    Ok(Spectrogram { data: x })
}

/// Permutes the trailing four axes between layout tags.
///
/// The permutation is pure: `convert_layout(convert_layout(x, a, b), b, a)`
/// is elementwise identical to `x`. Converting a layout to itself returns the
/// input unchanged.
pub fn convert_layout(x: Tensor, from: LayoutTag, to: LayoutTag) -> Result<Tensor, LayoutError> {
    if x.shape().len() < 4 {
        return Err(LayoutError::Rank {
            expected: 4,
            got: x.shape().len(),
        });
    }
    if from == to {
        return Ok(x);
    }
    let rank = x.shape().len();
    let lead: Vec<usize> = (0..rank - 4).collect();
    let mut axes = lead;
    let base = rank - 4;
    match (from, to) {
        // (T, H, W, C) -> (C, T, H, W)
        (LayoutTag::Thwc, LayoutTag::Cthw) => {
            axes.extend([base + 3, base, base + 1, base + 2]);
        }
        // (C, T, H, W) -> (T, H, W, C)
        (LayoutTag::Cthw, LayoutTag::Thwc) => {
            axes.extend([base + 1, base + 2, base + 3, base]);
        }
        _ => unreachable!("identical tags handled above"),
    }
    // permuted_axes reinterprets strides; materialize to standard order so
    // downstream reshape-based ops see contiguous data.
    Ok(x.permuted_axes(axes).as_standard_layout().into_owned())
}
