//! Temporal clip sampling policies.

use super::{DataError, Result};
use rand::rngs::StdRng;
use rand::Rng;

/// One sampled temporal window.
///
/// The window is nominal: `end_sec - start_sec` always equals the configured
/// clip duration, even when it overruns the video (decoders clamp the read
/// and pad by repeating the last frame).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipInfo {
    pub start_sec: f64,
    pub end_sec: f64,
    pub clip_index: usize,
    pub aug_index: usize,
    pub is_last_clip: bool,
}

/// Sampling policy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipStrategy {
    /// Tiles `[0, duration)` contiguously with `max(1, ceil(duration/d))`
    /// clips; the test-time convention.
    Uniform,
    /// One clip per video with a uniformly random start in
    /// `[0, max(0, duration - d)]`; the train-time convention.
    Random,
    /// A fixed number of evenly spaced clips per video.
    ConstantClipsPerVideo,
}

/// A stateless clip sampler: the next clip is a pure function of the
/// previously returned clip (if any) and the video duration.
#[derive(Debug, Clone)]
pub struct ClipSampler {
    strategy: ClipStrategy,
    clip_duration: f64,
    clips_per_video: Option<usize>,
}

/// Builds a sampler from a strategy name, mirroring the string-keyed factory
/// convention (`"uniform"`, `"random"`, `"constant_clips_per_video"`).
pub fn make_clip_sampler(
    strategy: &str,
    clip_duration: f64,
    clips_per_video: Option<usize>,
) -> Result<ClipSampler> {
    let strategy = match strategy {
        "uniform" => ClipStrategy::Uniform,
        "random" => ClipStrategy::Random,
        "constant_clips_per_video" => ClipStrategy::ConstantClipsPerVideo,
        other => {
            return Err(DataError::Config(format!(
                "unknown clip sampling strategy {other:?}"
            )))
        }
    };
    ClipSampler::new(strategy, clip_duration, clips_per_video)
}

impl ClipSampler {
    pub fn new(
        strategy: ClipStrategy,
        clip_duration: f64,
        clips_per_video: Option<usize>,
    ) -> Result<Self> {
        if !(clip_duration > 0.0) {
            return Err(DataError::Config(format!(
                "clip_duration must be > 0, got {clip_duration}"
            )));
        }
        if strategy == ClipStrategy::ConstantClipsPerVideo && clips_per_video.is_none() {
            return Err(DataError::Config(
                "constant_clips_per_video requires clips_per_video".into(),
            ));
        }
        if let Some(0) = clips_per_video {
            return Err(DataError::Config("clips_per_video must be >= 1".into()));
        }
        Ok(ClipSampler {
            strategy,
            clip_duration,
            clips_per_video,
        })
    }

    pub fn clip_duration(&self) -> f64 {
        self.clip_duration
    }

    pub fn strategy(&self) -> ClipStrategy {
        self.strategy
    }

    /// Number of clips this sampler will emit for a video of `duration_sec`.
    pub fn clips_for(&self, duration_sec: f64) -> usize {
        match self.strategy {
            ClipStrategy::Uniform => {
                ((duration_sec / self.clip_duration) - 1e-9).ceil().max(1.0) as usize
            }
            ClipStrategy::Random => 1,
            ClipStrategy::ConstantClipsPerVideo => self.clips_per_video.unwrap(),
        }
    }

    /// Samples the clip following `last` (or the first clip when `None`).
    pub fn sample(
        &self,
        last: Option<&ClipInfo>,
        video_duration_sec: f64,
        rng: &mut StdRng,
    ) -> ClipInfo {
        let index = last.map_or(0, |c| c.clip_index + 1);
        let d = self.clip_duration;
        match self.strategy {
            ClipStrategy::Uniform => {
                let n = self.clips_for(video_duration_sec);
                let start = index as f64 * d;
                ClipInfo {
                    start_sec: start,
                    end_sec: start + d,
                    clip_index: index,
                    aug_index: 0,
                    is_last_clip: index + 1 >= n,
                }
            }
            ClipStrategy::Random => {
                let span = (video_duration_sec - d).max(0.0);
                let start = if span > 0.0 {
                    rng.random::<f64>() * span
                } else {
                    0.0
                };
                ClipInfo {
                    start_sec: start,
                    end_sec: start + d,
                    clip_index: 0,
                    aug_index: 0,
                    is_last_clip: true,
                }
            }
            ClipStrategy::ConstantClipsPerVideo => {
                let n = self.clips_per_video.unwrap();
                let delta = (video_duration_sec - d).max(0.0) / (n.max(2) - 1) as f64;
                let start = index as f64 * delta;
                ClipInfo {
                    start_sec: start,
                    end_sec: start + d,
                    clip_index: index,
                    aug_index: 0,
                    is_last_clip: index + 1 >= n,
                }
            }
        }
    }

    /// Signature-compatible adapter: derives the clip index from the last
    /// clip's end time. Exact for uniform (index = end/d) and random (single
    /// clip); for constant-clips it requires distinct start times.
    pub fn sample_at(
        &self,
        last_clip_end_sec: f64,
        video_duration_sec: f64,
        rng: &mut StdRng,
    ) -> ClipInfo {
        let d = self.clip_duration;
        let last = if last_clip_end_sec <= 0.0 {
            None
        } else {
            let index = match self.strategy {
                ClipStrategy::Uniform => {
                    ((last_clip_end_sec / d).round() as usize).saturating_sub(1)
                }
                ClipStrategy::Random => 0,
                ClipStrategy::ConstantClipsPerVideo => {
                    let n = self.clips_per_video.unwrap();
                    let delta = (video_duration_sec - d).max(0.0) / (n.max(2) - 1) as f64;
                    if delta > 0.0 {
                        ((last_clip_end_sec - d) / delta).round() as usize
                    } else {
                        0
                    }
                }
            };
            Some(ClipInfo {
                start_sec: last_clip_end_sec - d,
                end_sec: last_clip_end_sec,
                clip_index: index,
                aug_index: 0,
                is_last_clip: false,
            })
        };
        self.sample(last.as_ref(), video_duration_sec, rng)
    }

    /// Convenience: all clips of one video in order.
    pub fn sample_all(&self, video_duration_sec: f64, rng: &mut StdRng) -> Vec<ClipInfo> {
        let mut clips = Vec::new();
        let mut last: Option<ClipInfo> = None;
        loop {
            let clip = self.sample(last.as_ref(), video_duration_sec, rng);
            let done = clip.is_last_clip;
            clips.push(clip);
            if done {
                break;
            }
            last = clips.last().cloned();
        }
        clips
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> StdRng {
        StdRng::seed_from_u64(11)
    }

    #[test]
    fn uniform_partitions_ten_seconds() {
        let sampler = make_clip_sampler("uniform", 2.0, None).unwrap();
        let clips = sampler.sample_all(10.0, &mut rng());
        assert_eq!(clips.len(), 5);
        for (i, c) in clips.iter().enumerate() {
            assert!((c.start_sec - 2.0 * i as f64).abs() < 1e-9);
            assert!((c.end_sec - 2.0 * (i + 1) as f64).abs() < 1e-9);
            assert_eq!(c.clip_index, i);
            assert_eq!(c.is_last_clip, i == 4);
        }
    }

    #[test]
    fn uniform_short_video_yields_one_nominal_clip() {
        let sampler = make_clip_sampler("uniform", 2.0, None).unwrap();
        let clips = sampler.sample_all(1.0, &mut rng());
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].start_sec, 0.0);
        assert_eq!(clips[0].end_sec, 2.0);
        assert!(clips[0].is_last_clip);
    }

    #[test]
    fn random_start_is_uniform_over_valid_range() {
        // KS test against U[0, 8] over 10^4 draws.
        let sampler = make_clip_sampler("random", 2.0, None).unwrap();
        let mut r = rng();
        let n = 10_000;
        let mut starts: Vec<f64> = (0..n)
            .map(|_| {
                let c = sampler.sample(None, 10.0, &mut r);
                assert!(c.is_last_clip);
                assert!((0.0..=8.0).contains(&c.start_sec));
                c.start_sec / 8.0
            })
            .collect();
        starts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d_stat: f64 = 0.0;
        for (i, s) in starts.iter().enumerate() {
            let emp_hi = (i + 1) as f64 / n as f64;
            let emp_lo = i as f64 / n as f64;
            d_stat = d_stat.max((emp_hi - s).abs()).max((s - emp_lo).abs());
        }
        // 0.1% critical value: 1.95 / sqrt(n) ~ 0.0195.
        assert!(d_stat < 0.0195, "KS statistic {d_stat} too large");
    }

    #[test]
    fn sample_at_matches_sample_for_uniform() {
        let sampler = make_clip_sampler("uniform", 2.0, None).unwrap();
        let mut r = rng();
        let via_last = sampler.sample_all(10.0, &mut r);
        let mut end = 0.0;
        for want in &via_last {
            let got = sampler.sample_at(end, 10.0, &mut r);
            assert_eq!(&got, want);
            end = got.end_sec;
        }
    }

    #[test]
    fn constant_clips_are_evenly_spaced() {
        let sampler = make_clip_sampler("constant_clips_per_video", 2.0, Some(5)).unwrap();
        let clips = sampler.sample_all(10.0, &mut rng());
        assert_eq!(clips.len(), 5);
        for (i, c) in clips.iter().enumerate() {
            assert!((c.start_sec - 2.0 * i as f64).abs() < 1e-9);
        }
        assert!(clips.last().unwrap().is_last_clip);
    }

    #[test]
    fn config_errors() {
        assert!(make_clip_sampler("fibonacci", 2.0, None).is_err());
        assert!(make_clip_sampler("constant_clips_per_video", 2.0, None).is_err());
        assert!(make_clip_sampler("uniform", 0.0, None).is_err());
    }

    #[test]
    fn nominal_duration_invariant() {
        for (strategy, cps) in [
            ("uniform", None),
            ("random", None),
            ("constant_clips_per_video", Some(3)),
        ] {
            let sampler = make_clip_sampler(strategy, 1.5, cps).unwrap();
            for c in sampler.sample_all(4.2, &mut rng()) {
                assert!((c.end_sec - c.start_sec - 1.5).abs() < 1e-6);
            }
        }
    }
}
