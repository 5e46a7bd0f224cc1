//! End-to-end data pipeline checks on generated fixtures: frame directories,
//! WAV audio, flow pairs, IMU sidecars, sharding, and sampler properties.

use image::{GrayImage, Rgb, RgbImage};
use ndarray::Axis;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use std::path::{Path, PathBuf};
use tempfile::TempDir;
use videokit::data::{
    frame_video_dataset, load_imu_sidecar, make_clip_sampler, parse_record_list,
    shard_for_worker, DatasetOptions, Label, LabeledVideoRecord,
};

/// Writes `n` frames whose red channel encodes the frame index.
fn write_frames(dir: &Path, n: usize, size: (u32, u32)) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let mut img = RgbImage::new(size.0, size.1);
        for p in img.pixels_mut() {
            *p = Rgb([i as u8, 7, 200]);
        }
        img.save(dir.join(format!("{i:06}.png"))).unwrap();
    }
}

fn write_video_dir(root: &Path, name: &str, n_frames: usize) -> PathBuf {
    let dir = root.join(name);
    write_frames(&dir, n_frames, (16, 12));
    dir
}

#[test]
fn frame_dataset_decodes_timestamped_clips() {
    let tmp = TempDir::new().unwrap();
    // 40 frames at 10 fps -> 4 s; uniform d=2 s -> 2 clips of 20 frames.
    let dir = write_video_dir(tmp.path(), "v0", 40);
    let records = vec![LabeledVideoRecord::new(dir.display().to_string(), Label::Index(3))];
    let sampler = make_clip_sampler("uniform", 2.0, None).unwrap();
    let ds = frame_video_dataset(records, 10.0, sampler, None, DatasetOptions::default()).unwrap();
    let samples: Vec<_> = ds.iter().collect();
    assert_eq!(samples.len(), 2);
    for (ci, s) in samples.iter().enumerate() {
        assert_eq!(s.video.frames(), 20);
        assert_eq!(s.clip_info.clip_index, ci);
        assert_eq!(s.label, Label::Index(3));
        // Frame i maps to timestamp i / fps: red channel encodes the index.
        for t in 0..20 {
            let expected = (ci * 20 + t) as f64;
            let got = s.video.data()[[0, t, 0, 0]];
            assert_eq!(got, expected, "clip {ci} frame {t}");
        }
    }
}

#[test]
fn single_frame_video_pads_by_repeating() {
    let tmp = TempDir::new().unwrap();
    let dir = write_video_dir(tmp.path(), "tiny", 1);
    let records = vec![LabeledVideoRecord::new(dir.display().to_string(), Label::Index(0))];
    let sampler = make_clip_sampler("uniform", 1.0, None).unwrap();
    let ds = frame_video_dataset(records, 30.0, sampler, None, DatasetOptions::default()).unwrap();
    let samples: Vec<_> = ds.iter().collect();
    assert_eq!(samples.len(), 1);
    assert_eq!(samples[0].video.frames(), 30);
    let first = samples[0].video.data().index_axis(Axis(1), 0).to_owned();
    for t in 1..30 {
        assert_eq!(samples[0].video.data().index_axis(Axis(1), t), first);
    }
}

#[test]
fn two_videos_uniform_clip_index_sequence() {
    let tmp = TempDir::new().unwrap();
    // 2 videos of 4 s, uniform d=2 s -> 4 samples, clip indices (0, 1, 0, 1).
    let d0 = write_video_dir(tmp.path(), "a", 8);
    let d1 = write_video_dir(tmp.path(), "b", 8);
    let records = vec![
        LabeledVideoRecord::new(d0.display().to_string(), Label::Index(0)),
        LabeledVideoRecord::new(d1.display().to_string(), Label::Index(1)),
    ];
    let sampler = make_clip_sampler("uniform", 2.0, None).unwrap();
    let ds = frame_video_dataset(records, 2.0, sampler, None, DatasetOptions::default()).unwrap();
    let indices: Vec<usize> = ds.iter().map(|s| s.clip_info.clip_index).collect();
    assert_eq!(indices, vec![0, 1, 0, 1]);
}

#[test]
fn corrupt_record_is_skipped_and_counted() {
    let tmp = TempDir::new().unwrap();
    let good1 = write_video_dir(tmp.path(), "good1", 4);
    let bad = tmp.path().join("bad");
    std::fs::create_dir_all(&bad).unwrap();
    std::fs::write(bad.join("000000.png"), b"not a png at all").unwrap();
    let good2 = write_video_dir(tmp.path(), "good2", 4);
    let records = vec![
        LabeledVideoRecord::new(good1.display().to_string(), Label::Index(0)),
        LabeledVideoRecord::new(bad.display().to_string(), Label::Index(1)),
        LabeledVideoRecord::new(good2.display().to_string(), Label::Index(2)),
    ];
    let sampler = make_clip_sampler("uniform", 2.0, None).unwrap();
    let ds = frame_video_dataset(records, 2.0, sampler, None, DatasetOptions::default()).unwrap();
    let iter = ds.iter();
    let counter = iter.skip_counter();
    let samples: Vec<_> = iter.collect();
    // Two good videos' worth of samples, one skip.
    assert_eq!(samples.len(), 2);
    assert_eq!(counter.get(), 1);
    assert!(samples.iter().all(|s| s.label != Label::Index(1)));
}

#[test]
fn mixed_frame_sizes_are_an_error_not_a_resize() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("mixed");
    write_frames(&dir, 2, (16, 12));
    // Overwrite the second frame with a larger image.
    let mut img = RgbImage::new(20, 12);
    for p in img.pixels_mut() {
        *p = Rgb([1, 1, 1]);
    }
    img.save(dir.join("000001.png")).unwrap();
    let records = vec![LabeledVideoRecord::new(dir.display().to_string(), Label::Index(0))];
    let sampler = make_clip_sampler("uniform", 1.0, None).unwrap();
    let ds = frame_video_dataset(records, 2.0, sampler, None, DatasetOptions::default()).unwrap();
    let iter = ds.iter();
    let counter = iter.skip_counter();
    let samples: Vec<_> = iter.collect();
    assert!(samples.is_empty());
    assert_eq!(counter.get(), 1);
}

#[test]
fn missing_path_raised_eagerly_when_enabled() {
    let records = vec![LabeledVideoRecord::new("/nonexistent/path", Label::Index(0))];
    let sampler = make_clip_sampler("uniform", 1.0, None).unwrap();
    let err = frame_video_dataset(
        records,
        2.0,
        sampler,
        None,
        DatasetOptions {
            eager_path_check: true,
            ..Default::default()
        },
    );
    assert!(err.is_err());
}

fn write_wav_pcm16(path: &Path, samples: &[i16], rate: u32) {
    let mut bytes: Vec<u8> = Vec::new();
    let data_len = (samples.len() * 2) as u32;
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&rate.to_le_bytes());
    bytes.extend_from_slice(&(rate * 2).to_le_bytes());
    bytes.extend_from_slice(&2u16.to_le_bytes());
    bytes.extend_from_slice(&16u16.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn multimodal_sidecars_are_decoded_per_clip() {
    let tmp = TempDir::new().unwrap();
    let dir = write_video_dir(tmp.path(), "multi", 20); // 2 s at 10 fps
    // Audio: 2 s of PCM16 at 100 Hz.
    let samples: Vec<i16> = (0..200).map(|i| (i * 50) as i16).collect();
    write_wav_pcm16(&dir.join("audio.wav"), &samples, 100);
    // IMU: 50 Hz for 2 s.
    let mut imu = String::from("t,ax,ay,az,gx,gy,gz\n");
    for i in 0..100 {
        imu.push_str(&format!("{},0.1,0.2,9.8,0,0,0.5\n", i as f64 / 50.0));
    }
    std::fs::write(dir.join("imu.csv"), imu).unwrap();
    // Flow: grayscale u/v frame dirs.
    for sub in ["flow_u", "flow_v"] {
        let fdir = dir.join(sub);
        std::fs::create_dir_all(&fdir).unwrap();
        for i in 0..20 {
            let img = GrayImage::from_pixel(16, 12, image::Luma([128 + i as u8]));
            img.save(fdir.join(format!("{i:06}.png"))).unwrap();
        }
    }

    let records = vec![LabeledVideoRecord::new(dir.display().to_string(), Label::Index(0))];
    let sampler = make_clip_sampler("uniform", 1.0, None).unwrap();
    let ds = frame_video_dataset(records, 10.0, sampler, None, DatasetOptions::default()).unwrap();
    let samples: Vec<_> = ds.iter().collect();
    assert_eq!(samples.len(), 2);
    for (ci, s) in samples.iter().enumerate() {
        let audio = s.audio.as_ref().expect("audio decoded");
        assert_eq!(audio.samples(), 100); // 1 s at 100 Hz
        let imu = s.imu.as_ref().expect("imu decoded");
        assert_eq!(imu.nrows(), 50); // 1 s at 50 Hz
        let flow = s.flow.as_ref().expect("flow decoded");
        assert_eq!(flow.channels(), 2);
        assert_eq!(flow.frames(), 10);
        // Flow values recentred around zero: frame i stored 128 + i.
        assert_eq!(flow.data()[[0, 0, 0, 0]], (ci * 10) as f64);
    }
}

#[test]
fn record_list_round_trip() {
    let tmp = TempDir::new().unwrap();
    let list = tmp.path().join("list.csv");
    std::fs::write(&list, "clips/a,3,4.5\nclips/b 7\nclips/c,1;2,2.0\n").unwrap();
    let records = parse_record_list(&list, Some(10)).unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(records[1].label, Label::Index(7));
    assert_eq!(records[2].label, Label::MultiHot(vec![1, 2]));
    // Labels outside the class count are rejected.
    std::fs::write(&list, "clips/a,99\n").unwrap();
    assert!(parse_record_list(&list, Some(10)).is_err());
}

#[test]
fn imu_sidecar_file_window() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("imu.csv");
    let mut text = String::from("t,ax,ay,az,gx,gy,gz\n");
    for i in 0..300 {
        text.push_str(&format!("{},1,2,3,4,5,6\n", i as f64 / 100.0));
    }
    std::fs::write(&path, text).unwrap();
    let rows = load_imu_sidecar(&path, (1.0, 2.0)).unwrap();
    assert_eq!(rows.nrows(), 100);
    let empty = load_imu_sidecar(&path, (10.0, 11.0)).unwrap();
    assert_eq!(empty.nrows(), 0);
}

#[test]
fn shard_union_equals_unsharded_multiset() {
    let tmp = TempDir::new().unwrap();
    let mut records = Vec::new();
    for i in 0..5 {
        let dir = write_video_dir(tmp.path(), &format!("v{i}"), 4 + 2 * i);
        records.push(LabeledVideoRecord::new(dir.display().to_string(), Label::Index(i)));
    }
    let sampler = make_clip_sampler("uniform", 1.0, None).unwrap();

    let collect = |records: Vec<LabeledVideoRecord>| -> Vec<(String, usize)> {
        let ds = frame_video_dataset(
            records,
            2.0,
            make_clip_sampler("uniform", 1.0, None).unwrap(),
            None,
            DatasetOptions::default(),
        )
        .unwrap();
        ds.iter()
            .map(|s| (s.video_name.clone(), s.clip_info.clip_index))
            .collect()
    };
    let _ = sampler;

    let mut unsharded = collect(records.clone());
    let mut sharded: Vec<(String, usize)> = Vec::new();
    for w in 0..3 {
        sharded.extend(collect(shard_for_worker(&records, w, 3).unwrap()));
    }
    unsharded.sort();
    sharded.sort();
    assert_eq!(unsharded, sharded);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Uniform sampler tiles [0, duration) contiguously without overlap and
    /// flags exactly one last clip.
    #[test]
    fn uniform_sampler_tiles_duration(
        duration in 0.05f64..60.0,
        clip in 0.05f64..10.0,
    ) {
        let sampler = make_clip_sampler("uniform", clip, None).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        let clips = sampler.sample_all(duration, &mut rng);
        // Contiguous tiling from zero.
        prop_assert!((clips[0].start_sec).abs() < 1e-9);
        for pair in clips.windows(2) {
            prop_assert!((pair[1].start_sec - pair[0].end_sec).abs() < 1e-9);
        }
        // Nominal length everywhere.
        for c in &clips {
            prop_assert!((c.end_sec - c.start_sec - clip).abs() < 1e-6);
        }
        // Covers the duration with less than one clip of slack.
        let last_end = clips.last().unwrap().end_sec;
        prop_assert!(last_end >= duration - 1e-9);
        prop_assert!(last_end < duration + clip + 1e-9);
        // Exactly one last clip, at the end.
        prop_assert_eq!(clips.iter().filter(|c| c.is_last_clip).count(), 1);
        prop_assert!(clips.last().unwrap().is_last_clip);
    }

    /// Shards partition any record set with near-even sizes.
    #[test]
    fn shards_partition(n in 1usize..200, workers in 1usize..17) {
        let records: Vec<usize> = (0..n).collect();
        let mut union = Vec::new();
        let mut sizes = Vec::new();
        for w in 0..workers {
            let shard = shard_for_worker(&records, w, workers).unwrap();
            sizes.push(shard.len());
            union.extend(shard);
        }
        prop_assert_eq!(union, records);
        let max = *sizes.iter().max().unwrap();
        let min = *sizes.iter().min().unwrap();
        prop_assert!(max - min <= 1);
    }

    /// Decoded frame count for (duration d, fps f) is within one frame of
    /// round(d * f).
    #[test]
    fn frame_count_matches_rate(fps in 1.0f64..60.0, d in 0.1f64..4.0) {
        let n = videokit::data::uniform_temporal_indices(10, 10).unwrap();
        prop_assert_eq!(n.len(), 10); // sanity on the helper itself
        // Window [0, d) over a long video.
        let total = (fps * 100.0) as usize;
        let idx: Vec<usize> = (0..total)
            .filter(|&i| {
                let t = i as f64 / fps;
                t >= -1e-9 && t < d - 1e-9
            })
            .collect();
        let expected = (d * fps).round();
        prop_assert!((idx.len() as f64 - expected).abs() <= 1.0);
    }
}
