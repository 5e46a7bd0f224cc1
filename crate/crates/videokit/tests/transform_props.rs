//! Property suites for the transform stack: convexity of mixes, temporal
//! consistency, seeded determinism, and the composed recipe pipelines.

use ndarray::{Axis, IxDyn};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use videokit::conventions::validate_video_with_options;
use videokit::data::{ClipInfo, DecodedSample, Label};
use videokit::tensor::Tensor;
use videokit::transforms::*;

fn clip(c: usize, t: usize, h: usize, w: usize, seed: u64) -> videokit::conventions::VideoTensor {
    let mut rng = StdRng::seed_from_u64(seed);
    let data = Tensor::from_shape_fn(IxDyn(&[c, t, h, w]), |_| {
        (rng.random::<f64>() * 255.0).round()
    });
    validate_video_with_options(data, true).unwrap()
}

fn batch(b: usize, seed: u64) -> (Tensor, ndarray::Array2<f64>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let x = Tensor::from_shape_fn(IxDyn(&[b, 3, 4, 8, 8]), |_| rng.random::<f64>());
    let labels: Vec<Label> = (0..b)
        .map(|i| {
            if i % 3 == 0 {
                Label::MultiHot(vec![i % 5, (i + 2) % 5])
            } else {
                Label::Index(i % 5)
            }
        })
        .collect();
    (x, labels_to_one_hot(&labels, 5).unwrap())
}

#[test]
fn mixed_label_rows_sum_to_one_over_100_batches() {
    for seed in 0..100u64 {
        let (x, labels) = batch(4 + (seed % 5) as usize, seed);
        let mut rng = StdRng::seed_from_u64(seed);
        let policy = match seed % 3 {
            0 => MixPolicy::Mixup,
            1 => MixPolicy::Cutmix,
            _ => MixPolicy::Both,
        };
        let (_, mixed) = apply_mix_policy(&x, &labels, policy, 0.8, &mut rng).unwrap();
        for (i, row) in mixed.rows().into_iter().enumerate() {
            assert!(
                (row.sum() - 1.0).abs() <= 1e-6,
                "seed {seed} row {i} sums to {}",
                row.sum()
            );
        }
    }
}

#[test]
fn cutmix_lambda_adj_is_exact_area_ratio() {
    let (x, labels) = batch(2, 42);
    for (y0, y1, x0, x1) in [(0usize, 4usize, 0usize, 4usize), (1, 7, 2, 5), (0, 8, 0, 8)] {
        let cut = CutBox { y0, y1, x0, x1 };
        let (_, mixed) = cutmix_with_box(&x, &labels, cut, &[1, 0]).unwrap();
        let lambda_adj = 1.0 - cut.area() as f64 / 64.0;
        // Row 0 was pure class 0 (multi-hot path not hit for b=2 row 0?).
        // Verify against the mixing identity instead of hard-coded classes.
        let expect = labels.row(0).to_owned() * lambda_adj
            + labels.row(1).to_owned() * (1.0 - lambda_adj);
        for j in 0..5 {
            assert!((mixed[[0, j]] - expect[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn rand_augment_temporal_consistency_instrumented() {
    // Zero per-frame parameter variance: replaying the logged (frozen)
    // parameters on each frame independently reproduces the clip output.
    let v = clip(3, 5, 12, 12, 7);
    for seed in 0..10u64 {
        let (out, log) =
            rand_augment_with_log(&v, 2, 9, &mut StdRng::seed_from_u64(seed)).unwrap();
        for t in 0..5 {
            let frame = v
                .data()
                .view()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap()
                .slice(ndarray::s![.., t..t + 1, .., ..])
                .to_owned();
            let mut fx = frame;
            for op in &log {
                fx = apply_logged_op_to_frame(&fx, op.name, &op.params);
            }
            let got = out
                .data()
                .view()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap()
                .slice(ndarray::s![.., t..t + 1, .., ..])
                .to_owned();
            assert!(
                videokit::tensor::max_abs_diff(&fx.into_dyn(), &got.into_dyn()) < 1e-9,
                "seed {seed} frame {t}"
            );
        }
    }
}

#[test]
fn cutmix_box_is_constant_across_frames() {
    let (x, labels) = batch(2, 3);
    let mut rng = StdRng::seed_from_u64(11);
    let (mixed, _) = cutmix(&x, &labels, 1.0, &mut rng).unwrap();
    let v = x.view().into_dimensionality::<ndarray::Ix5>().unwrap();
    let m = mixed.view().into_dimensionality::<ndarray::Ix5>().unwrap();
    // For each clip, the replaced-pixel mask must be identical on every frame.
    for i in 0..2 {
        let mask_of_frame = |t: usize| -> Vec<bool> {
            let mut mask = Vec::with_capacity(64);
            for y in 0..8 {
                for xx in 0..8 {
                    mask.push(m[[i, 0, t, y, xx]] != v[[i, 0, t, y, xx]]);
                }
            }
            mask
        };
        let m0 = mask_of_frame(0);
        for t in 1..4 {
            assert_eq!(m0, mask_of_frame(t), "clip {i} frame {t} mask differs");
        }
    }
}

#[test]
fn seeded_determinism_is_bit_exact() {
    let v = clip(3, 4, 16, 16, 5);
    let a = rand_augment(&v, 2, 8, &mut StdRng::seed_from_u64(33)).unwrap();
    let b = rand_augment(&v, 2, 8, &mut StdRng::seed_from_u64(33)).unwrap();
    assert_eq!(a.data(), b.data());

    let am = augmix(&v, 3, 0, 1.0, &mut StdRng::seed_from_u64(12)).unwrap();
    let bm = augmix(&v, 3, 0, 1.0, &mut StdRng::seed_from_u64(12)).unwrap();
    assert_eq!(am.data(), bm.data());

    let (x, labels) = batch(4, 0);
    let (ax, al) = mixup(&x, &labels, 0.4, &mut StdRng::seed_from_u64(1)).unwrap();
    let (bx, bl) = mixup(&x, &labels, 0.4, &mut StdRng::seed_from_u64(1)).unwrap();
    assert_eq!(ax, bx);
    assert_eq!(al, bl);
}

fn sample_of(v: videokit::conventions::VideoTensor) -> DecodedSample {
    DecodedSample {
        video: v,
        audio: None,
        flow: None,
        imu: None,
        label: Label::Index(0),
        clip_info: ClipInfo {
            start_sec: 0.0,
            end_sec: 2.0,
            clip_index: 0,
            aug_index: 0,
            is_last_clip: true,
        },
        video_name: "test".into(),
        pathways: None,
    }
}

#[test]
fn val_recipe_shape_contract() {
    let recipe = TransformRecipe {
        mode: Mode::Val,
        crop_size: 224,
        num_frames: 8,
        mean: vec![0.45; 3],
        std: vec![0.225; 3],
        aug_policy: AugPolicy::None,
        mix_policy: MixPolicy::None,
        pathway_alpha: None,
    };
    let transform = create_video_transform(&recipe).unwrap();
    let mut rng = StdRng::seed_from_u64(0);
    // Output dims depend on the recipe only, not the input H x W.
    for (h, w) in [(240, 320), (260, 260), (320, 240)] {
        let out = transform(sample_of(clip(3, 13, h, w, 1)), &mut rng).unwrap();
        assert_eq!(
            out.video.data().shape(),
            &[3, 8, 224, 224],
            "input {h}x{w}"
        );
    }
}

#[test]
fn train_recipe_is_seed_deterministic() {
    let recipe = TransformRecipe {
        mode: Mode::Train,
        crop_size: 64,
        num_frames: 4,
        mean: vec![0.45; 3],
        std: vec![0.225; 3],
        aug_policy: AugPolicy::Randaug,
        mix_policy: MixPolicy::None,
        pathway_alpha: None,
    };
    let transform = create_video_transform(&recipe).unwrap();
    let a = transform(sample_of(clip(3, 8, 80, 100, 2)), &mut StdRng::seed_from_u64(77)).unwrap();
    let b = transform(sample_of(clip(3, 8, 80, 100, 2)), &mut StdRng::seed_from_u64(77)).unwrap();
    assert_eq!(a.video.data(), b.video.data());
}

#[test]
fn packing_recipe_emits_two_pathways() {
    let recipe = TransformRecipe {
        mode: Mode::Val,
        crop_size: 64,
        num_frames: 32,
        mean: vec![0.45; 3],
        std: vec![0.225; 3],
        aug_policy: AugPolicy::None,
        mix_policy: MixPolicy::None,
        pathway_alpha: Some(4),
    };
    let transform = create_video_transform(&recipe).unwrap();
    let mut rng = StdRng::seed_from_u64(0);
    let out = transform(sample_of(clip(3, 64, 80, 80, 3)), &mut rng).unwrap();
    let pathways = out.pathways.expect("packed output");
    assert_eq!(pathways.len(), 2);
    assert_eq!(pathways[0].frames(), 8);
    assert_eq!(pathways[1].frames(), 32);
    // Slow frames equal fast frames at strided indices.
    for ti in 0..8 {
        assert_eq!(
            pathways[0].data().index_axis(Axis(1), ti),
            pathways[1].data().index_axis(Axis(1), ti * 4)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Mixup outputs stay inside the elementwise interval of the two sources.
    #[test]
    fn mixup_is_convex(seed in 0u64..500) {
        let (x, labels) = batch(3, seed);
        let mut rng = StdRng::seed_from_u64(seed);
        let (mixed, ml) = mixup(&x, &labels, 0.5, &mut rng).unwrap();
        let v = x.view().into_dimensionality::<ndarray::Ix5>().unwrap();
        let m = mixed.view().into_dimensionality::<ndarray::Ix5>().unwrap();
        // Bounds must hold pairwise; without knowing the permutation, check
        // against global min/max per position across the batch.
        for c in 0..3 {
            for t in 0..4 {
                for y in 0..8 {
                    for xx in 0..8 {
                        let vals: Vec<f64> = (0..3).map(|i| v[[i, c, t, y, xx]]).collect();
                        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        for i in 0..3 {
                            let got = m[[i, c, t, y, xx]];
                            prop_assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
                        }
                    }
                }
            }
        }
        for row in ml.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    /// uniform_temporal_indices: right length, nondecreasing, in range.
    #[test]
    fn temporal_indices_properties(t in 1usize..200, n in 1usize..64) {
        let idx = videokit::data::uniform_temporal_indices(t, n).unwrap();
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(idx.iter().all(|&i| i < t));
    }
}
