use std::fs;

use framepred::compute::Tensor;
use framepred::data::{
    denormalize, load_clip_tree, load_frame_sequence, motion_score, normalize, render_shapes,
    sample_patches, synth_bimodal_dot, write_frame_sequence, write_pnm, BimodalParams,
    BouncingParams, DataSource, DatasetSpec, FrameSequence, Mode, MovingShape, ShapeKind,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_byte_survives_normalize_round_trip() {
    for b in 0..=255u8 {
        let f = Tensor::full(&[1, 1, 1], b as f32);
        let n = normalize(&f);
        assert!((-1.0..=1.0).contains(&n.data()[0]));
        assert_eq!(denormalize(&n).data()[0], b as f32, "byte {b}");
    }
    assert_eq!(normalize(&Tensor::full(&[1, 1, 1], 0.0)).data()[0], -1.0);
    assert_eq!(normalize(&Tensor::full(&[1, 1, 1], 255.0)).data()[0], 1.0);
}

#[test]
fn clip_tree_round_trips_through_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = |seed: u64, c: usize| {
        let frames = (0..5)
            .map(|t| {
                Tensor::from_fn(&[c, 6, 9], |i| {
                    ((i * 7 + t * 13 + seed as usize) % 256) as f32
                })
            })
            .collect();
        FrameSequence::new(frames).unwrap()
    };
    let (a, b) = (seq(1, 1), seq(2, 3));
    write_frame_sequence(&tmp.path().join("b_clip"), &b).unwrap();
    write_frame_sequence(&tmp.path().join("a_clip"), &a).unwrap();
    fs::write(tmp.path().join("notes.txt"), "ignored").unwrap();
    let tree = load_clip_tree(tmp.path()).unwrap();
    assert_eq!(tree.len(), 2);
    assert_eq!(tree[0].0, "a_clip");
    assert_eq!(tree[0].1, a);
    assert_eq!(tree[1].1, b);

    // a directory of frames is one clip
    let single = load_clip_tree(&tmp.path().join("a_clip")).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].1, a);
}

#[test]
fn mixed_frame_sizes_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write_pnm(&tmp.path().join("f0.pgm"), &Tensor::zeros(&[1, 4, 4])).unwrap();
    write_pnm(&tmp.path().join("f1.pgm"), &Tensor::zeros(&[1, 4, 5])).unwrap();
    assert!(load_frame_sequence(tmp.path()).is_err());
    let empty = tempfile::tempdir().unwrap();
    assert!(load_frame_sequence(empty.path()).is_err());
}

/// Brute-force motion score of the patch at `(t, y, x)`, recomputed from
/// the raw bytes.
fn oracle_score(seq: &FrameSequence, t: usize, y: usize, x: usize, p: usize, window: usize) -> f64 {
    let w = seq.width();
    let mut sum = 0.0;
    for k in t..t + window - 1 {
        let (a, b) = (&seq.frames()[k], &seq.frames()[k + 1]);
        for r in y..y + p {
            for c in x..x + p {
                let d = (b.data()[r * w + c] - a.data()[r * w + c]) as f64 / 127.5;
                sum += d * d;
            }
        }
    }
    sum / ((window - 1) * p * p) as f64
}

#[test]
fn threshold_between_static_and_dot_scores_keeps_only_dot_patches() {
    let dot = MovingShape {
        kind: ShapeKind::Rect,
        size: 2,
        x: 1,
        y: 9,
        vx: 1,
        vy: 0,
        color: [255; 3],
    };
    let seq = render_shapes(vec![dot], 20, 20, 10, 1, 0).unwrap();
    let (p, window) = (6, 3);
    let mut positive = Vec::new();
    let mut zero = 0;
    for t in 0..=seq.len() - window {
        for y in 0..=20 - p {
            for x in 0..=20 - p {
                let s = oracle_score(&seq, t, y, x, p, window);
                if s > 0.0 {
                    positive.push(s);
                } else {
                    zero += 1;
                }
            }
        }
    }
    assert!(zero > 0 && !positive.is_empty());
    let tau = positive.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
    let spec = DatasetSpec {
        tau,
        seed: 11,
        ..DatasetSpec::new(DataSource::Bimodal(BimodalParams::default()), p, 2, 1)
    };
    let clips = sample_patches(&seq, &spec, 200).unwrap();
    for c in &clips {
        let (t, y, x) = c.origin;
        let s = oracle_score(&seq, t, y, x, p, window);
        assert!(s > 0.0, "accepted a static patch at {:?}", c.origin);
        // the dot is visible in the patch at some frame of the window
        let lit = c.x.data().iter().chain(c.y.data()).any(|&v| v > 0.0);
        assert!(lit);
        let mut frames: Vec<Tensor<f32>> = Vec::new();
        for k in 0..3 {
            let src = if k < 2 { &c.x } else { &c.y };
            let j = if k < 2 { k } else { 0 };
            frames.push(
                Tensor::new(
                    vec![1, p, p],
                    src.data()[j * p * p..(j + 1) * p * p].to_vec(),
                )
                .unwrap(),
            );
        }
        assert!((motion_score(&frames) - s).abs() < 1e-9);
    }
}

#[test]
fn bimodal_modes_are_balanced_and_average_has_half_dots() {
    let params = BimodalParams::default();
    let samples = synth_bimodal_dot(&params, 10_000, 21).unwrap();
    let up = samples.iter().filter(|s| s.mode == Mode::Up).count() as f64 / 1e4;
    assert!((up - 0.5).abs() < 0.01, "up frequency {up}");

    let (_, a, b) = params.clip_for(0, 0).unwrap();
    let mid = (params.background + params.foreground) / 2.0;
    let avg: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x + y) / 2.0)
        .collect();
    assert_eq!(
        avg.iter().filter(|&&v| v == mid).count(),
        2 * params.dot * params.dot
    );
    assert!(avg.iter().all(|&v| v == mid || v == params.background));
}

#[test]
fn patch_source_draws_are_reproducible() {
    let spec = DatasetSpec {
        seed: 4,
        ..DatasetSpec::new(
            DataSource::Bouncing {
                params: BouncingParams::default(),
                clips: 3,
            },
            16,
            4,
            2,
        )
    };
    let a = spec.open().unwrap();
    let b = spec.open().unwrap();
    let mut ra = ChaCha8Rng::seed_from_u64(9);
    let mut rb = ChaCha8Rng::seed_from_u64(9);
    assert_eq!(
        a.draw_batch(&mut ra, 12).unwrap(),
        b.draw_batch(&mut rb, 12).unwrap()
    );
}

#[test]
fn patch_size_must_suit_the_scales() {
    let spec = DatasetSpec::new(
        DataSource::Bouncing {
            params: BouncingParams::default(),
            clips: 1,
        },
        12,
        4,
        1,
    );
    assert!(spec.validate(2).is_ok());
    assert!(spec.validate(4).is_err());
    let neg = DatasetSpec { tau: -1.0, ..spec };
    assert!(neg.validate(1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_clips_are_in_range_and_shaped(
        seed in 0u64..1000,
        shapes in 1usize..4,
        channels in prop_oneof![Just(1usize), Just(3usize)],
        patch in prop_oneof![Just(8usize), Just(16usize)],
    ) {
        let params = BouncingParams { shapes, channels, ..BouncingParams::default() };
        let spec = DatasetSpec {
            seed,
            channels,
            tau: 0.0,
            ..DatasetSpec::new(DataSource::Bouncing { params, clips: 2 }, patch, 3, 2)
        };
        let src = spec.open().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in src.draw_batch(&mut rng, 4).unwrap() {
            prop_assert_eq!(c.x.shape(), &[3 * channels, patch, patch]);
            prop_assert_eq!(c.y.shape(), &[2 * channels, patch, patch]);
            prop_assert!(c.x.data().iter().chain(c.y.data()).all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
