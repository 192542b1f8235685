//! Property tests over the file formats and stream transforms.

use proptest::prelude::*;

use affectcal_core::datamodel::io::{
    load_feature_stream, load_label_track, load_score_stream, save_feature_stream,
    save_label_track, save_score_stream,
};
use affectcal_core::datamodel::{
    align_audio_to_video, FeatureStream, LabelTrack, Labels, ScoreKind, ScoreStream, TaskKind,
};
use affectcal_core::mat::Mat;
use affectcal_core::metrics::ccc;
use affectcal_core::temporal::{
    blend, decode, smooth, vd_aggregate, vd_make_clips, SmoothingConfig, VdWindowConfig,
    WindowProbs,
};

fn finite_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e9..1e9f64,
        -1e-9..1e-9f64,
        Just(0.0),
        Just(-0.0),
        Just(1.0 / 3.0),
        Just(1e300),
        Just(-1e-300),
    ]
}

fn frame_ids(n: usize) -> impl Strategy<Value = Vec<u64>> {
    // strictly increasing ids with random gaps
    proptest::collection::vec(1u64..5, n).prop_map(|gaps| {
        let mut ids = Vec::with_capacity(gaps.len());
        let mut cur = 0u64;
        for g in gaps {
            ids.push(cur);
            cur += g;
        }
        ids
    })
}

fn prob_rows(n: usize, c: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(1e-3..1.0f64, c), n).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_stream_roundtrips(
        n in 1usize..20,
        d in 1usize..6,
        seed_rows in proptest::collection::vec(proptest::collection::vec(finite_f64(), 6), 20),
        ids in frame_ids(20),
        rate in 1e-3..1e3f64,
    ) {
        let rows: Vec<Vec<f64>> = seed_rows.iter().take(n).map(|r| r[..d].to_vec()).collect();
        let stream = FeatureStream::new(
            "vid".into(),
            ids[..n].to_vec(),
            Mat::from_rows(&rows).unwrap(),
            "prop".into(),
            rate,
        ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        save_feature_stream(&stream, &path).unwrap();
        prop_assert_eq!(load_feature_stream(&path).unwrap(), stream);
    }

    #[test]
    fn label_track_roundtrips(
        n in 1usize..20,
        ys in proptest::collection::vec(0usize..8, 20),
        mask in proptest::collection::vec(any::<bool>(), 20),
        ids in frame_ids(20),
    ) {
        let track = LabelTrack::new(
            "vid".into(),
            TaskKind::Expr,
            ids[..n].to_vec(),
            Labels::Class(ys[..n].to_vec()),
            mask[..n].to_vec(),
        ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        save_label_track(&track, &path).unwrap();
        prop_assert_eq!(load_label_track(&path).unwrap(), track);
    }

    #[test]
    fn score_stream_roundtrips_and_smooth_preserves_simplex(
        n in 2usize..30,
        c in 2usize..6,
        window in (0usize..6).prop_map(|w| w * 2),
        raw in prob_rows(30, 6),
    ) {
        let rows: Vec<Vec<f64>> = raw.iter().take(n).map(|r| {
            let r = &r[..c];
            let s: f64 = r.iter().sum();
            r.iter().map(|v| v / s).collect()
        }).collect();
        let stream = ScoreStream::new(
            "vid".into(),
            (0..n as u64).collect(),
            Mat::from_rows(&rows).unwrap(),
            ScoreKind::Probability,
        ).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        save_score_stream(&stream, &path).unwrap();
        prop_assert_eq!(&load_score_stream(&path).unwrap(), &stream);

        let smoothed = smooth(&stream, &SmoothingConfig::new(window).unwrap()).unwrap();
        for r in 0..n {
            let sum: f64 = smoothed.scores.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn alignment_output_always_matches_video_length(
        audio_n in 1usize..30,
        video_n in 1usize..50,
        audio_rate in 0.5..100.0f64,
        video_rate in 0.5..100.0f64,
    ) {
        let audio = FeatureStream::new(
            "vid".into(),
            (0..audio_n as u64).collect(),
            Mat::from_rows(&(0..audio_n).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap(),
            "a".into(),
            audio_rate,
        ).unwrap();
        let video_ids: Vec<u64> = (0..video_n as u64).collect();
        let out = align_audio_to_video(&audio, &video_ids, video_rate).unwrap();
        prop_assert_eq!(out.num_frames(), video_n);
    }

    #[test]
    fn ccc_is_bounded_and_symmetric(
        xs in proptest::collection::vec(-10.0..10.0f64, 2..100),
        ys in proptest::collection::vec(-10.0..10.0f64, 2..100),
    ) {
        let n = xs.len().min(ys.len());
        let a = ccc(&xs[..n], &ys[..n]).unwrap();
        let b = ccc(&ys[..n], &xs[..n]).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn blend_of_stream_with_itself_decodes_identically(
        n in 1usize..20,
        w in 0.0..=1.0f64,
        raw in prob_rows(20, 8),
    ) {
        let rows: Vec<Vec<f64>> = raw.iter().take(n).cloned().collect();
        let stream = ScoreStream::new(
            "vid".into(),
            (0..n as u64).collect(),
            Mat::from_rows(&rows).unwrap(),
            ScoreKind::Probability,
        ).unwrap();
        let fused = blend(&stream, &stream, w).unwrap();
        let a = decode(&stream, TaskKind::Expr, None).unwrap();
        let b = decode(&fused, TaskKind::Expr, None).unwrap();
        prop_assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn vd_aggregation_covers_every_frame(
        len in 1usize..300,
        clip_len in 2usize..40,
        frame_step in 1usize..4,
        stride_frac in 0.1..1.0f64,
        threshold in 0.0..=1.0f64,
    ) {
        let span = clip_len * frame_step;
        let stride = ((span as f64 * stride_frac) as usize).max(1);
        let cfg = VdWindowConfig {
            clip_len,
            frame_step,
            infer_stride: stride,
            decision_threshold: threshold,
        };
        let stream = FeatureStream::new(
            "vid".into(),
            (0..len as u64).collect(),
            Mat::from_rows(&(0..len).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap(),
            "t".into(),
            30.0,
        ).unwrap();
        let clips = vd_make_clips(&stream, &cfg, false).unwrap();
        let windows: Vec<WindowProbs> = clips.iter().map(|c| WindowProbs {
            probs: c.frame_rows.iter().map(|&f| (f as f64 * 0.37).fract()).collect(),
            frame_rows: c.frame_rows.clone(),
        }).collect();
        let agg = vd_aggregate(&windows, len, &cfg).unwrap();
        prop_assert_eq!(agg.probs.len(), len);
        prop_assert_eq!(agg.decisions.len(), len);
        prop_assert!(agg.probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}
