//! Deterministic synthetic datasets.
//!
//! Real challenge data is access-restricted, so every pipeline claim is
//! exercised on generated streams instead: hidden class sequences with
//! geometric segment lengths (emotion episodes persist across frames),
//! class-specific Gaussian feature centroids, controllable label noise,
//! and an optional audio modality whose informativeness is tunable.
//! Everything is a pure function of the seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::io::{save_feature_stream, save_label_track, save_manifest};
use crate::datamodel::{
    DatasetManifest, FeatureStream, LabelTrack, Labels, ManifestEntry, TaskKind, NUM_AU,
};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::Rng;

pub const VIDEO_RATE_HZ: f64 = 30.0;
pub const AUDIO_RATE_HZ: f64 = 15.0;

/// Generator configuration. `class_weights` is a simplex over hidden
/// states: emotion classes for the categorical tasks, action-unit
/// archetypes for `Au`, anchor prototypes for `Va`, and
/// `[non-violent, violent]` for `Vd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub task: TaskKind,
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub feature_dim: usize,
    pub class_weights: Vec<f64>,
    pub segment_mean_length: f64,
    pub feature_noise_sigma: f64,
    pub label_flip_prob: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub audio_agreement: Option<f64>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(task: TaskKind) -> Self {
        let k = match task {
            TaskKind::Expr | TaskKind::Audio => 8,
            TaskKind::Vd => 2,
            TaskKind::Au => 8,
            TaskKind::Va => 6,
        };
        SynthConfig {
            task,
            num_videos: 4,
            frames_per_video: 500,
            feature_dim: 16,
            class_weights: vec![1.0 / k as f64; k],
            segment_mean_length: 25.0,
            // centroids sit at unit distance sqrt(2); this default keeps
            // frame accuracy imperfect but learnable (3-sigma separation)
            feature_noise_sigma: 0.47,
            label_flip_prob: 0.0,
            audio_agreement: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0 || self.frames_per_video == 0 || self.feature_dim == 0 {
            return Err(Error::Config("videos, frames, and feature dim must be positive".into()));
        }
        if self.class_weights.is_empty() {
            return Err(Error::Config("class weights must be non-empty".into()));
        }
        if self.class_weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::Config("class weights must be non-negative".into()));
        }
        let sum: f64 = self.class_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("class weights sum to {sum}, expected 1")));
        }
        match self.task {
            TaskKind::Expr | TaskKind::Audio => {
                if self.class_weights.len() != 8 {
                    return Err(Error::Config("expression tasks use 8 classes".into()));
                }
            }
            TaskKind::Vd => {
                if self.class_weights.len() != 2 {
                    return Err(Error::Config("violence detection uses 2 classes".into()));
                }
            }
            TaskKind::Va => {
                if self.feature_dim < 2 {
                    return Err(Error::Config("continuous task needs feature dim >= 2".into()));
                }
            }
            TaskKind::Au => {}
        }
        if self.segment_mean_length < 1.0 {
            return Err(Error::Config("segment mean length must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.label_flip_prob) {
            return Err(Error::Config("label flip probability must be in [0,1]".into()));
        }
        if let Some(a) = self.audio_agreement {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config("audio agreement must be in [0,1]".into()));
            }
        }
        if !(self.feature_noise_sigma.is_finite() && self.feature_noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be >= 0".into()));
        }
        Ok(())
    }

    fn num_states(&self) -> usize {
        self.class_weights.len()
    }
}

/// Class centroids: standard basis vectors when the feature space is wide
/// enough, seeded random unit vectors otherwise.
fn centroids(k: usize, dim: usize, seed: u64, stream: u64) -> Vec<Vec<f64>> {
    if dim >= k {
        (0..k)
            .map(|c| {
                let mut v = vec![0.0; dim];
                v[c] = 1.0;
                v
            })
            .collect()
    } else {
        let mut rng = Rng::derive(seed, stream);
        (0..k)
            .map(|_| {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                v.iter_mut().for_each(|x| *x /= norm);
                v
            })
            .collect()
    }
}

/// Hidden state sequence: geometric-length segments with states drawn from
/// the class weights.
fn hidden_sequence(cfg: &SynthConfig, rng: &mut Rng) -> Vec<usize> {
    let mut states = Vec::with_capacity(cfg.frames_per_video);
    while states.len() < cfg.frames_per_video {
        let state = rng.categorical(&cfg.class_weights);
        let len = rng.geometric_len(cfg.segment_mean_length);
        for _ in 0..len {
            if states.len() == cfg.frames_per_video {
                break;
            }
            states.push(state);
        }
    }
    states
}

fn flip_class(y: usize, k: usize, rng: &mut Rng) -> usize {
    if k <= 1 {
        return y;
    }
    let other = rng.below(k - 1);
    if other >= y {
        other + 1
    } else {
        other
    }
}

struct VideoData {
    features: FeatureStream,
    labels: LabelTrack,
    audio: Option<FeatureStream>,
}

fn synth_video(cfg: &SynthConfig, video_idx: usize, states: Vec<usize>) -> Result<VideoData> {
    let video_id = format!("synth{video_idx:03}");
    let k = cfg.num_states();
    let n = cfg.frames_per_video;
    let frame_ids: Vec<u64> = (0..n as u64).collect();
    let cents = centroids(k, cfg.feature_dim, cfg.seed, 0xC3);
    let mut rng = Rng::derive(cfg.seed, 0xF000 + video_idx as u64);

    // per-archetype bit patterns for the multi-label task
    let au_patterns: Vec<[u8; NUM_AU]> = {
        let mut prng = Rng::derive(cfg.seed, 0xA0);
        (0..k)
            .map(|_| {
                let mut bits = [0u8; NUM_AU];
                for b in &mut bits {
                    *b = prng.coin(0.4) as u8;
                }
                bits
            })
            .collect()
    };
    // (valence, arousal) anchors for the continuous task
    let va_anchors: Vec<(f64, f64)> = {
        let mut arng = Rng::derive(cfg.seed, 0x7A);
        (0..k)
            .map(|_| (arng.uniform(-0.9, 0.9), arng.uniform(-0.9, 0.9)))
            .collect()
    };

    let mut rows = Vec::with_capacity(n);
    let mut class_labels = Vec::new();
    let mut au_labels = Vec::new();
    let mut va_labels = Vec::new();
    for &state in &states {
        match cfg.task {
            TaskKind::Va => {
                let (av, aa) = va_anchors[state];
                let v = (av + 0.05 * rng.normal()).clamp(-1.0, 1.0);
                let a = (aa + 0.05 * rng.normal()).clamp(-1.0, 1.0);
                let mut row = vec![0.0; cfg.feature_dim];
                row[0] = v;
                row[1] = a;
                for x in row.iter_mut() {
                    *x += cfg.feature_noise_sigma * rng.normal();
                }
                rows.push(row);
                va_labels.push((v, a));
            }
            _ => {
                let mut row = cents[state].clone();
                for x in row.iter_mut() {
                    *x += cfg.feature_noise_sigma * rng.normal();
                }
                rows.push(row);
                match cfg.task {
                    TaskKind::Au => {
                        let mut bits = au_patterns[state];
                        for b in &mut bits {
                            if rng.coin(cfg.label_flip_prob) {
                                *b = 1 - *b;
                            }
                        }
                        au_labels.push(bits);
                    }
                    _ => {
                        let mut y = state;
                        if rng.coin(cfg.label_flip_prob) {
                            y = flip_class(y, cfg.task.num_outputs(), &mut rng);
                        }
                        class_labels.push(y);
                    }
                }
            }
        }
    }

    let labels = match cfg.task {
        TaskKind::Va => Labels::Va(va_labels),
        TaskKind::Au => Labels::Au(au_labels),
        _ => Labels::Class(class_labels),
    };

    let features = FeatureStream::new(
        video_id.clone(),
        frame_ids.clone(),
        Mat::from_rows(&rows)?,
        "synth".into(),
        VIDEO_RATE_HZ,
    )?;
    let track = LabelTrack::new(video_id.clone(), cfg.task, frame_ids, labels, vec![true; n])?;

    // optional acoustic modality at half the video rate
    let audio = if let Some(agreement) = cfg.audio_agreement {
        let audio_cents = centroids(k, cfg.feature_dim, cfg.seed, 0xAC);
        let n_audio = n.div_ceil(2);
        let mut arows = Vec::with_capacity(n_audio);
        for j in 0..n_audio {
            let covered_state = states[(2 * j).min(n - 1)];
            let state = if rng.coin(agreement) {
                covered_state
            } else {
                rng.below(k)
            };
            let mut row = audio_cents[state].clone();
            for x in row.iter_mut() {
                *x += cfg.feature_noise_sigma * rng.normal();
            }
            arows.push(row);
        }
        Some(FeatureStream::new(
            video_id,
            (0..n_audio as u64).collect(),
            Mat::from_rows(&arows)?,
            "synth-audio".into(),
            AUDIO_RATE_HZ,
        )?)
    } else {
        None
    };

    Ok(VideoData {
        features,
        labels: track,
        audio,
    })
}

fn write_dataset(cfg: &SynthConfig, out_dir: &Path, videos: Vec<VideoData>) -> Result<(DatasetManifest, PathBuf)> {
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::new();
    for v in &videos {
        let id = &v.features.video_id;
        let feature_path = format!("{id}.features.csv");
        let label_path = format!("{id}.labels.csv");
        save_feature_stream(&v.features, &out_dir.join(&feature_path))?;
        save_label_track(&v.labels, &out_dir.join(&label_path))?;
        let (audio_feature_path, audio_rate_hz) = if let Some(a) = &v.audio {
            let p = format!("{id}.audio.csv");
            save_feature_stream(a, &out_dir.join(&p))?;
            (Some(p), Some(a.frame_rate_hz))
        } else {
            (None, None)
        };
        entries.push(ManifestEntry {
            video_id: id.clone(),
            feature_path,
            label_path: Some(label_path),
            audio_feature_path,
            audio_rate_hz,
        });
    }
    let manifest = DatasetManifest {
        task: cfg.task,
        split: "synth".into(),
        entries,
    };
    let manifest_path = out_dir.join("manifest.json");
    save_manifest(&manifest, &manifest_path)?;
    Ok((manifest, manifest_path))
}

/// Generates a dataset on disk and returns its manifest (also written to
/// `<out_dir>/manifest.json`). Fully deterministic per seed; each video
/// draws from its own derived stream.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<(DatasetManifest, PathBuf)> {
    cfg.validate()?;
    if cfg.task == TaskKind::Vd {
        return generate_vd(cfg, out_dir);
    }
    let mut videos = Vec::with_capacity(cfg.num_videos);
    for v in 0..cfg.num_videos {
        let mut seq_rng = Rng::derive(cfg.seed, 0x5E9 + v as u64);
        let states = hidden_sequence(cfg, &mut seq_rng);
        videos.push(synth_video(cfg, v, states)?);
    }
    write_dataset(cfg, out_dir, videos)
}

/// Violence variant: strictly alternating violent / non-violent segments.
/// Violent runs have mean `segment_mean_length`; non-violent run lengths
/// are scaled so the long-run violent frame fraction matches
/// `class_weights[1]`.
pub fn generate_vd(cfg: &SynthConfig, out_dir: &Path) -> Result<(DatasetManifest, PathBuf)> {
    cfg.validate()?;
    if cfg.task != TaskKind::Vd {
        return Err(Error::Config("generate_vd needs the violence task".into()));
    }
    let f = cfg.class_weights[1];
    let mut videos = Vec::with_capacity(cfg.num_videos);
    for v in 0..cfg.num_videos {
        let mut rng = Rng::derive(cfg.seed, 0x5E9 + v as u64);
        let mut states = Vec::with_capacity(cfg.frames_per_video);
        if f <= 0.0 || f >= 1.0 {
            let state = usize::from(f >= 1.0);
            states.resize(cfg.frames_per_video, state);
        } else {
            let mean_v = cfg.segment_mean_length;
            let mean_nv = cfg.segment_mean_length * (1.0 - f) / f;
            let mut violent = rng.coin(f);
            while states.len() < cfg.frames_per_video {
                let mean = if violent { mean_v } else { mean_nv };
                let len = rng.geometric_len(mean);
                for _ in 0..len {
                    if states.len() == cfg.frames_per_video {
                        break;
                    }
                    states.push(violent as usize);
                }
                violent = !violent;
            }
        }
        videos.push(synth_video(cfg, v, states)?);
    }
    write_dataset(cfg, out_dir, videos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::io::{load_feature_stream, load_label_track, resolve_path};
    use tempfile::tempdir;

    #[test]
    fn generation_is_byte_identical_across_runs() {
        let mut cfg = SynthConfig::new(TaskKind::Expr);
        cfg.num_videos = 2;
        cfg.frames_per_video = 64;
        cfg.audio_agreement = Some(0.8);
        cfg.seed = 42;
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        generate(&cfg, d1.path()).unwrap();
        generate(&cfg, d2.path()).unwrap();
        for name in [
            "synth000.features.csv",
            "synth000.labels.csv",
            "synth000.audio.csv",
            "synth001.features.csv",
            "manifest.json",
        ] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "file {name} differs between runs");
        }
    }

    #[test]
    fn generated_files_pass_loaders() {
        let mut cfg = SynthConfig::new(TaskKind::Au);
        cfg.num_videos = 1;
        cfg.frames_per_video = 40;
        cfg.label_flip_prob = 0.1;
        let dir = tempdir().unwrap();
        let (manifest, mpath) = generate(&cfg, dir.path()).unwrap();
        for e in &manifest.entries {
            let f = load_feature_stream(&resolve_path(&mpath, &e.feature_path)).unwrap();
            let l = load_label_track(&resolve_path(&mpath, e.label_path.as_ref().unwrap())).unwrap();
            assert_eq!(f.num_frames(), 40);
            assert_eq!(l.task, TaskKind::Au);
        }
    }

    #[test]
    fn uniform_weights_give_uniform_priors_at_scale() {
        let mut cfg = SynthConfig::new(TaskKind::Expr);
        cfg.num_videos = 10;
        cfg.frames_per_video = 10_000;
        cfg.segment_mean_length = 5.0;
        cfg.seed = 7;
        let dir = tempdir().unwrap();
        let (manifest, mpath) = generate(&cfg, dir.path()).unwrap();
        let mut counts = [0u64; 8];
        let mut total = 0u64;
        for e in &manifest.entries {
            let l = load_label_track(&resolve_path(&mpath, e.label_path.as_ref().unwrap())).unwrap();
            let Labels::Class(ys) = &l.labels else { unreachable!() };
            for &y in ys {
                counts[y] += 1;
                total += 1;
            }
        }
        assert_eq!(total, 100_000);
        for c in counts {
            let p = c as f64 / total as f64;
            assert!((p - 0.125).abs() < 0.02, "empirical prior {p}");
        }
    }

    #[test]
    fn noiseless_features_are_nearest_centroid_separable() {
        let mut cfg = SynthConfig::new(TaskKind::Expr);
        cfg.num_videos = 2;
        cfg.frames_per_video = 400;
        cfg.feature_noise_sigma = 0.0;
        cfg.label_flip_prob = 0.0;
        let dir = tempdir().unwrap();
        let (manifest, mpath) = generate(&cfg, dir.path()).unwrap();
        // oracle: classify by nearest class mean, means estimated from data
        let mut sums = vec![vec![0.0; cfg.feature_dim]; 8];
        let mut counts = vec![0u64; 8];
        let mut frames = Vec::new();
        for e in &manifest.entries {
            let f = load_feature_stream(&resolve_path(&mpath, &e.feature_path)).unwrap();
            let l = load_label_track(&resolve_path(&mpath, e.label_path.as_ref().unwrap())).unwrap();
            let Labels::Class(ys) = &l.labels else { unreachable!() };
            for (i, &y) in ys.iter().enumerate() {
                for (s, v) in sums[y].iter_mut().zip(f.features.row(i)) {
                    *s += v;
                }
                counts[y] += 1;
                frames.push((f.features.row(i).to_vec(), y));
            }
        }
        let means: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s.iter().map(|v| v / c.max(1) as f64).collect())
            .collect();
        let mut correct = 0usize;
        for (row, y) in &frames {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, m) in means.iter().enumerate() {
                if counts[k] == 0 {
                    continue;
                }
                let d: f64 = row.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            correct += (best == *y) as usize;
        }
        assert_eq!(correct, frames.len());
    }

    #[test]
    fn vd_positive_fraction_and_run_length() {
        let mut cfg = SynthConfig::new(TaskKind::Vd);
        cfg.class_weights = vec![0.56, 0.44];
        cfg.num_videos = 10;
        cfg.frames_per_video = 10_000;
        cfg.segment_mean_length = 20.0;
        cfg.seed = 3;
        let dir = tempdir().unwrap();
        let (manifest, mpath) = generate_vd(&cfg, dir.path()).unwrap();
        let mut pos = 0u64;
        let mut total = 0u64;
        let mut runs = Vec::new();
        for e in &manifest.entries {
            let l = load_label_track(&resolve_path(&mpath, e.label_path.as_ref().unwrap())).unwrap();
            let Labels::Class(ys) = &l.labels else { unreachable!() };
            let mut run = 0usize;
            for (i, &y) in ys.iter().enumerate() {
                pos += y as u64;
                total += 1;
                if y == 1 {
                    run += 1;
                }
                let boundary = y == 1 && (i + 1 == ys.len() || ys[i + 1] == 0);
                if boundary && run > 0 {
                    runs.push(run);
                    run = 0;
                }
                if y == 0 {
                    run = 0;
                }
            }
        }
        let frac = pos as f64 / total as f64;
        assert!((frac - 0.44).abs() < 0.02, "violent fraction {frac}");
        let mean_run = runs.iter().sum::<usize>() as f64 / runs.len() as f64;
        assert!(
            (mean_run - 20.0).abs() < 2.0,
            "mean violent run {mean_run}, configured 20"
        );
    }

    #[test]
    fn vd_zero_fraction_is_all_negative() {
        let mut cfg = SynthConfig::new(TaskKind::Vd);
        cfg.class_weights = vec![1.0, 0.0];
        cfg.num_videos = 1;
        cfg.frames_per_video = 100;
        let dir = tempdir().unwrap();
        let (manifest, mpath) = generate_vd(&cfg, dir.path()).unwrap();
        let l = load_label_track(&resolve_path(
            &mpath,
            manifest.entries[0].label_path.as_ref().unwrap(),
        ))
        .unwrap();
        let Labels::Class(ys) = &l.labels else { unreachable!() };
        assert!(ys.iter().all(|&y| y == 0));
    }

    #[test]
    fn bad_weights_are_config_errors() {
        let mut cfg = SynthConfig::new(TaskKind::Expr);
        cfg.class_weights[0] = -0.1;
        cfg.class_weights[1] += 0.1 + cfg.class_weights[0].abs();
        assert!(matches!(
            generate(&cfg, Path::new("/tmp/unused")),
            Err(Error::Config(_))
        ));
    }
}
