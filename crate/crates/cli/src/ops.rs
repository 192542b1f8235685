//! Subcommand implementations on top of `affectcal_core::pipeline`.

use std::path::{Path, PathBuf};

use affectcal_core::calibrate::{
    fit_logit_biases, tune_thresholds, BiasInit, CalibrationArtifact, GlaConfig,
};
use affectcal_core::datamodel::io::{
    load_json, load_label_track, load_score_stream, save_json, save_label_track,
    save_score_stream,
};
use affectcal_core::datamodel::{class_priors, ClassPriorTable, LabelTrack, ScoreStream, TaskKind};
use affectcal_core::error::{Error, Result};
use affectcal_core::metrics::{self, MetricReport};
use affectcal_core::nn::{
    self, Hyper, LossKind, LossSpec, NetworkSpec, NetworkState, TcnSpec, WeightMode,
};
use affectcal_core::pipeline::{
    au_pipeline, classify_pipeline, load_dataset, modality_features, frame_train_data,
    stream_file, truth_tracks, va_pipeline, vd_pipeline, vd_train_data, LoadedVideo, Modality,
};
use affectcal_core::synth::SynthConfig;
use affectcal_core::temporal::{blend, default_au_thresholds, GateConfig, SmoothingConfig, VdWindowConfig};
use affectcal_core::util::{fnv1a_hex, par_map};

use crate::cli::{
    AblateArgs, CalibrateArgs, Cli, Command, Common, EvaluateArgs, FileConfig, FuseArgs,
    PredictArgs, SynthArgs, TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

// ------------------------------------------------------------- plumbing

fn file_config(common: &Common) -> Result<FileConfig> {
    match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
        }
        None => Ok(FileConfig::default()),
    }
}

fn threads() -> usize {
    let cap = std::env::var("AFFECTCAL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    cap.unwrap_or(avail).min(avail.max(1))
}

fn parse_task(s: &str) -> Result<TaskKind> {
    TaskKind::parse(s)
}

/// Task from flag/config/manifest; an explicit flag must agree with the
/// manifest.
fn resolve_task(common: &Common, fc: &FileConfig, manifest_task: Option<TaskKind>) -> Result<TaskKind> {
    let flagged = match common.task.as_deref().or(fc.task.as_deref()) {
        Some(s) => Some(parse_task(s)?),
        None => None,
    };
    match (flagged, manifest_task) {
        (Some(f), Some(m)) if f != m => Err(Error::Config(format!(
            "task flag '{}' does not match manifest task '{}'",
            f.name(),
            m.name()
        ))),
        (Some(f), _) => Ok(f),
        (None, Some(m)) => Ok(m),
        (None, None) => Err(Error::Config("no task given".into())),
    }
}

fn parse_loss(s: &str) -> Result<LossKind> {
    match s {
        "weighted_softmax" => Ok(LossKind::WeightedSoftmax),
        "mse_ccc" => Ok(LossKind::MseCcc),
        "weighted_binary" => Ok(LossKind::WeightedBinary),
        "weighted_ce" => Ok(LossKind::WeightedCe),
        "focal" => Ok(LossKind::Focal),
        other => Err(Error::Config(format!("unknown loss '{other}'"))),
    }
}

fn parse_weight_mode(s: &str) -> Result<WeightMode> {
    match s {
        "inverse_frequency" => Ok(WeightMode::InverseFrequency),
        "frequency_proportional" => Ok(WeightMode::FrequencyProportional),
        other => Err(Error::Config(format!("unknown weight mode '{other}'"))),
    }
}

fn parse_modality(s: &str) -> Result<Modality> {
    match s {
        "video" => Ok(Modality::Video),
        "audio" => Ok(Modality::Audio),
        other => Err(Error::Config(format!("unknown modality '{other}'"))),
    }
}

fn default_loss(task: TaskKind) -> LossKind {
    match task {
        TaskKind::Expr => LossKind::WeightedSoftmax,
        TaskKind::Audio => LossKind::Focal,
        TaskKind::Va => LossKind::MseCcc,
        TaskKind::Au => LossKind::WeightedBinary,
        TaskKind::Vd => LossKind::WeightedCe,
    }
}

fn vd_config(fc: &FileConfig, clip_len: Option<usize>, frame_step: Option<usize>, infer_stride: Option<usize>, decision_threshold: Option<f64>) -> Result<VdWindowConfig> {
    let d = VdWindowConfig::default();
    let cfg = VdWindowConfig {
        clip_len: clip_len.or(fc.clip_len).unwrap_or(d.clip_len),
        frame_step: frame_step.or(fc.frame_step).unwrap_or(d.frame_step),
        infer_stride: infer_stride.or(fc.infer_stride).unwrap_or(d.infer_stride),
        decision_threshold: decision_threshold
            .or(fc.decision_threshold)
            .unwrap_or(d.decision_threshold),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn smoothing(fc: &FileConfig, smooth_t: Option<usize>) -> Result<SmoothingConfig> {
    SmoothingConfig::new(smooth_t.or(fc.smooth_t).unwrap_or(0))
}

fn load_model(path: &Path) -> Result<NetworkState> {
    let state: NetworkState = load_json(path)?;
    state.validate()?;
    Ok(state)
}

fn load_bias(path: &Path) -> Result<Vec<f64>> {
    let art: CalibrationArtifact = load_json(path)?;
    art.validate()?;
    art.bias
        .ok_or_else(|| Error::Config(format!("{} carries no bias vector", path.display())))
}

fn load_thresholds(path: &Path) -> Result<Vec<f64>> {
    let art: CalibrationArtifact = load_json(path)?;
    art.validate()?;
    art.thresholds
        .ok_or_else(|| Error::Config(format!("{} carries no thresholds", path.display())))
}

fn scores_from_dir(dir: &Path, videos: &[LoadedVideo]) -> Result<Vec<ScoreStream>> {
    videos
        .iter()
        .map(|v| load_score_stream(&stream_file(dir, &v.entry.video_id)))
        .collect()
}

/// Model scores for every video, in manifest order.
fn model_scores_all(
    state: &NetworkState,
    videos: &[LoadedVideo],
    modality: Modality,
) -> Result<Vec<ScoreStream>> {
    par_map(videos, threads(), |v| {
        let features = modality_features(v, modality)?;
        affectcal_core::pipeline::model_scores(state, &features)
    })
    .into_iter()
    .collect()
}

fn labeled_priors(videos: &[LoadedVideo], task: TaskKind) -> Result<ClassPriorTable> {
    let tracks = truth_tracks(videos);
    if tracks.is_empty() {
        return Err(Error::Config("manifest has no labeled videos".into()));
    }
    class_priors(&tracks, task)
}

// ------------------------------------------------------------- commands

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let fc = file_config(&args.common)?;
    let task = match args.common.task.as_deref().or(fc.task.as_deref()) {
        Some(t) => parse_task(t)?,
        None => return Err(Error::Config("synth needs --task".into())),
    };
    let mut cfg = SynthConfig::new(task);
    if let Some(n) = args.num_videos {
        cfg.num_videos = n;
    }
    if let Some(f) = args.frames {
        cfg.frames_per_video = f;
    }
    if let Some(d) = args.dim {
        cfg.feature_dim = d;
    }
    if let Some(w) = &args.class_weights {
        cfg.class_weights = w
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad class weight '{t}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
    }
    if let Some(s) = args.segment_mean {
        cfg.segment_mean_length = s;
    }
    if let Some(s) = args.noise_sigma {
        cfg.feature_noise_sigma = s;
    }
    if let Some(p) = args.flip_prob {
        cfg.label_flip_prob = p;
    }
    if args.audio_agreement.is_some() {
        cfg.audio_agreement = args.audio_agreement;
    }
    cfg.seed = args.common.seed.or(fc.seed).unwrap_or(0);

    let (manifest, manifest_path) = affectcal_core::synth::generate(&cfg, &args.out)?;
    println!(
        "wrote {} videos x {} frames ({}) to {}",
        manifest.entries.len(),
        cfg.frames_per_video,
        task.name(),
        manifest_path.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let fc = file_config(&args.common)?;
    let (manifest, videos) = load_dataset(&args.manifest)?;
    let task = resolve_task(&args.common, &fc, Some(manifest.task))?;
    let modality = match args.modality.as_deref() {
        Some(m) => parse_modality(m)?,
        None if task == TaskKind::Audio => Modality::Audio,
        None => Modality::Video,
    };
    let dim = modality_features(&videos[0], modality)?.dim();

    let hidden = args.hidden.or(fc.hidden).unwrap_or(128);
    let preset = match args.preset.as_deref() {
        Some(p) => parse_task(p)?,
        None => task,
    };
    let spec = match preset {
        TaskKind::Expr | TaskKind::Audio => NetworkSpec::expr_preset(dim, hidden),
        TaskKind::Va => NetworkSpec::va_preset(dim),
        TaskKind::Au => NetworkSpec::au_preset(dim, hidden),
        TaskKind::Vd => NetworkSpec::vd_preset(
            dim,
            TcnSpec::with_channels(args.tcn_channels.or(fc.tcn_channels).unwrap_or(256)),
        ),
    };

    let loss_kind = match args.loss.as_deref().or(fc.loss.as_deref()) {
        Some(l) => parse_loss(l)?,
        None => default_loss(task),
    };
    let mut loss = LossSpec::new(loss_kind);
    if let Some(m) = args.weight_mode.as_deref().or(fc.weight_mode.as_deref()) {
        loss = loss.with_mode(parse_weight_mode(m)?);
    }
    if let Some(g) = args.focal_gamma.or(fc.focal_gamma) {
        loss = loss.with_gamma(g);
    }
    if let Some(w) = args.violent_weight.or(fc.violent_weight) {
        loss = loss.with_violent_weight(w);
    }

    let defaults = Hyper::default();
    let hyper = Hyper {
        lr: args.lr.or(fc.lr).unwrap_or(defaults.lr),
        batch_size: args.batch_size.or(fc.batch_size).unwrap_or(defaults.batch_size),
        epochs: args.epochs.or(fc.epochs).unwrap_or(defaults.epochs),
        seed: args.common.seed.or(fc.seed).unwrap_or(0),
        weight_decay: args.weight_decay.or(fc.weight_decay).unwrap_or(0.0),
        ..defaults
    };

    let priors = match loss_kind {
        LossKind::WeightedSoftmax | LossKind::WeightedBinary => Some(labeled_priors(&videos, task)?),
        _ => None,
    };
    let data = if task == TaskKind::Vd {
        vd_train_data(&videos, &vd_config(&fc, None, None, None, None)?)?
    } else {
        frame_train_data(&videos, modality)?
    };

    let (state, log) = nn::train(spec, &loss, &data, priors.as_ref(), &hyper)?;

    std::fs::create_dir_all(&args.out)?;
    save_json(&state, &args.out.join("model.json"))?;
    let mut losslog = String::from("epoch,step,loss\n");
    for e in &log {
        losslog.push_str(&format!("{},{},{}\n", e.epoch, e.step, e.loss));
    }
    std::fs::write(args.out.join("losslog.csv"), losslog)?;
    let first = log.first().map(|e| e.loss).unwrap_or(f64::NAN);
    let last = log.last().map(|e| e.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} ({} params) on {} videos: loss {first:.4} -> {last:.4}",
        task.name(),
        state.num_params(),
        videos.len()
    );
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let fc = file_config(&args.common)?;
    let (manifest, videos) = load_dataset(&args.manifest)?;
    let task = resolve_task(&args.common, &fc, Some(manifest.task))?;
    let state = load_model(&args.model)?;

    let mode = match args.mode.as_deref() {
        Some("gla") => "gla",
        Some("thresholds") => "thresholds",
        Some(other) => return Err(Error::Config(format!("unknown calibration mode '{other}'"))),
        None => match task {
            TaskKind::Au => "thresholds",
            TaskKind::Va => {
                return Err(Error::Config(
                    "the continuous task has nothing to calibrate".into(),
                ))
            }
            _ => "gla",
        },
    };

    let modality = if task == TaskKind::Audio { Modality::Audio } else { Modality::Video };
    let scores = model_scores_all(&state, &videos, modality)?;
    let tracks = truth_tracks(&videos);
    if tracks.len() != videos.len() {
        return Err(Error::Config("every calibration video needs labels".into()));
    }

    let mut artifact = match mode {
        "gla" => {
            let priors = labeled_priors(&videos, task)?;
            let d = GlaConfig::default();
            let cfg = GlaConfig {
                grid_lo: args.grid_lo.or(fc.grid_lo).unwrap_or(d.grid_lo),
                grid_hi: args.grid_hi.or(fc.grid_hi).unwrap_or(d.grid_hi),
                grid_step: args.grid_step.or(fc.grid_step).unwrap_or(d.grid_step),
                max_passes: args.max_passes.or(fc.max_passes).unwrap_or(d.max_passes),
                init: match args.gla_init.as_deref().or(fc.gla_init.as_deref()) {
                    Some("prior") | None => BiasInit::Prior,
                    Some("zero") => BiasInit::Zero,
                    Some(other) => {
                        return Err(Error::Config(format!("unknown bias init '{other}'")))
                    }
                },
            };
            fit_logit_biases(&scores, &tracks, &priors, &cfg)?
        }
        _ => tune_thresholds(&scores, &tracks)?,
    };
    artifact = artifact.with_source_hash(fnv1a_hex(&std::fs::read(&args.manifest)?));
    if artifact.task != task {
        artifact.task = task;
    }

    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("calibration.json");
    save_json(&artifact, &path)?;
    let final_f1 = artifact.search_log.last().map(|e| e.f1).unwrap_or(0.0);
    println!(
        "calibrated {mode} on {} videos (objective {final_f1:.4}) -> {}",
        videos.len(),
        path.display()
    );
    for w in &artifact.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let fc = file_config(&args.common)?;
    let (manifest, videos) = load_dataset(&args.manifest)?;
    let task = resolve_task(&args.common, &fc, Some(manifest.task))?;
    let smooth_cfg = smoothing(&fc, args.smooth_t)?;
    let preds_dir = args.out.join("preds");
    std::fs::create_dir_all(&preds_dir)?;

    if task == TaskKind::Vd {
        let model_path = args
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("violence prediction needs --model".into()))?;
        let state = load_model(model_path)?;
        let wcfg = vd_config(&fc, args.clip_len, args.frame_step, args.infer_stride, args.decision_threshold)?;
        let results = par_map(&videos, threads(), |v| vd_pipeline(&state, &v.features, &wcfg));
        let scores_dir = args.out.join("scores");
        if args.emit_scores {
            std::fs::create_dir_all(&scores_dir)?;
        }
        for (v, r) in videos.iter().zip(results) {
            let (stream, track) = r?;
            save_label_track(&track, &stream_file(&preds_dir, &v.entry.video_id))?;
            if args.emit_scores {
                save_score_stream(&stream, &stream_file(&scores_dir, &v.entry.video_id))?;
            }
        }
        println!("wrote {} violence tracks to {}", videos.len(), preds_dir.display());
        return Ok(());
    }

    // frame tasks: base scores from a model or a directory of streams
    let base_scores: Vec<ScoreStream> = match (&args.scores_dir, &args.model) {
        (Some(dir), _) => scores_from_dir(dir, &videos)?,
        (None, Some(model_path)) => {
            let state = load_model(model_path)?;
            let modality = match args.modality.as_deref() {
                Some(m) => parse_modality(m)?,
                None if task == TaskKind::Audio => Modality::Audio,
                None => Modality::Video,
            };
            model_scores_all(&state, &videos, modality)?
        }
        (None, None) => {
            return Err(Error::Config("predict needs --model or --scores-dir".into()))
        }
    };

    let bias = args.bias.as_deref().map(load_bias).transpose()?;
    let gate_cfg = match &args.gate_scores_dir {
        Some(_) => Some(GateConfig::affectnet_to_affwild2(
            args.gate_p0.or(fc.gate_p0).unwrap_or(0.9),
        )?),
        None => None,
    };
    let gate_streams = args
        .gate_scores_dir
        .as_deref()
        .map(|dir| scores_from_dir(dir, &videos))
        .transpose()?;

    let scores_out = args.out.join("scores");
    if args.emit_scores {
        std::fs::create_dir_all(&scores_out)?;
    }

    for (i, v) in videos.iter().enumerate() {
        let id = &v.entry.video_id;
        let base = &base_scores[i];
        let track = match task {
            TaskKind::Va => va_pipeline(base, &smooth_cfg)?,
            TaskKind::Au => {
                let thresholds = match &args.thresholds {
                    Some(p) => load_thresholds(p)?,
                    None => default_au_thresholds(),
                };
                au_pipeline(base, &smooth_cfg, &thresholds)?
            }
            _ => {
                let gate = match (&gate_streams, &gate_cfg) {
                    (Some(streams), Some(cfg)) => Some((&streams[i], cfg)),
                    _ => None,
                };
                let (track, gated) =
                    classify_pipeline(task, base, bias.as_deref(), &smooth_cfg, gate)?;
                if gate.is_some() {
                    let mut mask_csv = String::from("frame_id,gated\n");
                    for (fid, g) in track.frame_ids.iter().zip(&gated) {
                        mask_csv.push_str(&format!("{fid},{}\n", *g as u8));
                    }
                    std::fs::write(preds_dir.join(format!("{id}.gate.csv")), mask_csv)?;
                }
                track
            }
        };
        save_label_track(&track, &stream_file(&preds_dir, id))?;
        if args.emit_scores {
            // calibrated (but unsmoothed) stream, ready for fusion
            let emitted = match (&bias, task) {
                (Some(b), TaskKind::Expr | TaskKind::Audio | TaskKind::Vd) => {
                    affectcal_core::calibrate::adjusted_probabilities(base, b)?
                }
                _ => base.clone(),
            };
            save_score_stream(&emitted, &stream_file(&scores_out, id))?;
        }
    }
    println!("wrote {} prediction tracks to {}", videos.len(), preds_dir.display());
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<()> {
    let fc = file_config(&args.common)?;
    let (manifest, videos) = load_dataset(&args.manifest)?;
    let a = scores_from_dir(&args.scores_a, &videos)?;
    let b = scores_from_dir(&args.scores_b, &videos)?;

    if args.sweep {
        let task = resolve_task(&args.common, &fc, Some(manifest.task))?;
        if !task.is_classification() {
            return Err(Error::Config("the fusion sweep needs a classification task".into()));
        }
        let tracks = truth_tracks(&videos);
        if tracks.len() != videos.len() {
            return Err(Error::Config("the fusion sweep needs labels".into()));
        }
        let mut rows = String::from("w,macro_f1,accuracy\n");
        let mut best = (0.0, f64::NEG_INFINITY);
        for k in 0..=20 {
            let w = k as f64 / 20.0;
            let mut preds = Vec::new();
            for ((sa, sb), _) in a.iter().zip(&b).zip(&videos) {
                let fused = blend(sa, sb, w)?;
                preds.push(affectcal_core::temporal::decode(&fused, task, None)?);
            }
            let report = metrics::evaluate_tracks(&preds, &tracks, task)?;
            rows.push_str(&format!("{w},{},{}\n", report.macro_f1, report.accuracy));
            if report.macro_f1 > best.1 {
                best = (w, report.macro_f1);
            }
        }
        std::fs::create_dir_all(&args.out)?;
        std::fs::write(args.out.join("fusion_sweep.csv"), rows)?;
        println!("best fusion weight {} (macro F1 {:.4})", best.0, best.1);
        return Ok(());
    }

    let w = args.fusion_w.or(fc.fusion_w).unwrap_or(0.5);
    std::fs::create_dir_all(&args.out)?;
    for ((sa, sb), v) in a.iter().zip(&b).zip(&videos) {
        let fused = blend(sa, sb, w)?;
        save_score_stream(&fused, &stream_file(&args.out, &v.entry.video_id))?;
    }
    println!("fused {} streams at w = {w} into {}", videos.len(), args.out.display());
    Ok(())
}

fn load_predictions(pred_dir: &Path, videos: &[LoadedVideo]) -> Result<Vec<LabelTrack>> {
    videos
        .iter()
        .map(|v| load_label_track(&stream_file(pred_dir, &v.entry.video_id)))
        .collect()
}

fn report_csv(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from("video,task,frames,macro_f1,accuracy,ccc_v,ccc_a,p_va\n");
    for (name, r) in rows {
        out.push_str(&format!(
            "{name},{},{},{},{},{},{},{}\n",
            r.task.name(),
            r.num_frames_evaluated,
            r.macro_f1,
            r.accuracy,
            r.ccc_v.map(|v| v.to_string()).unwrap_or_default(),
            r.ccc_a.map(|v| v.to_string()).unwrap_or_default(),
            r.p_va.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    out
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let fc = file_config(&args.common)?;
    let (manifest, videos) = load_dataset(&args.manifest)?;
    let task = resolve_task(&args.common, &fc, Some(manifest.task))?;
    let truths = truth_tracks(&videos);
    if truths.len() != videos.len() {
        return Err(Error::Config("every evaluated video needs labels".into()));
    }
    let preds = load_predictions(&args.pred_dir, &videos)?;

    let pooled = metrics::evaluate_tracks(&preds, &truths, task)?;
    let per_video = metrics::evaluate_per_video(&preds, &truths, task)?;

    // default report pools frames across the manifest; --per-video averages
    // the per-video reports instead
    let headline = if args.per_video {
        let n = per_video.len() as f64;
        let mut avg = pooled.clone();
        avg.macro_f1 = per_video.iter().map(|(_, r)| r.macro_f1).sum::<f64>() / n;
        avg.accuracy = per_video.iter().map(|(_, r)| r.accuracy).sum::<f64>() / n;
        if task == TaskKind::Va {
            let mean = |f: fn(&MetricReport) -> f64| per_video.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
            avg.ccc_v = Some(mean(|r| r.ccc_v.unwrap_or(0.0)));
            avg.ccc_a = Some(mean(|r| r.ccc_a.unwrap_or(0.0)));
            avg.p_va = Some(mean(|r| r.p_va.unwrap_or(0.0)));
        }
        avg
    } else {
        pooled.clone()
    };

    let out_dir = args
        .out
        .clone()
        .or_else(|| args.pred_dir.parent().map(|p| p.to_path_buf()))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    save_json(&headline, &out_dir.join("metrics.json"))?;
    let table = metrics::format_table(&headline);
    std::fs::write(out_dir.join("metrics.txt"), &table)?;
    if args.csv {
        let mut rows = per_video.clone();
        rows.push(("pooled".to_string(), pooled));
        std::fs::write(out_dir.join("metrics.csv"), report_csv(&rows))?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let fc = file_config(&args.common)?;
    let (manifest, videos) = load_dataset(&args.manifest)?;
    let task = resolve_task(&args.common, &fc, Some(manifest.task))?;
    if !matches!(task, TaskKind::Expr | TaskKind::Audio) {
        return Err(Error::Config("the ablation table covers the expression tasks".into()));
    }
    let truths = truth_tracks(&videos);
    if truths.len() != videos.len() {
        return Err(Error::Config("every ablated video needs labels".into()));
    }

    let state = load_model(&args.model)?;
    let modality = if task == TaskKind::Audio { Modality::Audio } else { Modality::Video };
    let base = model_scores_all(&state, &videos, modality)?;
    let bias = args.bias.as_deref().map(load_bias).transpose()?;
    let gate_streams = args
        .gate_scores_dir
        .as_deref()
        .map(|d| scores_from_dir(d, &videos))
        .transpose()?;
    let audio_streams = args
        .audio_scores_dir
        .as_deref()
        .map(|d| scores_from_dir(d, &videos))
        .transpose()?;

    let smooth_t = args.smooth_t.or(fc.smooth_t).unwrap_or(8);
    let gate_p0 = args.gate_p0.or(fc.gate_p0).unwrap_or(0.9);
    let fusion_w = args.fusion_w.or(fc.fusion_w).unwrap_or(0.5);
    let gate_cfg = GateConfig::affectnet_to_affwild2(gate_p0)?;

    struct Variant {
        name: &'static str,
        bias: bool,
        gate: bool,
        smooth: bool,
        fuse: bool,
    }
    let variants = [
        Variant { name: "none", bias: false, gate: false, smooth: false, fuse: false },
        Variant { name: "gla", bias: true, gate: false, smooth: false, fuse: false },
        Variant { name: "gla+filter", bias: true, gate: true, smooth: false, fuse: false },
        Variant { name: "gla+smooth", bias: true, gate: false, smooth: true, fuse: false },
        Variant { name: "gla+filter+smooth", bias: true, gate: true, smooth: true, fuse: false },
        Variant { name: "gla+smooth+fuse", bias: true, gate: false, smooth: true, fuse: true },
        Variant { name: "gla+filter+smooth+fuse", bias: true, gate: true, smooth: true, fuse: true },
    ];

    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    for v in &variants {
        if v.bias && bias.is_none() {
            continue;
        }
        if v.gate && gate_streams.is_none() {
            continue;
        }
        if v.fuse && audio_streams.is_none() {
            continue;
        }
        let cfg = SmoothingConfig::new(if v.smooth { smooth_t } else { 0 })?;
        let mut preds = Vec::new();
        for (i, _) in videos.iter().enumerate() {
            let mut stream = base[i].clone();
            let applied_bias = if v.bias { bias.as_deref() } else { None };
            if v.fuse {
                // fusion operates on calibrated probabilities
                let calibrated = match applied_bias {
                    Some(b) => affectcal_core::calibrate::adjusted_probabilities(&stream, b)?,
                    None => stream.clone(),
                };
                stream = blend(&calibrated, &audio_streams.as_ref().unwrap()[i], fusion_w)?;
                let gate = if v.gate {
                    Some((&gate_streams.as_ref().unwrap()[i], &gate_cfg))
                } else {
                    None
                };
                let (track, _) = classify_pipeline(task, &stream, None, &cfg, gate)?;
                preds.push(track);
            } else {
                let gate = if v.gate {
                    Some((&gate_streams.as_ref().unwrap()[i], &gate_cfg))
                } else {
                    None
                };
                let (track, _) = classify_pipeline(task, &stream, applied_bias, &cfg, gate)?;
                preds.push(track);
            }
        }
        let report = metrics::evaluate_tracks(&preds, &truths, task)?;
        rows.push((v.name.to_string(), report));
    }

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("ablate.csv"), report_csv(&rows))?;
    let json_rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|(name, r)| {
            serde_json::json!({
                "variant": name,
                "report": r,
            })
        })
        .collect();
    save_json(&json_rows, &args.out.join("ablate.json"))?;

    println!("{:<24} {:>9} {:>9}", "variant", "macro_f1", "accuracy");
    for (name, r) in &rows {
        println!("{name:<24} {:>9.4} {:>9.4}", r.macro_f1, r.accuracy);
    }
    Ok(())
}
