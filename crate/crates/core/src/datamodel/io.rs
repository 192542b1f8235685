//! On-disk formats.
//!
//! Streams are CSV with one leading `#` metadata comment; manifests and
//! calibration artifacts are JSON. All reals are written as shortest
//! round-tripping decimal text, so `load(save(x))` reproduces `x` bit for
//! bit.
//!
//! ```text
//! # video_id=clip01 rate_hz=30 source=backbone
//! frame_id,f0,f1,f2
//! 0,0.25,-1.5,3.125
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mat::Mat;

use super::{
    DatasetManifest, FeatureStream, LabelTrack, Labels, ScoreKind, ScoreStream, TaskKind, NUM_AU,
};

fn fmt_f64(v: f64) -> String {
    // `{}` prints the shortest decimal that parses back to the same bits
    format!("{v}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("cannot parse {what} from '{s}'")))
}

fn parse_finite(s: &str, what: &str) -> Result<f64> {
    let v = parse_f64(s, what)?;
    if !v.is_finite() {
        return Err(Error::Value(format!("{what} must be finite, got '{s}'")));
    }
    Ok(v)
}

fn parse_u64(s: &str, what: &str) -> Result<u64> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| Error::Format(format!("cannot parse {what} from '{s}'")))
}

/// Parses a `# key=value key=value ...` metadata comment.
fn parse_meta(line: &str) -> Result<BTreeMap<String, String>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Format("expected leading '#' metadata line".into()))?;
    let mut out = BTreeMap::new();
    for tok in body.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("metadata token '{tok}' is not key=value")))?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

fn meta_get<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::Format(format!("metadata line is missing '{key}='")))
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

type CsvParts<'a> = (BTreeMap<String, String>, Vec<String>, &'a [String]);

/// Splits a CSV file into (metadata, header cells, data rows).
fn split_csv(lines: &[String]) -> Result<CsvParts<'_>> {
    if lines.len() < 2 {
        return Err(Error::Format("file too short: need metadata and header lines".into()));
    }
    let meta = parse_meta(&lines[0])?;
    let header: Vec<String> = lines[1].split(',').map(|s| s.trim().to_string()).collect();
    Ok((meta, header, &lines[2..]))
}

pub fn save_feature_stream(stream: &FeatureStream, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "# video_id={} rate_hz={} source={}\n",
        stream.video_id,
        fmt_f64(stream.frame_rate_hz),
        if stream.source_tag.is_empty() { "unknown" } else { &stream.source_tag }
    ));
    out.push_str("frame_id");
    for d in 0..stream.dim() {
        out.push_str(&format!(",f{d}"));
    }
    out.push('\n');
    for (i, &fid) in stream.frame_ids.iter().enumerate() {
        out.push_str(&fid.to_string());
        for v in stream.features.row(i) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn load_feature_stream(path: &Path) -> Result<FeatureStream> {
    let lines = read_lines(path)?;
    let (meta, header, body) = split_csv(&lines)?;
    let video_id = meta_get(&meta, "video_id")?.to_string();
    let rate = parse_finite(meta_get(&meta, "rate_hz")?, "rate_hz")?;
    let source = meta.get("source").cloned().unwrap_or_default();

    if header.first().map(|s| s.as_str()) != Some("frame_id") {
        return Err(Error::Format("feature header must start with 'frame_id'".into()));
    }
    let dim = header.len() - 1;
    for (d, name) in header.iter().skip(1).enumerate() {
        if name != &format!("f{d}") {
            return Err(Error::Format(format!("unexpected feature column '{name}'")));
        }
    }

    let mut frame_ids = Vec::with_capacity(body.len());
    let mut rows = Vec::with_capacity(body.len());
    for line in body {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 1 {
            return Err(Error::Format(format!(
                "row has {} cells, expected {}",
                cells.len(),
                dim + 1
            )));
        }
        frame_ids.push(parse_u64(cells[0], "frame_id")?);
        let mut row = Vec::with_capacity(dim);
        for c in &cells[1..] {
            row.push(parse_finite(c, "feature value")?);
        }
        rows.push(row);
    }
    FeatureStream::new(video_id, frame_ids, Mat::from_rows(&rows)?, source, rate)
}

pub fn save_score_stream(stream: &ScoreStream, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "# video_id={} kind={}\n",
        stream.video_id,
        stream.kind.name()
    ));
    out.push_str("frame_id");
    for c in 0..stream.num_channels() {
        out.push_str(&format!(",s{c}"));
    }
    out.push('\n');
    for (i, &fid) in stream.frame_ids.iter().enumerate() {
        out.push_str(&fid.to_string());
        for v in stream.scores.row(i) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn load_score_stream(path: &Path) -> Result<ScoreStream> {
    let lines = read_lines(path)?;
    let (meta, header, body) = split_csv(&lines)?;
    let video_id = meta_get(&meta, "video_id")?.to_string();
    let kind = ScoreKind::parse(meta_get(&meta, "kind")?)?;

    if header.first().map(|s| s.as_str()) != Some("frame_id") {
        return Err(Error::Format("score header must start with 'frame_id'".into()));
    }
    let c = header.len() - 1;
    let mut frame_ids = Vec::new();
    let mut rows = Vec::new();
    for line in body {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != c + 1 {
            return Err(Error::Format(format!(
                "row has {} cells, expected {}",
                cells.len(),
                c + 1
            )));
        }
        frame_ids.push(parse_u64(cells[0], "frame_id")?);
        let mut row = Vec::with_capacity(c);
        for cell in &cells[1..] {
            row.push(parse_finite(cell, "score")?);
        }
        rows.push(row);
    }
    ScoreStream::new(video_id, frame_ids, Mat::from_rows(&rows)?, kind)
}

fn label_header(task: TaskKind) -> String {
    match task {
        TaskKind::Expr | TaskKind::Vd | TaskKind::Audio => "frame_id,mask,y".to_string(),
        TaskKind::Va => "frame_id,mask,valence,arousal".to_string(),
        TaskKind::Au => {
            let mut h = String::from("frame_id,mask");
            for c in 0..NUM_AU {
                h.push_str(&format!(",au{c}"));
            }
            h
        }
    }
}

pub fn save_label_track(track: &LabelTrack, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "# video_id={} task={}\n",
        track.video_id,
        track.task.name()
    ));
    out.push_str(&label_header(track.task));
    out.push('\n');
    for i in 0..track.num_frames() {
        out.push_str(&track.frame_ids[i].to_string());
        out.push(',');
        out.push(if track.mask[i] { '1' } else { '0' });
        match &track.labels {
            Labels::Class(v) => out.push_str(&format!(",{}", v[i])),
            Labels::Va(v) => out.push_str(&format!(",{},{}", fmt_f64(v[i].0), fmt_f64(v[i].1))),
            Labels::Au(v) => {
                for b in v[i] {
                    out.push_str(&format!(",{b}"));
                }
            }
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn load_label_track(path: &Path) -> Result<LabelTrack> {
    let lines = read_lines(path)?;
    let (meta, header, body) = split_csv(&lines)?;
    let video_id = meta_get(&meta, "video_id")?.to_string();
    let task = TaskKind::parse(meta_get(&meta, "task")?)
        .map_err(|e| Error::Format(e.to_string()))?;

    let expected = label_header(task);
    if header.join(",") != expected {
        return Err(Error::Format(format!(
            "label header '{}' does not match task {} (expected '{expected}')",
            header.join(","),
            task.name()
        )));
    }

    let mut frame_ids = Vec::new();
    let mut mask = Vec::new();
    let mut class = Vec::new();
    let mut au: Vec<[u8; NUM_AU]> = Vec::new();
    let mut va = Vec::new();
    for line in body {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != expected.split(',').count() {
            return Err(Error::Format(format!("row has {} cells", cells.len())));
        }
        frame_ids.push(parse_u64(cells[0], "frame_id")?);
        mask.push(match cells[1].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::Format(format!("mask cell '{other}' must be 0 or 1"))),
        });
        match task {
            TaskKind::Expr | TaskKind::Vd | TaskKind::Audio => {
                class.push(parse_u64(cells[2], "class label")? as usize);
            }
            TaskKind::Va => {
                va.push((
                    parse_finite(cells[2], "valence")?,
                    parse_finite(cells[3], "arousal")?,
                ));
            }
            TaskKind::Au => {
                let mut bits = [0u8; NUM_AU];
                for (c, cell) in cells[2..].iter().enumerate() {
                    bits[c] = match cell.trim() {
                        "1" => 1,
                        "0" => 0,
                        other => {
                            return Err(Error::Format(format!("AU cell '{other}' must be 0 or 1")))
                        }
                    };
                }
                au.push(bits);
            }
        }
    }
    let labels = match task {
        TaskKind::Expr | TaskKind::Vd | TaskKind::Audio => Labels::Class(class),
        TaskKind::Va => Labels::Va(va),
        TaskKind::Au => Labels::Au(au),
    };
    LabelTrack::new(video_id, task, frame_ids, labels, mask)
}

/// Serializes any JSON-backed artifact (manifests, calibration artifacts,
/// network states) with a stable, human-diffable layout.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("json serialization failed: {e}")))?;
    write_atomic(path, &(text + "\n"))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    save_json(manifest, path)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = load_json(path)?;
    m.validate()?;
    Ok(m)
}

/// Resolves a manifest-relative path against the manifest's directory.
pub fn resolve_path(manifest_path: &Path, relative: &str) -> std::path::PathBuf {
    let p = Path::new(relative);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}
