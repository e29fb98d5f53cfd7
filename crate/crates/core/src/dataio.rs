//! Motion files, window slicing, dataset splits and synthetic data.
//!
//! Motion JSON:
//!
//! ```json
//! {"fps": 30.0, "joints": 2, "frames": [[[0.0, 0.1, 0.0], [0.0, 0.0, 0.2]], ...]}
//! ```

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SarError};
use crate::motion::{Motion, Pose, Rotation};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionFile {
    fps: f64,
    joints: usize,
    frames: Vec<Vec<[f64; 3]>>,
}

fn parse_err(context: &str, message: impl Into<String>) -> SarError {
    SarError::Parse {
        context: context.to_string(),
        message: message.into(),
    }
}

pub fn motion_to_json(m: &Motion) -> String {
    let file = MotionFile {
        fps: m.fps,
        joints: m.joints(),
        frames: m.frames.iter().map(|p| p.0.iter().map(|r| r.0).collect()).collect(),
    };
    serde_json::to_string(&file).expect("motion serializes")
}

pub fn motion_from_json(text: &str, context: &str) -> Result<Motion> {
    let file: MotionFile = serde_json::from_str(text).map_err(|e| parse_err(context, e.to_string()))?;
    if let Some((i, f)) = file.frames.iter().enumerate().find(|(_, f)| f.len() != file.joints) {
        return Err(parse_err(
            context,
            format!("frame {i} has {} joints, header says {}", f.len(), file.joints),
        ));
    }
    let frames = file
        .frames
        .into_iter()
        .map(|f| Pose(f.into_iter().map(Rotation).collect()))
        .collect();
    Motion::new(frames, file.fps).map_err(|e| parse_err(context, e.to_string()))
}

pub fn save_motion(m: &Motion, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, motion_to_json(m)).map_err(|e| SarError::io(path, e))
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<Motion> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SarError::io(path, e))?;
    motion_from_json(&text, &path.display().to_string())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameratePolicy {
    /// Motions at or above this rate also yield downsampled windows.
    pub threshold_fps: f64,
}

impl Default for FrameratePolicy {
    fn default() -> Self {
        FrameratePolicy { threshold_fps: 60.0 }
    }
}

/// Windows of `window` frames every `stride` frames. High-framerate motions
/// additionally give windows of `2·window` frames (every `2·stride` frames)
/// keeping every second frame, recorded at half the framerate.
pub fn slice_windows(m: &Motion, window: usize, stride: usize, policy: FrameratePolicy) -> Result<Vec<Motion>> {
    if window == 0 || stride == 0 {
        return Err(SarError::invalid("window and stride must be positive"));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= m.len() {
        out.push(Motion::new(m.frames[start..start + window].to_vec(), m.fps)?);
        start += stride;
    }
    if m.fps >= policy.threshold_fps {
        let long = 2 * window;
        let mut start = 0;
        while start + long <= m.len() {
            let frames = m.frames[start..start + long].iter().step_by(2).cloned().collect();
            out.push(Motion::new(frames, m.fps / 2.0)?);
            start += 2 * stride;
        }
    }
    Ok(out)
}

/// Train, validation and test portions.
#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffles whole source groups with a seeded generator and assigns
/// `round(r_train·n)` groups to train, `round(r_val·n)` to validation and the
/// rest to test.
pub fn split_dataset<T>(groups: Vec<Vec<T>>, ratios: [f64; 3], seed: u64) -> Result<Split<T>> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SarError::invalid(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let n = groups.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let mut slots: Vec<Option<Vec<T>>> = groups.into_iter().map(Some).collect();
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (k, &g) in order.iter().enumerate() {
        let items = slots[g].take().unwrap();
        if k < n_train {
            split.train.extend(items);
        } else if k < n_train + n_val {
            split.val.extend(items);
        } else {
            split.test.extend(items);
        }
    }
    Ok(split)
}

/// Smooth synthetic motions: every axis-angle coordinate is a sum of 1 to 3
/// sinusoids with frequency in [0.25, 2] Hz, amplitude up to 0.8 rad and
/// random phase.
pub fn synth_generate(n_sequences: usize, joints: usize, length: usize, fps: f64, seed: u64) -> Result<Vec<Motion>> {
    if joints == 0 || length == 0 {
        return Err(SarError::invalid("joints and length must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_sequences)
        .map(|_| {
            let waves: Vec<Vec<(f64, f64, f64)>> = (0..joints * 3)
                .map(|_| {
                    let k = rng.gen_range(1..=3);
                    (0..k)
                        .map(|_| {
                            (
                                rng.gen_range(0.25..=2.0),
                                rng.gen_range(0.0..=0.8),
                                rng.gen_range(0.0..std::f64::consts::TAU),
                            )
                        })
                        .collect()
                })
                .collect();
            let frames = (0..length)
                .map(|t| {
                    let time = t as f64 / fps;
                    let flat: Vec<f64> = waves
                        .iter()
                        .map(|ws| {
                            ws.iter()
                                .map(|(f, a, p)| a * (std::f64::consts::TAU * f * time + p).sin())
                                .sum()
                        })
                        .collect();
                    Pose::from_flat(&flat)
                })
                .collect();
            Motion::new(frames, fps)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: String,
}

pub fn save_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(entries).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| SarError::io(path, e))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SarError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(&path.display().to_string(), e.to_string()))
}

/// Loads the motions of one split; relative paths are resolved against the
/// manifest's directory.
pub fn load_split(manifest: impl AsRef<Path>, split: &str) -> Result<Vec<Motion>> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    load_manifest(manifest)?
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| load_motion(base.join(&e.path)))
        .collect()
}

/// Writes `split/name.json` files under `dir` plus `manifest.json`; returns
/// the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, split: &Split<Motion>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut entries = Vec::new();
    for (name, items) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub).map_err(|e| SarError::io(&sub, e))?;
        for (i, m) in items.iter().enumerate() {
            let rel = PathBuf::from(name).join(format!("{i:05}.json"));
            save_motion(m, dir.join(&rel))?;
            entries.push(ManifestEntry {
                path: rel,
                split: name.to_string(),
            });
        }
    }
    let path = dir.join("manifest.json");
    save_manifest(&entries, &path)?;
    Ok(path)
}
