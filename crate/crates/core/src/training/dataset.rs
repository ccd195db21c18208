//! Training samples and the dataset manifest.
//!
//! The manifest is TOML with one `[[sample]]` table per sequence; paths are
//! relative to the manifest's directory:
//!
//! ```toml
//! [[sample]]
//! id = "s000"
//! neutral = "s000/neutral.obj"
//! sequence = "s000/frames"
//! features = "s000/features.stfx"
//! lip_mask = "s000/lip.txt"
//! upper_mask = "s000/upper.txt"
//! fps = 30.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::audio::{load_features, save_features, FeatureSequence};
use crate::error::{Error, Result};
use crate::mesh::{load_mask, load_mesh, load_sequence, save_mask, save_mesh, save_sequence, MaskLabel, Mesh, VertexMask};

/// One sequence: neutral mesh, ground-truth frames on its topology, aligned
/// features and region masks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub id: String,
    pub neutral: Mesh,
    /// `T × V × 3` positions.
    pub frames: Array3<f64>,
    /// `T` rows, one per ground-truth frame.
    pub features: FeatureSequence,
    pub lip: VertexMask,
    pub upper: VertexMask,
    pub fps: f64,
}

impl TrainingSample {
    pub fn new(
        id: impl Into<String>,
        neutral: Mesh,
        frames: Array3<f64>,
        features: FeatureSequence,
        lip: VertexMask,
        upper: VertexMask,
        fps: f64,
    ) -> Result<Self> {
        let id = id.into();
        let wrap = |e: Error| Error::Sample {
            sample: id.clone(),
            source: Box::new(e),
        };
        let (t, v, c) = frames.dim();
        if t == 0 {
            return Err(wrap(Error::EmptySequence));
        }
        if v != neutral.num_vertices() {
            return Err(wrap(Error::VertexCountMismatch {
                context: "ground-truth sequence".into(),
                expected: neutral.num_vertices(),
                found: v,
            }));
        }
        if c != 3 {
            return Err(wrap(Error::shape(format!("frames have {c} coordinates"))));
        }
        if features.frames() != t {
            return Err(wrap(Error::shape(format!(
                "{} feature frames for {t} ground-truth frames",
                features.frames()
            ))));
        }
        for m in [&lip, &upper] {
            if m.indices().last().is_some_and(|&i| i >= v) {
                return Err(wrap(Error::invalid(format!("{:?} mask exceeds {v} vertices", m.label()))));
            }
        }
        if let Some(i) = frames.iter().position(|x| !x.is_finite()) {
            return Err(wrap(Error::NonFinite(format!("ground truth frame {}", i / (3 * v)))));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(wrap(Error::invalid(format!("fps {fps} must be positive"))));
        }
        Ok(TrainingSample {
            id,
            neutral,
            frames,
            features,
            lip,
            upper,
            fps,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dim().0
    }

    pub fn num_vertices(&self) -> usize {
        self.frames.dim().1
    }

    /// Ground truth as frame-major `(T·V) × 3` rows.
    pub fn target_rows(&self) -> Array2<f64> {
        let (t, v, _) = self.frames.dim();
        self.frames.to_shape((t * v, 3)).unwrap().to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub neutral: PathBuf,
    pub sequence: PathBuf,
    pub features: PathBuf,
    pub lip_mask: PathBuf,
    pub upper_mask: PathBuf,
    pub fps: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub sample: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Loads one entry. Features are linearly resampled to the ground-truth
/// frame count.
pub fn load_entry(entry: &ManifestEntry, base: &Path) -> Result<TrainingSample> {
    let wrap = |e: Error| Error::Sample {
        sample: entry.id.clone(),
        source: Box::new(e),
    };
    let load = || -> Result<TrainingSample> {
        let neutral = load_mesh(&base.join(&entry.neutral))?;
        let (frames, faces) = load_sequence(&base.join(&entry.sequence))?;
        if faces != neutral.faces() {
            return Err(Error::InvalidMesh {
                line: None,
                message: "sequence topology differs from the neutral mesh".into(),
            });
        }
        let v = neutral.num_vertices();
        let lip = load_mask(&base.join(&entry.lip_mask), MaskLabel::Lip, v)?;
        let upper = load_mask(&base.join(&entry.upper_mask), MaskLabel::UpperFace, v)?;
        let features = load_features(&base.join(&entry.features))?.resampled(frames.dim().0)?;
        TrainingSample::new(entry.id.clone(), neutral, frames, features, lip, upper, entry.fps)
    };
    load().map_err(|e| match e {
        Error::Sample { .. } => e,
        other => wrap(other),
    })
}

/// Reads a manifest and every sample it lists. An empty manifest is an error.
pub fn load_dataset(manifest: &Path) -> Result<Vec<TrainingSample>> {
    let m = DatasetManifest::read(manifest)?;
    if m.sample.is_empty() {
        return Err(Error::Config(format!("{}: manifest lists no samples", manifest.display())));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    m.sample.iter().map(|e| load_entry(e, base)).collect()
}

/// Writes each sample under `dir/<id>/` and returns the manifest path
/// (`dir/manifest.toml`).
pub fn write_dataset(samples: &[TrainingSample], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = DatasetManifest::default();
    for s in samples {
        let rel = PathBuf::from(&s.id);
        let sd = dir.join(&rel);
        fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
        save_mesh(&s.neutral, &sd.join("neutral.obj"))?;
        save_sequence(&s.frames, s.neutral.faces(), &sd.join("frames"))?;
        save_features(&s.features, &sd.join("features.stfx"))?;
        save_mask(&s.lip, &sd.join("lip.txt"))?;
        save_mask(&s.upper, &sd.join("upper.txt"))?;
        manifest.sample.push(ManifestEntry {
            id: s.id.clone(),
            neutral: rel.join("neutral.obj"),
            sequence: rel.join("frames"),
            features: rel.join("features.stfx"),
            lip_mask: rel.join("lip.txt"),
            upper_mask: rel.join("upper.txt"),
            fps: s.fps,
        });
    }
    let path = dir.join("manifest.toml");
    manifest.write(&path)?;
    Ok(path)
}
