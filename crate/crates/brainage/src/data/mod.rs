//! Volume ingestion, preprocessing, dataset manifests and slice stacking.
//!
//! Preprocessing follows the training pipeline convention: clip intensities
//! to [0, V_99.5] (the volume-wide 99.5th percentile), rescale linearly to
//! [-1, +1], take the middle 60 axial slices and center-crop (or pad with
//! background) each slice to 208x160. Raw scans are nonnegative; a volume
//! whose voxels already sit in [-1, 1] with a negative floor is recognized
//! as normalized output and passes through intensity-unchanged, which makes
//! preprocessing idempotent.

pub mod nifti;
pub mod phantom;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::conditioning::{HealthState, SubjectMeta, MAX_AGE};
use crate::error::{Error, Result};
use crate::image::{SliceImage, SLICE_HEIGHT, SLICE_WIDTH};

/// Number of axial slices kept by preprocessing.
pub const SLICES_PER_VOLUME: usize = 60;

/// A volumetric image with its spatial metadata and, when known, the
/// subject it came from.
#[derive(Debug, Clone)]
pub struct Volume {
    /// (axial slices, rows, cols).
    pub voxels: Array3<f64>,
    pub affine: [[f64; 4]; 4],
    pub meta: Option<SubjectMeta>,
}

impl Volume {
    pub fn new(voxels: Array3<f64>) -> Self {
        Volume {
            voxels,
            affine: nifti::identity_affine(),
            meta: None,
        }
    }
}

/// Load a volume from a NIfTI file.
pub fn load_volume(path: &Path) -> Result<Volume> {
    let (voxels, affine) = nifti::read_nifti(path)?;
    if voxels.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("volume {}", path.display())));
    }
    Ok(Volume {
        voxels,
        affine,
        meta: None,
    })
}

/// Save a volume (f32 storage, gzip chosen by extension).
pub fn save_volume(path: &Path, volume: &Volume) -> Result<()> {
    nifti::write_nifti(path, &volume.voxels, &volume.affine, nifti::StorageDtype::F32)
}

/// Linear-interpolated percentile (q in [0, 100]) of all voxels.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn center_fit(slice: ndarray::ArrayView2<f64>, fill: f64) -> Array2<f64> {
    let (h, w) = slice.dim();
    let mut out = Array2::from_elem((SLICE_HEIGHT, SLICE_WIDTH), fill);
    let copy_h = h.min(SLICE_HEIGHT);
    let copy_w = w.min(SLICE_WIDTH);
    let src_y = (h - copy_h) / 2;
    let src_x = (w - copy_w) / 2;
    let dst_y = (SLICE_HEIGHT - copy_h) / 2;
    let dst_x = (SLICE_WIDTH - copy_w) / 2;
    for y in 0..copy_h {
        for x in 0..copy_w {
            out[[dst_y + y, dst_x + x]] = slice[[src_y + y, src_x + x]];
        }
    }
    out
}

/// Intensity-normalize a volume and cut it into the middle 60 slices at
/// 208x160.
pub fn preprocess_volume(volume: &Volume) -> Result<Vec<SliceImage>> {
    let s = volume.voxels.dim().0;
    if s < SLICES_PER_VOLUME {
        return Err(Error::Shape {
            expected: format!(">= {SLICES_PER_VOLUME} axial slices"),
            got: format!("{s}"),
        });
    }
    let flat = volume.voxels.as_standard_layout();
    let flat = flat.as_slice().expect("standard layout");
    let v_min = flat.iter().copied().fold(f64::INFINITY, f64::min);
    let v_max = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    // A negative floor inside [-1, 1] marks already-normalized output (raw
    // scans are nonnegative); leave its intensities alone.
    let normalized = v_min >= -1.0 - 1e-9 && v_max <= 1.0 + 1e-9 && v_min < 0.0;
    let clip_hi = if normalized {
        1.0
    } else {
        let v_hi = percentile(flat, 99.5);
        if v_hi <= 0.0 {
            return Err(Error::DegenerateVolume);
        }
        v_hi
    };

    let start = (s - SLICES_PER_VOLUME) / 2;
    let mut out = Vec::with_capacity(SLICES_PER_VOLUME);
    for k in start..start + SLICES_PER_VOLUME {
        let slice = volume.voxels.index_axis(ndarray::Axis(0), k);
        let rescaled = if normalized {
            slice.mapv(|v| v.clamp(-1.0, 1.0))
        } else {
            slice.mapv(|v| v.clamp(0.0, clip_hi) * (2.0 / clip_hi) - 1.0)
        };
        out.push(SliceImage::new(center_fit(rescaled.view(), -1.0))?);
    }
    Ok(out)
}

/// Reassemble a preprocessed 60-slice stack into a volume, reattaching the
/// original spatial metadata.
pub fn stack_slices(slices: &[SliceImage], affine: [[f64; 4]; 4]) -> Result<Volume> {
    if slices.len() != SLICES_PER_VOLUME {
        return Err(Error::Shape {
            expected: format!("{SLICES_PER_VOLUME} slices"),
            got: format!("{}", slices.len()),
        });
    }
    let mut voxels = Array3::zeros((SLICES_PER_VOLUME, SLICE_HEIGHT, SLICE_WIDTH));
    for (k, slice) in slices.iter().enumerate() {
        voxels.index_axis_mut(ndarray::Axis(0), k).assign(slice.pixels());
    }
    Ok(Volume {
        voxels,
        affine,
        meta: None,
    })
}

/// Mean absolute difference between adjacent axial slices: a through-plane
/// continuity statistic. Coherent stacks score low; slice-shuffled or
/// subject-mixed stacks score high.
pub fn axial_continuity(volume: &Volume) -> f64 {
    let (s, h, w) = volume.voxels.dim();
    if s < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..s - 1 {
        let a = volume.voxels.index_axis(ndarray::Axis(0), k);
        let b = volume.voxels.index_axis(ndarray::Axis(0), k + 1);
        total += a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>();
    }
    total / ((s - 1) * h * w) as f64
}

/// Dataset split membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One manifest row: a volume file with its subject's clinical variables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    pub path: String,
    pub age: u32,
    pub health: HealthState,
    pub split: Split,
    /// Manual exclusion flag (e.g. registration failures).
    #[serde(default)]
    pub exclude: bool,
}

impl ManifestRow {
    pub fn meta(&self) -> Result<SubjectMeta> {
        SubjectMeta::new(self.subject_id.clone(), self.age, self.health)
    }
}

/// CSV-backed dataset manifest. Relative volume paths resolve against the
/// manifest file's directory.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let manifest = DatasetManifest {
            rows,
            base_dir: PathBuf::new(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| {
            Error::parse(path.display().to_string(), e)
        })?;
        let mut rows = Vec::new();
        for record in reader.deserialize::<ManifestRow>() {
            rows.push(record.map_err(|e| Error::parse(path.display().to_string(), e))?);
        }
        let manifest = DatasetManifest {
            rows,
            base_dir: path.parent().unwrap_or(Path::new("")).to_path_buf(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let mut writer =
            csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        for row in &self.rows {
            writer
                .serialize(row)
                .map_err(|e| Error::parse(path.display().to_string(), e))?;
        }
        writer
            .flush()
            .map_err(|e| Error::io(path, e))
    }

    /// Absolute path of a row's volume file.
    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Rows of one split, skipping excluded entries.
    pub fn split_rows(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows
            .iter()
            .filter(move |r| r.split == split && !r.exclude)
    }

    /// Cross-sectional constraint: within the training split every subject
    /// appears with exactly one acquisition age.
    pub fn validate(&self) -> Result<()> {
        let mut train_subjects = BTreeSet::new();
        let mut seen = BTreeSet::new();
        for row in &self.rows {
            if row.age > MAX_AGE {
                return Err(Error::AgeOutOfRange(row.age as i64));
            }
            if !seen.insert((row.subject_id.clone(), row.age, row.split == Split::Train)) {
                return Err(Error::Dataset(format!(
                    "duplicate manifest row for subject {} at age {}",
                    row.subject_id, row.age
                )));
            }
            if row.split == Split::Train && !row.exclude {
                if !train_subjects.insert(row.subject_id.clone()) {
                    return Err(Error::Dataset(format!(
                        "training split is cross-sectional: subject {} appears more than once",
                        row.subject_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// All preprocessed slices of one subject.
#[derive(Debug, Clone)]
pub struct SubjectSlices {
    pub meta: SubjectMeta,
    pub slices: Vec<SliceImage>,
}

/// In-memory training/evaluation dataset: per-subject slices with clinical
/// variables attached.
#[derive(Debug, Clone, Default)]
pub struct SliceDataset {
    pub subjects: Vec<SubjectSlices>,
}

impl SliceDataset {
    /// Load and preprocess every non-excluded volume of a manifest split.
    /// `slices_per_subject` keeps only the given number of middle slices
    /// (None keeps all 60).
    pub fn from_manifest(
        manifest: &DatasetManifest,
        split: Split,
        slices_per_subject: Option<usize>,
    ) -> Result<Self> {
        let mut subjects = Vec::new();
        for row in manifest.split_rows(split) {
            let path = manifest.resolve(row);
            let volume = load_volume(&path)?;
            let slices = preprocess_volume(&volume)?;
            subjects.push(SubjectSlices {
                meta: row.meta()?,
                slices: keep_middle(slices, slices_per_subject),
            });
        }
        Ok(SliceDataset { subjects })
    }

    pub fn total_slices(&self) -> usize {
        self.subjects.iter().map(|s| s.slices.len()).sum()
    }

    pub fn median_age(&self) -> Option<u32> {
        if self.subjects.is_empty() {
            return None;
        }
        let mut ages: Vec<u32> = self.subjects.iter().map(|s| s.meta.age).collect();
        ages.sort_unstable();
        Some(ages[ages.len() / 2])
    }

    pub fn age_bounds(&self) -> Option<(u32, u32)> {
        let ages: Vec<u32> = self.subjects.iter().map(|s| s.meta.age).collect();
        Some((*ages.iter().min()?, *ages.iter().max()?))
    }
}

/// Keep the middle `count` elements of a slice list.
pub fn keep_middle(slices: Vec<SliceImage>, count: Option<usize>) -> Vec<SliceImage> {
    match count {
        Some(k) if k < slices.len() => {
            let start = (slices.len() - k) / 2;
            slices.into_iter().skip(start).take(k).collect()
        }
        _ => slices,
    }
}
