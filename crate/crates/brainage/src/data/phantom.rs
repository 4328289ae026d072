//! Procedural ageing phantom.
//!
//! Each phantom subject is a head-shaped ellipse with a bright cortex band,
//! mid-gray tissue, a dark central "ventricle" and three bright landmark
//! dots. The ventricle area grows linearly with age at a health-state
//! specific rate (CN < MCI < AD) and the cortex band thins with age; shape
//! eccentricity, landmark placement and intensity levels persist across ages
//! of the same subject, giving it an identity. Volumes are rendered in raw
//! scanner-like units and flow through the standard preprocessing.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::{HealthState, SubjectMeta};
use crate::error::{Error, Result};
use crate::image::{SliceImage, SLICE_HEIGHT, SLICE_WIDTH};

use super::{
    keep_middle, nifti, preprocess_volume, DatasetManifest, ManifestRow, SliceDataset, Split,
    SubjectSlices, Volume,
};

/// Raw intensity levels of the phantom tissue classes.
const BG_LEVEL: f64 = 0.0;
const VENT_LEVEL: f64 = 40.0;
const DOT_LEVEL: f64 = 980.0;

/// Geometry and dynamics of the phantom population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// Ventricle area at age 0, in pixels^2.
    pub base_ventricle_area: f64,
    /// Ventricle area growth per year for CN, MCI, AD (strictly increasing).
    pub ventricle_growth: [f64; 3],
    /// Cortex band thickness at age 0, in pixels.
    pub cortex_thickness: f64,
    /// Cortex thinning per year, in pixels.
    pub cortex_thinning: f64,
    /// Base head semi-axes (rows, cols) in pixels.
    pub head_semi_axes: (f64, f64),
    /// Gaussian noise sigma in raw intensity units.
    pub noise: f64,
    /// Baseline acquisition ages are drawn from this range.
    pub age_min: u32,
    pub age_max: u32,
    /// Axial slices per rendered volume (>= 60 so preprocessing applies).
    pub slices: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            base_ventricle_area: 280.0,
            ventricle_growth: [6.0, 10.0, 15.0],
            cortex_thickness: 16.0,
            cortex_thinning: 0.12,
            head_semi_axes: (88.0, 66.0),
            noise: 8.0,
            age_min: 20,
            age_max: 90,
            slices: 61,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let [cn, mci, ad] = self.ventricle_growth;
        if !(cn < mci && mci < ad) {
            return Err(Error::Config(format!(
                "ventricle growth rates must be strictly ordered CN < MCI < AD, got {:?}",
                self.ventricle_growth
            )));
        }
        if self.noise < 0.0 {
            return Err(Error::Config("phantom noise must be >= 0".into()));
        }
        if self.age_min >= self.age_max || self.age_max > crate::conditioning::MAX_AGE {
            return Err(Error::Config(format!(
                "invalid phantom age range [{}, {}]",
                self.age_min, self.age_max
            )));
        }
        if self.slices < super::SLICES_PER_VOLUME {
            return Err(Error::Config(format!(
                "phantom volumes need >= {} slices, got {}",
                super::SLICES_PER_VOLUME,
                self.slices
            )));
        }
        if self.base_ventricle_area <= 0.0 || self.cortex_thickness <= 0.0 {
            return Err(Error::Config("phantom geometry must be positive".into()));
        }
        Ok(())
    }

    pub fn growth_rate(&self, health: HealthState) -> f64 {
        self.ventricle_growth[health.severity() as usize]
    }

    /// Generative ventricle area (pixels^2) at a given age and health state.
    pub fn ventricle_area(&self, health: HealthState, age: u32) -> f64 {
        self.base_ventricle_area + self.growth_rate(health) * age as f64
    }
}

/// Identity of one phantom subject: everything that persists across ages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSubject {
    pub id: String,
    /// Overall head scale.
    pub scale: f64,
    /// Eccentricity multiplier (rows axis stretched, cols axis shrunk).
    pub eccentricity: f64,
    /// Ventricle aspect ratio (rows semi-axis / cols semi-axis).
    pub vent_aspect: f64,
    /// Ventricle center offset (rows, cols) in pixels.
    pub vent_offset: (f64, f64),
    /// Landmark dots in head-fraction polar form (angle, radius fraction).
    pub landmarks: [(f64, f64); 3],
    pub tissue_level: f64,
    pub cortex_level: f64,
    pub health: HealthState,
    /// Baseline acquisition age.
    pub age: u32,
}

/// Draw the deterministic phantom population for a seed.
pub fn phantom_subjects(spec: &PhantomSpec, n_subjects: usize, seed: u64) -> Vec<PhantomSubject> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n_subjects)
        .map(|i| {
            let health = HealthState::ALL[rng.random_range(0..3)];
            // Keep room for a follow-up acquisition.
            let age = rng.random_range(spec.age_min..=spec.age_max.saturating_sub(16));
            PhantomSubject {
                id: format!("phantom_{i:04}"),
                scale: rng.random_range(0.95..1.05),
                eccentricity: rng.random_range(0.93..1.07),
                vent_aspect: rng.random_range(1.3..1.7),
                vent_offset: (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
                landmarks: std::array::from_fn(|_| {
                    (
                        rng.random_range(0.0..std::f64::consts::TAU),
                        rng.random_range(0.45..0.72),
                    )
                }),
                tissue_level: rng.random_range(490.0..550.0),
                cortex_level: rng.random_range(780.0..860.0),
                health,
                age,
            }
        })
        .collect()
}

/// 1-pixel linear coverage ramp for soft region edges.
fn coverage(signed_distance_px: f64) -> f64 {
    (signed_distance_px + 0.5).clamp(0.0, 1.0)
}

/// Render one axial slice in raw intensity units.
///
/// `z_frac` in [-1, 1] selects the axial position; anatomy shrinks slightly
/// toward the poles like an ellipsoid cross-section.
pub fn render_slice_raw(
    spec: &PhantomSpec,
    subject: &PhantomSubject,
    age: u32,
    z_frac: f64,
    noise_rng: Option<&mut ChaCha12Rng>,
) -> Array2<f64> {
    let rho = (1.0 - 0.15 * z_frac * z_frac).sqrt();
    let ar = spec.head_semi_axes.0 * subject.scale * subject.eccentricity * rho;
    let br = spec.head_semi_axes.1 * subject.scale / subject.eccentricity * rho;
    let min_axis = ar.min(br);
    let thickness = (spec.cortex_thickness - spec.cortex_thinning * age as f64).max(2.0) * rho;
    let area = spec.ventricle_area(subject.health, age) * rho * rho;
    let bv = (area / (std::f64::consts::PI * subject.vent_aspect)).sqrt();
    let av = subject.vent_aspect * bv;
    let (cy, cx) = (SLICE_HEIGHT as f64 / 2.0, SLICE_WIDTH as f64 / 2.0);
    let (vy, vx) = (cy + subject.vent_offset.0 * rho, cx + subject.vent_offset.1 * rho);

    let dots: Vec<(f64, f64)> = subject
        .landmarks
        .iter()
        .map(|&(angle, frac)| {
            (
                cy + angle.sin() * frac * ar,
                cx + angle.cos() * frac * br,
            )
        })
        .collect();

    let mut img = Array2::from_elem((SLICE_HEIGHT, SLICE_WIDTH), BG_LEVEL);
    for ((y, x), v) in img.indexed_iter_mut() {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        let r_head = ((dy / ar).powi(2) + (dx / br).powi(2)).sqrt();
        let head_alpha = coverage((1.0 - r_head) * min_axis);
        if head_alpha <= 0.0 {
            continue;
        }
        // Cortex band occupies the outer `thickness` pixels of the head.
        let r_inner = 1.0 - thickness / min_axis;
        let cortex_alpha = coverage((r_head - r_inner) * min_axis);
        let mut inside = subject.tissue_level
            + (subject.cortex_level - subject.tissue_level) * cortex_alpha;

        let dvy = y as f64 - vy;
        let dvx = x as f64 - vx;
        let r_vent = ((dvy / av).powi(2) + (dvx / bv).powi(2)).sqrt();
        let vent_alpha = coverage((1.0 - r_vent) * av.min(bv));
        inside += (VENT_LEVEL - inside) * vent_alpha;

        for &(ly, lx) in &dots {
            let d = ((y as f64 - ly).powi(2) + (x as f64 - lx).powi(2)).sqrt();
            let dot_alpha = coverage(2.2 - d);
            inside += (DOT_LEVEL - inside) * dot_alpha;
        }

        *v = BG_LEVEL + (inside - BG_LEVEL) * head_alpha;
    }

    if let Some(rng) = noise_rng {
        if spec.noise > 0.0 {
            for v in img.iter_mut() {
                // Box-Muller keeps the dependency surface small.
                let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                *v = (*v + spec.noise * (-2.0 * u1.ln()).sqrt() * u2.cos()).max(0.0);
            }
        }
    }
    img
}

/// Derive the deterministic noise stream for (dataset seed, subject, age).
fn noise_rng(seed: u64, subject_index: usize, age: u32, slice: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(((subject_index as u64) << 24) ^ ((age as u64) << 8) ^ slice as u64);
    rng
}

/// Render a subject's full volume at one age, in raw units.
pub fn render_volume(
    spec: &PhantomSpec,
    subject: &PhantomSubject,
    subject_index: usize,
    age: u32,
    seed: u64,
) -> Volume {
    let k = spec.slices;
    let mut voxels = Array3::zeros((k, SLICE_HEIGHT, SLICE_WIDTH));
    let slices: Vec<Array2<f64>> = (0..k)
        .into_par_iter()
        .map(|z| {
            let z_frac = if k > 1 {
                2.0 * z as f64 / (k - 1) as f64 - 1.0
            } else {
                0.0
            };
            let mut rng = noise_rng(seed, subject_index, age, z);
            render_slice_raw(spec, subject, age, z_frac, Some(&mut rng))
        })
        .collect();
    for (z, slice) in slices.into_iter().enumerate() {
        voxels.index_axis_mut(ndarray::Axis(0), z).assign(&slice);
    }
    let mut volume = Volume::new(voxels);
    volume.meta = SubjectMeta::new(subject.id.clone(), age, subject.health).ok();
    volume
}

/// Soft pixel count of the dark ventricle region in the central window of a
/// preprocessed slice. Monotone in the rendered ventricle area.
pub fn ventricle_area_statistic(image: &SliceImage) -> f64 {
    const THRESHOLD: f64 = -0.3;
    const SOFTNESS: f64 = 0.05;
    let (cy, cx) = (SLICE_HEIGHT / 2, SLICE_WIDTH / 2);
    let half = 42usize;
    let mut total = 0.0;
    for y in cy - half..cy + half {
        for x in cx - half..cx + half {
            let v = image.pixels()[[y, x]];
            total += 1.0 / (1.0 + ((v - THRESHOLD) / SOFTNESS).exp());
        }
    }
    total
}

/// Follow-up interval for longitudinal evaluation pairs.
const FOLLOW_UP_YEARS: std::ops::RangeInclusive<u32> = 8..=15;

/// Index-deterministic split: every fifth subject is held out for testing.
pub fn phantom_split(index: usize) -> Split {
    if index % 5 == 4 {
        Split::Test
    } else {
        Split::Train
    }
}

fn follow_up_age(spec: &PhantomSpec, subject: &PhantomSubject, rng: &mut ChaCha12Rng) -> u32 {
    let delta = rng.random_range(FOLLOW_UP_YEARS);
    (subject.age + delta).min(spec.age_max)
}

/// Generate a phantom dataset on disk: one volume per (subject, age), plus
/// longitudinal follow-up volumes for test subjects (evaluation only; the
/// training split stays cross-sectional), and the manifest tying them
/// together.
pub fn generate_phantom_dataset(
    spec: &PhantomSpec,
    n_subjects: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let subjects = phantom_subjects(spec, n_subjects, seed);
    let mut follow_rng = ChaCha12Rng::seed_from_u64(seed ^ 0x51ed_270b);
    let mut rows = Vec::new();
    for (i, subject) in subjects.iter().enumerate() {
        let split = phantom_split(i);
        let mut acquisitions = vec![subject.age];
        if split == Split::Test {
            acquisitions.push(follow_up_age(spec, subject, &mut follow_rng));
        }
        for age in acquisitions {
            let volume = render_volume(spec, subject, i, age, seed);
            let file = format!("{}_{age:03}.nii.gz", subject.id);
            nifti::write_nifti(
                &out_dir.join(&file),
                &volume.voxels,
                &volume.affine,
                nifti::StorageDtype::F32,
            )?;
            rows.push(ManifestRow {
                subject_id: subject.id.clone(),
                path: file,
                age,
                health: subject.health,
                split,
                exclude: false,
            });
        }
    }
    let manifest = DatasetManifest::new(rows)?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    DatasetManifest::load(&out_dir.join("manifest.csv"))
}

/// Build an in-memory phantom slice dataset without touching disk: renders
/// each subject's volume, runs the standard preprocessing, and keeps the
/// middle `slices_per_subject` slices.
pub fn phantom_slice_dataset(
    spec: &PhantomSpec,
    n_subjects: usize,
    slices_per_subject: usize,
    seed: u64,
) -> Result<SliceDataset> {
    spec.validate()?;
    let subjects = phantom_subjects(spec, n_subjects, seed);
    let prepared: Vec<Result<SubjectSlices>> = subjects
        .par_iter()
        .enumerate()
        .map(|(i, subject)| {
            let volume = render_volume(spec, subject, i, subject.age, seed);
            let slices = preprocess_volume(&volume)?;
            Ok(SubjectSlices {
                meta: SubjectMeta::new(subject.id.clone(), subject.age, subject.health)?,
                slices: keep_middle(slices, Some(slices_per_subject)),
            })
        })
        .collect();
    let mut dataset = SliceDataset::default();
    for s in prepared {
        dataset.subjects.push(s?);
    }
    Ok(dataset)
}

/// Longitudinal evaluation pairs rendered in memory: (subject, baseline
/// slices, follow-up slices, follow-up age). Uses the same follow-up draw as
/// the on-disk generator.
pub struct LongitudinalPair {
    pub meta: SubjectMeta,
    pub follow_up_age: u32,
    pub baseline: Vec<SliceImage>,
    pub follow_up: Vec<SliceImage>,
}

pub fn phantom_longitudinal_pairs(
    spec: &PhantomSpec,
    n_subjects: usize,
    slices_per_subject: usize,
    seed: u64,
) -> Result<Vec<LongitudinalPair>> {
    spec.validate()?;
    let subjects = phantom_subjects(spec, n_subjects, seed);
    let mut follow_rng = ChaCha12Rng::seed_from_u64(seed ^ 0x51ed_270b);
    let mut jobs = Vec::new();
    for (i, subject) in subjects.iter().enumerate() {
        let split = phantom_split(i);
        if split == Split::Test {
            let fol_age = follow_up_age(spec, subject, &mut follow_rng);
            jobs.push((i, subject.clone(), fol_age));
        }
    }
    jobs.par_iter()
        .map(|(i, subject, fol_age)| {
            let base = render_volume(spec, subject, *i, subject.age, seed);
            let fol = render_volume(spec, subject, *i, *fol_age, seed);
            Ok(LongitudinalPair {
                meta: SubjectMeta::new(subject.id.clone(), subject.age, subject.health)?,
                follow_up_age: *fol_age,
                baseline: keep_middle(preprocess_volume(&base)?, Some(slices_per_subject)),
                follow_up: keep_middle(preprocess_volume(&fol)?, Some(slices_per_subject)),
            })
        })
        .collect()
}
