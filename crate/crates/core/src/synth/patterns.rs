//! Rotated-pattern volumes: segments and planar crosses of equal norm at
//! random positions and orientations.

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LriError, Result};
use crate::sph::{random_rotation, Rotation};
use crate::volume::Volume3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Segment,
    Cross,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub kind: PatternKind,
    pub grid: Volume3D,
}

pub const PATTERN_SIZE: usize = 7;

/// Segment: 7 unit voxels along the central `x3` axis. Cross: 13-voxel plus
/// in the central `x1`-`x2` plane with value `sqrt(7/13)`, so both have norm
/// `sqrt(7)`.
pub fn make_pattern(kind: PatternKind) -> Pattern {
    let c = PATTERN_SIZE / 2;
    let mut grid = Volume3D::zeros([PATTERN_SIZE; 3]);
    match kind {
        PatternKind::Segment => {
            for k in 0..PATTERN_SIZE {
                grid.set([c, c, k], 1.0);
            }
        }
        PatternKind::Cross => {
            let v = (7.0f64 / 13.0).sqrt();
            for k in 0..PATTERN_SIZE {
                grid.set([k, c, c], v);
                grid.set([c, k, c], v);
            }
        }
    }
    Pattern { kind, grid }
}

/// `floor(d (s_v / s_p)^3)`.
pub fn pattern_count(density: f64, volume_size: usize, pattern_size: usize) -> usize {
    (density * (volume_size as f64 / pattern_size as f64).powi(3)).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub volume_size: usize,
    pub pattern_size: usize,
    pub density_range: (f64, f64),
    /// Per class, fractions of (segment, cross) patterns.
    pub mixtures: [(f64, f64); 2],
    pub per_class: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            volume_size: 32,
            pattern_size: PATTERN_SIZE,
            density_range: (0.1, 0.5),
            mixtures: [(0.3, 0.7), (0.7, 0.3)],
            per_class: 500,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pattern_size != PATTERN_SIZE {
            return Err(LriError::Config(format!("pattern size must be {PATTERN_SIZE}")));
        }
        if self.volume_size < self.pattern_size {
            return Err(LriError::Config("volume smaller than a pattern".into()));
        }
        let (lo, hi) = self.density_range;
        if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
            return Err(LriError::Config(format!("invalid density range [{lo}, {hi}]")));
        }
        for (a, b) in self.mixtures {
            if a < 0.0 || b < 0.0 || (a + b - 1.0).abs() > 1e-12 {
                return Err(LriError::Config(format!("class mixture ({a}, {b}) must be non-negative and sum to 1")));
            }
        }
        if self.per_class == 0 || !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(LriError::Config("per-class count must be positive and train fraction in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        2 * self.per_class
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub kind: PatternKind,
    /// Voxel at which the pattern centre lands.
    pub center: [usize; 3],
    pub rotation: [[f64; 3]; 3],
}

/// Draws a density, then places `pattern_count` patterns of the class
/// mixture, each Haar-rotated (trilinear, clipped to the pattern grid) and
/// added at a uniform position where it fits inside the volume.
pub fn place_patterns<R: Rng + ?Sized>(cfg: &GenConfig, class: usize, rng: &mut R) -> Result<(Volume3D, f64, Vec<Placement>)> {
    if class >= 2 {
        return Err(LriError::Config(format!("class must be 0 or 1, got {class}")));
    }
    let (lo, hi) = cfg.density_range;
    let density = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let count = pattern_count(density, cfg.volume_size, cfg.pattern_size);
    let s = cfg.volume_size;
    let half = cfg.pattern_size / 2;
    let templates = [make_pattern(PatternKind::Segment), make_pattern(PatternKind::Cross)];
    let mut vol = Volume3D::zeros([s; 3]);
    let mut placements = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = if rng.gen::<f64>() < cfg.mixtures[class].0 { PatternKind::Segment } else { PatternKind::Cross };
        let rot = random_rotation(rng);
        let center = [0; 3].map(|_| rng.gen_range(half..s - half));
        let pattern = &templates[usize::from(kind == PatternKind::Cross)];
        add_rotated(&mut vol, &pattern.grid, &rot, center);
        placements.push(Placement { kind, center, rotation: *rot.matrix() });
    }
    Ok((vol, density, placements))
}

fn add_rotated(vol: &mut Volume3D, pattern: &Volume3D, rot: &Rotation, center: [usize; 3]) {
    let p = pattern.rotated(rot);
    let h = p.shape()[0] / 2;
    for a in 0..p.shape()[0] {
        for b in 0..p.shape()[1] {
            for c in 0..p.shape()[2] {
                let v = p.get([a, b, c]);
                if v != 0.0 {
                    let q = [center[0] + a - h, center[1] + b - h, center[2] + c - h];
                    let cur = vol.get(q);
                    vol.set(q, cur + v);
                }
            }
        }
    }
}

/// Per-sample seed: the first word of stream `index` of a ChaCha generator
/// seeded with `master`.
pub fn sample_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub file: String,
    pub class: usize,
    pub split: Split,
    pub seed: u64,
    pub density: f64,
    pub count: usize,
    pub placements: Vec<Placement>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub shape: [usize; 3],
    pub class_labels: Vec<String>,
    pub config: GenConfig,
    pub samples: Vec<SampleRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| LriError::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| LriError::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(LriError::Format {
                path,
                message: format!("unsupported format_version {}", m.format_version),
            });
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| LriError::Numerical(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| LriError::io(&path, e))
    }

    pub fn sample_path(&self, dir: &Path, index: usize) -> PathBuf {
        dir.join(&self.samples[index].file)
    }

    pub fn load_volume(&self, dir: &Path, index: usize) -> Result<Volume3D> {
        Volume3D::read_f32raw(&self.sample_path(dir, index), self.shape)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class).collect()
    }
}

/// Rebuilds one sample from its recorded seed.
pub fn regenerate_sample(cfg: &GenConfig, record: &SampleRecord) -> Result<Volume3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(record.seed);
    Ok(place_patterns(cfg, record.class, &mut rng)?.0)
}

/// Writes `sample_XXXX.f32raw` files and `manifest.json` into `dir`.
/// Samples `0..per_class` are class 0; the split is stratified per class.
pub fn generate_dataset(cfg: &GenConfig, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| LriError::io(dir, e))?;
    let total = cfg.total();
    let mut split = vec![Split::Test; total];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for class in 0..2 {
        let mut idx: Vec<usize> = (class * cfg.per_class..(class + 1) * cfg.per_class).collect();
        idx.shuffle(&mut rng);
        let n_train = (cfg.train_fraction * cfg.per_class as f64).round() as usize;
        for &i in &idx[..n_train] {
            split[i] = Split::Train;
        }
    }
    let samples = (0..total)
        .into_par_iter()
        .map(|i| {
            let class = i / cfg.per_class;
            let seed = sample_seed(cfg.seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (vol, density, placements) = place_patterns(cfg, class, &mut rng)?;
            let file = format!("sample_{i:04}.f32raw");
            vol.write_f32raw(&dir.join(&file))?;
            Ok(SampleRecord {
                id: i,
                file,
                class,
                split: split[i],
                seed,
                density,
                count: placements.len(),
                placements,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        shape: [cfg.volume_size; 3],
        class_labels: cfg
            .mixtures
            .iter()
            .map(|(s, c)| format!("segment{:.0}_cross{:.0}", s * 100.0, c * 100.0))
            .collect(),
        config: *cfg,
        samples,
    };
    manifest.save(dir)?;
    Ok(manifest)
}
