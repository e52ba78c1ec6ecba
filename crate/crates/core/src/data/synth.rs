//! Synthetic four-class volumes: a Gaussian blob placed at a
//! class-specific octant center, plus iid Gaussian noise.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{Manifest, ManifestEntry, NUM_CLASSES};
use super::volume::{write_volume, VolumeRecord};
use crate::error::{Error, Result};

pub const MIN_SIDE: usize = 8;
pub const NOISE_STD: f64 = 0.2;

/// Octant (z, y, x halves) holding the blob of class `k`.
pub fn class_octant(k: usize) -> [usize; 3] {
    [[0, 0, 0], [1, 1, 0], [1, 0, 1], [0, 1, 1]][k % NUM_CLASSES]
}

pub fn class_center(k: usize, side: usize) -> [f64; 3] {
    class_octant(k).map(|h| side as f64 * (0.25 + 0.5 * h as f64))
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_per_class: [usize; NUM_CLASSES],
    pub side: usize,
    pub seed: u64,
    pub noise_std: f64,
}

impl SyntheticConfig {
    pub fn new(n_per_class: [usize; NUM_CLASSES], side: usize, seed: u64) -> Self {
        Self {
            n_per_class,
            side,
            seed,
            noise_std: NOISE_STD,
        }
    }
}

/// Volumes in class order, named `vol_00000.imv`, ….
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<VolumeRecord>> {
    let side = cfg.side;
    if side < MIN_SIDE {
        return Err(Error::invalid(format!("synthetic side must be ≥ {MIN_SIDE}, got {side}")));
    }
    if cfg.noise_std.is_nan() || cfg.noise_std < 0.0 {
        return Err(Error::invalid("noise std must be ≥ 0"));
    }
    let sigma = side as f64 / 8.0;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for (k, &n) in cfg.n_per_class.iter().enumerate() {
        let c = class_center(k, side);
        let blob: Vec<f32> = (0..side * side * side)
            .map(|i| {
                let p = [i / (side * side), (i / side) % side, i % side];
                let d2: f64 = (0..3).map(|a| (p[a] as f64 + 0.5 - c[a]).powi(2)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp() as f32
            })
            .collect();
        for _ in 0..n {
            let values = blob
                .iter()
                .map(|&b| {
                    if cfg.noise_std > 0.0 {
                        b + noise.sample(&mut rng) as f32
                    } else {
                        b
                    }
                })
                .collect();
            let path = format!("vol_{:05}.imv", out.len());
            out.push(VolumeRecord::new(path, k, [side; 3], values)?);
        }
    }
    Ok(out)
}

pub fn manifest_for(volumes: &[VolumeRecord]) -> Result<Manifest> {
    let records = volumes
        .iter()
        .map(|v| ManifestEntry {
            path: v.path.clone(),
            label: v.label,
            split: None,
        })
        .collect();
    Manifest::new(records, NUM_CLASSES)
}

/// Writes every volume plus `manifest.csv` under `dir`.
pub fn write_dataset(dir: &Path, volumes: &[VolumeRecord]) -> Result<Manifest> {
    let manifest = manifest_for(volumes)?;
    fs::create_dir_all(dir)?;
    for v in volumes {
        write_volume(&dir.join(&v.path), v)?;
    }
    manifest.save(&dir.join("manifest.csv"))?;
    Ok(manifest)
}
