//! Volumes on disk, dataset manifests, synthetic data, augmentation and
//! stratified splits.

mod augment;
mod manifest;
mod split;
mod synth;
mod volume;

use std::path::Path;

use rand::Rng;

pub use augment::{apply_windows, augment, nonzero_bbox, plan_windows, AugmentationConfig, AxisWindow};
pub use manifest::{Assignment, Manifest, ManifestEntry, NUM_CLASSES};
pub use split::{batch_iter, stratified_split, SplitPlan, DEFAULT_FOLDS, DEFAULT_HOLDOUT};
pub use synth::{class_center, class_octant, generate_synthetic, manifest_for, write_dataset, SyntheticConfig, MIN_SIDE, NOISE_STD};
pub use volume::{decode_volume, encode_volume, read_volume, write_volume, VolumeRecord, VOLUME_HEADER_LEN, VOLUME_MAGIC};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Labeled volumes held in memory, turned into `[B,1,S,S,S]` batches.
///
/// With augmentation disabled every sample is padded/cropped once up front.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub volumes: Vec<VolumeRecord>,
    pub augmentation: AugmentationConfig,
    cache: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(volumes: Vec<VolumeRecord>, augmentation: AugmentationConfig) -> Result<Self> {
        let cache = if augmentation.enabled {
            None
        } else {
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            Some(
                volumes
                    .iter()
                    .map(|v| augment(v, &augmentation, &mut rng))
                    .collect::<Result<_>>()?,
            )
        };
        Ok(Self {
            volumes,
            augmentation,
            cache,
        })
    }

    /// Reads every manifest entry relative to the manifest's directory.
    pub fn load(manifest: &Manifest, root: &Path, augmentation: AugmentationConfig) -> Result<Self> {
        let mut volumes = Vec::with_capacity(manifest.records.len());
        for r in &manifest.records {
            let mut v = read_volume(&root.join(&r.path))?;
            v.label = r.label;
            volumes.push(v);
        }
        Self::new(volumes, augmentation)
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn side(&self) -> usize {
        self.augmentation.target_side
    }

    pub fn labels(&self) -> Vec<usize> {
        self.volumes.iter().map(|v| v.label).collect()
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.volumes[i].label).collect()
    }

    /// Unaugmented (centered) batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let cfg = AugmentationConfig::disabled(self.side());
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        self.assemble(indices, |v, i| match &self.cache {
            Some(c) => Ok(c[i].clone()),
            None => augment(v, &cfg, &mut rng),
        })
    }

    /// Batch with this dataset's augmentation applied.
    pub fn augmented_batch<R: Rng + ?Sized>(&self, indices: &[usize], rng: &mut R) -> Result<Tensor<T>> {
        self.assemble(indices, |v, i| match &self.cache {
            Some(c) => Ok(c[i].clone()),
            None => augment(v, &self.augmentation, rng),
        })
    }

    fn assemble(
        &self,
        indices: &[usize],
        mut one: impl FnMut(&VolumeRecord, usize) -> Result<Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let parts = indices
            .iter()
            .map(|&i| one(&self.volumes[i], i))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        let s = self.side();
        Tensor::stack_outer(&refs)?.reshape(&[indices.len(), 1, s, s, s])
    }
}
