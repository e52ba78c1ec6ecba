//! Pad/crop to a cube and random axis flips.

use rand::Rng;

use super::volume::VolumeRecord;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    pub target_side: usize,
    pub flip_prob: f64,
    pub enabled: bool,
}

impl AugmentationConfig {
    pub fn new(target_side: usize) -> Self {
        Self {
            target_side,
            flip_prob: 0.5,
            enabled: true,
        }
    }

    pub fn disabled(target_side: usize) -> Self {
        Self {
            enabled: false,
            ..Self::new(target_side)
        }
    }
}

/// Per-axis placement: output index `o` reads input index `o + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisWindow {
    pub shift: isize,
    pub flip: bool,
}

/// Inclusive `[lo, hi]` per axis of the nonzero voxels, or `None` when
/// the volume is all zero.
pub fn nonzero_bbox(v: &VolumeRecord) -> Option<[(usize, usize); 3]> {
    let [d, h, w] = v.dims;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if v.values[(z * h + y) * w + x] != 0.0 {
                    for (a, c) in [z, y, x].into_iter().enumerate() {
                        lo[a] = lo[a].min(c);
                        hi[a] = hi[a].max(c);
                    }
                }
            }
        }
    }
    (lo[0] != usize::MAX).then(|| [(lo[0], hi[0]), (lo[1], hi[1]), (lo[2], hi[2])])
}

/// Chooses the pad/crop offset and flip of every axis.
pub fn plan_windows<R: Rng + ?Sized>(
    v: &VolumeRecord,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<[AxisWindow; 3]> {
    let s = cfg.target_side;
    if s == 0 {
        return Err(Error::invalid("target side must be positive"));
    }
    let bbox = nonzero_bbox(v);
    let mut out = [AxisWindow { shift: 0, flip: false }; 3];
    for a in 0..3 {
        let n = v.dims[a];
        let shift = if n <= s {
            -(((s - n) / 2) as isize)
        } else {
            let (lo, hi) = bbox.map_or((0, n - 1), |b| b[a]);
            if hi - lo + 1 > s {
                return Err(Error::invalid(format!(
                    "nonzero extent {} on axis {a} exceeds target side {s}",
                    hi - lo + 1
                )));
            }
            let first = (hi + 1).saturating_sub(s);
            let last = lo.min(n - s);
            let start = if cfg.enabled {
                rng.gen_range(first..=last)
            } else {
                ((n - s) / 2).clamp(first, last)
            };
            start as isize
        };
        let flip = cfg.enabled && cfg.flip_prob > 0.0 && rng.gen_bool(cfg.flip_prob.min(1.0));
        out[a] = AxisWindow { shift, flip };
    }
    Ok(out)
}

/// Places `v` into a `side³` cube according to `windows`.
pub fn apply_windows<T: Scalar>(v: &VolumeRecord, side: usize, windows: &[AxisWindow; 3]) -> Tensor<T> {
    let [d, h, w] = v.dims;
    let mut out = vec![T::zero(); side * side * side];
    let src = |o: usize, a: usize| -> Option<usize> {
        let o = if windows[a].flip { side - 1 - o } else { o };
        let i = o as isize + windows[a].shift;
        (i >= 0 && (i as usize) < v.dims[a]).then_some(i as usize)
    };
    for oz in 0..side {
        let Some(z) = src(oz, 0) else { continue };
        for oy in 0..side {
            let Some(y) = src(oy, 1) else { continue };
            for ox in 0..side {
                if let Some(x) = src(ox, 2) {
                    out[(oz * side + oy) * side + ox] = T::lit(v.values[(z * h + y) * w + x] as f64);
                }
            }
        }
    }
    let _ = d;
    Tensor::new(&[1, side, side, side], out).expect("shape")
}

/// `[1, S, S, S]` tensor: centered zero-pad on short axes, crop keeping
/// the nonzero bounding box on long axes, then random flips.
pub fn augment<T: Scalar, R: Rng + ?Sized>(
    v: &VolumeRecord,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let windows = plan_windows(v, cfg, rng)?;
    Ok(apply_windows(v, cfg.target_side, &windows))
}
