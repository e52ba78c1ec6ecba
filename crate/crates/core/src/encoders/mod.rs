//! Encoder architectures, probe heads and parameter persistence.

mod arch;
pub mod checkpoint;
mod encoder;
mod head;
mod params;

pub use arch::{ActShape, ArchitectureSpec, Layer, MiniWidths, Preset, Tap, DIM_Z, DIM_Z_MINI};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use encoder::{forward_with_taps, Encoder, EncoderOutput, ForwardOptions};
pub use head::{build_probe, ClassifierHead, PROBE_DROPOUT, PROBE_HIDDEN};
pub use params::{init_bn, init_params, kaiming_conv, kaiming_linear, ParamStore};

/// Builds a preset and draws its initial parameters.
pub fn build_encoder<T: crate::Scalar, R: rand::Rng + ?Sized>(
    preset: Preset,
    input_side: usize,
    num_classes: usize,
    rng: &mut R,
) -> crate::Result<Encoder<T>> {
    let spec = ArchitectureSpec::build(preset, input_side, num_classes)?;
    Ok(Encoder::new(spec, rng))
}
