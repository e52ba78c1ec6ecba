//! Declarative layer lists for the AlexNet / ResNet encoders and their
//! desk-scale variants.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::conv_out_dim;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    AlexNet,
    ResNet,
    DimAlexNet,
    AlexNetMini,
    ResNetMini,
    DimAlexNetMini,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::AlexNet,
        Preset::ResNet,
        Preset::DimAlexNet,
        Preset::AlexNetMini,
        Preset::ResNetMini,
        Preset::DimAlexNetMini,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::AlexNet => "alexnet",
            Preset::ResNet => "resnet",
            Preset::DimAlexNet => "dim_alexnet",
            Preset::AlexNetMini => "alexnet_mini",
            Preset::ResNetMini => "resnet_mini",
            Preset::DimAlexNetMini => "dim_alexnet_mini",
        }
    }

    /// Side length the preset is designed around.
    pub fn canonical_side(self) -> usize {
        match self {
            Preset::AlexNet | Preset::ResNet | Preset::DimAlexNet => 128,
            _ => 32,
        }
    }

    /// Whether the final layer emits a representation instead of logits.
    pub fn is_dim(self) -> bool {
        matches!(self, Preset::DimAlexNet | Preset::DimAlexNetMini)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown preset `{s}`")))
    }
}

/// Feature taps recorded during the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tap {
    /// third convolutional block, the local patch features
    Local,
    /// last convolutional block after pooling
    Conv,
    /// first fully connected block
    Fc,
    /// final output (logits or representation)
    Z,
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Tap::Local),
            "conv" => Ok(Tap::Conv),
            "fc" => Ok(Tap::Fc),
            "z" => Ok(Tap::Z),
            other => Err(Error::invalid(format!("unknown tap `{other}`"))),
        }
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tap::Local => "local",
            Tap::Conv => "conv",
            Tap::Fc => "fc",
            Tap::Z => "z",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        name: String,
        channels: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        name: String,
        in_features: usize,
        out_features: usize,
    },
    /// Basic block: conv-bn-relu-conv-bn plus shortcut, then relu. The
    /// shortcut is a conv(k=3, stride, p=1)+bn when stride or width change.
    Residual {
        name: String,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    },
    Tap(Tap),
}

impl Layer {
    pub fn conv(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Layer::Conv {
            name: name.into(),
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        }
    }

    pub fn bn(name: &str, channels: usize) -> Self {
        Layer::BatchNorm {
            name: name.into(),
            channels,
        }
    }

    pub fn linear(name: &str, in_features: usize, out_features: usize) -> Self {
        Layer::Linear {
            name: name.into(),
            in_features,
            out_features,
        }
    }

    pub fn residual(name: &str, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        Layer::Residual {
            name: name.into(),
            in_ch,
            out_ch,
            stride,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Layer::Conv { name, in_ch, out_ch, kernel, stride, padding } => {
                format!("{name} conv({in_ch},{out_ch},{kernel},{stride},{padding})")
            }
            Layer::BatchNorm { name, .. } => format!("{name} batch_norm"),
            Layer::Relu => "relu".into(),
            Layer::MaxPool { kernel, stride } => format!("maxpool({kernel},{stride})"),
            Layer::Flatten => "flatten".into(),
            Layer::Linear { name, in_features, out_features } => {
                format!("{name} linear({in_features},{out_features})")
            }
            Layer::Residual { name, in_ch, out_ch, stride } => {
                format!("{name} residual({in_ch},{out_ch},stride {stride})")
            }
            Layer::Tap(t) => format!("tap {t}"),
        }
    }

    pub fn has_downsample(in_ch: usize, out_ch: usize, stride: usize) -> bool {
        stride != 1 || in_ch != out_ch
    }

    pub fn parameter_count(&self) -> usize {
        let conv = |i: usize, o: usize, k: usize| o * i * k * k * k + o;
        match *self {
            Layer::Conv { in_ch, out_ch, kernel, .. } => conv(in_ch, out_ch, kernel),
            Layer::BatchNorm { channels, .. } => 2 * channels,
            Layer::Linear { in_features, out_features, .. } => in_features * out_features + out_features,
            Layer::Residual { in_ch, out_ch, stride, .. } => {
                let mut n = conv(in_ch, out_ch, 3) + 2 * out_ch + conv(out_ch, out_ch, 3) + 2 * out_ch;
                if Layer::has_downsample(in_ch, out_ch, stride) {
                    n += conv(in_ch, out_ch, 3) + 2 * out_ch;
                }
                n
            }
            _ => 0,
        }
    }
}

/// Per-sample activation shape: channels × spatial dims, or a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Volume { channels: usize, side: [usize; 3] },
    Flat(usize),
}

impl ActShape {
    pub fn numel(&self) -> usize {
        match *self {
            ActShape::Volume { channels, side } => channels * side.iter().product::<usize>(),
            ActShape::Flat(n) => n,
        }
    }
}

/// Channel widths of the mini AlexNet variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiniWidths {
    pub conv: [usize; 5],
    pub fc: usize,
}

impl Default for MiniWidths {
    fn default() -> Self {
        Self {
            conv: [8, 16, 24, 24, 16],
            fc: 128,
        }
    }
}

pub const DIM_Z: usize = 64;
pub const DIM_Z_MINI: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub preset: Preset,
    pub input_side: usize,
    pub layers: Vec<Layer>,
}

impl ArchitectureSpec {
    /// Builds and validates a preset. `num_classes` sizes the last layer of
    /// classification presets and is ignored by representation presets.
    pub fn build(preset: Preset, input_side: usize, num_classes: usize) -> Result<Self> {
        let layers = match preset {
            Preset::AlexNet => alexnet_layers(num_classes),
            Preset::DimAlexNet => alexnet_layers(DIM_Z),
            Preset::ResNet => resnet_layers(num_classes),
            Preset::AlexNetMini => alexnet_mini_layers(input_side, MiniWidths::default(), num_classes)?,
            Preset::DimAlexNetMini => alexnet_mini_layers(input_side, MiniWidths::default(), DIM_Z_MINI)?,
            Preset::ResNetMini => resnet_mini_layers(input_side, num_classes)?,
        };
        let spec = Self {
            preset,
            input_side,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Mini AlexNet with explicit widths.
    pub fn alexnet_mini(input_side: usize, widths: MiniWidths, outputs: usize) -> Result<Self> {
        let spec = Self {
            preset: Preset::AlexNetMini,
            input_side,
            layers: alexnet_mini_layers(input_side, widths, outputs)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Output shape of every layer for a single-channel cube input.
    pub fn layer_shapes(&self) -> Result<Vec<ActShape>> {
        let mut shape = ActShape::Volume {
            channels: 1,
            side: [self.input_side; 3],
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = propagate(layer, shape)?;
            out.push(shape);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }

    pub fn tap_shape(&self, tap: Tap) -> Result<ActShape> {
        if tap == Tap::Z {
            return Ok(ActShape::Flat(self.output_dim()));
        }
        let shapes = self.layer_shapes()?;
        self.layers
            .iter()
            .zip(shapes)
            .find(|(l, _)| **l == Layer::Tap(tap))
            .map(|(_, s)| s)
            .ok_or_else(|| Error::invalid(format!("preset {} has no {tap} tap", self.preset)))
    }

    /// Input width of the first linear layer.
    pub fn fc_input(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Linear { in_features, .. } => Some(*in_features),
            _ => None,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Linear { out_features, .. } => Some(*out_features),
                _ => None,
            })
            .unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }
}

fn dim_err(layer: &Layer, detail: impl fmt::Display) -> Error {
    Error::dim(format!("layer `{}`: {detail}", layer.label()))
}

fn propagate(layer: &Layer, shape: ActShape) -> Result<ActShape> {
    let volume = |layer: &Layer| match shape {
        ActShape::Volume { channels, side } => Ok((channels, side)),
        ActShape::Flat(_) => Err(dim_err(layer, "expects a volume input")),
    };
    let sweep = |side: [usize; 3], k, s, p| -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for axis in 0..3 {
            out[axis] = conv_out_dim(side[axis], k, s, p)
                .ok_or_else(|| dim_err(layer, format!("window {k} does not fit input side {}", side[axis])))?;
        }
        Ok(out)
    };
    match *layer {
        Layer::Conv { in_ch, out_ch, kernel, stride, padding, .. } => {
            let (c, side) = volume(layer)?;
            if c != in_ch {
                return Err(dim_err(layer, format!("receives {c} channels")));
            }
            Ok(ActShape::Volume {
                channels: out_ch,
                side: sweep(side, kernel, stride, padding)?,
            })
        }
        Layer::BatchNorm { channels, .. } => {
            let c = match shape {
                ActShape::Volume { channels, .. } => channels,
                ActShape::Flat(n) => n,
            };
            if c != channels {
                return Err(dim_err(layer, format!("receives {c} channels")));
            }
            Ok(shape)
        }
        Layer::Relu | Layer::Tap(_) => Ok(shape),
        Layer::MaxPool { kernel, stride } => {
            let (c, side) = volume(layer)?;
            Ok(ActShape::Volume {
                channels: c,
                side: sweep(side, kernel, stride, 0)?,
            })
        }
        Layer::Flatten => Ok(ActShape::Flat(shape.numel())),
        Layer::Linear { in_features, out_features, .. } => match shape {
            ActShape::Flat(n) if n == in_features => Ok(ActShape::Flat(out_features)),
            other => Err(dim_err(layer, format!("receives {} features", other.numel()))),
        },
        Layer::Residual { in_ch, out_ch, stride, .. } => {
            let (c, side) = volume(layer)?;
            if c != in_ch {
                return Err(dim_err(layer, format!("receives {c} channels")));
            }
            Ok(ActShape::Volume {
                channels: out_ch,
                side: sweep(side, 3, stride, 1)?,
            })
        }
    }
}

fn conv_block(layers: &mut Vec<Layer>, name: &str, i: usize, o: usize, k: usize, s: usize, p: usize) {
    layers.push(Layer::conv(name, i, o, k, s, p));
    layers.push(Layer::bn(&format!("{name}_bn"), o));
    layers.push(Layer::Relu);
}

fn head(layers: &mut Vec<Layer>, flat: usize, hidden: usize, outputs: usize) {
    layers.push(Layer::Flatten);
    layers.push(Layer::linear("fc1", flat, hidden));
    layers.push(Layer::bn("fc1_bn", hidden));
    layers.push(Layer::Relu);
    layers.push(Layer::Tap(Tap::Fc));
    layers.push(Layer::linear("fc2", hidden, outputs));
}

fn alexnet_layers(outputs: usize) -> Vec<Layer> {
    let mut l = Vec::new();
    conv_block(&mut l, "conv1", 1, 64, 5, 2, 0);
    l.push(Layer::MaxPool { kernel: 3, stride: 3 });
    conv_block(&mut l, "conv2", 64, 128, 3, 1, 0);
    l.push(Layer::MaxPool { kernel: 3, stride: 3 });
    conv_block(&mut l, "conv3", 128, 192, 3, 1, 1);
    l.push(Layer::Tap(Tap::Local));
    conv_block(&mut l, "conv4", 192, 192, 3, 1, 1);
    conv_block(&mut l, "conv5", 192, 128, 3, 1, 1);
    l.push(Layer::MaxPool { kernel: 3, stride: 3 });
    l.push(Layer::Tap(Tap::Conv));
    head(&mut l, 1024, 1024, outputs);
    l
}

fn resnet_layers(outputs: usize) -> Vec<Layer> {
    let mut l = Vec::new();
    conv_block(&mut l, "conv1", 1, 64, 3, 2, 0);
    l.push(Layer::MaxPool { kernel: 3, stride: 3 });
    l.push(Layer::residual("layer1.0", 64, 64, 1));
    l.push(Layer::residual("layer1.1", 64, 64, 1));
    l.push(Layer::residual("layer2.0", 64, 128, 2));
    l.push(Layer::residual("layer2.1", 128, 128, 1));
    l.push(Layer::Tap(Tap::Local));
    l.push(Layer::residual("layer3.0", 128, 256, 2));
    l.push(Layer::residual("layer3.1", 256, 256, 1));
    l.push(Layer::MaxPool { kernel: 3, stride: 3 });
    l.push(Layer::Tap(Tap::Conv));
    head(&mut l, 2048, 1024, outputs);
    l
}

/// Flattened size reached by `layers` from a one-channel cube.
fn flat_size(layers: &[Layer], side: usize) -> Result<usize> {
    let mut shape = ActShape::Volume {
        channels: 1,
        side: [side; 3],
    };
    for layer in layers {
        shape = propagate(layer, shape)?;
    }
    Ok(shape.numel())
}

fn alexnet_mini_layers(side: usize, w: MiniWidths, outputs: usize) -> Result<Vec<Layer>> {
    let [c1, c2, c3, c4, c5] = w.conv;
    let mut l = Vec::new();
    conv_block(&mut l, "conv1", 1, c1, 3, 2, 1);
    l.push(Layer::MaxPool { kernel: 2, stride: 2 });
    conv_block(&mut l, "conv2", c1, c2, 3, 1, 1);
    l.push(Layer::MaxPool { kernel: 2, stride: 2 });
    conv_block(&mut l, "conv3", c2, c3, 3, 1, 1);
    l.push(Layer::Tap(Tap::Local));
    conv_block(&mut l, "conv4", c3, c4, 3, 1, 1);
    conv_block(&mut l, "conv5", c4, c5, 3, 1, 1);
    l.push(Layer::MaxPool { kernel: 2, stride: 2 });
    l.push(Layer::Tap(Tap::Conv));
    let flat = flat_size(&l, side)?;
    head(&mut l, flat, w.fc, outputs);
    Ok(l)
}

fn resnet_mini_layers(side: usize, outputs: usize) -> Result<Vec<Layer>> {
    let mut l = Vec::new();
    conv_block(&mut l, "conv1", 1, 8, 3, 2, 1);
    l.push(Layer::MaxPool { kernel: 2, stride: 2 });
    l.push(Layer::residual("layer1.0", 8, 8, 1));
    l.push(Layer::residual("layer1.1", 8, 8, 1));
    l.push(Layer::residual("layer2.0", 8, 16, 2));
    l.push(Layer::residual("layer2.1", 16, 16, 1));
    l.push(Layer::Tap(Tap::Local));
    l.push(Layer::residual("layer3.0", 16, 32, 2));
    l.push(Layer::residual("layer3.1", 32, 32, 1));
    l.push(Layer::MaxPool { kernel: 2, stride: 2 });
    l.push(Layer::Tap(Tap::Conv));
    let flat = flat_size(&l, side)?;
    head(&mut l, flat, 64, outputs);
    Ok(l)
}
