use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One entry of the closed layer set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    /// Stride-1 square convolution with symmetric zero padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    /// Batch normalization over the channel axis (features for flat input).
    BatchNorm {
        channels: usize,
    },
    Relu,
    /// Non-overlapping max pooling with a square window.
    MaxPool2d {
        size: usize,
    },
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv",
            Layer::BatchNorm { .. } => "bn",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "pool",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
        }
    }
}

/// Activation extent between layers, excluding the batch axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extent {
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl Extent {
    pub fn len(&self) -> usize {
        match *self {
            Extent::Spatial {
                channels,
                height,
                width,
            } => channels * height * width,
            Extent::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (channels, positions per channel) as seen by batch normalization.
    pub fn channel_view(&self) -> (usize, usize) {
        match *self {
            Extent::Spatial {
                channels,
                height,
                width,
            } => (channels, height * width),
            Extent::Flat(n) => (n, 1),
        }
    }
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extent::Spatial {
                channels,
                height,
                width,
            } => {
                write!(f, "{}x{}x{}", channels, height, width)
            }
            Extent::Flat(n) => write!(f, "{} features", n),
        }
    }
}

/// Network architecture: input extent, category count and layer sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    /// Input extent as (channels, height, width).
    pub input: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<Layer>,
}

impl Arch {
    /// conv3x3(8)-BN-ReLU-pool2-conv3x3(16)-BN-ReLU-pool2-dense(C).
    pub fn tiny_conv(input: [usize; 3], num_classes: usize) -> Self {
        Self::tiny_conv_with(input, num_classes, true)
    }

    /// [`Arch::tiny_conv`] without the batch-normalization layers.
    pub fn tiny_conv_no_bn(input: [usize; 3], num_classes: usize) -> Self {
        Self::tiny_conv_with(input, num_classes, false)
    }

    fn tiny_conv_with(input: [usize; 3], num_classes: usize, bn: bool) -> Self {
        let [c, h, w] = input;
        let mut layers = vec![Layer::Conv2d {
            in_channels: c,
            out_channels: 8,
            kernel: 3,
            padding: 1,
        }];
        if bn {
            layers.push(Layer::BatchNorm { channels: 8 });
        }
        layers.extend([
            Layer::Relu,
            Layer::MaxPool2d { size: 2 },
            Layer::Conv2d {
                in_channels: 8,
                out_channels: 16,
                kernel: 3,
                padding: 1,
            },
        ]);
        if bn {
            layers.push(Layer::BatchNorm { channels: 16 });
        }
        layers.extend([
            Layer::Relu,
            Layer::MaxPool2d { size: 2 },
            Layer::Flatten,
            Layer::Dense {
                in_features: 16 * (h / 4) * (w / 4),
                out_features: num_classes,
            },
        ]);
        Self {
            input,
            num_classes,
            layers,
        }
    }

    /// flatten-dense(hidden)-BN-ReLU-dense(C).
    pub fn mlp(input: [usize; 3], hidden: usize, num_classes: usize) -> Self {
        let features = input.iter().product();
        Self {
            input,
            num_classes,
            layers: vec![
                Layer::Flatten,
                Layer::Dense {
                    in_features: features,
                    out_features: hidden,
                },
                Layer::BatchNorm { channels: hidden },
                Layer::Relu,
                Layer::Dense {
                    in_features: hidden,
                    out_features: num_classes,
                },
            ],
        }
    }

    /// flatten-dense(hidden)-ReLU-dense(C).
    pub fn mlp_no_bn(input: [usize; 3], hidden: usize, num_classes: usize) -> Self {
        let features = input.iter().product();
        Self {
            input,
            num_classes,
            layers: vec![
                Layer::Flatten,
                Layer::Dense {
                    in_features: features,
                    out_features: hidden,
                },
                Layer::Relu,
                Layer::Dense {
                    in_features: hidden,
                    out_features: num_classes,
                },
            ],
        }
    }

    /// Looks up a named preset ("tiny-conv", "tiny-conv-nobn", "mlp", "mlp-nobn").
    pub fn preset(name: &str, input: [usize; 3], num_classes: usize) -> Result<Self> {
        match name {
            "tiny-conv" => Ok(Self::tiny_conv(input, num_classes)),
            "tiny-conv-nobn" => Ok(Self::tiny_conv_no_bn(input, num_classes)),
            "mlp" => Ok(Self::mlp(input, 32, num_classes)),
            "mlp-nobn" => Ok(Self::mlp_no_bn(input, 32, num_classes)),
            other => Err(Error::InvalidArgument(format!(
                "unknown architecture preset {:?}",
                other
            ))),
        }
    }

    pub fn input_extent(&self) -> Extent {
        Extent::Spatial {
            channels: self.input[0],
            height: self.input[1],
            width: self.input[2],
        }
    }

    /// Propagates the input extent through every layer, returning the output
    /// extent of each layer, or an error naming the first inconsistent pair.
    pub fn extents(&self) -> Result<Vec<Extent>> {
        if self.input.contains(&0) {
            return Err(Error::Arch(format!(
                "input extent {:?} has a zero dimension",
                self.input
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Arch(format!(
                "need at least 2 categories, got {}",
                self.num_classes
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Arch("no layers".into()));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_extent();
        for (i, layer) in self.layers.iter().enumerate() {
            let mismatch = |why: String| {
                let prev = if i == 0 {
                    String::from("input")
                } else {
                    format!("layer {} ({})", i - 1, self.layers[i - 1].kind())
                };
                Error::Arch(format!(
                    "{} -> layer {} ({}): {}",
                    prev,
                    i,
                    layer.kind(),
                    why
                ))
            };
            cur = match (*layer, cur) {
                (
                    Layer::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        padding,
                    },
                    Extent::Spatial {
                        channels,
                        height,
                        width,
                    },
                ) => {
                    if in_channels != channels {
                        return Err(mismatch(format!(
                            "expects {} input channels, receives {}",
                            in_channels, channels
                        )));
                    }
                    if out_channels == 0 || kernel == 0 {
                        return Err(mismatch("zero output channels or kernel".into()));
                    }
                    if height + 2 * padding < kernel || width + 2 * padding < kernel {
                        return Err(mismatch(format!(
                            "kernel {} larger than padded input {}",
                            kernel, cur
                        )));
                    }
                    Extent::Spatial {
                        channels: out_channels,
                        height: height + 2 * padding + 1 - kernel,
                        width: width + 2 * padding + 1 - kernel,
                    }
                }
                (Layer::Conv2d { .. }, Extent::Flat(_)) => {
                    return Err(mismatch(format!(
                        "expects a spatial input, receives {}",
                        cur
                    )));
                }
                (Layer::BatchNorm { channels }, e) => {
                    let (have, _) = e.channel_view();
                    if have != channels {
                        return Err(mismatch(format!(
                            "expects {} channels, receives {}",
                            channels, e
                        )));
                    }
                    e
                }
                (Layer::Relu, e) => e,
                (
                    Layer::MaxPool2d { size },
                    Extent::Spatial {
                        channels,
                        height,
                        width,
                    },
                ) => {
                    if size == 0 || height % size != 0 || width % size != 0 {
                        return Err(mismatch(format!("window {} does not tile {}", size, cur)));
                    }
                    Extent::Spatial {
                        channels,
                        height: height / size,
                        width: width / size,
                    }
                }
                (Layer::MaxPool2d { .. }, Extent::Flat(_)) => {
                    return Err(mismatch(format!(
                        "expects a spatial input, receives {}",
                        cur
                    )));
                }
                (Layer::Flatten, e) => Extent::Flat(e.len()),
                (
                    Layer::Dense {
                        in_features,
                        out_features,
                    },
                    Extent::Flat(n),
                ) => {
                    if in_features != n {
                        return Err(mismatch(format!(
                            "expects {} inputs, receives {} features",
                            in_features, n
                        )));
                    }
                    if out_features == 0 {
                        return Err(mismatch("zero output features".into()));
                    }
                    Extent::Flat(out_features)
                }
                (Layer::Dense { .. }, Extent::Spatial { .. }) => {
                    return Err(mismatch(format!(
                        "expects flat input, receives {}; insert a flatten layer",
                        cur
                    )));
                }
            };
            out.push(cur);
        }
        if cur != Extent::Flat(self.num_classes) {
            return Err(Error::Arch(format!(
                "final layer {} ({}) produces {}, expected {} category logits",
                self.layers.len() - 1,
                self.layers[self.layers.len() - 1].kind(),
                cur,
                self.num_classes
            )));
        }
        Ok(out)
    }

    /// Names and shapes of trainable parameters in flattening order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    out.push((
                        format!("conv{}.weight", i),
                        vec![out_channels, in_channels, kernel, kernel],
                    ));
                    out.push((format!("conv{}.bias", i), vec![out_channels]));
                }
                Layer::BatchNorm { channels } => {
                    out.push((format!("bn{}.gamma", i), vec![channels]));
                    out.push((format!("bn{}.beta", i), vec![channels]));
                }
                Layer::Dense {
                    in_features,
                    out_features,
                } => {
                    out.push((
                        format!("dense{}.weight", i),
                        vec![out_features, in_features],
                    ));
                    out.push((format!("dense{}.bias", i), vec![out_features]));
                }
                Layer::Relu | Layer::MaxPool2d { .. } | Layer::Flatten => {}
            }
        }
        out
    }

    /// Names and shapes of batch-normalization running statistics.
    pub fn buffer_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm { channels } = *layer {
                out.push((format!("bn{}.running_mean", i), vec![channels]));
                out.push((format!("bn{}.running_var", i), vec![channels]));
            }
        }
        out
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::BatchNorm { .. }))
    }
}
