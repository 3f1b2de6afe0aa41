use serde::{Deserialize, Serialize};

use crate::domain::DomainId;
use crate::error::{invalid, Result};
use crate::tensor::{Activation, ConvSpec};

/// The three comparison architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    /// One network shared by every domain.
    A1,
    /// A full filter set per domain in branched layers.
    A2,
    /// Per-domain atoms, shared coefficients in branched layers.
    A3,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::A1, Arch::A2, Arch::A3];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A1" => Ok(Arch::A1),
            "A2" => Ok(Arch::A2),
            "A3" => Ok(Arch::A3),
            other => Err(invalid(format!("unknown architecture '{other}' (expected A1, A2 or A3)"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// A convolution that branches when it falls inside the branched prefix.
    Conv {
        c_out: usize,
        l: usize,
        stride: usize,
        padding: usize,
        /// Atom count for the decomposed form; `None` uses the net default.
        k: Option<usize>,
    },
    /// Fully connected layer over the flattened input.
    Dense { width: usize },
    /// Non-overlapping max pooling.
    Pool { size: usize },
    Act { kind: Activation },
}

impl LayerSpec {
    pub fn conv(c_out: usize, l: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv {
            c_out,
            l,
            stride,
            padding,
            k: None,
        }
    }

    pub fn relu() -> Self {
        LayerSpec::Act {
            kind: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub arch: Arch,
    /// `(channels, height, width)` of one input sample.
    pub input: [usize; 3],
    /// Feature extractor. A shared linear head maps its output to `classes`.
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
    /// Number of leading conv layers that branch (A2/A3).
    pub branched: usize,
    /// Default atom count for decomposed layers.
    pub k: usize,
    pub domains: Vec<DomainId>,
}

/// Per-layer shapes resolved by [`NetSpec::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolved {
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl NetSpec {
    /// The 18x18 four-class toy network: two 3x3 convolutions (the first at
    /// stride 3, aligned with the patch shift), a 2x max pool, a 32-wide
    /// feature layer and a shared linear head.
    pub fn toy(arch: Arch) -> Self {
        Self {
            arch,
            input: [1, 18, 18],
            layers: vec![
                LayerSpec::conv(16, 3, 3, 0),
                LayerSpec::relu(),
                LayerSpec::conv(16, 3, 1, 1),
                LayerSpec::relu(),
                LayerSpec::Pool { size: 2 },
                LayerSpec::Dense { width: 32 },
                LayerSpec::relu(),
            ],
            classes: 4,
            branched: 2,
            k: 6,
            domains: DomainId::pair(),
        }
    }

    /// The toy layer stack on another input shape and class count.
    pub fn toy_for(arch: Arch, input: [usize; 3], classes: usize) -> Self {
        Self {
            input,
            classes,
            ..Self::toy(arch)
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    /// Whether the `i`-th conv layer branches.
    pub fn branches(&self, conv_index: usize) -> bool {
        self.arch != Arch::A1 && conv_index < self.branched
    }

    /// Checks the spec and returns per-layer shapes plus the feature width.
    pub fn validate(&self) -> Result<(Vec<Resolved>, usize)> {
        if self.domains.is_empty() {
            return Err(invalid("a network needs at least one domain"));
        }
        for (i, d) in self.domains.iter().enumerate() {
            if d.index != i {
                return Err(invalid(format!(
                    "domain '{}' has index {}, expected {i}",
                    d.name, d.index
                )));
            }
        }
        if self.classes < 2 {
            return Err(invalid(format!("{} classes", self.classes)));
        }
        if self.input.contains(&0) {
            return Err(invalid(format!("input shape {:?}", self.input)));
        }
        let convs = self.conv_count();
        if self.arch != Arch::A1 && self.branched > convs {
            return Err(invalid(format!(
                "branched prefix {} exceeds {convs} conv layers",
                self.branched
            )));
        }
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut flat = false;
        for (i, layer) in self.layers.iter().enumerate() {
            let [c, h, w] = shape;
            let next = match *layer {
                LayerSpec::Conv {
                    c_out,
                    l,
                    stride,
                    padding,
                    k,
                } => {
                    if flat {
                        return Err(invalid(format!("layer {i}: conv after a dense layer")));
                    }
                    if c_out == 0 || l == 0 || l % 2 == 0 {
                        return Err(invalid(format!("layer {i}: conv needs c_out > 0 and odd l")));
                    }
                    let k = k.unwrap_or(self.k);
                    if self.arch == Arch::A3 && (k == 0 || k > l * l) {
                        return Err(invalid(format!("layer {i}: k={k} outside 1..={}", l * l)));
                    }
                    let spec = ConvSpec::new(stride, padding)?;
                    [c_out, spec.output_size(h, l)?, spec.output_size(w, l)?]
                }
                LayerSpec::Dense { width } => {
                    if width == 0 {
                        return Err(invalid(format!("layer {i}: zero-width dense layer")));
                    }
                    flat = true;
                    [width, 1, 1]
                }
                LayerSpec::Pool { size } => {
                    if size == 0 || h % size != 0 || w % size != 0 {
                        return Err(invalid(format!(
                            "layer {i}: pool {size} does not divide {h}x{w}"
                        )));
                    }
                    [c, h / size, w / size]
                }
                LayerSpec::Act { kind } => {
                    kind.validate()?;
                    shape
                }
            };
            out.push(Resolved {
                input: shape,
                output: next,
            });
            shape = next;
        }
        Ok((out, shape.iter().product()))
    }
}
