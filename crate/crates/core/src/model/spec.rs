//! Declarative network description, shape inference and the text config grammar.
//!
//! Grammar, one directive per line, `#` starts a comment:
//!
//! ```text
//! input 1x16x16x16            # channels x depth x height x width, or a single flat size
//! classes CN MCI AD
//! conv3d out=8 kernel=3 stride=1 pad=1
//! relu
//! maxpool3d window=2 stride=2
//! flatten
//! dense out=64
//! ```
//!
//! Extents written as a single number apply to all three spatial axes;
//! `DxHxW` gives them per axis. Class names may not contain whitespace.

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::ops::conv::output_extent;

pub const DEFAULT_CLASS_NAMES: [&str; 3] = ["CN", "MCI", "AD"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv3d {
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    },
    Relu,
    MaxPool3d {
        window: [usize; 3],
        stride: [usize; 3],
    },
    Flatten,
    Dense {
        out_features: usize,
    },
}

impl Layer {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Layer::Conv3d {
            out_channels,
            kernel: [kernel; 3],
            stride: [stride; 3],
            pad: [pad; 3],
        }
    }

    pub fn pool(window: usize, stride: usize) -> Self {
        Layer::MaxPool3d {
            window: [window; 3],
            stride: [stride; 3],
        }
    }

    pub fn dense(out_features: usize) -> Self {
        Layer::Dense { out_features }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv3d { .. } => "conv3d",
            Layer::Relu => "relu",
            Layer::MaxPool3d { .. } => "maxpool3d",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv3d { .. } | Layer::Dense { .. })
    }
}

fn triple(v: [usize; 3]) -> String {
    format!("{}x{}x{}", v[0], v[1], v[2])
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv3d {
                out_channels,
                kernel,
                stride,
                pad,
            } => write!(
                f,
                "conv3d out={out_channels} kernel={} stride={} pad={}",
                triple(*kernel),
                triple(*stride),
                triple(*pad)
            ),
            Layer::Relu => f.write_str("relu"),
            Layer::MaxPool3d { window, stride } => {
                write!(f, "maxpool3d window={} stride={}", triple(*window), triple(*stride))
            }
            Layer::Flatten => f.write_str("flatten"),
            Layer::Dense { out_features } => write!(f, "dense out={out_features}"),
        }
    }
}

/// Per-sample input and output shape of one layer (batch axis excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub class_names: Vec<String>,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, class_names: Vec<String>) -> Result<Self> {
        let spec = NetworkSpec {
            input_shape,
            layers,
            class_names,
        };
        infer_shapes(&spec)?;
        Ok(spec)
    }

    /// Conv(8)-Pool-Conv(16)-Pool-Conv(32)-Pool-Dense(64)-Dense(classes) on a
    /// single-channel 16³ volume.
    pub fn desk_default(class_names: &[&str]) -> Self {
        Self::desk_default_for([16, 16, 16], class_names).expect("default spec is valid")
    }

    /// The default layer stack on an arbitrary single-channel volume extent.
    pub fn desk_default_for(spatial: [usize; 3], class_names: &[&str]) -> Result<Self> {
        let layers = vec![
            Layer::conv(8, 3, 1, 1),
            Layer::Relu,
            Layer::pool(2, 2),
            Layer::conv(16, 3, 1, 1),
            Layer::Relu,
            Layer::pool(2, 2),
            Layer::conv(32, 3, 1, 1),
            Layer::Relu,
            Layer::pool(2, 2),
            Layer::Flatten,
            Layer::dense(64),
            Layer::Relu,
            Layer::dense(class_names.len()),
        ];
        Self::new(
            vec![1, spatial[0], spatial[1], spatial[2]],
            layers,
            class_names.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Spatial extents of a volumetric input, `None` for flat inputs.
    pub fn spatial_shape(&self) -> Option<[usize; 3]> {
        match self.input_shape.as_slice() {
            [_, d, h, w] => Some([*d, *h, *w]),
            _ => None,
        }
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Canonical text form; `parse(to_text(s)) == s`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let dims: Vec<String> = self.input_shape.iter().map(|d| d.to_string()).collect();
        writeln!(out, "input {}", dims.join("x")).unwrap();
        writeln!(out, "classes {}", self.class_names.join(" ")).unwrap();
        for layer in &self.layers {
            writeln!(out, "{layer}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut input = None;
        let mut classes = None;
        let mut layers = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            let mut words = line.split_whitespace();
            let head = words.next().unwrap();
            let rest: Vec<&str> = words.collect();
            match head {
                "input" => {
                    let [dims] = rest.as_slice() else {
                        return Err(perr("expected `input CxDxHxW`".into()));
                    };
                    let parsed = dims
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| perr(format!("bad input shape {dims:?}: {e}")))?;
                    input = Some(parsed);
                }
                "classes" => {
                    if rest.is_empty() {
                        return Err(perr("expected at least one class name".into()));
                    }
                    classes = Some(rest.iter().map(|s| s.to_string()).collect::<Vec<_>>());
                }
                "relu" | "flatten" if !rest.is_empty() => {
                    return Err(perr(format!("`{head}` takes no arguments")));
                }
                "relu" => layers.push(Layer::Relu),
                "flatten" => layers.push(Layer::Flatten),
                "conv3d" => {
                    let kv = KeyValues::parse(&rest, &["out", "kernel", "stride", "pad"]).map_err(perr)?;
                    layers.push(Layer::Conv3d {
                        out_channels: kv.scalar("out").map_err(perr)?,
                        kernel: kv.triple("kernel", None).map_err(perr)?,
                        stride: kv.triple("stride", Some(1)).map_err(perr)?,
                        pad: kv.triple("pad", Some(0)).map_err(perr)?,
                    });
                }
                "maxpool3d" => {
                    let kv = KeyValues::parse(&rest, &["window", "stride"]).map_err(perr)?;
                    let window = kv.triple("window", None).map_err(perr)?;
                    let stride = match kv.get("stride") {
                        Some(_) => kv.triple("stride", None).map_err(perr)?,
                        None => window,
                    };
                    layers.push(Layer::MaxPool3d { window, stride });
                }
                "dense" => {
                    let kv = KeyValues::parse(&rest, &["out"]).map_err(perr)?;
                    layers.push(Layer::Dense {
                        out_features: kv.scalar("out").map_err(perr)?,
                    });
                }
                other => return Err(perr(format!("unknown directive `{other}`"))),
            }
        }
        let input_shape = input.ok_or_else(|| Error::Parse {
            line: 0,
            msg: "missing `input` directive".into(),
        })?;
        let class_names = classes.unwrap_or_else(|| DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect());
        NetworkSpec::new(input_shape, layers, class_names)
    }
}

struct KeyValues<'a> {
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> KeyValues<'a> {
    fn parse(words: &[&'a str], allowed: &[&str]) -> std::result::Result<Self, String> {
        let mut pairs = Vec::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {w:?}"))?;
            if !allowed.contains(&k) {
                return Err(format!("unknown key {k:?} (allowed: {})", allowed.join(", ")));
            }
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(format!("duplicate key {k:?}"));
            }
            pairs.push((k, v));
        }
        Ok(KeyValues { pairs })
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        self.pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn scalar(&self, key: &str) -> std::result::Result<usize, String> {
        let v = self.get(key).ok_or_else(|| format!("missing `{key}`"))?;
        v.parse().map_err(|e| format!("bad `{key}` value {v:?}: {e}"))
    }

    fn triple(&self, key: &str, default: Option<usize>) -> std::result::Result<[usize; 3], String> {
        let Some(v) = self.get(key) else {
            return default.map(|d| [d; 3]).ok_or_else(|| format!("missing `{key}`"));
        };
        let parts = v
            .split('x')
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format!("bad `{key}` value {v:?}: {e}"))?;
        match parts.as_slice() {
            [a] => Ok([*a; 3]),
            [a, b, c] => Ok([*a, *b, *c]),
            _ => Err(format!("`{key}` needs 1 or 3 extents, got {v:?}")),
        }
    }
}

/// Per-layer input/output shapes; fails naming the first offending layer.
pub fn infer_shapes(spec: &NetworkSpec) -> Result<Vec<LayerShape>> {
    let spec_err = |layer: Option<usize>, msg: String| Error::InvalidSpec { layer, msg };
    if spec.layers.is_empty() {
        return Err(spec_err(None, "layer list is empty".into()));
    }
    if !(spec.input_shape.len() == 1 || spec.input_shape.len() == 4) || spec.input_shape.contains(&0) {
        return Err(spec_err(
            None,
            format!("input shape must be (C, D, H, W) or (N) with positive extents, got {:?}", spec.input_shape),
        ));
    }
    if spec.class_names.len() < 2 {
        return Err(spec_err(None, "need at least two class names".into()));
    }
    let mut seen = HashSet::new();
    for name in &spec.class_names {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(spec_err(None, format!("invalid class name {name:?}")));
        }
        if !seen.insert(name) {
            return Err(spec_err(None, format!("duplicate class name {name:?}")));
        }
    }

    let mut shape = spec.input_shape.clone();
    let mut table = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let err = |msg: String| spec_err(Some(i), format!("{}: {msg}", layer.kind()));
        let output = match layer {
            Layer::Conv3d {
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let [_, d, h, w] = shape.as_slice() else {
                    return Err(err(format!("needs a (C, D, H, W) input, got {shape:?}")));
                };
                if *out_channels == 0 {
                    return Err(err("out_channels must be positive".into()));
                }
                let mut out = vec![*out_channels];
                for (axis, ext) in [*d, *h, *w].into_iter().enumerate() {
                    let o = output_extent(ext, kernel[axis], stride[axis], pad[axis]).ok_or_else(|| {
                        err(format!(
                            "axis {axis}: extent {ext} with pad {} too small for kernel {} / stride {}",
                            pad[axis], kernel[axis], stride[axis]
                        ))
                    })?;
                    out.push(o);
                }
                out
            }
            Layer::Relu => shape.clone(),
            Layer::MaxPool3d { window, stride } => {
                let [c, d, h, w] = shape.as_slice() else {
                    return Err(err(format!("needs a (C, D, H, W) input, got {shape:?}")));
                };
                let mut out = vec![*c];
                for (axis, ext) in [*d, *h, *w].into_iter().enumerate() {
                    let o = output_extent(ext, window[axis], stride[axis], 0).ok_or_else(|| {
                        err(format!(
                            "axis {axis}: extent {ext} too small for window {} / stride {}",
                            window[axis], stride[axis]
                        ))
                    })?;
                    out.push(o);
                }
                out
            }
            Layer::Flatten => vec![shape.iter().product()],
            Layer::Dense { out_features } => {
                if shape.len() != 1 {
                    return Err(err(format!("needs a flat input (insert flatten), got {shape:?}")));
                }
                if *out_features == 0 {
                    return Err(err("out_features must be positive".into()));
                }
                vec![*out_features]
            }
        };
        table.push(LayerShape {
            input: std::mem::replace(&mut shape, output.clone()),
            output,
        });
    }

    match spec.layers.last() {
        Some(Layer::Dense { out_features }) if *out_features == spec.class_names.len() => Ok(table),
        Some(Layer::Dense { out_features }) => Err(spec_err(
            Some(spec.layers.len() - 1),
            format!(
                "final dense has {out_features} outputs but there are {} classes",
                spec.class_names.len()
            ),
        )),
        _ => Err(spec_err(
            Some(spec.layers.len() - 1),
            "final layer must be dense".into(),
        )),
    }
}
