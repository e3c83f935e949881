//! Plain-text model checkpoints.
//!
//! ```text
//! respa-checkpoint 1
//! input_dim 64
//! hidden 32 16
//! classes 4
//! activation relu
//! seed 7
//! layers 3
//! layer 0 64 32
//! w <64 values>        one line per output row
//! b <32 values>
//! ...
//! end
//! ```
//!
//! Reals are written with Rust's shortest round-trip formatting, so a
//! load of a save reproduces every weight bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Activation, Architecture, ClassifierModel, DenseLayer};

pub const MAGIC: &str = "respa-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("unsupported checkpoint version `{found}` (expected {VERSION})")]
    UnsupportedVersion { found: String },

    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

pub fn to_text(model: &ClassifierModel) -> String {
    let arch = model.architecture();
    let mut out = String::new();
    let join = |vals: &[f64]| vals.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "input_dim {}", arch.input_dim).unwrap();
    let hidden: Vec<String> = arch.hidden.iter().map(|h| h.to_string()).collect();
    writeln!(out, "hidden {}", hidden.join(" ")).unwrap();
    writeln!(out, "classes {}", arch.classes).unwrap();
    writeln!(out, "activation {}", arch.activation).unwrap();
    writeln!(out, "seed {}", model.seed()).unwrap();
    writeln!(out, "layers {}", model.layers().len()).unwrap();
    for (i, layer) in model.layers().iter().enumerate() {
        writeln!(out, "layer {i} {} {}", layer.inputs, layer.outputs).unwrap();
        for o in 0..layer.outputs {
            writeln!(out, "w {}", join(layer.row(o))).unwrap();
        }
        writeln!(out, "b {}", join(&layer.bias)).unwrap();
    }
    out.push_str("end\n");
    out
}

pub fn save_model(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClassifierModel, CheckpointError> {
    from_text(&fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    /// Next line, which must start with `field`; returns the rest.
    fn expect(&mut self, field: &str) -> Result<(usize, &'a str), CheckpointError> {
        let Some((idx, line)) = self.inner.next() else {
            return Err(err(self.last + 1, field, "unexpected end of file"));
        };
        let line_no = idx + 1;
        self.last = line_no;
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        if key != field {
            return Err(err(line_no, field, format!("expected `{field}`, found `{key}`")));
        }
        Ok((line_no, rest))
    }
}

fn err(line: usize, field: &str, message: impl Into<String>) -> CheckpointError {
    CheckpointError::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_usize(line: usize, field: &str, s: &str) -> Result<usize, CheckpointError> {
    s.trim()
        .parse()
        .map_err(|_| err(line, field, format!("`{s}` is not a non-negative integer")))
}

fn parse_reals(line: usize, field: &str, s: &str, n: usize) -> Result<Vec<f64>, CheckpointError> {
    let vals = s
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, field, format!("`{t}` is not a finite real")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if vals.len() != n {
        return Err(err(line, field, format!("expected {n} values, found {}", vals.len())));
    }
    Ok(vals)
}

pub fn from_text(text: &str) -> Result<ClassifierModel, CheckpointError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (_, version) = lines.expect(MAGIC)?;
    if version.trim() != VERSION.to_string() {
        return Err(CheckpointError::UnsupportedVersion {
            found: version.trim().to_string(),
        });
    }
    let (line, v) = lines.expect("input_dim")?;
    let input_dim = parse_usize(line, "input_dim", v)?;
    let (line, v) = lines.expect("hidden")?;
    let hidden = v
        .split_whitespace()
        .map(|t| parse_usize(line, "hidden", t))
        .collect::<Result<Vec<_>, _>>()?;
    let (line, v) = lines.expect("classes")?;
    let classes = parse_usize(line, "classes", v)?;
    let (line, v) = lines.expect("activation")?;
    let activation: Activation = v
        .trim()
        .parse()
        .map_err(|_| err(line, "activation", format!("unknown activation `{v}`")))?;
    let (line, v) = lines.expect("seed")?;
    let seed: u64 = v
        .trim()
        .parse()
        .map_err(|_| err(line, "seed", format!("`{v}` is not an unsigned integer")))?;
    let (line, v) = lines.expect("layers")?;
    let count = parse_usize(line, "layers", v)?;
    let arch = Architecture {
        input_dim,
        hidden,
        classes,
        activation,
    };
    arch.validate().map_err(|e| err(line, "hidden", e.to_string()))?;
    let shapes = arch.layer_shapes();
    if count != shapes.len() {
        return Err(err(
            line,
            "layers",
            format!("architecture implies {} layers, header says {count}", shapes.len()),
        ));
    }

    let mut layers = Vec::with_capacity(count);
    for (i, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let (line, v) = lines.expect("layer")?;
        let dims: Vec<&str> = v.split_whitespace().collect();
        let expected = [i, fan_in, fan_out];
        let parsed = dims
            .iter()
            .map(|t| parse_usize(line, "layer", t))
            .collect::<Result<Vec<_>, _>>()?;
        if parsed != expected {
            return Err(err(
                line,
                "layer",
                format!("expected `layer {i} {fan_in} {fan_out}`, found `layer {v}`"),
            ));
        }
        let mut layer = DenseLayer::zeros(fan_in, fan_out);
        for o in 0..fan_out {
            let (line, v) = lines.expect("w")?;
            let row = parse_reals(line, "w", v, fan_in)?;
            layer.weights[o * fan_in..(o + 1) * fan_in].copy_from_slice(&row);
        }
        let (line, v) = lines.expect("b")?;
        layer.bias = parse_reals(line, "b", v, fan_out)?;
        layers.push(layer);
    }
    lines.expect("end")?;
    ClassifierModel::from_layers(arch, seed, layers).map_err(|e| err(lines.last, "layers", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ClassifierModel {
        ClassifierModel::initialize(Architecture::mlp(5, &[4, 3], 3, Activation::Tanh), 11).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = from_text(&to_text(&m)).unwrap();
        assert_eq!(back, m);
        let lin = ClassifierModel::initialize(Architecture::linear(3, 2), 1).unwrap();
        assert_eq!(from_text(&to_text(&lin)).unwrap(), lin);
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("respa-ckpt-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.model");
        let m = model();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = to_text(&model());
        let lines: Vec<&str> = text.lines().collect();
        for keep in [1, 5, 9, lines.len() - 1] {
            let cut = lines[..keep].join("\n");
            match from_text(&cut) {
                Err(CheckpointError::Parse { message, .. }) => {
                    assert!(message.contains("end of file"), "{message}")
                }
                other => panic!("expected parse error, got {other:?}"),
            }
        }
        // Truncated mid-row.
        let half = &text[..text.len() / 2];
        assert!(matches!(from_text(half), Err(CheckpointError::Parse { .. })));
    }

    #[test]
    fn version_mismatch() {
        let text = to_text(&model()).replacen("respa-checkpoint 1", "respa-checkpoint 2", 1);
        assert!(matches!(
            from_text(&text),
            Err(CheckpointError::UnsupportedVersion { found }) if found == "2"
        ));
    }

    #[test]
    fn bad_field_is_named() {
        let text = to_text(&model()).replacen("activation tanh", "activation gelu", 1);
        match from_text(&text) {
            Err(CheckpointError::Parse { field, line, .. }) => {
                assert_eq!(field, "activation");
                assert_eq!(line, 5);
            }
            other => panic!("{other:?}"),
        }
        let text = to_text(&model()).replacen("\nb ", "\nb NaN ", 1);
        assert!(matches!(
            from_text(&text),
            Err(CheckpointError::Parse { field, .. }) if field == "b"
        ));
    }
}
