//! Named tensor collections persisted as a directory of BTSR files plus a
//! `manifest.txt` with one `name shape dtype file` line per tensor.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{btsr, DType, Tensor};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Tensor>,
}

pub fn format_shape(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    s.split('x')
        .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
        .collect()
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Fetch `name`, checking it has `shape`.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.tensors.get(name).ok_or_else(|| Error::DimensionMismatch {
            what: format!("missing parameter {name}"),
            expected: shape.to_vec(),
            found: vec![],
        })?;
        if t.shape() != shape {
            return Err(Error::DimensionMismatch {
                what: format!("parameter {name}"),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_dtype(&self, dtype: DType) -> Checkpoint {
        Checkpoint {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.to_dtype(dtype)))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> Checkpoint {
        Checkpoint {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), f(v))).collect(),
        }
    }

    /// True when both hold the same names with bitwise-equal tensors.
    pub fn bit_eq(&self, other: &Checkpoint) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.bit_eq(b))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (name, t) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) || name.contains('/') {
                return Err(Error::invalid(format!("unusable tensor name {name:?}")));
            }
            let file = format!("{name}.btsr");
            btsr::write(&dir.join(&file), t)?;
            writeln!(
                manifest,
                "{name} {} {} {file}",
                format_shape(t.shape()),
                t.dtype().name()
            )
            .expect("write to String");
        }
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let manifest_path = dir.join(MANIFEST);
        let text = fs::read_to_string(&manifest_path)?;
        let bad = |line: usize, why: &str| Error::MalformedFile {
            path: manifest_path.clone(),
            reason: format!("line {line}: {why}"),
        };
        let mut ckpt = Checkpoint::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            let [name, shape, dtype, file] = fields[..] else {
                return Err(bad(i + 1, "expected `name shape dtype file`"));
            };
            let shape = parse_shape(shape).ok_or_else(|| bad(i + 1, "bad shape"))?;
            let dtype = DType::parse(dtype).ok_or_else(|| bad(i + 1, "bad dtype"))?;
            let t = btsr::read(&dir.join(file))?;
            if t.shape() != shape || t.dtype() != dtype {
                return Err(bad(i + 1, "tensor file disagrees with manifest"));
            }
            ckpt.insert(name, t);
        }
        Ok(ckpt)
    }
}
