//! Named parameter storage with a versioned binary on-disk format.
//!
//! File layout: magic `RACP`, format version (u32 LE), entry count (u32 LE),
//! then per entry: name length (u32 LE), UTF-8 name, rank (u32 LE), dims
//! (u32 LE each), data as little-endian 32-bit floats. Entries are written in
//! insertion order, so save -> load -> save reproduces the file byte for byte.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::graph::Shape;
use super::real::Real;

const MAGIC: &[u8; 4] = b"RACP";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Param<R: Real> {
    pub name: String,
    pub shape: Shape,
    pub value: Vec<R>,
    pub grad: Vec<R>,
}

/// Ordered collection of named tensors. Iteration follows insertion order;
/// names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<R: Real> {
    entries: Vec<Param<R>>,
    by_name: HashMap<String, usize>,
}

impl<R: Real> ParamSet<R> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, shape: Shape, value: Vec<R>) {
        assert_eq!(
            value.len(),
            shape.len(),
            "param `{name}`: {} values for shape {:?}",
            value.len(),
            shape
        );
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name `{name}`"
        );
        self.by_name.insert(name.to_string(), self.entries.len());
        let grad = vec![R::zero(); value.len()];
        self.entries.push(Param {
            name: name.to_string(),
            shape,
            value,
            grad,
        });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Param<R> {
        let idx = *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        &self.entries[idx]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param<R> {
        let idx = *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        &mut self.entries[idx]
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &[R]) {
        let p = self.get_mut(name);
        assert_eq!(p.grad.len(), g.len(), "grad length mismatch for `{name}`");
        for (d, s) in p.grad.iter_mut().zip(g.iter()) {
            *d += *s;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            for g in &mut p.grad {
                *g = R::zero();
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all entries.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<R>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<R>> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|p| p.name.as_str())
    }

    /// New set holding clones of the entries whose name satisfies `pred`,
    /// preserving order.
    pub fn subset(&self, pred: impl Fn(&str) -> bool) -> ParamSet<R> {
        let mut out = ParamSet::new();
        for p in &self.entries {
            if pred(&p.name) {
                out.insert(&p.name, p.shape, p.value.clone());
            }
        }
        out
    }

    /// Copy values from `other` for every name present in both sets.
    pub fn copy_values_from(&mut self, other: &ParamSet<R>) {
        for p in &mut self.entries {
            if other.contains(&p.name) {
                let src = other.get(&p.name);
                assert_eq!(src.value.len(), p.value.len());
                p.value.copy_from_slice(&src.value);
            }
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for p in &self.entries {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            let dims: Vec<u32> = match p.shape {
                Shape::Scalar => vec![],
                Shape::Vector(n) => vec![n as u32],
                Shape::Matrix(r, c) => vec![r as u32, c as u32],
            };
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for d in &dims {
                w.write_all(&d.to_le_bytes())?;
            }
            for v in &p.value {
                w.write_all(&v.as_f32().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<Rd: Read>(r: &mut Rd) -> io::Result<ParamSet<R>> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "bad magic bytes in parameter file",
            ));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported parameter format version {version}"),
            ));
        }
        let count = read_u32(r)? as usize;
        let mut out = ParamSet::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            let rank = read_u32(r)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(r)? as usize);
            }
            let shape = match rank {
                0 => Shape::Scalar,
                1 => Shape::Vector(dims[0]),
                2 => Shape::Matrix(dims[0], dims[1]),
                _ => {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("unsupported rank {rank} for `{name}`"),
                    ))
                }
            };
            let mut value = Vec::with_capacity(shape.len());
            let mut buf = [0u8; 4];
            for _ in 0..shape.len() {
                r.read_exact(&mut buf)?;
                value.push(R::of_f32(f32::from_le_bytes(buf)));
            }
            out.insert(&name, shape, value);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<ParamSet<R>> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn read_u32<Rd: Read>(r: &mut Rd) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
