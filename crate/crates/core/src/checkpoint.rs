//! Checkpoint container: a text header followed by raw tensors.
//!
//! ```text
//! ATTNLITE-CHECKPOINT 1
//! variant=super
//! d_m=32
//! ...
//! tensor=wq 32 32
//! tensor=wo 32 32
//! end
//! <payload>
//! ```
//!
//! Header lines are `key=value`. Each `tensor=` line gives a name and a shape;
//! the payload is every tensor's row-major data, in header order, as
//! little-endian `f64`, with nothing in between.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &str = "ATTNLITE-CHECKPOINT 1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing header key {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("bad value {raw:?} for {key:?}")))
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        for (k, v) in &self.header {
            if k.contains('=') || k.contains('\n') || v.contains('\n') || k == "tensor" {
                return Err(Error::Checkpoint(format!("unencodable header entry {k:?}")));
            }
            writeln!(out, "{k}={v}")?;
        }
        for (name, m) in &self.tensors {
            if name.contains(char::is_whitespace) {
                return Err(Error::Checkpoint(format!("tensor name {name:?} has whitespace")));
            }
            writeln!(out, "tensor={name} {} {}", m.rows(), m.cols())?;
        }
        writeln!(out, "end")?;
        for (_, m) in &self.tensors {
            for x in m.data() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut input = BufReader::new(input);
        let mut line = String::new();
        input.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(Error::Checkpoint("not an attnlite checkpoint".into()));
        }
        let mut header = Vec::new();
        let mut shapes = Vec::new();
        loop {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("header ended without `end`".into()));
            }
            let entry = line.trim_end_matches('\n');
            if entry == "end" {
                break;
            }
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad header line {entry:?}")))?;
            if k == "tensor" {
                let parts: Vec<&str> = v.split(' ').collect();
                let [name, rows, cols] = parts[..] else {
                    return Err(Error::Checkpoint(format!("bad tensor line {entry:?}")));
                };
                let dim = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::Checkpoint(format!("bad tensor dimension {s:?}")))
                };
                shapes.push((name.to_string(), dim(rows)?, dim(cols)?));
            } else {
                header.push((k.to_string(), v.to_string()));
            }
        }
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, rows, cols) in shapes {
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                input
                    .read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint(format!("payload truncated in {name}")))?;
                data.push(f64::from_le_bytes(buf));
            }
            let m = Matrix::new(rows, cols, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.push((name, m));
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after payload".into()));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}
