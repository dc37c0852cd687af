//! Gradient trace files.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! "GMIP" | version u32 | n u32 | d u32 | T u32
//! T × ( published mean: d × f64 | query gradient: d × f64 )
//! ```
//!
//! The CSV alternative has header `step,kind,idx,value` with `kind` either
//! `mean` or `query` and `idx` the coordinate.
//!
//! Background gradients for the attacker's estimate travel in a sidecar:
//!
//! ```text
//! "GMBG" | version u32 | d u32 | T u32 | m u32
//! T × m × d × f64
//! ```
//!
//! A sidecar with T = 1 is reused for every step.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::glir::{estimate_distribution, GlirScorer};

pub const TRACE_MAGIC: &[u8; 4] = b"GMIP";
pub const BACKGROUND_MAGIC: &[u8; 4] = b"GMBG";
pub const FORMAT_VERSION: u32 = 1;

/// Published means and one query's gradients over T steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    n: usize,
    means: Vec<DVector<f64>>,
    queries: Vec<DVector<f64>>,
}

impl Trace {
    pub fn new(n: usize, means: Vec<DVector<f64>>, queries: Vec<DVector<f64>>) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("n", "batch size must be >= 2"));
        }
        if means.is_empty() || means.len() != queries.len() {
            return Err(Error::invalid("trace", "needs the same positive number of means and queries"));
        }
        let d = means[0].len();
        if d == 0 || means.iter().chain(&queries).any(|v| v.len() != d) {
            return Err(Error::invalid("trace", "vectors must share a positive dimension"));
        }
        Ok(Trace { n, means, queries })
    }

    pub fn batch_size(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn steps(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn queries(&self) -> &[DVector<f64>] {
        &self.queries
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(TRACE_MAGIC)?;
        for v in [FORMAT_VERSION, self.n as u32, self.dim() as u32, self.steps() as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        for (m, q) in self.means.iter().zip(&self.queries) {
            write_f64s(&mut out, m)?;
            write_f64s(&mut out, q)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(input: R) -> Result<Self> {
        let mut r = OffsetReader::new(input);
        r.magic(TRACE_MAGIC)?;
        r.version()?;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let t = r.u32()? as usize;
        if d == 0 || t == 0 {
            return Err(r.error("dimension and step count must be positive"));
        }
        if n < 2 {
            return Err(r.error("batch size must be >= 2"));
        }
        let mut means = Vec::with_capacity(t);
        let mut queries = Vec::with_capacity(t);
        for _ in 0..t {
            means.push(r.vector(d)?);
            queries.push(r.vector(d)?);
        }
        r.end()?;
        Trace::new(n, means, queries)
    }

    /// CSV rows `step,kind,idx,value`. The batch size is not part of the
    /// CSV form and must be supplied when reading.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,kind,idx,value")?;
        for (t, (m, q)) in self.means.iter().zip(&self.queries).enumerate() {
            for (kind, v) in [("mean", m), ("query", q)] {
                for (i, x) in v.iter().enumerate() {
                    writeln!(out, "{t},{kind},{i},{x:.17e}")?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, n: usize) -> Result<Self> {
        let mut cells: Vec<(usize, bool, usize, f64)> = Vec::new();
        let mut offset = 0u64;
        let reader = BufReader::new(input);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let here = offset;
            offset += line.len() as u64 + 1;
            let line = line.trim();
            if lineno == 0 {
                if line != "step,kind,idx,value" {
                    return Err(parse_error(here, format!("unexpected header `{line}`")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(parse_error(here, format!("expected 4 fields, found {}", fields.len())));
            }
            let step = fields[0].parse().map_err(|_| parse_error(here, "bad step"))?;
            let member = match fields[1] {
                "mean" => true,
                "query" => false,
                other => return Err(parse_error(here, format!("unknown kind `{other}`"))),
            };
            let idx = fields[2].parse().map_err(|_| parse_error(here, "bad idx"))?;
            let value = fields[3].parse().map_err(|_| parse_error(here, "bad value"))?;
            cells.push((step, member, idx, value));
        }
        let t = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        let d = cells.iter().map(|c| c.2 + 1).max().unwrap_or(0);
        if t == 0 || d == 0 {
            return Err(parse_error(offset, "no data rows"));
        }
        let mut means = vec![DVector::from_element(d, f64::NAN); t];
        let mut queries = means.clone();
        for (step, is_mean, idx, value) in cells {
            let target = if is_mean { &mut means[step] } else { &mut queries[step] };
            target[idx] = value;
        }
        if means.iter().chain(&queries).any(|v| v.iter().any(|x| x.is_nan())) {
            return Err(parse_error(offset, "missing entries"));
        }
        Trace::new(n, means, queries)
    }

    /// Sum over steps of the per-step GLiR log p-values.
    pub fn score(&self, background: &Background, tau2: f64, ridge: f64) -> Result<f64> {
        if background.dim() != self.dim() {
            return Err(Error::invalid("background", "dimension differs from the trace"));
        }
        self.score_with(&background.scorers(self.n, tau2, ridge)?)
    }

    /// As [`Trace::score`] with prebuilt scorers: one per step, or one
    /// shared by all steps.
    pub fn score_with(&self, scorers: &[GlirScorer]) -> Result<f64> {
        if scorers.len() != 1 && scorers.len() != self.steps() {
            return Err(Error::invalid(
                "background",
                format!("{} blocks for {} steps", scorers.len(), self.steps()),
            ));
        }
        Ok(self
            .means
            .iter()
            .zip(&self.queries)
            .enumerate()
            .map(|(t, (m, q))| scorers[t.min(scorers.len() - 1)].log_pvalue(m, q))
            .sum())
    }
}

/// Background gradients, one block per step (or one shared block).
#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    dim: usize,
    blocks: Vec<Vec<DVector<f64>>>,
}

impl Background {
    pub fn new(dim: usize, blocks: Vec<Vec<DVector<f64>>>) -> Result<Self> {
        if dim == 0 || blocks.is_empty() {
            return Err(Error::invalid("background", "needs a dimension and at least one block"));
        }
        let m = blocks[0].len();
        if m < 2 || blocks.iter().any(|b| b.len() != m || b.iter().any(|g| g.len() != dim)) {
            return Err(Error::invalid("background", "blocks need equal sizes >= 2 and matching dimension"));
        }
        Ok(Background { dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Vec<DVector<f64>>] {
        &self.blocks
    }

    /// One scorer per block.
    pub fn scorers(&self, n: usize, tau2: f64, ridge: f64) -> Result<Vec<GlirScorer>> {
        self.blocks
            .iter()
            .map(|b| GlirScorer::new(&estimate_distribution(b, ridge)?, n, tau2))
            .collect()
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(BACKGROUND_MAGIC)?;
        let m = self.blocks[0].len();
        for v in [FORMAT_VERSION, self.dim as u32, self.blocks.len() as u32, m as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        for block in &self.blocks {
            for g in block {
                write_f64s(&mut out, g)?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(input: R) -> Result<Self> {
        let mut r = OffsetReader::new(input);
        r.magic(BACKGROUND_MAGIC)?;
        r.version()?;
        let d = r.u32()? as usize;
        let t = r.u32()? as usize;
        let m = r.u32()? as usize;
        if d == 0 || t == 0 || m < 2 {
            return Err(r.error("need d >= 1, T >= 1 and m >= 2"));
        }
        let mut blocks = Vec::with_capacity(t);
        for _ in 0..t {
            let mut block = Vec::with_capacity(m);
            for _ in 0..m {
                block.push(r.vector(d)?);
            }
            blocks.push(block);
        }
        r.end()?;
        Background::new(d, blocks)
    }
}

fn write_f64s<W: Write>(out: &mut W, v: &DVector<f64>) -> Result<()> {
    for x in v.iter() {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn parse_error(offset: u64, reason: impl Into<String>) -> Error {
    Error::TraceParse {
        offset,
        reason: reason.into(),
    }
}

/// Reader that remembers how many bytes it consumed.
struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn new(inner: R) -> Self {
        OffsetReader { inner, offset: 0 }
    }

    fn error(&self, reason: impl Into<String>) -> Error {
        parse_error(self.offset, reason)
    }

    fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        let mut got = 0;
        while got < N {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(parse_error(
                        self.offset + got as u64,
                        format!("unexpected end of file (needed {N} bytes)"),
                    ))
                }
                Ok(k) => got += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += N as u64;
        Ok(buf)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.exact::<4>()?;
        if &got != want {
            return Err(parse_error(0, format!("bad magic {:?}, expected {:?}", got, want)));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let at = self.offset;
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(parse_error(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact::<4>()?))
    }

    fn vector(&mut self, d: usize) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(d);
        for x in v.iter_mut() {
            let at = self.offset;
            *x = f64::from_le_bytes(self.exact::<8>()?);
            if !x.is_finite() {
                return Err(parse_error(at, "non-finite value"));
            }
        }
        Ok(v)
    }

    fn end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(self.error("trailing bytes after the last record")),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}
