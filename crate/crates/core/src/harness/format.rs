//! Binary persistence of event logs (`SBMX`) and grid states (`SBMS`).
//!
//! Event log, little-endian:
//!
//! ```text
//! header  magic "SBMX" | version u16 | d u16 | N u64 | T f64 | events u64
//! record  time f64 | position d × f64 | sign i8
//! ```
//!
//! State file, little-endian:
//!
//! ```text
//! header  magic "SBMS" | version u16 | d u16 | N u64 | T f64 | steps u64
//! state   atoms u64 | atoms × (position d × f64 | mass f64)     (steps + 1 times)
//! ```
//!
//! Readers validate everything and report the byte offset of the first
//! inconsistency.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::martingale_measure::BranchEventLog;
use crate::measure::{AtomicMeasure, Point};
use crate::path::{MeasurePath, TimeGrid};
use crate::scalar::Scalar;

pub const EVENT_MAGIC: [u8; 4] = *b"SBMX";
pub const STATE_MAGIC: [u8; 4] = *b"SBMS";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;

fn resolution_of<T: Scalar>(quantum: T) -> Result<u64> {
    let n = (T::one() / quantum).to_f64_lossy().round();
    if !(n >= 1.0) || !n.is_finite() {
        return Err(Error::parameter(format!("mass quantum {quantum} is not 1/N for an integer N")));
    }
    Ok(n as u64)
}

fn header(magic: [u8; 4], dim: usize, n: u64, horizon: f64, count: u64) -> Result<[u8; HEADER_LEN]> {
    let d = u16::try_from(dim).map_err(|_| Error::parameter(format!("dimension {dim} does not fit the format")))?;
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&magic);
    h[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h[6..8].copy_from_slice(&d.to_le_bytes());
    h[8..16].copy_from_slice(&n.to_le_bytes());
    h[16..24].copy_from_slice(&horizon.to_le_bytes());
    h[24..32].copy_from_slice(&count.to_le_bytes());
    Ok(h)
}

/// Encodes an event log.
pub fn encode_event_log<T: Scalar>(log: &BranchEventLog<T>) -> Result<Vec<u8>> {
    let d = log.dim();
    let n = resolution_of(log.mass_quantum())?;
    let mut out = Vec::with_capacity(HEADER_LEN + log.len() * (9 + 8 * d));
    out.extend_from_slice(&header(EVENT_MAGIC, d, n, log.horizon().to_f64_lossy(), log.len() as u64)?);
    for e in log.iter() {
        out.extend_from_slice(&e.time.to_f64_lossy().to_le_bytes());
        for c in e.position {
            out.extend_from_slice(&c.to_f64_lossy().to_le_bytes());
        }
        out.push(e.sign as u8);
    }
    Ok(out)
}

pub fn write_event_log<T: Scalar>(path: &Path, log: &BranchEventLog<T>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_event_log(log)?)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn err(&self, at: usize, message: impl Into<String>) -> Error {
        Error::Format { offset: at as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(self.bytes.len(), format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.pos;
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(self.err(at, format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

struct Header {
    dim: usize,
    resolution: u64,
    horizon: f64,
    count: u64,
}

fn read_header(c: &mut Cursor<'_>, magic: [u8; 4], count_name: &str) -> Result<Header> {
    let m = c.take(4, "magic")?;
    if m != magic {
        return Err(c.err(
            0,
            format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(m), String::from_utf8_lossy(&magic)),
        ));
    }
    let version = c.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(c.err(4, format!("unsupported version {version}, expected {FORMAT_VERSION}")));
    }
    let dim = c.u16("dimension")? as usize;
    if dim == 0 {
        return Err(c.err(6, "dimension must be at least 1"));
    }
    let resolution = c.u64("resolution")?;
    if resolution == 0 {
        return Err(c.err(8, "resolution N must be at least 1"));
    }
    let horizon = c.f64("horizon")?;
    if !(horizon > 0.0) {
        return Err(c.err(16, format!("horizon must be positive, got {horizon}")));
    }
    let count = c.u64(count_name)?;
    Ok(Header { dim, resolution, horizon, count })
}

/// Decodes an event log, validating header, record count, signs and time order.
pub fn decode_event_log<T: Scalar>(bytes: &[u8]) -> Result<BranchEventLog<T>> {
    let mut c = Cursor::new(bytes);
    let h = read_header(&mut c, EVENT_MAGIC, "event count")?;
    let record = 8 * (h.dim + 1) + 1;
    let expected = (h.count as u128) * record as u128;
    if expected != c.remaining() as u128 {
        return Err(c.err(
            24,
            format!("header declares {} events ({expected} bytes) but {} bytes follow", h.count, c.remaining()),
        ));
    }
    let q = T::one() / T::lit(h.resolution as f64);
    let mut log = BranchEventLog::with_capacity(h.dim, q, T::lit(h.horizon), h.count as usize);
    let mut position = vec![T::zero(); h.dim];
    let mut last = f64::NEG_INFINITY;
    for _ in 0..h.count {
        let at = c.pos;
        let time = c.f64("event time")?;
        if time <= 0.0 || time > h.horizon || time < last {
            return Err(c.err(at, format!("event time {time} out of order or outside (0, {}]", h.horizon)));
        }
        last = time;
        for p in position.iter_mut() {
            *p = T::lit(c.f64("event position")?);
        }
        let sign_at = c.pos;
        let sign = c.take(1, "sign")?[0] as i8;
        if sign != 1 && sign != -1 {
            return Err(c.err(sign_at, format!("event sign {sign} is not ±1")));
        }
        log.push_unchecked(T::lit(time), &position, sign);
    }
    Ok(log)
}

pub fn read_event_log<T: Scalar>(path: &Path) -> Result<BranchEventLog<T>> {
    decode_event_log(&fs::read(path)?)
}

/// Encodes the grid states of a path.
pub fn encode_states<T: Scalar>(path: &MeasurePath<T>) -> Result<Vec<u8>> {
    let grid = path.grid();
    let n = resolution_of(path.events().mass_quantum())?;
    let mut out = Vec::new();
    out.extend_from_slice(&header(STATE_MAGIC, path.dim(), n, grid.horizon().to_f64_lossy(), grid.steps() as u64)?);
    for s in path.states() {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
        for (x, m) in s.atoms() {
            for c in x {
                out.extend_from_slice(&c.to_f64_lossy().to_le_bytes());
            }
            out.extend_from_slice(&m.to_f64_lossy().to_le_bytes());
        }
    }
    Ok(out)
}

/// Decoded state file: grid, states and resolution.
pub struct DecodedStates<T> {
    pub grid: TimeGrid<T>,
    pub states: Vec<AtomicMeasure<T>>,
    pub resolution: u64,
}

pub fn decode_states<T: Scalar>(bytes: &[u8]) -> Result<DecodedStates<T>> {
    let mut c = Cursor::new(bytes);
    let h = read_header(&mut c, STATE_MAGIC, "step count")?;
    let steps = usize::try_from(h.count).map_err(|_| c.err(24, "step count too large"))?;
    let grid = TimeGrid::with_steps(T::lit(h.horizon), steps).map_err(|e| c.err(24, e.to_string()))?;
    let q = T::one() / T::lit(h.resolution as f64);
    let mut states = Vec::with_capacity(steps.saturating_add(1).min(1 << 20));
    for _ in 0..=steps {
        let at = c.pos;
        let count = c.u64("atom count")?;
        let need = count as u128 * 8 * (h.dim as u128 + 1);
        if need > c.remaining() as u128 {
            return Err(c.err(at, format!("state declares {count} atoms but the file is too short")));
        }
        let mut positions = Vec::with_capacity(count as usize * h.dim);
        let mut masses = Vec::with_capacity(count as usize);
        for _ in 0..count {
            for _ in 0..h.dim {
                positions.push(T::lit(c.f64("atom position")?));
            }
            let mat = c.pos;
            let m = c.f64("atom mass")?;
            if m < 0.0 {
                return Err(c.err(mat, format!("negative atom mass {m}")));
            }
            masses.push(T::lit(m));
        }
        let uniform = masses.iter().all(|m| *m == q);
        let state = if uniform {
            AtomicMeasure::uniform(h.dim, positions, q)
        } else {
            positions
                .chunks(h.dim)
                .zip(masses)
                .map(|(p, m)| Ok((Point::new(p.to_vec())?, m)))
                .collect::<Result<Vec<_>>>()
                .and_then(|atoms| AtomicMeasure::from_atoms(h.dim, atoms))
        }
        .map_err(|e| c.err(at, e.to_string()))?;
        states.push(state);
    }
    if c.remaining() != 0 {
        return Err(c.err(c.pos, format!("{} trailing bytes", c.remaining())));
    }
    Ok(DecodedStates { grid, states, resolution: h.resolution })
}

/// File names of replicate `r` inside a path directory.
pub fn path_files(dir: &Path, replicate: usize) -> (PathBuf, PathBuf) {
    (dir.join(format!("replicate_{replicate:06}.sbmx")), dir.join(format!("replicate_{replicate:06}.sbms")))
}

/// Writes the event log and states of one path; returns the two file names.
pub fn write_path<T: Scalar>(dir: &Path, replicate: usize, path: &MeasurePath<T>) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let (ev, st) = path_files(dir, replicate);
    write_event_log(&ev, path.events())?;
    let mut w = BufWriter::new(fs::File::create(&st)?);
    w.write_all(&encode_states(path)?)?;
    w.flush()?;
    Ok((ev, st))
}

/// Reads a path from its event-log file; the state file is the sibling with
/// extension `.sbms`.
pub fn read_path<T: Scalar>(events_file: &Path) -> Result<MeasurePath<T>> {
    let log: BranchEventLog<T> = read_event_log(events_file)?;
    let states = decode_states::<T>(&fs::read(events_file.with_extension("sbms"))?)?;
    if resolution_of(log.mass_quantum())? != states.resolution {
        return Err(Error::Format { offset: 8, message: "event log and state file disagree on N".into() });
    }
    MeasurePath::new(states.grid, states.states, log)
}

/// All replicate paths in `dir`, in replicate order.
pub fn read_paths<T: Scalar>(dir: &Path) -> Result<Vec<MeasurePath<T>>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "sbmx"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    files.iter().map(|f| read_path(f)).collect()
}
