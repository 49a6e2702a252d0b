//! Binary field dumps.
//!
//! Layout (little endian): 16-byte magic `KGSCATTER-FLD\0\0\0`, `u32`
//! version, `u32 d`, `u32 n`, `f64 L`, `f64 m`, `f64 lambda`, `u8` dtype,
//! then the raw row-major payload. Dtype 0 is real `f64`, 1 is complex `f64`
//! interleaved, 2 is a tangent matrix with an extension block:
//!
//! ```text
//! u8 kind (0 wave, 1 scattering), f64 horizon, f64 dt, u32 K,
//! K x (i64 k0, i64 k1, i64 k2, u8 mode kind, f64 mu),
//! base point (n^d complex values), 2K x 2K matrix entries
//! ```
//!
//! Cauchy data are two real arrays (`phi` then `pi`), amplitudes one complex
//! array. Trajectories are a sequence of Cauchy dumps in one file plus a text
//! index with one `t offset` pair per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::phase_space::{Amplitude, CauchyData};
use crate::scattering::{Mode, ModeBasis, ModeKind, OperatorKind, TangentMatrix};
use crate::spectral::{ComplexField, Grid, RealField};

pub const MAGIC: &[u8; 16] = b"KGSCATTER-FLD\0\0\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16 + 4 * 3 + 8 * 3 + 1;

const DTYPE_REAL: u8 = 0;
const DTYPE_COMPLEX: u8 = 1;
const DTYPE_TANGENT: u8 = 2;

/// Any artifact readable by [`load_field`].
#[derive(Clone, Debug)]
pub enum Field {
    Real(Grid, RealField),
    Cauchy(CauchyData),
    Amplitude(Amplitude),
    Tangent(TangentMatrix),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(grid: &Grid, dtype: u8) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u32(grid.dim() as u32);
        w.u32(grid.n() as u32);
        w.f64(grid.box_length());
        w.f64(grid.mass());
        w.f64(grid.coupling());
        w.u8(dtype);
        w
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn reals(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn complexes(&mut self, v: &[Complex64]) {
        v.iter().for_each(|c| {
            self.f64(c.re);
            self.f64(c.im)
        });
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated file: needed {len} bytes at offset {}, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn reals(&mut self, count: usize) -> Result<Vec<f64>> {
        self.take(count.saturating_mul(8))?;
        self.pos -= count * 8;
        (0..count).map(|_| self.f64()).collect()
    }
    fn complexes(&mut self, count: usize) -> Result<Vec<Complex64>> {
        self.take(count.saturating_mul(16))?;
        self.pos -= count * 16;
        (0..count)
            .map(|_| Ok(Complex64::new(self.f64()?, self.f64()?)))
            .collect()
    }
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn header(&mut self) -> Result<(Grid, u8)> {
        let magic = self.take(16)?;
        if magic != MAGIC {
            return Err(Error::Format(
                "bad magic: not a KGSCATTER field dump".into(),
            ));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}, this build reads version {VERSION}"
            )));
        }
        let d = self.u32()? as usize;
        let n = self.u32()? as usize;
        let l = self.f64()?;
        let m = self.f64()?;
        let lambda = self.f64()?;
        let dtype = self.u8()?;
        let grid =
            Grid::new(d, n, l, m, lambda).map_err(|e| Error::Format(format!("header: {e}")))?;
        Ok((grid, dtype))
    }
}

pub fn encode_cauchy(data: &CauchyData) -> Vec<u8> {
    let mut w = Writer::new(&data.grid, DTYPE_REAL);
    w.reals(&data.phi.0);
    w.reals(&data.pi.0);
    w.buf
}

pub fn encode_real(grid: &Grid, field: &RealField) -> Vec<u8> {
    let mut w = Writer::new(grid, DTYPE_REAL);
    w.reals(&field.0);
    w.buf
}

pub fn encode_amplitude(amp: &Amplitude) -> Vec<u8> {
    let mut w = Writer::new(&amp.grid, DTYPE_COMPLEX);
    w.complexes(&amp.z.0);
    w.buf
}

pub fn encode_tangent(m: &TangentMatrix) -> Vec<u8> {
    let mut w = Writer::new(&m.basis.grid, DTYPE_TANGENT);
    w.u8(match m.kind {
        OperatorKind::Wave => 0,
        OperatorKind::Scattering => 1,
    });
    w.f64(m.horizon);
    w.f64(m.dt);
    w.u32(m.basis.modes.len() as u32);
    for mode in &m.basis.modes {
        mode.k.iter().for_each(|&k| w.i64(k));
        w.u8(match mode.kind {
            ModeKind::Constant => 0,
            ModeKind::Cos => 1,
            ModeKind::Sin => 2,
        });
        w.f64(mode.mu);
    }
    w.complexes(&m.base_point.z.0);
    for i in 0..m.entries.nrows() {
        for j in 0..m.entries.ncols() {
            w.f64(m.entries[(i, j)]);
        }
    }
    w.buf
}

pub fn encode_field(field: &Field) -> Vec<u8> {
    match field {
        Field::Real(g, f) => encode_real(g, f),
        Field::Cauchy(d) => encode_cauchy(d),
        Field::Amplitude(a) => encode_amplitude(a),
        Field::Tangent(t) => encode_tangent(t),
    }
}

fn decode_one(r: &mut Reader<'_>) -> Result<Field> {
    let (grid, dtype) = r.header()?;
    let len = grid.len();
    match dtype {
        DTYPE_REAL => {
            if r.remaining() >= 16 * len {
                let phi = RealField(r.reals(len)?);
                let pi = RealField(r.reals(len)?);
                Ok(Field::Cauchy(CauchyData::new(&grid, phi, pi)?))
            } else {
                Ok(Field::Real(grid.clone(), RealField(r.reals(len)?)))
            }
        }
        DTYPE_COMPLEX => {
            let z = ComplexField(r.complexes(len)?);
            Ok(Field::Amplitude(Amplitude::new(&grid, z)?))
        }
        DTYPE_TANGENT => {
            let kind = match r.u8()? {
                0 => OperatorKind::Wave,
                1 => OperatorKind::Scattering,
                t => return Err(Error::Format(format!("unknown operator tag {t}"))),
            };
            let horizon = r.f64()?;
            let dt = r.f64()?;
            let count = r.u32()? as usize;
            let mut modes = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                let k = [r.i64()?, r.i64()?, r.i64()?];
                let kind = match r.u8()? {
                    0 => ModeKind::Constant,
                    1 => ModeKind::Cos,
                    2 => ModeKind::Sin,
                    t => return Err(Error::Format(format!("unknown mode tag {t}"))),
                };
                modes.push(Mode {
                    k,
                    kind,
                    mu: r.f64()?,
                });
            }
            let base = ComplexField(r.complexes(len)?);
            let dim = 2 * count;
            let entries = r.reals(dim * dim)?;
            Ok(Field::Tangent(TangentMatrix {
                entries: DMatrix::from_row_slice(dim, dim, &entries),
                basis: ModeBasis::from_modes(&grid, modes)?,
                kind,
                horizon,
                dt,
                base_point: Amplitude::new(&grid, base)?,
            }))
        }
        t => Err(Error::Format(format!("unknown dtype tag {t}"))),
    }
}

/// Decodes a single artifact; trailing bytes are an error.
pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    let mut r = Reader { bytes, pos: 0 };
    let f = decode_one(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            r.remaining()
        )));
    }
    Ok(f)
}

pub fn dump_field(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode_field(field))?;
    f.flush()?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<Field> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_field(&bytes)
}

/// Appends Cauchy dumps to `<stem>.bin` and `t offset` lines to `<stem>.idx`.
pub struct TrajectoryWriter {
    bin: BufWriter<File>,
    idx: BufWriter<File>,
    offset: u64,
}

impl TrajectoryWriter {
    pub fn create(stem: impl AsRef<Path>) -> Result<Self> {
        let (bin, idx) = trajectory_paths(stem.as_ref());
        Ok(TrajectoryWriter {
            bin: BufWriter::new(File::create(bin)?),
            idx: BufWriter::new(File::create(idx)?),
            offset: 0,
        })
    }

    pub fn push(&mut self, t: f64, data: &CauchyData) -> Result<()> {
        let bytes = encode_cauchy(data);
        self.bin.write_all(&bytes)?;
        writeln!(self.idx, "{t:e} {}", self.offset)?;
        self.offset += bytes.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.bin.flush()?;
        self.idx.flush()?;
        Ok(())
    }
}

pub fn trajectory_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("idx"))
}

/// Reads every snapshot listed in the index.
pub fn load_trajectory(stem: impl AsRef<Path>) -> Result<Vec<(f64, CauchyData)>> {
    let (bin, idx) = trajectory_paths(stem.as_ref());
    let mut bytes = Vec::new();
    File::open(bin)?.read_to_end(&mut bytes)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(File::open(idx)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("index line {}: `{line}`", lineno + 1));
        let mut parts = line.split_whitespace();
        let t: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let offset: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if offset > bytes.len() {
            return Err(Error::Format(format!(
                "index offset {offset} beyond end of data"
            )));
        }
        let mut r = Reader {
            bytes: &bytes,
            pos: offset,
        };
        match decode_one(&mut r)? {
            Field::Cauchy(d) => out.push((t, d)),
            _ => {
                return Err(Error::Format(format!(
                    "snapshot at offset {offset} is not Cauchy data"
                )))
            }
        }
    }
    Ok(out)
}

/// Header length in bytes.
pub fn header_len() -> usize {
    HEADER_LEN
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cauchy(g: &Grid, seed: u64) -> CauchyData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = RealField((0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let pi = RealField((0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        CauchyData::new(g, phi, pi).unwrap()
    }

    #[test]
    fn cauchy_round_trip_is_byte_exact() {
        let g = Grid::new(2, 8, 6.0, 1.0, 0.5).unwrap();
        let d = random_cauchy(&g, 1);
        let bytes = encode_cauchy(&d);
        assert_eq!(bytes.len(), header_len() + 16 * g.len());
        assert_eq!(&bytes[..16], MAGIC);
        match decode_field(&bytes).unwrap() {
            Field::Cauchy(back) => {
                assert_eq!(back, d);
                assert_eq!(encode_cauchy(&back), bytes);
            }
            other => panic!("{other:?}"),
        }
        let amp = d.to_amplitude().unwrap();
        let bytes = encode_amplitude(&amp);
        match decode_field(&bytes).unwrap() {
            Field::Amplitude(back) => assert_eq!(encode_amplitude(&back), bytes),
            other => panic!("{other:?}"),
        }
        let bytes = encode_real(&g, &d.phi);
        assert!(matches!(decode_field(&bytes).unwrap(), Field::Real(_, f) if f == d.phi));
    }

    #[test]
    fn rejects_version_magic_and_truncation() {
        let g = Grid::new(1, 16, 6.0, 1.0, 0.0).unwrap();
        let mut bytes = encode_cauchy(&random_cauchy(&g, 2));
        let mut bumped = bytes.clone();
        bumped[16..20].copy_from_slice(&2u32.to_le_bytes());
        let msg = decode_field(&bumped).unwrap_err().to_string();
        assert!(msg.contains("version 2"), "{msg}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_field(&bad)
            .unwrap_err()
            .to_string()
            .contains("magic"));
        let amp = encode_amplitude(&Amplitude::zeros(&g));
        let msg = decode_field(&amp[..amp.len() - 3]).unwrap_err().to_string();
        assert!(msg.contains("truncated"), "{msg}");
        assert!(decode_field(&bytes[..10])
            .unwrap_err()
            .to_string()
            .contains("truncated"));
        bytes.push(0);
        assert!(decode_field(&bytes).is_err());
    }

    #[test]
    fn tangent_matrix_round_trip() {
        let g = Grid::new(1, 32, 20.0, 1.0, 1.0).unwrap();
        let basis = ModeBasis::lowest(&g, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let entries = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        let m = TangentMatrix {
            entries,
            basis,
            kind: OperatorKind::Scattering,
            horizon: 3.5,
            dt: 1e-3,
            base_point: random_cauchy(&g, 4).to_amplitude().unwrap(),
        };
        let bytes = encode_tangent(&m);
        match decode_field(&bytes).unwrap() {
            Field::Tangent(back) => {
                assert_eq!(back.entries, m.entries);
                assert_eq!(back.basis, m.basis);
                assert_eq!(back.kind, m.kind);
                assert_eq!(back.base_point, m.base_point);
                assert_eq!(encode_tangent(&back), bytes);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trajectory_stream_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("traj");
        let g = Grid::new(1, 16, 6.0, 1.0, 0.0).unwrap();
        let snaps: Vec<_> = (0..5)
            .map(|i| (0.25 * i as f64, random_cauchy(&g, 10 + i)))
            .collect();
        let mut w = TrajectoryWriter::create(&stem).unwrap();
        for (t, d) in &snaps {
            w.push(*t, d).unwrap();
        }
        w.finish().unwrap();
        let back = load_trajectory(&stem).unwrap();
        assert_eq!(back, snaps);
        let idx = std::fs::read_to_string(stem.with_extension("idx")).unwrap();
        let step = header_len() + 16 * g.len();
        assert_eq!(idx.lines().nth(2).unwrap(), format!("5e-1 {}", 2 * step));
        let path = dir.path().join("one.fld");
        dump_field(&path, &Field::Cauchy(snaps[1].1.clone())).unwrap();
        assert!(matches!(load_field(&path).unwrap(), Field::Cauchy(d) if d == snaps[1].1));
    }
}
