//! `PSS1` binary snapshots of ensembles and gridded fields.
//!
//! Layout (little-endian): magic `PSS1`, `u32` dim, `u8` kind.
//! Kind 0 (ensemble): `u64` n, then `n*d` positions, `n*d` velocities and
//! `n` weights as `f64`. Kind 1 (field): `d` x `u32` cells per axis, `u32`
//! components, then the values as `f64` in row-major order of the array
//! shape `(components, n_0, .., n_{d-1})`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::field::GriddedField;
use crate::grid::TorusGrid;

pub const MAGIC: &[u8; 4] = b"PSS1";
const KIND_ENSEMBLE: u8 = 0;
const KIND_FIELD: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    Ensemble(ParticleEnsemble),
    Field(GriddedField),
}

pub fn write_snapshot<W: Write>(mut w: W, snap: &Snapshot) -> Result<()> {
    w.write_all(MAGIC)?;
    match snap {
        Snapshot::Ensemble(e) => {
            w.write_all(&(e.dim() as u32).to_le_bytes())?;
            w.write_all(&[KIND_ENSEMBLE])?;
            w.write_all(&(e.len() as u64).to_le_bytes())?;
            for v in e.positions().iter().chain(e.velocities()).chain(e.weights()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Snapshot::Field(f) => {
            let g = f.grid();
            w.write_all(&(g.dim() as u32).to_le_bytes())?;
            w.write_all(&[KIND_FIELD])?;
            for &n in g.cells() {
                w.write_all(&(n as u32).to_le_bytes())?;
            }
            w.write_all(&(f.components() as u32).to_le_bytes())?;
            for v in f.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(truncated)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated snapshot: {e}"))
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Snapshot> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let dim = read_u32(&mut r)? as usize;
    if dim == 0 || dim > 3 {
        return Err(Error::Format(format!("unsupported dimension {dim}")));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind).map_err(truncated)?;
    match kind[0] {
        KIND_ENSEMBLE => {
            let n = read_u64(&mut r)? as usize;
            let positions = read_f64s(&mut r, n * dim)?;
            let velocities = read_f64s(&mut r, n * dim)?;
            let weights = read_f64s(&mut r, n)?;
            Ok(Snapshot::Ensemble(ParticleEnsemble::new(dim, positions, velocities, weights)?))
        }
        KIND_FIELD => {
            let cells = (0..dim)
                .map(|_| read_u32(&mut r).map(|c| c as usize))
                .collect::<Result<Vec<_>>>()?;
            let grid = TorusGrid::new(cells)?;
            let components = read_u32(&mut r)? as usize;
            let values = read_f64s(&mut r, components * grid.len())?;
            Ok(Snapshot::Field(GriddedField::from_values(&grid, components, values)?))
        }
        k => Err(Error::Format(format!("unknown snapshot kind {k}"))),
    }
}

pub fn save(path: impl AsRef<Path>, snap: &Snapshot) -> Result<()> {
    write_snapshot(BufWriter::new(File::create(path)?), snap)
}

pub fn load(path: impl AsRef<Path>) -> Result<Snapshot> {
    read_snapshot(BufReader::new(File::open(path)?))
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<ParticleEnsemble> {
    match load(path)? {
        Snapshot::Ensemble(e) => Ok(e),
        Snapshot::Field(_) => Err(Error::Format("expected an ensemble snapshot".into())),
    }
}

pub fn load_field(path: impl AsRef<Path>) -> Result<GriddedField> {
    match load(path)? {
        Snapshot::Field(f) => Ok(f),
        Snapshot::Ensemble(_) => Err(Error::Format("expected a field snapshot".into())),
    }
}

/// Pack complex planes as interleaved real/imaginary component pairs.
pub fn complex_to_field(grid: &TorusGrid, components: usize, data: &[Complex64]) -> Result<GriddedField> {
    let n = grid.len();
    let mut values = vec![0.0; 2 * components * n];
    for c in 0..components {
        for i in 0..n {
            values[2 * c * n + i] = data[c * n + i].re;
            values[(2 * c + 1) * n + i] = data[c * n + i].im;
        }
    }
    GriddedField::from_values(grid, 2 * components, values)
}

/// Inverse of [`complex_to_field`].
pub fn field_to_complex(f: &GriddedField) -> Result<Vec<Complex64>> {
    if f.components() % 2 != 0 {
        return Err(Error::Format("complex field needs an even component count".into()));
    }
    let n = f.grid().len();
    let comps = f.components() / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); comps * n];
    for c in 0..comps {
        for i in 0..n {
            out[c * n + i] = Complex64::new(f.at(2 * c, i), f.at(2 * c + 1, i));
        }
    }
    Ok(out)
}
