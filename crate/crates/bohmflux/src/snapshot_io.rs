//! Snapshot persistence: a little-endian binary container with a fixed
//! header (point counts, extents, spin count, time, endianness tag)
//! followed by row-major complex doubles per spin component, plus a JSON
//! sidecar carrying the same metadata for tooling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::state::JointWaveFunction;

const MAGIC: &[u8; 4] = b"BFSN";
const LITTLE_ENDIAN_TAG: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SnapshotMeta {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub spin_components: usize,
    pub time: f64,
    pub endianness: String,
}

impl SnapshotMeta {
    fn of(psi: &JointWaveFunction) -> Self {
        SnapshotMeta {
            nx: psi.grid.nx,
            ny: psi.grid.ny,
            lx: psi.grid.lx,
            ly: psi.grid.ly,
            spin_components: psi.spin_components(),
            time: psi.time,
            endianness: "little".into(),
        }
    }
}

/// Write the binary snapshot and its JSON sidecar (`<path>.json`).
pub fn write_snapshot(psi: &JointWaveFunction, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[LITTLE_ENDIAN_TAG])?;
    w.write_all(&(psi.grid.nx as u32).to_le_bytes())?;
    w.write_all(&(psi.grid.ny as u32).to_le_bytes())?;
    w.write_all(&(psi.spin_components() as u32).to_le_bytes())?;
    w.write_all(&psi.grid.lx.to_le_bytes())?;
    w.write_all(&psi.grid.ly.to_le_bytes())?;
    w.write_all(&psi.time.to_le_bytes())?;
    for a in &psi.amplitudes {
        for v in a.iter() {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
    }
    w.flush()?;

    let sidecar = path.with_extension(match path.extension() {
        Some(e) => format!("{}.json", e.to_string_lossy()),
        None => "json".into(),
    });
    let meta = SnapshotMeta::of(psi);
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_snapshot(path: &Path) -> Result<JointWaveFunction> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::config(format!(
            "{} is not a snapshot file",
            path.display()
        )));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    if tag[0] != LITTLE_ENDIAN_TAG {
        return Err(Error::config("unsupported endianness tag"));
    }
    let nx = read_u32(&mut r)? as usize;
    let ny = read_u32(&mut r)? as usize;
    let spins = read_u32(&mut r)? as usize;
    let lx = read_f64(&mut r)?;
    let ly = read_f64(&mut r)?;
    let time = read_f64(&mut r)?;
    if spins != 1 && spins != 4 {
        return Err(Error::config(format!("bad spin component count {spins}")));
    }
    let grid = Grid::new(nx, ny, lx, ly)?;
    let mut amplitudes = Vec::with_capacity(spins);
    for _ in 0..spins {
        let mut data = Vec::with_capacity(nx * ny);
        for _ in 0..nx * ny {
            let re = read_f64(&mut r)?;
            let im = read_f64(&mut r)?;
            data.push(C64::new(re, im));
        }
        amplitudes.push(Array2::from_shape_vec((nx, ny), data).expect("shape"));
    }
    Ok(JointWaveFunction::from_components(grid, amplitudes, time))
}
