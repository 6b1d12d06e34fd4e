//! Particle path exports.
//!
//! The binary layout is little-endian throughout:
//!
//! ```text
//! magic   8 bytes  "MKVPATH1"
//! version u32      1
//! M       u64      particles
//! n_times u64
//! d, p, m u64 x 3
//! seed    u64
//! times   f64 x n_times
//! X       f64 x M * n_times * d          [particle][time][d]
//! Y       f64 x M * n_times * p          [particle][time][p]
//! Z       f64 x M * (n_times-1) * p * m  [particle][step][p][m]
//! dW      f64 x M * (n_times-1) * m      [particle][step][m]
//! ```

use std::io::{Read, Write};

use super::forward::ParticlePaths;
use crate::coefficients::Dims;
use crate::error::{Error, Result};
use crate::measure::io::fmt_f64;

pub const PATHS_MAGIC: &[u8; 8] = b"MKVPATH1";
pub const PATHS_VERSION: u32 = 1;

pub fn write_paths_binary<W: Write>(paths: &ParticlePaths, mut out: W) -> Result<()> {
    out.write_all(PATHS_MAGIC)?;
    out.write_all(&PATHS_VERSION.to_le_bytes())?;
    let Dims { d, p, m } = paths.dims;
    for v in [paths.particles(), paths.n_times(), d, p, m] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&paths.seed.to_le_bytes())?;
    for block in [&paths.times, &paths.x, &paths.y, &paths.z, &paths.dw] {
        for v in block.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_paths_binary<R: Read>(mut input: R) -> Result<ParticlePaths> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != PATHS_MAGIC {
        return Err(Error::Parse("not a particle path file".into()));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != PATHS_VERSION {
        return Err(Error::Parse(format!(
            "unsupported path file version {version}"
        )));
    }
    let mut read_u64 = || -> Result<u64> {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let header: Vec<usize> = (0..5)
        .map(|_| read_u64().map(|v| v as usize))
        .collect::<Result<_>>()?;
    let seed = read_u64()?;
    let (n, nt, d, p, m) = (header[0], header[1], header[2], header[3], header[4]);
    if nt < 2 || d == 0 || p == 0 || m == 0 || n == 0 {
        return Err(Error::Parse(
            "path file header has zero-sized dimensions".into(),
        ));
    }
    let mut read_block = |len: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; len * 8];
        input.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let times = read_block(nt)?;
    let x = read_block(n * nt * d)?;
    let y = read_block(n * nt * p)?;
    let z = read_block(n * (nt - 1) * p * m)?;
    let dw = read_block(n * (nt - 1) * m)?;
    Ok(ParticlePaths {
        dims: Dims::new(d, p, m),
        times,
        seed,
        x,
        y,
        z,
        dw,
        reflected: 0,
        reflections: 0,
    })
}

/// Per-time mean, variance and 5/50/95% quantiles of each X and Y component.
pub fn write_paths_summary_csv<W: Write>(paths: &ParticlePaths, out: W) -> Result<()> {
    let Dims { d, p, .. } = paths.dims;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for (name, k) in [("x", d), ("y", p)] {
        for j in 1..=k {
            for stat in ["mean", "var", "q05", "q50", "q95"] {
                header.push(format!("{name}_{j}_{stat}"));
            }
        }
    }
    w.write_record(&header)?;
    let n = paths.particles();
    for k in 0..paths.n_times() {
        let mut row = vec![fmt_f64(paths.times[k])];
        let columns = (0..d)
            .map(|j| (0..n).map(|i| paths.x(i, k)[j]).collect::<Vec<_>>())
            .chain((0..p).map(|q| (0..n).map(|i| paths.y(i, k)[q]).collect::<Vec<_>>()));
        for mut col in columns {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            col.sort_by(f64::total_cmp);
            row.push(fmt_f64(mean));
            row.push(fmt_f64(var));
            for q in [0.05, 0.5, 0.95] {
                row.push(fmt_f64(quantile_sorted(&col, q)));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}
