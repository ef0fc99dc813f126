//! Text dumps of spectral fields: a CSV of `(xi1, xi2, component, z_index, re, im)`
//! rows and a JSON sidecar with the grid and parameters. Values carry 17
//! significant digits so a dump reads back bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, GridSpec, PhysParams, SpectralVectorField};

pub const CSV_HEADER: &str = "xi1,xi2,component,z_index,re,im";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub t: f64,
    pub grid: GridSpec,
    pub params: PhysParams,
    pub label: String,
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("no file name in {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `{:.16e}`: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn field_to_csv(f: &SpectralVectorField) -> String {
    let grid = f.grid();
    let nz = grid.nz();
    let mut out = String::with_capacity(grid.n_modes() * 3 * nz * 56);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (mi, xi) in grid.modes().iter().enumerate() {
        for c in 0..3 {
            for (j, v) in f.profile(mi, c).iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{},{},{}", xi[0], xi[1], c + 1, j, fmt_f64(v.re), fmt_f64(v.im));
            }
        }
    }
    out
}

pub fn field_from_csv(text: &str, grid: Arc<Grid>) -> Result<SpectralVectorField> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(Error::Parse(format!("bad dump header {other:?}"))),
    }
    let nz = grid.nz();
    let mut f = SpectralVectorField::zeros(grid.clone());
    let mut seen = vec![false; grid.n_modes() * 3 * nz];
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("dump line {}: {what}", ln + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(bad("expected 6 columns"));
        }
        let int = |s: &str| s.trim().parse::<i64>().map_err(|_| bad("integer column"));
        let real = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("real column"));
        let xi = [int(cols[0])? as i32, int(cols[1])? as i32];
        let comp = int(cols[2])?;
        let j = int(cols[3])?;
        let mi = grid.mode_index(xi).ok_or_else(|| bad("mode outside grid"))?;
        if !(1..=3).contains(&comp) || j < 0 || j as usize >= nz {
            return Err(bad("component or z_index out of range"));
        }
        let slot = (mi * 3 + comp as usize - 1) * nz + j as usize;
        if seen[slot] {
            return Err(bad("duplicate entry"));
        }
        seen[slot] = true;
        f.raw_mut()[slot] = Complex64::new(real(cols[4])?, real(cols[5])?);
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Parse("dump is missing entries".into()));
    }
    Ok(f)
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `<stem>.csv` and `<stem>.json` in `dir`; returns the CSV path.
pub fn write_dump(dir: &Path, stem: &str, f: &SpectralVectorField, meta: &DumpMeta) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    write_atomic(&csv, field_to_csv(f).as_bytes())?;
    let json = serde_json::to_string_pretty(meta)?;
    write_atomic(&sidecar_path(&csv), json.as_bytes())?;
    Ok(csv)
}

/// Reads a dump given the path of its CSV (sidecar next to it).
pub fn read_dump(csv: &Path) -> Result<(SpectralVectorField, DumpMeta)> {
    let meta: DumpMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(csv))?)?;
    let grid = Arc::new(Grid::from_spec(&meta.grid)?);
    let f = field_from_csv(&fs::read_to_string(csv)?, grid)?;
    Ok((f, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_grid, make_initial_data, InitialSpec, Preset};

    #[test]
    fn round_trip_is_bit_exact() {
        let g = Arc::new(make_grid(2, 40, 3.0, 1e-2, 0.5).unwrap());
        let mut f = make_initial_data(&InitialSpec { preset: Preset::Random { seed: 3 }, amplitude: 1.7 }, &g, &PhysParams::default()).unwrap();
        f.raw_mut()[5] = Complex64::new(-0.0, 1e-310);
        f.raw_mut()[6] = Complex64::new(f64::MAX, f64::MIN_POSITIVE);
        let dir = tempfile::tempdir().unwrap();
        let meta = DumpMeta { t: 0.1, grid: g.spec(), params: PhysParams::default(), label: "x".into() };
        let p = write_dump(dir.path(), "w", &f, &meta).unwrap();
        let (back, m2) = read_dump(&p).unwrap();
        assert_eq!(m2, meta);
        for (a, b) in f.raw().iter().zip(back.raw()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        assert_eq!(back.grid().z(), g.z());
    }

    #[test]
    fn rejects_bad_dumps() {
        let g = Arc::new(make_grid(1, 16, 3.0, 1.0, 0.5).unwrap());
        assert!(field_from_csv("a,b\n", g.clone()).is_err());
        let text = format!("{CSV_HEADER}\n0,0,1,0,1.0,0.0\n");
        assert!(field_from_csv(&text, g.clone()).is_err());
        let full = field_to_csv(&SpectralVectorField::zeros(g.clone()));
        assert!(field_from_csv(&full, g.clone()).is_ok());
        let dup = format!("{full}0,0,1,0,1.0,0.0\n");
        assert!(field_from_csv(&dup, g).is_err());
    }
}
