//! ENVI-compatible cube files: a text header beside a raw little-endian
//! float32 payload in `bsq` or `bil` interleave.
//!
//! The payload is written to the given path and the header to the same
//! path with `.hdr` appended. Extra `pipeline *` keys carry acquisition
//! geometry, the corrected flag, and the corrected grid, so a reader can
//! rebuild the footprint mask without a side channel.

use crate::cube::{CorrectedGrid, HyperspectralCube};
use crate::error::{Error, Result};
use crate::geometry::{metric_to_pixel, GeometryContext};
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// Supported payload interleaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interleave {
    /// Band-sequential: `[band][row][col]`.
    Bsq,
    /// Band-interleaved-by-line: `[row][band][col]`.
    Bil,
}

impl std::str::FromStr for Interleave {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bsq" => Ok(Interleave::Bsq),
            "bil" => Ok(Interleave::Bil),
            other => Err(Error::Format(format!("unsupported interleave '{other}'"))),
        }
    }
}

/// Major version this reader understands.
pub const CUBE_FORMAT_MAJOR: u16 = 1;

pub fn header_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

fn fmt_list(values: &[f64]) -> String {
    let mut s = String::from("{");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{v}");
    }
    s.push('}');
    s
}

/// Write a cube: payload at `path`, header at `path.hdr`.
pub fn write_cube(cube: &HyperspectralCube, path: &Path, interleave: Interleave) -> Result<()> {
    let (rows, cols, bands) = (cube.rows, cube.cols, cube.bands);
    let mut header = String::new();
    header.push_str("ENVI\n");
    header.push_str("description = {hyperspectral cube}\n");
    let _ = writeln!(header, "samples = {cols}");
    let _ = writeln!(header, "lines = {rows}");
    let _ = writeln!(header, "bands = {bands}");
    header.push_str("header offset = 0\nfile type = ENVI Standard\ndata type = 4\n");
    let _ = writeln!(
        header,
        "interleave = {}",
        match interleave {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
        }
    );
    header.push_str("byte order = 0\nwavelength units = Nanometers\n");
    let _ = writeln!(header, "wavelength = {}", fmt_list(&cube.band_centers));
    let _ = writeln!(header, "pipeline format version = {CUBE_FORMAT_MAJOR}.0");
    let _ = writeln!(header, "pipeline corrected = {}", if cube.corrected { 1 } else { 0 });
    let _ = writeln!(header, "pipeline working height mm = {}", cube.geom.working_height);
    let _ = writeln!(header, "pipeline line resolution mm = {}", cube.geom.line_resolution_dx);
    let _ = writeln!(header, "pipeline source rows = {}", cube.geom.rows_h);
    let _ = writeln!(header, "pipeline source cols = {}", cube.geom.cols_w);
    if let Some(grid) = &cube.grid {
        let _ = writeln!(header, "pipeline grid pitch mm = {}", grid.pitch);
        let _ = writeln!(header, "pipeline grid x min mm = {}", grid.x_min);
        let _ = writeln!(header, "pipeline grid y max mm = {}", grid.y_max);
    }
    if !cube.interpolated_rows.is_empty() {
        let rows_list: Vec<String> =
            cube.interpolated_rows.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(header, "pipeline interpolated rows = {{{}}}", rows_list.join(", "));
    }
    fs::write(header_path(path), header)?;

    let mut payload = Vec::with_capacity(rows * cols * bands * 4);
    match interleave {
        Interleave::Bsq => {
            for b in 0..bands {
                for v in 0..rows {
                    for u in 0..cols {
                        payload.extend_from_slice(&cube.data[(v * cols + u) * bands + b].to_le_bytes());
                    }
                }
            }
        }
        Interleave::Bil => {
            for v in 0..rows {
                for b in 0..bands {
                    for u in 0..cols {
                        payload.extend_from_slice(&cube.data[(v * cols + u) * bands + b].to_le_bytes());
                    }
                }
            }
        }
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(&payload)?;
    f.flush()?;
    Ok(())
}

struct HeaderFields {
    samples: usize,
    lines: usize,
    bands: usize,
    interleave: Interleave,
    wavelength: Vec<f64>,
    corrected: bool,
    working_height: f64,
    line_resolution: f64,
    source_rows: usize,
    source_cols: usize,
    grid: Option<CorrectedGrid>,
    interpolated_rows: Vec<usize>,
}

fn parse_header(text: &str, path: &Path) -> Result<HeaderFields> {
    if !text.trim_start().starts_with("ENVI") {
        return Err(Error::Format(format!("{}: not an ENVI header", path.display())));
    }
    // join brace lists that span lines, then split on top-level keys
    let mut entries: Vec<(String, String)> = Vec::new();
    let mut pending: Option<(String, String)> = None;
    for raw in text.lines().skip(1) {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some((key, mut val)) = pending.take() {
            val.push(' ');
            val.push_str(line);
            if val.matches('{').count() > val.matches('}').count() {
                pending = Some((key, val));
            } else {
                entries.push((key, val));
            }
            continue;
        }
        let Some((key, val)) = line.split_once('=') else { continue };
        let (key, val) = (key.trim().to_string(), val.trim().to_string());
        if val.matches('{').count() > val.matches('}').count() {
            pending = Some((key, val));
        } else {
            entries.push((key, val));
        }
    }
    let get = |name: &str| -> Option<&str> {
        entries.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    };
    let req = |name: &str| -> Result<&str> {
        get(name).ok_or_else(|| Error::Format(format!("{}: missing '{name}'", path.display())))
    };
    let parse_usize = |name: &str| -> Result<usize> {
        req(name)?
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad integer for '{name}'", path.display())))
    };
    let parse_f64 = |v: &str, name: &str| -> Result<f64> {
        v.parse()
            .map_err(|_| Error::Format(format!("{}: bad number for '{name}'", path.display())))
    };
    let parse_list = |v: &str| -> Result<Vec<f64>> {
        let inner = v.trim().trim_start_matches('{').trim_end_matches('}');
        inner
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<f64>().map_err(|_| {
                Error::Format(format!("{}: bad list entry '{}'", path.display(), s.trim()))
            }))
            .collect()
    };

    if let Some(ver) = get("pipeline format version") {
        let major: u16 = ver
            .split('.')
            .next()
            .unwrap_or("0")
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad version '{ver}'", path.display())))?;
        if major > CUBE_FORMAT_MAJOR {
            return Err(Error::VersionMismatch { found: major, supported: CUBE_FORMAT_MAJOR });
        }
    }
    let data_type = parse_usize("data type")?;
    if data_type != 4 {
        return Err(Error::Format(format!(
            "{}: data type {data_type} unsupported (need 4 = float32)",
            path.display()
        )));
    }
    if parse_usize("byte order")? != 0 {
        return Err(Error::Format(format!("{}: big-endian payloads unsupported", path.display())));
    }
    let interleave: Interleave = req("interleave")?.parse()?;
    let samples = parse_usize("samples")?;
    let lines = parse_usize("lines")?;
    let bands = parse_usize("bands")?;
    let wavelength = parse_list(req("wavelength")?)?;
    if wavelength.len() != bands {
        return Err(Error::Format(format!(
            "{}: {} wavelengths for {} bands",
            path.display(),
            wavelength.len(),
            bands
        )));
    }
    let corrected = get("pipeline corrected").is_some_and(|v| v.trim() == "1");
    let working_height = parse_f64(req("pipeline working height mm")?, "working height")?;
    let line_resolution = parse_f64(req("pipeline line resolution mm")?, "line resolution")?;
    let source_rows = parse_usize("pipeline source rows")?;
    let source_cols = parse_usize("pipeline source cols")?;
    let grid = match (get("pipeline grid pitch mm"), get("pipeline grid x min mm"), get("pipeline grid y max mm")) {
        (Some(p), Some(x), Some(y)) => Some(CorrectedGrid::new(
            parse_f64(p, "grid pitch")?,
            parse_f64(x, "grid x min")?,
            parse_f64(y, "grid y max")?,
            samples,
            lines,
        )),
        _ => None,
    };
    let interpolated_rows = match get("pipeline interpolated rows") {
        Some(v) => parse_list(v)?.into_iter().map(|x| x as usize).collect(),
        None => vec![],
    };
    Ok(HeaderFields {
        samples,
        lines,
        bands,
        interleave,
        wavelength,
        corrected,
        working_height,
        line_resolution,
        source_rows,
        source_cols,
        grid,
        interpolated_rows,
    })
}

/// Read a cube written by [`write_cube`]. Corrected cubes get their
/// footprint mask rebuilt from the stored geometry.
pub fn read_cube(path: &Path) -> Result<HyperspectralCube> {
    let header_text = fs::read_to_string(header_path(path))?;
    let h = parse_header(&header_text, path)?;
    let geom = GeometryContext::new(h.working_height, h.line_resolution, h.source_rows, h.source_cols)?;

    let mut payload = Vec::new();
    fs::File::open(path)?.read_to_end(&mut payload)?;
    let expected = h.lines * h.samples * h.bands * 4;
    if payload.len() != expected {
        return Err(Error::Truncated { expected: expected as u64, actual: payload.len() as u64 });
    }
    let (rows, cols, bands) = (h.lines, h.samples, h.bands);
    let mut data = vec![0f32; rows * cols * bands];
    let read_f32 = |off: usize| -> f32 {
        f32::from_le_bytes([payload[off], payload[off + 1], payload[off + 2], payload[off + 3]])
    };
    match h.interleave {
        Interleave::Bsq => {
            let mut off = 0;
            for b in 0..bands {
                for v in 0..rows {
                    for u in 0..cols {
                        data[(v * cols + u) * bands + b] = read_f32(off);
                        off += 4;
                    }
                }
            }
        }
        Interleave::Bil => {
            let mut off = 0;
            for v in 0..rows {
                for b in 0..bands {
                    for u in 0..cols {
                        data[(v * cols + u) * bands + b] = read_f32(off);
                        off += 4;
                    }
                }
            }
        }
    }

    let footprint = match (&h.grid, h.corrected) {
        (Some(grid), true) => {
            let mut mask = vec![false; rows * cols];
            for v in 0..rows {
                let y = grid.y_of_row(v as f64);
                for u in 0..cols {
                    let x = grid.x_of_col(u as f64);
                    mask[v * cols + u] = metric_to_pixel(x, y, &geom).is_ok();
                }
            }
            Some(mask)
        }
        _ => None,
    };

    Ok(HyperspectralCube {
        rows,
        cols,
        bands,
        data,
        band_centers: h.wavelength,
        geom,
        corrected: h.corrected,
        grid: h.grid,
        interpolated_rows: h.interpolated_rows,
        footprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{build_correction_map, correct_distortion};
    use crate::spectra::default_band_centers;

    fn sample_cube() -> HyperspectralCube {
        let geom = GeometryContext::new(600.0, 2.0, 41, 32).unwrap();
        let mut cube = HyperspectralCube::constant(41, 32, 5, 0.0, geom);
        cube.band_centers = default_band_centers(5);
        for (i, x) in cube.data.iter_mut().enumerate() {
            *x = (i as f32 * 0.001).sin();
        }
        cube.interpolated_rows = vec![3, 9];
        cube
    }

    #[test]
    fn bsq_and_bil_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cube = sample_cube();
        for (name, il) in [("a.dat", Interleave::Bsq), ("b.dat", Interleave::Bil)] {
            let path = dir.path().join(name);
            write_cube(&cube, &path, il).unwrap();
            let back = read_cube(&path).unwrap();
            assert_eq!(back.rows, cube.rows);
            assert_eq!(back.cols, cube.cols);
            assert_eq!(back.bands, cube.bands);
            assert_eq!(back.data, cube.data, "payload must round-trip bit-exactly");
            assert_eq!(back.band_centers, cube.band_centers);
            assert_eq!(back.geom, cube.geom);
            assert_eq!(back.interpolated_rows, cube.interpolated_rows);
            assert!(!back.corrected);
        }
    }

    #[test]
    fn corrected_cube_round_trips_with_footprint() {
        let dir = tempfile::tempdir().unwrap();
        let cube = sample_cube();
        let map = build_correction_map(&cube.geom, 2.0).unwrap();
        let corrected = correct_distortion(&cube, &map).unwrap();
        let path = dir.path().join("c.dat");
        write_cube(&corrected, &path, Interleave::Bsq).unwrap();
        let back = read_cube(&path).unwrap();
        assert!(back.corrected);
        assert_eq!(back.data, corrected.data);
        assert_eq!(back.grid, corrected.grid);
        let mask_orig = corrected.footprint.as_ref().unwrap();
        let mask_back = back.footprint.as_ref().unwrap();
        assert_eq!(mask_back, mask_orig);
    }

    #[test]
    fn rejects_newer_major_version_and_bad_type() {
        let dir = tempfile::tempdir().unwrap();
        let cube = sample_cube();
        let path = dir.path().join("v.dat");
        write_cube(&cube, &path, Interleave::Bsq).unwrap();
        let hdr = header_path(&path);
        let text = std::fs::read_to_string(&hdr).unwrap();
        std::fs::write(&hdr, text.replace("pipeline format version = 1.0", "pipeline format version = 2.0")).unwrap();
        match read_cube(&path) {
            Err(Error::VersionMismatch { found: 2, supported: 1 }) => {}
            other => panic!("expected version mismatch, got {other:?}"),
        }
        let text = std::fs::read_to_string(&hdr).unwrap();
        std::fs::write(&hdr, text.replace("data type = 4", "data type = 12")).unwrap();
        assert!(read_cube(&path).is_err());
    }

    #[test]
    fn truncated_payload_detected() {
        let dir = tempfile::tempdir().unwrap();
        let cube = sample_cube();
        let path = dir.path().join("t.dat");
        write_cube(&cube, &path, Interleave::Bsq).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        match read_cube(&path) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected as usize, bytes.len());
                assert_eq!(actual as usize, bytes.len() - 7);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }
}
