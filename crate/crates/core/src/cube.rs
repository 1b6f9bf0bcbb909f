//! Cube assembly and curvature-distortion correction.
//!
//! `reconstruct` places captured lines into an angle-indexed cube;
//! `build_correction_map` + `correct_distortion` resample that cube onto a
//! uniform metric grid, undoing the per-row horizontal magnification and
//! the nonuniform row spacing of constant-speed capture.

use crate::error::{Error, Result};
use crate::geometry::{
    metric_to_pixel, pixel_to_metric, row_of_theta, GeometryContext,
};
use crate::sim::FramePacket;

/// Uniform metric grid of a corrected cube. Pixel `(u, v)` sits at
/// `x = x_min + u * pitch`, `y = y_max - v * pitch` (row 0 on top).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedGrid {
    /// Pixel pitch, mm, identical in x and y.
    pub pitch: f64,
    pub x_min: f64,
    pub y_max: f64,
    pub cols: usize,
    pub rows: usize,
}

impl CorrectedGrid {
    pub fn new(pitch: f64, x_min: f64, y_max: f64, cols: usize, rows: usize) -> Self {
        Self { pitch, x_min, y_max, cols, rows }
    }

    pub fn x_of_col(&self, u: f64) -> f64 {
        self.x_min + u * self.pitch
    }

    pub fn y_of_row(&self, v: f64) -> f64 {
        self.y_max - v * self.pitch
    }

    pub fn col_of_x(&self, x: f64) -> f64 {
        (x - self.x_min) / self.pitch
    }

    pub fn row_of_y(&self, y: f64) -> f64 {
        (self.y_max - y) / self.pitch
    }
}

/// H x W x N reflectance volume with acquisition metadata.
///
/// Data is pixel-interleaved: `data[(v * cols + u) * bands + b]`.
#[derive(Debug, Clone)]
pub struct HyperspectralCube {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub data: Vec<f32>,
    pub band_centers: Vec<f64>,
    /// Source geometry the frames were captured under.
    pub geom: GeometryContext,
    pub corrected: bool,
    /// Metric grid, present once corrected.
    pub grid: Option<CorrectedGrid>,
    /// Rows that had to be interpolated during reconstruction.
    pub interpolated_rows: Vec<usize>,
    /// Per-pixel validity for corrected cubes; pixels outside the scanned
    /// footprint hold the sentinel value 0 and are flagged false here.
    pub footprint: Option<Vec<bool>>,
}

impl HyperspectralCube {
    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.cols + col) * self.bands;
        &self.data[i..i + self.bands]
    }

    pub fn spectrum_f64(&self, row: usize, col: usize) -> Vec<f64> {
        self.spectrum(row, col).iter().map(|&x| x as f64).collect()
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        match &self.footprint {
            Some(mask) => mask[row * self.cols + col],
            None => true,
        }
    }

    /// Constant-value cube helper used by synthetic tests.
    pub fn constant(
        rows: usize,
        cols: usize,
        bands: usize,
        value: f32,
        geom: GeometryContext,
    ) -> Self {
        Self {
            rows,
            cols,
            bands,
            data: vec![value; rows * cols * bands],
            band_centers: crate::spectra::default_band_centers(bands.max(2))[..bands.max(2)]
                .iter()
                .copied()
                .take(bands)
                .collect(),
            geom,
            corrected: false,
            grid: None,
            interpolated_rows: vec![],
            footprint: None,
        }
    }
}

/// Assemble a cube from captured frames by nearest recorded motor angle.
///
/// Rows with no frame within half a row pitch are linearly interpolated
/// from the nearest captured rows and reported in `interpolated_rows`.
/// Placement depends only on each frame's angle, so arrival order does not
/// matter. Band centers are taken from `band_centers` (the stream itself
/// carries none).
pub fn reconstruct(
    frames: &[FramePacket],
    geom: &GeometryContext,
    band_centers: Vec<f64>,
) -> Result<HyperspectralCube> {
    if frames.is_empty() {
        return Err(Error::Cube("frame stream is empty".into()));
    }
    let cols = frames[0].cols;
    let bands = frames[0].bands;
    if cols != geom.cols_w {
        return Err(Error::Cube(format!(
            "frame width {cols} does not match geometry width {}",
            geom.cols_w
        )));
    }
    if band_centers.len() != bands {
        return Err(Error::Cube(format!(
            "{} band centers given for {bands}-band frames",
            band_centers.len()
        )));
    }
    for f in frames {
        if f.cols != cols || f.bands != bands {
            return Err(Error::Cube("inconsistent frame dimensions in stream".into()));
        }
    }

    let rows = geom.rows_h;
    // candidate frame per row: (|angle error|, theta, timestamp, frame index)
    let mut chosen: Vec<Option<(f64, f64, f64, usize)>> = vec![None; rows];
    for (i, f) in frames.iter().enumerate() {
        let exact_row = row_of_theta(f.theta, geom);
        let row = exact_row.round();
        if row < 0.0 || row >= rows as f64 {
            continue; // angle outside the imaging window; drop
        }
        let row = row as usize;
        let err = (exact_row - row as f64).abs();
        let cand = (err, f.theta.radians(), f.timestamp, i);
        match &chosen[row] {
            Some(prev)
                if (prev.0, prev.1, prev.2) <= (cand.0, cand.1, cand.2) => {}
            _ => chosen[row] = Some(cand),
        }
    }
    // a frame only claims a row when it is within half a row pitch
    for slot in chosen.iter_mut() {
        if let Some((err, _, _, _)) = slot {
            if *err > 0.5 {
                *slot = None;
            }
        }
    }

    let mut data = vec![0f32; rows * cols * bands];
    let mut filled = vec![false; rows];
    for (row, slot) in chosen.iter().enumerate() {
        if let Some((_, _, _, idx)) = slot {
            let dst = &mut data[row * cols * bands..(row + 1) * cols * bands];
            dst.copy_from_slice(&frames[*idx].samples);
            filled[row] = true;
        }
    }
    if !filled.iter().any(|&f| f) {
        return Err(Error::Cube("no frame maps to any image row".into()));
    }

    // interpolate gaps between captured rows; clamp at the ends
    let mut interpolated_rows = Vec::new();
    let filled_idx: Vec<usize> = (0..rows).filter(|&r| filled[r]).collect();
    for row in 0..rows {
        if filled[row] {
            continue;
        }
        interpolated_rows.push(row);
        let below = filled_idx.partition_point(|&r| r < row);
        let (r0, r1) = match (below.checked_sub(1).map(|i| filled_idx[i]), filled_idx.get(below)) {
            (Some(a), Some(&b)) => (a, b),
            (Some(a), None) => (a, a),
            (None, Some(&b)) => (b, b),
            (None, None) => unreachable!("at least one filled row exists"),
        };
        let t = if r1 == r0 { 0.0 } else { (row - r0) as f64 / (r1 - r0) as f64 };
        for u in 0..cols {
            for b in 0..bands {
                let a = data[(r0 * cols + u) * bands + b] as f64;
                let c = data[(r1 * cols + u) * bands + b] as f64;
                data[(row * cols + u) * bands + b] = ((1.0 - t) * a + t * c) as f32;
            }
        }
    }

    Ok(HyperspectralCube {
        rows,
        cols,
        bands,
        data,
        band_centers,
        geom: geom.clone(),
        corrected: false,
        grid: None,
        interpolated_rows,
        footprint: None,
    })
}

/// Inverse warp from a uniform metric target grid back into source pixels.
#[derive(Debug, Clone)]
pub struct CorrectionMap {
    pub grid: CorrectedGrid,
    /// Source geometry this map was built for.
    pub geom: GeometryContext,
    /// Per-target `(u, v)` fractional source coordinates; NaN pairs mark
    /// targets outside the scanned footprint.
    pub sources: Vec<(f64, f64)>,
}

impl CorrectionMap {
    pub fn is_valid(&self, i: usize) -> bool {
        !self.sources[i].0.is_nan()
    }
}

/// Build the inverse-warp map for a source geometry at `target_pitch` mm
/// per pixel. The target grid spans the full metric footprint bounding
/// box; targets whose metric point no scan line images are flagged.
pub fn build_correction_map(geom: &GeometryContext, target_pitch: f64) -> Result<CorrectionMap> {
    if target_pitch <= 0.0 {
        return Err(Error::Cube("target pitch must be positive".into()));
    }
    let last_col = (geom.cols_w - 1) as f64;
    let last_row = (geom.rows_h - 1) as f64;
    // footprint bbox: widest x extent occurs at the extreme rows
    let (_, y_top) = pixel_to_metric(0.0, 0.0, geom)?;
    let (_, y_bot) = pixel_to_metric(0.0, last_row, geom)?;
    let (x_at_top, _) = pixel_to_metric(last_col, 0.0, geom)?;
    let (x_at_bot, _) = pixel_to_metric(last_col, last_row, geom)?;
    let x_max = x_at_top.abs().max(x_at_bot.abs());
    let y_max = y_top.max(y_bot);
    let y_min = y_top.min(y_bot);

    let cols = ((2.0 * x_max) / target_pitch).floor() as usize + 1;
    let rows = ((y_max - y_min) / target_pitch).floor() as usize + 1;
    // center the grid span on the footprint bbox
    let x_min = -((cols - 1) as f64) / 2.0 * target_pitch;
    let y0 = (y_max + y_min) / 2.0 + (rows - 1) as f64 / 2.0 * target_pitch;
    let grid = CorrectedGrid::new(target_pitch, x_min, y0, cols, rows);

    let mut sources = vec![(f64::NAN, f64::NAN); rows * cols];
    for v in 0..rows {
        let y = grid.y_of_row(v as f64);
        for u in 0..cols {
            let x = grid.x_of_col(u as f64);
            if let Ok((su, sv)) = metric_to_pixel(x, y, geom) {
                sources[v * cols + u] = (su, sv);
            }
        }
    }
    Ok(CorrectionMap { grid, geom: geom.clone(), sources })
}

/// Bilinear sample of all bands at fractional source coords, appended to `out`.
fn bilinear_into(cube: &HyperspectralCube, su: f64, sv: f64, out: &mut [f32]) {
    let last_u = (cube.cols - 1) as f64;
    let last_v = (cube.rows - 1) as f64;
    let su = su.clamp(0.0, last_u);
    let sv = sv.clamp(0.0, last_v);
    let u0 = (su.floor() as usize).min(cube.cols - 2.min(cube.cols - 1));
    let v0 = (sv.floor() as usize).min(cube.rows - 2.min(cube.rows - 1));
    let u1 = (u0 + 1).min(cube.cols - 1);
    let v1 = (v0 + 1).min(cube.rows - 1);
    let fu = su - u0 as f64;
    let fv = sv - v0 as f64;
    let w00 = ((1.0 - fu) * (1.0 - fv)) as f32;
    let w01 = (fu * (1.0 - fv)) as f32;
    let w10 = ((1.0 - fu) * fv) as f32;
    let w11 = (fu * fv) as f32;
    let s00 = cube.spectrum(v0, u0);
    let s01 = cube.spectrum(v0, u1);
    let s10 = cube.spectrum(v1, u0);
    let s11 = cube.spectrum(v1, u1);
    for b in 0..cube.bands {
        out[b] = w00 * s00[b] + w01 * s01[b] + w10 * s10[b] + w11 * s11[b];
    }
}

/// Resample an uncorrected cube onto the map's uniform metric grid.
///
/// Band-by-band bilinear interpolation; out-of-footprint targets are set
/// to 0 and masked. The result carries `corrected = true` plus the grid.
pub fn correct_distortion(cube: &HyperspectralCube, map: &CorrectionMap) -> Result<HyperspectralCube> {
    if cube.corrected {
        return Err(Error::Cube("cube is already corrected".into()));
    }
    if cube.geom != map.geom {
        return Err(Error::Cube("correction map was built for a different geometry".into()));
    }
    let grid = &map.grid;
    let mut data = vec![0f32; grid.rows * grid.cols * cube.bands];
    let mut footprint = vec![false; grid.rows * grid.cols];
    use rayon::prelude::*;
    data.par_chunks_mut(grid.cols * cube.bands)
        .zip(footprint.par_chunks_mut(grid.cols))
        .enumerate()
        .for_each(|(v, (row_data, row_mask))| {
            for u in 0..grid.cols {
                let i = v * grid.cols + u;
                if !map.is_valid(i) {
                    continue;
                }
                let (su, sv) = map.sources[i];
                bilinear_into(cube, su, sv, &mut row_data[u * cube.bands..(u + 1) * cube.bands]);
                row_mask[u] = true;
            }
        });
    Ok(HyperspectralCube {
        rows: grid.rows,
        cols: grid.cols,
        bands: cube.bands,
        data,
        band_centers: cube.band_centers.clone(),
        geom: cube.geom.clone(),
        corrected: true,
        grid: Some(grid.clone()),
        interpolated_rows: cube.interpolated_rows.clone(),
        footprint: Some(footprint),
    })
}

/// Index of the band whose center is nearest `wavelength_nm`.
pub fn nearest_band(band_centers: &[f64], wavelength_nm: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in band_centers.iter().enumerate() {
        let d = (c - wavelength_nm).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Three-channel float image in [0, 1], row-major.
#[derive(Debug, Clone)]
pub struct RgbImage {
    pub rows: usize,
    pub cols: usize,
    /// `pixels[(v * cols + u) * 3 + c]`
    pub pixels: Vec<f32>,
}

/// Slice three bands (nearest the given wavelengths, defaults 650/550/450
/// nm) and normalize each to [0, 1] over valid pixels.
pub fn pseudo_rgb(cube: &HyperspectralCube, wavelengths_nm: Option<[f64; 3]>) -> Result<RgbImage> {
    if cube.bands < 3 {
        return Err(Error::Cube(format!("pseudo-RGB needs >= 3 bands, cube has {}", cube.bands)));
    }
    let wl = wavelengths_nm.unwrap_or([650.0, 550.0, 450.0]);
    let idx = [
        nearest_band(&cube.band_centers, wl[0]),
        nearest_band(&cube.band_centers, wl[1]),
        nearest_band(&cube.band_centers, wl[2]),
    ];
    let mut pixels = vec![0f32; cube.rows * cube.cols * 3];
    for c in 0..3 {
        let b = idx[c];
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for v in 0..cube.rows {
            for u in 0..cube.cols {
                if cube.is_valid(v, u) {
                    let x = cube.spectrum(v, u)[b];
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
        }
        let span = hi - lo;
        for v in 0..cube.rows {
            for u in 0..cube.cols {
                let out = &mut pixels[(v * cube.cols + u) * 3 + c];
                if !cube.is_valid(v, u) {
                    *out = 0.0;
                } else if span > 1e-12 {
                    *out = (cube.spectrum(v, u)[b] - lo) / span;
                } else {
                    *out = 0.5;
                }
            }
        }
    }
    Ok(RgbImage { rows: cube.rows, cols: cube.cols, pixels })
}
