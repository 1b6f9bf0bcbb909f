//! Resolution sweeps: render bar targets through the full scan /
//! reconstruct / correct pipeline and report the smallest bar width whose
//! line pairs stay resolved on the corrected grid.
//!
//! The line pitch scales with working height (ideal optics), so each
//! height gets its own geometry derived from the reference profile.

use crate::cube::{build_correction_map, correct_distortion, reconstruct};
use crate::error::Result;
use crate::geometry::{GeometryContext, PrismConfig};
use crate::scene::bar_target_scene;
use crate::sim::render_scan;
use crate::spectra::default_band_centers;

/// Modulation depth required to call a bar group resolved.
pub const RESOLVED_MODULATION: f64 = 0.5;

/// Bar widths swept by default, mm, descending.
pub const DEFAULT_BAR_WIDTHS: [f64; 12] =
    [1.0, 0.8, 0.7, 0.6, 0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15];

/// One row of the resolution table.
#[derive(Debug, Clone)]
pub struct ResolutionEntry {
    pub working_height_mm: f64,
    /// Line pitch at this height, mm/pixel.
    pub line_pitch_mm: f64,
    /// Smallest bar width with modulation >= the threshold, mm;
    /// `None` when even the widest bar failed.
    pub min_resolvable_mm: Option<f64>,
    /// Line pairs per mm at the reported size.
    pub line_pairs_per_mm: Option<f64>,
}

/// Geometry at `height`, scaling the line pitch proportionally from the
/// reference profile (ideal optics: pitch grows linearly with height).
pub fn geometry_at_height(reference: &GeometryContext, height_mm: f64, rows: usize) -> Result<GeometryContext> {
    GeometryContext::new(
        height_mm,
        reference.line_resolution_dx * height_mm / reference.working_height,
        rows,
        reference.cols_w,
    )
}

/// Peak-to-trough modulation of a profile: `(max - min) / (max + min)`.
fn modulation(profile: &[f64]) -> f64 {
    let lo = profile.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi + lo <= 0.0 {
        return 0.0;
    }
    (hi - lo) / (hi + lo)
}

/// True when the bar group of width `bar_mm` survives the pipeline at this
/// geometry with modulation at or above the threshold.
pub fn bar_group_resolved(
    bar_mm: f64,
    geom: &GeometryContext,
    prism: &PrismConfig,
) -> Result<bool> {
    // black bars on a white backdrop, like a physical test chart
    let bands = 3usize;
    let centers = default_band_centers(bands);
    let background =
        crate::spectra::SpectralSignature::new("chart_white", vec![0.95; bands], centers.clone())?;
    let dark = crate::spectra::SpectralSignature::new("chart_black", vec![0.02; bands], centers)?;
    let pairs = 6usize;
    // plane wide enough for the widest footprint row
    let plane = (2.0 * geom.working_height, 2.2 * geom.working_height);
    let scene = bar_target_scene(bar_mm, pairs, 0.0, 0.0, 60.0, plane, background.clone(), dark);

    let frames = render_scan(&scene, prism, geom)?;
    let cube = reconstruct(&frames, geom, default_band_centers(bands))?;
    let map = build_correction_map(geom, geom.line_resolution_dx)?;
    let corrected = correct_distortion(&cube, &map)?;
    let grid = corrected.grid.as_ref().expect("corrected cube carries a grid");

    // strongest-contrast band between backdrop and bars
    let dark_sig = &scene.classes[0];
    let band = (0..bands)
        .max_by(|&a, &b| {
            let da = (background.reflectance[a] - dark_sig.reflectance[a]).abs();
            let db = (background.reflectance[b] - dark_sig.reflectance[b]).abs();
            da.total_cmp(&db)
        })
        .unwrap();

    let row = grid.row_of_y(0.0).round() as usize;
    let total_w = 2.0 * bar_mm * pairs as f64;
    let u0 = grid.col_of_x(-total_w / 2.0 + bar_mm).floor().max(0.0) as usize;
    let u1 = (grid.col_of_x(total_w / 2.0 - bar_mm).ceil() as usize).min(grid.cols - 1);
    if u1 <= u0 + 2 {
        return Ok(false); // narrower than the corrected grid can express
    }
    let profile: Vec<f64> = (u0..=u1)
        .filter(|&u| corrected.is_valid(row, u))
        .map(|u| corrected.spectrum(row, u)[band] as f64)
        .collect();
    if profile.len() < 3 {
        return Ok(false);
    }
    Ok(modulation(&profile) >= RESOLVED_MODULATION)
}

/// Sweep bar widths (descending) at one working height; the result is the
/// smallest width still resolved before the first failure.
pub fn smallest_resolved_bar(
    reference: &GeometryContext,
    prism: &PrismConfig,
    height_mm: f64,
    widths_desc: &[f64],
) -> Result<ResolutionEntry> {
    let geom = geometry_at_height(reference, height_mm, 61)?;
    let mut best: Option<f64> = None;
    for &w in widths_desc {
        if bar_group_resolved(w, &geom, prism)? {
            best = Some(w);
        } else {
            break;
        }
    }
    Ok(ResolutionEntry {
        working_height_mm: height_mm,
        line_pitch_mm: geom.line_resolution_dx,
        min_resolvable_mm: best,
        line_pairs_per_mm: best.map(|w| 1.0 / (2.0 * w)),
    })
}

/// Full table over several working heights.
pub fn resolution_table(
    reference: &GeometryContext,
    prism: &PrismConfig,
    heights_mm: &[f64],
) -> Result<Vec<ResolutionEntry>> {
    heights_mm
        .iter()
        .map(|&h| smallest_resolved_bar(reference, prism, h, &DEFAULT_BAR_WIDTHS))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_height_stays_within_twice_the_hardware_figure() {
        let geom = GeometryContext::default_profile();
        let prism = PrismConfig::default_decagon();
        let entry = smallest_resolved_bar(&geom, &prism, 600.0, &DEFAULT_BAR_WIDTHS).unwrap();
        let reported = entry.min_resolvable_mm.expect("some width must resolve");
        // the physical system reports 0.35 mm at 600 mm; the ideal-optics
        // simulator must land within a factor of two of that figure
        assert!(
            (0.35 / 2.0..=0.35 * 2.0).contains(&reported),
            "reported {reported} mm outside [0.175, 0.7]"
        );
    }

    #[test]
    fn lower_heights_resolve_at_least_as_fine() {
        let geom = GeometryContext::default_profile();
        let prism = PrismConfig::default_decagon();
        let low = smallest_resolved_bar(&geom, &prism, 330.0, &DEFAULT_BAR_WIDTHS).unwrap();
        let high = smallest_resolved_bar(&geom, &prism, 600.0, &DEFAULT_BAR_WIDTHS).unwrap();
        let (l, h) = (low.min_resolvable_mm.unwrap(), high.min_resolvable_mm.unwrap());
        assert!(l <= h, "finer pitch at 330 mm ({l}) should beat 600 mm ({h})");
    }
}
