//! Stage-two perception: background segmentation, pixel-to-object label
//! aggregation with PCA outlier rejection, and suction point extraction.

use crate::classifier::{PixelLabelMap, BACKGROUND_LABEL};
use crate::cube::HyperspectralCube;
use crate::error::{Error, Result};
use crate::mnf::MnfModel;
use crate::spectra::{spectral_angle_f32, SpectralSignature};
use nalgebra::{DMatrix, SymmetricEigen};

/// Binary instance mask stored over its bounding box.
#[derive(Debug, Clone)]
pub struct SegmentationMask {
    pub instance_id: usize,
    /// Full label-map dimensions this mask belongs to.
    pub map_rows: usize,
    pub map_cols: usize,
    /// Inclusive (min_row, min_col, max_row, max_col).
    pub bbox: (usize, usize, usize, usize),
    bits: Vec<bool>,
}

impl SegmentationMask {
    pub fn from_pixels(
        instance_id: usize,
        map_rows: usize,
        map_cols: usize,
        pixels: &[(usize, usize)],
    ) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Detection("mask needs at least one pixel".into()));
        }
        let min_r = pixels.iter().map(|p| p.0).min().unwrap();
        let max_r = pixels.iter().map(|p| p.0).max().unwrap();
        let min_c = pixels.iter().map(|p| p.1).min().unwrap();
        let max_c = pixels.iter().map(|p| p.1).max().unwrap();
        let (bh, bw) = (max_r - min_r + 1, max_c - min_c + 1);
        let mut bits = vec![false; bh * bw];
        for &(r, c) in pixels {
            bits[(r - min_r) * bw + (c - min_c)] = true;
        }
        Ok(Self { instance_id, map_rows, map_cols, bbox: (min_r, min_c, max_r, max_c), bits })
    }

    pub fn bbox_width(&self) -> usize {
        self.bbox.3 - self.bbox.1 + 1
    }

    pub fn bbox_height(&self) -> usize {
        self.bbox.2 - self.bbox.0 + 1
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        let (r0, c0, r1, c1) = self.bbox;
        if row < r0 || row > r1 || col < c0 || col > c1 {
            return false;
        }
        self.bits[(row - r0) * self.bbox_width() + (col - c0)]
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn iter_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (r0, c0, _, _) = self.bbox;
        let bw = self.bbox_width();
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (r0 + i / bw, c0 + i % bw))
    }

    /// Mask centroid in fractional (row, col).
    pub fn centroid(&self) -> (f64, f64) {
        let mut sr = 0.0;
        let mut sc = 0.0;
        let mut n = 0.0;
        for (r, c) in self.iter_pixels() {
            sr += r as f64;
            sc += c as f64;
            n += 1.0;
        }
        (sr / n, sc / n)
    }
}

/// Detection-stage knobs.
#[derive(Debug, Clone)]
pub struct DetectionParams {
    /// Spectral angle threshold against the backdrop, radians.
    pub background_angle_threshold: f64,
    /// Minimum connected-component area in pixels.
    pub min_component_area: usize,
    /// Principal components kept by the aggregation outlier filter.
    pub pca_components: usize,
    /// Pixels above this reconstruction-error percentile are discarded.
    pub outlier_percentile: f64,
    /// Masks smaller than this vote as class unknown.
    pub min_votable_area: usize,
    /// Suction points requested per object.
    pub suction_count: usize,
    /// Suction cup radius, mm; sets point separation and clearance units.
    pub suction_cup_radius_mm: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            background_angle_threshold: 0.08,
            min_component_area: 25,
            pca_components: 3,
            outlier_percentile: 0.95,
            min_votable_area: 5,
            suction_count: 5,
            suction_cup_radius_mm: 12.0,
        }
    }
}

/// Split a corrected cube into connected foreground instances.
///
/// A pixel is foreground when its spectral angle to the backdrop signature
/// exceeds the threshold; 4-connected components above the minimum area
/// become instances, in row-major discovery order. An empty result means
/// no objects remain in view.
pub fn segment_objects(
    cube: &HyperspectralCube,
    background: &SpectralSignature,
    params: &DetectionParams,
) -> Result<Vec<SegmentationMask>> {
    if !cube.corrected {
        return Err(Error::Detection("segmentation expects a corrected cube".into()));
    }
    if background.bands() != cube.bands {
        return Err(Error::Detection(format!(
            "backdrop signature has {} bands, cube has {}",
            background.bands(),
            cube.bands
        )));
    }
    let (rows, cols) = (cube.rows, cube.cols);
    let mut fg = vec![false; rows * cols];
    use rayon::prelude::*;
    fg.par_chunks_mut(cols).enumerate().for_each(|(v, row)| {
        for (u, cell) in row.iter_mut().enumerate() {
            if cube.is_valid(v, u) {
                let ang = spectral_angle_f32(cube.spectrum(v, u), &background.reflectance);
                *cell = ang > params.background_angle_threshold;
            }
        }
    });

    // 4-connected flood fill
    let mut seen = vec![false; rows * cols];
    let mut masks = Vec::new();
    let mut stack = Vec::new();
    for start in 0..rows * cols {
        if !fg[start] || seen[start] {
            continue;
        }
        let mut pixels = Vec::new();
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (v, u) = (i / cols, i % cols);
            pixels.push((v, u));
            if v > 0 && fg[i - cols] && !seen[i - cols] {
                seen[i - cols] = true;
                stack.push(i - cols);
            }
            if v + 1 < rows && fg[i + cols] && !seen[i + cols] {
                seen[i + cols] = true;
                stack.push(i + cols);
            }
            if u > 0 && fg[i - 1] && !seen[i - 1] {
                seen[i - 1] = true;
                stack.push(i - 1);
            }
            if u + 1 < cols && fg[i + 1] && !seen[i + 1] {
                seen[i + 1] = true;
                stack.push(i + 1);
            }
        }
        if pixels.len() >= params.min_component_area {
            let id = masks.len();
            masks.push(SegmentationMask::from_pixels(id, rows, cols, &pixels)?);
        }
    }
    Ok(masks)
}

/// Ranked suction point on the corrected grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuctionPoint {
    pub row: usize,
    pub col: usize,
    /// Distance to the mask boundary, mm.
    pub clearance_mm: f64,
}

/// Object-level detection record.
#[derive(Debug, Clone)]
pub struct DetectedObject {
    pub instance_id: usize,
    /// Voted class, or `None` when the mask is too small to vote.
    pub class_index: Option<usize>,
    /// Fraction of surviving pixels agreeing with the voted class.
    pub purity: f64,
    /// Inclusive (min_row, min_col, max_row, max_col).
    pub bbox: (usize, usize, usize, usize),
    /// Fractional (row, col) mask centroid.
    pub centroid: (f64, f64),
    pub suction_points: Vec<SuctionPoint>,
}

/// Majority vote over a mask's pixel labels after PCA outlier rejection.
///
/// The mask's MNF-reduced spectra are projected onto their leading
/// principal components; pixels whose reconstruction error lands above the
/// configured percentile are dropped before voting. Ties break toward the
/// higher summed confidence, then the lower class id.
pub fn aggregate_objects(
    labels: &PixelLabelMap,
    masks: &[SegmentationMask],
    cube: &HyperspectralCube,
    mnf: &MnfModel,
    retained_k: usize,
    grid_pitch_mm: f64,
    params: &DetectionParams,
) -> Result<Vec<DetectedObject>> {
    if labels.rows != cube.rows || labels.cols != cube.cols {
        return Err(Error::Detection("label map does not match the cube".into()));
    }
    use rayon::prelude::*;
    masks
        .par_iter()
        .map(|mask| {
            let pixels: Vec<(usize, usize)> = mask.iter_pixels().collect();
            let centroid = mask.centroid();
            let suction =
                suction_points(mask, grid_pitch_mm, params.suction_count, params.suction_cup_radius_mm)?;
            if pixels.len() < params.min_votable_area {
                return Ok(DetectedObject {
                    instance_id: mask.instance_id,
                    class_index: None,
                    purity: 0.0,
                    bbox: mask.bbox,
                    centroid,
                    suction_points: suction,
                });
            }

            let reduced: Vec<Vec<f64>> = pixels
                .iter()
                .map(|&(v, u)| mnf.project_f32(cube.spectrum(v, u), retained_k))
                .collect::<Result<_>>()?;
            let keep = pca_inlier_filter(&reduced, params.pca_components, params.outlier_percentile);

            let n_classes = masks_class_count(labels);
            let mut votes = vec![0usize; n_classes];
            let mut conf_sum = vec![0f64; n_classes];
            let mut survivors = 0usize;
            for (pi, &(v, u)) in pixels.iter().enumerate() {
                if !keep[pi] {
                    continue;
                }
                let lab = labels.label(v, u);
                if lab == BACKGROUND_LABEL {
                    continue;
                }
                survivors += 1;
                votes[lab as usize] += 1;
                conf_sum[lab as usize] += labels.confidence[v * labels.cols + u] as f64;
            }
            if survivors == 0 {
                return Ok(DetectedObject {
                    instance_id: mask.instance_id,
                    class_index: None,
                    purity: 0.0,
                    bbox: mask.bbox,
                    centroid,
                    suction_points: suction,
                });
            }
            let mut best = 0usize;
            for c in 1..n_classes {
                if votes[c] > votes[best]
                    || (votes[c] == votes[best] && conf_sum[c] > conf_sum[best])
                {
                    best = c;
                }
            }
            Ok(DetectedObject {
                instance_id: mask.instance_id,
                class_index: Some(best),
                purity: votes[best] as f64 / survivors as f64,
                bbox: mask.bbox,
                centroid,
                suction_points: suction,
            })
        })
        .collect()
}

/// Highest class id present in the map plus one (background excluded).
fn masks_class_count(labels: &PixelLabelMap) -> usize {
    labels
        .labels
        .iter()
        .filter(|&&l| l != BACKGROUND_LABEL)
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(1)
        .max(1)
}

/// Keep-flags after projecting onto the first `p` principal components and
/// discarding reconstruction errors above the `percentile` rank.
fn pca_inlier_filter(reduced: &[Vec<f64>], p: usize, percentile: f64) -> Vec<bool> {
    let n = reduced.len();
    let k = reduced[0].len();
    let p = p.min(k).min(n.saturating_sub(1)).max(1);
    // mean
    let mut mean = vec![0.0; k];
    for r in reduced {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    // covariance
    let mut cov = DMatrix::zeros(k, k);
    for r in reduced {
        for i in 0..k {
            let di = r[i] - mean[i];
            for j in i..k {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    let basis: Vec<Vec<f64>> = order[..p]
        .iter()
        .map(|&c| eig.eigenvectors.column(c).iter().copied().collect())
        .collect();

    let errors: Vec<f64> = reduced
        .iter()
        .map(|r| {
            let centered: Vec<f64> = r.iter().zip(&mean).map(|(&x, &m)| x - m).collect();
            let mut residual: f64 = centered.iter().map(|&x| x * x).sum();
            for b in &basis {
                let proj: f64 = b.iter().zip(&centered).map(|(&a, &c)| a * c).sum();
                residual -= proj * proj;
            }
            residual.max(0.0)
        })
        .collect();
    let mut sorted = errors.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((percentile * n as f64).ceil() as usize).clamp(1, n) - 1;
    let threshold = sorted[rank];
    errors.iter().map(|&e| e <= threshold).collect()
}

/// Ranked suction points for one mask.
///
/// Rank 1 is the mask centroid when it falls inside the mask, otherwise
/// the interior pixel nearest it. Later ranks greedily maximize boundary
/// clearance subject to a pairwise separation of one suction cup radius.
/// Every point carries its clearance (distance transform value) in mm.
pub fn suction_points(
    mask: &SegmentationMask,
    grid_pitch_mm: f64,
    count: usize,
    cup_radius_mm: f64,
) -> Result<Vec<SuctionPoint>> {
    if count == 0 {
        return Err(Error::Detection("suction point count must be >= 1".into()));
    }
    if mask.area() == 0 {
        return Err(Error::Detection("mask is empty".into()));
    }
    let dist = distance_transform(mask);
    let (r0, c0, _, _) = mask.bbox;
    let bw = mask.bbox_width();
    let bh = mask.bbox_height();
    let d_at = |r: usize, c: usize| -> f64 {
        // padded grid offset of +1 in both axes
        dist[(r - r0 + 1) * (bw + 2) + (c - c0 + 1)]
    };

    let (cen_r, cen_c) = mask.centroid();
    let rounded = (cen_r.round() as usize, cen_c.round() as usize);
    let primary = if mask.contains(rounded.0, rounded.1) {
        rounded
    } else {
        // interior pixel nearest the centroid; ties resolve row-major
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (r, c) in mask.iter_pixels() {
            let d = (r as f64 - cen_r).powi(2) + (c as f64 - cen_c).powi(2);
            if d < best_d {
                best_d = d;
                best = Some((r, c));
            }
        }
        best.expect("mask is nonempty")
    };
    let mut points = vec![SuctionPoint {
        row: primary.0,
        col: primary.1,
        clearance_mm: d_at(primary.0, primary.1) * grid_pitch_mm,
    }];

    if count > 1 {
        // candidates by decreasing clearance, row-major on ties
        let mut candidates: Vec<(usize, usize)> = Vec::with_capacity(bh * bw);
        for (r, c) in mask.iter_pixels() {
            candidates.push((r, c));
        }
        candidates.sort_by(|&(ra, ca), &(rb, cb)| {
            d_at(rb, cb)
                .total_cmp(&d_at(ra, ca))
                .then(ra.cmp(&rb))
                .then(ca.cmp(&cb))
        });
        let sep_px = cup_radius_mm / grid_pitch_mm;
        for (r, c) in candidates {
            if points.len() >= count {
                break;
            }
            let far_enough = points.iter().all(|p| {
                let dr = r as f64 - p.row as f64;
                let dc = c as f64 - p.col as f64;
                (dr * dr + dc * dc).sqrt() >= sep_px
            });
            if far_enough {
                points.push(SuctionPoint { row: r, col: c, clearance_mm: d_at(r, c) * grid_pitch_mm });
            }
        }
    }
    Ok(points)
}

/// Exact Euclidean distance (in pixels) from each mask pixel to the
/// nearest background pixel, on the bbox padded by one background ring.
/// Two-pass 1-D lower-envelope squared distance transform.
fn distance_transform(mask: &SegmentationMask) -> Vec<f64> {
    let bw = mask.bbox_width() + 2;
    let bh = mask.bbox_height() + 2;
    let (r0, c0, _, _) = mask.bbox;
    const INF: f64 = 1e18;
    let mut f = vec![0.0f64; bh * bw];
    for r in 0..bh {
        for c in 0..bw {
            let inside = r >= 1
                && c >= 1
                && r - 1 < mask.bbox_height()
                && c - 1 < mask.bbox_width()
                && mask.contains(r0 + r - 1, c0 + c - 1);
            f[r * bw + c] = if inside { INF } else { 0.0 };
        }
    }
    // columns then rows
    let mut tmp = vec![0.0f64; bh * bw];
    let mut col_buf = vec![0.0f64; bh];
    let mut out_buf = vec![0.0f64; bh];
    for c in 0..bw {
        for r in 0..bh {
            col_buf[r] = f[r * bw + c];
        }
        edt_1d(&col_buf, &mut out_buf);
        for r in 0..bh {
            tmp[r * bw + c] = out_buf[r];
        }
    }
    let mut row_buf = vec![0.0f64; bw];
    let mut out_row = vec![0.0f64; bw];
    let mut out = vec![0.0f64; bh * bw];
    for r in 0..bh {
        row_buf.copy_from_slice(&tmp[r * bw..(r + 1) * bw]);
        edt_1d(&row_buf, &mut out_row);
        for c in 0..bw {
            out[r * bw + c] = out_row[c].sqrt();
        }
    }
    out
}

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas).
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}
