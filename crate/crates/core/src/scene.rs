//! Synthetic scene descriptions: textile-like patches on a backdrop plane.
//!
//! Scenes are defined in metric millimeters on the working plane, with the
//! optical axis at the origin. Objects are flat polygons with a z-order;
//! later (higher z) objects occlude earlier ones, which is what makes the
//! cluttered condition cluttered.

use crate::cube::CorrectedGrid;
use crate::error::{Error, Result};
use crate::spectra::SpectralSignature;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Closed polygon in plane millimeters, vertices in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Scene("polygon needs at least 3 vertices".into()));
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle from center and full side lengths.
    pub fn rectangle(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        let (hw, hh) = (width / 2.0, height / 2.0);
        Self {
            vertices: vec![
                (cx - hw, cy - hh),
                (cx + hw, cy - hh),
                (cx + hw, cy + hh),
                (cx - hw, cy + hh),
            ],
        }
    }

    /// Square rotated by `phi` radians about its center.
    pub fn rotated_square(cx: f64, cy: f64, side: f64, phi: f64) -> Self {
        let h = side / 2.0;
        let corners = [(-h, -h), (h, -h), (h, h), (-h, h)];
        let (s, c) = phi.sin_cos();
        Self {
            vertices: corners
                .iter()
                .map(|&(x, y)| (cx + x * c - y * s, cy + x * s + y * c))
                .collect(),
        }
    }

    /// Regular `n`-gon approximation of a disk.
    pub fn disk(cx: f64, cy: f64, radius: f64, n: usize) -> Self {
        Self {
            vertices: (0..n)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / n as f64;
                    (cx + radius * a.cos(), cy + radius * a.sin())
                })
                .collect(),
        }
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for &(x, y) in &self.vertices {
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        (min_x, min_y, max_x, max_y)
    }

    /// Even-odd ray-crossing containment test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (xi, yi) = v[i];
            let (xj, yj) = v[j];
            if (yi > y) != (yj > y) {
                let x_cross = xi + (y - yi) / (yj - yi) * (xj - xi);
                if x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Signed area (positive for counter-clockwise winding).
    pub fn signed_area(&self) -> f64 {
        let v = &self.vertices;
        let mut a = 0.0;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            a += (v[j].0 + v[i].0) * (v[i].1 - v[j].1);
            j = i;
        }
        a / 2.0
    }

    pub fn centroid(&self) -> (f64, f64) {
        let v = &self.vertices;
        let a = self.signed_area();
        if a.abs() < 1e-12 {
            let n = v.len() as f64;
            let (sx, sy) = v.iter().fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
            return (sx / n, sy / n);
        }
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let cross = v[j].0 * v[i].1 - v[i].0 * v[j].1;
            cx += (v[j].0 + v[i].0) * cross;
            cy += (v[j].1 + v[i].1) * cross;
            j = i;
        }
        (cx / (6.0 * a), cy / (6.0 * a))
    }

    /// Conservative overlap test: true when the bboxes inflated by `gap/2`
    /// each intersect. Used for discrete-scene separation.
    pub fn bbox_overlaps(&self, other: &Polygon, gap: f64) -> bool {
        let (ax0, ay0, ax1, ay1) = self.bbox();
        let (bx0, by0, bx1, by1) = other.bbox();
        let g = gap / 2.0;
        !(ax1 + g < bx0 - g || bx1 + g < ax0 - g || ay1 + g < by0 - g || by1 + g < ay0 - g)
    }

    /// True when any vertex of either polygon lies inside the other. Good
    /// enough to detect the characteristic clutter overlaps.
    pub fn intersects(&self, other: &Polygon) -> bool {
        other.vertices.iter().any(|&(x, y)| self.contains(x, y))
            || self.vertices.iter().any(|&(x, y)| other.contains(x, y))
    }
}

/// One placed object: polygon footprint, class signature index, z-order.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub polygon: Polygon,
    /// Index into the scene's class signature set.
    pub class_index: usize,
    /// Stacking order; higher z occludes lower z.
    pub z_order: u32,
}

/// Scene placement condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Objects placed separately without overlap.
    Discrete,
    /// Objects randomly arranged, overlaps permitted.
    Cluttered,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(SceneKind::Discrete),
            "cluttered" => Ok(SceneKind::Cluttered),
            other => Err(Error::Config(format!("unknown scene kind '{other}'"))),
        }
    }
}

/// Complete synthetic scene: plane extents, backdrop signature, class
/// signatures, placed objects, and the render noise model.
#[derive(Debug, Clone)]
pub struct SceneDescription {
    /// Plane full extents (width, height) in mm, centered on the origin.
    pub plane_size: (f64, f64),
    pub background: SpectralSignature,
    /// Class signature set; objects refer to these by index.
    pub classes: Vec<SpectralSignature>,
    pub objects: Vec<SceneObject>,
    /// Std-dev of additive Gaussian reflectance noise at render time.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SceneDescription {
    pub fn validate(&self) -> Result<()> {
        let n = self.background.bands();
        if self.classes.iter().any(|c| c.bands() != n) {
            return Err(Error::Scene("all signatures must share the band count".into()));
        }
        let (hw, hh) = (self.plane_size.0 / 2.0, self.plane_size.1 / 2.0);
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.class_index >= self.classes.len() {
                return Err(Error::Scene(format!("object {i} references unknown class")));
            }
            let (x0, y0, x1, y1) = obj.polygon.bbox();
            if x0 < -hw - 1e-9 || x1 > hw + 1e-9 || y0 < -hh - 1e-9 || y1 > hh + 1e-9 {
                return Err(Error::Scene(format!("object {i} extends beyond the plane")));
            }
        }
        Ok(())
    }

    pub fn bands(&self) -> usize {
        self.background.bands()
    }

    /// Objects of each class, counted against `classes`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes.len()];
        for obj in &self.objects {
            counts[obj.class_index] += 1;
        }
        counts
    }

    /// Reflectance of the top-most surface at a metric point.
    /// Objects win over the backdrop; higher z wins among objects.
    pub fn signature_at(&self, x: f64, y: f64) -> &SpectralSignature {
        match self.top_object_at(x, y) {
            Some(idx) => &self.classes[self.objects[idx].class_index],
            None => &self.background,
        }
    }

    /// Index (into `objects`) of the top-most object containing the point.
    /// Equal z-orders resolve to the later object, matching "later objects
    /// occlude earlier".
    pub fn top_object_at(&self, x: f64, y: f64) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, obj) in self.objects.iter().enumerate() {
            let (x0, y0, x1, y1) = obj.polygon.bbox();
            if x < x0 || x > x1 || y < y0 || y > y1 {
                continue;
            }
            if obj.polygon.contains(x, y) {
                match best {
                    Some(b) if self.objects[b].z_order > obj.z_order => {}
                    _ => best = Some(i),
                }
            }
        }
        best
    }

    /// Remove an object after a successful pick. Indices of later objects
    /// shift; callers needing stable identity should key on `z_order`,
    /// which is unique per generated object.
    pub fn remove_object(&mut self, index: usize) -> SceneObject {
        self.objects.remove(index)
    }
}

/// Uniform bucket grid over object bboxes for fast point lookups during
/// rendering and rasterization. Queries match [`SceneDescription::top_object_at`].
pub struct SceneIndex<'a> {
    scene: &'a SceneDescription,
    cell: f64,
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl<'a> SceneIndex<'a> {
    pub fn new(scene: &'a SceneDescription) -> Self {
        let (hw, hh) = (scene.plane_size.0 / 2.0, scene.plane_size.1 / 2.0);
        // pad so queries slightly off the plane still land in a bucket row
        let x0 = -hw - 1.0;
        let y0 = -hh - 1.0;
        let cell = 32.0;
        let nx = ((2.0 * hw + 2.0) / cell).ceil().max(1.0) as usize;
        let ny = ((2.0 * hh + 2.0) / cell).ceil().max(1.0) as usize;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (i, obj) in scene.objects.iter().enumerate() {
            let (bx0, by0, bx1, by1) = obj.polygon.bbox();
            let cx0 = (((bx0 - x0) / cell).floor().max(0.0) as usize).min(nx - 1);
            let cx1 = (((bx1 - x0) / cell).floor().max(0.0) as usize).min(nx - 1);
            let cy0 = (((by0 - y0) / cell).floor().max(0.0) as usize).min(ny - 1);
            let cy1 = (((by1 - y0) / cell).floor().max(0.0) as usize).min(ny - 1);
            for gy in cy0..=cy1 {
                for gx in cx0..=cx1 {
                    buckets[gy * nx + gx].push(i as u32);
                }
            }
        }
        Self { scene, cell, x0, y0, nx, ny, buckets }
    }

    pub fn top_object_at(&self, x: f64, y: f64) -> Option<usize> {
        let gx = ((x - self.x0) / self.cell).floor();
        let gy = ((y - self.y0) / self.cell).floor();
        if gx < 0.0 || gy < 0.0 {
            return None;
        }
        let (gx, gy) = (gx as usize, gy as usize);
        if gx >= self.nx || gy >= self.ny {
            return None;
        }
        let mut best: Option<usize> = None;
        for &i in &self.buckets[gy * self.nx + gx] {
            let obj = &self.scene.objects[i as usize];
            if let Some(b) = best {
                // bucket lists ascend by object index, so a strict
                // comparison hands z-order ties to the later object
                if self.scene.objects[b].z_order > obj.z_order {
                    continue;
                }
            }
            let (bx0, by0, bx1, by1) = obj.polygon.bbox();
            if x < bx0 || x > bx1 || y < by0 || y > by1 {
                continue;
            }
            if obj.polygon.contains(x, y) {
                best = Some(i as usize);
            }
        }
        best
    }

    pub fn signature_at(&self, x: f64, y: f64) -> &'a SpectralSignature {
        match self.top_object_at(x, y) {
            Some(idx) => &self.scene.classes[self.scene.objects[idx].class_index],
            None => &self.scene.background,
        }
    }
}

/// Placement parameters for [`generate_scene`].
#[derive(Debug, Clone)]
pub struct PlacementParams {
    /// Side length range of generated patches, mm.
    pub size_range: (f64, f64),
    /// Minimum bbox gap between discrete objects, mm.
    pub min_gap: f64,
    /// Attempts per object before reporting the plane too small.
    pub max_attempts: usize,
}

impl Default for PlacementParams {
    fn default() -> Self {
        Self { size_range: (22.0, 30.0), min_gap: 8.0, max_attempts: 20000 }
    }
}

/// Place `count` patches on the plane, one class per object round-robin
/// over `class_set`, deterministically from `seed`.
///
/// Discrete scenes keep pairwise bbox gaps of at least `min_gap`; cluttered
/// scenes place uniformly at random and keep whatever overlaps occur.
pub fn generate_scene(
    kind: SceneKind,
    background: SpectralSignature,
    class_set: Vec<SpectralSignature>,
    count: usize,
    plane_size: (f64, f64),
    noise_sigma: f64,
    seed: u64,
    params: &PlacementParams,
) -> Result<SceneDescription> {
    if count == 0 {
        return Err(Error::Scene("object count must be at least 1".into()));
    }
    if class_set.is_empty() {
        return Err(Error::Scene("class set must not be empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hw, hh) = (plane_size.0 / 2.0, plane_size.1 / 2.0);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    for i in 0..count {
        let class_index = i % class_set.len();
        let mut placed = false;
        for _attempt in 0..params.max_attempts {
            let side = rng.random_range(params.size_range.0..params.size_range.1);
            let phi = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            // keep the rotated square fully on the plane
            let reach = side / std::f64::consts::SQRT_2;
            if reach >= hw || reach >= hh {
                return Err(Error::Scene("plane too small for the requested patch size".into()));
            }
            let cx = rng.random_range(-(hw - reach)..(hw - reach));
            let cy = rng.random_range(-(hh - reach)..(hh - reach));
            let poly = Polygon::rotated_square(cx, cy, side, phi);
            let clash = kind == SceneKind::Discrete
                && objects.iter().any(|o| o.polygon.bbox_overlaps(&poly, params.min_gap));
            if !clash {
                objects.push(SceneObject { polygon: poly, class_index, z_order: i as u32 + 1 });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Scene(format!(
                "could not place object {i} after {} attempts; plane too small",
                params.max_attempts
            )));
        }
    }
    let scene = SceneDescription {
        plane_size,
        background,
        classes: class_set,
        objects,
        noise_sigma,
        seed,
    };
    scene.validate()?;
    Ok(scene)
}

/// Checkerboard of `square_mm` squares tiling the plane, alternating the
/// two given signatures. Used by the distortion round-trip checks.
pub fn checkerboard_scene(
    square_mm: f64,
    plane_size: (f64, f64),
    background: SpectralSignature,
    light: SpectralSignature,
    dark: SpectralSignature,
) -> SceneDescription {
    let (hw, hh) = (plane_size.0 / 2.0, plane_size.1 / 2.0);
    let cols = (plane_size.0 / square_mm).floor() as i64;
    let rows = (plane_size.1 / square_mm).floor() as i64;
    let mut objects = Vec::new();
    let mut z = 1u32;
    for r in 0..rows {
        for c in 0..cols {
            let class_index = ((r + c) % 2) as usize;
            let x0 = -hw + c as f64 * square_mm;
            let y0 = -hh + r as f64 * square_mm;
            objects.push(SceneObject {
                polygon: Polygon::rectangle(
                    x0 + square_mm / 2.0,
                    y0 + square_mm / 2.0,
                    square_mm,
                    square_mm,
                ),
                class_index,
                z_order: z,
            });
            z += 1;
        }
    }
    SceneDescription {
        plane_size,
        background,
        classes: vec![light, dark],
        objects,
        noise_sigma: 0.0,
        seed: 0,
    }
}

/// Vertical bar group: `pairs` line pairs of bar width `bar_mm` (period
/// `2*bar_mm`), centered at `(cx, cy)`, `height_mm` tall. Bars take the
/// `dark` class over the backdrop.
pub fn bar_target_scene(
    bar_mm: f64,
    pairs: usize,
    cx: f64,
    cy: f64,
    height_mm: f64,
    plane_size: (f64, f64),
    background: SpectralSignature,
    dark: SpectralSignature,
) -> SceneDescription {
    let total_w = 2.0 * bar_mm * pairs as f64;
    let mut objects = Vec::new();
    for p in 0..pairs {
        let x0 = cx - total_w / 2.0 + 2.0 * bar_mm * p as f64;
        objects.push(SceneObject {
            polygon: Polygon::rectangle(x0 + bar_mm / 2.0, cy, bar_mm, height_mm),
            class_index: 0,
            z_order: p as u32 + 1,
        });
    }
    SceneDescription {
        plane_size,
        background,
        classes: vec![dark],
        objects,
        noise_sigma: 0.0,
        seed: 0,
    }
}

/// Ground-truth raster of a scene on a corrected metric grid.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub grid: CorrectedGrid,
    /// Per-pixel class: 0 = background, `k` = class index `k - 1`.
    pub class_map: Vec<u16>,
    /// Per-pixel instance: 0 = background, `k` = object index `k - 1`.
    pub instance_map: Vec<u32>,
}

impl GroundTruth {
    pub fn class_at(&self, row: usize, col: usize) -> u16 {
        self.class_map[row * self.grid.cols + col]
    }
}

/// Rasterize the z-ordered scene onto the corrected uniform grid by pixel
/// center sampling; background is class 0.
pub fn ground_truth_label_map(scene: &SceneDescription, grid: &CorrectedGrid) -> GroundTruth {
    let index = SceneIndex::new(scene);
    let mut class_map = vec![0u16; grid.rows * grid.cols];
    let mut instance_map = vec![0u32; grid.rows * grid.cols];
    for v in 0..grid.rows {
        let y = grid.y_of_row(v as f64);
        for u in 0..grid.cols {
            let x = grid.x_of_col(u as f64);
            if let Some(idx) = index.top_object_at(x, y) {
                class_map[v * grid.cols + u] = scene.objects[idx].class_index as u16 + 1;
                instance_map[v * grid.cols + u] = idx as u32 + 1;
            }
        }
    }
    GroundTruth { grid: grid.clone(), class_map, instance_map }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{builtin_background, builtin_class_set};

    fn small_classes() -> (SpectralSignature, Vec<SpectralSignature>) {
        (builtin_background(8), builtin_class_set(8))
    }

    #[test]
    fn polygon_contains_and_area() {
        let p = Polygon::rectangle(0.0, 0.0, 10.0, 20.0);
        assert!(p.contains(0.0, 0.0));
        assert!(p.contains(4.9, 9.9));
        assert!(!p.contains(5.1, 0.0));
        assert!((p.signed_area().abs() - 200.0).abs() < 1e-9);
        let (cx, cy) = p.centroid();
        assert!(cx.abs() < 1e-9 && cy.abs() < 1e-9);
    }

    #[test]
    fn rotated_square_area_preserved() {
        let p = Polygon::rotated_square(5.0, -3.0, 12.0, 0.7);
        assert!((p.signed_area().abs() - 144.0).abs() < 1e-9);
        let (cx, cy) = p.centroid();
        assert!((cx - 5.0).abs() < 1e-9 && (cy + 3.0).abs() < 1e-9);
    }

    #[test]
    fn discrete_scene_disjoint_one_class_each() {
        let (bg, classes) = small_classes();
        let scene = generate_scene(
            SceneKind::Discrete,
            bg,
            classes,
            4,
            (240.0, 400.0),
            0.0,
            7,
            &PlacementParams::default(),
        )
        .unwrap();
        assert_eq!(scene.objects.len(), 4);
        assert_eq!(scene.class_counts(), vec![1, 1, 1, 1]);
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert!(
                    !scene.objects[i].polygon.intersects(&scene.objects[j].polygon),
                    "objects {i} and {j} overlap in a discrete scene"
                );
            }
        }
    }

    #[test]
    fn cluttered_scene_overlaps_when_crowded() {
        let (bg, classes) = small_classes();
        let scene = generate_scene(
            SceneKind::Cluttered,
            bg,
            classes,
            8,
            (120.0, 120.0),
            0.0,
            7,
            &PlacementParams { size_range: (40.0, 50.0), ..Default::default() },
        )
        .unwrap();
        let mut overlapping = 0;
        for i in 0..scene.objects.len() {
            for j in (i + 1)..scene.objects.len() {
                if scene.objects[i].polygon.intersects(&scene.objects[j].polygon) {
                    overlapping += 1;
                }
            }
        }
        assert!(overlapping >= 1, "expected at least one overlapping pair");
    }

    #[test]
    fn same_seed_same_scene() {
        let (bg, classes) = small_classes();
        let mk = || {
            generate_scene(
                SceneKind::Cluttered,
                bg.clone(),
                classes.clone(),
                6,
                (240.0, 400.0),
                0.01,
                42,
                &PlacementParams::default(),
            )
            .unwrap()
        };
        let a = mk();
        let b = mk();
        assert_eq!(a.objects.len(), b.objects.len());
        for (x, y) in a.objects.iter().zip(&b.objects) {
            assert_eq!(x.polygon.vertices, y.polygon.vertices);
            assert_eq!(x.class_index, y.class_index);
        }
    }

    #[test]
    fn discrete_placement_fails_on_tiny_plane() {
        let (bg, classes) = small_classes();
        let err = generate_scene(
            SceneKind::Discrete,
            bg,
            classes,
            30,
            (100.0, 100.0),
            0.0,
            1,
            &PlacementParams { max_attempts: 200, ..Default::default() },
        );
        assert!(err.is_err());
    }

    #[test]
    fn z_order_decides_overlap_winner() {
        let (bg, classes) = small_classes();
        let scene = SceneDescription {
            plane_size: (100.0, 100.0),
            background: bg,
            classes,
            objects: vec![
                SceneObject {
                    polygon: Polygon::rectangle(0.0, 0.0, 40.0, 40.0),
                    class_index: 0,
                    z_order: 1,
                },
                SceneObject {
                    polygon: Polygon::rectangle(10.0, 0.0, 40.0, 40.0),
                    class_index: 1,
                    z_order: 2,
                },
            ],
            noise_sigma: 0.0,
            seed: 0,
        };
        // overlap region belongs to the later (higher z) object
        assert_eq!(scene.top_object_at(5.0, 0.0), Some(1));
        // exclusive region of the first object
        assert_eq!(scene.top_object_at(-15.0, 0.0), Some(0));
        assert_eq!(scene.top_object_at(45.0, 45.0), None);

        // ties go to the later object, in both lookup paths
        let mut tied = scene.clone();
        tied.objects[1].z_order = 1;
        assert_eq!(tied.top_object_at(5.0, 0.0), Some(1));
        let index = SceneIndex::new(&tied);
        assert_eq!(index.top_object_at(5.0, 0.0), Some(1));
    }

    #[test]
    fn ground_truth_empty_and_full() {
        let (bg, classes) = small_classes();
        let grid = CorrectedGrid::new(1.0, -20.0, 20.0, 41, 41);
        let empty = SceneDescription {
            plane_size: (100.0, 100.0),
            background: bg.clone(),
            classes: classes.clone(),
            objects: vec![],
            noise_sigma: 0.0,
            seed: 0,
        };
        let gt = ground_truth_label_map(&empty, &grid);
        assert!(gt.class_map.iter().all(|&c| c == 0));

        let full = SceneDescription {
            plane_size: (100.0, 100.0),
            background: bg,
            classes,
            objects: vec![SceneObject {
                polygon: Polygon::rectangle(0.0, 0.0, 100.0, 100.0),
                class_index: 2,
                z_order: 1,
            }],
            noise_sigma: 0.0,
            seed: 0,
        };
        let gt = ground_truth_label_map(&full, &grid);
        assert!(gt.class_map.iter().all(|&c| c == 3));
    }
}
