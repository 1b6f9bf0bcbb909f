//! Minimal raster painting: detection overlays and campaign bar charts.

use crate::cube::RgbImage;
use crate::detect::DetectedObject;
use crate::error::Result;
use std::path::Path;

/// 8-bit RGB canvas.
pub struct Canvas {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u8>,
}

/// Distinct overlay colors per class index.
pub const CLASS_COLORS: [[u8; 3]; 8] = [
    [230, 60, 60],
    [60, 200, 80],
    [70, 110, 240],
    [240, 200, 50],
    [200, 80, 220],
    [60, 210, 210],
    [240, 140, 40],
    [150, 150, 150],
];

/// 3x5 digit glyphs, one bit per cell, rows top to bottom.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

impl Canvas {
    pub fn new(rows: usize, cols: usize, fill: [u8; 3]) -> Self {
        let mut data = vec![0u8; rows * cols * 3];
        for px in data.chunks_mut(3) {
            px.copy_from_slice(&fill);
        }
        Self { rows, cols, data }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let data = img
            .pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self { rows: img.rows, cols: img.cols, data }
    }

    pub fn set(&mut self, row: i64, col: i64, color: [u8; 3]) {
        if row < 0 || col < 0 || row as usize >= self.rows || col as usize >= self.cols {
            return;
        }
        let i = (row as usize * self.cols + col as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    pub fn rect_outline(&mut self, r0: i64, c0: i64, r1: i64, c1: i64, color: [u8; 3]) {
        for c in c0..=c1 {
            self.set(r0, c, color);
            self.set(r1, c, color);
        }
        for r in r0..=r1 {
            self.set(r, c0, color);
            self.set(r, c1, color);
        }
    }

    pub fn rect_fill(&mut self, r0: i64, c0: i64, r1: i64, c1: i64, color: [u8; 3]) {
        for r in r0..=r1 {
            for c in c0..=c1 {
                self.set(r, c, color);
            }
        }
    }

    pub fn disk(&mut self, row: i64, col: i64, radius: i64, color: [u8; 3]) {
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                if dr * dr + dc * dc <= radius * radius {
                    self.set(row + dr, col + dc, color);
                }
            }
        }
    }

    pub fn cross(&mut self, row: i64, col: i64, arm: i64, color: [u8; 3]) {
        for d in -arm..=arm {
            self.set(row + d, col, color);
            self.set(row, col + d, color);
        }
    }

    /// Stamp an unsigned number with 3x5 digits at `scale`.
    pub fn digits(&mut self, row: i64, col: i64, value: usize, scale: i64, color: [u8; 3]) {
        let text = value.to_string();
        let mut x = col;
        for ch in text.bytes() {
            let glyph = DIGITS[(ch - b'0') as usize];
            for (gr, bits) in glyph.iter().enumerate() {
                for gc in 0..3 {
                    if bits & (0b100 >> gc) != 0 {
                        self.rect_fill(
                            row + gr as i64 * scale,
                            x + gc as i64 * scale,
                            row + (gr as i64 + 1) * scale - 1,
                            x + (gc as i64 + 1) * scale - 1,
                            color,
                        );
                    }
                }
            }
            x += 4 * scale;
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let w = std::io::BufWriter::new(file);
        let mut enc = png::Encoder::new(w, self.cols as u32, self.rows as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| crate::error::Error::Format(format!("png: {e}")))?;
        writer
            .write_image_data(&self.data)
            .map_err(|e| crate::error::Error::Format(format!("png: {e}")))?;
        writer
            .finish()
            .map_err(|e| crate::error::Error::Format(format!("png: {e}")))?;
        Ok(())
    }
}

/// Detection overlay: pseudo-RGB base, class-colored boxes, centroid
/// crosses, suction point dots, instance ids stamped at the box corner.
pub fn detection_overlay(base: &RgbImage, objects: &[DetectedObject]) -> Canvas {
    let mut canvas = Canvas::from_rgb(base);
    for obj in objects {
        let color = match obj.class_index {
            Some(c) => CLASS_COLORS[c % CLASS_COLORS.len()],
            None => [255, 255, 255],
        };
        let (r0, c0, r1, c1) = obj.bbox;
        canvas.rect_outline(r0 as i64 - 1, c0 as i64 - 1, r1 as i64 + 1, c1 as i64 + 1, color);
        canvas.cross(obj.centroid.0.round() as i64, obj.centroid.1.round() as i64, 3, color);
        for (rank, p) in obj.suction_points.iter().enumerate() {
            let radius = if rank == 0 { 3 } else { 2 };
            canvas.disk(p.row as i64, p.col as i64, radius, [255, 255, 255]);
            canvas.disk(p.row as i64, p.col as i64, radius - 1, color);
        }
        canvas.digits(r0 as i64 - 8, c0 as i64, obj.instance_id, 1, color);
    }
    canvas
}

/// Grouped bar chart of per-class success means with +/- one std whiskers.
/// One group per class, one bar per condition.
pub fn success_bar_chart(
    class_names: &[String],
    conditions: &[String],
    // `means[condition][class]`, `stds[condition][class]`, in [0, 1]
    means: &[Vec<f64>],
    stds: &[Vec<f64>],
) -> Canvas {
    let (rows, cols) = (360usize, 120 + class_names.len() * conditions.len().max(1) * 46);
    let mut canvas = Canvas::new(rows, cols, [255, 255, 255]);
    let plot_top = 30i64;
    let plot_bottom = rows as i64 - 50;
    let plot_left = 60i64;
    let axis = [40u8, 40, 40];
    // axes and 0/50/100% gridlines
    for frac in [0.0, 0.5, 1.0] {
        let y = plot_bottom - ((plot_bottom - plot_top) as f64 * frac) as i64;
        for c in plot_left..cols as i64 - 10 {
            canvas.set(y, c, if frac == 0.0 { axis } else { [210, 210, 210] });
        }
        canvas.digits(y - 3, 18, (frac * 100.0) as usize, 1, axis);
    }
    for r in plot_top..=plot_bottom {
        canvas.set(r, plot_left, axis);
    }

    let bar_w = 28i64;
    let mut x = plot_left + 20;
    for (ci, _class) in class_names.iter().enumerate() {
        for (di, _cond) in conditions.iter().enumerate() {
            let mean = means[di][ci].clamp(0.0, 1.0);
            let std = stds[di][ci].max(0.0);
            let color = CLASS_COLORS[ci % CLASS_COLORS.len()];
            let shade = if di == 0 {
                color
            } else {
                [color[0] / 2 + 70, color[1] / 2 + 70, color[2] / 2 + 70]
            };
            let h = ((plot_bottom - plot_top) as f64 * mean) as i64;
            canvas.rect_fill(plot_bottom - h, x, plot_bottom - 1, x + bar_w, shade);
            canvas.rect_outline(plot_bottom - h, x, plot_bottom - 1, x + bar_w, axis);
            // whiskers at mean +/- std
            let y_lo = plot_bottom - ((plot_bottom - plot_top) as f64 * (mean - std).clamp(0.0, 1.0)) as i64;
            let y_hi = plot_bottom - ((plot_bottom - plot_top) as f64 * (mean + std).clamp(0.0, 1.0)) as i64;
            let cx = x + bar_w / 2;
            for y in y_hi..=y_lo {
                canvas.set(y, cx, axis);
            }
            for d in -4..=4 {
                canvas.set(y_hi, cx + d, axis);
                canvas.set(y_lo, cx + d, axis);
            }
            x += bar_w + 6;
        }
        canvas.digits(plot_bottom + 8, x - (bar_w + 6) * conditions.len() as i64 / 2 - 8, ci, 2, axis);
        x += 12;
    }
    canvas
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canvas_paints_in_bounds_only() {
        let mut c = Canvas::new(10, 10, [0, 0, 0]);
        c.set(-1, 5, [255, 0, 0]);
        c.set(5, 100, [255, 0, 0]);
        assert!(c.data.iter().all(|&b| b == 0));
        c.disk(5, 5, 2, [9, 9, 9]);
        assert_eq!(&c.data[(5 * 10 + 5) * 3..(5 * 10 + 5) * 3 + 3], &[9, 9, 9]);
    }

    #[test]
    fn chart_has_expected_size() {
        let names = vec!["a".to_string(), "b".to_string()];
        let conds = vec!["x".to_string()];
        let chart = success_bar_chart(&names, &conds, &[vec![1.0, 0.5]], &[vec![0.0, 0.1]]);
        assert_eq!(chart.rows, 360);
        assert!(chart.cols > 100);
    }
}
