//! Detection reports: one structured text record per detected object,
//! prefixed by the corrected-grid block the planner needs to convert
//! pixel coordinates to workspace millimeters.

use crate::cube::CorrectedGrid;
use crate::detect::{DetectedObject, SuctionPoint};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub grid: CorrectedGrid,
    pub class_names: Vec<String>,
    pub objects: Vec<DetectedObject>,
}

pub fn write_report(report: &DetectionReport, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# detection report");
    let g = &report.grid;
    let _ = writeln!(out, "grid pitch mm = {}", g.pitch);
    let _ = writeln!(out, "grid x min mm = {}", g.x_min);
    let _ = writeln!(out, "grid y max mm = {}", g.y_max);
    let _ = writeln!(out, "grid cols = {}", g.cols);
    let _ = writeln!(out, "grid rows = {}", g.rows);
    let _ = writeln!(out, "classes = {}", report.class_names.join(","));
    let _ = writeln!(out, "objects = {}", report.objects.len());
    for obj in &report.objects {
        let _ = writeln!(out);
        let _ = writeln!(out, "object {}", obj.instance_id);
        match obj.class_index {
            Some(c) => {
                let name = report.class_names.get(c).map(String::as_str).unwrap_or("?");
                let _ = writeln!(out, "class = {c} {name}");
            }
            None => {
                let _ = writeln!(out, "class = unknown");
            }
        }
        let _ = writeln!(out, "purity = {}", obj.purity);
        let (r0, c0, r1, c1) = obj.bbox;
        let _ = writeln!(out, "bbox = {r0} {c0} {r1} {c1}");
        let _ = writeln!(out, "centroid = {} {}", obj.centroid.0, obj.centroid.1);
        for p in &obj.suction_points {
            let _ = writeln!(out, "suction = {} {} {}", p.row, p.col, p.clearance_mm);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<DetectionReport> {
    let text = fs::read_to_string(path)?;
    let mut grid_pitch = None;
    let mut grid_x = None;
    let mut grid_y = None;
    let mut grid_cols = None;
    let mut grid_rows = None;
    let mut class_names: Vec<String> = Vec::new();
    let mut objects: Vec<DetectedObject> = Vec::new();
    let mut current: Option<DetectedObject> = None;

    let bad = |line: &str| Error::Format(format!("bad report line: '{line}'"));
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(id) = line.strip_prefix("object ") {
            if let Some(obj) = current.take() {
                objects.push(obj);
            }
            current = Some(DetectedObject {
                instance_id: id.trim().parse().map_err(|_| bad(line))?,
                class_index: None,
                purity: 0.0,
                bbox: (0, 0, 0, 0),
                centroid: (0.0, 0.0),
                suction_points: vec![],
            });
            continue;
        }
        let Some((key, val)) = line.split_once('=') else { continue };
        let (key, val) = (key.trim(), val.trim());
        match (&mut current, key) {
            (None, "grid pitch mm") => grid_pitch = Some(val.parse().map_err(|_| bad(line))?),
            (None, "grid x min mm") => grid_x = Some(val.parse().map_err(|_| bad(line))?),
            (None, "grid y max mm") => grid_y = Some(val.parse().map_err(|_| bad(line))?),
            (None, "grid cols") => grid_cols = Some(val.parse().map_err(|_| bad(line))?),
            (None, "grid rows") => grid_rows = Some(val.parse().map_err(|_| bad(line))?),
            (None, "classes") => {
                class_names = val.split(',').map(|s| s.trim().to_string()).collect();
            }
            (None, "objects") => {}
            (Some(obj), "class") => {
                if val != "unknown" {
                    let idx = val.split_whitespace().next().ok_or_else(|| bad(line))?;
                    obj.class_index = Some(idx.parse().map_err(|_| bad(line))?);
                }
            }
            (Some(obj), "purity") => obj.purity = val.parse().map_err(|_| bad(line))?,
            (Some(obj), "bbox") => {
                let v: Vec<usize> = val
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| bad(line)))
                    .collect::<Result<_>>()?;
                if v.len() != 4 {
                    return Err(bad(line));
                }
                obj.bbox = (v[0], v[1], v[2], v[3]);
            }
            (Some(obj), "centroid") => {
                let v: Vec<f64> = val
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| bad(line)))
                    .collect::<Result<_>>()?;
                if v.len() != 2 {
                    return Err(bad(line));
                }
                obj.centroid = (v[0], v[1]);
            }
            (Some(obj), "suction") => {
                let v: Vec<&str> = val.split_whitespace().collect();
                if v.len() != 3 {
                    return Err(bad(line));
                }
                obj.suction_points.push(SuctionPoint {
                    row: v[0].parse().map_err(|_| bad(line))?,
                    col: v[1].parse().map_err(|_| bad(line))?,
                    clearance_mm: v[2].parse().map_err(|_| bad(line))?,
                });
            }
            _ => return Err(Error::Format(format!("unexpected report key '{key}'"))),
        }
    }
    if let Some(obj) = current.take() {
        objects.push(obj);
    }
    let grid = CorrectedGrid::new(
        grid_pitch.ok_or_else(|| Error::Format("report missing grid pitch".into()))?,
        grid_x.ok_or_else(|| Error::Format("report missing grid x min".into()))?,
        grid_y.ok_or_else(|| Error::Format("report missing grid y max".into()))?,
        grid_cols.ok_or_else(|| Error::Format("report missing grid cols".into()))?,
        grid_rows.ok_or_else(|| Error::Format("report missing grid rows".into()))?,
    );
    Ok(DetectionReport { grid, class_names, objects })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let report = DetectionReport {
            grid: CorrectedGrid::new(1.0, -158.0, 436.0, 317, 873),
            class_names: vec!["fabric_a".into(), "fabric_b".into()],
            objects: vec![
                DetectedObject {
                    instance_id: 0,
                    class_index: Some(1),
                    purity: 0.9975,
                    bbox: (10, 20, 40, 60),
                    centroid: (25.5, 40.25),
                    suction_points: vec![
                        SuctionPoint { row: 25, col: 40, clearance_mm: 14.5 },
                        SuctionPoint { row: 15, col: 30, clearance_mm: 5.0 },
                    ],
                },
                DetectedObject {
                    instance_id: 1,
                    class_index: None,
                    purity: 0.0,
                    bbox: (100, 5, 102, 7),
                    centroid: (101.0, 6.0),
                    suction_points: vec![SuctionPoint { row: 101, col: 6, clearance_mm: 1.0 }],
                },
            ],
        };
        let path = dir.path().join("report.txt");
        write_report(&report, &path).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back.grid, report.grid);
        assert_eq!(back.class_names, report.class_names);
        assert_eq!(back.objects.len(), 2);
        assert_eq!(back.objects[0].class_index, Some(1));
        assert_eq!(back.objects[0].purity, 0.9975);
        assert_eq!(back.objects[0].bbox, (10, 20, 40, 60));
        assert_eq!(back.objects[0].suction_points, report.objects[0].suction_points);
        assert_eq!(back.objects[1].class_index, None);
    }
}
