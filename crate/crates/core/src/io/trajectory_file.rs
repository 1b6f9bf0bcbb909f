//! Trajectory files: a plain text table at the trajectory sample rate,
//! one row per sample, for inspection and replay.

use crate::error::{Error, Result};
use crate::trajectory::{ActionMarker, CartesianTrajectory, GripperAction, TrajectorySample};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub fn write_trajectory(traj: &CartesianTrajectory, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# cartesian trajectory");
    let _ = writeln!(out, "# sample_period = {}", traj.sample_period);
    let wp: Vec<String> = traj.waypoint_sample_indices.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(out, "# waypoint_samples = {}", wp.join(","));
    let _ = writeln!(out, "# time x y z vx vy vz action");
    for (i, s) in traj.samples.iter().enumerate() {
        let action = traj
            .actions
            .iter()
            .find(|a| a.sample_index == i)
            .map(|a| a.action.to_string())
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            s.time,
            s.position[0],
            s.position[1],
            s.position[2],
            s.velocity[0],
            s.velocity[1],
            s.velocity[2],
            action
        );
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<CartesianTrajectory> {
    let text = fs::read_to_string(path)?;
    let mut sample_period = None;
    let mut waypoint_sample_indices = Vec::new();
    let mut samples = Vec::new();
    let mut actions: Vec<ActionMarker> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("sample_period =") {
                sample_period = Some(
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format("bad sample_period".into()))?,
                );
            } else if let Some(v) = rest.strip_prefix("waypoint_samples =") {
                for part in v.trim().split(',').filter(|p| !p.is_empty()) {
                    waypoint_sample_indices.push(
                        part.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Format("bad waypoint sample index".into()))?,
                    );
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::Format(format!(
                "trajectory row needs 8 fields, got {}: '{line}'",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad number '{}' in trajectory row", fields[i])))
        };
        let sample = TrajectorySample {
            time: num(0)?,
            position: [num(1)?, num(2)?, num(3)?],
            velocity: [num(4)?, num(5)?, num(6)?],
        };
        if fields[7] != "-" {
            actions.push(ActionMarker { sample_index: samples.len(), action: fields[7].parse::<GripperAction>()? });
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Format("trajectory file has no samples".into()));
    }
    Ok(CartesianTrajectory {
        sample_period: sample_period
            .ok_or_else(|| Error::Format("trajectory file missing sample_period".into()))?,
        samples,
        actions,
        waypoint_sample_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{build_sparse_path, lqt_refine, LqtConfig, PathConfig};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = build_sparse_path(
            [300.0, 0.0, 0.0],
            [120.0, -380.0, 40.0],
            &[],
            &PathConfig::default(),
        )
        .unwrap();
        let traj = lqt_refine(&path, &LqtConfig::default()).unwrap();
        let file = dir.path().join("traj.txt");
        write_trajectory(&traj, &file).unwrap();
        let back = read_trajectory(&file).unwrap();
        assert_eq!(back.sample_period, traj.sample_period);
        assert_eq!(back.samples.len(), traj.samples.len());
        for (a, b) in traj.samples.iter().zip(&back.samples) {
            assert_eq!(a.time.to_bits(), b.time.to_bits());
            for k in 0..3 {
                assert_eq!(a.position[k].to_bits(), b.position[k].to_bits());
                assert_eq!(a.velocity[k].to_bits(), b.velocity[k].to_bits());
            }
        }
        assert_eq!(back.actions, traj.actions);
        assert_eq!(back.waypoint_sample_indices, traj.waypoint_sample_indices);
    }
}
