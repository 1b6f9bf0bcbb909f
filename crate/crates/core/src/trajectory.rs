//! Waypoint path construction and Linear Quadratic Tracking refinement.
//!
//! A sparse pick-and-place path (hover, grasp, lift, intermediates, bin,
//! retreat) is tracked per axis by a discrete-time double integrator under
//! a finite-horizon LQ cost, solved by backward Riccati recursion with the
//! feedforward term that carries reference preview. Output is sampled at
//! exactly 100 Hz.

use crate::cube::CorrectedGrid;
use crate::error::{Error, Result};
use nalgebra::{Matrix2, Vector2};

/// Gripper command bound to a waypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripperAction {
    None,
    SuctionOn,
    SuctionOff,
}

impl std::fmt::Display for GripperAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GripperAction::None => write!(f, "none"),
            GripperAction::SuctionOn => write!(f, "suction_on"),
            GripperAction::SuctionOff => write!(f, "suction_off"),
        }
    }
}

impl std::str::FromStr for GripperAction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GripperAction::None),
            "suction_on" => Ok(GripperAction::SuctionOn),
            "suction_off" => Ok(GripperAction::SuctionOff),
            other => Err(Error::Trajectory(format!("unknown gripper action '{other}'"))),
        }
    }
}

/// One sparse path node: position, gripper command, hold time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: [f64; 3],
    pub action: GripperAction,
    pub dwell: f64,
}

/// Workspace box and path-shape parameters.
#[derive(Debug, Clone)]
pub struct PathConfig {
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    /// Hover height above grasp and bin points, mm.
    pub approach_height: f64,
    /// Hold at waypoints that trigger the gripper, s.
    pub action_dwell: f64,
    /// Hold at transit waypoints, s.
    pub transit_dwell: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            workspace_min: [0.0, -500.0, -5.0],
            workspace_max: [600.0, 500.0, 300.0],
            approach_height: 80.0,
            action_dwell: 0.3,
            transit_dwell: 0.25,
        }
    }
}

impl PathConfig {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.workspace_min[i] - 1e-9 && p[i] <= self.workspace_max[i] + 1e-9)
    }
}

/// Workspace coordinates of a corrected-grid pixel, given the metric plane
/// origin (where the optical axis meets the working plane).
pub fn pixel_to_workspace(
    u: f64,
    v: f64,
    grid: &CorrectedGrid,
    plane_origin: [f64; 3],
) -> [f64; 3] {
    [
        plane_origin[0] + grid.x_of_col(u),
        plane_origin[1] + grid.y_of_row(v),
        plane_origin[2],
    ]
}

/// Canonical pick-and-place waypoint sequence.
///
/// hover above grasp, descend (suction on), lift, intermediates, hover
/// above bin, bin (suction off), retreat to the bin hover. Every waypoint
/// must land inside the workspace box.
pub fn build_sparse_path(
    grasp: [f64; 3],
    bin: [f64; 3],
    intermediates: &[Waypoint],
    cfg: &PathConfig,
) -> Result<Vec<Waypoint>> {
    let hover_grasp = [grasp[0], grasp[1], grasp[2] + cfg.approach_height];
    let hover_bin = [bin[0], bin[1], bin[2] + cfg.approach_height];
    let mut path = vec![
        Waypoint { position: hover_grasp, action: GripperAction::None, dwell: cfg.transit_dwell },
        Waypoint { position: grasp, action: GripperAction::SuctionOn, dwell: cfg.action_dwell },
        Waypoint { position: hover_grasp, action: GripperAction::None, dwell: cfg.transit_dwell },
    ];
    path.extend_from_slice(intermediates);
    path.push(Waypoint { position: hover_bin, action: GripperAction::None, dwell: cfg.transit_dwell });
    path.push(Waypoint { position: bin, action: GripperAction::SuctionOff, dwell: cfg.action_dwell });
    path.push(Waypoint { position: hover_bin, action: GripperAction::None, dwell: cfg.transit_dwell });
    for (i, wp) in path.iter().enumerate() {
        if !cfg.contains(wp.position) {
            return Err(Error::Trajectory(format!(
                "waypoint {i} at {:?} lies outside the workspace box",
                wp.position
            )));
        }
    }
    Ok(path)
}

/// Double-integrator LQ tracking weights and constraints.
#[derive(Debug, Clone)]
pub struct LqtConfig {
    /// Output sample period, s.
    pub sample_period: f64,
    /// State cost on position error.
    pub q_position: f64,
    /// State cost on velocity error.
    pub q_velocity: f64,
    /// Input (acceleration) cost; must be positive.
    pub r_input: f64,
    /// Multiplier on Q for the terminal cost pinning each waypoint arrival.
    pub terminal_boost: f64,
    /// Reference traversal speed between waypoints, mm/s.
    pub cruise_speed: f64,
    /// Velocity limit, mm/s.
    pub max_velocity: f64,
    /// Acceleration limit, mm/s^2.
    pub max_acceleration: f64,
}

impl Default for LqtConfig {
    fn default() -> Self {
        Self {
            sample_period: 0.01,
            q_position: 100.0,
            q_velocity: 1.0,
            r_input: 0.1,
            terminal_boost: 1e4,
            cruise_speed: 150.0,
            max_velocity: 600.0,
            max_acceleration: 4000.0,
        }
    }
}

/// One 100 Hz trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub time: f64,
    pub position: [f64; 3],
    /// Central difference of the stored positions (one-sided at the ends).
    pub velocity: [f64; 3],
}

/// Gripper command bound to a sample index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionMarker {
    pub sample_index: usize,
    pub action: GripperAction,
}

/// Uniformly sampled Cartesian trajectory.
#[derive(Debug, Clone)]
pub struct CartesianTrajectory {
    pub sample_period: f64,
    pub samples: Vec<TrajectorySample>,
    pub actions: Vec<ActionMarker>,
    /// Arrival sample index of each waypoint.
    pub waypoint_sample_indices: Vec<usize>,
}

impl CartesianTrajectory {
    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.time)
    }

    /// Position error at each waypoint's arrival, mm.
    pub fn waypoint_errors(&self, path: &[Waypoint]) -> Vec<f64> {
        path.iter()
            .zip(&self.waypoint_sample_indices)
            .map(|(wp, &i)| {
                let p = self.samples[i.min(self.samples.len() - 1)].position;
                dist3(p, wp.position)
            })
            .collect()
    }
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Piecewise-linear reference: position per sample per axis, plus each
/// waypoint's arrival sample.
struct Reference {
    /// `pos[axis][t]`
    pos: [Vec<f64>; 3],
    arrival_index: Vec<usize>,
    samples: usize,
}

fn build_reference(path: &[Waypoint], cruise: f64, dt: f64) -> Reference {
    // knot times: arrive, hold, move
    let mut knot_t = Vec::with_capacity(path.len() * 2);
    let mut knot_p: Vec<[f64; 3]> = Vec::with_capacity(path.len() * 2);
    let mut arrivals = Vec::with_capacity(path.len());
    let mut t = 0.0;
    for (i, wp) in path.iter().enumerate() {
        if i > 0 {
            let d = dist3(path[i - 1].position, wp.position);
            t += d / cruise;
        }
        arrivals.push(t);
        knot_t.push(t);
        knot_p.push(wp.position);
        t += wp.dwell.max(0.0);
        knot_t.push(t);
        knot_p.push(wp.position);
    }
    let total = t;
    // guard the division against binary round-off (2.0 / 0.01 lands a hair
    // below 200.0 in f64)
    let samples = (total / dt + 1e-9).floor() as usize + 1;
    let mut pos = [vec![0.0; samples], vec![0.0; samples], vec![0.0; samples]];
    let mut ki = 0usize;
    for s in 0..samples {
        let ts = s as f64 * dt;
        while ki + 1 < knot_t.len() && knot_t[ki + 1] < ts {
            ki += 1;
        }
        let (t0, t1) = (knot_t[ki], knot_t[(ki + 1).min(knot_t.len() - 1)]);
        let (p0, p1) = (knot_p[ki], knot_p[(ki + 1).min(knot_p.len() - 1)]);
        let a = if t1 > t0 { ((ts - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 0.0 };
        for axis in 0..3 {
            pos[axis][s] = (1.0 - a) * p0[axis] + a * p1[axis];
        }
    }
    let arrival_index = arrivals
        .iter()
        .map(|&te| ((te / dt).round() as usize).min(samples - 1))
        .collect();
    Reference { pos, arrival_index, samples }
}

/// Solve one finite-horizon tracking problem over `ref_pos` from state
/// `x0`, with the terminal state pinned to the last reference point by
/// `terminal` weights. Returns (positions, state velocities,
/// accelerations); positions/velocities have `ref_pos.len()` entries.
///
/// This is the raw single-axis Riccati solver that [`lqt_refine`] chains
/// per segment; it is public so external checks can compare it against
/// batch formulations of the same problem.
pub fn solve_tracking_axis(
    ref_pos: &[f64],
    dt: f64,
    cfg: &LqtConfig,
    terminal: (f64, f64),
    x0_position: f64,
    x0_velocity: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    solve_axis(ref_pos, dt, cfg, terminal, Vector2::new(x0_position, x0_velocity))
}

fn solve_axis(
    ref_pos: &[f64],
    dt: f64,
    cfg: &LqtConfig,
    terminal: (f64, f64),
    x0: Vector2<f64>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = ref_pos.len() - 1; // control steps
    let a = Matrix2::new(1.0, dt, 0.0, 1.0);
    let b = Vector2::new(0.5 * dt * dt, dt);
    let q = Matrix2::new(cfg.q_position, 0.0, 0.0, cfg.q_velocity);
    let qf = Matrix2::new(terminal.0, 0.0, 0.0, terminal.1);
    let r = cfg.r_input;

    // reference state: position plus forward-difference velocity; the
    // terminal reference velocity is zero (segments end at waypoints)
    let z = |t: usize| -> Vector2<f64> {
        let v = if t + 1 < ref_pos.len() {
            (ref_pos[t + 1] - ref_pos[t]) / dt
        } else {
            0.0
        };
        Vector2::new(ref_pos[t], v)
    };

    // backward Riccati + feedforward recursion
    let mut p_next = qf;
    let mut q_next = -qf * z(n);
    let mut ks: Vec<(nalgebra::RowVector2<f64>, f64)> = vec![(nalgebra::RowVector2::zeros(), 0.0); n];
    for t in (0..n).rev() {
        let m = r + (b.transpose() * p_next * b)[(0, 0)];
        let k = (b.transpose() * p_next * a) / m;
        let kappa = (b.transpose() * q_next)[(0, 0)] / m;
        let p_t = q + a.transpose() * p_next * a - a.transpose() * p_next * b * k;
        let q_t = -q * z(t) + (a - b * k).transpose() * q_next;
        ks[t] = (k, kappa);
        p_next = p_t;
        q_next = q_t;
    }

    let mut x = x0;
    let mut pos = Vec::with_capacity(ref_pos.len());
    let mut vel = Vec::with_capacity(ref_pos.len());
    let mut acc = Vec::with_capacity(n);
    pos.push(x[0]);
    vel.push(x[1]);
    for t in 0..n {
        let (k, kappa) = ks[t];
        let u = -(k * x)[(0, 0)] - kappa;
        acc.push(u);
        x = a * x + b * u;
        pos.push(x[0]);
        vel.push(x[1]);
    }
    (pos, vel, acc)
}

/// Track the full reference by chaining per-segment LQ problems: one
/// segment per waypoint-to-waypoint leg (the leading hold included), each
/// ending pinned on its waypoint, starting from the previous segment's
/// final state. Returns per-axis (positions, state velocities, accels).
fn solve_chained(
    reference: &Reference,
    dt: f64,
    cfg: &LqtConfig,
) -> [(Vec<f64>, Vec<f64>, Vec<f64>); 3] {
    let terminal = (cfg.q_position * cfg.terminal_boost, cfg.q_velocity * cfg.terminal_boost);
    // segment boundaries: waypoint arrivals, then the final sample
    let mut bounds: Vec<usize> = reference.arrival_index.clone();
    bounds.dedup();
    if *bounds.last().unwrap() != reference.samples - 1 {
        bounds.push(reference.samples - 1);
    }
    std::array::from_fn(|axis| {
        let ref_pos = &reference.pos[axis];
        let mut pos = Vec::with_capacity(reference.samples);
        let mut vel = Vec::with_capacity(reference.samples);
        let mut acc = Vec::with_capacity(reference.samples.saturating_sub(1));
        let mut x = Vector2::new(ref_pos[0], 0.0);
        pos.push(x[0]);
        vel.push(x[1]);
        for w in bounds.windows(2) {
            let (s0, s1) = (w[0], w[1]);
            if s1 == s0 {
                continue;
            }
            let (p, v, a) = solve_axis(&ref_pos[s0..=s1], dt, cfg, terminal, x);
            pos.extend_from_slice(&p[1..]);
            vel.extend_from_slice(&v[1..]);
            acc.extend_from_slice(&a);
            x = Vector2::new(*p.last().unwrap(), *v.last().unwrap());
        }
        (pos, vel, acc)
    })
}

/// Track a sparse waypoint path at 100 Hz.
///
/// Each axis runs an independent double-integrator LQ tracker against the
/// piecewise-linear reference through the waypoints. When the rollout
/// exceeds the velocity or acceleration limits, the reference timeline is
/// stretched (slower cruise) and the problem re-solved; holds make the
/// tracker settle onto each waypoint, keeping terminal errors inside 1 mm.
pub fn lqt_refine(path: &[Waypoint], cfg: &LqtConfig) -> Result<CartesianTrajectory> {
    if path.len() < 2 {
        return Err(Error::Trajectory("path needs at least 2 waypoints".into()));
    }
    if cfg.max_velocity <= 0.0 || cfg.max_acceleration <= 0.0 {
        return Err(Error::Trajectory("velocity and acceleration limits must be positive".into()));
    }
    if cfg.r_input <= 0.0 || cfg.q_position < 0.0 || cfg.q_velocity < 0.0 {
        return Err(Error::Trajectory("cost weights must satisfy Q >= 0, R > 0".into()));
    }
    if cfg.sample_period <= 0.0 || cfg.cruise_speed <= 0.0 {
        return Err(Error::Trajectory("sample period and cruise speed must be positive".into()));
    }
    let dt = cfg.sample_period;
    let mut cruise = cfg.cruise_speed;
    for _attempt in 0..6 {
        let reference = build_reference(path, cruise, dt);
        let axes = solve_chained(&reference, dt, cfg);
        let samples = reference.samples;
        let mut v_peak = 0.0f64;
        let mut a_peak = 0.0f64;
        for t in 0..samples {
            let v = (0..3).map(|ax| axes[ax].1[t].powi(2)).sum::<f64>().sqrt();
            v_peak = v_peak.max(v);
            if t < samples - 1 {
                let acc = (0..3).map(|ax| axes[ax].2[t].powi(2)).sum::<f64>().sqrt();
                a_peak = a_peak.max(acc);
            }
        }
        if v_peak > cfg.max_velocity || a_peak > cfg.max_acceleration {
            let s = (v_peak / cfg.max_velocity)
                .max((a_peak / cfg.max_acceleration).sqrt())
                .max(1.01);
            cruise /= s * 1.05;
            continue;
        }

        let mut out = Vec::with_capacity(samples);
        for t in 0..samples {
            let position = [axes[0].0[t], axes[1].0[t], axes[2].0[t]];
            out.push(TrajectorySample { time: t as f64 * dt, position, velocity: [0.0; 3] });
        }
        // velocities as central differences of the stored positions
        for t in 0..samples {
            let (lo, hi) = (t.saturating_sub(1), (t + 1).min(samples - 1));
            let span = (hi - lo) as f64 * dt;
            for axis in 0..3 {
                out[t].velocity[axis] = if span > 0.0 {
                    (out[hi].position[axis] - out[lo].position[axis]) / span
                } else {
                    0.0
                };
            }
        }
        let actions = path
            .iter()
            .zip(&reference.arrival_index)
            .filter(|(wp, _)| wp.action != GripperAction::None)
            .map(|(wp, &i)| ActionMarker { sample_index: i, action: wp.action })
            .collect();
        return Ok(CartesianTrajectory {
            sample_period: dt,
            samples: out,
            actions,
            waypoint_sample_indices: reference.arrival_index,
        });
    }
    Err(Error::Trajectory(
        "could not satisfy velocity/acceleration limits after 6 time-scaling passes".into(),
    ))
}
