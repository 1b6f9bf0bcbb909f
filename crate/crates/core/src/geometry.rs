//! Rotational-reflection scan geometry.
//!
//! A motor turns an `n`-sided reflective prism; each motor angle `theta`
//! aims the line-scan sensor at one scanned angle `gamma` below/above the
//! optical axis. These functions map between motor angle, scanned angle,
//! image row, and metric coordinates on the working plane, including the
//! per-row horizontal magnification that oblique viewing introduces.
//!
//! All angles are radians internally; degrees appear only at CLI
//! boundaries. Every function here is pure and thread-safe.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Lower end of the motor angle window usable for imaging (`pi/20`).
pub const THETA_MIN: f64 = PI / 20.0;
/// Upper end of the motor angle window usable for imaging (`pi/4`).
pub const THETA_MAX: f64 = PI / 4.0;
/// Magnitude of the scanned-angle range endpoint (`pi/5`).
pub const GAMMA_MAX: f64 = PI / 5.0;

/// Slack for floating-point range checks on angle windows.
const RANGE_EPS: f64 = 1e-12;

/// Motor shaft angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorAngle(pub f64);

impl MotorAngle {
    pub fn radians(self) -> f64 {
        self.0
    }

    /// True when the angle lies inside the imaging window `[pi/20, pi/4]`.
    pub fn in_scan_window(self) -> bool {
        self.0 >= THETA_MIN - RANGE_EPS && self.0 <= THETA_MAX + RANGE_EPS
    }
}

/// Scanned angle between the optical axis and the imaged line, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScannedAngle(pub f64);

impl ScannedAngle {
    pub fn radians(self) -> f64 {
        self.0
    }
}

/// Prism and drive-train parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PrismConfig {
    /// Number of reflective facets (>= 3).
    pub n_sides: u32,
    /// Circumradius of the prism, mm.
    pub circumradius_r: f64,
    /// Sensor x position, mm. Present for completeness; no mapping uses it.
    pub sensor_x: f64,
    /// Sensor y position, mm; fixed at `sqrt(2)/2 * circumradius_r`.
    pub sensor_y: f64,
    /// Facet mirror reflectivity, fraction of incident light.
    pub reflectivity: f64,
    /// Drive speed at the prism, revolutions per minute.
    pub motor_speed_rpm: f64,
    /// Gearbox reduction ratio.
    pub gear_ratio: f64,
    /// Servo angular step, degrees.
    pub encoder_resolution_deg: f64,
}

impl PrismConfig {
    pub fn new(
        n_sides: u32,
        circumradius_r: f64,
        sensor_x: f64,
        reflectivity: f64,
        motor_speed_rpm: f64,
        gear_ratio: f64,
        encoder_resolution_deg: f64,
    ) -> Result<Self> {
        if n_sides < 3 {
            return Err(Error::Geometry(format!(
                "prism needs at least 3 sides, got {n_sides}"
            )));
        }
        if circumradius_r <= 0.0 {
            return Err(Error::Geometry("circumradius must be positive".into()));
        }
        if !(reflectivity > 0.0 && reflectivity <= 1.0) {
            return Err(Error::Geometry(format!(
                "reflectivity must be in (0, 1], got {reflectivity}"
            )));
        }
        if motor_speed_rpm <= 0.0 {
            return Err(Error::Geometry("motor speed must be positive".into()));
        }
        Ok(Self {
            n_sides,
            circumradius_r,
            sensor_x,
            sensor_y: std::f64::consts::SQRT_2 / 2.0 * circumradius_r,
            reflectivity,
            motor_speed_rpm,
            gear_ratio,
            encoder_resolution_deg,
        })
    }

    /// Decagonal prism profile: 40 mm circumradius, 95% mirrors, 3 rpm,
    /// 10:1 gearbox, 0.01 degree servo steps.
    pub fn default_decagon() -> Self {
        Self::new(10, 40.0, 60.0, 0.95, 3.0, 10.0, 0.01).expect("default profile is valid")
    }

    /// Snap a motor angle to the nearest encoder step. The default pipeline
    /// works with exact angles; this models the servo's finite resolution
    /// when quantization is wanted.
    pub fn quantize(&self, theta: MotorAngle) -> MotorAngle {
        let step = self.encoder_resolution_deg.to_radians();
        if step <= 0.0 {
            return theta;
        }
        MotorAngle((theta.0 / step).round() * step)
    }
}

/// Image shape and metric sampling of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryContext {
    /// Detection height of the plane below the scanner, mm.
    pub working_height: f64,
    /// Spatial pitch along one measured line at the image center, mm/pixel.
    pub line_resolution_dx: f64,
    /// Number of scan rows per image.
    pub rows_h: usize,
    /// Number of columns (pixels per line).
    pub cols_w: usize,
}

impl GeometryContext {
    pub fn new(working_height: f64, line_resolution_dx: f64, rows_h: usize, cols_w: usize) -> Result<Self> {
        if working_height <= 0.0 {
            return Err(Error::Geometry("working height must be positive".into()));
        }
        if line_resolution_dx <= 0.0 {
            return Err(Error::Geometry("line resolution must be positive".into()));
        }
        if rows_h < 2 || cols_w < 2 {
            return Err(Error::Geometry(format!(
                "image must be at least 2x2, got {rows_h}x{cols_w}"
            )));
        }
        Ok(Self { working_height, line_resolution_dx, rows_h, cols_w })
    }

    /// Default profile: 871 x 512 image, 600 mm working height, 0.5 mm line pitch.
    pub fn default_profile() -> Self {
        Self::new(600.0, 0.5, 871, 512).expect("default profile is valid")
    }

    /// Column coordinate of the optical center, `(cols_w - 1) / 2`.
    pub fn center_col(&self) -> f64 {
        (self.cols_w - 1) as f64 / 2.0
    }
}

/// Full field of view in degrees for an `n`-sided reflective prism.
pub fn fov_degrees(n_sides: u32) -> Result<f64> {
    if n_sides < 3 {
        return Err(Error::Geometry(format!(
            "prism needs at least 3 sides, got {n_sides}"
        )));
    }
    Ok(720.0 / n_sides as f64)
}

/// Scanned angle for a motor angle: `gamma = 3*pi/10 - 2*theta`.
///
/// Affine and strictly decreasing; the window endpoints `pi/20` and `pi/4`
/// map exactly to `+pi/5` and `-pi/5`.
pub fn gamma_of_theta(theta: MotorAngle) -> Result<ScannedAngle> {
    if !theta.in_scan_window() {
        return Err(Error::Geometry(format!(
            "motor angle {} rad outside scan window [{THETA_MIN}, {THETA_MAX}]",
            theta.0
        )));
    }
    Ok(ScannedAngle(3.0 * PI / 10.0 - 2.0 * theta.0))
}

/// Motor angle assigned to an image row; row 0 scans `gamma = +pi/5`.
pub fn theta_of_row(row: usize, geom: &GeometryContext) -> Result<MotorAngle> {
    if row >= geom.rows_h {
        return Err(Error::Geometry(format!(
            "row {row} out of bounds for {} rows",
            geom.rows_h
        )));
    }
    Ok(theta_of_row_fractional(row as f64, geom))
}

/// Fractional-row variant of [`theta_of_row`]; used by the resampler.
///
/// Uses the `(1-t)*a + t*b` form so that both endpoints are hit exactly.
pub fn theta_of_row_fractional(row: f64, geom: &GeometryContext) -> MotorAngle {
    let t = row / (geom.rows_h - 1) as f64;
    MotorAngle((1.0 - t) * THETA_MIN + t * THETA_MAX)
}

/// Fractional row whose assigned motor angle is `theta`; inverse of
/// [`theta_of_row_fractional`].
pub fn row_of_theta(theta: MotorAngle, geom: &GeometryContext) -> f64 {
    (theta.0 - THETA_MIN) / (THETA_MAX - THETA_MIN) * (geom.rows_h - 1) as f64
}

/// Horizontal magnification of one scan line,
/// `k(theta) = sqrt(1 + 1/tan^2(pi/5 + 2*theta))`.
///
/// Equals `sec(gamma)`; always >= 1 on the scan window, with equality only
/// at the center angle `3*pi/20`.
pub fn scaling_factor_k(theta: MotorAngle) -> Result<f64> {
    if !theta.in_scan_window() {
        return Err(Error::Geometry(format!(
            "motor angle {} rad outside scan window [{THETA_MIN}, {THETA_MAX}]",
            theta.0
        )));
    }
    let arg = PI / 5.0 + 2.0 * theta.0;
    // Cannot occur inside the window (arg stays in (2*pi/5, 7*pi/10)); the
    // guard protects callers that bypass the range check.
    if arg.sin().abs() < 1e-12 {
        return Err(Error::Geometry(format!(
            "singular tangent argument at theta = {} rad",
            theta.0
        )));
    }
    let t = arg.tan();
    Ok((1.0 + 1.0 / (t * t)).sqrt())
}

/// Metric coordinates (mm) on the working plane for image pixel `(u, v)`.
///
/// `u` is the column, `v` the row; both may be fractional. The column
/// origin is centered so the optical axis maps to `x_d = 0`:
/// `x_d = (u - (W-1)/2) * dx * k(theta)`, `y_d = h * tan(gamma)`.
pub fn pixel_to_metric(u: f64, v: f64, geom: &GeometryContext) -> Result<(f64, f64)> {
    if !(u >= -RANGE_EPS && u <= (geom.cols_w - 1) as f64 + RANGE_EPS)
        || !(v >= -RANGE_EPS && v <= (geom.rows_h - 1) as f64 + RANGE_EPS)
    {
        return Err(Error::Geometry(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            geom.rows_h, geom.cols_w
        )));
    }
    let theta = theta_of_row_fractional(v, geom);
    let gamma = gamma_of_theta(theta)?;
    let k = scaling_factor_k(theta)?;
    let y_d = geom.working_height * gamma.radians().tan();
    let x_d = (u - geom.center_col()) * geom.line_resolution_dx * k;
    Ok((x_d, y_d))
}

/// Fractional pixel coordinates imaging the metric point `(x_d, y_d)`;
/// exact inverse of [`pixel_to_metric`] up to floating round-off.
pub fn metric_to_pixel(x_d: f64, y_d: f64, geom: &GeometryContext) -> Result<(f64, f64)> {
    let gamma = (y_d / geom.working_height).atan();
    // theta from gamma = 3*pi/10 - 2*theta
    let theta = MotorAngle((3.0 * PI / 10.0 - gamma) / 2.0);
    if !theta.in_scan_window() {
        return Err(Error::Geometry(format!(
            "point (x={x_d}, y={y_d}) outside the scanned footprint"
        )));
    }
    let v = row_of_theta(theta, geom);
    let k = scaling_factor_k(theta)?;
    let u = x_d / (geom.line_resolution_dx * k) + geom.center_col();
    let tol = 1e-9;
    if u < -tol || u > (geom.cols_w - 1) as f64 + tol || v < -tol || v > (geom.rows_h - 1) as f64 + tol {
        return Err(Error::Geometry(format!(
            "point (x={x_d}, y={y_d}) outside the scanned footprint"
        )));
    }
    Ok((u, v))
}

/// Duration of one full scan in seconds: the 36 degree motor window swept
/// at `motor_speed_rpm` (3 rpm = 18 deg/s gives 2.0 s).
pub fn scan_duration_seconds(config: &PrismConfig) -> f64 {
    let span_deg = (THETA_MAX - THETA_MIN).to_degrees();
    let deg_per_sec = config.motor_speed_rpm * 360.0 / 60.0;
    span_deg / deg_per_sec
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    #[test]
    fn fov_matches_known_values() {
        assert_eq!(fov_degrees(10).unwrap(), 72.0);
        assert_eq!(fov_degrees(720).unwrap(), 1.0);
        assert_eq!(fov_degrees(8).unwrap(), 90.0);
        assert!(fov_degrees(2).is_err());
    }

    #[test]
    fn fov_strictly_decreasing_in_sides() {
        let mut prev = f64::INFINITY;
        for n in 3..200 {
            let f = fov_degrees(n).unwrap();
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn gamma_endpoints_exact() {
        assert_eq!(gamma_of_theta(MotorAngle(THETA_MIN)).unwrap().0, GAMMA_MAX);
        assert_eq!(gamma_of_theta(MotorAngle(THETA_MAX)).unwrap().0, -GAMMA_MAX);
        assert_close(gamma_of_theta(MotorAngle(3.0 * PI / 20.0)).unwrap().0, 0.0, 1e-15);
        assert!(gamma_of_theta(MotorAngle(0.0)).is_err());
        assert!(gamma_of_theta(MotorAngle(PI / 3.0)).is_err());
    }

    #[test]
    fn gamma_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..=1000 {
            let th = THETA_MIN + (THETA_MAX - THETA_MIN) * i as f64 / 1000.0;
            let g = gamma_of_theta(MotorAngle(th)).unwrap().0;
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn theta_of_row_endpoints() {
        let geom = GeometryContext::default_profile();
        assert_eq!(theta_of_row(0, &geom).unwrap().0, THETA_MIN);
        assert_eq!(theta_of_row(870, &geom).unwrap().0, THETA_MAX);
        assert_close(theta_of_row(435, &geom).unwrap().0, 3.0 * PI / 20.0, 1e-15);
        assert!(theta_of_row(871, &geom).is_err());
    }

    #[test]
    fn scaling_factor_values() {
        assert_eq!(scaling_factor_k(MotorAngle(3.0 * PI / 20.0)).unwrap(), 1.0);
        let k_lo = scaling_factor_k(MotorAngle(THETA_MIN)).unwrap();
        let k_hi = scaling_factor_k(MotorAngle(THETA_MAX)).unwrap();
        // both endpoints equal 1/cos(pi/5)
        assert_close(k_lo, 1.0 / (PI / 5.0).cos(), 1e-12);
        assert_close(k_hi, 1.0 / (PI / 5.0).cos(), 1e-12);
        assert_close(k_lo, 1.2360679774997896, 1e-12);
    }

    #[test]
    fn k_at_least_one_with_unique_minimum() {
        for i in 0..=2000 {
            let th = THETA_MIN + (THETA_MAX - THETA_MIN) * i as f64 / 2000.0;
            let k = scaling_factor_k(MotorAngle(th)).unwrap();
            assert!(k >= 1.0);
            if (th - 3.0 * PI / 20.0).abs() > 1e-3 {
                assert!(k > 1.0);
            }
        }
    }

    #[test]
    fn k_cos_gamma_identity() {
        for i in 0..=10000 {
            let th = THETA_MIN + (THETA_MAX - THETA_MIN) * i as f64 / 10000.0;
            let k = scaling_factor_k(MotorAngle(th)).unwrap();
            let g = gamma_of_theta(MotorAngle(th)).unwrap().0;
            assert!((k * g.cos() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_to_metric_examples() {
        let geom = GeometryContext::default_profile();
        let (x, y) = pixel_to_metric(255.5, 435.0, &geom).unwrap();
        assert_close(x, 0.0, 1e-12);
        assert_close(y, 0.0, 1e-9);

        let (_, y0) = pixel_to_metric(0.0, 0.0, &geom).unwrap();
        assert_close(y0, 600.0 * (PI / 5.0).tan(), 1e-9);

        let (x1, _) = pixel_to_metric(256.5, 0.0, &geom).unwrap();
        assert_close(x1, 0.5 * 1.2360679774997896, 1e-9);
    }

    #[test]
    fn metric_to_pixel_inverse() {
        let geom = GeometryContext::default_profile();
        let (u, v) = metric_to_pixel(0.0, 0.0, &geom).unwrap();
        assert_close(u, 255.5, 1e-9);
        assert_close(v, 435.0, 1e-9);

        let x = 0.5 * 1.2360679774997896;
        let y = 600.0 * (PI / 5.0).tan();
        let (u, v) = metric_to_pixel(x, y, &geom).unwrap();
        assert_close(u, 256.5, 1e-6);
        assert_close(v, 0.0, 1e-6);

        assert!(metric_to_pixel(0.0, 600.0, &geom).is_err());
        assert!(metric_to_pixel(1e6, 0.0, &geom).is_err());
    }

    #[test]
    fn round_trip_on_grid() {
        let geom = GeometryContext::default_profile();
        for i in 0..10 {
            for j in 0..10 {
                let u = i as f64 / 9.0 * (geom.cols_w - 1) as f64;
                let v = j as f64 / 9.0 * (geom.rows_h - 1) as f64;
                let (x, y) = pixel_to_metric(u, v, &geom).unwrap();
                let (u2, v2) = metric_to_pixel(x, y, &geom).unwrap();
                assert!((u - u2).abs() < 1e-9, "u {u} -> {u2}");
                assert!((v - v2).abs() < 1e-9, "v {v} -> {v2}");
            }
        }
    }

    #[test]
    fn scan_duration_linear_in_speed() {
        let mut cfg = PrismConfig::default_decagon();
        assert_eq!(scan_duration_seconds(&cfg), 2.0);
        cfg.motor_speed_rpm = 6.0;
        assert_eq!(scan_duration_seconds(&cfg), 1.0);
        cfg.motor_speed_rpm = 1.0;
        assert_eq!(scan_duration_seconds(&cfg), 6.0);
    }

    #[test]
    fn prism_config_validation() {
        assert!(PrismConfig::new(2, 40.0, 60.0, 0.95, 3.0, 10.0, 0.01).is_err());
        assert!(PrismConfig::new(10, -1.0, 60.0, 0.95, 3.0, 10.0, 0.01).is_err());
        assert!(PrismConfig::new(10, 40.0, 60.0, 1.5, 3.0, 10.0, 0.01).is_err());
        assert!(PrismConfig::new(10, 40.0, 60.0, 0.95, 0.0, 10.0, 0.01).is_err());
        let cfg = PrismConfig::default_decagon();
        assert_close(cfg.sensor_y, std::f64::consts::SQRT_2 / 2.0 * 40.0, 1e-15);
    }

    #[test]
    fn quantize_snaps_to_encoder_steps() {
        let cfg = PrismConfig::default_decagon();
        let step = 0.01f64.to_radians();
        let q = cfg.quantize(MotorAngle(THETA_MIN + 0.4 * step));
        assert_close(q.0, (THETA_MIN / step).round() * step, 1e-15);
    }
}
