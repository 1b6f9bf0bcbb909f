//! End-to-end checks of the command-line surface: pipeline chaining,
//! determinism under a fixed seed, strict config handling, and version
//! rejection. Each test drives the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hypersort")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        r#"
seed = 7
bands = 24

[geometry]
rows = 219
cols = 256
line_resolution_mm = 1.0

[scenario]
object_count = 4
trial_seeds = [11, 12]
target_pitch_mm = 2.0
plane_width_mm = 240.0
plane_height_mm = 700.0

[training]
samples_per_class = 400
"#,
    )
    .unwrap();
    path
}

#[test]
fn pipeline_chains_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();

    let out = run_in(dir.path(), &["--config", cfg, "simulate", "--generate", "discrete", "--count", "4", "--out", "frames.hsf"]);
    assert!(out.status.success(), "simulate: {}", String::from_utf8_lossy(&out.stderr));

    let out = run_in(dir.path(), &["--config", cfg, "reconstruct", "--frames", "frames.hsf", "--out", "cube.dat"]);
    assert!(out.status.success(), "reconstruct: {}", String::from_utf8_lossy(&out.stderr));

    let out = run_in(dir.path(), &["--config", cfg, "correct", "--cube", "cube.dat", "--out", "corrected.dat", "--pitch", "2.0"]);
    assert!(out.status.success(), "correct: {}", String::from_utf8_lossy(&out.stderr));

    let out = run_in(dir.path(), &["--config", cfg, "train", "--out", "model.bin"]);
    assert!(out.status.success(), "train: {}", String::from_utf8_lossy(&out.stderr));

    let out = run_in(
        dir.path(),
        &["--config", cfg, "classify", "--cube", "corrected.dat", "--model", "model.bin", "--report", "report.txt", "--overlay", "overlay.png"],
    );
    assert!(out.status.success(), "classify: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("report.txt").exists());
    assert!(dir.path().join("overlay.png").exists());
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("objects = 4"), "report:\n{report}");

    let out = run_in(dir.path(), &["--config", cfg, "plan", "--report", "report.txt", "--object", "0", "--out", "traj.txt"]);
    assert!(out.status.success(), "plan: {}", String::from_utf8_lossy(&out.stderr));
    let traj = std::fs::read_to_string(dir.path().join("traj.txt")).unwrap();
    assert!(traj.contains("suction_on") && traj.contains("suction_off"));
}

#[test]
fn simulate_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    for name in ["a.hsf", "b.hsf"] {
        let out = run_in(
            dir.path(),
            &["--config", cfg, "--seed", "99", "simulate", "--generate", "cluttered", "--count", "5", "--out", name],
        );
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a.hsf")).unwrap();
    let b = std::fs::read(dir.path().join("b.hsf")).unwrap();
    assert_eq!(a, b, "same seed must produce identical streams");
}

#[test]
fn geomtest_prints_fov() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["geomtest", "--n", "10"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fov_degrees = 72"), "stdout: {stdout}");
    assert!(stdout.contains("scan_duration_s = 2"), "stdout: {stdout}");
}

#[test]
fn unknown_config_key_aborts_with_single_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nnot_a_real_key = true\n").unwrap();
    let out = run_in(dir.path(), &["--config", cfg.to_str().unwrap(), "geomtest", "--n", "10"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "stderr: {stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1, "stderr must be one line: {stderr}");
}

#[test]
fn newer_frame_stream_version_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = run_in(dir.path(), &["--config", cfg, "simulate", "--generate", "discrete", "--count", "4", "--out", "v.hsf"]);
    assert!(out.status.success());
    let mut bytes = std::fs::read(dir.path().join("v.hsf")).unwrap();
    bytes[8] = 9; // bump the major version
    let crc_at = bytes.len() - 4;
    let crc = crc32fast_hash(&bytes[..crc_at]);
    bytes[crc_at..].copy_from_slice(&crc.to_le_bytes());
    std::fs::write(dir.path().join("v.hsf"), &bytes).unwrap();
    let out = run_in(dir.path(), &["--config", cfg, "reconstruct", "--frames", "v.hsf", "--out", "cube.dat"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("version"), "stderr: {stderr}");
}

/// CRC32 (IEEE) over a byte slice; standalone so the test does not lean on
/// the implementation's own checksum path.
fn crc32fast_hash(data: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for i in 0..256u32 {
        let mut c = i;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB88320 ^ (c >> 1) } else { c >> 1 };
        }
        table[i as usize] = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

#[test]
fn sort_writes_csv_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = run_in(
        dir.path(),
        &["--config", cfg, "sort", "--out-dir", "results", "--condition", "both", "--objects", "4"],
    );
    assert!(out.status.success(), "sort: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("results/campaign.csv")).unwrap();
    // header plus classes x conditions rows
    assert_eq!(csv.lines().count(), 1 + 4 * 2, "csv:\n{csv}");
    assert!(csv.lines().any(|l| l.starts_with("discrete,")));
    assert!(csv.lines().any(|l| l.starts_with("cluttered,")));
    assert!(dir.path().join("results/campaign.png").exists());
}

#[test]
fn resolution_chart_reports_near_reference_figure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["resolution-chart", "--height", "600"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let row = stdout.lines().nth(1).expect("one data row");
    let fields: Vec<&str> = row.split_whitespace().collect();
    let reported: f64 = fields[2].parse().expect("numeric min resolvable size");
    // the physical reference point is 0.35 mm at 600 mm; the ideal-optics
    // simulator must land within a factor of two
    assert!(
        (0.175..=0.7).contains(&reported),
        "reported {reported} mm outside [0.175, 0.7]"
    );
}

#[test]
fn config_path_comes_from_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("env.toml");
    std::fs::write(&cfg, "seed = 3\nbad_key = 1\n").unwrap();
    // the env-var config must be picked up (and its unknown key rejected)
    let out = Command::new(bin())
        .current_dir(dir.path())
        .env("HYPERSORT_CONFIG", cfg.to_str().unwrap())
        .args(["geomtest", "--n", "10"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad_key"), "stderr: {stderr}");
}

#[test]
fn simulate_accepts_scene_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    std::fs::write(
        dir.path().join("scene.toml"),
        r#"
seed = 4
noise_sigma = 0.0
plane = { width_mm = 200.0, height_mm = 600.0 }
background = "backdrop"

[[signatures]]
name = "backdrop"
band_centers_nm = [400.0, 600.0, 800.0, 1000.0]
reflectance = [0.5, 0.5, 0.5, 0.5]

[[signatures]]
name = "patch"
band_centers_nm = [400.0, 600.0, 800.0, 1000.0]
reflectance = [0.2, 0.7, 0.3, 0.1]

[[objects]]
class = "patch"
polygon = [[-25.0, -25.0], [25.0, -25.0], [25.0, 25.0], [-25.0, 25.0]]
"#,
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "simulate", "--scene", "scene.toml", "--out", "s.hsf"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("s.hsf").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("219 frames"), "stdout: {stdout}");
}
