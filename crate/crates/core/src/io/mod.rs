//! File formats: ENVI-compatible cubes, binary frame streams and model
//! bundles, text trajectories, detection reports, and scene descriptions.
//!
//! Binary formats are little-endian and round-trip bit-exactly; readers
//! reject files with a newer major format version. Text formats print
//! floats in shortest round-trip form, so re-reading reproduces the same
//! values.

pub mod envi;
pub mod framestream;
pub mod model;
pub mod report;
pub mod scene_file;
pub mod trajectory_file;

pub use envi::{read_cube, write_cube, Interleave};
pub use framestream::{read_frames, write_frames};
pub use model::{read_model, write_model, ModelBundle};
pub use report::{read_report, write_report, DetectionReport};
pub use scene_file::{read_scene_file, read_signature_file, write_signature_file};
pub use trajectory_file::{read_trajectory, write_trajectory};
