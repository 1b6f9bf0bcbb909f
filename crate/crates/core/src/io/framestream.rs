//! Binary frame-stream files: the raw (motor angle, timestamp, line)
//! records a scan produces, with a fixed preamble and a trailing CRC32.
//!
//! Layout, all little-endian:
//!
//! ```text
//! 0   8  magic "HSFRAMES"
//! 8   2  format major (1)
//! 10  2  format minor (0)
//! 12  4  reserved (0)
//! 16  4  cols (u32)
//! 20  4  bands (u32)
//! 24  4  frame count (u32)
//! 28  4  reserved (0)
//! 32  .. frames: f64 theta, f64 timestamp, cols*bands f32 samples
//! end 4  CRC32 of every preceding byte
//! ```

use crate::error::{Error, Result};
use crate::geometry::MotorAngle;
use crate::sim::FramePacket;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const FRAME_MAGIC: &[u8; 8] = b"HSFRAMES";
pub const FRAME_FORMAT_MAJOR: u16 = 1;
pub const FRAME_FORMAT_MINOR: u16 = 0;

pub fn write_frames(frames: &[FramePacket], path: &Path) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::Format("refusing to write an empty frame stream".into()));
    }
    let cols = frames[0].cols;
    let bands = frames[0].bands;
    for f in frames {
        if f.cols != cols || f.bands != bands {
            return Err(Error::Format("inconsistent frame dimensions".into()));
        }
    }
    let mut buf = Vec::with_capacity(32 + frames.len() * (16 + cols * bands * 4) + 4);
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&FRAME_FORMAT_MAJOR.to_le_bytes());
    buf.extend_from_slice(&FRAME_FORMAT_MINOR.to_le_bytes());
    buf.extend_from_slice(&[0u8; 4]);
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    buf.extend_from_slice(&(bands as u32).to_le_bytes());
    buf.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    buf.extend_from_slice(&[0u8; 4]);
    for f in frames {
        buf.extend_from_slice(&f.theta.radians().to_le_bytes());
        buf.extend_from_slice(&f.timestamp.to_le_bytes());
        for &s in &f.samples {
            buf.extend_from_slice(&s.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(&buf)?;
    f.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Vec<FramePacket>> {
    let buf = fs::read(path)?;
    if buf.len() < 36 {
        return Err(Error::Truncated { expected: 36, actual: buf.len() as u64 });
    }
    if &buf[0..8] != FRAME_MAGIC {
        return Err(Error::Format("bad magic; not a frame stream".into()));
    }
    let major = u16::from_le_bytes([buf[8], buf[9]]);
    if major > FRAME_FORMAT_MAJOR {
        return Err(Error::VersionMismatch { found: major, supported: FRAME_FORMAT_MAJOR });
    }
    let u32_at = |off: usize| u32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]]);
    let cols = u32_at(16) as usize;
    let bands = u32_at(20) as usize;
    let count = u32_at(24) as usize;
    let record = 16 + cols * bands * 4;
    let expected = 32u64 + (count as u64) * (record as u64) + 4;
    if (buf.len() as u64) != expected {
        return Err(Error::Truncated { expected, actual: buf.len() as u64 });
    }
    let crc_offset = buf.len() - 4;
    let stored = u32::from_le_bytes([buf[crc_offset], buf[crc_offset + 1], buf[crc_offset + 2], buf[crc_offset + 3]]);
    let actual = crc32fast::hash(&buf[..crc_offset]);
    if stored != actual {
        return Err(Error::Checksum { offset: crc_offset as u64, expected: stored, actual });
    }

    let mut frames = Vec::with_capacity(count);
    let mut off = 32usize;
    for _ in 0..count {
        let theta = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
        let timestamp = f64::from_le_bytes(buf[off + 8..off + 16].try_into().unwrap());
        off += 16;
        let mut samples = Vec::with_capacity(cols * bands);
        for _ in 0..cols * bands {
            samples.push(f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        frames.push(FramePacket { theta: MotorAngle(theta), timestamp, samples, cols, bands });
    }
    Ok(frames)
}
