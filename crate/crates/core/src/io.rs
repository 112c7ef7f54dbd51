//! On-disk formats: Middlebury `.flo` flow, 16-bit PGM depth with a float
//! sidecar, JSON scene files and CSV trajectory logs.

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::dynamics::Termination;
use crate::error::{Error, Result};
use crate::flow::FlowImage;
use crate::math::Vec3;
use crate::render::DepthImage;
use crate::rollout::StepLog;
use crate::scene::Scene;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

pub const FLO_MAGIC: f32 = 202021.25;
pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(Error::at(path))?;
    Ok(bytes)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(Error::at(path))
}

pub fn flo_bytes(flow: &FlowImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.values.len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for [u, v] in &flow.values {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a `.flo` buffer. The file carries no camera model, so the
/// returned image uses `intrinsics` with the file's dimensions.
pub fn parse_flo(bytes: &[u8], intrinsics: CameraIntrinsics) -> Result<FlowImage> {
    if bytes.len() < 12 {
        return Err(Error::Truncated("flo header".into()));
    }
    let word = |i: usize| <[u8; 4]>::try_from(&bytes[4 * i..4 * i + 4]).unwrap();
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(Error::Format("bad .flo magic".into()));
    }
    let (w, h) = (i32::from_le_bytes(word(1)), i32::from_le_bytes(word(2)));
    if w <= 0 || h <= 0 {
        return Err(Error::Format(format!("bad .flo size {w}x{h}")));
    }
    let n = w as usize * h as usize;
    let body = &bytes[12..];
    if body.len() < 8 * n {
        return Err(Error::Truncated(format!("{w}x{h} flow needs {} bytes, got {}", 8 * n, body.len())));
    }
    if body.len() > 8 * n {
        return Err(Error::Format("trailing bytes after flow data".into()));
    }
    let f = |c: &[u8]| f32::from_le_bytes(c.try_into().unwrap());
    let values = body.chunks_exact(8).map(|c| [f(&c[0..4]), f(&c[4..8])]).collect();
    Ok(FlowImage {
        values,
        intrinsics: CameraIntrinsics {
            width: w as usize,
            height: h as usize,
            ..intrinsics
        },
    })
}

pub fn write_flo(path: &Path, flow: &FlowImage) -> Result<()> {
    write_all(path, &flo_bytes(flow))
}

pub fn read_flo(path: &Path, intrinsics: CameraIntrinsics) -> Result<FlowImage> {
    parse_flo(&read_all(path)?, intrinsics)
}

/// 16-bit binary PGM of depth scaled so `depth_far` maps to 65535.
pub fn depth_pgm_bytes(depth: &DepthImage) -> Vec<u8> {
    let far = depth.intrinsics.depth_far;
    let mut out = format!("P5\n{} {}\n65535\n", depth.width(), depth.height()).into_bytes();
    for &d in &depth.values {
        let q = ((d as f64 / far).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn depth_sidecar_bytes(depth: &DepthImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * depth.values.len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    out.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    for d in &depth.values {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

/// Float depth from a sidecar buffer as `(width, height, values)`.
pub fn parse_depth_sidecar(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 12 {
        return Err(Error::Truncated("depth sidecar header".into()));
    }
    if &bytes[0..4] != DEPTH_MAGIC {
        return Err(Error::Format("bad depth sidecar magic".into()));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    let need = w.checked_mul(h).and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::Format("depth size overflows".into()))?;
    if body.len() < need {
        return Err(Error::Truncated(format!("{w}x{h} depth needs {need} bytes, got {}", body.len())));
    }
    if body.len() > need {
        return Err(Error::Format("trailing bytes after depth data".into()));
    }
    Ok((w, h, body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()))
}

/// Path of the float sidecar next to a PGM.
pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("dpth")
}

/// Writes `path` (PGM) and its `.dpth` sidecar.
pub fn write_depth(path: &Path, depth: &DepthImage) -> Result<()> {
    write_all(path, &depth_pgm_bytes(depth))?;
    write_all(&sidecar_path(path), &depth_sidecar_bytes(depth))
}

/// Reads the float sidecar of `path`; `intrinsics` and `pose` are attached
/// as given (dimensions must match).
pub fn read_depth(path: &Path, intrinsics: CameraIntrinsics, pose: CameraPose) -> Result<DepthImage> {
    let (w, h, values) = parse_depth_sidecar(&read_all(&sidecar_path(path))?)?;
    if (w, h) != (intrinsics.width, intrinsics.height) {
        return Err(Error::Format(format!("depth is {w}x{h}, expected {}x{}", intrinsics.width, intrinsics.height)));
    }
    Ok(DepthImage { values, intrinsics, pose })
}

pub fn scene_to_string(scene: &Scene) -> Result<String> {
    Ok(serde_json::to_string_pretty(scene)?)
}

pub fn scene_from_str(s: &str) -> Result<Scene> {
    let scene: Scene = serde_json::from_str(s).map_err(|e| Error::Format(format!("scene file: {e}")))?;
    scene.validate()?;
    Ok(scene)
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    write_all(path, scene_to_string(scene)?.as_bytes())
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(Error::at(path))?;
    scene_from_str(&text)
}

/// One CSV row of a trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    px: f64,
    py: f64,
    pz: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    ax: f64,
    ay: f64,
    az: f64,
    cmd_x: f64,
    cmd_y: f64,
    cmd_z: f64,
    yaw: f64,
    vref_x: f64,
    vref_y: f64,
    vref_z: f64,
    vbar_x: f64,
    vbar_y: f64,
    vbar_z: f64,
    distance: f64,
    approach: f64,
    status: Termination,
}

pub fn write_trajectory<W: Write>(out: W, steps: &[StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in steps {
        w.serialize(TrajectoryRow {
            t: s.t,
            px: s.position.x,
            py: s.position.y,
            pz: s.position.z,
            vx: s.velocity.x,
            vy: s.velocity.y,
            vz: s.velocity.z,
            ax: s.acceleration.x,
            ay: s.acceleration.y,
            az: s.acceleration.z,
            cmd_x: s.command.x,
            cmd_y: s.command.y,
            cmd_z: s.command.z,
            yaw: s.yaw,
            vref_x: s.v_ref.x,
            vref_y: s.v_ref.y,
            vref_z: s.v_ref.z,
            vbar_x: s.smoothed_velocity.x,
            vbar_y: s.smoothed_velocity.y,
            vbar_z: s.smoothed_velocity.z,
            distance: s.distance,
            approach: s.approach,
            status: s.status,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Vec<StepLog>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<TrajectoryRow>()
        .map(|row| {
            let s = row?;
            Ok(StepLog {
                t: s.t,
                position: Vec3::new(s.px, s.py, s.pz),
                velocity: Vec3::new(s.vx, s.vy, s.vz),
                acceleration: Vec3::new(s.ax, s.ay, s.az),
                command: Vec3::new(s.cmd_x, s.cmd_y, s.cmd_z),
                yaw: s.yaw,
                v_ref: Vec3::new(s.vref_x, s.vref_y, s.vref_z),
                smoothed_velocity: Vec3::new(s.vbar_x, s.vbar_y, s.vbar_z),
                distance: s.distance,
                approach: s.approach,
                status: s.status,
            })
        })
        .collect()
}

/// Reads a JSON-lines file into records.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(Error::at(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(Error::at(path))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, GenConfig};

    fn intr(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(w, h, 90.0, 30.0).unwrap()
    }

    #[test]
    fn flo_layout_and_round_trip() {
        let f = FlowImage::from_fn(intr(3, 2), |r, c| [r as f32 + 0.5, -(c as f32)]);
        let b = flo_bytes(&f);
        assert_eq!(b.len(), 12 + 6 * 8);
        assert_eq!(&b[0..4], &202021.25f32.to_le_bytes());
        assert_eq!(&b[4..8], &3i32.to_le_bytes());
        assert_eq!(&b[8..12], &2i32.to_le_bytes());
        // first pixel u then v
        assert_eq!(&b[12..16], &0.5f32.to_le_bytes());
        assert_eq!(&b[16..20], &(-0.0f32).to_le_bytes());
        assert_eq!(parse_flo(&b, intr(3, 2)).unwrap(), f);
        assert!(matches!(parse_flo(&b[..30], intr(3, 2)), Err(Error::Truncated(_))));
        let mut bad = b.clone();
        bad[0] ^= 1;
        assert!(matches!(parse_flo(&bad, intr(3, 2)), Err(Error::Format(_))));
    }

    #[test]
    fn depth_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let i = intr(4, 3);
        let pose = CameraPose::new(Vec3::new(1.0, 2.0, 3.0), 0.3);
        let d = DepthImage {
            values: (0..12).map(|k| k as f32 * 2.7).collect(),
            intrinsics: i,
            pose,
        };
        let p = dir.path().join("d.pgm");
        write_depth(&p, &d).unwrap();
        assert_eq!(read_depth(&p, i, pose).unwrap(), d);
        let pgm = std::fs::read(&p).unwrap();
        assert!(pgm.starts_with(b"P5\n4 3\n65535\n"));
        assert_eq!(pgm.len(), 13 + 24);
        // last pixel 29.7 m of 30 m
        let last = u16::from_be_bytes([pgm[35], pgm[36]]);
        assert_eq!(last, (29.7f64 / 30.0 * 65535.0).round() as u16);
        let side = std::fs::read(sidecar_path(&p)).unwrap();
        assert_eq!(&side[0..4], b"DPTH");
        assert_eq!(&side[4..8], &4u32.to_le_bytes());
    }

    #[test]
    fn scene_file_round_trip() {
        let s = generate_scene(12, &GenConfig::default()).unwrap();
        let text = scene_to_string(&s).unwrap();
        assert_eq!(scene_from_str(&text).unwrap(), s);
        assert!(matches!(scene_from_str("{"), Err(Error::Format(_))));
    }

    #[test]
    fn trajectory_round_trip() {
        let steps: Vec<StepLog> = (0..5)
            .map(|k| StepLog {
                t: k as f64 / 15.0,
                position: Vec3::new(0.1 * k as f64, 1.0 / 3.0, -2.5e-7),
                velocity: Vec3::new(1.0, 2.0, 3.0),
                acceleration: Vec3::new(-0.1, 0.0, 1e10),
                command: Vec3::new(0.3, 0.2, 0.1),
                yaw: 0.7,
                v_ref: Vec3::new(3.0, 0.0, 0.0),
                smoothed_velocity: Vec3::new(0.9, 1.8, 2.7),
                distance: if k == 4 { f64::INFINITY } else { 1.25 },
                approach: 0.0,
                status: if k == 4 { Termination::Collided } else { Termination::Running },
            })
            .collect();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &steps).unwrap();
        assert_eq!(read_trajectory(&buf[..]).unwrap(), steps);
    }
}
