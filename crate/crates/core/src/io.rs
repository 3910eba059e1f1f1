//! Text formats for IMU streams, scans and trajectories.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Quat, Vec3};
use crate::imu::ImuSample;
use crate::scan::{FeatureLabel, RawScan, ScanPoint};

pub const IMU_HEADER: &str = "t,wx,wy,wz,ax,ay,az";
pub const SCAN_HEADER: &str = "t,x,y,z,ring,label";

/// Timestamped pose, scalar-last quaternion on disk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedPose {
    pub t: f64,
    pub position: Vec3,
    pub rotation: Quat,
}

fn parse_fields<const N: usize>(line: &str, sep: impl Fn(char) -> bool, lineno: usize) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    let mut it = line.split(sep).filter(|s| !s.is_empty());
    for (i, slot) in out.iter_mut().enumerate() {
        let field = it.next().ok_or_else(|| Error::Parse {
            line: lineno,
            message: format!("expected {N} fields, found {i}"),
        })?;
        *slot = field.trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("invalid number `{}`", field.trim()),
        })?;
    }
    if it.next().is_some() {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected {N} fields, found more"),
        });
    }
    Ok(out)
}

fn data_lines<'a>(text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, &'a str)>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, h)) if h == header => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{header}`, got `{h}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    Ok(lines.filter(|(_, l)| !l.is_empty()))
}

pub fn format_imu_csv(samples: &[ImuSample]) -> String {
    let mut out = String::with_capacity(samples.len() * 120);
    out.push_str(IMU_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(
            out,
            "{:.9},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12}",
            s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z
        );
    }
    out
}

pub fn parse_imu_csv(text: &str) -> Result<Vec<ImuSample>> {
    data_lines(text, IMU_HEADER)?
        .map(|(n, line)| {
            let f = parse_fields::<7>(line, |c| c == ',', n)?;
            Ok(ImuSample::new(f[0], Vec3::new(f[1], f[2], f[3]), Vec3::new(f[4], f[5], f[6])))
        })
        .collect()
}

pub fn format_scan_csv(scan: &RawScan) -> String {
    let mut out = String::with_capacity(scan.points.len() * 80);
    out.push_str(SCAN_HEADER);
    out.push('\n');
    for p in &scan.points {
        let label = p.label.map_or(-1, FeatureLabel::code);
        let _ = writeln!(
            out,
            "{:.9},{:.12},{:.12},{:.12},{},{}",
            p.t, p.p.x, p.p.y, p.p.z, p.ring, label
        );
    }
    out
}

pub fn parse_scan_csv(text: &str) -> Result<RawScan> {
    let mut points = Vec::new();
    for (n, line) in data_lines(text, SCAN_HEADER)? {
        let f = parse_fields::<6>(line, |c| c == ',', n)?;
        let err = |message: String| Error::Parse { line: n, message };
        if f[4] < 0.0 || f[4].fract() != 0.0 || f[4] > u32::MAX as f64 {
            return Err(err(format!("invalid ring `{}`", f[4])));
        }
        let label = match f[5] {
            -1.0 => None,
            l if l.fract() == 0.0 => {
                Some(FeatureLabel::from_code(l as i32).ok_or_else(|| err(format!("invalid label `{l}`")))?)
            }
            l => return Err(err(format!("invalid label `{l}`"))),
        };
        points.push(ScanPoint {
            t: f[0],
            p: Vec3::new(f[1], f[2], f[3]),
            ring: f[4] as u32,
            label,
        });
    }
    RawScan::from_points(points).ok_or_else(|| Error::Parse {
        line: 1,
        message: "scan needs at least two distinct point times".into(),
    })
}

pub fn format_trajectory(poses: &[StampedPose]) -> String {
    let mut out = String::with_capacity(poses.len() * 140);
    for p in poses {
        let q = p.rotation;
        let _ = writeln!(
            out,
            "{:.9} {:.12} {:.12} {:.12} {:.12} {:.12} {:.12} {:.12}",
            p.t,
            p.position.x,
            p.position.y,
            p.position.z,
            q.x(),
            q.y(),
            q.z(),
            q.w()
        );
    }
    out
}

/// Lines `t x y z qx qy qz qw`; blank lines and `#` comments are skipped.
pub fn parse_trajectory(text: &str) -> Result<Vec<StampedPose>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(n, line)| {
            let f = parse_fields::<8>(line, char::is_whitespace, n)?;
            let norm = (f[4] * f[4] + f[5] * f[5] + f[6] * f[6] + f[7] * f[7]).sqrt();
            if !(norm > 1e-6) {
                return Err(Error::Parse {
                    line: n,
                    message: "zero quaternion".into(),
                });
            }
            Ok(StampedPose {
                t: f[0],
                position: Vec3::new(f[1], f[2], f[3]),
                rotation: Quat::new(f[7], f[4], f[5], f[6]),
            })
        })
        .collect()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(crate::error::IoError(format!("{}: {e}", path.display()))))
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    parse_imu_csv(&read(path)?)
}

pub fn read_scan_csv(path: &Path) -> Result<RawScan> {
    parse_scan_csv(&read(path)?)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<StampedPose>> {
    parse_trajectory(&read(path)?)
}

pub fn scan_file_name(index: usize) -> String {
    format!("scan_{index:06}.csv")
}

/// Reads every `scan_*.csv` in `dir`, ordered by file name.
pub fn read_scan_dir(dir: &Path) -> Result<Vec<RawScan>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io(crate::error::IoError(format!("{}: {e}", dir.display()))))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scan_") && n.ends_with(".csv"))
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Io(crate::error::IoError(format!(
            "{}: no scan_*.csv files",
            dir.display()
        ))));
    }
    names.iter().map(|p| read_scan_csv(p)).collect()
}
