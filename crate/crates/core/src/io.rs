//! Plain-text stream and document formats.
//!
//! Every file starts with a header line `<schema> v1 [key=value ...]`,
//! followed by one record per line with single-space separated fields.
//! Blank lines and lines starting with `#` are ignored. Floats are written
//! with 9 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::camera::{Camera, KeypointSequence, Pixel};
use crate::error::{Error, Result};
use crate::imu::{CalibrationSet, ImuSample, ImuStream, SensorCalibration};
use crate::rotmath::{Rotation, Vec3};
use crate::skeleton::{Pose, PoseSequence, SkeletonDefinition};

pub const VERSION: &str = "v1";

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.8e}")
    }
}

fn push_floats(line: &mut String, values: &[f64]) {
    for v in values {
        line.push(' ');
        line.push_str(&fmt_f64(*v));
    }
}

fn wxyz(r: &Rotation) -> [f64; 4] {
    r.wxyz()
}

/// A tokenized record with its 1-based line number.
struct Record<'a> {
    line: usize,
    fields: Vec<&'a str>,
}

struct Doc<'a> {
    path: &'a str,
    header: BTreeMap<&'a str, &'a str>,
    records: Vec<Record<'a>>,
}

impl<'a> Doc<'a> {
    fn parse(text: &'a str, path: &'a str, schema: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let expected = format!("{schema} {VERSION}");
        let (hline, head) = lines.next().ok_or_else(|| Error::Version {
            path: path.into(),
            found: String::new(),
            expected: expected.clone(),
        })?;
        let mut tokens = head.split(' ');
        if tokens.next() != Some(schema) || tokens.next() != Some(VERSION) {
            return Err(Error::Version {
                path: path.into(),
                found: head.into(),
                expected,
            });
        }
        let mut header = BTreeMap::new();
        for t in tokens {
            let (k, v) = t.split_once('=').ok_or_else(|| Error::Parse {
                path: path.into(),
                line: hline,
                message: format!("header field `{t}` is not key=value"),
            })?;
            header.insert(k, v);
        }
        let records = lines
            .map(|(line, l)| Record {
                line,
                fields: l.split(' ').collect(),
            })
            .collect();
        Ok(Self {
            path,
            header,
            records,
        })
    }

    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.into(),
            line,
            message: message.into(),
        }
    }

    fn header_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .header
            .get(key)
            .ok_or_else(|| self.error(1, format!("header is missing `{key}=`")))?;
        v.parse()
            .map_err(|_| self.error(1, format!("header value `{key}={v}` is invalid")))
    }

    fn fps(&self) -> Result<f64> {
        let fps: f64 = self.header_value("fps")?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(self.error(1, "fps must be positive"));
        }
        Ok(fps)
    }

    fn float(&self, r: &Record, i: usize) -> Result<f64> {
        let s = r.fields[i];
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(
                r.line,
                format!("field {} `{s}` is not a finite number", i + 1),
            )),
        }
    }

    fn floats<const N: usize>(&self, r: &Record, start: usize) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for (k, v) in out.iter_mut().enumerate() {
            *v = self.float(r, start + k)?;
        }
        Ok(out)
    }

    fn int<T: std::str::FromStr>(&self, r: &Record, i: usize, what: &str) -> Result<T> {
        r.fields[i].parse().map_err(|_| {
            self.error(
                r.line,
                format!("{what} `{}` is not a valid index", r.fields[i]),
            )
        })
    }

    fn arity(&self, r: &Record, n: usize) -> Result<()> {
        if r.fields.len() != n {
            return Err(self.error(
                r.line,
                format!("expected {n} fields, found {}", r.fields.len()),
            ));
        }
        Ok(())
    }

    fn rotation(&self, r: &Record, start: usize) -> Result<Rotation> {
        let [w, x, y, z] = self.floats::<4>(r, start)?;
        Rotation::from_wxyz(w, x, y, z).map_err(|e| self.error(r.line, e.to_string()))
    }

    /// Checks that frame indices of sequential records count up from 0.
    fn frame_index(&self, r: &Record, expected: usize) -> Result<()> {
        let idx: usize = self.int(r, 0, "frame index")?;
        if idx != expected {
            return Err(self.error(r.line, format!("frame index {idx}, expected {expected}")));
        }
        Ok(())
    }
}

pub fn write_pose3d(seq: &PoseSequence) -> String {
    let mut s = format!(
        "pose3d {VERSION} joints={} fps={}\n",
        seq.joints(),
        fmt_f64(seq.fps)
    );
    for (i, p) in seq.frames.iter().enumerate() {
        let mut line = i.to_string();
        for x in &p.positions {
            push_floats(&mut line, &[x.x, x.y, x.z]);
        }
        s.push_str(&line);
        s.push('\n');
    }
    s
}

pub fn parse_pose3d(text: &str, path: &str) -> Result<PoseSequence> {
    let doc = Doc::parse(text, path, "pose3d")?;
    let joints: usize = doc.header_value("joints")?;
    let fps = doc.fps()?;
    let frames = doc
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            doc.arity(r, 1 + 3 * joints)?;
            doc.frame_index(r, i)?;
            let positions = (0..joints)
                .map(|j| doc.floats::<3>(r, 1 + 3 * j).map(Vec3::from))
                .collect::<Result<Vec<_>>>()?;
            Ok(Pose::new(positions))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PoseSequence::new(fps, frames))
}

pub fn write_pose2d(seq: &KeypointSequence, joints: usize) -> String {
    let mut s = format!(
        "pose2d {VERSION} joints={joints} fps={}\n",
        fmt_f64(seq.fps)
    );
    for (i, frame) in seq.frames.iter().enumerate() {
        let mut line = i.to_string();
        for kp in frame {
            match kp {
                Some(p) => push_floats(&mut line, &[p.x, p.y]),
                None => line.push_str(" nan nan"),
            }
        }
        s.push_str(&line);
        s.push('\n');
    }
    s
}

pub fn parse_pose2d(text: &str, path: &str) -> Result<KeypointSequence> {
    let doc = Doc::parse(text, path, "pose2d")?;
    let joints: usize = doc.header_value("joints")?;
    let fps = doc.fps()?;
    let frames = doc
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            doc.arity(r, 1 + 2 * joints)?;
            doc.frame_index(r, i)?;
            (0..joints)
                .map(|j| {
                    let (a, b) = (r.fields[1 + 2 * j], r.fields[2 + 2 * j]);
                    if a == "nan" && b == "nan" {
                        Ok(None)
                    } else {
                        let [x, y] = doc.floats::<2>(r, 1 + 2 * j)?;
                        Ok(Some(Pixel::new(x, y)))
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KeypointSequence { fps, frames })
}

pub fn write_imu(stream: &ImuStream) -> String {
    let sensors = stream.frames.iter().map(Vec::len).max().unwrap_or(0);
    let mut s = format!(
        "imu {VERSION} frames={} sensors={sensors} fps={}\n",
        stream.frames.len(),
        fmt_f64(stream.fps)
    );
    for (i, frame) in stream.frames.iter().enumerate() {
        for sample in frame {
            let mut line = format!("{i} {}", sample.sensor);
            push_floats(&mut line, &wxyz(&sample.orientation));
            let a = sample.acceleration;
            push_floats(&mut line, &[a.x, a.y, a.z]);
            s.push_str(&line);
            s.push('\n');
        }
    }
    s
}

pub fn parse_imu(text: &str, path: &str) -> Result<ImuStream> {
    let doc = Doc::parse(text, path, "imu")?;
    let n: usize = doc.header_value("frames")?;
    let fps = doc.fps()?;
    let mut frames: Vec<Vec<ImuSample>> = vec![Vec::new(); n];
    let mut last = 0;
    for r in &doc.records {
        doc.arity(r, 9)?;
        let frame: usize = doc.int(r, 0, "frame index")?;
        if frame >= n {
            return Err(doc.error(
                r.line,
                format!("frame {frame} beyond the {n} frames declared"),
            ));
        }
        if frame < last {
            return Err(doc.error(r.line, format!("frame {frame} after frame {last}")));
        }
        last = frame;
        let sensor: u32 = doc.int(r, 1, "sensor id")?;
        if frames[frame].iter().any(|s| s.sensor == sensor) {
            return Err(doc.error(r.line, format!("duplicate sample for sensor {sensor}")));
        }
        frames[frame].push(ImuSample {
            sensor,
            orientation: doc.rotation(r, 2)?,
            acceleration: Vec3::from(doc.floats::<3>(r, 6)?),
        });
    }
    Ok(ImuStream { fps, frames })
}

pub fn write_skeleton(skel: &SkeletonDefinition) -> String {
    let mut s = format!("skeleton {VERSION} joints={}\n", skel.len());
    for j in 0..skel.len() {
        let parent = skel
            .parent(j)
            .map_or("-".to_string(), |p| skel.name(p).to_string());
        let x = skel.tpose()[j];
        let mut line = format!("joint {} {parent}", skel.name(j));
        push_floats(&mut line, &[x.x, x.y, x.z]);
        s.push_str(&line);
        s.push('\n');
    }
    s
}

pub fn parse_skeleton(text: &str, path: &str) -> Result<SkeletonDefinition> {
    let doc = Doc::parse(text, path, "skeleton")?;
    let (mut names, mut parents, mut tpose) = (Vec::new(), Vec::new(), Vec::new());
    for r in &doc.records {
        doc.arity(r, 6)?;
        if r.fields[0] != "joint" {
            return Err(doc.error(r.line, format!("unknown key `{}`", r.fields[0])));
        }
        let parent =
            match r.fields[2] {
                "-" => None,
                p => Some(names.iter().position(|n: &String| n == p).ok_or_else(|| {
                    doc.error(r.line, format!("parent `{p}` is not defined above"))
                })?),
            };
        names.push(r.fields[1].to_string());
        parents.push(parent);
        tpose.push(Vec3::from(doc.floats::<3>(r, 3)?));
    }
    SkeletonDefinition::new(names, parents, tpose).map_err(|e| doc.error(1, e.to_string()))
}

/// Sensor calibration and (optionally) the camera.
pub fn write_calibration(
    calib: &CalibrationSet,
    camera: Option<&Camera>,
    skel: &SkeletonDefinition,
) -> String {
    let mut s = format!("calibration {VERSION}\n");
    let mut line = "gravity".to_string();
    push_floats(
        &mut line,
        &[calib.gravity.x, calib.gravity.y, calib.gravity.z],
    );
    s.push_str(&line);
    s.push('\n');
    if let Some(c) = camera {
        let mut line = "camera".to_string();
        push_floats(&mut line, &[c.fx, c.fy, c.cx, c.cy]);
        push_floats(&mut line, &wxyz(&c.rotation));
        push_floats(
            &mut line,
            &[c.translation.x, c.translation.y, c.translation.z],
        );
        s.push_str(&line);
        s.push('\n');
    }
    for sc in calib.sensors() {
        let mut line = format!("sensor {} {}", sc.id, skel.name(sc.joint));
        push_floats(&mut line, &wxyz(&sc.r_kg));
        push_floats(&mut line, &wxyz(&sc.r_kj));
        s.push_str(&line);
        s.push('\n');
    }
    s
}

pub fn parse_calibration(
    text: &str,
    path: &str,
    skel: &SkeletonDefinition,
) -> Result<(CalibrationSet, Option<Camera>)> {
    let doc = Doc::parse(text, path, "calibration")?;
    let mut gravity = None;
    let mut camera = None;
    let mut sensors = Vec::new();
    for r in &doc.records {
        match r.fields[0] {
            "gravity" => {
                doc.arity(r, 4)?;
                gravity = Some(Vec3::from(doc.floats::<3>(r, 1)?));
            }
            "camera" => {
                doc.arity(r, 12)?;
                let [fx, fy, cx, cy] = doc.floats::<4>(r, 1)?;
                if !(fx > 0.0 && fy > 0.0) {
                    return Err(doc.error(r.line, "focal lengths must be positive"));
                }
                camera = Some(Camera {
                    fx,
                    fy,
                    cx,
                    cy,
                    rotation: doc.rotation(r, 5)?,
                    translation: Vec3::from(doc.floats::<3>(r, 9)?),
                });
            }
            "sensor" => {
                doc.arity(r, 11)?;
                let id: u32 = doc.int(r, 1, "sensor id")?;
                let joint = skel
                    .index_of(r.fields[2])
                    .ok_or_else(|| doc.error(r.line, format!("unknown joint `{}`", r.fields[2])))?;
                sensors.push(SensorCalibration {
                    id,
                    joint,
                    r_kg: doc.rotation(r, 3)?,
                    r_kj: doc.rotation(r, 7)?,
                });
            }
            other => return Err(doc.error(r.line, format!("unknown key `{other}`"))),
        }
    }
    let gravity = gravity.ok_or_else(|| doc.error(1, "missing `gravity` line"))?;
    let calib =
        CalibrationSet::new(skel, sensors, gravity).map_err(|e| doc.error(1, e.to_string()))?;
    Ok((calib, camera))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_pose3d(path: &Path) -> Result<PoseSequence> {
    parse_pose3d(&read_text(path)?, &path.display().to_string())
}

pub fn load_pose2d(path: &Path) -> Result<KeypointSequence> {
    parse_pose2d(&read_text(path)?, &path.display().to_string())
}

pub fn load_imu(path: &Path) -> Result<ImuStream> {
    parse_imu(&read_text(path)?, &path.display().to_string())
}

pub fn load_skeleton(path: &Path) -> Result<SkeletonDefinition> {
    parse_skeleton(&read_text(path)?, &path.display().to_string())
}

pub fn load_calibration(
    path: &Path,
    skel: &SkeletonDefinition,
) -> Result<(CalibrationSet, Option<Camera>)> {
    parse_calibration(&read_text(path)?, &path.display().to_string(), skel)
}

/// Per-frame error table: frame index, mean position error and the mean
/// acceleration/jitter errors of the stencils ending at that frame (`nan`
/// where undefined).
pub fn write_frame_metrics(
    pred: &PoseSequence,
    gt: &PoseSequence,
    per_second: bool,
) -> Result<String> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(format!(
            "{} vs {} frames",
            pred.len(),
            gt.len()
        )));
    }
    let fps = gt.fps;
    let (sa, sj) = if per_second {
        (fps * fps, fps * fps * fps)
    } else {
        (1.0, 1.0)
    };
    let diff = |i: usize, j: usize| pred.frames[i].positions[j] - gt.frames[i].positions[j];
    let mut s = format!(
        "frame_metrics {VERSION} frames={} per_second={per_second}\n",
        pred.len()
    );
    for i in 0..pred.len() {
        let joints = pred.frames[i].len();
        let mean =
            |f: &dyn Fn(usize) -> f64| (0..joints).map(f).sum::<f64>() / joints.max(1) as f64;
        let pe = mean(&|j| diff(i, j).norm());
        let ae = if i >= 2 {
            mean(&|j| (diff(i, j) - diff(i - 1, j) * 2.0 + diff(i - 2, j)).norm()) * sa
        } else {
            f64::NAN
        };
        let je = if i >= 3 {
            mean(&|j| {
                (diff(i, j) - diff(i - 1, j) * 3.0 + diff(i - 2, j) * 3.0 - diff(i - 3, j)).norm()
            }) * sj
        } else {
            f64::NAN
        };
        let mut line = i.to_string();
        push_floats(&mut line, &[pe, ae, je]);
        let _ = writeln!(s, "{line}");
    }
    Ok(s)
}
