//! Recorded-session loader. A session directory holds three interchange
//! files — skeleton poses, wrist accelerometer, and activity labels — whose
//! names, rates, and column roles come from a layout descriptor rather than
//! being hard-coded, since on-disk layouts vary between dataset releases.
//!
//! Descriptor keys (`key = value` text):
//!
//! | key                    | meaning                                          |
//! |------------------------|--------------------------------------------------|
//! | `files.pose`           | pose file name, columns `t, <joint>_x/_y/_z …`   |
//! | `files.accel`          | accelerometer file name, columns `t,x,y,z`       |
//! | `files.labels`         | label file name, columns `start_s,end_s,class`   |
//! | `pose.rate_hz`         | declared pose rate                               |
//! | `accel.rate_hz`        | declared accelerometer rate                      |
//! | `pose.joints`          | comma-separated joint names in column order      |
//! | `align.tolerance_s`    | max start/end time mismatch between streams (0.5)|
//! | `labels.default_class` | class for samples no interval covers (optional;  |
//! |                        | without it uncovered samples are an error)       |
//!
//! The loader cross-checks everything the descriptor declares against the
//! files: joint count vs. pose columns, declared vs. actual sample rates
//! (5% tolerance), and the two streams' time ranges.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::interchange::read_interchange;
use crate::io::kv::{parse_kv, parse_list, parse_value};
use crate::preprocessing::{PoseSequence, SensorSequence, REQUIRED_JOINTS};

/// Parsed layout descriptor for one session directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDescriptor {
    pub pose_file: String,
    pub accel_file: String,
    pub labels_file: String,
    pub pose_rate_hz: f64,
    pub accel_rate_hz: f64,
    pub joints: Vec<String>,
    pub align_tolerance_s: f64,
    pub default_class: Option<usize>,
}

pub fn load_descriptor(path: &Path) -> Result<SessionDescriptor> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read descriptor {}: {e}", path.display())))?;
    parse_descriptor(&text)
}

pub fn parse_descriptor(text: &str) -> Result<SessionDescriptor> {
    const WHAT: &str = "session descriptor";
    let mut kv = parse_kv(text, WHAT)?;
    let desc = SessionDescriptor {
        pose_file: kv.require("files.pose", WHAT)?.to_string(),
        accel_file: kv.require("files.accel", WHAT)?.to_string(),
        labels_file: kv.require("files.labels", WHAT)?.to_string(),
        pose_rate_hz: parse_value(kv.require("pose.rate_hz", WHAT)?, "pose.rate_hz", WHAT)?,
        accel_rate_hz: parse_value(kv.require("accel.rate_hz", WHAT)?, "accel.rate_hz", WHAT)?,
        joints: parse_list(kv.require("pose.joints", WHAT)?, "pose.joints", WHAT)?,
        align_tolerance_s: match kv.take("align.tolerance_s") {
            Some(v) => parse_value(v, "align.tolerance_s", WHAT)?,
            None => 0.5,
        },
        default_class: match kv.take("labels.default_class") {
            Some(v) => Some(parse_value(v, "labels.default_class", WHAT)?),
            None => None,
        },
    };
    kv.reject_unknown(WHAT)?;
    if desc.pose_rate_hz <= 0.0 || desc.accel_rate_hz <= 0.0 || desc.align_tolerance_s < 0.0 {
        return Err(Error::Config(
            "session descriptor: rates must be positive and the tolerance non-negative".into(),
        ));
    }
    for required in REQUIRED_JOINTS {
        if !desc.joints.iter().any(|j| j == required) {
            return Err(Error::Config(format!(
                "session descriptor: pose.joints lacks required joint {required:?}"
            )));
        }
    }
    Ok(desc)
}

/// Load one session: poses, accelerometer, and per-accelerometer-sample
/// labels, each at its native rate.
pub fn load_mmfit_session(
    dir: &Path,
    desc: &SessionDescriptor,
) -> Result<(PoseSequence, SensorSequence, Vec<usize>)> {
    let pose_path = dir.join(&desc.pose_file);
    let accel_path = dir.join(&desc.accel_file);
    let labels_path = dir.join(&desc.labels_file);
    for (path, modality) in [
        (&pose_path, "pose"),
        (&accel_path, "accelerometer"),
        (&labels_path, "label"),
    ] {
        if !path.is_file() {
            return Err(Error::Data(format!(
                "missing {modality} modality: {} does not exist",
                path.display()
            )));
        }
    }

    let pose_m = read_interchange(&pose_path)?;
    let expected = 1 + 3 * desc.joints.len();
    if pose_m.columns().len() != expected {
        return Err(Error::Data(format!(
            "{}: {} columns, but the descriptor's {} joints need {expected} (time + 3 per joint)",
            pose_path.display(),
            pose_m.columns().len(),
            desc.joints.len()
        )));
    }
    check_rate(&pose_m.times().collect::<Vec<_>>(), desc.pose_rate_hz, &pose_path)?;
    let mut pose_data = Vec::with_capacity(pose_m.n_rows() * 3 * desc.joints.len());
    for i in 0..pose_m.n_rows() {
        pose_data.extend_from_slice(&pose_m.row(i)[1..]);
    }
    let pose = PoseSequence::new(desc.pose_rate_hz, desc.joints.clone(), pose_data)?;

    let accel_m = read_interchange(&accel_path)?;
    if accel_m.columns().len() != 4 {
        return Err(Error::Data(format!(
            "{}: accelerometer files need 4 columns (time + 3 axes), got {}",
            accel_path.display(),
            accel_m.columns().len()
        )));
    }
    let accel_times: Vec<f64> = accel_m.times().collect();
    check_rate(&accel_times, desc.accel_rate_hz, &accel_path)?;
    let mut accel_data = Vec::with_capacity(accel_m.n_rows() * 3);
    for i in 0..accel_m.n_rows() {
        accel_data.extend_from_slice(&accel_m.row(i)[1..]);
    }
    let accel = SensorSequence::new(desc.accel_rate_hz, accel_data)?;

    // The two streams must describe the same stretch of time.
    let (p0, p1) = (pose_m.row(0)[0], pose_m.row(pose_m.n_rows() - 1)[0]);
    let (a0, a1) = (accel_times[0], *accel_times.last().unwrap());
    if (p0 - a0).abs() > desc.align_tolerance_s || (p1 - a1).abs() > desc.align_tolerance_s {
        return Err(Error::Data(format!(
            "misaligned time ranges: pose covers [{p0}, {p1}] s, accelerometer [{a0}, {a1}] s \
             (tolerance {} s)",
            desc.align_tolerance_s
        )));
    }

    let labels = rasterize_labels(&labels_path, &accel_times, desc)?;
    Ok((pose, accel, labels))
}

/// Declared vs. actual mean rate, within 5%.
fn check_rate(times: &[f64], declared_hz: f64, path: &Path) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least 2 samples",
            path.display()
        )));
    }
    let span = times[times.len() - 1] - times[0];
    let actual = (times.len() - 1) as f64 / span;
    if (actual - declared_hz).abs() > 0.05 * declared_hz {
        return Err(Error::Data(format!(
            "{}: declared rate {declared_hz} Hz but timestamps imply {actual:.2} Hz",
            path.display()
        )));
    }
    Ok(())
}

/// Turn `(start_s, end_s, class)` intervals into one label per
/// accelerometer sample. Intervals must be non-overlapping and in order;
/// a sample outside every interval takes the descriptor's default class.
fn rasterize_labels(
    path: &Path,
    sample_times: &[f64],
    desc: &SessionDescriptor,
) -> Result<Vec<usize>> {
    let m = read_interchange(path)?;
    if m.columns() != ["start_s", "end_s", "class"] {
        return Err(Error::Data(format!(
            "{}: label files need columns start_s,end_s,class, got {:?}",
            path.display(),
            m.columns()
        )));
    }
    let mut intervals = Vec::with_capacity(m.n_rows());
    let mut prev_end = f64::NEG_INFINITY;
    for i in 0..m.n_rows() {
        let row = m.row(i);
        let (start, end, class) = (row[0], row[1], row[2]);
        if end <= start {
            return Err(Error::Data(format!(
                "{}: interval {i} ends at {end} s, before its start {start} s",
                path.display()
            )));
        }
        if start < prev_end {
            return Err(Error::Data(format!(
                "{}: interval {i} starting at {start} s overlaps the previous one",
                path.display()
            )));
        }
        if class < 0.0 || class.fract() != 0.0 {
            return Err(Error::Data(format!(
                "{}: interval {i} has class {class}, expected a non-negative integer",
                path.display()
            )));
        }
        prev_end = end;
        intervals.push((start, end, class as usize));
    }

    let mut labels = Vec::with_capacity(sample_times.len());
    let mut cursor = 0;
    for &t in sample_times {
        while cursor < intervals.len() && intervals[cursor].1 <= t {
            cursor += 1;
        }
        let hit = intervals
            .get(cursor)
            .filter(|&&(start, _, _)| start <= t)
            .map(|&(_, _, class)| class);
        match hit.or(desc.default_class) {
            Some(class) => labels.push(class),
            None => {
                return Err(Error::Data(format!(
                    "{}: sample at {t} s is covered by no label interval and the descriptor \
                     names no labels.default_class",
                    path.display()
                )))
            }
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::interchange::{write_interchange, InterchangeMatrix};
    use crate::preprocessing::{make_windows, normalize_skeleton};

    fn write_fixture(dir: &Path) -> SessionDescriptor {
        let joints = ["wrist", "elbow", "shoulder", "neck", "midhip"];
        // 4 s of poses at 30 Hz: a slowly moving arm over fixed torso joints.
        let mut pose_rows = Vec::new();
        for f in 0..121 {
            let t = f as f64 / 30.0;
            let swing = (t * std::f64::consts::TAU).sin();
            let mut row = vec![t];
            for (j, _) in joints.iter().enumerate() {
                let (x, y, z) = match j {
                    0 => (0.4 + 0.2 * swing, 1.3, 0.1),
                    1 => (0.3 + 0.1 * swing, 1.4, 0.05),
                    2 => (0.2, 1.5, 0.0),
                    3 => (0.0, 1.6, 0.0),
                    _ => (0.0, 1.0, 0.0),
                };
                row.extend_from_slice(&[x, y, z]);
            }
            pose_rows.push(row);
        }
        let mut pose_cols = vec!["t".to_string()];
        for j in joints {
            for c in ["x", "y", "z"] {
                pose_cols.push(format!("{j}_{c}"));
            }
        }
        write_interchange(
            &dir.join("pose.csv"),
            &InterchangeMatrix::new(pose_cols, pose_rows).unwrap(),
        )
        .unwrap();

        // 4 s of accelerometer at 100 Hz.
        let accel_rows: Vec<Vec<f64>> = (0..401)
            .map(|i| {
                let t = i as f64 / 100.0;
                vec![t, (t * 7.0).sin(), (t * 5.0).cos(), 0.2]
            })
            .collect();
        write_interchange(
            &dir.join("accel.csv"),
            &InterchangeMatrix::new(
                vec!["t".into(), "x".into(), "y".into(), "z".into()],
                accel_rows,
            )
            .unwrap(),
        )
        .unwrap();

        write_interchange(
            &dir.join("labels.csv"),
            &InterchangeMatrix::new(
                vec!["start_s".into(), "end_s".into(), "class".into()],
                vec![vec![0.0, 2.0, 0.0], vec![2.0, 4.05, 1.0]],
            )
            .unwrap(),
        )
        .unwrap();

        parse_descriptor(
            "files.pose = pose.csv\n\
             files.accel = accel.csv\n\
             files.labels = labels.csv\n\
             pose.rate_hz = 30\n\
             accel.rate_hz = 100\n\
             pose.joints = wrist, elbow, shoulder, neck, midhip\n",
        )
        .unwrap()
    }

    #[test]
    fn fixture_session_round_trips_through_preprocessing() {
        let dir = tempfile::tempdir().unwrap();
        let desc = write_fixture(dir.path());
        let (pose, accel, labels) = load_mmfit_session(dir.path(), &desc).unwrap();
        assert_eq!(pose.frames(), 121);
        assert_eq!(accel.len(), 401);
        assert_eq!(labels.len(), 401);
        assert_eq!(labels[0], 0);
        assert_eq!(labels[400], 1);

        // The loaded streams feed the standard pipeline: common rate,
        // body-frame normalization, then sliding windows.
        let pose = pose.resample(100.0).unwrap();
        let pose = normalize_skeleton(&pose, 3.0).unwrap();
        let windows = make_windows(&pose, &accel, &labels, 300, 100, "fixture").unwrap();
        assert_eq!(windows.len(), (401 - 300) / 100 + 1);
        assert_eq!(windows[0].label, 0);
    }

    #[test]
    fn missing_accelerometer_file_names_the_modality() {
        let dir = tempfile::tempdir().unwrap();
        let desc = write_fixture(dir.path());
        std::fs::remove_file(dir.path().join("accel.csv")).unwrap();
        let err = load_mmfit_session(dir.path(), &desc).unwrap_err().to_string();
        assert!(err.contains("missing accelerometer modality"), "{err}");
    }

    #[test]
    fn wrong_joint_count_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut desc = write_fixture(dir.path());
        desc.joints.push("head".into());
        let err = load_mmfit_session(dir.path(), &desc).unwrap_err().to_string();
        assert!(err.contains("6 joints"), "{err}");
    }

    #[test]
    fn descriptor_must_cover_required_joints() {
        let err = parse_descriptor(
            "files.pose = p\nfiles.accel = a\nfiles.labels = l\n\
             pose.rate_hz = 30\naccel.rate_hz = 100\n\
             pose.joints = wrist, elbow, shoulder, neck\n",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("midhip"), "{err}");
    }

    #[test]
    fn misaligned_streams_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let desc = write_fixture(dir.path());
        // Rewrite the accelerometer shifted 2 s late: same rate, wrong range.
        let accel_rows: Vec<Vec<f64>> = (0..401)
            .map(|i| {
                let t = 2.0 + i as f64 / 100.0;
                vec![t, 0.0, 0.0, 0.0]
            })
            .collect();
        write_interchange(
            &dir.path().join("accel.csv"),
            &InterchangeMatrix::new(
                vec!["t".into(), "x".into(), "y".into(), "z".into()],
                accel_rows,
            )
            .unwrap(),
        )
        .unwrap();
        let err = load_mmfit_session(dir.path(), &desc).unwrap_err().to_string();
        assert!(err.contains("misaligned time ranges"), "{err}");
    }

    #[test]
    fn declared_rate_must_match_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let mut desc = write_fixture(dir.path());
        desc.accel_rate_hz = 50.0;
        let err = load_mmfit_session(dir.path(), &desc).unwrap_err().to_string();
        assert!(err.contains("declared rate 50"), "{err}");
    }

    #[test]
    fn uncovered_samples_need_a_default_class() {
        let dir = tempfile::tempdir().unwrap();
        let mut desc = write_fixture(dir.path());
        write_interchange(
            &dir.path().join("labels.csv"),
            &InterchangeMatrix::new(
                vec!["start_s".into(), "end_s".into(), "class".into()],
                vec![vec![0.0, 2.0, 1.0]],
            )
            .unwrap(),
        )
        .unwrap();
        let err = load_mmfit_session(dir.path(), &desc).unwrap_err().to_string();
        assert!(err.contains("no label interval"), "{err}");

        desc.default_class = Some(0);
        let (_, _, labels) = load_mmfit_session(dir.path(), &desc).unwrap();
        assert_eq!(labels[0], 1);
        assert_eq!(labels[400], 0);
    }
}
