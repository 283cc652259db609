//! Raw pose/sensor streams → aligned, normalized, windowed training samples.
//!
//! The pipeline per session: resample both modalities to a common rate,
//! normalize the skeleton into a body-relative [−1, 1] frame, standardize the
//! accelerometer channels with statistics fitted on the training split only,
//! then cut sliding windows with majority labels. Segmented clips (one label
//! per file) skip the windowing vote and are padded or cropped to length.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Canonical joint names used by the skeleton operations.
pub const JOINT_WRIST: &str = "wrist";
pub const JOINT_ELBOW: &str = "elbow";
pub const JOINT_SHOULDER: &str = "shoulder";
pub const JOINT_NECK: &str = "neck";
pub const JOINT_MIDHIP: &str = "midhip";

/// The joints every pose stream must carry: the regressor input arm chain
/// plus the two reference joints of the normalization.
pub const REQUIRED_JOINTS: [&str; 5] = [
    JOINT_WRIST,
    JOINT_ELBOW,
    JOINT_SHOULDER,
    JOINT_NECK,
    JOINT_MIDHIP,
];

/// Joints that become the regressor's input, in channel order.
pub const ARM_JOINTS: [&str; 3] = [JOINT_WRIST, JOINT_ELBOW, JOINT_SHOULDER];

/// 3D joint positions over time at a fixed rate, frame-major storage
/// `[frame][joint][coordinate]`.
#[derive(Debug, Clone)]
pub struct PoseSequence {
    rate: f64,
    joints: Vec<String>,
    frames: usize,
    data: Vec<f64>,
}

impl PoseSequence {
    pub fn new(rate: f64, joints: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if rate <= 0.0 {
            return Err(Error::Config(format!("pose rate must be positive, got {rate}")));
        }
        if joints.is_empty() || data.len() % (joints.len() * 3) != 0 {
            return Err(Error::Data(format!(
                "pose data length {} is not a multiple of 3 × {} joints",
                data.len(),
                joints.len()
            )));
        }
        let frames = data.len() / (joints.len() * 3);
        if frames < 2 {
            return Err(Error::Data(format!(
                "pose stream needs at least 2 frames, got {frames}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("pose stream contains non-finite coordinates".into()));
        }
        Ok(PoseSequence {
            rate,
            joints,
            frames,
            data,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn joint_index(&self, name: &str) -> Result<usize> {
        self.joints
            .iter()
            .position(|j| j == name)
            .ok_or_else(|| Error::Data(format!("pose stream is missing required joint {name}")))
    }

    pub fn position(&self, frame: usize, joint: usize) -> [f64; 3] {
        let base = (frame * self.joints.len() + joint) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    /// Linear resampling of every coordinate channel to `target_rate`.
    pub fn resample(&self, target_rate: f64) -> Result<PoseSequence> {
        let channels = self.joints.len() * 3;
        let data = resample_linear_channels(&self.data, channels, self.rate, target_rate)?;
        PoseSequence::new(target_rate, self.joints.clone(), data)
    }
}

/// 3-axis accelerometer samples at a fixed rate, sample-major storage
/// `[sample][axis]`.
#[derive(Debug, Clone)]
pub struct SensorSequence {
    rate: f64,
    len: usize,
    data: Vec<f64>,
}

impl SensorSequence {
    pub fn new(rate: f64, data: Vec<f64>) -> Result<Self> {
        if rate <= 0.0 {
            return Err(Error::Config(format!("sensor rate must be positive, got {rate}")));
        }
        if data.len() % 3 != 0 {
            return Err(Error::Data(format!(
                "sensor data length {} is not a multiple of 3 axes",
                data.len()
            )));
        }
        let len = data.len() / 3;
        if len < 2 {
            return Err(Error::Data(format!(
                "sensor stream needs at least 2 samples, got {len}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("sensor stream contains non-finite values".into()));
        }
        Ok(SensorSequence { rate, len, data })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sample(&self, i: usize) -> [f64; 3] {
        [self.data[i * 3], self.data[i * 3 + 1], self.data[i * 3 + 2]]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn resample(&self, target_rate: f64) -> Result<SensorSequence> {
        let data = resample_linear_channels(&self.data, 3, self.rate, target_rate)?;
        SensorSequence::new(target_rate, data)
    }
}

/// Linear interpolation of interleaved channels from `source_rate` to
/// `target_rate`. Output sample k lies at time k/target_rate; the output
/// covers [0, (n−1)/source_rate] with floor((n−1)·target/source)+1 samples,
/// and values at exact source timestamps are preserved.
pub fn resample_linear_channels(
    data: &[f64],
    channels: usize,
    source_rate: f64,
    target_rate: f64,
) -> Result<Vec<f64>> {
    if source_rate <= 0.0 || target_rate <= 0.0 {
        return Err(Error::Config(format!(
            "resample rates must be positive, got {source_rate} -> {target_rate}"
        )));
    }
    let n = data.len() / channels;
    if n < 2 {
        return Err(Error::Data(format!(
            "resampling needs at least 2 samples, got {n}"
        )));
    }
    let n_out = ((n - 1) as f64 * target_rate / source_rate).floor() as usize + 1;
    let step = source_rate / target_rate;
    let mut out = Vec::with_capacity(n_out * channels);
    for k in 0..n_out {
        let p = k as f64 * step;
        let i = (p.floor() as usize).min(n - 1);
        let frac = p - i as f64;
        let j = (i + 1).min(n - 1);
        for c in 0..channels {
            let a = data[i * channels + c];
            let b = data[j * channels + c];
            out.push(a + (b - a) * frac);
        }
    }
    Ok(out)
}

/// Nearest-neighbor resampling for categorical per-sample labels.
pub fn resample_labels_nearest(
    labels: &[usize],
    source_rate: f64,
    target_rate: f64,
) -> Result<Vec<usize>> {
    if source_rate <= 0.0 || target_rate <= 0.0 {
        return Err(Error::Config(format!(
            "resample rates must be positive, got {source_rate} -> {target_rate}"
        )));
    }
    let n = labels.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "resampling needs at least 2 samples, got {n}"
        )));
    }
    let n_out = ((n - 1) as f64 * target_rate / source_rate).floor() as usize + 1;
    let step = source_rate / target_rate;
    Ok((0..n_out)
        .map(|k| labels[((k as f64 * step).round() as usize).min(n - 1)])
        .collect())
}

fn median(scratch: &mut [f64]) -> f64 {
    let n = scratch.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (_, &mut hi, _) = scratch.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if n % 2 == 1 {
        hi
    } else {
        let lower = scratch[..mid]
            .iter()
            .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        (hi + lower) / 2.0
    }
}

/// Body-size reference at frame `t`: the median neck–midhip distance over a
/// window of `w_seconds` centered on `t`, clamped to the sequence bounds.
pub fn neck_midhip_scale(pose: &PoseSequence, t: usize, w_seconds: f64) -> Result<f64> {
    let neck = pose.joint_index(JOINT_NECK)?;
    let midhip = pose.joint_index(JOINT_MIDHIP)?;
    let half = (w_seconds / 2.0 * pose.rate).floor() as usize;
    let lo = t.saturating_sub(half);
    let hi = (t + half).min(pose.frames - 1);
    let mut dists: Vec<f64> = (lo..=hi)
        .map(|f| {
            let a = pose.position(f, neck);
            let b = pose.position(f, midhip);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        })
        .collect();
    let scale = median(&mut dists);
    if scale < 1e-6 {
        return Err(Error::Data(format!(
            "degenerate skeleton: neck–midhip scale {scale:e} at frame {t}"
        )));
    }
    Ok(scale)
}

/// Map a body-relative value into [−1, 1] relative to the scale reference:
/// −1 + 2·v/scale.
pub fn scale_value(v: f64, scale_t: f64) -> f64 {
    -1.0 + v / scale_t * 2.0
}

/// Skeleton normalization: every coordinate becomes
/// `scale_value(coord − midhip_coord, scale_t)`, putting the mid-hip at
/// (−1,−1,−1) and making the output invariant to global translation and to
/// uniform scaling of all coordinates.
pub fn normalize_skeleton(pose: &PoseSequence, w_seconds: f64) -> Result<PoseSequence> {
    let midhip = pose.joint_index(JOINT_MIDHIP)?;
    let n_joints = pose.joints.len();
    let mut out = vec![0.0; pose.data.len()];
    for t in 0..pose.frames {
        let scale_t = neck_midhip_scale(pose, t, w_seconds)?;
        let center = pose.position(t, midhip);
        for j in 0..n_joints {
            let p = pose.position(t, j);
            let base = (t * n_joints + j) * 3;
            for c in 0..3 {
                out[base + c] = scale_value(p[c] - center[c], scale_t);
            }
        }
    }
    PoseSequence::new(pose.rate, pose.joints.clone(), out)
}

/// Per-channel mean and standard deviation fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fit per-channel statistics (population standard deviation) over the
/// sensor tensors of the training windows, each shaped [channels, T].
pub fn standardize_fit(train_sensors: &[&Tensor<f32>]) -> Result<NormStats> {
    let first = train_sensors
        .first()
        .ok_or_else(|| Error::Data("standardization needs at least one training window".into()))?;
    let channels = first.shape()[0];
    let mut sum = vec![0.0f64; channels];
    let mut count = vec![0usize; channels];
    for s in train_sensors {
        let t = s.shape()[1];
        for c in 0..channels {
            for v in &s.data()[c * t..(c + 1) * t] {
                sum[c] += *v as f64;
            }
            count[c] += t;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    let mut sq = vec![0.0f64; channels];
    for s in train_sensors {
        let t = s.shape()[1];
        for c in 0..channels {
            for v in &s.data()[c * t..(c + 1) * t] {
                let d = *v as f64 - mean[c];
                sq[c] += d * d;
            }
        }
    }
    let std: Vec<f64> = sq.iter().zip(&count).map(|(s, &n)| (s / n as f64).sqrt()).collect();
    if let Some(c) = std.iter().position(|&s| s < 1e-12) {
        return Err(Error::Data(format!(
            "sensor channel {c} has zero standard deviation on the fit split"
        )));
    }
    Ok(NormStats { mean, std })
}

/// Apply fitted statistics to one sensor tensor [channels, T] in place.
pub fn standardize_apply(sensor: &mut Tensor<f32>, stats: &NormStats) {
    let t = sensor.shape()[1];
    for c in 0..stats.mean.len() {
        let (m, s) = (stats.mean[c] as f32, stats.std[c] as f32);
        for v in &mut sensor.data_mut()[c * t..(c + 1) * t] {
            *v = (*v - m) / s;
        }
    }
}

/// One training sample: aligned pose and sensor windows with an activity
/// label and its provenance.
#[derive(Debug, Clone)]
pub struct LabeledWindow {
    /// [coords = 3, joints = 3 (wrist, elbow, shoulder), T]
    pub pose: Tensor<f32>,
    /// [axes = 3, T]
    pub sensor: Tensor<f32>,
    pub label: usize,
    pub session: String,
    pub start: usize,
}

/// Majority label with ties broken by the lowest class index.
fn modal_label(labels: &[usize]) -> usize {
    let max = labels.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; max + 1];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (cls, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = cls;
        }
    }
    best
}

fn pose_window_tensor(pose: &PoseSequence, arm: &[usize; 3], start: usize, len: usize) -> Tensor<f32> {
    let mut data = vec![0.0f32; 3 * 3 * len];
    for (j, &joint) in arm.iter().enumerate() {
        for t in 0..len {
            let p = pose.position(start + t, joint);
            for c in 0..3 {
                data[(c * 3 + j) * len + t] = p[c] as f32;
            }
        }
    }
    Tensor::new(vec![3, 3, len], data).expect("sized above")
}

fn sensor_window_tensor(sensor: &SensorSequence, start: usize, len: usize) -> Tensor<f32> {
    let mut data = vec![0.0f32; 3 * len];
    for t in 0..len {
        let s = sensor.sample(start + t);
        for c in 0..3 {
            data[c * len + t] = s[c] as f32;
        }
    }
    Tensor::new(vec![3, len], data).expect("sized above")
}

/// Cut sliding windows from aligned pose/sensor streams with a per-sample
/// label track. The final partial window is dropped; each window's label is
/// the modal per-sample label.
pub fn make_windows(
    pose: &PoseSequence,
    sensor: &SensorSequence,
    labels: &[usize],
    window: usize,
    stride: usize,
    session: &str,
) -> Result<Vec<LabeledWindow>> {
    if stride == 0 || window == 0 {
        return Err(Error::Config(format!(
            "window and stride must be positive (window {window}, stride {stride})"
        )));
    }
    let n = pose.frames.min(sensor.len).min(labels.len());
    if n < window {
        return Err(Error::Data(format!(
            "stream of {n} aligned samples is shorter than one window of {window}"
        )));
    }
    let arm = [
        pose.joint_index(JOINT_WRIST)?,
        pose.joint_index(JOINT_ELBOW)?,
        pose.joint_index(JOINT_SHOULDER)?,
    ];
    let count = (n - window) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        out.push(LabeledWindow {
            pose: pose_window_tensor(pose, &arm, start, window),
            sensor: sensor_window_tensor(sensor, start, window),
            label: modal_label(&labels[start..start + window]),
            session: session.to_string(),
            start,
        });
    }
    Ok(out)
}

/// Stack the selected windows into batch tensors: pose [b, 3, 3, T],
/// sensor [b, 3, T], and the label vector.
pub fn stack_windows(
    windows: &[LabeledWindow],
    idx: &[usize],
) -> Result<(Tensor<f32>, Tensor<f32>, Vec<usize>)> {
    let first = idx
        .first()
        .map(|&i| &windows[i])
        .ok_or_else(|| Error::Data("cannot stack an empty batch".into()))?;
    let pose_shape = first.pose.shape().to_vec();
    let sensor_shape = first.sensor.shape().to_vec();
    let mut pose = Vec::with_capacity(idx.len() * first.pose.numel());
    let mut sensor = Vec::with_capacity(idx.len() * first.sensor.numel());
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let w = &windows[i];
        if w.pose.shape() != pose_shape || w.sensor.shape() != sensor_shape {
            return Err(Error::Shape(format!(
                "window {i} has shape {:?}/{:?}, expected {:?}/{:?}",
                w.pose.shape(),
                w.sensor.shape(),
                pose_shape,
                sensor_shape
            )));
        }
        pose.extend_from_slice(w.pose.data());
        sensor.extend_from_slice(w.sensor.data());
        labels.push(w.label);
    }
    let mut pb = vec![idx.len()];
    pb.extend(&pose_shape);
    let mut sb = vec![idx.len()];
    sb.extend(&sensor_shape);
    Ok((Tensor::new(pb, pose)?, Tensor::new(sb, sensor)?, labels))
}

/// Fit a segmented clip (one label per recording) to exactly `len` samples:
/// longer clips are center-cropped, shorter ones padded by edge replication
/// split evenly between the two ends.
pub fn make_clip_window(
    pose: &PoseSequence,
    sensor: &SensorSequence,
    label: usize,
    len: usize,
    session: &str,
) -> Result<LabeledWindow> {
    let n = pose.frames.min(sensor.len);
    let arm = [
        pose.joint_index(JOINT_WRIST)?,
        pose.joint_index(JOINT_ELBOW)?,
        pose.joint_index(JOINT_SHOULDER)?,
    ];
    // Map output index to a clamped source index.
    let src_index: Vec<usize> = if n >= len {
        let start = (n - len) / 2;
        (0..len).map(|t| start + t).collect()
    } else {
        let pad_left = (len - n) / 2;
        (0..len)
            .map(|t| t.saturating_sub(pad_left).min(n - 1))
            .collect()
    };
    let mut pose_data = vec![0.0f32; 3 * 3 * len];
    let mut sensor_data = vec![0.0f32; 3 * len];
    for (t, &src) in src_index.iter().enumerate() {
        for (j, &joint) in arm.iter().enumerate() {
            let p = pose.position(src, joint);
            for c in 0..3 {
                pose_data[(c * 3 + j) * len + t] = p[c] as f32;
            }
        }
        let s = sensor.sample(src);
        for c in 0..3 {
            sensor_data[c * len + t] = s[c] as f32;
        }
    }
    Ok(LabeledWindow {
        pose: Tensor::new(vec![3, 3, len], pose_data)?,
        sensor: Tensor::new(vec![3, len], sensor_data)?,
        label,
        session: session.to_string(),
        start: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pose with the five required joints; `place` returns each joint's
    /// position per frame.
    fn build_pose(rate: f64, frames: usize, place: impl Fn(usize, &str) -> [f64; 3]) -> PoseSequence {
        let joints: Vec<String> = REQUIRED_JOINTS.iter().map(|s| s.to_string()).collect();
        let mut data = Vec::with_capacity(frames * joints.len() * 3);
        for t in 0..frames {
            for j in &joints {
                data.extend(place(t, j));
            }
        }
        PoseSequence::new(rate, joints, data).unwrap()
    }

    fn upright_pose(rate: f64, frames: usize) -> PoseSequence {
        build_pose(rate, frames, |_, j| match j {
            JOINT_NECK => [0.0, 1.0, 0.0],
            JOINT_MIDHIP => [0.0, 0.0, 0.0],
            JOINT_WRIST => [0.3, 0.5, 0.1],
            JOINT_ELBOW => [0.2, 0.7, 0.0],
            _ => [0.1, 0.9, 0.0],
        })
    }

    #[test]
    fn resample_ramp_doubles_correctly() {
        let out = resample_linear_channels(&[0.0, 1.0, 2.0], 1, 1.0, 2.0).unwrap();
        assert_eq!(out, [0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn resample_identity_and_constant() {
        let series = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(
            resample_linear_channels(&series, 1, 50.0, 50.0).unwrap(),
            series
        );
        let out = resample_linear_channels(&[2.0; 4], 1, 1.0, 3.0).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn resample_rejects_short_input() {
        assert!(resample_linear_channels(&[1.0], 1, 1.0, 2.0).is_err());
    }

    #[test]
    fn label_resampling_picks_nearest() {
        let out = resample_labels_nearest(&[0, 0, 1, 1], 2.0, 1.0).unwrap();
        assert_eq!(out, [0, 1]);
    }

    #[test]
    fn scale_is_median_distance() {
        // Constant distance 0.5.
        let pose = build_pose(1.0, 5, |_, j| match j {
            JOINT_NECK => [0.5, 0.0, 0.0],
            _ => [0.0, 0.0, 0.0],
        });
        assert!((neck_midhip_scale(&pose, 2, 3.0).unwrap() - 0.5).abs() < 1e-12);

        // Median is robust to the outlier frame: [0.4, 0.5, 100] → 0.5.
        let dists = [0.4, 0.5, 100.0];
        let pose = build_pose(1.0, 3, |t, j| match j {
            JOINT_NECK => [dists[t], 0.0, 0.0],
            _ => [0.0, 0.0, 0.0],
        });
        assert!((neck_midhip_scale(&pose, 1, 3.0).unwrap() - 0.5).abs() < 1e-12);

        // Left clamp at t = 0: median over the first half-window + 1 frames.
        let left = neck_midhip_scale(&pose, 0, 3.0).unwrap();
        assert!((left - 0.45).abs() < 1e-12, "got {left}");
    }

    #[test]
    fn degenerate_skeleton_is_an_error() {
        let pose = build_pose(1.0, 3, |_, _| [0.0, 0.0, 0.0]);
        let err = neck_midhip_scale(&pose, 1, 3.0).unwrap_err();
        assert!(err.to_string().contains("degenerate"));
    }

    #[test]
    fn scale_value_fixed_points() {
        assert_eq!(scale_value(0.5, 0.5), 1.0);
        assert_eq!(scale_value(0.0, 0.5), -1.0);
        assert_eq!(scale_value(0.25, 0.5), 0.0);
    }

    #[test]
    fn normalize_maps_reference_points() {
        let pose = build_pose(1.0, 3, |_, j| match j {
            JOINT_NECK => [0.0, 0.5, 0.0],
            JOINT_MIDHIP => [0.0, 0.0, 0.0],
            // Wrist offset by exactly the scale along x.
            JOINT_WRIST => [0.5, 0.0, 0.0],
            // Elbow coincides with the mid-hip.
            JOINT_ELBOW => [0.0, 0.0, 0.0],
            _ => [0.1, 0.2, 0.3],
        });
        let norm = normalize_skeleton(&pose, 3.0).unwrap();
        let wrist = norm.joint_index(JOINT_WRIST).unwrap();
        let elbow = norm.joint_index(JOINT_ELBOW).unwrap();
        let midhip = norm.joint_index(JOINT_MIDHIP).unwrap();
        assert_eq!(norm.position(1, wrist), [1.0, -1.0, -1.0]);
        assert_eq!(norm.position(1, elbow), [-1.0, -1.0, -1.0]);
        assert_eq!(norm.position(1, midhip), [-1.0, -1.0, -1.0]);
    }

    proptest! {
        #[test]
        fn normalization_is_translation_invariant(
            shift in prop::array::uniform3(-50.0f64..50.0),
            wrist in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let base = build_pose(1.0, 3, |_, j| match j {
                JOINT_NECK => [0.0, 1.0, 0.0],
                JOINT_MIDHIP => [0.0, 0.0, 0.0],
                JOINT_WRIST => wrist,
                _ => [0.5, 0.5, 0.5],
            });
            let shifted = build_pose(1.0, 3, |_, j| {
                let p = match j {
                    JOINT_NECK => [0.0, 1.0, 0.0],
                    JOINT_MIDHIP => [0.0, 0.0, 0.0],
                    JOINT_WRIST => wrist,
                    _ => [0.5, 0.5, 0.5],
                };
                [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]
            });
            let a = normalize_skeleton(&base, 3.0).unwrap();
            let b = normalize_skeleton(&shifted, 3.0).unwrap();
            for t in 0..3 {
                for j in 0..5 {
                    let (pa, pb) = (a.position(t, j), b.position(t, j));
                    for c in 0..3 {
                        prop_assert!((pa[c] - pb[c]).abs() < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn normalization_is_uniform_scale_invariant(
            factor in 0.1f64..20.0,
            wrist in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let make = |f: f64| build_pose(1.0, 3, |_, j| {
                let p = match j {
                    JOINT_NECK => [0.0, 1.0, 0.0],
                    JOINT_MIDHIP => [0.3, 0.1, -0.2],
                    JOINT_WRIST => wrist,
                    _ => [0.5, 0.5, 0.5],
                };
                [p[0] * f, p[1] * f, p[2] * f]
            });
            let a = normalize_skeleton(&make(1.0), 3.0).unwrap();
            let b = normalize_skeleton(&make(factor), 3.0).unwrap();
            for t in 0..3 {
                for j in 0..5 {
                    let (pa, pb) = (a.position(t, j), b.position(t, j));
                    for c in 0..3 {
                        prop_assert!((pa[c] - pb[c]).abs() < 1e-6);
                    }
                }
            }
        }

        #[test]
        fn window_count_follows_the_formula(
            n in 300usize..2000,
            stride in 1usize..50,
        ) {
            let pose = upright_pose(100.0, n);
            let sensor = SensorSequence::new(100.0, vec![0.5; n * 3]).unwrap();
            let labels = vec![0usize; n];
            let windows = make_windows(&pose, &sensor, &labels, 300, stride, "s").unwrap();
            prop_assert_eq!(windows.len(), (n - 300) / stride + 1);
        }
    }

    #[test]
    fn standardize_fit_split_has_unit_stats() {
        let a = Tensor::new(vec![1, 2], vec![-1.0f32, 1.0]).unwrap();
        let stats = standardize_fit(&[&a]).unwrap();
        assert!(stats.mean[0].abs() < 1e-9 && (stats.std[0] - 1.0).abs() < 1e-9);
        let mut applied = a.clone();
        standardize_apply(&mut applied, &stats);
        assert_eq!(applied.data(), a.data());

        // Arbitrary data: after apply, fit-split mean ≈ 0 and std ≈ 1.
        let b = Tensor::new(vec![1, 4], vec![3.0f32, 5.0, 9.0, 11.0]).unwrap();
        let stats = standardize_fit(&[&b]).unwrap();
        let mut applied = b.clone();
        standardize_apply(&mut applied, &stats);
        let mean: f64 = applied.data().iter().map(|&v| v as f64).sum::<f64>() / 4.0;
        let var: f64 = applied.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn standardize_constant_channel_cases() {
        let c = Tensor::new(vec![1, 3], vec![4.0f32, 4.0, 4.0]).unwrap();
        assert!(standardize_fit(&[&c]).is_err());

        // A constant channel standardized with external stats becomes zeros
        // when its value equals the fitted mean.
        let stats = NormStats {
            mean: vec![4.0],
            std: vec![2.0],
        };
        let mut applied = c.clone();
        standardize_apply(&mut applied, &stats);
        assert!(applied.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn windows_340_samples_give_three_offsets() {
        let n = 340;
        let pose = upright_pose(100.0, n);
        let sensor = SensorSequence::new(100.0, vec![0.25; n * 3]).unwrap();
        let labels = vec![1usize; n];
        let windows = make_windows(&pose, &sensor, &labels, 300, 20, "sess").unwrap();
        assert_eq!(windows.len(), 3);
        assert_eq!(
            windows.iter().map(|w| w.start).collect::<Vec<_>>(),
            [0, 20, 40]
        );
        assert_eq!(windows[0].pose.shape(), [3, 3, 300]);
        assert_eq!(windows[0].sensor.shape(), [3, 300]);
    }

    #[test]
    fn window_labels_majority_and_tie_rule() {
        let n = 300;
        let pose = upright_pose(100.0, n);
        let sensor = SensorSequence::new(100.0, vec![0.25; n * 3]).unwrap();

        let mut labels = vec![2usize; 200];
        labels.extend(vec![4usize; 100]);
        let w = make_windows(&pose, &sensor, &labels, 300, 20, "s").unwrap();
        assert_eq!(w[0].label, 2);

        let mut labels = vec![3usize; 150];
        labels.extend(vec![1usize; 150]);
        let w = make_windows(&pose, &sensor, &labels, 300, 20, "s").unwrap();
        assert_eq!(w[0].label, 1, "tie must resolve to the lowest class index");
    }

    #[test]
    fn short_stream_is_an_error() {
        let pose = upright_pose(100.0, 100);
        let sensor = SensorSequence::new(100.0, vec![0.25; 100 * 3]).unwrap();
        let labels = vec![0usize; 100];
        assert!(make_windows(&pose, &sensor, &labels, 300, 20, "s").is_err());
    }

    #[test]
    fn clip_center_crop_and_edge_pad() {
        // 10 frames cropped to 4: center crop starts at (10−4)/2 = 3.
        let pose = build_pose(1.0, 10, |t, j| match j {
            JOINT_WRIST => [t as f64, 0.0, 0.0],
            JOINT_NECK => [0.0, 1.0, 0.0],
            _ => [0.0, 0.0, 0.0],
        });
        let sensor_data: Vec<f64> = (0..10).flat_map(|t| [t as f64, 0.0, 0.0]).collect();
        let sensor = SensorSequence::new(1.0, sensor_data).unwrap();
        let w = make_clip_window(&pose, &sensor, 7, 4, "clip").unwrap();
        assert_eq!(w.label, 7);
        // Wrist x coordinates land in pose channel 0, joint row 0.
        assert_eq!(&w.pose.data()[0..4], [3.0, 4.0, 5.0, 6.0]);
        assert_eq!(&w.sensor.data()[0..4], [3.0, 4.0, 5.0, 6.0]);

        // 3 frames padded to 6: one replicated frame left, two right.
        let pose = build_pose(1.0, 3, |t, j| match j {
            JOINT_WRIST => [10.0 + t as f64, 0.0, 0.0],
            JOINT_NECK => [0.0, 1.0, 0.0],
            _ => [0.0, 0.0, 0.0],
        });
        let sensor_data: Vec<f64> = (0..3).flat_map(|t| [10.0 + t as f64, 0.0, 0.0]).collect();
        let sensor = SensorSequence::new(1.0, sensor_data).unwrap();
        let w = make_clip_window(&pose, &sensor, 0, 6, "clip").unwrap();
        assert_eq!(&w.pose.data()[0..6], [10.0, 10.0, 11.0, 12.0, 12.0, 12.0]);
    }
}
