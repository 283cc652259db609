//! Kinematic data generator with analytically known ground truth.
//!
//! Wrist trajectories are sinusoids, so the wrist acceleration has a closed
//! form: a(t) = −A·(2πf)²·sin(2πft + φ) per axis. The generated skeletons
//! keep the neck and mid-hip fixed at unit separation, making the skeleton
//! normalization scale exactly 1, and every clip runs through the real
//! preprocessing path (normalization, clip windowing, train-fit
//! standardization) so a desk-scale experiment exercises the same code as a
//! full dataset.

use crate::error::{Error, Result};
use crate::preprocessing::{
    make_clip_window, normalize_skeleton, standardize_apply, standardize_fit, LabeledWindow,
    NormStats, PoseSequence, SensorSequence, JOINT_ELBOW, JOINT_NECK, JOINT_SHOULDER, JOINT_WRIST,
    REQUIRED_JOINTS,
};
use crate::rng::StreamRng;
use crate::tensor::Scalar;

/// Resting joint positions; the neck–midhip distance is exactly 1.
const WRIST_OFFSET: [f64; 3] = [0.5, 0.2, 0.1];
const ELBOW_OFFSET: [f64; 3] = [0.35, 0.45, 0.05];
const SHOULDER_OFFSET: [f64; 3] = [0.2, 0.7, 0.0];
const NECK_POS: [f64; 3] = [0.0, 0.75, 0.0];
const MIDHIP_POS: [f64; 3] = [0.0, -0.25, 0.0];

/// Fractions of the wrist oscillation propagated up the arm chain.
const ELBOW_FOLLOW: f64 = 0.5;
const SHOULDER_FOLLOW: f64 = 0.2;

/// One motion class: a sinusoidal wrist oscillation with per-axis amplitude,
/// plus the sensor noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClassSpec {
    pub class: usize,
    /// Per-axis amplitude in skeleton units.
    pub amplitude: [f64; 3],
    /// Oscillation frequency in Hz.
    pub frequency: f64,
    /// Phase offset in radians.
    pub phase: f64,
    /// Standard deviation of the Gaussian noise added to the accelerometer.
    pub noise_std: f64,
}

impl MotionClassSpec {
    fn validate(&self, rate: f64) -> Result<()> {
        if self.frequency < 0.0 || !self.frequency.is_finite() {
            return Err(Error::Config(format!(
                "class {} frequency must be finite and non-negative, got {}",
                self.class, self.frequency
            )));
        }
        if rate < 2.0 * self.frequency {
            return Err(Error::Config(format!(
                "rate {rate} Hz cannot sample a {} Hz oscillation (needs ≥ {})",
                self.frequency,
                2.0 * self.frequency
            )));
        }
        if self.amplitude.iter().any(|a| !a.is_finite()) || self.noise_std < 0.0 {
            return Err(Error::Config(format!(
                "class {} has non-finite amplitude or negative noise",
                self.class
            )));
        }
        Ok(())
    }

    fn oscillation(&self, t: f64) -> [f64; 3] {
        let s = (2.0 * std::f64::consts::PI * self.frequency * t + self.phase).sin();
        [
            self.amplitude[0] * s,
            self.amplitude[1] * s,
            self.amplitude[2] * s,
        ]
    }
}

fn frames_for(duration_s: f64, rate: f64) -> Result<usize> {
    if duration_s <= 0.0 || rate <= 0.0 {
        return Err(Error::Config(format!(
            "duration {duration_s}s at {rate} Hz is not generatable"
        )));
    }
    let n = (duration_s * rate).round() as usize;
    if n < 2 {
        return Err(Error::Config(format!(
            "duration {duration_s}s at {rate} Hz yields fewer than 2 samples"
        )));
    }
    Ok(n)
}

/// Generate the five-joint skeleton stream for one clip. The wrist follows
/// the class oscillation around its offset; elbow and shoulder follow scaled
/// copies; neck and mid-hip stay fixed at unit separation.
pub fn generate_trajectory(
    spec: &MotionClassSpec,
    duration_s: f64,
    rate: f64,
) -> Result<PoseSequence> {
    spec.validate(rate)?;
    let n = frames_for(duration_s, rate)?;
    let joints: Vec<String> = REQUIRED_JOINTS.iter().map(|s| s.to_string()).collect();
    let mut data = Vec::with_capacity(n * joints.len() * 3);
    for k in 0..n {
        let t = k as f64 / rate;
        let osc = spec.oscillation(t);
        for name in &joints {
            let (offset, follow): (&[f64; 3], f64) = match name.as_str() {
                JOINT_WRIST => (&WRIST_OFFSET, 1.0),
                JOINT_ELBOW => (&ELBOW_OFFSET, ELBOW_FOLLOW),
                JOINT_SHOULDER => (&SHOULDER_OFFSET, SHOULDER_FOLLOW),
                JOINT_NECK => (&NECK_POS, 0.0),
                _ => (&MIDHIP_POS, 0.0),
            };
            for c in 0..3 {
                data.push(offset[c] + follow * osc[c]);
            }
        }
    }
    PoseSequence::new(rate, joints, data)
}

/// Closed-form wrist acceleration for one clip, plus Gaussian sensor noise
/// (no randomness is consumed when the noise level is 0).
pub fn analytic_accel(
    spec: &MotionClassSpec,
    duration_s: f64,
    rate: f64,
    rng: &mut StreamRng,
) -> Result<SensorSequence> {
    spec.validate(rate)?;
    let n = frames_for(duration_s, rate)?;
    let omega_sq = (2.0 * std::f64::consts::PI * spec.frequency).powi(2);
    let mut data = Vec::with_capacity(n * 3);
    for k in 0..n {
        let t = k as f64 / rate;
        let s = (2.0 * std::f64::consts::PI * spec.frequency * t + spec.phase).sin();
        for c in 0..3 {
            let mut a = -spec.amplitude[c] * omega_sq * s;
            if spec.noise_std > 0.0 {
                a += spec.noise_std * f64::sample_standard_normal(rng);
            }
            data.push(a);
        }
    }
    SensorSequence::new(rate, data)
}

/// Dataset-level generation profile.
#[derive(Debug, Clone)]
pub struct SynthProfile {
    pub classes: Vec<MotionClassSpec>,
    pub rate: f64,
    pub window_s: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
}

impl SynthProfile {
    /// Desk-scale default: 4 classes at 100 Hz with 3 s windows and
    /// 400/100/100 windows per split.
    pub fn desk(noise_std: f64) -> Self {
        let class = |class, amplitude, frequency| MotionClassSpec {
            class,
            amplitude,
            frequency,
            phase: 0.0,
            noise_std,
        };
        SynthProfile {
            classes: vec![
                class(0, [0.12, 0.0, 0.0], 1.0),
                class(1, [0.0, 0.12, 0.0], 1.5),
                class(2, [0.0, 0.0, 0.12], 2.0),
                class(3, [0.08, 0.08, 0.08], 2.5),
            ],
            rate: 100.0,
            window_s: 3.0,
            train_per_class: 100,
            val_per_class: 25,
            test_per_class: 25,
        }
    }

    pub fn window_len(&self) -> Result<usize> {
        frames_for(self.window_s, self.rate)
    }
}

/// Generated splits, ready for training: normalized skeletons and sensor
/// channels standardized with statistics fitted on the training split.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Vec<LabeledWindow>,
    pub val: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub stats: NormStats,
    pub n_classes: usize,
}

fn generate_split(
    profile: &SynthProfile,
    split: &str,
    per_class: usize,
    seed: u64,
) -> Result<Vec<LabeledWindow>> {
    let mut rng = StreamRng::new(seed, &format!("synth.{split}"));
    let window = profile.window_len()?;
    let mut out = Vec::with_capacity(per_class * profile.classes.len());
    for spec in &profile.classes {
        for w in 0..per_class {
            let mut clip_spec = spec.clone();
            clip_spec.phase = spec.phase + rng.uniform_f64() * 2.0 * std::f64::consts::PI;
            let pose = generate_trajectory(&clip_spec, profile.window_s, profile.rate)?;
            let accel = analytic_accel(&clip_spec, profile.window_s, profile.rate, &mut rng)?;
            let norm = normalize_skeleton(&pose, profile.window_s)?;
            let session = format!("synth.{split}.c{}.w{}", spec.class, w);
            out.push(make_clip_window(&norm, &accel, spec.class, window, &session)?);
        }
    }
    Ok(out)
}

/// Generate disjoint, balanced train/val/test splits. Each split draws from
/// its own random stream, so the validation and test sets are bit-identical
/// regardless of how many training windows were requested.
pub fn generate_dataset(profile: &SynthProfile, seed: u64) -> Result<DataSplits> {
    if profile.classes.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 motion classes, got {}",
            profile.classes.len()
        )));
    }
    if profile.train_per_class == 0 || profile.val_per_class == 0 || profile.test_per_class == 0 {
        return Err(Error::Config("every split needs at least one window per class".into()));
    }
    for (i, spec) in profile.classes.iter().enumerate() {
        if spec.class != i {
            return Err(Error::Config(format!(
                "class specs must be listed in id order: position {i} holds id {}",
                spec.class
            )));
        }
    }
    let mut train = generate_split(profile, "train", profile.train_per_class, seed)?;
    let mut val = generate_split(profile, "val", profile.val_per_class, seed)?;
    let mut test = generate_split(profile, "test", profile.test_per_class, seed)?;

    let train_sensors: Vec<&crate::tensor::Tensor<f32>> =
        train.iter().map(|w| &w.sensor).collect();
    let stats = standardize_fit(&train_sensors)?;
    for w in train.iter_mut().chain(val.iter_mut()).chain(test.iter_mut()) {
        standardize_apply(&mut w.sensor, &stats);
    }
    Ok(DataSplits {
        train,
        val,
        test,
        stats,
        n_classes: profile.classes.len(),
    })
}
