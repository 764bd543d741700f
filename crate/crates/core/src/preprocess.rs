//! Depth-normalized window extraction and training target construction.
//!
//! Around each beam a window of fixed real-world extent `l` is cut out of the
//! scan, resampled to `n` values, centered on the beam's range, clamped to a
//! `±hull` band and normalized into `[-1, 1]`. Each step can be switched off
//! individually for ablation runs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Annotation, ObjectClass};
use crate::geometry::{window_angle, LocalFrame, Scan, SensorConfig};

/// Maximum distance from a window's center point at which an annotation of the
/// given class still labels the window.
pub fn class_label_radius(klass: ObjectClass) -> f64 {
    match klass {
        ObjectClass::Wheelchair => 0.6,
        ObjectClass::Walker => 0.4,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Real-world window extent, meters.
    pub l: f64,
    /// Samples per window.
    pub n: usize,
    /// Clamp hull, meters.
    pub hull: f64,
    pub do_center: bool,
    pub do_clamp: bool,
    pub do_resample: bool,
    /// Value read for samples outside the field of view; `None` means the
    /// sensor's `range_max` (normalizes to +1, far clutter).
    pub pad_value: Option<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            l: 1.66,
            n: 48,
            hull: 1.0,
            do_center: true,
            do_clamp: true,
            do_resample: true,
            pad_value: None,
        }
    }
}

impl PreprocessConfig {
    /// All normalization steps disabled: `n` contiguous raw beams.
    pub fn raw_window() -> Self {
        PreprocessConfig {
            do_center: false,
            do_clamp: false,
            do_resample: false,
            ..PreprocessConfig::default()
        }
    }
}

/// One preprocessed window.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub samples: Vec<f64>,
    pub center_beam: usize,
    /// Range of the center beam, meters.
    pub center_range: f64,
    /// Local frame at the center beam's hit point.
    pub frame: LocalFrame,
}

/// Class label and regression target for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingTarget {
    pub klass: Option<ObjectClass>,
    /// Offset to the object center in the window's local frame, meters.
    pub offset: (f64, f64),
    /// True iff the window is labeled with an object; masked-out offsets
    /// carry no gradient.
    pub regression_mask: bool,
}

impl TrainingTarget {
    pub fn background() -> Self {
        TrainingTarget {
            klass: None,
            offset: (0.0, 0.0),
            regression_mask: false,
        }
    }

    /// Index into the 3-way softmax: background 0, wheelchair 1, walker 2.
    pub fn class_index(&self) -> usize {
        match self.klass {
            None => 0,
            Some(ObjectClass::Wheelchair) => 1,
            Some(ObjectClass::Walker) => 2,
        }
    }
}

/// Cut the window around beam `i` of a sanitized scan.
pub fn cut_window(
    scan: &Scan,
    sensor: &SensorConfig,
    cfg: &PreprocessConfig,
    i: usize,
) -> Window {
    debug_assert!(i < sensor.num_beams && scan.ranges.len() == sensor.num_beams);
    let r = scan.ranges[i];
    let phi = sensor.beam_angle(i).unwrap();
    let pad = cfg.pad_value.unwrap_or(sensor.range_max);

    let mut samples = Vec::with_capacity(cfg.n);
    if cfg.do_resample {
        let alpha = window_angle(cfg.l, r);
        let inc = sensor.beam_increment();
        for j in 0..cfg.n {
            let u = j as f64 / (cfg.n - 1) as f64 - 0.5;
            let theta = phi + u * alpha;
            // Fractional beam index; outside the fov reads the pad value.
            let pos = (theta + sensor.fov / 2.0) / inc;
            let value = if pos < 0.0 || pos > (sensor.num_beams - 1) as f64 {
                pad
            } else {
                let lo = pos.floor() as usize;
                let hi = lo.min(sensor.num_beams - 2) + 1;
                let frac = pos - lo as f64;
                scan.ranges[lo] * (1.0 - frac) + scan.ranges[hi] * frac
            };
            samples.push(value);
        }
    } else {
        // Raw mode: n contiguous beams centered on i.
        let half = cfg.n as isize / 2;
        for j in 0..cfg.n as isize {
            let idx = i as isize + j - half;
            let value = if idx < 0 || idx >= sensor.num_beams as isize {
                pad
            } else {
                scan.ranges[idx as usize]
            };
            samples.push(value);
        }
    }

    for x in &mut samples {
        let mut v = *x;
        if cfg.do_center {
            v -= r;
        }
        if cfg.do_clamp {
            v = v.clamp(-cfg.hull, cfg.hull) / cfg.hull;
        }
        *x = v;
    }

    Window {
        samples,
        center_beam: i,
        center_range: r,
        frame: LocalFrame::at_beam_hit(r, phi),
    }
}

/// All windows of one scan, in beam order.
pub fn cut_all_windows(
    scan: &Scan,
    sensor: &SensorConfig,
    cfg: &PreprocessConfig,
) -> Vec<Window> {
    (0..sensor.num_beams)
        .map(|i| cut_window(scan, sensor, cfg, i))
        .collect()
}

/// Label a window by the annotation closest to its center point; within the
/// class's label radius it yields that class, otherwise background.
pub fn make_target(window: &Window, annotations: &[Annotation]) -> TrainingTarget {
    let center = window.frame.origin;
    let closest = annotations.iter().min_by(|a, b| {
        let da = sq_dist(a.position, center);
        let db = sq_dist(b.position, center);
        da.partial_cmp(&db).unwrap()
    });
    match closest {
        Some(a) => {
            let d = sq_dist(a.position, center).sqrt();
            if d <= class_label_radius(a.klass) {
                TrainingTarget {
                    klass: Some(a.klass),
                    offset: window.frame.to_local(a.position),
                    regression_mask: true,
                }
            } else {
                TrainingTarget::background()
            }
        }
        None => TrainingTarget::background(),
    }
}

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Mirror a window and its target: samples reversed, local y offset negated.
pub fn flip(window: &Window, target: &TrainingTarget) -> (Window, TrainingTarget) {
    let mut w = window.clone();
    w.samples.reverse();
    let t = TrainingTarget {
        offset: (target.offset.0, -target.offset.1),
        ..*target
    };
    (w, t)
}

/// Multiplicative noise on masked-in regression targets.
pub fn jitter_target(
    target: &TrainingTarget,
    rng: &mut impl Rng,
    noise_scale: f64,
) -> TrainingTarget {
    debug_assert!(noise_scale >= 0.0);
    if !target.regression_mask || noise_scale == 0.0 {
        return *target;
    }
    let fx = rng.gen_range(1.0 - noise_scale..=1.0 + noise_scale);
    let fy = rng.gen_range(1.0 - noise_scale..=1.0 + noise_scale);
    TrainingTarget {
        offset: (target.offset.0 * fx, target.offset.1 * fy),
        ..*target
    }
}
