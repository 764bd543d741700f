//! Precision/recall evaluation of detections against annotated frames.
//!
//! Detections are matched to annotations greedily in ascending pair-distance
//! order, one-to-one, within a fixed match radius. Curves are produced by
//! re-running the voting stage per threshold; network predictions do not
//! depend on the voting configuration, so they are computed once per frame
//! and reused ([`FramePredictions`]).

use serde::{Deserialize, Serialize};

use crate::dataio::Annotation;
use crate::error::Error;
use crate::nn::Prediction;
use crate::preprocess::Window;
use crate::vote::{self, Detection, VoteConfig};

/// Cached per-frame network output plus the ground truth.
pub struct FramePredictions {
    pub windows: Vec<Window>,
    pub predictions: Vec<Prediction>,
    pub annotations: Vec<Annotation>,
}

/// Counts from matching one or more frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchResult {
    pub fn merge(&mut self, other: MatchResult) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// `tp / (tp + fp)`, by convention 1.0 when there are no detections.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<PRPoint>,
}

/// One cutoff of the distance sweep. `recall` is absent when no annotation
/// lies within the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub distance: f64,
    pub precision: f64,
    pub recall: Option<f64>,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Match detections to annotations within `radius`, greedily by ascending
/// pair distance (ties by detection then annotation index). With
/// `class_aware` only same-class pairs are eligible.
pub fn match_frame(
    detections: &[Detection],
    annotations: &[Annotation],
    radius: f64,
    class_aware: bool,
) -> MatchResult {
    assert!(radius > 0.0);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (di, d) in detections.iter().enumerate() {
        for (ai, a) in annotations.iter().enumerate() {
            if class_aware && d.klass != a.klass {
                continue;
            }
            let r = dist(d.position, a.position);
            if r <= radius {
                pairs.push((r, di, ai));
            }
        }
    }
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut det_used = vec![false; detections.len()];
    let mut ann_used = vec![false; annotations.len()];
    let mut tp = 0;
    for (_, di, ai) in pairs {
        if !det_used[di] && !ann_used[ai] {
            det_used[di] = true;
            ann_used[ai] = true;
            tp += 1;
        }
    }
    MatchResult {
        tp,
        fp: detections.len() - tp,
        fn_: annotations.len() - tp,
    }
}

/// Run voting at one threshold over all frames and aggregate counts.
pub fn evaluate(
    frames: &[FramePredictions],
    cfg: &VoteConfig,
    radius: f64,
    class_aware: bool,
) -> MatchResult {
    let mut total = MatchResult::default();
    for f in frames {
        let dets = vote::detect(&f.windows, &f.predictions, cfg);
        total.merge(match_frame(&dets, &f.annotations, radius, class_aware));
    }
    total
}

/// Like [`evaluate`], restricted to detections and annotations of one class.
pub fn evaluate_class(
    frames: &[FramePredictions],
    cfg: &VoteConfig,
    radius: f64,
    klass: crate::dataio::ObjectClass,
) -> MatchResult {
    let mut total = MatchResult::default();
    for f in frames {
        let dets: Vec<Detection> = vote::detect(&f.windows, &f.predictions, cfg)
            .into_iter()
            .filter(|d| d.klass == klass)
            .collect();
        let anns: Vec<Annotation> = f
            .annotations
            .iter()
            .filter(|a| a.klass == klass)
            .cloned()
            .collect();
        total.merge(match_frame(&dets, &anns, radius, true));
    }
    total
}

/// Single-class precision/recall curve.
pub fn pr_curve_class(
    frames: &[FramePredictions],
    base: &VoteConfig,
    thresholds: &[f64],
    radius: f64,
    klass: crate::dataio::ObjectClass,
) -> Result<PRCurve, Error> {
    assert!(!thresholds.is_empty());
    if !frames
        .iter()
        .any(|f| f.annotations.iter().any(|a| a.klass == klass))
    {
        return Err(Error::NoAnnotations);
    }
    let mut curve = PRCurve::default();
    for &t in thresholds {
        let cfg = VoteConfig {
            threshold: t,
            ..*base
        };
        let m = evaluate_class(frames, &cfg, radius, klass);
        curve.points.push(PRPoint {
            threshold: t,
            precision: m.precision(),
            recall: m.recall(),
        });
    }
    Ok(curve)
}

/// Precision/recall across a list of voting thresholds.
pub fn pr_curve(
    frames: &[FramePredictions],
    base: &VoteConfig,
    thresholds: &[f64],
    radius: f64,
    class_aware: bool,
) -> Result<PRCurve, Error> {
    assert!(!thresholds.is_empty());
    if frames.iter().all(|f| f.annotations.is_empty()) {
        return Err(Error::NoAnnotations);
    }
    let mut curve = PRCurve::default();
    for &t in thresholds {
        let cfg = VoteConfig {
            threshold: t,
            ..*base
        };
        let m = evaluate(frames, &cfg, radius, class_aware);
        curve.points.push(PRPoint {
            threshold: t,
            precision: m.precision(),
            recall: m.recall(),
        });
    }
    Ok(curve)
}

/// Evaluate at one threshold while ignoring everything farther than each
/// cutoff distance from the sensor.
pub fn pr_by_distance(
    frames: &[FramePredictions],
    cfg: &VoteConfig,
    radii: &[f64],
    radius: f64,
    class_aware: bool,
) -> Vec<DistancePoint> {
    assert!(radii.windows(2).all(|w| w[0] <= w[1]));
    let per_frame: Vec<(Vec<Detection>, &[Annotation])> = frames
        .iter()
        .map(|f| {
            (
                vote::detect(&f.windows, &f.predictions, cfg),
                f.annotations.as_slice(),
            )
        })
        .collect();
    radii
        .iter()
        .map(|&d| {
            let mut total = MatchResult::default();
            for (dets, anns) in &per_frame {
                let dets: Vec<Detection> = dets
                    .iter()
                    .filter(|x| dist(x.position, (0.0, 0.0)) <= d)
                    .cloned()
                    .collect();
                let anns: Vec<Annotation> = anns
                    .iter()
                    .filter(|x| dist(x.position, (0.0, 0.0)) <= d)
                    .cloned()
                    .collect();
                total.merge(match_frame(&dets, &anns, radius, class_aware));
            }
            DistancePoint {
                distance: d,
                precision: total.precision(),
                recall: if total.tp + total.fn_ == 0 {
                    None
                } else {
                    Some(total.recall())
                },
            }
        })
        .collect()
}

/// F1 score, 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}
