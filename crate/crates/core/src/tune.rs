//! Random search over the voting hyperparameters.
//!
//! The objective is the threshold-swept sum of the per-class F1 scores on a
//! validation set, `max_T f_wheelchair(T) + f_walker(T)`. Trials are sampled
//! independently with per-trial seeds derived from the master seed, so runs
//! are deterministic and the best objective can only improve with budget.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::ObjectClass;
use crate::error::Error;
use crate::eval::{self, FramePredictions};
use crate::vote;
use crate::vote::VoteConfig;

/// Sampling priors for the searched parameters. Class weights are uniform in
/// `(0, 1]`, the grid resolution is log-uniform, the blur width uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub weight_max: f64,
    pub bin_range: (f64, f64),
    pub sigma_range: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            weight_max: 1.0,
            bin_range: (0.02, 0.5),
            sigma_range: (0.5, 6.0),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), Error> {
        if self.weight_max <= 0.0
            || self.bin_range.0 <= 0.0
            || self.bin_range.0 > self.bin_range.1
            || self.sigma_range.0 <= 0.0
            || self.sigma_range.0 > self.sigma_range.1
        {
            return Err(Error::InvalidConfig(
                "search space bounds must be positive and ordered".into(),
            ));
        }
        Ok(())
    }

    fn sample(&self, base: &VoteConfig, rng: &mut ChaCha8Rng) -> VoteConfig {
        let weight = |rng: &mut ChaCha8Rng| self.weight_max * (1.0 - rng.gen::<f64>());
        let w = (weight(rng), weight(rng), weight(rng));
        let (lo, hi) = (self.bin_range.0.ln(), self.bin_range.1.ln());
        let bin = rng.gen_range(lo..=hi).exp();
        let sigma = rng.gen_range(self.sigma_range.0..=self.sigma_range.1);
        VoteConfig {
            class_weights: w,
            bin,
            sigma,
            ..*base
        }
    }
}

/// One evaluated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: VoteConfig,
    pub objective: f64,
    pub best_threshold: f64,
}

/// Sweep the threshold list and return the maximum summed per-class F1 and
/// its threshold.
pub fn objective(
    cfg: &VoteConfig,
    frames: &[FramePredictions],
    thresholds: &[f64],
    radius: f64,
) -> Result<(f64, f64), Error> {
    for klass in [ObjectClass::Wheelchair, ObjectClass::Walker] {
        if !frames
            .iter()
            .any(|f| f.annotations.iter().any(|a| a.klass == klass))
        {
            return Err(Error::NoAnnotations);
        }
    }
    let classes = [ObjectClass::Wheelchair, ObjectClass::Walker];
    let mut best = (0.0f64, thresholds[0]);
    for &t in thresholds {
        let cfg = VoteConfig {
            threshold: t,
            ..*cfg
        };
        let mut counts = [eval::MatchResult::default(); 2];
        for f in frames {
            let dets = vote::detect(&f.windows, &f.predictions, &cfg);
            for (k, klass) in classes.iter().enumerate() {
                let cd: Vec<_> = dets.iter().filter(|d| d.klass == *klass).cloned().collect();
                let ca: Vec<_> = f
                    .annotations
                    .iter()
                    .filter(|a| a.klass == *klass)
                    .cloned()
                    .collect();
                counts[k].merge(eval::match_frame(&cd, &ca, radius, true));
            }
        }
        let sum: f64 = counts
            .iter()
            .map(|m| eval::f1(m.precision(), m.recall()))
            .sum();
        if sum > best.0 {
            best = (sum, t);
        }
    }
    Ok(best)
}

/// Evaluate `budget` sampled configurations and return the best trial plus
/// the full log in sampling order.
pub fn random_search(
    space: &SearchSpace,
    base: &VoteConfig,
    frames: &[FramePredictions],
    thresholds: &[f64],
    radius: f64,
    budget: usize,
    seed: u64,
) -> Result<(Trial, Vec<Trial>), Error> {
    assert!(budget >= 1);
    space.validate()?;
    let mut log = Vec::with_capacity(budget);
    for trial in 0..budget {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (trial as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let cfg = space.sample(base, &mut rng);
        let (value, best_t) = objective(&cfg, frames, thresholds, radius)?;
        log.push(Trial {
            config: cfg,
            objective: value,
            best_threshold: best_t,
        });
    }
    let best = *log
        .iter()
        .max_by(|a, b| a.objective.partial_cmp(&b.objective).unwrap())
        .unwrap();
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Annotation;
    use crate::vote;
    use crate::geometry::LocalFrame;
    use crate::nn::{ClassProbs, Prediction};
    use crate::preprocess::Window;

    fn frame(annotations: Vec<Annotation>, perfect: bool) -> FramePredictions {
        let mut windows = Vec::new();
        let mut predictions = Vec::new();
        if perfect {
            for a in &annotations {
                windows.push(Window {
                    samples: vec![0.0; 4],
                    center_beam: 0,
                    center_range: 2.0,
                    frame: LocalFrame {
                        origin: a.position,
                        rotation: 0.0,
                    },
                });
                let (wc, wa) = match a.klass {
                    ObjectClass::Wheelchair => (0.98, 0.01),
                    ObjectClass::Walker => (0.01, 0.98),
                };
                predictions.push(Prediction {
                    probs: ClassProbs {
                        background: 0.01,
                        wheelchair: wc,
                        walker: wa,
                    },
                    offset: (0.0, 0.0),
                });
            }
        }
        FramePredictions {
            windows,
            predictions,
            annotations,
        }
    }

    fn both_classes(perfect: bool) -> Vec<FramePredictions> {
        vec![frame(
            vec![
                Annotation {
                    position: (2.0, 1.0),
                    klass: ObjectClass::Wheelchair,
                },
                Annotation {
                    position: (4.0, -2.0),
                    klass: ObjectClass::Walker,
                },
            ],
            perfect,
        )]
    }

    fn base_cfg() -> VoteConfig {
        VoteConfig {
            class_weights: (1.0, 1.0, 1.0),
            extent: 6.0,
            ..VoteConfig::default()
        }
    }

    #[test]
    fn oracle_detector_scores_two() {
        let frames = both_classes(true);
        let (value, _) = objective(&base_cfg(), &frames, &[0.3, 0.5], 0.5).unwrap();
        assert_eq!(value, 2.0);
    }

    #[test]
    fn empty_detector_scores_zero() {
        let frames = both_classes(false);
        let (value, _) = objective(&base_cfg(), &frames, &[0.3, 0.5], 0.5).unwrap();
        assert_eq!(value, 0.0);
    }

    #[test]
    fn missing_class_is_an_error() {
        let frames = vec![frame(
            vec![Annotation {
                position: (2.0, 1.0),
                klass: ObjectClass::Wheelchair,
            }],
            true,
        )];
        assert!(matches!(
            objective(&base_cfg(), &frames, &[0.5], 0.5),
            Err(Error::NoAnnotations)
        ));
    }

    #[test]
    fn published_operating_point_is_in_the_space() {
        let space = SearchSpace::default();
        let cfg = VoteConfig::default();
        let (bg, wc, wa) = cfg.class_weights;
        for w in [bg, wc, wa] {
            assert!(w > 0.0 && w <= space.weight_max);
        }
        assert!(cfg.bin >= space.bin_range.0 && cfg.bin <= space.bin_range.1);
        assert!(cfg.sigma >= space.sigma_range.0 && cfg.sigma <= space.sigma_range.1);
    }

    #[test]
    fn objective_is_invariant_to_weight_scaling() {
        let frames = both_classes(true);
        let cfg = VoteConfig {
            class_weights: (0.38, 0.6, 0.49),
            ..base_cfg()
        };
        let scaled = VoteConfig {
            class_weights: (0.76, 1.2, 0.98),
            ..cfg
        };
        for f in &frames {
            let a = vote::detect(&f.windows, &f.predictions, &cfg);
            let b = vote::detect(&f.windows, &f.predictions, &scaled);
            assert_eq!(a, b);
        }
        let va = objective(&cfg, &frames, &[0.3, 0.5, 0.7], 0.5).unwrap();
        let vb = objective(&scaled, &frames, &[0.3, 0.5, 0.7], 0.5).unwrap();
        assert_eq!(va, vb);
    }

    #[test]
    fn search_is_deterministic_and_monotone_in_budget() {
        let frames = both_classes(true);
        let space = SearchSpace::default();
        let thresholds = [0.3, 0.5, 0.7];
        let (_, log1) =
            random_search(&space, &base_cfg(), &frames, &thresholds, 0.5, 5, 42).unwrap();
        let (_, log2) =
            random_search(&space, &base_cfg(), &frames, &thresholds, 0.5, 5, 42).unwrap();
        assert_eq!(log1, log2);

        let (single, log_single) =
            random_search(&space, &base_cfg(), &frames, &thresholds, 0.5, 1, 42).unwrap();
        assert_eq!(log_single.len(), 1);
        assert_eq!(single, log_single[0]);

        let mut prev = f64::NEG_INFINITY;
        for budget in [1, 3, 5] {
            let (best, log) =
                random_search(&space, &base_cfg(), &frames, &thresholds, 0.5, budget, 42).unwrap();
            assert_eq!(log.len(), budget);
            assert_eq!(&log[..], &log2[..budget]);
            assert!(best.objective >= prev);
            prev = best.objective;
        }
    }

    #[test]
    fn sampled_configs_stay_in_bounds() {
        let space = SearchSpace::default();
        let base = base_cfg();
        for trial in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(7 ^ trial.wrapping_mul(0x9e3779b97f4a7c15));
            let cfg = space.sample(&base, &mut rng);
            let (bg, wc, wa) = cfg.class_weights;
            for w in [bg, wc, wa] {
                assert!(w > 0.0 && w <= 1.0);
            }
            assert!(cfg.bin >= space.bin_range.0 && cfg.bin <= space.bin_range.1);
            assert!(cfg.sigma >= space.sigma_range.0 && cfg.sigma <= space.sigma_range.1);
        }
    }
}
