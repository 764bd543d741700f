//! Weighted grid voting, Gaussian blurring, and non-maximum suppression.
//!
//! Windows whose total object probability exceeds the voting threshold cast a
//! vote at their regressed center position, into a class-agnostic grid with
//! the total probability and into each class grid with the class probability.
//! The blurred agnostic grid is scanned for strict local maxima; each maximum
//! becomes one detection carrying the class with the highest vote sum there.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataio::ObjectClass;
use crate::nn::{ClassProbs, Prediction};
use crate::preprocess::Window;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteConfig {
    /// Voting threshold on the total object probability.
    pub threshold: f64,
    /// Class weights `(background, wheelchair, walker)`.
    pub class_weights: (f64, f64, f64),
    /// Grid resolution, meters per cell.
    pub bin: f64,
    /// Gaussian blur width in grid cells.
    pub sigma: f64,
    /// Square grid extent `[-extent, extent]^2`, meters.
    pub extent: f64,
}

impl Default for VoteConfig {
    /// The tuned operating point: weights (0.38, 0.60, 0.49), 0.1 m cells,
    /// sigma 2.93 cells, at threshold 0.5.
    fn default() -> Self {
        VoteConfig {
            threshold: 0.5,
            class_weights: (0.38, 0.60, 0.49),
            bin: 0.1,
            sigma: 2.93,
            extent: 15.5,
        }
    }
}

impl VoteConfig {
    pub fn grid_geometry(&self) -> GridGeometry {
        let cells = (2.0 * self.extent / self.bin).ceil() as usize;
        GridGeometry {
            min: (-self.extent, -self.extent),
            bin: self.bin,
            nx: cells,
            ny: cells,
        }
    }
}

/// Cell layout shared by all grids of one voting pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub min: (f64, f64),
    pub bin: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridGeometry {
    /// Floor-quantized cell of a world position, `None` outside the extent.
    pub fn cell_of(&self, pos: (f64, f64)) -> Option<(usize, usize)> {
        let ix = ((pos.0 - self.min.0) / self.bin).floor();
        let iy = ((pos.1 - self.min.1) / self.bin).floor();
        if ix < 0.0 || iy < 0.0 || ix >= self.nx as f64 || iy >= self.ny as f64 {
            None
        } else {
            Some((ix as usize, iy as usize))
        }
    }

    /// World position of a cell's center.
    pub fn center_of(&self, cell: (usize, usize)) -> (f64, f64) {
        (
            self.min.0 + (cell.0 as f64 + 0.5) * self.bin,
            self.min.1 + (cell.1 as f64 + 0.5) * self.bin,
        )
    }
}

/// Class-agnostic and per-class vote accumulators.
pub struct VotingGrids {
    pub geometry: GridGeometry,
    pub agnostic: Array2<f64>,
    pub wheelchair: Array2<f64>,
    pub walker: Array2<f64>,
    /// Votes falling outside the grid extent.
    pub dropped: usize,
    /// Votes cast.
    pub cast: usize,
}

/// One detected object center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// World-frame position, meters.
    pub position: (f64, f64),
    pub klass: ObjectClass,
    /// Blurred agnostic vote mass at the detection cell.
    pub score: f64,
}

/// Apply class weights and renormalize: `w_c p(c) / sum_i w_i p(i)`.
pub fn reweight(p: &ClassProbs, weights: (f64, f64, f64)) -> ClassProbs {
    let bg = weights.0 * p.background;
    let wc = weights.1 * p.wheelchair;
    let wa = weights.2 * p.walker;
    let z = bg + wc + wa;
    ClassProbs {
        background: bg / z,
        wheelchair: wc / z,
        walker: wa / z,
    }
}

/// Accumulate votes from all windows with reweighted object probability above
/// the threshold. Accumulation order is fixed by sorting the votes, so the
/// result does not depend on window order.
pub fn cast_votes(windows: &[Window], predictions: &[Prediction], cfg: &VoteConfig) -> VotingGrids {
    assert_eq!(windows.len(), predictions.len());
    let geometry = cfg.grid_geometry();
    let mut votes: Vec<((usize, usize), f64, f64, f64)> = Vec::new();
    let mut dropped = 0;
    let mut cast = 0;
    for (w, pred) in windows.iter().zip(predictions) {
        let p = reweight(&pred.probs, cfg.class_weights);
        let p_obj = p.wheelchair + p.walker;
        if p_obj <= cfg.threshold {
            continue;
        }
        cast += 1;
        let pos = w.frame.from_local(pred.offset);
        match geometry.cell_of(pos) {
            Some(cell) => votes.push((cell, p_obj, p.wheelchair, p.walker)),
            None => dropped += 1,
        }
    }
    votes.sort_by(|a, b| {
        (a.0, a.1.to_bits(), a.2.to_bits(), a.3.to_bits()).cmp(&(
            b.0,
            b.1.to_bits(),
            b.2.to_bits(),
            b.3.to_bits(),
        ))
    });

    let mut grids = VotingGrids {
        agnostic: Array2::zeros((geometry.nx, geometry.ny)),
        wheelchair: Array2::zeros((geometry.nx, geometry.ny)),
        walker: Array2::zeros((geometry.nx, geometry.ny)),
        geometry,
        dropped,
        cast,
    };
    for ((ix, iy), p_obj, p_wc, p_wa) in votes {
        grids.agnostic[[ix, iy]] += p_obj;
        grids.wheelchair[[ix, iy]] += p_wc;
        grids.walker[[ix, iy]] += p_wa;
    }
    grids
}

/// Normalized 1-D Gaussian kernel truncated at `ceil(3 sigma)` cells.
fn kernel_1d(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Gaussian-blur a grid (zero padding at the borders). Implemented by
/// splatting the separable kernel from every nonzero cell, which equals the
/// dense 2-D convolution.
pub fn blur_grid(grid: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return grid.clone();
    }
    let k = kernel_1d(sigma);
    let radius = (k.len() / 2) as i64;
    let (nx, ny) = grid.dim();
    let mut out = Array2::<f64>::zeros((nx, ny));
    for ix in 0..nx {
        for iy in 0..ny {
            let v = grid[[ix, iy]];
            if v == 0.0 {
                continue;
            }
            let x_lo = (ix as i64 - radius).max(0);
            let x_hi = (ix as i64 + radius).min(nx as i64 - 1);
            let y_lo = (iy as i64 - radius).max(0);
            let y_hi = (iy as i64 + radius).min(ny as i64 - 1);
            for x in x_lo..=x_hi {
                let kx = v * k[(x - ix as i64 + radius) as usize];
                for y in y_lo..=y_hi {
                    out[[x as usize, y as usize]] += kx * k[(y - iy as i64 + radius) as usize];
                }
            }
        }
    }
    out
}

/// Blur all three grids in place.
pub fn blur(mut grids: VotingGrids, sigma: f64) -> VotingGrids {
    grids.agnostic = blur_grid(&grids.agnostic, sigma);
    grids.wheelchair = blur_grid(&grids.wheelchair, sigma);
    grids.walker = blur_grid(&grids.walker, sigma);
    grids
}

/// Strict 8-neighborhood local maxima of the blurred agnostic grid. Ties are
/// broken by the lexicographically smallest cell index; each maximum yields a
/// detection at the cell center with the class holding the larger vote sum
/// (wheelchair on a class tie). Sorted by descending score.
pub fn nms(grids: &VotingGrids) -> Vec<Detection> {
    let (nx, ny) = grids.agnostic.dim();
    let mut detections = Vec::new();
    for ix in 0..nx {
        for iy in 0..ny {
            let v = grids.agnostic[[ix, iy]];
            if v <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nb: for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (x, y) = (ix as i64 + dx, iy as i64 + dy);
                    if x < 0 || y < 0 || x >= nx as i64 || y >= ny as i64 {
                        continue;
                    }
                    let u = grids.agnostic[[x as usize, y as usize]];
                    if u > v || (u == v && (x as usize, y as usize) < (ix, iy)) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                let klass = if grids.wheelchair[[ix, iy]] >= grids.walker[[ix, iy]] {
                    ObjectClass::Wheelchair
                } else {
                    ObjectClass::Walker
                };
                detections.push(Detection {
                    position: grids.geometry.center_of((ix, iy)),
                    klass,
                    score: v,
                });
            }
        }
    }
    detections.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.position.partial_cmp(&b.position).unwrap())
    });
    detections
}

/// Full voting stage: accumulate, blur, extract maxima.
pub fn detect(windows: &[Window], predictions: &[Prediction], cfg: &VoteConfig) -> Vec<Detection> {
    let grids = blur(cast_votes(windows, predictions, cfg), cfg.sigma);
    nms(&grids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LocalFrame;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probs(bg: f64, wc: f64, wa: f64) -> ClassProbs {
        ClassProbs {
            background: bg,
            wheelchair: wc,
            walker: wa,
        }
    }

    fn window_at(x: f64, y: f64) -> Window {
        Window {
            samples: vec![0.0; 4],
            center_beam: 0,
            center_range: (x * x + y * y).sqrt(),
            frame: LocalFrame {
                origin: (x, y),
                rotation: 0.0,
            },
        }
    }

    fn small_cfg() -> VoteConfig {
        VoteConfig {
            extent: 6.0,
            ..VoteConfig::default()
        }
    }

    #[test]
    fn reweight_identity_and_derived_value() {
        let p = probs(0.2, 0.5, 0.3);
        let same = reweight(&p, (1.0, 1.0, 1.0));
        assert!((same.background - 0.2).abs() < 1e-12);
        assert!((same.wheelchair - 0.5).abs() < 1e-12);

        let w = reweight(&p, (0.38, 0.60, 0.49));
        assert!((w.background - 0.1453).abs() < 1e-4, "{}", w.background);
        assert!((w.wheelchair - 0.5736).abs() < 1e-4);
        assert!((w.walker - 0.2810).abs() < 1e-4);

        let hot = reweight(&probs(0.0, 1.0, 0.0), (0.38, 0.60, 0.49));
        assert_eq!(hot.wheelchair, 1.0);
        assert_eq!(hot.background, 0.0);
    }

    #[test]
    fn below_threshold_casts_nothing() {
        let cfg = VoteConfig {
            threshold: 0.95,
            class_weights: (1.0, 1.0, 1.0),
            ..small_cfg()
        };
        let w = vec![window_at(2.0, 0.0)];
        let p = vec![Prediction {
            probs: probs(0.1, 0.7, 0.2),
            offset: (0.0, 0.0),
        }];
        let grids = cast_votes(&w, &p, &cfg);
        assert_eq!(grids.cast, 0);
        assert_eq!(grids.agnostic.sum(), 0.0);
    }

    #[test]
    fn single_vote_weights() {
        let cfg = VoteConfig {
            threshold: 0.5,
            class_weights: (1.0, 1.0, 1.0),
            ..small_cfg()
        };
        let w = vec![window_at(2.0, 0.0)];
        let p = vec![Prediction {
            probs: probs(0.1, 0.7, 0.2),
            offset: (0.0, 0.0),
        }];
        let grids = cast_votes(&w, &p, &cfg);
        let cell = grids.geometry.cell_of((2.0, 0.0)).unwrap();
        assert!((grids.agnostic[[cell.0, cell.1]] - 0.9).abs() < 1e-12);
        assert!((grids.wheelchair[[cell.0, cell.1]] - 0.7).abs() < 1e-12);
        assert!((grids.walker[[cell.0, cell.1]] - 0.2).abs() < 1e-12);

        // N identical windows scale the cell exactly N-fold.
        let n = 7;
        let grids_n = cast_votes(&vec![w[0].clone(); n], &vec![p[0].clone(); n], &cfg);
        assert!(
            (grids_n.agnostic[[cell.0, cell.1]] - grids.agnostic[[cell.0, cell.1]] * n as f64)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn agnostic_equals_class_sum_before_blur() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = VoteConfig {
            threshold: 0.2,
            class_weights: (0.38, 0.6, 0.49),
            ..small_cfg()
        };
        let (ws, ps) = random_votes(&mut rng, 200);
        let grids = cast_votes(&ws, &ps, &cfg);
        for ((a, w), wa) in grids
            .agnostic
            .iter()
            .zip(grids.wheelchair.iter())
            .zip(grids.walker.iter())
        {
            assert!((a - (w + wa)).abs() < 1e-9);
        }
    }

    fn random_votes(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Window>, Vec<Prediction>) {
        let mut ws = Vec::new();
        let mut ps = Vec::new();
        for _ in 0..n {
            ws.push(window_at(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)));
            let a: f64 = rng.gen_range(0.0..1.0);
            let b: f64 = rng.gen_range(0.0..(1.0 - a).max(1e-9));
            ps.push(Prediction {
                probs: probs(1.0 - a - b, a, b),
                offset: (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
            });
        }
        (ws, ps)
    }

    #[test]
    fn voting_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = small_cfg();
        let (ws, ps) = random_votes(&mut rng, 300);
        let base = cast_votes(&ws, &ps, &cfg);
        let mut idx: Vec<usize> = (0..ws.len()).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);
        let ws2: Vec<Window> = idx.iter().map(|&i| ws[i].clone()).collect();
        let ps2: Vec<Prediction> = idx.iter().map(|&i| ps[i].clone()).collect();
        let perm = cast_votes(&ws2, &ps2, &cfg);
        assert_eq!(base.agnostic, perm.agnostic);
        assert_eq!(base.wheelchair, perm.wheelchair);
        assert_eq!(base.walker, perm.walker);
    }

    #[test]
    fn raising_threshold_never_casts_more_votes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (ws, ps) = random_votes(&mut rng, 200);
        let mut prev = usize::MAX;
        for k in 0..=10 {
            let cfg = VoteConfig {
                threshold: k as f64 / 10.0,
                ..small_cfg()
            };
            let cast = cast_votes(&ws, &ps, &cfg).cast;
            assert!(cast <= prev);
            prev = cast;
        }
    }

    #[test]
    fn blur_identity_and_mass() {
        let mut g = Array2::<f64>::zeros((41, 41));
        g[[20, 20]] = 1.0;
        assert_eq!(blur_grid(&g, 0.0), g);
        let b = blur_grid(&g, 2.93);
        assert!((b.sum() - 1.0).abs() < 1e-9);
    }

    /// O(n^2 k^2) dense convolution with the truncated normalized 2-D kernel.
    fn blur_oracle(grid: &Array2<f64>, sigma: f64) -> Array2<f64> {
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel = Vec::new();
        let mut z = 0.0;
        for i in -radius..=radius {
            for j in -radius..=radius {
                let v = (-((i * i + j * j) as f64) / (2.0 * sigma * sigma)).exp();
                kernel.push(v);
                z += v;
            }
        }
        let (nx, ny) = grid.dim();
        let mut out = Array2::<f64>::zeros((nx, ny));
        let k = (2 * radius + 1) as usize;
        for x in 0..nx as i64 {
            for y in 0..ny as i64 {
                let mut acc = 0.0;
                for i in -radius..=radius {
                    for j in -radius..=radius {
                        let (sx, sy) = (x - i, y - j);
                        if sx >= 0 && sy >= 0 && sx < nx as i64 && sy < ny as i64 {
                            let kv = kernel[((i + radius) as usize) * k + (j + radius) as usize];
                            acc += kv * grid[[sx as usize, sy as usize]];
                        }
                    }
                }
                out[[x as usize, y as usize]] = acc / z;
            }
        }
        out
    }

    #[test]
    fn blur_matches_dense_convolution_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Array2::from_shape_fn((32, 32), |_| rng.gen_range(0.0..1.0));
        let fast = blur_grid(&g, 1.7);
        let slow = blur_oracle(&g, 1.7);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    /// Exhaustive strict-maxima scan used as the NMS oracle.
    fn nms_oracle(grids: &VotingGrids) -> Vec<(usize, usize)> {
        let (nx, ny) = grids.agnostic.dim();
        let mut cells = Vec::new();
        for ix in 0..nx {
            for iy in 0..ny {
                let v = grids.agnostic[[ix, iy]];
                if v <= 0.0 {
                    continue;
                }
                let mut ok = true;
                for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (x, y) = (ix as i64 + dx, iy as i64 + dy);
                        if x < 0 || y < 0 || x >= nx as i64 || y >= ny as i64 {
                            continue;
                        }
                        let u = grids.agnostic[[x as usize, y as usize]];
                        if u > v || (u == v && (x as usize, y as usize) < (ix, iy)) {
                            ok = false;
                        }
                    }
                }
                if ok {
                    cells.push((ix, iy));
                }
            }
        }
        cells
    }

    #[test]
    fn single_vote_yields_single_detection() {
        let cfg = VoteConfig {
            class_weights: (1.0, 1.0, 1.0),
            ..small_cfg()
        };
        let w = vec![window_at(2.03, 0.31)];
        let p = vec![Prediction {
            probs: probs(0.05, 0.9, 0.05),
            offset: (0.0, 0.0),
        }];
        let dets = detect(&w, &p, &cfg);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].klass, ObjectClass::Wheelchair);
        assert!((dets[0].position.0 - 2.03).abs() <= cfg.bin);
        assert!((dets[0].position.1 - 0.31).abs() <= cfg.bin);
    }

    #[test]
    fn well_separated_votes_keep_their_classes() {
        let cfg = VoteConfig {
            class_weights: (1.0, 1.0, 1.0),
            ..small_cfg()
        };
        let ws = vec![window_at(2.0, 2.0), window_at(2.0, -3.0)];
        let ps = vec![
            Prediction {
                probs: probs(0.05, 0.9, 0.05),
                offset: (0.0, 0.0),
            },
            Prediction {
                probs: probs(0.05, 0.05, 0.9),
                offset: (0.0, 0.0),
            },
        ];
        let dets = detect(&ws, &ps, &cfg);
        assert_eq!(dets.len(), 2);
        let classes: Vec<ObjectClass> = dets.iter().map(|d| d.klass).collect();
        assert!(classes.contains(&ObjectClass::Wheelchair));
        assert!(classes.contains(&ObjectClass::Walker));
    }

    #[test]
    fn nms_matches_exhaustive_scan_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let geometry = GridGeometry {
                min: (0.0, 0.0),
                bin: 0.1,
                nx: 64,
                ny: 64,
            };
            let agnostic = Array2::from_shape_fn((64, 64), |_| {
                if rng.gen_bool(0.2) {
                    rng.gen_range(0.0..1.0)
                } else {
                    0.0
                }
            });
            let grids = VotingGrids {
                geometry,
                wheelchair: &agnostic * 0.6,
                walker: &agnostic * 0.4,
                agnostic,
                dropped: 0,
                cast: 0,
            };
            let dets = nms(&grids);
            let mut got: Vec<(usize, usize)> = dets
                .iter()
                .map(|d| geometry.cell_of(d.position).unwrap())
                .collect();
            got.sort();
            let want = nms_oracle(&grids);
            assert_eq!(got, want);
        }
    }
}
