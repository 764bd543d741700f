//! Layer implementations with explicit forward caches and backward passes.
//!
//! Convolutions run as im2col + one matrix multiply so the heavy lifting stays
//! inside the BLAS kernel.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;

use super::{cast, init::orthogonal, Scalar};

/// Gain applied to orthogonal hidden-layer weights (ReLU networks).
const ORTHO_GAIN: f64 = std::f64::consts::SQRT_2;

/// Valid-padding 1-D convolution. Weights are stored flattened to 2-D as
/// `(out_channels, in_channels * kernel)`.
pub struct Conv<F: Scalar> {
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub gw: Array2<F>,
    pub gb: Array1<F>,
    in_channels: usize,
    kernel: usize,
    cols: Option<Array2<F>>,
    in_dim: (usize, usize, usize),
}

fn im2col<F: Scalar>(x: &Array3<F>, kernel: usize) -> Array2<F> {
    let (b, c, l) = x.dim();
    let lo = l - kernel + 1;
    let mut cols = Array2::<F>::zeros((c * kernel, b * lo));
    let xs = x.as_slice().expect("standard layout");
    for ci in 0..c {
        for t in 0..kernel {
            let row = ci * kernel + t;
            let mut crow = cols.row_mut(row);
            let cs = crow.as_slice_mut().expect("row slice");
            for bi in 0..b {
                let src = &xs[(bi * c + ci) * l + t..(bi * c + ci) * l + t + lo];
                cs[bi * lo..bi * lo + lo].copy_from_slice(src);
            }
        }
    }
    cols
}

/// `(batch, channels, len)` -> `(channels, batch * len)` (and back) without
/// arithmetic, used to bridge activations and the matmul layout.
fn to_mat<F: Scalar>(x: &Array3<F>) -> Array2<F> {
    let (b, c, l) = x.dim();
    let mut m = Array2::<F>::zeros((c, b * l));
    let xs = x.as_slice().expect("standard layout");
    for ci in 0..c {
        let mut row = m.row_mut(ci);
        let rs = row.as_slice_mut().unwrap();
        for bi in 0..b {
            rs[bi * l..(bi + 1) * l].copy_from_slice(&xs[(bi * c + ci) * l..(bi * c + ci) * l + l]);
        }
    }
    m
}

fn from_mat<F: Scalar>(m: &Array2<F>, b: usize, l: usize) -> Array3<F> {
    let c = m.nrows();
    let mut x = Array3::<F>::zeros((b, c, l));
    let xs = x.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        let row = m.row(ci);
        let rs = row.as_slice().unwrap();
        for bi in 0..b {
            xs[(bi * c + ci) * l..(bi * c + ci) * l + l].copy_from_slice(&rs[bi * l..(bi + 1) * l]);
        }
    }
    x
}

impl<F: Scalar> Conv<F> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        zero_init: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = if zero_init {
            Array2::zeros((out_channels, in_channels * kernel))
        } else {
            orthogonal(out_channels, in_channels * kernel, ORTHO_GAIN, rng)
        };
        Conv {
            gw: Array2::zeros(w.raw_dim()),
            w,
            b: Array1::zeros(out_channels),
            gb: Array1::zeros(out_channels),
            in_channels,
            kernel,
            cols: None,
            in_dim: (0, 0, 0),
        }
    }

    pub fn forward(&mut self, x: Array3<F>) -> Array3<F> {
        let (b, c, l) = x.dim();
        debug_assert_eq!(c, self.in_channels);
        let lo = l - self.kernel + 1;
        let cols = im2col(&x, self.kernel);
        let mut y = self.w.dot(&cols);
        for (mut row, &bias) in y.outer_iter_mut().zip(self.b.iter()) {
            row.mapv_inplace(|v| v + bias);
        }
        self.cols = Some(cols);
        self.in_dim = (b, c, l);
        from_mat(&y, b, lo)
    }

    pub fn backward(&mut self, dy: Array3<F>) -> Array3<F> {
        let (b, _oc, lo) = dy.dim();
        let (bi, c, l) = self.in_dim;
        debug_assert_eq!(b, bi);
        let cols = self.cols.take().expect("forward before backward");
        let dy_mat = to_mat(&dy);
        self.gw = dy_mat.dot(&cols.t());
        self.gb = dy_mat.sum_axis(Axis(1));
        let dcols = self.w.t().dot(&dy_mat);
        // col2im scatter-add.
        let mut dx = Array3::<F>::zeros((b, c, l));
        let dxs = dx.as_slice_mut().unwrap();
        for ci in 0..c {
            for t in 0..self.kernel {
                let row = dcols.row(ci * self.kernel + t);
                let rs = row.as_slice().unwrap();
                for bb in 0..b {
                    let dst = &mut dxs[(bb * c + ci) * l + t..(bb * c + ci) * l + t + lo];
                    for (d, &s) in dst.iter_mut().zip(&rs[bb * lo..bb * lo + lo]) {
                        *d = *d + s;
                    }
                }
            }
        }
        dx
    }

    pub fn params(&mut self) -> Vec<(&mut [F], &mut [F])> {
        vec![
            (
                self.w.as_slice_mut().unwrap(),
                self.gw.as_slice_mut().unwrap(),
            ),
            (
                self.b.as_slice_mut().unwrap(),
                self.gb.as_slice_mut().unwrap(),
            ),
        ]
    }
}

/// Non-overlapping max pooling along the length axis; trailing remainder
/// samples are dropped.
pub struct MaxPool<F: Scalar> {
    pool: usize,
    argmax: Vec<usize>,
    in_dim: (usize, usize, usize),
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> MaxPool<F> {
    pub fn new(pool: usize) -> Self {
        MaxPool {
            pool,
            argmax: Vec::new(),
            in_dim: (0, 0, 0),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: Array3<F>) -> Array3<F> {
        let (b, c, l) = x.dim();
        let lo = l / self.pool;
        let mut y = Array3::<F>::zeros((b, c, lo));
        self.argmax.clear();
        self.argmax.resize(b * c * lo, 0);
        for bi in 0..b {
            for ci in 0..c {
                for o in 0..lo {
                    let start = o * self.pool;
                    let mut best = x[[bi, ci, start]];
                    let mut best_t = start;
                    for t in start + 1..start + self.pool {
                        if x[[bi, ci, t]] > best {
                            best = x[[bi, ci, t]];
                            best_t = t;
                        }
                    }
                    y[[bi, ci, o]] = best;
                    self.argmax[(bi * c + ci) * lo + o] = best_t;
                }
            }
        }
        self.in_dim = (b, c, l);
        y
    }

    pub fn backward(&mut self, dy: Array3<F>) -> Array3<F> {
        let (b, c, lo) = dy.dim();
        let mut dx = Array3::<F>::zeros(self.in_dim);
        for bi in 0..b {
            for ci in 0..c {
                for o in 0..lo {
                    let t = self.argmax[(bi * c + ci) * lo + o];
                    dx[[bi, ci, t]] = dx[[bi, ci, t]] + dy[[bi, ci, o]];
                }
            }
        }
        dx
    }
}

/// Per-channel batch normalization. Training mode uses batch statistics and
/// updates the running averages; inference uses the running averages.
pub struct BatchNorm<F: Scalar> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub ggamma: Array1<F>,
    pub gbeta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache<F>>,
}

struct BnCache<F> {
    xhat: Array3<F>,
    inv_std: Array1<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            ggamma: Array1::zeros(channels),
            gbeta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: Array3<F>, train: bool) -> Array3<F> {
        let (b, c, l) = x.dim();
        let n = (b * l) as f64;
        let mut y = Array3::<F>::zeros((b, c, l));
        if train {
            let mut xhat = Array3::<F>::zeros((b, c, l));
            let mut inv_std = Array1::<F>::zeros(c);
            for ci in 0..c {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for bi in 0..b {
                    for t in 0..l {
                        let v = x[[bi, ci, t]].to_f64().unwrap();
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / n;
                let var = (sq / n - mean * mean).max(0.0);
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[ci] = cast(istd);
                let (g, be) = (
                    self.gamma[ci].to_f64().unwrap(),
                    self.beta[ci].to_f64().unwrap(),
                );
                for bi in 0..b {
                    for t in 0..l {
                        let h = (x[[bi, ci, t]].to_f64().unwrap() - mean) * istd;
                        xhat[[bi, ci, t]] = cast(h);
                        y[[bi, ci, t]] = cast(g * h + be);
                    }
                }
                let rm = self.running_mean[ci].to_f64().unwrap();
                let rv = self.running_var[ci].to_f64().unwrap();
                self.running_mean[ci] = cast(rm * (1.0 - self.momentum) + mean * self.momentum);
                self.running_var[ci] = cast(rv * (1.0 - self.momentum) + var * self.momentum);
            }
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            for ci in 0..c {
                let mean = self.running_mean[ci].to_f64().unwrap();
                let var = self.running_var[ci].to_f64().unwrap();
                let istd = 1.0 / (var + self.eps).sqrt();
                let (g, be) = (
                    self.gamma[ci].to_f64().unwrap(),
                    self.beta[ci].to_f64().unwrap(),
                );
                for bi in 0..b {
                    for t in 0..l {
                        let h = (x[[bi, ci, t]].to_f64().unwrap() - mean) * istd;
                        y[[bi, ci, t]] = cast(g * h + be);
                    }
                }
            }
        }
        y
    }

    pub fn backward(&mut self, dy: Array3<F>) -> Array3<F> {
        let cache = self.cache.take().expect("training forward before backward");
        let (b, c, l) = dy.dim();
        let n = cast::<F>((b * l) as f64);
        let mut dx = Array3::<F>::zeros((b, c, l));
        for ci in 0..c {
            let mut sum_dy = F::zero();
            let mut sum_dy_xhat = F::zero();
            for bi in 0..b {
                for t in 0..l {
                    sum_dy = sum_dy + dy[[bi, ci, t]];
                    sum_dy_xhat = sum_dy_xhat + dy[[bi, ci, t]] * cache.xhat[[bi, ci, t]];
                }
            }
            self.gbeta[ci] = sum_dy;
            self.ggamma[ci] = sum_dy_xhat;
            let scale = self.gamma[ci] * cache.inv_std[ci] / n;
            for bi in 0..b {
                for t in 0..l {
                    let term = dy[[bi, ci, t]] * n
                        - sum_dy
                        - cache.xhat[[bi, ci, t]] * sum_dy_xhat;
                    dx[[bi, ci, t]] = scale * term;
                }
            }
        }
        dx
    }

    pub fn params(&mut self) -> Vec<(&mut [F], &mut [F])> {
        vec![
            (
                self.gamma.as_slice_mut().unwrap(),
                self.ggamma.as_slice_mut().unwrap(),
            ),
            (
                self.beta.as_slice_mut().unwrap(),
                self.gbeta.as_slice_mut().unwrap(),
            ),
        ]
    }

    pub fn running_stats(&mut self) -> Vec<&mut [F]> {
        vec![
            self.running_mean.as_slice_mut().unwrap(),
            self.running_var.as_slice_mut().unwrap(),
        ]
    }
}

/// Inverted dropout: kept units scaled by `1/(1-rate)` so inference needs no
/// rescaling. Rate 0 is an exact identity.
pub struct Dropout<F: Scalar> {
    rate: f64,
    mask: Option<Array3<F>>,
}

impl<F: Scalar> Dropout<F> {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate));
        Dropout { rate, mask: None }
    }

    pub fn forward(&mut self, x: Array3<F>, train: bool, rng: &mut impl Rng) -> Array3<F> {
        if !train || self.rate == 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.rate;
        let scale = cast::<F>(1.0 / keep);
        let mask = Array3::from_shape_simple_fn(x.raw_dim(), || {
            if rng.gen::<f64>() < keep {
                scale
            } else {
                F::zero()
            }
        });
        let y = &x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: Array3<F>) -> Array3<F> {
        match self.mask.take() {
            Some(mask) => &dy * &mask,
            None => dy,
        }
    }
}

pub struct Relu<F: Scalar> {
    mask: Option<Array3<F>>,
}

impl<F: Scalar> Relu<F> {
    pub fn new() -> Self {
        Relu { mask: None }
    }

    pub fn forward(&mut self, x: Array3<F>) -> Array3<F> {
        let mask = x.mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
        let y = &x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: Array3<F>) -> Array3<F> {
        let mask = self.mask.take().expect("forward before backward");
        &dy * &mask
    }
}

impl<F: Scalar> Default for Relu<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Fully connected layer over the flattened `(channels * length)` input.
pub struct Dense<F: Scalar> {
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub gw: Array2<F>,
    pub gb: Array1<F>,
    cache_in: Option<Array2<F>>,
    in_dim: (usize, usize, usize),
}

impl<F: Scalar> Dense<F> {
    pub fn new(in_features: usize, units: usize, zero_init: bool, rng: &mut impl Rng) -> Self {
        let w = if zero_init {
            Array2::zeros((units, in_features))
        } else {
            orthogonal(units, in_features, ORTHO_GAIN, rng)
        };
        Dense {
            gw: Array2::zeros(w.raw_dim()),
            w,
            b: Array1::zeros(units),
            gb: Array1::zeros(units),
            cache_in: None,
            in_dim: (0, 0, 0),
        }
    }

    pub fn forward(&mut self, x: Array3<F>) -> Array3<F> {
        let (b, c, l) = x.dim();
        let flat = x
            .into_shape_with_order((b, c * l))
            .expect("dense flatten");
        let mut y = flat.dot(&self.w.t());
        for (mut row, _) in y.outer_iter_mut().zip(0..) {
            row += &self.b;
        }
        self.cache_in = Some(flat);
        self.in_dim = (b, c, l);
        let units = self.w.nrows();
        y.into_shape_with_order((b, units, 1)).expect("dense output")
    }

    pub fn backward(&mut self, dy: Array3<F>) -> Array3<F> {
        let (b, units, _) = dy.dim();
        let dy2 = dy
            .into_shape_with_order((b, units))
            .expect("dense grad flatten");
        let x = self.cache_in.take().expect("forward before backward");
        self.gw = dy2.t().dot(&x);
        self.gb = dy2.sum_axis(Axis(0));
        let dx = dy2.dot(&self.w);
        dx.into_shape_with_order(self.in_dim).expect("dense dx")
    }

    pub fn params(&mut self) -> Vec<(&mut [F], &mut [F])> {
        vec![
            (
                self.w.as_slice_mut().unwrap(),
                self.gw.as_slice_mut().unwrap(),
            ),
            (
                self.b.as_slice_mut().unwrap(),
                self.gb.as_slice_mut().unwrap(),
            ),
        ]
    }
}
