//! Causal-context model with a discretized Gaussian per element.
//!
//! For an element at `(r, c)` the context is the part of the `k × k` window
//! centred on it that precedes it in raster order (rows above, then columns to
//! the left on the same row). With `z_j = ctx_j − center` (0 outside the map)
//! and per-class parameters,
//!
//! ```text
//! mean  = center + b + Σ_j w_j z_j
//! scale = MIN_SCALE + exp(a + Σ_j s_j z_j / spread)
//! ```
//!
//! The probability of an integer `v` is the Gaussian mass of `[v − ½, v + ½]`,
//! with the outermost bins of `[v_min, v_max]` extended to ±∞, so every
//! context's PMF sums to one by telescoping.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{bits_of, ClassLayout, EntropyError, PROB_FLOOR};
use crate::grid::Grid;

/// Lower bound on the predicted scale.
pub const MIN_SCALE: f64 = 0.04;
const MAX_LOG_SCALE: f64 = 30.0;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Offsets `(dr, dc)` of the causal part of a `k × k` window, in raster order.
pub fn causal_neighbors(k: usize) -> Vec<(isize, isize)> {
    let h = (k / 2) as isize;
    let mut out = Vec::new();
    for dr in -h..=0 {
        for dc in -h..=h {
            if dr < 0 || dc < 0 {
                out.push((dr, dc));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArContextModel {
    context: usize,
    layout: ClassLayout,
    v_min: i32,
    v_max: i32,
    center: f64,
    spread: f64,
    params: Vec<f64>,
}

#[inline]
fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
fn pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Gaussian mass between standardized edges; `None` means infinite.
#[inline]
fn mass(z_lo: Option<f64>, z_hi: Option<f64>) -> f64 {
    match (z_lo, z_hi) {
        (None, None) => 1.0,
        (None, Some(hi)) => upper_tail(-hi),
        (Some(lo), None) => upper_tail(lo),
        (Some(lo), Some(hi)) => {
            if lo > 0.0 {
                upper_tail(lo) - upper_tail(hi)
            } else if hi < 0.0 {
                upper_tail(-hi) - upper_tail(-lo)
            } else {
                1.0 - upper_tail(hi) - upper_tail(-lo)
            }
        }
    }
}

struct Prediction {
    mean: f64,
    scale: f64,
    clamped: bool,
}

impl ArContextModel {
    fn block_len(&self) -> usize {
        2 * (causal_neighbors(self.context).len() + 1)
    }

    fn check(context: usize, v_min: i32, v_max: i32, spread: f64) -> Result<(), EntropyError> {
        if context % 2 == 0 {
            return Err(EntropyError::InvalidConfig(format!("context window {context} must be odd")));
        }
        if v_max < v_min {
            return Err(EntropyError::InvalidConfig(format!("empty support [{v_min}, {v_max}]")));
        }
        if !(spread.is_finite() && spread > 0.0) {
            return Err(EntropyError::InvalidConfig(format!("spread {spread} must be positive")));
        }
        Ok(())
    }

    /// A broad prior: mean at the centre of the support and a scale equal to
    /// its width, with no context dependence.
    pub fn broad(context: usize, layout: ClassLayout, v_min: i32, v_max: i32) -> Result<Self, EntropyError> {
        let center = 0.5 * (v_min as f64 + v_max as f64);
        let width = (v_max - v_min + 1) as f64;
        Self::check(context, v_min, v_max, width)?;
        let mut m = ArContextModel {
            context,
            layout,
            v_min,
            v_max,
            center,
            spread: width / 4.0,
            params: Vec::new(),
        };
        let k = causal_neighbors(context).len();
        let block = m.block_len();
        m.params = vec![0.0; block * layout.classes()];
        for class in 0..layout.classes() {
            m.params[class * block + k + 1] = (width - MIN_SCALE).ln();
        }
        Ok(m)
    }

    /// Least-squares fit of the mean weights per class, with the scale set
    /// from the residual standard deviation. The context dependence of the
    /// scale starts at zero.
    pub fn fit_least_squares(
        context: usize,
        layout: ClassLayout,
        v_min: i32,
        v_max: i32,
        maps: &[Grid<i32>],
    ) -> Result<Self, EntropyError> {
        let total: usize = maps.iter().map(|m| m.len()).sum();
        if total == 0 {
            return Err(EntropyError::EmptyDataset);
        }
        let sum: f64 = maps.iter().flat_map(|m| m.as_slice()).map(|&v| v as f64).sum();
        let center = sum / total as f64;
        let var: f64 = maps
            .iter()
            .flat_map(|m| m.as_slice())
            .map(|&v| (v as f64 - center).powi(2))
            .sum::<f64>()
            / total as f64;
        let spread = var.sqrt().max(1.0);
        Self::check(context, v_min, v_max, spread)?;

        let nbrs = causal_neighbors(context);
        let k = nbrs.len();
        let dim = k + 1;
        let classes = layout.classes();
        let mut gram = vec![nalgebra::DMatrix::<f64>::zeros(dim, dim); classes];
        let mut rhs = vec![nalgebra::DVector::<f64>::zeros(dim); classes];
        let mut yy = vec![0.0f64; classes];
        let mut n = vec![0usize; classes];
        let mut feat = vec![0.0f64; dim];
        for map in maps {
            for r in 0..map.rows() {
                for c in 0..map.cols() {
                    let class = layout.class_of(c, map.cols());
                    feat[0] = 1.0;
                    for (j, &(dr, dc)) in nbrs.iter().enumerate() {
                        feat[j + 1] = context_value(map, r, c, dr, dc).map_or(0.0, |v| v as f64 - center);
                    }
                    let y = map.get(r, c) as f64 - center;
                    let g = &mut gram[class];
                    for a in 0..dim {
                        rhs[class][a] += feat[a] * y;
                        for b in 0..dim {
                            g[(a, b)] += feat[a] * feat[b];
                        }
                    }
                    yy[class] += y * y;
                    n[class] += 1;
                }
            }
        }

        let block = 2 * dim;
        let mut params = vec![0.0; block * classes];
        for class in 0..classes {
            if n[class] == 0 {
                params[class * block + dim] = spread.ln();
                continue;
            }
            let g = &gram[class];
            let ridge = 1e-9 * (g.trace() / dim as f64) + 1e-12;
            let regularized = g + nalgebra::DMatrix::<f64>::identity(dim, dim) * ridge;
            let beta = regularized
                .cholesky()
                .map(|ch| ch.solve(&rhs[class]))
                .unwrap_or_else(|| nalgebra::DVector::zeros(dim));
            // residual sum of squares: yᵀy − 2βᵀXᵀy + βᵀXᵀXβ
            let rss = yy[class] - 2.0 * beta.dot(&rhs[class]) + (g * &beta).dot(&beta);
            let resid_std = (rss.max(0.0) / n[class] as f64).sqrt();
            let p = &mut params[class * block..(class + 1) * block];
            p[..dim].copy_from_slice(beta.as_slice());
            p[dim] = (resid_std - MIN_SCALE).max(1e-3).ln();
        }
        Ok(ArContextModel {
            context,
            layout,
            v_min,
            v_max,
            center,
            spread,
            params,
        })
    }

    /// Rebuilds a model from stored parts.
    pub fn from_parts(
        context: usize,
        layout: ClassLayout,
        support: (i32, i32),
        center: f64,
        spread: f64,
        params: Vec<f64>,
    ) -> Result<Self, EntropyError> {
        Self::check(context, support.0, support.1, spread)?;
        let m = ArContextModel {
            context,
            layout,
            v_min: support.0,
            v_max: support.1,
            center,
            spread,
            params,
        };
        let expected = m.block_len() * layout.classes();
        if m.params.len() != expected {
            return Err(EntropyError::ParamCount {
                expected,
                found: m.params.len(),
            });
        }
        Ok(m)
    }

    pub fn context(&self) -> usize {
        self.context
    }

    pub fn layout(&self) -> ClassLayout {
        self.layout
    }

    pub fn support(&self) -> (i32, i32) {
        (self.v_min, self.v_max)
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn spread(&self) -> f64 {
        self.spread
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_blocks(&self) -> Vec<(String, Vec<usize>)> {
        let dim = causal_neighbors(self.context).len() + 1;
        let classes = self.layout.classes();
        // stored interleaved per class: [mean block, log-scale block]
        vec![("density.context_weights".into(), vec![classes, 2, dim])]
    }

    fn predict(&self, z: &[f64], class: usize) -> Prediction {
        let dim = z.len() + 1;
        let p = &self.params[class * 2 * dim..(class + 1) * 2 * dim];
        let mut mean = self.center + p[0];
        let mut ls = p[dim];
        for (j, &zj) in z.iter().enumerate() {
            mean += p[j + 1] * zj;
            ls += p[dim + j + 1] * zj / self.spread;
        }
        let clamped = ls > MAX_LOG_SCALE;
        let log_scale = ls.min(MAX_LOG_SCALE);
        Prediction {
            mean,
            scale: MIN_SCALE + log_scale.exp(),
            clamped,
        }
    }

    /// Standardized bin edges of value `t`; open at the tails of the support.
    #[inline]
    fn edges(&self, t: f64, pred: &Prediction) -> (Option<f64>, Option<f64>) {
        let rounded = (t + 0.5).floor();
        let lo = (rounded > self.v_min as f64).then(|| (t - 0.5 - pred.mean) / pred.scale);
        let hi = (rounded < self.v_max as f64).then(|| (t + 0.5 - pred.mean) / pred.scale);
        (lo, hi)
    }

    /// Probability of integer `v` given the context values `z` (already centred).
    pub fn prob(&self, v: i32, z: &[f64], class: usize) -> f64 {
        let pred = self.predict(z, class);
        let t = v.clamp(self.v_min, self.v_max) as f64;
        let (lo, hi) = self.edges(t, &pred);
        mass(lo, hi)
    }

    /// The full PMF over the support for a given context.
    pub fn pmf(&self, z: &[f64], class: usize) -> Vec<f64> {
        (self.v_min..=self.v_max).map(|v| self.prob(v, z, class)).collect()
    }

    pub fn nll_bits(&self, map: &Grid<i32>) -> f64 {
        let nbrs = causal_neighbors(self.context);
        let mut z = vec![0.0; nbrs.len()];
        let mut bits = 0.0;
        for r in 0..map.rows() {
            for c in 0..map.cols() {
                for (j, &(dr, dc)) in nbrs.iter().enumerate() {
                    z[j] = context_value(map, r, c, dr, dc).map_or(0.0, |v| v as f64 - self.center);
                }
                let class = self.layout.class_of(c, map.cols());
                bits += bits_of(self.prob(map.get(r, c), &z, class));
            }
        }
        bits
    }

    pub fn loss_grad(&self, values: &Grid<f64>, grad_params: &mut [f64], grad_input: &mut [f64]) -> f64 {
        let ln2 = std::f64::consts::LN_2;
        let nbrs = causal_neighbors(self.context);
        let k = nbrs.len();
        let dim = k + 1;
        let (rows, cols) = values.shape();
        let (lo_bound, hi_bound) = (self.v_min as f64, self.v_max as f64);
        let mut z = vec![0.0; k];
        let mut src: Vec<Option<usize>> = vec![None; k];
        let mut bits = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                for (j, &(dr, dc)) in nbrs.iter().enumerate() {
                    src[j] = neighbor_index(rows, cols, r, c, dr, dc);
                    z[j] = src[j].map_or(0.0, |i| values.as_slice()[i] - self.center);
                }
                let class = self.layout.class_of(c, cols);
                let pred = self.predict(&z, class);
                let raw = values.get(r, c);
                let t = raw.clamp(lo_bound, hi_bound);
                let (zl, zh) = self.edges(t, &pred);
                let p = mass(zl, zh);
                bits += bits_of(p);
                if p < PROB_FLOOR {
                    continue;
                }
                let (pl, ph) = (zl.map_or(0.0, pdf), zh.map_or(0.0, pdf));
                let (zpl, zph) = (zl.map_or(0.0, |z| z * pdf(z)), zh.map_or(0.0, |z| z * pdf(z)));
                let dl_dp = -1.0 / (p * ln2);
                let dp_dmean = -(ph - pl) / pred.scale;
                let dp_dscale = -(zph - zpl) / pred.scale;
                let dl_dmean = dl_dp * dp_dmean;
                let dl_dls = if pred.clamped {
                    0.0
                } else {
                    dl_dp * dp_dscale * (pred.scale - MIN_SCALE)
                };
                let g = &mut grad_params[class * 2 * dim..(class + 1) * 2 * dim];
                g[0] += dl_dmean;
                g[dim] += dl_dls;
                let p = &self.params[class * 2 * dim..(class + 1) * 2 * dim];
                for j in 0..k {
                    g[j + 1] += dl_dmean * z[j];
                    g[dim + j + 1] += dl_dls * z[j] / self.spread;
                    if let Some(i) = src[j] {
                        grad_input[i] += dl_dmean * p[j + 1] + dl_dls * p[dim + j + 1] / self.spread;
                    }
                }
                if raw > lo_bound && raw < hi_bound {
                    grad_input[r * cols + c] += dl_dp * (ph - pl) / pred.scale;
                }
            }
        }
        bits
    }
}

#[inline]
fn neighbor_index(rows: usize, cols: usize, r: usize, c: usize, dr: isize, dc: isize) -> Option<usize> {
    let rr = r as isize + dr;
    let cc = c as isize + dc;
    (rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols).then(|| rr as usize * cols + cc as usize)
}

#[inline]
fn context_value(map: &Grid<i32>, r: usize, c: usize, dr: isize, dc: isize) -> Option<i32> {
    neighbor_index(map.rows(), map.cols(), r, c, dr, dc).map(|i| map.as_slice()[i])
}
