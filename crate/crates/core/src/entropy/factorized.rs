//! Per-class univariate PMFs over an integer support.
//!
//! Each class holds one logit per bin; the PMF is their softmax, so the
//! cumulative function `C(v) = Σ_{u ≤ v} q(u)` is monotone and ends at 1.
//! Values outside `[v_min, v_max]` are folded into the end bins.
//!
//! The relaxed likelihood of a real value `t` is the mass of the unit interval
//! centred on `t` under the piecewise-uniform density of the PMF:
//! `(1 − f)·q(b) + f·q(b + 1)` with `b = ⌊t⌋`, `f = t − b`.

use serde::{Deserialize, Serialize};

use super::{bits_of, ClassLayout, EntropyError, PROB_FLOOR};
use crate::grid::Grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizedModel {
    v_min: i32,
    v_max: i32,
    layout: ClassLayout,
    logits: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl FactorizedModel {
    pub fn uniform(v_min: i32, v_max: i32, layout: ClassLayout) -> Result<Self, EntropyError> {
        if v_max < v_min {
            return Err(EntropyError::InvalidConfig(format!("empty support [{v_min}, {v_max}]")));
        }
        let bins = (v_max - v_min + 1) as usize;
        Ok(FactorizedModel {
            v_min,
            v_max,
            layout,
            logits: vec![0.0; bins * layout.classes()],
        })
    }

    /// Logits set to `ln(count + pseudo_count)` of the values in `maps`.
    pub fn from_counts(
        v_min: i32,
        v_max: i32,
        layout: ClassLayout,
        maps: &[Grid<i32>],
        pseudo_count: f64,
    ) -> Result<Self, EntropyError> {
        let mut m = Self::uniform(v_min, v_max, layout)?;
        let bins = m.bins();
        let mut counts = vec![pseudo_count; m.logits.len()];
        for map in maps {
            for r in 0..map.rows() {
                for c in 0..map.cols() {
                    let class = layout.class_of(c, map.cols());
                    counts[class * bins + m.bin(map.get(r, c))] += 1.0;
                }
            }
        }
        for (l, n) in m.logits.iter_mut().zip(counts) {
            *l = n.ln();
        }
        Ok(m)
    }

    /// An explicit PMF (one class). Zero entries get probability `PROB_FLOOR`.
    pub fn from_pmf(v_min: i32, pmf: &[f64]) -> Result<Self, EntropyError> {
        if pmf.is_empty() {
            return Err(EntropyError::InvalidConfig("empty pmf".into()));
        }
        let mut m = Self::uniform(v_min, v_min + pmf.len() as i32 - 1, ClassLayout::Uniform)?;
        for (l, p) in m.logits.iter_mut().zip(pmf) {
            *l = p.max(PROB_FLOOR).ln();
        }
        Ok(m)
    }

    pub fn support(&self) -> (i32, i32) {
        (self.v_min, self.v_max)
    }

    pub fn bins(&self) -> usize {
        (self.v_max - self.v_min + 1) as usize
    }

    pub fn layout(&self) -> ClassLayout {
        self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn param_blocks(&self) -> Vec<(String, Vec<usize>)> {
        vec![("density.logits".into(), vec![self.layout.classes(), self.bins()])]
    }

    #[inline]
    fn bin(&self, v: i32) -> usize {
        (v.clamp(self.v_min, self.v_max) - self.v_min) as usize
    }

    pub fn pmf(&self, class: usize) -> Vec<f64> {
        let bins = self.bins();
        softmax(&self.logits[class * bins..(class + 1) * bins])
    }

    pub fn cdf(&self, class: usize) -> Vec<f64> {
        self.pmf(class)
            .into_iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }

    fn pmfs(&self) -> Vec<Vec<f64>> {
        (0..self.layout.classes()).map(|c| self.pmf(c)).collect()
    }

    pub fn nll_bits(&self, map: &Grid<i32>) -> f64 {
        let pmfs = self.pmfs();
        let mut bits = 0.0;
        for r in 0..map.rows() {
            for c in 0..map.cols() {
                let class = self.layout.class_of(c, map.cols());
                bits += bits_of(pmfs[class][self.bin(map.get(r, c))]);
            }
        }
        bits
    }

    pub fn loss_grad(&self, values: &Grid<f64>, grad_params: &mut [f64], grad_input: &mut [f64]) -> f64 {
        let bins = self.bins();
        let pmfs = self.pmfs();
        let ln2 = std::f64::consts::LN_2;
        let mut per_class = vec![0.0f64; self.layout.classes()];
        let mut bits = 0.0;
        let (lo, hi) = (self.v_min as f64, self.v_max as f64);
        for r in 0..values.rows() {
            for c in 0..values.cols() {
                let i = r * values.cols() + c;
                let class = self.layout.class_of(c, values.cols());
                let raw = values.get(r, c);
                let t = raw.clamp(lo, hi);
                let b = t.floor();
                let idx = (b - lo) as usize;
                let (f, next) = if idx + 1 < bins { (t - b, idx + 1) } else { (0.0, idx) };
                let p = &pmfs[class];
                let mass = (1.0 - f) * p[idx] + f * p[next];
                bits += bits_of(mass);
                if mass < PROB_FLOOR {
                    continue;
                }
                // d(−log₂ P)/dz_l = (p_l − [(1−f)p_b δ_bl + f p_{b+1} δ_{b+1,l}] / P) / ln 2
                per_class[class] += 1.0;
                let g = &mut grad_params[class * bins..(class + 1) * bins];
                g[idx] -= (1.0 - f) * p[idx] / (mass * ln2);
                g[next] -= f * p[next] / (mass * ln2);
                if raw > lo && raw < hi {
                    grad_input[i] -= (p[next] - p[idx]) / (mass * ln2);
                }
            }
        }
        for (class, n) in per_class.iter().enumerate() {
            if *n > 0.0 {
                let g = &mut grad_params[class * bins..(class + 1) * bins];
                for (gl, pl) in g.iter_mut().zip(&pmfs[class]) {
                    *gl += n * pl / ln2;
                }
            }
        }
        bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_256_costs_eight_bits() {
        let m = FactorizedModel::uniform(0, 255, ClassLayout::Uniform).unwrap();
        let map = Grid::from_fn(7, 5, |r, c| ((r * 37 + c * 11) % 256) as i32);
        assert!((m.nll_bits(&map) / map.len() as f64 - 8.0).abs() < 1e-12);
    }

    #[test]
    fn point_mass_costs_nothing() {
        let m = FactorizedModel::from_pmf(0, &[0.0, 1.0, 0.0]).unwrap();
        let map = Grid::filled(4, 4, 1);
        assert!(m.nll_bits(&map) < 1e-9);
    }

    #[test]
    fn pmf_normalized_and_cdf_monotone() {
        let mut m = FactorizedModel::uniform(-3, 12, ClassLayout::ColumnInterleave { period: 2 }).unwrap();
        for (i, l) in m.params_mut().iter_mut().enumerate() {
            *l = ((i * 7919) % 23) as f64 * 0.37 - 4.0;
        }
        for class in 0..2 {
            let pmf = m.pmf(class);
            assert!(pmf.iter().all(|&p| p >= 0.0));
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let cdf = m.cdf(class);
            assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn out_of_support_values_fold_into_tails() {
        let m = FactorizedModel::from_pmf(0, &[0.25, 0.5, 0.25]).unwrap();
        let low = Grid::filled(1, 1, -40);
        let high = Grid::filled(1, 1, 99);
        assert!((m.nll_bits(&low) - 2.0).abs() < 1e-12);
        assert!((m.nll_bits(&high) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn relaxed_equals_exact_on_integers() {
        let m = FactorizedModel::from_pmf(0, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let ints = Grid::from_vec(1, 4, vec![0, 1, 2, 3]).unwrap();
        let mut gp = vec![0.0; m.params().len()];
        let mut gi = vec![0.0; 4];
        let relaxed = m.loss_grad(&ints.map(|v| v as f64), &mut gp, &mut gi);
        assert!((relaxed - m.nll_bits(&ints)).abs() < 1e-12);
    }
}
