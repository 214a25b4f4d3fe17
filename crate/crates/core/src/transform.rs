//! Learnable integer-to-integer lifting transforms.
//!
//! Each level runs a horizontal lifting pass over the rows of the current
//! low-pass subgrid and then a vertical pass over its columns. A pass splits a
//! line into even and odd samples and applies
//!
//! ```text
//! odd[i]  ← odd[i]  − round(Σ_k p[k]·even[i + k − c])
//! even[i] ← even[i] + round(Σ_k u[k]·odd[i + k − c])
//! ```
//!
//! with `c = (taps − 1) / 2`, indices clamped to the line, and rounding half up.
//! Because each step only reads samples it does not write, the inverse simply
//! replays the steps backwards with the signs flipped, so invertibility holds
//! for arbitrary filter values. Coefficients stay in place: level `l` works on
//! the positions whose row and column are multiples of `2^l`.
//!
//! The relaxed variant drops the rounding and is differentiable in the filter
//! taps and the input; [`LiftingTransform::backward`] is its reverse pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

/// Filters per level, in order: horizontal predict, horizontal update,
/// vertical predict, vertical update.
pub const FILTERS_PER_LEVEL: usize = 4;
pub const FILTER_NAMES: [&str; FILTERS_PER_LEVEL] = ["h_predict", "h_update", "v_predict", "v_update"];

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("map of {rows}x{cols} is too small for {levels} levels (needs at least {need} per side)")]
    TooSmall {
        rows: usize,
        cols: usize,
        levels: usize,
        need: usize,
    },
    #[error("coefficients were produced with {found} levels, transform has {expected}")]
    LevelMismatch { expected: usize, found: usize },
    #[error("expected {expected} parameters, got {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("filter taps must be >= 1")]
    NoTaps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftingTransform {
    levels: usize,
    taps: usize,
    params: Vec<f64>,
}

/// Integer coefficients tagged with the number of levels that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffMap {
    pub values: Grid<i32>,
    pub levels: usize,
}

struct Step {
    filter: usize,
    sign: f64,
    targets: Vec<u32>,
    // `taps` source indices per target
    sources: Vec<u32>,
}

/// Precomputed index lists for one map shape.
pub struct LiftingPlan {
    rows: usize,
    cols: usize,
    levels: usize,
    taps: usize,
    steps: Vec<Step>,
}

impl LiftingPlan {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Inputs of every relaxed step, kept for the reverse pass.
pub struct Tape {
    states: Vec<Vec<f64>>,
}

#[inline]
fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

impl LiftingTransform {
    /// All-zero taps: the identity map at any depth.
    pub fn new(levels: usize, taps: usize) -> Result<Self, TransformError> {
        if taps == 0 {
            return Err(TransformError::NoTaps);
        }
        Ok(LiftingTransform {
            levels,
            taps,
            params: vec![0.0; levels * FILTERS_PER_LEVEL * taps],
        })
    }

    pub fn identity() -> Self {
        LiftingTransform {
            levels: 0,
            taps: 1,
            params: Vec::new(),
        }
    }

    /// Haar-like filters: centre predict tap 1 and centre update tap ½ in
    /// both directions at every level.
    pub fn haar(levels: usize, taps: usize) -> Result<Self, TransformError> {
        let mut t = Self::new(levels, taps)?;
        let centre = (taps - 1) / 2;
        for level in 0..levels {
            for (role, value) in [(0, 1.0), (1, 0.5), (2, 1.0), (3, 0.5)] {
                t.filter_mut(level, role)[centre] = value;
            }
        }
        Ok(t)
    }

    pub fn from_params(levels: usize, taps: usize, params: Vec<f64>) -> Result<Self, TransformError> {
        let mut t = Self::new(levels, taps)?;
        t.set_params(&params)?;
        Ok(t)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), TransformError> {
        if params.len() != self.params.len() {
            return Err(TransformError::ParamCount {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn filter(&self, level: usize, role: usize) -> &[f64] {
        let start = (level * FILTERS_PER_LEVEL + role) * self.taps;
        &self.params[start..start + self.taps]
    }

    pub fn filter_mut(&mut self, level: usize, role: usize) -> &mut [f64] {
        let start = (level * FILTERS_PER_LEVEL + role) * self.taps;
        &mut self.params[start..start + self.taps]
    }

    /// Smallest side length this transform accepts.
    pub fn min_side(&self) -> usize {
        1 << self.levels
    }

    pub fn plan(&self, rows: usize, cols: usize) -> Result<LiftingPlan, TransformError> {
        let need = self.min_side();
        if rows < need || cols < need {
            return Err(TransformError::TooSmall {
                rows,
                cols,
                levels: self.levels,
                need,
            });
        }
        let taps = self.taps;
        let centre = ((taps - 1) / 2) as isize;
        let mut steps = Vec::with_capacity(self.levels * FILTERS_PER_LEVEL);
        for level in 0..self.levels {
            let stride = 1usize << level;
            let sub_rows: Vec<usize> = (0..rows).step_by(stride).collect();
            let sub_cols: Vec<usize> = (0..cols).step_by(stride).collect();
            let horizontal: Vec<Vec<usize>> = sub_rows
                .iter()
                .map(|&r| sub_cols.iter().map(|&c| r * cols + c).collect())
                .collect();
            let vertical: Vec<Vec<usize>> = sub_cols
                .iter()
                .map(|&c| sub_rows.iter().map(|&r| r * cols + c).collect())
                .collect();
            for (pass, lines) in [horizontal, vertical].iter().enumerate() {
                let base = level * FILTERS_PER_LEVEL + 2 * pass;
                let mut predict = Step {
                    filter: base,
                    sign: -1.0,
                    targets: Vec::new(),
                    sources: Vec::new(),
                };
                let mut update = Step {
                    filter: base + 1,
                    sign: 1.0,
                    targets: Vec::new(),
                    sources: Vec::new(),
                };
                for line in lines {
                    let evens: Vec<usize> = line.iter().step_by(2).copied().collect();
                    let odds: Vec<usize> = line.iter().skip(1).step_by(2).copied().collect();
                    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
                    for (i, &t) in odds.iter().enumerate() {
                        predict.targets.push(t as u32);
                        for k in 0..taps as isize {
                            predict.sources.push(evens[clamp(i as isize + k - centre, evens.len())] as u32);
                        }
                    }
                    for (i, &t) in evens.iter().enumerate() {
                        update.targets.push(t as u32);
                        for k in 0..taps as isize {
                            update.sources.push(odds[clamp(i as isize + k - centre, odds.len())] as u32);
                        }
                    }
                }
                steps.push(predict);
                steps.push(update);
            }
        }
        Ok(LiftingPlan {
            rows,
            cols,
            levels: self.levels,
            taps,
            steps,
        })
    }

    fn check_plan(&self, plan: &LiftingPlan) {
        assert!(
            plan.levels == self.levels && plan.taps == self.taps,
            "plan built for a different transform configuration"
        );
    }

    #[inline]
    fn step_sum(&self, step: &Step, j: usize, values: &[f64]) -> f64 {
        let f = &self.params[step.filter * self.taps..(step.filter + 1) * self.taps];
        let src = &step.sources[j * self.taps..(j + 1) * self.taps];
        f.iter().zip(src).map(|(w, &s)| w * values[s as usize]).sum()
    }

    pub fn forward(&self, map: &Grid<i32>) -> Result<CoeffMap, TransformError> {
        let plan = self.plan(map.rows(), map.cols())?;
        Ok(self.forward_with(&plan, map))
    }

    pub fn forward_with(&self, plan: &LiftingPlan, map: &Grid<i32>) -> CoeffMap {
        self.check_plan(plan);
        assert_eq!(map.shape(), plan.shape(), "plan shape");
        // integer values are held exactly in f64
        let mut v: Vec<f64> = map.as_slice().iter().map(|&x| x as f64).collect();
        for step in &plan.steps {
            for (j, &t) in step.targets.iter().enumerate() {
                let acc = self.step_sum(step, j, &v);
                v[t as usize] += step.sign * round_half_up(acc);
            }
        }
        CoeffMap {
            values: Grid::from_vec(map.rows(), map.cols(), v.into_iter().map(|x| x as i32).collect())
                .expect("shape"),
            levels: self.levels,
        }
    }

    pub fn inverse(&self, coeffs: &CoeffMap) -> Result<Grid<i32>, TransformError> {
        if coeffs.levels != self.levels {
            return Err(TransformError::LevelMismatch {
                expected: self.levels,
                found: coeffs.levels,
            });
        }
        let plan = self.plan(coeffs.values.rows(), coeffs.values.cols())?;
        let mut v: Vec<f64> = coeffs.values.as_slice().iter().map(|&x| x as f64).collect();
        for step in plan.steps.iter().rev() {
            for (j, &t) in step.targets.iter().enumerate() {
                let acc = self.step_sum(step, j, &v);
                v[t as usize] -= step.sign * round_half_up(acc);
            }
        }
        Ok(Grid::from_vec(
            coeffs.values.rows(),
            coeffs.values.cols(),
            v.into_iter().map(|x| x as i32).collect(),
        )
        .expect("shape"))
    }

    pub fn forward_relaxed(&self, map: &Grid<f64>) -> Result<Grid<f64>, TransformError> {
        let plan = self.plan(map.rows(), map.cols())?;
        Ok(self.forward_relaxed_taped(&plan, map).0)
    }

    pub fn forward_relaxed_taped(&self, plan: &LiftingPlan, map: &Grid<f64>) -> (Grid<f64>, Tape) {
        self.check_plan(plan);
        assert_eq!(map.shape(), plan.shape(), "plan shape");
        let mut v = map.as_slice().to_vec();
        let mut states = Vec::with_capacity(plan.steps.len());
        for step in &plan.steps {
            states.push(v.clone());
            for (j, &t) in step.targets.iter().enumerate() {
                let acc = self.step_sum(step, j, &v);
                v[t as usize] += step.sign * acc;
            }
        }
        (
            Grid::from_vec(map.rows(), map.cols(), v).expect("shape"),
            Tape { states },
        )
    }

    /// Reverse pass of the relaxed transform. Accumulates filter gradients
    /// into `grad_params` and returns the gradient with respect to the input.
    pub fn backward(&self, plan: &LiftingPlan, tape: &Tape, grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        self.check_plan(plan);
        assert_eq!(grad_params.len(), self.params.len(), "gradient buffer size");
        let taps = self.taps;
        let mut g = grad_out.to_vec();
        for (step, state) in plan.steps.iter().zip(&tape.states).rev() {
            let f = &self.params[step.filter * taps..(step.filter + 1) * taps];
            let gf = &mut grad_params[step.filter * taps..(step.filter + 1) * taps];
            for (j, &t) in step.targets.iter().enumerate() {
                let gt = step.sign * g[t as usize];
                if gt == 0.0 {
                    continue;
                }
                let src = &step.sources[j * taps..(j + 1) * taps];
                for k in 0..taps {
                    let s = src[k] as usize;
                    gf[k] += gt * state[s];
                    g[s] += gt * f[k];
                }
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_map(rng: &mut impl Rng, rows: usize, cols: usize) -> Grid<i32> {
        Grid::from_fn(rows, cols, |_, _| rng.random_range(0..256))
    }

    fn random_transform(rng: &mut impl Rng, levels: usize, taps: usize) -> LiftingTransform {
        let mut t = LiftingTransform::new(levels, taps).unwrap();
        for p in t.params_mut() {
            *p = rng.random_range(-1.5..1.5);
        }
        t
    }

    #[test]
    fn zero_taps_are_identity() {
        let mut rng = crate::rng::stream_rng(1, 0);
        let m = random_map(&mut rng, 16, 12);
        let t = LiftingTransform::new(2, 3).unwrap();
        assert_eq!(t.forward(&m).unwrap().values, m);
        let real = m.map(|v| v as f64 + 0.25);
        assert_eq!(t.forward_relaxed(&real).unwrap(), real);
        let zeros = CoeffMap {
            values: Grid::filled(8, 8, 0),
            levels: 2,
        };
        assert_eq!(t.inverse(&zeros).unwrap(), Grid::filled(8, 8, 0));
    }

    #[test]
    fn random_filters_invert_exactly() {
        let mut rng = crate::rng::stream_rng(2, 0);
        for _ in 0..50 {
            let t = random_transform(&mut rng, 2, 3);
            let rows = rng.random_range(4..20);
            let cols = rng.random_range(4..20);
            let m = random_map(&mut rng, rows, cols);
            let c = t.forward(&m).unwrap();
            assert_eq!(c.values.len(), m.len());
            assert_eq!(t.inverse(&c).unwrap(), m);
        }
    }

    #[test]
    fn haar_on_constant_map_has_zero_details() {
        let t = LiftingTransform::haar(1, 3).unwrap();
        let m = Grid::filled(4, 6, 37);
        let c = t.forward(&m).unwrap().values;
        for r in 0..4 {
            for col in 0..6 {
                let expected = if r % 2 == 0 && col % 2 == 0 { 37 } else { 0 };
                assert_eq!(c.get(r, col), expected, "({r}, {col})");
            }
        }
    }

    #[test]
    fn errors() {
        let t = LiftingTransform::new(3, 3).unwrap();
        assert!(matches!(
            t.forward(&Grid::filled(4, 16, 0)),
            Err(TransformError::TooSmall { .. })
        ));
        let c = CoeffMap {
            values: Grid::filled(8, 8, 0),
            levels: 2,
        };
        assert_eq!(
            t.inverse(&c).unwrap_err(),
            TransformError::LevelMismatch { expected: 3, found: 2 }
        );
        assert_eq!(LiftingTransform::new(1, 0).unwrap_err(), TransformError::NoTaps);
    }

    #[test]
    fn relaxed_and_integer_agree_within_half_for_one_step() {
        // a single rounded step can move each target by at most ½
        let mut rng = crate::rng::stream_rng(3, 0);
        let mut t = LiftingTransform::new(1, 3).unwrap();
        for p in t.filter_mut(0, 0) {
            *p = rng.random_range(-1.0..1.0);
        }
        let m = random_map(&mut rng, 8, 8);
        let exact = t.forward(&m).unwrap().values;
        let relaxed = t.forward_relaxed(&m.map(|v| v as f64)).unwrap();
        for (a, b) in exact.as_slice().iter().zip(relaxed.as_slice()) {
            assert!((*a as f64 - b).abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn identity_transform_accepts_any_shape() {
        let t = LiftingTransform::identity();
        let m = Grid::filled(1, 1, 9);
        assert_eq!(t.forward(&m).unwrap().values, m);
    }
}
