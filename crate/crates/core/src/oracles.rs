//! Classical MI and entropy estimators used as references.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;
use thiserror::Error;

use crate::rng::stream_rng;

/// Magnitude of the tie-breaking jitter added by [`ksg_mi`].
pub const KSG_JITTER: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("count table is empty")]
    EmptyTable,
    #[error("count table rows have different lengths")]
    Ragged,
    #[error("correlation {0} must satisfy |rho| < 1")]
    InvalidRho(f64),
    #[error("invalid pmf: {0}")]
    InvalidPmf(String),
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("x and y have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("k must be >= 1")]
    InvalidK,
    #[error("bin count must be >= 1")]
    InvalidBins,
}

/// Joint counts over a finite alphabet pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountTable {
    nx: usize,
    ny: usize,
    counts: Vec<u64>,
}

impl CountTable {
    pub fn new(rows: &[Vec<u64>]) -> Result<Self, OracleError> {
        let ny = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ny) {
            return Err(OracleError::Ragged);
        }
        let t = CountTable {
            nx: rows.len(),
            ny,
            counts: rows.concat(),
        };
        if t.total() == 0 {
            return Err(OracleError::EmptyTable);
        }
        Ok(t)
    }

    /// Tallies `(a, b)` pairs into an `nx × ny` table. Pairs must be in range.
    pub fn from_pairs(nx: usize, ny: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, OracleError> {
        let mut counts = vec![0u64; nx * ny];
        for (a, b) in pairs {
            counts[a * ny + b] += 1;
        }
        let t = CountTable { nx, ny, counts };
        if t.total() == 0 {
            return Err(OracleError::EmptyTable);
        }
        Ok(t)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn get(&self, a: usize, b: usize) -> u64 {
        self.counts[a * self.ny + b]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn transpose(&self) -> CountTable {
        let mut counts = vec![0u64; self.counts.len()];
        for a in 0..self.nx {
            for b in 0..self.ny {
                counts[b * self.nx + a] = self.get(a, b);
            }
        }
        CountTable {
            nx: self.ny,
            ny: self.nx,
            counts,
        }
    }
}

/// Plug-in MI of a count table, in bits.
pub fn histogram_mi(table: &CountTable) -> f64 {
    let n = table.total() as f64;
    let mut px = vec![0.0; table.nx];
    let mut py = vec![0.0; table.ny];
    for a in 0..table.nx {
        for b in 0..table.ny {
            let c = table.get(a, b) as f64;
            px[a] += c;
            py[b] += c;
        }
    }
    let mut mi = 0.0;
    for a in 0..table.nx {
        for b in 0..table.ny {
            let c = table.get(a, b) as f64;
            if c > 0.0 {
                mi += c / n * (c * n / (px[a] * py[b])).log2();
            }
        }
    }
    // rounding can leave a tiny negative value on product tables
    mi.max(0.0)
}

/// Equal-width bin index of `v` over `[lo, hi]`.
#[inline]
fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

/// Plug-in MI after binning each variable into `bins` equal-width bins over
/// its observed range.
pub fn binned_mi(xs: &[f64], ys: &[f64], bins: usize) -> Result<f64, OracleError> {
    if xs.len() != ys.len() {
        return Err(OracleError::LengthMismatch(xs.len(), ys.len()));
    }
    if bins == 0 {
        return Err(OracleError::InvalidBins);
    }
    let range = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    };
    let (xl, xh) = range(xs);
    let (yl, yh) = range(ys);
    let table = CountTable::from_pairs(
        bins,
        bins,
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| (bin_of(x, xl, xh, bins), bin_of(y, yl, yh, bins))),
    )?;
    Ok(histogram_mi(&table))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsgResult {
    pub bits: f64,
    pub k: usize,
    pub n: usize,
    pub jitter_seed: u64,
    /// Set when for nearly every point the k-th neighbour is equally far in
    /// x and in y, up to the jitter. This happens when y is a copy of x and
    /// the continuous MI is infinite.
    pub degenerate: bool,
}

/// Kraskov–Stögbauer–Grassberger estimate (first algorithm, max norm) in bits.
/// Both coordinates get a uniform jitter of magnitude [`KSG_JITTER`] drawn from
/// `jitter_seed` to break ties.
pub fn ksg_mi(xs: &[f64], ys: &[f64], k: usize, jitter_seed: u64) -> Result<KsgResult, OracleError> {
    if xs.len() != ys.len() {
        return Err(OracleError::LengthMismatch(xs.len(), ys.len()));
    }
    if k == 0 {
        return Err(OracleError::InvalidK);
    }
    let n = xs.len();
    if n < k + 2 {
        return Err(OracleError::TooFewSamples { needed: k + 2, found: n });
    }
    let mut rng = stream_rng(jitter_seed, 0);
    let mut jitter = |v: f64| v + KSG_JITTER * rng.random_range(-1.0..1.0);
    let x: Vec<f64> = xs.iter().map(|&v| jitter(v)).collect();
    let y: Vec<f64> = ys.iter().map(|&v| jitter(v)).collect();

    let mut sx = x.clone();
    let mut sy = y.clone();
    sx.sort_by(f64::total_cmp);
    sy.sort_by(f64::total_cmp);
    // points strictly within eps of v, excluding the point itself
    let strip = |sorted: &[f64], v: f64, eps: f64| {
        let lo = sorted.partition_point(|&u| u <= v - eps);
        let hi = sorted.partition_point(|&u| u < v + eps);
        hi - lo - 1
    };

    let mut sum_psi = 0.0;
    let mut tight = 0usize;
    // (joint distance, |dx| − |dy|) of the k nearest neighbours
    let mut nearest = vec![(f64::INFINITY, 0.0); k];
    for i in 0..n {
        nearest.iter_mut().for_each(|d| *d = (f64::INFINITY, 0.0));
        for j in 0..n {
            if j == i {
                continue;
            }
            let (dx, dy) = ((x[i] - x[j]).abs(), (y[i] - y[j]).abs());
            let d = dx.max(dy);
            if d < nearest[k - 1].0 {
                let pos = nearest.partition_point(|e| e.0 <= d);
                nearest.insert(pos, (d, dx - dy));
                nearest.pop();
            }
        }
        let (eps, gap) = nearest[k - 1];
        let nx = strip(&sx, x[i], eps);
        let ny = strip(&sy, y[i], eps);
        if gap.abs() <= 4.0 * KSG_JITTER {
            tight += 1;
        }
        sum_psi += digamma((nx + 1) as f64) + digamma((ny + 1) as f64);
    }
    let nats = digamma(k as f64) - sum_psi / n as f64 + digamma(n as f64);
    Ok(KsgResult {
        bits: nats / std::f64::consts::LN_2,
        k,
        n,
        jitter_seed,
        degenerate: tight as f64 >= 0.99 * n as f64,
    })
}

/// Continuous MI of a standard bivariate Gaussian with correlation `rho`, in bits.
pub fn gaussian_analytic_mi(rho: f64) -> Result<f64, OracleError> {
    if !(rho.is_finite() && rho.abs() < 1.0) {
        return Err(OracleError::InvalidRho(rho));
    }
    Ok(0.5 * (1.0 / (1.0 - rho * rho)).log2())
}

/// Shannon entropy of a pmf in bits.
pub fn brute_force_entropy(pmf: &[f64]) -> Result<f64, OracleError> {
    crate::sources::validate_pmf(pmf).map_err(|e| OracleError::InvalidPmf(e.to_string()))?;
    Ok(pmf.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::collection::vec as pvec;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand_distr::StandardNormal;

    fn table(rows: &[&[u64]]) -> CountTable {
        CountTable::new(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn histogram_fixtures() {
        assert!((histogram_mi(&table(&[&[4, 0], &[0, 4]])) - 1.0).abs() < 1e-12);
        assert_eq!(histogram_mi(&table(&[&[2, 2], &[2, 2]])), 0.0);
        // 2 · (3/8·log₂(3/2) + 1/8·log₂(1/2))
        let expected = 0.75 * 1.5f64.log2() - 0.25;
        assert!((histogram_mi(&table(&[&[3, 1], &[1, 3]])) - expected).abs() < 1e-12);
        assert!((expected - 0.1887).abs() < 1e-4);
    }

    #[test]
    fn empty_and_ragged_tables_are_rejected() {
        assert_eq!(CountTable::new(&[vec![0, 0]]), Err(OracleError::EmptyTable));
        assert_eq!(CountTable::new(&[vec![1, 0], vec![1]]), Err(OracleError::Ragged));
        assert_eq!(CountTable::new(&[]), Err(OracleError::EmptyTable));
    }

    proptest! {
        #[test]
        fn histogram_mi_nonnegative_and_symmetric(
            nx in 1usize..5, ny in 1usize..5, cells in pvec(0u64..20, 16)
        ) {
            let rows: Vec<Vec<u64>> = (0..nx).map(|a| (0..ny).map(|b| cells[a * 4 + b]).collect()).collect();
            if let Ok(t) = CountTable::new(&rows) {
                let mi = histogram_mi(&t);
                prop_assert!(mi >= 0.0);
                prop_assert!((mi - histogram_mi(&t.transpose())).abs() < 1e-12);
            }
        }

        #[test]
        fn product_tables_have_zero_mi(
            u in pvec(1u64..6, 1..5), v in pvec(1u64..6, 1..5)
        ) {
            let rows: Vec<Vec<u64>> = u.iter().map(|a| v.iter().map(|b| a * b).collect()).collect();
            prop_assert!(histogram_mi(&CountTable::new(&rows).unwrap()) < 1e-12);
        }

        #[test]
        fn gaussian_mi_even_and_increasing(a in 0.0f64..0.99, b in 0.0f64..0.99) {
            let fa = gaussian_analytic_mi(a).unwrap();
            prop_assert_eq!(fa, gaussian_analytic_mi(-a).unwrap());
            if a < b {
                prop_assert!(fa < gaussian_analytic_mi(b).unwrap());
            }
        }
    }

    // ∬ p(x,y) log₂ p(x,y)/(p(x)p(y)) on a grid, as an independent check
    fn integrate_gaussian_mi(rho: f64) -> f64 {
        let s = 1.0 - rho * rho;
        let h = 0.02;
        let lim = 8.0;
        let steps = (2.0 * lim / h) as usize;
        let mut acc = 0.0;
        for i in 0..steps {
            let x = -lim + (i as f64 + 0.5) * h;
            for j in 0..steps {
                let y = -lim + (j as f64 + 0.5) * h;
                let log_ratio = -(x * x - 2.0 * rho * x * y + y * y) / (2.0 * s) + (x * x + y * y) / 2.0 - 0.5 * s.ln();
                let p = (-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * s)).exp() / (2.0 * std::f64::consts::PI * s.sqrt());
                acc += p * log_ratio * h * h;
            }
        }
        acc / std::f64::consts::LN_2
    }

    #[test]
    fn gaussian_closed_form_matches_integration() {
        assert_eq!(gaussian_analytic_mi(0.0).unwrap(), 0.0);
        for (rho, want) in [(0.5, 0.2075), (0.6, 0.3219), (0.9, 1.1980)] {
            let f = gaussian_analytic_mi(rho).unwrap();
            assert!((f - want).abs() < 1e-4, "rho {rho}: {f}");
            assert!((f - integrate_gaussian_mi(rho)).abs() < 1e-4);
        }
        assert!((gaussian_analytic_mi(0.99).unwrap() - 2.8256).abs() < 1e-4);
        assert!(gaussian_analytic_mi(1.0).is_err());
        assert!(gaussian_analytic_mi(f64::NAN).is_err());
    }

    #[test]
    fn entropy_fixtures() {
        assert!((brute_force_entropy(&[0.25; 4]).unwrap() - 2.0).abs() < 1e-12);
        assert!((brute_force_entropy(&[0.5, 0.5]).unwrap() - 1.0).abs() < 1e-12);
        assert!((brute_force_entropy(&[0.9, 0.1]).unwrap() - 0.4690).abs() < 1e-4);
        assert_eq!(brute_force_entropy(&[1.0]).unwrap(), 0.0);
        assert!(brute_force_entropy(&[0.5, 0.6]).is_err());
    }

    fn gaussian_pairs(rho: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = stream_rng(seed, 99);
        let r = (1.0 - rho * rho).sqrt();
        (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (a, rho * a + r * b)
            })
            .unzip()
    }

    #[test]
    fn ksg_recovers_gaussian_mi() {
        let (x, y) = gaussian_pairs(0.6, 5000, 4);
        let r = ksg_mi(&x, &y, 3, 0).unwrap();
        assert!((r.bits - 0.3219).abs() <= 0.05, "{}", r.bits);
        assert!(!r.degenerate);
        let (x, y) = gaussian_pairs(0.0, 5000, 5);
        assert!(ksg_mi(&x, &y, 3, 0).unwrap().bits.abs() <= 0.03);
    }

    #[test]
    fn ksg_flags_identical_inputs() {
        let (x, _) = gaussian_pairs(0.0, 500, 6);
        assert!(ksg_mi(&x, &x, 3, 1).unwrap().degenerate);
    }

    #[test]
    fn ksg_is_deterministic_and_checks_inputs() {
        let (x, y) = gaussian_pairs(0.3, 300, 7);
        assert_eq!(ksg_mi(&x, &y, 3, 11), ksg_mi(&x, &y, 3, 11));
        assert_eq!(ksg_mi(&x, &y, 0, 0), Err(OracleError::InvalidK));
        assert!(matches!(ksg_mi(&x[..4], &y[..4], 3, 0), Err(OracleError::TooFewSamples { .. })));
        assert!(matches!(ksg_mi(&x, &y[..10], 3, 0), Err(OracleError::LengthMismatch(..))));
    }

    #[test]
    fn binned_mi_of_copy_is_log_bins() {
        let x: Vec<f64> = (0..1600).map(|i| (i % 16) as f64).collect();
        assert!((binned_mi(&x, &x, 16).unwrap() - 4.0).abs() < 1e-9);
    }
}
