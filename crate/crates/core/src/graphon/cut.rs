//! Cut norm and cut distance of step functions.
//!
//! For a fixed row set `S` the best column set takes every column whose
//! partial sum `c_j = Σ_{i∈S} D[i][j]` has the winning sign, so the exact cut
//! norm only enumerates rows. Rows are visited in Gray-code order so each
//! step updates the column sums with a single row.

use ndarray::Array2;
use rand::Rng;

use super::StepFunction;
use crate::error::{Error, Result};
use crate::graph::alignment_order;
use crate::rng::{derive_seed, seeded};

pub const EXACT_CUT_LIMIT: usize = 20;
pub const NAIVE_CUT_LIMIT: usize = 10;
pub const EXACT_DISTANCE_LIMIT: usize = 8;

fn check_square(d: &Array2<f64>, limit: usize) -> Result<usize> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} is not square", n, d.ncols())));
    }
    if n > limit {
        return Err(Error::TooLarge { size: n, limit });
    }
    Ok(n)
}

/// `(1/N²) max_{S,T} |Σ_{S×T} D|` by row-subset enumeration.
pub fn cut_norm_exact(d: &Array2<f64>) -> Result<f64> {
    let n = check_square(d, EXACT_CUT_LIMIT)?;
    if n == 0 {
        return Ok(0.0);
    }
    let mut col = vec![0.0f64; n];
    let mut best = 0.0f64;
    for k in 1u64..(1u64 << n) {
        let row = k.trailing_zeros() as usize;
        let gray = k ^ (k >> 1);
        let sign = if (gray >> row) & 1 == 1 { 1.0 } else { -1.0 };
        for (c, &v) in col.iter_mut().zip(d.row(row)) {
            *c += sign * v;
        }
        let (mut pos, mut neg) = (0.0, 0.0);
        for &c in &col {
            if c > 0.0 {
                pos += c;
            } else {
                neg -= c;
            }
        }
        best = best.max(pos).max(neg);
    }
    Ok(best / (n * n) as f64)
}

/// Literal enumeration over every pair of row and column subsets.
pub fn cut_norm_naive(d: &Array2<f64>) -> Result<f64> {
    let n = check_square(d, NAIVE_CUT_LIMIT)?;
    let mut best = 0.0f64;
    for s in 0u32..(1 << n) {
        for t in 0u32..(1 << n) {
            let mut total = 0.0;
            for i in (0..n).filter(|i| s >> i & 1 == 1) {
                for j in (0..n).filter(|j| t >> j & 1 == 1) {
                    total += d[[i, j]];
                }
            }
            best = best.max(total.abs());
        }
    }
    Ok(best / (n * n).max(1) as f64)
}

fn permuted_difference(a: &Array2<f64>, b: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(a.dim(), |(i, j)| a[[i, j]] - b[[perm[i], perm[j]]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutMode {
    /// Minimum over all `N!` block permutations.
    Exact,
    /// Simulated annealing over block permutations; an upper bound on `Exact`.
    Anneal,
}

impl std::str::FromStr for CutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(CutMode::Exact),
            "anneal" => Ok(CutMode::Anneal),
            _ => Err(Error::Unknown {
                kind: "cut mode",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub steps: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            steps: 2000,
            t_start: 1.0,
            t_end: 1e-3,
            restarts: 5,
            seed: 0,
        }
    }
}

/// Cut distance restricted to block permutations.
pub fn cut_distance(a: &StepFunction, b: &StepFunction, mode: CutMode) -> Result<f64> {
    match mode {
        CutMode::Exact => cut_distance_exact(a, b),
        CutMode::Anneal => cut_distance_annealed(a, b, &AnnealSchedule::default()),
    }
}

fn same_resolution(a: &StepFunction, b: &StepFunction) -> Result<usize> {
    if a.resolution() != b.resolution() {
        return Err(Error::ResolutionMismatch(a.resolution(), b.resolution()));
    }
    Ok(a.resolution())
}

fn cut_distance_exact(a: &StepFunction, b: &StepFunction) -> Result<f64> {
    let n = same_resolution(a, b)?;
    if n > EXACT_DISTANCE_LIMIT {
        return Err(Error::TooLarge {
            size: n,
            limit: EXACT_DISTANCE_LIMIT,
        });
    }
    let (wa, wb) = (a.values(), b.values());
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = cut_norm_exact(&permuted_difference(wa, wb, &perm))?;
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cut_norm_exact(&permuted_difference(wa, wb, &perm))?);
            if best == 0.0 {
                break;
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

/// Annealed search started from the descending-row-sum alignment of both
/// inputs. Temperatures are relative to the starting energy.
pub fn cut_distance_annealed(a: &StepFunction, b: &StepFunction, schedule: &AnnealSchedule) -> Result<f64> {
    let n = same_resolution(a, b)?;
    let (wa, wb) = (a.values(), b.values());
    let row_sums = |w: &Array2<f64>| -> Vec<f64> { w.rows().into_iter().map(|r| r.sum()).collect() };
    let order_a = alignment_order(&row_sums(wa));
    let order_b = alignment_order(&row_sums(wb));
    let mut start = vec![0usize; n];
    for (k, &i) in order_a.iter().enumerate() {
        start[i] = order_b[k];
    }
    let energy = |p: &[usize]| cut_norm_exact(&permuted_difference(wa, wb, p));
    let e0 = energy(&start)?;
    let mut best = e0;
    if n < 2 || e0 == 0.0 {
        return Ok(best);
    }
    let steps = schedule.steps.max(1);
    let ratio = (schedule.t_end / schedule.t_start).powf(1.0 / (steps.max(2) - 1) as f64);
    for r in 0..schedule.restarts.max(1) {
        let mut rng = seeded(derive_seed(schedule.seed, 7, r as u64));
        let mut perm = start.clone();
        let mut current = e0;
        let mut t = schedule.t_start;
        for _ in 0..steps {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            perm.swap(i, j);
            let proposed = energy(&perm)?;
            let delta = proposed - current;
            if delta <= 0.0 || rng.gen::<f64>() < (-delta / (t * e0)).exp() {
                current = proposed;
                best = best.min(current);
            } else {
                perm.swap(i, j);
            }
            t *= ratio;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    fn random_symmetric(n: usize, rng: &mut impl Rng) -> Array2<f64> {
        let mut v = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.gen();
                v[[i, j]] = x;
                v[[j, i]] = x;
            }
        }
        v
    }

    #[test]
    fn cut_norm_examples() {
        for f in [cut_norm_exact, cut_norm_naive] {
            assert_eq!(f(&Array2::zeros((4, 4))).unwrap(), 0.0);
            assert_eq!(f(&Array2::ones((5, 5))).unwrap(), 1.0);
            assert_eq!(f(&array![[1.0, 0.0], [0.0, 1.0]]).unwrap(), 0.5);
        }
    }

    #[test]
    fn exact_matches_naive_on_signed_matrices() {
        let mut rng = seeded(21);
        for n in 1..=7 {
            for _ in 0..5 {
                let d = random_symmetric(n, &mut rng) - random_symmetric(n, &mut rng);
                let (e, v) = (cut_norm_exact(&d).unwrap(), cut_norm_naive(&d).unwrap());
                assert!((e - v).abs() < 1e-12, "n={n}: {e} vs {v}");
            }
        }
    }

    #[test]
    fn size_limits() {
        assert!(matches!(
            cut_norm_naive(&Array2::zeros((11, 11))),
            Err(Error::TooLarge { size: 11, limit: 10 })
        ));
        assert!(cut_norm_exact(&Array2::zeros((21, 21))).is_err());
        let w = StepFunction::zeros(9);
        assert!(cut_distance(&w, &w, CutMode::Exact).is_err());
        assert!(matches!(
            cut_distance(&w, &StepFunction::zeros(3), CutMode::Anneal),
            Err(Error::ResolutionMismatch(9, 3))
        ));
    }

    #[test]
    fn distance_examples() {
        let mut rng = seeded(4);
        let w = StepFunction::new(random_symmetric(5, &mut rng));
        assert_eq!(cut_distance(&w, &w, CutMode::Exact).unwrap(), 0.0);
        let p = w.permuted(&[2, 4, 0, 1, 3]);
        assert_eq!(cut_distance(&w, &p, CutMode::Exact).unwrap(), 0.0);
        let a = StepFunction::new(array![[1.0, 0.0], [0.0, 0.0]]);
        let b = StepFunction::new(array![[0.0, 0.0], [0.0, 1.0]]);
        assert_eq!(cut_distance(&a, &b, CutMode::Exact).unwrap(), 0.0);
        assert!(cut_norm_exact(&(a.values() - b.values())).unwrap() > 0.0);
    }

    #[test]
    fn anneal_upper_bounds_exact() {
        let mut rng = seeded(8);
        for n in [3, 5, 6] {
            let a = StepFunction::new(random_symmetric(n, &mut rng));
            let b = StepFunction::new(random_symmetric(n, &mut rng));
            let exact = cut_distance(&a, &b, CutMode::Exact).unwrap();
            let sched = AnnealSchedule {
                steps: 300,
                ..Default::default()
            };
            let annealed = cut_distance_annealed(&a, &b, &sched).unwrap();
            assert!(annealed >= exact - 1e-15);
        }
    }

    #[test]
    fn anneal_recovers_permutation() {
        let mut rng = seeded(12);
        let a = StepFunction::new(random_symmetric(10, &mut rng));
        let b = a.permuted(&[3, 7, 1, 0, 9, 2, 8, 4, 6, 5]);
        let sched = AnnealSchedule {
            steps: 500,
            restarts: 2,
            ..Default::default()
        };
        // Row sums are distinct, so the alignment start already matches.
        assert!(cut_distance_annealed(&a, &b, &sched).unwrap() < 1e-12);
    }
}
