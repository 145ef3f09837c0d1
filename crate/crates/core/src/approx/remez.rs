use serde::{Deserialize, Serialize};

use super::poly::{solve_linear, Interval, Polynomial};
use super::ApproxError;

/// Number of grid points scanned for error extrema on each iteration.
pub const DEFAULT_GRID: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxResult {
    pub poly: Polynomial,
    pub error: f64,
    pub ref_points: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Closed-form degree-2 minimax approximation of ReLU on `[-a, a]`:
/// `x^2 / (2a) + x / 2 + a / 16` with error `a / 16`.
pub fn relu_minimax_deg2(a: f64) -> Result<MinimaxResult, ApproxError> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(ApproxError::NonPositiveHalfWidth(a));
    }
    Ok(MinimaxResult {
        poly: Polynomial::new(vec![a / 16.0, 0.5, 1.0 / (2.0 * a)]),
        error: a / 16.0,
        ref_points: vec![-a, -a / 2.0, 0.0, a / 2.0, a],
        iterations: 0,
        converged: true,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RemezOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub grid: usize,
}

impl Default for RemezOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100,
            grid: DEFAULT_GRID,
        }
    }
}

/// Remez exchange with the default grid size.
pub fn remez<F: Fn(f64) -> f64>(
    f: F,
    degree: usize,
    iv: Interval,
    tol: f64,
    max_iter: usize,
) -> Result<MinimaxResult, ApproxError> {
    remez_with(
        f,
        degree,
        iv,
        RemezOptions {
            tol,
            max_iter,
            grid: DEFAULT_GRID,
        },
    )
}

/// Single-point Remez exchange.
///
/// The reference starts at the Chebyshev points of the second kind. Each
/// iteration levels the error on the reference, locates the global extremum of
/// `|f - p|` on a grid refined by golden-section search, and swaps it into the
/// reference keeping the sign alternation. Work is done in the variable
/// `t = (x - mid) / half_width` for conditioning.
pub fn remez_with<F: Fn(f64) -> f64>(
    f: F,
    degree: usize,
    iv: Interval,
    opts: RemezOptions,
) -> Result<MinimaxResult, ApproxError> {
    if !(opts.tol > 0.0) {
        return Err(ApproxError::InvalidTolerance(opts.tol));
    }
    let m = degree + 2;
    let (mid, half) = (iv.mid(), iv.half_width());
    let to_x = |t: f64| (mid + half * t).clamp(iv.lo, iv.hi);
    let g = |t: f64| f(to_x(t));

    let mut reference: Vec<f64> = (0..m)
        .map(|i| -(std::f64::consts::PI * i as f64 / (m - 1) as f64).cos())
        .collect();
    reference[0] = -1.0;
    reference[m - 1] = 1.0;

    let grid = Interval { lo: -1.0, hi: 1.0 }.grid(opts.grid.max(m + 1));
    let mut best: Option<(Vec<f64>, f64, Vec<f64>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iter.max(1) {
        iterations = iter;
        let (coeffs, level) =
            level_on(&reference, degree, &g).ok_or(ApproxError::Singular { iteration: iter })?;
        let err = |t: f64| g(t) - horner(&coeffs, t);
        let (t_star, e_star) = global_extremum(&err, &grid, &reference);
        let max_err = e_star.abs();

        if best.as_ref().is_none_or(|b| max_err < b.1) {
            best = Some((coeffs.clone(), max_err, reference.clone()));
        }
        let level = level.abs();
        if max_err <= opts.tol || (level > 0.0 && (max_err - level) / level < opts.tol) {
            converged = true;
            best = Some((coeffs, max_err, reference.clone()));
            break;
        }
        if !exchange(&mut reference, t_star, e_star, &err) {
            // extremum already in the reference: no further progress possible
            break;
        }
    }

    let (coeffs_t, error, ref_t) = best.expect("at least one iteration");
    Ok(MinimaxResult {
        poly: Polynomial::new(shift_basis(&coeffs_t, mid, half)),
        error,
        ref_points: ref_t.into_iter().map(to_x).collect(),
        iterations,
        converged,
    })
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Solves `sum_k c_k t_i^k + (-1)^i E = g(t_i)` on the reference.
fn level_on(reference: &[f64], degree: usize, g: &impl Fn(f64) -> f64) -> Option<(Vec<f64>, f64)> {
    let m = reference.len();
    let a = reference
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut row: Vec<f64> = std::iter::successors(Some(1.0), |p| Some(p * t))
                .take(degree + 1)
                .collect();
            row.push(if i % 2 == 0 { 1.0 } else { -1.0 });
            row
        })
        .collect();
    let b = reference.iter().map(|&t| g(t)).collect();
    let mut sol = solve_linear(a, b)?;
    debug_assert_eq!(sol.len(), m);
    let level = sol.pop()?;
    Some((sol, level))
}

/// Location and signed value of the largest `|err|` on the grid plus reference,
/// refined by golden-section search between the neighbouring grid points.
fn global_extremum(err: &impl Fn(f64) -> f64, grid: &[f64], reference: &[f64]) -> (f64, f64) {
    let abs: Vec<f64> = grid.iter().map(|&t| err(t).abs()).collect();
    let last = grid.len() - 1;
    let (mut t_star, mut best) = (grid[0], abs[0]);
    // every local maximum of the sampled |err| is refined, not just the largest
    for i in 0..=last {
        let left = if i == 0 {
            f64::NEG_INFINITY
        } else {
            abs[i - 1]
        };
        let right = if i == last {
            f64::NEG_INFINITY
        } else {
            abs[i + 1]
        };
        if abs[i] < left || abs[i] < right {
            continue;
        }
        let (lo, hi) = (grid[i.saturating_sub(1)], grid[(i + 1).min(last)]);
        let t = golden_max(|t| err(t).abs(), lo, hi);
        for (cand, val) in [(grid[i], abs[i]), (t, err(t).abs())] {
            if val > best {
                best = val;
                t_star = cand;
            }
        }
    }
    for &t in reference {
        if err(t).abs() > best {
            best = err(t).abs();
            t_star = t;
        }
    }
    (t_star, err(t_star))
}

fn golden_max(h: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut hc, mut hd) = (h(c), h(d));
    for _ in 0..100 {
        if (b - a).abs() <= 1e-15 {
            break;
        }
        if hc > hd {
            b = d;
            d = c;
            hd = hc;
            c = b - INV_PHI * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + INV_PHI * (b - a);
            hd = h(d);
        }
    }
    let mid = 0.5 * (a + b);
    [a, b, mid]
        .into_iter()
        .max_by(|x, y| h(*x).total_cmp(&h(*y)))
        .unwrap()
}

/// Swaps `t_star` into the reference. Returns `false` if it is already there.
fn exchange(reference: &mut Vec<f64>, t_star: f64, e_star: f64, err: &impl Fn(f64) -> f64) -> bool {
    if reference.contains(&t_star) {
        return false;
    }
    let same = |t: f64| (err(t) >= 0.0) == (e_star >= 0.0);
    let last = reference.len() - 1;
    if t_star < reference[0] {
        if same(reference[0]) {
            reference[0] = t_star;
        } else {
            reference.pop();
            reference.insert(0, t_star);
        }
    } else if t_star > reference[last] {
        if same(reference[last]) {
            reference[last] = t_star;
        } else {
            reference.remove(0);
            reference.push(t_star);
        }
    } else {
        let j = reference.iter().position(|&t| t > t_star).unwrap() - 1;
        if same(reference[j]) {
            reference[j] = t_star;
        } else {
            reference[j + 1] = t_star;
        }
    }
    true
}

/// Converts coefficients in `t = (x - mid) / half` to coefficients in `x`.
fn shift_basis(coeffs_t: &[f64], mid: f64, half: f64) -> Vec<f64> {
    // (x - mid)^k / half^k expanded binomially
    let n = coeffs_t.len();
    let mut out = vec![0.0; n];
    let mut power = vec![1.0]; // coefficients of ((x - mid) / half)^k
    for (k, &c) in coeffs_t.iter().enumerate() {
        if k > 0 {
            let mut next = vec![0.0; power.len() + 1];
            for (i, &p) in power.iter().enumerate() {
                next[i + 1] += p / half;
                next[i] -= p * mid / half;
            }
            power = next;
        }
        for (i, &p) in power.iter().enumerate() {
            out[i] += c * p;
        }
    }
    out
}
