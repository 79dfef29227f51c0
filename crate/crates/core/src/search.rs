//! Deterministic derivative-free minimization over a box.
//!
//! One-dimensional problems use a dense equispaced scan followed by
//! golden-section refinement inside the bracket around the best node.
//! Higher-dimensional problems scan a tensor grid, then run compass
//! (coordinate pattern) search from the best grid node and from a set of
//! Latin-hypercube starts. In both cases the returned value is never worse
//! than the best grid node.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::BoxDomain;
use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSettings {
    /// Grid nodes for a 1-D scan; the tensor grid in `d` dimensions uses
    /// `floor(grid_nodes^(1/d))` nodes per axis.
    pub grid_nodes: usize,
    /// Refinement stops once the bracket (or pattern step) is below this
    /// fraction of the domain width.
    pub rel_tol: f64,
    /// Latin-hypercube starts for the multi-dimensional pattern search.
    pub starts: usize,
    pub seed: u64,
    pub max_evals_per_start: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            grid_nodes: 2001,
            rel_tol: 1e-6,
            starts: 32,
            seed: 0x5eed,
            max_evals_per_start: 20_000,
        }
    }
}

impl SearchSettings {
    pub fn with_grid_nodes(mut self, nodes: usize) -> Self {
        self.grid_nodes = nodes;
        self
    }

    /// Nodes per axis of the scan grid for a `dim`-dimensional box.
    pub fn nodes_per_axis(&self, dim: usize) -> usize {
        let mut m = (self.grid_nodes as f64).powf(1.0 / dim as f64).floor() as usize;
        // powf can land a hair below an exact integer root
        while (m + 1).checked_pow(dim as u32).is_some_and(|p| p <= self.grid_nodes) {
            m += 1;
        }
        m.max(2)
    }

    /// Spacing between adjacent scan nodes along axis `d`.
    pub fn grid_spacing(&self, domain: &BoxDomain, d: usize) -> f64 {
        domain.width(d) / (self.nodes_per_axis(domain.dim()) - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

fn checked<F>(f: &mut F, x: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let v = f(x)?;
    if !v.is_finite() {
        return Err(Error::numerical(format!("objective is non-finite ({v}) at x = {x:?}")));
    }
    Ok(v)
}

/// Node `j` of an `n`-node equispaced grid on `[lo, hi]`; the last node is exactly `hi`.
pub fn grid_node(lo: f64, hi: f64, n: usize, j: usize) -> f64 {
    if j + 1 == n {
        hi
    } else {
        lo + (hi - lo) * j as f64 / (n - 1) as f64
    }
}

/// Golden-section search for a minimum of `f` on `[a, b]`, stopping when the
/// bracket is narrower than `tol`.
pub fn golden_section<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<Minimum>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while (b - a) > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 {
        Minimum { x: vec![x1], value: f1 }
    } else {
        Minimum { x: vec![x2], value: f2 }
    })
}

/// Minimize `f` over `domain`. Non-finite objective values are reported as
/// numerical errors naming the offending point.
pub fn minimize_box<F>(mut f: F, domain: &BoxDomain, settings: &SearchSettings) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if domain.dim() == 1 {
        minimize_interval(&mut f, domain, settings)
    } else {
        minimize_multi(&mut f, domain, settings)
    }
}

fn minimize_interval<F>(f: &mut F, domain: &BoxDomain, settings: &SearchSettings) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let (lo, hi) = (domain.lower()[0], domain.upper()[0]);
    if hi == lo {
        let value = checked(f, &[lo])?;
        return Ok(Minimum { x: vec![lo], value });
    }
    let n = settings.grid_nodes.max(2);
    let mut best_j = 0;
    let mut best = f64::INFINITY;
    for j in 0..n {
        let v = checked(f, &[grid_node(lo, hi, n, j)])?;
        if v < best {
            best = v;
            best_j = j;
        }
    }
    let grid_best = Minimum { x: vec![grid_node(lo, hi, n, best_j)], value: best };

    let a = grid_node(lo, hi, n, best_j.saturating_sub(1));
    let b = grid_node(lo, hi, n, (best_j + 1).min(n - 1));
    let refined = golden_section(|x| checked(f, &[x]), a, b, settings.rel_tol * (hi - lo))?;
    Ok(if refined.value < grid_best.value { refined } else { grid_best })
}

fn minimize_multi<F>(f: &mut F, domain: &BoxDomain, settings: &SearchSettings) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let dim = domain.dim();
    let m = settings.nodes_per_axis(dim);

    let mut best: Option<Minimum> = None;
    let mut idx = vec![0usize; dim];
    loop {
        let x: Vec<f64> = (0..dim)
            .map(|d| grid_node(domain.lower()[d], domain.upper()[d], m, idx[d]))
            .collect();
        let v = checked(f, &x)?;
        if best.as_ref().is_none_or(|b| v < b.value) {
            best = Some(Minimum { x, value: v });
        }
        // odometer increment over the tensor grid
        let mut d = 0;
        while d < dim {
            idx[d] += 1;
            if idx[d] < m {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == dim {
            break;
        }
    }
    let grid_best = best.expect("grid has at least one node");

    let min_step: Vec<f64> = (0..dim).map(|d| settings.rel_tol * domain.width(d)).collect();
    let grid_step: Vec<f64> = (0..dim).map(|d| settings.grid_spacing(domain, d)).collect();
    let mut overall = pattern_search(
        &mut *f,
        grid_best.clone(),
        domain,
        &grid_step,
        &min_step,
        settings.max_evals_per_start,
    )?;

    let wide_step: Vec<f64> = (0..dim).map(|d| 0.1 * domain.width(d)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    for start in latin_hypercube(domain, settings.starts, &mut rng) {
        let value = checked(f, &start)?;
        let local = pattern_search(
            &mut *f,
            Minimum { x: start, value },
            domain,
            &wide_step,
            &min_step,
            settings.max_evals_per_start,
        )?;
        if local.value < overall.value {
            overall = local;
        }
    }
    Ok(overall)
}

/// Compass search inside `domain` from an already evaluated start point.
/// Only strict improvements are accepted, so the result is never worse than
/// the start.
pub(crate) fn pattern_search<F>(
    f: &mut F,
    start: Minimum,
    domain: &BoxDomain,
    initial_step: &[f64],
    min_step: &[f64],
    max_evals: usize,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let dim = domain.dim();
    let mut current = start;
    let mut step = initial_step.to_vec();
    let mut evals = 0;
    while evals < max_evals && step.iter().zip(min_step).any(|(s, m)| s > m) {
        let mut improved = false;
        'dims: for d in 0..dim {
            if step[d] <= min_step[d] {
                continue;
            }
            for sign in [1.0, -1.0] {
                let mut cand = current.x.clone();
                cand[d] = (cand[d] + sign * step[d]).clamp(domain.lower()[d], domain.upper()[d]);
                if cand[d] == current.x[d] {
                    continue;
                }
                let v = checked(f, &cand)?;
                evals += 1;
                if v < current.value {
                    current = Minimum { x: cand, value: v };
                    improved = true;
                    break 'dims;
                }
            }
        }
        if !improved {
            for s in &mut step {
                *s *= 0.5;
            }
        }
    }
    Ok(current)
}

/// `n` Latin-hypercube samples in `domain`.
pub fn latin_hypercube<R: Rng + ?Sized>(domain: &BoxDomain, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let dim = domain.dim();
    let mut points = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in points.iter_mut().zip(strata) {
            let u: f64 = rng.random();
            p[d] = domain.lower()[d] + domain.width(d) * (s as f64 + u) / n as f64;
        }
    }
    points
}
