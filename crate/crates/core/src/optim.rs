//! Derivative-free minimisation: a bounds-clamped Nelder-Mead simplex with
//! seeded multi-start, and a golden-section line search for one-dimensional
//! fits.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Convergence on the spread of simplex function values.
    pub f_tolerance: f64,
    /// Convergence on the simplex diameter.
    pub x_tolerance: f64,
    /// Relative size of the initial simplex within the bounds.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 4000,
            f_tolerance: 1e-14,
            x_tolerance: 1e-10,
            initial_step: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn clamp(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = xi.clamp(lo, hi);
    }
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    for &(lo, hi) in bounds {
        if lo > hi || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InfeasibleBounds { lo, hi });
        }
    }
    Ok(())
}

/// Nelder-Mead with reflection, expansion, contraction and shrink steps;
/// every candidate is clamped into the bounds before evaluation.
pub fn nelder_mead_bounded<F>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    opts: &SimplexOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_bounds(bounds)?;
    let n = x0.len();
    assert_eq!(bounds.len(), n);
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let v = f(x)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective(x.to_vec()));
        }
        Ok(v)
    };

    // Initial simplex: x0 plus one displaced vertex per coordinate.
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    clamp(&mut start, bounds);
    simplex.push(start.clone());
    for i in 0..n {
        let (lo, hi) = bounds[i];
        let span = (hi - lo).max(1e-12);
        let mut v = start.clone();
        let step = opts.initial_step * span;
        v[i] = if v[i] + step <= hi { v[i] + step } else { v[i] - step };
        clamp(&mut v, bounds);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex
        .iter()
        .map(|v| eval(v, &mut evaluations))
        .collect::<Result<_>>()?;

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0usize;
    while iterations < opts.max_iterations {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let spread = values[worst] - values[best];
        let diameter = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.abs() <= opts.f_tolerance && diameter <= opts.x_tolerance {
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (i, v) in simplex.iter().enumerate() {
            if i == worst {
                continue;
            }
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }

        let blend = |a: f64| -> Vec<f64> {
            let mut v: Vec<f64> = centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + a * (c - w))
                .collect();
            clamp(&mut v, bounds);
            v
        };

        let reflected = blend(alpha);
        let f_reflected = eval(&reflected, &mut evaluations)?;
        if f_reflected < values[best] {
            let expanded = blend(gamma);
            let f_expanded = eval(&expanded, &mut evaluations)?;
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
        } else if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
        } else {
            let contracted = blend(-rho);
            let f_contracted = eval(&contracted, &mut evaluations)?;
            if f_contracted < values[worst] {
                simplex[worst] = contracted;
                values[worst] = f_contracted;
            } else {
                for i in 0..=n {
                    if i == best {
                        continue;
                    }
                    let mut v: Vec<f64> = simplex[i]
                        .iter()
                        .zip(&simplex[best])
                        .map(|(x, b)| b + sigma * (x - b))
                        .collect();
                    clamp(&mut v, bounds);
                    values[i] = eval(&v, &mut evaluations)?;
                    simplex[i] = v;
                }
            }
        }
    }

    let (best_idx, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty simplex");
    Ok(OptimResult {
        x: simplex[best_idx].clone(),
        objective: values[best_idx],
        iterations,
        evaluations,
    })
}

/// Multi-start wrapper: runs from `x0` and from `n_starts - 1` seeded random
/// points in the bounds, returning the best result. Deterministic given the
/// seed. A later start replaces the incumbent only when it improves the
/// objective beyond numerical noise, so on flat optima the result stays
/// continuous in the initial guess.
pub fn multi_start_nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    n_starts: usize,
    seed: u64,
    opts: &SimplexOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_bounds(bounds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![x0.to_vec()];
    for _ in 1..n_starts.max(1) {
        let v: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect();
        starts.push(v);
    }
    let mut best: Option<OptimResult> = None;
    let mut total_iterations = 0;
    let mut total_evaluations = 0;
    for start in &starts {
        let result = nelder_mead_bounded(&mut f, start, bounds, opts)?;
        total_iterations += result.iterations;
        total_evaluations += result.evaluations;
        let improves = |b: &OptimResult| {
            result.objective < b.objective - (1e-12 + 1e-9 * b.objective.abs())
        };
        if best.as_ref().map(improves).unwrap_or(true) {
            best = Some(result);
        }
    }
    let mut best = best.expect("at least one start");
    best.iterations = total_iterations;
    best.evaluations = total_evaluations;
    Ok(best)
}

/// Golden-section minimisation on a bracket; returns (x_min, f_min).
pub fn golden_section_minimize<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    x_tolerance: f64,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if lo >= hi {
        return Err(Error::InfeasibleBounds { lo, hi });
    }
    let inv_phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > x_tolerance {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x)?;
    Ok((x, fx))
}
