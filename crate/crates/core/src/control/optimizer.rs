//! Box-constrained projected gradient ascent with Armijo backtracking and
//! Barzilai–Borwein trial steps.

use crate::error::Result;

/// A smooth objective on the box [0, upper]^dim.
pub trait Objective {
    fn dim(&self) -> usize;
    fn upper_bound(&self) -> f64;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    /// Stop when the relative objective change of an accepted step is below this.
    pub tol: f64,
    /// Sufficient-increase constant of the Armijo test.
    pub armijo: f64,
    /// Backtracking halvings before giving up on an iterate.
    pub max_backtracks: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-8,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerTrace {
    pub x: Vec<f64>,
    /// Objective of the initial point and of every accepted iterate.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stagnated: bool,
}

fn project(x: &[f64], step: f64, g: &[f64], upper: f64) -> Vec<f64> {
    x.iter().zip(g).map(|(xi, gi)| (xi + step * gi).clamp(0.0, upper)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximize `objective` from `x0` (assumed feasible).
pub fn maximize<O: Objective + ?Sized>(objective: &O, x0: &[f64], settings: &OptimizerSettings) -> Result<OptimizerTrace> {
    let upper = objective.upper_bound();
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective.value_and_gradient(&x)?;
    let mut history = vec![f];
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // First trial moves the steepest coordinate by a tenth of the box.
    let mut step = if gmax > 0.0 { 0.1 * upper / gmax } else { 0.0 };
    let mut converged = false;
    let mut stagnated = false;
    let mut iterations = 0;

    while iterations < settings.max_iters {
        let mut accepted = None;
        let mut trial = step;
        for _ in 0..=settings.max_backtracks {
            let candidate = project(&x, trial, &g, upper);
            let moved: Vec<f64> = candidate.iter().zip(&x).map(|(c, xi)| c - xi).collect();
            let predicted = dot(&g, &moved);
            if predicted <= 0.0 {
                // Projected gradient vanishes: first-order stationary.
                break;
            }
            let fc = objective.value(&candidate)?;
            if fc >= f + settings.armijo * predicted {
                accepted = Some((candidate, fc, moved, trial));
                break;
            }
            trial *= 0.5;
        }
        let Some((x_new, f_new, s, used)) = accepted else {
            // No acceptable ascent step: stationary to working precision.
            stagnated = iterations == 0;
            converged = true;
            break;
        };
        let (_, g_new) = objective.value_and_gradient(&x_new)?;
        iterations += 1;
        history.push(f_new);
        let change = (f_new - f).abs() / f.abs().max(f_new.abs()).max(1e-300);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        // Ascent on a locally concave objective has s·y < 0.
        let sy = dot(&s, &y);
        step = if sy < 0.0 { dot(&s, &s) / -sy } else { 2.0 * used };
        x = x_new;
        f = f_new;
        g = g_new;
        if change < settings.tol {
            converged = true;
            break;
        }
    }
    Ok(OptimizerTrace {
        x,
        history,
        iterations,
        converged,
        stagnated,
    })
}
