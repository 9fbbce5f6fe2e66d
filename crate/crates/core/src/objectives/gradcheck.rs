//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::from_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probe {
    /// One central difference per coordinate.
    Coordinates,
    /// Directional derivatives along random unit directions.
    Directions { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiff {
    pub step: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// derivative is ~0 are compared absolutely.
    pub floor: f64,
    pub probe: Probe,
}

impl Default for FiniteDiff {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            probe: Probe::Coordinates,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate (or direction) index of the worst error.
    pub worst: usize,
    pub evaluations: usize,
}

fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `analytic` against central differences of `f` around `theta`.
pub fn finite_diff_check<F>(mut f: F, theta: &[f64], analytic: &[f64], cfg: &FiniteDiff) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(cfg.step > 0.0) {
        return Err(Error::input(format!("finite-difference step {} must be > 0", cfg.step)));
    }
    if theta.len() != analytic.len() {
        return Err(Error::input("gradient length does not match parameters"));
    }
    let mut eval = |x: &[f64]| -> Result<f64> {
        let y = f(x)?;
        if !y.is_finite() {
            return Err(Error::numeric(format!("non-finite objective value {y}")));
        }
        Ok(y)
    };
    let h = cfg.step;
    let mut x = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: 0,
        evaluations: 0,
    };
    let record = |i: usize, a: f64, n: f64, report: &mut GradCheckReport| {
        let e = rel_error(a, n, cfg.floor);
        if e > report.max_rel_error || e.is_nan() {
            report.max_rel_error = e;
            report.worst = i;
        }
    };
    match cfg.probe {
        Probe::Coordinates => {
            for i in 0..x.len() {
                let orig = x[i];
                x[i] = orig + h;
                let up = eval(&x)?;
                x[i] = orig - h;
                let down = eval(&x)?;
                x[i] = orig;
                report.evaluations += 2;
                record(i, analytic[i], (up - down) / (2.0 * h), &mut report);
            }
        }
        Probe::Directions { count, seed } => {
            let mut rng = from_seed(seed);
            for k in 0..count {
                let mut d: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                d.iter_mut().for_each(|v| *v /= norm);
                let a: f64 = d.iter().zip(analytic).map(|(u, g)| u * g).sum();
                let up: Vec<f64> = x.iter().zip(&d).map(|(p, u)| p + h * u).collect();
                let down: Vec<f64> = x.iter().zip(&d).map(|(p, u)| p - h * u).collect();
                let n = (eval(&up)? - eval(&down)?) / (2.0 * h);
                report.evaluations += 2;
                record(k, a, n, &mut report);
            }
        }
    }
    Ok(report)
}
