//! Continuous algebraic Riccati equation solver for small LQR problems.
//!
//! Integrates the Riccati ODE `P' = A'P + PA - P B R^-1 B' P + Q` from
//! `P = Q` until stationary; the fixed point is the stabilizing CARE
//! solution for stabilizable (A, B).

use ndarray::Array2;

use crate::error::{Error, Result};

/// Gauss-Jordan inverse for the small matrices used here.
fn invert(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Config("matrix must be square".into()));
    }
    let mut a = m.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .unwrap();
        if a[[pivot, col]].abs() < 1e-14 {
            return Err(Error::Config("singular matrix".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
                inv.swap([pivot, k], [col, k]);
            }
        }
        let d = a[[col, col]];
        for k in 0..n {
            a[[col, k]] /= d;
            inv[[col, k]] /= d;
        }
        for row in 0..n {
            if row != col {
                let f = a[[row, col]];
                for k in 0..n {
                    a[[row, k]] -= f * a[[col, k]];
                    inv[[row, k]] -= f * inv[[col, k]];
                }
            }
        }
    }
    Ok(inv)
}

/// Solves `A'P + PA - P B R^-1 B' P + Q = 0` for the stabilizing P.
pub fn solve_care(
    a: &Array2<f64>,
    b: &Array2<f64>,
    q: &Array2<f64>,
    r: &Array2<f64>,
) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n || b.nrows() != n {
        return Err(Error::Config("CARE dimensions are inconsistent".into()));
    }
    let r_inv = invert(r)?;
    let gain_core = b.dot(&r_inv).dot(&b.t());

    let rhs = |p: &Array2<f64>| -> Array2<f64> {
        a.t().dot(p) + p.dot(a) - p.dot(&gain_core).dot(p) + q
    };

    let dt = 0.005;
    let tol = 1e-12;
    let max_iters = 2_000_000;
    let mut p = q.clone();
    for _ in 0..max_iters {
        // RK4 in the matrix ODE.
        let k1 = rhs(&p);
        let k2 = rhs(&(&p + &(&k1 * (dt / 2.0))));
        let k3 = rhs(&(&p + &(&k2 * (dt / 2.0))));
        let k4 = rhs(&(&p + &(&k3 * dt)));
        let delta = (k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (dt / 6.0);
        let step_norm = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        p += &delta;
        if !step_norm.is_finite() {
            return Err(Error::Config("Riccati integration diverged".into()));
        }
        if step_norm < tol {
            return Ok(p);
        }
    }
    Err(Error::Config("Riccati integration did not converge".into()))
}

/// LQR state-feedback gains `K = R^-1 B' P`.
pub fn lqr_gains(
    a: &Array2<f64>,
    b: &Array2<f64>,
    q: &Array2<f64>,
    r: &Array2<f64>,
) -> Result<Array2<f64>> {
    let p = solve_care(a, b, q, r)?;
    Ok(invert(r)?.dot(&b.t()).dot(&p))
}
