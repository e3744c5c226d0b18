//! Euclidean projection onto a polytope, used to restore feasibility of
//! predicted flows.
//!
//! `project_onto(c, s, x0)` returns the closest point to `x0` in
//! `{x : C x <= s}`. The least-distance program is reduced to a
//! non-negative least squares problem (Lawson-Hanson), whose active-set
//! iteration terminates finitely and deterministically; multipliers fall out
//! of the NNLS solution, so every projection carries a KKT certificate.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const NNLS_TOL: f64 = 1e-11;
/// Residual norm below this means the constraint set is empty.
const INFEASIBLE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("constraint polytope is empty; nothing to project onto")]
    EmptyPolytope,
    #[error("projection KKT residual {0:.3e} exceeds tolerance")]
    Certification(f64),
    #[error("projection dimensions inconsistent: {0}")]
    Shape(String),
}

/// KKT residuals of a projection, relative to the problem scale.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionCertificate {
    /// max constraint violation of the projected point
    pub primal: f64,
    /// stationarity residual ||2(x - x0) + C^T mu||_inf
    pub stationarity: f64,
    /// max |mu_i (C_i x - s_i)|
    pub complementarity: f64,
}

impl ProjectionCertificate {
    pub fn max(&self) -> f64 {
        self.primal.max(self.stationarity).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub point: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub certificate: ProjectionCertificate,
}

/// Projects `x0` onto `{x : C x <= s}`.
pub fn project_onto(c: &DMatrix<f64>, s: &[f64], x0: &[f64]) -> Result<Projection, ProjectError> {
    let m = c.nrows();
    let n = c.ncols();
    if s.len() != m || x0.len() != n {
        return Err(ProjectError::Shape(format!(
            "C is {m}x{n}, s has {}, x0 has {}",
            s.len(),
            x0.len()
        )));
    }

    // Shift to z = x - x0 and rewrite as G z >= h with G = -C.
    // h_i = C_i x0 - s_i is positive exactly where x0 violates constraint i.
    let mut h = DVector::zeros(m);
    for i in 0..m {
        let mut ci_x0 = 0.0;
        for j in 0..n {
            ci_x0 += c[(i, j)] * x0[j];
        }
        h[i] = ci_x0 - s[i];
    }

    // Scale rows so the NNLS tolerances see a uniform problem.
    let mut e = DMatrix::zeros(n + 1, m);
    for i in 0..m {
        let mut norm = h[i] * h[i];
        for j in 0..n {
            norm += c[(i, j)] * c[(i, j)];
        }
        let scale = 1.0 / norm.sqrt().max(1e-300);
        for j in 0..n {
            e[(j, i)] = -c[(i, j)] * scale;
        }
        e[(n, i)] = h[i] * scale;
    }
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;

    let u = nnls(&e, &f);
    let r = &e * &u - &f;
    let r_norm_sq: f64 = r.iter().map(|v| v * v).sum();
    if r_norm_sq.sqrt() < INFEASIBLE_TOL {
        return Err(ProjectError::EmptyPolytope);
    }
    let denom = r[n];
    debug_assert!(denom < 0.0, "LDP residual last entry must be negative");

    let mut point = vec![0.0; n];
    for j in 0..n {
        point[j] = x0[j] + (-r[j] / denom);
    }
    // Multipliers of the original <=-form problem: mu = 2 u_scaled / ||r||^2,
    // undoing the per-row scaling applied above.
    let mut multipliers = vec![0.0; m];
    for i in 0..m {
        let mut norm = h[i] * h[i];
        for j in 0..n {
            norm += c[(i, j)] * c[(i, j)];
        }
        let scale = 1.0 / norm.sqrt().max(1e-300);
        multipliers[i] = 2.0 * u[i] * scale / r_norm_sq;
    }

    let certificate = certify(c, s, x0, &point, &multipliers);
    Ok(Projection {
        point,
        multipliers,
        certificate,
    })
}

fn certify(
    c: &DMatrix<f64>,
    s: &[f64],
    x0: &[f64],
    x: &[f64],
    mu: &[f64],
) -> ProjectionCertificate {
    let m = c.nrows();
    let n = c.ncols();
    let scale = 1.0
        + x0.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
        + s.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..m {
        let mut ci_x = 0.0;
        for j in 0..n {
            ci_x += c[(i, j)] * x[j];
        }
        primal = primal.max(ci_x - s[i]);
        comp = comp.max((mu[i] * (ci_x - s[i])).abs());
    }

    let mut stationarity = 0.0f64;
    for j in 0..n {
        let mut g = 2.0 * (x[j] - x0[j]);
        for i in 0..m {
            g += c[(i, j)] * mu[i];
        }
        stationarity = stationarity.max(g.abs());
    }

    ProjectionCertificate {
        primal: primal.max(0.0) / scale,
        stationarity: stationarity / scale,
        complementarity: comp / (scale * scale),
    }
}

/// Lawson-Hanson non-negative least squares: minimize ||E u - f|| over u >= 0.
fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let m = e.ncols();
    let mut u = DVector::zeros(m);
    let mut passive = vec![false; m];
    let scale = e.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let tol = NNLS_TOL * scale;

    // Outer loop adds at most one passive index per pass; the inner loop only
    // removes indices, so termination is finite.
    for _outer in 0..10 * m + 10 {
        let w = e.transpose() * (f - e * &u);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if !passive[i] && w[i] > tol && best.map_or(true, |(_, bw)| w[i] > bw) {
                best = Some((i, w[i]));
            }
        }
        let Some((t, _)) = best else {
            return u;
        };
        passive[t] = true;

        loop {
            let idx: Vec<usize> = (0..m).filter(|&i| passive[i]).collect();
            let ep = e.select_columns(idx.iter());
            let sol = ep
                .svd(true, true)
                .solve(f, 1e-13)
                .expect("SVD least squares always solvable");

            if sol.iter().all(|&v| v > tol) {
                u.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    u[i] = sol[k];
                }
                break;
            }

            // Step back along the segment to the feasible boundary and drop
            // everything that lands at zero.
            let mut alpha = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if sol[k] <= tol {
                    let denom = u[i] - sol[k];
                    if denom > 0.0 {
                        alpha = alpha.min(u[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (k, &i) in idx.iter().enumerate() {
                u[i] += alpha * (sol[k] - u[i]);
                if u[i] <= tol {
                    u[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let m = rows.len();
        let n = rows[0].len();
        DMatrix::from_fn(m, n, |i, j| rows[i][j])
    }

    #[test]
    fn identity_on_interior_point() {
        // Box [-1,1]^2, x0 strictly inside.
        let c = mat(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        let s = [1.0, 1.0, 1.0, 1.0];
        let p = project_onto(&c, &s, &[0.3, -0.4]).unwrap();
        assert_eq!(p.point, vec![0.3, -0.4]);
        assert!(p.certificate.max() < 1e-9);
    }

    #[test]
    fn box_clipping_single_violation() {
        let c = mat(&[&[1.0], &[-1.0]]);
        let s = [2.0, 2.0];
        let p = project_onto(&c, &s, &[3.5]).unwrap();
        assert!((p.point[0] - 2.0).abs() < 1e-9);
        assert!(p.certificate.max() < 1e-8);
    }

    #[test]
    fn halfspace_projection_matches_formula() {
        // Project (2, 2) onto x + y <= 2: closest point is (1, 1).
        let c = mat(&[&[1.0, 1.0]]);
        let s = [2.0];
        let p = project_onto(&c, &s, &[2.0, 2.0]).unwrap();
        assert!((p.point[0] - 1.0).abs() < 1e-9);
        assert!((p.point[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_polytope_detected() {
        // x <= -1 and -x <= -2 (i.e. x >= 2): empty.
        let c = mat(&[&[1.0], &[-1.0]]);
        let s = [-1.0, -2.0];
        assert!(matches!(
            project_onto(&c, &s, &[0.0]),
            Err(ProjectError::EmptyPolytope)
        ));
    }

    #[test]
    fn corner_projection() {
        // Box [0,1]^2, project (2, 2) to the corner (1, 1).
        let c = mat(&[
            &[1.0, 0.0],
            &[0.0, 1.0],
            &[-1.0, 0.0],
            &[0.0, -1.0],
        ]);
        let s = [1.0, 1.0, 0.0, 0.0];
        let p = project_onto(&c, &s, &[2.0, 2.0]).unwrap();
        assert!((p.point[0] - 1.0).abs() < 1e-9);
        assert!((p.point[1] - 1.0).abs() < 1e-9);
        assert!(p.certificate.max() < 1e-8);
    }
}
