//! Dense bounded-variable linear programming by the two-phase revised
//! simplex method.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    c . x
//!     subject to  A x = b,   l <= x <= u
//! ```
//!
//! Phase 1 drives artificial variables out of the basis; phase 2 optimizes
//! the true objective. Pivot selection is deterministic (largest reduced-cost
//! violation, ties to the lowest index, with a Bland fallback after a stall),
//! so repeated solves of the same problem take the same path and return the
//! same vertex. Optimality is certified by explicit KKT residuals.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Dual feasibility slack below this (relative to the cost scale) counts as
/// optimal.
const REDUCED_COST_TOL: f64 = 1e-9;
/// Pivot magnitudes below this are treated as zero.
const PIVOT_TOL: f64 = 1e-9;
/// Phase-1 objective above this (relative to the demand scale) means
/// infeasible.
const FEASIBILITY_TOL: f64 = 1e-7;
/// Iterations without objective progress before switching to Bland's rule.
const STALL_LIMIT: usize = 200;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("linear program is unbounded; all variables should be boxed")]
    Unbounded,
    #[error("simplex stalled after {0} iterations")]
    Stalled(usize),
    #[error("basis matrix became singular")]
    SingularBasis,
    #[error("problem dimensions inconsistent: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

/// Max KKT residuals of a solve, each relative to its natural scale.
#[derive(Debug, Clone, Copy, Default)]
pub struct KktResiduals {
    /// max |Ax - b| / (1 + max|b|)
    pub primal: f64,
    /// max reduced-cost sign violation / (1 + max|c|)
    pub dual: f64,
    /// max bound violation / (1 + |x|)
    pub bounds: f64,
    /// max |d_j| * gap_j / ((1 + max|c|) (1 + max|x|))
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.dual)
            .max(self.bounds)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub residuals: KktResiduals,
    pub iterations: usize,
}

/// `minimize c.x  s.t.  A x = b, l <= x <= u` with dense `A`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: DMatrix<f64>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    /// Full constraint matrix including artificial columns.
    a: DMatrix<f64>,
    b: DVector<f64>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    x: Vec<f64>,
    n_structural: usize,
}

impl LinearProgram {
    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let m = self.constraints.nrows();
        let n = self.constraints.ncols();
        if self.objective.len() != n
            || self.rhs.len() != m
            || self.lower.len() != n
            || self.upper.len() != n
        {
            return Err(LpError::Shape(format!(
                "A is {m}x{n}, c has {}, b has {}, bounds have {}/{}",
                self.objective.len(),
                self.rhs.len(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] {
                return Err(LpError::Shape(format!(
                    "variable {j} has empty bound interval [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
        }

        // Start every structural variable at its lower bound, then cover the
        // equality residual with one artificial per row.
        let mut a = DMatrix::zeros(m, n + m);
        a.view_mut((0, 0), (m, n)).copy_from(&self.constraints);
        let mut x = vec![0.0; n + m];
        let mut state = vec![VarState::AtLower; n + m];
        for j in 0..n {
            x[j] = self.lower[j];
        }
        let mut residual = DVector::from_column_slice(&self.rhs);
        for j in 0..n {
            if x[j] != 0.0 {
                for i in 0..m {
                    residual[i] -= self.constraints[(i, j)] * x[j];
                }
            }
        }
        let mut lower = self.lower.clone();
        let mut upper = self.upper.clone();
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            let sign = if residual[i] >= 0.0 { 1.0 } else { -1.0 };
            a[(i, n + i)] = sign;
            x[n + i] = residual[i].abs();
            state[n + i] = VarState::Basic;
            basis.push(n + i);
            lower.push(0.0);
            upper.push(f64::INFINITY);
        }

        let phase1_cost: Vec<f64> = (0..n + m).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
        let mut tab = Tableau {
            a,
            b: DVector::from_column_slice(&self.rhs),
            cost: phase1_cost,
            lower,
            upper,
            state,
            basis,
            x,
            n_structural: n,
        };

        let mut iterations = tab.run()?;
        let b_scale = 1.0 + self.rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let phase1_obj: f64 = (0..m).map(|i| tab.x[n + i]).sum();
        if phase1_obj > FEASIBILITY_TOL * b_scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: tab.x[..n].to_vec(),
                objective: f64::NAN,
                residuals: KktResiduals::default(),
                iterations,
            });
        }

        tab.evict_artificials()?;
        // Lock artificials for phase 2 so they can never re-enter.
        for j in n..n + m {
            tab.lower[j] = 0.0;
            tab.upper[j] = 0.0;
            tab.cost[j] = 0.0;
            if tab.state[j] != VarState::Basic {
                tab.x[j] = 0.0;
                tab.state[j] = VarState::AtLower;
            }
        }
        tab.cost[..n].copy_from_slice(&self.objective);
        iterations += tab.run()?;

        let x = tab.x[..n].to_vec();
        let objective = self
            .objective
            .iter()
            .zip(&x)
            .map(|(c, v)| c * v)
            .sum::<f64>();
        let residuals = self.kkt_residuals(&tab, &x);
        Ok(LpSolution {
            status: LpStatus::Optimal,
            x,
            objective,
            residuals,
            iterations,
        })
    }

    fn kkt_residuals(&self, tab: &Tableau, x: &[f64]) -> KktResiduals {
        let m = self.constraints.nrows();
        let n = self.constraints.ncols();
        let b_scale = 1.0 + self.rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let c_scale = 1.0 + self.objective.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let x_scale = 1.0 + x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

        let mut primal = 0.0f64;
        for i in 0..m {
            let mut ax = 0.0;
            for j in 0..n {
                ax += self.constraints[(i, j)] * x[j];
            }
            // Account for any locked artificial left basic on a redundant row.
            ax += tab.a[(i, n + i)] * tab.x[n + i];
            primal = primal.max((ax - self.rhs[i]).abs());
        }
        primal /= b_scale;

        let mut bounds = 0.0f64;
        for j in 0..n {
            let below = self.lower[j] - x[j];
            let above = x[j] - self.upper[j];
            bounds = bounds.max(below.max(above).max(0.0) / (1.0 + x[j].abs()));
        }

        let y = match tab.dual_multipliers() {
            Some(y) => y,
            None => return KktResiduals { primal, dual: f64::INFINITY, bounds, complementarity: f64::INFINITY },
        };
        let mut dual = 0.0f64;
        let mut comp = 0.0f64;
        for j in 0..n {
            let mut d = self.objective[j];
            for i in 0..m {
                d -= y[i] * self.constraints[(i, j)];
            }
            // A fixed variable (empty bound interval) carries no sign
            // condition: its multiplier may point either way.
            if self.lower[j] < self.upper[j] {
                match tab.state[j] {
                    VarState::Basic => dual = dual.max(d.abs()),
                    VarState::AtLower => dual = dual.max((-d).max(0.0)),
                    VarState::AtUpper => dual = dual.max(d.max(0.0)),
                }
            }
            let gap_l = (x[j] - self.lower[j]).abs();
            let gap_u = (self.upper[j] - x[j]).abs();
            comp = comp.max(d.abs() * gap_l.min(gap_u));
        }
        KktResiduals {
            primal,
            dual: dual / c_scale,
            bounds,
            complementarity: comp / (c_scale * x_scale),
        }
    }
}

impl Tableau {
    fn m(&self) -> usize {
        self.b.len()
    }

    fn n_total(&self) -> usize {
        self.a.ncols()
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        let m = self.m();
        let mut b = DMatrix::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            b.set_column(k, &self.a.column(j));
        }
        b
    }

    /// Dual vector y solving B^T y = c_B for the current basis.
    fn dual_multipliers(&self) -> Option<DVector<f64>> {
        let bt = self.basis_matrix().transpose();
        let cb = DVector::from_iterator(self.m(), self.basis.iter().map(|&j| self.cost[j]));
        bt.lu().solve(&cb)
    }

    /// Recompute basic values from the nonbasic assignment.
    fn refresh_basic_values(&mut self) -> Result<(), LpError> {
        let m = self.m();
        let mut rhs = self.b.clone();
        for j in 0..self.n_total() {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                for i in 0..m {
                    rhs[i] -= self.a[(i, j)] * self.x[j];
                }
            }
        }
        let xb = self
            .basis_matrix()
            .lu()
            .solve(&rhs)
            .ok_or(LpError::SingularBasis)?;
        for (k, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[k];
        }
        Ok(())
    }

    fn objective_value(&self) -> f64 {
        self.cost.iter().zip(&self.x).map(|(c, v)| c * v).sum()
    }

    fn run(&mut self) -> Result<usize, LpError> {
        self.refresh_basic_values()?;
        let n = self.n_total();
        let m = self.m();
        let max_iters = 200 * (n + m) + 1000;
        let cost_scale = 1.0 + self.cost.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tol_d = REDUCED_COST_TOL * cost_scale;

        let mut best_obj = self.objective_value();
        let mut stalled = 0usize;
        let mut bland = false;

        for iter in 0..max_iters {
            let y = self.dual_multipliers().ok_or(LpError::SingularBasis)?;

            // Entering variable: the nonbasic column whose reduced cost
            // violates optimality the most (or the first one under Bland).
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..n {
                if self.state[j] == VarState::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let mut d = self.cost[j];
                for i in 0..m {
                    d -= y[i] * self.a[(i, j)];
                }
                let violation = match self.state[j] {
                    VarState::AtLower => -d,
                    VarState::AtUpper => d,
                    VarState::Basic => unreachable!(),
                };
                if violation > tol_d {
                    if bland {
                        entering = Some((j, violation));
                        break;
                    }
                    if entering.map_or(true, |(_, best)| violation > best) {
                        entering = Some((j, violation));
                    }
                }
            }
            let Some((q, _)) = entering else {
                return Ok(iter);
            };

            // Direction of basic values as the entering variable moves by +t
            // toward its opposite bound.
            let increase = self.state[q] == VarState::AtLower;
            let aq = DVector::from_column_slice(self.a.column(q).as_slice());
            let w = self
                .basis_matrix()
                .lu()
                .solve(&aq)
                .ok_or(LpError::SingularBasis)?;

            const TIE_TOL: f64 = 1e-10;
            let mut t_star = self.upper[q] - self.lower[q]; // bound flip distance
            // Best leaving candidate at the current t_star: (basis pos, signed
            // delta, |delta|). None means the step ends in a bound flip.
            let mut choice: Option<(usize, f64, f64)> = None;
            for k in 0..m {
                let delta = if increase { -w[k] } else { w[k] };
                if delta.abs() <= PIVOT_TOL {
                    continue;
                }
                let jb = self.basis[k];
                let t_k = if delta < 0.0 {
                    (self.x[jb] - self.lower[jb]) / -delta
                } else {
                    (self.upper[jb] - self.x[jb]) / delta
                }
                .max(0.0);
                if t_k < t_star - TIE_TOL {
                    t_star = t_k;
                    choice = Some((k, delta, delta.abs()));
                } else if t_k <= t_star + TIE_TOL {
                    match choice {
                        // Tie against the bound flip: keep the flip, it needs
                        // no basis change.
                        None => {}
                        Some((kb, _, db)) => {
                            let take = if bland {
                                self.basis[k] < self.basis[kb]
                            } else {
                                delta.abs() > db * (1.0 + 1e-9)
                                    || ((delta.abs() - db).abs() <= 1e-9 * db
                                        && self.basis[k] < self.basis[kb])
                            };
                            if take {
                                t_star = t_star.min(t_k);
                                choice = Some((k, delta, delta.abs()));
                            }
                        }
                    }
                }
            }

            if !t_star.is_finite() {
                return Err(LpError::Unbounded);
            }
            let t = t_star.max(0.0);

            // Apply the step.
            if increase {
                self.x[q] = self.lower[q] + t;
            } else {
                self.x[q] = self.upper[q] - t;
            }
            for k in 0..m {
                let delta = if increase { -w[k] } else { w[k] };
                let jb = self.basis[k];
                self.x[jb] += delta * t;
            }

            match choice {
                None => {
                    // Bound flip: q moved all the way to its other bound.
                    self.state[q] = if increase { VarState::AtUpper } else { VarState::AtLower };
                    self.x[q] = if increase { self.upper[q] } else { self.lower[q] };
                    self.refresh_basic_values()?;
                }
                Some((k, delta, _)) => {
                    let jb = self.basis[k];
                    // The leaving variable hits the bound its motion points at.
                    self.state[jb] = if delta < 0.0 { VarState::AtLower } else { VarState::AtUpper };
                    self.x[jb] = if delta < 0.0 { self.lower[jb] } else { self.upper[jb] };
                    self.state[q] = VarState::Basic;
                    self.basis[k] = q;
                    self.refresh_basic_values()?;
                }
            }

            let obj = self.objective_value();
            if obj < best_obj - 1e-12 * (1.0 + best_obj.abs()) {
                best_obj = obj;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled > STALL_LIMIT {
                    bland = true;
                }
            }
        }
        Err(LpError::Stalled(max_iters))
    }

    /// After phase 1, pivot basic artificials out of the basis wherever a
    /// structural column can replace them; redundant rows keep their locked
    /// artificial.
    fn evict_artificials(&mut self) -> Result<(), LpError> {
        let n = self.n_structural;
        let m = self.m();
        for k in 0..m {
            if self.basis[k] < n {
                continue;
            }
            // Row vector e_k^T B^{-1} gives pivots against candidate columns.
            let bt = self.basis_matrix().transpose();
            let mut ek = DVector::zeros(m);
            ek[k] = 1.0;
            let z = bt.lu().solve(&ek).ok_or(LpError::SingularBasis)?;
            let mut best: Option<(usize, f64)> = None;
            for j in 0..n {
                if self.state[j] == VarState::Basic {
                    continue;
                }
                let mut pivot = 0.0;
                for i in 0..m {
                    pivot += z[i] * self.a[(i, j)];
                }
                if pivot.abs() > 1e-7 && best.map_or(true, |(_, p)| pivot.abs() > p) {
                    best = Some((j, pivot.abs()));
                }
            }
            if let Some((j, _)) = best {
                let art = self.basis[k];
                self.basis[k] = j;
                self.state[j] = VarState::Basic;
                self.state[art] = VarState::AtLower;
                self.x[art] = 0.0;
                self.refresh_basic_values()?;
            }
        }
        Ok(())
    }
}
