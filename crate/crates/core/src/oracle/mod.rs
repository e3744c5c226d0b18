//! Convex-optimization core: the exact DCOPF linear program that produces
//! training labels, the feasibility projection for predicted flows, and the
//! feasibility checker both share.
//!
//! The dispatch model is a transport formulation: link flows are decision
//! variables bounded by nominal capacity, and each node balances generation
//! against demand plus signed net outflow. Flows are split into two
//! non-negative directed variables so that link usage cost enters the
//! objective as cost times |flow|.

pub mod lp;
pub mod project;

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Snapshot;
use crate::grid::{Carrier, Network};
use lp::{LinearProgram, LpError, LpStatus};
use project::{project_onto, ProjectError};

/// Feasibility tolerance on physical quantities, in MW.
pub const FEASIBILITY_TOL_MW: f64 = 1e-6;
/// Certified-optimality tolerance on relative KKT residuals.
pub const KKT_TOL: f64 = 1e-7;

/// Schema version of the solutions manifest.
pub const SOLUTIONS_SCHEMA_VERSION: &str = "gridflow-sol/1";

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("snapshot has {got} demand entries, network has {want} nodes")]
    SnapshotShape { got: usize, want: usize },
    #[error("flow vector has {got} entries, network has {want} links")]
    FlowShape { got: usize, want: usize },
    #[error("optimality certification failed: KKT residual {0:.3e}")]
    Certification(f64),
    #[error("internal solver failure: {0}")]
    Solver(#[from] LpError),
    #[error("projection failed: {0}")]
    Projection(#[from] ProjectError),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed solutions file {path}, line {line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Solver behavior switches. Defaults match the training formulation: link
/// usage is billed but transfer losses are ignored in the balance equation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Apply link efficiency to arriving power in the balance constraints.
    pub apply_efficiency: bool,
    /// Include link marginal cost times |flow| in the objective.
    pub use_link_costs: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            apply_efficiency: false,
            use_link_costs: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveStatus::Optimal => write!(f, "optimal"),
            SolveStatus::Infeasible => write!(f, "infeasible"),
        }
    }
}

/// A dispatch for one snapshot: signed link flows, per-generator outputs,
/// per-node totals, and the objective cost.
#[derive(Debug, Clone)]
pub struct DispatchSolution {
    pub status: SolveStatus,
    pub flows: Vec<f64>,
    pub gen_output: Vec<f64>,
    pub node_total: Vec<f64>,
    pub objective: f64,
}

/// Worst constraint violations of a candidate dispatch, in MW.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub max_flow_violation: f64,
    pub max_gen_violation: f64,
    pub max_balance_residual: f64,
    pub feasible: bool,
}

/// Available capacity of one generator under the snapshot's weather: eta
/// times nominal power for renewables, nominal power for conventionals.
pub fn gen_capacity(network: &Network, snapshot: &Snapshot, gen_idx: usize) -> f64 {
    let g = &network.generators()[gen_idx];
    let j = network.gen_node(gen_idx);
    let c = match g.carrier {
        Carrier::Wind => snapshot.eta_wind[j],
        Carrier::Solar => snapshot.eta_solar[j],
        _ => 1.0,
    };
    c * g.p_nom
}

fn check_snapshot_shape(network: &Network, snapshot: &Snapshot) -> Result<(), OracleError> {
    let n = network.n_nodes();
    if snapshot.demand.len() != n || snapshot.eta_wind.len() != n || snapshot.eta_solar.len() != n
    {
        return Err(OracleError::SnapshotShape {
            got: snapshot.demand.len(),
            want: n,
        });
    }
    Ok(())
}

/// Solves the DCOPF linear program for one snapshot.
///
/// Minimizes total generation cost (plus link usage cost when enabled)
/// subject to nodal balance, weather-scaled generator limits, and flow
/// limits. Optimality is certified by KKT residuals; ties between equally
/// cheap generators resolve to generator-id order through the deterministic
/// pivot rule.
pub fn solve_dcopf(
    network: &Network,
    snapshot: &Snapshot,
    options: &OracleOptions,
) -> Result<DispatchSolution, OracleError> {
    check_snapshot_shape(network, snapshot)?;
    let n = network.n_nodes();
    let n_gen = network.n_generators();
    let n_link = network.n_links();
    let n_var = n_gen + 2 * n_link;

    let mut objective = vec![0.0; n_var];
    let mut lower = vec![0.0; n_var];
    let mut upper = vec![0.0; n_var];
    let mut a = DMatrix::zeros(n, n_var);

    for g in 0..n_gen {
        objective[g] = network.generators()[g].marginal_cost;
        upper[g] = gen_capacity(network, snapshot, g);
        a[(network.gen_node(g), g)] = 1.0;
    }
    for l in 0..n_link {
        let link = &network.links()[l];
        let (from, to) = network.link_endpoints(l);
        let cost = if options.use_link_costs { link.marginal_cost } else { 0.0 };
        let eff = if options.apply_efficiency { link.efficiency } else { 1.0 };
        let (fwd, bwd) = (n_gen + l, n_gen + n_link + l);
        objective[fwd] = cost;
        objective[bwd] = cost;
        upper[fwd] = link.f_nom;
        upper[bwd] = link.f_nom;
        // Balance rows carry -(net outflow): forward flow leaves `from` whole
        // and arrives at `to` scaled by efficiency.
        a[(from, fwd)] = -1.0;
        a[(to, fwd)] = eff;
        a[(from, bwd)] = eff;
        a[(to, bwd)] = -1.0;
    }
    let _ = &mut lower; // all-zero lower bounds

    let program = LinearProgram {
        objective,
        constraints: a,
        rhs: snapshot.demand.clone(),
        lower,
        upper,
    };
    let solution = program.solve()?;

    if solution.status == LpStatus::Infeasible {
        return Ok(DispatchSolution {
            status: SolveStatus::Infeasible,
            flows: vec![0.0; n_link],
            gen_output: vec![0.0; n_gen],
            node_total: vec![0.0; n],
            objective: f64::NAN,
        });
    }
    let kkt = solution.residuals.max();
    if kkt > KKT_TOL {
        return Err(OracleError::Certification(kkt));
    }

    let mut gen_output = solution.x[..n_gen].to_vec();
    canonicalize_equal_cost_splits(network, snapshot, &mut gen_output);
    let flows: Vec<f64> = (0..n_link)
        .map(|l| solution.x[n_gen + l] - solution.x[n_gen + n_link + l])
        .collect();
    let mut node_total = vec![0.0; n];
    for g in 0..n_gen {
        node_total[network.gen_node(g)] += gen_output[g];
    }
    Ok(DispatchSolution {
        status: SolveStatus::Optimal,
        flows,
        gen_output,
        node_total,
        objective: solution.objective,
    })
}

/// Same-cost generators at one node are interchangeable at identical
/// objective, so the simplex may return any split among them. Re-fill each
/// equal-cost group in generator-id order to make labels deterministic and
/// consistent with merit-order dispatch.
fn canonicalize_equal_cost_splits(network: &Network, snapshot: &Snapshot, gen_output: &mut [f64]) {
    for j in 0..network.n_nodes() {
        // Stable sort keeps id order within equal costs.
        let mut gens = network.generators_at(j).to_vec();
        gens.sort_by(|&a, &b| {
            network.generators()[a]
                .marginal_cost
                .total_cmp(&network.generators()[b].marginal_cost)
        });
        let mut k = 0;
        while k < gens.len() {
            let cost = network.generators()[gens[k]].marginal_cost;
            let mut end = k + 1;
            while end < gens.len() && network.generators()[gens[end]].marginal_cost == cost {
                end += 1;
            }
            if end - k > 1 {
                let group = &gens[k..end];
                let mut remaining: f64 = group.iter().map(|&g| gen_output[g]).sum();
                for &g in group {
                    let cap = gen_capacity(network, snapshot, g);
                    let take = remaining.min(cap);
                    gen_output[g] = take;
                    remaining -= take;
                }
            }
            k = end;
        }
    }
}

/// Reports the worst flow-bound, generator-bound, and nodal-balance
/// violations of a candidate dispatch.
pub fn check_feasible(
    network: &Network,
    snapshot: &Snapshot,
    flows: &[f64],
    gen_output: &[f64],
    options: &OracleOptions,
) -> Result<FeasibilityReport, OracleError> {
    check_snapshot_shape(network, snapshot)?;
    if flows.len() != network.n_links() {
        return Err(OracleError::FlowShape {
            got: flows.len(),
            want: network.n_links(),
        });
    }
    if gen_output.len() != network.n_generators() {
        return Err(OracleError::FlowShape {
            got: gen_output.len(),
            want: network.n_generators(),
        });
    }

    let mut max_flow_violation = 0.0f64;
    for (l, link) in network.links().iter().enumerate() {
        max_flow_violation = max_flow_violation.max(flows[l].abs() - link.f_nom);
    }
    max_flow_violation = max_flow_violation.max(0.0);

    let mut max_gen_violation = 0.0f64;
    for g in 0..network.n_generators() {
        let cap = gen_capacity(network, snapshot, g);
        max_gen_violation = max_gen_violation
            .max(-gen_output[g])
            .max(gen_output[g] - cap);
    }
    max_gen_violation = max_gen_violation.max(0.0);

    let mut balance = snapshot.demand.clone();
    for (l, link) in network.links().iter().enumerate() {
        let (from, to) = network.link_endpoints(l);
        let eff = if options.apply_efficiency { link.efficiency } else { 1.0 };
        let f = flows[l];
        // Net outflow contributions of a signed flow at each endpoint.
        if f >= 0.0 {
            balance[from] += f;
            balance[to] -= eff * f;
        } else {
            balance[from] += eff * f;
            balance[to] -= f;
        }
    }
    for g in 0..network.n_generators() {
        balance[network.gen_node(g)] -= gen_output[g];
    }
    let max_balance_residual = balance.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    let feasible = max_flow_violation <= FEASIBILITY_TOL_MW
        && max_gen_violation <= FEASIBILITY_TOL_MW
        && max_balance_residual <= FEASIBILITY_TOL_MW;
    Ok(FeasibilityReport {
        max_flow_violation,
        max_gen_violation,
        max_balance_residual,
        feasible,
    })
}

/// Projects normalized predicted flows onto the feasible polytope and
/// returns flows in MW.
///
/// The polytope is `{F : |F_l| <= f_nom_l, 0 <= demand_j + (inc F)_j <=
/// available_j}` with availability the weather-scaled capacity at each node.
/// The result is the Euclidean projection of `f_hat * f_nom`.
pub fn project_feasible(
    network: &Network,
    snapshot: &Snapshot,
    f_hat: &[f64],
) -> Result<Vec<f64>, OracleError> {
    check_snapshot_shape(network, snapshot)?;
    let n_link = network.n_links();
    if f_hat.len() != n_link {
        return Err(OracleError::FlowShape {
            got: f_hat.len(),
            want: n_link,
        });
    }
    let n = network.n_nodes();
    let avail = network.available_capacity(&snapshot.eta_wind, &snapshot.eta_solar);

    let x0: Vec<f64> = (0..n_link)
        .map(|l| f_hat[l] * network.links()[l].f_nom)
        .collect();

    // Rows: F_l <= f_nom, -F_l <= f_nom, (inc F)_j <= avail_j - d_j,
    // -(inc F)_j <= d_j.
    let n_rows = 2 * n_link + 2 * n;
    let mut c = DMatrix::zeros(n_rows, n_link);
    let mut s = vec![0.0; n_rows];
    for l in 0..n_link {
        c[(2 * l, l)] = 1.0;
        s[2 * l] = network.links()[l].f_nom;
        c[(2 * l + 1, l)] = -1.0;
        s[2 * l + 1] = network.links()[l].f_nom;
    }
    let inc = network.incidence();
    for j in 0..n {
        for l in 0..n_link {
            c[(2 * n_link + 2 * j, l)] = inc[(j, l)];
            c[(2 * n_link + 2 * j + 1, l)] = -inc[(j, l)];
        }
        s[2 * n_link + 2 * j] = avail[j] - snapshot.demand[j];
        s[2 * n_link + 2 * j + 1] = snapshot.demand[j];
    }

    let projection = project_onto(&c, &s, &x0)?;
    let kkt = projection.certificate.max();
    if kkt > KKT_TOL {
        return Err(OracleError::Certification(kkt));
    }
    Ok(projection.point)
}

/// One snapshot's labels, as stored in the solutions file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub step: u64,
    pub status: SolveStatus,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionsManifest {
    pub version: String,
    pub records: Vec<SolutionRecord>,
}

/// Writes per-snapshot dispatches: a CSV with one row per (snapshot, link)
/// and one per (snapshot, generator), plus a JSON manifest carrying the
/// objective per snapshot.
pub fn save_solutions(
    csv_path: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
    network: &Network,
    steps: &[u64],
    solutions: &[DispatchSolution],
) -> Result<(), OracleError> {
    assert_eq!(steps.len(), solutions.len());
    let mut out = String::from("step,kind,id,value_mw\n");
    for (step, sol) in steps.iter().zip(solutions) {
        for (l, link) in network.links().iter().enumerate() {
            out.push_str(&format!("{step},flow,{},{:.12e}\n", link.id.0, sol.flows[l]));
        }
        for (g, gen) in network.generators().iter().enumerate() {
            out.push_str(&format!("{step},gen,{},{:.12e}\n", gen.id.0, sol.gen_output[g]));
        }
    }
    let csv_path = csv_path.as_ref();
    std::fs::write(csv_path, out).map_err(|source| OracleError::Io {
        path: csv_path.display().to_string(),
        source,
    })?;

    let manifest = SolutionsManifest {
        version: SOLUTIONS_SCHEMA_VERSION.to_string(),
        records: steps
            .iter()
            .zip(solutions)
            .map(|(step, sol)| SolutionRecord {
                step: *step,
                status: sol.status,
                objective: sol.objective,
            })
            .collect(),
    };
    let manifest_path = manifest_path.as_ref();
    std::fs::write(
        manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|source| OracleError::Io {
        path: manifest_path.display().to_string(),
        source,
    })
}

/// Loads a solutions CSV back into per-snapshot flow and generator vectors,
/// ordered by the network's link/generator index order.
pub fn load_solutions(
    csv_path: impl AsRef<Path>,
    network: &Network,
) -> Result<Vec<(u64, Vec<f64>, Vec<f64>)>, OracleError> {
    let path = csv_path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| OracleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let malformed = |line: usize, reason: String| OracleError::Malformed {
        path: path.display().to_string(),
        line,
        reason,
    };

    let link_index: std::collections::HashMap<u32, usize> = network
        .links()
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id.0, i))
        .collect();
    let gen_index: std::collections::HashMap<u32, usize> = network
        .generators()
        .iter()
        .enumerate()
        .map(|(i, g)| (g.id.0, i))
        .collect();

    let mut by_step: Vec<(u64, Vec<f64>, Vec<f64>)> = Vec::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(malformed(line_no + 1, format!("expected 4 columns, got {}", parts.len())));
        }
        let step: u64 = parts[0]
            .parse()
            .map_err(|_| malformed(line_no + 1, format!("bad step {:?}", parts[0])))?;
        let id: u32 = parts[2]
            .parse()
            .map_err(|_| malformed(line_no + 1, format!("bad id {:?}", parts[2])))?;
        let value: f64 = parts[3]
            .parse()
            .map_err(|_| malformed(line_no + 1, format!("bad value {:?}", parts[3])))?;
        if by_step.last().map_or(true, |(s, _, _)| *s != step) {
            by_step.push((
                step,
                vec![f64::NAN; network.n_links()],
                vec![f64::NAN; network.n_generators()],
            ));
        }
        let entry = by_step.last_mut().unwrap();
        match parts[1] {
            "flow" => {
                let l = *link_index
                    .get(&id)
                    .ok_or_else(|| malformed(line_no + 1, format!("unknown link id {id}")))?;
                entry.1[l] = value;
            }
            "gen" => {
                let g = *gen_index
                    .get(&id)
                    .ok_or_else(|| malformed(line_no + 1, format!("unknown generator id {id}")))?;
                entry.2[g] = value;
            }
            other => return Err(malformed(line_no + 1, format!("unknown kind {other:?}"))),
        }
    }
    for (step, flows, gens) in &by_step {
        if flows.iter().chain(gens.iter()).any(|v| v.is_nan()) {
            return Err(malformed(
                0,
                format!("snapshot {step} is missing link or generator rows"),
            ));
        }
    }
    Ok(by_step)
}
