//! Min-norm quadratic program over the stacked dog velocities.
//!
//! The controller's QP is min |u|^2 subject to A u <= b: the nearest point
//! to the origin in a polyhedron. At the scales this library targets
//! (dimension 2m <= ~20, row count <= ~100) a dense dual active-set method
//! is exact, dependency-free, and fast. Starting from the unconstrained
//! minimum u = 0, the most violated row is added to the active set, with
//! dual-blocking drops on the way; a violated row whose normal lies in the
//! span of the active set with nonpositive dual direction is a Farkas-type
//! certificate of infeasibility.

use nalgebra::{DMatrix, DVector};

use crate::barrier::{ConstraintRow, ConstraintSet, RowTag};
use crate::error::{Error, Result};

/// Absolute feasibility tolerance used throughout.
pub const FEAS_TOL: f64 = 1e-8;

/// Condition-number limit on active-set Gram solves.
pub const COND_LIMIT: f64 = 1e12;

/// Slack penalty used when the simulator must relax an infeasible step.
pub const DEFAULT_RELAX_PENALTY: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub constraints: ConstraintSet,
}

impl QpProblem {
    pub fn new(constraints: ConstraintSet) -> Self {
        QpProblem { constraints }
    }

    pub fn dimension(&self) -> usize {
        self.constraints.dimension()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Relaxed,
}

/// Solver output. Under `Optimal`, `u` is the exact minimizer and satisfies
/// every row within [`FEAS_TOL`]; `duals` are the multipliers of the
/// |u|^2 objective (stationarity 2u + A_active^T duals = 0).
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub status: QpStatus,
    /// Largest slack violation, present only when status is `Relaxed`.
    pub max_violation: Option<f64>,
    pub active_set: Vec<RowTag>,
    /// Row indices matching `active_set`, into the problem's row list.
    pub active_indices: Vec<usize>,
    pub duals: Vec<f64>,
    /// Set when an ill-conditioned active-set solve forced the relaxed
    /// fallback path.
    pub ill_conditioned: bool,
}

enum GiOutcome {
    Optimal {
        u: DVector<f64>,
        active: Vec<usize>,
        /// Duals in the 1/2 |u|^2 scaling; doubled before reporting.
        mu: Vec<f64>,
    },
    Infeasible,
}

/// Gram-solve helper: returns (r, z) with r = G^-1 A_w a_p and
/// z = a_p - A_w^T r, erroring when G is numerically singular.
fn project_onto_active(
    rows: &[ConstraintRow],
    active: &[usize],
    a_p: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let w = active.len();
    if w == 0 {
        return Ok((DVector::zeros(0), a_p.clone()));
    }
    let dim = a_p.len();
    let mut a_mat = DMatrix::zeros(w, dim);
    for (idx, &row) in active.iter().enumerate() {
        a_mat.row_mut(idx).copy_from(&rows[row].a.transpose());
    }
    let gram = &a_mat * a_mat.transpose();

    let eig = gram.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(min_ev > 0.0) || max_ev / min_ev > COND_LIMIT {
        return Err(Error::IllConditioned {
            cond: if min_ev > 0.0 {
                max_ev / min_ev
            } else {
                f64::INFINITY
            },
            limit: COND_LIMIT,
        });
    }

    let rhs = &a_mat * a_p;
    let r = gram
        .cholesky()
        .ok_or(Error::IllConditioned {
            cond: f64::INFINITY,
            limit: COND_LIMIT,
        })?
        .solve(&rhs);
    let z = a_p - a_mat.transpose() * &r;
    Ok((r, z))
}

fn most_violated(rows: &[ConstraintRow], u: &DVector<f64>, skip: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, row) in rows.iter().enumerate() {
        if skip.contains(&idx) {
            continue;
        }
        let viol = row.a.dot(u) - row.b;
        if viol > FEAS_TOL {
            // ties broken toward the lowest index for deterministic runs
            if best.map_or(true, |(_, v)| viol > v) {
                best = Some((idx, viol));
            }
        }
    }
    best.map(|(idx, _)| idx)
}

fn gi_solve(rows: &[ConstraintRow], dim: usize) -> Result<GiOutcome> {
    let mut u = DVector::zeros(dim);
    let mut active: Vec<usize> = Vec::new();
    let mut mu: Vec<f64> = Vec::new();

    let max_iters = 20 * (rows.len() + dim) + 100;
    let mut iters = 0;

    while let Some(p) = most_violated(rows, &u, &active) {
        let a_p = &rows[p].a;
        let scale = a_p.norm_squared().max(1e-300);
        let mut mu_p = 0.0;

        loop {
            iters += 1;
            if iters > max_iters {
                return Err(Error::IllConditioned {
                    cond: f64::INFINITY,
                    limit: COND_LIMIT,
                });
            }

            let (r, z) = project_onto_active(rows, &active, a_p)?;
            let z_norm2 = z.norm_squared();
            let violation = a_p.dot(&u) - rows[p].b;

            // full step: moves u until row p becomes active
            let delta_full = if z_norm2 > 1e-14 * scale {
                violation / z_norm2
            } else {
                f64::INFINITY
            };

            // dual step: first active dual driven to zero
            let mut delta_dual = f64::INFINITY;
            let mut blocking = None;
            for (idx, &r_i) in r.iter().enumerate() {
                if r_i > 1e-14 {
                    let step = mu[idx] / r_i;
                    if step < delta_dual {
                        delta_dual = step;
                        blocking = Some(idx);
                    }
                }
            }

            let delta = delta_full.min(delta_dual);
            if !delta.is_finite() {
                // a_p lies in the span of the active rows with a
                // nonpositive dual direction: no u can satisfy row p
                // together with the active set.
                return Ok(GiOutcome::Infeasible);
            }

            u -= &z * delta;
            for (idx, m) in mu.iter_mut().enumerate() {
                *m -= delta * r[idx];
            }
            mu_p += delta;

            if delta_full <= delta_dual {
                active.push(p);
                mu.push(mu_p);
                break;
            }
            let k = blocking.expect("finite dual step implies a blocking index");
            active.remove(k);
            mu.remove(k);
        }
    }

    Ok(GiOutcome::Optimal { u, active, mu })
}

/// Exact minimizer of |u|^2 over { u : A u <= b }, `Infeasible` when the
/// polyhedron is empty. An ill-conditioned active-set solve falls back to
/// [`solve_relaxed`] with [`DEFAULT_RELAX_PENALTY`] and flags the solution.
pub fn solve_min_norm(problem: &QpProblem) -> QpSolution {
    let rows = &problem.constraints.rows;
    let dim = problem.dimension();
    match gi_solve(rows, dim) {
        Ok(GiOutcome::Optimal { u, active, mu }) => QpSolution {
            u,
            status: QpStatus::Optimal,
            max_violation: None,
            active_set: active.iter().map(|&i| rows[i].tag).collect(),
            active_indices: active,
            duals: mu.iter().map(|m| 2.0 * m).collect(),
            ill_conditioned: false,
        },
        Ok(GiOutcome::Infeasible) => QpSolution {
            u: DVector::zeros(dim),
            status: QpStatus::Infeasible,
            max_violation: None,
            active_set: Vec::new(),
            active_indices: Vec::new(),
            duals: Vec::new(),
            ill_conditioned: false,
        },
        Err(_) => {
            let mut sol = solve_relaxed(problem, DEFAULT_RELAX_PENALTY);
            sol.ill_conditioned = true;
            sol
        }
    }
}

/// Minimize |u|^2 + penalty * |s|^2 subject to A u <= b + s, s >= 0.
///
/// Substituting y = sqrt(penalty) * s turns this into a plain min-norm
/// problem in (u, y), which is always feasible, so the same active-set
/// core solves it. Status is `Relaxed` when any slack exceeds
/// [`FEAS_TOL`], otherwise `Optimal`.
pub fn solve_relaxed(problem: &QpProblem, penalty: f64) -> QpSolution {
    assert!(penalty > 0.0, "penalty must be positive");
    let rows = &problem.constraints.rows;
    let dim = problem.dimension();
    let q = rows.len();
    let root = penalty.sqrt();

    let mut aug: Vec<ConstraintRow> = Vec::with_capacity(2 * q);
    for (i, row) in rows.iter().enumerate() {
        let mut a = DVector::zeros(dim + q);
        a.rows_mut(0, dim).copy_from(&row.a);
        a[dim + i] = -1.0 / root;
        aug.push(ConstraintRow {
            a,
            b: row.b,
            tag: row.tag,
        });
    }
    for i in 0..q {
        let mut a = DVector::zeros(dim + q);
        a[dim + i] = -1.0;
        aug.push(ConstraintRow {
            a,
            b: 0.0,
            tag: rows[i].tag,
        });
    }

    match gi_solve(&aug, dim + q) {
        Ok(GiOutcome::Optimal { u: y, active, mu }) => {
            let u = DVector::from_fn(dim, |i, _| y[i]);
            let mut max_slack = 0.0f64;
            for i in 0..q {
                max_slack = max_slack.max(y[dim + i] / root);
            }
            let mut active_set = Vec::new();
            let mut active_indices = Vec::new();
            let mut duals = Vec::new();
            for (&idx, m) in active.iter().zip(&mu) {
                if idx < q {
                    active_set.push(rows[idx].tag);
                    active_indices.push(idx);
                    duals.push(2.0 * m);
                }
            }
            let relaxed = max_slack > FEAS_TOL;
            QpSolution {
                u,
                status: if relaxed {
                    QpStatus::Relaxed
                } else {
                    QpStatus::Optimal
                },
                max_violation: if relaxed { Some(max_slack) } else { None },
                active_set,
                active_indices,
                duals,
                ill_conditioned: false,
            }
        }
        Ok(GiOutcome::Infeasible) | Err(_) => {
            // the augmented problem is feasible by construction; reaching
            // here means a numeric failure, so freeze rather than guess
            let u = DVector::zeros(dim);
            let max_violation = rows
                .iter()
                .map(|r| (r.a.dot(&u) - r.b).max(0.0))
                .fold(0.0f64, f64::max);
            QpSolution {
                u,
                status: QpStatus::Relaxed,
                max_violation: Some(max_violation),
                active_set: Vec::new(),
                active_indices: Vec::new(),
                duals: Vec::new(),
                ill_conditioned: true,
            }
        }
    }
}

/// KKT residuals of an `Optimal` solution: stationarity of the |u|^2
/// objective, dual nonnegativity, primal feasibility, and complementary
/// slackness.
#[derive(Debug, Clone)]
pub struct KktReport {
    pub stationarity: f64,
    pub min_dual: f64,
    pub max_primal_violation: f64,
    pub max_complementarity: f64,
}

impl KktReport {
    pub fn ok(&self) -> bool {
        self.stationarity <= FEAS_TOL
            && self.min_dual >= -FEAS_TOL
            && self.max_primal_violation <= FEAS_TOL
            && self.max_complementarity <= FEAS_TOL
    }
}

pub fn verify_kkt(problem: &QpProblem, solution: &QpSolution) -> KktReport {
    let rows = &problem.constraints.rows;
    let dim = problem.dimension();

    // gradient 2u plus the dual combination of active normals
    let mut grad = solution.u.clone() * 2.0;
    let mut min_dual = f64::INFINITY;
    let mut max_comp = 0.0f64;
    for (&idx, &lambda) in solution.active_indices.iter().zip(&solution.duals) {
        min_dual = min_dual.min(lambda);
        let row = &rows[idx];
        grad += &row.a * lambda;
        max_comp = max_comp.max((lambda * row.slack(&solution.u)).abs());
    }
    if solution.active_indices.is_empty() {
        min_dual = 0.0;
    }

    let max_violation = rows
        .iter()
        .map(|r| (-r.slack(&solution.u)).max(0.0))
        .fold(0.0f64, f64::max);

    KktReport {
        stationarity: if dim == 0 { 0.0 } else { grad.norm() },
        min_dual,
        max_primal_violation: max_violation,
        max_complementarity: max_comp,
    }
}
