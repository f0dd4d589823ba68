//! Flocking dynamics of the sheep agents and their analytic Jacobians.
//!
//! Each sheep moves with a closed-form velocity field made of three parts:
//! cohesion toward the other sheep (with a 1/r^3 spacing term that vanishes
//! at the safety radius), attraction to a common goal, and 1/r^2-magnitude
//! repulsion from every dog. The controller needs the exact gradients of
//! this field with respect to every sheep and dog position, so both the
//! analytic blocks and a central finite-difference oracle live here.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance floor for every pairwise separation entering a 1/r^3 term.
/// At or below this we raise [`Error::SingularSeparation`] instead of
/// clamping, which would corrupt the Jacobians.
pub const EPS_MIN: f64 = 1e-6;

/// Central finite-difference step for the validation oracle.
pub const FD_STEP: f64 = 1e-6;

/// A planar position or velocity in meters / meters-per-second.
/// Serializes as the pair `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "(f64, f64)", from = "(f64, f64)")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<(f64, f64)> for Vec2 {
    fn from((x, y): (f64, f64)) -> Self {
        Vec2 { x, y }
    }
}

impl From<Vec2> for (f64, f64) {
    fn from(v: Vec2) -> Self {
        (v.x, v.y)
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotate counterclockwise by `angle` radians about the origin.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn as_na(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn from_na(v: Vector2<f64>) -> Self {
        Vec2::new(v.x, v.y)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl std::fmt::Display for Vec2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// 2x2 Jacobian block of one sheep's velocity with respect to one agent's
/// position.
pub type Jacobian2x2 = Matrix2<f64>;

/// Positions of every sheep and every dog at one instant. Indices are
/// stable identities for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub sheep: Vec<Vec2>,
    pub dogs: Vec<Vec2>,
    /// Simulation time in seconds.
    pub time: f64,
}

impl WorldState {
    pub fn new(sheep: Vec<Vec2>, dogs: Vec<Vec2>, time: f64) -> Result<Self> {
        let state = WorldState { sheep, dogs, time };
        state.validate()?;
        Ok(state)
    }

    /// Reject non-finite coordinates. Pairwise-separation floors are
    /// enforced by the operations that divide by distances.
    pub fn validate(&self) -> Result<()> {
        if self.sheep.is_empty() {
            return Err(Error::InvalidConfig("at least one sheep required".into()));
        }
        for (i, p) in self.sheep.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "sheep {i} position is not finite"
                )));
            }
        }
        for (k, p) in self.dogs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "dog {k} position is not finite"
                )));
            }
        }
        if !self.time.is_finite() {
            return Err(Error::InvalidConfig("time is not finite".into()));
        }
        Ok(())
    }

    pub fn sheep_count(&self) -> usize {
        self.sheep.len()
    }

    pub fn dog_count(&self) -> usize {
        self.dogs.len()
    }

    /// Smallest distance over all sheep-sheep and sheep-dog pairs.
    pub fn min_separation(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.sheep.len() {
            for j in (i + 1)..self.sheep.len() {
                min = min.min((self.sheep[j] - self.sheep[i]).norm());
            }
            for k in 0..self.dogs.len() {
                min = min.min((self.dogs[k] - self.sheep[i]).norm());
            }
        }
        min
    }
}

/// Gains and geometry of the sheep velocity field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlockParams {
    /// Cohesion gain (1/s).
    pub k_s: f64,
    /// Goal-attraction gain (1/s).
    pub k_g: f64,
    /// Dog-repulsion gain (m^3/s).
    pub k_d: f64,
    /// Preferred inter-sheep spacing and sheep-dog collision radius (m).
    pub r_s: f64,
    /// Common goal position.
    pub goal: Vec2,
}

impl FlockParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_s >= 0.0 && self.k_g >= 0.0 && self.k_d >= 0.0) {
            return Err(Error::InvalidConfig(
                "flock gains k_s, k_g, k_d must be nonnegative".into(),
            ));
        }
        if !(self.r_s > 0.0) {
            return Err(Error::InvalidConfig("r_s must be positive".into()));
        }
        if !self.goal.is_finite() {
            return Err(Error::InvalidConfig("goal must be finite".into()));
        }
        Ok(())
    }
}

fn separation_error(a: String, b: String, dist: f64) -> Error {
    Error::SingularSeparation {
        a,
        b,
        dist,
        min: EPS_MIN,
    }
}

fn guarded_sheep_pair(state: &WorldState, i: usize, j: usize) -> Result<(Vec2, f64)> {
    let d = state.sheep[j] - state.sheep[i];
    let r = d.norm();
    if r <= EPS_MIN {
        return Err(separation_error(format!("sheep {i}"), format!("sheep {j}"), r));
    }
    Ok((d, r))
}

fn guarded_dog_pair(state: &WorldState, i: usize, k: usize) -> Result<(Vec2, f64)> {
    let e = state.sheep[i] - state.dogs[k];
    let s = e.norm();
    if s <= EPS_MIN {
        return Err(separation_error(format!("sheep {i}"), format!("dog {k}"), s));
    }
    Ok((e, s))
}

/// Velocity of sheep `i`:
///
/// f_i = k_s * sum_{j != i} (1 - r_s^3/|x_j - x_i|^3)(x_j - x_i)
///     + k_g * (goal - x_i)
///     + k_d * sum_k (x_i - x_Dk)/|x_i - x_Dk|^3
///
/// The cohesion sum skips j = i; the self term is 0/0 and physically
/// meaningless.
pub fn sheep_velocity(state: &WorldState, params: &FlockParams, i: usize) -> Result<Vec2> {
    assert!(i < state.sheep.len(), "sheep index {i} out of range");
    let xi = state.sheep[i];
    let mut v = (params.goal - xi) * params.k_g;

    for j in 0..state.sheep.len() {
        if j == i {
            continue;
        }
        let (d, r) = guarded_sheep_pair(state, i, j)?;
        let coeff = params.k_s * (1.0 - params.r_s.powi(3) / r.powi(3));
        v = v + d * coeff;
    }

    for k in 0..state.dogs.len() {
        let (e, s) = guarded_dog_pair(state, i, k)?;
        v = v + e * (params.k_d / s.powi(3));
    }

    Ok(v)
}

/// d/dx [ (1 - c/|x|^3) x ] = (1 - c/r^3) I + 3 c x x^T / r^5
fn cohesion_block(d: Vec2, r: f64, r_s: f64) -> Matrix2<f64> {
    let c = r_s.powi(3);
    let outer = d.as_na() * d.as_na().transpose();
    Matrix2::identity() * (1.0 - c / r.powi(3)) + outer * (3.0 * c / r.powi(5))
}

/// d/dx [ x/|x|^3 ] = I/r^3 - 3 x x^T / r^5
fn repulsion_block(e: Vec2, s: f64) -> Matrix2<f64> {
    let outer = e.as_na() * e.as_na().transpose();
    Matrix2::identity() / s.powi(3) - outer * (3.0 / s.powi(5))
}

/// Analytic Jacobian block d f_i / d x_{S_j}.
///
/// For j = i this collects the negated cohesion blocks of every neighbor,
/// the goal term -k_g I, and the repulsion blocks of every dog; for j != i
/// only the single cohesion block toward j survives.
pub fn sheep_jacobian_sheep(
    state: &WorldState,
    params: &FlockParams,
    j: usize,
    i: usize,
) -> Result<Jacobian2x2> {
    assert!(i < state.sheep.len() && j < state.sheep.len());
    if j != i {
        let (d, r) = guarded_sheep_pair(state, i, j)?;
        return Ok(cohesion_block(d, r, params.r_s) * params.k_s);
    }

    let mut jac = Matrix2::identity() * (-params.k_g);
    for other in 0..state.sheep.len() {
        if other == i {
            continue;
        }
        let (d, r) = guarded_sheep_pair(state, i, other)?;
        jac -= cohesion_block(d, r, params.r_s) * params.k_s;
    }
    for k in 0..state.dogs.len() {
        let (e, s) = guarded_dog_pair(state, i, k)?;
        jac += repulsion_block(e, s) * params.k_d;
    }
    Ok(jac)
}

/// Analytic Jacobian block d f_i / d x_{D_k}. Only dog k's repulsion term
/// contributes: -k_d (I/s^3 - 3 e e^T / s^5).
///
/// Closed form for its determinant: the block equals
/// -(k_d/s^3)(I - 3 ee^T/s^2), whose eigenvalues are 2 k_d/s^3 (along e)
/// and -k_d/s^3 (across), so det = -2 k_d^2 / s^6. It is nonzero for every
/// finite separation, which is what the feasibility certificate relies on.
pub fn sheep_jacobian_dog(
    state: &WorldState,
    params: &FlockParams,
    k: usize,
    i: usize,
) -> Result<Jacobian2x2> {
    assert!(i < state.sheep.len() && k < state.dogs.len());
    let (e, s) = guarded_dog_pair(state, i, k)?;
    Ok(repulsion_block(e, s) * (-params.k_d))
}

/// Which position a Jacobian is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffTarget {
    Sheep(usize),
    Dog(usize),
}

/// Central finite-difference approximation of a Jacobian block, the
/// validation oracle for the analytic forms. Step [`FD_STEP`], error
/// O(step^2).
pub fn finite_diff_jacobian(
    state: &WorldState,
    params: &FlockParams,
    target: DiffTarget,
    i: usize,
) -> Result<Jacobian2x2> {
    let mut jac = Matrix2::zeros();
    for axis in 0..2 {
        let mut plus = state.clone();
        let mut minus = state.clone();
        {
            let (p, m) = match target {
                DiffTarget::Sheep(j) => (&mut plus.sheep[j], &mut minus.sheep[j]),
                DiffTarget::Dog(k) => (&mut plus.dogs[k], &mut minus.dogs[k]),
            };
            if axis == 0 {
                p.x += FD_STEP;
                m.x -= FD_STEP;
            } else {
                p.y += FD_STEP;
                m.y -= FD_STEP;
            }
        }
        let fp = sheep_velocity(&plus, params, i)?;
        let fm = sheep_velocity(&minus, params, i)?;
        let col = (fp - fm) * (1.0 / (2.0 * FD_STEP));
        jac[(0, axis)] = col.x;
        jac[(1, axis)] = col.y;
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(k_s: f64, k_g: f64, k_d: f64) -> FlockParams {
        FlockParams {
            k_s,
            k_g,
            k_d,
            r_s: 0.5,
            goal: Vec2::ZERO,
        }
    }

    #[test]
    fn sheep_at_goal_is_stationary() {
        let state = WorldState::new(vec![Vec2::ZERO], vec![], 0.0).unwrap();
        let v = sheep_velocity(&state, &params(0.3, 1.0, 0.08), 0).unwrap();
        assert_eq!(v, Vec2::ZERO);
    }

    #[test]
    fn cohesion_vanishes_at_safety_spacing() {
        // Two sheep exactly r_s apart, no goal pull, no dogs.
        let mut p = params(0.3, 0.0, 0.0);
        p.r_s = 1.25;
        let state = WorldState::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.25, 0.0)],
            vec![],
            0.0,
        )
        .unwrap();
        for i in 0..2 {
            let v = sheep_velocity(&state, &p, i).unwrap();
            assert_relative_eq!(v.x, 0.0, epsilon = 1e-14);
            assert_relative_eq!(v.y, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn dog_repulsion_hand_value() {
        // Repulsion only: k_d * (x_s - x_d)/1^3 = 0.08 * (-1, 0).
        let state = WorldState::new(vec![Vec2::ZERO], vec![Vec2::new(1.0, 0.0)], 0.0).unwrap();
        let v = sheep_velocity(&state, &params(0.0, 0.0, 0.08), 0).unwrap();
        assert_relative_eq!(v.x, -0.08, epsilon = 1e-15);
        assert_relative_eq!(v.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lone_sheep_jacobian_is_goal_term() {
        let state = WorldState::new(vec![Vec2::new(2.0, -1.0)], vec![], 0.0).unwrap();
        let p = params(0.3, 1.3, 0.08);
        let jac = sheep_jacobian_sheep(&state, &p, 0, 0).unwrap();
        assert_relative_eq!(jac, Matrix2::identity() * -1.3, epsilon = 1e-14);
    }

    #[test]
    fn cross_jacobian_zero_without_cohesion() {
        let state = WorldState::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 2.0)],
            vec![],
            0.0,
        )
        .unwrap();
        let jac = sheep_jacobian_sheep(&state, &params(0.0, 1.0, 0.08), 1, 0).unwrap();
        assert_eq!(jac, Matrix2::zeros());
    }

    #[test]
    fn dog_jacobian_zero_without_repulsion() {
        let state = WorldState::new(vec![Vec2::ZERO], vec![Vec2::new(1.0, 1.0)], 0.0).unwrap();
        let jac = sheep_jacobian_dog(&state, &params(0.3, 1.0, 0.0), 0, 0).unwrap();
        assert_eq!(jac, Matrix2::zeros());
    }

    #[test]
    fn dog_jacobian_matches_closed_form_determinant() {
        let p = params(0.0, 1.0, 0.08);
        for (sx, sy, dx, dy) in [
            (0.0, 0.0, 1.0, 0.0),
            (1.0, -2.0, -0.3, 0.4),
            (5.0, 5.0, 4.0, 4.5),
        ] {
            let state =
                WorldState::new(vec![Vec2::new(sx, sy)], vec![Vec2::new(dx, dy)], 0.0).unwrap();
            let jac = sheep_jacobian_dog(&state, &p, 0, 0).unwrap();
            let s = (Vec2::new(sx, sy) - Vec2::new(dx, dy)).norm();
            let expected = -2.0 * p.k_d * p.k_d / s.powi(6);
            assert_relative_eq!(jac.determinant(), expected, max_relative = 1e-10);
            assert!(jac.determinant().abs() > 0.0);
        }
    }

    #[test]
    fn finite_diff_zero_for_zero_gains() {
        let state = WorldState::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.5)],
            vec![Vec2::new(-1.0, 2.0)],
            0.0,
        )
        .unwrap();
        let p = params(0.0, 0.0, 0.0);
        let jac = finite_diff_jacobian(&state, &p, DiffTarget::Sheep(0), 0).unwrap();
        assert_relative_eq!(jac, Matrix2::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn finite_diff_symmetric_pair_blocks_match() {
        // Cohesion coupling is symmetric in the pair: J_{21} for sheep 1
        // equals J_{12} for sheep 2 with the roles swapped.
        let state = WorldState::new(
            vec![Vec2::new(0.3, -0.2), Vec2::new(1.1, 0.9)],
            vec![],
            0.0,
        )
        .unwrap();
        let p = params(0.3, 1.0, 0.0);
        let j_21 = finite_diff_jacobian(&state, &p, DiffTarget::Sheep(1), 0).unwrap();
        let j_12 = finite_diff_jacobian(&state, &p, DiffTarget::Sheep(0), 1).unwrap();
        assert_relative_eq!(j_21, j_12, epsilon = 1e-8);
    }

    #[test]
    fn coincident_sheep_dog_is_singular_error() {
        let state = WorldState::new(vec![Vec2::ZERO], vec![Vec2::new(0.0, 5e-7)], 0.0).unwrap();
        let err = sheep_velocity(&state, &params(0.3, 1.0, 0.08), 0).unwrap_err();
        assert!(matches!(err, Error::SingularSeparation { .. }));
    }

    #[test]
    fn goal_only_field_is_linear() {
        let p = params(0.0, 1.7, 0.0);
        let state = WorldState::new(vec![Vec2::new(3.0, -4.0)], vec![], 0.0).unwrap();
        let v = sheep_velocity(&state, &p, 0).unwrap();
        let expected = (p.goal - Vec2::new(3.0, -4.0)) * 1.7;
        assert_relative_eq!(v.x, expected.x, epsilon = 1e-14);
        assert_relative_eq!(v.y, expected.y, epsilon = 1e-14);
    }

    #[test]
    fn rejects_non_finite_positions() {
        assert!(WorldState::new(vec![Vec2::new(f64::NAN, 0.0)], vec![], 0.0).is_err());
        assert!(WorldState::new(vec![Vec2::ZERO], vec![Vec2::new(f64::INFINITY, 0.0)], 0.0).is_err());
    }
}
