//! Checkable feasibility certificate for the one-dog / one-sheep case.
//!
//! With a single keep-out zone, one sheep, and one dog, the herding QP has
//! a single row a * u <= b. It is always solvable because (i) the dog
//! Jacobian block is nonsingular at every finite separation, so a != 0,
//! and (ii) b admits an explicit finite lower bound once the geometry is
//! bounded. This module computes both quantities so a run can certify the
//! guarantee numerically at its own operating point.

use serde::{Deserialize, Serialize};

use crate::barrier::{herding_row, BarrierGains, ProtectedZone, ZoneMode};
use crate::error::{Error, Result};
use crate::flock::{sheep_jacobian_dog, sheep_jacobian_sheep, FlockParams, WorldState};

/// Declared geometry bounds the certificate is evaluated under:
/// |x_S - x_G| <= m1, |x_S - x_P| <= m2, |x_S - x_D| >= m3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateBounds {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl CertificateBounds {
    pub fn new(m1: f64, m2: f64, m3: f64) -> Result<Self> {
        if !(m1 > 0.0 && m2 > 0.0 && m3 > 0.0) {
            return Err(Error::InvalidConfig(
                "certificate bounds m1, m2, m3 must be positive".into(),
            ));
        }
        Ok(CertificateBounds { m1, m2, m3 })
    }
}

/// Upper bound on the Frobenius norm of the sheep's self-Jacobian at
/// separations >= m3:
///
///   lambda_M = sqrt( 2 k_G^2 + 5 k_D^2 / m3^6 + 2 k_G k_D / m3^2 )
///
/// The exact norm is sqrt(2 k_G^2 + 5 k_D^2/s^6 + 2 k_G k_D/s^3) at
/// separation s, so the cross term here dominates only when m3 >= 1 m;
/// callers declaring m3 < 1 get a warning in [`certify_1v1`].
pub fn lambda_max_bound(params: &FlockParams, m3: f64) -> f64 {
    let kg2 = params.k_g * params.k_g;
    let kd2 = params.k_d * params.k_d;
    (2.0 * kg2 + 5.0 * kd2 / m3.powi(6) + 2.0 * params.k_g * params.k_d / (m3 * m3)).sqrt()
}

/// Explicit lower bound on the herding row's right-hand side:
///
///   b >= -(lambda_M + alpha) * (k_G m1 m2 + k_D m2 / m3^2)
pub fn b_lower_bound(params: &FlockParams, gains: &BarrierGains, bounds: &CertificateBounds) -> f64 {
    let lambda = lambda_max_bound(params, bounds.m3);
    -(lambda + gains.alpha()) * (params.k_g * bounds.m1 * bounds.m2
        + params.k_d * bounds.m2 / (bounds.m3 * bounds.m3))
}

/// Everything [`certify_1v1`] measures at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifyReport {
    /// |a| of the single herding row; positive iff the row is usable.
    pub a_norm: f64,
    /// det of the dog Jacobian block (closed form -2 k_D^2 / s^6).
    pub jd_determinant: f64,
    pub b_actual: f64,
    pub b_bound: f64,
    /// Frobenius norm of the sheep self-Jacobian at this state.
    pub sigma_f: f64,
    pub lambda_m: f64,
    pub warnings: Vec<String>,
    pub verdict: bool,
}

impl std::fmt::Display for CertifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "herding row |a|      : {:.9e}", self.a_norm)?;
        writeln!(f, "det J^D              : {:.9e}", self.jd_determinant)?;
        writeln!(f, "b actual             : {:.9}", self.b_actual)?;
        writeln!(f, "b lower bound        : {:.9}", self.b_bound)?;
        writeln!(f, "sigma_F(J^S)         : {:.9}", self.sigma_f)?;
        writeln!(f, "lambda_M             : {:.9}", self.lambda_m)?;
        for w in &self.warnings {
            writeln!(f, "warning              : {w}")?;
        }
        writeln!(
            f,
            "verdict              : {}",
            if self.verdict { "PASS" } else { "FAIL" }
        )
    }
}

/// Certify feasibility of the herding QP at a 1v1 state: checks the row
/// is nonzero, evaluates the explicit bound, and verifies the actual b
/// dominates it. Errors when the state does not respect the declared
/// bounds. Keep-out zones only; the bound derivation assumes the safe
/// side is the outside.
pub fn certify_1v1(
    zone: &ProtectedZone,
    state: &WorldState,
    params: &FlockParams,
    gains: &BarrierGains,
    bounds: &CertificateBounds,
) -> Result<CertifyReport> {
    if state.sheep_count() != 1 || state.dog_count() != 1 {
        return Err(Error::InvalidConfig(format!(
            "certificate applies to 1 sheep / 1 dog, got {} / {}",
            state.sheep_count(),
            state.dog_count()
        )));
    }
    if zone.mode != ZoneMode::KeepOut {
        return Err(Error::InvalidConfig(
            "certificate covers keep-out zones only".into(),
        ));
    }

    let sheep = state.sheep[0];
    let goal_dist = (sheep - params.goal).norm();
    let zone_dist = (sheep - zone.center).norm();
    let dog_dist = (sheep - state.dogs[0]).norm();
    if goal_dist > bounds.m1 {
        return Err(Error::BoundsViolated {
            bound: "m1 (goal distance)",
            actual: goal_dist,
            limit: bounds.m1,
        });
    }
    if zone_dist > bounds.m2 {
        return Err(Error::BoundsViolated {
            bound: "m2 (zone distance)",
            actual: zone_dist,
            limit: bounds.m2,
        });
    }
    if dog_dist < bounds.m3 {
        return Err(Error::BoundsViolated {
            bound: "m3 (dog separation)",
            actual: dog_dist,
            limit: bounds.m3,
        });
    }

    let row = herding_row(zone, state, params, gains, 0, 0)?;
    let jd = sheep_jacobian_dog(state, params, 0, 0)?;
    let js = sheep_jacobian_sheep(state, params, 0, 0)?;
    let b_bound = b_lower_bound(params, gains, bounds);
    let lambda_m = lambda_max_bound(params, bounds.m3);

    let mut warnings = Vec::new();
    if bounds.m3 < 1.0 {
        warnings.push(format!(
            "m3 = {} is below 1 m; lambda_M may not dominate the self-Jacobian there",
            bounds.m3
        ));
    }

    let a_norm = row.a.norm();
    let verdict = a_norm > 0.0 && row.b >= b_bound;

    Ok(CertifyReport {
        a_norm,
        jd_determinant: jd.determinant(),
        b_actual: row.b,
        b_bound,
        sigma_f: js.norm(),
        lambda_m,
        warnings,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flock::Vec2;
    use approx::assert_relative_eq;

    fn params() -> FlockParams {
        FlockParams {
            k_s: 0.3,
            k_g: 1.0,
            k_d: 0.08,
            r_s: 0.5,
            goal: Vec2::ZERO,
        }
    }

    #[test]
    fn lambda_bound_closed_form() {
        // 2*1 + 5*0.0064 + 2*1*0.08 = 2.192
        let lm = lambda_max_bound(&params(), 1.0);
        assert_relative_eq!(lm, 2.192f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(lm, 1.48054, epsilon = 1e-5);
    }

    #[test]
    fn lambda_bound_without_repulsion() {
        let mut p = params();
        p.k_d = 0.0;
        for m3 in [0.5, 1.0, 10.0] {
            assert_relative_eq!(
                lambda_max_bound(&p, m3),
                2.0f64.sqrt() * p.k_g,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn lambda_bound_decreases_to_goal_term() {
        let p = params();
        let limit = 2.0f64.sqrt() * p.k_g;
        let mut prev = lambda_max_bound(&p, 1.0);
        for m3 in [2.0, 5.0, 20.0, 100.0] {
            let cur = lambda_max_bound(&p, m3);
            assert!(cur < prev);
            prev = cur;
        }
        assert_relative_eq!(lambda_max_bound(&p, 1e6), limit, epsilon = 1e-9);
    }

    #[test]
    fn b_bound_closed_form() {
        let gains = BarrierGains::new(1.0, 1.0, 1.0).unwrap(); // alpha = 2
        let bounds = CertificateBounds::new(2.0, 3.0, 1.0).unwrap();
        let b = b_lower_bound(&params(), &gains, &bounds);
        let expected = -(2.192f64.sqrt() + 2.0) * (6.0 + 0.24);
        assert_relative_eq!(b, expected, epsilon = 1e-12);
        assert_relative_eq!(b, -21.72, epsilon = 1e-2);
    }

    #[test]
    fn b_bound_zero_for_stationary_field() {
        let mut p = params();
        p.k_g = 0.0;
        p.k_d = 0.0;
        let gains = BarrierGains::new(1.0, 1.0, 1.0).unwrap();
        let bounds = CertificateBounds::new(2.0, 3.0, 1.0).unwrap();
        assert_eq!(b_lower_bound(&p, &gains, &bounds), 0.0);
    }

    #[test]
    fn b_bound_linear_in_m2() {
        let gains = BarrierGains::new(1.0, 2.0, 1.0).unwrap();
        let b1 = b_lower_bound(&params(), &gains, &CertificateBounds::new(2.0, 3.0, 1.0).unwrap());
        let b2 = b_lower_bound(&params(), &gains, &CertificateBounds::new(2.0, 6.0, 1.0).unwrap());
        assert_relative_eq!(b2, 2.0 * b1, epsilon = 1e-12);
    }

    #[test]
    fn sheep_at_goal_certifies() {
        // Stationary sheep (no repulsion, at goal): b = beta*h/2 >= 0.
        let mut p = params();
        p.k_d = 0.0;
        p.goal = Vec2::new(3.0, 0.0);
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);
        let state = WorldState::new(
            vec![Vec2::new(3.0, 0.0)],
            vec![Vec2::new(5.0, 0.0)],
            0.0,
        )
        .unwrap();
        let gains = BarrierGains::new(1.0, 1.0, 1.0).unwrap();
        let bounds = CertificateBounds::new(1.0, 4.0, 1.0).unwrap();
        let report = certify_1v1(&zone, &state, &p, &gains, &bounds).unwrap();
        let h = 8.0; // 9 - 1
        assert_relative_eq!(report.b_actual, gains.beta() * h / 2.0, epsilon = 1e-12);
        assert!(report.b_actual >= 0.0);
        assert!(report.verdict);
    }

    #[test]
    fn bounds_violations_are_rejected() {
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);
        let state = WorldState::new(
            vec![Vec2::new(3.0, 0.0)],
            vec![Vec2::new(3.5, 0.0)],
            0.0,
        )
        .unwrap();
        let gains = BarrierGains::new(1.0, 1.0, 1.0).unwrap();
        // dog closer than m3
        let bounds = CertificateBounds::new(10.0, 10.0, 1.0).unwrap();
        let err = certify_1v1(&zone, &state, &params(), &gains, &bounds).unwrap_err();
        assert!(matches!(err, Error::BoundsViolated { .. }));
    }

    #[test]
    fn non_1v1_states_are_rejected() {
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);
        let state = WorldState::new(
            vec![Vec2::new(3.0, 0.0), Vec2::new(3.2, 0.0)],
            vec![Vec2::new(5.0, 0.0)],
            0.0,
        )
        .unwrap();
        let gains = BarrierGains::new(1.0, 1.0, 1.0).unwrap();
        let bounds = CertificateBounds::new(10.0, 10.0, 1.0).unwrap();
        assert!(certify_1v1(&zone, &state, &params(), &gains, &bounds).is_err());
    }
}
