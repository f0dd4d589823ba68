//! Linear constraints on stacked dog velocities.
//!
//! Zone defense for one sheep is a second-order barrier condition
//! hdd + alpha*hd + beta*h >= 0 on the squared-distance safety index of a
//! circular zone; the dog input enters only through hdd, which makes the
//! condition a single linear row a * u_D <= b on the stacked dog
//! velocities. Sheep-dog collision avoidance contributes one first-order
//! row per (sheep, dog) pair. Rows are stored divided by two so that b
//! matches the beta*h/2 normalization used elsewhere in the artifact.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flock::{
    sheep_jacobian_dog, sheep_jacobian_sheep, sheep_velocity, FlockParams, Vec2, WorldState,
};

/// Circular protected zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtectedZone {
    pub center: Vec2,
    pub radius: f64,
    pub mode: ZoneMode,
}

/// Whether sheep must stay out of the disc or inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneMode {
    KeepOut,
    KeepIn,
}

impl ProtectedZone {
    pub fn keep_out(center: Vec2, radius: f64) -> Self {
        ProtectedZone {
            center,
            radius,
            mode: ZoneMode::KeepOut,
        }
    }

    pub fn keep_in(center: Vec2, radius: f64) -> Self {
        ProtectedZone {
            center,
            radius,
            mode: ZoneMode::KeepIn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::InvalidConfig("zone radius must be positive".into()));
        }
        if !self.center.is_finite() {
            return Err(Error::InvalidConfig("zone center must be finite".into()));
        }
        Ok(())
    }

    /// +1 for keep-out, -1 for keep-in; the safety index and all its
    /// derivatives flip sign together.
    fn sign(&self) -> f64 {
        match self.mode {
            ZoneMode::KeepOut => 1.0,
            ZoneMode::KeepIn => -1.0,
        }
    }
}

/// Pole parameters of the cascaded barrier plus the collision decay rate.
/// alpha and beta are always derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierGains {
    pub p1: f64,
    pub p2: f64,
    pub gamma: f64,
}

impl BarrierGains {
    pub fn new(p1: f64, p2: f64, gamma: f64) -> Result<Self> {
        let gains = BarrierGains { p1, p2, gamma };
        gains.validate()?;
        Ok(gains)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p1 > 0.0 && self.p2 > 0.0 && self.gamma > 0.0) {
            return Err(Error::InvalidConfig(
                "barrier gains p1, p2, gamma must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.p1 + self.p2
    }

    pub fn beta(&self) -> f64 {
        self.p1 * self.p2
    }
}

/// Which requirement a constraint row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowTag {
    /// Zone defense for (sheep, zone index).
    Herd { sheep: usize, zone: usize },
    /// Collision avoidance for (sheep, dog).
    Collide { sheep: usize, dog: usize },
    /// Optional per-axis speed bound on one dog.
    Bound { dog: usize },
}

/// One linear inequality a * u <= b over the stacked dog velocities
/// (u = (u_1x, u_1y, ..., u_mx, u_my)).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub a: DVector<f64>,
    pub b: f64,
    pub tag: RowTag,
}

impl ConstraintRow {
    /// Slack b - a*u; nonnegative iff the row is satisfied.
    pub fn slack(&self, u: &DVector<f64>) -> f64 {
        self.b - self.a.dot(u)
    }
}

/// Stacked rows sharing one dog count.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub rows: Vec<ConstraintRow>,
    pub dogs: usize,
}

impl ConstraintSet {
    pub fn new(dogs: usize) -> Self {
        ConstraintSet {
            rows: Vec::new(),
            dogs,
        }
    }

    pub fn dimension(&self) -> usize {
        2 * self.dogs
    }

    pub fn push(&mut self, row: ConstraintRow) {
        debug_assert_eq!(row.a.len(), self.dimension());
        self.rows.push(row);
    }

    /// Append |u_kx| <= limit and |u_ky| <= limit rows for every dog.
    /// Off by default; actuator limits are not otherwise modeled.
    pub fn add_speed_bounds(&mut self, limit: f64) {
        let dim = self.dimension();
        for dog in 0..self.dogs {
            for axis in 0..2 {
                for sign in [1.0, -1.0] {
                    let mut a = DVector::zeros(dim);
                    a[2 * dog + axis] = sign;
                    self.rows.push(ConstraintRow {
                        a,
                        b: limit,
                        tag: RowTag::Bound { dog },
                    });
                }
            }
        }
    }
}

/// Safety index of one sheep against one zone, in m^2. Nonnegative iff
/// the sheep is on the safe side.
pub fn h_value(zone: &ProtectedZone, sheep_pos: Vec2) -> f64 {
    let d2 = (sheep_pos - zone.center).norm_squared();
    zone.sign() * (d2 - zone.radius * zone.radius)
}

/// h and its first two time derivatives along the closed loop, with the
/// second derivative split into the part independent of the dog input and
/// the linear coefficients on the stacked dog velocities.
#[derive(Debug, Clone)]
pub struct BarrierDerivatives {
    pub h: f64,
    pub h_dot: f64,
    pub hdd_drift: f64,
    /// Length 2m; hdd = hdd_drift + hdd_control * u.
    pub hdd_control: DVector<f64>,
}

impl BarrierDerivatives {
    pub fn hdd(&self, u: &DVector<f64>) -> f64 {
        self.hdd_drift + self.hdd_control.dot(u)
    }

    /// hdd + alpha*hd + beta*h for a given dog input.
    pub fn barrier_expression(&self, gains: &BarrierGains, u: &DVector<f64>) -> f64 {
        self.hdd(u) + gains.alpha() * self.h_dot + gains.beta() * self.h
    }
}

/// Differentiate the safety index along the flow:
///
///   hd  = 2 (x_s - x_p)^T f_i
///   hdd = 2 f_i^T f_i + 2 (x_s - x_p)^T ( sum_j J^S_ji f_j + sum_k J^D_ki u_k )
///
/// with everything negated for keep-in zones. The chain rule pairs each
/// J^S_ji with f_j, the velocity of the sheep being differentiated with
/// respect to.
pub fn h_derivatives(
    zone: &ProtectedZone,
    state: &WorldState,
    params: &FlockParams,
    i: usize,
) -> Result<BarrierDerivatives> {
    let n = state.sheep_count();
    let m = state.dog_count();
    let r = state.sheep[i] - zone.center;
    let f_i = sheep_velocity(state, params, i)?;
    let sign = zone.sign();

    let mut coupling = Vec2::ZERO; // sum_j J^S_ji f_j
    for j in 0..n {
        let jac = sheep_jacobian_sheep(state, params, j, i)?;
        let f_j = sheep_velocity(state, params, j)?;
        coupling = coupling + Vec2::from_na(jac * f_j.as_na());
    }

    let mut control = DVector::zeros(2 * m);
    for k in 0..m {
        let jac = sheep_jacobian_dog(state, params, k, i)?;
        // row vector 2 r^T J^D_ki
        let row = jac.transpose() * r.as_na() * 2.0 * sign;
        control[2 * k] = row.x;
        control[2 * k + 1] = row.y;
    }

    Ok(BarrierDerivatives {
        h: h_value(zone, state.sheep[i]),
        h_dot: sign * 2.0 * r.dot(f_i),
        hdd_drift: sign * (2.0 * f_i.dot(f_i) + 2.0 * r.dot(coupling)),
        hdd_control: control,
    })
}

/// Zone-defense row for sheep `i`: a * u <= b is exactly
/// (hdd + alpha*hd + beta*h)/2 >= 0. Assembled directly from the Jacobian
/// blocks rather than through [`h_derivatives`] so the two routes check
/// each other.
pub fn herding_row(
    zone: &ProtectedZone,
    state: &WorldState,
    params: &FlockParams,
    gains: &BarrierGains,
    i: usize,
    zone_index: usize,
) -> Result<ConstraintRow> {
    gains.validate()?;
    let m = state.dog_count();
    let sign = zone.sign();
    // keep-out uses (x_p - x_s) in a and (x_s - x_p) in b; keep-in swaps
    // both and flips the f^T f term, which is the full negation of the row.
    let r = (state.sheep[i] - zone.center) * sign;
    let f_i = sheep_velocity(state, params, i)?;

    let mut coupling = Vec2::ZERO;
    for j in 0..state.sheep_count() {
        let jac = sheep_jacobian_sheep(state, params, j, i)?;
        let f_j = sheep_velocity(state, params, j)?;
        coupling = coupling + Vec2::from_na(jac * f_j.as_na());
    }

    let mut a = DVector::zeros(2 * m);
    for k in 0..m {
        let jac = sheep_jacobian_dog(state, params, k, i)?;
        let seg = jac.transpose() * (-r).as_na();
        a[2 * k] = seg.x;
        a[2 * k + 1] = seg.y;
    }

    let h = h_value(zone, state.sheep[i]);
    let b = sign * f_i.dot(f_i)
        + r.dot(coupling)
        + gains.alpha() * r.dot(f_i)
        + gains.beta() * h / 2.0;

    Ok(ConstraintRow {
        a,
        b,
        tag: RowTag::Herd {
            sheep: i,
            zone: zone_index,
        },
    })
}

/// Pairwise sheep-dog safety index |x_s - x_d|^2 - r_s^2.
pub fn collision_index(state: &WorldState, params: &FlockParams, i: usize, k: usize) -> f64 {
    (state.sheep[i] - state.dogs[k]).norm_squared() - params.r_s * params.r_s
}

/// Collision-avoidance rows for sheep `i`, one per dog, enforcing
/// bd^{ik} + gamma * b^{ik} >= 0 (stored divided by two).
pub fn collision_rows(
    state: &WorldState,
    params: &FlockParams,
    gains: &BarrierGains,
    i: usize,
) -> Result<Vec<ConstraintRow>> {
    gains.validate()?;
    let m = state.dog_count();
    let f_i = sheep_velocity(state, params, i)?;
    let mut rows = Vec::with_capacity(m);
    for k in 0..m {
        let e = state.sheep[i] - state.dogs[k];
        let mut a = DVector::zeros(2 * m);
        a[2 * k] = e.x;
        a[2 * k + 1] = e.y;
        let b = 0.5 * gains.gamma * collision_index(state, params, i, k) + e.dot(f_i);
        rows.push(ConstraintRow {
            a,
            b,
            tag: RowTag::Collide { sheep: i, dog: k },
        });
    }
    Ok(rows)
}

/// Stack herding rows for every (sheep, zone) pair, plus collision rows
/// for every sheep when requested: n*|zones| (+ n*m) rows total.
pub fn build_constraints(
    zones: &[ProtectedZone],
    state: &WorldState,
    params: &FlockParams,
    gains: &BarrierGains,
    include_collisions: bool,
) -> Result<ConstraintSet> {
    if zones.is_empty() {
        return Err(Error::InvalidConfig("at least one zone required".into()));
    }
    let mut set = ConstraintSet::new(state.dog_count());
    for (z, zone) in zones.iter().enumerate() {
        for i in 0..state.sheep_count() {
            set.push(herding_row(zone, state, params, gains, i, z)?);
        }
    }
    if include_collisions {
        for i in 0..state.sheep_count() {
            for row in collision_rows(state, params, gains, i)? {
                set.push(row);
            }
        }
    }
    Ok(set)
}

/// Outcome of the t = 0 gain conditions for one (sheep, zone) pair.
#[derive(Debug, Clone, PartialEq)]
pub enum GainCheck {
    Pass {
        p1_bound: f64,
        p2_bound: f64,
    },
    Fail {
        p1_bound: f64,
        p2_bound: Option<f64>,
        reason: String,
    },
    /// Start exactly on a boundary (h = 0 or v = 0); the ratio conditions
    /// are undefined there and skipped with a warning.
    Boundary {
        quantity: &'static str,
    },
}

/// Per-pair report of [`validate_gains`].
#[derive(Debug, Clone, PartialEq)]
pub struct GainPairReport {
    pub sheep: usize,
    pub zone: usize,
    pub h0: f64,
    pub hd0: f64,
    pub hdd0: f64,
    pub check: GainCheck,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GainReport {
    pub pairs: Vec<GainPairReport>,
}

impl GainReport {
    /// True when no pair failed (boundary pairs warn but do not fail).
    pub fn all_pass(&self) -> bool {
        self.pairs
            .iter()
            .all(|p| !matches!(p.check, GainCheck::Fail { .. }))
    }

    pub fn warnings(&self) -> usize {
        self.pairs
            .iter()
            .filter(|p| matches!(p.check, GainCheck::Boundary { .. }))
            .count()
    }
}

impl std::fmt::Display for GainReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.pairs {
            write!(
                f,
                "sheep {} / zone {}: h0 = {:.6}, hd0 = {:.6}, hdd0 = {:.6} -> ",
                p.sheep, p.zone, p.h0, p.hd0, p.hdd0
            )?;
            match &p.check {
                GainCheck::Pass { p1_bound, p2_bound } => writeln!(
                    f,
                    "pass (binding bounds p1 > {:.6}, p2 > {:.6})",
                    p1_bound, p2_bound
                )?,
                GainCheck::Fail {
                    p1_bound,
                    p2_bound,
                    reason,
                } => {
                    write!(f, "FAIL: {reason} (p1 bound {:.6}", p1_bound)?;
                    if let Some(b2) = p2_bound {
                        write!(f, ", p2 bound {:.6}", b2)?;
                    }
                    writeln!(f, ")")?;
                }
                GainCheck::Boundary { quantity } => {
                    writeln!(f, "warning: {quantity} = 0 at t = 0, ratio conditions skipped")?
                }
            }
        }
        Ok(())
    }
}

/// Check the design conditions on p1 and p2 at the initial state, with
/// the second derivative evaluated at u_D = 0 (no control computed yet):
///
///   p1 > 0,  p1 > -hd(0)/h(0)
///   p2 > 0,  p2 > -(hdd(0) + p1 hd(0)) / (hd(0) + p1 h(0))
pub fn validate_gains(
    gains: &BarrierGains,
    zones: &[ProtectedZone],
    state0: &WorldState,
    params: &FlockParams,
) -> Result<GainReport> {
    let mut report = GainReport::default();
    let u_zero = DVector::zeros(2 * state0.dog_count());
    for (z, zone) in zones.iter().enumerate() {
        for i in 0..state0.sheep_count() {
            let d = h_derivatives(zone, state0, params, i)?;
            let hdd0 = d.hdd(&u_zero);
            let check = gain_check_values(gains, d.h, d.h_dot, hdd0);
            report.pairs.push(GainPairReport {
                sheep: i,
                zone: z,
                h0: d.h,
                hd0: d.h_dot,
                hdd0,
                check,
            });
        }
    }
    Ok(report)
}

/// The bare condition check on one (h, hd, hdd) triple; used both by
/// [`validate_gains`] at t = 0 and by the simulator's per-step monitor.
pub fn gain_check_values(gains: &BarrierGains, h0: f64, hd0: f64, hdd0: f64) -> GainCheck {
    if gains.p1 <= 0.0 || gains.p2 <= 0.0 {
        return GainCheck::Fail {
            p1_bound: 0.0,
            p2_bound: None,
            reason: "p1 and p2 must be positive".into(),
        };
    }
    if h0 == 0.0 {
        return GainCheck::Boundary { quantity: "h" };
    }
    if h0 < 0.0 {
        return GainCheck::Fail {
            p1_bound: f64::INFINITY,
            p2_bound: None,
            reason: format!("initial state is unsafe (h0 = {h0:.6} < 0)"),
        };
    }
    let p1_bound = -hd0 / h0;
    if gains.p1 <= p1_bound {
        return GainCheck::Fail {
            p1_bound,
            p2_bound: None,
            reason: format!("p1 = {} <= {:.6}", gains.p1, p1_bound),
        };
    }
    let v0 = hd0 + gains.p1 * h0;
    if v0 == 0.0 {
        return GainCheck::Boundary { quantity: "v" };
    }
    let p2_bound = -(hdd0 + gains.p1 * hd0) / v0;
    if gains.p2 <= p2_bound {
        return GainCheck::Fail {
            p1_bound,
            p2_bound: Some(p2_bound),
            reason: format!("p2 = {} <= {:.6}", gains.p2, p2_bound),
        };
    }
    GainCheck::Pass { p1_bound, p2_bound }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flock_params() -> FlockParams {
        FlockParams {
            k_s: 0.3,
            k_g: 1.0,
            k_d: 0.08,
            r_s: 0.5,
            goal: Vec2::ZERO,
        }
    }

    #[test]
    fn h_value_boundary_and_interior() {
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);
        assert_eq!(h_value(&zone, Vec2::new(1.0, 0.0)), 0.0);
        assert_eq!(h_value(&zone, Vec2::new(2.0, 0.0)), 3.0);

        let keep_in = ProtectedZone::keep_in(Vec2::ZERO, 1.0);
        assert_eq!(h_value(&keep_in, Vec2::ZERO), 1.0);
    }

    #[test]
    fn stationary_sheep_has_zero_derivatives() {
        // Zero gains make f_i = 0 everywhere, so hd and the drift vanish.
        let params = FlockParams {
            k_s: 0.0,
            k_g: 0.0,
            k_d: 0.0,
            r_s: 0.5,
            goal: Vec2::ZERO,
        };
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);
        let state = WorldState::new(vec![Vec2::new(3.0, 0.0)], vec![Vec2::new(5.0, 1.0)], 0.0)
            .unwrap();
        let d = h_derivatives(&zone, &state, &params, 0).unwrap();
        assert_eq!(d.h_dot, 0.0);
        assert_eq!(d.hdd_drift, 0.0);
    }

    #[test]
    fn herding_row_empty_without_dogs() {
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);
        let state = WorldState::new(vec![Vec2::new(3.0, 0.0)], vec![], 0.0).unwrap();
        let gains = BarrierGains::new(1.0, 1.0, 1.0).unwrap();
        let row = herding_row(&zone, &state, &flock_params(), &gains, 0, 0).unwrap();
        assert_eq!(row.a.len(), 0);
        assert!(row.b.is_finite());
    }

    #[test]
    fn herding_row_nonzero_for_1v1() {
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);
        let state = WorldState::new(vec![Vec2::new(3.0, 0.5)], vec![Vec2::new(1.5, -0.5)], 0.0)
            .unwrap();
        let gains = BarrierGains::new(1.0, 2.0, 1.0).unwrap();
        let row = herding_row(&zone, &state, &flock_params(), &gains, 0, 0).unwrap();
        assert!(row.a.norm() > 0.0);
    }

    #[test]
    fn collision_index_hand_value() {
        let mut params = flock_params();
        params.r_s = 1.0;
        let state =
            WorldState::new(vec![Vec2::ZERO], vec![Vec2::new(2.0, 0.0)], 0.0).unwrap();
        assert_eq!(collision_index(&state, &params, 0, 0), 3.0);
    }

    #[test]
    fn collision_row_on_boundary_blocks_approach() {
        // Stationary sheep, dog exactly r_s away: the row must read
        // (x_s - x_d)^T u_k <= 0.
        let params = FlockParams {
            k_s: 0.0,
            k_g: 0.0,
            k_d: 0.0,
            r_s: 1.0,
            goal: Vec2::ZERO,
        };
        let state =
            WorldState::new(vec![Vec2::ZERO], vec![Vec2::new(1.0, 0.0)], 0.0).unwrap();
        let gains = BarrierGains::new(1.0, 1.0, 2.0).unwrap();
        let rows = collision_rows(&state, &params, &gains, 0).unwrap();
        assert_eq!(rows.len(), 1);
        assert_relative_eq!(rows[0].b, 0.0, epsilon = 1e-15);
        assert_relative_eq!(rows[0].a[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(rows[0].a[1], 0.0, epsilon = 1e-15);
        // approach (u toward the sheep along -x) violates, retreat satisfies
        let toward = DVector::from_vec(vec![-1.0, 0.0]);
        let away = DVector::from_vec(vec![1.0, 0.0]);
        assert!(rows[0].slack(&toward) < 0.0);
        assert!(rows[0].slack(&away) > 0.0);
    }

    #[test]
    fn constraint_counting() {
        let params = flock_params();
        let gains = BarrierGains::new(1.0, 1.0, 1.0).unwrap();
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);

        let state3v2 = WorldState::new(
            vec![Vec2::new(3.0, 0.0), Vec2::new(3.5, 0.5), Vec2::new(3.0, 1.0)],
            vec![Vec2::new(1.5, 0.0), Vec2::new(1.5, 1.0)],
            0.0,
        )
        .unwrap();
        let set = build_constraints(&[zone], &state3v2, &params, &gains, false).unwrap();
        assert_eq!(set.rows.len(), 3);
        assert!(set.rows.iter().all(|r| r.a.len() == 4));

        let zones = [
            ProtectedZone::keep_out(Vec2::ZERO, 1.0),
            ProtectedZone::keep_out(Vec2::new(-3.0, 0.0), 1.0),
        ];
        let state2v1 = WorldState::new(
            vec![Vec2::new(3.0, 0.0), Vec2::new(3.5, 0.5)],
            vec![Vec2::new(1.5, 0.0)],
            0.0,
        )
        .unwrap();
        let set = build_constraints(&zones, &state2v1, &params, &gains, true).unwrap();
        assert_eq!(set.rows.len(), 6); // 2 sheep x 2 zones + 2 sheep x 1 dog
    }

    #[test]
    fn tags_identify_sources() {
        let params = flock_params();
        let gains = BarrierGains::new(1.0, 1.0, 1.0).unwrap();
        let zones = [
            ProtectedZone::keep_out(Vec2::ZERO, 1.0),
            ProtectedZone::keep_out(Vec2::new(-3.0, 0.0), 1.0),
        ];
        let state = WorldState::new(
            vec![Vec2::new(3.0, 0.0), Vec2::new(3.5, 0.5)],
            vec![Vec2::new(1.5, 0.0)],
            0.0,
        )
        .unwrap();
        let set = build_constraints(&zones, &state, &params, &gains, true).unwrap();
        let mut herd = Vec::new();
        let mut collide = Vec::new();
        for row in &set.rows {
            match row.tag {
                RowTag::Herd { sheep, zone } => herd.push((sheep, zone)),
                RowTag::Collide { sheep, dog } => collide.push((sheep, dog)),
                RowTag::Bound { .. } => panic!("no bound rows expected"),
            }
        }
        herd.sort_unstable();
        collide.sort_unstable();
        assert_eq!(herd, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(collide, vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn gain_bound_direct_substitution() {
        // h0 = 3, hd0 = -1 requires p1 > 1/3. Zone radius 1, sheep at
        // (2, 0): h = 3. Goal placed so f = (-0.25, 0): hd = 4 f_x = -1.
        let params = FlockParams {
            k_s: 0.0,
            k_g: 1.0,
            k_d: 0.0,
            r_s: 0.5,
            goal: Vec2::new(1.75, 0.0),
        };
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);
        let state = WorldState::new(vec![Vec2::new(2.0, 0.0)], vec![], 0.0).unwrap();

        let tight = BarrierGains::new(1.0 / 3.0, 10.0, 1.0).unwrap();
        let report = validate_gains(&tight, &[zone], &state, &params).unwrap();
        assert!(!report.all_pass());
        match &report.pairs[0].check {
            GainCheck::Fail { p1_bound, .. } => {
                assert_relative_eq!(*p1_bound, 1.0 / 3.0, epsilon = 1e-12)
            }
            other => panic!("expected p1 failure, got {other:?}"),
        }

        let ok = BarrierGains::new(0.34, 10.0, 1.0).unwrap();
        let report = validate_gains(&ok, &[zone], &state, &params).unwrap();
        assert!(report.all_pass());
    }

    #[test]
    fn negative_p1_always_fails() {
        let gains = BarrierGains {
            p1: -0.5,
            p2: 1.0,
            gamma: 1.0,
        };
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);
        let state = WorldState::new(vec![Vec2::new(3.0, 0.0)], vec![], 0.0).unwrap();
        let report = validate_gains(&gains, &[zone], &state, &flock_params()).unwrap();
        assert!(!report.all_pass());
    }

    #[test]
    fn receding_sheep_passes_any_positive_gains() {
        // Goal on the far side of the sheep: it moves away from the zone,
        // hd > 0, and both ratio bounds are negative.
        let params = FlockParams {
            k_s: 0.0,
            k_g: 1.0,
            k_d: 0.0,
            r_s: 0.5,
            goal: Vec2::new(10.0, 0.0),
        };
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);
        let state = WorldState::new(vec![Vec2::new(3.0, 0.0)], vec![], 0.0).unwrap();
        for (p1, p2) in [(0.01, 0.01), (0.5, 2.0), (30.0, 0.001)] {
            let gains = BarrierGains::new(p1, p2, 1.0).unwrap();
            let report = validate_gains(&gains, &[zone], &state, &params).unwrap();
            assert!(report.all_pass(), "p1={p1} p2={p2} should pass");
        }
    }

    #[test]
    fn boundary_start_warns_instead_of_failing() {
        let zone = ProtectedZone::keep_out(Vec2::ZERO, 1.0);
        let state = WorldState::new(vec![Vec2::new(1.0, 0.0)], vec![], 0.0).unwrap();
        let gains = BarrierGains::new(1.0, 1.0, 1.0).unwrap();
        let report = validate_gains(&gains, &[zone], &state, &flock_params()).unwrap();
        assert!(report.all_pass());
        assert_eq!(report.warnings(), 1);
    }
}
