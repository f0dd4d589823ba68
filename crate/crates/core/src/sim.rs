//! Closed-loop simulation: sheep follow their flocking field, dogs follow
//! the min-norm QP controller, both stepped with explicit Euler on a
//! uniform grid. Breach and collision events are edge-triggered on safety
//! indices crossing zero between grid points; infeasible QP steps fall
//! back to a slack-relaxed solve and are logged, never fatal.

use std::time::Duration;

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{
    build_constraints, h_derivatives, h_value, BarrierGains, GainCheck, ProtectedZone,
};
use crate::error::{Error, Result};
use crate::flock::{sheep_velocity, FlockParams, Vec2, WorldState};
use crate::monte_carlo::{sample_initial, SamplerSpec};
use crate::qp::{solve_relaxed, QpProblem, QpSolution, QpStatus, DEFAULT_RELAX_PENALTY};

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_HORIZON: f64 = 30.0;
pub const DEFAULT_UNICYCLE_OFFSET: f64 = 0.05;

/// How agent velocity commands turn into motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentModel {
    /// Commands are velocities, integrated directly.
    Integrator,
    /// Nonholonomic unicycle; planar commands are mapped to (v, omega)
    /// through the offset point at distance `d` ahead of the axle.
    Unicycle {
        #[serde(default = "default_unicycle_d")]
        d: f64,
    },
}

fn default_unicycle_d() -> f64 {
    DEFAULT_UNICYCLE_OFFSET
}

impl Default for AgentModel {
    fn default() -> Self {
        AgentModel::Integrator
    }
}

/// Explicit initial placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitAgents {
    pub sheep: Vec<Vec2>,
    pub dogs: Vec<Vec2>,
}

/// Full description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub collision_constraints: bool,
    #[serde(default = "default_flock")]
    pub flock: FlockParams,
    pub zones: Vec<ProtectedZone>,
    #[serde(default = "default_gains")]
    pub gains: BarrierGains,
    #[serde(default)]
    pub agent_model: AgentModel,
    /// Explicit initial positions; mutually exclusive with `sampler`.
    #[serde(default)]
    pub agents: Option<ExplicitAgents>,
    /// Random initial positions; requires `n` and `m`.
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    /// Declared geometry bounds for the `certify` front end.
    #[serde(default)]
    pub certificate: Option<crate::certificate::CertificateBounds>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_horizon() -> f64 {
    DEFAULT_HORIZON
}

pub(crate) fn default_flock() -> FlockParams {
    FlockParams {
        k_s: 0.3,
        k_g: 1.0,
        k_d: 0.08,
        r_s: 0.5,
        goal: Vec2::ZERO,
    }
}

fn default_gains() -> BarrierGains {
    BarrierGains {
        p1: 1.0,
        p2: 1.0,
        gamma: 1.0,
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon must be nonnegative, got {}",
                self.horizon
            )));
        }
        if self.zones.is_empty() {
            return Err(Error::InvalidConfig("zones must not be empty".into()));
        }
        for z in &self.zones {
            z.validate()?;
        }
        self.flock.validate()?;
        self.gains.validate()?;
        if let AgentModel::Unicycle { d } = self.agent_model {
            if !(d > 0.0) {
                return Err(Error::DegenerateOffset(d));
            }
        }
        match (&self.agents, &self.sampler) {
            (Some(agents), None) => {
                if agents.sheep.is_empty() {
                    return Err(Error::InvalidConfig(
                        "agents.sheep must not be empty".into(),
                    ));
                }
                if let Some(n) = self.n {
                    if n != agents.sheep.len() {
                        return Err(Error::InvalidConfig(format!(
                            "n = {n} disagrees with {} explicit sheep",
                            agents.sheep.len()
                        )));
                    }
                }
                if let Some(m) = self.m {
                    if m != agents.dogs.len() {
                        return Err(Error::InvalidConfig(format!(
                            "m = {m} disagrees with {} explicit dogs",
                            agents.dogs.len()
                        )));
                    }
                }
            }
            (None, Some(sampler)) => {
                sampler.validate(&self.zones)?;
                if self.n.is_none() || self.m.is_none() {
                    return Err(Error::InvalidConfig(
                        "sampled scenarios require n and m".into(),
                    ));
                }
                if self.n == Some(0) {
                    return Err(Error::InvalidConfig("n must be at least 1".into()));
                }
            }
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "agents and sampler are mutually exclusive".into(),
                ));
            }
            (None, None) => {
                return Err(Error::InvalidConfig(
                    "either agents or sampler must be given".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> (usize, usize) {
        match &self.agents {
            Some(a) => (a.sheep.len(), a.dogs.len()),
            None => (self.n.unwrap_or(0), self.m.unwrap_or(0)),
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// What happened during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Breach { sheep: usize, zone: usize },
    Collision { sheep: usize, dog: usize },
    QpInfeasible { max_violation: f64 },
    GainConditionViolated { sheep: usize, zone: usize },
    /// Unrecoverable numeric failure; the run stops here.
    Terminal { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub step: usize,
    pub time: f64,
    pub kind: EventKind,
}

/// Time-indexed record of a run on the uniform grid. `h_values[k]` holds
/// one safety index per (zone, sheep) pair, zone-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub times: Vec<f64>,
    pub states: Vec<WorldState>,
    pub commands: Vec<Vec<f64>>,
    pub h_values: Vec<Vec<f64>>,
    pub events: Vec<SimEvent>,
    pub zone_count: usize,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn min_h(&self) -> f64 {
        self.h_values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Success verdict and event tallies for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub success: bool,
    pub min_h: f64,
    pub breaches: usize,
    pub collisions: usize,
    pub relaxations: usize,
    pub gain_violations: usize,
    pub terminals: usize,
    /// True when every control step solved to optimality without any
    /// relaxed fallback.
    pub optimal_throughout: bool,
    pub wall_time: Duration,
}

impl std::fmt::Display for SimOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "success          : {}", self.success)?;
        writeln!(f, "min h            : {:.6}", self.min_h)?;
        writeln!(f, "breaches         : {}", self.breaches)?;
        writeln!(f, "collisions       : {}", self.collisions)?;
        writeln!(f, "qp relaxations   : {}", self.relaxations)?;
        writeln!(f, "gain violations  : {}", self.gain_violations)?;
        writeln!(f, "terminal events  : {}", self.terminals)?;
        write!(f, "wall time        : {:.3} s", self.wall_time.as_secs_f64())
    }
}

/// Map a planar velocity command to unicycle inputs through the offset
/// point at distance `d` along the heading: (v, omega) = M^-1 u with
/// M = R(theta) diag(1, d).
pub fn unicycle_map(u_cmd: Vec2, theta: f64, d: f64) -> Result<(f64, f64)> {
    if !(d > 0.0) {
        return Err(Error::DegenerateOffset(d));
    }
    let (s, c) = theta.sin_cos();
    let v = c * u_cmd.x + s * u_cmd.y;
    let omega = (-s * u_cmd.x + c * u_cmd.y) / d;
    Ok((v, omega))
}

/// Forward image of [`unicycle_map`]: u = M (v, omega).
pub fn unicycle_unmap(v: f64, omega: f64, theta: f64, d: f64) -> Vec2 {
    let (s, c) = theta.sin_cos();
    Vec2::new(c * v - s * d * omega, s * v + c * d * omega)
}

/// Explicit Euler on the unicycle kinematics
/// (x' = v cos theta, y' = v sin theta, theta' = omega).
pub fn unicycle_step(pose: (f64, f64, f64), v: f64, omega: f64, dt: f64) -> (f64, f64, f64) {
    let (x, y, theta) = pose;
    (
        x + v * theta.cos() * dt,
        y + v * theta.sin() * dt,
        theta + omega * dt,
    )
}

/// Offset point at distance `d` ahead of a pose; the point the planar
/// commands steer.
pub fn offset_point(pose: (f64, f64, f64), d: f64) -> Vec2 {
    Vec2::new(pose.0 + d * pose.2.cos(), pose.1 + d * pose.2.sin())
}

/// Positions plus, in unicycle mode, per-agent headings. `world` always
/// holds the steered points (the offset points in unicycle mode), which
/// is what the flock dynamics and the controller see.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub world: WorldState,
    pub sheep_heading: Vec<f64>,
    pub dog_heading: Vec<f64>,
}

impl SimState {
    fn integrator(world: WorldState) -> Self {
        SimState {
            world,
            sheep_heading: Vec::new(),
            dog_heading: Vec::new(),
        }
    }

    fn unicycle(world: WorldState) -> Self {
        let n = world.sheep.len();
        let m = world.dogs.len();
        SimState {
            world,
            sheep_heading: vec![0.0; n],
            dog_heading: vec![0.0; m],
        }
    }
}

/// Output of one control-and-integrate step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub next: SimState,
    pub commands: DVector<f64>,
    pub qp: QpSolution,
    /// Safety indices at the *current* state, zone-major.
    pub h_values: Vec<f64>,
    pub events: Vec<SimEvent>,
}

/// Tracks previous-step quantities for edge-triggered event detection.
#[derive(Debug, Clone, Default)]
pub struct EventTracker {
    prev_h: Option<Vec<f64>>,
    prev_coll: Option<Vec<f64>>,
    prev_gain_ok: Option<Vec<bool>>,
}

pub struct Simulator {
    pub config: ScenarioConfig,
}

impl Simulator {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        Ok(Simulator { config })
    }

    /// Resolve the initial state, sampling when the config asks for it.
    pub fn initial_state(&self) -> Result<SimState> {
        let world = match (&self.config.agents, &self.config.sampler) {
            (Some(agents), _) => WorldState::new(agents.sheep.clone(), agents.dogs.clone(), 0.0)?,
            (None, Some(sampler)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                sample_initial(
                    sampler,
                    &self.config.zones,
                    &self.config.flock,
                    self.config.n.unwrap(),
                    self.config.m.unwrap(),
                    &mut rng,
                )?
            }
            (None, None) => unreachable!("validated config has agents or sampler"),
        };
        Ok(match self.config.agent_model {
            AgentModel::Integrator => SimState::integrator(world),
            AgentModel::Unicycle { .. } => SimState::unicycle(world),
        })
    }

    fn h_matrix(&self, world: &WorldState) -> Vec<f64> {
        let n = world.sheep_count();
        let mut h = Vec::with_capacity(self.config.zones.len() * n);
        for zone in &self.config.zones {
            for i in 0..n {
                h.push(h_value(zone, world.sheep[i]));
            }
        }
        h
    }

    fn collision_matrix(&self, world: &WorldState) -> Vec<f64> {
        let n = world.sheep_count();
        let m = world.dog_count();
        let mut vals = Vec::with_capacity(n * m);
        for i in 0..n {
            for k in 0..m {
                vals.push(crate::barrier::collision_index(
                    world,
                    &self.config.flock,
                    i,
                    k,
                ));
            }
        }
        vals
    }

    fn gain_ok_matrix(&self, world: &WorldState) -> Result<Vec<bool>> {
        let gains = &self.config.gains;
        let u_zero = DVector::zeros(2 * world.dog_count());
        let mut ok = Vec::with_capacity(self.config.zones.len() * world.sheep_count());
        for zone in &self.config.zones {
            for i in 0..world.sheep_count() {
                let d = h_derivatives(zone, world, &self.config.flock, i)?;
                let check = crate::barrier::gain_check_values(gains, d.h, d.h_dot, d.hdd(&u_zero));
                ok.push(!matches!(check, GainCheck::Fail { .. }));
            }
        }
        Ok(ok)
    }

    /// Advance one grid step: detect events at the current state, solve
    /// the QP (with relaxed fallback), integrate sheep and dogs.
    pub fn step(
        &self,
        state: &SimState,
        step_index: usize,
        tracker: &mut EventTracker,
    ) -> Result<StepOutput> {
        let world = &state.world;
        let time = world.time;
        let n = world.sheep_count();
        let m = world.dog_count();
        let mut events = Vec::new();

        // barrier indices and breach edges
        let h = self.h_matrix(world);
        for (idx, &hv) in h.iter().enumerate() {
            let prev = tracker.prev_h.as_ref().map(|p| p[idx]);
            let entered = match prev {
                None => hv < 0.0,
                Some(p) => p >= 0.0 && hv < 0.0,
            };
            if entered {
                events.push(SimEvent {
                    step: step_index,
                    time,
                    kind: EventKind::Breach {
                        sheep: idx % n,
                        zone: idx / n,
                    },
                });
            }
        }
        tracker.prev_h = Some(h.clone());

        // collision indices, only tracked when the constraints are active
        if self.config.collision_constraints && m > 0 {
            let coll = self.collision_matrix(world);
            for (idx, &bv) in coll.iter().enumerate() {
                let prev = tracker.prev_coll.as_ref().map(|p| p[idx]);
                let entered = match prev {
                    None => bv < 0.0,
                    Some(p) => p >= 0.0 && bv < 0.0,
                };
                if entered {
                    events.push(SimEvent {
                        step: step_index,
                        time,
                        kind: EventKind::Collision {
                            sheep: idx / m,
                            dog: idx % m,
                        },
                    });
                }
            }
            tracker.prev_coll = Some(coll);
        }

        // gain-condition monitoring, edge-triggered per pair
        let gain_ok = self.gain_ok_matrix(world)?;
        for (idx, &ok) in gain_ok.iter().enumerate() {
            let was_ok = tracker
                .prev_gain_ok
                .as_ref()
                .map(|p| p[idx])
                .unwrap_or(true);
            if was_ok && !ok {
                events.push(SimEvent {
                    step: step_index,
                    time,
                    kind: EventKind::GainConditionViolated {
                        sheep: idx % n,
                        zone: idx / n,
                    },
                });
            }
        }
        tracker.prev_gain_ok = Some(gain_ok);

        // controller
        let constraints = build_constraints(
            &self.config.zones,
            world,
            &self.config.flock,
            &self.config.gains,
            self.config.collision_constraints,
        )?;
        let problem = QpProblem::new(constraints);
        let mut qp = crate::qp::solve_min_norm(&problem);
        if qp.status == QpStatus::Infeasible {
            qp = solve_relaxed(&problem, DEFAULT_RELAX_PENALTY);
            qp.ill_conditioned = false;
            events.push(SimEvent {
                step: step_index,
                time,
                kind: EventKind::QpInfeasible {
                    max_violation: qp.max_violation.unwrap_or(0.0),
                },
            });
        } else if qp.ill_conditioned {
            events.push(SimEvent {
                step: step_index,
                time,
                kind: EventKind::QpInfeasible {
                    max_violation: qp.max_violation.unwrap_or(0.0),
                },
            });
        }
        let commands = qp.u.clone();

        // integrate
        let dt = self.config.dt;
        let mut next = state.clone();
        match self.config.agent_model {
            AgentModel::Integrator => {
                for i in 0..n {
                    let f = sheep_velocity(world, &self.config.flock, i)?;
                    next.world.sheep[i] = world.sheep[i] + f * dt;
                }
                for k in 0..m {
                    let u = Vec2::new(commands[2 * k], commands[2 * k + 1]);
                    next.world.dogs[k] = world.dogs[k] + u * dt;
                }
            }
            AgentModel::Unicycle { d } => {
                for i in 0..n {
                    let f = sheep_velocity(world, &self.config.flock, i)?;
                    let theta = state.sheep_heading[i];
                    let pose = pose_from_point(world.sheep[i], theta, d);
                    let (v, omega) = unicycle_map(f, theta, d)?;
                    let new_pose = unicycle_step(pose, v, omega, dt);
                    next.world.sheep[i] = offset_point(new_pose, d);
                    next.sheep_heading[i] = new_pose.2;
                }
                for k in 0..m {
                    let u = Vec2::new(commands[2 * k], commands[2 * k + 1]);
                    let theta = state.dog_heading[k];
                    let pose = pose_from_point(world.dogs[k], theta, d);
                    let (v, omega) = unicycle_map(u, theta, d)?;
                    let new_pose = unicycle_step(pose, v, omega, dt);
                    next.world.dogs[k] = offset_point(new_pose, d);
                    next.dog_heading[k] = new_pose.2;
                }
            }
        }
        next.world.time = time + dt;
        next.world.validate().map_err(|_| Error::InvalidConfig(
            "integration produced a non-finite state".into(),
        ))?;

        Ok(StepOutput {
            next,
            commands,
            qp,
            h_values: h,
            events,
        })
    }

    /// Run the scenario to its horizon: `steps + 1` uniform records, the
    /// command at the final record computed but not applied. Deterministic
    /// for a fixed config and seed.
    pub fn run(&self) -> Result<(TrajectoryLog, SimOutcome)> {
        let start = std::time::Instant::now();
        let steps = self.config.steps();
        let mut log = TrajectoryLog {
            zone_count: self.config.zones.len(),
            ..TrajectoryLog::default()
        };

        let mut optimal_throughout = true;
        if steps > 0 || self.config.horizon > 0.0 {
            let mut state = self.initial_state()?;
            let mut tracker = EventTracker::default();
            for k in 0..=steps {
                match self.step(&state, k, &mut tracker) {
                    Ok(out) => {
                        if out.qp.status != QpStatus::Optimal || out.qp.ill_conditioned {
                            optimal_throughout = false;
                        }
                        log.times.push(state.world.time);
                        log.states.push(state.world.clone());
                        log.commands.push(out.commands.iter().cloned().collect());
                        log.h_values.push(out.h_values.clone());
                        log.events.extend(out.events.iter().cloned());
                        if k < steps {
                            state = out.next;
                        }
                    }
                    Err(err) => {
                        // singular separations and numeric failures end the
                        // run; everything recorded so far stands
                        log.events.push(SimEvent {
                            step: k,
                            time: state.world.time,
                            kind: EventKind::Terminal {
                                message: err.to_string(),
                            },
                        });
                        break;
                    }
                }
            }
        }

        let outcome = summarize(&log, optimal_throughout, start.elapsed());
        Ok((log, outcome))
    }
}

fn pose_from_point(point: Vec2, theta: f64, d: f64) -> (f64, f64, f64) {
    (point.x - d * theta.cos(), point.y - d * theta.sin(), theta)
}

fn summarize(log: &TrajectoryLog, optimal_throughout: bool, wall_time: Duration) -> SimOutcome {
    let mut breaches = 0;
    let mut collisions = 0;
    let mut relaxations = 0;
    let mut gain_violations = 0;
    let mut terminals = 0;
    for ev in &log.events {
        match ev.kind {
            EventKind::Breach { .. } => breaches += 1,
            EventKind::Collision { .. } => collisions += 1,
            EventKind::QpInfeasible { .. } => relaxations += 1,
            EventKind::GainConditionViolated { .. } => gain_violations += 1,
            EventKind::Terminal { .. } => terminals += 1,
        }
    }
    SimOutcome {
        success: breaches == 0 && collisions == 0,
        min_h: log.min_h(),
        breaches,
        collisions,
        relaxations,
        gain_violations,
        terminals,
        optimal_throughout,
        wall_time,
    }
}
