//! Time stepping for u_t = eps^2 u_xx - W_u(u) on the periodic grid.
//!
//! Second-order IMEX step with a = dt eps^2 / 2:
//!   (I - a D^2) u_half = u - dt/2 W_u(u)
//!   (I - a D^2) u_new  = (I + a D^2) u - dt W_u(u_half)
//! Discrete stationary solutions are fixed points of the map. A step that
//! raises the discrete energy by more than the slack is rejected and dt halved.

use serde::Serialize;

use crate::chain::{ChainModel, LayerConfig};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::linalg::{BlockTridiag, BlockTridiagLu};
use crate::potential::Potential;
use crate::tracking::{self, ProjectOptions, TrackSample};

#[derive(Clone, Debug)]
pub struct PdeOptions {
    /// Overrides the default time step.
    pub dt: Option<f64>,
    /// dt <= diffusion_factor h^2 / eps^2
    pub diffusion_factor: f64,
    /// dt <= reaction_factor / max |W_uu(u0)|
    pub reaction_factor: f64,
    pub energy_slack: f64,
    pub min_dt: f64,
    /// max |u| allowed; default 2 max |a_i| + 1.
    pub box_bound: Option<f64>,
    /// Accepted steps after which a halved dt is doubled again.
    pub regrow_after: usize,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self {
            dt: None,
            diffusion_factor: 1000.0,
            reaction_factor: 0.1,
            energy_slack: 1e-12,
            min_dt: 1e-12,
            box_bound: None,
            regrow_after: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PdeState {
    pub t: f64,
    pub u: GridFunction,
    pub energy: f64,
}

impl PdeState {
    pub fn new(pot: &Potential, u: GridFunction) -> Self {
        let energy = u.energy(pot);
        Self { t: 0.0, u, energy }
    }
}

pub fn default_dt(pot: &Potential, u0: &GridFunction, opts: &PdeOptions) -> f64 {
    let diff = opts.diffusion_factor * (u0.h() / u0.eps()).powi(2);
    let radius = (0..u0.n()).map(|i| pot.hess_radius(u0.point(i))).fold(0.0, f64::max);
    let react = if radius > 0.0 { opts.reaction_factor / radius } else { f64::INFINITY };
    diff.min(react)
}

pub struct Stepper {
    pot: Potential,
    opts: PdeOptions,
    dt_max: f64,
    dt: f64,
    lu_dt: f64,
    lu: BlockTridiagLu,
    bound: f64,
    streak: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Largest E_new - E_old over accepted steps.
    pub max_energy_increase: f64,
}

fn implicit_factor(n: usize, eps: f64, dt: f64) -> Result<BlockTridiagLu> {
    let a = 0.5 * dt * eps * eps * (n * n) as f64;
    let mut op = BlockTridiag::zeros(n, 1, true);
    op.diag.iter_mut().for_each(|d| *d = 1.0 + 2.0 * a);
    op.lower.iter_mut().for_each(|d| *d = -a);
    op.upper.iter_mut().for_each(|d| *d = -a);
    op.factor()
}

impl Stepper {
    pub fn new(pot: &Potential, u0: &GridFunction, opts: &PdeOptions) -> Result<Self> {
        if u0.n() < 3 {
            return Err(Error::InvalidInput("the grid needs at least three points".into()));
        }
        if u0.m() != pot.dim() {
            return Err(Error::InvalidInput(format!("field has {} components, potential {}", u0.m(), pot.dim())));
        }
        if u0.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial data".into()));
        }
        let dt = opts.dt.unwrap_or_else(|| default_dt(pot, u0, opts));
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("time step {dt}")));
        }
        let amax = pot.minima().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = opts.box_bound.unwrap_or(2.0 * amax + 1.0);
        log::info!("pde: n = {}, dt = {dt:.4e}, box bound {bound}", u0.n());
        Ok(Self {
            pot: pot.clone(),
            opts: opts.clone(),
            dt_max: dt,
            dt,
            lu_dt: dt,
            lu: implicit_factor(u0.n(), u0.eps(), dt)?,
            bound,
            streak: 0,
            accepted: 0,
            rejected: 0,
            max_energy_increase: f64::NEG_INFINITY,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn solve(&self, rhs: &mut GridFunction) {
        let (n, m) = (rhs.n(), rhs.m());
        let mut col = vec![0.0; n];
        for c in 0..m {
            for i in 0..n {
                col[i] = rhs.values()[i * m + c];
            }
            self.lu.solve(&mut col);
            for i in 0..n {
                rhs.values_mut()[i * m + c] = col[i];
            }
        }
    }

    fn gradient(&self, u: &GridFunction) -> GridFunction {
        let m = u.m();
        let mut out = GridFunction::zeros(u.n(), m, u.eps());
        for i in 0..u.n() {
            self.pot.grad(u.point(i), &mut out.values_mut()[i * m..(i + 1) * m]);
        }
        out
    }

    fn set_dt(&mut self, dt: f64, eps: f64, n: usize) -> Result<()> {
        if dt != self.lu_dt {
            self.lu = implicit_factor(n, eps, dt)?;
            self.lu_dt = dt;
        }
        Ok(())
    }

    /// The map u -> u_new for step dt (factorisation must match dt).
    fn attempt(&self, u: &GridFunction, dt: f64) -> GridFunction {
        let a = 0.5 * dt * u.eps() * u.eps();
        let mut half = u.clone();
        half.axpy(-0.5 * dt, &self.gradient(u));
        self.solve(&mut half);
        let mut next = u.clone();
        next.axpy(a, &u.dxx());
        next.axpy(-dt, &self.gradient(&half));
        self.solve(&mut next);
        next
    }

    /// One accepted step of length at most `limit`, halving dt on rejection.
    pub fn step(&mut self, state: &mut PdeState, limit: f64) -> Result<()> {
        let (n, eps) = (state.u.n(), state.u.eps());
        loop {
            let dt = self.dt.min(limit);
            self.set_dt(dt, eps, n)?;
            let next = self.attempt(&state.u, dt);
            let finite = next.values().iter().all(|v| v.is_finite());
            let inside = finite && next.max_abs() <= self.bound;
            let energy = if inside { next.energy(&self.pot) } else { f64::INFINITY };
            if inside && energy <= state.energy + self.opts.energy_slack {
                self.max_energy_increase = self.max_energy_increase.max(energy - state.energy);
                state.u = next;
                state.energy = energy;
                state.t += dt;
                self.accepted += 1;
                self.streak += 1;
                if self.streak >= self.opts.regrow_after && self.dt < self.dt_max {
                    self.dt = (2.0 * self.dt).min(self.dt_max);
                    self.streak = 0;
                }
                return Ok(());
            }
            self.rejected += 1;
            self.streak = 0;
            self.dt = 0.5 * dt;
            log::debug!("step rejected at t = {:.6} (finite {finite}, inside {inside}), dt -> {:.3e}", state.t, self.dt);
            if self.dt < self.opts.min_dt {
                return Err(Error::Stiffness { t: state.t, dt: self.dt });
            }
        }
    }
}

pub enum Control {
    Continue,
    Stop(String),
}

/// Called at t = 0 and at every snapshot time.
pub trait Observer {
    fn observe(&mut self, state: &PdeState) -> Result<Control>;
}

/// Projects each observed state onto the layer manifold (warm-started) and
/// stops the run once a gap reaches its margin rho / mu_j or tracking fails.
pub struct LayerObserver<'a> {
    chain: &'a ChainModel,
    opts: ProjectOptions,
    rho: f64,
    prev: Option<LayerConfig>,
    pub samples: Vec<TrackSample>,
    pub failure: Option<String>,
}

impl<'a> LayerObserver<'a> {
    pub fn new(chain: &'a ChainModel, guess: Option<LayerConfig>, rho: f64, opts: ProjectOptions) -> Self {
        Self { chain, opts, rho, prev: guess, samples: Vec::new(), failure: None }
    }

    pub fn trajectory(&self) -> tracking::TrackedTrajectory {
        let mut tr = tracking::TrackedTrajectory {
            samples: self.samples.clone(),
            failure: self.failure.clone().map(|f| (self.samples.len(), f)),
        };
        tr.fill_velocities(self.opts.tol);
        tr
    }
}

impl Observer for LayerObserver<'_> {
    fn observe(&mut self, state: &PdeState) -> Result<Control> {
        let guess = self.prev.clone().map(|g| LayerConfig { rho: self.rho, ..g });
        let (p, sample) = match tracking::track_one(&state.u, self.chain, guess.as_ref(), &self.opts) {
            Ok(x) => x,
            Err(e) => {
                let msg = format!("tracker lost the layers at t = {}: {e}", state.t);
                self.failure = Some(msg.clone());
                return Ok(Control::Stop(msg));
            }
        };
        if let Some(q) = &self.prev {
            let jump = p.cfg.xi.iter().zip(&q.xi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if jump > 0.5 * q.min_gap() {
                let msg = format!("layer jump {jump:.4} at t = {} exceeds half the minimum gap", state.t);
                self.failure = Some(msg.clone());
                return Ok(Control::Stop(msg));
            }
        }
        let gaps = p.cfg.gaps();
        self.samples.push(TrackSample { t: state.t, ..sample });
        self.prev = Some(p.cfg);
        for (j, (g, mu)) in gaps.iter().zip(&self.chain.mu).enumerate() {
            if *g <= self.rho / mu {
                return Ok(Control::Stop(format!("gap {j} reached rho/mu_{j} at t = {}", state.t)));
            }
        }
        Ok(Control::Continue)
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub t_end: f64,
    pub snapshot_every: f64,
    pub keep_snapshots: bool,
    pub max_steps: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { t_end: 1.0, snapshot_every: 0.1, keep_snapshots: false, max_steps: 10_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    Completed,
    Stopped(String),
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: PdeState,
    /// (t, energy) at t = 0 and every snapshot.
    pub energies: Vec<(f64, f64)>,
    pub snapshots: Vec<(f64, GridFunction)>,
    pub steps: usize,
    pub rejected: usize,
    pub max_energy_increase: f64,
    pub dt: f64,
    pub exit: ExitReason,
}

/// Integrates to t_end, landing exactly on the snapshot times.
pub fn run(
    pot: &Potential,
    u0: GridFunction,
    opts: &PdeOptions,
    run: &RunOptions,
    observers: &mut [&mut dyn Observer],
) -> Result<RunOutput> {
    if !(run.t_end >= 0.0 && run.snapshot_every > 0.0) {
        return Err(Error::InvalidInput("t_end must be nonnegative and the snapshot interval positive".into()));
    }
    let mut stepper = Stepper::new(pot, &u0, opts)?;
    let mut state = PdeState::new(pot, u0);
    let mut energies = vec![(0.0, state.energy)];
    let mut snapshots = Vec::new();
    if run.keep_snapshots {
        snapshots.push((0.0, state.u.clone()));
    }
    let observe = |state: &PdeState, observers: &mut [&mut dyn Observer]| -> Result<Option<String>> {
        for o in observers.iter_mut() {
            if let Control::Stop(why) = o.observe(state)? {
                return Ok(Some(why));
            }
        }
        Ok(None)
    };
    let mut exit = match observe(&state, observers)? {
        Some(why) => ExitReason::Stopped(why),
        None => ExitReason::Completed,
    };
    let mut k = 1usize;
    while exit == ExitReason::Completed && state.t < run.t_end {
        let target = (k as f64 * run.snapshot_every).min(run.t_end);
        while state.t < target {
            if stepper.accepted >= run.max_steps {
                return Err(Error::Stiffness { t: state.t, dt: stepper.dt() });
            }
            let left = target - state.t;
            stepper.step(&mut state, left)?;
            // absorb rounding so the snapshot lands on target
            if (target - state.t).abs() <= 1e-12 * target.max(1.0) {
                state.t = target;
            }
        }
        k += 1;
        energies.push((state.t, state.energy));
        if run.keep_snapshots {
            snapshots.push((state.t, state.u.clone()));
        }
        if let Some(why) = observe(&state, observers)? {
            exit = ExitReason::Stopped(why);
        }
    }
    Ok(RunOutput {
        state,
        energies,
        snapshots,
        steps: stepper.accepted,
        rejected: stepper.rejected,
        max_energy_increase: stepper.max_energy_increase,
        dt: stepper.dt(),
        exit,
    })
}
