//! FitzHugh–Nagumo units under constant drive.
//!
//! Each unit follows
//!
//! ```text
//! ε·dx/dt = x − x³/3 − y
//!   dy/dt = x + a + I
//! ```
//!
//! with `x` the activator and `y` the inhibitor. The nullclines are the cubic
//! `y = x − x³/3` and the vertical line `x = −(a + I)`; the unit spikes
//! periodically when `|a + I| < 1` and rests at a stable focus otherwise.
//!
//! Integration is classical fourth-order Runge–Kutta with a fixed step. The
//! [`FhnBank`] advances many uncoupled units in lockstep, which is what the
//! hybrid network's per-step readout needs.

use crate::error::{Error, Result};

/// Any state component beyond this magnitude is treated as a diverged
/// integration. Trajectories of the system itself stay within a few units.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Default time-scale separation.
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Default control parameter. With `|γ| <= 0.75` every driven unit stays
/// oscillatory and its mean `x`, `−(a + I)`, increases with the drive's
/// pre-activation for `γ < 0`.
pub const DEFAULT_A: f64 = -0.25;
/// Default RK4 step.
pub const DEFAULT_DT: f64 = 0.01;

/// Physical constants of one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FhnParams {
    epsilon: f64,
    a: f64,
}

impl FhnParams {
    pub fn new(epsilon: f64, a: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and > 0, got {epsilon}"
            )));
        }
        if !a.is_finite() {
            return Err(Error::InvalidParameter(format!("a must be finite, got {a}")));
        }
        Ok(Self { epsilon, a })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn a(&self) -> f64 {
        self.a
    }
}

impl Default for FhnParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            a: DEFAULT_A,
        }
    }
}

/// A point `(x, y)` in the phase plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FhnState {
    pub x: f64,
    pub y: f64,
}

impl FhnState {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// The `a = 1` equilibrium `(−1, −2/3)`; every unit starts here.
    pub const fn resting() -> Self {
        Self {
            x: -1.0,
            y: -2.0 / 3.0,
        }
    }

    fn within_guard(&self) -> bool {
        self.x.abs() <= DIVERGENCE_LIMIT && self.y.abs() <= DIVERGENCE_LIMIT
    }
}

/// Step size plus the discarded and measured time windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    dt: f64,
    t_transient: f64,
    t_control: f64,
}

impl SimSettings {
    /// Validates the windows and snaps `t_control` down to a whole number of
    /// steps.
    pub fn new(dt: f64, t_transient: f64, t_control: f64) -> Result<Self> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
        }
        if !t_transient.is_finite() || t_transient < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "t_transient must be >= 0, got {t_transient}"
            )));
        }
        if !t_control.is_finite() || t_control <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "t_control must be > 0, got {t_control}"
            )));
        }
        let (steps, _) = split_duration(t_control, dt);
        if steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "t_control = {t_control} is shorter than one step dt = {dt}"
            )));
        }
        Ok(Self {
            dt,
            t_transient,
            t_control: steps as f64 * dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_transient(&self) -> f64 {
        self.t_transient
    }

    pub fn t_control(&self) -> f64 {
        self.t_control
    }

    /// Number of RK4 steps in the control window.
    pub fn control_steps(&self) -> usize {
        split_duration(self.t_control, self.dt).0
    }

    pub fn with_transient(self, t_transient: f64) -> Result<Self> {
        Self::new(self.dt, t_transient, self.t_control)
    }
}

impl Default for SimSettings {
    /// Step 0.01, transient 1000, control 100.
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            t_transient: 1000.0,
            t_control: 100.0,
        }
    }
}

/// Splits `duration` into whole steps of `dt` plus a remainder in `[0, dt)`.
/// Durations within a relative 1e-9 of a whole step count are treated as
/// exact, so `100.0 / 0.01` gives 10000 steps and no sliver step.
pub(crate) fn split_duration(duration: f64, dt: f64) -> (usize, f64) {
    let ratio = duration / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        return (nearest as usize, 0.0);
    }
    let whole = ratio.floor();
    let rest = duration - whole * dt;
    (whole as usize, rest.max(0.0))
}

/// Right-hand side of the system: `((x − x³/3 − y)/ε, x + a + I)`.
#[inline(always)]
pub fn fhn_vector_field(state: FhnState, params: &FhnParams, drive: f64) -> (f64, f64) {
    let FhnState { x, y } = state;
    ((x - x * x * x / 3.0 - y) / params.epsilon, x + params.a + drive)
}

/// The vector field as the integrator evaluates it, with the divisions
/// replaced by multiplications.
#[inline(always)]
fn field(x: f64, y: f64, inv_epsilon: f64, offset: f64) -> (f64, f64) {
    const THIRD: f64 = 1.0 / 3.0;
    ((x - x * x * x * THIRD - y) * inv_epsilon, x + offset)
}

/// Intersection of the two nullclines: `x₀ = −(a + I)`, `y₀ = x₀ − x₀³/3`.
pub fn fixed_point(params: &FhnParams, drive: f64) -> FhnState {
    let x0 = -(params.a + drive);
    FhnState {
        x: x0,
        y: x0 - x0 * x0 * x0 / 3.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Periodic spiking on a limit cycle.
    Oscillatory,
    /// Stable focus; spikes only when kicked.
    Excitable,
}

/// Oscillatory for `|a + I| < 1`, excitable otherwise (the boundary itself
/// counts as excitable).
pub fn classify_regime(params: &FhnParams, drive: f64) -> Regime {
    if (params.a + drive).abs() < 1.0 {
        Regime::Oscillatory
    } else {
        Regime::Excitable
    }
}

/// One RK4 step of length `h`. Returns the new state and whether every stage
/// point stayed within [`DIVERGENCE_LIMIT`]. NaN counts as out of range.
#[inline(always)]
fn rk4_step(x: f64, y: f64, inv_epsilon: f64, offset: f64, h: f64) -> (f64, f64, bool) {
    let half = 0.5 * h;
    let (k1x, k1y) = field(x, y, inv_epsilon, offset);
    let (x2, y2) = (x + half * k1x, y + half * k1y);
    let (k2x, k2y) = field(x2, y2, inv_epsilon, offset);
    let (x3, y3) = (x + half * k2x, y + half * k2y);
    let (k3x, k3y) = field(x3, y3, inv_epsilon, offset);
    let (x4, y4) = (x + h * k3x, y + h * k3y);
    let (k4x, k4y) = field(x4, y4, inv_epsilon, offset);
    let sixth = h / 6.0;
    let nx = x + sixth * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    let ny = y + sixth * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
    // Non-short-circuiting so the bank loop vectorizes.
    let within = |v: f64| v.abs() <= DIVERGENCE_LIMIT;
    let ok =
        within(x2) & within(y2) & within(x3) & within(y3) & within(x4) & within(y4) & within(nx) & within(ny);
    (nx, ny, ok)
}

/// Advances one unit by `duration` under constant drive. A final partial
/// step covers `duration mod dt`.
pub fn integrate(
    state: FhnState,
    params: &FhnParams,
    drive: f64,
    duration: f64,
    dt: f64,
) -> Result<FhnState> {
    integrate_sampled(state, params, drive, duration, dt, |_| {})
}

/// Like [`integrate`], calling `observer` with `x` after every step,
/// including the final partial one.
pub fn integrate_sampled(
    state: FhnState,
    params: &FhnParams,
    drive: f64,
    duration: f64,
    dt: f64,
    mut observer: impl FnMut(f64),
) -> Result<FhnState> {
    check_span(duration, dt)?;
    if !state.within_guard() {
        return Err(Error::Divergence {
            time: 0.0,
            x: state.x,
            y: state.y,
        });
    }
    let (steps, rest) = split_duration(duration, dt);
    let offset = params.a + drive;
    let (mut x, mut y) = (state.x, state.y);
    let mut advance = |h: f64, time: f64| -> Result<()> {
        let (nx, ny, ok) = rk4_step(x, y, 1.0 / params.epsilon, offset, h);
        if !ok {
            return Err(Error::Divergence { time, x: nx, y: ny });
        }
        x = nx;
        y = ny;
        observer(x);
        Ok(())
    };
    for k in 0..steps {
        advance(dt, (k + 1) as f64 * dt)?;
    }
    if rest > 0.0 {
        advance(rest, duration)?;
    }
    Ok(FhnState { x, y })
}

fn check_span(duration: f64, dt: f64) -> Result<()> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    if !duration.is_finite() || duration < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "duration must be >= 0, got {duration}"
        )));
    }
    Ok(())
}

/// Samples `(t, x, y)` every `stride` steps over `duration`, starting with
/// the initial point at `t = 0`.
pub fn sample_trajectory(
    state: FhnState,
    params: &FhnParams,
    drive: f64,
    duration: f64,
    dt: f64,
    stride: usize,
) -> Result<Vec<(f64, f64, f64)>> {
    check_span(duration, dt)?;
    let stride = stride.max(1);
    let (steps, rest) = split_duration(duration, dt);
    let mut out = vec![(0.0, state.x, state.y)];
    let mut current = state;
    for k in 0..steps {
        current = integrate(current, params, drive, dt, dt)?;
        if (k + 1) % stride == 0 {
            out.push(((k + 1) as f64 * dt, current.x, current.y));
        }
    }
    if rest > 0.0 {
        current = integrate(current, params, drive, rest, rest)?;
        out.push((duration, current.x, current.y));
    }
    Ok(out)
}

/// Peak-to-peak swing of `x` over `t_measure` after discarding `t_settle`.
pub fn oscillation_amplitude(
    state: FhnState,
    params: &FhnParams,
    drive: f64,
    t_settle: f64,
    t_measure: f64,
    dt: f64,
) -> Result<f64> {
    let settled = integrate(state, params, drive, t_settle, dt)?;
    let (mut lo, mut hi) = (settled.x, settled.x);
    integrate_sampled(settled, params, drive, t_measure, dt, |x| {
        lo = lo.min(x);
        hi = hi.max(x);
    })?;
    Ok(hi - lo)
}

/// Activator nullcline samples plus the abscissa of the vertical inhibitor
/// nullcline.
#[derive(Debug, Clone, PartialEq)]
pub struct NullclineTable {
    /// `(x, x − x³/3)` pairs, uniformly spaced in `x`.
    pub activator: Vec<(f64, f64)>,
    /// `−(a + I)`.
    pub inhibitor_x: f64,
}

pub fn nullcline_data(
    params: &FhnParams,
    drive: f64,
    x_range: (f64, f64),
    n_points: usize,
) -> Result<NullclineTable> {
    if n_points < 2 {
        return Err(Error::InvalidParameter(format!(
            "nullcline needs at least 2 points, got {n_points}"
        )));
    }
    let (lo, hi) = x_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "x_range must be finite with lo < hi, got ({lo}, {hi})"
        )));
    }
    let span = hi - lo;
    let last = (n_points - 1) as f64;
    let activator = (0..n_points)
        .map(|k| {
            let x = if k == n_points - 1 {
                hi
            } else {
                lo + span * k as f64 / last
            };
            (x, x - x * x * x / 3.0)
        })
        .collect();
    Ok(NullclineTable {
        activator,
        inhibitor_x: -(params.a + drive),
    })
}

/// Many uncoupled units, each with its own constant drive, advanced in
/// lockstep. State is kept as separate `x` and `y` arrays so the step loop
/// vectorizes.
#[derive(Debug, Clone)]
pub struct FhnBank {
    params: FhnParams,
    offset: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    time: f64,
}

impl FhnBank {
    /// One unit per entry of `drives`, all starting at `initial`.
    pub fn new(params: FhnParams, drives: &[f64], initial: FhnState) -> Self {
        let n = drives.len();
        Self {
            params,
            offset: drives.iter().map(|d| params.a + d).collect(),
            x: vec![initial.x; n],
            y: vec![initial.y; n],
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// One RK4 step of length `h` for every unit. The guard is checked on the
    /// stage points of every unit.
    pub fn step(&mut self, h: f64) -> Result<()> {
        let inv_epsilon = 1.0 / self.params.epsilon;
        let mut all_ok = true;
        for ((x, y), &offset) in self.x.iter_mut().zip(self.y.iter_mut()).zip(&self.offset) {
            let (nx, ny, ok) = rk4_step(*x, *y, inv_epsilon, offset, h);
            *x = nx;
            *y = ny;
            all_ok &= ok;
        }
        self.time += h;
        if !all_ok {
            let (x, y) = self
                .x
                .iter()
                .zip(&self.y)
                .map(|(&x, &y)| (x, y))
                .find(|&(x, y)| !(x.abs() <= DIVERGENCE_LIMIT && y.abs() <= DIVERGENCE_LIMIT))
                .unwrap_or((f64::NAN, f64::NAN));
            return Err(Error::Divergence {
                time: self.time,
                x,
                y,
            });
        }
        Ok(())
    }

    /// Advances every unit by `duration`, with a final partial step for the
    /// remainder.
    pub fn advance(&mut self, duration: f64, dt: f64) -> Result<()> {
        check_span(duration, dt)?;
        let (steps, rest) = split_duration(duration, dt);
        for _ in 0..steps {
            self.step(dt)?;
        }
        if rest > 0.0 {
            self.step(rest)?;
        }
        Ok(())
    }
}
