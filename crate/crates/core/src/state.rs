//! Hybrid queue state `(k, x, y)`, its jump maps, unit-rate drift and
//! piecewise-linear trajectories.
//!
//! `k` is the number of customers in the system, `x` the time elapsed since
//! the last arrival and `y` the elapsed service time of the customer in
//! service. With `k = 0` there is no customer in service and `y` carries no
//! information, so states are kept in canonical form with `y = 0`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A canonical point of the hybrid state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct State {
    k: u32,
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct RawState {
    k: u32,
    x: f64,
    y: f64,
}

impl TryFrom<RawState> for State {
    type Error = Error;

    fn try_from(raw: RawState) -> Result<Self> {
        State::new(raw.k, raw.x, raw.y)
    }
}

impl From<State> for RawState {
    fn from(s: State) -> Self {
        RawState { k: s.k, x: s.x, y: s.y }
    }
}

impl State {
    /// The empty system with both clocks at zero.
    pub const ZERO: State = State { k: 0, x: 0.0, y: 0.0 };

    /// Builds a state, rejecting negative or non-finite clocks. A nonzero `y`
    /// at `k = 0` is dropped (canonical form).
    pub fn new(k: u32, x: f64, y: f64) -> Result<Self> {
        if !(x.is_finite() && x >= 0.0) {
            return Err(Error::InvalidState(format!("x = {x} must be finite and >= 0")));
        }
        if !(y.is_finite() && y >= 0.0) {
            return Err(Error::InvalidState(format!("y = {y} must be finite and >= 0")));
        }
        Ok(State { k, x, y: if k == 0 { 0.0 } else { y } })
    }

    /// Empty system with elapsed inter-arrival time `x`.
    pub fn empty(x: f64) -> Result<Self> {
        State::new(0, x, 0.0)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    /// Unit-rate drift over `dt`; `y` stays frozen while the system is empty.
    pub fn drift(&self, dt: f64) -> Result<State> {
        if dt.is_nan() || dt < 0.0 {
            return Err(Error::NegativeDuration(dt));
        }
        Ok(self.drifted(dt))
    }

    /// Drift without the sign check, for callers that guarantee `dt >= 0`.
    #[inline]
    pub(crate) fn drifted(&self, dt: f64) -> State {
        debug_assert!(dt >= 0.0);
        if self.k == 0 {
            State { k: 0, x: self.x + dt, y: 0.0 }
        } else {
            State { k: self.k, x: self.x + dt, y: self.y + dt }
        }
    }

    /// Arrival: `(k+1, 0, y)`. A customer arriving to an empty system starts
    /// service immediately, so `y = 0` there by canonical form.
    pub fn jump_up(&self) -> State {
        State { k: self.k + 1, x: 0.0, y: self.y }
    }

    /// Service completion: `(k-1, x, 0)`.
    pub fn jump_down(&self) -> Result<State> {
        if self.k == 0 {
            return Err(Error::ServiceFromEmpty);
        }
        Ok(State { k: self.k - 1, x: self.x, y: 0.0 })
    }

    /// Applies the jump map of `kind`.
    pub fn jump(&self, kind: JumpType) -> Result<State> {
        match kind {
            JumpType::Arrival => Ok(self.jump_up()),
            JumpType::Service => self.jump_down(),
        }
    }

    /// `|k - k'| + |x - x'| + |y - y'|`.
    pub fn distance(&self, other: &State) -> f64 {
        (self.k as f64 - other.k as f64).abs() + (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    /// Distance to the zero state, `k + x + y`.
    pub fn norm(&self) -> f64 {
        self.k as f64 + self.x + self.y
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.k, self.x, self.y)
    }
}

/// `|k - k'| + |x - x'| + |y - y'|` between two canonical states.
pub fn state_distance(a: &State, b: &State) -> f64 {
    a.distance(b)
}

/// Direction of a jump of the customer count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JumpType {
    #[serde(rename = "A")]
    Arrival,
    #[serde(rename = "S")]
    Service,
}

impl JumpType {
    pub fn code(&self) -> char {
        match self {
            JumpType::Arrival => 'A',
            JumpType::Service => 'S',
        }
    }

    pub fn from_code(c: &str) -> Result<Self> {
        match c {
            "A" => Ok(JumpType::Arrival),
            "S" => Ok(JumpType::Service),
            other => Err(Error::Parse(format!("unknown jump kind {other:?}"))),
        }
    }
}

/// One jump of a trajectory. `pre` is the left limit at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub time: f64,
    pub kind: JumpType,
    pub pre: State,
    pub post: State,
}

/// Càdlàg path on `[0, horizon]`: an initial state, finitely many jumps and
/// unit-rate drift in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    initial: State,
    events: Vec<TrajectoryEvent>,
    horizon: f64,
}

impl Trajectory {
    /// Builds a trajectory and checks every structural invariant.
    pub fn new(initial: State, events: Vec<TrajectoryEvent>, horizon: f64) -> Result<Self> {
        let traj = Trajectory { initial, events, horizon };
        traj.validate()?;
        Ok(traj)
    }

    /// Rebuilds a trajectory from its initial state and `(time, kind)` jumps,
    /// computing left limits by drift.
    pub fn from_jumps(initial: State, jumps: &[(f64, JumpType)], horizon: f64) -> Result<Self> {
        let mut events = Vec::with_capacity(jumps.len());
        let mut last = initial;
        let mut last_time = 0.0;
        for &(time, kind) in jumps {
            if !(time > last_time) {
                return Err(Error::InvalidTrajectory(format!(
                    "jump times must be strictly increasing and positive, got {time} after {last_time}"
                )));
            }
            let pre = last.drifted(time - last_time);
            let post = pre.jump(kind)?;
            events.push(TrajectoryEvent { time, kind, pre, post });
            last = post;
            last_time = time;
        }
        Trajectory::new(initial, events, horizon)
    }

    pub(crate) fn from_parts_unchecked(initial: State, events: Vec<TrajectoryEvent>, horizon: f64) -> Self {
        let traj = Trajectory { initial, events, horizon };
        debug_assert!(traj.validate().is_ok());
        traj
    }

    pub fn initial(&self) -> State {
        self.initial
    }

    pub fn events(&self) -> &[TrajectoryEvent] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jump_count(&self) -> usize {
        self.events.len()
    }

    /// Exact structural check: ordering, range, drift consistency of left
    /// limits and jump-map consistency of post states.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTrajectory(msg));
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return bad(format!("horizon {} must be finite and >= 0", self.horizon));
        }
        let mut last = self.initial;
        let mut last_time = 0.0;
        for (i, ev) in self.events.iter().enumerate() {
            if !(ev.time > last_time) {
                return bad(format!("event {i} at {} does not follow {last_time}", ev.time));
            }
            if ev.time > self.horizon {
                return bad(format!("event {i} at {} beyond horizon {}", ev.time, self.horizon));
            }
            let expected_pre = last.drifted(ev.time - last_time);
            if ev.pre != expected_pre {
                return bad(format!("event {i}: left limit {} differs from drifted state {expected_pre}", ev.pre));
            }
            let expected_post = match ev.pre.jump(ev.kind) {
                Ok(s) => s,
                Err(e) => return bad(format!("event {i}: {e}")),
            };
            if ev.post != expected_post {
                return bad(format!("event {i}: post state {} differs from jump map {expected_post}", ev.post));
            }
            last = ev.post;
            last_time = ev.time;
        }
        Ok(())
    }

    /// Right-continuous state at `t`.
    pub fn state_at(&self, t: f64) -> Result<State> {
        self.check_time(t)?;
        Ok(self.state_at_unchecked(t))
    }

    /// Left limit `X_{t-}`; equals `state_at(0)` at `t = 0`.
    pub fn state_before(&self, t: f64) -> Result<State> {
        self.check_time(t)?;
        let idx = self.events.partition_point(|e| e.time < t);
        Ok(self.drift_from(idx, t))
    }

    #[inline]
    pub(crate) fn state_at_unchecked(&self, t: f64) -> State {
        let idx = self.events.partition_point(|e| e.time <= t);
        self.drift_from(idx, t)
    }

    #[inline]
    fn drift_from(&self, idx: usize, t: f64) -> State {
        if idx == 0 {
            self.initial.drifted(t.max(0.0))
        } else {
            let ev = &self.events[idx - 1];
            ev.post.drifted(t - ev.time)
        }
    }

    /// Number of jumps in `(s, t]`.
    pub fn jumps_in(&self, s: f64, t: f64) -> usize {
        let lo = self.events.partition_point(|e| e.time <= s);
        let hi = self.events.partition_point(|e| e.time <= t);
        hi.saturating_sub(lo)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t.is_nan() || t < 0.0 || t > self.horizon {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon });
        }
        Ok(())
    }
}
