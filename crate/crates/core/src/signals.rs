//! Per-intersection signal controller with preemption.
//!
//! In `Normal` mode the controller cycles through its phases, each phase
//! being green, then yellow, then all-red. A preempt request holds one
//! approach green for an ambulance:
//!
//! ```text
//! Normal --request--> ToPreempt --(yellow + all-red)--> Preempt
//! Preempt --release, queue empty--> Recover --(yellow + all-red)--> Normal(phase 0)
//! Preempt --release, queued request--> ToPreempt or Preempt
//! ```
//!
//! Every change from one green set to another passes through a full
//! clearance: the vacating approaches show yellow for `yellow` and then
//! everything is red for `all_red`. The only exception is a request whose
//! approach is already green, which is held without any change.
//!
//! All times are integer milliseconds so stepping is exactly additive.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{AmbulanceId, ControllerId, EdgeId, NodeId};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SignalError {
    #[error("approach {0} is not part of this intersection")]
    UnknownApproach(EdgeId),
    #[error("no active or queued request from {0}")]
    NoSuchRequest(Holder),
    #[error("invalid phase plan: {0}")]
    InvalidPlan(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub green: BTreeSet<EdgeId>,
    pub green_ms: u64,
}

/// Phase sequence, clearance timing and conflict table of one intersection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhasePlan {
    phases: Vec<Phase>,
    yellow_ms: u64,
    all_red_ms: u64,
    approaches: BTreeSet<EdgeId>,
    conflicts: BTreeSet<(EdgeId, EdgeId)>,
}

fn ordered(a: EdgeId, b: EdgeId) -> (EdgeId, EdgeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl PhasePlan {
    /// When `conflicts` is `None`, two approaches conflict exactly when no
    /// phase shows them green together.
    pub fn new(
        phases: Vec<Phase>,
        yellow_ms: u64,
        all_red_ms: u64,
        conflicts: Option<Vec<(EdgeId, EdgeId)>>,
    ) -> Result<Self, SignalError> {
        if phases.is_empty() {
            return Err(SignalError::InvalidPlan("no phases"));
        }
        if yellow_ms == 0 || all_red_ms == 0 || phases.iter().any(|p| p.green_ms == 0) {
            return Err(SignalError::InvalidPlan("durations must be positive"));
        }
        if phases.iter().any(|p| p.green.is_empty()) {
            return Err(SignalError::InvalidPlan("phase with empty green set"));
        }
        let mut approaches: BTreeSet<EdgeId> =
            phases.iter().flat_map(|p| p.green.iter().copied()).collect();
        let conflicts: BTreeSet<(EdgeId, EdgeId)> = match conflicts {
            Some(pairs) => {
                let mut set = BTreeSet::new();
                for (a, b) in pairs {
                    if a == b {
                        return Err(SignalError::InvalidPlan("approach conflicts with itself"));
                    }
                    approaches.insert(a);
                    approaches.insert(b);
                    set.insert(ordered(a, b));
                }
                set
            }
            None => {
                let all: Vec<EdgeId> = approaches.iter().copied().collect();
                let mut set = BTreeSet::new();
                for (i, &a) in all.iter().enumerate() {
                    for &b in &all[i + 1..] {
                        let together = phases
                            .iter()
                            .any(|p| p.green.contains(&a) && p.green.contains(&b));
                        if !together {
                            set.insert((a, b));
                        }
                    }
                }
                set
            }
        };
        let plan = Self {
            phases,
            yellow_ms,
            all_red_ms,
            approaches,
            conflicts,
        };
        if plan.phases.iter().any(|p| !plan.conflict_free(&p.green)) {
            return Err(SignalError::InvalidPlan("phase greens conflicting approaches"));
        }
        Ok(plan)
    }

    /// Two-phase plan: `ns` green for `ns_ms`, then `ew` green for `ew_ms`.
    pub fn two_phase(
        ns: BTreeSet<EdgeId>,
        ns_ms: u64,
        ew: BTreeSet<EdgeId>,
        ew_ms: u64,
        yellow_ms: u64,
        all_red_ms: u64,
    ) -> Result<Self, SignalError> {
        let mut phases = Vec::new();
        if !ns.is_empty() {
            phases.push(Phase { green: ns, green_ms: ns_ms });
        }
        if !ew.is_empty() {
            phases.push(Phase { green: ew, green_ms: ew_ms });
        }
        Self::new(phases, yellow_ms, all_red_ms, None)
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn yellow_ms(&self) -> u64 {
        self.yellow_ms
    }

    pub fn all_red_ms(&self) -> u64 {
        self.all_red_ms
    }

    pub fn clearance_ms(&self) -> u64 {
        self.yellow_ms + self.all_red_ms
    }

    pub fn approaches(&self) -> &BTreeSet<EdgeId> {
        &self.approaches
    }

    pub fn cycle_ms(&self) -> u64 {
        self.phases.iter().map(|p| p.green_ms + self.clearance_ms()).sum()
    }

    pub fn conflicts(&self, a: EdgeId, b: EdgeId) -> bool {
        a != b && self.conflicts.contains(&ordered(a, b))
    }

    pub fn conflict_free(&self, set: &BTreeSet<EdgeId>) -> bool {
        let v: Vec<EdgeId> = set.iter().copied().collect();
        v.iter()
            .enumerate()
            .all(|(i, &a)| v[i + 1..].iter().all(|&b| !self.conflicts(a, b)))
    }

    /// Green set used while holding `approach`.
    fn hold_set(&self, approach: EdgeId) -> BTreeSet<EdgeId> {
        self.phases
            .iter()
            .find(|p| p.green.contains(&approach))
            .map(|p| p.green.clone())
            .unwrap_or_else(|| [approach].into_iter().collect())
    }
}

/// Who a preemption is for.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holder {
    Ambulance(AmbulanceId),
    Operator(String),
}

impl fmt::Display for Holder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Holder::Ambulance(a) => write!(f, "{a}"),
            Holder::Operator(o) => write!(f, "operator:{o}"),
        }
    }
}

/// Total order on requests: operator before automatic, then ETA, then holder.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PriorityKey {
    pub class: u8,
    pub eta: SimTime,
    pub holder: Holder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreemptRequest {
    pub holder: Holder,
    pub approach: EdgeId,
    pub requested_at: SimTime,
    pub eta: SimTime,
}

impl PreemptRequest {
    pub fn priority_key(&self) -> PriorityKey {
        PriorityKey {
            class: match self.holder {
                Holder::Operator(_) => 0,
                Holder::Ambulance(_) => 1,
            },
            eta: self.eta,
            holder: self.holder.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Normal,
    ToPreempt,
    Preempt,
    Recover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indication {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Interval {
    Green,
    Yellow,
    AllRed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Clearance {
    yellow: BTreeSet<EdgeId>,
    yellow_left: u64,
    all_red_left: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerState {
    mode: Mode,
    phase: usize,
    interval: Interval,
    /// Time spent in the current normal interval, or in the current hold.
    elapsed_ms: u64,
    clearance: Option<Clearance>,
    held: BTreeSet<EdgeId>,
    active: Option<PreemptRequest>,
    queue: Vec<PreemptRequest>,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            mode: Mode::Normal,
            phase: 0,
            interval: Interval::Green,
            elapsed_ms: 0,
            clearance: None,
            held: BTreeSet::new(),
            active: None,
            queue: Vec::new(),
        }
    }
}

impl ControllerState {
    /// Normal cycling, `offset_ms` into the cycle.
    pub fn at_offset(plan: &PhasePlan, offset_ms: u64) -> Self {
        let mut s = Self::default();
        if offset_ms > 0 {
            s.step(plan, offset_ms % plan.cycle_ms());
        }
        s
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn current_phase(&self) -> usize {
        self.phase
    }

    pub fn elapsed_in_phase_ms(&self) -> u64 {
        self.elapsed_ms
    }

    pub fn active_request(&self) -> Option<&PreemptRequest> {
        self.active.as_ref()
    }

    pub fn queued(&self) -> &[PreemptRequest] {
        &self.queue
    }

    fn interval_ms(&self, plan: &PhasePlan) -> u64 {
        match self.interval {
            Interval::Green => plan.phases[self.phase].green_ms,
            Interval::Yellow => plan.yellow_ms,
            Interval::AllRed => plan.all_red_ms,
        }
    }

    /// Time until the next scheduled change; `None` while holding.
    pub fn countdown_ms(&self, plan: &PhasePlan) -> Option<u64> {
        match self.mode {
            Mode::Normal => Some(self.interval_ms(plan) - self.elapsed_ms),
            Mode::ToPreempt | Mode::Recover => {
                self.clearance.as_ref().map(|c| c.yellow_left + c.all_red_left)
            }
            Mode::Preempt => None,
        }
    }

    pub fn indication(&self, plan: &PhasePlan, approach: EdgeId) -> Indication {
        match self.mode {
            Mode::Normal => {
                let on = plan.phases[self.phase].green.contains(&approach);
                match (self.interval, on) {
                    (Interval::Green, true) => Indication::Green,
                    (Interval::Yellow, true) => Indication::Yellow,
                    _ => Indication::Red,
                }
            }
            Mode::ToPreempt | Mode::Recover => match &self.clearance {
                Some(c) if c.yellow_left > 0 && c.yellow.contains(&approach) => Indication::Yellow,
                _ => Indication::Red,
            },
            Mode::Preempt => {
                if self.held.contains(&approach) {
                    Indication::Green
                } else {
                    Indication::Red
                }
            }
        }
    }

    fn set_with(&self, plan: &PhasePlan, want: Indication) -> BTreeSet<EdgeId> {
        plan.approaches
            .iter()
            .copied()
            .filter(|&a| self.indication(plan, a) == want)
            .collect()
    }

    pub fn green_set(&self, plan: &PhasePlan) -> BTreeSet<EdgeId> {
        self.set_with(plan, Indication::Green)
    }

    pub fn yellow_set(&self, plan: &PhasePlan) -> BTreeSet<EdgeId> {
        self.set_with(plan, Indication::Yellow)
    }

    /// Advances the clock by `dt_ms`, carrying leftover time across changes.
    pub fn step(&mut self, plan: &PhasePlan, dt_ms: u64) {
        let mut rem = dt_ms;
        while rem > 0 {
            match self.mode {
                Mode::Normal => {
                    let left = self.interval_ms(plan) - self.elapsed_ms;
                    if rem < left {
                        self.elapsed_ms += rem;
                        rem = 0;
                    } else {
                        rem -= left;
                        self.elapsed_ms = 0;
                        self.interval = match self.interval {
                            Interval::Green => Interval::Yellow,
                            Interval::Yellow => Interval::AllRed,
                            Interval::AllRed => {
                                self.phase = (self.phase + 1) % plan.phases.len();
                                Interval::Green
                            }
                        };
                    }
                }
                Mode::ToPreempt | Mode::Recover => {
                    let c = self.clearance.as_mut().expect("clearance while clearing");
                    let y = rem.min(c.yellow_left);
                    c.yellow_left -= y;
                    rem -= y;
                    let r = rem.min(c.all_red_left);
                    c.all_red_left -= r;
                    rem -= r;
                    if c.yellow_left == 0 && c.all_red_left == 0 {
                        self.finish_clearance(plan);
                    }
                }
                Mode::Preempt => {
                    self.elapsed_ms += rem;
                    rem = 0;
                }
            }
        }
    }

    fn finish_clearance(&mut self, plan: &PhasePlan) {
        self.clearance = None;
        self.elapsed_ms = 0;
        match (self.mode, &self.active) {
            (Mode::ToPreempt, Some(req)) => {
                self.held = plan.hold_set(req.approach);
                self.mode = Mode::Preempt;
            }
            _ => {
                self.held.clear();
                self.mode = Mode::Normal;
                self.phase = 0;
                self.interval = Interval::Green;
            }
        }
    }

    fn start_clearance(&mut self, plan: &PhasePlan, mode: Mode) {
        // Anything green or already yellow has to (keep) yellowing.
        let mut yellow = self.green_set(plan);
        yellow.extend(self.yellow_set(plan));
        self.clearance = Some(Clearance {
            yellow,
            yellow_left: plan.yellow_ms,
            all_red_left: plan.all_red_ms,
        });
        self.mode = mode;
        self.held.clear();
        self.elapsed_ms = 0;
    }

    fn enqueue(&mut self, req: PreemptRequest) {
        self.queue.retain(|q| q.holder != req.holder);
        let key = req.priority_key();
        let at = self.queue.partition_point(|q| q.priority_key() < key);
        self.queue.insert(at, req);
    }

    fn has_holder(&self, h: &Holder) -> bool {
        self.active.as_ref().is_some_and(|a| &a.holder == h)
            || self.queue.iter().any(|q| &q.holder == h)
    }

    /// Whether `holder` has an active or queued request here.
    pub fn holds_or_queues(&self, h: &Holder) -> bool {
        self.has_holder(h)
    }

    pub fn request_preempt(
        &mut self,
        plan: &PhasePlan,
        req: PreemptRequest,
    ) -> Result<(), SignalError> {
        if !plan.approaches.contains(&req.approach) {
            return Err(SignalError::UnknownApproach(req.approach));
        }
        if self.active.as_ref().is_some_and(|a| a.holder == req.holder) {
            return Ok(());
        }
        match self.mode {
            Mode::Preempt => self.enqueue(req),
            Mode::ToPreempt => {
                // Nothing is green yet, so a better request can take the slot.
                let current = self.active.take().expect("active request while clearing");
                if req.priority_key() < current.priority_key() {
                    self.queue.retain(|q| q.holder != req.holder);
                    self.enqueue(current);
                    self.active = Some(req);
                } else {
                    self.active = Some(current);
                    self.enqueue(req);
                }
            }
            Mode::Normal | Mode::Recover => {
                self.queue.retain(|q| q.holder != req.holder);
                self.begin(plan, req);
            }
        }
        Ok(())
    }

    fn begin(&mut self, plan: &PhasePlan, req: PreemptRequest) {
        if self.indication(plan, req.approach) == Indication::Green {
            self.held = self.green_set(plan);
            self.clearance = None;
            self.mode = Mode::Preempt;
            self.elapsed_ms = 0;
        } else {
            self.start_clearance(plan, Mode::ToPreempt);
        }
        self.active = Some(req);
    }

    pub fn release_preempt(&mut self, plan: &PhasePlan, holder: &Holder) -> Result<(), SignalError> {
        if self.active.as_ref().is_some_and(|a| &a.holder == holder) {
            self.active = None;
            let next = (!self.queue.is_empty()).then(|| self.queue.remove(0));
            match (self.mode, next) {
                (Mode::ToPreempt, Some(req)) => self.active = Some(req),
                (Mode::ToPreempt, None) => self.mode = Mode::Recover,
                (_, Some(req)) => self.begin(plan, req),
                (_, None) => self.start_clearance(plan, Mode::Recover),
            }
            Ok(())
        } else if let Some(i) = self.queue.iter().position(|q| &q.holder == holder) {
            self.queue.remove(i);
            Ok(())
        } else {
            Err(SignalError::NoSuchRequest(holder.clone()))
        }
    }
}

/// A controller bound to its intersection.
#[derive(Debug, Clone)]
pub struct Controller {
    pub id: ControllerId,
    pub node: NodeId,
    pub plan: PhasePlan,
    pub state: ControllerState,
}

/// Point-in-time view of a controller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerSnapshot {
    pub id: ControllerId,
    pub node: NodeId,
    pub mode: Mode,
    pub phase: usize,
    pub green: Vec<EdgeId>,
    pub yellow: Vec<EdgeId>,
    pub countdown_ms: Option<u64>,
    pub active: Option<Holder>,
    pub queued: Vec<Holder>,
}

impl Controller {
    pub fn new(id: ControllerId, node: NodeId, plan: PhasePlan, offset_ms: u64) -> Self {
        let state = ControllerState::at_offset(&plan, offset_ms);
        Self {
            id,
            node,
            plan,
            state,
        }
    }

    pub fn step(&mut self, dt_ms: u64) {
        self.state.step(&self.plan, dt_ms);
    }

    pub fn indication(&self, approach: EdgeId) -> Indication {
        self.state.indication(&self.plan, approach)
    }

    pub fn request_preempt(&mut self, req: PreemptRequest) -> Result<(), SignalError> {
        self.state.request_preempt(&self.plan, req)
    }

    pub fn release_preempt(&mut self, holder: &Holder) -> Result<(), SignalError> {
        self.state.release_preempt(&self.plan, holder)
    }

    pub fn snapshot(&self) -> ControllerSnapshot {
        ControllerSnapshot {
            id: self.id.clone(),
            node: self.node,
            mode: self.state.mode,
            phase: self.state.phase,
            green: self.state.green_set(&self.plan).into_iter().collect(),
            yellow: self.state.yellow_set(&self.plan).into_iter().collect(),
            countdown_ms: self.state.countdown_ms(&self.plan),
            active: self.state.active.as_ref().map(|r| r.holder.clone()),
            queued: self.state.queue.iter().map(|r| r.holder.clone()).collect(),
        }
    }
}

/// What an observed indication sequence did wrong.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Two conflicting approaches were not red at the same instant.
    ConflictingOpen { at_ms: u64, a: EdgeId, b: EdgeId },
    /// An approach went from green straight to red.
    GreenToRed { at_ms: u64, approach: EdgeId },
    /// An approach went from yellow back to green.
    YellowToGreen { at_ms: u64, approach: EdgeId },
    /// Yellow shown for less than the plan's yellow time.
    ShortYellow { at_ms: u64, approach: EdgeId, shown_ms: u64 },
    /// Green shown before a conflicting approach had been red for the
    /// plan's all-red time.
    ShortAllRed { at_ms: u64, approach: EdgeId, after: EdgeId, red_ms: u64 },
}

/// Independent safety check over sampled indications, in the manner of a
/// conflict monitor unit. Samples must be taken at a fixed period and each
/// sample stands for the whole period that follows it.
#[derive(Debug, Clone)]
pub struct ConflictMonitor {
    plan: PhasePlan,
    period_ms: u64,
    last: Option<(u64, BTreeMap<EdgeId, Indication>)>,
    /// When each approach entered yellow, if that was observed.
    yellow_since: BTreeMap<EdgeId, u64>,
    /// End of the last period each approach was not red.
    open_until: BTreeMap<EdgeId, u64>,
}

impl ConflictMonitor {
    pub fn new(plan: PhasePlan, period_ms: u64) -> Self {
        Self {
            plan,
            period_ms,
            last: None,
            yellow_since: BTreeMap::new(),
            open_until: BTreeMap::new(),
        }
    }

    /// Records the indications of every approach at `at_ms` and returns
    /// any violations the new sample reveals.
    pub fn observe(&mut self, at_ms: u64, state: &ControllerState) -> Vec<Violation> {
        let now = self.plan.approaches.iter().map(|&a| (a, state.indication(&self.plan, a))).collect();
        self.check(at_ms, now)
    }

    /// As [`observe`](Self::observe), for indications from any source.
    pub fn observe_with(&mut self, at_ms: u64, show: impl Fn(EdgeId) -> Indication) -> Vec<Violation> {
        let now = self.plan.approaches.iter().map(|&a| (a, show(a))).collect();
        self.check(at_ms, now)
    }

    fn check(&mut self, at_ms: u64, now: BTreeMap<EdgeId, Indication>) -> Vec<Violation> {
        let mut out = Vec::new();
        let open: Vec<EdgeId> = now
            .iter()
            .filter(|(_, &i)| i != Indication::Red)
            .map(|(&a, _)| a)
            .collect();
        for (i, &a) in open.iter().enumerate() {
            for &b in &open[i + 1..] {
                if self.plan.conflicts(a, b) {
                    out.push(Violation::ConflictingOpen { at_ms, a, b });
                }
            }
        }
        if let Some((_, before)) = &self.last {
            for (&a, &ind) in &now {
                let prev = before[&a];
                match (prev, ind) {
                    (Indication::Green, Indication::Red) => {
                        out.push(Violation::GreenToRed { at_ms, approach: a });
                    }
                    (Indication::Yellow, Indication::Green) => {
                        out.push(Violation::YellowToGreen { at_ms, approach: a });
                    }
                    (Indication::Yellow, Indication::Red) => {
                        if let Some(&since) = self.yellow_since.get(&a) {
                            let shown_ms = at_ms - since;
                            if shown_ms < self.plan.yellow_ms {
                                out.push(Violation::ShortYellow { at_ms, approach: a, shown_ms });
                            }
                        }
                    }
                    (Indication::Red, Indication::Green) => {
                        for (&b, &until) in &self.open_until {
                            if self.plan.conflicts(a, b) && at_ms.saturating_sub(until) < self.plan.all_red_ms {
                                out.push(Violation::ShortAllRed {
                                    at_ms,
                                    approach: a,
                                    after: b,
                                    red_ms: at_ms.saturating_sub(until),
                                });
                            }
                        }
                    }
                    _ => {}
                }
                if ind == Indication::Yellow && prev != Indication::Yellow {
                    self.yellow_since.insert(a, at_ms);
                }
            }
        }
        for &a in &open {
            self.open_until.insert(a, at_ms + self.period_ms);
        }
        self.last = Some((at_ms, now));
        out
    }
}
