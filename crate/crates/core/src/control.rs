//! Jitter smoothing and serial command scheduling.
//!
//! In serial mode at most one command is executing on the arm. New targets
//! wait in a single pending slot (newest wins) and are dispatched when the
//! executing command completes, unless they have waited longer than the
//! latency budget, in which case they are dropped as stale.

use alloc::vec::Vec;
use core::time::Duration;

use crate::geometry::Pose;
use crate::retarget::RobotCommand;
use crate::time::Timestamp;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    pub alpha_pos: f64,
    pub alpha_rot: f64,
    /// Position changes at or below this distance (m) are ignored.
    pub deadband: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            alpha_pos: 0.5,
            alpha_rot: 0.5,
            deadband: 0.001,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |a: f64| a > 0.0 && a <= 1.0;
        if !unit(self.alpha_pos) || !unit(self.alpha_rot) {
            return Err(Error::BadConfig("smoothing alphas must be in (0, 1]"));
        }
        if !(self.deadband >= 0.0 && self.deadband.is_finite()) {
            return Err(Error::BadConfig("deadband must be a non-negative distance"));
        }
        Ok(())
    }
}

/// One step of first-order exponential smoothing with a position deadband.
/// Rotations move along the geodesic from `prev` toward `new`.
pub fn smooth(prev: &Pose, new: &Pose, cfg: &SmoothingConfig) -> Pose {
    let gap = new.position - prev.position;
    let position = if gap.norm() <= cfg.deadband {
        prev.position
    } else if cfg.alpha_pos == 1.0 {
        new.position
    } else {
        prev.position + gap * cfg.alpha_pos
    };
    let rotation = if cfg.alpha_rot == 1.0 {
        new.rotation
    } else {
        prev.rotation.slerp(&new.rotation, cfg.alpha_rot)
    };
    Pose::new(position, rotation)
}

/// Stateful smoother; the first input passes through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoother {
    cfg: SmoothingConfig,
    state: Option<Pose>,
}

impl Smoother {
    pub fn new(cfg: SmoothingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, state: None })
    }

    pub fn config(&self) -> &SmoothingConfig {
        &self.cfg
    }

    pub fn set_config(&mut self, cfg: SmoothingConfig) -> Result<()> {
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn reset(&mut self, to: Option<Pose>) {
        self.state = to;
    }

    pub fn update(&mut self, input: &Pose) -> Pose {
        let out = match &self.state {
            Some(prev) => smooth(prev, input, &self.cfg),
            None => *input,
        };
        self.state = Some(out);
        out
    }
}

pub const MIN_LATENCY_BUDGET: Duration = Duration::from_millis(100);
pub const MAX_LATENCY_BUDGET: Duration = Duration::from_millis(300);
pub const DEFAULT_LATENCY_BUDGET: Duration = Duration::from_millis(200);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StalenessPolicy {
    /// A single pending slot; a newer submission replaces the older one.
    #[default]
    DropOldest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SerialSchedulerConfig {
    latency_budget: Duration,
    pub staleness: StalenessPolicy,
}

impl Default for SerialSchedulerConfig {
    fn default() -> Self {
        Self {
            latency_budget: DEFAULT_LATENCY_BUDGET,
            staleness: StalenessPolicy::DropOldest,
        }
    }
}

impl SerialSchedulerConfig {
    /// The budget must lie in 100–300 ms.
    pub fn new(latency_budget: Duration) -> Result<Self> {
        if !(MIN_LATENCY_BUDGET..=MAX_LATENCY_BUDGET).contains(&latency_budget) {
            return Err(Error::BadConfig("latency budget must be within 100-300 ms"));
        }
        Ok(Self {
            latency_budget,
            staleness: StalenessPolicy::DropOldest,
        })
    }

    pub fn latency_budget(&self) -> Duration {
        self.latency_budget
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandTicket {
    pub id: u64,
    pub command: RobotCommand,
    pub submitted_at: Timestamp,
    pub dispatched_at: Option<Timestamp>,
    pub completed_at: Option<Timestamp>,
}

impl CommandTicket {
    /// Time between submission and dispatch, once dispatched.
    pub fn queue_delay(&self) -> Option<Duration> {
        self.dispatched_at.map(|d| d.saturating_since(self.submitted_at))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerEvent {
    Dispatched {
        id: u64,
        at: Timestamp,
        queue_delay: Duration,
    },
    Completed {
        id: u64,
        at: Timestamp,
    },
    /// Replaced in the pending slot by a newer submission.
    Dropped {
        id: u64,
        at: Timestamp,
    },
    /// Waited longer than the latency budget and was discarded.
    Stale {
        id: u64,
        at: Timestamp,
        age: Duration,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SchedulerStats {
    pub submitted: u64,
    pub dispatched: u64,
    pub completed: u64,
    pub drops: u64,
    pub stale: u64,
    pub last_queue_delay: Duration,
    pub max_queue_delay: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerialScheduler {
    cfg: SerialSchedulerConfig,
    next_id: u64,
    in_flight: Option<CommandTicket>,
    pending: Option<CommandTicket>,
    stopped: bool,
    stats: SchedulerStats,
    events: Vec<SchedulerEvent>,
}

impl SerialScheduler {
    pub fn new(cfg: SerialSchedulerConfig) -> Self {
        Self {
            cfg,
            next_id: 1,
            in_flight: None,
            pending: None,
            stopped: false,
            stats: SchedulerStats::default(),
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &SerialSchedulerConfig {
        &self.cfg
    }

    /// Takes effect for the next dispatch decision.
    pub fn set_config(&mut self, cfg: SerialSchedulerConfig) {
        self.cfg = cfg;
    }

    pub fn in_flight(&self) -> Option<&CommandTicket> {
        self.in_flight.as_ref()
    }

    pub fn pending(&self) -> Option<&CommandTicket> {
        self.pending.as_ref()
    }

    pub fn stats(&self) -> &SchedulerStats {
        &self.stats
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight.is_none()
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// Stops accepting submissions. In-flight work may still complete.
    pub fn stop(&mut self) {
        self.stopped = true;
    }

    pub fn events(&self) -> &[SchedulerEvent] {
        &self.events
    }

    pub fn drain_events(&mut self) -> Vec<SchedulerEvent> {
        core::mem::take(&mut self.events)
    }

    /// Queues `command`. Returns the ticket when it was dispatched at once
    /// because nothing was executing.
    pub fn submit(&mut self, command: RobotCommand, now: Timestamp) -> Result<Option<CommandTicket>> {
        if self.stopped {
            return Err(Error::SchedulerStopped);
        }
        let ticket = CommandTicket {
            id: self.next_id,
            command,
            submitted_at: now,
            dispatched_at: None,
            completed_at: None,
        };
        self.next_id += 1;
        self.stats.submitted += 1;

        if self.in_flight.is_none() {
            return Ok(Some(self.dispatch(ticket, now)));
        }
        if let Some(old) = self.pending.replace(ticket) {
            self.stats.drops += 1;
            self.events.push(SchedulerEvent::Dropped { id: old.id, at: now });
        }
        Ok(None)
    }

    /// Marks the executing command as done and dispatches the pending one if
    /// it is still within budget. Returns the newly dispatched ticket.
    pub fn complete(&mut self, ticket_id: u64, now: Timestamp) -> Result<Option<CommandTicket>> {
        match self.in_flight {
            Some(t) if t.id == ticket_id => {}
            _ => return Err(Error::UnknownTicket(ticket_id)),
        }
        self.in_flight = None;
        self.stats.completed += 1;
        self.events.push(SchedulerEvent::Completed { id: ticket_id, at: now });

        let Some(next) = self.pending.take() else {
            return Ok(None);
        };
        let age = now.saturating_since(next.submitted_at);
        if age > self.cfg.latency_budget {
            self.stats.stale += 1;
            self.events.push(SchedulerEvent::Stale {
                id: next.id,
                at: now,
                age,
            });
            return Ok(None);
        }
        Ok(Some(self.dispatch(next, now)))
    }

    fn dispatch(&mut self, mut ticket: CommandTicket, now: Timestamp) -> CommandTicket {
        ticket.dispatched_at = Some(now);
        let queue_delay = now.saturating_since(ticket.submitted_at);
        self.stats.dispatched += 1;
        self.stats.last_queue_delay = queue_delay;
        self.stats.max_queue_delay = self.stats.max_queue_delay.max(queue_delay);
        self.events.push(SchedulerEvent::Dispatched {
            id: ticket.id,
            at: now,
            queue_delay,
        });
        self.in_flight = Some(ticket);
        ticket
    }
}
