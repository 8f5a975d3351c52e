//! Core value types: tasks, machines, queues, the shared resource, and the
//! per-candidate feature vector, together with their derived quantities.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TaskId = u64;
pub type MachineId = u32;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("task {task} (type {task_type}) is not compatible with machine {machine}")]
    Incompatible {
        task: TaskId,
        task_type: u32,
        machine: MachineId,
    },
    #[error("invalid task {id}: {reason}")]
    InvalidTask { id: TaskId, reason: String },
    #[error("invalid machine {id}: {reason}")]
    InvalidMachine { id: MachineId, reason: String },
}

/// Immutable task attributes fixed at generation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    /// Arrival time, >= 0.
    pub arrival: f64,
    /// Task type category; a machine can serve it only if capable.
    pub task_type: u32,
    /// Processing requirement in work units, > 0.
    pub workload: f64,
    /// Absolute deadline, > arrival.
    pub deadline: f64,
    pub priority: i32,
    /// Whether service additionally requires the unit-capacity shared resource.
    pub needs_resource: bool,
}

impl TaskSpec {
    pub fn new(
        id: TaskId,
        arrival: f64,
        task_type: u32,
        workload: f64,
        deadline: f64,
        priority: i32,
        needs_resource: bool,
    ) -> Result<Self, DomainError> {
        let task = Self {
            id,
            arrival,
            task_type,
            workload,
            deadline,
            priority,
            needs_resource,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let fail = |reason: &str| DomainError::InvalidTask {
            id: self.id,
            reason: reason.to_string(),
        };
        if !(self.arrival.is_finite() && self.arrival >= 0.0) {
            return Err(fail("arrival must be finite and >= 0"));
        }
        if !(self.workload.is_finite() && self.workload > 0.0) {
            return Err(fail("workload must be finite and > 0"));
        }
        if !(self.deadline.is_finite() && self.deadline > self.arrival) {
            return Err(fail("deadline must be finite and > arrival"));
        }
        Ok(())
    }
}

/// Immutable machine attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub id: MachineId,
    /// Task types this machine can serve; nonempty.
    pub capabilities: BTreeSet<u32>,
    /// Processing speed in work units per time, > 0.
    pub speed: f64,
    /// Energy drawn per unit of busy time, > 0.
    pub energy_rate: f64,
}

impl MachineSpec {
    pub fn new(
        id: MachineId,
        capabilities: BTreeSet<u32>,
        speed: f64,
        energy_rate: f64,
    ) -> Result<Self, DomainError> {
        let spec = Self {
            id,
            capabilities,
            speed,
            energy_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let fail = |reason: &str| DomainError::InvalidMachine {
            id: self.id,
            reason: reason.to_string(),
        };
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(fail("speed must be finite and > 0"));
        }
        if !(self.energy_rate.is_finite() && self.energy_rate > 0.0) {
            return Err(fail("energy rate must be finite and > 0"));
        }
        if self.capabilities.is_empty() {
            return Err(fail("capability set must be nonempty"));
        }
        Ok(())
    }

    pub fn can_serve(&self, task: &TaskSpec) -> bool {
        self.capabilities.contains(&task.task_type)
    }
}

/// Service time of `task` on `machine`: workload divided by speed.
pub fn processing_time(task: &TaskSpec, machine: &MachineSpec) -> Result<f64, DomainError> {
    if !machine.can_serve(task) {
        return Err(DomainError::Incompatible {
            task: task.id,
            task_type: task.task_type,
            machine: machine.id,
        });
    }
    Ok(task.workload / machine.speed)
}

/// A task waiting in (or being served from) a machine queue, with its
/// service time on that machine fixed at assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub task: TaskSpec,
    pub proc_time: f64,
}

/// The entry currently in service plus its service interval.
#[derive(Debug, Clone, PartialEq)]
pub struct InService {
    pub entry: QueueEntry,
    pub start: f64,
    pub end: f64,
}

impl InService {
    pub fn remaining(&self, now: f64) -> f64 {
        (self.end - now).max(0.0)
    }
}

/// Mutable per-machine state: the waiting queue and the task in service.
///
/// Busyness is derived from `in_service`, so "in service present iff busy"
/// holds by construction.
#[derive(Debug, Clone)]
pub struct MachineState {
    pub spec: MachineSpec,
    pub queue: VecDeque<QueueEntry>,
    pub in_service: Option<InService>,
}

impl MachineState {
    pub fn new(spec: MachineSpec) -> Self {
        Self {
            spec,
            queue: VecDeque::new(),
            in_service: None,
        }
    }

    pub fn busy(&self) -> bool {
        self.in_service.is_some()
    }

    /// Instantaneous load: queued tasks plus the busy indicator.
    pub fn load(&self) -> usize {
        self.queue.len() + usize::from(self.busy())
    }

    /// Local workload estimate at `now`: remaining service time of the task
    /// in service plus the full service times of everything queued.
    pub fn queueing_time(&self, now: f64) -> f64 {
        let in_service = self
            .in_service
            .as_ref()
            .map_or(0.0, |svc| svc.remaining(now));
        in_service + self.queue.iter().map(|e| e.proc_time).sum::<f64>()
    }
}

/// Estimated completion time of `task` if assigned to `machine` at `now`.
pub fn estimated_completion(
    now: f64,
    task: &TaskSpec,
    machine: &MachineState,
) -> Result<f64, DomainError> {
    let p = processing_time(task, &machine.spec)?;
    Ok(now + machine.queueing_time(now) + p)
}

/// Deadline margin of `task` on `machine` at `now`; negative predicts a miss.
pub fn slack(now: f64, task: &TaskSpec, machine: &MachineState) -> Result<f64, DomainError> {
    Ok(task.deadline - estimated_completion(now, task, machine)?)
}

/// A task waiting for the shared resource, with the time it joined the line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waiter {
    pub task: TaskId,
    pub joined: f64,
}

/// Occupancy of the unit-capacity shared resource.
#[derive(Debug, Clone, Default)]
pub struct ResourceState {
    pub holder: Option<TaskId>,
    pub waiters: Vec<Waiter>,
}

impl ResourceState {
    /// Contention level: tasks waiting for or currently occupying the resource.
    pub fn contention(&self) -> usize {
        self.waiters.len() + usize::from(self.holder.is_some())
    }

    pub fn is_waiting(&self, task: TaskId) -> bool {
        self.waiters.iter().any(|w| w.task == task)
    }
}

/// The 9-component per-candidate feature vector, in fixed order:
/// queueing time, processing time, slack, load, resource flag, contention,
/// priority, speed, energy rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BidFeatures {
    pub queueing: f64,
    pub proc: f64,
    pub slack: f64,
    pub load: usize,
    pub needs_resource: bool,
    pub contention: usize,
    pub priority: i32,
    pub speed: f64,
    pub energy_rate: f64,
}

pub const FEATURE_DIM: usize = 9;

impl BidFeatures {
    pub fn as_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.queueing,
            self.proc,
            self.slack,
            self.load as f64,
            f64::from(u8::from(self.needs_resource)),
            self.contention as f64,
            f64::from(self.priority),
            self.speed,
            self.energy_rate,
        ]
    }
}

/// Outcome of one finished task.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRecord {
    pub task: TaskId,
    pub machine: MachineId,
    pub completion: f64,
    /// max(0, completion - deadline).
    pub delay: f64,
    pub missed: bool,
    pub proc_time: f64,
}

impl CompletionRecord {
    pub fn new(
        task: TaskId,
        machine: MachineId,
        completion: f64,
        deadline: f64,
        proc_time: f64,
    ) -> Self {
        let delay = (completion - deadline).max(0.0);
        Self {
            task,
            machine,
            completion,
            delay,
            missed: delay > 0.0,
            proc_time,
        }
    }
}
