//! Deterministic discrete-event simulation: arrival, decentralized auction,
//! queueing, non-preemptive service, and unit-capacity resource gating.
//!
//! Event ordering is total: (time, kind rank, sequence number). At equal
//! timestamps completions run first so freed capacity is visible before the
//! resource is granted, service starts, or new work arrives. A task that
//! needs the shared resource holds it for its entire service interval; it
//! lines up for the resource only once it is at the head of a free machine's
//! queue, and the machine stays idle until the grant (strict FIFO, no
//! skip-ahead).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::bidding::{BidContext, Bidder};
use crate::domain::{
    processing_time, CompletionRecord, DomainError, InService, MachineId, MachineSpec,
    MachineState, QueueEntry, ResourceState, TaskId, TaskSpec, Waiter,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("bidder returned a non-finite bid for task {task} on machine {machine}")]
    NonFiniteBid { task: TaskId, machine: MachineId },
    #[error("NaN bid on machine {machine}")]
    NanBid { machine: MachineId },
    #[error("empty auction: no bids submitted")]
    EmptyAuction,
    #[error("workload is not sorted by arrival (task {task})")]
    UnsortedWorkload { task: TaskId },
    #[error("fleet machine ids must be dense and in order (index {index} has id {id})")]
    NonDenseFleet { index: usize, id: MachineId },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Completion { machine: MachineId, task: TaskId },
    /// Hand the free resource to the first waiter (FIFO, ties by task id).
    ResourceGrant,
    ServiceStart { machine: MachineId },
    Arrival { task: TaskId },
}

impl EventKind {
    /// Rank at equal timestamps: free capacity first, new work last.
    fn rank(&self) -> u8 {
        match self {
            EventKind::Completion { .. } => 0,
            EventKind::ResourceGrant => 1,
            EventKind::ServiceStart { .. } => 2,
            EventKind::Arrival { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Event {
    fn key(&self) -> (u64, u8, u64) {
        // Finite nonnegative times order correctly through their bit pattern.
        (self.time.to_bits(), self.kind.rank(), self.seq)
    }
}

// Min-heap ordering over (time, rank, seq).
#[derive(Debug, Clone, PartialEq)]
struct HeapEvent(Event);

impl Eq for HeapEvent {}

impl PartialOrd for HeapEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.key().cmp(&self.0.key())
    }
}

/// One auctioned task: the candidate set, their bids, and the winner.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionRecord {
    pub task: TaskId,
    pub time: f64,
    pub candidates: Vec<MachineId>,
    pub bids: Vec<f64>,
    pub winner: MachineId,
}

/// Everything a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub completions: Vec<CompletionRecord>,
    pub assignment_log: Vec<AuctionRecord>,
    pub unassignable: Vec<TaskId>,
    pub generated: usize,
    pub unfinished: usize,
    /// Energy accumulated service-interval by service-interval, kept as an
    /// independent tally for cross-checking the metrics computation.
    pub energy: f64,
}

/// Assignment log as CSV; list-valued fields are ';'-separated.
pub fn assignment_log_csv(log: &[AuctionRecord]) -> String {
    let mut out = String::from("task_id,time,candidates,bids,winner\n");
    for rec in log {
        let candidates = rec
            .candidates
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let bids = rec
            .bids
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.task, rec.time, candidates, bids, rec.winner
        ));
    }
    out
}

/// Completion records as CSV.
pub fn completions_csv(completions: &[CompletionRecord]) -> String {
    let mut out = String::from("task_id,machine_id,completion,delay,missed\n");
    for c in completions {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.task,
            c.machine,
            c.completion,
            c.delay,
            u8::from(c.missed)
        ));
    }
    out
}

/// Winner selection: minimum bid, ties to the lowest machine id.
pub fn winner(bids: &[(MachineId, f64)]) -> Result<MachineId, EngineError> {
    let mut best: Option<(MachineId, f64)> = None;
    for &(m, b) in bids {
        if b.is_nan() {
            return Err(EngineError::NanBid { machine: m });
        }
        best = match best {
            None => Some((m, b)),
            Some((bm, bb)) if b < bb || (b == bb && m < bm) => Some((m, b)),
            keep => keep,
        };
    }
    best.map(|(m, _)| m).ok_or(EngineError::EmptyAuction)
}

/// Mutable world state driven by the event loop.
pub struct SimState {
    pub clock: f64,
    pub machines: Vec<MachineState>,
    pub resource: ResourceState,
    pub completions: Vec<CompletionRecord>,
    pub assignment_log: Vec<AuctionRecord>,
    pub unassignable: Vec<TaskId>,
    pub energy: f64,
    tasks: Vec<TaskSpec>,
    task_index: HashMap<TaskId, usize>,
    horizon: f64,
    events: BinaryHeap<HeapEvent>,
    next_seq: u64,
    /// Per machine: a ServiceStart event is already queued.
    start_scheduled: Vec<bool>,
    /// Per machine: head of queue is waiting for the shared resource.
    blocked: Vec<bool>,
    grant_pending: bool,
    assigned_machine: HashMap<TaskId, MachineId>,
    log_index: HashMap<TaskId, usize>,
    skipped_arrivals: usize,
}

impl SimState {
    pub fn new(tasks: &[TaskSpec], fleet: &[MachineSpec], horizon: f64) -> Result<Self, EngineError> {
        for w in tasks.windows(2) {
            if w[1].arrival < w[0].arrival {
                return Err(EngineError::UnsortedWorkload { task: w[1].id });
            }
        }
        for (index, spec) in fleet.iter().enumerate() {
            if spec.id as usize != index {
                return Err(EngineError::NonDenseFleet { index, id: spec.id });
            }
        }
        let task_index = tasks.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
        let mut state = Self {
            clock: 0.0,
            machines: fleet.iter().cloned().map(MachineState::new).collect(),
            resource: ResourceState::default(),
            completions: Vec::new(),
            assignment_log: Vec::new(),
            unassignable: Vec::new(),
            energy: 0.0,
            tasks: tasks.to_vec(),
            task_index,
            horizon,
            events: BinaryHeap::new(),
            next_seq: 0,
            start_scheduled: vec![false; fleet.len()],
            blocked: vec![false; fleet.len()],
            grant_pending: false,
            assigned_machine: HashMap::new(),
            log_index: HashMap::new(),
            skipped_arrivals: 0,
        };
        for task in &state.tasks.clone() {
            if task.arrival <= horizon {
                state.schedule(task.arrival, EventKind::Arrival { task: task.id });
            } else {
                state.skipped_arrivals += 1;
            }
        }
        Ok(state)
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        debug_assert!(time.is_finite() && time >= 0.0);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(HeapEvent(Event { time, seq, kind }));
    }

    /// Pending events in dispatch order (test and debug aid).
    pub fn pending_events(&self) -> Vec<Event> {
        let mut evs: Vec<Event> = self.events.iter().map(|h| h.0.clone()).collect();
        evs.sort_by_key(Event::key);
        evs
    }

    /// Handles the next event within the horizon. Returns the event handled,
    /// or `None` once the run is over.
    pub fn step(&mut self, bidder: &mut dyn Bidder) -> Result<Option<Event>, EngineError> {
        match self.events.peek() {
            Some(head) if head.0.time <= self.horizon => {}
            _ => return Ok(None),
        }
        let event = self.events.pop().expect("peeked event").0;
        self.advance(&event, bidder)?;
        Ok(Some(event))
    }

    /// Applies one event: moves the clock, mutates machine/resource state,
    /// and schedules follow-on events.
    pub fn advance(&mut self, event: &Event, bidder: &mut dyn Bidder) -> Result<(), EngineError> {
        assert!(event.time >= self.clock, "clock must not run backwards");
        self.clock = event.time;
        match event.kind.clone() {
            EventKind::Arrival { task } => self.handle_arrival(task, bidder)?,
            EventKind::ServiceStart { machine } => self.handle_service_start(machine),
            EventKind::Completion { machine, task } => {
                self.handle_completion(machine, task, bidder)
            }
            EventKind::ResourceGrant => self.handle_grant(),
        }
        self.check_invariants();
        Ok(())
    }

    fn task(&self, id: TaskId) -> &TaskSpec {
        &self.tasks[self.task_index[&id]]
    }

    fn handle_arrival(&mut self, task_id: TaskId, bidder: &mut dyn Bidder) -> Result<(), EngineError> {
        let now = self.clock;
        let task = self.task(task_id).clone();
        let candidates: Vec<MachineId> = self
            .machines
            .iter()
            .filter(|m| m.spec.can_serve(&task))
            .map(|m| m.spec.id)
            .collect();
        if candidates.is_empty() {
            self.unassignable.push(task_id);
            return Ok(());
        }

        let contention = self.resource.contention();
        let mut bids = Vec::with_capacity(candidates.len());
        for &m in &candidates {
            let bid = bidder.bid(now, &task, &self.machines[m as usize], contention);
            if !bid.is_finite() {
                return Err(EngineError::NonFiniteBid { task: task_id, machine: m });
            }
            bids.push((m, bid));
        }
        let winner = winner(&bids)?;

        let proc = processing_time(&task, &self.machines[winner as usize].spec)?;
        self.machines[winner as usize].queue.push_back(QueueEntry {
            task: task.clone(),
            proc_time: proc,
        });
        self.assigned_machine.insert(task_id, winner);
        self.log_index.insert(task_id, self.assignment_log.len());
        self.assignment_log.push(AuctionRecord {
            task: task_id,
            time: now,
            candidates,
            bids: bids.iter().map(|&(_, b)| b).collect(),
            winner,
        });

        self.try_start(winner as usize);
        bidder.maybe_train(now);
        Ok(())
    }

    fn handle_service_start(&mut self, machine: MachineId) {
        let idx = machine as usize;
        self.start_scheduled[idx] = false;
        let m = &mut self.machines[idx];
        assert!(!m.busy(), "service start on a busy machine");
        let entry = m.queue.pop_front().expect("service start with empty queue");
        if entry.task.needs_resource {
            assert_eq!(
                self.resource.holder,
                Some(entry.task.id),
                "resource task started without holding the resource"
            );
        }
        let end = self.clock + entry.proc_time;
        let task_id = entry.task.id;
        m.in_service = Some(InService {
            entry,
            start: self.clock,
            end,
        });
        self.schedule(end, EventKind::Completion { machine, task: task_id });
    }

    fn handle_completion(&mut self, machine: MachineId, task: TaskId, bidder: &mut dyn Bidder) {
        let idx = machine as usize;
        let svc = self.machines[idx]
            .in_service
            .take()
            .expect("completion on idle machine");
        assert_eq!(svc.entry.task.id, task, "completion for the wrong task");

        let record = CompletionRecord::new(
            task,
            machine,
            self.clock,
            svc.entry.task.deadline,
            svc.entry.proc_time,
        );
        self.energy += self.machines[idx].spec.energy_rate * svc.entry.proc_time;
        self.completions.push(record.clone());

        if svc.entry.task.needs_resource {
            assert_eq!(self.resource.holder, Some(task));
            self.resource.holder = None;
            self.pump_resource();
        }

        let log_idx = self.log_index[&task];
        let entry = &self.assignment_log[log_idx];
        let ctx = BidContext {
            time: entry.time,
            task: &self.tasks[self.task_index[&task]],
            candidates: &entry.candidates,
            bids: &entry.bids,
            winner: entry.winner,
        };
        bidder.observe(&record, &ctx);

        self.try_start(idx);
    }

    fn handle_grant(&mut self) {
        self.grant_pending = false;
        assert!(self.resource.holder.is_none(), "grant while resource is held");
        let best = self
            .resource
            .waiters
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.joined
                    .total_cmp(&b.joined)
                    .then(a.task.cmp(&b.task))
            })
            .map(|(i, _)| i)
            .expect("grant with no waiters");
        let waiter = self.resource.waiters.remove(best);
        self.resource.holder = Some(waiter.task);

        let machine = self.assigned_machine[&waiter.task];
        let idx = machine as usize;
        assert!(self.blocked[idx], "granted task's machine was not blocked");
        self.blocked[idx] = false;
        self.start_scheduled[idx] = true;
        self.schedule(self.clock, EventKind::ServiceStart { machine });
    }

    /// Starts the head-of-queue task if the machine is free, or lines it up
    /// for the shared resource and blocks the machine.
    fn try_start(&mut self, idx: usize) {
        if self.machines[idx].busy() || self.start_scheduled[idx] || self.blocked[idx] {
            return;
        }
        let Some(head) = self.machines[idx].queue.front() else {
            return;
        };
        let machine = self.machines[idx].spec.id;
        if head.task.needs_resource {
            let task = head.task.id;
            if !self.resource.is_waiting(task) {
                self.resource.waiters.push(Waiter {
                    task,
                    joined: self.clock,
                });
            }
            self.blocked[idx] = true;
            self.pump_resource();
        } else {
            self.start_scheduled[idx] = true;
            self.schedule(self.clock, EventKind::ServiceStart { machine });
        }
    }

    fn pump_resource(&mut self) {
        if self.resource.holder.is_none() && !self.grant_pending && !self.resource.waiters.is_empty()
        {
            self.grant_pending = true;
            self.schedule(self.clock, EventKind::ResourceGrant);
        }
    }

    fn check_invariants(&self) {
        if let Some(holder) = self.resource.holder {
            assert!(
                self.task(holder).needs_resource,
                "resource held by a task that does not need it"
            );
        }
        for (i, w) in self.resource.waiters.iter().enumerate() {
            assert!(
                self.resource.waiters[i + 1..].iter().all(|v| v.task != w.task),
                "duplicate resource waiter"
            );
        }
        for (idx, m) in self.machines.iter().enumerate() {
            assert_eq!(m.load(), m.queue.len() + usize::from(m.busy()));
            if let Some(svc) = &m.in_service {
                assert!(svc.end >= self.clock);
            }
            if self.blocked[idx] {
                let head = m.queue.front().expect("blocked machine with empty queue");
                assert!(head.task.needs_resource);
                assert!(!m.busy());
            }
        }
    }

    fn finish(self) -> SimOutcome {
        let in_system: usize = self
            .machines
            .iter()
            .map(|m| m.queue.len() + usize::from(m.busy()))
            .sum();
        let unfinished = in_system + self.skipped_arrivals;
        let generated = self.tasks.len();
        assert_eq!(
            generated,
            self.completions.len() + unfinished + self.unassignable.len(),
            "task conservation violated"
        );
        SimOutcome {
            completions: self.completions,
            assignment_log: self.assignment_log,
            unassignable: self.unassignable,
            generated,
            unfinished,
            energy: self.energy,
        }
    }
}

/// Runs one full simulation: all events up to and including `horizon`.
pub fn run(
    tasks: &[TaskSpec],
    fleet: &[MachineSpec],
    bidder: &mut dyn Bidder,
    horizon: f64,
) -> Result<SimOutcome, EngineError> {
    let mut state = SimState::new(tasks, fleet, horizon)?;
    while state.step(bidder)?.is_some() {}
    Ok(state.finish())
}
