//! Brute-force timeline construction for tiny instances.
//!
//! Builds the schedule chronologically by repeatedly scanning for the next
//! thing that can happen, with no event queue: apply every completion at
//! that instant, then close the instant under resource grants and service
//! starts, then process the arrival. Used to validate the event-driven
//! engine; intentionally shares nothing with it beyond the domain types and
//! the bidder under test.

use std::collections::BTreeSet;

use crate::bidding::Bidder;
use crate::domain::{MachineId, MachineSpec, MachineState, TaskId, TaskSpec};
use crate::engine::EngineError;
use crate::rng::{Stream, StreamId};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCompletion {
    pub task: TaskId,
    pub machine: MachineId,
    pub completion: f64,
}

struct Machine {
    queue: Vec<usize>,
    service: Option<(usize, f64)>,
}

struct Timeline<'a> {
    tasks: &'a [TaskSpec],
    fleet: &'a [MachineSpec],
    machines: Vec<Machine>,
    holder: Option<usize>,
    waiting: Vec<(f64, usize)>,
    completions: Vec<OracleCompletion>,
}

impl<'a> Timeline<'a> {
    fn proc_time(&self, task: usize, machine: usize) -> f64 {
        self.tasks[task].workload / self.fleet[machine].speed
    }

    /// Rebuilds a machine-state view so the bidder under test sees exactly
    /// what the engine would hand it.
    fn machine_view(&self, machine: usize, now: f64) -> MachineState {
        let mut view = MachineState::new(self.fleet[machine].clone());
        if let Some((task, end)) = self.machines[machine].service {
            let p = self.proc_time(task, machine);
            view.in_service = Some(crate::domain::InService {
                entry: crate::domain::QueueEntry {
                    task: self.tasks[task].clone(),
                    proc_time: p,
                },
                start: end - p,
                end,
            });
        }
        for &t in &self.machines[machine].queue {
            view.queue.push_back(crate::domain::QueueEntry {
                task: self.tasks[t].clone(),
                proc_time: self.proc_time(t, machine),
            });
        }
        debug_assert!(view.queueing_time(now) >= 0.0);
        view
    }

    fn contention(&self) -> usize {
        self.waiting.len() + usize::from(self.holder.is_some())
    }

    fn start_service(&mut self, machine: usize, now: f64) {
        let task = self.machines[machine].queue.remove(0);
        let end = now + self.proc_time(task, machine);
        self.machines[machine].service = Some((task, end));
    }

    /// Closes the current instant: line up resource tasks at free machine
    /// heads, hand the resource over, and start whatever can start.
    fn settle(&mut self, now: f64) {
        loop {
            let mut progressed = false;
            for m in 0..self.machines.len() {
                if self.machines[m].service.is_none() {
                    if let Some(&head) = self.machines[m].queue.first() {
                        if self.tasks[head].needs_resource
                            && self.waiting.iter().all(|&(_, t)| t != head)
                        {
                            self.waiting.push((now, head));
                            progressed = true;
                        }
                    }
                }
            }
            if self.holder.is_none() && !self.waiting.is_empty() {
                let best = self
                    .waiting
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        a.0.total_cmp(&b.0).then(self.tasks[a.1].id.cmp(&self.tasks[b.1].id))
                    })
                    .map(|(i, _)| i)
                    .expect("nonempty waiting line");
                let (_, task) = self.waiting.remove(best);
                self.holder = Some(task);
                let machine = (0..self.machines.len())
                    .find(|&m| self.machines[m].queue.first() == Some(&task))
                    .expect("granted task must be at the head of its machine");
                self.start_service(machine, now);
                progressed = true;
            }
            for m in 0..self.machines.len() {
                if self.machines[m].service.is_none() {
                    if let Some(&head) = self.machines[m].queue.first() {
                        if !self.tasks[head].needs_resource {
                            self.start_service(m, now);
                            progressed = true;
                        }
                    }
                }
            }
            if !progressed {
                break;
            }
        }
    }

    fn complete_all_at(&mut self, now: f64) {
        for m in 0..self.machines.len() {
            if let Some((task, end)) = self.machines[m].service {
                if end == now {
                    self.machines[m].service = None;
                    self.completions.push(OracleCompletion {
                        task: self.tasks[task].id,
                        machine: self.fleet[m].id,
                        completion: now,
                    });
                    if self.tasks[task].needs_resource {
                        assert_eq!(self.holder, Some(task));
                        self.holder = None;
                    }
                }
            }
        }
    }
}

/// Chronological reference schedule. Completion times for every task
/// finished within the horizon, in completion order.
pub fn enumerate_timeline(
    tasks: &[TaskSpec],
    fleet: &[MachineSpec],
    bidder: &mut dyn Bidder,
    horizon: f64,
) -> Result<Vec<OracleCompletion>, EngineError> {
    let mut tl = Timeline {
        tasks,
        fleet,
        machines: (0..fleet.len())
            .map(|_| Machine {
                queue: Vec::new(),
                service: None,
            })
            .collect(),
        holder: None,
        waiting: Vec::new(),
        completions: Vec::new(),
    };

    let mut next_arrival = 0usize;
    loop {
        let t_comp = tl
            .machines
            .iter()
            .filter_map(|m| m.service.map(|(_, end)| end))
            .fold(f64::INFINITY, f64::min);
        let t_arr = tasks
            .get(next_arrival)
            .map_or(f64::INFINITY, |t| t.arrival);
        let now = t_comp.min(t_arr);
        if !now.is_finite() || now > horizon {
            break;
        }

        if t_comp <= t_arr {
            tl.complete_all_at(now);
            tl.settle(now);
        } else {
            let idx = next_arrival;
            next_arrival += 1;
            let task = &tasks[idx];
            let candidates: Vec<usize> = (0..fleet.len())
                .filter(|&m| fleet[m].can_serve(task))
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let contention = tl.contention();
            let mut best: Option<(usize, f64)> = None;
            for &m in &candidates {
                let view = tl.machine_view(m, now);
                let bid = bidder.bid(now, task, &view, contention);
                if !bid.is_finite() {
                    return Err(EngineError::NonFiniteBid {
                        task: task.id,
                        machine: fleet[m].id,
                    });
                }
                let better = match best {
                    None => true,
                    Some((_, bb)) => bid < bb,
                };
                if better {
                    best = Some((m, bid));
                }
            }
            let (winner, _) = best.expect("candidates were nonempty");
            tl.machines[winner].queue.push(idx);
            tl.settle(now);
        }
    }
    Ok(tl.completions)
}

/// A randomly drawn instance small enough to verify exhaustively.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub tasks: Vec<TaskSpec>,
    pub fleet: Vec<MachineSpec>,
    pub horizon: f64,
}

/// Draws an instance with at most 5 tasks and 3 machines. Resource tasks are
/// frequent so blocking paths get exercised, and the horizon sometimes cuts
/// runs short.
pub fn random_tiny_instance(seed: u64) -> TinyInstance {
    let mut s = Stream::new(seed, StreamId::Arrivals);
    let machine_count = 1 + s.pick(3);
    let type_count = 1 + s.pick(2) as u32;

    let fleet: Vec<MachineSpec> = (0..machine_count)
        .map(|id| {
            let mut caps = BTreeSet::new();
            for k in 0..type_count {
                if s.bernoulli(0.7) {
                    caps.insert(k);
                }
            }
            if caps.is_empty() {
                caps.insert(s.pick(type_count as usize) as u32);
            }
            MachineSpec::new(
                id as MachineId,
                caps,
                s.uniform(0.5, 2.0),
                s.uniform(1.0, 3.0),
            )
            .expect("generated machine is valid")
        })
        .collect();

    let task_count = 1 + s.pick(5);
    let mut at = 0.0;
    let tasks = (0..task_count)
        .map(|id| {
            at += s.uniform(0.0, 2.0);
            let rho = s.uniform(0.5, 4.0);
            TaskSpec::new(
                id as TaskId,
                at,
                s.pick(type_count as usize) as u32,
                rho,
                at + s.uniform(0.8, 2.0) * rho,
                1 + s.pick(3) as i32,
                s.bernoulli(0.6),
            )
            .expect("generated task is valid")
        })
        .collect();

    TinyInstance {
        tasks,
        fleet,
        horizon: s.uniform(8.0, 18.0),
    }
}

/// Runs the engine and the chronological enumerator on the same instance
/// with fresh bidders and demands exactly equal completions.
pub fn verify_instance(
    inst: &TinyInstance,
    mut fresh_bidder: impl FnMut() -> Box<dyn Bidder>,
) -> Result<(), String> {
    let mut engine_bidder = fresh_bidder();
    let outcome = crate::engine::run(
        &inst.tasks,
        &inst.fleet,
        engine_bidder.as_mut(),
        inst.horizon,
    )
    .map_err(|e| format!("engine failed: {e}"))?;
    let mut oracle_bidder = fresh_bidder();
    let reference = enumerate_timeline(
        &inst.tasks,
        &inst.fleet,
        oracle_bidder.as_mut(),
        inst.horizon,
    )
    .map_err(|e| format!("oracle failed: {e}"))?;

    let mut got: Vec<(TaskId, MachineId, f64)> = outcome
        .completions
        .iter()
        .map(|c| (c.task, c.machine, c.completion))
        .collect();
    let mut want: Vec<(TaskId, MachineId, f64)> = reference
        .iter()
        .map(|c| (c.task, c.machine, c.completion))
        .collect();
    got.sort_by_key(|c| c.0);
    want.sort_by_key(|c| c.0);
    if got != want {
        return Err(format!(
            "completions diverge:\n  engine: {got:?}\n  oracle: {want:?}"
        ));
    }
    Ok(())
}

/// Stateless bidder with hash-scrambled (but deterministic) bids. Explores
/// assignment patterns the cost heuristics never produce.
#[derive(Debug, Clone, Copy)]
pub struct HashBidder {
    pub salt: u64,
}

impl Bidder for HashBidder {
    fn name(&self) -> &'static str {
        "hash"
    }

    fn bid(
        &mut self,
        _now: f64,
        task: &TaskSpec,
        machine: &MachineState,
        _contention: usize,
    ) -> f64 {
        let mut h = self
            .salt
            .wrapping_add(task.id.wrapping_mul(0x9e3779b97f4a7c15))
            .wrapping_add(u64::from(machine.spec.id).wrapping_mul(0xbf58476d1ce4e5b9));
        h ^= h >> 30;
        h = h.wrapping_mul(0xbf58476d1ce4e5b9);
        h ^= h >> 27;
        h = h.wrapping_mul(0x94d049bb133111eb);
        h ^= h >> 31;
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
