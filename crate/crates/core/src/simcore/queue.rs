//! Multi-CPU server queue.
//!
//! Offloaded tasks reach the server when their upload finishes and are served
//! in arrival order by the earliest-free CPU.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

use super::ServerState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadJob {
    pub user: usize,
    /// Upload completion time within the slot.
    pub arrival_s: f64,
    pub processing_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledJob {
    pub user: usize,
    pub arrival_s: f64,
    pub processing_s: f64,
    /// Free time of the CPU the job was placed on.
    pub cpu_free_s: f64,
    pub start_s: f64,
    /// Total offload delay: upload, queueing and processing.
    pub finish_s: f64,
}

/// Min-heap entry keyed on a CPU's free time.
#[derive(Debug, Clone, Copy)]
struct FreeAt(f64);

impl PartialEq for FreeAt {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FreeAt {}

impl PartialOrd for FreeAt {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FreeAt {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0)
    }
}

/// Sorts jobs by arrival, ties broken by ascending user id.
pub fn arrival_order(jobs: &[OffloadJob]) -> Vec<OffloadJob> {
    let mut ordered = jobs.to_vec();
    ordered.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s).then(a.user.cmp(&b.user)));
    ordered
}

/// Schedules `jobs` on the server's CPUs, starting from its current free
/// times, and writes the final free times back. Results are in service order.
pub fn schedule_server(jobs: &[OffloadJob], server: &mut ServerState) -> Result<Vec<ScheduledJob>> {
    if server.cpu_free_times_s.is_empty() {
        return Err(Error::Structure("server has no CPUs".into()));
    }
    for job in jobs {
        if !(job.arrival_s >= 0.0 && job.processing_s >= 0.0) {
            return Err(Error::Domain(format!(
                "job for user {} has negative or NaN times",
                job.user
            )));
        }
    }
    let mut heap: BinaryHeap<FreeAt> = server.cpu_free_times_s.iter().map(|&t| FreeAt(t)).collect();
    let mut out = Vec::with_capacity(jobs.len());
    for job in arrival_order(jobs) {
        let FreeAt(cpu_free_s) = heap.pop().expect("heap holds one entry per CPU");
        let start_s = job.arrival_s.max(cpu_free_s);
        let finish_s = start_s + job.processing_s;
        heap.push(FreeAt(finish_s));
        out.push(ScheduledJob {
            user: job.user,
            arrival_s: job.arrival_s,
            processing_s: job.processing_s,
            cpu_free_s,
            start_s,
            finish_s,
        });
    }
    let mut free: Vec<f64> = heap.into_iter().map(|f| f.0).collect();
    free.sort_by(f64::total_cmp);
    server.cpu_free_times_s = free;
    Ok(out)
}
