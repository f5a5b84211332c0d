//! GPU bookkeeping shared by every cluster backend.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Resubmissions after a fix jump the queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobPriority {
    Normal,
    Fix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocRequest {
    pub key: String,
    pub gpus: u32,
    pub priority: JobPriority,
    /// Arrival order; lower is older.
    pub order: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Allocation {
    Assigned(Vec<u32>),
    Wait,
}

#[derive(Debug, Clone)]
pub struct GpuPool {
    fleet: u32,
    free: BTreeSet<u32>,
    live: BTreeMap<String, Vec<u32>>,
    waiting: Vec<AllocRequest>,
}

impl GpuPool {
    pub fn new(fleet: u32) -> Self {
        Self {
            fleet,
            free: (0..fleet).collect(),
            live: BTreeMap::new(),
            waiting: Vec::new(),
        }
    }

    pub fn fleet(&self) -> u32 {
        self.fleet
    }

    pub fn free_count(&self) -> u32 {
        self.free.len() as u32
    }

    pub fn allocated_count(&self) -> u32 {
        self.live.values().map(|g| g.len() as u32).sum()
    }

    pub fn free_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.free.iter().copied()
    }

    pub fn assignment(&self, key: &str) -> Option<&[u32]> {
        self.live.get(key).map(Vec::as_slice)
    }

    pub fn waiting(&self) -> &[AllocRequest] {
        &self.waiting
    }

    /// First-fit over free GPU ids. A request waits if it does not fit or if
    /// an equal-or-higher priority request is already waiting ahead of it.
    pub fn allocate(&mut self, req: AllocRequest) -> Allocation {
        assert!(req.gpus >= 1, "allocation request must ask for at least one GPU");
        let blocked = self.waiting.iter().any(|w| w.priority >= req.priority);
        if !blocked && self.free.len() as u32 >= req.gpus {
            let gpus = self.take(req.gpus);
            self.live.insert(req.key, gpus.clone());
            Allocation::Assigned(gpus)
        } else {
            self.waiting.push(req);
            Allocation::Wait
        }
    }

    /// Frees the GPUs held by `key` and serves waiting requests, highest
    /// priority first and oldest within a priority. Returns the new
    /// assignments in the order they were made.
    pub fn release(&mut self, key: &str) -> Vec<(String, Vec<u32>)> {
        self.free_held(key);
        self.serve()
    }

    /// Frees the GPUs held by `key` without serving anyone. Follow with
    /// [`GpuPool::serve`].
    pub fn free_held(&mut self, key: &str) {
        if let Some(gpus) = self.live.remove(key) {
            self.free.extend(gpus);
        }
    }

    pub fn cancel_waiting(&mut self, key: &str) -> bool {
        let before = self.waiting.len();
        self.waiting.retain(|w| w.key != key);
        before != self.waiting.len()
    }

    /// Assigns free GPUs to waiting requests in priority order.
    pub fn serve(&mut self) -> Vec<(String, Vec<u32>)> {
        let mut out = Vec::new();
        while let Some(idx) = self
            .waiting
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.priority.cmp(&b.priority).then(b.order.cmp(&a.order)))
            .map(|(i, _)| i)
        {
            if self.waiting[idx].gpus > self.free.len() as u32 {
                break;
            }
            let req = self.waiting.remove(idx);
            let gpus = self.take(req.gpus);
            self.live.insert(req.key.clone(), gpus.clone());
            out.push((req.key, gpus));
        }
        out
    }

    fn take(&mut self, n: u32) -> Vec<u32> {
        let ids: Vec<u32> = self.free.iter().take(n as usize).copied().collect();
        for id in &ids {
            self.free.remove(id);
        }
        ids
    }

    /// Conservation and exclusivity check.
    pub fn is_consistent(&self) -> bool {
        let mut seen = BTreeSet::new();
        for id in self.live.values().flatten() {
            if !seen.insert(*id) || self.free.contains(id) {
                return false;
            }
        }
        self.allocated_count() + self.free_count() == self.fleet
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(key: &str, priority: JobPriority, order: u64) -> AllocRequest {
        AllocRequest {
            key: key.into(),
            gpus: 1,
            priority,
            order,
        }
    }

    #[test]
    fn first_fit_takes_lowest_ids() {
        let mut pool = GpuPool::new(4);
        assert_eq!(
            pool.allocate(req("a", JobPriority::Normal, 0)),
            Allocation::Assigned(vec![0])
        );
        assert_eq!(
            pool.allocate(req("b", JobPriority::Normal, 1)),
            Allocation::Assigned(vec![1])
        );
        assert!(pool.is_consistent());
    }

    #[test]
    fn empty_pool_waits() {
        let mut pool = GpuPool::new(0);
        assert_eq!(pool.allocate(req("a", JobPriority::Normal, 0)), Allocation::Wait);
    }

    #[test]
    fn release_serves_fix_linked_request_first() {
        let mut pool = GpuPool::new(1);
        pool.allocate(req("running", JobPriority::Normal, 0));
        assert_eq!(pool.allocate(req("normal", JobPriority::Normal, 1)), Allocation::Wait);
        assert_eq!(pool.allocate(req("fix", JobPriority::Fix, 2)), Allocation::Wait);
        let served = pool.release("running");
        assert_eq!(served, vec![("fix".to_string(), vec![0])]);
        assert_eq!(pool.release("fix"), vec![("normal".to_string(), vec![0])]);
        assert!(pool.is_consistent());
    }

    #[test]
    fn multi_gpu_requests_block_head_of_line() {
        let mut pool = GpuPool::new(4);
        pool.allocate(AllocRequest {
            key: "big".into(),
            gpus: 3,
            priority: JobPriority::Normal,
            order: 0,
        });
        let wide = AllocRequest {
            key: "wide".into(),
            gpus: 2,
            priority: JobPriority::Normal,
            order: 1,
        };
        assert_eq!(pool.allocate(wide), Allocation::Wait);
        // A later small request must not overtake the waiting one.
        assert_eq!(pool.allocate(req("small", JobPriority::Normal, 2)), Allocation::Wait);
        let served = pool.release("big");
        assert_eq!(served[0].0, "wide");
        assert_eq!(served[1].0, "small");
        assert!(pool.is_consistent());
    }
}
