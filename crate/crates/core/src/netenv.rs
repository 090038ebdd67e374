//! The network environment: delayed header flooding, the content cloud and
//! per-node download budgets.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::block::{BlockId, BlockStore, Commitment, Content};

/// Recipients of a queued header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    All,
    Node(u32),
    /// One side of a network split.
    Group(u8),
}

/// Header deliveries keyed by the slot they are due in.
#[derive(Clone, Debug, Default)]
pub struct HeaderQueue {
    due: BTreeMap<u64, Vec<(BlockId, Target)>>,
}

impl HeaderQueue {
    pub fn enqueue(&mut self, slot: u64, block: BlockId, target: Target) {
        self.due.entry(slot).or_default().push((block, target));
    }

    /// Removes and returns every delivery due at or before `slot`.
    pub fn pop_due(&mut self, slot: u64) -> Vec<(BlockId, Target)> {
        let later = self.due.split_off(&(slot + 1));
        let now = std::mem::replace(&mut self.due, later);
        now.into_values().flatten().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.due.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("content commitment does not match header {0}")]
    CommitmentMismatch(BlockId),
}

/// Insert-only store of contents keyed by commitment.
#[derive(Clone, Debug, Default)]
pub struct ContentCloud {
    map: HashMap<Commitment, Content>,
    by_commitment: HashMap<Commitment, Vec<BlockId>>,
    available: Vec<bool>,
}

impl ContentCloud {
    /// Registers a new header so its availability can be tracked.
    pub fn register(&mut self, block: BlockId, commitment: Commitment) {
        let i = block as usize;
        if self.available.len() <= i {
            self.available.resize(i + 1, false);
        }
        if self.map.contains_key(&commitment) {
            self.available[i] = true;
        }
        self.by_commitment.entry(commitment).or_default().push(block);
    }

    /// Stores `content` if it matches the header's commitment. Returns the
    /// blocks that became available (empty on a repeated upload).
    pub fn upload(&mut self, store: &BlockStore, block: BlockId, content: Content) -> Result<Vec<BlockId>, EnvError> {
        let c = store.get(block).commitment;
        if content.commitment() != c {
            return Err(EnvError::CommitmentMismatch(block));
        }
        if self.map.contains_key(&c) {
            return Ok(Vec::new());
        }
        self.map.insert(c, content);
        let blocks = self.by_commitment.get(&c).cloned().unwrap_or_default();
        for &b in &blocks {
            if self.available.len() <= b as usize {
                self.available.resize(b as usize + 1, false);
            }
            self.available[b as usize] = true;
        }
        Ok(blocks)
    }

    pub fn is_available(&self, block: BlockId) -> bool {
        self.available.get(block as usize).copied().unwrap_or(false)
    }

    pub fn content(&self, store: &BlockStore, block: BlockId) -> Option<&Content> {
        self.map.get(&store.get(block).commitment)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Token bucket measured in blocks: refills `per_slot` each slot, and carries
/// at most `carry_cap` unused blocks into the next slot.
#[derive(Clone, Debug)]
pub struct CapacityMeter {
    pub per_slot: f64,
    pub carry_cap: f64,
    budget: f64,
}

impl CapacityMeter {
    pub fn new(per_slot: f64) -> Self {
        CapacityMeter { per_slot, carry_cap: 1.0, budget: 0.0 }
    }

    pub fn start_slot(&mut self) {
        self.budget = self.budget.min(self.carry_cap) + self.per_slot;
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn has_budget(&self) -> bool {
        self.budget > BUDGET_EPS
    }

    /// Spends up to `amount` and returns what was spent.
    pub fn spend(&mut self, amount: f64) -> f64 {
        let x = amount.min(self.budget).max(0.0);
        self.budget -= x;
        if self.budget < BUDGET_EPS {
            self.budget = 0.0;
        }
        x
    }
}

const BUDGET_EPS: f64 = 1e-9;

/// Result of a content request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RequestOutcome {
    Fetched,
    Unavailable,
    Throttled,
}

/// A two-sided network split that heals at `heal_slot`.
#[derive(Clone, Debug)]
pub struct Partition {
    pub group: Vec<u8>,
    pub heal_slot: u64,
}

/// Adversary delivery that bypasses delay and budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Push {
    pub target: Target,
    pub block: BlockId,
    pub content: bool,
}

/// The environment shared by all nodes.
#[derive(Clone, Debug)]
pub struct Env {
    pub delay_slots: u64,
    pub queue: HeaderQueue,
    pub cloud: ContentCloud,
    pub partition: Option<Partition>,
    pushes: Vec<Push>,
    broadcast: Vec<bool>,
    public_tip: BlockId,
    public_height: u32,
}

impl Env {
    pub fn new(delay_slots: u64) -> Self {
        Env {
            delay_slots,
            queue: HeaderQueue::default(),
            cloud: ContentCloud::default(),
            partition: None,
            pushes: Vec::new(),
            broadcast: Vec::new(),
            public_tip: 0,
            public_height: 0,
        }
    }

    fn note_public(&mut self, store: &BlockStore, block: BlockId) {
        let h = store.height(block);
        if h > self.public_height {
            self.public_height = h;
            self.public_tip = block;
        }
    }

    /// Tip of the longest header chain ever made public.
    pub fn public_tip(&self) -> BlockId {
        self.public_tip
    }

    /// Floods a header to every node by the forced deadline. Returns false
    /// if the header was already broadcast.
    pub fn broadcast_header(&mut self, store: &BlockStore, block: BlockId, origin: Option<u32>, slot: u64) -> bool {
        let i = block as usize;
        if self.broadcast.len() <= i {
            self.broadcast.resize(i + 1, false);
        }
        if self.broadcast[i] {
            return false;
        }
        self.broadcast[i] = true;
        self.note_public(store, block);
        let deadline = slot + self.delay_slots;
        match (&self.partition, origin) {
            (Some(p), Some(o)) if slot < p.heal_slot && (o as usize) < p.group.len() => {
                let g = p.group[o as usize];
                self.queue.enqueue(deadline, block, Target::Group(g));
                self.queue.enqueue(deadline.max(p.heal_slot), block, Target::Group(1 - g));
            }
            _ => self.queue.enqueue(deadline, block, Target::All),
        }
        true
    }

    /// Stores content; see [`ContentCloud::upload`].
    pub fn upload_content(&mut self, store: &BlockStore, block: BlockId, content: Content) -> Result<Vec<BlockId>, EnvError> {
        self.cloud.upload(store, block, content)
    }

    /// Pays for a download of `block` given `paid` blocks already spent on it.
    pub fn request_content(&self, meter: &mut CapacityMeter, block: BlockId, paid: &mut f64) -> RequestOutcome {
        if !self.cloud.is_available(block) {
            return RequestOutcome::Unavailable;
        }
        let need = 1.0 - *paid;
        if meter.budget() + BUDGET_EPS >= need {
            meter.spend(need);
            *paid = 1.0;
            RequestOutcome::Fetched
        } else {
            *paid += meter.spend(need);
            RequestOutcome::Throttled
        }
    }

    /// Queues an immediate delivery that bypasses delay and budget.
    pub fn adversary_push(&mut self, store: &BlockStore, target: Target, block: BlockId, content: bool) {
        if target == Target::All {
            self.note_public(store, block);
        }
        self.pushes.push(Push { target, block, content });
    }

    pub fn take_pushes(&mut self) -> Vec<Push> {
        std::mem::take(&mut self.pushes)
    }

    pub fn in_group(&self, node: u32, target: Target) -> bool {
        match target {
            Target::All => true,
            Target::Node(n) => n == node,
            Target::Group(g) => self.partition.as_ref().is_some_and(|p| p.group.get(node as usize) == Some(&g)),
        }
    }
}
