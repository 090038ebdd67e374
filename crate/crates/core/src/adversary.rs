//! Adversary strategies: private withholding, the teaser attack under PoW
//! and PoS, and the network-split scenario.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::block::{BlockId, Content, GENESIS};
use crate::lottery::BpoId;
use crate::netenv::Target;
use crate::sim::World;
use crate::trace::{TraceEvent, TraceSink};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    None,
    Private,
    Teaser,
    PosTeaser,
    Partition,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Private => "private",
            Strategy::Teaser => "teaser",
            Strategy::PosTeaser => "pos-teaser",
            Strategy::Partition => "partition",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub strategy: Strategy,
    /// Blocks per second mined by SPV miners on the longest public header chain.
    #[serde(default)]
    pub spv_rate: f64,
    /// Seconds the network stays split (partition scenario).
    #[serde(default = "default_partition")]
    pub partition_duration: f64,
    /// Seconds before the adversary becomes active.
    #[serde(default)]
    pub run_after: f64,
}

fn default_partition() -> f64 {
    15.0
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { strategy: Strategy::None, spv_rate: 0.0, partition_duration: default_partition(), run_after: 0.0 }
    }
}

/// What the adversary observes about honest progress at its turn in a slot.
#[derive(Clone, Debug, Default)]
pub struct HonestView {
    /// Highest honestly produced block and its height.
    pub honest_tip: BlockId,
    pub honest_height: u32,
    /// Shortest and longest honest dChain lengths.
    pub l_min: u32,
    pub l_max: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdversaryStats {
    pub blocks: u64,
    pub releases: u64,
    pub content_uploads: u64,
    pub restarts: u64,
    pub max_lead: i64,
}

/// A withheld PoW chain forking off `fork`.
#[derive(Clone, Debug, Default)]
struct Withheld {
    fork: BlockId,
    chain: Vec<BlockId>,
    contents: Vec<Content>,
    /// Number of chain blocks whose headers are public.
    released: usize,
    /// Number of chain blocks whose contents are public.
    cursor: usize,
}

/// Adversary BPOs since the fork, for equivocating PoS strategies.
#[derive(Clone, Debug, Default)]
struct PosPool {
    fork: BlockId,
    bpos: Vec<BpoId>,
    published: HashSet<BpoId>,
}

#[derive(Clone, Debug)]
pub struct Adversary {
    pub strategy: Strategy,
    active_from: u64,
    pow: Withheld,
    pos: PosPool,
    last_teased: u32,
    last_lead: Option<i64>,
    pub stats: AdversaryStats,
}

impl Adversary {
    pub fn new(strategy: Strategy, active_from: u64) -> Self {
        Adversary {
            strategy,
            active_from,
            pow: Withheld::default(),
            pos: PosPool::default(),
            last_teased: 0,
            last_lead: None,
            stats: AdversaryStats::default(),
        }
    }

    /// Height of the adversary's best private chain.
    pub fn private_height(&self, world: &World) -> u32 {
        match self.strategy {
            Strategy::Private | Strategy::Teaser => world.store.height(self.pow.fork) + self.pow.chain.len() as u32,
            Strategy::PosTeaser => {
                let mut last = world.store.get(self.pos.fork).bpo.slot;
                let mut n = 0;
                for b in &self.pos.bpos {
                    if b.slot > last {
                        last = b.slot;
                        n += 1;
                    }
                }
                world.store.height(self.pos.fork) + n
            }
            _ => 0,
        }
    }

    /// Runs the adversary's turn: consumes its BPOs of this slot and decides
    /// on releases.
    pub fn step(&mut self, world: &mut World, slot: u64, bpos: &[BpoId], hv: &HonestView, sink: &mut dyn TraceSink) {
        if slot < self.active_from {
            return;
        }
        match self.strategy {
            Strategy::None | Strategy::Partition => return,
            Strategy::Private => self.private_step(world, slot, bpos, hv, sink),
            Strategy::Teaser => self.teaser_step(world, slot, bpos, hv, sink),
            Strategy::PosTeaser => self.pos_teaser_step(world, slot, bpos, hv, sink),
        }
        let lead = self.private_height(world) as i64 - hv.l_max as i64;
        self.stats.max_lead = self.stats.max_lead.max(lead);
        if self.last_lead != Some(lead) {
            self.last_lead = Some(lead);
            sink.record(TraceEvent::LeadSample { slot, lead });
        }
    }

    fn extend_withheld(&mut self, world: &mut World, slot: u64, bpos: &[BpoId], sink: &mut dyn TraceSink) {
        // A chain needs strictly increasing slots, so one block per slot.
        let Some(&bpo) = bpos.first() else { return };
        let parent = self.pow.chain.last().copied().unwrap_or(self.pow.fork);
        if world.store.get(parent).bpo.slot >= slot {
            return;
        }
        let content = world.fresh_content();
        let b = world.produce(bpo, parent, &content, Vec::new(), slot, sink);
        self.pow.chain.push(b);
        self.pow.contents.push(content);
        self.stats.blocks += 1;
    }

    fn restart_pow(&mut self, hv: &HonestView) {
        self.pow = Withheld { fork: hv.honest_tip, ..Withheld::default() };
        self.stats.restarts += 1;
    }

    fn private_step(&mut self, world: &mut World, slot: u64, bpos: &[BpoId], hv: &HonestView, sink: &mut dyn TraceSink) {
        self.extend_withheld(world, slot, bpos, sink);
        if self.private_height(world) < hv.honest_height {
            self.restart_pow(hv);
        }
    }

    fn teaser_step(&mut self, world: &mut World, slot: u64, bpos: &[BpoId], hv: &HonestView, sink: &mut dyn TraceSink) {
        self.extend_withheld(world, slot, bpos, sink);
        let p = self.private_height(world);
        let h = hv.honest_height;
        if p <= h {
            self.restart_pow(hv);
            return;
        }
        if h <= self.last_teased {
            return;
        }
        self.last_teased = h;
        let fork_h = world.store.height(self.pow.fork);
        // Release headers up to one above the honest height.
        let upto = (h + 1 - fork_h) as usize;
        let mut released = Vec::new();
        let mut with_content = Vec::new();
        if upto > self.pow.released {
            released.extend_from_slice(&self.pow.chain[self.pow.released..upto]);
            with_content.resize(released.len(), false);
            self.pow.released = upto;
            world.env.adversary_push(&world.store, Target::All, self.pow.chain[upto - 1], false);
        }
        // Content of the next unreleased-content block only, and only if it
        // cannot outgrow any honest dChain once processed.
        let c = self.pow.cursor;
        if c < self.pow.released && fork_h + (c as u32) < hv.l_min {
            let b = self.pow.chain[c];
            let content = self.pow.contents[c].clone();
            world.upload(b, content, slot, sink);
            self.pow.cursor += 1;
            self.stats.content_uploads += 1;
            if let Some(i) = released.iter().position(|&x| x == b) {
                with_content[i] = true;
            } else {
                released.push(b);
                with_content.push(true);
            }
        }
        if !released.is_empty() {
            self.stats.releases += 1;
            sink.record(TraceEvent::AdversaryRelease { slot, blocks: released, with_content });
        }
    }

    fn pos_teaser_step(&mut self, world: &mut World, slot: u64, bpos: &[BpoId], hv: &HonestView, sink: &mut dyn TraceSink) {
        self.pos.bpos.extend_from_slice(bpos);
        let h = hv.honest_height;
        if self.private_height(world) <= h {
            let fork_slot = world.store.get(hv.honest_tip).bpo.slot;
            self.pos.fork = hv.honest_tip;
            self.pos.bpos.retain(|b| b.slot > fork_slot);
            self.stats.restarts += 1;
            return;
        }
        if h <= self.last_teased {
            return;
        }
        let fork = self.pos.fork;
        let fork_h = world.store.height(fork);
        // Top content block sits at the shortest honest dChain length so it
        // can never win the chain selection, with a withheld barrier above.
        let top_h = hv.l_min;
        if top_h <= fork_h {
            return;
        }
        let Some(plan) = self.plan_tease(world.store.get(fork).bpo.slot, fork_h, top_h, h + 1) else { return };
        self.last_teased = h;
        let mut parent = fork;
        let mut blocks = Vec::with_capacity(plan.len());
        let mut with_content = Vec::with_capacity(plan.len());
        for (i, bpo) in plan.iter().enumerate() {
            let height = fork_h + 1 + i as u32;
            let content = world.fresh_content();
            let b = world.produce(*bpo, parent, &content, Vec::new(), slot, sink);
            self.stats.blocks += 1;
            let public = height <= top_h;
            if public {
                world.upload(b, content, slot, sink);
                self.stats.content_uploads += 1;
            }
            self.pos.published.insert(*bpo);
            blocks.push(b);
            with_content.push(public);
            parent = b;
        }
        world.env.adversary_push(&world.store, Target::All, parent, false);
        self.stats.releases += 1;
        sink.record(TraceEvent::AdversaryRelease { slot, blocks, with_content });
    }

    /// Picks BPOs for one tease chain from the fork to `target_h`: any BPOs
    /// below `top_h`, never-published BPOs at `top_h` and the barrier just
    /// above it, then any BPOs. Slots must strictly increase.
    fn plan_tease(&self, fork_slot: u64, fork_h: u32, top_h: u32, target_h: u32) -> Option<Vec<BpoId>> {
        let mut sorted: Vec<BpoId> = self.pos.bpos.clone();
        sorted.sort();
        let mut plan = Vec::new();
        let mut last = fork_slot;
        let mut it = sorted.iter();
        for height in fork_h + 1..=target_h {
            let fresh = height == top_h || height == top_h + 1;
            let next = it.by_ref().find(|b| b.slot > last && (!fresh || !self.pos.published.contains(b)))?;
            plan.push(*next);
            last = next.slot;
        }
        Some(plan)
    }
}

/// Groups for the network split: the first half of the nodes and the rest.
pub fn partition_groups(n_nodes: u32) -> Vec<u8> {
    (0..n_nodes).map(|i| u8::from(i >= n_nodes / 2)).collect()
}

/// Tip of the common prefix of the given chain tips.
pub fn agreed_block(store: &crate::block::BlockStore, tips: &[BlockId]) -> BlockId {
    tips.iter().copied().reduce(|a, b| store.common_ancestor(a, b)).unwrap_or(GENESIS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_split_evenly() {
        assert_eq!(partition_groups(4), vec![0, 0, 1, 1]);
        assert_eq!(partition_groups(5).iter().filter(|&&g| g == 1).count(), 3);
    }

    #[test]
    fn plan_uses_fresh_bpos_at_top_and_barrier() {
        let mut a = Adversary::new(Strategy::PosTeaser, 0);
        let bpo = |slot| BpoId { slot, node: 9, honest: false, seq: 0 };
        a.pos.bpos = (1..=8).map(bpo).collect();
        a.pos.published.extend([bpo(1), bpo(2), bpo(3)]);
        // Heights 1..=5 with top content at height 2.
        let plan = a.plan_tease(0, 0, 2, 5).unwrap();
        assert_eq!(plan.iter().map(|b| b.slot).collect::<Vec<_>>(), vec![1, 4, 5, 6, 7]);
        assert!(a.plan_tease(0, 0, 2, 9).is_none());
    }
}
