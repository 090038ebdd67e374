//! Honest node: header tree, content scheduling under a download budget,
//! the longest processed chain and the confirmed ledger.

use serde::{Deserialize, Serialize};

use crate::block::{BlockId, BlockStore, GENESIS};
use crate::lottery::PosLottery;
use crate::netenv::{CapacityMeter, Env, RequestOutcome};
use crate::sapos::{self, LedgerEntry, ProofIndex};
use crate::trace::{TraceEvent, TraceSink};

pub const MAX_CANDIDATES: usize = 100;
pub const PARTIAL_CACHE: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulingPolicy {
    LongestHeaderChain,
    Greedy,
    FreshestBlock,
    SaposWrapped(Box<SchedulingPolicy>),
}

impl SchedulingPolicy {
    /// The ranking policy with any SaPoS wrapper removed.
    pub fn base(&self) -> &SchedulingPolicy {
        match self {
            SchedulingPolicy::SaposWrapped(inner) => inner.base(),
            p => p,
        }
    }

    pub fn blanks(&self) -> bool {
        matches!(self, SchedulingPolicy::SaposWrapped(_))
    }

    pub fn label(&self) -> String {
        match self {
            SchedulingPolicy::LongestHeaderChain => "longest-header-chain".into(),
            SchedulingPolicy::Greedy => "greedy".into(),
            SchedulingPolicy::FreshestBlock => "freshest-block".into(),
            SchedulingPolicy::SaposWrapped(inner) => format!("sapos({})", inner.label()),
        }
    }
}

const KNOWN: u8 = 1;
const PROCESSED: u8 = 2;
const BLANK: u8 = 4;
const UNAVAIL: u8 = 8;
const HAVE: u8 = 16;
const INVALID: u8 = 32;

/// Shared state a node reads during one slot.
pub struct View<'a> {
    pub slot: u64,
    pub store: &'a BlockStore,
    pub env: &'a Env,
    /// Header index by BPO; present under PoS lotteries.
    pub pos: Option<&'a PosLottery>,
    pub proofs: &'a ProofIndex,
    /// Proof deadline; present when SaPoS validity rules apply.
    pub k_epf: Option<u64>,
}

#[derive(Clone, Copy, Debug)]
struct Tip {
    tip: BlockId,
    /// Lowest unprocessed block on the chain ending at `tip`.
    first: BlockId,
    seen: u64,
}

#[derive(Clone, Copy, Debug)]
struct Task {
    block: BlockId,
    paid: f64,
    /// Amount paid before the current slot.
    prepaid: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub fetched: u64,
    pub blanked: u64,
    pub pushed_processed: u64,
    pub invalid_headers: u64,
    pub unavailable_hits: u64,
    pub evictions: u64,
    /// Paid work discarded by partial-cache eviction, in blocks.
    pub lost_work: f64,
    pub ledger_rollbacks: u64,
    pub blank_flips: u64,
    pub missing_content: u64,
    pub honest_blanked: u64,
    pub idle_with_candidates: u64,
}

/// State of one honest node.
#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: u32,
    pub policy: SchedulingPolicy,
    flags: Vec<u8>,
    tips: Vec<Tip>,
    tip: BlockId,
    meter: CapacityMeter,
    task: Option<Task>,
    partial: Vec<(BlockId, f64)>,
    seq: u64,
    dirty: bool,
    cached: Option<BlockId>,
    k_conf: Option<u64>,
    ledger: Vec<LedgerEntry>,
    digests: Vec<u64>,
    /// Every (block, blank) status this node ever confirmed.
    confirmations: Vec<(BlockId, bool)>,
    pub stats: NodeStats,
}

impl NodeState {
    /// `per_slot` is the download budget refill `C * tau`. Ledger tracking
    /// is enabled when `k_conf` is given.
    pub fn new(id: u32, policy: SchedulingPolicy, per_slot: f64, k_conf: Option<u64>) -> Self {
        NodeState {
            id,
            policy,
            flags: vec![KNOWN | PROCESSED | HAVE],
            tips: Vec::new(),
            tip: GENESIS,
            meter: CapacityMeter::new(per_slot),
            task: None,
            partial: Vec::new(),
            seq: 0,
            dirty: false,
            cached: None,
            k_conf,
            ledger: Vec::new(),
            digests: Vec::new(),
            confirmations: Vec::new(),
            stats: NodeStats::default(),
        }
    }

    fn flag(&self, b: BlockId, f: u8) -> bool {
        self.flags.get(b as usize).is_some_and(|x| x & f != 0)
    }

    fn set(&mut self, b: BlockId, f: u8) {
        let i = b as usize;
        if self.flags.len() <= i {
            self.flags.resize(i + 1, 0);
        }
        self.flags[i] |= f;
    }

    fn clear(&mut self, b: BlockId, f: u8) {
        if let Some(x) = self.flags.get_mut(b as usize) {
            *x &= !f;
        }
    }

    pub fn knows(&self, b: BlockId) -> bool {
        self.flag(b, KNOWN)
    }

    pub fn is_processed(&self, b: BlockId) -> bool {
        self.flag(b, PROCESSED)
    }

    /// Processed as empty without fetching its content.
    pub fn is_pretended(&self, b: BlockId) -> bool {
        self.flag(b, BLANK)
    }

    pub fn dchain_tip(&self) -> BlockId {
        self.tip
    }

    pub fn candidates(&self) -> usize {
        self.tips.len()
    }

    pub fn partial_entries(&self) -> usize {
        self.partial.len()
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn budget(&self) -> f64 {
        self.meter.budget()
    }

    /// Another known header from the same BPO as `b`, if any.
    pub fn equivocation_of(&self, view: &View, b: BlockId) -> Option<BlockId> {
        let pos = view.pos?;
        let bpo = view.store.get(b).bpo;
        pos.headers_of(&bpo).iter().copied().find(|&x| x != b && self.knows(x))
    }

    fn validate(&self, view: &View, b: BlockId) -> Result<(), String> {
        let h = view.store.get(b);
        let Some(p) = h.parent else { return Err("no parent".into()) };
        if self.flag(p, INVALID) {
            return Err(format!("parent {p} invalid"));
        }
        if !self.knows(p) {
            return Err(format!("parent {p} unknown"));
        }
        let ph = view.store.get(p);
        if h.bpo.slot <= ph.bpo.slot {
            return Err(format!("slot {} not after parent slot {}", h.bpo.slot, ph.bpo.slot));
        }
        if h.bpo.slot > view.slot {
            return Err(format!("slot {} in the future", h.bpo.slot));
        }
        if let Some(k_epf) = view.k_epf {
            sapos::validate_proof_deadline(view.store, b, k_epf).map_err(|e| e.to_string())?;
        } else if !h.proofs.is_empty() {
            return Err("unexpected equivocation proofs".into());
        }
        Ok(())
    }

    /// Receives the header chain ending at `block`. Unknown ancestors are
    /// inserted first. Returns newly accepted headers, which the caller
    /// relays.
    pub fn receive_header(&mut self, view: &View, block: BlockId, sink: &mut dyn TraceSink) -> Vec<BlockId> {
        if self.knows(block) || self.flag(block, INVALID) {
            return Vec::new();
        }
        let mut path = Vec::new();
        let mut cur = block;
        while !self.knows(cur) && !self.flag(cur, INVALID) {
            path.push(cur);
            match view.store.parent(cur) {
                Some(p) => cur = p,
                None => break,
            }
        }
        let mut accepted = Vec::new();
        for &b in path.iter().rev() {
            if let Err(_reason) = self.validate(view, b) {
                self.set(b, INVALID);
                self.stats.invalid_headers += 1;
                continue;
            }
            self.insert_header(view, b, sink);
            accepted.push(b);
        }
        accepted
    }

    fn insert_header(&mut self, view: &View, b: BlockId, sink: &mut dyn TraceSink) {
        self.set(b, KNOWN);
        self.seq += 1;
        if sink.enabled() {
            sink.record(TraceEvent::HeaderDelivered { slot: view.slot, node: self.id, block: b });
            if let Some(other) = self.equivocation_of(view, b) {
                sink.record(TraceEvent::EquivocationSeen { slot: view.slot, node: self.id, block: b, other });
            }
        }
        let store = view.store;
        let p = store.parent(b).unwrap_or(GENESIS);
        if let Some(t) = self.tips.iter_mut().find(|t| t.tip == p) {
            t.tip = b;
            t.seen = self.seq;
        } else {
            let first = if self.is_processed(p) { b } else { self.lowest_unprocessed(store, b) };
            self.tips.push(Tip { tip: b, first, seen: self.seq });
            if self.tips.len() > MAX_CANDIDATES {
                self.evict(view);
            }
        }
        self.dirty = true;
    }

    /// Lowest unprocessed ancestor of `b` (processed blocks form a prefix).
    fn lowest_unprocessed(&self, store: &BlockStore, b: BlockId) -> BlockId {
        let (mut lo, mut hi) = (0u32, store.height(b));
        // Invariant: ancestor at lo processed, ancestor at hi unprocessed.
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let a = store.ancestor_at(b, mid).unwrap_or(GENESIS);
            if self.is_processed(a) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        store.ancestor_at(b, hi).unwrap_or(b)
    }

    fn key(&self, view: &View, t: &Tip) -> (bool, i64, i64, i64) {
        let s = view.store;
        let processable = !self.flag(t.first, UNAVAIL);
        let h_tip = s.height(t.tip) as i64;
        let prefix = s.height(t.first) as i64 - 1;
        let len = if processable { h_tip } else { prefix };
        let seen = -(t.seen as i64);
        match self.policy.base() {
            SchedulingPolicy::Greedy => (processable, prefix, len, seen),
            SchedulingPolicy::FreshestBlock => (processable, s.get(t.tip).bpo.slot as i64, len, seen),
            _ => (processable, len, 0, seen),
        }
    }

    fn evict(&mut self, view: &View) {
        let worst = (0..self.tips.len()).min_by_key(|&i| self.key(view, &self.tips[i])).unwrap();
        self.tips.swap_remove(worst);
        self.stats.evictions += 1;
    }

    /// The block the policy wants processed next, or `None` when idle.
    pub fn schedule_target(&self, view: &View) -> Option<BlockId> {
        self.tips
            .iter()
            .map(|t| (self.key(view, t), t.first))
            .filter(|(k, _)| k.0)
            .max_by_key(|(k, _)| *k)
            .map(|(_, b)| b)
    }

    /// Adversary delivery of content: processed later at no cost.
    pub fn receive_content(&mut self, b: BlockId) {
        self.set(b, HAVE);
        if self.flag(b, UNAVAIL) {
            self.clear(b, UNAVAIL);
        }
        self.dirty = true;
    }

    /// Content for `b` appeared in the cloud.
    pub fn content_uploaded(&mut self, b: BlockId) {
        if self.flag(b, UNAVAIL) {
            self.clear(b, UNAVAIL);
            self.dirty = true;
        }
    }

    /// Adds the node's own freshly produced block, already processed.
    pub fn adopt_own(&mut self, view: &View, b: BlockId, sink: &mut dyn TraceSink) {
        self.set(b, KNOWN | HAVE);
        self.seq += 1;
        self.finish(view, b, false, sink);
    }

    fn finish(&mut self, view: &View, b: BlockId, blank: bool, sink: &mut dyn TraceSink) {
        let store = view.store;
        debug_assert!(self.is_processed(store.parent(b).unwrap_or(GENESIS)), "prefix processing");
        self.set(b, PROCESSED | if blank { BLANK } else { 0 });
        let hb = store.height(b);
        let mut i = 0;
        while i < self.tips.len() {
            if self.tips[i].first == b {
                if self.tips[i].tip == b {
                    self.tips.swap_remove(i);
                    continue;
                }
                self.tips[i].first = store.ancestor_at(self.tips[i].tip, hb + 1).expect("tip above processed block");
            }
            i += 1;
        }
        if let Some(j) = self.partial.iter().position(|x| x.0 == b) {
            self.partial.remove(j);
        }
        self.dirty = true;
        sink.record(TraceEvent::Processed { slot: view.slot, node: self.id, block: b, blank });
        if hb > store.height(self.tip) {
            let old = self.tip;
            self.tip = b;
            sink.record(TraceEvent::ChainSwitched { slot: view.slot, node: self.id, old_tip: old, new_tip: b, height: hb });
            self.update_ledger(view, old, sink);
        }
    }

    fn stash_task(&mut self) {
        if let Some(t) = self.task.take() {
            if t.paid > 0.0 {
                self.partial.retain(|x| x.0 != t.block);
                self.partial.push((t.block, t.paid));
                if self.partial.len() > PARTIAL_CACHE {
                    let (_, lost) = self.partial.remove(0);
                    self.stats.lost_work += lost;
                }
            }
        }
    }

    /// Spends this slot's budget on scheduled downloads.
    pub fn process_step(&mut self, view: &View, sink: &mut dyn TraceSink) {
        self.meter.start_slot();
        if let Some(t) = self.task.as_mut() {
            t.prepaid = t.paid;
        }
        loop {
            if self.dirty {
                self.cached = self.schedule_target(view);
                self.dirty = false;
            }
            let Some(b) = self.cached else { break };
            if self.flag(b, HAVE) {
                self.stats.pushed_processed += 1;
                self.finish(view, b, false, sink);
                continue;
            }
            if self.policy.blanks() && self.equivocation_of(view, b).is_some() {
                self.stats.blanked += 1;
                sink.record(TraceEvent::PretendEmpty { slot: view.slot, node: self.id, block: b });
                self.finish(view, b, true, sink);
                continue;
            }
            if !self.meter.has_budget() {
                break;
            }
            if self.task.is_none_or(|t| t.block != b) {
                self.stash_task();
                let paid = match self.partial.iter().position(|x| x.0 == b) {
                    Some(j) => self.partial.remove(j).1,
                    None => 0.0,
                };
                self.task = Some(Task { block: b, paid, prepaid: paid });
            }
            let task = self.task.as_mut().unwrap();
            match view.env.request_content(&mut self.meter, b, &mut task.paid) {
                RequestOutcome::Unavailable => {
                    self.stats.unavailable_hits += 1;
                    self.task = None;
                    self.set(b, UNAVAIL);
                    self.dirty = true;
                }
                RequestOutcome::Fetched => {
                    let resumed = task.prepaid;
                    self.task = None;
                    self.stats.fetched += 1;
                    sink.record(TraceEvent::ContentFetched { slot: view.slot, node: self.id, block: b, resumed });
                    self.finish(view, b, false, sink);
                }
                RequestOutcome::Throttled => break,
            }
        }
        if self.meter.has_budget() && self.has_processable_candidate(view) {
            self.stats.idle_with_candidates += 1;
            sink.record(TraceEvent::IdleWithCandidates { slot: view.slot, node: self.id });
        }
    }

    /// Independent scan for a candidate block the node could act on now.
    fn has_processable_candidate(&self, view: &View) -> bool {
        self.tips.iter().any(|t| {
            let b = t.first;
            !self.is_processed(b)
                && self.is_processed(view.store.parent(b).unwrap_or(GENESIS))
                && (view.env.cloud.is_available(b) || self.flag(b, HAVE))
        })
    }

    fn blank_in_ledger(&self, view: &View, b: BlockId) -> bool {
        view.k_epf.is_some() && view.proofs.proven_on(view.store, b, self.tip)
    }

    fn record_entry(&mut self, view: &View, b: BlockId, blank: bool, sink: &mut dyn TraceSink) {
        if !blank && self.is_pretended(b) {
            self.stats.missing_content += 1;
        }
        if blank {
            if view.store.get(b).bpo.honest {
                self.stats.honest_blanked += 1;
            }
            sink.record(TraceEvent::Blanked { slot: view.slot, node: self.id, block: b });
        }
        self.confirmations.push((b, blank));
    }

    /// Blank statuses this node assigned to confirmed blocks, in order.
    pub fn confirmations(&self) -> &[(BlockId, bool)] {
        &self.confirmations
    }

    /// Recomputes the confirmed prefix after the dChain moved from `old`.
    fn update_ledger(&mut self, view: &View, old: BlockId, sink: &mut dyn TraceSink) {
        let Some(k_conf) = self.k_conf else { return };
        let store = view.store;
        let h = store.height(self.tip) as u64;
        let conf = h.saturating_sub(k_conf) as usize;
        // Keep the longest prefix of the old ledger still on the new chain.
        let mut keep = self.ledger.len().min(conf);
        while keep > 0 && store.ancestor_at(self.tip, keep as u32) != Some(self.ledger[keep - 1].block) {
            keep -= 1;
        }
        if keep < self.ledger.len() {
            self.stats.ledger_rollbacks += 1;
            self.ledger.truncate(keep);
            self.digests.truncate(keep);
        }
        // Blank status can change for entries whose proof window overlaps the fork.
        let fork = store.height(store.common_ancestor(old, self.tip)) as u64;
        let recheck = fork.saturating_sub(view.k_epf.unwrap_or(0) + 1) as usize;
        let mut changed_from = keep;
        for i in recheck.min(keep)..keep {
            let b = self.ledger[i].block;
            let blank = self.blank_in_ledger(view, b);
            if blank != self.ledger[i].blank {
                self.stats.blank_flips += 1;
                self.ledger[i].blank = blank;
                self.record_entry(view, b, blank, sink);
                changed_from = changed_from.min(i);
            }
        }
        if conf > keep {
            let top = store.ancestor_at(self.tip, conf as u32).expect("confirmed height below tip");
            let mut fresh = Vec::with_capacity(conf - keep);
            let mut cur = top;
            while store.height(cur) as usize > keep {
                fresh.push(cur);
                cur = store.parent(cur).unwrap_or(GENESIS);
            }
            for &b in fresh.iter().rev() {
                let blank = self.blank_in_ledger(view, b);
                self.record_entry(view, b, blank, sink);
                self.ledger.push(LedgerEntry { block: b, blank });
            }
        }
        if changed_from < self.ledger.len() || self.digests.len() != self.ledger.len() {
            self.digests.truncate(changed_from.min(self.digests.len()));
            for i in self.digests.len()..self.ledger.len() {
                let prev = if i == 0 { 0 } else { self.digests[i - 1] };
                let e = self.ledger[i];
                self.digests.push(crate::block::mix64(prev ^ e.block as u64 ^ (e.blank as u64) << 63));
            }
            sink.record(TraceEvent::LedgerOutput {
                slot: view.slot,
                node: self.id,
                length: self.ledger.len() as u32,
                digest: self.digests.last().copied().unwrap_or(0),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::Content;
    use crate::lottery::BpoId;

    struct World {
        store: BlockStore,
        env: Env,
        proofs: ProofIndex,
    }

    impl World {
        fn new() -> Self {
            World { store: BlockStore::new(), env: Env::new(0), proofs: ProofIndex::default() }
        }

        fn add(&mut self, parent: BlockId, slot: u64, upload: bool) -> BlockId {
            let content = Content::empty(self.store.len() as u64);
            let b = self.store.push(parent, BpoId { slot, node: 0, honest: true, seq: 0 }, content.commitment(), vec![]);
            self.env.cloud.register(b, content.commitment());
            if upload {
                self.env.upload_content(&self.store, b, content).unwrap();
            }
            b
        }

        fn view(&self, slot: u64) -> View<'_> {
            View { slot, store: &self.store, env: &self.env, pos: None, proofs: &self.proofs, k_epf: None }
        }
    }

    fn lhc(per_slot: f64) -> NodeState {
        NodeState::new(0, SchedulingPolicy::LongestHeaderChain, per_slot, None)
    }

    #[test]
    fn prefix_first_target() {
        let mut w = World::new();
        let a = w.add(GENESIS, 1, true);
        let b = w.add(a, 2, true);
        let c = w.add(b, 3, true);
        let mut n = lhc(0.0);
        let mut sink = Vec::new();
        assert_eq!(n.receive_header(&w.view(3), c, &mut sink), vec![a, b, c]);
        assert_eq!(n.schedule_target(&w.view(3)), Some(a));
        assert!(n.receive_header(&w.view(3), c, &mut sink).is_empty());
    }

    #[test]
    fn budget_two_processes_two() {
        let mut w = World::new();
        let a = w.add(GENESIS, 1, true);
        let b = w.add(a, 2, true);
        let mut n = lhc(2.0);
        let mut sink = Vec::new();
        n.receive_header(&w.view(2), b, &mut sink);
        n.process_step(&w.view(2), &mut sink);
        assert_eq!(n.dchain_tip(), b);
        assert_eq!(n.stats.fetched, 2);
        assert_eq!(n.candidates(), 0);
    }

    #[test]
    fn invalid_slot_order_rejected() {
        let mut w = World::new();
        let a = w.add(GENESIS, 5, true);
        let b = w.add(a, 5, true);
        let mut n = lhc(1.0);
        let mut sink = Vec::new();
        assert_eq!(n.receive_header(&w.view(5), b, &mut sink), vec![a]);
        assert_eq!(n.stats.invalid_headers, 1);
        assert!(!n.knows(b));
    }

    #[test]
    fn falls_back_on_unavailable() {
        let mut w = World::new();
        let h1 = w.add(GENESIS, 1, true);
        // Adversary fork: first block available, second withheld.
        let a1 = w.add(GENESIS, 2, true);
        let a2 = w.add(a1, 3, false);
        let mut n = lhc(1.0);
        let mut sink = Vec::new();
        n.receive_header(&w.view(3), h1, &mut sink);
        n.receive_header(&w.view(3), a2, &mut sink);
        assert_eq!(n.schedule_target(&w.view(3)), Some(a1));
        n.process_step(&w.view(3), &mut sink);
        assert!(n.is_processed(a1));
        n.process_step(&w.view(4), &mut sink);
        // a2 unavailable: fell through to the honest block.
        assert!(n.is_processed(h1));
        assert_eq!(n.stats.unavailable_hits, 1);
        // Tie at height 1: keeps the first processed chain.
        assert_eq!(n.dchain_tip(), a1);
        w.env.upload_content(&w.store, a2, Content::empty(a2 as u64)).unwrap();
        n.content_uploaded(a2);
        n.process_step(&w.view(5), &mut sink);
        assert_eq!(n.dchain_tip(), a2);
    }

    #[test]
    fn greedy_prefers_longer_processed_prefix() {
        let mut w = World::new();
        let mut n = NodeState::new(0, SchedulingPolicy::Greedy, 100.0, None);
        let mut sink = Vec::new();
        // Fork X: 5 processed, tip at 6. Fork Y: 3 processed, tip at 9.
        let mut x = GENESIS;
        for s in 1..=5 {
            x = w.add(x, s, true);
        }
        let mut y = GENESIS;
        for s in 11..=13 {
            y = w.add(y, s, true);
        }
        n.receive_header(&w.view(20), x, &mut sink);
        n.receive_header(&w.view(20), y, &mut sink);
        n.process_step(&w.view(20), &mut sink);
        let x6 = w.add(x, 21, true);
        let mut y_tip = y;
        for s in 22..=27 {
            y_tip = w.add(y_tip, s, true);
        }
        let mut slow = n.clone();
        slow.meter = CapacityMeter::new(0.0);
        slow.receive_header(&w.view(30), x6, &mut sink);
        slow.receive_header(&w.view(30), y_tip, &mut sink);
        assert_eq!(slow.schedule_target(&w.view(30)), Some(x6));
        slow.policy = SchedulingPolicy::LongestHeaderChain;
        assert_eq!(slow.schedule_target(&w.view(30)).map(|b| w.store.height(b)), Some(4));
    }

    #[test]
    fn preemption_keeps_partial_work() {
        let mut w = World::new();
        let a = w.add(GENESIS, 1, true);
        let mut n = lhc(0.6);
        let mut sink = Vec::new();
        n.receive_header(&w.view(1), a, &mut sink);
        n.process_step(&w.view(1), &mut sink);
        // A longer chain preempts the 0.6-paid download of `a`.
        let b1 = w.add(GENESIS, 2, true);
        let b2 = w.add(b1, 3, true);
        n.receive_header(&w.view(3), b2, &mut sink);
        n.process_step(&w.view(3), &mut sink);
        assert_eq!(n.partial_entries(), 1);
        // Finish b1 (0.4 more), b2 (1.0), then resume a with 0.4 left.
        let mut spent_slots = 0;
        while !n.is_processed(a) {
            n.process_step(&w.view(4 + spent_slots), &mut sink);
            spent_slots += 1;
        }
        // Total work 3 blocks at 0.6 per slot: 5 slots in all.
        assert_eq!(spent_slots + 2, 5);
        assert_eq!(n.stats.lost_work, 0.0);
        let fetches: Vec<_> = sink.iter().filter_map(|e| match e {
            TraceEvent::ContentFetched { block, resumed, .. } => Some((*block, *resumed)),
            _ => None,
        }).collect();
        assert_eq!(fetches.len(), 3);
        assert!(fetches.iter().any(|&(b, r)| b == a && r > 0.0));
    }

    #[test]
    fn lru_evicts_oldest_partial() {
        let mut w = World::new();
        let mut n = lhc(0.5);
        let mut sink = Vec::new();
        // Twelve successively longer forks, each preempting the previous.
        let mut tips = Vec::new();
        for i in 0..12u64 {
            let mut t = GENESIS;
            for j in 0..=i {
                t = w.add(t, 100 * (i + 1) + j, true);
            }
            tips.push(t);
            n.receive_header(&w.view(10_000), t, &mut sink);
            n.process_step(&w.view(10_000), &mut sink);
        }
        assert_eq!(n.partial_entries(), PARTIAL_CACHE);
        assert!((n.stats.lost_work - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ledger_prefix() {
        let mut w = World::new();
        let mut n = NodeState::new(0, SchedulingPolicy::LongestHeaderChain, 10.0, Some(2));
        let mut sink = Vec::new();
        let mut t = GENESIS;
        for s in 1..=2 {
            t = w.add(t, s, true);
        }
        n.receive_header(&w.view(2), t, &mut sink);
        n.process_step(&w.view(2), &mut sink);
        assert!(n.ledger().is_empty());
        for s in 3..=4 {
            t = w.add(t, s, true);
        }
        n.receive_header(&w.view(4), t, &mut sink);
        n.process_step(&w.view(4), &mut sink);
        assert_eq!(n.ledger().len(), 2);
        assert_eq!(n.stats.ledger_rollbacks, 0);
    }

    #[test]
    fn candidate_set_is_bounded() {
        let mut w = World::new();
        let mut n = lhc(0.0);
        let mut sink = Vec::new();
        for s in 1..=(MAX_CANDIDATES as u64 + 5) {
            let b = w.add(GENESIS, s, true);
            n.receive_header(&w.view(s), b, &mut sink);
        }
        assert_eq!(n.candidates(), MAX_CANDIDATES);
        assert_eq!(n.stats.evictions, 5);
    }
}
