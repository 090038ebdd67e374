//! Slot classification, the index processes `G, D, X, Y`, probabilistic and
//! combinatorial pivot detection, and trace audits of the chain-growth and
//! stabilization properties.
//!
//! Indices are 1-based as in the analysis: index `k` refers to `g[k-1]`, and
//! an interval `(i, j]` with `0 <= i < j <= n` covers indices `i+1..=j`.
//! Intervals are truncated at `0` and at the horizon `n`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::block::BlockId;
use crate::trace::TraceEvent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotClass {
    Good,
    Bad,
    Empty,
}

/// Classifies slots `0..h.len()` from per-slot honest and adversary BPO
/// counts. Slots beyond the end are treated as empty.
pub fn classify_slots(h: &[u32], a: &[u32], nu: u64) -> Vec<SlotClass> {
    let n = h.len();
    assert_eq!(n, a.len());
    // next_busy[t] = first slot > t with a BPO (or n).
    let mut next_busy = vec![n; n];
    let mut nb = n;
    for t in (0..n).rev() {
        next_busy[t] = nb;
        if h[t] + a[t] > 0 {
            nb = t;
        }
    }
    (0..n)
        .map(|t| {
            if h[t] + a[t] == 0 {
                SlotClass::Empty
            } else if h[t] == 1 && a[t] == 0 && (next_busy[t] - t) as u64 > nu {
                SlotClass::Good
            } else {
                SlotClass::Bad
            }
        })
        .collect()
}

/// Prefix sums `S_0..S_n` of the `+1/-1` walk of an indicator series.
pub fn walk_prefix(ind: &[bool]) -> Vec<i64> {
    let mut s = Vec::with_capacity(ind.len() + 1);
    s.push(0);
    let mut acc = 0;
    for &b in ind {
        acc += if b { 1 } else { -1 };
        s.push(acc);
    }
    s
}

/// Pivot test by definition: every interval `(i, j]` containing `k` has
/// strictly more ones than zeros. `O(n^2)`.
pub fn is_pp_interval(k: usize, ind: &[bool]) -> bool {
    let n = ind.len();
    assert!(k >= 1 && k <= n);
    let s = walk_prefix(ind);
    for i in 0..k {
        for j in k..=n {
            if s[j] - s[i] <= 0 {
                return false;
            }
        }
    }
    true
}

/// Pivot test in random-walk form: `X_k = 1`, the walk from `k` never drops
/// below its value at `k`, and the walk before `k` never rises above its
/// value at `k-1`. `O(n)`.
pub fn is_pp_walk(k: usize, ind: &[bool]) -> bool {
    let n = ind.len();
    assert!(k >= 1 && k <= n);
    if !ind[k - 1] {
        return false;
    }
    let s = walk_prefix(ind);
    let forward_ok = (k..=n).all(|j| s[j] >= s[k]);
    let backward_ok = (0..k).all(|i| s[i] <= s[k - 1]);
    forward_ok && backward_ok
}

/// All pivots at once using prefix maxima and suffix minima. Entry `k-1`
/// holds the verdict for index `k`.
pub fn pivot_set(ind: &[bool]) -> Vec<bool> {
    let n = ind.len();
    let s = walk_prefix(ind);
    let mut suffix_min = vec![0i64; n + 1];
    suffix_min[n] = s[n];
    for j in (0..n).rev() {
        suffix_min[j] = suffix_min[j + 1].min(s[j]);
    }
    let mut out = Vec::with_capacity(n);
    let mut prefix_max = i64::MIN;
    for k in 1..=n {
        prefix_max = prefix_max.max(s[k - 1]);
        out.push(suffix_min[k] - prefix_max > 0);
    }
    out
}

/// Combinatorial pivot test: [`is_pp_walk`] applied to the `D` series.
pub fn is_cp(k: usize, d: &[bool]) -> bool {
    is_pp_walk(k, d)
}

fn count(ind: &[bool], i: usize, j: usize) -> i64 {
    ind[i..j].iter().filter(|&&b| b).count() as i64
}

/// If `P(i,j] > 0` then `G(i,j] - B(i,j] >= P(i,j]`.
pub fn margin_check(g: &[bool], p: &[bool], i: usize, j: usize) -> bool {
    let pc = count(p, i, j);
    if pc == 0 {
        return true;
    }
    let gc = count(g, i, j);
    let bc = (j - i) as i64 - gc;
    gc - bc >= pc
}

/// If `Y(i,j] <= 0` then `N(i,j] >= D(i,j]` and `G - D >= (G - B)/2` on `(i, j]`.
pub fn not_cp_interval_check(g: &[bool], d: &[bool], i: usize, j: usize) -> bool {
    let len = (j - i) as i64;
    let dc = count(d, i, j);
    let nc = len - dc;
    if dc - nc > 0 {
        return true;
    }
    let gc = count(g, i, j);
    let bc = len - gc;
    nc >= dc && 2 * (gc - dc) >= gc - bc
}

/// Per-index processes derived from a trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    /// Slot of the k-th non-empty slot.
    pub t: Vec<u64>,
    pub g: Vec<bool>,
    pub d: Vec<bool>,
    /// The honest block produced in a good slot.
    pub block: Vec<Option<BlockId>>,
}

impl IndexSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
struct BlockInfo {
    parent: BlockId,
    height: u32,
    slot: u64,
}

/// Queryable digest of a trace: lottery counts, block tree, per-node chain
/// tips over time, processing times and fetches.
#[derive(Clone, Debug, Default)]
pub struct TraceIndex {
    pub n_nodes: u32,
    pub tau: f64,
    pub capacity: f64,
    pub delta_h: f64,
    pub horizon: u64,
    pub h_count: Vec<u32>,
    pub a_count: Vec<u32>,
    blocks: Vec<Option<BlockInfo>>,
    honest_blocks_by_slot: HashMap<u64, Vec<BlockId>>,
    /// Per node: (slot, new tip, height) in trace order.
    pub switches: Vec<Vec<(u64, BlockId, u32)>>,
    /// Per node: (slot, block, resumed fraction) of budget-paid fetches.
    pub fetches: Vec<Vec<(u64, BlockId, f64)>>,
    /// Per node: first slot each block entered the processed set.
    processed: Vec<HashMap<BlockId, u64>>,
    pub idle_witnesses: Vec<(u64, u32)>,
}

impl TraceIndex {
    pub fn build(events: &[TraceEvent]) -> Result<Self, String> {
        let mut ix = TraceIndex::default();
        let mut have_meta = false;
        for ev in events {
            match ev {
                TraceEvent::Meta { n_nodes, tau, capacity, delta_h, horizon_slots, .. } => {
                    ix.n_nodes = *n_nodes;
                    ix.tau = *tau;
                    ix.capacity = *capacity;
                    ix.delta_h = *delta_h;
                    ix.horizon = *horizon_slots;
                    let n = *horizon_slots as usize + 1;
                    ix.h_count = vec![0; n];
                    ix.a_count = vec![0; n];
                    ix.switches = vec![Vec::new(); *n_nodes as usize];
                    ix.fetches = vec![Vec::new(); *n_nodes as usize];
                    ix.processed = vec![HashMap::new(); *n_nodes as usize];
                    ix.blocks = vec![Some(BlockInfo { parent: 0, height: 0, slot: 0 })];
                    have_meta = true;
                }
                _ if !have_meta => return Err("trace does not start with a Meta record".into()),
                TraceEvent::Bpo { slot, honest, .. } => {
                    let t = *slot as usize;
                    if t >= ix.h_count.len() {
                        return Err(format!("BPO slot {slot} beyond horizon"));
                    }
                    if *honest {
                        ix.h_count[t] += 1;
                    } else {
                        ix.a_count[t] += 1;
                    }
                }
                TraceEvent::BlockProduced { block, parent, height, bpo_slot, honest, .. } => {
                    let id = *block as usize;
                    if ix.blocks.len() <= id {
                        ix.blocks.resize(id + 1, None);
                    }
                    ix.blocks[id] = Some(BlockInfo { parent: *parent, height: *height, slot: *bpo_slot });
                    if *honest {
                        ix.honest_blocks_by_slot.entry(*bpo_slot).or_default().push(*block);
                    }
                }
                TraceEvent::ChainSwitched { slot, node, new_tip, height, .. } => {
                    if let Some(v) = ix.switches.get_mut(*node as usize) {
                        v.push((*slot, *new_tip, *height));
                    }
                }
                TraceEvent::ContentFetched { slot, node, block, resumed } => {
                    if let Some(v) = ix.fetches.get_mut(*node as usize) {
                        v.push((*slot, *block, *resumed));
                    }
                }
                TraceEvent::Processed { slot, node, block, .. } => {
                    if let Some(m) = ix.processed.get_mut(*node as usize) {
                        m.entry(*block).or_insert(*slot);
                    }
                }
                TraceEvent::IdleWithCandidates { slot, node } => ix.idle_witnesses.push((*slot, *node)),
                _ => {}
            }
        }
        if !have_meta {
            return Err("empty trace".into());
        }
        Ok(ix)
    }

    fn info(&self, id: BlockId) -> Option<BlockInfo> {
        self.blocks.get(id as usize).copied().flatten()
    }

    pub fn height(&self, id: BlockId) -> Option<u32> {
        self.info(id).map(|b| b.height)
    }

    /// Production slot of a block (0 for genesis).
    pub fn block_slot(&self, id: BlockId) -> Option<u64> {
        self.info(id).map(|b| b.slot)
    }

    pub fn is_ancestor(&self, anc: BlockId, mut id: BlockId) -> bool {
        let Some(ha) = self.height(anc) else { return false };
        loop {
            let Some(b) = self.info(id) else { return false };
            if b.height < ha {
                return false;
            }
            if b.height == ha {
                return id == anc;
            }
            id = b.parent;
        }
    }

    /// Slot at which `node` first had `block` in its processed set.
    pub fn processed_at(&self, node: u32, block: BlockId) -> Option<u64> {
        self.processed.get(node as usize)?.get(&block).copied()
    }

    /// `L_p(t)` for every node and slot `0..=horizon` (end-of-slot dChain length).
    pub fn chain_lengths(&self) -> Vec<Vec<u32>> {
        let n = self.horizon as usize + 1;
        self.switches
            .iter()
            .map(|sw| {
                let mut out = vec![0u32; n];
                let mut cur = 0u32;
                let mut it = sw.iter().peekable();
                for (t, slot_len) in out.iter_mut().enumerate() {
                    while let Some(&&(s, _, h)) = it.peek() {
                        if s as usize > t {
                            break;
                        }
                        cur = cur.max(h);
                        it.next();
                    }
                    *slot_len = cur;
                }
                out
            })
            .collect()
    }

    /// `L_min(t)` for `t` in `0..=horizon`.
    pub fn l_min(&self) -> Vec<u32> {
        let per = self.chain_lengths();
        let n = self.horizon as usize + 1;
        (0..n).map(|t| per.iter().map(|v| v[t]).min().unwrap_or(0)).collect()
    }

    /// End-of-slot tip of every node at every slot where it changed.
    fn end_of_slot_tips(&self, node: usize) -> Vec<(u64, BlockId)> {
        let mut out: Vec<(u64, BlockId)> = Vec::new();
        for &(s, tip, _) in &self.switches[node] {
            match out.last_mut() {
                Some(last) if last.0 == s => last.1 = tip,
                _ => out.push((s, tip)),
            }
        }
        out
    }
}

/// Slot classes and the index series of a trace.
pub fn classify(ix: &TraceIndex, nu: u64) -> (Vec<SlotClass>, IndexSeries) {
    let classes = classify_slots(&ix.h_count, &ix.a_count, nu);
    let mut series = IndexSeries::default();
    for (t, c) in classes.iter().enumerate() {
        if *c == SlotClass::Empty {
            continue;
        }
        let t = t as u64;
        let good = *c == SlotClass::Good;
        let block = if good {
            ix.honest_blocks_by_slot.get(&t).and_then(|v| v.first().copied())
        } else {
            None
        };
        let downloaded = match block {
            Some(b) => (0..ix.n_nodes).all(|p| ix.processed_at(p, b).is_some_and(|s| s <= t + nu)),
            None => false,
        };
        series.t.push(t);
        series.g.push(good);
        series.d.push(good && downloaded);
        series.block.push(block);
    }
    (classes, series)
}

/// Outcome of one audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail { witnesses: Vec<String> },
    Inconclusive { reason: String },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn failed(&self) -> bool {
        matches!(self, Verdict::Fail { .. })
    }

    pub(crate) fn from_witnesses(w: Vec<String>) -> Self {
        if w.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail { witnesses: w }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub name: String,
    pub verdict: Verdict,
    /// Number of instances examined.
    pub checked: usize,
}

const MAX_WITNESSES: usize = 20;

pub(crate) fn push_witness(w: &mut Vec<String>, s: String) {
    if w.len() < MAX_WITNESSES {
        w.push(s);
    }
}

/// For every index with `D_k = 1`: `L_min(t_k + nu) >= L_min(t_k - 1) + 1`.
pub fn audit_chain_growth(series: &IndexSeries, l_min: &[u32], nu: u64) -> AuditResult {
    let last = l_min.len() - 1;
    let mut w = Vec::new();
    let mut checked = 0;
    for k in 0..series.len() {
        if !series.d[k] {
            continue;
        }
        let t = series.t[k] as usize;
        let after = l_min[(t + nu as usize).min(last)];
        let before = l_min[t.saturating_sub(1)];
        checked += 1;
        if after < before + 1 {
            push_witness(&mut w, format!("index {} (slot {t}): L_min {before} -> {after}", k + 1));
        }
    }
    AuditResult { name: "chain-growth".into(), verdict: Verdict::from_witnesses(w), checked }
}

/// For all `i < j`: `L_min(t_j + nu) >= L_min(t_{i+1} - 1) + D(i,j]`.
pub fn audit_chain_growth_interval(series: &IndexSeries, l_min: &[u32], nu: u64) -> AuditResult {
    let n = series.len();
    let last = l_min.len() - 1;
    let mut dpre = vec![0i64; n + 1];
    for k in 0..n {
        dpre[k + 1] = dpre[k] + series.d[k] as i64;
    }
    let mut w = Vec::new();
    // best = max over i < j of L_min(t_{i+1} - 1) - D(0,i].
    let mut best = i64::MIN;
    let mut best_i = 0;
    for j in 1..=n {
        let i = j - 1;
        let b = l_min[(series.t[i] as usize).saturating_sub(1)] as i64 - dpre[i];
        if b > best {
            best = b;
            best_i = i;
        }
        let a = l_min[(series.t[j - 1] as usize + nu as usize).min(last)] as i64 - dpre[j];
        if a < best {
            push_witness(&mut w, format!("interval ({best_i}, {j}]"));
        }
    }
    AuditResult { name: "chain-growth-interval".into(), verdict: Verdict::from_witnesses(w), checked: n }
}

/// Every combinatorial pivot's block stays in every honest node's dChain
/// at the end of every slot `>= t_k + nu`.
pub fn audit_stabilization(ix: &TraceIndex, series: &IndexSeries, cp: &[bool], nu: u64) -> AuditResult {
    let mut w = Vec::new();
    // Active CPs in activation order, restricted to the horizon.
    let cps: Vec<(u64, BlockId)> = (0..series.len())
        .filter(|&k| cp[k])
        .filter_map(|k| {
            let act = series.t[k] + nu;
            (act <= ix.horizon).then_some((act, series.block[k]?))
        })
        .collect();
    for pair in cps.windows(2) {
        if !ix.is_ancestor(pair[0].1, pair[1].1) {
            push_witness(&mut w, format!("pivot blocks {} and {} are on different chains", pair[0].1, pair[1].1));
        }
    }
    let mut checked = 0;
    for node in 0..ix.n_nodes as usize {
        let tips = ix.end_of_slot_tips(node);
        let mut tip: BlockId = 0;
        let mut ti = 0;
        let mut ci = 0;
        // Walk the merged timeline of tip changes and activations.
        let check = |slot: u64, tip: BlockId, upto: usize, w: &mut Vec<String>| {
            if upto == 0 {
                return;
            }
            let target = cps[upto - 1].1;
            if !ix.is_ancestor(target, tip) {
                push_witness(w, format!("node {node} slot {slot}: dChain tip {tip} abandons pivot block {target}"));
            }
        };
        loop {
            let next_tip = tips.get(ti).map(|x| x.0);
            let next_act = cps.get(ci).map(|x| x.0);
            match (next_tip, next_act) {
                (None, None) => break,
                (Some(s), a) if a.is_none_or(|a| s <= a) => {
                    tip = tips[ti].1;
                    ti += 1;
                    // Apply activations falling in the same slot before checking.
                    while ci < cps.len() && cps[ci].0 <= s {
                        ci += 1;
                    }
                    checked += 1;
                    check(s, tip, ci, &mut w);
                }
                (_, Some(a)) => {
                    while ci < cps.len() && cps[ci].0 <= a {
                        ci += 1;
                    }
                    checked += 1;
                    check(a, tip, ci, &mut w);
                }
                (Some(_), None) => unreachable!(),
            }
        }
    }
    AuditResult { name: "cps-stabilize".into(), verdict: Verdict::from_witnesses(w), checked }
}

/// For every index with `G_k = 1, D_k = 0`: each honest node that had not
/// processed the good block by `t_k + nu` completed at least
/// `ceil(C_eff - 1)` fetches during `[t_k, t_k + nu]` of blocks produced in
/// slots `(t_i, t_k]`, `i` the latest earlier CP. `C_eff` is the budget the
/// window leaves after the header delay.
pub fn audit_budget(ix: &TraceIndex, series: &IndexSeries, cp: &[bool], nu: u64, c_tilde: f64) -> AuditResult {
    let delay = crate::lottery::slots_ceil(ix.delta_h, ix.tau);
    let window = (nu + 1).saturating_sub(delay) as f64 * ix.capacity * ix.tau;
    let c_eff = c_tilde.min(window);
    let required = (c_eff - 1.0 - 1e-9).ceil().max(0.0) as usize;
    if c_eff < 1.0 {
        return AuditResult {
            name: "download-or-spend-budget".into(),
            verdict: Verdict::Inconclusive { reason: format!("effective budget {c_eff:.3} < 1 block (C~ degenerate)") },
            checked: 0,
        };
    }
    let mut w = Vec::new();
    let mut checked = 0;
    let mut last_cp_slot = 0u64;
    for k in 0..series.len() {
        if series.g[k] && !series.d[k] {
            let t = series.t[k];
            let Some(b) = series.block[k] else { continue };
            for p in 0..ix.n_nodes {
                if ix.processed_at(p, b).is_some_and(|s| s <= t + nu) {
                    continue;
                }
                checked += 1;
                let f = &ix.fetches[p as usize];
                let lo = f.partition_point(|x| x.0 < t);
                let hi = f.partition_point(|x| x.0 <= t + nu);
                let n = f[lo..hi]
                    .iter()
                    .filter(|x| ix.block_slot(x.1).is_some_and(|s| s > last_cp_slot && s <= t))
                    .count();
                if n < required {
                    push_witness(
                        &mut w,
                        format!("index {} slot {t} node {p}: {n} qualifying fetches < {required}", k + 1),
                    );
                }
            }
        }
        if cp[k] {
            last_cp_slot = series.t[k];
        }
    }
    AuditResult { name: "download-or-spend-budget".into(), verdict: Verdict::from_witnesses(w), checked }
}

/// Window statistics of CP recurrence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CpRecurrence {
    pub k_cp: usize,
    pub margin: usize,
    pub fixed_windows: usize,
    pub fixed_with_cp: usize,
    pub sliding_windows: usize,
    pub sliding_with_cp: usize,
}

impl CpRecurrence {
    pub fn sliding_fraction(&self) -> Option<f64> {
        (self.sliding_windows > 0).then(|| self.sliding_with_cp as f64 / self.sliding_windows as f64)
    }

    pub fn fixed_fraction(&self) -> Option<f64> {
        (self.fixed_windows > 0).then(|| self.fixed_with_cp as f64 / self.fixed_windows as f64)
    }
}

/// Counts windows `(m K, (m+1) K]` and sliding windows of length `2K` that
/// contain a CP, ignoring `margin` indices at each edge.
pub fn cp_recurrence(cp: &[bool], k_cp: usize, margin: usize) -> CpRecurrence {
    let n = cp.len();
    let mut pre = vec![0usize; n + 1];
    for k in 0..n {
        pre[k + 1] = pre[k] + cp[k] as usize;
    }
    let mut r = CpRecurrence { k_cp, margin, ..Default::default() };
    if k_cp == 0 || n < 2 * margin {
        return r;
    }
    let (lo, hi) = (margin, n - margin);
    let mut m = lo.div_ceil(k_cp);
    while (m + 1) * k_cp <= hi {
        r.fixed_windows += 1;
        if pre[(m + 1) * k_cp] > pre[m * k_cp] {
            r.fixed_with_cp += 1;
        }
        m += 1;
    }
    let len = 2 * k_cp;
    if hi >= lo + len {
        for s in lo..=hi - len {
            r.sliding_windows += 1;
            if pre[s + len] > pre[s] {
                r.sliding_with_cp += 1;
            }
        }
    }
    r
}

/// Analysis output of one trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PivotReport {
    pub nu: u64,
    pub c_tilde: f64,
    pub series: IndexSeries,
    pub pp: Vec<bool>,
    pub cp: Vec<bool>,
    pub audits: Vec<AuditResult>,
    pub recurrence: Option<CpRecurrence>,
}

impl PivotReport {
    pub fn all_passed(&self) -> bool {
        self.audits.iter().all(|a| !a.verdict.failed())
    }

    /// Per-index CSV rows `(k, t_k, G, D, X-prefix, Y-prefix, PP, CP)`.
    pub fn csv_rows(&self) -> Vec<[String; 8]> {
        let mut x = 0i64;
        let mut y = 0i64;
        (0..self.series.len())
            .map(|k| {
                x += if self.series.g[k] { 1 } else { -1 };
                y += if self.series.d[k] { 1 } else { -1 };
                [
                    (k + 1).to_string(),
                    self.series.t[k].to_string(),
                    (self.series.g[k] as u8).to_string(),
                    (self.series.d[k] as u8).to_string(),
                    x.to_string(),
                    y.to_string(),
                    (self.pp[k] as u8).to_string(),
                    (self.cp[k] as u8).to_string(),
                ]
            })
            .collect()
    }
}

pub const CSV_HEADER: [&str; 8] = ["k", "t_k", "G", "D", "X_prefix", "Y_prefix", "PP", "CP"];

/// Classifies the trace, detects pivots and runs the chain-growth,
/// stabilization and budget audits. `k_cp` adds the recurrence statistics.
pub fn analyze(ix: &TraceIndex, nu: u64, c_tilde: f64, k_cp: Option<usize>) -> PivotReport {
    let (_, series) = classify(ix, nu);
    let pp = pivot_set(&series.g);
    let cp = pivot_set(&series.d);
    let l_min = ix.l_min();
    let audits = vec![
        audit_chain_growth(&series, &l_min, nu),
        audit_chain_growth_interval(&series, &l_min, nu),
        audit_stabilization(ix, &series, &cp, nu),
        audit_budget(ix, &series, &cp, nu, c_tilde),
    ];
    let recurrence = k_cp.map(|k| cp_recurrence(&cp, k, k));
    PivotReport { nu, c_tilde, series, pp, cp, audits, recurrence }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    fn set(ind: &[bool]) -> Vec<usize> {
        pivot_set(ind).iter().enumerate().filter(|x| *x.1).map(|x| x.0 + 1).collect()
    }

    #[test]
    fn classify_examples() {
        assert!(classify_slots(&[0; 5], &[0; 5], 2).iter().all(|c| *c == SlotClass::Empty));
        // Slots 1..=6 stored at indices 1..=6.
        let h = [0, 1, 0, 0, 0, 0, 1];
        let a = [0; 7];
        let c = classify_slots(&h, &a, 4);
        assert_eq!(c[1], SlotClass::Good);
        let c = classify_slots(&h, &a, 5);
        assert_eq!(c[1], SlotClass::Bad);
        let c = classify_slots(&[1, 0, 0], &[1, 0, 0], 0);
        assert_eq!(c[0], SlotClass::Bad);
        let c = classify_slots(&[2, 0], &[0, 0], 0);
        assert_eq!(c[0], SlotClass::Bad);
    }

    #[test]
    fn pivot_examples() {
        assert_eq!(set(&bits(&[1, 1, 1])), vec![1, 2, 3]);
        assert_eq!(set(&bits(&[1, 1, 0, 1])), vec![1]);
        assert!(set(&bits(&[1, 0, 1])).is_empty());
        assert!(!is_pp_walk(1, &bits(&[0, 1, 1, 1])));
        assert!(is_pp_walk(1, &bits(&[1])));
        // G = [1,1], D = [1,0]: PP = {1,2}, CP = {}.
        assert_eq!(set(&bits(&[1, 1])), vec![1, 2]);
        assert!(set(&bits(&[1, 0])).is_empty());
    }

    #[test]
    fn interval_and_walk_agree_small() {
        for len in 1..=10usize {
            for m in 0u32..(1 << len) {
                let g: Vec<bool> = (0..len).map(|i| m >> i & 1 == 1).collect();
                let fast = pivot_set(&g);
                for k in 1..=len {
                    let a = is_pp_interval(k, &g);
                    assert_eq!(a, is_pp_walk(k, &g));
                    assert_eq!(a, fast[k - 1]);
                }
            }
        }
    }

    #[test]
    fn margin_examples() {
        let g = bits(&[1, 1, 1]);
        let p = pivot_set(&g);
        assert!(margin_check(&g, &p, 0, 3));
        let g = bits(&[0, 0, 1]);
        let p = pivot_set(&g);
        assert!(margin_check(&g, &p, 0, 3));
    }

    #[test]
    fn recurrence_windows() {
        let cp = vec![true; 20];
        let r = cp_recurrence(&cp, 4, 0);
        assert_eq!(r.fixed_windows, 5);
        assert_eq!(r.fixed_with_cp, 5);
        assert_eq!(r.sliding_windows, 13);
        assert_eq!(r.sliding_fraction(), Some(1.0));
        let none = cp_recurrence(&[false; 20], 4, 2);
        assert_eq!(none.sliding_with_cp, 0);
        assert!(none.sliding_windows > 0);
    }

    fn meta(n: u32, horizon: u64) -> TraceEvent {
        TraceEvent::Meta {
            slot: 0,
            n_nodes: n,
            tau: 1.0,
            capacity: 1.0,
            delta_h: 0.0,
            horizon_slots: horizon,
            protocol: "pow".into(),
            policy: "longest-header-chain".into(),
        }
    }

    /// Two nodes, blocks produced in slots 1 and 3, each processed by both at once.
    fn simple_trace() -> Vec<TraceEvent> {
        let mut ev = vec![meta(2, 5)];
        for (slot, block, parent, height) in [(1u64, 1u32, 0u32, 1u32), (3, 2, 1, 2)] {
            ev.push(TraceEvent::Bpo { slot, node: 0, honest: true, seq: 0 });
            ev.push(TraceEvent::BlockProduced { slot, block, parent, height, bpo_slot: slot, bpo_node: 0, bpo_seq: 0, honest: true });
            for node in 0..2 {
                ev.push(TraceEvent::Processed { slot, node, block, blank: false });
                ev.push(TraceEvent::ChainSwitched { slot, node, old_tip: parent, new_tip: block, height });
            }
        }
        ev
    }

    #[test]
    fn attack_free_trace_passes() {
        let ix = TraceIndex::build(&simple_trace()).unwrap();
        let r = analyze(&ix, 1, 1.0, None);
        assert_eq!(r.series.len(), 2);
        assert_eq!(r.series.d, vec![true, true]);
        assert_eq!(r.cp, vec![true, true]);
        assert!(r.all_passed(), "{:?}", r.audits);
    }

    #[test]
    fn abandoned_pivot_is_reported() {
        let mut ev = simple_trace();
        // Node 1 later switches to a fork that excludes block 2.
        ev.push(TraceEvent::BlockProduced { slot: 4, block: 3, parent: 1, height: 2, bpo_slot: 4, bpo_node: 9, bpo_seq: 0, honest: false });
        ev.push(TraceEvent::BlockProduced { slot: 4, block: 4, parent: 3, height: 3, bpo_slot: 4, bpo_node: 9, bpo_seq: 0, honest: false });
        ev.push(TraceEvent::ChainSwitched { slot: 5, node: 1, old_tip: 2, new_tip: 4, height: 3 });
        let ix = TraceIndex::build(&ev).unwrap();
        let r = analyze(&ix, 1, 1.0, None);
        let stab = r.audits.iter().find(|a| a.name == "cps-stabilize").unwrap();
        match &stab.verdict {
            Verdict::Fail { witnesses } => assert!(witnesses[0].contains("node 1 slot 5")),
            v => panic!("expected failure, got {v:?}"),
        }
    }

    #[test]
    fn degenerate_budget_is_inconclusive() {
        let ix = TraceIndex::build(&simple_trace()).unwrap();
        let r = analyze(&ix, 1, 0.0, None);
        let b = r.audits.iter().find(|a| a.name == "download-or-spend-budget").unwrap();
        assert!(matches!(b.verdict, Verdict::Inconclusive { .. }));
    }

    #[test]
    fn csv_prefixes() {
        let ix = TraceIndex::build(&simple_trace()).unwrap();
        let r = analyze(&ix, 1, 1.0, None);
        let rows = r.csv_rows();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1][4], "2");
    }
}
