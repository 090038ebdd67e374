//! Scheduler and SaPoS audits over a run's trace and metrics.

use std::collections::{HashMap, HashSet};

use crate::pivots::{push_witness, AuditResult, Verdict};
use crate::sim::{Protocol, RunMetrics};
use crate::trace::TraceEvent;

fn result(name: &str, w: Vec<String>, checked: usize) -> AuditResult {
    AuditResult { name: name.into(), verdict: Verdict::from_witnesses(w), checked }
}

/// Each honest node fetches content for at most one block per BPO, and at
/// most once per block.
pub fn audit_fetch_once(events: &[TraceEvent]) -> AuditResult {
    let mut bpo_of = HashMap::new();
    let mut seen: HashSet<(u32, (u64, u32, u32))> = HashSet::new();
    let mut w = Vec::new();
    let mut checked = 0;
    for ev in events {
        match ev {
            TraceEvent::BlockProduced { block, bpo_slot, bpo_node, bpo_seq, .. } => {
                bpo_of.insert(*block, (*bpo_slot, *bpo_node, *bpo_seq));
            }
            TraceEvent::ContentFetched { slot, node, block, .. } => {
                checked += 1;
                let Some(&bpo) = bpo_of.get(block) else {
                    push_witness(&mut w, format!("slot {slot} node {node}: fetched unknown block {block}"));
                    continue;
                };
                if !seen.insert((*node, bpo)) {
                    push_witness(
                        &mut w,
                        format!("slot {slot} node {node}: second fetch for BPO (slot {}, node {})", bpo.0, bpo.1),
                    );
                }
            }
            _ => {}
        }
    }
    result("fetch-once-per-bpo", w, checked)
}

/// No honest node ends a slot idle with budget left while it has a
/// processable candidate.
pub fn audit_non_idle(events: &[TraceEvent]) -> AuditResult {
    let mut w = Vec::new();
    let mut checked = 0;
    for ev in events {
        match ev {
            TraceEvent::IdleWithCandidates { slot, node } => {
                push_witness(&mut w, format!("slot {slot} node {node}: idle with a processable candidate"));
            }
            TraceEvent::ContentFetched { .. } => checked += 1,
            _ => {}
        }
    }
    result("non-idle", w, checked)
}

/// Download work completed by each node in any window of `w` slots is at
/// most `C tau w + 1` blocks.
pub fn audit_capacity(events: &[TraceEvent]) -> AuditResult {
    let Some(TraceEvent::Meta { n_nodes, tau, capacity, .. }) = events.first() else {
        return AuditResult {
            name: "capacity".into(),
            verdict: Verdict::Inconclusive { reason: "trace has no Meta record".into() },
            checked: 0,
        };
    };
    let per_slot = capacity * tau;
    let n = *n_nodes as usize;
    let mut work: Vec<HashMap<u64, f64>> = vec![HashMap::new(); n];
    for ev in events {
        if let TraceEvent::ContentFetched { slot, node, resumed, .. } = ev {
            if let Some(m) = work.get_mut(*node as usize) {
                *m.entry(*slot).or_default() += 1.0 - resumed;
            }
        }
    }
    let mut w = Vec::new();
    for (node, m) in work.iter().enumerate() {
        // Largest excess of work over refill across all windows.
        let mut slots: Vec<u64> = m.keys().copied().collect();
        slots.sort_unstable();
        let mut best = f64::NEG_INFINITY;
        let mut run = 0.0f64;
        let mut prev: Option<u64> = None;
        for s in slots {
            let gap = prev.map_or(0, |p| s - p - 1) as f64 * per_slot;
            run = (run - gap).max(0.0) + m[&s] - per_slot;
            best = best.max(run);
            prev = Some(s);
        }
        if best > 1.0 + 1e-9 {
            push_witness(&mut w, format!("node {node}: window work exceeds refill by {best:.3} blocks"));
        }
    }
    result("capacity", w, n)
}

/// Confirmed blocks keep one blank status across nodes and over time.
pub fn audit_blanking_consistency(m: &RunMetrics) -> AuditResult {
    let mut w = Vec::new();
    if m.blank_disagreements > 0 {
        w.push(format!("{} confirmed blocks with conflicting blank status", m.blank_disagreements));
    }
    if m.node_totals.blank_flips > 0 {
        w.push(format!("{} blank-status flips inside confirmed ledgers", m.node_totals.blank_flips));
    }
    if m.node_totals.missing_content > 0 {
        w.push(format!("{} confirmed blocks never processed and not blanked", m.node_totals.missing_content));
    }
    result("blanking-consistency", w, 1)
}

/// Honestly produced blocks are never blanked.
pub fn audit_honest_immunity(events: &[TraceEvent], m: &RunMetrics) -> AuditResult {
    let honest: HashSet<_> = events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::BlockProduced { block, honest: true, .. } => Some(*block),
            _ => None,
        })
        .collect();
    let mut w = Vec::new();
    let mut checked = 0;
    for ev in events {
        if let TraceEvent::Blanked { slot, node, block } = ev {
            checked += 1;
            if honest.contains(block) {
                push_witness(&mut w, format!("slot {slot} node {node}: honest block {block} blanked"));
            }
        }
    }
    if m.node_totals.honest_blanked > 0 && w.is_empty() {
        w.push(format!("{} honest blocks blanked", m.node_totals.honest_blanked));
    }
    result("honest-content-immunity", w, checked)
}

/// Trace-only scheduler audits. One fetch per BPO is not claimed under
/// plain PoS, where re-fetching equivocations is exactly what the PoS
/// teaser exploits, so that audit is inconclusive there.
pub fn scheduler_audits(events: &[TraceEvent]) -> Vec<AuditResult> {
    let plain_pos = matches!(events.first(), Some(TraceEvent::Meta { protocol, .. }) if protocol == "pos");
    let once = if plain_pos {
        AuditResult {
            name: "fetch-once-per-bpo".into(),
            verdict: Verdict::Inconclusive { reason: "not claimed under plain PoS".into() },
            checked: 0,
        }
    } else {
        audit_fetch_once(events)
    };
    vec![once, audit_non_idle(events), audit_capacity(events)]
}

/// Scheduler audits plus, for SaPoS runs, the blanking audits.
pub fn run_audits(events: &[TraceEvent], m: &RunMetrics, protocol: Protocol) -> Vec<AuditResult> {
    let mut out = scheduler_audits(events);
    if protocol == Protocol::Sapos {
        out.push(audit_blanking_consistency(m));
        out.push(audit_honest_immunity(events, m));
    }
    out
}
