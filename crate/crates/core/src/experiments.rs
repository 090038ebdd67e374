//! Seeded experiment batches: growth-rate sweeps with bootstrap intervals,
//! attack frontiers, the matched-growth rate ratio and the network split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::Strategy;
use crate::lottery::{slots_ceil, SimParams};
use crate::node::SchedulingPolicy;
use crate::parallel::map_runs;
use crate::security_calc::beta_threshold;
use crate::sim::{run, Protocol, RunConfig, RunMetrics};
use crate::trace::NullSink;

/// Sample mean with a percentile bootstrap interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// True if the two intervals do not overlap and `self` lies below.
    pub fn strictly_below(&self, other: &Interval) -> bool {
        self.hi < other.lo
    }
}

/// Percentile bootstrap of the mean at confidence `level`.
pub fn bootstrap_mean(values: &[f64], reps: usize, level: f64, seed: u64) -> Interval {
    let n = values.len();
    if n == 0 {
        return Interval { mean: f64::NAN, lo: f64::NAN, hi: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..reps.max(1))
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    let a = (1.0 - level) / 2.0;
    Interval { mean, lo: q(a), hi: q(1.0 - a) }
}

const BOOT_REPS: usize = 2000;

/// Shared settings of a growth experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthSpec {
    pub n_nodes: u32,
    pub lambda_hon: f64,
    pub lambda_adv: f64,
    pub tau: f64,
    /// Seconds simulated per run.
    pub duration: f64,
    /// Fraction of the run excluded from the growth estimate.
    pub warmup_frac: f64,
    pub protocol: Protocol,
    pub policy: SchedulingPolicy,
    pub spv_rate: f64,
    pub seeds: Vec<u64>,
}

impl Default for GrowthSpec {
    fn default() -> Self {
        GrowthSpec {
            n_nodes: 20,
            lambda_hon: 1.0,
            lambda_adv: 3.0,
            tau: 0.1,
            duration: 2000.0,
            warmup_frac: 0.25,
            protocol: Protocol::Pow,
            policy: SchedulingPolicy::LongestHeaderChain,
            spv_rate: 0.0,
            seeds: (0..10).collect(),
        }
    }
}

impl GrowthSpec {
    /// Run configuration for one capacity, strategy and seed.
    pub fn config(&self, capacity: f64, strategy: Strategy, seed: u64) -> RunConfig {
        let horizon = slots_ceil(self.duration, self.tau);
        let lambda_adv = if strategy == Strategy::None { 0.0 } else { self.lambda_adv };
        let params = SimParams::from_rates(
            self.n_nodes,
            self.lambda_hon,
            lambda_adv,
            self.tau,
            0.0,
            capacity,
            capacity * self.tau,
            horizon,
            seed,
        )
        .expect("growth spec parameters are valid");
        let mut cfg = RunConfig::basic(params);
        cfg.protocol = self.protocol;
        cfg.policy = match self.protocol {
            Protocol::Sapos if !self.policy.blanks() => SchedulingPolicy::SaposWrapped(Box::new(self.policy.clone())),
            _ => self.policy.clone(),
        };
        if self.protocol == Protocol::Sapos {
            cfg.sapos = Some(crate::sapos::SaposParams::from_k_cp(1));
        }
        cfg.attack.strategy = strategy;
        cfg.attack.spv_rate = self.spv_rate;
        cfg.warmup_slots = (horizon as f64 * self.warmup_frac) as u64;
        cfg
    }
}

/// Growth rates of one (capacity, strategy) cell across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub capacity: f64,
    pub strategy: Strategy,
    pub spv_rate: f64,
    pub growth: Interval,
    pub values: Vec<f64>,
}

/// Runs every (capacity, seed) pair of `spec` under `strategy`.
pub fn growth_sweep(spec: &GrowthSpec, strategy: Strategy, capacities: &[f64]) -> Vec<GrowthPoint> {
    let jobs: Vec<(usize, u64)> =
        (0..capacities.len()).flat_map(|i| spec.seeds.iter().map(move |&s| (i, s))).collect();
    let rates = map_runs(&jobs, |&(i, seed)| run(&spec.config(capacities[i], strategy, seed), &mut NullSink).metrics.growth_rate);
    capacities
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let values: Vec<f64> = jobs.iter().zip(&rates).filter(|(j, _)| j.0 == i).map(|(_, &r)| r).collect();
            GrowthPoint {
                capacity: c,
                strategy,
                spv_rate: spec.spv_rate,
                growth: bootstrap_mean(&values, BOOT_REPS, 0.95, 0x6b00 + i as u64),
                values,
            }
        })
        .collect()
}

/// One row of an attack frontier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub capacity: f64,
    pub attack: String,
    pub lambda_grwth: f64,
    pub lambda_grwth_lo: f64,
    pub lambda_grwth_hi: f64,
    pub beta_threshold: f64,
    pub lambda_spv: f64,
    pub lambda_grwth_spv: f64,
    pub beta_threshold_spv: f64,
}

/// Measured growth under `strategy` and the adversary fraction above which
/// the attack outpaces honest growth, without and with SPV miners.
pub fn attack_frontier(spec: &GrowthSpec, strategy: Strategy, capacities: &[f64], lambda_spv: f64) -> Vec<FrontierRow> {
    let plain = growth_sweep(&GrowthSpec { spv_rate: 0.0, ..spec.clone() }, strategy, capacities);
    let spv = growth_sweep(&GrowthSpec { spv_rate: lambda_spv, ..spec.clone() }, strategy, capacities);
    plain
        .iter()
        .zip(&spv)
        .map(|(p, s)| FrontierRow {
            capacity: p.capacity,
            attack: strategy.label().into(),
            lambda_grwth: p.growth.mean,
            lambda_grwth_lo: p.growth.lo,
            lambda_grwth_hi: p.growth.hi,
            beta_threshold: beta_threshold(p.growth.mean, spec.lambda_hon),
            lambda_spv,
            lambda_grwth_spv: s.growth.mean,
            beta_threshold_spv: beta_threshold(s.growth.mean, spec.lambda_hon),
        })
        .collect()
}

/// Capacity at which a reference growth curve reaches `target`, by
/// interpolation linear in `ln C`. `curve` must be sorted by capacity with
/// growth increasing; `None` outside its range.
pub fn capacity_for_growth(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    curve.windows(2).find_map(|w| {
        let ((c0, g0), (c1, g1)) = (w[0], w[1]);
        if g0 <= target && target <= g1 && g1 > g0 {
            let f = (target - g0) / (g1 - g0);
            Some((c0.ln() + f * (c1.ln() - c0.ln())).exp())
        } else if (g0 - target).abs() < 1e-12 {
            Some(c0)
        } else {
            None
        }
    })
}

/// Secure-rate ratio of the private attack over `attack` at capacity `c`.
///
/// Growth under a fixed attack depends on rates only through `lambda/C`, so
/// an adversary fraction is tolerated up to the `lambda` at which normalized
/// growth falls to its threshold. If `attack` at capacity `c` grows like the
/// private attack at `c'`, the private attack tolerates `c/c'` times the
/// block rate of `attack` at the same fraction.
pub fn matched_rate_ratio(private_curve: &[(f64, f64)], c: f64, attack_growth: f64) -> Option<f64> {
    capacity_for_growth(private_curve, attack_growth).map(|c2| c / c2)
}

/// Outcome of one network-split run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionOutcome {
    pub capacity: f64,
    pub policy: String,
    pub seed: u64,
    pub agreed_height: u32,
    pub tip_height: u32,
}

/// Splits `n_nodes` honest nodes in two for `split` seconds, then runs to
/// `duration` seconds without an adversary.
pub fn partition_run(n_nodes: u32, capacity: f64, policy: SchedulingPolicy, split: f64, duration: f64, seed: u64) -> PartitionOutcome {
    let tau = 0.1;
    let params = SimParams::from_rates(n_nodes, 1.0, 0.0, tau, 0.0, capacity, capacity * tau, slots_ceil(duration, tau), seed)
        .expect("partition parameters are valid");
    let mut cfg = RunConfig::basic(params);
    cfg.policy = policy.clone();
    cfg.attack.strategy = Strategy::Partition;
    cfg.attack.partition_duration = split;
    let m: RunMetrics = run(&cfg, &mut NullSink).metrics;
    PartitionOutcome {
        capacity,
        policy: policy.label(),
        seed,
        agreed_height: m.agreed_height,
        tip_height: m.final_l_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_brackets_mean() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        let i = bootstrap_mean(&v, 500, 0.95, 1);
        assert_eq!(i.mean, 3.0);
        assert!(i.lo < 3.0 && i.hi > 3.0 && i.lo >= 1.0 && i.hi <= 5.0);
        let c = bootstrap_mean(&[2.0; 4], 100, 0.95, 1);
        assert_eq!((c.lo, c.hi), (2.0, 2.0));
    }

    #[test]
    fn interpolation_is_log_linear() {
        let curve = [(0.5, 0.2), (1.0, 0.4), (2.0, 0.6)];
        assert!((capacity_for_growth(&curve, 0.4).unwrap() - 1.0).abs() < 1e-12);
        // Halfway in growth between 1 and 2 is sqrt(2) in capacity.
        assert!((capacity_for_growth(&curve, 0.5).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!(capacity_for_growth(&curve, 0.7).is_none());
        assert!((matched_rate_ratio(&curve, 2.0, 0.4).unwrap() - 2.0).abs() < 1e-12);
    }
}
