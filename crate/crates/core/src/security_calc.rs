//! Closed-form probabilities, concentration bounds and the security-region
//! optimizer for PoW Nakamoto consensus under bounded capacity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CalcError {
    #[error("no secure block rate exists at beta = {0}")]
    Insecure(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Probability that a non-empty slot is good:
/// `(1-beta) * rho * exp(-rho*(nu+1)) / (1 - exp(-rho))`.
pub fn p_good(beta: f64, rho: f64, nu: u64) -> f64 {
    assert!(rho > 0.0, "rho must be positive");
    (1.0 - beta) * rho * (-rho * (nu as f64 + 1.0)).exp() / -(-rho).exp_m1()
}

/// Continuous-time limit of [`p_good`]: `(1-beta) * exp(-lambda*(delta_h + c_tilde/capacity))`.
pub fn p_good_limit(beta: f64, lambda: f64, delta_h: f64, c_tilde: f64, capacity: f64) -> f64 {
    (1.0 - beta) * (-lambda * (delta_h + c_tilde / capacity)).exp()
}

/// Lower bound on the probability that an index is a probabilistic pivot:
/// `(2 p_G - 1)^2 / p_G`, zero when `p_G <= 1/2`.
pub fn p_pp(p_good: f64) -> f64 {
    if p_good <= 0.5 {
        return 0.0;
    }
    (2.0 * p_good - 1.0).powi(2) / p_good
}

/// Hoeffding bound `P[X(i,j] <= (1-delta) 2 eps (j-i)] <= exp(-2 eps^2 delta^2 (j-i))`.
pub fn hoeffding_tail_x(eps_good: f64, delta: f64, n: u64) -> f64 {
    (-2.0 * eps_good * eps_good * delta * delta * n as f64).exp()
}

/// Bound on the probability that a window of `2*k1*k2` indices holds at most
/// `(1-delta) * p_pp * 2*k1*k2` probabilistic pivots:
/// `2 k1 exp(-alpha_p delta^2 k2) + k_h^2 exp(-alpha_x k1)`.
pub fn pp_tail(k1: u64, k2: u64, delta: f64, k_horizon: u64, alpha_x: f64, alpha_p: f64) -> f64 {
    let a = 2.0 * k1 as f64 * (-alpha_p * delta * delta * k2 as f64).exp();
    let kh = k_horizon as f64;
    let b = kh * kh * (-alpha_x * k1 as f64).exp();
    a + b
}

/// Security condition `(c_tilde/16) (2 p_G - 1)^2 / p_G > 1`.
pub fn cp_condition(c_tilde: f64, p_good: f64) -> bool {
    if p_good <= 0.5 {
        return false;
    }
    c_tilde / 16.0 * p_pp(p_good) > 1.0
}

/// The `p_G` at which [`cp_condition`] holds with equality: the larger root of
/// `4 C p^2 - (4C + 16) p + C = 0`, i.e. `(C + 4 + sqrt(8C + 16)) / (2C)`.
pub fn cp_boundary_p_good(c_tilde: f64) -> f64 {
    (c_tilde + 4.0 + (8.0 * c_tilde + 16.0).sqrt()) / (2.0 * c_tilde)
}

/// Objective of the region optimizer at a given `c_tilde`:
/// `ln(2 (1-beta) c / (c + 4 + sqrt(8c + 16))) / (delta_h + c/capacity)`.
pub fn rate_objective(beta: f64, capacity: f64, delta_h: f64, c_tilde: f64) -> f64 {
    let arg = 2.0 * (1.0 - beta) * c_tilde / (c_tilde + 4.0 + (8.0 * c_tilde + 16.0).sqrt());
    arg.ln() / (delta_h + c_tilde / capacity)
}

pub const C_TILDE_MIN: f64 = 1.0;
pub const C_TILDE_MAX: f64 = 1e5;

/// Maximum secure block rate and its maximizing `c_tilde`.
///
/// Coarse log-spaced grid over `[1, 1e5]` followed by golden-section
/// refinement around the best grid point.
pub fn max_rate(beta: f64, capacity: f64, delta_h: f64) -> Result<(f64, f64), CalcError> {
    if !(0.0..1.0).contains(&beta) || capacity <= 0.0 || delta_h < 0.0 {
        return Err(CalcError::InvalidArgument(format!(
            "beta={beta}, capacity={capacity}, delta_h={delta_h}"
        )));
    }
    let f = |c: f64| rate_objective(beta, capacity, delta_h, c);
    const GRID: usize = 600;
    let (lo, hi) = (C_TILDE_MIN.ln(), C_TILDE_MAX.ln());
    let xs: Vec<f64> = (0..GRID).map(|i| (lo + (hi - lo) * i as f64 / (GRID - 1) as f64).exp()).collect();
    let (best_i, _) = xs
        .iter()
        .enumerate()
        .map(|(i, &c)| (i, f(c)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let a = xs[best_i.saturating_sub(1)];
    let b = xs[(best_i + 1).min(GRID - 1)];
    let c_star = golden_max(&f, a, b, 1e-10);
    let (c_star, v) = [(c_star, f(c_star)), (xs[best_i], f(xs[best_i]))]
        .into_iter()
        .fold((c_star, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    if !(v > 0.0) {
        return Err(CalcError::Insecure(beta));
    }
    Ok((v, c_star))
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs()) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Adversary fraction above which an attack with honest growth rate
/// `lambda_grwth` succeeds: `lambda_grwth / (lambda_grwth + lambda_hon)`.
pub fn beta_threshold(lambda_grwth: f64, lambda_hon: f64) -> f64 {
    lambda_grwth / (lambda_grwth + lambda_hon)
}

/// `P[tau (t_{k+K} - t_k) >= K/(lambda (1-delta))] <= exp(-K delta^2 / (2 (1+delta)))`.
pub fn index_time_tail(k: u64, delta: f64) -> f64 {
    (-(k as f64) * delta * delta / (2.0 * (1.0 + delta))).exp()
}

/// Liveness latency in slots: the simple form `(6 K_cp + 2)/rho` and the
/// refinement `max{T_tput, 2 K_cp/(rho (1-delta))} + (4 K_cp + 2)/(rho (1-delta))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LivenessLatency {
    pub simple: f64,
    pub refined: f64,
}

pub fn liveness_latency(k_cp: u64, rho: f64, delta: f64, t_tput: f64) -> LivenessLatency {
    let k = k_cp as f64;
    let scaled = rho * (1.0 - delta);
    LivenessLatency {
        simple: (6.0 * k + 2.0) / rho,
        refined: t_tput.max(2.0 * k / scaled) + (4.0 * k + 2.0) / scaled,
    }
}

/// Confirmation depth used by PoW safety audits: `2 K_cp + 1`.
pub fn pow_k_conf(k_cp: u64) -> u64 {
    2 * k_cp + 1
}

/// Derived analysis quantities for a given good-slot probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub p_good: f64,
    pub eps_good: f64,
    pub p_pp: f64,
    pub alpha_x: f64,
    pub alpha_p: f64,
    pub k1: u64,
    pub k2: u64,
    pub k_cp: u64,
    pub k_horizon: u64,
    pub delta: f64,
    pub t_live: f64,
    /// Transaction-limit rate (txs per slot) and burst window (slots).
    pub sigma: f64,
    pub t_tput: f64,
}

impl AnalysisParams {
    pub fn from_p_good(p_good: f64, delta: f64, k_horizon: u64) -> Self {
        let eps = p_good - 0.5;
        let pp = p_pp(p_good);
        AnalysisParams {
            p_good,
            eps_good: eps,
            p_pp: pp,
            alpha_x: 2.0 * eps * eps,
            alpha_p: 2.0 * pp * pp,
            k1: 0,
            k2: 0,
            k_cp: 0,
            k_horizon,
            delta,
            t_live: 0.0,
            sigma: 0.0,
            t_tput: 0.0,
        }
    }
}

/// Smallest window `K_cp = 2 K1 K2` whose [`pp_tail`] bound falls below
/// `target`, searching `delta` over `{0.05, 0.10, ..., 0.95}`.
///
/// Returns `(k_cp, k1, k2, delta)` or `None` when `p_good <= 1/2`.
pub fn k_cp_heuristic(p_good: f64, k_horizon: u64, target: f64) -> Option<(u64, u64, u64, f64)> {
    if p_good <= 0.5 {
        return None;
    }
    let a = AnalysisParams::from_p_good(p_good, 0.0, k_horizon);
    let kh = k_horizon.max(1) as f64;
    // Smallest K1 for which the horizon term alone is below target.
    let k1_min = ((kh * kh / target).ln() / a.alpha_x).floor().max(0.0) as u64 + 1;
    let mut best: Option<(u64, u64, u64, f64)> = None;
    for di in 1..20 {
        let delta = di as f64 * 0.05;
        for k1 in k1_min..k1_min * 4 + 8 {
            let rest = target - kh * kh * (-a.alpha_x * k1 as f64).exp();
            if rest <= 0.0 {
                continue;
            }
            let rate = a.alpha_p * delta * delta;
            let k2 = ((2.0 * k1 as f64 / rest).ln() / rate).floor().max(0.0) as u64 + 1;
            debug_assert!(pp_tail(k1, k2, delta, k_horizon, a.alpha_x, a.alpha_p) < target);
            let k_cp = 2 * k1 * k2;
            if best.is_none_or(|b| k_cp < b.0) {
                best = Some((k_cp, k1, k2, delta));
            }
        }
    }
    best
}

/// Which formula produced a region point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionModel {
    BoundedCapacity,
    /// Bounded-delay private-attack bound with `Delta = 1/C`; reference only.
    BoundedDelayReference,
}

impl RegionModel {
    pub fn label(&self) -> &'static str {
        match self {
            RegionModel::BoundedCapacity => "bounded-capacity",
            RegionModel::BoundedDelayReference => "bounded-delay-reference",
        }
    }
}

/// One point of the `(beta, lambda_max)` frontier; `lambda_max = None` means insecure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub beta: f64,
    pub lambda_max: Option<f64>,
    pub c_tilde_star: Option<f64>,
    pub model: RegionModel,
}

pub type RegionCurve = Vec<RegionPoint>;

/// Bounded-capacity frontier over a beta grid.
pub fn region(betas: &[f64], capacity: f64, delta_h: f64) -> RegionCurve {
    betas
        .iter()
        .map(|&beta| match max_rate(beta, capacity, delta_h) {
            Ok((l, c)) => RegionPoint { beta, lambda_max: Some(l), c_tilde_star: Some(c), model: RegionModel::BoundedCapacity },
            Err(_) => RegionPoint { beta, lambda_max: None, c_tilde_star: None, model: RegionModel::BoundedCapacity },
        })
        .collect()
}

/// Bounded-delay reference: the private attack fails iff
/// `beta*lambda < (1-beta)*lambda / (1 + (1-beta)*lambda*Delta)`, i.e.
/// `lambda < (1 - 2 beta) / (beta (1-beta) Delta)`, evaluated at `Delta = 1/C`.
pub fn bounded_delay_reference(betas: &[f64], capacity: f64) -> RegionCurve {
    let delta = 1.0 / capacity;
    betas
        .iter()
        .map(|&beta| {
            let lambda_max = if beta >= 0.5 {
                None
            } else if beta == 0.0 {
                Some(f64::INFINITY)
            } else {
                Some((1.0 - 2.0 * beta) / (beta * (1.0 - beta) * delta))
            };
            RegionPoint { beta, lambda_max, c_tilde_star: None, model: RegionModel::BoundedDelayReference }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn p_good_small_rho_limit() {
        assert_relative_eq!(p_good(0.0, 1e-9, 0), 1.0, epsilon = 1e-6);
        // Frozen reference computed independently from the closed form.
        assert_relative_eq!(p_good(0.25, 0.1, 4), 0.478_021_9, epsilon = 1e-7);
    }

    #[test]
    fn p_good_limit_cases() {
        assert_relative_eq!(p_good_limit(0.3, 0.0, 1.0, 5.0, 2.0), 0.7);
        let full = p_good_limit(0.0, 0.2, 1.0, 5.0, 2.0);
        assert_relative_eq!(p_good_limit(0.5, 0.2, 1.0, 5.0, 2.0), full / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn p_good_converges_to_limit() {
        let (beta, lambda, dh, ct, cap) = (0.2, 0.5, 0.3, 4.0, 2.0);
        let tau = 1e-4;
        let nu = crate::lottery::nu_for(tau, dh, cap, ct);
        let exact = p_good(beta, lambda * tau, nu);
        assert!((exact - p_good_limit(beta, lambda, dh, ct, cap)).abs() < 1e-3);
    }

    #[test]
    fn p_pp_values() {
        assert_relative_eq!(p_pp(1.0), 1.0);
        assert_relative_eq!(p_pp(0.75), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(p_pp(0.5), 0.0);
    }

    #[test]
    fn hoeffding_values() {
        assert_relative_eq!(hoeffding_tail_x(0.25, 1.0, 100), (-12.5f64).exp(), epsilon = 1e-18);
        assert_eq!(hoeffding_tail_x(0.25, 0.0, 100), 1.0);
    }

    #[test]
    fn pp_tail_monotone_and_vanishing() {
        let mut prev = f64::INFINITY;
        for k2 in 1..200 {
            let v = pp_tail(10, k2, 0.5, 100, 0.1, 0.5);
            assert!(v <= prev);
            prev = v;
        }
        assert!(pp_tail(10_000, 10_000, 0.5, 100, 0.1, 0.5) < 1e-30);
    }

    #[test]
    fn cp_condition_boundary() {
        // (49/16) * (1/3) = 49/48 > 1 ; (48/16) * (1/3) = 1.
        assert!(cp_condition(49.0, 0.75));
        assert!(!cp_condition(48.0, 0.75));
        assert!(!cp_condition(1e9, 0.5));
        assert!(!cp_condition(1e9, 0.3));
    }

    #[test]
    fn max_rate_reference_point() {
        let (l, c) = max_rate(0.0, 1.0, 0.0).unwrap();
        assert!((l - 6.3e-3).abs() < 1e-4, "lambda {l}");
        assert!((c - 36.0).abs() < 3.0, "argmax {c}");
    }

    #[test]
    fn max_rate_insecure_at_half() {
        assert_eq!(max_rate(0.5, 1.0, 0.0), Err(CalcError::Insecure(0.5)));
    }

    #[test]
    fn max_rate_linear_in_capacity() {
        let (a, _) = max_rate(0.2, 1.0, 0.0).unwrap();
        let (b, _) = max_rate(0.2, 2.0, 0.0).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-8);
    }

    #[test]
    fn max_rate_monotone_in_delta_h() {
        let mut prev = f64::INFINITY;
        for dh in [0.0, 0.5, 1.0, 5.0, 20.0] {
            let (l, _) = max_rate(0.1, 1.0, dh).unwrap();
            assert!(l <= prev);
            prev = l;
        }
    }

    #[test]
    fn boundary_root_matches_log_argument() {
        for c in [5.0, 17.0, 36.0, 1000.0] {
            let p = cp_boundary_p_good(c);
            assert!((p_pp(p) * c / 16.0 - 1.0).abs() < 1e-9);
            let beta = 0.1;
            let arg = 2.0 * (1.0 - beta) * c / (c + 4.0 + (8.0 * c + 16.0).sqrt());
            assert!((arg - (1.0 - beta) / p).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_values() {
        assert_relative_eq!(beta_threshold(1.0, 1.0), 0.5);
        assert_relative_eq!(beta_threshold(0.5, 1.0), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn index_time_values() {
        assert_eq!(index_time_tail(100, 0.0), 1.0);
        assert_relative_eq!(index_time_tail(100, 0.5), (-100.0 * 0.25 / 3.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn liveness_forms() {
        let l = liveness_latency(10, 0.01, 0.1, 0.0);
        assert_relative_eq!(l.simple, 6200.0, epsilon = 1e-9);
        let big = liveness_latency(10, 0.01, 0.1, 1e6);
        assert!(big.refined >= big.simple);
        let agree = liveness_latency(10, 0.01, 0.0, 2.0 * 10.0 / 0.01);
        assert_relative_eq!(agree.refined, agree.simple, epsilon = 1e-9);
    }

    #[test]
    fn k_cp_heuristic_meets_target() {
        let (k_cp, k1, k2, delta) = k_cp_heuristic(0.99, 1000, 1e-3).unwrap();
        assert_eq!(k_cp, 2 * k1 * k2);
        let a = AnalysisParams::from_p_good(0.99, delta, 1000);
        assert!(pp_tail(k1, k2, delta, 1000, a.alpha_x, a.alpha_p) < 1e-3);
        assert!(k_cp_heuristic(0.5, 1000, 1e-3).is_none());
    }

    #[test]
    fn bounded_delay_reference_shape() {
        let r = bounded_delay_reference(&[0.0, 0.1, 0.5], 2.0);
        assert_eq!(r[0].lambda_max, Some(f64::INFINITY));
        assert!(r[1].lambda_max.unwrap() > 0.0);
        assert_eq!(r[2].lambda_max, None);
    }
}
