//! The perimeter chain under its three laws: conditioned to stay positive
//! (infinite map), absorbed at zero (finite map), and steered into a target
//! face of half-degree p (absorbed at -p).
//!
//! Kernel rows are normalized numerically, so they are exact Markov kernels
//! even when the step distribution is only approximately critical. Sampling
//! never materializes a row: each law has an exact rejection scheme whose
//! envelope mixes a cached head table (small perimeters), the raw step
//! distribution (large perimeters) and an analytic positive-tail majorant.

use crate::model::{h_down_p, h_up, h_up_ext, h_up_real, ModelParams, StepDistribution};
use crate::numerics::{tail_sum, Kahan};
use crate::rng::AliasTable;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Perimeter at and below this value uses exact per-perimeter alias tables.
const P_TAB: u64 = 256;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("step cap of {0} exceeded before horizon or absorption")]
    StepCapExceeded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Law {
    /// Conditioned to stay positive (h↑ transform).
    Infinite,
    /// Absorbed at zero, holes at most halve the boundary.
    Finite,
    /// Steered into a target face of half-degree p; dies at -p.
    Target(u64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerimeterPath {
    pub law: Law,
    pub start: u64,
    /// P(0), P(1), ...; stops at absorption or horizon.
    pub values: Vec<i64>,
    /// Index of the absorbing value (0 or -p) when absorbed.
    pub absorbed_at: Option<usize>,
}

impl PerimeterPath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of transitions.
    pub fn steps(&self) -> usize {
        self.values.len().saturating_sub(1)
    }
}

/// One row of a transition kernel, with the analytic remainder beyond the
/// stored window.
#[derive(Debug, Clone)]
pub struct KernelRow {
    pub p: u64,
    pub k_lo: i64,
    /// probabilities for k = k_lo, k_lo+1, ...
    pub probs: Vec<f64>,
    /// probability mass beyond the window (analytic tail estimate)
    pub beyond: f64,
}

impl KernelRow {
    pub fn prob(&self, k: i64) -> f64 {
        let idx = k - self.k_lo;
        if idx < 0 || idx as usize >= self.probs.len() {
            0.0
        } else {
            self.probs[idx as usize]
        }
    }

    /// Window sum plus analytic remainder; 1 within 1e-9 by construction
    /// checks.
    pub fn total(&self) -> f64 {
        let mut s = Kahan::default();
        for &x in &self.probs {
            s.add(x);
        }
        s.add(self.beyond);
        s.value()
    }
}

/// Unnormalized row weight of the infinite law at perimeter p.
fn weight_infinite(nu: &StepDistribution, p: u64, k: i64) -> f64 {
    nu.mass(k) * h_up_ext(p as i64 + k)
}

/// W-ratio surrogate for the finite law: c_q^{-k} W(p+k)/W(p) with the
/// asymptotic partition function, which collapses to ((p+k+1)/(p+1))^{-a}.
/// The +1 shift pins W(0) through the step distribution itself
/// (ν(k) = 2 W(-1-k) c^k for k < 0).
fn w_ratio(a: f64, p: u64, m: i64) -> f64 {
    debug_assert!(m >= 0);
    ((m as f64 + 1.0) / (p as f64 + 1.0)).powf(-a)
}

/// Indicator of the finite-law support: 1 when m > (p-1)/2, 1/2 at equality.
fn finite_indicator(p: u64, m: i64) -> f64 {
    let two_m = 2 * m;
    let pm1 = p as i64 - 1;
    if two_m > pm1 {
        1.0
    } else if two_m == pm1 {
        0.5
    } else {
        0.0
    }
}

fn weight_finite(nu: &StepDistribution, a: f64, p: u64, k: i64) -> f64 {
    let m = p as i64 + k;
    if m < 0 {
        return 0.0;
    }
    let ind = finite_indicator(p, m);
    if ind == 0.0 {
        return 0.0;
    }
    nu.mass(k) * w_ratio(a, p, m) * ind
}

/// Target-law weight, h↓_pt extended by the killing convention.
fn weight_target(nu: &StepDistribution, pt: u64, p: u64, k: i64) -> f64 {
    let m = p as i64 + k;
    if m >= 1 || m == -(pt as i64) {
        nu.mass(k) * h_down_p(m, pt)
    } else {
        0.0
    }
}

/// Normalizer Σ_k w(k) for the infinite law (head + analytic tail).
fn z_infinite(nu: &StepDistribution, p: u64) -> f64 {
    nu.h_up_weighted_total(p)
}

fn z_finite(nu: &StepDistribution, a: f64, p: u64) -> f64 {
    let mut s = Kahan::default();
    let k_lo = -(p as i64);
    for k in k_lo..=nu.k_head() {
        s.add(weight_finite(nu, a, p, k));
    }
    if let Some(t) = nu.pos_tail() {
        let pf = p as f64;
        let f = move |x: f64| {
            let dm = t.coef * (x.powf(1.0 - t.exp) - (x + 1.0).powf(1.0 - t.exp));
            dm * ((pf + x + 1.0) / (pf + 1.0)).powf(-a)
        };
        s.add(tail_sum(f, (nu.k_head() + 1) as u64, 1e-11));
    }
    s.value()
}

fn h_down_p_real(m: f64, pt: u64) -> f64 {
    // real-argument extension of h↓_pt for analytic tails
    let h_down = h_up_real(m) / (2.0 * m);
    let h_down_pt = crate::model::h_down(pt);
    h_down * h_down_pt * m / (m + pt as f64)
}

fn z_target(nu: &StepDistribution, pt: u64, p: u64) -> f64 {
    let mut s = Kahan::default();
    for k in (1 - p as i64)..=nu.k_head() {
        s.add(weight_target(nu, pt, p, k));
    }
    // killing jump
    s.add(nu.mass(-(p as i64) - pt as i64));
    if let Some(t) = nu.pos_tail() {
        let pf = p as f64;
        let f = move |x: f64| {
            let dm = t.coef * (x.powf(1.0 - t.exp) - (x + 1.0).powf(1.0 - t.exp));
            dm * h_down_p_real(pf + x, pt)
        };
        s.add(tail_sum(f, (nu.k_head() + 1) as u64, 1e-11));
    }
    s.value() / h_down_p(p as i64, pt)
}

/// Exact row of the infinite-law kernel on [1-p, k_cap].
pub fn kernel_row_infinite(nu: &StepDistribution, p: u64, k_cap: i64) -> KernelRow {
    let z = z_infinite(nu, p);
    let k_lo = 1 - p as i64;
    let probs: Vec<f64> = (k_lo..=k_cap)
        .map(|k| weight_infinite(nu, p, k) / z)
        .collect();
    let beyond = if k_cap >= nu.k_head() {
        let t = nu.pos_tail();
        match t {
            Some(t) => {
                let pf = p as f64;
                tail_sum(
                    move |x: f64| {
                        let dm =
                            t.coef * (x.powf(1.0 - t.exp) - (x + 1.0).powf(1.0 - t.exp));
                        dm * h_up_real(pf + x)
                    },
                    (k_cap + 1) as u64,
                    1e-11,
                ) / z
            }
            None => 0.0,
        }
    } else {
        (k_cap + 1..=nu.k_head())
            .map(|k| weight_infinite(nu, p, k) / z)
            .sum::<f64>()
            + kernel_row_infinite(nu, p, nu.k_head()).beyond
    };
    KernelRow {
        p,
        k_lo,
        probs,
        beyond,
    }
}

/// Exact row of the finite-law (absorbed) kernel.
pub fn kernel_row_finite(
    nu: &StepDistribution,
    params: &ModelParams,
    p: u64,
    k_cap: i64,
) -> KernelRow {
    let a = params.a;
    let z = z_finite(nu, a, p);
    let k_lo = -(p as i64);
    let probs: Vec<f64> = (k_lo..=k_cap)
        .map(|k| weight_finite(nu, a, p, k) / z)
        .collect();
    let beyond = match nu.pos_tail() {
        Some(t) if k_cap >= nu.k_head() => {
            let pf = p as f64;
            tail_sum(
                move |x: f64| {
                    let dm = t.coef * (x.powf(1.0 - t.exp) - (x + 1.0).powf(1.0 - t.exp));
                    dm * ((pf + x + 1.0) / (pf + 1.0)).powf(-a)
                },
                (k_cap + 1) as u64,
                1e-11,
            ) / z
        }
        _ => 0.0,
    };
    KernelRow {
        p,
        k_lo,
        probs,
        beyond,
    }
}

/// Exact row of the target-law kernel, including the killing jump to
/// -p_target at k = -p-p_target.
pub fn kernel_row_target(nu: &StepDistribution, p: u64, p_target: u64, k_cap: i64) -> KernelRow {
    let z = z_target(nu, p_target, p) * h_down_p(p as i64, p_target);
    let k_lo = -(p as i64) - p_target as i64;
    let probs: Vec<f64> = (k_lo..=k_cap)
        .map(|k| {
            let m = p as i64 + k;
            let w = if m == -(p_target as i64) {
                nu.mass(k)
            } else if m >= 1 {
                weight_target(nu, p_target, p, k)
            } else {
                0.0
            };
            w / z
        })
        .collect();
    let beyond = match nu.pos_tail() {
        Some(t) if k_cap >= nu.k_head() => {
            let pf = p as f64;
            tail_sum(
                move |x: f64| {
                    let dm = t.coef * (x.powf(1.0 - t.exp) - (x + 1.0).powf(1.0 - t.exp));
                    dm * h_down_p_real(pf + x, p_target)
                },
                (k_cap + 1) as u64,
                1e-11,
            ) / z
        }
        _ => 0.0,
    };
    KernelRow {
        p,
        k_lo,
        probs,
        beyond,
    }
}

/// Outcome of one kernel step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Move(i64),
    /// Finite law reached 0, or target law jumped to -p_target.
    Absorbed(i64),
}

struct SmallTable {
    k_lo: i64,
    alias: AliasTable,
    /// mass of the analytic positive-tail envelope beyond k_head
    env_mass: f64,
    /// death-atom weight (target law only), sampled exactly
    death: f64,
}

/// Envelope constants for the positive analytic tail of a law's weights.
#[derive(Clone, Copy)]
struct TailEnvelope {
    /// per-step mass majorant: cell(k) = scale * ∫_{k-1}^k x^{-r} dx
    scale: f64,
    r: f64,
    from: u64,
}

impl TailEnvelope {
    fn mass(&self) -> f64 {
        self.scale * (self.from as f64).powf(1.0 - self.r) / (self.r - 1.0)
    }

    fn cell(&self, k: f64) -> f64 {
        self.scale * ((k - 1.0).powf(1.0 - self.r) - k.powf(1.0 - self.r)) / (self.r - 1.0)
    }

    fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let x = crate::numerics::pareto_tail_inverse(rng.random(), self.from as f64, self.r);
        (x.ceil() as i64).max(self.from as i64 + 1)
    }
}

/// Shared, immutable sampler for one (step distribution, law) pair.
pub struct PathSampler {
    nu: StepDistribution,
    law: Law,
    a: f64,
    step: crate::model::StepSampler,
    /// side-conditioned proposals for the rejection laws
    nonneg: AliasProposal,
    small: Vec<SmallTable>,
    /// sup_m h↓_pt(m) over m ≥ 1 (target law)
    target_sup: f64,
    pub step_cap: u64,
}

/// ν conditioned on a side, used to tighten rejection bounds.
struct AliasProposal {
    mass_nonneg: f64,
}

impl PathSampler {
    pub fn new(nu: &StepDistribution, params: &ModelParams, law: Law) -> Self {
        let a = params.a;
        let mut mass_nonneg = 0.0;
        for k in 0..=nu.k_head() {
            mass_nonneg += nu.mass(k);
        }
        mass_nonneg += nu.pos_tail_mass();
        let target_sup = match law {
            Law::Target(pt) => {
                let hi = (4 * pt + 8).max(16);
                (1..=hi).map(|m| h_down_p(m as i64, pt)).fold(0.0, f64::max)
            }
            _ => 0.0,
        };
        let mut s = PathSampler {
            nu: nu.clone(),
            law,
            a,
            step: nu.sampler(),
            nonneg: AliasProposal { mass_nonneg },
            small: Vec::new(),
            target_sup,
            step_cap: 100_000_000,
        };
        for p in 1..=P_TAB {
            s.small.push(s.build_small_table(p));
        }
        s
    }

    fn raw_weight(&self, p: u64, k: i64) -> f64 {
        match self.law {
            Law::Infinite => weight_infinite(&self.nu, p, k),
            Law::Finite => weight_finite(&self.nu, self.a, p, k),
            Law::Target(pt) => weight_target(&self.nu, pt, p, k),
        }
    }

    fn tail_envelope(&self, p: u64) -> Option<TailEnvelope> {
        let t = self.nu.pos_tail()?;
        let from = (self.nu.k_head() as u64).max(p);
        // per-step mass bound ν(k) ≤ coef (exp-1) k^{-exp} for k > k_head
        let nu_scale = t.coef * (t.exp - 1.0);
        match self.law {
            Law::Infinite => {
                // h↑(p+k) ≤ 2√(2k/π) for k ≥ p
                let scale = nu_scale * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
                Some(TailEnvelope {
                    scale,
                    r: t.exp - 0.5,
                    from,
                })
            }
            Law::Finite => {
                // w-ratio ≤ value at the window edge, decreasing beyond
                let w_edge = w_ratio(self.a, p, from as i64 + 1 + p as i64);
                Some(TailEnvelope {
                    scale: nu_scale * w_edge.max(1.0),
                    r: t.exp,
                    from,
                })
            }
            Law::Target(pt) => {
                let m0 = p as f64 + from as f64;
                let bound = sup_h_down_p_from(m0, pt);
                Some(TailEnvelope {
                    scale: nu_scale * bound,
                    r: t.exp,
                    from,
                })
            }
        }
    }

    fn build_small_table(&self, p: u64) -> SmallTable {
        let k_lo = match self.law {
            Law::Infinite | Law::Target(_) => 1 - p as i64,
            Law::Finite => -(p as i64),
        };
        let k_hi = self.nu.k_head();
        let weights: Vec<f64> = (k_lo..=k_hi).map(|k| self.raw_weight(p, k)).collect();
        let death = match self.law {
            Law::Target(pt) => self.nu.mass(-(p as i64) - pt as i64),
            _ => 0.0,
        };
        let env_mass = self.tail_envelope(p).map(|e| e.mass()).unwrap_or(0.0);
        SmallTable {
            k_lo,
            alias: AliasTable::new(&weights),
            env_mass,
            death,
        }
    }

    /// One exact kernel step from perimeter p ≥ 1.
    pub fn step<R: rand::Rng + ?Sized>(&self, p: u64, rng: &mut R) -> Step {
        debug_assert!(p >= 1);
        let k = if p <= P_TAB {
            self.step_small(p, rng)
        } else {
            match self.law {
                Law::Infinite => self.step_infinite_large(p, rng),
                Law::Finite => self.step_finite_large(p, rng),
                Law::Target(_) => self.step_target_large(p, rng),
            }
        };
        let m = p as i64 + k;
        if m <= 0 {
            Step::Absorbed(m)
        } else {
            Step::Move(k)
        }
    }

    fn step_small<R: rand::Rng + ?Sized>(&self, p: u64, rng: &mut R) -> i64 {
        let table = &self.small[(p - 1) as usize];
        let head_mass = table.alias.total();
        let total = head_mass + table.env_mass + table.death;
        let env = self.tail_envelope(p);
        loop {
            let u: f64 = rng.random::<f64>() * total;
            if u < head_mass {
                return table.k_lo + table.alias.sample(rng) as i64;
            }
            if u < head_mass + table.death {
                if let Law::Target(pt) = self.law {
                    return -(p as i64) - pt as i64;
                }
                unreachable!("death mass without target law");
            }
            let env = env.as_ref().expect("tail mass without a positive tail");
            let k = env.draw(rng);
            let accept = self.raw_weight(p, k) / env.cell(k as f64);
            debug_assert!(accept <= 1.0 + 1e-12);
            if rng.random::<f64>() < accept {
                return k;
            }
        }
    }

    fn step_infinite_large<R: rand::Rng + ?Sized>(&self, p: u64, rng: &mut R) -> i64 {
        let kp = (self.nu.k_head() as u64).max(p) as i64;
        let bound = h_up(p + kp as u64);
        let head_prob = 1.0
            - if kp >= self.nu.k_head() {
                match self.nu.pos_tail() {
                    Some(_) => self.nu.pos_tail_mass_from(kp + 1),
                    None => 0.0,
                }
            } else {
                0.0
            };
        let mass_a = bound * head_prob;
        let env = self.tail_envelope(p);
        let mass_b = env.as_ref().map(|e| e.mass()).unwrap_or(0.0);
        loop {
            let u: f64 = rng.random::<f64>() * (mass_a + mass_b);
            if u < mass_a {
                // proposal: ν conditioned on k ≤ kp
                let k = loop {
                    let k = self.step.sample(rng);
                    if k <= kp {
                        break k;
                    }
                };
                let accept = h_up_ext(p as i64 + k) / bound;
                if rng.random::<f64>() < accept {
                    return k;
                }
            } else {
                let env = env.as_ref().unwrap();
                let k = env.draw(rng);
                let accept = self.raw_weight(p, k) / env.cell(k as f64);
                debug_assert!(accept <= 1.0 + 1e-12);
                if rng.random::<f64>() < accept {
                    return k;
                }
            }
        }
    }

    fn step_finite_large<R: rand::Rng + ?Sized>(&self, p: u64, rng: &mut R) -> i64 {
        // envelope: w(k) ≤ 1 for k ≥ 0 and ≤ 2^a for k < 0
        let neg_bound = 2.0f64.powf(self.a);
        let mass_pos = self.nonneg.mass_nonneg;
        let mass_neg = (1.0 - mass_pos) * neg_bound;
        loop {
            let u: f64 = rng.random::<f64>() * (mass_pos + mass_neg);
            let want_neg = u >= mass_pos;
            let k = loop {
                let k = self.step.sample(rng);
                if (k < 0) == want_neg {
                    break k;
                }
            };
            let bound = if want_neg { neg_bound } else { 1.0 };
            let m = p as i64 + k;
            let w = if m >= 0 {
                w_ratio(self.a, p, m) * finite_indicator(p, m)
            } else {
                0.0
            };
            debug_assert!(w <= bound * (1.0 + 1e-12));
            if rng.random::<f64>() < w / bound {
                return k;
            }
        }
    }

    fn step_target_large<R: rand::Rng + ?Sized>(&self, p: u64, rng: &mut R) -> i64 {
        let pt = match self.law {
            Law::Target(pt) => pt,
            _ => unreachable!(),
        };
        let death_k = -(p as i64) - pt as i64;
        let death = self.nu.mass(death_k);
        let mass_moves = self.target_sup; // bound on Σ ν(k) h↓(p+k) ≤ sup h↓ · 1
        loop {
            let u: f64 = rng.random::<f64>() * (death + mass_moves);
            if u < death {
                return death_k;
            }
            let k = self.step.sample(rng);
            let m = p as i64 + k;
            if m < 1 {
                continue;
            }
            let w = h_down_p(m, pt);
            debug_assert!(w <= self.target_sup * (1.0 + 1e-12));
            if rng.random::<f64>() < w / self.target_sup {
                return k;
            }
        }
    }

    /// Sample a full path, stopping at absorption or after `horizon` steps.
    pub fn sample_path<R: rand::Rng + ?Sized>(
        &self,
        start: u64,
        horizon: u64,
        rng: &mut R,
    ) -> Result<PerimeterPath, PathError> {
        assert!(start >= 1);
        let mut values: Vec<i64> = Vec::with_capacity((horizon.min(1 << 22) + 1) as usize);
        values.push(start as i64);
        let mut p = start;
        let mut absorbed_at = None;
        for n in 0..horizon {
            if n >= self.step_cap {
                return Err(PathError::StepCapExceeded(self.step_cap));
            }
            match self.step(p, rng) {
                Step::Move(k) => {
                    p = (p as i64 + k) as u64;
                    values.push(p as i64);
                }
                Step::Absorbed(m) => {
                    values.push(m);
                    absorbed_at = Some(values.len() - 1);
                    break;
                }
            }
        }
        Ok(PerimeterPath {
            law: self.law,
            start,
            values,
            absorbed_at,
        })
    }
}

fn sup_h_down_p_from(m0: f64, pt: u64) -> f64 {
    // h↓_pt(m) is unimodal with mode near pt; bound the sup over [m0, ∞)
    let at = |m: f64| h_down_p_real(m, pt);
    let mut best = at(m0);
    let mode = pt as f64;
    if mode > m0 {
        best = best.max(at(mode)).max(at(mode + 1.0)).max(at(mode - 1.0));
    }
    best * (1.0 + 1e-9)
}

/// Convenience wrapper matching the module contract.
pub fn sample_path<R: rand::Rng + ?Sized>(
    law: Law,
    nu: &StepDistribution,
    params: &ModelParams,
    start: u64,
    horizon: u64,
    rng: &mut R,
) -> Result<PerimeterPath, PathError> {
    PathSampler::new(nu, params, law).sample_path(start, horizon, rng)
}

/// CSV dump `replica,n,P`, floats with full round-trip precision.
pub fn write_paths_csv<W: std::io::Write>(
    paths: &[PerimeterPath],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "replica,n,P")?;
    for (r, path) in paths.iter().enumerate() {
        for (n, v) in path.values.iter().enumerate() {
            writeln!(w, "{r},{n},{v}")?;
        }
    }
    Ok(())
}
