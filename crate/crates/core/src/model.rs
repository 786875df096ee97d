//! The step distribution of the peeling walk and the harmonic functions used
//! to condition it.
//!
//! The built-in family has exact power-law tails: per-step mass
//! `p_q k^{-a}` on the negative side and tail mass
//! `p_q cos(aπ)/(a-1) k^{1-a}` on the positive side, with the head stored as
//! a finite table. The head absorbs the mass deficit at zero and, for
//! a ≥ 2, a one-atom correction that centers the walk (otherwise the
//! conditioned chains would not be in the intended heavy-tailed basin).

use crate::numerics::{hurwitz_zeta, ln_gamma, solve_dense, tail_sum, zeta_shifted, Kahan};
use crate::rng::AliasTable;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::sync::OnceLock;
use thiserror::Error;

pub const A_MIN: f64 = 1.5;
pub const A_MAX: f64 = 2.5;

/// Default head half-width of the built-in family.
pub const DEFAULT_K_HEAD: i64 = 4096;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("exponent a = {0} outside (3/2, 5/2]")]
    InvalidExponent(f64),
    #[error("tail constant too large: residual mass at zero is {0}")]
    MassDeficitNegative(f64),
    #[error("mean exposure diverges (positive tail exponent {0} <= 2)")]
    DivergentExposure(f64),
    #[error("invalid distribution file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Global constants attached to a run of the built-in family.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelParams {
    /// Tail exponent, in (3/2, 5/2].
    pub a: f64,
    /// Tail constant of the step distribution.
    pub p_q: f64,
    /// Bookkeeping constant; cancels in every normalized kernel.
    pub c_q: f64,
    /// π / Γ(a).
    pub c_a: f64,
    /// Mean exposure Σ_{k≥0} (2k+1) ν(k); None when it diverges (a ≤ 2).
    pub e_q: Option<f64>,
}

impl ModelParams {
    pub fn new(a: f64, p_q: f64) -> Result<Self, ModelError> {
        if !(a > A_MIN && a <= A_MAX) {
            return Err(ModelError::InvalidExponent(a));
        }
        if p_q <= 0.0 {
            return Err(ModelError::MassDeficitNegative(p_q));
        }
        Ok(ModelParams {
            a,
            p_q,
            c_q: 1.0,
            c_a: std::f64::consts::PI / ln_gamma(a).exp(),
            e_q: None,
        })
    }

    pub fn with_exposure(mut self, nu: &StepDistribution) -> Self {
        self.e_q = mean_exposure(nu).ok();
        self
    }
}

const H_TABLE_LEN: usize = 1 << 22;

fn h_up_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![0.0; H_TABLE_LEN];
        // h(1) = 1, h(m+1) = h(m) (2m+1)/(2m)
        if H_TABLE_LEN > 1 {
            t[1] = 1.0;
        }
        for m in 1..(H_TABLE_LEN - 1) {
            let mf = m as f64;
            t[m + 1] = t[m] * (2.0 * mf + 1.0) / (2.0 * mf);
        }
        t
    })
}

/// h↑(ℓ) = 2ℓ 2^{-2ℓ} C(2ℓ, ℓ); the harmonic function of the walk killed at
/// non-positive values. h↑(0) = 0 by the usual extension.
pub fn h_up(l: u64) -> f64 {
    if l == 0 {
        return 0.0;
    }
    let table = h_up_table();
    if (l as usize) < table.len() {
        table[l as usize]
    } else {
        h_up_real(l as f64)
    }
}

/// Real-argument extension of h↑ via log-gamma, used for analytic tails.
pub fn h_up_real(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ((2.0 * x).ln() + ln_gamma(2.0 * x + 1.0)
        - 2.0 * ln_gamma(x + 1.0)
        - 2.0 * x * std::f64::consts::LN_2)
        .exp()
}

/// h↑ extended by zero to non-positive integers.
pub fn h_up_ext(l: i64) -> f64 {
    if l <= 0 {
        0.0
    } else {
        h_up(l as u64)
    }
}

/// h↓(ℓ) = 2^{-2ℓ} C(2ℓ, ℓ) = h↑(ℓ)/(2ℓ); h↓(0) = 1.
pub fn h_down(l: u64) -> f64 {
    if l == 0 {
        return 1.0;
    }
    h_up(l) / (2.0 * l as f64)
}

/// h↓_p(ℓ) = h↓(ℓ) h↓(p) ℓ/(ℓ+p) for ℓ ≥ 1, and 1_{ℓ = -p} for ℓ ≤ 0.
pub fn h_down_p(l: i64, p: u64) -> f64 {
    assert!(p >= 1);
    if l <= 0 {
        return if l == -(p as i64) { 1.0 } else { 0.0 };
    }
    let lf = l as f64;
    h_down(l as u64) * h_down(p) * lf / (lf + p as f64)
}

/// A power tail `coef * x^{-exp}` attached beyond the head table.
///
/// On the negative side `coef |k|^{-exp}` is the per-step mass; on the
/// positive side `coef k^{1-exp}` is the mass of `[k, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTail {
    pub coef: f64,
    pub exp: f64,
}

/// Step distribution: finite head table plus optional analytic tails.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDistribution {
    k_head: i64,
    /// mass at k = idx - k_head, idx in [0, 2 k_head]
    head: Vec<f64>,
    neg_tail: Option<PowerTail>,
    pos_tail: Option<PowerTail>,
    neg_tail_mass: f64,
    pos_tail_mass: f64,
    /// true when the positive tail uses a non-canonical steeper exponent
    pub steep_positive_tail: bool,
}

impl StepDistribution {
    /// Distribution supported on a finite table; `pairs` are (k, mass).
    pub fn from_table(pairs: &[(i64, f64)]) -> Self {
        let k_head = pairs.iter().map(|&(k, _)| k.abs()).max().unwrap_or(0);
        let mut head = vec![0.0; (2 * k_head + 1) as usize];
        for &(k, m) in pairs {
            head[(k + k_head) as usize] += m;
        }
        StepDistribution {
            k_head,
            head,
            neg_tail: None,
            pos_tail: None,
            neg_tail_mass: 0.0,
            pos_tail_mass: 0.0,
            steep_positive_tail: false,
        }
    }

    pub fn k_head(&self) -> i64 {
        self.k_head
    }

    pub fn neg_tail(&self) -> Option<PowerTail> {
        self.neg_tail
    }

    pub fn pos_tail(&self) -> Option<PowerTail> {
        self.pos_tail
    }

    /// Point mass ν(k).
    pub fn mass(&self, k: i64) -> f64 {
        if k.abs() <= self.k_head {
            return self.head[(k + self.k_head) as usize];
        }
        if k < 0 {
            match self.neg_tail {
                Some(t) => t.coef * (k.abs() as f64).powf(-t.exp),
                None => 0.0,
            }
        } else {
            match self.pos_tail {
                Some(_) => self.pos_tail_mass_from(k) - self.pos_tail_mass_from(k + 1),
                None => 0.0,
            }
        }
    }

    /// ν([k, ∞)) for k > k_head (analytic).
    pub fn pos_tail_mass_from(&self, k: i64) -> f64 {
        debug_assert!(k > self.k_head);
        match self.pos_tail {
            Some(t) => t.coef * (k as f64).powf(1.0 - t.exp),
            None => 0.0,
        }
    }

    /// ν((-∞, -k]) for k > k_head (Hurwitz zeta, exact to f64 accuracy).
    pub fn neg_tail_mass_from(&self, k: i64) -> f64 {
        debug_assert!(k > self.k_head);
        match self.neg_tail {
            Some(t) => t.coef * hurwitz_zeta(t.exp, k as f64),
            None => 0.0,
        }
    }

    pub fn neg_tail_mass(&self) -> f64 {
        self.neg_tail_mass
    }

    pub fn pos_tail_mass(&self) -> f64 {
        self.pos_tail_mass
    }

    /// Total mass (compensated head sum plus tail masses); 1 within 1e-12
    /// for every built distribution.
    pub fn total_mass(&self) -> f64 {
        let mut s = Kahan::default();
        for &m in &self.head {
            s.add(m);
        }
        s.add(self.neg_tail_mass);
        s.add(self.pos_tail_mass);
        s.value()
    }

    /// First moment Σ k ν(k); None when the positive side has exponent ≤ 2
    /// (the mean diverges).
    pub fn mean(&self) -> Option<f64> {
        if let Some(t) = self.pos_tail {
            if t.exp <= 2.0 {
                return None;
            }
        }
        if let Some(t) = self.neg_tail {
            if t.exp <= 2.0 {
                return None;
            }
        }
        let mut s = Kahan::default();
        for k in -self.k_head..=self.k_head {
            s.add(k as f64 * self.mass(k));
        }
        if let Some(t) = self.neg_tail {
            s.add(-t.coef * hurwitz_zeta(t.exp - 1.0, (self.k_head + 1) as f64));
        }
        if let Some(t) = self.pos_tail {
            // Σ_{k>K} k (tm(k)-tm(k+1)) = (K+1) tm(K+1) + Σ_{j≥K+2} tm(j)
            let k1 = (self.k_head + 1) as f64;
            s.add((self.k_head + 1) as f64 * t.coef * k1.powf(1.0 - t.exp));
            s.add(t.coef * hurwitz_zeta(t.exp - 1.0, k1 + 1.0));
        }
        Some(s.value())
    }

    /// Σ_k ν(k) h↑(ℓ+k) with h↑ zero on non-positive integers, including the
    /// analytic tails. Relative accuracy ~1e-10.
    pub fn h_up_weighted_total(&self, l: u64) -> f64 {
        let l = l as i64;
        assert!(l >= 1);
        let mut s = Kahan::default();
        let lo = (1 - l).max(-self.k_head);
        for k in lo..=self.k_head {
            let m = self.head[(k + self.k_head) as usize];
            if m != 0.0 {
                s.add(m * h_up_ext(l + k));
            }
        }
        if let Some(t) = self.neg_tail {
            // contributions with k < -k_head and l + k >= 1
            let m_hi = l - 1;
            if m_hi > self.k_head {
                for m in (self.k_head + 1)..=m_hi {
                    s.add(t.coef * (m as f64).powf(-t.exp) * h_up_ext(l - m));
                }
            }
        }
        if let Some(t) = self.pos_tail {
            let lf = l as f64;
            let f = move |x: f64| {
                let dm = t.coef * (x.powf(1.0 - t.exp) - (x + 1.0).powf(1.0 - t.exp));
                dm * h_up_real(lf + x)
            };
            s.add(tail_sum(f, (self.k_head + 1) as u64, 1e-11));
        }
        s.value()
    }

    /// Upper bound on ν's support, None when the positive tail is infinite.
    pub fn support_max(&self) -> Option<i64> {
        if self.pos_tail.is_some() {
            return None;
        }
        (-self.k_head..=self.k_head)
            .rev()
            .find(|&k| self.head[(k + self.k_head) as usize] > 0.0)
    }

    /// Lower bound on ν's support, None when the negative tail is infinite.
    pub fn support_min(&self) -> Option<i64> {
        if self.neg_tail.is_some() {
            return None;
        }
        (-self.k_head..=self.k_head).find(|&k| self.head[(k + self.k_head) as usize] > 0.0)
    }

    /// Exact sampler (alias head + analytic tail inversion).
    pub fn sampler(&self) -> StepSampler {
        StepSampler::new(self)
    }

    /// Serialize in the line-based text format (bit-exact round trip).
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# mapflow step distribution v1")?;
        for k in -self.k_head..=self.k_head {
            writeln!(w, "{k}\t{}", self.head[(k + self.k_head) as usize])?;
        }
        if let Some(t) = self.neg_tail {
            writeln!(w, "negtail {} {} {}", t.exp, t.coef, self.k_head)?;
        }
        if let Some(t) = self.pos_tail {
            writeln!(w, "postail {} {} {}", t.exp, t.coef, self.k_head)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, ModelError> {
        let mut pairs: Vec<(i64, f64)> = Vec::new();
        let mut neg: Option<(f64, f64, i64)> = None;
        let mut pos: Option<(f64, f64, i64)> = None;
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("negtail ") {
                neg = Some(parse_tail(rest)?);
            } else if let Some(rest) = line.strip_prefix("postail ") {
                pos = Some(parse_tail(rest)?);
            } else {
                let mut it = line.split('\t');
                let k: i64 = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| ModelError::Parse(format!("bad head line: {line}")))?;
                let m: f64 = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| ModelError::Parse(format!("bad head line: {line}")))?;
                pairs.push((k, m));
            }
        }
        let k_head = match (neg, pos) {
            (Some((_, _, k)), _) | (_, Some((_, _, k))) => k,
            _ => pairs.iter().map(|&(k, _)| k.abs()).max().unwrap_or(0),
        };
        let mut head = vec![0.0; (2 * k_head + 1) as usize];
        for (k, m) in pairs {
            if k.abs() > k_head {
                return Err(ModelError::Parse(format!("head entry {k} beyond k_head")));
            }
            head[(k + k_head) as usize] = m;
        }
        let mut d = StepDistribution {
            k_head,
            head,
            neg_tail: neg.map(|(exp, coef, _)| PowerTail { exp, coef }),
            pos_tail: pos.map(|(exp, coef, _)| PowerTail { exp, coef }),
            neg_tail_mass: 0.0,
            pos_tail_mass: 0.0,
            steep_positive_tail: false,
        };
        d.refresh_tail_masses();
        Ok(d)
    }

    fn refresh_tail_masses(&mut self) {
        self.neg_tail_mass = match self.neg_tail {
            Some(t) => t.coef * hurwitz_zeta(t.exp, (self.k_head + 1) as f64),
            None => 0.0,
        };
        self.pos_tail_mass = match self.pos_tail {
            Some(t) => t.coef * ((self.k_head + 1) as f64).powf(1.0 - t.exp),
            None => 0.0,
        };
    }
}

fn parse_tail(rest: &str) -> Result<(f64, f64, i64), ModelError> {
    let fields: Vec<&str> = rest.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(ModelError::Parse(format!("bad tail line: {rest}")));
    }
    Ok((
        fields[0]
            .parse()
            .map_err(|_| ModelError::Parse(rest.into()))?,
        fields[1]
            .parse()
            .map_err(|_| ModelError::Parse(rest.into()))?,
        fields[2]
            .parse()
            .map_err(|_| ModelError::Parse(rest.into()))?,
    ))
}

/// Build the built-in family: exact Pareto tails, head filled with the same
/// formulas, deficit at zero, centering atom for a ≥ 2.
pub fn build_asymptotic_nu(a: f64, p: f64, k_head: i64) -> Result<StepDistribution, ModelError> {
    if !(a > A_MIN && a <= A_MAX) {
        return Err(ModelError::InvalidExponent(a));
    }
    assert!(k_head >= 2);
    let cos_api = (a * std::f64::consts::PI).cos();
    let canonical_coef = p * cos_api / (a - 1.0);
    // At a = 5/2 the canonical positive tail vanishes; substitute a steeper
    // non-canonical exponent so the positive side keeps mass.
    let (pos, steep) = if canonical_coef.abs() < 1e-14 {
        (
            PowerTail {
                coef: p,
                exp: a + 1.0,
            },
            true,
        )
    } else {
        (
            PowerTail {
                coef: canonical_coef,
                exp: a,
            },
            false,
        )
    };
    let neg = PowerTail { coef: p, exp: a };
    let mut head = vec![0.0; (2 * k_head + 1) as usize];
    for k in 1..=k_head {
        head[(k_head - k) as usize] = p * (k as f64).powf(-a);
        head[(k_head + k) as usize] =
            pos.coef * ((k as f64).powf(1.0 - pos.exp) - ((k + 1) as f64).powf(1.0 - pos.exp));
    }
    // Centering: for a ≥ 2 shift one atom between 0 and ±1 so that the
    // (symmetric-truncation) mean vanishes; for a < 2 tails dominate and no
    // centering is meaningful.
    let mut shift_plus = 0.0;
    let mut shift_minus = 0.0;
    if a >= 2.0 {
        let mean = if steep {
            // finite on both sides
            p * (hurwitz_zeta(pos.exp - 1.0, 1.0) - hurwitz_zeta(a - 1.0, 1.0))
        } else {
            // p * (cos(aπ)/(a-1) - 1) ζ(a-1), continued through a = 2
            let f1 = if (a - 2.0).abs() < 1e-5 {
                -1.0 + (a - 2.0) * (2.0 - std::f64::consts::PI.powi(2)) / 2.0
            } else {
                (cos_api / (a - 1.0) - 1.0) / (a - 2.0)
            };
            p * f1 * zeta_shifted(a - 1.0)
        };
        if mean < 0.0 {
            shift_plus = -mean;
        } else {
            shift_minus = mean;
        }
        head[(k_head + 1) as usize] += shift_plus;
        head[(k_head - 1) as usize] += shift_minus;
    }
    let mut d = StepDistribution {
        k_head,
        head,
        neg_tail: Some(neg),
        pos_tail: Some(pos),
        neg_tail_mass: 0.0,
        pos_tail_mass: 0.0,
        steep_positive_tail: steep,
    };
    d.refresh_tail_masses();
    let mut occupied = Kahan::default();
    for &m in &d.head {
        occupied.add(m);
    }
    occupied.add(d.neg_tail_mass);
    occupied.add(d.pos_tail_mass);
    let zero_mass = 1.0 - occupied.value();
    if zero_mass < -1e-12 {
        return Err(ModelError::MassDeficitNegative(zero_mass));
    }
    d.head[k_head as usize] = zero_mass.max(0.0);
    Ok(d)
}

/// Mean exposure Σ_{k≥0} (2k+1) ν(k).
pub fn mean_exposure(nu: &StepDistribution) -> Result<f64, ModelError> {
    if let Some(t) = nu.pos_tail {
        if t.exp <= 2.0 {
            return Err(ModelError::DivergentExposure(t.exp));
        }
    }
    let mut s = Kahan::default();
    for k in 0..=nu.k_head {
        s.add((2 * k + 1) as f64 * nu.mass(k));
    }
    if let Some(t) = nu.pos_tail {
        // Σ_{k>K} (2k+1)(tm(k)-tm(k+1)) = (2K+3) tm(K+1) + 2 Σ_{j≥K+2} tm(j)
        let k1 = (nu.k_head + 1) as f64;
        s.add((2.0 * k1 + 1.0) * t.coef * k1.powf(1.0 - t.exp));
        s.add(2.0 * t.coef * hurwitz_zeta(t.exp - 1.0, k1 + 1.0));
    }
    Ok(s.value())
}

/// max over ℓ in the range of |Σ_k ν(k) h↑(ℓ+k)/h↑(ℓ) − 1|.
pub fn criticality_residual(nu: &StepDistribution, l_range: std::ops::RangeInclusive<u64>) -> f64 {
    let mut worst: f64 = 0.0;
    for l in l_range {
        let z = nu.h_up_weighted_total(l) / h_up(l);
        worst = worst.max((z - 1.0).abs());
    }
    worst
}

/// Adjust head masses (least-norm correction) so that h↑-harmonicity holds
/// exactly on ℓ ∈ [1, l_max]. Test and diagnostic aid; panics if the
/// correction would drive a mass negative.
pub fn project_to_harmonic(nu: &StepDistribution, l_max: u64) -> StepDistribution {
    let kh = nu.k_head;
    let n_cols = (2 * kh + 1) as usize;
    let n_rows = l_max as usize + 1;
    // rows: harmonicity residuals for ℓ = 1..=l_max, then total-mass row
    let mut a_mat = vec![vec![0.0; n_cols]; n_rows];
    let mut resid = vec![0.0; n_rows];
    for l in 1..=l_max as i64 {
        for k in -kh..=kh {
            a_mat[(l - 1) as usize][(k + kh) as usize] = h_up_ext(l + k);
        }
        resid[(l - 1) as usize] = h_up(l as u64) - nu.h_up_weighted_total(l as u64);
    }
    for k in 0..n_cols {
        a_mat[n_rows - 1][k] = 1.0;
    }
    resid[n_rows - 1] = 0.0;
    // least-norm solution delta = Aᵀ (A Aᵀ)^{-1} r
    let mut gram = vec![vec![0.0; n_rows]; n_rows];
    for i in 0..n_rows {
        for j in 0..n_rows {
            gram[i][j] = a_mat[i]
                .iter()
                .zip(&a_mat[j])
                .map(|(x, y)| x * y)
                .sum::<f64>();
        }
    }
    let y = solve_dense(&gram, &resid).expect("harmonic projection system is singular");
    let mut out = nu.clone();
    for k in 0..n_cols {
        let delta: f64 = (0..n_rows).map(|i| a_mat[i][k] * y[i]).sum();
        out.head[k] += delta;
        assert!(
            out.head[k] >= -1e-12,
            "projection drove mass at k = {} negative",
            k as i64 - kh
        );
        out.head[k] = out.head[k].max(0.0);
    }
    out
}

/// O(1) exact sampler for a step distribution.
pub struct StepSampler {
    table: AliasTable,
    k_head: i64,
    neg_tail: Option<PowerTail>,
    pos_tail: Option<PowerTail>,
    pos_tail_mass: f64,
    /// alias outcomes: 0..=2k_head map to k = i - k_head; then neg tail, pos tail
    neg_slot: usize,
}

impl StepSampler {
    fn new(nu: &StepDistribution) -> Self {
        let mut weights = nu.head.clone();
        weights.push(nu.neg_tail_mass);
        weights.push(nu.pos_tail_mass);
        StepSampler {
            table: AliasTable::new(&weights),
            k_head: nu.k_head,
            neg_tail: nu.neg_tail,
            pos_tail: nu.pos_tail,
            pos_tail_mass: nu.pos_tail_mass,
            neg_slot: nu.head.len(),
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let slot = self.table.sample(rng);
        if slot < self.neg_slot {
            return slot as i64 - self.k_head;
        }
        if slot == self.neg_slot {
            self.sample_neg_tail(rng)
        } else {
            self.sample_pos_tail(rng)
        }
    }

    /// Discrete Pareto beyond the head: continuous envelope + ceiling, exact.
    fn sample_neg_tail<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let t = self.neg_tail.expect("neg tail sampled but absent");
        let x0 = self.k_head as f64;
        loop {
            let u: f64 = rng.random();
            let x = crate::numerics::pareto_tail_inverse(u, x0, t.exp);
            let k = x.ceil().max(x0 + 1.0);
            // envelope cell mass ∫_{k-1}^{k} x^{-exp} dx ≥ k^{-exp}
            let cell =
                ((k - 1.0).powf(1.0 - t.exp) - k.powf(1.0 - t.exp)) / (t.exp - 1.0);
            let accept = k.powf(-t.exp) / cell;
            if rng.random::<f64>() < accept {
                return -(k as i64);
            }
        }
    }

    /// Exact inverse CDF through the closed-form tail masses.
    fn sample_pos_tail<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let t = self.pos_tail.expect("pos tail sampled but absent");
        let u: f64 = rng.random::<f64>() * self.pos_tail_mass;
        // find k with tm(k+1) < u ≤ tm(k), tm(x) = coef x^{1-exp}
        let y = (u / t.coef).powf(-1.0 / (t.exp - 1.0));
        let k = (y.floor() as i64).max(self.k_head + 1);
        k
    }
}
