//! The discrete coalescing flow driven by the continuous-time perimeter.
//!
//! A perimeter path is run in continuous time (holding time E_n / (2 P(n)^{a-1})
//! at step n); each proper jump carries a uniform grid position. Replaying
//! the jumps backward from a horizon T yields a coalescing flow on the torus.
//! Trajectories are tracked as exact integer edge indices, so coalescence is
//! integer equality; the real-valued flow x ← x + g(x, z, u) is a derived
//! embedding and is checked against the index evolution.
//!
//! Anchor bookkeeping for the embedding: the replay starts in the gauge
//! A = 0 at time T and each replayed jump shifts the anchor by
//! v/(2 p_after) + max(1-1/z, (1-1/(2 p_after))(1-z))/2; the uniform fed to
//! the jump map is the window position in that gauge. This is the unique
//! bookkeeping under which the glued-face landing point is the next anchor
//! and the per-jump conditional mean of the jump map vanishes on the grid.

use crate::numerics::Kahan;
use crate::perimeter::{PathSampler, PerimeterPath, Step};
use crate::rng::exp1;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("start index {0} is off the time-T grid of size {1}")]
    StartOffGrid(u64, u64),
    #[error("perimeter absorbed at time {0} before the flow horizon {1}")]
    AbsorbedBeforeHorizon(f64, f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Continuous-time perimeter: one transition per path step, holding time
/// E_n / (2 P(n)^{a-1}).
#[derive(Debug, Clone)]
pub struct ContinuousTimePerimeter {
    pub a: f64,
    pub start: u64,
    /// (time, value before, value after) for every path step, including
    /// ΔP = 0 steps, which are invisible to the jump structure.
    pub transitions: Vec<(f64, i64, i64)>,
}

impl ContinuousTimePerimeter {
    /// Value at time t (càdlàg).
    pub fn value_at(&self, t: f64) -> i64 {
        let i = self.transitions.partition_point(|&(s, _, _)| s <= t);
        if i == 0 {
            self.start as i64
        } else {
            self.transitions[i - 1].2
        }
    }

    /// Proper jumps (value changes) up to and including time t.
    pub fn jumps_until(&self, t: f64) -> impl Iterator<Item = &(f64, i64, i64)> {
        self.transitions
            .iter()
            .take_while(move |&&(s, _, _)| s <= t)
            .filter(|&&(_, b, a)| a != b)
    }
}

fn build_ptilde_with(
    path: &PerimeterPath,
    a: f64,
    mut draw: impl FnMut() -> f64,
) -> ContinuousTimePerimeter {
    let mut t = Kahan::default();
    let mut transitions = Vec::with_capacity(path.steps());
    for n in 0..path.steps() {
        let p = path.values[n];
        assert!(p >= 1, "holding time undefined at non-positive perimeter");
        t.add(draw() / (2.0 * (p as f64).powf(a - 1.0)));
        transitions.push((t.value(), p, path.values[n + 1]));
    }
    ContinuousTimePerimeter {
        a,
        start: path.start,
        transitions,
    }
}

/// Continuous-time run of a path with exponential holding times.
pub fn build_ptilde<R: rand::Rng + ?Sized>(
    path: &PerimeterPath,
    a: f64,
    rng: &mut R,
) -> ContinuousTimePerimeter {
    build_ptilde_with(path, a, || exp1(rng))
}

/// Deterministic hook: exponentials replaced by their mean.
pub fn build_ptilde_deterministic(path: &PerimeterPath, a: f64) -> ContinuousTimePerimeter {
    build_ptilde_with(path, a, || 1.0)
}

/// One proper jump with its uniform driver.
#[derive(Debug, Clone, Copy)]
pub struct DriverJump {
    pub t: f64,
    pub before: u64,
    pub after: u64,
    /// uniform index in [0, 2·after); the glue/insert position
    pub v_idx: u64,
}

impl DriverJump {
    pub fn z(&self) -> f64 {
        self.after as f64 / self.before as f64
    }

    /// Anchor shift contributed by this jump:
    /// v/(2 after) + max(1 - 1/z, (1 - 1/(2 after)) (1 - z)) / 2.
    pub fn r_term(&self) -> f64 {
        let z = self.z();
        let g2 = 2.0 * self.after as f64;
        self.v_idx as f64 / g2 + 0.5 * (1.0 - 1.0 / z).max((1.0 - 1.0 / g2) * (1.0 - z))
    }
}

/// Forward-in-time driver sequence; T is a replay parameter, not baked in.
#[derive(Debug, Clone)]
pub struct ReversedDrivers {
    pub a: f64,
    pub start: u64,
    pub jumps: Vec<DriverJump>,
    /// time of the last generated transition (absorption when `absorbed`)
    pub end_time: f64,
    pub absorbed: bool,
}

impl ReversedDrivers {
    /// Perimeter in force at time t.
    pub fn perimeter_at(&self, t: f64) -> u64 {
        let i = self.jumps.partition_point(|j| j.t <= t);
        if i == 0 {
            self.start
        } else {
            self.jumps[i - 1].after
        }
    }
}

/// Drivers from a prebuilt continuous-time perimeter (one uniform per proper
/// jump; the absorbing jump to zero carries no driver).
pub fn build_drivers<R: rand::Rng + ?Sized>(
    pt: &ContinuousTimePerimeter,
    rng: &mut R,
) -> ReversedDrivers {
    let mut jumps = Vec::new();
    let mut absorbed = false;
    for &(t, before, after) in &pt.transitions {
        if after == before {
            continue;
        }
        if after <= 0 {
            absorbed = true;
            break;
        }
        jumps.push(DriverJump {
            t,
            before: before as u64,
            after: after as u64,
            v_idx: rng.random_range(0..2 * after as u64),
        });
    }
    ReversedDrivers {
        a: pt.a,
        start: pt.start,
        jumps,
        end_time: pt.transitions.last().map(|&(t, _, _)| t).unwrap_or(0.0),
        absorbed,
    }
}

/// Fused generation: run the kernel sampler in continuous time until `tmax`
/// (or absorption), drawing drivers on the fly.
pub fn sample_drivers_to_time<R: rand::Rng + ?Sized>(
    sampler: &PathSampler,
    a: f64,
    start: u64,
    tmax: f64,
    rng: &mut R,
) -> ReversedDrivers {
    let mut p = start;
    let mut t = Kahan::default();
    let mut jumps = Vec::new();
    let mut absorbed = false;
    loop {
        t.add(exp1(rng) / (2.0 * (p as f64).powf(a - 1.0)));
        if t.value() > tmax {
            break;
        }
        match sampler.step(p, rng) {
            Step::Move(k) => {
                if k != 0 {
                    let after = (p as i64 + k) as u64;
                    jumps.push(DriverJump {
                        t: t.value(),
                        before: p,
                        after,
                        v_idx: rng.random_range(0..2 * after),
                    });
                    p = after;
                } else {
                    // invisible transition
                }
            }
            Step::Absorbed(_) => {
                absorbed = true;
                break;
            }
        }
    }
    ReversedDrivers {
        a,
        start,
        jumps,
        end_time: t.value().min(tmax),
        absorbed,
    }
}

/// The jump map of the discrete flow:
/// ({x-u} - ((z-1)/z)_+)_+ z - {x-u} + max(1-1/z, (1-1/(2 p_after))(1-z))/2.
pub fn g_discrete(x: f64, z: f64, u: f64, p_after: u64) -> f64 {
    debug_assert!(z > 0.0 && p_after >= 1);
    let frac = (x - u).rem_euclid(1.0);
    let cut = ((z - 1.0) / z).max(0.0);
    let last = 0.5 * (1.0 - 1.0 / z).max((1.0 - 1.0 / (2.0 * p_after as f64)) * (1.0 - z));
    (frac - cut).max(0.0) * z - frac + last
}

/// One replayed jump, flow-time ascending.
#[derive(Debug, Clone, Copy)]
pub struct FlowEvent {
    /// flow time T - t of the underlying jump
    pub flow_t: f64,
    pub z: f64,
    /// uniform position of the window start in the replay gauge
    pub u: f64,
    /// grid the event acts on (2·after) and its anchor
    pub grid_from: u64,
    pub anchor_from: f64,
    /// grid after the replayed event (2·before) and its anchor
    pub grid_to: u64,
    pub anchor_to: f64,
    pub v_idx: u64,
    /// ΔP of the forward jump; ≥ 1 glues (coalescence), ≤ -1 inserts
    pub delta: i64,
}

/// Replay plan: the grid at time T plus the events in flow order.
#[derive(Debug, Clone)]
pub struct ReplayPlan {
    pub horizon: f64,
    pub start_grid: u64,
    pub events: Vec<FlowEvent>,
}

/// Atom (T - t, z, u) of the positive-jump point measure.
pub type PointAtom = (f64, f64, f64);

/// Build the backward replay of all jumps in (0, T].
pub fn replay_plan(drivers: &ReversedDrivers, horizon: f64) -> Result<ReplayPlan, FlowError> {
    if drivers.absorbed && drivers.end_time <= horizon {
        return Err(FlowError::AbsorbedBeforeHorizon(drivers.end_time, horizon));
    }
    let m = drivers.jumps.partition_point(|j| j.t <= horizon);
    let start_grid = 2 * if m == 0 {
        drivers.start
    } else {
        drivers.jumps[m - 1].after
    };
    let mut events = Vec::with_capacity(m);
    let mut anchor = Kahan::default(); // gauge: 0 at time T
    for j in (0..m).rev() {
        let jump = drivers.jumps[j];
        let anchor_from = anchor.value().rem_euclid(1.0);
        let u = (anchor_from + jump.v_idx as f64 / (2.0 * jump.after as f64)).rem_euclid(1.0);
        anchor.add(jump.r_term());
        let anchor_to = anchor.value().rem_euclid(1.0);
        events.push(FlowEvent {
            flow_t: horizon - jump.t,
            z: jump.z(),
            u,
            grid_from: 2 * jump.after,
            anchor_from,
            grid_to: 2 * jump.before,
            anchor_to,
            v_idx: jump.v_idx,
            delta: jump.after as i64 - jump.before as i64,
        });
    }
    Ok(ReplayPlan {
        horizon,
        start_grid,
        events,
    })
}

/// N^{(ℓ),T}: atoms (T-t, z, u) at the positive jumps with t ≤ T.
pub fn export_point_measure(
    drivers: &ReversedDrivers,
    horizon: f64,
) -> Result<Vec<PointAtom>, FlowError> {
    let plan = replay_plan(drivers, horizon)?;
    Ok(plan
        .events
        .iter()
        .filter(|e| e.delta > 0)
        .map(|e| (e.flow_t, e.z, e.u))
        .collect())
}

/// A coalescence: at flow time t, the listed trajectories merged into the
/// surviving class.
#[derive(Debug, Clone)]
pub struct MergeEvent {
    pub flow_t: f64,
    pub survivor: usize,
    pub absorbed: Vec<usize>,
}

/// Flow state after (or during) a replay: exact integer indices plus the
/// derived real embedding.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub grid: u64,
    pub anchor: f64,
    /// integer index of each trajectory on the current grid
    pub indices: Vec<u64>,
    /// merge class of each trajectory (smallest member id)
    pub classes: Vec<usize>,
    pub merges: Vec<MergeEvent>,
}

impl FlowState {
    /// Derived embedding of trajectory i on the torus.
    pub fn position(&self, i: usize) -> f64 {
        (self.anchor + self.indices[i] as f64 / self.grid as f64).rem_euclid(1.0)
    }
}

/// Evolve integer-index trajectories through a replay plan.
///
/// `starts` are edge indices on the time-T grid. `on_event` sees the state
/// after every event (for trajectory dumps and cross-checks).
pub fn evolve_flow(
    plan: &ReplayPlan,
    starts: &[u64],
    mut on_event: impl FnMut(&FlowEvent, &FlowState),
) -> Result<FlowState, FlowError> {
    for &s in starts {
        if s >= plan.start_grid {
            return Err(FlowError::StartOffGrid(s, plan.start_grid));
        }
    }
    let mut st = FlowState {
        grid: plan.start_grid,
        anchor: 0.0,
        indices: starts.to_vec(),
        classes: (0..starts.len()).collect(),
        merges: Vec::new(),
    };
    for ev in &plan.events {
        debug_assert_eq!(st.grid, ev.grid_from);
        let window = if ev.delta >= 0 { 2 * ev.delta as u64 } else { 0 };
        let mut merged: Vec<usize> = Vec::new();
        for i in 0..st.indices.len() {
            let d = (st.indices[i] + ev.grid_from - ev.v_idx % ev.grid_from) % ev.grid_from;
            if ev.delta >= 0 {
                if d <= window {
                    st.indices[i] = 0;
                    merged.push(i);
                } else {
                    st.indices[i] = d - window;
                }
            } else {
                st.indices[i] = d;
            }
        }
        if merged.len() >= 2 {
            let survivor = merged.iter().map(|&i| st.classes[i]).min().unwrap();
            let absorbed: Vec<usize> = merged
                .iter()
                .map(|&i| st.classes[i])
                .filter(|&c| c != survivor)
                .collect();
            let mut distinct = absorbed.clone();
            distinct.sort_unstable();
            distinct.dedup();
            if !distinct.is_empty() {
                st.merges.push(MergeEvent {
                    flow_t: ev.flow_t,
                    survivor,
                    absorbed: distinct,
                });
            }
            let all: Vec<usize> = merged.iter().map(|&i| st.classes[i]).collect();
            for c in &mut st.classes {
                if all.contains(c) {
                    *c = survivor;
                }
            }
        }
        st.grid = ev.grid_to;
        st.anchor = ev.anchor_to;
        on_event(ev, &st);
    }
    Ok(st)
}

/// Real-valued evolution x ← x + g(x, z, u) through the same plan; returns
/// the value after every event for each start.
pub fn evolve_flow_real(plan: &ReplayPlan, starts: &[f64]) -> Vec<Vec<f64>> {
    let mut xs = starts.to_vec();
    let mut out = vec![Vec::with_capacity(plan.events.len()); starts.len()];
    for ev in &plan.events {
        // the jump map reads the perimeter in force at the underlying
        // exploration time, i.e. the post-jump value 2·after = grid_from
        let p_after = ev.grid_from / 2;
        for (i, x) in xs.iter_mut().enumerate() {
            *x += g_discrete(*x, ev.z, ev.u, p_after);
            out[i].push(*x);
        }
    }
    out
}

/// Monte Carlo summary of the band-restricted jump-sum martingale.
#[derive(Debug, Clone)]
pub struct MartingaleSummary {
    pub mean: f64,
    pub stderr: f64,
    pub variance: f64,
    /// MC mean of Σ_band (z-1)^2 along the replica
    pub quad_budget: f64,
    pub replicas: usize,
    /// replicas regenerated because the perimeter died before T
    pub resampled: usize,
}

/// Mean and dispersion of M^{T,ε}_T = Σ_{band jumps} g(X_{s-}, z, u) along
/// one trajectory started at `v`.
pub fn martingale_diagnostic(
    sampler: &PathSampler,
    a: f64,
    l: u64,
    horizon: f64,
    eps: f64,
    v: f64,
    replicas: usize,
    streams: &crate::rng::Streams,
) -> MartingaleSummary {
    assert!(eps > 0.0 && eps < 1.0);
    use rayon::prelude::*;
    let results: Vec<(f64, f64, usize)> = (0..replicas as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = streams.rng(rep, crate::rng::purpose::FLOW);
            let mut resamples = 0usize;
            let drivers = loop {
                let d = sample_drivers_to_time(sampler, a, l, horizon, &mut rng);
                if !d.absorbed {
                    break d;
                }
                resamples += 1;
                assert!(resamples < 1000, "perimeter keeps dying before T");
            };
            let plan = replay_plan(&drivers, horizon).expect("not absorbed");
            let mut x = v;
            let mut m = 0.0;
            let mut qv = 0.0;
            for ev in &plan.events {
                let g = g_discrete(x, ev.z, ev.u, ev.grid_from / 2);
                if (ev.z - 1.0).abs() <= eps {
                    m += g;
                    qv += (ev.z - 1.0) * (ev.z - 1.0);
                }
                x += g;
            }
            (m, qv, resamples)
        })
        .collect();
    let ms: Vec<f64> = results.iter().map(|r| r.0).collect();
    let (mean, stderr) = crate::stats::mean_stderr(&ms);
    let var = {
        let n = ms.len() as f64;
        ms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    };
    let quad_budget = results.iter().map(|r| r.1).sum::<f64>() / results.len() as f64;
    MartingaleSummary {
        mean,
        stderr,
        variance: var,
        quad_budget,
        replicas,
        resampled: results.iter().map(|r| r.2).sum(),
    }
}

/// MC estimate of E[Σ_{s ≤ T} 1_band (ΔP̃/P̃(s-))²] for the band
/// z ∈ [1-ε, 1+ε] \ {1}.
pub fn small_jump_energy(
    sampler: &PathSampler,
    a: f64,
    l: u64,
    horizon: f64,
    eps: f64,
    replicas: usize,
    streams: &crate::rng::Streams,
) -> f64 {
    use rayon::prelude::*;
    let total: f64 = (0..replicas as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = streams.rng(rep, crate::rng::purpose::FLOW);
            let drivers = sample_drivers_to_time(sampler, a, l, horizon, &mut rng);
            drivers
                .jumps
                .iter()
                .map(|j| {
                    let ratio = j.z();
                    if ratio != 1.0 && (ratio - 1.0).abs() <= eps {
                        (ratio - 1.0) * (ratio - 1.0)
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .sum();
    total / replicas as f64
}

/// Trajectory CSV `traj_id,t,index,position,perimeter` plus merge log CSV
/// `t,survivor,absorbed`.
pub fn write_flow_csv<W: std::io::Write>(
    plan: &ReplayPlan,
    starts: &[u64],
    mut traj_w: W,
    mut merge_w: W,
) -> Result<(), FlowError> {
    writeln!(traj_w, "traj_id,t,index,position,perimeter")?;
    for (i, &s) in starts.iter().enumerate() {
        let pos = s as f64 / plan.start_grid as f64;
        writeln!(traj_w, "{i},0,{s},{:.17e},{}", pos, plan.start_grid / 2)?;
    }
    let st = evolve_flow(plan, starts, |ev, st| {
        for i in 0..st.indices.len() {
            let _ = writeln!(
                traj_w,
                "{i},{:.17e},{},{:.17e},{}",
                ev.flow_t,
                st.indices[i],
                st.position(i),
                st.grid / 2
            );
        }
    })?;
    writeln!(merge_w, "t,survivor,absorbed")?;
    for m in &st.merges {
        for &a in &m.absorbed {
            writeln!(merge_w, "{:.17e},{},{}", m.flow_t, m.survivor, a)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_asymptotic_nu, ModelParams};
    use crate::perimeter::Law;
    use crate::rng::{purpose, Streams};

    fn sampler_finite(a: f64) -> (PathSampler, ModelParams) {
        let nu = build_asymptotic_nu(a, 0.05, 64).unwrap();
        let params = ModelParams::new(a, 0.05).unwrap();
        (PathSampler::new(&nu, &params, Law::Finite), params)
    }

    #[test]
    fn deterministic_holding_times() {
        // holding at P = 2 with a = 2 is 1/4
        let path = PerimeterPath {
            law: Law::Finite,
            start: 2,
            values: vec![2, 3, 1],
            absorbed_at: None,
        };
        let pt = build_ptilde_deterministic(&path, 2.0);
        assert!((pt.transitions[0].0 - 0.25).abs() < 1e-15);
        assert!((pt.transitions[1].0 - 0.25 - 1.0 / 6.0).abs() < 1e-15);
        // number of transitions = number of path steps
        assert_eq!(pt.transitions.len(), path.steps());
        assert_eq!(pt.value_at(0.0), 2);
        assert_eq!(pt.value_at(0.3), 3);
    }

    #[test]
    fn g_discrete_values() {
        assert!((g_discrete(0.0, 2.0, 0.0, 7) - 0.25).abs() < 1e-15);
        assert!((g_discrete(0.0, 0.5, 0.0, 2) - 0.1875).abs() < 1e-15);
    }

    #[test]
    fn g_discrete_grid_mean_zero() {
        // pre-jump perimeter 2, post-jump 4 (z = 2): average of g over the
        // 8 grid values of u is 0, for x on the same grid
        let p_after = 4u64;
        let z = 2.0;
        for xi in 0..8u64 {
            let anchor = 0.37; // arbitrary grid shift
            let x = anchor + xi as f64 / 8.0;
            let mut s = Kahan::default();
            for ui in 0..8u64 {
                let u = (anchor + ui as f64 / 8.0).rem_euclid(1.0);
                s.add(g_discrete(x, z, u, p_after));
            }
            assert!(
                (s.value() / 8.0).abs() < 1e-12,
                "x grid slot {xi}: mean {}",
                s.value() / 8.0
            );
        }
        // and for a negative jump, z = 1/2 with pre-jump 4, post-jump 2
        let p_after = 2u64;
        let z = 0.5;
        for xi in 0..4u64 {
            let x = 0.11 + xi as f64 / 4.0;
            let mut s = Kahan::default();
            for ui in 0..4u64 {
                let u = (0.11 + ui as f64 / 4.0).rem_euclid(1.0);
                s.add(g_discrete(x, z, u, p_after));
            }
            assert!((s.value() / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn point_measure_atoms() {
        let path = PerimeterPath {
            law: Law::Finite,
            start: 3,
            values: vec![3, 5, 4, 4, 6],
            absorbed_at: None,
        };
        let pt = build_ptilde_deterministic(&path, 2.0);
        let streams = Streams::new(41);
        let mut rng = streams.rng(0, purpose::DRIVERS);
        let drivers = build_drivers(&pt, &mut rng);
        // ΔP = 0 steps carry no driver
        assert_eq!(drivers.jumps.len(), 3);
        let horizon = drivers.end_time + 0.5;
        let atoms = export_point_measure(&drivers, horizon).unwrap();
        // positive jumps only: 3→5 and 4→6
        assert_eq!(atoms.len(), 2);
        for (t, z, u) in &atoms {
            assert!(*t >= 0.0 && *t <= horizon);
            assert!(*z > 1.0);
            assert!((0.0..1.0).contains(u));
        }
        // a path with no positive jumps has an empty measure
        let down = PerimeterPath {
            law: Law::Finite,
            start: 9,
            values: vec![9, 6, 3],
            absorbed_at: None,
        };
        let pt = build_ptilde_deterministic(&down, 2.0);
        let drivers = build_drivers(&pt, &mut rng);
        assert!(export_point_measure(&drivers, 10.0).unwrap().is_empty());
    }

    #[test]
    fn replay_rejects_absorbed_horizons() {
        let path = PerimeterPath {
            law: Law::Finite,
            start: 1,
            values: vec![1, 0],
            absorbed_at: Some(1),
        };
        let pt = build_ptilde_deterministic(&path, 2.0);
        let streams = Streams::new(42);
        let mut rng = streams.rng(0, purpose::DRIVERS);
        let drivers = build_drivers(&pt, &mut rng);
        assert!(drivers.absorbed);
        assert!(matches!(
            replay_plan(&drivers, 10.0),
            Err(FlowError::AbsorbedBeforeHorizon(_, _))
        ));
    }

    #[test]
    fn single_trajectory_without_events_is_constant() {
        let drivers = ReversedDrivers {
            a: 2.0,
            start: 4,
            jumps: vec![],
            end_time: 1.0,
            absorbed: false,
        };
        let plan = replay_plan(&drivers, 1.0).unwrap();
        assert_eq!(plan.start_grid, 8);
        let st = evolve_flow(&plan, &[3], |_, _| {}).unwrap();
        assert_eq!(st.indices, vec![3]);
        assert!(st.merges.is_empty());
        assert!(matches!(
            evolve_flow(&plan, &[8], |_, _| {}),
            Err(FlowError::StartOffGrid(8, 8))
        ));
    }

    #[test]
    fn glue_window_merges_and_stays_merged() {
        // single positive jump 2 → 4 at time 1: window of 2ΔP+1 = 5 edges
        let jump = DriverJump {
            t: 1.0,
            before: 2,
            after: 4,
            v_idx: 1,
        };
        let drivers = ReversedDrivers {
            a: 2.0,
            start: 2,
            jumps: vec![jump],
            end_time: 2.0,
            absorbed: false,
        };
        let plan = replay_plan(&drivers, 2.0).unwrap();
        assert_eq!(plan.start_grid, 8);
        // indices 1..=5 are in the glued window, 0, 6, 7 are not
        let starts: Vec<u64> = (0..8).collect();
        let st = evolve_flow(&plan, &starts, |_, _| {}).unwrap();
        for i in 1..=5usize {
            assert_eq!(st.indices[i], 0, "window member {i}");
            assert_eq!(st.classes[i], 1);
        }
        assert_eq!(st.indices[0], 3); // d = (0-1) mod 8 = 7 → 7-4 = 3
        assert_eq!(st.indices[6], 1);
        assert_eq!(st.indices[7], 2);
        assert_eq!(st.merges.len(), 1);
        assert_eq!(st.merges[0].survivor, 1);
        assert_eq!(st.merges[0].absorbed, vec![2, 3, 4, 5]);
        // grid sizes: window members land on the 2·before = 4 grid
        assert_eq!(st.grid, 4);
        for i in 0..8 {
            assert!(st.indices[i] < st.grid);
        }
    }

    #[test]
    fn index_and_real_evolution_agree() {
        // the real-valued jump map reproduces the integer replay exactly,
        // across many random finite-law runs
        let (sampler, _) = sampler_finite(2.0);
        let streams = Streams::new(43);
        let mut checked = 0usize;
        for rep in 0..1000u64 {
            let mut rng = streams.rng(rep, purpose::FLOW);
            let horizon = 0.6;
            let drivers = sample_drivers_to_time(&sampler, 2.0, 48, horizon, &mut rng);
            if drivers.absorbed {
                continue;
            }
            let plan = replay_plan(&drivers, horizon).unwrap();
            if plan.events.is_empty() {
                continue;
            }
            let g0 = plan.start_grid;
            let starts_idx: Vec<u64> = vec![0, g0 / 4, g0 / 2, (3 * g0) / 4];
            let starts_real: Vec<f64> = starts_idx.iter().map(|&i| i as f64 / g0 as f64).collect();
            let real = evolve_flow_real(&plan, &starts_real);
            let mut step = 0usize;
            evolve_flow(&plan, &starts_idx, |_, st| {
                for i in 0..starts_idx.len() {
                    let embedded = st.position(i);
                    let x = real[i][step].rem_euclid(1.0);
                    let d = (embedded - x).abs();
                    let d = d.min(1.0 - d);
                    assert!(
                        d < 1e-9,
                        "rep {rep} event {step} traj {i}: {embedded} vs {x}"
                    );
                }
                step += 1;
            })
            .unwrap();
            checked += 1;
        }
        assert!(checked > 400, "only {checked} usable replicas");
    }

    #[test]
    fn cyclic_order_is_preserved() {
        let (sampler, _) = sampler_finite(1.8);
        let streams = Streams::new(44);
        for rep in 0..200u64 {
            let mut rng = streams.rng(rep, purpose::FLOW);
            let drivers = sample_drivers_to_time(&sampler, 1.8, 32, 0.8, &mut rng);
            if drivers.absorbed {
                continue;
            }
            let plan = replay_plan(&drivers, 0.8).unwrap();
            let g0 = plan.start_grid;
            let starts: Vec<u64> = (0..6).map(|i| i * g0 / 6).collect();
            evolve_flow(&plan, &starts, |_, st| {
                // trajectories started in ascending cyclic order; every
                // event must keep the offsets from trajectory 0 ascending
                let base = st.indices[0];
                let mut prev = 0u64;
                for &i in &st.indices {
                    let off = (i + st.grid - base) % st.grid;
                    assert!(off >= prev, "cyclic order broken: {:?}", st.indices);
                    prev = off;
                }
            })
            .unwrap();
        }
    }

    #[test]
    fn point_measure_uniforms_are_uniform() {
        // empirical law of u over many independent runs
        let (sampler, _) = sampler_finite(2.0);
        let streams = Streams::new(45);
        let mut us = Vec::new();
        for rep in 0..3000u64 {
            let mut rng = streams.rng(rep, purpose::FLOW);
            let horizon = 0.4;
            let drivers = sample_drivers_to_time(&sampler, 2.0, 64, horizon, &mut rng);
            if drivers.absorbed {
                continue;
            }
            for atom in export_point_measure(&drivers, horizon).unwrap() {
                us.push(atom.2);
            }
        }
        assert!(us.len() > 20_000, "{}", us.len());
        let d = crate::stats::ks_one_sample(&us, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(d < 0.02, "KS vs uniform: {d}");
    }

    #[test]
    fn martingale_band_empty_is_zero() {
        let (sampler, _) = sampler_finite(2.0);
        let streams = Streams::new(46);
        // ε below every attainable |z-1| = |k|/p: the band holds no jumps
        let s = martingale_diagnostic(&sampler, 2.0, 16, 0.2, 1e-7, 0.3, 64, &streams);
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.quad_budget, 0.0);
    }

    #[test]
    fn martingale_mean_within_4_sigma() {
        let (sampler, _) = sampler_finite(2.0);
        let streams = Streams::new(47);
        let s = martingale_diagnostic(&sampler, 2.0, 128, 1.0, 0.5, 0.3, 3000, &streams);
        assert!(
            s.mean.abs() < 4.0 * s.stderr,
            "mean {} stderr {}",
            s.mean,
            s.stderr
        );
        // variance bounded by the quadratic-variation budget
        assert!(s.variance <= 9.0 * s.quad_budget * 1.5 + 1e-12);
    }

    #[test]
    fn small_jump_energy_monotone_in_eps() {
        let (sampler, _) = sampler_finite(2.0);
        let streams = Streams::new(48);
        let e_small = small_jump_energy(&sampler, 2.0, 256, 1.0, 0.1, 400, &streams);
        let e_big = small_jump_energy(&sampler, 2.0, 256, 1.0, 0.4, 400, &streams);
        assert!(e_small <= e_big, "{e_small} vs {e_big}");
        // ε = 0 band is empty
        let e_zero = small_jump_energy(&sampler, 2.0, 64, 0.5, 0.0, 64, &streams);
        assert_eq!(e_zero, 0.0);
    }
}
