//! First-passage clocks along a perimeter path, hull radii, geodesic-face
//! marking, and the reversed event stream.
//!
//! Nothing here materializes a map: the geodesic statistics are measurable
//! from the perimeter path, one uniform position per step and one Bernoulli
//! mark per step.

use crate::perimeter::PerimeterPath;
use crate::rng::exp1;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PeelError {
    #[error("path visits a non-positive perimeter at step {0} before its end")]
    DivisionAtAbsorption(usize),
}

/// Cumulative first-passage times T_n = Σ_{i<n} E_i / (2 P(i)).
#[derive(Debug, Clone)]
pub struct FppClock {
    /// times[n] = T_n, n = 0..=steps
    pub times: Vec<f64>,
}

impl FppClock {
    pub fn last(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Θ(r): smallest n with T_n ≥ r, saturating at the path end.
    pub fn hull_index(&self, r: f64) -> usize {
        assert!(r >= 0.0);
        let i = self.times.partition_point(|&t| t < r);
        i.min(self.times.len() - 1)
    }
}

fn fpp_times_with(
    path: &PerimeterPath,
    mut draw: impl FnMut() -> f64,
) -> Result<FppClock, PeelError> {
    let mut times = Vec::with_capacity(path.values.len());
    times.push(0.0);
    for n in 0..path.steps() {
        let p = path.values[n];
        if p <= 0 {
            return Err(PeelError::DivisionAtAbsorption(n));
        }
        times.push(times[n] + draw() / (2.0 * p as f64));
    }
    Ok(FppClock { times })
}

/// Clock with i.i.d. unit exponential edge weights.
pub fn fpp_times<R: rand::Rng + ?Sized>(
    path: &PerimeterPath,
    rng: &mut R,
) -> Result<FppClock, PeelError> {
    fpp_times_with(path, || exp1(rng))
}

/// Deterministic hook: every exponential replaced by its mean 1.
pub fn fpp_times_deterministic(path: &PerimeterPath) -> Result<FppClock, PeelError> {
    fpp_times_with(path, || 1.0)
}

/// θ_i = (2ΔP(i)+1) / (2P(i+1)) on non-negative jumps, 0 otherwise.
pub fn theta(path: &PerimeterPath, i: usize) -> f64 {
    assert!(i + 1 < path.values.len());
    let dp = path.values[i + 1] - path.values[i];
    if dp < 0 {
        0.0
    } else {
        (2 * dp + 1) as f64 / (2 * path.values[i + 1]) as f64
    }
}

/// Per-step marking of the faces that lie on the distinguished geodesic.
#[derive(Debug, Clone)]
pub struct GeodesicMarks {
    pub thetas: Vec<f64>,
    pub bernoullis: Vec<bool>,
}

impl GeodesicMarks {
    /// #Faces of the geodesic at step n (= Σ_{i<n} X_i).
    pub fn count(&self, n: usize) -> u64 {
        self.bernoullis[..n].iter().filter(|&&b| b).count() as u64
    }

    pub fn sum_theta(&self, n: usize) -> f64 {
        self.thetas[..n].iter().sum()
    }
}

/// Mark each step independently with probability θ_i given the path.
pub fn mark_and_count<R: rand::Rng + ?Sized>(
    path: &PerimeterPath,
    n: usize,
    rng: &mut R,
) -> GeodesicMarks {
    assert!(n <= path.steps());
    let mut thetas = Vec::with_capacity(n);
    let mut bernoullis = Vec::with_capacity(n);
    for i in 0..n {
        let t = theta(path, i);
        thetas.push(t);
        bernoullis.push(t > 0.0 && rng.random::<f64>() < t);
    }
    GeodesicMarks { thetas, bernoullis }
}

/// One step of the reversed exploration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReversedEvent {
    /// ΔP(k) ≥ 0: a face of degree 2ΔP+2 is glued onto 2ΔP+1 consecutive
    /// edges, the first at a uniform position of the post-step grid.
    Glue {
        step: usize,
        glued_edges: u64,
        pos: u64,
        grid: u64,
    },
    /// ΔP(k) < 0: -2ΔP consecutive edges are inserted at a uniform position
    /// of the post-step grid; the extremal two are identified.
    Insert {
        step: usize,
        inserted_edges: u64,
        pos: u64,
        grid: u64,
    },
}

impl ReversedEvent {
    pub fn pos(&self) -> u64 {
        match *self {
            ReversedEvent::Glue { pos, .. } | ReversedEvent::Insert { pos, .. } => pos,
        }
    }

    pub fn grid(&self) -> u64 {
        match *self {
            ReversedEvent::Glue { grid, .. } | ReversedEvent::Insert { grid, .. } => grid,
        }
    }
}

/// One event per step k of the path segment, each carrying a uniform grid
/// position on the post-step boundary.
pub fn reversed_event_stream<R: rand::Rng + ?Sized>(
    path: &PerimeterPath,
    rng: &mut R,
) -> Vec<ReversedEvent> {
    let mut events = Vec::with_capacity(path.steps());
    for k in 0..path.steps() {
        let dp = path.values[k + 1] - path.values[k];
        let grid = (2 * path.values[k + 1]).max(1) as u64;
        let pos = rng.random_range(0..grid);
        if dp >= 0 {
            events.push(ReversedEvent::Glue {
                step: k,
                glued_edges: (2 * dp + 1) as u64,
                pos,
                grid,
            });
        } else {
            events.push(ReversedEvent::Insert {
                step: k,
                inserted_edges: (-2 * dp) as u64,
                pos,
                grid,
            });
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_asymptotic_nu;
    use crate::perimeter::{Law, PathSampler, PerimeterPath};
    use crate::rng::{purpose, Streams};

    fn const_path(p: i64, steps: usize) -> PerimeterPath {
        PerimeterPath {
            law: Law::Infinite,
            start: p as u64,
            values: vec![p; steps + 1],
            absorbed_at: None,
        }
    }

    #[test]
    fn deterministic_clock_on_constant_path() {
        // P ≡ 1 with mean draws: T_n = n/2
        let path = const_path(1, 10);
        let clock = fpp_times_deterministic(&path).unwrap();
        for (n, &t) in clock.times.iter().enumerate() {
            assert!((t - n as f64 / 2.0).abs() < 1e-15);
        }
        assert_eq!(clock.times[0], 0.0);
        // Θ(1.2) with T_n = n/2 → 3
        assert_eq!(clock.hull_index(1.2), 3);
        assert_eq!(clock.hull_index(0.0), 0);
        // right-continuity: Θ(T_n) = n
        for n in 0..clock.times.len() {
            assert_eq!(clock.hull_index(clock.times[n]), n);
        }
    }

    #[test]
    fn clock_errors_past_absorption() {
        let path = PerimeterPath {
            law: Law::Finite,
            start: 1,
            values: vec![1, 0, 0],
            absorbed_at: Some(1),
        };
        assert!(matches!(
            fpp_times_deterministic(&path),
            Err(PeelError::DivisionAtAbsorption(1))
        ));
        // a path that merely ends at 0 is fine
        let path = PerimeterPath {
            law: Law::Finite,
            start: 1,
            values: vec![1, 0],
            absorbed_at: Some(1),
        };
        assert!(fpp_times_deterministic(&path).is_ok());
    }

    #[test]
    fn first_passage_mean_from_start() {
        // mean of T_1 with P(0) = ℓ is 1/(2ℓ), 4σ band
        let streams = Streams::new(31);
        let l = 7i64;
        let path = const_path(l, 1);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut rng = streams.rng(0, purpose::CLOCK);
        for _ in 0..n {
            let t1 = fpp_times(&path, &mut rng).unwrap().times[1];
            sum += t1;
            sumsq += t1 * t1;
        }
        let mean = sum / n as f64;
        let sd = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 1.0 / (2.0 * l as f64)).abs() < 4.0 * sd);
    }

    #[test]
    fn theta_exact_values() {
        let mk = |vals: Vec<i64>| PerimeterPath {
            law: Law::Infinite,
            start: vals[0] as u64,
            values: vals,
            absorbed_at: None,
        };
        // ΔP = -2 → 0
        assert_eq!(theta(&mk(vec![5, 3]), 0), 0.0);
        // ΔP = 1, P(i+1) = 5 → 3/10
        assert!((theta(&mk(vec![4, 5]), 0) - 0.3).abs() < 1e-15);
        // ΔP = 0, P(i+1) = 1 → 1/2
        assert!((theta(&mk(vec![1, 1]), 0) - 0.5).abs() < 1e-15);
        // identity θ_i · 2P(i+1) = 2ΔP(i)+1 on non-negative jumps
        let path = mk(vec![2, 4, 4, 9]);
        for i in 0..3 {
            let dp = path.values[i + 1] - path.values[i];
            if dp >= 0 {
                let lhs = theta(&path, i) * (2 * path.values[i + 1]) as f64;
                assert_eq!(lhs, (2 * dp + 1) as f64);
            }
        }
    }

    #[test]
    fn marks_conditional_mean_and_variance() {
        // one fixed path, many mark replicas
        let nu = build_asymptotic_nu(2.0, 0.05, 64).unwrap();
        let params = crate::model::ModelParams::new(2.0, 0.05).unwrap();
        let streams = Streams::new(32);
        let sampler = PathSampler::new(&nu, &params, Law::Infinite);
        let mut rng = streams.rng(0, purpose::PATH);
        let path = sampler.sample_path(1, 400, &mut rng).unwrap();
        let n = path.steps();
        let sum_theta: f64 = (0..n).map(|i| theta(&path, i)).sum();
        let var_theory: f64 = (0..n)
            .map(|i| {
                let t = theta(&path, i);
                t * (1.0 - t)
            })
            .sum();
        let reps = 10_000;
        let mut counts = Vec::with_capacity(reps);
        let mut mrng = streams.rng(0, purpose::MARKS);
        for _ in 0..reps {
            counts.push(mark_and_count(&path, n, &mut mrng).count(n) as f64);
        }
        let (mean, stderr) = crate::stats::mean_stderr(&counts);
        assert!(
            (mean - sum_theta).abs() < 4.0 * stderr,
            "mean {mean} vs Σθ {sum_theta}"
        );
        let m = counts.len() as f64;
        let var_emp = counts
            .iter()
            .map(|c| (c - mean) * (c - mean))
            .sum::<f64>()
            / (m - 1.0);
        let var_sd = var_theory * (2.0 / (m - 1.0)).sqrt();
        assert!(
            (var_emp - var_theory).abs() < 5.0 * var_sd,
            "var {var_emp} vs {var_theory}"
        );
        // determinism: same stream reproduces the counts bit-exactly
        let mut r1 = streams.rng(9, purpose::MARKS);
        let mut r2 = streams.rng(9, purpose::MARKS);
        let a = mark_and_count(&path, n, &mut r1);
        let b = mark_and_count(&path, n, &mut r2);
        assert_eq!(a.bernoullis, b.bernoullis);
        // monotone counts
        let mut prev = 0;
        for k in 0..=n {
            let c = a.count(k);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn no_marks_on_descending_path() {
        let path = PerimeterPath {
            law: Law::Finite,
            start: 6,
            values: vec![6, 4, 2, 1],
            absorbed_at: None,
        };
        let streams = Streams::new(33);
        let mut rng = streams.rng(0, purpose::MARKS);
        let marks = mark_and_count(&path, 3, &mut rng);
        assert_eq!(marks.count(3), 0);
    }

    #[test]
    fn reversed_events_edge_counts() {
        let path = PerimeterPath {
            law: Law::Finite,
            start: 3,
            values: vec![3, 5, 2],
            absorbed_at: None,
        };
        let streams = Streams::new(34);
        let mut rng = streams.rng(0, purpose::DRIVERS);
        let ev = reversed_event_stream(&path, &mut rng);
        assert_eq!(ev.len(), 2);
        match ev[0] {
            ReversedEvent::Glue {
                glued_edges, grid, ..
            } => {
                assert_eq!(glued_edges, 2 * 2 + 1);
                assert_eq!(grid, 10);
            }
            _ => panic!("expected glue"),
        }
        match ev[1] {
            ReversedEvent::Insert {
                inserted_edges,
                grid,
                ..
            } => {
                assert_eq!(inserted_edges, 6);
                assert_eq!(grid, 4);
            }
            _ => panic!("expected insert"),
        }
    }

    #[test]
    fn reversed_positions_are_uniform() {
        // chi-square at 0.1% over 100_000 replays of a single step
        let path = PerimeterPath {
            law: Law::Infinite,
            start: 3,
            values: vec![3, 4],
            absorbed_at: None,
        };
        let streams = Streams::new(35);
        let mut rng = streams.rng(0, purpose::DRIVERS);
        let grid = 8usize;
        let mut counts = vec![0u64; grid];
        let n = 100_000;
        for _ in 0..n {
            let ev = reversed_event_stream(&path, &mut rng);
            counts[ev[0].pos() as usize] += 1;
        }
        let expected = vec![n as f64 / grid as f64; grid];
        let p = crate::stats::chi_square_pvalue(&counts, &expected).unwrap();
        assert!(p > 0.001, "p = {p}");
    }
}
