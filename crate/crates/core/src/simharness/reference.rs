//! Reference generators for the tracking experiments.

use rand::Rng;

use crate::error::{Error, Result};
use crate::sphere::Angles;

/// Time after a step from which the response counts as steady.
pub const SETTLE_TIME: f64 = 5.0;
/// Rise time of a soft step.
pub const SOFT_STEP_RISE: f64 = 0.25;

const MAX_MAGNITUDE_DEG: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    Ramp,
    SoftStep,
    Sinusoid,
    /// Ramp, soft-step and sinusoid blocks back to back.
    Mixed,
    /// Listed soft steps with long holds, for steady-state offsets.
    Step,
    BallCatch,
}

impl std::str::FromStr for ReferenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ramp" => Self::Ramp,
            "soft_step" => Self::SoftStep,
            "sinusoid" => Self::Sinusoid,
            "mixed" => Self::Mixed,
            "step" => Self::Step,
            "ball_catch" => Self::BallCatch,
            other => return Err(Error::InvalidParameter(format!("unknown reference `{other}`"))),
        })
    }
}

impl std::fmt::Display for ReferenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ramp => "ramp",
            Self::SoftStep => "soft_step",
            Self::Sinusoid => "sinusoid",
            Self::Mixed => "mixed",
            Self::Step => "step",
            Self::BallCatch => "ball_catch",
        })
    }
}

/// Step list for [`ReferenceKind::Step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub targets: Vec<Angles>,
    /// Time from the start of one step to the next.
    pub hold: f64,
    /// Initial rest before the first step.
    pub start: f64,
}

impl Default for StepPlan {
    fn default() -> Self {
        Self {
            targets: vec![Angles::from_degrees(15.0, -10.0), Angles::from_degrees(-20.0, 20.0)],
            hold: 8.0,
            start: 0.5,
        }
    }
}

/// Set points sampled at the control period.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub ts: f64,
    pub points: Vec<Angles>,
    /// Intervals where the reference has been constant for [`SETTLE_TIME`].
    pub steady_windows: Vec<(f64, f64)>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn at(&self, k: usize) -> Angles {
        self.points[k.min(self.points.len() - 1)]
    }

    /// `(r_0, .., r_n)` starting at sample `k`, repeating the last point past the end.
    pub fn window(&self, k: usize, n: usize) -> Vec<Angles> {
        (k..=k + n).map(|i| self.at(i)).collect()
    }

    pub fn duration(&self) -> f64 {
        self.points.len() as f64 * self.ts
    }
}

fn push_hold(v: &mut Vec<f64>, value: f64, dur: f64, ts: f64) {
    let n = (dur / ts).round() as usize;
    v.extend(std::iter::repeat_n(value, n));
}

fn push_ramp(v: &mut Vec<f64>, from: f64, to: f64, rate: f64, ts: f64) {
    let n = ((to - from).abs() / (rate * ts)).ceil() as usize;
    for i in 1..=n {
        v.push(from + (to - from) * i as f64 / n as f64);
    }
}

/// Quintic smoothstep from `from` to `to` over `rise` seconds.
fn push_soft(v: &mut Vec<f64>, from: f64, to: f64, rise: f64, ts: f64) {
    let n = (rise / ts).round().max(1.0) as usize;
    for i in 1..=n {
        let s = i as f64 / n as f64;
        let w = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        v.push(from + (to - from) * w);
    }
}

/// Whole periods of a sine around `center`, as close to `dur` as possible.
fn push_sine(v: &mut Vec<f64>, center: f64, amp: f64, freq: f64, dur: f64, ts: f64) {
    let periods = (dur * freq).round().max(1.0);
    let n = (periods / freq / ts).round() as usize;
    for i in 1..=n {
        v.push(center + amp * (2.0 * std::f64::consts::PI * freq * i as f64 * ts).sin());
    }
}

fn magnitude<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(-MAX_MAGNITUDE_DEG..=MAX_MAGNITUDE_DEG).to_radians()
}

fn ramp_axis<R: Rng>(rng: &mut R, start: f64, n: usize, ts: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(n + 64);
    let mut cur = start;
    while v.len() < n {
        let to = magnitude(rng);
        let rate = rng.random_range(60.0..=300.0f64).to_radians();
        push_ramp(&mut v, cur, to, rate, ts);
        push_hold(&mut v, to, rng.random_range(0.5..=1.5), ts);
        cur = to;
    }
    v.truncate(n);
    v
}

fn soft_step_axis<R: Rng>(rng: &mut R, start: f64, n: usize, ts: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(n + 64);
    let mut cur = start;
    while v.len() < n {
        let to = magnitude(rng);
        push_soft(&mut v, cur, to, SOFT_STEP_RISE, ts);
        push_hold(&mut v, to, rng.random_range(1.0..=2.0), ts);
        cur = to;
    }
    v.truncate(n);
    v
}

fn sinusoid_axis<R: Rng>(rng: &mut R, center: f64, n: usize, ts: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(n + 64);
    while v.len() < n {
        let freq = rng.random_range(0.5..=3.0);
        let amp = rng.random_range(5.0..=15.0f64).to_radians();
        push_sine(&mut v, center, amp, freq, 3.0, ts);
    }
    v.truncate(n);
    v
}

fn zip_axes(alpha: Vec<f64>, beta: Vec<f64>) -> Vec<Angles> {
    alpha.into_iter().zip(beta).map(|(a, b)| Angles::new(a, b)).collect()
}

/// Random reference of `duration` seconds. Each axis draws its own sequence.
pub fn generate<R: Rng>(kind: ReferenceKind, duration: f64, ts: f64, rng: &mut R) -> Result<ReferenceTrajectory> {
    if !(duration.is_finite() && duration > 0.0 && ts > 0.0) {
        return Err(Error::InvalidParameter("reference needs positive duration and period".into()));
    }
    let n = (duration / ts).round() as usize;
    let axis = |rng: &mut R| -> Result<Vec<f64>> {
        Ok(match kind {
            ReferenceKind::Ramp => ramp_axis(rng, 0.0, n, ts),
            ReferenceKind::SoftStep => soft_step_axis(rng, 0.0, n, ts),
            ReferenceKind::Sinusoid => sinusoid_axis(rng, 0.0, n, ts),
            ReferenceKind::Mixed => {
                let block = n / 3;
                let mut v = ramp_axis(rng, 0.0, block, ts);
                let last = *v.last().unwrap_or(&0.0);
                v.extend(soft_step_axis(rng, last, block, ts));
                let last = *v.last().unwrap_or(&0.0);
                v.extend(sinusoid_axis(rng, last, n - 2 * block, ts));
                v
            }
            ReferenceKind::Step | ReferenceKind::BallCatch => {
                return Err(Error::InvalidParameter(format!("`{kind}` is not a random reference")))
            }
        })
    };
    let alpha = axis(rng)?;
    let beta = axis(rng)?;
    Ok(ReferenceTrajectory { ts, points: zip_axes(alpha, beta), steady_windows: Vec::new() })
}

/// Soft steps through `plan.targets`, each held for `plan.hold`.
pub fn step_reference(plan: &StepPlan, ts: f64) -> Result<ReferenceTrajectory> {
    if plan.targets.is_empty() || plan.hold <= SOFT_STEP_RISE {
        return Err(Error::InvalidParameter("step plan needs targets and a hold longer than the rise".into()));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    push_hold(&mut a, 0.0, plan.start, ts);
    push_hold(&mut b, 0.0, plan.start, ts);
    let mut cur = Angles::ZERO;
    let mut windows = Vec::new();
    for target in &plan.targets {
        target.check_chart()?;
        let t_step = a.len() as f64 * ts;
        let hold_end = a.len() + (plan.hold / ts).round() as usize;
        push_soft(&mut a, cur.alpha, target.alpha, SOFT_STEP_RISE, ts);
        push_soft(&mut b, cur.beta, target.beta, SOFT_STEP_RISE, ts);
        a.resize(hold_end, target.alpha);
        b.resize(hold_end, target.beta);
        let end = a.len() as f64 * ts;
        if end - t_step > SETTLE_TIME {
            windows.push((t_step + SETTLE_TIME, end));
        }
        cur = *target;
    }
    Ok(ReferenceTrajectory { ts, points: zip_axes(a, b), steady_windows: windows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TS: f64 = 0.02;

    #[test]
    fn random_references_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [ReferenceKind::Ramp, ReferenceKind::SoftStep, ReferenceKind::Mixed] {
            let r = generate(kind, 30.0, TS, &mut rng).unwrap();
            assert_eq!(r.len(), 1500);
            assert!(r.points.iter().all(|p| p.alpha.abs() <= 30f64.to_radians() + 1e-12
                || kind == ReferenceKind::Mixed));
        }
    }

    #[test]
    fn ramp_rate_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = generate(ReferenceKind::Ramp, 20.0, TS, &mut rng).unwrap();
        for w in r.points.windows(2) {
            assert!((w[1].alpha - w[0].alpha).abs() <= 300f64.to_radians() * TS + 1e-12);
        }
    }

    #[test]
    fn sinusoid_stays_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = generate(ReferenceKind::Sinusoid, 20.0, TS, &mut rng).unwrap();
        let max_jump = 2.0 * std::f64::consts::PI * 3.0 * 15f64.to_radians() * TS;
        for w in r.points.windows(2) {
            assert!((w[1].beta - w[0].beta).abs() <= max_jump + 1e-12);
        }
    }

    #[test]
    fn same_seed_same_reference() {
        let a = generate(ReferenceKind::Mixed, 12.0, TS, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate(ReferenceKind::Mixed, 12.0, TS, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_windows_follow_settle_time() {
        let r = step_reference(&StepPlan::default(), TS).unwrap();
        assert_eq!(r.steady_windows.len(), 2);
        let (t0, t1) = r.steady_windows[0];
        assert!((t0 - 5.5).abs() < 1e-9 && (t1 - 8.5).abs() < 1e-9, "{t0} {t1}");
        let k = ((t0 + 0.1) / TS) as usize;
        assert_eq!(r.at(k), Angles::from_degrees(15.0, -10.0));
        assert_eq!(r.window(r.len() - 1, 3).len(), 4);
    }

    #[test]
    fn catch_kind_is_not_random() {
        assert!(generate(ReferenceKind::BallCatch, 1.0, TS, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
