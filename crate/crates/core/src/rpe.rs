//! Robust phase estimation.
//!
//! Generation `j` runs Type-0 and Type-+ experiments at evolution time
//! `t_j = t_1 2^{j−1}` with `t_1 = time_scale · π / (4 λ)`. Their success
//! frequencies estimate `cos(ω t_j)` and `sin(ω t_j)`, giving a raw angle
//! `ω t_j mod 2π`. The candidates `(angle + 2πk)/t_j` are spaced `2π/t_j`
//! apart; the one nearest the previous generation's estimate is kept. As long
//! as every raw angle is within `π/4` of the truth, generation `j` pins `ω`
//! to within `π/(4 t_j)`, so the confidence half-width halves per generation
//! while the total time doubles.

use rand::Rng;
use rand_distr::{Binomial, Distribution as _};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default shots per experiment type per generation.
pub const DEFAULT_M_STAR: usize = 60;
/// Default cap on the number of generations.
pub const DEFAULT_MAX_GENERATIONS: usize = 40;
/// Largest raw-angle error the interval halving tolerates.
pub const ANGLE_TOLERANCE: f64 = PI / 4.0;

/// How many shots each generation gets per experiment type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ShotRule {
    Constant(usize),
    /// Hoeffding-style count so that all `2M` frequencies land within `eta`
    /// of their means with total probability at least `1 − failure_prob`.
    FailureProbability { failure_prob: f64, eta: f64 },
}

impl Default for ShotRule {
    fn default() -> Self {
        ShotRule::Constant(DEFAULT_M_STAR)
    }
}

impl ShotRule {
    /// Deviation of a frequency that still keeps the raw angle within
    /// tolerance when both frequencies are off by it (and no bias).
    pub const DEFAULT_ETA: f64 = 0.21;

    fn shots(&self, n_generations: usize) -> Result<usize> {
        match *self {
            ShotRule::Constant(m) if m > 0 => Ok(m),
            ShotRule::Constant(_) => Err(Error::Validation("shots per generation must be positive".into())),
            ShotRule::FailureProbability { failure_prob, eta } => {
                if !(failure_prob > 0.0 && failure_prob < 1.0) || !(eta > 0.0) {
                    return Err(Error::Validation(format!(
                        "failure probability {failure_prob} and eta {eta} out of range"
                    )));
                }
                let m = ((4.0 * n_generations as f64 / failure_prob).ln() / (2.0 * eta * eta)).ceil();
                Ok(m.max(1.0) as usize)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub t: f64,
    pub shots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpeSchedule {
    pub generations: Vec<Generation>,
    /// Multiplier already folded into every `t`.
    pub time_scale: f64,
    /// Bound on `|ω|` the schedule was built for.
    pub lambda_bound: f64,
}

impl RpeSchedule {
    pub fn n_generations(&self) -> usize {
        self.generations.len()
    }

    pub fn t1(&self) -> f64 {
        self.generations[0].t
    }

    /// Half-width guaranteed after generation `j` (0-based) when every raw
    /// angle is within tolerance.
    pub fn half_width_after(&self, j: usize) -> f64 {
        ANGLE_TOLERANCE / self.generations[j].t
    }

    pub fn final_half_width(&self) -> f64 {
        self.half_width_after(self.n_generations() - 1)
    }

    /// Evolution time of one type: `Σ m_j t_j`.
    pub fn time_per_type(&self) -> f64 {
        self.generations.iter().map(|g| g.shots as f64 * g.t).sum()
    }

    /// Evolution time of both experiment types together.
    pub fn total_time(&self) -> f64 {
        2.0 * self.time_per_type()
    }

    pub fn total_shots(&self) -> usize {
        2 * self.generations.iter().map(|g| g.shots).sum::<usize>()
    }
}

/// Schedule reaching a final half-width `≤ epsilon` for phases in
/// `[−lambda_bound, lambda_bound]`.
pub fn make_schedule(epsilon: f64, lambda_bound: f64, rule: ShotRule) -> Result<RpeSchedule> {
    make_scaled_schedule(epsilon, lambda_bound, rule, 1.0, DEFAULT_MAX_GENERATIONS)
}

pub fn make_scaled_schedule(
    epsilon: f64,
    lambda_bound: f64,
    rule: ShotRule,
    time_scale: f64,
    max_generations: usize,
) -> Result<RpeSchedule> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Validation(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(lambda_bound > 0.0) || !lambda_bound.is_finite() {
        return Err(Error::Validation(format!("lambda bound must be positive, got {lambda_bound}")));
    }
    if !(time_scale > 0.0 && time_scale <= 1.0) {
        return Err(Error::Validation(format!("time scale must lie in (0, 1], got {time_scale}")));
    }
    let t1 = time_scale * PI / (4.0 * lambda_bound);
    let hw1 = ANGLE_TOLERANCE / t1;
    let doublings = (hw1 / epsilon).log2().ceil().max(0.0) as usize;
    let m = doublings + 1;
    if m > max_generations {
        return Err(Error::ScheduleTooDeep { needed: m, cap: max_generations });
    }
    let shots = rule.shots(m)?;
    let generations = (0..m)
        .map(|j| Generation { t: t1 * 2f64.powi(j as i32), shots })
        .collect();
    Ok(RpeSchedule { generations, time_scale, lambda_bound })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationCount {
    pub n0_success: usize,
    pub n0_total: usize,
    pub nplus_success: usize,
    pub nplus_total: usize,
}

impl GenerationCount {
    fn validate(&self) -> Result<()> {
        if self.n0_total == 0 || self.nplus_total == 0 {
            return Err(Error::EmptyCounts);
        }
        if self.n0_success > self.n0_total || self.nplus_success > self.nplus_total {
            return Err(Error::Validation("more successes than shots".into()));
        }
        Ok(())
    }

    fn frequencies(&self) -> (f64, f64) {
        (
            self.n0_success as f64 / self.n0_total as f64,
            self.nplus_success as f64 / self.nplus_total as f64,
        )
    }
}

pub type GenerationCounts = Vec<GenerationCount>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    pub value: f64,
    pub half_width: f64,
    pub generations_used: usize,
}

/// Raw angle from Type-0 and Type-+ success frequencies.
pub fn raw_angle(p0: f64, pplus: f64) -> f64 {
    (2.0 * pplus - 1.0).atan2(2.0 * p0 - 1.0)
}

/// Candidate `(angle + 2πk)/t` nearest `center`; ties go to the smaller
/// absolute value.
fn select_candidate(angle: f64, t: f64, center: f64) -> f64 {
    let spacing = 2.0 * PI / t;
    let base = angle / t;
    let k = ((center - base) / spacing).round();
    let mut best = base + k * spacing;
    for dk in [-1.0, 1.0] {
        let c = base + (k + dk) * spacing;
        let d_new = (c - center).abs();
        let d_best = (best - center).abs();
        if d_new < d_best - 1e-12 || ((d_new - d_best).abs() <= 1e-12 && c.abs() < best.abs()) {
            best = c;
        }
    }
    best
}

/// Wrap into `[−π/t1, π/t1)`.
fn wrap(value: f64, t1: f64) -> f64 {
    let period = 2.0 * PI / t1;
    let half = period / 2.0;
    (value + half).rem_euclid(period) - half
}

/// Estimate from per-generation frequency pairs `(p̂_0, p̂_+)`.
pub fn estimate_from_frequencies(schedule: &RpeSchedule, freqs: &[(f64, f64)]) -> Result<PhaseEstimate> {
    if freqs.is_empty() || schedule.generations.is_empty() {
        return Err(Error::EmptyCounts);
    }
    if freqs.len() > schedule.n_generations() {
        return Err(Error::Validation(format!(
            "{} generations of data for a {}-generation schedule",
            freqs.len(),
            schedule.n_generations()
        )));
    }
    let mut center = 0.0;
    for (g, &(p0, pp)) in schedule.generations.iter().zip(freqs) {
        center = select_candidate(raw_angle(p0, pp), g.t, center);
    }
    let used = freqs.len();
    Ok(PhaseEstimate {
        value: wrap(center, schedule.t1()),
        half_width: schedule.half_width_after(used - 1),
        generations_used: used,
    })
}

pub fn estimate_phase(schedule: &RpeSchedule, counts: &[GenerationCount]) -> Result<PhaseEstimate> {
    if counts.is_empty() {
        return Err(Error::EmptyCounts);
    }
    for c in counts {
        c.validate()?;
    }
    let freqs: Vec<_> = counts.iter().map(|c| c.frequencies()).collect();
    estimate_from_frequencies(schedule, &freqs)
}

/// `sqrt(mean((estimate − truth)²))`.
pub fn rms_error(trials: &[(f64, f64)]) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::EmptyCounts);
    }
    let ms = trials.iter().map(|(e, t)| (e - t).powi(2)).sum::<f64>() / trials.len() as f64;
    Ok(ms.sqrt())
}

/// Ideal success probabilities at time `t`, shifted by constant biases and
/// clamped to `[0, 1]`.
pub fn ideal_probabilities(phase: f64, t: f64, delta0: f64, deltaplus: f64) -> (f64, f64) {
    (
        (0.5 * (1.0 + (phase * t).cos()) + delta0).clamp(0.0, 1.0),
        (0.5 * (1.0 + (phase * t).sin()) + deltaplus).clamp(0.0, 1.0),
    )
}

/// Sample counts for a known phase under the ideal probability model.
pub fn simulate_counts<R: Rng>(
    schedule: &RpeSchedule,
    phase: f64,
    delta0: f64,
    deltaplus: f64,
    rng: &mut R,
) -> GenerationCounts {
    schedule
        .generations
        .iter()
        .map(|g| {
            let (p0, pp) = ideal_probabilities(phase, g.t, delta0, deltaplus);
            GenerationCount {
                n0_success: sample_binomial(g.shots, p0, rng),
                n0_total: g.shots,
                nplus_success: sample_binomial(g.shots, pp, rng),
                nplus_total: g.shots,
            }
        })
        .collect()
}

pub fn sample_binomial<R: Rng>(n: usize, p: f64, rng: &mut R) -> usize {
    Binomial::new(n as u64, p.clamp(0.0, 1.0))
        .expect("probability clamped into [0, 1]")
        .sample(rng) as usize
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exact_freqs(s: &RpeSchedule, phase: f64, d0: f64, dp: f64) -> Vec<(f64, f64)> {
        s.generations.iter().map(|g| ideal_probabilities(phase, g.t, d0, dp)).collect()
    }

    #[test]
    fn halving_arithmetic() {
        let base = make_schedule(1.0, 1.0, ShotRule::default()).unwrap();
        let hw1 = base.half_width_after(0);
        assert_eq!(base.n_generations(), 1);
        for k in 0..8 {
            let s = make_schedule(hw1 / 2f64.powi(k), 1.0, ShotRule::default()).unwrap();
            assert_eq!(s.n_generations(), k as usize + 1);
            assert!(s.final_half_width() <= hw1 / 2f64.powi(k) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn doubling_lambda_halves_t1() {
        let a = make_schedule(0.01, 1.0, ShotRule::default()).unwrap();
        let b = make_schedule(0.01, 2.0, ShotRule::default()).unwrap();
        assert!((a.t1() - 2.0 * b.t1()).abs() < 1e-15);
        for w in a.generations.windows(2) {
            assert!((w[1].t - 2.0 * w[0].t).abs() < 1e-12);
        }
    }

    #[test]
    fn too_deep_schedule_errors() {
        assert!(matches!(
            make_scaled_schedule(1e-30, 1.0, ShotRule::default(), 1.0, 20),
            Err(Error::ScheduleTooDeep { .. })
        ));
    }

    #[test]
    fn exact_probabilities_converge() {
        let s = make_scaled_schedule(1e-9, 1.0, ShotRule::default(), 1.0, 6).unwrap_err();
        assert!(matches!(s, Error::ScheduleTooDeep { .. }));
        let hw1 = make_schedule(1.0, 1.0, ShotRule::default()).unwrap().half_width_after(0);
        let s = make_schedule(hw1 / 32.0, 1.0, ShotRule::default()).unwrap();
        assert_eq!(s.n_generations(), 6);
        let est = estimate_from_frequencies(&s, &exact_freqs(&s, 0.37, 0.0, 0.0)).unwrap();
        assert!((est.value - 0.37).abs() <= hw1 / 64.0);
        let est = estimate_from_frequencies(&s, &exact_freqs(&s, 0.0, 0.0, 0.0)).unwrap();
        assert!(est.value.abs() <= est.half_width);
    }

    #[test]
    fn constant_bias_is_tolerated() {
        let s = make_schedule(1e-4, 1.0, ShotRule::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let phase = rng.gen_range(-1.0..1.0);
            let est = estimate_from_frequencies(&s, &exact_freqs(&s, phase, 0.05, 0.05)).unwrap();
            assert!((est.value - phase).abs() <= est.half_width, "{phase} -> {}", est.value);
            let est = estimate_from_frequencies(&s, &exact_freqs(&s, phase, -0.05, 0.05)).unwrap();
            assert!((est.value - phase).abs() <= est.half_width);
        }
    }

    #[test]
    fn range_edges() {
        let s = make_schedule(1e-3, 1.0, ShotRule::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 0..100 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let phase = sign * (1.0 - rng.gen_range(0.0..1e-3));
            let est = estimate_from_frequencies(&s, &exact_freqs(&s, phase, 0.0, 0.0)).unwrap();
            assert!((est.value - phase).abs() <= est.half_width, "{phase} -> {}", est.value);
        }
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms_error(&[(1.0, 1.0), (2.0, 2.0)]).unwrap(), 0.0);
        let alt: Vec<_> = (0..10).map(|k| (if k % 2 == 0 { 0.3 } else { -0.3 }, 0.0)).collect();
        assert!((rms_error(&alt).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(rms_error(&[]), Err(Error::EmptyCounts)));
    }

    #[test]
    fn empty_counts_error() {
        let s = make_schedule(0.1, 1.0, ShotRule::default()).unwrap();
        assert!(matches!(estimate_phase(&s, &[]), Err(Error::EmptyCounts)));
    }

    #[test]
    fn tie_break_prefers_smaller_magnitude() {
        // Two candidates equidistant from the center: ±π/t around center 0.
        let v = select_candidate(PI, 1.0, 0.0);
        assert!((v.abs() - PI).abs() < 1e-12);
        assert!(v <= 0.0 || (v - PI).abs() < 1e-12);
        let a = select_candidate(PI, 1.0, 0.0);
        let b = select_candidate(-PI, 1.0, 0.0);
        assert_eq!(a.abs(), b.abs());
    }

    #[test]
    fn hoeffding_rule_grows_with_confidence() {
        let rule = |f| ShotRule::FailureProbability { failure_prob: f, eta: ShotRule::DEFAULT_ETA };
        let a = make_schedule(0.01, 1.0, rule(0.1)).unwrap();
        let b = make_schedule(0.01, 1.0, rule(0.001)).unwrap();
        assert!(b.generations[0].shots > a.generations[0].shots);
    }

    proptest! {
        #[test]
        fn exact_estimates_stay_in_interval(phase in -1.0f64..1.0, d0 in -0.05f64..0.05, dp in -0.05f64..0.05) {
            let s = make_schedule(1e-3, 1.0, ShotRule::default()).unwrap();
            let est = estimate_from_frequencies(&s, &exact_freqs(&s, phase, d0, dp)).unwrap();
            prop_assert!((est.value - phase).abs() <= est.half_width);
        }
    }
}
