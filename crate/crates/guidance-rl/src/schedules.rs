//! Heuristic guidance curves and the grid-search baseline.
//!
//! Seven curve shapes over generation progress `s in [0, 1]`: a constant,
//! linear and cosine ramps in both directions, a Beta(2,2)-shaped bump
//! peaking at the midpoint, and its inverted complement. Decreasing /
//! inverted variants are computed as `gamma_max - increasing(s)` so the pair
//! symmetry `increase(s) + decrease(s) = gamma_max` holds exactly in
//! floating point.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::sampler::SamplerConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Fixed,
    LinearIncrease,
    LinearDecrease,
    CosineIncrease,
    CosineDecrease,
    Beta,
    InvertedBeta,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Fixed => "fixed",
            CurveKind::LinearIncrease => "linear_increase",
            CurveKind::LinearDecrease => "linear_decrease",
            CurveKind::CosineIncrease => "cosine_increase",
            CurveKind::CosineDecrease => "cosine_decrease",
            CurveKind::Beta => "beta",
            CurveKind::InvertedBeta => "inverted_beta",
        }
    }
}

/// All seven baseline curves, in report order.
pub const ALL_CURVES: [CurveKind; 7] = [
    CurveKind::Fixed,
    CurveKind::LinearIncrease,
    CurveKind::LinearDecrease,
    CurveKind::CosineIncrease,
    CurveKind::CosineDecrease,
    CurveKind::Beta,
    CurveKind::InvertedBeta,
];

/// A heuristic curve with its scale parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicCurve {
    pub kind: CurveKind,
    pub gamma_max: f64,
    pub fixed_value: f64,
}

pub const DEFAULT_GAMMA_MAX: f64 = 3.0;
pub const DEFAULT_FIXED_VALUE: f64 = 1.5;

impl HeuristicCurve {
    pub fn new(kind: CurveKind) -> Self {
        Self { kind, gamma_max: DEFAULT_GAMMA_MAX, fixed_value: DEFAULT_FIXED_VALUE }
    }

    pub fn with_gamma_max(mut self, gamma_max: f64) -> Result<Self> {
        if gamma_max <= 0.0 {
            return Err(Error::InvalidConfig(format!("gamma_max {gamma_max} must be > 0")));
        }
        self.gamma_max = gamma_max;
        self.check_fixed()?;
        Ok(self)
    }

    pub fn with_fixed_value(mut self, fixed_value: f64) -> Result<Self> {
        self.fixed_value = fixed_value;
        self.check_fixed()?;
        Ok(self)
    }

    fn check_fixed(&self) -> Result<()> {
        if !(0.0..=self.gamma_max).contains(&self.fixed_value) {
            return Err(Error::InvalidConfig(format!(
                "fixed_value {} outside [0, {}]",
                self.fixed_value, self.gamma_max
            )));
        }
        Ok(())
    }

    /// Evaluate the curve at progress `s in [0, 1]`.
    pub fn eval(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidInput(format!("progress s={s} outside [0, 1]")));
        }
        let g = self.gamma_max;
        Ok(match self.kind {
            CurveKind::Fixed => self.fixed_value,
            CurveKind::LinearIncrease => g * s,
            CurveKind::LinearDecrease => g - g * s,
            CurveKind::CosineIncrease => g * cosine_rise(s),
            CurveKind::CosineDecrease => g - g * cosine_rise(s),
            CurveKind::Beta => g * beta_bump(s),
            CurveKind::InvertedBeta => g - g * beta_bump(s),
        })
    }
}

/// `(1 - cos(pi s)) / 2`, rising 0 -> 1.
fn cosine_rise(s: f64) -> f64 {
    (1.0 - (std::f64::consts::PI * s).cos()) / 2.0
}

/// Beta(2,2) density rescaled to peak at 1: `4 s (1 - s)`.
fn beta_bump(s: f64) -> f64 {
    4.0 * s * (1.0 - s)
}

/// A per-decision-block sequence of guidance scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    /// One value per decision block (`m = ceil(K / n)` entries).
    pub values: Vec<f64>,
    /// Action repetition factor.
    pub n: usize,
    /// Total reverse steps `K`.
    pub total_steps: usize,
}

impl GuidanceSchedule {
    pub fn constant(gamma: f64, total_steps: usize, n: usize) -> Self {
        let m = total_steps.div_ceil(n.max(1));
        Self { values: vec![gamma; m], n, total_steps }
    }

    pub fn decisions(&self) -> usize {
        self.values.len()
    }

    /// Expand block values into one gamma per reverse step.
    pub fn per_step(&self) -> Result<Vec<f64>> {
        crate::env::repeat_actions(&self.values, self.n, self.total_steps)
    }

    pub fn mean_gamma(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Sample a curve at decision-block midpoints `s_j = (j - 0.5) / m`.
pub fn materialize(curve: &HeuristicCurve, config: &SamplerConfig, n: usize) -> Result<GuidanceSchedule> {
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("action repetition n must be >= 1".into()));
    }
    let m = config.total_steps.div_ceil(n);
    let values = (1..=m)
        .map(|j| curve.eval((j as f64 - 0.5) / m as f64))
        .collect::<Result<Vec<f64>>>()?;
    Ok(GuidanceSchedule { values, n, total_steps: config.total_steps })
}

/// Outcome of a grid search over schedule candidates.
#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub index: usize,
    pub mean_reward: f64,
    pub schedule: GuidanceSchedule,
}

/// Evaluate each candidate schedule (up to `budget` of them) and return the
/// highest-reward one; exact reward ties break toward the lower mean gamma.
pub fn grid_search_curves<F>(
    candidates: &[GuidanceSchedule],
    mut reward_eval: F,
    budget: usize,
) -> Result<GridSearchOutcome>
where
    F: FnMut(&GuidanceSchedule) -> Result<f64>,
{
    if budget == 0 {
        return Err(Error::InvalidInput("grid search budget must be >= 1".into()));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput("grid search over an empty family".into()));
    }
    let mut best: Option<GridSearchOutcome> = None;
    for (index, candidate) in candidates.iter().take(budget).enumerate() {
        let mean_reward = reward_eval(candidate)?;
        let better = match &best {
            None => true,
            Some(b) => {
                mean_reward > b.mean_reward
                    || (mean_reward == b.mean_reward
                        && candidate.mean_gamma() < b.schedule.mean_gamma())
            }
        };
        if better {
            best = Some(GridSearchOutcome { index, mean_reward, schedule: candidate.clone() });
        }
    }
    Ok(best.expect("nonempty candidate list"))
}

/// On-disk schedule representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub version: u32,
    pub source: ScheduleSource,
    pub gamma_max: f64,
    pub total_steps: usize,
    pub n: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSource {
    Heuristic { curve: CurveKind },
    Fixed { gamma: f64 },
    RlMean { trajectories: usize, temperature: f64 },
    RlFreq { trajectories: usize, temperature: f64, power: f64 },
}

pub const SCHEDULE_FILE_VERSION: u32 = 1;

impl ScheduleFile {
    pub fn new(schedule: &GuidanceSchedule, source: ScheduleSource, gamma_max: f64) -> Self {
        Self {
            version: SCHEDULE_FILE_VERSION,
            source,
            gamma_max,
            total_steps: schedule.total_steps,
            n: schedule.n,
            values: schedule.values.clone(),
        }
    }

    pub fn schedule(&self) -> GuidanceSchedule {
        GuidanceSchedule {
            values: self.values.clone(),
            n: self.n,
            total_steps: self.total_steps,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ScheduleFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.version != SCHEDULE_FILE_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported schedule file version {}",
                file.version
            )));
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn curve(kind: CurveKind) -> HeuristicCurve {
        HeuristicCurve::new(kind)
    }

    #[test]
    fn linear_endpoints() {
        let c = curve(CurveKind::LinearIncrease);
        assert_eq!(c.eval(0.0).unwrap(), 0.0);
        assert_eq!(c.eval(1.0).unwrap(), 3.0);
        let d = curve(CurveKind::LinearDecrease);
        assert_eq!(d.eval(0.0).unwrap(), 3.0);
        assert_eq!(d.eval(1.0).unwrap(), 0.0);
    }

    #[test]
    fn fixed_is_constant() {
        let c = curve(CurveKind::Fixed);
        for s in [0.0, 0.3, 0.77, 1.0] {
            assert_eq!(c.eval(s).unwrap(), 1.5);
        }
    }

    #[test]
    fn beta_peak_and_endpoints() {
        let b = curve(CurveKind::Beta);
        assert_eq!(b.eval(0.5).unwrap(), 3.0);
        assert_eq!(b.eval(0.0).unwrap(), 0.0);
        assert_eq!(b.eval(1.0).unwrap(), 0.0);
        let ib = curve(CurveKind::InvertedBeta);
        assert_eq!(ib.eval(0.5).unwrap(), 0.0);
        assert_eq!(ib.eval(0.0).unwrap(), 3.0);
    }

    #[test]
    fn cosine_endpoints() {
        let c = curve(CurveKind::CosineIncrease);
        assert_eq!(c.eval(0.0).unwrap(), 0.0);
        assert_eq!(c.eval(1.0).unwrap(), 3.0);
        let d = curve(CurveKind::CosineDecrease);
        assert_eq!(d.eval(0.0).unwrap(), 3.0);
        assert_eq!(d.eval(1.0).unwrap(), 0.0);
    }

    #[test]
    fn eval_rejects_out_of_range_progress() {
        let c = curve(CurveKind::Beta);
        assert!(c.eval(-0.01).is_err());
        assert!(c.eval(1.01).is_err());
    }

    #[test]
    fn pair_symmetry_is_exact() {
        let pairs = [
            (CurveKind::LinearIncrease, CurveKind::LinearDecrease),
            (CurveKind::CosineIncrease, CurveKind::CosineDecrease),
            (CurveKind::Beta, CurveKind::InvertedBeta),
        ];
        for step in 0..=1000 {
            let s = step as f64 / 1000.0;
            for (inc, dec) in pairs {
                let a = curve(inc).eval(s).unwrap();
                let b = curve(dec).eval(s).unwrap();
                assert_eq!(a + b, 3.0, "kind {inc:?} at s={s}");
            }
        }
    }

    #[test]
    fn monotonicity_on_grid() {
        for (kind, increasing) in [
            (CurveKind::LinearIncrease, true),
            (CurveKind::CosineIncrease, true),
            (CurveKind::LinearDecrease, false),
            (CurveKind::CosineDecrease, false),
        ] {
            let c = curve(kind);
            let mut prev = c.eval(0.0).unwrap();
            for step in 1..=1000 {
                let v = c.eval(step as f64 / 1000.0).unwrap();
                if increasing {
                    assert!(v >= prev, "{kind:?} dipped at step {step}");
                } else {
                    assert!(v <= prev, "{kind:?} rose at step {step}");
                }
                prev = v;
            }
        }
    }

    proptest! {
        #[test]
        fn emitted_values_stay_in_range(s in 0.0_f64..=1.0, kind_idx in 0usize..7) {
            let c = curve(ALL_CURVES[kind_idx]);
            let v = c.eval(s).unwrap();
            prop_assert!((0.0..=c.gamma_max).contains(&v));
        }
    }

    #[test]
    fn materialize_fixed_copies() {
        let cfg = SamplerConfig::new(30, 24, 24).unwrap();
        let sched = materialize(&curve(CurveKind::Fixed), &cfg, 2).unwrap();
        assert_eq!(sched.values, vec![1.5; 15]);
    }

    #[test]
    fn materialize_linear_midpoints() {
        let cfg = SamplerConfig::new(3, 3, 3).unwrap();
        let sched = materialize(&curve(CurveKind::LinearIncrease), &cfg, 1).unwrap();
        assert_eq!(sched.values.len(), 3);
        assert_abs_diff_eq!(sched.values[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sched.values[1], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sched.values[2], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn materialize_single_block_uses_midpoint() {
        let cfg = SamplerConfig::new(4, 4, 4).unwrap();
        let sched = materialize(&curve(CurveKind::Beta), &cfg, 4).unwrap();
        assert_eq!(sched.values.len(), 1);
        assert_eq!(sched.values[0], curve(CurveKind::Beta).eval(0.5).unwrap());
    }

    #[test]
    fn grid_search_single_candidate() {
        let only = GuidanceSchedule::constant(1.0, 4, 1);
        let out = grid_search_curves(&[only.clone()], |_| Ok(0.25), 10).unwrap();
        assert_eq!(out.index, 0);
        assert_eq!(out.schedule, only);
    }

    #[test]
    fn grid_search_matches_exhaustive_argmax() {
        // Fixed-gamma family over the 13 action values with a synthetic
        // single-peak reward; the sweep must find the same argmax as a
        // direct scan.
        let candidates: Vec<GuidanceSchedule> =
            (0..13).map(|i| GuidanceSchedule::constant(0.25 * i as f64, 6, 1)).collect();
        let reward = |s: &GuidanceSchedule| {
            let g = s.values[0];
            Ok(1.0 - (g - 1.75).abs())
        };
        let mut best_direct = 0;
        for i in 0..13 {
            if reward(&candidates[i]).unwrap() > reward(&candidates[best_direct]).unwrap() {
                best_direct = i;
            }
        }
        let out = grid_search_curves(&candidates, reward, 13).unwrap();
        assert_eq!(out.index, best_direct);
        assert_eq!(out.index, 7);
    }

    #[test]
    fn grid_search_tie_prefers_lower_mean_gamma() {
        let a = GuidanceSchedule::constant(2.0, 4, 1);
        let b = GuidanceSchedule::constant(0.5, 4, 1);
        let out = grid_search_curves(&[a, b], |_| Ok(0.5), 5).unwrap();
        assert_eq!(out.index, 1);
    }

    #[test]
    fn grid_search_rejects_empty_family() {
        assert!(grid_search_curves(&[], |_| Ok(0.0), 3).is_err());
    }

    #[test]
    fn schedule_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schedule.json");
        let sched = GuidanceSchedule { values: vec![0.5, 2.75, 1.0], n: 2, total_steps: 6 };
        let file = ScheduleFile::new(
            &sched,
            ScheduleSource::RlFreq { trajectories: 200, temperature: 1.0, power: 2.0 },
            3.0,
        );
        file.save(&path).unwrap();
        let loaded = ScheduleFile::load(&path).unwrap();
        assert_eq!(loaded.schedule(), sched);
        assert!(matches!(loaded.source, ScheduleSource::RlFreq { power, .. } if power == 2.0));
    }
}
