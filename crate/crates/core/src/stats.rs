//! Path statistics reduced from trajectories.

use std::fmt;
use std::str::FromStr;

use crate::ddim::Trajectory;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatisticKind {
    /// `√(Σ_t ‖ε‖²)`, the rate of change of the path.
    FirstOrder,
    /// `√(Σ_t ‖∂ₜε‖²)`, the path curvature.
    Curvature,
    /// Signed power sums of ε and `∂ₜε` for p = 1, 2, 3.
    SixD,
}

impl StatisticKind {
    pub const ALL: [StatisticKind; 3] = [StatisticKind::FirstOrder, StatisticKind::Curvature, StatisticKind::SixD];

    pub fn width(self) -> usize {
        match self {
            StatisticKind::FirstOrder | StatisticKind::Curvature => 1,
            StatisticKind::SixD => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::FirstOrder => "first_order",
            StatisticKind::Curvature => "1d",
            StatisticKind::SixD => "6d",
        }
    }

    pub fn compute(self, traj: &Trajectory) -> Result<PathStatistic> {
        match self {
            StatisticKind::FirstOrder => first_order_statistic(traj),
            StatisticKind::Curvature => curvature_statistic(traj),
            StatisticKind::SixD => six_d_statistic(traj),
        }
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first_order" => Ok(StatisticKind::FirstOrder),
            "1d" | "curvature_1d" => Ok(StatisticKind::Curvature),
            "6d" | "six_d" => Ok(StatisticKind::SixD),
            other => Err(Error::Config(format!("unknown statistic kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathStatistic {
    pub kind: StatisticKind,
    pub values: Vec<f64>,
}

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

/// `⟨v⟩_p = Σ_i v_i^p`, keeping the sign.
pub fn signed_power_sum(v: &[f64], p: u32) -> Result<f64> {
    if !(1..=3).contains(&p) {
        return Err(Error::param(format!("power {p} not in 1..=3")));
    }
    let mut acc = CompensatedSum::default();
    for x in v {
        acc.add(x.powi(p as i32));
    }
    Ok(acc.value())
}

fn root_sum_squares(vs: &[Vec<f64>]) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in vs {
        for x in v {
            acc.add(x * x);
        }
    }
    acc.value().sqrt()
}

pub fn first_order_statistic(traj: &Trajectory) -> Result<PathStatistic> {
    if traj.epsilons.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    Ok(PathStatistic {
        kind: StatisticKind::FirstOrder,
        values: vec![root_sum_squares(&traj.epsilons)],
    })
}

pub fn curvature_statistic(traj: &Trajectory) -> Result<PathStatistic> {
    if traj.eps_time_derivs.is_empty() {
        return Err(Error::Empty("trajectory derivatives"));
    }
    Ok(PathStatistic {
        kind: StatisticKind::Curvature,
        values: vec![root_sum_squares(&traj.eps_time_derivs)],
    })
}

fn power_sums_over_path(vs: &[Vec<f64>]) -> [f64; 3] {
    let mut acc = [CompensatedSum::default(); 3];
    for v in vs {
        for x in v {
            acc[0].add(*x);
            acc[1].add(x * x);
            acc[2].add(x * x * x);
        }
    }
    acc.map(CompensatedSum::value)
}

/// `[Σ_t⟨ε⟩_1, Σ_t⟨ε⟩_2, Σ_t⟨ε⟩_3, Σ_t⟨∂ₜε⟩_1, Σ_t⟨∂ₜε⟩_2, Σ_t⟨∂ₜε⟩_3]`.
pub fn six_d_statistic(traj: &Trajectory) -> Result<PathStatistic> {
    if traj.epsilons.is_empty() || traj.eps_time_derivs.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let e = power_sums_over_path(&traj.epsilons);
    let d = power_sums_over_path(&traj.eps_time_derivs);
    Ok(PathStatistic {
        kind: StatisticKind::SixD,
        values: vec![e[0], e[1], e[2], d[0], d[1], d[2]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{NoiseSchedule, TimestepGrid};
    use proptest::prelude::*;

    fn traj(eps: Vec<Vec<f64>>, derivs: Vec<Vec<f64>>) -> Trajectory {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let grid = TimestepGrid::uniform(&s, eps.len().max(2)).unwrap();
        Trajectory {
            grid,
            states: eps.clone(),
            epsilons: eps,
            eps_time_derivs: derivs,
        }
    }

    #[test]
    fn power_sums() {
        assert_eq!(signed_power_sum(&[1.0, -2.0], 1).unwrap(), -1.0);
        assert_eq!(signed_power_sum(&[1.0, -2.0], 2).unwrap(), 5.0);
        assert_eq!(signed_power_sum(&[1.0, -2.0], 3).unwrap(), -7.0);
        assert!(signed_power_sum(&[1.0], 4).is_err());
        assert!(signed_power_sum(&[1.0], 0).is_err());
    }

    #[test]
    fn first_order_values() {
        let t = traj(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![vec![0.0, 0.0]]);
        assert_eq!(first_order_statistic(&t).unwrap().values, vec![0.0]);
        let t = traj(vec![vec![3.0, 4.0]], vec![]);
        assert_eq!(first_order_statistic(&t).unwrap().values, vec![5.0]);
        let t = traj(vec![vec![1.0, 0.0], vec![0.0, 2.0]], vec![vec![0.0, 0.0]]);
        assert_eq!(first_order_statistic(&t).unwrap().values, vec![5f64.sqrt()]);
        assert!(first_order_statistic(&traj(vec![], vec![])).is_err());
    }

    #[test]
    fn curvature_values() {
        let t = traj(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![vec![0.0, 0.0]]);
        assert_eq!(curvature_statistic(&t).unwrap().values, vec![0.0]);
        let t = traj(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![vec![3.0, 4.0]]);
        assert_eq!(curvature_statistic(&t).unwrap().values, vec![5.0]);
    }

    #[test]
    fn six_d_hand_example() {
        let t = traj(vec![vec![1.0, -2.0], vec![0.0, 1.0]], vec![vec![2.0, 2.0]]);
        let s = six_d_statistic(&t).unwrap();
        assert_eq!(s.values, vec![0.0, 6.0, -6.0, 4.0, 8.0, 16.0]);
        let zero = traj(vec![vec![0.0; 3]; 2], vec![vec![0.0; 3]]);
        assert_eq!(six_d_statistic(&zero).unwrap().values, vec![0.0; 6]);
    }

    #[test]
    fn compensated_sum_survives_cancellation() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(signed_power_sum(&v, 1).unwrap(), 2.0);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("6d".parse::<StatisticKind>().unwrap(), StatisticKind::SixD);
        assert_eq!("curvature_1d".parse::<StatisticKind>().unwrap(), StatisticKind::Curvature);
        assert!("2d".parse::<StatisticKind>().is_err());
    }

    fn arb_traj() -> impl Strategy<Value = Trajectory> {
        (1usize..4, 2usize..6).prop_flat_map(|(d, n)| {
            (
                prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n),
                prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n - 1),
            )
                .prop_map(|(e, dv)| traj(e, dv))
        })
    }

    proptest! {
        #[test]
        fn negation_parity(t in arb_traj()) {
            let n = t.negated();
            for kind in [StatisticKind::FirstOrder, StatisticKind::Curvature] {
                prop_assert_eq!(kind.compute(&t).unwrap().values, kind.compute(&n).unwrap().values);
            }
            let a = six_d_statistic(&t).unwrap().values;
            let b = six_d_statistic(&n).unwrap().values;
            for i in [0, 2, 3, 5] {
                prop_assert_eq!(a[i], -b[i]);
            }
            for i in [1, 4] {
                prop_assert_eq!(a[i], b[i]);
            }
        }

        #[test]
        fn feature_permutation_invariance(v in prop::collection::vec(-3.0f64..3.0, 1..8), p in 1u32..4) {
            let mut r = v.clone();
            r.reverse();
            let a = signed_power_sum(&v, p).unwrap();
            let b = signed_power_sum(&r, p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn norms_nonnegative(t in arb_traj()) {
            prop_assert!(first_order_statistic(&t).unwrap().values[0] >= 0.0);
            prop_assert!(curvature_statistic(&t).unwrap().values[0] >= 0.0);
        }
    }
}
