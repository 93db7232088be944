//! Euler-Maruyama estimates of mean first exit times of
//! `dx = b(x) dt + sqrt(eps) dB`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::prefactor::{mean_exit_time, PrefactorReport};
use crate::systems::{distance, DriftSystem};

/// The complement of the domain. `level` is negative inside the domain and
/// non-negative once the trajectory has left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitRegion {
    /// `<normal, x> >= offset`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// `|x - center| >= radius`.
    BallExterior { center: Vec<f64>, radius: f64 },
}

impl ExitRegion {
    pub fn level(&self, x: &[f64]) -> f64 {
        match self {
            ExitRegion::HalfSpace { normal, offset } => normal.iter().zip(x).map(|(n, x)| n * x).sum::<f64>() - offset,
            ExitRegion::BallExterior { center, radius } => distance(x, center) - radius,
        }
    }

    pub fn has_exited(&self, x: &[f64]) -> bool {
        self.level(x) >= 0.0
    }

    fn dim(&self) -> usize {
        match self {
            ExitRegion::HalfSpace { normal, .. } => normal.len(),
            ExitRegion::BallExterior { center, .. } => center.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McParams {
    pub dt: f64,
    /// Per-trajectory step budget; runs that use it up are censored.
    pub max_steps: u64,
    pub trajectories: usize,
    pub seed: u64,
}

impl Default for McParams {
    fn default() -> Self {
        McParams {
            dt: 1e-3,
            max_steps: 10_000_000,
            trajectories: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct McSetup {
    pub system: DriftSystem,
    pub start: Vec<f64>,
    pub exit: ExitRegion,
    pub epsilons: Vec<f64>,
    pub params: McParams,
}

impl McSetup {
    pub fn new(
        system: DriftSystem,
        start: Vec<f64>,
        exit: ExitRegion,
        epsilons: Vec<f64>,
        params: McParams,
    ) -> Result<Self> {
        check_dim(system.dim(), start.len())?;
        check_dim(system.dim(), exit.dim())?;
        if !(params.dt > 0.0) {
            return Err(Error::usage("dt must be positive"));
        }
        if params.trajectories == 0 {
            return Err(Error::usage("at least one trajectory is required"));
        }
        if exit.has_exited(&start) {
            return Err(Error::usage("start point lies outside the domain"));
        }
        if epsilons.iter().any(|&e| !(e >= 0.0)) {
            return Err(Error::usage("epsilons must be non-negative"));
        }
        Ok(McSetup {
            system,
            start,
            exit,
            epsilons,
            params,
        })
    }
}

fn stream_id(eps_index: usize, trajectory: usize) -> u64 {
    ((eps_index as u64) << 40) | trajectory as u64
}

/// Exit time of one trajectory, `None` if censored. The noise comes from
/// its own ChaCha stream keyed by `(seed, eps_index, trajectory)`; the
/// crossing time is interpolated linearly in the level function over the
/// last step.
pub fn simulate_exit(setup: &McSetup, eps_index: usize, trajectory: usize) -> Option<f64> {
    let eps = setup.epsilons[eps_index];
    let p = &setup.params;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(stream_id(eps_index, trajectory));
    let n = setup.system.dim();
    let noise = (eps * p.dt).sqrt();
    let mut x = setup.start.clone();
    let mut b = vec![0.0; n];
    let mut prev = setup.exit.level(&x);
    for k in 0..p.max_steps {
        setup.system.drift_into(&x, &mut b);
        for i in 0..n {
            let xi: f64 = StandardNormal.sample(&mut rng);
            x[i] += b[i] * p.dt + noise * xi;
        }
        let level = setup.exit.level(&x);
        if level >= 0.0 {
            let frac = if level > prev { -prev / (level - prev) } else { 1.0 };
            return Some((k as f64 + frac) * p.dt);
        }
        if !level.is_finite() {
            return None;
        }
        prev = level;
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStats {
    pub epsilon: f64,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(count)`; absent below two samples.
    pub stderr: Option<f64>,
    pub count: usize,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeStats {
    pub records: Vec<EpsilonStats>,
    pub params: McParams,
}

impl ExitTimeStats {
    pub fn epsilons(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.epsilon).collect()
    }
}

/// Mean and standard error over the uncensored runs at one epsilon.
pub fn summarize(epsilon: f64, times: &[Option<f64>]) -> EpsilonStats {
    let done: Vec<f64> = times.iter().flatten().copied().collect();
    let count = done.len();
    let mean = if count == 0 {
        f64::NAN
    } else {
        done.iter().sum::<f64>() / count as f64
    };
    let stderr = (count >= 2).then(|| {
        let var = done.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        (var / count as f64).sqrt()
    });
    EpsilonStats {
        epsilon,
        mean,
        stderr,
        count,
        censored: times.len() - count,
    }
}

/// Runs all trajectories at every epsilon. Per-trajectory streams and an
/// in-order reduction make the result independent of the thread count.
pub fn exit_time_stats(setup: &McSetup) -> Result<ExitTimeStats> {
    let mut records = Vec::with_capacity(setup.epsilons.len());
    for (i, &eps) in setup.epsilons.iter().enumerate() {
        let times: Vec<Option<f64>> = (0..setup.params.trajectories)
            .into_par_iter()
            .map(|j| simulate_exit(setup, i, j))
            .collect();
        let rec = summarize(eps, &times);
        if 2 * rec.censored > times.len() {
            return Err(Error::numerical(format!(
                "{} of {} runs censored at eps = {eps}; raise max_steps or eps",
                rec.censored,
                times.len()
            )));
        }
        records.push(rec);
    }
    Ok(ExitTimeStats {
        records,
        params: setup.params.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub epsilon: f64,
    pub met_mc: f64,
    pub stderr: Option<f64>,
    pub n_effective: usize,
    pub censored: usize,
    pub met_formula: f64,
    /// `(mc - formula) / formula`.
    pub rel_err: f64,
    /// `(mc - formula) / stderr`.
    pub z_score: Option<f64>,
}

impl ComparisonRow {
    /// `|mc - formula| / mc`.
    pub fn error_relative_to_mc(&self) -> f64 {
        (self.met_mc - self.met_formula).abs() / self.met_mc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,met_mc,stderr,n_effective,censored,met_formula,rel_err\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                crate::fmt_f64(r.epsilon),
                crate::fmt_f64(r.met_mc),
                r.stderr.map(crate::fmt_f64).unwrap_or_default(),
                r.n_effective,
                r.censored,
                crate::fmt_f64(r.met_formula),
                crate::fmt_f64(r.rel_err)
            ));
        }
        s
    }
}

pub fn compare_with_formula(stats: &ExitTimeStats, report: &PrefactorReport) -> Result<Comparison> {
    if stats.epsilons() != report.epsilons {
        return Err(Error::usage(format!(
            "epsilon grids differ: simulation {:?}, formula {:?}",
            stats.epsilons(),
            report.epsilons
        )));
    }
    let rows = stats
        .records
        .iter()
        .map(|r| {
            let f = mean_exit_time(report, r.epsilon)?;
            Ok(ComparisonRow {
                epsilon: r.epsilon,
                met_mc: r.mean,
                stderr: r.stderr,
                n_effective: r.count,
                censored: r.censored,
                met_formula: f,
                rel_err: (r.mean - f) / f,
                z_score: r.stderr.map(|s| (r.mean - f) / s),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Comparison { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{AnalyticBenchmark, VectorField};
    use std::sync::Arc;

    #[derive(Debug)]
    struct Still;
    impl VectorField for Still {
        fn dim(&self) -> usize {
            1
        }
        fn eval_into(&self, _: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn jacobian_into(&self, _: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
    }

    fn brownian(eps: Vec<f64>, m: usize) -> McSetup {
        let sys = DriftSystem::new("still", Arc::new(Still));
        let exit = ExitRegion::BallExterior {
            center: vec![0.0],
            radius: 0.5,
        };
        let params = McParams {
            dt: 1e-4,
            trajectories: m,
            seed: 3,
            ..McParams::default()
        };
        McSetup::new(sys, vec![0.0], exit, eps, params).unwrap()
    }

    #[test]
    fn brownian_exit_matches_scaling() {
        let s = brownian(vec![0.5, 1.0], 4000);
        let st = exit_time_stats(&s).unwrap();
        for r in &st.records {
            let exact = 0.25 / r.epsilon;
            assert!((r.mean - exact).abs() < 0.1 * exact, "{} vs {exact}", r.mean);
        }
        assert!(st.records[0].mean > st.records[1].mean);
    }

    #[test]
    fn deterministic_per_trajectory() {
        let s = brownian(vec![1.0], 10);
        assert_eq!(simulate_exit(&s, 0, 7), simulate_exit(&s, 0, 7));
        assert_ne!(simulate_exit(&s, 0, 7), simulate_exit(&s, 0, 8));
    }

    #[test]
    fn zero_noise_never_exits() {
        let b = AnalyticBenchmark::standard();
        let exit = ExitRegion::HalfSpace {
            normal: vec![1.0, 0.0],
            offset: -0.5,
        };
        let params = McParams {
            max_steps: 20_000,
            trajectories: 4,
            ..McParams::default()
        };
        let s = McSetup::new(b.system().clone(), b.xbar(), exit, vec![0.0], params).unwrap();
        assert_eq!(simulate_exit(&s, 0, 0), None);
        assert!(exit_time_stats(&s).is_err());
    }

    #[test]
    fn single_trajectory_has_no_stderr() {
        let s = brownian(vec![1.0], 1);
        let st = exit_time_stats(&s).unwrap();
        assert_eq!(st.records[0].stderr, None);
        assert_eq!(Some(st.records[0].mean), simulate_exit(&s, 0, 0));
    }

    #[test]
    fn setup_validation() {
        let b = AnalyticBenchmark::standard();
        let exit = ExitRegion::HalfSpace {
            normal: vec![1.0, 0.0],
            offset: -0.5,
        };
        let bad_dt = McParams {
            dt: 0.0,
            ..McParams::default()
        };
        assert!(McSetup::new(b.system().clone(), b.xbar(), exit.clone(), vec![0.1], bad_dt).is_err());
        assert!(McSetup::new(b.system().clone(), vec![0.0, 0.0], exit, vec![0.1], McParams::default()).is_err());
    }

    #[test]
    fn summary_statistics() {
        let r = summarize(0.1, &[Some(1.0), None, Some(3.0)]);
        assert_eq!(r.mean, 2.0);
        assert_eq!(r.count, 2);
        assert_eq!(r.censored, 1);
        assert!((r.stderr.unwrap() - 1.0).abs() < 1e-15);
    }
}
