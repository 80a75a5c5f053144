use serde::{Deserialize, Serialize};

use crate::online::TraceRow;

/// One step of a test episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
    pub cost: u8,
    pub corrected: bool,
}

/// Test-time metrics of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    /// Mean return over test episodes.
    pub acr: f64,
    /// Share of test episodes that end in a violation.
    pub avr: f64,
    /// Share of test steps whose action was replaced.
    pub test_arr: f64,
    pub mean_episode_length: f64,
}

impl TestMetrics {
    /// Rows must be ordered by episode, then step.
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        let mut returns: Vec<f64> = Vec::new();
        let mut violated: Vec<bool> = Vec::new();
        let mut corrected = 0usize;
        for r in rows {
            if r.episode >= returns.len() {
                returns.resize(r.episode + 1, 0.0);
                violated.resize(r.episode + 1, false);
            }
            returns[r.episode] += r.reward;
            violated[r.episode] |= r.cost == 1;
            corrected += usize::from(r.corrected);
        }
        let n = returns.len().max(1) as f64;
        Self {
            acr: returns.iter().sum::<f64>() / n,
            avr: violated.iter().filter(|v| **v).count() as f64 / n,
            test_arr: if rows.is_empty() { 0.0 } else { corrected as f64 / rows.len() as f64 },
            mean_episode_length: rows.len() as f64 / n,
        }
    }
}

/// Training-time metrics of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    /// Violations during online training.
    pub tv: u64,
    /// Share of training steps whose action was replaced.
    pub arr: f64,
}

impl TrainMetrics {
    pub fn from_rows(rows: &[TraceRow]) -> Self {
        let tv = rows.iter().filter(|r| r.cost == 1).count() as u64;
        let corrected = rows.iter().filter(|r| r.corrected).count();
        Self { tv, arr: if rows.is_empty() { 0.0 } else { corrected as f64 / rows.len() as f64 } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub acr: f64,
    pub avr: f64,
    pub tv: u64,
    pub arr: f64,
    pub test_arr: f64,
    pub mean_episode_length: f64,
}

impl SeedMetrics {
    pub fn new(seed: u64, train: TrainMetrics, test: TestMetrics) -> Self {
        Self {
            seed,
            acr: test.acr,
            avr: test.avr,
            tv: train.tv,
            arr: train.arr,
            test_arr: test.test_arr,
            mean_episode_length: test.mean_episode_length,
        }
    }
}

/// Seed means of every metric plus the per-seed breakdown.
///
/// `tv` is an integer per seed; the aggregate is its seed mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acr: f64,
    pub avr: f64,
    pub tv: f64,
    pub arr: f64,
    pub test_arr: f64,
    pub mean_episode_length: f64,
    pub per_seed: Vec<SeedMetrics>,
}

impl MetricsReport {
    pub fn from_seeds(per_seed: Vec<SeedMetrics>) -> Self {
        let n = per_seed.len().max(1) as f64;
        let mean = |f: fn(&SeedMetrics) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
        Self {
            acr: mean(|s| s.acr),
            avr: mean(|s| s.avr),
            tv: mean(|s| s.tv as f64),
            arr: mean(|s| s.arr),
            test_arr: mean(|s| s.test_arr),
            mean_episode_length: mean(|s| s.mean_episode_length),
            per_seed,
        }
    }
}

/// Flat CSV form of an aggregate report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub arm: String,
    pub method: String,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub acr: f64,
    pub avr: f64,
    pub tv: f64,
    pub arr: f64,
    pub test_arr: f64,
    pub mean_episode_length: f64,
}

impl ReportRow {
    pub fn rows(arm: &str, method: &str, epsilon: Option<f64>, report: &MetricsReport) -> Vec<Self> {
        let mut out: Vec<Self> = report
            .per_seed
            .iter()
            .map(|s| Self {
                arm: arm.into(),
                method: method.into(),
                epsilon,
                seed: Some(s.seed),
                acr: s.acr,
                avr: s.avr,
                tv: s.tv as f64,
                arr: s.arr,
                test_arr: s.test_arr,
                mean_episode_length: s.mean_episode_length,
            })
            .collect();
        out.push(Self {
            arm: arm.into(),
            method: method.into(),
            epsilon,
            seed: None,
            acr: report.acr,
            avr: report.avr,
            tv: report.tv,
            arr: report.arr,
            test_arr: report.test_arr,
            mean_episode_length: report.mean_episode_length,
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(episode: usize, reward: f64, cost: u8, corrected: bool) -> EvalRow {
        EvalRow { episode, step: 0, reward, cost, corrected }
    }

    #[test]
    fn test_metrics_by_hand() {
        let rows = [row(0, 1.0, 0, false), row(0, 2.0, 0, true), row(1, 0.5, 1, false)];
        let m = TestMetrics::from_rows(&rows);
        assert_eq!(m.acr, 1.75);
        assert_eq!(m.avr, 0.5);
        assert!((m.test_arr - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.mean_episode_length, 1.5);
    }

    proptest! {
        #[test]
        fn rates_stay_in_unit_interval(steps in proptest::collection::vec((0usize..5, -1.0f64..1.0, 0u8..2, any::<bool>()), 1..60)) {
            let mut rows: Vec<EvalRow> = steps.iter().map(|&(e, r, c, k)| row(e, r, c, k)).collect();
            rows.sort_by_key(|r| r.episode);
            let m = TestMetrics::from_rows(&rows);
            prop_assert!((0.0..=1.0).contains(&m.avr));
            prop_assert!((0.0..=1.0).contains(&m.test_arr));
            let train: Vec<TraceRow> = steps
                .iter()
                .enumerate()
                .map(|(i, &(e, r, c, k))| TraceRow { step: i, episode: e, reward: r, cost: c, corrected: k, epsilon: None, seed: 0 })
                .collect();
            let t = TrainMetrics::from_rows(&train);
            prop_assert!((0.0..=1.0).contains(&t.arr));
            prop_assert!(t.tv as usize <= train.len());
        }
    }
}
