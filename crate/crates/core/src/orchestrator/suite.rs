use rayon::prelude::*;
use serde::Serialize;

use crate::tasks::TaskSpec;

use super::{run_episode, EpisodeConfig, EpisodeResult, LoopLimits, Mode, OrchestratorError, Verdict};

pub const METRICS_HEADER: &str = "task,mode,seeds,successes,sr_percent";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub task: String,
    pub mode: Mode,
    pub seeds: usize,
    pub successes: usize,
    pub infrastructure_failures: usize,
}

impl MetricsRow {
    /// Success rate over episodes that did not fail for infrastructure reasons.
    pub fn sr_percent(&self) -> Option<f64> {
        let denom = self.seeds - self.infrastructure_failures;
        (denom > 0).then(|| 100.0 * self.successes as f64 / denom as f64)
    }

    fn sr_text(&self) -> String {
        self.sr_percent().map(|v| format!("{v:.1}")).unwrap_or_else(|| "n/a".into())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.task, r.mode.name(), r.seeds, r.successes, r.sr_text()));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<6} {:<12} {:>5} {:>9} {:>6} {:>7}\n", "task", "mode", "seeds", "successes", "infra", "SR%");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<6} {:<12} {:>5} {:>9} {:>6} {:>7}\n",
                r.task,
                r.mode.name(),
                r.seeds,
                r.successes,
                r.infrastructure_failures,
                r.sr_text()
            ));
        }
        out
    }

    pub fn row(&self, task: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.task == task)
    }

    pub fn infrastructure_failures(&self) -> usize {
        self.rows.iter().map(|r| r.infrastructure_failures).sum()
    }
}

pub struct SuiteResult {
    /// Episodes in task order, then seed order.
    pub episodes: Vec<EpisodeResult>,
    pub metrics: MetricsTable,
}

/// Runs every (task, seed) episode on up to `jobs` threads. Output order does
/// not depend on scheduling.
pub fn run_suite(
    tasks: &[&TaskSpec],
    seeds: &[u64],
    mode: Mode,
    cfg: &EpisodeConfig,
    limits: &LoopLimits,
    jobs: usize,
) -> Result<SuiteResult, OrchestratorError> {
    limits.validate()?;
    let work: Vec<(&TaskSpec, u64)> = tasks.iter().flat_map(|t| seeds.iter().map(move |s| (*t, *s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| OrchestratorError::Config(e.to_string()))?;
    let episodes: Vec<EpisodeResult> =
        pool.install(|| work.par_iter().map(|(t, s)| run_episode(t, *s, mode, cfg, limits)).collect::<Result<_, _>>())?;
    let rows = tasks
        .iter()
        .map(|t| {
            let mine = episodes.iter().filter(|e| e.task == t.id);
            let (mut successes, mut infra, mut n) = (0, 0, 0);
            for e in mine {
                n += 1;
                match e.verdict {
                    Verdict::Success => successes += 1,
                    Verdict::InfrastructureFailure => infra += 1,
                    Verdict::Failure => {}
                }
            }
            MetricsRow { task: t.id.to_string(), mode, seeds: n, successes, infrastructure_failures: infra }
        })
        .filter(|r| r.seeds > 0)
        .collect();
    Ok(SuiteResult { episodes, metrics: MetricsTable { rows } })
}
