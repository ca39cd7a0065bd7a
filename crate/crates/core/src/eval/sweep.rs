#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;
use crate::graph::{generate_sbm, Graph, SbmConfig};
use crate::tensor::Rng;
use crate::trainer::{run_method, Method, RunOptions, RunOutput, Settings, Variant};

use super::report::RunReport;

/// How independent runs are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    /// One run per worker thread. Runs sequentially without the `parallel` feature.
    Parallel,
    Sequential,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Applies `f` to every item; the output order follows the input order.
pub fn map_jobs<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Where each seed's graph comes from.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// A fresh synthetic graph per seed.
    Synthetic(SbmConfig),
    /// The same graph for every seed.
    Fixed(Graph),
}

impl DataSource {
    pub fn graph_for(&self, seed: u64) -> Result<Graph> {
        match self {
            DataSource::Synthetic(cfg) => generate_sbm(cfg, &mut Rng::new(seed).fork("data")),
            DataSource::Fixed(g) => Ok(g.clone()),
        }
    }
}

/// One finished run with its report.
#[derive(Clone, Debug)]
pub struct SweepRun {
    pub report: RunReport,
    pub output: RunOutput,
}

pub fn run_one(settings: &Settings, data: &DataSource, method: Method, seed: u64) -> Result<SweepRun> {
    let mut s = settings.clone();
    s.train.seed = seed;
    let graph = data.graph_for(seed)?;
    let output = run_method(&graph, &s.train, method, RunOptions::default())?;
    Ok(SweepRun {
        report: RunReport::new(method, &s, &output)?,
        output,
    })
}

/// Runs `method` once per seed.
pub fn sweep_seeds(
    settings: &Settings,
    data: &DataSource,
    method: Method,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<SweepRun>> {
    map_jobs(seeds, exec, |&seed| run_one(settings, data, method, seed))
        .into_iter()
        .collect()
}

/// All seeds of one ablation variant.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub runs: Vec<SweepRun>,
}

impl AblationRow {
    pub fn median_accuracy(&self) -> f64 {
        median(self.runs.iter().map(|r| r.report.accuracy).collect()).unwrap_or(f64::NAN)
    }

    pub fn median_forgetting(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.runs.iter().map(|r| r.report.forgetting).collect();
        v.and_then(median)
    }
}

/// Every variant of the ablation chain over the same seeds. Variants share
/// data, noise and initialisation streams and differ only in components.
pub fn ablate(settings: &Settings, data: &DataSource, seeds: &[u64], exec: Execution) -> Result<Vec<AblationRow>> {
    let jobs: Vec<(Variant, u64)> = Variant::CHAIN
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let mut done = map_jobs(&jobs, exec, |&(v, seed)| {
        run_one(settings, data, Method::Continual(v.components()), seed)
    })
    .into_iter();
    Variant::CHAIN
        .iter()
        .map(|&variant| {
            let runs = done.by_ref().take(seeds.len()).collect::<Result<Vec<_>>>()?;
            Ok(AblationRow { variant, runs })
        })
        .collect()
}

/// Fixed-width table, one line per variant in chain order, percentages.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<12} {:>9} {:>11}  per-seed accuracy\n", "variant", "accuracy", "forgetting");
    for row in rows {
        let per_seed: Vec<String> = row
            .runs
            .iter()
            .map(|r| format!("{}:{:.2}", r.report.seed, 100.0 * r.report.accuracy))
            .collect();
        let fgt = row
            .median_forgetting()
            .map_or_else(|| "na".to_string(), |f| format!("{:+.2}", 100.0 * f));
        out += &format!(
            "{:<12} {:>9.2} {:>11}  {}\n",
            row.variant.label(),
            100.0 * row.median_accuracy(),
            fgt,
            per_seed.join(" ")
        );
    }
    out
}

/// Mean of the two middle values for even lengths; `None` when empty.
pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }

    #[test]
    fn execution_modes_agree() {
        let items: Vec<u64> = (0..16).collect();
        let f = |&i: &u64| Rng::new(i).uniform();
        let a = map_jobs(&items, Execution::Parallel, f);
        let b = map_jobs(&items, Execution::Sequential, f);
        assert_eq!(a, b);
    }
}
