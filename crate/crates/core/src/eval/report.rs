use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::{Method, RunOutput, Settings, TaskLog};

use super::metrics::{accuracy_avg, forgetting_avg, PerformanceMatrix};

/// Stored metrics may differ from the recomputed ones by at most this much.
pub const CONSISTENCY_TOL: f64 = 1e-12;

const MATRIX_MARKER: &str = "[matrix]";

/// Noise and score statistics of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSummary {
    pub n_train: usize,
    pub flipped: usize,
    /// Mean final score of clean and of flipped training nodes.
    pub separation: Option<(f64, f64)>,
}

impl From<&TaskLog> for TaskSummary {
    fn from(log: &TaskLog) -> Self {
        TaskSummary {
            n_train: log.n_train,
            flipped: log.flipped,
            separation: log.score_separation(),
        }
    }
}

/// Self-contained text record of one run: a `key = value` header followed by
/// the matrix CSV. Wall times live in a separate timing file so that equal
/// inputs give byte-identical reports.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    pub settings: Settings,
    pub accuracy: f64,
    pub forgetting: Option<f64>,
    pub tasks: Vec<TaskSummary>,
    pub matrix: PerformanceMatrix,
}

impl RunReport {
    pub fn new(method: Method, settings: &Settings, out: &RunOutput) -> Result<Self> {
        Ok(RunReport {
            method: method.label(),
            seed: settings.train.seed,
            settings: settings.clone(),
            accuracy: accuracy_avg(&out.matrix)?,
            forgetting: forgetting_avg(&out.matrix),
            tasks: out.logs.iter().map(TaskSummary::from).collect(),
            matrix: out.matrix.clone(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# run report\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "na".to_string(), |x| format!("{x:?}"));
        writeln!(out, "method = {}", self.method).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        writeln!(out, "tasks = {}", self.tasks.len()).unwrap();
        writeln!(out, "accuracy = {:?}", self.accuracy).unwrap();
        writeln!(out, "forgetting = {}", opt(self.forgetting)).unwrap();
        for (t, s) in self.tasks.iter().enumerate() {
            let t = t + 1;
            writeln!(out, "task.{t}.train = {}", s.n_train).unwrap();
            writeln!(out, "task.{t}.flipped = {}", s.flipped).unwrap();
            writeln!(out, "task.{t}.score_clean = {}", opt(s.separation.map(|p| p.0))).unwrap();
            writeln!(out, "task.{t}.score_noisy = {}", opt(s.separation.map(|p| p.1))).unwrap();
        }
        for line in self.settings.to_text().lines() {
            writeln!(out, "config.{line}").unwrap();
        }
        writeln!(out, "{MATRIX_MARKER}").unwrap();
        out.push_str(&self.matrix.to_csv());
        out
    }

    /// Parses a report and checks that its metrics match its matrix.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let (head, matrix_text) = text
            .split_once(&format!("{MATRIX_MARKER}\n"))
            .ok_or_else(|| Error::Format(format!("{} has no {MATRIX_MARKER} block", origin.display())))?;
        let matrix = PerformanceMatrix::from_csv(matrix_text, origin)?;

        let mut settings = Settings::default();
        let mut method = None;
        let mut seed = None;
        let mut n_tasks = None;
        let mut accuracy = None;
        let mut forgetting = None;
        let mut tasks: Vec<(Option<usize>, Option<usize>, Option<f64>, Option<f64>)> = Vec::new();
        for (i, raw) in head.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::parse(origin, i + 1, msg);
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad("expected key = value".into()))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number {v:?}")));
            let count = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad count {v:?}")));
            let maybe = |v: &str| if v == "na" { Ok(None) } else { num(v).map(Some) };
            if let Some(key) = k.strip_prefix("config.") {
                settings.set(key, v).map_err(|e| bad(e.to_string()))?;
                continue;
            }
            if let Some(rest) = k.strip_prefix("task.") {
                let (idx, field) = rest.split_once('.').ok_or_else(|| bad(format!("bad key {k}")))?;
                let idx = count(idx)?;
                if idx == 0 {
                    return Err(bad("tasks are numbered from 1".into()));
                }
                if tasks.len() < idx {
                    tasks.resize(idx, (None, None, None, None));
                }
                let slot = &mut tasks[idx - 1];
                match field {
                    "train" => slot.0 = Some(count(v)?),
                    "flipped" => slot.1 = Some(count(v)?),
                    "score_clean" => slot.2 = maybe(v)?,
                    "score_noisy" => slot.3 = maybe(v)?,
                    _ => return Err(bad(format!("unknown key {k}"))),
                }
                continue;
            }
            match k {
                "method" => method = Some(v.to_string()),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad(format!("bad seed {v:?}")))?),
                "tasks" => n_tasks = Some(count(v)?),
                "accuracy" => accuracy = Some(num(v)?),
                "forgetting" => forgetting = Some(maybe(v)?),
                _ => return Err(bad(format!("unknown key {k}"))),
            }
        }
        let missing = |k: &str| Error::Format(format!("{} lacks {k}", origin.display()));
        let n_tasks = n_tasks.ok_or_else(|| missing("tasks"))?;
        if tasks.len() != n_tasks || matrix.n_tasks() != n_tasks {
            return Err(Error::Format(format!(
                "{} declares {n_tasks} tasks but has {} task entries and a {}-task matrix",
                origin.display(),
                tasks.len(),
                matrix.n_tasks()
            )));
        }
        let tasks = tasks
            .into_iter()
            .enumerate()
            .map(|(t, (n_train, flipped, clean, noisy))| {
                Ok(TaskSummary {
                    n_train: n_train.ok_or_else(|| missing(&format!("task.{}.train", t + 1)))?,
                    flipped: flipped.ok_or_else(|| missing(&format!("task.{}.flipped", t + 1)))?,
                    separation: clean.zip(noisy),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let report = RunReport {
            method: method.ok_or_else(|| missing("method"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            settings,
            accuracy: accuracy.ok_or_else(|| missing("accuracy"))?,
            forgetting: forgetting.ok_or_else(|| missing("forgetting"))?,
            tasks,
            matrix,
        };
        report.check_consistency()?;
        Ok(report)
    }

    /// Recomputes accuracy and forgetting from the matrix.
    pub fn check_consistency(&self) -> Result<()> {
        let acc = accuracy_avg(&self.matrix)?;
        if (acc - self.accuracy).abs() > CONSISTENCY_TOL {
            return Err(Error::Format(format!(
                "stored accuracy {} but the matrix gives {acc}",
                self.accuracy
            )));
        }
        let fgt = forgetting_avg(&self.matrix);
        let agree = match (fgt, self.forgetting) {
            (None, None) => true,
            (Some(a), Some(b)) => (a - b).abs() <= CONSISTENCY_TOL,
            _ => false,
        };
        if !agree {
            return Err(Error::Format(format!(
                "stored forgetting {:?} but the matrix gives {fgt:?}",
                self.forgetting
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}

/// `task,seconds` lines.
pub fn timing_csv(wall_times: &[f64], first_task: usize) -> String {
    let mut out = String::from("task,seconds\n");
    for (k, s) in wall_times.iter().enumerate() {
        writeln!(out, "{},{s:.6}", first_task + k + 1).unwrap();
    }
    out
}

/// Per-node score audit over every task, keyed by global node id.
pub fn score_dump_csv(logs: &[TaskLog]) -> String {
    let mut out = String::from("node_id,clean_label,observed_label,noisy_flag,raw_score,final_score\n");
    for r in logs.iter().flat_map(|l| &l.scores) {
        writeln!(
            out,
            "{},{},{},{},{:?},{:?}",
            r.node, r.clean_label, r.observed_label, r.noisy as u8, r.raw_score, r.final_score
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::ScoreRecord;

    fn sample() -> RunReport {
        let matrix = PerformanceMatrix::from_rows(vec![vec![0.9], vec![0.6, 0.8]]).unwrap();
        RunReport {
            method: "ufo".into(),
            seed: 7,
            settings: Settings::desk(),
            accuracy: accuracy_avg(&matrix).unwrap(),
            forgetting: forgetting_avg(&matrix),
            tasks: vec![
                TaskSummary {
                    n_train: 10,
                    flipped: 3,
                    separation: Some((1.1, 0.4)),
                },
                TaskSummary {
                    n_train: 12,
                    flipped: 4,
                    separation: None,
                },
            ],
            matrix,
        }
    }

    #[test]
    fn text_round_trip() {
        let r = sample();
        let back = RunReport::parse(&r.to_text(), Path::new("r.txt")).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_text(), r.to_text());
    }

    #[test]
    fn tampered_metrics_are_rejected() {
        let text = sample().to_text().replace("accuracy = 0.7", "accuracy = 0.71");
        let err = RunReport::parse(&text, Path::new("r.txt")).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
        let text = sample().to_text().replace("2,1,0.6", "2,1,0.5");
        assert!(RunReport::parse(&text, Path::new("r.txt")).is_err());
    }

    #[test]
    fn single_task_reports_na_forgetting() {
        let matrix = PerformanceMatrix::from_rows(vec![vec![0.5]]).unwrap();
        let mut r = sample();
        r.tasks.truncate(1);
        r.accuracy = 0.5;
        r.forgetting = None;
        r.matrix = matrix;
        let text = r.to_text();
        assert!(text.contains("forgetting = na\n"));
        assert_eq!(RunReport::parse(&text, Path::new("r.txt")).unwrap(), r);
    }

    #[test]
    fn missing_matrix_block() {
        assert!(RunReport::parse("method = ufo\n", Path::new("r.txt")).is_err());
    }

    #[test]
    fn score_dump_columns() {
        let log = TaskLog {
            task: 0,
            n_train: 1,
            flipped: 1,
            final_loss: 0.0,
            flow_loss: None,
            scores: vec![ScoreRecord {
                node: 42,
                clean_label: 1,
                observed_label: 2,
                noisy: true,
                raw_score: 0.25,
                final_score: 0.5,
            }],
        };
        assert_eq!(
            score_dump_csv(&[log]),
            "node_id,clean_label,observed_label,noisy_flag,raw_score,final_score\n42,1,2,1,0.25,0.5\n"
        );
    }
}
