//! Artifact writers. Every file is written to a temporary sibling and renamed into place.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use prefillsim::metrics::{BlockingStats, RequestOutcome};
use prefillsim::workload::PRODUCTION_CLASS_NAMES;
use prefillsim::{blocking_stats, slo_attainment, RunResult};
use serde::Serialize;
use tempfile::NamedTempFile;

pub const RUN_CSV_HEADER: [&str; 7] = ["id", "task", "arrival_s", "tokens", "slo_s", "ttft_s", "met"];
pub const SWEEP_CSV_HEADER: [&str; 11] = [
    "sweep_var",
    "value",
    "attainment",
    "attainment_text",
    "attainment_image",
    "attainment_search",
    "attainment_file",
    "rounds",
    "preemptions",
    "mean_block_s",
    "max_block_s",
];

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        fill(&mut w)?;
        w.flush()?;
    }
    Ok(buf)
}

pub fn run_csv(outcomes: &[RequestOutcome]) -> Result<Vec<u8>> {
    csv_bytes(&RUN_CSV_HEADER, |w| {
        for o in outcomes {
            w.write_record([
                o.id.to_string(),
                o.task.clone(),
                o.arrival.to_string(),
                o.tokens.to_string(),
                o.slo.to_string(),
                o.ttft.to_string(),
                o.met.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// One sweep CSV row. Per-class attainment is empty when the class has no requests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep_var: String,
    pub value: f64,
    pub attainment: f64,
    pub attainment_text: Option<f64>,
    pub attainment_image: Option<f64>,
    pub attainment_search: Option<f64>,
    pub attainment_file: Option<f64>,
    pub rounds: u64,
    pub preemptions: u64,
    pub mean_block_s: f64,
    pub max_block_s: f64,
}

impl SweepRow {
    pub fn from_run(var: &str, value: f64, res: &RunResult) -> Self {
        let class = |name| slo_attainment(&res.outcomes, Some(name)).ok();
        let b = blocking_stats(&res.blocking_log);
        Self {
            sweep_var: var.to_string(),
            value,
            attainment: res.attainment().unwrap_or(0.0),
            attainment_text: class(PRODUCTION_CLASS_NAMES[0]),
            attainment_image: class(PRODUCTION_CLASS_NAMES[1]),
            attainment_search: class(PRODUCTION_CLASS_NAMES[2]),
            attainment_file: class(PRODUCTION_CLASS_NAMES[3]),
            rounds: res.rounds,
            preemptions: res.commands.preempt,
            mean_block_s: b.mean.unwrap_or(0.0),
            max_block_s: b.max.unwrap_or(0.0),
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    csv_bytes(&SWEEP_CSV_HEADER, |w| {
        for r in rows {
            w.write_record([
                r.sweep_var.clone(),
                r.value.to_string(),
                r.attainment.to_string(),
                opt(r.attainment_text),
                opt(r.attainment_image),
                opt(r.attainment_search),
                opt(r.attainment_file),
                r.rounds.to_string(),
                r.preemptions.to_string(),
                r.mean_block_s.to_string(),
                r.max_block_s.to_string(),
            ])?;
        }
        Ok(())
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockingSummary {
    pub count: usize,
    pub mean_s: Option<f64>,
    pub p99_s: Option<f64>,
    pub max_s: Option<f64>,
}

impl From<BlockingStats> for BlockingSummary {
    fn from(b: BlockingStats) -> Self {
        Self {
            count: b.count,
            mean_s: b.mean,
            p99_s: b.p99,
            max_s: b.max,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassAttainment {
    pub task: String,
    pub requests: usize,
    pub attainment: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub policy: String,
    pub granularity: String,
    pub requests: usize,
    pub attainment: f64,
    pub attainment_by_class: Vec<ClassAttainment>,
    pub rounds: u64,
    pub submits: u64,
    pub preemptions: u64,
    pub resumes: u64,
    pub blocking: BlockingSummary,
}

impl RunSummary {
    pub fn new(provenance: Provenance, policy: &str, granularity: &str, res: &RunResult) -> Self {
        let mut classes: Vec<String> = res.outcomes.iter().map(|o| o.task.clone()).collect();
        classes.sort();
        classes.dedup();
        let attainment_by_class = classes
            .into_iter()
            .map(|task| ClassAttainment {
                requests: res.outcomes.iter().filter(|o| o.task == task).count(),
                attainment: slo_attainment(&res.outcomes, Some(&task)).unwrap_or(0.0),
                task,
            })
            .collect();
        Self {
            provenance,
            policy: policy.to_string(),
            granularity: granularity.to_string(),
            requests: res.outcomes.len(),
            attainment: res.attainment().unwrap_or(0.0),
            attainment_by_class,
            rounds: res.rounds,
            submits: res.commands.submit,
            preemptions: res.commands.preempt,
            resumes: res.commands.resume,
            blocking: blocking_stats(&res.blocking_log).into(),
        }
    }
}

/// JSONL event log, one `{"t", "kind", "task", "detail"}` object per line.
pub fn event_log_bytes(res: &RunResult) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for e in res.event_log.iter().flatten() {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_headers_match_contract() {
        let bytes = sweep_csv(&[]).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap().trim_end(),
            "sweep_var,value,attainment,attainment_text,attainment_image,attainment_search,attainment_file,rounds,preemptions,mean_block_s,max_block_s"
        );
        let bytes = run_csv(&[]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap().trim_end(), "id,task,arrival_s,tokens,slo_s,ttft_s,met");
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"first version").unwrap();
        write_atomic(&p, b"2").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"2");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
