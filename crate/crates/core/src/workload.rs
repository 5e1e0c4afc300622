//! Request and trace data model, JSONL trace IO, and synthetic trace generation.
//!
//! Trace files hold one request per line:
//!
//! ```text
//! {"id": 0, "task": "Text", "arrival_s": 0.0, "num_tokens": 590, "ttft_slo_s": 0.25}
//! ```
//!
//! Unknown keys are ignored on load. Deadlines are never stored; they are always
//! recomputed as `arrival_s + ttft_slo_s`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type RequestId = u64;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate request id {id}")]
    DuplicateId { line: usize, id: RequestId },
    #[error("line {line}: field `{field}` must be {requirement}, got {value}")]
    InvalidField {
        line: usize,
        field: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("invalid task class set: {0}")]
    InvalidClasses(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One task category of the workload mix: length statistics, share of traffic and TTFT target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskClass {
    pub name: String,
    pub mean_len: f64,
    pub std_len: f64,
    pub p99_len: f64,
    pub mix_ratio: f64,
    pub ttft_slo: f64,
}

impl TaskClass {
    pub fn new(name: &str, mean_len: f64, std_len: f64, p99_len: f64, mix_ratio: f64, ttft_slo: f64) -> Self {
        Self {
            name: name.to_string(),
            mean_len,
            std_len,
            p99_len,
            mix_ratio,
            ttft_slo,
        }
    }

    fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |what: &str| Err(WorkloadError::InvalidClasses(format!("class {}: {what}", self.name)));
        if !positive(self.mean_len) {
            return bad("mean_len must be > 0");
        }
        if self.std_len.is_nan() || self.std_len < 0.0 {
            return bad("std_len must be >= 0");
        }
        if self.p99_len.is_nan() || self.p99_len < self.mean_len {
            return bad("p99_len must be >= mean_len");
        }
        if !positive(self.ttft_slo) {
            return bad("ttft_slo must be > 0");
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad("mix_ratio must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Model whose TTFT targets are used for the built-in task mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SloProfile {
    #[serde(rename = "llama3-8b")]
    Llama3_8b,
    #[serde(rename = "qwen2.5-14b")]
    Qwen25_14b,
    #[serde(rename = "llama3-70b")]
    Llama3_70b,
}

impl SloProfile {
    /// TTFT targets in seconds for (Text, Image, Search, File).
    pub fn slos(self) -> [f64; 4] {
        match self {
            SloProfile::Llama3_8b => [0.25, 0.5, 4.0, 6.0],
            SloProfile::Qwen25_14b => [0.4, 0.8, 6.5, 9.0],
            SloProfile::Llama3_70b => [1.0, 2.0, 15.0, 18.0],
        }
    }
}

impl std::str::FromStr for SloProfile {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "llama3-8b" => Ok(SloProfile::Llama3_8b),
            "qwen2.5-14b" => Ok(SloProfile::Qwen25_14b),
            "llama3-70b" => Ok(SloProfile::Llama3_70b),
            other => Err(WorkloadError::InvalidArgument(format!("unknown SLO profile `{other}`"))),
        }
    }
}

/// The four-task production mix (chat, image understanding, web search, summarization).
pub fn production_mix(profile: SloProfile) -> Vec<TaskClass> {
    let [text, image, search, file] = profile.slos();
    vec![
        TaskClass::new("Text", 590.0, 652.0, 3040.0, 0.68, text),
        TaskClass::new("Image", 532.0, 510.0, 2764.0, 0.08, image),
        TaskClass::new("Search", 5976.0, 3456.0, 16635.0, 0.20, search),
        TaskClass::new("File", 6833.0, 5186.0, 22390.0, 0.04, file),
    ]
}

/// Class names used by the per-class attainment columns.
pub const PRODUCTION_CLASS_NAMES: [&str; 4] = ["Text", "Image", "Search", "File"];

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: RequestId,
    pub task: String,
    pub arrival_time: f64,
    pub num_tokens: u64,
    pub ttft_slo: f64,
    pub deadline: f64,
}

impl Request {
    pub fn new(id: RequestId, task: &str, arrival_time: f64, num_tokens: u64, ttft_slo: f64) -> Self {
        Self {
            id,
            task: task.to_string(),
            arrival_time,
            num_tokens,
            ttft_slo,
            deadline: arrival_time + ttft_slo,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceLine {
    id: RequestId,
    task: String,
    arrival_s: f64,
    num_tokens: i64,
    ttft_slo_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub requests: Vec<Request>,
    pub origin: String,
}

impl Trace {
    /// Builds a trace from arbitrary requests, sorting by arrival (stable, then by id).
    pub fn from_requests(mut requests: Vec<Request>, origin: impl Into<String>) -> Self {
        sort_requests(&mut requests);
        Self {
            requests,
            origin: origin.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Mean arrival rate over the span of the trace; `None` for fewer than two requests.
    pub fn empirical_rate(&self) -> Option<f64> {
        let first = self.requests.first()?.arrival_time;
        let last = self.requests.last()?.arrival_time;
        if self.requests.len() < 2 || last <= first {
            return None;
        }
        Some((self.requests.len() - 1) as f64 / (last - first))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.requests {
            let line = TraceLine {
                id: r.id,
                task: r.task.clone(),
                arrival_s: r.arrival_time,
                num_tokens: r.num_tokens as i64,
                ttft_slo_s: r.ttft_slo,
            };
            // TraceLine only holds plain scalars and strings.
            let _ = writeln!(out, "{}", serde_json::to_string(&line).expect("trace line serializes"));
        }
        out
    }

    pub fn parse_jsonl(text: &str, origin: impl Into<String>) -> Result<Self, WorkloadError> {
        let mut requests = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(raw).map_err(|e| WorkloadError::Parse {
                line,
                message: e.to_string(),
            })?;
            if parsed.num_tokens < 1 {
                return Err(WorkloadError::InvalidField {
                    line,
                    field: "num_tokens",
                    requirement: ">= 1",
                    value: parsed.num_tokens as f64,
                });
            }
            if !parsed.arrival_s.is_finite() || parsed.arrival_s < 0.0 {
                return Err(WorkloadError::InvalidField {
                    line,
                    field: "arrival_s",
                    requirement: "finite and >= 0",
                    value: parsed.arrival_s,
                });
            }
            if !positive(parsed.ttft_slo_s) {
                return Err(WorkloadError::InvalidField {
                    line,
                    field: "ttft_slo_s",
                    requirement: "finite and > 0",
                    value: parsed.ttft_slo_s,
                });
            }
            if !seen.insert(parsed.id) {
                return Err(WorkloadError::DuplicateId { line, id: parsed.id });
            }
            requests.push(Request::new(
                parsed.id,
                &parsed.task,
                parsed.arrival_s,
                parsed.num_tokens as u64,
                parsed.ttft_slo_s,
            ));
        }
        Ok(Trace::from_requests(requests, origin))
    }
}

fn sort_requests(requests: &mut [Request]) {
    requests.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time).then(a.id.cmp(&b.id)));
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace, WorkloadError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Trace::parse_jsonl(&text, path.display().to_string())
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), WorkloadError> {
    let path = path.as_ref();
    let mut sorted = trace.clone();
    sort_requests(&mut sorted.requests);
    fs::write(path, sorted.to_jsonl()).map_err(|source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Lognormal `(mu, sigma)` whose mean and standard deviation match the given moments.
fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

pub fn lognormal_params(mean: f64, std: f64) -> (f64, f64) {
    let sigma2 = (1.0 + (std * std) / (mean * mean)).ln();
    (mean.ln() - sigma2 / 2.0, sigma2.sqrt())
}

/// Synthesizes a Poisson-arrival trace over `[0, duration)` drawing classes by mix ratio
/// and lengths from a moment-matched lognormal clipped to `[1, 1.5 * p99]`.
///
/// Arrival times are shifted so that the first request arrives at `t = 0`.
pub fn generate_trace(classes: &[TaskClass], rate: f64, duration: f64, seed: u64) -> Result<Trace, WorkloadError> {
    if classes.is_empty() {
        return Err(WorkloadError::InvalidClasses("empty class set".into()));
    }
    for c in classes {
        c.validate()?;
    }
    let total: f64 = classes.iter().map(|c| c.mix_ratio).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(WorkloadError::InvalidClasses(format!("mix ratios sum to {total}, expected 1")));
    }
    if !positive(rate) {
        return Err(WorkloadError::InvalidArgument(format!("rate must be > 0, got {rate}")));
    }
    if !positive(duration) {
        return Err(WorkloadError::InvalidArgument(format!("duration must be > 0, got {duration}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = Exp::new(rate).map_err(|e| WorkloadError::InvalidArgument(e.to_string()))?;
    let picker = WeightedIndex::new(classes.iter().map(|c| c.mix_ratio))
        .map_err(|e| WorkloadError::InvalidClasses(e.to_string()))?;
    let lengths: Vec<LogNormal<f64>> = classes
        .iter()
        .map(|c| {
            let (mu, sigma) = lognormal_params(c.mean_len, c.std_len);
            LogNormal::new(mu, sigma).map_err(|e| WorkloadError::InvalidClasses(e.to_string()))
        })
        .collect::<Result<_, _>>()?;

    let mut requests = Vec::new();
    let mut t = gaps.sample(&mut rng);
    let mut origin = None;
    while t < duration {
        let class_idx = picker.sample(&mut rng);
        let class = &classes[class_idx];
        let raw = lengths[class_idx].sample(&mut rng);
        let tokens = raw.round().clamp(1.0, (class.p99_len * 1.5).floor().max(1.0)) as u64;
        let first = *origin.get_or_insert(t);
        requests.push(Request::new(requests.len() as RequestId, &class.name, t - first, tokens, class.ttft_slo));
        t += gaps.sample(&mut rng);
    }

    Ok(Trace {
        requests,
        origin: format!("generated rate={rate} duration={duration} seed={seed}"),
    })
}

/// Compresses inter-arrival gaps by `factor`, raising the offered rate by the same factor.
pub fn scale_rate(trace: &Trace, factor: f64) -> Result<Trace, WorkloadError> {
    if !positive(factor) {
        return Err(WorkloadError::InvalidArgument(format!("rate factor must be > 0, got {factor}")));
    }
    let requests = trace
        .requests
        .iter()
        .map(|r| Request::new(r.id, &r.task, r.arrival_time / factor, r.num_tokens, r.ttft_slo))
        .collect();
    Ok(Trace {
        requests,
        origin: trace.origin.clone(),
    })
}

/// Multiplies every TTFT target by `factor`; arrivals are untouched.
pub fn scale_slo(trace: &Trace, factor: f64) -> Result<Trace, WorkloadError> {
    if !positive(factor) {
        return Err(WorkloadError::InvalidArgument(format!("SLO factor must be > 0, got {factor}")));
    }
    let requests = trace
        .requests
        .iter()
        .map(|r| Request::new(r.id, &r.task, r.arrival_time, r.num_tokens, r.ttft_slo * factor))
        .collect();
    Ok(Trace {
        requests,
        origin: trace.origin.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Trace {
        Trace::from_requests(
            vec![
                Request::new(0, "Text", 0.0, 10, 1.0),
                Request::new(1, "Text", 2.0, 10, 1.0),
                Request::new(2, "File", 4.0, 10, 6.0),
            ],
            "t",
        )
    }

    #[test]
    fn loads_three_lines_in_order() {
        let text = r#"{"id": 1, "task": "Text", "arrival_s": 0.5, "num_tokens": 12, "ttft_slo_s": 0.25}
{"id": 2, "task": "File", "arrival_s": 1.0, "num_tokens": 9000, "ttft_slo_s": 6.0, "extra": true}
{"id": 3, "task": "Image", "arrival_s": 1.5, "num_tokens": 500, "ttft_slo_s": 0.5}
"#;
        let t = Trace::parse_jsonl(text, "x").unwrap();
        assert_eq!(t.requests.iter().map(|r| r.id).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!((t.requests[1].deadline - 7.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_order_lines_are_sorted() {
        let text = r#"{"id": 7, "task": "Text", "arrival_s": 3.0, "num_tokens": 1, "ttft_slo_s": 1}
{"id": 8, "task": "Text", "arrival_s": 1.0, "num_tokens": 1, "ttft_slo_s": 1}
{"id": 9, "task": "Text", "arrival_s": 2.0, "num_tokens": 1, "ttft_slo_s": 1}"#;
        let t = Trace::parse_jsonl(text, "x").unwrap();
        assert_eq!(t.requests.iter().map(|r| r.id).collect::<Vec<_>>(), vec![8, 9, 7]);
    }

    #[test]
    fn zero_tokens_names_the_line() {
        let text = "{\"id\": 1, \"task\": \"Text\", \"arrival_s\": 0, \"num_tokens\": 5, \"ttft_slo_s\": 1}\n\
                    {\"id\": 2, \"task\": \"Text\", \"arrival_s\": 0, \"num_tokens\": 0, \"ttft_slo_s\": 1}\n";
        let err = Trace::parse_jsonl(text, "x").unwrap_err();
        assert!(matches!(err, WorkloadError::InvalidField { line: 2, field: "num_tokens", .. }), "{err}");
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn rejects_duplicates_negatives_and_garbage() {
        let dup = "{\"id\": 1, \"task\": \"T\", \"arrival_s\": 0, \"num_tokens\": 5, \"ttft_slo_s\": 1}\n\
                   {\"id\": 1, \"task\": \"T\", \"arrival_s\": 1, \"num_tokens\": 5, \"ttft_slo_s\": 1}";
        assert!(matches!(Trace::parse_jsonl(dup, "x"), Err(WorkloadError::DuplicateId { line: 2, id: 1 })));
        let neg = "{\"id\": 1, \"task\": \"T\", \"arrival_s\": -1, \"num_tokens\": 5, \"ttft_slo_s\": 1}";
        assert!(matches!(Trace::parse_jsonl(neg, "x"), Err(WorkloadError::InvalidField { field: "arrival_s", .. })));
        let garbage = "{\"id\": 1}\nnot json";
        assert!(matches!(Trace::parse_jsonl(garbage, "x"), Err(WorkloadError::Parse { line: 1, .. })));
    }

    #[test]
    fn scale_rate_arithmetic() {
        let t = tiny();
        assert_eq!(scale_rate(&t, 1.0).unwrap(), t);
        let fast = scale_rate(&t, 2.0).unwrap();
        let arrivals: Vec<f64> = fast.requests.iter().map(|r| r.arrival_time).collect();
        assert_eq!(arrivals, vec![0.0, 1.0, 2.0]);
        assert_eq!(fast.requests[1].deadline, 2.0);
        let slow = scale_rate(&t, 0.5).unwrap();
        assert_eq!(slow.requests[2].arrival_time - slow.requests[1].arrival_time, 4.0);
        assert!(scale_rate(&t, 0.0).is_err());
        assert!(scale_rate(&t, -1.0).is_err());
    }

    #[test]
    fn scale_slo_arithmetic() {
        let t = Trace::from_requests(vec![Request::new(0, "Text", 1.0, 10, 0.25)], "x");
        assert_eq!(scale_slo(&t, 1.0).unwrap(), t);
        let s = scale_slo(&t, 2.0).unwrap();
        assert_eq!(s.requests[0].ttft_slo, 0.5);
        assert_eq!(s.requests[0].deadline, 1.5);
        assert_eq!(s.requests[0].arrival_time, 1.0);
        assert!(scale_slo(&t, 0.0).is_err());
    }

    #[test]
    fn generator_is_deterministic_and_handles_tiny_windows() {
        let classes = production_mix(SloProfile::Llama3_8b);
        let a = generate_trace(&classes, 2.0, 50.0, 7).unwrap();
        let b = generate_trace(&classes, 2.0, 50.0, 7).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = generate_trace(&classes, 2.0, 50.0, 8).unwrap();
        assert_ne!(a.to_jsonl(), c.to_jsonl());
        assert_eq!(a.requests[0].arrival_time, 0.0);

        let tiny = generate_trace(&classes, 2.0, 1e-9, 42).unwrap();
        assert!(tiny.len() <= 1);
    }

    #[test]
    fn generator_rejects_bad_class_sets() {
        assert!(generate_trace(&[], 1.0, 1.0, 0).is_err());
        let mut classes = production_mix(SloProfile::Llama3_8b);
        classes[0].mix_ratio = 0.5;
        assert!(matches!(generate_trace(&classes, 1.0, 1.0, 0), Err(WorkloadError::InvalidClasses(_))));
        let mut classes = production_mix(SloProfile::Llama3_8b);
        classes[2].p99_len = 10.0;
        assert!(generate_trace(&classes, 1.0, 1.0, 0).is_err());
        let classes = production_mix(SloProfile::Llama3_8b);
        assert!(generate_trace(&classes, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn profile_slos_scale_linearly() {
        let t = Trace::from_requests(
            vec![Request::new(0, "Text", 0.0, 10, SloProfile::Llama3_8b.slos()[0])],
            "x",
        );
        assert_eq!(scale_slo(&t, 2.0).unwrap().requests[0].ttft_slo, 0.5);
        assert_eq!("Qwen2.5-14B".parse::<SloProfile>().unwrap(), SloProfile::Qwen25_14b);
    }
}
