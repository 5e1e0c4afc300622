//! Operator-level prefill cost model.
//!
//! A prefill job (one or more batched requests, optionally chunked) expands into a flat
//! [`OperatorTimeline`]: chunks outermost, then layers, then the per-layer operator sequence.
//! Preemption boundaries are derived from where the layer or chunk index changes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostModelError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed cost model: {0}")]
    Parse(String),
    #[error("invalid cost parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    QkvProj,
    Attn,
    OProj,
    GateUpProj,
    DownProj,
    Gate,
    Experts,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 7] = [
        OperatorKind::QkvProj,
        OperatorKind::Attn,
        OperatorKind::OProj,
        OperatorKind::GateUpProj,
        OperatorKind::DownProj,
        OperatorKind::Gate,
        OperatorKind::Experts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::QkvProj => "qkv_proj",
            OperatorKind::Attn => "attn",
            OperatorKind::OProj => "o_proj",
            OperatorKind::GateUpProj => "gate_up_proj",
            OperatorKind::DownProj => "down_proj",
            OperatorKind::Gate => "gate",
            OperatorKind::Experts => "experts",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Dense,
    Moe,
}

impl Architecture {
    pub fn layer_operators(self) -> &'static [OperatorKind] {
        const DENSE: [OperatorKind; 5] = [
            OperatorKind::QkvProj,
            OperatorKind::Attn,
            OperatorKind::OProj,
            OperatorKind::GateUpProj,
            OperatorKind::DownProj,
        ];
        const MOE: [OperatorKind; 5] = [
            OperatorKind::QkvProj,
            OperatorKind::Attn,
            OperatorKind::OProj,
            OperatorKind::Gate,
            OperatorKind::Experts,
        ];
        match self {
            Architecture::Dense => &DENSE,
            Architecture::Moe => &MOE,
        }
    }
}

/// Per-operator coefficient table. Kinds missing from a calibration file read as zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PerKind(pub BTreeMap<OperatorKind, f64>);

impl PerKind {
    pub fn get(&self, kind: OperatorKind) -> f64 {
        self.0.get(&kind).copied().unwrap_or(0.0)
    }

    pub fn uniform(value: f64) -> Self {
        PerKind(OperatorKind::ALL.iter().map(|&k| (k, value)).collect())
    }

    pub fn set(&mut self, kind: OperatorKind, value: f64) {
        self.0.insert(kind, value);
    }
}

/// Cost coefficients, all in seconds (per token, per token², or fixed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub num_layers: u32,
    #[serde(default)]
    pub architecture: Architecture,
    pub c_lin: PerKind,
    pub c_attn: f64,
    pub c_fix: PerKind,
    pub c_chunk: f64,
    pub c_check: f64,
    pub tp_degree: u32,
    pub tp_comm_overhead: f64,
}

impl Default for CostParams {
    /// A 32-layer dense model: a 32K-token prefill takes about 3 s with attention
    /// at roughly half of each layer.
    fn default() -> Self {
        let mut c_lin = PerKind::default();
        c_lin.set(OperatorKind::QkvProj, 2.8e-7);
        c_lin.set(OperatorKind::Attn, 0.0);
        c_lin.set(OperatorKind::OProj, 2.1e-7);
        c_lin.set(OperatorKind::GateUpProj, 5.6e-7);
        c_lin.set(OperatorKind::DownProj, 3.5e-7);
        c_lin.set(OperatorKind::Gate, 2.0e-8);
        c_lin.set(OperatorKind::Experts, 9.0e-7);
        Self {
            num_layers: 32,
            architecture: Architecture::Dense,
            c_lin,
            c_attn: 4.4e-11,
            c_fix: PerKind::uniform(3.0e-4),
            c_chunk: 2.0e-3,
            c_check: 1.0e-6,
            tp_degree: 1,
            tp_comm_overhead: 0.0,
        }
    }
}

impl CostParams {
    /// Every coefficient zero, one layer, no TP.
    pub fn zero() -> Self {
        Self {
            num_layers: 1,
            architecture: Architecture::Dense,
            c_lin: PerKind::uniform(0.0),
            c_attn: 0.0,
            c_fix: PerKind::uniform(0.0),
            c_chunk: 0.0,
            c_check: 0.0,
            tp_degree: 1,
            tp_comm_overhead: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), CostModelError> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CostModelError::Invalid(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        if self.num_layers < 1 {
            return Err(CostModelError::Invalid("num_layers must be >= 1".into()));
        }
        if self.tp_degree < 1 {
            return Err(CostModelError::Invalid("tp_degree must be >= 1".into()));
        }
        for kind in OperatorKind::ALL {
            nonneg(&format!("c_lin.{}", kind.as_str()), self.c_lin.get(kind))?;
            nonneg(&format!("c_fix.{}", kind.as_str()), self.c_fix.get(kind))?;
        }
        nonneg("c_attn", self.c_attn)?;
        nonneg("c_chunk", self.c_chunk)?;
        nonneg("c_check", self.c_check)?;
        nonneg("tp_comm_overhead", self.tp_comm_overhead)
    }

    pub fn from_json(text: &str) -> Result<Self, CostModelError> {
        let params: CostParams = serde_json::from_str(text).map_err(|e| CostModelError::Parse(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CostModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CostModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn tp_scale(&self, seconds: f64) -> f64 {
        seconds / self.tp_degree as f64 * (1.0 + self.tp_comm_overhead)
    }

    /// Tokens at which per-layer linear work equals the per-layer fixed overhead.
    /// Below it a batch is launch/under-utilization bound.
    pub fn saturation_knee_tokens(&self) -> f64 {
        let ops = self.architecture.layer_operators();
        let fix: f64 = ops.iter().map(|&k| self.c_fix.get(k)).sum();
        let lin: f64 = ops.iter().map(|&k| self.c_lin.get(k)).sum();
        if lin > 0.0 {
            fix / lin
        } else {
            f64::INFINITY
        }
    }
}

/// Duration of one operator over `new_tokens` fresh tokens that attend to `prefix_tokens`
/// already-processed tokens of the same sequence.
pub fn operator_duration(kind: OperatorKind, new_tokens: u64, prefix_tokens: u64, p: &CostParams) -> f64 {
    let new = new_tokens as f64;
    let mut base = p.c_fix.get(kind) + p.c_lin.get(kind) * new;
    if kind == OperatorKind::Attn {
        base += p.c_attn * new * (prefix_tokens as f64 + new);
    }
    p.tp_scale(base)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub layer: u32,
    pub chunk: u32,
    pub kind: OperatorKind,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorTimeline {
    pub entries: Vec<TimelineEntry>,
    pub total_duration: f64,
}

impl OperatorTimeline {
    pub fn from_entries(entries: Vec<TimelineEntry>) -> Self {
        let total_duration = entries.iter().map(|e| e.duration).sum();
        Self { entries, total_duration }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_chunks(&self) -> u32 {
        self.entries.last().map_or(0, |e| e.chunk + 1)
    }

    /// True when the entry at `idx` is the last of its layer (the next entry starts a new
    /// layer or chunk, or there is no next entry).
    pub fn ends_layer(&self, idx: usize) -> bool {
        match self.entries.get(idx + 1) {
            None => true,
            Some(next) => {
                let cur = &self.entries[idx];
                next.layer != cur.layer || next.chunk != cur.chunk
            }
        }
    }

    pub fn ends_chunk(&self, idx: usize) -> bool {
        match self.entries.get(idx + 1) {
            None => true,
            Some(next) => next.chunk != self.entries[idx].chunk,
        }
    }

    /// Summed duration of each chunk, in chunk order.
    pub fn chunk_durations(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_chunks() as usize];
        for e in &self.entries {
            out[e.chunk as usize] += e.duration;
        }
        out
    }

    pub fn max_entry_duration(&self) -> f64 {
        self.entries.iter().map(|e| e.duration).fold(0.0, f64::max)
    }
}

/// Per-request token shares of one chunk: `(new_tokens, prefix_tokens)` for every request
/// that has tokens in the chunk.
fn chunk_shares(per_request_tokens: &[u64], chunk_size: Option<u64>) -> Vec<Vec<(u64, u64)>> {
    let total: u64 = per_request_tokens.iter().sum();
    let Some(size) = chunk_size.filter(|&c| c < total) else {
        return vec![per_request_tokens.iter().map(|&n| (n, 0)).collect()];
    };
    let num_chunks = total.div_ceil(size);
    let mut chunks = Vec::with_capacity(num_chunks as usize);
    // Requests are laid out back to back; each chunk is a window over that token stream.
    let mut starts = Vec::with_capacity(per_request_tokens.len());
    let mut acc = 0u64;
    for &n in per_request_tokens {
        starts.push(acc);
        acc += n;
    }
    for c in 0..num_chunks {
        let lo = c * size;
        let hi = (lo + size).min(total);
        let mut shares = Vec::new();
        for (&start, &n) in starts.iter().zip(per_request_tokens) {
            let end = start + n;
            let s = start.max(lo);
            let e = end.min(hi);
            if s < e {
                shares.push((e - s, s - start));
            }
        }
        chunks.push(shares);
    }
    chunks
}

/// Expands a batch into its operator timeline. Attention is per-sequence causal, so the
/// quadratic term never crosses request boundaries; linear terms see the whole chunk.
pub fn build_timeline(per_request_tokens: &[u64], chunk_size: Option<u64>, p: &CostParams) -> OperatorTimeline {
    assert!(!per_request_tokens.is_empty(), "a timeline needs at least one request");
    assert!(per_request_tokens.iter().all(|&n| n >= 1), "every request needs at least one token");
    assert!(chunk_size.is_none_or(|c| c >= 1), "chunk size must be >= 1");

    let ops = p.architecture.layer_operators();
    let chunks = chunk_shares(per_request_tokens, chunk_size);
    let mut entries = Vec::with_capacity(chunks.len() * p.num_layers as usize * ops.len());
    for (chunk_idx, shares) in chunks.iter().enumerate() {
        let new_total: u64 = shares.iter().map(|&(n, _)| n).sum();
        let attn_quadratic: f64 = shares
            .iter()
            .map(|&(n, prefix)| n as f64 * (prefix as f64 + n as f64))
            .sum();
        for layer in 0..p.num_layers {
            for (op_idx, &kind) in ops.iter().enumerate() {
                let mut base = p.c_fix.get(kind) + p.c_lin.get(kind) * new_total as f64;
                if kind == OperatorKind::Attn {
                    base += p.c_attn * attn_quadratic;
                }
                if layer == 0 && op_idx == 0 {
                    base += p.c_chunk;
                }
                entries.push(TimelineEntry {
                    layer,
                    chunk: chunk_idx as u32,
                    kind,
                    duration: p.tp_scale(base),
                });
            }
        }
    }
    OperatorTimeline::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attn_only(c_attn: f64) -> CostParams {
        CostParams {
            c_attn,
            ..CostParams::zero()
        }
    }

    #[test]
    fn zero_params_give_zero_durations() {
        let p = CostParams::zero();
        for kind in OperatorKind::ALL {
            assert_eq!(operator_duration(kind, 1000, 500, &p), 0.0);
        }
        assert_eq!(build_timeline(&[100, 200], Some(64), &p).total_duration, 0.0);
    }

    #[test]
    fn attention_term_direct_evaluation() {
        let p = attn_only(1.0);
        assert_eq!(operator_duration(OperatorKind::Attn, 4, 0, &p), 16.0);
        assert_eq!(operator_duration(OperatorKind::Attn, 2, 2, &p), 8.0);
        // Two chunks of 2 tokens: 2*(0+2) + 2*(2+2) = 12, cheaper than 16 unchunked.
        let chunked = operator_duration(OperatorKind::Attn, 2, 0, &p) + operator_duration(OperatorKind::Attn, 2, 2, &p);
        assert_eq!(chunked, 12.0);
        assert_eq!(build_timeline(&[4], Some(2), &p).total_duration, 12.0);
        assert_eq!(build_timeline(&[4], None, &p).total_duration, 16.0);
    }

    #[test]
    fn non_attention_kinds_are_linear() {
        let mut p = CostParams::zero();
        p.c_lin.set(OperatorKind::GateUpProj, 0.5);
        p.c_fix.set(OperatorKind::GateUpProj, 1.0);
        p.c_attn = 100.0;
        assert_eq!(operator_duration(OperatorKind::GateUpProj, 10, 1000, &p), 6.0);
    }

    #[test]
    fn tensor_parallel_scaling() {
        let mut p = CostParams::default();
        let solo = operator_duration(OperatorKind::DownProj, 1000, 0, &p);
        p.tp_degree = 4;
        p.tp_comm_overhead = 0.2;
        let tp = operator_duration(OperatorKind::DownProj, 1000, 0, &p);
        assert!((tp - solo / 4.0 * 1.2).abs() < 1e-15);
    }

    #[test]
    fn dense_and_moe_layer_structure() {
        let p = CostParams::default();
        let t = build_timeline(&[1000], None, &p);
        assert_eq!(t.len(), 5 * 32);
        let kinds: Vec<_> = t.entries[..5].iter().map(|e| e.kind).collect();
        assert_eq!(kinds, Architecture::Dense.layer_operators());
        assert!(t.ends_layer(4) && !t.ends_layer(3));
        assert!(t.ends_chunk(t.len() - 1) && !t.ends_chunk(4));

        let moe = CostParams {
            architecture: Architecture::Moe,
            ..CostParams::default()
        };
        let t = build_timeline(&[1000], None, &moe);
        let kinds: Vec<_> = t.entries[..5].iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                OperatorKind::QkvProj,
                OperatorKind::Attn,
                OperatorKind::OProj,
                OperatorKind::Gate,
                OperatorKind::Experts
            ]
        );
    }

    #[test]
    fn chunked_timeline_is_chunk_outer_layer_major() {
        let p = CostParams {
            num_layers: 2,
            ..CostParams::default()
        };
        let t = build_timeline(&[300], Some(128), &p);
        assert_eq!(t.num_chunks(), 3);
        assert_eq!(t.len(), 3 * 2 * 5);
        let order: Vec<(u32, u32)> = t.entries.iter().map(|e| (e.chunk, e.layer)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        // c_chunk lands once per chunk on its first operator.
        let diff = t.entries[0].duration - operator_duration(OperatorKind::QkvProj, 128, 0, &p);
        assert!((diff - p.c_chunk).abs() < 1e-15);
    }

    #[test]
    fn batched_attention_does_not_cross_requests() {
        let p = CostParams {
            num_layers: 1,
            ..attn_only(1.0)
        };
        let (a, b) = (30u64, 50u64);
        let batched = build_timeline(&[a, b], None, &p).total_duration;
        assert_eq!(batched, (a * a + b * b) as f64);
        assert!(batched < ((a + b) * (a + b)) as f64);
    }

    #[test]
    fn batched_chunk_windows_track_per_request_prefix() {
        // Requests of 3 and 5 tokens in chunks of 4: [3 of r0, 1 of r1], [4 of r1 with prefix 1].
        let shares = chunk_shares(&[3, 5], Some(4));
        assert_eq!(shares, vec![vec![(3, 0), (1, 0)], vec![(4, 1)]]);
        let p = CostParams {
            num_layers: 1,
            ..attn_only(1.0)
        };
        let t = build_timeline(&[3, 5], Some(4), &p);
        assert_eq!(t.total_duration, (3 * 3 + 1 + 4 * 5) as f64);
    }

    #[test]
    fn default_calibration_targets() {
        let p = CostParams::default();
        let t = build_timeline(&[32768], None, &p);
        assert!((t.total_duration - 3.0).abs() < 0.15, "32K prefill = {}", t.total_duration);
        let layer: f64 = t.entries[..5].iter().map(|e| e.duration).sum();
        let attn = t.entries[1].duration;
        assert!((attn / layer - 0.5).abs() < 0.05);
        assert!(p.c_check <= 1e-5);
        assert!(p.c_check < operator_duration(OperatorKind::OProj, 1, 0, &p));
    }

    #[test]
    fn cost_params_json_round_trip_and_validation() {
        let p = CostParams::default();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"gate_up_proj\""));
        assert_eq!(CostParams::from_json(&text).unwrap(), p);
        let bad = text.replace("\"c_attn\":4.4e-11", "\"c_attn\":-1.0");
        assert!(matches!(CostParams::from_json(&bad), Err(CostModelError::Invalid(_))));
        assert!(CostParams::from_json("{}").is_err());
    }
}
