//! Shared domain types: resource vectors, generation traces, the simulated
//! clock and the cost model that synthesizes memory and utilization.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = u32;
pub type RequestId = u64;

/// Per-request telemetry (T, M, G, L_in, L_out).
///
/// Lengths are stored as reals because reference centroids are averages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceVector {
    /// Runtime in seconds.
    pub t: f64,
    /// Peak memory in GB.
    pub m: f64,
    /// Peak utilization in percent.
    pub g: f64,
    pub l_in: f64,
    pub l_out: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    T,
    M,
    G,
    LIn,
    LOut,
}

impl Dim {
    pub const ALL: [Dim; 5] = [Dim::T, Dim::M, Dim::G, Dim::LIn, Dim::LOut];
}

/// Dimensions that measure how much a request consumed.
pub const CONSUMPTION_DIMS: [Dim; 3] = [Dim::T, Dim::G, Dim::LOut];
/// Dimensions whose shape describes how a request behaves.
pub const TENDENCY_DIMS: [Dim; 4] = [Dim::T, Dim::M, Dim::LIn, Dim::LOut];

impl ResourceVector {
    pub fn new(t: f64, m: f64, g: f64, l_in: f64, l_out: f64) -> Self {
        ResourceVector {
            t,
            m,
            g,
            l_in,
            l_out,
        }
    }

    pub fn get(&self, dim: Dim) -> f64 {
        match dim {
            Dim::T => self.t,
            Dim::M => self.m,
            Dim::G => self.g,
            Dim::LIn => self.l_in,
            Dim::LOut => self.l_out,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.t, self.m, self.g, self.l_in, self.l_out]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        ResourceVector::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn consumption(&self) -> [f64; 3] {
        [self.t, self.g, self.l_out]
    }

    pub fn tendency(&self) -> [f64; 4] {
        [self.t, self.m, self.l_in, self.l_out]
    }

    /// True when the record satisfies T > 0, M ≥ 0, 0 ≤ G ≤ 100, L_in ≥ 1, L_out ≥ 0.
    pub fn is_valid(&self) -> bool {
        self.t > 0.0
            && self.m >= 0.0
            && (0.0..=100.0).contains(&self.g)
            && self.l_in >= 1.0
            && self.l_out >= 0.0
    }
}

/// One decoding step. `top_logit` is the best non-EOS logit, so EOS may exceed it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitStep {
    pub step_index: u32,
    pub top_logit: f64,
    pub eos_logit: f64,
    pub token_id: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    HardCap,
}

/// Suppression state observed at one step, kept for analysis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuppressionSample {
    pub n: u32,
    pub d: f64,
    pub delta1: f64,
    /// None while the step is at or below the cap.
    pub delta2: Option<f64>,
    pub eos_raw: f64,
    pub eos_corrected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub request_id: RequestId,
    pub input_len: u32,
    pub steps: Vec<LogitStep>,
    pub start_time: f64,
    pub end_time: f64,
    /// None until the generation has finished.
    pub terminated_by: Option<Termination>,
    /// Per-step suppression samples; empty when no hook ran.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suppression: Vec<SuppressionSample>,
}

impl GenerationTrace {
    pub fn output_len(&self) -> u32 {
        self.steps.len() as u32
    }

    /// Writes one JSON object per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            let mut line = serde_json::json!({
                "request_id": self.request_id,
                "n": s.step_index,
                "top_logit": s.top_logit,
                "eos_logit": s.eos_logit,
                "token_id": s.token_id,
            });
            if let Some(sup) = self.suppression.get(i) {
                let obj = line.as_object_mut().expect("object literal");
                obj.insert("d".into(), sup.d.into());
                obj.insert("delta1".into(), sup.delta1.into());
                obj.insert("delta2".into(), serde_json::to_value(sup.delta2)?);
                obj.insert("eos_corrected".into(), sup.eos_corrected.into());
            }
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Simulated time in seconds. Only moves forward.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimClock {
    now: f64,
}

impl SimClock {
    pub fn new() -> Self {
        SimClock { now: 0.0 }
    }

    pub fn at(now: f64) -> Self {
        SimClock { now }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn advance_to(&mut self, t: f64) {
        debug_assert!(
            t >= self.now,
            "clock moved backwards: {} -> {}",
            self.now,
            t
        );
        if t > self.now {
            self.now = t;
        }
    }
}

/// Affine-plus-noise model for memory and utilization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub base_memory_gb: f64,
    pub memory_per_token_gb: f64,
    pub base_utilization_pct: f64,
    pub utilization_per_token_pct: f64,
    /// Standard deviation of the log of the multiplicative noise.
    pub noise_sigma: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            base_memory_gb: 16.0,
            memory_per_token_gb: 0.0005,
            base_utilization_pct: 30.0,
            utilization_per_token_pct: 0.02,
            noise_sigma: 0.05,
        }
    }
}

/// Multiplicative noise factors drawn once per request.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostNoise {
    pub memory: f64,
    pub utilization: f64,
}

impl CostNoise {
    pub const NONE: CostNoise = CostNoise {
        memory: 1.0,
        utilization: 1.0,
    };

    pub fn draw<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Self {
        if sigma <= 0.0 {
            return CostNoise::NONE;
        }
        let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
        CostNoise {
            memory: normal.sample(rng).exp(),
            utilization: normal.sample(rng).exp(),
        }
    }
}

impl CostModel {
    pub fn memory_gb(&self, tokens: f64, noise: CostNoise) -> f64 {
        (self.base_memory_gb + self.memory_per_token_gb * tokens) * noise.memory
    }

    pub fn utilization_pct(&self, tokens: f64, noise: CostNoise) -> f64 {
        ((self.base_utilization_pct + self.utilization_per_token_pct * tokens) * noise.utilization)
            .clamp(0.0, 100.0)
    }
}

/// Builds the resource vector of a finished trace.
pub fn derive_resource_vector(
    trace: &GenerationTrace,
    cost: &CostModel,
    noise: CostNoise,
) -> Result<ResourceVector> {
    if trace.terminated_by.is_none() {
        return Err(Error::UnfinishedTrace(trace.request_id));
    }
    let l_in = trace.input_len as f64;
    let l_out = trace.output_len() as f64;
    let tokens = l_in + l_out;
    Ok(ResourceVector {
        t: trace.end_time - trace.start_time,
        m: cost.memory_gb(tokens, noise),
        g: cost.utilization_pct(tokens, noise),
        l_in,
        l_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(steps: u32, start: f64, end: f64) -> GenerationTrace {
        GenerationTrace {
            request_id: 1,
            input_len: 10,
            steps: (1..=steps)
                .map(|n| LogitStep {
                    step_index: n,
                    top_logit: 10.0,
                    eos_logit: 2.0,
                    token_id: 5,
                })
                .collect(),
            start_time: start,
            end_time: end,
            terminated_by: Some(Termination::Eos),
            suppression: Vec::new(),
        }
    }

    #[test]
    fn empty_output_has_zero_length() {
        let v = derive_resource_vector(&trace(0, 1.0, 1.0), &CostModel::default(), CostNoise::NONE)
            .unwrap();
        assert_eq!(v.l_out, 0.0);
    }

    #[test]
    fn runtime_is_end_minus_start() {
        let v = derive_resource_vector(
            &trace(3, 10.0, 13.5),
            &CostModel::default(),
            CostNoise::NONE,
        )
        .unwrap();
        assert!((v.t - 3.5).abs() < 1e-9);
    }

    #[test]
    fn affine_memory() {
        let cost = CostModel {
            base_memory_gb: 2.0,
            memory_per_token_gb: 0.001,
            noise_sigma: 0.0,
            ..CostModel::default()
        };
        let mut t = trace(400, 0.0, 4.0);
        t.input_len = 600;
        let v = derive_resource_vector(&t, &cost, CostNoise::NONE).unwrap();
        assert!((v.m - 3.0).abs() < 1e-9);
    }

    #[test]
    fn unfinished_trace_is_rejected() {
        let mut t = trace(2, 0.0, 1.0);
        t.terminated_by = None;
        assert!(matches!(
            derive_resource_vector(&t, &CostModel::default(), CostNoise::NONE),
            Err(Error::UnfinishedTrace(1))
        ));
    }

    #[test]
    fn utilization_is_capped() {
        let cost = CostModel::default();
        assert_eq!(cost.utilization_pct(1e6, CostNoise::NONE), 100.0);
    }

    #[test]
    fn trace_jsonl_has_one_line_per_step() {
        let mut buf = Vec::new();
        trace(4, 0.0, 1.0).write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["n"], 1);
        assert_eq!(first["eos_logit"], 2.0);
    }

    #[test]
    fn clock_is_monotone() {
        let mut c = SimClock::new();
        c.advance_to(2.5);
        assert_eq!(c.now(), 2.5);
    }
}
