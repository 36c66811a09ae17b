//! Synthetic decoding backend. Each profile yields a per-step stream of
//! (top, EOS) logits; greedy decoding over that stream decides the length.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::suppression::{should_terminate, SuppressionConfig, Suppressor};
use crate::telemetry::{GenerationTrace, LogitStep, RequestId, SimClock, Termination};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    BenignShort,
    BenignLongContext,
    AttackLongOutput,
}

impl ProfileKind {
    pub fn is_attack(self) -> bool {
        matches!(self, ProfileKind::AttackLongOutput)
    }
}

/// EOS logit sits at `baseline` and, for benign kinds, rises by `ramp_slope`
/// per step from the target step on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EosCurve {
    pub baseline: f64,
    pub ramp_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationProfile {
    pub kind: ProfileKind,
    pub target_length: u32,
    /// Per-request target is drawn uniformly from target ± jitter.
    #[serde(default)]
    pub length_jitter: u32,
    /// Inclusive range for the prompt length.
    pub input_length: [u32; 2],
    pub eos_curve: EosCurve,
    pub top_logit_level: f64,
    /// Std-dev of Gaussian noise added to both logits each step.
    #[serde(default)]
    pub logit_noise: f64,
    /// After this many tokens the output repeats a single token.
    #[serde(default)]
    pub repeat_after: Option<u32>,
    pub per_token_latency: f64,
}

pub const EOS_TOKEN: u32 = 2;
pub const VOCAB_SIZE: u32 = 32_000;

impl GenerationProfile {
    pub fn benign_short() -> Self {
        GenerationProfile {
            kind: ProfileKind::BenignShort,
            target_length: 30,
            length_jitter: 10,
            input_length: [40, 160],
            eos_curve: EosCurve {
                baseline: 2.0,
                ramp_slope: 10.0,
            },
            top_logit_level: 10.0,
            logit_noise: 0.05,
            repeat_after: None,
            per_token_latency: 0.01,
        }
    }

    pub fn benign_long_context() -> Self {
        GenerationProfile {
            kind: ProfileKind::BenignLongContext,
            target_length: 45,
            length_jitter: 15,
            input_length: [1500, 3000],
            eos_curve: EosCurve {
                baseline: 2.0,
                ramp_slope: 10.0,
            },
            top_logit_level: 10.0,
            logit_noise: 0.05,
            repeat_after: None,
            per_token_latency: 0.012,
        }
    }

    pub fn attack_long_output() -> Self {
        GenerationProfile {
            kind: ProfileKind::AttackLongOutput,
            target_length: 4096,
            length_jitter: 0,
            input_length: [100, 400],
            eos_curve: EosCurve {
                baseline: 2.0,
                ramp_slope: 0.0,
            },
            top_logit_level: 10.0,
            logit_noise: 0.0,
            repeat_after: Some(64),
            per_token_latency: 0.01,
        }
    }

    pub fn validate(&self, base: &str, l_max: u32) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::validation(format!("{base}/{field}"), msg));
        if self.target_length > l_max {
            return bad("target_length", format!("must not exceed l_max ({l_max})"));
        }
        if self.length_jitter > self.target_length {
            return bad("length_jitter", "must not exceed target_length".into());
        }
        if !(self.per_token_latency > 0.0 && self.per_token_latency.is_finite()) {
            return bad("per_token_latency", "must be positive".into());
        }
        if self.input_length[0] < 1 || self.input_length[0] > self.input_length[1] {
            return bad(
                "input_length",
                "must be an ordered range starting at 1 or more".into(),
            );
        }
        if !(self.logit_noise >= 0.0 && self.logit_noise.is_finite()) {
            return bad("logit_noise", "must be non-negative".into());
        }
        if !self.top_logit_level.is_finite() || !self.eos_curve.baseline.is_finite() {
            return bad("eos_curve", "logit levels must be finite".into());
        }
        if !self.kind.is_attack() && self.eos_curve.ramp_slope <= 0.0 {
            return bad(
                "eos_curve/ramp_slope",
                "benign profiles need a positive ramp".into(),
            );
        }
        Ok(())
    }

    /// Draws the per-request parameters.
    pub fn plan<R: Rng + ?Sized>(&self, rng: &mut R) -> RequestPlan {
        let lo = self.target_length - self.length_jitter;
        let hi = self.target_length + self.length_jitter;
        RequestPlan {
            target_length: rng.random_range(lo..=hi).max(1),
            input_len: rng.random_range(self.input_length[0]..=self.input_length[1]),
            repeat_token: rng.random_range(EOS_TOKEN + 1..VOCAB_SIZE),
        }
    }

    /// Raw logits at 1-based step `n`, before noise.
    pub fn logits_at(&self, plan: &RequestPlan, n: u32) -> (f64, f64) {
        let top = self.top_logit_level;
        let base = self.eos_curve.baseline;
        let eos = if self.kind.is_attack() || n < plan.target_length {
            base
        } else {
            base + self.eos_curve.ramp_slope * (n - plan.target_length + 1) as f64
        };
        (top, eos)
    }
}

/// Per-request draw: target length, prompt length and the token an attack repeats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestPlan {
    pub target_length: u32,
    pub input_len: u32,
    pub repeat_token: u32,
}

/// One decoding step's logits and the best non-EOS token.
pub fn next_step<R: Rng + ?Sized>(
    profile: &GenerationProfile,
    plan: &RequestPlan,
    n: u32,
    rng: &mut R,
) -> LogitStep {
    let (mut top, mut eos) = profile.logits_at(plan, n);
    if profile.logit_noise > 0.0 {
        let normal = Normal::new(0.0, profile.logit_noise).expect("noise is finite");
        top += normal.sample(rng);
        eos += normal.sample(rng);
    }
    let token_id = match profile.repeat_after {
        Some(after) if n > after => plan.repeat_token,
        _ => rng.random_range(EOS_TOKEN + 1..VOCAB_SIZE),
    };
    LogitStep {
        step_index: n,
        top_logit: top,
        eos_logit: eos,
        token_id,
    }
}

/// Decoding rule over the (corrected) EOS logit and the best other logit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Decoding {
    #[default]
    Greedy,
    /// Stop with probability sigmoid((eos − top) / temperature).
    Sampling { temperature: f64 },
}

/// Runs one request to completion starting at `clock.now()`.
///
/// With a suppression config and cap the EOS hook is applied each step;
/// the clock advances by `per_token_latency` per emitted token.
#[allow(clippy::too_many_arguments)]
pub fn simulate_request<R: Rng + ?Sized>(
    request_id: RequestId,
    profile: &GenerationProfile,
    plan: &RequestPlan,
    suppression: Option<(&SuppressionConfig, u32)>,
    l_max: u32,
    decoding: Decoding,
    clock: &mut SimClock,
    rng: &mut R,
) -> GenerationTrace {
    let start = clock.now();
    let mut hook = suppression.map(|(cfg, cap)| Suppressor::new(cfg.clone(), cap));
    let mut steps = Vec::new();
    let mut samples = Vec::new();
    let mut terminated_by = Termination::HardCap;
    for n in 1..=l_max {
        let mut step = next_step(profile, plan, n, rng);
        let eos = match hook.as_mut() {
            Some(h) => {
                let s = h.step(step.top_logit, step.eos_logit, step.token_id);
                samples.push(s);
                s.eos_corrected
            }
            None => step.eos_logit,
        };
        let eos_wins = match decoding {
            Decoding::Greedy => should_terminate(eos, step.top_logit, n, u32::MAX),
            Decoding::Sampling { temperature } => {
                let p = 1.0 / (1.0 + (-(eos - step.top_logit) / temperature).exp());
                rng.random::<f64>() < p
            }
        };
        if eos_wins {
            step.token_id = EOS_TOKEN;
            terminated_by = Termination::Eos;
        }
        steps.push(step);
        if eos_wins {
            break;
        }
    }
    let end = start + steps.len() as f64 * profile.per_token_latency;
    clock.advance_to(end);
    GenerationTrace {
        request_id,
        input_len: plan.input_len,
        steps,
        start_time: start,
        end_time: end,
        terminated_by: Some(terminated_by),
        suppression: samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(profile: &GenerationProfile, seed: u64, cap: Option<u32>) -> GenerationTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = profile.plan(&mut rng);
        let cfg = SuppressionConfig::default();
        let mut clock = SimClock::new();
        simulate_request(
            1,
            profile,
            &plan,
            cap.map(|c| (&cfg, c)),
            4096,
            Decoding::Greedy,
            &mut clock,
            &mut rng,
        )
    }

    #[test]
    fn benign_short_stops_near_target() {
        let p = GenerationProfile {
            target_length: 200,
            length_jitter: 20,
            ..GenerationProfile::benign_short()
        };
        for seed in 0..20 {
            let t = run(&p, seed, None);
            assert!(
                (180..=220).contains(&t.output_len()),
                "len {}",
                t.output_len()
            );
            assert_eq!(t.terminated_by, Some(Termination::Eos));
            assert_eq!(t.steps.last().unwrap().token_id, EOS_TOKEN);
        }
    }

    #[test]
    fn attack_runs_to_hard_cap() {
        let t = run(&GenerationProfile::attack_long_output(), 3, None);
        assert_eq!(t.output_len(), 4096);
        assert_eq!(t.terminated_by, Some(Termination::HardCap));
    }

    #[test]
    fn attack_with_cap_stops_just_past_it() {
        let t = run(&GenerationProfile::attack_long_output(), 3, Some(1000));
        assert_eq!(t.output_len(), 1017);
        assert_eq!(t.terminated_by, Some(Termination::Eos));
    }

    #[test]
    fn latency_accounting() {
        let p = GenerationProfile {
            target_length: 100,
            length_jitter: 0,
            logit_noise: 0.0,
            ..GenerationProfile::benign_short()
        };
        let t = run(&p, 1, None);
        assert_eq!(t.output_len(), 100);
        assert!((t.end_time - t.start_time - 1.0).abs() < 1e-9);
    }

    #[test]
    fn suppression_is_inert_below_cap() {
        let p = GenerationProfile::benign_short();
        for seed in 0..10 {
            let mut off = run(&p, seed, None);
            let on = run(&p, seed, Some(1000));
            assert_eq!(on.suppression.len(), on.steps.len());
            off.suppression = on.suppression.clone();
            assert_eq!(off, on);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let p = GenerationProfile::benign_long_context();
        assert_eq!(run(&p, 9, None), run(&p, 9, None));
    }

    #[test]
    fn sampling_mode_terminates() {
        let p = GenerationProfile::benign_short();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plan = p.plan(&mut rng);
        let mut clock = SimClock::new();
        let t = simulate_request(
            1,
            &p,
            &plan,
            None,
            4096,
            Decoding::Sampling { temperature: 1.0 },
            &mut clock,
            &mut rng,
        );
        assert!(t.output_len() >= 1 && t.output_len() <= 4096);
    }
}
