//! Adaptive end-based suppression: once a generation passes its per-user cap
//! L_u, the EOS logit is scaled by a confidence term and boosted by a
//! repetition term until EOS wins the argmax.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::SuppressionSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuppressionConfig {
    /// System output cap L^max.
    pub l_max: u32,
    /// Inhibition adjustment η.
    pub eta: f64,
    /// Repetition scale.
    pub gamma_supp: f64,
    /// Floor Δ2 at zero so the correction never raises EOS through a sign flip.
    pub clamp_nonnegative_delta2: bool,
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        SuppressionConfig {
            l_max: 4096,
            eta: 0.125,
            gamma_supp: 1.0,
            clamp_nonnegative_delta2: false,
        }
    }
}

impl SuppressionConfig {
    pub fn validate(&self, base: &str) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::validation(format!("{base}/{field}"), msg));
        if self.l_max == 0 {
            return bad("l_max", "must be at least 1");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", "must be positive");
        }
        if !(self.gamma_supp > 0.0 && self.gamma_supp.is_finite()) {
            return bad("gamma_supp", "must be positive");
        }
        Ok(())
    }

    /// L^min = 2 · L_out^ave, never above L^max.
    pub fn min_cap(&self, avg_benign_out: f64) -> f64 {
        (2.0 * avg_benign_out).min(self.l_max as f64)
    }
}

/// L_u = L^min + (S_u / S_ini)(L^max − L^min), clamped to [L^min, L^max].
pub fn output_cap(score: f64, initial_score: f64, l_min: f64, l_max: f64) -> f64 {
    let l = l_min + (score / initial_score) * (l_max - l_min);
    l.clamp(l_min, l_max)
}

/// Whole-token cap used by the decoding loop.
pub fn cap_tokens(l_u: f64) -> u32 {
    l_u.floor().max(0.0) as u32
}

/// Per-generation suppression state.
#[derive(Clone, Debug, PartialEq)]
pub struct SuppressionState {
    pub cap: u32,
    pub n: u32,
    pub gap_sum: f64,
    pub post_cap_counts: HashMap<u32, u32>,
    max_count: u32,
}

impl SuppressionState {
    pub fn new(cap: u32) -> Self {
        SuppressionState {
            cap,
            n: 0,
            gap_sum: 0.0,
            post_cap_counts: HashMap::new(),
            max_count: 0,
        }
    }

    pub fn active(&self) -> bool {
        self.n > self.cap
    }

    /// Extends the running gap with one more step.
    pub fn update_gap(&mut self, top_logit: f64, eos_logit: f64) {
        self.n += 1;
        self.gap_sum += top_logit - eos_logit;
    }

    /// Counts the token at the current step if it lies past the cap.
    pub fn record_token(&mut self, token: u32) {
        if self.active() {
            let c = self.post_cap_counts.entry(token).or_insert(0);
            *c += 1;
            self.max_count = self.max_count.max(*c);
        }
    }

    /// d: mean gap between top and EOS logits so far.
    pub fn avg_gap(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.gap_sum / self.n as f64
        }
    }

    /// Δ1 = gamma_supp · (largest post-cap multiplicity).
    pub fn repetition_boost(&self, gamma_supp: f64) -> f64 {
        if !self.active() {
            return 0.0;
        }
        gamma_supp * self.max_count as f64
    }

    /// Δ2 = −d/(n − L_u) + η·d; None at or below the cap.
    pub fn confidence_term(&self, eta: f64) -> Option<f64> {
        if !self.active() {
            return None;
        }
        let d = self.avg_gap();
        Some(-d / (self.n - self.cap) as f64 + eta * d)
    }

    /// l' = Δ2 · (eos + Δ1) past the cap, raw EOS otherwise.
    pub fn adjust_eos(&self, eos_logit: f64, cfg: &SuppressionConfig) -> f64 {
        match self.confidence_term(cfg.eta) {
            None => eos_logit,
            Some(d2) => {
                let d2 = if cfg.clamp_nonnegative_delta2 {
                    d2.max(0.0)
                } else {
                    d2
                };
                corrected_eos(eos_logit, self.repetition_boost(cfg.gamma_supp), d2)
            }
        }
    }
}

pub fn corrected_eos(eos_logit: f64, delta1: f64, delta2: f64) -> f64 {
    delta2 * (eos_logit + delta1)
}

/// Greedy stop rule: EOS strictly beats the best other token, or the hard cap is hit.
pub fn should_terminate(corrected_eos: f64, top_excluding_eos: f64, n: u32, l_max: u32) -> bool {
    corrected_eos > top_excluding_eos || n >= l_max
}

/// Suppression hook applied once per decoding step.
#[derive(Clone, Debug)]
pub struct Suppressor {
    pub config: SuppressionConfig,
    pub state: SuppressionState,
}

impl Suppressor {
    pub fn new(config: SuppressionConfig, cap: u32) -> Self {
        Suppressor {
            config,
            state: SuppressionState::new(cap),
        }
    }

    /// Feeds one step's raw logits and the candidate (best non-EOS) token;
    /// returns the corrected EOS logit and the telemetry sample.
    pub fn step(&mut self, top_logit: f64, eos_logit: f64, candidate: u32) -> SuppressionSample {
        self.state.update_gap(top_logit, eos_logit);
        self.state.record_token(candidate);
        let corrected = self.state.adjust_eos(eos_logit, &self.config);
        SuppressionSample {
            n: self.state.n,
            d: self.state.avg_gap(),
            delta1: self.state.repetition_boost(self.config.gamma_supp),
            delta2: self.state.confidence_term(self.config.eta),
            eos_raw: eos_logit,
            eos_corrected: corrected,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-9;

    #[test]
    fn cap_interpolation() {
        assert!((output_cap(100.0, 100.0, 200.0, 4096.0) - 4096.0).abs() < EPS);
        assert!((output_cap(0.0, 100.0, 200.0, 4096.0) - 200.0).abs() < EPS);
        assert!((output_cap(50.0, 100.0, 200.0, 4096.0) - 2148.0).abs() < EPS);
        assert!((output_cap(-30.0, 100.0, 200.0, 4096.0) - 200.0).abs() < EPS);
        assert!((output_cap(180.0, 100.0, 200.0, 4096.0) - 4096.0).abs() < EPS);
        assert_eq!(cap_tokens(2148.0), 2148);
    }

    #[test]
    fn boost_is_zero_below_cap() {
        let mut s = SuppressionState::new(5);
        for _ in 0..5 {
            s.update_gap(10.0, 2.0);
            s.record_token(7);
        }
        assert_eq!(s.repetition_boost(1.0), 0.0);
        assert!(s.post_cap_counts.is_empty());
    }

    #[test]
    fn boost_is_max_multiplicity() {
        let mut s = SuppressionState::new(0);
        for t in [7, 7, 9] {
            s.update_gap(1.0, 0.0);
            s.record_token(t);
        }
        assert!((s.repetition_boost(1.0) - 2.0).abs() < EPS);

        let mut s = SuppressionState::new(3);
        for _ in 0..3 {
            s.update_gap(1.0, 0.0);
            s.record_token(4);
        }
        for _ in 0..6 {
            s.update_gap(1.0, 0.0);
            s.record_token(4);
        }
        assert!((s.repetition_boost(0.5) - 3.0).abs() < EPS);
    }

    #[test]
    fn average_gap() {
        let mut s = SuppressionState::new(100);
        for _ in 0..37 {
            s.update_gap(10.0, 2.0);
        }
        assert!((s.avg_gap() - 8.0).abs() < EPS);

        let mut s = SuppressionState::new(100);
        s.update_gap(2.0, 0.0);
        s.update_gap(5.0, 1.0);
        assert!((s.avg_gap() - 3.0).abs() < EPS);

        let mut s = SuppressionState::new(100);
        for _ in 0..4 {
            s.update_gap(3.5, 3.5);
        }
        assert_eq!(s.avg_gap(), 0.0);
    }

    #[test]
    fn confidence_term_examples() {
        let mut s = SuppressionState::new(10);
        for _ in 0..11 {
            s.update_gap(10.0, 2.0);
        }
        assert!((s.confidence_term(0.125).unwrap() + 7.0).abs() < EPS);

        let mut s = SuppressionState::new(10);
        for _ in 0..20 {
            s.update_gap(1.0, 1.0);
        }
        assert_eq!(s.confidence_term(0.125), Some(0.0));

        assert_eq!(SuppressionState::new(10).confidence_term(0.125), None);
    }

    #[test]
    fn confidence_term_approaches_eta_d() {
        let eps = 1e-3;
        let d = 8.0;
        let mut s = SuppressionState::new(4);
        let k = (d / eps) as u32 + 1;
        for _ in 0..(4 + k) {
            s.update_gap(10.0, 2.0);
        }
        let d2 = s.confidence_term(0.125).unwrap();
        assert!((d2 - 0.125 * d).abs() < eps);
    }

    #[test]
    fn eq18_examples() {
        assert!((corrected_eos(3.25, 0.0, 1.0) - 3.25).abs() < EPS);
        assert!((corrected_eos(2.0, 18.0, 0.5) - 10.0).abs() < EPS);
        assert_eq!(corrected_eos(2.0, 18.0, 0.0), 0.0);
    }

    #[test]
    fn adjust_is_identity_below_cap() {
        let mut s = SuppressionState::new(3);
        s.update_gap(10.0, 2.0);
        assert_eq!(s.adjust_eos(2.0, &SuppressionConfig::default()), 2.0);
    }

    #[test]
    fn clamp_flag_floors_delta2() {
        let cfg = SuppressionConfig {
            clamp_nonnegative_delta2: true,
            ..SuppressionConfig::default()
        };
        let mut s = SuppressionState::new(0);
        s.update_gap(10.0, 2.0);
        s.record_token(1);
        assert_eq!(s.adjust_eos(2.0, &cfg), 0.0);
        assert!(s.adjust_eos(2.0, &SuppressionConfig::default()) < 0.0);
    }

    #[test]
    fn stop_rule() {
        assert!(should_terminate(10.0, 9.0, 5, 4096));
        assert!(!should_terminate(10.0, 10.0, 5, 4096));
        assert!(should_terminate(-50.0, 10.0, 4096, 4096));
    }

    /// Closed form for a constant stream: first k with (ηd − d/k)(e + γk) > τ.
    fn crossing_oracle(tau: f64, e: f64, eta: f64, gamma: f64) -> u32 {
        let d = tau - e;
        (1..100_000u32)
            .find(|&k| (eta * d - d / k as f64) * (e + gamma * k as f64) > tau)
            .expect("crossing exists")
    }

    #[test]
    fn constant_stream_terminates_at_oracle_step() {
        let k = crossing_oracle(10.0, 2.0, 0.125, 1.0);
        assert!((16..=32).contains(&k));
        assert_eq!(k, 17);
        for cap in [0u32, 50, 1000] {
            let mut hook = Suppressor::new(SuppressionConfig::default(), cap);
            let mut stop = None;
            for n in 1..=4096 {
                let s = hook.step(10.0, 2.0, 42);
                if should_terminate(s.eos_corrected, 10.0, n, 4096) {
                    stop = Some(n);
                    break;
                }
            }
            assert_eq!(stop, Some(cap + k));
        }
    }
}
