//! Reputation-based polling: per-user FCFS sub-queues ranked by score, with
//! reward, penalty, clip and compensation rules applied at round end.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{Action, RiskVerdict};
use crate::telemetry::{RequestId, UserId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    /// Users served per round (n).
    pub parallelism: usize,
    /// Penalty intensity γ.
    pub gamma: f64,
    /// Reputation cap multiple μ.
    pub mu: f64,
    /// Compensation rate δ.
    pub delta: f64,
    pub initial_score: f64,
    /// Separate reward scale; γ is used when absent.
    pub gamma_reward: Option<f64>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            parallelism: 1,
            gamma: 1.0,
            mu: 2.0,
            delta: 0.5,
            initial_score: 100.0,
            gamma_reward: None,
        }
    }
}

impl SchedulerConfig {
    /// Checks field ranges; `base` is the JSON pointer of this object.
    pub fn validate(&self, base: &str) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::validation(format!("{base}/{field}"), msg));
        if self.parallelism < 1 {
            return bad("parallelism", "must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma", "must be positive");
        }
        if !(self.mu > 1.0 && self.mu.is_finite()) {
            return bad("mu", "must be greater than 1");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta", "must be in (0, 1]");
        }
        if !(self.initial_score > 0.0 && self.initial_score.is_finite()) {
            return bad("initial_score", "must be positive");
        }
        if let Some(g) = self.gamma_reward {
            if !(g > 0.0 && g.is_finite()) {
                return bad("gamma_reward", "must be positive");
            }
        }
        Ok(())
    }

    pub fn reward_scale(&self) -> f64 {
        self.gamma_reward.unwrap_or(self.gamma)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueuedRequest {
    pub request_id: RequestId,
    pub arrival: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserState {
    pub user_id: UserId,
    pub score: f64,
    pub initial_score: f64,
    pub queue: VecDeque<QueuedRequest>,
    pub last_served_round: Option<u64>,
    pub idle_rounds: u64,
}

/// Score after one served round under `action`.
pub fn served_score(score: f64, action: Action, i_c: f64, cfg: &SchedulerConfig) -> f64 {
    match action {
        Action::MildPenalty => score - cfg.gamma,
        Action::Reward => {
            let s = score + cfg.reward_scale() / i_c;
            if s > cfg.mu * cfg.initial_score {
                cfg.initial_score - cfg.gamma
            } else {
                s
            }
        }
        Action::DosPenalty => score - cfg.gamma * i_c,
    }
}

/// Score after a round in which the user was not served.
pub fn compensated_score(score: f64, cfg: &SchedulerConfig) -> f64 {
    (score + cfg.delta * cfg.gamma).min(cfg.initial_score)
}

/// Ranking key: higher score, then longer idle, then smaller id.
pub fn rank_cmp(a: (f64, u64, UserId), b: (f64, u64, UserId)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReputationScheduler {
    config: SchedulerConfig,
    users: BTreeMap<UserId, UserState>,
    round: u64,
    in_round: Option<BTreeSet<UserId>>,
    deferred: Vec<(UserId, QueuedRequest)>,
}

impl ReputationScheduler {
    pub fn new(config: SchedulerConfig) -> Self {
        ReputationScheduler {
            config,
            users: BTreeMap::new(),
            round: 0,
            in_round: None,
            deferred: Vec::new(),
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn user(&self, id: UserId) -> Option<&UserState> {
        self.users.get(&id)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserState> {
        self.users.values()
    }

    pub fn score(&self, id: UserId) -> Option<f64> {
        self.users.get(&id).map(|u| u.score)
    }

    /// Registers a user without queueing anything.
    pub fn register(&mut self, id: UserId) {
        let s = self.config.initial_score;
        self.users.entry(id).or_insert_with(|| UserState {
            user_id: id,
            score: s,
            initial_score: s,
            queue: VecDeque::new(),
            last_served_round: None,
            idle_rounds: 0,
        });
    }

    /// Appends to the user's sub-queue. During a round the request is held
    /// back until the round's updates have been applied.
    pub fn enqueue(&mut self, id: UserId, req: QueuedRequest) {
        self.register(id);
        if self.in_round.is_some() {
            self.deferred.push((id, req));
        } else {
            self.users
                .get_mut(&id)
                .expect("registered")
                .queue
                .push_back(req);
        }
    }

    /// True between `select_round` and `apply_round_updates`.
    pub fn in_round(&self) -> bool {
        self.in_round.is_some()
    }

    pub fn has_work(&self) -> bool {
        self.users.values().any(|u| !u.queue.is_empty())
    }

    pub fn queued(&self) -> usize {
        self.users.values().map(|u| u.queue.len()).sum()
    }

    /// Users that would be picked this round, best first.
    pub fn ranking(&self) -> Vec<UserId> {
        let mut active: Vec<(f64, u64, UserId)> = self
            .users
            .values()
            .filter(|u| !u.queue.is_empty())
            .map(|u| (u.score, u.idle_rounds, u.user_id))
            .collect();
        active.sort_by(|a, b| rank_cmp(*a, *b));
        active.truncate(self.config.parallelism);
        active.into_iter().map(|k| k.2).collect()
    }

    /// Starts a round by popping the head request of each of the top-n users.
    /// Returns None when every queue is empty.
    pub fn select_round(&mut self) -> Option<Vec<(UserId, QueuedRequest)>> {
        assert!(
            self.in_round.is_none(),
            "select_round called twice in one round"
        );
        let picked = self.ranking();
        if picked.is_empty() {
            return None;
        }
        let out: Vec<_> = picked
            .iter()
            .map(|id| {
                let u = self.users.get_mut(id).expect("ranked user exists");
                (*id, u.queue.pop_front().expect("ranked users have work"))
            })
            .collect();
        self.in_round = Some(picked.into_iter().collect());
        Some(out)
    }

    /// Ends the round: one rule per served user, compensation for everyone else.
    pub fn apply_round_updates(&mut self, verdicts: &BTreeMap<UserId, RiskVerdict>) -> Result<()> {
        let served = self.in_round.as_ref().ok_or(Error::NoActiveRound)?;
        if let Some(u) = verdicts.keys().find(|u| !served.contains(u)) {
            return Err(Error::UnservedVerdict(*u));
        }
        if let Some(u) = served.iter().find(|u| !verdicts.contains_key(u)) {
            return Err(Error::MissingVerdict(*u));
        }
        let served = self.in_round.take().expect("checked above");
        self.round += 1;
        for u in self.users.values_mut() {
            if let Some(v) = verdicts.get(&u.user_id) {
                u.score = served_score(u.score, v.action, v.i_c, &self.config);
                u.idle_rounds = 0;
                u.last_served_round = Some(self.round);
            } else {
                debug_assert!(!served.contains(&u.user_id));
                u.score = compensated_score(u.score, &self.config);
                u.idle_rounds += 1;
            }
        }
        for (id, req) in std::mem::take(&mut self.deferred) {
            self.users
                .get_mut(&id)
                .expect("registered")
                .queue
                .push_back(req);
        }
        Ok(())
    }

    /// Removes every queued request, e.g. when the session ends.
    pub fn drain(&mut self) -> Vec<(UserId, QueuedRequest)> {
        let mut out = Vec::new();
        for u in self.users.values_mut() {
            out.extend(u.queue.drain(..).map(|r| (u.user_id, r)));
        }
        out.append(&mut self.deferred);
        out
    }

    #[cfg(test)]
    pub(crate) fn set_score(&mut self, id: UserId, score: f64) {
        self.users.get_mut(&id).expect("user").score = score;
    }

    #[cfg(test)]
    pub(crate) fn set_idle(&mut self, id: UserId, idle: u64) {
        self.users.get_mut(&id).expect("user").idle_rounds = idle;
    }
}
