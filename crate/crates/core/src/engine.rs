//! Round driver: runs a scenario under one scheduling policy on the shared
//! simulated backend and records every served or expired request.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gensim::{simulate_request, GenerationProfile, ProfileKind};
use crate::index::{Action, Classifier, Region, RiskVerdict};
use crate::scenario::{ArrivalModel, ScenarioConfig, StopRule, UserClass};
use crate::scheduler::{QueuedRequest, ReputationScheduler};
use crate::suppression::{cap_tokens, output_cap};
use crate::telemetry::{
    derive_resource_vector, CostNoise, RequestId, ResourceVector, SimClock, Termination, UserId,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Ours,
    Fcfs,
    Rr,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Ours, Policy::Fcfs, Policy::Rr];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Ours => "ours",
            Policy::Fcfs => "fcfs",
            Policy::Rr => "rr",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ours" => Ok(Policy::Ours),
            "fcfs" => Ok(Policy::Fcfs),
            "rr" => Ok(Policy::Rr),
            _ => Err(Error::UnknownPolicy(s.to_string())),
        }
    }
}

/// Components switched off in an ablation run of OURS.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Replace reputation polling with round-robin selection. Scores are no
    /// longer tracked, so the output cap stays at L^max.
    pub polling: bool,
    /// Replace the EOS hook with the identity.
    pub suppression: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        polling: false,
        suppression: false,
    };

    pub fn parse_list(items: &[String]) -> Result<Self> {
        let mut a = Ablation::NONE;
        for item in items.iter().flat_map(|s| s.split(',')) {
            match item.trim() {
                "polling" => a.polling = true,
                "suppression" => a.suppression = true,
                "" => {}
                other => return Err(Error::UnknownComponent(other.to_string())),
            }
        }
        Ok(a)
    }

    pub fn label(&self) -> String {
        match (self.polling, self.suppression) {
            (false, false) => "ours".into(),
            (true, false) => "ours-no-polling".into(),
            (false, true) => "ours-no-suppression".into(),
            (true, true) => "ours-no-polling-no-suppression".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign,
    Attack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServedRecord {
    pub round: u64,
    pub user: UserId,
    pub request_id: RequestId,
    pub label: Label,
    pub profile: ProfileKind,
    pub action: Action,
    pub i_c: f64,
    pub i_t: f64,
    pub region: Region,
    pub score_before: f64,
    pub score_after: f64,
    /// Output cap L_u when the EOS hook ran.
    pub cap: Option<u32>,
    pub input_len: u32,
    pub output_len: u32,
    pub terminated_by: Termination,
    pub arrival: f64,
    pub start: f64,
    pub end: f64,
    pub vector: ResourceVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpiredRecord {
    pub user: UserId,
    pub request_id: RequestId,
    pub label: Label,
    pub arrival: f64,
    pub expired_at: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Served(ServedRecord),
    Expired(ExpiredRecord),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExecutionLog {
    pub records: Vec<LogRecord>,
}

impl ExecutionLog {
    pub fn served(&self) -> impl Iterator<Item = &ServedRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Served(s) => Some(s),
            LogRecord::Expired(_) => None,
        })
    }

    pub fn expired(&self) -> impl Iterator<Item = &ExpiredRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Expired(e) => Some(e),
            LogRecord::Served(_) => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| Error::validation(format!("/{i}"), format!("line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        Ok(ExecutionLog { records })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OverheadStats {
    pub rounds: u64,
    pub max: Duration,
    pub total: Duration,
}

impl OverheadStats {
    fn add(&mut self, d: Duration) {
        self.rounds += 1;
        self.total += d;
        self.max = self.max.max(d);
    }

    pub fn mean(&self) -> Duration {
        if self.rounds == 0 {
            Duration::ZERO
        } else {
            self.total / self.rounds as u32
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub label: String,
    pub log: ExecutionLog,
    /// Classifier state at the end of the run.
    pub classifier: Classifier,
    /// Wall time spent per round in index computation and queue reordering.
    pub overhead: OverheadStats,
    /// Longest stretch of rounds any user spent with queued work but unserved.
    pub max_wait_rounds: u64,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream for (seed, key, purpose).
pub fn stream(seed: u64, key: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(key)) ^ purpose))
}

const PURPOSE_CONTENT: u64 = 1;
const PURPOSE_THINK: u64 = 2;
const PURPOSE_SETUP: u64 = 3;
const PURPOSE_WARMUP: u64 = 4;

pub fn request_id(user: UserId, seq: u32) -> RequestId {
    ((user as u64) << 32) | seq as u64
}

fn pick_profile<'a, R: Rng + ?Sized>(
    scenario: &'a ScenarioConfig,
    class: &UserClass,
    rng: &mut R,
) -> &'a GenerationProfile {
    let total: f64 = class.profiles.iter().map(|p| p.weight).sum();
    let mut x = rng.random::<f64>() * total;
    for wp in &class.profiles {
        if x < wp.weight {
            return &scenario.profiles[&wp.profile];
        }
        x -= wp.weight;
    }
    &scenario.profiles[&class.profiles.last().expect("validated non-empty").profile]
}

/// Request content that does not depend on scheduling: profile, plan and
/// cost noise are all drawn from the request's own stream.
struct Prepared<'a> {
    profile: &'a GenerationProfile,
    plan: crate::gensim::RequestPlan,
    noise: CostNoise,
    rng: ChaCha8Rng,
}

fn prepare<'a>(scenario: &'a ScenarioConfig, class: &UserClass, id: RequestId) -> Prepared<'a> {
    let mut rng = stream(scenario.seed, id, PURPOSE_CONTENT);
    let profile = pick_profile(scenario, class, &mut rng);
    let plan = profile.plan(&mut rng);
    let noise = CostNoise::draw(scenario.cost_model.noise_sigma, &mut rng);
    Prepared {
        profile,
        plan,
        noise,
        rng,
    }
}

/// Telemetry for one request generated from `clock.now()`, optionally capped.
fn generate(
    scenario: &ScenarioConfig,
    class: &UserClass,
    id: RequestId,
    cap: Option<u32>,
    clock: &mut SimClock,
) -> Result<(
    crate::telemetry::GenerationTrace,
    ResourceVector,
    ProfileKind,
)> {
    let mut p = prepare(scenario, class, id);
    let sup = cap.map(|c| (&scenario.suppression, c));
    let trace = simulate_request(
        id,
        p.profile,
        &p.plan,
        sup,
        scenario.suppression.l_max,
        scenario.decoding,
        clock,
        &mut p.rng,
    );
    let v = derive_resource_vector(&trace, &scenario.cost_model, p.noise)?;
    Ok((trace, v, p.profile.kind))
}

/// Classifier seeded from a synthetic benign warmup set.
pub fn warm_classifier(scenario: &ScenarioConfig) -> Result<Classifier> {
    let n = scenario.classifier.warmup_size;
    let mut setup = stream(scenario.seed, u64::MAX, PURPOSE_WARMUP);
    let mut history = Vec::with_capacity(n);
    for _ in 0..n {
        let key: u64 = setup.random();
        let mut rng = stream(scenario.seed, key, PURPOSE_WARMUP);
        let profile = pick_profile(scenario, &scenario.benign_users, &mut rng);
        let plan = profile.plan(&mut rng);
        let noise = CostNoise::draw(scenario.cost_model.noise_sigma, &mut rng);
        let mut clock = SimClock::new();
        let trace = simulate_request(
            key,
            profile,
            &plan,
            None,
            scenario.suppression.l_max,
            scenario.decoding,
            &mut clock,
            &mut rng,
        );
        history.push(derive_resource_vector(&trace, &scenario.cost_model, noise)?);
    }
    Classifier::from_history(scenario.classifier.clone(), &history)
}

/// User ids in order, with their class label. Assignment is shuffled per seed
/// so that attackers do not always hold the smallest ids.
pub fn user_roster(scenario: &ScenarioConfig) -> Vec<(UserId, Label)> {
    let mut labels: Vec<Label> =
        std::iter::repeat_n(Label::Benign, scenario.benign_users.count as usize)
            .chain(std::iter::repeat_n(
                Label::Attack,
                scenario.attacker_users.count as usize,
            ))
            .collect();
    labels.shuffle(&mut stream(scenario.seed, u64::MAX, PURPOSE_SETUP));
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| (i as UserId, l))
        .collect()
}

/// Request selection policy behind a common round interface.
trait Selector {
    fn enqueue(&mut self, user: UserId, req: QueuedRequest);
    fn select(&mut self) -> Option<Vec<(UserId, QueuedRequest)>>;
    fn finish(&mut self, verdicts: &BTreeMap<UserId, RiskVerdict>) -> Result<()>;
    fn score(&self, user: UserId) -> Option<f64>;
    fn drain(&mut self) -> Vec<(UserId, QueuedRequest)>;
    fn waiting_users(&self) -> Vec<UserId>;
}

impl Selector for ReputationScheduler {
    fn enqueue(&mut self, user: UserId, req: QueuedRequest) {
        ReputationScheduler::enqueue(self, user, req)
    }
    fn select(&mut self) -> Option<Vec<(UserId, QueuedRequest)>> {
        self.select_round()
    }
    fn finish(&mut self, verdicts: &BTreeMap<UserId, RiskVerdict>) -> Result<()> {
        self.apply_round_updates(verdicts)
    }
    fn score(&self, user: UserId) -> Option<f64> {
        ReputationScheduler::score(self, user)
    }
    fn drain(&mut self) -> Vec<(UserId, QueuedRequest)> {
        ReputationScheduler::drain(self)
    }
    fn waiting_users(&self) -> Vec<UserId> {
        self.users()
            .filter(|u| !u.queue.is_empty())
            .map(|u| u.user_id)
            .collect()
    }
}

/// One global queue in arrival order.
struct Fcfs {
    n: usize,
    queue: VecDeque<(UserId, QueuedRequest)>,
}

impl Selector for Fcfs {
    fn enqueue(&mut self, user: UserId, req: QueuedRequest) {
        self.queue.push_back((user, req));
    }
    fn select(&mut self) -> Option<Vec<(UserId, QueuedRequest)>> {
        if self.queue.is_empty() {
            return None;
        }
        let k = self.n.min(self.queue.len());
        Some(self.queue.drain(..k).collect())
    }
    fn finish(&mut self, _: &BTreeMap<UserId, RiskVerdict>) -> Result<()> {
        Ok(())
    }
    fn score(&self, _: UserId) -> Option<f64> {
        None
    }
    fn drain(&mut self) -> Vec<(UserId, QueuedRequest)> {
        self.queue.drain(..).collect()
    }
    fn waiting_users(&self) -> Vec<UserId> {
        let mut u: Vec<UserId> = self.queue.iter().map(|(u, _)| *u).collect();
        u.sort_unstable();
        u.dedup();
        u
    }
}

/// Per-user queues visited cyclically in user-id order.
struct RoundRobin {
    n: usize,
    queues: BTreeMap<UserId, VecDeque<QueuedRequest>>,
    next: UserId,
}

impl Selector for RoundRobin {
    fn enqueue(&mut self, user: UserId, req: QueuedRequest) {
        self.queues.entry(user).or_default().push_back(req);
    }
    fn select(&mut self) -> Option<Vec<(UserId, QueuedRequest)>> {
        let order: Vec<UserId> = self
            .queues
            .range(self.next..)
            .chain(self.queues.range(..self.next))
            .filter(|(_, q)| !q.is_empty())
            .map(|(u, _)| *u)
            .take(self.n)
            .collect();
        let last = *order.last()?;
        self.next = last.wrapping_add(1);
        Some(
            order
                .into_iter()
                .map(|u| {
                    (
                        u,
                        self.queues
                            .get_mut(&u)
                            .expect("listed")
                            .pop_front()
                            .expect("non-empty"),
                    )
                })
                .collect(),
        )
    }
    fn finish(&mut self, _: &BTreeMap<UserId, RiskVerdict>) -> Result<()> {
        Ok(())
    }
    fn score(&self, _: UserId) -> Option<f64> {
        None
    }
    fn drain(&mut self) -> Vec<(UserId, QueuedRequest)> {
        let mut out = Vec::new();
        for (u, q) in self.queues.iter_mut() {
            out.extend(q.drain(..).map(|r| (*u, r)));
        }
        out
    }
    fn waiting_users(&self) -> Vec<UserId> {
        self.queues
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(u, _)| *u)
            .collect()
    }
}

/// Pending arrival, ordered by (time, sequence).
#[derive(Clone, Copy, Debug, PartialEq)]
struct Arrival {
    time: f64,
    seq: u64,
    user: UserId,
    request_id: RequestId,
}

impl Eq for Arrival {}

impl Ord for Arrival {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

struct UserRun {
    label: Label,
    issued: u32,
}

/// Runs the scenario under `policy` with the given components disabled.
/// Ablations only apply to OURS.
pub fn run_policy(
    scenario: &ScenarioConfig,
    policy: Policy,
    ablation: Ablation,
) -> Result<RunOutcome> {
    scenario.validate()?;
    let ablation = if policy == Policy::Ours {
        ablation
    } else {
        Ablation::NONE
    };
    let cfg = &scenario.scheduler;
    let s_ini = cfg.initial_score;
    let l_max = scenario.suppression.l_max;
    let reputation = policy == Policy::Ours && !ablation.polling;
    let suppress = policy == Policy::Ours && !ablation.suppression;

    let mut selector: Box<dyn Selector> = match policy {
        Policy::Ours if reputation => Box::new(ReputationScheduler::new(cfg.clone())),
        Policy::Fcfs => Box::new(Fcfs {
            n: cfg.parallelism,
            queue: VecDeque::new(),
        }),
        _ => Box::new(RoundRobin {
            n: cfg.parallelism,
            queues: BTreeMap::new(),
            next: 0,
        }),
    };
    let mut classifier = warm_classifier(scenario)?;

    let roster = user_roster(scenario);
    let mut users: BTreeMap<UserId, UserRun> = BTreeMap::new();
    let mut pending: BinaryHeap<Reverse<Arrival>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut arrival_of: BTreeMap<RequestId, f64> = BTreeMap::new();

    let mut push =
        |pending: &mut BinaryHeap<Reverse<Arrival>>, user: UserId, time: f64, id: RequestId| {
            pending.push(Reverse(Arrival {
                time,
                seq,
                user,
                request_id: id,
            }));
            seq += 1;
        };

    for &(user, label) in &roster {
        let class = match label {
            Label::Benign => &scenario.benign_users,
            Label::Attack => &scenario.attacker_users,
        };
        let mut run = UserRun { label, issued: 0 };
        let mut rng = stream(scenario.seed, user as u64, PURPOSE_SETUP);
        match &class.arrival {
            ArrivalModel::ClosedLoop { first_arrival, .. } => {
                let t = rng.random_range(first_arrival[0]..=first_arrival[1]);
                push(&mut pending, user, t, request_id(user, 0));
                run.issued = 1;
            }
            ArrivalModel::Sustained => {
                for k in 0..class.requests_per_user {
                    push(&mut pending, user, 0.0, request_id(user, k));
                }
                run.issued = class.requests_per_user;
            }
            ArrivalModel::Batch { window } => {
                let mut times: Vec<f64> = (0..class.requests_per_user)
                    .map(|_| rng.random_range(window[0]..=window[1]))
                    .collect();
                times.sort_by(f64::total_cmp);
                for (k, t) in times.into_iter().enumerate() {
                    push(&mut pending, user, t, request_id(user, k as u32));
                }
                run.issued = class.requests_per_user;
            }
        }
        users.insert(user, run);
    }

    let benign_total: u64 =
        scenario.benign_users.count as u64 * scenario.benign_users.requests_per_user as u64;
    let mut benign_done = 0u64;
    let mut clock = SimClock::new();
    let mut log = ExecutionLog::default();
    let mut overhead = OverheadStats::default();
    let mut waiting: BTreeMap<UserId, u64> = BTreeMap::new();
    let mut max_wait = 0u64;
    let mut round = 0u64;

    loop {
        while let Some(Reverse(a)) = pending.peek().copied() {
            if a.time > clock.now() {
                break;
            }
            pending.pop();
            arrival_of.insert(a.request_id, a.time);
            selector.enqueue(
                a.user,
                QueuedRequest {
                    request_id: a.request_id,
                    arrival: a.time,
                },
            );
        }
        if scenario.session.stop == StopRule::BenignComplete && benign_done >= benign_total {
            break;
        }

        let waiting_now = selector.waiting_users();
        let t0 = Instant::now();
        let picks = selector.select();
        let mut spent = t0.elapsed();
        let Some(picks) = picks else {
            match pending.peek() {
                Some(Reverse(a)) => {
                    clock.advance_to(a.time);
                    continue;
                }
                None => break,
            }
        };
        round += 1;
        if round > scenario.session.max_rounds {
            return Err(Error::RoundLimit(scenario.session.max_rounds));
        }

        let round_start = clock.now();
        let l_min = scenario.suppression.min_cap(classifier.avg_benign_out());
        let mut results = Vec::with_capacity(picks.len());
        let mut round_end = round_start;
        for (user, req) in &picks {
            let label = users[user].label;
            let class = match label {
                Label::Benign => &scenario.benign_users,
                Label::Attack => &scenario.attacker_users,
            };
            let score = selector.score(*user).unwrap_or(s_ini);
            let cap = suppress.then(|| cap_tokens(output_cap(score, s_ini, l_min, l_max as f64)));
            let mut worker_clock = SimClock::at(round_start);
            let (trace, v, kind) =
                generate(scenario, class, req.request_id, cap, &mut worker_clock)?;
            let t = Instant::now();
            let verdict = classifier.classify(&v)?;
            spent += t.elapsed();
            round_end = round_end.max(trace.end_time);
            results.push((*user, *req, label, kind, cap, trace, v, verdict, score));
        }

        let verdicts: BTreeMap<UserId, RiskVerdict> = results.iter().map(|r| (r.0, r.7)).collect();
        let t = Instant::now();
        if reputation {
            selector.finish(&verdicts)?;
        } else {
            selector.finish(&BTreeMap::new())?;
        }
        spent += t.elapsed();
        overhead.add(spent);
        clock.advance_to(round_end);

        let served_users: Vec<UserId> = results.iter().map(|r| r.0).collect();
        for u in waiting_now {
            let w = waiting.entry(u).or_insert(0);
            if served_users.contains(&u) {
                *w = 0;
            } else {
                *w += 1;
                max_wait = max_wait.max(*w);
            }
        }

        for (user, req, label, kind, cap, trace, v, verdict, score_before) in results {
            classifier.learn(&v, &verdict);
            let score_after = selector.score(user).unwrap_or(s_ini);
            log.records.push(LogRecord::Served(ServedRecord {
                round,
                user,
                request_id: req.request_id,
                label,
                profile: kind,
                action: verdict.action,
                i_c: verdict.i_c,
                i_t: verdict.i_t,
                region: verdict.region,
                score_before,
                score_after,
                cap,
                input_len: trace.input_len,
                output_len: trace.output_len(),
                terminated_by: trace.terminated_by.expect("finished"),
                arrival: req.arrival,
                start: trace.start_time,
                end: trace.end_time,
                vector: v,
            }));

            let run = users.get_mut(&user).expect("known user");
            match label {
                Label::Benign => {
                    benign_done += 1;
                    let class = &scenario.benign_users;
                    if let ArrivalModel::ClosedLoop { think_time, .. } = &class.arrival {
                        if run.issued < class.requests_per_user {
                            let id = request_id(user, run.issued);
                            let think = stream(scenario.seed, id, PURPOSE_THINK)
                                .random_range(think_time[0]..=think_time[1]);
                            push(&mut pending, user, trace.end_time + think, id);
                            run.issued += 1;
                        }
                    }
                }
                Label::Attack => {
                    let class = &scenario.attacker_users;
                    if let ArrivalModel::ClosedLoop { think_time, .. } = &class.arrival {
                        if run.issued < class.requests_per_user {
                            let id = request_id(user, run.issued);
                            let think = stream(scenario.seed, id, PURPOSE_THINK)
                                .random_range(think_time[0]..=think_time[1]);
                            push(&mut pending, user, trace.end_time + think, id);
                            run.issued += 1;
                        }
                    } else if matches!(class.arrival, ArrivalModel::Sustained) {
                        push(
                            &mut pending,
                            user,
                            trace.end_time,
                            request_id(user, run.issued),
                        );
                        run.issued += 1;
                    }
                }
            }
        }
    }

    let now = clock.now();
    let mut left = selector.drain();
    left.sort_by_key(|(_, r)| r.request_id);
    for (user, req) in left {
        log.records.push(LogRecord::Expired(ExpiredRecord {
            user,
            request_id: req.request_id,
            label: users[&user].label,
            arrival: arrival_of
                .get(&req.request_id)
                .copied()
                .unwrap_or(req.arrival),
            expired_at: now,
        }));
    }

    let label = match policy {
        Policy::Ours => ablation.label(),
        p => p.name().to_string(),
    };
    Ok(RunOutcome {
        label,
        log,
        classifier,
        overhead,
        max_wait_rounds: max_wait,
    })
}

/// Every request of every user generated once without suppression and
/// classified by the freshly warmed classifier. Attackers contribute
/// `requests_per_user` requests each, like benign users.
pub fn offline_detection(scenario: &ScenarioConfig) -> Result<Vec<(Label, RiskVerdict)>> {
    scenario.validate()?;
    let classifier = warm_classifier(scenario)?;
    let mut out = Vec::new();
    for (user, label) in user_roster(scenario) {
        let class = match label {
            Label::Benign => &scenario.benign_users,
            Label::Attack => &scenario.attacker_users,
        };
        for k in 0..class.requests_per_user {
            let mut clock = SimClock::new();
            let (_, v, _) = generate(scenario, class, request_id(user, k), None, &mut clock)?;
            out.push((label, classifier.classify(&v)?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ScenarioConfig {
        let mut s = ScenarioConfig::default_attack();
        s.benign_users.count = 3;
        s.benign_users.requests_per_user = 2;
        s.attacker_users.count = 1;
        s.attacker_users.requests_per_user = 2;
        s
    }

    #[test]
    fn policy_names_parse() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!(matches!(
            "lifo".parse::<Policy>(),
            Err(Error::UnknownPolicy(_))
        ));
    }

    #[test]
    fn ablation_list_parses() {
        let a = Ablation::parse_list(&["polling,suppression".into()]).unwrap();
        assert!(a.polling && a.suppression);
        assert!(matches!(
            Ablation::parse_list(&["cache".into()]),
            Err(Error::UnknownComponent(_))
        ));
    }

    #[test]
    fn runs_are_deterministic() {
        let s = tiny();
        for p in Policy::ALL {
            let a = run_policy(&s, p, Ablation::NONE).unwrap();
            let b = run_policy(&s, p, Ablation::NONE).unwrap();
            assert_eq!(a.log, b.log);
        }
    }

    #[test]
    fn every_benign_request_is_served() {
        let s = tiny();
        for p in Policy::ALL {
            let out = run_policy(&s, p, Ablation::NONE).unwrap();
            let benign = out
                .log
                .served()
                .filter(|r| r.label == Label::Benign)
                .count();
            assert_eq!(benign, 6);
            assert!(out.log.expired().all(|e| e.label == Label::Attack));
        }
    }

    #[test]
    fn log_round_trips_through_jsonl() {
        let out = run_policy(&tiny(), Policy::Ours, Ablation::NONE).unwrap();
        let text = out.log.to_jsonl().unwrap();
        let back = ExecutionLog::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, out.log);
    }

    #[test]
    fn round_robin_alternates() {
        let mut rr = RoundRobin {
            n: 1,
            queues: BTreeMap::new(),
            next: 0,
        };
        for k in 0..3 {
            rr.enqueue(
                0,
                QueuedRequest {
                    request_id: k,
                    arrival: k as f64,
                },
            );
            rr.enqueue(
                1,
                QueuedRequest {
                    request_id: 10 + k,
                    arrival: k as f64 + 0.5,
                },
            );
        }
        let order: Vec<UserId> = (0..6).map(|_| rr.select().unwrap()[0].0).collect();
        assert_eq!(order, vec![0, 1, 0, 1, 0, 1]);
    }
}
