//! Declarative workload description, loaded from JSON.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gensim::{Decoding, GenerationProfile};
use crate::index::ClassifierConfig;
use crate::scheduler::SchedulerConfig;
use crate::suppression::SuppressionConfig;
use crate::telemetry::CostModel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedProfile {
    pub profile: String,
    pub weight: f64,
}

/// How a user class submits requests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalModel {
    /// First request uniform in `first_arrival`; each later one follows the
    /// previous response after a think time uniform in `think_time`.
    ClosedLoop {
        first_arrival: [f64; 2],
        think_time: [f64; 2],
    },
    /// Keeps `requests_per_user` requests outstanding; every completion is
    /// replaced at once. Runs until the session stops.
    Sustained,
    /// All requests arrive uniformly within `window`.
    Batch { window: [f64; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserClass {
    pub count: u32,
    pub requests_per_user: u32,
    pub profiles: Vec<WeightedProfile>,
    pub arrival: ArrivalModel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once every benign request has completed; expire what is left.
    #[default]
    BenignComplete,
    /// Stop when no work remains.
    AllComplete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub stop: StopRule,
    pub max_rounds: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            stop: StopRule::BenignComplete,
            max_rounds: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub benign_users: UserClass,
    pub attacker_users: UserClass,
    pub profiles: BTreeMap<String, GenerationProfile>,
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub suppression: SuppressionConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub session: SessionConfig,
}

fn pointer_from_path(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        let part = match seg {
            Segment::Seq { index } => index.to_string(),
            Segment::Map { key } => key.clone(),
            Segment::Enum { variant } => variant.clone(),
            Segment::Unknown => continue,
        };
        out.push('/');
        out.push_str(&part.replace('~', "~0").replace('/', "~1"));
    }
    out
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::validation("", format!("not valid JSON: {e}")))?;
        match value.get("schema_version") {
            None => return Err(Error::validation("/schema_version", "missing")),
            Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
                return Err(Error::validation(
                    "/schema_version",
                    format!("unsupported version {v}, expected {SCHEMA_VERSION}"),
                ))
            }
            _ => {}
        }
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let pointer = pointer_from_path(e.path());
            Error::validation(pointer, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let l_max = self.suppression.l_max;
        for (name, p) in &self.profiles {
            p.validate(&format!("/profiles/{name}"), l_max)?;
        }
        self.validate_class("/benign_users", &self.benign_users, false)?;
        self.validate_class("/attacker_users", &self.attacker_users, true)?;
        if self.benign_users.count + self.attacker_users.count == 0 {
            return Err(Error::validation(
                "/benign_users/count",
                "scenario needs at least one user",
            ));
        }
        if self.benign_users.profiles.is_empty() {
            return Err(Error::validation(
                "/benign_users/profiles",
                "benign profiles are required to seed the classifier",
            ));
        }
        let sustained = matches!(self.attacker_users.arrival, ArrivalModel::Sustained)
            && self.attacker_users.count > 0;
        let benign_requests =
            self.benign_users.count as u64 * self.benign_users.requests_per_user as u64;
        match self.session.stop {
            StopRule::BenignComplete if benign_requests == 0 => {
                return Err(Error::validation(
                    "/session/stop",
                    "benign_complete needs at least one benign request",
                ))
            }
            StopRule::AllComplete if sustained => {
                return Err(Error::validation(
                    "/session/stop",
                    "sustained attackers never finish; use benign_complete",
                ))
            }
            _ => {}
        }
        if self.session.max_rounds == 0 {
            return Err(Error::validation(
                "/session/max_rounds",
                "must be at least 1",
            ));
        }
        self.scheduler.validate("/scheduler")?;
        self.suppression.validate("/suppression")?;
        let c = &self.classifier;
        if c.clusters == 0 {
            return Err(Error::validation(
                "/classifier/clusters",
                "must be at least 1",
            ));
        }
        if !(c.lambda >= 0.0 && c.lambda.is_finite()) {
            return Err(Error::validation(
                "/classifier/lambda",
                "must be non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&c.beta) {
            return Err(Error::validation("/classifier/beta", "must be in [0, 1]"));
        }
        if c.warmup_size < crate::index::MIN_IQR_SAMPLES {
            return Err(Error::validation(
                "/classifier/warmup_size",
                "must be at least 4",
            ));
        }
        if !(self.cost_model.noise_sigma >= 0.0 && self.cost_model.noise_sigma.is_finite()) {
            return Err(Error::validation(
                "/cost_model/noise_sigma",
                "must be non-negative",
            ));
        }
        if let Decoding::Sampling { temperature } = self.decoding {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::validation(
                    "/decoding/temperature",
                    "must be positive",
                ));
            }
        }
        Ok(())
    }

    fn validate_class(&self, base: &str, class: &UserClass, attacker: bool) -> Result<()> {
        if class.count > 0 && class.requests_per_user == 0 {
            return Err(Error::validation(
                format!("{base}/requests_per_user"),
                "must be at least 1",
            ));
        }
        if class.count > 0 && class.profiles.is_empty() {
            return Err(Error::validation(
                format!("{base}/profiles"),
                "needs at least one profile",
            ));
        }
        let mut total = 0.0;
        for (i, wp) in class.profiles.iter().enumerate() {
            let Some(p) = self.profiles.get(&wp.profile) else {
                return Err(Error::validation(
                    format!("{base}/profiles/{i}/profile"),
                    format!("unknown profile `{}`", wp.profile),
                ));
            };
            if p.kind.is_attack() != attacker {
                return Err(Error::validation(
                    format!("{base}/profiles/{i}/profile"),
                    format!(
                        "profile `{}` has kind {:?}, which does not fit this class",
                        wp.profile, p.kind
                    ),
                ));
            }
            if !(wp.weight > 0.0 && wp.weight.is_finite()) {
                return Err(Error::validation(
                    format!("{base}/profiles/{i}/weight"),
                    "must be positive",
                ));
            }
            total += wp.weight;
        }
        if !class.profiles.is_empty() && total <= 0.0 {
            return Err(Error::validation(
                format!("{base}/profiles"),
                "weights must sum to a positive value",
            ));
        }
        let range_ok = |r: [f64; 2]| r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite();
        match &class.arrival {
            ArrivalModel::ClosedLoop {
                first_arrival,
                think_time,
            } => {
                if !range_ok(*first_arrival) {
                    return Err(Error::validation(
                        format!("{base}/arrival/first_arrival"),
                        "must be an ordered non-negative range",
                    ));
                }
                if !range_ok(*think_time) {
                    return Err(Error::validation(
                        format!("{base}/arrival/think_time"),
                        "must be an ordered non-negative range",
                    ));
                }
            }
            ArrivalModel::Batch { window } => {
                if !range_ok(*window) {
                    return Err(Error::validation(
                        format!("{base}/arrival/window"),
                        "must be an ordered non-negative range",
                    ));
                }
            }
            ArrivalModel::Sustained => {}
        }
        Ok(())
    }

    /// Default attack scenario: 10 benign users × 5 requests against 2
    /// sustained attackers, n = 1, L^max = 4096.
    pub fn default_attack() -> Self {
        let mut profiles = BTreeMap::new();
        profiles.insert(
            "benign_short".to_string(),
            GenerationProfile::benign_short(),
        );
        profiles.insert(
            "benign_long_context".to_string(),
            GenerationProfile::benign_long_context(),
        );
        profiles.insert(
            "attack_long_output".to_string(),
            GenerationProfile::attack_long_output(),
        );
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            name: "default-attack".into(),
            seed: 42,
            benign_users: UserClass {
                count: 10,
                requests_per_user: 5,
                profiles: vec![
                    WeightedProfile {
                        profile: "benign_short".into(),
                        weight: 0.7,
                    },
                    WeightedProfile {
                        profile: "benign_long_context".into(),
                        weight: 0.3,
                    },
                ],
                arrival: ArrivalModel::ClosedLoop {
                    first_arrival: [0.0, 2.0],
                    think_time: [5.0, 15.0],
                },
            },
            attacker_users: UserClass {
                count: 2,
                requests_per_user: 5,
                profiles: vec![WeightedProfile {
                    profile: "attack_long_output".into(),
                    weight: 1.0,
                }],
                arrival: ArrivalModel::Sustained,
            },
            profiles,
            cost_model: CostModel::default(),
            scheduler: SchedulerConfig::default(),
            suppression: SuppressionConfig::default(),
            classifier: ClassifierConfig::default(),
            decoding: Decoding::Greedy,
            session: SessionConfig::default(),
        }
    }

    /// Same population without attackers.
    pub fn benign_only() -> Self {
        let mut s = Self::default_attack();
        s.name = "benign-only".into();
        s.attacker_users.count = 0;
        s
    }

    /// Two attackers against three benign users.
    pub fn high_attack_ratio() -> Self {
        let mut s = Self::default_attack();
        s.name = "high-attack-ratio".into();
        s.benign_users.count = 3;
        s
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "default-attack" => Some(Self::default_attack()),
            "benign-only" => Some(Self::benign_only()),
            "high-attack-ratio" => Some(Self::high_attack_ratio()),
            _ => None,
        }
    }

    pub const BUILTIN_NAMES: [&'static str; 3] =
        ["default-attack", "benign-only", "high-attack-ratio"];
}
