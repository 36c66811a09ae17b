//! Resource index: consumption ratio I_c, tendency I_t, IQR fences, the
//! region taxonomy and the classifier state that ties them together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{Dim, ResourceVector};

/// Minimum history for an IQR fence.
pub const MIN_IQR_SAMPLES: usize = 4;

pub fn project(v: &ResourceVector, dims: &[Dim]) -> Result<Vec<f64>> {
    if dims.is_empty() {
        return Err(Error::EmptyProjection);
    }
    Ok(dims.iter().map(|&d| v.get(d)).collect())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// ‖current‖ / ‖reference‖ over the consumption dimensions.
pub fn consumption_index(current: &[f64], reference: &[f64]) -> Result<f64> {
    if current.len() != reference.len() {
        return Err(Error::LengthMismatch(current.len(), reference.len()));
    }
    let denom = norm(reference);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateReference);
    }
    Ok(norm(current) / denom)
}

/// Cosine similarity of the mean-centred vectors (Pearson correlation).
pub fn tendency_index(current: &[f64], reference: &[f64]) -> Result<f64> {
    if current.len() != reference.len() {
        return Err(Error::LengthMismatch(current.len(), reference.len()));
    }
    let center = |x: &[f64]| {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|a| a - mean).collect::<Vec<_>>()
    };
    let a = center(current);
    let b = center(reference);
    let (na, nb) = (norm(&a), norm(&b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateTendency);
    }
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IqrThresholds {
    pub lower: f64,
    pub upper: f64,
    pub lambda: f64,
}

impl IqrThresholds {
    pub fn from_quartiles(q1: f64, q3: f64, lambda: f64) -> Self {
        IqrThresholds {
            lower: (1.0 + lambda) * q1 - lambda * q3,
            upper: (1.0 + lambda) * q3 - lambda * q1,
            lambda,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

pub fn iqr_thresholds(samples: &[f64], lambda: f64) -> Result<IqrThresholds> {
    if samples.len() < MIN_IQR_SAMPLES {
        return Err(Error::InsufficientHistory {
            needed: MIN_IQR_SAMPLES,
            got: samples.len(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(IqrThresholds::from_quartiles(q1, q3, lambda))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    A,
    B,
    C,
    D,
    E,
    F,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Reward,
    MildPenalty,
    DosPenalty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskVerdict {
    pub i_c: f64,
    pub i_t: f64,
    pub region: Region,
    pub action: Action,
    /// Profile the request was compared against.
    pub cluster_id: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    pub cluster_id: usize,
    pub centroid: ResourceVector,
    pub sample_count: u64,
}

/// How "exceeding" a threshold is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExceedMode {
    /// Outside [α_l, α_u] on either side.
    #[default]
    TwoSided,
    /// I_c only above α_u, I_t only below α_l.
    OneSided,
}

/// The two tendency boundaries splitting the score space into three bands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TendencyBounds {
    /// Below this, a request lies in the low-tendency band (A/D).
    pub low: f64,
    /// At or above this, a request lies in the high-tendency band (C/F).
    pub high: f64,
}

impl TendencyBounds {
    /// Fences the benign I_t samples on each side of 0.5 separately.
    ///
    /// Without enough low-side history there is no low band, so `low` falls
    /// back to −1; without enough high-side history `high` falls back to 0.5.
    pub fn derive(i_t: &[f64], lambda: f64) -> Self {
        let upper: Vec<f64> = i_t.iter().copied().filter(|&x| x > 0.5).collect();
        let lower: Vec<f64> = i_t.iter().copied().filter(|&x| x <= 0.5).collect();
        let high = iqr_thresholds(&upper, lambda).map_or(0.5, |t| t.lower);
        let low = iqr_thresholds(&lower, lambda).map_or(-1.0, |t| t.upper);
        TendencyBounds {
            low: low.min(high),
            high,
        }
    }
}

/// Everything classify needs beyond the profiles and the two fences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionRules {
    pub bounds: TendencyBounds,
    pub exceed: ExceedMode,
    /// Divide consumption components by the reference centroid before the norm ratio.
    pub normalize_consumption: bool,
}

pub fn region_of(i_c: f64, i_t: f64, alpha_c: f64, bounds: TendencyBounds) -> Region {
    let high_consumption = i_c > alpha_c;
    let band = if i_t >= bounds.high {
        2
    } else if i_t < bounds.low {
        0
    } else {
        1
    };
    match (high_consumption, band) {
        (false, 0) => Region::A,
        (false, 1) => Region::B,
        (false, _) => Region::C,
        (true, 0) => Region::D,
        (true, 1) => Region::E,
        (true, _) => Region::F,
    }
}

pub fn action_of(inside_c: bool, inside_t: bool) -> Action {
    match (inside_c, inside_t) {
        (true, true) => Action::Reward,
        (false, false) => Action::DosPenalty,
        _ => Action::MildPenalty,
    }
}

/// Index of the profile with the highest tendency index, and that index.
pub fn nearest_profile(v: &ResourceVector, profiles: &[ReferenceProfile]) -> Result<(usize, f64)> {
    let cur = v.tendency();
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in profiles.iter().enumerate() {
        let it = tendency_index(&cur, &p.centroid.tendency())?;
        if best.is_none_or(|(_, b)| it > b) {
            best = Some((i, it));
        }
    }
    best.ok_or(Error::NotWarmedUp)
}

/// I_c of `v` against `reference`, optionally per-dimension normalized.
pub fn consumption_against(
    v: &ResourceVector,
    reference: &ResourceVector,
    normalize: bool,
) -> Result<f64> {
    let cur = v.consumption();
    let refc = reference.consumption();
    if !normalize {
        return consumption_index(&cur, &refc);
    }
    if refc.contains(&0.0) {
        return Err(Error::DegenerateReference);
    }
    let scaled: Vec<f64> = cur.iter().zip(&refc).map(|(c, r)| c / r).collect();
    consumption_index(&scaled, &[1.0; 3])
}

pub fn classify(
    v: &ResourceVector,
    profiles: &[ReferenceProfile],
    thr_c: &IqrThresholds,
    thr_t: &IqrThresholds,
    rules: &RegionRules,
) -> Result<RiskVerdict> {
    let (idx, i_t) = nearest_profile(v, profiles)?;
    let i_c = consumption_against(v, &profiles[idx].centroid, rules.normalize_consumption)?;
    let (inside_c, inside_t) = match rules.exceed {
        ExceedMode::TwoSided => (thr_c.contains(i_c), thr_t.contains(i_t)),
        ExceedMode::OneSided => (i_c <= thr_c.upper, i_t >= thr_t.lower),
    };
    Ok(RiskVerdict {
        i_c,
        i_t,
        region: region_of(i_c, i_t, thr_c.upper, rules.bounds),
        action: action_of(inside_c, inside_t),
        cluster_id: profiles[idx].cluster_id,
    })
}

/// Moves the verdict's centroid toward `v` by EMA. Returns false (and does
/// nothing) unless the verdict is a Reward.
pub fn update_reference(
    profiles: &mut [ReferenceProfile],
    v: &ResourceVector,
    verdict: &RiskVerdict,
    beta: f64,
) -> bool {
    if verdict.action != Action::Reward {
        return false;
    }
    let Some(p) = profiles
        .iter_mut()
        .find(|p| p.cluster_id == verdict.cluster_id)
    else {
        return false;
    };
    let c = p.centroid.to_array();
    let x = v.to_array();
    let mut out = [0.0; 5];
    for i in 0..5 {
        out[i] = if beta == 1.0 {
            x[i]
        } else {
            c[i] + beta * (x[i] - c[i])
        };
    }
    p.centroid = ResourceVector::from_array(out);
    p.sample_count += 1;
    true
}

fn mean_vector(vs: &[&ResourceVector]) -> ResourceVector {
    let mut acc = [0.0; 5];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v.to_array()) {
            *a += x;
        }
    }
    let n = vs.len() as f64;
    ResourceVector::from_array(acc.map(|a| a / n))
}

/// Groups benign history into `k` tendency clusters.
///
/// Farthest-first seeding (lowest best correlation to the chosen seeds), then
/// Lloyd iterations that assign by max tendency index and re-average. An
/// empty cluster keeps its previous centroid.
pub fn fit_profiles(
    history: &[ResourceVector],
    k: usize,
    iterations: usize,
) -> Result<Vec<ReferenceProfile>> {
    if history.is_empty() || k == 0 {
        return Err(Error::InsufficientHistory {
            needed: k.max(1),
            got: history.len(),
        });
    }
    let k = k.min(history.len());
    let mut centroids = vec![history[0]];
    while centroids.len() < k {
        let mut far: Option<(usize, f64)> = None;
        for (i, v) in history.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for c in &centroids {
                best = best.max(tendency_index(&v.tendency(), &c.tendency())?);
            }
            if far.is_none_or(|(_, f)| best < f) {
                far = Some((i, best));
            }
        }
        centroids.push(history[far.expect("history non-empty").0]);
    }

    let mut counts = vec![0u64; k];
    for _ in 0..iterations.max(1) {
        let profiles: Vec<ReferenceProfile> = centroids
            .iter()
            .enumerate()
            .map(|(i, c)| ReferenceProfile {
                cluster_id: i,
                centroid: *c,
                sample_count: 1,
            })
            .collect();
        let mut groups: Vec<Vec<&ResourceVector>> = vec![Vec::new(); k];
        for v in history {
            groups[nearest_profile(v, &profiles)?.0].push(v);
        }
        let next: Vec<ResourceVector> = groups
            .iter()
            .zip(&centroids)
            .map(|(g, c)| if g.is_empty() { *c } else { mean_vector(g) })
            .collect();
        counts = groups.iter().map(|g| g.len() as u64).collect();
        if next == centroids {
            break;
        }
        centroids = next;
    }
    Ok(centroids
        .into_iter()
        .zip(counts)
        .enumerate()
        .map(|(i, (centroid, n))| ReferenceProfile {
            cluster_id: i,
            centroid,
            sample_count: n.max(1),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Number of benign reference clusters.
    pub clusters: usize,
    pub lambda: f64,
    /// EMA factor for centroid updates on Reward.
    pub beta: f64,
    pub warmup_size: usize,
    pub lloyd_iterations: usize,
    pub exceed_mode: ExceedMode,
    pub normalize_consumption: bool,
    /// Constant overrides for the derived tendency boundaries.
    pub tendency_low: Option<f64>,
    pub tendency_high: Option<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            clusters: 2,
            lambda: 1.5,
            beta: 0.05,
            warmup_size: 40,
            lloyd_iterations: 10,
            exceed_mode: ExceedMode::TwoSided,
            normalize_consumption: false,
            tendency_low: None,
            tendency_high: None,
        }
    }
}

/// Fitted classifier state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fitted {
    pub profiles: Vec<ReferenceProfile>,
    pub consumption: IqrThresholds,
    pub tendency: IqrThresholds,
    pub bounds: TendencyBounds,
}

/// Classifier state: reference profiles, fences and the benign output mean.
///
/// Until `warmup_size` vectors have been observed every request is rewarded
/// and buffered; the buffer then seeds the profiles and fences, which stay
/// fixed while centroids keep following rewarded traffic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub fitted: Option<Fitted>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warmup: Vec<ResourceVector>,
    pub benign_out_sum: f64,
    pub benign_out_count: u64,
}

impl Classifier {
    pub fn new(config: ClassifierConfig) -> Self {
        Classifier {
            config,
            fitted: None,
            warmup: Vec::new(),
            benign_out_sum: 0.0,
            benign_out_count: 0,
        }
    }

    pub fn from_history(config: ClassifierConfig, history: &[ResourceVector]) -> Result<Self> {
        let mut c = Classifier::new(config);
        c.warmup = history.to_vec();
        c.benign_out_sum = history.iter().map(|v| v.l_out).sum();
        c.benign_out_count = history.len() as u64;
        c.fit()?;
        Ok(c)
    }

    pub fn is_ready(&self) -> bool {
        self.fitted.is_some()
    }

    fn fit(&mut self) -> Result<()> {
        let cfg = &self.config;
        let profiles = fit_profiles(&self.warmup, cfg.clusters, cfg.lloyd_iterations)?;
        let mut ics = Vec::with_capacity(self.warmup.len());
        let mut its = Vec::with_capacity(self.warmup.len());
        for v in &self.warmup {
            let (idx, it) = nearest_profile(v, &profiles)?;
            ics.push(consumption_against(
                v,
                &profiles[idx].centroid,
                cfg.normalize_consumption,
            )?);
            its.push(it);
        }
        let mut bounds = TendencyBounds::derive(&its, cfg.lambda);
        if let Some(h) = cfg.tendency_high {
            bounds.high = h;
        }
        if let Some(l) = cfg.tendency_low {
            bounds.low = l;
        }
        bounds.low = bounds.low.min(bounds.high);
        self.fitted = Some(Fitted {
            profiles,
            consumption: iqr_thresholds(&ics, cfg.lambda)?,
            tendency: iqr_thresholds(&its, cfg.lambda)?,
            bounds,
        });
        self.warmup.clear();
        Ok(())
    }

    pub fn rules(&self) -> Option<RegionRules> {
        self.fitted.as_ref().map(|f| RegionRules {
            bounds: f.bounds,
            exceed: self.config.exceed_mode,
            normalize_consumption: self.config.normalize_consumption,
        })
    }

    pub fn classify(&self, v: &ResourceVector) -> Result<RiskVerdict> {
        let f = self.fitted.as_ref().ok_or(Error::NotWarmedUp)?;
        classify(
            v,
            &f.profiles,
            &f.consumption,
            &f.tendency,
            &self.rules().expect("fitted"),
        )
    }

    /// Classifies `v`, or during warmup buffers it and returns a nominal Reward.
    pub fn observe(&mut self, v: &ResourceVector) -> Result<RiskVerdict> {
        if self.is_ready() {
            return self.classify(v);
        }
        self.warmup.push(*v);
        self.benign_out_sum += v.l_out;
        self.benign_out_count += 1;
        if self.warmup.len() >= self.config.warmup_size.max(MIN_IQR_SAMPLES) {
            self.fit()?;
        }
        Ok(RiskVerdict {
            i_c: 1.0,
            i_t: 1.0,
            region: Region::C,
            action: Action::Reward,
            cluster_id: 0,
        })
    }

    /// Applies the end-of-round reference update for one finished request.
    pub fn learn(&mut self, v: &ResourceVector, verdict: &RiskVerdict) {
        if verdict.action != Action::Reward {
            return;
        }
        if let Some(f) = self.fitted.as_mut() {
            if update_reference(&mut f.profiles, v, verdict, self.config.beta) {
                self.benign_out_sum += v.l_out;
                self.benign_out_count += 1;
            }
        }
    }

    /// Running mean of benign output length (L_out^ave).
    pub fn avg_benign_out(&self) -> f64 {
        if self.benign_out_count == 0 {
            0.0
        } else {
            self.benign_out_sum / self.benign_out_count as f64
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
