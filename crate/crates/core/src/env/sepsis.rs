//! Sepsis treatment with an AI recommender and an overriding clinician.
//!
//! Patient state: heart rate, systolic blood pressure, oxygen saturation,
//! glucose and a diabetes flag. State 0 is death, 181 is discharge and the
//! 180 alive states sit in between. A treatment is three bits: antibiotics,
//! vasopressors and mechanical ventilation, numbered `A*4 + V*2 + E`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::effects::Outcome;
use crate::error::{invalid, Error, Result};
use crate::model::{
    AgentPolicy, AgentSpec, JointPolicy, MmdpSpec, Ordering, StateId, TotalOrdering, Trajectory,
    TransitionTable,
};
use crate::solver::{finite_horizon, policy_iteration, MdpView};

pub const DEATH: StateId = 0;
pub const DISCHARGE: StateId = 181;
pub const NUM_STATES: usize = 182;
pub const NUM_TREATMENTS: usize = 8;
pub const NOOP: u32 = 8;
pub const AI: usize = 0;
pub const CLINICIAN: usize = 1;

const ASSET_SCHEMA: &str = "sepsis-transitions/1";
const EMBEDDED_ASSET: &[u8] = include_bytes!("../../assets/sepsis_transitions.json");
/// SHA-256 of the bundled transition asset.
pub const ASSET_SHA256: &str = "c73a502f87940abdd19f2a13fff2c4b9ac562f39f29a7c99483bd05d6c976d33";

/// Levels: heart rate and blood pressure 0 low, 1 normal, 2 high; oxygen 0
/// low, 1 normal; glucose 0..=4 with 2 normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vitals {
    pub hr: u8,
    pub bp: u8,
    pub o2: u8,
    pub glucose: u8,
    pub diabetic: bool,
}

impl Vitals {
    pub fn id(self) -> StateId {
        let k = (((self.hr as u32 * 3 + self.bp as u32) * 2 + self.o2 as u32) * 5
            + self.glucose as u32)
            * 2
            + self.diabetic as u32;
        1 + k
    }

    pub fn from_id(state: StateId) -> Option<Self> {
        if state == DEATH || state >= DISCHARGE {
            return None;
        }
        let mut k = state - 1;
        let diabetic = k % 2 == 1;
        k /= 2;
        let glucose = (k % 5) as u8;
        k /= 5;
        let o2 = (k % 2) as u8;
        k /= 2;
        Some(Self {
            hr: (k / 3) as u8,
            bp: (k % 3) as u8,
            o2,
            glucose,
            diabetic,
        })
    }

    pub fn abnormal(self) -> usize {
        (self.hr != 1) as usize
            + (self.bp != 1) as usize
            + (self.o2 != 1) as usize
            + (self.glucose != 2) as usize
    }

    pub fn all() -> impl Iterator<Item = Vitals> {
        (1..DISCHARGE).map(|s| Vitals::from_id(s).expect("alive"))
    }
}

pub fn state_name(state: StateId) -> String {
    match Vitals::from_id(state) {
        None if state == DEATH => "death".into(),
        None => "discharge".into(),
        Some(v) => format!(
            "hr{}bp{}o{}g{}d{}",
            v.hr, v.bp, v.o2, v.glucose, v.diabetic as u8
        ),
    }
}

pub fn treatment_name(t: u32) -> String {
    if t == NOOP {
        return "noop".into();
    }
    let mut s = String::new();
    for (bit, c) in [(4, 'A'), (2, 'V'), (1, 'E')] {
        if t & bit != 0 {
            s.push(c);
        }
    }
    if s.is_empty() {
        "none".into()
    } else {
        s
    }
}

pub fn has_antibiotics(t: u32) -> bool {
    t < NOOP && t & 4 != 0
}

pub fn has_vasopressors(t: u32) -> bool {
    t < NOOP && t & 2 != 0
}

/// Parameters of the vital-sign dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SepsisDynamics {
    /// Chance an untreated vital moves one level (half up, half down).
    pub fluctuation: f64,
    pub glucose_fluctuation: f64,
    pub glucose_fluctuation_diabetic: f64,
    pub antibiotics_hr_high_to_normal: f64,
    pub antibiotics_bp_high_to_normal: f64,
    pub vaso_bp_low_to_normal: f64,
    pub vaso_bp_normal_to_high: f64,
    pub vaso_diabetic_bp_low_to_normal: f64,
    pub vaso_diabetic_bp_low_to_high: f64,
    pub vaso_diabetic_bp_normal_to_high: f64,
    pub vaso_diabetic_glucose_up: f64,
    pub vent_o2_low_to_normal: f64,
    pub diabetes_prevalence: f64,
    /// Chance each vital starts abnormal, before conditioning on one or two
    /// abnormal vitals.
    pub initial_abnormal: f64,
}

impl Default for SepsisDynamics {
    fn default() -> Self {
        Self {
            fluctuation: 0.1,
            glucose_fluctuation: 0.1,
            glucose_fluctuation_diabetic: 0.3,
            antibiotics_hr_high_to_normal: 0.5,
            antibiotics_bp_high_to_normal: 0.5,
            vaso_bp_low_to_normal: 0.7,
            vaso_bp_normal_to_high: 0.7,
            vaso_diabetic_bp_low_to_normal: 0.5,
            vaso_diabetic_bp_low_to_high: 0.4,
            vaso_diabetic_bp_normal_to_high: 0.9,
            vaso_diabetic_glucose_up: 0.5,
            vent_o2_low_to_normal: 0.7,
            diabetes_prevalence: 0.2,
            initial_abnormal: 0.5,
        }
    }
}

type LevelDist = Vec<(u8, f64)>;

fn fluctuate(level: u8, max: u8, f: f64) -> LevelDist {
    let up = if level < max { level + 1 } else { level };
    let down = if level > 0 { level - 1 } else { level };
    vec![(level, 1.0 - f), (up, f / 2.0), (down, f / 2.0)]
}

fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

impl SepsisDynamics {
    /// Antibiotics made more effective and vasopressors less.
    pub fn perturbed(&self, antibiotics_delta: f64, vasopressor_delta: f64) -> Self {
        let mut p = self.clone();
        p.antibiotics_hr_high_to_normal =
            clip01(p.antibiotics_hr_high_to_normal + antibiotics_delta);
        p.antibiotics_bp_high_to_normal =
            clip01(p.antibiotics_bp_high_to_normal + antibiotics_delta);
        p.vaso_bp_low_to_normal = clip01(p.vaso_bp_low_to_normal - vasopressor_delta);
        p.vaso_diabetic_bp_low_to_normal =
            clip01(p.vaso_diabetic_bp_low_to_normal - vasopressor_delta);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.fluctuation,
            self.glucose_fluctuation,
            self.glucose_fluctuation_diabetic,
            self.antibiotics_hr_high_to_normal,
            self.antibiotics_bp_high_to_normal,
            self.vaso_bp_low_to_normal,
            self.vaso_bp_normal_to_high,
            self.vaso_diabetic_bp_low_to_normal,
            self.vaso_diabetic_bp_low_to_high,
            self.vaso_diabetic_bp_normal_to_high,
            self.vaso_diabetic_glucose_up,
            self.vent_o2_low_to_normal,
            self.diabetes_prevalence,
            self.initial_abnormal,
        ];
        if fields.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("sepsis dynamics parameters must lie in [0, 1]"));
        }
        if self.vaso_diabetic_bp_low_to_normal + self.vaso_diabetic_bp_low_to_high > 1.0 {
            return Err(invalid(
                "diabetic vasopressor outcomes exceed probability 1",
            ));
        }
        Ok(())
    }

    fn hr(&self, v: Vitals, t: u32) -> LevelDist {
        if has_antibiotics(t) {
            if v.hr == 2 {
                let p = self.antibiotics_hr_high_to_normal;
                return vec![(1, p), (2, 1.0 - p)];
            }
            return vec![(v.hr, 1.0)];
        }
        fluctuate(v.hr, 2, self.fluctuation)
    }

    fn bp(&self, v: Vitals, t: u32) -> LevelDist {
        let antibiotic_fix = || {
            let p = self.antibiotics_bp_high_to_normal;
            if has_antibiotics(t) {
                vec![(1, p), (2, 1.0 - p)]
            } else {
                vec![(2, 1.0)]
            }
        };
        if has_vasopressors(t) {
            return match (v.bp, v.diabetic) {
                (0, false) => vec![
                    (1, self.vaso_bp_low_to_normal),
                    (0, 1.0 - self.vaso_bp_low_to_normal),
                ],
                (0, true) => vec![
                    (1, self.vaso_diabetic_bp_low_to_normal),
                    (2, self.vaso_diabetic_bp_low_to_high),
                    (
                        0,
                        1.0 - self.vaso_diabetic_bp_low_to_normal
                            - self.vaso_diabetic_bp_low_to_high,
                    ),
                ],
                (1, false) => vec![
                    (2, self.vaso_bp_normal_to_high),
                    (1, 1.0 - self.vaso_bp_normal_to_high),
                ],
                (1, true) => vec![
                    (2, self.vaso_diabetic_bp_normal_to_high),
                    (1, 1.0 - self.vaso_diabetic_bp_normal_to_high),
                ],
                _ => antibiotic_fix(),
            };
        }
        if has_antibiotics(t) {
            return if v.bp == 2 {
                antibiotic_fix()
            } else {
                vec![(v.bp, 1.0)]
            };
        }
        fluctuate(v.bp, 2, self.fluctuation)
    }

    fn o2(&self, v: Vitals, t: u32) -> LevelDist {
        if t < NOOP && t & 1 != 0 {
            if v.o2 == 0 {
                return vec![
                    (1, self.vent_o2_low_to_normal),
                    (0, 1.0 - self.vent_o2_low_to_normal),
                ];
            }
            return vec![(1, 1.0)];
        }
        fluctuate(v.o2, 1, self.fluctuation)
    }

    fn glucose(&self, v: Vitals, t: u32) -> LevelDist {
        if v.diabetic && has_vasopressors(t) {
            let up = (v.glucose + 1).min(4);
            return vec![
                (up, self.vaso_diabetic_glucose_up),
                (v.glucose, 1.0 - self.vaso_diabetic_glucose_up),
            ];
        }
        let f = if v.diabetic {
            self.glucose_fluctuation_diabetic
        } else {
            self.glucose_fluctuation
        };
        fluctuate(v.glucose, 4, f)
    }

    /// `T(.|state, treatment)` as a sorted sparse row.
    pub fn row(&self, state: StateId, treatment: u32) -> Vec<(StateId, f64)> {
        let Some(v) = Vitals::from_id(state) else {
            return vec![(state, 1.0)];
        };
        let mut acc: BTreeMap<StateId, f64> = BTreeMap::new();
        for &(hr, p1) in &self.hr(v, treatment) {
            for &(bp, p2) in &self.bp(v, treatment) {
                for &(o2, p3) in &self.o2(v, treatment) {
                    for &(glucose, p4) in &self.glucose(v, treatment) {
                        let p = p1 * p2 * p3 * p4;
                        if p <= 0.0 {
                            continue;
                        }
                        let next = Vitals {
                            hr,
                            bp,
                            o2,
                            glucose,
                            diabetic: v.diabetic,
                        };
                        let id = match next.abnormal() {
                            k if k >= 3 => DEATH,
                            0 if treatment == 0 => DISCHARGE,
                            _ => next.id(),
                        };
                        *acc.entry(id).or_insert(0.0) += p;
                    }
                }
            }
        }
        acc.into_iter().map(|(s, p)| (s, p.min(1.0))).collect()
    }

    /// Initial distribution over the 182 states: each vital abnormal with
    /// `initial_abnormal` (spread over its abnormal levels), conditioned on
    /// one or two abnormal vitals.
    pub fn initial(&self) -> Vec<f64> {
        let q = self.initial_abnormal;
        let level = |l: u8, normal: u8, levels: u8| {
            if l == normal {
                1.0 - q
            } else {
                q / (levels - 1) as f64
            }
        };
        let mut probs = vec![0.0; NUM_STATES];
        for v in Vitals::all() {
            if !(1..=2).contains(&v.abnormal()) {
                continue;
            }
            let d = if v.diabetic {
                self.diabetes_prevalence
            } else {
                1.0 - self.diabetes_prevalence
            };
            probs[v.id() as usize] = d
                * level(v.hr, 1, 3)
                * level(v.bp, 1, 3)
                * level(v.o2, 1, 2)
                * level(v.glucose, 2, 5);
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        probs
    }

    pub fn table(&self) -> SepsisTransitions {
        let rows = (0..NUM_STATES as StateId)
            .flat_map(|s| (0..NUM_TREATMENTS as u32).map(move |t| (s, t)))
            .map(|(s, t)| self.row(s, t))
            .collect();
        SepsisTransitions {
            params: Some(self.clone()),
            initial: self.initial(),
            rows,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssetRow {
    state: StateId,
    treatment: u32,
    next: Vec<(StateId, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssetFile {
    schema: String,
    params: Option<SepsisDynamics>,
    initial: Vec<f64>,
    rows: Vec<AssetRow>,
}

/// Transition table keyed by `(state, treatment)` plus the initial
/// distribution and, when known, the generating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SepsisTransitions {
    pub params: Option<SepsisDynamics>,
    pub initial: Vec<f64>,
    /// Row of `(state, treatment)` at `state * 8 + treatment`.
    pub rows: Vec<Vec<(StateId, f64)>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl SepsisTransitions {
    pub fn row(&self, state: StateId, treatment: u32) -> &[(StateId, f64)] {
        &self.rows[state as usize * NUM_TREATMENTS + treatment as usize]
    }

    /// Canonical JSON: one row per line.
    pub fn to_json(&self) -> String {
        let head = serde_json::json!({ "schema": ASSET_SCHEMA, "params": self.params, "initial": self.initial });
        let mut out = String::from("{\n");
        for key in ["schema", "params", "initial"] {
            out.push_str(&format!(
                "  \"{key}\": {},\n",
                serde_json::to_string(&head[key]).expect("serializable")
            ));
        }
        out.push_str("  \"rows\": [\n");
        for (k, next) in self.rows.iter().enumerate() {
            let row = AssetRow {
                state: (k / NUM_TREATMENTS) as StateId,
                treatment: (k % NUM_TREATMENTS) as u32,
                next: next.clone(),
            };
            let sep = if k + 1 == self.rows.len() { "" } else { "," };
            out.push_str(&format!(
                "    {}{sep}\n",
                serde_json::to_string(&row).expect("serializable")
            ));
        }
        out.push_str("  ]\n}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: AssetFile = serde_json::from_str(text)?;
        if file.schema != ASSET_SCHEMA {
            return Err(Error::Asset(format!(
                "unsupported schema `{}`",
                file.schema
            )));
        }
        if file.initial.len() != NUM_STATES {
            return Err(Error::Asset(format!(
                "initial distribution has {} entries, expected {NUM_STATES}",
                file.initial.len()
            )));
        }
        crate::model::check_probabilities("initial distribution", &file.initial)?;
        let mut rows: Vec<Option<Vec<(StateId, f64)>>> = vec![None; NUM_STATES * NUM_TREATMENTS];
        for r in file.rows {
            if r.state as usize >= NUM_STATES || r.treatment as usize >= NUM_TREATMENTS {
                return Err(Error::Asset(format!(
                    "row key ({}, {}) is out of range",
                    r.state, r.treatment
                )));
            }
            if r.next.iter().any(|&(s, _)| s as usize >= NUM_STATES) {
                return Err(Error::Asset(format!(
                    "row ({}, {}) points outside the state space",
                    r.state, r.treatment
                )));
            }
            let label = format!(
                "T(.|{}, {})",
                state_name(r.state),
                treatment_name(r.treatment)
            );
            crate::model::check_probabilities(
                &label,
                &r.next.iter().map(|e| e.1).collect::<Vec<_>>(),
            )?;
            let slot = &mut rows[r.state as usize * NUM_TREATMENTS + r.treatment as usize];
            if slot.is_some() {
                return Err(Error::Asset(format!(
                    "duplicate row ({}, {})",
                    r.state, r.treatment
                )));
            }
            *slot = Some(r.next);
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(k, r)| {
                r.ok_or_else(|| {
                    Error::Asset(format!(
                        "missing row ({}, {})",
                        k / NUM_TREATMENTS,
                        k % NUM_TREATMENTS
                    ))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            params: file.params,
            initial: file.initial,
            rows,
        })
    }

    /// Loads an asset, checking its SHA-256 when `expected` is given.
    pub fn load(path: &Path, expected: Option<&str>) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Asset(format!("cannot read {}: {e}", path.display())))?;
        if let Some(want) = expected {
            let got = sha256_hex(&bytes);
            if !got.eq_ignore_ascii_case(want) {
                return Err(Error::Asset(format!(
                    "checksum mismatch for {}: expected {want}, found {got}",
                    path.display()
                )));
            }
        }
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Asset(e.to_string()))?;
        Self::from_json(text)
    }

    /// The bundled asset.
    pub fn embedded() -> Result<Self> {
        Self::from_json(
            std::str::from_utf8(EMBEDDED_ASSET).map_err(|e| Error::Asset(e.to_string()))?,
        )
    }

    pub fn embedded_bytes() -> &'static [u8] {
        EMBEDDED_ASSET
    }

    /// Single-agent view with rewards +1 on discharge and -1 on death.
    pub fn mdp(&self, gamma: f64) -> MdpView {
        let transitions = self.rows.clone();
        let mut entry = vec![0.0; NUM_STATES];
        entry[DEATH as usize] = -1.0;
        entry[DISCHARGE as usize] = 1.0;
        let mut absorbing = vec![false; NUM_STATES];
        absorbing[DEATH as usize] = true;
        absorbing[DISCHARGE as usize] = true;
        MdpView::from_entry_rewards(NUM_TREATMENTS, transitions, &entry, &absorbing, gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SepsisEnvConfig {
    pub horizon: usize,
    /// Transition asset; the bundled one when absent.
    pub asset: Option<PathBuf>,
    pub asset_sha256: Option<String>,
    pub antibiotics_delta: f64,
    pub vasopressor_delta: f64,
    pub gamma: f64,
    /// Backward induction over the horizon instead of discounted policy
    /// iteration.
    pub finite_horizon: bool,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SepsisEnvConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            asset: None,
            asset_sha256: None,
            antibiotics_delta: 0.1,
            vasopressor_delta: 0.1,
            gamma: 0.99,
            finite_horizon: false,
            tol: 1e-9,
            max_iters: 100_000,
        }
    }
}

impl SepsisEnvConfig {
    pub fn transitions(&self) -> Result<SepsisTransitions> {
        match &self.asset {
            Some(path) => SepsisTransitions::load(path, self.asset_sha256.as_deref()),
            None => SepsisTransitions::embedded(),
        }
    }
}

/// Deterministic treatment choices, one table per time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SepsisPolicies {
    pub ai: Vec<Vec<u32>>,
    pub clinician: Vec<Vec<u32>>,
}

fn solve(t: &SepsisTransitions, config: &SepsisEnvConfig) -> Result<Vec<Vec<u32>>> {
    let mdp = t.mdp(config.gamma);
    if config.finite_horizon {
        Ok(finite_horizon(&mdp, config.horizon)?.0)
    } else {
        Ok(vec![
            policy_iteration(&mdp, config.tol, config.max_iters)?.policy,
        ])
    }
}

/// Clinician trained on the true dynamics, AI on perturbed ones.
pub fn train_policies(
    transitions: &SepsisTransitions,
    config: &SepsisEnvConfig,
) -> Result<SepsisPolicies> {
    let params = transitions.params.as_ref().ok_or_else(|| {
        Error::Asset(
            "asset carries no dynamics parameters; the AI's perturbed dynamics cannot be derived"
                .into(),
        )
    })?;
    let perturbed = params
        .perturbed(config.antibiotics_delta, config.vasopressor_delta)
        .table();
    let (ai, clinician) = rayon::join(|| solve(&perturbed, config), || solve(transitions, config));
    Ok(SepsisPolicies {
        ai: ai?,
        clinician: clinician?,
    })
}

/// Turn-based MMDP: the AI recommends, then the clinician keeps it (no-op,
/// probability `mu`) or applies its own treatment.
pub fn build_sepsis_env(
    config: &SepsisEnvConfig,
    transitions: &SepsisTransitions,
    policies: &SepsisPolicies,
    mu: f64,
) -> Result<(MmdpSpec, JointPolicy, TotalOrdering)> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(invalid(format!("trust {mu} is outside [0, 1]")));
    }
    if config.horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    let treatments: Vec<String> = (0..NUM_TREATMENTS as u32).map(treatment_name).collect();
    let mut clinician_actions = treatments.clone();
    clinician_actions.push(treatment_name(NOOP));
    let mut spec = MmdpSpec {
        states: (0..NUM_STATES as StateId).map(state_name).collect(),
        agents: vec![
            AgentSpec {
                name: "ai".into(),
                actions: treatments,
            },
            AgentSpec {
                name: "clinician".into(),
                actions: clinician_actions,
            },
        ],
        transition: TransitionTable::new(NUM_STATES, 1),
        horizon: config.horizon,
        initial: transitions.initial.clone(),
        turn_based: true,
    };
    let mut table = TransitionTable::new(NUM_STATES, spec.num_joint());
    for s in 0..NUM_STATES as StateId {
        let ids: Vec<u32> = (0..NUM_TREATMENTS as u32)
            .map(|t| table.add_row(transitions.row(s, t)))
            .collect();
        for j in 0..spec.num_joint() {
            let a = spec.joint_actions(j);
            let applied = if a[CLINICIAN] == NOOP {
                a[AI]
            } else {
                a[CLINICIAN]
            };
            table.assign(s, j, ids[applied as usize]);
        }
    }
    spec.transition = table;
    let slots = policies.ai.len();
    if slots == 0 || policies.clinician.len() != slots || (slots != 1 && slots != config.horizon) {
        return Err(invalid(
            "policies need one table, or one per step of the horizon",
        ));
    }
    let mut ai = AgentPolicy::new(NUM_STATES, NUM_TREATMENTS, slots, 1);
    let mut clinician = AgentPolicy::new(NUM_STATES, NUM_TREATMENTS + 1, slots, 1);
    for slot in 0..slots {
        for s in 0..NUM_STATES {
            let (a, c) = (
                policies.ai[slot][s] as usize,
                policies.clinician[slot][s] as usize,
            );
            let mut row = vec![0.0; NUM_TREATMENTS];
            row[a] = 1.0;
            ai.set_row(slot, s as StateId, 0, &row);
            let mut row = vec![0.0; NUM_TREATMENTS + 1];
            row[NOOP as usize] = mu;
            row[c] += 1.0 - mu;
            clinician.set_row(slot, s as StateId, 0, &row);
        }
    }
    let orderings = TotalOrdering {
        states: Ordering::identity(NUM_STATES),
        actions: vec![
            Ordering::identity(NUM_TREATMENTS),
            Ordering::identity(NUM_TREATMENTS + 1),
        ],
    };
    Ok((spec, JointPolicy::new(vec![ai, clinician]), orderings))
}

/// First step at which the patient is dead.
pub fn death_time(tau: &Trajectory) -> Option<usize> {
    (0..=tau.horizon()).find(|&t| tau.state(t) == DEATH)
}

pub fn is_failure(tau: &Trajectory) -> bool {
    death_time(tau).is_some()
}

/// Success at the failure step: anything but death.
pub fn success_outcome(tau: &Trajectory) -> Option<Outcome> {
    death_time(tau).map(|t| Outcome::new(t, (0..NUM_STATES as StateId).filter(|&s| s != DEATH)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_codes_round_trip() {
        assert_eq!(Vitals::all().count(), 180);
        for s in 1..DISCHARGE {
            assert_eq!(Vitals::from_id(s).unwrap().id(), s);
        }
    }

    #[test]
    fn treatment_names() {
        assert_eq!(treatment_name(0), "none");
        assert_eq!(treatment_name(7), "AVE");
        assert_eq!(treatment_name(5), "AE");
        assert_eq!(treatment_name(NOOP), "noop");
    }

    #[test]
    fn rows_are_normalized() {
        let d = SepsisDynamics::default();
        for s in 0..NUM_STATES as StateId {
            for t in 0..8 {
                let sum: f64 = d.row(s, t).iter().map(|e| e.1).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        assert!((d.initial().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perturbation_direction() {
        let d = SepsisDynamics::default();
        let p = d.perturbed(0.1, 0.1);
        assert!(p.antibiotics_hr_high_to_normal > d.antibiotics_hr_high_to_normal);
        assert!(p.vaso_bp_low_to_normal < d.vaso_bp_low_to_normal);
    }

    #[test]
    fn bundled_asset_matches_generator_and_checksum() {
        let bytes = SepsisTransitions::embedded_bytes();
        assert_eq!(sha256_hex(bytes), ASSET_SHA256);
        assert_eq!(
            SepsisDynamics::default().table().to_json().as_bytes(),
            bytes
        );
        let parsed = SepsisTransitions::embedded().unwrap();
        assert_eq!(parsed, SepsisDynamics::default().table());
    }

    #[test]
    #[ignore = "writes the bundled asset"]
    fn regenerate_asset() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/sepsis_transitions.json");
        let text = SepsisDynamics::default().table().to_json();
        std::fs::write(&path, &text).unwrap();
        println!("sha256 {}", sha256_hex(text.as_bytes()));
    }

    #[test]
    fn missing_asset_is_an_error() {
        let cfg = SepsisEnvConfig {
            asset: Some("/nonexistent/asset.json".into()),
            ..Default::default()
        };
        assert!(matches!(cfg.transitions(), Err(Error::Asset(_))));
    }

    #[test]
    fn trust_sets_noop_probability() {
        let t = SepsisTransitions::embedded().unwrap();
        let pol = SepsisPolicies {
            ai: vec![vec![4; NUM_STATES]],
            clinician: vec![vec![2; NUM_STATES]],
        };
        for mu in [0.0, 0.6, 1.0] {
            let (_, joint, _) =
                build_sepsis_env(&SepsisEnvConfig::default(), &t, &pol, mu).unwrap();
            for s in 0..NUM_STATES as StateId {
                let row = joint.agents[CLINICIAN].row(0, s, 0).unwrap();
                assert_eq!(row[NOOP as usize], mu);
                assert_eq!(row[2], 1.0 - mu);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            }
        }
    }
}
