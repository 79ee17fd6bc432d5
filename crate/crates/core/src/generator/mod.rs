//! Dataset records for every generation mode, slot filling, and grounding
//! verification.

mod rewriter;
mod verify;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rewriter::{
    FixtureEntry, FixtureRewriter, HttpRewriter, IdentityRewriter, RewriteError, Rewriter, TOKEN_ENV,
};
pub use verify::{GroundingReport, SlotDiff, Verifier, VerifyError};

use crate::geo::GeoPoint;
use crate::grammar::{
    filter_by_style, minimal_cover, Placeholder, PlaceholderSet, Style, Template, TemplatePool,
};
use crate::mapgraph::{MapBundle, ProminenceLevel};
use crate::relations::{compute_features, RelationError, SpatialFeatures};
use crate::sampler::{
    derive_seed, display_name, goal_phrase, number_word, rng_from_seed, DisplayName, Landmark,
    LandmarkSet, NameForm, PathSample, SampleError, Sampler, SamplerConfig,
};

pub const PROMPT_PREAMBLE: &str = "rephrase the subsequent navigation instruction, ensuring it explains how to travel from the starting position to the destination: ";

pub const DEFAULT_RETRIES: u32 = 50;

/// Location-free meeting phrases for the control dataset.
pub const DUMMY_PHRASES: [&str; 31] = [
    "Meet me here.",
    "Let's meet here.",
    "I'll be waiting for you here.",
    "Come find me here.",
    "See you here.",
    "Join me here.",
    "I'm waiting here.",
    "Meet up with me here.",
    "Come meet me here.",
    "Let's get together here.",
    "Find me here.",
    "I will meet you here.",
    "Catch up with me here.",
    "Come over and meet me.",
    "Let us meet at this spot.",
    "This is where we meet.",
    "Meet me at this place.",
    "I'll see you here.",
    "Please meet me here.",
    "Let's rendezvous here.",
    "Come and join me here.",
    "I'm here, come meet me.",
    "Our meeting point is here.",
    "Let's meet up here.",
    "Here is where I'll be.",
    "Look for me here.",
    "You can find me here.",
    "Meet with me here.",
    "We'll meet here.",
    "Come see me here.",
    "I'll wait for you at this spot.",
];

/// Words that carry spatial or landmark information.
pub const SPATIAL_STOP_LIST: &[&str] = &[
    "north", "south", "east", "west", "northeast", "northwest", "southeast", "southwest", "left",
    "right", "block", "blocks", "corner", "intersection", "intersections", "street", "avenue",
    "road", "turn", "past", "near", "next", "behind", "front", "opposite", "across", "beyond",
    "between", "meters", "metres", "km", "mile", "miles", "shop", "store", "cafe", "restaurant",
    "park", "church", "school", "station", "bank", "museum", "hotel", "bar", "pharmacy", "library",
    "straight", "walk", "cross",
];

static PLACEHOLDER_RESIDUE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Z_]{4,}").unwrap());

/// Uppercase runs that look like unsubstituted placeholders.
pub fn placeholder_residue(text: &str) -> Vec<&str> {
    PLACEHOLDER_RESIDUE.find_iter(text).map(|m| m.as_str()).collect()
}

/// Stop-list words and digits found in `text`.
pub fn spatial_terms(text: &str) -> Vec<String> {
    let mut hits = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric() && c != '-') {
        let lower = word.to_lowercase();
        let parts = std::iter::once(lower.as_str()).chain(lower.split('-'));
        if parts.into_iter().any(|w| SPATIAL_STOP_LIST.contains(&w)) || word.chars().any(|c| c.is_ascii_digit()) {
            hits.push(word.to_string());
        }
    }
    hits
}

pub fn dummy_instruction<R: Rng>(rng: &mut R) -> &'static str {
    DUMMY_PHRASES[rng.random_range(0..DUMMY_PHRASES.len())]
}

pub fn build_prompt(instruction: &str) -> String {
    if instruction.trim().is_empty() {
        log::warn!("building a rewrite prompt with an empty instruction");
    }
    format!("{PROMPT_PREAMBLE}{instruction}")
}

/// Removes an echoed preamble from a rewriter response.
pub fn strip_preamble(text: &str) -> &str {
    text.strip_prefix(PROMPT_PREAMBLE).unwrap_or(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Cfg,
    CfgAllocentric,
    CfgEgocentric,
    CfgMinimal,
    Dummy,
    Prompt,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Cfg,
        Mode::CfgAllocentric,
        Mode::CfgEgocentric,
        Mode::CfgMinimal,
        Mode::Dummy,
        Mode::Prompt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Cfg => "cfg",
            Mode::CfgAllocentric => "cfg-allocentric",
            Mode::CfgEgocentric => "cfg-egocentric",
            Mode::CfgMinimal => "cfg-minimal",
            Mode::Dummy => "dummy",
            Mode::Prompt => "prompt",
        }
    }

    pub fn uses_templates(self) -> bool {
        self != Mode::Dummy
    }

    /// Modes whose instructions are template instantiations verbatim.
    pub fn is_cfg(self) -> bool {
        matches!(self, Mode::Cfg | Mode::CfgAllocentric | Mode::CfgEgocentric | Mode::CfgMinimal)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown mode {0:?}")]
pub struct ParseModeError(String);

impl FromStr for Mode {
    type Err = ParseModeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ParseModeError(s.to_string()))
    }
}

/// The template pool a mode draws from; `None` for dummy mode.
pub fn pool_for_mode(mode: Mode, templates: &[Template]) -> Option<TemplatePool> {
    let selected = match mode {
        Mode::Dummy => return None,
        Mode::Cfg | Mode::Prompt => templates.to_vec(),
        Mode::CfgAllocentric => filter_by_style(templates, Style::Allocentric),
        Mode::CfgEgocentric => filter_by_style(templates, Style::Egocentric),
        Mode::CfgMinimal => minimal_cover(templates),
    };
    Some(TemplatePool::new(selected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRef {
    pub ids: Vec<String>,
    /// `key=value` of the type tag shared by the members, if any.
    pub type_tag: Option<String>,
    pub prominence: ProminenceLevel,
    pub surface: String,
    pub form: NameForm,
    /// How many times the instruction refers to this landmark.
    pub mentions: usize,
}

impl LandmarkRef {
    fn new(landmark: &Landmark<'_>, name: DisplayName) -> Self {
        LandmarkRef {
            ids: landmark.ids(),
            type_tag: landmark.entity_type().map(|t| format!("{}={}", t.key, t.value)),
            prominence: landmark.prominence(),
            surface: name.surface,
            form: name.form,
            mentions: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarksRecord {
    pub start: LandmarkRef,
    pub end_point: LandmarkRef,
    pub near: Vec<LandmarkRef>,
    pub main_pivots: Vec<LandmarkRef>,
    pub beyond: Option<LandmarkRef>,
}

impl LandmarksRecord {
    pub fn iter(&self) -> impl Iterator<Item = &LandmarkRef> {
        [&self.start, &self.end_point]
            .into_iter()
            .chain(&self.near)
            .chain(&self.main_pivots)
            .chain(self.beyond.as_ref())
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut LandmarkRef> {
        [&mut self.start, &mut self.end_point]
            .into_iter()
            .chain(&mut self.near)
            .chain(&mut self.main_pivots)
            .chain(self.beyond.as_mut())
    }

    pub fn total_mentions(&self) -> usize {
        self.iter().map(|r| r.mentions).sum()
    }
}

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub mode: Mode,
    pub instruction: String,
    pub start: GeoPoint,
    pub goal: GeoPoint,
    pub route: Vec<GeoPoint>,
    pub template_id: Option<String>,
    pub landmarks: Option<LandmarksRecord>,
    pub features: Option<SpatialFeatures>,
    pub seed: u64,
}

impl InstructionRecord {
    pub fn entity_mentions(&self) -> usize {
        self.landmarks.as_ref().map_or(0, LandmarksRecord::total_mentions)
    }
}

pub fn record_id(mode: Mode, index: u64) -> String {
    format!("{mode}-{index:08}")
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("no entity qualifies as a goal")]
    NoEligibleGoal,
    #[error("template pool for mode {0} is empty")]
    EmptyPool(Mode),
    #[error("mode {0} needs a template pool")]
    MissingPool(Mode),
    #[error(transparent)]
    Sample(SampleError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error("no landmarks found along the path")]
    NoLandmarks,
    #[error("no template fits the available slots {0}")]
    NoTemplate(PlaceholderSet),
    #[error("template {template} needs {placeholder}, which the scenario does not provide")]
    MissingFeature { template: String, placeholder: Placeholder },
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error("index {index}: gave up after {attempts} attempts; last failure: {last}")]
    Exhausted { index: u64, attempts: u32, last: Box<GenerateError> },
}

impl From<SampleError> for GenerateError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::NoEligibleGoal => GenerateError::NoEligibleGoal,
            other => GenerateError::Sample(other),
        }
    }
}

impl GenerateError {
    /// Failures a fresh sample may avoid.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GenerateError::Sample(_)
                | GenerateError::Relation(_)
                | GenerateError::NoLandmarks
                | GenerateError::NoTemplate(_)
        )
    }
}

/// Surface strings for every placeholder the scenario can fill.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Slots {
    values: BTreeMap<Placeholder, String>,
}

impl Slots {
    pub fn get(&self, p: Placeholder) -> Option<&str> {
        self.values.get(&p).map(String::as_str)
    }

    pub fn available(&self) -> PlaceholderSet {
        self.values.keys().copied().collect()
    }

    fn set(&mut self, p: Placeholder, value: Option<String>) {
        if let Some(v) = value {
            self.values.insert(p, v);
        }
    }
}

fn counted(n: usize, noun: &str) -> String {
    let plural = if n == 1 { "" } else { "s" };
    format!("{} {noun}{plural}", number_word(n))
}

/// Everything needed to fill a template for one scenario.
#[derive(Debug, Clone)]
pub struct Grounding {
    pub features: SpatialFeatures,
    pub slots: Slots,
    pub landmarks: LandmarksRecord,
}

pub fn ground(
    bundle: &MapBundle,
    sample: &PathSample<'_>,
    set: &LandmarkSet<'_>,
    proper_name_distance: f64,
) -> Result<Grounding, GenerateError> {
    let features = compute_features(bundle, sample, set)?;
    let goal = sample.goal;
    let name = |l: &Landmark<'_>| display_name(l, goal, proper_name_distance).map(|d| LandmarkRef::new(l, d));
    let start_landmark = Landmark::Single(sample.start);
    let start_name = display_name(&start_landmark, goal, proper_name_distance).unwrap_or_else(|_| DisplayName {
        surface: sample.start.name.clone().unwrap_or_default(),
        form: NameForm::Proper,
    });
    let goal_surface = goal_phrase(goal).ok_or_else(|| SampleError::Unnameable(goal.id.clone()))?;
    let landmarks = LandmarksRecord {
        start: LandmarkRef::new(&start_landmark, start_name),
        end_point: LandmarkRef::new(
            &Landmark::Single(goal),
            DisplayName { surface: goal_surface.clone(), form: NameForm::Definite },
        ),
        near: set.near.iter().map(name).collect::<Result<_, _>>()?,
        main_pivots: set.main_pivots.iter().map(name).collect::<Result<_, _>>()?,
        beyond: set.beyond.as_ref().map(name).transpose()?,
    };

    let mut slots = Slots::default();
    let surface = |r: Option<&LandmarkRef>| r.map(|r| r.surface.clone());
    slots.set(Placeholder::EndPoint, Some(goal_surface));
    slots.set(Placeholder::NearPivot, surface(landmarks.near.first()));
    slots.set(Placeholder::MainPivot, surface(landmarks.main_pivots.first()));
    if landmarks.main_pivots.len() >= 2 {
        slots.set(Placeholder::MainNearPivot, surface(landmarks.main_pivots.last()));
    }
    slots.set(Placeholder::BeyondPivot, surface(landmarks.beyond.as_ref()));
    slots.set(Placeholder::CardinalDirection, Some(features.cardinal_start_to_goal.word().to_string()));
    let word = |c: Option<&Option<crate::geo::CardinalDirection>>| c.copied().flatten().map(|c| c.word().to_string());
    slots.set(Placeholder::PivotDirection, word(features.cardinal_pivot_to_goal.first()));
    slots.set(Placeholder::NearDirection, word(features.cardinal_near_to_goal.first()));
    if features.n_intersections >= 1 {
        slots.set(Placeholder::Intersections, Some(counted(features.n_intersections, "intersection")));
    }
    if features.n_blocks >= 1 {
        slots.set(Placeholder::Blocks, Some(counted(features.n_blocks, "block")));
    }
    slots.set(Placeholder::GoalPosition, features.block_position_allo.map(|b| b.phrase()));
    slots.set(Placeholder::BlockPosition, Some(features.block_position_ego.phrase().to_string()));
    let side = |s: Option<&Option<crate::geo::EgocentricSide>>| s.copied().flatten().map(|s| s.phrase().to_string());
    slots.set(Placeholder::EgoSide, side(features.ego_side.near.first()));
    slots.set(Placeholder::MainSide, side(features.ego_side.main_pivots.first()));

    Ok(Grounding { features, slots, landmarks })
}

pub fn instantiate(template: &Template, slots: &Slots) -> Result<String, GenerateError> {
    template
        .render(|p| slots.get(p).map(str::to_string))
        .map_err(|placeholder| GenerateError::MissingFeature {
            template: template.id().to_string(),
            placeholder,
        })
}

/// Records how often the template names each landmark.
pub fn assign_mentions(landmarks: &mut LandmarksRecord, template: &Template) {
    let uses = |p: Placeholder| {
        template
            .tokens()
            .filter(|t| matches!(t, crate::grammar::Token::Placeholder(q) if *q == p))
            .count()
    };
    for r in landmarks.iter_mut() {
        r.mentions = 0;
    }
    landmarks.end_point.mentions = uses(Placeholder::EndPoint);
    if let Some(r) = landmarks.near.first_mut() {
        r.mentions = uses(Placeholder::NearPivot);
    }
    if let Some(r) = landmarks.main_pivots.first_mut() {
        r.mentions += uses(Placeholder::MainPivot);
    }
    if landmarks.main_pivots.len() >= 2 {
        if let Some(r) = landmarks.main_pivots.last_mut() {
            r.mentions += uses(Placeholder::MainNearPivot);
        }
    }
    if let Some(r) = landmarks.beyond.as_mut() {
        r.mentions = uses(Placeholder::BeyondPivot);
    }
}

fn count_case_insensitive(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    haystack.to_lowercase().matches(&needle.to_lowercase()).count()
}

/// Caps each mention count by how often the surface form still appears in
/// rewritten text.
pub fn recount_mentions(landmarks: &mut LandmarksRecord, text: &str) {
    for r in landmarks.iter_mut() {
        r.mentions = r.mentions.min(count_case_insensitive(text, &r.surface));
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub mode: Mode,
    pub retries: u32,
    pub sampler: SamplerConfig,
}

impl GeneratorConfig {
    pub fn new(mode: Mode) -> Self {
        Self { mode, retries: DEFAULT_RETRIES, sampler: SamplerConfig::default() }
    }
}

/// Produces records independently per index, so any subset of indices can
/// be generated in any order or in parallel.
pub struct Generator<'a> {
    bundle: &'a MapBundle,
    sampler: Sampler<'a>,
    pool: Option<&'a TemplatePool>,
    rewriter: &'a dyn Rewriter,
    config: GeneratorConfig,
}

static IDENTITY: IdentityRewriter = IdentityRewriter;

impl<'a> Generator<'a> {
    pub fn new(
        bundle: &'a MapBundle,
        pool: Option<&'a TemplatePool>,
        config: GeneratorConfig,
    ) -> Result<Self, GenerateError> {
        let mode = config.mode;
        match pool {
            None if mode.uses_templates() => return Err(GenerateError::MissingPool(mode)),
            Some(p) if mode.uses_templates() && p.is_empty() => return Err(GenerateError::EmptyPool(mode)),
            _ => {}
        }
        let sampler = Sampler::new(bundle, config.sampler.clone());
        if sampler.eligible_goals().is_empty() {
            return Err(GenerateError::NoEligibleGoal);
        }
        Ok(Self { bundle, sampler, pool, rewriter: &IDENTITY, config })
    }

    pub fn with_rewriter(mut self, rewriter: &'a dyn Rewriter) -> Self {
        self.rewriter = rewriter;
        self
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn sampler(&self) -> &Sampler<'a> {
        &self.sampler
    }

    /// Record `index` under `seed`. Each attempt reseeds from
    /// `(seed, index, attempt)`; retryable failures move to the next attempt.
    pub fn generate_one(&self, seed: u64, index: u64) -> Result<InstructionRecord, GenerateError> {
        let base = derive_seed(seed, index);
        let mut last = None;
        for attempt in 0..=self.config.retries {
            let attempt_seed = derive_seed(base, attempt as u64);
            match self.attempt(index, attempt_seed) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retryable() => {
                    log::debug!("index {index} attempt {attempt}: {e}");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(GenerateError::Exhausted {
            index,
            attempts: self.config.retries + 1,
            last: Box::new(last.expect("at least one attempt")),
        })
    }

    /// Records `0..n` in index order.
    pub fn generate(&self, n: u64, seed: u64) -> impl Iterator<Item = Result<InstructionRecord, GenerateError>> + '_ {
        (0..n).map(move |i| self.generate_one(seed, i))
    }

    fn attempt(&self, index: u64, seed: u64) -> Result<InstructionRecord, GenerateError> {
        let mode = self.config.mode;
        let mut rng = rng_from_seed(seed);
        let sample = self.sampler.sample_path(&mut rng, seed)?;
        let mut record = InstructionRecord {
            id: record_id(mode, index),
            mode,
            instruction: String::new(),
            start: sample.start.centroid(),
            goal: sample.goal.centroid(),
            route: sample.route.polyline.clone(),
            template_id: None,
            landmarks: None,
            features: None,
            seed,
        };
        if mode == Mode::Dummy {
            if sample.route.is_single_node() {
                return Err(RelationError::DegenerateRoute.into());
            }
            record.instruction = dummy_instruction(&mut rng).to_string();
            return Ok(record);
        }

        let set = self.sampler.pick_landmarks(&sample, &mut rng);
        if set.is_empty() {
            return Err(GenerateError::NoLandmarks);
        }
        let Grounding { features, slots, mut landmarks } =
            ground(self.bundle, &sample, &set, self.sampler.config().proper_name_distance)?;
        let pool = self.pool.ok_or(GenerateError::MissingPool(mode))?;
        let available = slots.available();
        let template = pool.choose(available, &mut rng).ok_or(GenerateError::NoTemplate(available))?;
        let text = instantiate(template, &slots)?;
        assign_mentions(&mut landmarks, template);

        if mode == Mode::Prompt {
            let rewritten = self.rewriter.rewrite(&build_prompt(&text))?;
            record.instruction = strip_preamble(&rewritten).trim().to_string();
            recount_mentions(&mut landmarks, &record.instruction);
        } else {
            record.instruction = text;
            record.template_id = Some(template.id().to_string());
        }
        record.landmarks = Some(landmarks);
        record.features = Some(features);
        Ok(record)
    }
}
