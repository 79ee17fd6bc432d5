//! Path sampling and landmark selection.
//!
//! A sample is a small goal entity, a describable start entity 200–2000 m
//! away, and the shortest street route between them. Landmarks come in
//! three classes: near the goal, along the route, and past the goal on its
//! street. Each class keeps only its most prominent tier, and same-type
//! entities in a tier collapse into a counted group.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_distance, project_onto_segment, GeoPoint, LocalFrame};
use crate::mapgraph::{prominence, Entity, EntityType, MapBundle, ProminenceLevel, Route, RouteError};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub max_goal_extent: f64,
    pub min_start_distance: f64,
    pub max_start_distance: f64,
    pub near_radius: f64,
    pub corridor_width: f64,
    /// Landmarks farther than this from the goal may be called by proper name.
    pub proper_name_distance: f64,
    /// How far past the goal to follow its street when looking for a beyond landmark.
    pub beyond_lookahead: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            max_goal_extent: 100.0,
            min_start_distance: 200.0,
            max_start_distance: 2000.0,
            near_radius: 100.0,
            corridor_width: 50.0,
            proper_name_distance: 200.0,
            beyond_lookahead: 400.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("no entity qualifies as a goal (small and describable)")]
    NoEligibleGoal,
    #[error("no eligible start entity for goal {goal}")]
    NoEligibleStart { goal: String },
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("entity {0} has neither a usable name nor a type tag")]
    Unnameable(String),
}

/// Mixes a global seed with an index into an independent 64-bit seed
/// (splitmix64 finalizer over both words).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One sampled navigation scenario.
#[derive(Debug, Clone)]
pub struct PathSample<'a> {
    pub start: &'a Entity,
    pub goal: &'a Entity,
    pub route: Route,
    pub seed: u64,
}

/// Several same-type entities referred to together ("two book shops").
/// Members are ordered by distance to the goal, then id.
#[derive(Debug, Clone)]
pub struct EntityGroup<'a> {
    pub entity_type: EntityType,
    pub members: Vec<&'a Entity>,
}

impl EntityGroup<'_> {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone)]
pub enum Landmark<'a> {
    Single(&'a Entity),
    Group(EntityGroup<'a>),
}

impl<'a> Landmark<'a> {
    /// The entity whose centroid stands for the landmark in geometric relations.
    pub fn anchor(&self) -> &'a Entity {
        match self {
            Landmark::Single(e) => e,
            Landmark::Group(g) => g.members[0],
        }
    }

    pub fn members(&self) -> Vec<&'a Entity> {
        match self {
            Landmark::Single(e) => vec![*e],
            Landmark::Group(g) => g.members.clone(),
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.members().iter().map(|e| e.id.clone()).collect()
    }

    pub fn entity_type(&self) -> Option<EntityType> {
        match self {
            Landmark::Single(e) => e.entity_type(),
            Landmark::Group(g) => Some(g.entity_type.clone()),
        }
    }

    pub fn prominence(&self) -> ProminenceLevel {
        prominence(self.anchor())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LandmarkSet<'a> {
    /// Within the near radius of the goal, in randomized order.
    pub near: Vec<Landmark<'a>>,
    /// Inside the route corridor, in order along the route.
    pub main_pivots: Vec<Landmark<'a>>,
    pub beyond: Option<Landmark<'a>>,
}

impl LandmarkSet<'_> {
    pub fn is_empty(&self) -> bool {
        self.near.is_empty() && self.main_pivots.is_empty() && self.beyond.is_none()
    }

    pub fn all(&self) -> impl Iterator<Item = &Landmark<'_>> {
        self.near.iter().chain(&self.main_pivots).chain(self.beyond.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameForm {
    Proper,
    Indefinite,
    GroupedCount,
    /// Bare type phrase for the goal, preceded by "the" in templates.
    Definite,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisplayName {
    pub surface: String,
    pub form: NameForm,
}

/// Human phrase for an entity type ("book shop", "fast-food restaurant").
pub fn type_phrase(t: &EntityType) -> String {
    let v = t.value.as_str();
    let words = || v.replace('_', " ");
    match t.key.as_str() {
        "shop" => match v {
            "books" => "book shop".into(),
            "clothes" => "clothing store".into(),
            "convenience" => "convenience store".into(),
            "supermarket" => "supermarket".into(),
            "bakery" => "bakery".into(),
            "florist" => "florist".into(),
            "hairdresser" => "hair salon".into(),
            "beauty" => "beauty salon".into(),
            "shoes" => "shoe store".into(),
            "mobile_phone" => "phone shop".into(),
            "alcohol" => "liquor store".into(),
            "jewelry" => "jewelry store".into(),
            "hardware" => "hardware store".into(),
            "deli" => "deli".into(),
            "butcher" => "butcher shop".into(),
            "laundry" => "laundromat".into(),
            _ => format!("{} shop", words()),
        },
        "amenity" => match v {
            "fast_food" => "fast-food restaurant".into(),
            "place_of_worship" => "church".into(),
            "post_office" => "post office".into(),
            "parking" => "parking lot".into(),
            "fuel" => "gas station".into(),
            "theatre" => "theater".into(),
            "ice_cream" => "ice cream shop".into(),
            "nail_salon" => "nail salon".into(),
            _ => words(),
        },
        "tourism" => match v {
            "attraction" => "tourist attraction".into(),
            _ => words(),
        },
        _ => v.to_string(),
    }
}

fn indefinite_article(phrase: &str) -> &'static str {
    match phrase.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn pluralize(phrase: &str) -> String {
    let (head, last) = match phrase.rsplit_once(' ') {
        Some((h, l)) => (format!("{h} "), l),
        None => (String::new(), phrase),
    };
    let lower = last.to_ascii_lowercase();
    let plural = if ["s", "x", "z", "ch", "sh"].iter().any(|s| lower.ends_with(s)) {
        format!("{last}es")
    } else if lower.ends_with('y')
        && !matches!(lower.chars().rev().nth(1), Some('a' | 'e' | 'i' | 'o' | 'u'))
    {
        format!("{}ies", &last[..last.len() - 1])
    } else {
        format!("{last}s")
    };
    format!("{head}{plural}")
}

/// Count words up to twelve, digits beyond.
pub fn number_word(n: usize) -> String {
    const WORDS: [&str; 13] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}

fn group_surface(t: &EntityType, count: usize) -> String {
    let noun = if t.key == "brand" {
        format!("{} locations", t.value)
    } else {
        pluralize(&type_phrase(t))
    };
    format!("{} {}", number_word(count), noun)
}

/// How a landmark is named relative to the goal: proper name only when
/// named and farther than `proper_name_distance`; otherwise "a <type>" or a
/// counted plural for groups.
pub fn display_name(
    landmark: &Landmark<'_>,
    goal: &Entity,
    proper_name_distance: f64,
) -> Result<DisplayName, SampleError> {
    match landmark {
        Landmark::Group(g) => Ok(DisplayName {
            surface: group_surface(&g.entity_type, g.count()),
            form: NameForm::GroupedCount,
        }),
        Landmark::Single(e) => {
            let far = haversine_distance(e.centroid(), goal.centroid()) > proper_name_distance;
            if let (Some(name), true) = (&e.name, far) {
                return Ok(DisplayName {
                    surface: name.clone(),
                    form: NameForm::Proper,
                });
            }
            let t = e.entity_type().ok_or_else(|| SampleError::Unnameable(e.id.clone()))?;
            let phrase = type_phrase(&t);
            Ok(DisplayName {
                surface: format!("{} {}", indefinite_article(&phrase), phrase),
                form: NameForm::Indefinite,
            })
        }
    }
}

/// Bare type phrase for the goal ("garden"), used after "the".
pub fn goal_phrase(goal: &Entity) -> Option<String> {
    goal.entity_type().map(|t| type_phrase(&t))
}

/// Sampling over a fixed bundle; the eligible-goal list is computed once.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    bundle: &'a MapBundle,
    config: SamplerConfig,
    goals: Vec<&'a Entity>,
}

impl<'a> Sampler<'a> {
    pub fn new(bundle: &'a MapBundle, config: SamplerConfig) -> Self {
        let goals = bundle
            .entities()
            .iter()
            .filter(|e| is_eligible_goal(e, &config))
            .collect();
        Self { bundle, config, goals }
    }

    pub fn bundle(&self) -> &'a MapBundle {
        self.bundle
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn eligible_goals(&self) -> &[&'a Entity] {
        &self.goals
    }

    /// Uniform over small, describable entities.
    pub fn sample_goal<R: Rng>(&self, rng: &mut R) -> Result<&'a Entity, SampleError> {
        if self.goals.is_empty() {
            return Err(SampleError::NoEligibleGoal);
        }
        Ok(self.goals[rng.random_range(0..self.goals.len())])
    }

    /// Entities at centroid distance within the start band that carry a name
    /// or type tag, ascending by distance then id.
    pub fn start_candidates(&self, goal: &Entity) -> Vec<&'a Entity> {
        let min = self.config.min_start_distance;
        self.bundle
            .nearest_entities(goal.centroid(), self.config.max_start_distance, |e| {
                e.id != goal.id && (e.name.is_some() || e.has_type())
            })
            .into_iter()
            .filter(|n| n.distance >= min)
            .map(|n| n.entity)
            .collect()
    }

    pub fn sample_start<R: Rng>(&self, goal: &Entity, rng: &mut R) -> Result<&'a Entity, SampleError> {
        let candidates = self.start_candidates(goal);
        if candidates.is_empty() {
            return Err(SampleError::NoEligibleStart { goal: goal.id.clone() });
        }
        Ok(candidates[rng.random_range(0..candidates.len())])
    }

    pub fn sample_path<R: Rng>(&self, rng: &mut R, seed: u64) -> Result<PathSample<'a>, SampleError> {
        let goal = self.sample_goal(rng)?;
        let start = self.sample_start(goal, rng)?;
        let route = self.bundle.shortest_path(start.centroid(), goal.centroid())?;
        Ok(PathSample { start, goal, route, seed })
    }

    fn nameable(&self, e: &Entity, goal: &Entity) -> bool {
        e.has_type()
            || (e.name.is_some()
                && haversine_distance(e.centroid(), goal.centroid()) > self.config.proper_name_distance)
    }

    /// Landmarks within the near radius of the goal (before tier selection).
    pub fn near_candidates(&self, sample: &PathSample<'a>) -> Vec<&'a Entity> {
        let excluded = [sample.start.id.as_str(), sample.goal.id.as_str()];
        self.bundle
            .nearest_entities(sample.goal.centroid(), self.config.near_radius, |e| {
                !excluded.contains(&e.id.as_str()) && self.nameable(e, sample.goal)
            })
            .into_iter()
            .map(|n| n.entity)
            .collect()
    }

    /// Entities inside the route corridor and outside the near-goal disc,
    /// paired with their position along the route in meters.
    pub fn corridor_candidates(&self, sample: &PathSample<'a>) -> Vec<(&'a Entity, f64)> {
        let excluded = [sample.start.id.as_str(), sample.goal.id.as_str()];
        let hits = corridor_hits(self.bundle, &sample.route.polyline, self.config.corridor_width);
        let goal = sample.goal.centroid();
        let mut out: Vec<(&'a Entity, f64)> = hits
            .into_iter()
            .filter(|(e, _)| {
                !excluded.contains(&e.id.as_str())
                    && haversine_distance(e.centroid(), goal) > self.config.near_radius
                    && self.nameable(e, sample.goal)
            })
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.id.cmp(&b.0.id)));
        out
    }

    /// The goal street continued past the route end: nodes reached by
    /// following edges with the same street name, up to the lookahead.
    pub fn beyond_extension(&self, route: &Route) -> Vec<GeoPoint> {
        let graph = self.bundle.graph();
        let n = route.nodes.len();
        if n < 2 {
            return Vec::new();
        }
        let (mut prev, mut cur) = (route.nodes[n - 2], route.nodes[n - 1]);
        let Some(street) = graph.edge_between(prev, cur).and_then(|e| e.street.clone()) else {
            return Vec::new();
        };
        let on_route: HashSet<usize> = route.nodes.iter().copied().collect();
        let mut visited = HashSet::new();
        let mut line = vec![graph.point(cur)];
        let mut length = 0.0;
        while length < self.config.beyond_lookahead {
            let next = graph
                .neighbors(cur)
                .iter()
                .filter(|(m, e)| {
                    *m != prev
                        && !on_route.contains(m)
                        && !visited.contains(m)
                        && graph.edge(*e).street.as_deref() == Some(street.as_str())
                })
                .map(|(m, _)| *m)
                .min();
            let Some(next) = next else { break };
            visited.insert(next);
            length += haversine_distance(graph.point(cur), graph.point(next));
            line.push(graph.point(next));
            prev = cur;
            cur = next;
        }
        if line.len() < 2 {
            Vec::new()
        } else {
            line
        }
    }

    /// Entities closer to the extension than to the route, inside the
    /// corridor, outside the near disc and not already corridor candidates,
    /// paired with their distance along the extension.
    pub fn beyond_candidates(&self, sample: &PathSample<'a>) -> Vec<(&'a Entity, f64)> {
        self.beyond_excluding(sample, &self.corridor_candidates(sample))
    }

    fn beyond_excluding(&self, sample: &PathSample<'a>, main: &[(&'a Entity, f64)]) -> Vec<(&'a Entity, f64)> {
        let extension = self.beyond_extension(&sample.route);
        if extension.is_empty() {
            return Vec::new();
        }
        let corridor = self.config.corridor_width;
        let goal = sample.goal.centroid();
        let excluded = [sample.start.id.as_str(), sample.goal.id.as_str()];
        let main: HashSet<&str> = main.iter().map(|(e, _)| e.id.as_str()).collect();
        let mut out: Vec<(&'a Entity, f64)> = corridor_hits(self.bundle, &extension, corridor)
            .into_iter()
            .filter(|(e, along)| {
                *along > 0.0
                    && !excluded.contains(&e.id.as_str())
                    && !main.contains(e.id.as_str())
                    && haversine_distance(e.centroid(), goal) > self.config.near_radius
                    && self.nameable(e, sample.goal)
                    && distance_to_polyline(e.centroid(), &extension)
                        < distance_to_polyline(e.centroid(), &sample.route.polyline)
            })
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.id.cmp(&b.0.id)));
        out
    }

    pub fn pick_landmarks<R: Rng>(&self, sample: &PathSample<'a>, rng: &mut R) -> LandmarkSet<'a> {
        let goal = sample.goal.centroid();

        let near_top = top_tier(self.near_candidates(sample));
        let mut near = group_by_type(near_top, goal);
        near.shuffle(rng);

        let corridor = self.corridor_candidates(sample);
        let along: BTreeMap<&str, f64> = corridor.iter().map(|(e, a)| (e.id.as_str(), *a)).collect();
        let main_top = top_tier(corridor.iter().map(|(e, _)| *e).collect());
        let mut main_pivots = group_by_type(main_top, goal);
        let position = |l: &Landmark<'_>| {
            l.members()
                .iter()
                .map(|e| along[e.id.as_str()])
                .fold(f64::INFINITY, f64::min)
        };
        main_pivots.sort_by(|a, b| {
            position(a)
                .total_cmp(&position(b))
                .then_with(|| a.anchor().id.cmp(&b.anchor().id))
        });

        let beyond_all = self.beyond_excluding(sample, &corridor);
        let beyond_top = top_tier(beyond_all.iter().map(|(e, _)| *e).collect());
        let beyond = beyond_all
            .iter()
            .find(|(e, _)| beyond_top.iter().any(|t| t.id == e.id))
            .map(|(e, _)| Landmark::Single(e));

        LandmarkSet { near, main_pivots, beyond }
    }
}

pub fn is_eligible_goal(e: &Entity, config: &SamplerConfig) -> bool {
    e.extent_radius() <= config.max_goal_extent && goal_phrase(e).is_some()
}

/// Entities whose centroid lies within `width` of the polyline, each with
/// its along-line position at the closest segment (earlier segment on ties).
fn corridor_hits<'a>(bundle: &'a MapBundle, line: &[GeoPoint], width: f64) -> Vec<(&'a Entity, f64)> {
    let mut best: BTreeMap<&'a str, (&'a Entity, f64, f64)> = BTreeMap::new();
    let mut offset = 0.0;
    for seg in line.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = haversine_distance(a, b);
        let frame = LocalFrame::new(a);
        let (bx, by) = frame.to_xy(b);
        let midpoint = frame.to_point(bx / 2.0, by / 2.0);
        let reach = len / 2.0 + width + 1.0;
        for n in bundle.nearest_entities(midpoint, reach, |_| true) {
            let proj = project_onto_segment(n.entity.centroid(), a, b);
            if proj.distance > width {
                continue;
            }
            let along = offset + proj.t * len;
            best.entry(n.entity.id.as_str())
                .and_modify(|cur| {
                    if proj.distance < cur.2 {
                        *cur = (n.entity, along, proj.distance);
                    }
                })
                .or_insert((n.entity, along, proj.distance));
        }
        offset += len;
    }
    best.into_values().map(|(e, along, _)| (e, along)).collect()
}

pub(crate) fn distance_to_polyline(p: GeoPoint, line: &[GeoPoint]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => haversine_distance(p, *only),
        _ => line
            .windows(2)
            .map(|s| project_onto_segment(p, s[0], s[1]).distance)
            .fold(f64::INFINITY, f64::min),
    }
}

/// Keeps only the entities of the highest prominence level present.
fn top_tier(entities: Vec<&Entity>) -> Vec<&Entity> {
    let Some(top) = entities.iter().map(|e| prominence(e)).max() else {
        return entities;
    };
    entities.into_iter().filter(|e| prominence(e) == top).collect()
}

/// Collapses same-type entities into groups, keeping first-seen order.
fn group_by_type<'a>(entities: Vec<&'a Entity>, goal: GeoPoint) -> Vec<Landmark<'a>> {
    let mut buckets: BTreeMap<EntityType, Vec<&'a Entity>> = BTreeMap::new();
    let mut singles: Vec<Landmark<'a>> = Vec::new();
    // Ok(type) marks a bucket, Err(i) the i-th untyped single.
    let mut slots: Vec<Result<EntityType, usize>> = Vec::new();
    for e in entities {
        match e.entity_type() {
            Some(t) => {
                if !buckets.contains_key(&t) {
                    slots.push(Ok(t.clone()));
                }
                buckets.entry(t).or_default().push(e);
            }
            None => {
                slots.push(Err(singles.len()));
                singles.push(Landmark::Single(e));
            }
        }
    }
    slots
        .into_iter()
        .map(|slot| match slot {
            Err(i) => singles[i].clone(),
            Ok(t) => {
                let mut members = buckets.remove(&t).unwrap_or_default();
                if members.len() == 1 {
                    Landmark::Single(members[0])
                } else {
                    members.sort_by(|a, b| {
                        haversine_distance(a.centroid(), goal)
                            .total_cmp(&haversine_distance(b.centroid(), goal))
                            .then_with(|| a.id.cmp(&b.id))
                    });
                    Landmark::Group(EntityGroup { entity_type: t, members })
                }
            }
        })
        .collect()
}
