use serde::Serialize;
use thiserror::Error;

use super::{assign_mentions, ground, instantiate, InstructionRecord, LandmarkRef, Mode, Slots};
use crate::grammar::{Placeholder, Template, TemplatePool, Token};
use crate::mapgraph::{Entity, MapBundle, RouteError};
use crate::sampler::{EntityGroup, Landmark, LandmarkSet, NameForm, PathSample, SamplerConfig};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("record {id}: verification does not apply to {mode} records")]
    NotApplicable { id: String, mode: Mode },
    #[error("record {id}: unknown template {template}")]
    UnknownTemplate { id: String, template: String },
    #[error("record {id}: unknown entity {entity}")]
    UnknownEntity { id: String, entity: String },
    #[error("record {id}: missing {field}")]
    MissingField { id: String, field: &'static str },
    #[error("record {id}: {source}")]
    Route { id: String, source: RouteError },
    #[error("record {id}: {message}")]
    Regrounding { id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotDiff {
    pub slot: String,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundingReport {
    pub id: String,
    pub passed: bool,
    pub diffs: Vec<SlotDiff>,
}

/// Recomputes a template record from the map and checks every substituted
/// value against the stored instruction.
pub struct Verifier<'a> {
    bundle: &'a MapBundle,
    pool: &'a TemplatePool,
    config: SamplerConfig,
}

const SENTINEL: char = '\u{1}';

impl<'a> Verifier<'a> {
    /// `pool` must contain every template the records may cite, normally the
    /// full enumeration of the grammar.
    pub fn new(bundle: &'a MapBundle, pool: &'a TemplatePool) -> Self {
        Self { bundle, pool, config: SamplerConfig::default() }
    }

    pub fn with_config(mut self, config: SamplerConfig) -> Self {
        self.config = config;
        self
    }

    fn entity(&self, id: &str, record: &str) -> Result<&'a Entity, VerifyError> {
        self.bundle.entity(id).ok_or_else(|| VerifyError::UnknownEntity {
            id: record.to_string(),
            entity: id.to_string(),
        })
    }

    fn landmark(&self, r: &LandmarkRef, record: &str) -> Result<Landmark<'a>, VerifyError> {
        let members = r
            .ids
            .iter()
            .map(|id| self.entity(id, record))
            .collect::<Result<Vec<_>, _>>()?;
        match (r.form, members.as_slice()) {
            (NameForm::GroupedCount, [first, ..]) => {
                let entity_type = first.entity_type().ok_or_else(|| VerifyError::Regrounding {
                    id: record.to_string(),
                    message: format!("group member {} has no type tag", first.id),
                })?;
                Ok(Landmark::Group(EntityGroup { entity_type, members }))
            }
            (_, [only]) => Ok(Landmark::Single(only)),
            _ => Err(VerifyError::Regrounding {
                id: record.to_string(),
                message: format!("landmark {:?} has {} members", r.surface, members.len()),
            }),
        }
    }

    pub fn verify(&self, record: &InstructionRecord) -> Result<GroundingReport, VerifyError> {
        let id = record.id.as_str();
        let (true, Some(template_id)) = (record.mode.is_cfg(), record.template_id.as_deref()) else {
            return Err(VerifyError::NotApplicable { id: id.to_string(), mode: record.mode });
        };
        let template = self.pool.get(template_id).ok_or_else(|| VerifyError::UnknownTemplate {
            id: id.to_string(),
            template: template_id.to_string(),
        })?;
        let refs = record
            .landmarks
            .as_ref()
            .ok_or(VerifyError::MissingField { id: id.to_string(), field: "landmarks" })?;
        let goal = self.entity(refs.end_point.ids.first().map_or("", String::as_str), id)?;
        let start = self.entity(refs.start.ids.first().map_or("", String::as_str), id)?;

        let mut diffs = Vec::new();
        let mut check = |slot: &str, expected: String, found: String| {
            if expected != found {
                diffs.push(SlotDiff { slot: slot.to_string(), expected, found });
            }
        };
        check("start", start.centroid().to_string(), record.start.to_string());
        check("goal", goal.centroid().to_string(), record.goal.to_string());

        let route = self
            .bundle
            .shortest_path(start.centroid(), goal.centroid())
            .map_err(|source| VerifyError::Route { id: id.to_string(), source })?;
        if route.polyline != record.route {
            check(
                "route",
                format!("{} points, {:.3} m", route.polyline.len(), route.total_length),
                format!("{} points", record.route.len()),
            );
        }

        let set = LandmarkSet {
            near: refs.near.iter().map(|r| self.landmark(r, id)).collect::<Result<_, _>>()?,
            main_pivots: refs.main_pivots.iter().map(|r| self.landmark(r, id)).collect::<Result<_, _>>()?,
            beyond: refs.beyond.as_ref().map(|r| self.landmark(r, id)).transpose()?,
        };
        let sample = PathSample { start, goal, route, seed: record.seed };
        let mut grounding = ground(self.bundle, &sample, &set, self.config.proper_name_distance)
            .map_err(|e| VerifyError::Regrounding { id: id.to_string(), message: e.to_string() })?;
        assign_mentions(&mut grounding.landmarks, template);

        let expected_features = serde_json::to_value(&grounding.features).unwrap_or_default();
        let found_features = serde_json::to_value(&record.features).unwrap_or_default();
        if let (Some(exp), Some(found)) = (expected_features.as_object(), found_features.as_object()) {
            for (key, value) in exp {
                let other = found.get(key).cloned().unwrap_or_default();
                check(&format!("features.{key}"), value.to_string(), other.to_string());
            }
        } else {
            check("features", expected_features.to_string(), found_features.to_string());
        }
        for (name, exp, found) in [
            ("landmarks.start", &grounding.landmarks.start, &refs.start),
            ("landmarks.end_point", &grounding.landmarks.end_point, &refs.end_point),
        ]
        .into_iter()
        .chain(landmark_pairs("landmarks.near", &grounding.landmarks.near, &refs.near))
        .chain(landmark_pairs("landmarks.main_pivots", &grounding.landmarks.main_pivots, &refs.main_pivots))
        .chain(grounding.landmarks.beyond.iter().zip(&refs.beyond).map(|(e, f)| ("landmarks.beyond", e, f)))
        {
            check(&format!("{name}.surface"), exp.surface.clone(), found.surface.clone());
            check(&format!("{name}.mentions"), exp.mentions.to_string(), found.mentions.to_string());
        }

        let expected = instantiate(template, &grounding.slots)
            .map_err(|e| VerifyError::Regrounding { id: id.to_string(), message: e.to_string() })?;
        if expected != record.instruction {
            diffs.extend(slot_diffs(template, &grounding.slots, &record.instruction, &expected));
        }
        Ok(GroundingReport { id: id.to_string(), passed: diffs.is_empty(), diffs })
    }
}

fn landmark_pairs<'r>(
    name: &'static str,
    expected: &'r [LandmarkRef],
    found: &'r [LandmarkRef],
) -> impl Iterator<Item = (&'static str, &'r LandmarkRef, &'r LandmarkRef)> {
    expected.iter().zip(found).map(move |(e, f)| (name, e, f))
}

/// Matches `text` against the template with some slots left open and
/// returns the open slots' captured values, or `None` if the fixed text
/// does not match.
fn capture_slots(
    template: &Template,
    slots: &Slots,
    text: &str,
    open: impl Fn(Placeholder) -> bool,
) -> Option<Vec<(Placeholder, String)>> {
    let mut order = Vec::new();
    let skeleton = template
        .render(|p| {
            if open(p) {
                order.push(p);
                Some(SENTINEL.to_string())
            } else {
                slots.get(p).map(str::to_string)
            }
        })
        .ok()?;
    let pattern: Vec<String> = skeleton.split(SENTINEL).map(regex::escape).collect();
    let re = regex::Regex::new(&format!("^{}$", pattern.join("(.+?)"))).ok()?;
    let caps = re.captures(text)?;
    Some(
        order
            .into_iter()
            .enumerate()
            .map(|(i, p)| (p, caps.get(i + 1).map_or("", |m| m.as_str()).to_string()))
            .collect(),
    )
}

/// Per-slot differences between the stored and the expected instruction.
/// Slots are freed one at a time first so adjacent slots cannot absorb each
/// other's text; if several slots differ, all are freed together.
fn slot_diffs(template: &Template, slots: &Slots, text: &str, expected: &str) -> Vec<SlotDiff> {
    let used: Vec<Placeholder> = {
        let mut v: Vec<Placeholder> = template
            .tokens()
            .filter_map(|t| match t {
                Token::Placeholder(p) => Some(*p),
                Token::Literal(_) => None,
            })
            .collect();
        v.sort();
        v.dedup();
        v
    };
    let compare = |captured: Vec<(Placeholder, String)>| -> Vec<SlotDiff> {
        captured
            .into_iter()
            .filter_map(|(p, found)| {
                let exp = slots.get(p).unwrap_or_default();
                (!found.eq_ignore_ascii_case(exp)).then(|| SlotDiff {
                    slot: p.name().to_string(),
                    expected: exp.to_string(),
                    found,
                })
            })
            .collect()
    };
    for &p in &used {
        if let Some(captured) = capture_slots(template, slots, text, |q| q == p) {
            let diffs = compare(captured);
            if !diffs.is_empty() {
                return diffs;
            }
        }
    }
    if let Some(captured) = capture_slots(template, slots, text, |_| true) {
        let diffs = compare(captured);
        if !diffs.is_empty() {
            return diffs;
        }
    }
    vec![SlotDiff { slot: "instruction".into(), expected: expected.to_string(), found: text.to_string() }]
}
