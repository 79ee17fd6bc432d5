//! Seeded synthetic grid cities for tests, demos and benchmarks.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::geo::{GeoPoint, LocalFrame};
use crate::mapgraph::{EdgeSpec, Entity, Geometry, MapBundle, MapError, NodeSpec};
use crate::sampler::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct CityConfig {
    /// Intersections per side.
    pub rows: usize,
    pub cols: usize,
    /// Distance between neighboring intersections in meters.
    pub spacing_m: f64,
    /// Extra nodes placed inside each block edge.
    pub subdivisions: usize,
    pub entities: usize,
    /// Large park polygons, counted within `entities`.
    pub parks: usize,
    pub origin: GeoPoint,
    pub seed: u64,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self {
            rows: 30,
            cols: 30,
            spacing_m: 120.0,
            subdivisions: 2,
            entities: 5000,
            parks: 8,
            origin: GeoPoint::new(40.70, -74.00).expect("valid origin"),
            seed: 7,
        }
    }
}

const STREET_NAMES: [&str; 30] = [
    "Oak", "Maple", "Cedar", "Elm", "Pine", "Birch", "Willow", "Spruce", "Walnut", "Chestnut",
    "Hickory", "Aspen", "Poplar", "Laurel", "Magnolia", "Juniper", "Alder", "Hazel", "Linden",
    "Sycamore", "Cypress", "Holly", "Ivy", "Rowan", "Sequoia", "Acacia", "Beech", "Hawthorn",
    "Olive", "Palm",
];

const NAME_WORDS: [&str; 24] = [
    "Golden", "Harbor", "Corner", "Little", "Blue", "Riverside", "Sunny", "Old Town", "Union",
    "Liberty", "Green", "Silver", "Copper", "Lantern", "Meadow", "Summit", "Anchor", "Bright",
    "Crescent", "Hillside", "Orchard", "Parkside", "Village", "Market",
];

const SHOPS: [&str; 14] = [
    "books", "clothes", "convenience", "supermarket", "bakery", "florist", "hairdresser", "shoes",
    "mobile_phone", "hardware", "deli", "butcher", "laundry", "jewelry",
];
const AMENITIES: [&str; 12] = [
    "cafe", "restaurant", "bar", "pharmacy", "bank", "fast_food", "school", "library", "post_office",
    "place_of_worship", "ice_cream", "theatre",
];
const TOURISM: [&str; 5] = ["museum", "gallery", "hotel", "attraction", "artwork"];
const BRANDS: [(&str, &str, &str); 6] = [
    ("amenity", "cafe", "Bluebird Coffee"),
    ("amenity", "fast_food", "Burger Barn"),
    ("shop", "convenience", "Quick Stop"),
    ("amenity", "bank", "Harbor Bank"),
    ("shop", "supermarket", "Fresh Basket"),
    ("amenity", "pharmacy", "Wellcare"),
];

fn street_name(axis: char, i: usize) -> String {
    let base = STREET_NAMES[i % STREET_NAMES.len()];
    let suffix = if axis == 'h' { "Street" } else { "Avenue" };
    if i < STREET_NAMES.len() {
        format!("{base} {suffix}")
    } else {
        format!("{base} {suffix} {}", i / STREET_NAMES.len() + 1)
    }
}

fn title(value: &str) -> String {
    value
        .split('_')
        .map(|w| {
            let mut c = w.chars();
            c.next().map_or(String::new(), |f| f.to_uppercase().chain(c).collect())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Tags and an optional name for one ordinary entity, drawn by prominence tier.
fn draw_tags<R: Rng>(rng: &mut R, index: usize) -> (Vec<(String, String)>, Option<String>) {
    let roll: f64 = rng.random();
    let mut tags: Vec<(String, String)> = Vec::new();
    let mut name = None;
    let mut named = rng.random_bool(0.4);
    if roll < 0.04 {
        let v = *TOURISM.choose(rng).unwrap();
        tags.push(("tourism".into(), v.into()));
        tags.push(("wikidata".into(), format!("Q{}", 1000 + index)));
        named = true;
    } else if roll < 0.12 {
        let (k, v, brand) = *BRANDS.choose(rng).unwrap();
        tags.push((k.into(), v.into()));
        tags.push(("brand".into(), brand.into()));
        name = Some(brand.to_string());
        named = false;
    } else if roll < 0.22 {
        tags.push(("tourism".into(), (*TOURISM.choose(rng).unwrap()).into()));
    } else if roll < 0.58 {
        tags.push(("amenity".into(), (*AMENITIES.choose(rng).unwrap()).into()));
    } else if roll < 0.92 {
        tags.push(("shop".into(), (*SHOPS.choose(rng).unwrap()).into()));
    } else {
        named = rng.random_bool(0.5);
    }
    if named {
        let word = *NAME_WORDS.choose(rng).unwrap();
        let kind = tags.first().map_or_else(|| "Place".to_string(), |(_, v)| title(v));
        name = Some(format!("{word} {kind}"));
    }
    (tags, name)
}

/// A square grid of streets with entities set back 15-30 m from the
/// centerlines. Row streets run east-west, column avenues north-south.
pub fn grid_city(config: &CityConfig) -> Result<MapBundle, MapError> {
    let mut rng = rng_from_seed(config.seed);
    let frame = LocalFrame::new(config.origin);
    let s = config.spacing_m;
    let sub = config.subdivisions;
    let at = |x: f64, y: f64| frame.to_point(x, y);

    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let node_id = |r: usize, c: usize| format!("n{r:03}_{c:03}");
    for r in 0..config.rows {
        for c in 0..config.cols {
            nodes.push(NodeSpec { id: node_id(r, c), point: at(c as f64 * s, r as f64 * s) });
        }
    }
    let mut chain = |from: String, to: String, p0: (f64, f64), p1: (f64, f64), street: String, tag: &str| {
        let mut prev = from;
        for k in 1..=sub {
            let f = k as f64 / (sub + 1) as f64;
            let id = format!("{tag}_{k}");
            nodes.push(NodeSpec {
                id: id.clone(),
                point: at(p0.0 + f * (p1.0 - p0.0), p0.1 + f * (p1.1 - p0.1)),
            });
            edges.push(EdgeSpec { u: prev, v: id.clone(), street: Some(street.clone()), length: None });
            prev = id;
        }
        edges.push(EdgeSpec { u: prev, v: to, street: Some(street), length: None });
    };
    for r in 0..config.rows {
        for c in 0..config.cols {
            let here = (c as f64 * s, r as f64 * s);
            if c + 1 < config.cols {
                chain(
                    node_id(r, c),
                    node_id(r, c + 1),
                    here,
                    (here.0 + s, here.1),
                    street_name('h', r),
                    &format!("h{r:03}_{c:03}"),
                );
            }
            if r + 1 < config.rows {
                chain(
                    node_id(r, c),
                    node_id(r + 1, c),
                    here,
                    (here.0, here.1 + s),
                    street_name('v', c),
                    &format!("v{r:03}_{c:03}"),
                );
            }
        }
    }

    let width = (config.cols.saturating_sub(1)) as f64 * s;
    let height = (config.rows.saturating_sub(1)) as f64 * s;
    let mut entities = Vec::with_capacity(config.entities);
    for i in 0..config.parks.min(config.entities) {
        let cx = rng.random_range(0.2..0.8) * width;
        let cy = rng.random_range(0.2..0.8) * height;
        let radius = rng.random_range(120.0..200.0);
        let mut ring: Vec<GeoPoint> = (0..12)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 12.0;
                at(cx + radius * a.cos(), cy + radius * a.sin())
            })
            .collect();
        ring.push(ring[0]);
        let mut tags = BTreeMap::from([("leisure".to_string(), "park".to_string())]);
        if i % 2 == 0 {
            tags.insert("wikidata".into(), format!("Q{}", 900 + i));
        }
        let name = format!("{} Park", NAME_WORDS[i % NAME_WORDS.len()]);
        entities.push(
            Entity::new(format!("park{i:02}"), Some(name), tags, Geometry::Polygon(ring))
                .expect("park ring is closed"),
        );
    }
    for i in entities.len()..config.entities {
        let horizontal = rng.random_bool(0.5);
        let (lines, span) = if horizontal { (config.rows, width) } else { (config.cols, height) };
        let line = rng.random_range(0..lines) as f64 * s;
        let along = rng.random_range(0.0..span.max(1.0));
        let offset = rng.random_range(15.0..30.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (x, y) = if horizontal { (along, line + offset) } else { (line + offset, along) };
        let (tags, name) = draw_tags(&mut rng, i);
        let tags: BTreeMap<String, String> = tags.into_iter().collect();
        let id = format!("e{i:05}");
        let entity = if rng.random_bool(0.1) {
            let half = rng.random_range(5.0..12.0);
            let ring = vec![
                at(x - half, y - half),
                at(x + half, y - half),
                at(x + half, y + half),
                at(x - half, y + half),
                at(x - half, y - half),
            ];
            Entity::new(id, name, tags, Geometry::Polygon(ring)).expect("square ring is closed")
        } else {
            Entity::new(id, name, tags, Geometry::Point(at(x, y))).expect("points are always valid")
        };
        entities.push(entity);
    }
    MapBundle::from_parts(entities, nodes, edges)
}
