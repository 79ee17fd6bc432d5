//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls the library's own geometry.

#![allow(dead_code)]

use std::collections::BTreeMap;

use navsynth_core::geo::GeoPoint;
use navsynth_core::mapgraph::{EdgeSpec, Entity, Geometry, MapBundle, NodeSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub const R_EARTH: f64 = 6_371_000.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit(p: GeoPoint) -> [f64; 3] {
    let (phi, lam) = (p.lat().to_radians(), p.lon().to_radians());
    [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Great-circle distance from the n-vector angle `atan2(|a×b|, a·b)`, which
/// stays well conditioned for both tiny and near-antipodal separations.
pub fn vector_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (u, v) = (unit(a), unit(b));
    norm(cross(u, v)).atan2(dot(u, v)) * R_EARTH
}

/// Initial bearing from the components of `b` along the local east and
/// north unit vectors at `a`.
pub fn vector_bearing(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi, lam) = (a.lat().to_radians(), a.lon().to_radians());
    let east = [-lam.sin(), lam.cos(), 0.0];
    let north = [-phi.sin() * lam.cos(), -phi.sin() * lam.sin(), phi.cos()];
    let v = unit(b);
    let deg = dot(v, east).atan2(dot(v, north)).to_degrees();
    if deg < 0.0 {
        deg + 360.0
    } else {
        deg
    }
}

/// Smallest absolute difference between two angles in degrees.
pub fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 360.0;
    d.min(360.0 - d)
}

/// RIGHT (true) iff the clockwise turn from path to landmark is under 180°.
pub fn direct_is_right(theta_path: f64, theta_landmark: f64) -> bool {
    let mut delta = theta_landmark - theta_path;
    while delta < 0.0 {
        delta += 360.0;
    }
    while delta >= 360.0 {
        delta -= 360.0;
    }
    delta < 180.0
}

/// Sector index 0..8 clockwise from North, boundaries belonging to the later sector.
pub fn sector_of(bearing: f64) -> usize {
    let b = bearing.rem_euclid(360.0);
    let bounds = [22.5, 67.5, 112.5, 157.5, 202.5, 247.5, 292.5, 337.5];
    bounds.iter().position(|&x| b < x).unwrap_or_default()
}

/// Equirectangular meters around `origin`, x east and y north.
pub fn planar(origin: GeoPoint, p: GeoPoint) -> (f64, f64) {
    let x = (p.lon() - origin.lon()).to_radians() * origin.lat().to_radians().cos() * R_EARTH;
    let y = (p.lat() - origin.lat()).to_radians() * R_EARTH;
    (x, y)
}

/// Point `(x east, y north)` meters from `origin` on the same approximation.
pub fn unplanar(origin: GeoPoint, x: f64, y: f64) -> GeoPoint {
    let lat = origin.lat() + (y / R_EARTH).to_degrees();
    let lon = origin.lon() + (x / (R_EARTH * origin.lat().to_radians().cos())).to_degrees();
    GeoPoint::new(lat, lon).unwrap()
}

/// Distance from `p` to segment `ab` in a plane, and the clamped parameter.
pub fn planar_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (fx, fy) = (a.0 + t * dx, a.1 + t * dy);
    (((p.0 - fx).powi(2) + (p.1 - fy).powi(2)).sqrt(), t)
}

/// Single-source shortest distances by Bellman-Ford relaxation.
pub fn bellman_ford(n: usize, edges: &[(usize, usize, f64)], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; n];
    dist[source] = 0.0;
    for _ in 0..n {
        let mut changed = false;
        for &(u, v, w) in edges {
            if dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                changed = true;
            }
            if dist[v] + w < dist[u] {
                dist[u] = dist[v] + w;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    dist
}

/// Numeric rank straight from the tags: 5 wiki, 4 brand, 3 tourism,
/// 2 amenity, 1 shop, 0 otherwise.
pub fn tag_rank(e: &Entity) -> u8 {
    let has = |k: &str| e.tags.contains_key(k);
    if has("wikipedia") || has("wikidata") {
        5
    } else if has("brand") {
        4
    } else if has("tourism") {
        3
    } else if has("amenity") {
        2
    } else if has("shop") {
        1
    } else {
        0
    }
}

/// Whether an entity has a usable type tag.
pub fn typed(e: &Entity) -> bool {
    ["tourism", "amenity", "shop", "brand"]
        .iter()
        .any(|k| e.tags.get(*k).is_some_and(|v| !v.trim().is_empty() && v != "yes"))
}

/// Argmax over (rank, -distance, -id) of every entity within 1 km.
pub fn brute_baseline(entities: &[Entity], start: GeoPoint) -> Option<String> {
    entities
        .iter()
        .map(|e| (e, vector_distance(start, e.centroid())))
        .filter(|(_, d)| *d <= 1000.0)
        .min_by(|(a, da), (b, db)| {
            tag_rank(b)
                .cmp(&tag_rank(a))
                .then(da.total_cmp(db))
                .then(a.id.cmp(&b.id))
        })
        .map(|(e, _)| e.id.clone())
}

/// Percentage of errors at or below each grid distance.
pub fn brute_cdf(errors: &[f64], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&d| 100.0 * errors.iter().filter(|&&e| e <= d).count() as f64 / errors.len() as f64)
        .collect()
}

const PLACEHOLDERS: [&str; 6] = ["END_POINT", "NEAR_PIVOT", "MAIN_PIVOT", "CARDINAL_DIRECTION", "EGO_SIDE", "BLOCKS"];

/// A random acyclic grammar in file syntax plus its template count
/// computed on this side's own representation.
pub fn random_grammar<R: Rng>(rng: &mut R) -> (String, u128) {
    #[derive(Clone)]
    enum Sym {
        Lit(String),
        Ph(&'static str),
        Nt(usize),
    }
    let n = rng.random_range(1..=6);
    let mut rules: Vec<Vec<Vec<Sym>>> = Vec::with_capacity(n);
    for i in 0..n {
        let alts = rng.random_range(1..=4);
        let mut alternatives = Vec::new();
        for _ in 0..alts {
            let len = rng.random_range(1..=4);
            let mut seq = Vec::new();
            for _ in 0..len {
                let roll = rng.random_range(0..10);
                let sym = if roll < 3 && i + 1 < n {
                    Sym::Nt(rng.random_range(i + 1..n))
                } else if roll < 5 {
                    Sym::Ph(PLACEHOLDERS[rng.random_range(0..PLACEHOLDERS.len())])
                } else if roll == 5 {
                    Sym::Lit(String::new())
                } else {
                    Sym::Lit(format!("w{}", rng.random_range(0..20)))
                };
                seq.push(sym);
            }
            alternatives.push(seq);
        }
        rules.push(alternatives);
    }
    let mut counts = vec![0u128; n];
    for i in (0..n).rev() {
        counts[i] = rules[i]
            .iter()
            .map(|alt| {
                alt.iter()
                    .map(|s| match s {
                        Sym::Nt(j) => counts[*j],
                        _ => 1,
                    })
                    .product::<u128>()
            })
            .sum();
    }
    let mut text = String::from("# generated\n");
    for (i, alts) in rules.iter().enumerate() {
        let rendered: Vec<String> = alts
            .iter()
            .map(|alt| {
                alt.iter()
                    .map(|s| match s {
                        Sym::Lit(l) => format!("\"{l}\""),
                        Sym::Ph(p) => p.to_string(),
                        Sym::Nt(j) => format!("Rule{j}"),
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        text.push_str(&format!("Rule{i} -> {}\n", rendered[0]));
        for r in &rendered[1..] {
            text.push_str(&format!("  | {r}\n"));
        }
    }
    (text, counts[0])
}

pub fn origin() -> GeoPoint {
    GeoPoint::new(48.85, 2.35).unwrap()
}

const KINDS: [(&str, &str); 8] = [
    ("shop", "books"),
    ("shop", "bakery"),
    ("amenity", "cafe"),
    ("amenity", "bank"),
    ("tourism", "museum"),
    ("brand", "Acme"),
    ("wikidata", "Q42"),
    ("building", "yes"),
];

/// `n` entities scattered over a `size` meter square, mostly points with
/// some small polygons and random tags.
pub fn random_entities<R: Rng>(rng: &mut R, n: usize, size: f64) -> Vec<Entity> {
    let o = origin();
    (0..n)
        .map(|i| {
            let (x, y) = (rng.random_range(0.0..size), rng.random_range(0.0..size));
            let mut tags = BTreeMap::new();
            for _ in 0..rng.random_range(0..3) {
                let (k, v) = KINDS[rng.random_range(0..KINDS.len())];
                tags.insert(k.to_string(), v.to_string());
            }
            if tags.contains_key("brand") && !tags.contains_key("shop") {
                tags.insert("shop".into(), "clothes".into());
            }
            let name = rng.random_bool(0.4).then(|| format!("Place {i}"));
            let id = format!("r{i:04}");
            if rng.random_bool(0.15) {
                let h = rng.random_range(3.0..40.0);
                let ring = vec![
                    unplanar(o, x - h, y - h),
                    unplanar(o, x + h, y - h),
                    unplanar(o, x + h, y + h),
                    unplanar(o, x - h, y + h),
                    unplanar(o, x - h, y - h),
                ];
                Entity::new(id, name, tags, Geometry::Polygon(ring)).unwrap()
            } else {
                Entity::new(id, name, tags, Geometry::Point(unplanar(o, x, y))).unwrap()
            }
        })
        .collect()
}

/// Random connected street graph: a random spanning tree plus extra edges.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, extra: usize, size: f64) -> (Vec<NodeSpec>, Vec<EdgeSpec>) {
    let o = origin();
    let nodes: Vec<NodeSpec> = (0..n)
        .map(|i| NodeSpec {
            id: format!("v{i:03}"),
            point: unplanar(o, rng.random_range(0.0..size), rng.random_range(0.0..size)),
        })
        .collect();
    let mut pairs = std::collections::BTreeSet::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        pairs.insert((j, i));
    }
    let mut tries = 0;
    while pairs.len() < n - 1 + extra && tries < 100 * (extra + 1) {
        tries += 1;
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(a, b)| EdgeSpec {
            u: nodes[a].id.clone(),
            v: nodes[b].id.clone(),
            street: Some(format!("S{}", a % 5)),
            length: None,
        })
        .collect();
    (nodes, edges)
}

pub fn random_bundle<R: Rng>(rng: &mut R, entities: usize, nodes: usize) -> MapBundle {
    let es = random_entities(rng, entities, 3000.0);
    let (ns, edges) = random_graph(rng, nodes, nodes / 2, 3000.0);
    MapBundle::from_parts(es, ns, edges).unwrap()
}
