//! Map knowledge graph: entities with tags and geometry, an undirected street
//! network, grid-bucketed spatial indexes over both, and routing.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::geo::{haversine_distance, GeoPoint, LocalFrame, EARTH_RADIUS_M};

/// Default distance within which a query point snaps onto a street node.
pub const DEFAULT_SNAP_TOLERANCE_M: f64 = 500.0;

/// Relative disagreement tolerated between a stored edge length and the
/// recomputed haversine length.
pub const EDGE_LENGTH_TOLERANCE: f64 = 0.01;

/// Tag keys that give an entity a describable type, in lookup order.
pub const TYPE_TAG_KEYS: [&str; 4] = ["tourism", "amenity", "shop", "brand"];

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Point(GeoPoint),
    /// Closed ring: first vertex repeated as the last one.
    Polygon(Vec<GeoPoint>),
}

impl Geometry {
    pub fn vertices(&self) -> &[GeoPoint] {
        match self {
            Geometry::Point(p) => std::slice::from_ref(p),
            Geometry::Polygon(ring) => ring,
        }
    }
}

/// `key=value` tag that names what kind of thing an entity is.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EntityType {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: String,
    pub name: Option<String>,
    pub tags: BTreeMap<String, String>,
    pub geometry: Geometry,
    centroid: GeoPoint,
    extent_radius: f64,
}

impl Entity {
    pub fn new(
        id: impl Into<String>,
        name: Option<String>,
        tags: BTreeMap<String, String>,
        geometry: Geometry,
    ) -> Result<Self, GeometryError> {
        let (centroid, extent_radius) = match &geometry {
            Geometry::Point(p) => (*p, 0.0),
            Geometry::Polygon(ring) => {
                if ring.len() < 4 {
                    return Err(GeometryError::TooFewVertices(ring.len()));
                }
                if ring.first() != ring.last() {
                    return Err(GeometryError::OpenRing);
                }
                let c = polygon_centroid(ring);
                let r = ring
                    .iter()
                    .map(|v| haversine_distance(c, *v))
                    .fold(0.0, f64::max);
                // A ring collapsed onto one coordinate still counts as a polygon.
                (c, r.max(f64::MIN_POSITIVE))
            }
        };
        Ok(Self {
            id: id.into(),
            name: name.filter(|n| !n.trim().is_empty()),
            tags,
            geometry,
            centroid,
            extent_radius,
        })
    }

    pub fn point(id: impl Into<String>, name: Option<&str>, tags: &[(&str, &str)], at: GeoPoint) -> Self {
        let tags = tags
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self::new(id, name.map(str::to_string), tags, Geometry::Point(at))
            .expect("point geometry is always valid")
    }

    pub fn centroid(&self) -> GeoPoint {
        self.centroid
    }

    /// Maximum centroid-to-vertex distance; zero for points.
    pub fn extent_radius(&self) -> f64 {
        self.extent_radius
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.get(key).map(String::as_str)
    }

    /// Whether [`Entity::entity_type`] would return a tag, without allocating.
    pub fn has_type(&self) -> bool {
        TYPE_TAG_KEYS
            .iter()
            .any(|key| self.tag(key).is_some_and(|v| !v.trim().is_empty() && v != "yes"))
    }

    pub fn entity_type(&self) -> Option<EntityType> {
        TYPE_TAG_KEYS.iter().find_map(|key| {
            self.tag(key)
                .filter(|v| !v.trim().is_empty() && *v != "yes")
                .map(|v| EntityType {
                    key: key.to_string(),
                    value: v.to_string(),
                })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("polygon ring is not closed (first vertex != last vertex)")]
    OpenRing,
    #[error("polygon ring has {0} stored vertices, at least 4 required")]
    TooFewVertices(usize),
}

fn polygon_centroid(ring: &[GeoPoint]) -> GeoPoint {
    let frame = LocalFrame::new(ring[0]);
    let xy: Vec<(f64, f64)> = ring.iter().map(|p| frame.to_xy(*p)).collect();
    let (mut area2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for w in xy.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let cross = x0 * y1 - x1 * y0;
        area2 += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    if area2.abs() < 1e-6 {
        let distinct = &xy[..xy.len() - 1];
        let n = distinct.len() as f64;
        let mx = distinct.iter().map(|p| p.0).sum::<f64>() / n;
        let my = distinct.iter().map(|p| p.1).sum::<f64>() / n;
        return frame.to_point(mx, my);
    }
    frame.to_point(cx / (3.0 * area2), cy / (3.0 * area2))
}

/// External-recognition tiers, lowest first so that `Ord` ranks them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProminenceLevel {
    Unranked,
    Shop,
    Amenity,
    Tourism,
    Brand,
    WikiLinked,
}

pub fn prominence(e: &Entity) -> ProminenceLevel {
    let has = |k: &str| e.tags.contains_key(k);
    if has("wikipedia") || has("wikidata") {
        ProminenceLevel::WikiLinked
    } else if has("brand") {
        ProminenceLevel::Brand
    } else if has("tourism") {
        ProminenceLevel::Tourism
    } else if has("amenity") {
        ProminenceLevel::Amenity
    } else if has("shop") {
        ProminenceLevel::Shop
    } else {
        ProminenceLevel::Unranked
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub street: Option<String>,
    pub length: f64,
}

impl Edge {
    pub fn other(&self, node: usize) -> usize {
        if node == self.u {
            self.v
        } else {
            self.u
        }
    }
}

/// Undirected street network. Node indices follow ascending node id.
#[derive(Debug, Clone)]
pub struct StreetGraph {
    ids: Vec<String>,
    points: Vec<GeoPoint>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    /// Per node: `(neighbor, edge index)`, sorted.
    adjacency: Vec<Vec<(usize, usize)>>,
    degree: Vec<usize>,
}

impl StreetGraph {
    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn point(&self, node: usize) -> GeoPoint {
        self.points[node]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    /// Number of distinct neighboring nodes.
    pub fn degree(&self, node: usize) -> usize {
        self.degree[node]
    }

    /// Shortest edge joining two adjacent nodes.
    pub fn edge_between(&self, a: usize, b: usize) -> Option<&Edge> {
        self.adjacency[a]
            .iter()
            .filter(|(n, _)| *n == b)
            .map(|(_, e)| &self.edges[*e])
            .min_by(|x, y| x.length.total_cmp(&y.length))
    }

    /// Number of connected components (isolated nodes count as components).
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.node_count()];
        let mut count = 0;
        for start in 0..self.node_count() {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(n) = stack.pop() {
                for &(m, _) in &self.adjacency[n] {
                    if !seen[m] {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
        }
        count
    }
}

/// Uniform lat/lon bucket grid. Queries fall back to a linear scan near the
/// poles, across the antimeridian, or when the box spans more cells than exist.
#[derive(Debug, Clone)]
struct GridIndex {
    cell_deg: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<GeoPoint>,
}

impl GridIndex {
    const CELL_DEG: f64 = 0.005;

    fn build(points: Vec<GeoPoint>) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(Self::CELL_DEG, *p)).or_default().push(i);
        }
        Self {
            cell_deg: Self::CELL_DEG,
            cells,
            points,
        }
    }

    fn key(cell: f64, p: GeoPoint) -> (i64, i64) {
        ((p.lat() / cell).floor() as i64, (p.lon() / cell).floor() as i64)
    }

    /// All `(index, distance)` with distance ≤ radius, in no particular order.
    fn within(&self, p: GeoPoint, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if radius < 0.0 || self.points.is_empty() {
            return out;
        }
        let mut check = |i: usize| {
            let d = haversine_distance(p, self.points[i]);
            if d <= radius {
                out.push((i, d));
            }
        };
        let delta = radius / EARTH_RADIUS_M;
        let dlat = delta.to_degrees() * 1.01 + 1e-9;
        let max_lat = p.lat().abs() + dlat;
        let linear = if max_lat >= 89.0 {
            true
        } else {
            let ratio = delta.sin() / max_lat.to_radians().cos();
            if ratio >= 1.0 {
                true
            } else {
                let dlon = ratio.asin().to_degrees() * 1.01 + 1e-9;
                let (lo, hi) = (p.lon() - dlon, p.lon() + dlon);
                if lo < -180.0 || hi > 180.0 {
                    true
                } else {
                    let (r0, c0) = Self::key(self.cell_deg, GeoPoint::new(p.lat() - dlat, lo).unwrap());
                    let (r1, c1) = Self::key(self.cell_deg, GeoPoint::new(p.lat() + dlat, hi).unwrap());
                    let span = ((r1 - r0 + 1) as u128) * ((c1 - c0 + 1) as u128);
                    if span > self.cells.len() as u128 {
                        true
                    } else {
                        for r in r0..=r1 {
                            for c in c0..=c1 {
                                if let Some(bucket) = self.cells.get(&(r, c)) {
                                    bucket.iter().for_each(|&i| check(i));
                                }
                            }
                        }
                        false
                    }
                }
            }
        };
        if linear {
            (0..self.points.len()).for_each(check);
        }
        out
    }
}

/// Entity hit from a radius query.
#[derive(Debug, Clone, Copy)]
pub struct Neighbor<'a> {
    pub entity: &'a Entity,
    pub distance: f64,
}

/// Shortest route over the street graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub nodes: Vec<usize>,
    pub polyline: Vec<GeoPoint>,
    pub total_length: f64,
    pub start_snap: GeoPoint,
    pub end_snap: GeoPoint,
}

impl Route {
    pub fn is_single_node(&self) -> bool {
        self.nodes.len() <= 1
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouteError {
    #[error("street graph is empty")]
    EmptyGraph,
    #[error("no street node within {tolerance} m of {point}")]
    NoSnap { point: GeoPoint, tolerance: f64 },
    #[error("no path between nodes {from} and {to}")]
    Disconnected { from: String, to: String },
}

/// One problem found while loading a bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub file: String,
    pub line: Option<usize>,
    pub field: Option<String>,
    pub kind: DiagnosticKind,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recomputed_length: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Io,
    Syntax,
    MissingField,
    InvalidValue,
    OpenRing,
    TooFewVertices,
    DuplicateId,
    UnknownNode,
    SelfLoop,
    EdgeLengthMismatch,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(field) = &self.field {
            write!(f, " [{field}]")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("{} invalid map record(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Diagnostic>),
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl MapError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            MapError::Invalid(d) => d,
            MapError::Write { .. } => &[],
        }
    }
}

/// Street node as supplied to [`MapBundle::from_parts`].
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: String,
    pub point: GeoPoint,
}

#[derive(Debug, Clone)]
pub struct EdgeSpec {
    pub u: String,
    pub v: String,
    pub street: Option<String>,
    /// Optional stored length, validated against the haversine length.
    pub length: Option<f64>,
}

/// Immutable map: entities, street graph and spatial indexes.
#[derive(Debug, Clone)]
pub struct MapBundle {
    entities: Vec<Entity>,
    entity_index: HashMap<String, usize>,
    graph: StreetGraph,
    entity_grid: GridIndex,
    node_grid: GridIndex,
    snap_tolerance: f64,
}

impl MapBundle {
    /// Builds a validated bundle from in-memory records.
    pub fn from_parts(
        entities: Vec<Entity>,
        nodes: Vec<NodeSpec>,
        edges: Vec<EdgeSpec>,
    ) -> Result<Self, MapError> {
        let mut diags = Vec::new();
        let entities_src: Vec<(Option<usize>, Entity)> =
            entities.into_iter().map(|e| (None, e)).collect();
        let nodes_src: Vec<(Option<usize>, NodeSpec)> = nodes.into_iter().map(|n| (None, n)).collect();
        let edges_src: Vec<(Option<usize>, EdgeSpec)> = edges.into_iter().map(|e| (None, e)).collect();
        let bundle = assemble(
            "<memory>",
            "<memory>",
            entities_src,
            nodes_src,
            edges_src,
            &mut diags,
        );
        if diags.is_empty() {
            Ok(bundle)
        } else {
            Err(MapError::Invalid(diags))
        }
    }

    pub fn with_snap_tolerance(mut self, meters: f64) -> Self {
        self.snap_tolerance = meters;
        self
    }

    pub fn snap_tolerance(&self) -> f64 {
        self.snap_tolerance
    }

    /// Entities in ascending id order.
    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entity_index.get(id).map(|&i| &self.entities[i])
    }

    pub fn graph(&self) -> &StreetGraph {
        &self.graph
    }

    /// Entities whose centroid lies within `radius` of `p` and pass `filter`,
    /// ascending by distance then id.
    pub fn nearest_entities<F>(&self, p: GeoPoint, radius: f64, filter: F) -> Vec<Neighbor<'_>>
    where
        F: Fn(&Entity) -> bool,
    {
        if radius.is_nan() || radius <= 0.0 {
            return Vec::new();
        }
        let mut hits: Vec<Neighbor<'_>> = self
            .entity_grid
            .within(p, radius)
            .into_iter()
            .map(|(i, distance)| Neighbor {
                entity: &self.entities[i],
                distance,
            })
            .filter(|n| filter(n.entity))
            .collect();
        hits.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then_with(|| a.entity.id.cmp(&b.entity.id))
        });
        hits
    }

    /// Closest street node within `radius`, ties by node id.
    pub fn nearest_node(&self, p: GeoPoint, radius: f64) -> Option<(usize, f64)> {
        self.node_grid
            .within(p, radius)
            .into_iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    fn snap(&self, p: GeoPoint) -> Result<usize, RouteError> {
        self.nearest_node(p, self.snap_tolerance)
            .map(|(n, _)| n)
            .ok_or(RouteError::NoSnap {
                point: p,
                tolerance: self.snap_tolerance,
            })
    }

    /// Dijkstra over edge lengths between the nodes nearest to `a` and `b`.
    /// Equal tentative distances settle the lower node id first.
    pub fn shortest_path(&self, a: GeoPoint, b: GeoPoint) -> Result<Route, RouteError> {
        if self.graph.node_count() == 0 {
            return Err(RouteError::EmptyGraph);
        }
        let source = self.snap(a)?;
        let target = self.snap(b)?;
        let n = self.graph.node_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Reverse((Dist(0.0), source)));
        while let Some(Reverse((Dist(d), node))) = heap.pop() {
            if done[node] {
                continue;
            }
            done[node] = true;
            if node == target {
                break;
            }
            for &(next, e) in self.graph.neighbors(node) {
                if done[next] {
                    continue;
                }
                let nd = d + self.graph.edges[e].length;
                if nd < dist[next] {
                    dist[next] = nd;
                    prev[next] = node;
                    heap.push(Reverse((Dist(nd), next)));
                }
            }
        }
        if !dist[target].is_finite() {
            return Err(RouteError::Disconnected {
                from: self.graph.ids[source].clone(),
                to: self.graph.ids[target].clone(),
            });
        }
        let mut nodes = vec![target];
        let mut cur = target;
        while cur != source {
            cur = prev[cur];
            nodes.push(cur);
        }
        nodes.reverse();
        let polyline: Vec<GeoPoint> = nodes.iter().map(|&i| self.graph.points[i]).collect();
        Ok(Route {
            total_length: dist[target],
            start_snap: self.graph.points[source],
            end_snap: self.graph.points[target],
            nodes,
            polyline,
        })
    }

    /// Interior route nodes of degree ≥ 3, in traversal order.
    pub fn intersections_on(&self, route: &Route) -> Vec<usize> {
        if route.nodes.len() < 3 {
            return Vec::new();
        }
        route.nodes[1..route.nodes.len() - 1]
            .iter()
            .copied()
            .filter(|&n| self.graph.degree(n) >= 3)
            .collect()
    }

    /// Route segments delimited by intersections; zero for single-node routes.
    pub fn blocks_on(&self, route: &Route) -> usize {
        if route.is_single_node() {
            0
        } else {
            self.intersections_on(route).len() + 1
        }
    }

    /// Writes the bundle in the two-file JSON Lines layout read by [`load_bundle`].
    pub fn write_files(&self, entities_path: &Path, streets_path: &Path) -> Result<(), MapError> {
        let write_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| MapError::Write { path, source }
        };
        let mut out = BufWriter::new(File::create(entities_path).map_err(write_err(entities_path))?);
        for e in &self.entities {
            let (kind, coords): (&str, Vec<[f64; 2]>) = match &e.geometry {
                Geometry::Point(p) => ("point", vec![p.to_lon_lat()]),
                Geometry::Polygon(r) => ("polygon", r.iter().map(|p| p.to_lon_lat()).collect()),
            };
            let rec = json!({
                "id": e.id,
                "name": e.name,
                "tags": e.tags,
                "geometry": {"type": kind, "coords": coords},
            });
            writeln!(out, "{rec}").map_err(write_err(entities_path))?;
        }
        out.flush().map_err(write_err(entities_path))?;

        let mut out = BufWriter::new(File::create(streets_path).map_err(write_err(streets_path))?);
        for (id, p) in self.graph.ids.iter().zip(&self.graph.points) {
            let rec = json!({"type": "node", "id": id, "coord": p.to_lon_lat()});
            writeln!(out, "{rec}").map_err(write_err(streets_path))?;
        }
        for e in &self.graph.edges {
            let rec = json!({
                "type": "edge",
                "u": self.graph.ids[e.u],
                "v": self.graph.ids[e.v],
                "street": e.street,
            });
            writeln!(out, "{rec}").map_err(write_err(streets_path))?;
        }
        out.flush().map_err(write_err(streets_path))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn assemble(
    entities_file: &str,
    streets_file: &str,
    entities: Vec<(Option<usize>, Entity)>,
    nodes: Vec<(Option<usize>, NodeSpec)>,
    edges: Vec<(Option<usize>, EdgeSpec)>,
    diags: &mut Vec<Diagnostic>,
) -> MapBundle {
    let diag = |file: &str, line: Option<usize>, field: Option<&str>, kind, message: String| Diagnostic {
        file: file.to_string(),
        line,
        field: field.map(str::to_string),
        kind,
        message,
        recomputed_length: None,
    };

    let mut by_id: BTreeMap<String, Entity> = BTreeMap::new();
    for (line, e) in entities {
        if by_id.contains_key(&e.id) {
            diags.push(diag(
                entities_file,
                line,
                Some("id"),
                DiagnosticKind::DuplicateId,
                format!("duplicate entity id {:?}", e.id),
            ));
            continue;
        }
        by_id.insert(e.id.clone(), e);
    }
    let entities: Vec<Entity> = by_id.into_values().collect();
    let entity_index = entities
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.clone(), i))
        .collect();

    let mut node_map: BTreeMap<String, GeoPoint> = BTreeMap::new();
    for (line, n) in nodes {
        if node_map.contains_key(&n.id) {
            diags.push(diag(
                streets_file,
                line,
                Some("id"),
                DiagnosticKind::DuplicateId,
                format!("duplicate node id {:?}", n.id),
            ));
            continue;
        }
        node_map.insert(n.id, n.point);
    }
    let (ids, points): (Vec<String>, Vec<GeoPoint>) = node_map.into_iter().unzip();
    let index: HashMap<String, usize> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();

    let mut graph_edges = Vec::new();
    for (line, spec) in edges {
        let mut resolve = |field: &str, id: &str| match index.get(id) {
            Some(&i) => Some(i),
            None => {
                diags.push(diag(
                    streets_file,
                    line,
                    Some(field),
                    DiagnosticKind::UnknownNode,
                    format!("edge references unknown node {id:?}"),
                ));
                None
            }
        };
        let (Some(u), Some(v)) = (resolve("u", &spec.u), resolve("v", &spec.v)) else {
            continue;
        };
        if u == v {
            diags.push(diag(
                streets_file,
                line,
                Some("v"),
                DiagnosticKind::SelfLoop,
                format!("self-loop on node {:?}", spec.u),
            ));
            continue;
        }
        let length = haversine_distance(points[u], points[v]);
        if let Some(stored) = spec.length {
            let rel = if length > 0.0 {
                (stored - length).abs() / length
            } else if stored == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            if rel.is_nan() || rel > EDGE_LENGTH_TOLERANCE {
                let mut d = diag(
                    streets_file,
                    line,
                    Some("length"),
                    DiagnosticKind::EdgeLengthMismatch,
                    format!(
                        "stored length {stored} m differs from haversine length {length:.3} m by {:.2}%",
                        rel * 100.0
                    ),
                );
                d.recomputed_length = Some(length);
                diags.push(d);
                continue;
            }
        }
        graph_edges.push(Edge {
            u,
            v,
            street: spec.street.filter(|s| !s.trim().is_empty()),
            length,
        });
    }

    let mut adjacency = vec![Vec::new(); ids.len()];
    for (i, e) in graph_edges.iter().enumerate() {
        adjacency[e.u].push((e.v, i));
        adjacency[e.v].push((e.u, i));
    }
    let degree = adjacency
        .iter_mut()
        .map(|adj: &mut Vec<(usize, usize)>| {
            adj.sort_unstable();
            let mut distinct: Vec<usize> = adj.iter().map(|(n, _)| *n).collect();
            distinct.dedup();
            distinct.len()
        })
        .collect();

    let entity_grid = GridIndex::build(entities.iter().map(Entity::centroid).collect());
    let node_grid = GridIndex::build(points.clone());
    MapBundle {
        entities,
        entity_index,
        graph: StreetGraph {
            ids,
            points,
            index,
            edges: graph_edges,
            adjacency,
            degree,
        },
        entity_grid,
        node_grid,
        snap_tolerance: DEFAULT_SNAP_TOLERANCE_M,
    }
}

/// Loads and validates a two-file JSON Lines map bundle.
pub fn load_bundle(entities_path: &Path, streets_path: &Path) -> Result<MapBundle, MapError> {
    let (bundle, diags) = validate_bundle(entities_path, streets_path);
    match bundle {
        Some(b) if diags.is_empty() => Ok(b),
        _ => Err(MapError::Invalid(diags)),
    }
}

/// Runs every load-time check, collecting all diagnostics instead of
/// stopping at the first. The bundle is returned only when both files were
/// readable.
pub fn validate_bundle(entities_path: &Path, streets_path: &Path) -> (Option<MapBundle>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let efile = entities_path.display().to_string();
    let sfile = streets_path.display().to_string();

    let entity_lines = read_lines(entities_path, &efile, &mut diags);
    let street_lines = read_lines(streets_path, &sfile, &mut diags);
    let (Some(entity_lines), Some(street_lines)) = (entity_lines, street_lines) else {
        return (None, diags);
    };

    let mut entities = Vec::new();
    for (line, text) in entity_lines {
        let mut rec = Record::new(&efile, line, &mut diags);
        if let Some(e) = rec.parse_entity(&text) {
            entities.push((Some(line), e));
        }
    }
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (line, text) in street_lines {
        let mut rec = Record::new(&sfile, line, &mut diags);
        match rec.parse_street(&text) {
            Some(StreetRecord::Node(n)) => nodes.push((Some(line), n)),
            Some(StreetRecord::Edge(e)) => edges.push((Some(line), e)),
            None => {}
        }
    }
    let bundle = assemble(&efile, &sfile, entities, nodes, edges, &mut diags);
    (Some(bundle), diags)
}

fn read_lines(path: &Path, file: &str, diags: &mut Vec<Diagnostic>) -> Option<Vec<(usize, String)>> {
    let handle = match File::open(path) {
        Ok(f) => f,
        Err(err) => {
            diags.push(Diagnostic {
                file: file.to_string(),
                line: None,
                field: None,
                kind: DiagnosticKind::Io,
                message: err.to_string(),
                recomputed_length: None,
            });
            return None;
        }
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(handle).lines().enumerate() {
        match line {
            Ok(text) if text.trim().is_empty() => {}
            Ok(text) => out.push((i + 1, text)),
            Err(err) => {
                diags.push(Diagnostic {
                    file: file.to_string(),
                    line: Some(i + 1),
                    field: None,
                    kind: DiagnosticKind::Io,
                    message: err.to_string(),
                    recomputed_length: None,
                });
                return None;
            }
        }
    }
    Some(out)
}

enum StreetRecord {
    Node(NodeSpec),
    Edge(EdgeSpec),
}

/// Field extraction for one JSON Lines record, reporting problems by line and field.
struct Record<'a> {
    file: &'a str,
    line: usize,
    diags: &'a mut Vec<Diagnostic>,
}

impl<'a> Record<'a> {
    fn new(file: &'a str, line: usize, diags: &'a mut Vec<Diagnostic>) -> Self {
        Self { file, line, diags }
    }

    fn report(&mut self, field: Option<&str>, kind: DiagnosticKind, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            file: self.file.to_string(),
            line: Some(self.line),
            field: field.map(str::to_string),
            kind,
            message: message.into(),
            recomputed_length: None,
        });
    }

    fn object(&mut self, text: &str) -> Option<Map<String, Value>> {
        match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(map)) => Some(map),
            Ok(_) => {
                self.report(None, DiagnosticKind::Syntax, "record is not a JSON object");
                None
            }
            Err(err) => {
                self.report(None, DiagnosticKind::Syntax, format!("invalid JSON: {err}"));
                None
            }
        }
    }

    fn string(&mut self, obj: &Map<String, Value>, field: &str) -> Option<String> {
        match obj.get(field) {
            None => {
                self.report(Some(field), DiagnosticKind::MissingField, format!("missing field `{field}`"));
                None
            }
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => {
                self.report(
                    Some(field),
                    DiagnosticKind::InvalidValue,
                    format!("expected string, found {other}"),
                );
                None
            }
        }
    }

    fn optional_string(&mut self, obj: &Map<String, Value>, field: &str) -> Result<Option<String>, ()> {
        match obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => {
                self.report(
                    Some(field),
                    DiagnosticKind::InvalidValue,
                    format!("expected string or null, found {other}"),
                );
                Err(())
            }
        }
    }

    fn coord(&mut self, value: &Value, field: &str) -> Option<GeoPoint> {
        let pair = value.as_array().filter(|a| a.len() == 2).and_then(|a| {
            let lon = a[0].as_f64()?;
            let lat = a[1].as_f64()?;
            Some((lon, lat))
        });
        match pair {
            None => {
                self.report(
                    Some(field),
                    DiagnosticKind::InvalidValue,
                    format!("expected [lon, lat] pair, found {value}"),
                );
                None
            }
            Some((lon, lat)) => match GeoPoint::from_lon_lat(lon, lat) {
                Ok(p) => Some(p),
                Err(err) => {
                    self.report(Some(field), DiagnosticKind::InvalidValue, err.to_string());
                    None
                }
            },
        }
    }

    fn parse_entity(&mut self, text: &str) -> Option<Entity> {
        let obj = self.object(text)?;
        let id = self.string(&obj, "id");
        let name = self.optional_string(&obj, "name");
        let tags = match obj.get("tags") {
            None | Some(Value::Null) => Some(BTreeMap::new()),
            Some(Value::Object(map)) => {
                let mut tags = BTreeMap::new();
                let mut ok = true;
                for (k, v) in map {
                    match v {
                        Value::String(s) => {
                            tags.insert(k.clone(), s.clone());
                        }
                        other => {
                            self.report(
                                Some("tags"),
                                DiagnosticKind::InvalidValue,
                                format!("tag {k:?} must be a string, found {other}"),
                            );
                            ok = false;
                        }
                    }
                }
                ok.then_some(tags)
            }
            Some(other) => {
                self.report(
                    Some("tags"),
                    DiagnosticKind::InvalidValue,
                    format!("expected object, found {other}"),
                );
                None
            }
        };
        let geometry = self.parse_geometry(&obj);
        let (Some(id), Ok(name), Some(tags), Some(geometry)) = (id, name, tags, geometry) else {
            return None;
        };
        match Entity::new(id, name, tags, geometry) {
            Ok(e) => Some(e),
            Err(err) => {
                let kind = match err {
                    GeometryError::OpenRing => DiagnosticKind::OpenRing,
                    GeometryError::TooFewVertices(_) => DiagnosticKind::TooFewVertices,
                };
                self.report(Some("geometry"), kind, err.to_string());
                None
            }
        }
    }

    fn parse_geometry(&mut self, obj: &Map<String, Value>) -> Option<Geometry> {
        let Some(geom) = obj.get("geometry") else {
            self.report(Some("geometry"), DiagnosticKind::MissingField, "missing field `geometry`");
            return None;
        };
        let Some(geom) = geom.as_object() else {
            self.report(Some("geometry"), DiagnosticKind::InvalidValue, "geometry must be an object");
            return None;
        };
        let kind = self.string(geom, "type").map(|k| (k, "geometry.type"));
        let coords = match geom.get("coords") {
            Some(Value::Array(items)) => {
                let mut pts = Vec::with_capacity(items.len());
                for item in items {
                    pts.push(self.coord(item, "geometry.coords")?);
                }
                Some(pts)
            }
            Some(_) => {
                self.report(
                    Some("geometry.coords"),
                    DiagnosticKind::InvalidValue,
                    "coords must be a list of [lon, lat] pairs",
                );
                None
            }
            None => {
                self.report(
                    Some("geometry.coords"),
                    DiagnosticKind::MissingField,
                    "missing field `coords`",
                );
                None
            }
        };
        let ((kind, kind_field), coords) = (kind?, coords?);
        match kind.as_str() {
            "point" if coords.len() == 1 => Some(Geometry::Point(coords[0])),
            "point" => {
                self.report(
                    Some("geometry.coords"),
                    DiagnosticKind::InvalidValue,
                    format!("point geometry needs exactly 1 coordinate, found {}", coords.len()),
                );
                None
            }
            "polygon" => Some(Geometry::Polygon(coords)),
            other => {
                self.report(
                    Some(kind_field),
                    DiagnosticKind::InvalidValue,
                    format!("unknown geometry type {other:?}"),
                );
                None
            }
        }
    }

    fn parse_street(&mut self, text: &str) -> Option<StreetRecord> {
        let obj = self.object(text)?;
        let kind = self.string(&obj, "type")?;
        match kind.as_str() {
            "node" => {
                let id = self.string(&obj, "id");
                let coord = match obj.get("coord") {
                    Some(v) => self.coord(v, "coord"),
                    None => {
                        self.report(Some("coord"), DiagnosticKind::MissingField, "missing field `coord`");
                        None
                    }
                };
                Some(StreetRecord::Node(NodeSpec { id: id?, point: coord? }))
            }
            "edge" => {
                let u = self.string(&obj, "u");
                let v = self.string(&obj, "v");
                let street = self.optional_string(&obj, "street");
                let length = match obj.get("length") {
                    None | Some(Value::Null) => Ok(None),
                    Some(Value::Number(n)) => Ok(n.as_f64()),
                    Some(other) => {
                        self.report(
                            Some("length"),
                            DiagnosticKind::InvalidValue,
                            format!("expected number, found {other}"),
                        );
                        Err(())
                    }
                };
                Some(StreetRecord::Edge(EdgeSpec {
                    u: u?,
                    v: v?,
                    street: street.ok()?,
                    length: length.ok()?,
                }))
            }
            other => {
                self.report(
                    Some("type"),
                    DiagnosticKind::InvalidValue,
                    format!("unknown street record type {other:?}"),
                );
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn line_bundle() -> MapBundle {
        let nodes = vec![
            NodeSpec { id: "a".into(), point: pt(40.0, -74.0) },
            NodeSpec { id: "b".into(), point: pt(40.001, -74.0) },
            NodeSpec { id: "c".into(), point: pt(40.002, -74.0) },
        ];
        let edges = vec![
            EdgeSpec { u: "a".into(), v: "b".into(), street: Some("Main".into()), length: None },
            EdgeSpec { u: "b".into(), v: "c".into(), street: Some("Main".into()), length: None },
        ];
        MapBundle::from_parts(vec![], nodes, edges).unwrap()
    }

    #[test]
    fn prominence_hierarchy() {
        let p = pt(0.0, 0.0);
        let e = Entity::point("1", None, &[("wikipedia", "en:X"), ("shop", "books")], p);
        assert_eq!(prominence(&e), ProminenceLevel::WikiLinked);
        let e = Entity::point("2", None, &[], p);
        assert_eq!(prominence(&e), ProminenceLevel::Unranked);
        let e = Entity::point("3", None, &[("amenity", "cafe"), ("shop", "coffee")], p);
        assert_eq!(prominence(&e), ProminenceLevel::Amenity);
        let e = Entity::point("4", None, &[("brand", "Zara"), ("tourism", "museum")], p);
        assert_eq!(prominence(&e), ProminenceLevel::Brand);
    }

    #[test]
    fn polygon_rules() {
        let ring = vec![pt(0.0, 0.0), pt(0.0, 0.001), pt(0.001, 0.001), pt(0.001, 0.0)];
        let err = Entity::new("p", None, BTreeMap::new(), Geometry::Polygon(ring.clone())).unwrap_err();
        assert_eq!(err, GeometryError::OpenRing);
        let err = Entity::new(
            "p",
            None,
            BTreeMap::new(),
            Geometry::Polygon(vec![pt(0.0, 0.0), pt(0.0, 0.001), pt(0.0, 0.0)]),
        )
        .unwrap_err();
        assert_eq!(err, GeometryError::TooFewVertices(3));
        let mut closed = ring;
        closed.push(closed[0]);
        let e = Entity::new("p", None, BTreeMap::new(), Geometry::Polygon(closed)).unwrap();
        assert!((e.centroid().lat() - 0.0005).abs() < 1e-9);
        assert!((e.centroid().lon() - 0.0005).abs() < 1e-9);
        let half_diag = haversine_distance(e.centroid(), pt(0.0, 0.0));
        assert!((e.extent_radius() - half_diag).abs() < 1e-3);
    }

    #[test]
    fn routes_along_a_line() {
        let b = line_bundle();
        let r = b.shortest_path(pt(40.0, -74.0), pt(40.002, -74.0)).unwrap();
        assert_eq!(r.nodes, vec![0, 1, 2]);
        let expected = haversine_distance(pt(40.0, -74.0), pt(40.001, -74.0))
            + haversine_distance(pt(40.001, -74.0), pt(40.002, -74.0));
        assert!((r.total_length - expected).abs() < 1e-9);
        assert_eq!(b.intersections_on(&r), Vec::<usize>::new());
        assert_eq!(b.blocks_on(&r), 1);

        let same = b.shortest_path(pt(40.00001, -74.0), pt(40.0, -74.00001)).unwrap();
        assert_eq!(same.nodes, vec![0]);
        assert_eq!(same.total_length, 0.0);
        assert_eq!(b.blocks_on(&same), 0);
    }

    #[test]
    fn snap_and_disconnection_errors() {
        let nodes = vec![
            NodeSpec { id: "a".into(), point: pt(40.0, -74.0) },
            NodeSpec { id: "b".into(), point: pt(40.01, -74.0) },
        ];
        let b = MapBundle::from_parts(vec![], nodes, vec![]).unwrap();
        assert!(matches!(
            b.shortest_path(pt(40.0, -74.0), pt(40.01, -74.0)),
            Err(RouteError::Disconnected { .. })
        ));
        assert!(matches!(
            b.shortest_path(pt(41.0, -74.0), pt(40.01, -74.0)),
            Err(RouteError::NoSnap { .. })
        ));
        let empty = MapBundle::from_parts(vec![], vec![], vec![]).unwrap();
        assert_eq!(
            empty.shortest_path(pt(0.0, 0.0), pt(0.0, 0.0)),
            Err(RouteError::EmptyGraph)
        );
    }

    #[test]
    fn four_way_crossing_counts_one_intersection() {
        let c = pt(40.0, -74.0);
        let nodes = vec![
            NodeSpec { id: "c".into(), point: c },
            NodeSpec { id: "n".into(), point: pt(40.001, -74.0) },
            NodeSpec { id: "s".into(), point: pt(39.999, -74.0) },
            NodeSpec { id: "e".into(), point: pt(40.0, -73.999) },
            NodeSpec { id: "w".into(), point: pt(40.0, -74.001) },
        ];
        let edges = ["n", "s", "e", "w"]
            .iter()
            .map(|o| EdgeSpec { u: "c".into(), v: o.to_string(), street: None, length: None })
            .collect();
        let b = MapBundle::from_parts(vec![], nodes, edges).unwrap();
        let r = b.shortest_path(pt(39.999, -74.0), pt(40.001, -74.0)).unwrap();
        assert_eq!(b.intersections_on(&r).len(), 1);
        assert_eq!(b.blocks_on(&r), 2);
    }

    #[test]
    fn nearest_entities_sorted_and_bounded() {
        let entities = vec![
            Entity::point("tie-b", None, &[], pt(39.9999, -74.0)),
            Entity::point("here", None, &[], pt(40.0, -74.0)),
            Entity::point("tie-a", None, &[], pt(40.0001, -74.0)),
        ];
        let b = MapBundle::from_parts(entities, vec![], vec![]).unwrap();
        let p = pt(40.0, -74.0);
        assert!(b.nearest_entities(pt(40.5, -74.0), 0.001, |_| true).is_empty());
        let all: Vec<&str> = b
            .nearest_entities(p, 1e5, |_| true)
            .iter()
            .map(|n| n.entity.id.as_str())
            .collect();
        assert_eq!(all, vec!["here", "tie-a", "tie-b"]);
    }

    #[test]
    fn duplicate_and_self_loop_rejected() {
        let nodes = vec![NodeSpec { id: "a".into(), point: pt(0.0, 0.0) }];
        let edges = vec![EdgeSpec { u: "a".into(), v: "a".into(), street: None, length: None }];
        let err = MapBundle::from_parts(vec![], nodes, edges).unwrap_err();
        assert_eq!(err.diagnostics()[0].kind, DiagnosticKind::SelfLoop);
        let e = Entity::point("x", None, &[], pt(0.0, 0.0));
        let err = MapBundle::from_parts(vec![e.clone(), e], vec![], vec![]).unwrap_err();
        assert_eq!(err.diagnostics()[0].kind, DiagnosticKind::DuplicateId);
    }
}
