//! Spatial features of a sampled path: compass directions between entities,
//! left/right sides of landmarks, intersection and block counts, and where
//! the goal sits on its block.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{
    bearing, cardinal_of, egocentric_side, haversine_distance, project_onto_segment, Bearing,
    CardinalDirection, EgocentricSide, GeoError, GeoPoint,
};
use crate::mapgraph::{MapBundle, Route};
use crate::sampler::{LandmarkSet, PathSample};

/// Goal positions closer than this to the block line have no cross-street offset.
const ON_STREET_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelationError {
    #[error("route has zero length")]
    DegenerateRoute,
    #[error("start and goal: {0}")]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockPositionEgo {
    Middle,
    NearCorner,
    FarCorner,
}

impl BlockPositionEgo {
    /// Thirds of the block, measured in the direction of travel.
    pub fn from_fraction(fraction: f64) -> Self {
        if fraction < 1.0 / 3.0 {
            BlockPositionEgo::NearCorner
        } else if fraction > 2.0 / 3.0 {
            BlockPositionEgo::FarCorner
        } else {
            BlockPositionEgo::Middle
        }
    }

    pub fn phrase(self) -> &'static str {
        match self {
            BlockPositionEgo::Middle => "in the middle of the block",
            BlockPositionEgo::NearCorner => "at the near corner of the block",
            BlockPositionEgo::FarCorner => "at the far corner of the block",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockPositionAllo {
    Middle,
    Corner(CardinalDirection),
}

impl BlockPositionAllo {
    pub fn phrase(self) -> String {
        match self {
            BlockPositionAllo::Middle => "in the middle of the block".to_string(),
            BlockPositionAllo::Corner(c) => format!("on the {} corner of the block", c.word()),
        }
    }
}

/// Left/right side per landmark, aligned with the landmark lists.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LandmarkSides {
    pub near: Vec<Option<EgocentricSide>>,
    pub main_pivots: Vec<Option<EgocentricSide>>,
    pub beyond: Option<EgocentricSide>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialFeatures {
    pub cardinal_start_to_goal: CardinalDirection,
    /// Direction from each main pivot to the goal.
    pub cardinal_pivot_to_goal: Vec<Option<CardinalDirection>>,
    /// Direction from each near landmark to the goal.
    pub cardinal_near_to_goal: Vec<Option<CardinalDirection>>,
    pub ego_side: LandmarkSides,
    pub n_intersections: usize,
    pub n_blocks: usize,
    /// Goal position along its block in `[0, 1]`, in the direction of travel.
    pub block_fraction: f64,
    pub block_position_ego: BlockPositionEgo,
    pub block_position_allo: Option<BlockPositionAllo>,
}

/// The goal's block: the street run through the route end, bounded by
/// nodes whose degree is not 2, oriented in the direction of travel.
pub fn goal_block(bundle: &MapBundle, route: &Route) -> Vec<GeoPoint> {
    let graph = bundle.graph();
    let n = route.nodes.len();
    if n < 2 {
        return route.polyline.clone();
    }
    let end = route.nodes[n - 1];
    let walk = |mut prev: usize, mut cur: usize| {
        let mut chain = vec![cur];
        let mut seen = vec![prev, cur];
        while graph.degree(cur) == 2 {
            let Some(next) = graph
                .neighbors(cur)
                .iter()
                .map(|(m, _)| *m)
                .find(|m| *m != prev)
            else {
                break;
            };
            if seen.contains(&next) {
                break;
            }
            seen.push(next);
            chain.push(next);
            prev = cur;
            cur = next;
        }
        chain
    };
    let mut nodes = walk(end, route.nodes[n - 2]);
    nodes.reverse();
    nodes.push(end);
    if graph.degree(end) == 2 {
        let forward = walk(route.nodes[n - 2], end);
        for m in forward.into_iter().skip(1) {
            if nodes.contains(&m) {
                break;
            }
            nodes.push(m);
        }
    }
    nodes.into_iter().map(|i| graph.point(i)).collect()
}

/// Closest point on a polyline: `(segment index, projection, along-line meters)`.
/// Ties go to the earlier segment.
pub(crate) fn locate_on_polyline(
    p: GeoPoint,
    line: &[GeoPoint],
) -> Option<(usize, crate::geo::SegmentProjection, f64)> {
    let mut best: Option<(usize, crate::geo::SegmentProjection, f64)> = None;
    let mut offset = 0.0;
    for (i, seg) in line.windows(2).enumerate() {
        let len = haversine_distance(seg[0], seg[1]);
        let proj = project_onto_segment(p, seg[0], seg[1]);
        if best.as_ref().is_none_or(|b| proj.distance < b.1.distance) {
            best = Some((i, proj, offset + proj.t * len));
        }
        offset += len;
    }
    best
}

/// Side of `p` relative to the route. The path bearing comes from the
/// closest non-degenerate segment and the landmark bearing from the closest
/// point on that segment toward `p`; `None` when `p` lies on the path.
pub fn side_of(route_line: &[GeoPoint], p: GeoPoint) -> Option<EgocentricSide> {
    let mut best: Option<(f64, Bearing, GeoPoint)> = None;
    for seg in route_line.windows(2) {
        let Ok(theta_path) = bearing(seg[0], seg[1]) else {
            continue;
        };
        let proj = project_onto_segment(p, seg[0], seg[1]);
        if best.as_ref().is_none_or(|b| proj.distance < b.0) {
            best = Some((proj.distance, theta_path, proj.point));
        }
    }
    let (_, theta_path, foot) = best?;
    let theta_landmark = bearing(foot, p).ok()?;
    Some(egocentric_side(theta_path, theta_landmark))
}

fn cardinal_between(from: GeoPoint, to: GeoPoint) -> Option<CardinalDirection> {
    bearing(from, to).ok().map(cardinal_of)
}

/// Combines two compass directions into one label by bisecting their
/// sector centers ("north" + "east" → "north-east"); equal inputs pass
/// through, opposite ones fall back to the first.
pub fn compound_direction(along: CardinalDirection, across: CardinalDirection) -> CardinalDirection {
    let (a, b) = (along.center().to_radians(), across.center().to_radians());
    let (x, y) = (a.sin() + b.sin(), a.cos() + b.cos());
    if x.hypot(y) < 1e-9 {
        return along;
    }
    cardinal_of(Bearing::new(x.atan2(y).to_degrees()))
}

/// Where the goal sits on its block: fraction along the block and the
/// allocentric corner label.
pub fn block_position(bundle: &MapBundle, route: &Route, goal: GeoPoint) -> (f64, BlockPositionEgo, Option<BlockPositionAllo>) {
    let block = goal_block(bundle, route);
    let length: f64 = block.windows(2).map(|s| haversine_distance(s[0], s[1])).sum();
    let Some((seg, proj, along)) = locate_on_polyline(goal, &block).filter(|_| length > 0.0) else {
        return (0.5, BlockPositionEgo::Middle, None);
    };
    let fraction = (along / length).clamp(0.0, 1.0);
    let ego = BlockPositionEgo::from_fraction(fraction);
    let allo = match ego {
        BlockPositionEgo::Middle => Some(BlockPositionAllo::Middle),
        _ => {
            let (a, b) = (block[seg], block[seg + 1]);
            let toward_near_end = if fraction < 0.5 { bearing(b, a) } else { bearing(a, b) };
            toward_near_end.ok().map(|dir| {
                let along_dir = cardinal_of(dir);
                let corner = if proj.distance > ON_STREET_M {
                    cardinal_between(proj.point, goal)
                        .map_or(along_dir, |across| compound_direction(along_dir, across))
                } else {
                    along_dir
                };
                BlockPositionAllo::Corner(corner)
            })
        }
    };
    (fraction, ego, allo)
}

pub fn compute_features(
    bundle: &MapBundle,
    sample: &PathSample<'_>,
    landmarks: &LandmarkSet<'_>,
) -> Result<SpatialFeatures, RelationError> {
    let route = &sample.route;
    if route.is_single_node() || route.total_length <= 0.0 {
        return Err(RelationError::DegenerateRoute);
    }
    let goal = sample.goal.centroid();
    let cardinal_start_to_goal = cardinal_of(bearing(sample.start.centroid(), goal)?);
    let line = &route.polyline;
    let side = |l: &crate::sampler::Landmark<'_>| side_of(line, l.anchor().centroid());
    let n_intersections = bundle.intersections_on(route).len();
    let (block_fraction, block_position_ego, block_position_allo) = block_position(bundle, route, goal);
    Ok(SpatialFeatures {
        cardinal_start_to_goal,
        cardinal_pivot_to_goal: landmarks
            .main_pivots
            .iter()
            .map(|l| cardinal_between(l.anchor().centroid(), goal))
            .collect(),
        cardinal_near_to_goal: landmarks
            .near
            .iter()
            .map(|l| cardinal_between(l.anchor().centroid(), goal))
            .collect(),
        ego_side: LandmarkSides {
            near: landmarks.near.iter().map(side).collect(),
            main_pivots: landmarks.main_pivots.iter().map(side).collect(),
            beyond: landmarks.beyond.as_ref().and_then(side),
        },
        n_intersections,
        n_blocks: bundle.blocks_on(route),
        block_fraction,
        block_position_ego,
        block_position_allo,
    })
}
