//! Ground-truth scene model: objects, footprints, the normalized table frame,
//! occlusion-aware observation and seeded scene generation.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Vec3 = [f64; 3];

pub const SMALL_BLOCK_EDGE: f64 = 0.04;
pub const BIG_BLOCK_EDGE: f64 = 0.08;
pub const BOWL_RADIUS: f64 = 0.06;
pub const BOWL_HEIGHT: f64 = 0.03;
pub const BOWL_FLOOR: f64 = 0.005;
pub const ZONE_EDGE: f64 = 0.12;
pub const BALL_RADIUS: f64 = 0.02;
pub const CLOTH_EDGE: f64 = 0.06;
pub const CLOTH_HEIGHT: f64 = 0.01;
pub const OBSTACLE_EDGE: f64 = 0.06;
pub const OBSTACLE_HEIGHT: f64 = 0.15;

/// Margin by which a covering footprint must exceed the covered one.
pub const OCCLUSION_MARGIN: f64 = 0.002;
/// Center-over-footprint slack used by support search and settling.
pub const STABILITY_SLACK: f64 = 0.005;
/// Footprint overlaps at or below this area (m²) are treated as contact.
pub const OVERLAP_THRESHOLD: f64 = 1e-6;

pub const TABLE: &str = "table";
pub const WORLD_SCHEMA: &str = "world/v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("normalized coordinate component {index} = {value} is outside [0, 1]")]
    Domain { index: usize, value: f64 },
    #[error("normalized position needs 2 or 3 components, got {0}")]
    Arity(usize),
    #[error("unknown object `{0}`")]
    NotFound(String),
    #[error("scene generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },
    #[error("world document: {0}")]
    Document(String),
}

/// Table extent in meters. The table top is `z = z[0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            x: [0.25, 0.75],
            y: [-0.5, 0.5],
            z: [0.0, 0.3],
        }
    }
}

impl Bounds {
    pub fn contains_xy(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x[0] && p[0] <= self.x[1] && p[1] >= self.y[0] && p[1] <= self.y[1]
    }

    pub fn center(&self) -> Vec3 {
        [
            0.5 * (self.x[0] + self.x[1]),
            0.5 * (self.y[0] + self.y[1]),
            self.z[0],
        ]
    }
}

/// Map normalized coordinates onto the table. Two components imply `z = 0`
/// (normalized), i.e. the table top.
pub fn denormalize(bounds: &Bounds, pos: &[f64]) -> Result<Vec3, WorldError> {
    if pos.len() != 2 && pos.len() != 3 {
        return Err(WorldError::Arity(pos.len()));
    }
    for (index, &value) in pos.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(WorldError::Domain { index, value });
        }
    }
    let lerp = |r: [f64; 2], t: f64| r[0] + t * (r[1] - r[0]);
    let z = pos.get(2).copied().unwrap_or(0.0);
    Ok([lerp(bounds.x, pos[0]), lerp(bounds.y, pos[1]), lerp(bounds.z, z)])
}

pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut y = (yaw + PI).rem_euclid(2.0 * PI) - PI;
    if y >= PI {
        y -= 2.0 * PI;
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Pose {
            position,
            yaw: normalize_yaw(yaw),
        }
    }

    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Pose::new([x, y, z], 0.0)
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.position[0], self.position[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Block,
    Bowl,
    Ball,
    Zone,
    Fixture,
    Prop,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Block => "block",
            Kind::Bowl => "bowl",
            Kind::Ball => "ball",
            Kind::Zone => "zone",
            Kind::Fixture => "fixture",
            Kind::Prop => "prop",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Some(match s {
            "block" => Kind::Block,
            "bowl" => Kind::Bowl,
            "ball" => Kind::Ball,
            "zone" => Kind::Zone,
            "fixture" => Kind::Fixture,
            "prop" => Kind::Prop,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Yellow,
    Blue,
    Green,
    Orange,
    Purple,
    Gray,
    Brown,
}

/// Category used by `[COLOR_TYPE]` instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorType {
    Primary,
    Secondary,
}

impl ColorType {
    pub fn name(self) -> &'static str {
        match self {
            ColorType::Primary => "primary",
            ColorType::Secondary => "secondary",
        }
    }
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Yellow,
        Color::Blue,
        Color::Green,
        Color::Orange,
        Color::Purple,
        Color::Gray,
        Color::Brown,
    ];
    /// Colors used for task-relevant blocks, bowls and zones.
    pub const TASK: [Color; 6] = [
        Color::Red,
        Color::Yellow,
        Color::Blue,
        Color::Green,
        Color::Orange,
        Color::Purple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Yellow => "yellow",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Orange => "orange",
            Color::Purple => "purple",
            Color::Gray => "gray",
            Color::Brown => "brown",
        }
    }

    pub fn parse(s: &str) -> Option<Color> {
        Color::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn color_type(self) -> Option<ColorType> {
        match self {
            Color::Red | Color::Yellow | Color::Blue => Some(ColorType::Primary),
            Color::Green | Color::Orange | Color::Purple => Some(ColorType::Secondary),
            Color::Gray | Color::Brown => None,
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Size {
    Small,
    Big,
}

impl Size {
    pub fn name(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Big => "big",
        }
    }

    pub fn block_edge(self) -> f64 {
        match self {
            Size::Small => SMALL_BLOCK_EDGE,
            Size::Big => BIG_BLOCK_EDGE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Rect { hx: f64, hy: f64 },
    Circle { r: f64 },
}

/// Planar footprint of an object at its current pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub center: [f64; 2],
    pub yaw: f64,
    pub shape: Shape,
}

const CIRCLE_SEGMENTS: usize = 32;

impl Footprint {
    pub fn rect(center: [f64; 2], yaw: f64, hx: f64, hy: f64) -> Self {
        Footprint {
            center,
            yaw,
            shape: Shape::Rect { hx, hy },
        }
    }

    pub fn from_aabb(b: &Aabb) -> Self {
        Footprint::rect(
            [0.5 * (b.min[0] + b.max[0]), 0.5 * (b.min[1] + b.max[1])],
            0.0,
            0.5 * (b.max[0] - b.min[0]),
            0.5 * (b.max[1] - b.min[1]),
        )
    }

    fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Point containment with the boundary pushed out by `slack`
    /// (negative slack shrinks the footprint).
    pub fn contains_point(&self, p: [f64; 2], slack: f64) -> bool {
        match self.shape {
            Shape::Rect { hx, hy } => {
                let l = self.to_local(p);
                l[0].abs() <= hx + slack && l[1].abs() <= hy + slack
            }
            Shape::Circle { r } => {
                let dx = p[0] - self.center[0];
                let dy = p[1] - self.center[1];
                (dx * dx + dy * dy).sqrt() <= r + slack
            }
        }
    }

    /// Counter-clockwise boundary polygon (circles use an inscribed polygon).
    pub fn polygon(&self) -> Vec<[f64; 2]> {
        match self.shape {
            Shape::Rect { hx, hy } => {
                let (s, c) = self.yaw.sin_cos();
                [[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]]
                    .iter()
                    .map(|l| {
                        [
                            self.center[0] + c * l[0] - s * l[1],
                            self.center[1] + s * l[0] + c * l[1],
                        ]
                    })
                    .collect()
            }
            Shape::Circle { r } => (0..CIRCLE_SEGMENTS)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / CIRCLE_SEGMENTS as f64;
                    [self.center[0] + r * a.cos(), self.center[1] + r * a.sin()]
                })
                .collect(),
        }
    }

    /// Axis-aligned planar extent as (min, max).
    pub fn extent(&self) -> ([f64; 2], [f64; 2]) {
        match self.shape {
            Shape::Circle { r } => (
                [self.center[0] - r, self.center[1] - r],
                [self.center[0] + r, self.center[1] + r],
            ),
            Shape::Rect { .. } => {
                let poly = self.polygon();
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for p in poly {
                    for k in 0..2 {
                        lo[k] = lo[k].min(p[k]);
                        hi[k] = hi[k].max(p[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Radius of the smallest circle about `center` enclosing the footprint.
    pub fn circumradius(&self) -> f64 {
        match self.shape {
            Shape::Rect { hx, hy } => (hx * hx + hy * hy).sqrt(),
            Shape::Circle { r } => r,
        }
    }

    /// True when every boundary point of `other` lies inside `self` by at
    /// least `margin`.
    pub fn contains_footprint(&self, other: &Footprint, margin: f64) -> bool {
        other
            .polygon()
            .into_iter()
            .all(|p| self.contains_point(p, -margin))
            && match other.shape {
                // Inscribed polygon under-approximates a circle; check its extremes too.
                Shape::Circle { r } => {
                    let c = other.center;
                    [[r, 0.0], [-r, 0.0], [0.0, r], [0.0, -r]]
                        .iter()
                        .all(|d| self.contains_point([c[0] + d[0], c[1] + d[1]], -margin))
                }
                Shape::Rect { .. } => true,
            }
    }

    pub fn overlap_area(&self, other: &Footprint) -> f64 {
        polygon_area(&clip_convex(&self.polygon(), &other.polygon()))
    }

    pub fn overlaps(&self, other: &Footprint) -> bool {
        self.overlap_area(other) > OVERLAP_THRESHOLD + 1e-12
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman clip of a convex subject by a convex CCW clip polygon.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let p_in = cross(a, b, p) >= 0.0;
            let q_in = cross(a, b, q) >= 0.0;
            if p_in {
                output.push(p);
            }
            if p_in != q_in {
                let dp = cross(a, b, p);
                let dq = cross(a, b, q);
                let t = dp / (dp - dq);
                output.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    output
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - 1e-12 && p[k] <= self.max[k] + 1e-12)
    }

    /// Box of the given planar size centered on the origin, resting on z = 0.
    pub fn footprint(edge_x: f64, edge_y: f64, height: f64) -> Aabb {
        Aabb {
            min: [-0.5 * edge_x, -0.5 * edge_y, 0.0],
            max: [0.5 * edge_x, 0.5 * edge_y, height],
        }
    }

    pub fn translated(&self, d: Vec3) -> Aabb {
        Aabb {
            min: [self.min[0] + d[0], self.min[1] + d[1], self.min[2] + d[2]],
            max: [self.max[0] + d[0], self.max[1] + d[1], self.max[2] + d[2]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: String,
    pub kind: Kind,
    pub color: Color,
    pub size: Size,
    pub pose: Pose,
    pub movable: bool,
    /// Supporting object id or [`TABLE`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supported_by: Option<String>,
}

impl ObjectRecord {
    pub fn height(&self) -> f64 {
        match self.kind {
            Kind::Block => self.size.block_edge(),
            Kind::Bowl => BOWL_HEIGHT,
            Kind::Ball => 2.0 * BALL_RADIUS,
            Kind::Zone | Kind::Fixture => 0.0,
            Kind::Prop => match self.size {
                Size::Small => CLOTH_HEIGHT,
                Size::Big => OBSTACLE_HEIGHT,
            },
        }
    }

    pub fn bottom(&self) -> f64 {
        self.pose.position[2]
    }

    pub fn top(&self) -> f64 {
        self.pose.position[2] + self.height()
    }

    pub fn footprint(&self) -> Footprint {
        let c = self.pose.xy();
        let yaw = self.pose.yaw;
        match self.kind {
            Kind::Block => {
                let h = 0.5 * self.size.block_edge();
                Footprint::rect(c, yaw, h, h)
            }
            Kind::Bowl => Footprint {
                center: c,
                yaw,
                shape: Shape::Circle { r: BOWL_RADIUS },
            },
            Kind::Ball => Footprint {
                center: c,
                yaw,
                shape: Shape::Circle { r: BALL_RADIUS },
            },
            Kind::Zone => Footprint::rect(c, yaw, 0.5 * ZONE_EDGE, 0.5 * ZONE_EDGE),
            Kind::Fixture => {
                // Slots sit at local (0,0), (a,0), (0,a); the plate covers all three.
                let a = SMALL_BLOCK_EDGE;
                let (s, co) = yaw.sin_cos();
                let off = [0.5 * a, 0.5 * a];
                let center = [c[0] + co * off[0] - s * off[1], c[1] + s * off[0] + co * off[1]];
                Footprint::rect(center, yaw, a, a)
            }
            Kind::Prop => {
                let e = match self.size {
                    Size::Small => CLOTH_EDGE,
                    Size::Big => OBSTACLE_EDGE,
                };
                Footprint::rect(c, yaw, 0.5 * e, 0.5 * e)
            }
        }
    }

    /// Height of the surface this object offers to things placed on it.
    pub fn support_surface(&self) -> Option<f64> {
        match self.kind {
            Kind::Block | Kind::Prop => Some(self.top()),
            Kind::Bowl => Some(self.bottom() + BOWL_FLOOR),
            Kind::Ball | Kind::Zone | Kind::Fixture => None,
        }
    }

    /// Flat or container objects never block placements.
    pub fn is_obstacle(&self) -> bool {
        self.movable || (self.kind == Kind::Prop)
    }

    pub fn describe(&self) -> String {
        format!(
            "a {} {} with {} color ({})",
            self.size.name(),
            self.kind.name(),
            self.color.name(),
            self.id
        )
    }
}

/// The single mutable source of truth for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: Vec<ObjectRecord>,
    pub bounds: Bounds,
    pub rng_seed: u64,
    pub step_counter: u64,
}

#[derive(Serialize, Deserialize)]
struct WorldDocument {
    schema: String,
    #[serde(flatten)]
    world: WorldState,
}

impl WorldState {
    pub fn new(bounds: Bounds, rng_seed: u64) -> Self {
        WorldState {
            objects: Vec::new(),
            bounds,
            rng_seed,
            step_counter: 0,
        }
    }

    pub fn get(&self, id: &str) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut ObjectRecord> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&ObjectRecord, WorldError> {
        self.get(id).ok_or_else(|| WorldError::NotFound(id.to_string()))
    }

    /// 64-bit digest of the canonical JSON encoding.
    pub fn digest(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("world serializes");
        let hash = Sha256::digest(&bytes);
        u64::from_be_bytes(hash[..8].try_into().expect("8 bytes"))
    }

    pub fn to_json(&self) -> String {
        let doc = WorldDocument {
            schema: WORLD_SCHEMA.to_string(),
            world: self.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("world serializes")
    }

    pub fn from_json(text: &str) -> Result<WorldState, WorldError> {
        let doc: WorldDocument =
            serde_json::from_str(text).map_err(|e| WorldError::Document(e.to_string()))?;
        if doc.schema != WORLD_SCHEMA {
            return Err(WorldError::Document(format!(
                "unsupported schema `{}`",
                doc.schema
            )));
        }
        Ok(doc.world)
    }

    /// Ids of objects resting (directly) on `id`.
    pub fn supported_on<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a ObjectRecord> + 'a {
        self.objects
            .iter()
            .filter(move |o| o.supported_by.as_deref() == Some(id))
    }

    /// `id` plus everything resting on it, transitively.
    pub fn descendants(&self, id: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id.to_string()];
        while let Some(cur) = stack.pop() {
            if out.insert(cur.clone()) {
                for o in self.supported_on(&cur) {
                    stack.push(o.id.clone());
                }
            }
        }
        out
    }

    /// Objects below `id` along its support chain.
    pub fn ancestors(&self, id: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = self.get(id).and_then(|o| o.supported_by.clone());
        while let Some(s) = cur {
            if s == TABLE || out.contains(&s) {
                break;
            }
            cur = self.get(&s).and_then(|o| o.supported_by.clone());
            out.push(s);
        }
        out
    }

    pub fn bbox_of(&self, id: &str) -> Result<Aabb, WorldError> {
        let o = self.require(id)?;
        let (lo, hi) = o.footprint().extent();
        Ok(Aabb {
            min: [lo[0], lo[1], o.bottom()],
            max: [hi[0], hi[1], o.top()],
        })
    }

    /// Ids hidden from view: A occludes B iff A's footprint contains B's
    /// with margin and A's top is not below B's top.
    pub fn occluded(&self) -> BTreeSet<String> {
        let fps: Vec<Footprint> = self.objects.iter().map(|o| o.footprint()).collect();
        let mut hidden = BTreeSet::new();
        for (i, b) in self.objects.iter().enumerate() {
            for (j, a) in self.objects.iter().enumerate() {
                if i != j
                    && a.top() >= b.top()
                    && fps[j].contains_footprint(&fps[i], OCCLUSION_MARGIN)
                {
                    hidden.insert(b.id.clone());
                    break;
                }
            }
        }
        hidden
    }

    /// Highest support surface under `xy` not above `z_cap`, ignoring the
    /// `exclude` set. Ties resolve to the smallest id.
    pub fn support_at(
        &self,
        xy: [f64; 2],
        z_cap: f64,
        exclude: &BTreeSet<String>,
    ) -> (f64, String) {
        let mut best: (f64, String) = (self.bounds.z[0], TABLE.to_string());
        let mut best_obj = false;
        for o in &self.objects {
            if exclude.contains(&o.id) {
                continue;
            }
            let Some(surface) = o.support_surface() else {
                continue;
            };
            if surface > z_cap + 1e-9 {
                continue;
            }
            let slack = if o.kind == Kind::Bowl { 0.0 } else { STABILITY_SLACK };
            if !o.footprint().contains_point(xy, slack) {
                continue;
            }
            let better = surface > best.0 + 1e-12
                || (best_obj && (surface - best.0).abs() <= 1e-12 && o.id < best.1)
                || (!best_obj && (surface - best.0).abs() <= 1e-12);
            if better {
                best = (surface, o.id.clone());
                best_obj = true;
            }
        }
        best
    }

    pub fn observe(&self, tag: FrameTag) -> Observation {
        let hidden = self.occluded();
        let mut visible: Vec<ObjectRecord> = self
            .objects
            .iter()
            .filter(|o| !hidden.contains(&o.id))
            .cloned()
            .map(|mut o| {
                o.supported_by = None;
                o
            })
            .collect();
        visible.sort_by(|a, b| a.id.cmp(&b.id));
        let text_summary = visible.iter().map(summary_line).collect();
        Observation {
            visible,
            frame_tag: tag,
            text_summary,
            image_slot: None,
        }
    }

    /// Check every scene invariant; returns the list of violations.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id.as_str()) {
                errs.push(format!("duplicate id `{}`", o.id));
            }
            let expect_movable = match o.kind {
                Kind::Zone | Kind::Fixture => Some(false),
                Kind::Block | Kind::Ball => Some(true),
                _ => None,
            };
            if let Some(m) = expect_movable {
                if o.movable != m {
                    errs.push(format!("`{}` has movable={} for kind {}", o.id, o.movable, o.kind.name()));
                }
            }
            if !(-PI..PI).contains(&o.pose.yaw) {
                errs.push(format!("`{}` yaw {} not normalized", o.id, o.pose.yaw));
            }
            let diag = o.footprint().circumradius() * 2.0;
            let b = &self.bounds;
            let p = o.pose.position;
            if p[0] < b.x[0] - diag
                || p[0] > b.x[1] + diag
                || p[1] < b.y[0] - diag
                || p[1] > b.y[1] + diag
                || p[2] < b.z[0] - 1e-9
            {
                errs.push(format!("`{}` outside bounds at {:?}", o.id, p));
            }
        }
        for o in &self.objects {
            // Chain must reach the table without cycles.
            let mut seen = BTreeSet::new();
            let mut cur = o.supported_by.clone();
            let mut ok = true;
            while let Some(s) = cur {
                if s == TABLE {
                    break;
                }
                if !seen.insert(s.clone()) || s == o.id {
                    errs.push(format!("support cycle through `{}`", o.id));
                    ok = false;
                    break;
                }
                match self.get(&s) {
                    Some(next) => cur = next.supported_by.clone(),
                    None => {
                        errs.push(format!("`{}` supported by unknown `{s}`", o.id));
                        ok = false;
                        break;
                    }
                }
            }
            if ok && o.movable {
                let expected = match o.supported_by.as_deref() {
                    None | Some(TABLE) => Some(self.bounds.z[0]),
                    Some(s) => self.get(s).and_then(|s| s.support_surface()),
                };
                match expected {
                    Some(z) if (z - o.bottom()).abs() <= 1e-9 => {}
                    Some(z) => errs.push(format!(
                        "`{}` rests at z={} but its supporter offers {}",
                        o.id,
                        o.bottom(),
                        z
                    )),
                    None => errs.push(format!("`{}` rests on a non-supporting object", o.id)),
                }
            }
        }
        let movable: Vec<&ObjectRecord> = self.objects.iter().filter(|o| o.movable).collect();
        for (i, a) in movable.iter().enumerate() {
            for b in &movable[i + 1..] {
                let z_disjoint = a.bottom() >= b.top() - 1e-9 || b.bottom() >= a.top() - 1e-9;
                if !z_disjoint && a.footprint().overlaps(&b.footprint()) {
                    errs.push(format!("`{}` and `{}` interpenetrate", a.id, b.id));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

pub fn summary_line(o: &ObjectRecord) -> String {
    let p = o.pose.position;
    format!(
        "{} {} {} {} at ({:.3}, {:.3}, {:.3})",
        o.color.name(),
        o.size.name(),
        o.kind.name(),
        o.id,
        p[0],
        p[1],
        p[2]
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameTag {
    Before,
    After,
}

/// Occlusion-filtered snapshot handed to planners and reporters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub visible: Vec<ObjectRecord>,
    pub frame_tag: FrameTag,
    pub text_summary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_slot: Option<Vec<u8>>,
}

impl Observation {
    pub fn get(&self, id: &str) -> Option<&ObjectRecord> {
        self.visible.iter().find(|o| o.id == id)
    }

    pub fn names(&self) -> Vec<String> {
        self.visible.iter().map(|o| o.id.clone()).collect()
    }

    pub fn summary_text(&self) -> String {
        self.text_summary.join("\n")
    }
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    /// Uniform position inside `region` (xy min, xy max; whole table when
    /// absent), optionally with a uniform yaw.
    Random {
        region: Option<([f64; 2], [f64; 2])>,
        random_yaw: bool,
    },
    Fixed(Pose),
    /// Resting on an earlier object, offset from its center.
    On { support: String, offset: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTemplate {
    pub id: String,
    pub kind: Kind,
    pub color: Color,
    pub size: Size,
    pub movable: bool,
    pub placement: Placement,
}

impl ObjectTemplate {
    pub fn new(id: impl Into<String>, kind: Kind, color: Color, size: Size) -> Self {
        ObjectTemplate {
            id: id.into(),
            kind,
            color,
            size,
            movable: matches!(kind, Kind::Block | Kind::Ball),
            placement: Placement::Random {
                region: None,
                random_yaw: false,
            },
        }
    }

    pub fn placed(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }

    pub fn movable(mut self, movable: bool) -> Self {
        self.movable = movable;
        self
    }
}

/// Concrete object list plus placement constraints for one scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneRecipe {
    pub objects: Vec<ObjectTemplate>,
    /// Discs (center, radius) random placements must stay clear of.
    pub keep_out: Vec<([f64; 2], f64)>,
}

const PLACEMENT_TRIES: usize = 400;
const LAYOUT_ATTEMPTS: u64 = 16;
const PLACEMENT_CLEARANCE: f64 = 0.01;

/// Deterministically lay out `recipe`; identical inputs give identical worlds.
pub fn generate_scene(recipe: &SceneRecipe, bounds: Bounds, seed: u64) -> Result<WorldState, WorldError> {
    let mut last = String::new();
    for attempt in 0..LAYOUT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ attempt);
        match try_layout(recipe, bounds, seed, &mut rng) {
            Ok(w) => return Ok(w),
            Err(e) => last = e,
        }
    }
    Err(WorldError::Generation { seed, reason: last })
}

fn try_layout(
    recipe: &SceneRecipe,
    bounds: Bounds,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<WorldState, String> {
    let mut world = WorldState::new(bounds, seed);
    for t in &recipe.objects {
        let mut rec = ObjectRecord {
            id: t.id.clone(),
            kind: t.kind,
            color: t.color,
            size: t.size,
            pose: Pose::at(0.0, 0.0, bounds.z[0]),
            movable: t.movable,
            supported_by: Some(TABLE.to_string()),
        };
        match &t.placement {
            Placement::Fixed(p) => rec.pose = *p,
            Placement::On { support, offset } => {
                let s = world
                    .get(support)
                    .ok_or_else(|| format!("`{}` placed on unknown `{support}`", t.id))?;
                let z = s
                    .support_surface()
                    .ok_or_else(|| format!("`{support}` cannot support `{}`", t.id))?;
                let c = s.pose.xy();
                rec.pose = Pose::new([c[0] + offset[0], c[1] + offset[1], z], 0.0);
                rec.supported_by = Some(support.clone());
            }
            Placement::Random { region, random_yaw } => {
                let (lo, hi) = region.unwrap_or(([bounds.x[0], bounds.y[0]], [bounds.x[1], bounds.y[1]]));
                let mut placed = false;
                for _ in 0..PLACEMENT_TRIES {
                    let yaw = if *random_yaw { rng.random_range(-PI..PI) } else { 0.0 };
                    rec.pose = Pose::new([0.0, 0.0, bounds.z[0]], yaw);
                    let fp = rec.footprint();
                    // Keep the whole footprint on the table.
                    let (flo, fhi) = fp.extent();
                    let off = [fp.center[0] - rec.pose.position[0], fp.center[1] - rec.pose.position[1]];
                    let min = [
                        lo[0].max(bounds.x[0] - flo[0]),
                        lo[1].max(bounds.y[0] - flo[1]),
                    ];
                    let max = [
                        hi[0].min(bounds.x[1] - fhi[0]),
                        hi[1].min(bounds.y[1] - fhi[1]),
                    ];
                    if min[0] > max[0] || min[1] > max[1] {
                        return Err(format!("region too small for `{}`", t.id));
                    }
                    let x = rng.random_range(min[0]..=max[0]);
                    let y = rng.random_range(min[1]..=max[1]);
                    rec.pose.position = [x, y, bounds.z[0]];
                    let fp = rec.footprint();
                    let center = [x + off[0], y + off[1]];
                    let r = fp.circumradius();
                    let clear_of_keep_out = recipe.keep_out.iter().all(|(c, kr)| {
                        (center[0] - c[0]).hypot(center[1] - c[1]) >= kr + r
                    });
                    let clear = clear_of_keep_out
                        && world.objects.iter().all(|o| {
                            let ofp = o.footprint();
                            let d = (ofp.center[0] - fp.center[0]).hypot(ofp.center[1] - fp.center[1]);
                            d >= ofp.circumradius() + r + PLACEMENT_CLEARANCE
                        });
                    if clear {
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(format!("no collision-free spot for `{}`", t.id));
                }
            }
        }
        world.objects.push(rec);
    }
    Ok(world)
}

/// Group object ids by color, in id order.
pub fn ids_by_color<'a>(objs: impl Iterator<Item = &'a ObjectRecord>) -> BTreeMap<Color, Vec<String>> {
    let mut out: BTreeMap<Color, Vec<String>> = BTreeMap::new();
    for o in objs {
        out.entry(o.color).or_default().push(o.id.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block(id: &str, x: f64, y: f64, z: f64, support: &str) -> ObjectRecord {
        ObjectRecord {
            id: id.into(),
            kind: Kind::Block,
            color: Color::Red,
            size: Size::Small,
            pose: Pose::at(x, y, z),
            movable: true,
            supported_by: Some(support.into()),
        }
    }

    #[test]
    fn denormalize_examples() {
        let b = Bounds::default();
        assert_eq!(denormalize(&b, &[0.5, 0.5]).unwrap(), [0.5, 0.0, 0.0]);
        assert_eq!(denormalize(&b, &[0.0, 0.0]).unwrap(), [0.25, -0.5, 0.0]);
        let p = denormalize(&b, &[0.25, 0.75, 0.5]).unwrap();
        let expect = [0.375, 0.25, 0.15];
        for k in 0..3 {
            assert!((p[k] - expect[k]).abs() < 1e-12);
        }
        assert_eq!(
            denormalize(&b, &[0.5, 1.5]),
            Err(WorldError::Domain { index: 1, value: 1.5 })
        );
        assert_eq!(denormalize(&b, &[0.5]), Err(WorldError::Arity(1)));
    }

    #[test]
    fn bbox_examples() {
        let mut w = WorldState::new(Bounds::default(), 0);
        w.objects.push(block("b", 0.0, 0.0, 0.0, TABLE));
        let bb = w.bbox_of("b").unwrap();
        assert_eq!(bb.min, [-0.02, -0.02, 0.0]);
        assert_eq!(bb.max, [0.02, 0.02, 0.04]);

        w.objects[0].pose.yaw = PI / 4.0;
        let bb = w.bbox_of("b").unwrap();
        let h = 0.02 * 2f64.sqrt();
        assert!((bb.max[0] - h).abs() < 1e-12 && (bb.min[1] + h).abs() < 1e-12);

        w.objects.push(ObjectRecord {
            id: "z".into(),
            kind: Kind::Zone,
            color: Color::Blue,
            size: Size::Big,
            pose: Pose::at(0.5, 0.1, 0.0),
            movable: false,
            supported_by: Some(TABLE.into()),
        });
        let bb = w.bbox_of("z").unwrap();
        assert!((bb.min[0] - 0.44).abs() < 1e-12 && (bb.max[1] - 0.16).abs() < 1e-12);
        assert_eq!(bb.min[2], bb.max[2]);
        assert_eq!(w.bbox_of("nope"), Err(WorldError::NotFound("nope".into())));
    }

    #[test]
    fn occlusion_examples() {
        let mut w = WorldState::new(Bounds::default(), 0);
        w.objects.push(block("a", 0.5, 0.0, 0.0, TABLE));
        w.objects.push(ObjectRecord {
            id: "bowl".into(),
            kind: Kind::Bowl,
            color: Color::Blue,
            size: Size::Big,
            pose: Pose::at(0.5, 0.0, 0.04),
            movable: false,
            supported_by: Some("a".into()),
        });
        let obs = w.observe(FrameTag::Before);
        assert_eq!(obs.names(), vec!["bowl".to_string()]);

        let mut stacked = WorldState::new(Bounds::default(), 0);
        stacked.objects.push(block("a", 0.5, 0.0, 0.0, TABLE));
        stacked.objects.push(block("b", 0.5, 0.0, 0.04, "a"));
        assert_eq!(stacked.observe(FrameTag::After).visible.len(), 2);
    }

    #[test]
    fn summary_format() {
        let o = block("red block 1", 0.5, -0.1234, 0.0, TABLE);
        assert_eq!(summary_line(&o), "red small block red block 1 at (0.500, -0.123, 0.000)");
    }

    #[test]
    fn json_round_trip_and_schema() {
        let mut w = WorldState::new(Bounds::default(), 7);
        w.objects.push(block("a", 0.5, 0.0, 0.0, TABLE));
        let text = w.to_json();
        assert!(text.contains("\"schema\": \"world/v1\""));
        assert_eq!(WorldState::from_json(&text).unwrap(), w);
        let bad = text.replace("world/v1", "world/v0");
        assert!(WorldState::from_json(&bad).is_err());
    }

    #[test]
    fn overlap_area_of_unit_squares() {
        let a = Footprint::rect([0.0, 0.0], 0.0, 0.02, 0.02);
        let b = Footprint::rect([0.03, 0.0], 0.0, 0.02, 0.02);
        assert!((a.overlap_area(&b) - 0.01 * 0.04).abs() < 1e-15);
        let c = Footprint::rect([0.05, 0.0], 0.0, 0.02, 0.02);
        assert_eq!(a.overlap_area(&c), 0.0);
    }

    proptest! {
        #[test]
        fn denormalize_is_affine(a in proptest::array::uniform3(0.0..0.5f64), b in proptest::array::uniform3(0.0..0.5f64)) {
            let bd = Bounds::default();
            let da = denormalize(&bd, &a).unwrap();
            let db = denormalize(&bd, &b).unwrap();
            let d0 = denormalize(&bd, &[0.0, 0.0, 0.0]).unwrap();
            let sum = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
            let ds = denormalize(&bd, &sum).unwrap();
            for k in 0..3 {
                prop_assert!((da[k] + db[k] - d0[k] - ds[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn bbox_contains_position(yaw in -10.0..10.0f64, x in 0.3..0.7f64, y in -0.4..0.4f64) {
            let mut w = WorldState::new(Bounds::default(), 0);
            let mut b = block("b", x, y, 0.0, TABLE);
            b.pose = Pose::new([x, y, 0.0], yaw);
            w.objects.push(b);
            let bb = w.bbox_of("b").unwrap();
            prop_assert!(bb.contains([x, y, 0.0]));
        }

        #[test]
        fn observe_hides_exactly_the_occluded(xs in proptest::collection::vec((0.3..0.7f64, -0.3..0.3f64, 0usize..3), 1..6)) {
            // Random blocks, some with a cloth dropped directly on them.
            let mut w = WorldState::new(Bounds::default(), 0);
            for (i, (x, y, cover)) in xs.iter().enumerate() {
                let id = format!("b{i}");
                w.objects.push(block(&id, *x, *y, 0.0, TABLE));
                if *cover == 0 {
                    w.objects.push(ObjectRecord {
                        id: format!("c{i}"),
                        kind: Kind::Prop,
                        color: Color::Gray,
                        size: Size::Small,
                        pose: Pose::at(*x, *y, 0.04),
                        movable: true,
                        supported_by: Some(id),
                    });
                }
            }
            // Brute-force pairwise footprint check on sampled boundary points.
            let mut expected = BTreeSet::new();
            for b in &w.objects {
                for a in &w.objects {
                    if a.id == b.id || a.top() < b.top() { continue; }
                    let fa = a.footprint();
                    let fb = b.footprint();
                    let mut inside = true;
                    for p in fb.polygon() {
                        let d = [p[0] - fa.center[0], p[1] - fa.center[1]];
                        let (s, c) = fa.yaw.sin_cos();
                        let l = [c * d[0] + s * d[1], -s * d[0] + c * d[1]];
                        if let Shape::Rect { hx, hy } = fa.shape {
                            if l[0].abs() > hx - OCCLUSION_MARGIN || l[1].abs() > hy - OCCLUSION_MARGIN { inside = false; }
                        }
                    }
                    if inside { expected.insert(b.id.clone()); }
                }
            }
            let obs = w.observe(FrameTag::Before);
            let all: BTreeSet<String> = w.objects.iter().map(|o| o.id.clone()).collect();
            let seen: BTreeSet<String> = obs.names().into_iter().collect();
            let diff: BTreeSet<String> = all.difference(&seen).cloned().collect();
            prop_assert_eq!(diff, expected);
        }
    }
}
