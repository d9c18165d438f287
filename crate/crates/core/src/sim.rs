//! Kinematic pick-and-place executor with support/settle rules, occupancy
//! queries and free-space search.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{
    Aabb, Footprint, Kind, Pose, WorldError, WorldState, SMALL_BLOCK_EDGE, STABILITY_SLACK, TABLE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("no free position after {0} samples")]
    Saturated(usize),
    #[error("degenerate search area")]
    DegenerateArea,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    TargetOccupied,
    ObjectHidden,
    ObjectImmovable,
    OutOfBounds,
    UnsupportedTumble,
}

impl FailureReason {
    pub fn name(self) -> &'static str {
        match self {
            FailureReason::TargetOccupied => "target_occupied",
            FailureReason::ObjectHidden => "object_hidden",
            FailureReason::ObjectImmovable => "object_immovable",
            FailureReason::OutOfBounds => "out_of_bounds",
            FailureReason::UnsupportedTumble => "unsupported_tumble",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub ok: bool,
    pub moved_id: String,
    pub final_pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<FailureReason>,
}

/// Where a placed object should go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// On top of this object's current stack.
    Object(String),
    /// At this position, keeping the object's yaw. `z` is the highest
    /// acceptable resting height.
    Position([f64; 3]),
    /// At this pose, including yaw.
    Pose(Pose),
}

/// Serialized primitive invocation, as recorded in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveCall {
    pub name: String,
    pub obj: String,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveLogEntry {
    pub index: usize,
    pub primitive: PrimitiveCall,
    pub result: StepResult,
    pub world_digest: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub injected_fault: bool,
}

fn fail(world: &WorldState, obj: &str, reason: FailureReason) -> StepResult {
    let pose = world
        .get(obj)
        .map(|o| o.pose)
        .unwrap_or_else(|| Pose::at(0.0, 0.0, 0.0));
    StepResult {
        ok: false,
        moved_id: obj.to_string(),
        final_pose: pose,
        failure_reason: Some(reason),
    }
}

/// Move `obj` onto `target`. Precondition violations leave the world
/// untouched and come back as `ok = false`; only unknown ids are errors.
pub fn pick_place(world: &mut WorldState, obj: &str, target: &Target) -> Result<StepResult, SimError> {
    let o = world.require(obj)?.clone();
    if let Target::Object(t) = target {
        world.require(t)?;
    }
    if !o.movable {
        return Ok(fail(world, obj, FailureReason::ObjectImmovable));
    }
    if world.occluded().contains(obj) {
        return Ok(fail(world, obj, FailureReason::ObjectHidden));
    }
    if world.supported_on(obj).next().is_some() {
        return Ok(fail(world, obj, FailureReason::ObjectImmovable));
    }

    let exclude: BTreeSet<String> = [obj.to_string()].into_iter().collect();
    let (xy, yaw, z_cap) = match target {
        Target::Object(t) => {
            if t == obj {
                return Ok(fail(world, obj, FailureReason::TargetOccupied));
            }
            let tr = world.require(t)?;
            if tr.kind == Kind::Ball {
                return Ok(fail(world, obj, FailureReason::UnsupportedTumble));
            }
            (tr.footprint().center, o.pose.yaw, f64::INFINITY)
        }
        Target::Position(p) => ([p[0], p[1]], o.pose.yaw, p[2]),
        Target::Pose(p) => (p.xy(), p.yaw, p.position[2]),
    };
    if !world.bounds.contains_xy(xy) {
        return Ok(fail(world, obj, FailureReason::OutOfBounds));
    }
    let (z, supporter) = world.support_at(xy, z_cap, &exclude);

    let mut moved = o.clone();
    moved.pose = Pose::new([xy[0], xy[1], z], yaw);
    moved.supported_by = Some(supporter.clone());
    let fp = moved.footprint();
    for other in &world.objects {
        if other.id == obj || other.id == supporter || !other.is_obstacle() {
            continue;
        }
        let z_overlap = other.bottom() < moved.top() - 1e-9 && moved.bottom() < other.top() - 1e-9;
        if z_overlap && fp.overlaps(&other.footprint()) {
            return Ok(fail(world, obj, FailureReason::TargetOccupied));
        }
    }

    *world.get_mut(obj).expect("checked above") = moved;
    settle_in_place(world);
    world.step_counter += 1;
    let final_pose = world.get(obj).expect("still present").pose;
    Ok(StepResult {
        ok: true,
        moved_id: obj.to_string(),
        final_pose,
        failure_reason: None,
    })
}

pub fn settle(world: &WorldState) -> WorldState {
    let mut w = world.clone();
    settle_in_place(&mut w);
    w
}

/// Drop every object whose center has left its supporter's footprint,
/// repeating until nothing changes.
pub fn settle_in_place(world: &mut WorldState) {
    let cap = 10 * world.objects.len().max(1);
    for _ in 0..cap {
        let mut changed = false;
        let mut order: Vec<usize> = (0..world.objects.len())
            .filter(|&i| world.objects[i].movable)
            .collect();
        order.sort_by(|&a, &b| {
            let oa = &world.objects[a];
            let ob = &world.objects[b];
            oa.bottom().total_cmp(&ob.bottom()).then_with(|| oa.id.cmp(&ob.id))
        });
        for i in order {
            let o = world.objects[i].clone();
            let Some(sup) = o.supported_by.as_deref() else {
                continue;
            };
            if sup == TABLE {
                continue;
            }
            let stable = world.get(sup).is_some_and(|s| {
                let slack = if s.kind == Kind::Bowl { 0.0 } else { STABILITY_SLACK };
                s.support_surface().is_some() && s.footprint().contains_point(o.pose.xy(), slack)
            });
            if stable {
                continue;
            }
            let exclude = world.descendants(&o.id);
            let (_, below) = world.support_at(o.pose.xy(), o.bottom() - 1e-9, &exclude);
            world.objects[i].supported_by = Some(below);
            changed = true;
        }
        changed |= restack_heights(world);
        if !changed {
            return;
        }
    }
}

/// Reassign every movable object's z to its supporter's surface.
fn restack_heights(world: &mut WorldState) -> bool {
    let mut changed = false;
    // Support chains are acyclic, so n passes reach the fixpoint.
    for _ in 0..world.objects.len() {
        let mut pass_changed = false;
        for i in 0..world.objects.len() {
            if !world.objects[i].movable {
                continue;
            }
            let z = match world.objects[i].supported_by.as_deref() {
                None | Some(TABLE) => world.bounds.z[0],
                Some(s) => match world.get(s).and_then(|s| s.support_surface()) {
                    Some(z) => z,
                    None => continue,
                },
            };
            if (world.objects[i].pose.position[2] - z).abs() > 1e-12 {
                world.objects[i].pose.position[2] = z;
                pass_changed = true;
            }
        }
        if !pass_changed {
            break;
        }
        changed = true;
    }
    changed
}

/// Movable objects overlapping the query. For an object target the query
/// region is that object's footprint; for a pose it is `footprint` moved to
/// the pose.
pub fn is_occupied(world: &WorldState, target: &Target, footprint: &Aabb) -> Result<Vec<String>, SimError> {
    let mut out = Vec::new();
    match target {
        Target::Object(t) => {
            let tr = world.require(t)?;
            let fp = tr.footprint();
            let below: BTreeSet<String> = world.ancestors(t).into_iter().collect();
            for o in &world.objects {
                if o.id == *t || !o.movable || below.contains(&o.id) {
                    continue;
                }
                if fp.overlaps(&o.footprint()) {
                    out.push(o.id.clone());
                }
            }
        }
        Target::Position(p) | Target::Pose(Pose { position: p, .. }) => {
            let q = footprint.translated(*p);
            let fp = Footprint::from_aabb(&q);
            for o in &world.objects {
                if !o.movable {
                    continue;
                }
                let z_overlap = o.bottom() < q.max[2] - 1e-9 && q.min[2] < o.top() - 1e-9;
                if z_overlap && fp.overlaps(&o.footprint()) {
                    out.push(o.id.clone());
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Search area for [`free_pos`].
#[derive(Debug, Clone, PartialEq)]
pub enum Area {
    Box(Aabb),
    Object(String),
}

pub const FREE_POS_SAMPLES: usize = 1000;

/// Rejection-sample a pose inside `area` whose footprint (`size` as x/y
/// edges) touches no object and not the `avoid` target.
pub fn free_pos<R: Rng + ?Sized>(
    world: &WorldState,
    avoid: &Target,
    area: &Area,
    size: [f64; 2],
    rng: &mut R,
) -> Result<Pose, SimError> {
    let (lo, hi) = match area {
        Area::Box(b) => ([b.min[0], b.min[1]], [b.max[0], b.max[1]]),
        Area::Object(id) => world.require(id)?.footprint().extent(),
    };
    if !(hi[0] > lo[0] && hi[1] > lo[1]) {
        return Err(SimError::DegenerateArea);
    }
    let avoid_fp = match avoid {
        Target::Object(id) => world.require(id)?.footprint(),
        Target::Position(p) | Target::Pose(Pose { position: p, .. }) => {
            Footprint::rect([p[0], p[1]], 0.0, 0.5 * SMALL_BLOCK_EDGE, 0.5 * SMALL_BLOCK_EDGE)
        }
    };
    let hx = 0.5 * size[0];
    let hy = 0.5 * size[1];
    // Keep the footprint inside the area when it fits.
    let (min, max) = if hi[0] - lo[0] > size[0] && hi[1] - lo[1] > size[1] {
        ([lo[0] + hx, lo[1] + hy], [hi[0] - hx, hi[1] - hy])
    } else {
        (lo, hi)
    };
    let b = world.bounds;
    let footprints: Vec<Footprint> = world.objects.iter().map(|o| o.footprint()).collect();
    for _ in 0..FREE_POS_SAMPLES {
        let x = rng.random_range(min[0]..=max[0]);
        let y = rng.random_range(min[1]..=max[1]);
        if x - hx < b.x[0] || x + hx > b.x[1] || y - hy < b.y[0] || y + hy > b.y[1] {
            continue;
        }
        let fp = Footprint::rect([x, y], 0.0, hx, hy);
        if fp.overlaps(&avoid_fp) || footprints.iter().any(|f| fp.overlaps(f)) {
            continue;
        }
        return Ok(Pose::at(x, y, b.z[0]));
    }
    Err(SimError::Saturated(FREE_POS_SAMPLES))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Bounds, Color, ObjectRecord, Size, BOWL_FLOOR};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obj(id: &str, kind: Kind, size: Size, x: f64, y: f64, z: f64, sup: &str) -> ObjectRecord {
        ObjectRecord {
            id: id.into(),
            kind,
            color: Color::Red,
            size,
            pose: Pose::at(x, y, z),
            movable: matches!(kind, Kind::Block | Kind::Ball),
            supported_by: Some(sup.into()),
        }
    }

    fn world(objs: Vec<ObjectRecord>) -> WorldState {
        let mut w = WorldState::new(Bounds::default(), 0);
        w.objects = objs;
        w
    }

    #[test]
    fn stack_on_block() {
        let mut w = world(vec![
            obj("b1", Kind::Block, Size::Small, 0.4, 0.1, 0.0, TABLE),
            obj("b2", Kind::Block, Size::Small, 0.6, -0.1, 0.0, TABLE),
        ]);
        let r = pick_place(&mut w, "b1", &Target::Object("b2".into())).unwrap();
        assert!(r.ok);
        let b1 = w.get("b1").unwrap();
        assert!((b1.bottom() - 0.04).abs() < 1e-12);
        assert!((b1.pose.position[0] - 0.6).abs() < 0.002 && (b1.pose.position[1] + 0.1).abs() < 0.002);
        assert_eq!(b1.supported_by.as_deref(), Some("b2"));
        w.validate().unwrap();
    }

    #[test]
    fn occupied_pose_is_rejected_atomically() {
        let mut w = world(vec![
            obj("b1", Kind::Block, Size::Small, 0.4, 0.1, 0.0, TABLE),
            obj("b2", Kind::Block, Size::Small, 0.6, -0.1, 0.0, TABLE),
        ]);
        let before = w.digest();
        let r = pick_place(&mut w, "b1", &Target::Pose(Pose::at(0.6, -0.1, 0.0))).unwrap();
        assert!(!r.ok);
        assert_eq!(r.failure_reason, Some(FailureReason::TargetOccupied));
        assert_eq!(w.digest(), before);
    }

    #[test]
    fn hidden_object_cannot_be_picked() {
        let mut bowl = obj("bowl", Kind::Bowl, Size::Big, 0.5, 0.0, 0.04, "b1");
        bowl.movable = false;
        let mut w = world(vec![obj("b1", Kind::Block, Size::Small, 0.5, 0.0, 0.0, TABLE), bowl]);
        let r = pick_place(&mut w, "b1", &Target::Position([0.3, 0.3, 0.0])).unwrap();
        assert_eq!(r.failure_reason, Some(FailureReason::ObjectHidden));
    }

    #[test]
    fn other_failure_reasons() {
        let mut zone = obj("z", Kind::Zone, Size::Big, 0.5, 0.3, 0.0, TABLE);
        zone.movable = false;
        let mut w = world(vec![
            obj("b1", Kind::Block, Size::Small, 0.4, 0.0, 0.0, TABLE),
            obj("b2", Kind::Block, Size::Small, 0.4, 0.0, 0.04, "b1"),
            obj("ball", Kind::Ball, Size::Small, 0.6, -0.2, 0.0, TABLE),
            zone,
        ]);
        let z = |w: &mut WorldState, o: &str, t: Target| pick_place(w, o, &t).unwrap().failure_reason;
        assert_eq!(z(&mut w, "z", Target::Object("b1".into())), Some(FailureReason::ObjectImmovable));
        assert_eq!(z(&mut w, "b1", Target::Object("z".into())), Some(FailureReason::ObjectImmovable));
        assert_eq!(z(&mut w, "b2", Target::Object("ball".into())), Some(FailureReason::UnsupportedTumble));
        assert_eq!(z(&mut w, "b2", Target::Position([0.9, 0.0, 0.0])), Some(FailureReason::OutOfBounds));
        assert!(matches!(
            pick_place(&mut w, "ghost", &Target::Object("z".into())),
            Err(SimError::World(WorldError::NotFound(_)))
        ));
        let r = pick_place(&mut w, "b2", &Target::Object("z".into())).unwrap();
        assert!(r.ok);
        assert_eq!(w.get("b2").unwrap().bottom(), 0.0);
    }

    #[test]
    fn settle_drops_off_center_block() {
        let w = world(vec![
            obj("b1", Kind::Block, Size::Small, 0.5, 0.0, 0.0, TABLE),
            obj("b2", Kind::Block, Size::Small, 0.53, 0.0, 0.04, "b1"),
        ]);
        let s = settle(&w);
        let b2 = s.get("b2").unwrap();
        assert_eq!(b2.supported_by.as_deref(), Some(TABLE));
        assert_eq!(b2.bottom(), 0.0);
    }

    #[test]
    fn settle_keeps_aligned_stack() {
        let w = world(vec![
            obj("b1", Kind::Block, Size::Small, 0.5, 0.0, 0.0, TABLE),
            obj("b2", Kind::Block, Size::Small, 0.5, 0.0, 0.04, "b1"),
            obj("b3", Kind::Block, Size::Small, 0.5, 0.0, 0.08, "b2"),
        ]);
        assert_eq!(settle(&w), w);
    }

    #[test]
    fn settle_into_bowl_interior() {
        let mut bowl = obj("bowl", Kind::Bowl, Size::Big, 0.55, 0.0, 0.0, TABLE);
        bowl.movable = false;
        let w = world(vec![
            bowl,
            obj("b1", Kind::Block, Size::Small, 0.5, 0.2, 0.0, TABLE),
            obj("b2", Kind::Block, Size::Small, 0.56, 0.0, 0.04, "b1"),
        ]);
        let s = settle(&w);
        let b2 = s.get("b2").unwrap();
        assert_eq!(b2.supported_by.as_deref(), Some("bowl"));
        assert!((b2.bottom() - BOWL_FLOOR).abs() < 1e-12);
    }

    #[test]
    fn occupancy_queries() {
        let mut zone = obj("z", Kind::Zone, Size::Big, 0.5, 0.2, 0.0, TABLE);
        zone.movable = false;
        let mut empty = obj("e", Kind::Zone, Size::Big, 0.5, -0.3, 0.0, TABLE);
        empty.movable = false;
        let w = world(vec![
            zone,
            empty,
            obj("b1", Kind::Block, Size::Small, 0.47, 0.17, 0.0, TABLE),
            obj("b2", Kind::Block, Size::Small, 0.53, 0.23, 0.0, TABLE),
            obj("b3", Kind::Block, Size::Small, 0.6, 0.0, 0.0, TABLE),
        ]);
        let small = Aabb::footprint(SMALL_BLOCK_EDGE, SMALL_BLOCK_EDGE, SMALL_BLOCK_EDGE);
        assert!(is_occupied(&w, &Target::Object("e".into()), &small).unwrap().is_empty());
        assert_eq!(
            is_occupied(&w, &Target::Object("z".into()), &small).unwrap(),
            vec!["b1".to_string(), "b2".to_string()]
        );
        // 1 mm x 1 mm corner contact with b3.
        let corner = Target::Position([0.6 + 0.039, 0.039, 0.0]);
        assert!(is_occupied(&w, &corner, &small).unwrap().is_empty());
        let deeper = Target::Position([0.6 + 0.03, 0.03, 0.0]);
        assert_eq!(is_occupied(&w, &deeper, &small).unwrap(), vec!["b3".to_string()]);
        assert!(is_occupied(&w, &Target::Position([0.3, -0.4, 0.0]), &small).unwrap().is_empty());
    }

    #[test]
    fn free_pos_examples() {
        let w = world(vec![obj("b1", Kind::Block, Size::Small, 0.5, 0.0, 0.0, TABLE)]);
        let area = Area::Box(Aabb { min: [0.3, -0.4, 0.0], max: [0.7, 0.4, 0.0] });
        let size = [SMALL_BLOCK_EDGE, SMALL_BLOCK_EDGE];
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let p1 = free_pos(&w, &Target::Object("b1".into()), &area, size, &mut r1).unwrap();
        let p2 = free_pos(&w, &Target::Object("b1".into()), &area, size, &mut r2).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.position[0] >= 0.3 && p1.position[0] <= 0.7);

        // A 0.08 square area fully covered by four big-ish blocks.
        let mut packed = Vec::new();
        for (i, (x, y)) in [(0.48, -0.02), (0.52, -0.02), (0.48, 0.02), (0.52, 0.02)].iter().enumerate() {
            packed.push(obj(&format!("p{i}"), Kind::Block, Size::Small, *x, *y, 0.0, TABLE));
        }
        let w = world(packed);
        let area = Area::Box(Aabb { min: [0.46, -0.04, 0.0], max: [0.54, 0.04, 0.0] });
        let err = free_pos(&w, &Target::Position([0.3, 0.3, 0.0]), &area, size, &mut r1).unwrap_err();
        assert_eq!(err, SimError::Saturated(FREE_POS_SAMPLES));
    }
}
