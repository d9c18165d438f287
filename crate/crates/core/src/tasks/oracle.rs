//! Analytic planner with ground-truth access. It simulates every step on a copy
//! of the world and emits the resulting primitive calls as a plan program.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::predicates::{chains, fixture_slot, in_region, lattice_sites, line_frame};
use super::recipes::{circle_radius, concentric_radii, ring_angles};
use super::*;
use crate::sim::{free_pos, is_occupied, pick_place, Area, Target};
use crate::skills::PRIMITIVE;
use crate::world::{Aabb, Footprint, Kind, Observation, Pose, Size, SMALL_BLOCK_EDGE};

/// A block within this distance of its planned slot is left alone.
const SETTLED_TOL: f64 = 0.003;
const PARK_TRIES: usize = 64;
/// Resting-height cap above the table for table-level placements.
const TABLE_CAP: f64 = 0.001;

struct Planner {
    w: WorldState,
    lines: Vec<String>,
    visible: BTreeSet<String>,
    rng: ChaCha8Rng,
    /// Discs parked objects must stay out of.
    reserved: Vec<([f64; 2], f64)>,
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn oracle_err(e: impl std::fmt::Display) -> TaskError {
    TaskError::Oracle(e.to_string())
}

impl Planner {
    fn z0(&self) -> f64 {
        self.w.bounds.z[0]
    }

    fn xy(&self, id: &str) -> [f64; 2] {
        self.w.get(id).map(|o| o.pose.xy()).unwrap_or([f64::NAN; 2])
    }

    fn put(&mut self, obj: &str, target: Target) -> Result<(), TaskError> {
        let (target, text) = match target {
            Target::Object(t) => {
                let text = format!("\"{t}\"");
                (Target::Object(t), text)
            }
            Target::Position(p) => {
                let p = p.map(round4);
                (Target::Position(p), format!("({:.4}, {:.4}, {:.4})", p[0], p[1], p[2]))
            }
            Target::Pose(p) => {
                let q = Pose::new(p.position.map(round4), round4(p.yaw));
                let text = format!("({:.4}, {:.4}, {:.4}, {:.4})", q.position[0], q.position[1], q.position[2], q.yaw);
                (Target::Pose(q), text)
            }
        };
        let r = pick_place(&mut self.w, obj, &target).map_err(oracle_err)?;
        if !r.ok {
            let why = r.failure_reason.map(|f| f.name()).unwrap_or("unknown");
            return Err(TaskError::Oracle(format!("moving `{obj}` to {text} failed: {why}")));
        }
        self.lines.push(format!("{PRIMITIVE}(\"{obj}\", {text})"));
        Ok(())
    }

    /// Objects resting on `id`, directly or indirectly, topmost first.
    fn above(&self, id: &str) -> Vec<String> {
        let mut v: Vec<(f64, String)> = self
            .w
            .descendants(id)
            .into_iter()
            .filter(|d| d != id)
            .filter_map(|d| self.w.get(&d).map(|o| (o.bottom(), d)))
            .collect();
        v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        v.into_iter().map(|x| x.1).collect()
    }

    /// Parks everything stacked on `id`.
    fn clear(&mut self, id: &str) -> Result<(), TaskError> {
        for o in self.above(id) {
            self.park(&o, None)?;
        }
        Ok(())
    }

    /// Moves `id` (which must be clear) to a free table spot, inside `area` if given.
    fn park(&mut self, id: &str, area: Option<([f64; 2], [f64; 2])>) -> Result<(), TaskError> {
        self.clear(id)?;
        let o = self.w.get(id).ok_or_else(|| oracle_err(format!("unknown `{id}`")))?;
        let (lo, hi) = o.footprint().extent();
        let size = [hi[0] - lo[0], hi[1] - lo[1]];
        let b = self.w.bounds;
        let (min, max) = area.unwrap_or(([b.x[0], b.y[0]], [b.x[1], b.y[1]]));
        let abox = Area::Box(Aabb { min: [min[0], min[1], b.z[0]], max: [max[0], max[1], b.z[1]] });
        let r = 0.5 * size[0].hypot(size[1]);
        for _ in 0..PARK_TRIES {
            let p = free_pos(&self.w, &Target::Object(id.to_string()), &abox, size, &mut self.rng).map_err(oracle_err)?;
            let q = p.xy();
            if self.reserved.iter().all(|(c, rr)| (q[0] - c[0]).hypot(q[1] - c[1]) > rr + r) {
                return self.put(id, Target::Position([q[0], q[1], self.z0() + TABLE_CAP]));
            }
        }
        Err(oracle_err(format!("no parking spot for `{id}`")))
    }

    fn visible(&self, id: &str) -> bool {
        self.visible.contains(id)
    }

    /// Moves every movable object (other than `keep`) that would collide with a
    /// small block placed at `p` with resting cap `cap`.
    fn make_room(&mut self, p: [f64; 2], cap: f64, keep: &BTreeSet<String>) -> Result<(), TaskError> {
        let fp = Aabb::footprint(SMALL_BLOCK_EDGE, SMALL_BLOCK_EDGE, SMALL_BLOCK_EDGE);
        let hits = is_occupied(&self.w, &Target::Position([p[0], p[1], cap]), &fp).map_err(oracle_err)?;
        for h in hits {
            if keep.contains(&h) {
                return Err(oracle_err(format!("`{h}` blocks a planned slot")));
            }
            if self.w.get(&h).is_some() && self.visible(&h) {
                self.park(&h, None)?;
            }
        }
        Ok(())
    }

    /// Movable objects a small block resting at `p` (cap `cap`, yaw `yaw`) would hit.
    fn blockers(&self, p: [f64; 2], cap: f64, yaw: f64, except: &str) -> Vec<String> {
        let fp = Footprint::rect(p, yaw, 0.5 * SMALL_BLOCK_EDGE, 0.5 * SMALL_BLOCK_EDGE);
        let (lo, hi) = (cap - TABLE_CAP, cap - TABLE_CAP + SMALL_BLOCK_EDGE);
        self.w
            .objects
            .iter()
            .filter(|o| o.movable && o.id != except)
            .filter(|o| o.bottom() < hi - 1e-9 && lo < o.top() - 1e-9 && fp.overlaps(&o.footprint()))
            .map(|o| o.id.clone())
            .collect()
    }

    fn source(&self, inst: &TaskInstance) -> String {
        let mut s = format!("# {}\n", inst.instruction);
        if self.lines.is_empty() {
            s.push_str("pass\n");
        }
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    /// Builds one chain of the visible `members` on the center of `region`.
    fn stack(&mut self, members: &[String], region: &str, alternate: Option<(Color, Color)>) -> Result<(), TaskError> {
        let members: Vec<String> = members.iter().filter(|m| self.visible(m)).cloned().collect();
        let reg = Region::Object(region.to_string());
        // Keep the longest valid prefix of an existing chain inside the region.
        let (found, _) = chains(&self.w, &members)?;
        let mut prefix: Vec<String> = Vec::new();
        for c in found {
            let mut ok = Vec::new();
            for (i, m) in c.iter().enumerate() {
                let color_ok = alternate.is_none_or(|(c1, c2)| {
                    self.w.get(m).map(|o| o.color) == Some(if i % 2 == 0 { c1 } else { c2 })
                });
                if !color_ok || !in_region(&self.w, &reg, self.xy(m))? {
                    break;
                }
                ok.push(m.clone());
            }
            if ok.len() > prefix.len() {
                prefix = ok;
            }
        }
        let mut rest: Vec<String> = members.iter().filter(|m| !prefix.contains(m)).cloned().collect();
        // Big blocks go to the bottom.
        rest.sort_by_key(|m| (self.w.get(m).map(|o| o.size != Size::Big).unwrap_or(true), m.clone()));
        let center = self.xy(region);
        let keep: BTreeSet<String> = prefix.iter().cloned().collect();
        match prefix.last() {
            Some(top) => {
                let top = top.clone();
                self.clear(&top)?;
            }
            None => {
                self.reserved.push((center, 0.5 * crate::world::BIG_BLOCK_EDGE * std::f64::consts::SQRT_2));
                self.make_room(center, self.z0() + TABLE_CAP, &keep)?;
            }
        }
        let mut top = prefix.last().cloned();
        while !rest.is_empty() {
            let pos = match alternate {
                Some((c1, c2)) => {
                    let h = prefix.len();
                    let want = if h % 2 == 0 { c1 } else { c2 };
                    rest.iter()
                        .position(|m| self.w.get(m).map(|o| o.color) == Some(want))
                        .ok_or_else(|| oracle_err(format!("no {want} block left for the alternating stack")))?
                }
                None => 0,
            };
            let m = rest.remove(pos);
            self.clear(&m)?;
            match &top {
                Some(t) => self.put(&m, Target::Object(t.clone()))?,
                None => self.put(&m, Target::Position([center[0], center[1], self.z0() + TABLE_CAP]))?,
            }
            prefix.push(m.clone());
            top = Some(m);
        }
        Ok(())
    }

    /// Places each `(member, xy, cap, yaw)` exactly, leaving settled ones alone.
    fn layout(&mut self, slots: &[(String, [f64; 2], f64, Option<f64>)]) -> Result<(), TaskError> {
        let half = 0.5 * SMALL_BLOCK_EDGE * std::f64::consts::SQRT_2;
        for (_, p, _, _) in slots {
            self.reserved.push((*p, half));
        }
        let settled = |w: &WorldState, m: &str, p: [f64; 2], cap: f64| {
            w.get(m).is_some_and(|o| {
                let q = o.pose.xy();
                (q[0] - p[0]).hypot(q[1] - p[1]) <= SETTLED_TOL && (o.bottom() - (cap - TABLE_CAP)).abs() <= 0.002
            })
        };
        let mut keep: BTreeSet<String> =
            slots.iter().filter(|(m, p, cap, _)| settled(&self.w, m, *p, *cap)).map(|s| s.0.clone()).collect();
        // Anything stacked on a settled block is in the way.
        for (m, ..) in slots {
            if keep.contains(m) {
                let supported: Vec<String> = self.w.supported_on(m).map(|o| o.id.clone()).collect();
                for s in supported {
                    if !keep.contains(&s) {
                        self.park(&s, None)?;
                    }
                }
            }
        }
        for (m, p, cap, yaw) in slots {
            if keep.contains(m) || !self.visible(m) {
                continue;
            }
            self.clear(m)?;
            for h in self.blockers(*p, *cap, yaw.unwrap_or(0.0), m) {
                if keep.contains(&h) {
                    return Err(oracle_err(format!("`{h}` blocks the slot for `{m}`")));
                }
                if self.visible(&h) {
                    self.park(&h, None)?;
                }
            }
            let target = match yaw {
                Some(y) => Target::Pose(Pose::new([p[0], p[1], *cap], *y)),
                None => Target::Position([p[0], p[1], *cap]),
            };
            self.put(m, target)?;
            keep.insert(m.clone());
        }
        Ok(())
    }
}

/// Returns the source of a plan that solves `inst` from `world`, touching only
/// objects visible in `obs`.
pub fn oracle_plan(inst: &TaskInstance, world: &WorldState, obs: &Observation) -> Result<String, TaskError> {
    let mut p = Planner {
        w: world.clone(),
        lines: Vec::new(),
        visible: obs.visible.iter().map(|o| o.id.clone()).collect(),
        rng: ChaCha8Rng::seed_from_u64(inst.seed ^ world.digest()),
        reserved: Vec::new(),
    };
    let z0 = p.z0();
    let a = SMALL_BLOCK_EDGE;
    let pitch = a + ORACLE_GAP;
    match &inst.goal {
        Goal::Stack { groups, exclude } => {
            for (b, zone) in exclude {
                if p.visible(b) && in_region(&p.w, &Region::Object(zone.clone()), p.xy(b))? {
                    p.park(b, None)?;
                }
            }
            for g in groups {
                p.stack(&g.members, &g.region, g.alternate)?;
            }
        }
        Goal::Groups { zones, blocks, sizes } => {
            let mut zones = zones.clone();
            zones.sort();
            let mut blocks = blocks.clone();
            blocks.sort();
            let mut sizes = sizes.clone();
            sizes.sort_by(|x, y| y.cmp(x));
            let mut start = 0;
            for (z, n) in zones.iter().zip(&sizes) {
                let chunk = blocks[start..start + n].to_vec();
                start += n;
                p.stack(&chunk, z, None)?;
            }
        }
        Goal::Contain { atoms } => {
            let mut ordered: Vec<&ContainAtom> = atoms.iter().filter(|a| a.outside).collect();
            ordered.extend(atoms.iter().filter(|a| !a.outside));
            for at in ordered {
                if !p.visible(&at.obj) {
                    continue;
                }
                let mut inside = false;
                for r in &at.regions {
                    inside |= in_region(&p.w, r, p.xy(&at.obj))?;
                }
                if inside != at.outside {
                    continue;
                }
                if at.outside {
                    p.park(&at.obj, None)?;
                    continue;
                }
                match &at.regions[0] {
                    Region::Object(id) => {
                        p.clear(&at.obj)?;
                        p.put(&at.obj, Target::Object(id.clone()))?;
                    }
                    Region::Area { min, max, .. } => p.park(&at.obj, Some((*min, *max)))?,
                }
            }
        }
        Goal::Counts { zones } => {
            for (zone, blocks, count) in zones {
                let reg = Region::Object(zone.clone());
                let mut inside = Vec::new();
                let mut outside = Vec::new();
                for b in blocks {
                    if in_region(&p.w, &reg, p.xy(b))? {
                        inside.push(b.clone());
                    } else {
                        outside.push(b.clone());
                    }
                }
                while inside.len() > *count {
                    // Remove the highest block first.
                    let top = inside
                        .iter()
                        .filter(|b| p.visible(b))
                        .max_by(|x, y| {
                            let zx = p.w.get(x).map(|o| o.bottom()).unwrap_or(0.0);
                            let zy = p.w.get(y).map(|o| o.bottom()).unwrap_or(0.0);
                            zx.total_cmp(&zy).then(y.cmp(x))
                        })
                        .cloned()
                        .ok_or_else(|| oracle_err("no visible block to remove"))?;
                    p.park(&top, None)?;
                    inside.retain(|b| *b != top);
                }
                let need = count.saturating_sub(inside.len());
                for b in outside.iter().filter(|b| p.visible(b)).take(need).cloned().collect::<Vec<_>>() {
                    p.clear(&b)?;
                    let free_top = inside
                        .iter()
                        .filter(|i| p.w.supported_on(i).next().is_none())
                        .max_by(|x, y| {
                            let zx = p.w.get(x).map(|o| o.bottom()).unwrap_or(0.0);
                            let zy = p.w.get(y).map(|o| o.bottom()).unwrap_or(0.0);
                            zx.total_cmp(&zy).then(y.cmp(x))
                        })
                        .cloned();
                    match free_top {
                        Some(t) => p.put(&b, Target::Object(t))?,
                        None => {
                            let c = p.xy(zone);
                            p.make_room(c, z0 + TABLE_CAP, &BTreeSet::new())?;
                            p.put(&b, Target::Position([c[0], c[1], z0 + TABLE_CAP]))?;
                        }
                    }
                    inside.push(b);
                }
            }
        }
        Goal::Circle { center, rings } => {
            let c = p.xy(center);
            let radii: Vec<f64> = match rings.as_slice() {
                [r] => vec![circle_radius(r.members.len())],
                [r1, r2] => {
                    let (a, b) = concentric_radii(r1.members.len(), r2.members.len());
                    vec![a, b]
                }
                _ => return Err(oracle_err("unsupported ring count")),
            };
            let mut slots = Vec::new();
            for (k, (ring, r)) in rings.iter().zip(&radii).enumerate() {
                let mut order = ring.members.clone();
                if let Some((c1, c2)) = ring.alternate {
                    let of = |col: Color| -> Vec<String> {
                        order.iter().filter(|m| p.w.get(m).map(|o| o.color) == Some(col)).cloned().collect()
                    };
                    let (x, y) = (of(c1), of(c2));
                    order = x.into_iter().zip(y).flat_map(|(a, b)| [a, b]).collect();
                }
                for (m, th) in order.iter().zip(ring_angles(order.len(), k % 2 == 1)) {
                    slots.push((m.clone(), [c[0] + r * th.cos(), c[1] + r * th.sin()], z0 + TABLE_CAP, None));
                }
            }
            p.layout(&slots)?;
        }
        Goal::Lattice { zone, kind, members } => {
            let c = p.xy(zone);
            let mut members = members.clone();
            members.sort();
            let slots: Vec<_> = lattice_sites(*kind, pitch)
                .into_iter()
                .zip(members)
                .map(|((layer, off), m)| (m, [c[0] + off[0], c[1] + off[1]], z0 + layer as f64 * a + TABLE_CAP, None))
                .collect();
            p.layout(&slots)?;
        }
        Goal::Line { zones, members } => {
            let (m, _, u) = line_frame(&p.w, zones)?;
            let n = members.len();
            let mut members = members.clone();
            members.sort();
            let slots: Vec<_> = members
                .into_iter()
                .enumerate()
                .map(|(k, id)| {
                    let t = (k as f64 - (n as f64 - 1.0) / 2.0) * 2.0 * a;
                    (id, [m[0] + t * u[0], m[1] + t * u[1]], z0 + TABLE_CAP, None)
                })
                .collect();
            p.layout(&slots)?;
        }
        Goal::Fixtures { fixtures, members } => {
            // Deal blocks grouped by color round-robin so no fixture gets a repeat.
            let mut by_color: Vec<(usize, Color, Vec<String>)> = Vec::new();
            for m in members {
                let col = p.w.get(m).map(|o| o.color).ok_or_else(|| oracle_err(format!("unknown `{m}`")))?;
                match by_color.iter_mut().find(|e| e.1 == col) {
                    Some(e) => e.2.push(m.clone()),
                    None => by_color.push((0, col, vec![m.clone()])),
                }
            }
            for e in &mut by_color {
                e.0 = e.2.len();
                e.2.sort();
            }
            by_color.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
            let dealt: Vec<String> = by_color.into_iter().flat_map(|e| e.2).collect();
            let k = fixtures.len();
            let mut slots = Vec::new();
            for (j, m) in dealt.into_iter().enumerate().take(3 * k) {
                let f = p.w.get(&fixtures[j % k]).ok_or_else(|| oracle_err("unknown fixture"))?;
                if f.kind != Kind::Fixture {
                    return Err(oracle_err(format!("`{}` is not a fixture", f.id)));
                }
                let s = fixture_slot(f, j / k, pitch);
                slots.push((m, s, z0 + TABLE_CAP, Some(f.pose.yaw)));
            }
            p.layout(&slots)?;
        }
    }
    Ok(p.source(inst))
}
