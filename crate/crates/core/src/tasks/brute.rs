//! Exhaustive re-derivation of each goal predicate. Slow, but shares no search
//! logic with the evaluators, so the two can cross-check each other.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use super::*;
use crate::world::{Kind, ObjectRecord, BOWL_RADIUS, BALL_RADIUS, SMALL_BLOCK_EDGE, TABLE, ZONE_EDGE};

const MAX_BRUTE_MEMBERS: usize = 9;

fn get<'w>(w: &'w WorldState, id: &str) -> Result<&'w ObjectRecord, TaskError> {
    w.get(id).ok_or_else(|| TaskError::Evaluation(format!("object `{id}` missing from world")))
}

fn center(w: &WorldState, id: &str) -> Result<[f64; 2], TaskError> {
    let p = get(w, id)?.pose.position;
    Ok([p[0], p[1]])
}

/// `p` expressed in the frame of `o` (origin at its pose, x along its yaw).
fn local(o: &ObjectRecord, p: [f64; 2]) -> [f64; 2] {
    let d = [p[0] - o.pose.position[0], p[1] - o.pose.position[1]];
    let (s, c) = (-o.pose.yaw).sin_cos();
    [c * d[0] - s * d[1], s * d[0] + c * d[1]]
}

fn inside(w: &WorldState, region: &Region, p: [f64; 2]) -> Result<bool, TaskError> {
    match region {
        Region::Area { min, max, .. } => Ok((min[0] < p[0] && p[0] < max[0]) && (min[1] < p[1] && p[1] < max[1])),
        Region::Object(id) => {
            let o = get(w, id)?;
            let l = local(o, p);
            Ok(match o.kind {
                Kind::Bowl => l[0] * l[0] + l[1] * l[1] <= BOWL_RADIUS * BOWL_RADIUS,
                Kind::Ball => l[0] * l[0] + l[1] * l[1] <= BALL_RADIUS * BALL_RADIUS,
                Kind::Zone => l[0].abs() <= ZONE_EDGE / 2.0 && l[1].abs() <= ZONE_EDGE / 2.0,
                _ => {
                    let h = o.footprint().extent();
                    (h.0[0]..=h.1[0]).contains(&p[0]) && (h.0[1]..=h.1[1]).contains(&p[1])
                }
            })
        }
    }
}

fn resting(w: &WorldState, id: &str) -> Result<bool, TaskError> {
    Ok((get(w, id)?.pose.position[2] - w.bounds.z[0]).abs() <= 0.001)
}

fn too_many(n: usize) -> Result<(), TaskError> {
    if n > MAX_BRUTE_MEMBERS {
        return Err(TaskError::Evaluation(format!("{n} members is beyond the exhaustive checker")));
    }
    Ok(())
}

/// Decides the goal of `inst` on `world` by exhaustive search.
pub fn brute_force_check(inst: &TaskInstance, world: &WorldState) -> Result<bool, TaskError> {
    let w = world;
    match &inst.goal {
        Goal::Stack { groups, exclude } => {
            for g in groups {
                too_many(g.members.len())?;
                for m in &g.members {
                    if !inside(w, &Region::Object(g.region.clone()), center(w, m)?)? {
                        return Ok(false);
                    }
                }
                let accept = |p: &[Vec<String>]| -> Result<bool, TaskError> {
                    if g.single && p.len() != 1 {
                        return Ok(false);
                    }
                    for list in p {
                        if list.len() < 2 || !valid_chain(w, list)? {
                            return Ok(false);
                        }
                        if let Some((c1, c2)) = g.alternate {
                            for (i, m) in list.iter().enumerate() {
                                if get(w, m)?.color != if i % 2 == 0 { c1 } else { c2 } {
                                    return Ok(false);
                                }
                            }
                        }
                    }
                    Ok(true)
                };
                if !any_list_partition(&g.members, &accept)? {
                    return Ok(false);
                }
            }
            for (b, z) in exclude {
                if inside(w, &Region::Object(z.clone()), center(w, b)?)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Goal::Groups { zones, blocks, sizes } => {
            too_many(blocks.len())?;
            let mut want = sizes.clone();
            want.sort();
            let mut assign = vec![usize::MAX; blocks.len()];
            groups_search(w, zones, blocks, &want, 0, &mut assign)
        }
        Goal::Contain { atoms } => {
            for a in atoms {
                let p = center(w, &a.obj)?;
                let mut hit = false;
                for r in &a.regions {
                    if inside(w, r, p)? {
                        hit = true;
                    }
                }
                if hit == a.outside {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Goal::Counts { zones } => {
            for (z, blocks, count) in zones {
                let mut n = 0;
                for b in blocks {
                    if inside(w, &Region::Object(z.clone()), center(w, b)?)? {
                        n += 1;
                    }
                }
                if n != *count {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Goal::Circle { center: c, rings } => circle(w, c, rings),
        Goal::Lattice { zone, kind, members } => lattice(w, zone, *kind, members),
        Goal::Line { zones, members } => line(w, zones, members),
        Goal::Fixtures { fixtures, members } => fixtures_check(w, fixtures, members),
    }
}

/// Bottom-up list is a physically stacked chain starting on the table.
fn valid_chain(w: &WorldState, list: &[String]) -> Result<bool, TaskError> {
    for (i, m) in list.iter().enumerate() {
        let r = get(w, m)?;
        let below = if i == 0 { TABLE } else { list[i - 1].as_str() };
        if r.supported_by.as_deref() != Some(below) {
            return Ok(false);
        }
        if i > 0 {
            let (a, b) = (center(w, m)?, center(w, below)?);
            let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            if d2 > STACK_XY_TOL * STACK_XY_TOL {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Tries every split of `items` into ordered lists.
fn any_list_partition(
    items: &[String],
    accept: &dyn Fn(&[Vec<String>]) -> Result<bool, TaskError>,
) -> Result<bool, TaskError> {
    fn rec(
        items: &[String],
        i: usize,
        lists: &mut Vec<Vec<String>>,
        accept: &dyn Fn(&[Vec<String>]) -> Result<bool, TaskError>,
    ) -> Result<bool, TaskError> {
        if i == items.len() {
            return accept(lists);
        }
        for l in 0..lists.len() {
            for pos in 0..=lists[l].len() {
                lists[l].insert(pos, items[i].clone());
                let ok = rec(items, i + 1, lists, accept)?;
                lists[l].remove(pos);
                if ok {
                    return Ok(true);
                }
            }
        }
        lists.push(vec![items[i].clone()]);
        let ok = rec(items, i + 1, lists, accept)?;
        lists.pop();
        Ok(ok)
    }
    rec(items, 0, &mut Vec::new(), accept)
}

fn any_chain_order(w: &WorldState, members: &[String]) -> Result<bool, TaskError> {
    any_list_partition(members, &|p| Ok(p.len() == 1 && valid_chain(w, &p[0])?))
}

fn groups_search(
    w: &WorldState,
    zones: &[String],
    blocks: &[String],
    want: &[usize],
    i: usize,
    assign: &mut Vec<usize>,
) -> Result<bool, TaskError> {
    if i == blocks.len() {
        let mut got = Vec::new();
        for (zi, _) in zones.iter().enumerate() {
            let members: Vec<String> =
                blocks.iter().zip(assign.iter()).filter(|(_, a)| **a == zi).map(|(b, _)| b.clone()).collect();
            if members.is_empty() {
                continue;
            }
            if !any_chain_order(w, &members)? {
                return Ok(false);
            }
            got.push(members.len());
        }
        got.sort();
        return Ok(got == want);
    }
    let p = center(w, &blocks[i])?;
    for (zi, z) in zones.iter().enumerate() {
        if inside(w, &Region::Object(z.clone()), p)? {
            assign[i] = zi;
            if groups_search(w, zones, blocks, want, i + 1, assign)? {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn circle(w: &WorldState, c: &str, rings: &[Ring]) -> Result<bool, TaskError> {
    let o = center(w, c)?;
    let mut spans = Vec::new();
    for ring in rings {
        let n = ring.members.len();
        too_many(n.saturating_sub(1))?;
        let mut pts = Vec::new();
        for m in &ring.members {
            if !resting(w, m)? {
                return Ok(false);
            }
            let p = center(w, m)?;
            pts.push([p[0] - o[0], p[1] - o[1]]);
        }
        let radii: Vec<f64> = pts.iter().map(|p| p[0].hypot(p[1])).collect();
        // A common radius exists iff one of the interval endpoints works.
        let fits = radii.iter().flat_map(|d| [d - CIRCLE_RADIUS_TOL, d + CIRCLE_RADIUS_TOL]).any(|r| {
            radii.iter().all(|d| (d - r).abs() <= CIRCLE_RADIUS_TOL + 1e-12)
        });
        if !fits {
            return Ok(false);
        }
        let colors: Vec<_> = ring.members.iter().map(|m| get(w, m).map(|r| r.color)).collect::<Result<_, _>>()?;
        let mut used = vec![false; n];
        used[0] = true;
        let mut order = vec![0];
        if !cycle(&pts, &colors, ring.alternate, &mut used, &mut order, 0.0) {
            return Ok(false);
        }
        let lo = radii.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = radii.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        spans.push((lo, hi));
    }
    Ok(spans.windows(2).all(|s| s[0].1 < s[1].0))
}

fn ccw_gap(a: [f64; 2], b: [f64; 2]) -> f64 {
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    let g = cross.atan2(dot);
    if g <= 0.0 {
        g + TAU
    } else {
        g
    }
}

/// Depth-first search for a counter-clockwise visiting order with even gaps and
/// a total sweep of exactly one turn.
fn cycle(
    pts: &[[f64; 2]],
    colors: &[crate::world::Color],
    alternate: Option<(crate::world::Color, crate::world::Color)>,
    used: &mut Vec<bool>,
    order: &mut Vec<usize>,
    swept: f64,
) -> bool {
    let n = pts.len();
    let even = TAU / n as f64;
    let tol = CIRCLE_ANGLE_TOL_DEG.to_radians();
    let last = order[order.len() - 1];
    let color_ok = |a: usize, b: usize| match alternate {
        None => true,
        Some((c1, c2)) => colors[a] != colors[b] && [c1, c2].contains(&colors[a]) && [c1, c2].contains(&colors[b]),
    };
    if order.len() == n {
        let g = ccw_gap(pts[last], pts[order[0]]);
        return (g - even).abs() <= tol && (swept + g - TAU).abs() < 1e-6 && color_ok(last, order[0]);
    }
    for next in 0..n {
        if used[next] {
            continue;
        }
        let g = ccw_gap(pts[last], pts[next]);
        if (g - even).abs() > tol || !color_ok(last, next) {
            continue;
        }
        used[next] = true;
        order.push(next);
        let ok = cycle(pts, colors, alternate, used, order, swept + g);
        order.pop();
        used[next] = false;
        if ok {
            return true;
        }
    }
    false
}

fn lattice(w: &WorldState, zone: &str, kind: LatticeKind, members: &[String]) -> Result<bool, TaskError> {
    let o = center(w, zone)?;
    let a = SMALL_BLOCK_EDGE;
    let mut sites = Vec::new();
    for (layer, &side) in kind.layers().iter().enumerate() {
        for i in 0..side {
            for j in 0..side {
                let off = |k: usize| a * (2.0 * k as f64 - (side as f64 - 1.0)) / 2.0;
                sites.push((layer, [o[0] + off(i), o[1] + off(j)]));
            }
        }
    }
    if sites.len() != members.len() {
        return Ok(false);
    }
    let set: BTreeSet<&str> = members.iter().map(String::as_str).collect();
    let mut fits = vec![Vec::new(); members.len()];
    for (mi, m) in members.iter().enumerate() {
        let r = get(w, m)?;
        let p = center(w, m)?;
        let z = r.pose.position[2] - w.bounds.z[0];
        for (si, (layer, s)) in sites.iter().enumerate() {
            let close = (p[0] - s[0]).hypot(p[1] - s[1]) <= LATTICE_XY_TOL;
            let band = (z - a * *layer as f64).abs() <= a / 4.0;
            let held = *layer == 0 || r.supported_by.as_deref().is_some_and(|b| set.contains(b));
            if close && band && held {
                fits[mi].push(si);
            }
        }
    }
    fn assign(fits: &[Vec<usize>], i: usize, used: &mut Vec<bool>) -> bool {
        if i == fits.len() {
            return true;
        }
        for &s in &fits[i] {
            if !used[s] {
                used[s] = true;
                if assign(fits, i + 1, used) {
                    return true;
                }
                used[s] = false;
            }
        }
        false
    }
    Ok(assign(&fits, 0, &mut vec![false; sites.len()]))
}

fn line(w: &WorldState, zones: &[String; 2], members: &[String]) -> Result<bool, TaskError> {
    too_many(members.len())?;
    let p1 = center(w, &zones[0])?;
    let p2 = center(w, &zones[1])?;
    let mid = [(p1[0] + p2[0]) / 2.0, (p1[1] + p2[1]) / 2.0];
    let phi = (p2[1] - p1[1]).atan2(p2[0] - p1[0]);
    let a = SMALL_BLOCK_EDGE;
    // Rotate into a frame whose x axis runs from zone 1 to zone 2.
    let mut along = Vec::new();
    for m in members {
        if !resting(w, m)? {
            return Ok(false);
        }
        let p = center(w, m)?;
        let (s, c) = (-phi).sin_cos();
        let d = [p[0] - mid[0], p[1] - mid[1]];
        let lx = c * d[0] - s * d[1];
        let ly = s * d[0] + c * d[1];
        if lx.abs() > LINE_RESIDUAL_TOL {
            return Ok(false);
        }
        along.push(ly);
    }
    fn walk(along: &[f64], used: &mut Vec<bool>, order: &mut Vec<usize>, a: f64) -> bool {
        if order.len() == along.len() {
            let first = along[order[0]];
            let last = along[order[order.len() - 1]];
            return ((first + last) / 2.0).abs() <= LINE_MIDPOINT_TOL;
        }
        for k in 0..along.len() {
            if used[k] {
                continue;
            }
            if let Some(&prev) = order.last() {
                let edge_gap = along[k] - along[prev] - a;
                if edge_gap < (1.0 - LINE_GAP_TOL) * a || edge_gap > (1.0 + LINE_GAP_TOL) * a {
                    continue;
                }
            }
            used[k] = true;
            order.push(k);
            let ok = walk(along, used, order, a);
            order.pop();
            used[k] = false;
            if ok {
                return true;
            }
        }
        false
    }
    Ok(walk(&along, &mut vec![false; along.len()], &mut Vec::new(), a))
}

fn fixtures_check(w: &WorldState, fixtures: &[String], members: &[String]) -> Result<bool, TaskError> {
    let a = SMALL_BLOCK_EDGE;
    let slots = [[0.0, 0.0], [a, 0.0], [0.0, a]];
    for f in fixtures {
        let fr = get(w, f)?;
        // For each slot, the resting members near it, measured in the fixture frame.
        let mut near: Vec<Vec<usize>> = vec![Vec::new(); 3];
        for (mi, m) in members.iter().enumerate() {
            if !resting(w, m)? {
                continue;
            }
            let l = local(fr, center(w, m)?);
            for (k, s) in slots.iter().enumerate() {
                if (l[0] - s[0]).hypot(l[1] - s[1]) <= FIXTURE_SLOT_TOL {
                    near[k].push(mi);
                }
            }
        }
        let mut ok = false;
        for &b0 in &near[0] {
            for &b1 in &near[1] {
                for &b2 in &near[2] {
                    let picked = [b0, b1, b2];
                    let distinct_blocks = b0 != b1 && b1 != b2 && b0 != b2;
                    let cs: BTreeSet<_> =
                        picked.iter().map(|&i| get(w, &members[i]).map(|r| r.color)).collect::<Result<_, _>>()?;
                    let sole = near.iter().all(|v| v.len() == 1);
                    if distinct_blocks && cs.len() == 3 && sole {
                        ok = true;
                    }
                }
            }
        }
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}
