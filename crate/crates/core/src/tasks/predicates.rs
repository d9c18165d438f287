use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use super::*;
use crate::world::{ObjectRecord, WorldState, SMALL_BLOCK_EDGE, TABLE};

/// Height above the table below which a block counts as resting on it.
pub(crate) const ON_TABLE_TOL: f64 = 0.001;

struct Acc {
    diff: BTreeSet<DiffAtom>,
    detail: BTreeMap<String, bool>,
}

impl Acc {
    fn check(&mut self, key: String, ok: bool) -> bool {
        let e = self.detail.entry(key).or_insert(true);
        *e = *e && ok;
        ok
    }

    fn atom(&mut self, object: &str, action: &str, target: String) {
        self.diff.insert(DiffAtom { object: object.to_string(), action: action.to_string(), target });
    }
}

pub(crate) fn rec<'w>(w: &'w WorldState, id: &str) -> Result<&'w ObjectRecord, TaskError> {
    w.get(id).ok_or_else(|| TaskError::Evaluation(format!("object `{id}` missing from world")))
}

pub(crate) fn xy(w: &WorldState, id: &str) -> Result<[f64; 2], TaskError> {
    Ok(rec(w, id)?.pose.xy())
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub(crate) fn in_region(w: &WorldState, region: &Region, p: [f64; 2]) -> Result<bool, TaskError> {
    Ok(match region {
        Region::Object(id) => rec(w, id)?.footprint().contains_point(p, 0.0),
        Region::Area { min, max, .. } => p[0] > min[0] && p[0] < max[0] && p[1] > min[1] && p[1] < max[1],
    })
}

pub(crate) fn on_table(w: &WorldState, id: &str) -> Result<bool, TaskError> {
    Ok(rec(w, id)?.bottom() <= w.bounds.z[0] + ON_TABLE_TOL)
}

fn label(id: &str) -> String {
    format!("the {}", id.replace('_', " "))
}

pub fn evaluate(inst: &TaskInstance, world: &WorldState) -> Result<EvalResult, TaskError> {
    let mut acc = Acc { diff: BTreeSet::new(), detail: BTreeMap::new() };
    match &inst.goal {
        Goal::Stack { groups, exclude } => {
            for g in groups {
                stack_group(world, g, &mut acc)?;
            }
            for (b, zone) in exclude {
                let inside = in_region(world, &Region::Object(zone.clone()), xy(world, b)?)?;
                if !acc.check(format!("{b}:outside:{zone}"), !inside) {
                    acc.atom(b, "remove", format!("out of {}", label(zone)));
                }
            }
        }
        Goal::Groups { zones, blocks, sizes } => groups(world, zones, blocks, sizes, &mut acc)?,
        Goal::Contain { atoms } => {
            for a in atoms {
                let p = xy(world, &a.obj)?;
                let mut inside = false;
                for r in &a.regions {
                    inside |= in_region(world, r, p)?;
                }
                if !acc.check(format!("{}:{}", a.obj, a.action), inside != a.outside) {
                    acc.atom(&a.obj, &a.action, a.target.clone());
                }
            }
        }
        Goal::Counts { zones } => {
            for (zone, blocks, count) in zones {
                let region = Region::Object(zone.clone());
                let mut inside = Vec::new();
                let mut outside = Vec::new();
                for b in blocks {
                    if in_region(world, &region, xy(world, b)?)? {
                        inside.push(b);
                    } else {
                        outside.push(b);
                    }
                }
                acc.check(format!("{zone}:count"), inside.len() == *count);
                if inside.len() < *count {
                    for b in outside.iter().take(count - inside.len()) {
                        acc.atom(b, "place", format!("in {}", label(zone)));
                    }
                } else if inside.len() > *count {
                    for b in inside.iter().rev().take(inside.len() - count) {
                        acc.atom(b, "remove", format!("out of {}", label(zone)));
                    }
                }
            }
        }
        Goal::Circle { center, rings } => circle(world, center, rings, &mut acc)?,
        Goal::Lattice { zone, kind, members } => lattice(world, zone, *kind, members, &mut acc)?,
        Goal::Line { zones, members } => line(world, zones, members, &mut acc)?,
        Goal::Fixtures { fixtures, members } => fixture(world, fixtures, members, &mut acc)?,
    }
    let all_ok = acc.detail.values().all(|v| *v);
    debug_assert_eq!(all_ok, acc.diff.is_empty(), "every failed check must yield a diff atom");
    Ok(EvalResult { success: all_ok && acc.diff.is_empty(), diff: acc.diff.into_iter().collect(), score_detail: acc.detail })
}

/// Chains of members grown upward from table-supported members, plus the members
/// no valid chain reaches.
pub(crate) fn chains(w: &WorldState, members: &[String]) -> Result<(Vec<Vec<String>>, Vec<String>), TaskError> {
    let set: BTreeSet<&str> = members.iter().map(|s| s.as_str()).collect();
    let mut above: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut bases = Vec::new();
    for m in members {
        let r = rec(w, m)?;
        match r.supported_by.as_deref() {
            Some(TABLE) => bases.push(m.as_str()),
            Some(s) if set.contains(s) => above.entry(s).or_default().push(m.as_str()),
            _ => {}
        }
    }
    bases.sort();
    let mut out = Vec::new();
    let mut reached = BTreeSet::new();
    for b in bases {
        let mut chain = vec![b.to_string()];
        reached.insert(b);
        let mut cur = b;
        loop {
            match above.get(cur).map(|v| v.as_slice()) {
                Some([up]) if dist(xy(w, up)?, xy(w, cur)?) <= STACK_XY_TOL => {
                    chain.push(up.to_string());
                    reached.insert(up);
                    cur = up;
                }
                _ => break,
            }
        }
        out.push(chain);
    }
    let mut broken: Vec<String> = members.iter().filter(|m| !reached.contains(m.as_str())).cloned().collect();
    broken.sort();
    Ok((out, broken))
}

fn stack_group(w: &WorldState, g: &StackGroup, acc: &mut Acc) -> Result<(), TaskError> {
    let region = Region::Object(g.region.clone());
    let zone = label(&g.region);
    let mut flagged = BTreeSet::new();
    for m in &g.members {
        let inside = in_region(w, &region, xy(w, m)?)?;
        if !acc.check(format!("{m}:in_region"), inside) {
            acc.atom(m, "stack", format!("in {zone}"));
            flagged.insert(m.clone());
        }
    }
    let (chains, broken) = chains(w, &g.members)?;
    for m in &broken {
        acc.check(format!("{m}:chain"), false);
        acc.atom(m, "stack", "above other blocks".into());
    }
    for c in &chains {
        if !acc.check(format!("{}:height", c[0]), c.len() >= 2) {
            acc.atom(&c[0], "stack", "above other blocks".into());
        }
    }
    if g.single {
        let ok = chains.len() <= 1 && broken.is_empty();
        if !acc.check(format!("{}:single_stack", g.region), ok) && chains.len() > 1 {
            let main = chains
                .iter()
                .enumerate()
                .max_by(|(i, a), (j, b)| a.len().cmp(&b.len()).then(j.cmp(i)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            for (i, c) in chains.iter().enumerate() {
                if i != main {
                    for m in c {
                        acc.atom(m, "stack", format!("on top of the stack in {zone}"));
                    }
                }
            }
        }
        if let (Some((c1, c2)), [chain]) = (g.alternate, chains.as_slice()) {
            let mut bad = None;
            for (i, m) in chain.iter().enumerate() {
                let want = if i % 2 == 0 { c1 } else { c2 };
                if rec(w, m)?.color != want {
                    bad = Some(i);
                    break;
                }
            }
            if !acc.check(format!("{}:alternation", g.region), bad.is_none()) {
                for m in &chain[bad.unwrap_or(0)..] {
                    acc.atom(m, "stack", format!("in alternating {c1} and {c2} order starting with {c1}"));
                }
            }
        }
    }
    Ok(())
}

fn groups(w: &WorldState, zones: &[String], blocks: &[String], sizes: &[usize], acc: &mut Acc) -> Result<(), TaskError> {
    let mut by_zone: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for b in blocks {
        let p = xy(w, b)?;
        let mut home = None;
        for z in zones {
            if in_region(w, &Region::Object(z.clone()), p)? {
                home = Some(z.as_str());
                break;
            }
        }
        match home {
            Some(z) => by_zone.entry(z).or_default().push(b.clone()),
            None => {
                acc.check(format!("{b}:in_zone"), false);
                acc.atom(b, "stack", "in one of the zones".into());
            }
        }
    }
    let mut found = Vec::new();
    for (z, members) in &by_zone {
        let (chains, broken) = chains(w, members)?;
        for m in &broken {
            acc.check(format!("{m}:chain"), false);
            acc.atom(m, "stack", "above other blocks".into());
        }
        if !acc.check(format!("{z}:single_stack"), chains.len() <= 1 && broken.is_empty()) {
            for c in chains.iter().skip(1) {
                for m in c {
                    acc.atom(m, "stack", format!("on top of the stack in {}", label(z)));
                }
            }
        }
        if chains.len() == 1 && broken.is_empty() {
            found.push((chains[0].len(), chains[0].last().cloned().unwrap_or_default()));
        }
    }
    if acc.detail.values().all(|v| *v) {
        let mut want: Vec<usize> = sizes.to_vec();
        want.sort();
        let mut got: Vec<usize> = found.iter().map(|f| f.0).collect();
        got.sort();
        if !acc.check("group_sizes".into(), got == want) {
            let mut remaining = want.clone();
            for (len, top) in &found {
                if let Some(i) = remaining.iter().position(|s| s == len) {
                    remaining.remove(i);
                } else {
                    acc.atom(top, "stack", format!("in a group of {}", sizes.iter().max().copied().unwrap_or(0)));
                }
            }
        }
    }
    Ok(())
}

/// Counter-clockwise angle of `p` around `c` in [0, 2pi).
pub(crate) fn angle(c: [f64; 2], p: [f64; 2]) -> f64 {
    let a = (p[1] - c[1]).atan2(p[0] - c[0]);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

fn circle(w: &WorldState, center: &str, rings: &[Ring], acc: &mut Acc) -> Result<(), TaskError> {
    let c = xy(w, center)?;
    let around = format!("around {}", label(center));
    let mut radii: Vec<(f64, f64, String, String)> = Vec::new();
    for (ri, ring) in rings.iter().enumerate() {
        let n = ring.members.len();
        let mut ds = Vec::with_capacity(n);
        for m in &ring.members {
            if !acc.check(format!("{m}:on_table"), on_table(w, m)?) {
                acc.atom(m, "arrange", format!("on the table {around}"));
            }
            ds.push((dist(c, xy(w, m)?), m.clone()));
        }
        let min = ds.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
        let max = ds.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
        if !acc.check(format!("ring{ri}:radius"), max - min <= 2.0 * CIRCLE_RADIUS_TOL) {
            let mut sorted: Vec<f64> = ds.iter().map(|d| d.0).collect();
            sorted.sort_by(f64::total_cmp);
            let med = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
            for (d, m) in &ds {
                if (d - med).abs() > CIRCLE_RADIUS_TOL {
                    acc.atom(m, "arrange", format!("on the circle {around}"));
                }
            }
        }
        let mut ang: Vec<(f64, String)> = Vec::with_capacity(n);
        for m in &ring.members {
            ang.push((angle(c, xy(w, m)?), m.clone()));
        }
        ang.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let even = 360.0 / n as f64;
        let mut bad_gap = None;
        for k in 0..n {
            let next = if k + 1 < n { ang[k + 1].0 } else { ang[0].0 + 2.0 * PI };
            let gap = (next - ang[k].0).to_degrees();
            if (gap - even).abs() > CIRCLE_ANGLE_TOL_DEG {
                bad_gap = Some((k + 1) % n);
                break;
            }
        }
        if !acc.check(format!("ring{ri}:spacing"), bad_gap.is_none()) {
            acc.atom(&ang[bad_gap.unwrap_or(0)].1, "arrange", format!("evenly spaced {around}"));
        }
        if let Some((c1, c2)) = ring.alternate {
            let mut bad = None;
            for k in 0..n {
                let a = rec(w, &ang[k].1)?.color;
                let b = rec(w, &ang[(k + 1) % n].1)?.color;
                if a == b || !(a == c1 || a == c2) {
                    bad = Some(k);
                    break;
                }
            }
            if !acc.check(format!("ring{ri}:alternation"), bad.is_none()) {
                acc.atom(&ang[bad.unwrap_or(0)].1, "arrange", format!("alternating {c1} and {c2} {around}"));
            }
        }
        let (dmin, dmax) = (
            ds.iter().min_by(|a, b| a.0.total_cmp(&b.0)).cloned().unwrap_or_default(),
            ds.iter().max_by(|a, b| a.0.total_cmp(&b.0)).cloned().unwrap_or_default(),
        );
        radii.push((min, max, dmin.1, dmax.1));
    }
    for k in 1..radii.len() {
        let (inner, outer) = (&radii[k - 1], &radii[k]);
        if !acc.check(format!("ring{k}:nested"), inner.1 < outer.0) {
            acc.atom(&inner.3, "arrange", format!("inside the outer circle {around}"));
        }
    }
    Ok(())
}

/// Ideal lattice sites: (layer, xy offset from the center).
pub(crate) fn lattice_sites(kind: LatticeKind, spacing: f64) -> Vec<(usize, [f64; 2])> {
    let mut out = Vec::new();
    for (layer, &side) in kind.layers().iter().enumerate() {
        let half = (side as f64 - 1.0) / 2.0;
        for i in 0..side {
            for j in 0..side {
                out.push((layer, [(i as f64 - half) * spacing, (j as f64 - half) * spacing]));
            }
        }
    }
    out
}

fn lattice(w: &WorldState, zone: &str, kind: LatticeKind, members: &[String], acc: &mut Acc) -> Result<(), TaskError> {
    let c = xy(w, zone)?;
    let a = SMALL_BLOCK_EDGE;
    let sites = lattice_sites(kind, a);
    let name = match kind {
        LatticeKind::Pyramid => "pyramid",
        LatticeKind::Cube => "cube",
    };
    let mut taken: BTreeMap<usize, String> = BTreeMap::new();
    for m in members {
        let r = rec(w, m)?;
        let p = r.pose.xy();
        let z = r.bottom() - w.bounds.z[0];
        let site = sites.iter().position(|(layer, off)| {
            (z - *layer as f64 * a).abs() <= 0.25 * a && dist(p, [c[0] + off[0], c[1] + off[1]]) <= LATTICE_XY_TOL
        });
        let ok = match site {
            Some(s) if !taken.contains_key(&s) => {
                taken.insert(s, m.clone());
                true
            }
            _ => false,
        };
        if !acc.check(format!("{m}:site"), ok) {
            acc.atom(m, "place", format!("on a free site of the {name} in {}", label(zone)));
            continue;
        }
        let layer = sites[site.unwrap_or(0)].0;
        if layer > 0 {
            let supported = r.supported_by.as_deref().is_some_and(|s| members.iter().any(|x| x == s));
            if !acc.check(format!("{m}:supported"), supported) {
                acc.atom(m, "place", format!("on top of the layer below in {}", label(zone)));
            }
        }
    }
    Ok(())
}

/// Zone-axis frame of a line layout: midpoint, unit axis between the zones, unit
/// bisector direction.
pub(crate) fn line_frame(w: &WorldState, zones: &[String; 2]) -> Result<([f64; 2], [f64; 2], [f64; 2]), TaskError> {
    let p1 = xy(w, &zones[0])?;
    let p2 = xy(w, &zones[1])?;
    let m = [0.5 * (p1[0] + p2[0]), 0.5 * (p1[1] + p2[1])];
    let len = dist(p1, p2).max(1e-12);
    let v = [(p2[0] - p1[0]) / len, (p2[1] - p1[1]) / len];
    Ok((m, v, [-v[1], v[0]]))
}

fn line(w: &WorldState, zones: &[String; 2], members: &[String], acc: &mut Acc) -> Result<(), TaskError> {
    let (m, v, u) = line_frame(w, zones)?;
    let a = SMALL_BLOCK_EDGE;
    let between = format!("between {} and {}", label(&zones[0]), label(&zones[1]));
    let mut ts = Vec::new();
    for b in members {
        let p = xy(w, b)?;
        let d = [p[0] - m[0], p[1] - m[1]];
        let residual = (d[0] * v[0] + d[1] * v[1]).abs();
        if !acc.check(format!("{b}:on_table"), on_table(w, b)?) {
            acc.atom(b, "arrange", format!("on the table {between}"));
        }
        if !acc.check(format!("{b}:on_line"), residual <= LINE_RESIDUAL_TOL) {
            acc.atom(b, "arrange", format!("on the bisector line {between}"));
        }
        ts.push((d[0] * u[0] + d[1] * u[1], b.clone()));
    }
    ts.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    for k in 1..ts.len() {
        let gap = ts[k].0 - ts[k - 1].0 - a;
        let ok = gap >= (1.0 - LINE_GAP_TOL) * a && gap <= (1.0 + LINE_GAP_TOL) * a;
        if !acc.check(format!("{}:gap", ts[k].1), ok) {
            acc.atom(&ts[k].1, "arrange", "one block edge away from its neighbour".into());
        }
    }
    if let (Some(first), Some(last)) = (ts.first(), ts.last()) {
        let mid = 0.5 * (first.0 + last.0);
        if !acc.check("line:midpoint".into(), mid.abs() <= LINE_MIDPOINT_TOL) {
            acc.atom(&first.1, "arrange", format!("so the row is centered {between}"));
        }
    }
    Ok(())
}

pub(crate) const FIXTURE_SLOTS: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// World xy of slot `k` of a fixture at `pose`, with slot pitch `pitch`.
pub(crate) fn fixture_slot(f: &ObjectRecord, k: usize, pitch: f64) -> [f64; 2] {
    let (s, c) = f.pose.yaw.sin_cos();
    let o = [FIXTURE_SLOTS[k][0] * pitch, FIXTURE_SLOTS[k][1] * pitch];
    [f.pose.position[0] + c * o[0] - s * o[1], f.pose.position[1] + s * o[0] + c * o[1]]
}

fn fixture(w: &WorldState, fixtures: &[String], members: &[String], acc: &mut Acc) -> Result<(), TaskError> {
    let a = SMALL_BLOCK_EDGE;
    for f in fixtures {
        let fr = rec(w, f)?;
        let mut colors = Vec::new();
        for k in 0..3 {
            let slot = fixture_slot(fr, k, a);
            let mut here = Vec::new();
            for b in members {
                if on_table(w, b)? && dist(xy(w, b)?, slot) <= FIXTURE_SLOT_TOL {
                    here.push(b);
                }
            }
            let o = FIXTURE_SLOTS[k];
            if !acc.check(format!("{f}:slot{k}"), here.len() == 1) {
                if here.is_empty() {
                    acc.atom(f, "fill", format!("offset ({:.3}, {:.3}, 0.000) with a block", o[0] * a, o[1] * a));
                } else {
                    for b in here.iter().skip(1) {
                        acc.atom(b, "remove", format!("from the crowded slot of {}", label(f)));
                    }
                }
            }
            if let [b] = here.as_slice() {
                colors.push(rec(w, b)?.color);
            }
        }
        let distinct: BTreeSet<_> = colors.iter().collect();
        if colors.len() == 3 && !acc.check(format!("{f}:colors"), distinct.len() == 3) {
            acc.atom(f, "fill", "with three blocks of different colors".into());
        }
    }
    Ok(())
}
