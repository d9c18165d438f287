//! Per-task parameter sampling, scene recipes and goal binding.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::world::{
    generate_scene, Bounds, Color, ColorType, Kind, ObjectTemplate, Placement, Pose, SceneRecipe, Size, WorldState,
    SMALL_BLOCK_EDGE, ZONE_EDGE,
};

const ATTEMPTS: u64 = 64;
/// Blocks this close to a selection threshold make the instance ambiguous.
const SELECTION_MARGIN: f64 = 0.005;
const REL_DISTANCE: f64 = 0.05;

type Binder = Box<dyn Fn(&WorldState) -> Result<Goal, String>>;

struct Draft {
    recipe: SceneRecipe,
    params: BTreeMap<String, String>,
    bind: Binder,
}

pub(super) fn instantiate(task: &TaskSpec, seed: u64) -> Result<(TaskInstance, WorldState), TaskError> {
    let salt = task.id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    let mut last = String::from("no attempt made");
    for attempt in 0..ATTEMPTS {
        let mix = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt ^ attempt.wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut rng = ChaCha8Rng::seed_from_u64(mix);
        let draft = match draft(task.id, &mut rng) {
            Ok(d) => d,
            Err(e) => {
                last = e;
                continue;
            }
        };
        let world = match generate_scene(&draft.recipe, Bounds::default(), mix) {
            Ok(w) => w,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        if let Err(errs) = world.validate() {
            last = errs.join("; ");
            continue;
        }
        match (draft.bind)(&world) {
            Ok(goal) => {
                let instance = TaskInstance {
                    task: task.id.to_string(),
                    seed,
                    instruction: render_instruction(task.instruction_template, &draft.params),
                    params: draft.params,
                    goal,
                };
                return Ok((instance, world));
            }
            Err(e) => last = e,
        }
    }
    Err(TaskError::Sampling { task: task.id.to_string(), seed, reason: last })
}

#[derive(Default)]
struct Ids(BTreeMap<(Color, Size), usize>);

impl Ids {
    fn block(&mut self, color: Color, size: Size) -> ObjectTemplate {
        let k = self.0.entry((color, size)).or_insert(0);
        *k += 1;
        let id = match size {
            Size::Small => format!("{color}_block_{k}"),
            Size::Big => format!("{color}_big_block_{k}"),
        };
        ObjectTemplate::new(id, Kind::Block, color, size)
    }
}

fn zone(color: Color) -> ObjectTemplate {
    ObjectTemplate::new(format!("{color}_zone"), Kind::Zone, color, Size::Small)
}

fn bowl(color: Color) -> ObjectTemplate {
    ObjectTemplate::new(format!("{color}_bowl"), Kind::Bowl, color, Size::Small)
}

fn distinct_colors(rng: &mut ChaCha8Rng, n: usize) -> Vec<Color> {
    let mut c = Color::TASK.to_vec();
    c.shuffle(rng);
    c.truncate(n);
    c
}

fn any_color(rng: &mut ChaCha8Rng) -> Color {
    Color::TASK[rng.random_range(0..Color::TASK.len())]
}

fn ids(ts: &[ObjectTemplate]) -> Vec<String> {
    ts.iter().map(|t| t.id.clone()).collect()
}

fn params(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn single(members: Vec<String>, region: String) -> StackGroup {
    StackGroup { members, region, single: true, alternate: None }
}

fn fixed(x: f64, y: f64) -> Placement {
    Placement::Fixed(Pose::at(x, y, 0.0))
}

/// Center of a disc of radius `r` kept fully on the table.
fn inner_point(rng: &mut ChaCha8Rng, r: f64) -> Result<[f64; 2], String> {
    let b = Bounds::default();
    if b.x[1] - b.x[0] <= 2.0 * r || b.y[1] - b.y[0] <= 2.0 * r {
        return Err(format!("disc of radius {r} does not fit on the table"));
    }
    Ok([rng.random_range(b.x[0] + r..b.x[1] - r), rng.random_range(b.y[0] + r..b.y[1] - r)])
}

const QUADRANTS: [&str; 4] = ["front left", "front right", "back left", "back right"];

fn quadrant(name: &str) -> Region {
    let b = Bounds::default();
    let (cx, cy) = (0.5 * (b.x[0] + b.x[1]), 0.5 * (b.y[0] + b.y[1]));
    let xs = if name.starts_with("front") { [cx, b.x[1]] } else { [b.x[0], cx] };
    let ys = if name.ends_with("left") { [b.y[0], cy] } else { [cy, b.y[1]] };
    Region::Area { name: name.to_string(), min: [xs[0], ys[0]], max: [xs[1], ys[1]] }
}

fn area_box(r: &Region) -> ([f64; 2], [f64; 2]) {
    match r {
        Region::Area { min, max, .. } => (*min, *max),
        Region::Object(_) => unreachable!("quadrants are areas"),
    }
}

/// Distance from `p` to the nearest edge of an area.
fn edge_distance(r: &Region, p: [f64; 2]) -> f64 {
    let (min, max) = area_box(r);
    (p[0] - min[0]).abs().min((p[0] - max[0]).abs()).min((p[1] - min[1]).abs()).min((p[1] - max[1]).abs())
}

fn draft(task: &str, rng: &mut ChaCha8Rng) -> Result<Draft, String> {
    let mut blocks = Ids::default();
    let mut recipe = SceneRecipe::default();
    let d = match task {
        "A" => {
            let c = any_color(rng);
            let n = rng.random_range(3..=5);
            let big = rng.random_range(0..=2);
            let bs: Vec<_> = (0..n)
                .map(|i| blocks.block(any_color(rng), if i < big { Size::Big } else { Size::Small }))
                .collect();
            let (members, region) = (ids(&bs), format!("{c}_zone"));
            recipe.objects.push(zone(c));
            recipe.objects.extend(bs);
            Draft {
                recipe,
                params: params(&[("COLOR", c.to_string())]),
                bind: Box::new(move |_| Ok(Goal::Stack { groups: vec![single(members.clone(), region.clone())], exclude: vec![] })),
            }
        }
        "B" => {
            let cs = distinct_colors(rng, 2);
            let small: Vec<_> = (0..rng.random_range(2..=3)).map(|_| blocks.block(any_color(rng), Size::Small)).collect();
            let big: Vec<_> = (0..rng.random_range(2..=3)).map(|_| blocks.block(any_color(rng), Size::Big)).collect();
            let groups = vec![
                StackGroup { members: ids(&small), region: format!("{}_zone", cs[0]), single: false, alternate: None },
                StackGroup { members: ids(&big), region: format!("{}_zone", cs[1]), single: false, alternate: None },
            ];
            recipe.objects.extend([zone(cs[0]), zone(cs[1])]);
            recipe.objects.extend(big);
            recipe.objects.extend(small);
            Draft {
                recipe,
                params: params(&[("COLOR1", cs[0].to_string()), ("COLOR2", cs[1].to_string())]),
                bind: Box::new(move |_| Ok(Goal::Stack { groups: groups.clone(), exclude: vec![] })),
            }
        }
        "C" => {
            let n = rng.random_range(2..=3);
            let cs = distinct_colors(rng, n);
            let mut groups = Vec::new();
            let mut bs = Vec::new();
            for &c in &cs {
                recipe.objects.push(zone(c));
                let g: Vec<_> = (0..rng.random_range(2..=3)).map(|_| blocks.block(c, Size::Small)).collect();
                groups.push(StackGroup { members: ids(&g), region: format!("{c}_zone"), single: false, alternate: None });
                bs.extend(g);
            }
            recipe.objects.extend(bs);
            Draft { recipe, params: BTreeMap::new(), bind: Box::new(move |_| Ok(Goal::Stack { groups: groups.clone(), exclude: vec![] })) }
        }
        "D" => {
            let size = if rng.random_bool(0.5) { Size::Small } else { Size::Big };
            let ty = if rng.random_bool(0.5) { ColorType::Primary } else { ColorType::Secondary };
            let of_type: Vec<Color> = Color::TASK.into_iter().filter(|c| c.color_type() == Some(ty)).collect();
            let other: Vec<Color> = Color::TASK.into_iter().filter(|c| c.color_type() != Some(ty)).collect();
            let zc = any_color(rng);
            let members: Vec<_> =
                (0..rng.random_range(2..=3)).map(|_| blocks.block(of_type[rng.random_range(0..of_type.len())], size)).collect();
            let other_size = if size == Size::Small { Size::Big } else { Size::Small };
            let distractors: Vec<_> = (0..rng.random_range(2..=3))
                .map(|i| {
                    if i % 2 == 0 {
                        blocks.block(of_type[rng.random_range(0..of_type.len())], other_size)
                    } else {
                        blocks.block(other[rng.random_range(0..other.len())], size)
                    }
                })
                .collect();
            let region = format!("{zc}_zone");
            let exclude: Vec<(String, String)> = ids(&distractors).into_iter().map(|b| (b, region.clone())).collect();
            let group = single(ids(&members), region);
            recipe.objects.push(zone(zc));
            recipe.objects.extend(members);
            recipe.objects.extend(distractors);
            Draft {
                recipe,
                params: params(&[("SIZE", size.name().into()), ("COLOR_TYPE", ty.name().into()), ("COLOR", zc.to_string())]),
                bind: Box::new(move |_| Ok(Goal::Stack { groups: vec![group.clone()], exclude: exclude.clone() })),
            }
        }
        "E" => {
            let cs = distinct_colors(rng, 2);
            let rel = ["left", "right", "front", "back"][rng.random_range(0..4)];
            let euclid = rng.random_bool(0.5);
            let reference = blocks.block(cs[0], Size::Small);
            let others: Vec<Color> = Color::TASK.into_iter().filter(|&c| c != cs[0]).collect();
            let bs: Vec<_> =
                (0..rng.random_range(5..=7)).map(|_| blocks.block(others[rng.random_range(0..others.len())], Size::Small)).collect();
            let (rid, cand, region) = (reference.id.clone(), ids(&bs), format!("{}_zone", cs[1]));
            recipe.objects.push(zone(cs[1]));
            recipe.objects.push(reference);
            recipe.objects.extend(bs);
            Draft {
                recipe,
                params: params(&[
                    ("REL_POS", rel.into()),
                    ("POS_TYPE", if euclid { "euclidean" } else { "axial" }.into()),
                    ("COLOR1", cs[0].to_string()),
                    ("COLOR2", cs[1].to_string()),
                ]),
                bind: Box::new(move |w| {
                    let r = w.get(&rid).ok_or("reference block missing")?.pose.xy();
                    let mut members = Vec::new();
                    for b in &cand {
                        let p = w.get(b).ok_or("block missing")?.pose.xy();
                        let d = [p[0] - r[0], p[1] - r[1]];
                        let side = match rel {
                            "left" => -d[1],
                            "right" => d[1],
                            "front" => d[0],
                            _ => -d[0],
                        };
                        let (measure, side_margin) = if euclid { (d[0].hypot(d[1]), side.abs()) } else { (side, f64::INFINITY) };
                        if (measure - REL_DISTANCE).abs() < SELECTION_MARGIN || side_margin < SELECTION_MARGIN {
                            return Err(format!("`{b}` sits on the selection threshold"));
                        }
                        if side > 0.0 && measure > REL_DISTANCE {
                            members.push(b.clone());
                        }
                    }
                    if !(2..=4).contains(&members.len()) {
                        return Err(format!("{} blocks selected", members.len()));
                    }
                    Ok(Goal::Stack { groups: vec![single(members, region.clone())], exclude: vec![] })
                }),
            }
        }
        "F" | "G" => {
            let mut q = QUADRANTS.to_vec();
            q.shuffle(rng);
            let (from, to) = (quadrant(q[0]), quadrant(q[1]));
            let size = if rng.random_bool(0.5) { Size::Small } else { Size::Big };
            let (lo, hi) = area_box(&from);
            let mut bs = Vec::new();
            for i in 0..rng.random_range(4..=6) {
                let s = if task == "F" { if rng.random_bool(0.3) { Size::Big } else { Size::Small } } else if i % 2 == 0 { size } else if size == Size::Small { Size::Big } else { Size::Small };
                let mut t = blocks.block(any_color(rng), s);
                // Guarantee at least one selected block.
                if i == 0 {
                    t = t.placed(Placement::Random { region: Some((lo, hi)), random_yaw: false });
                }
                bs.push(t);
            }
            let sizes: BTreeMap<String, Size> = bs.iter().map(|t| (t.id.clone(), t.size)).collect();
            recipe.objects.extend(bs);
            let mut p = vec![("POS1", q[0].to_string()), ("POS2", q[1].to_string())];
            if task == "G" {
                p.push(("SIZE", size.name().into()));
            }
            let only = (task == "G").then_some(size);
            let dest = q[1].to_string();
            Draft {
                recipe,
                params: params(&p),
                bind: Box::new(move |w| {
                    let mut atoms = Vec::new();
                    for (b, s) in &sizes {
                        let p = w.get(b).ok_or("block missing")?.pose.xy();
                        if edge_distance(&from, p) < SELECTION_MARGIN {
                            return Err(format!("`{b}` sits on an area boundary"));
                        }
                        let (lo, hi) = area_box(&from);
                        let inside = p[0] > lo[0] && p[0] < hi[0] && p[1] > lo[1] && p[1] < hi[1];
                        if inside && only.is_none_or(|o| o == *s) {
                            atoms.push(ContainAtom {
                                obj: b.clone(),
                                regions: vec![to.clone()],
                                outside: false,
                                action: "move".into(),
                                target: format!("to the {dest} area"),
                            });
                        }
                    }
                    if atoms.is_empty() {
                        return Err("no block selected".into());
                    }
                    Ok(Goal::Contain { atoms })
                }),
            }
        }
        "H" | "I" => {
            let n = rng.random_range(2..=3);
            let cs = distinct_colors(rng, n);
            let mut bs = Vec::new();
            for &c in &cs {
                recipe.objects.push(bowl(c));
                for _ in 0..rng.random_range(1..=2) {
                    bs.push(blocks.block(c, Size::Small));
                }
            }
            let mut atoms = Vec::new();
            for b in &bs {
                atoms.push(if task == "H" {
                    ContainAtom {
                        obj: b.id.clone(),
                        regions: vec![Region::Object(format!("{}_bowl", b.color))],
                        outside: false,
                        action: "put into".into(),
                        target: format!("the {} bowl", b.color),
                    }
                } else {
                    ContainAtom {
                        obj: b.id.clone(),
                        regions: cs.iter().filter(|&&c| c != b.color).map(|c| Region::Object(format!("{c}_bowl"))).collect(),
                        outside: false,
                        action: "put into".into(),
                        target: "a bowl of a different color".into(),
                    }
                });
            }
            recipe.objects.extend(bs);
            Draft { recipe, params: BTreeMap::new(), bind: Box::new(move |_| Ok(Goal::Contain { atoms: atoms.clone() })) }
        }
        "J" => {
            let zc = any_color(rng);
            let cs = distinct_colors(rng, 2);
            let n: usize = rng.random_range(4..=6);
            let bs: Vec<_> = (0..n).map(|i| blocks.block(cs[i % 2], Size::Small)).collect();
            let group = StackGroup { members: ids(&bs), region: format!("{zc}_zone"), single: true, alternate: Some((cs[0], cs[1])) };
            recipe.objects.push(zone(zc));
            recipe.objects.extend(bs);
            Draft {
                recipe,
                params: params(&[("COLOR1", zc.to_string()), ("COLOR2", cs[0].to_string())]),
                bind: Box::new(move |_| Ok(Goal::Stack { groups: vec![group.clone()], exclude: vec![] })),
            }
        }
        "G1" | "G2" => {
            let kind = if task == "G1" { LatticeKind::Pyramid } else { LatticeKind::Cube };
            let (zc, bc) = (any_color(rng), any_color(rng));
            let bs: Vec<_> = (0..kind.site_count()).map(|_| blocks.block(bc, Size::Small)).collect();
            let (members, z) = (ids(&bs), format!("{zc}_zone"));
            recipe.objects.push(zone(zc));
            recipe.objects.extend(bs);
            Draft {
                recipe,
                params: BTreeMap::new(),
                bind: Box::new(move |_| Ok(Goal::Lattice { zone: z.clone(), kind, members: members.clone() })),
            }
        }
        "G3" | "G4" => {
            let cs = distinct_colors(rng, 2);
            let per = rng.random_range(2..=3);
            let n = 2 * per;
            let keep = circle_radius(n) + 0.06;
            let c = inner_point(rng, keep)?;
            let center = if task == "G3" {
                recipe.objects.push(zone(any_color(rng)).placed(fixed(c[0], c[1])));
                recipe.objects[0].id.clone()
            } else {
                recipe.objects.push(ObjectTemplate::new("ball", Kind::Ball, Color::Gray, Size::Small).placed(fixed(c[0], c[1])));
                "ball".to_string()
            };
            recipe.keep_out.push((c, keep));
            let bs: Vec<_> = (0..n).map(|i| blocks.block(cs[i % 2], Size::Small)).collect();
            let ring = Ring { members: ids(&bs), alternate: Some((cs[0], cs[1])) };
            recipe.objects.extend(bs);
            Draft {
                recipe,
                params: params(&[("COLOR1", cs[0].to_string()), ("COLOR2", cs[1].to_string())]),
                bind: Box::new(move |_| Ok(Goal::Circle { center: center.clone(), rings: vec![ring.clone()] })),
            }
        }
        "G5" => {
            let cs = distinct_colors(rng, 2);
            let num: usize = rng.random_range(3..=4);
            let (_, r_out) = concentric_radii(num, num + 4);
            let keep = r_out + 0.05;
            let c = inner_point(rng, keep)?;
            let z = zone(any_color(rng)).placed(fixed(c[0], c[1]));
            let center = z.id.clone();
            recipe.objects.push(z);
            recipe.keep_out.push((c, keep));
            let inner: Vec<_> = (0..num).map(|_| blocks.block(cs[0], Size::Small)).collect();
            let outer: Vec<_> = (0..num + 4).map(|_| blocks.block(cs[1], Size::Small)).collect();
            let rings = vec![Ring { members: ids(&inner), alternate: None }, Ring { members: ids(&outer), alternate: None }];
            recipe.objects.extend(inner);
            recipe.objects.extend(outer);
            Draft {
                recipe,
                params: params(&[
                    ("NUM", num.to_string()),
                    ("NUM + 4", (num + 4).to_string()),
                    ("COLOR1", cs[0].to_string()),
                    ("COLOR2", cs[1].to_string()),
                ]),
                bind: Box::new(move |_| Ok(Goal::Circle { center: center.clone(), rings: rings.clone() })),
            }
        }
        "G6" => {
            let num: usize = rng.random_range(2..=3);
            let mut n: usize = rng.random_range(5..=7);
            if n % num == 0 {
                n += 1;
            }
            let groups = n.div_ceil(num);
            let cs = distinct_colors(rng, groups);
            let zones: Vec<String> = (1..=groups).map(|k| format!("zone_{k}")).collect();
            for (z, &c) in zones.iter().zip(&cs) {
                recipe.objects.push(ObjectTemplate::new(z.clone(), Kind::Zone, c, Size::Small));
            }
            let bs: Vec<_> = (0..n).map(|_| blocks.block(any_color(rng), Size::Small)).collect();
            let mut sizes = vec![num; n / num];
            sizes.push(n % num);
            let members = ids(&bs);
            recipe.objects.extend(bs);
            Draft {
                recipe,
                params: params(&[("NUM", num.to_string())]),
                bind: Box::new(move |_| Ok(Goal::Groups { zones: zones.clone(), blocks: members.clone(), sizes: sizes.clone() })),
            }
        }
        "G7" => {
            let n = rng.random_range(2..=3);
            let cs = distinct_colors(rng, n);
            let mut zones = Vec::new();
            let mut bs = Vec::new();
            for &c in &cs {
                recipe.objects.push(zone(c));
                let avail: usize = rng.random_range(2..=5);
                let g: Vec<_> = (0..avail).map(|_| blocks.block(c, Size::Small)).collect();
                let count = if avail % 2 == 1 { avail } else { avail - 1 };
                zones.push((format!("{c}_zone"), ids(&g), count));
                bs.extend(g);
            }
            recipe.objects.extend(bs);
            Draft { recipe, params: BTreeMap::new(), bind: Box::new(move |_| Ok(Goal::Counts { zones: zones.clone() })) }
        }
        "G8" => {
            let n = rng.random_range(2..=3);
            let cs = distinct_colors(rng, n);
            let top: usize = rng.random_range(3..=4);
            let zc = any_color(rng);
            recipe.objects.push(zone(zc));
            let mut members = Vec::new();
            for (i, &c) in cs.iter().enumerate() {
                let count = if i == 0 { top } else { rng.random_range(1..top) };
                for _ in 0..count {
                    let b = blocks.block(c, Size::Small);
                    if i == 0 {
                        members.push(b.id.clone());
                    }
                    recipe.objects.push(b);
                }
            }
            let region = format!("{zc}_zone");
            Draft {
                recipe,
                params: BTreeMap::new(),
                bind: Box::new(move |_| Ok(Goal::Stack { groups: vec![single(members.clone(), region.clone())], exclude: vec![] })),
            }
        }
        "G9" => {
            let n: usize = rng.random_range(3..=5);
            let a = SMALL_BLOCK_EDGE;
            let half_len = (n as f64 - 1.0) * a;
            let b = Bounds::default();
            let mut placed = None;
            for _ in 0..200 {
                let m = [rng.random_range(b.x[0]..b.x[1]), rng.random_range(b.y[0]..b.y[1])];
                let len = rng.random_range(0.15..=0.25);
                let th = rng.random_range(-PI..PI);
                let v = [len * th.cos(), len * th.sin()];
                let u = [-th.sin(), th.cos()];
                let zr = 0.5 * ZONE_EDGE * std::f64::consts::SQRT_2 + 0.005;
                let br = 0.5 * a * std::f64::consts::SQRT_2 + 0.005;
                let pts = [
                    ([m[0] + v[0], m[1] + v[1]], zr),
                    ([m[0] - v[0], m[1] - v[1]], zr),
                    ([m[0] + half_len * u[0], m[1] + half_len * u[1]], br),
                    ([m[0] - half_len * u[0], m[1] - half_len * u[1]], br),
                ];
                if pts.iter().all(|(p, r)| p[0] - r > b.x[0] && p[0] + r < b.x[1] && p[1] - r > b.y[0] && p[1] + r < b.y[1]) {
                    placed = Some((m, v));
                    break;
                }
            }
            let (m, v) = placed.ok_or("no room for the zone pair")?;
            let cs = distinct_colors(rng, 2);
            recipe.objects.push(zone(cs[0]).placed(fixed(m[0] + v[0], m[1] + v[1])));
            recipe.objects.push(zone(cs[1]).placed(fixed(m[0] - v[0], m[1] - v[1])));
            recipe.keep_out.push((m, half_len + 0.05));
            let bs: Vec<_> = (0..n).map(|_| blocks.block(any_color(rng), Size::Small)).collect();
            let members = ids(&bs);
            recipe.objects.extend(bs);
            let zones = [format!("{}_zone", cs[0]), format!("{}_zone", cs[1])];
            Draft {
                recipe,
                params: BTreeMap::new(),
                bind: Box::new(move |_| Ok(Goal::Line { zones: zones.clone(), members: members.clone() })),
            }
        }
        "G10" => {
            let k: usize = rng.random_range(2..=3);
            let m: usize = rng.random_range(3..=(3 + 2).min(Color::TASK.len()));
            let cs = distinct_colors(rng, m);
            let fixtures: Vec<String> = (1..=k).map(|i| format!("fixture_{i}")).collect();
            for f in &fixtures {
                recipe.objects.push(
                    ObjectTemplate::new(f.clone(), Kind::Fixture, Color::Gray, Size::Small)
                        .placed(Placement::Random { region: None, random_yaw: true }),
                );
            }
            let bs: Vec<_> = (0..3 * k).map(|i| blocks.block(cs[i % m], Size::Small)).collect();
            let members = ids(&bs);
            recipe.objects.extend(bs);
            Draft {
                recipe,
                params: BTreeMap::new(),
                bind: Box::new(move |_| Ok(Goal::Fixtures { fixtures: fixtures.clone(), members: members.clone() })),
            }
        }
        "OCC1" => {
            let target = any_color(rng);
            let basket = ObjectTemplate::new("basket", Kind::Bowl, Color::Brown, Size::Big);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let b1 = blocks.block(any_color(rng), Size::Small).placed(Placement::On { support: "basket".into(), offset: [0.0, 0.03 * side] });
            let b2 = blocks.block(any_color(rng), Size::Small).placed(Placement::On { support: "basket".into(), offset: [0.0, -0.03 * side] });
            let towel = ObjectTemplate::new("towel", Kind::Prop, Color::Gray, Size::Small)
                .movable(true)
                .placed(Placement::On { support: b1.id.clone(), offset: [0.0, 0.0] });
            let vase = ObjectTemplate::new("vase", Kind::Prop, Color::Purple, Size::Big).movable(false);
            let dest = format!("{target}_bowl");
            let mut atoms: Vec<ContainAtom> = [&b1, &b2]
                .iter()
                .map(|b| ContainAtom {
                    obj: b.id.clone(),
                    regions: vec![Region::Object(dest.clone())],
                    outside: false,
                    action: "put into".into(),
                    target: format!("the {target} bowl"),
                })
                .collect();
            atoms.push(ContainAtom {
                obj: "towel".into(),
                regions: vec![Region::Object("basket".into())],
                outside: true,
                action: "remove".into(),
                target: "out of the basket".into(),
            });
            recipe.objects.extend([basket, bowl(target), vase, b1, b2, towel]);
            Draft { recipe, params: params(&[("COLOR", target.to_string())]), bind: Box::new(move |_| Ok(Goal::Contain { atoms: atoms.clone() })) }
        }
        other => return Err(format!("no recipe for task `{other}`")),
    };
    Ok(d)
}

/// Ring radius the oracle uses for `n` small blocks.
pub(crate) fn circle_radius(n: usize) -> f64 {
    (0.5 * SMALL_BLOCK_EDGE / (PI / n as f64).sin() + 0.01).max(0.06)
}

pub(crate) fn concentric_radii(inner: usize, outer: usize) -> (f64, f64) {
    let r_in = circle_radius(inner);
    (r_in, circle_radius(outer).max(r_in + 0.07))
}

/// Evenly spaced ring angles, rotated half a step when `offset` is set.
pub(crate) fn ring_angles(n: usize, offset: bool) -> Vec<f64> {
    let step = TAU / n as f64;
    (0..n).map(|i| (i as f64 + if offset { 0.5 } else { 0.0 }) * step).collect()
}
