//! Deterministic answers for co-planner calls that no backend entry covers.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use crate::world::{denormalize, Color, ColorType, FrameTag, Kind, ObjectRecord, Pose, Size, WorldState};

const STOP: [&str; 24] = [
    "the", "all", "a", "an", "every", "each", "of", "with", "color", "colored", "coloured", "colour", "that", "are",
    "is", "and", "or", "any", "those", "these", "which", "please", "one", "ones",
];

const DEFAULT_SPACING: f64 = 0.06;
const DEFAULT_OFFSET: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Extreme {
    Left,
    Right,
    Front,
    Back,
    High,
    Low,
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace(['-'], "")
        .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.'))
        .map(|w| w.trim_matches('.').to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

fn kind_word(w: &str) -> Option<Option<Kind>> {
    let base = match w {
        "cube" | "cubes" | "block" | "blocks" => "block",
        "object" | "objects" | "thing" | "things" | "item" | "items" => return Some(None),
        "holder" | "holders" => "fixture",
        "area" | "areas" | "region" | "regions" => "zone",
        other => other.strip_suffix('s').filter(|s| Kind::parse(s).is_some()).unwrap_or(other),
    };
    Kind::parse(base).map(Some)
}

fn extreme_word(w: &str) -> Option<Extreme> {
    Some(match w {
        "leftmost" => Extreme::Left,
        "rightmost" => Extreme::Right,
        "frontmost" | "foremost" => Extreme::Front,
        "backmost" | "rearmost" | "hindmost" => Extreme::Back,
        "highest" | "topmost" | "uppermost" => Extreme::High,
        "lowest" | "bottommost" => Extreme::Low,
        _ => return None,
    })
}

fn color_word(w: &str) -> Option<Color> {
    Color::parse(if w == "grey" { "gray" } else { w })
}

fn pick_extreme<'a>(objs: &[&'a ObjectRecord], e: Extreme) -> Option<&'a ObjectRecord> {
    let key = |o: &ObjectRecord| {
        let p = o.pose.position;
        match e {
            Extreme::Left => p[1],
            Extreme::Right => -p[1],
            Extreme::Front => -p[0],
            Extreme::Back => p[0],
            Extreme::High => -o.top(),
            Extreme::Low => o.bottom(),
        }
    };
    objs.iter().copied().min_by(|a, b| key(a).total_cmp(&key(b)).then_with(|| a.id.cmp(&b.id)))
}

/// Resolve a description naming exactly one visible object.
fn resolve_ref<'a>(text: &str, visible: &[&'a ObjectRecord]) -> Option<&'a ObjectRecord> {
    let ws = words(text);
    if let Some(o) = visible.iter().find(|o| ws.iter().any(|w| *w == o.id)) {
        return Some(o);
    }
    let names: Vec<String> = visible.iter().map(|o| o.id.clone()).collect();
    let hits = filter(text, &names, visible, 0);
    match hits.as_slice() {
        [one] => visible.iter().copied().find(|o| o.id == *one),
        _ => None,
    }
}

/// Names from `ctxt` matching `dsc`. Unrecognised words yield an empty list.
pub fn resolve_obj_name(dsc: &str, ctxt: &[String], world: &WorldState) -> Vec<String> {
    let obs = world.observe(FrameTag::Before);
    let visible: Vec<&ObjectRecord> = obs.visible.iter().collect();
    filter(dsc, ctxt, &visible, 0)
}

fn split_on<'t>(text: &'t str, markers: &[&str]) -> (&'t str, Option<&'t str>) {
    for m in markers {
        if let Some(i) = text.find(m) {
            return (&text[..i], Some(&text[i + m.len()..]));
        }
    }
    (text, None)
}

fn filter(dsc: &str, ctxt: &[String], visible: &[&ObjectRecord], depth: usize) -> Vec<String> {
    if depth > 3 {
        return Vec::new();
    }
    let lower = dsc.to_lowercase();
    let ctxt: BTreeSet<&str> = ctxt.iter().map(String::as_str).collect();
    let mut pool: Vec<&ObjectRecord> = visible.iter().copied().filter(|o| ctxt.contains(o.id.as_str())).collect();
    pool.sort_by(|a, b| a.id.cmp(&b.id));

    let (rest, excluded) = split_on(&lower, &[" except ", " other than ", " but not ", " excluding "]);
    if let Some(ex) = excluded {
        let names: Vec<String> = visible.iter().map(|o| o.id.clone()).collect();
        let mut drop: BTreeSet<String> = filter(ex, &names, visible, depth + 1).into_iter().collect();
        drop.extend(words(ex).into_iter().filter(|w| visible.iter().any(|o| o.id == *w)));
        pool.retain(|o| !drop.contains(&o.id));
    }
    let (rest, same_as) = split_on(rest, &["same color as "]);
    if let Some(r) = same_as {
        let Some(anchor) = resolve_ref(r, visible) else { return Vec::new() };
        let (c, id) = (anchor.color, anchor.id.clone());
        pool.retain(|o| o.color == c && o.id != id);
    }
    let (rest, inside) = split_on(rest, &[" inside ", " in ", " on "]);
    if let Some(r) = inside {
        let Some(anchor) = resolve_ref(r, visible) else { return Vec::new() };
        let fp = anchor.footprint();
        let id = anchor.id.clone();
        pool.retain(|o| o.id != id && fp.contains_point(o.pose.xy(), 0.0) && o.bottom() >= anchor.bottom() - 1e-9);
    }

    let mut colors = BTreeSet::new();
    let mut color_types = BTreeSet::new();
    let mut sizes = BTreeSet::new();
    let mut kinds = BTreeSet::new();
    let mut ids = BTreeSet::new();
    let mut extreme = None;
    for w in words(rest) {
        if STOP.contains(&w.as_str()) || w == "same" {
            continue;
        }
        if let Some(c) = color_word(&w) {
            colors.insert(c);
        } else if w == "primary" {
            color_types.insert(ColorType::Primary);
        } else if w == "secondary" {
            color_types.insert(ColorType::Secondary);
        } else if matches!(w.as_str(), "small" | "little" | "tiny") {
            sizes.insert(Size::Small);
        } else if matches!(w.as_str(), "big" | "large") {
            sizes.insert(Size::Big);
        } else if let Some(k) = kind_word(&w) {
            if let Some(k) = k {
                kinds.insert(k);
            }
        } else if let Some(e) = extreme_word(&w) {
            extreme = Some(e);
        } else if visible.iter().any(|o| o.id == w) {
            ids.insert(w);
        } else {
            return Vec::new();
        }
    }
    pool.retain(|o| {
        (ids.is_empty() || ids.contains(&o.id))
            && (colors.is_empty() || colors.contains(&o.color))
            && (color_types.is_empty() || o.color.color_type().is_some_and(|t| color_types.contains(&t)))
            && (sizes.is_empty() || sizes.contains(&o.size))
            && (kinds.is_empty() || kinds.contains(&o.kind))
    });
    match extreme {
        Some(e) => pick_extreme(&pool, e).map(|o| vec![o.id.clone()]).unwrap_or_default(),
        None => pool.into_iter().map(|o| o.id.clone()).collect(),
    }
}

fn number_word(w: &str) -> Option<f64> {
    const WORDS: [&str; 13] =
        ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve"];
    w.parse::<f64>().ok().filter(|v| v.is_finite()).or_else(|| WORDS.iter().position(|x| *x == w).map(|i| i as f64))
}

/// Number following the first occurrence of any `keys`, skipping filler words.
fn number_after(ws: &[String], keys: &[&str]) -> Option<f64> {
    let i = ws.iter().position(|w| keys.contains(&w.as_str()))?;
    ws[i + 1..].iter().take(3).find_map(|w| number_word(w))
}

/// Number immediately preceding the first occurrence of any `keys`.
fn number_before(ws: &[String], keys: &[&str]) -> Option<f64> {
    let i = ws.iter().position(|w| keys.contains(&w.as_str()))?;
    (i > 0).then(|| number_word(&ws[i - 1])).flatten()
}

fn count(v: Option<f64>) -> Option<usize> {
    v.filter(|n| *n >= 1.0 && *n <= 64.0 && n.fract() == 0.0).map(|n| n as usize)
}

/// Anchor position named after one of `markers`, else the table centre.
fn anchor(text: &str, markers: &[&str], visible: &[&ObjectRecord], world: &WorldState) -> Option<[f64; 3]> {
    match split_on(text, markers).1 {
        Some(r) => {
            let r = split_on(r, &[" with ", " spacing ", " along "]).0;
            if r.contains("table") {
                Some(world.bounds.center())
            } else {
                resolve_ref(r, visible).map(|o| o.pose.position)
            }
        }
        None => Some(world.bounds.center()),
    }
}

fn parenthesised(text: &str) -> Option<Vec<f64>> {
    let open = text.find('(')?;
    let close = open + text[open..].find(')')?;
    text[open + 1..close].split(',').map(|s| s.trim().parse::<f64>().ok()).collect()
}

/// Poses described by `dsc`: table landmarks, object references, relative
/// offsets and circle/grid/line layouts. Unresolvable text yields no poses.
pub fn resolve_position(dsc: &str, world: &WorldState) -> Vec<Pose> {
    let obs = world.observe(FrameTag::Before);
    let visible: Vec<&ObjectRecord> = obs.visible.iter().collect();
    let text = format!(" {} ", dsc.to_lowercase());
    let ws = words(&text);
    let table_z = world.bounds.z[0];
    let has = |w: &str| ws.iter().any(|x| x == w);

    if has("circle") || has("ring") {
        let (Some(r), Some(n)) = (number_after(&ws, &["radius"]), count(number_before(&ws, &["points", "positions", "poses", "spots"])))
        else {
            return Vec::new();
        };
        let Some(c) = anchor(&text, &[" around ", " centered at ", " centred at ", " centered on ", " centred on "], &visible, world) else {
            return Vec::new();
        };
        return (0..n)
            .map(|k| {
                let t = TAU * k as f64 / n as f64;
                Pose::at(c[0] + r * t.cos(), c[1] + r * t.sin(), table_z)
            })
            .collect();
    }
    if has("grid") {
        let dims = ws.iter().enumerate().find_map(|(i, w)| {
            if let Some((a, b)) = w.split_once('x') {
                return Some((count(number_word(a))?, count(number_word(b))?));
            }
            if w == "by" && i > 0 {
                return Some((count(number_word(&ws[i - 1]))?, count(ws.get(i + 1).and_then(|x| number_word(x)))?));
            }
            None
        });
        let Some((m, n)) = dims else { return Vec::new() };
        let s = number_after(&ws, &["spacing", "pitch"]).unwrap_or(DEFAULT_SPACING);
        let Some(c) = anchor(&text, &[" around ", " centered at ", " centred at ", " at ", " on "], &visible, world) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for i in 0..m {
            for j in 0..n {
                let dx = (i as f64 - (m - 1) as f64 / 2.0) * s;
                let dy = (j as f64 - (n - 1) as f64 / 2.0) * s;
                out.push(Pose::at(c[0] + dx, c[1] + dy, table_z));
            }
        }
        return out;
    }
    if has("line") || has("row") {
        let Some(n) = count(number_before(&ws, &["points", "positions", "poses", "spots"])) else { return Vec::new() };
        let s = number_after(&ws, &["spacing", "apart"]).or_else(|| number_before(&ws, &["apart"])).unwrap_or(DEFAULT_SPACING);
        let dir = if text.contains("along x") || text.contains("along the x") { [1.0, 0.0] } else { [0.0, 1.0] };
        let starting = split_on(&text, &[" starting at ", " starting from ", " from "]).1.is_some();
        let markers: &[&str] =
            if starting { &[" starting at ", " starting from ", " from "] } else { &[" centered at ", " centred at ", " around ", " at "] };
        let Some(c) = anchor(&text, markers, &visible, world) else { return Vec::new() };
        let shift = if starting { 0.0 } else { (n - 1) as f64 / 2.0 };
        return (0..n)
            .map(|k| {
                let t = (k as f64 - shift) * s;
                Pose::at(c[0] + t * dir[0], c[1] + t * dir[1], table_z)
            })
            .collect();
    }
    if (has("center") || has("centre") || has("middle")) && has("table") {
        let p = world.bounds.center();
        return vec![Pose::at(p[0], p[1], p[2])];
    }
    if has("corner") {
        let fx = if has("front") { Some(0.9) } else if has("back") || has("rear") { Some(0.1) } else { None };
        let fy = if has("left") { Some(0.1) } else if has("right") { Some(0.9) } else { None };
        return match (fx, fy) {
            (Some(x), Some(y)) => denormalize(&world.bounds, &[x, y]).map(|p| vec![Pose::at(p[0], p[1], p[2])]).unwrap_or_default(),
            _ => Vec::new(),
        };
    }
    if let Some(v) = parenthesised(&text) {
        if has("normalized") || has("normalised") {
            return denormalize(&world.bounds, &v).map(|p| vec![Pose::at(p[0], p[1], p[2])]).unwrap_or_default();
        }
        return match v.as_slice() {
            [x, y] => vec![Pose::at(*x, *y, table_z)],
            [x, y, z] => vec![Pose::at(*x, *y, *z)],
            [x, y, z, yaw] => vec![Pose::new([*x, *y, *z], *yaw)],
            _ => Vec::new(),
        };
    }
    let relations: [(&str, [f64; 2]); 6] = [
        (" to the left of ", [0.0, -1.0]),
        (" left of ", [0.0, -1.0]),
        (" to the right of ", [0.0, 1.0]),
        (" right of ", [0.0, 1.0]),
        (" in front of ", [1.0, 0.0]),
        (" behind ", [-1.0, 0.0]),
    ];
    for (m, dir) in relations {
        if let Some(i) = text.find(m) {
            let head = words(&text[..i]);
            let d = head.iter().find_map(|w| number_word(w)).unwrap_or(DEFAULT_OFFSET);
            let Some(o) = resolve_ref(&text[i + m.len()..], &visible) else { return Vec::new() };
            let p = o.pose.position;
            return vec![Pose::at(p[0] + d * dir[0], p[1] + d * dir[1], table_z)];
        }
    }
    match resolve_ref(&text, &visible) {
        Some(o) => vec![o.pose],
        None => Vec::new(),
    }
}

/// Plan-language source for a described helper, or None when the description
/// matches no known pattern. A leading `name(a, b):` fixes the signature.
pub fn resolve_function(dsc: &str) -> Option<String> {
    let (sig, body) = match dsc.split_once(':') {
        Some((s, b)) if s.contains('(') && s.trim_end().ends_with(')') => (Some(s.trim()), b),
        _ => (None, dsc),
    };
    let lower = body.to_lowercase();
    let (default_name, params, code): (&str, [&str; 2], &str) = if lower.contains("stack") {
        (
            "stack_objects",
            ["objs", "base"],
            "    below = {1}\n    for o in {0}:\n        put_first_on_second(o, below)\n        below = o\n    return below\n",
        )
    } else if lower.contains("uncover") || lower.contains("resting on") || lower.contains("clear") {
        (
            "move_uncovered",
            ["obj", "dest"],
            "    lo, hi = get_bbox({0})\n    table = (denormalize((0.0, 0.0, 0.0)), denormalize((1.0, 1.0, 1.0)))\n    for other in is_target_occupied({0}):\n        olo, ohi = get_bbox(other)\n        if olo[2] >= hi[2] - 0.002:\n            spot = get_random_free_pos(other, table)\n            if spot is not None:\n                put_first_on_second(other, spot)\n    return put_first_on_second({0}, {1})\n",
        )
    } else if lower.contains("move") || lower.contains("put") || lower.contains("place") {
        ("move_all", ["objs", "dest"], "    for o in {0}:\n        put_first_on_second(o, {1})\n    return len({0})\n")
    } else {
        return None;
    };
    let (name, args): (String, Vec<String>) = match sig {
        Some(s) => {
            let open = s.find('(')?;
            let name = s[..open].trim().to_string();
            let args: Vec<String> =
                s[open + 1..s.len() - 1].split(',').map(|a| a.trim().to_string()).filter(|a| !a.is_empty()).collect();
            if args.len() != 2 {
                return None;
            }
            (name, args)
        }
        None => (default_name.to_string(), params.iter().map(|p| p.to_string()).collect()),
    };
    let body = code.replace("{0}", &args[0]).replace("{1}", &args[1]);
    Some(format!("def {name}({}, {}):\n{body}", args[0], args[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Bounds, TABLE};

    fn rec(id: &str, kind: Kind, color: Color, size: Size, x: f64, y: f64) -> ObjectRecord {
        ObjectRecord {
            id: id.into(),
            kind,
            color,
            size,
            pose: Pose::at(x, y, 0.0),
            movable: matches!(kind, Kind::Block | Kind::Ball | Kind::Prop),
            supported_by: Some(TABLE.into()),
        }
    }

    fn scene() -> WorldState {
        let mut w = WorldState::new(Bounds::default(), 3);
        w.objects = vec![
            rec("red_block_1", Kind::Block, Color::Red, Size::Small, 0.4, -0.3),
            rec("red_block_2", Kind::Block, Color::Red, Size::Small, 0.5, 0.2),
            rec("blue_block_1", Kind::Block, Color::Blue, Size::Big, 0.6, 0.0),
            rec("green_bowl", Kind::Bowl, Color::Green, Size::Small, 0.35, 0.35),
            rec("red_bowl", Kind::Bowl, Color::Red, Size::Small, 0.65, -0.35),
            rec("ball", Kind::Ball, Color::Yellow, Size::Small, 0.5, -0.1),
            rec("green_zone", Kind::Zone, Color::Green, Size::Small, 0.7, 0.3),
        ];
        w
    }

    fn names(w: &WorldState) -> Vec<String> {
        w.objects.iter().map(|o| o.id.clone()).collect()
    }

    fn q(d: &str) -> Vec<String> {
        let w = scene();
        resolve_obj_name(d, &names(&w), &w)
    }

    #[test]
    fn color_size_kind_filters() {
        assert_eq!(q("all red blocks"), ["red_block_1", "red_block_2"]);
        assert_eq!(q("the big blocks"), ["blue_block_1"]);
        assert_eq!(q("the bowls"), ["green_bowl", "red_bowl"]);
        assert_eq!(q("the red objects"), ["red_block_1", "red_block_2", "red_bowl"]);
        assert_eq!(q("primary colored blocks"), ["blue_block_1", "red_block_1", "red_block_2"]);
        assert_eq!(q("purple dragons"), Vec::<String>::new());
        assert_eq!(q("the fluffy blocks"), Vec::<String>::new());
    }

    #[test]
    fn spatial_and_relational() {
        assert_eq!(q("the leftmost bowl"), ["red_bowl"]);
        assert_eq!(q("the rightmost block"), ["red_block_2"]);
        assert_eq!(q("the front-most block"), ["blue_block_1"]);
        assert_eq!(q("the blocks with the same color as red_bowl"), ["red_block_1", "red_block_2"]);
        assert_eq!(q("the blocks with the same color as the leftmost bowl"), ["red_block_1", "red_block_2"]);
        assert_eq!(q("the blocks except red_block_1"), ["blue_block_1", "red_block_2"]);
        assert_eq!(q("the blocks other than the red blocks"), ["blue_block_1"]);
    }

    #[test]
    fn subset_of_context() {
        let w = scene();
        let ctxt = vec!["red_block_2".to_string(), "green_bowl".to_string()];
        assert_eq!(resolve_obj_name("the red blocks", &ctxt, &w), ["red_block_2"]);
    }

    #[test]
    fn order_invariance() {
        let w = scene();
        let mut n = names(&w);
        let a = resolve_obj_name("the red blocks", &n, &w);
        n.reverse();
        assert_eq!(resolve_obj_name("the red blocks", &n, &w), a);
    }

    #[test]
    fn positions() {
        let w = scene();
        let c = resolve_position("the center of the table", &w);
        assert_eq!(c, vec![Pose::at(0.5, 0.0, 0.0)]);
        let z = resolve_position("the green zone", &w);
        assert_eq!(z, vec![Pose::at(0.7, 0.3, 0.0)]);
        let circle = resolve_position("a circle of radius 0.1 around the ball with 6 points", &w);
        assert_eq!(circle.len(), 6);
        for (k, p) in circle.iter().enumerate() {
            let (dx, dy) = (p.position[0] - 0.5, p.position[1] + 0.1);
            assert!(((dx * dx + dy * dy).sqrt() - 0.1).abs() < 1e-12);
            let ang = dy.atan2(dx).rem_euclid(TAU);
            let expect = (k as f64 * TAU / 6.0).rem_euclid(TAU);
            assert!((ang - expect).abs() < 1e-9 || (ang - expect).abs() > TAU - 1e-9);
        }
        assert_eq!(resolve_position("a 2x3 grid with spacing 0.05", &w).len(), 6);
        let line = resolve_position("a line of 4 points with spacing 0.05 starting at the ball", &w);
        assert_eq!(line.len(), 4);
        assert!((line[3].position[1] - 0.05).abs() < 1e-12);
        let left = resolve_position("0.2 to the left of the ball", &w);
        assert!((left[0].position[1] + 0.3).abs() < 1e-12);
        let n = resolve_position("normalized (0.0, 1.0)", &w);
        assert_eq!(n, vec![Pose::at(0.25, 0.5, 0.0)]);
        let corner = resolve_position("the front left corner", &w);
        assert!(corner[0].position[0] > 0.65 && corner[0].position[1] < -0.3);
        assert!(resolve_position("somewhere nice", &w).is_empty());
    }

    #[test]
    fn functions() {
        let src = resolve_function("stack_at(objs, pose): stack the given blocks at the given pose bottom-up").unwrap();
        assert!(src.starts_with("def stack_at(objs, pose):"));
        crate::planlang::parse_program(&src).unwrap();
        let src = resolve_function("move_uncovered(obj, dest): park every object resting on obj, then put obj on dest").unwrap();
        crate::planlang::parse_program(&src).unwrap();
        assert!(resolve_function("sing a song").is_none());
    }
}
