//! Host API bound into plan programs.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::planlang::ast::FunctionDef;
use crate::planlang::{self, Host, HostError, Value};
use crate::sim::{self, Area, PrimitiveCall, PrimitiveLogEntry, SimError, StepResult, Target};
use crate::world::{self, Aabb, FrameTag, Observation, Pose, WorldState, BIG_BLOCK_EDGE, SMALL_BLOCK_EDGE};

pub const API_NAMES: [&str; 8] = [
    "get_obj_names",
    "get_obj_pos",
    "get_obj_rot",
    "get_bbox",
    "denormalize",
    "is_target_occupied",
    "get_random_free_pos",
    "put_first_on_second",
];

pub const LMP_NAMES: [&str; 4] = ["parse_obj_name", "parse_position", "parse_function", "parse_completion"];

pub const PRIMITIVE: &str = "put_first_on_second";

/// Footprint edge assumed by `get_random_free_pos` when no size is given.
pub const FREE_POS_DEFAULT_EDGE: f64 = BIG_BLOCK_EDGE;

const API_DOCS: [(&str, &str); 8] = [
    ("get_obj_names", "get_obj_names() -> list of str. Names of every object currently visible on the table."),
    ("get_obj_pos", "get_obj_pos(obj) -> (x, y, z). Position of a visible object; z is its resting height. Returns None if the object is not visible."),
    ("get_obj_rot", "get_obj_rot(obj) -> yaw. Rotation of a visible object about the z axis, in radians within [-pi, pi). Returns None if the object is not visible."),
    ("get_bbox", "get_bbox(obj) -> ((xmin, ymin, zmin), (xmax, ymax, zmax)). Axis-aligned bounding box of a visible object, to aid spatial reasoning. Returns None if the object is not visible."),
    ("denormalize", "denormalize(pos) -> (x, y, z). Maps normalized table coordinates in [0, 1] (two or three values) to metric coordinates."),
    ("is_target_occupied", "is_target_occupied(targ) -> list of str. Movable objects occupying the target, which is an object name or a position/pose; an empty list means it is free."),
    ("get_random_free_pos", "get_random_free_pos(targ, area, size=None) -> pose. A random pose inside area (a zone name or a bounding box) that does not occupy targ and touches no other object. size is an optional (dx, dy) footprint. Returns None if no free spot is found."),
    ("put_first_on_second", "put_first_on_second(obj1, obj2) -> result. Picks obj1 and places it on top of obj2, which is an object name, a position (x, y, z) or a pose (x, y, z, yaw). The result is truthy on success; result[1] names the failure reason otherwise."),
];

const LMP_DOCS: [(&str, &str); 4] = [
    ("parse_obj_name", "parse_obj_name(dsc, ctxt) -> list of str. Filters the names in ctxt down to the objects matching the description dsc."),
    ("parse_position", "parse_position(dsc) -> list of poses. Converts a description of one or more locations into poses."),
    ("parse_function", "parse_function(dsc) -> function. Writes and defines a new helper from a description of its behaviour; it stays callable by name for the rest of the episode."),
    ("parse_completion", "parse_completion(dsc, ctxt) -> feedback. Judges whether the goal dsc is met given before/after scene summaries in ctxt."),
];

/// Every binding name with its documentation line.
pub fn api_docs() -> Vec<(&'static str, &'static str)> {
    API_DOCS.iter().chain(LMP_DOCS.iter()).copied().collect()
}

/// The "available APIs" prompt section.
pub fn render_api_docs() -> String {
    let mut out = String::from("Available APIs:\n");
    for (_, doc) in api_docs() {
        out.push_str("- ");
        out.push_str(doc);
        out.push('\n');
    }
    out
}

/// State visible to a co-planner call.
pub struct LmpContext<'w> {
    /// The live episode state; co-planners only read it.
    pub world: &'w WorldState,
    /// Primitives the running program has issued before this call.
    pub primitives_issued: usize,
}

/// Answers co-planner calls on behalf of a plan program.
pub trait LmpDispatch {
    fn call_lmp(&mut self, name: &str, args: &[Value], ctx: &LmpContext) -> Result<LmpReply, HostError>;
}

pub enum LmpReply {
    Value(Value),
    /// A generated helper to register under its own name.
    Function(Rc<FunctionDef>),
}

/// Episode-local binding of the API to one world.
pub struct ApiEnv<'a> {
    pub world: WorldState,
    pub log: Vec<PrimitiveLogEntry>,
    rng: ChaCha8Rng,
    functions: BTreeMap<String, Rc<FunctionDef>>,
    fault_at: Option<usize>,
    lmp: Option<&'a mut dyn LmpDispatch>,
}

impl<'a> ApiEnv<'a> {
    pub fn new(world: WorldState, seed: u64) -> Self {
        ApiEnv {
            world,
            log: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d),
            functions: BTreeMap::new(),
            fault_at: None,
            lmp: None,
        }
    }

    /// The primitive with this episode-wide index becomes a no-op reported as failed.
    pub fn with_fault(mut self, index: Option<usize>) -> Self {
        self.fault_at = index;
        self
    }

    pub fn set_lmp(&mut self, lmp: Option<&'a mut dyn LmpDispatch>) {
        self.lmp = lmp;
    }

    pub fn binding_names() -> BTreeSet<&'static str> {
        API_NAMES.iter().chain(LMP_NAMES.iter()).copied().collect()
    }

    pub fn registered_functions(&self) -> impl Iterator<Item = (&String, &Rc<FunctionDef>)> {
        self.functions.iter()
    }

    pub fn register_function(&mut self, name: &str, def: Rc<FunctionDef>) -> Result<(), HostError> {
        planlang::register_function(self, name, def)
    }

    pub fn observation(&self) -> Observation {
        self.world.observe(FrameTag::Before)
    }

    fn visible(&self, id: &str) -> bool {
        self.world.get(id).is_some() && !self.world.occluded().contains(id)
    }

    fn put(&mut self, obj: &str, target: Target) -> Result<StepResult, HostError> {
        if self.world.get(obj).is_none() {
            return Err(HostError::runtime(format!("unknown object `{obj}`")));
        }
        if let Target::Object(t) = &target {
            if self.world.get(t).is_none() {
                return Err(HostError::runtime(format!("unknown object `{t}`")));
            }
        }
        let index = self.log.len();
        let injected = self.fault_at == Some(index);
        let result = if injected {
            let pose = self.world.get(obj).map(|o| o.pose).unwrap_or_else(|| Pose::at(0.0, 0.0, 0.0));
            StepResult { ok: false, moved_id: obj.to_string(), final_pose: pose, failure_reason: None }
        } else {
            sim::pick_place(&mut self.world, obj, &target).map_err(|e| HostError::runtime(e.to_string()))?
        };
        self.log.push(PrimitiveLogEntry {
            index,
            primitive: PrimitiveCall { name: PRIMITIVE.to_string(), obj: obj.to_string(), target },
            result: result.clone(),
            world_digest: self.world.digest(),
            injected_fault: injected,
        });
        Ok(result)
    }
}

fn arg<'v>(args: &'v [Value], kwargs: &'v [(String, Value)], i: usize, name: &str) -> Option<&'v Value> {
    args.get(i).or_else(|| kwargs.iter().find(|(k, _)| k == name).map(|(_, v)| v))
}

fn need<'v>(args: &'v [Value], kwargs: &'v [(String, Value)], i: usize, name: &str, f: &str) -> Result<&'v Value, HostError> {
    arg(args, kwargs, i, name).ok_or_else(|| HostError::runtime(format!("{f}() missing argument `{name}`")))
}

fn id_arg<'v>(v: &'v Value, f: &str) -> Result<&'v str, HostError> {
    v.as_str().ok_or_else(|| HostError::runtime(format!("{f}() expects an object name, got {}", v.type_name())))
}

fn vec3(v: [f64; 3]) -> Value {
    Value::tuple(v.iter().map(|x| Value::Number(*x)).collect())
}

/// Object name, 3-vector position or 4-vector/pose.
pub fn value_to_target(v: &Value) -> Result<Target, HostError> {
    match v {
        Value::Str(s) => Ok(Target::Object(s.to_string())),
        Value::Pose(p) => Ok(Target::Pose(*p)),
        other => match other.numbers() {
            Some(n) if n.len() == 3 => Ok(Target::Position([n[0], n[1], n[2]])),
            Some(n) if n.len() == 4 => Ok(Target::Pose(Pose::new([n[0], n[1], n[2]], n[3]))),
            _ => Err(HostError::runtime(format!(
                "expected an object name, a position (x, y, z) or a pose (x, y, z, yaw), got {}",
                other.repr()
            ))),
        },
    }
}

fn value_to_aabb(v: &Value) -> Option<Aabb> {
    match v {
        Value::Aabb(b) => Some(*b),
        other => {
            let items = other.items()?;
            if items.len() != 2 {
                return None;
            }
            let lo = items[0].numbers()?;
            let hi = items[1].numbers()?;
            (lo.len() == 3 && hi.len() == 3).then(|| Aabb { min: [lo[0], lo[1], lo[2]], max: [hi[0], hi[1], hi[2]] })
        }
    }
}

impl Host for ApiEnv<'_> {
    fn has_function(&self, name: &str) -> bool {
        API_NAMES.contains(&name) || LMP_NAMES.contains(&name)
    }

    fn is_primitive(&self, name: &str) -> bool {
        name == PRIMITIVE
    }

    fn registered(&self, name: &str) -> Option<Rc<FunctionDef>> {
        self.functions.get(name).cloned()
    }

    fn register(&mut self, name: &str, def: Rc<FunctionDef>) -> Result<(), HostError> {
        self.functions.insert(name.to_string(), def);
        Ok(())
    }

    fn call(&mut self, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> Result<Value, HostError> {
        let (a, k) = (args.as_slice(), kwargs.as_slice());
        match name {
            "get_obj_names" => {
                let hidden = self.world.occluded();
                let mut names: Vec<String> =
                    self.world.objects.iter().filter(|o| !hidden.contains(&o.id)).map(|o| o.id.clone()).collect();
                names.sort();
                Ok(Value::list(names.iter().map(|n| Value::str(n)).collect()))
            }
            "get_obj_pos" | "get_obj_rot" | "get_bbox" => {
                let id = id_arg(need(a, k, 0, "obj", name)?, name)?;
                if !self.visible(id) {
                    return Ok(Value::None);
                }
                let o = self.world.get(id).expect("visible implies present");
                Ok(match name {
                    "get_obj_pos" => vec3(o.pose.position),
                    "get_obj_rot" => Value::Number(o.pose.yaw),
                    _ => Value::Aabb(self.world.bbox_of(id).map_err(|e| HostError::runtime(e.to_string()))?),
                })
            }
            "denormalize" => {
                let v = need(a, k, 0, "pos", name)?;
                let nums = if a.len() >= 2 {
                    a.iter().map(|x| x.as_number()).collect::<Option<Vec<f64>>>()
                } else {
                    v.numbers()
                };
                let nums = nums.ok_or_else(|| HostError::runtime("denormalize() expects numbers"))?;
                let p = world::denormalize(&self.world.bounds, &nums).map_err(|e| HostError::runtime(e.to_string()))?;
                Ok(vec3(p))
            }
            "is_target_occupied" => {
                let target = value_to_target(need(a, k, 0, "targ", name)?)?;
                if let Target::Object(t) = &target {
                    if !self.visible(t) {
                        return Ok(Value::None);
                    }
                }
                let fp = Aabb::footprint(SMALL_BLOCK_EDGE, SMALL_BLOCK_EDGE, SMALL_BLOCK_EDGE);
                let ids = sim::is_occupied(&self.world, &target, &fp).map_err(|e| HostError::runtime(e.to_string()))?;
                let hidden = self.world.occluded();
                Ok(Value::list(ids.iter().filter(|i| !hidden.contains(*i)).map(|i| Value::str(i)).collect()))
            }
            "get_random_free_pos" => {
                let avoid = value_to_target(need(a, k, 0, "targ", name)?)?;
                if let Target::Object(t) = &avoid {
                    if !self.visible(t) {
                        return Ok(Value::None);
                    }
                }
                let area_v = need(a, k, 1, "area", name)?;
                let area = match area_v {
                    Value::Str(id) => {
                        if !self.visible(id) {
                            return Ok(Value::None);
                        }
                        Area::Object(id.to_string())
                    }
                    other => Area::Box(value_to_aabb(other).ok_or_else(|| {
                        HostError::runtime("get_random_free_pos() area must be a zone name or a bounding box")
                    })?),
                };
                let size = match arg(a, k, 2, "size") {
                    None | Some(Value::None) => [FREE_POS_DEFAULT_EDGE; 2],
                    Some(v) => match v.numbers() {
                        Some(n) if n.len() == 2 && n.iter().all(|x| *x > 0.0) => [n[0], n[1]],
                        _ => return Err(HostError::runtime("get_random_free_pos() size must be (dx, dy)")),
                    },
                };
                match sim::free_pos(&self.world, &avoid, &area, size, &mut self.rng) {
                    Ok(p) => Ok(Value::Pose(p)),
                    Err(SimError::Saturated(_)) => Ok(Value::None),
                    Err(e) => Err(HostError::runtime(e.to_string())),
                }
            }
            "put_first_on_second" => {
                let obj = id_arg(need(a, k, 0, "obj1", name)?, name)?.to_string();
                let target = value_to_target(need(a, k, 1, "obj2", name)?)?;
                let r = self.put(&obj, target)?;
                Ok(Value::Step(Rc::new(r)))
            }
            lmp if LMP_NAMES.contains(&lmp) => {
                let Some(dispatch) = self.lmp.as_deref_mut() else {
                    return Err(HostError::runtime(format!("{lmp}() is not available in this run")));
                };
                let mut all = a.to_vec();
                all.extend(k.iter().map(|(_, v)| v.clone()));
                match dispatch.call_lmp(lmp, &all, &LmpContext { world: &self.world, primitives_issued: self.log.len() })? {
                    LmpReply::Value(v) => Ok(v),
                    LmpReply::Function(def) => {
                        let fname = def.name.clone();
                        if self.functions.get(&fname).is_some_and(|d| **d == *def) {
                            return Ok(Value::PlanFn(def));
                        }
                        self.register_function(&fname, def.clone())?;
                        Ok(Value::PlanFn(def))
                    }
                }
            }
            other => Err(HostError::runtime(format!("unknown API `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planlang::{execute, parse_program, Budget, ExecStatus};
    use crate::world::{Bounds, Color, Kind, ObjectRecord, Size, TABLE};

    fn obj(id: &str, kind: Kind, color: Color, x: f64, y: f64, z: f64, sup: &str) -> ObjectRecord {
        ObjectRecord {
            id: id.into(),
            kind,
            color,
            size: Size::Small,
            pose: Pose::at(x, y, z),
            movable: matches!(kind, Kind::Block | Kind::Ball | Kind::Prop),
            supported_by: Some(sup.into()),
        }
    }

    fn scene() -> WorldState {
        let mut w = WorldState::new(Bounds::default(), 7);
        w.objects = vec![
            obj("red_block", Kind::Block, Color::Red, 0.4, -0.2, 0.0, TABLE),
            obj("blue_block", Kind::Block, Color::Blue, 0.5, 0.0, 0.0, TABLE),
            obj("green_zone", Kind::Zone, Color::Green, 0.6, 0.25, 0.0, TABLE),
        ];
        w
    }

    fn run(env: &mut ApiEnv, src: &str) -> planlang::ExecOutcome {
        execute(&parse_program(src).unwrap(), env, &Budget::default())
    }

    #[test]
    fn binding_names_are_exact() {
        let expected: BTreeSet<&str> = [
            "get_obj_names", "get_obj_pos", "get_obj_rot", "get_bbox", "denormalize", "is_target_occupied",
            "get_random_free_pos", "put_first_on_second", "parse_obj_name", "parse_position", "parse_function",
            "parse_completion",
        ]
        .into_iter()
        .collect();
        assert_eq!(ApiEnv::binding_names(), expected);
        let documented: BTreeSet<&str> = api_docs().into_iter().map(|(n, _)| n).collect();
        assert_eq!(documented, expected);
    }

    #[test]
    fn docs_mention_each_binding_once() {
        let text = render_api_docs();
        for name in ApiEnv::binding_names() {
            let count = text
                .match_indices(name)
                .filter(|(i, _)| {
                    let before = text[..*i].chars().next_back();
                    let after = text[i + name.len()..].chars().next();
                    let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
                    !word(before) && !word(after)
                })
                .count();
            assert_eq!(count, 1, "{name}");
        }
    }

    #[test]
    fn stack_updates_support_chain_and_logs() {
        let mut env = ApiEnv::new(scene(), 1);
        let out = run(&mut env, "r = put_first_on_second('red_block', 'blue_block')\nok = r[0]\n");
        assert_eq!(out.status, ExecStatus::Completed);
        assert_eq!(env.log.len(), 1);
        assert!(env.log[0].result.ok);
        assert_eq!(env.world.get("red_block").unwrap().supported_by.as_deref(), Some("blue_block"));
    }

    #[test]
    fn occupied_target_forwarded() {
        let mut env = ApiEnv::new(scene(), 1);
        let p = env.world.get("blue_block").unwrap().pose.position;
        let src = format!("r = put_first_on_second('red_block', ({}, {}, 0))\n", p[0], p[1]);
        run(&mut env, &src);
        assert_eq!(env.log.len(), 1);
        assert_eq!(env.log[0].result.failure_reason.map(|r| r.name()), Some("target_occupied"));
    }

    #[test]
    fn read_apis_are_pure() {
        let mut env = ApiEnv::new(scene(), 1);
        let before = env.world.digest();
        let src = "n = get_obj_names()\nfor o in n:\n    p = get_obj_pos(o)\n    r = get_obj_rot(o)\n    b = get_bbox(o)\n    q = is_target_occupied(o)\nf = get_random_free_pos('green_zone', ((0.25, -0.5, 0), (0.75, 0.5, 0)))\nd = denormalize((0.5, 0.5))\n";
        assert_eq!(run(&mut env, src).status, ExecStatus::Completed);
        assert_eq!(env.world.digest(), before);
        assert!(env.log.is_empty());
    }

    #[test]
    fn zone_occupancy_and_hidden_lookup() {
        let mut w = scene();
        w.objects.push(obj("towel", Kind::Prop, Color::Brown, 0.5, 0.0, 0.04, "blue_block"));
        let mut env = ApiEnv::new(w, 1);
        let src = "names = get_obj_names()\nhidden = get_obj_pos('blue_block')\nfree = is_target_occupied('green_zone')\n\
                   if hidden is not None or 'blue_block' in names or free != []:\n    put_first_on_second('red_block', 'green_zone')\n";
        assert_eq!(run(&mut env, src).status, ExecStatus::Completed);
        assert!(env.log.is_empty());
    }

    #[test]
    fn injected_fault_is_logged_noop() {
        let mut env = ApiEnv::new(scene(), 1).with_fault(Some(0));
        let before = env.world.digest();
        run(&mut env, "put_first_on_second('red_block', 'green_zone')\nput_first_on_second('blue_block', 'green_zone')\n");
        assert_eq!(env.log.len(), 2);
        assert!(env.log[0].injected_fault && !env.log[0].result.ok);
        assert_eq!(env.log[0].world_digest, before);
        assert!(env.log[1].result.ok);
    }

    #[test]
    fn registration_rejects_api_names() {
        let p = parse_program("def f():\n    pass\n").unwrap();
        let mut env = ApiEnv::new(scene(), 1);
        let def = p.functions()[0].clone();
        assert!(env.register_function("put_first_on_second", def.clone()).is_err());
        assert!(env.register_function("parse_position", def.clone()).is_err());
        assert!(env.register_function("helper", def).is_ok());
    }
}
