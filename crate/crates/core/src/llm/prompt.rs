use serde::{Deserialize, Serialize};

use crate::planlang::sha256_hex;
use crate::reporter::{render_feedback, FeedbackReport};
use crate::skills::render_api_docs;
use crate::tasks::TaskInstance;
use crate::world::{Bounds, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    ApiDocs,
    CoordinateFrame,
    GeneralRules,
    Examples,
}

impl SectionKind {
    pub const ORDER: [SectionKind; 4] =
        [SectionKind::ApiDocs, SectionKind::CoordinateFrame, SectionKind::GeneralRules, SectionKind::Examples];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSection {
    pub kind: SectionKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub rank: u32,
    pub name: String,
    pub instruction: String,
    /// Reasoning lines, rendered as comments above the code.
    pub commentary: Vec<String>,
    pub source: String,
}

impl Example {
    pub fn render(&self) -> String {
        let mut s = format!("Example {} ({}): {}\n```python\n", self.rank, self.name, self.instruction);
        for c in &self.commentary {
            s.push_str("# ");
            s.push_str(c);
            s.push('\n');
        }
        s.push_str(self.source.trim_end());
        s.push_str("\n```\n");
        s
    }

    /// The code block as the planner would emit it.
    pub fn program_text(&self) -> String {
        let mut s: String = self.commentary.iter().map(|c| format!("# {c}\n")).collect();
        s.push_str(&self.source);
        s
    }
}

/// Examples ordered by difficulty rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Example>", into = "Vec<Example>")]
pub struct ExampleLibrary(Vec<Example>);

impl TryFrom<Vec<Example>> for ExampleLibrary {
    type Error = String;

    fn try_from(v: Vec<Example>) -> Result<Self, String> {
        ExampleLibrary::new(v)
    }
}

impl From<ExampleLibrary> for Vec<Example> {
    fn from(l: ExampleLibrary) -> Self {
        l.0
    }
}

impl ExampleLibrary {
    pub fn new(examples: Vec<Example>) -> Result<Self, String> {
        if examples.is_empty() {
            return Err("example library is empty".into());
        }
        for w in examples.windows(2) {
            if w[1].rank < w[0].rank {
                return Err(format!("example `{}` (rank {}) follows rank {}", w[1].name, w[1].rank, w[0].rank));
            }
        }
        Ok(ExampleLibrary(examples))
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn examples(&self) -> &[Example] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub sections: Vec<PromptSection>,
    pub user_text: String,
    pub example_set: Vec<Example>,
}

impl PromptBundle {
    /// A bare two-message prompt, used by co-planners and the reporter.
    pub fn simple(system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        PromptBundle { system_text: system_text.into(), sections: Vec::new(), user_text: user_text.into(), example_set: Vec::new() }
    }

    /// System message: preamble followed by the sections in order.
    pub fn system_message(&self) -> String {
        let mut s = self.system_text.clone();
        for sec in &self.sections {
            s.push_str("\n\n");
            s.push_str(&sec.text);
        }
        s
    }

    pub fn digest(&self) -> String {
        sha256_hex(&format!("{}\n\u{0}\n{}", self.system_message(), self.user_text))
    }
}

const PLANNER_PREAMBLE: &str = "You control a robot arm above a table by writing short plan programs in a small \
Python-like language. Each program runs to completion before you see the outcome.";

pub fn coordinate_frame_text(bounds: &Bounds) -> String {
    format!(
        "Coordinate system:\n- front: x+\n- left: y-\n- top: z+\n\
         Positions are (x, y, z) in meters and yaw is in radians about z. The table surface is z = {:.2}; \
         it spans x in [{:.2}, {:.2}] and y in [{:.2}, {:.2}].",
        bounds.z[0], bounds.x[0], bounds.x[1], bounds.y[0], bounds.y[1]
    )
}

pub fn general_rules_text() -> String {
    [
        "Rules:",
        "- Reply with exactly one fenced code block containing the plan and nothing else inside it.",
        "- The language has no imports, classes, exceptions, lambdas or attribute access; grow lists with `xs = xs + [v]`.",
        "- Call only the APIs listed above and the basic builtins (len, range, min, max, abs, sorted, enumerate, zip, str, print and similar).",
        "- Refer to objects by the exact names from get_obj_names() or the scene listing.",
        "- put_first_on_second moves one object per call; an object with something on top of it cannot be picked, so clear it first.",
        "- Stacks are built bottom-up: place the lowest object first, then each following one onto the previous.",
        "- Objects covered by others are not listed until they are uncovered.",
        "- When feedback is given, the scene already reflects the previous attempt. Continue from the current state and fix only what the feedback names.",
        "- Delegate fuzzy sub-problems to parse_obj_name, parse_position and parse_function instead of guessing.",
        "- Keep every loop bounded.",
    ]
    .join("\n")
}

fn render_examples(lib: &ExampleLibrary) -> String {
    let mut s = String::from("Examples, from simple to complex:\n\n");
    for e in lib.examples() {
        s.push_str(&e.render());
        s.push('\n');
    }
    s.trim_end().to_string()
}

/// Deterministic planner prompt for one loop.
pub fn assemble_planner_prompt(
    inst: &TaskInstance,
    obs: &Observation,
    feedback: Option<&FeedbackReport>,
    library: &ExampleLibrary,
    bounds: &Bounds,
) -> PromptBundle {
    let sections = vec![
        PromptSection { kind: SectionKind::ApiDocs, text: render_api_docs().trim_end().to_string() },
        PromptSection { kind: SectionKind::CoordinateFrame, text: coordinate_frame_text(bounds) },
        PromptSection { kind: SectionKind::GeneralRules, text: general_rules_text() },
        PromptSection { kind: SectionKind::Examples, text: render_examples(library) },
    ];
    let mut user = format!("Task: {}\n\nVisible objects:\n{}", inst.instruction, obs.summary_text());
    if let Some(fb) = feedback {
        user.push_str("\n\nFeedback on the previous attempt:\n");
        user.push_str(&render_feedback(fb));
    }
    PromptBundle {
        system_text: PLANNER_PREAMBLE.to_string(),
        sections,
        user_text: user,
        example_set: library.examples().to_vec(),
    }
}

fn ex(rank: u32, name: &str, instruction: &str, commentary: &[&str], source: &str) -> Example {
    Example {
        rank,
        name: name.to_string(),
        instruction: instruction.to_string(),
        commentary: commentary.iter().map(|c| c.to_string()).collect(),
        source: source.trim_start_matches('\n').to_string(),
    }
}

const STACK_BLOCKS: &str = r#"
def stack_blocks(objs, pos):
    base = pos
    for obj in objs:
        put_first_on_second(obj, base)
        base = obj
"#;

/// The shipped examples, ranks 1 to 6.
pub fn builtin_library() -> ExampleLibrary {
    let by_color = format!(
        "{STACK_BLOCKS}
def stack_blocks_by_color(objs, colors):
    for color in colors:
        group = parse_obj_name(\"the \" + color + \" blocks\", objs)
        if len(group) > 0:
            stack_blocks(group, color + \"_zone\")

blocks = parse_obj_name(\"the blocks\", get_obj_names())
stack_blocks_by_color(blocks, [\"red\", \"blue\", \"green\"])
"
    );
    let examples = vec![
        ex(
            1,
            "stack_blocks",
            "Stack the three blocks on the red zone.",
            &[
                "The blocks go onto the zone one after another.",
                "A helper that stacks a list bottom-up at a position can be reused later.",
            ],
            &format!("{STACK_BLOCKS}\nblocks = parse_obj_name(\"the blocks\", get_obj_names())\nstack_blocks(blocks, \"red_zone\")\n"),
        ),
        ex(
            2,
            "stack_blocks_by_color",
            "Stack the blocks of each color in the zone of the same color.",
            &[
                "Group the blocks by color first.",
                "Each group is stacked with the helper from before, on the zone named after its color.",
            ],
            &by_color,
        ),
        ex(
            3,
            "stack_blocks_aligned",
            "Stack all blocks on the blue zone, turned to match the zone.",
            &[
                "Read the zone pose and its rotation.",
                "Each block goes to the zone center at the current stack height, with the zone's yaw.",
            ],
            r#"
x, y, z = get_obj_pos("blue_zone")
yaw = get_obj_rot("blue_zone")
blocks = parse_obj_name("the blocks", get_obj_names())
height = z
for b in blocks:
    lo, hi = get_bbox(b)
    put_first_on_second(b, (x, y, height + 0.001, yaw))
    height = height + (hi[2] - lo[2])
"#,
        ),
        ex(
            4,
            "match_bowls",
            "Put every block into the bowl of the same color.",
            &[
                "For each bowl, find the blocks sharing its color.",
                "Check the result of every move and report failures.",
            ],
            r#"
names = get_obj_names()
bowls = parse_obj_name("the bowls", names)
for bowl in bowls:
    for b in parse_obj_name("the blocks with the same color as " + bowl, names):
        result = put_first_on_second(b, bowl)
        if not result:
            print("could not move", b, result[1])
"#,
        ),
        ex(
            5,
            "circle_layout",
            "Arrange the blocks in a circle of radius 0.1 around the ball.",
            &[
                "Ask for as many evenly spaced poses as there are blocks.",
                "Move anything sitting on a target spot out of the way before placing.",
            ],
            r#"
blocks = parse_obj_name("the blocks", get_obj_names())
poses = parse_position("a circle of radius 0.1 around the ball with " + str(len(blocks)) + " points")
table = (denormalize((0.0, 0.0, 0.0)), denormalize((1.0, 1.0, 1.0)))
for i in range(min(len(blocks), len(poses))):
    for other in is_target_occupied(poses[i]):
        if other not in blocks:
            spot = get_random_free_pos(other, table)
            if spot is not None:
                put_first_on_second(other, spot)
    put_first_on_second(blocks[i], poses[i])
"#,
        ),
        ex(
            6,
            "recover_from_feedback",
            "Take every block out of the basket and put it into the green bowl. Feedback: a small block with red color (red_block_2) at (0.512, 0.100, 0.005) is not successfully put into the green bowl.",
            &[
                "The feedback names a block that was hidden during the last attempt; it is visible now.",
                "Only the named block still needs to move; everything else is done.",
                "A generated helper clears whatever covers it first.",
            ],
            r#"
move_uncovered = parse_function("move_uncovered(obj, dest): park every object resting on obj at a free table spot, then put obj on dest")
move_uncovered("red_block_2", "green_bowl")
"#,
        ),
    ];
    ExampleLibrary::new(examples).expect("builtin ranks are ordered")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planlang::parse_program;
    use crate::reporter::FeedbackItem;
    use crate::tasks::{instantiate, lookup};
    use crate::world::FrameTag;

    fn bundle(fb: Option<&FeedbackReport>) -> PromptBundle {
        let (inst, w) = instantiate(lookup("A").unwrap(), 1).unwrap();
        assemble_planner_prompt(&inst, &w.observe(FrameTag::Before), fb, &builtin_library(), &w.bounds)
    }

    #[test]
    fn sections_in_order_with_frame_lines() {
        let b = bundle(None);
        let kinds: Vec<_> = b.sections.iter().map(|s| s.kind).collect();
        assert_eq!(kinds, SectionKind::ORDER);
        let sys = b.system_message();
        let pos: Vec<usize> = ["Available APIs:", "Coordinate system:", "Rules:", "Examples, from simple"]
            .iter()
            .map(|m| sys.find(m).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        for line in ["front: x+", "left: y-", "top: z+"] {
            assert!(sys.contains(line));
        }
        assert!(!b.user_text.contains("Feedback"));
    }

    #[test]
    fn feedback_rendered_into_user_text() {
        let fb = FeedbackReport {
            success: false,
            items: vec![FeedbackItem {
                object: "a small block with red color (red_block_1)".into(),
                location: [0.5, 0.1, 0.0],
                target: "above other blocks".into(),
                action: "stack".into(),
            }],
        };
        let b = bundle(Some(&fb));
        assert!(b.user_text.contains("a small block with red color (red_block_1) at (0.500, 0.100, 0.000) is not successfully stacked above other blocks."));
        assert_ne!(b.digest(), bundle(None).digest());
    }

    #[test]
    fn assembly_is_deterministic() {
        assert_eq!(bundle(None), bundle(None));
        assert_eq!(bundle(None).digest(), bundle(None).digest());
    }

    #[test]
    fn library_progression_and_parsing() {
        let lib = builtin_library();
        let names: Vec<&str> = lib.examples().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(&names[..3], ["stack_blocks", "stack_blocks_by_color", "stack_blocks_aligned"]);
        let ranks: Vec<u32> = lib.examples().iter().map(|e| e.rank).collect();
        assert_eq!(ranks, [1, 2, 3, 4, 5, 6]);
        for e in lib.examples() {
            assert!(!e.commentary.is_empty());
            parse_program(&e.program_text()).unwrap_or_else(|err| panic!("{}: {err}", e.name));
        }
    }

    #[test]
    fn out_of_order_library_rejected() {
        let mut v: Vec<Example> = builtin_library().into();
        v.swap(0, 3);
        assert!(ExampleLibrary::new(v.clone()).is_err());
        let json = serde_json::to_string(&v).unwrap();
        assert!(ExampleLibrary::from_json(&json).is_err());
        assert!(ExampleLibrary::new(vec![]).is_err());
        let ok = serde_json::to_string(&builtin_library()).unwrap();
        assert_eq!(ExampleLibrary::from_json(&ok).unwrap(), builtin_library());
    }
}
