//! Structured feedback: the report type, its sentence rendering, the fenced
//! wire block, tolerant parsing and the ground-truth mock reporter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tasks::{evaluate, EvalResult, TaskError, TaskInstance};
use crate::world::{FrameTag, Observation, WorldState};

pub const FEEDBACK_SCHEMA: &str = "feedback/v1";
pub const FEEDBACK_FENCE: &str = "feedback";
pub const SUCCESS_TEXT: &str = "Succeed.";
pub const FAILURE_TEXT: &str = "Failed.";

/// Base verb and the participle used in sentences. Longer verbs first so
/// prefix matching is unambiguous.
pub const ACTIONS: [(&str, &str); 8] = [
    ("put into", "put into"),
    ("arrange", "arranged"),
    ("remove", "removed"),
    ("stack", "stacked"),
    ("place", "placed"),
    ("move", "moved"),
    ("fill", "filled"),
    ("put", "put"),
];

const LOCATION_MARKER: &str = " at (";
const NEGATION: &str = " is not successfully ";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error("feedback parse error: {0}")]
    Parse(String),
    #[error("invalid feedback: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub object: String,
    pub location: [f64; 3],
    pub target: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub success: bool,
    pub items: Vec<FeedbackItem>,
}

#[derive(Serialize, Deserialize)]
struct Wire {
    schema: String,
    success: bool,
    #[serde(default)]
    items: Vec<FeedbackItem>,
}

pub fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn participle(action: &str) -> Option<&'static str> {
    ACTIONS.iter().find(|(a, _)| *a == action).map(|(_, p)| *p)
}

fn single_line(s: &str) -> bool {
    !s.is_empty() && s.trim() == s && !s.contains('\n') && !s.contains('\r')
}

impl FeedbackReport {
    pub fn success() -> Self {
        FeedbackReport { success: true, items: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), FeedbackError> {
        if self.success && !self.items.is_empty() {
            return Err(FeedbackError::Invalid("a successful report carries no items".into()));
        }
        for (i, it) in self.items.iter().enumerate() {
            let bad = |what: &str| FeedbackError::Invalid(format!("item {i}: {what}"));
            if !single_line(&it.object) || it.object.contains(LOCATION_MARKER) {
                return Err(bad("object must be a non-empty single line without a location marker"));
            }
            if !single_line(&it.target) {
                return Err(bad("target must be a non-empty single line"));
            }
            if participle(&it.action).is_none() {
                return Err(bad(&format!("unknown action `{}`", it.action)));
            }
            if it.location.iter().any(|v| !v.is_finite() || (round3(*v) - v).abs() > 1e-12) {
                return Err(bad("location must be finite and in millimetres"));
            }
        }
        Ok(())
    }
}

fn fmt3(v: f64) -> String {
    // Avoid printing "-0.000".
    let r = round3(v);
    format!("{:.3}", if r == 0.0 { 0.0 } else { r })
}

pub fn render_item(it: &FeedbackItem) -> String {
    let l = it.location;
    format!(
        "{}{LOCATION_MARKER}{}, {}, {}){NEGATION}{} {}.",
        it.object,
        fmt3(l[0]),
        fmt3(l[1]),
        fmt3(l[2]),
        participle(&it.action).unwrap_or(&it.action),
        it.target
    )
}

/// One sentence per item, or the bare success / failure marker.
pub fn render_feedback(r: &FeedbackReport) -> String {
    if r.success {
        return SUCCESS_TEXT.to_string();
    }
    if r.items.is_empty() {
        return FAILURE_TEXT.to_string();
    }
    r.items.iter().map(render_item).collect::<Vec<_>>().join("\n")
}

/// The fenced wire block.
pub fn render_structured(r: &FeedbackReport) -> String {
    let wire = Wire { schema: FEEDBACK_SCHEMA.into(), success: r.success, items: r.items.clone() };
    let body = serde_json::to_string_pretty(&wire).expect("plain data serializes");
    format!("```{FEEDBACK_FENCE}\n{body}\n```")
}

fn fenced_block(text: &str) -> Option<&str> {
    let open = format!("```{FEEDBACK_FENCE}");
    let start = text.find(&open)? + open.len();
    let rest = &text[start..];
    let body_start = rest.find('\n')? + 1;
    let body = &rest[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

fn parse_sentence(line: &str) -> Option<FeedbackItem> {
    let body = line.strip_suffix('.')?;
    let at = body.find(LOCATION_MARKER)?;
    let object = &body[..at];
    let rest = &body[at + LOCATION_MARKER.len()..];
    let close = rest.find(')')?;
    let nums: Vec<f64> = rest[..close].split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().ok()?;
    let [x, y, z] = nums.as_slice() else { return None };
    let tail = rest[close + 1..].strip_prefix(NEGATION)?;
    let (action, target) = ACTIONS.iter().find_map(|(a, p)| {
        let t = tail.strip_prefix(p)?.strip_prefix(' ')?;
        Some((*a, t))
    })?;
    Some(FeedbackItem { object: object.to_string(), location: [*x, *y, *z], target: target.to_string(), action: action.to_string() })
}

/// Accepts a fenced `feedback` block (preferred) or the sentence form.
pub fn parse_feedback(text: &str) -> Result<FeedbackReport, FeedbackError> {
    if let Some(body) = fenced_block(text) {
        let wire: Wire = serde_json::from_str(body).map_err(|e| FeedbackError::Parse(format!("feedback block: {e}")))?;
        if wire.schema != FEEDBACK_SCHEMA {
            return Err(FeedbackError::Parse(format!("unsupported schema `{}`", wire.schema)));
        }
        let mut items = wire.items;
        for it in &mut items {
            // Tolerate participles where base verbs are expected.
            if let Some((a, _)) = ACTIONS.iter().find(|(_, p)| *p == it.action) {
                it.action = a.to_string();
            }
            it.location = it.location.map(round3);
        }
        let r = FeedbackReport { success: wire.success, items };
        r.validate()?;
        return Ok(r);
    }
    let mut items = Vec::new();
    let mut success = false;
    let mut failure = false;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line == SUCCESS_TEXT {
            success = true;
        } else if line == FAILURE_TEXT {
            failure = true;
        } else if let Some(it) = parse_sentence(line) {
            items.push(it);
        }
    }
    if !success && !failure && items.is_empty() {
        return Err(FeedbackError::Parse("no feedback block or feedback sentence found".into()));
    }
    if success && (failure || !items.is_empty()) {
        return Err(FeedbackError::Invalid("success marker mixed with failure content".into()));
    }
    let r = FeedbackReport { success, items };
    r.validate()?;
    Ok(r)
}

/// Maps an evaluation onto feedback, naming only objects visible in `after`.
pub fn report_from_eval(eval: &EvalResult, after: &Observation) -> FeedbackReport {
    if eval.success {
        return FeedbackReport::success();
    }
    let items = eval
        .diff
        .iter()
        .filter_map(|d| {
            let o = after.get(&d.object)?;
            Some(FeedbackItem {
                object: o.describe(),
                location: o.pose.position.map(round3),
                target: d.target.clone(),
                action: d.action.clone(),
            })
        })
        .collect();
    FeedbackReport { success: false, items }
}

/// Ground-truth reporter: the evaluator's verdict and diff, as feedback.
pub fn mock_report(inst: &TaskInstance, world: &WorldState) -> Result<FeedbackReport, TaskError> {
    let eval = evaluate(inst, world)?;
    Ok(report_from_eval(&eval, &world.observe(FrameTag::After)))
}

/// Prompt body asking a backend to judge the loop outcome.
pub fn reporter_request(goal: &str, before: &Observation, after: &Observation) -> String {
    format!(
        "Task: {goal}\n\nScene before execution:\n{}\n\nScene after execution:\n{}\n\n\
         Decide whether the task is complete. Answer with one fenced block tagged `{FEEDBACK_FENCE}` holding JSON \
         {{\"schema\": \"{FEEDBACK_SCHEMA}\", \"success\": bool, \"items\": [{{\"object\", \"location\": [x, y, z], \
         \"target\", \"action\"}}]}}. Use one item per object that is not where the task needs it; actions are one of: {}.",
        before.summary_text(),
        after.summary_text(),
        ACTIONS.iter().map(|(a, _)| *a).collect::<Vec<_>>().join(", ")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{instantiate, lookup};

    fn item() -> FeedbackItem {
        FeedbackItem {
            object: "a small block with red color (red_block_1)".into(),
            location: [0.512, -0.103, 0.0],
            target: "above other blocks".into(),
            action: "stack".into(),
        }
    }

    #[test]
    fn sentence_shape() {
        let r = FeedbackReport { success: false, items: vec![item()] };
        assert_eq!(
            render_feedback(&r),
            "a small block with red color (red_block_1) at (0.512, -0.103, 0.000) is not successfully stacked above other blocks."
        );
        assert_eq!(parse_feedback(&render_feedback(&r)).unwrap(), r);
        assert_eq!(parse_feedback(&render_structured(&r)).unwrap(), r);
    }

    #[test]
    fn success_and_failure_markers() {
        assert_eq!(render_feedback(&FeedbackReport::success()), "Succeed.");
        assert_eq!(parse_feedback("Red block is on the top. Succeed.\nSucceed.").unwrap(), FeedbackReport::success());
        let failed = FeedbackReport { success: false, items: vec![] };
        assert_eq!(parse_feedback(&render_feedback(&failed)).unwrap(), failed);
        assert!(parse_feedback("the blocks look fine to me").is_err());
    }

    #[test]
    fn two_items_keep_order() {
        let mut b = item();
        b.object = "a big block with blue color (blue_big_block_1)".into();
        b.action = "put into".into();
        b.target = "the green bowl".into();
        let r = FeedbackReport { success: false, items: vec![item(), b] };
        let text = render_feedback(&r);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(parse_feedback(&text).unwrap(), r);
    }

    #[test]
    fn invalid_reports_rejected() {
        let mut r = FeedbackReport { success: true, items: vec![item()] };
        assert!(r.validate().is_err());
        r.success = false;
        r.items[0].action = "teleport".into();
        assert!(r.validate().is_err());
        let wrong_schema = "```feedback\n{\"schema\": \"feedback/v0\", \"success\": true}\n```";
        assert!(parse_feedback(wrong_schema).is_err());
    }

    #[test]
    fn fenced_block_tolerates_participles() {
        let text = "Here is my verdict.\n```feedback\n{\"schema\": \"feedback/v1\", \"success\": false, \"items\": [\
                    {\"object\": \"a block\", \"location\": [0.1, 0.2, 0.0004], \"target\": \"in the red zone\", \"action\": \"stacked\"}]}\n```";
        let r = parse_feedback(text).unwrap();
        assert_eq!(r.items[0].action, "stack");
        assert_eq!(r.items[0].location, [0.1, 0.2, 0.0]);
    }

    #[test]
    fn mock_report_matches_evaluator() {
        for t in crate::tasks::task_registry() {
            let (inst, world) = instantiate(t, 3).unwrap();
            let digest = world.digest();
            let r = mock_report(&inst, &world).unwrap();
            assert_eq!(r.success, evaluate(&inst, &world).unwrap().success);
            assert_eq!(world.digest(), digest);
            r.validate().unwrap();
            let visible = world.observe(FrameTag::After);
            for it in &r.items {
                assert!(visible.visible.iter().any(|o| o.describe() == it.object), "{}", it.object);
            }
        }
        let (inst, world) = instantiate(lookup("A").unwrap(), 0).unwrap();
        assert!(!mock_report(&inst, &world).unwrap().items.is_empty());
    }
}
