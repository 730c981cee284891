//! Rendering of LLM requests and parsing of their framing.
//!
//! Every request starts with a sentinel line `#TASK <kind> v1`. Content is
//! carried in blocks: a header line `#NAME args...`, body lines, and a closing
//! `#END` line. Body lines that could be mistaken for a header (a `#` followed
//! by an upper-case word) or that start with a backslash are prefixed with one
//! backslash; [`parse_request`] strips it again.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{EditDirection, FilterPrompt, Verdict};

pub const FRAMING_VERSION: &str = "v1";

/// Largest classification batch a single request may carry.
pub const MAX_BATCH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classify,
    Reflect,
    Propose,
    Summarize,
    Draft,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Classify => "classify",
            TaskKind::Reflect => "reflect",
            TaskKind::Propose => "propose",
            TaskKind::Summarize => "summarize",
            TaskKind::Draft => "draft",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "classify" => TaskKind::Classify,
            "reflect" => TaskKind::Reflect,
            "propose" => TaskKind::Propose,
            "summarize" => TaskKind::Summarize,
            "draft" => TaskKind::Draft,
            _ => return None,
        })
    }

    /// Classification is answered deterministically; the rest are generation tasks.
    pub fn is_generation(self) -> bool {
        self != TaskKind::Classify
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReflectMode {
    /// Why did the filter get this labeled comment wrong?
    Mistake,
    /// Why did the filter reach this verdict?
    Explain,
    /// Critique of the whole prompt over a minibatch of mistakes.
    Gradient,
    /// A one-sentence user-facing rationale the user can edit.
    Rationale,
}

impl ReflectMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReflectMode::Mistake => "mistake",
            ReflectMode::Explain => "explain",
            ReflectMode::Gradient => "gradient",
            ReflectMode::Rationale => "rationale",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mistake" => ReflectMode::Mistake,
            "explain" => ReflectMode::Explain,
            "gradient" => ReflectMode::Gradient,
            "rationale" => ReflectMode::Rationale,
            _ => return None,
        })
    }
}

/// A comment inside a reflect or propose request, with whatever verdicts apply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskItem {
    pub text: String,
    pub predicted: Option<Verdict>,
    pub gold: Option<Verdict>,
}

impl TaskItem {
    pub fn mistake(text: impl Into<String>, predicted: Verdict, gold: Verdict) -> Self {
        Self {
            text: text.into(),
            predicted: Some(predicted),
            gold: Some(gold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProposeDirection {
    Rubric(EditDirection),
    /// Free-form rewrite of the whole prompt text.
    Rewrite,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DraftSeed {
    Description(String),
    Examples(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Task {
    Classify(Vec<String>),
    Reflect {
        mode: ReflectMode,
        items: Vec<TaskItem>,
        variant: u32,
    },
    Propose {
        direction: ProposeDirection,
        /// Current text of the rubric being edited, for edit directions.
        target_text: Option<String>,
        items: Vec<TaskItem>,
        guidance: Vec<String>,
        variant: u32,
    },
    Summarize(Vec<String>),
    Draft(DraftSeed),
}

impl Task {
    pub fn kind(&self) -> TaskKind {
        match self {
            Task::Classify(_) => TaskKind::Classify,
            Task::Reflect { .. } => TaskKind::Reflect,
            Task::Propose { .. } => TaskKind::Propose,
            Task::Summarize(_) => TaskKind::Summarize,
            Task::Draft(_) => TaskKind::Draft,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("classification batch of {0} comments (allowed 1..={MAX_BATCH})")]
    BatchSize(usize),
    #[error("{0} requires a filter prompt")]
    MissingPrompt(&'static str),
    #[error("empty {0}")]
    Empty(&'static str),
}

fn is_header_like(line: &str) -> bool {
    let Some(rest) = line.strip_prefix('#') else {
        return false;
    };
    let word: &str = rest.split(' ').next().unwrap_or("");
    !word.is_empty() && word.bytes().all(|b| b.is_ascii_uppercase())
}

fn push_block(out: &mut String, header: &str, body: &str) {
    out.push('#');
    out.push_str(header);
    out.push('\n');
    for line in body.split('\n') {
        if line.starts_with('\\') || is_header_like(line) {
            out.push('\\');
        }
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("#END\n");
}

fn item_header(index: usize, item: &TaskItem) -> String {
    let mut h = format!("COMMENT {index}");
    if let Some(p) = item.predicted {
        let _ = write!(h, " predicted={p}");
    }
    if let Some(g) = item.gold {
        let _ = write!(h, " gold={g}");
    }
    h
}

fn system_text(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Classify => {
            "You moderate comments on behalf of one user. The user's filter below has an overall \
description, positive rubrics (content to catch) and negative rubrics (content to exempt). \
Decide for every comment whether the filter should catch it."
        }
        TaskKind::Reflect => {
            "You help a user understand how their comment filter behaves. Answer briefly and \
refer to the filter's rubrics where one applies."
        }
        TaskKind::Propose => {
            "You improve a user's comment filter through small, interpretable edits. Make only \
the single change requested below."
        }
        TaskKind::Summarize => {
            "You summarize why a comment filter keeps making the same kind of mistake."
        }
        TaskKind::Draft => {
            "You help a user describe the comments they want a filter to catch."
        }
    }
}

fn instructions(task: &Task) -> String {
    match task {
        Task::Classify(_) => "Answer with exactly one line per comment, in the form `<index>: catch` or \
`<index>: not_catch`. Do not add any other text."
            .into(),
        Task::Reflect { mode, .. } => match mode {
            ReflectMode::Mistake => "In one sentence, explain why the filter misclassified the comment \
and what the filter is missing."
                .into(),
            ReflectMode::Explain => "In at most two sentences, explain the verdict. Quote the rubric that \
applies, or say that no rubric matched."
                .into(),
            ReflectMode::Gradient => "Describe in two sentences the flaws of the current prompt that \
explain these mistakes."
                .into(),
            ReflectMode::Rationale => "Write one sentence, in the user's voice, stating how the comment \
should have been classified and why."
                .into(),
        },
        Task::Propose { direction, .. } => match direction {
            ProposeDirection::Rubric(dir) => {
                let what = match dir {
                    EditDirection::AddPositive => "a new positive rubric (content to catch)",
                    EditDirection::AddNegative => "a new negative rubric (content to exempt)",
                    EditDirection::EditPositive(_) => "a revised version of the targeted positive rubric",
                    EditDirection::EditNegative(_) => "a revised version of the targeted negative rubric",
                    _ => "a rubric",
                };
                format!(
                    "Write {what} that fixes the mistakes above without changing anything else. \
Answer with a single line `RUBRIC: <text>`."
                )
            }
            ProposeDirection::Rewrite => "Rewrite the prompt to address the critique, moving in the \
opposite direction of the flaws it names. Answer with a line `PROMPT:` followed by the full new prompt."
                .into(),
        },
        Task::Summarize(_) => "In one sentence, describe the shared failure pattern behind these reflections."
            .into(),
        Task::Draft(_) => "Write a one to three sentence description of the comments the user wants to catch."
            .into(),
    }
}

/// Renders a request against a filter prompt.
pub fn render_prompt(prompt: &FilterPrompt, task: &Task) -> Result<String, RenderError> {
    render_request(Some(prompt), task)
}

/// Renders a request; only draft requests may omit the prompt.
pub fn render_request(prompt: Option<&FilterPrompt>, task: &Task) -> Result<String, RenderError> {
    let kind = task.kind();
    if prompt.is_none() && kind != TaskKind::Draft {
        return Err(RenderError::MissingPrompt(kind.as_str()));
    }
    let mut out = String::with_capacity(1024);
    let _ = writeln!(out, "#TASK {} {FRAMING_VERSION}", kind.as_str());
    push_block(&mut out, "SYSTEM", system_text(kind));

    if let Some(prompt) = prompt {
        push_block(&mut out, "DESCRIPTION", &prompt.description);
        for (i, r) in prompt.positive_rubrics.iter().enumerate() {
            push_block(&mut out, &format!("POSITIVE {} {}", i + 1, r.rubric_id), &r.text);
        }
        for (i, r) in prompt.negative_rubrics.iter().enumerate() {
            push_block(&mut out, &format!("NEGATIVE {} {}", i + 1, r.rubric_id), &r.text);
        }
        for (i, e) in prompt.examples.iter().enumerate() {
            push_block(&mut out, &format!("EXAMPLE {} {}", i + 1, e.verdict), &e.comment_text);
            if let Some(r) = &e.rationale {
                push_block(&mut out, &format!("RATIONALE {}", i + 1), r);
            }
        }
    }

    match task {
        Task::Classify(batch) => {
            if batch.is_empty() || batch.len() > MAX_BATCH {
                return Err(RenderError::BatchSize(batch.len()));
            }
            for (i, text) in batch.iter().enumerate() {
                push_block(&mut out, &format!("COMMENT {}", i + 1), text);
            }
        }
        Task::Reflect { mode, items, variant } => {
            if items.is_empty() {
                return Err(RenderError::Empty("reflection items"));
            }
            push_block(&mut out, &format!("MODE {} variant={variant}", mode.as_str()), "");
            for (i, item) in items.iter().enumerate() {
                push_block(&mut out, &item_header(i + 1, item), &item.text);
            }
        }
        Task::Propose {
            direction,
            target_text,
            items,
            guidance,
            variant,
        } => {
            let label = match direction {
                ProposeDirection::Rubric(d) => d.label(),
                ProposeDirection::Rewrite => "rewrite".to_string(),
            };
            push_block(&mut out, &format!("DIRECTION {label} variant={variant}"), "");
            if let Some(t) = target_text {
                push_block(&mut out, "TARGET", t);
            }
            for g in guidance {
                push_block(&mut out, "GUIDANCE", g);
            }
            for (i, item) in items.iter().enumerate() {
                push_block(&mut out, &item_header(i + 1, item), &item.text);
            }
        }
        Task::Summarize(reflections) => {
            if reflections.is_empty() {
                return Err(RenderError::Empty("failure pattern"));
            }
            for (i, r) in reflections.iter().enumerate() {
                push_block(&mut out, &format!("REFLECTION {}", i + 1), r);
            }
        }
        Task::Draft(seed) => match seed {
            DraftSeed::Description(d) => {
                if d.trim().is_empty() {
                    return Err(RenderError::Empty("draft seed"));
                }
                push_block(&mut out, "SEED description", d);
            }
            DraftSeed::Examples(examples) => {
                if examples.is_empty() || examples.iter().all(|e| e.trim().is_empty()) {
                    return Err(RenderError::Empty("draft seed"));
                }
                for (i, e) in examples.iter().enumerate() {
                    push_block(&mut out, &format!("SEED example {}", i + 1), e);
                }
            }
        },
    }
    push_block(&mut out, "INSTRUCTIONS", &instructions(task));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub args: Vec<String>,
    pub body: String,
}

impl Block {
    /// Value of a `key=value` argument.
    pub fn arg(&self, key: &str) -> Option<&str> {
        self.args
            .iter()
            .find_map(|a| a.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRequest {
    pub kind: TaskKind,
    pub blocks: Vec<Block>,
}

impl ParsedRequest {
    pub fn blocks_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Block> + 'a {
        self.blocks.iter().filter(move |b| b.name == name)
    }

    pub fn first(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FramingError {
    #[error("missing or malformed task sentinel")]
    Sentinel,
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("unsupported framing version {0:?}")]
    Version(String),
    #[error("block {0:?} is not terminated")]
    Unterminated(String),
    #[error("unexpected line outside a block: {0:?}")]
    Stray(String),
}

/// Parses the task sentinel and the block structure of a rendered request.
pub fn parse_request(text: &str) -> Result<ParsedRequest, FramingError> {
    let mut lines = text.split('\n');
    let first = lines.next().ok_or(FramingError::Sentinel)?;
    let mut parts = first.split(' ');
    if parts.next() != Some("#TASK") {
        return Err(FramingError::Sentinel);
    }
    let kind_str = parts.next().ok_or(FramingError::Sentinel)?;
    let version = parts.next().ok_or(FramingError::Sentinel)?;
    if parts.next().is_some() {
        return Err(FramingError::Sentinel);
    }
    let kind = TaskKind::parse(kind_str).ok_or_else(|| FramingError::UnknownTask(kind_str.to_string()))?;
    if version != FRAMING_VERSION {
        return Err(FramingError::Version(version.to_string()));
    }

    let mut blocks = Vec::new();
    let mut current: Option<(Block, Vec<String>)> = None;
    for line in lines {
        match current.as_mut() {
            None => {
                if line.is_empty() {
                    continue;
                }
                let header = line
                    .strip_prefix('#')
                    .filter(|_| is_header_like(line))
                    .ok_or_else(|| FramingError::Stray(line.to_string()))?;
                let mut words = header.split(' ').filter(|w| !w.is_empty());
                let name = words.next().unwrap_or_default().to_string();
                let args = words.map(str::to_string).collect();
                current = Some((
                    Block {
                        name,
                        args,
                        body: String::new(),
                    },
                    Vec::new(),
                ));
            }
            Some((_, body)) => {
                if line == "#END" {
                    let (mut block, body) = current.take().expect("open block");
                    block.body = body.join("\n");
                    blocks.push(block);
                } else {
                    let unescaped = line.strip_prefix('\\').unwrap_or(line);
                    body.push(unescaped.to_string());
                }
            }
        }
    }
    if let Some((block, _)) = current {
        return Err(FramingError::Unterminated(block.name));
    }
    Ok(ParsedRequest { kind, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Polarity, Rubric, RubricOrigin};

    fn prompt() -> FilterPrompt {
        let mut p = FilterPrompt::draft("f", "spam", "Catch scam comments");
        p.positive_rubrics.push(Rubric {
            rubric_id: "p1".into(),
            polarity: Polarity::Positive,
            text: "Catch comments that mention giveaway".into(),
            origin: RubricOrigin::Initial,
        });
        p.rehash();
        p
    }

    fn batch(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("comment number {i}")).collect()
    }

    #[test]
    fn classify_batch_of_five() {
        let text = render_prompt(&prompt(), &Task::Classify(batch(5))).unwrap();
        assert!(text.starts_with("#TASK classify v1\n"));
        for i in 1..=5 {
            assert!(text.contains(&format!("#COMMENT {i}\ncomment number {}\n#END", i - 1)));
        }
        assert!(text.contains("Catch comments that mention giveaway"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_prompt(&prompt(), &Task::Classify(batch(5))).unwrap();
        let b = render_prompt(&prompt(), &Task::Classify(batch(5))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_batch_rejected() {
        assert_eq!(
            render_prompt(&prompt(), &Task::Classify(batch(6))),
            Err(RenderError::BatchSize(6))
        );
        assert_eq!(
            render_prompt(&prompt(), &Task::Classify(vec![])),
            Err(RenderError::BatchSize(0))
        );
    }

    #[test]
    fn header_like_lines_survive_round_trip() {
        let tricky = "#END\n#COMMENT 3\n\\already\n#blessed normal hashtag".to_string();
        let text = render_prompt(&prompt(), &Task::Classify(vec![tricky.clone()])).unwrap();
        let parsed = parse_request(&text).unwrap();
        let c = parsed.first("COMMENT").unwrap();
        assert_eq!(c.body, tricky);
    }

    #[test]
    fn parse_recovers_blocks() {
        let task = Task::Propose {
            direction: ProposeDirection::Rubric(EditDirection::EditPositive("p1".into())),
            target_text: Some("Catch comments that mention giveaway".into()),
            items: vec![TaskItem::mistake("free crypto", Verdict::NotCatch, Verdict::Catch)],
            guidance: vec!["comments mentioning crypto are misclassified".into()],
            variant: 2,
        };
        let parsed = parse_request(&render_prompt(&prompt(), &task).unwrap()).unwrap();
        assert_eq!(parsed.kind, TaskKind::Propose);
        let dir = parsed.first("DIRECTION").unwrap();
        assert_eq!(dir.args, vec!["edit_positive", "p1", "variant=2"]);
        assert_eq!(dir.arg("variant"), Some("2"));
        let c = parsed.first("COMMENT").unwrap();
        assert_eq!(c.arg("predicted"), Some("not_catch"));
        assert_eq!(c.arg("gold"), Some("catch"));
        assert_eq!(parsed.blocks_named("POSITIVE").count(), 1);
    }

    #[test]
    fn sentinel_errors() {
        assert_eq!(parse_request("hello"), Err(FramingError::Sentinel));
        assert_eq!(
            parse_request("#TASK dance v1\n"),
            Err(FramingError::UnknownTask("dance".into()))
        );
        assert_eq!(parse_request("#TASK draft v2\n"), Err(FramingError::Version("v2".into())));
        assert!(matches!(
            parse_request("#TASK draft v1\n#SEED description\nabc"),
            Err(FramingError::Unterminated(_))
        ));
    }

    #[test]
    fn draft_without_prompt() {
        let text = render_request(None, &Task::Draft(DraftSeed::Description("spam".into()))).unwrap();
        assert!(text.starts_with("#TASK draft v1\n"));
        assert_eq!(
            render_request(None, &Task::Classify(batch(1))),
            Err(RenderError::MissingPrompt("classify"))
        );
        assert_eq!(
            render_request(None, &Task::Draft(DraftSeed::Description("  ".into()))),
            Err(RenderError::Empty("draft seed"))
        );
    }
}
