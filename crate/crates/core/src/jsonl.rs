//! The JSONL comment interchange format.
//!
//! One object per line: `id`, `text`, `published_at` (RFC 3339, UTC) are
//! required; `author`, `thread_id`, `video_id`, `like_count` are optional.
//! Blank lines are ignored.

use std::io::BufRead;

use chrono::{DateTime, Utc};
use serde::Deserialize;

use crate::model::Comment;

#[derive(Deserialize)]
struct Record {
    id: String,
    text: String,
    #[serde(default)]
    author: Option<String>,
    #[serde(default)]
    thread_id: Option<String>,
    #[serde(default)]
    video_id: Option<String>,
    published_at: String,
    #[serde(default)]
    like_count: Option<u64>,
}

/// Parses one line into a comment, checking the comment invariants.
pub fn parse_comment(line: &str) -> Result<Comment, String> {
    let r: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let published_at = DateTime::parse_from_rfc3339(&r.published_at)
        .map_err(|e| format!("published_at: {e}"))?
        .with_timezone(&Utc);
    let c = Comment {
        id: r.id,
        text: r.text,
        author: r.author,
        thread_id: r.thread_id,
        video_id: r.video_id,
        published_at,
        like_count: r.like_count,
    };
    c.check()?;
    Ok(c)
}

/// Serializes one comment as a JSONL line (without the newline).
pub fn to_line(comment: &Comment) -> String {
    serde_json::to_string(comment).expect("comments serialize")
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ParsedLines {
    pub comments: Vec<Comment>,
    /// (1-based line number, reason) for every malformed line.
    pub skipped: Vec<(usize, String)>,
}

/// Reads every line; malformed ones are skipped and reported.
pub fn read_comments<R: BufRead>(reader: R) -> std::io::Result<ParsedLines> {
    let mut out = ParsedLines::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_comment(&line) {
            Ok(c) => out.comments.push(c),
            Err(e) => out.skipped.push((i + 1, e)),
        }
    }
    Ok(out)
}
