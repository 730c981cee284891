//! Content addressing for prompts.
//!
//! The canonical form covers the description, both rubric lists in order and
//! the few-shot examples in order. Names, ids, versions and rubric origins are
//! excluded so that two prompts with the same content share cached predictions.

use sha2::{Digest, Sha256};

use crate::model::FilterPrompt;

const CANONICAL_TAG: &[u8] = b"sieve-prompt/v1";

fn put_field(out: &mut Vec<u8>, tag: u8, bytes: &[u8]) {
    out.push(tag);
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

/// Length-prefixed UTF-8 encoding of the hashed fields in declared order.
pub fn canonical_bytes(prompt: &FilterPrompt) -> Vec<u8> {
    let mut out = Vec::with_capacity(256);
    out.extend_from_slice(CANONICAL_TAG);
    put_field(&mut out, b'd', prompt.description.as_bytes());
    put_field(&mut out, b'P', &(prompt.positive_rubrics.len() as u64).to_le_bytes());
    for rubric in &prompt.positive_rubrics {
        put_field(&mut out, b'p', rubric.text.as_bytes());
    }
    put_field(&mut out, b'N', &(prompt.negative_rubrics.len() as u64).to_le_bytes());
    for rubric in &prompt.negative_rubrics {
        put_field(&mut out, b'n', rubric.text.as_bytes());
    }
    put_field(&mut out, b'E', &(prompt.examples.len() as u64).to_le_bytes());
    for example in &prompt.examples {
        put_field(&mut out, b'e', example.comment_text.as_bytes());
        put_field(&mut out, b'v', example.verdict.as_str().as_bytes());
        match &example.rationale {
            Some(r) => put_field(&mut out, b'r', r.as_bytes()),
            None => out.push(b'-'),
        }
    }
    out
}

/// Hex-encoded SHA-256 of the canonical form.
pub fn hash_prompt(prompt: &FilterPrompt) -> String {
    hex::encode(Sha256::digest(canonical_bytes(prompt)))
}
