//! Small text utilities shared by the simulation backend and the harness.

/// Lower-cased alphanumeric tokens in order of appearance.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Splits into sentences on terminal punctuation and keeps at most `max`.
pub fn first_sentences(text: &str, max: usize) -> String {
    let mut out = String::new();
    let mut count = 0;
    for ch in text.trim().chars() {
        out.push(ch);
        if matches!(ch, '.' | '!' | '?') {
            count += 1;
            if count == max {
                break;
            }
        }
    }
    out.trim().to_string()
}
