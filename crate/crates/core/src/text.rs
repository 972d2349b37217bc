//! Text normalization, tokenization and sentence splitting.

/// Lowercases, replaces punctuation with nothing and collapses whitespace.
///
/// This is the answer normalization used for containment checks and EM/F1.
pub fn normalize_answer(text: &str) -> String {
    let stripped: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !is_unicode_punct(*c))
        .flat_map(char::to_lowercase)
        .collect();
    collapse_whitespace(&stripped)
}

/// Lowercases and collapses runs of whitespace to a single space.
pub fn normalize_spacing(text: &str) -> String {
    collapse_whitespace(&text.to_lowercase())
}

pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace tokens of the lowercased text.
pub fn lower_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Whitespace tokens of the normalized answer form.
pub fn answer_tokens(text: &str) -> Vec<String> {
    normalize_answer(text).split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '\u{00A1}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}'
    )
}

/// Deterministic rule-based sentence splitter.
///
/// A boundary is placed after `.`, `!` or `?` (optionally followed by closing
/// quotes or brackets) when the next characters are whitespace followed by an
/// uppercase letter, or whitespace containing a newline. Newline-only breaks
/// without terminal punctuation are not boundaries. Empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut end = i + 1;
            while end < chars.len() && matches!(chars[end], '"' | '\'' | ')' | ']' | '\u{201D}' | '\u{2019}') {
                end += 1;
            }
            let mut j = end;
            let mut saw_newline = false;
            while j < chars.len() && chars[j].is_whitespace() {
                saw_newline |= chars[j] == '\n';
                j += 1;
            }
            let has_space = j > end;
            if has_space && (saw_newline || j == chars.len() || chars[j].is_uppercase()) {
                push_piece(&chars[start..end], &mut out);
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    push_piece(&chars[start..], &mut out);
    out
}

fn push_piece(piece: &[char], out: &mut Vec<String>) {
    let s: String = piece.iter().collect();
    let s = collapse_whitespace(&s);
    if !s.is_empty() {
        out.push(s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_case_punctuation_and_spacing() {
        assert_eq!(normalize_answer("  Rudolf   SVENSSON, Jr.! "), "rudolf svensson jr");
        assert_eq!(normalize_spacing("A  b\tC"), "a b c");
    }

    #[test]
    fn splits_on_terminal_punctuation_before_uppercase() {
        let s = split_sentences("He won gold. He competed in 1932! Did he? yes, e.g. in Rome.");
        assert_eq!(s, vec!["He won gold.", "He competed in 1932!", "Did he? yes, e.g. in Rome."]);
    }

    #[test]
    fn splits_on_newline_after_punctuation() {
        let s = split_sentences("first line.\nsecond line");
        assert_eq!(s, vec!["first line.", "second line"]);
    }

    #[test]
    fn split_is_deterministic_and_drops_blanks() {
        assert!(split_sentences("   ").is_empty());
        assert_eq!(split_sentences("No terminal punctuation"), vec!["No terminal punctuation"]);
        assert_eq!(split_sentences("Quoted.\" Next one."), vec!["Quoted.\"", "Next one."]);
    }
}
