//! Word-level pre-tokenization. Words are whitespace-separated; the
//! punctuation marks below are split off as their own tokens.

const PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '(', ')'];

fn is_punct(c: char) -> bool {
    PUNCT.contains(&c)
}

/// Splits text into word and punctuation tokens, preserving case.
pub fn pretokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if is_punct(c) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            } else {
                word.push(c);
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Inverse of [`pretokenize`] for canonically spaced text: closing
/// punctuation attaches to the previous word, `(` to the next.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for tok in tokens {
        let tok = tok.as_ref();
        let attaches_left = tok.len() == 1 && tok.chars().all(|c| is_punct(c) && c != '(');
        if !glue_next && !attaches_left {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = tok == "(";
    }
    out
}
