//! Word tokenization following treebank conventions: lowercasing, punctuation
//! split into separate tokens, common English contractions split off.

/// Contraction suffixes split into their own token, checked longest-first.
const CONTRACTIONS: [&str; 7] = ["n't", "'re", "'ve", "'ll", "'s", "'d", "'m"];

/// Tokenize a sentence into lowercase word and punctuation tokens.
///
/// Digits keep internal periods and commas ("5.50" stays one token), an
/// ellipsis stays one token, and every other punctuation character becomes
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lower.split_whitespace() {
        split_chunk(chunk, &mut tokens);
    }
    tokens
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let mut cur = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphanumeric() || c == '\'' || c == '-' {
            cur.push(c);
            i += 1;
        } else if (c == '.' || c == ',')
            && i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_ascii_digit()
            && chars[i + 1].is_ascii_digit()
        {
            // decimal point / thousands separator inside a number
            cur.push(c);
            i += 1;
        } else if c == '.' && i + 2 < chars.len() && chars[i + 1] == '.' && chars[i + 2] == '.' {
            flush_word(&mut cur, out);
            out.push("...".to_string());
            i += 3;
            while i < chars.len() && chars[i] == '.' {
                i += 1;
            }
        } else {
            flush_word(&mut cur, out);
            out.push(c.to_string());
            i += 1;
        }
    }
    flush_word(&mut cur, out);
}

fn flush_word(cur: &mut String, out: &mut Vec<String>) {
    if cur.is_empty() {
        return;
    }
    let word = std::mem::take(cur);
    // strip apostrophes that only quote the word
    let trimmed = word.trim_matches('\'');
    if trimmed.is_empty() {
        for _ in word.chars() {
            out.push("'".to_string());
        }
        return;
    }
    let lead = word.len() - word.trim_start_matches('\'').len();
    for _ in 0..lead {
        out.push("'".to_string());
    }
    split_contraction(trimmed, out);
    let tail = word.len() - word.trim_end_matches('\'').len();
    for _ in 0..tail {
        out.push("'".to_string());
    }
}

fn split_contraction(word: &str, out: &mut Vec<String>) {
    for suffix in CONTRACTIONS {
        if word.len() > suffix.len() && word.ends_with(suffix) {
            let stem = &word[..word.len() - suffix.len()];
            // "n't" needs an alphabetic stem ("don't"), the rest any stem
            if suffix == "n't" && !stem.chars().all(|c| c.is_alphabetic()) {
                continue;
            }
            out.push(stem.to_string());
            out.push(suffix.to_string());
            return;
        }
    }
    out.push(word.to_string());
}

/// Join tokens back into a plain space-separated sentence.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}
