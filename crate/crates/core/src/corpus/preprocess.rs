use crate::error::{Error, Result};

/// Decodes raw bytes of corpus line `line` (1-based) and preprocesses it.
pub fn preprocess_bytes(bytes: &[u8], line: usize) -> Result<Vec<String>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Encoding {
        line,
        msg: format!("invalid UTF-8 at byte {}", e.valid_up_to()),
    })?;
    Ok(preprocess(text))
}

/// Entity fixing, mojibake repair, punctuation normalisation, lowercasing
/// and rule-based tokenization, in that order.
pub fn preprocess(text: &str) -> Vec<String> {
    let text = fix_entities(text);
    let text = repair_mojibake(&text);
    let text = normalize_punctuation(&text).to_lowercase();
    tokenize(&text)
}

/// Undoes (possibly repeated) HTML escaping: `&amp;amp;lt;` becomes `<`.
pub fn fix_entities(text: &str) -> String {
    let mut s = text.to_string();
    while s.contains("&amp;") {
        s = s.replace("&amp;", "&");
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s.as_str();
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        match decode_entity(rest) {
            Some((c, used)) => {
                out.push(c);
                rest = &rest[used..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_entity(s: &str) -> Option<(char, usize)> {
    let end = s.char_indices().take(12).find(|&(_, c)| c == ';')?.0;
    let name = &s[1..end];
    let c = match name {
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => ' ',
        _ => {
            let num = name.strip_prefix('#')?;
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                None => num.parse().ok()?,
            };
            char::from_u32(code)?
        }
    };
    Some((c, end + 1))
}

/// Text that was UTF-8 decoded as Latin-1 and re-encoded ("Ã©" for "é")
/// is decoded once more. Left alone unless the round trip is valid UTF-8.
pub fn repair_mojibake(text: &str) -> String {
    if text.is_ascii() || text.chars().any(|c| c as u32 > 0xFF) {
        return text.to_string();
    }
    let bytes: Vec<u8> = text.chars().map(|c| c as u8).collect();
    match String::from_utf8(bytes) {
        Ok(fixed) => fixed,
        Err(_) => text.to_string(),
    }
}

pub fn normalize_punctuation(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\u{2026}' => out.push_str("..."),
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{00AB}' | '\u{00BB}' => out.push('"'),
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{00B4}' | '`' => out.push('\''),
            '\u{2013}' | '\u{2014}' => out.push('-'),
            '\u{00A0}' | '\u{2009}' | '\u{202F}' => out.push(' '),
            _ => out.push(c),
        }
    }
    out
}

fn word_char(c: char) -> bool {
    c.is_alphanumeric() || ('\u{300}'..='\u{36F}').contains(&c)
}

/// Splits on whitespace, then separates punctuation into tokens. Kept
/// inside words: apostrophes and hyphens between word characters, and
/// `.`/`,` between digits. Three or more dots form one `...` token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut cur = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let prev = i.checked_sub(1).map(|j| chars[j]);
            let next = chars.get(i + 1).copied();
            let between = |f: fn(char) -> bool| prev.is_some_and(f) && next.is_some_and(f);
            if word_char(c)
                || ((c == '\'' || c == '-') && between(word_char))
                || ((c == '.' || c == ',') && between(|x| x.is_ascii_digit()))
            {
                cur.push(c);
                i += 1;
                continue;
            }
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
            if c == '.' {
                let run = chars[i..].iter().take_while(|&&x| x == '.').count();
                if run >= 3 {
                    tokens.push("...".to_string());
                } else {
                    tokens.extend(std::iter::repeat(".".to_string()).take(run));
                }
                i += run;
            } else {
                tokens.push(c.to_string());
                i += 1;
            }
        }
        if !cur.is_empty() {
            tokens.push(cur);
        }
    }
    tokens
}
