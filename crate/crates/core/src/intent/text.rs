/// Lowercase, drop apostrophes, turn other punctuation into spaces, collapse
/// whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\'' || c == '\u{2019}' {
            continue;
        }
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else {
            out.push(' ');
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokens(normalized: &str) -> Vec<&str> {
    normalized.split_whitespace().collect()
}

/// A phrase occurrence: token span `[start, end)` and which phrase matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub phrase: usize,
}

/// Non-overlapping matches of `phrases` in `tokens`, longest phrase first,
/// returned in text order.
pub fn find_phrases(tokens: &[&str], phrases: &[Vec<String>]) -> Vec<Span> {
    let mut order: Vec<usize> = (0..phrases.len()).filter(|&i| !phrases[i].is_empty()).collect();
    order.sort_by(|&a, &b| phrases[b].len().cmp(&phrases[a].len()).then(a.cmp(&b)));

    let mut taken = vec![false; tokens.len()];
    let mut spans = Vec::new();
    for pi in order {
        let p = &phrases[pi];
        if p.len() > tokens.len() {
            continue;
        }
        let mut i = 0;
        while i + p.len() <= tokens.len() {
            let free = !taken[i..i + p.len()].iter().any(|&t| t);
            if free && tokens[i..i + p.len()].iter().zip(p).all(|(a, b)| *a == b) {
                taken[i..i + p.len()].iter_mut().for_each(|t| *t = true);
                spans.push(Span { start: i, end: i + p.len(), phrase: pi });
                i += p.len();
            } else {
                i += 1;
            }
        }
    }
    spans.sort_by_key(|s| s.start);
    spans
}

pub fn phrase_tokens(phrases: &[String]) -> Vec<Vec<String>> {
    phrases.iter().map(|p| normalize(p).split_whitespace().map(str::to_owned).collect()).collect()
}
