/// A lowercased token and its character span `[start, end)` in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Lowercase, split on whitespace, and emit every punctuation character as its
/// own token. Offsets count Unicode scalar values, as SemEval annotations do.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let flush = |current: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if !current.is_empty() {
            tokens.push(Token {
                text: current.to_lowercase(),
                start,
                end,
            });
            current.clear();
        }
    };
    let mut idx = 0;
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut current, start, idx, &mut tokens);
        } else if is_punct(c) {
            flush(&mut current, start, idx, &mut tokens);
            tokens.push(Token {
                text: c.to_lowercase().collect(),
                start: idx,
                end: idx + 1,
            });
        } else {
            if current.is_empty() {
                start = idx;
            }
            current.push(c);
        }
        idx += 1;
    }
    flush(&mut current, start, idx, &mut tokens);
    tokens
}

/// Map a character span `[from, to)` to the inclusive token range it overlaps.
pub fn align_span(tokens: &[Token], from: usize, to: usize) -> Option<(usize, usize)> {
    if from >= to {
        return None;
    }
    let mut hit = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.end > from && t.start < to)
        .map(|(i, _)| i);
    let first = hit.next()?;
    let last = hit.last().unwrap_or(first);
    Some((first, last))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(text: &str) -> Vec<String> {
        tokenize(text).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn splits_punctuation_and_lowercases() {
        assert_eq!(words("Food is good."), ["food", "is", "good", "."]);
        assert_eq!(words("don't"), ["don", "'", "t"]);
        assert!(words("").is_empty());
        assert!(words("   ").is_empty());
    }

    #[test]
    fn aligns_multi_token_aspect() {
        let text = "The service was fine but I could not believe the high price tag on the wine.";
        let from = text.find("price tag").unwrap();
        let to = from + "price tag".len();
        let toks = tokenize(text);
        let (i, j) = align_span(&toks, from, to).unwrap();
        assert_eq!(toks[i].text, "price");
        assert_eq!(toks[j].text, "tag");
        assert_eq!(j, i + 1);
        assert_eq!(align_span(&toks, 5, 5), None);
    }

    #[test]
    fn offsets_count_characters() {
        let toks = tokenize("Café crème, s'il vous plaît");
        assert_eq!(toks[0].text, "café");
        assert_eq!((toks[1].start, toks[1].end), (5, 10));
        assert_eq!(toks[2].text, ",");
    }
}
