use super::ElicitError;
use regex::Regex;
use std::sync::OnceLock;

struct Patterns {
    percent: Regex,
    after_word: Regex,
    before_word: Regex,
    decimal: Regex,
    enumerator: Regex,
    trailing: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        percent: Regex::new(r"(\d+(?:\.\d+)?)\s*%").unwrap(),
        after_word: Regex::new(
            r"(?i)\bconfiden\w*(?:\s+(?:is|of|level|score|at|about|around|=))*\s*[:=]?\s*(\d+(?:\.\d+)?|\.\d+)",
        )
        .unwrap(),
        before_word: Regex::new(r"(?i)(\d*\.\d+|\b[01])\s+confiden\w*").unwrap(),
        decimal: Regex::new(r"(?:^|[^\d.])(0?\.\d+|1\.0+)(?:[^\d.%]|$)").unwrap(),
        enumerator: Regex::new(r"^\s*(?:\(?\d+[.)]|[-*\u{2022}]|[A-Za-z][.)](?:\s|$))\s*").unwrap(),
        trailing: Regex::new(
            r"(?i)(?:[\s\-\u{2014}\u{2013}:,;(=|]+(?:with\s+)?(?:an?\s+)?(?:probability|prob\.?|chance|likelihood|p)(?:\s+of)?)?[\s\-\u{2014}\u{2013}:,;(=|]*$",
        )
        .unwrap(),
    })
}

fn preceded_by_minus(text: &str, start: usize) -> bool {
    text[..start].ends_with('-')
}

fn followed_by_percent(text: &str, end: usize) -> bool {
    text[end..].trim_start().starts_with('%')
}

/// Extracts the confidence a reply commits to.
///
/// Accepts `N%` with `0 <= N <= 100`, decimals in `[0, 1]` next to a word
/// starting with "confiden", and `Confidence: N` with `1 < N <= 100` read as a
/// percentage. The last valid candidate in the text wins; out-of-range values
/// are skipped rather than clamped.
pub fn parse_confidence(reply: &str) -> Result<f64, ElicitError> {
    let p = patterns();
    let mut best: Option<(usize, f64)> = None;
    let mut offer = |pos: usize, v: f64| {
        if best.is_none_or(|(b, _)| pos >= b) {
            best = Some((pos, v));
        }
    };
    for c in p.percent.captures_iter(reply) {
        let m = c.get(1).unwrap();
        if preceded_by_minus(reply, m.start()) {
            continue;
        }
        if let Ok(v) = m.as_str().parse::<f64>() {
            if (0.0..=100.0).contains(&v) {
                offer(m.end(), v / 100.0);
            }
        }
    }
    for c in p.after_word.captures_iter(reply) {
        let m = c.get(1).unwrap();
        if followed_by_percent(reply, m.end()) {
            continue;
        }
        let Ok(v) = m.as_str().parse::<f64>() else { continue };
        if (0.0..=1.0).contains(&v) {
            offer(m.end(), v);
        } else if v <= 100.0 && c.get(0).unwrap().as_str().contains(':') {
            offer(m.end(), v / 100.0);
        }
    }
    for c in p.before_word.captures_iter(reply) {
        let m = c.get(1).unwrap();
        if let Ok(v) = m.as_str().parse::<f64>() {
            if (0.0..=1.0).contains(&v) {
                offer(m.end(), v);
            }
        }
    }
    best.map(|(_, v)| v).ok_or(ElicitError::UnparseableConfidence)
}

/// Probability tokens of one line as `(start, end, value)`.
fn line_tokens(line: &str) -> Vec<(usize, usize, f64)> {
    let p = patterns();
    let mut out: Vec<(usize, usize, f64)> = p
        .percent
        .captures_iter(line)
        .filter_map(|c| {
            let whole = c.get(0).unwrap();
            let num = c.get(1).unwrap();
            let v: f64 = num.as_str().parse().ok()?;
            ((0.0..=100.0).contains(&v) && !preceded_by_minus(line, num.start()))
                .then_some((num.start(), whole.end(), v / 100.0))
        })
        .collect();
    if out.is_empty() {
        // Fall back to bare probabilities such as "(0.6)" after the answer.
        for c in p.decimal.captures_iter(line) {
            let num = c.get(1).unwrap();
            if num.start() == 0 {
                continue;
            }
            if let Ok(v) = num.as_str().parse::<f64>() {
                if (0.0..=1.0).contains(&v) {
                    out.push((num.start(), num.end(), v));
                }
            }
        }
    }
    out
}

fn clean_answer(segment: &str) -> String {
    let p = patterns();
    let s = segment.trim_start_matches(|c: char| c.is_whitespace() || ")]:;,|".contains(c));
    let s = p.enumerator.replace(s, "");
    let s = p.trailing.replace(&s, "");
    s.trim_matches(|c: char| c.is_whitespace() || "-\u{2014}\u{2013}:,;|".contains(c))
        .to_string()
}

/// Extracts up to `k` `(answer, probability)` pairs, highest probability
/// first. Ties keep input order. Probabilities are not renormalized.
pub fn parse_topk(reply: &str, k: usize) -> Result<Vec<(String, f64)>, ElicitError> {
    let mut pairs = Vec::new();
    for line in reply.lines() {
        let mut from = 0;
        for (start, end, v) in line_tokens(line) {
            let segment = &line[from..start];
            from = end;
            if segment.to_ascii_lowercase().contains("confiden") {
                continue;
            }
            let answer = clean_answer(segment);
            if !answer.is_empty() {
                pairs.push((answer, v));
            }
        }
    }
    if pairs.is_empty() {
        return Err(ElicitError::UnparseableConfidence);
    }
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
    pairs.truncate(k.max(1));
    Ok(pairs)
}

/// The reply without lines that only state a confidence.
pub fn answer_text(reply: &str) -> String {
    reply
        .lines()
        .filter(|l| !l.to_ascii_lowercase().contains("confiden"))
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_examples() {
        assert_eq!(parse_confidence("I am 90% confident I can collect some wood").unwrap(), 0.90);
        assert_eq!(parse_confidence("confidence: 0.42").unwrap(), 0.42);
        assert_eq!(parse_confidence("Maybe 120% sure... final Confidence: 55%").unwrap(), 0.55);
        assert_eq!(parse_confidence("Confidence: 55").unwrap(), 0.55);
        assert_eq!(parse_confidence("0.3 confidence overall").unwrap(), 0.3);
        assert!(parse_confidence("no idea").is_err());
        assert!(parse_confidence("Confidence: 140").is_err());
    }

    #[test]
    fn topk_examples() {
        let r = "1. go north \u{2014} 60%\n2. go east \u{2014} 30%";
        assert_eq!(
            parse_topk(r, 2).unwrap(),
            vec![("go north".to_string(), 0.6), ("go east".to_string(), 0.3)]
        );
        assert_eq!(parse_topk(r, 3).unwrap().len(), 2);
        assert_eq!(
            parse_topk("A 40%, B 40%", 2).unwrap(),
            vec![("A".to_string(), 0.4), ("B".to_string(), 0.4)]
        );
    }
}
