//! Answer extraction and scoring.

use super::{PromptVariant, TomSample};

/// Extract the predicted option label from the answer part of a transcript.
///
/// The answer text is scanned for declarations — `Answer: X` (with or without
/// a `Final` prefix), a standalone `X.` / `[X]` / `X)`, or a verbatim option
/// text that matches exactly one option — and the last declaration wins,
/// since reasoning transcripts revise candidates mid-thought.
pub fn extract_choice(answer_text: &str, options: &[(char, String)]) -> Option<char> {
    let labels: Vec<char> = options.iter().map(|(l, _)| *l).collect();
    let chars: Vec<char> = answer_text.chars().collect();
    let mut best: Option<(usize, char)> = None;
    let mut update = |pos: usize, label: char| {
        if best.is_none_or(|(p, _)| pos >= p) {
            best = Some((pos, label));
        }
    };

    // "Answer: X" / "Final Answer: X"
    let lower: String = chars.iter().map(|c| c.to_ascii_lowercase()).collect();
    let lower_bytes: Vec<char> = lower.chars().collect();
    let mut i = 0;
    while let Some(found) = find_from(&lower_bytes, "answer", i) {
        let mut j = found + "answer".len();
        while j < chars.len() && chars[j].is_whitespace() {
            j += 1;
        }
        if j < chars.len() && chars[j] == ':' {
            j += 1;
            while j < chars.len() && (chars[j].is_whitespace() || chars[j] == '*') {
                j += 1;
            }
            if j < chars.len() {
                let cand = chars[j].to_ascii_uppercase();
                let next_is_word = chars
                    .get(j + 1)
                    .is_some_and(|c| c.is_ascii_alphanumeric() || *c == '_');
                if labels.contains(&cand) && !next_is_word {
                    update(j, cand);
                }
            }
        }
        i = found + 1;
    }

    // standalone "X." / "X)" and bracketed "[X]"
    for (idx, &c) in chars.iter().enumerate() {
        if !labels.contains(&c) {
            continue;
        }
        let prev = if idx == 0 { None } else { Some(chars[idx - 1]) };
        let next = chars.get(idx + 1).copied();
        let standalone_before =
            prev.is_none() || prev.is_some_and(|p| p.is_whitespace() || p == '(');
        match next {
            Some('.') | Some(')') if standalone_before || prev == Some('(') => update(idx, c),
            Some(']') if prev == Some('[') => update(idx, c),
            _ => {}
        }
    }

    // verbatim option text, when exactly one option matches
    let occurrences: Vec<(char, usize)> = options
        .iter()
        .filter(|(_, t)| !t.is_empty())
        .filter_map(|(l, t)| answer_text.rfind(t.as_str()).map(|b| (*l, b)))
        .collect();
    if occurrences.len() == 1 {
        let (label, byte_pos) = occurrences[0];
        let char_pos = answer_text[..byte_pos].chars().count();
        update(char_pos, label);
    }

    best.map(|(_, label)| label)
}

fn find_from(haystack: &[char], needle: &str, start: usize) -> Option<usize> {
    let needle: Vec<char> = needle.chars().collect();
    if haystack.len() < needle.len() {
        return None;
    }
    (start..=haystack.len() - needle.len()).find(|&i| haystack[i..i + needle.len()] == needle[..])
}

/// Pull the free-text answer out of an open-ended response: the text after
/// the last "answer:" declaration, or the last non-empty line.
pub fn extract_open_answer(answer_text: &str) -> Option<String> {
    // byte-preserving fold so the offset indexes the original text
    let lower = answer_text.to_ascii_lowercase();
    if let Some(pos) = lower.rfind("answer") {
        let rest = &answer_text[pos + "answer".len()..];
        let rest = rest.trim_start_matches([':', ' ', '*']);
        let line = rest.lines().next().unwrap_or("").trim();
        if !line.is_empty() {
            return Some(line.to_string());
        }
    }
    answer_text
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
}

/// Normalization for open-ended comparison: lowercase, underscores as spaces,
/// punctuation trimmed from the ends, whitespace runs collapsed.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String = s
        .chars()
        .map(|c| {
            if c == '_' {
                ' '
            } else {
                c.to_ascii_lowercase()
            }
        })
        .collect();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| !c.is_alphanumeric() && !c.is_whitespace())
        .to_string()
}

/// Score a prediction against the sample.
///
/// Multiple choice: the predicted (presented) label is mapped back through
/// `label_map` when present and compared to the gold label. Open-ended
/// (`no_options`): normalized string equality against `gold_text`.
pub fn score(sample: &TomSample, predicted: &str, variant: PromptVariant) -> bool {
    if variant == PromptVariant::NoOptions {
        return match &sample.gold_text {
            Some(gold) => normalize_answer(predicted) == normalize_answer(gold),
            None => false,
        };
    }
    let mut chars = predicted.trim().chars();
    let label = match (chars.next(), chars.next()) {
        (Some(c), None) => c.to_ascii_uppercase(),
        _ => return false,
    };
    let original = match &sample.label_map {
        Some(map) => match map.get(&label) {
            Some(orig) => *orig,
            None => return false,
        },
        None => label,
    };
    original == sample.gold_label
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::Benchmark;
    use std::collections::BTreeMap;

    fn options(n: usize) -> Vec<(char, String)> {
        (0..n)
            .map(|i| ((b'A' + i as u8) as char, format!("text {i}")))
            .collect()
    }

    #[test]
    fn answer_declaration() {
        let opts = options(4);
        assert_eq!(extract_choice("Answer: B", &opts), Some('B'));
        assert_eq!(extract_choice("**Final Answer: D**", &opts), Some('D'));
        assert_eq!(extract_choice("the answer: c", &opts), Some('C'));
    }

    #[test]
    fn last_declaration_wins() {
        let opts = options(4);
        assert_eq!(
            extract_choice("Answer: A. Hmm, on reflection... Answer: C", &opts),
            Some('C')
        );
    }

    #[test]
    fn standalone_forms() {
        let opts = options(4);
        assert_eq!(extract_choice("I pick [B] here", &opts), Some('B'));
        assert_eq!(extract_choice("It must be (C) then", &opts), Some('C'));
        assert_eq!(extract_choice("D. that one", &opts), Some('D'));
    }

    #[test]
    fn no_answer_found() {
        let opts = options(4);
        assert_eq!(extract_choice("I cannot decide.", &opts), None);
        assert_eq!(extract_choice("", &opts), None);
    }

    #[test]
    fn label_letter_inside_word_not_matched() {
        let opts = options(4);
        // "Answer: Apple" — A is followed by a word char
        assert_eq!(extract_choice("Answer: Apple pie", &opts), None);
    }

    #[test]
    fn unique_option_text_matches() {
        let opts = vec![
            ('A', "blue_suitcase".to_string()),
            ('B', "red_bottle".to_string()),
        ];
        assert_eq!(
            extract_choice("It ends up in the blue_suitcase", &opts),
            Some('A')
        );
        // both texts present: ambiguous, no option-text match
        assert_eq!(
            extract_choice("blue_suitcase or red_bottle, unclear", &opts),
            None
        );
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_answer("Blue Suitcase."), "blue suitcase");
        assert_eq!(normalize_answer("blue_suitcase"), "blue suitcase");
        assert_eq!(normalize_answer("  \"green  pantry\" "), "green pantry");
    }

    fn sample(map: Option<BTreeMap<char, char>>) -> TomSample {
        TomSample {
            id: "s".into(),
            benchmark: Benchmark::Tombench,
            context: "c".into(),
            question: "q".into(),
            options: options(4),
            gold_label: 'B',
            gold_text: None,
            order: 1,
            taxonomy: None,
            label_map: map,
            deception: None,
        }
    }

    #[test]
    fn score_with_map_matches_appendix_case() {
        let map: BTreeMap<char, char> = [('A', 'D'), ('B', 'C'), ('C', 'A'), ('D', 'B')]
            .into_iter()
            .collect();
        let s = sample(Some(map));
        assert!(score(&s, "D", PromptVariant::WithOptions));
        assert!(!score(&s, "B", PromptVariant::WithOptions));
    }

    #[test]
    fn score_identity_map_equals_no_map() {
        let identity: BTreeMap<char, char> = [('A', 'A'), ('B', 'B'), ('C', 'C'), ('D', 'D')]
            .into_iter()
            .collect();
        let with = sample(Some(identity));
        let without = sample(None);
        for label in ["A", "B", "C", "D"] {
            assert_eq!(
                score(&with, label, PromptVariant::WithOptions),
                score(&without, label, PromptVariant::WithOptions)
            );
        }
    }

    #[test]
    fn exactly_one_label_scores_correct() {
        let s = sample(None);
        let correct: Vec<&str> = ["A", "B", "C", "D"]
            .into_iter()
            .filter(|l| score(&s, l, PromptVariant::WithOptions))
            .collect();
        assert_eq!(correct, vec!["B"]);
    }

    #[test]
    fn open_ended_scoring() {
        let mut s = sample(None);
        s.gold_text = Some("blue_suitcase".into());
        assert!(score(&s, "Blue Suitcase.", PromptVariant::NoOptions));
        assert!(!score(&s, "blue bottle", PromptVariant::NoOptions));
    }

    #[test]
    fn open_answer_extraction() {
        assert_eq!(
            extract_open_answer("analysis...\n\nAnswer: blue_suitcase").as_deref(),
            Some("blue_suitcase")
        );
        assert_eq!(
            extract_open_answer("just thinking\nthe final line").as_deref(),
            Some("the final line")
        );
        assert_eq!(extract_open_answer("  \n \n"), None);
        // multibyte text before the declaration must not break slicing
        assert_eq!(
            extract_open_answer("İstanbul — după analiză\nAnswer: grü_box").as_deref(),
            Some("grü_box")
        );
    }
}
