//! Property tests for the library invariants that hold over arbitrary
//! inputs rather than enumerated cases.

use proptest::prelude::*;

use tomlab_core::analysis::{
    accuracy_report, error_heatmap, length_histogram, GroupAxis, LengthUnit,
};
use tomlab_core::backends::{matcher::WaitMatcher, ScriptedModel};
use tomlab_core::benchmarks::{parse_samples, write_samples, Benchmark, TomSample};
use tomlab_core::decode::{split_think, Backend, ChatPrompt, GenContext, ThinkMarkers};
use tomlab_core::runner::GenerationRecord;

fn is_word(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Reference one-pass word-boundary scan over the joined text.
fn reference_count(text: &str) -> usize {
    let chars: Vec<char> = text.chars().map(|c| c.to_ascii_lowercase()).collect();
    let target = ['w', 'a', 'i', 't'];
    if chars.len() < 4 {
        return 0;
    }
    let mut n = 0;
    for i in 0..=chars.len() - 4 {
        if chars[i..i + 4] == target
            && (i == 0 || !is_word(chars[i - 1]))
            && (i + 4 == chars.len() || !is_word(chars[i + 4]))
        {
            n += 1;
        }
    }
    n
}

/// Text with plenty of trigger-word material, then arbitrary cut points.
fn text_and_cuts() -> impl Strategy<Value = (String, Vec<usize>)> {
    let piece = prop_oneof![
        Just("wait".to_string()),
        Just("Wait".to_string()),
        Just("WAIT,".to_string()),
        Just(" ".to_string()),
        Just(", ".to_string()),
        Just("er".to_string()),
        Just("a".to_string()),
        Just("so then".to_string()),
        Just("_".to_string()),
        "[a-z]{1,6}",
    ];
    proptest::collection::vec(piece, 0..16)
        .prop_map(|pieces| pieces.concat())
        .prop_flat_map(|text| {
            let len = text.chars().count();
            let cuts = proptest::collection::vec(0..=len, 0..8);
            (Just(text), cuts)
        })
}

proptest! {
    /// Any delta tokenization of a text yields the same total count as the
    /// single-pass scan of the joined text.
    #[test]
    fn wait_count_is_tokenization_invariant((text, mut cuts) in text_and_cuts()) {
        cuts.sort_unstable();
        let chars: Vec<char> = text.chars().collect();
        let mut deltas = Vec::new();
        let mut prev = 0usize;
        for cut in cuts.into_iter().chain(std::iter::once(chars.len())) {
            deltas.push(chars[prev..cut].iter().collect::<String>());
            prev = cut;
        }
        let mut matcher = WaitMatcher::default_wait();
        let mut total = 0;
        for delta in &deltas {
            total += matcher.push(delta);
        }
        total += matcher.finish();
        prop_assert_eq!(total, reference_count(&text));
    }

    /// Splitting a canonical transcript recovers its parts, and the parts
    /// reassemble into the transcript.
    #[test]
    fn split_think_roundtrip(think in "[a-zA-Z0-9 .,]{0,40}", answer in "[a-zA-Z0-9 .,]{0,40}") {
        let markers = ThinkMarkers::default();
        let transcript = format!("{}{}{}{}", markers.open, think, markers.close, answer);
        let (t, a) = split_think(&transcript, &markers);
        prop_assert_eq!(&t, &think);
        prop_assert_eq!(&a, &answer);
        let reassembled = format!("{}{}{}{}", markers.open, t, markers.close, a);
        prop_assert_eq!(reassembled, transcript);
    }

    /// Greedy consistency: the peeked argmax equals the next sampled token.
    #[test]
    fn peek_always_matches_next_sample(tokens in proptest::collection::vec("[a-z ]{1,8}", 0..12)) {
        let ctx = GenContext::new(ChatPrompt { system: String::new(), user: "q".into() });
        let mut model = ScriptedModel::single_segment(tokens.clone());
        loop {
            let peek = model.peek(&ctx).unwrap();
            let tok = model.sample(&ctx).unwrap();
            prop_assert_eq!(peek.argmax_text, tok.text);
            prop_assert_eq!(peek.is_eos, tok.is_eos);
            if tok.is_eos {
                break;
            }
        }
    }

    /// Dataset round-trip: load -> serialize -> load is the identity.
    #[test]
    fn sample_roundtrip(
        n_options in 2usize..6,
        order in 0u8..=4,
        context in "[a-zA-Z0-9_ .]{1,60}",
        question in "[a-zA-Z0-9_ ?]{1,30}",
        gold in 0usize..2,
        deception in proptest::option::of(proptest::bool::ANY),
    ) {
        let sample = TomSample {
            id: "prop-1".into(),
            benchmark: Benchmark::Hitom,
            context,
            question,
            options: (0..n_options)
                .map(|i| ((b'A' + i as u8) as char, format!("opt_{i}")))
                .collect(),
            gold_label: (b'A' + gold as u8) as char,
            gold_text: Some(format!("opt_{gold}")),
            order,
            taxonomy: None,
            label_map: None,
            deception,
        };
        let text = write_samples(std::slice::from_ref(&sample));
        let loaded = parse_samples(&text, Benchmark::Hitom).unwrap();
        prop_assert_eq!(loaded, vec![sample]);
    }
}

fn record(id: usize, correct: bool, order: u8, n_chars: usize) -> GenerationRecord {
    GenerationRecord {
        sample_id: format!("p{id}"),
        variant: "with_options".into(),
        policy: "vanilla".into(),
        transcript: String::new(),
        think_text: String::new(),
        answer_text: String::new(),
        n_tokens: n_chars / 3,
        n_think_tokens: 0,
        n_chars,
        wait_count: 0,
        injections: Vec::new(),
        predicted: Some("A".into()),
        correct,
        truncated: false,
        error: None,
        latency_ms: 0,
        order: Some(order),
        taxonomy: None,
    }
}

proptest! {
    /// Aggregation is invariant under record order.
    #[test]
    fn aggregation_is_permutation_invariant(
        specs in proptest::collection::vec((proptest::bool::ANY, 0u8..=4, 0usize..5000), 1..40),
        rotate_by in 0usize..40,
    ) {
        let records: Vec<GenerationRecord> = specs
            .iter()
            .enumerate()
            .map(|(i, (c, o, n))| record(i, *c, *o, *n))
            .collect();
        let mut rotated = records.clone();
        rotated.rotate_left(rotate_by % records.len());

        prop_assert_eq!(
            accuracy_report(&records, GroupAxis::Order).unwrap(),
            accuracy_report(&rotated, GroupAxis::Order).unwrap()
        );
        prop_assert_eq!(
            length_histogram(&records, LengthUnit::Chars, 250).unwrap(),
            length_histogram(&rotated, LengthUnit::Chars, 250).unwrap()
        );
        prop_assert_eq!(
            error_heatmap(&records, 500).unwrap(),
            error_heatmap(&rotated, 500).unwrap()
        );
    }

    /// Accuracy of a concatenation is the count-weighted mean of the parts.
    #[test]
    fn accuracy_concatenation_is_weighted_mean(
        a in proptest::collection::vec(proptest::bool::ANY, 1..30),
        b in proptest::collection::vec(proptest::bool::ANY, 1..30),
    ) {
        let ra: Vec<GenerationRecord> = a.iter().enumerate().map(|(i, c)| record(i, *c, 0, 10)).collect();
        let rb: Vec<GenerationRecord> = b.iter().enumerate().map(|(i, c)| record(1000 + i, *c, 0, 10)).collect();
        let mut combined = ra.clone();
        combined.extend(rb.clone());
        let acc_a = accuracy_report(&ra, GroupAxis::None).unwrap();
        let acc_b = accuracy_report(&rb, GroupAxis::None).unwrap();
        let acc = accuracy_report(&combined, GroupAxis::None).unwrap();
        let weighted = (acc_a.overall * ra.len() as f64 + acc_b.overall * rb.len() as f64)
            / (ra.len() + rb.len()) as f64;
        prop_assert!((acc.overall - weighted).abs() < 1e-12);
    }
}
