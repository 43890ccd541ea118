//! Benchmark datasets, prompt construction, and answer scoring.
//!
//! Samples are normalized into one record shape regardless of their source
//! benchmark; loaders accept that canonical line-delimited form plus a small
//! import adapter per benchmark for the raw field layouts.

mod load;
mod prompt;
mod score;

pub use load::{
    load_hitom, load_samples, load_tomato, load_tombench, parse_samples, write_samples,
    BenchmarkError,
};
pub use prompt::{build_prompt, build_prompt_with, render_options_block, PromptStyle};
pub use score::{extract_choice, extract_open_answer, normalize_answer, score};

use std::collections::BTreeMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Hitom,
    Tomato,
    Tombench,
}

impl Benchmark {
    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Hitom => "hitom",
            Benchmark::Tomato => "tomato",
            Benchmark::Tombench => "tombench",
        }
    }

    /// Whether gold answers are verbatim spans that support open-ended
    /// (option-free) evaluation.
    pub fn is_extractive(self) -> bool {
        matches!(self, Benchmark::Hitom)
    }

    /// Valid belief-order range for this benchmark.
    pub fn order_range(self) -> std::ops::RangeInclusive<u8> {
        match self {
            Benchmark::Hitom => 0..=4,
            Benchmark::Tomato => 1..=2,
            Benchmark::Tombench => 1..=1,
        }
    }
}

/// Mental-state category of a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taxonomy {
    Belief,
    Desire,
    Emotion,
    Intention,
    Knowledge,
    NonLiteral,
}

impl Taxonomy {
    pub fn as_str(self) -> &'static str {
        match self {
            Taxonomy::Belief => "belief",
            Taxonomy::Desire => "desire",
            Taxonomy::Emotion => "emotion",
            Taxonomy::Intention => "intention",
            Taxonomy::Knowledge => "knowledge",
            Taxonomy::NonLiteral => "non_literal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "belief" => Some(Taxonomy::Belief),
            "desire" => Some(Taxonomy::Desire),
            "emotion" => Some(Taxonomy::Emotion),
            "intention" => Some(Taxonomy::Intention),
            "knowledge" => Some(Taxonomy::Knowledge),
            "non_literal" | "non-literal" | "non" => Some(Taxonomy::NonLiteral),
            _ => None,
        }
    }
}

/// One benchmark item.
///
/// `options` holds the presented order; when options were shuffled relative
/// to the source, `label_map` maps each presented label back to the original
/// one and `gold_label` keeps naming the original label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomSample {
    pub id: String,
    pub benchmark: Benchmark,
    pub context: String,
    pub question: String,
    pub options: Vec<(char, String)>,
    pub gold_label: char,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_text: Option<String>,
    pub order: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<Taxonomy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<BTreeMap<char, char>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deception: Option<bool>,
}

impl TomSample {
    pub fn labels(&self) -> Vec<char> {
        self.options.iter().map(|(l, _)| *l).collect()
    }

    pub fn option_text(&self, label: char) -> Option<&str> {
        self.options
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, t)| t.as_str())
    }

    /// Check the cross-field invariants shared by all benchmarks.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.options.is_empty() {
            return Err("options: sample has no options".into());
        }
        for (i, (label, _)) in self.options.iter().enumerate() {
            let expected = (b'A' + i as u8) as char;
            if *label != expected {
                return Err(format!(
                    "options: label {label:?} at position {i} (expected {expected:?}; labels must be contiguous from A)"
                ));
            }
        }
        if !self.labels().contains(&self.gold_label) {
            return Err(format!(
                "gold_label: {:?} is not one of the option labels",
                self.gold_label
            ));
        }
        let range = self.benchmark.order_range();
        if !range.contains(&self.order) {
            return Err(format!(
                "order: {} out of range {}..={} for {}",
                self.order,
                range.start(),
                range.end(),
                self.benchmark.as_str()
            ));
        }
        if let Some(map) = &self.label_map {
            let labels = self.labels();
            if map.len() != labels.len() {
                return Err("label_map: size differs from option count".into());
            }
            let mut seen = Vec::new();
            for (from, to) in map {
                if !labels.contains(from) || !labels.contains(to) {
                    return Err(format!("label_map: {from:?} -> {to:?} uses unknown label"));
                }
                if seen.contains(to) {
                    return Err(format!(
                        "label_map: target {to:?} repeated, not a permutation"
                    ));
                }
                seen.push(*to);
            }
        }
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x1000_0000_01b3;

/// Stable 64-bit hash used to derive per-sample shuffle seeds.
pub(crate) fn fnv1a64(data: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Permute a sample's option texts with a seed-deterministic permutation.
///
/// The permutation is derived from `(seed, sample.id)`, so a rerun with the
/// same run seed shuffles every sample identically. `gold_label` is left
/// untouched (it names the original label); `label_map` records how to get
/// from presented labels back to original ones, composing with any map
/// already present.
pub fn shuffle_options(sample: &TomSample, seed: u64) -> TomSample {
    let n = sample.options.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(sample.id.as_bytes()));
    let mut perm: Vec<usize> = (0..n).collect();
    // Fisher-Yates with an explicit generator, immune to library reshuffles.
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    apply_option_permutation(sample, &perm)
}

/// Present option `perm[i]` in slot `i`. Exposed for tests that need a fixed
/// permutation rather than a seeded one.
pub fn apply_option_permutation(sample: &TomSample, perm: &[usize]) -> TomSample {
    assert_eq!(
        perm.len(),
        sample.options.len(),
        "permutation arity mismatch"
    );
    let prior = |label: char| -> char {
        match &sample.label_map {
            Some(map) => *map.get(&label).unwrap_or(&label),
            None => label,
        }
    };
    let mut options = Vec::with_capacity(perm.len());
    let mut label_map = BTreeMap::new();
    for (i, &src) in perm.iter().enumerate() {
        let presented = (b'A' + i as u8) as char;
        let (old_label, text) = &sample.options[src];
        options.push((presented, text.clone()));
        label_map.insert(presented, prior(*old_label));
    }
    TomSample {
        options,
        label_map: Some(label_map),
        ..sample.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    WithOptions,
    NoOptions,
    Cot,
    T2mBase,
}

impl PromptVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::WithOptions => "with_options",
            PromptVariant::NoOptions => "no_options",
            PromptVariant::Cot => "cot",
            PromptVariant::T2mBase => "t2m_base",
        }
    }

    /// Variants whose rendered prompt must not contain the options.
    pub fn withholds_options(self) -> bool {
        matches!(self, PromptVariant::NoOptions | PromptVariant::T2mBase)
    }
}

/// A fully rendered prompt, with the options block held separately so that
/// withholding variants can hand it to the intervention policy instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub system: String,
    pub user: String,
    pub options_block: String,
    pub variant: PromptVariant,
}
