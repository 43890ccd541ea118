//! Intervention policies: the per-generation automata that decide, for every
//! peeked token, whether to let it through, splice text into the context,
//! force the think phase closed, or halt.
//!
//! All state is per-generation; a policy instance is never reused. Step
//! functions are deterministic in (state, inputs).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::matcher::{MarkerScanner, WaitMatcher};
use crate::benchmarks::{PromptSpec, PromptVariant};
use crate::decode::{DistributionPeek, InjectReason, LoopView, Phase, ThinkMarkers, TokenEvent};

/// Verdict for one peeked token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyAction {
    /// Sample the peeked token normally.
    Continue,
    /// Splice `text` into the context; the peeked token is not emitted.
    Inject { text: String, reason: InjectReason },
    /// Append the closing think marker and continue in the answer phase.
    EndThink,
    /// Stop the generation.
    Halt,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy misuse: {0}")]
    Misuse(String),
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
}

/// Per-generation intervention automaton.
///
/// `step` decides on the peeked token; `accept` observes each token that was
/// actually emitted (injected text is never fed back).
pub trait Policy {
    fn step(&mut self, peek: &DistributionPeek, view: &LoopView) -> PolicyAction;
    fn accept(&mut self, event: &TokenEvent);
    fn descriptor(&self) -> String;
}

/// The uncontrolled baseline: every step continues.
pub struct VanillaPolicy;

impl Policy for VanillaPolicy {
    fn step(&mut self, _peek: &DistributionPeek, _view: &LoopView) -> PolicyAction {
        PolicyAction::Continue
    }

    fn accept(&mut self, _event: &TokenEvent) {}

    fn descriptor(&self) -> String {
        "vanilla".to_string()
    }
}

/// Thinking-budget forcing: once the think phase has consumed `think_limit`
/// tokens, the closing marker is appended to terminate it.
///
/// The forced close fires at most once, and only when the stream was not about
/// to close the think phase (or end) on its own, so a natural think length of
/// exactly the limit is left untouched.
pub struct BudgetPolicy {
    think_limit: usize,
    close_scan: MarkerScanner,
    fired: bool,
}

impl BudgetPolicy {
    pub fn new(think_limit: usize, markers: &ThinkMarkers) -> Self {
        assert!(think_limit >= 1, "think_limit must be at least 1");
        Self {
            think_limit,
            close_scan: MarkerScanner::new(&markers.close),
            fired: false,
        }
    }
}

impl Policy for BudgetPolicy {
    fn step(&mut self, peek: &DistributionPeek, view: &LoopView) -> PolicyAction {
        if !self.fired
            && view.phase == Phase::Thinking
            && view.think_tokens >= self.think_limit
            && !peek.is_eos
            && !self.close_scan.completes_with(&peek.argmax_text)
        {
            self.fired = true;
            self.close_scan.reset_tail();
            return PolicyAction::EndThink;
        }
        PolicyAction::Continue
    }

    fn accept(&mut self, event: &TokenEvent) {
        self.close_scan.push(&event.text);
    }

    fn descriptor(&self) -> String {
        format!("budget(limit={})", self.think_limit)
    }
}

/// Slow-to-Fast configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct S2fConfig {
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default = "default_target_word")]
    pub target_word: String,
    #[serde(default)]
    pub case_sensitive: bool,
    #[serde(default = "default_s2f_preset")]
    pub preset_sentence: String,
}

fn default_tau() -> usize {
    3
}

fn default_target_word() -> String {
    "wait".to_string()
}

fn default_s2f_preset() -> String {
    "Time is up. Based on my analysis so far, the most likely answer is".to_string()
}

impl Default for S2fConfig {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            target_word: default_target_word(),
            case_sensitive: false,
            preset_sentence: default_s2f_preset(),
        }
    }
}

impl S2fConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.tau < 1 {
            return Err(PolicyError::InvalidConfig("tau must be at least 1".into()));
        }
        if self.preset_sentence.is_empty() {
            return Err(PolicyError::InvalidConfig(
                "preset_sentence must be non-empty".into(),
            ));
        }
        if self.target_word.is_empty() {
            return Err(PolicyError::InvalidConfig(
                "target_word must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

/// Slow-to-Fast: after `tau - 1` trigger words have been emitted, an argmax
/// that completes the trigger word again is replaced by the preset sentence.
/// The count restarts after every injection, so a generation can be
/// interrupted more than once.
pub struct S2fPolicy {
    tau: usize,
    preset: String,
    count: usize,
    matcher: WaitMatcher,
}

impl S2fPolicy {
    pub fn new(cfg: &S2fConfig) -> Self {
        assert!(cfg.tau >= 1, "tau must be at least 1");
        Self {
            tau: cfg.tau,
            preset: cfg.preset_sentence.clone(),
            count: 0,
            matcher: WaitMatcher::new(&cfg.target_word, cfg.case_sensitive),
        }
    }
}

impl Policy for S2fPolicy {
    fn step(&mut self, peek: &DistributionPeek, _view: &LoopView) -> PolicyAction {
        // A trigger word that ended the previous delta has been emitted but
        // not yet credited; the peeked text settles its boundary.
        let effective = self.count + self.matcher.pending_confirmed_by(&peek.argmax_text);
        if effective >= self.tau - 1 && self.matcher.completes_with(&peek.argmax_text) {
            self.count = 0;
            self.matcher.reset_tail();
            return PolicyAction::Inject {
                text: self.preset.clone(),
                reason: InjectReason::WaitTrigger,
            };
        }
        PolicyAction::Continue
    }

    fn accept(&mut self, event: &TokenEvent) {
        self.count += self.matcher.push(&event.text);
    }

    fn descriptor(&self) -> String {
        format!("s2f(tau={})", self.tau)
    }
}

/// Think-to-Match configuration. The insertion text is the preset sentence
/// followed by the options block withheld from the prompt.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct T2mConfig {
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default = "default_target_word")]
    pub target_word: String,
    #[serde(default)]
    pub case_sensitive: bool,
    #[serde(default = "default_t2m_preset")]
    pub preset_sentence: String,
    pub options_block: String,
}

fn default_t2m_preset() -> String {
    "Now I need to choose an answer based on my intuition from: ".to_string()
}

impl T2mConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.tau < 1 {
            return Err(PolicyError::InvalidConfig("tau must be at least 1".into()));
        }
        if self.preset_sentence.is_empty() {
            return Err(PolicyError::InvalidConfig(
                "preset_sentence must be non-empty".into(),
            ));
        }
        if self.options_block.is_empty() {
            return Err(PolicyError::InvalidConfig(
                "options_block must be non-empty".into(),
            ));
        }
        Ok(())
    }

    /// Full insertion text.
    pub fn full_insertion(&self) -> String {
        format!("{}{}", self.preset_sentence, self.options_block)
    }
}

/// Think-to-Match: the options withheld from the prompt are injected exactly
/// once, either at the trigger-word threshold or just before the model closes
/// its think phase on its own.
pub struct T2mPolicy {
    tau: usize,
    full_insertion: String,
    count: usize,
    inserted: bool,
    matcher: WaitMatcher,
    close_scan: MarkerScanner,
}

impl T2mPolicy {
    pub fn new(cfg: &T2mConfig, markers: &ThinkMarkers) -> Self {
        assert!(cfg.tau >= 1, "tau must be at least 1");
        Self {
            tau: cfg.tau,
            full_insertion: cfg.full_insertion(),
            count: 0,
            inserted: false,
            matcher: WaitMatcher::new(&cfg.target_word, cfg.case_sensitive),
            close_scan: MarkerScanner::new(&markers.close),
        }
    }

    /// The base prompt must have been built with the options withheld.
    pub fn check_prompt(cfg: &T2mConfig, prompt: &PromptSpec) -> Result<(), PolicyError> {
        if prompt.variant != PromptVariant::T2mBase {
            return Err(PolicyError::Misuse(format!(
                "t2m requires the t2m_base prompt variant, got {}",
                prompt.variant.as_str()
            )));
        }
        let rendered = format!("{}{}", prompt.system, prompt.user);
        if rendered.contains(&cfg.options_block) {
            return Err(PolicyError::Misuse(
                "rendered prompt already contains the options block".into(),
            ));
        }
        Ok(())
    }

    fn fire(&mut self, reason: InjectReason) -> PolicyAction {
        self.count = 0;
        self.inserted = true;
        self.matcher.reset_tail();
        self.close_scan.reset_tail();
        PolicyAction::Inject {
            text: self.full_insertion.clone(),
            reason,
        }
    }
}

impl Policy for T2mPolicy {
    fn step(&mut self, peek: &DistributionPeek, _view: &LoopView) -> PolicyAction {
        if !self.inserted {
            let effective = self.count + self.matcher.pending_confirmed_by(&peek.argmax_text);
            if effective >= self.tau - 1 && self.matcher.completes_with(&peek.argmax_text) {
                return self.fire(InjectReason::WaitTrigger);
            }
            if self.close_scan.completes_with(&peek.argmax_text) {
                return self.fire(InjectReason::ThinkCloseTrigger);
            }
        }
        PolicyAction::Continue
    }

    fn accept(&mut self, event: &TokenEvent) {
        self.count += self.matcher.push(&event.text);
        self.close_scan.push(&event.text);
    }

    fn descriptor(&self) -> String {
        format!("t2m(tau={})", self.tau)
    }
}

/// Declarative policy selection, as it appears in run configuration files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyConfig {
    Vanilla,
    Budget {
        think_limit: usize,
    },
    S2f {
        #[serde(default = "default_tau")]
        tau: usize,
        #[serde(default = "default_target_word")]
        target_word: String,
        #[serde(default)]
        case_sensitive: bool,
        #[serde(default = "default_s2f_preset")]
        preset_sentence: String,
    },
    T2m {
        #[serde(default = "default_tau")]
        tau: usize,
        #[serde(default = "default_target_word")]
        target_word: String,
        #[serde(default)]
        case_sensitive: bool,
        #[serde(default = "default_t2m_preset")]
        preset_sentence: String,
    },
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        match self {
            PolicyConfig::Vanilla => Ok(()),
            PolicyConfig::Budget { think_limit } => {
                if *think_limit < 1 {
                    Err(PolicyError::InvalidConfig(
                        "think_limit must be at least 1".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            PolicyConfig::S2f {
                tau,
                target_word,
                case_sensitive,
                preset_sentence,
            } => S2fConfig {
                tau: *tau,
                target_word: target_word.clone(),
                case_sensitive: *case_sensitive,
                preset_sentence: preset_sentence.clone(),
            }
            .validate(),
            PolicyConfig::T2m {
                tau,
                target_word,
                case_sensitive,
                preset_sentence,
            } => {
                // options_block is supplied per sample; validate the rest.
                T2mConfig {
                    tau: *tau,
                    target_word: target_word.clone(),
                    case_sensitive: *case_sensitive,
                    preset_sentence: preset_sentence.clone(),
                    options_block: "-".into(),
                }
                .validate()
            }
        }
    }

    pub fn is_t2m(&self) -> bool {
        matches!(self, PolicyConfig::T2m { .. })
    }

    /// Instantiate a fresh per-generation policy. T2M additionally needs the
    /// sample's options block and the prompt it will run against.
    pub fn build(
        &self,
        markers: &ThinkMarkers,
        prompt: Option<&PromptSpec>,
    ) -> Result<Box<dyn Policy>, PolicyError> {
        match self {
            PolicyConfig::Vanilla => Ok(Box::new(VanillaPolicy)),
            PolicyConfig::Budget { think_limit } => {
                Ok(Box::new(BudgetPolicy::new(*think_limit, markers)))
            }
            PolicyConfig::S2f {
                tau,
                target_word,
                case_sensitive,
                preset_sentence,
            } => {
                let cfg = S2fConfig {
                    tau: *tau,
                    target_word: target_word.clone(),
                    case_sensitive: *case_sensitive,
                    preset_sentence: preset_sentence.clone(),
                };
                cfg.validate()?;
                Ok(Box::new(S2fPolicy::new(&cfg)))
            }
            PolicyConfig::T2m {
                tau,
                target_word,
                case_sensitive,
                preset_sentence,
            } => {
                let prompt = prompt.ok_or_else(|| {
                    PolicyError::Misuse("t2m policy requires the rendered prompt".into())
                })?;
                let cfg = T2mConfig {
                    tau: *tau,
                    target_word: target_word.clone(),
                    case_sensitive: *case_sensitive,
                    preset_sentence: preset_sentence.clone(),
                    options_block: prompt.options_block.clone(),
                };
                cfg.validate()?;
                T2mPolicy::check_prompt(&cfg, prompt)?;
                Ok(Box::new(T2mPolicy::new(&cfg, markers)))
            }
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            PolicyConfig::Vanilla => "vanilla".to_string(),
            PolicyConfig::Budget { think_limit } => format!("budget(limit={think_limit})"),
            PolicyConfig::S2f { tau, .. } => format!("s2f(tau={tau})"),
            PolicyConfig::T2m { tau, .. } => format!("t2m(tau={tau})"),
        }
    }
}
