//! Backend-agnostic generation loop.
//!
//! One generation is a strict peek → decide → sample/inject cycle: the policy
//! inspects the most probable next token before it is emitted and may splice
//! text into the context instead of letting that token through. Under greedy
//! decoding the stream token *is* the argmax, so a one-token lookahead buffer
//! is a faithful realization of distribution peeking for any backend.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::matcher::{MarkerScanner, WaitMatcher};
use crate::benchmarks::PromptSpec;
use crate::policies::{Policy, PolicyAction};

/// Sampling settings shared by all backends.
///
/// Defaults are the evaluation settings used throughout: greedy decoding with
/// nucleus disabled and a 2048-token output cap.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SamplingParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Pass-through effort knob for backends that accept one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<ReasoningEffort>,
}

fn default_temperature() -> f64 {
    0.0
}
fn default_top_p() -> f64 {
    1.0
}
fn default_max_tokens() -> usize {
    2048
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 2048,
            reasoning_effort: None,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_tokens < 1 {
            return Err("max_tokens must be at least 1".into());
        }
        if self.temperature < 0.0 {
            return Err("temperature must be non-negative".into());
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err("top_p must lie in (0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    Low,
    Medium,
    High,
}

impl ReasoningEffort {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningEffort::Low => "low",
            ReasoningEffort::Medium => "medium",
            ReasoningEffort::High => "high",
        }
    }
}

/// Think-phase delimiters for the model family under test.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ThinkMarkers {
    #[serde(default = "default_open_marker")]
    pub open: String,
    #[serde(default = "default_close_marker")]
    pub close: String,
    /// Reasoning-model templates open the think block before the first
    /// completion token, so generation starts inside it.
    #[serde(default = "default_open_at_start")]
    pub open_at_start: bool,
}

fn default_open_marker() -> String {
    "<think>".to_string()
}
fn default_close_marker() -> String {
    "</think>".to_string()
}
fn default_open_at_start() -> bool {
    true
}

impl Default for ThinkMarkers {
    fn default() -> Self {
        Self {
            open: default_open_marker(),
            close: default_close_marker(),
            open_at_start: true,
        }
    }
}

/// The fixed prefix seen by the backend before any generated text.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatPrompt {
    pub system: String,
    pub user: String,
}

impl ChatPrompt {
    pub fn from_spec(spec: &PromptSpec) -> Self {
        Self {
            system: spec.system.clone(),
            user: spec.user.clone(),
        }
    }

    /// Single-text rendering of the prefix.
    pub fn as_text(&self) -> String {
        if self.system.is_empty() {
            self.user.clone()
        } else {
            format!("{}\n\n{}", self.system, self.user)
        }
    }
}

/// Why a piece of text was spliced into the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectReason {
    /// Trigger-word threshold reached and the argmax was the trigger word.
    WaitTrigger,
    /// The argmax was the closing think marker (options reinjection).
    ThinkCloseTrigger,
    /// Thinking-budget limit reached; the closing marker was forced.
    Budget,
}

impl InjectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            InjectReason::WaitTrigger => "wait_trigger",
            InjectReason::ThinkCloseTrigger => "think_close_trigger",
            InjectReason::Budget => "budget",
        }
    }
}

/// One injection event, positioned between accepted tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    /// Number of accepted tokens that precede this injection.
    pub position: usize,
    pub reason: InjectReason,
    pub text: String,
}

/// The growing generation context: fixed prompt plus accepted tokens and
/// injected text, rendered as ordered concatenation.
#[derive(Debug, Clone)]
pub struct GenContext {
    pub prompt: ChatPrompt,
    pub accepted: Vec<String>,
    pub injections: Vec<Injection>,
}

impl GenContext {
    pub fn new(prompt: ChatPrompt) -> Self {
        Self {
            prompt,
            accepted: Vec::new(),
            injections: Vec::new(),
        }
    }

    pub fn push_token(&mut self, text: String) {
        self.accepted.push(text);
    }

    pub fn push_injection(&mut self, text: String, reason: InjectReason) {
        self.injections.push(Injection {
            position: self.accepted.len(),
            reason,
            text,
        });
    }

    /// Everything generated so far (accepted tokens and injections, in order).
    pub fn generated_text(&self) -> String {
        let mut out = String::new();
        let mut inj = self.injections.iter().peekable();
        for (i, tok) in self.accepted.iter().enumerate() {
            while inj.peek().is_some_and(|j| j.position == i) {
                out.push_str(&inj.next().unwrap().text);
            }
            out.push_str(tok);
        }
        for j in inj {
            out.push_str(&j.text);
        }
        out
    }

    /// Full rendered context as the backend sees it.
    pub fn render(&self) -> String {
        let mut out = self.prompt.as_text();
        out.push_str(&self.generated_text());
        out
    }
}

/// One emitted token with loop-level accounting attached.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEvent {
    pub index: usize,
    pub text: String,
    pub is_eos: bool,
    pub think_phase: bool,
    pub cumulative_think_tokens: usize,
}

/// Most probable next token, observed without advancing the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionPeek {
    pub argmax_text: String,
    pub is_eos: bool,
}

/// Raw backend output for one sampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledToken {
    pub text: String,
    pub is_eos: bool,
}

impl SampledToken {
    pub fn eos() -> Self {
        Self {
            text: String::new(),
            is_eos: true,
        }
    }

    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            is_eos: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("authentication failure: {0}")]
    AuthFailure(String),
    #[error("context too long: {0}")]
    ContextTooLong(String),
}

/// Contract every generation backend implements.
///
/// `peek` must not advance the stream; `sample` advances by exactly one
/// token. `cancel` invalidates any in-flight stream — the generation loop
/// calls it after every injection so the next peek/sample sees the rebuilt
/// context.
pub trait Backend {
    fn peek(&mut self, ctx: &GenContext) -> Result<DistributionPeek, BackendError>;
    fn sample(&mut self, ctx: &GenContext) -> Result<SampledToken, BackendError>;
    fn cancel(&mut self);
}

/// Generation phase as tracked by the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Before any opening think marker (non-reasoning templates).
    Pre,
    Thinking,
    Answering,
}

/// Loop-owned state exposed to policies at each decision point.
#[derive(Debug, Clone, Copy)]
pub struct LoopView {
    pub phase: Phase,
    pub think_tokens: usize,
    pub emitted: usize,
}

/// Completed generation, before any benchmark-level scoring.
#[derive(Debug, Clone)]
pub struct Generation {
    pub transcript: String,
    pub think_text: String,
    pub answer_text: String,
    pub n_tokens: usize,
    pub n_think_tokens: usize,
    pub n_chars: usize,
    pub wait_count: usize,
    pub injections: Vec<Injection>,
    pub truncated: bool,
}

/// Drive one generation to completion under the given policy.
///
/// Each iteration peeks the argmax, lets the policy decide, and then either
/// splices text into the context (the peeked token is dropped — the backend
/// is cancelled and continues from the rebuilt context) or samples the token
/// and accounts for it. The loop stops on EOS, on a `Halt` action, or when
/// the emitted-token count reaches `params.max_tokens` (recorded as
/// truncation).
pub fn run_with_policy(
    backend: &mut dyn Backend,
    prompt_spec: &PromptSpec,
    policy: &mut dyn Policy,
    params: &SamplingParams,
    markers: &ThinkMarkers,
) -> Result<Generation, BackendError> {
    let mut ctx = GenContext::new(ChatPrompt::from_spec(prompt_spec));
    let mut phase = if markers.open_at_start {
        Phase::Thinking
    } else {
        Phase::Pre
    };
    let mut open_scan = MarkerScanner::new(&markers.open);
    let mut close_scan = MarkerScanner::new(&markers.close);
    let mut wait_matcher = WaitMatcher::default_wait();

    let mut emitted = 0usize;
    let mut think_tokens = 0usize;
    let mut wait_count = 0usize;
    let mut truncated = false;

    loop {
        let peek = backend.peek(&ctx)?;
        let view = LoopView {
            phase,
            think_tokens,
            emitted,
        };
        match policy.step(&peek, &view) {
            PolicyAction::Inject { text, reason } => {
                ctx.push_injection(text, reason);
                backend.cancel();
                // The injected text is not scanned: trigger counting excludes
                // it and the stream is discontinuous at the splice point.
                wait_matcher.reset_tail();
                open_scan.reset_tail();
                close_scan.reset_tail();
                // A model that re-triggers on every continuation would inject
                // forever without emitting; the total budget caps that too.
                if ctx.injections.len() > params.max_tokens {
                    truncated = true;
                    break;
                }
            }
            PolicyAction::EndThink => {
                ctx.push_injection(markers.close.clone(), InjectReason::Budget);
                backend.cancel();
                phase = Phase::Answering;
                wait_matcher.reset_tail();
                open_scan.reset_tail();
                close_scan.reset_tail();
            }
            PolicyAction::Halt => break,
            PolicyAction::Continue => {
                let tok = backend.sample(&ctx)?;
                if tok.is_eos {
                    break;
                }
                let closed_now = match phase {
                    Phase::Answering => {
                        close_scan.push(&tok.text);
                        false
                    }
                    _ => close_scan.push(&tok.text),
                };
                let opened_now = open_scan.push(&tok.text) && phase == Phase::Pre;
                let is_think = phase == Phase::Thinking && !closed_now;
                if is_think {
                    think_tokens += 1;
                }
                if closed_now {
                    phase = Phase::Answering;
                } else if opened_now {
                    phase = Phase::Thinking;
                }
                wait_count += wait_matcher.push(&tok.text);
                let event = TokenEvent {
                    index: emitted,
                    text: tok.text.clone(),
                    is_eos: false,
                    think_phase: is_think,
                    cumulative_think_tokens: think_tokens,
                };
                ctx.push_token(tok.text);
                emitted += 1;
                policy.accept(&event);
                if emitted >= params.max_tokens {
                    truncated = true;
                    break;
                }
            }
        }
    }
    wait_count += wait_matcher.finish();

    let transcript = ctx.generated_text();
    let (think_text, answer_text) = split_think(&transcript, markers);
    Ok(Generation {
        n_chars: transcript.chars().count(),
        transcript,
        think_text,
        answer_text,
        n_tokens: emitted,
        n_think_tokens: think_tokens,
        wait_count,
        injections: ctx.injections,
        truncated,
    })
}

/// Split a transcript into its think and answer parts.
///
/// The think text runs from the first opening marker (or the start of the
/// transcript when only a closing marker is present) to the first closing
/// marker. Without any markers the whole transcript is the answer.
pub fn split_think(transcript: &str, markers: &ThinkMarkers) -> (String, String) {
    let open_at = transcript.find(&markers.open);
    let think_start = match open_at {
        Some(i) => i + markers.open.len(),
        None => 0,
    };
    let close_at = transcript[think_start..]
        .find(&markers.close)
        .map(|i| think_start + i);
    match (open_at, close_at) {
        (None, None) => (String::new(), transcript.to_string()),
        (Some(_), None) => (transcript[think_start..].to_string(), String::new()),
        (_, Some(c)) => (
            transcript[think_start..c].to_string(),
            transcript[c + markers.close.len()..].to_string(),
        ),
    }
}
