//! Deterministic scripted backend for tests and offline runs.

use crate::decode::{Backend, BackendError, DistributionPeek, GenContext, SampledToken};

/// One scripted entry: a token text or an explicit end-of-sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptToken {
    Text(String),
    Eos,
}

impl ScriptToken {
    pub fn text(t: impl Into<String>) -> Self {
        ScriptToken::Text(t.into())
    }
}

/// A scripted stand-in for a generation backend.
///
/// Tokens replay from the current segment; when the segment runs out the
/// model has said its piece and yields EOS. Every cancellation (the loop
/// cancels after each injection) advances to the next segment, modelling a
/// model that reacts to the injected sentence. With all segments exhausted,
/// peek and sample yield EOS forever.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    segments: Vec<Vec<ScriptToken>>,
    segment: usize,
    offset: usize,
}

impl ScriptedModel {
    pub fn new(segments: Vec<Vec<ScriptToken>>) -> Self {
        Self {
            segments,
            segment: 0,
            offset: 0,
        }
    }

    /// Single segment of plain token texts.
    pub fn single_segment<S: Into<String>>(tokens: Vec<S>) -> Self {
        Self::new(vec![tokens.into_iter().map(ScriptToken::text).collect()])
    }

    /// Segments of plain token texts.
    pub fn from_texts(segments: Vec<Vec<String>>) -> Self {
        Self::new(
            segments
                .into_iter()
                .map(|seg| seg.into_iter().map(ScriptToken::Text).collect())
                .collect(),
        )
    }

    fn current(&self) -> Option<&ScriptToken> {
        self.segments.get(self.segment)?.get(self.offset)
    }
}

impl Backend for ScriptedModel {
    fn peek(&mut self, _ctx: &GenContext) -> Result<DistributionPeek, BackendError> {
        Ok(match self.current() {
            Some(ScriptToken::Text(t)) => DistributionPeek {
                argmax_text: t.clone(),
                is_eos: false,
            },
            Some(ScriptToken::Eos) | None => DistributionPeek {
                argmax_text: String::new(),
                is_eos: true,
            },
        })
    }

    fn sample(&mut self, _ctx: &GenContext) -> Result<SampledToken, BackendError> {
        match self.current().cloned() {
            Some(ScriptToken::Text(t)) => {
                self.offset += 1;
                Ok(SampledToken::text(t))
            }
            Some(ScriptToken::Eos) | None => Ok(SampledToken::eos()),
        }
    }

    fn cancel(&mut self) {
        self.segment += 1;
        self.offset = 0;
    }
}
