//! Prompt construction for every evaluated variant.

use super::{Benchmark, BenchmarkError, PromptSpec, PromptVariant, TomSample};

/// Instruction texts that are configurable rather than fixed by the task.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptStyle {
    /// Step-by-step nudge appended for the `cot` variant (non-reasoning
    /// models). The default is ours, not a quoted one.
    pub cot_instruction: String,
}

impl Default for PromptStyle {
    fn default() -> Self {
        Self {
            cot_instruction: "Let's think step by step before giving the final answer.".into(),
        }
    }
}

/// Render the option list in the layout used for this benchmark.
pub fn render_options_block(benchmark: Benchmark, options: &[(char, String)]) -> String {
    match benchmark {
        Benchmark::Hitom => options
            .iter()
            .map(|(l, t)| format!("{l}. {t}"))
            .collect::<Vec<_>>()
            .join(", "),
        Benchmark::Tomato => options
            .iter()
            .map(|(l, t)| format!("[{l}] {t}"))
            .collect::<Vec<_>>()
            .join("\n"),
        Benchmark::Tombench => options
            .iter()
            .map(|(l, t)| format!("{l}. {t}"))
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

fn preamble(benchmark: Benchmark, with_note: bool) -> &'static str {
    match benchmark {
        Benchmark::Hitom if with_note => {
            "The following story happens in chronological order. You will be given a multiple-choice question and a note at the end."
        }
        Benchmark::Hitom => "The following story happens in chronological order.",
        Benchmark::Tomato => "The following is a conversation between two people.",
        Benchmark::Tombench => "Read the following story carefully.",
    }
}

pub fn build_prompt(
    sample: &TomSample,
    variant: PromptVariant,
) -> Result<PromptSpec, BenchmarkError> {
    build_prompt_with(sample, variant, &PromptStyle::default())
}

/// Build the prompt for one sample.
///
/// `with_options` and `cot` embed the option block in the user text;
/// `no_options` asks for the answer verbatim (extractive benchmarks only);
/// `t2m_base` withholds the options from the text but still returns them in
/// `options_block` so the intervention policy can reinject them.
pub fn build_prompt_with(
    sample: &TomSample,
    variant: PromptVariant,
    style: &PromptStyle,
) -> Result<PromptSpec, BenchmarkError> {
    let options_block = render_options_block(sample.benchmark, &sample.options);
    let has_note = sample.deception.unwrap_or(false);
    let mut user = String::new();
    user.push_str(preamble(sample.benchmark, has_note));
    user.push_str("\n\n");
    user.push_str(&sample.context);
    user.push_str("\n\nQuestion: ");
    user.push_str(&sample.question);

    match variant {
        PromptVariant::WithOptions | PromptVariant::Cot => {
            user.push_str("\n\nChoices: ");
            user.push_str(&options_block);
            user.push_str(
                "\n\nFirst give step-by-step analysis about the question. Then output the answer in the form \"Answer: <letter>\".",
            );
            if variant == PromptVariant::Cot {
                user.push_str("\n\n");
                user.push_str(&style.cot_instruction);
            }
        }
        PromptVariant::NoOptions => {
            if sample.gold_text.is_none() || !sample.benchmark.is_extractive() {
                return Err(BenchmarkError::VariantUnsupported(format!(
                    "no_options requires an extractive benchmark with gold_text; {} sample {} has none",
                    sample.benchmark.as_str(),
                    sample.id
                )));
            }
            user.push_str(
                "\n\nFirst give step-by-step analysis about the question. Then output the exact answer in the form \"Answer: <answer>\". Answer directly; no candidate options are provided.",
            );
        }
        PromptVariant::T2mBase => {
            user.push_str(
                "\n\nFirst give step-by-step analysis about the question. Then output the answer.",
            );
        }
    }

    Ok(PromptSpec {
        system: String::new(),
        user,
        options_block,
        variant,
    })
}
