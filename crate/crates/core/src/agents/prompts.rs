//! Versioned prompt templates used by the pipeline stages. Bodies live in
//! `prompts/*.txt` at the crate root.

use once_cell::sync::Lazy;

use super::template::PromptTemplate;

macro_rules! template {
    ($ident:ident, $file:literal) => {
        pub static $ident: Lazy<PromptTemplate> = Lazy::new(|| {
            PromptTemplate::new(
                $file.trim_end_matches(".txt"),
                include_str!(concat!("../../prompts/", $file)),
            )
            .expect("bundled template parses")
        });
    };
}

template!(DENSITY_CHECK, "density_check.v1.txt");
template!(VERDICT_REMINDER, "verdict_reminder.v1.txt");
template!(PROBLEM_GENERATION, "problem_generation.v1.txt");
template!(DIRECT_ANSWER, "direct_answer.v1.txt");
template!(SOLUTION_DRAFT, "solution_draft.v1.txt");
template!(FAILURE_REASON, "failure_reason.v1.txt");
template!(REPAIR, "repair.v1.txt");
template!(ROLLOUT_SOLVE, "rollout_solve.v1.txt");
template!(NEXT_NUMBER, "next_number.v1.txt");
