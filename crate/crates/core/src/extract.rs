//! Small text extractors shared by several stages.

use num_bigint::BigInt;
use once_cell::sync::Lazy;
use regex::Regex;

static FENCE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?s)```[A-Za-z0-9_+\-]*[ \t]*\r?\n(.*?)```").unwrap());
static INTEGER: Lazy<Regex> = Lazy::new(|| Regex::new(r"-?\d+").unwrap());

/// Returns the body of the last fenced code block in `reply`, if any.
/// Blank bodies do not count.
pub fn extract_code(reply: &str) -> Option<String> {
    FENCE
        .captures_iter(reply)
        .filter_map(|c| c.get(1))
        .map(|m| m.as_str())
        .filter(|body| !body.trim().is_empty())
        .last()
        .map(str::to_owned)
}

/// The last integer literal appearing in `text`.
pub fn last_integer(text: &str) -> Option<BigInt> {
    INTEGER
        .find_iter(text)
        .last()
        .and_then(|m| m.as_str().parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_block_extraction() {
        let reply = "Idea first.\n```python\nprint(1)\n```\nthen\n```\nprint(2)\n```\n";
        assert_eq!(extract_code(reply).as_deref(), Some("print(2)\n"));
        assert_eq!(extract_code("no code here"), None);
        assert_eq!(extract_code("```python\n   \n```"), None);
        assert_eq!(
            extract_code("```py\r\nx = 1\r\n```").as_deref(),
            Some("x = 1\r\n")
        );
    }

    #[test]
    fn last_integer_rule() {
        assert_eq!(last_integer("8"), Some(BigInt::from(8)));
        assert_eq!(last_integer("the next term is 8"), Some(BigInt::from(8)));
        assert_eq!(last_integer("after 3, 5 comes -13."), Some(BigInt::from(-13)));
        assert_eq!(last_integer("unknown"), None);
        assert_eq!(
            last_integer("123456789012345678901234567890"),
            Some("123456789012345678901234567890".parse().unwrap())
        );
    }
}
