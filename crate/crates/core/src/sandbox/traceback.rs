use std::sync::LazyLock;

use regex::Regex;

use super::StructuredError;

static FRAME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^\s*File "(?P<file>[^"]*)", line (?P<line>\d+)(?:, in (?P<func>\S.*?))?\s*$"#).expect("regex")
});

static EXC_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?P<ty>[A-Za-z_][A-Za-z0-9_.]*)(?::\s?(?P<msg>.*))?$").expect("regex"));

static EXC_SUFFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(Error|Exception|Exit|Interrupt|Warning|Iteration)$").expect("regex"));

/// Parse a standard interpreter traceback into a [`StructuredError`].
///
/// Takes the innermost frame's line and function and the final exception
/// line. Text that does not look like a traceback degrades to
/// `UnknownError` carrying the raw input.
pub fn parse_traceback(text: &str) -> StructuredError {
    let lines: Vec<&str> = text.lines().collect();

    let mut last_frame = None;
    for (idx, line) in lines.iter().enumerate() {
        if let Some(cap) = FRAME.captures(line) {
            last_frame = Some((idx, cap));
        }
    }

    let search_from = last_frame.as_ref().map_or(0, |(idx, _)| idx + 1);
    let exc = lines
        .iter()
        .enumerate()
        .skip(search_from)
        .filter(|(_, l)| !l.starts_with(char::is_whitespace))
        .find_map(|(idx, l)| {
            let cap = EXC_LINE.captures(l.trim_end())?;
            let ty = cap.name("ty").expect("group").as_str();
            let short = ty.rsplit('.').next().unwrap_or(ty);
            // Without a frame to anchor on, only accept names shaped like exceptions.
            if last_frame.is_none() && !EXC_SUFFIX.is_match(short) {
                return None;
            }
            Some((idx, short.to_string(), cap.name("msg").map(|m| m.as_str().to_string())))
        });

    let Some((exc_idx, error_type, first_msg)) = exc else {
        return StructuredError {
            error_type: "UnknownError".to_string(),
            message: text.to_string(),
            line: None,
            function: None,
            traceback_text: text.to_string(),
        };
    };

    let mut message = first_msg.unwrap_or_default();
    for extra in &lines[exc_idx + 1..] {
        message.push('\n');
        message.push_str(extra);
    }
    let message = message.trim_end().to_string();

    let (line, function) = match last_frame {
        Some((_, cap)) => (
            cap["line"].parse::<u32>().ok().filter(|n| *n > 0),
            cap.name("func").map(|f| f.as_str().to_string()),
        ),
        None => (None, None),
    };

    StructuredError {
        error_type,
        message,
        line,
        function,
        traceback_text: text.to_string(),
    }
}
