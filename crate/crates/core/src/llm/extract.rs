use serde_json::Value;

use super::LlmError;

const FENCE: &str = "```";

/// Contents of the first fenced code block, or the whole trimmed response
/// when there is no fence.
pub fn extract_code(response: &str) -> Result<String, LlmError> {
    let code = match first_fenced_block(response) {
        Some(block) => tidy(block),
        None => response.trim().to_string(),
    };
    if code.trim().is_empty() {
        return Err(LlmError::EmptyCode);
    }
    Ok(code)
}

/// First JSON object in the response, fenced or bare.
pub fn extract_json(response: &str) -> Result<Value, LlmError> {
    let fenced = first_fenced_block(response);
    let candidates = fenced.into_iter().chain(std::iter::once(response));
    let mut first_error = None;
    for text in candidates {
        for (idx, _) in text.match_indices('{') {
            let mut stream = serde_json::Deserializer::from_str(&text[idx..]).into_iter::<Value>();
            match stream.next() {
                Some(Ok(value @ Value::Object(_))) => return Ok(value),
                Some(Err(e)) => {
                    first_error.get_or_insert_with(|| e.to_string());
                }
                _ => {}
            }
        }
    }
    match first_error {
        Some(e) => Err(LlmError::MalformedJson(e)),
        None => Err(LlmError::NoJsonFound),
    }
}

/// Body of the first ``` block; the info string on the opening line is
/// dropped. An unterminated fence runs to the end of the text.
fn first_fenced_block(text: &str) -> Option<&str> {
    let open = text.find(FENCE)?;
    let after_open = &text[open + FENCE.len()..];
    let body_start = after_open.find('\n')? + 1;
    let body = &after_open[body_start..];
    let end = body.find(FENCE).unwrap_or(body.len());
    Some(&body[..end])
}

fn tidy(block: &str) -> String {
    let trimmed_end = block.trim_end();
    let mut lines = trimmed_end.lines().skip_while(|l| l.trim().is_empty()).peekable();
    let mut out = String::with_capacity(trimmed_end.len());
    while let Some(line) = lines.next() {
        out.push_str(line);
        if lines.peek().is_some() {
            out.push('\n');
        }
    }
    out
}
