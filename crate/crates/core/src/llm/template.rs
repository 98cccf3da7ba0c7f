use std::sync::LazyLock;

use regex::Regex;

use super::LlmError;

/// A shipped prompt template: a plain-text body with `{placeholder}` slots.
#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub name: &'static str,
    pub body: &'static str,
}

const TEMPLATES: &[Template] = &[
    Template {
        name: "codegen",
        body: include_str!("../../templates/codegen.txt"),
    },
    Template {
        name: "bug_report",
        body: include_str!("../../templates/bug_report.txt"),
    },
    Template {
        name: "memory_create_summary",
        body: include_str!("../../templates/memory_create_summary.txt"),
    },
    Template {
        name: "memory_update_summary",
        body: include_str!("../../templates/memory_update_summary.txt"),
    },
    Template {
        name: "code_fix",
        body: include_str!("../../templates/code_fix.txt"),
    },
];

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([a-z_][a-z0-9_]*)\}").expect("valid regex"));

pub fn template_names() -> impl Iterator<Item = &'static str> {
    TEMPLATES.iter().map(|t| t.name)
}

impl Template {
    pub fn get(name: &str) -> Option<&'static Template> {
        TEMPLATES.iter().find(|t| t.name == name)
    }

    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = PLACEHOLDER
            .captures_iter(self.body)
            .map(|c| c.get(1).expect("group").as_str())
            .collect();
        out.dedup();
        out
    }
}

/// Substitute every `{placeholder}` in the named template. Substituted
/// values are not rescanned, so code containing braces passes through.
pub fn render_template(name: &str, vars: &[(&str, &str)]) -> Result<String, LlmError> {
    let template = Template::get(name).ok_or_else(|| LlmError::UnknownTemplate(name.to_string()))?;
    let mut out = String::with_capacity(template.body.len() + 256);
    let mut last = 0;
    for cap in PLACEHOLDER.captures_iter(template.body) {
        let whole = cap.get(0).expect("match");
        let key = &cap[1];
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| LlmError::UnboundPlaceholder {
                template: name.to_string(),
                placeholder: key.to_string(),
            })?;
        out.push_str(&template.body[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template.body[last..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_templates_ship() {
        let names: Vec<_> = template_names().collect();
        assert_eq!(
            names,
            ["codegen", "bug_report", "memory_create_summary", "memory_update_summary", "code_fix"]
        );
    }

    #[test]
    fn codegen_contains_task_verbatim() {
        let p = render_template("codegen", &[("task", "divide two numbers")]).unwrap();
        assert!(p.contains("divide two numbers"));
        assert!(!p.contains("{task}"));
    }

    #[test]
    fn missing_var_is_unbound() {
        let err = render_template("codegen", &[]).unwrap_err();
        assert!(matches!(err, LlmError::UnboundPlaceholder { placeholder, .. } if placeholder == "task"));
    }

    #[test]
    fn unknown_template() {
        assert!(matches!(render_template("nope", &[]), Err(LlmError::UnknownTemplate(_))));
    }

    #[test]
    fn bug_report_asks_for_all_six_fields() {
        let vars = [
            ("code", "def f(a, b): return a / b"),
            ("args", "[10, 0]"),
            ("status", "exception"),
            ("error_type", "ZeroDivisionError"),
            ("error_message", "division by zero"),
            ("traceback", "..."),
        ];
        let p = render_template("bug_report", &vars).unwrap();
        for field in [
            "function_name",
            "error_type",
            "error_message",
            "context",
            "location",
            "expected_behavior",
            "actual_behavior",
        ] {
            assert!(p.contains(&format!("\"{field}\"")), "missing {field}");
        }
    }

    #[test]
    fn values_with_braces_are_not_rescanned() {
        let p = render_template("code_fix", &[("code", "x = {task}"), ("bug_report", "r"), ("memories", "m")])
            .unwrap();
        assert!(p.contains("x = {task}"));
    }

    #[test]
    fn every_template_renders_with_its_placeholders() {
        for t in TEMPLATES {
            let names = t.placeholders();
            let vars: Vec<(&str, &str)> = names.iter().map(|n| (*n, "v")).collect();
            render_template(t.name, &vars).unwrap();
        }
    }
}
