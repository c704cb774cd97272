//! Versioned prompt templates, compiled in from `prompts/`.
//!
//! Placeholders are `{{name}}`. Every template opens with a `TASK:` line so
//! that transcripts and mock fixtures can tell the stages apart.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub version: u32,
    pub body: &'static str,
}

impl Template {
    /// `name@vN`, recorded alongside generated records for provenance.
    pub fn id(&self) -> String {
        format!("{}@v{}", self.name, self.version)
    }

    /// Substitutes each `{{key}}`. Unknown placeholders are left in place.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.body.to_string();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }
}

pub const REFORMULATE: Template = Template {
    name: "reformulate",
    version: 1,
    body: include_str!("../prompts/reformulate.v1.txt"),
};

pub const KEY_EVENTS: Template = Template {
    name: "key_events",
    version: 1,
    body: include_str!("../prompts/key_events.v1.txt"),
};

pub const EXCLUSIVITY: Template = Template {
    name: "exclusivity",
    version: 1,
    body: include_str!("../prompts/exclusivity.v1.txt"),
};

pub const FORECAST_GEN: Template = Template {
    name: "forecast_gen",
    version: 1,
    body: include_str!("../prompts/forecast_gen.v1.txt"),
};

pub const ESTIMATE: Template = Template {
    name: "estimate",
    version: 1,
    body: include_str!("../prompts/estimate.v1.txt"),
};

pub const FACT_CHECK: Template = Template {
    name: "fact_check",
    version: 1,
    body: include_str!("../prompts/fact_check.v1.txt"),
};

pub const FORMAT_REMINDER: &str =
    "\nFORMAT REMINDER: your previous answer could not be parsed. Follow the answer format exactly.\n";

/// Renders items as a `- ` list, or `(none)` when empty.
pub(crate) fn bullet_list<S: AsRef<str>>(items: &[S]) -> String {
    if items.is_empty() {
        return "(none)".into();
    }
    items
        .iter()
        .map(|s| format!("- {}", s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders items as a `[n] ` numbered list starting at 1, or `(none)`.
pub(crate) fn numbered_list<S: AsRef<str>>(items: &[S]) -> String {
    if items.is_empty() {
        return "(none)".into();
    }
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("[{}] {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Value of the first `KEY: value` line, trimmed. Keys match exactly after
/// leading whitespace and markdown emphasis are stripped.
pub(crate) fn field_value(text: &str, key: &str) -> Option<String> {
    text.lines().find_map(|line| {
        let line = line.trim_start().trim_start_matches(['*', '#', ' ']);
        let rest = line.strip_prefix(key)?.trim_start().strip_prefix(':')?;
        Some(rest.trim().trim_matches('*').trim().to_string())
    })
}

/// The run of `- item` lines directly after a `HEADER:` line. A missing
/// header yields an empty list.
pub(crate) fn section_items(text: &str, header: &str) -> Vec<String> {
    let mut lines = text.lines().skip_while(|l| l.trim() != format!("{header}:"));
    if lines.next().is_none() {
        return Vec::new();
    }
    lines
        .map(str::trim)
        .take_while(|l| l.starts_with('-') || l.starts_with('*'))
        .map(|l| l.trim_start_matches(['-', '*']).trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}
