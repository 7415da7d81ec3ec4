//! `{name}` placeholder templates shared by pipeline graphs and role prompts.
//! `{{` and `}}` are literal braces.

use std::collections::BTreeSet;

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Placeholder names used by `template`.
pub fn placeholders(template: &str) -> Result<BTreeSet<String>, String> {
    let mut names = BTreeSet::new();
    scan(template, |name| {
        names.insert(name.to_string());
        Ok(String::new())
    })?;
    Ok(names)
}

/// Replaces each placeholder with `lookup(name)`. Unknown names are an error.
pub fn fill<'a, F>(template: &str, lookup: F) -> Result<String, String>
where
    F: Fn(&str) -> Option<&'a str>,
{
    scan(template, |name| {
        lookup(name)
            .map(str::to_string)
            .ok_or_else(|| format!("unknown placeholder {{{name}}}"))
    })
}

fn scan<F>(template: &str, mut on_name: F) -> Result<String, String>
where
    F: FnMut(&str) -> Result<String, String>,
{
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else if tail.starts_with('}') {
            return Err("unmatched `}`".into());
        } else {
            let close = tail
                .find('}')
                .ok_or_else(|| "unterminated placeholder".to_string())?;
            let name = &tail[1..close];
            if !is_ident(name) {
                return Err(format!("invalid placeholder name `{name}`"));
            }
            out.push_str(&on_name(name)?);
            rest = &tail[close + 1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}
