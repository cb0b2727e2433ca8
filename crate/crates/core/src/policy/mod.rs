//! Event-condition-action policies.
//!
//! Policy files are UTF-8, one policy per block, `#` starts a comment line:
//!
//! ```text
//! policy follow_display
//! on location_changed
//! when event.location != ""
//! do bind display "screen-${location}"
//!
//! policy reading_light
//! on activity_changed
//! when event.activity == "reading"
//! do adapt light set_brightness pref(reading_brightness)
//! ```
//!
//! `when` is optional (defaults to `true`). A policy may carry several `do`
//! lines; they run in order.

mod condition;
mod engine;

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::wire::{classify_arg, ArgValue};

pub use condition::{Bindings, CmpOp, Condition, MapBindings, Term};
pub use engine::{
    event_queue, ActionOutcome, ContextEvent, EventSender, ExecutedAction, PolicyEngine,
    ResolvedAction,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate policy id {0:?}")]
    DuplicateId(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("event name and subject must be nonempty")]
    InvalidEvent,
}

/// A service name with `${ATTR}` placeholders filled from event attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template(String);

impl Template {
    pub fn parse(src: &str) -> Result<Template, String> {
        let mut rest = src;
        while let Some(start) = rest.find("${") {
            let after = &rest[start + 2..];
            let end = after
                .find('}')
                .ok_or_else(|| format!("unclosed placeholder in {src:?}"))?;
            let name = &after[..end];
            if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
                return Err(format!("bad placeholder ${{{name}}} in {src:?}"));
            }
            rest = &after[end + 1..];
        }
        Ok(Template(src.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Substitute every `${NAME}` with the attribute's value. Text outside
    /// placeholders is copied verbatim.
    pub fn expand(&self, attrs: &HashMap<String, ArgValue>) -> Result<String, String> {
        let mut out = String::with_capacity(self.0.len());
        let mut rest = self.0.as_str();
        while let Some(start) = rest.find("${") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find('}').expect("validated at parse time");
            let name = &after[..end];
            let value = attrs
                .get(name)
                .ok_or_else(|| format!("event has no attribute {name:?}"))?;
            out.push_str(&value.to_string());
            rest = &after[end + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueExpr {
    Literal(ArgValue),
    Pref(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Bind {
        role: String,
        service_template: Template,
    },
    Adapt {
        role: String,
        method: String,
        value_expr: ValueExpr,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub id: String,
    pub on: String,
    pub when: Condition,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PolicySet {
    policies: Vec<Policy>,
}

impl PolicySet {
    pub fn new(policies: Vec<Policy>) -> Result<PolicySet, PolicyError> {
        let mut seen = HashSet::new();
        for p in &policies {
            if !seen.insert(p.id.as_str()) {
                return Err(PolicyError::DuplicateId(p.id.clone()));
            }
        }
        Ok(PolicySet { policies })
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Policy> {
        self.policies.iter().find(|p| p.id == id)
    }
}

/// Parse a policy file.
pub fn load_policies(source: &str) -> Result<PolicySet, PolicyError> {
    struct Draft {
        id: String,
        line: usize,
        on: Option<String>,
        when: Option<Condition>,
        actions: Vec<Action>,
    }

    fn finish(d: Draft) -> Result<Policy, PolicyError> {
        let on = d.on.ok_or_else(|| PolicyError::Parse {
            line: d.line,
            message: format!("policy {} has no 'on' line", d.id),
        })?;
        if d.actions.is_empty() {
            return Err(PolicyError::Parse {
                line: d.line,
                message: format!("policy {} has no 'do' line", d.id),
            });
        }
        Ok(Policy {
            id: d.id,
            on,
            when: d.when.unwrap_or_default(),
            actions: d.actions,
        })
    }

    let mut policies = Vec::new();
    let mut current: Option<Draft> = None;

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        let err = |message: String| PolicyError::Parse {
            line: line_no,
            message,
        };
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if let Some(d) = current.take() {
                policies.push(finish(d)?);
            }
            continue;
        }
        let (keyword, rest) = line
            .split_once(char::is_whitespace)
            .map(|(k, r)| (k, r.trim()))
            .unwrap_or((line, ""));
        if keyword == "policy" {
            if let Some(d) = current.take() {
                policies.push(finish(d)?);
            }
            if rest.is_empty() || rest.contains(char::is_whitespace) {
                return Err(err("expected 'policy ID'".into()));
            }
            current = Some(Draft {
                id: rest.to_string(),
                line: line_no,
                on: None,
                when: None,
                actions: Vec::new(),
            });
            continue;
        }
        let draft = current
            .as_mut()
            .ok_or_else(|| err(format!("'{keyword}' outside a policy block")))?;
        match keyword {
            "on" => {
                if draft.on.is_some() {
                    return Err(err("duplicate 'on' line".into()));
                }
                if rest.is_empty() || rest.contains(char::is_whitespace) {
                    return Err(err("expected 'on EVENT'".into()));
                }
                draft.on = Some(rest.to_string());
            }
            "when" => {
                if draft.when.is_some() {
                    return Err(err("duplicate 'when' line".into()));
                }
                draft.when = Some(Condition::parse(rest).map_err(err)?);
            }
            "do" => draft.actions.push(parse_action(rest).map_err(err)?),
            other => return Err(err(format!("unknown keyword '{other}'"))),
        }
    }
    if let Some(d) = current.take() {
        policies.push(finish(d)?);
    }
    PolicySet::new(policies)
}

fn parse_action(src: &str) -> Result<Action, String> {
    let words = split_words(src)?;
    match words.as_slice() {
        [verb, role, template] if verb.text == "bind" => Ok(Action::Bind {
            role: role.text.clone(),
            service_template: Template::parse(&template.text)?,
        }),
        [verb, role, method, value] if verb.text == "adapt" => Ok(Action::Adapt {
            role: role.text.clone(),
            method: method.text.clone(),
            value_expr: parse_value(value)?,
        }),
        _ => Err(format!(
            "expected 'bind ROLE TEMPLATE' or 'adapt ROLE METHOD VALUE', found {src:?}"
        )),
    }
}

fn parse_value(word: &Word) -> Result<ValueExpr, String> {
    if word.quoted {
        return Ok(ValueExpr::Literal(ArgValue::Text(word.text.clone())));
    }
    if let Some(key) = word
        .text
        .strip_prefix("pref(")
        .and_then(|r| r.strip_suffix(')'))
    {
        if key.is_empty() {
            return Err("empty pref() key".into());
        }
        return Ok(ValueExpr::Pref(key.to_string()));
    }
    Ok(ValueExpr::Literal(classify_arg(&word.text)))
}

struct Word {
    text: String,
    quoted: bool,
}

/// Split on whitespace, keeping double-quoted spans (with `\"` escapes) as
/// single words.
fn split_words(src: &str) -> Result<Vec<Word>, String> {
    let mut words = Vec::new();
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut w = String::new();
            loop {
                match chars.next() {
                    None => return Err("unterminated quoted string".into()),
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some(e @ ('"' | '\\')) => w.push(e),
                        _ => return Err("bad escape in quoted string".into()),
                    },
                    Some(ch) => w.push(ch),
                }
            }
            words.push(Word {
                text: w,
                quoted: true,
            });
        } else {
            let mut w = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() {
                    break;
                }
                w.push(ch);
                chars.next();
            }
            words.push(Word {
                text: w,
                quoted: false,
            });
        }
    }
    Ok(words)
}

/// The follow-me display policy and the reading light policy.
pub const FOLLOW_ME_POLICIES: &str = r#"# display output follows the user between rooms
policy follow_display
on location_changed
when event.location != ""
do bind display "screen-${location}"

policy reading_light
on activity_changed
when event.activity == "reading"
do adapt light set_brightness pref(reading_brightness)
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_follow_me_file() {
        let set = load_policies(FOLLOW_ME_POLICIES).unwrap();
        assert_eq!(set.len(), 2);
        let p = set.get("follow_display").unwrap();
        assert_eq!(p.on, "location_changed");
        assert_eq!(
            p.actions,
            vec![Action::Bind {
                role: "display".into(),
                service_template: Template("screen-${location}".into()),
            }]
        );
        let p = set.get("reading_light").unwrap();
        assert_eq!(
            p.actions,
            vec![Action::Adapt {
                role: "light".into(),
                method: "set_brightness".into(),
                value_expr: ValueExpr::Pref("reading_brightness".into()),
            }]
        );
    }

    #[test]
    fn duplicate_id_named() {
        let src = "policy a\non e\ndo bind r s\n\npolicy a\non e\ndo bind r t\n";
        assert_eq!(
            load_policies(src),
            Err(PolicyError::DuplicateId("a".into()))
        );
    }

    #[test]
    fn empty_and_comment_only_files() {
        assert!(load_policies("").unwrap().is_empty());
        assert!(load_policies("# nothing here\n\n   \n").unwrap().is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("on x\n", 1),
            ("policy a\non e\nwhen event.x ==\ndo bind r s\n", 3),
            ("policy a\non e\ndo paint r s\n", 3),
            ("policy a\ndo bind r s\n", 1),
            ("policy a\non e\n", 1),
            ("policy a\non e\ndo bind r \"s-${\"\n", 3),
            ("policy a\non e\nfrobnicate\n", 3),
            ("policy a\non e\non f\ndo bind r s\n", 3),
        ];
        for (src, line) in cases {
            match load_policies(src) {
                Err(PolicyError::Parse { line: l, .. }) => assert_eq!(l, line, "{src:?}"),
                other => panic!("{src:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn adapt_literals_and_multiple_actions() {
        let src = "policy p\non e\ndo adapt light set_brightness 30\ndo adapt screen display \"42\"\ndo bind printer printer-1\n";
        let set = load_policies(src).unwrap();
        let actions = &set.policies()[0].actions;
        assert_eq!(actions.len(), 3);
        assert!(matches!(
            &actions[0],
            Action::Adapt {
                value_expr: ValueExpr::Literal(ArgValue::Int(30)),
                ..
            }
        ));
        assert!(
            matches!(&actions[1], Action::Adapt { value_expr: ValueExpr::Literal(ArgValue::Text(t)), .. } if t == "42")
        );
        assert!(
            matches!(&actions[2], Action::Bind { service_template, .. } if service_template.as_str() == "printer-1")
        );
        assert_eq!(set.policies()[0].when, Condition::Const(true));
    }

    #[test]
    fn template_expansion() {
        let mut attrs = HashMap::new();
        attrs.insert("location".to_string(), ArgValue::from("kitchen"));
        attrs.insert("floor".to_string(), ArgValue::Int(2));
        let t = Template::parse("screen-${location}-${floor}").unwrap();
        assert_eq!(t.expand(&attrs).unwrap(), "screen-kitchen-2");
        let plain = Template::parse("screen-$location {x}").unwrap();
        assert_eq!(plain.expand(&attrs).unwrap(), "screen-$location {x}");
        assert!(Template::parse("screen-${room").is_err());
        assert!(Template::parse("screen-${}").is_err());
        assert!(Template::parse("${missing}")
            .unwrap()
            .expand(&attrs)
            .is_err());
    }
}
