//! Per-kind method tables and the volatile state behind them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::wire::{ArgKind, ArgValue, ErrorCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    Printer,
    Screen,
    Light,
    MovieInfo,
    Echo,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 5] = [
        ServiceKind::Printer,
        ServiceKind::Screen,
        ServiceKind::Light,
        ServiceKind::MovieInfo,
        ServiceKind::Echo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceKind::Printer => "printer",
            ServiceKind::Screen => "screen",
            ServiceKind::Light => "light",
            ServiceKind::MovieInfo => "movie_info",
            ServiceKind::Echo => "echo",
        }
    }

    /// `(method, parameter kinds)` for every method of this kind.
    pub fn methods(self) -> &'static [(&'static str, &'static [ArgKind])] {
        use ArgKind::*;
        match self {
            ServiceKind::Printer => &[("print", &[Text]), ("queue_len", &[])],
            ServiceKind::Screen => &[("display", &[Text])],
            ServiceKind::Light => &[("set_brightness", &[Int]), ("get_brightness", &[])],
            ServiceKind::MovieInfo => &[("now_showing", &[Text])],
            ServiceKind::Echo => &[("echo", &[Text]), ("add_one", &[Int])],
        }
    }

    pub fn signature(self, method: &str) -> Option<&'static [ArgKind]> {
        self.methods()
            .iter()
            .find(|(name, _)| *name == method)
            .map(|(_, params)| *params)
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServiceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown service kind {s:?}"))
    }
}

pub const DEFAULT_BRIGHTNESS: i64 = 50;

/// State of one service lifetime. Rebuilt from the initial parameters on
/// every restart.
#[derive(Debug, Clone)]
pub struct ServiceState {
    kind: ServiceKind,
    name: String,
    params: BTreeMap<String, ArgValue>,
    print_queue: Vec<String>,
    brightness: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchError {
    pub code: ErrorCode,
    pub detail: String,
}

impl DispatchError {
    fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        DispatchError {
            code,
            detail: detail.into(),
        }
    }
}

impl ServiceState {
    pub fn new(kind: ServiceKind, name: &str, params: &BTreeMap<String, ArgValue>) -> Self {
        let brightness = params
            .get("brightness")
            .and_then(ArgValue::as_int)
            .unwrap_or(DEFAULT_BRIGHTNESS);
        ServiceState {
            kind,
            name: name.to_string(),
            params: params.clone(),
            print_queue: Vec::new(),
            brightness,
        }
    }

    /// Check the call against the method table without running it.
    pub fn check(&self, method: &str, args: &[ArgValue]) -> Result<(), DispatchError> {
        let params = self.kind.signature(method).ok_or_else(|| {
            DispatchError::new(
                ErrorCode::NoSuchMethod,
                format!("{} has no method {method:?}", self.kind),
            )
        })?;
        let matches =
            params.len() == args.len() && params.iter().zip(args).all(|(p, a)| *p == a.kind());
        if !matches {
            return Err(DispatchError::new(
                ErrorCode::BadArgs,
                format!("{method} expects {params:?}, got {:?}", kinds(args)),
            ));
        }
        Ok(())
    }

    pub fn dispatch(&mut self, method: &str, args: &[ArgValue]) -> Result<ArgValue, DispatchError> {
        self.check(method, args)?;
        let text = |i: usize| args[i].as_text().unwrap_or_default().to_string();
        let int = |i: usize| args[i].as_int().unwrap_or_default();
        let value = match (self.kind, method) {
            (ServiceKind::Printer, "print") => {
                let doc = text(0);
                self.print_queue.push(doc.clone());
                ArgValue::Text(format!("{} printed: {doc}", self.name))
            }
            (ServiceKind::Printer, "queue_len") => ArgValue::Int(self.print_queue.len() as i64),
            (ServiceKind::Screen, "display") => {
                ArgValue::Text(format!("{} displayed: {}", self.name, text(0)))
            }
            (ServiceKind::Light, "set_brightness") => {
                let level = int(0);
                if !(0..=100).contains(&level) {
                    return Err(DispatchError::new(
                        ErrorCode::ServiceError,
                        format!("brightness {level} outside 0..=100"),
                    ));
                }
                self.brightness = level;
                ArgValue::Text(format!("{} brightness set to {level}", self.name))
            }
            (ServiceKind::Light, "get_brightness") => ArgValue::Int(self.brightness),
            (ServiceKind::MovieInfo, "now_showing") => {
                let cinema = text(0);
                match self.params.get(&cinema) {
                    Some(v) => ArgValue::Text(v.to_string()),
                    None => ArgValue::Text(format!("nothing showing at {cinema}")),
                }
            }
            (ServiceKind::Echo, "echo") => args[0].clone(),
            (ServiceKind::Echo, "add_one") => {
                let v = int(0);
                ArgValue::Int(v.checked_add(1).ok_or_else(|| {
                    DispatchError::new(ErrorCode::ServiceError, "add_one overflow")
                })?)
            }
            _ => unreachable!("method table and dispatch disagree on {method}"),
        };
        Ok(value)
    }
}

fn kinds(args: &[ArgValue]) -> Vec<ArgKind> {
    args.iter().map(ArgValue::kind).collect()
}
