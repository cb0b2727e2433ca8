//! Generators and reference models shared by the integration tests and the
//! acceptance target. The reference models deliberately avoid the crate's own
//! helpers so that agreement means something.

#![allow(dead_code)]

use std::collections::HashMap;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use healbind::policy::{Condition, MapBindings};
use healbind::registry::RegistryTable;
use healbind::wire::{
    decode_frame, encode_frame, ArgValue, ControlAction, Endpoint, ErrorCode, InvokeRequest,
    Message, StubRecord,
};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

const ALPHABET: &[char] = &[
    'a', 'b', 'z', 'A', 'Q', '0', '7', ' ', '-', '_', '"', '\\', '/', '\n', '\t', '{', '}', ':',
    ',', 'é', 'ß', '漢', '🙂', '\u{0}', '\u{7f}',
];

pub fn text<R: Rng>(rng: &mut R, max_len: usize) -> String {
    let n = rng.random_range(0..=max_len);
    (0..n)
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())])
        .collect()
}

pub fn name<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(1..12);
    (0..n)
        .map(|_| {
            let c = rng.random_range(0..38u8);
            match c {
                0..=25 => (b'a' + c) as char,
                26..=35 => (b'0' + c - 26) as char,
                36 => '-',
                _ => '_',
            }
        })
        .collect()
}

pub fn u64_any<R: Rng>(rng: &mut R) -> u64 {
    match rng.random_range(0..4) {
        0 => 0,
        1 => u64::MAX,
        2 => rng.random_range(0..1000),
        _ => rng.random(),
    }
}

pub fn arg<R: Rng>(rng: &mut R) -> ArgValue {
    if rng.random_bool(0.5) {
        let v = match rng.random_range(0..4) {
            0 => i64::MIN,
            1 => i64::MAX,
            2 => rng.random_range(-100..100),
            _ => rng.random(),
        };
        ArgValue::Int(v)
    } else {
        ArgValue::Text(text(rng, 20))
    }
}

pub fn endpoint<R: Rng>(rng: &mut R) -> Endpoint {
    let host = match rng.random_range(0..3) {
        0 => "127.0.0.1".to_string(),
        1 => "localhost".to_string(),
        _ => format!("host-{}", name(rng)),
    };
    Endpoint::new(host, rng.random_range(1..=u16::MAX)).unwrap()
}

pub fn record<R: Rng>(rng: &mut R) -> StubRecord {
    StubRecord {
        service_name: name(rng),
        endpoint: endpoint(rng),
        incarnation: u64_any(rng),
    }
}

const CODES: [ErrorCode; 5] = [
    ErrorCode::InvalidReference,
    ErrorCode::NoSuchMethod,
    ErrorCode::BadArgs,
    ErrorCode::ServiceError,
    ErrorCode::NotFound,
];

/// A message of a uniformly chosen variant with random contents.
pub fn message<R: Rng>(rng: &mut R) -> Message {
    match rng.random_range(0..12) {
        0 => Message::InvokeRequest(InvokeRequest {
            id: u64_any(rng),
            service: name(rng),
            incarnation: u64_any(rng),
            method: name(rng),
            args: (0..rng.random_range(0..5)).map(|_| arg(rng)).collect(),
        }),
        1 => Message::InvokeResult {
            id: u64_any(rng),
            value: arg(rng),
        },
        2 => Message::InvokeError {
            id: u64_any(rng),
            code: CODES[rng.random_range(0..CODES.len())],
            detail: text(rng, 40),
        },
        3 => Message::Register {
            name: name(rng),
            endpoint: endpoint(rng),
            incarnation: u64_any(rng),
        },
        4 => Message::Lookup { name: name(rng) },
        5 => Message::LookupResult {
            record: record(rng),
        },
        6 => Message::NotFound { name: name(rng) },
        7 => Message::Unregister { name: name(rng) },
        8 => Message::Ack {},
        9 => Message::Control {
            action: ControlAction::Crash,
        },
        10 => Message::Control {
            action: ControlAction::Restart,
        },
        _ => Message::Control {
            action: ControlAction::Migrate {
                new_endpoint: endpoint(rng),
                leave_tracker: rng.random_bool(0.5),
            },
        },
    }
}

/// Encode then decode; the frame must be consumed exactly and come back equal.
pub fn roundtrip_ok(m: &Message) -> Result<(), String> {
    let bytes = encode_frame(m);
    let declared = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if declared + 4 != bytes.len() {
        return Err(format!(
            "prefix {declared} does not match body of {}",
            bytes.len() - 4
        ));
    }
    let (back, used) = decode_frame(&bytes).map_err(|e| format!("{m:?}: {e}"))?;
    if used != bytes.len() {
        return Err(format!("{m:?}: consumed {used} of {}", bytes.len()));
    }
    if &back != m {
        return Err(format!("{m:?} came back as {back:?}"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum RegOp {
    Register(String, Endpoint, u64),
    Unregister(String),
    Lookup(String),
}

pub fn reg_ops<R: Rng>(rng: &mut R, len: usize) -> Vec<RegOp> {
    // A small name pool keeps overwrites and removals frequent.
    let pool = ["a", "b", "c", "printer", "screen-1"];
    (0..len)
        .map(|_| {
            let n = pool[rng.random_range(0..pool.len())].to_string();
            match rng.random_range(0..3) {
                0 => RegOp::Register(n, endpoint(rng), u64_any(rng)),
                1 => RegOp::Unregister(n),
                _ => RegOp::Lookup(n),
            }
        })
        .collect()
}

/// Replay `ops` against a fresh registry through its message interface and
/// against a last-write-wins map; every reply must agree.
pub fn registry_matches_oracle(ops: &[RegOp]) -> Result<(), String> {
    let table = RegistryTable::new();
    let mut oracle: HashMap<String, (Endpoint, u64)> = HashMap::new();
    for (i, op) in ops.iter().enumerate() {
        match op {
            RegOp::Register(n, ep, inc) => {
                let reply = table.handle(Message::Register {
                    name: n.clone(),
                    endpoint: ep.clone(),
                    incarnation: *inc,
                });
                if reply != (Message::Ack {}) {
                    return Err(format!("op {i}: register replied {reply:?}"));
                }
                oracle.insert(n.clone(), (ep.clone(), *inc));
            }
            RegOp::Unregister(n) => {
                let reply = table.handle(Message::Unregister { name: n.clone() });
                if reply != (Message::Ack {}) {
                    return Err(format!("op {i}: unregister replied {reply:?}"));
                }
                oracle.remove(n);
            }
            RegOp::Lookup(n) => {
                let reply = table.handle(Message::Lookup { name: n.clone() });
                let expected = match oracle.get(n) {
                    Some((ep, inc)) => Message::LookupResult {
                        record: StubRecord {
                            service_name: n.clone(),
                            endpoint: ep.clone(),
                            incarnation: *inc,
                        },
                    },
                    None => Message::NotFound { name: n.clone() },
                };
                if reply != expected {
                    return Err(format!(
                        "op {i}: lookup {n} gave {reply:?}, expected {expected:?}"
                    ));
                }
            }
        }
    }
    if table.len() != oracle.len() {
        return Err(format!("final size {} vs {}", table.len(), oracle.len()));
    }
    Ok(())
}

/// Condition tree used only by the reference evaluator.
#[derive(Debug, Clone)]
pub enum Ast {
    Bool(bool),
    Cmp(Operand, &'static str, Operand),
    And(Box<Ast>, Box<Ast>),
    Or(Box<Ast>, Box<Ast>),
}

#[derive(Debug, Clone)]
pub enum Operand {
    Attr(&'static str),
    Pref(&'static str),
    Int(i64),
    Str(String),
}

const OPS: [&str; 6] = ["==", "!=", "<", "<=", ">", ">="];
const ATTRS: [&str; 4] = ["location", "lux", "floor", "absent"];
const PREFS: [&str; 3] = ["reading_light", "room", "missing"];
const WORDS: [&str; 4] = ["office", "kitchen", "say \"hi\"", "back\\slash"];

fn operand<R: Rng>(rng: &mut R) -> Operand {
    match rng.random_range(0..4) {
        0 => Operand::Attr(ATTRS[rng.random_range(0..ATTRS.len())]),
        1 => Operand::Pref(PREFS[rng.random_range(0..PREFS.len())]),
        2 => Operand::Int(rng.random_range(-3..80)),
        _ => Operand::Str(WORDS[rng.random_range(0..WORDS.len())].to_string()),
    }
}

pub fn ast<R: Rng>(rng: &mut R, depth: u32) -> Ast {
    let leaf = depth == 0 || rng.random_bool(0.3);
    if leaf {
        if rng.random_bool(0.1) {
            Ast::Bool(rng.random_bool(0.5))
        } else {
            Ast::Cmp(
                operand(rng),
                OPS[rng.random_range(0..OPS.len())],
                operand(rng),
            )
        }
    } else {
        let a = Box::new(ast(rng, depth - 1));
        let b = Box::new(ast(rng, depth - 1));
        if rng.random_bool(0.5) {
            Ast::And(a, b)
        } else {
            Ast::Or(a, b)
        }
    }
}

fn render_operand(o: &Operand) -> String {
    match o {
        Operand::Attr(n) => format!("event.{n}"),
        Operand::Pref(n) => format!("user.pref.{n}"),
        Operand::Int(v) => v.to_string(),
        Operand::Str(s) => format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"")),
    }
}

fn prec(a: &Ast) -> u8 {
    match a {
        Ast::Or(..) => 0,
        Ast::And(..) => 1,
        _ => 2,
    }
}

/// Render with only the parentheses precedence requires, plus random extra
/// ones; the tree shape is preserved.
pub fn render<R: Rng>(a: &Ast, rng: &mut R) -> String {
    let s = match a {
        Ast::Bool(b) => b.to_string(),
        Ast::Cmp(l, op, r) => format!("{} {op} {}", render_operand(l), render_operand(r)),
        Ast::And(l, r) | Ast::Or(l, r) => {
            let (kw, p) = if matches!(a, Ast::And(..)) {
                ("and", 1)
            } else {
                ("or", 0)
            };
            let mut ls = render(l, rng);
            if prec(l) < p {
                ls = format!("({ls})");
            }
            let mut rs = render(r, rng);
            if prec(r) <= p {
                rs = format!("({rs})");
            }
            format!("{ls} {kw} {rs}")
        }
    };
    if rng.random_bool(0.1) {
        format!("( {s} )")
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Val {
    I(i64),
    S(String),
}

fn lookup(o: &Operand, env: &MapBindings) -> Option<Val> {
    let conv = |v: &ArgValue| match v {
        ArgValue::Int(i) => Val::I(*i),
        ArgValue::Text(s) => Val::S(s.clone()),
    };
    match o {
        Operand::Attr(n) => env.attrs.get(*n).map(conv),
        Operand::Pref(n) => env.prefs.get(*n).map(conv),
        Operand::Int(i) => Some(Val::I(*i)),
        Operand::Str(s) => Some(Val::S(s.clone())),
    }
}

/// Reference semantics: missing operand is false, ints order numerically,
/// strings only test equality, an int never equals a string.
pub fn naive_eval(a: &Ast, env: &MapBindings) -> bool {
    match a {
        Ast::Bool(b) => *b,
        Ast::And(l, r) => naive_eval(l, env) & naive_eval(r, env),
        Ast::Or(l, r) => naive_eval(l, env) | naive_eval(r, env),
        Ast::Cmp(l, op, r) => {
            let (Some(x), Some(y)) = (lookup(l, env), lookup(r, env)) else {
                return false;
            };
            match (&x, &y) {
                (Val::I(p), Val::I(q)) => match *op {
                    "==" => p == q,
                    "!=" => p != q,
                    "<" => p < q,
                    "<=" => p <= q,
                    ">" => p > q,
                    ">=" => p >= q,
                    _ => unreachable!(),
                },
                (Val::S(p), Val::S(q)) => match *op {
                    "==" => p == q,
                    "!=" => p != q,
                    _ => false,
                },
                _ => *op == "!=",
            }
        }
    }
}

pub fn env<R: Rng>(rng: &mut R) -> MapBindings {
    let mut b = MapBindings::default();
    let value = |rng: &mut R| {
        if rng.random_bool(0.6) {
            ArgValue::Int(rng.random_range(-3..80))
        } else {
            ArgValue::Text(WORDS[rng.random_range(0..WORDS.len())].to_string())
        }
    };
    for a in &ATTRS[..3] {
        if rng.random_bool(0.8) {
            b.attrs.insert(a.to_string(), value(rng));
        }
    }
    for p in &PREFS[..2] {
        if rng.random_bool(0.8) {
            b.prefs.insert(p.to_string(), value(rng));
        }
    }
    b
}

/// Generate one condition and environment from `seed` and compare the parsed
/// evaluator with the reference.
pub fn condition_matches_oracle(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let tree = ast(&mut r, 4);
    let src = render(&tree, &mut r);
    let parsed = Condition::parse(&src).map_err(|e| format!("{src}: {e}"))?;
    for _ in 0..4 {
        let e = env(&mut r);
        let want = naive_eval(&tree, &e);
        let got = parsed.eval(&e);
        if want != got {
            return Err(format!("{src} under {e:?}: got {got}, expected {want}"));
        }
    }
    Ok(())
}

pub fn ms(n: u64) -> Duration {
    Duration::from_millis(n)
}

use healbind::registry::{RegistryClient, RegistryServer};
use healbind::service::{ServiceDescriptor, ServiceHost, ServiceKind};
use healbind::transport::{reserve_endpoint, Transport};

pub fn registry() -> RegistryServer {
    RegistryServer::start("127.0.0.1", 0).unwrap()
}

pub fn host(reg: &RegistryServer, name: &str, kind: ServiceKind) -> ServiceHost {
    host_with(reg, name, kind, &[], Transport::default())
}

pub fn host_with(
    reg: &RegistryServer,
    name: &str,
    kind: ServiceKind,
    params: &[(&str, ArgValue)],
    transport: Transport,
) -> ServiceHost {
    let mut desc = ServiceDescriptor::new(
        name,
        kind,
        reserve_endpoint("127.0.0.1").unwrap(),
        reserve_endpoint("127.0.0.1").unwrap(),
    )
    .unwrap();
    for (k, v) in params {
        desc = desc.with_param(*k, v.clone());
    }
    ServiceHost::start(desc, reg.endpoint(), transport).unwrap()
}

pub fn client(reg: &RegistryServer, transport: Transport) -> RegistryClient {
    RegistryClient::new(reg.endpoint().clone(), transport)
}

/// Send one raw invoke request to `record`'s endpoint.
pub fn raw_invoke(
    record: &StubRecord,
    incarnation: u64,
    method: &str,
    args: Vec<ArgValue>,
) -> Result<Message, healbind::transport::TransportError> {
    Transport::default().call(
        &record.endpoint,
        &Message::InvokeRequest(InvokeRequest {
            id: 42,
            service: record.service_name.clone(),
            incarnation,
            method: method.to_string(),
            args,
        }),
    )
}
