//! Service hosting: named services with per-start incarnation tokens,
//! dispatch by method name, and a control plane for crash, restart and
//! migration (optionally leaving a forwarding tracker behind).

mod host;
mod methods;

pub use host::{
    next_incarnation, ControlClient, HostError, Receipt, ServiceDescriptor, ServiceHost,
    TRACKER_UNREACHABLE,
};
pub use methods::{DispatchError, ServiceKind, ServiceState, DEFAULT_BRIGHTNESS};
