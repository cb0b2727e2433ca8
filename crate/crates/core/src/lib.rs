//! Self-healing service bindings.
//!
//! Clients talk to services through [`stub::VirtualStub`]s. When a bound
//! service crashes and comes back, or moves to another endpoint, the stub
//! notices the failed call, looks the service up again, refreshes the
//! [`cache::StubCache`] and repeats the call, so the caller never sees the
//! stale reference. Bindings are created by [`policy`] rules reacting to
//! context events, through [`reconfig`] and [`adapt`].
//!
//! [`bench`] runs the measurement scenarios behind the `bench` binary.

pub mod adapt;
pub mod bench;
pub mod cache;
pub mod metrics;
pub mod policy;
pub mod reconfig;
pub mod registry;
pub mod service;
pub mod stub;
pub mod transport;
pub mod wire;

pub use cache::StubCache;
pub use metrics::{RepairCause, RepairEvent};
pub use reconfig::UserComponent;
pub use registry::{RegistryClient, RegistryServer};
pub use service::{ServiceDescriptor, ServiceHost, ServiceKind};
pub use stub::{RepairPolicy, Strategy, VirtualStub};
pub use transport::Transport;
pub use wire::{ArgValue, Endpoint, ErrorCode, Message, StubRecord};
