//! Users and their role-keyed bindings to services.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::cache::StubCache;
use crate::stub::{StubError, VirtualStub};
use crate::wire::ArgValue;

#[derive(Debug, Error)]
pub enum BindError {
    #[error("no binding for role {0:?}")]
    UnboundRole(String),
    #[error("binding request needs a nonempty role and service name")]
    InvalidRequest,
    #[error(transparent)]
    Stub(#[from] StubError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BindingRequest {
    pub role: String,
    pub service_name: String,
}

impl BindingRequest {
    pub fn new(
        role: impl Into<String>,
        service_name: impl Into<String>,
    ) -> Result<Self, BindError> {
        let (role, service_name) = (role.into(), service_name.into());
        if role.is_empty() || service_name.is_empty() {
            return Err(BindError::InvalidRequest);
        }
        Ok(BindingRequest { role, service_name })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BindingOutcome {
    Bound,
    NotFound,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BindingReport {
    pub entries: Vec<(BindingRequest, BindingOutcome)>,
}

impl BindingReport {
    pub fn all_bound(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, o)| *o == BindingOutcome::Bound)
    }
}

/// A user of the environment: preferences plus one binding per role.
#[derive(Debug)]
pub struct UserComponent {
    user_id: String,
    location: RwLock<String>,
    preferences: RwLock<HashMap<String, ArgValue>>,
    bindings: RwLock<HashMap<String, Arc<VirtualStub>>>,
    mutation: Mutex<()>,
}

impl UserComponent {
    pub fn new(user_id: impl Into<String>, location: impl Into<String>) -> Self {
        UserComponent {
            user_id: user_id.into(),
            location: RwLock::new(location.into()),
            preferences: RwLock::default(),
            bindings: RwLock::default(),
            mutation: Mutex::new(()),
        }
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn location(&self) -> String {
        self.location.read().clone()
    }

    pub fn set_location(&self, location: impl Into<String>) {
        let _m = self.mutation.lock();
        *self.location.write() = location.into();
    }

    pub fn set_preference(&self, key: impl Into<String>, value: ArgValue) {
        let _m = self.mutation.lock();
        self.preferences.write().insert(key.into(), value);
    }

    pub fn get_preference(&self, key: &str) -> Option<ArgValue> {
        self.preferences.read().get(key).cloned()
    }

    pub fn binding(&self, role: &str) -> Option<Arc<VirtualStub>> {
        self.bindings.read().get(role).cloned()
    }

    pub fn roles(&self) -> Vec<String> {
        let mut roles: Vec<_> = self.bindings.read().keys().cloned().collect();
        roles.sort();
        roles
    }

    /// Install `stub` at `role`, replacing any previous binding in one step.
    pub fn bind(&self, role: impl Into<String>, stub: Arc<VirtualStub>) {
        let _m = self.mutation.lock();
        self.bindings.write().insert(role.into(), stub);
    }

    /// Send through the binding for `role`. Repair, if any, happens below.
    pub fn user_send(
        &self,
        role: &str,
        method: &str,
        args: &[ArgValue],
    ) -> Result<ArgValue, BindError> {
        let stub = self
            .binding(role)
            .ok_or_else(|| BindError::UnboundRole(role.to_string()))?;
        Ok(stub.invoke_method(method, args)?)
    }
}

/// Obtain a stub for each request from the cache and install it on the user.
/// Unknown services are reported per request; the rest are still bound.
pub fn reconfigure(
    user: &UserComponent,
    cache: &StubCache,
    requests: &[BindingRequest],
) -> BindingReport {
    let mut report = BindingReport::default();
    for req in requests {
        let outcome = match cache.get_or_create(&req.service_name) {
            Ok(stub) => {
                user.bind(req.role.clone(), stub);
                BindingOutcome::Bound
            }
            Err(StubError::NotFound(_)) => BindingOutcome::NotFound,
            Err(e) => BindingOutcome::Failed(e.to_string()),
        };
        log::debug!(
            "{}: bind {} -> {}: {outcome:?}",
            user.user_id(),
            req.role,
            req.service_name
        );
        report.entries.push((req.clone(), outcome));
    }
    report
}
