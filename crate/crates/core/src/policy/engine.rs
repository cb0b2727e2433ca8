use std::collections::HashMap;
use std::fmt;
use std::sync::mpsc;
use std::sync::Arc;

use parking_lot::RwLock;

use super::condition::Bindings;
use super::{Action, PolicyError, PolicySet, ValueExpr};
use crate::adapt::adapt;
use crate::cache::StubCache;
use crate::reconfig::{reconfigure, BindingOutcome, BindingRequest, UserComponent};
use crate::wire::ArgValue;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextEvent {
    pub name: String,
    pub subject: String,
    pub attrs: HashMap<String, ArgValue>,
}

impl ContextEvent {
    pub fn new(name: impl Into<String>, subject: impl Into<String>) -> ContextEvent {
        ContextEvent {
            name: name.into(),
            subject: subject.into(),
            attrs: HashMap::new(),
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<ArgValue>) -> Self {
        self.attrs.insert(key.into(), value.into());
        self
    }
}

struct EventScope<'a> {
    event: &'a ContextEvent,
    user: &'a UserComponent,
}

impl Bindings for EventScope<'_> {
    fn event_attr(&self, name: &str) -> Option<ArgValue> {
        self.event.attrs.get(name).cloned()
    }

    fn user_pref(&self, name: &str) -> Option<ArgValue> {
        self.user.get_preference(name)
    }
}

/// An action with its template or value expression already resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedAction {
    Bind {
        role: String,
        service_name: String,
    },
    Adapt {
        role: String,
        method: String,
        value: ArgValue,
    },
    /// Resolution itself failed (missing attribute or preference).
    Unresolved {
        role: String,
        reason: String,
    },
}

impl fmt::Display for ResolvedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResolvedAction::Bind { role, service_name } => write!(f, "bind {role} {service_name}"),
            ResolvedAction::Adapt {
                role,
                method,
                value,
            } => write!(f, "adapt {role} {method} {value}"),
            ResolvedAction::Unresolved { role, reason } => write!(f, "unresolved {role}: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionOutcome {
    Done,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutedAction {
    pub policy_id: String,
    pub action: ResolvedAction,
    pub outcome: ActionOutcome,
}

/// Evaluates policies against context events and drives binding and
/// adaptation for the event's subject.
pub struct PolicyEngine {
    policies: PolicySet,
    cache: Arc<StubCache>,
    users: RwLock<HashMap<String, Arc<UserComponent>>>,
}

impl PolicyEngine {
    pub fn new(policies: PolicySet, cache: Arc<StubCache>) -> Self {
        PolicyEngine {
            policies,
            cache,
            users: RwLock::default(),
        }
    }

    pub fn policies(&self) -> &PolicySet {
        &self.policies
    }

    pub fn cache(&self) -> &Arc<StubCache> {
        &self.cache
    }

    pub fn add_user(&self, user: Arc<UserComponent>) {
        self.users.write().insert(user.user_id().to_string(), user);
    }

    pub fn user(&self, user_id: &str) -> Option<Arc<UserComponent>> {
        self.users.read().get(user_id).cloned()
    }

    /// Ids of the policies `event` triggers for `user`, in declaration order.
    pub fn triggered(&self, event: &ContextEvent, user: &UserComponent) -> Vec<String> {
        let scope = EventScope { event, user };
        self.policies
            .policies()
            .iter()
            .filter(|p| p.on == event.name && p.when.eval(&scope))
            .map(|p| p.id.clone())
            .collect()
    }

    /// Run every triggered policy's actions in order. Individual action
    /// failures are recorded and do not stop processing.
    pub fn on_event(&self, event: &ContextEvent) -> Result<Vec<ExecutedAction>, PolicyError> {
        if event.name.is_empty() || event.subject.is_empty() {
            return Err(PolicyError::InvalidEvent);
        }
        let user = self
            .user(&event.subject)
            .ok_or_else(|| PolicyError::UnknownUser(event.subject.clone()))?;
        let mut executed = Vec::new();
        for id in self.triggered(event, &user) {
            let policy = self
                .policies
                .get(&id)
                .expect("triggered ids come from the set");
            for action in &policy.actions {
                let resolved = resolve(action, event, &user);
                let outcome = self.execute(&resolved, &user);
                log::debug!("{id}: {resolved} -> {outcome:?}");
                executed.push(ExecutedAction {
                    policy_id: id.clone(),
                    action: resolved,
                    outcome,
                });
            }
        }
        Ok(executed)
    }

    fn execute(&self, action: &ResolvedAction, user: &UserComponent) -> ActionOutcome {
        match action {
            ResolvedAction::Bind { role, service_name } => {
                let req = BindingRequest {
                    role: role.clone(),
                    service_name: service_name.clone(),
                };
                let report = reconfigure(user, &self.cache, &[req]);
                match &report.entries[0].1 {
                    BindingOutcome::Bound => ActionOutcome::Done,
                    BindingOutcome::NotFound => {
                        ActionOutcome::Failed(format!("service {service_name:?} not found"))
                    }
                    BindingOutcome::Failed(e) => ActionOutcome::Failed(e.clone()),
                }
            }
            ResolvedAction::Adapt {
                role,
                method,
                value,
            } => match adapt(user, role, method, value.clone()) {
                Ok(_) => ActionOutcome::Done,
                Err(e) => ActionOutcome::Failed(e.to_string()),
            },
            ResolvedAction::Unresolved { reason, .. } => ActionOutcome::Failed(reason.clone()),
        }
    }

    /// Process events from `rx` one at a time until every sender is dropped.
    pub fn run(
        &self,
        rx: mpsc::Receiver<ContextEvent>,
    ) -> Vec<Result<Vec<ExecutedAction>, PolicyError>> {
        rx.into_iter().map(|ev| self.on_event(&ev)).collect()
    }
}

fn resolve(action: &Action, event: &ContextEvent, user: &UserComponent) -> ResolvedAction {
    match action {
        Action::Bind {
            role,
            service_template,
        } => match service_template.expand(&event.attrs) {
            Ok(service_name) => ResolvedAction::Bind {
                role: role.clone(),
                service_name,
            },
            Err(reason) => ResolvedAction::Unresolved {
                role: role.clone(),
                reason,
            },
        },
        Action::Adapt {
            role,
            method,
            value_expr,
        } => {
            let value = match value_expr {
                ValueExpr::Literal(v) => Some(v.clone()),
                ValueExpr::Pref(key) => user.get_preference(key),
            };
            match value {
                Some(value) => ResolvedAction::Adapt {
                    role: role.clone(),
                    method: method.clone(),
                    value,
                },
                None => ResolvedAction::Unresolved {
                    role: role.clone(),
                    reason: format!("user has no preference for {value_expr:?}"),
                },
            }
        }
    }
}

/// Producer handle of an ordered event queue.
pub type EventSender = mpsc::Sender<ContextEvent>;

pub fn event_queue() -> (EventSender, mpsc::Receiver<ContextEvent>) {
    mpsc::channel()
}
