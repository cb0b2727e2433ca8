//! Behaviour adaptation through a bound service's virtual stub.

use crate::reconfig::{BindError, UserComponent};
use crate::wire::ArgValue;

/// Adjust one parameter of the service bound at `role` by calling its
/// single-argument setter `method`.
pub fn adapt(
    user: &UserComponent,
    role: &str,
    method: &str,
    value: ArgValue,
) -> Result<ArgValue, BindError> {
    user.user_send(role, method, &[value])
}
