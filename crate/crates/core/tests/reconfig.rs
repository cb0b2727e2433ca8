use std::sync::Arc;
use std::thread;

use healbind::bench::{follow_me_services, Testbed};
use healbind::reconfig::{reconfigure, BindError, BindingOutcome, BindingRequest, UserComponent};
use healbind::stub::{RepairPolicy, Strategy};
use healbind::wire::ArgValue;

fn boot() -> Testbed {
    Testbed::boot(
        &follow_me_services(),
        Default::default(),
        Strategy::VirtualStubRepair,
        RepairPolicy::default(),
    )
    .unwrap()
}

fn req(role: &str, svc: &str) -> BindingRequest {
    BindingRequest::new(role, svc).unwrap()
}

fn text(s: &str) -> ArgValue {
    ArgValue::Text(s.into())
}

#[test]
fn rebinding_moves_all_later_calls() {
    let tb = boot();
    let user = UserComponent::new("alice", "office");
    assert!(reconfigure(&user, &tb.cache, &[req("display", "screen-office")]).all_bound());
    assert_eq!(
        user.user_send("display", "display", &[text("a")]).unwrap(),
        text("screen-office displayed: a")
    );
    assert!(reconfigure(&user, &tb.cache, &[req("display", "screen-kitchen")]).all_bound());
    let office_before = tb.host("screen-office").served();
    for i in 0..5 {
        let v = user
            .user_send("display", "display", &[text(&i.to_string())])
            .unwrap();
        assert_eq!(v, text(&format!("screen-kitchen displayed: {i}")));
    }
    assert_eq!(tb.host("screen-office").served(), office_before);
    assert_eq!(tb.host("screen-kitchen").served(), 5);
}

#[test]
fn partial_failure_binds_the_rest() {
    let tb = boot();
    let user = UserComponent::new("bob", "hall");
    let report = reconfigure(
        &user,
        &tb.cache,
        &[
            req("print", "printer"),
            req("display", "screen-garage"),
            req("light", "light"),
        ],
    );
    let outcomes: Vec<_> = report.entries.iter().map(|(_, o)| o.clone()).collect();
    assert_eq!(
        outcomes,
        [
            BindingOutcome::Bound,
            BindingOutcome::NotFound,
            BindingOutcome::Bound
        ]
    );
    assert!(!report.all_bound());
    assert_eq!(user.roles(), ["light", "print"]);
    assert!(matches!(
        user.user_send("display", "display", &[text("x")]),
        Err(BindError::UnboundRole(_))
    ));
    assert!(user.user_send("print", "print", &[text("doc")]).is_ok());
}

#[test]
fn failed_rebind_keeps_previous_binding() {
    let tb = boot();
    let user = UserComponent::new("carol", "office");
    reconfigure(&user, &tb.cache, &[req("display", "screen-office")]);
    let report = reconfigure(&user, &tb.cache, &[req("display", "screen-attic")]);
    assert_eq!(report.entries[0].1, BindingOutcome::NotFound);
    let v = user
        .user_send("display", "display", &[text("still")])
        .unwrap();
    assert_eq!(v, text("screen-office displayed: still"));
}

#[test]
fn concurrent_replacement_sees_old_or_new_only() {
    let tb = boot();
    let user = Arc::new(UserComponent::new("dave", "office"));
    reconfigure(&user, &tb.cache, &[req("display", "screen-office")]);
    thread::scope(|s| {
        let u = user.clone();
        let cache = tb.cache.clone();
        s.spawn(move || {
            for i in 0..20 {
                let svc = if i % 2 == 0 {
                    "screen-kitchen"
                } else {
                    "screen-office"
                };
                assert!(reconfigure(&u, &cache, &[req("display", svc)]).all_bound());
            }
        });
        for _ in 0..4 {
            let u = user.clone();
            s.spawn(move || {
                for _ in 0..25 {
                    let v = u.user_send("display", "display", &[text("m")]).unwrap();
                    let v = v.as_text().unwrap().to_string();
                    assert!(
                        v == "screen-office displayed: m" || v == "screen-kitchen displayed: m",
                        "{v}"
                    );
                }
            });
        }
    });
    let total = tb.host("screen-office").served() + tb.host("screen-kitchen").served();
    assert_eq!(total, 100);
}

#[test]
fn bound_stub_survives_restart() {
    let tb = boot();
    let user = UserComponent::new("erin", "office");
    reconfigure(&user, &tb.cache, &[req("print", "printer")]);
    tb.crash_restart("printer").unwrap();
    let v = user.user_send("print", "print", &[text("memo")]).unwrap();
    assert_eq!(v, text("printer printed: memo"));
    assert_eq!(tb.drain_events().len(), 1);
    assert!(tb.cache_coherent("printer"));
}
