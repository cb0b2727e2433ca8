mod common;

use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use healbind::bench::{follow_me_services, Testbed};
use healbind::cache::StubCache;
use healbind::metrics::NullSink;
use healbind::policy::{
    event_queue, load_policies, ActionOutcome, Condition, ContextEvent, PolicyEngine, PolicyError,
    ResolvedAction, Template, FOLLOW_ME_POLICIES,
};
use healbind::reconfig::{reconfigure, BindingRequest, UserComponent};
use healbind::stub::{RepairPolicy, Strategy};
use healbind::transport::Transport;
use healbind::wire::ArgValue;

#[test]
fn thousand_conditions_match_naive_evaluator() {
    for seed in 0..1000 {
        common::condition_matches_oracle(seed).unwrap();
    }
}

proptest! {
    #[test]
    fn condition_oracle(seed in any::<u64>()) {
        prop_assert_eq!(common::condition_matches_oracle(seed), Ok(()));
    }

    #[test]
    fn display_reparses_to_same_tree(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let src = common::render(&common::ast(&mut rng, 4), &mut rng);
        let once = Condition::parse(&src).unwrap();
        let twice = Condition::parse(&once.to_string()).unwrap();
        prop_assert_eq!(once, twice);
    }
}

#[test]
fn precedence_and_binds_tighter() {
    let b = healbind::policy::MapBindings::default();
    assert!(Condition::parse("true or false and false")
        .unwrap()
        .eval(&b));
    assert!(!Condition::parse("(true or false) and false")
        .unwrap()
        .eval(&b));
}

#[test]
fn malformed_conditions() {
    for src in [
        "",
        "event.x ==",
        "(true",
        "true)",
        "1 === 2",
        "event.x = 1",
        "\"open",
        "true and",
        "a b",
    ] {
        assert!(Condition::parse(src).is_err(), "{src:?}");
    }
}

/// A registry-less engine; `triggered` never touches services.
fn offline_engine(src: &str) -> PolicyEngine {
    let reg = common::registry();
    let cache = StubCache::new(
        common::client(&reg, Transport::default()),
        Arc::new(NullSink),
    );
    PolicyEngine::new(load_policies(src).unwrap(), Arc::new(cache))
}

#[test]
fn triggers_match_brute_force_scan() {
    let events = ["location_changed", "activity_changed", "light_level"];
    let mut rng = common::rng(31);
    for round in 0..200 {
        let n = rng.random_range(1..8);
        let mut trees = Vec::new();
        let mut src = String::new();
        for i in 0..n {
            let on = events[rng.random_range(0..events.len())];
            let tree = common::ast(&mut rng, 3);
            src.push_str(&format!(
                "policy p{i}\non {on}\nwhen {}\ndo bind r{i} \"svc\"\n\n",
                common::render(&tree, &mut rng)
            ));
            trees.push((format!("p{i}"), on, tree));
        }
        let engine = offline_engine(&src);
        for _ in 0..10 {
            let env = common::env(&mut rng);
            let name = events[rng.random_range(0..events.len())];
            let mut ev = ContextEvent::new(name, "u");
            for (k, v) in &env.attrs {
                ev = ev.with_attr(k.clone(), v.clone());
            }
            let user = UserComponent::new("u", "x");
            for (k, v) in &env.prefs {
                user.set_preference(k.clone(), v.clone());
            }
            let want: Vec<String> = trees
                .iter()
                .filter(|(_, on, t)| *on == name && common::naive_eval(t, &env))
                .map(|(id, ..)| id.clone())
                .collect();
            assert_eq!(engine.triggered(&ev, &user), want, "round {round}\n{src}");
        }
    }
}

fn follow_me_rig() -> (Testbed, PolicyEngine, Arc<UserComponent>) {
    let tb = Testbed::boot(
        &follow_me_services(),
        Default::default(),
        Strategy::VirtualStubRepair,
        RepairPolicy::default(),
    )
    .unwrap();
    let engine = PolicyEngine::new(load_policies(FOLLOW_ME_POLICIES).unwrap(), tb.cache.clone());
    let user = Arc::new(UserComponent::new("alice", "office"));
    engine.add_user(user.clone());
    (tb, engine, user)
}

#[test]
fn follow_me_display_moves_with_user() {
    let (tb, engine, user) = follow_me_rig();
    let ev = ContextEvent::new("location_changed", "alice").with_attr("location", "office");
    let done = engine.on_event(&ev).unwrap();
    assert_eq!(done.len(), 1);
    assert_eq!(
        done[0].action,
        ResolvedAction::Bind {
            role: "display".into(),
            service_name: "screen-office".into()
        }
    );
    assert_eq!(done[0].outcome, ActionOutcome::Done);
    user.user_send("display", "display", &["a".into()]).unwrap();

    let ev = ContextEvent::new("location_changed", "alice").with_attr("location", "kitchen");
    engine.on_event(&ev).unwrap();
    let v = user.user_send("display", "display", &["b".into()]).unwrap();
    assert_eq!(v, ArgValue::Text("screen-kitchen displayed: b".into()));
    assert_eq!(tb.host("screen-office").served(), 1);

    let ev = ContextEvent::new("location_changed", "alice").with_attr("location", "garage");
    let done = engine.on_event(&ev).unwrap();
    assert!(matches!(done[0].outcome, ActionOutcome::Failed(_)));
    // Unknown room: the kitchen binding stays.
    let v = user.user_send("display", "display", &["c".into()]).unwrap();
    assert_eq!(v, ArgValue::Text("screen-kitchen displayed: c".into()));
}

#[test]
fn reading_light_uses_preference() {
    let (tb, engine, user) = follow_me_rig();
    reconfigure(
        &user,
        &tb.cache,
        &[BindingRequest::new("light", "light").unwrap()],
    );
    user.set_preference("reading_brightness", ArgValue::Int(70));
    let ev = ContextEvent::new("activity_changed", "alice").with_attr("activity", "reading");
    let done = engine.on_event(&ev).unwrap();
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].outcome, ActionOutcome::Done);
    assert_eq!(
        user.user_send("light", "get_brightness", &[]).unwrap(),
        ArgValue::Int(70)
    );

    let ev = ContextEvent::new("activity_changed", "alice").with_attr("activity", "cooking");
    assert!(engine.on_event(&ev).unwrap().is_empty());
}

#[test]
fn missing_preference_is_unresolved() {
    let (tb, engine, user) = follow_me_rig();
    reconfigure(
        &user,
        &tb.cache,
        &[BindingRequest::new("light", "light").unwrap()],
    );
    let ev = ContextEvent::new("activity_changed", "alice").with_attr("activity", "reading");
    let done = engine.on_event(&ev).unwrap();
    assert!(matches!(done[0].action, ResolvedAction::Unresolved { .. }));
    assert!(matches!(done[0].outcome, ActionOutcome::Failed(_)));
    assert_eq!(tb.host("light").served(), 0);
}

#[test]
fn unknown_user_and_empty_event() {
    let (_tb, engine, _user) = follow_me_rig();
    let ev = ContextEvent::new("location_changed", "mallory").with_attr("location", "office");
    assert!(matches!(
        engine.on_event(&ev),
        Err(PolicyError::UnknownUser(_))
    ));
    assert!(matches!(
        engine.on_event(&ContextEvent::new("", "alice")),
        Err(PolicyError::InvalidEvent)
    ));
}

#[test]
fn queued_events_processed_in_order() {
    let (_tb, engine, user) = follow_me_rig();
    let (tx, rx) = event_queue();
    for room in ["office", "kitchen", "office", "kitchen"] {
        tx.send(ContextEvent::new("location_changed", "alice").with_attr("location", room))
            .unwrap();
    }
    drop(tx);
    let results = engine.run(rx);
    assert_eq!(results.len(), 4);
    assert!(results
        .iter()
        .all(|r| r.as_ref().unwrap()[0].outcome == ActionOutcome::Done));
    let v = user.user_send("display", "display", &["z".into()]).unwrap();
    assert_eq!(v, ArgValue::Text("screen-kitchen displayed: z".into()));
}

#[test]
fn same_events_same_actions() {
    let run = || {
        let (_tb, engine, user) = follow_me_rig();
        user.set_preference("reading_brightness", ArgValue::Int(55));
        let evs = [
            ContextEvent::new("location_changed", "alice").with_attr("location", "kitchen"),
            ContextEvent::new("activity_changed", "alice").with_attr("activity", "reading"),
            ContextEvent::new("location_changed", "alice").with_attr("location", ""),
        ];
        evs.iter()
            .flat_map(|e| engine.on_event(e).unwrap())
            .map(|x| (x.policy_id, x.action))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn templates() {
    let mut attrs = HashMap::new();
    attrs.insert("location".to_string(), ArgValue::Text("office".into()));
    attrs.insert("floor".to_string(), ArgValue::Int(3));
    let t = Template::parse("screen-${location}-${floor}").unwrap();
    assert_eq!(t.expand(&attrs).unwrap(), "screen-office-3");
    assert!(Template::parse("screen-${missing}")
        .unwrap()
        .expand(&attrs)
        .is_err());
    assert!(Template::parse("screen-${").is_err());
    assert_eq!(
        Template::parse("plain").unwrap().expand(&attrs).unwrap(),
        "plain"
    );
}

#[test]
fn parse_errors_report_lines() {
    let cases = [
        ("on x\n", 1),
        ("policy a\non e\n", 1),
        ("policy a\non e\nwhen event.x ==\ndo bind r \"s\"\n", 3),
        ("policy a\non e\ndo fly away\n", 3),
        ("policy a\non e\non f\ndo bind r s\n", 3),
        ("policy a\non e\ndo bind r s\nfrobnicate\n", 4),
    ];
    for (src, line) in cases {
        match load_policies(src) {
            Err(PolicyError::Parse { line: l, .. }) => assert_eq!(l, line, "{src:?}"),
            other => panic!("{src:?}: {other:?}"),
        }
    }
    let dup = "policy a\non e\ndo bind r s\n\npolicy a\non e\ndo bind r s\n";
    assert!(matches!(
        load_policies(dup),
        Err(PolicyError::DuplicateId(_))
    ));
}

#[test]
fn quoted_number_stays_text() {
    let set = load_policies("policy q\non e\ndo adapt light set_brightness \"70\"\n\npolicy n\non e\ndo adapt light set_brightness 70\n").unwrap();
    let shown: Vec<String> = set
        .policies()
        .iter()
        .map(|p| format!("{:?}", p.actions[0]))
        .collect();
    assert!(shown[0].contains("Text(\"70\")"), "{}", shown[0]);
    assert!(shown[1].contains("Int(70)"), "{}", shown[1]);
}
