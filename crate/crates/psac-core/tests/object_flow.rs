//! Object runtime behaviour: the frozen walkthroughs, the degradation to
//! locking at parallelism one, duplicate tolerance, fairness, recovery.

use std::sync::Arc;

use psac_core::command::{Command, CommandId, EntityAddr, Resolution, TxnId};
use psac_core::journal::Journal;
use psac_core::money::Money;
use psac_core::object::{ObjectConfig, ObjectOutput, ObjectReply, PsacObject};
use psac_core::samples::bank_specs;
use psac_core::spec::{EntitySpec, EntityState};
use psac_core::tree::Decision;
use psac_core::twophase::object_stream_name;
use psac_core::value::Value;
use psac_core::Args;

fn account_spec() -> Arc<EntitySpec> {
    Arc::new(bank_specs().get("Account").unwrap().clone())
}

fn opened(spec: &EntitySpec, cents: i64) -> EntityState {
    let mut args = Args::new();
    args.insert("initialDeposit".into(), Value::Money(Money(cents)));
    spec.apply_effect(&spec.initial_state("NL01"), "Open", &args).unwrap()
}

fn fresh_object(cents: i64, config: ObjectConfig) -> PsacObject {
    let spec = account_spec();
    let initial = opened(&spec, cents);
    PsacObject::new(spec, EntityAddr::new("Account", "NL01"), initial, config)
}

fn withdraw(txn: u64, cents: i64) -> Command {
    let mut args = Args::new();
    args.insert("amount".into(), Value::Money(Money(cents)));
    Command {
        id: CommandId::new(TxnId(txn), 0),
        action: "Withdraw".into(),
        args,
    }
}

fn balance(object: &PsacObject) -> i64 {
    object.state().data["balance"].as_money().unwrap().cents()
}

fn leaf_balances(object: &PsacObject) -> Vec<i64> {
    let mut v: Vec<i64> = object
        .leaf_states()
        .map(|s| s.data["balance"].as_money().unwrap().cents())
        .collect();
    v.sort();
    v
}

fn decisions(out: &ObjectOutput) -> Vec<(CommandId, Decision)> {
    out.decisions().collect()
}

fn replies(out: &ObjectOutput) -> Vec<&ObjectReply> {
    out.replies().collect()
}

/// Balance 100; withdrawals 30 and 50 run in parallel, 60 is delayed as
/// dependent; the 50's commit makes 60 uniformly infeasible (rejected);
/// the 30's commit folds both effects in arrival order, ending at 20.
#[test]
fn three_withdrawals_walkthrough() {
    let mut object = fresh_object(10_000, ObjectConfig::psac(8));
    let c1 = withdraw(1, 3_000);
    let c2 = withdraw(2, 5_000);
    let c3 = withdraw(3, 6_000);

    let out = object.handle_command(c1.clone()).unwrap();
    assert_eq!(decisions(&out), [(c1.id, Decision::Accept)]);
    assert!(matches!(replies(&out)[..], [ObjectReply::Started { id }] if *id == c1.id));
    assert_eq!(leaf_balances(&object), [7_000, 10_000]);

    let out = object.handle_command(c2.clone()).unwrap();
    assert_eq!(decisions(&out), [(c2.id, Decision::Accept)]);
    assert_eq!(leaf_balances(&object), [2_000, 5_000, 7_000, 10_000]);

    let out = object.handle_command(c3.clone()).unwrap();
    assert_eq!(decisions(&out), [(c3.id, Decision::Delay)]);
    assert!(replies(&out).is_empty(), "a delayed command gets no reply yet");
    assert_eq!(leaf_balances(&object), [2_000, 5_000, 7_000, 10_000]);
    assert_eq!(object.delayed_len(), 1);

    // Committing the non-head 50 prunes the tree and retries the 60,
    // which now fails in every remaining outcome.
    let out = object.handle_resolution(c2.id, Resolution::Commit).unwrap();
    assert_eq!(leaf_balances(&object), [2_000, 5_000]);
    assert_eq!(decisions(&out), [(c3.id, Decision::Reject)]);
    let rs = replies(&out);
    assert!(matches!(rs[0], ObjectReply::SuccessNotified { id } if *id == c2.id));
    assert!(matches!(rs[1], ObjectReply::Failed { id } if *id == c3.id));
    assert_eq!(balance(&object), 10_000, "nothing applied while the head is open");

    let out = object.handle_resolution(c1.id, Resolution::Commit).unwrap();
    let rs = replies(&out);
    assert!(matches!(rs[0], ObjectReply::SuccessNotified { id } if *id == c1.id));
    assert!(matches!(rs[1], ObjectReply::Applied { id, .. } if *id == c1.id));
    assert!(matches!(rs[2], ObjectReply::Applied { id, .. } if *id == c2.id));
    assert_eq!(balance(&object), 2_000);
    assert!(object.is_quiescent());
}

/// Abort walkthrough: a second withdrawal is admitted while the first is
/// still undecided; the first aborts, the second commits, balance 50.
/// Under the locking configuration the second command cannot start until
/// the abort frees the object.
#[test]
fn parallel_admission_with_abort() {
    let mut object = fresh_object(10_000, ObjectConfig::psac(8));
    let c1 = withdraw(1, 3_000);
    let c2 = withdraw(2, 5_000);

    let out = object.handle_command(c1.clone()).unwrap();
    assert_eq!(decisions(&out), [(c1.id, Decision::Accept)]);
    let out = object.handle_command(c2.clone()).unwrap();
    assert_eq!(
        decisions(&out),
        [(c2.id, Decision::Accept)],
        "the second withdrawal starts while the first is unresolved"
    );

    let out = object.handle_resolution(c1.id, Resolution::Abort).unwrap();
    assert!(matches!(replies(&out)[..], [ObjectReply::Failed { id }] if *id == c1.id));
    let out = object.handle_resolution(c2.id, Resolution::Commit).unwrap();
    let rs = replies(&out);
    assert!(matches!(rs[0], ObjectReply::SuccessNotified { id } if *id == c2.id));
    assert!(matches!(rs[1], ObjectReply::Applied { id, .. } if *id == c2.id));
    assert_eq!(balance(&object), 5_000);

    // Same arrivals under locking: the second is delayed, not admitted,
    // until the abort of the first lets it start.
    let mut locked = fresh_object(10_000, ObjectConfig::locking());
    let out = locked.handle_command(c1.clone()).unwrap();
    assert_eq!(decisions(&out), [(c1.id, Decision::Accept)]);
    let out = locked.handle_command(c2.clone()).unwrap();
    assert_eq!(decisions(&out), [(c2.id, Decision::Delay)]);

    let out = locked.handle_resolution(c1.id, Resolution::Abort).unwrap();
    assert_eq!(
        decisions(&out),
        [(c2.id, Decision::Accept)],
        "the delayed command starts only after the abort"
    );
    let out = locked.handle_resolution(c2.id, Resolution::Commit).unwrap();
    assert!(replies(&out).iter().any(|r| matches!(r, ObjectReply::Applied { .. })));
    assert_eq!(balance(&locked), 5_000);
}

/// Locking serializes even commutative always-enabled commands.
#[test]
fn locking_ignores_semantics() {
    let mut args = Args::new();
    args.insert("amount".into(), Value::Money(Money(100)));
    let deposit = |txn: u64| Command {
        id: CommandId::new(TxnId(txn), 0),
        action: "Deposit".into(),
        args: args.clone(),
    };

    let mut locked = fresh_object(10_000, ObjectConfig::locking());
    locked.handle_command(deposit(1)).unwrap();
    let out = locked.handle_command(deposit(2)).unwrap();
    assert_eq!(decisions(&out), [(deposit(2).id, Decision::Delay)]);

    let mut parallel = fresh_object(10_000, ObjectConfig::psac(8));
    parallel.handle_command(deposit(1)).unwrap();
    let out = parallel.handle_command(deposit(2)).unwrap();
    assert_eq!(decisions(&out), [(deposit(2).id, Decision::Accept)]);
}

#[test]
fn duplicate_command_reemits_without_rededicing() {
    let mut object = fresh_object(10_000, ObjectConfig::psac(8));
    let c1 = withdraw(1, 3_000);
    object.handle_command(c1.clone()).unwrap();

    let dup = object.handle_command(c1.clone()).unwrap();
    assert!(decisions(&dup).is_empty());
    assert_eq!(dup.journal_payloads().count(), 0);
    assert!(matches!(replies(&dup)[..], [ObjectReply::Started { id }] if *id == c1.id));
    assert_eq!(object.unresolved_len(), 1, "no double admission");

    // A rejected command re-reports failure.
    let big = withdraw(2, 50_000);
    object.handle_command(big.clone()).unwrap();
    let dup = object.handle_command(big.clone()).unwrap();
    assert!(matches!(replies(&dup)[..], [ObjectReply::Failed { id }] if *id == big.id));
}

#[test]
fn duplicate_resolution_is_idempotent_and_contradiction_is_an_error() {
    let mut object = fresh_object(10_000, ObjectConfig::psac(8));
    let c1 = withdraw(1, 3_000);
    object.handle_command(c1.clone()).unwrap();

    object.handle_resolution(c1.id, Resolution::Commit).unwrap();
    let dup = object.handle_resolution(c1.id, Resolution::Commit).unwrap();
    assert!(dup.events.is_empty());
    assert!(object.handle_resolution(c1.id, Resolution::Abort).is_err());

    // An abort for a command this object never saw is tolerated: cleanup
    // from a participant that outlived a crash.
    let ghost = CommandId::new(TxnId(99), 0);
    let out = object.handle_resolution(ghost, Resolution::Abort).unwrap();
    assert!(out.events.is_empty());
    // But a commit without admission cannot be honoured.
    assert!(object
        .handle_resolution(CommandId::new(TxnId(98), 0), Resolution::Commit)
        .is_err());
}

#[test]
fn abort_of_delayed_command_removes_it() {
    let mut object = fresh_object(10_000, ObjectConfig::psac(8));
    let c1 = withdraw(1, 3_000);
    let c2 = withdraw(2, 8_000);
    object.handle_command(c1.clone()).unwrap();
    let out = object.handle_command(c2.clone()).unwrap();
    assert_eq!(decisions(&out), [(c2.id, Decision::Delay)]);

    let out = object.handle_resolution(c2.id, Resolution::Abort).unwrap();
    assert!(matches!(replies(&out)[..], [ObjectReply::Failed { id }] if *id == c2.id));
    assert_eq!(object.delayed_len(), 0);

    object.handle_resolution(c1.id, Resolution::Commit).unwrap();
    assert_eq!(balance(&object), 7_000);
    assert!(object.is_quiescent());
}

/// With a re-delay budget, a command that stays dependent is eventually
/// rejected instead of waiting forever.
#[test]
fn delay_budget_rejects_starving_command() {
    let spec = account_spec();
    let initial = opened(&spec, 10_000);
    let mut object = PsacObject::new(
        spec,
        EntityAddr::new("Account", "NL01"),
        initial,
        ObjectConfig { max_parallel: 8, max_delays: Some(0) },
    );

    let c1 = withdraw(1, 3_000);
    let c2 = withdraw(2, 8_000); // mixed while c1 is open
    let c3 = withdraw(3, 1_000);
    object.handle_command(c1.clone()).unwrap();
    let out = object.handle_command(c2.clone()).unwrap();
    assert_eq!(decisions(&out), [(c2.id, Decision::Delay)]);

    object.handle_command(c3.clone()).unwrap();
    // c3 aborts: the tree still holds c1, so c2 stays mixed, and its
    // budget of zero re-delays is now spent.
    let out = object.handle_resolution(c3.id, Resolution::Abort).unwrap();
    assert_eq!(decisions(&out), [(c2.id, Decision::Reject)]);
    assert!(replies(&out).iter().any(|r| matches!(r, ObjectReply::Failed { id } if *id == c2.id)));
    assert_eq!(object.delayed_len(), 0);
}

/// Run a workload while journaling, rebuild from the journal, and check
/// the recovered object matches: same base state, same leaves, same
/// in-progress commands. Delayed commands are lost by design.
#[test]
fn recovery_rebuilds_from_journal() {
    let spec = account_spec();
    let entity = EntityAddr::new("Account", "NL01");
    let stream = object_stream_name(&entity);
    let initial = opened(&spec, 10_000);
    let config = ObjectConfig::psac(8);
    let mut journal = Journal::in_memory();
    let mut object = PsacObject::new(spec.clone(), entity.clone(), initial.clone(), config);

    let record = |journal: &mut Journal, out: &ObjectOutput| {
        for p in out.journal_payloads() {
            journal.append(&stream, 0, p.clone()).unwrap();
        }
    };

    let c1 = withdraw(1, 3_000);
    let c2 = withdraw(2, 5_000);
    let c3 = withdraw(3, 6_000); // will be delayed, then lost in the crash
    let c4 = withdraw(4, 1_000);
    let out = object.handle_command(c1.clone()).unwrap();
    record(&mut journal, &out);
    let out = object.handle_command(c2.clone()).unwrap();
    record(&mut journal, &out);
    let out = object.handle_command(c3.clone()).unwrap();
    record(&mut journal, &out);
    let out = object.handle_resolution(c2.id, Resolution::Commit).unwrap();
    record(&mut journal, &out);
    let out = object.handle_command(c4.clone()).unwrap();
    record(&mut journal, &out);

    let recovered = PsacObject::recover(
        spec.clone(),
        entity.clone(),
        initial.clone(),
        journal.replay(&stream),
        config,
    )
    .unwrap();

    assert_eq!(recovered.state(), object.state());
    assert_eq!(leaf_balances(&recovered), leaf_balances(&object));
    let ids = |o: &PsacObject| o.in_progress().map(|i| i.cmd.id).collect::<Vec<_>>();
    assert_eq!(ids(&recovered), ids(&object));
    assert_eq!(recovered.delayed_len(), 0, "delayed commands are not durable");

    // Drive both replicas to completion identically; they must agree.
    let mut recovered = recovered;
    object.handle_resolution(c1.id, Resolution::Commit).unwrap();
    object.handle_resolution(c4.id, Resolution::Abort).unwrap();
    recovered.handle_resolution(c1.id, Resolution::Commit).unwrap();
    recovered.handle_resolution(c4.id, Resolution::Abort).unwrap();
    assert_eq!(recovered.state(), object.state());
    assert_eq!(balance(&recovered), 2_000);
}

/// The same journal drives recovery after every prefix: whatever the
/// crash point, replay must reconstruct a consistent object.
#[test]
fn recovery_from_any_prefix() {
    let spec = account_spec();
    let entity = EntityAddr::new("Account", "NL01");
    let stream = object_stream_name(&entity);
    let initial = opened(&spec, 10_000);
    let config = ObjectConfig::psac(8);
    let mut journal = Journal::in_memory();
    let mut object = PsacObject::new(spec.clone(), entity.clone(), initial.clone(), config);

    let c1 = withdraw(1, 3_000);
    let c2 = withdraw(2, 5_000);
    for out in [
        object.handle_command(c1.clone()).unwrap(),
        object.handle_command(c2.clone()).unwrap(),
        object.handle_resolution(c1.id, Resolution::Commit).unwrap(),
        object.handle_resolution(c2.id, Resolution::Commit).unwrap(),
    ] {
        for p in out.journal_payloads() {
            journal.append(&stream, 0, p.clone()).unwrap();
        }
    }

    let records = journal.replay(&stream);
    for cut in 0..=records.len() {
        let recovered = PsacObject::recover(
            spec.clone(),
            entity.clone(),
            initial.clone(),
            &records[..cut],
            config,
        );
        let recovered = recovered.unwrap_or_else(|e| panic!("prefix {cut}: {e}"));
        // Leaf invariant must hold at every prefix.
        assert_eq!(recovered.leaf_states().count(), 1 << recovered.unresolved_len());
    }
    assert_eq!(balance(&object), 2_000);
}

#[test]
fn capacity_delay_does_not_reply() {
    let mut object = fresh_object(10_000, ObjectConfig::locking());
    let c1 = withdraw(1, 3_000);
    let c2 = withdraw(2, 1_000);
    object.handle_command(c1.clone()).unwrap();
    let out = object.handle_command(c2.clone()).unwrap();
    assert_eq!(decisions(&out), [(c2.id, Decision::Delay)]);
    assert!(replies(&out).is_empty());
    assert_eq!(out.journal_payloads().count(), 0, "delays are not durable");
}
