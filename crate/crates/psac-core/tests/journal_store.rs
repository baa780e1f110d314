//! Journal durability semantics: dense sequences, file round trips,
//! corruption detection, write-fault injection.

use psac_core::command::{Command, CommandId, EntityAddr, Resolution, TxnId, Vote};
use psac_core::journal::{Journal, JournalError, JournalPayload, ReplyKind};
use psac_core::money::Money;
use psac_core::value::Value;
use psac_core::Args;

fn sample_command(txn: u64) -> Command {
    let mut args = Args::new();
    args.insert("amount".into(), Value::Money(Money(1_234)));
    Command {
        id: CommandId::new(TxnId(txn), 0),
        action: "Withdraw".into(),
        args,
    }
}

fn sample_payloads() -> Vec<JournalPayload> {
    let cmd = sample_command(1);
    let id = cmd.id;
    vec![
        JournalPayload::CommandAccepted {
            entity: EntityAddr::new("Account", "NL01"),
            cmd,
        },
        JournalPayload::Vote { id, vote: Vote::Yes },
        JournalPayload::Decision { txn: id.txn, resolution: Resolution::Commit },
        JournalPayload::Resolution { id, resolution: Resolution::Commit },
        JournalPayload::EffectApplied { id },
        JournalPayload::ReplyEmitted { id, reply: ReplyKind::Failed },
    ]
}

#[test]
fn sequences_are_dense_per_stream() {
    let mut journal = Journal::in_memory();
    assert_eq!(journal.append("a", 10, sample_payloads()[0].clone()).unwrap(), 0);
    assert_eq!(journal.append("b", 11, sample_payloads()[1].clone()).unwrap(), 0);
    assert_eq!(journal.append("a", 12, sample_payloads()[2].clone()).unwrap(), 1);
    assert_eq!(journal.replay("a").len(), 2);
    assert_eq!(journal.replay("b").len(), 1);
    assert_eq!(journal.replay("missing").len(), 0);
    assert_eq!(journal.total_appends(), 3);
}

#[test]
fn file_journal_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("node-0.jsonl");

    let mut journal = Journal::open(&path).unwrap();
    for (i, payload) in sample_payloads().into_iter().enumerate() {
        journal.append("obj:Account/NL01", i as u64, payload).unwrap();
    }
    journal.append("coord:t1", 99, sample_payloads()[2].clone()).unwrap();
    drop(journal);

    let reopened = Journal::open(&path).unwrap();
    let records = reopened.replay("obj:Account/NL01");
    assert_eq!(records.len(), 6);
    assert_eq!(records[0].seq, 0);
    assert_eq!(records[5].seq, 5);
    assert_eq!(records[3].t, 3);
    let originals = sample_payloads();
    for (record, original) in records.iter().zip(&originals) {
        assert_eq!(&record.payload, original);
    }
    assert_eq!(reopened.replay("coord:t1").len(), 1);

    // Appends continue the sequence where the previous process stopped.
    let mut reopened = reopened;
    let seq = reopened
        .append("obj:Account/NL01", 100, sample_payloads()[0].clone())
        .unwrap();
    assert_eq!(seq, 6);
}

#[test]
fn malformed_and_nondense_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();

    let garbled = dir.path().join("garbled.jsonl");
    std::fs::write(&garbled, "{\"stream\": \"a\", \"seq\": 0\nnot json\n").unwrap();
    assert!(matches!(
        Journal::open(&garbled),
        Err(JournalError::Malformed { .. })
    ));

    let gapped = dir.path().join("gapped.jsonl");
    let mut build = Journal::open(&gapped).unwrap();
    build.append("s", 0, sample_payloads()[4].clone()).unwrap();
    drop(build);
    // Hand-append a record whose seq skips ahead.
    let mut line = String::new();
    {
        let good = std::fs::read_to_string(&gapped).unwrap();
        line.push_str(&good.replace("\"seq\":0", "\"seq\":5"));
    }
    let mut contents = std::fs::read_to_string(&gapped).unwrap();
    contents.push_str(&line);
    std::fs::write(&gapped, contents).unwrap();
    assert!(matches!(
        Journal::open(&gapped),
        Err(JournalError::NonDenseSeq { expected: 1, found: 5, .. })
    ));
}

#[test]
fn injected_fault_loses_exactly_one_write() {
    let mut journal = Journal::in_memory();
    journal.append("s", 0, sample_payloads()[0].clone()).unwrap();

    journal.inject_write_fault();
    let err = journal.append("s", 1, sample_payloads()[1].clone());
    assert!(matches!(err, Err(JournalError::WriteFailed(_))));
    assert_eq!(journal.stream_len("s"), 1, "failed write leaves no trace");

    // The next write succeeds and the sequence stays dense.
    let seq = journal.append("s", 2, sample_payloads()[2].clone()).unwrap();
    assert_eq!(seq, 1);
}

#[test]
fn record_wire_shape_is_flat() {
    let mut journal = Journal::in_memory();
    journal
        .append("obj:Account/NL01", 42, sample_payloads()[0].clone())
        .unwrap();
    let record = &journal.replay("obj:Account/NL01")[0];
    let json = serde_json::to_value(record).unwrap();
    assert_eq!(json["stream"], "obj:Account/NL01");
    assert_eq!(json["seq"], 0);
    assert_eq!(json["t"], 42);
    assert_eq!(json["kind"], "command_accepted");
    assert!(json["body"].is_object());
    assert_eq!(json["body"]["entity"]["spec"], "Account");

    let back: psac_core::journal::JournalRecord = serde_json::from_value(json).unwrap();
    assert_eq!(&back, record);
}
