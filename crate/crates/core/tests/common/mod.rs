//! Random but valid event streams shared by the property and acceptance tests.
#![allow(dead_code)]

use noteflow_core::event::{CellType, EventKind, Output, OutputType, RawEvent};
use noteflow_core::normalize::LogRecord;
use rand::seq::SliceRandom;
use rand::Rng;

const SNIPPETS: [&str; 12] = [
    "x = 1",
    "df.head()",
    "import pandas as pd",
    "# note",
    "for i in range(3):\n    print(i)",
    "model.fit(X, y)",
    "plt.plot(a)",
    "",
    "y = x + 1\ny",
    "caf\u{e9} = '\u{1F600}'",
    "def f(a):\n    return a",
    "df = df.dropna()",
];

pub fn source(rng: &mut impl Rng) -> String {
    let mut s = SNIPPETS.choose(rng).unwrap().to_string();
    if rng.gen_bool(0.3) {
        s.push('\n');
        s.push_str(SNIPPETS.choose(rng).unwrap());
    }
    s
}

fn outputs(rng: &mut impl Rng, error: bool) -> Vec<Output> {
    if error {
        return vec![Output::text(OutputType::Error, "NameError")];
    }
    let kinds = [OutputType::ExecuteResult, OutputType::Stream, OutputType::DisplayData];
    (0..rng.gen_range(0..3)).map(|i| Output::text(*kinds.choose(rng).unwrap(), format!("out{i}"))).collect()
}

fn base(kind: EventKind, session: &str, user: &str, notebook: &str, ts: i64, seq: u64) -> RawEvent {
    RawEvent {
        kind,
        session_id: session.into(),
        kernel_id: "k".into(),
        notebook_name: notebook.into(),
        timestamp: ts,
        seq,
        user_id: user.into(),
        cell_id: None,
        cell_ordinal: None,
        source: None,
        outputs: None,
        new_cell_type: None,
        extras: Default::default(),
    }
}

/// A stream of up to `max_events` events that replays without error: every
/// referenced cell exists and every insertion ordinal is in range.
pub fn valid_session(rng: &mut impl Rng, session: &str, user: &str, notebook: &str, max_events: usize) -> Vec<RawEvent> {
    let n = rng.gen_range(1..=max_events);
    let mut live: Vec<String> = Vec::new();
    let mut next_id = 0;
    let mut ts = rng.gen_range(0..1_000_000i64);
    let mut out = Vec::with_capacity(n);
    for seq in 0..n as u64 {
        ts += rng.gen_range(1..5_000);
        let roll = rng.gen_range(0..100);
        let kind = if live.is_empty() {
            if roll < 85 { EventKind::CreateCell } else { EventKind::NotebookLaunch }
        } else {
            match roll {
                0..=14 => EventKind::CreateCell,
                15..=21 => EventKind::DeleteCell,
                22..=54 => EventKind::ExecuteCell,
                55..=69 => EventKind::FinishExecute,
                70..=76 => EventKind::ErrorEvent,
                77..=81 => EventKind::RenderMarkdown,
                82..=87 => EventKind::ChangeCellType,
                88..=91 => EventKind::NotebookLaunch,
                92..=95 => EventKind::NotebookInterrupt,
                _ => EventKind::NotebookRestart,
            }
        };
        let mut e = base(kind, session, user, notebook, ts, seq);
        match kind {
            EventKind::CreateCell => {
                let ordinal = rng.gen_range(0..=live.len());
                let id = format!("{session}-c{next_id}");
                next_id += 1;
                live.insert(ordinal, id.clone());
                e.cell_id = Some(id);
                e.cell_ordinal = Some(ordinal as u64);
                e.source = Some(if rng.gen_bool(0.5) { String::new() } else { source(rng) });
            }
            k if k.is_notebook_level() => {}
            _ => {
                let ordinal = rng.gen_range(0..live.len());
                e.cell_id = Some(live[ordinal].clone());
                e.cell_ordinal = Some(ordinal as u64);
                match kind {
                    EventKind::DeleteCell => {
                        live.remove(ordinal);
                    }
                    EventKind::ExecuteCell | EventKind::RenderMarkdown => e.source = Some(source(rng)),
                    EventKind::FinishExecute => e.outputs = Some(outputs(rng, false)),
                    EventKind::ErrorEvent => e.outputs = Some(outputs(rng, true)),
                    EventKind::ChangeCellType => {
                        e.new_cell_type = Some(if rng.gen_bool(0.5) { CellType::Code } else { CellType::Markdown });
                        e.source = Some(source(rng));
                    }
                    _ => unreachable!(),
                }
            }
        }
        out.push(e);
    }
    out
}

/// Wrap an already ordered stream as log records without normalizing it.
pub fn as_records(events: Vec<RawEvent>) -> Vec<LogRecord> {
    events.into_iter().enumerate().map(|(i, event)| LogRecord { event, seq_no: i as u64, repaired: Vec::new() }).collect()
}

/// Several sessions from different users and notebooks, interleaved in time order.
pub fn valid_study(rng: &mut impl Rng, notebooks: usize, max_events: usize) -> Vec<RawEvent> {
    let mut all = Vec::new();
    for i in 0..notebooks {
        let user = format!("u{}", i % 3);
        all.extend(valid_session(rng, &format!("s{i}"), &user, &format!("nb{i}.ipynb"), max_events));
    }
    all.sort_by(|a, b| (a.timestamp, &a.session_id, a.seq).cmp(&(b.timestamp, &b.session_id, b.seq)));
    all
}
