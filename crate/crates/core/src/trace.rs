//! Tab-separated rendering of a derivation, one transition per line.

use std::fmt::Write as _;

use crate::types::{Constituent, Direction, PairRelation, ParserState, Sentence, TraceStep};

pub const HEADER: &str = "step\taction\tstack\tbuffer\taspects\topinions\trelations\tsentiment";

fn constituent_text(sentence: &Sentence, c: &Constituent) -> String {
    sentence.span_text(c.span)
}

fn list<'a>(sentence: &Sentence, items: impl Iterator<Item = &'a Constituent>) -> String {
    let parts: Vec<_> = items.map(|c| constituent_text(sentence, c)).collect();
    format!("[{}]", parts.join(", "))
}

fn output_set<'a>(sentence: &Sentence, items: impl Iterator<Item = &'a Constituent>) -> String {
    let parts: Vec<_> = items.map(|c| constituent_text(sentence, c)).collect();
    if parts.is_empty() {
        "--".to_string()
    } else {
        format!("[{}]", parts.join(", "))
    }
}

fn relation_text(sentence: &Sentence, r: &PairRelation) -> String {
    let aspect = constituent_text(sentence, &r.aspect);
    let opinion = constituent_text(sentence, &r.opinion);
    match r.direction {
        Direction::Right => format!("({aspect} -> {opinion})"),
        Direction::Left => format!("({opinion} <- {aspect})"),
    }
}

fn row(sentence: &Sentence, step: &str, action: &str, state: &ParserState, sentiment: &str) -> String {
    let buffer: Vec<_> = state.buffer.iter().map(|&i| sentence.surface(i)).collect();
    let relations = if state.relations.is_empty() {
        "--".to_string()
    } else {
        state
            .relations
            .iter()
            .map(|r| relation_text(sentence, r))
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!(
        "{step}\t{action}\t{}\t[{}]\t{}\t{}\t{relations}\t{sentiment}",
        list(sentence, state.stack.iter()),
        buffer.join(", "),
        output_set(sentence, state.aspects.iter()),
        output_set(sentence, state.opinions.iter()),
    )
}

/// Renders the header, the initial configuration and one line per step.
pub fn format_trace(sentence: &Sentence, trace: &[TraceStep]) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    let initial = trace
        .first()
        .map(|s| s.before.clone())
        .unwrap_or_else(|| ParserState::initial(sentence.len()));
    writeln!(out, "{}", row(sentence, "--", "--", &initial, "--")).unwrap();
    for step in trace {
        writeln!(
            out,
            "{}",
            row(
                sentence,
                &step.step.to_string(),
                step.action.symbol(),
                &step.after,
                step.sentiment.as_str()
            )
        )
        .unwrap();
    }
    out
}
