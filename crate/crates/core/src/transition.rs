//! The seven-action state machine.
//!
//! States are immutable values; [`apply`] returns a fresh successor. ST is
//! legal exactly when the buffer is empty and it clears the stack. Merge only
//! joins text-adjacent constituents, and LR/RR cannot re-form a relation that
//! already exists, which bounds every legal action sequence by `6n + 3`.

use std::fmt;

use crate::error::{Error, Result};
use crate::types::{Action, Constituent, Direction, PairRelation, ParserState, Polarity, Sentence, TraceStep};

/// Subset of the seven actions, as a bitmask over action ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LegalitySet(u8);

impl LegalitySet {
    pub fn empty() -> LegalitySet {
        LegalitySet(0)
    }

    pub fn of(actions: &[Action]) -> LegalitySet {
        actions.iter().fold(LegalitySet::empty(), |set, &a| set.with(a))
    }

    pub fn with(self, action: Action) -> LegalitySet {
        LegalitySet(self.0 | (1 << action.id()))
    }

    pub fn contains(&self, action: Action) -> bool {
        self.0 & (1 << action.id()) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    /// Members in action-id order.
    pub fn iter(&self) -> impl Iterator<Item = Action> + '_ {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

impl fmt::Display for LegalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(Action::symbol).collect();
        write!(f, "{{{}}}", names.join(", "))
    }
}

/// Maximum length of any legal action sequence over `n` tokens.
pub fn step_bound(n: usize) -> usize {
    6 * n + 3
}

pub fn is_terminal(state: &ParserState) -> bool {
    state.history.last() == Some(&Action::Stop)
}

pub fn legal_actions(state: &ParserState) -> LegalitySet {
    let mut set = LegalitySet::empty();
    if is_terminal(state) {
        return set;
    }
    if !state.buffer.is_empty() {
        set = set.with(Action::Shift);
    } else {
        set = set.with(Action::Stop);
    }
    if let Some((second, top)) = state.top_two() {
        if second.span.abuts(&top.span) {
            set = set.with(Action::Merge);
        }
        set = set.with(Action::LeftRemove).with(Action::RightRemove);
        if !state.has_relation((top.span, second.span, Direction::Left)) {
            set = set.with(Action::LeftRelation);
        }
        if !state.has_relation((second.span, top.span, Direction::Right)) {
            set = set.with(Action::RightRelation);
        }
    }
    set
}

/// Applies `action`; a formed relation carries no sentiment.
pub fn apply(state: &ParserState, action: Action) -> Result<ParserState> {
    apply_labeled(state, action, Polarity::None)
}

/// Applies `action`, tagging a relation formed by LR/RR with `sentiment`.
pub fn apply_labeled(state: &ParserState, action: Action, sentiment: Polarity) -> Result<ParserState> {
    if !legal_actions(state).contains(action) {
        return Err(Error::IllegalAction { action });
    }
    let mut next = state.clone();
    match action {
        Action::Shift => {
            let index = next.buffer.pop_front().expect("legality guarantees a token");
            next.stack.push(Constituent::token(index));
        }
        Action::Stop => {
            next.removed += next.stack.iter().map(|c| c.span.len()).sum::<usize>();
            next.stack.clear();
        }
        Action::Merge => {
            let top = next.stack.pop().expect("legality guarantees two constituents");
            let second = next.stack.pop().expect("legality guarantees two constituents");
            next.stack.push(Constituent::merge(&second, &top));
        }
        Action::LeftRemove => {
            let at = next.stack.len() - 2;
            let gone = next.stack.remove(at);
            next.removed += gone.span.len();
        }
        Action::RightRemove => {
            let gone = next.stack.pop().expect("legality guarantees two constituents");
            next.removed += gone.span.len();
        }
        Action::LeftRelation | Action::RightRelation => {
            let (second, top) = {
                let (s, t) = next.top_two().expect("legality guarantees two constituents");
                (*s, *t)
            };
            let relation = if action == Action::LeftRelation {
                PairRelation {
                    aspect: top,
                    opinion: second,
                    direction: Direction::Left,
                    sentiment,
                }
            } else {
                PairRelation {
                    aspect: second,
                    opinion: top,
                    direction: Direction::Right,
                    sentiment,
                }
            };
            next.aspects.insert(relation.aspect);
            next.opinions.insert(relation.opinion);
            next.relations.push(relation);
        }
    }
    next.history.push(action);
    Ok(next)
}

/// Chooses the next action (and, for LR/RR, its sentiment).
pub trait Policy {
    fn choose(&mut self, state: &ParserState) -> Action;

    fn sentiment(&mut self, _state: &ParserState, _action: Action) -> Polarity {
        Polarity::None
    }
}

impl<F: FnMut(&ParserState) -> Action> Policy for F {
    fn choose(&mut self, state: &ParserState) -> Action {
        self(state)
    }
}

/// Replays a fixed action list. Once the script runs out it answers ST.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    actions: Vec<Action>,
    sentiments: Vec<Polarity>,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<Action>) -> ScriptedPolicy {
        let sentiments = vec![Polarity::None; actions.len()];
        ScriptedPolicy {
            actions,
            sentiments,
            next: 0,
        }
    }

    pub fn with_sentiments(actions: Vec<Action>, sentiments: Vec<Polarity>) -> ScriptedPolicy {
        assert_eq!(actions.len(), sentiments.len());
        ScriptedPolicy {
            actions,
            sentiments,
            next: 0,
        }
    }
}

impl Policy for ScriptedPolicy {
    fn choose(&mut self, _state: &ParserState) -> Action {
        let action = self.actions.get(self.next).copied().unwrap_or(Action::Stop);
        self.next += 1;
        action
    }

    fn sentiment(&mut self, _state: &ParserState, _action: Action) -> Polarity {
        self.sentiments
            .get(self.next.wrapping_sub(1))
            .copied()
            .unwrap_or(Polarity::None)
    }
}

/// Runs `policy` from the initial state until ST or until `step_cap` steps.
pub fn run_with_policy<P: Policy + ?Sized>(
    sentence: &Sentence,
    policy: &mut P,
    step_cap: usize,
) -> Result<(ParserState, Vec<TraceStep>)> {
    let mut state = ParserState::initial(sentence.len());
    let mut trace = Vec::new();
    while !is_terminal(&state) {
        if trace.len() >= step_cap {
            return Err(Error::StepCapExceeded { cap: step_cap });
        }
        let action = policy.choose(&state);
        let sentiment = if action.is_relation() {
            policy.sentiment(&state, action)
        } else {
            Polarity::None
        };
        let after = apply_labeled(&state, action, sentiment)?;
        trace.push(TraceStep {
            step: trace.len() + 1,
            action,
            sentiment,
            before: state,
            after: after.clone(),
        });
        state = after;
    }
    Ok((state, trace))
}

/// Re-applies every recorded step to its before-state and checks the result.
pub fn replay_matches(trace: &[TraceStep]) -> bool {
    trace.iter().all(|step| {
        apply_labeled(&step.before, step.action, step.sentiment)
            .map(|after| after == step.after)
            .unwrap_or(false)
    }) && trace.windows(2).all(|w| w[0].after == w[1].before)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{make_sentence, Span};
    use Action::*;

    fn replay(n: usize, actions: &[Action]) -> Result<ParserState> {
        actions
            .iter()
            .try_fold(ParserState::initial(n), |s, &a| apply(&s, a))
    }

    #[test]
    fn initial_state_only_shifts() {
        assert_eq!(legal_actions(&ParserState::initial(4)), LegalitySet::of(&[Shift]));
        assert!(!is_terminal(&ParserState::initial(4)));
    }

    #[test]
    fn table_two_replay() {
        let state = replay(4, &[Shift, Shift, Merge, Shift, RightRemove, Shift, RightRelation, Stop]).unwrap();
        let gourmet_food = Constituent { span: Span::new(0, 1), merged: true };
        let delicious = Constituent::token(3);
        assert!(is_terminal(&state));
        assert!(state.stack.is_empty() && state.buffer.is_empty());
        assert_eq!(state.aspects.iter().copied().collect::<Vec<_>>(), vec![gourmet_food]);
        assert_eq!(state.opinions.iter().copied().collect::<Vec<_>>(), vec![delicious]);
        assert_eq!(state.relations.len(), 1);
        assert_eq!(state.relations[0].key(), (Span::new(0, 1), Span::single(3), Direction::Right));
    }

    #[test]
    fn merge_joins_the_top_two() {
        let state = replay(4, &[Shift, Shift, Shift, Merge]).unwrap();
        assert_eq!(
            state.stack,
            vec![Constituent::token(0), Constituent { span: Span::new(1, 2), merged: true }]
        );
    }

    #[test]
    fn row_seven_legality() {
        let state = replay(4, &[Shift, Shift, Merge, Shift, RightRemove, Shift, RightRelation]).unwrap();
        assert_eq!(
            legal_actions(&state),
            LegalitySet::of(&[Stop, LeftRemove, RightRemove, LeftRelation])
        );
    }

    #[test]
    fn merge_needs_two_constituents() {
        let state = replay(3, &[Shift]).unwrap();
        assert!(matches!(apply(&state, Merge), Err(Error::IllegalAction { action: Merge })));
    }

    #[test]
    fn merge_needs_adjacency() {
        let state = replay(3, &[Shift, Shift, Shift, LeftRemove]).unwrap();
        assert!(!legal_actions(&state).contains(Merge));
    }

    #[test]
    fn single_token_sentence() {
        let state = replay(1, &[Shift]).unwrap();
        assert_eq!(legal_actions(&state), LegalitySet::of(&[Stop]));
        let done = apply(&state, Stop).unwrap();
        assert!(is_terminal(&done));
        assert!(legal_actions(&done).is_empty());
        assert_eq!(done.removed, 1);
    }

    #[test]
    fn relation_dedupe() {
        let state = replay(2, &[Shift, Shift, LeftRelation, RightRelation]).unwrap();
        let legal = legal_actions(&state);
        assert!(!legal.contains(LeftRelation) && !legal.contains(RightRelation));
    }

    #[test]
    fn shift_then_stop_policy() {
        let s = make_sentence("x", &["a", "b", "c"], vec![]).unwrap();
        let mut policy = |st: &ParserState| if st.buffer.is_empty() { Stop } else { Shift };
        let (state, trace) = run_with_policy(&s, &mut policy, step_bound(3)).unwrap();
        assert_eq!(trace.len(), 4);
        assert!(state.relations.is_empty());
        assert!(replay_matches(&trace));
    }

    #[test]
    fn step_cap_is_enforced() {
        let s = make_sentence("x", &["a", "b"], vec![]).unwrap();
        let mut policy = |_: &ParserState| Shift;
        assert!(matches!(
            run_with_policy(&s, &mut policy, 1),
            Err(Error::StepCapExceeded { cap: 1 })
        ));
    }

    /// Exhaustive enumeration of legal sequences for small n.
    fn longest_sequence(state: &ParserState) -> usize {
        if is_terminal(state) {
            return 0;
        }
        legal_actions(state)
            .iter()
            .map(|a| 1 + longest_sequence(&apply(state, a).unwrap()))
            .max()
            .expect("non-terminal states have a legal action")
    }

    #[test]
    fn exhaustive_step_bound_small_n() {
        for n in 1..=3 {
            let longest = longest_sequence(&ParserState::initial(n));
            assert!(longest <= step_bound(n), "n={n} longest={longest}");
        }
    }
}
