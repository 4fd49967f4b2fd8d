//! Transition-based extraction of aspect-opinion pairs and
//! aspect-sentiment triplets.
//!
//! A sentence is parsed left to right by a seven-action state machine
//! ([`transition`]). Gold action sequences come from a static oracle
//! ([`oracle`]); a recurrent scorer ([`scorer`]) is trained on them by teacher
//! forcing ([`training`]) and decoded greedily ([`decode`]).

pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod oracle;
pub mod scorer;
pub mod synthetic;
pub mod trace;
pub mod training;
pub mod transition;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    make_sentence, Action, Constituent, Direction, GoldTriplet, PairRelation, ParserState, Polarity, Sentence,
    Span, Token, TraceStep,
};
