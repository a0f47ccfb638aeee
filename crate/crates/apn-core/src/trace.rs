//! Trace records: the externally visible event log of one replication.

use crate::model::{Color, PlaceId, Time, TokenId, TransitionId};

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum TraceEvent {
    /// A (token, transition) pair became enabled and a firing was scheduled.
    Enable,
    /// A scheduled firing was cancelled because the pair became disabled.
    Preempt,
    /// A token moved through a transition.
    Fire,
    /// A source transition created a token.
    Emit,
    /// A sink transition removed a token.
    Absorb,
}

impl TraceEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceEvent::Enable => "enable",
            TraceEvent::Preempt => "preempt",
            TraceEvent::Fire => "fire",
            TraceEvent::Emit => "emit",
            TraceEvent::Absorb => "absorb",
        }
    }
}

/// One event. Records are emitted in simulation order: non-decreasing time,
/// ties resolved by the engine's firing order.
#[derive(Clone, PartialEq, Debug)]
pub struct TraceRecord {
    pub time: Time,
    pub event: TraceEvent,
    pub transition: TransitionId,
    pub token: TokenId,
    pub color_before: Color,
    pub color_after: Color,
    pub from: Option<PlaceId>,
    pub to: Option<PlaceId>,
    pub age_before: Time,
    pub age_after: Time,
}
