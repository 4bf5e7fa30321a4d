use crate::domain::{transition, DomainError, LifecycleEvent, Millis, Slot, SlotId, SlotState, SystemState};

/// Idle slots whose deadline has passed, in id order.
pub fn expired_idle(state: &SystemState, now: Millis) -> Vec<SlotId> {
    state
        .slots
        .values()
        .filter(|s| s.state == SlotState::Idle && s.idle_deadline <= now)
        .map(|s| s.id)
        .collect()
}

/// Drains and terminates one Idle slot, removing it from the live set.
pub fn retire(state: &mut SystemState, id: SlotId, now: Millis) -> Result<Slot, DomainError> {
    let slot = state
        .slots
        .remove(&id)
        .ok_or_else(|| DomainError::Invariant(format!("slot {id} is not live")))?;
    let slot = transition(slot, LifecycleEvent::Drain, now)?;
    transition(slot, LifecycleEvent::Terminate, now)
}

/// Collects every expired Idle slot at a billing boundary.
/// Busy and provisioning slots are never touched.
pub fn gc_sweep(state: &mut SystemState, now: Millis, billing_granularity: Millis) -> Result<Vec<Slot>, DomainError> {
    if billing_granularity == 0 || now % billing_granularity != 0 {
        return Err(DomainError::Invariant(format!(
            "sweep at {now} is off the {billing_granularity} ms billing grid"
        )));
    }
    expired_idle(state, now)
        .into_iter()
        .map(|id| retire(state, id, now))
        .collect()
}

/// First billing boundary at or after `t`.
pub fn next_boundary(t: Millis, granularity: Millis) -> Millis {
    t.div_ceil(granularity) * granularity
}
