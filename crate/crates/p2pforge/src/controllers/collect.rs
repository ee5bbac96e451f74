//! Evidence collection: run a client for a window with every packet it
//! sends or receives appended to the bag, timestamped, in arrival order.

use std::ops::Range;

use super::ControllerError;
use crate::emulator::client::EmulatedClient;
use crate::emulator::transport::Transport;
use crate::evidence::{BagError, SharedBag};
use crate::types::SimTime;

/// Taps the client into the bag for `duration` signature time units.
/// Returns the range of chunk numbers the window wrote into.
pub fn collect_evidence(
    client: &mut EmulatedClient,
    transport: &mut dyn Transport,
    duration: SimTime,
    bag: &SharedBag,
) -> Result<Range<u64>, ControllerError> {
    if bag.with(|b| b.is_sealed()) {
        return Err(ControllerError::Bag(BagError::BagSealed));
    }
    let chunk_size = bag.with(|b| b.chunk_size()) as u64;
    let start_offset = bag.with(|b| b.record_bytes());

    client.attach_tap(Box::new(bag.clone()));
    let unit = transport.ticks_per_unit().max(1);
    let horizon = transport.now() + duration * unit;
    while transport.now() < horizon {
        let t = transport.step();
        client.service_tick(transport, t);
    }
    client.detach_tap();

    let end_offset = bag.with(|b| b.record_bytes());
    let first = start_offset / chunk_size;
    let last = end_offset.div_ceil(chunk_size);
    Ok(first..last.max(first))
}
