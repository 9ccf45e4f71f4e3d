//! Trial outcome taxonomy over the room graph.

use alloc::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::env::World;

/// Room entries needed to call a flight repetitive.
pub const REPETITION_THRESHOLD: usize = 3;
/// Distinct rooms needed to call an unsuccessful flight wandering.
pub const WANDER_ROOMS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Direct,
    Wandering,
    Repetitive,
    Failure,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::Direct,
        Outcome::Wandering,
        Outcome::Repetitive,
        Outcome::Failure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Direct => "direct",
            Outcome::Wandering => "wandering",
            Outcome::Repetitive => "repetitive",
            Outcome::Failure => "failure",
        }
    }
}

/// Classifies a flight from its room entry sequence (the start room first,
/// then one element per entry into a room).
///
/// In order: a landing whose rooms form a shortest path to the pad room is
/// direct; any room entered `repetition_threshold` times or more is
/// repetitive; landing by any other route, or touring at least three
/// distinct rooms, is wandering; everything else is a failure.
pub fn classify_outcome(
    entries: &[u32],
    landed: bool,
    world: &World,
    repetition_threshold: usize,
) -> Outcome {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &r in entries {
        *counts.entry(r).or_default() += 1;
    }
    if landed {
        if let (Some(&first), Some(&last), Some(pad)) =
            (entries.first(), entries.last(), world.pad_room)
        {
            let shortest = world.room_distance(first, pad);
            let no_repeats = counts.values().all(|&c| c == 1);
            if last == pad && no_repeats && shortest == Some(entries.len() - 1) {
                return Outcome::Direct;
            }
        }
    }
    if counts.values().any(|&c| c >= repetition_threshold) {
        return Outcome::Repetitive;
    }
    if landed || counts.len() >= WANDER_ROOMS {
        return Outcome::Wandering;
    }
    Outcome::Failure
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::testbed::default_testbed;

    #[test]
    fn shortest_route_landing_is_direct() {
        let w = default_testbed();
        assert_eq!(classify_outcome(&[1, 4, 6], true, &w, 3), Outcome::Direct);
    }

    #[test]
    fn longer_route_landing_is_wandering() {
        let w = default_testbed();
        assert_eq!(
            classify_outcome(&[1, 2, 3, 5, 6], true, &w, 3),
            Outcome::Wandering
        );
    }

    #[test]
    fn ping_pong_is_repetitive() {
        let w = default_testbed();
        assert_eq!(
            classify_outcome(&[1, 2, 1, 2, 1, 2], false, &w, 3),
            Outcome::Repetitive
        );
    }

    #[test]
    fn touring_without_landing_is_wandering() {
        let w = default_testbed();
        assert_eq!(
            classify_outcome(&[1, 2, 3, 5], false, &w, 3),
            Outcome::Wandering
        );
    }

    #[test]
    fn staying_home_is_failure() {
        let w = default_testbed();
        assert_eq!(classify_outcome(&[1], false, &w, 3), Outcome::Failure);
        assert_eq!(classify_outcome(&[1, 2], false, &w, 3), Outcome::Failure);
    }
}
