use serde::{Deserialize, Serialize};

use crate::domain::{SlotOutcome, SlotState, WeightVector};
use crate::error::{Error, Result};

/// Per-slot objective terms: utilization `u`, double-show avoidance `d` and
/// attendance balance `b`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub u: f64,
    pub d: f64,
    pub b: f64,
}

impl RewardComponents {
    pub const ZERO: RewardComponents = RewardComponents {
        u: 0.0,
        d: 0.0,
        b: 0.0,
    };

    pub fn scalarize(&self, w: &WeightVector) -> f64 {
        w.alpha * self.u + w.beta * self.d + w.gamma * self.b
    }

    pub fn add(&self, other: &RewardComponents) -> RewardComponents {
        RewardComponents {
            u: self.u + other.u,
            d: self.d + other.d,
            b: self.b + other.b,
        }
    }

    pub fn scale(&self, k: f64) -> RewardComponents {
        RewardComponents {
            u: self.u * k,
            d: self.d * k,
            b: self.b * k,
        }
    }
}

/// Expected number of attending patients given their no-show probabilities.
pub fn expected_attendance(pis: &[f64]) -> f64 {
    pis.iter().map(|p| 1.0 - p).sum()
}

/// Closeness of expected attendance to exactly one patient.
pub fn attendance_balance(expected: f64) -> f64 {
    (1.0 - (expected - 1.0).abs()).max(0.0)
}

/// Expectation-based reward for the slot configuration `pis` right after a
/// booking: one probability for a single-booked slot, two for a double.
pub fn shaped_reward(pis: &[f64]) -> Result<RewardComponents> {
    let b = attendance_balance(expected_attendance(pis));
    match *pis {
        [p] => Ok(RewardComponents {
            u: 1.0 - p,
            d: 1.0,
            b,
        }),
        [p1, p2] => Ok(RewardComponents {
            u: (1.0 - p1) * p2 + p1 * (1.0 - p2),
            d: 1.0 - (1.0 - p1) * (1.0 - p2),
            b,
        }),
        _ => Err(Error::Contract(format!(
            "shaped reward needs one or two probabilities, got {}",
            pis.len()
        ))),
    }
}

/// Realized reward terms from a slot's attendance.
///
/// `d` is 0 only when both patients of a double-booked slot show; a slot
/// where nobody shows counts as an avoided double show, which makes the
/// expectation of `d` equal its shaped value. Single-booked slots get `d = 1`.
pub fn realized_components(
    show_count: usize,
    double_booked: bool,
    expected: f64,
) -> RewardComponents {
    let s = show_count as f64;
    RewardComponents {
        u: 1.0 - (s - 1.0).abs(),
        d: if double_booked && show_count == 2 {
            0.0
        } else {
            1.0
        },
        b: attendance_balance(expected),
    }
}

/// Resolve attendance of every patient in `slot` from their stored draws.
pub fn realize_arrival(slot: &SlotState) -> Result<(SlotOutcome, RewardComponents)> {
    let bookings = slot.bookings();
    if bookings.is_empty() {
        return Err(Error::Contract("cannot realize an empty slot".into()));
    }
    let show_count = bookings.iter().filter(|b| b.shows()).count();
    let pis: Vec<f64> = bookings.iter().map(|b| b.noshow_prob).collect();
    let expected = expected_attendance(&pis);
    let double = bookings.len() == 2;
    let outcome = SlotOutcome {
        scheduled_count: bookings.len(),
        show_count,
        expected_attendance: expected,
        was_double_booked: double,
    };
    Ok((outcome, realized_components(show_count, double, expected)))
}
