use crate::domain::{
    Booking, ClinicTopology, Occupancy, PhysicianLoad, SearchTier, SlotCandidates, SlotRef,
    SlotState,
};
use crate::error::{Error, Result};

/// Slot grid for every physician over the horizon, plus load counters.
#[derive(Debug, Clone)]
pub struct Calendar {
    slots: Vec<SlotState>,
    scheduled: Vec<usize>,
    empty_per_day: Vec<usize>,
    horizon: usize,
    slots_per_day: usize,
}

impl Calendar {
    pub fn new(topology: &ClinicTopology) -> Self {
        let horizon = topology.horizon_days();
        let per_day = topology.slots_per_day();
        let n = topology.physicians().len();
        let mut slots = Vec::with_capacity(n * horizon * per_day);
        for _ in 0..n * horizon {
            slots
                .extend((0..per_day).map(|s| SlotState::new(topology.slot_eligible_for_double(s))));
        }
        Calendar {
            slots,
            scheduled: vec![0; n],
            empty_per_day: vec![per_day; n * horizon],
            horizon,
            slots_per_day: per_day,
        }
    }

    fn index(&self, at: SlotRef) -> usize {
        (at.physician * self.horizon + (at.day as usize - 1)) * self.slots_per_day
            + at.slot as usize
    }

    pub fn slot(&self, at: SlotRef) -> &SlotState {
        &self.slots[self.index(at)]
    }

    pub(crate) fn slot_mut(&mut self, at: SlotRef) -> &mut SlotState {
        let i = self.index(at);
        &mut self.slots[i]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn slots_per_day(&self) -> usize {
        self.slots_per_day
    }

    pub fn num_physicians(&self) -> usize {
        self.scheduled.len()
    }

    /// Workload of `physician` as seen on `from_day`.
    pub fn load(&self, physician: usize, from_day: u32) -> PhysicianLoad {
        let start = physician * self.horizon;
        let first = (from_day as usize).saturating_sub(1).min(self.horizon);
        PhysicianLoad {
            scheduled: self.scheduled[physician],
            remaining: self.empty_per_day[start + first..start + self.horizon]
                .iter()
                .sum(),
        }
    }

    /// Place `booking` in `at`. Returns true when the slot was empty before.
    pub fn book(&mut self, at: SlotRef, booking: Booking) -> Result<bool> {
        let was_empty = self.slot(at).occupancy() == Occupancy::Empty;
        self.slot_mut(at).add_booking(booking)?;
        self.scheduled[at.physician] += 1;
        if was_empty {
            self.empty_per_day[at.physician * self.horizon + at.day as usize - 1] -= 1;
        }
        Ok(was_empty)
    }

    pub fn iter(&self) -> impl Iterator<Item = (SlotRef, &SlotState)> + '_ {
        self.slots.iter().enumerate().map(move |(i, s)| {
            let slot = (i % self.slots_per_day) as u32;
            let rest = i / self.slots_per_day;
            let day = (rest % self.horizon) as u32 + 1;
            let physician = rest / self.horizon;
            (
                SlotRef {
                    physician,
                    day,
                    slot,
                },
                s,
            )
        })
    }
}

/// Least-loaded physician of `department`; ties go to the lowest index.
pub fn assign_physician(
    topology: &ClinicTopology,
    department: usize,
    calendar: &Calendar,
) -> Result<usize> {
    let dept = topology
        .departments()
        .get(department)
        .ok_or_else(|| Error::Contract(format!("unknown department {department}")))?;
    dept.physicians
        .iter()
        .copied()
        .min_by_key(|&p| (calendar.load(p, 1).scheduled, p))
        .ok_or_else(|| Error::Contract(format!("department {department} has no physicians")))
}

/// Scan order for one physician: the requested slot on the appointment day,
/// the rest of that day, then every other day from `first_day` to the horizon.
fn scan_physician(
    physician: usize,
    first_day: u32,
    appointment_day: u32,
    requested_slot: u32,
    horizon: u32,
    slots_per_day: u32,
) -> impl Iterator<Item = SlotRef> {
    let at = move |day, slot| SlotRef {
        physician,
        day,
        slot,
    };
    let same_day = std::iter::once(requested_slot)
        .chain((0..slots_per_day).filter(move |&s| s != requested_slot))
        .map(move |s| at(appointment_day, s));
    let other_days = (first_day..=horizon)
        .filter(move |&d| d != appointment_day)
        .flat_map(move |d| (0..slots_per_day).map(move |s| at(d, s)));
    same_day.chain(other_days)
}

/// Hierarchical slot search for a request already assigned to `physician`.
///
/// Scans the assigned physician (requested slot first, then other slots and
/// days), then the other physicians of the department in index order. The
/// first empty slot and, independently, the first single-booked slot still
/// open for a second patient are returned. Days before the booking day are
/// never offered.
pub fn find_candidates(
    topology: &ClinicTopology,
    calendar: &Calendar,
    physician: usize,
    booking_day: u32,
    appointment_day: u32,
    requested_slot: u32,
) -> SlotCandidates {
    let horizon = topology.horizon_days() as u32;
    let per_day = topology.slots_per_day() as u32;
    let department = topology.physicians()[physician].department;
    let colleagues = topology.departments()[department]
        .physicians
        .iter()
        .copied()
        .filter(|&p| p != physician);
    let order = std::iter::once(physician).chain(colleagues);

    let mut out = SlotCandidates::NONE;
    for (rank, p) in order.enumerate() {
        let scan = scan_physician(
            p,
            booking_day,
            appointment_day,
            requested_slot,
            horizon,
            per_day,
        );
        for (pos, at) in scan.enumerate() {
            let state = calendar.slot(at);
            let hit_empty = out.empty.is_none() && state.occupancy() == Occupancy::Empty;
            let hit_double = out.double.is_none() && state.accepts_double();
            if hit_empty {
                out.empty = Some(at);
            }
            if hit_double {
                out.double = Some(at);
            }
            if (hit_empty || hit_double) && out.primary.is_none() {
                out.primary = Some(at);
                out.tier = match (rank, pos) {
                    (0, 0) => SearchTier::RequestedSlot,
                    (0, _) => SearchTier::SameDoctorOtherDay,
                    _ => SearchTier::SameDeptOtherDoctor,
                };
            }
            if out.empty.is_some() && out.double.is_some() {
                return out;
            }
        }
    }
    out
}
