//! Scheduling world data model and MDP state encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of components in an [`Observation`].
pub const OBS_DIM: usize = 10;
pub const NUM_ACTIONS: usize = 3;

/// Column names for the observation components, in encoding order.
pub const FEATURE_NAMES: [&str; OBS_DIM] = [
    "clinic",
    "department",
    "physician",
    "appointment_day",
    "slot_index",
    "slot_status",
    "noshow_prob",
    "double_eligible",
    "physician_scheduled",
    "physician_remaining",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Department {
    pub clinic: usize,
    /// Global physician indices, in index order.
    pub physicians: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Physician {
    pub clinic: usize,
    pub department: usize,
}

/// Clinic → department → physician hierarchy plus the per-day slot grid.
///
/// Departments and physicians carry global indices; every physician belongs to
/// exactly one department, and every department to exactly one clinic.
#[derive(Debug, Clone, PartialEq)]
pub struct ClinicTopology {
    num_clinics: usize,
    departments: Vec<Department>,
    physicians: Vec<Physician>,
    slots_per_day: usize,
    horizon_days: usize,
    double_eligible: Vec<bool>,
}

impl ClinicTopology {
    /// `layout[c][d]` is the number of physicians in department `d` of clinic `c`.
    pub fn new(layout: &[Vec<usize>], slots_per_day: usize, horizon_days: usize) -> Result<Self> {
        Self::with_eligibility(layout, slots_per_day, horizon_days, None)
    }

    /// Like [`ClinicTopology::new`], with a per-intra-day-slot double-booking
    /// eligibility mask (all slots eligible when `None`).
    pub fn with_eligibility(
        layout: &[Vec<usize>],
        slots_per_day: usize,
        horizon_days: usize,
        double_eligible: Option<&[bool]>,
    ) -> Result<Self> {
        if layout.is_empty() {
            return Err(Error::Config("topology needs at least one clinic".into()));
        }
        if slots_per_day == 0 {
            return Err(Error::Config("slots_per_day must be positive".into()));
        }
        if horizon_days == 0 {
            return Err(Error::Config("horizon_days must be at least 1".into()));
        }
        let double_eligible = match double_eligible {
            Some(mask) if mask.len() != slots_per_day => {
                return Err(Error::Config(format!(
                    "double_eligible_slots has {} entries, expected {slots_per_day}",
                    mask.len()
                )))
            }
            Some(mask) => mask.to_vec(),
            None => vec![true; slots_per_day],
        };
        let mut departments = Vec::new();
        let mut physicians = Vec::new();
        for (c, clinic) in layout.iter().enumerate() {
            if clinic.is_empty() {
                return Err(Error::Config(format!("clinic {c} has no departments")));
            }
            for &count in clinic {
                if count == 0 {
                    return Err(Error::Config(format!(
                        "department {} has no physicians",
                        departments.len()
                    )));
                }
                let dept = departments.len();
                let ids = (physicians.len()..physicians.len() + count).collect();
                physicians.extend((0..count).map(|_| Physician {
                    clinic: c,
                    department: dept,
                }));
                departments.push(Department {
                    clinic: c,
                    physicians: ids,
                });
            }
        }
        Ok(ClinicTopology {
            num_clinics: layout.len(),
            departments,
            physicians,
            slots_per_day,
            horizon_days,
            double_eligible,
        })
    }

    pub fn num_clinics(&self) -> usize {
        self.num_clinics
    }

    pub fn departments(&self) -> &[Department] {
        &self.departments
    }

    pub fn physicians(&self) -> &[Physician] {
        &self.physicians
    }

    pub fn slots_per_day(&self) -> usize {
        self.slots_per_day
    }

    pub fn horizon_days(&self) -> usize {
        self.horizon_days
    }

    pub fn slot_eligible_for_double(&self, slot: usize) -> bool {
        self.double_eligible[slot]
    }

    /// Slots per physician over the whole horizon.
    pub fn physician_capacity(&self) -> usize {
        self.slots_per_day * self.horizon_days
    }

    /// Single-booking capacity of the whole clinic network over the horizon.
    pub fn total_capacity(&self) -> usize {
        self.physicians.len() * self.physician_capacity()
    }

    pub fn contains(&self, slot: SlotRef) -> bool {
        slot.physician < self.physicians.len()
            && (1..=self.horizon_days).contains(&(slot.day as usize))
            && (slot.slot as usize) < self.slots_per_day
    }
}

/// A physician's slot on a given day. Days are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotRef {
    pub physician: usize,
    pub day: u32,
    pub slot: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Occupancy {
    Empty,
    SingleBooked,
    DoubleBooked,
}

impl Occupancy {
    pub fn encode(self) -> f64 {
        match self {
            Occupancy::Empty => 0.0,
            Occupancy::SingleBooked => 0.5,
            Occupancy::DoubleBooked => 1.0,
        }
    }
}

/// A patient placed in a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Booking {
    pub patient_id: u64,
    /// No-show probability seen by the decision maker.
    pub noshow_prob: f64,
    /// No-show probability that drives realized attendance.
    pub attend_noshow_prob: f64,
    /// Uniform draw fixed when the request was created; the patient shows iff
    /// `show_draw < 1 - attend_noshow_prob`.
    pub show_draw: f64,
    pub booked_on: u32,
}

impl Booking {
    pub fn shows(&self) -> bool {
        self.show_draw < 1.0 - self.attend_noshow_prob
    }
}

/// Realized attendance of a slot, stored once its appointment day has passed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotOutcome {
    pub scheduled_count: usize,
    pub show_count: usize,
    pub expected_attendance: f64,
    pub was_double_booked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    bookings: Vec<Booking>,
    double_eligible: bool,
    pub realized: Option<SlotOutcome>,
}

impl SlotState {
    pub fn new(double_eligible: bool) -> Self {
        SlotState {
            bookings: Vec::with_capacity(2),
            double_eligible,
            realized: None,
        }
    }

    pub fn occupancy(&self) -> Occupancy {
        match self.bookings.len() {
            0 => Occupancy::Empty,
            1 => Occupancy::SingleBooked,
            _ => Occupancy::DoubleBooked,
        }
    }

    pub fn bookings(&self) -> &[Booking] {
        &self.bookings
    }

    pub fn double_eligible(&self) -> bool {
        self.double_eligible
    }

    /// Single-booked and still open for a second patient.
    pub fn accepts_double(&self) -> bool {
        self.bookings.len() == 1 && self.double_eligible
    }

    pub fn add_booking(&mut self, booking: Booking) -> Result<()> {
        match self.bookings.len() {
            0 => {}
            1 if self.double_eligible => self.double_eligible = false,
            1 => {
                return Err(Error::Contract(
                    "slot is not eligible for double-booking".into(),
                ))
            }
            _ => return Err(Error::Invariant("slot already holds two bookings".into())),
        }
        self.bookings.push(booking);
        Ok(())
    }
}

/// One incoming patient request.
#[derive(Debug, Clone, PartialEq)]
pub struct BookingRequest {
    pub patient_id: u64,
    pub features: Vec<f64>,
    /// Predicted no-show probability, after any perturbation.
    pub noshow_prob: f64,
    pub booking_day: u32,
    pub lead_time_days: u32,
    pub appointment_day: u32,
    pub requested_slot: u32,
    pub clinic_id: usize,
    pub department_id: usize,
    pub(crate) attend_noshow_prob: f64,
    pub(crate) show_draw: f64,
}

impl BookingRequest {
    pub(crate) fn booking(&self) -> Booking {
        Booking {
            patient_id: self.patient_id,
            noshow_prob: self.noshow_prob,
            attend_noshow_prob: self.attend_noshow_prob,
            show_draw: self.show_draw,
            booked_on: self.booking_day,
        }
    }
}

/// Workload of one physician at decision time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PhysicianLoad {
    /// Patients currently scheduled (N_p).
    pub scheduled: usize,
    /// Empty slots remaining from the current day to the horizon (A_p).
    pub remaining: usize,
}

/// Normalized MDP state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn normalize_index(index: usize, count: usize) -> f64 {
    if count <= 1 {
        0.0
    } else {
        index as f64 / (count - 1) as f64
    }
}

/// Inverse of the categorical normalization used by [`encode_observation`].
pub fn decode_index(value: f64, count: usize) -> usize {
    if count <= 1 {
        0
    } else {
        (value * (count - 1) as f64).round() as usize
    }
}

/// Encode the state seen when deciding on `request` with candidate `slot_ref`.
pub fn encode_observation(
    topology: &ClinicTopology,
    slot_ref: SlotRef,
    slot: &SlotState,
    request: &BookingRequest,
    load: PhysicianLoad,
) -> Result<Observation> {
    if !topology.contains(slot_ref) {
        return Err(Error::Contract(format!(
            "{slot_ref:?} is not in the topology"
        )));
    }
    let capacity = topology.physician_capacity();
    if load.scheduled > 2 * capacity {
        return Err(Error::Invariant(format!(
            "physician {} has {} patients scheduled, above twice its capacity {capacity}",
            slot_ref.physician, load.scheduled
        )));
    }
    if load.remaining > capacity {
        return Err(Error::Invariant(format!(
            "physician {} reports {} remaining slots, above its capacity {capacity}",
            slot_ref.physician, load.remaining
        )));
    }
    if !(0.0..=1.0).contains(&request.noshow_prob) {
        return Err(Error::Contract(format!(
            "no-show probability {} outside [0, 1]",
            request.noshow_prob
        )));
    }
    let physician = topology.physicians()[slot_ref.physician];
    let horizon = topology.horizon_days() as f64;
    Ok(Observation([
        normalize_index(physician.clinic, topology.num_clinics()),
        normalize_index(physician.department, topology.departments().len()),
        normalize_index(slot_ref.physician, topology.physicians().len()),
        slot_ref.day as f64 / horizon,
        normalize_index(slot_ref.slot as usize, topology.slots_per_day()),
        slot.occupancy().encode(),
        request.noshow_prob,
        if slot.double_eligible() { 1.0 } else { 0.0 },
        load.scheduled as f64 / (2 * capacity) as f64,
        load.remaining as f64 / capacity as f64,
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    SingleBook = 0,
    DoubleBook = 1,
    Reject = 2,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::SingleBook, Action::DoubleBook, Action::Reject];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }
}

/// Feasibility of the three actions. Construct with [`valid_actions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMask(pub [bool; NUM_ACTIONS]);

impl ActionMask {
    pub const ALL: ActionMask = ActionMask([true; NUM_ACTIONS]);

    pub fn allows(&self, action: Action) -> bool {
        self.0[action.index()]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&v| v).count()
    }
}

/// Output of the hierarchical slot search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotCandidates {
    pub empty: Option<SlotRef>,
    /// Single-booked slot still eligible for a second patient.
    pub double: Option<SlotRef>,
    /// Tier at which the first candidate of either kind was found.
    pub tier: SearchTier,
    /// Whichever candidate the scan reached first; this is the slot the
    /// observation describes.
    pub primary: Option<SlotRef>,
}

impl SlotCandidates {
    pub const NONE: SlotCandidates = SlotCandidates {
        empty: None,
        double: None,
        tier: SearchTier::None,
        primary: None,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchTier {
    RequestedSlot,
    SameDoctorOtherDay,
    SameDeptOtherDoctor,
    None,
}

/// Single-book needs an empty slot, double-book a single-booked eligible one;
/// reject is allowed only when neither exists.
pub fn valid_actions(candidates: &SlotCandidates) -> ActionMask {
    let single = candidates.empty.is_some();
    let double = candidates.double.is_some();
    ActionMask([single, double, !single && !double])
}

/// Objective weights (α, β, γ) for utilization, double-show avoidance and
/// attendance balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl WeightVector {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = WeightVector { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.alpha, self.beta, self.gamma];
        if parts.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "weights must be finite and non-negative: {self:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "weights sum to {sum}, not 1: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }

    pub fn distance(&self, other: &WeightVector) -> f64 {
        let a = self.as_array();
        let b = other.as_array();
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// The ten weight rows used for the default ensemble.
    pub fn default_table() -> Vec<WeightVector> {
        [
            (1.0, 0.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, 0.0, 1.0),
            (0.5, 0.25, 0.25),
            (0.25, 0.5, 0.25),
            (0.25, 0.25, 0.5),
            (0.33, 0.33, 0.34),
            (0.7, 0.2, 0.1),
            (0.2, 0.7, 0.1),
            (0.2, 0.1, 0.7),
        ]
        .into_iter()
        .map(|(alpha, beta, gamma)| WeightVector { alpha, beta, gamma })
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn request(pi: f64) -> BookingRequest {
        BookingRequest {
            patient_id: 0,
            features: vec![],
            noshow_prob: pi,
            booking_day: 1,
            lead_time_days: 0,
            appointment_day: 1,
            requested_slot: 0,
            clinic_id: 0,
            department_id: 0,
            attend_noshow_prob: pi,
            show_draw: 0.5,
        }
    }

    fn topo() -> ClinicTopology {
        ClinicTopology::new(&[vec![4, 4]], 16, 14).unwrap()
    }

    #[test]
    fn empty_slot_endpoints() {
        let t = topo();
        let slot = SlotState::new(true);
        let load = PhysicianLoad {
            scheduled: 0,
            remaining: t.physician_capacity(),
        };
        let at = SlotRef {
            physician: 5,
            day: 14,
            slot: 15,
        };
        let obs = encode_observation(&t, at, &slot, &request(0.4), load).unwrap();
        assert_eq!(obs.0[5], 0.0);
        assert_eq!(obs.0[6], 0.4);
        assert_eq!(obs.0[8], 0.0);
        assert_eq!(obs.0[9], 1.0);
        assert_eq!(obs.0[3], 1.0);
        assert_eq!(obs.0[4], 1.0);
        assert_eq!(obs.0[1], 1.0);
    }

    #[test]
    fn single_booked_status_encodes_half() {
        let t = topo();
        let mut slot = SlotState::new(true);
        slot.add_booking(request(0.3).booking()).unwrap();
        let at = SlotRef {
            physician: 0,
            day: 3,
            slot: 2,
        };
        let obs =
            encode_observation(&t, at, &slot, &request(0.4), PhysicianLoad::default()).unwrap();
        assert_eq!(obs.0[5], 0.5);
        assert_eq!(obs.0[7], 1.0);
        slot.add_booking(request(0.3).booking()).unwrap();
        let obs =
            encode_observation(&t, at, &slot, &request(0.4), PhysicianLoad::default()).unwrap();
        assert_eq!(obs.0[5], 1.0);
        assert_eq!(obs.0[7], 0.0);
    }

    #[test]
    fn overloaded_physician_is_rejected() {
        let t = topo();
        let load = PhysicianLoad {
            scheduled: 2 * t.physician_capacity() + 1,
            remaining: 0,
        };
        let at = SlotRef {
            physician: 0,
            day: 1,
            slot: 0,
        };
        let err = encode_observation(&t, at, &SlotState::new(true), &request(0.1), load);
        assert!(matches!(err, Err(Error::Invariant(_))));
    }

    #[test]
    fn third_booking_is_refused() {
        let mut slot = SlotState::new(true);
        slot.add_booking(request(0.1).booking()).unwrap();
        slot.add_booking(request(0.1).booking()).unwrap();
        assert!(slot.add_booking(request(0.1).booking()).is_err());
        assert_eq!(slot.bookings().len(), 2);
    }

    #[test]
    fn mask_rules() {
        let s = SlotRef {
            physician: 0,
            day: 1,
            slot: 0,
        };
        let mut c = SlotCandidates::NONE;
        assert_eq!(valid_actions(&c).0, [false, false, true]);
        c.empty = Some(s);
        assert_eq!(valid_actions(&c).0, [true, false, false]);
        c.double = Some(s);
        assert_eq!(valid_actions(&c).0, [true, true, false]);
        c.empty = None;
        assert_eq!(valid_actions(&c).0, [false, true, false]);
    }

    #[test]
    fn default_weight_table_sums_to_one() {
        let table = WeightVector::default_table();
        assert_eq!(table.len(), 10);
        for w in &table {
            w.validate().unwrap();
        }
        assert_eq!(table[0].as_array(), [1.0, 0.0, 0.0]);
        assert_eq!(table[6].as_array(), [0.33, 0.33, 0.34]);
        assert!(WeightVector::new(0.5, 0.5, 0.1).is_err());
    }

    #[test]
    fn topology_validation() {
        assert!(ClinicTopology::new(&[], 16, 14).is_err());
        assert!(ClinicTopology::new(&[vec![2, 0]], 16, 14).is_err());
        assert!(ClinicTopology::new(&[vec![2]], 16, 0).is_err());
        let t = ClinicTopology::new(&[vec![2, 3], vec![1]], 16, 14).unwrap();
        assert_eq!(t.departments().len(), 3);
        assert_eq!(t.physicians().len(), 6);
        assert_eq!(
            t.physicians()[5],
            Physician {
                clinic: 1,
                department: 2
            }
        );
        assert_eq!(t.departments()[1].physicians, vec![2, 3, 4]);
    }

    proptest! {
        #[test]
        fn categorical_components_round_trip(
            clinics in 1usize..=4,
            depts in 1usize..=4,
            docs in 1usize..=4,
            slots in 1usize..=64,
            horizon in 1usize..=64,
            seed in any::<u64>(),
        ) {
            let layout = vec![vec![docs; depts]; clinics];
            let t = ClinicTopology::new(&layout, slots, horizon).unwrap();
            let physician = (seed as usize) % t.physicians().len();
            let day = 1 + (seed >> 16) as usize % horizon;
            let slot = (seed >> 32) as usize % slots;
            let at = SlotRef { physician, day: day as u32, slot: slot as u32 };
            let obs = encode_observation(&t, at, &SlotState::new(true), &request(0.2), PhysicianLoad::default()).unwrap();
            let p = t.physicians()[physician];
            prop_assert_eq!(decode_index(obs.0[0], t.num_clinics()), p.clinic);
            prop_assert_eq!(decode_index(obs.0[1], t.departments().len()), p.department);
            prop_assert_eq!(decode_index(obs.0[2], t.physicians().len()), physician);
            prop_assert_eq!((obs.0[3] * horizon as f64).round() as usize, day);
            prop_assert_eq!(decode_index(obs.0[4], slots), slot);
            prop_assert!(obs.0.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
