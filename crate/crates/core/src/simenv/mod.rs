//! Discrete-event simulation of the booking horizon.
//!
//! Two event kinds drive an episode. Booking events carry one patient request
//! each and stop the simulation for a decision; arrival events realize the
//! attendance of one booked slot on its appointment day and need no decision.
//! On a given day all bookings are processed before any arrival.

mod calendar;
mod reward;

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

pub use calendar::{assign_physician, find_candidates, Calendar};
pub use reward::{
    attendance_balance, expected_attendance, realize_arrival, realized_components, shaped_reward,
    RewardComponents,
};

use crate::domain::{
    encode_observation, valid_actions, Action, ActionMask, BookingRequest, ClinicTopology,
    Observation, SlotCandidates, SlotOutcome, SlotRef,
};
use crate::error::{Error, Result};
use crate::noshow::{perturb, sample_features, Predictor, PredictorConfig};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Mean booking requests per day.
    pub arrival_rate: f64,
    pub horizon_days: usize,
    pub slots_per_day: usize,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
    /// `topology[c][d]` physicians in department `d` of clinic `c`.
    pub topology: Vec<Vec<usize>>,
    /// Per intra-day slot; all slots eligible when absent.
    pub double_eligible_slots: Option<Vec<bool>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            arrival_rate: 100.0,
            horizon_days: 14,
            slots_per_day: 16,
            gamma_shape: 2.0,
            gamma_scale: 2.0,
            topology: vec![vec![4, 4]],
            double_eligible_slots: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return Err(Error::Config(format!(
                "arrival_rate must be positive, got {}",
                self.arrival_rate
            )));
        }
        if !(self.gamma_shape > 0.0 && self.gamma_scale > 0.0) {
            return Err(Error::Config(format!(
                "gamma parameters must be positive, got ({}, {})",
                self.gamma_shape, self.gamma_scale
            )));
        }
        self.build_topology().map(|_| ())
    }

    pub fn build_topology(&self) -> Result<ClinicTopology> {
        ClinicTopology::with_eligibility(
            &self.topology,
            self.slots_per_day,
            self.horizon_days,
            self.double_eligible_slots.as_deref(),
        )
    }
}

/// Everything about an episode that does not change between episodes.
#[derive(Debug)]
pub struct SimWorld {
    pub topology: ClinicTopology,
    pub config: SimConfig,
    pub predictor: Predictor,
    pub delta: f64,
    pub perturb_attendance: bool,
    lead_time: Gamma<f64>,
}

impl SimWorld {
    pub fn new(config: &SimConfig, predictor: &PredictorConfig) -> Result<Arc<Self>> {
        config.validate()?;
        let lead_time = Gamma::new(config.gamma_shape, config.gamma_scale)
            .map_err(|e| Error::Config(format!("lead-time gamma: {e}")))?;
        Ok(Arc::new(SimWorld {
            topology: config.build_topology()?,
            config: config.clone(),
            predictor: Predictor::new(predictor)?,
            delta: predictor.perturbation_delta,
            perturb_attendance: predictor.perturb_attendance,
            lead_time,
        }))
    }

    /// Same world with a different perturbation shift.
    pub fn with_delta(&self, delta: f64) -> Result<Arc<Self>> {
        if !(-1.0..=1.0).contains(&delta) {
            return Err(Error::Config(format!(
                "perturbation delta {delta} outside [-1, 1]"
            )));
        }
        Ok(Arc::new(SimWorld {
            topology: self.topology.clone(),
            config: self.config.clone(),
            predictor: self.predictor.clone(),
            delta,
            perturb_attendance: self.perturb_attendance,
            lead_time: self.lead_time,
        }))
    }

    /// Draw a raw lead time and the clipped one for a request booked on `booking_day`.
    pub fn sample_lead_time<R: Rng + ?Sized>(&self, booking_day: u32, rng: &mut R) -> (f64, u32) {
        let raw = self.lead_time.sample(rng);
        let max = self
            .topology
            .horizon_days()
            .saturating_sub(booking_day as usize) as f64;
        (raw, raw.round().clamp(0.0, max) as u32)
    }
}

/// Named random streams of one episode.
#[derive(Debug, Clone)]
struct Streams {
    requests: ChaCha8Rng,
    lead_time: ChaCha8Rng,
    features: ChaCha8Rng,
    predictor: ChaCha8Rng,
    attendance: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            requests: seeds::stream(seed, &[seeds::STREAM_REQUESTS]),
            lead_time: seeds::stream(seed, &[seeds::STREAM_LEAD_TIME]),
            features: seeds::stream(seed, &[seeds::STREAM_FEATURES]),
            predictor: seeds::stream(seed, &[seeds::STREAM_PREDICTOR]),
            attendance: seeds::stream(seed, &[seeds::STREAM_ATTENDANCE]),
        }
    }
}

/// Request generator for one episode. Draws depend only on the seed and the
/// day, never on booking decisions, so every policy faces the same patients.
#[derive(Debug, Clone)]
pub struct RequestGenerator {
    streams: Streams,
    next_patient: u64,
}

impl RequestGenerator {
    pub fn new(seed: u64) -> Self {
        RequestGenerator {
            streams: Streams::new(seed),
            next_patient: 0,
        }
    }

    pub fn generate(&mut self, world: &SimWorld, day: u32) -> Result<Vec<BookingRequest>> {
        let horizon = world.topology.horizon_days() as u32;
        if day == 0 || day > horizon {
            return Err(Error::Contract(format!(
                "booking day {day} outside [1, {horizon}]"
            )));
        }
        let poisson = Poisson::new(world.config.arrival_rate)
            .map_err(|e| Error::Config(format!("arrival poisson: {e}")))?;
        let count = poisson.sample(&mut self.streams.requests) as usize;
        let n_depts = world.topology.departments().len();
        let per_day = world.topology.slots_per_day() as u32;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let department_id = self.streams.requests.random_range(0..n_depts);
            let requested_slot = self.streams.requests.random_range(0..per_day);
            let (_, lead) = world.sample_lead_time(day, &mut self.streams.lead_time);
            let features =
                sample_features(&mut self.streams.features, world.predictor.feature_dim());
            let raw = world
                .predictor
                .predict(&features, &mut self.streams.predictor);
            let seen = perturb(raw, world.delta);
            let show_draw = self.streams.attendance.random::<f64>();
            out.push(BookingRequest {
                patient_id: self.next_patient,
                features,
                noshow_prob: seen,
                booking_day: day,
                lead_time_days: lead,
                appointment_day: day + lead,
                requested_slot,
                clinic_id: world.topology.departments()[department_id].clinic,
                department_id,
                attend_noshow_prob: if world.perturb_attendance { seen } else { raw },
                show_draw,
            });
            self.next_patient += 1;
        }
        Ok(out)
    }
}

/// Ordering key: day, then bookings before arrivals, then insertion order.
pub type TimeKey = (u32, u8, u64);

#[derive(Debug, Clone)]
enum EventKind {
    Booking(Box<BookingRequest>),
    Arrival(SlotRef),
}

#[derive(Debug, Clone)]
struct Event {
    key: TimeKey,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

const PHASE_BOOKING: u8 = 0;
const PHASE_ARRIVAL: u8 = 1;

/// A booking request waiting for the agent.
#[derive(Debug, Clone)]
pub struct Decision {
    pub request: BookingRequest,
    pub physician: usize,
    pub candidates: SlotCandidates,
    pub mask: ActionMask,
    pub observation: Observation,
}

/// Realized result of one booked slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    pub slot: SlotRef,
    pub outcome: SlotOutcome,
    pub realized: RewardComponents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EpisodeCounts {
    pub requests: usize,
    pub scheduled: usize,
    pub rejected: usize,
    pub shows: usize,
    pub no_shows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub shaped: RewardComponents,
    pub placed: Option<SlotRef>,
    pub done: bool,
}

/// One row of the optional event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventLogRow {
    pub day: u32,
    pub seq: u64,
    pub event_kind: &'static str,
    pub patient_id: String,
    pub physician_id: Option<usize>,
    pub slot_day: Option<u32>,
    pub slot_index: Option<u32>,
    pub action: Option<usize>,
    pub pi: Option<f64>,
    pub shaped_u: Option<f64>,
    pub shaped_d: Option<f64>,
    pub shaped_b: Option<f64>,
    #[serde(rename = "realized_S")]
    pub realized_s: Option<usize>,
    pub realized_u: Option<f64>,
    pub realized_d: Option<f64>,
    pub realized_b: Option<f64>,
}

/// An environment that stops at decisions and reports shaped rewards.
pub trait DecisionEnv {
    fn decision(&self) -> Option<(&Observation, &ActionMask)>;
    fn step(&mut self, action: Action) -> Result<StepOutcome>;
}

/// One episode of the scheduling simulation.
#[derive(Debug)]
pub struct SchedulingEnv {
    world: Arc<SimWorld>,
    calendar: Calendar,
    queue: BinaryHeap<Reverse<Event>>,
    generator: RequestGenerator,
    next_generation_day: u32,
    seq: u64,
    last_key: Option<TimeKey>,
    pending: Option<Decision>,
    records: Vec<SlotRecord>,
    counts: EpisodeCounts,
    log: Option<Vec<EventLogRow>>,
    done: bool,
}

impl SchedulingEnv {
    /// Start an episode with an empty calendar. The first decision (if any
    /// request arrives at all) is available through [`SchedulingEnv::pending`].
    pub fn reset(world: Arc<SimWorld>, seed: u64) -> Result<Self> {
        Self::start(world, seed, false)
    }

    /// Like [`SchedulingEnv::reset`] with event logging switched on.
    pub fn reset_with_log(world: Arc<SimWorld>, seed: u64) -> Result<Self> {
        Self::start(world, seed, true)
    }

    fn start(world: Arc<SimWorld>, seed: u64, log: bool) -> Result<Self> {
        let mut env = SchedulingEnv {
            calendar: Calendar::new(&world.topology),
            world,
            queue: BinaryHeap::new(),
            generator: RequestGenerator::new(seed),
            next_generation_day: 1,
            seq: 0,
            last_key: None,
            pending: None,
            records: Vec::new(),
            counts: EpisodeCounts::default(),
            log: log.then(Vec::new),
            done: false,
        };
        env.advance()?;
        Ok(env)
    }

    pub fn world(&self) -> &Arc<SimWorld> {
        &self.world
    }

    pub fn calendar(&self) -> &Calendar {
        &self.calendar
    }

    pub fn pending(&self) -> Option<&Decision> {
        self.pending.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn counts(&self) -> EpisodeCounts {
        self.counts
    }

    /// Realized slots, in arrival order.
    pub fn records(&self) -> &[SlotRecord] {
        &self.records
    }

    pub fn event_log(&self) -> Option<&[EventLogRow]> {
        self.log.as_deref()
    }

    fn push(&mut self, day: u32, phase: u8, kind: EventKind) {
        let key = (day, phase, self.seq);
        self.seq += 1;
        self.queue.push(Reverse(Event { key, kind }));
    }

    fn generate_due_days(&mut self) -> Result<()> {
        let horizon = self.world.topology.horizon_days() as u32;
        while self.next_generation_day <= horizon {
            let due = match self.queue.peek() {
                None => true,
                Some(Reverse(e)) => e.key.0 >= self.next_generation_day,
            };
            if !due {
                break;
            }
            let day = self.next_generation_day;
            for request in self.generator.generate(&self.world, day)? {
                self.push(day, PHASE_BOOKING, EventKind::Booking(Box::new(request)));
            }
            self.next_generation_day += 1;
        }
        Ok(())
    }

    /// Process events until the next booking request or the end of the horizon.
    fn advance(&mut self) -> Result<()> {
        loop {
            self.generate_due_days()?;
            let Some(Reverse(event)) = self.queue.pop() else {
                self.done = true;
                return Ok(());
            };
            if let Some(prev) = self.last_key {
                if event.key < prev {
                    return Err(Error::Invariant(format!(
                        "event {:?} processed after {:?}",
                        event.key, prev
                    )));
                }
            }
            self.last_key = Some(event.key);
            match event.kind {
                EventKind::Arrival(at) => self.realize(at, event.key)?,
                EventKind::Booking(request) => {
                    self.counts.requests += 1;
                    self.pending = Some(self.prepare(*request)?);
                    return Ok(());
                }
            }
        }
    }

    fn prepare(&self, request: BookingRequest) -> Result<Decision> {
        let topology = &self.world.topology;
        let physician = assign_physician(topology, request.department_id, &self.calendar)?;
        let candidates = find_candidates(
            topology,
            &self.calendar,
            physician,
            request.booking_day,
            request.appointment_day,
            request.requested_slot,
        );
        let mask = valid_actions(&candidates);
        // With no candidate the observation describes the requested slot.
        let described = candidates.primary.unwrap_or(SlotRef {
            physician,
            day: request.appointment_day,
            slot: request.requested_slot,
        });
        let load = self.calendar.load(described.physician, request.booking_day);
        let observation = encode_observation(
            topology,
            described,
            self.calendar.slot(described),
            &request,
            load,
        )?;
        Ok(Decision {
            request,
            physician,
            candidates,
            mask,
            observation,
        })
    }

    fn realize(&mut self, at: SlotRef, key: TimeKey) -> Result<()> {
        let (outcome, realized) = realize_arrival(self.calendar.slot(at))?;
        self.counts.shows += outcome.show_count;
        self.counts.no_shows += outcome.scheduled_count - outcome.show_count;
        self.calendar.slot_mut(at).realized = Some(outcome);
        if let Some(log) = self.log.as_mut() {
            let ids: Vec<String> = self
                .calendar
                .slot(at)
                .bookings()
                .iter()
                .map(|b| b.patient_id.to_string())
                .collect();
            log.push(EventLogRow {
                day: key.0,
                seq: key.2,
                event_kind: "arrival",
                patient_id: ids.join(";"),
                physician_id: Some(at.physician),
                slot_day: Some(at.day),
                slot_index: Some(at.slot),
                action: None,
                pi: None,
                shaped_u: None,
                shaped_d: None,
                shaped_b: None,
                realized_s: Some(outcome.show_count),
                realized_u: Some(realized.u),
                realized_d: Some(realized.d),
                realized_b: Some(realized.b),
            });
        }
        self.records.push(SlotRecord {
            slot: at,
            outcome,
            realized,
        });
        Ok(())
    }

    /// Apply `action` to the pending request, then run the simulation forward
    /// to the next decision.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        self.apply(action, true)
    }

    /// Turn the pending request away even though a slot is available.
    ///
    /// Agents never get this choice; it exists for rule-based baselines that
    /// refuse to double-book.
    pub fn decline(&mut self) -> Result<StepOutcome> {
        self.apply(Action::Reject, false)
    }

    fn apply(&mut self, action: Action, enforce_mask: bool) -> Result<StepOutcome> {
        let decision = self.pending.take().ok_or(Error::EpisodeOver)?;
        if enforce_mask && !decision.mask.allows(action) {
            let index = action.index();
            self.pending = Some(decision);
            return Err(Error::InvalidAction { action: index });
        }
        let request = &decision.request;
        let target = match action {
            Action::SingleBook => decision.candidates.empty,
            Action::DoubleBook => decision.candidates.double,
            Action::Reject => None,
        };
        let shaped = match target {
            Some(at) => {
                let newly_occupied = self.calendar.book(at, request.booking())?;
                if newly_occupied {
                    self.push(at.day, PHASE_ARRIVAL, EventKind::Arrival(at));
                }
                self.counts.scheduled += 1;
                let pis: Vec<f64> = self
                    .calendar
                    .slot(at)
                    .bookings()
                    .iter()
                    .map(|b| b.noshow_prob)
                    .collect();
                shaped_reward(&pis)?
            }
            None => {
                self.counts.rejected += 1;
                RewardComponents::ZERO
            }
        };
        if let Some(log) = self.log.as_mut() {
            let key = self.last_key.unwrap_or_default();
            log.push(EventLogRow {
                day: key.0,
                seq: key.2,
                event_kind: "booking",
                patient_id: request.patient_id.to_string(),
                physician_id: target.map(|t| t.physician),
                slot_day: target.map(|t| t.day),
                slot_index: target.map(|t| t.slot),
                action: Some(action.index()),
                pi: Some(request.noshow_prob),
                shaped_u: Some(shaped.u),
                shaped_d: Some(shaped.d),
                shaped_b: Some(shaped.b),
                realized_s: None,
                realized_u: None,
                realized_d: None,
                realized_b: None,
            });
        }
        self.advance()?;
        Ok(StepOutcome {
            shaped,
            placed: target,
            done: self.done,
        })
    }
}

impl DecisionEnv for SchedulingEnv {
    fn decision(&self) -> Option<(&Observation, &ActionMask)> {
        self.pending.as_ref().map(|d| (&d.observation, &d.mask))
    }

    fn step(&mut self, action: Action) -> Result<StepOutcome> {
        SchedulingEnv::step(self, action)
    }
}
