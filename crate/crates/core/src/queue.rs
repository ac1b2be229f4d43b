//! Counterfactual replay of a trip log as an electric fleet.
//!
//! Every trip drains the battery; at the trip end the driver may decide to
//! charge, picks a station among the nearest ones and joins that station's
//! queue. The queue discipline decides whether the arrival is served and
//! for how long. Arrivals that are not served become lost demand: the energy
//! needed to reach 80% state of charge, booked at the arrival time.
//!
//! Events are processed in `(time, kind, vehicle_id)` order where a plug
//! becoming free sorts before an arrival at the same instant.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{
    charge, choose_station, time_to_80, trip_consumption, update_soc, willingness_to_charge, ChargeEvent,
    StationChoiceSign, WillingnessParams, TARGET_SOC,
};
use crate::ingest::{format_time, EVehicle, Station, Trip, SECONDS_PER_DAY, SECONDS_PER_HOUR};
use crate::panel::{DemandPanel, HourRange, StationPanel};
use crate::rng;

pub const LEDGER_HEADER: [&str; 8] = [
    "vehicle_id",
    "station_id",
    "arrival",
    "depart",
    "soc_before",
    "soc_after",
    "energy_kwh",
    "served",
];

/// Longest session under [`QueuePolicy::ThreeHour`], hours.
pub const THREE_HOUR_LIMIT_H: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueuePolicy {
    /// FIFO waiting line; each car charges to 80% and leaves.
    #[serde(alias = "gas")]
    GasStation,
    /// No waiting; a car on a free plug stays at most three hours.
    #[serde(alias = "3h")]
    ThreeHour,
    /// No waiting; a car on a free plug stays until its next trip.
    #[serde(alias = "first_come", alias = "fcfs")]
    FirstComeFirstServe,
}

impl QueuePolicy {
    pub const ALL: [QueuePolicy; 3] = [
        QueuePolicy::GasStation,
        QueuePolicy::ThreeHour,
        QueuePolicy::FirstComeFirstServe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueuePolicy::GasStation => "gas_station",
            QueuePolicy::ThreeHour => "three_hour",
            QueuePolicy::FirstComeFirstServe => "first_come_first_serve",
        }
    }
}

impl fmt::Display for QueuePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueuePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gas_station" | "gas" => Ok(QueuePolicy::GasStation),
            "three_hour" | "3h" => Ok(QueuePolicy::ThreeHour),
            "first_come_first_serve" | "first_come" | "fcfs" => Ok(QueuePolicy::FirstComeFirstServe),
            other => Err(Error::validation(format!("unknown queue policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub willingness: WillingnessParams,
    pub station_choice_sign: StationChoiceSign,
    /// Replaces the beta willingness with a fixed probability.
    pub willingness_override: Option<f64>,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            willingness: WillingnessParams::default(),
            station_choice_sign: StationChoiceSign::Negative,
            willingness_override: None,
        }
    }
}

/// A willing vehicle at a station.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub vehicle_id: String,
    pub time: i64,
    /// The vehicle must leave by this time (its next trip, or the horizon).
    pub deadline: i64,
    pub soc: f64,
    pub capacity_kwh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueueOutcome {
    Served { connect: i64, depart: i64, soc_after: f64 },
    Waiting,
    Lost,
}

/// Plug occupancy and waiting line of one station.
#[derive(Debug, Clone)]
pub struct StationState {
    pub plugs: u32,
    pub power_kw: f64,
    pub in_use: u32,
    pub waiting: VecDeque<Arrival>,
}

impl StationState {
    pub fn new(station: &Station) -> Self {
        Self {
            plugs: station.plugs,
            power_kw: station.power_kw,
            in_use: 0,
            waiting: VecDeque::new(),
        }
    }

    fn has_free_plug(&self) -> bool {
        self.in_use < self.plugs
    }

    /// Connects `a` at `now` for at most `max_h` hours.
    fn connect(&mut self, a: &Arrival, now: i64, max_h: f64) -> QueueOutcome {
        self.in_use += 1;
        let park_h = (a.deadline - now).max(0) as f64 / 3600.0;
        let duration_h = park_h.min(max_h);
        let depart = if duration_h >= park_h {
            now + (a.deadline - now).max(0)
        } else {
            now + (duration_h * 3600.0).ceil() as i64
        };
        let soc_after = charge(a.soc, a.capacity_kwh, self.power_kw, duration_h).max(a.soc);
        QueueOutcome::Served {
            connect: now,
            depart,
            soc_after,
        }
    }

    /// Frees one plug at `now` and, for a waiting line, hands it to the next
    /// waiter that can still use it. Returns the waiters resolved by this.
    pub fn release(&mut self, now: i64) -> Vec<(Arrival, QueueOutcome)> {
        self.in_use = self.in_use.saturating_sub(1);
        let mut resolved = Vec::new();
        while let Some(a) = self.waiting.pop_front() {
            if a.deadline <= now {
                resolved.push((a, QueueOutcome::Lost));
                continue;
            }
            let out = self.gas_station_service(&a, now);
            resolved.push((a, out));
            break;
        }
        resolved
    }

    fn gas_station_service(&mut self, a: &Arrival, now: i64) -> QueueOutcome {
        let t80 = time_to_80(a.capacity_kwh, a.soc, self.power_kw).unwrap_or(0.0).max(0.0);
        self.connect(a, now, t80)
    }
}

pub fn step_gas_station_queue(state: &mut StationState, arrival: &Arrival) -> QueueOutcome {
    if state.has_free_plug() {
        state.gas_station_service(arrival, arrival.time)
    } else {
        state.waiting.push_back(arrival.clone());
        QueueOutcome::Waiting
    }
}

pub fn step_three_hour_queue(state: &mut StationState, arrival: &Arrival) -> QueueOutcome {
    if state.has_free_plug() {
        state.connect(arrival, arrival.time, THREE_HOUR_LIMIT_H)
    } else {
        QueueOutcome::Lost
    }
}

pub fn step_first_come_queue(state: &mut StationState, arrival: &Arrival) -> QueueOutcome {
    if state.has_free_plug() {
        state.connect(arrival, arrival.time, f64::INFINITY)
    } else {
        QueueOutcome::Lost
    }
}

fn step(policy: QueuePolicy, state: &mut StationState, arrival: &Arrival) -> QueueOutcome {
    match policy {
        QueuePolicy::GasStation => step_gas_station_queue(state, arrival),
        QueuePolicy::ThreeHour => step_three_hour_queue(state, arrival),
        QueuePolicy::FirstComeFirstServe => step_first_come_queue(state, arrival),
    }
}

/// Energy a lost arrival would have taken to reach 80%.
pub fn lost_energy(soc: f64, capacity_kwh: f64) -> f64 {
    ((TARGET_SOC - soc) * capacity_kwh).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DemandLedger {
    pub served: Vec<ChargeEvent>,
    pub lost: Vec<ChargeEvent>,
    /// Trips that ended with an empty battery.
    pub depletions: usize,
    /// Simulated period: from the first trip's day to the end of the last
    /// trip's day.
    pub horizon: Option<HourRange>,
}

impl DemandLedger {
    pub fn events(&self) -> Vec<&ChargeEvent> {
        let mut all: Vec<&ChargeEvent> = self.served.iter().chain(&self.lost).collect();
        all.sort_by(|a, b| {
            (a.arrival_time, &a.vehicle_id, a.connect_time).cmp(&(b.arrival_time, &b.vehicle_id, b.connect_time))
        });
        all
    }

    pub fn total_served_kwh(&self) -> f64 {
        self.served.iter().map(|e| e.energy_kwh).sum()
    }

    pub fn total_lost_kwh(&self) -> f64 {
        self.lost.iter().map(|e| e.energy_kwh).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(LEDGER_HEADER)?;
        for e in self.events() {
            w.write_record([
                e.vehicle_id.clone(),
                e.station_id.clone(),
                format_time(e.arrival_time),
                format_time(e.depart_time),
                e.soc_before.to_string(),
                e.soc_after.to_string(),
                e.energy_kwh.to_string(),
                u8::from(e.served).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    PlugFree { station: usize },
    Arrival { trip: usize },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::PlugFree { .. } => 0,
            EventKind::Arrival { .. } => 1,
        }
    }
}

type EventKey = Reverse<(i64, u8, String, u64, EventKind)>;

struct Vehicle {
    soc: f64,
    capacity_kwh: f64,
    range_km: f64,
    rng: ChaCha8Rng,
}

/// Whole days from the first trip's day to the end of the last trip's day.
pub fn trip_horizon(trips: &[Trip]) -> Option<HourRange> {
    let first = trips.iter().map(|t| t.start_time).min()?;
    let last = trips.iter().map(|t| t.end_time).max()?;
    let day0 = first.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY;
    let end = (last.div_euclid(SECONDS_PER_DAY) + 1) * SECONDS_PER_DAY;
    Some(HourRange {
        start: day0,
        n_hours: ((end - day0) / SECONDS_PER_HOUR) as usize,
    })
}

/// Replays `trips` with the given fleet and queue discipline.
pub fn run_counterfactual(
    trips: &[Trip],
    fleet: &BTreeMap<String, EVehicle>,
    stations: &[Station],
    policy: QueuePolicy,
    params: &SimParams,
    seed: u64,
) -> Result<DemandLedger> {
    if trips.is_empty() {
        return Ok(DemandLedger::default());
    }
    params.willingness.validate()?;
    if let Some(p) = params.willingness_override {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("willingness override {p} outside [0, 1]")));
        }
    }
    if stations.is_empty() {
        return Err(Error::validation("the simulation needs at least one station"));
    }
    let mut vehicles: HashMap<&str, Vehicle> = HashMap::new();
    for t in trips {
        if !vehicles.contains_key(t.vehicle_id.as_str()) {
            let ev = fleet
                .get(&t.vehicle_id)
                .ok_or_else(|| Error::validation(format!("vehicle {} is not in the fleet", t.vehicle_id)))?;
            vehicles.insert(
                &t.vehicle_id,
                Vehicle {
                    soc: ev.soc.clamp(0.0, 1.0),
                    capacity_kwh: ev.spec.capacity_kwh,
                    range_km: ev.spec.range_km,
                    rng: rng::stream(seed, &t.vehicle_id, 0xc4a6),
                },
            );
        }
    }

    let horizon = trip_horizon(trips).expect("non-empty");
    let horizon_end = horizon.end();

    // next departure of the same vehicle after each trip
    let mut order: Vec<usize> = (0..trips.len()).collect();
    order.sort_by(|&a, &b| {
        (&trips[a].vehicle_id, trips[a].start_time).cmp(&(&trips[b].vehicle_id, trips[b].start_time))
    });
    let mut deadline = vec![horizon_end; trips.len()];
    for w in order.windows(2) {
        let (a, b) = (&trips[w[0]], &trips[w[1]]);
        if a.vehicle_id == b.vehicle_id {
            if b.start_time < a.end_time {
                return Err(Error::validation(format!(
                    "vehicle {} has overlapping trips at {}",
                    a.vehicle_id,
                    format_time(b.start_time)
                )));
            }
            deadline[w[0]] = b.start_time;
        }
    }

    let mut states: Vec<StationState> = stations.iter().map(StationState::new).collect();
    let mut heap: BinaryHeap<EventKey> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<EventKey>, time: i64, vid: &str, kind: EventKind| {
        seq += 1;
        heap.push(Reverse((time, kind.rank(), vid.to_string(), seq, kind)));
    };
    for (i, t) in trips.iter().enumerate() {
        push(&mut heap, t.end_time, &t.vehicle_id, EventKind::Arrival { trip: i });
    }

    let mut ledger = DemandLedger {
        horizon: Some(horizon),
        ..Default::default()
    };
    let record = |ledger: &mut DemandLedger,
                      vehicles: &mut HashMap<&str, Vehicle>,
                      station: &Station,
                      a: &Arrival,
                      out: QueueOutcome|
     -> Option<i64> {
        match out {
            QueueOutcome::Served {
                connect,
                depart,
                soc_after,
            } => {
                if let Some(v) = vehicles.get_mut(a.vehicle_id.as_str()) {
                    v.soc = soc_after;
                }
                ledger.served.push(ChargeEvent {
                    vehicle_id: a.vehicle_id.clone(),
                    station_id: station.station_id.clone(),
                    arrival_time: a.time,
                    connect_time: connect,
                    depart_time: depart,
                    soc_before: a.soc,
                    soc_after,
                    energy_kwh: (soc_after - a.soc) * a.capacity_kwh,
                    served: true,
                });
                Some(depart)
            }
            QueueOutcome::Lost => {
                ledger.lost.push(ChargeEvent {
                    vehicle_id: a.vehicle_id.clone(),
                    station_id: station.station_id.clone(),
                    arrival_time: a.time,
                    connect_time: a.time,
                    depart_time: a.time,
                    soc_before: a.soc,
                    soc_after: a.soc,
                    energy_kwh: lost_energy(a.soc, a.capacity_kwh),
                    served: false,
                });
                None
            }
            QueueOutcome::Waiting => None,
        }
    };

    while let Some(Reverse((now, _, vid, _, kind))) = heap.pop() {
        match kind {
            EventKind::PlugFree { station } => {
                for (a, out) in states[station].release(now) {
                    if let Some(depart) = record(&mut ledger, &mut vehicles, &stations[station], &a, out) {
                        push(&mut heap, depart, &a.vehicle_id, EventKind::PlugFree { station });
                    }
                }
            }
            EventKind::Arrival { trip } => {
                let t = &trips[trip];
                let v = vehicles.get_mut(vid.as_str()).expect("fleet checked");
                let before = v.soc;
                let used = trip_consumption(t.distance_km, v.range_km)?;
                let upd = update_soc(before, used);
                v.soc = upd.soc;
                ledger.depletions += usize::from(upd.depleted);
                let p = match params.willingness_override {
                    Some(p) => p,
                    None => willingness_to_charge(before, upd.soc, params.willingness)?,
                };
                let u: f64 = v.rng.random();
                if u >= p {
                    continue;
                }
                let s = choose_station(t.end_lat, t.end_lon, stations, params.station_choice_sign, &mut v.rng)?;
                let a = Arrival {
                    vehicle_id: vid.clone(),
                    time: now,
                    deadline: deadline[trip],
                    soc: upd.soc,
                    capacity_kwh: v.capacity_kwh,
                };
                let out = step(policy, &mut states[s], &a);
                if let Some(depart) = record(&mut ledger, &mut vehicles, &stations[s], &a, out) {
                    push(&mut heap, depart, &vid, EventKind::PlugFree { station: s });
                }
            }
        }
    }
    debug_assert!(states.iter().all(|s| s.waiting.is_empty() && s.in_use == 0));

    let key = |e: &ChargeEvent| (e.arrival_time, e.vehicle_id.clone(), e.connect_time);
    ledger.served.sort_by_key(key);
    ledger.lost.sort_by_key(key);
    Ok(ledger)
}

/// Highest number of simultaneously occupied plugs per station, replayed
/// from the served events. Errors if any station exceeds its plug count.
pub fn verify_occupancy(ledger: &DemandLedger, stations: &[Station]) -> Result<BTreeMap<String, u32>> {
    let mut by_station: HashMap<&str, Vec<(i64, i32)>> = HashMap::new();
    for e in ledger.served.iter().filter(|e| e.depart_time > e.connect_time) {
        let v = by_station.entry(&e.station_id).or_default();
        v.push((e.connect_time, 1));
        v.push((e.depart_time, -1));
    }
    let mut peaks = BTreeMap::new();
    for s in stations {
        let mut deltas = by_station.remove(s.station_id.as_str()).unwrap_or_default();
        deltas.sort();
        let (mut cur, mut peak) = (0i32, 0i32);
        for (_, d) in deltas {
            cur += d;
            peak = peak.max(cur);
        }
        if peak > s.plugs as i32 {
            return Err(Error::validation(format!(
                "station {} had {peak} cars on {} plugs",
                s.station_id, s.plugs
            )));
        }
        peaks.insert(s.station_id.clone(), peak as u32);
    }
    if let Some(id) = by_station.keys().next() {
        return Err(Error::validation(format!("ledger names unknown station {id}")));
    }
    Ok(peaks)
}

/// Splits `energy` over the hours of `[from, to]` in proportion to overlap;
/// a zero-length interval puts everything in the hour containing `from`.
fn apportion(range: &HourRange, from: i64, to: i64, energy: f64, mut add: impl FnMut(usize, f64)) -> Result<()> {
    if !range.contains(from) || !range.contains(to) || to < from {
        return Err(Error::validation(format!(
            "event {}..{} lies outside the panel hours",
            format_time(from),
            format_time(to)
        )));
    }
    let hour_of = |t: i64| (((t - range.start) / SECONDS_PER_HOUR) as usize).min(range.n_hours - 1);
    if to == from {
        add(hour_of(from), energy);
        return Ok(());
    }
    let span = (to - from) as f64;
    let (h0, h1) = (hour_of(from), hour_of(to - 1));
    if h0 == h1 {
        add(h0, energy);
        return Ok(());
    }
    for h in h0..=h1 {
        let lo = from.max(range.hour_start(h));
        let hi = to.min(range.hour_start(h + 1));
        if hi > lo {
            add(h, energy * (hi - lo) as f64 / span);
        }
    }
    Ok(())
}

/// Node-by-hour panel: served energy spread over connection time is the
/// observed demand; adding lost energy at the arrival hour gives the true
/// demand.
pub fn aggregate_demand(
    ledger: &DemandLedger,
    station_cluster: &BTreeMap<String, usize>,
    k: usize,
    range: HourRange,
) -> Result<DemandPanel> {
    let n = range.n_hours * k;
    let mut observed = vec![0.0; n];
    let mut lost = vec![0.0; n];
    let cluster = |e: &ChargeEvent| {
        station_cluster
            .get(&e.station_id)
            .copied()
            .filter(|&c| c < k)
            .ok_or_else(|| Error::validation(format!("station {} has no cluster", e.station_id)))
    };
    for e in &ledger.served {
        let c = cluster(e)?;
        apportion(&range, e.connect_time, e.depart_time, e.energy_kwh, |h, x| observed[h * k + c] += x)?;
    }
    for e in &ledger.lost {
        let c = cluster(e)?;
        apportion(&range, e.arrival_time, e.arrival_time, e.energy_kwh, |h, x| lost[h * k + c] += x)?;
    }
    let true_demand = observed.iter().zip(&lost).map(|(o, l)| o + l).collect();
    DemandPanel::from_observed_true(range, k, observed, true_demand)
}

/// True (served plus lost) demand per station and hour.
pub fn station_demand(
    ledger: &DemandLedger,
    stations: &[Station],
    station_cluster: &BTreeMap<String, usize>,
    range: HourRange,
) -> Result<StationPanel> {
    let index: HashMap<&str, usize> = stations
        .iter()
        .enumerate()
        .map(|(i, s)| (s.station_id.as_str(), i))
        .collect();
    let ns = stations.len();
    let mut demand = vec![0.0; range.n_hours * ns];
    for e in ledger.served.iter().chain(&ledger.lost) {
        let s = *index
            .get(e.station_id.as_str())
            .ok_or_else(|| Error::validation(format!("unknown station {}", e.station_id)))?;
        let (from, to) = if e.served {
            (e.connect_time, e.depart_time)
        } else {
            (e.arrival_time, e.arrival_time)
        };
        apportion(&range, from, to, e.energy_kwh, |h, x| demand[h * ns + s] += x)?;
    }
    let cluster = stations
        .iter()
        .map(|s| {
            station_cluster
                .get(&s.station_id)
                .copied()
                .ok_or_else(|| Error::validation(format!("station {} has no cluster", s.station_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StationPanel {
        range,
        station_ids: stations.iter().map(|s| s.station_id.clone()).collect(),
        k: cluster.iter().max().map_or(0, |m| m + 1),
        cluster,
        demand,
    })
}

/// Vehicles included at penetration `rate`. Each vehicle gets a fixed
/// uniform key from the seed, so a higher rate always includes every
/// vehicle of a lower one.
pub fn penetration_subset(vehicle_ids: &[String], rate: f64, seed: u64) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::domain(format!("penetration rate {rate} outside [0, 1]")));
    }
    Ok(vehicle_ids
        .iter()
        .filter(|id| rng::stream(seed, id, 0x9e7).random::<f64>() < rate)
        .cloned()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::EVModelSpec;

    const T0: i64 = 1_641_168_000; // 2022-01-03T00:00:00Z

    fn station(plugs: u32, power: f64) -> Station {
        Station {
            station_id: "s".into(),
            lat: 55.0,
            lon: 12.0,
            power_kw: power,
            plugs,
        }
    }

    fn trip(v: &str, start_h: f64, end_h: f64, km: f64) -> Trip {
        Trip {
            vehicle_id: v.into(),
            start_time: T0 + (start_h * 3600.0) as i64,
            end_time: T0 + (end_h * 3600.0) as i64,
            start_lat: 55.0,
            start_lon: 12.0,
            end_lat: 55.0,
            end_lon: 12.0,
            distance_km: km,
        }
    }

    fn fleet(ids: &[&str], soc: f64) -> BTreeMap<String, EVehicle> {
        ids.iter()
            .map(|id| {
                (
                    id.to_string(),
                    EVehicle {
                        vehicle_id: id.to_string(),
                        spec: EVModelSpec::new("m", 1, 380.0, 57.0),
                        soc,
                    },
                )
            })
            .collect()
    }

    fn always() -> SimParams {
        SimParams {
            willingness_override: Some(1.0),
            ..Default::default()
        }
    }

    fn arrival(v: &str, t: i64, deadline: i64, soc: f64) -> Arrival {
        Arrival {
            vehicle_id: v.into(),
            time: t,
            deadline,
            soc,
            capacity_kwh: 57.0,
        }
    }

    #[test]
    fn no_trips_empty_ledger() {
        let l = run_counterfactual(&[], &BTreeMap::new(), &[], QueuePolicy::GasStation, &always(), 0).unwrap();
        assert!(l.served.is_empty() && l.lost.is_empty());
    }

    #[test]
    fn unknown_vehicle() {
        let trips = vec![trip("x", 8.0, 9.0, 10.0)];
        let r = run_counterfactual(&trips, &fleet(&["a"], 0.5), &[station(1, 22.0)], QueuePolicy::GasStation, &always(), 0);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn single_uncontended_charge() {
        // 38 km on a 380 km car: 0.6 -> 0.5, then to 80%
        let trips = vec![trip("a", 8.0, 9.0, 38.0)];
        let l = run_counterfactual(&trips, &fleet(&["a"], 0.6), &[station(1, 22.0)], QueuePolicy::GasStation, &always(), 0)
            .unwrap();
        assert_eq!(l.served.len(), 1);
        assert!(l.lost.is_empty());
        let e = &l.served[0];
        assert!((e.soc_before - 0.5).abs() < 1e-12);
        assert!((e.soc_after - 0.8).abs() < 1e-12);
        assert!((e.energy_kwh - 0.3 * 57.0).abs() < 1e-9);
        let t80 = time_to_80(57.0, e.soc_before, 22.0).unwrap();
        assert_eq!(e.depart_time - e.connect_time, (t80 * 3600.0).ceil() as i64);
    }

    #[test]
    fn simultaneous_first_come() {
        // both arrive at 09:00; "a" sorts first and takes the plug
        let trips = vec![trip("b", 8.0, 9.0, 38.0), trip("a", 8.0, 9.0, 38.0)];
        let l = run_counterfactual(
            &trips,
            &fleet(&["a", "b"], 0.6),
            &[station(1, 22.0)],
            QueuePolicy::FirstComeFirstServe,
            &always(),
            0,
        )
        .unwrap();
        assert_eq!(l.served.len(), 1);
        assert_eq!(l.served[0].vehicle_id, "a");
        assert_eq!(l.lost.len(), 1);
        assert_eq!(l.lost[0].vehicle_id, "b");
        assert!((l.lost[0].energy_kwh - (0.8 - 0.5) * 57.0).abs() < 1e-9);
        // "a" has no further trip: parked until midnight, 15 h at 22 kW
        assert_eq!(l.served[0].depart_time, T0 + 86_400);
        assert!((l.served[0].soc_after - charge(0.5, 57.0, 22.0, 15.0)).abs() < 1e-12);
    }

    #[test]
    fn gas_station_serves_in_arrival_order() {
        let mut st = StationState::new(&station(1, 50.0));
        let far = T0 + 86_400;
        let a = arrival("a", T0, far, 0.5);
        let b = arrival("b", T0 + 60, far, 0.5);
        let c = arrival("c", T0 + 120, far, 0.5);
        let QueueOutcome::Served { depart: d1, .. } = step_gas_station_queue(&mut st, &a) else {
            panic!()
        };
        assert_eq!(d1 - T0, (0.456f64 * 3600.0).ceil() as i64);
        assert_eq!(step_gas_station_queue(&mut st, &b), QueueOutcome::Waiting);
        assert_eq!(step_gas_station_queue(&mut st, &c), QueueOutcome::Waiting);
        let r = st.release(d1);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].0.vehicle_id, "b");
        let QueueOutcome::Served { connect, depart: d2, soc_after } = r[0].1 else {
            panic!()
        };
        assert_eq!(connect, d1);
        assert!((soc_after - 0.8).abs() < 1e-12);
        let r = st.release(d2);
        assert_eq!(r[0].0.vehicle_id, "c");
        assert!(matches!(r[0].1, QueueOutcome::Served { connect, .. } if connect == d2));
    }

    #[test]
    fn gas_station_waiter_leaves_for_next_trip() {
        let mut st = StationState::new(&station(1, 7.0));
        let a = arrival("a", T0, T0 + 86_400, 0.2);
        let QueueOutcome::Served { depart, .. } = step_gas_station_queue(&mut st, &a) else {
            panic!()
        };
        let b = arrival("b", T0 + 60, T0 + 1800, 0.4);
        assert_eq!(step_gas_station_queue(&mut st, &b), QueueOutcome::Waiting);
        let r = st.release(depart);
        assert_eq!(r, vec![(b, QueueOutcome::Lost)]);
    }

    #[test]
    fn gas_station_partial_charge_before_next_trip() {
        let trips = vec![trip("a", 8.0, 9.0, 38.0), trip("a", 9.5, 10.0, 1.0)];
        let l = run_counterfactual(&trips, &fleet(&["a"], 0.6), &[station(1, 7.0)], QueuePolicy::GasStation, &always(), 0)
            .unwrap();
        let e = &l.served[0];
        assert_eq!(e.depart_time, T0 + 9 * 3600 + 1800);
        assert!((e.soc_after - charge(0.5, 57.0, 7.0, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn three_hour_rules() {
        let mut st = StationState::new(&station(1, 11.0));
        let long = arrival("a", T0, T0 + 5 * 3600, 0.3);
        let QueueOutcome::Served { depart, soc_after, .. } = step_three_hour_queue(&mut st, &long) else {
            panic!()
        };
        assert_eq!(depart - T0, 3 * 3600);
        assert!((soc_after - charge(0.3, 57.0, 11.0, 3.0)).abs() < 1e-12);
        assert_eq!(step_three_hour_queue(&mut st, &arrival("b", T0 + 1, T0 + 9000, 0.3)), QueueOutcome::Lost);
        st.release(depart);
        let short = arrival("c", T0, T0 + 3600, 0.3);
        let QueueOutcome::Served { depart, .. } = step_three_hour_queue(&mut st, &short) else {
            panic!()
        };
        assert_eq!(depart - T0, 3600);
    }

    #[test]
    fn first_come_rules() {
        let mut st = StationState::new(&station(1, 7.0));
        let a = arrival("a", T0, T0 + 8 * 3600, 0.3);
        let QueueOutcome::Served { depart, soc_after, .. } = step_first_come_queue(&mut st, &a) else {
            panic!()
        };
        assert!((soc_after - charge(0.3, 57.0, 7.0, 8.0)).abs() < 1e-12);
        assert_eq!(step_first_come_queue(&mut st, &arrival("b", T0 + 5, T0 + 9 * 3600, 0.3)), QueueOutcome::Lost);
        assert!(st.release(depart).is_empty());
        let c = arrival("c", depart + 1, T0 + 20 * 3600, 0.3);
        assert!(matches!(step_first_come_queue(&mut st, &c), QueueOutcome::Served { .. }));
    }

    #[test]
    fn plug_freed_at_same_instant_is_reused() {
        let trips = vec![trip("a", 7.0, 8.0, 38.0), trip("a", 10.0, 11.0, 1.0), trip("b", 9.0, 10.0, 38.0)];
        let l = run_counterfactual(
            &trips,
            &fleet(&["a", "b"], 0.6),
            &[station(1, 22.0)],
            QueuePolicy::FirstComeFirstServe,
            &always(),
            0,
        )
        .unwrap();
        assert!(l.served.iter().any(|e| e.vehicle_id == "b" && e.connect_time == T0 + 10 * 3600));
    }

    #[test]
    fn aggregation_definitions() {
        let mk = |served: bool, t: i64, d: i64, e: f64| ChargeEvent {
            vehicle_id: "v".into(),
            station_id: "s".into(),
            arrival_time: t,
            connect_time: t,
            depart_time: d,
            soc_before: 0.0,
            soc_after: 0.0,
            energy_kwh: e,
            served,
        };
        let ledger = DemandLedger {
            served: vec![mk(true, T0 + 600, T0 + 1200, 10.0), mk(true, T0 + 3600, T0 + 3 * 3600, 44.0)],
            lost: vec![mk(false, T0 + 900, T0 + 900, 5.0)],
            ..Default::default()
        };
        let map: BTreeMap<String, usize> = [("s".to_string(), 0)].into();
        let range = HourRange { start: T0, n_hours: 4 };
        let p = aggregate_demand(&ledger, &map, 1, range).unwrap();
        assert_eq!(p.observed_at(0, 0), 10.0);
        assert_eq!(p.true_at(0, 0), 15.0);
        assert!(p.censored_at(0, 0));
        assert_eq!(p.threshold_at(0, 0), Some(10.0));
        // 2 h at 22 kW spread evenly
        assert_eq!(p.observed_at(1, 0), 22.0);
        assert_eq!(p.observed_at(2, 0), 22.0);
        assert!(!p.censored_at(1, 0));

        let outside = DemandLedger {
            served: vec![mk(true, T0 + 5 * 3600, T0 + 6 * 3600, 1.0)],
            ..Default::default()
        };
        assert!(aggregate_demand(&outside, &map, 1, range).is_err());
    }

    #[test]
    fn penetration_is_nested() {
        let ids: Vec<String> = (0..200).map(|i| format!("v{i}")).collect();
        let lo = penetration_subset(&ids, 0.2, 3).unwrap();
        let hi = penetration_subset(&ids, 0.6, 3).unwrap();
        assert!(lo.iter().all(|v| hi.contains(v)));
        assert!(lo.len() < hi.len());
        assert_eq!(penetration_subset(&ids, 1.0, 3).unwrap().len(), 200);
    }

    #[test]
    fn policy_names_roundtrip() {
        for p in QueuePolicy::ALL {
            assert_eq!(p.to_string().parse::<QueuePolicy>().unwrap(), p);
        }
        assert!("nope".parse::<QueuePolicy>().is_err());
    }
}
