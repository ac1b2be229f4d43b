//! Battery physics and charging behaviour of a single vehicle.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;

use crate::error::{Error, Result};
use crate::graph::haversine;
use crate::ingest::Station;

/// Target state of charge for a "full" public charge.
pub const TARGET_SOC: f64 = 0.8;

/// How many of the nearest stations enter the choice set.
pub const CHOICE_SET_SIZE: usize = 5;

/// Shapes of the beta distribution behind the willingness to charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WillingnessParams {
    pub a: f64,
    pub b: f64,
}

impl Default for WillingnessParams {
    fn default() -> Self {
        Self { a: 4.0, b: 2.0 }
    }
}

impl WillingnessParams {
    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "beta shapes must be positive, got a={} b={}",
                self.a, self.b
            )))
        }
    }
}

/// Sign in front of the distance inside the station-choice softmax.
/// `Negative` favours nearby stations; `Positive` is `exp(D)` taken literally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationChoiceSign {
    #[default]
    Negative,
    Positive,
}

impl StationChoiceSign {
    fn factor(self) -> f64 {
        match self {
            StationChoiceSign::Negative => -1.0,
            StationChoiceSign::Positive => 1.0,
        }
    }
}

/// One willing-to-charge arrival, served or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeEvent {
    pub vehicle_id: String,
    pub station_id: String,
    pub arrival_time: i64,
    /// When the vehicle got a plug; equals `arrival_time` unless it queued.
    /// Lost events keep the arrival time here.
    pub connect_time: i64,
    pub depart_time: i64,
    pub soc_before: f64,
    pub soc_after: f64,
    pub energy_kwh: f64,
    pub served: bool,
}

pub fn trip_consumption(distance_km: f64, range_km: f64) -> Result<f64> {
    if !(range_km > 0.0) {
        return Err(Error::domain(format!("range must be positive, got {range_km}")));
    }
    if !(distance_km >= 0.0) {
        return Err(Error::domain(format!("distance must be >= 0, got {distance_km}")));
    }
    Ok(distance_km / range_km)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocUpdate {
    pub soc: f64,
    pub depleted: bool,
}

pub fn update_soc(soc: f64, consumption: f64) -> SocUpdate {
    let next = (soc - consumption).clamp(0.0, 1.0);
    SocUpdate {
        soc: next,
        depleted: next <= 0.0,
    }
}

/// `[F(x_i) - F(x_f)] / F(x_i)` with `F` the beta CDF. A vehicle whose
/// battery was already flat before the trip always charges.
pub fn willingness_to_charge(soc_initial: f64, soc_final: f64, params: WillingnessParams) -> Result<f64> {
    params.validate()?;
    if !(0.0..=1.0).contains(&soc_initial) || !(0.0..=1.0).contains(&soc_final) {
        return Err(Error::domain(format!(
            "state of charge outside [0, 1]: {soc_initial}, {soc_final}"
        )));
    }
    if soc_final > soc_initial {
        return Err(Error::domain(format!(
            "final soc {soc_final} exceeds initial soc {soc_initial}"
        )));
    }
    let cdf = |x: f64| {
        checked_beta_reg(params.a, params.b, x).map_err(|e| Error::Numerical(format!("beta cdf: {e}")))
    };
    let fi = cdf(soc_initial)?;
    if fi <= 0.0 {
        return Ok(1.0);
    }
    let ff = cdf(soc_final)?;
    Ok(((fi - ff) / fi).clamp(0.0, 1.0))
}

/// Candidate stations (index into `stations`) and their choice
/// probabilities. Candidates are the nearest few by great-circle distance,
/// nearest first; ties go to the lower index.
pub fn station_choice_probabilities(
    lat: f64,
    lon: f64,
    stations: &[Station],
    sign: StationChoiceSign,
) -> Result<Vec<(usize, f64)>> {
    if stations.is_empty() {
        return Err(Error::domain("no charging stations to choose from"));
    }
    let mut dist: Vec<(usize, f64)> = stations
        .iter()
        .enumerate()
        .map(|(i, s)| (i, haversine(lat, lon, s.lat, s.lon)))
        .collect();
    let n = CHOICE_SET_SIZE.min(dist.len());
    let by_distance = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if dist.len() > n {
        dist.select_nth_unstable_by(n - 1, by_distance);
        dist.truncate(n);
    }
    dist.sort_by(by_distance);
    let logits: Vec<f64> = dist.iter().map(|(_, d)| sign.factor() * d).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(dist
        .iter()
        .zip(weights)
        .map(|(&(i, _), w)| (i, w / total))
        .collect())
}

/// Draws a station for a trip ending at `(lat, lon)`; returns its index.
pub fn choose_station<R: Rng>(
    lat: f64,
    lon: f64,
    stations: &[Station],
    sign: StationChoiceSign,
    rng: &mut R,
) -> Result<usize> {
    let probs = station_choice_probabilities(lat, lon, stations, sign)?;
    let mut u: f64 = rng.random();
    for &(i, p) in &probs {
        if u < p {
            return Ok(i);
        }
        u -= p;
    }
    Ok(probs.last().expect("non-empty choice set").0)
}

/// Hours until the curve switches to its slow branch:
/// `0.8 * (C - soc * C) / P`.
pub fn time_to_80(capacity_kwh: f64, soc: f64, power_kw: f64) -> Result<f64> {
    if !(power_kw > 0.0) {
        return Err(Error::domain(format!("charger power must be positive, got {power_kw}")));
    }
    if !(capacity_kwh > 0.0) {
        return Err(Error::domain(format!("capacity must be positive, got {capacity_kwh}")));
    }
    Ok(TARGET_SOC * (capacity_kwh - soc * capacity_kwh) / power_kw)
}

/// State of charge after `duration_h` hours on a charger.
///
/// Below `T80` the battery fills linearly at full power; from `T80` on the
/// curve restarts at 0.8 and fills at a quarter of the power. The two
/// branches do not meet at `T80` when `soc > 0`.
pub fn charge(soc: f64, capacity_kwh: f64, power_kw: f64, duration_h: f64) -> f64 {
    if !(power_kw > 0.0) || !(capacity_kwh > 0.0) || !(duration_h > 0.0) {
        return soc.clamp(0.0, 1.0);
    }
    let rate = power_kw / capacity_kwh;
    // same expression as time_to_80 so a session of exactly T80 lands on
    // the second branch
    let t80 = TARGET_SOC * (capacity_kwh - soc * capacity_kwh) / power_kw;
    let next = if duration_h < t80 {
        soc + duration_h * rate
    } else {
        TARGET_SOC + 0.25 * (duration_h - t80) * rate
    };
    next.clamp(0.0, 1.0)
}
