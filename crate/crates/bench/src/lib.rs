//! Fixtures shared by the criterion benches.

use std::collections::BTreeSet;

use latent_demand::ingest::{
    generate_synthetic_stations, generate_synthetic_trips, sample_fleet, table5_market, EVehicle, Station,
    SynthConfig, Trip,
};
use latent_demand::synthetic::{seasonal_panel, SeasonalConfig};
use latent_demand::training::{make_windows, ScaledPanel, TrainConfig, WindowSet};
use std::collections::BTreeMap;

pub struct FleetFixture {
    pub trips: Vec<Trip>,
    pub fleet: BTreeMap<String, EVehicle>,
    pub stations: Vec<Station>,
}

pub fn fleet_fixture(n_vehicles: usize, n_days: u32) -> FleetFixture {
    let cfg = SynthConfig {
        n_vehicles,
        n_days,
        ..SynthConfig::default()
    };
    let trips = generate_synthetic_trips(&cfg, 1).expect("synthetic trips");
    let ids: Vec<String> = trips
        .iter()
        .map(|t| t.vehicle_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let fleet = sample_fleet(&ids, &table5_market(), 1).expect("fleet");
    let stations = generate_synthetic_stations(40, &cfg.bbox, 1).expect("stations");
    FleetFixture { trips, fleet, stations }
}

/// Windowed seasonal panel with 40% of hours clipped.
pub fn window_fixture(cfg: &TrainConfig) -> WindowSet {
    let s = seasonal_panel(&SeasonalConfig::default()).expect("seasonal panel");
    let scaled = ScaledPanel::fit(&s.panel, cfg.window, cfg.split).expect("scaler");
    make_windows(scaled, s.a_hat, cfg.window, cfg.split).expect("windows")
}
