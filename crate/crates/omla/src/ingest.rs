//! Build instances from trip-record CSVs: grid-bucketed cell pairs become
//! tasks, frequent taxis become machines, and toll levels become processing
//! levels with fare-minus-toll rewards.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{NaiveDateTime, NaiveTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{
    expected_delay, Budget, DelayDist, Edge, Instance, InstanceParts, MachineSpec, TaskSpec,
};
use crate::{Error, Result};

/// One parsed trip row.
#[derive(Clone, Debug, PartialEq)]
pub struct TripRecord {
    pub taxi_id: String,
    pub pickup_lon: f64,
    pub pickup_lat: f64,
    pub dropoff_lon: f64,
    pub dropoff_lat: f64,
    pub pickup_ts: NaiveDateTime,
    pub dropoff_ts: NaiveDateTime,
    pub duration_s: f64,
    pub fare: f64,
    pub toll: f64,
}

/// Grid cell coordinates (lon index, lat index).
type Cell = (i64, i64);

/// Spatial/temporal bucketing parameters.
#[derive(Clone, Debug)]
pub struct GridConfig {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    /// Cell edge in degrees.
    pub cell_degrees: f64,
    pub slot_minutes: u32,
    pub slot_count: usize,
    /// Arrival counts are divided by this to become probabilities.
    pub day_count: u32,
    /// Time of day slot 1 starts at; trips outside the window are dropped.
    pub window_start: NaiveTime,
    /// Taxis with fewer trips than this are not machines.
    pub min_trips: usize,
}

impl GridConfig {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64, day_count: u32) -> Self {
        GridConfig {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
            cell_degrees: 0.02,
            slot_minutes: 1,
            slot_count: 60,
            day_count,
            window_start: NaiveTime::from_hms_opt(0, 0, 0).unwrap(),
            min_trips: 6,
        }
    }

    // Negated comparisons so NaN fails the checks.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lon_min < self.lon_max && self.lat_min < self.lat_max) {
            return err("degenerate bounding box".to_string());
        }
        if !(self.cell_degrees > 0.0) {
            return err(format!("cell size {} must be positive", self.cell_degrees));
        }
        if self.slot_minutes == 0 || self.slot_count == 0 || self.day_count == 0 {
            return err("slot length, slot count and day count must be positive".to_string());
        }
        Ok(())
    }

    fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.lon_min..=self.lon_max).contains(&lon) && (self.lat_min..=self.lat_max).contains(&lat)
    }

    fn cell(&self, lon: f64, lat: f64) -> Cell {
        (
            ((lon - self.lon_min) / self.cell_degrees).floor() as i64,
            ((lat - self.lat_min) / self.cell_degrees).floor() as i64,
        )
    }

    fn window_seconds(&self) -> u32 {
        self.slot_count as u32 * self.slot_minutes * 60
    }

    /// 1-based slot of a timestamp, or None outside the window.
    fn slot(&self, ts: &NaiveDateTime) -> Option<usize> {
        let start = i64::from(self.window_start.num_seconds_from_midnight());
        let offset = i64::from(ts.time().num_seconds_from_midnight()) - start;
        if offset < 0 || offset >= i64::from(self.window_seconds()) {
            return None;
        }
        Some(offset as usize / (self.slot_minutes as usize * 60) + 1)
    }
}

/// Level definitions: tolls (strictly descending, so fare-minus-toll rewards
/// increase with the level), penalties, seeded acceptance/budget draws, and
/// the per-level delay source. Without a sidecar histogram file the delays
/// are scaled copies of the empirical duration histogram.
#[derive(Clone, Debug)]
pub struct TollLevelSpec {
    pub tolls: Vec<f64>,
    pub theta: Vec<u32>,
    pub budget_cap: Option<u32>,
    pub seed: u64,
    pub delay_scales: Vec<f64>,
    /// JSON file holding one duration-slot weight array per level.
    pub sidecar: Option<PathBuf>,
}

impl Default for TollLevelSpec {
    fn default() -> Self {
        TollLevelSpec {
            tolls: vec![4.8, 2.2, 0.0],
            theta: vec![3, 5, 10],
            budget_cap: None,
            seed: 0,
            delay_scales: vec![0.85, 0.92, 1.0],
            sidecar: None,
        }
    }
}

impl TollLevelSpec {
    // Negated comparison so NaN scales fail the check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidArgument(msg));
        let levels = self.tolls.len();
        if levels == 0 {
            return err("at least one toll level required".to_string());
        }
        if self.tolls.windows(2).any(|w| w[0] <= w[1]) {
            return err(format!(
                "tolls {:?} must be strictly descending",
                self.tolls
            ));
        }
        if self.tolls.iter().any(|&t| t < 0.0 || !t.is_finite()) {
            return err(format!("tolls {:?} must be nonnegative", self.tolls));
        }
        if self.theta.len() != levels {
            return err(format!(
                "{} penalties for {levels} levels",
                self.theta.len()
            ));
        }
        if self.theta.iter().any(|&th| th < 1) {
            return err("penalties must be at least 1".to_string());
        }
        if self.delay_scales.len() != levels {
            return err(format!(
                "{} delay scales for {levels} levels",
                self.delay_scales.len()
            ));
        }
        if self.delay_scales.iter().any(|&s| !(s > 0.0))
            || self.delay_scales.windows(2).any(|w| w[0] >= w[1])
        {
            return err(format!(
                "delay scales {:?} must be positive and strictly increasing",
                self.delay_scales
            ));
        }
        if let Some(0) = self.budget_cap {
            return err("budget cap must be at least 1".to_string());
        }
        Ok(())
    }
}

/// Row accounting from one CSV pass.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct LoadStats {
    pub read: usize,
    pub kept: usize,
    pub malformed: usize,
    pub out_of_bounds: usize,
    pub outside_window: usize,
}

const HEADER: [&str; 11] = [
    "taxi_id",
    "driver_id",
    "pickup_lon",
    "pickup_lat",
    "dropoff_lon",
    "dropoff_lat",
    "pickup_ts",
    "dropoff_ts",
    "duration_s",
    "fare",
    "toll",
];

/// Parse a trip CSV and filter to the bounding box and time window.
/// Malformed rows (unparseable fields, nonpositive duration) are counted
/// and skipped, never fatal.
pub fn load_trips(path: &Path, grid: &GridConfig) -> Result<(Vec<TripRecord>, LoadStats)> {
    grid.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Ingest(format!(
            "unexpected header {:?}; expected {}",
            header.iter().collect::<Vec<_>>(),
            HEADER.join(",")
        )));
    }

    let mut stats = LoadStats::default();
    let mut trips = Vec::new();
    for row in reader.records() {
        let row = row?;
        stats.read += 1;
        let Some(trip) = parse_row(&row) else {
            stats.malformed += 1;
            continue;
        };
        if !grid.contains(trip.pickup_lon, trip.pickup_lat)
            || !grid.contains(trip.dropoff_lon, trip.dropoff_lat)
        {
            stats.out_of_bounds += 1;
            continue;
        }
        if grid.slot(&trip.pickup_ts).is_none() {
            stats.outside_window += 1;
            continue;
        }
        stats.kept += 1;
        trips.push(trip);
    }
    Ok((trips, stats))
}

fn parse_row(row: &csv::StringRecord) -> Option<TripRecord> {
    if row.len() != HEADER.len() {
        return None;
    }
    let field = |i: usize| row.get(i).map(str::trim);
    let float = |i: usize| field(i)?.parse::<f64>().ok().filter(|x| x.is_finite());
    let trip = TripRecord {
        taxi_id: field(0)?.to_string(),
        pickup_lon: float(2)?,
        pickup_lat: float(3)?,
        dropoff_lon: float(4)?,
        dropoff_lat: float(5)?,
        pickup_ts: parse_timestamp(field(6)?)?,
        dropoff_ts: parse_timestamp(field(7)?)?,
        duration_s: float(8)?,
        fare: float(9)?,
        toll: float(10)?,
    };
    if trip.taxi_id.is_empty() || trip.duration_s <= 0.0 {
        return None;
    }
    Some(trip)
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    s.parse::<NaiveDateTime>()
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

/// Construction accounting: what was grouped, dropped and rescaled.
#[derive(Clone, Debug, Serialize)]
pub struct IngestReport {
    pub trips_used: usize,
    pub taxis_seen: usize,
    pub taxis_kept: usize,
    pub tasks_seen: usize,
    pub tasks_dropped_low_fare: usize,
    pub machines: usize,
    pub tasks: usize,
    pub edges: usize,
    pub rescale_factor: f64,
    pub repairs: Vec<String>,
}

struct TaskAgg {
    counts: Vec<u32>,
    fare_sum: f64,
    trips: usize,
}

#[derive(Default)]
struct TaxiAgg {
    trips: usize,
    pickups: BTreeMap<Cell, usize>,
}

/// Group trips into an instance:
/// tasks are (origin cell, destination cell) pairs; machines are taxis with
/// at least `min_trips` trips, located at their most frequent pickup cell;
/// an edge joins a machine to every task originating at its cell. Arrival
/// probabilities are slot counts over `day_count`, uniformly rescaled so no
/// slot exceeds total mass 1. Rewards are the task's mean fare minus each
/// toll; tasks whose mean fare is below the top toll are dropped (reported).
pub fn build_instance(
    trips: &[TripRecord],
    grid: &GridConfig,
    levels: &TollLevelSpec,
) -> Result<(Instance, IngestReport)> {
    grid.validate()?;
    levels.validate()?;
    if trips.is_empty() {
        return Err(Error::Ingest("no trips to build from".to_string()));
    }

    let mut tasks: BTreeMap<(Cell, Cell), TaskAgg> = BTreeMap::new();
    let mut taxis: BTreeMap<&str, TaxiAgg> = BTreeMap::new();
    for trip in trips {
        let origin = grid.cell(trip.pickup_lon, trip.pickup_lat);
        let dest = grid.cell(trip.dropoff_lon, trip.dropoff_lat);
        let slot = grid
            .slot(&trip.pickup_ts)
            .ok_or_else(|| Error::Ingest("trip outside the time window".to_string()))?;
        let task = tasks.entry((origin, dest)).or_insert_with(|| TaskAgg {
            counts: vec![0; grid.slot_count],
            fare_sum: 0.0,
            trips: 0,
        });
        task.counts[slot - 1] += 1;
        task.fare_sum += trip.fare;
        task.trips += 1;
        let taxi = taxis.entry(&trip.taxi_id).or_default();
        taxi.trips += 1;
        *taxi.pickups.entry(origin).or_insert(0) += 1;
    }

    let taxis_seen = taxis.len();
    let tasks_seen = tasks.len();
    let mut repairs = Vec::new();

    // Most frequent pickup cell; ties go to the smallest cell key.
    let locations: Vec<(&str, Cell)> = taxis
        .iter()
        .filter(|(_, agg)| agg.trips >= grid.min_trips)
        .map(|(id, agg)| {
            let cell = agg
                .pickups
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&cell, _)| cell)
                .expect("kept taxi has pickups");
            (*id, cell)
        })
        .collect();

    let max_toll = levels.tolls[0];
    let kept_tasks: Vec<((Cell, Cell), &TaskAgg)> = tasks
        .iter()
        .filter(|(key, agg)| {
            let mean_fare = agg.fare_sum / agg.trips as f64;
            if mean_fare < max_toll {
                repairs.push(format!(
                    "dropped task {key:?}: mean fare {mean_fare:.2} below toll {max_toll}"
                ));
                false
            } else {
                true
            }
        })
        .map(|(key, agg)| (*key, agg))
        .collect();
    let tasks_dropped = tasks_seen - kept_tasks.len();

    let mut edges = Vec::new();
    for (u, (_, location)) in locations.iter().enumerate() {
        for (v, ((origin, _), _)) in kept_tasks.iter().enumerate() {
            if origin == location {
                edges.push(Edge {
                    id: edges.len(),
                    machine: u,
                    task: v,
                    accept_prob: 0.0,
                });
            }
        }
    }
    if edges.is_empty() {
        return Err(Error::Ingest(format!(
            "degenerate output: no edges ({} machines after the {}-trip filter, {} tasks)",
            locations.len(),
            grid.min_trips,
            kept_tasks.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(levels.seed);
    for edge in &mut edges {
        edge.accept_prob = 0.5 + 0.5 * rng.gen::<f64>();
    }
    let machines: Vec<MachineSpec> = (0..locations.len())
        .map(|u| {
            let budget = match levels.budget_cap {
                Some(cap) => {
                    let draw = (rng.gen::<f64>() * f64::from(cap)) as u32;
                    Budget::Finite(draw.min(cap - 1) + 1)
                }
                None => Budget::Unlimited,
            };
            MachineSpec { id: u, budget }
        })
        .collect();

    let num_levels = levels.tolls.len();
    let rewards: Vec<Vec<f64>> = edges
        .iter()
        .map(|e| {
            let agg = kept_tasks[e.task].1;
            let mean_fare = agg.fare_sum / agg.trips as f64;
            levels.tolls.iter().map(|toll| mean_fare - toll).collect()
        })
        .collect();

    let mut arrivals: Vec<Vec<f64>> = kept_tasks
        .iter()
        .map(|(_, agg)| {
            agg.counts
                .iter()
                .map(|&c| f64::from(c) / f64::from(grid.day_count))
                .collect()
        })
        .collect();
    let mut rescale_factor = 1.0f64;
    for t in 0..grid.slot_count {
        let mass: f64 = arrivals.iter().map(|row| row[t]).sum();
        rescale_factor = rescale_factor.max(mass);
    }
    if rescale_factor > 1.0 {
        for row in &mut arrivals {
            for p in row.iter_mut() {
                *p /= rescale_factor;
            }
        }
    }

    let delays = match &levels.sidecar {
        Some(path) => sidecar_delays(path, num_levels)?,
        None => scaled_delays(trips, grid, &levels.delay_scales)?,
    };

    let instance = Instance::from_parts(InstanceParts {
        horizon: grid.slot_count,
        machines,
        tasks: (0..kept_tasks.len()).map(|id| TaskSpec { id }).collect(),
        edges,
        levels: num_levels,
        rewards,
        theta: levels.theta.clone(),
        arrivals,
        delays,
    })?;
    let validation = instance.validate();
    if !validation.violations.is_empty() {
        return Err(Error::Validation(validation.violations.join("; ")));
    }

    let report = IngestReport {
        trips_used: trips.len(),
        taxis_seen,
        taxis_kept: locations.len(),
        tasks_seen,
        tasks_dropped_low_fare: tasks_dropped,
        machines: instance.num_machines(),
        tasks: instance.num_tasks(),
        edges: instance.num_edges(),
        rescale_factor,
        repairs,
    };
    Ok((instance, report))
}

/// Default per-level delays: the empirical duration histogram, with each
/// level's durations scaled before bucketing into slots (minimum 1).
fn scaled_delays(
    trips: &[TripRecord],
    grid: &GridConfig,
    scales: &[f64],
) -> Result<Vec<DelayDist>> {
    let slot_seconds = f64::from(grid.slot_minutes) * 60.0;
    let mut delays = Vec::with_capacity(scales.len());
    for &scale in scales {
        let buckets: Vec<usize> = trips
            .iter()
            .map(|trip| ((scale * trip.duration_s / slot_seconds).ceil() as usize).max(1))
            .collect();
        let max_d = buckets.iter().copied().max().unwrap();
        let mut weights = vec![0.0; max_d];
        for d in buckets {
            weights[d - 1] += 1.0;
        }
        delays.push(DelayDist::from_weights(weights));
    }
    check_delay_means(&delays).map_err(|e| {
        Error::Ingest(format!(
            "{e}; durations too coarse for the default scales, supply a per-level \
             duration sidecar"
        ))
    })?;
    Ok(delays)
}

/// Sidecar file: a JSON array with one weight array per level; index 0 is
/// the weight of a one-slot delay.
fn sidecar_delays(path: &Path, num_levels: usize) -> Result<Vec<DelayDist>> {
    let text = std::fs::read_to_string(path)?;
    let raw: Vec<Vec<f64>> = serde_json::from_str(&text)?;
    if raw.len() != num_levels {
        return Err(Error::Ingest(format!(
            "sidecar has {} histograms for {num_levels} levels",
            raw.len()
        )));
    }
    let mut delays = Vec::with_capacity(num_levels);
    for (l, weights) in raw.into_iter().enumerate() {
        if weights.is_empty() || weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Ingest(format!(
                "sidecar level {}: invalid weights",
                l + 1
            )));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Ingest(format!("sidecar level {}: zero mass", l + 1)));
        }
        delays.push(DelayDist::from_weights(weights));
    }
    check_delay_means(&delays).map_err(|e| Error::Ingest(format!("sidecar {e}")))?;
    Ok(delays)
}

fn check_delay_means(delays: &[DelayDist]) -> std::result::Result<(), String> {
    let means: Vec<f64> = delays.iter().map(expected_delay).collect();
    if means.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("expected delays {means:?} not strictly increasing"));
    }
    Ok(())
}
