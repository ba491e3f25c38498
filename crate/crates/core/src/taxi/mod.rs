//! Taxi fleet on a grid city, published through the aggregation protocol.
//!
//! The city is `grid_side` units square with a street every
//! `intersection_spacing` units in both directions. Coordinates are integer
//! units in `[0, grid_side)`; `y` grows northward. A taxi is always on a
//! street line, moves one unit per sub-step, picks a new legal heading at
//! every intersection, and reverses at the city edge.

mod run;
mod views;

use rand::seq::SliceRandom;
use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use run::{
    authorize_fleet, linear_fit, publish_positions, run_distribution, run_scaling, trend, LinearFit, RoundResult,
    ScalingRow, ScalingTable, TaxiSystem, Trend, DEFAULT_SCALING_SIZES,
};
pub use views::{render_views, ViewFiles};

use crate::aggregation::AggregationSpec;
use crate::crypto::{DataKey, UserId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CityConfig {
    pub grid_side: u32,
    pub intersection_spacing: u32,
    pub zone_side: u32,
    pub n_taxis: usize,
    pub n_companies: u32,
    /// Units moved per step.
    pub speed: u32,
    pub seed: u64,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self { grid_side: 1000, intersection_spacing: 10, zone_side: 100, n_taxis: 1000, n_companies: 5, speed: 1, seed: 1 }
    }
}

impl CityConfig {
    pub fn validate(&self) -> Result<()> {
        let g = self.grid_side;
        if g < 2 || self.intersection_spacing == 0 || !g.is_multiple_of(self.intersection_spacing) {
            return Err(Error::Config(format!(
                "intersection spacing {} must be positive and divide grid side {g}",
                self.intersection_spacing
            )));
        }
        if self.zone_side == 0 || !g.is_multiple_of(self.zone_side) {
            return Err(Error::Config(format!("zone side {} must be positive and divide grid side {g}", self.zone_side)));
        }
        if self.n_companies == 0 {
            return Err(Error::Config("at least one company".into()));
        }
        Ok(())
    }

    pub fn zones_per_side(&self) -> u32 {
        self.grid_side / self.zone_side
    }

    pub fn spec(&self) -> AggregationSpec {
        AggregationSpec::ZoneCount { grid_side: self.grid_side, zone_side: self.zone_side }
    }

    fn on_line(&self, c: u32) -> bool {
        c.is_multiple_of(self.intersection_spacing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    fn delta(self) -> (i64, i64) {
        match self {
            Heading::North => (0, 1),
            Heading::East => (1, 0),
            Heading::South => (0, -1),
            Heading::West => (-1, 0),
        }
    }

    pub fn reverse(self) -> Heading {
        match self {
            Heading::North => Heading::South,
            Heading::East => Heading::West,
            Heading::South => Heading::North,
            Heading::West => Heading::East,
        }
    }

    fn is_vertical(self) -> bool {
        matches!(self, Heading::North | Heading::South)
    }
}

#[derive(Debug, Clone)]
pub struct TaxiState {
    pub taxi_id: UserId,
    pub company: u32,
    pub x: u32,
    pub y: u32,
    pub heading: Heading,
    pub data_key: DataKey,
}

impl TaxiState {
    pub fn position(&self) -> (f64, f64) {
        (f64::from(self.x), f64::from(self.y))
    }

    /// The plaintext the taxi encrypts: `x,y`.
    pub fn payload(&self) -> String {
        format!("{},{}", self.x, self.y)
    }

    pub fn on_street(&self, city: &CityConfig) -> bool {
        self.x < city.grid_side && self.y < city.grid_side && (city.on_line(self.x) || city.on_line(self.y))
    }

    pub fn at_intersection(&self, city: &CityConfig) -> bool {
        city.on_line(self.x) && city.on_line(self.y)
    }

    fn next(&self, heading: Heading, city: &CityConfig) -> Option<(u32, u32)> {
        let (dx, dy) = heading.delta();
        let (nx, ny) = (i64::from(self.x) + dx, i64::from(self.y) + dy);
        let g = i64::from(city.grid_side);
        ((0..g).contains(&nx) && (0..g).contains(&ny)).then_some((nx as u32, ny as u32))
    }

    /// Headings that follow a street and stay on the grid for one unit.
    pub fn legal_headings(&self, city: &CityConfig) -> Vec<Heading> {
        Heading::ALL
            .into_iter()
            .filter(|h| if h.is_vertical() { city.on_line(self.x) } else { city.on_line(self.y) })
            .filter(|h| self.next(*h, city).is_some())
            .collect()
    }

    fn advance<R: Rng>(&mut self, rng: &mut R, city: &CityConfig) {
        let (x, y) = match self.next(self.heading, city) {
            Some(p) => p,
            None => {
                self.heading = self.heading.reverse();
                self.next(self.heading, city).expect("grid side of at least 2 leaves room to reverse")
            }
        };
        self.x = x;
        self.y = y;
        if self.at_intersection(city) {
            self.heading = *self.legal_headings(city).choose(rng).expect("every intersection has an exit");
        }
    }
}

/// Places taxis uniformly on street lines. Taxi `i` belongs to company
/// `i % n_companies` and gets a fresh key.
pub fn init_city<R: RngCore + CryptoRng>(rng: &mut R, city: &CityConfig) -> Result<Vec<TaxiState>> {
    city.validate()?;
    let lines = city.grid_side / city.intersection_spacing;
    let mut taxis = Vec::with_capacity(city.n_taxis);
    for i in 0..city.n_taxis {
        let line = rng.gen_range(0..lines) * city.intersection_spacing;
        let along = rng.gen_range(0..city.grid_side);
        let (x, y) = if rng.gen_bool(0.5) { (line, along) } else { (along, line) };
        let company = i as u32 % city.n_companies;
        let mut taxi = TaxiState {
            taxi_id: UserId::new(format!("c{company}-taxi-{i:05}"))?,
            company,
            x,
            y,
            heading: Heading::North,
            data_key: DataKey::generate(rng),
        };
        taxi.heading = *taxi.legal_headings(city).choose(rng).expect("street positions have a legal heading");
        taxis.push(taxi);
    }
    Ok(taxis)
}

pub fn step<R: Rng>(rng: &mut R, taxis: &mut [TaxiState], city: &CityConfig) {
    for taxi in taxis.iter_mut() {
        for _ in 0..city.speed {
            taxi.advance(rng, city);
        }
    }
}
