//! Synthetic travel populations.
//!
//! Each card draws from its own ChaCha stream seeded with
//! `mix(seed, cardId)`, so the output does not depend on how many threads
//! generate it.

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{CardId, DateRange, OffSide, TapEvent, Timestamp, SECONDS_PER_DAY};
use crate::mix::mix;
use crate::store::{from_card_lists, weekdays, EventStore};

/// Card type codes used by the generator.
pub mod card_types {
    pub const FULL_FARE: u8 = 0;
    pub const CHILD_CONCESSION: u8 = 2;
    pub const FEDERAL_POLICE: u8 = 46;
    pub const TRANSIT_POLICE: u8 = 48;
    pub const FEDERAL_PARLIAMENTARIAN: u8 = 50;
    pub const STATE_PARLIAMENTARIAN: u8 = 51;
    pub const COMMUTER_CLUB: u8 = 65;
}

pub mod modes {
    pub const BUS: u8 = 1;
    pub const TRAIN: u8 = 2;
    pub const TRAM: u8 = 3;
}

/// Stop ids are `STOP_BASE + k` for `k` in `0..stopUniverse`.
pub const STOP_BASE: u32 = 10_000;

/// Mode serving stop index `k`: every third stop is a tram stop, the rest
/// alternate train and bus. Index 0 is a train stop and doubles as the city
/// terminus.
pub fn stop_mode(k: u32) -> u8 {
    match k % 3 {
        0 => modes::TRAIN,
        1 => modes::TRAM,
        _ => modes::BUS,
    }
}

fn stop_route(k: u32) -> u32 {
    stop_mode(k) as u32 * 1_000 + k / 30
}

/// Standard deviation of day-to-day departure jitter, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct JitterConfig {
    pub commuter: f64,
    pub tourist: f64,
    pub season_pass_holder: f64,
    pub child_concession: f64,
    pub parliamentarian: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig {
            commuter: 240.0,
            tourist: 1_800.0,
            season_pass_holder: 2_400.0,
            child_concession: 180.0,
            parliamentarian: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SyntheticPopulationConfig {
    pub seed: u64,
    pub commuter: u32,
    pub tourist_one_week: u32,
    pub season_pass_holder: u32,
    pub child_concession: u32,
    /// State parliamentarian passes (type 51).
    pub parliamentarian: u32,
    /// Federal or transit police passes (type 46 / 48).
    pub police_pass: u32,
    pub stop_universe: u32,
    pub start_date: NaiveDate,
    /// Inclusive.
    pub end_date: NaiveDate,
    pub jitter: JitterConfig,
    pub tram_no_touch_off_probability: f64,
    pub first_card_id: u64,
}

impl Default for SyntheticPopulationConfig {
    fn default() -> Self {
        SyntheticPopulationConfig {
            seed: 0,
            commuter: 0,
            tourist_one_week: 0,
            season_pass_holder: 0,
            child_concession: 0,
            parliamentarian: 0,
            police_pass: 0,
            stop_universe: 600,
            start_date: NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2017, 12, 31).unwrap(),
            jitter: JitterConfig::default(),
            tram_no_touch_off_probability: 0.8,
            first_card_id: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Archetype {
    Commuter,
    TouristOneWeek,
    SeasonPassHolder,
    ChildConcession,
    Parliamentarian,
    PolicePass,
}

impl SyntheticPopulationConfig {
    pub fn period(&self) -> Result<DateRange> {
        DateRange::new(self.start_date, self.end_date).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn total_cards(&self) -> u64 {
        self.archetype_counts().iter().map(|(_, n)| *n as u64).sum()
    }

    pub fn archetype_counts(&self) -> [(Archetype, u32); 6] {
        [
            (Archetype::Commuter, self.commuter),
            (Archetype::TouristOneWeek, self.tourist_one_week),
            (Archetype::SeasonPassHolder, self.season_pass_holder),
            (Archetype::ChildConcession, self.child_concession),
            (Archetype::Parliamentarian, self.parliamentarian),
            (Archetype::PolicePass, self.police_pass),
        ]
    }

    /// Archetype of the card at offset `i` from `first_card_id`.
    pub fn archetype_of(&self, mut i: u64) -> Option<Archetype> {
        for (arch, n) in self.archetype_counts() {
            if i < n as u64 {
                return Some(arch);
            }
            i -= n as u64;
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        self.period()?;
        if self.stop_universe < 2 {
            return Err(Error::InvalidConfig("stop universe needs at least 2 stops".into()));
        }
        if (self.commuter > 0 || self.parliamentarian > 0) && self.stop_universe < 3 {
            return Err(Error::InvalidConfig(
                "commuters need two non-tram stops, so at least 3 stops".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tram_no_touch_off_probability) {
            return Err(Error::InvalidConfig("tram touch-off probability outside [0, 1]".into()));
        }
        let j = &self.jitter;
        for s in [j.commuter, j.tourist, j.season_pass_holder, j.child_concession, j.parliamentarian] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidConfig(format!("jitter {s} is not a finite non-negative number")));
            }
        }
        if self.first_card_id == 0 {
            return Err(Error::InvalidConfig("card ids start at 1".into()));
        }
        Ok(())
    }
}

pub fn generate_population(config: &SyntheticPopulationConfig) -> Result<EventStore> {
    config.validate()?;
    let period = config.period()?;
    let total = config.total_cards();
    let lists: Vec<(CardId, Vec<TapEvent>)> = (0..total)
        .into_par_iter()
        .map(|i| {
            let id = CardId(config.first_card_id + i);
            let arch = config.archetype_of(i).expect("index below total");
            let mut card = CardGen::new(config, &period, id);
            (id, card.generate(arch))
        })
        .collect();
    Ok(from_card_lists(lists))
}

const SERVICE_START: i64 = 4 * 3_600 + 30 * 60;
const SERVICE_END: i64 = 23 * 3_600 + 59 * 60;

struct CardGen<'a> {
    config: &'a SyntheticPopulationConfig,
    period: &'a DateRange,
    id: CardId,
    rng: ChaCha8Rng,
    events: Vec<TapEvent>,
}

impl<'a> CardGen<'a> {
    fn new(config: &'a SyntheticPopulationConfig, period: &'a DateRange, id: CardId) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(mix(config.seed, id.0));
        CardGen { config, period, id, rng, events: Vec::new() }
    }

    fn generate(&mut self, arch: Archetype) -> Vec<TapEvent> {
        let j = self.config.jitter.clone();
        match arch {
            Archetype::Commuter => {
                let card_type = if self.rng.gen_bool(0.1) {
                    card_types::COMMUTER_CLUB
                } else {
                    card_types::FULL_FARE
                };
                let (home, work) = self.two_fixed_stops();
                self.commute(card_type, home, work, (8.0, 17.5), 2_700.0, j.commuter, 1.0);
            }
            Archetype::ChildConcession => {
                let home = self.rng.gen_range(0..self.config.stop_universe);
                let school = self.other_stop(home);
                self.commute(card_types::CHILD_CONCESSION, home, school, (8.1, 15.4), 900.0, j.child_concession, 1.0);
            }
            Archetype::Parliamentarian => {
                let city = 0;
                let home = loop {
                    let k = self.non_tram_stop();
                    if k != city {
                        break k;
                    }
                };
                self.commute(card_types::STATE_PARLIAMENTARIAN, home, city, (7.5, 18.5), 3_600.0, j.parliamentarian, 0.55);
                self.random_days(card_types::STATE_PARLIAMENTARIAN, 0.1, 1..=1);
            }
            Archetype::PolicePass => {
                let card_type = if self.rng.gen_bool(0.25) {
                    card_types::FEDERAL_POLICE
                } else {
                    card_types::TRANSIT_POLICE
                };
                self.random_days(card_type, 0.7, 1..=4);
            }
            Archetype::TouristOneWeek => self.tourist(),
            Archetype::SeasonPassHolder => self.season_pass(j.season_pass_holder),
        }
        self.events.sort_by_key(|e| e.on_time);
        std::mem::take(&mut self.events)
    }

    fn non_tram_stop(&mut self) -> u32 {
        loop {
            let k = self.rng.gen_range(0..self.config.stop_universe);
            if stop_mode(k) != crate::synth::modes::TRAM {
                return k;
            }
        }
    }

    fn other_stop(&mut self, not: u32) -> u32 {
        loop {
            let k = self.rng.gen_range(0..self.config.stop_universe);
            if k != not {
                return k;
            }
        }
    }

    fn two_fixed_stops(&mut self) -> (u32, u32) {
        let home = self.non_tram_stop();
        loop {
            let work = self.non_tram_stop();
            if work != home {
                return (home, work);
            }
        }
    }

    fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        Normal::new(mean, sd).expect("validated jitter").sample(&mut self.rng)
    }

    /// Weekday round trips `home -> work` and back, each taken with
    /// probability `attend`. Departure bases are drawn once per card.
    #[allow(clippy::too_many_arguments)]
    fn commute(
        &mut self,
        card_type: u8,
        home: u32,
        work: u32,
        (am_hour, pm_hour): (f64, f64),
        base_spread: f64,
        jitter: f64,
        attend: f64,
    ) {
        let am = self.normal(am_hour * 3_600.0, base_spread).clamp(5.5 * 3_600.0, 10.5 * 3_600.0);
        let pm = self.normal(pm_hour * 3_600.0, base_spread).clamp(14.5 * 3_600.0, 21.0 * 3_600.0);
        let duration = self.rng.gen_range(600..3_000) as f64;
        for day in weekdays(self.period).collect::<Vec<_>>() {
            if attend < 1.0 && !self.rng.gen_bool(attend) {
                continue;
            }
            for (base, from, to) in [(am, home, work), (pm, work, home)] {
                let depart = self.normal(base, jitter);
                let ride = self.normal(duration, 60.0).max(60.0);
                self.trip(card_type, day, depart, from, to, ride);
            }
        }
    }

    fn tourist(&mut self) {
        let days = self.period.day_count();
        let start = self.period.from + chrono::Days::new(self.rng.gen_range(0..days) as u64);
        let spread = self.config.jitter.tourist;
        for offset in 0..7u64 {
            let day = start + chrono::Days::new(offset);
            if !self.period.contains_date(day) {
                break;
            }
            let trips = self.rng.gen_range(2..=4);
            for _ in 0..trips {
                let depart = self.normal(15.0 * 3_600.0, spread.max(1.0) * 2.0);
                let from = self.rng.gen_range(0..self.config.stop_universe);
                let to = self.same_mode_stop(from);
                let ride = self.rng.gen_range(300..2_400) as f64;
                self.trip(card_types::FULL_FARE, day, depart, from, to, ride);
            }
        }
    }

    /// One touch-on per month to activate a pass; never touches off.
    fn season_pass(&mut self, jitter: f64) {
        let mut home = self.rng.gen_range(0..self.config.stop_universe);
        if stop_mode(home) != modes::TRAM && self.config.stop_universe > 1 {
            home = home - home % 3 + 1;
            if home >= self.config.stop_universe {
                home = 1;
            }
        }
        let base = self.normal(8.0 * 3_600.0, 3_600.0);
        let mut month_start = self.period.from.with_day(1).unwrap();
        while month_start <= self.period.to {
            let next = month_start + chrono::Months::new(1);
            let first = month_start.max(self.period.from);
            let last = (next - chrono::Days::new(1)).min(self.period.to);
            let span = (last - first).num_days() + 1;
            let day = first + chrono::Days::new(self.rng.gen_range(0..span) as u64);
            let depart = self.normal(base, jitter);
            let on_time = self.clock(day, depart);
            self.events.push(TapEvent {
                card_id: self.id,
                card_type: card_types::FULL_FARE,
                on_time,
                on_mode: stop_mode(home),
                on_route_id: stop_route(home),
                on_stop_id: STOP_BASE + home,
                off: None,
            });
            month_start = next;
        }
    }

    /// Days chosen with probability `p`, each with a random number of trips
    /// between random stops.
    fn random_days(&mut self, card_type: u8, p: f64, trips: std::ops::RangeInclusive<u32>) {
        for day in self.period.days().collect::<Vec<_>>() {
            if !self.rng.gen_bool(p) {
                continue;
            }
            for _ in 0..self.rng.gen_range(trips.clone()) {
                let depart = self.rng.gen_range(6 * 3_600..23 * 3_600) as f64;
                let from = self.rng.gen_range(0..self.config.stop_universe);
                let to = self.same_mode_stop(from);
                let ride = self.rng.gen_range(300..2_400) as f64;
                self.trip(card_type, day, depart, from, to, ride);
            }
        }
    }

    fn same_mode_stop(&mut self, from: u32) -> u32 {
        if self.config.stop_universe < 6 {
            return self.other_stop(from);
        }
        loop {
            let k = self.rng.gen_range(0..self.config.stop_universe);
            if k != from && stop_mode(k) == stop_mode(from) {
                return k;
            }
        }
    }

    fn clock(&self, day: NaiveDate, second_of_day: f64) -> Timestamp {
        let s = (second_of_day.round() as i64).clamp(SERVICE_START, SERVICE_END);
        Timestamp::start_of(day).offset(s.min(SECONDS_PER_DAY - 1))
    }

    fn trip(&mut self, card_type: u8, day: NaiveDate, depart: f64, from: u32, to: u32, ride: f64) {
        let on_time = self.clock(day, depart);
        let mode = stop_mode(from);
        let skip_off = mode == modes::TRAM && self.rng.gen_bool(self.config.tram_no_touch_off_probability);
        let off = (!skip_off).then(|| OffSide {
            time: on_time.offset(ride.round() as i64),
            mode: stop_mode(to),
            route_id: stop_route(to),
            stop_id: STOP_BASE + to,
        });
        self.events.push(TapEvent {
            card_id: self.id,
            card_type,
            on_time,
            on_mode: mode,
            on_route_id: stop_route(from),
            on_stop_id: STOP_BASE + from,
            off,
        });
    }
}
