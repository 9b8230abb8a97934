//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run on its own with `cargo test -p transit-reid --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use chrono::{NaiveDate, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transit_reid::cotravel::{cotravel_on_date, CoTravelIndex, CoTravelPair};
use transit_reid::event::SubEvent;
use transit_reid::query::{card_type_census, evaluate, id_gap_scan, refine, Constraint, GapRecord};
use transit_reid::release::{
    add_noise, aggregate_counts, aggregate_counts_clamped, Adjacency, AggregateTable, Mechanism, PostProcess,
    PrivacyParams,
};
use transit_reid::synth::{card_types, generate_population, stop_mode, SyntheticPopulationConfig, STOP_BASE};
use transit_reid::unicity::{brute_force_unicity, run_unicity_detailed, sampled_sets, UnicityDetail, UnicityParams};
use transit_reid::{
    build_store, CardId, DateRange, EventKind, EventStore, OffSide, Side, TapEvent, TimeGranularity, Timestamp,
};

const BIN: &str = env!("CARGO_BIN_EXE_transit-reid");

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn at(day: NaiveDate, h: u32, m: u32, s: u32) -> Timestamp {
    Timestamp::from_date_time(day, NaiveTime::from_hms_opt(h, m, s).unwrap())
}

fn tap(card: u64, card_type: u8, on_time: Timestamp, stop_index: u32, off: Option<(i64, u32)>) -> TapEvent {
    TapEvent {
        card_id: CardId(card),
        card_type,
        on_time,
        on_mode: stop_mode(stop_index),
        on_route_id: 1,
        on_stop_id: STOP_BASE + stop_index,
        off: off.map(|(ride, to)| OffSide {
            time: on_time.offset(ride),
            mode: stop_mode(to),
            route_id: 1,
            stop_id: STOP_BASE + to,
        }),
    }
}

// ---------------------------------------------------------------------------
// Random small stores

/// Dense store: taps cluster around a few anchor times and stops so that
/// signatures collide at every granularity.
fn dense_store(rng: &mut ChaCha8Rng, max_events: usize) -> EventStore {
    let cards = rng.gen_range(2..=40u64);
    let day = date(2017, 5, 1) + chrono::Days::new(rng.gen_range(0..30));
    let anchors: Vec<i64> = (0..rng.gen_range(2..=25))
        .map(|_| at(day, 0, 0, 0).seconds() + rng.gen_range(0..3 * 86_400))
        .collect();
    let stops = rng.gen_range(1..=6u32);
    let offsets = [0i64, 0, 0, 1, -1, 30, -45, 150, -150, 299, 1_800, -3_599];
    let mut events: Vec<TapEvent> = Vec::new();
    'cards: for card in 1..=cards {
        let card_type = *[0u8, 0, 0, 2, 51].choose(rng).unwrap();
        for _ in 0..rng.gen_range(1..=30) {
            if events.len() >= max_events {
                break 'cards;
            }
            if !events.is_empty() && rng.gen_bool(0.15) {
                // Copy someone else's touch.
                let mut e = *events.choose(rng).unwrap();
                e.card_id = CardId(card);
                e.card_type = card_type;
                events.push(e);
                continue;
            }
            let t = anchors.choose(rng).unwrap() + offsets.choose(rng).unwrap();
            let off = rng.gen_bool(0.5).then(|| (rng.gen_range(60..3_600), rng.gen_range(0..stops)));
            events.push(tap(card, card_type, Timestamp::from_seconds(t), rng.gen_range(0..stops), off));
        }
    }
    build_store(events)
}

/// Small generated population, trimmed to whole cards within `max_events`.
fn synthetic_store(rng: &mut ChaCha8Rng, max_events: usize) -> EventStore {
    let start = date(2017, 1, 2) + chrono::Days::new(rng.gen_range(0..300));
    let config = SyntheticPopulationConfig {
        seed: rng.gen(),
        commuter: rng.gen_range(0..=4),
        tourist_one_week: rng.gen_range(0..=25),
        season_pass_holder: rng.gen_range(0..=15),
        child_concession: rng.gen_range(0..=3),
        parliamentarian: rng.gen_range(0..=1),
        police_pass: rng.gen_range(0..=1),
        stop_universe: rng.gen_range(3..=40),
        start_date: start,
        end_date: start + chrono::Days::new(rng.gen_range(3..=20)),
        first_card_id: rng.gen_range(1..=1_000),
        ..Default::default()
    };
    let full = generate_population(&config).unwrap();
    let mut kept = Vec::new();
    for (_, events) in full.cards() {
        if kept.len() + events.len() > max_events {
            break;
        }
        kept.extend_from_slice(events);
    }
    build_store(kept)
}

fn random_store(rng: &mut ChaCha8Rng, max_events: usize) -> EventStore {
    if rng.gen_bool(0.5) {
        dense_store(rng, max_events)
    } else {
        synthetic_store(rng, max_events)
    }
}

fn random_params(rng: &mut ChaCha8Rng, store: &EventStore) -> UnicityParams {
    let kind = *[EventKind::TouchOn, EventKind::TouchOn, EventKind::TouchOff, EventKind::Both].choose(rng).unwrap();
    let period = store.date_range().filter(|_| rng.gen_bool(0.25)).map(|r| {
        let span = r.day_count();
        let from = r.from + chrono::Days::new(rng.gen_range(0..span) as u64);
        DateRange::new(from, r.to).unwrap()
    });
    UnicityParams { kind, seed: rng.gen(), period, ..Default::default() }
}

fn truncated(sampled: &BTreeMap<CardId, Vec<SubEvent>>, n: usize) -> BTreeMap<CardId, Vec<SubEvent>> {
    sampled.iter().map(|(c, s)| (*c, s[..n.min(s.len())].to_vec())).collect()
}

// ---------------------------------------------------------------------------
// 1. Oracle equivalence

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0_5eed_0001);
    let stores = 120;
    let (mut compared, mut mismatches, mut max_events) = (0u64, 0u64, 0usize);
    for _ in 0..stores {
        let store = random_store(&mut rng, 1_000);
        max_events = max_events.max(store.event_count());
        let params = random_params(&mut rng, &store);
        let detail = run_unicity_detailed(&store, &params).unwrap();
        let sampled = sampled_sets(&store, &params).unwrap();
        for g in TimeGranularity::ALL {
            for loc in [true, false] {
                for n in 1..=5 {
                    let oracle = brute_force_unicity(&store, &truncated(&sampled, n), g, loc, params.kind, params.period.as_ref())
                        .unwrap();
                    let flags = detail.flags_for(g, loc, n).unwrap();
                    assert_eq!(oracle.len(), detail.cards.len());
                    for (card, flag) in detail.cards.iter().zip(flags) {
                        compared += 1;
                        if oracle[card] != *flag {
                            mismatches += 1;
                        }
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    Outcome {
        name: "oracle equivalence",
        pass: mismatches == 0 && elapsed < Duration::from_secs(60),
        detail: format!(
            "{stores} stores (largest {max_events} events), 5 granularities x 2 location flags x n=1..5: \
             {mismatches} mismatching flags of {compared}; {:.1}s (limit 60s)",
            elapsed.as_secs_f64()
        ),
    }
}

// ---------------------------------------------------------------------------
// 2. Monotonicity suite

#[derive(Default)]
struct Violations {
    checks: u64,
    violations: u64,
}

impl Violations {
    fn check(&mut self, ok: bool) {
        self.checks += 1;
        if !ok {
            self.violations += 1;
        }
    }
}

fn flag(detail: &UnicityDetail, g: TimeGranularity, loc: bool, n: usize, i: usize) -> bool {
    detail.flags_for(g, loc, n).unwrap()[i]
}

/// Per-card fixed-sample checks shared by the suite and the large run.
#[allow(clippy::needless_range_loop)]
fn unicity_invariants(
    detail: &UnicityDetail,
    sample_len: &[usize],
    coarsening: &mut Violations,
    location: &mut Violations,
    prefix: &mut Violations,
    crossing: &mut Violations,
) {
    for i in 0..detail.cards.len() {
        for n in 1..=5 {
            for fine in TimeGranularity::ALL {
                for coarse in TimeGranularity::ALL {
                    if fine >= coarse {
                        continue;
                    }
                    for loc in [true, false] {
                        let holds = !flag(detail, coarse, loc, n, i) || flag(detail, fine, loc, n, i);
                        if fine.refines(coarse) {
                            coarsening.check(holds);
                        } else {
                            crossing.check(holds);
                        }
                    }
                }
            }
            for g in TimeGranularity::ALL {
                location.check(!flag(detail, g, false, n, i) || flag(detail, g, true, n, i));
                for loc in [true, false] {
                    for longer in n + 1..=5 {
                        if sample_len[i] >= longer {
                            prefix.check(!flag(detail, g, loc, n, i) || flag(detail, g, loc, longer, i));
                        }
                    }
                }
            }
        }
    }
}

fn random_constraint(rng: &mut ChaCha8Rng, store: &EventStore) -> Constraint {
    let range = store.date_range().unwrap();
    let day = range.from + chrono::Days::new(rng.gen_range(0..range.day_count()) as u64);
    let any_event = *store.iter_events().collect::<Vec<_>>().choose(rng).unwrap();
    match rng.gen_range(0..10) {
        0 => {
            let lo = rng.gen_range(0..86_000);
            let hi = (lo + rng.gen_range(0..20_000)).min(86_399);
            Constraint::TouchOnBetween {
                date: if rng.gen_bool(0.5) { any_event.on_time.date() } else { day },
                lo: NaiveTime::from_num_seconds_from_midnight_opt(lo, 0).unwrap(),
                hi: NaiveTime::from_num_seconds_from_midnight_opt(hi, 0).unwrap(),
            }
        }
        1 => Constraint::TouchOnAt { time: any_event.on_time.offset(rng.gen_range(-5..=5)), tolerance_seconds: rng.gen_range(0..600) },
        2 => Constraint::VisitedStop {
            stop_id: any_event.on_stop_id,
            from: rng.gen_bool(0.5).then_some(day),
            to: rng.gen_bool(0.5).then_some(range.to),
        },
        3 => Constraint::CardTypeIs { type_code: any_event.card_type },
        4 => Constraint::CardTypeIsNot { type_code: any_event.card_type },
        5 => Constraint::FirstSeenBefore { date: day },
        6 => Constraint::FirstSeenAfter { date: day },
        7 => Constraint::LastSeenBefore { date: day },
        8 => Constraint::LastSeenAfter { date: day },
        _ => Constraint::MinEventCount { k: rng.gen_range(0..40) },
    }
}

fn monotonicity_suite() -> Vec<Outcome> {
    let cases = 1_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0_5eed_0002);
    let (mut coarsening, mut location, mut prefix, mut crossing) =
        (Violations::default(), Violations::default(), Violations::default(), Violations::default());
    let mut aggregate_prefix = Violations::default();
    for _ in 0..cases {
        let store = random_store(&mut rng, 300);
        let params = random_params(&mut rng, &store);
        let detail = run_unicity_detailed(&store, &params).unwrap();
        let sampled = sampled_sets(&store, &params).unwrap();
        let lens: Vec<usize> = detail.cards.iter().map(|c| sampled[c].len()).collect();
        unicity_invariants(&detail, &lens, &mut coarsening, &mut location, &mut prefix, &mut crossing);

        let short = UnicityParams { exclude_short_cards: true, ..params };
        let report = transit_reid::unicity::run_unicity(&store, &short).unwrap();
        for g in TimeGranularity::ALL {
            for loc in [true, false] {
                for n in 1..5 {
                    let (a, b) = (report.row(g, loc, n).unwrap(), report.row(g, loc, n + 1).unwrap());
                    aggregate_prefix.check(a.cards_unique <= b.cards_unique);
                }
            }
        }
    }

    let mut query = Violations::default();
    for _ in 0..cases {
        let store = random_store(&mut rng, 300);
        if store.is_empty() {
            continue;
        }
        let base: Vec<Constraint> = (0..rng.gen_range(0..4)).map(|_| random_constraint(&mut rng, &store)).collect();
        let extra = random_constraint(&mut rng, &store);
        let before = evaluate(&store, &base).unwrap();
        let mut all = base.clone();
        all.push(extra.clone());
        let after = evaluate(&store, &all).unwrap();
        let refined = refine(&before, extra, &store).unwrap();
        query.check(after.cards.is_subset(&before.cards) && refined.cards == after.cards);
    }

    let line = |name, v: &Violations, extra: String| Outcome {
        name,
        pass: v.violations == 0 && v.checks > 0,
        detail: format!("{cases} cases, {} checks, {} violations{extra}", v.checks, v.violations),
    };
    vec![
        line(
            "monotonicity: coarsening",
            &coarsening,
            format!(
                " (pairs where the finer granularity refines the coarser; nearest-five-minute pairs that do not nest: \
                 {} of {} checks differ, expected since rounding crosses minute and hour boundaries)",
                crossing.violations, crossing.checks
            ),
        ),
        line("monotonicity: location", &location, String::new()),
        line(
            "monotonicity: prefix",
            &Violations { checks: prefix.checks + aggregate_prefix.checks, violations: prefix.violations + aggregate_prefix.violations },
            " (per card, plus cardsUnique non-decreasing in n with short cards excluded)".into(),
        ),
        line("monotonicity: query anti-monotonicity", &query, " (evaluate(C + c) within evaluate(C); refine agrees)".into()),
    ]
}

// ---------------------------------------------------------------------------
// 3. Trends on a 100,000-card population

fn population_trends() -> Vec<Outcome> {
    let started = Instant::now();
    let config = SyntheticPopulationConfig {
        seed: 2017,
        commuter: 12_000,
        child_concession: 5_000,
        tourist_one_week: 51_000,
        season_pass_holder: 30_000,
        parliamentarian: 400,
        police_pass: 1_600,
        ..Default::default()
    };
    let store = generate_population(&config).unwrap();
    let week = DateRange::new(date(2017, 10, 2), date(2017, 10, 8)).unwrap();
    let population = format!("{} cards, {} events", store.card_count(), store.event_count());

    let week_params = UnicityParams { period: Some(week), seed: 41, ..Default::default() };
    let detail = run_unicity_detailed(&store, &week_params).unwrap();
    let report = &detail.report;
    let pct = |g, loc, n| report.row(g, loc, n).unwrap().percent_unique();

    let a = pct(TimeGranularity::Exact, true, 1);
    let trend_a = Outcome {
        name: "trend (a): single touch",
        pass: a > 60.0,
        detail: format!("{population}; week {week:?}: exact+location n=1 unique {a:.2}% (need > 60%)"),
    };

    let short = UnicityParams { exclude_short_cards: true, ..week_params.clone() };
    let short_report = transit_reid::unicity::run_unicity(&store, &short).unwrap();
    let mut b_bad = Vec::new();
    for g in TimeGranularity::ALL {
        for loc in [true, false] {
            for n in 1..5 {
                let (x, y) = (short_report.row(g, loc, n).unwrap(), short_report.row(g, loc, n + 1).unwrap());
                if y.percent_unique() < x.percent_unique() {
                    b_bad.push(format!("{g}/{loc}/n={n}"));
                }
            }
        }
    }
    let exact_curve: Vec<String> = (1..=5)
        .map(|n| format!("{:.2}", short_report.row(TimeGranularity::Exact, true, n).unwrap().percent_unique()))
        .collect();
    let trend_b = Outcome {
        name: "trend (b): more touches",
        pass: b_bad.is_empty(),
        detail: format!(
            "{} cards with >= 5 touches; exact+location n=1..5: [{}]%; decreasing steps: {b_bad:?}",
            short_report.rows[0].cards_considered,
            exact_curve.join(", ")
        ),
    };

    // Aggregate ordering over the full declared coarseness order, and the
    // per-card fixed-sample invariants along refinement pairs.
    let mut c_bad = Vec::new();
    for n in 1..=5 {
        for g in TimeGranularity::ALL {
            if pct(g, true, n) < pct(g, false, n) {
                c_bad.push(format!("location {g} n={n}"));
            }
        }
        for loc in [true, false] {
            for w in TimeGranularity::ALL.windows(2) {
                if pct(w[0], loc, n) < pct(w[1], loc, n) {
                    c_bad.push(format!("{} < {} loc={loc} n={n}", w[0], w[1]));
                }
            }
        }
    }
    let sampled = sampled_sets(&store, &week_params).unwrap();
    let lens: Vec<usize> = detail.cards.iter().map(|c| sampled[c].len()).collect();
    let (mut coarse, mut loc, mut prefix, mut crossing) =
        (Violations::default(), Violations::default(), Violations::default(), Violations::default());
    unicity_invariants(&detail, &lens, &mut coarse, &mut loc, &mut prefix, &mut crossing);
    let trend_c = Outcome {
        name: "trend (c): location and granularity",
        pass: c_bad.is_empty() && coarse.violations == 0 && loc.violations == 0,
        detail: format!(
            "{} cards in week; aggregate order violations: {c_bad:?}; per-card refinement violations {}/{}, \
             location violations {}/{}",
            detail.cards.len(),
            coarse.violations,
            coarse.checks,
            loc.violations,
            loc.checks
        ),
    };

    let year_params = UnicityParams {
        granularities: vec![TimeGranularity::Exact],
        cardinalities: vec![2],
        seed: 41,
        ..Default::default()
    };
    let year = transit_reid::unicity::run_unicity(&store, &year_params).unwrap();
    let mut d_parts = Vec::new();
    let mut d_pass = true;
    for loc in [true, false] {
        let (w, y) = (pct(TimeGranularity::Exact, loc, 2), year.row(TimeGranularity::Exact, loc, 2).unwrap().percent_unique());
        d_pass &= y >= w;
        d_parts.push(format!("location={loc}: week {w:.2}% -> year {y:.2}%"));
    }
    let trend_d = Outcome { name: "trend (d): longer period", pass: d_pass, detail: format!("exact n=2, {}", d_parts.join("; ")) };

    let elapsed = started.elapsed();
    let runtime = Outcome {
        name: "trend runtime",
        pass: elapsed < Duration::from_secs(600),
        detail: format!("generation and all runs {:.1}s (limit 600s)", elapsed.as_secs_f64()),
    };
    vec![trend_a, trend_b, trend_c, trend_d, runtime]
}

// ---------------------------------------------------------------------------
// 4. Co-travel

/// Quadratic reference: every pair of touch-ons, ranked and paired greedily.
fn quadratic_cotravel(
    store: &EventStore,
    subject: CardId,
    window: i64,
    period: Option<&DateRange>,
) -> BTreeMap<CardId, Vec<CoTravelPair>> {
    let inside = |t: Timestamp| period.is_none_or(|p| p.contains(t));
    let own = store.events(subject).unwrap();
    let mut out = BTreeMap::new();
    for (other, theirs) in store.cards() {
        if other == subject {
            continue;
        }
        let mut pairs = Vec::new();
        for (i, a) in own.iter().enumerate() {
            for (j, b) in theirs.iter().enumerate() {
                let dt = (a.on_time.seconds() - b.on_time.seconds()).abs();
                if a.on_stop_id == b.on_stop_id && dt <= window && inside(a.on_time) && inside(b.on_time) {
                    let (ta, tb) = (a.on_time.seconds(), b.on_time.seconds());
                    let (lower_t, lower_i) = if subject < other { (ta, i) } else { (tb, j) };
                    let key = (dt, ta.min(tb), ta.max(tb), a.on_stop_id, lower_t, lower_i);
                    pairs.push((key, i, j, CoTravelPair { stop_id: a.on_stop_id, own_time: a.on_time, other_time: b.on_time }));
                }
            }
        }
        pairs.sort_by_key(|p| p.0);
        let (mut used_i, mut used_j, mut chosen) = (BTreeSet::new(), BTreeSet::new(), Vec::new());
        for (_, i, j, pair) in pairs {
            if used_i.contains(&i) || used_j.contains(&j) {
                continue;
            }
            used_i.insert(i);
            used_j.insert(j);
            chosen.push(pair);
        }
        if !chosen.is_empty() {
            chosen.sort();
            out.insert(other, chosen);
        }
    }
    out
}

fn cotravel_store(rng: &mut ChaCha8Rng, max_events: usize) -> EventStore {
    let cards = rng.gen_range(20..=400u64);
    let day = date(2017, 8, 1);
    let stops = rng.gen_range(1..=4u32);
    let spread = rng.gen_range(30..=3_600);
    let mut events = Vec::new();
    for card in 1..=cards {
        for _ in 0..rng.gen_range(1..=40) {
            if events.len() >= max_events {
                return build_store(events);
            }
            let when = at(day, 8, 0, 0)
                .offset(rng.gen_range(0..3) * 86_400)
                .offset(rng.gen_range(0..spread));
            events.push(tap(card, rng.gen_range(0..3), when, rng.gen_range(0..stops), None));
        }
    }
    build_store(events)
}

fn seminar_scenario() -> (bool, String) {
    let seminar = date(2017, 9, 14);
    let other_day = date(2017, 9, 15);
    let (tram_stop, home_stop, city) = (1, 3, 0);
    let mut events = Vec::new();
    // Subject card: commutes every weekday, then boards the tram after the seminar.
    let subject = 500;
    for day in DateRange::new(date(2017, 9, 4), date(2017, 9, 29)).unwrap().days() {
        events.push(tap(subject, card_types::FULL_FARE, at(day, 8, 2, 0), 6, Some((1_500, city))));
    }
    events.push(tap(subject, card_types::FULL_FARE, at(seminar, 21, 40, 10), tram_stop, None));
    // The person sought: a commuter from `home_stop` who boarded with the subject.
    let sought = 731;
    for day in DateRange::new(date(2017, 9, 1), date(2017, 9, 29)).unwrap().days() {
        events.push(tap(sought, card_types::FULL_FARE, at(day, 7, 45, 30), home_stop, Some((1_800, city))));
    }
    events.push(tap(sought, card_types::FULL_FARE, at(seminar, 21, 40, 13), tram_stop, None));
    // Two child concession cards and a short-lived concession card on the same tram.
    events.push(tap(812, card_types::CHILD_CONCESSION, at(seminar, 21, 40, 7), tram_stop, None));
    events.push(tap(813, card_types::CHILD_CONCESSION, at(seminar, 21, 40, 15), tram_stop, None));
    events.push(tap(900, card_types::CHILD_CONCESSION, at(seminar, 21, 40, 9), tram_stop, None));
    events.push(tap(900, card_types::CHILD_CONCESSION, at(other_day, 9, 0, 0), 4, None));
    // Near misses: outside the window, another stop, another date.
    events.push(tap(640, card_types::FULL_FARE, at(seminar, 21, 40, 16), tram_stop, None));
    events.push(tap(641, card_types::FULL_FARE, at(seminar, 21, 40, 11), 4, None));
    events.push(tap(642, card_types::FULL_FARE, at(other_day, 21, 40, 10), tram_stop, None));
    // A colleague who shares the subject's daily commute but not the tram.
    for day in DateRange::new(date(2017, 9, 4), date(2017, 9, 29)).unwrap().days() {
        events.push(tap(643, card_types::FULL_FARE, at(day, 8, 2, 40), 6, Some((1_500, city))));
    }
    let store = build_store(events);

    let matches = cotravel_on_date(&store, CardId(subject), seminar, 5).unwrap();
    let oracle = quadratic_cotravel(&store, CardId(subject), 5, Some(&DateRange::single(seminar)));
    let ids: Vec<u64> = matches.iter().map(|m| m.other_card_id.0).collect();
    let agrees = matches.len() == oracle.len() && matches.iter().all(|m| oracle.get(&m.other_card_id) == Some(&m.event_pairs));
    let remaining: Vec<u64> = matches
        .iter()
        .filter(|m| m.other_card_type != card_types::CHILD_CONCESSION)
        .map(|m| m.other_card_id.0)
        .collect();
    let pass = matches.len() == 4 && agrees && remaining == vec![sought];
    (pass, format!("seminar date matches {ids:?} (quadratic scan agrees: {agrees}); after excluding concession type: {remaining:?}"))
}

fn cotravel_criterion() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0_5eed_0004);
    let (mut stores, mut subjects, mut mismatches, mut asymmetric, mut window_drops, mut largest) = (0, 0, 0, 0, 0, 0);
    for s in 0..24 {
        let cap = if s % 4 == 0 { 10_000 } else { 2_000 };
        let store = cotravel_store(&mut rng, cap);
        largest = largest.max(store.event_count());
        stores += 1;
        let index = CoTravelIndex::build(&store);
        let window = rng.gen_range(0..=10);
        let period = rng.gen_bool(0.3).then(|| DateRange::single(date(2017, 8, 2)));
        let ids: Vec<CardId> = store.card_ids().collect();
        let chosen: Vec<CardId> = if ids.len() > 80 { ids.choose_multiple(&mut rng, 80).copied().collect() } else { ids.clone() };
        let mut counts: BTreeMap<(CardId, CardId), usize> = BTreeMap::new();
        for &card in &ids {
            let found = index.cotravellers(&store, card, window, period.as_ref()).unwrap();
            for m in &found {
                counts.insert((card, m.other_card_id), m.occurrences);
            }
            let wider = index.cotravellers(&store, card, window + 3, period.as_ref()).unwrap();
            for m in &found {
                let widened = wider.iter().find(|w| w.other_card_id == m.other_card_id).map_or(0, |w| w.occurrences);
                if widened < m.occurrences {
                    window_drops += 1;
                }
            }
            if chosen.contains(&card) {
                subjects += 1;
                let oracle = quadratic_cotravel(&store, card, window, period.as_ref());
                let same = found.len() == oracle.len()
                    && found.iter().all(|m| oracle.get(&m.other_card_id) == Some(&m.event_pairs) && m.occurrences == m.event_pairs.len());
                if !same {
                    mismatches += 1;
                }
            }
        }
        asymmetric += counts.iter().filter(|((a, b), k)| counts.get(&(*b, *a)) != Some(k)).count();
    }
    let (seminar_ok, seminar) = seminar_scenario();
    Outcome {
        name: "co-travel",
        pass: mismatches == 0 && asymmetric == 0 && window_drops == 0 && seminar_ok,
        detail: format!(
            "{stores} stores (largest {largest} events), {subjects} subjects vs quadratic scan: {mismatches} mismatches; \
             asymmetric pairs: {asymmetric}; window-widening drops: {window_drops}; {seminar}; {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    }
}

// ---------------------------------------------------------------------------
// 5. Re-identification narrowing

fn narrowing_criterion() -> Outcome {
    let config = SyntheticPopulationConfig {
        seed: 48,
        commuter: 400,
        tourist_one_week: 300,
        child_concession: 50,
        start_date: date(2017, 3, 1),
        end_date: date(2017, 3, 31),
        ..Default::default()
    };
    let store = generate_population(&config).unwrap();
    let day = date(2017, 3, 7);
    let (lo, hi) = (NaiveTime::from_hms_opt(8, 0, 0).unwrap(), NaiveTime::from_hms_opt(9, 0, 0).unwrap());
    // The target: the first commuter touching on in the busy hour and again in the evening.
    let (target, evening) = store
        .cards()
        .find_map(|(id, events)| {
            let today: Vec<&TapEvent> = events.iter().filter(|e| e.on_time.date() == day).collect();
            let morning = today.iter().any(|e| (lo..=hi).contains(&e.on_time.to_naive().time()));
            let evening = today.iter().find(|e| e.on_time.to_naive().time().hour_of_day() >= 16)?;
            morning.then_some((id, evening.on_time))
        })
        .unwrap();
    let busy = Constraint::TouchOnBetween { date: day, lo, hi };
    let first = evaluate(&store, std::slice::from_ref(&busy)).unwrap();
    let second = refine(&first, Constraint::TouchOnAt { time: evening, tolerance_seconds: 0 }, &store).unwrap();
    let found: Vec<u64> = second.cards.iter().map(|c| c.0).collect();
    Outcome {
        name: "re-identification narrowing",
        pass: first.len() > 20 && found == vec![target.0],
        detail: format!(
            "{} cards; touch-on {day} 08:00-09:00 -> {} candidates; plus touch-on at {evening} -> {} ({:?}, target {})",
            store.card_count(),
            first.len(),
            second.len(),
            found,
            target.0
        ),
    }
}

trait HourOfDay {
    fn hour_of_day(&self) -> u32;
}

impl HourOfDay for NaiveTime {
    fn hour_of_day(&self) -> u32 {
        chrono::Timelike::hour(self)
    }
}

// ---------------------------------------------------------------------------
// 6. Gap scan

fn gap_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0_5eed_0006);
    let mut ids = vec![1u64];
    let mut planted = vec![GapRecord { last_used_id: CardId(1), next_used_id: CardId(15_747), missing_count: 15_745 }];
    let mut next = 15_747u64;
    for _ in 0..300 {
        // A run of used ids, then a gap.
        for _ in 0..rng.gen_range(1..20) {
            ids.push(next);
            next += 1;
        }
        let last = next - 1;
        let missing = match rng.gen_range(0..4) {
            0 => rng.gen_range(1..5),
            1 => rng.gen_range(5..500),
            2 => rng.gen_range(500..50_000),
            _ => rng.gen_range(50_000..2_000_000),
        };
        next += missing;
        planted.push(GapRecord { last_used_id: CardId(last), next_used_id: CardId(next), missing_count: missing });
    }
    ids.push(next);
    let day = date(2017, 2, 1);
    let store = build_store(ids.iter().enumerate().map(|(i, &id)| tap(id, 0, at(day, 6, 0, 0).offset(i as i64), 0, None)));
    let found = id_gap_scan(&store, 1).unwrap();
    let big: Vec<GapRecord> = planted.iter().filter(|g| g.missing_count >= 1_000).copied().collect();
    let found_big = id_gap_scan(&store, 1_000).unwrap();
    let census = card_type_census(&store, 1_000);
    Outcome {
        name: "gap scan",
        pass: found == planted && found_big == big && census.values().map(|c| c.card_count).sum::<usize>() == ids.len(),
        detail: format!(
            "{} ids, {} planted gaps incl. 1..15747 (15745 missing): {} recovered exactly; minGap=1000 -> {} of {}",
            ids.len(),
            planted.len(),
            found.iter().zip(&planted).filter(|(a, b)| a == b).count(),
            found_big.len(),
            big.len()
        ),
    }
}

// ---------------------------------------------------------------------------
// 7. Release

fn release_criterion() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // Conservation on a generated store restricted to a fortnight.
    let config = SyntheticPopulationConfig {
        seed: 6,
        commuter: 300,
        tourist_one_week: 400,
        season_pass_holder: 200,
        child_concession: 100,
        police_pass: 10,
        start_date: date(2017, 4, 1),
        end_date: date(2017, 4, 30),
        ..Default::default()
    };
    let store = generate_population(&config).unwrap();
    let period = DateRange::new(date(2017, 4, 10), date(2017, 4, 23)).unwrap();
    let on = store.iter_events().filter(|e| period.contains(e.on_time)).count() as f64;
    let off = store.iter_events().filter_map(|e| e.off).filter(|o| period.contains(o.time)).count() as f64;
    let exact = aggregate_counts(&store, 15, Some(period)).unwrap();
    let conserved = exact.total(Side::TouchOn) == on && exact.total(Side::TouchOff) == off;
    pass &= conserved;
    notes.push(format!("conservation on={on} off={off}: {conserved}"));

    // Clamping monotonicity.
    let clamps: Vec<AggregateTable> = (1..=4).map(|m| aggregate_counts_clamped(&store, 15, Some(period), m).unwrap()).collect();
    let clamp_ok = clamps.windows(2).all(|w| w[0].rows.iter().all(|r| w[1].get(r.stop_id, r.block_start, r.direction) >= r.count));
    pass &= clamp_ok;
    notes.push(format!("clamping monotone: {clamp_ok}"));

    // Determinism, including across thread counts.
    let params = PrivacyParams { seed: 77, ..Default::default() };
    let day = DateRange::single(date(2017, 4, 12));
    let exact_day = aggregate_counts(&store, 15, Some(day)).unwrap();
    let run_with = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| add_noise(&exact_day, &params).unwrap())
    };
    let (a, b, c) = (run_with(4), run_with(4), run_with(1));
    let deterministic = a == b && a == c;
    pass &= deterministic;
    notes.push(format!("fixed-seed determinism over {} cells (1 vs 4 threads): {deterministic}", a.rows.len()));

    // Noise moments over >= 10^4 cells: 60 stops x 96 blocks x 2 directions.
    let lattice_day = date(2017, 6, 6);
    let lattice_store = build_store((0..60).map(|k| tap(k as u64 + 1, 0, at(lattice_day, 9, 0, 0), k, None)));
    let truth = aggregate_counts(&lattice_store, 15, None).unwrap();
    for (mechanism, label) in [(Mechanism::Geometric, "geometric"), (Mechanism::Laplace, "laplace")] {
        let p = PrivacyParams { epsilon: 1.0, seed: 2024, mechanism, ..Default::default() };
        let noisy = add_noise(&truth, &p).unwrap();
        let noise: Vec<f64> =
            noisy.rows.iter().map(|r| r.count - truth.get(r.stop_id, r.block_start, r.direction)).collect();
        let cells = noise.len() as f64;
        let mean_abs = noise.iter().map(|x| x.abs()).sum::<f64>() / cells;
        let analytic = p.expected_abs_noise();
        let mean = noise.iter().sum::<f64>() / cells;
        let sd = (noise.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (cells - 1.0)).sqrt();
        let se = sd / cells.sqrt();
        let ok = noise.len() >= 10_000 && (mean_abs - analytic).abs() <= 0.1 * analytic && mean.abs() <= 3.0 * se;
        pass &= ok;
        notes.push(format!(
            "{label}: {} cells, mean|noise| {mean_abs:.4} vs analytic {analytic:.4}, mean {mean:+.4} (3 SE = {:.4})",
            noise.len(),
            3.0 * se
        ));
    }

    // Post-processing always yields non-negative integers.
    let mut post_cells = 0usize;
    let mut post_ok = true;
    for seed in 0..40u64 {
        for epsilon in [0.05, 0.5, 1.0, 4.0] {
            for mechanism in [Mechanism::Geometric, Mechanism::Laplace] {
                for (table, adjacency) in [
                    (&exact_day, Adjacency::EventLevel),
                    (&aggregate_counts_clamped(&store, 15, Some(day), 2).unwrap(), Adjacency::CardLevel { max_contribution: 2 }),
                ] {
                    let p = PrivacyParams { epsilon, seed, mechanism, adjacency, post_process: PostProcess::RoundAndClampToZero };
                    let noisy = add_noise(table, &p).unwrap();
                    post_cells += noisy.rows.len();
                    post_ok &= noisy.rows.iter().all(|r| r.count >= 0.0 && r.count.fract() == 0.0 && r.count.is_finite());
                }
            }
        }
    }
    pass &= post_ok;
    notes.push(format!("round-and-clamp non-negative integers over {post_cells} cells: {post_ok}"));

    Outcome { name: "release", pass, detail: notes.join("; ") }
}

// ---------------------------------------------------------------------------
// 8. CLI determinism

fn cli(args: &[&str], threads: &str) -> Result<Vec<u8>, String> {
    let out = Command::new(BIN)
        .arg("--threads")
        .arg(threads)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

/// Start `serve`, send each request, return the response bodies.
fn serve_bodies(data: &Path, threads: &str, requests: &[(&str, &str, &str)]) -> Result<Vec<String>, String> {
    let mut child = Command::new(BIN)
        .args(["--threads", threads, "serve", "--in", data.to_str().unwrap(), "--bind", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    let addr = loop {
        line.clear();
        if stderr.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            let _ = child.kill();
            return Err("server exited before listening".into());
        }
        if let Some(addr) = line.trim().strip_prefix("listening on ") {
            break addr.to_string();
        }
    };
    let mut bodies = Vec::new();
    for (method, path, body) in requests {
        let mut stream = TcpStream::connect(&addr).map_err(|e| e.to_string())?;
        stream.set_read_timeout(Some(Duration::from_secs(60))).unwrap();
        write!(
            stream,
            "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .map_err(|e| e.to_string())?;
        let mut response = String::new();
        stream.read_to_string(&mut response).map_err(|e| e.to_string())?;
        let (head, payload) = response.split_once("\r\n\r\n").ok_or("malformed response")?;
        if !head.starts_with("HTTP/1.1 2") {
            let _ = child.kill();
            return Err(format!("{method} {path}: {head}"));
        }
        bodies.push(payload.to_string());
    }
    let _ = child.kill();
    let _ = child.wait();
    Ok(bodies)
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    fs::write(
        p("pop.json"),
        r#"{"seed": 99, "commuter": 150, "touristOneWeek": 300, "seasonPassHolder": 100, "childConcession": 50,
            "parliamentarian": 3, "policePass": 10, "startDate": "2017-05-01", "endDate": "2017-05-28"}"#,
    )
    .unwrap();
    fs::write(
        p("q.json"),
        r#"[{"kind": "touchOnBetween", "date": "2017-05-09", "lo": "07:00:00", "hi": "09:30:00"}, {"kind": "minEventCount", "k": 5}]"#,
    )
    .unwrap();
    let data = p("data.csv");
    if let Err(e) = cli(&["synth", "--config", &p("pop.json"), "--out", &data], "1") {
        return Outcome { name: "CLI determinism", pass: false, detail: e };
    }
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["synth".into(), "--config".into(), p("pop.json")]),
        ("ingest", vec!["ingest".into(), "--in".into(), data.clone()]),
        ("unicity", vec!["unicity".into(), "--in".into(), data.clone(), "--seed".into(), "7".into()]),
        ("cotravel", vec!["cotravel".into(), "--in".into(), data.clone(), "--card".into(), "1".into(), "--window".into(), "600".into(), "--json".into()]),
        ("query", vec!["query".into(), "--in".into(), data.clone(), "--constraints".into(), p("q.json")]),
        ("audit gaps", vec!["audit".into(), "gaps".into(), "--in".into(), data.clone()]),
        ("audit types", vec!["audit".into(), "types".into(), "--in".into(), data.clone()]),
        ("audit timeline", vec!["audit".into(), "timeline".into(), "--in".into(), data.clone(), "--card".into(), "3".into()]),
        ("release", vec!["release".into(), "--in".into(), data.clone(), "--seed".into(), "5".into(), "--from".into(), "2017-05-08".into(), "--to".into(), "2017-05-09".into()]),
    ];
    let mut checked = Vec::new();
    let mut differing = Vec::new();
    for (name, args) in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let runs: Result<Vec<Vec<u8>>, String> = ["4", "4", "1"].iter().map(|t| cli(&args, t)).collect();
        match runs {
            Ok(r) if r[0] == r[1] && r[0] == r[2] && !r[0].is_empty() => checked.push(format!("{name} ({} B)", r[0].len())),
            Ok(_) => differing.push(name.to_string()),
            Err(e) => differing.push(format!("{name}: {e}")),
        }
    }
    let requests = [
        ("POST", "/query", r#"{"constraints": [{"kind": "minEventCount", "k": 20}]}"#),
        ("GET", "/cards/2/timeline", ""),
        ("GET", "/cards/2/cotravellers?window=600", ""),
        ("GET", "/audit/gaps?minGap=1", ""),
        ("GET", "/audit/types", ""),
        ("POST", "/release/aggregate", r#"{"period": {"from": "2017-05-08", "to": "2017-05-08"}, "privacy": {"epsilon": 1.0, "seed": 3}}"#),
    ];
    let serve: Result<Vec<Vec<String>>, String> = ["4", "4", "1"].iter().map(|t| serve_bodies(Path::new(&data), t, &requests)).collect();
    match serve {
        Ok(r) if r[0] == r[1] && r[0] == r[2] => checked.push(format!("serve ({} endpoints)", requests.len())),
        Ok(_) => differing.push("serve".into()),
        Err(e) => differing.push(format!("serve: {e}")),
    }
    Outcome {
        name: "CLI determinism",
        pass: differing.is_empty(),
        detail: format!("identical across 2 runs and 1 vs 4 threads: [{}]; differing: {differing:?}", checked.join(", ")),
    }
}

// ---------------------------------------------------------------------------

fn main() {
    let started = Instant::now();
    let mut outcomes = Vec::new();
    let mut report = |o: Outcome| {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        let _ = std::io::stdout().flush();
        outcomes.push(o.pass);
    };
    report(oracle_equivalence());
    monotonicity_suite().into_iter().for_each(&mut report);
    population_trends().into_iter().for_each(&mut report);
    report(cotravel_criterion());
    report(narrowing_criterion());
    report(gap_criterion());
    report(release_criterion());
    report(cli_determinism());
    let failed = outcomes.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} criteria lines, {} passed, {failed} failed, {:.1}s",
        outcomes.len(),
        outcomes.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
