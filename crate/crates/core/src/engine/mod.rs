//! The tick loop.
//!
//! Each tick processes living agents in ascending id order: needs accrue, an
//! activity is chosen by a fixed priority rule, movement and arrivals are
//! resolved, money changes hands. Then co-located recreation builds
//! friendships, infectious anomalies spread, end-of-day exit rules run and
//! sampled agent states are logged. All arithmetic on state is IEEE-754
//! basic operations (plus `sqrt`), so runs are bit-reproducible.
//!
//! Activity priority, highest first:
//!
//! 1. sleep window (go home, sleep)
//! 2. hunger at or above threshold (restaurant when eating from work, otherwise home)
//! 3. work schedule on weekdays
//! 4. social need at or above threshold (recreation venue from the agent's interests)
//! 5. go home / stay home
//!
//! A meal in progress is finished before any rule is consulted.

pub mod clock;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use crate::anomaly::{self, apply_anomaly, ActiveAnomaly, AnomalyError, AnomalyKind, AnomalySpec, Assignment, DecisionPoint, Override};
use crate::logsys::{LinkEvent, LogError, LogRecord, LogSink, Payload, Table};
use crate::params::{validate_params, Param, ParamSchema, SimParams, Violation};
use crate::rng::Rng;
use crate::worldmap::{PoiKind, WorldMap};

use clock::{SimClock, TICKS_PER_DAY};

pub const RESTAURANT_MEAL_COST: f64 = 5.0;
pub const HOME_MEAL_COST: f64 = 1.0;
/// Co-located recreation ticks before two agents become friends.
pub const FRIENDSHIP_TICKS: u32 = 30;
pub const SOCIAL_DECAY_IN_COMPANY: f64 = 0.01;
pub const SOCIAL_DECAY_ALONE: f64 = 0.005;
/// Consecutive end-of-day balances below the threshold before an agent leaves.
pub const EXIT_GRACE_DAYS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Home,
    Sleep,
    Work,
    Eat,
    Recreate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    AtHome,
    Sleeping,
    Working,
    Eating,
    Recreating,
    Traveling { target: u32, purpose: Purpose },
    Exited,
}

impl Activity {
    pub fn label(self) -> &'static str {
        match self {
            Activity::AtHome => "at_home",
            Activity::Sleeping => "sleeping",
            Activity::Working => "working",
            Activity::Eating => "eating",
            Activity::Recreating => "recreating",
            Activity::Traveling { .. } => "traveling",
            Activity::Exited => "exited",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeedLevels {
    pub hunger: f64,
    pub energy_deficit: f64,
    pub social: f64,
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub home: u32,
    pub work: u32,
    pub activity: Activity,
    /// Venue the agent is physically at; `None` while on the move.
    pub location: Option<u32>,
    pub needs: NeedLevels,
    pub balance: f64,
    pub friends: BTreeSet<u32>,
    pub interests: Vec<u32>,
    pub anomaly: Option<ActiveAnomaly>,
    pub meal_left: u32,
    /// Venue of the current recreation outing.
    pub rec_target: Option<u32>,
    /// `(day, skip)` once a work anomaly has decided the day's plan.
    pub work_plan: Option<(u32, bool)>,
    pub days_below: u32,
    pub working_ticks: u64,
    pub restaurant_meals: u32,
    pub home_meals: u32,
}

impl Agent {
    pub fn exited(&self) -> bool {
        self.activity == Activity::Exited
    }
}

/// Parameter vector unpacked into the units the engine works in.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Behavior {
    joviality: f64,
    num_interests: usize,
    step_m: f64,
    hunger_growth: f64,
    hunger_threshold: f64,
    meal_ticks: u32,
    energy_growth: f64,
    sleep_start_min: f64,
    sleep_len_min: f64,
    work_start_min: f64,
    work_len_min: f64,
    income: f64,
    rent: f64,
    rent_ratio: f64,
    social_growth: f64,
    social_threshold: f64,
    exit_enabled: bool,
}

impl Behavior {
    pub(crate) fn from_params(p: &SimParams) -> Self {
        Behavior {
            joviality: p.get(Param::Joviality),
            num_interests: p.get(Param::NumInterests) as usize,
            step_m: p.get(Param::WalkSpeedMps) * clock::TICK_SECONDS as f64,
            hunger_growth: p.get(Param::HungerGrowthPerTick),
            hunger_threshold: p.get(Param::HungerThreshold),
            meal_ticks: p.get(Param::MealDurationTicks) as u32,
            energy_growth: p.get(Param::EnergyGrowthPerTick),
            sleep_start_min: p.get(Param::SleepStartHour) * 60.0,
            sleep_len_min: p.get(Param::SleepDurationHours) * 60.0,
            work_start_min: p.get(Param::WorkStartHour) * 60.0,
            work_len_min: p.get(Param::WorkDurationHours) * 60.0,
            income: p.get(Param::IncomePerWorkTick),
            rent: p.get(Param::RentPerDay),
            rent_ratio: p.get(Param::RentCostRatio),
            social_growth: p.get(Param::SocialGrowthPerTick),
            social_threshold: p.get(Param::SocialThreshold),
            exit_enabled: p.get(Param::ExitEnabled) != 0.0,
        }
    }

    fn in_sleep_window(&self, c: SimClock) -> bool {
        let rel = (c.minute_of_day() as f64 - self.sleep_start_min).rem_euclid(TICKS_PER_DAY as f64);
        rel < self.sleep_len_min
    }

    fn in_work_window(&self, c: SimClock) -> bool {
        let m = c.minute_of_day() as f64;
        c.is_weekday() && m >= self.work_start_min && m < self.work_start_min + self.work_len_min
    }

    /// Social level at which a recreation outing ends.
    fn social_leave_level(&self) -> f64 {
        self.social_threshold * (1.0 - self.joviality)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("a world needs at least one agent")]
    NoAgents,
    #[error("invalid parameters: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Params(Vec<Violation>),
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("writing {table} at tick {tick} failed: {source}")]
    Sink { table: Table, tick: u64, source: LogError },
    #[error("checkpoint at tick {tick} failed: {msg}")]
    Checkpoint { tick: u64, msg: String },
}

/// Complete mutable simulation state.
#[derive(Debug, Clone)]
pub struct SimWorld {
    pub(crate) params: SimParams,
    pub(crate) beh: Behavior,
    pub(crate) map: Arc<WorldMap>,
    pub(crate) tick: u64,
    pub(crate) rng: Rng,
    pub(crate) agents: Vec<Agent>,
    /// Co-located recreation ticks per unordered pair `(a, b)`, `a < b`.
    pub(crate) colocation: BTreeMap<(u32, u32), u32>,
    pub(crate) occupancy: Vec<u32>,
    pub(crate) anomalies: Vec<AnomalySpec>,
    episodes: Vec<Vec<(u64, u64)>>,
}

impl SimWorld {
    /// Builds the initial world: homes and workplaces assigned round-robin
    /// over seeded shuffles, interests sampled without replacement, needs
    /// uniform in `[0, 0.3]`, balance `rent / rent_cost_ratio`, everyone at home.
    pub fn new(params: SimParams, map: Arc<WorldMap>) -> Result<Self, EngineError> {
        if params.num_agents < 1 {
            return Err(EngineError::NoAgents);
        }
        validate_params(&params, &ParamSchema::builtin()).map_err(EngineError::Params)?;
        let beh = Behavior::from_params(&params);
        let mut rng = Rng::seed_from(params.seed);
        let mut homes = map.ids_of(PoiKind::Home).to_vec();
        let mut works = map.ids_of(PoiKind::Workplace).to_vec();
        rng.shuffle(&mut homes);
        rng.shuffle(&mut works);
        let recreation = map.ids_of(PoiKind::Recreation);
        let initial_balance = beh.rent / beh.rent_ratio;
        let agents = (0..params.num_agents)
            .map(|id| {
                let home = homes[id as usize % homes.len()];
                let work = works[id as usize % works.len()];
                let interests = rng.sample(recreation, beh.num_interests);
                let needs = NeedLevels {
                    hunger: rng.range_f64(0.0, 0.3),
                    energy_deficit: rng.range_f64(0.0, 0.3),
                    social: rng.range_f64(0.0, 0.3),
                };
                let p = map.poi(home);
                Agent {
                    id,
                    x: p.x,
                    y: p.y,
                    home,
                    work,
                    activity: Activity::AtHome,
                    location: Some(home),
                    needs,
                    balance: initial_balance,
                    friends: BTreeSet::new(),
                    interests,
                    anomaly: None,
                    meal_left: 0,
                    rec_target: None,
                    work_plan: None,
                    days_below: 0,
                    working_ticks: 0,
                    restaurant_meals: 0,
                    home_meals: 0,
                }
            })
            .collect();
        let occupancy = vec![0; map.pois().len()];
        Ok(SimWorld {
            params,
            beh,
            map,
            tick: 0,
            rng,
            agents,
            colocation: BTreeMap::new(),
            occupancy,
            anomalies: Vec::new(),
            episodes: Vec::new(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        params: SimParams,
        map: Arc<WorldMap>,
        tick: u64,
        rng: Rng,
        agents: Vec<Agent>,
        colocation: BTreeMap<(u32, u32), u32>,
        anomalies: Vec<AnomalySpec>,
    ) -> Self {
        let beh = Behavior::from_params(&params);
        let mut occupancy = vec![0; map.pois().len()];
        for a in &agents {
            if let (Activity::Recreating, Some(loc)) = (a.activity, a.location) {
                occupancy[loc as usize] += 1;
            }
        }
        let episodes = anomalies.iter().map(|s| s.episodes()).collect();
        SimWorld { params, beh, map, tick, rng, agents, colocation, occupancy, anomalies, episodes }
    }

    /// Installs the anomaly schedule. Episodes that started before the current
    /// tick are not replayed.
    pub fn set_anomalies(&mut self, specs: Vec<AnomalySpec>) -> Result<(), EngineError> {
        for s in &specs {
            s.validate(&self.map, self.params.num_days)?;
        }
        self.episodes = specs.iter().map(|s| s.episodes()).collect();
        self.anomalies = specs;
        Ok(())
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    /// Replaces behavioural parameters mid-run. Structural fields must not change.
    pub(crate) fn set_params(&mut self, params: SimParams) {
        self.beh = Behavior::from_params(&params);
        self.params = params;
    }

    pub fn map(&self) -> &Arc<WorldMap> {
        &self.map
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn clock(&self) -> SimClock {
        SimClock::new(self.tick)
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [Agent] {
        &mut self.agents
    }

    pub fn anomalies(&self) -> &[AnomalySpec] {
        &self.anomalies
    }

    pub fn rng_state(&self) -> [u64; 4] {
        self.rng.state()
    }

    pub fn horizon(&self) -> u64 {
        self.params.num_days as u64 * TICKS_PER_DAY
    }

    pub fn finished(&self) -> bool {
        self.tick >= self.horizon()
    }

    pub fn exited_count(&self) -> u32 {
        self.agents.iter().filter(|a| a.exited()).count() as u32
    }

    /// Advances one tick and returns the records it produced, grouped by
    /// table and ordered by agent id within each table.
    pub fn step(&mut self) -> Vec<LogRecord> {
        let clock = self.clock();
        let tick = self.tick;
        let mut out = Vec::new();

        for a in self.agents.iter_mut() {
            if a.anomaly.is_some_and(|an| tick >= an.end_tick) {
                a.anomaly = None;
            }
        }
        for (i, spec) in self.anomalies.iter().enumerate() {
            for &(start, end) in &self.episodes[i] {
                if start == tick {
                    anomaly::assign_anomalies(&mut self.agents, i as u32, spec, end, tick, &mut self.rng, &mut out);
                }
            }
        }

        let mut ctx = TickCtx {
            clock,
            beh: &self.beh,
            map: &self.map,
            rng: &mut self.rng,
            occupancy: &mut self.occupancy,
            anomalies: &self.anomalies,
            out: &mut out,
        };
        for agent in self.agents.iter_mut() {
            if !agent.exited() {
                ctx.tick_agent(agent);
            }
        }

        self.social_phase(&mut out);

        for (i, spec) in self.anomalies.iter().enumerate() {
            if let Assignment::Infectious { transmit_prob, .. } = spec.assignment {
                let (s, e) = spec.window();
                if tick >= s && tick < e {
                    anomaly::spread_infection(&mut self.agents, i as u32, transmit_prob, spec, tick, &mut self.rng, &mut out);
                }
            }
        }

        if self.beh.exit_enabled && clock.is_day_end() {
            for a in self.agents.iter_mut().filter(|a| !a.exited()) {
                if check_exit(a, &self.params, clock) {
                    if let (Activity::Recreating, Some(loc)) = (a.activity, a.location) {
                        self.occupancy[loc as usize] -= 1;
                    }
                    a.activity = Activity::Exited;
                    a.location = None;
                }
            }
        }

        if tick % self.params.sample_interval as u64 == 0 {
            for a in self.agents.iter().filter(|a| !a.exited()) {
                out.push(LogRecord {
                    tick,
                    payload: Payload::AgentState {
                        agent_id: a.id,
                        x: a.x,
                        y: a.y,
                        activity: a.activity.label(),
                        hunger: a.needs.hunger,
                        energy_deficit: a.needs.energy_deficit,
                        social: a.needs.social,
                        balance: a.balance,
                    },
                });
            }
        }

        out.sort_by_key(record_order_key);
        self.tick += 1;
        out
    }

    fn social_phase(&mut self, out: &mut Vec<LogRecord>) {
        let mut venues: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for a in &self.agents {
            if let (Activity::Recreating, Some(loc)) = (a.activity, a.location) {
                venues.entry(loc).or_default().push(a.id);
            }
        }
        for ids in venues.values() {
            let company = ids.len() >= 2;
            if company {
                for (k, &p) in ids.iter().enumerate() {
                    for &q in &ids[k + 1..] {
                        if self.agents[p as usize].friends.contains(&q) {
                            continue;
                        }
                        let c = self.colocation.entry((p, q)).or_insert(0);
                        *c += 1;
                        if *c >= FRIENDSHIP_TICKS {
                            self.colocation.remove(&(p, q));
                            self.agents[p as usize].friends.insert(q);
                            self.agents[q as usize].friends.insert(p);
                            out.push(LogRecord {
                                tick: self.tick,
                                payload: Payload::SocialLink { agent_a: p, agent_b: q, event: LinkEvent::Create },
                            });
                        }
                    }
                }
            }
            let decay = if company { SOCIAL_DECAY_IN_COMPANY } else { SOCIAL_DECAY_ALONE };
            for &id in ids {
                let n = &mut self.agents[id as usize].needs;
                n.social = clamp01(n.social - decay);
            }
        }
    }
}

fn record_order_key(r: &LogRecord) -> (usize, u32, u32) {
    let (a, b) = match r.payload {
        Payload::AgentState { agent_id, .. } | Payload::CheckIn { agent_id, .. } | Payload::GroundTruth { agent_id, .. } => {
            (agent_id, 0)
        }
        Payload::SocialLink { agent_a, agent_b, .. } => (agent_a, agent_b),
    };
    (r.table().index(), a, b)
}

/// End-of-day exit bookkeeping. Returns true once the balance has been below
/// `exit_balance_threshold` at [`EXIT_GRACE_DAYS`] consecutive day ends.
/// Calls on ticks other than the last of a day change nothing.
pub fn check_exit(agent: &mut Agent, params: &SimParams, clock: SimClock) -> bool {
    if !clock.is_day_end() {
        return agent.days_below >= EXIT_GRACE_DAYS;
    }
    if agent.balance < params.get(Param::ExitBalanceThreshold) {
        agent.days_below += 1;
    } else {
        agent.days_below = 0;
    }
    agent.days_below >= EXIT_GRACE_DAYS
}

struct TickCtx<'a> {
    clock: SimClock,
    beh: &'a Behavior,
    map: &'a WorldMap,
    rng: &'a mut Rng,
    occupancy: &'a mut [u32],
    anomalies: &'a [AnomalySpec],
    out: &'a mut Vec<LogRecord>,
}

impl TickCtx<'_> {
    fn tick_agent(&mut self, a: &mut Agent) {
        let tick = self.clock.tick;
        if self.clock.is_day_start() {
            a.balance -= self.beh.rent;
        }

        // needs
        let boost = match apply_anomaly(a.anomaly.as_ref(), DecisionPoint::NeedAccrual, tick, self.rng) {
            Some(Override::HungerGrowth(m)) => m,
            _ => 1.0,
        };
        a.needs.hunger = clamp01(a.needs.hunger + self.beh.hunger_growth * boost);
        if a.activity != Activity::Sleeping {
            a.needs.energy_deficit = clamp01(a.needs.energy_deficit + self.beh.energy_growth);
        }
        a.needs.social = clamp01(a.needs.social + self.beh.social_growth);

        let day = self.clock.day() as u32;
        if a.anomaly.is_some_and(|an| an.kind == AnomalyKind::Work && an.covers(tick))
            && a.work_plan.map(|(d, _)| d) != Some(day)
        {
            let skip = apply_anomaly(a.anomaly.as_ref(), DecisionPoint::DayWorkPlan, tick, self.rng).is_some();
            a.work_plan = Some((day, skip));
        }

        let mut meal_running = false;
        if a.activity == Activity::Eating {
            a.meal_left = a.meal_left.saturating_sub(1);
            if a.meal_left > 0 {
                meal_running = true;
            } else {
                a.needs.hunger = 0.0;
            }
        }
        if !meal_running {
            let (target, purpose) = self.decide(a);
            self.pursue(a, target, purpose);
        }

        if a.activity == Activity::Sleeping {
            a.needs.energy_deficit = clamp01(a.needs.energy_deficit - 1.0 / self.beh.sleep_len_min);
        }
        if a.activity == Activity::Working {
            a.balance += self.beh.income;
            a.working_ticks += 1;
        }
    }

    fn decide(&mut self, a: &mut Agent) -> (u32, Purpose) {
        let beh = self.beh;
        if beh.in_sleep_window(self.clock) {
            return (a.home, Purpose::Sleep);
        }
        if a.needs.hunger >= beh.hunger_threshold {
            if let Activity::Traveling { target, purpose: Purpose::Eat } = a.activity {
                return (target, Purpose::Eat);
            }
            let venue = if a.activity == Activity::Working {
                self.map.nearest_poi(a.x, a.y, PoiKind::Restaurant).id
            } else {
                a.home
            };
            return (venue, Purpose::Eat);
        }
        let skipping = a.work_plan == Some((self.clock.day() as u32, true));
        if beh.in_work_window(self.clock) && !skipping {
            return (a.work, Purpose::Work);
        }
        let on_outing = a.rec_target.is_some()
            && matches!(a.activity, Activity::Recreating | Activity::Traveling { purpose: Purpose::Recreate, .. });
        if on_outing && a.needs.social > beh.social_leave_level() {
            return (a.rec_target.expect("outing has a venue"), Purpose::Recreate);
        }
        if !on_outing && a.needs.social >= beh.social_threshold {
            if let Some(v) = self.choose_recreation(a) {
                a.rec_target = Some(v);
                return (v, Purpose::Recreate);
            }
        }
        (a.home, Purpose::Home)
    }

    /// Uniform pick among the agent's interests (or, under a firing social
    /// anomaly, among all recreation venues) that are not full right now.
    fn choose_recreation(&mut self, a: &Agent) -> Option<u32> {
        let random = matches!(
            apply_anomaly(a.anomaly.as_ref(), DecisionPoint::RecreationChoice, self.clock.tick, self.rng),
            Some(Override::RandomRecreation)
        );
        let pool: &[u32] = if random { self.map.ids_of(PoiKind::Recreation) } else { &a.interests };
        let open: Vec<u32> =
            pool.iter().copied().filter(|&v| self.occupancy[v as usize] < self.map.poi(v).capacity).collect();
        if open.is_empty() {
            return None;
        }
        Some(open[self.rng.index(open.len())])
    }

    fn set_activity(&mut self, a: &mut Agent, next: Activity) {
        if a.activity == Activity::Recreating && next != Activity::Recreating {
            if let Some(loc) = a.location {
                self.occupancy[loc as usize] -= 1;
            }
        }
        if next == Activity::Recreating && a.activity != Activity::Recreating {
            let loc = a.location.expect("recreation starts at a venue");
            self.occupancy[loc as usize] += 1;
        }
        a.activity = next;
    }

    fn pursue(&mut self, a: &mut Agent, target: u32, purpose: Purpose) {
        if purpose != Purpose::Recreate {
            a.rec_target = None;
        }
        if a.location == Some(target) {
            self.begin(a, target, purpose, false);
            return;
        }
        self.set_activity(a, Activity::Traveling { target, purpose });
        a.location = None;
        let venue = self.map.poi(target);
        let (dx, dy) = (venue.x - a.x, venue.y - a.y);
        let dist = (dx * dx + dy * dy).sqrt();
        if dist <= self.beh.step_m {
            a.x = venue.x;
            a.y = venue.y;
            a.location = Some(target);
            self.on_arrival(a, target);
            self.begin(a, target, purpose, true);
        } else {
            a.x += dx / dist * self.beh.step_m;
            a.y += dy / dist * self.beh.step_m;
        }
    }

    fn on_arrival(&mut self, a: &mut Agent, venue: u32) {
        let tick = self.clock.tick;
        for (i, spec) in self.anomalies.iter().enumerate() {
            if let Assignment::Location { poi } = spec.assignment {
                let (s, e) = spec.window();
                if poi == venue && tick >= s && tick < e {
                    self.out.extend(anomaly::flag(a, i as u32, spec, tick, e));
                }
            }
        }
    }

    fn check_in(&mut self, a: &Agent, venue: u32) {
        self.out.push(LogRecord {
            tick: self.clock.tick,
            payload: Payload::CheckIn { agent_id: a.id, venue_id: venue, venue_kind: self.map.poi(venue).kind },
        });
    }

    fn begin(&mut self, a: &mut Agent, venue: u32, purpose: Purpose, arrived: bool) {
        let next = match purpose {
            Purpose::Home => Activity::AtHome,
            Purpose::Sleep => Activity::Sleeping,
            Purpose::Work => Activity::Working,
            Purpose::Eat => {
                a.meal_left = self.beh.meal_ticks;
                if self.map.poi(venue).kind == PoiKind::Restaurant {
                    a.balance -= RESTAURANT_MEAL_COST;
                    a.restaurant_meals += 1;
                } else {
                    a.balance -= HOME_MEAL_COST;
                    a.home_meals += 1;
                }
                if !arrived {
                    // a meal started in place still counts as a visit
                    self.check_in(a, venue);
                }
                Activity::Eating
            }
            Purpose::Recreate => {
                if a.activity != Activity::Recreating && self.occupancy[venue as usize] >= self.map.poi(venue).capacity {
                    // full: give up the outing and head home
                    a.rec_target = None;
                    self.set_activity(a, Activity::Traveling { target: a.home, purpose: Purpose::Home });
                    return;
                }
                Activity::Recreating
            }
        };
        self.set_activity(a, next);
        if arrived {
            self.check_in(a, venue);
        }
    }
}

/// Ticks executed and records written by [`run_world`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Progress {
    pub ticks: u64,
    pub records: [u64; 4],
}

/// Steps `world` until `until_tick` (exclusive, capped at the horizon),
/// writing every record to `sink`. `between_ticks` runs after each tick.
pub fn run_world<S: LogSink + ?Sized>(
    world: &mut SimWorld,
    sink: &mut S,
    until_tick: Option<u64>,
    mut between_ticks: impl FnMut(&SimWorld, &S) -> Result<(), RunError>,
) -> Result<Progress, RunError> {
    let end = until_tick.map_or(world.horizon(), |u| u.min(world.horizon()));
    let mut progress = Progress::default();
    while world.tick < end {
        let tick = world.tick;
        for rec in world.step() {
            sink.write(&rec).map_err(|source| RunError::Sink { table: rec.table(), tick, source })?;
            progress.records[rec.table().index()] += 1;
        }
        progress.ticks += 1;
        between_ticks(world, sink)?;
    }
    sink.flush().map_err(|source| RunError::Sink { table: source.table(), tick: world.tick, source })?;
    Ok(progress)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub ticks_executed: u64,
    pub agents_exited: u32,
    pub records: [u64; 4],
    pub init_secs: f64,
    pub sim_secs: f64,
}

/// Initialises a world and runs it to the horizon (or `until_tick`).
pub fn run<S: LogSink + ?Sized>(
    params: SimParams,
    map: Arc<WorldMap>,
    anomalies: Vec<AnomalySpec>,
    sink: &mut S,
    until_tick: Option<u64>,
) -> Result<RunSummary, RunError> {
    let t0 = Instant::now();
    let mut world = SimWorld::new(params, map)?;
    world.set_anomalies(anomalies)?;
    let init_secs = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let progress = run_world(&mut world, sink, until_tick, |_, _| Ok(()))?;
    Ok(RunSummary {
        ticks_executed: progress.ticks,
        agents_exited: world.exited_count(),
        records: progress.records,
        init_secs,
        sim_secs: t1.elapsed().as_secs_f64(),
    })
}
