//! Discrete-event simulation of fork-join access.
//!
//! Every request forks one copy to its systematic server and one sub-copy to
//! each server of each recovery group. Servers run FCFS queues with
//! exponential service. A request completes as soon as one route finishes
//! (its systematic copy, or every sub-copy of one group) and its other copies
//! are removed at no cost, including the ones in service.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::TypeFrequencies;
use crate::dist::{enumerate_types, ServiceTypeVector};
use crate::error::{Error, Result};
use crate::layout::{validate_layout, MdsCode, PopularityVector, StorageLayout};
use crate::par::{self, Execution};
use crate::stats::{empirical_ccdf as ccdf_of, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Mode {
    /// General access: objects drawn from the popularity vector.
    Ga,
    /// Fixed access: every request asks for object 0.
    Fa,
    /// Split-Merge: one request in service at a time.
    Sm,
    /// Fast-Split-Merge: the head request is served at the aggregate rate.
    Fsm,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ga" => Ok(Mode::Ga),
            "fa" => Ok(Mode::Fa),
            "sm" => Ok(Mode::Sm),
            "fsm" => Ok(Mode::Fsm),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// What a request forks to.
#[derive(Debug, Clone, PartialEq)]
pub enum AccessScheme {
    /// Systematic server plus `t` recovery groups of an availability layout.
    Layout(StorageLayout),
    /// Systematic server plus any `k` of the other `n - 1` servers.
    Mds(MdsCode),
}

#[derive(Debug, Clone, PartialEq)]
struct Route {
    servers: Vec<usize>,
    need: usize,
}

impl AccessScheme {
    pub fn n(&self) -> usize {
        match self {
            AccessScheme::Layout(l) => l.n(),
            AccessScheme::Mds(m) => m.n,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            AccessScheme::Layout(l) => l.k(),
            AccessScheme::Mds(m) => m.k,
        }
    }

    /// Locality and availability when the scheme has recovery groups.
    pub fn r_t(&self) -> Option<(usize, usize)> {
        match self {
            AccessScheme::Layout(l) => Some((l.r(), l.t())),
            AccessScheme::Mds(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            AccessScheme::Layout(l) => l.label(),
            AccessScheme::Mds(m) => format!("({},{})-MDS", m.n, m.k),
        }
    }

    fn routes(&self, object: usize) -> Vec<Route> {
        match self {
            AccessScheme::Layout(l) => {
                let p = &l.objects[object];
                std::iter::once(Route {
                    servers: vec![p.systematic],
                    need: 1,
                })
                .chain(p.groups.iter().map(|g| Route {
                    servers: g.clone(),
                    need: g.len(),
                }))
                .collect()
            }
            AccessScheme::Mds(m) => vec![
                Route {
                    servers: vec![object],
                    need: 1,
                },
                Route {
                    servers: (0..m.n).filter(|&s| s != object).collect(),
                    need: m.k,
                },
            ],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AccessScheme::Layout(l) => Ok(validate_layout(l)?),
            AccessScheme::Mds(m) => MdsCode::new(m.n, m.k).map(|_| ()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mode: Mode,
    pub scheme: AccessScheme,
    /// Object popularity for GA, SM and FSM; uniform when absent.
    pub popularity: Option<PopularityVector>,
    pub lambda: f64,
    pub server_rates: Vec<f64>,
    pub n_arrivals: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub max_backlog: usize,
    pub ccdf_grid: Vec<f64>,
    pub trace: bool,
    /// Checks the structural invariants of the FCFS network after every
    /// event (slow; used by tests).
    pub check_invariants: bool,
}

impl SimConfig {
    pub fn new(mode: Mode, scheme: AccessScheme, lambda: f64, mu: f64) -> Self {
        let n = scheme.n();
        SimConfig {
            mode,
            scheme,
            popularity: None,
            lambda,
            server_rates: vec![mu; n],
            n_arrivals: 100_000,
            warmup_fraction: 0.2,
            seed: 1,
            max_backlog: 100_000,
            ccdf_grid: Vec::new(),
            trace: false,
            check_invariants: false,
        }
    }

    pub fn with_arrivals(mut self, n: usize) -> Self {
        self.n_arrivals = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rates(mut self, rates: Vec<f64>) -> Self {
        self.server_rates = rates;
        self
    }

    pub fn with_popularity(mut self, p: PopularityVector) -> Self {
        self.popularity = Some(p);
        self
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.ccdf_grid = grid;
        self
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.trace = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.n_arrivals < 1 {
            return Err(Error::invalid("n_arrivals must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup fraction must lie in [0, 1)"));
        }
        if self.server_rates.len() != self.scheme.n() {
            return Err(Error::invalid(format!(
                "{} server rates for {} servers",
                self.server_rates.len(),
                self.scheme.n()
            )));
        }
        if let Some(r) = self.server_rates.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid(format!("server rate {r} must be > 0")));
        }
        if let Some(p) = &self.popularity {
            if p.len() != self.scheme.k() {
                return Err(Error::invalid(format!(
                    "popularity has {} entries for {} objects",
                    p.len(),
                    self.scheme.k()
                )));
            }
        }
        Ok(())
    }

    fn warmup_count(&self) -> usize {
        (self.warmup_fraction * self.n_arrivals as f64).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Winner {
    Systematic,
    /// Recovery group (or the MDS parity route) by index.
    Group(usize),
}

impl Winner {
    fn from_route(b: usize) -> Self {
        if b == 0 {
            Winner::Systematic
        } else {
            Winner::Group(b - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRecord {
    pub arrival: f64,
    pub object: usize,
    /// Epoch at which every remaining copy is in service (FA, SM).
    pub hol_epoch: Option<f64>,
    pub departure: f64,
    /// Service type observed at the HoL epoch (FA with recovery groups).
    pub service_type: Option<ServiceTypeVector>,
    pub winner: Winner,
}

impl RequestRecord {
    pub fn sojourn(&self) -> f64 {
        self.departure - self.arrival
    }
}

/// Per-replication summary kept inside an aggregated result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mean_t: f64,
    pub ws: f64,
    pub type_frequencies: Option<Vec<f64>>,
    pub ccdf: Vec<f64>,
    pub completed: usize,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub mode: Mode,
    /// Mean download time; the half-width comes from batch means for a
    /// single run and from replication means after [`replicate`].
    pub mean_t: Estimate,
    pub ccdf_grid: Vec<f64>,
    pub ccdf: Vec<f64>,
    pub type_counts: Option<Vec<u64>>,
    pub type_frequencies: Option<TypeFrequencies>,
    /// Fraction of completions by the systematic server.
    pub ws: f64,
    /// Fraction of completions by a recovery route.
    pub wr: f64,
    pub utilization: Vec<f64>,
    pub aborted: bool,
    pub completed: usize,
    #[serde(skip)]
    pub samples: Vec<f64>,
    #[serde(skip)]
    pub trace: Option<Vec<RequestRecord>>,
    pub invariant_violations: usize,
    pub runs: Vec<RunSummary>,
}

impl SimResult {
    pub fn summary(&self, seed: u64) -> RunSummary {
        RunSummary {
            seed,
            mean_t: self.mean_t.mean,
            ws: self.ws,
            type_frequencies: self.type_frequencies.as_ref().map(|f| f.as_slice().to_vec()),
            ccdf: self.ccdf.clone(),
            completed: self.completed,
            aborted: self.aborted,
        }
    }
}

// ---------------------------------------------------------------------------
// Event machinery

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Arrival,
    Completion { server: usize, generation: u64 },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so that BinaryHeap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

fn exp_sample(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CopyState {
    Queued,
    InService,
    Done,
    Cancelled,
}

#[derive(Debug, Clone)]
struct CopyRef {
    server: usize,
    route: usize,
    state: CopyState,
}

#[derive(Debug, Clone)]
struct Request {
    arrival: f64,
    object: usize,
    copies: Vec<CopyRef>,
    remaining: Vec<usize>,
    initial: Vec<usize>,
    waiting: usize,
    done: bool,
    hol: Option<f64>,
    hol_type: Option<ServiceTypeVector>,
}

struct Server {
    rate: f64,
    rng: ChaCha8Rng,
    queue: VecDeque<(usize, usize)>,
    live: usize,
    current: Option<(usize, usize)>,
    generation: u64,
    busy_since: f64,
    busy_total: f64,
}

/// Accumulates statistics over completed requests.
struct Collector {
    warmup: usize,
    samples: Vec<f64>,
    systematic_wins: u64,
    type_index: Option<(usize, Vec<ServiceTypeVector>)>,
    type_counts: Vec<u64>,
    trace: Option<Vec<RequestRecord>>,
}

impl Collector {
    fn new(config: &SimConfig) -> Self {
        let type_index = match (config.mode, config.scheme.r_t()) {
            (Mode::Fa, Some((r, t))) => Some((r, enumerate_types(r, t))),
            _ => None,
        };
        let n_types = type_index.as_ref().map_or(0, |(_, v)| v.len());
        Collector {
            warmup: config.warmup_count(),
            samples: Vec::with_capacity(config.n_arrivals),
            systematic_wins: 0,
            type_index,
            type_counts: vec![0; n_types],
            trace: config.trace.then(Vec::new),
        }
    }

    fn record(&mut self, id: usize, rec: RequestRecord) {
        if id >= self.warmup {
            self.samples.push(rec.sojourn());
            if rec.winner == Winner::Systematic {
                self.systematic_wins += 1;
            }
            if let (Some((_, types)), Some(nu)) = (&self.type_index, &rec.service_type) {
                if let Some(i) = types.iter().position(|x| x == nu) {
                    self.type_counts[i] += 1;
                }
            }
        }
        if let Some(tr) = self.trace.as_mut() {
            tr.push(rec);
        }
    }

    fn finish(self, config: &SimConfig, utilization: Vec<f64>, aborted: bool, violations: usize) -> SimResult {
        let completed = self.samples.len();
        let mean = if completed > 0 {
            self.samples.iter().sum::<f64>() / completed as f64
        } else {
            f64::NAN
        };
        let batches = 20;
        let half_width = if completed >= 2 * batches {
            let size = completed / batches;
            let means: Vec<f64> = (0..batches)
                .map(|b| self.samples[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
                .collect();
            Estimate::from_samples(&means).map_or(f64::INFINITY, |e| e.half_width)
        } else {
            f64::INFINITY
        };
        let ws = if completed > 0 {
            self.systematic_wins as f64 / completed as f64
        } else {
            f64::NAN
        };
        let (type_counts, type_frequencies) = match (&self.type_index, config.scheme.r_t()) {
            (Some(_), Some((r, t))) => {
                let counts: Vec<f64> = self.type_counts.iter().map(|&c| c as f64).collect();
                (
                    Some(self.type_counts.clone()),
                    TypeFrequencies::from_counts(r, t, &counts).ok(),
                )
            }
            _ => (None, None),
        };
        let ccdf = if completed > 0 {
            ccdf_of(&self.samples, &config.ccdf_grid)
        } else {
            vec![f64::NAN; config.ccdf_grid.len()]
        };
        let mut result = SimResult {
            mode: config.mode,
            mean_t: Estimate { mean, half_width, n: 1 },
            ccdf_grid: config.ccdf_grid.clone(),
            ccdf,
            type_counts,
            type_frequencies,
            ws,
            wr: 1.0 - ws,
            utilization,
            aborted,
            completed,
            samples: self.samples,
            trace: self.trace,
            invariant_violations: violations,
            runs: Vec::new(),
        };
        result.runs.push(result.summary(config.seed));
        result
    }
}

fn object_sampler(config: &SimConfig) -> Vec<f64> {
    let k = config.scheme.k();
    let p = config
        .popularity
        .clone()
        .unwrap_or_else(|| PopularityVector::uniform(k));
    let mut acc = 0.0;
    p.as_slice()
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

fn draw_object(config: &SimConfig, cumulative: &[f64], rng: &mut ChaCha8Rng) -> usize {
    if config.mode == Mode::Fa {
        return 0;
    }
    let u: f64 = rng.random();
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

/// The fork-join network for GA and FA.
struct Network<'a> {
    config: &'a SimConfig,
    now: f64,
    seq: u64,
    events: BinaryHeap<Event>,
    servers: Vec<Server>,
    window: VecDeque<Request>,
    base: usize,
    last_departed: Option<usize>,
    violations: usize,
}

impl<'a> Network<'a> {
    fn new(config: &'a SimConfig) -> Self {
        let servers = config
            .server_rates
            .iter()
            .enumerate()
            .map(|(i, &rate)| Server {
                rate,
                rng: stream(config.seed, i as u64 + 1),
                queue: VecDeque::new(),
                live: 0,
                current: None,
                generation: 0,
                busy_since: 0.0,
                busy_total: 0.0,
            })
            .collect();
        Network {
            config,
            now: 0.0,
            seq: 0,
            events: BinaryHeap::new(),
            servers,
            window: VecDeque::new(),
            base: 0,
            last_departed: None,
            violations: 0,
        }
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn req(&mut self, id: usize) -> Option<&mut Request> {
        if id < self.base {
            return None;
        }
        self.window.get_mut(id - self.base)
    }

    fn arrive(&mut self, id: usize, object: usize) {
        let routes = self.config.scheme.routes(object);
        let mut copies = Vec::new();
        for (b, route) in routes.iter().enumerate() {
            for &s in &route.servers {
                copies.push(CopyRef {
                    server: s,
                    route: b,
                    state: CopyState::Queued,
                });
            }
        }
        let need: Vec<usize> = routes.iter().map(|r| r.need).collect();
        let servers: Vec<usize> = copies.iter().map(|c| c.server).collect();
        self.window.push_back(Request {
            arrival: self.now,
            object,
            waiting: copies.len(),
            copies,
            remaining: need.clone(),
            initial: need,
            done: false,
            hol: None,
            hol_type: None,
        });
        for (ci, &s) in servers.iter().enumerate() {
            self.servers[s].queue.push_back((id, ci));
            self.servers[s].live += 1;
        }
        for &s in &servers {
            self.start(s);
        }
    }

    /// Starts the next live copy at an idle server.
    fn start(&mut self, s: usize) {
        if self.servers[s].current.is_some() {
            return;
        }
        while let Some((id, ci)) = self.servers[s].queue.pop_front() {
            let now = self.now;
            let fa = self.config.mode == Mode::Fa;
            let (r, t) = self.config.scheme.r_t().unwrap_or((0, 0));
            let Some(req) = self.req(id) else { continue };
            if req.done || req.copies[ci].state != CopyState::Queued {
                continue;
            }
            req.copies[ci].state = CopyState::InService;
            req.waiting -= 1;
            if req.waiting == 0 && req.hol.is_none() {
                req.hol = Some(now);
                if fa && t > 0 {
                    let d: Vec<usize> = (1..req.initial.len())
                        .map(|b| req.initial[b] - req.remaining[b])
                        .collect();
                    req.hol_type = ServiceTypeVector::from_departures(&d, r).ok();
                }
            }
            let server = &mut self.servers[s];
            server.live -= 1;
            server.current = Some((id, ci));
            server.busy_since = now;
            let dur = exp_sample(&mut server.rng, server.rate);
            let generation = server.generation;
            self.push(now + dur, EventKind::Completion { server: s, generation });
            return;
        }
    }

    fn stop_service(&mut self, s: usize) {
        let server = &mut self.servers[s];
        server.busy_total += self.now - server.busy_since;
        server.current = None;
        server.generation += 1;
    }

    fn complete(&mut self, s: usize, generation: u64, collector: &mut Collector) {
        if self.servers[s].generation != generation {
            return;
        }
        let (id, ci) = self.servers[s].current.expect("completion of an idle server");
        self.stop_service(s);
        let req = self.req(id).expect("in-service copy of a live request");
        req.copies[ci].state = CopyState::Done;
        let b = req.copies[ci].route;
        req.remaining[b] -= 1;
        if req.remaining[b] == 0 {
            self.depart(id, b, collector);
        }
        self.start(s);
    }

    fn depart(&mut self, id: usize, route: usize, collector: &mut Collector) {
        let now = self.now;
        let req = self.req(id).expect("departing request is live");
        req.done = true;
        let mut touched = Vec::new();
        let mut queued = Vec::new();
        for c in req.copies.iter_mut() {
            match c.state {
                CopyState::Queued => {
                    c.state = CopyState::Cancelled;
                    queued.push(c.server);
                }
                CopyState::InService => {
                    c.state = CopyState::Cancelled;
                    touched.push(c.server);
                }
                _ => {}
            }
        }
        let rec = RequestRecord {
            arrival: req.arrival,
            object: req.object,
            hol_epoch: req.hol,
            departure: now,
            service_type: req.hol_type.clone(),
            winner: Winner::from_route(route),
        };
        for s in queued {
            self.servers[s].live -= 1;
        }
        for &s in &touched {
            self.stop_service(s);
        }
        if self.config.check_invariants && self.config.mode == Mode::Fa {
            if let Some(last) = self.last_departed {
                if id != last + 1 {
                    self.violations += 1;
                }
            }
        }
        self.last_departed = Some(id);
        collector.record(id, rec);
        for s in touched {
            self.start(s);
        }
        while self.window.front().is_some_and(|r| r.done) {
            self.window.pop_front();
            self.base += 1;
        }
    }

    fn check_invariants(&mut self) {
        if self.config.mode != Mode::Fa {
            return;
        }
        let in_service = self.window.iter().filter(|r| !r.done && r.waiting == 0).count();
        if in_service > 1 {
            self.violations += 1;
        }
        // Locality two: at most one server per group can be ahead.
        if let Some((2, t)) = self.config.scheme.r_t() {
            let routes = self.config.scheme.routes(0);
            for route in routes.iter().skip(1).take(t) {
                let lead = |server: usize| {
                    self.window
                        .iter()
                        .filter(|r| {
                            !r.done
                                && r.copies
                                    .iter()
                                    .any(|c| c.server == server && c.state == CopyState::Done)
                        })
                        .count()
                };
                let (a, b) = (lead(route.servers[0]), lead(route.servers[1]));
                if a * b != 0 {
                    self.violations += 1;
                }
            }
        }
        for r in self.window.iter().filter(|r| !r.done) {
            for (b, (&rem, &init)) in r.remaining.iter().zip(&r.initial).enumerate() {
                if b > 0 && (rem == 0 || rem > init) {
                    self.violations += 1;
                }
            }
        }
    }

    fn run(mut self) -> SimResult {
        let config = self.config;
        let mut collector = Collector::new(config);
        let mut arrivals = stream(config.seed, 0);
        let cumulative = object_sampler(config);
        let mut next_id = 0usize;
        let mut aborted = false;
        let first = exp_sample(&mut arrivals, config.lambda);
        self.push(first, EventKind::Arrival);
        while let Some(ev) = self.events.pop() {
            self.now = ev.time;
            match ev.kind {
                EventKind::Arrival => {
                    let object = draw_object(config, &cumulative, &mut arrivals);
                    self.arrive(next_id, object);
                    next_id += 1;
                    if next_id < config.n_arrivals {
                        let gap = exp_sample(&mut arrivals, config.lambda);
                        self.push(self.now + gap, EventKind::Arrival);
                    }
                    if self.servers.iter().any(|s| s.live > config.max_backlog) {
                        aborted = true;
                        break;
                    }
                }
                EventKind::Completion { server, generation } => self.complete(server, generation, &mut collector),
            }
            if config.check_invariants {
                self.check_invariants();
            }
        }
        let end = self.now.max(f64::MIN_POSITIVE);
        let utilization = self
            .servers
            .iter()
            .map(|s| {
                let open = if s.current.is_some() { end - s.busy_since } else { 0.0 };
                (s.busy_total + open) / end
            })
            .collect();
        let violations = self.violations;
        collector.finish(config, utilization, aborted, violations)
    }
}

/// Split-Merge and Fast-Split-Merge: a single FCFS queue, so departures
/// follow the Lindley recursion.
fn run_single_queue(config: &SimConfig) -> SimResult {
    let mut collector = Collector::new(config);
    let mut arrivals = stream(config.seed, 0);
    let n = config.scheme.n();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| stream(config.seed, i as u64 + 1)).collect();
    let cumulative = object_sampler(config);
    let mut busy = vec![0.0; n];
    let mut in_system: VecDeque<f64> = VecDeque::new();
    let mut clock = 0.0;
    let mut last_departure: f64 = 0.0;
    let mut aborted = false;
    for id in 0..config.n_arrivals {
        clock += exp_sample(&mut arrivals, config.lambda);
        let object = draw_object(config, &cumulative, &mut arrivals);
        while in_system.front().is_some_and(|&d| d <= clock) {
            in_system.pop_front();
        }
        if in_system.len() > config.max_backlog {
            aborted = true;
            break;
        }
        let start = clock.max(last_departure);
        let routes = config.scheme.routes(object);
        let (service, winner) = match config.mode {
            Mode::Sm => {
                let mut best = (f64::INFINITY, 0);
                let mut draws = Vec::new();
                for (b, route) in routes.iter().enumerate() {
                    let mut times: Vec<f64> = route
                        .servers
                        .iter()
                        .map(|&s| {
                            let x = exp_sample(&mut rngs[s], config.server_rates[s]);
                            draws.push((s, x));
                            x
                        })
                        .collect();
                    times.sort_by(f64::total_cmp);
                    let finish = times[route.need - 1];
                    if finish < best.0 {
                        best = (finish, b);
                    }
                }
                for (s, x) in draws {
                    busy[s] += x.min(best.0);
                }
                best
            }
            _ => {
                // Each route runs at the rate of its fastest server.
                let mut best = (f64::INFINITY, 0);
                for (b, route) in routes.iter().enumerate() {
                    let &fastest = route
                        .servers
                        .iter()
                        .max_by(|x, y| config.server_rates[**x].total_cmp(&config.server_rates[**y]))
                        .expect("non-empty route");
                    let x = exp_sample(&mut rngs[fastest], config.server_rates[fastest]);
                    if x < best.0 {
                        best = (x, b);
                    }
                }
                for route in &routes {
                    for &s in &route.servers {
                        busy[s] += best.0;
                    }
                }
                best
            }
        };
        let departure = start + service;
        last_departure = departure;
        in_system.push_back(departure);
        collector.record(
            id,
            RequestRecord {
                arrival: clock,
                object,
                hol_epoch: Some(start),
                departure,
                service_type: None,
                winner: Winner::from_route(winner),
            },
        );
    }
    let end = last_departure.max(clock).max(f64::MIN_POSITIVE);
    let utilization = busy.iter().map(|b| b / end).collect();
    collector.finish(config, utilization, aborted, 0)
}

/// Runs one replication.
pub fn simulate(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    Ok(match config.mode {
        Mode::Ga | Mode::Fa => Network::new(config).run(),
        Mode::Sm | Mode::Fsm => run_single_queue(config),
    })
}

/// Runs `n_reps` replications with seeds `seed, seed + 1, ...`.
pub fn replicate(config: &SimConfig, n_reps: usize, exec: Execution) -> Result<SimResult> {
    if n_reps < 2 {
        return Err(Error::invalid("replicate needs n_reps >= 2"));
    }
    let seeds: Vec<u64> = (0..n_reps as u64).map(|j| config.seed.wrapping_add(j)).collect();
    replicate_seeds(config, &seeds, exec)
}

/// Runs one replication per seed and aggregates across them.
pub fn replicate_seeds(config: &SimConfig, seeds: &[u64], exec: Execution) -> Result<SimResult> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::invalid("no seeds"));
    }
    let runs: Vec<SimResult> = par::map(seeds, exec, |&seed| {
        let mut c = config.clone();
        c.seed = seed;
        simulate(&c).expect("validated config")
    });
    Ok(aggregate(config, seeds, runs))
}

fn aggregate(config: &SimConfig, seeds: &[u64], runs: Vec<SimResult>) -> SimResult {
    let means: Vec<f64> = runs.iter().map(|r| r.mean_t.mean).collect();
    let mean_t = Estimate::from_samples(&means).expect("at least one run");
    let completed: usize = runs.iter().map(|r| r.completed).sum();
    let ws = runs.iter().map(|r| r.ws * r.completed as f64).sum::<f64>() / completed.max(1) as f64;
    let type_counts = runs[0].type_counts.as_ref().map(|c0| {
        let mut acc = vec![0u64; c0.len()];
        for r in &runs {
            for (a, c) in acc.iter_mut().zip(r.type_counts.as_ref().expect("same mode")) {
                *a += c;
            }
        }
        acc
    });
    let type_frequencies = match (&type_counts, config.scheme.r_t()) {
        (Some(c), Some((r, t))) => {
            let f: Vec<f64> = c.iter().map(|&x| x as f64).collect();
            TypeFrequencies::from_counts(r, t, &f).ok()
        }
        _ => None,
    };
    let utilization = (0..config.scheme.n())
        .map(|i| runs.iter().map(|r| r.utilization[i]).sum::<f64>() / runs.len() as f64)
        .collect();
    let ccdf = (0..config.ccdf_grid.len())
        .map(|i| runs.iter().map(|r| r.ccdf[i]).sum::<f64>() / runs.len() as f64)
        .collect();
    let summaries = runs.iter().zip(seeds).map(|(r, &s)| r.summary(s)).collect();
    let aborted = runs.iter().any(|r| r.aborted);
    let violations = runs.iter().map(|r| r.invariant_violations).sum();
    let mut samples = Vec::with_capacity(completed);
    let mut trace: Option<Vec<RequestRecord>> = None;
    for r in runs {
        samples.extend(r.samples);
        if let Some(t) = r.trace {
            trace.get_or_insert_with(Vec::new).extend(t);
        }
    }
    SimResult {
        mode: config.mode,
        mean_t,
        ccdf_grid: config.ccdf_grid.clone(),
        ccdf,
        type_counts,
        type_frequencies,
        ws,
        wr: 1.0 - ws,
        utilization,
        aborted,
        completed,
        samples,
        trace,
        invariant_violations: violations,
        runs: summaries,
    }
}

/// Empirical `P{T > x}` over the retained samples.
pub fn empirical_ccdf(result: &SimResult, grid: &[f64]) -> Result<Vec<f64>> {
    if result.samples.is_empty() {
        return Err(Error::DegenerateInput("no completed requests".into()));
    }
    Ok(ccdf_of(&result.samples, grid))
}

/// Writes a per-request trace as CSV.
pub fn write_trace_csv<W: Write>(records: &[RequestRecord], mut out: W) -> Result<()> {
    writeln!(out, "arrival,object,hol_epoch,departure,type,winner")?;
    for r in records {
        let hol = r.hol_epoch.map_or(String::new(), |h| format!("{h:.9}"));
        let ty = r.service_type.as_ref().map_or(String::new(), |t| {
            t.as_slice().iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        });
        let winner = match r.winner {
            Winner::Systematic => "systematic".to_string(),
            Winner::Group(g) => format!("group{g}"),
        };
        writeln!(
            out,
            "{:.9},{},{hol},{:.9},{ty},{winner}",
            r.arrival, r.object, r.departure
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{replication_layout, simplex_layout};

    fn r2t1() -> AccessScheme {
        AccessScheme::Layout(simplex_layout(2).unwrap())
    }

    #[test]
    fn deterministic_given_seed() {
        let c = SimConfig::new(Mode::Ga, r2t1(), 0.8, 1.0)
            .with_arrivals(3000)
            .with_trace(true);
        let a = simulate(&c).unwrap();
        let b = simulate(&c).unwrap();
        assert_eq!(a, b);
        let d = simulate(&c.clone().with_seed(2)).unwrap();
        assert_ne!(a.mean_t.mean, d.mean_t.mean);
    }

    #[test]
    fn fa_invariants_hold() {
        for (lambda, scheme) in [
            (1.2, r2t1()),
            (0.9, AccessScheme::Layout(simplex_layout(3).unwrap())),
            (1.5, AccessScheme::Layout(replication_layout(2, 3).unwrap())),
        ] {
            let mut c = SimConfig::new(Mode::Fa, scheme, lambda, 1.0)
                .with_arrivals(4000)
                .with_trace(true);
            c.check_invariants = true;
            let res = simulate(&c).unwrap();
            assert_eq!(res.invariant_violations, 0);
            let tr = res.trace.unwrap();
            let mut prev_dep = 0.0;
            for w in tr.windows(2) {
                assert!(w[0].arrival <= w[1].arrival);
                assert!(w[0].departure <= w[1].departure, "FIFO");
            }
            for r in &tr {
                let h = r.hol_epoch.unwrap();
                assert!(r.arrival <= h && h <= r.departure);
                assert!(h >= prev_dep);
                prev_dep = r.departure;
            }
        }
    }

    #[test]
    fn fa_types_sum_to_counts() {
        let c = SimConfig::new(Mode::Fa, r2t1(), 1.0, 1.0).with_arrivals(5000);
        let res = simulate(&c).unwrap();
        let counts = res.type_counts.clone().unwrap();
        assert_eq!(counts.iter().sum::<u64>() as usize, res.completed);
        let f = res.type_frequencies.unwrap();
        assert!((f.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((res.ws + res.wr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn replication_fa_is_mm1() {
        // r = 1, t = 1: two replicas, first finisher wins.
        let scheme = AccessScheme::Layout(replication_layout(1, 2).unwrap());
        let c = SimConfig::new(Mode::Fa, scheme, 1.0, 1.0).with_arrivals(200_000);
        let res = simulate(&c).unwrap();
        assert!((res.mean_t.mean - 1.0).abs() < 0.03, "{}", res.mean_t.mean);
    }

    #[test]
    fn split_merge_matches_pk() {
        let c = SimConfig::new(Mode::Sm, r2t1(), 1.0, 1.0).with_arrivals(300_000);
        let res = simulate(&c).unwrap();
        assert!(
            (res.mean_t.mean / (11.0 / 6.0) - 1.0).abs() < 0.03,
            "{}",
            res.mean_t.mean
        );
    }

    #[test]
    fn fsm_is_mm1() {
        let c = SimConfig::new(Mode::Fsm, r2t1(), 1.0, 1.0).with_arrivals(200_000);
        let res = simulate(&c).unwrap();
        assert!((res.mean_t.mean - 1.0).abs() < 0.03, "{}", res.mean_t.mean);
    }

    #[test]
    fn low_traffic_matches_closed_form() {
        let et = crate::lowtraffic::et_availability(2, 1, 1.0).unwrap();
        for mode in [Mode::Ga, Mode::Fa, Mode::Sm] {
            let c = SimConfig::new(mode, r2t1(), 0.01, 1.0).with_arrivals(100_000);
            let res = simulate(&c).unwrap();
            assert!(
                (res.mean_t.mean / et - 1.0).abs() < 0.02,
                "{mode:?}: {}",
                res.mean_t.mean
            );
        }
    }

    #[test]
    fn mds_low_traffic() {
        let c =
            SimConfig::new(Mode::Ga, AccessScheme::Mds(MdsCode::new(9, 6).unwrap()), 0.01, 1.0).with_arrivals(100_000);
        let res = simulate(&c).unwrap();
        assert!(
            (res.mean_t.mean / (6.0 / 9.0) - 1.0).abs() < 0.02,
            "{}",
            res.mean_t.mean
        );
    }

    #[test]
    fn backlog_abort() {
        let mut c = SimConfig::new(Mode::Fa, r2t1(), 5.0, 1.0).with_arrivals(100_000);
        c.max_backlog = 100;
        let res = simulate(&c).unwrap();
        assert!(res.aborted);
        let mut c = SimConfig::new(Mode::Sm, r2t1(), 5.0, 1.0).with_arrivals(100_000);
        c.max_backlog = 100;
        assert!(simulate(&c).unwrap().aborted);
    }

    #[test]
    fn identical_seeds_give_zero_width() {
        let c = SimConfig::new(Mode::Fa, r2t1(), 0.8, 1.0).with_arrivals(2000);
        let res = replicate_seeds(&c, &[7; 10], Execution::Sequential).unwrap();
        assert_eq!(res.mean_t.half_width, 0.0);
        assert_eq!(res.runs.len(), 10);
    }

    #[test]
    fn parallel_matches_sequential() {
        let c = SimConfig::new(Mode::Ga, r2t1(), 0.8, 1.0)
            .with_arrivals(2000)
            .with_grid(vec![0.5, 1.0]);
        let a = replicate(&c, 4, Execution::Sequential).unwrap();
        let b = replicate(&c, 4, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ccdf_edges() {
        let c = SimConfig::new(Mode::Fa, r2t1(), 0.8, 1.0).with_arrivals(2000);
        let res = simulate(&c).unwrap();
        let max = res.samples.iter().cloned().fold(0.0, f64::max);
        let v = empirical_ccdf(&res, &[0.0, max + 1.0]).unwrap();
        assert_eq!(v, vec![1.0, 0.0]);
        let mut empty = res.clone();
        empty.samples.clear();
        assert!(matches!(empirical_ccdf(&empty, &[0.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn rejects_bad_config() {
        let c = SimConfig::new(Mode::Fa, r2t1(), 0.0, 1.0);
        assert!(simulate(&c).is_err());
        let c = SimConfig::new(Mode::Fa, r2t1(), 1.0, 1.0).with_rates(vec![1.0, 1.0]);
        assert!(simulate(&c).is_err());
        let c = SimConfig::new(Mode::Fa, r2t1(), 1.0, 1.0).with_arrivals(0);
        assert!(simulate(&c).is_err());
        assert!(replicate(&SimConfig::new(Mode::Fa, r2t1(), 1.0, 1.0), 1, Execution::Sequential).is_err());
        assert!("xx".parse::<Mode>().is_err());
    }

    #[test]
    fn trace_csv() {
        let c = SimConfig::new(Mode::Fa, r2t1(), 0.8, 1.0)
            .with_arrivals(10)
            .with_trace(true);
        let res = simulate(&c).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(res.trace.as_ref().unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.starts_with("arrival,object,hol_epoch,departure,type,winner"));
    }
}
