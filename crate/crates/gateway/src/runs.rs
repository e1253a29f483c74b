//! Live runs.
//!
//! Each run owns one [`Engine`] on its own thread. HTTP handlers never touch
//! the engine directly: they send [`Command`]s that the thread applies at the
//! next tick boundary. Trace event lines are appended to a shared log that
//! any number of WebSocket subscribers read.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use tokio::sync::{oneshot, watch};

use agriswarm_core::sim::{parse_trace, Engine, FaultEvent, RunStatus, Scenario};

use crate::error::GatewayError;
use crate::store::{write_json, Store};

/// Ticks per wall-clock second when a request does not say.
pub const DEFAULT_PLAYBACK_RATE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Planned,
    Running,
    Paused,
    Done,
    Aborted,
}

impl RunState {
    pub fn finished(self) -> bool {
        matches!(self, RunState::Done | RunState::Aborted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RunHandle {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mission_id: Option<String>,
    /// `mission:<id>` or `inline:<sha prefix>`.
    pub scenario_ref: String,
    pub seed: u64,
    pub status: RunState,
    /// Ticks per wall-clock second. 0 runs unthrottled.
    pub playback_rate: f64,
    /// Ticks simulated so far.
    pub tick: u64,
    /// Final engine status once the run has finished.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<RunStatus>,
}

type Reply<T> = oneshot::Sender<Result<T, GatewayError>>;

pub enum Command {
    Pause(Reply<RunHandle>),
    Resume(Reply<RunHandle>),
    Abort(Reply<RunHandle>),
    Fault(FaultEvent, Reply<FaultEvent>),
}

/// Trace event lines published so far and whether the run is over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Progress {
    pub lines: usize,
    pub finished: bool,
}

pub struct Run {
    handle: Mutex<RunHandle>,
    events: RwLock<Vec<String>>,
    progress: watch::Sender<Progress>,
    commands: Mutex<Option<mpsc::Sender<Command>>>,
}

impl Run {
    pub fn handle(&self) -> RunHandle {
        self.handle.lock().expect("handle lock").clone()
    }

    pub fn subscribe(&self) -> watch::Receiver<Progress> {
        self.progress.subscribe()
    }

    /// Event lines `from..`, in trace order.
    pub fn events_from(&self, from: usize) -> Vec<String> {
        let events = self.events.read().expect("events lock");
        events.get(from..).map(<[String]>::to_vec).unwrap_or_default()
    }

    async fn send<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, GatewayError> {
        let (tx, rx) = oneshot::channel();
        let sent = match self.commands.lock().expect("command lock").as_ref() {
            Some(q) => q.send(make(tx)).is_ok(),
            None => false,
        };
        if !sent {
            let status = self.handle().status;
            return Err(GatewayError::Conflict(format!("run is {status:?}").to_lowercase()));
        }
        match rx.await {
            Ok(r) => r,
            Err(_) => Err(GatewayError::Conflict("run finished before the command applied".into())),
        }
    }

    pub async fn pause(&self) -> Result<RunHandle, GatewayError> {
        self.send(Command::Pause).await
    }

    pub async fn resume(&self) -> Result<RunHandle, GatewayError> {
        self.send(Command::Resume).await
    }

    pub async fn abort(&self) -> Result<RunHandle, GatewayError> {
        self.send(Command::Abort).await
    }

    pub async fn inject(&self, fault: FaultEvent) -> Result<FaultEvent, GatewayError> {
        self.send(|tx| Command::Fault(fault, tx)).await
    }
}

/// Everything needed to start a run.
pub struct RunSpec {
    pub mission_id: Option<String>,
    pub scenario_ref: String,
    pub scenario: Scenario,
    pub playback_rate: f64,
    pub start_paused: bool,
}

pub struct Runs {
    store: Store,
    next: AtomicU64,
    runs: RwLock<BTreeMap<String, Arc<Run>>>,
}

impl Runs {
    /// Loads finished runs from the store. Runs that were live when the
    /// previous process stopped come back as aborted.
    pub fn open(store: Store) -> Result<Runs, GatewayError> {
        let mut runs = BTreeMap::new();
        for entry in std::fs::read_dir(store.runs_dir())? {
            let dir = entry?.path();
            let Ok(text) = std::fs::read_to_string(dir.join("handle.json")) else {
                continue;
            };
            let Ok(mut handle) = serde_json::from_str::<RunHandle>(&text) else {
                continue;
            };
            let mut events = Vec::new();
            if let Ok(trace) = std::fs::read_to_string(dir.join("trace.jsonl")) {
                if parse_trace(&trace).is_ok() {
                    let lines: Vec<&str> = trace.lines().collect();
                    events = lines[1..lines.len() - 1].iter().map(|l| l.to_string()).collect();
                }
            }
            if !handle.status.finished() {
                handle.status = RunState::Aborted;
            }
            let (progress, _) = watch::channel(Progress {
                lines: events.len(),
                finished: true,
            });
            let run = Run {
                handle: Mutex::new(handle.clone()),
                events: RwLock::new(events),
                progress,
                commands: Mutex::new(None),
            };
            runs.insert(handle.run_id.clone(), Arc::new(run));
        }
        let next = AtomicU64::new(store.last_run_number() + 1);
        Ok(Runs {
            store,
            next,
            runs: RwLock::new(runs),
        })
    }

    pub fn get(&self, id: &str) -> Result<Arc<Run>, GatewayError> {
        self.runs
            .read()
            .expect("runs lock")
            .get(id)
            .cloned()
            .ok_or_else(|| GatewayError::NotFound(format!("run {id}")))
    }

    pub fn list(&self) -> Vec<RunHandle> {
        self.runs
            .read()
            .expect("runs lock")
            .values()
            .map(|r| r.handle())
            .collect()
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Builds the engine and starts its thread.
    pub fn start(&self, spec: RunSpec) -> Result<RunHandle, GatewayError> {
        if !(spec.playback_rate >= 0.0 && spec.playback_rate.is_finite()) {
            return Err(GatewayError::Unprocessable(format!(
                "playback_rate {} must be a finite number >= 0",
                spec.playback_rate
            )));
        }
        let engine = Engine::new(spec.scenario.clone())?;
        let run_id = format!("r-{:06}", self.next.fetch_add(1, Ordering::SeqCst));
        let dir = self.store.run_dir(&run_id);
        std::fs::create_dir_all(&dir)?;
        write_json(&dir.join("scenario.json"), &spec.scenario)?;

        let handle = RunHandle {
            run_id: run_id.clone(),
            mission_id: spec.mission_id,
            scenario_ref: spec.scenario_ref,
            seed: spec.scenario.seed,
            status: if spec.start_paused {
                RunState::Planned
            } else {
                RunState::Running
            },
            playback_rate: spec.playback_rate,
            tick: 0,
            outcome: None,
        };
        write_json(&dir.join("handle.json"), &handle)?;

        let (tx, rx) = mpsc::channel();
        let (progress, _) = watch::channel(Progress::default());
        let run = Arc::new(Run {
            handle: Mutex::new(handle.clone()),
            events: RwLock::new(Vec::new()),
            progress,
            commands: Mutex::new(Some(tx)),
        });
        self.runs
            .write()
            .expect("runs lock")
            .insert(run_id.clone(), run.clone());

        let store = self.store.clone();
        std::thread::Builder::new().name(run_id.clone()).spawn(move || {
            if let Err(e) = drive(engine, &run, rx, &store) {
                log::error!("{run_id}: {e}");
                run.commands.lock().expect("command lock").take();
                let mut h = run.handle.lock().expect("handle lock");
                h.status = RunState::Aborted;
                let _ = write_json(&store.run_dir(&h.run_id).join("handle.json"), &*h);
                drop(h);
                run.progress.send_modify(|p| p.finished = true);
            }
        })?;
        Ok(handle)
    }
}

/// Engine loop for one run. Steps at the playback rate and applies commands
/// between ticks.
fn drive(mut engine: Engine, run: &Run, rx: mpsc::Receiver<Command>, store: &Store) -> Result<(), GatewayError> {
    // Index of the next trace line to publish; line 0 is the header.
    let mut published = 1;
    let mut pace = Pace::new(run.handle().playback_rate, engine.tick());
    let mut abort_reply = None;

    while engine.is_running() {
        let state = run.handle().status;
        let command = if state == RunState::Running {
            match pace.wait(engine.tick()) {
                None => rx.try_recv().ok(),
                Some(d) => match rx.recv_timeout(d) {
                    Ok(c) => Some(c),
                    Err(mpsc::RecvTimeoutError::Timeout) => None,
                    Err(mpsc::RecvTimeoutError::Disconnected) => break,
                },
            }
        } else {
            match rx.recv() {
                Ok(c) => Some(c),
                Err(_) => break,
            }
        };

        match command {
            Some(Command::Abort(reply)) => {
                let status = run.handle().status;
                if status.finished() {
                    let _ = reply.send(Err(GatewayError::Conflict(format!("run is {status:?}").to_lowercase())));
                } else {
                    engine.abort()?;
                    publish(&engine, run, &mut published);
                    abort_reply = Some(reply);
                }
            }
            Some(c) => apply(c, &mut engine, run, store, &mut pace)?,
            None if state == RunState::Running && pace.due(engine.tick()) => {
                engine.step()?;
                publish(&engine, run, &mut published);
            }
            None => {}
        }
    }

    run.commands.lock().expect("command lock").take();
    let outcome = engine.status();
    let dir = store.run_dir(&run.handle().run_id);
    let output = engine.finish()?;
    output.write_to(&dir)?;
    let mut h = run.handle.lock().expect("handle lock");
    h.status = if outcome == RunStatus::Aborted {
        RunState::Aborted
    } else {
        RunState::Done
    };
    h.outcome = Some(outcome);
    write_json(&dir.join("handle.json"), &*h)?;
    let handle = h.clone();
    drop(h);
    run.progress.send_modify(|p| p.finished = true);
    if let Some(reply) = abort_reply {
        let _ = reply.send(Ok(handle));
    }
    Ok(())
}

fn apply(c: Command, engine: &mut Engine, run: &Run, store: &Store, pace: &mut Pace) -> Result<(), GatewayError> {
    let transition = |to: RunState, allowed: &[RunState]| -> Result<RunHandle, GatewayError> {
        let mut h = run.handle.lock().expect("handle lock");
        if !allowed.contains(&h.status) {
            return Err(GatewayError::Conflict(
                format!("cannot move run from {:?} to {:?}", h.status, to).to_lowercase(),
            ));
        }
        h.status = to;
        write_json(&store.run_dir(&h.run_id).join("handle.json"), &*h)?;
        Ok(h.clone())
    };
    match c {
        Command::Pause(reply) => {
            let _ = reply.send(transition(RunState::Paused, &[RunState::Running]));
        }
        Command::Resume(reply) => {
            let r = transition(RunState::Running, &[RunState::Paused, RunState::Planned]);
            if r.is_ok() {
                *pace = Pace::new(pace.rate, engine.tick());
            }
            let _ = reply.send(r);
        }
        Command::Abort(_) => unreachable!("abort is handled by the run loop"),
        Command::Fault(fault, reply) => {
            let _ = reply.send(engine.inject(fault).map_err(GatewayError::from));
        }
    }
    Ok(())
}

/// Moves new event lines from the engine trace into the shared log. The
/// footer line of a finished run is not an event and is left out.
fn publish(engine: &Engine, run: &Run, published: &mut usize) {
    let lines = engine.trace_lines();
    let end = if engine.is_running() {
        lines.len()
    } else {
        lines.len() - 1
    };
    if end > *published {
        let mut events = run.events.write().expect("events lock");
        events.extend_from_slice(&lines[*published..end]);
        *published = end;
        let count = events.len();
        drop(events);
        run.handle.lock().expect("handle lock").tick = engine.tick();
        run.progress.send_modify(|p| p.lines = count);
    } else {
        run.handle.lock().expect("handle lock").tick = engine.tick();
    }
}

/// Wall-clock schedule for ticks at `rate` per second from an anchor.
struct Pace {
    rate: f64,
    start: Instant,
    start_tick: u64,
}

impl Pace {
    fn new(rate: f64, tick: u64) -> Pace {
        Pace {
            rate,
            start: Instant::now(),
            start_tick: tick,
        }
    }

    fn deadline(&self, tick: u64) -> Option<Instant> {
        if self.rate == 0.0 {
            return None;
        }
        let n = tick.saturating_sub(self.start_tick) as f64;
        Some(self.start + Duration::from_secs_f64(n / self.rate))
    }

    fn due(&self, tick: u64) -> bool {
        self.deadline(tick).is_none_or(|d| Instant::now() >= d)
    }

    /// How long to wait before `tick` is due, or `None` if it already is.
    fn wait(&self, tick: u64) -> Option<Duration> {
        let d = self.deadline(tick)?;
        let now = Instant::now();
        (d > now).then(|| d - now)
    }
}
