//! HTTP and websocket front end of a live session.
//!
//! `GET /ws` upgrades to the JSON protocol, `GET /health` reports liveness.
//! The simulation runs on its own task paced at `dt`; each tick is broadcast
//! to every client through a bounded channel, so a slow client loses frames
//! instead of stalling the loop.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, watch};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;
use vrb_formation::obstacles::ObstacleMap;
use vrb_formation::sim::{Scenario, StateSnapshot};

use crate::error::TeleopError;
use crate::protocol::{parse_client_message, ClientMessage, ErrorMessage, RateLimits};
use crate::session::{Session, COMMAND_TIMEOUT};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub limits: RateLimits,
    pub command_timeout: Duration,
    /// Frames buffered per client before the oldest are dropped.
    pub channel_capacity: usize,
    /// Stop stepping after this many ticks; `None` runs until shutdown.
    pub max_ticks: Option<u64>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            limits: RateLimits::default(),
            command_timeout: COMMAND_TIMEOUT,
            channel_capacity: 16,
            max_ticks: None,
        }
    }
}

/// Counters shared by the loop, the clients and `/health`.
#[derive(Debug, Default)]
pub struct ServerStats {
    pub tick: AtomicU64,
    pub clients: AtomicUsize,
    pub rejected_messages: AtomicU64,
    pub commands: AtomicU64,
    pub running: AtomicBool,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Health {
    pub status: String,
    pub tick: u64,
    pub clients: usize,
    pub rejected_messages: u64,
    pub commands: u64,
    pub running: bool,
}

impl ServerStats {
    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            tick: self.tick.load(Ordering::Relaxed),
            clients: self.clients.load(Ordering::Relaxed),
            rejected_messages: self.rejected_messages.load(Ordering::Relaxed),
            commands: self.commands.load(Ordering::Relaxed),
            running: self.running.load(Ordering::Relaxed),
        }
    }
}

struct Frame {
    snapshot: StateSnapshot,
    json: String,
}

#[derive(Clone)]
struct AppState {
    session: Arc<Mutex<Session>>,
    frames: broadcast::Sender<Arc<Frame>>,
    obstacles: Arc<ObstacleMap>,
    stats: Arc<ServerStats>,
    shutdown: watch::Receiver<bool>,
}

pub struct ServerHandle {
    addr: SocketAddr,
    stats: Arc<ServerStats>,
    shutdown: watch::Sender<bool>,
    http: JoinHandle<std::io::Result<()>>,
    sim: JoinHandle<Result<(), TeleopError>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &Arc<ServerStats> {
        &self.stats
    }

    /// Stops the loop and the listener and waits for both.
    pub async fn shutdown(self) -> Result<(), TeleopError> {
        let _ = self.shutdown.send(true);
        self.join().await
    }

    /// Waits until the server stops on its own (simulation error or tick
    /// limit reached and shutdown requested elsewhere).
    pub async fn join(self) -> Result<(), TeleopError> {
        let sim = self.sim.await.map_err(std::io::Error::other)?;
        let _ = self.shutdown.send(true);
        self.http.await.map_err(std::io::Error::other)??;
        sim
    }
}

/// Binds `addr` and starts the session. Returns once the listener is bound.
pub async fn serve(
    scenario: Scenario,
    addr: SocketAddr,
    options: ServeOptions,
) -> Result<ServerHandle, TeleopError> {
    let dt = Duration::from_secs_f64(scenario.config.dt);
    let obstacles = Arc::new(scenario.obstacles.clone());
    let session = Session::new(scenario, options.limits, options.command_timeout)?;
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| TeleopError::Bind { addr, source })?;
    let addr = listener.local_addr()?;

    let (frames, _) = broadcast::channel(options.channel_capacity.max(1));
    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let stats = Arc::new(ServerStats::default());
    stats.running.store(true, Ordering::Relaxed);
    let state = AppState {
        session: Arc::new(Mutex::new(session)),
        frames,
        obstacles,
        stats: stats.clone(),
        shutdown: shutdown_rx.clone(),
    };

    let sim = tokio::spawn(simulation_loop(state.clone(), dt, options.max_ticks));
    let app = Router::new()
        .route("/health", get(health))
        .route("/ws", get(upgrade))
        .with_state(state);
    let mut signal = shutdown_rx;
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                stopped(&mut signal).await;
            })
            .await
    });
    Ok(ServerHandle {
        addr,
        stats,
        shutdown: shutdown_tx,
        http,
        sim,
    })
}

async fn simulation_loop(
    state: AppState,
    dt: Duration,
    max_ticks: Option<u64>,
) -> Result<(), TeleopError> {
    let mut interval = tokio::time::interval(dt);
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut shutdown = state.shutdown.clone();
    let result = loop {
        if max_ticks.is_some_and(|m| state.stats.tick.load(Ordering::Relaxed) >= m) {
            break Ok(());
        }
        tokio::select! {
            _ = interval.tick() => {}
            _ = stopped(&mut shutdown) => break Ok(()),
        }
        let stepped = state
            .session
            .lock()
            .expect("session lock poisoned")
            .step(Instant::now());
        let snapshot = match stepped {
            Ok(s) => s,
            Err(e) => break Err(TeleopError::Sim(e)),
        };
        state.stats.tick.store(snapshot.tick + 1, Ordering::Relaxed);
        let json = serde_json::to_string(&snapshot).expect("snapshots always serialize");
        // No receivers is fine.
        let _ = state.frames.send(Arc::new(Frame { snapshot, json }));
    };
    state.stats.running.store(false, Ordering::Relaxed);
    result
}

async fn stopped(signal: &mut watch::Receiver<bool>) {
    let _ = signal.wait_for(|stop| *stop).await;
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(state.stats.health())
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(socket: WebSocket, state: AppState) {
    state.stats.clients.fetch_add(1, Ordering::Relaxed);
    let (mut tx, mut rx) = socket.split();
    let mut frames = state.frames.subscribe();
    let mut shutdown = state.shutdown.clone();
    let mut last_tick: Option<u64> = None;
    loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(frame) => {
                    if last_tick.is_some_and(|t| frame.snapshot.tick <= t) {
                        continue;
                    }
                    let text = if last_tick.is_none() {
                        let first = frame.snapshot.clone().with_obstacles(&state.obstacles);
                        serde_json::to_string(&first).expect("snapshots always serialize")
                    } else {
                        frame.json.clone()
                    };
                    last_tick = Some(frame.snapshot.tick);
                    if tx.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = rx.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    if let Err(reply) = handle_text(&state, text.as_str()) {
                        let body = serde_json::to_string(&reply).expect("errors always serialize");
                        if tx.send(Message::Text(body.into())).await.is_err() {
                            break;
                        }
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    state.stats.rejected_messages.fetch_add(1, Ordering::Relaxed);
                    let body = serde_json::to_string(&ErrorMessage::new("binary frames are not supported"))
                        .expect("errors always serialize");
                    if tx.send(Message::Text(body.into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
            _ = stopped(&mut shutdown) => break,
        }
    }
    state.stats.clients.fetch_sub(1, Ordering::Relaxed);
}

fn handle_text(state: &AppState, text: &str) -> Result<(), ErrorMessage> {
    match parse_client_message(text) {
        Ok(ClientMessage::Cmd(cmd)) => {
            state
                .session
                .lock()
                .expect("session lock poisoned")
                .submit(&cmd, Instant::now());
            state.stats.commands.fetch_add(1, Ordering::Relaxed);
            Ok(())
        }
        Err(e) => {
            state
                .stats
                .rejected_messages
                .fetch_add(1, Ordering::Relaxed);
            Err(ErrorMessage::new(e.to_string()))
        }
    }
}
