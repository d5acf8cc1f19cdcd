//! Live session host: one simulation loop, a broadcast fan-out of state
//! frames and one handler per websocket client. At most one client holds the
//! pilot role; its latest force is latched into the loop.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use bpguard_core::executive::{ExecError, ExecState};
use bpguard_core::regions::RegionKind;
use bpguard_core::rrt::BpGraph;
use log::{error, info, warn};
use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, oneshot, watch};
use tokio::task::JoinHandle;

use crate::config::ScenarioConfig;
use crate::plan::{executive, PlanError};

pub const PROTOCOL_VERSION: u32 = 1;
/// Integration ticks allowed per frame before the loop stops catching up.
const MAX_TICKS_PER_FRAME: u64 = 250;
const POLICY_VIOLATION: u16 = 1008;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    /// State frames per second.
    pub rate_hz: f64,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            rate_hz: 60.0,
            speed: 1.0,
        }
    }
}

/// Force for direction index `i`: angle `i·45°` from +x, magnitude `w_bar`.
pub fn direction_force(i: u8, w_bar: f64) -> Option<Vector2<f64>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let unit = match i {
        0 => (1.0, 0.0),
        1 => (s, s),
        2 => (0.0, 1.0),
        3 => (-s, s),
        4 => (-1.0, 0.0),
        5 => (-s, -s),
        6 => (0.0, -1.0),
        7 => (s, -s),
        _ => return None,
    };
    Some(Vector2::new(unit.0, unit.1) * w_bar)
}

fn clamp_to_disc(w: Vector2<f64>, w_bar: f64) -> Vector2<f64> {
    let n = w.norm();
    if n > w_bar {
        w * (w_bar / n)
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    ClaimPilot {},
    ReleasePilot {},
    Force {
        #[serde(default)]
        dir: Option<u8>,
    },
    ForceVec {
        fx: f64,
        fy: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StateFrame {
    #[serde(rename = "type")]
    pub kind: String,
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub x: [f64; 2],
    pub w: [f64; 2],
    pub belief: Vec<f64>,
    pub target: String,
    pub bp: usize,
    pub barrier: f64,
}

impl StateFrame {
    fn capture(es: &ExecState, x: Vector2<f64>, barrier: f64) -> Self {
        Self {
            kind: "state".into(),
            t: es.t,
            q: es.joint.q.as_slice().to_vec(),
            qd: es.joint.qd.as_slice().to_vec(),
            x: [x.x, x.y],
            w: [es.w.x, es.w.y],
            belief: es.belief.probs.clone(),
            target: es.target.clone(),
            bp: es.active_pair(),
            barrier,
        }
    }
}

#[derive(Debug, Serialize)]
struct RoleMessage<'a> {
    #[serde(rename = "type")]
    kind: &'a str,
    pilot: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'a str>,
}

fn role(pilot: bool, reason: Option<&str>) -> String {
    serde_json::to_string(&RoleMessage {
        kind: "role",
        pilot,
        reason,
    })
    .expect("role serializes")
}

#[derive(Debug, Serialize)]
struct PairOutline {
    id: usize,
    q_e: Vec<f64>,
    x_e: [f64; 2],
    /// `J S₁QS₁ᵀ Jᵀ` at the equilibrium: the workspace image of `E(1)`;
    /// `E(ε₀)` is the same ellipse scaled by `ε₀`.
    workspace_shape: [[f64; 2]; 2],
    eps0: f64,
}

#[derive(Debug, Serialize)]
struct GraphSummary<'a> {
    vertices: usize,
    edges: usize,
    anchors: &'a BTreeMap<String, usize>,
}

#[derive(Debug, Serialize)]
struct Hello<'a> {
    #[serde(rename = "type")]
    kind: &'a str,
    protocol: u32,
    scenario: &'a str,
    dt: f64,
    rate_hz: f64,
    w_bar: f64,
    candidates: &'a [String],
    link_lengths: &'a [f64],
    base: [f64; 2],
    graph: GraphSummary<'a>,
    regions: &'a [bpguard_core::regions::Region],
    pairs: Vec<PairOutline>,
}

fn hello_message(cfg: &ScenarioConfig, g: &BpGraph, opts: &ServeOptions) -> String {
    let pairs = g
        .vertices
        .iter()
        .map(|bp| {
            let j = cfg.robot.jacobian(&bp.q_e);
            let s: DMatrix<f64> = &j * bp.joint_projection() * j.transpose();
            PairOutline {
                id: bp.id,
                q_e: bp.q_e.as_slice().to_vec(),
                x_e: [bp.x_e.x, bp.x_e.y],
                workspace_shape: [[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]],
                eps0: bp.eps0,
            }
        })
        .collect();
    let hello = Hello {
        kind: "hello",
        protocol: PROTOCOL_VERSION,
        scenario: &cfg.name,
        dt: cfg.executive.dt,
        rate_hz: opts.rate_hz,
        w_bar: cfg.limits.w_bar,
        candidates: &cfg.tasks,
        link_lengths: &cfg.robot.link_lengths,
        base: cfg.robot.base_position,
        graph: GraphSummary {
            vertices: g.vertices.len(),
            edges: g.edges.len(),
            anchors: &g.anchors,
        },
        regions: &cfg.regions,
        pairs,
    };
    serde_json::to_string(&hello).expect("hello serializes")
}

struct Shared {
    hello: String,
    frames: broadcast::Sender<Arc<str>>,
    pilot: Mutex<Option<u64>>,
    force: watch::Sender<Vector2<f64>>,
    next_client: AtomicU64,
    w_bar: f64,
}

/// A running session; dropping it does not stop the server, call `shutdown`.
pub struct RunningServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    server: JoinHandle<Result<(), std::io::Error>>,
    sim: JoinHandle<()>,
}

impl RunningServer {
    pub async fn shutdown(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = self.server.await;
        self.sim.abort();
        let _ = self.sim.await;
    }

    /// Waits until the server stops on its own (it does not, short of an
    /// I/O failure or a shutdown signal).
    pub async fn wait(self) -> Result<(), std::io::Error> {
        let r = self.server.await.unwrap_or(Ok(()));
        self.sim.abort();
        r
    }
}

pub async fn bind(port: u16) -> Result<TcpListener, ServeError> {
    TcpListener::bind(("127.0.0.1", port)).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServeError::PortInUse(port)
        } else {
            ServeError::Io(e)
        }
    })
}

/// Starts the simulation loop and the websocket endpoint `/ws` on `listener`.
pub async fn spawn(
    g: BpGraph,
    cfg: ScenarioConfig,
    listener: TcpListener,
    opts: ServeOptions,
) -> Result<RunningServer, ServeError> {
    // fail early on graphs that do not cover the anchors
    let ex = executive(&cfg, &g)?;
    ex.start(&cfg.executive.start, &cfg.executive.start)?;
    drop(ex);

    let (frames, _) = broadcast::channel(64);
    let (force, force_rx) = watch::channel(Vector2::zeros());
    let shared = Arc::new(Shared {
        hello: hello_message(&cfg, &g, &opts),
        frames: frames.clone(),
        pilot: Mutex::new(None),
        force,
        next_client: AtomicU64::new(1),
        w_bar: cfg.limits.w_bar,
    });
    let sim = tokio::spawn(simulation_loop(g, cfg, opts, force_rx, frames));
    let app = Router::new()
        .route(
            "/",
            get(|| async { "bpguard live session; connect a websocket client to /ws\n" }),
        )
        .route("/ws", get(ws_handler))
        .with_state(shared);
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stopped.await;
            })
            .await
    });
    info!("serving on ws://{addr}/ws");
    Ok(RunningServer {
        addr,
        stop: Some(stop),
        server,
        sim,
    })
}

/// Binds `port` on localhost and serves until the process is interrupted.
pub async fn serve(
    g: BpGraph,
    cfg: ScenarioConfig,
    port: u16,
    opts: ServeOptions,
) -> Result<(), ServeError> {
    let listener = bind(port).await?;
    let running = spawn(g, cfg, listener, opts).await?;
    tokio::signal::ctrl_c().await?;
    info!("interrupted, shutting down");
    running.shutdown().await;
    Ok(())
}

async fn simulation_loop(
    g: BpGraph,
    cfg: ScenarioConfig,
    opts: ServeOptions,
    force: watch::Receiver<Vector2<f64>>,
    frames: broadcast::Sender<Arc<str>>,
) {
    let ex = executive(&cfg, &g).expect("checked before spawning");
    let start = cfg.executive.start.clone();
    let mut es = ex.start(&start, &start).expect("checked before spawning");
    let blocked: Vec<_> = cfg
        .regions
        .iter()
        .filter(|r| r.kind != RegionKind::Task)
        .collect();
    let period = Duration::from_secs_f64(1.0 / opts.rate_hz);
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut last = tokio::time::Instant::now();
    let mut debt = 0.0;
    loop {
        interval.tick().await;
        let now = tokio::time::Instant::now();
        debt += (now - last).as_secs_f64() * opts.speed;
        last = now;
        let mut ticks = (debt / ex.cfg.dt).floor() as u64;
        if ticks > MAX_TICKS_PER_FRAME {
            ticks = MAX_TICKS_PER_FRAME;
            debt = 0.0;
        } else {
            debt -= ticks as f64 * ex.cfg.dt;
        }
        for _ in 0..ticks {
            let w = *force.borrow();
            match ex.tick(&es, &w) {
                Ok(next) => es = next,
                Err(e) => {
                    error!("{e}; restarting the session at {start}");
                    es = ex.start(&start, &start).expect("checked before spawning");
                    break;
                }
            }
        }
        let x = ex.model.forward_kinematics(&es.joint.q);
        if blocked.iter().any(|r| r.contains(&x)) {
            warn!("end effector inside a blocked region at t = {:.3}", es.t);
        }
        let barrier = ex.graph.vertices[es.active_pair()].barrier(&es.joint);
        let frame = StateFrame::capture(&es, x, barrier);
        let text: Arc<str> = serde_json::to_string(&frame)
            .expect("frame serializes")
            .into();
        // no receivers is fine
        let _ = frames.send(text);
    }
}

async fn ws_handler(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| client_session(socket, shared))
}

enum Reply {
    Send(String),
    Nothing,
    Close(String),
}

fn handle_message(shared: &Shared, id: u64, text: &str) -> Reply {
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => return Reply::Close(format!("bad message: {e}")),
    };
    let mut pilot = shared.pilot.lock().expect("pilot lock");
    let is_pilot = *pilot == Some(id);
    match msg {
        ClientMessage::ClaimPilot {} => match *pilot {
            None => {
                *pilot = Some(id);
                info!("client {id} is the pilot");
                Reply::Send(role(true, None))
            }
            Some(p) if p == id => Reply::Send(role(true, None)),
            Some(_) => Reply::Send(role(false, Some("pilot already claimed"))),
        },
        ClientMessage::ReleasePilot {} => {
            if is_pilot {
                *pilot = None;
                shared.force.send_replace(Vector2::zeros());
            }
            Reply::Send(role(false, None))
        }
        ClientMessage::Force { dir } if is_pilot => {
            let w = match dir {
                None => Vector2::zeros(),
                Some(i) => match direction_force(i, shared.w_bar) {
                    Some(w) => w,
                    None => return Reply::Close(format!("direction {i} is outside 0..=7")),
                },
            };
            shared.force.send_replace(w);
            Reply::Nothing
        }
        ClientMessage::ForceVec { fx, fy } if is_pilot => {
            if !(fx.is_finite() && fy.is_finite()) {
                return Reply::Close("force components must be finite".into());
            }
            shared
                .force
                .send_replace(clamp_to_disc(Vector2::new(fx, fy), shared.w_bar));
            Reply::Nothing
        }
        ClientMessage::Force { .. } | ClientMessage::ForceVec { .. } => {
            Reply::Send(role(false, Some("forces are accepted from the pilot only")))
        }
    }
}

async fn client_session(mut socket: WebSocket, shared: Arc<Shared>) {
    let id = shared.next_client.fetch_add(1, Ordering::Relaxed);
    let mut frames = shared.frames.subscribe();
    if socket
        .send(Message::Text(shared.hello.clone().into()))
        .await
        .is_err()
    {
        return;
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(Message::Binary(_))) => {
                        close(&mut socket, "binary frames are not part of the protocol").await;
                        break;
                    }
                    Some(Ok(_)) => continue,
                };
                match handle_message(&shared, id, text.as_str()) {
                    Reply::Send(s) => {
                        if socket.send(Message::Text(s.into())).await.is_err() {
                            break;
                        }
                    }
                    Reply::Nothing => {}
                    Reply::Close(reason) => {
                        warn!("closing client {id}: {reason}");
                        close(&mut socket, &reason).await;
                        break;
                    }
                }
            }
            frame = frames.recv() => {
                match frame {
                    Ok(text) => {
                        if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                            break;
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                }
            }
        }
    }
    let mut pilot = shared.pilot.lock().expect("pilot lock");
    if *pilot == Some(id) {
        *pilot = None;
        shared.force.send_replace(Vector2::zeros());
        info!("pilot {id} left; force released");
    }
}

/// Close frames carry at most 123 bytes of reason text.
const MAX_CLOSE_REASON: usize = 123;

async fn close(socket: &mut WebSocket, reason: &str) {
    let mut end = reason.len().min(MAX_CLOSE_REASON);
    while !reason.is_char_boundary(end) {
        end -= 1;
    }
    let frame = CloseFrame {
        code: POLICY_VIOLATION,
        reason: reason[..end].to_string().into(),
    };
    let _ = socket.send(Message::Close(Some(frame))).await;
}
