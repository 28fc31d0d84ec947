//! Network front end for a live run: newline-delimited JSON over TCP for
//! entities, a WebSocket at `/ws` for consoles and `GET /snapshot`.
//!
//! Simulated time follows the wall clock scaled by the realtime factor.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::atom::Millis;
use crate::harness::Harness;
use crate::protocol::{encode_line, LineFramer, PeerKind, WorldView, MAX_FRAME_BYTES};

#[derive(Debug, Clone, Copy)]
pub struct ServeConfig {
    pub tcp: SocketAddr,
    pub http: SocketAddr,
    pub realtime_factor: f64,
    pub tick: Duration,
}

struct Live {
    harness: Harness,
    clients: std::collections::BTreeMap<String, mpsc::UnboundedSender<String>>,
    started: Instant,
    factor: f64,
}

impl Live {
    fn sim_now(&self) -> Millis {
        (self.started.elapsed().as_secs_f64() * 1000.0 * self.factor) as Millis
    }

    fn catch_up(&mut self) {
        let target = self.sim_now().max(self.harness.now());
        self.harness.advance_until(target);
        self.dispatch();
    }

    fn dispatch(&mut self) {
        for ob in self.harness.take_external() {
            if let Some(tx) = self.clients.get(&ob.session_id) {
                if let Ok(line) = encode_line(&ob.envelope) {
                    let _ = tx.send(line);
                }
            }
        }
    }

    fn connect(&mut self, peer: PeerKind) -> (String, mpsc::UnboundedReceiver<String>) {
        self.catch_up();
        let id = self.harness.open_external(peer);
        let (tx, rx) = mpsc::unbounded_channel();
        self.clients.insert(id.clone(), tx);
        (id, rx)
    }

    fn disconnect(&mut self, session: &str) {
        self.clients.remove(session);
        self.harness.close_external(session);
    }
}

type Shared = Arc<Mutex<Live>>;

pub struct ServerHandle {
    pub tcp_addr: SocketAddr,
    pub http_addr: SocketAddr,
    live: Shared,
    shutdown: Option<oneshot::Sender<()>>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn snapshot(&self) -> WorldView {
        let mut live = self.live.lock().expect("live state");
        live.catch_up();
        let now = live.harness.now();
        live.harness.backend().view(now)
    }

    pub fn log(&self) -> crate::eventlog::EventLog {
        self.live.lock().expect("live state").harness.backend().log().clone()
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        for t in self.tasks.drain(..) {
            t.abort();
            let _ = t.await;
        }
    }
}

pub async fn start(harness: Harness, cfg: ServeConfig) -> std::io::Result<ServerHandle> {
    let live: Shared = Arc::new(Mutex::new(Live {
        harness,
        clients: Default::default(),
        started: Instant::now(),
        factor: cfg.realtime_factor.max(f64::MIN_POSITIVE),
    }));
    let tcp = TcpListener::bind(cfg.tcp).await?;
    let http = TcpListener::bind(cfg.http).await?;
    let tcp_addr = tcp.local_addr()?;
    let http_addr = http.local_addr()?;
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();

    let clock = {
        let live = live.clone();
        let tick = cfg.tick;
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(tick);
            loop {
                interval.tick().await;
                live.lock().expect("live state").catch_up();
            }
        })
    };

    let accept = {
        let live = live.clone();
        tokio::spawn(async move {
            while let Ok((stream, peer)) = tcp.accept().await {
                tracing::debug!(%peer, "entity connection");
                tokio::spawn(serve_tcp(stream, live.clone()));
            }
        })
    };

    let app = Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/snapshot", get(snapshot))
        .with_state(live.clone());
    let web = tokio::spawn(async move {
        let served = axum::serve(http, app)
            .with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            })
            .await;
        if let Err(e) = served {
            tracing::error!("http server stopped: {e}");
        }
    });

    Ok(ServerHandle {
        tcp_addr,
        http_addr,
        live,
        shutdown: Some(shutdown_tx),
        tasks: vec![clock, accept, web],
    })
}

async fn serve_tcp(stream: TcpStream, live: Shared) {
    let (mut reader, mut writer) = stream.into_split();
    let (session, mut rx) = live.lock().expect("live state").connect(PeerKind::Entity);
    tracing::debug!(%session, "entity session opened");
    let writer_task = tokio::spawn(async move {
        while let Some(line) = rx.recv().await {
            if writer.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
    });
    let mut framer = LineFramer::new();
    let mut buf = vec![0u8; 8192];
    loop {
        let n = match reader.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        let frames = framer.push(&buf[..n]);
        let mut l = live.lock().expect("live state");
        for frame in frames {
            l.harness.receive_external(&session, frame);
        }
        l.dispatch();
        if !l.harness.backend().is_open(&session) {
            break;
        }
    }
    live.lock().expect("live state").disconnect(&session);
    tracing::debug!(%session, "entity session closed");
    writer_task.abort();
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(live): State<Shared>) -> impl IntoResponse {
    ws.max_message_size(MAX_FRAME_BYTES + 2)
        .on_upgrade(move |socket| serve_ws(socket, live))
}

async fn serve_ws(socket: WebSocket, live: Shared) {
    let (mut sink, mut stream) = socket.split();
    let (session, mut rx) = live.lock().expect("live state").connect(PeerKind::Console);
    tracing::debug!(%session, "console session opened");
    let writer_task = tokio::spawn(async move {
        while let Some(line) = rx.recv().await {
            let text = line.trim_end_matches('\n').to_string();
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        let bytes = match msg {
            Message::Text(t) => t.as_bytes().to_vec(),
            Message::Binary(b) => b.to_vec(),
            Message::Close(_) => break,
            _ => continue,
        };
        let mut l = live.lock().expect("live state");
        l.harness.receive_external(&session, Ok(bytes));
        l.dispatch();
        if !l.harness.backend().is_open(&session) {
            break;
        }
    }
    live.lock().expect("live state").disconnect(&session);
    writer_task.abort();
}

async fn snapshot(State(live): State<Shared>) -> Json<WorldView> {
    let mut l = live.lock().expect("live state");
    l.catch_up();
    let now = l.harness.now();
    Json(l.harness.backend().view(now))
}
