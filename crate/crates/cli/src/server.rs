//! WebSocket transport for [`Service`].

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tower_http::services::ServeDir;

use crate::service::{ClientId, Outgoing, Service};

const PLACEHOLDER: &str = "<!doctype html>
<title>gridgym</title>
<p>gridgym session server. Connect a console to <code>/ws</code>.</p>
";

#[derive(Clone)]
struct Shared {
    service: Arc<Service>,
    clients: Arc<Mutex<HashMap<ClientId, mpsc::UnboundedSender<String>>>>,
}

impl Shared {
    fn deliver(&self, messages: Vec<Outgoing>) {
        let clients = self.clients.lock().expect("client table");
        for m in messages {
            if let Some(tx) = clients.get(&m.to) {
                // A closed receiver means the client is on its way out.
                let _ = tx.send(m.text);
            }
        }
    }
}

pub fn router(service: Arc<Service>, static_dir: Option<PathBuf>) -> Router {
    let shared = Shared {
        service,
        clients: Arc::default(),
    };
    let app = Router::new().route("/ws", get(upgrade)).with_state(shared);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER) })),
    }
}

pub async fn serve(listener: TcpListener, service: Arc<Service>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    axum::serve(listener, router(service, static_dir)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

async fn connection(socket: WebSocket, shared: Shared) {
    let (client, welcome) = shared.service.connect();
    let (tx, mut rx) = mpsc::unbounded_channel();
    let _ = tx.send(welcome);
    shared.clients.lock().expect("client table").insert(client, tx);

    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => {
                let out = shared.service.handle(client, text.as_str());
                shared.deliver(out);
            }
            Message::Close(_) => break,
            _ => {}
        }
    }

    shared.clients.lock().expect("client table").remove(&client);
    let out = shared.service.disconnect(client);
    shared.deliver(out);
    writer.abort();
}
