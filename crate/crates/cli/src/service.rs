//! Session protocol, independent of the transport.
//!
//! Each connected client gets a [`ClientId`]. Text frames go through
//! [`Service::handle`], which returns every message to deliver and who gets it:
//! the reply for the sender plus any `state_push` for session subscribers.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use gridgym::agents::log_header;
use gridgym::log::{LogHeader, StepRecord};
use gridgym::{Action, Chronics, EnvConfig, Environment, EpisodeLog, EpisodeSource, GridCase, StepResult};
use serde::Deserialize;
use serde_json::{json, Value};

pub const PROTOCOL_VERSION: u32 = 1;

pub type ClientId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: ClientId,
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Request {
    CreateSession {
        #[serde(default)]
        id: Value,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        agent: Option<String>,
    },
    GetObservation {
        #[serde(default)]
        id: Value,
        session: String,
    },
    Act {
        #[serde(default)]
        id: Value,
        session: String,
        action: Action,
    },
    Advance {
        #[serde(default)]
        id: Value,
        session: String,
    },
    Simulate {
        #[serde(default)]
        id: Value,
        session: String,
        action: Action,
    },
    N1Screen {
        #[serde(default)]
        id: Value,
        session: String,
    },
    Subscribe {
        #[serde(default)]
        id: Value,
        session: String,
    },
    TransferAuthority {
        #[serde(default)]
        id: Value,
        session: String,
        to: ClientId,
    },
    GetLog {
        #[serde(default)]
        id: Value,
        session: String,
    },
}

struct Session {
    env: Environment,
    header: LogHeader,
    steps: Vec<StepRecord>,
    staged: Action,
    authority: Option<ClientId>,
    subscribers: Vec<ClientId>,
    last: Option<StepResult>,
}

impl Session {
    fn score(&self) -> f64 {
        EpisodeLog::finish(self.header.clone(), self.steps.clone()).score()
    }

    fn push(&self, name: &str) -> Vec<Outgoing> {
        let obs = self.last.as_ref().map_or_else(|| self.env.observation(), |r| r.observation.clone());
        let msg = json!({
            "type": "state_push",
            "session": name,
            "observation": obs,
            "reward": self.last.as_ref().map(|r| r.reward),
            "info": self.last.as_ref().map(|r| &r.info),
            "done": self.env.is_done(),
            "termination": self.last.as_ref().map(|r| r.termination),
            "score": self.score(),
            "authority": self.authority,
        });
        let text = msg.to_string();
        self.subscribers
            .iter()
            .map(|&to| Outgoing { to, text: text.clone() })
            .collect()
    }
}

struct Fault(String);

impl<T: std::fmt::Display> From<T> for Fault {
    fn from(e: T) -> Self {
        Fault(e.to_string())
    }
}

/// Holds every session for one case and chronics pair.
pub struct Service {
    case: Arc<GridCase>,
    chronics: Chronics,
    config: EnvConfig,
    source: EpisodeSource,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_client: AtomicU64,
    next_session: AtomicU64,
}

impl Service {
    /// Checks that the inputs build an environment before accepting clients.
    pub fn new(
        case: Arc<GridCase>,
        chronics: Chronics,
        config: EnvConfig,
        source: EpisodeSource,
    ) -> Result<Self, gridgym::error::EnvError> {
        Environment::new(case.clone(), &chronics, config.clone(), 0)?;
        Ok(Self {
            case,
            chronics,
            config,
            source,
            sessions: Mutex::default(),
            next_client: AtomicU64::new(1),
            next_session: AtomicU64::new(1),
        })
    }

    /// Registers a client and returns its id with the welcome message.
    pub fn connect(&self) -> (ClientId, String) {
        let client = self.next_client.fetch_add(1, Ordering::Relaxed);
        let welcome = json!({
            "type": "welcome",
            "protocol_version": PROTOCOL_VERSION,
            "client": client,
            "case": self.case.name(),
            "chronics": self.chronics.name,
        });
        (client, welcome.to_string())
    }

    /// Drops a client from every session. Step authority held by the client
    /// passes to the earliest remaining subscriber.
    pub fn disconnect(&self, client: ClientId) -> Vec<Outgoing> {
        let sessions: Vec<_> = self.sessions.lock().expect("session table").clone().into_iter().collect();
        let mut out = Vec::new();
        for (name, session) in sessions {
            let mut s = session.lock().expect("session lock");
            if !s.subscribers.contains(&client) && s.authority != Some(client) {
                continue;
            }
            s.subscribers.retain(|&c| c != client);
            if s.authority == Some(client) {
                s.authority = s.subscribers.first().copied();
                out.extend(s.push(&name));
            }
        }
        out
    }

    pub fn handle(&self, client: ClientId, text: &str) -> Vec<Outgoing> {
        let raw: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return vec![error(client, &Value::Null, None, &format!("malformed message: {e}"))],
        };
        let id = raw.get("id").cloned().unwrap_or(Value::Null);
        let session = raw.get("session").and_then(Value::as_str).map(str::to_string);
        let request: Request = match serde_json::from_value(raw) {
            Ok(r) => r,
            Err(e) => return vec![error(client, &id, session.as_deref(), &format!("invalid request: {e}"))],
        };
        match self.dispatch(client, request) {
            Ok(out) => out,
            Err(Fault(message)) => vec![error(client, &id, session.as_deref(), &message)],
        }
    }

    fn session(&self, name: &str) -> Result<Arc<Mutex<Session>>, Fault> {
        self.sessions
            .lock()
            .expect("session table")
            .get(name)
            .cloned()
            .ok_or_else(|| Fault(format!("unknown session `{name}`")))
    }

    fn dispatch(&self, client: ClientId, request: Request) -> Result<Vec<Outgoing>, Fault> {
        let reply = |value: Value| vec![Outgoing { to: client, text: value.to_string() }];
        match request {
            Request::CreateSession { id, seed, agent } => {
                let env = Environment::new(self.case.clone(), &self.chronics, self.config.clone(), seed)?;
                let agent = agent.unwrap_or_else(|| "console".into());
                let header = log_header(&env, &agent, &self.source);
                let name = format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed));
                let session = Session {
                    env,
                    header,
                    steps: Vec::new(),
                    staged: Action::do_nothing(),
                    authority: Some(client),
                    subscribers: vec![client],
                    last: None,
                };
                let obs = session.env.observation();
                self.sessions
                    .lock()
                    .expect("session table")
                    .insert(name.clone(), Arc::new(Mutex::new(session)));
                Ok(reply(json!({
                    "type": "session_created",
                    "id": id,
                    "session": name,
                    "authority": client,
                    "observation": obs,
                })))
            }
            Request::GetObservation { id, session } => {
                let s = self.session(&session)?;
                let s = s.lock().expect("session lock");
                Ok(reply(json!({
                    "type": "observation",
                    "id": id,
                    "session": session,
                    "observation": s.env.observation(),
                    "done": s.env.is_done(),
                })))
            }
            Request::Act { id, session, action } => {
                let s = self.session(&session)?;
                let mut s = s.lock().expect("session lock");
                require_authority(&s, client)?;
                if s.env.is_done() {
                    return Err(Fault("episode finished".into()));
                }
                let verdict = s.env.check_legal(&action);
                // The raw action is staged; the step itself turns an illegal one
                // into do-nothing and records why, exactly as a CLI run does.
                s.staged = action;
                let (applied, reason) = match verdict {
                    Ok(()) => ("action", None),
                    Err(e) => ("do_nothing", Some(e.0)),
                };
                Ok(reply(json!({
                    "type": "act_result",
                    "id": id,
                    "session": session,
                    "applied": applied,
                    "illegal_reason": reason,
                })))
            }
            Request::Advance { id, session } => {
                let s = self.session(&session)?;
                let mut s = s.lock().expect("session lock");
                require_authority(&s, client)?;
                let action = std::mem::take(&mut s.staged);
                let result = s.env.step(&action)?;
                s.steps.push(StepRecord::new(&action, &result));
                let mut out = reply(json!({
                    "type": "step_result",
                    "id": id,
                    "session": session,
                    "action": action,
                    "result": result,
                }));
                s.last = Some(result);
                out.extend(s.push(&session));
                Ok(out)
            }
            Request::Simulate { id, session, action } => {
                let s = self.session(&session)?;
                let s = s.lock().expect("session lock");
                let result = s.env.simulate(&action)?;
                Ok(reply(json!({
                    "type": "simulate_result",
                    "id": id,
                    "session": session,
                    "result": result,
                })))
            }
            Request::N1Screen { id, session } => {
                let s = self.session(&session)?;
                let s = s.lock().expect("session lock");
                let reports = s.env.n1_screen()?;
                Ok(reply(json!({
                    "type": "n1_result",
                    "id": id,
                    "session": session,
                    "reports": reports,
                })))
            }
            Request::Subscribe { id, session } => {
                let s = self.session(&session)?;
                let mut s = s.lock().expect("session lock");
                if !s.subscribers.contains(&client) {
                    s.subscribers.push(client);
                }
                if s.authority.is_none() {
                    s.authority = Some(client);
                }
                Ok(reply(json!({
                    "type": "subscribed",
                    "id": id,
                    "session": session,
                    "authority": s.authority,
                    "observation": s.env.observation(),
                })))
            }
            Request::TransferAuthority { id, session, to } => {
                let s = self.session(&session)?;
                let mut s = s.lock().expect("session lock");
                require_authority(&s, client)?;
                if !s.subscribers.contains(&to) {
                    return Err(Fault(format!("client {to} is not subscribed to `{session}`")));
                }
                s.authority = Some(to);
                s.staged = Action::do_nothing();
                let mut out = reply(json!({
                    "type": "authority_transferred",
                    "id": id,
                    "session": session,
                    "authority": to,
                }));
                out.extend(s.push(&session));
                Ok(out)
            }
            Request::GetLog { id, session } => {
                let s = self.session(&session)?;
                let s = s.lock().expect("session lock");
                let log = EpisodeLog::finish(s.header.clone(), s.steps.clone());
                Ok(reply(json!({
                    "type": "log",
                    "id": id,
                    "session": session,
                    "jsonl": log.to_jsonl(),
                })))
            }
        }
    }
}

fn require_authority(s: &Session, client: ClientId) -> Result<(), Fault> {
    if s.authority == Some(client) {
        Ok(())
    } else {
        Err(Fault("not step authority".into()))
    }
}

fn error(to: ClientId, id: &Value, session: Option<&str>, message: &str) -> Outgoing {
    let msg = json!({ "type": "error", "id": id, "session": session, "message": message });
    Outgoing { to, text: msg.to_string() }
}
