//! Loopback HTTP stubs for the LM and embedding wire protocols, with fault
//! injection. Used by tests and by the `stub-lm` / `stub-embed` commands.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tiny_http::{Header, Method, Response, Server};

use crate::encoder::remote::{EmbedRequest, EmbedResponse};
use crate::lm::{LanguageModel, LmRequest, LmResponse, Prompt};
use crate::lm::http::Want;
use crate::tokenizer::Tokenizer;

#[derive(Debug, thiserror::Error)]
#[error("stub server: {0}")]
pub struct StubError(String);

/// Failure injection applied by a stub.
#[derive(Debug, Clone, Default)]
pub struct Faults {
    /// Answer the first `fail_first` requests with `fail_status`.
    pub fail_first: u32,
    pub fail_status: u16,
    /// Drop `logprobs` from score responses.
    pub omit_logprobs: bool,
    /// Return these logprobs for every score request instead of the model's.
    pub fixed_logprobs: Option<Vec<f64>>,
    /// Required `Authorization` bearer token, if any.
    pub require_token: Option<String>,
}

impl Faults {
    pub fn fail_first(n: u32, status: u16) -> Self {
        Self { fail_first: n, fail_status: status, ..Self::default() }
    }
}

/// A running stub; shut down on drop.
pub struct StubServer {
    server: Arc<Server>,
    addr: SocketAddr,
    requests: Arc<AtomicU32>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Requests received so far, failed ones included.
    pub fn requests(&self) -> u32 {
        self.requests.load(Ordering::SeqCst)
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

type Handler = dyn Fn(&str) -> Result<String, (u16, String)> + Send + Sync;

fn spawn(bind: &str, faults: Faults, handler: Box<Handler>) -> Result<StubServer, StubError> {
    let server = Arc::new(Server::http(bind).map_err(|e| StubError(e.to_string()))?);
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| StubError("stub must bind an IP address".into()))?;
    let requests = Arc::new(AtomicU32::new(0));
    let (srv, count) = (server.clone(), requests.clone());
    let worker = thread::spawn(move || {
        for mut req in srv.incoming_requests() {
            let n = count.fetch_add(1, Ordering::SeqCst);
            let json = Header::from_bytes("Content-Type", "application/json").expect("static header");
            let reply = |status: u16, body: String| Response::from_string(body).with_status_code(status).with_header(json.clone());
            if req.method() != &Method::Post {
                let _ = req.respond(reply(405, "{\"error\":\"POST only\"}".into()));
                continue;
            }
            if let Some(tok) = &faults.require_token {
                let expected = format!("Bearer {tok}");
                let ok = req.headers().iter().any(|h| h.field.equiv("Authorization") && h.value.as_str() == expected);
                if !ok {
                    let _ = req.respond(reply(401, "{\"error\":\"unauthorized\"}".into()));
                    continue;
                }
            }
            if n < faults.fail_first {
                let _ = req.respond(reply(faults.fail_status, "{\"error\":\"injected failure\"}".into()));
                continue;
            }
            let mut body = String::new();
            if req.as_reader().read_to_string(&mut body).is_err() {
                let _ = req.respond(reply(400, "{\"error\":\"unreadable body\"}".into()));
                continue;
            }
            let resp = match handler(&body) {
                Ok(out) => reply(200, out),
                Err((status, msg)) => reply(status, serde_json::json!({ "error": msg }).to_string()),
            };
            let _ = req.respond(resp);
        }
    });
    Ok(StubServer { server, addr, requests, worker: Some(worker) })
}

/// Serves `model` over the LM wire protocol, tokenizing strings with `tokenizer`.
pub fn spawn_lm_stub(
    bind: &str,
    model: Arc<dyn LanguageModel>,
    tokenizer: Arc<Tokenizer>,
    faults: Faults,
) -> Result<StubServer, StubError> {
    let f = faults.clone();
    let handler = move |body: &str| -> Result<String, (u16, String)> {
        let req: LmRequest = serde_json::from_str(body).map_err(|e| (400, e.to_string()))?;
        let prompt = Prompt::new(tokenizer.tokenize(&req.prompt));
        let resp = match req.want {
            Want::Score => {
                let cont = tokenizer.tokenize(req.continuation.as_deref().unwrap_or(""));
                let logprobs = match &f.fixed_logprobs {
                    Some(fixed) => fixed.clone(),
                    None => model.score_continuation(&prompt, &cont).map_err(|e| (422, e.to_string()))?.per_token_logprobs,
                };
                LmResponse { logprobs: (!f.omit_logprobs).then_some(logprobs), probs: None }
            }
            Want::Dist => {
                let d = model.next_token_distribution(&prompt).map_err(|e| (422, e.to_string()))?;
                LmResponse { logprobs: None, probs: Some(d.probs().to_vec()) }
            }
        };
        serde_json::to_string(&resp).map_err(|e| (500, e.to_string()))
    };
    spawn(bind, faults, Box::new(handler))
}

/// Deterministic stub embedding of `text`: uniform entries in `[-1, 1]`
/// seeded by the text's SHA-256.
pub fn stub_embedding(text: &str, dim: usize) -> Vec<f64> {
    let digest: [u8; 32] = Sha256::digest(text.as_bytes()).into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Serves [`stub_embedding`] vectors over the embedding wire protocol.
pub fn spawn_embed_stub(bind: &str, dim: usize, faults: Faults) -> Result<StubServer, StubError> {
    let handler = move |body: &str| -> Result<String, (u16, String)> {
        let req: EmbedRequest = serde_json::from_str(body).map_err(|e| (400, e.to_string()))?;
        let embeddings = req.texts.iter().map(|t| stub_embedding(t, dim)).collect();
        serde_json::to_string(&EmbedResponse { dim, embeddings }).map_err(|e| (500, e.to_string()))
    };
    spawn(bind, faults, Box::new(handler))
}
