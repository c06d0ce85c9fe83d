//! Chat-completion gateway: OpenAI-compatible wire format, retry with
//! exponential backoff, the no-system-role fallback, and deterministic mock
//! generators used as test oracles.

use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::parallel;
use crate::persona::{PatronType, Sex};
use crate::query::ReferenceQuery;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub max_tokens: u32,
    pub temperature: f64,
    pub seeds: Vec<u64>,
    pub per_seed_count: usize,
    pub retries: u32,
    pub supports_system_role: bool,
    /// Whether to put a `seed` field on the wire (some endpoints reject it).
    pub send_seed_param: bool,
    pub concurrency: usize,
    pub timeout_secs: u64,
    pub backoff_base_ms: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_tokens: 4096,
            temperature: 0.7,
            seeds: vec![1, 2, 3, 4, 5],
            per_seed_count: 500,
            retries: 3,
            supports_system_role: true,
            send_seed_param: false,
            concurrency: 4,
            timeout_secs: 60,
            backoff_base_ms: 1000,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(AuditError::Config("max_tokens must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(AuditError::Config("temperature must be in [0, 2]".into()));
        }
        if self.per_seed_count < 1 {
            return Err(AuditError::Config("per_seed_count must be >= 1".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(AuditError::Config("seeds must be distinct".into()));
        }
        if self.seeds.is_empty() {
            return Err(AuditError::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

/// OpenAI-compatible chat-completions request body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    FailedPlaceholder,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub query: ReferenceQuery,
    pub model_id: String,
    pub run_seed: u64,
    pub response_text: String,
    pub status: RecordStatus,
    pub word_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Builds the outbound request. When the endpoint lacks a system role, the
/// system prompt is prepended to the user prompt as a single user message.
pub fn build_request(
    query: &ReferenceQuery,
    config: &GenerationConfig,
    model_id: &str,
    run_seed: u64,
) -> ChatRequest {
    let messages = if config.supports_system_role {
        vec![
            Message {
                role: "system".to_string(),
                content: query.system_prompt.clone(),
            },
            Message {
                role: "user".to_string(),
                content: query.user_prompt.clone(),
            },
        ]
    } else {
        vec![Message {
            role: "user".to_string(),
            content: format!("{}\n\n{}", query.system_prompt, query.user_prompt),
        }]
    };
    ChatRequest {
        model: model_id.to_string(),
        messages,
        max_tokens: config.max_tokens,
        temperature: config.temperature,
        seed: config.send_seed_param.then_some(run_seed),
    }
}

pub trait Transport: Send + Sync {
    /// Sends one request. `query` carries the patron context and `run_seed`
    /// the campaign seed; HTTP transports ignore both, mock generators
    /// condition their output on them so that repeated prompts still yield
    /// fresh samples under a different seed.
    fn send(&self, request: &ChatRequest, query: &ReferenceQuery, run_seed: u64)
        -> Result<String>;
}

/// Completes one query, retrying up to `config.retries` times and recording
/// a placeholder on exhaustion.
pub fn complete(
    query: &ReferenceQuery,
    config: &GenerationConfig,
    model_id: &str,
    run_seed: u64,
    transport: &dyn Transport,
) -> InteractionRecord {
    let request = build_request(query, config, model_id, run_seed);
    let mut last_error = String::new();
    for attempt in 0..=config.retries {
        if attempt > 0 && config.backoff_base_ms > 0 {
            let base = config.backoff_base_ms * (1u64 << (attempt - 1).min(16));
            // +/-20% jitter, deterministic per (seed, attempt).
            let mut rng = ChaCha8Rng::seed_from_u64(
                fnv1a(query.user_prompt.as_bytes()) ^ run_seed ^ u64::from(attempt),
            );
            let jitter = 0.8 + 0.4 * rng.gen::<f64>();
            std::thread::sleep(Duration::from_millis((base as f64 * jitter) as u64));
        }
        match transport.send(&request, query, run_seed) {
            Ok(text) if !text.trim().is_empty() => {
                let word_count = word_count(&text);
                return InteractionRecord {
                    query: query.clone(),
                    model_id: model_id.to_string(),
                    run_seed,
                    response_text: text,
                    status: RecordStatus::Ok,
                    word_count,
                    error: None,
                };
            }
            Ok(_) => last_error = "empty response".to_string(),
            Err(e) => last_error = e.to_string(),
        }
    }
    InteractionRecord {
        query: query.clone(),
        model_id: model_id.to_string(),
        run_seed,
        response_text: String::new(),
        status: RecordStatus::FailedPlaceholder,
        word_count: 0,
        error: Some(last_error),
    }
}

/// Runs one generation campaign: for each configured seed, a fresh batch of
/// `per_seed_count` queries is built and completed. Failed placeholders are
/// retained; the corpus store drops them later. Results keep (seed, index)
/// order regardless of request concurrency.
pub fn run_campaign<F>(
    batch_builder: F,
    config: &GenerationConfig,
    model_id: &str,
    transport: &dyn Transport,
) -> Result<Vec<InteractionRecord>>
where
    F: Fn(u64) -> Result<Vec<ReferenceQuery>>,
{
    config.validate()?;
    let mut records = Vec::with_capacity(config.seeds.len() * config.per_seed_count);
    for &seed in &config.seeds {
        let batch = batch_builder(seed)?;
        let batch_records = parallel::with_bounded_pool(config.concurrency, || {
            parallel::par_map(&batch, |query| {
                complete(query, config, model_id, seed, transport)
            })
        });
        records.extend(batch_records);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// HTTP transport
// ---------------------------------------------------------------------------

pub struct HttpTransport {
    endpoint_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

impl HttpTransport {
    pub fn new(endpoint_url: &str, api_key: Option<String>, timeout_secs: u64) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| AuditError::Transport(e.to_string()))?;
        Ok(HttpTransport {
            endpoint_url: endpoint_url.to_string(),
            api_key,
            client,
        })
    }
}

impl Transport for HttpTransport {
    fn send(
        &self,
        request: &ChatRequest,
        _query: &ReferenceQuery,
        _run_seed: u64,
    ) -> Result<String> {
        let mut req = self.client.post(&self.endpoint_url).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let response = req
            .send()
            .map_err(|e| AuditError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(AuditError::Transport(format!("HTTP {status}: {body}")));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| AuditError::Transport(e.to_string()))?;
        parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| AuditError::Transport("response carried no choices".to_string()))
    }
}

// ---------------------------------------------------------------------------
// Mock generators
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockProfile {
    NullBias,
    DearSexBias,
    RoleAccommodation,
}

impl MockProfile {
    pub fn parse(s: &str) -> Option<MockProfile> {
        match s {
            "null_bias" => Some(MockProfile::NullBias),
            "dear_sex_bias" => Some(MockProfile::DearSexBias),
            "role_accommodation" => Some(MockProfile::RoleAccommodation),
            _ => None,
        }
    }
}

/// "Dear" opening rates for the biased mock.
pub const DEAR_RATE_FEMALE: f64 = 0.662;
pub const DEAR_RATE_MALE: f64 = 0.484;

/// Bayes-optimal sex-classification accuracy of the dear_sex_bias corpus:
/// 0.5 * 0.662 + 0.5 * (1 - 0.484).
pub const DEAR_BIAS_BAYES_ACCURACY: f64 = 0.5 * DEAR_RATE_FEMALE + 0.5 * (1.0 - DEAR_RATE_MALE);

/// Per-patron-type probability of closing with "Regards" instead of "Thanks"
/// in the role_accommodation mock. Order follows [`PatronType::ALL`].
pub const REGARDS_PROB: [f64; 6] = [0.70, 0.90, 0.60, 0.20, 0.80, 0.50];
/// Per-patron-type probability of including the research-guide sentence.
pub const RESEARCH_PROB: [f64; 6] = [0.30, 0.80, 0.70, 0.10, 0.20, 0.60];

const FILLER_LEXICON: [&str; 40] = [
    "archive", "branch", "bulletin", "catalog", "circulation", "citation", "collection",
    "database", "digital", "directory", "document", "edition", "entry", "exhibit", "folio",
    "gateway", "guide", "holdings", "index", "journal", "lending", "listing", "manuscript",
    "microfilm", "newsletter", "notation", "overview", "periodical", "preservation", "record",
    "reference", "repository", "reserve", "resource", "schedule", "section", "shelf", "stack",
    "subject", "volume",
];

const BOILERPLATE: &str = "Thank you for contacting the library. I have looked into your \
question and gathered some starting points for you. Our catalog lists several relevant \
items, and I can request copies from our partner institutions if needed. Please let me \
know if you would like me to set aside materials at the front desk.";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic mock transport. The per-call RNG is derived from the
/// profile seed and the request content, so results are identical under any
/// call order or concurrency.
pub struct MockTransport {
    profile: MockProfile,
    rng_seed: u64,
}

impl MockTransport {
    pub fn new(profile: MockProfile, rng_seed: u64) -> Self {
        MockTransport { profile, rng_seed }
    }

    fn call_rng(&self, query: &ReferenceQuery, request: &ChatRequest, run_seed: u64) -> ChaCha8Rng {
        let mut key = fnv1a(query.user_prompt.as_bytes());
        for m in &request.messages {
            key ^= fnv1a(m.content.as_bytes()).rotate_left(17);
        }
        key ^= run_seed.wrapping_mul(0xd1b54a32d192ed03);
        ChaCha8Rng::seed_from_u64(key ^ self.rng_seed.wrapping_mul(0x9e3779b97f4a7c15))
    }

    fn filler(rng: &mut ChaCha8Rng) -> String {
        let words: Vec<&str> = (0..8)
            .map(|_| FILLER_LEXICON[rng.gen_range(0..FILLER_LEXICON.len())])
            .collect();
        format!("For your notes, the relevant keywords are: {}.", words.join(", "))
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &ChatRequest, query: &ReferenceQuery, run_seed: u64) -> Result<String> {
        let mut rng = self.call_rng(query, request, run_seed);
        let patron = &query.patron;
        match self.profile {
            MockProfile::NullBias => {
                let filler = Self::filler(&mut rng);
                Ok(format!(
                    "Hello,\n\n{BOILERPLATE}\n\n{filler}\n\nBest regards,\nThe Library"
                ))
            }
            MockProfile::DearSexBias => {
                let dear_rate = match patron.sex {
                    Sex::Female => DEAR_RATE_FEMALE,
                    Sex::Male => DEAR_RATE_MALE,
                };
                let opening = if rng.gen::<f64>() < dear_rate {
                    format!("Dear {} {},", patron.first_name, patron.surname)
                } else {
                    "Hello,".to_string()
                };
                let filler = Self::filler(&mut rng);
                Ok(format!(
                    "{opening}\n\n{BOILERPLATE}\n\n{filler}\n\nBest regards,\nThe Library"
                ))
            }
            MockProfile::RoleAccommodation => {
                let type_idx = PatronType::ALL
                    .iter()
                    .position(|t| *t == patron.patron_type)
                    .unwrap();
                let research = if rng.gen::<f64>() < RESEARCH_PROB[type_idx] {
                    "\n\nI can also point you to our research guides on this topic."
                } else {
                    ""
                };
                let closing = if rng.gen::<f64>() < REGARDS_PROB[type_idx] {
                    "Regards,"
                } else {
                    "Thanks,"
                };
                let filler = Self::filler(&mut rng);
                Ok(format!(
                    "Hello,\n\n{BOILERPLATE}{research}\n\n{filler}\n\n{closing}\nThe Library"
                ))
            }
        }
    }
}

/// A transport that always fails; used to exercise the retry path.
pub struct FailingTransport;

impl Transport for FailingTransport {
    fn send(&self, _request: &ChatRequest, _query: &ReferenceQuery, _run_seed: u64) -> Result<String> {
        Err(AuditError::Transport("simulated outage".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::{Race, SyntheticPatron};
    use crate::query::{bundled_roster, fill_template, TemplateId};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn sample_query(sex: Sex, first: &str, last: &str) -> ReferenceQuery {
        let patron = SyntheticPatron {
            first_name: first.to_string(),
            surname: last.to_string(),
            sex,
            race: Race::White,
            patron_type: PatronType::Undergraduate,
        };
        fill_template(TemplateId::Subject, &bundled_roster()[0], &patron).unwrap()
    }

    struct EchoTransport(&'static str);
    impl Transport for EchoTransport {
        fn send(&self, _r: &ChatRequest, _q: &ReferenceQuery, _s: u64) -> Result<String> {
            Ok(self.0.to_string())
        }
    }

    struct CountingTransport(AtomicU32);
    impl Transport for CountingTransport {
        fn send(&self, _r: &ChatRequest, _q: &ReferenceQuery, _s: u64) -> Result<String> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(AuditError::Transport("down".to_string()))
        }
    }

    fn fast_config() -> GenerationConfig {
        GenerationConfig {
            backoff_base_ms: 0,
            ..GenerationConfig::default()
        }
    }

    #[test]
    fn echo_mock_yields_ok_record() {
        let q = sample_query(Sex::Female, "Mary", "Smith");
        let rec = complete(&q, &fast_config(), "echo", 1, &EchoTransport("OK"));
        assert_eq!(rec.status, RecordStatus::Ok);
        assert_eq!(rec.response_text, "OK");
        assert_eq!(rec.word_count, 1);
    }

    #[test]
    fn retries_exhaust_after_exactly_four_attempts() {
        let q = sample_query(Sex::Female, "Mary", "Smith");
        let transport = CountingTransport(AtomicU32::new(0));
        let rec = complete(&q, &fast_config(), "down", 1, &transport);
        assert_eq!(rec.status, RecordStatus::FailedPlaceholder);
        assert_eq!(transport.0.load(Ordering::SeqCst), 4);
        assert!(rec.error.as_deref().unwrap().contains("down"));
    }

    #[test]
    fn no_system_role_prepends_prompt() {
        let q = sample_query(Sex::Male, "John", "Smith");
        let config = GenerationConfig {
            supports_system_role: false,
            ..fast_config()
        };
        let request = build_request(&q, &config, "m", 1);
        assert_eq!(request.messages.len(), 1);
        assert_eq!(request.messages[0].role, "user");
        assert!(request.messages[0]
            .content
            .starts_with("You are a helpful, respectful, and honest librarian"));
    }

    #[test]
    fn system_role_splits_messages() {
        let q = sample_query(Sex::Male, "John", "Smith");
        let request = build_request(&q, &fast_config(), "m", 1);
        assert_eq!(request.messages.len(), 2);
        assert_eq!(request.messages[0].role, "system");
    }

    #[test]
    fn seed_param_only_sent_when_configured() {
        let q = sample_query(Sex::Male, "John", "Smith");
        let off = build_request(&q, &fast_config(), "m", 9);
        assert_eq!(off.seed, None);
        let on = build_request(
            &q,
            &GenerationConfig {
                send_seed_param: true,
                ..fast_config()
            },
            "m",
            9,
        );
        assert_eq!(on.seed, Some(9));
        let wire = serde_json::to_value(&off).unwrap();
        assert!(wire.get("seed").is_none());
    }

    #[test]
    fn mock_is_deterministic_per_seed() {
        let q = sample_query(Sex::Female, "Mary", "Smith");
        let t = MockTransport::new(MockProfile::DearSexBias, 7);
        let cfg = fast_config();
        let req = build_request(&q, &cfg, "mock", 1);
        let a = t.send(&req, &q, 1).unwrap();
        let b = t.send(&req, &q, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dear_rate_tracks_female_probability() {
        let t = MockTransport::new(MockProfile::DearSexBias, 3);
        let cfg = fast_config();
        let mut hits = 0usize;
        let n = 10_000;
        for i in 0..n {
            let q = sample_query(Sex::Female, &format!("Name{i}"), "Smith");
            let req = build_request(&q, &cfg, "mock", 1);
            let text = t.send(&req, &q, 1).unwrap();
            if text.starts_with("Dear ") {
                hits += 1;
            }
        }
        let rate = hits as f64 / n as f64;
        assert!((0.652..=0.672).contains(&rate), "rate={rate}");
    }

    #[test]
    fn bayes_accuracy_constant() {
        assert!((DEAR_BIAS_BAYES_ACCURACY - 0.589).abs() < 1e-12);
    }

    #[test]
    fn failing_campaign_records_placeholders() {
        let roster = bundled_roster();
        let cfg = GenerationConfig {
            seeds: vec![1],
            per_seed_count: 10,
            backoff_base_ms: 0,
            ..GenerationConfig::default()
        };
        let records = run_campaign(
            |_| {
                Ok((0..10)
                    .map(|i| {
                        let patron = SyntheticPatron {
                            first_name: format!("P{i}"),
                            surname: "Smith".to_string(),
                            sex: Sex::Male,
                            race: Race::White,
                            patron_type: PatronType::Staff,
                        };
                        fill_template(TemplateId::Subject, &roster[0], &patron).unwrap()
                    })
                    .collect())
            },
            &cfg,
            "down",
            &FailingTransport,
        )
        .unwrap();
        assert_eq!(records.len(), 10);
        assert!(records
            .iter()
            .all(|r| r.status == RecordStatus::FailedPlaceholder));
    }

    #[test]
    fn record_round_trips_through_json() {
        let q = sample_query(Sex::Female, "Mary", "Smith");
        let rec = complete(&q, &fast_config(), "echo", 1, &EchoTransport("Hi there"));
        let json = serde_json::to_string(&rec).unwrap();
        let back: InteractionRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.response_text, rec.response_text);
        assert_eq!(back.query, rec.query);
        assert_eq!(back.word_count, 2);
    }
}
