#![allow(dead_code)]

use ekicl_core::annotator::Category;
use ekicl_core::decomposer::{ContributionProfile, StandardProfile};
use ekicl_core::ensemble::MetricsReport;
use ekicl_core::prompting::{ConfigClass, Demo, FeatHint, LabelPair, PromptSpec, Vote};
use ekicl_core::retrieval::Retrievable;
use ekicl_core::Class;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

// ---- oracles ----

/// Brute-force ND: look up each candidate category's position in the query by scanning.
pub fn nd_oracle(query: &[Category; 6], candidate: &[Category; 6]) -> f64 {
    let mut total = 0.0;
    for (i0, c) in candidate.iter().enumerate() {
        let i = (i0 + 1) as f64;
        let mut t = 0.0;
        for (j0, q) in query.iter().enumerate() {
            if q == c {
                t = (j0 + 1) as f64;
            }
        }
        total += (t - i).abs() / i;
    }
    total
}

/// `S_feat` by definition: `Σ_k ω_k · softmax(R_std)[pos of k in C_std]`.
pub fn s_feat_oracle(omega: &[f64; 6], std: &StandardProfile) -> f64 {
    let z: f64 = std.array.iter().map(|x| x.exp()).sum();
    let mut s = 0.0;
    for (pos, cat) in std.rank.iter().enumerate() {
        s += omega[cat.index()] * std.array[pos].exp() / z;
    }
    s
}

pub fn vote_oracle(votes: &[Vote], s_conf: f64) -> (Class, bool) {
    let mut ad = 0;
    let mut hc = 0;
    for v in votes {
        match v {
            Vote::Ad => ad += 1,
            Vote::Hc => hc += 1,
            Vote::Abstain => {}
        }
    }
    if ad > hc {
        (Class::Ad, false)
    } else if hc > ad {
        (Class::Hc, false)
    } else if s_conf >= 0.5 {
        (Class::Ad, true)
    } else {
        (Class::Hc, true)
    }
}

/// Confusion-matrix oracle returning (acc, pre, rec, f1, tp, fp, fn, tn).
pub fn metrics_oracle(pairs: &[(Class, Class)]) -> MetricsReport {
    let mut m = [[0usize; 2]; 2]; // [pred][gold], index 0 = AD
    for (p, g) in pairs {
        let pi = if *p == Class::Ad { 0 } else { 1 };
        let gi = if *g == Class::Ad { 0 } else { 1 };
        m[pi][gi] += 1;
    }
    let (tp, fp, fn_, tn) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    let div = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 * 100.0 / b as f64) };
    let pre = div(tp, tp + fp);
    let rec = div(tp, tp + fn_);
    let f1 = if tp == 0 { None } else { Some(200.0 * tp as f64 / (2 * tp + fp + fn_) as f64) };
    MetricsReport {
        acc: div(tp + tn, pairs.len()),
        pre,
        rec,
        f1,
        tp,
        fp,
        fn_,
        tn,
    }
}

// ---- retrieval stand-in ----

pub struct Item {
    pub id: String,
    pub profile: ContributionProfile,
    pub emb: Vec<f64>,
    pub label: Option<Class>,
}

impl Retrievable for Item {
    fn id(&self) -> &str {
        &self.id
    }
    fn profile(&self) -> &ContributionProfile {
        &self.profile
    }
    fn embedding(&self) -> &[f64] {
        &self.emb
    }
    fn label(&self) -> Option<Class> {
        self.label
    }
}

// ---- local HTTP server ----

pub struct TestServer {
    pub base_url: String,
    pub bodies: Arc<Mutex<Vec<String>>>,
    pub max_concurrent: Arc<AtomicUsize>,
    pub hits: Arc<AtomicUsize>,
    pub auth: Arc<Mutex<Vec<Option<String>>>>,
}

/// Serves chat completions. Prompts containing `FAIL` always get HTTP 500,
/// prompts containing `FLAKY` get 500 on their first attempt only; every
/// other request is answered with `answer`.
/// Each request is held for `hold` so overlapping requests are observable.
pub fn spawn_server(hold: Duration, answer: &'static str) -> TestServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let max_concurrent = Arc::new(AtomicUsize::new(0));
    let hits = Arc::new(AtomicUsize::new(0));
    let auth = Arc::new(Mutex::new(Vec::new()));
    let state = Arc::new(State {
        bodies: bodies.clone(),
        max_concurrent: max_concurrent.clone(),
        hits: hits.clone(),
        auth: auth.clone(),
        current: AtomicUsize::new(0),
        seen: Mutex::new(HashMap::new()),
    });
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let state = state.clone();
            std::thread::spawn(move || handle(stream, hold, answer, &state));
        }
    });
    TestServer {
        base_url,
        bodies,
        max_concurrent,
        hits,
        auth,
    }
}

struct State {
    bodies: Arc<Mutex<Vec<String>>>,
    max_concurrent: Arc<AtomicUsize>,
    hits: Arc<AtomicUsize>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
    current: AtomicUsize,
    seen: Mutex<HashMap<String, usize>>,
}

fn handle(mut stream: TcpStream, hold: Duration, answer: &str, st: &State) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    let mut auth = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            } else if k.eq_ignore_ascii_case("authorization") {
                auth = Some(v.trim().to_string());
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    let body = String::from_utf8(body).unwrap();

    st.hits.fetch_add(1, Ordering::SeqCst);
    let now = st.current.fetch_add(1, Ordering::SeqCst) + 1;
    st.max_concurrent.fetch_max(now, Ordering::SeqCst);
    std::thread::sleep(hold);
    st.current.fetch_sub(1, Ordering::SeqCst);

    let attempt = {
        let mut seen = st.seen.lock().unwrap();
        let n = seen.entry(body.clone()).or_insert(0);
        *n += 1;
        *n
    };
    let fail = body.contains("FAIL") || (body.contains("FLAKY") && attempt == 1);
    let (status, payload) = if fail {
        (500, "{\"error\":\"injected\"}".to_string())
    } else {
        let reply = serde_json::json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": answer}}]
        });
        (200, reply.to_string())
    };
    st.bodies.lock().unwrap().push(body);
    st.auth.lock().unwrap().push(auth);
    let resp = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.write_all(resp.as_bytes());
}

// ---- canonical prompt specs ----

fn demo(text: &str, label: &str) -> Demo {
    Demo {
        text: text.into(),
        label: label.into(),
    }
}

/// Specs whose renders are committed under `tests/golden/prompts/<name>.txt`.
pub fn canonical_specs() -> Vec<(&'static str, PromptSpec)> {
    let bad_good = LabelPair::default();

    let zero = PromptSpec::new("the boy is on the stool", bad_good.clone());

    let mut one = PromptSpec::new("the mother is washing dishes", bad_good.clone());
    one.demos = vec![demo("um she is taking it", "Bad")];

    let mut full = PromptSpec::new("uh it is uh falling", bad_good);
    full.demos = vec![demo("the girl is reaching for the jar", "Good")];
    full.conf_hint = Some(0.734);
    full.feat_hint = Some(FeatHint {
        query: 0.5,
        demos: vec![0.123456],
    });

    let alz = LabelPair::new("Alzheimer", "Control", ConfigClass::Aligned).unwrap();
    let mut custom = PromptSpec::new("the stool is tipping", alz);
    custom.demos = vec![
        demo("um he is um", "Alzheimer"),
        demo("the water is running over the sink", "Control"),
    ];
    custom.conf_hint = Some(0.08);

    let dem = LabelPair::new("Dementia", "Healthy", ConfigClass::Aligned).unwrap();
    let mut three = PromptSpec::new("they are um doing something", dem);
    three.demos = vec![
        demo("well it is there", "Dementia"),
        demo("the boy is taking a cookie from the jar", "Healthy"),
        demo("the mother is drying a plate", "Healthy"),
    ];
    three.feat_hint = Some(FeatHint {
        query: 1.0 / 3.0,
        demos: vec![0.9, 0.025, 1.0],
    });

    vec![
        ("zero_shot", zero),
        ("one_demo", one),
        ("full_hints", full),
        ("custom_pair_conf", custom),
        ("feat_three_demos", three),
    ]
}
