use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use phrasedet_backends::wire::{
    parse_record, to_canonical, AlignRequest, CaptionRequest, DetectorRequest, RecordKind, SCHEMA_VERSION,
};
use phrasedet_backends::{
    generate_scene, AlignerBackend, BackendError, Captioner, Detector, HttpBackend, HttpConfig, MockBackend, SceneSpec,
};
use phrasedet_core::{build_prompt_set, ClassCatalog, ClassPhrases, PhraseLibrary};

type Handler = dyn Fn(&str, &str) -> (u16, String) + Send + Sync;

/// Minimal one-request-per-connection HTTP/1.1 server.
fn serve(handler: Arc<Handler>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let handler = handler.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
                let mut len = 0usize;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h == "\r\n" || h.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = h.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let (status, out) = handler(&path, &String::from_utf8(body).unwrap());
                let _ = write!(
                    stream,
                    "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    status,
                    out.len(),
                    out
                );
            });
        }
    });
    format!("http://{}", addr)
}

fn config(url: String) -> HttpConfig {
    HttpConfig {
        base_url: url,
        timeout_secs: 5.0,
        retries: 2,
        backoff_ms: 1,
        max_in_flight: 4,
    }
}

fn mock() -> Arc<MockBackend> {
    Arc::new(MockBackend::new(generate_scene(&SceneSpec::default()).unwrap()).unwrap())
}

fn mock_handler(m: Arc<MockBackend>) -> Arc<Handler> {
    Arc::new(move |path: &str, body: &str| {
        let out = match path {
            "/v1/detect" => to_canonical(&m.detect(&parse_record(RecordKind::DetectorRequest, body).unwrap()).unwrap()),
            "/v1/caption" => to_canonical(&m.caption(&parse_record(RecordKind::CaptionRequest, body).unwrap()).unwrap()),
            "/v1/align" => to_canonical(&m.align(&parse_record(RecordKind::AlignRequest, body).unwrap()).unwrap()),
            _ => return (404, "{}".to_string()),
        };
        (200, out.unwrap())
    })
}

fn detect_request(m: &MockBackend) -> DetectorRequest {
    let s = m.scene();
    let lib = PhraseLibrary::new(
        s.classes
            .iter()
            .map(|c| ClassPhrases::new(c.class_id, c.class_name.clone(), c.description.clone(), c.attributes.clone()).unwrap())
            .collect(),
    )
    .unwrap();
    let cat = ClassCatalog::new(s.classes.iter().map(|c| (c.class_id, c.class_name.clone()))).unwrap();
    let img = &s.images[2];
    DetectorRequest::new(img.image_id, img.file_name.clone(), img.width, img.height, &build_prompt_set(&lib, &cat).unwrap())
        .unwrap()
}

fn align_request() -> AlignRequest {
    AlignRequest {
        schema_version: SCHEMA_VERSION,
        image_id: 1,
        image_ref: "0001.png".into(),
        det_index: 0,
        class_id: 1,
        bbox: [0.0, 0.0, 10.0, 10.0],
        description: "d".into(),
    }
}

#[test]
fn http_matches_direct_mock() {
    let m = mock();
    let http = HttpBackend::new(config(serve(mock_handler(m.clone())))).unwrap();
    let req = detect_request(&m);
    assert_eq!(http.detect(&req).unwrap(), m.detect(&req).unwrap());
    let cap = CaptionRequest {
        schema_version: SCHEMA_VERSION,
        class_id: 2,
        class_name: m.scene().classes[1].class_name.clone(),
        domain: "steel surface".into(),
        image_ref: "s.png".into(),
        bbox: [0.0, 0.0, 5.0, 5.0],
        instruction: "i".into(),
    };
    assert_eq!(http.caption(&cap).unwrap(), m.caption(&cap).unwrap());
    assert_eq!(http.align(&align_request()).unwrap(), m.align(&align_request()).unwrap());
}

#[test]
fn schema_violation_names_field_and_is_not_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let url = serve(Arc::new(move |_: &str, _: &str| {
        h.fetch_add(1, Ordering::SeqCst);
        (
            200,
            r#"{"box":[0,0,10,10],"class_id":1,"description":"d","det_index":0,"image_id":1,"schema_version":1,"score":1.7}"#
                .to_string(),
        )
    }));
    let http = HttpBackend::new(config(url)).unwrap();
    match http.align(&align_request()) {
        Err(BackendError::Protocol { field, .. }) => assert_eq!(field, "score"),
        other => panic!("{:?}", other),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn server_errors_are_retried_then_reported_unavailable() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let inner = mock_handler(mock());
    let url = serve(Arc::new(move |p: &str, b: &str| {
        if h.fetch_add(1, Ordering::SeqCst) < 2 {
            (503, "{}".to_string())
        } else {
            inner(p, b)
        }
    }));
    let http = HttpBackend::new(config(url.clone())).unwrap();
    assert!(http.align(&align_request()).is_ok());
    assert_eq!(hits.load(Ordering::SeqCst), 3);

    hits.store(0, Ordering::SeqCst);
    let once = HttpBackend::new(HttpConfig {
        retries: 1,
        ..config(url)
    })
    .unwrap();
    assert!(matches!(once.align(&align_request()), Err(BackendError::Unavailable { .. })));
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn refused_connection_is_unavailable() {
    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let http = HttpBackend::new(config(format!("http://{}", addr))).unwrap();
    assert!(matches!(http.align(&align_request()), Err(BackendError::Unavailable { .. })));
}

#[test]
fn unknown_endpoint_is_not_found() {
    let url = serve(Arc::new(|_: &str, _: &str| (404, "{}".to_string())));
    let http = HttpBackend::new(config(url)).unwrap();
    assert!(matches!(http.align(&align_request()), Err(BackendError::NotFound { .. })));
}

#[test]
fn in_flight_requests_are_bounded() {
    let now = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (n, p) = (now.clone(), peak.clone());
    let inner = mock_handler(mock());
    let url = serve(Arc::new(move |path: &str, body: &str| {
        let cur = n.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(cur, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(60));
        let out = inner(path, body);
        n.fetch_sub(1, Ordering::SeqCst);
        out
    }));
    let http = Arc::new(
        HttpBackend::new(HttpConfig {
            max_in_flight: 2,
            ..config(url)
        })
        .unwrap(),
    );
    let threads: Vec<_> = (0..8)
        .map(|_| {
            let http = http.clone();
            std::thread::spawn(move || http.align(&align_request()).unwrap())
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    assert!(peak.load(Ordering::SeqCst) <= 2);
    assert!(peak.load(Ordering::SeqCst) >= 1);
}

#[test]
fn rejects_unsupported_urls() {
    assert!(HttpBackend::new(config("https://example.org".into())).is_err());
}
