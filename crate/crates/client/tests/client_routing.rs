//! Client behaviour against a scripted fake service.

use serde_json::json;
use sda_client::protocol::{read_frame, write_frame, Event, Reply, Request};
use sda_client::{Client, ClientError};
use tokio::net::TcpListener;

async fn fake_service<F>(script: F) -> std::net::SocketAddr
where
    F: FnOnce(Vec<Request>) -> Vec<Vec<u8>> + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        let (mut s, _) = listener.accept().await.unwrap();
        let mut reqs = Vec::new();
        for _ in 0..3 {
            let body = read_frame(&mut s).await.unwrap().unwrap();
            reqs.push(serde_json::from_slice(&body).unwrap());
        }
        for out in script(reqs) {
            write_frame(&mut s, &out).await.unwrap();
        }
    });
    addr
}

#[tokio::test]
async fn replies_pair_by_id_out_of_order() {
    let addr = fake_service(|reqs| {
        let mut out = Vec::new();
        for r in reqs.iter().rev() {
            let ev = Event { v: 1, id: r.id, event: "progress".into(), data: json!({ "cmd": r.cmd }) };
            out.push(serde_json::to_vec(&ev).unwrap());
            let reply = if r.cmd == "bad" {
                Reply::error(Some(r.id), "unknown_command", "bad")
            } else {
                Reply::ok(Some(r.id), json!({ "echo": r.cmd }))
            };
            out.push(serde_json::to_vec(&reply).unwrap());
        }
        out
    })
    .await;
    let c = Client::connect(addr).await.unwrap();
    let mut seen = Vec::new();
    let (a, b, d) = tokio::join!(
        c.call("first", json!({})),
        c.call_with_progress("second", json!({}), |p| seen.push(p.data)),
        c.call("bad", json!({})),
    );
    assert_eq!(a.unwrap(), json!({ "echo": "first" }));
    assert_eq!(b.unwrap(), json!({ "echo": "second" }));
    assert_eq!(seen, vec![json!({ "cmd": "second" })]);
    let e = d.unwrap_err();
    assert_eq!(e.code(), Some("unknown_command"));
}

#[tokio::test]
async fn closed_connection_fails_pending_calls() {
    let addr = fake_service(|_| Vec::new()).await;
    let c = Client::connect(addr).await.unwrap();
    let (a, b, d) = tokio::join!(c.call("x", json!({})), c.call("y", json!({})), c.call("z", json!({})));
    for r in [a, b, d] {
        assert!(matches!(r, Err(ClientError::Closed)));
    }
}
