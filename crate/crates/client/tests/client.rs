use std::sync::Arc;

use moncat_client::{Client, ClientError};
use moncat_core::networks::small_network;
use moncat_server::{router, AppState};
use tokio::net::TcpListener;

async fn start() -> Client {
    let state = Arc::new(AppState::new(vec![("m".to_string(), small_network(2, 4))], None).unwrap());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state, None);
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Client::new(format!("http://{}/", addr))
}

#[tokio::test]
async fn trailing_slash_is_trimmed() {
    let client = start().await;
    assert!(!client.base().ends_with('/'));
    assert_eq!(client.health().await.unwrap().status, "ok");
}

#[tokio::test]
async fn server_errors_carry_status_and_message() {
    let client = start().await;
    match client.create_session("nope", "fixed").await {
        Err(ClientError::Http { status, message }) => {
            assert_eq!(status, 404);
            assert!(message.contains("nope"));
        }
        other => panic!("unexpected {:?}", other),
    }
}

#[tokio::test]
async fn full_session_round_trip() {
    let client = start().await;
    let created = client.create_session("m", "fixed").await.unwrap();
    assert_eq!(created.next_question.as_ref().unwrap().id, 0);
    let mut done = created.done;
    let mut q = 0;
    while !done {
        let resp = client.answer(&created.session_id, q, 1).await.unwrap();
        done = resp.done;
        q += 1;
    }
    let log = client.session(&created.session_id).await.unwrap();
    assert_eq!(log.steps.len(), 5);
    assert_eq!(log.steps[4].remaining.most_probable, 4);
}

#[tokio::test]
async fn unreachable_server_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let client = Client::new(format!("http://{}", addr));
    let err = client.health().await.unwrap_err();
    assert!(matches!(err, ClientError::Transport(_)));
    assert_eq!(err.status(), None);
}
