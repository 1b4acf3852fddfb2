use std::net::SocketAddr;

use maskmpc::api::{FitReluRequest, PredictRequest};
use maskmpc::nn::Network;
use maskmpc::runtime::TransportKind;
use maskmpc::{Backend, TruncMode};
use maskmpc_client::{Client, ClientError};

fn spawn_server() -> SocketAddr {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || runtime.block_on(maskmpc_service::serve(listener)));
    addr
}

#[test]
fn client_talks_to_service() {
    let client = Client::new(&format!("http://{}", spawn_server())).unwrap();
    assert_eq!(client.health().unwrap().status, "ok");
    assert!(client.network(Network::A).unwrap().parameter_count > 784 * 128);

    let req = PredictRequest {
        network: Network::LogReg,
        backend: Backend::Crt,
        trunc: TruncMode::Interactive,
        images: None,
        synthetic: 2,
        seed: Some(8),
        session: Some(31),
        weights_path: None,
        transport: TransportKind::InMemory,
        timeout_secs: 60,
    };
    let resp = client.predict(&req).unwrap();
    assert_eq!(resp.labels.len(), 2);
    for (s, f) in resp.logits.data.iter().zip(&resp.float_logits.data) {
        assert!((s - f).abs() < 1e-6);
    }
    assert_eq!(client.session_stats(31).unwrap(), resp.stats);
    assert!(client.session_stats_csv(31).unwrap().lines().count() > 1);

    let err = client.fit_relu(&FitReluRequest { degree: 0, interval: (-3.0, 3.0) }).unwrap_err();
    assert!(matches!(err, ClientError::Server { status: 400, .. }), "{err}");
    assert!(matches!(client.session_stats(99), Err(ClientError::Server { status: 404, .. })));
}
