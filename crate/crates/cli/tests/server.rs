use std::net::TcpStream;
use std::sync::Arc;

use latentmap::maps::clamp_action;
use latentmap::reversibility::rollout_clamped;
use latentmap::sim::ArmModel;
use latentmap::{ActionModel, Architecture, Family, Normalization};
use latentmap_cli::server::Server;
use latentmap_cli::session::{logged_states, read_log, replay, ModelEntry, ModelStore, ServerFrame};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{connect, Message, WebSocket};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn store() -> ModelStore {
    let mut arch = Architecture::new(Family::Scn, 5, 2).with_width(8);
    arch.decoder_hidden = vec![8, 8];
    arch.feature_hidden = vec![8];
    arch.features = 8;
    let scn = ActionModel::new(arch, Normalization::identity(5), 4).unwrap();
    let ae = ActionModel::new(Architecture::new(Family::Ae, 5, 2).with_width(8), Normalization::identity(5), 5).unwrap();
    let arm = ArmModel::planar5();
    let entries = vec![
        ModelEntry { name: "scn".into(), model: Arc::new(scn), nu: 0.05 },
        ModelEntry { name: "ae".into(), model: Arc::new(ae), nu: 0.05 },
    ];
    ModelStore::new(entries, arm.clone(), arm.home()).unwrap()
}

fn recv(ws: &mut Client) -> ServerFrame {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => {
                assert!(!t.contains('\n'));
                return serde_json::from_str(t.as_str()).unwrap();
            }
            Message::Ping(_) | Message::Pong(_) => continue,
            other => panic!("unexpected message {other:?}"),
        }
    }
}

fn send(ws: &mut Client, text: &str) -> ServerFrame {
    ws.send(Message::text(text)).unwrap();
    recv(ws)
}

fn state(frame: ServerFrame) -> Vec<f64> {
    match frame {
        ServerFrame::State { x, .. } => x,
        other => panic!("expected a state frame, got {other:?}"),
    }
}

#[test]
fn sessions_over_websocket() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::bind("127.0.0.1:0", store(), Some(dir.path().to_path_buf())).unwrap();
    let addr = server.local_addr().unwrap();
    let _accept = server.spawn();
    let url = format!("ws://{addr}");
    let reference = store();

    let (mut a, _) = connect(&url).unwrap();
    let (mut b, _) = connect(&url).unwrap();
    let start = match recv(&mut a) {
        ServerFrame::Hello { models, model, x, links, .. } => {
            assert_eq!(models, vec!["scn", "ae"]);
            assert_eq!(model, "scn");
            assert_eq!(links.len(), 6);
            x
        }
        other => panic!("{other:?}"),
    };
    assert!(matches!(recv(&mut b), ServerFrame::Hello { .. }));
    assert_eq!(start, reference.start);

    let actions: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin() * 1.5, 0.4]).collect();
    let mut last = start.clone();
    for (i, act) in actions.iter().enumerate() {
        last = state(send(&mut a, &serde_json::json!({"type": "action", "a": act}).to_string()));
        if i % 10 == 0 {
            assert!(matches!(send(&mut a, "{\"type\":\"action\",\"a\":[1]}"), ServerFrame::Error { .. }));
            assert!(matches!(send(&mut a, "garbage"), ServerFrame::Error { .. }));
        }
    }
    let e = &reference.entries[0];
    let clamped: Vec<Vec<f64>> = actions.iter().map(|x| clamp_action(e.model.action_space(), x)).collect();
    let traj = rollout_clamped(&e.model.deployed(), &start, &clamped, e.nu, Some(&reference.arm.limits)).unwrap();
    assert_eq!(last, traj.last());

    // The other session is unaffected.
    assert_eq!(state(send(&mut b, r#"{"type":"action","a":[0,0]}"#)), start);

    assert!(matches!(send(&mut a, r#"{"type":"select_model","name":"missing"}"#), ServerFrame::Error { .. }));
    match send(&mut a, r#"{"type":"select_model","name":"ae"}"#) {
        ServerFrame::State { model, .. } => assert_eq!(model, "ae"),
        other => panic!("{other:?}"),
    }
    state(send(&mut a, r#"{"type":"action","a":[0.5,-0.5]}"#));
    assert_eq!(state(send(&mut a, r#"{"type":"reset"}"#)), start);
    state(send(&mut a, r#"{"type":"action","a":[-0.2,0.9]}"#));
    a.close(None).unwrap();
    while a.read().is_ok() {}
    b.close(None).unwrap();
    while b.read().is_ok() {}

    let mut logs: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    logs.sort();
    assert_eq!(logs.len(), 2);
    let log = read_log(&logs[0]).unwrap();
    assert_eq!(log.len(), 1 + 30 + 1 + 1 + 1 + 1);
    let replayed = replay(&reference, &log).unwrap();
    assert_eq!(replayed, logged_states(&log));
    assert_eq!(replayed[30], last);
}
