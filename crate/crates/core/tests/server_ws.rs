use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use holosync::model::{attr, AttrValue, DeviceId, DeviceKind, Pose, Presence, ScreenExtents};
use holosync::pointcloud::PackedPoint;
use holosync::protocol::{
    decode_control, encode_control, encode_stream_frame, DeviceDescriptor, Envelope, ErrorCode, Payload,
    StreamFrameHeader, StreamKind, StreamPayload,
};
use holosync::server::{load_session, start, RunningServer, ServerConfig};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const WAIT: Duration = Duration::from_secs(5);

async fn server(data_dir: Option<std::path::PathBuf>) -> RunningServer {
    start(ServerConfig { port: 0, data_dir, ..ServerConfig::default() }).await.unwrap()
}

fn url(s: &RunningServer, session: &str) -> String {
    format!("ws://127.0.0.1:{}/session/{session}", s.addr.port())
}

fn phone() -> DeviceDescriptor {
    DeviceDescriptor::new(DeviceKind::Phone, ScreenExtents::new(0.07, 0.15), Presence::LocalPhysical)
}

async fn send(ws: &mut Ws, env: &Envelope) {
    let text = String::from_utf8(encode_control(env).unwrap()).unwrap();
    ws.send(Message::text(text)).await.unwrap();
}

/// Next control message, skipping binary frames.
async fn next_control(ws: &mut Ws) -> Envelope {
    loop {
        let msg = tokio::time::timeout(WAIT, ws.next()).await.expect("message in time").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return decode_control(t.as_str().as_bytes()).unwrap();
        }
    }
}

async fn next_matching(ws: &mut Ws, want: impl Fn(&Envelope) -> bool) -> Envelope {
    loop {
        let e = next_control(ws).await;
        if want(&e) {
            return e;
        }
    }
}

async fn join(s: &RunningServer, session: &str) -> (Ws, DeviceId, Envelope) {
    let (mut ws, _) = connect_async(url(s, session)).await.unwrap();
    send(&mut ws, &Envelope::new(DeviceId(0), Payload::Join { descriptor: phone() })).await;
    let welcome = next_control(&mut ws).await;
    let Payload::Welcome { device_id, .. } = &welcome.payload else { panic!("{welcome:?}") };
    (ws, *device_id, welcome)
}

fn is_pose(e: &Envelope) -> bool {
    matches!(e.payload, Payload::PoseUpdate { .. })
}

#[tokio::test]
async fn join_welcome_and_echo() {
    let s = server(None).await;
    let (mut a, ida, welcome) = join(&s, "room").await;
    assert_eq!(ida, DeviceId(1));
    let Payload::Welcome { state, .. } = welcome.payload else { unreachable!() };
    assert!(state.devices.contains_key(&ida));

    let (mut b, idb, welcome_b) = join(&s, "room").await;
    assert_eq!(idb, DeviceId(2));
    let Payload::Welcome { state, .. } = welcome_b.payload else { unreachable!() };
    assert_eq!(state.devices.len(), 2);
    let announced = next_matching(&mut a, |e| matches!(e.payload, Payload::Join { .. })).await;
    assert_eq!(announced.sender, idb);

    let update = Payload::PoseUpdate { device_id: ida, pose: Pose::translation(0.2, 0.0, 0.0) };
    send(&mut a, &Envelope::new(ida, update.clone())).await;
    let echo = next_matching(&mut a, is_pose).await;
    let seen = next_matching(&mut b, is_pose).await;
    assert_eq!(echo, seen);
    assert_eq!(echo.payload, update);
    assert!(echo.seq > announced.seq);
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn malformed_messages_get_errors_to_sender_only() {
    let s = server(None).await;
    let (mut a, ida, _) = join(&s, "errs").await;
    let (mut b, _, _) = join(&s, "errs").await;
    a.send(Message::text("{not json")).await.unwrap();
    let err = next_matching(&mut a, |e| matches!(e.payload, Payload::Error { .. })).await;
    assert_eq!(err.seq, 0);
    assert!(matches!(err.payload, Payload::Error { code: ErrorCode::Malformed, .. }), "{err:?}");

    let remove = Payload::ContentRemove { element_id: "ghost".into() };
    send(&mut a, &Envelope::new(ida, remove)).await;
    let err = next_matching(&mut a, |e| matches!(e.payload, Payload::Error { .. })).await;
    assert!(matches!(err.payload, Payload::Error { code: ErrorCode::UnknownElement, .. }), "{err:?}");

    // b saw neither error: its next message is a's later pose update
    let update = Payload::PoseUpdate { device_id: ida, pose: Pose::IDENTITY };
    send(&mut a, &Envelope::new(ida, update)).await;
    let next = next_control(&mut b).await;
    assert!(matches!(next.payload, Payload::Join { .. } | Payload::PoseUpdate { .. }), "{next:?}");
    let next = if is_pose(&next) { next } else { next_control(&mut b).await };
    assert!(is_pose(&next), "{next:?}");
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn first_message_must_be_a_join() {
    let s = server(None).await;
    let (mut ws, _) = connect_async(url(&s, "strict")).await.unwrap();
    let update = Payload::PoseUpdate { device_id: DeviceId(1), pose: Pose::IDENTITY };
    send(&mut ws, &Envelope::new(DeviceId(1), update)).await;
    let err = next_control(&mut ws).await;
    assert!(matches!(err.payload, Payload::Error { code: ErrorCode::Rejected, .. }), "{err:?}");
    assert!(connect_async(url(&s, "bad%20id")).await.is_err());
    s.shutdown().await.unwrap();
}

fn point_frame(id: u32, points: usize) -> Vec<u8> {
    let p = vec![PackedPoint { x: 1, y: 2, z: 3, r: 4, g: 5, b: 6 }; points];
    let h = StreamFrameHeader { kind: StreamKind::Pointcloud, frame_id: id, count: points as u32 };
    encode_stream_frame(&h, &StreamPayload::Points(p)).unwrap()
}

#[tokio::test]
async fn stream_frames_reach_other_devices() {
    let s = server(None).await;
    let (mut a, _, _) = join(&s, "stream").await;
    let (mut b, _, _) = join(&s, "stream").await;
    let frame = point_frame(9, 100);
    a.send(Message::binary(frame.clone())).await.unwrap();
    let got = loop {
        match tokio::time::timeout(WAIT, b.next()).await.unwrap().unwrap().unwrap() {
            Message::Binary(bytes) => break bytes,
            _ => continue,
        }
    };
    assert_eq!(&got[..], &frame[..]);
    // garbage frames are reported to the sender
    a.send(Message::binary(vec![1, 2, 3])).await.unwrap();
    let err = next_matching(&mut a, |e| matches!(e.payload, Payload::Error { .. })).await;
    assert_eq!(err.seq, 0);
    s.shutdown().await.unwrap();
}

async fn http_get(s: &RunningServer, path: &str) -> String {
    let mut tcp = TcpStream::connect(("127.0.0.1", s.addr.port())).await.unwrap();
    tcp.write_all(format!("GET {path} HTTP/1.0\r\nHost: localhost\r\n\r\n").as_bytes()).await.unwrap();
    let mut out = String::new();
    tcp.read_to_string(&mut out).await.unwrap();
    out
}

#[tokio::test]
async fn slow_consumer_loses_frames_not_control() {
    let s = server(None).await;
    let (mut a, ida, _) = join(&s, "slow").await;
    let (mut b, _, _) = join(&s, "slow").await;
    // b stops reading while a floods large frames
    for i in 0..40 {
        a.send(Message::binary(point_frame(i, 60_000))).await.unwrap();
    }
    let update = Payload::PoseUpdate { device_id: ida, pose: Pose::translation(0.5, 0.0, 0.0) };
    send(&mut a, &Envelope::new(ida, update.clone())).await;
    next_matching(&mut a, is_pose).await;

    let metrics = http_get(&s, "/metrics").await;
    let dropped: u64 = metrics
        .lines()
        .find(|l| l.starts_with("frames_dropped{session=\"slow\"}"))
        .and_then(|l| l.rsplit(' ').next())
        .and_then(|v| v.parse().ok())
        .expect("frames_dropped line");
    assert!(dropped > 0, "{metrics}");

    let mut frames = 0;
    let got = loop {
        match tokio::time::timeout(WAIT, b.next()).await.unwrap().unwrap().unwrap() {
            Message::Binary(_) => frames += 1,
            Message::Text(t) => {
                let e = decode_control(t.as_str().as_bytes()).unwrap();
                if is_pose(&e) {
                    break e;
                }
            }
            _ => {}
        }
    };
    assert_eq!(got.payload, update);
    assert!(frames < 40, "{frames}");
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn metrics_endpoint_reports_sessions() {
    let s = server(None).await;
    let (mut a, ida, _) = join(&s, "metered").await;
    let update = Payload::PoseUpdate { device_id: ida, pose: Pose::IDENTITY };
    send(&mut a, &Envelope::new(ida, update)).await;
    next_matching(&mut a, is_pose).await;
    let body = http_get(&s, "/metrics").await;
    assert!(body.starts_with("HTTP/1.0 200") || body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("messages_sequenced{session=\"metered\"} 2"), "{body}");
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn sessions_persist_across_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let s = server(Some(dir.path().to_owned())).await;
    let (mut a, ida, _) = join(&s, "kept").await;
    let mut attributes = std::collections::BTreeMap::new();
    attributes.insert(attr::PAYLOAD.to_owned(), AttrValue::Text("hello".into()));
    send(&mut a, &Envelope::new(ida, Payload::ContentUpsert { element_id: "note".into(), owner: None, attributes })).await;
    next_matching(&mut a, |e| matches!(e.payload, Payload::ContentUpsert { .. })).await;
    drop(a);
    s.shutdown().await.unwrap();

    let saved = load_session(&dir.path().join("kept.json")).unwrap();
    assert_eq!(saved.elements[&"note".into()].get(attr::PAYLOAD), Some(&AttrValue::Text("hello".into())));

    let s = server(Some(dir.path().to_owned())).await;
    let (_b, idb, welcome) = join(&s, "kept").await;
    let Payload::Welcome { state, .. } = welcome.payload else { unreachable!() };
    assert_eq!(state.elements, saved.elements);
    assert!(state.devices.contains_key(&ida));
    assert_eq!(idb, DeviceId(2));
    s.shutdown().await.unwrap();
}
