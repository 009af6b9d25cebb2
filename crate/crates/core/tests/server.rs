use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use evstream::node::{Command, Reply, Status};
use evstream::protection::ProtectionProfile;
use evstream::store::{OpKind, OpMask};
use evstream::wire::{self, Client, ClientError, Incoming, Server, ServerConfig};
use evstream::Node;

fn start() -> Server {
    wire::serve("127.0.0.1:0", Node::default(), ProtectionProfile::native(), ServerConfig::default()).unwrap()
}

#[test]
fn set_then_get() {
    let server = start();
    let mut c = Client::connect(server.local_addr()).unwrap();
    assert_eq!(c.set(b"score:game1", b"3-2").unwrap(), (1, OpKind::Create));
    assert_eq!(c.set(b"score:game1", b"4-2").unwrap(), (2, OpKind::Update));
    assert_eq!(c.get(b"score:game1").unwrap(), b"4-2");
    assert_eq!(c.get(b"missing").unwrap_err().status(), Some(Status::NotFound));
    assert_eq!(c.del(b"score:game1").unwrap(), OpKind::Delete);
    assert_eq!(c.set(b"", b"x").unwrap_err().status(), Some(Status::EmptyKey));
}

#[test]
fn subscribe_then_publish_from_other_connection() {
    let server = start();
    let mut sub = Client::connect(server.local_addr()).unwrap();
    let ack = sub.subscribe(b"scores").unwrap();
    assert!(ack.start_positions.is_empty());
    let mut publisher = Client::connect(server.local_addr()).unwrap();
    assert_eq!(publisher.publish(b"scores", b"3-2").unwrap(), (1, 1));
    let ev = sub.next_event(Duration::from_secs(5)).unwrap().unwrap();
    assert_eq!((ev.channel.as_slice(), ev.seq, ev.payload.as_slice()), (b"scores".as_slice(), 1, b"3-2".as_slice()));
}

#[test]
fn callback_flow_over_the_wire() {
    let server = start();
    let mut admin = Client::connect(server.local_addr()).unwrap();
    assert_eq!(admin.register_callback(OpMask::EMPTY.with(OpKind::Update), b"score:*", b"scores").unwrap(), 1);
    assert_eq!(admin.register_callback(OpMask::WRITES, b"*", b"all").unwrap(), 2);
    assert_eq!(
        admin.register_callback(OpMask::EMPTY, b"*", b"c").unwrap_err().status(),
        Some(Status::EmptyOpMask)
    );
    let mut sub = Client::connect(server.local_addr()).unwrap();
    sub.subscribe(b"scores").unwrap();
    sub.subscribe(b"all").unwrap();

    admin.set(b"score:game1", b"3-2").unwrap();
    admin.set(b"score:game1", b"4-2").unwrap();
    let channels: Vec<Vec<u8>> = (0..3)
        .map(|_| sub.next_event(Duration::from_secs(5)).unwrap().unwrap().channel)
        .collect();
    assert_eq!(channels, [b"all".to_vec(), b"scores".to_vec(), b"all".to_vec()]);

    admin.unregister_callback(1).unwrap();
    assert_eq!(admin.unregister_callback(1).unwrap_err().status(), Some(Status::UnknownId));
    admin.set(b"score:g", b"x").unwrap();
    let ev = sub.next_event(Duration::from_secs(5)).unwrap().unwrap();
    assert_eq!(ev.channel, b"all");
    assert!(sub.next_event(Duration::from_millis(200)).unwrap().is_none());
}

#[test]
fn unsubscribe_over_the_wire() {
    let server = start();
    let mut sub = Client::connect(server.local_addr()).unwrap();
    sub.subscribe(b"c").unwrap();
    sub.unsubscribe(b"c").unwrap();
    assert_eq!(sub.unsubscribe(b"c").unwrap_err().status(), Some(Status::UnknownSubscription));
    let mut p = Client::connect(server.local_addr()).unwrap();
    assert_eq!(p.publish(b"c", b"x").unwrap(), (1, 0));
}

#[test]
fn malformed_frame_closes_only_that_connection() {
    let server = start();
    let mut good = Client::connect(server.local_addr()).unwrap();
    good.set(b"k", b"v").unwrap();

    let mut bad = TcpStream::connect(server.local_addr()).unwrap();
    bad.write_all(&[0x00, 0x01, 0x02, 0x03, 0, 0, 0, 0]).unwrap();
    bad.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut buf = [0u8; 16];
    assert_eq!(bad.read(&mut buf).unwrap(), 0, "server should close the connection");

    assert_eq!(good.get(b"k").unwrap(), b"v");
}

#[test]
fn malformed_body_gets_error_then_close() {
    let server = start();
    let mut c = Client::connect(server.local_addr()).unwrap();
    // SET with a key length pointing past the body.
    c.writer().send_raw(&[0x45, 0x56, 0x01, 0x01, 0, 0, 0, 3, 0, 9, b'k']).unwrap();
    let (_, reader) = c.split();
    let mut reader = reader;
    match reader.recv().unwrap() {
        Incoming::Reply(_, Reply::Error { status, .. }) => assert_eq!(status, Status::BadRequest),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(reader.recv(), Err(ClientError::Closed)));
}

#[test]
fn pipelined_replies_stay_in_order() {
    let server = start();
    let c = Client::connect(server.local_addr()).unwrap();
    let (mut w, mut r) = c.split();
    for i in 0..500u32 {
        w.send_buffered(&Command::Set {
            key: format!("k{}", i % 7).into_bytes(),
            value: i.to_be_bytes().to_vec(),
        })
        .unwrap();
        w.send_buffered(&Command::Get {
            key: format!("k{}", i % 7).into_bytes(),
        })
        .unwrap();
    }
    w.flush().unwrap();
    for i in 0..500u32 {
        assert!(matches!(r.recv().unwrap(), Incoming::Reply(_, Reply::Set { .. })));
        match r.recv().unwrap() {
            Incoming::Reply(_, Reply::Get { value }) => assert_eq!(value, i.to_be_bytes()),
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn slow_subscriber_is_dropped_with_overflow_notice() {
    let server = wire::serve(
        "127.0.0.1:0",
        Node::default(),
        ProtectionProfile::native(),
        ServerConfig { queue_capacity: 4 },
    )
    .unwrap();
    // Subscriber never reads; small socket buffers fill, then its queue.
    let mut sub = Client::connect(server.local_addr()).unwrap();
    sub.subscribe(b"c").unwrap();
    let mut p = Client::connect(server.local_addr()).unwrap();
    let payload = vec![0u8; 64 * 1024];
    let mut dropped = false;
    for _ in 0..2000 {
        let (_, delivered) = p.publish(b"c", &payload).unwrap();
        if delivered == 0 {
            dropped = true;
            break;
        }
    }
    assert!(dropped, "subscriber was never disconnected");
    let (_, mut reader) = sub.split();
    let mut saw_notice = false;
    loop {
        match reader.recv() {
            Ok(Incoming::Reply(None, Reply::Error { status: Status::Overflow, .. })) => saw_notice = true,
            Ok(_) => {}
            Err(_) => break,
        }
    }
    assert!(saw_notice);
}

#[test]
fn protection_delay_is_charged_per_request() {
    let profile = ProtectionProfile::enclave_like();
    let server = wire::serve("127.0.0.1:0", Node::default(), profile, ServerConfig::default()).unwrap();
    let mut c = Client::connect(server.local_addr()).unwrap();
    c.set(b"k", b"").unwrap();
    assert_eq!(server.charged_overhead_ns(), profile.per_call_ns);
    c.get(b"k").unwrap();
    assert_eq!(server.charged_overhead_ns(), 2 * profile.per_call_ns);
    c.set(b"k", &[1; 512]).unwrap();
    assert_eq!(server.charged_overhead_ns(), 3 * profile.per_call_ns + 512 * profile.per_byte_ns);
    assert!(server.set_profile(ProtectionProfile::native()).is_err());
}

#[test]
fn profile_can_change_before_first_request() {
    let server = start();
    server.set_profile(ProtectionProfile::enclave_like()).unwrap();
    assert_eq!(server.profile(), ProtectionProfile::enclave_like());
}

#[test]
fn second_bind_fails() {
    let server = start();
    let err = wire::serve(server.local_addr(), Node::default(), ProtectionProfile::native(), ServerConfig::default());
    assert!(matches!(err, Err(wire::ServerError::BindFailure { .. })));
}

#[test]
fn shutdown_drains_and_closes_connections() {
    let server = start();
    let mut c = Client::connect(server.local_addr()).unwrap();
    c.set(b"k", b"v").unwrap();
    let addr = server.local_addr();
    server.shutdown();
    assert!(c.get(b"k").is_err());
    assert!(TcpStream::connect(addr).is_err());
}
