use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use palmsim::device::{Device, DeviceConfig};
use palmsim::protocol::{serve, DeviceLoop, ServeOptions, SimLink};
use palmsim::trace::{read_csv, TraceRow};

fn start() -> (String, Arc<AtomicBool>, thread::JoinHandle<Vec<TraceRow>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let join = thread::spawn(move || {
        let device = Device::new(&DeviceConfig::default(), 3).unwrap();
        let dl = DeviceLoop::spawn(SimLink::new(device, 0.01, true).unwrap());
        let options = ServeOptions {
            tick_period: Duration::from_millis(10),
            poll_interval: Duration::from_millis(5),
        };
        serve(listener, dl.handle(), options, flag).unwrap();
        dl.shutdown().1
    });
    (addr, shutdown, join)
}

fn read_line(r: &mut impl BufRead) -> String {
    let mut s = String::new();
    r.read_line(&mut s).unwrap();
    s
}

#[test]
fn loopback_session() {
    let (addr, shutdown, join) = start();
    let stream = TcpStream::connect(&addr).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut w = stream;

    // Commands before the handshake are refused and produce no telemetry.
    w.write_all(b"SET 0 20 40\n").unwrap();
    assert!(read_line(&mut reader).starts_with("ERR 1"));
    w.write_all(b"HELLO 1\n").unwrap();
    assert_eq!(read_line(&mut reader), "HELLO 1\n");

    // A second client is turned away while this session is active.
    let mut other = TcpStream::connect(&addr).unwrap();
    other
        .set_read_timeout(Some(Duration::from_secs(5)))
        .unwrap();
    let mut busy = String::new();
    other.read_to_string(&mut busy).unwrap();
    assert_eq!(busy, "ERR 1 busy\n");

    w.write_all(b"CAL\nSET 1 20 46\nSET 2 900 900\nbogus\n")
        .unwrap();
    let started = Instant::now();
    let mut frc = 0;
    let mut replies = Vec::new();
    let mut last_unit1: f64 = 0.0;
    while started.elapsed() < Duration::from_millis(1000) {
        let line = read_line(&mut reader);
        if let Some(rest) = line.strip_prefix("FRC ") {
            frc += 1;
            let mut it = rest.split_whitespace();
            if it.next() == Some("1") {
                last_unit1 = it.next().unwrap().parse().unwrap();
            }
        } else {
            replies.push(line);
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert_eq!(replies[0], "CAL\n");
    assert!(replies[1].starts_with("ERR 2 "), "{replies:?}");
    assert!(replies[2].starts_with("ERR 1 "), "{replies:?}");
    // Three reports per 10 ms tick; generous bounds for loaded CI machines.
    let expected = 300.0 * elapsed;
    assert!(
        frc as f64 > 0.5 * expected && (frc as f64) < 1.2 * expected,
        "{frc} in {elapsed}s"
    );
    // Unit 1 presses 2 mm into the 500 N/m palm.
    assert!((last_unit1 - 1.0).abs() < 0.2, "{last_unit1}");

    drop(w);
    drop(reader);
    shutdown.store(true, Ordering::SeqCst);
    let trace = join.join().unwrap();
    assert!(!trace.is_empty());
    assert_eq!(trace.len() % 3, 0);
}

#[test]
fn reconnect_after_session_ends() {
    let (addr, shutdown, join) = start();
    for _ in 0..2 {
        // The previous session notices the disconnect within a tick; until
        // then new clients are told the server is busy.
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            let stream = TcpStream::connect(&addr).unwrap();
            stream
                .set_read_timeout(Some(Duration::from_secs(5)))
                .unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut w = stream;
            let _ = w.write_all(b"HELLO 1\n");
            // A rejected connection may be reset before the reply is read.
            let mut line = String::new();
            let _ = reader.read_line(&mut line);
            if line == "HELLO 1\n" {
                break;
            }
            assert!(line.is_empty() || line == "ERR 1 busy\n", "{line:?}");
            assert!(Instant::now() < deadline, "server stayed busy");
            thread::sleep(Duration::from_millis(20));
        }
    }
    shutdown.store(true, Ordering::SeqCst);
    join.join().unwrap();
}

#[test]
fn binary_flushes_trace_on_interrupt() {
    let probe = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = probe.local_addr().unwrap().to_string();
    drop(probe);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let mut child = Command::new(env!("CARGO_BIN_EXE_palmsim"))
        .args(["serve", "--listen", &addr, "--out", out.to_str().unwrap()])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    assert!(read_line(&mut stderr).starts_with("listening on"));

    let stream = TcpStream::connect(&addr).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut w = stream;
    w.write_all(b"HELLO 1\n").unwrap();
    assert_eq!(read_line(&mut reader), "HELLO 1\n");
    for _ in 0..30 {
        assert!(read_line(&mut reader).starts_with("FRC "));
    }

    let status = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    let exit = child.wait().unwrap();
    assert!(exit.success(), "{exit:?}");
    let rows: Vec<TraceRow> = read_csv(std::fs::File::open(&out).unwrap()).unwrap();
    assert!(rows.len() >= 30);
}
