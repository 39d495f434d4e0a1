//! End-to-end streaming over loopback TCP against offline detection.

use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use cardiospike::data::{synth_corpus, SynthConfig};
use cardiospike::model::{DetectorConfig, DetectorParams};
use cardiospike::stream::{
    decode_packet, drop_mask, format_event, offline_events, read_frame, replay_sensor, replay_to, rr_to_wire, serve,
    ReplayOptions, SensorId, ServeOptions, StreamState,
};

fn small() -> DetectorConfig {
    DetectorConfig {
        kernel_size: 3,
        channels: 6,
        hidden: 8,
        side: 6,
        layers: 3,
        stacks: 2,
        seg_len: 32,
        pad: 4,
        classes: 1,
    }
}

fn corpus() -> Vec<Vec<u16>> {
    let cfg = SynthConfig {
        records: 3,
        samples_per_record: 240,
        seed: 11,
        ..SynthConfig::default()
    };
    synth_corpus(&cfg).unwrap().iter().map(|r| rr_to_wire(&r.rr).unwrap()).collect()
}

/// Offline events over each contiguous piece of what a receiver assembles.
fn expected_lines(params: &DetectorParams, cfg: &DetectorConfig, sensor: &str, wire: &[u8], thr: f64) -> Vec<String> {
    let mut state = StreamState::new();
    let mut r = wire;
    while let Some(frame) = read_frame(&mut r).unwrap() {
        state.ingest(&decode_packet(&frame).unwrap()).unwrap();
    }
    let rr: Vec<f64> = state.rr().iter().map(|&v| f64::from(v)).collect();
    let mut bounds = vec![0];
    bounds.extend_from_slice(state.discontinuities());
    bounds.push(rr.len());
    bounds
        .windows(2)
        .flat_map(|w| offline_events(params, cfg, &rr[w[0]..w[1]], thr, w[0]).unwrap())
        .map(|ev| format_event(sensor, &ev))
        .collect()
}

#[test]
fn concurrent_sensors_match_offline() {
    let cfg = small();
    let params = DetectorParams::init(&cfg, 4).unwrap();
    let thr = 0.2;
    let records = corpus();
    let plans = [
        ("lossless", ReplayOptions::default()),
        ("drops", ReplayOptions { drop: 0.2, seed: 3, ..Default::default() }),
        ("bursts", ReplayOptions { drop: 0.2, drop_burst: 20, seed: 8, ..Default::default() }),
    ];

    let mut expected = Vec::new();
    for ((name, opts), rr) in plans.iter().zip(&records) {
        let mut wire = Vec::new();
        replay_to(&mut wire, SensorId::new(name).unwrap(), rr, opts).unwrap();
        expected.extend(expected_lines(&params, &cfg, name, &wire, thr));
    }
    assert!(!expected.is_empty());

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let out = Mutex::new(Vec::<u8>::new());
    let shutdown = AtomicBool::new(false);
    let opts = ServeOptions {
        threshold: thr,
        queue: 2,
        max_sessions: Some(plans.len()),
    };
    let summaries = std::thread::scope(|s| {
        let server = s.spawn(|| serve(&listener, &params, &cfg, &opts, &out, &shutdown).unwrap());
        for ((name, opts), rr) in plans.iter().zip(&records) {
            let addr = addr.to_string();
            s.spawn(move || replay_sensor(&addr, SensorId::new(name).unwrap(), rr, opts).unwrap());
        }
        server.join().unwrap()
    });

    assert_eq!(summaries.len(), plans.len());
    let bursts = summaries.iter().find(|s| s.sensor.as_deref() == Some("bursts")).unwrap();
    assert!(bursts.discontinuities > 0);
    let drops = summaries.iter().find(|s| s.sensor.as_deref() == Some("drops")).unwrap();
    assert_eq!(drops.samples, records[1].len());

    let text = String::from_utf8(out.into_inner().unwrap()).unwrap();
    let mut got: Vec<&str> = text.lines().collect();
    let mut want: Vec<&str> = expected.iter().map(String::as_str).collect();
    // sessions interleave; order within each sensor is preserved
    for sensor in ["lossless", "drops", "bursts"] {
        let per = |lines: &[&str]| -> Vec<String> {
            lines.iter().filter(|l| l.starts_with(&format!("{sensor},"))).map(|l| l.to_string()).collect()
        };
        assert_eq!(per(&got), per(&want), "{sensor}");
    }
    got.sort_unstable();
    want.sort_unstable();
    assert_eq!(got, want);
}

#[test]
fn dropped_packets_are_accounted() {
    let rr = &corpus()[0];
    let opts = ReplayOptions { drop: 0.2, drop_burst: 20, seed: 8, ..Default::default() };
    let mask = drop_mask(rr.len(), &opts);
    let mut wire = Vec::new();
    let stats = replay_to(&mut wire, SensorId::new("a").unwrap(), rr, &opts).unwrap();
    assert_eq!(stats.packets, rr.len());
    assert_eq!(stats.dropped, mask.iter().filter(|&&m| m).count());
    assert_eq!(stats.sent + stats.dropped, stats.packets);
}

#[test]
fn idle_server_stops_on_shutdown() {
    let cfg = small();
    let params = DetectorParams::init(&cfg, 4).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let out = Mutex::new(Vec::<u8>::new());
    let shutdown = AtomicBool::new(false);
    let summaries = std::thread::scope(|s| {
        let server = s.spawn(|| serve(&listener, &params, &cfg, &ServeOptions::default(), &out, &shutdown).unwrap());
        std::thread::sleep(Duration::from_millis(100));
        shutdown.store(true, Ordering::SeqCst);
        server.join().unwrap()
    });
    assert!(summaries.is_empty());
}

#[test]
fn refused_connection_is_reported() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let err = replay_sensor(format!("127.0.0.1:{port}"), SensorId::new("a").unwrap(), &[800; 5], &ReplayOptions::default());
    assert!(err.is_err());
}
