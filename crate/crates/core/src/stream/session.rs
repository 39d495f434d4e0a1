//! Streaming sessions: a reader thread decodes and reassembles packets and
//! hands new samples over a bounded queue to the detector. A full queue
//! blocks the reader.

use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::sync_channel;
use std::sync::Mutex;
use std::time::Duration;

use super::{decode_packet, read_frame, OnlineDetector, SensorId, SpikeEvent, StreamError, StreamState};
use crate::model::{DetectorConfig, DetectorParams};

/// Default capacity of the reader-to-detector queue, in packets.
pub const QUEUE_DEPTH: usize = 64;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionSummary {
    pub sensor: Option<String>,
    /// Frames decoded and ingested.
    pub packets: usize,
    /// Frames rejected by the codec or by ingest.
    pub rejected: usize,
    pub samples: usize,
    pub discontinuities: usize,
    pub events: usize,
    /// The peer went away without sending the end marker.
    pub disconnected: bool,
}

struct Chunk {
    sensor: SensorId,
    samples: Vec<f64>,
    discontinuity: bool,
}

/// Runs one session to completion. Samples received before a disconnect
/// are kept and flushed through the detector.
pub fn run_session<R: Read + Send>(
    reader: R,
    mut detector: OnlineDetector,
    queue: usize,
    mut on_event: impl FnMut(&str, &SpikeEvent),
) -> Result<SessionSummary, StreamError> {
    let (tx, rx) = sync_channel::<Chunk>(queue.max(1));
    std::thread::scope(|scope| {
        let reader_thread = scope.spawn(move || {
            let mut reader = reader;
            let mut state = StreamState::new();
            let mut summary = SessionSummary::default();
            loop {
                let frame = match read_frame(&mut reader) {
                    Ok(Some(frame)) => frame,
                    Ok(None) => break,
                    Err(StreamError::Disconnected) => {
                        summary.disconnected = true;
                        break;
                    }
                    Err(e) => {
                        log::warn!("session read failed: {e}");
                        summary.disconnected = true;
                        break;
                    }
                };
                let ingested = decode_packet(&frame).map_err(StreamError::from).and_then(|p| {
                    let out = state.ingest(&p)?;
                    Ok((p.sensor, out))
                });
                match ingested {
                    Ok((sensor, out)) => {
                        summary.packets += 1;
                        if out.appended.is_empty() {
                            continue;
                        }
                        let chunk = Chunk {
                            sensor,
                            samples: out.appended.iter().map(|&v| f64::from(v)).collect(),
                            discontinuity: out.discontinuity,
                        };
                        if tx.send(chunk).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        summary.rejected += 1;
                        log::warn!("packet rejected: {e}");
                    }
                }
            }
            drop(tx);
            summary.sensor = state.sensor().map(|s| s.to_string());
            summary.samples = state.len();
            summary.discontinuities = state.discontinuities().len();
            summary
        });

        let mut events = 0;
        let mut sensor = None;
        let mut result = Ok(());
        for chunk in rx.iter() {
            sensor = Some(chunk.sensor);
            match detector.push(&chunk.samples, chunk.discontinuity) {
                Ok(found) => {
                    for ev in &found {
                        on_event(chunk.sensor.as_str(), ev);
                    }
                    events += found.len();
                }
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        drop(rx);
        let mut summary = reader_thread.join().expect("session reader panicked");
        result?;
        let tail = detector.flush()?;
        if let Some(sensor) = sensor {
            tail.iter().for_each(|ev| on_event(sensor.as_str(), ev));
        }
        summary.events = events + tail.len();
        Ok(summary)
    })
}

/// `sensor,index,probability` with six decimals.
pub fn format_event(sensor: &str, ev: &SpikeEvent) -> String {
    format!("{sensor},{},{:.6}", ev.index, ev.probability)
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub threshold: f64,
    pub queue: usize,
    /// Return after this many sessions have finished.
    pub max_sessions: Option<usize>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            queue: QUEUE_DEPTH,
            max_sessions: None,
        }
    }
}

/// Accepts sensor connections, one independent session each, writing
/// event lines to `out` until `shutdown` is set or `max_sessions` have
/// completed. Open connections are closed on shutdown.
pub fn serve<W: Write + Send>(
    listener: &TcpListener,
    params: &DetectorParams,
    cfg: &DetectorConfig,
    opts: &ServeOptions,
    out: &Mutex<W>,
    shutdown: &AtomicBool,
) -> Result<Vec<SessionSummary>, StreamError> {
    OnlineDetector::new(params.clone(), *cfg, opts.threshold)?;
    listener.set_nonblocking(true)?;
    let open: Mutex<Vec<TcpStream>> = Mutex::new(Vec::new());
    let finished: Mutex<Vec<SessionSummary>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| -> Result<(), StreamError> {
        let mut accepted = 0usize;
        loop {
            if shutdown.load(Ordering::SeqCst) {
                break;
            }
            if opts.max_sessions.is_some_and(|m| accepted >= m) {
                break;
            }
            let (stream, peer) = match listener.accept() {
                Ok(conn) => conn,
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(20));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            stream.set_nonblocking(false)?;
            open.lock().unwrap().push(stream.try_clone()?);
            accepted += 1;
            log::info!("session {accepted} from {peer}");
            let detector = OnlineDetector::new(params.clone(), *cfg, opts.threshold)?;
            let (open, finished) = (&open, &finished);
            scope.spawn(move || {
                let result = run_session(std::io::BufReader::new(stream), detector, opts.queue, |sensor, ev| {
                    let mut w = out.lock().unwrap();
                    if let Err(e) = writeln!(w, "{}", format_event(sensor, ev)).and_then(|_| w.flush()) {
                        log::error!("event output failed: {e}");
                    }
                });
                match result {
                    Ok(summary) => {
                        log::info!(
                            "session from {peer} done: {} samples, {} events, {} discontinuities",
                            summary.samples,
                            summary.events,
                            summary.discontinuities
                        );
                        finished.lock().unwrap().push(summary);
                    }
                    Err(e) => log::error!("session from {peer} failed: {e}"),
                }
                open.lock().unwrap().retain(|s| s.peer_addr().is_ok_and(|a| a != peer));
            });
        }
        if shutdown.load(Ordering::SeqCst) {
            for s in open.lock().unwrap().iter() {
                let _ = s.shutdown(Shutdown::Both);
            }
        }
        Ok(())
    })?;
    Ok(finished.into_inner().unwrap())
}
