use evblur::event_core::{Event, Pixel, Polarity};
use evblur::simulator::{read_events, simulate, write_events, EventFormat, MovingBar, SceneSource};
use evblur::{EventStream, StreamHeader};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(events: &[Event]) -> Vec<u8> {
    let mut h = Sha256::new();
    for e in events {
        h.update(e.t_curr.to_le_bytes());
        h.update(e.pixel.x.to_le_bytes());
        h.update(e.pixel.y.to_le_bytes());
        h.update([e.polarity.as_i8() as u8]);
        h.update(e.t_prev.to_le_bytes());
    }
    h.finalize().to_vec()
}

fn random_stream(n: usize) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut t = 0.0;
    let events = (0..n)
        .map(|_| {
            let t_prev = t;
            t += rng.random_range(0.0..1e-6);
            Event {
                pixel: Pixel::new(rng.random_range(0..640), rng.random_range(0..480)),
                polarity: if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative },
                t_prev,
                t_curr: t,
            }
        })
        .collect();
    EventStream { header: StreamHeader { width: 640, height: 480, t_start: 0.0, duration: t, fingerprint: 0 }, events }
}

#[test]
fn million_event_binary_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("million.bin");
    let stream = random_stream(1_000_000);
    write_events(&path, &stream, EventFormat::Binary).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 21 * 1_000_000);
    let back = read_events(&path).unwrap();
    assert_eq!((back.header.width, back.header.height), (640, 480));
    assert_eq!(digest(&back.events), digest(&stream.events));
}

#[test]
fn csv_round_trip_keeps_nanosecond_times() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.csv");
    let stream = random_stream(10_000);
    write_events(&path, &stream, EventFormat::Csv).unwrap();
    let back = read_events(&path).unwrap();
    assert_eq!(back.events.len(), stream.events.len());
    for (a, b) in back.events.iter().zip(&stream.events) {
        assert_eq!((a.pixel, a.polarity), (b.pixel, b.polarity));
        assert!((a.t_curr - b.t_curr).abs() <= 5e-10);
        assert!((a.t_prev - b.t_prev).abs() <= 5e-10);
    }
}

#[test]
fn simulated_stream_survives_both_formats() {
    let scene = SceneSource::MovingBar(
        MovingBar::from_spec("width=16,height=4,bar=3,speed=300,fg=1,bg=0.05,duration=0.06").unwrap(),
    );
    let stream = simulate(&scene, &Default::default(), &Default::default(), &Default::default(), &Default::default())
        .unwrap();
    assert!(!stream.events.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("s.bin");
    write_events(&bin, &stream, EventFormat::Binary).unwrap();
    assert_eq!(read_events(&bin).unwrap().events, stream.events);
    let csv = dir.path().join("s.csv");
    write_events(&csv, &stream, EventFormat::Csv).unwrap();
    assert_eq!(read_events(&csv).unwrap().events.len(), stream.events.len());
}

#[test]
fn empty_stream_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let stream = random_stream(0);
    for (name, format) in [("e.csv", EventFormat::Csv), ("e.bin", EventFormat::Binary)] {
        let path = dir.path().join(name);
        write_events(&path, &stream, format).unwrap();
        assert!(read_events(&path).unwrap().events.is_empty(), "{name}");
    }
}
