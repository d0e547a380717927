//! Round-trips a small event stream through the CSV and `SPKE` encodings
//! and adds uniform background noise.

use spikepose::events::{
    inject_uniform_noise, parse_csv, read_any, write_binary, write_csv, Event, EventStream, Polarity, SensorGeometry,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let geometry = SensorGeometry::new(640, 480)?;
    let events = vec![
        Event::new(0, 0, 0, Polarity::Negative),
        Event::new(1_000, 3, 2, Polarity::Positive),
        Event::new(250_000, 639, 479, Polarity::Positive),
    ];
    let stream = EventStream::new(geometry, events)?;

    let csv = write_csv(&stream);
    print!("CSV:\n{csv}");
    assert_eq!(parse_csv(csv.as_bytes(), None)?, stream);

    let binary = write_binary(&stream);
    println!("SPKE: {} bytes for {} events", binary.len(), stream.len());
    assert_eq!(read_any(&binary, None)?, stream);

    let noisy = inject_uniform_noise(&stream, 1_000.0, 7)?;
    println!(
        "1000 ev/s of noise over {:?} us: {} -> {} events",
        stream.time_span(),
        stream.len(),
        noisy.len()
    );
    Ok(())
}
