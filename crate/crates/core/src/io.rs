//! File formats: float32 frame stacks, event streams, column schedules,
//! weight archives and PGM frames.
//!
//! Frame stack layout (little-endian): magic `EVSF`, `u32` width, height,
//! frames, channels, dtype code (1 = float32), two `f64` metadata values,
//! then `frames × channels × height × width` samples row-major. Scenes store
//! `(L_min, L_rng)` as metadata; binned tensors store `(bin_width, 0)` with
//! channel 0 = `D` and channel 1 = `C`.
//!
//! Event binary layout: magic `EVSE`, `u32` width, height, `u64` count, then
//! per event `f64` tau, `u16` x, `u16` y, `i8` polarity.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use evslab_autograd::{read_archive, write_archive};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::binning::BinnedTensors;
use crate::control::{Controller, ControllerConfig};
use crate::recon::{ReconConfig, ReconNet};
use crate::scene::IlluminanceSequence;
use crate::sensor::Event;
use crate::{Error, Result, Tensor};

pub const FRAME_MAGIC: &[u8; 4] = b"EVSF";
pub const EVENT_MAGIC: &[u8; 4] = b"EVSE";
const DTYPE_F32: u32 = 1;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameHeader {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub channels: usize,
    pub meta: [f64; 2],
}

impl FrameHeader {
    fn len(&self) -> usize {
        self.width * self.height * self.frames * self.channels
    }
}

pub fn write_frame_file(path: &Path, header: &FrameHeader, data: &[f64]) -> Result<()> {
    if data.len() != header.len() {
        return Err(Error::Contract(format!("{} samples for a {header:?} stack", data.len())));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FRAME_MAGIC)?;
    for v in [header.width, header.height, header.frames, header.channels] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&DTYPE_F32.to_le_bytes())?;
    for m in header.meta {
        w.write_all(&m.to_le_bytes())?;
    }
    for v in data {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frame_file(path: &Path) -> Result<(FrameHeader, Vec<f64>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 40 || &bytes[..4] != FRAME_MAGIC {
        return Err(format_err(path, "not a frame stack"));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    if u(4) != DTYPE_F32 as usize {
        return Err(format_err(path, format!("unsupported dtype code {}", u(4))));
    }
    let header = FrameHeader { width: u(0), height: u(1), frames: u(2), channels: u(3), meta: [f(24), f(32)] };
    let body = &bytes[40..];
    if body.len() != header.len() * 4 {
        return Err(format_err(path, format!("{} data bytes for header {header:?}", body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((header, data))
}

pub fn write_scene(path: &Path, scene: &IlluminanceSequence) -> Result<()> {
    let (h, w) = scene.dims().ok_or_else(|| Error::Config("empty scene".into()))?;
    let header = FrameHeader { width: w, height: h, frames: scene.len(), channels: 1, meta: [scene.l_min, scene.l_rng] };
    let data: Vec<f64> = scene.frames.iter().flat_map(|f| f.data().iter().copied()).collect();
    write_frame_file(path, &header, &data)
}

pub fn read_scene(path: &Path) -> Result<IlluminanceSequence> {
    let (hd, data) = read_frame_file(path)?;
    if hd.channels != 1 || hd.frames == 0 {
        return Err(format_err(path, "a scene has one channel and at least one frame"));
    }
    let plane = hd.width * hd.height;
    let frames = data
        .chunks_exact(plane)
        .map(|c| Tensor::new(&[hd.height, hd.width], c.to_vec()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if frames.iter().any(|f| f.data().iter().any(|v| !(*v > 0.0))) {
        return Err(format_err(path, "illuminance must be positive"));
    }
    Ok(IlluminanceSequence { frames, l_min: hd.meta[0], l_rng: hd.meta[1] })
}

pub fn write_binned(path: &Path, b: &BinnedTensors) -> Result<()> {
    let header = FrameHeader { width: b.width(), height: b.height(), frames: b.bins(), channels: 2, meta: [b.bin_width(), 0.0] };
    let mut data = Vec::with_capacity(header.len());
    for t in 0..b.bins() {
        let (d, c) = b.frame(t);
        data.extend_from_slice(d.data());
        data.extend_from_slice(c.data());
    }
    write_frame_file(path, &header, &data)
}

/// `D` and `C` as `[T, H, W]`, and the bin width.
pub fn read_binned(path: &Path) -> Result<(Tensor, Tensor, f64)> {
    let (hd, data) = read_frame_file(path)?;
    if hd.channels != 2 {
        return Err(format_err(path, "binned tensors have two channels"));
    }
    let plane = hd.width * hd.height;
    let mut d = Vec::with_capacity(hd.frames * plane);
    let mut c = Vec::with_capacity(hd.frames * plane);
    for chunk in data.chunks_exact(2 * plane) {
        d.extend_from_slice(&chunk[..plane]);
        c.extend_from_slice(&chunk[plane..]);
    }
    let shape = [hd.frames, hd.height, hd.width];
    Ok((Tensor::new(&shape, d)?, Tensor::new(&shape, c)?, hd.meta[0]))
}

pub fn write_events_bin(path: &Path, width: usize, height: usize, events: &[Event]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EVENT_MAGIC)?;
    w.write_all(&(width as u32).to_le_bytes())?;
    w.write_all(&(height as u32).to_le_bytes())?;
    w.write_all(&(events.len() as u64).to_le_bytes())?;
    for e in events {
        w.write_all(&e.tau.to_le_bytes())?;
        w.write_all(&e.x.to_le_bytes())?;
        w.write_all(&e.y.to_le_bytes())?;
        w.write_all(&e.polarity.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// `(width, height, events)`.
pub fn read_events_bin(path: &Path) -> Result<(usize, usize, Vec<Event>)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != EVENT_MAGIC {
        return Err(format_err(path, "not an event stream"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() != count * 13 {
        return Err(format_err(path, format!("{} bytes for {count} events", body.len())));
    }
    let events = body
        .chunks_exact(13)
        .map(|c| Event {
            tau: f64::from_le_bytes(c[0..8].try_into().expect("8 bytes")),
            x: u16::from_le_bytes(c[8..10].try_into().expect("2 bytes")),
            y: u16::from_le_bytes(c[10..12].try_into().expect("2 bytes")),
            polarity: i8::from_le_bytes([c[12]]),
        })
        .collect();
    Ok((width, height, events))
}

#[derive(Serialize, Deserialize)]
struct EventRecord {
    tau: f64,
    x: u16,
    y: u16,
    s: i8,
}

pub fn write_events_csv(path: &Path, events: &[Event]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    for e in events {
        w.serialize(EventRecord { tau: e.tau, x: e.x, y: e.y, s: e.polarity })
            .map_err(|e| format_err(path, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events_csv(path: &Path) -> Result<Vec<Event>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    r.deserialize()
        .map(|rec| {
            let rec: EventRecord = rec.map_err(|e| format_err(path, e.to_string()))?;
            Ok(Event { tau: rec.tau, x: rec.x, y: rec.y, polarity: rec.s })
        })
        .collect()
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Write by extension: `.csv` as text, anything else binary.
pub fn write_events(path: &Path, width: usize, height: usize, events: &[Event]) -> Result<()> {
    if is_csv(path) {
        write_events_csv(path, events)
    } else {
        write_events_bin(path, width, height, events)
    }
}

/// Read by extension. CSV streams carry no sensor size, so it is `None`.
pub fn read_events(path: &Path) -> Result<(Option<(usize, usize)>, Vec<Event>)> {
    if is_csv(path) {
        Ok((None, read_events_csv(path)?))
    } else {
        let (w, h, ev) = read_events_bin(path)?;
        Ok((Some((w, h)), ev))
    }
}

/// One line per control window, one 0-based threshold index per column.
pub fn write_schedule(path: &Path, schedule: &[Vec<usize>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    for row in schedule {
        w.serialize(row).map_err(|e| format_err(path, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_schedule(path: &Path) -> Result<Vec<Vec<usize>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    let rows: Vec<Vec<usize>> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| format_err(path, e.to_string()))?;
    if rows.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(format_err(path, "schedule rows differ in width"));
    }
    Ok(rows)
}

/// Write serialisable rows with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| format_err(path, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| format_err(path, e.to_string()))
}

/// 8-bit binary PGM of a `[H, W]` frame with values clamped to `[0, 1]`.
pub fn write_pgm(path: &Path, frame: &Tensor) -> Result<()> {
    let [h, w] = frame.shape() else {
        return Err(Error::Contract(format!("PGM frames are [H, W], got {:?}", frame.shape())));
    };
    let bytes: Vec<u8> = frame.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let file = BufWriter::new(File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&bytes, *w as u32, *h as u32, ExtendedColorType::L8)
        .map_err(|e| format_err(path, e.to_string()))
}

fn meta_of<T: Serialize>(cfg: &T) -> serde_json::Map<String, serde_json::Value> {
    match serde_json::to_value(cfg) {
        Ok(serde_json::Value::Object(m)) => m,
        _ => serde_json::Map::new(),
    }
}

pub fn save_controller(path: &Path, c: &Controller) -> Result<()> {
    Ok(write_archive(path, c.params(), meta_of(c.config()))?)
}

pub fn save_recon(path: &Path, r: &ReconNet) -> Result<()> {
    Ok(write_archive(path, r.params(), meta_of(r.config()))?)
}

/// Weights plus the architecture recorded in the manifest.
pub fn load_controller(path: &Path) -> Result<Controller> {
    let (params, manifest) = read_archive(path)?;
    let cfg: ControllerConfig = serde_json::from_value(serde_json::Value::Object(manifest.meta))
        .map_err(|e| format_err(path, format!("controller architecture: {e}")))?;
    Controller::from_params(cfg, &params)
}

pub fn load_recon(path: &Path) -> Result<ReconNet> {
    let (params, manifest) = read_archive(path)?;
    let cfg: ReconConfig = serde_json::from_value(serde_json::Value::Object(manifest.meta))
        .map_err(|e| format_err(path, format!("reconstructor architecture: {e}")))?;
    ReconNet::from_params(cfg, &params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{bin_events, ColumnDeltas};

    fn events() -> Vec<Event> {
        vec![
            Event { tau: 0.0125, x: 3, y: 1, polarity: 1 },
            Event { tau: 0.0400000001, x: 0, y: 2, polarity: -1 },
        ]
    }

    #[test]
    fn event_formats_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("ev.bin");
        let csv = dir.path().join("ev.csv");
        write_events(&bin, 5, 4, &events()).unwrap();
        write_events(&csv, 5, 4, &events()).unwrap();
        assert_eq!(read_events(&bin).unwrap(), (Some((5, 4)), events()));
        assert_eq!(read_events(&csv).unwrap(), (None, events()));
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("tau,x,y,s\n"));
    }

    #[test]
    fn scene_roundtrip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.evsf");
        let frames = vec![Tensor::full(&[2, 3], 150.0), Tensor::full(&[2, 3], 75.5)];
        let s = IlluminanceSequence { frames, l_min: 50.0, l_rng: 100.0 };
        write_scene(&p, &s).unwrap();
        assert_eq!(read_scene(&p).unwrap(), s);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], FRAME_MAGIC);
        assert_eq!(bytes.len(), 40 + 2 * 6 * 4);
    }

    #[test]
    fn binned_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.evsf");
        let b = bin_events(&events(), 4, 1.0 / 30.0, ColumnDeltas::constant(3, 5, 1.25)).unwrap();
        write_binned(&p, &b).unwrap();
        let (d, c, bw) = read_binned(&p).unwrap();
        assert_eq!(bw, 1.0 / 30.0);
        for (a, e) in d.data().iter().zip(b.d().data()).chain(c.data().iter().zip(b.c().data())) {
            assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn schedule_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let s = vec![vec![0, 1, 4], vec![2, 2, 2]];
        write_schedule(&p, &s).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "0,1,4\n2,2,2\n");
        assert_eq!(read_schedule(&p).unwrap(), s);
    }

    #[test]
    fn truncated_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"EVSE\x01\x00").unwrap();
        assert!(matches!(read_events_bin(&p), Err(Error::Format { .. })));
        assert!(matches!(read_frame_file(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn pgm_has_graymap_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.pgm");
        write_pgm(&p, &Tensor::new(&[2, 3], vec![0.0, 0.5, 1.0, 2.0, -1.0, 0.25]).unwrap()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 255, 0, 64]);
    }

    #[test]
    fn weights_roundtrip_with_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let c = Controller::new(ControllerConfig { num_thresholds: 3, channels: 4, ..ControllerConfig::default() }).unwrap();
        save_controller(&p, &c).unwrap();
        let back = load_controller(&p).unwrap();
        assert_eq!(back.config(), c.config());
        assert_eq!(back.params().tensors(), c.params().tensors());
    }
}
