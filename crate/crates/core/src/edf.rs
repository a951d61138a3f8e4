//! Minimal EDF reader/writer plus the JSON seizure manifest that travels
//! next to each file.
//!
//! Only the plain EDF subset is handled: fixed-size ASCII header, one header
//! block per signal, 16-bit little-endian samples interleaved per data record,
//! and a single shared sample rate. EDF+ annotation signals are not decoded;
//! seizure intervals come from the manifest instead.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum EdfError {
    #[error("truncated file: need {needed} bytes at offset {offset}, have {len}")]
    Truncated {
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("non-numeric {field} at byte {offset}: {text:?}")]
    NonNumeric {
        field: &'static str,
        offset: usize,
        text: String,
    },
    #[error("signal {signal}: digital minimum {dig_min} >= maximum {dig_max} (byte {offset})")]
    DigitalRange {
        signal: usize,
        offset: usize,
        dig_min: i32,
        dig_max: i32,
    },
    #[error("signal {signal}: physical minimum equals maximum (byte {offset})")]
    PhysicalRange { signal: usize, offset: usize },
    #[error("header size field {declared} does not match 256*(ns+1) = {expected} (byte 184)")]
    HeaderSize { declared: usize, expected: usize },
    #[error("signals use different sample rates ({first} Hz vs {other} Hz on signal {signal})")]
    MixedSampleRate {
        first: f64,
        other: f64,
        signal: usize,
    },
    #[error("channel {channel}: sample {index} = {value} outside physical range [{min}, {max}]")]
    OutOfRange {
        channel: usize,
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("field {field} value {value:?} does not fit in {width} ASCII characters")]
    FieldWidth {
        field: &'static str,
        value: String,
        width: usize,
    },
    #[error("recording is invalid: {0}")]
    InvalidRecording(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

/// Seizure (or other) annotation in seconds from the recording start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub onset: f64,
    pub duration: f64,
    pub label: String,
}

impl Annotation {
    pub fn seizure(onset: f64, duration: f64) -> Self {
        Annotation {
            onset,
            duration,
            label: "seizure".into(),
        }
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

/// Multichannel recording in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub channel_labels: Vec<String>,
    pub sample_rate: f64,
    pub samples: Vec<Vec<f64>>,
    pub annotations: Vec<Annotation>,
}

impl Recording {
    pub fn new(channel_labels: Vec<String>, sample_rate: f64, samples: Vec<Vec<f64>>) -> Self {
        Recording {
            channel_labels,
            sample_rate,
            samples,
            annotations: Vec::new(),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn channel(&self, label: &str) -> Option<&[f64]> {
        self.channel_labels
            .iter()
            .position(|l| l.eq_ignore_ascii_case(label))
            .map(|i| self.samples[i].as_slice())
    }

    pub fn seizures(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations
            .iter()
            .filter(|a| a.label.eq_ignore_ascii_case("seizure"))
    }

    pub fn validate(&self) -> Result<(), EdfError> {
        let bad = |m: String| Err(EdfError::InvalidRecording(m));
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return bad(format!("sample rate {} must be positive", self.sample_rate));
        }
        if self.channel_labels.len() != self.samples.len() {
            return bad(format!(
                "{} labels for {} channels",
                self.channel_labels.len(),
                self.samples.len()
            ));
        }
        let len = self.len();
        if let Some(i) = self.samples.iter().position(|c| c.len() != len) {
            return bad(format!("channel {i} length differs from channel 0"));
        }
        let dur = self.duration();
        for a in &self.annotations {
            if a.onset < 0.0 || a.duration < 0.0 || a.end() > dur + 1e-9 {
                return bad(format!(
                    "annotation [{}, {}) outside [0, {dur}]",
                    a.onset,
                    a.end()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dim: String,
    pub phys_min: f64,
    pub phys_max: f64,
    pub dig_min: i32,
    pub dig_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl SignalHeader {
    fn gain(&self) -> f64 {
        (self.phys_max - self.phys_min) / f64::from(self.dig_max - self.dig_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        (f64::from(digital) - f64::from(self.dig_min)) * self.gain() + self.phys_min
    }

    pub fn to_digital(&self, physical: f64) -> i32 {
        let d = (physical - self.phys_min) / self.gain() + f64::from(self.dig_min);
        (d.round() as i32).clamp(self.dig_min, self.dig_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    /// `dd.mm.yy`
    pub start_date: String,
    /// `hh.mm.ss`
    pub start_time: String,
    pub header_bytes: usize,
    pub n_records: usize,
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    pub fn n_signals(&self) -> usize {
        self.signals.len()
    }

    fn record_samples(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record).sum()
    }
}

/// Fields of the written header that callers may pin down. Anything left
/// `None` gets a default derived from the recording.
#[derive(Debug, Clone, Default)]
pub struct HeaderOverrides {
    pub patient_id: Option<String>,
    pub recording_id: Option<String>,
    pub start_date: Option<String>,
    pub start_time: Option<String>,
    pub record_duration: Option<f64>,
    pub physical_dim: Option<String>,
    pub transducer: Option<String>,
    /// Shared physical range for every channel.
    pub physical_range: Option<(f64, f64)>,
    pub digital_range: Option<(i32, i32)>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Next `width` bytes as text; non-ASCII bytes become `?`.
    fn take(&mut self, width: usize) -> Result<(usize, String), EdfError> {
        let offset = self.pos;
        let end = offset + width;
        if end > self.bytes.len() {
            return Err(EdfError::Truncated {
                offset,
                needed: width,
                len: self.bytes.len(),
            });
        }
        self.pos = end;
        let text = self.bytes[offset..end]
            .iter()
            .map(|&b| if b.is_ascii() { b as char } else { '?' })
            .collect();
        Ok((offset, text))
    }

    fn text(&mut self, width: usize) -> Result<String, EdfError> {
        let (_, t) = self.take(width)?;
        Ok(t.trim_end().to_string())
    }

    fn number<T: std::str::FromStr>(
        &mut self,
        width: usize,
        field: &'static str,
    ) -> Result<T, EdfError> {
        let (offset, t) = self.take(width)?;
        t.trim().parse().map_err(|_| EdfError::NonNumeric {
            field,
            offset,
            text: t.clone(),
        })
    }
}

/// Parse only the header (fixed part and per-signal arrays).
pub fn parse_edf_header(bytes: &[u8]) -> Result<EdfHeader, EdfError> {
    if bytes.len() < FIXED_HEADER {
        return Err(EdfError::Truncated {
            offset: 0,
            needed: FIXED_HEADER,
            len: bytes.len(),
        });
    }
    let mut c = Cursor { bytes, pos: 0 };
    let version = c.text(8)?;
    let patient_id = c.text(80)?;
    let recording_id = c.text(80)?;
    let start_date = c.text(8)?;
    let start_time = c.text(8)?;
    let header_bytes: usize = c.number(8, "header bytes")?;
    c.take(44)?;
    let n_records: usize = c.number(8, "number of records")?;
    let record_duration: f64 = c.number(8, "record duration")?;
    let ns: usize = c.number(4, "number of signals")?;

    let expected = FIXED_HEADER + SIGNAL_HEADER * ns;
    if header_bytes != expected {
        return Err(EdfError::HeaderSize {
            declared: header_bytes,
            expected,
        });
    }
    if bytes.len() < expected {
        return Err(EdfError::Truncated {
            offset: FIXED_HEADER,
            needed: expected - FIXED_HEADER,
            len: bytes.len(),
        });
    }

    fn column<T>(
        ns: usize,
        mut f: impl FnMut() -> Result<T, EdfError>,
    ) -> Result<Vec<T>, EdfError> {
        (0..ns).map(|_| f()).collect()
    }
    let labels = column(ns, || c.text(16))?;
    let transducers = column(ns, || c.text(80))?;
    let dims = column(ns, || c.text(8))?;
    let phys_min: Vec<f64> = column(ns, || c.number(8, "physical minimum"))?;
    let phys_max: Vec<f64> = column(ns, || c.number(8, "physical maximum"))?;
    let dig_min_at = c.pos;
    let dig_min: Vec<i32> = column(ns, || c.number(8, "digital minimum"))?;
    let dig_max: Vec<i32> = column(ns, || c.number(8, "digital maximum"))?;
    let prefilter = column(ns, || c.text(80))?;
    let spr: Vec<usize> = column(ns, || c.number(8, "samples per record"))?;

    let phys_min_at = FIXED_HEADER + ns * (16 + 80 + 8);
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        if dig_min[i] >= dig_max[i] {
            return Err(EdfError::DigitalRange {
                signal: i,
                offset: dig_min_at + 8 * i,
                dig_min: dig_min[i],
                dig_max: dig_max[i],
            });
        }
        if phys_min[i] == phys_max[i] {
            return Err(EdfError::PhysicalRange {
                signal: i,
                offset: phys_min_at + 8 * i,
            });
        }
        signals.push(SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dim: dims[i].clone(),
            phys_min: phys_min[i],
            phys_max: phys_max[i],
            dig_min: dig_min[i],
            dig_max: dig_max[i],
            prefiltering: prefilter[i].clone(),
            samples_per_record: spr[i],
        });
    }

    Ok(EdfHeader {
        version,
        patient_id,
        recording_id,
        start_date,
        start_time,
        header_bytes,
        n_records,
        record_duration,
        signals,
    })
}

/// Parse header and samples. Annotations are left empty; see [`Manifest`].
pub fn parse_edf_full(bytes: &[u8]) -> Result<(EdfHeader, Recording), EdfError> {
    let header = parse_edf_header(bytes)?;
    let ns = header.n_signals();

    let sample_rate = match header.signals.first() {
        Some(s) => s.samples_per_record as f64 / header.record_duration,
        None => 1.0 / header.record_duration,
    };
    for (i, s) in header.signals.iter().enumerate().skip(1) {
        let rate = s.samples_per_record as f64 / header.record_duration;
        if (rate - sample_rate).abs() > 1e-9 {
            return Err(EdfError::MixedSampleRate {
                first: sample_rate,
                other: rate,
                signal: i,
            });
        }
    }

    let record_bytes = 2 * header.record_samples();
    let data_start = header.header_bytes;
    let needed = record_bytes * header.n_records;
    if bytes.len() < data_start + needed {
        return Err(EdfError::Truncated {
            offset: data_start,
            needed,
            len: bytes.len(),
        });
    }

    let mut samples: Vec<Vec<f64>> = header
        .signals
        .iter()
        .map(|s| Vec::with_capacity(s.samples_per_record * header.n_records))
        .collect();
    let mut pos = data_start;
    for _ in 0..header.n_records {
        for (sig, out) in header.signals.iter().zip(samples.iter_mut()) {
            let chunk = &bytes[pos..pos + 2 * sig.samples_per_record];
            out.extend(
                chunk
                    .chunks_exact(2)
                    .map(|b| sig.to_physical(i16::from_le_bytes([b[0], b[1]]))),
            );
            pos += chunk.len();
        }
    }

    let recording = Recording {
        channel_labels: header.signals.iter().map(|s| s.label.clone()).collect(),
        sample_rate,
        samples,
        annotations: Vec::new(),
    };
    debug_assert_eq!(recording.n_channels(), ns);
    Ok((header, recording))
}

pub fn parse_edf(bytes: &[u8]) -> Result<Recording, EdfError> {
    parse_edf_full(bytes).map(|(_, r)| r)
}

fn fit(field: &'static str, value: &str, width: usize) -> Result<String, EdfError> {
    if value.len() > width || !value.is_ascii() {
        return Err(EdfError::FieldWidth {
            field,
            value: value.to_string(),
            width,
        });
    }
    Ok(format!("{value:<width$}"))
}

/// Shortest decimal rendering of `v` that fits `width` characters.
fn format_number(field: &'static str, v: f64, width: usize) -> Result<String, EdfError> {
    let plain = format!("{v}");
    if plain.len() <= width {
        return Ok(plain);
    }
    for decimals in (0..width).rev() {
        let s = format!("{v:.decimals$}");
        if s.len() <= width {
            return Ok(s);
        }
    }
    Err(EdfError::FieldWidth {
        field,
        value: plain,
        width,
    })
}

/// Value that survives the 8-character round trip exactly.
fn representable(field: &'static str, v: f64) -> Result<f64, EdfError> {
    let s = format_number(field, v, 8)?;
    Ok(s.parse().expect("formatted number parses"))
}

fn default_physical_range(channel: &[f64]) -> (f64, f64) {
    let peak = channel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound = peak.ceil().max(1.0);
    (-bound, bound)
}

/// Build the header `write_edf` would emit for `recording`.
pub fn header_for(
    recording: &Recording,
    overrides: &HeaderOverrides,
) -> Result<EdfHeader, EdfError> {
    recording.validate()?;
    let record_duration = representable(
        "record duration",
        overrides.record_duration.unwrap_or(1.0),
    )?;
    let spr_f = recording.sample_rate * record_duration;
    if (spr_f - spr_f.round()).abs() > 1e-9 || spr_f < 1.0 {
        return Err(EdfError::InvalidRecording(format!(
            "sample rate {} Hz does not give whole samples per {record_duration} s record",
            recording.sample_rate
        )));
    }
    let spr = spr_f.round() as usize;
    if recording.len() % spr != 0 {
        return Err(EdfError::InvalidRecording(format!(
            "{} samples is not a whole number of {spr}-sample records",
            recording.len()
        )));
    }
    let (dig_min, dig_max) = overrides.digital_range.unwrap_or((-32768, 32767));
    if dig_min >= dig_max || dig_min < i32::from(i16::MIN) || dig_max > i32::from(i16::MAX) {
        return Err(EdfError::InvalidRecording(format!(
            "digital range [{dig_min}, {dig_max}] is not an increasing 16-bit range"
        )));
    }

    let mut signals = Vec::with_capacity(recording.n_channels());
    for (label, channel) in recording.channel_labels.iter().zip(&recording.samples) {
        let (lo, hi) = overrides
            .physical_range
            .unwrap_or_else(|| default_physical_range(channel));
        let phys_min = representable("physical minimum", lo)?;
        let phys_max = representable("physical maximum", hi)?;
        if phys_min == phys_max {
            return Err(EdfError::InvalidRecording(format!(
                "channel {label}: empty physical range"
            )));
        }
        signals.push(SignalHeader {
            label: fit("label", label, 16)?.trim_end().to_string(),
            transducer: overrides.transducer.clone().unwrap_or_default(),
            physical_dim: overrides.physical_dim.clone().unwrap_or_else(|| "uV".into()),
            phys_min,
            phys_max,
            dig_min,
            dig_max,
            prefiltering: String::new(),
            samples_per_record: spr,
        });
    }
    let ns = signals.len();
    Ok(EdfHeader {
        version: "0".into(),
        patient_id: overrides.patient_id.clone().unwrap_or_else(|| "X X X X".into()),
        recording_id: overrides
            .recording_id
            .clone()
            .unwrap_or_else(|| "Startdate X X X X".into()),
        start_date: overrides
            .start_date
            .clone()
            .unwrap_or_else(|| "01.01.00".into()),
        start_time: overrides
            .start_time
            .clone()
            .unwrap_or_else(|| "00.00.00".into()),
        header_bytes: FIXED_HEADER + SIGNAL_HEADER * ns,
        n_records: recording.len() / spr,
        record_duration,
        signals,
    })
}

fn encode_header(h: &EdfHeader) -> Result<Vec<u8>, EdfError> {
    let mut out = String::with_capacity(h.header_bytes);
    out += &fit("version", &h.version, 8)?;
    out += &fit("patient id", &h.patient_id, 80)?;
    out += &fit("recording id", &h.recording_id, 80)?;
    out += &fit("start date", &h.start_date, 8)?;
    out += &fit("start time", &h.start_time, 8)?;
    out += &fit("header bytes", &h.header_bytes.to_string(), 8)?;
    out += &" ".repeat(44);
    out += &fit("number of records", &h.n_records.to_string(), 8)?;
    out += &fit(
        "record duration",
        &format_number("record duration", h.record_duration, 8)?,
        8,
    )?;
    out += &fit("number of signals", &h.n_signals().to_string(), 4)?;

    let sig = &h.signals;
    for s in sig {
        out += &fit("label", &s.label, 16)?;
    }
    for s in sig {
        out += &fit("transducer", &s.transducer, 80)?;
    }
    for s in sig {
        out += &fit("physical dimension", &s.physical_dim, 8)?;
    }
    for s in sig {
        out += &fit(
            "physical minimum",
            &format_number("physical minimum", s.phys_min, 8)?,
            8,
        )?;
    }
    for s in sig {
        out += &fit(
            "physical maximum",
            &format_number("physical maximum", s.phys_max, 8)?,
            8,
        )?;
    }
    for s in sig {
        out += &fit("digital minimum", &s.dig_min.to_string(), 8)?;
    }
    for s in sig {
        out += &fit("digital maximum", &s.dig_max.to_string(), 8)?;
    }
    for s in sig {
        out += &fit("prefiltering", &s.prefiltering, 80)?;
    }
    for s in sig {
        out += &fit("samples per record", &s.samples_per_record.to_string(), 8)?;
    }
    for _ in sig {
        out += &" ".repeat(32);
    }
    debug_assert_eq!(out.len(), h.header_bytes);
    Ok(out.into_bytes())
}

/// Serialise a recording with an explicit header. The header's signal
/// layout must match the recording.
pub fn write_edf_with_header(
    recording: &Recording,
    header: &EdfHeader,
) -> Result<Vec<u8>, EdfError> {
    if header.n_signals() != recording.n_channels() {
        return Err(EdfError::InvalidRecording(format!(
            "header has {} signals, recording {} channels",
            header.n_signals(),
            recording.n_channels()
        )));
    }
    for (i, s) in header.signals.iter().enumerate() {
        if recording.samples[i].len() != s.samples_per_record * header.n_records {
            return Err(EdfError::InvalidRecording(format!(
                "channel {i}: {} samples, header declares {}",
                recording.samples[i].len(),
                s.samples_per_record * header.n_records
            )));
        }
    }
    let mut bytes = encode_header(header)?;
    bytes.reserve(2 * header.record_samples() * header.n_records);

    for (ch, (s, samples)) in header.signals.iter().zip(&recording.samples).enumerate() {
        let (lo, hi) = if s.phys_min < s.phys_max {
            (s.phys_min, s.phys_max)
        } else {
            (s.phys_max, s.phys_min)
        };
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= lo && **v <= hi))
        {
            return Err(EdfError::OutOfRange {
                channel: ch,
                index,
                value,
                min: lo,
                max: hi,
            });
        }
    }

    for rec in 0..header.n_records {
        for (s, samples) in header.signals.iter().zip(&recording.samples) {
            let r: Range<usize> = rec * s.samples_per_record..(rec + 1) * s.samples_per_record;
            for &v in &samples[r] {
                bytes.extend_from_slice(&(s.to_digital(v) as i16).to_le_bytes());
            }
        }
    }
    Ok(bytes)
}

pub fn write_edf(recording: &Recording, overrides: &HeaderOverrides) -> Result<Vec<u8>, EdfError> {
    let header = header_for(recording, overrides)?;
    write_edf_with_header(recording, &header)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeizureInterval {
    pub onset: f64,
    pub duration: f64,
}

/// Sidecar annotation file: `{"file": "...", "seizures": [{"onset": .., "duration": ..}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub file: String,
    #[serde(default)]
    pub seizures: Vec<SeizureInterval>,
}

impl Manifest {
    pub fn from_recording(file: impl Into<String>, recording: &Recording) -> Self {
        Manifest {
            file: file.into(),
            seizures: recording
                .seizures()
                .map(|a| SeizureInterval {
                    onset: a.onset,
                    duration: a.duration,
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, EdfError> {
        serde_json::from_str(text).map_err(|e| EdfError::Manifest(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn annotations(&self) -> Vec<Annotation> {
        self.seizures
            .iter()
            .map(|s| Annotation::seizure(s.onset, s.duration))
            .collect()
    }

    /// Attach the manifest's seizures to a parsed recording, checking bounds.
    pub fn apply(&self, recording: &mut Recording) -> Result<(), EdfError> {
        recording.annotations = self.annotations();
        recording.validate()
    }
}
