//! EDF / EDF+ container: a 256-byte ASCII header, 256 header bytes per
//! signal, then data records of little-endian 16-bit samples.
//!
//! Text fields are stored without their right padding; numeric fields keep
//! their parsed value. Writing a parsed file reproduces its bytes whenever
//! the original fields were written in canonical form (left-aligned, space
//! padded, shortest decimal).

use crate::error::{Error, Result};

const FIXED_HEADER: usize = 256;
const PER_SIGNAL: usize = 256;

/// Label that marks an EDF+ annotation channel.
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Clone, Debug, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalHeader {
    /// A signal with the full 16-bit digital range mapped onto
    /// `[physical_min, physical_max]`.
    pub fn new(label: &str, samples_per_record: usize, physical_min: f64, physical_max: f64) -> Self {
        SignalHeader {
            label: label.to_string(),
            transducer: String::new(),
            physical_dimension: "uV".to_string(),
            physical_min,
            physical_max,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record,
            reserved: String::new(),
        }
    }

    pub fn annotations(samples_per_record: usize) -> Self {
        SignalHeader {
            label: ANNOTATION_LABEL.to_string(),
            physical_dimension: String::new(),
            physical_min: -1.0,
            physical_max: 1.0,
            ..Self::new(ANNOTATION_LABEL, samples_per_record, -1.0, 1.0)
        }
    }

    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATION_LABEL
    }

    /// Sampling rate given the record duration in seconds.
    pub fn sampling_rate(&self, record_duration: f64) -> f64 {
        self.samples_per_record as f64 / record_duration
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient: String,
    pub recording: String,
    /// `dd.mm.yy`
    pub start_date: String,
    /// `hh.mm.ss`
    pub start_time: String,
    pub header_bytes: usize,
    /// `EDF+C` / `EDF+D` for EDF+ files, empty for plain EDF.
    pub reserved: String,
    /// -1 when the writer did not know the count.
    pub n_records: i64,
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    pub fn new(signals: Vec<SignalHeader>, n_records: usize, record_duration: f64) -> Self {
        EdfHeader {
            version: "0".to_string(),
            patient: "X X X X".to_string(),
            recording: "Startdate X X X X".to_string(),
            start_date: "01.01.00".to_string(),
            start_time: "00.00.00".to_string(),
            header_bytes: FIXED_HEADER + PER_SIGNAL * signals.len(),
            reserved: String::new(),
            n_records: n_records as i64,
            record_duration,
            signals,
        }
    }

    pub fn record_samples(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record).sum()
    }

    pub fn signal_index(&self, label: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.label.trim() == label.trim())
    }

    pub fn labels(&self) -> Vec<String> {
        self.signals.iter().map(|s| s.label.clone()).collect()
    }
}

/// A parsed EDF file: header plus each signal's digital samples with all
/// data records concatenated.
#[derive(Clone, Debug, PartialEq)]
pub struct EdfFile {
    pub header: EdfHeader,
    pub signals: Vec<Vec<i16>>,
}

impl EdfFile {
    pub fn n_records(&self) -> usize {
        self.header.n_records.max(0) as usize
    }

    /// Physical values of one signal.
    pub fn physical(&self, signal: usize) -> Result<Vec<f64>> {
        let spec = &self.header.signals[signal];
        digital_to_physical(&self.signals[signal], spec)
    }

    /// Raw bytes of one signal, split per data record (annotation channels).
    pub fn record_bytes(&self, signal: usize) -> Vec<Vec<u8>> {
        let spr = self.header.signals[signal].samples_per_record;
        self.signals[signal]
            .chunks(spr)
            .map(|chunk| chunk.iter().flat_map(|s| s.to_le_bytes()).collect())
            .collect()
    }
}

/// Linear calibration from digital to physical units. Values outside the
/// digital range are mapped, not clipped.
pub fn digital_to_physical(digital: &[i16], spec: &SignalHeader) -> Result<Vec<f64>> {
    let drange = f64::from(spec.digital_max) - f64::from(spec.digital_min);
    if drange == 0.0 {
        return Err(Error::Data(format!(
            "signal {:?} has an empty digital range",
            spec.label
        )));
    }
    let gain = (spec.physical_max - spec.physical_min) / drange;
    let dmin = f64::from(spec.digital_min);
    Ok(digital
        .iter()
        .map(|&d| (f64::from(d) - dmin) * gain + spec.physical_min)
        .collect())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn field(&mut self, width: usize, what: &str) -> Result<&'a str> {
        let end = self.pos + width;
        let raw = self.bytes.get(self.pos..end).ok_or_else(|| Error::Edf {
            offset: self.pos,
            msg: format!("truncated header while reading {what}"),
        })?;
        if let Some(i) = raw.iter().position(|b| !(0x20..=0x7e).contains(b)) {
            return Err(Error::Edf {
                offset: self.pos + i,
                msg: format!("non-ASCII byte in {what}"),
            });
        }
        let at = self.pos;
        self.pos = end;
        std::str::from_utf8(raw).map_err(|_| Error::Edf {
            offset: at,
            msg: format!("invalid text in {what}"),
        })
    }

    fn text(&mut self, width: usize, what: &str) -> Result<String> {
        Ok(self.field(width, what)?.trim_end().to_string())
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, what: &str) -> Result<T> {
        let at = self.pos;
        let raw = self.field(width, what)?;
        raw.trim().parse().map_err(|_| Error::Edf {
            offset: at,
            msg: format!("{what} is not numeric: {:?}", raw.trim()),
        })
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<EdfHeader> {
    if bytes.len() < FIXED_HEADER {
        return Err(Error::Edf {
            offset: bytes.len(),
            msg: format!("file is {} bytes, shorter than the 256-byte header", bytes.len()),
        });
    }
    let mut r = Reader { bytes, pos: 0 };
    let version = r.text(8, "version")?;
    let patient = r.text(80, "patient id")?;
    let recording = r.text(80, "recording id")?;
    let start_date = r.text(8, "start date")?;
    let start_time = r.text(8, "start time")?;
    let header_at = r.pos;
    let header_bytes: usize = r.number(8, "header byte count")?;
    let reserved = r.text(44, "reserved")?;
    let n_records: i64 = r.number(8, "number of data records")?;
    let record_duration: f64 = r.number(8, "record duration")?;
    let signals_at = r.pos;
    let ns: usize = r.number(4, "number of signals")?;
    if ns == 0 {
        return Err(Error::Edf {
            offset: signals_at,
            msg: "file declares zero signals".into(),
        });
    }
    if header_bytes != FIXED_HEADER + PER_SIGNAL * ns {
        return Err(Error::Edf {
            offset: header_at,
            msg: format!(
                "header size {header_bytes} inconsistent with {ns} signals (expected {})",
                FIXED_HEADER + PER_SIGNAL * ns
            ),
        });
    }
    if bytes.len() < header_bytes {
        return Err(Error::Edf {
            offset: bytes.len(),
            msg: format!("truncated signal headers: need {header_bytes} bytes"),
        });
    }

    let mut cols = |width: usize, what: &str| -> Result<Vec<String>> {
        (0..ns).map(|_| r.text(width, what)).collect()
    };
    let labels = cols(16, "signal label")?;
    let transducers = cols(80, "transducer type")?;
    let dims = cols(8, "physical dimension")?;
    let pmin = numbers::<f64>(&mut r, ns, 8, "physical minimum")?;
    let pmax = numbers::<f64>(&mut r, ns, 8, "physical maximum")?;
    let dmin = numbers::<i32>(&mut r, ns, 8, "digital minimum")?;
    let dmax = numbers::<i32>(&mut r, ns, 8, "digital maximum")?;
    let prefilter: Vec<String> = (0..ns)
        .map(|_| r.text(80, "prefiltering"))
        .collect::<Result<_>>()?;
    let spr_at = r.pos;
    let spr = numbers::<usize>(&mut r, ns, 8, "samples per record")?;
    let reserved_sig: Vec<String> = (0..ns)
        .map(|_| r.text(32, "signal reserved"))
        .collect::<Result<_>>()?;

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let field_at = |base: usize, width: usize| base + i * width;
        if spr[i] == 0 {
            return Err(Error::Edf {
                offset: field_at(spr_at, 8),
                msg: format!("signal {i} has zero samples per record"),
            });
        }
        if dmax[i] == dmin[i] {
            return Err(Error::Edf {
                offset: FIXED_HEADER + ns * (16 + 80 + 8 + 8 + 8) + i * 8,
                msg: format!("signal {i} digital minimum equals maximum"),
            });
        }
        if pmax[i] == pmin[i] {
            return Err(Error::Edf {
                offset: FIXED_HEADER + ns * (16 + 80 + 8) + i * 8,
                msg: format!("signal {i} physical minimum equals maximum"),
            });
        }
        signals.push(SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: pmin[i],
            physical_max: pmax[i],
            digital_min: dmin[i],
            digital_max: dmax[i],
            prefiltering: prefilter[i].clone(),
            samples_per_record: spr[i],
            reserved: reserved_sig[i].clone(),
        });
    }
    Ok(EdfHeader {
        version,
        patient,
        recording,
        start_date,
        start_time,
        header_bytes,
        reserved,
        n_records,
        record_duration,
        signals,
    })
}

fn numbers<T: std::str::FromStr>(
    r: &mut Reader<'_>,
    n: usize,
    width: usize,
    what: &str,
) -> Result<Vec<T>> {
    (0..n).map(|_| r.number(width, what)).collect()
}

/// Parses a complete EDF/EDF+ file.
pub fn parse_edf(bytes: &[u8]) -> Result<EdfFile> {
    let mut header = parse_header(bytes)?;
    let record_samples = header.record_samples();
    let record_bytes = record_samples * 2;
    let available = (bytes.len() - header.header_bytes) / record_bytes;
    let n_records = if header.n_records < 0 {
        header.n_records = available as i64;
        available
    } else {
        header.n_records as usize
    };
    let needed = header.header_bytes + n_records * record_bytes;
    if bytes.len() < needed {
        return Err(Error::Edf {
            offset: bytes.len(),
            msg: format!(
                "truncated data: {n_records} records need {needed} bytes, file has {}",
                bytes.len()
            ),
        });
    }
    let mut signals: Vec<Vec<i16>> = header
        .signals
        .iter()
        .map(|s| Vec::with_capacity(s.samples_per_record * n_records))
        .collect();
    let mut pos = header.header_bytes;
    for _ in 0..n_records {
        for (sig, spec) in signals.iter_mut().zip(&header.signals) {
            let chunk = &bytes[pos..pos + 2 * spec.samples_per_record];
            sig.extend(chunk.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])));
            pos += chunk.len();
        }
    }
    Ok(EdfFile { header, signals })
}

fn put_text(out: &mut Vec<u8>, text: &str, width: usize, what: &str) -> Result<()> {
    if !text.is_ascii() || text.len() > width {
        return Err(Error::Edf {
            offset: out.len(),
            msg: format!("{what} {text:?} does not fit {width} ASCII bytes"),
        });
    }
    out.extend_from_slice(text.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - text.len()));
    Ok(())
}

/// Shortest decimal rendering of a header number.
fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Serializes an [`EdfFile`]; fails if a field overflows its width or the
/// sample arrays disagree with the header.
pub fn write_edf(file: &EdfFile) -> Result<Vec<u8>> {
    let h = &file.header;
    let ns = h.signals.len();
    if h.header_bytes != FIXED_HEADER + PER_SIGNAL * ns {
        return Err(Error::Edf {
            offset: 184,
            msg: format!("header size {} inconsistent with {ns} signals", h.header_bytes),
        });
    }
    if file.signals.len() != ns {
        return Err(Error::Data(format!(
            "{} sample arrays for {ns} signals",
            file.signals.len()
        )));
    }
    let n_records = file.n_records();
    for (i, (sig, spec)) in file.signals.iter().zip(&h.signals).enumerate() {
        if sig.len() != spec.samples_per_record * n_records {
            return Err(Error::Data(format!(
                "signal {i} has {} samples, header implies {}",
                sig.len(),
                spec.samples_per_record * n_records
            )));
        }
    }

    let mut out = Vec::with_capacity(h.header_bytes + 2 * h.record_samples() * n_records);
    put_text(&mut out, &h.version, 8, "version")?;
    put_text(&mut out, &h.patient, 80, "patient id")?;
    put_text(&mut out, &h.recording, 80, "recording id")?;
    put_text(&mut out, &h.start_date, 8, "start date")?;
    put_text(&mut out, &h.start_time, 8, "start time")?;
    put_text(&mut out, &h.header_bytes.to_string(), 8, "header byte count")?;
    put_text(&mut out, &h.reserved, 44, "reserved")?;
    put_text(&mut out, &h.n_records.to_string(), 8, "number of data records")?;
    put_text(&mut out, &format_number(h.record_duration), 8, "record duration")?;
    put_text(&mut out, &ns.to_string(), 4, "number of signals")?;
    for s in &h.signals {
        put_text(&mut out, &s.label, 16, "signal label")?;
    }
    for s in &h.signals {
        put_text(&mut out, &s.transducer, 80, "transducer type")?;
    }
    for s in &h.signals {
        put_text(&mut out, &s.physical_dimension, 8, "physical dimension")?;
    }
    for s in &h.signals {
        put_text(&mut out, &format_number(s.physical_min), 8, "physical minimum")?;
    }
    for s in &h.signals {
        put_text(&mut out, &format_number(s.physical_max), 8, "physical maximum")?;
    }
    for s in &h.signals {
        put_text(&mut out, &s.digital_min.to_string(), 8, "digital minimum")?;
    }
    for s in &h.signals {
        put_text(&mut out, &s.digital_max.to_string(), 8, "digital maximum")?;
    }
    for s in &h.signals {
        put_text(&mut out, &s.prefiltering, 80, "prefiltering")?;
    }
    for s in &h.signals {
        put_text(&mut out, &s.samples_per_record.to_string(), 8, "samples per record")?;
    }
    for s in &h.signals {
        put_text(&mut out, &s.reserved, 32, "signal reserved")?;
    }
    debug_assert_eq!(out.len(), h.header_bytes);

    for r in 0..n_records {
        for (sig, spec) in file.signals.iter().zip(&h.signals) {
            let spr = spec.samples_per_record;
            for v in &sig[r * spr..(r + 1) * spr] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Reinterprets annotation bytes as samples, zero-padding to whole records.
pub fn bytes_to_samples(bytes: &[u8], samples_per_record: usize) -> Vec<i16> {
    let mut padded = bytes.to_vec();
    padded.resize(samples_per_record * 2, 0);
    padded
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_signal() -> EdfFile {
        let header = EdfHeader::new(vec![SignalHeader::new("EEG Fpz-Cz", 4, -100.0, 100.0)], 1, 1.0);
        EdfFile {
            header,
            signals: vec![vec![-32768, -1, 0, 32767]],
        }
    }

    #[test]
    fn single_record_recovers_samples() {
        let file = one_signal();
        let bytes = write_edf(&file).unwrap();
        assert_eq!(bytes.len(), 512 + 8);
        let parsed = parse_edf(&bytes).unwrap();
        assert_eq!(parsed.signals[0], vec![-32768, -1, 0, 32767]);
        assert_eq!(parsed, file);
        assert_eq!(write_edf(&parsed).unwrap(), bytes);
    }

    #[test]
    fn header_size_for_three_signals() {
        let sig = SignalHeader::new("x", 1, -1.0, 1.0);
        let h = EdfHeader::new(vec![sig.clone(), sig.clone(), sig], 0, 1.0);
        assert_eq!(h.header_bytes, 1024);
    }

    #[test]
    fn calibration_endpoints() {
        let spec = SignalHeader::new("x", 1, -200.0, 200.0);
        let p = digital_to_physical(&[-32768, 32767], &spec).unwrap();
        assert!((p[0] + 200.0).abs() < 1e-12);
        assert!((p[1] - 200.0).abs() < 1e-12);
        let sym = SignalHeader {
            digital_min: -100,
            digital_max: 100,
            ..spec.clone()
        };
        assert_eq!(digital_to_physical(&[0], &sym).unwrap(), vec![0.0]);
        let flat = SignalHeader {
            digital_min: 5,
            digital_max: 5,
            ..spec
        };
        assert!(digital_to_physical(&[0], &flat).is_err());
    }

    #[test]
    fn errors_carry_offsets() {
        let bytes = write_edf(&one_signal()).unwrap();
        match parse_edf(&bytes[..100]).unwrap_err() {
            Error::Edf { offset, .. } => assert_eq!(offset, 100),
            e => panic!("unexpected {e}"),
        }
        match parse_edf(&bytes[..bytes.len() - 1]).unwrap_err() {
            Error::Edf { msg, .. } => assert!(msg.contains("truncated"), "{msg}"),
            e => panic!("unexpected {e}"),
        }
        let mut bad = bytes.clone();
        bad[184..192].copy_from_slice(b"768     ");
        match parse_edf(&bad).unwrap_err() {
            Error::Edf { offset, msg } => {
                assert_eq!(offset, 184);
                assert!(msg.contains("inconsistent"), "{msg}");
            }
            e => panic!("unexpected {e}"),
        }
        let mut bad = bytes;
        bad[236..244].copy_from_slice(b"one     ");
        match parse_edf(&bad).unwrap_err() {
            Error::Edf { offset, msg } => {
                assert_eq!(offset, 236);
                assert!(msg.contains("not numeric"), "{msg}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_record_count_is_inferred() {
        let mut file = one_signal();
        file.header.n_records = -1;
        file.signals[0].clear();
        let mut bytes = write_edf(&file).unwrap();
        for v in [1i16, 2, 3, 4, 5, 6, 7, 8] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let parsed = parse_edf(&bytes).unwrap();
        assert_eq!(parsed.header.n_records, 2);
        assert_eq!(parsed.signals[0].len(), 8);
    }
}
