//! Recording file formats.
//!
//! CSV: a header line `#channels=<n>,rate_hz=<r>,modality=<EEG|IMU>,units=<u>`, an optional
//! `#labels=<a>;<b>;...` line, then one line per sample with one decimal value per channel.
//!
//! Binary (little-endian): `b"BIOR1"`, u32 channel count, f64 rate, u8 modality code
//! (0 = EEG, 1 = IMU), u64 sample count, channel-major f32 samples, then a CRC32 over all
//! preceding bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::recording::{default_labels, Modality, Recording};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"BIOR1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Binary,
}

impl FileFormat {
    /// `.bin`/`.bior` select binary, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("bior") => FileFormat::Binary,
            _ => FileFormat::Csv,
        }
    }
}

pub fn load_recording(path: &Path, format: FileFormat) -> Result<Recording> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        FileFormat::Csv => {
            let text = std::str::from_utf8(&bytes).map_err(|e| {
                Error::format(format!("byte {}", e.valid_up_to()), "file is not valid UTF-8")
            })?;
            parse_csv(text)
        }
        FileFormat::Binary => decode_binary(&bytes),
    }
}

pub fn save_recording(rec: &Recording, path: &Path, format: FileFormat) -> Result<()> {
    let bytes = match format {
        FileFormat::Csv => to_csv(rec).into_bytes(),
        FileFormat::Binary => encode_binary(rec),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Header {
    channels: usize,
    rate: f64,
    modality: Modality,
    units: String,
}

fn parse_header(line: &str) -> Result<Header> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::format("line 1, byte 0", "header must start with `#`"))?;
    let mut channels = None;
    let mut rate = None;
    let mut modality = None;
    let mut units = None;
    let mut offset = 1;
    for field in body.split(',') {
        let pos = format!("line 1, byte {offset}");
        offset += field.len() + 1;
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::format(pos.clone(), format!("expected key=value, found `{field}`")))?;
        let bad = |what: &str| Error::format(pos.clone(), format!("invalid {what} `{value}`"));
        match key.trim() {
            "channels" => channels = Some(value.trim().parse::<usize>().map_err(|_| bad("channel count"))?),
            "rate_hz" => rate = Some(value.trim().parse::<f64>().map_err(|_| bad("sample rate"))?),
            "modality" => modality = Some(Modality::from_str(value.trim()).map_err(|_| bad("modality"))?),
            "units" => units = Some(value.trim().to_string()),
            other => return Err(Error::format(pos, format!("unknown header key `{other}`"))),
        }
    }
    let missing = |k: &str| Error::format("line 1", format!("header lacks `{k}`"));
    Ok(Header {
        channels: channels.ok_or_else(|| missing("channels"))?,
        rate: rate.ok_or_else(|| missing("rate_hz"))?,
        modality: modality.ok_or_else(|| missing("modality"))?,
        units: units.ok_or_else(|| missing("units"))?,
    })
}

pub fn parse_csv(text: &str) -> Result<Recording> {
    let mut lines = text.lines().enumerate().peekable();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::format("line 1, byte 0", "empty file"))?;
    let header = parse_header(first)?;
    if header.channels == 0 {
        return Err(Error::format("line 1", "channel count must be positive"));
    }
    let mut labels = default_labels(header.modality, header.channels);
    if let Some((_, l)) = lines.peek() {
        if let Some(list) = l.strip_prefix("#labels=") {
            let parsed: Vec<String> = list.split(';').map(|s| s.trim().to_string()).collect();
            if parsed.len() != header.channels {
                return Err(Error::Validation(format!(
                    "header says {} channels, label line names {}",
                    header.channels,
                    parsed.len()
                )));
            }
            labels = parsed;
            lines.next();
        }
    }
    let mut data = vec![Vec::new(); header.channels];
    for (ln, line) in lines {
        let line_no = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        let mut offset = 0;
        for (c, tok) in line.split(',').enumerate() {
            count += 1;
            if c < header.channels {
                let v: f64 = tok.trim().parse().map_err(|_| {
                    Error::format(format!("line {line_no}, byte {offset}"), format!("not a number: `{tok}`"))
                })?;
                if v.is_nan() {
                    return Err(Error::Validation(format!(
                        "NaN sample in channel {c} ({}) at index {}",
                        labels[c],
                        data[c].len()
                    )));
                }
                data[c].push(v);
            }
            offset += tok.len() + 1;
        }
        if count != header.channels {
            return Err(Error::Validation(format!(
                "header says {} channels, line {line_no} has {count} values",
                header.channels
            )));
        }
    }
    if data[0].is_empty() {
        return Err(Error::Validation("recording has no samples".into()));
    }
    Recording::with_meta(header.modality, header.rate, &header.units, labels, data)
}

/// CSV text; values use the shortest representation that parses back to the same `f64`.
pub fn to_csv(rec: &Recording) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "#channels={},rate_hz={},modality={},units={}",
        rec.channels(),
        rec.sample_rate_hz(),
        rec.modality(),
        rec.units()
    );
    let _ = writeln!(out, "#labels={}", rec.labels().join(";"));
    for i in 0..rec.samples() {
        for c in 0..rec.channels() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", rec.channel(c)[i]);
        }
        out.push('\n');
    }
    out
}

pub fn encode_binary(rec: &Recording) -> Vec<u8> {
    let mut out = Vec::with_capacity(30 + 4 * rec.channels() * rec.samples());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rec.channels() as u32).to_le_bytes());
    out.extend_from_slice(&rec.sample_rate_hz().to_le_bytes());
    out.push(rec.modality().code());
    out.extend_from_slice(&(rec.samples() as u64).to_le_bytes());
    for row in rec.rows() {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Recording> {
    const HEAD: usize = 5 + 4 + 8 + 1 + 8;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("byte 0", "missing BIOR1 magic"));
    }
    if bytes.len() < HEAD + 4 {
        return Err(Error::format(format!("byte {}", bytes.len()), "truncated header"));
    }
    let channels = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let rate = f64::from_le_bytes(bytes[9..17].try_into().unwrap());
    let modality = Modality::from_code(bytes[17])
        .ok_or_else(|| Error::format("byte 17", format!("unknown modality code {}", bytes[17])))?;
    let samples = u64::from_le_bytes(bytes[18..26].try_into().unwrap()) as usize;
    let expected = channels
        .checked_mul(samples)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEAD + 4))
        .ok_or_else(|| Error::format("byte 5", "declared size overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            format!("byte {}", bytes.len().min(expected)),
            format!("expected {expected} bytes for {channels}×{samples} samples, found {}", bytes.len()),
        ));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Checksum("recording payload".into()));
    }
    let payload = &body[HEAD..];
    let data = (0..channels)
        .map(|c| {
            payload[c * samples * 4..(c + 1) * samples * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect()
        })
        .collect();
    Recording::with_meta(
        modality,
        rate,
        modality.default_units(),
        default_labels(modality, channels),
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n: usize) -> String {
        format!("#channels={n},rate_hz=200,modality=EEG,units=uV\n")
    }

    #[test]
    fn parses_32_channel_csv() {
        let mut text = header(32);
        for i in 0..400 {
            let row: Vec<String> = (0..32).map(|c| format!("{}", i as f64 * 0.5 + c as f64)).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let rec = parse_csv(&text).unwrap();
        assert_eq!((rec.channels(), rec.samples()), (32, 400));
        assert_eq!(rec.labels()[15], "Cz");
        assert_eq!(rec.channel(3)[2], 4.0);
    }

    #[test]
    fn short_rows_are_validation_errors() {
        let text = "#channels=9,rate_hz=128,modality=IMU,units=mixed\n1,2,3,4,5,6,7,8\n";
        assert!(matches!(parse_csv(text), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_header_reports_position() {
        match parse_csv("#channels=3,rate_hz=abc,modality=EEG,units=uV\n1,2,3\n") {
            Err(Error::Format { position, .. }) => assert_eq!(position, "line 1, byte 12"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_csv("#channels=2,rate_hz=200,modality=EEG,units=uV\n1,2\n3,x\n") {
            Err(Error::Format { position, .. }) => assert_eq!(position, "line 3, byte 2"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_csv("channels=2\n").is_err());
    }

    #[test]
    fn nan_names_channel_and_index() {
        let err = parse_csv("#channels=2,rate_hz=200,modality=EEG,units=uV\n1,2\n3,NaN\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("channel 1") && msg.contains("index 1"), "{msg}");
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let rows = vec![vec![0.1, -2.5e-7, 1.0 / 3.0], vec![1e300, 0.0, -0.0]];
        let rec = Recording::new(Modality::Imu, 128.0, rows).unwrap();
        let back = parse_csv(&to_csv(&rec)).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn binary_round_trip_and_crc() {
        let rows: Vec<Vec<f64>> = (0..9).map(|c| (0..256).map(|i| ((i * c) as f64).sin()).collect()).collect();
        let rec = Recording::new(Modality::Imu, 128.0, rows).unwrap();
        let bytes = encode_binary(&rec);
        let back = decode_binary(&bytes).unwrap();
        assert_eq!(back.sample_rate_hz(), 128.0);
        assert_eq!(encode_binary(&back), bytes);
        let mut bad = bytes.clone();
        bad[40] ^= 0x10;
        assert!(matches!(decode_binary(&bad), Err(Error::Checksum(_))));
        assert!(matches!(decode_binary(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
    }
}
