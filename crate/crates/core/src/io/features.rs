//! Raw feature files: an 8-line ASCII header followed by channel-planar
//! little-endian `f64` samples.
//!
//! ```text
//! MONO2D
//! version 1
//! height <H>
//! width <W>
//! channels <C>
//! names <name>,<name>,...
//! scales <n>
//! flags <key>=<value>;...
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::Field;

pub const FEATURE_MAGIC: &str = "MONO2D";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureHeader {
    pub height: usize,
    pub width: usize,
    pub names: Vec<String>,
    pub scales: usize,
    /// Free-form `key=value` pairs (mode, seed, ...), order preserved.
    pub flags: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub header: FeatureHeader,
    pub channels: Vec<Field>,
}

impl FeatureFile {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        if self.channels.len() != h.names.len() {
            return Err(Error::InvalidShape(format!(
                "{} channels but {} names",
                self.channels.len(),
                h.names.len()
            )));
        }
        for ch in &self.channels {
            if ch.shape() != (h.height, h.width) {
                return Err(Error::InvalidShape(
                    "channel shape differs from header".into(),
                ));
            }
        }
        let check = |s: &str, forbidden: &[char]| {
            if s.is_empty()
                || s.chars()
                    .any(|c| c.is_whitespace() || forbidden.contains(&c))
            {
                Err(Error::InvalidInput(format!(
                    "`{s}` cannot be stored in a feature header"
                )))
            } else {
                Ok(())
            }
        };
        for n in &h.names {
            check(n, &[','])?;
        }
        for (k, v) in &h.flags {
            check(k, &['=', ';'])?;
            check(v, &['=', ';'])?;
        }
        let flags = if h.flags.is_empty() {
            "-".to_string()
        } else {
            h.flags
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";")
        };
        let mut out = format!(
            "{FEATURE_MAGIC}\nversion {FEATURE_VERSION}\nheight {}\nwidth {}\nchannels {}\nnames {}\nscales {}\nflags {flags}\n",
            h.height,
            h.width,
            self.channels.len(),
            h.names.join(","),
            h.scales,
        )
        .into_bytes();
        out.reserve(8 * h.height * h.width * self.channels.len());
        for ch in &self.channels {
            for v in ch.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::UnsupportedFormat(format!("feature file: {m}"));
        let mut lines = Vec::with_capacity(8);
        let mut pos = 0;
        for _ in 0..8 {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header"))?;
            lines.push(
                std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("non-UTF-8 header"))?,
            );
            pos += end + 1;
        }
        if lines[0] != FEATURE_MAGIC {
            return Err(bad("missing magic"));
        }
        let field = |line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{key}` line")))
        };
        let number = |line: &str, key: &str| -> Result<usize> {
            field(line, key)?
                .parse()
                .map_err(|_| bad(&format!("bad `{key}`")))
        };
        if number(lines[1], "version")? != FEATURE_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let height = number(lines[2], "height")?;
        let width = number(lines[3], "width")?;
        let channels = number(lines[4], "channels")?;
        let names: Vec<String> = field(lines[5], "names")?
            .split(',')
            .map(str::to_string)
            .collect();
        if names.len() != channels {
            return Err(bad("channel count does not match names"));
        }
        let scales = number(lines[6], "scales")?;
        let flag_text = field(lines[7], "flags")?;
        let flags = if flag_text == "-" {
            Vec::new()
        } else {
            flag_text
                .split(';')
                .map(|kv| {
                    kv.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(|| bad("malformed flag"))
                })
                .collect::<Result<_>>()?
        };
        let plane = height * width;
        let body = &bytes[pos..];
        if body.len() != 8 * plane * channels {
            return Err(bad(&format!(
                "expected {} data bytes, found {}",
                8 * plane * channels,
                body.len()
            )));
        }
        let channels = body
            .chunks_exact(8 * plane.max(1))
            .take(channels)
            .map(|chunk| {
                let data = chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect();
                Field::from_vec(height, width, data)
            })
            .collect::<Result<_>>()?;
        Ok(FeatureFile {
            header: FeatureHeader {
                height,
                width,
                names,
                scales,
                flags,
            },
            channels,
        })
    }

    pub fn flag(&self, key: &str) -> Option<&str> {
        self.header
            .flags
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn write_features(path: &Path, file: &FeatureFile) -> Result<()> {
    super::write_atomic(path, &file.encode()?)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureFile> {
    FeatureFile::decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> FeatureFile {
        FeatureFile {
            header: FeatureHeader {
                height: 2,
                width: 3,
                names: vec!["phase".into(), "asym".into()],
                scales: 8,
                flags: vec![("mode".into(), "both".into()), ("seed".into(), "7".into())],
            },
            channels: vec![
                Field::from_fn(2, 3, |r, c| (r * 3 + c) as f64 / 5.0),
                Field::from_fn(2, 3, |r, c| 1.0 - (r + c) as f64 / 3.0),
            ],
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().encode().unwrap();
        let text = String::from_utf8_lossy(&bytes[..bytes.len() - 96]);
        assert_eq!(
            text,
            "MONO2D\nversion 1\nheight 2\nwidth 3\nchannels 2\nnames phase,asym\nscales 8\nflags mode=both;seed=7\n"
        );
        assert_eq!(
            &bytes[bytes.len() - 8..],
            &(1.0 - 3.0 / 3.0f64).to_le_bytes()
        );
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().encode().unwrap();
        assert!(FeatureFile::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(FeatureFile::decode(&wrong).is_err());
        assert!(FeatureFile::decode(b"MONO2D\nversion 2\n").is_err());
        let mut bad_names = sample();
        bad_names.header.names[0] = "a b".into();
        assert!(bad_names.encode().is_err());
    }

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(proptest::num::f64::ANY, 12), scales in 1usize..16) {
            let mut f = sample();
            f.header.scales = scales;
            f.channels = vec![
                Field::from_vec(2, 3, values[..6].to_vec()).unwrap(),
                Field::from_vec(2, 3, values[6..].to_vec()).unwrap(),
            ];
            let back = FeatureFile::decode(&f.encode().unwrap()).unwrap();
            prop_assert_eq!(&back.header, &f.header);
            for (a, b) in back.channels.iter().zip(&f.channels) {
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
