//! Plain-text weight checkpoints.
//!
//! ```text
//! spikegrad-checkpoint 1
//! config <key> <value...>
//! layer <index> <rows> <cols>
//! <row-major values, one matrix row per line>
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so reading
//! a checkpoint back gives bit-identical weights.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::snn::{DenseLifLayer, LifParams, Network};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "spikegrad-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Config echo as ordered key/value pairs.
    pub config: Vec<(String, String)>,
    pub weights: Vec<Matrix>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, config: Vec<(String, String)>) -> Self {
        Self {
            config,
            weights: net.weights().into_iter().cloned().collect(),
        }
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Rebuilds a network, every layer using `params`.
    pub fn to_network(&self, params: LifParams) -> Result<Network> {
        let layers = self
            .weights
            .iter()
            .map(|w| DenseLifLayer::new(w.clone(), params))
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\n");
        for (k, v) in &self.config {
            if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::InvalidParameter(format!("config entry {k:?} cannot be written")));
            }
            writeln!(out, "config {k} {v}").unwrap();
        }
        for (i, w) in self.weights.iter().enumerate() {
            writeln!(out, "layer {i} {} {}", w.rows(), w.cols()).unwrap();
            for r in 0..w.rows() {
                let line: Vec<String> = w.row(r).iter().map(|x| format!("{x:?}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Checkpoint { line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

        let (n, header) = lines.next().ok_or_else(|| err(1, "empty checkpoint".into()))?;
        match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            [m, v] if *m == MAGIC => {
                let version: u32 = v.parse().map_err(|_| err(n, format!("bad version {v:?}")))?;
                if version != FORMAT_VERSION {
                    return Err(err(n, format!("unsupported version {version}")));
                }
            }
            _ => return Err(err(n, format!("expected '{MAGIC} <version>' header"))),
        }

        let mut config = Vec::new();
        let mut weights = Vec::new();
        let mut ended = false;
        while let Some((n, line)) = lines.next() {
            if ended {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(err(n, "content after 'end'".into()));
            }
            if let Some(rest) = line.strip_prefix("config ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                config.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("layer ") {
                let nums: Vec<usize> = rest
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| err(n, format!("bad layer header {line:?}"))))
                    .collect::<Result<_>>()?;
                let [idx, rows, cols] = nums[..] else {
                    return Err(err(n, format!("bad layer header {line:?}")));
                };
                if idx != weights.len() {
                    return Err(err(n, format!("expected layer {}, found {idx}", weights.len())));
                }
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (rn, row) = lines.next().ok_or_else(|| err(n, "truncated layer".into()))?;
                    let before = data.len();
                    for tok in row.split_whitespace() {
                        data.push(tok.parse::<f64>().map_err(|_| err(rn, format!("bad value {tok:?}")))?);
                    }
                    if data.len() - before != cols {
                        return Err(err(rn, format!("expected {cols} values, found {}", data.len() - before)));
                    }
                }
                weights.push(Matrix::from_vec(rows, cols, data)?);
            } else if line == "end" {
                ended = true;
            } else {
                return Err(err(n, format!("unexpected line {line:?}")));
            }
        }
        if !ended {
            return Err(err(text.lines().count(), "missing 'end'".into()));
        }
        Ok(Self { config, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: vec![("lr".into(), "0.01".into()), ("note".into(), "two words".into())],
            weights: vec![
                Matrix::from_rows(&[vec![0.1, -1.0 / 3.0], vec![1e-300, 5e20]]).unwrap(),
                Matrix::from_rows(&[vec![f64::MIN_POSITIVE, -0.0]]).unwrap(),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::parse(&ck.to_text().unwrap()).unwrap();
        assert_eq!(back.config, ck.config);
        for (a, b) in back.weights.iter().zip(&ck.weights) {
            let bits = |m: &Matrix| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.config_value("note"), Some("two words"));
    }

    #[test]
    fn header_layout() {
        let text = sample().to_text().unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("spikegrad-checkpoint 1"));
        assert_eq!(lines.next(), Some("config lr 0.01"));
        assert!(text.contains("layer 1 1 2\n"));
        assert!(text.ends_with("end\n"));
    }

    #[test]
    fn file_round_trip_and_network() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let ck = Checkpoint {
            config: vec![],
            weights: vec![Matrix::filled(3, 2, 0.25), Matrix::filled(1, 3, -0.5)],
        };
        ck.save(&path).unwrap();
        let net = Checkpoint::load(&path).unwrap().to_network(LifParams::default()).unwrap();
        assert_eq!((net.n_in(), net.n_out()), (2, 1));
        assert!(matches!(
            Checkpoint::load(&dir.path().join("nope")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let good = sample().to_text().unwrap();
        let cases = [
            String::new(),
            good.replace("spikegrad-checkpoint 1", "spikegrad-checkpoint 2"),
            good.replace("spikegrad-checkpoint", "other"),
            good.replace("end\n", ""),
            good.replace("layer 1", "layer 2"),
            good.replace("0.1 ", "0.1 7 "),
            good.replace("0.1 ", "zero "),
            format!("{good}junk\n"),
        ];
        for text in &cases {
            assert!(matches!(Checkpoint::parse(text), Err(Error::Checkpoint { .. })), "{text:?}");
        }
    }

    #[test]
    fn unwritable_config_key() {
        let ck = Checkpoint {
            config: vec![("two words".into(), "x".into())],
            weights: vec![],
        };
        assert!(ck.to_text().is_err());
    }
}
