//! Plain-text checkpoints of parameters, optimizer moments and score
//! statistics. Floats use Rust's shortest round-trip formatting, so
//! save → load → save is byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::head::{StateRecord, StateStats};
use crate::model::{Architecture, Model, ModelConfig};
use crate::nncore::Tensor;

pub const HEADER: &str = "i3dol-checkpoint v1";

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

pub fn format_checkpoint(model: &Model, stats: &StateStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER}");
    let _ = writeln!(s, "classes {}", model.classes());
    let _ = writeln!(s, "step {}", model.params.step());
    for (_, p) in model.params.iter() {
        let [r, c] = p.value().shape();
        let _ = writeln!(s, "param {} {r} {c}", p.name());
        let _ = writeln!(s, "value {}", join(p.value().data()));
        let _ = writeln!(s, "m {}", join(p.first_moment().data()));
        let _ = writeln!(s, "v {}", join(p.second_moment().data()));
    }
    for (class, rec) in stats.classes() {
        let _ = writeln!(s, "class {class} {} {:?}", rec.initial_state, rec.psi_init);
    }
    for (state, rec) in stats.states() {
        let _ = write!(s, "state {state} {:?}", rec.psi_new);
        for (class, v) in &rec.psi_cur {
            let _ = write!(s, " {class}:{v:?}");
        }
        s.push('\n');
    }
    s
}

struct Reader<'a> {
    name: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Option<&'a str> {
        let (i, l) = self.lines.next()?;
        self.line_no = i + 1;
        Some(l)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.name, self.line_no, msg)
    }

    fn expect(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next().ok_or_else(|| self.err(format!("missing `{key}` line")))?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' ').or(if rest.is_empty() { Some("") } else { None }))
            .ok_or_else(|| self.err(format!("expected `{key}`")))
    }

    fn number<T: std::str::FromStr>(&self, tok: &str) -> Result<T> {
        tok.parse().map_err(|_| self.err(format!("bad number `{tok}`")))
    }

    fn floats(&self, text: &str, rows: usize, cols: usize) -> Result<Tensor> {
        let data = text
            .split_whitespace()
            .map(|t| self.number::<f64>(t))
            .collect::<Result<Vec<_>>>()?;
        if data.len() != rows * cols {
            return Err(self.err(format!("{} values for a {rows}x{cols} tensor", data.len())));
        }
        Tensor::new(rows, cols, data)
    }
}

/// Rebuild a model and its statistics. `config` and `arch` must match the
/// saved model.
pub fn parse_checkpoint(
    text: &str,
    name: &str,
    config: &ModelConfig,
    arch: Architecture,
) -> Result<(Model, StateStats)> {
    let mut r = Reader {
        name,
        lines: text.lines().enumerate(),
        line_no: 0,
    };
    if r.next() != Some(HEADER) {
        return Err(r.err(format!("expected `{HEADER}`")));
    }
    let line = r.expect("classes")?;
    let classes: usize = r.number(line.trim())?;
    let line = r.expect("step")?;
    let step: u64 = r.number(line.trim())?;
    let mut model = Model::new(config, arch, classes, &mut ChaCha8Rng::seed_from_u64(0))?;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let header = r.expect("param")?;
        let f: Vec<&str> = header.split_whitespace().collect();
        let expected = model.params.param(id).name().to_string();
        if f.len() != 3 || f[0] != expected {
            return Err(r.err(format!("expected parameter `{expected}`, found `{header}`")));
        }
        let (rows, cols): (usize, usize) = (r.number(f[1])?, r.number(f[2])?);
        if [rows, cols] != model.params.value(id).shape() {
            return Err(r.err(format!(
                "`{expected}` has shape {rows}x{cols}, model expects {:?}",
                model.params.value(id).shape()
            )));
        }
        let line = r.expect("value")?;
        let value = r.floats(line, rows, cols)?;
        let line = r.expect("m")?;
        let m = r.floats(line, rows, cols)?;
        let line = r.expect("v")?;
        let v = r.floats(line, rows, cols)?;
        model.params.load_state(id, value, m, v);
    }
    model.params.set_step(step);

    let mut stats = StateStats::new();
    let mut states = Vec::new();
    while let Some(line) = r.next() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.first().copied() {
            Some("class") if f.len() == 4 => {
                let (class, initial, psi) = (r.number(f[1])?, r.number(f[2])?, r.number(f[3])?);
                stats
                    .record_class(class, initial, psi)
                    .map_err(|e| r.err(e.to_string()))?;
            }
            Some("state") if f.len() >= 3 => {
                let mut psi_cur = BTreeMap::new();
                for pair in &f[3..] {
                    let (c, v) = pair
                        .split_once(':')
                        .ok_or_else(|| r.err(format!("bad entry `{pair}`")))?;
                    psi_cur.insert(r.number(c)?, r.number(v)?);
                }
                states.push((
                    r.number::<usize>(f[1])?,
                    StateRecord {
                        psi_new: r.number(f[2])?,
                        psi_cur,
                    },
                ));
            }
            _ => return Err(r.err(format!("unrecognized line `{line}`"))),
        }
    }
    for (state, rec) in states {
        stats.record_state(state, rec)?;
    }
    Ok((model, stats))
}

pub fn save_checkpoint(path: &Path, model: &Model, stats: &StateStats) -> Result<()> {
    fs::write(path, format_checkpoint(model, stats)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, config: &ModelConfig, arch: Architecture) -> Result<(Model, StateStats)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, &path.display().to_string(), config, arch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centroid::CentroidConfig;
    use crate::encoder::EncoderConfig;
    use crate::head::ClassifierConfig;

    fn config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                widths: vec![3, 4, 8],
                tap: 2,
            },
            centroid: CentroidConfig {
                structures: 4,
                neighbors: 3,
                refine_iters: 1,
            },
            reduction: 2,
            classifier: ClassifierConfig { hidden: [4, 4, 4] },
        }
    }

    fn stats() -> StateStats {
        let mut st = StateStats::new();
        st.record_state(
            1,
            StateRecord {
                psi_new: 0.7,
                psi_cur: BTreeMap::new(),
            },
        )
        .unwrap();
        st.record_class(0, 1, 0.75).unwrap();
        st.record_class(1, 1, 0.65).unwrap();
        st.record_state(
            2,
            StateRecord {
                psi_new: 0.9,
                psi_cur: BTreeMap::from([(0, 0.3), (1, 1.0 / 3.0)]),
            },
        )
        .unwrap();
        st.record_class(2, 2, 0.9).unwrap();
        st
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = Model::new(&config(), Architecture::default(), 2, &mut rng).unwrap();
        model.expand_classes(1, &mut rng).unwrap();
        let text = format_checkpoint(&model, &stats());
        let (loaded, st) = parse_checkpoint(&text, "ck", &config(), Architecture::default()).unwrap();
        assert_eq!(format_checkpoint(&loaded, &st), text);
        assert_eq!(st, stats());
        assert_eq!(loaded.classes(), 3);
        for ((_, a), (_, b)) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(a.value(), b.value());
        }
    }

    #[test]
    fn mismatched_architecture_is_a_parse_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Model::new(&config(), Architecture::default(), 2, &mut rng).unwrap();
        let text = format_checkpoint(&model, &StateStats::new());
        let no_attention = Architecture {
            attention: false,
            ..Architecture::default()
        };
        assert!(matches!(
            parse_checkpoint(&text, "ck", &config(), no_attention),
            Err(Error::Parse { .. })
        ));
        let truncated: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            parse_checkpoint(&truncated, "ck", &config(), Architecture::default()),
            Err(Error::Parse { .. })
        ));
        assert!(parse_checkpoint("nope\n", "ck", &config(), Architecture::default()).is_err());
    }
}
