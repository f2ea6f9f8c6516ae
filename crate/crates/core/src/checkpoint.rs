//! Named-matrix container for trained parameters.
//!
//! Text layout, one item per line:
//!
//! ```text
//! PADING-CKPT-1
//! <entry count>
//! <name> <rows> <cols>
//! <rows*cols values, space separated>
//! ...
//! ```
//!
//! Values are printed with 17 significant digits so a save/load cycle is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Param};

pub const MAGIC: &str = "PADING-CKPT-1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, Matrix>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params<'a>(params: impl IntoIterator<Item = &'a Param>) -> Result<Self> {
        let mut c = Self::new();
        for p in params {
            c.insert(p.name(), p.value.clone())?;
        }
        Ok(c)
    }

    /// Fails on a duplicate name or a name containing whitespace.
    pub fn insert(&mut self, name: &str, value: Matrix) -> Result<()> {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Format(format!("invalid checkpoint entry name {name:?}")));
        }
        if self.entries.insert(name.to_string(), value).is_some() {
            return Err(Error::Format(format!("duplicate checkpoint entry {name}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Copies every stored matrix into the parameter of the same name.
    /// Missing entries and shape mismatches are errors.
    pub fn load_into<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>) -> Result<()> {
        let mut missing = Vec::new();
        for p in params {
            match self.entries.get(p.name()) {
                Some(m) if m.shape() == p.shape() => p.value = m.clone(),
                Some(m) => {
                    return Err(Error::Dimension {
                        op: "checkpoint load",
                        left: m.shape(),
                        right: p.shape(),
                    })
                }
                None => missing.push(p.name().to_string()),
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Lookup(missing))
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\n{}\n", self.entries.len());
        for (name, m) in &self.entries {
            out.push_str(&format!("{name} {} {}\n", m.rows(), m.cols()));
            let values: Vec<String> = m.as_slice().iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("unexpected end of checkpoint, expected {what}"),
            })
        };
        let (line, magic) = next("magic")?;
        if magic.trim() != MAGIC {
            return Err(Error::Parse {
                line,
                message: format!("expected magic {MAGIC}, found {:?}", magic.trim()),
            });
        }
        let (line, count) = next("entry count")?;
        let count: usize = count.trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad entry count {count:?}"),
        })?;
        let mut c = Self::new();
        for _ in 0..count {
            let (line, header) = next("entry header")?;
            let fields: Vec<&str> = header.split_whitespace().collect();
            let bad = || Error::Parse {
                line,
                message: format!("bad entry header {header:?}"),
            };
            if fields.len() != 3 {
                return Err(bad());
            }
            let rows: usize = fields[1].parse().map_err(|_| bad())?;
            let cols: usize = fields[2].parse().map_err(|_| bad())?;
            let (line, body) = next("entry values")?;
            let values = body
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad value {t:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != rows * cols {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} values, found {}", rows * cols, values.len()),
                });
            }
            c.insert(fields[0], Matrix::new(rows, cols, values)?)?;
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = vec![
            Param::new("a.w", Matrix::randn(3, 4, 1.0, &mut rng)),
            Param::new("b", Matrix::from_rows(&[[1e-300, -0.1, f64::MAX]]).unwrap()),
            Param::new("empty", Matrix::zeros(0, 3)),
        ];
        let c = Checkpoint::from_params(&params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, c);

        let mut fresh: Vec<Param> = params.iter().map(|p| Param::new(p.name(), Matrix::zeros(p.shape().0, p.shape().1))).collect();
        back.load_into(fresh.iter_mut()).unwrap();
        assert_eq!(fresh, params);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(Checkpoint::parse("PADING-CKPT-0\n0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Checkpoint::parse("PADING-CKPT-1\n1\nx 1 2\n1.0\n"), Err(Error::Parse { line: 4, .. })));
        assert!(Checkpoint::parse("PADING-CKPT-1\n2\nx 1 1\n1\n").is_err());
        let mut c = Checkpoint::new();
        c.insert("x", Matrix::zeros(1, 1)).unwrap();
        assert!(c.insert("x", Matrix::zeros(1, 1)).is_err());
        assert!(c.insert("a b", Matrix::zeros(1, 1)).is_err());

        let mut wrong = vec![Param::new("x", Matrix::zeros(2, 1))];
        assert!(matches!(c.load_into(wrong.iter_mut()), Err(Error::Dimension { .. })));
        let mut missing = vec![Param::new("y", Matrix::zeros(1, 1))];
        assert!(matches!(c.load_into(missing.iter_mut()), Err(Error::Lookup(names)) if names == ["y"]));
    }
}
