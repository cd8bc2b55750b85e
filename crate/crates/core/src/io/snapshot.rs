//! Particle snapshots in two equivalent formats: a text form (17
//! significant digits, so f64 round-trips exactly) and a binary twin with
//! the same schema for large runs. Readers sniff the magic bytes.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use super::LoadError;
use crate::physics::{Particle, RunConfig};
use crate::util::V3;

const TEXT_MAGIC: &str = "tasksph snapshot 1";
const BIN_MAGIC: &[u8; 8] = b"TSPH0001";

#[derive(Debug, Clone, PartialEq)]
pub struct SnapRow {
    pub id: u64,
    pub x: V3,
    pub v: V3,
    pub m: f64,
    pub u: f64,
    pub h: f64,
    pub rho: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub gamma: f64,
    pub box_size: V3,
    pub rows: Vec<SnapRow>,
}

impl Snapshot {
    pub fn from_particles(parts: &[Particle], t: f64, gamma: f64, box_size: V3) -> Snapshot {
        let rows = parts
            .iter()
            .map(|p| SnapRow {
                id: p.id,
                x: p.x,
                v: p.v,
                m: p.m,
                u: p.u,
                h: p.h,
                rho: p.rho(),
                p: p.p,
            })
            .collect();
        Snapshot { t, gamma, box_size, rows }
    }

    /// Rebuild engine input. Density and pressure are re-derived by the
    /// engine, so only the dynamic fields carry over.
    pub fn to_particles(&self) -> Vec<Particle> {
        self.rows
            .iter()
            .map(|r| Particle::new(r.x, r.v, r.m, r.u, r.h, r.id))
            .collect()
    }

    /// RunConfig matching this snapshot's box and gamma, other fields
    /// default.
    pub fn base_config(&self) -> RunConfig {
        RunConfig {
            gamma: self.gamma,
            box_size: self.box_size,
            ..RunConfig::default()
        }
    }

    /// Binary when the extension is "bin", text otherwise.
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if path.extension().is_some_and(|e| e == "bin") {
            self.write_binary(path)
        } else {
            self.write_text(path)
        }
    }

    pub fn write_text(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{TEXT_MAGIC}")?;
        writeln!(out, "n = {}", self.rows.len())?;
        writeln!(out, "t = {:.16e}", self.t)?;
        writeln!(out, "gamma = {:.16e}", self.gamma)?;
        writeln!(
            out,
            "box = {:.16e} {:.16e} {:.16e}",
            self.box_size[0], self.box_size[1], self.box_size[2]
        )?;
        writeln!(out, "# id x y z vx vy vz m u h rho p")?;
        for r in &self.rows {
            writeln!(
                out,
                "{} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
                r.id, r.x[0], r.x[1], r.x[2], r.v[0], r.v[1], r.v[2], r.m, r.u, r.h, r.rho, r.p
            )?;
        }
        out.flush()
    }

    pub fn write_binary(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(BIN_MAGIC)?;
        out.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        for v in [self.t, self.gamma, self.box_size[0], self.box_size[1], self.box_size[2]] {
            out.write_all(&v.to_le_bytes())?;
        }
        for r in &self.rows {
            out.write_all(&r.id.to_le_bytes())?;
            for v in [
                r.x[0], r.x[1], r.x[2], r.v[0], r.v[1], r.v[2], r.m, r.u, r.h, r.rho, r.p,
            ] {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()
    }

    pub fn read(path: &Path) -> Result<Snapshot, LoadError> {
        let bytes = std::fs::read(path)?;
        let snap = if bytes.starts_with(BIN_MAGIC) {
            Snapshot::parse_binary(&bytes)?
        } else {
            Snapshot::parse_text(&bytes)?
        };
        for (i, r) in snap.rows.iter().enumerate() {
            let finite = r.x.iter().chain(r.v.iter()).all(|v| v.is_finite())
                && [r.m, r.u, r.h, r.rho, r.p].iter().all(|v| v.is_finite());
            if !finite {
                return Err(LoadError::Format(format!("non-finite values in record {i}")));
            }
        }
        Ok(snap)
    }

    fn parse_text(bytes: &[u8]) -> Result<Snapshot, LoadError> {
        let mut lines = bytes.lines();
        let mut line_no = 0usize;
        let mut next = |what: &str| -> Result<String, LoadError> {
            line_no += 1;
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(LoadError::Io(e)),
                None => Err(LoadError::Parse {
                    line: line_no,
                    msg: format!("truncated file, expected {what}"),
                }),
            }
        };
        let magic = next("magic")?;
        if magic.trim() != TEXT_MAGIC {
            return Err(LoadError::Parse {
                line: 1,
                msg: format!("not a snapshot (magic {magic:?})"),
            });
        }
        let field = |line: usize, s: &str, key: &str| -> Result<String, LoadError> {
            let (k, v) = s.split_once('=').ok_or_else(|| LoadError::Parse {
                line,
                msg: format!("expected {key} = ..., got {s:?}"),
            })?;
            if k.trim() != key {
                return Err(LoadError::Parse {
                    line,
                    msg: format!("expected key {key}, got {k:?}"),
                });
            }
            Ok(v.trim().to_string())
        };
        let n_line = next("n")?;
        let n: usize = field(2, &n_line, "n")?.parse().map_err(|_| LoadError::Parse {
            line: 2,
            msg: "bad particle count".into(),
        })?;
        let t_line = next("t")?;
        let t: f64 = field(3, &t_line, "t")?.parse().map_err(|_| LoadError::Parse {
            line: 3,
            msg: "bad time".into(),
        })?;
        let g_line = next("gamma")?;
        let gamma: f64 = field(4, &g_line, "gamma")?
            .parse()
            .map_err(|_| LoadError::Parse { line: 4, msg: "bad gamma".into() })?;
        let b_line = next("box")?;
        let b_str = field(5, &b_line, "box")?;
        let b: Vec<f64> = b_str
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| LoadError::Parse { line: 5, msg: "bad box".into() })?;
        if b.len() != 3 {
            return Err(LoadError::Parse { line: 5, msg: "box needs 3 numbers".into() });
        }
        next("column header")?;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let line = 7 + i;
            let row = next("particle record")?;
            let mut it = row.split_whitespace();
            let mut take = |what: &str| -> Result<&str, LoadError> {
                it.next().ok_or_else(|| LoadError::Parse {
                    line,
                    msg: format!("record {i}: missing {what}"),
                })
            };
            let id: u64 = take("id")?.parse().map_err(|_| LoadError::Parse {
                line,
                msg: format!("record {i}: bad id"),
            })?;
            let mut vals = [0.0f64; 11];
            for (j, v) in vals.iter_mut().enumerate() {
                *v = take("field")?.parse().map_err(|_| LoadError::Parse {
                    line,
                    msg: format!("record {i}: bad field {}", j + 1),
                })?;
            }
            if it.next().is_some() {
                return Err(LoadError::Parse {
                    line,
                    msg: format!("record {i}: trailing fields"),
                });
            }
            rows.push(SnapRow {
                id,
                x: [vals[0], vals[1], vals[2]],
                v: [vals[3], vals[4], vals[5]],
                m: vals[6],
                u: vals[7],
                h: vals[8],
                rho: vals[9],
                p: vals[10],
            });
        }
        Ok(Snapshot { t, gamma, box_size: [b[0], b[1], b[2]], rows })
    }

    fn parse_binary(bytes: &[u8]) -> Result<Snapshot, LoadError> {
        let mut rd = &bytes[BIN_MAGIC.len()..];
        let mut u64le = || -> Result<u64, LoadError> {
            let mut buf = [0u8; 8];
            rd.read_exact(&mut buf)
                .map_err(|_| LoadError::Format("truncated binary header".into()))?;
            Ok(u64::from_le_bytes(buf))
        };
        let n = u64le()? as usize;
        let t = f64::from_bits(u64le()?);
        let gamma = f64::from_bits(u64le()?);
        let box_size = [
            f64::from_bits(u64le()?),
            f64::from_bits(u64le()?),
            f64::from_bits(u64le()?),
        ];
        let expect = n
            .checked_mul(96)
            .ok_or_else(|| LoadError::Format("absurd particle count".into()))?;
        if rd.len() != expect {
            return Err(LoadError::Format(format!(
                "body is {} bytes, header implies {expect}",
                rd.len()
            )));
        }
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let mut buf = [0u8; 96];
            rd.read_exact(&mut buf).expect("length checked above");
            let id = u64::from_le_bytes(buf[0..8].try_into().unwrap());
            let mut vals = [0.0f64; 11];
            for (j, v) in vals.iter_mut().enumerate() {
                let off = 8 + 8 * j;
                *v = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
            }
            rows.push(SnapRow {
                id,
                x: [vals[0], vals[1], vals[2]],
                v: [vals[3], vals[4], vals[5]],
                m: vals[6],
                u: vals[7],
                h: vals[8],
                rho: vals[9],
                p: vals[10],
            });
        }
        Ok(Snapshot { t, gamma, box_size, rows })
    }
}
