//! Bundle export: CSV and a little-endian binary dump.
//!
//! CSV has one row per grid node: `path_id,t,x,a,dB,jump_z`. `a` and `dB`
//! belong to the step leaving the node and are empty on the last node;
//! `jump_z` lists the jump sizes at the node, separated by `;`.
//!
//! Binary layout (all integers `u64`, all reals `f64`, little endian):
//!
//! ```text
//! magic "JCTLBND1" | config hash [32] | T dt scheme sigma x0 | n_paths seed
//! per path: nodes jumps | times | states | controls | brownian (0 or nodes-1 values)
//!           | per jump: node time z increment pre post
//! ```

use std::io::{self, Read, Write};

use crate::error::DumpError;
use crate::sim::{JumpEvent, PathBundle, SamplePath, Scheme, SimConfig};

const MAGIC: &[u8; 8] = b"JCTLBND1";

pub fn write_csv<W: Write>(bundle: &PathBundle, mut out: W) -> io::Result<()> {
    writeln!(out, "path_id,t,x,a,dB,jump_z")?;
    for (i, p) in bundle.paths.iter().enumerate() {
        let steps = p.steps();
        for k in 0..=steps {
            let z: Vec<String> = p.jumps().iter().filter(|j| j.node == k).map(|j| j.z.to_string()).collect();
            let (a, db) = if k < steps {
                (p.controls()[k].to_string(), p.brownian().get(k).map(f64::to_string).unwrap_or_default())
            } else {
                (String::new(), String::new())
            };
            writeln!(out, "{i},{},{},{a},{db},{}", p.times()[k], p.states()[k], z.join(";"))?;
        }
    }
    Ok(())
}

fn put_u64<W: Write>(out: &mut W, v: u64) -> io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn put_f64s<W: Write>(out: &mut W, vs: &[f64]) -> io::Result<()> {
    for v in vs {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_dump<W: Write>(bundle: &PathBundle, mut out: W) -> io::Result<()> {
    let c = &bundle.config;
    out.write_all(MAGIC)?;
    out.write_all(&bundle.config_hash())?;
    put_f64s(&mut out, &[c.horizon, c.dt, scheme_code(c.scheme), c.sigma, bundle.x0])?;
    put_u64(&mut out, c.n_paths as u64)?;
    put_u64(&mut out, c.seed)?;
    put_u64(&mut out, bundle.paths.len() as u64)?;
    for p in &bundle.paths {
        put_u64(&mut out, p.times().len() as u64)?;
        put_u64(&mut out, p.jumps().len() as u64)?;
        put_u64(&mut out, p.brownian().len() as u64)?;
        put_f64s(&mut out, p.times())?;
        put_f64s(&mut out, p.states())?;
        put_f64s(&mut out, p.controls())?;
        put_f64s(&mut out, p.brownian())?;
        for j in p.jumps() {
            put_u64(&mut out, j.node as u64)?;
            put_f64s(&mut out, &[j.time, j.z, j.increment, j.pre, j.post])?;
        }
    }
    out.flush()
}

fn scheme_code(s: Scheme) -> f64 {
    match s {
        Scheme::DirectEuler => 0.0,
        Scheme::Transformed => 1.0,
    }
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], DumpError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => DumpError::Malformed("truncated".into()),
            _ => DumpError::Io(e),
        })?;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<u64, DumpError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn len(&mut self, limit: u64) -> Result<usize, DumpError> {
        let v = self.u64()?;
        if v > limit {
            return Err(DumpError::Malformed(format!("length {v} exceeds {limit}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64, DumpError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DumpError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

const MAX_LEN: u64 = 1 << 32;

pub fn read_dump<R: Read>(input: R) -> Result<PathBundle, DumpError> {
    let mut r = Cursor { inner: input };
    if &r.bytes::<8>()? != MAGIC {
        return Err(DumpError::BadMagic);
    }
    let hash: [u8; 32] = r.bytes()?;
    let (horizon, dt, scheme, sigma, x0) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let scheme = match scheme {
        0.0 => Scheme::DirectEuler,
        1.0 => Scheme::Transformed,
        s => return Err(DumpError::Malformed(format!("unknown scheme code {s}"))),
    };
    let n_paths = r.len(MAX_LEN)?;
    let seed = r.u64()?;
    let config = SimConfig { horizon, dt, scheme, n_paths, seed, sigma };
    if config.digest(x0) != hash {
        return Err(DumpError::HashMismatch);
    }
    let stored = r.len(MAX_LEN)?;
    let mut paths = Vec::with_capacity(stored.min(1 << 20));
    for _ in 0..stored {
        let nodes = r.len(MAX_LEN)?;
        let n_jumps = r.len(MAX_LEN)?;
        let n_db = r.len(MAX_LEN)?;
        if nodes == 0 {
            return Err(DumpError::Malformed("path without nodes".into()));
        }
        let times = r.f64s(nodes)?;
        let states = r.f64s(nodes)?;
        let controls = r.f64s(nodes - 1)?;
        let brownian = r.f64s(n_db)?;
        let jumps = (0..n_jumps)
            .map(|_| {
                let node = r.len(MAX_LEN)?;
                Ok(JumpEvent { node, time: r.f64()?, z: r.f64()?, increment: r.f64()?, pre: r.f64()?, post: r.f64()? })
            })
            .collect::<Result<Vec<_>, DumpError>>()?;
        paths.push(SamplePath::from_parts(times, states, brownian, controls, jumps).map_err(|e| DumpError::Malformed(e.to_string()))?);
    }
    Ok(PathBundle { paths, config, x0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlPolicy, DriftDecomposition, JumpMap, JumpModel, JumpSize};
    use crate::sim::{simulate_bundle, ControlledSystem};

    fn bundle() -> PathBundle {
        let sys = ControlledSystem::new(DriftDecomposition::zero(), JumpModel::new(3.0, JumpSize::Normal { mean: 0.0, sd: 0.5 }, JumpMap::Identity).unwrap());
        simulate_bundle(&sys, &ControlPolicy::constant(0.0), &SimConfig::new(1.0, 0.25, 3, 9, 0.4), 0.5).unwrap()
    }

    #[test]
    fn dump_round_trip() {
        let b = bundle();
        let mut buf = Vec::new();
        write_dump(&b, &mut buf).unwrap();
        assert_eq!(read_dump(buf.as_slice()).unwrap(), b);
    }

    #[test]
    fn corrupted_header_is_detected() {
        let b = bundle();
        let mut buf = Vec::new();
        write_dump(&b, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_dump(bad.as_slice()), Err(DumpError::BadMagic)));
        let mut bad = buf.clone();
        bad[8 + 32] ^= 1;
        assert!(matches!(read_dump(bad.as_slice()), Err(DumpError::HashMismatch)));
        assert!(matches!(read_dump(&buf[..buf.len() - 3]), Err(DumpError::Malformed(_))));
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let b = bundle();
        let mut buf = Vec::new();
        write_csv(&b, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows = text.lines().count() - 1;
        assert_eq!(rows, b.paths.iter().map(|p| p.times().len()).sum::<usize>());
        assert!(text.starts_with("path_id,t,x,a,dB,jump_z\n"));
    }
}
