//! File formats: field snapshots (self-describing header + raw f64), CSV
//! exports for plotting, solver time series, and gnuplot-compatible tables.

use crate::domain::{DomainSpec, Geometry, Parity, ScalarField};
use crate::error::{Error, Result};
use crate::solvers::TimeSeriesRow;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &str = "lowmach-field v1";

fn parity_tag(p: Parity) -> &'static str {
    match p {
        Parity::Periodic => "periodic",
        Parity::EvenInY => "even",
        Parity::OddInY => "odd",
        Parity::MixedInY => "mixed",
    }
}

fn parity_from_tag(s: &str) -> Result<Parity> {
    Ok(match s {
        "periodic" => Parity::Periodic,
        "even" => Parity::EvenInY,
        "odd" => Parity::OddInY,
        "mixed" => Parity::MixedInY,
        other => return Err(Error::Config(format!("unknown parity tag `{other}`"))),
    })
}

/// Header (ASCII lines, blank-line terminated) followed by row-major
/// little-endian f64 samples of the computational array.
pub fn write_snapshot(path: &Path, field: &ScalarField, name: &str, time: f64) -> Result<()> {
    let spec = field.spec();
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    writeln!(
        w,
        "geometry {}",
        match spec.geometry {
            Geometry::Torus2D => "torus",
            Geometry::Channel2D => "channel",
        }
    )?;
    writeln!(w, "nx {}", spec.nx)?;
    writeln!(w, "ny {}", spec.ny)?;
    writeln!(w, "lx {:.17e}", spec.lx)?;
    writeln!(w, "parity {}", parity_tag(field.parity()))?;
    writeln!(w, "name {name}")?;
    writeln!(w, "time {time:.17e}")?;
    writeln!(w, "data {} {}", spec.rows(), spec.nx)?;
    writeln!(w)?;
    for &v in field.values().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub struct Snapshot {
    pub field: ScalarField,
    pub name: String,
    pub time: f64,
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut header = String::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Config("truncated snapshot header".into()));
        }
        if line.trim().is_empty() {
            break;
        }
        header.push_str(&line);
    }
    let mut geometry = None;
    let mut nx = None;
    let mut ny = None;
    let mut lx = None;
    let mut parity = None;
    let mut name = String::new();
    let mut time = 0.0f64;
    let mut dims = None;
    for (i, line) in header.lines().enumerate() {
        if i == 0 {
            if line.trim() != MAGIC {
                return Err(Error::Config(format!("bad magic `{line}`")));
            }
            continue;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| Error::Config(format!("malformed header line `{line}`")))?;
        match key {
            "geometry" => {
                geometry = Some(match value.trim() {
                    "torus" => Geometry::Torus2D,
                    "channel" => Geometry::Channel2D,
                    other => return Err(Error::Config(format!("unknown geometry `{other}`"))),
                })
            }
            "nx" => nx = Some(value.trim().parse::<usize>().map_err(cfg_err)?),
            "ny" => ny = Some(value.trim().parse::<usize>().map_err(cfg_err)?),
            "lx" => lx = Some(value.trim().parse::<f64>().map_err(cfg_err)?),
            "parity" => parity = Some(parity_from_tag(value.trim())?),
            "name" => name = value.trim().to_string(),
            "time" => time = value.trim().parse::<f64>().map_err(cfg_err)?,
            "data" => {
                let mut it = value.split_whitespace();
                let rows = it.next().unwrap_or("0").parse::<usize>().map_err(cfg_err)?;
                let cols = it.next().unwrap_or("0").parse::<usize>().map_err(cfg_err)?;
                dims = Some((rows, cols));
            }
            other => return Err(Error::Config(format!("unknown header key `{other}`"))),
        }
    }
    let spec = DomainSpec::new(
        geometry.ok_or_else(|| Error::Config("missing geometry".into()))?,
        nx.ok_or_else(|| Error::Config("missing nx".into()))?,
        ny.ok_or_else(|| Error::Config("missing ny".into()))?,
        lx.ok_or_else(|| Error::Config("missing lx".into()))?,
    )?;
    let parity = parity.ok_or_else(|| Error::Config("missing parity".into()))?;
    let (rows, cols) = dims.ok_or_else(|| Error::Config("missing data dims".into()))?;
    if (rows, cols) != (spec.rows(), spec.nx) {
        return Err(Error::Config(format!(
            "data dims {rows}×{cols} do not match the domain"
        )));
    }
    let mut raw = vec![0u8; rows * cols * 8];
    r.read_exact(&mut raw)?;
    let mut values = ndarray::Array2::zeros((rows, cols));
    for (i, chunk) in raw.chunks_exact(8).enumerate() {
        values[(i / cols, i % cols)] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(Snapshot { field: ScalarField::from_values(spec, parity, values), name, time })
}

fn cfg_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Config(e.to_string())
}

/// (x, y, value) rows over the physical grid.
pub fn write_csv(path: &Path, field: &ScalarField) -> Result<()> {
    let spec = field.spec();
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x,y,value")?;
    for j in 0..field.physical_rows() {
        for i in 0..spec.nx {
            writeln!(w, "{:.17e},{:.17e},{:.17e}", spec.x(i), spec.y(j), field.values()[(j, i)])?;
        }
    }
    Ok(())
}

/// t, kinetic energy, mass, ‖f‖₄, ‖ḟ‖₃, ‖δv‖₀, dt.
pub fn write_timeseries(path: &Path, rows: &[TimeSeriesRow]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t,kinetic,mass,f_h4,fdot_h3,div_l2,dt")?;
    for r in rows {
        writeln!(
            w,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.t, r.kinetic, r.mass, r.f_h4, r.fdot_h3, r.div_l2, r.dt
        )?;
    }
    Ok(())
}

/// Two-column gnuplot table.
pub fn write_dat(path: &Path, header: &str, points: &[(f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# {header}")?;
    for (x, y) in points {
        writeln!(w, "{x:.17e} {y:.17e}")?;
    }
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("json serialization: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::random_scalar;
    use crate::rng::Rng;

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("lowmach-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut rng = Rng::new(5);
        for (spec, parity) in [
            (DomainSpec::torus(16, 16, 1.0), Parity::Periodic),
            (DomainSpec::channel(16, 8, 2.0), Parity::EvenInY),
        ] {
            let f = random_scalar(spec, parity, 3, &mut rng);
            let path = dir.join(format!("snap-{:?}.bin", parity));
            write_snapshot(&path, &f, "testfield", 0.625).unwrap();
            let snap = read_snapshot(&path).unwrap();
            assert_eq!(snap.name, "testfield");
            assert_eq!(snap.time, 0.625);
            assert_eq!(snap.field.parity(), parity);
            assert_eq!(snap.field.spec(), f.spec());
            for (a, b) in snap.field.values().iter().zip(f.values().iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn csv_export_has_all_physical_rows() {
        let dir = std::env::temp_dir().join("lowmach-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let spec = DomainSpec::channel(8, 8, 1.0);
        let f = ScalarField::constant(spec, 1.5);
        let path = dir.join("field.csv");
        write_csv(&path, &f).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // header + (ny+1)·nx rows
        assert_eq!(text.lines().count(), 1 + 9 * 8);
    }
}
