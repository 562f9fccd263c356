//! Serialization: CSV tables, the node table, grid-function dumps (CSV and a
//! little-endian binary block) and net dumps.
//!
//! Binary layout: `u32` level id, `u64` value count, then `count` `f64`
//! values, all little-endian.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::calculus::{norm, GridFunction};
use crate::error::{usage, Error, Result};
use crate::grid::GridLevel;
use crate::net::Net;

/// A header plus string rows; numbers use Rust's shortest round-trip form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Appends a column holding the same value on every row.
    pub fn with_constant_column(mut self, name: &str, value: &str) -> Self {
        self.header.push(name.to_string());
        for r in &mut self.rows {
            r.push(value.to_string());
        }
        self
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record(r).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Usage(format!("csv: {other:?}")),
    }
}

/// Shortest round-trip text, in exponent form for tiny or huge magnitudes.
pub fn fmt(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// `index, x0.., weight, boundary` per node.
pub fn node_table(level: &GridLevel) -> Table {
    let mut header = vec!["index".to_string()];
    header.extend((0..level.dim()).map(|a| format!("x{a}")));
    header.push("weight".into());
    header.push("boundary".into());
    let mut t = Table { header, rows: Vec::with_capacity(level.node_count()) };
    for a in 0..level.node_count() {
        let mut row = vec![a.to_string()];
        row.extend(level.point(a).into_iter().map(fmt));
        row.push(fmt(level.weight(a)));
        row.push(if level.is_boundary(a) { "boundary" } else { "interior" }.into());
        t.rows.push(row);
    }
    t
}

/// `node, value`.
pub fn grid_function_table(u: &GridFunction) -> Table {
    let mut t = Table::new(&["node", "value"]);
    for (a, v) in u.values().iter().enumerate() {
        t.rows.push(vec![a.to_string(), fmt(*v)]);
    }
    t
}

pub fn read_grid_function_csv<R: Read>(level: &Arc<GridLevel>, r: R) -> Result<GridFunction> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut values = vec![f64::NAN; level.node_count()];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let node: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Usage("bad node column".into()))?;
        let value: f64 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Usage("bad value column".into()))?;
        if node >= values.len() {
            return usage(format!("node {node} out of range"));
        }
        values[node] = value;
    }
    GridFunction::new(level.clone(), values)
}

pub fn write_grid_function_binary<W: Write>(u: &GridFunction, mut w: W) -> Result<()> {
    w.write_all(&u.level().level().to_le_bytes())?;
    w.write_all(&(u.values().len() as u64).to_le_bytes())?;
    for v in u.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid_function_binary<R: Read>(level: &Arc<GridLevel>, mut r: R) -> Result<GridFunction> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let id = u32::from_le_bytes(b4);
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    if id != level.level() || count != level.node_count() {
        return Err(Error::LevelMismatch(format!(
            "dump holds level {id} with {count} values, expected {}",
            level.key()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    GridFunction::new(level.clone(), values)
}

/// `level, h, value, increment` (increment empty on the first row).
pub fn net_table(net: &Net<f64>) -> Table {
    let mut t = Table::new(&["level", "h", "value", "increment"]);
    let mut prev: Option<f64> = None;
    for (n, h, v) in net.iter() {
        let inc = prev.map(|p| fmt(v - p)).unwrap_or_default();
        t.rows.push(vec![n.to_string(), fmt(h), fmt(*v), inc]);
        prev = Some(*v);
    }
    t
}

/// [`net_table`] of the `L²` norms of a grid-function net.
pub fn grid_net_table(net: &Net<GridFunction>) -> Table {
    let mut t = net_table(&net.map(norm));
    t.header[2] = "l2_norm".into();
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::restrict;
    use crate::grid::{build_level, Domain};

    #[test]
    fn round_trips() {
        let g = build_level(&Domain::unit(2).unwrap(), 2).unwrap();
        let u = restrict(|x| (x[0] * 3.0).sin() + x[1] / 7.0, &g).unwrap();
        let mut bin = Vec::new();
        write_grid_function_binary(&u, &mut bin).unwrap();
        assert_eq!(bin.len(), 4 + 8 + 8 * g.node_count());
        assert_eq!(&bin[..4], &2u32.to_le_bytes());
        let back = read_grid_function_binary(&g, bin.as_slice()).unwrap();
        assert_eq!(back.values(), u.values());
        let csv = grid_function_table(&u).to_csv_string().unwrap();
        let back = read_grid_function_csv(&g, csv.as_bytes()).unwrap();
        assert_eq!(back.values(), u.values());
        let other = build_level(&Domain::unit(2).unwrap(), 3).unwrap();
        assert!(read_grid_function_binary(&other, bin.as_slice()).is_err());
    }

    #[test]
    fn node_table_layout() {
        let g = build_level(&Domain::unit(1).unwrap(), 2).unwrap();
        let s = node_table(&g).to_csv_string().unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("index,x0,weight,boundary"));
        assert_eq!(lines.next(), Some("0,0,0.125,boundary"));
        assert_eq!(lines.next(), Some("1,0.25,0.25,interior"));
    }

    #[test]
    fn net_dump() {
        let net = Net::new(vec![(1, 0.5, 1.0), (2, 0.25, 0.5), (3, 0.125, 0.25)]).unwrap();
        let t = net_table(&net).with_constant_column("config_hash", "abc");
        let s = t.to_csv_string().unwrap();
        assert_eq!(s.lines().nth(0), Some("level,h,value,increment,config_hash"));
        assert_eq!(s.lines().nth(1), Some("1,0.5,1,,abc"));
        assert_eq!(s.lines().nth(2), Some("2,0.25,0.5,-0.5,abc"));
        assert_eq!(fmt(6.25e-17), "6.25e-17");
        assert_eq!(fmt(-0.001), "-0.001");
        assert_eq!("6.25e-17".parse::<f64>().unwrap(), 6.25e-17);
    }
}
