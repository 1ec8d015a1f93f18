use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulate::PathSample;

/// 17 significant digits, `.` decimal, no locale.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// CSV text whose leading `# key = value` lines echo the resolved settings.
pub struct CsvDoc {
    buf: Vec<u8>,
}

impl CsvDoc {
    pub fn new(echo: &[(String, String)], header: &[&str]) -> Self {
        let mut buf = Vec::new();
        for (k, v) in echo {
            let _ = writeln!(buf, "# {k} = {v}");
        }
        let _ = writeln!(buf, "{}", header.join(","));
        CsvDoc { buf }
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.buf, "{}", fields.join(","));
    }

    pub fn into_string(self) -> String {
        String::from_utf8(self.buf).expect("csv output is ascii")
    }
}

/// Writes to `out`, or to standard output when absent.
pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| Error::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())?;
            so.flush()?;
            Ok(())
        }
    }
}

pub const PATH_HEADER: [&str; 5] = ["k", "t", "dg", "g", "x"];

/// Rows `k, t_k, dg_k, g_k, x_k`; `dg` is empty on the last node.
pub fn path_rows(p: &PathSample) -> Vec<Vec<String>> {
    let n = p.grid.cells();
    (0..=n)
        .map(|k| {
            vec![
                k.to_string(),
                fmt_f64(p.grid.node(k)),
                if k < n { fmt_f64(p.dg[k]) } else { String::new() },
                fmt_f64(p.g[k]),
                fmt_f64(p.x[k]),
            ]
        })
        .collect()
}

/// Increment vectors and horizon of each replication in a paths CSV, in
/// either the per-replication or the long (`rep` column) layout.
pub fn read_paths_csv(text: &str) -> Result<Vec<(u64, f64, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (k_col, t_col, dg_col) = match (col("k"), col("t"), col("dg")) {
        (Some(k), Some(t), Some(d)) => (k, t, d),
        _ => return Err(Error::Data("paths CSV needs columns k, t, dg".into())),
    };
    let rep_col = col("rep");
    let mut reps: BTreeMap<u64, (f64, Vec<(usize, Option<f64>)>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str, v: &str| Error::Data(format!("bad {what} `{v}` in paths CSV"));
        let rep = match rep_col {
            Some(c) => field(c).parse::<u64>().map_err(|_| bad("rep", field(c)))?,
            None => 0,
        };
        let k = field(k_col).parse::<usize>().map_err(|_| bad("k", field(k_col)))?;
        let t = field(t_col).parse::<f64>().map_err(|_| bad("t", field(t_col)))?;
        let dg = match field(dg_col) {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad("dg", v))?),
        };
        let entry = reps.entry(rep).or_insert((0.0, Vec::new()));
        entry.0 = entry.0.max(t);
        entry.1.push((k, dg));
    }
    let mut out = Vec::new();
    for (rep, (t, mut rows)) in reps {
        rows.sort_by_key(|r| r.0);
        let n = rows.len().saturating_sub(1);
        if n == 0 || rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::Data(format!("replication {rep}: node indices must run 0..=n with n >= 1")));
        }
        let dg: Option<Vec<f64>> = rows[..n].iter().map(|r| r.1).collect();
        let dg = dg.ok_or_else(|| Error::Data(format!("replication {rep}: missing dg value")))?;
        out.push((rep, t, dg));
    }
    if out.is_empty() {
        return Err(Error::Data("paths CSV has no rows".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::Grid;
    use crate::simulate::build_ou_path;

    #[test]
    fn float_format() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
        assert_eq!("1.0000000000000001e-1".parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn paths_round_trip() {
        let grid = Grid::new(1.0, 4).unwrap();
        let dg = vec![0.1, -0.25, 0.3, 1.0 / 3.0];
        let p = build_ou_path(dg.clone(), 1.0, &grid).unwrap();
        let mut doc = CsvDoc::new(&[("kernel".into(), "fbm:H=0.6".into())], &PATH_HEADER);
        for r in path_rows(&p) {
            doc.row(&r);
        }
        let text = doc.into_string();
        assert!(text.starts_with("# kernel = fbm:H=0.6\nk,t,dg,g,x\n"));
        let back = read_paths_csv(&text).unwrap();
        assert_eq!(back, vec![(0, 1.0, dg)]);
        assert!(read_paths_csv("k,t\n0,0\n").is_err());
    }
}
