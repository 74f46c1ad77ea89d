//! Text artifacts (CSV, JSON, gnuplot `.dat`) and their writer.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::cli::scenario::Scenario;
use crate::lab::SCHEMA_VERSION;
use crate::moments::MomentBlock;
use crate::simplex::SimplexPath;

/// One output file, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub content: String,
}

/// `# scenario=… hash=… seed=…` line that opens every CSV and `.dat` file.
pub fn header(s: &Scenario) -> String {
    format!("# scenario={} hash={} seed={}\n", s.name, s.hash(), s.seed)
}

pub fn path_csv(s: &Scenario, path: &SimplexPath) -> String {
    let mut out = header(s);
    out.push('t');
    for i in 1..=path.dim() {
        let _ = write!(out, ",x_{i}");
    }
    out.push('\n');
    for (t, p) in path.grid().iter().zip(path.points()) {
        let _ = write!(out, "{t}");
        for x in p.coords() {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

pub fn alpha_label(alpha: &[u32], sep: &str) -> String {
    alpha.iter().map(u32::to_string).collect::<Vec<_>>().join(sep)
}

pub fn moments_csv(s: &Scenario, blocks: &[MomentBlock]) -> String {
    let mut out = header(s);
    out.push_str("t,alpha,value\n");
    for b in blocks {
        for alpha in b.indices.indices() {
            let idx = b.indices.position(alpha).expect("own index");
            let label = alpha_label(alpha, ":");
            for (t, v) in b.grid.iter().zip(&b.values) {
                let _ = writeln!(out, "{t},{label},{}", v[idx]);
            }
        }
    }
    out
}

/// A CSV with the given header and rows of already formatted cells.
pub fn table_csv(s: &Scenario, columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header(s);
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Gnuplot two-column data.
pub fn dat(s: &Scenario, points: impl IntoIterator<Item = (f64, f64)>) -> String {
    let mut out = header(s);
    for (x, y) in points {
        let _ = writeln!(out, "{x} {y}");
    }
    out
}

/// One `.dat` per coordinate of a path: `<stem>_x<i>.dat`.
pub fn path_dats(s: &Scenario, stem: &str, path: &SimplexPath) -> Vec<Artifact> {
    (0..path.dim())
        .map(|i| Artifact {
            name: format!("{stem}_x{}.dat", i + 1),
            content: dat(
                s,
                path.grid().iter().zip(path.points()).map(|(&t, p)| (t, p.coords()[i])),
            ),
        })
        .collect()
}

#[derive(Serialize)]
struct Envelope<'a, R: Serialize> {
    schema_version: u32,
    scenario: &'a str,
    scenario_hash: String,
    seed: u64,
    report: &'a R,
}

/// JSON reports carry the scenario hash and seed as fields (JSON has no
/// comment lines).
pub fn report_json<R: Serialize>(s: &Scenario, report: &R) -> String {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        scenario: &s.name,
        scenario_hash: s.hash(),
        seed: s.seed,
        report,
    };
    let mut text = serde_json::to_string_pretty(&env).expect("report serializes");
    text.push('\n');
    text
}

/// Writes all artifacts below `dir`, one at a time.
pub fn write_all(dir: &Path, artifacts: &[Artifact]) -> io::Result<()> {
    for a in artifacts {
        let path = dir.join(&a.name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, &a.content)?;
    }
    Ok(())
}
