//! Parameter sweeps over a config key path.

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::commands::{self, Command, Output, SweepArgs};
use crate::config::{self, Loaded};
use crate::csvio::{num, Table};
use crate::error::{CliError, Result};
use crate::units;

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Key(String),
    Index(usize),
}

fn parse_path(path: &str) -> Result<Vec<Segment>> {
    let bad = || CliError::at("sweep.parameter", format!("`{path}` is not a key path like `detector.i_dc` or `optics.layers[1].thickness`"));
    let mut out = Vec::new();
    for part in path.split('.') {
        let (key, mut rest) = part.split_once('[').map_or((part, ""), |(k, r)| (k, r));
        if key.is_empty() {
            return Err(bad());
        }
        out.push(Segment::Key(key.into()));
        while !rest.is_empty() {
            let (idx, tail) = rest.split_once(']').ok_or_else(bad)?;
            out.push(Segment::Index(idx.parse().map_err(|_| bad())?));
            rest = tail.strip_prefix('[').unwrap_or(tail);
            if !tail.is_empty() && !tail.starts_with('[') {
                return Err(bad());
            }
        }
    }
    Ok(out)
}

fn lookup<'a>(tree: &'a mut toml::Value, path: &[Segment]) -> Option<&'a mut toml::Value> {
    path.iter().try_fold(tree, |v, seg| match seg {
        Segment::Key(k) => v.as_table_mut()?.get_mut(k),
        Segment::Index(i) => v.as_array_mut()?.get_mut(*i),
    })
}

/// The swept value's kind, fixed by what the config currently holds.
#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Quantity(String),
    Float,
    Integer,
}

/// A range bound: a plain number, or a quantity that must use the field's unit.
fn bound(name: &str, v: &toml::Value, kind: &Kind) -> Result<f64> {
    let at = |m: String| CliError::at(format!("sweep.{name}"), m);
    match (v, kind) {
        (toml::Value::Integer(i), _) => Ok(*i as f64),
        (toml::Value::Float(f), _) => Ok(*f),
        (toml::Value::String(s), Kind::Quantity(unit)) => {
            if let Ok(x) = s.trim().parse::<f64>() {
                return Ok(x);
            }
            let (x, u) = units::split(s).ok_or_else(|| at(format!("`{s}` is not a quantity")))?;
            if &u != unit {
                return Err(at(format!("unit `{u}` differs from the field's unit `{unit}`")));
            }
            Ok(x)
        }
        (toml::Value::String(s), _) => s.trim().parse().map_err(|_| at(format!("`{s}` is not a number"))),
        _ => Err(at("must be a number or a quantity string".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Spec {
    parameter: String,
    path: Vec<Segment>,
    kind: Kind,
    values: Vec<f64>,
    command: Command,
    threads: Option<usize>,
}

fn spec(cfg: &Loaded, args: &SweepArgs) -> Result<Spec> {
    let file = cfg.config.sweep.as_ref();
    let parameter = args.parameter.clone().or(file.map(|s| s.parameter.clone())).ok_or_else(|| CliError::at("sweep.parameter", "missing"))?;
    let path = parse_path(&parameter)?;
    let mut tree = cfg.tree.clone();
    let current = lookup(&mut tree, &path).ok_or_else(|| CliError::at("sweep.parameter", format!("`{parameter}` does not resolve to a config value")))?;
    let kind = match current {
        toml::Value::Integer(_) => Kind::Integer,
        toml::Value::Float(_) => Kind::Float,
        toml::Value::String(s) => match units::split(s) {
            Some((_, u)) if !u.is_empty() => Kind::Quantity(u),
            _ => return Err(CliError::at("sweep.parameter", format!("`{parameter}` holds `{s}`, which is not a quantity"))),
        },
        _ => return Err(CliError::at("sweep.parameter", format!("`{parameter}` is not a numeric field"))),
    };
    let get = |name: &str, flag: &Option<String>, from_file: Option<&toml::Value>| -> Result<f64> {
        let v = match (flag, from_file) {
            (Some(f), _) => toml::Value::String(f.clone()),
            (None, Some(v)) => v.clone(),
            (None, None) => return Err(CliError::at(format!("sweep.{name}"), "missing")),
        };
        bound(name, &v, &kind)
    };
    let start = get("start", &args.start, file.map(|s| &s.start))?;
    let stop = get("stop", &args.stop, file.map(|s| &s.stop))?;
    let step = get("step", &args.step, file.map(|s| &s.step))?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(CliError::at("sweep.step", "must be positive"));
    }
    if !(start < stop) {
        return Err(CliError::at("sweep", format!("empty range: start {start} is not below stop {stop}")));
    }
    let n = ((stop - start) / step * (1.0 + 1e-12)).floor() as usize + 1;
    let values: Vec<f64> = (0..n).map(|i| start + i as f64 * step).collect();
    if kind == Kind::Integer && values.iter().any(|v| v.fract() != 0.0) {
        return Err(CliError::at("sweep", format!("`{parameter}` is an integer field; use integer start and step")));
    }
    let name = args.command.clone().or(file.map(|s| s.command.clone())).ok_or_else(|| CliError::at("sweep.command", "missing"))?;
    let command = Command::sweepable(&name).ok_or_else(|| CliError::at("sweep.command", format!("`{name}` cannot be swept")))?;
    let threads = args.threads.or(file.and_then(|s| s.threads));
    if threads == Some(0) {
        return Err(CliError::at("sweep.threads", "must be >= 1"));
    }
    Ok(Spec { parameter, path, kind, values, command, threads })
}

fn point(cfg: &Loaded, spec: &Spec, value: f64) -> Result<Output> {
    let mut tree = cfg.tree.clone();
    let slot = lookup(&mut tree, &spec.path).expect("path checked when the sweep was built");
    *slot = match &spec.kind {
        Kind::Quantity(u) => toml::Value::String(format!("{} {u}", num(value))),
        Kind::Float => toml::Value::Float(value),
        Kind::Integer => toml::Value::Integer(value as i64),
    };
    let loaded = config::from_tree(tree, cfg.base.clone())?;
    commands::run(&spec.command, &loaded)
}

pub fn run(cfg: &Loaded, args: &SweepArgs) -> Result<Output> {
    let spec = spec(cfg, args)?;
    let eval = || spec.values.par_iter().map(|&v| point(cfg, &spec, v)).collect::<Vec<Result<Output>>>();
    let results = match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(CliError::solver)?.install(eval),
        None => eval(),
    };
    let outputs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let column = match &spec.kind {
        Kind::Quantity(u) => format!("{}_{u}", spec.parameter),
        _ => spec.parameter.clone(),
    };
    let rows: Vec<Vec<(String, String)>> = outputs.iter().map(Output::scalar_row).collect();
    let mut headers: Vec<String> = Vec::new();
    for row in &rows {
        for (k, _) in row {
            if !headers.contains(k) {
                headers.push(k.clone());
            }
        }
    }
    let mut table = Table::new(std::iter::once(column).chain(headers.iter().cloned()));
    for (v, row) in spec.values.iter().zip(&rows) {
        let mut cells = vec![num(*v)];
        cells.extend(headers.iter().map(|h| row.iter().find(|(k, _)| k == h).map(|(_, c)| c.clone()).unwrap_or_default()));
        table.push(cells);
    }

    let mut out = Output { command: "sweep".into(), fields: Map::new(), table: Some(table) };
    out.fields.insert("parameter".into(), json!(spec.parameter));
    out.fields.insert("unit".into(), json!(match &spec.kind { Kind::Quantity(u) => Some(u.clone()), _ => None }));
    out.fields.insert("evaluated".into(), json!(spec.command.name()));
    let points: Vec<Value> = spec
        .values
        .iter()
        .zip(&outputs)
        .map(|(v, o)| {
            let mut m = Map::new();
            m.insert("value".into(), json!(v));
            m.extend(o.fields.clone());
            Value::Object(m)
        })
        .collect();
    out.fields.insert("points".into(), Value::Array(points));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_parse() {
        assert_eq!(
            parse_path("optics.layers[1].thickness").unwrap(),
            vec![Segment::Key("optics".into()), Segment::Key("layers".into()), Segment::Index(1), Segment::Key("thickness".into())]
        );
        assert!(parse_path("a..b").is_err());
        assert!(parse_path("a[x]").is_err());
        assert!(parse_path("a[1]b").is_err());
    }

    #[test]
    fn lookup_walks_tables_and_arrays() {
        let mut t = config::parse_tree("[optics]\nlayers = [{ thickness = \"1 nm\" }, { thickness = \"2 nm\" }]\n", "t").unwrap();
        let v = lookup(&mut t, &parse_path("optics.layers[1].thickness").unwrap()).unwrap();
        assert_eq!(v.as_str(), Some("2 nm"));
        assert!(lookup(&mut t, &parse_path("optics.layers[5].thickness").unwrap()).is_none());
    }
}
