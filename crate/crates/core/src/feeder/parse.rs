use std::collections::HashMap;

use num_complex::Complex64;

use super::{
    validate_feeder, Block3, Branch, Bus, BusKind, Feeder, FeederError, Load, Phase, PhaseSet,
    Source, ZERO_BLOCK,
};
use crate::textfmt::{Document, Line, SyntaxError, Writer};

/// Parses a `re+imj` / `re-imj` literal.
pub fn parse_complex(s: &str) -> Option<Complex64> {
    let body = s.strip_suffix('j')?;
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'))?;
    let re: f64 = body[..split].parse().ok()?;
    let im: f64 = body[split..].parse().ok()?;
    (re.is_finite() && im.is_finite()).then_some(Complex64::new(re, im))
}

fn fmt_complex(z: Complex64) -> String {
    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
    format!("{}{}{}j", z.re, sign, z.im.abs())
}

fn block_at(line: &Line, start: usize) -> Result<Block3, SyntaxError> {
    let mut b = ZERO_BLOCK;
    for k in 0..9 {
        let tok = &line.tokens[start + k];
        let z = parse_complex(&tok.text).ok_or_else(|| {
            SyntaxError::new(line.number, tok.column, format!("invalid complex literal `{}`", tok.text))
        })?;
        b[k / 3][k % 3] = z;
    }
    Ok(b)
}

/// Parses and validates a feeder document.
pub fn parse_feeder(text: &str) -> Result<Feeder, FeederError> {
    let doc = Document::parse(text)?;
    for s in &doc.sections {
        if !matches!(s.name.as_str(), "source" | "buses" | "branches" | "loads") {
            return Err(SyntaxError::new(s.line, 1, format!("unknown section [{}]", s.name)).into());
        }
    }

    let mut buses = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    if let Some(sec) = doc.section("buses") {
        for line in &sec.lines {
            line.expect_len(4, 4)?;
            let id = line.str_at(0)?.to_string();
            let phases = PhaseSet::parse(line.str_at(1)?)
                .ok_or_else(|| line.error_at(1, "phases must be a non-empty subset of ABC"))?;
            let kind = match line.str_at(2)? {
                "slack" => BusKind::Slack,
                "load" => BusKind::Load,
                other => return Err(line.error_at(2, format!("unknown bus kind `{other}`")).into()),
            };
            let base_kv = line.f64_at(3)?;
            if base_kv <= 0.0 {
                return Err(FeederError::InvalidBase {
                    what: format!("base_kv of bus {id}"),
                    value: base_kv,
                });
            }
            if ids.insert(id.clone(), buses.len()).is_some() {
                return Err(FeederError::DuplicateId(id));
            }
            buses.push(Bus {
                id,
                phases,
                kind,
                base_kv,
            });
        }
    }

    let resolve = |line: &Line, i: usize, what: &str| -> Result<usize, FeederError> {
        let id = line.str_at(i)?;
        ids.get(id).copied().ok_or_else(|| FeederError::DanglingReference {
            line: line.number,
            what: what.to_string(),
            id: id.to_string(),
        })
    };

    let mut branches = Vec::new();
    if let Some(sec) = doc.section("branches") {
        for line in &sec.lines {
            let n = line.tokens.len();
            if n != 11 && n != 20 {
                return Err(line
                    .error_at(n.min(11), format!("branch needs 2 ids and 9 or 18 complex entries, found {n} fields"))
                    .into());
            }
            let from = resolve(line, 0, "branch")?;
            let to = resolve(line, 1, "branch")?;
            let series = block_at(line, 2)?;
            let shunt = if n == 20 { block_at(line, 11)? } else { ZERO_BLOCK };
            branches.push(Branch {
                from,
                to,
                series,
                shunt,
            });
        }
    }

    let mut loads = Vec::new();
    if let Some(sec) = doc.section("loads") {
        for line in &sec.lines {
            line.expect_len(5, 5)?;
            let bus = resolve(line, 0, "load")?;
            let phase = Phase::parse(line.str_at(1)?).ok_or_else(|| line.error_at(1, "phase must be A, B or C"))?;
            loads.push(Load {
                bus,
                phase,
                base_p_kw: line.f64_at(2)?,
                base_q_kvar: line.f64_at(3)?,
                shape_id: line.str_at(4)?.to_string(),
            });
        }
    }

    let src = doc.require("source")?;
    let bus_line = src.require("bus")?;
    let slack_bus = resolve(bus_line, 1, "source")?;
    if buses[slack_bus].kind != BusKind::Slack {
        return Err(bus_line.error_at(1, "source bus must be declared with kind `slack`").into());
    }
    let base_kva = src.require("base_kva")?.f64_at(1)?;
    let mut source = Source::default();
    if let Some(l) = src.get("vmag") {
        source.vmag_pu = l.f64_at(1)?;
    }
    if let Some(l) = src.get("angle") {
        source.angle_deg = l.f64_at(1)?;
    }
    for l in &src.lines {
        if !matches!(l.key(), "bus" | "base_kva" | "vmag" | "angle") {
            return Err(l.error_at(0, format!("unknown source key `{}`", l.key())).into());
        }
    }

    let feeder = Feeder::new(buses, branches, loads, base_kva, source)?;
    let violations = validate_feeder(&feeder);
    if !violations.is_empty() {
        return Err(FeederError::Invalid(violations));
    }
    Ok(feeder)
}

/// Canonical text form; `parse_feeder(serialize_feeder(f)) == f` for valid feeders.
pub fn serialize_feeder(f: &Feeder) -> String {
    let mut w = Writer::new();
    w.section("source")
        .line(["bus", f.bus_id(f.slack())])
        .line(["base_kva".to_string(), f.base_kva().to_string()])
        .line(["vmag".to_string(), f.source().vmag_pu.to_string()])
        .line(["angle".to_string(), f.source().angle_deg.to_string()]);
    w.section("buses");
    for b in f.buses() {
        let kind = match b.kind {
            BusKind::Slack => "slack",
            BusKind::Load => "load",
        };
        w.line([b.id.clone(), b.phases.to_string(), kind.to_string(), b.base_kv.to_string()]);
    }
    w.section("branches");
    for br in f.branches() {
        let mut toks = vec![f.bus_id(br.from).to_string(), f.bus_id(br.to).to_string()];
        toks.extend(br.series.iter().flatten().map(|z| fmt_complex(*z)));
        if br.shunt != ZERO_BLOCK {
            toks.extend(br.shunt.iter().flatten().map(|z| fmt_complex(*z)));
        }
        w.line(toks);
    }
    w.section("loads");
    for l in f.loads() {
        w.line([
            f.bus_id(l.bus).to_string(),
            l.phase.to_string(),
            l.base_p_kw.to_string(),
            l.base_q_kvar.to_string(),
            l.shape_id.clone(),
        ]);
    }
    w.finish()
}
