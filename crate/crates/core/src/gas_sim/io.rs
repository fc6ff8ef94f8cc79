//! CSV export and import of states and collision logs.

use super::{CollisionEvent, CollisionLog, Particle, ScalingConfig, SimError, SystemState};
use crate::vec3::Vec3;

const LOG_HEADER: [&str; 18] = [
    "t", "pair_a", "pair_b", "omega_0", "omega_1", "omega_2", "pre_a_0", "pre_a_1", "pre_a_2", "pre_b_0", "pre_b_1",
    "pre_b_2", "post_a_0", "post_a_1", "post_a_2", "post_b_0", "post_b_1", "post_b_2",
];

const STATE_META: [&str; 7] = ["d", "epsilon", "mu", "lambda", "beta", "seed", "time"];
const STATE_HEADER: [&str; 8] = ["id", "tag", "x_0", "x_1", "x_2", "v_0", "v_1", "v_2"];

fn csv_err(e: impl std::fmt::Display) -> SimError {
    SimError::Csv(e.to_string())
}

fn f(x: f64) -> String {
    format!("{x:e}")
}

fn push3(row: &mut Vec<String>, v: &Vec3) {
    row.extend(v.iter().map(|&x| f(x)));
}

/// Collision log as CSV, one event per line. A leading `tags` line carries
/// the time span, tie count and particle tags so the log can be rebuilt exactly.
pub fn log_to_csv(log: &CollisionLog) -> String {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let mut meta = vec!["tags".to_string(), f(log.t_start), f(log.t_end), log.ties.to_string()];
    meta.push(log.tags.iter().map(|t| t.to_string()).collect::<String>());
    w.write_record(&meta).expect("in-memory write");
    w.write_record(LOG_HEADER).expect("in-memory write");
    for e in &log.events {
        let mut row = vec![f(e.time), e.a.to_string(), e.b.to_string()];
        for v in [&e.omega, &e.pre_a, &e.pre_b, &e.post_a, &e.post_b] {
            push3(&mut row, v);
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn parse_f(s: &str) -> Result<f64, SimError> {
    let x: f64 = s.trim().parse().map_err(|_| SimError::Csv(format!("bad number '{s}'")))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(SimError::Csv(format!("non-finite number '{s}'")))
    }
}

fn parse_u(s: &str) -> Result<usize, SimError> {
    s.trim().parse().map_err(|_| SimError::Csv(format!("bad integer '{s}'")))
}

fn vec3(rec: &csv::StringRecord, at: usize) -> Result<Vec3, SimError> {
    Ok([parse_f(&rec[at])?, parse_f(&rec[at + 1])?, parse_f(&rec[at + 2])?])
}

pub fn log_from_csv(text: &str) -> Result<CollisionLog, SimError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut rows = r.records();
    let meta = rows.next().ok_or_else(|| csv_err("empty log"))?.map_err(csv_err)?;
    if meta.len() != 5 || &meta[0] != "tags" {
        return Err(csv_err("first line must be: tags,t_start,t_end,ties,<tag digits>"));
    }
    let tags = meta[4]
        .chars()
        .map(|c| match c {
            '0' => Ok(0u8),
            '1' => Ok(1u8),
            _ => Err(csv_err(format!("bad tag '{c}'"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut log = CollisionLog { events: Vec::new(), tags, t_start: parse_f(&meta[1])?, t_end: parse_f(&meta[2])?, ties: parse_u(&meta[3])? };
    let head = rows.next().ok_or_else(|| csv_err("missing header"))?.map_err(csv_err)?;
    if head.iter().ne(LOG_HEADER.iter().copied()) {
        return Err(csv_err("unexpected log header"));
    }
    let n = log.tags.len();
    for rec in rows {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != LOG_HEADER.len() {
            return Err(csv_err(format!("expected {} fields, found {}", LOG_HEADER.len(), rec.len())));
        }
        let (a, b) = (parse_u(&rec[1])?, parse_u(&rec[2])?);
        if a >= n || b >= n || a == b {
            return Err(csv_err(format!("invalid pair ({a}, {b}) for {n} particles")));
        }
        let time = parse_f(&rec[0])?;
        if log.events.last().is_some_and(|e| e.time > time) {
            return Err(csv_err("event times decrease"));
        }
        log.events.push(CollisionEvent {
            time,
            a,
            b,
            omega: vec3(&rec, 3)?,
            pre_a: vec3(&rec, 6)?,
            pre_b: vec3(&rec, 9)?,
            post_a: vec3(&rec, 12)?,
            post_b: vec3(&rec, 15)?,
        });
    }
    Ok(log)
}

/// State snapshot: a metadata header line (d, epsilon, mu, lambda, beta,
/// seed, time), its values, then one particle per line.
pub fn state_to_csv(s: &SystemState) -> String {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record(STATE_META).expect("in-memory write");
    let c = &s.cfg;
    w.write_record([c.d.to_string(), f(c.epsilon), f(c.mu), f(c.lambda), f(c.beta), s.seed.to_string(), f(s.time)]).expect("in-memory write");
    w.write_record(STATE_HEADER).expect("in-memory write");
    for p in &s.particles {
        let mut row = vec![p.id.to_string(), p.tag.to_string()];
        push3(&mut row, &p.x);
        push3(&mut row, &p.v);
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn state_from_csv(text: &str) -> Result<SystemState, SimError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut rows = r.records();
    let mut next = || -> Result<csv::StringRecord, SimError> { rows.next().ok_or_else(|| csv_err("truncated state"))?.map_err(csv_err) };
    let meta = next()?;
    if meta.iter().ne(STATE_META.iter().copied()) {
        return Err(csv_err("unexpected state metadata header"));
    }
    let vals = next()?;
    if vals.len() != STATE_META.len() {
        return Err(csv_err("metadata line has the wrong length"));
    }
    let cfg = ScalingConfig {
        d: parse_u(&vals[0])?,
        epsilon: parse_f(&vals[1])?,
        mu: parse_f(&vals[2])?,
        lambda: parse_f(&vals[3])?,
        beta: parse_f(&vals[4])?,
    };
    let seed: u64 = vals[5].trim().parse().map_err(|_| csv_err("bad seed"))?;
    let time = parse_f(&vals[6])?;
    let head = next()?;
    if head.iter().ne(STATE_HEADER.iter().copied()) {
        return Err(csv_err("unexpected particle header"));
    }
    let mut particles = Vec::new();
    for rec in rows {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != STATE_HEADER.len() {
            return Err(csv_err("particle line has the wrong length"));
        }
        let tag = match rec[1].trim() {
            "0" => 0,
            "1" => 1,
            t => return Err(csv_err(format!("bad tag '{t}'"))),
        };
        let x = vec3(&rec, 2)?;
        if x.iter().any(|c| !(0.0..1.0).contains(c)) {
            return Err(csv_err("position outside the unit torus"));
        }
        particles.push(Particle { id: parse_u(&rec[0])?, tag, x, v: vec3(&rec, 5)? });
    }
    Ok(SystemState { cfg, seed, time, particles })
}
