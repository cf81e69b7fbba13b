//! Plain-text persistence of trajectories and binned measure flows.
//!
//! Trajectory CSV rows are `particle,time,kind,k,x,y` with kinds `I` (initial
//! state at time 0), `A`/`S` (jump, with the left limit) and `H` (state at the
//! horizon). Flow CSV starts with a `# cells width=.. x_cells=.. y_cells=..`
//! line followed by `grid_time,k,x_bin,y_bin,weight` rows. Readers skip
//! any other line starting with `#`.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{CellScheme, EmpiricalMeasure, MeasureFlow};
use crate::state::{JumpType, State, Trajectory, TrajectoryEvent};

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    particle: usize,
    time: f64,
    kind: String,
    k: u32,
    x: f64,
    y: f64,
}

/// Writes trajectories as CSV, one block of rows per particle.
pub fn write_trajectories_csv<W: Write>(writer: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (particle, traj) in trajectories.iter().enumerate() {
        let row = |time: f64, kind: &str, s: State| TrajectoryRow {
            particle,
            time,
            kind: kind.to_string(),
            k: s.k(),
            x: s.x(),
            y: s.y(),
        };
        w.serialize(row(0.0, "I", traj.initial())).map_err(csv_err)?;
        for ev in traj.events() {
            w.serialize(row(ev.time, &ev.kind.code().to_string(), ev.pre)).map_err(csv_err)?;
        }
        let end = traj.state_at(traj.horizon())?;
        w.serialize(row(traj.horizon(), "H", end)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Default)]
struct PartialTrajectory {
    initial: Option<State>,
    events: Vec<TrajectoryEvent>,
    terminal: Option<(f64, State)>,
}

/// Reads trajectories written by [`write_trajectories_csv`]. Particles must
/// appear as contiguous blocks numbered from 0; every path is revalidated and
/// its `H` row must match the reconstructed terminal state.
pub fn read_trajectories_csv<R: Read>(reader: R) -> Result<Vec<Trajectory>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut out = Vec::new();
    let mut current: Option<PartialTrajectory> = None;
    for row in r.deserialize::<TrajectoryRow>() {
        let row = row.map_err(csv_err)?;
        let state = State::new(row.k, row.x, row.y)?;
        match row.kind.as_str() {
            "I" => {
                if current.is_some() || row.particle != out.len() {
                    return Err(Error::Parse(format!("unexpected initial row for particle {}", row.particle)));
                }
                current = Some(PartialTrajectory { initial: Some(state), ..Default::default() });
            }
            "A" | "S" => {
                let kind = JumpType::from_code(&row.kind)?;
                let part = current
                    .as_mut()
                    .filter(|_| row.particle == out.len())
                    .ok_or_else(|| Error::Parse(format!("jump row for particle {} outside its block", row.particle)))?;
                let post = state.jump(kind)?;
                part.events.push(TrajectoryEvent { time: row.time, kind, pre: state, post });
            }
            "H" => {
                let mut part = current
                    .take()
                    .filter(|_| row.particle == out.len())
                    .ok_or_else(|| Error::Parse(format!("horizon row for particle {} outside its block", row.particle)))?;
                part.terminal = Some((row.time, state));
                out.push(finish(part)?);
            }
            other => return Err(Error::Parse(format!("unknown row kind {other:?}"))),
        }
    }
    if current.is_some() {
        return Err(Error::Parse(format!("particle {} has no horizon row", out.len())));
    }
    Ok(out)
}

fn finish(part: PartialTrajectory) -> Result<Trajectory> {
    let initial = part.initial.ok_or_else(|| Error::Parse("missing initial row".into()))?;
    let (horizon, terminal) = part.terminal.ok_or_else(|| Error::Parse("missing horizon row".into()))?;
    let traj = Trajectory::new(initial, part.events, horizon)?;
    let end = traj.state_at(horizon)?;
    if end != terminal {
        return Err(Error::Parse(format!("horizon row {terminal} differs from reconstructed {end}")));
    }
    Ok(traj)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonEvent {
    time: f64,
    kind: JumpType,
    k: u32,
    x: f64,
    y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonTrajectory {
    initial: State,
    horizon: f64,
    events: Vec<JsonEvent>,
}

/// JSON form `{initial, horizon, events: [{time, kind, k, x, y}]}`, with the
/// left limit stored for each event.
pub fn trajectory_to_json(traj: &Trajectory) -> Result<String> {
    let record = JsonTrajectory {
        initial: traj.initial(),
        horizon: traj.horizon(),
        events: traj
            .events()
            .iter()
            .map(|ev| JsonEvent { time: ev.time, kind: ev.kind, k: ev.pre.k(), x: ev.pre.x(), y: ev.pre.y() })
            .collect(),
    };
    Ok(serde_json::to_string(&record)?)
}

pub fn trajectory_from_json(text: &str) -> Result<Trajectory> {
    let record: JsonTrajectory = serde_json::from_str(text)?;
    let events = record
        .events
        .iter()
        .map(|ev| {
            let pre = State::new(ev.k, ev.x, ev.y)?;
            Ok(TrajectoryEvent { time: ev.time, kind: ev.kind, pre, post: pre.jump(ev.kind)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(record.initial, events, record.horizon)
}

#[derive(Debug, Serialize, Deserialize)]
struct FlowRow {
    grid_time: f64,
    k: u32,
    x_bin: u32,
    y_bin: u32,
    weight: f64,
}

/// Writes the flow binned on `scheme`, one row per charged cell and grid time.
pub fn write_flow_csv<W: Write>(mut writer: W, flow: &MeasureFlow, scheme: &CellScheme) -> Result<()> {
    writeln!(writer, "# cells width={} x_cells={} y_cells={}", scheme.width, scheme.x_cells, scheme.y_cells)?;
    let mut w = csv::Writer::from_writer(writer);
    for (&grid_time, mu) in flow.grid().iter().zip(flow.measures()) {
        for ((k, x_bin, y_bin), weight) in scheme.bin(mu) {
            w.serialize(FlowRow { grid_time, k, x_bin, y_bin, weight }).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_scheme(line: &str) -> Result<CellScheme> {
    let body = line
        .trim()
        .strip_prefix("# cells")
        .ok_or_else(|| Error::Parse(format!("expected '# cells' header, got {line:?}")))?;
    let (mut width, mut xc, mut yc) = (None, None, None);
    for field in body.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| Error::Parse(format!("bad header field {field:?}")))?;
        let bad = |_| Error::Parse(format!("bad value in {field:?}"));
        match key {
            "width" => width = Some(value.parse::<f64>().map_err(|_| Error::Parse(format!("bad value in {field:?}")))?),
            "x_cells" => xc = Some(value.parse::<u32>().map_err(bad)?),
            "y_cells" => yc = Some(value.parse::<u32>().map_err(bad)?),
            other => return Err(Error::Parse(format!("unknown header field {other:?}"))),
        }
    }
    match (width, xc, yc) {
        (Some(w), Some(x), Some(y)) => CellScheme::new(w, x, y),
        _ => Err(Error::Parse("header must give width, x_cells and y_cells".into())),
    }
}

/// Reads a binned flow, placing each cell's mass at the cell center. Weights
/// at each grid time are renormalized when they sum to 1 within 1e-9.
pub fn read_flow_csv<R: BufRead>(mut reader: R) -> Result<(MeasureFlow, CellScheme)> {
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let scheme = parse_scheme(&header)?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut grid: Vec<f64> = Vec::new();
    let mut atoms: Vec<Vec<(State, f64)>> = Vec::new();
    for row in r.deserialize::<FlowRow>() {
        let row = row.map_err(csv_err)?;
        if grid.last() != Some(&row.grid_time) {
            if grid.last().is_some_and(|&t| row.grid_time < t) {
                return Err(Error::Parse(format!("grid time {} out of order", row.grid_time)));
            }
            grid.push(row.grid_time);
            atoms.push(Vec::new());
        }
        let state = scheme.center((row.k, row.x_bin, row.y_bin))?;
        atoms.last_mut().expect("pushed above").push((state, row.weight));
    }
    if grid.is_empty() {
        return Err(Error::Parse("flow file has no rows".into()));
    }
    let measures = atoms
        .into_iter()
        .zip(&grid)
        .map(|(mut a, t)| {
            let total: f64 = a.iter().map(|p| p.1).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Parse(format!("weights at t = {t} sum to {total}")));
            }
            a.iter_mut().for_each(|p| p.1 /= total);
            EmpiricalMeasure::new(a)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((MeasureFlow::new(grid, measures)?, scheme))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::IntensityKernel;
    use crate::simulator::{simulate, SimConfig, SimMode};

    fn sample() -> Vec<Trajectory> {
        let kernel = IntensityKernel::constant(1.3, 0.9).unwrap();
        let config = SimConfig::new(20, 3.0, SimMode::SelfConsistent, 11);
        simulate(&config, &kernel).unwrap().trajectories().to_vec()
    }

    #[test]
    fn trajectory_csv_round_trip_is_exact() {
        let trajs = sample();
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &trajs).unwrap();
        let back = read_trajectories_csv(buf.as_slice()).unwrap();
        assert_eq!(back, trajs);
    }

    #[test]
    fn trajectory_json_round_trip_is_exact() {
        for traj in sample() {
            let text = trajectory_to_json(&traj).unwrap();
            assert_eq!(trajectory_from_json(&text).unwrap(), traj);
        }
    }

    #[test]
    fn tampered_rows_are_rejected() {
        let trajs = sample();
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &trajs[..1]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let truncated = lines[..lines.len() - 1].join("\n");
        assert!(read_trajectories_csv(truncated.as_bytes()).is_err());
        let relabelled = text.replacen("0,0.0,I", "1,0.0,I", 1);
        assert!(read_trajectories_csv(relabelled.as_bytes()).is_err());
    }

    #[test]
    fn flow_round_trip_preserves_cells() {
        let kernel = IntensityKernel::constant(1.0, 1.0).unwrap();
        let config = SimConfig::new(200, 1.0, SimMode::SelfConsistent, 2).with_grid_step(0.25);
        let system = simulate(&config, &kernel).unwrap();
        let flow = system.recorded_flow();
        let scheme = CellScheme::new(0.1, 20, 20).unwrap();
        let mut buf = Vec::new();
        write_flow_csv(&mut buf, flow, &scheme).unwrap();
        let (back, read_scheme) = read_flow_csv(buf.as_slice()).unwrap();
        assert_eq!(read_scheme, scheme);
        assert_eq!(back.grid(), flow.grid());
        assert!(back.sup_tv_proxy(flow, &scheme).unwrap() < 1e-12);
    }

    #[test]
    fn bad_flow_headers_are_rejected() {
        assert!(read_flow_csv("grid_time,k\n".as_bytes()).is_err());
        assert!(read_flow_csv("# cells width=0.1 x_cells=3\n".as_bytes()).is_err());
        assert!(read_flow_csv("# cells width=0.1 x_cells=3 y_cells=3\ngrid_time,k,x_bin,y_bin,weight\n".as_bytes()).is_err());
    }
}
