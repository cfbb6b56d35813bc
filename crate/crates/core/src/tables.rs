//! CSV tables exchanged between pipeline stages. Column order is part of
//! the contract; readers reject files whose header differs.

use std::io::{Read, Write};
use std::path::Path;

use crate::analysis::{ClassifiedStep, MeanTrajectory};
use crate::baselines::LandscapeGrid;
use crate::error::{Error, Result};
use crate::flow::{CellStats, DivergenceMap, FlowField, Grid, PotentialProfile};
use crate::infodyn::{EntropyMode, PhasePoint, Trajectory};

pub const TRAJECTORIES: [&str; 9] = [
    "trace_id",
    "step_index",
    "tau",
    "u_raw",
    "e_raw",
    "u",
    "e",
    "origin_flag",
    "entropy_mode",
];
pub const FLOWFIELD: [&str; 8] = [
    "i", "j", "u_center", "e_center", "count", "v1_mean", "v2_mean", "density",
];
pub const DIVERGENCE: [&str; 4] = ["i", "j", "div", "defined_flag"];
pub const POTENTIAL: [&str; 4] = ["u_center", "U", "U_prime", "count"];
pub const STAGES: [&str; 5] = ["trace_id", "step_index", "cosine", "label", "gate_conflict"];
pub const MEANTS: [&str; 8] = ["cohort", "tau", "u_mean", "e_mean", "u_lo", "u_hi", "e_lo", "e_hi"];
pub const TSNE: [&str; 4] = ["trace_id", "step_index", "x", "y"];
pub const LANDSCAPE: [&str; 5] = ["i", "j", "x_center", "y_center", "density"];

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(header)?;
    Ok(w)
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Reader over a table whose header must equal `header`.
fn reader<R: Read>(r: R, header: &[&str]) -> Result<csv::Reader<R>> {
    let mut rd = csv::Reader::from_reader(r);
    let found: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::InvalidRecord {
            line: 1,
            message: format!("expected columns {header:?}, found {found:?}"),
        });
    }
    Ok(rd)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    rec.get(k)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::InvalidRecord {
            line,
            message: format!("bad {name} value {:?}", rec.get(k).unwrap_or("")),
        })
}

fn opt_field(rec: &csv::StringRecord, k: usize, name: &str) -> Result<Option<f64>> {
    match rec.get(k) {
        Some("") | None => Ok(None),
        Some(_) => field(rec, k, name).map(Some),
    }
}

fn bool_field(rec: &csv::StringRecord, k: usize, name: &str) -> Result<bool> {
    match rec.get(k) {
        Some("1") => Ok(true),
        Some("0") => Ok(false),
        other => Err(Error::InvalidRecord {
            line: rec.position().map_or(0, |p| p.line() as usize),
            message: format!("bad {name} flag {:?}", other.unwrap_or("")),
        }),
    }
}

pub fn write_trajectories_to<W: Write>(w: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = writer(w, &TRAJECTORIES)?;
    for t in trajectories {
        for p in &t.points {
            w.write_record([
                t.trace_id.as_str(),
                &p.step_index.to_string(),
                &num(p.tau),
                &num(p.u_raw),
                &num(p.e_raw),
                &num(p.u),
                &num(p.e),
                flag(p.origin),
                t.entropy_mode.as_str(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    write_trajectories_to(create(path)?, trajectories)
}

/// Consecutive rows with the same `trace_id` form one trajectory.
pub fn read_trajectories_from<R: Read>(r: R) -> Result<Vec<Trajectory>> {
    let mut rd = reader(r, &TRAJECTORIES)?;
    let mut out: Vec<Trajectory> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default();
        let mode: EntropyMode = field(&rec, 8, "entropy_mode")?;
        let point = PhasePoint {
            step_index: field(&rec, 1, "step_index")?,
            tau: field(&rec, 2, "tau")?,
            u_raw: field(&rec, 3, "u_raw")?,
            e_raw: field(&rec, 4, "e_raw")?,
            u: field(&rec, 5, "u")?,
            e: field(&rec, 6, "e")?,
            origin: bool_field(&rec, 7, "origin_flag")?,
        };
        match out.last_mut() {
            Some(t) if t.trace_id == id => t.points.push(point),
            _ => out.push(Trajectory {
                trace_id: id.to_string(),
                points: vec![point],
                entropy_mode: mode,
            }),
        }
    }
    Ok(out)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    read_trajectories_from(open(path)?)
}

pub fn write_flowfield_to<W: Write>(w: W, field: &FlowField) -> Result<()> {
    let g = field.grid;
    let mut w = writer(w, &FLOWFIELD)?;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (uc, ec) = g.center(i, j);
            let c = field.cell(i, j);
            w.write_record([
                i.to_string(),
                j.to_string(),
                num(uc),
                num(ec),
                c.count.to_string(),
                num(c.v1_mean),
                num(c.v2_mean),
                num(c.density),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_flowfield(path: &Path, field: &FlowField) -> Result<()> {
    write_flowfield_to(create(path)?, field)
}

/// Rebuilds a field from its table. Only the columns in the table survive:
/// center estimates equal the means and cell means sit at the centers.
pub fn read_flowfield_from<R: Read>(r: R, grid: Grid, min_count: usize) -> Result<FlowField> {
    let mut rd = reader(r, &FLOWFIELD)?;
    let mut cells = vec![CellStats::default(); grid.len()];
    for rec in rd.records() {
        let rec = rec?;
        let (i, j): (usize, usize) = (field(&rec, 0, "i")?, field(&rec, 1, "j")?);
        if i >= grid.nx || j >= grid.ny {
            return Err(Error::invalid(format!(
                "cell ({i}, {j}) outside a {}x{} grid",
                grid.nx, grid.ny
            )));
        }
        let (v1, v2) = (field(&rec, 5, "v1_mean")?, field(&rec, 6, "v2_mean")?);
        cells[grid.index(i, j)] = CellStats {
            count: field(&rec, 4, "count")?,
            v1_mean: v1,
            v2_mean: v2,
            density: field(&rec, 7, "density")?,
            u_mean: field(&rec, 2, "u_center")?,
            e_mean: field(&rec, 3, "e_center")?,
            v1_center: v1,
            v2_center: v2,
        };
    }
    Ok(FlowField {
        grid,
        cells,
        min_count,
        dropped: 0,
    })
}

pub fn read_flowfield(path: &Path, grid: Grid, min_count: usize) -> Result<FlowField> {
    read_flowfield_from(open(path)?, grid, min_count)
}

pub fn write_divergence_to<W: Write>(w: W, map: &DivergenceMap) -> Result<()> {
    let g = map.grid;
    let mut w = writer(w, &DIVERGENCE)?;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let d = map.get(i, j);
            w.write_record([i.to_string(), j.to_string(), opt(d), flag(d.is_some()).to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_divergence(path: &Path, map: &DivergenceMap) -> Result<()> {
    write_divergence_to(create(path)?, map)
}

pub fn read_divergence_from<R: Read>(r: R, grid: Grid) -> Result<DivergenceMap> {
    let mut rd = reader(r, &DIVERGENCE)?;
    let mut values = vec![None; grid.len()];
    for rec in rd.records() {
        let rec = rec?;
        let (i, j): (usize, usize) = (field(&rec, 0, "i")?, field(&rec, 1, "j")?);
        if i >= grid.nx || j >= grid.ny {
            return Err(Error::invalid(format!(
                "cell ({i}, {j}) outside a {}x{} grid",
                grid.nx, grid.ny
            )));
        }
        let defined = bool_field(&rec, 3, "defined_flag")?;
        let d = opt_field(&rec, 2, "div")?;
        if defined != d.is_some() {
            return Err(Error::invalid(format!(
                "cell ({i}, {j}): defined_flag disagrees with div"
            )));
        }
        values[grid.index(i, j)] = d;
    }
    Ok(DivergenceMap { grid, values })
}

pub fn read_divergence(path: &Path, grid: Grid) -> Result<DivergenceMap> {
    read_divergence_from(open(path)?, grid)
}

pub fn write_potential_to<W: Write>(w: W, profile: &PotentialProfile) -> Result<()> {
    let mut w = writer(w, &POTENTIAL)?;
    for k in 0..profile.centers.len() {
        w.write_record([
            num(profile.centers[k]),
            opt(profile.potential[k]),
            opt(profile.slope[k]),
            profile.counts[k].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_potential(path: &Path, profile: &PotentialProfile) -> Result<()> {
    write_potential_to(create(path)?, profile)
}

pub fn write_stages_to<W: Write>(w: W, steps: &[ClassifiedStep]) -> Result<()> {
    let mut w = writer(w, &STAGES)?;
    for s in steps {
        w.write_record([
            s.trace_id.as_str(),
            &s.step_index.to_string(),
            &num(s.label.cosine),
            s.label.stage.as_str(),
            flag(s.label.gate_conflict),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_stages(path: &Path, steps: &[ClassifiedStep]) -> Result<()> {
    write_stages_to(create(path)?, steps)
}

pub fn write_meants_to<W: Write>(w: W, cohorts: &[(String, MeanTrajectory)]) -> Result<()> {
    let mut w = writer(w, &MEANTS)?;
    for (name, m) in cohorts {
        for k in 0..m.tau.len() {
            w.write_record([
                name.clone(),
                num(m.tau[k]),
                num(m.u_mean[k]),
                num(m.e_mean[k]),
                num(m.u_lo[k]),
                num(m.u_hi[k]),
                num(m.e_lo[k]),
                num(m.e_hi[k]),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_meants(path: &Path, cohorts: &[(String, MeanTrajectory)]) -> Result<()> {
    write_meants_to(create(path)?, cohorts)
}

/// Cohorts in file order. Cohort sizes are not part of the table and come
/// back as 0.
pub fn read_meants_from<R: Read>(r: R) -> Result<Vec<(String, MeanTrajectory)>> {
    let mut rd = reader(r, &MEANTS)?;
    let mut out: Vec<(String, MeanTrajectory)> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let name = rec.get(0).unwrap_or_default();
        if out.last().is_none_or(|(n, _)| n != name) {
            out.push((
                name.to_string(),
                MeanTrajectory {
                    tau: vec![],
                    u_mean: vec![],
                    e_mean: vec![],
                    u_lo: vec![],
                    u_hi: vec![],
                    e_lo: vec![],
                    e_hi: vec![],
                    n: 0,
                },
            ));
        }
        let m = &mut out.last_mut().expect("pushed above").1;
        m.tau.push(field(&rec, 1, "tau")?);
        m.u_mean.push(field(&rec, 2, "u_mean")?);
        m.e_mean.push(field(&rec, 3, "e_mean")?);
        m.u_lo.push(field(&rec, 4, "u_lo")?);
        m.u_hi.push(field(&rec, 5, "u_hi")?);
        m.e_lo.push(field(&rec, 6, "e_lo")?);
        m.e_hi.push(field(&rec, 7, "e_hi")?);
    }
    Ok(out)
}

pub fn read_meants(path: &Path) -> Result<Vec<(String, MeanTrajectory)>> {
    read_meants_from(open(path)?)
}

pub fn write_tsne_to<W: Write>(w: W, keys: &[(String, i64)], coords: &[[f64; 2]]) -> Result<()> {
    if keys.len() != coords.len() {
        return Err(Error::invalid("t-SNE keys and coordinates differ in length"));
    }
    let mut w = writer(w, &TSNE)?;
    for ((id, step), c) in keys.iter().zip(coords) {
        w.write_record([id.clone(), step.to_string(), num(c[0]), num(c[1])])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_tsne(path: &Path, keys: &[(String, i64)], coords: &[[f64; 2]]) -> Result<()> {
    write_tsne_to(create(path)?, keys, coords)
}

pub fn read_tsne_from<R: Read>(r: R) -> Result<Vec<((String, i64), [f64; 2])>> {
    let mut rd = reader(r, &TSNE)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        out.push((
            (
                rec.get(0).unwrap_or_default().to_string(),
                field(&rec, 1, "step_index")?,
            ),
            [field(&rec, 2, "x")?, field(&rec, 3, "y")?],
        ));
    }
    Ok(out)
}

pub fn read_tsne(path: &Path) -> Result<Vec<((String, i64), [f64; 2])>> {
    read_tsne_from(open(path)?)
}

pub fn write_landscape_to<W: Write>(w: W, grid: &LandscapeGrid) -> Result<()> {
    let mut w = writer(w, &LANDSCAPE)?;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.center(i, j);
            w.write_record([i.to_string(), j.to_string(), num(x), num(y), num(grid.get(i, j))])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_landscape(path: &Path, grid: &LandscapeGrid) -> Result<()> {
    write_landscape_to(create(path)?, grid)
}

/// Rebuilds bounds from the cell centers; the bandwidth and sample count
/// are not stored and come back as 0.
pub fn read_landscape_from<R: Read>(r: R) -> Result<LandscapeGrid> {
    let mut rd = reader(r, &LANDSCAPE)?;
    let mut rows: Vec<(usize, usize, f64, f64, f64)> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        rows.push((
            field(&rec, 0, "i")?,
            field(&rec, 1, "j")?,
            field(&rec, 2, "x_center")?,
            field(&rec, 3, "y_center")?,
            field(&rec, 4, "density")?,
        ));
    }
    let nx = rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
    let ny = rows.iter().map(|r| r.1).max().map_or(0, |m| m + 1);
    if nx < 2 || ny < 2 || rows.len() != nx * ny {
        return Err(Error::invalid(
            "landscape table is not a full grid of at least 2x2 cells",
        ));
    }
    let mut density = vec![0.0; nx * ny];
    let (mut xs, mut ys) = (vec![0.0; nx], vec![0.0; ny]);
    for &(i, j, x, y, d) in &rows {
        density[j * nx + i] = d;
        xs[i] = x;
        ys[j] = y;
    }
    let dx = (xs[nx - 1] - xs[0]) / (nx - 1) as f64;
    let dy = (ys[ny - 1] - ys[0]) / (ny - 1) as f64;
    Ok(LandscapeGrid {
        x_min: xs[0] - 0.5 * dx,
        x_max: xs[nx - 1] + 0.5 * dx,
        y_min: ys[0] - 0.5 * dy,
        y_max: ys[ny - 1] + 0.5 * dy,
        nx,
        ny,
        density,
        bandwidth: 0.0,
        n: 0,
    })
}

pub fn read_landscape(path: &Path) -> Result<LandscapeGrid> {
    read_landscape_from(open(path)?)
}
