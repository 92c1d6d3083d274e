//! Text summaries: the final front of an archive, and multiplier metadata.

use std::fmt::Write;
use std::path::Path;

use crate::moea::{energy_uj, Objective, ParetoArchive};
use crate::multsim::{LibrarySpec, MultError, MultiplierLibrary};

use super::BenchError;

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::Accuracy => "accuracy",
        Objective::Params => "params",
        Objective::Energy => "energy",
    }
}

/// The final front, most accurate first, one row per network followed by
/// each network's layer listing. Rows whose stored energy is not exactly
/// mults × per-op energy make the archive corrupt.
pub fn render_report(archive: &ParetoArchive) -> Result<String, BenchError> {
    for e in &archive.final_front {
        let expected = energy_uj(e.n_mult, e.mult_energy_pj);
        if e.energy_uj != expected {
            return Err(BenchError::Archive(format!(
                "network {}: energy {} uJ is not {} mults x {} pJ = {expected} uJ",
                e.id, e.energy_uj, e.n_mult, e.mult_energy_pj
            )));
        }
        for (name, a) in [("final", e.final_accuracy), ("estimated", e.estimated_accuracy)] {
            if !(0.0..=1.0).contains(&a) {
                return Err(BenchError::Archive(format!("network {}: {name} accuracy {a} outside [0, 1]", e.id)));
            }
        }
    }
    let mut order: Vec<usize> = (0..archive.final_front.len()).collect();
    let front = &archive.final_front;
    order.sort_by(|&a, &b| front[b].final_accuracy.total_cmp(&front[a].final_accuracy).then(a.cmp(&b)));

    let objs: Vec<&str> = archive.objectives.iter().map(|&o| objective_name(o)).collect();
    let mut out = String::new();
    writeln!(out, "objectives:  {}", objs.join(", ")).unwrap();
    writeln!(out, "evaluations: {}", archive.evaluations()).unwrap();
    writeln!(out, "final front: {} networks", front.len()).unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "{:>3} {:>6} {:>4} {:>9} {:>9} {:>12} {:>12} {:<12} {:>9} {:>10}",
        "#", "id", "gen", "Final acc", "Est. acc", "Energy (uJ)", "Mults (1e6)", "Multiplier", "pJ/mult", "Params"
    )
    .unwrap();
    for (row, &i) in order.iter().enumerate() {
        let e = &front[i];
        writeln!(
            out,
            "{:>3} {:>6} {:>4} {:>8.2}% {:>8.2}% {:>12.6} {:>12.6} {:<12} {:>9} {:>10}",
            row + 1,
            e.id,
            e.generation,
            100.0 * e.final_accuracy,
            100.0 * e.estimated_accuracy,
            e.energy_uj,
            e.n_mult as f64 / 1e6,
            e.mult_id,
            e.mult_energy_pj,
            e.params
        )
        .unwrap();
    }
    for (row, &i) in order.iter().enumerate() {
        let e = &front[i];
        writeln!(out).unwrap();
        writeln!(out, "[{}] network {} (generation {}, {})", row + 1, e.id, e.generation, e.mult_id).unwrap();
        if let Some(err) = &e.retrain_error {
            writeln!(out, "re-training failed: {err}").unwrap();
        }
        out.push_str(e.network.trim_end());
        out.push('\n');
    }
    Ok(out)
}

pub fn report_file(path: &Path) -> Result<String, BenchError> {
    let text = std::fs::read_to_string(path).map_err(BenchError::io(path))?;
    let archive = ParetoArchive::from_json(&text).map_err(|e| BenchError::Archive(format!("{}: {e}", path.display())))?;
    render_report(&archive)
}

/// Metadata of multiplier `id` with its error metrics recomputed from the
/// table. Uses the built-in library unless a library file is given.
pub fn mult_info(library_file: Option<&Path>, id: &str) -> Result<String, BenchError> {
    let (spec, base) = match library_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(BenchError::io(p))?;
            let spec: LibrarySpec =
                toml::from_str(&text).map_err(|e| MultError::Library(format!("{}: {e}", p.display())))?;
            (spec, p.parent().unwrap_or(Path::new(".")).to_path_buf())
        }
        None => (LibrarySpec::builtin(), ".".into()),
    };
    let library = MultiplierLibrary::from_spec(&spec, &base)?;
    let index = library.index_of(id).ok_or_else(|| MultError::UnknownId(id.into()))?;
    let m = library.get(index).expect("index from the library");
    let entry = &spec.multipliers[index];
    let (mae, wce) = m.error_metrics();
    let stored = |v: Option<f64>| v.map_or("none".to_string(), |v| v.to_string());
    let mut out = String::new();
    writeln!(out, "id        {}", m.id()).unwrap();
    writeln!(out, "index     {index} of {}", library.len()).unwrap();
    writeln!(out, "energy    {} pJ per multiplication", m.energy_pj()).unwrap();
    writeln!(out, "table     {}", m.source()).unwrap();
    writeln!(out, "exact     {}", if m.is_exact() { "yes" } else { "no" }).unwrap();
    writeln!(out, "mae       stored {}, recomputed {mae}", stored(entry.mae)).unwrap();
    writeln!(out, "wce       stored {}, recomputed {wce}", stored(entry.wce)).unwrap();
    Ok(out)
}
