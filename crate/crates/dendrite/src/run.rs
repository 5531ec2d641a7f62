//! One pipeline per subcommand: build the cell, run the protocol, write the
//! artifacts. Each returns a one-line summary for the terminal.

use std::num::NonZeroUsize;

use dendrite_core::analysis::{
    distance_matrix, extract_signature, leave_one_cycle_out, signature_distance, signature_stats, uniqueness_report,
    SignatureStats, SignatureVector,
};
use dendrite_core::protocols::{
    rectification_coefficient, rectification_matrix, run_mac, run_output_sweep, run_sequence_from, run_transfer_sweep,
    SequenceProgram,
};
use dendrite_core::{ElectrochemicalState, SimulationCell};

use crate::config::{Projection, RunConfig};
use crate::error::{AppError, AppResult};
use crate::io::{self, OutputSet, Report};

pub fn grow(config: &RunConfig, out: &mut OutputSet) -> AppResult<String> {
    let cell = config.build_cell()?;
    out.write("topology.json", &io::topology_bytes(&cell.topologies))?;
    out.write_state("state.json", &cell, &ElectrochemicalState::pristine(&cell), 0.0)?;
    let mut report = Report::new("grow");
    report.line("seed", config.seed);
    for t in &cell.topologies {
        report.line(
            format!("topology {}", t.name),
            format!(
                "{} nodes, {} segments, {:.1} um total length",
                t.nodes.len(),
                t.segments.len(),
                t.total_length_um()
            ),
        );
    }
    out.write("report.txt", report.render().as_bytes())?;
    Ok(format!("grew {} topologies with {} segments", cell.topologies.len(), cell.segment_count()))
}

pub fn sweep(config: &RunConfig, out: &mut OutputSet) -> AppResult<String> {
    let sweep = config.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
    let cell = config.build_cell()?;
    let curve = run_output_sweep(&cell, sweep)?;
    let rows: Vec<Vec<f64>> = curve.voltages.iter().zip(&curve.currents).map(|(&v, &i)| vec![v, i]).collect();
    out.write("curve.csv", &io::table_csv(&["voltage_V", "current_A"], &rows)?)?;
    let mut report = Report::new("sweep");
    report.line("points", curve.voltages.len());
    let mut summary = format!("swept {} points", curve.voltages.len());
    if sweep.start == -sweep.end {
        let r = rectification_coefficient(&curve, sweep.end.abs())?;
        report.line("rectification", r);
        summary.push_str(&format!(", rectification {r}"));
    }
    out.write("report.txt", report.render().as_bytes())?;
    Ok(summary)
}

pub fn rectify(config: &RunConfig, out: &mut OutputSet) -> AppResult<String> {
    let r = config.rectify.as_ref().ok_or_else(|| missing("rectify"))?;
    let cell = config.build_cell()?;
    let table = rectification_matrix(&cell, r.topology, r.v_max, r.step)?;
    let rows = table
        .iter()
        .map(|e| vec![e.label.clone(), e.swept.clone(), e.grounds.join(" "), io::num(e.coefficient.value())]);
    out.write("rectification.csv", &io::string_csv(&["configuration", "swept", "grounds", "coefficient"], rows)?)?;
    let best = table
        .iter()
        .max_by(|a, b| a.coefficient.value().total_cmp(&b.coefficient.value()))
        .expect("table has at least one entry");
    let mut report = Report::new("rectify");
    for e in &table {
        report.line(&e.label, e.coefficient);
    }
    report.line("maximum", &best.label);
    out.write("report.txt", report.render().as_bytes())?;
    Ok(format!("{} configurations, maximum {} = {}", table.len(), best.label, best.coefficient))
}

pub fn transfer(config: &RunConfig, out: &mut OutputSet) -> AppResult<String> {
    let t = config.transfer.as_ref().ok_or_else(|| missing("transfer"))?;
    let cell = config.build_cell()?;
    let family = run_transfer_sweep(&cell, t)?;
    let mut rows = Vec::new();
    for (g, currents) in family.gate_biases.iter().zip(&family.drain_currents) {
        for (d, i) in family.drain_voltages.iter().zip(currents) {
            rows.push(vec![*g, *d, *i]);
        }
    }
    out.write("transfer.csv", &io::table_csv(&["gate_V", "drain_V", "drain_current_A"], &rows)?)?;
    let suppression = family.suppression()?;
    let mut report = Report::new("transfer");
    report.line("gate", &t.gate).line("suppression", format!("{suppression:.4}"));
    out.write("report.txt", report.render().as_bytes())?;
    Ok(format!("gate {} suppresses the drain current by {:.1}%", t.gate, 100.0 * suppression))
}

pub fn mac(config: &RunConfig, out: &mut OutputSet) -> AppResult<String> {
    let m = config.mac.as_ref().ok_or_else(|| missing("mac"))?;
    let cell = config.build_cell()?;
    let result = run_mac(&cell, m)?;
    out.write("trace.csv", &io::trace_csv(&result.trace)?)?;
    let rows = result.entries.iter().map(|e| vec![e.label.clone(), io::num(e.delta_i_over_i), io::num(e.modulation)]);
    out.write("mac.csv", &io::string_csv(&["inputs", "delta_i_over_i", "modulation"], rows)?)?;
    let mut report = Report::new("mac");
    for e in &result.entries {
        report.line(&e.label, format!("{:.2}%", 100.0 * e.modulation));
    }
    out.write("report.txt", report.render().as_bytes())?;
    let best = result
        .entries
        .iter()
        .max_by(|a, b| a.modulation.total_cmp(&b.modulation))
        .ok_or_else(|| AppError::config("mac: empty schedule"))?;
    Ok(format!(
        "{} combinations, largest modulation {} = {:.1}%",
        result.entries.len(),
        best.label,
        100.0 * best.modulation
    ))
}

/// Runs the sequence program, optionally continuing from a saved state.
pub fn sequence(config: &RunConfig, initial: Option<io::SavedState>, out: &mut OutputSet) -> AppResult<String> {
    let program = config.sequence.as_ref().ok_or_else(|| missing("sequence"))?;
    let cell = config.build_cell()?;
    let (state, t0) = match initial {
        Some(saved) => {
            if saved.cell != cell {
                return Err(AppError::config("initial state was saved for a different cell than the config describes"));
            }
            (saved.state, saved.time)
        }
        None => (ElectrochemicalState::pristine(&cell), 0.0),
    };
    let run = run_sequence_from(&cell, program, state)?;
    let sig = extract_signature(&run)?;
    let stats = signature_stats(&sig)?;
    out.write("trace.csv", &io::trace_csv(&run.trace)?)?;
    out.write("signature.csv", &io::signature_csv(&sig)?)?;
    let t_end = t0 + run.trace.times.last().copied().unwrap_or(0.0);
    out.write_state("state.json", &cell, &run.final_state, t_end)?;
    let mut report = Report::new("sequence");
    report.line("patterns", program.pattern_labels().join(" "));
    report.line("cycles", sig.cycles());
    for (i, p) in stats.patterns.iter().enumerate() {
        report.line(format!("pattern {p}"), format!("mean {:.6} std {:.6}", stats.mean[i], stats.std[i]));
    }
    report.line("argmax", &stats.patterns[stats.argmax()]);
    report.line("argmin", &stats.patterns[stats.argmin()]);
    let baseline = run.baseline_per_cycle();
    report.line("baseline per cycle (A)", join_f64(&baseline));
    out.write("report.txt", report.render().as_bytes())?;
    Ok(format!(
        "{} cycles x {} patterns; argmax {}, argmin {}",
        sig.cycles(),
        stats.patterns.len(),
        stats.patterns[stats.argmax()],
        stats.patterns[stats.argmin()]
    ))
}

fn measure(cell: &SimulationCell, program: &SequenceProgram) -> AppResult<SignatureVector> {
    let run = run_sequence_from(cell, program, ElectrochemicalState::pristine(cell))?;
    Ok(extract_signature(&run)?)
}

/// Signatures of every spatial projection, their separations and a
/// leave-one-cycle-out classification.
pub fn signature(config: &RunConfig, out: &mut OutputSet) -> AppResult<String> {
    let s = config.signature.as_ref().ok_or_else(|| missing("signature"))?;
    let cell = config.build_cell()?;
    let mut sigs: Vec<(String, SignatureVector)> = Vec::new();
    for p in &s.projections {
        let sig = measure(&cell, &s.program_for(p))?;
        out.write(&format!("signature_{}.csv", p.name), &io::signature_csv(&sig)?)?;
        sigs.push((p.name.clone(), sig));
    }
    let stats: Vec<(String, SignatureStats)> =
        sigs.iter().map(|(n, v)| Ok((n.clone(), signature_stats(v)?))).collect::<AppResult<_>>()?;

    let mut report = Report::new("signature");
    report.line("threshold", s.threshold);
    let mut min_distance = f64::INFINITY;
    let n = stats.len();
    let mut pairwise = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = signature_distance(&stats[i].1, &stats[j].1)?;
            pairwise[i][j] = d;
            pairwise[j][i] = d;
            min_distance = min_distance.min(d);
            report.line(format!("distance {}-{}", stats[i].0, stats[j].0), format!("{d:.4}"));
        }
    }
    for (name, st) in &stats {
        report.line(
            format!("extremes {name}"),
            format!("argmax {} argmin {}", st.patterns[st.argmax()], st.patterns[st.argmin()]),
        );
    }
    let mut summary = format!("{n} projections");
    if n >= 2 {
        let (correct, total) = leave_one_cycle_out(&sigs)?;
        report.line("leave-one-cycle-out", format!("{correct}/{total}"));
        report.line("minimum distance", format!("{min_distance:.4}"));
        report.line("separated", min_distance > s.threshold);
        summary.push_str(&format!(", minimum distance {min_distance:.2}, leave-one-cycle-out {correct}/{total}"));
    }
    let mut spider = stats.clone();
    if !s.reordered_patterns.is_empty() {
        let first = &s.projections[0];
        let program = SequenceProgram { patterns: s.reordered_patterns.clone(), ..s.program_for(first) };
        let sig = measure(&cell, &program)?;
        out.write(&format!("signature_{}-reordered.csv", first.name), &io::signature_csv(&sig)?)?;
        let reordered = signature_stats(&sig)?.reordered(&stats[0].1.patterns)?;
        let d = signature_distance(&stats[0].1, &reordered)?;
        report.line("reordered distance", format!("{d:.4}"));
        summary.push_str(&format!(", reordered distance {d:.2}"));
        spider.push((format!("{}-reordered", first.name), reordered));
    }
    let names: Vec<String> = stats.iter().map(|(n, _)| n.clone()).collect();
    out.write("distances.csv", &io::distance_csv(&names, &pairwise)?)?;
    out.write("spider.csv", &io::spider_csv(&spider)?)?;
    out.write("report.txt", report.render().as_bytes())?;
    Ok(summary)
}

/// Reference and replicate signatures of one device.
struct DeviceMeasurement {
    name: String,
    reference: SignatureStats,
    replicates: Vec<SignatureStats>,
}

fn measure_device(
    name: String,
    cell: &SimulationCell,
    program: &SequenceProgram,
    replicates: usize,
) -> AppResult<DeviceMeasurement> {
    let run = run_sequence_from(cell, program, ElectrochemicalState::pristine(cell))?;
    let reference = signature_stats(&extract_signature(&run)?)?;
    let replicates = (1..=replicates as u64)
        .map(|r| {
            let again = run.replicate(program.read_noise, program.noise_seed, r);
            Ok(signature_stats(&extract_signature(&again)?)?)
        })
        .collect::<AppResult<_>>()?;
    Ok(DeviceMeasurement { name, reference, replicates })
}

/// Runs `jobs` across up to `workers` threads, keeping results in job order.
fn fan_out<T: Send>(jobs: usize, workers: usize, job: impl Fn(usize) -> AppResult<T> + Sync) -> AppResult<Vec<T>> {
    let workers = match workers {
        0 => std::thread::available_parallelism().map_or(1, NonZeroUsize::get),
        w => w,
    }
    .clamp(1, jobs.max(1));
    let mut slots: Vec<Option<AppResult<T>>> = (0..jobs).map(|_| None).collect();
    std::thread::scope(|scope| {
        let job = &job;
        let handles: Vec<_> = (0..workers)
            .map(|w| scope.spawn(move || (w..jobs).step_by(workers).map(|i| (i, job(i))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every job ran")).collect()
}

/// Inter- versus intra-device distances over a regrown population or over
/// networks sharing one cell.
pub fn uniqueness(config: &RunConfig, out: &mut OutputSet) -> AppResult<String> {
    let u = config.uniqueness.as_ref().ok_or_else(|| missing("uniqueness"))?;
    let devices: Vec<DeviceMeasurement> = if u.networks.is_empty() {
        fan_out(u.devices, u.workers, |i| {
            let seed = config.seed.wrapping_add(i as u64);
            let cell = config.build_cell_with_seed(seed)?;
            let program = SequenceProgram { noise_seed: seed, ..u.program.clone() };
            measure_device(format!("seed-{seed}"), &cell, &program, u.replicates)
        })?
    } else {
        let cell = config.build_cell()?;
        fan_out(u.networks.len(), u.workers, |i| {
            let n: &Projection = &u.networks[i];
            let program = SequenceProgram { noise_seed: config.seed.wrapping_add(i as u64), ..u.program_for(n) };
            measure_device(n.name.clone(), &cell, &program, u.replicates)
        })?
    };
    let references: Vec<SignatureStats> = devices.iter().map(|d| d.reference.clone()).collect();
    let replicates: Vec<Vec<SignatureStats>> = devices.iter().map(|d| d.replicates.clone()).collect();
    let result = uniqueness_report(&references, &replicates)?;
    let names: Vec<String> = devices.iter().map(|d| d.name.clone()).collect();
    out.write("distances.csv", &io::distance_csv(&names, &distance_matrix(&references)?)?)?;
    let spider: Vec<(String, SignatureStats)> = devices.iter().map(|d| (d.name.clone(), d.reference.clone())).collect();
    out.write("spider.csv", &io::spider_csv(&spider)?)?;
    let mut report = Report::new("uniqueness");
    report
        .line("devices", result.devices)
        .line("replicates", u.replicates)
        .line("inter-device distance", format!("{:.4}", result.inter_distance))
        .line("intra-device distance", format!("{:.4}", result.intra_distance))
        .line("score", format!("{:.4}", result.score))
        .line("threshold", u.threshold)
        .line("unique", result.score > u.threshold);
    out.write("report.txt", report.render().as_bytes())?;
    out.write_json("uniqueness.json", &result)?;
    Ok(format!(
        "{} devices, inter {:.2} / intra {:.3} = score {:.2}",
        result.devices, result.inter_distance, result.intra_distance, result.score
    ))
}

fn missing(section: &str) -> AppError {
    AppError::config(format!("this subcommand needs a [{section}] section"))
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}
