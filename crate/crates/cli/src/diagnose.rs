use std::path::Path;

use hnirm_core::sampler::{diagnostics, MONITORED};
use hnirm_core::{MhFamily, PosteriorSamples};

use crate::run::{create_dir, CliResult};
use crate::DiagnoseArgs;

fn writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

pub fn run(args: &DiagnoseArgs) -> CliResult<()> {
    let samples = PosteriorSamples::read_dir(&args.samples)?;
    let out = args.out.clone().unwrap_or_else(|| args.samples.join("diagnostics"));
    create_dir(&out)?;
    let report = diagnostics(&samples);

    let mut w = writer(&out.join("diagnostics.csv"))?;
    w.write_record(["family", "unit", "index", "mean", "sd", "ess", "degenerate"])?;
    for s in &report.series {
        w.write_record([
            s.family.name(),
            &s.unit,
            &s.index,
            &s.mean.to_string(),
            &s.sd.to_string(),
            &s.ess.map(|v| v.to_string()).unwrap_or_default(),
            &s.degenerate.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = writer(&out.join("autocorr.csv"))?;
    w.write_record(["family", "unit", "index", "lag", "value"])?;
    for s in &report.series {
        for (lag, v) in s.autocorr.iter().enumerate() {
            w.write_record([s.family.name(), &s.unit, &s.index, &lag.to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = writer(&out.join("traces.csv"))?;
    w.write_record(["family", "unit", "index", "draw_index", "value"])?;
    for f in MONITORED {
        let Ok(fd) = samples.family(f) else { continue };
        for (s, slot) in fd.slots.iter().enumerate() {
            for (t, v) in fd.series(s).iter().enumerate() {
                w.write_record([f.name(), &slot.unit, &slot.index, &t.to_string(), &v.to_string()])?;
            }
        }
    }
    w.flush()?;

    let mut w = writer(&out.join("acceptance_rates.csv"))?;
    w.write_record(["school", "family", "rate"])?;
    for (school, counts) in &report.acceptance {
        for f in MhFamily::ALL {
            w.write_record([school.as_str(), f.name(), &counts.rate(f).to_string()])?;
        }
    }
    for f in MhFamily::ALL {
        w.write_record(["all", f.name(), &report.acceptance_rate(f).to_string()])?;
    }
    w.flush()?;
    println!("wrote diagnostics for {} series to {}", report.series.len(), out.display());
    Ok(())
}
