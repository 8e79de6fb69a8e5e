//! Artifact directory: manifest, JSON reports, CSV curves and a gnuplot script.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use hermite_lab::report::Report;
use serde::Serialize;

use crate::config::RunConfig;

pub struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
    names: BTreeSet<String>,
    plots: Vec<(String, Vec<String>)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    created_unix: u64,
    workers: usize,
    config: &'a RunConfig,
    artifacts: &'a [String],
    exit_status: i32,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        // a stale error from an earlier run would contradict the new manifest
        let stale = dir.join("error.json");
        if stale.exists() {
            fs::remove_file(&stale)?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            names: BTreeSet::new(),
            plots: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn unique(&mut self, stem: &str) -> String {
        let mut name = stem.to_string();
        let mut k = 2;
        while !self.names.insert(name.clone()) {
            name = format!("{stem}_{k}");
            k += 1;
        }
        name
    }

    pub fn path(&mut self, file: &str) -> PathBuf {
        self.written.push(file.to_string());
        self.dir.join(file)
    }

    pub fn json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        let path = self.path(file);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// Writes `<name>.json` plus one CSV per curve.
    pub fn report(&mut self, r: &Report) -> Result<()> {
        let stem = self.unique(&r.name);
        self.json(&format!("{stem}.json"), r)?;
        for (curve, data) in &r.curves {
            let file = format!("{stem}.{curve}.csv");
            let path = self.path(&file);
            let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
            w.write_record(&data.columns)?;
            for row in &data.rows {
                w.write_record(row.iter().map(|v| format!("{v:e}")))?;
            }
            w.flush()?;
            self.plots.push((file, data.columns.clone()));
        }
        Ok(())
    }

    /// Opens a raw file inside the run directory.
    pub fn writer(&mut self, file: &str) -> Result<BufWriter<fs::File>> {
        let path = self.path(file);
        Ok(BufWriter::new(fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?))
    }

    /// Gnuplot script with one page per CSV, first column on the x axis.
    fn plot_script(&mut self) -> Result<()> {
        if self.plots.is_empty() {
            return Ok(());
        }
        let plots = std::mem::take(&mut self.plots);
        let mut w = self.writer("plot.gp")?;
        writeln!(w, "set datafile separator ','")?;
        writeln!(w, "set key autotitle columnhead")?;
        writeln!(w, "set terminal pngcairo size 900,600")?;
        for (file, cols) in &plots {
            writeln!(w, "set output '{}.png'", file.trim_end_matches(".csv"))?;
            writeln!(w, "set xlabel '{}'", cols.first().map(String::as_str).unwrap_or(""))?;
            let series: Vec<String> = (2..=cols.len())
                .map(|c| format!("'{file}' using 1:{c} with linespoints"))
                .collect();
            if series.is_empty() {
                writeln!(w, "plot '{file}' using 0:1 with linespoints")?;
            } else {
                writeln!(w, "plot {}", series.join(", "))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the plot script and the manifest; the manifest holds the only timestamp.
    pub fn finish(mut self, command: &str, cfg: &RunConfig, workers: usize, exit_status: i32) -> Result<()> {
        self.plot_script()?;
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let artifacts = self.written.clone();
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            created_unix,
            workers,
            config: cfg,
            artifacts: &artifacts,
            exit_status,
        };
        self.json("manifest.json", &m)
    }
}
