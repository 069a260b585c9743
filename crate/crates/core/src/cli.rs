//! The `pipeblock` command line.
//!
//! Exit status is 0 on success, 1 on domain errors (collisions, infeasible
//! limits, invalid documents) and 2 on usage errors, including unreadable
//! input paths. Documents are read from stdin when the input is `-` or
//! omitted, and written to stdout unless `--out` is given.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{IsTerminal, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::assemble::{assemble, repeat, squeeze};
use crate::bubble::{growth_rate, vhalf_condition, GrowthReport};
use crate::document::ScheduleDocument;
use crate::error::{Error, Result};
use crate::gallery::{build_gallery, list_gallery, GalleryParams};
use crate::memory::{check_bound, exact_peak, lifespans, peak_bound};
use crate::model::{BuildingBlock, RunTimeProfile};
use crate::render::{render_svg, render_text, witness_origin, witness_passes, ColorChoice, SvgStyle, TextStyle};
use crate::search::{frontier, search, MemoryLimit, SearchSpec};
use crate::sim::{compare, simulate};

#[derive(Debug, Parser)]
#[command(name = "pipeblock", version, about = "Pipeline schedules from repeating building blocks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List the built-in building blocks.
    Gallery {
        /// Emit JSON instead of a text report.
        #[arg(long)]
        json: bool,
    },
    /// Emit a building block as JSON.
    Build {
        #[command(flatten)]
        block: BlockArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat, squeeze and reorder a block into a schedule document.
    Assemble {
        #[command(flatten)]
        block: BlockArgs,
        /// Block JSON from `build` instead of a gallery id.
        #[arg(long, conflicts_with = "gallery_block")]
        from: Option<PathBuf>,
        #[arg(long, short = 'n')]
        microbatches: usize,
        #[arg(long, value_enum, default_value_t = Steps::Full)]
        steps: Steps,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a schedule under pass durations.
    Simulate {
        /// Schedule document; stdin when omitted or `-`.
        input: Option<PathBuf>,
        #[command(flatten)]
        profile: ProfileArgs,
        /// Reject unknown document fields.
        #[arg(long)]
        strict: bool,
        /// Emit JSON instead of a text report.
        #[arg(long)]
        json: bool,
        /// Write the simulated timeline as a time-unit document.
        #[arg(long)]
        timeline: Option<PathBuf>,
        /// Write the real-time memory trace as CSV.
        #[arg(long)]
        memory_csv: Option<PathBuf>,
    },
    /// Lifespans, lifespan bound, exact peak and bubble growth.
    Analyze {
        /// Schedule document; stdin when omitted or `-`.
        input: Option<PathBuf>,
        #[command(flatten)]
        profile: ProfileArgs,
        /// Reject unknown document fields.
        #[arg(long)]
        strict: bool,
        /// Emit JSON instead of a text report.
        #[arg(long)]
        json: bool,
    },
    /// Best V schedule under a memory limit.
    Search {
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        mem_limit: MemoryLimit,
        /// Emit JSON instead of a text report.
        #[arg(long)]
        json: bool,
        /// Write the found schedule as a document.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Best bubble rate across several memory limits.
    Frontier {
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        limits: Vec<MemoryLimit>,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
    /// Draw a schedule document.
    Render {
        /// Schedule document; stdin when omitted or `-`.
        input: Option<PathBuf>,
        /// SVG output path, `-` for stdout.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Text grid on stdout.
        #[arg(long)]
        text: bool,
        #[arg(long, default_value_t = 200)]
        width: usize,
        /// Outline the heaviest stable-phase chain.
        #[arg(long)]
        witness: bool,
        #[command(flatten)]
        profile: ProfileArgs,
        /// Reject unknown document fields.
        #[arg(long)]
        strict: bool,
    },
    /// Simulate several gallery blocks side by side.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        blocks: Vec<String>,
        #[arg(long, short = 'd')]
        devices: usize,
        #[arg(long, short = 'n')]
        microbatches: usize,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
}

#[derive(Debug, Args)]
#[group(id = "gallery_block", multiple = true)]
struct BlockArgs {
    /// Gallery id, e.g. `v-half`.
    #[arg(long)]
    block: Option<String>,
    #[arg(long, short = 'd')]
    devices: Option<usize>,
    #[arg(long)]
    eagerness: Option<usize>,
    /// Microbatches held by a GPipe block.
    #[arg(long = "block-microbatches")]
    block_microbatches: Option<usize>,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Forward pass duration.
    #[arg(long, default_value_t = 1.0)]
    tf: f64,
    /// Activation backward duration.
    #[arg(long, default_value_t = 1.0)]
    tb: f64,
    /// Weight backward duration.
    #[arg(long, default_value_t = 1.0)]
    tw: f64,
    /// Grouped backward duration, default `tb + tw`.
    #[arg(long)]
    tbw: Option<f64>,
    /// Delay before a result reaches another device.
    #[arg(long, default_value_t = 0.0)]
    comm: f64,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long, short = 'd')]
    devices: usize,
    /// Microbatches for evaluating candidates, default `3d`.
    #[arg(long, short = 'n')]
    microbatches: Option<usize>,
    #[arg(long, default_value_t = 6)]
    delta_max: i64,
    #[arg(long, requires = "k_max")]
    k_min: Option<usize>,
    #[arg(long, requires = "k_min")]
    k_max: Option<usize>,
    #[command(flatten)]
    profile: ProfileArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Steps {
    Repeat,
    Squeeze,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Markdown,
    Csv,
    Json,
}

impl ProfileArgs {
    fn profile(&self) -> Result<RunTimeProfile> {
        let p = RunTimeProfile::new(self.tf, self.tb, self.tw)?.with_comm(self.comm)?;
        match self.tbw {
            Some(t) => p.with_grouped(t),
            None => Ok(p),
        }
    }
}

impl BlockArgs {
    fn build(&self, microbatches: Option<usize>) -> Result<BuildingBlock> {
        let id = self.block.as_deref().ok_or_else(|| usage("--block is required"))?;
        let d = self.devices.ok_or_else(|| usage("--devices is required"))?;
        let params = GalleryParams {
            eagerness: self.eagerness,
            microbatches: self.block_microbatches.or(microbatches),
        };
        build_gallery(id, d, params)
    }
}

impl SearchArgs {
    fn spec(&self, limit: MemoryLimit) -> Result<SearchSpec> {
        let mut spec = SearchSpec::new(self.devices, self.profile.profile()?, limit);
        spec.microbatches = self.microbatches;
        spec.delta_max = self.delta_max;
        spec.k_range = self.k_min.zip(self.k_max);
        Ok(spec)
    }
}

fn usage(msg: &str) -> Error {
    Error::Usage(msg.to_string())
}

/// Standard streams, injectable for tests.
pub struct Streams<'a> {
    pub stdin: &'a mut dyn Read,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
    /// Whether stdout is a terminal, for `PIPEBLOCK_COLOR=auto`.
    pub terminal: bool,
}

/// Runs the command line against the process streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let terminal = std::io::stdout().is_terminal();
    let (stdin, stdout, stderr) = (std::io::stdin(), std::io::stdout(), std::io::stderr());
    let mut streams = Streams {
        stdin: &mut stdin.lock(),
        stdout: &mut stdout.lock(),
        stderr: &mut stderr.lock(),
        terminal,
    };
    run_with(args, &mut streams)
}

pub fn run_with<I, T>(args: I, io: &mut Streams<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { io.stdout.write_all(text.as_bytes()) } else { io.stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let color = match ColorChoice::from_env() {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {e}");
            return 2;
        }
    };
    match execute(cli.command, io, color) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {e}");
            if e.is_domain() {
                1
            } else {
                2
            }
        }
    }
}

fn read_input(path: Option<&Path>, io: &mut Streams<'_>) -> Result<String> {
    match path {
        Some(p) if p != Path::new("-") => std::fs::read_to_string(p)
            .map_err(|e| Error::Usage(format!("cannot read {}: {e}", p.display()))),
        _ => {
            let mut text = String::new();
            io.stdin.read_to_string(&mut text)?;
            Ok(text)
        }
    }
}

fn write_output(path: Option<&Path>, text: &str, io: &mut Streams<'_>) -> Result<()> {
    match path {
        Some(p) if p != Path::new("-") => std::fs::write(p, text)?,
        _ => io.stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load(path: Option<&Path>, strict: bool, io: &mut Streams<'_>) -> Result<ScheduleDocument> {
    ScheduleDocument::parse(&read_input(path, io)?, strict)
}

/// The block behind a document, embedded or rebuilt from the gallery.
fn block_of(doc: &ScheduleDocument) -> Option<BuildingBlock> {
    doc.metadata.building_block.clone().or_else(|| {
        let params = GalleryParams::for_microbatches(doc.microbatch_count());
        build_gallery(&doc.metadata.block, doc.topology.devices, params).ok()
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn execute(command: Command, io: &mut Streams<'_>, color: ColorChoice) -> Result<()> {
    match command {
        Command::Gallery { json } => {
            let entries = list_gallery();
            let text = if json {
                serde_json::to_string_pretty(&entries)? + "\n"
            } else {
                let mut s = String::new();
                for e in &entries {
                    let mut notes = Vec::new();
                    if e.replicated_weights {
                        notes.push("two replicas");
                    }
                    if e.non_uniform_repeat {
                        notes.push("non-uniform repeat");
                    }
                    if e.grouped_backward {
                        notes.push("grouped backward");
                    }
                    let _ = writeln!(s, "{:<26} {:<28} {}", e.id, e.name, e.description);
                    if !notes.is_empty() {
                        let _ = writeln!(s, "{:<26} ({})", "", notes.join(", "));
                    }
                }
                s
            };
            write_output(None, &text, io)
        }
        Command::Build { block, out } => {
            let b = block.build(None)?;
            write_output(out.as_deref(), &(serde_json::to_string_pretty(&b)? + "\n"), io)
        }
        Command::Assemble { block, from, microbatches, steps, out } => {
            let b = match from {
                Some(path) => {
                    let b: BuildingBlock = serde_json::from_str(&read_input(Some(&path), io)?)?;
                    let violations = crate::model::validate_block(&b);
                    if let Some(v) = violations.first() {
                        return Err(Error::InvalidSchedule(format!("block {}: {v}", b.name)));
                    }
                    b
                }
                None => block.build(Some(microbatches))?,
            };
            let schedule = match steps {
                Steps::Repeat => repeat(&b, microbatches)?,
                Steps::Squeeze => squeeze(&repeat(&b, microbatches)?),
                Steps::Full => assemble(&b, microbatches)?,
            };
            let doc = ScheduleDocument::from_schedule(&schedule).with_block(&b);
            write_output(out.as_deref(), &doc.to_json()?, io)
        }
        Command::Simulate { input, profile, strict, json, timeline, memory_csv } => {
            let doc = load(input.as_deref(), strict, io)?;
            let profile = profile.profile()?;
            let schedule = doc.to_schedule()?;
            let sim = simulate(&schedule, &profile)?;
            if let Some(path) = timeline {
                let t = ScheduleDocument::from_simulation(&schedule, &sim, &profile);
                write_output(Some(&path), &t.to_json()?, io)?;
            }
            if let Some(path) = memory_csv {
                let mut buf = Vec::new();
                sim.memory.write_csv(&mut buf)?;
                write_output(Some(&path), &String::from_utf8_lossy(&buf), io)?;
            }
            let text = if json {
                sim.to_json()? + "\n"
            } else {
                let mut s = String::new();
                let _ = writeln!(s, "makespan     {:.2}", sim.makespan);
                let _ = writeln!(s, "bubble rate  {}", pct(sim.bubble_rate));
                let _ = writeln!(s, "device  busy        idle        span idle   peak (m)");
                for d in 0..schedule.devices() {
                    let _ = writeln!(
                        s,
                        "{:<7} {:<11.4} {:<11.4} {:<11.4} {}",
                        d + 1,
                        sim.busy[d],
                        sim.idle[d],
                        sim.span_idle[d],
                        sim.memory.per_device[d]
                    );
                }
                s
            };
            write_output(None, &text, io)
        }
        Command::Analyze { input, profile, strict, json } => {
            let doc = load(input.as_deref(), strict, io)?;
            let schedule = doc.to_schedule()?;
            let profile = profile.profile()?;
            let trace = exact_peak(&schedule);
            let block = block_of(&doc);
            let table = block.as_ref().map(lifespans);
            let bound = block.as_ref().map(peak_bound).transpose().ok().flatten();
            let check = block.as_ref().and_then(|b| check_bound(&schedule, b).ok());
            let growth: Option<GrowthReport> = block.as_ref().and_then(|b| growth_rate(b, &profile).ok());
            if json {
                let value = serde_json::json!({
                    "block": doc.metadata.block,
                    "exact_peak": trace.per_device,
                    "peak": trace.peak,
                    "lifespans": table,
                    "peak_bound": bound,
                    "bound_check": check,
                    "growth": growth,
                    "vhalf_condition": vhalf_condition(&profile),
                });
                return write_output(None, &(serde_json::to_string_pretty(&value)? + "\n"), io);
            }
            let mut s = String::new();
            let _ = writeln!(s, "block        {}", if doc.metadata.block.is_empty() { "(unnamed)" } else { &doc.metadata.block });
            let _ = writeln!(s, "devices      {}", schedule.devices());
            let _ = writeln!(s, "microbatches {}", schedule.microbatches);
            if let Some(t) = &table {
                let _ = writeln!(s, "\nlifespans (cells)");
                for d in 1..=schedule.devices() {
                    let items: Vec<String> = t
                        .on_device(d)
                        .map(|l| format!("s{}{}={}", l.stage, if l.slot > 0 { format!("/{}", l.slot) } else { String::new() }, l.length()))
                        .collect();
                    let _ = writeln!(s, "  D{d}: {}", items.join(" "));
                }
            }
            let _ = writeln!(s, "\ndevice  exact peak  bound");
            for d in 0..schedule.devices() {
                let b = bound.as_ref().map_or("-".to_string(), |b| b.per_device[d].to_string());
                let _ = writeln!(s, "{:<7} {:<11} {}", d + 1, trace.per_device[d], b);
            }
            if let Some(c) = &check {
                let _ = writeln!(s, "bound holds  {}", c.ok());
            }
            match &growth {
                Some(g) => {
                    let _ = writeln!(s, "\ngrowth per period  {:.4}", g.g);
                    let heaviest = g.work_per_period.iter().copied().fold(0.0, f64::max);
                    let _ = writeln!(s, "heaviest device    {heaviest:.4}");
                    let _ = writeln!(s, "repeating bubble   {:.4}", g.repeating_bubble);
                    let _ = writeln!(s, "classification     {}", serde_json::to_value(g.classification)?.as_str().unwrap_or(""));
                    let chain: Vec<String> = g
                        .witness
                        .iter()
                        .map(|w| format!("{}{}@{}", w.kind, w.stage, w.instance))
                        .collect();
                    let _ = writeln!(s, "witness            {}", chain.join(" -> "));
                }
                None => {
                    let _ = writeln!(s, "\ngrowth: unavailable (no uniform block for this document)");
                }
            }
            write_output(None, &s, io)
        }
        Command::Search { search: args, mem_limit, json, out } => {
            let spec = args.spec(mem_limit)?;
            let result = search(&spec)?;
            if let (Some(path), Some(schedule), Some(block)) = (out, &result.schedule, &result.block) {
                let doc = ScheduleDocument::from_schedule(schedule).with_block(block);
                write_output(Some(&path), &doc.to_json()?, io)?;
            }
            let text = if json {
                serde_json::to_string_pretty(&result)? + "\n"
            } else {
                let b = &result.best;
                let c = &b.candidate;
                let mut s = String::new();
                let _ = writeln!(s, "limit        {} ({} m)", mem_limit, result.limit_units);
                let _ = writeln!(
                    s,
                    "offsets      K={} d0<K={} d1<=K={} d0>=K={} d1>K={} turns={:?}",
                    c.k, c.d0_lt, c.d1_le, c.d0_ge, c.d1_gt, c.turns
                );
                let _ = writeln!(s, "bubble rate  {}", pct(b.bubble_rate));
                let _ = writeln!(s, "makespan     {:.2}", b.makespan);
                let _ = writeln!(s, "peak         {} m ({:.3} M)", b.peak, result.peak_fraction);
                let _ = writeln!(s, "candidates   {} evaluated, {} feasible", result.evaluated, result.feasible);
                s
            };
            write_output(None, &text, io)
        }
        Command::Frontier { search: args, limits, format } => {
            let spec = args.spec(limits.first().copied().unwrap_or(MemoryLimit::Fraction(1.0)))?;
            let points = frontier(&spec, &limits)?;
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&points)? + "\n",
                Format::Csv => {
                    let mut s = String::from("limit,limit_units,bubble_rate,peak\n");
                    for p in &points {
                        let (rate, peak) = p.best.as_ref().map_or((String::new(), String::new()), |b| {
                            (b.bubble_rate.to_string(), b.peak.to_string())
                        });
                        let _ = writeln!(s, "{},{},{rate},{peak}", p.limit, p.limit_units);
                    }
                    s
                }
                Format::Markdown => {
                    let mut s = String::from("| limit | units of m | bubble rate | peak (m) |\n|---|---|---|---|\n");
                    for p in &points {
                        let (rate, peak) = p
                            .best
                            .as_ref()
                            .map_or(("infeasible".to_string(), "-".to_string()), |b| (pct(b.bubble_rate), b.peak.to_string()));
                        let _ = writeln!(s, "| {} | {} | {rate} | {peak} |", p.limit, p.limit_units);
                    }
                    s
                }
            };
            write_output(None, &text, io)
        }
        Command::Render { input, svg, text, width, witness, profile, strict } => {
            if svg.is_none() && !text {
                return Err(usage("render needs --svg PATH or --text"));
            }
            let doc = load(input.as_deref(), strict, io)?;
            if let Some(path) = svg {
                let mut style = SvgStyle::default();
                if witness {
                    let block = block_of(&doc).ok_or_else(|| {
                        Error::Unsupported("witness overlay needs the generating block".into())
                    })?;
                    let report = growth_rate(&block, &profile.profile()?)?;
                    let origin = witness_origin(&report, doc.microbatch_count());
                    style.overlay = witness_passes(&report, origin);
                }
                write_output(Some(&path), &render_svg(&doc, &style), io)?;
            }
            if text {
                let style = TextStyle { max_width: width, color: color.enabled(io.terminal) };
                write_output(None, &render_text(&doc, &style), io)?;
            }
            Ok(())
        }
        Command::Compare { blocks, devices, microbatches, profile, format } => {
            let names: Vec<&str> = blocks.iter().map(String::as_str).collect();
            let rows = compare(&names, devices, microbatches, &profile.profile()?);
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&rows)? + "\n",
                Format::Csv => {
                    let mut s = String::from("schedule,devices,microbatches,bubble_rate,makespan,peak,peak_fraction,error\n");
                    for r in &rows {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{},{},{}",
                            r.block,
                            r.devices,
                            r.microbatches,
                            opt(r.bubble_rate),
                            opt(r.makespan),
                            opt(r.peak),
                            opt(r.peak_fraction),
                            r.error.as_deref().unwrap_or("").replace(',', ";")
                        );
                    }
                    s
                }
                Format::Markdown => {
                    let mut s = format!(
                        "| schedule | bubble rate (n={microbatches}) | makespan | peak (m) | peak / M |\n|---|---|---|---|---|\n"
                    );
                    for r in &rows {
                        match &r.error {
                            Some(e) => {
                                let _ = writeln!(s, "| {} | error: {e} | | | |", r.block);
                            }
                            None => {
                                let _ = writeln!(
                                    s,
                                    "| {} | {} | {} | {} | {} |",
                                    r.block,
                                    r.bubble_rate.map_or("-".into(), pct),
                                    r.makespan.map_or("-".into(), |m| format!("{m:.2}")),
                                    r.peak.map_or("recomputed".into(), |p| p.to_string()),
                                    r.peak_fraction.map_or("-".into(), |f| format!("{f:.3}"))
                                );
                            }
                        }
                    }
                    s
                }
            };
            write_output(None, &text, io)
        }
    }
}
