use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use znq_cli::api::{self, ApiError, ClassScore, JobRequest, Action};
use znq_core::analyzer::export_csv;
use znq_core::perf::{export_cycles_csv, parse_whatif, WhatIfScenario};
use znq_core::{presets, weights};

/// Topology analyzer, reference engine and accelerator simulator for ZynqNet-class CNNs.
#[derive(Parser)]
#[command(name = "znq", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Per-layer MACC/parameter/activation table.
    Analyze {
        #[command(flatten)]
        net: NetArg,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Check a prototxt and list diagnostics.
    Validate {
        #[command(flatten)]
        net: NetArg,
        #[arg(long)]
        json: bool,
    },
    /// Float32 forward pass on the reference engine.
    Infer {
        #[command(flatten)]
        net: NetArg,
        #[command(flatten)]
        data: DataArgs,
        /// Write the output tensor (ZNQT).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run the network on the accelerator model.
    Simulate {
        #[command(flatten)]
        net: NetArg,
        #[command(flatten)]
        data: DataArgs,
        /// Print per-layer memory counters.
        #[arg(long)]
        counters: bool,
        /// Compare against the reference engine.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Cycle-level throughput estimate, optionally under a what-if scenario.
    Estimate {
        #[command(flatten)]
        net: NetArg,
        #[arg(long, default_value_t = 100.0)]
        clock_mhz: f64,
        /// Model the as-built design that drains the pipeline every iteration (default).
        #[arg(long, overrides_with = "no_flush")]
        flush: bool,
        /// Model the fixed, fully pipelined design.
        #[arg(long)]
        no_flush: bool,
        /// Comma-separated overrides, e.g. `prefetch=5,pack_1x1=true,clock=200`.
        #[arg(long)]
        whatif: Option<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Write deterministic random weights for a network (ZNQW).
    Weights {
        #[command(flatten)]
        net: NetArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the bundled networks.
    Presets,
    /// Serve the JSON API.
    Serve {
        #[arg(long, env = "ZNQ_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
    },
}

#[derive(Args)]
struct NetArg {
    /// Prototxt path or bundled preset name.
    network: String,
}

#[derive(Args)]
struct DataArgs {
    /// ZNQW path or `random:<seed>`.
    #[arg(long, default_value = "random:0")]
    weights: String,
    /// ZNQT path or `random:<seed>`.
    #[arg(long, default_value = "random:1")]
    input: String,
}

impl NetArg {
    fn text(&self) -> Result<String, ApiError> {
        let path = std::path::Path::new(&self.network);
        if path.exists() {
            return std::fs::read_to_string(path).map_err(|e| ApiError::new("Io", format!("{}: {e}", self.network)));
        }
        match presets::find(&self.network) {
            Some(p) => Ok(p.prototxt.to_string()),
            None => Err(ApiError::new("Io", format!("{}: no such file or preset", self.network))),
        }
    }
}

fn write_file(path: &PathBuf, contents: &[u8]) -> Result<(), ApiError> {
    std::fs::write(path, contents).map_err(|e| ApiError::new("Io", format!("{}: {e}", path.display())))
}

fn print_top5(top: &[ClassScore]) {
    for s in top {
        println!("  class {:>4}  p={:.6}", s.class, s.probability);
    }
}

fn job(action: Action, net: &NetArg, data: &DataArgs, verify: bool) -> Result<JobRequest, ApiError> {
    Ok(JobRequest {
        weights_ref: Some(data.weights.clone()),
        input_ref: Some(data.input.clone()),
        verify,
        ..JobRequest::new(action, net.text()?)
    })
}

fn run(cmd: Cmd) -> Result<(), ApiError> {
    match cmd {
        Cmd::Analyze { net, csv, json } => {
            let (resp, report) = api::analyze(&net.text()?)?;
            if let Some(p) = csv {
                write_file(&p, export_csv(&report).as_bytes())?;
            }
            if json {
                print!("{}", api::to_json(&resp));
                return Ok(());
            }
            println!("{:<28} {:<12} {:>12} {:>14} {:>10} {:>12}", "layer", "type", "output", "macc", "params", "activations");
            for l in &resp.layers {
                let shape = format!("{}x{}x{}", l.out_shape.ch, l.out_shape.h, l.out_shape.w);
                println!("{:<28} {:<12} {:>12} {:>14} {:>10} {:>12}", l.name, l.kind, shape, l.cost.macc, l.cost.params, l.cost.activations);
            }
            let t = resp.totals;
            println!("{:<28} {:<12} {:>12} {:>14} {:>10} {:>12}", "TOTAL", "", "", t.macc, t.params, t.activations);
            for d in &resp.diagnostics {
                eprintln!("{}: {}", d.rule, d.message);
            }
        }
        Cmd::Validate { net, json } => {
            let resp = api::validate(&net.text()?)?;
            if json {
                print!("{}", api::to_json(&resp));
            } else {
                for d in &resp.diagnostics {
                    let at = d.span.map(|s| format!("{}:{}: ", s.line, s.col)).unwrap_or_default();
                    println!("{at}{:?} [{}] {}", d.severity, d.rule, d.message);
                }
            }
            if !resp.valid {
                return Err(ApiError::new("InvalidGraph", "network has errors"));
            }
            if !json {
                println!("ok");
            }
        }
        Cmd::Infer { net, data, out, json } => {
            let resp = api::infer(&job(Action::Infer, &net, &data, false)?)?;
            if let Some(p) = out {
                write_file(&p, &weights::encode_tensor(&resp.output).map_err(|e| ApiError::new("WeightsError", e))?)?;
            }
            if json {
                print!("{}", api::to_json(&resp));
            } else {
                println!("output {}x{}x{}", resp.output_shape.ch, resp.output_shape.h, resp.output_shape.w);
                print_top5(&resp.top5);
            }
        }
        Cmd::Simulate { net, data, counters, verify, out, json } => {
            let resp = api::simulate(&job(Action::Simulate, &net, &data, verify)?)?;
            if let Some(p) = out {
                write_file(&p, &weights::encode_tensor(&resp.output).map_err(|e| ApiError::new("WeightsError", e))?)?;
            }
            if json {
                print!("{}", api::to_json(&resp));
            } else {
                println!("output {}x{}x{}", resp.output_shape.ch, resp.output_shape.h, resp.output_shape.w);
                print_top5(&resp.top5);
                if counters {
                    println!("{:<28} {:>12} {:>12} {:>12} {:>8}", "layer", "input_reads", "weight_reads", "output_writes", "gpool");
                    for l in &resp.layers {
                        let c = l.counters;
                        println!("{:<28} {:>12} {:>12} {:>12} {:>8}", l.name, c.input_reads, c.weight_reads, c.output_writes, c.gpool_writes);
                    }
                    let c = resp.totals;
                    println!("{:<28} {:>12} {:>12} {:>12} {:>8}", "TOTAL", c.input_reads, c.weight_reads, c.output_writes, c.gpool_writes);
                    let p = resp.peak;
                    println!("peak occupancy: icache {} wcache {} ocache {} gpool {}", p.icache, p.wcache, p.ocache, p.gpool);
                }
                if let Some(v) = &resp.verify {
                    println!("verify: max rel error {:.3e} (tolerance {:.0e}), bit-exact vs adder-tree order: {}", v.max_rel_error, v.tolerance, v.bit_exact);
                }
            }
            if let Some(v) = &resp.verify {
                if v.max_rel_error > v.tolerance {
                    return Err(ApiError::new("VerifyFailed", format!("max rel error {:.3e} exceeds {:.0e}", v.max_rel_error, v.tolerance)));
                }
            }
        }
        Cmd::Estimate { net, clock_mhz, flush: _, no_flush, whatif, csv, json } => {
            let base = if no_flush { WhatIfScenario::pipelined(clock_mhz) } else { WhatIfScenario::as_built(clock_mhz) };
            let scenario = match whatif {
                Some(w) => parse_whatif(&w, base).map_err(|e| ApiError::new("InvalidScenario", e))?,
                None => base,
            };
            let resp = api::estimate(&net.text()?, &scenario)?;
            if let Some(p) = csv {
                write_file(&p, export_cycles_csv(&resp.report).as_bytes())?;
            }
            if json {
                print!("{}", api::to_json(&resp));
                return Ok(());
            }
            let r = &resp.report;
            println!("{:<28} {:>10} {:>8} {:>14}", "layer", "iterations", "c/iter", "cycles");
            for l in &r.per_layer {
                println!("{:<28} {:>10} {:>8} {:>14}", l.name, l.iterations, l.compute_cycles_per_iter, l.cycles(r.flushing));
            }
            println!("total cycles {} ({}), ideal {}, flushed {}", r.total_cycles, if r.flushing { "flushing" } else { "pipelined" }, r.ideal_total, r.flushed_total);
            println!("clock {} MHz, {} PEs: {:.1} ms/frame, {:.3} fps", r.clock_mhz, r.n_pe, r.t_frame_ms, r.fps_at_clock);
            println!("speedup vs pipelined float32: {:.3}x, vs as built: {:.3}x", resp.speedup, resp.speedup_vs_as_built);
        }
        Cmd::Weights { net, seed, out } => {
            let (graph, _) = znq_core::prototxt::parse_with_spans(&net.text()?).map_err(|e| ApiError::new(e.code(), e))?;
            let graph = graph.infer_shapes().map_err(|e| ApiError::new("GraphError", e))?;
            let w = weights::random_weights(&graph, seed).map_err(|e| ApiError::new("WeightsError", e))?;
            write_file(&out, &weights::encode_weights(&w).map_err(|e| ApiError::new("WeightsError", e))?)?;
        }
        Cmd::Presets => {
            for p in presets::ALL.iter() {
                println!("{:<12} {}", p.name, p.description);
            }
        }
        Cmd::Serve { port, bind } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| ApiError::new("Io", e))?;
            rt.block_on(znq_cli::server::serve((bind, port).into())).map_err(|e| ApiError::new("Io", e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.span {
                Some(s) => eprintln!("error: {} (line {}, column {})", e, s.line, s.col),
                None => eprintln!("error: {e}"),
            }
            ExitCode::from(1)
        }
    }
}
