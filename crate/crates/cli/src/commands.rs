//! Subcommand bodies. Each writes `report.json` into the output directory
//! and returns whether every checked property held.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use spikeshift::energy::{
    break_even_rate, measure_block_spike_rates, measure_kernel, spike_rates_csv, table_cost,
    BlockSpikeRate, CostReport, EnergyModel, Kernel, DEFAULT_MULT_ADD_RATIO,
};
use spikeshift::model::{
    forward_counted, load_checkpoint, random_float_model, random_inputs, save_checkpoint,
    transform_pipeline, PipelineConfig, Stage, StageModel, StageReport,
};
use spikeshift::verify::{run_suite, SuiteReport, OP_COUNT_LENGTHS};
use spikeshift::OpCounter;

use crate::config::RunConfig;

/// Offsets the run seed so the evaluation inputs differ from calibration.
const INPUT_SEED: u64 = 0x1a7e_5eed;

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    command: &'static str,
    config: &'a RunConfig,
    suite: SuiteReport,
}

pub fn verify(cfg: &RunConfig) -> Result<bool> {
    let suite = run_suite(&cfg.suite_config());
    for r in &suite.results {
        println!(
            "{:<12} {} ({} samples, {} failures)",
            r.suite.to_string(),
            if r.passed { "pass" } else { "FAIL" },
            r.samples,
            r.failures
        );
        for c in &r.counterexamples {
            println!("  #{} seed {:#x}: {}", c.index, c.seed, c.detail);
        }
    }
    let passed = suite.passed;
    write_json(
        &cfg.out,
        "report.json",
        &VerifyReport {
            command: "verify",
            config: cfg,
            suite,
        },
    )?;
    Ok(passed)
}

#[derive(Serialize)]
struct CostRow {
    kernel: Kernel,
    n: u64,
    tabulated: CostReport,
    /// Absent for kernels without an instrumented implementation.
    measured: Option<CostReport>,
    matches: Option<bool>,
}

#[derive(Serialize)]
struct CostTable<'a> {
    command: &'static str,
    config: &'a RunConfig,
    energy_model: EnergyModel,
    rows: Vec<CostRow>,
    all_measured_match: bool,
}

pub fn bench_ops(cfg: &RunConfig) -> Result<bool> {
    let model = EnergyModel::new(DEFAULT_MULT_ADD_RATIO, cfg.timesteps as u32)?;
    let mut rows = Vec::new();
    for n in OP_COUNT_LENGTHS {
        for kernel in Kernel::ALL {
            let table = table_cost(kernel, n as u64)?;
            let measured = match measure_kernel(kernel, n, cfg.seed) {
                Ok(c) => Some(c),
                Err(spikeshift::Error::Unsupported(_)) => None,
                Err(e) => return Err(e.into()),
            };
            rows.push(CostRow {
                kernel,
                n: n as u64,
                matches: measured.map(|m| m == table),
                tabulated: CostReport::new(kernel, n as u64, table, &model),
                measured: measured.map(|m| CostReport::new(kernel, n as u64, m, &model)),
            });
        }
    }
    let all = rows.iter().all(|r| r.matches != Some(false));
    println!(
        "{:<10} {:>4} {:>10} {:>10}  measured",
        "kernel", "n", "table", "energy"
    );
    for r in &rows {
        let flag = match r.matches {
            Some(true) => "=",
            Some(false) => "MISMATCH",
            None => "-",
        };
        let total = r.tabulated.counts;
        let ops = total.add
            + total.sub
            + total.mul
            + total.div
            + total.exp
            + total.square
            + total.sqrt
            + total.shift
            + total.lut;
        println!(
            "{:<10} {:>4} {:>10} {:>10.1}  {flag}",
            format!("{:?}", r.kernel).to_lowercase(),
            r.n,
            ops,
            r.tabulated.energy
        );
    }
    write_json(
        &cfg.out,
        "report.json",
        &CostTable {
            command: "bench-ops",
            config: cfg,
            energy_model: model,
            rows,
            all_measured_match: all,
        },
    )?;
    Ok(all)
}

#[derive(Serialize)]
struct BreakEven {
    mult_add_ratio: f64,
    timesteps: usize,
    threshold: f64,
    mean_rate: f64,
    /// Mean spike rate below the threshold.
    energy_favorable: bool,
    favorable_blocks: Vec<usize>,
}

fn break_even(rates: &[BlockSpikeRate], timesteps: usize) -> BreakEven {
    let threshold = break_even_rate(timesteps as u32, DEFAULT_MULT_ADD_RATIO);
    let (spikes, slots) = rates
        .iter()
        .fold((0, 0), |(s, n), r| (s + r.spikes, n + r.slots));
    let mean_rate = if slots == 0 {
        0.0
    } else {
        spikes as f64 / slots as f64
    };
    BreakEven {
        mult_add_ratio: DEFAULT_MULT_ADD_RATIO,
        timesteps,
        threshold,
        mean_rate,
        energy_favorable: mean_rate < threshold,
        favorable_blocks: rates
            .iter()
            .filter(|r| r.rate < threshold)
            .map(|r| r.block)
            .collect(),
    }
}

fn print_rates(rates: &[BlockSpikeRate], be: &BreakEven) {
    for r in rates {
        println!(
            "block {} spike rate {:.4} (input {:.4})",
            r.block, r.rate, r.input_rate
        );
    }
    println!(
        "mean rate {:.4} vs break-even {:.5}: {}",
        be.mean_rate,
        be.threshold,
        if be.energy_favorable {
            "energy-favorable"
        } else {
            "not energy-favorable"
        }
    );
}

#[derive(Serialize)]
struct DemoReport<'a> {
    command: &'static str,
    config: &'a RunConfig,
    stages: Vec<StageReport>,
    spiking_ops: OpCounter,
    multiplier_free: bool,
    spike_rates: Vec<BlockSpikeRate>,
    break_even: BreakEven,
    checkpoint: &'static str,
}

pub fn demo(cfg: &RunConfig) -> Result<bool> {
    let model_cfg = cfg.model_config();
    let m0 = random_float_model(&model_cfg, cfg.seed)?;
    let pipeline = transform_pipeline(
        &m0,
        &PipelineConfig {
            seed: cfg.seed,
            seq: cfg.seq,
            ..PipelineConfig::default()
        },
    )?;
    for r in &pipeline.reports {
        println!(
            "{} -> {}: max |diff| {:.4}, argmax agreement {:.3}{}",
            r.from,
            r.to,
            r.max_abs_diff,
            r.argmax_agreement,
            if r.exact { " (exact)" } else { "" }
        );
    }
    let inputs = random_inputs(&model_cfg, cfg.inputs, cfg.seq, cfg.seed ^ INPUT_SEED);
    let mut ops = OpCounter::new();
    for ids in &inputs {
        forward_counted(&pipeline.s, ids, &mut ops)?;
    }
    let multiplier_free = ops.is_multiplier_free() && ops.square == 0;
    println!(
        "stage s: {} mul, {} div, {} exp, {} sqrt over {} inputs{}",
        ops.mul,
        ops.div,
        ops.exp,
        ops.sqrt,
        inputs.len(),
        if multiplier_free {
            ": multiplier-free"
        } else {
            ""
        }
    );
    let rates = measure_block_spike_rates(&pipeline.s, &inputs)?;
    let be = break_even(&rates, cfg.timesteps);
    print_rates(&rates, &be);

    let exact = pipeline.reports.iter().any(|r| r.to == Stage::S && r.exact);
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("spikes.csv"), spike_rates_csv(&rates))?;
    save_checkpoint(&pipeline.s, &cfg.out.join("checkpoint"))?;
    write_json(
        &cfg.out,
        "report.json",
        &DemoReport {
            command: "demo",
            config: cfg,
            stages: pipeline.reports,
            spiking_ops: ops,
            multiplier_free,
            spike_rates: rates,
            break_even: be,
            checkpoint: "checkpoint",
        },
    )?;
    Ok(multiplier_free && exact)
}

#[derive(Serialize)]
struct SpikeReport<'a> {
    command: &'static str,
    config: &'a RunConfig,
    checkpoint: String,
    spike_rates: Vec<BlockSpikeRate>,
    break_even: BreakEven,
}

pub fn spike_report(cfg: &RunConfig, checkpoint: &Path) -> Result<bool> {
    let model: StageModel = load_checkpoint(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let model_cfg = model.config().clone();
    let inputs = random_inputs(&model_cfg, cfg.inputs, cfg.seq, cfg.seed ^ INPUT_SEED);
    let rates = measure_block_spike_rates(&model, &inputs)?;
    let be = break_even(&rates, model_cfg.timesteps);
    print_rates(&rates, &be);
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("spikes.csv"), spike_rates_csv(&rates))?;
    write_json(
        &cfg.out,
        "report.json",
        &SpikeReport {
            command: "spike-report",
            config: cfg,
            checkpoint: checkpoint.display().to_string(),
            spike_rates: rates,
            break_even: be,
        },
    )?;
    Ok(true)
}
